//! Federated-distillation round loop.
//!
//! Each round optionally exchanges knowledge (upload, aggregate, download,
//! all metered by the ledger), then every client trains locally against the
//! freshest knowledge the schedule allows, then the round may be evaluated.
//! Runs are bit-reproducible for a given (config, seed) and independent of
//! the worker count.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{
    class_count, partition_dirichlet, partition_dirichlet_shared_test, ClientPartition,
    DatasetSpec, Sample,
};
use crate::error::{Error, Result};
use crate::knowledge::{
    aggregate, extract_knowledge, ClientMeta, GlobalKnowledge, KnowledgeRecord, Strategy,
};
use crate::loss::{combined_objective, Probe};
use crate::nn::{init_params, sgd_step_in_place, Gradients, ModelParams};
use crate::schedule::{effective_knowledge_round, should_exchange};

/// Everything a run needs. Hidden layer widths are per client; input and
/// output dims come from the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub clients: usize,
    pub rounds: usize,
    /// Accumulation period: knowledge moves only when round % s == 0.
    pub s: usize,
    /// Weight of the distillation term in the local objective.
    pub beta: f64,
    /// Softmax temperature inside the distillation loss.
    pub tau: f64,
    pub lr: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    /// Hidden widths per client; may differ across clients, may be empty
    /// for a purely linear model.
    pub client_hidden_dims: Vec<Vec<usize>>,
    pub strategy: Strategy,
    pub dataset: DatasetSpec,
    /// Dirichlet concentration of the label skew across clients.
    pub alpha: f64,
    pub test_fraction: f64,
    /// false: per-client held-out test split; true: one shared test set.
    pub shared_test: bool,
    pub seed: u64,
    /// Rounds at the start that train CE-only with no exchange at all.
    pub warmup_ce_rounds: usize,
    pub eval_every: usize,
    pub workers: usize,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.clients < 2 {
            return bad(format!("clients must be >= 2, got {}", self.clients));
        }
        if self.rounds == 0 {
            return bad("rounds must be >= 1".into());
        }
        if self.s == 0 {
            return bad("s must be >= 1".into());
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be >= 0 and finite, got {}", self.beta));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be > 0 and finite, got {}", self.tau));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be > 0 and finite, got {}", self.lr));
        }
        if self.local_epochs == 0 {
            return bad("local_epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.client_hidden_dims.len() != self.clients {
            return bad(format!(
                "client_hidden_dims has {} entries for {} clients",
                self.client_hidden_dims.len(),
                self.clients
            ));
        }
        if self.client_hidden_dims.iter().flatten().any(|&d| d == 0) {
            return bad("hidden widths must all be >= 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be > 0 and finite, got {}", self.alpha));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            ));
        }
        if self.eval_every == 0 {
            return bad("eval_every must be >= 1".into());
        }
        if self.workers == 0 {
            return bad("workers must be >= 1".into());
        }
        Ok(())
    }

    fn layer_dims_for(&self, client: usize, input_dim: usize, classes: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.client_hidden_dims[client].len() + 2);
        dims.push(input_dim);
        dims.extend_from_slice(&self.client_hidden_dims[client]);
        dims.push(classes);
        dims
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Upload,
    Download,
}

/// Exact scalar-level accounting of training communication. One knowledge
/// record costs C logits plus 2 key scalars; nothing else is ever charged.
#[derive(Debug, Clone, PartialEq)]
pub struct CommLedger {
    /// (uploaded, downloaded) scalars per round, zero on non-exchange rounds.
    per_round: Vec<(u64, u64)>,
    uploaded_scalars: u64,
    downloaded_scalars: u64,
    /// Scalars of one full exchange round, measured at the first one.
    c0: Option<u64>,
}

impl CommLedger {
    pub fn new(total_rounds: usize) -> Self {
        Self {
            per_round: vec![(0, 0); total_rounds],
            uploaded_scalars: 0,
            downloaded_scalars: 0,
            c0: None,
        }
    }

    /// Scalars one record costs: C logits plus key id and label/sample id.
    pub fn record_cost(classes: usize) -> u64 {
        classes as u64 + 2
    }

    pub fn charge(&mut self, round: usize, direction: Direction, records: u64, classes: usize) {
        let scalars = records * Self::record_cost(classes);
        match direction {
            Direction::Upload => {
                self.per_round[round].0 += scalars;
                self.uploaded_scalars += scalars;
            }
            Direction::Download => {
                self.per_round[round].1 += scalars;
                self.downloaded_scalars += scalars;
            }
        }
    }

    /// Seal an exchange round: the first one defines C₀, every later one
    /// must cost exactly the same.
    pub fn commit_round(&mut self, round: usize) -> Result<()> {
        let (up, down) = self.per_round[round];
        let total = up + down;
        match self.c0 {
            None => {
                self.c0 = Some(total);
                Ok(())
            }
            Some(c0) if c0 == total => Ok(()),
            Some(c0) => Err(Error::CommCostDrift {
                round,
                expected: c0,
                actual: total,
            }),
        }
    }

    pub fn uploaded_scalars(&self) -> u64 {
        self.uploaded_scalars
    }

    pub fn downloaded_scalars(&self) -> u64 {
        self.downloaded_scalars
    }

    pub fn total_scalars(&self) -> u64 {
        self.uploaded_scalars + self.downloaded_scalars
    }

    /// Scalars of a single exchange round; None before any exchange.
    pub fn c0_scalars(&self) -> Option<u64> {
        self.c0
    }

    pub fn round_traffic(&self, round: usize) -> (u64, u64) {
        self.per_round[round]
    }

    /// Rounds that actually moved scalars.
    pub fn charged_rounds(&self) -> Vec<usize> {
        self.per_round
            .iter()
            .enumerate()
            .filter(|(_, &(u, d))| u + d > 0)
            .map(|(t, _)| t)
            .collect()
    }

    /// Total traffic so far in units of C₀ (0 before the first exchange).
    pub fn cumulative_c0_units(&self) -> f64 {
        match self.c0 {
            Some(c0) if c0 > 0 => self.total_scalars() as f64 / c0 as f64,
            _ => 0.0,
        }
    }
}

/// One evaluated round in the output stream.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    pub mean_accuracy_pct: f64,
    pub cum_comm_c0: f64,
    /// Pinned to 0.0: real timing would break byte-reproducible outputs.
    /// Wall time for humans lives in RunOutput::elapsed_seconds.
    pub wall_seconds: f64,
}

/// Everything a finished run reports.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: Vec<RoundMetrics>,
    pub final_client_accuracy_pct: Vec<f64>,
    pub final_params: Vec<ModelParams>,
    pub ledger: CommLedger,
    /// Mean local training loss per round, per client.
    pub client_losses: Vec<Vec<f64>>,
    /// For each round, the (round, fingerprint) of the knowledge trained
    /// against, or None when training was CE-only.
    pub used_knowledge: Vec<Option<(usize, u64)>>,
    /// Fingerprint of the knowledge produced at each exchange round.
    pub exchange_fingerprints: BTreeMap<usize, u64>,
    pub train_sizes: Vec<usize>,
    pub test_sizes: Vec<usize>,
    /// Real elapsed time; deliberately outside all determinism contracts.
    pub elapsed_seconds: f64,
}

/// Minibatch hyperparameters of one local round.
#[derive(Debug, Clone, Copy)]
pub struct LocalHypers {
    pub beta: f64,
    pub tau: f64,
    pub lr: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
}

/// A client's read-only window onto the stale global knowledge.
#[derive(Clone, Copy)]
pub struct TeacherView<'a> {
    gk: Option<&'a GlobalKnowledge>,
    client_id: usize,
}

impl<'a> TeacherView<'a> {
    pub fn new(gk: Option<&'a GlobalKnowledge>, client_id: usize) -> Self {
        Self { gk, client_id }
    }

    pub fn absent(client_id: usize) -> Self {
        Self {
            gk: None,
            client_id,
        }
    }

    fn teacher_for(&self, global_sample_id: usize, label: usize) -> Option<&'a [f64]> {
        self.gk
            .and_then(|gk| gk.lookup(self.client_id, global_sample_id, label))
    }
}

const INIT_STREAM: u64 = 0x01;
const SHUFFLE_STREAM: u64 = 0x02;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Private per-client seed so streams never collide across clients or uses.
fn client_stream_seed(base: u64, client: usize, stream: u64) -> u64 {
    splitmix64(base ^ splitmix64(stream ^ splitmix64(client as u64)))
}

/// One round of shuffled minibatch SGD on the combined objective. Returns
/// the mean loss over all minibatches (measured before each step).
pub fn train_local_round(
    params: &mut ModelParams,
    partition: &ClientPartition,
    teacher: &TeacherView<'_>,
    hypers: &LocalHypers,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if partition.train.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut order: Vec<usize> = (0..partition.train.len()).collect();
    let mut loss_sum = 0.0;
    let mut batches = 0usize;
    for _ in 0..hypers.local_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(hypers.batch_size) {
            let mut grads = Gradients::zeros_like(params);
            let mut chunk_loss = 0.0;
            for &idx in chunk {
                let (gid, sample) = &partition.train[idx];
                let trace = params.forward_traced(&sample.features)?;
                let probe = Probe {
                    logits: trace.logits(),
                    target_label: sample.label,
                    teacher_logits: teacher.teacher_for(*gid, sample.label),
                };
                let (loss, grad_logits) = combined_objective(&probe, hypers.beta, hypers.tau)?;
                chunk_loss += loss;
                params.backprop_into(&sample.features, &trace, &grad_logits, &mut grads)?;
            }
            let mean_loss = chunk_loss / chunk.len() as f64;
            if !mean_loss.is_finite() {
                return Err(Error::NonFinite {
                    context: "local training loss".into(),
                });
            }
            grads.scale(1.0 / chunk.len() as f64);
            sgd_step_in_place(params, &grads, hypers.lr)?;
            loss_sum += mean_loss;
            batches += 1;
        }
    }
    Ok(loss_sum / batches as f64)
}

/// Accuracy percentage on a test split. Argmax ties break toward the
/// lowest class index.
pub fn evaluate(params: &ModelParams, test: &[(usize, Sample)]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut correct = 0usize;
    for (_, sample) in test {
        let logits = params.forward(&sample.features)?;
        let mut best = 0;
        for (i, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = i;
            }
        }
        if best == sample.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64 * 100.0)
}

fn dataset_shape(samples: &[Sample]) -> Result<(usize, usize)> {
    let Some(first) = samples.first() else {
        return Err(Error::EmptyBatch);
    };
    let input_dim = first.features.len();
    for s in samples {
        if s.features.len() != input_dim {
            return Err(Error::DimensionMismatch {
                context: "dataset features",
                expected: input_dim,
                actual: s.features.len(),
            });
        }
    }
    let classes = class_count(samples);
    if classes < 2 {
        return Err(Error::InvalidConfig(format!(
            "dataset has {classes} classes, need at least 2"
        )));
    }
    Ok((input_dim, classes))
}

enum AluMode {
    /// Exchange only when the accumulation schedule says so.
    Scheduled,
    /// Reference path: exchange every round, schedule logic never consulted.
    EveryRound,
}

struct ClientState {
    partition: ClientPartition,
    params: ModelParams,
    rng: ChaCha8Rng,
}

/// Full run: load data, partition, execute.
pub fn run(config: &RunConfig) -> Result<RunOutput> {
    config.validate()?;
    let samples = config.dataset.load(config.seed)?;
    let partitions = build_partitions(config, &samples)?;
    execute(config, partitions, AluMode::Scheduled)
}

/// The no-accumulation reference: knowledge moves every round. Kept so the
/// degenerate s=1 schedule can be proven bit-identical to it.
pub fn run_no_alu_reference(config: &RunConfig) -> Result<RunOutput> {
    config.validate()?;
    let samples = config.dataset.load(config.seed)?;
    let partitions = build_partitions(config, &samples)?;
    execute(config, partitions, AluMode::EveryRound)
}

/// Run on caller-supplied partitions (bypasses dataset loading and the
/// Dirichlet split; the config's dataset and partition fields are ignored).
pub fn run_with_partitions(
    config: &RunConfig,
    partitions: Vec<ClientPartition>,
) -> Result<RunOutput> {
    config.validate()?;
    execute(config, partitions, AluMode::Scheduled)
}

fn build_partitions(config: &RunConfig, samples: &[Sample]) -> Result<Vec<ClientPartition>> {
    if config.shared_test {
        partition_dirichlet_shared_test(
            samples,
            config.clients,
            config.alpha,
            config.test_fraction,
            config.seed,
        )
    } else {
        partition_dirichlet(
            samples,
            config.clients,
            config.alpha,
            config.test_fraction,
            config.seed,
        )
    }
}

fn execute(
    config: &RunConfig,
    partitions: Vec<ClientPartition>,
    mode: AluMode,
) -> Result<RunOutput> {
    let started = Instant::now();
    if partitions.len() != config.clients {
        return Err(Error::InvalidConfig(format!(
            "{} partitions for {} clients",
            partitions.len(),
            config.clients
        )));
    }
    let all_samples: Vec<Sample> = partitions
        .iter()
        .flat_map(|p| p.train.iter().chain(&p.test).map(|(_, s)| s.clone()))
        .collect();
    let (input_dim, classes) = dataset_shape(&all_samples)?;
    drop(all_samples);
    for p in &partitions {
        if p.train.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "client {} has no training data",
                p.client_id
            )));
        }
        if p.test.is_empty() {
            return Err(Error::EmptyTestSet {
                client: p.client_id,
            });
        }
    }

    let metas: Vec<ClientMeta> = partitions.iter().map(ClientMeta::from_partition).collect();
    let train_sizes: Vec<usize> = partitions.iter().map(ClientPartition::train_size).collect();
    let test_sizes: Vec<usize> = partitions.iter().map(ClientPartition::test_size).collect();

    let mut states = Vec::with_capacity(config.clients);
    for (k, partition) in partitions.into_iter().enumerate() {
        let dims = config.layer_dims_for(k, input_dim, classes);
        states.push(ClientState {
            params: init_params(&dims, client_stream_seed(config.seed, k, INIT_STREAM))?,
            rng: ChaCha8Rng::seed_from_u64(client_stream_seed(config.seed, k, SHUFFLE_STREAM)),
            partition,
        });
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot build worker pool: {e}")))?;

    let hypers = LocalHypers {
        beta: config.beta,
        tau: config.tau,
        lr: config.lr,
        local_epochs: config.local_epochs,
        batch_size: config.batch_size,
    };

    let mut ledger = CommLedger::new(config.rounds);
    let mut current: Option<GlobalKnowledge> = None;
    let mut metrics = Vec::new();
    let mut client_losses = Vec::with_capacity(config.rounds);
    let mut used_knowledge = Vec::with_capacity(config.rounds);
    let mut exchange_fingerprints = BTreeMap::new();

    for t in 0..config.rounds {
        let exchange_now = t >= config.warmup_ce_rounds
            && match mode {
                AluMode::Scheduled => should_exchange(t, config.s),
                AluMode::EveryRound => true,
            };

        if exchange_now {
            let uploads: Vec<Vec<KnowledgeRecord>> = pool.install(|| {
                states
                    .par_iter()
                    .map(|st| extract_knowledge(&st.params, &st.partition, config.strategy))
                    .collect::<Result<Vec<_>>>()
            })?;
            let upload_records: u64 = uploads.iter().map(|u| u.len() as u64).sum();
            ledger.charge(t, Direction::Upload, upload_records, classes);

            let gk = aggregate(t, &uploads, &metas, config.strategy, classes)?;
            let download_records: u64 = states
                .iter()
                .map(|st| gk.download_records(st.partition.client_id))
                .sum();
            ledger.charge(t, Direction::Download, download_records, classes);
            ledger.commit_round(t)?;

            exchange_fingerprints.insert(t, gk.fingerprint());
            current = Some(gk);
        }

        if let (AluMode::Scheduled, Some(gk), 0) = (&mode, &current, config.warmup_ce_rounds) {
            debug_assert_eq!(gk.round, effective_knowledge_round(t, config.s));
        }
        used_knowledge.push(current.as_ref().map(|gk| (gk.round, gk.fingerprint())));

        let results: Vec<Result<f64>> = pool.install(|| {
            let teacher_src = current.as_ref();
            states
                .par_iter_mut()
                .map(|st| {
                    let teacher = TeacherView::new(teacher_src, st.partition.client_id);
                    train_local_round(&mut st.params, &st.partition, &teacher, &hypers, &mut st.rng)
                })
                .collect()
        });
        let mut round_losses = Vec::with_capacity(states.len());
        for (k, res) in results.into_iter().enumerate() {
            match res {
                Ok(loss) => round_losses.push(loss),
                Err(Error::NonFinite { .. } | Error::NonFiniteLoss { .. }) => {
                    return Err(Error::NonFiniteLoss {
                        round: t,
                        client: k,
                    })
                }
                Err(e) => return Err(e),
            }
        }
        client_losses.push(round_losses);

        if t % config.eval_every == 0 {
            let mean = mean_accuracy(&pool, &states)?;
            metrics.push(RoundMetrics {
                round: t,
                mean_accuracy_pct: mean,
                cum_comm_c0: ledger.cumulative_c0_units(),
                wall_seconds: 0.0,
            });
        }
    }

    let final_client_accuracy_pct: Vec<f64> = {
        let accs: Vec<Result<f64>> = pool.install(|| {
            states
                .par_iter()
                .map(|st| evaluate(&st.params, &st.partition.test))
                .collect()
        });
        accs.into_iter().collect::<Result<Vec<_>>>()?
    };

    Ok(RunOutput {
        metrics,
        final_client_accuracy_pct,
        final_params: states.into_iter().map(|st| st.params).collect(),
        ledger,
        client_losses,
        used_knowledge,
        exchange_fingerprints,
        train_sizes,
        test_sizes,
        elapsed_seconds: started.elapsed().as_secs_f64(),
    })
}

fn mean_accuracy(pool: &rayon::ThreadPool, states: &[ClientState]) -> Result<f64> {
    let accs: Vec<Result<f64>> = pool.install(|| {
        states
            .par_iter()
            .map(|st| evaluate(&st.params, &st.partition.test))
            .collect()
    });
    let mut sum = 0.0;
    for (k, res) in accs.into_iter().enumerate() {
        match res {
            Ok(a) => sum += a,
            Err(Error::EmptyBatch) => return Err(Error::EmptyTestSet { client: k }),
            Err(e) => return Err(e),
        }
    }
    Ok(sum / states.len() as f64)
}
