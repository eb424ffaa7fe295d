//! Acceptance suite: nine end-to-end checks covering schedule algebra,
//! gradient correctness, baseline degeneration, exact communication totals,
//! accuracy preservation under accumulation, budgeted efficiency, the
//! aggregation oracle, worker independence, and model heterogeneity.
//!
//! The MNIST checks share one calibrated setup: 10 clients over the bundled
//! 10k-sample subset (about 1000 samples each under a near-uniform
//! partition), a 32-unit hidden layer, lr 0.1, batch 32. The heavy curve
//! runs for the accuracy and efficiency checks execute once and are shared.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::sync::OnceLock;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use fedalu_cli::cmd_run;
use fedalu_cli::output::converged_accuracy;
use fedalu_core::{
    aggregate, backward, combined_objective, effective_knowledge_round, exchange_count,
    extract_knowledge, init_params, make_synthetic, partition_dirichlet, run,
    run_no_alu_reference, should_exchange, ClientMeta, DatasetSpec, KnowledgeRecord, Probe,
    RecordKey, RoundMetrics, RunConfig, Strategy,
};

fn pass(n: usize, what: &str) {
    println!("[acceptance] check {n} ({what}): PASS");
}

fn mnist_dataset() -> DatasetSpec {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    DatasetSpec::Mnist {
        images: dir.join("train-images-idx3-ubyte"),
        labels: dir.join("train-labels-idx1-ubyte"),
    }
}

fn mnist_config(clients: usize, rounds: usize, s: usize, hidden: usize, seed: u64) -> RunConfig {
    RunConfig {
        clients,
        rounds,
        s,
        beta: 1.0,
        tau: 1.0,
        lr: 0.1,
        local_epochs: 1,
        batch_size: 32,
        client_hidden_dims: vec![vec![hidden]; clients],
        strategy: Strategy::PeerLabelAvg,
        dataset: mnist_dataset(),
        // near-uniform split so every client holds about a tenth of the data
        alpha: 1e6,
        test_fraction: 0.2,
        shared_test: false,
        seed,
        warmup_ce_rounds: 0,
        eval_every: 1,
        workers: 1,
    }
}

fn synthetic_config(clients: usize, rounds: usize, s: usize) -> RunConfig {
    RunConfig {
        clients,
        rounds,
        s,
        beta: 1.0,
        tau: 2.0,
        lr: 0.05,
        local_epochs: 1,
        batch_size: 8,
        client_hidden_dims: vec![vec![10]; clients],
        strategy: Strategy::PeerLabelAvg,
        dataset: DatasetSpec::Synthetic {
            classes: 4,
            dim: 6,
            per_class: 40,
            spread: 0.7,
        },
        alpha: 0.8,
        test_fraction: 0.25,
        shared_test: false,
        seed: 2024,
        warmup_ce_rounds: 0,
        eval_every: 1,
        workers: 1,
    }
}

#[test]
fn a1_schedule_algebra_matches_enumeration() {
    for s in 1..=50usize {
        // ground truth by listing the multiples of s below 1000
        let mut exchange_rounds = Vec::new();
        let mut k = 0;
        while k * s < 1000 {
            exchange_rounds.push(k * s);
            k += 1;
        }

        for t in 0..1000usize {
            let expected = exchange_rounds.contains(&t);
            assert_eq!(should_exchange(t, s), expected, "should_exchange({t}, {s})");

            let expected_effective = *exchange_rounds
                .iter()
                .filter(|&&e| e <= t)
                .max()
                .expect("round 0 always exchanges");
            assert_eq!(
                effective_knowledge_round(t, s),
                expected_effective,
                "effective_knowledge_round({t}, {s})"
            );

            let expected_count = exchange_rounds.iter().filter(|&&e| e < t).count();
            assert_eq!(
                exchange_count(t, s),
                expected_count,
                "exchange_count({t}, {s})"
            );
        }
    }
    pass(1, "schedule algebra matches enumeration for t < 1000, s <= 50");
}

#[test]
fn a2_objective_gradients_match_finite_differences() {
    let dims = [12, 16, 10];
    let classes = 10;
    let step = 1e-5;
    let mut worst: f64 = 0.0;

    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(9_000 + seed);
        let params = init_params(&dims, 500 + seed).unwrap();
        let x: Vec<f64> = (0..dims[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
        let teacher: Vec<f64> = (0..classes).map(|_| rng.random_range(-2.0..2.0)).collect();
        let label = rng.random_range(0..classes);
        let beta = 0.25 + 0.25 * (seed % 7) as f64;
        let tau = [0.5, 1.0, 2.0, 3.0][seed as usize % 4];

        let objective = |p: &fedalu_core::ModelParams| -> f64 {
            let logits = p.forward(&x).unwrap();
            let probe = Probe {
                logits: &logits,
                target_label: label,
                teacher_logits: Some(&teacher),
            };
            combined_objective(&probe, beta, tau).unwrap().0
        };

        let logits = params.forward(&x).unwrap();
        let probe = Probe {
            logits: &logits,
            target_label: label,
            teacher_logits: Some(&teacher),
        };
        let (_, grad_logits) = combined_objective(&probe, beta, tau).unwrap();
        let analytic = backward(&params, &[(&x, &grad_logits)]).unwrap();

        for (li, layer) in analytic.layers().iter().enumerate() {
            let slots = layer.weights.len() + layer.biases.len();
            for slot in 0..slots {
                let read = |p: &fedalu_core::ModelParams| {
                    let l = &p.layers()[li];
                    if slot < l.weights.len() {
                        l.weights[slot]
                    } else {
                        l.biases[slot - l.weights.len()]
                    }
                };
                let write = |p: &mut fedalu_core::ModelParams, v: f64| {
                    let l = &mut p.layers_mut()[li];
                    if slot < l.weights.len() {
                        l.weights[slot] = v;
                    } else {
                        l.biases[slot - l.weights.len()] = v;
                    }
                };

                let center = read(&params);
                let mut probe_params = params.clone();
                write(&mut probe_params, center + step);
                let up = objective(&probe_params);
                write(&mut probe_params, center - step);
                let down = objective(&probe_params);

                let numeric = (up - down) / (2.0 * step);
                let analytic_v = if slot < layer.weights.len() {
                    layer.weights[slot]
                } else {
                    layer.biases[slot - layer.weights.len()]
                };
                let rel = (analytic_v - numeric).abs()
                    / analytic_v.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(rel);
                assert!(
                    rel < 1e-4,
                    "seed {seed} layer {li} slot {slot}: analytic {analytic_v} vs numeric {numeric} (rel {rel:.3e})"
                );
            }
        }
    }
    assert!(worst < 1e-4);
    pass(2, "objective gradients match finite differences across 20 seeds");
}

#[test]
fn a3_unit_period_run_equals_reference_path() {
    let config = synthetic_config(5, 20, 1);
    let with_schedule = run(&config).unwrap();
    let reference = run_no_alu_reference(&config).unwrap();

    assert_eq!(with_schedule.metrics, reference.metrics);
    assert_eq!(with_schedule.final_params, reference.final_params);
    assert_eq!(with_schedule.client_losses, reference.client_losses);
    assert_eq!(
        with_schedule.final_client_accuracy_pct,
        reference.final_client_accuracy_pct
    );
    pass(3, "unit accumulation period is bitwise identical to the reference path");
}

#[test]
fn a4_communication_totals_are_exact() {
    for (s, expected_units) in [(1usize, 30u64), (3, 10), (5, 6), (10, 3)] {
        let config = mnist_config(10, 30, s, 16, 77);
        let output = run(&config).unwrap();
        let ledger = &output.ledger;

        let c0 = ledger.c0_scalars().expect("at least one exchange happened");
        assert_eq!(
            ledger.total_scalars(),
            expected_units * c0,
            "s={s}: total scalars"
        );
        assert_eq!(
            ledger.cumulative_c0_units(),
            expected_units as f64,
            "s={s}: unit total"
        );
        assert_eq!(exchange_count(30, s) as u64, expected_units);

        let expected_rounds: Vec<usize> = (0..30).filter(|t| t % s == 0).collect();
        assert_eq!(ledger.charged_rounds(), expected_rounds, "s={s}: charged rounds");
    }
    pass(4, "training communication equals exactly ceil(T/s) exchange units");
}

struct CurveRun {
    s: usize,
    seed: u64,
    metrics: Vec<RoundMetrics>,
    total_units: f64,
}

const CURVE_SEEDS: [u64; 3] = [201, 202, 203];
const CURVE_PERIODS: [usize; 4] = [1, 3, 5, 10];

/// The twelve 60-round MNIST runs shared by the accuracy and efficiency
/// checks, executed once.
fn curves() -> &'static [CurveRun] {
    static CURVES: OnceLock<Vec<CurveRun>> = OnceLock::new();
    CURVES.get_or_init(|| {
        let mut out = Vec::new();
        for &seed in &CURVE_SEEDS {
            for &s in &CURVE_PERIODS {
                let config = mnist_config(10, 60, s, 32, seed);
                let output = run(&config).unwrap();
                out.push(CurveRun {
                    s,
                    seed,
                    metrics: output.metrics,
                    total_units: output.ledger.cumulative_c0_units(),
                });
            }
        }
        out
    })
}

fn curve(s: usize, seed: u64) -> &'static CurveRun {
    curves()
        .iter()
        .find(|c| c.s == s && c.seed == seed)
        .expect("curve run exists")
}

fn mean_converged(s: usize) -> f64 {
    let sum: f64 = CURVE_SEEDS
        .iter()
        .map(|&seed| converged_accuracy(&curve(s, seed).metrics))
        .sum();
    sum / CURVE_SEEDS.len() as f64
}

#[test]
fn a5_converged_accuracy_survives_accumulation() {
    let baseline = mean_converged(1);
    for s in [3, 5, 10] {
        let acc = mean_converged(s);
        let gap = (acc - baseline).abs();
        println!(
            "[acceptance]   s={s}: converged {acc:.2}% vs baseline {baseline:.2}% (gap {gap:.2}pp)"
        );
        assert!(
            gap <= 2.0,
            "s={s}: converged accuracy {acc:.2}% strays {gap:.2}pp from baseline {baseline:.2}%"
        );
    }
    pass(5, "converged accuracy within 2pp of the every-round baseline");
}

/// Accuracy after the last evaluated round whose cumulative traffic fits
/// the budget.
fn accuracy_at_budget(metrics: &[RoundMetrics], budget: f64) -> f64 {
    metrics
        .iter()
        .rev()
        .find(|m| m.cum_comm_c0 <= budget + 1e-9)
        .map(|m| m.mean_accuracy_pct)
        .unwrap_or(0.0)
}

#[test]
fn a6_accumulation_wins_at_equal_budget() {
    let mut wins = 0;
    for &seed in &CURVE_SEEDS {
        let accumulated = curve(5, seed);
        let budget = accumulated.total_units;
        let acc_s5 = accuracy_at_budget(&accumulated.metrics, budget);
        let acc_s1 = accuracy_at_budget(&curve(1, seed).metrics, budget);
        println!(
            "[acceptance]   seed {seed}: at {budget:.0} units, s=5 {acc_s5:.2}% vs s=1 {acc_s1:.2}%"
        );
        if acc_s5 > acc_s1 {
            wins += 1;
        }
    }
    assert!(
        wins >= 2,
        "accumulation beat the baseline at equal budget on only {wins} of 3 seeds"
    );
    pass(6, "same-budget accuracy favors accumulation on most seeds");
}

#[test]
fn a7_served_knowledge_matches_brute_force() {
    let samples = make_synthetic(4, 5, 30, 0.6, 77).unwrap();
    let partitions = partition_dirichlet(&samples, 3, 0.7, 0.2, 77).unwrap();
    let hidden = [vec![8usize], vec![10], vec![]];

    for strategy in [Strategy::PeerLabelAvg, Strategy::SampleCache] {
        let mut uploads = Vec::new();
        let mut metas = Vec::new();
        for (k, partition) in partitions.iter().enumerate() {
            let mut dims = vec![5];
            dims.extend_from_slice(&hidden[k]);
            dims.push(4);
            let params = init_params(&dims, 3_000 + k as u64).unwrap();
            uploads.push(extract_knowledge(&params, partition, strategy).unwrap());
            metas.push(ClientMeta::from_partition(partition));
        }
        let gk = aggregate(0, &uploads, &metas, strategy, 4).unwrap();

        let peer_records = |requester: usize, label: usize| -> Vec<&KnowledgeRecord> {
            uploads
                .iter()
                .flatten()
                .filter(|r| r.client_id != requester && r.label == label)
                .collect()
        };

        for (k, partition) in partitions.iter().enumerate() {
            for (id, sample) in &partition.train {
                let records = peer_records(k, sample.label);
                let served = gk.lookup(k, *id, sample.label);
                if records.is_empty() {
                    assert!(served.is_none(), "{strategy:?}: client {k} label {}", sample.label);
                    continue;
                }
                let served = served.unwrap_or_else(|| {
                    panic!("{strategy:?}: client {k} label {} missing", sample.label)
                });
                let mut expected = vec![0.0; 4];
                for r in &records {
                    for (e, v) in expected.iter_mut().zip(&r.logits) {
                        *e += v;
                    }
                }
                for e in &mut expected {
                    *e /= records.len() as f64;
                }
                for (a, b) in served.iter().zip(&expected) {
                    assert!(
                        (a - b).abs() <= 1e-12,
                        "{strategy:?}: client {k} label {}: {a} vs {b}",
                        sample.label
                    );
                }
            }
        }

        // key shapes stay strategy-specific
        let key_ok = uploads.iter().flatten().all(|r| match strategy {
            Strategy::PeerLabelAvg => matches!(r.key, RecordKey::Label(_)),
            Strategy::SampleCache => matches!(r.key, RecordKey::Sample(_)),
        });
        assert!(key_ok);
    }
    pass(7, "served knowledge equals the brute-force peer average within 1e-12");
}

#[test]
fn a8_worker_count_leaves_csv_bytes_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let data = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    let base = format!(
        "clients=5\nrounds=8\ns=2\ndataset=mnist\n\
         mnist_images={}\nmnist_labels={}\n\
         hidden_dims=16\nlr=0.1\nbatch_size=32\nalpha=1000000\nseed=42\n",
        data.join("train-images-idx3-ubyte").display(),
        data.join("train-labels-idx1-ubyte").display(),
    );

    let mut outputs = BTreeMap::new();
    for workers in [1usize, 4] {
        let config_path = dir.path().join(format!("w{workers}.cfg"));
        fs::write(&config_path, format!("{base}workers={workers}\n")).unwrap();
        let out_dir = dir.path().join(format!("out{workers}"));
        cmd_run(&config_path, None, &out_dir).unwrap();
        outputs.insert(
            workers,
            (
                fs::read(out_dir.join("metrics.csv")).unwrap(),
                fs::read(out_dir.join("summary.csv")).unwrap(),
            ),
        );
    }
    assert_eq!(outputs[&1].0, outputs[&4].0, "metrics.csv differs");
    assert_eq!(outputs[&1].1, outputs[&4].1, "summary.csv differs");
    pass(8, "worker counts 1 and 4 write byte-identical CSVs");
}

#[test]
fn a9_heterogeneous_widths_train_together() {
    let mut config = mnist_config(4, 10, 5, 32, 7);
    config.client_hidden_dims = vec![vec![32], vec![48], vec![64], vec![96]];
    let output = run(&config).unwrap();

    for (t, per_client) in output.client_losses.iter().enumerate() {
        assert_eq!(per_client.len(), 4);
        for (k, loss) in per_client.iter().enumerate() {
            assert!(loss.is_finite(), "round {t} client {k}: loss {loss}");
        }
    }
    assert!(output.ledger.total_scalars() > 0, "no knowledge moved");
    assert_eq!(output.ledger.charged_rounds(), vec![0, 5]);
    assert!(output
        .final_client_accuracy_pct
        .iter()
        .all(|a| a.is_finite()));
    assert!(output.used_knowledge.iter().all(Option::is_some));

    let widths: Vec<Vec<usize>> = output
        .final_params
        .iter()
        .map(|p| p.layer_dims()[1..p.layer_dims().len() - 1].to_vec())
        .collect();
    assert_eq!(widths, vec![vec![32], vec![48], vec![64], vec![96]]);
    pass(9, "heterogeneous hidden widths finish a run with finite losses and live exchange");
}
