//! Knowledge extraction, server-side aggregation, and per-sample lookup.
//!
//! Clients never exchange parameters. They upload logit vectors
//! ("knowledge"), the server fuses them into a per-requester view that
//! excludes each client's own contribution, and clients download that view
//! to distill against during local training.

use std::collections::{BTreeMap, BTreeSet};

use crate::data::ClientPartition;
use crate::error::{Error, Result};
use crate::nn::ModelParams;

/// How knowledge is keyed and matched across clients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// One record per locally present label, carrying the mean logits of
    /// that label's local samples. Cheap: at most C records per client.
    PeerLabelAvg,
    /// One record per local train sample, matched to peers by label at the
    /// server. Heavier traffic, per-sample granularity on the wire.
    SampleCache,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::PeerLabelAvg => "peer_label_avg",
            Strategy::SampleCache => "sample_cache",
        }
    }
}

/// What a record's logits describe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RecordKey {
    /// Mean over the client's local samples of this label.
    Label(usize),
    /// A single train sample, keyed by global sample id.
    Sample(usize),
}

/// The transmitted unit: one logit vector with its key.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeRecord {
    pub client_id: usize,
    pub key: RecordKey,
    /// Class the logits describe; for label records it repeats the key.
    pub label: usize,
    pub logits: Vec<f64>,
}

/// Per-client label census the server holds from setup time. Used to build
/// requester views and size downloads; never charged as training traffic.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientMeta {
    pub client_id: usize,
    /// label -> number of local train samples with that label
    pub label_counts: BTreeMap<usize, usize>,
}

impl ClientMeta {
    pub fn from_partition(partition: &ClientPartition) -> Self {
        let mut label_counts: BTreeMap<usize, usize> = BTreeMap::new();
        for (_, s) in &partition.train {
            *label_counts.entry(s.label).or_insert(0) += 1;
        }
        Self {
            client_id: partition.client_id,
            label_counts,
        }
    }
}

/// Server-side aggregate for one exchange round: for every requester, the
/// peer-mean logits of each label it owns, with that requester's own uploads
/// excluded.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalKnowledge {
    pub round: usize,
    pub strategy: Strategy,
    pub classes: usize,
    /// (requester client_id, label) -> served mean logits
    served: BTreeMap<(usize, usize), Vec<f64>>,
    /// requester client_id -> number of records one download transfers
    download_counts: BTreeMap<usize, u64>,
}

/// Extract the records one client uploads, from its current model.
pub fn extract_knowledge(
    params: &ModelParams,
    partition: &ClientPartition,
    strategy: Strategy,
) -> Result<Vec<KnowledgeRecord>> {
    if partition.train.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let classes = params.output_dim();
    match strategy {
        Strategy::PeerLabelAvg => {
            let mut sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
            for (_, sample) in &partition.train {
                let logits = params.forward(&sample.features)?;
                let (sum, count) = sums
                    .entry(sample.label)
                    .or_insert_with(|| (vec![0.0; classes], 0));
                for (a, b) in sum.iter_mut().zip(&logits) {
                    *a += b;
                }
                *count += 1;
            }
            Ok(sums
                .into_iter()
                .map(|(label, (sum, count))| KnowledgeRecord {
                    client_id: partition.client_id,
                    key: RecordKey::Label(label),
                    label,
                    logits: sum.into_iter().map(|v| v / count as f64).collect(),
                })
                .collect())
        }
        Strategy::SampleCache => partition
            .train
            .iter()
            .map(|(id, sample)| {
                Ok(KnowledgeRecord {
                    client_id: partition.client_id,
                    key: RecordKey::Sample(*id),
                    label: sample.label,
                    logits: params.forward(&sample.features)?,
                })
            })
            .collect(),
    }
}

fn validate_upload(records: &[KnowledgeRecord], classes: usize, strategy: Strategy) -> Result<()> {
    let client = records[0].client_id;
    let mut seen = BTreeSet::new();
    for r in records {
        if r.client_id != client {
            return Err(Error::InvalidArgument(format!(
                "upload group mixes client {client} with client {}",
                r.client_id
            )));
        }
        if !seen.insert(r.key) {
            return Err(Error::DuplicateUpload { client });
        }
        if r.label >= classes {
            return Err(Error::LabelOutOfRange {
                label: r.label,
                classes,
            });
        }
        if r.logits.len() != classes {
            return Err(Error::DimensionMismatch {
                context: "knowledge logits",
                expected: classes,
                actual: r.logits.len(),
            });
        }
        if r.logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("knowledge upload from client {client}"),
            });
        }
        let key_matches = match (strategy, r.key) {
            (Strategy::PeerLabelAvg, RecordKey::Label(l)) => l == r.label,
            (Strategy::SampleCache, RecordKey::Sample(_)) => true,
            _ => false,
        };
        if !key_matches {
            return Err(Error::InvalidArgument(format!(
                "record key {:?} does not fit strategy {}",
                r.key,
                strategy.name()
            )));
        }
    }
    Ok(())
}

/// Fuse all clients' uploads into the round's global knowledge.
///
/// For requester k and label y, the served vector is the unweighted mean of
/// all *other* clients' label-y records, summed in ascending (client, record)
/// order so the result is independent of upload arrival order.
pub fn aggregate(
    round: usize,
    uploads: &[Vec<KnowledgeRecord>],
    metas: &[ClientMeta],
    strategy: Strategy,
    classes: usize,
) -> Result<GlobalKnowledge> {
    let mut by_client: BTreeMap<usize, &[KnowledgeRecord]> = BTreeMap::new();
    for group in uploads {
        let Some(first) = group.first() else {
            continue;
        };
        if by_client.insert(first.client_id, group).is_some() {
            return Err(Error::DuplicateUpload {
                client: first.client_id,
            });
        }
    }
    for meta in metas {
        match by_client.get(&meta.client_id) {
            Some(group) => validate_upload(group, classes, strategy)?,
            None => return Err(Error::MissingUpload {
                client: meta.client_id,
            }),
        }
    }
    if by_client.len() != metas.len() {
        let known: BTreeSet<usize> = metas.iter().map(|m| m.client_id).collect();
        let stray = by_client.keys().find(|id| !known.contains(id)).unwrap();
        return Err(Error::InvalidArgument(format!(
            "upload from unknown client {stray}"
        )));
    }

    // label -> records in canonical (client, upload) order
    let mut by_label: BTreeMap<usize, Vec<(usize, &Vec<f64>)>> = BTreeMap::new();
    for (&client, group) in &by_client {
        for r in *group {
            by_label.entry(r.label).or_default().push((client, &r.logits));
        }
    }

    let mut served = BTreeMap::new();
    let mut download_counts: BTreeMap<usize, u64> = BTreeMap::new();
    for meta in metas {
        let k = meta.client_id;
        let mut records_down = 0u64;
        for (&label, &own_count) in &meta.label_counts {
            let Some(entries) = by_label.get(&label) else {
                continue;
            };
            let mut sum = vec![0.0; classes];
            let mut n = 0usize;
            for (client, logits) in entries {
                if *client == k {
                    continue;
                }
                for (a, b) in sum.iter_mut().zip(*logits) {
                    *a += b;
                }
                n += 1;
            }
            if n == 0 {
                continue;
            }
            let mean: Vec<f64> = sum.into_iter().map(|v| v / n as f64).collect();
            served.insert((k, label), mean);
            records_down += match strategy {
                Strategy::PeerLabelAvg => 1,
                Strategy::SampleCache => own_count as u64,
            };
        }
        download_counts.insert(k, records_down);
    }

    Ok(GlobalKnowledge {
        round,
        strategy,
        classes,
        served,
        download_counts,
    })
}

impl GlobalKnowledge {
    /// The teacher vector for one of `client_id`'s samples, or None when no
    /// peer uploaded anything for its label (caller falls back to CE-only).
    pub fn lookup(
        &self,
        client_id: usize,
        _global_sample_id: usize,
        label: usize,
    ) -> Option<&[f64]> {
        self.served.get(&(client_id, label)).map(Vec::as_slice)
    }

    /// Records transferred when `client_id` downloads its view.
    pub fn download_records(&self, client_id: usize) -> u64 {
        self.download_counts.get(&client_id).copied().unwrap_or(0)
    }

    /// Number of (requester, label) entries with served knowledge.
    pub fn served_entries(&self) -> usize {
        self.served.len()
    }

    /// Order-stable content hash, used to assert that training rounds
    /// consume exactly the knowledge of the schedule's stale round.
    pub fn fingerprint(&self) -> u64 {
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let eat = |h: &mut u64, v: u64| {
            *h ^= v;
            *h = h.wrapping_mul(PRIME);
        };
        eat(&mut h, self.round as u64);
        eat(&mut h, match self.strategy {
            Strategy::PeerLabelAvg => 1,
            Strategy::SampleCache => 2,
        });
        for ((client, label), logits) in &self.served {
            eat(&mut h, *client as u64);
            eat(&mut h, *label as u64);
            for v in logits {
                eat(&mut h, v.to_bits());
            }
        }
        h
    }
}
