//! Dataset loading and non-IID partitioning.
//!
//! MNIST is read from local IDX files (never downloaded). A synthetic
//! Gaussian-blob generator stands in for fast tests. Client partitions are
//! drawn per class from a Dirichlet distribution so label skew is tunable
//! through a single concentration parameter.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ReadBytesExt};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};

use crate::error::{Error, Result};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// One example: feature vector plus integer class label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

/// One client's local data. Samples carry their global id so partition
/// disjointness and coverage stay checkable after the split.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientPartition {
    pub client_id: usize,
    pub train: Vec<(usize, Sample)>,
    pub test: Vec<(usize, Sample)>,
}

impl ClientPartition {
    pub fn train_size(&self) -> usize {
        self.train.len()
    }

    pub fn test_size(&self) -> usize {
        self.test.len()
    }
}

/// Smallest C such that every label is in [0, C).
pub fn class_count(samples: &[Sample]) -> usize {
    samples.iter().map(|s| s.label + 1).max().unwrap_or(0)
}

fn idx_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::IdxParse {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn open_idx(path: &Path) -> Result<BufReader<File>> {
    let file = File::open(path).map_err(|e| idx_err(path, format!("cannot open: {e}")))?;
    Ok(BufReader::new(file))
}

fn read_u32(reader: &mut impl Read, path: &Path, what: &str) -> Result<u32> {
    reader
        .read_u32::<BigEndian>()
        .map_err(|_| idx_err(path, format!("truncated before {what}")))
}

/// Parse a pair of IDX files (big-endian images + labels) into samples.
///
/// Pixel bytes are scaled to [0, 1] by dividing by 255. Sample order is the
/// file order.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<Vec<Sample>> {
    let mut images = open_idx(images_path)?;
    let magic = read_u32(&mut images, images_path, "magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(idx_err(
            images_path,
            format!("bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        ));
    }
    let count = read_u32(&mut images, images_path, "image count")? as usize;
    let rows = read_u32(&mut images, images_path, "row count")? as usize;
    let cols = read_u32(&mut images, images_path, "column count")? as usize;
    let dim = rows * cols;
    if dim == 0 {
        return Err(idx_err(images_path, "zero image dimensions"));
    }

    let mut labels = open_idx(labels_path)?;
    let magic = read_u32(&mut labels, labels_path, "magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(idx_err(
            labels_path,
            format!("bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        ));
    }
    let label_count = read_u32(&mut labels, labels_path, "label count")? as usize;
    if label_count != count {
        return Err(idx_err(
            labels_path,
            format!("label count {label_count} does not match image count {count}"),
        ));
    }

    let mut label_bytes = vec![0u8; count];
    labels
        .read_exact(&mut label_bytes)
        .map_err(|_| idx_err(labels_path, format!("truncated: expected {count} label bytes")))?;

    let mut samples = Vec::with_capacity(count);
    let mut pixel_buf = vec![0u8; dim];
    for (i, &label) in label_bytes.iter().enumerate() {
        images.read_exact(&mut pixel_buf).map_err(|_| {
            idx_err(
                images_path,
                format!("truncated in image {i} of {count} ({dim} bytes each)"),
            )
        })?;
        if label > 9 {
            return Err(idx_err(
                labels_path,
                format!("label byte {label} at index {i} outside 0..=9"),
            ));
        }
        samples.push(Sample {
            features: pixel_buf.iter().map(|&b| b as f64 / 255.0).collect(),
            label: label as usize,
        });
    }
    Ok(samples)
}

/// Gaussian blobs: `per_class` points per class around seed-jittered centers
/// laid out on a coarse lattice so classes never overlap by accident.
pub fn make_synthetic(
    classes: usize,
    dim: usize,
    per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<Vec<Sample>> {
    if classes == 0 || dim == 0 || per_class == 0 {
        return Err(Error::InvalidArgument(
            "synthetic data needs classes, dim, per_class all >= 1".into(),
        ));
    }
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "spread must be positive and finite, got {spread}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = Vec::with_capacity(classes);
    for c in 0..classes {
        // lattice keeps centers at least ~3 apart even after jitter
        let mut center = vec![0.0; dim];
        center[c % dim] = 4.0 * (1 + c / dim) as f64;
        for v in &mut center {
            *v += rng.random_range(-0.5..0.5);
        }
        centers.push(center);
    }

    let noise = Normal::new(0.0, spread)
        .map_err(|e| Error::InvalidArgument(format!("bad spread: {e}")))?;
    let mut samples = Vec::with_capacity(classes * per_class);
    for (label, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            let features = center.iter().map(|&m| m + noise.sample(&mut rng)).collect();
            samples.push(Sample { features, label });
        }
    }
    Ok(samples)
}

fn check_partition_args(
    n_samples: usize,
    clients: usize,
    alpha: f64,
    test_fraction: f64,
) -> Result<()> {
    if clients < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 clients, got {clients}"
        )));
    }
    if clients > n_samples {
        return Err(Error::InvalidArgument(format!(
            "{clients} clients exceed {n_samples} samples"
        )));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "concentration must be positive and finite, got {alpha}"
        )));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    Ok(())
}

/// Proportions over `clients` from a symmetric Dirichlet with concentration
/// `alpha`, via normalized Gamma draws.
fn dirichlet_proportions(clients: usize, alpha: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha checked positive");
    for _ in 0..100 {
        let draws: Vec<f64> = (0..clients).map(|_| gamma.sample(rng)).collect();
        let sum: f64 = draws.iter().sum();
        if sum.is_finite() && sum > 1e-300 {
            return draws.into_iter().map(|g| g / sum).collect();
        }
    }
    // all mass underflowed (conceivable only for extreme alpha); fall back
    vec![1.0 / clients as f64; clients]
}

/// Split `n` items by `proportions` with largest-remainder rounding so the
/// counts sum to exactly `n`. Ties go to lower indices.
fn apportion(n: usize, proportions: &[f64]) -> Vec<usize> {
    let mut counts: Vec<usize> = proportions.iter().map(|p| (p * n as f64) as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = proportions[a] * n as f64 - (proportions[a] * n as f64).floor();
        let fb = proportions[b] * n as f64 - (proportions[b] * n as f64).floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(n - assigned) {
        counts[i] += 1;
    }
    counts
}

/// Assign every sample to a client, class by class, with Dirichlet label skew.
fn assign_to_clients(
    samples: &[Sample],
    clients: usize,
    alpha: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (id, s) in samples.iter().enumerate() {
        by_class.entry(s.label).or_default().push(id);
    }

    let mut owned: Vec<Vec<usize>> = vec![Vec::new(); clients];
    for ids in by_class.values_mut() {
        ids.shuffle(rng);
        let proportions = dirichlet_proportions(clients, alpha, rng);
        let counts = apportion(ids.len(), &proportions);
        let mut cursor = 0;
        for (k, &c) in counts.iter().enumerate() {
            owned[k].extend_from_slice(&ids[cursor..cursor + c]);
            cursor += c;
        }
    }

    // no client may end up empty: move one sample at a time from the
    // currently largest client (lowest id on ties)
    while let Some(empty) = owned.iter().position(Vec::is_empty) {
        let donor = (0..clients)
            .max_by(|&a, &b| owned[a].len().cmp(&owned[b].len()).then(b.cmp(&a)))
            .expect("at least one client");
        let moved = owned[donor].pop().expect("donor has samples");
        owned[empty].push(moved);
    }
    owned
}

/// Hold out roughly `test_fraction` of one client's samples, stratified by
/// label: each label group contributes floor(group * fraction) samples. A
/// client with at least two samples always keeps a non-empty test set.
fn split_client(
    client_id: usize,
    mut ids: Vec<usize>,
    samples: &[Sample],
    test_fraction: f64,
) -> ClientPartition {
    ids.sort_unstable();
    let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for id in ids {
        by_label.entry(samples[id].label).or_default().push(id);
    }

    let mut train_ids = Vec::new();
    let mut test_ids = Vec::new();
    for group in by_label.values() {
        let n_test = (group.len() as f64 * test_fraction) as usize;
        let split = group.len() - n_test;
        train_ids.extend_from_slice(&group[..split]);
        test_ids.extend_from_slice(&group[split..]);
    }

    if test_ids.is_empty() && train_ids.len() >= 2 {
        // take one sample from the largest label group (lowest label on ties)
        let (_, group) = by_label
            .iter()
            .max_by(|(la, ga), (lb, gb)| ga.len().cmp(&gb.len()).then(lb.cmp(la)))
            .expect("client is non-empty");
        let chosen = *group.last().expect("group is non-empty");
        train_ids.retain(|&id| id != chosen);
        test_ids.push(chosen);
    }

    train_ids.sort_unstable();
    test_ids.sort_unstable();
    let materialize = |ids: Vec<usize>| {
        ids.into_iter()
            .map(|id| (id, samples[id].clone()))
            .collect::<Vec<_>>()
    };
    ClientPartition {
        client_id,
        train: materialize(train_ids),
        test: materialize(test_ids),
    }
}

/// Non-IID partition with a per-client held-out test split (personalized
/// evaluation). Deterministic in `seed`.
pub fn partition_dirichlet(
    samples: &[Sample],
    clients: usize,
    alpha: f64,
    test_fraction: f64,
    seed: u64,
) -> Result<Vec<ClientPartition>> {
    check_partition_args(samples.len(), clients, alpha, test_fraction)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let owned = assign_to_clients(samples, clients, alpha, &mut rng);
    Ok(owned
        .into_iter()
        .enumerate()
        .map(|(k, ids)| split_client(k, ids, samples, test_fraction))
        .collect())
}

/// Variant with one shared test set: a globally stratified `test_fraction`
/// hold-out is served to every client, and only the remainder is partitioned.
pub fn partition_dirichlet_shared_test(
    samples: &[Sample],
    clients: usize,
    alpha: f64,
    test_fraction: f64,
    seed: u64,
) -> Result<Vec<ClientPartition>> {
    check_partition_args(samples.len(), clients, alpha, test_fraction)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (id, s) in samples.iter().enumerate() {
        by_class.entry(s.label).or_default().push(id);
    }
    let mut test_ids = Vec::new();
    let mut train_pool = Vec::new();
    for ids in by_class.values_mut() {
        ids.shuffle(&mut rng);
        let n_test = (ids.len() as f64 * test_fraction) as usize;
        test_ids.extend_from_slice(&ids[..n_test]);
        train_pool.extend_from_slice(&ids[n_test..]);
    }
    test_ids.sort_unstable();
    if test_ids.is_empty() {
        return Err(Error::InvalidArgument(
            "shared test set came out empty; raise test_fraction or add samples".into(),
        ));
    }
    if train_pool.len() < clients {
        return Err(Error::InvalidArgument(format!(
            "{clients} clients exceed {} training samples after the shared hold-out",
            train_pool.len()
        )));
    }
    let shared_test: Vec<(usize, Sample)> = test_ids
        .into_iter()
        .map(|id| (id, samples[id].clone()))
        .collect();

    train_pool.sort_unstable();
    let pool_samples: Vec<Sample> = train_pool.iter().map(|&id| samples[id].clone()).collect();
    let owned = assign_to_clients(&pool_samples, clients, alpha, &mut rng);
    Ok(owned
        .into_iter()
        .enumerate()
        .map(|(k, pool_ids)| {
            let mut train: Vec<(usize, Sample)> = pool_ids
                .into_iter()
                .map(|i| (train_pool[i], samples[train_pool[i]].clone()))
                .collect();
            train.sort_unstable_by_key(|(id, _)| *id);
            ClientPartition {
                client_id: k,
                train,
                test: shared_test.clone(),
            }
        })
        .collect())
}

/// Where a run's data comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Mnist {
        images: PathBuf,
        labels: PathBuf,
    },
    Synthetic {
        classes: usize,
        dim: usize,
        per_class: usize,
        spread: f64,
    },
}

impl DatasetSpec {
    /// Load or generate the full sample list. `seed` only affects synthetic
    /// generation; MNIST bytes come straight from disk.
    pub fn load(&self, seed: u64) -> Result<Vec<Sample>> {
        match self {
            DatasetSpec::Mnist { images, labels } => load_mnist_idx(images, labels),
            DatasetSpec::Synthetic {
                classes,
                dim,
                per_class,
                spread,
            } => make_synthetic(*classes, *dim, *per_class, *spread, seed),
        }
    }
}
