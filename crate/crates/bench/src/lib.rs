//! Shared fixtures for the criterion benches in benches/.

use fedalu_core::{
    init_params, make_synthetic, partition_dirichlet, ClientPartition, ModelParams,
};

pub const IMAGE_DIM: usize = 784;
pub const CLASSES: usize = 10;

/// An MNIST-shaped single-hidden-layer model.
pub fn image_model(hidden: usize, seed: u64) -> ModelParams {
    init_params(&[IMAGE_DIM, hidden, CLASSES], seed).unwrap()
}

/// A batch of image-sized pseudo samples with labels cycling over classes.
pub fn image_batch(n: usize) -> Vec<(Vec<f64>, usize)> {
    (0..n)
        .map(|i| {
            let features = (0..IMAGE_DIM)
                .map(|j| ((i * 31 + j * 7) % 256) as f64 / 255.0)
                .collect();
            (features, i % CLASSES)
        })
        .collect()
}

/// Small synthetic federation used by the aggregation and end-to-end benches.
pub fn small_federation(clients: usize) -> Vec<ClientPartition> {
    let samples = make_synthetic(CLASSES, 16, 40, 0.5, 7).unwrap();
    partition_dirichlet(&samples, clients, 0.8, 0.2, 7).unwrap()
}
