//! Deterministic federated-distillation simulator.
//!
//! Clients train small dense networks on non-IID shards of a dataset and
//! periodically exchange logit knowledge instead of parameters. The exchange
//! cadence is controlled by an accumulation period `s`: knowledge moves only
//! every s-th round, and in between clients distill against the last
//! exchanged snapshot. A scalar-exact ledger reports all training traffic in
//! units of one exchange round's cost.
//!
//! Everything is reproducible bit for bit from (config, seed), including
//! across worker counts.

pub mod data;
pub mod engine;
pub mod error;
pub mod knowledge;
pub mod loss;
pub mod nn;
pub mod schedule;

pub use data::{
    class_count, load_mnist_idx, make_synthetic, partition_dirichlet,
    partition_dirichlet_shared_test, ClientPartition, DatasetSpec, Sample,
};
pub use engine::{
    evaluate, run, run_no_alu_reference, run_with_partitions, train_local_round, CommLedger,
    Direction, LocalHypers, RoundMetrics, RunConfig, RunOutput, TeacherView,
};
pub use error::{Error, Result};
pub use knowledge::{
    aggregate, extract_knowledge, ClientMeta, GlobalKnowledge, KnowledgeRecord, RecordKey,
    Strategy,
};
pub use loss::{ce_grad, ce_loss, combined_objective, kd_grad, kd_loss, softmax, Probe};
pub use nn::{backward, init_params, sgd_step, sgd_step_in_place, Gradients, ModelParams};
pub use schedule::{
    effective_knowledge_round, exchange_count, should_exchange, RoundState, ScheduleConfig,
};
