//! End-to-end drivers: dataset generation, training, evaluation, sampling
//! ablation and timing.

pub mod ablate;
pub mod bench;
pub mod dataset;
pub mod evaluate;
pub mod train;

pub use ablate::{ablate_sampling, AblationReport, AblationRun, ErrorPair};
pub use bench::{bench, BenchReport};
pub use dataset::{build_instance, gen_dataset, instance_seed, Dataset, InstanceFailure, TrainingInstance};
pub use evaluate::{evaluate, relative_errors, CaseErrors, EvalReport, EvalTimings, Predictor, TestCase, TestSet};
pub use train::{initial_checkpoint, sample_batch, train, HistoryRecord, TrainOptions, TrainOutcome};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent random streams derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Dataset,
    Init,
    Batches,
    Test,
}

pub fn stream_seed(master: u64, stream: Stream) -> u64 {
    let tag = match stream {
        Stream::Dataset => 1,
        Stream::Init => 2,
        Stream::Batches => 3,
        Stream::Test => 4,
    };
    splitmix64(master ^ splitmix64(tag))
}
