//! Seeded random streams.
//!
//! Each consumer draws from its own ChaCha stream derived from the run seed,
//! so enabling one component never shifts the random draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init,
    Generate,
    TestSet,
    Split,
    LabeledBatches,
    UnlabeledBatches,
    LabeledAug,
    PseudoAug,
    UnsupervisedAug,
    AvgClusteringAug,
    Probe,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Init => 1,
            Stream::Generate => 2,
            Stream::TestSet => 3,
            Stream::Split => 4,
            Stream::LabeledBatches => 5,
            Stream::UnlabeledBatches => 6,
            Stream::LabeledAug => 7,
            Stream::PseudoAug => 8,
            Stream::UnsupervisedAug => 9,
            Stream::AvgClusteringAug => 10,
            Stream::Probe => 11,
        }
    }
}

pub fn stream_rng(seed: u64, stream: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}
