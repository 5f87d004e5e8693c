//! Deterministic seed derivation.
//!
//! Every stochastic choice in the crate (quantization rounding, power
//! iteration starts, batch shuffling, ...) draws from a ChaCha8 stream
//! seeded through [`derive_seed`]. Mixing the base seed with a stream
//! tag and position words gives independent streams that do not depend
//! on evaluation order, so parallel and sequential runs agree bit for
//! bit.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags namespacing the independent RNG streams of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    ModelInit = 1,
    Dataset = 2,
    BatchSchedule = 3,
    StepCompression = 4,
    TableCell = 5,
    TimingSamples = 6,
    Kmeans = 7,
    Probe = 8,
    LabelNoise = 9,
}

/// splitmix64 finalizer; full-period mix of one 64-bit word.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `base`, a stream tag, and position words.
pub fn derive_seed(base: u64, stream: Stream, words: &[u64]) -> u64 {
    let mut state = mix(base ^ mix(stream as u64));
    for &w in words {
        state = mix(state ^ mix(w));
    }
    state
}

/// ChaCha8 generator for one derived stream position.
pub fn stream_rng(base: u64, stream: Stream, words: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, stream, words))
}
