//! Seed derivation. Every random stream in a run is derived from one root seed
//! through named substreams so that results never depend on call order across
//! subsystems or on worker scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Well-known substream labels.
pub mod streams {
    pub const MPPI_SAMPLING: &str = "mppi-sampling";
    pub const MPPI_EXECUTION: &str = "mppi-execution";
    pub const SENSOR_NOISE: &str = "sensor-noise";
    pub const AGENT_INIT: &str = "agent-init";
    pub const AGENT_ACTIONS: &str = "agent-actions";
    pub const ES_PERTURBATIONS: &str = "es-perturbations";
}

/// splitmix64 finalizer over `seed` combined with `stream`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a hash of a stream label.
pub fn label(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn substream(root: u64, name: &str) -> u64 {
    derive_seed(root, label(name))
}

/// ChaCha stream `stream` of key `seed`. Distinct streams of one key are
/// statistically independent.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn named_rng(root: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream(root, name))
}
