//! Seeded, splittable random streams.
//!
//! Every sampling routine draws from a ChaCha stream addressed by
//! `(seed, purpose, block)`. Blocks are independent, so a sample of `n`
//! points can be generated (or evaluated) block-by-block in any order and
//! on any number of threads without changing a single bit of the result.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Rows per independently seeded block.
pub const BLOCK_ROWS: usize = 256;

/// What a stream is used for. Distinct purposes never share random words.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Points,
    LabelNoise,
    ShiftDraw,
    AngleDirection,
    FlipProbability,
    PropA1Design,
    PropA1Noise,
    Panel,
}

impl Purpose {
    fn id(self) -> u64 {
        match self {
            Purpose::Points => 1,
            Purpose::LabelNoise => 2,
            Purpose::ShiftDraw => 3,
            Purpose::AngleDirection => 4,
            Purpose::FlipProbability => 5,
            Purpose::PropA1Design => 6,
            Purpose::PropA1Noise => 7,
            Purpose::Panel => 8,
        }
    }
}

/// SplitMix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a salt.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    mix64(seed ^ mix64(salt.wrapping_add(0x6A09_E667_F3BC_C909)))
}

/// Stream for `(seed, purpose)`.
pub fn stream(seed: u64, purpose: Purpose) -> ChaCha8Rng {
    block_stream(seed, purpose, 0)
}

/// Stream for block `block` of `(seed, purpose)`.
pub fn block_stream(seed: u64, purpose: Purpose, block: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, block));
    rng.set_stream(purpose.id());
    rng
}
