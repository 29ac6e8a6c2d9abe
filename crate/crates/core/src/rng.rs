//! Counter-style seeding: every random draw in the project comes from a
//! ChaCha stream addressed by `(seed, tag, index)`, so results do not depend
//! on iteration order or on how work is split.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a, used only to turn stream tags into numbers.
fn tag_hash(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Independent generator for item `index` of the stream named `tag`.
pub fn stream_rng(seed: u64, tag: &str, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ tag_hash(tag).rotate_left(17));
    rng.set_stream(index);
    rng
}

/// Derives a child seed, for handing a sub-task its own seed space.
pub fn derive_seed(seed: u64, tag: &str, index: u64) -> u64 {
    use rand::RngCore;
    stream_rng(seed, tag, index).next_u64()
}
