use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent generator for one work item (tree, replicate, fold) of a
/// seeded computation. Streams never overlap, so results do not depend on
/// scheduling.
pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Seed for a named sub-computation, so sibling components of one run do not
/// share random draws.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    // FNV-1a over the label, folded into the base seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    seed ^ h.rotate_left(17)
}
