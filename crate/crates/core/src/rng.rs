//! Counter-based random streams.
//!
//! Every random draw is keyed by `(seed, domain, index)` so that generation
//! and sampling can run in any order or thread layout with identical results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn domain_key(domain: &str) -> u64 {
    // FNV-1a; stable across platforms and releases.
    domain
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Independent generator for entity `index` within `domain`.
pub fn keyed_rng(seed: u64, domain: &str, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(domain_key(domain))));
    rng.set_stream(index);
    rng
}
