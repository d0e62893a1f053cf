//! Counter-based RNG streams.
//!
//! Every random quantity in the library is drawn from a ChaCha stream keyed
//! by `(seed, stream index)`. Parallel workers (Monte Carlo draws, benchmark
//! grid cells) each own an independent stream, so results do not depend on
//! scheduling or thread count.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// RNG for stream `stream` of the generator keyed by `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives an independent sub-seed from a master seed, a purpose tag and an
/// index (splitmix64 finalizer over the mixed words).
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    let mut z = master;
    for &b in tag.as_bytes() {
        z = z.wrapping_mul(0x100000001b3).wrapping_add(b as u64);
    }
    z = z.wrapping_add(index.wrapping_mul(0x9e3779b97f4a7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// One sample of the standard circularly-symmetric complex Gaussian
/// (unit total variance: each component has variance 1/2).
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * std::f64::consts::FRAC_1_SQRT_2, im * std::f64::consts::FRAC_1_SQRT_2)
}

/// FNV-1a over the bit patterns of a float slice; used to fingerprint
/// channel streams so common-random-number runs can be verified.
pub fn hash_f64s(acc: u64, values: impl IntoIterator<Item = f64>) -> u64 {
    let mut h = if acc == 0 { 0xcbf29ce484222325 } else { acc };
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}
