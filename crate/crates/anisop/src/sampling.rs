//! Seeded sample streams shared by the estimate batteries.
//!
//! All randomness in the crate flows through [`stream`]: a ChaCha20 generator
//! keyed by a caller seed plus a stable FNV-1a label hash. Work split across
//! threads is first split into fixed strips keyed by strip index, so results
//! are identical for every `--threads` value.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

/// 64-bit FNV-1a, used for stable stream labels and artifact hashes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic generator for (`seed`, `label`) pairs.
///
/// Distinct labels give independent streams for one user-facing seed.
pub fn stream(seed: u64, label: &str) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed ^ fnv1a64(label.as_bytes()))
}

/// Substream for strip `k` of a partitioned workload.
pub fn strip_stream(seed: u64, label: &str, strip: u64) -> ChaCha20Rng {
    let mut tag = [0u8; 8];
    tag.copy_from_slice(&strip.to_le_bytes());
    let mix = fnv1a64(&tag).rotate_left(17);
    ChaCha20Rng::seed_from_u64(seed ^ fnv1a64(label.as_bytes()) ^ mix)
}

/// One standard gaussian draw.
pub fn gaussian1(rng: &mut ChaCha20Rng) -> f64 {
    rng.sample::<f64, _>(StandardNormal)
}

/// Standard gaussian vector of length `n`.
pub fn gaussian(rng: &mut ChaCha20Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| gaussian1(rng)).collect()
}

/// Uniform direction on the Euclidean unit sphere (rejects near-zero draws).
pub fn unit_direction(rng: &mut ChaCha20Rng, n: usize) -> Vec<f64> {
    loop {
        let v = gaussian(rng, n);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Magnitude with log10 uniform on [-3, 3]: spans 1e-3..=1e3.
pub fn log_uniform_radius(rng: &mut ChaCha20Rng) -> f64 {
    let e: f64 = rng.gen_range(-3.0..=3.0);
    10f64.powf(e)
}

/// Direction scaled by a log-uniform radius — the battery's default point law.
pub fn log_uniform_point(rng: &mut ChaCha20Rng, n: usize) -> Vec<f64> {
    let r = log_uniform_radius(rng);
    unit_direction(rng, n).into_iter().map(|x| x * r).collect()
}

/// Number of fixed strips every partitioned battery is cut into.
///
/// Threads pull whole strips, so any thread count ≤ STRIPS reproduces the
/// single-threaded stream exactly.
pub const STRIPS: u64 = 64;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_matches_reference_vectors() {
        // published FNV-1a test vectors
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn streams_reproduce() {
        let a: Vec<f64> = gaussian(&mut stream(7, "x"), 8);
        let b: Vec<f64> = gaussian(&mut stream(7, "x"), 8);
        assert_eq!(a, b);
        let c: Vec<f64> = gaussian(&mut stream(7, "y"), 8);
        assert_ne!(a, c);
    }

    #[test]
    fn radii_span_pinned_range() {
        let mut rng = stream(3, "radii");
        for _ in 0..1000 {
            let r = log_uniform_radius(&mut rng);
            assert!((1e-3..=1e3).contains(&r));
        }
    }

    #[test]
    fn directions_are_unit() {
        let mut rng = stream(5, "dir");
        for _ in 0..100 {
            let d = unit_direction(&mut rng, 5);
            let n2: f64 = d.iter().map(|x| x * x).sum();
            assert!((n2 - 1.0).abs() < 1e-12);
        }
    }
}
