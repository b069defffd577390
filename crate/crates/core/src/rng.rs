//! Keyed random streams.
//!
//! Every stochastic site (dropout, augmentation, shuffling, initialization,
//! data generation) draws from its own stream, addressed by a path of labels
//! and indices below the global seed. Two sites never share state, so adding
//! or removing one cannot shift the numbers another one sees.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Address of a random stream. Cheap to copy; derive children with
/// [`StreamKey::child`] and [`StreamKey::at`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn root(seed: u64) -> Self {
        StreamKey(mix64(seed ^ 0x6d6d_6373_655f_7267))
    }

    pub fn child(self, label: &str) -> Self {
        StreamKey(mix64(self.0 ^ fnv1a(label.as_bytes()).rotate_left(17)))
    }

    pub fn at(self, index: u64) -> Self {
        StreamKey(mix64(self.0.wrapping_add(mix64(index ^ 0x9e37_79b9_7f4a_7c15))))
    }

    pub fn value(self) -> u64 {
        self.0
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

/// Shorthand for `StreamKey::root(seed).child(site).at(index)`.
pub fn derive_seed(seed: u64, site: &str, index: u64) -> u64 {
    StreamKey::root(seed).child(site).at(index).value()
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Standard normal sample (Box-Muller, one of the pair discarded).
pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // 1 - u keeps the argument of ln strictly positive.
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn keys_are_stable_and_distinct() {
        let a = StreamKey::root(42).child("dropout").at(3);
        assert_eq!(a, StreamKey::root(42).child("dropout").at(3));
        assert_ne!(a, StreamKey::root(42).child("dropout").at(4));
        assert_ne!(a, StreamKey::root(42).child("shuffle").at(3));
        assert_ne!(a, StreamKey::root(43).child("dropout").at(3));
    }

    #[test]
    fn streams_are_reproducible() {
        let mut r1 = StreamKey::root(7).child("x").rng();
        let mut r2 = StreamKey::root(7).child("x").rng();
        for _ in 0..16 {
            assert_eq!(r1.next_u64(), r2.next_u64());
        }
    }

    #[test]
    fn normal_has_roughly_unit_moments() {
        let mut rng = StreamKey::root(1).rng();
        let n = 20_000;
        let xs: alloc::vec::Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }
}
