//! Counter-based splittable randomness.
//!
//! Every tree node draws its split vector from a generator seeded purely by
//! `(master_seed, replicate index, path from the root)`. Two runs at different
//! `x` therefore see identical split vectors at identical tree positions, which
//! makes `N(x)` a monotone coupling in `x`, and replicates are independent
//! streams that can be evaluated in any order.

use rand::{Error as RandError, RngCore, SeedableRng};

/// `splitmix64` finalizer; the standard 64-bit mixer from Vigna's splitmix64.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive the state of child `index` from a node's state.
#[inline]
pub fn child_state(state: u64, index: usize) -> u64 {
    mix64(state ^ (index as u64 + 1).wrapping_mul(0xd6e8_feb8_6659_fd93))
}

/// Derive the root state of a replicate from the master seed.
#[inline]
pub fn replicate_state(master_seed: u64, replicate: u64) -> u64 {
    mix64(mix64(master_seed) ^ replicate.wrapping_mul(0xa076_1d64_78bd_642f))
}

/// SplitMix64 stream generator.
///
/// Used for all Monte Carlo draws in the crate: it is trivially seedable from a
/// single `u64`, bit-stable across platforms, and fast enough to seed one per
/// tree node.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform draw in `[0, 1)` with 53 random bits.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in the open interval `(0, 1)`.
    #[inline]
    pub fn next_open01(&mut self) -> f64 {
        loop {
            let u = self.next_f64();
            if u > 0.0 {
                return u;
            }
        }
    }
}

impl RngCore for SplitMix64 {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (SplitMix64::next_u64(self) >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        SplitMix64::next_u64(self)
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        let mut chunks = dest.chunks_exact_mut(8);
        for chunk in &mut chunks {
            chunk.copy_from_slice(&SplitMix64::next_u64(self).to_le_bytes());
        }
        let rem = chunks.into_remainder();
        if !rem.is_empty() {
            let bytes = SplitMix64::next_u64(self).to_le_bytes();
            rem.copy_from_slice(&bytes[..rem.len()]);
        }
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), RandError> {
        self.fill_bytes(dest);
        Ok(())
    }
}

impl SeedableRng for SplitMix64 {
    type Seed = [u8; 8];

    fn from_seed(seed: Self::Seed) -> Self {
        Self::new(u64::from_le_bytes(seed))
    }

    fn seed_from_u64(state: u64) -> Self {
        Self::new(state)
    }
}
