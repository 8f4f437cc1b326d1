//! Seeded random streams.
//!
//! A stream is identified by `(seed, stream_id)` and backed by
//! xoshiro256++, whose output is specified bit-for-bit and so identical on
//! every platform. The 256-bit state is expanded from the identity with
//! splitmix64.
//! Independent purposes (kernel moves, adaptation coin flips, Monte Carlo
//! replications) take separate child streams so they never share draws.

use rand::{RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: Xoshiro256PlusPlus,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let key = splitmix64(seed) ^ splitmix64(stream_id ^ 0x6A09_E667_F3BC_C908).rotate_left(17);
        let mut bytes = [0u8; 32];
        for (i, word) in bytes.chunks_exact_mut(8).enumerate() {
            let v = splitmix64(key.wrapping_add((i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
            word.copy_from_slice(&v.to_le_bytes());
        }
        let inner = Xoshiro256PlusPlus::from_seed(bytes);
        Self { seed, stream_id, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Derives an independent stream for `purpose`. Depends only on this
    /// stream's identity, not on how many draws it has produced.
    pub fn child(&self, purpose: u64) -> RngStream {
        let seed = splitmix64(self.seed ^ splitmix64(self.stream_id.wrapping_add(0xA5A5_A5A5)));
        RngStream::new(seed, purpose)
    }

    /// Uniform on [0, 1) with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for z in out.iter_mut() {
            *z = StandardNormal.sample(&mut self.inner);
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Well-known purpose ids for child streams.
pub mod purpose {
    pub const DATA: u64 = 1;
    pub const KERNEL: u64 = 2;
    pub const ADAPT: u64 = 3;
    pub const INIT: u64 = 4;
    pub const SEARCH: u64 = 5;
    pub const PRELIM: u64 = 6;
    pub const FINAL: u64 = 7;
    pub const MH: u64 = 8;
}
