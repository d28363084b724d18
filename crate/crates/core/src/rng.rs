//! Seeded, stream-split random number generation.
//!
//! Every random draw in the crate goes through [`Rng`]. A generator is fully
//! determined by `(seed, stream_id)`; independent logical purposes (the
//! dictionary, latent codes, noise, initialization, per-iteration batches)
//! use distinct streams so each can be reproduced on its own.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scalar::Scalar;

/// Well-known stream identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Dictionary,
    Codes,
    Noise,
    Init,
    Batch,
    Evaluation,
    Verify,
}

impl Stream {
    pub fn id(self) -> u64 {
        match self {
            Stream::Dictionary => 1,
            Stream::Codes => 2,
            Stream::Noise => 3,
            Stream::Init => 4,
            Stream::Batch => 5,
            Stream::Evaluation => 6,
            Stream::Verify => 7,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic random source identified by a seed and a stream id.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            inner,
        }
    }

    pub fn for_stream(seed: u64, stream: Stream) -> Self {
        Self::new(seed, stream.id())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// A child generator on a stream derived from this one's id and `tag`.
    ///
    /// Derivation does not consume randomness from `self`, so the same tag
    /// always yields the same child.
    pub fn derive(&self, tag: u64) -> Rng {
        let id = splitmix64(self.stream_id ^ splitmix64(tag.wrapping_add(0x5851_f42d_4c95_7f2d)));
        Rng::new(self.seed, id)
    }

    /// Draws a fresh tag from this generator and derives a child from it.
    /// Consecutive calls yield distinct children.
    pub fn split(&mut self) -> Rng {
        let tag = self.next_u64();
        self.derive(tag)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn normal<T: Scalar>(&mut self, std_dev: T) -> T {
        T::lit(self.standard_normal()) * std_dev
    }

    /// Uniform on `[low, high]`; returns `low` when the interval is degenerate.
    pub fn uniform(&mut self, low: f64, high: f64) -> f64 {
        if high <= low {
            return low;
        }
        self.inner.random_range(low..=high)
    }

    pub fn unit(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn rademacher(&mut self) -> f64 {
        if self.inner.random::<bool>() {
            1.0
        } else {
            -1.0
        }
    }

    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Uniformly random size-`k` subset of `0..m`, sorted ascending.
    pub fn k_subset(&mut self, m: usize, k: usize) -> Vec<usize> {
        assert!(k <= m, "subset size {k} exceeds population {m}");
        // partial Fisher-Yates over a scratch permutation
        let mut pool: Vec<usize> = (0..m).collect();
        for i in 0..k {
            let j = i + self.index(m - i);
            pool.swap(i, j);
        }
        let mut out = pool[..k].to_vec();
        out.sort_unstable();
        out
    }

    /// Uniformly random unit vector in `dim` dimensions.
    pub fn unit_vector<T: Scalar>(&mut self, dim: usize) -> Vec<T> {
        loop {
            let v: Vec<T> = (0..dim).map(|_| T::lit(self.standard_normal())).collect();
            let nrm = crate::scalar::norm(&v);
            if nrm > T::lit(1e-12) {
                return v.into_iter().map(|x| x / nrm).collect();
            }
        }
    }
}
