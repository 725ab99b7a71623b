//! Seedable random streams.
//!
//! Every stream is a ChaCha12 keystream addressed by `(seed, stream_id)`.
//! Because the generator is counter-based, forking a child stream never
//! consumes draws from the parent, so per-member and per-round streams can
//! be created in any order (or on any thread) without changing results.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};

/// Well-known fork labels shared by the modules that derive sub-streams.
pub mod label {
    pub const INIT: u64 = 0x1001;
    pub const BATCHES: u64 = 0x1002;
    pub const POOL_INPUTS: u64 = 0x2001;
    pub const TEST_INPUTS: u64 = 0x2002;
    pub const TEST_LABELS: u64 = 0x2003;
    pub const INITIAL_SET: u64 = 0x2004;
    pub const POOL_LABELS: u64 = 0x2005;
    pub const ROUND: u64 = 0x3000;
    pub const ACQUISITION: u64 = 0x4000;
}

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha12Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    /// Child stream with the same seed and a stream id derived from this
    /// stream's id and `label`. The parent is not advanced.
    pub fn fork(&self, label: u64) -> Self {
        let id = splitmix64(self.stream_id ^ splitmix64(label.wrapping_add(0x5851_F42D_4C95_7F2D)));
        Self::new(self.seed, id)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 bits of resolution.
    pub fn unit(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on the open interval `(0, 1)`.
    pub fn open_unit(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> Result<f64> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidRange { lo, hi });
        }
        let v = lo + (hi - lo) * self.unit();
        // rounding can land exactly on `hi`
        Ok(if v >= hi { hi.next_down() } else { v })
    }

    /// Uniform index in `0..n`. Panics if `n == 0`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn std_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.std_normal()
    }

    /// Standard Gumbel variate `-ln(-ln U)` with `U` kept off `{0, 1}`.
    pub fn gumbel(&mut self) -> f64 {
        -(-self.open_unit().ln()).ln()
    }

    /// Gamma(shape, 1) by Marsaglia–Tsang.
    pub fn gamma(&mut self, shape: f64) -> Result<f64> {
        let dist = Gamma::new(shape, 1.0)
            .map_err(|e| Error::InvalidParameter(format!("gamma shape {shape}: {e}")))?;
        Ok(dist.sample(&mut self.rng))
    }

    /// Dirichlet draw via normalized Gamma variates.
    pub fn dirichlet(&mut self, alpha: &[f64]) -> Result<Vec<f64>> {
        if alpha.is_empty() {
            return Err(Error::Empty("dirichlet concentration"));
        }
        if let Some(a) = alpha.iter().find(|a| !(**a > 0.0) || !a.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "dirichlet concentration must be positive, got {a}"
            )));
        }
        let mut draws = Vec::with_capacity(alpha.len());
        for &a in alpha {
            draws.push(self.gamma(a)?);
        }
        let total: f64 = draws.iter().sum();
        if !(total > 0.0) {
            // every gamma underflowed (tiny alphas); fall back to a vertex
            let i = self.index(alpha.len());
            draws.iter_mut().for_each(|d| *d = 0.0);
            draws[i] = 1.0;
            return Ok(draws);
        }
        draws.iter_mut().for_each(|d| *d /= total);
        Ok(draws)
    }
}
