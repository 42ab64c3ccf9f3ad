//! Deterministic, splittable Gaussian random streams.
//!
//! Every stream is a pure function of `(seed, stream_id, position)`: the
//! ChaCha8 block cipher keyed by the expanded seed runs in counter mode,
//! with `stream_id` selecting the cipher stream. Distinct stream ids give
//! statistically independent sequences regardless of scheduling order,
//! which is what makes parallel Monte Carlo bit-reproducible here.
//!
//! Gaussian draws use the inverse normal CDF applied to a 53-bit uniform
//! (one `u64` per draw), so the draw counter advances by exactly one per
//! Gaussian. This choice is fixed for the whole crate; tolerances in the
//! test suite are statistical, not bit-exact across sampling methods.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::erf::erf_inv;

use crate::error::{Error, Result};

const TWO_POW_NEG53: f64 = 1.0 / (1u64 << 53) as f64;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One independent Gaussian stream, identified by `(seed, stream_id)`.
#[derive(Debug, Clone)]
pub struct GaussianStream {
    seed: u64,
    stream_id: u64,
    position: u64,
    rng: ChaCha8Rng,
}

impl GaussianStream {
    /// Create the stream for `(seed, stream_id)`, positioned at draw 0.
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut state = seed;
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(stream_id);
        GaussianStream {
            seed,
            stream_id,
            position: 0,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Number of draws (Gaussian or uniform) consumed so far.
    pub fn position(&self) -> u64 {
        self.position
    }

    /// Next standard normal draw via the inverse CDF.
    pub fn next_gaussian(&mut self) -> f64 {
        // (c + 0.5) / 2^53 is symmetric in (0,1), so the quantile never
        // sees 0 or 1.
        let u = (self.rng.next_u64() >> 11) as f64;
        self.position += 1;
        std::f64::consts::SQRT_2 * erf_inv(2.0 * ((u + 0.5) * TWO_POW_NEG53) - 1.0)
    }

    /// Next uniform draw in `[0, 1)`.
    pub fn next_uniform(&mut self) -> f64 {
        let u = (self.rng.next_u64() >> 11) as f64;
        self.position += 1;
        u * TWO_POW_NEG53
    }
}

/// Alias for [`GaussianStream::new`], the spec-level constructor.
pub fn make_stream(seed: u64, stream_id: u64) -> GaussianStream {
    GaussianStream::new(seed, stream_id)
}

/// `n_steps` Brownian increments, each distributed `N(0, dt)`.
pub fn brownian_increments(
    stream: &mut GaussianStream,
    n_steps: usize,
    dt: f64,
) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    let sqrt_dt = dt.sqrt();
    Ok((0..n_steps).map(|_| sqrt_dt * stream.next_gaussian()).collect())
}

/// Probability that a Brownian bridge with variance rate `var_rate` and
/// endpoint gaps `d0 >= 0`, `d1 >= 0` over a step of length `dt` touches
/// zero inside the step: `exp(-2 d0 d1 / (var_rate dt))`.
///
/// Callers must already have merged on a sign change, so negative gaps
/// are rejected.
pub fn bridge_crossing_prob(d0: f64, d1: f64, dt: f64, var_rate: f64) -> Result<f64> {
    if d0 < 0.0 || d1 < 0.0 {
        return Err(Error::invalid(format!(
            "bridge gaps must be non-negative, got d0={d0}, d1={d1}"
        )));
    }
    if !(dt > 0.0) || !(var_rate > 0.0) {
        return Err(Error::invalid(format!(
            "dt and var_rate must be positive, got dt={dt}, var_rate={var_rate}"
        )));
    }
    Ok((-2.0 * d0 * d1 / (var_rate * dt)).exp())
}
