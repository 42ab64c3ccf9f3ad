//! Analytic and quadrature references for meeting times and rates.
//!
//! The reference value for the mean meeting time of two coalescing
//! particles a gap `u` apart is the survival-form integral
//! `E(tau ^ 1) = int_0^1 erf(u / (2 sqrt(t))) dt` (the gap is a Brownian
//! motion with variance rate 2, so `P(tau > t) = erf(u / (2 sqrt(t)))`).
//! A companion function reproduces the alternative closed form that adds
//! `erf(u/2)`; both can be tabulated side by side together with the two
//! candidate small-gap slopes `2/sqrt(pi)` and `3/(2 sqrt(pi))`, and the
//! Monte Carlo estimate adjudicates. Only finiteness of the slope feeds
//! any downstream bound, which holds either way.

use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::flow_sim::{TimeGrid, PARTICLE_STREAM_BITS};
use crate::gauss_rng::{bridge_crossing_prob, GaussianStream};
use crate::mc_stats::{loglog_slope, mc_collect, summarize, RateFitResult};
use crate::stochastic_integrals::{partition_sum, Integrand};
use crate::flow_sim::{simulate_flow, Partition};

/// Small-gap slope of the survival-form integral: `2/sqrt(pi)`.
pub const SURVIVAL_SMALL_U_SLOPE: f64 = 1.1283791670955126;

/// Small-gap slope printed in the source asymptotics: `3/(2 sqrt(pi))`.
pub const PAPER_SMALL_U_SLOPE: f64 = 0.8462843753216345;

/// Adaptive Simpson quadrature with absolute tolerance `tol`.
fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    recurse(f, a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, 48)
}

const QUAD_TOL: f64 = 1e-8;

/// `E(tau ^ 1)` for two coalescing particles a gap `u` apart, by adaptive
/// quadrature of the survival integral to absolute tolerance `1e-8`.
pub fn meeting_time_mean_quadrature(u: f64) -> Result<f64> {
    if u < 0.0 || !u.is_finite() {
        return Err(Error::invalid(format!("gap must be non-negative, got {u}")));
    }
    if u == 0.0 {
        return Ok(0.0);
    }
    let integrand = move |t: f64| {
        if t <= 0.0 {
            1.0
        } else {
            erf(u / (2.0 * t.sqrt()))
        }
    };
    // The integrand flattens to 1 below t ~ u^2; splitting there keeps the
    // subdivision depth shallow on both sides.
    let split = (u * u).min(1.0);
    let value = if split < 1.0 {
        adaptive_simpson(&integrand, 0.0, split, 0.5 * QUAD_TOL)
            + adaptive_simpson(&integrand, split, 1.0, 0.5 * QUAD_TOL)
    } else {
        adaptive_simpson(&integrand, 0.0, 1.0, QUAD_TOL)
    };
    Ok(value.clamp(0.0, 1.0))
}

/// The printed two-term closed form, read with an outer `dt` on the first
/// term: survival integral plus `erf(u/2)`. Tabulated next to the survival
/// form; its small-gap slope matches neither printed asymptotic.
pub fn paper_meeting_time_formula(u: f64) -> Result<f64> {
    Ok(meeting_time_mean_quadrature(u)? + erf(u / 2.0))
}

/// Fitted and asymptotic small-gap slopes of the mean meeting time.
#[derive(Debug, Clone, Copy)]
pub struct SlopeComparison {
    /// Least-squares slope through the origin of the quadrature values.
    pub fitted_slope: f64,
    /// The asymptotic constant `3/(2 sqrt(pi))` printed in the source.
    pub paper_slope: f64,
}

/// Slope through the origin of `E(tau ^ 1)` over a grid of small gaps.
pub fn small_u_slope(u_grid: &[f64]) -> Result<SlopeComparison> {
    if u_grid.len() < 4 {
        return Err(Error::invalid("small-gap slope needs at least 4 grid points"));
    }
    if u_grid.iter().any(|&u| !(u > 0.0 && u <= 0.05)) {
        return Err(Error::invalid("small-gap grid must lie in (0, 0.05]"));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for &u in u_grid {
        num += meeting_time_mean_quadrature(u)? * u;
        den += u * u;
    }
    Ok(SlopeComparison {
        fitted_slope: num / den,
        paper_slope: PAPER_SMALL_U_SLOPE,
    })
}

/// Monte Carlo estimate of the quadrant exit time bound.
#[derive(Debug, Clone, Copy)]
pub struct AngleExitResult {
    pub r1: f64,
    pub r2: f64,
    /// Estimate of `E(zeta ^ 1)`.
    pub mean_exit: f64,
    pub stderr: f64,
    /// `mean_exit / (r1 r2)`, the boundedness diagnostic.
    pub ratio: f64,
}

/// First step index at which either coordinate of a planar Brownian motion
/// from `(x1, x2)` hits zero, bridge-corrected per coordinate, capped.
pub fn simulate_quadrant_exit_index(
    x1: f64,
    x2: f64,
    grid: &TimeGrid,
    s1: &mut GaussianStream,
    s2: &mut GaussianStream,
    bridge_correction: bool,
) -> Result<usize> {
    if !(x1 > 0.0) || !(x2 > 0.0) {
        return Err(Error::invalid(format!(
            "quadrant start must be positive, got ({x1}, {x2})"
        )));
    }
    let n_steps = grid.n_steps();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let mut a = x1;
    let mut b = x2;
    for step in 0..n_steps {
        let na = a + sqrt_dt * s1.next_gaussian();
        let nb = b + sqrt_dt * s2.next_gaussian();
        if na <= 0.0 || nb <= 0.0 {
            return Ok(step + 1);
        }
        if bridge_correction {
            if s1.next_uniform() < bridge_crossing_prob(a, na, dt, 1.0)? {
                return Ok(step + 1);
            }
            if s2.next_uniform() < bridge_crossing_prob(b, nb, dt, 1.0)? {
                return Ok(step + 1);
            }
        }
        a = na;
        b = nb;
    }
    Ok(n_steps)
}

/// Estimate `E(zeta ^ 1)` for the first exit of a planar Brownian motion
/// from the quadrant, started at `(r1, r2)`.
pub fn angle_exit_bound_experiment(
    r1: f64,
    r2: f64,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<AngleExitResult> {
    if !(r1 > 0.0) || !(r2 > 0.0) {
        return Err(Error::invalid(format!(
            "exit experiment needs positive starts, got ({r1}, {r2})"
        )));
    }
    let dt = grid.dt();
    let times = mc_collect(n_paths, |replica| {
        let base = (replica as u64) << PARTICLE_STREAM_BITS;
        let mut s1 = GaussianStream::new(seed, base);
        let mut s2 = GaussianStream::new(seed, base | 1);
        let idx = simulate_quadrant_exit_index(r1, r2, grid, &mut s1, &mut s2, true)
            .expect("validated starts");
        idx as f64 * dt
    });
    let est = summarize(&times)?;
    Ok(AngleExitResult {
        r1,
        r2,
        mean_exit: est.mean,
        stderr: est.stderr,
        ratio: est.mean / (r1 * r2),
    })
}

/// Product-form survival oracle for the quadrant exit:
/// `E(zeta ^ 1) = int_0^1 erf(r1/sqrt(2t)) erf(r2/sqrt(2t)) dt`.
pub fn quadrant_exit_mean_quadrature(r1: f64, r2: f64) -> Result<f64> {
    if !(r1 > 0.0) || !(r2 > 0.0) {
        return Err(Error::invalid("quadrant oracle needs positive starts"));
    }
    let f = move |t: f64| {
        if t <= 0.0 {
            1.0
        } else {
            let s = (2.0 * t).sqrt();
            erf(r1 / s) * erf(r2 / s)
        }
    };
    let split = (r1.min(r2).powi(2)).min(1.0);
    let value = if split < 1.0 {
        adaptive_simpson(&f, 0.0, split, 0.5 * QUAD_TOL)
            + adaptive_simpson(&f, split, 1.0, 0.5 * QUAD_TOL)
    } else {
        adaptive_simpson(&f, 0.0, 1.0, QUAD_TOL)
    };
    Ok(value.clamp(0.0, 1.0))
}

/// Per-level mean of the quadratic partition sum.
#[derive(Debug, Clone, Copy)]
pub struct RateLevel {
    pub n_intervals: usize,
    pub mesh: f64,
    pub mean_s_bar: f64,
    pub stderr: f64,
}

/// Result of the convergence-rate probe.
#[derive(Debug, Clone)]
pub struct RateProbe {
    /// Log-log fit of `|mean S_bar - proxy|` against mesh; `None` when the
    /// gaps are identically zero (degenerate integrand).
    pub fit: Option<RateFitResult>,
    /// Fitted constant `exp(intercept) / sup a^2`.
    pub c: Option<f64>,
    pub degenerate: bool,
    pub levels: Vec<RateLevel>,
    /// `(mesh, gap)` points that entered the fit.
    pub gap_points: Vec<(f64, f64)>,
    /// Standard errors of the coupled per-replica gaps, aligned with
    /// `gap_points`.
    pub gap_stderr: Vec<f64>,
}

/// Probe the linear-in-mesh convergence of `E S_bar` on nested uniform
/// partitions of `[0, u_max]`.
///
/// The finest level only serves as the limit proxy; the remaining levels
/// enter the log-log fit. Coarse sums are evaluated on the coupled finest
/// sample, never resimulated.
pub fn rate_constant_probe(
    u_max: f64,
    integrand: &Integrand,
    levels: &[usize],
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    bridge_correction: bool,
) -> Result<RateProbe> {
    if levels.len() < 4 {
        return Err(Error::invalid("rate probe needs at least 4 levels"));
    }
    if levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("rate probe levels must strictly refine"));
    }
    let finest = *levels.last().unwrap();
    if levels[..levels.len() - 1].iter().any(|&n| finest % n != 0) {
        return Err(Error::invalid(
            "every rate probe level must divide the finest level",
        ));
    }
    let partitions: Vec<Partition> = levels
        .iter()
        .map(|&n| Partition::uniform(u_max, n))
        .collect::<Result<_>>()?;
    let finest_partition = partitions.last().unwrap().clone();

    let per_replica: Vec<Vec<f64>> = mc_collect(n_paths, |replica| {
        let streams = crate::flow_sim::particle_streams(
            seed,
            replica,
            finest_partition.n_particles(),
        )
        .expect("particle count fits stream layout");
        let sample = simulate_flow(&finest_partition, grid, streams, bridge_correction)
            .expect("validated partition");
        partitions
            .iter()
            .map(|p| {
                if p == &finest_partition {
                    partition_sum(&sample, integrand).s_bar_pi
                } else {
                    let view = sample.restrict_to_subpartition(p).expect("nested levels");
                    partition_sum(&view, integrand).s_bar_pi
                }
            })
            .collect()
    });

    let mut level_stats = Vec::with_capacity(levels.len());
    for (j, (&n_intervals, partition)) in levels.iter().zip(&partitions).enumerate() {
        let column: Vec<f64> = per_replica.iter().map(|row| row[j]).collect();
        let est = summarize(&column)?;
        level_stats.push(RateLevel {
            n_intervals,
            mesh: partition.mesh(),
            mean_s_bar: est.mean,
            stderr: est.stderr,
        });
    }

    let proxy = level_stats.last().unwrap().mean_s_bar;
    let gap_points: Vec<(f64, f64)> = level_stats[..level_stats.len() - 1]
        .iter()
        .map(|l| (l.mesh, (l.mean_s_bar - proxy).abs()))
        .collect();
    // coupled per-replica gaps give the honest (small) error bars
    let last = levels.len() - 1;
    let gap_stderr: Vec<f64> = (0..last)
        .map(|j| {
            let diffs: Vec<f64> = per_replica.iter().map(|row| row[j] - row[last]).collect();
            summarize(&diffs).map(|e| e.stderr).unwrap_or(0.0)
        })
        .collect();

    if gap_points.iter().all(|&(_, g)| g == 0.0) {
        return Ok(RateProbe {
            fit: None,
            c: None,
            degenerate: true,
            levels: level_stats,
            gap_points,
            gap_stderr,
        });
    }
    let meshes: Vec<f64> = gap_points.iter().map(|p| p.0).collect();
    let gaps: Vec<f64> = gap_points.iter().map(|p| p.1).collect();
    let fit = loglog_slope(&meshes, &gaps)?;
    let sup = integrand.sup_bound();
    let c = if sup > 0.0 {
        Some(fit.intercept.exp() / (sup * sup))
    } else {
        None
    };
    Ok(RateProbe {
        fit: Some(fit),
        c,
        degenerate: false,
        levels: level_stats,
        gap_points,
        gap_stderr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quadrature_matches_frozen_oracle_values() {
        // scipy.integrate.quad of erf(u/(2 sqrt(t))) over [0,1]
        let cases = [
            (0.01, 0.0112338857),
            (0.1, 0.1079319248),
            (0.5, 0.4508707213),
            (1.0, 0.7201411062),
            (2.0, 0.9432098763),
        ];
        for (u, expected) in cases {
            let got = meeting_time_mean_quadrature(u).unwrap();
            assert!(
                (got - expected).abs() < 1e-6,
                "u={u}: got {got}, expected {expected}"
            );
        }
        assert_eq!(meeting_time_mean_quadrature(0.0).unwrap(), 0.0);
        assert!(meeting_time_mean_quadrature(10.0).unwrap() >= 0.9999);
        assert!(meeting_time_mean_quadrature(-1.0).is_err());
    }

    #[test]
    fn paper_formula_adds_second_term() {
        let got = paper_meeting_time_formula(0.5).unwrap();
        assert!((got - 0.7271971115).abs() < 1e-6, "got {got}");
        assert_eq!(paper_meeting_time_formula(0.0).unwrap(), 0.0);
    }

    #[test]
    fn small_u_slope_matches_expansion() {
        let grid = [0.0125, 0.025, 0.0375, 0.05];
        let s = small_u_slope(&grid).unwrap();
        assert!((s.fitted_slope - 1.1077191952).abs() < 1e-4, "{}", s.fitted_slope);
        assert!((s.paper_slope - 1.5 / std::f64::consts::PI.sqrt()).abs() < 1e-12);
        assert!((SURVIVAL_SMALL_U_SLOPE - 2.0 / std::f64::consts::PI.sqrt()).abs() < 1e-12);
        assert!(small_u_slope(&grid[..3]).is_err());
        assert!(small_u_slope(&[0.01, 0.02, 0.03, 0.06]).is_err());
        assert!(small_u_slope(&[0.0, 0.02, 0.03, 0.04]).is_err());
    }

    #[test]
    fn quadrant_oracle_frozen_values() {
        let cases = [
            (0.05, 0.05, 0.010893),
            (0.2, 0.2, 0.104002),
            (0.4, 0.4, 0.278781),
            (0.05, 0.4, 0.048181),
        ];
        for (r1, r2, expected) in cases {
            let got = quadrant_exit_mean_quadrature(r1, r2).unwrap();
            assert!(
                (got - expected).abs() < 5e-5,
                "({r1},{r2}): got {got}, expected {expected}"
            );
        }
    }

    #[test]
    fn angle_exit_validation_and_symmetry_of_inputs() {
        let grid = TimeGrid::new(100).unwrap();
        assert!(angle_exit_bound_experiment(0.0, 0.1, &grid, 100, 1).is_err());
        assert!(angle_exit_bound_experiment(0.1, -0.1, &grid, 100, 1).is_err());
        let r = angle_exit_bound_experiment(0.2, 0.3, &grid, 2000, 1).unwrap();
        assert!(r.mean_exit > 0.0 && r.mean_exit <= 1.0);
        assert!((r.ratio - r.mean_exit / 0.06).abs() < 1e-12);
    }

    #[test]
    fn tiny_start_exits_immediately() {
        let grid = TimeGrid::new(1000).unwrap();
        let r = angle_exit_bound_experiment(1e-4, 0.2, &grid, 2000, 7).unwrap();
        assert!(r.mean_exit < 0.01, "mean_exit = {}", r.mean_exit);
    }

    #[test]
    fn rate_probe_validation_and_degenerate_flag() {
        let grid = TimeGrid::new(100).unwrap();
        assert!(rate_constant_probe(1.0, &Integrand::one(), &[4, 8, 16], &grid, 10, 1, true)
            .is_err());
        assert!(
            rate_constant_probe(1.0, &Integrand::one(), &[4, 8, 6, 16], &grid, 10, 1, true)
                .is_err()
        );
        assert!(
            rate_constant_probe(1.0, &Integrand::one(), &[4, 8, 16, 24], &grid, 10, 1, true)
                .is_err()
        );
        let probe =
            rate_constant_probe(1.0, &Integrand::zero(), &[2, 4, 8, 16], &grid, 10, 1, true)
                .unwrap();
        assert!(probe.degenerate);
        assert!(probe.fit.is_none());
    }

    #[test]
    fn rate_probe_c_scales_with_sup_squared() {
        let grid = TimeGrid::new(200).unwrap();
        let levels = [2, 4, 8, 16, 32];
        let base = rate_constant_probe(
            1.0,
            &Integrand::one(),
            &levels,
            &grid,
            400,
            11,
            true,
        )
        .unwrap();
        let doubled = Integrand::new("two", 2.0, |_| 2.0).unwrap();
        let scaled = rate_constant_probe(1.0, &doubled, &levels, &grid, 400, 11, true).unwrap();
        // identical streams: S_bar scales exactly by 4, C is unchanged
        let (cb, cs) = (base.c.unwrap(), scaled.c.unwrap());
        assert!((cb - cs).abs() < 1e-10, "C base {cb} vs scaled {cs}");
        for (b, s) in base.gap_points.iter().zip(&scaled.gap_points) {
            assert!((s.1 - 4.0 * b.1).abs() < 1e-9 * (1.0 + b.1.abs()));
        }
    }

    proptest! {
        #[test]
        fn meeting_time_mean_is_monotone_and_bounded(
            u1 in 0.0f64..3.0,
            bump in 0.0f64..1.0,
        ) {
            let a = meeting_time_mean_quadrature(u1).unwrap();
            let b = meeting_time_mean_quadrature(u1 + bump).unwrap();
            prop_assert!(a <= b + 1e-9);
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!((0.0..=1.0).contains(&b));
        }
    }
}
