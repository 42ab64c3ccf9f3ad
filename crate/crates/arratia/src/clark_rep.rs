//! Pathwise verification of Clark-type representations.
//!
//! A functional of the flow is reconstructed as its mean plus stopped
//! left-point integrals of adapted integrands, one per particle, stopped
//! at the first meeting with any lower-indexed particle (`tau_0` is the
//! horizon). Integrands receive a [`PathPrefix`] that exposes no data past
//! the current time index, so adaptedness holds by construction and a
//! violation surfaces as a contract error rather than a wrong number.
//!
//! The source proves existence of the integrands without constructing
//! them, so the primary mode here consumes families with analytically
//! known representations; least-squares recovery of an integrand is a
//! separate, clearly-labelled numerical mode.

use std::cell::Cell;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow_sim::{CoalescingPaths, FlowSample};
use crate::mc_stats::{mc_collect, summarize, KahanSum};

/// A square-integrable functional of one flow sample.
#[derive(Clone)]
pub struct Functional {
    name: String,
    eval: Arc<dyn Fn(&FlowSample) -> f64 + Send + Sync>,
}

impl fmt::Debug for Functional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Functional").field("name", &self.name).finish()
    }
}

impl Functional {
    pub fn new(
        name: impl Into<String>,
        eval: impl Fn(&FlowSample) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Functional {
            name: name.into(),
            eval: Arc::new(eval),
        }
    }

    pub fn eval(&self, sample: &FlowSample) -> f64 {
        (self.eval)(sample)
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}

/// Adapted window onto a sample: positions and cluster labels are readable
/// only up to the current time index. Reading past it trips the violation
/// flag, which the caller converts into a contract error.
pub struct PathPrefix<'a> {
    sample: &'a FlowSample,
    now: Cell<usize>,
    violated: Cell<bool>,
}

impl<'a> PathPrefix<'a> {
    fn new(sample: &'a FlowSample) -> Self {
        PathPrefix {
            sample,
            now: Cell::new(0),
            violated: Cell::new(false),
        }
    }

    fn set_now(&self, index: usize) {
        self.now.set(index);
    }

    fn is_violated(&self) -> bool {
        self.violated.get()
    }

    /// Current time index; indices `0..=time_index()` are readable.
    pub fn time_index(&self) -> usize {
        self.now.get()
    }

    pub fn time(&self) -> f64 {
        self.now.get() as f64 * self.sample.dt()
    }

    pub fn dt(&self) -> f64 {
        self.sample.dt()
    }

    pub fn n_particles(&self) -> usize {
        self.sample.n_particles()
    }

    pub fn start_point(&self, k: usize) -> f64 {
        self.sample.start_point(k)
    }

    pub fn position(&self, k: usize, index: usize) -> f64 {
        if index > self.now.get() {
            self.violated.set(true);
            return f64::NAN;
        }
        self.sample.position(k, index)
    }

    pub fn current_position(&self, k: usize) -> f64 {
        self.position(k, self.now.get())
    }

    pub fn same_cluster(&self, j: usize, k: usize, index: usize) -> bool {
        if index > self.now.get() {
            self.violated.set(true);
            return false;
        }
        self.sample.same_cluster(j, k, index)
    }

    /// Whether particles `j` and `k` have met by the current index.
    pub fn met(&self, j: usize, k: usize) -> bool {
        self.same_cluster(j, k, self.now.get())
    }
}

/// One adapted integrand, evaluated at the prefix's current index.
pub type AdaptedIntegrand = Arc<dyn Fn(&PathPrefix<'_>) -> f64 + Send + Sync>;

/// A functional's representation data: one adapted integrand per particle,
/// integrated up to the particle's predecessor meeting time.
#[derive(Clone)]
pub struct IntegrandFamily {
    integrands: Vec<AdaptedIntegrand>,
}

impl fmt::Debug for IntegrandFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IntegrandFamily")
            .field("n_particles", &self.integrands.len())
            .finish()
    }
}

impl IntegrandFamily {
    pub fn new(integrands: Vec<AdaptedIntegrand>) -> Self {
        IntegrandFamily { integrands }
    }

    pub fn n_particles(&self) -> usize {
        self.integrands.len()
    }

    /// All integrands identically zero (represents a constant).
    pub fn zero(n_particles: usize) -> Self {
        IntegrandFamily::new((0..n_particles).map(|_| -> AdaptedIntegrand { Arc::new(|_| 0.0) }).collect())
    }

    /// Single particle, `f ≡ 1`: represents the endpoint `x(u, 1)`.
    pub fn single_particle_identity() -> Self {
        IntegrandFamily::new(vec![Arc::new(|_: &PathPrefix| 1.0)])
    }

    /// Two particles `u_1 < u_2`, representing `alpha = x(u_2, 1)`:
    /// `f` for the upper particle is 1 up to the meeting, `f` for the
    /// lower is the indicator that the meeting has happened.
    pub fn two_particle_endpoint() -> Self {
        IntegrandFamily::new(vec![
            Arc::new(|p: &PathPrefix| if p.met(0, 1) { 1.0 } else { 0.0 }),
            Arc::new(|_: &PathPrefix| 1.0),
        ])
    }
}

/// Pathwise reconstruction report; also the JSON report schema.
#[derive(Debug, Clone, Serialize)]
pub struct RepresentationReport {
    pub functional: String,
    pub n_paths: usize,
    pub max_residual: f64,
    pub mean_abs_residual: f64,
    pub mean_residual: f64,
    pub energy_lhs: f64,
    pub energy_rhs: f64,
    pub energy_lhs_se: f64,
    pub energy_rhs_se: f64,
    pub z_score: f64,
    /// Mean `E int f_k^2 dt` per particle.
    pub per_k: Vec<f64>,
}

struct ReplicaOutcome {
    residual: f64,
    alpha: f64,
    energies: Vec<f64>,
}

fn replica_outcome(
    sample: &FlowSample,
    functional: &Functional,
    family: &IntegrandFamily,
    mean: f64,
) -> Result<ReplicaOutcome> {
    let n = sample.n_particles();
    if family.integrands.len() != n {
        return Err(Error::invalid(format!(
            "family has {} integrands for {n} particles",
            family.integrands.len()
        )));
    }
    let dt = sample.dt();
    let mut buf = Vec::new();
    let mut recon = KahanSum::new();
    recon.add(mean);
    let mut energies = Vec::with_capacity(n);
    let prefix = PathPrefix::new(sample);
    for (k, f) in family.integrands.iter().enumerate() {
        let stop = sample.first_meeting_index_with_any_predecessor(k)?;
        sample.fill_path(k, stop, &mut buf);
        let mut integral = KahanSum::new();
        let mut energy = KahanSum::new();
        for i in 0..stop {
            prefix.set_now(i);
            let v = f(&prefix);
            if prefix.is_violated() {
                return Err(Error::ContractViolation(format!(
                    "integrand for particle {k} read past time index {i}"
                )));
            }
            integral.add(v * (buf[i + 1] - buf[i]));
            energy.add(v * v * dt);
        }
        recon.add(integral.value());
        energies.push(energy.value());
    }
    let alpha = functional.eval(sample);
    Ok(ReplicaOutcome {
        residual: alpha - recon.value(),
        alpha,
        energies,
    })
}

/// Reconstruct `functional` pathwise over `n_paths` samples and report the
/// residuals together with the energy identity sides.
///
/// `sampler(i)` must return the `i`-th replica; `mean` is the analytic (or
/// separately estimated) expectation used as the representation constant.
pub fn verify_representation<S>(
    n_paths: usize,
    sampler: S,
    functional: &Functional,
    family: &IntegrandFamily,
    mean: f64,
) -> Result<RepresentationReport>
where
    S: Fn(usize) -> FlowSample + Sync,
{
    if n_paths < 2 {
        return Err(Error::invalid("representation check needs at least 2 paths"));
    }
    let outcomes: Vec<Result<ReplicaOutcome>> = mc_collect(n_paths, |i| {
        let sample = sampler(i);
        replica_outcome(&sample, functional, family, mean)
    });
    let mut residuals = Vec::with_capacity(n_paths);
    let mut alphas_sq = Vec::with_capacity(n_paths);
    let mut alphas = Vec::with_capacity(n_paths);
    let mut totals = Vec::with_capacity(n_paths);
    let mut per_k_sums: Vec<KahanSum> = Vec::new();
    for outcome in outcomes {
        let o = outcome?;
        residuals.push(o.residual);
        alphas.push(o.alpha);
        alphas_sq.push(o.alpha * o.alpha);
        totals.push(o.energies.iter().sum::<f64>());
        if per_k_sums.is_empty() {
            per_k_sums = vec![KahanSum::new(); o.energies.len()];
        }
        for (s, e) in per_k_sums.iter_mut().zip(&o.energies) {
            s.add(*e);
        }
    }
    let alpha_est = summarize(&alphas)?;
    let alpha_sq_est = summarize(&alphas_sq)?;
    let total_est = summarize(&totals)?;
    let energy_lhs = alpha_sq_est.mean;
    let energy_rhs = alpha_est.mean * alpha_est.mean + total_est.mean;
    let energy_rhs_se = ((2.0 * alpha_est.mean * alpha_est.stderr).powi(2)
        + total_est.stderr * total_est.stderr)
        .sqrt();
    let combined = (alpha_sq_est.stderr.powi(2) + energy_rhs_se.powi(2)).sqrt();
    let z_score = if combined > 0.0 {
        (energy_lhs - energy_rhs) / combined
    } else {
        0.0
    };
    let mean_residual = residuals.iter().sum::<f64>() / n_paths as f64;
    Ok(RepresentationReport {
        functional: functional.name().to_string(),
        n_paths,
        max_residual: residuals.iter().fold(0.0, |m, r| m.max(r.abs())),
        mean_abs_residual: residuals.iter().map(|r| r.abs()).sum::<f64>() / n_paths as f64,
        mean_residual,
        energy_lhs,
        energy_rhs,
        energy_lhs_se: alpha_sq_est.stderr,
        energy_rhs_se,
        z_score,
        per_k: per_k_sums.iter().map(|s| s.value() / n_paths as f64).collect(),
    })
}

/// The two sides of the energy identity with a z-score of their gap.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EnergyIdentity {
    pub lhs: f64,
    pub rhs: f64,
    pub lhs_se: f64,
    pub rhs_se: f64,
    pub z_score: f64,
}

/// Estimate both sides of `E a^2 = (E a)^2 + sum_k E int f_k^2 dt`.
pub fn energy_identity_check<S>(
    n_paths: usize,
    sampler: S,
    functional: &Functional,
    family: &IntegrandFamily,
    mean: f64,
) -> Result<EnergyIdentity>
where
    S: Fn(usize) -> FlowSample + Sync,
{
    let report = verify_representation(n_paths, sampler, functional, family, mean)?;
    Ok(EnergyIdentity {
        lhs: report.energy_lhs,
        rhs: report.energy_rhs,
        lhs_se: report.energy_lhs_se,
        rhs_se: report.energy_rhs_se,
        z_score: report.z_score,
    })
}

/// Least-squares estimate of an integrand value from replica data.
#[derive(Debug, Clone)]
pub struct RegressionEstimate {
    pub coefficients: Vec<f64>,
    pub stderrs: Vec<f64>,
    pub condition: f64,
    pub n_paths: usize,
}

/// Project `alpha * (increment of particle k at time_index) / dt` onto
/// `basis` evaluated on the path prefix: a numerical recovery of the
/// integrand whose existence the representation theorem asserts.
pub fn estimate_integrand_regression<S>(
    n_paths: usize,
    sampler: S,
    functional: &Functional,
    k: usize,
    time_index: usize,
    basis: &[AdaptedIntegrand],
) -> Result<RegressionEstimate>
where
    S: Fn(usize) -> FlowSample + Sync,
{
    let p = basis.len();
    if p == 0 {
        return Err(Error::invalid("regression needs a non-empty basis"));
    }
    if n_paths <= p + 1 {
        return Err(Error::invalid("regression needs more replicas than basis functions"));
    }
    let rows: Vec<Result<(Vec<f64>, f64)>> = mc_collect(n_paths, |i| {
        let sample = sampler(i);
        if k >= sample.n_particles() || time_index + 1 > sample.n_steps() {
            return Err(Error::invalid("regression particle or time index out of range"));
        }
        let prefix = PathPrefix::new(&sample);
        prefix.set_now(time_index);
        let mut row = Vec::with_capacity(p);
        for b in basis {
            let v = b(&prefix);
            if prefix.is_violated() {
                return Err(Error::ContractViolation(
                    "regression basis read past the prefix".into(),
                ));
            }
            row.push(v);
        }
        let dx = sample.position(k, time_index + 1) - sample.position(k, time_index);
        let y = functional.eval(&sample) * dx / sample.dt();
        Ok((row, y))
    });

    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xty = DVector::<f64>::zeros(p);
    let mut yty = 0.0;
    let mut n_used = 0usize;
    for row in rows {
        let (x, y) = row?;
        for a in 0..p {
            for b in 0..p {
                xtx[(a, b)] += x[a] * x[b];
            }
            xty[a] += x[a] * y;
        }
        yty += y * y;
        n_used += 1;
    }
    let svd = xtx.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(smin > smax * 1e-12) {
        return Err(Error::DegenerateRegression { condition });
    }
    let coeffs = svd.solve(&xty, 0.0).map_err(|_| Error::DegenerateRegression { condition })?;
    let rss = (yty - coeffs.dot(&xty)).max(0.0);
    let sigma2 = rss / (n_used - p) as f64;
    let xtx_inv = xtx
        .try_inverse()
        .ok_or(Error::DegenerateRegression { condition })?;
    let stderrs = (0..p).map(|j| (sigma2 * xtx_inv[(j, j)]).sqrt()).collect();
    Ok(RegressionEstimate {
        coefficients: coeffs.iter().copied().collect(),
        stderrs,
        condition,
        n_paths: n_used,
    })
}

/// Supplier of the partial sums `E(alpha | first N+1 sequence particles)`.
#[derive(Clone)]
pub enum ConditionalMeans {
    /// Closed form, evaluated on the sample for a given truncation.
    Analytic(Arc<dyn Fn(&FlowSample, usize) -> f64 + Send + Sync>),
    /// Nested least-squares projection of `alpha` onto `{1}` united with
    /// one feature per sequence particle `0..=N`. In-sample residuals are
    /// non-increasing in `N` by the projection property.
    NestedRegression {
        feature: Arc<dyn Fn(&FlowSample, usize) -> f64 + Send + Sync>,
    },
}

impl fmt::Debug for ConditionalMeans {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConditionalMeans::Analytic(_) => f.write_str("ConditionalMeans::Analytic"),
            ConditionalMeans::NestedRegression { .. } => {
                f.write_str("ConditionalMeans::NestedRegression")
            }
        }
    }
}

/// One truncation level of the series representation.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SeriesPoint {
    pub truncation: usize,
    pub l2_error: f64,
    pub stderr: f64,
}

/// Truncation study of the series representation.
#[derive(Debug, Clone, Serialize)]
pub struct SeriesTruncation {
    pub points: Vec<SeriesPoint>,
    /// For consecutive truncations, z-scores of `E[r_{N+1}^2 - r_N^2]`;
    /// all well below `+4` when the errors are non-increasing.
    pub pairwise_z: Vec<f64>,
}

/// L2 errors of the partial sums of the series representation along a
/// dense insertion sequence, one per requested truncation.
pub fn truncated_series_representation<S>(
    n_paths: usize,
    sampler: S,
    functional: &Functional,
    means: &ConditionalMeans,
    truncations: &[usize],
) -> Result<SeriesTruncation>
where
    S: Fn(usize) -> FlowSample + Sync,
{
    if truncations.is_empty() || truncations.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("truncations must be non-empty and increasing"));
    }
    if n_paths < 2 {
        return Err(Error::invalid("series study needs at least 2 paths"));
    }
    let residual_sq: Vec<Vec<f64>> = match means {
        ConditionalMeans::Analytic(partial) => mc_collect(n_paths, |i| {
            let sample = sampler(i);
            let alpha = functional.eval(&sample);
            truncations
                .iter()
                .map(|&n| {
                    let r = alpha - partial(&sample, n);
                    r * r
                })
                .collect()
        }),
        ConditionalMeans::NestedRegression { feature } => {
            let max_n = *truncations.last().unwrap();
            let data: Vec<(Vec<f64>, f64)> = mc_collect(n_paths, |i| {
                let sample = sampler(i);
                let mut row = Vec::with_capacity(max_n + 2);
                row.push(1.0);
                for j in 0..=max_n {
                    row.push(feature(&sample, j));
                }
                (row, functional.eval(&sample))
            });
            let y = DVector::from_iterator(n_paths, data.iter().map(|d| d.1));
            let per_truncation: Vec<Vec<f64>> = truncations
                .iter()
                .map(|&n| {
                    let p = n + 2;
                    let x = DMatrix::from_fn(n_paths, p, |r, c| data[r].0[c]);
                    let fitted = &x
                        * x.clone()
                            .svd(true, true)
                            .solve(&y, 1e-12)
                            .expect("svd solve");
                    (0..n_paths)
                        .map(|r| (y[r] - fitted[r]).powi(2))
                        .collect::<Vec<f64>>()
                })
                .collect();
            (0..n_paths)
                .map(|r| per_truncation.iter().map(|col| col[r]).collect())
                .collect()
        }
    };

    let mut points = Vec::with_capacity(truncations.len());
    for (j, &n) in truncations.iter().enumerate() {
        let column: Vec<f64> = residual_sq.iter().map(|row| row[j]).collect();
        let est = summarize(&column)?;
        points.push(SeriesPoint {
            truncation: n,
            l2_error: est.mean,
            stderr: est.stderr,
        });
    }
    let mut pairwise_z = Vec::new();
    for j in 0..truncations.len() - 1 {
        let diffs: Vec<f64> = residual_sq.iter().map(|row| row[j + 1] - row[j]).collect();
        let est = summarize(&diffs)?;
        pairwise_z.push(if est.stderr > 0.0 {
            est.mean / est.stderr
        } else if est.mean == 0.0 {
            0.0
        } else {
            f64::INFINITY * est.mean.signum()
        });
    }
    Ok(SeriesTruncation { points, pairwise_z })
}

/// Shared evaluator for [`stopped_increment_series`]: the partial sum
/// through sequence index `upto` (inclusive).
fn series_partial(sample: &FlowSample, sequence: &[usize], coefficients: &[f64], upto: usize) -> f64 {
    let mut sum = KahanSum::new();
    sum.add(coefficients[0]);
    let last = upto.min(coefficients.len().saturating_sub(2));
    for k in 0..=last {
        let spatial = sequence[k];
        let stop = if k == 0 {
            sample.n_steps()
        } else {
            sample
                .first_meeting_index_with_set(spatial, &sequence[..k])
                .expect("valid sequence indices")
        };
        sum.add(coefficients[k + 1] * (sample.position(spatial, stop) - sample.start_point(spatial)));
    }
    sum.value()
}

/// Test functional `alpha = c_0 + sum_k c_{k+1} (x(u_k, tau_k) - u_k)`
/// over the insertion sequence, together with its exact conditional means:
/// the same sum truncated at `N`. The support is `coefficients.len() - 1`
/// sequence particles, so the L2 error vanishes identically once the
/// truncation covers it.
pub fn stopped_increment_series(
    sequence: Vec<usize>,
    coefficients: Vec<f64>,
) -> Result<(Functional, ConditionalMeans)> {
    if coefficients.len() < 2 {
        return Err(Error::invalid("series functional needs c_0 and at least one term"));
    }
    if coefficients.len() > sequence.len() + 1 {
        return Err(Error::invalid("more coefficients than sequence particles"));
    }
    let seq = Arc::new(sequence);
    let coeffs = Arc::new(coefficients);
    let functional = {
        let seq = Arc::clone(&seq);
        let coeffs = Arc::clone(&coeffs);
        Functional::new("stopped-increment-series", move |sample| {
            series_partial(sample, &seq, &coeffs, seq.len() - 1)
        })
    };
    let means = ConditionalMeans::Analytic(Arc::new(move |sample: &FlowSample, n: usize| {
        series_partial(sample, &seq, &coeffs, n)
    }));
    Ok((functional, means))
}
