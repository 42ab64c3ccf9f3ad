//! Monte Carlo estimation plumbing shared by all experiments.
//!
//! Replica `i` of an estimate always uses stream id `i` (or a documented
//! function of `i`), and reductions run in replica-index order over the
//! collected values, so results are bit-identical for any worker count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gauss_rng::{make_stream, GaussianStream};

/// Neumaier-compensated summation; error stays `O(eps)` per accumulated
/// magnitude instead of growing with the term count.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    compensation: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// Mean, standard error and 95% interval of a replica batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorResult {
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
    pub ci95: (f64, f64),
}

/// Summary statistics of `values`; needs at least two replicas.
pub fn summarize(values: &[f64]) -> Result<EstimatorResult> {
    let n = values.len();
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 replicas, got {n}")));
    }
    let nf = n as f64;
    let mut sum = KahanSum::new();
    for &v in values {
        sum.add(v);
    }
    let mean = sum.value() / nf;
    let mut ss = KahanSum::new();
    for &v in values {
        let d = v - mean;
        ss.add(d * d);
    }
    let var = ss.value() / (nf - 1.0);
    let stderr = (var / nf).sqrt();
    Ok(EstimatorResult {
        n,
        mean,
        stderr,
        ci95: (mean - 1.96 * stderr, mean + 1.96 * stderr),
    })
}

/// Monte Carlo estimate over `n` replicas; replica `i` draws from the
/// stream `(seed, i)`.
pub fn mc_estimate<F>(n: usize, seed: u64, sampler: F) -> Result<EstimatorResult>
where
    F: Fn(&mut GaussianStream) -> f64 + Sync + Send,
{
    let values = mc_collect(n, |i| {
        let mut stream = make_stream(seed, i as u64);
        sampler(&mut stream)
    });
    summarize(&values)
}

/// Estimate from an arbitrary per-replica map (stream layout chosen by the
/// caller, e.g. [`crate::flow_sim::particle_streams`]).
pub fn mc_estimate_indexed<F>(n: usize, replica: F) -> Result<EstimatorResult>
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    summarize(&mc_collect(n, replica))
}

/// Ordered parallel map over replica indices.
pub fn mc_collect<T, F>(n: usize, replica: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(replica).collect()
}

/// Outcome of one orthogonality z-test.
#[derive(Debug, Clone, Copy)]
pub struct OrthogonalityResult {
    /// `mean(product) / stderr(product)`, `None` for a degenerate statistic.
    pub z: Option<f64>,
    pub mean_product: f64,
    pub stderr: f64,
    pub degenerate: bool,
}

/// Z-scores of `E[increment * statistic] = 0` for every statistic column.
///
/// A statistic whose product with the increments has zero sample variance
/// is flagged degenerate and excluded from gating.
pub fn orthogonality_test(
    increments: &[f64],
    statistics: &[Vec<f64>],
) -> Result<Vec<OrthogonalityResult>> {
    if increments.len() < 100 {
        return Err(Error::invalid(format!(
            "orthogonality test needs at least 100 replicas, got {}",
            increments.len()
        )));
    }
    let mut out = Vec::with_capacity(statistics.len());
    for column in statistics {
        if column.len() != increments.len() {
            return Err(Error::invalid(
                "statistic column length does not match replica count",
            ));
        }
        let products: Vec<f64> = increments
            .iter()
            .zip(column)
            .map(|(d, g)| d * g)
            .collect();
        let est = summarize(&products)?;
        if est.stderr == 0.0 {
            out.push(OrthogonalityResult {
                z: None,
                mean_product: est.mean,
                stderr: 0.0,
                degenerate: true,
            });
        } else {
            out.push(OrthogonalityResult {
                z: Some(est.mean / est.stderr),
                mean_product: est.mean,
                stderr: est.stderr,
                degenerate: false,
            });
        }
    }
    Ok(out)
}

/// Least-squares fit in log-log coordinates.
#[derive(Debug, Clone, Copy)]
pub struct RateFitResult {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

/// Fit `log(gap) ~ slope * log(mesh) + intercept`.
pub fn loglog_slope(meshes: &[f64], gaps: &[f64]) -> Result<RateFitResult> {
    if meshes.len() != gaps.len() || meshes.len() < 3 {
        return Err(Error::invalid(
            "log-log fit needs equally many meshes and gaps, at least 3",
        ));
    }
    if meshes.iter().chain(gaps).any(|&v| !(v > 0.0)) {
        return Err(Error::invalid("log-log fit needs strictly positive entries"));
    }
    let xs: Vec<f64> = meshes.iter().map(|m| m.ln()).collect();
    let ys: Vec<f64> = gaps.iter().map(|g| g.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("log-log fit needs distinct meshes"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let e = y - (slope * x + intercept);
            e * e
        })
        .sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(RateFitResult {
        slope,
        intercept,
        r_squared,
        n_points: xs.len(),
    })
}
