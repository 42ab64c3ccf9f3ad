//! Monte Carlo cross-checks of the simulation against independent
//! analytic and quadrature oracles, at desk scale.

use arratia::clark_rep::{verify_representation, AdaptedIntegrand, Functional, IntegrandFamily};
use arratia::flow_sim::{
    particle_streams, simulate_flow, simulate_pair_meeting_index, CoalescingPaths, FlowSample,
    Partition, TimeGrid, PARTICLE_STREAM_BITS,
};
use arratia::gauss_rng::GaussianStream;
use arratia::mc_stats::{mc_collect, summarize};
use arratia::meeting_analytics::{
    angle_exit_bound_experiment, meeting_time_mean_quadrature, quadrant_exit_mean_quadrature,
    small_u_slope,
};
use arratia::stochastic_integrals::{
    ito_integral_stopped, partition_sum, refinement_increment, spatial_integral_on, Integrand,
};
use std::sync::Arc;

/// Two-sample Kolmogorov-Smirnov statistic.
fn ks_two_sample(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    d
}

fn pair_meeting_times(gap: f64, n_steps: usize, n_paths: usize, seed: u64) -> Vec<f64> {
    let grid = TimeGrid::new(n_steps).unwrap();
    let dt = grid.dt();
    mc_collect(n_paths, |replica| {
        let base = (replica as u64) << PARTICLE_STREAM_BITS;
        let mut left = GaussianStream::new(seed, base);
        let mut right = GaussianStream::new(seed, base | 1);
        simulate_pair_meeting_index(gap, &grid, &mut left, &mut right, true).unwrap() as f64 * dt
    })
}

#[test]
fn meeting_probability_matches_reflection_principle() {
    // two particles a gap 1 apart: P(tau < 1) = 2(1 - Phi(1/sqrt(2)))
    let n_paths = 40_000;
    let times = pair_meeting_times(1.0, 10_000, n_paths, 7001);
    let p_hat = times.iter().filter(|&&t| t < 1.0).count() as f64 / n_paths as f64;
    let expected = 0.4795001221869535;
    let se = (expected * (1.0 - expected) / n_paths as f64).sqrt();
    assert!(
        (p_hat - expected).abs() < 4.0 * se,
        "P(tau<1) = {p_hat}, expected {expected} +- {se}"
    );
}

#[test]
fn small_gap_meeting_mean_matches_quadrature() {
    let times = pair_meeting_times(0.01, 10_000, 100_000, 7003);
    let est = summarize(&times).unwrap();
    let quad = meeting_time_mean_quadrature(0.01).unwrap();
    let tol = f64::max(0.02 * quad, 4.0 * est.stderr);
    assert!(
        (est.mean - quad).abs() < tol,
        "mean {} vs quadrature {quad} (tol {tol})",
        est.mean
    );
}

#[test]
fn one_dimensional_marginals_are_brownian() {
    // single particle: mean u and variance t at t in {0.25, 0.5, 1}
    let partition = Partition::new(vec![0.7]).unwrap();
    let grid = TimeGrid::new(400).unwrap();
    let n_paths = 30_000;
    let rows: Vec<[f64; 3]> = mc_collect(n_paths, |replica| {
        let streams = particle_streams(7005, replica, 1).unwrap();
        let s = simulate_flow(&partition, &grid, streams, true).unwrap();
        [s.position(0, 100), s.position(0, 200), s.position(0, 400)]
    });
    for (j, t) in [0.25, 0.5, 1.0].iter().enumerate() {
        let column: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        let est = summarize(&column).unwrap();
        assert!(
            (est.mean - 0.7).abs() < 4.0 * est.stderr,
            "mean at t={t}: {}",
            est.mean
        );
        let var = column
            .iter()
            .map(|x| (x - est.mean) * (x - est.mean))
            .sum::<f64>()
            / (n_paths as f64 - 1.0);
        let se_var = var * (2.0 / n_paths as f64).sqrt();
        assert!((var - t).abs() < 4.0 * se_var, "var at t={t}: {var}");
    }
}

#[test]
fn refinement_leaves_marginal_law_unchanged() {
    // tau(U) for {0, U} simulated alone vs restricted from {0, U/2, U}
    let u = 0.5;
    let n_steps = 1000;
    let n = 20_000;
    let alone = pair_meeting_times(u, n_steps, n, 7007);

    let partition = Partition::new(vec![0.0, u / 2.0, u]).unwrap();
    let ends = Partition::new(vec![0.0, u]).unwrap();
    let grid = TimeGrid::new(n_steps).unwrap();
    let dt = grid.dt();
    let restricted: Vec<f64> = mc_collect(n, |replica| {
        let streams = particle_streams(7009, replica, 3).unwrap();
        let s = simulate_flow(&partition, &grid, streams, true).unwrap();
        let view = s.restrict_to_subpartition(&ends).unwrap();
        view.left_meeting_index(1) as f64 * dt
    });

    let d = ks_two_sample(alone, restricted);
    // c(1e-3) * sqrt((n+m)/(n m))
    let threshold = (f64::ln(2.0 / 1e-3) / 2.0).sqrt() * (2.0 / n as f64).sqrt();
    assert!(d < threshold, "KS statistic {d} >= {threshold}");
}

#[test]
fn full_horizon_ito_integral_moments() {
    // a == 1 along a Brownian path: mean 0, variance = horizon
    let partition = Partition::new(vec![0.2]).unwrap();
    let grid = TimeGrid::new(1000).unwrap();
    let n_paths = 30_000;
    let one = Integrand::one();
    let values: Vec<f64> = mc_collect(n_paths, |replica| {
        let streams = particle_streams(7011, replica, 1).unwrap();
        let s = simulate_flow(&partition, &grid, streams, true).unwrap();
        let mut buf = Vec::new();
        s.fill_path(0, s.n_steps(), &mut buf);
        ito_integral_stopped(&buf, &one, s.n_steps()).unwrap()
    });
    let est = summarize(&values).unwrap();
    assert!(est.mean.abs() < 4.0 * est.stderr, "mean {}", est.mean);
    let var = values
        .iter()
        .map(|v| (v - est.mean) * (v - est.mean))
        .sum::<f64>()
        / (n_paths as f64 - 1.0);
    let se_var = var * (2.0 / n_paths as f64).sqrt();
    assert!((var - 1.0).abs() < 4.0 * se_var, "var {var}");
}

#[test]
fn isometry_holds_on_three_point_partition() {
    let partition = Partition::new(vec![0.0, 0.5, 1.0]).unwrap();
    let grid = TimeGrid::new(2000).unwrap();
    let one = Integrand::one();
    let rows: Vec<(f64, f64)> = mc_collect(30_000, |replica| {
        let streams = particle_streams(7013, replica, 3).unwrap();
        let s = simulate_flow(&partition, &grid, streams, true).unwrap();
        let sums = partition_sum(&s, &one);
        (sums.s_pi, sums.s_bar_pi)
    });
    let s: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let gap: Vec<f64> = rows.iter().map(|r| r.0 * r.0 - r.1).collect();
    let s_est = summarize(&s).unwrap();
    let gap_est = summarize(&gap).unwrap();
    assert!(s_est.mean.abs() < 4.0 * s_est.stderr, "E S = {}", s_est.mean);
    assert!(
        gap_est.mean.abs() < 4.0 * gap_est.stderr,
        "E S^2 - E Sbar = {}",
        gap_est.mean
    );
}

#[test]
fn coupled_nested_sums_satisfy_second_moment_identity() {
    // E[(S_m - S_n)^2] = E Sbar_m - E Sbar_n on coupled nested partitions.
    // The merge-step increments leave a cross-level residue that dies out
    // superlinearly in dt, so this runs on the default grid.
    let schedule: Vec<Partition> = (1u32..=6)
        .map(|d| Partition::dyadic(1.0, d).unwrap())
        .collect();
    let grid = TimeGrid::new(10_000).unwrap();
    let one = Integrand::one();
    let finest = schedule.last().unwrap().clone();
    let rows: Vec<Vec<(f64, f64)>> = mc_collect(5000, |replica| {
        let streams = particle_streams(7015, replica, finest.n_particles()).unwrap();
        let s = simulate_flow(&finest, &grid, streams, true).unwrap();
        let est = spatial_integral_on(&s, &schedule, &one).unwrap();
        est.trace.iter().map(|l| (l.s_pi, l.s_bar_pi)).collect()
    });
    for (coarse, fine) in [(0usize, 2usize), (2, 5), (4, 5), (0, 5)] {
        let stat: Vec<f64> = rows
            .iter()
            .map(|r| {
                let d = r[fine].0 - r[coarse].0;
                d * d - (r[fine].1 - r[coarse].1)
            })
            .collect();
        let est = summarize(&stat).unwrap();
        let z = if est.stderr > 0.0 {
            (est.mean / est.stderr).abs()
        } else {
            0.0
        };
        assert!(z <= 4.0, "levels ({coarse},{fine}): z = {z}");
    }
}

#[test]
fn refinement_increment_mean_respects_angle_bound() {
    // mean S_bar increment from one midpoint <= C * (gap products), with C
    // the largest quadrant-exit ratio over the default start grid
    let coarse = Partition::new(vec![0.0, 0.5, 1.0]).unwrap();
    let fine = Partition::new(vec![0.0, 0.25, 0.5, 1.0]).unwrap();
    let grid = TimeGrid::new(2000).unwrap();
    let one = Integrand::one();
    let incs: Vec<f64> = mc_collect(10_000, |replica| {
        let streams = particle_streams(7017, replica, 4).unwrap();
        let s = simulate_flow(&fine, &grid, streams, true).unwrap();
        refinement_increment(&s, &coarse, 0.25, &one).unwrap()
    });
    let est = summarize(&incs).unwrap();
    let mut c_max = 0.0f64;
    for r1 in [0.05, 0.1, 0.2, 0.4] {
        for r2 in [0.05, 0.1, 0.2, 0.4] {
            let ratio = quadrant_exit_mean_quadrature(r1, r2).unwrap() / (r1 * r2);
            c_max = c_max.max(ratio);
        }
    }
    let bound = c_max * (0.5 - 0.25) * (0.25 - 0.0);
    assert!(
        est.mean + 4.0 * est.stderr <= bound,
        "mean increment {} exceeds bound {bound}",
        est.mean
    );
}

#[test]
fn quadratic_sum_mean_stays_below_slope_bound() {
    // E Sbar <= fitted_slope * U * sup a^2, with 10% headroom
    let partition = Partition::dyadic(1.0, 3).unwrap();
    let grid = TimeGrid::new(2000).unwrap();
    let one = Integrand::one();
    let values: Vec<f64> = mc_collect(5000, |replica| {
        let streams = particle_streams(7019, replica, 9).unwrap();
        let s = simulate_flow(&partition, &grid, streams, true).unwrap();
        partition_sum(&s, &one).s_bar_pi
    });
    let est = summarize(&values).unwrap();
    let slope = small_u_slope(&[0.0125, 0.025, 0.0375, 0.05])
        .unwrap()
        .fitted_slope;
    let bound = slope * 1.0 * 1.0 * 1.1;
    assert!(
        est.mean <= bound,
        "E Sbar = {} exceeds {bound}",
        est.mean
    );
}

#[test]
fn angle_exit_monte_carlo_matches_product_oracle() {
    let grid = TimeGrid::new(10_000).unwrap();
    for (r1, r2, n_paths, seed) in [(0.05, 0.05, 100_000, 7021u64), (0.2, 0.2, 30_000, 7023)] {
        let result = angle_exit_bound_experiment(r1, r2, &grid, n_paths, seed).unwrap();
        let oracle = quadrant_exit_mean_quadrature(r1, r2).unwrap();
        let tol = f64::max(0.02 * oracle, 4.0 * result.stderr);
        assert!(
            (result.mean_exit - oracle).abs() < tol,
            "({r1},{r2}): mc {} vs oracle {oracle}",
            result.mean_exit
        );
    }
}

#[test]
fn angle_exit_ratio_is_stable_and_symmetric() {
    let grid = TimeGrid::new(10_000).unwrap();
    let small = angle_exit_bound_experiment(0.05, 0.05, &grid, 100_000, 7025).unwrap();
    let large = angle_exit_bound_experiment(0.2, 0.2, &grid, 30_000, 7027).unwrap();
    let factor = small.ratio / large.ratio;
    assert!(
        factor < 3.0 && factor > 1.0 / 3.0,
        "ratio spread {factor} outside factor 3"
    );

    let ab = angle_exit_bound_experiment(0.1, 0.3, &grid, 30_000, 7029).unwrap();
    let ba = angle_exit_bound_experiment(0.3, 0.1, &grid, 30_000, 7031).unwrap();
    let combined = (ab.stderr.powi(2) + ba.stderr.powi(2)).sqrt();
    assert!(
        (ab.mean_exit - ba.mean_exit).abs() <= 4.0 * combined,
        "exchanging starts moved the mean: {} vs {}",
        ab.mean_exit,
        ba.mean_exit
    );
}

#[test]
fn distinct_stopped_integrals_are_uncorrelated() {
    // the two stopped integrals of the two-particle family
    let partition = Partition::new(vec![0.0, 0.5]).unwrap();
    let grid = TimeGrid::new(2000).unwrap();
    let one = Integrand::one();
    let pairs: Vec<(f64, f64)> = mc_collect(10_000, |replica| {
        let streams = particle_streams(7033, replica, 2).unwrap();
        let s = simulate_flow(&partition, &grid, streams, true).unwrap();
        let stop = s.left_meeting_index(1);
        let mut buf = Vec::new();
        s.fill_path(1, stop, &mut buf);
        let upper = ito_integral_stopped(&buf, &one, stop).unwrap();
        s.fill_path(0, s.n_steps(), &mut buf);
        let tail: f64 = (stop..s.n_steps()).map(|i| buf[i + 1] - buf[i]).sum();
        (upper, tail)
    });
    let products: Vec<f64> = pairs.iter().map(|(a, b)| a * b).collect();
    let est = summarize(&products).unwrap();
    let z = (est.mean / est.stderr).abs();
    assert!(z <= 4.0, "covariance z = {z}");
}

#[test]
fn squared_endpoint_family_reconstructs_in_the_mean() {
    // alpha = x(u,1)^2 with f(t) = 2 x(t): the telescoping residual is the
    // quadratic-variation fluctuation, mean zero with sd ~ sqrt(2 dt)
    let partition = Partition::new(vec![0.4]).unwrap();
    let grid = TimeGrid::new(1000).unwrap();
    let n_paths = 5000;
    let sampler = move |replica: usize| {
        let streams = particle_streams(7035, replica, 1).unwrap();
        simulate_flow(&partition, &grid, streams, true).unwrap()
    };
    let alpha = Functional::new("x(u,1)^2", |s: &FlowSample| {
        s.position(0, s.n_steps()).powi(2)
    });
    let family = IntegrandFamily::new(vec![Arc::new(|p: &arratia::clark_rep::PathPrefix| {
        2.0 * p.current_position(0)
    }) as AdaptedIntegrand]);
    let mean = 0.4 * 0.4 + 1.0;
    let report = verify_representation(n_paths, sampler, &alpha, &family, mean).unwrap();
    let dt: f64 = 1.0 / 1000.0;
    let residual_sd = (2.0 * dt).sqrt();
    let se = residual_sd / (n_paths as f64).sqrt();
    assert!(
        report.mean_residual.abs() <= 4.0 * se,
        "mean residual {} vs se {se}",
        report.mean_residual
    );
    assert!(report.max_residual < 30.0 * residual_sd, "max residual too large");
    assert!(report.z_score.abs() <= 4.0, "energy z {}", report.z_score);
}
