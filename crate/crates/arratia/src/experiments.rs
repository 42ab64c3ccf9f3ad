//! The experiment catalog behind the CLI: each experiment runs a Monte
//! Carlo study, gates named checks and writes machine-readable artifacts.
//!
//! Every check threshold is pinned here: statistical gates sit at 4
//! standard errors (suite-level false-alarm around `6e-5` per test),
//! pathwise identities at `1e-9`, coupled refinement monotonicity at
//! `1e-12`, the rate-fit slope window at `1 +- 0.2`, the angle ratio
//! spread at 3 and the small-gap slope agreement at 5%.

use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use crate::clark_rep::{
    stopped_increment_series, truncated_series_representation, verify_representation, Functional,
    IntegrandFamily,
};
use crate::config::{Experiment, ExperimentConfig};
use crate::error::{Error, Result};
use crate::flow_sim::{
    particle_streams, simulate_flow, simulate_pair_meeting_index, CoalescingPaths, FlowSample,
    Partition, TimeGrid, PARTICLE_STREAM_BITS,
};
use crate::gauss_rng::GaussianStream;
use crate::mc_stats::{mc_collect, orthogonality_test, summarize};
use crate::meeting_analytics::{
    angle_exit_bound_experiment, meeting_time_mean_quadrature, paper_meeting_time_formula,
    rate_constant_probe, small_u_slope, PAPER_SMALL_U_SLOPE, SURVIVAL_SMALL_U_SLOPE,
};
use crate::report::{write_csv, CheckResult, Report};
use crate::stochastic_integrals::{lemma31_decomposition, partition_sum, spatial_integral_on};

/// Statistical gate: four standard errors.
pub const Z_GATE: f64 = 4.0;
/// Pathwise telescoping tolerance.
pub const PATHWISE_TOL: f64 = 1e-9;
/// Coupled refinement monotonicity tolerance.
pub const MONOTONE_TOL: f64 = 1e-12;
/// Allowed deviation of the rate-fit slope from 1.
pub const RATE_SLOPE_WINDOW: f64 = 0.2;
/// Allowed max/median spread of the quadrant exit ratio.
pub const ANGLE_RATIO_MAX: f64 = 3.0;
/// Relative agreement demanded of the small-gap Monte Carlo slope.
pub const SLOPE_REL_TOL: f64 = 0.05;
/// "Exactly zero" gate for support-covered series truncations.
pub const SUPPORT_TOL: f64 = 1e-18;

struct RunOutput {
    checks: Vec<CheckResult>,
    notes: Vec<String>,
    artifacts: Vec<String>,
}

impl RunOutput {
    fn new() -> Self {
        RunOutput {
            checks: Vec::new(),
            notes: Vec::new(),
            artifacts: Vec::new(),
        }
    }
}

/// Run one configured experiment under a dedicated thread pool.
///
/// `workers = 0` uses the default parallelism; the report body does not
/// depend on the worker count.
pub fn run_experiment(config: &ExperimentConfig, workers: usize) -> Result<Report> {
    let seed = config.resolved_seed()?;
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Usage(format!("cannot build worker pool: {e}")))?;
    let mut output = pool.install(|| dispatch(config, seed))?;

    if let Some(path) = &config.dump_trajectory {
        dump_trajectory(config, seed, path)?;
        output.artifacts.push(path.display().to_string());
    }

    Ok(Report {
        experiment: config.experiment.name().to_string(),
        config: config.echo(),
        checks: output.checks,
        notes: output.notes,
        artifacts: output.artifacts,
        wall_clock_ms: start.elapsed().as_millis(),
    })
}

fn dispatch(config: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    match config.experiment {
        Experiment::ZeroMean | Experiment::Isometry => moment_experiment(config, seed),
        Experiment::RefinementMonotone => refinement_monotone(config, seed),
        Experiment::MeetingTime => meeting_time(config, seed),
        Experiment::SmallUSlope => small_u_slope_experiment(config, seed),
        Experiment::RateFit => rate_fit(config, seed),
        Experiment::AngleExit => angle_exit(config, seed),
        Experiment::MartingaleOrthogonality => martingale_orthogonality(config, seed),
        Experiment::ClarkVerify => clark_verify(config, seed),
        Experiment::EnergyIdentity => energy_identity(config, seed),
        Experiment::Lemma31 => lemma31(config, seed),
        Experiment::SeriesTruncation => series_truncation(config, seed),
    }
}

fn dump_trajectory(config: &ExperimentConfig, seed: u64, path: &Path) -> Result<()> {
    let partition = config.partition.build(config.u_max)?;
    let grid = TimeGrid::new(config.n_steps)?;
    let streams = particle_streams(seed, 0, partition.n_particles())?;
    let sample = simulate_flow(&partition, &grid, streams, config.bridge_correction)?;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut file = fs::File::create(path)?;
    sample.write_trajectory_csv(&mut file)
}

fn artifact(
    output: &mut RunOutput,
    out_dir: Option<&Path>,
    name: &str,
    header: &str,
    rows: &[Vec<f64>],
) -> Result<()> {
    if let Some(dir) = out_dir {
        let path = dir.join(name);
        write_csv(&path, header, rows)?;
        output.artifacts.push(name.to_string());
    }
    Ok(())
}

fn write_integral_stats(
    output: &mut RunOutput,
    out_dir: Option<&Path>,
    rows: &[(String, f64, usize, f64, f64)],
) -> Result<()> {
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        let mut body = String::from("experiment,mesh,n_paths,mean,stderr\n");
        for (name, mesh, n, mean, se) in rows {
            body.push_str(&format!("{name},{mesh},{n},{mean},{se}\n"));
        }
        fs::write(dir.join("integral_stats.csv"), body)?;
        output.artifacts.push("integral_stats.csv".into());
    }
    Ok(())
}

fn flow_sampler(
    partition: Partition,
    grid: TimeGrid,
    seed: u64,
    bridge: bool,
) -> impl Fn(usize) -> FlowSample + Sync {
    move |replica| {
        let streams =
            particle_streams(seed, replica, partition.n_particles()).expect("stream layout");
        simulate_flow(&partition, &grid, streams, bridge).expect("validated inputs")
    }
}

/// Zero mean of `S_pi` and the Ito isometry, on one replica batch.
fn moment_experiment(config: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    let partition = config.partition.build(config.u_max)?;
    if partition.n_particles() < 2 {
        return Err(Error::invalid("moment experiments need at least 2 particles"));
    }
    let grid = TimeGrid::new(config.n_steps)?;
    let integrand = config.integrand.build()?;
    let sampler = flow_sampler(partition.clone(), grid, seed, config.bridge_correction);
    let rows: Vec<(f64, f64)> = mc_collect(config.n_paths, |i| {
        let sample = sampler(i);
        let sums = partition_sum(&sample, &integrand);
        (sums.s_pi, sums.s_bar_pi)
    });
    let s: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let isometry_gap: Vec<f64> = rows.iter().map(|r| r.0 * r.0 - r.1).collect();
    let s_est = summarize(&s)?;
    let gap_est = summarize(&isometry_gap)?;

    let mut output = RunOutput::new();
    let z_mean = if s_est.stderr > 0.0 {
        (s_est.mean / s_est.stderr).abs()
    } else {
        0.0
    };
    let z_iso = if gap_est.stderr > 0.0 {
        (gap_est.mean / gap_est.stderr).abs()
    } else {
        0.0
    };
    match config.experiment {
        Experiment::ZeroMean => {
            output.checks.push(CheckResult::le("zero_mean_z", z_mean, Z_GATE));
        }
        Experiment::Isometry => {
            output.checks.push(CheckResult::le("isometry_z", z_iso, Z_GATE));
        }
        _ => unreachable!(),
    }
    output.notes.push(format!(
        "mean S = {:.6e} (se {:.3e}); mean S^2 - mean Sbar = {:.6e} (se {:.3e})",
        s_est.mean, s_est.stderr, gap_est.mean, gap_est.stderr
    ));
    write_integral_stats(
        &mut output,
        config.out_dir.as_deref(),
        &[(
            config.experiment.name().to_string(),
            partition.mesh(),
            config.n_paths,
            s_est.mean,
            s_est.stderr,
        )],
    )?;
    Ok(output)
}

fn default_refinement_levels() -> Vec<usize> {
    vec![2, 4, 8, 16, 32, 64]
}

/// Pathwise monotonicity of `S_bar` along a nested dyadic schedule.
fn refinement_monotone(config: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    let levels = config.levels.clone().unwrap_or_else(default_refinement_levels);
    if levels.len() < 2 || levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("refinement levels must be increasing, at least 2"));
    }
    let finest = *levels.last().unwrap();
    if levels.iter().any(|&n| finest % n != 0) {
        return Err(Error::invalid("every refinement level must divide the finest"));
    }
    let schedule: Vec<Partition> = levels
        .iter()
        .map(|&n| Partition::uniform(config.u_max, n))
        .collect::<Result<_>>()?;
    let grid = TimeGrid::new(config.n_steps)?;
    let integrand = config.integrand.build()?;
    let finest_partition = schedule.last().unwrap().clone();
    let sampler = flow_sampler(finest_partition, grid, seed, config.bridge_correction);
    let schedule = Arc::new(schedule);

    let per_replica: Vec<(f64, Vec<f64>)> = mc_collect(config.n_paths, |i| {
        let sample = sampler(i);
        let est = spatial_integral_on(&sample, &schedule, &integrand).expect("nested schedule");
        let s_bars: Vec<f64> = est.trace.iter().map(|l| l.s_bar_pi).collect();
        let min_inc = s_bars
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min);
        (min_inc, s_bars)
    });

    let min_increment = per_replica
        .iter()
        .map(|r| r.0)
        .fold(f64::INFINITY, f64::min);
    let mut output = RunOutput::new();
    output.checks.push(CheckResult::ge(
        "min_refinement_increment",
        min_increment,
        -MONOTONE_TOL,
    ));
    output.notes.push(format!(
        "most negative coupled S_bar increment over {} paths and {} levels: {:.3e}",
        config.n_paths,
        schedule.len(),
        min_increment
    ));

    let mut stats_rows = Vec::new();
    let mut plot_rows = Vec::new();
    for (j, partition) in schedule.iter().enumerate() {
        let column: Vec<f64> = per_replica.iter().map(|r| r.1[j]).collect();
        let est = summarize(&column)?;
        stats_rows.push((
            "refinement-monotone".to_string(),
            partition.mesh(),
            config.n_paths,
            est.mean,
            est.stderr,
        ));
        plot_rows.push(vec![partition.mesh(), est.mean, est.stderr]);
    }
    write_integral_stats(&mut output, config.out_dir.as_deref(), &stats_rows)?;
    artifact(
        &mut output,
        config.out_dir.as_deref(),
        "plot_refinement.csv",
        "x,y,yerr",
        &plot_rows,
    )?;
    Ok(output)
}

fn pair_meeting_mean(
    gap: f64,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    bridge: bool,
) -> Result<crate::mc_stats::EstimatorResult> {
    let dt = grid.dt();
    let times = mc_collect(n_paths, |replica| {
        let base = (replica as u64) << PARTICLE_STREAM_BITS;
        let mut left = GaussianStream::new(seed, base);
        let mut right = GaussianStream::new(seed, base | 1);
        let idx = simulate_pair_meeting_index(gap, grid, &mut left, &mut right, bridge)
            .expect("positive gap");
        idx as f64 * dt
    });
    summarize(&times)
}

/// Monte Carlo meeting-time means against the survival-form quadrature.
fn meeting_time(config: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    let u_values = config
        .u_values
        .clone()
        .unwrap_or_else(|| vec![0.1, 0.5, 1.0]);
    if u_values.iter().any(|&u| !(u > 0.0)) {
        return Err(Error::invalid("u_values must be positive"));
    }
    let grid = TimeGrid::new(config.n_steps)?;
    let mut output = RunOutput::new();
    let mut tab_rows = Vec::new();
    let mut plot_rows = Vec::new();
    for (j, &u) in u_values.iter().enumerate() {
        let quad = meeting_time_mean_quadrature(u)?;
        let paper = paper_meeting_time_formula(u)?;
        let est = pair_meeting_mean(
            u,
            &grid,
            config.n_paths,
            seed.wrapping_add(j as u64),
            config.bridge_correction,
        )?;
        let threshold = f64::max(0.02 * quad, Z_GATE * est.stderr);
        output.checks.push(CheckResult::le(
            format!("meeting_time_u_{u}"),
            (est.mean - quad).abs(),
            threshold,
        ));
        tab_rows.push(vec![u, quad, paper, est.mean, est.stderr]);
        plot_rows.push(vec![u, quad, est.mean, est.stderr]);
    }
    artifact(
        &mut output,
        config.out_dir.as_deref(),
        "meeting_time.csv",
        "u,quadrature,paper_formula,mc_mean,mc_stderr",
        &tab_rows,
    )?;
    artifact(
        &mut output,
        config.out_dir.as_deref(),
        "plot_meeting_time.csv",
        "u,quadrature,mc_mean,mc_stderr",
        &plot_rows,
    )?;
    Ok(output)
}

/// Monte Carlo small-gap slope against the survival-form constant.
fn small_u_slope_experiment(config: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    let u_grid = config
        .u_grid
        .clone()
        .unwrap_or_else(|| vec![0.0125, 0.025, 0.0375, 0.05]);
    let comparison = small_u_slope(&u_grid)?;
    let grid = TimeGrid::new(config.n_steps)?;
    let mut num = 0.0;
    let mut den = 0.0;
    let mut rows = Vec::new();
    for (j, &u) in u_grid.iter().enumerate() {
        let est = pair_meeting_mean(
            u,
            &grid,
            config.n_paths,
            seed.wrapping_add(j as u64),
            config.bridge_correction,
        )?;
        num += est.mean * u;
        den += u * u;
        rows.push(vec![u, est.mean, est.stderr, meeting_time_mean_quadrature(u)?]);
    }
    let mc_slope = num / den;
    let deviation = (mc_slope - SURVIVAL_SMALL_U_SLOPE).abs() / SURVIVAL_SMALL_U_SLOPE;

    let mut output = RunOutput::new();
    output
        .checks
        .push(CheckResult::le("small_u_slope_rel_dev", deviation, SLOPE_REL_TOL));
    output.notes.push(format!(
        "mc slope {:.6}; survival-form oracle slope {:.6} (2/sqrt(pi)); quadrature grid fit {:.6}",
        mc_slope, SURVIVAL_SMALL_U_SLOPE, comparison.fitted_slope
    ));
    output.notes.push(format!(
        "printed asymptotic constant {:.6} (3/(2 sqrt(pi))) disagrees with the survival-form \
         slope; the gate compares against the oracle, not the printed constant",
        PAPER_SMALL_U_SLOPE
    ));
    artifact(
        &mut output,
        config.out_dir.as_deref(),
        "small_u_slope.csv",
        "u,mc_mean,mc_stderr,quadrature",
        &rows,
    )?;
    Ok(output)
}

fn default_rate_levels() -> Vec<usize> {
    // 256 serves as the limit proxy; the fit runs over 4..=64.
    vec![4, 8, 16, 32, 64, 256]
}

/// Linear-in-mesh convergence rate of `E S_bar`.
fn rate_fit(config: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    let levels = config.levels.clone().unwrap_or_else(default_rate_levels);
    let grid = TimeGrid::new(config.n_steps)?;
    let integrand = config.integrand.build()?;
    let probe = rate_constant_probe(
        config.u_max,
        &integrand,
        &levels,
        &grid,
        config.n_paths,
        seed,
        config.bridge_correction,
    )?;

    let mut output = RunOutput::new();
    if probe.degenerate {
        output.checks.push(CheckResult::ge("rate_fit_degenerate_flag", 1.0, 1.0));
        output
            .notes
            .push("all mesh gaps are zero; slope undefined (degenerate integrand)".into());
    } else {
        let fit = probe.fit.unwrap();
        output.checks.push(CheckResult::le(
            "rate_slope_dev_from_1",
            (fit.slope - 1.0).abs(),
            RATE_SLOPE_WINDOW,
        ));
        output.notes.push(format!(
            "slope {:.4}, r^2 {:.4}, C = {:.4} (proxy level {} intervals)",
            fit.slope,
            fit.r_squared,
            probe.c.unwrap_or(f64::NAN),
            levels.last().unwrap()
        ));
    }

    let mut stats_rows = Vec::new();
    for level in &probe.levels {
        stats_rows.push((
            "rate-fit".to_string(),
            level.mesh,
            config.n_paths,
            level.mean_s_bar,
            level.stderr,
        ));
    }
    write_integral_stats(&mut output, config.out_dir.as_deref(), &stats_rows)?;
    let plot_rows: Vec<Vec<f64>> = probe
        .gap_points
        .iter()
        .zip(&probe.gap_stderr)
        .map(|(&(mesh, gap), &se)| vec![mesh, gap, se])
        .collect();
    artifact(
        &mut output,
        config.out_dir.as_deref(),
        "plot_rate_gaps.csv",
        "x,y,yerr",
        &plot_rows,
    )?;
    Ok(output)
}

/// Boundedness of `E(zeta ^ 1) / (r1 r2)` over a grid of quadrant starts.
fn angle_exit(config: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    let r_grid = config
        .r_grid
        .clone()
        .unwrap_or_else(|| vec![0.05, 0.1, 0.2, 0.4]);
    if r_grid.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::invalid("r_grid must be positive"));
    }
    let grid = TimeGrid::new(config.n_steps)?;
    let mut ratios = Vec::new();
    let mut rows = Vec::new();
    let mut plot_rows = Vec::new();
    for (i, &r1) in r_grid.iter().enumerate() {
        for (j, &r2) in r_grid.iter().enumerate() {
            let salt = (i * r_grid.len() + j) as u64;
            let result = angle_exit_bound_experiment(
                r1,
                r2,
                &grid,
                config.n_paths,
                seed.wrapping_add(salt),
            )?;
            ratios.push(result.ratio);
            rows.push(vec![r1, r2, result.mean_exit, result.stderr, result.ratio]);
            plot_rows.push(vec![r1 * r2, result.mean_exit, result.stderr]);
        }
    }
    let mut sorted = ratios.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
    };
    let max = *sorted.last().unwrap();

    let mut output = RunOutput::new();
    output.checks.push(CheckResult::le(
        "angle_ratio_max_over_median",
        max / median,
        ANGLE_RATIO_MAX,
    ));
    output.notes.push(format!(
        "ratio max {:.4}, median {:.4} over {} start pairs",
        max,
        median,
        ratios.len()
    ));
    artifact(
        &mut output,
        config.out_dir.as_deref(),
        "angle_exit.csv",
        "r1,r2,mean_exit,stderr,ratio",
        &rows,
    )?;
    artifact(
        &mut output,
        config.out_dir.as_deref(),
        "plot_angle_exit.csv",
        "x,y,yerr",
        &plot_rows,
    )?;
    Ok(output)
}

/// Orthogonality of the spatial-integral increment against a battery of
/// bounded functionals of the particles below the split point.
fn martingale_orthogonality(config: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    let partition = config.partition.build(config.u_max)?;
    let u_split = config.u_split.unwrap_or(config.u_max / 2.0);
    if !partition.points().contains(&u_split) {
        return Err(Error::invalid(format!(
            "u_split {u_split} must be a partition point"
        )));
    }
    let below: Vec<usize> = (0..partition.n_particles())
        .filter(|&k| partition.points()[k] <= u_split)
        .collect();
    if below.len() < 3 {
        return Err(Error::invalid("need at least 3 particles at or below u_split"));
    }
    let ref_a = below[below.len() / 2].max(1);
    let ref_b = *below.last().unwrap();
    let grid = TimeGrid::new(config.n_steps)?;
    let integrand = config.integrand.build()?;
    let sampler = flow_sampler(partition.clone(), grid, seed, config.bridge_correction);

    let rows: Vec<(f64, [f64; 6])> = mc_collect(config.n_paths, |i| {
        let sample = sampler(i);
        let sums = partition_sum(&sample, &integrand);
        let mut increment = 0.0;
        for (k, terms) in sums.per_particle.iter().enumerate() {
            if partition.points()[k + 1] > u_split {
                increment += terms.stochastic;
            }
        }
        let horizon = sample.n_steps();
        let tanh_a = sample.position(ref_a, horizon).tanh();
        let tanh_b = sample.position(ref_b, horizon).tanh();
        let tau_a = sample.left_meeting_index(ref_a) as f64 * sample.dt();
        let tau_b = sample.left_meeting_index(ref_b) as f64 * sample.dt();
        let sign_a = (tau_a - 0.5).signum();
        let sign_b = (tau_b - 0.5).signum();
        (increment, [1.0, tanh_a, sign_a, tanh_b, sign_b, tanh_a * sign_b])
    });

    let increments: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let names = [
        "g_const",
        "g_tanh_a",
        "g_sign_tau_a",
        "g_tanh_b",
        "g_sign_tau_b",
        "g_product",
    ];
    let statistics: Vec<Vec<f64>> = (0..6)
        .map(|j| rows.iter().map(|r| r.1[j]).collect())
        .collect();
    let results = orthogonality_test(&increments, &statistics)?;

    let mut output = RunOutput::new();
    for (name, result) in names.iter().zip(&results) {
        match result.z {
            Some(z) => output
                .checks
                .push(CheckResult::le(format!("orthogonality_{name}"), z.abs(), Z_GATE)),
            None => {
                output.notes.push(format!("statistic {name} degenerate, excluded"));
            }
        }
    }
    output.notes.push(format!(
        "increment over ({u_split}, {}] vs functionals of particles in [0, {u_split}]; \
         reference particles {ref_a} and {ref_b}",
        config.u_max
    ));
    Ok(output)
}

fn clark_partitions(u_max: f64) -> (Vec<f64>, Vec<f64>) {
    (vec![u_max / 2.0], vec![0.0, u_max / 2.0])
}

/// Pathwise Clark reconstruction for the analytic test families.
fn clark_verify(config: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    let family = config.family.clone().unwrap_or_else(|| "both".into());
    let grid = TimeGrid::new(config.n_steps)?;
    let (single_points, double_points) = clark_partitions(config.u_max);
    let mut reports = Vec::new();

    if family == "one" || family == "both" {
        let partition = Partition::new(single_points)?;
        let u = partition.points()[0];
        let sampler = flow_sampler(partition, grid, seed, config.bridge_correction);
        let alpha = Functional::new("x(u,1)", |s: &FlowSample| s.position(0, s.n_steps()));
        reports.push(verify_representation(
            config.n_paths,
            sampler,
            &alpha,
            &IntegrandFamily::single_particle_identity(),
            u,
        )?);
    }
    if family == "two" || family == "both" {
        let partition = Partition::new(double_points)?;
        let u2 = partition.points()[1];
        let sampler = flow_sampler(partition, grid, seed.wrapping_add(1), config.bridge_correction);
        let alpha = Functional::new("x(u2,1)", |s: &FlowSample| s.position(1, s.n_steps()));
        reports.push(verify_representation(
            config.n_paths,
            sampler,
            &alpha,
            &IntegrandFamily::two_particle_endpoint(),
            u2,
        )?);
    }

    let mut output = RunOutput::new();
    for report in &reports {
        output.checks.push(CheckResult::le(
            format!("clark_max_residual_{}", report.functional),
            report.max_residual,
            PATHWISE_TOL,
        ));
    }
    emit_clark_reports(&mut output, config.out_dir.as_deref(), &reports)?;
    Ok(output)
}

fn emit_clark_reports(
    output: &mut RunOutput,
    out_dir: Option<&Path>,
    reports: &[crate::clark_rep::RepresentationReport],
) -> Result<()> {
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        let mut body = serde_json::to_string_pretty(reports).expect("reports serialize");
        body.push('\n');
        fs::write(dir.join("clark_report.json"), body)?;
        output.artifacts.push("clark_report.json".into());
    }
    Ok(())
}

/// Energy identity for the two-particle endpoint family: the variance part
/// is analytically 1.
fn energy_identity(config: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    let grid = TimeGrid::new(config.n_steps)?;
    let (_, double_points) = clark_partitions(config.u_max);
    let partition = Partition::new(double_points)?;
    let u2 = partition.points()[1];
    let sampler = flow_sampler(partition, grid, seed, config.bridge_correction);
    let alpha = Functional::new("x(u2,1)", |s: &FlowSample| s.position(1, s.n_steps()));
    let report = verify_representation(
        config.n_paths,
        sampler,
        &alpha,
        &IntegrandFamily::two_particle_endpoint(),
        u2,
    )?;

    // target: (mean alpha)^2 + 1, with mean alpha estimated from the batch
    let mean_sq = (report.energy_rhs - report.per_k.iter().sum::<f64>()).max(0.0);
    let target = mean_sq + 1.0;
    let combined = (report.energy_lhs_se.powi(2) + report.energy_rhs_se.powi(2)).sqrt();
    let mut output = RunOutput::new();
    output.checks.push(CheckResult::le(
        "energy_lhs_vs_analytic",
        (report.energy_lhs - target).abs(),
        Z_GATE * combined,
    ));
    output.checks.push(CheckResult::le(
        "energy_rhs_vs_analytic",
        (report.energy_rhs - target).abs(),
        Z_GATE * combined,
    ));
    output.checks.push(CheckResult::le(
        "energy_z",
        report.z_score.abs(),
        Z_GATE,
    ));
    output.notes.push(format!(
        "lhs {:.6} rhs {:.6} target {:.6} (variance part analytically 1)",
        report.energy_lhs, report.energy_rhs, target
    ));
    emit_clark_reports(&mut output, config.out_dir.as_deref(), &[report])?;
    Ok(output)
}

/// Pathwise agreement of the predecessor-stopped series with `S_pi` plus
/// the boundary integral.
fn lemma31(config: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    let partition = config.partition.build(config.u_max)?;
    if !partition.starts_at_zero() {
        return Err(Error::invalid("lemma31 requires a partition starting at 0"));
    }
    let grid = TimeGrid::new(config.n_steps)?;
    let integrand = config.integrand.build()?;
    let sampler = flow_sampler(partition, grid, seed, config.bridge_correction);
    let residuals: Vec<f64> = mc_collect(config.n_paths, |i| {
        let sample = sampler(i);
        lemma31_decomposition(&sample, &integrand)
            .expect("validated partition")
            .residual
            .abs()
    });
    let max_residual = residuals.iter().fold(0.0f64, |m, r| m.max(*r));
    let mut output = RunOutput::new();
    output.checks.push(CheckResult::le(
        "lemma31_max_residual",
        max_residual,
        PATHWISE_TOL,
    ));
    output.notes.push(format!(
        "max |series - (S_pi + boundary)| over {} paths: {:.3e}",
        config.n_paths, max_residual
    ));
    Ok(output)
}

/// Insertion order 0, U, then dyadic midpoints level by level.
fn dyadic_insertion_sequence(depth: u32) -> (Vec<f64>, Vec<usize>) {
    let n = 1usize << depth;
    let mut values = vec![0.0, 1.0];
    let mut level = 1usize;
    while level < n {
        for odd in (1..2 * level).step_by(2) {
            values.push(odd as f64 / (2 * level) as f64);
        }
        level *= 2;
    }
    let sorted: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
    let indices = values
        .iter()
        .map(|v| sorted.iter().position(|s| s == v).unwrap())
        .collect();
    (values, indices)
}

/// L2 truncation errors of the series representation for a functional with
/// finite support along the insertion sequence.
fn series_truncation(config: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    let depth = 3u32;
    let (_, sequence_indices) = dyadic_insertion_sequence(depth);
    let partition = Partition::dyadic(config.u_max, depth)?;
    let grid = TimeGrid::new(config.n_steps)?;
    // support: sequence particles 0..=4 (0, U, U/2, U/4, 3U/4)
    let coefficients = vec![0.3, 1.0, -0.7, 0.5, 0.9, -0.6];
    let support = coefficients.len() - 2;
    let truncations: Vec<usize> = config
        .truncations
        .clone()
        .unwrap_or_else(|| (0..sequence_indices.len()).collect());
    if truncations.iter().any(|&n| n >= sequence_indices.len()) {
        return Err(Error::invalid(format!(
            "truncations must stay below {} sequence particles",
            sequence_indices.len()
        )));
    }
    let (alpha, means) = stopped_increment_series(sequence_indices, coefficients)?;
    let sampler = flow_sampler(partition, grid, seed, config.bridge_correction);
    let result =
        truncated_series_representation(config.n_paths, sampler, &alpha, &means, &truncations)?;

    let mut output = RunOutput::new();
    let worst_z = result
        .pairwise_z
        .iter()
        .fold(f64::NEG_INFINITY, |m, z| m.max(*z));
    output
        .checks
        .push(CheckResult::le("l2_monotone_worst_z", worst_z, Z_GATE));
    let covered_max = result
        .points
        .iter()
        .filter(|p| p.truncation >= support)
        .fold(0.0f64, |m, p| m.max(p.l2_error));
    output.checks.push(CheckResult::le(
        "l2_support_covered",
        covered_max,
        SUPPORT_TOL,
    ));
    output.notes.push(format!(
        "support ends at sequence particle {support}; L2 errors: {}",
        result
            .points
            .iter()
            .map(|p| format!("N={}:{:.3e}", p.truncation, p.l2_error))
            .collect::<Vec<_>>()
            .join(" ")
    ));
    let rows: Vec<Vec<f64>> = result
        .points
        .iter()
        .map(|p| vec![p.truncation as f64, p.l2_error, p.stderr])
        .collect();
    artifact(
        &mut output,
        config.out_dir.as_deref(),
        "series_l2.csv",
        "x,y,yerr",
        &rows,
    )?;
    Ok(output)
}
