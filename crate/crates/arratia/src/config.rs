//! Flat `key = value` experiment configuration.
//!
//! One pair per line, `#` starts a comment. Unknown keys, duplicate keys
//! and unparsable values are reported with their 1-based line number.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::flow_sim::Partition;
use crate::stochastic_integrals::Integrand;

/// The experiment catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    ZeroMean,
    Isometry,
    RefinementMonotone,
    MeetingTime,
    SmallUSlope,
    RateFit,
    AngleExit,
    MartingaleOrthogonality,
    ClarkVerify,
    EnergyIdentity,
    Lemma31,
    SeriesTruncation,
}

impl Experiment {
    pub const ALL: [Experiment; 12] = [
        Experiment::ZeroMean,
        Experiment::Isometry,
        Experiment::RefinementMonotone,
        Experiment::MeetingTime,
        Experiment::SmallUSlope,
        Experiment::RateFit,
        Experiment::AngleExit,
        Experiment::MartingaleOrthogonality,
        Experiment::ClarkVerify,
        Experiment::EnergyIdentity,
        Experiment::Lemma31,
        Experiment::SeriesTruncation,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::ZeroMean => "zero-mean",
            Experiment::Isometry => "isometry",
            Experiment::RefinementMonotone => "refinement-monotone",
            Experiment::MeetingTime => "meeting-time",
            Experiment::SmallUSlope => "small-u-slope",
            Experiment::RateFit => "rate-fit",
            Experiment::AngleExit => "angle-exit",
            Experiment::MartingaleOrthogonality => "martingale-orthogonality",
            Experiment::ClarkVerify => "clark-verify",
            Experiment::EnergyIdentity => "energy-identity",
            Experiment::Lemma31 => "lemma31",
            Experiment::SeriesTruncation => "series-truncation",
        }
    }

    pub fn parse(s: &str) -> Option<Experiment> {
        Experiment::ALL.iter().copied().find(|e| e.name() == s)
    }
}

/// Partition specification: explicit points or a dyadic depth on `[0, U]`.
#[derive(Debug, Clone, PartialEq)]
pub enum PartitionSpec {
    Explicit(Vec<f64>),
    DyadicDepth(u32),
}

impl PartitionSpec {
    pub fn build(&self, u_max: f64) -> Result<Partition> {
        match self {
            PartitionSpec::Explicit(points) => Partition::new(points.clone()),
            PartitionSpec::DyadicDepth(depth) => Partition::dyadic(u_max, *depth),
        }
    }
}

/// Named integrand catalog plus table-defined integrands.
#[derive(Debug, Clone, PartialEq)]
pub enum IntegrandSpec {
    One,
    Cos,
    Tanh,
    Table(Vec<(f64, f64)>),
}

impl IntegrandSpec {
    pub fn build(&self) -> Result<Integrand> {
        match self {
            IntegrandSpec::One => Ok(Integrand::one()),
            IntegrandSpec::Cos => Ok(Integrand::cosine()),
            IntegrandSpec::Tanh => Ok(Integrand::hyperbolic_tangent()),
            IntegrandSpec::Table(nodes) => Integrand::table(nodes.clone()),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            IntegrandSpec::One => "one".into(),
            IntegrandSpec::Cos => "cos".into(),
            IntegrandSpec::Tanh => "tanh".into(),
            IntegrandSpec::Table(nodes) => {
                let parts: Vec<String> =
                    nodes.iter().map(|(x, y)| format!("{x}:{y}")).collect();
                format!("table:{}", parts.join(","))
            }
        }
    }
}

pub const DEFAULT_N_STEPS: usize = 10_000;
pub const DEFAULT_U_MAX: f64 = 1.0;
pub const DEFAULT_DYADIC_DEPTH: u32 = 6;

/// A fully parsed experiment configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    /// May still be unset after parsing; the CLI resolves it from
    /// `--seed` or `ARRATIA_SEED` before running.
    pub seed: Option<u64>,
    pub n_paths: usize,
    pub n_steps: usize,
    pub u_max: f64,
    pub partition: PartitionSpec,
    pub integrand: IntegrandSpec,
    pub bridge_correction: bool,
    pub out_dir: Option<PathBuf>,
    pub dump_trajectory: Option<PathBuf>,
    // experiment-specific knobs, defaulted by the runner when unset
    pub u_values: Option<Vec<f64>>,
    pub u_grid: Option<Vec<f64>>,
    pub r_grid: Option<Vec<f64>>,
    pub levels: Option<Vec<usize>>,
    pub u_split: Option<f64>,
    pub family: Option<String>,
    pub truncations: Option<Vec<usize>>,
}

impl ExperimentConfig {
    pub fn resolved_seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Usage("no seed: set `seed` in the config, pass --seed, or export ARRATIA_SEED".into()))
    }

    /// Normalized `key = value` echo used in reports; deterministic order.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        map.insert("experiment".into(), self.experiment.name().to_string());
        if let Some(seed) = self.seed {
            map.insert("seed".into(), seed.to_string());
        }
        map.insert("n_paths".into(), self.n_paths.to_string());
        map.insert("n_steps".into(), self.n_steps.to_string());
        map.insert("u_max".into(), self.u_max.to_string());
        map.insert(
            "partition".into(),
            match &self.partition {
                PartitionSpec::Explicit(points) => points
                    .iter()
                    .map(|p| p.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
                PartitionSpec::DyadicDepth(d) => format!("dyadic:{d}"),
            },
        );
        map.insert("integrand".into(), self.integrand.describe());
        map.insert(
            "bridge_correction".into(),
            self.bridge_correction.to_string(),
        );
        let list = |v: &Vec<f64>| {
            v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
        };
        if let Some(v) = &self.u_values {
            map.insert("u_values".into(), list(v));
        }
        if let Some(v) = &self.u_grid {
            map.insert("u_grid".into(), list(v));
        }
        if let Some(v) = &self.r_grid {
            map.insert("r_grid".into(), list(v));
        }
        if let Some(v) = &self.levels {
            map.insert(
                "levels".into(),
                v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
            );
        }
        if let Some(v) = self.u_split {
            map.insert("u_split".into(), v.to_string());
        }
        if let Some(v) = &self.family {
            map.insert("family".into(), v.clone());
        }
        if let Some(v) = &self.truncations {
            map.insert(
                "truncations".into(),
                v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
            );
        }
        map
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_f64_list(line: usize, key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|part| {
            part.trim()
                .parse::<f64>()
                .map_err(|_| parse_err(line, format!("invalid number `{}` in `{key}`", part.trim())))
        })
        .collect()
}

fn parse_usize_list(line: usize, key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|part| {
            part.trim()
                .parse::<usize>()
                .map_err(|_| parse_err(line, format!("invalid integer `{}` in `{key}`", part.trim())))
        })
        .collect()
}

fn parse_integrand(line: usize, value: &str) -> Result<IntegrandSpec> {
    match value {
        "one" => Ok(IntegrandSpec::One),
        "cos" => Ok(IntegrandSpec::Cos),
        "tanh" => Ok(IntegrandSpec::Tanh),
        other => {
            if let Some(body) = other.strip_prefix("table:") {
                let mut nodes = Vec::new();
                for pair in body.split(',') {
                    let (x, y) = pair
                        .split_once(':')
                        .ok_or_else(|| parse_err(line, format!("table node `{pair}` is not x:y")))?;
                    let parse = |s: &str| {
                        s.trim()
                            .parse::<f64>()
                            .map_err(|_| parse_err(line, format!("invalid table number `{s}`")))
                    };
                    nodes.push((parse(x)?, parse(y)?));
                }
                Ok(IntegrandSpec::Table(nodes))
            } else {
                Err(parse_err(
                    line,
                    format!("unknown integrand `{other}` (expected one|cos|tanh|table:...)"),
                ))
            }
        }
    }
}

/// Parse the documented flat `key = value` format.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut experiment = None;
    let mut experiment_line = 0;
    let mut seed = None;
    let mut n_paths = None;
    let mut n_paths_line = 0;
    let mut n_steps = None;
    let mut u_max = None;
    let mut partition = None;
    let mut integrand = None;
    let mut bridge = None;
    let mut out_dir = None;
    let mut dump_trajectory = None;
    let mut u_values = None;
    let mut u_grid = None;
    let mut r_grid = None;
    let mut levels = None;
    let mut u_split = None;
    let mut family = None;
    let mut truncations = None;
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| parse_err(line, "expected `key = value`"))?;
        let key = key.trim();
        let value = value.trim();
        if value.is_empty() {
            return Err(parse_err(line, format!("empty value for `{key}`")));
        }
        if let Some(prev) = seen.insert(key.to_string(), line) {
            return Err(parse_err(line, format!("duplicate key `{key}` (first on line {prev})")));
        }
        match key {
            "experiment" => {
                experiment = Some(Experiment::parse(value).ok_or_else(|| {
                    parse_err(line, format!("unknown experiment `{value}`"))
                })?);
                experiment_line = line;
            }
            "seed" => {
                seed = Some(value.parse::<u64>().map_err(|_| {
                    parse_err(line, format!("invalid seed `{value}` (expected unsigned integer)"))
                })?)
            }
            "n_paths" => {
                n_paths = Some(value.parse::<usize>().map_err(|_| {
                    parse_err(line, format!("invalid n_paths `{value}` (expected positive integer)"))
                })?);
                n_paths_line = line;
            }
            "n_steps" => {
                n_steps = Some(value.parse::<usize>().map_err(|_| {
                    parse_err(line, format!("invalid n_steps `{value}`"))
                })?)
            }
            "u_max" => {
                u_max = Some(value.parse::<f64>().map_err(|_| {
                    parse_err(line, format!("invalid u_max `{value}`"))
                })?)
            }
            "partition" => {
                partition = Some(PartitionSpec::Explicit(parse_f64_list(line, key, value)?))
            }
            "dyadic_depth" => {
                let depth = value
                    .parse::<u32>()
                    .map_err(|_| parse_err(line, format!("invalid dyadic_depth `{value}`")))?;
                if depth > 16 {
                    return Err(parse_err(line, "dyadic_depth above 16 is not supported"));
                }
                partition = Some(PartitionSpec::DyadicDepth(depth));
            }
            "integrand" => integrand = Some(parse_integrand(line, value)?),
            "bridge_correction" => {
                bridge = Some(match value {
                    "true" => true,
                    "false" => false,
                    _ => {
                        return Err(parse_err(
                            line,
                            format!("invalid bridge_correction `{value}` (expected true|false)"),
                        ))
                    }
                })
            }
            "out" => out_dir = Some(PathBuf::from(value)),
            "dump_trajectory" => dump_trajectory = Some(PathBuf::from(value)),
            "u_values" => u_values = Some(parse_f64_list(line, key, value)?),
            "u_grid" => u_grid = Some(parse_f64_list(line, key, value)?),
            "r_grid" => r_grid = Some(parse_f64_list(line, key, value)?),
            "levels" => levels = Some(parse_usize_list(line, key, value)?),
            "u_split" => {
                u_split = Some(value.parse::<f64>().map_err(|_| {
                    parse_err(line, format!("invalid u_split `{value}`"))
                })?)
            }
            "family" => {
                if !["one", "two", "both"].contains(&value) {
                    return Err(parse_err(line, format!("invalid family `{value}` (expected one|two|both)")));
                }
                family = Some(value.to_string());
            }
            "truncations" => truncations = Some(parse_usize_list(line, key, value)?),
            _ => return Err(parse_err(line, format!("unknown key `{key}`"))),
        }
    }

    let experiment =
        experiment.ok_or_else(|| parse_err(1, "missing required key `experiment`"))?;
    let n_paths = n_paths.ok_or_else(|| parse_err(1, "missing required key `n_paths`"))?;
    if n_paths < 2 {
        return Err(parse_err(n_paths_line.max(1), "n_paths must be at least 2"));
    }
    let n_steps = n_steps.unwrap_or(DEFAULT_N_STEPS);
    if n_steps == 0 {
        return Err(parse_err(1, "n_steps must be positive"));
    }
    let u_max = u_max.unwrap_or(DEFAULT_U_MAX);
    if !(u_max > 0.0) {
        return Err(parse_err(1, "u_max must be positive"));
    }
    let config = ExperimentConfig {
        experiment,
        seed,
        n_paths,
        n_steps,
        u_max,
        partition: partition.unwrap_or(PartitionSpec::DyadicDepth(DEFAULT_DYADIC_DEPTH)),
        integrand: integrand.unwrap_or(IntegrandSpec::One),
        bridge_correction: bridge.unwrap_or(true),
        out_dir,
        dump_trajectory,
        u_values,
        u_grid,
        r_grid,
        levels,
        u_split,
        family,
        truncations,
    };
    // resolve the partition once so bad explicit lists fail at parse time
    config
        .partition
        .build(config.u_max)
        .map_err(|e| parse_err(experiment_line.max(1), format!("partition does not resolve: {e}")))?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = parse_config("experiment = zero-mean\nseed = 1\nn_paths = 100\n").unwrap();
        assert_eq!(cfg.experiment, Experiment::ZeroMean);
        assert_eq!(cfg.seed, Some(1));
        assert_eq!(cfg.n_steps, DEFAULT_N_STEPS);
        assert_eq!(cfg.u_max, 1.0);
        assert_eq!(cfg.partition, PartitionSpec::DyadicDepth(6));
        assert_eq!(cfg.integrand, IntegrandSpec::One);
        assert!(cfg.bridge_correction);
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = parse_config(
            "# full line comment\nexperiment = isometry\n\nseed = 2 # trailing\nn_paths = 50\n",
        )
        .unwrap();
        assert_eq!(cfg.experiment, Experiment::Isometry);
        assert_eq!(cfg.seed, Some(2));
    }

    #[test]
    fn negative_n_paths_names_the_line() {
        let err = parse_config("experiment = zero-mean\nseed = 1\nn_paths = -1\n").unwrap_err();
        match err {
            Error::Parse { line, msg } => {
                assert_eq!(line, 3);
                assert!(msg.contains("n_paths"), "{msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_key_and_unknown_experiment_are_rejected() {
        let err = parse_config("experiment = zero-mean\nwat = 1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = parse_config("experiment = nonsense\nseed = 1\nn_paths = 10\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn duplicate_key_is_rejected() {
        let err = parse_config("experiment = zero-mean\nseed = 1\nseed = 2\nn_paths = 10\n")
            .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
    }

    #[test]
    fn integrand_catalog_resolves() {
        let cfg = parse_config(
            "experiment = zero-mean\nseed = 1\nn_paths = 10\nintegrand = cos\n",
        )
        .unwrap();
        let a = cfg.integrand.build().unwrap();
        assert_eq!(a.name(), "cos");
        assert_eq!(a.sup_bound(), 1.0);
        assert!((a.eval(0.0) - 1.0).abs() < 1e-15);

        let cfg = parse_config(
            "experiment = zero-mean\nseed = 1\nn_paths = 10\nintegrand = table:0:1,1:2\n",
        )
        .unwrap();
        let t = cfg.integrand.build().unwrap();
        assert_eq!(t.sup_bound(), 2.0);

        let err = parse_config(
            "experiment = zero-mean\nseed = 1\nn_paths = 10\nintegrand = sin\n",
        )
        .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }));
    }

    #[test]
    fn explicit_partition_is_validated_at_parse_time() {
        let err = parse_config(
            "experiment = zero-mean\nseed = 1\nn_paths = 10\npartition = 0,0.5,0.5\n",
        )
        .unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn missing_required_keys() {
        assert!(parse_config("seed = 1\nn_paths = 10\n").is_err());
        assert!(parse_config("experiment = zero-mean\nseed = 1\n").is_err());
        // seed may be resolved later by the CLI
        let cfg = parse_config("experiment = zero-mean\nn_paths = 10\n").unwrap();
        assert!(cfg.seed.is_none());
        assert!(cfg.resolved_seed().is_err());
    }
}
