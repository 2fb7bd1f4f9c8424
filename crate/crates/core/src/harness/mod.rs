//! Experiment configuration, service-round analysis, metrics output and the
//! end-to-end runner.

mod rounds;
mod run;

pub use rounds::{
    request_success_probability, rounds_for_probability, rounds_grid, service_rounds, write_rounds_csv, Request,
    Rounds, RoundsCell, RoundsConfig,
};
pub use run::{
    build_demos, demo_requests, evaluate_selectors, median, run_experiment, train_imitation, OrderingChecks,
    SeedReport, Summary, UtilityReport,
};

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::d3pg::D3pgConfig;
use crate::error::{Error, Result};
use crate::genmodel::{StrategyCatalog, DEFAULT_DEMO_DISTANCE, DEFAULT_POWER_GRID};
use crate::imitation::IrlConfig;
use crate::provision::{QoEConfig, Scenario};

/// Demonstration-dataset settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    pub prompts: usize,
    pub embedding_dim: usize,
    /// Distance of the user who scored the demonstrations (m).
    pub distance: f64,
    pub power_grid: Vec<f64>,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self { prompts: 20, embedding_dim: 8, distance: DEFAULT_DEMO_DISTANCE, power_grid: DEFAULT_POWER_GRID.to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Experiment id written into every metrics row.
    pub name: String,
    /// Number of service providers; only a single one is modelled.
    pub masps: usize,
    pub scenario: Scenario,
    /// Strategy catalog file; the bundled catalog when absent. Relative
    /// paths are resolved against the config file's directory.
    pub catalog: Option<PathBuf>,
    pub qoe: QoEConfig,
    pub demo: DemoConfig,
    pub irl: IrlConfig,
    pub d3pg: D3pgConfig,
    pub rounds: RoundsConfig,
    /// Power steps of the brute-force oracle.
    pub oracle_units: usize,
    /// Requests per prompt-engineering utility evaluation.
    pub eval_trials: usize,
    /// Random allocations averaged for the random provisioning baseline.
    pub random_allocations: usize,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "default".into(),
            masps: 1,
            scenario: Scenario::default(),
            catalog: None,
            qoe: QoEConfig::default(),
            demo: DemoConfig::default(),
            irl: IrlConfig::default(),
            d3pg: D3pgConfig::default(),
            rounds: RoundsConfig::default(),
            oracle_units: 21,
            eval_trials: 5000,
            random_allocations: 200,
            seeds: vec![0, 1, 2, 3, 4],
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    /// Parses without resolving or checking referenced files.
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |e: Error| match e {
            Error::InvalidConfig(_) => e,
            other => Error::InvalidConfig(other.to_string()),
        };
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("at least one seed is required".into()));
        }
        if self.masps != 1 {
            return Err(Error::InvalidConfig(format!("only one service provider is supported, got {}", self.masps)));
        }
        self.scenario.validate().map_err(invalid)?;
        self.qoe.validate().map_err(invalid)?;
        self.irl.validate().map_err(invalid)?;
        self.d3pg.validate().map_err(invalid)?;
        self.rounds.validate()?;
        let d = &self.demo;
        if d.prompts == 0 || d.embedding_dim < 2 || !(d.distance > 0.0) || d.power_grid.is_empty() {
            return Err(Error::InvalidConfig(
                "demo settings need prompts, an embedding of at least 2, a positive distance and a power grid".into(),
            ));
        }
        if let Some(p) = d.power_grid.iter().find(|p| !(**p > 0.0 && **p <= self.scenario.channel.p_total)) {
            return Err(Error::InvalidConfig(format!("demo power {p} outside the budget")));
        }
        if self.oracle_units < self.scenario.users.len() || self.eval_trials == 0 || self.random_allocations == 0 {
            return Err(Error::InvalidConfig(
                "oracle_units must cover every user; eval_trials and random_allocations must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn load_catalog(&self) -> Result<StrategyCatalog> {
        match &self.catalog {
            Some(path) => StrategyCatalog::load(path),
            None => Ok(StrategyCatalog::default()),
        }
    }
}

/// Reads, resolves and validates a config file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let mut config = ExperimentConfig::from_json(&text)?;
    if let Some(catalog) = &config.catalog {
        let resolved =
            if catalog.is_relative() { path.parent().unwrap_or(Path::new(".")).join(catalog) } else { catalog.clone() };
        if !resolved.is_file() {
            return Err(Error::InvalidConfig(format!("catalog file {} does not exist", resolved.display())));
        }
        config.catalog = Some(resolved);
    }
    Ok(config)
}

/// Metric names accepted in metrics files.
pub const METRICS: &[&str] = &[
    "irl_untrained_match_rate",
    "irl_match_rate",
    "utility_irl",
    "utility_empirical",
    "utility_random",
    "reward_d3pg",
    "reward_ablation",
    "reward_static",
    "reward_random",
    "reward_oracle",
    "power_share_d3pg",
    "single_round_cells_irl",
    "single_round_cells_empirical",
    "single_round_cells_raw",
];

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub experiment: String,
    pub seed: u64,
    /// Episode, round or user index, depending on the metric.
    pub step: u64,
    pub metric: &'static str,
    pub value: f64,
}

impl MetricsRow {
    pub fn new(experiment: &str, seed: u64, step: u64, metric: &str, value: f64) -> Result<Self> {
        let metric = METRICS
            .iter()
            .find(|m| **m == metric)
            .ok_or_else(|| Error::invalid(format!("unknown metric {metric:?}")))?;
        Ok(Self { experiment: experiment.to_string(), seed, step, metric, value })
    }
}

/// Writes `experiment,seed,step,metric,value` rows with values in
/// 17-significant-digit scientific notation.
pub fn write_metrics(rows: &[MetricsRow], path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "experiment,seed,step,metric,value")?;
    for r in rows {
        writeln!(out, "{},{},{},{},{:.16e}", r.experiment, r.seed, r.step, r.metric, r.value)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_config_parses() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("config/default.json");
        let c = parse_config(&path).unwrap();
        assert_eq!(c.scenario.users.len(), 3);
        assert_eq!(c.masps, 1);
        assert!(c.catalog.as_ref().unwrap().is_file());
        assert_eq!(c.load_catalog().unwrap(), StrategyCatalog::default());
        let th: Vec<f64> = c.scenario.users.iter().map(|u| u.threshold).collect();
        assert_eq!(th, vec![7.6, 8.2, 8.5]);
    }

    #[test]
    fn config_round_trips() {
        let c = ExperimentConfig { seeds: vec![7, 9], name: "rt".into(), ..ExperimentConfig::default() };
        let again = ExperimentConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(again, c);
        assert_eq!(ExperimentConfig::from_json(&again.to_json()).unwrap(), again);
    }

    #[test]
    fn config_errors() {
        assert!(matches!(ExperimentConfig::from_json(r#"{"seeds": []}"#), Err(Error::InvalidConfig(_))));
        assert!(matches!(ExperimentConfig::from_json(r#"{"masps": 2}"#), Err(Error::InvalidConfig(_))));
        match ExperimentConfig::from_json("{\n  \"seeds\": [1],\n  \"bogus\": 3\n}") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        match ExperimentConfig::from_json("{\n\"seeds\": [1,\n") {
            Err(Error::Parse { line, .. }) => assert!(line >= 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(ExperimentConfig::from_json(r#"{"irl": {"batch_size": 0}}"#), Err(Error::InvalidConfig(_))));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"catalog": "missing.json"}"#).unwrap();
        assert!(matches!(parse_config(&path), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn metrics_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_metrics(&[], &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "experiment,seed,step,metric,value\n");
        let values = [0.1, -1.0 / 3.0, 6.02214076e23];
        let rows: Vec<MetricsRow> = values
            .iter()
            .enumerate()
            .map(|(i, v)| MetricsRow::new("e", 1, i as u64, "reward_d3pg", *v).unwrap())
            .collect();
        write_metrics(&rows, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(!text.contains('\r'));
        for (line, v) in text.lines().skip(1).zip(values) {
            let field = line.rsplit(',').next().unwrap();
            assert_eq!(field.parse::<f64>().unwrap(), v);
            let mantissa = field.split('e').next().unwrap().trim_start_matches('-');
            assert_eq!(mantissa.chars().filter(|c| c.is_ascii_digit()).count(), 17);
        }
        assert!(MetricsRow::new("e", 0, 0, "not_a_metric", 1.0).is_err());
    }
}
