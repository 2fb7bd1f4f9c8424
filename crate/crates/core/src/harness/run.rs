use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use log::info;
use serde::Serialize;

use super::{rounds_grid, write_metrics, write_rounds_csv, ExperimentConfig, MetricsRow, Request, Rounds, RoundsCell};
use crate::channel::BerCurve;
use crate::d3pg::{train_d3pg, ActorKind, D3pgConfig};
use crate::error::{Error, Result};
use crate::genmodel::{
    build_demo_dataset, expert_policy, generate_prompts, write_ndjson, DemoDataset, FixedStrategy, StrategyCatalog,
    StrategySelector, UniformStrategy,
};
use crate::imitation::{evaluate_policy, train_irl, IrlOutcome, StrategyPolicy};
use crate::provision::{brute_force_oracle, expected_reward, random_baseline, static_baseline, ServiceEnv};
use crate::rng;

/// Demonstration prompts and dataset for `seed`, drawn from the channel
/// stream.
pub fn build_demos(config: &ExperimentConfig, catalog: &StrategyCatalog, seed: u64) -> Result<DemoDataset> {
    let mut r = rng::stream(seed, rng::CHANNEL);
    let d = &config.demo;
    let prompts = generate_prompts(d.prompts, catalog, d.embedding_dim, seed, &mut r)?;
    build_demo_dataset(&prompts, catalog, &d.power_grid, &config.scenario.channel, d.distance, &mut r)
}

fn demo_link(config: &ExperimentConfig) -> Result<BerCurve> {
    BerCurve::new(&config.scenario.channel, config.demo.distance)
}

pub fn train_imitation(
    config: &ExperimentConfig,
    catalog: &StrategyCatalog,
    dataset: &DemoDataset,
    seed: u64,
) -> Result<IrlOutcome> {
    let expert = expert_policy(dataset)?;
    train_irl(dataset, &expert, catalog, &demo_link(config)?, &config.irl, &mut rng::stream(seed, rng::IRL))
}

/// Expected user-side score of each prompt-engineering policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UtilityReport {
    pub irl: f64,
    pub empirical: f64,
    pub random: f64,
}

/// Scores the learned policy against the always-richest-prompt and the
/// uniformly random policies on the demonstration prompts.
pub fn evaluate_selectors(
    config: &ExperimentConfig,
    catalog: &StrategyCatalog,
    dataset: &DemoDataset,
    policy: &StrategyPolicy,
    seed: u64,
) -> Result<UtilityReport> {
    let link = demo_link(config)?;
    let empirical = FixedStrategy(catalog.num_strategies() - 1);
    let random = UniformStrategy { num_strategies: catalog.num_strategies() };
    let selectors: [&dyn StrategySelector; 3] = [policy, &empirical, &random];
    let mut scores = [0.0; 3];
    for (i, (sel, score)) in selectors.iter().zip(&mut scores).enumerate() {
        let mut r = rng::substream(seed, rng::EVAL, i as u64);
        *score = evaluate_policy(
            *sel,
            &dataset.prompts,
            catalog,
            &link,
            &config.demo.power_grid,
            config.eval_trials,
            &mut r,
        )?
        .expected_score;
    }
    Ok(UtilityReport { irl: scores[0], empirical: scores[1], random: scores[2] })
}

/// Every demonstration prompt at every grid power, over the demonstration link.
pub fn demo_requests(config: &ExperimentConfig, dataset: &DemoDataset) -> Result<Vec<Request>> {
    let link = demo_link(config)?;
    let mut out = Vec::with_capacity(dataset.prompts.len() * config.demo.power_grid.len());
    for prompt in &dataset.prompts {
        for &power in &config.demo.power_grid {
            out.push(Request {
                prompt: prompt.clone(),
                power,
                p_total: config.scenario.channel.p_total,
                ber: link.ber(power)?,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedReport {
    pub seed: u64,
    pub irl_untrained_match_rate: f64,
    pub irl_match_rate: f64,
    pub utility: UtilityReport,
    pub reward_d3pg: f64,
    pub reward_ablation: f64,
    pub reward_static: f64,
    pub reward_random: f64,
    pub reward_oracle: f64,
    /// Mean greedy power of each user under the diffusion actor.
    pub power_d3pg: Vec<f64>,
    pub oracle_power: Vec<f64>,
    pub single_round_cells: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrderingChecks {
    pub irl_over_empirical: bool,
    pub empirical_over_random: bool,
    pub d3pg_at_least_ablation: bool,
    pub ablation_at_least_static: bool,
    pub irl_rounds_over_raw: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub experiment: String,
    pub seeds: Vec<SeedReport>,
    /// Median over seeds of each scalar metric.
    pub medians: BTreeMap<String, f64>,
    /// Checks on the medians.
    pub checks: OrderingChecks,
    /// Single-round cells of the learned policy over those of the raw
    /// prompt and of the richest prompt; absent when the denominator is 0.
    pub rounds_ratio_raw: Option<f64>,
    pub rounds_ratio_empirical: Option<f64>,
    pub error: Option<String>,
}

/// Median of a non-empty slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn single_round(cells: &[RoundsCell]) -> usize {
    cells.iter().filter(|c| c.rounds == Rounds::Finite(1)).count()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn run_seed(
    config: &ExperimentConfig,
    catalog: &StrategyCatalog,
    seed: u64,
    dir: &Path,
    rows: &mut Vec<MetricsRow>,
) -> Result<SeedReport> {
    std::fs::create_dir_all(dir)?;
    let name = config.name.as_str();

    info!("seed {seed}: demonstrations");
    let dataset = build_demos(config, catalog, seed)?;
    write_ndjson(&dataset.records, create(&dir.join("demos.ndjson"))?)?;

    info!("seed {seed}: imitation");
    let irl = train_imitation(config, catalog, &dataset, seed)?;
    irl.write_curve_csv(create(&dir.join("irl_curve.csv"))?)?;
    irl.policy.save(&dir.join("irl_policy.json"))?;
    let match_rate = irl.final_epoch().map_or(f64::NAN, |e| e.expert_match_rate);
    rows.push(MetricsRow::new(name, seed, 0, "irl_untrained_match_rate", irl.untrained_match_rate)?);
    rows.push(MetricsRow::new(name, seed, 0, "irl_match_rate", match_rate)?);

    let utility = evaluate_selectors(config, catalog, &dataset, &irl.policy, seed)?;
    rows.push(MetricsRow::new(name, seed, 0, "utility_irl", utility.irl)?);
    rows.push(MetricsRow::new(name, seed, 0, "utility_empirical", utility.empirical)?);
    rows.push(MetricsRow::new(name, seed, 0, "utility_random", utility.random)?);

    info!("seed {seed}: service rounds");
    let requests = demo_requests(config, &dataset)?;
    let empirical = FixedStrategy(catalog.num_strategies() - 1);
    let mut cells = Vec::new();
    let mut single_round_cells = BTreeMap::new();
    for (label, sel, metric) in [
        ("irl", &irl.policy as &dyn StrategySelector, "single_round_cells_irl"),
        ("empirical", &empirical, "single_round_cells_empirical"),
        ("raw", &FixedStrategy(0), "single_round_cells_raw"),
    ] {
        let grid = rounds_grid(label, sel, catalog, &requests, &config.rounds)?;
        let count = single_round(&grid);
        rows.push(MetricsRow::new(name, seed, 0, metric, count as f64)?);
        single_round_cells.insert(label.to_string(), count);
        cells.extend(grid);
    }
    write_rounds_csv(&cells, create(&dir.join("rounds.csv"))?)?;

    info!("seed {seed}: provisioning");
    let env = ServiceEnv::new(&config.scenario, catalog, &irl.policy, config.qoe, config.demo.embedding_dim, seed)?;
    let oracle = brute_force_oracle(&env, config.oracle_units)?;
    write_json(&oracle, &dir.join("oracle.json"))?;
    let stat = static_baseline(env.num_users(), env.p_total(), env.qoe_config())?;
    let reward_static = expected_reward(&env, &stat)?;
    let mut r = rng::substream(seed, rng::EVAL, 3);
    let mut reward_random = 0.0;
    for _ in 0..config.random_allocations {
        let a = random_baseline(env.num_users(), env.p_total(), env.qoe_config(), &mut r)?;
        reward_random += expected_reward(&env, &a)? / config.random_allocations as f64;
    }

    let d3pg = train_d3pg(&env, &config.d3pg, &mut rng::stream(seed, rng::D3PG))?;
    d3pg.write_curve_csv(create(&dir.join("d3pg_curve.csv"))?)?;
    d3pg.actor.save(&dir.join("d3pg_actor.json"))?;
    let ablation_config = D3pgConfig { actor: ActorKind::Gaussian, ..config.d3pg.clone() };
    let ablation = train_d3pg(&env, &ablation_config, &mut rng::substream(seed, rng::D3PG, 1))?;
    ablation.write_curve_csv(create(&dir.join("ablation_curve.csv"))?)?;
    ablation.actor.save(&dir.join("ablation_actor.json"))?;

    let total = env.p_total();
    for (i, p) in d3pg.greedy.mean_power.iter().enumerate() {
        rows.push(MetricsRow::new(name, seed, i as u64, "power_share_d3pg", p / total)?);
    }
    for (metric, v) in [
        ("reward_d3pg", d3pg.greedy.expected_reward),
        ("reward_ablation", ablation.greedy.expected_reward),
        ("reward_static", reward_static),
        ("reward_random", reward_random),
        ("reward_oracle", oracle.expected_reward),
    ] {
        rows.push(MetricsRow::new(name, seed, 0, metric, v)?);
    }

    Ok(SeedReport {
        seed,
        irl_untrained_match_rate: irl.untrained_match_rate,
        irl_match_rate: match_rate,
        utility,
        reward_d3pg: d3pg.greedy.expected_reward,
        reward_ablation: ablation.greedy.expected_reward,
        reward_static,
        reward_random,
        reward_oracle: oracle.expected_reward,
        power_d3pg: d3pg.greedy.mean_power.clone(),
        oracle_power: oracle.action.users.iter().map(|a| a.power).collect(),
        single_round_cells,
    })
}

fn summarize(name: &str, seeds: Vec<SeedReport>, error: Option<String>) -> Summary {
    let pick = |f: &dyn Fn(&SeedReport) -> f64| median(&seeds.iter().map(f).collect::<Vec<_>>());
    let cells =
        |label: &'static str| move |s: &SeedReport| s.single_round_cells.get(label).copied().unwrap_or(0) as f64;
    let mut medians = BTreeMap::new();
    let scalar: [(&str, &dyn Fn(&SeedReport) -> f64); 13] = [
        ("irl_untrained_match_rate", &|s| s.irl_untrained_match_rate),
        ("irl_match_rate", &|s| s.irl_match_rate),
        ("utility_irl", &|s| s.utility.irl),
        ("utility_empirical", &|s| s.utility.empirical),
        ("utility_random", &|s| s.utility.random),
        ("reward_d3pg", &|s| s.reward_d3pg),
        ("reward_ablation", &|s| s.reward_ablation),
        ("reward_static", &|s| s.reward_static),
        ("reward_random", &|s| s.reward_random),
        ("reward_oracle", &|s| s.reward_oracle),
        ("single_round_cells_irl", &cells("irl")),
        ("single_round_cells_empirical", &cells("empirical")),
        ("single_round_cells_raw", &cells("raw")),
    ];
    for (k, f) in scalar {
        medians.insert(k.to_string(), pick(f));
    }
    let m = |k: &str| medians.get(k).copied().unwrap_or(f64::NAN);
    let checks = OrderingChecks {
        irl_over_empirical: m("utility_irl") > m("utility_empirical"),
        empirical_over_random: m("utility_empirical") > m("utility_random"),
        d3pg_at_least_ablation: m("reward_d3pg") >= m("reward_ablation"),
        ablation_at_least_static: m("reward_ablation") >= m("reward_static"),
        irl_rounds_over_raw: m("single_round_cells_irl") > m("single_round_cells_raw"),
    };
    let ratio = |den: f64| (den > 0.0).then(|| m("single_round_cells_irl") / den);
    Summary {
        experiment: name.to_string(),
        rounds_ratio_raw: ratio(m("single_round_cells_raw")),
        rounds_ratio_empirical: ratio(m("single_round_cells_empirical")),
        seeds,
        medians,
        checks,
        error,
    }
}

/// Runs every stage for every seed and writes `metrics.csv`,
/// `summary.json` and one directory of artifacts per seed under `out`.
///
/// On failure the metrics and a summary carrying the error are still
/// written before the error is returned.
pub fn run_experiment(config: &ExperimentConfig, out: &Path) -> Result<Summary> {
    config.validate()?;
    let catalog = config.load_catalog()?;
    std::fs::create_dir_all(out)?;
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    let mut failure: Option<(u64, Error)> = None;
    for &seed in &config.seeds {
        match run_seed(config, &catalog, seed, &out.join(format!("seed-{seed}")), &mut rows) {
            Ok(report) => reports.push(report),
            Err(e) => {
                failure = Some((seed, e));
                break;
            }
        }
    }
    let summary = summarize(&config.name, reports, failure.as_ref().map(|(seed, e)| format!("seed {seed}: {e}")));
    write_metrics(&rows, &out.join("metrics.csv"))?;
    write_json(&summary, &out.join("summary.json"))?;
    match failure {
        Some((_, e)) => Err(e),
        None => Ok(summary),
    }
}
