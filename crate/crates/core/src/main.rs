use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use aigc_edge_sim::channel::{audit_closed_form, ber_table, ber_table_grid, write_ber_table, BER_TABLE_M};
use aigc_edge_sim::d3pg::train_d3pg;
use aigc_edge_sim::error::{Error, Result};
use aigc_edge_sim::genmodel::{
    read_ndjson, write_ndjson, DemoDataset, ExpectedBest, FixedStrategy, PromptSpec, StrategyCatalog, StrategySelector,
};
use aigc_edge_sim::harness::{
    build_demos, demo_requests, evaluate_selectors, parse_config, rounds_grid, run_experiment, train_imitation,
    write_rounds_csv, ExperimentConfig,
};
use aigc_edge_sim::imitation::StrategyPolicy;
use aigc_edge_sim::provision::{brute_force_oracle, Scenario, ServiceEnv};
use aigc_edge_sim::rng;

/// Simulator for prompt-engineered generative services at the wireless edge.
#[derive(Debug, Parser)]
#[command(name = "aigc-edge-sim", version)]
struct Cli {
    /// Experiment config (JSON); built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed. `run` uses the config's seed list unless this is given.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; the config's `output_dir` when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Link-level tables.
    #[command(subcommand)]
    Channel(ChannelCommand),
    /// Builds the demonstration dataset.
    BuildDemos,
    /// Trains the prompt-engineering policy by imitation.
    TrainIrl(DemoArgs),
    /// Trains the diffusion provisioning actor.
    TrainD3pg(EnvArgs),
    /// Exhaustive search for the best provisioning action.
    Oracle(EnvArgs),
    /// Service rounds needed per threshold and batch size.
    Rounds(RoundsArgs),
    /// Every stage for every seed, with metrics and a summary.
    Run,
}

#[derive(Debug, Subcommand)]
enum ChannelCommand {
    /// BER against mean SNR for several fading shapes.
    BerTable,
}

#[derive(Debug, Args)]
struct DemoArgs {
    /// Directory holding `demos.ndjson` and `prompts.json` from
    /// `build-demos`; rebuilt from the seed when absent.
    #[arg(long)]
    demos: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EnvArgs {
    /// Scenario file overriding the config's scenario.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Trained policy selecting each user's strategy; the expected-best
    /// strategy when absent.
    #[arg(long)]
    policy: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RoundsArgs {
    #[command(flatten)]
    demos: DemoArgs,
    /// Trained policy to analyse alongside the raw and richest prompts.
    #[arg(long)]
    policy: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("AES_LOG", "info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => parse_config(path).map_err(|e| match e {
            Error::Io(io) => Error::NotFound(format!("config {}: {io}", path.display())),
            other => other,
        })?,
        None => ExperimentConfig::default(),
    };
    let out = cli.out.clone().unwrap_or_else(|| config.output_dir.clone());
    std::fs::create_dir_all(&out)?;
    let seed = cli.seed.unwrap_or(0);
    let catalog = config.load_catalog()?;

    match cli.command {
        Command::Channel(ChannelCommand::BerTable) => {
            let grid = ber_table_grid();
            write_ber_table(&ber_table(&BER_TABLE_M, &grid)?, create(&out.join("ber_table.csv"))?)?;
            write_json(&audit_closed_form(1.0, &grid), &out.join("closed_form_audit.json"))?;
        }
        Command::BuildDemos => {
            let dataset = build_demos(&config, &catalog, seed)?;
            info!("{} demonstrations over {} prompts", dataset.records.len(), dataset.prompts.len());
            write_ndjson(&dataset.records, create(&out.join("demos.ndjson"))?)?;
            write_json(&dataset.prompts, &out.join("prompts.json"))?;
        }
        Command::TrainIrl(args) => {
            let dataset = load_or_build_demos(&config, &catalog, seed, args.demos.as_deref())?;
            let outcome = train_imitation(&config, &catalog, &dataset, seed)?;
            outcome.write_curve_csv(create(&out.join("irl_curve.csv"))?)?;
            outcome.policy.save(&out.join("irl_policy.json"))?;
            #[derive(Serialize)]
            struct IrlReport {
                untrained_match_rate: f64,
                match_rate: Option<f64>,
                utility: aigc_edge_sim::harness::UtilityReport,
            }
            let report = IrlReport {
                untrained_match_rate: outcome.untrained_match_rate,
                match_rate: outcome.final_epoch().map(|e| e.expert_match_rate),
                utility: evaluate_selectors(&config, &catalog, &dataset, &outcome.policy, seed)?,
            };
            write_json(&report, &out.join("irl_eval.json"))?;
        }
        Command::TrainD3pg(args) => {
            apply_scenario(&mut config, args.scenario.as_deref())?;
            let policy = load_policy(args.policy.as_deref())?;
            let fallback = ExpectedBest { catalog: &catalog };
            let selector: &dyn StrategySelector = policy.as_ref().map_or(&fallback, |p| p);
            let env =
                ServiceEnv::new(&config.scenario, &catalog, selector, config.qoe, config.demo.embedding_dim, seed)?;
            let outcome = train_d3pg(&env, &config.d3pg, &mut rng::stream(seed, rng::D3PG))?;
            info!("greedy expected reward {:.4}", outcome.greedy.expected_reward);
            outcome.write_curve_csv(create(&out.join("d3pg_curve.csv"))?)?;
            outcome.actor.save(&out.join("d3pg_actor.json"))?;
            write_json(&outcome.greedy, &out.join("d3pg_greedy.json"))?;
        }
        Command::Oracle(args) => {
            apply_scenario(&mut config, args.scenario.as_deref())?;
            let policy = load_policy(args.policy.as_deref())?;
            let fallback = ExpectedBest { catalog: &catalog };
            let selector: &dyn StrategySelector = policy.as_ref().map_or(&fallback, |p| p);
            let env =
                ServiceEnv::new(&config.scenario, &catalog, selector, config.qoe, config.demo.embedding_dim, seed)?;
            let result = brute_force_oracle(&env, config.oracle_units)?;
            let text = serde_json::to_string_pretty(&result)?;
            println!("{text}");
            std::fs::write(out.join("oracle.json"), text + "\n")?;
        }
        Command::Rounds(args) => {
            let dataset = load_or_build_demos(&config, &catalog, seed, args.demos.demos.as_deref())?;
            let requests = demo_requests(&config, &dataset)?;
            let policy = load_policy(args.policy.as_deref())?;
            let richest = FixedStrategy(catalog.num_strategies() - 1);
            let raw = FixedStrategy(0);
            let mut selectors: Vec<(&str, &dyn StrategySelector)> = Vec::new();
            if let Some(p) = &policy {
                selectors.push(("irl", p));
            }
            selectors.push(("empirical", &richest));
            selectors.push(("raw", &raw));
            let mut cells = Vec::new();
            for (label, sel) in selectors {
                cells.extend(rounds_grid(label, sel, &catalog, &requests, &config.rounds)?);
            }
            write_rounds_csv(&cells, create(&out.join("rounds.csv"))?)?;
        }
        Command::Run => {
            if let Some(s) = cli.seed {
                config.seeds = vec![s];
            }
            let summary = run_experiment(&config, &out)?;
            println!("{}", serde_json::to_string_pretty(&summary.medians)?);
        }
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

fn apply_scenario(config: &mut ExperimentConfig, path: Option<&Path>) -> Result<()> {
    if let Some(path) = path {
        config.scenario = Scenario::load(path)?;
        config.validate()?;
    }
    Ok(())
}

fn load_policy(path: Option<&Path>) -> Result<Option<StrategyPolicy>> {
    path.map(StrategyPolicy::load).transpose()
}

fn load_or_build_demos(
    config: &ExperimentConfig,
    catalog: &StrategyCatalog,
    seed: u64,
    dir: Option<&Path>,
) -> Result<DemoDataset> {
    let Some(dir) = dir else {
        return build_demos(config, catalog, seed);
    };
    let records = read_ndjson(BufReader::new(File::open(dir.join("demos.ndjson"))?))?;
    let prompts: Vec<PromptSpec> = serde_json::from_str(&std::fs::read_to_string(dir.join("prompts.json"))?)?;
    if records.is_empty() || prompts.is_empty() {
        return Err(Error::InvalidArgument(format!("no demonstrations in {}", dir.display())));
    }
    let mut power_grid: Vec<f64> = Vec::new();
    for r in &records {
        if !power_grid.contains(&r.power) {
            power_grid.push(r.power);
        }
    }
    power_grid.sort_by(f64::total_cmp);
    Ok(DemoDataset { records, power_grid, prompts })
}
