use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{PromptSpec, StrategyCatalog};
use crate::channel::{expected_ber_shadowed, ChannelParams};
use crate::error::{Error, Result};

/// Transmission powers (W) at which demonstrations are recorded.
pub const DEFAULT_POWER_GRID: [f64; 5] = [0.2, 0.5, 1.0, 2.0, 3.0];
/// Distance (m) of the user who scores demonstrations.
pub const DEFAULT_DEMO_DISTANCE: f64 = 40.0;

/// One demonstration entry: a strategy applied to a prompt, transmitted at a
/// given power, and the score the user would report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoRecord {
    pub power: f64,
    pub prompt_id: u32,
    pub strategy_id: usize,
    /// Opaque corpus identifier; carries no information once strategies are
    /// filtered to the catalog.
    pub corpus_tag: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoDataset {
    pub records: Vec<DemoRecord>,
    pub power_grid: Vec<f64>,
    pub prompts: Vec<PromptSpec>,
}

/// Traverses every prompt × strategy × power cell. Each (prompt, strategy)
/// image is generated once and then degraded at every grid power.
pub fn build_demo_dataset<R: Rng + ?Sized>(
    prompts: &[PromptSpec],
    catalog: &StrategyCatalog,
    power_grid: &[f64],
    channel: &ChannelParams,
    distance: f64,
    rng: &mut R,
) -> Result<DemoDataset> {
    if prompts.is_empty() || power_grid.is_empty() || catalog.num_strategies() == 0 {
        return Err(Error::invalid("demonstration dataset needs prompts, powers and strategies"));
    }
    if let Some(p) = power_grid.iter().find(|p| !(**p > 0.0 && **p <= channel.p_total)) {
        return Err(Error::invalid(format!("grid power {p} outside (0, {}]", channel.p_total)));
    }
    let bers = power_grid.iter().map(|p| expected_ber_shadowed(channel, *p, distance)).collect::<Result<Vec<_>>>()?;
    let mut records = Vec::with_capacity(prompts.len() * catalog.num_strategies() * power_grid.len());
    for prompt in prompts {
        for strategy in 0..catalog.num_strategies() {
            let raw = catalog.raw_quality(prompt, strategy, rng)?;
            for (power, ber) in power_grid.iter().zip(&bers) {
                records.push(DemoRecord {
                    power: *power,
                    prompt_id: prompt.id,
                    strategy_id: strategy,
                    corpus_tag: format!("c{}", prompt.id),
                    score: catalog.degrade(raw, prompt, strategy, *ber),
                });
            }
        }
    }
    Ok(DemoDataset { records, power_grid: power_grid.to_vec(), prompts: prompts.to_vec() })
}

/// Per-(prompt, power bucket) argmax of recorded scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertPolicy {
    power_grid: Vec<f64>,
    table: BTreeMap<(u32, usize), (usize, f64)>,
}

impl ExpertPolicy {
    pub fn power_grid(&self) -> &[f64] {
        &self.power_grid
    }

    /// Index of the grid power nearest to `power` (lower index on ties).
    pub fn bucket(&self, power: f64) -> usize {
        nearest_index(&self.power_grid, power)
    }

    pub fn lookup(&self, prompt_id: u32, power: f64) -> Result<usize> {
        let bucket = self.bucket(power);
        self.table
            .get(&(prompt_id, bucket))
            .map(|(s, _)| *s)
            .ok_or_else(|| Error::NotFound(format!("no demonstrations for prompt {prompt_id} at power {power}")))
    }

    /// Recorded score of the expert's choice in a cell.
    pub fn best_score(&self, prompt_id: u32, power: f64) -> Result<f64> {
        let bucket = self.bucket(power);
        self.table
            .get(&(prompt_id, bucket))
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::NotFound(format!("no demonstrations for prompt {prompt_id} at power {power}")))
    }

    pub fn cells(&self) -> impl Iterator<Item = ((u32, f64), usize)> + '_ {
        self.table.iter().map(|((id, b), (s, _))| ((*id, self.power_grid[*b]), *s))
    }
}

pub(crate) fn nearest_index(grid: &[f64], value: f64) -> usize {
    let mut best = 0;
    for (i, g) in grid.iter().enumerate() {
        if (g - value).abs() < (grid[best] - value).abs() {
            best = i;
        }
    }
    best
}

/// Draws a power whose nearest grid point is uniform over the grid: pick a
/// grid point, then a uniform offset within its nearest-neighbour cell.
/// The extreme cells are truncated at the first and last grid points.
pub fn sample_power<R: Rng + ?Sized>(grid: &[f64], rng: &mut R) -> f64 {
    let i = rng.random_range(0..grid.len());
    let lo = if i == 0 { grid[0] } else { 0.5 * (grid[i - 1] + grid[i]) };
    let hi = if i + 1 == grid.len() { grid[i] } else { 0.5 * (grid[i] + grid[i + 1]) };
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

pub fn expert_policy(dataset: &DemoDataset) -> Result<ExpertPolicy> {
    if dataset.records.is_empty() {
        return Err(Error::invalid("cannot extract an expert from an empty dataset"));
    }
    let mut grid = dataset.power_grid.clone();
    if grid.is_empty() {
        grid = dataset.records.iter().map(|r| r.power).collect();
        grid.sort_by(f64::total_cmp);
        grid.dedup();
    }
    let mut table: BTreeMap<(u32, usize), (usize, f64)> = BTreeMap::new();
    for r in &dataset.records {
        let key = (r.prompt_id, nearest_index(&grid, r.power));
        let entry = table.entry(key).or_insert((r.strategy_id, r.score));
        if r.score > entry.1 || (r.score == entry.1 && r.strategy_id < entry.0) {
            *entry = (r.strategy_id, r.score);
        }
    }
    Ok(ExpertPolicy { power_grid: grid, table })
}

pub fn write_ndjson<W: Write>(records: &[DemoRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_ndjson<R: BufRead>(input: R) -> Result<Vec<DemoRecord>> {
    let mut records = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            column: e.column(),
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}
