//! Prompt-engineering strategies and the synthetic generation-quality oracle.
//!
//! The image model and the scoring agent are replaced by a per-(class,
//! strategy) Gaussian quality model. Transmission errors then scale the score
//! down in proportion to BER and to how detailed the resulting image is.

mod catalog;
mod dataset;
mod selector;

pub use catalog::{PromptClass, StrategyCatalog, NUM_STRATEGIES, STRATEGY_NAMES};
pub use dataset::{
    build_demo_dataset, expert_policy, read_ndjson, sample_power, write_ndjson, DemoDataset, DemoRecord, ExpertPolicy,
    DEFAULT_DEMO_DISTANCE, DEFAULT_POWER_GRID,
};
pub use selector::{ExpectedBest, FixedStrategy, SelectionContext, StrategySelector, UniformStrategy};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One service request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub id: u32,
    pub class_id: usize,
    /// Transmission sensitivity of the generated image, in `[0, 1]`.
    pub complexity: f64,
    /// Personal quality threshold on the 0–10 score scale.
    pub quality_threshold: f64,
    pub embedding: Vec<f64>,
}

impl PromptSpec {
    pub fn new(id: u32, class_id: usize, complexity: f64, quality_threshold: f64, embedding: Vec<f64>) -> Result<Self> {
        if !(0.0..=1.0).contains(&complexity) {
            return Err(Error::invalid(format!("complexity must lie in [0, 1], got {complexity}")));
        }
        if !(0.0..=10.0).contains(&quality_threshold) {
            return Err(Error::invalid(format!("quality threshold must lie in [0, 10], got {quality_threshold}")));
        }
        Ok(Self { id, class_id, complexity, quality_threshold, embedding })
    }
}

/// Prompt embedding: a seeded random unit vector per class followed by the
/// complexity as the last coordinate. Length is `dim`.
pub fn embed_prompt(class_id: usize, complexity: f64, dim: usize, seed: u64) -> Result<Vec<f64>> {
    if dim < 2 {
        return Err(Error::invalid(format!("embedding dimension must be at least 2, got {dim}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(class_id as u64);
    let mut v: Vec<f64> = (0..dim - 1).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v.push(complexity);
    Ok(v)
}

/// Degrades a raw score by transmission errors:
/// `raw * max(0, 1 - kappa * complexity * ber)`.
pub fn user_side_score(raw_score: f64, ber: f64, complexity: f64, kappa: f64) -> f64 {
    (raw_score * (1.0 - kappa * complexity * ber).max(0.0)).clamp(0.0, 10.0)
}

/// Draws `n` demonstration/service prompts. Classes cycle through the catalog;
/// complexity and thresholds are uniform on the given ranges.
pub fn generate_prompts<R: Rng + ?Sized>(
    n: usize,
    catalog: &StrategyCatalog,
    embedding_dim: usize,
    embedding_seed: u64,
    rng: &mut R,
) -> Result<Vec<PromptSpec>> {
    (0..n)
        .map(|i| {
            let class_id = i % catalog.classes.len();
            let complexity = rng.random_range(0.2..0.9);
            let threshold = rng.random_range(7.5..8.5);
            let emb = embed_prompt(class_id, complexity, embedding_dim, embedding_seed)?;
            PromptSpec::new(i as u32, class_id, complexity, threshold, emb)
        })
        .collect()
}

/// Number of suffix arrangements of `k` out of `corpus_size` corpus items,
/// summed over `k = 0..=corpus_size`.
pub fn count_optimized_prompts(corpus_size: u32) -> u128 {
    let mut total: u128 = 0;
    let mut falling: u128 = 1;
    for k in 0..=corpus_size {
        if k > 0 {
            falling *= u128::from(corpus_size - k + 1);
        }
        total += falling;
    }
    total
}
