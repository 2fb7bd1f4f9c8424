use rand::{Rng, RngCore};

use super::{PromptSpec, StrategyCatalog};
use crate::error::{Error, Result};

/// What a prompt-engineering policy may look at when choosing a strategy.
#[derive(Debug, Clone, Copy)]
pub struct SelectionContext<'a> {
    pub prompt: &'a PromptSpec,
    /// Transmission power allocated to this request (W).
    pub power: f64,
    pub p_total: f64,
    /// Expected BER of the link. Learned policies ignore it; the oracle
    /// selector uses it.
    pub ber: f64,
    /// Previously chosen strategies, oldest first.
    pub history: &'a [usize],
}

pub trait StrategySelector {
    fn select(&self, ctx: &SelectionContext<'_>, rng: &mut dyn RngCore) -> Result<usize>;
}

/// Always the same strategy. Strategy 0 is the raw prompt; strategy 6 is the
/// "empirical" choice that is best without transmission errors.
#[derive(Debug, Clone, Copy)]
pub struct FixedStrategy(pub usize);

impl StrategySelector for FixedStrategy {
    fn select(&self, _: &SelectionContext<'_>, _: &mut dyn RngCore) -> Result<usize> {
        Ok(self.0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct UniformStrategy {
    pub num_strategies: usize,
}

impl StrategySelector for UniformStrategy {
    fn select(&self, _: &SelectionContext<'_>, rng: &mut dyn RngCore) -> Result<usize> {
        if self.num_strategies == 0 {
            return Err(Error::invalid("uniform selector over zero strategies"));
        }
        Ok(rng.random_range(0..self.num_strategies))
    }
}

/// Picks the strategy with the highest expected user-side score given the
/// link BER. Needs the quality oracle, so it is a reference, not a policy.
#[derive(Debug, Clone, Copy)]
pub struct ExpectedBest<'a> {
    pub catalog: &'a StrategyCatalog,
}

impl StrategySelector for ExpectedBest<'_> {
    fn select(&self, ctx: &SelectionContext<'_>, _: &mut dyn RngCore) -> Result<usize> {
        self.catalog.best_strategy(ctx.prompt, ctx.ber)
    }
}
