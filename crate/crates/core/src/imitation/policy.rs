use std::path::Path;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{softmax, IrlConfig, IrlState};
use crate::approx::{Activation, Mlp, MlpSnapshot};
use crate::error::{Error, Result};
use crate::genmodel::{SelectionContext, StrategySelector};

pub const POLICY_MAGIC: &str = "AES-IRL-1";

/// Categorical prompt-engineering policy over the strategy catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyPolicy {
    net: Mlp,
    history_len: usize,
    num_strategies: usize,
}

impl StrategyPolicy {
    /// Fresh policy. The output layer starts at zero, so every state maps to
    /// the uniform distribution.
    pub fn new(config: &IrlConfig, num_strategies: usize, embedding_dim: usize, seed: u64) -> Result<Self> {
        let input = IrlState::encoded_len(config.history_len, num_strategies, embedding_dim);
        let mut net = Mlp::new(
            &[input, config.hidden, config.hidden, num_strategies],
            &[Activation::Tanh, Activation::Tanh, Activation::Identity],
            seed,
        )?;
        net.zero_output_layer();
        Self::from_net(net, config.history_len, num_strategies)
    }

    pub fn from_net(net: Mlp, history_len: usize, num_strategies: usize) -> Result<Self> {
        if net.output_dim() != num_strategies {
            return Err(Error::invalid(format!(
                "policy network emits {} logits for {num_strategies} strategies",
                net.output_dim()
            )));
        }
        if net.input_dim() < history_len * num_strategies + 1 {
            return Err(Error::invalid("policy network input too small for the history encoding"));
        }
        Ok(Self { net, history_len, num_strategies })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub(crate) fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn history_len(&self) -> usize {
        self.history_len
    }

    pub fn num_strategies(&self) -> usize {
        self.num_strategies
    }

    pub fn encode(&self, state: &IrlState) -> Result<Vec<f64>> {
        let x = state.encode(self.history_len, self.num_strategies)?;
        if x.len() != self.net.input_dim() {
            return Err(Error::invalid(format!(
                "encoded state has {} entries, policy expects {}",
                x.len(),
                self.net.input_dim()
            )));
        }
        Ok(x)
    }

    /// Action distribution for an encoded state.
    pub fn probs(&self, encoded: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.net.forward(encoded)?))
    }

    /// Most probable strategy; ties go to the lowest id.
    pub fn greedy(&self, encoded: &[f64]) -> Result<usize> {
        let p = self.probs(encoded)?;
        let mut best = 0;
        for (k, v) in p.iter().enumerate() {
            if *v > p[best] {
                best = k;
            }
        }
        Ok(best)
    }

    pub fn sample<R: Rng + ?Sized>(&self, encoded: &[f64], rng: &mut R) -> Result<usize> {
        Ok(sample_categorical(&self.probs(encoded)?, rng))
    }

    pub fn to_snapshot(&self) -> PolicySnapshot {
        PolicySnapshot {
            format: POLICY_MAGIC.to_string(),
            history_len: self.history_len,
            num_strategies: self.num_strategies,
            network: MlpSnapshot::from(&self.net),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(&self.to_snapshot()).expect("snapshot serializes"))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        serde_json::from_str::<PolicySnapshot>(&std::fs::read_to_string(path)?)?.into_policy()
    }
}

pub(crate) fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

/// Greedy selection from the policy's own observation: history, prompt
/// embedding and the power share. The BER in the context is not observed.
impl StrategySelector for StrategyPolicy {
    fn select(&self, ctx: &SelectionContext<'_>, _: &mut dyn RngCore) -> Result<usize> {
        let state = IrlState {
            history: ctx.history.to_vec(),
            embedding: ctx.prompt.embedding.clone(),
            power: (ctx.power / ctx.p_total).clamp(1e-12, 1.0),
        };
        self.greedy(&self.encode(&state)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySnapshot {
    pub format: String,
    pub history_len: usize,
    pub num_strategies: usize,
    pub network: MlpSnapshot,
}

impl PolicySnapshot {
    pub fn into_policy(self) -> Result<StrategyPolicy> {
        if self.format != POLICY_MAGIC {
            return Err(Error::invalid(format!(
                "unsupported policy format {:?}, expected {POLICY_MAGIC:?}",
                self.format
            )));
        }
        StrategyPolicy::from_net(self.network.into_mlp()?, self.history_len, self.num_strategies)
    }
}
