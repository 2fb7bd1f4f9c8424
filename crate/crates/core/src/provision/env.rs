use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{reward, Allocation, ProvisionAction, QoEConfig, RewardBreakdown};
use crate::channel::{BerCurve, ChannelParams, SnrReference};
use crate::error::{Error, Result};
use crate::genmodel::{embed_prompt, PromptSpec, SelectionContext, StrategyCatalog, StrategySelector};

/// One user of a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSpec {
    pub name: String,
    /// Prompt class name from the catalog.
    pub class: String,
    pub complexity: f64,
    pub threshold: f64,
    /// Distance to the edge server (m).
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub channel: ChannelParams,
    pub users: Vec<UserSpec>,
}

impl Default for Scenario {
    /// Three users asking for a dog, a garden and a city view with
    /// increasingly strict thresholds, all at the same distance.
    fn default() -> Self {
        let user = |name: &str, class: &str, threshold: f64| UserSpec {
            name: name.into(),
            class: class.into(),
            complexity: 0.6,
            threshold,
            distance: 30.0,
        };
        Self {
            channel: ChannelParams::default(),
            users: vec![user("dog", "animal", 7.6), user("garden", "garden", 8.2), user("city", "city", 8.5)],
        }
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.channel.validate().map_err(|e| Error::InvalidConfig(e.to_string()))?;
        if self.users.is_empty() {
            return Err(Error::InvalidConfig("a scenario needs at least one user".into()));
        }
        for u in &self.users {
            if !(u.distance > 0.0 && u.distance.is_finite()) {
                return Err(Error::InvalidConfig(format!("user {} has distance {}", u.name, u.distance)));
            }
            if !(u.threshold > 0.0 && u.threshold <= 10.0) {
                return Err(Error::InvalidConfig(format!("user {} has threshold {}", u.name, u.threshold)));
            }
            if !(0.0..=1.0).contains(&u.complexity) {
                return Err(Error::InvalidConfig(format!("user {} has complexity {}", u.name, u.complexity)));
            }
        }
        Ok(())
    }

    /// Prompt of each user, embedded the same way as demonstration prompts.
    pub fn prompts(
        &self,
        catalog: &StrategyCatalog,
        embedding_dim: usize,
        embedding_seed: u64,
    ) -> Result<Vec<PromptSpec>> {
        self.users
            .iter()
            .enumerate()
            .map(|(i, u)| {
                let class_id = catalog.classes.iter().position(|c| c.name == u.class).ok_or_else(|| {
                    Error::InvalidConfig(format!("user {} asks for unknown class {:?}", u.name, u.class))
                })?;
                let emb = embed_prompt(class_id, u.complexity, embedding_dim, embedding_seed)?;
                PromptSpec::new(i as u32, class_id, u.complexity, u.threshold, emb)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserDiagnostics {
    pub strategy: usize,
    pub ber: f64,
    pub best_quality: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepOutcome {
    pub breakdown: RewardBreakdown,
    pub users: Vec<UserDiagnostics>,
}

/// The edge server serving one round of requests. Strategy choice is
/// delegated to a prompt-engineering selector; image quality comes from the
/// catalog and is degraded by each link's BER.
pub struct ServiceEnv<'a> {
    scenario: Scenario,
    prompts: Vec<PromptSpec>,
    links: Vec<BerCurve>,
    catalog: &'a StrategyCatalog,
    selector: &'a dyn StrategySelector,
    qoe: QoEConfig,
}

impl<'a> ServiceEnv<'a> {
    pub fn new(
        scenario: &Scenario,
        catalog: &'a StrategyCatalog,
        selector: &'a dyn StrategySelector,
        qoe: QoEConfig,
        embedding_dim: usize,
        embedding_seed: u64,
    ) -> Result<Self> {
        scenario.validate()?;
        qoe.validate()?;
        let prompts = scenario.prompts(catalog, embedding_dim, embedding_seed)?;
        let links =
            scenario.users.iter().map(|u| BerCurve::new(&scenario.channel, u.distance)).collect::<Result<Vec<_>>>()?;
        Ok(Self { scenario: scenario.clone(), prompts, links, catalog, selector, qoe })
    }

    pub fn num_users(&self) -> usize {
        self.prompts.len()
    }

    pub fn p_total(&self) -> f64 {
        self.scenario.channel.p_total
    }

    pub fn qoe_config(&self) -> &QoEConfig {
        &self.qoe
    }

    pub fn catalog(&self) -> &StrategyCatalog {
        self.catalog
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn prompts(&self) -> &[PromptSpec] {
        &self.prompts
    }

    pub fn thresholds(&self) -> Vec<f64> {
        self.scenario.users.iter().map(|u| u.threshold).collect()
    }

    pub fn ber(&self, user: usize, power: f64) -> Result<f64> {
        self.links[user].ber(power)
    }

    /// Mean SNR at a 1 m reference distance with the whole budget, in dB.
    pub fn reference_snr_db(&self) -> f64 {
        let c = &self.scenario.channel;
        10.0 * c.mean_snr(c.p_total, 1.0, SnrReference::WithPathLoss).log10()
    }

    /// Observation of the provisioning agent. Per user: prompt embedding,
    /// distance / 100 m and threshold / 10; then the budget / 10 W and the
    /// reference SNR in dB / 100.
    pub fn state_encoding(&self) -> Vec<f64> {
        let mut x = Vec::new();
        for (p, u) in self.prompts.iter().zip(&self.scenario.users) {
            x.extend_from_slice(&p.embedding);
            x.push(u.distance / 100.0);
            x.push(u.threshold / 10.0);
        }
        x.push(self.p_total() / 10.0);
        x.push(self.reference_snr_db() / 100.0);
        x
    }

    pub fn select_strategy(&self, user: usize, power: f64, ber: f64, rng: &mut dyn RngCore) -> Result<usize> {
        let ctx = SelectionContext { prompt: &self.prompts[user], power, p_total: self.p_total(), ber, history: &[] };
        self.selector.select(&ctx, rng)
    }

    /// Serves every user once: strategy choice, `N_i` quality draws, BER
    /// degradation and the resulting reward.
    pub fn step(&self, action: &ProvisionAction, rng: &mut dyn RngCore) -> Result<StepOutcome> {
        if action.users.len() != self.num_users() {
            return Err(Error::invalid(format!(
                "action has {} allocations for {} users",
                action.users.len(),
                self.num_users()
            )));
        }
        let mut qualities = Vec::with_capacity(self.num_users());
        let mut users = Vec::with_capacity(self.num_users());
        for (i, Allocation { inferences, power }) in action.users.iter().enumerate() {
            let ber = self.ber(i, *power)?;
            let strategy = self.select_strategy(i, *power, ber, rng)?;
            let prompt = &self.prompts[i];
            let mut qs = Vec::with_capacity(*inferences);
            for _ in 0..*inferences {
                let raw = self.catalog.raw_quality(prompt, strategy, rng)?;
                qs.push(self.catalog.degrade(raw, prompt, strategy, ber));
            }
            let best_quality = qs.iter().copied().fold(0.0, f64::max);
            users.push(UserDiagnostics { strategy, ber, best_quality });
            qualities.push(qs);
        }
        let breakdown = reward(&self.thresholds(), self.p_total(), action, &qualities, &self.qoe)?;
        Ok(StepOutcome { breakdown, users })
    }
}
