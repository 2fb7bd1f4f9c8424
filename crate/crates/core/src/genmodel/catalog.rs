use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{user_side_score, PromptSpec};
use crate::error::{Error, Result};
use crate::numerics::{normal_cdf, normal_pdf};

pub const NUM_STRATEGIES: usize = 7;

pub const STRATEGY_NAMES: [&str; NUM_STRATEGIES] = [
    "Raw prompt",
    "Object description",
    "Object description + environment",
    "Object description + mood",
    "Object description + lighting",
    "Object description + quality booster",
    "Object description + negative effects",
];

const DEFAULT_CATALOG: &str = include_str!("../../config/catalog.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptClass {
    pub name: String,
    /// Mean raw score per strategy.
    pub means: Vec<f64>,
    /// Raw-score standard deviation per strategy.
    pub stds: Vec<f64>,
}

/// The filtered strategy set with its per-class quality model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyCatalog {
    pub strategies: Vec<String>,
    pub classes: Vec<PromptClass>,
    /// Multiplier on prompt complexity per strategy: richer prompts produce
    /// more detailed images that suffer more from bit errors.
    pub transmission_sensitivity: Vec<f64>,
    /// Degradation strength in `user_side_score`.
    pub kappa: f64,
}

impl Default for StrategyCatalog {
    fn default() -> Self {
        Self::from_json(DEFAULT_CATALOG).expect("bundled catalog is valid")
    }
}

impl StrategyCatalog {
    pub fn from_json(text: &str) -> Result<Self> {
        let catalog: Self = serde_json::from_str(text)?;
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.strategies.len();
        if n == 0 || self.classes.is_empty() {
            return Err(Error::InvalidConfig("catalog needs strategies and classes".into()));
        }
        if self.transmission_sensitivity.len() != n {
            return Err(Error::InvalidConfig(format!(
                "transmission_sensitivity has {} entries for {n} strategies",
                self.transmission_sensitivity.len()
            )));
        }
        if self.transmission_sensitivity.iter().any(|s| !(*s >= 0.0)) || !(self.kappa >= 0.0) {
            return Err(Error::InvalidConfig("sensitivities and kappa must be non-negative".into()));
        }
        for class in &self.classes {
            if class.means.len() != n || class.stds.len() != n {
                return Err(Error::InvalidConfig(format!("class {:?} must list {n} means and stds", class.name)));
            }
            if class.stds.iter().any(|s| !(*s > 0.0)) {
                return Err(Error::InvalidConfig(format!("class {:?} has a non-positive std", class.name)));
            }
            if class.means.iter().any(|m| !(0.0..=10.0).contains(m)) {
                return Err(Error::InvalidConfig(format!("class {:?} has a mean outside [0, 10]", class.name)));
            }
        }
        Ok(())
    }

    pub fn num_strategies(&self) -> usize {
        self.strategies.len()
    }

    fn class(&self, prompt: &PromptSpec) -> Result<&PromptClass> {
        self.classes
            .get(prompt.class_id)
            .ok_or_else(|| Error::invalid(format!("unknown prompt class {}", prompt.class_id)))
    }

    fn check_strategy(&self, strategy: usize) -> Result<()> {
        if strategy >= self.num_strategies() {
            return Err(Error::invalid(format!("strategy {strategy} outside catalog of {}", self.num_strategies())));
        }
        Ok(())
    }

    /// (mean, std) of the raw score.
    pub fn quality_params(&self, prompt: &PromptSpec, strategy: usize) -> Result<(f64, f64)> {
        self.check_strategy(strategy)?;
        let class = self.class(prompt)?;
        Ok((class.means[strategy], class.stds[strategy]))
    }

    /// One synthetic generation-quality score on the 0–10 scale.
    pub fn raw_quality<R: Rng + ?Sized>(&self, prompt: &PromptSpec, strategy: usize, rng: &mut R) -> Result<f64> {
        let (mean, std) = self.quality_params(prompt, strategy)?;
        Ok(sample_quality(mean, std, rng))
    }

    /// Complexity seen by the degradation model for this strategy.
    pub fn effective_complexity(&self, prompt: &PromptSpec, strategy: usize) -> f64 {
        (prompt.complexity * self.transmission_sensitivity[strategy]).min(1.0)
    }

    pub fn degrade(&self, raw: f64, prompt: &PromptSpec, strategy: usize, ber: f64) -> f64 {
        user_side_score(raw, ber, self.effective_complexity(prompt, strategy), self.kappa)
    }

    /// Expected user-side score, using the exact mean of the clamped normal.
    pub fn expected_user_score(&self, prompt: &PromptSpec, strategy: usize, ber: f64) -> Result<f64> {
        let (mean, std) = self.quality_params(prompt, strategy)?;
        let factor = (1.0 - self.kappa * self.effective_complexity(prompt, strategy) * ber).max(0.0);
        Ok(clamped_normal_mean(mean, std, 0.0, 10.0) * factor)
    }

    /// Strategy with the highest expected user-side score; ties go to the
    /// lowest id.
    pub fn best_strategy(&self, prompt: &PromptSpec, ber: f64) -> Result<usize> {
        let mut best = (0, f64::NEG_INFINITY);
        for k in 0..self.num_strategies() {
            let v = self.expected_user_score(prompt, k, ber)?;
            if v > best.1 {
                best = (k, v);
            }
        }
        Ok(best.0)
    }
}

/// Normal draw clamped to `[0, 10]`; a zero std returns the mean itself.
pub(crate) fn sample_quality<R: Rng + ?Sized>(mean: f64, std: f64, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    (mean + std * z).clamp(0.0, 10.0)
}

/// `E[clamp(X, lo, hi)]` for `X ~ N(mean, std^2)`.
pub(crate) fn clamped_normal_mean(mean: f64, std: f64, lo: f64, hi: f64) -> f64 {
    if std == 0.0 {
        return mean.clamp(lo, hi);
    }
    let a = (lo - mean) / std;
    let b = (hi - mean) / std;
    lo * normal_cdf(a)
        + hi * (1.0 - normal_cdf(b))
        + mean * (normal_cdf(b) - normal_cdf(a))
        + std * (normal_pdf(a) - normal_pdf(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genmodel::embed_prompt;
    use crate::rng;

    fn prompt(class_id: usize) -> PromptSpec {
        PromptSpec::new(0, class_id, 0.5, 8.0, embed_prompt(class_id, 0.5, 8, 1).unwrap()).unwrap()
    }

    #[test]
    fn default_catalog_shape() {
        let c = StrategyCatalog::default();
        assert_eq!(c.num_strategies(), NUM_STRATEGIES);
        assert_eq!(c.strategies[0], "Raw prompt");
        assert_eq!(c.classes.len(), 6);
        for class in &c.classes {
            let best = class.means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let worst = class.means.iter().cloned().fold(f64::INFINITY, f64::min);
            assert_eq!(class.means[6], best, "{}", class.name);
            assert_eq!(class.means[0], worst, "{}", class.name);
            assert!(worst >= 6.0 && best <= 8.6);
            assert!(class.stds.iter().all(|s| (*s - 0.6).abs() < 1e-12));
        }
    }

    #[test]
    fn zero_std_returns_mean() {
        let mut r = rng::stream(0, "q");
        for _ in 0..10 {
            assert_eq!(sample_quality(7.25, 0.0, &mut r), 7.25);
        }
    }

    #[test]
    fn empirical_mean_matches() {
        let mut r = rng::stream(1, "q");
        let n = 10_000;
        let m: f64 = (0..n).map(|_| sample_quality(7.5, 0.6, &mut r)).sum::<f64>() / n as f64;
        assert!((m - 7.5).abs() < 0.05, "{m}");
    }

    #[test]
    fn strategy_six_beats_raw_for_every_class() {
        let c = StrategyCatalog::default();
        let mut r = rng::stream(2, "q");
        for class_id in 0..c.classes.len() {
            let p = prompt(class_id);
            let mean = |k: usize, r: &mut rng::Stream| {
                (0..10_000).map(|_| c.raw_quality(&p, k, r).unwrap()).sum::<f64>() / 1e4
            };
            assert!(mean(6, &mut r) > mean(0, &mut r));
        }
    }

    #[test]
    fn unknown_strategy_is_rejected() {
        let c = StrategyCatalog::default();
        let mut r = rng::stream(3, "q");
        assert!(matches!(c.raw_quality(&prompt(0), 7, &mut r), Err(Error::InvalidArgument(_))));
        assert!(c.raw_quality(&prompt(42), 0, &mut r).is_err());
    }

    #[test]
    fn clamped_mean_matches_sampling() {
        let mut r = rng::stream(4, "q");
        let n = 400_000;
        let emp: f64 = (0..n).map(|_| sample_quality(9.5, 0.8, &mut r)).sum::<f64>() / n as f64;
        let exact = clamped_normal_mean(9.5, 0.8, 0.0, 10.0);
        assert!((emp - exact).abs() < 3e-3, "{emp} vs {exact}");
        assert!(exact < 9.5);
        assert!((clamped_normal_mean(5.0, 0.5, 0.0, 10.0) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_malformed_catalog() {
        let mut c = StrategyCatalog::default();
        c.classes[0].stds[2] = 0.0;
        assert!(c.validate().is_err());
        let mut c = StrategyCatalog::default();
        c.transmission_sensitivity.pop();
        assert!(c.validate().is_err());
        assert!(StrategyCatalog::from_json("{\"strategies\": []}").is_err());
    }

    #[test]
    fn json_round_trip() {
        let c = StrategyCatalog::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(StrategyCatalog::from_json(&text).unwrap(), c);
    }
}
