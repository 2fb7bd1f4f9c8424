use std::io::Write;

use rand::SeedableRng;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::genmodel::{PromptSpec, SelectionContext, StrategyCatalog, StrategySelector};
use crate::numerics::normal_cdf;
use crate::rng::Stream;

/// Rounds needed to deliver an acceptable image with the requested
/// confidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rounds {
    Finite(u64),
    /// No image can ever meet the threshold.
    Unbounded,
}

impl Serialize for Rounds {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Rounds::Finite(r) => s.serialize_u64(*r),
            Rounds::Unbounded => s.serialize_str("unbounded"),
        }
    }
}

impl std::fmt::Display for Rounds {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Rounds::Finite(r) => write!(f, "{r}"),
            Rounds::Unbounded => f.write_str("unbounded"),
        }
    }
}

/// Smallest `r` with `1 - (1 - s)^r >= confidence`, where
/// `s = 1 - (1 - p_image)^n` is the chance that one round of `n` images
/// contains an acceptable one.
pub fn rounds_for_probability(p_image: f64, n: usize, confidence: f64) -> Result<Rounds> {
    if !(0.0..=1.0).contains(&p_image) {
        return Err(Error::invalid(format!("image success probability {p_image} outside [0, 1]")));
    }
    if n == 0 || !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::invalid(format!("need n >= 1 and confidence in (0, 1), got {n} and {confidence}")));
    }
    if p_image == 0.0 {
        return Ok(Rounds::Unbounded);
    }
    // ln(1 - s) = n ln(1 - p), kept in log space for p near 0 or 1.
    let log_fail = n as f64 * (-p_image).ln_1p();
    let ok = |r: u64| -(r as f64 * log_fail).exp_m1() >= confidence;
    if log_fail == f64::NEG_INFINITY || ok(1) {
        return Ok(Rounds::Finite(1));
    }
    let mut r = ((1.0 - confidence).ln() / log_fail).ceil().max(1.0) as u64;
    while r > 1 && ok(r - 1) {
        r -= 1;
    }
    while !ok(r) {
        r += 1;
    }
    Ok(Rounds::Finite(r))
}

/// Rounds for images whose quality is `Normal(mean, std)`.
pub fn service_rounds(mean: f64, std: f64, threshold: f64, n: usize, confidence: f64) -> Result<Rounds> {
    if !(std > 0.0) {
        return Err(Error::invalid(format!("quality std must be positive, got {std}")));
    }
    rounds_for_probability(normal_cdf((mean - threshold) / std), n, confidence)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoundsConfig {
    pub confidence: f64,
    pub threshold_min: f64,
    pub threshold_max: f64,
    pub threshold_step: f64,
    /// Images per round run over `1..=images_max`.
    pub images_max: usize,
}

impl Default for RoundsConfig {
    fn default() -> Self {
        Self { confidence: 0.9, threshold_min: 7.5, threshold_max: 8.5, threshold_step: 0.1, images_max: 5 }
    }
}

impl RoundsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.confidence > 0.0 && self.confidence < 1.0)
            || !(self.threshold_step > 0.0)
            || !(self.threshold_min <= self.threshold_max)
            || self.images_max == 0
        {
            return Err(Error::InvalidConfig(format!("invalid service-round grid: {self:?}")));
        }
        Ok(())
    }

    pub fn thresholds(&self) -> Vec<f64> {
        let n = ((self.threshold_max - self.threshold_min) / self.threshold_step + 1e-9).floor() as usize;
        (0..=n).map(|i| self.threshold_min + i as f64 * self.threshold_step).collect()
    }
}

/// One service request for the round analysis.
#[derive(Debug, Clone)]
pub struct Request {
    pub prompt: PromptSpec,
    pub power: f64,
    pub p_total: f64,
    pub ber: f64,
}

/// Probability that one delivered image for `request` scores at least
/// `threshold` under the strategy chosen by `selector`.
pub fn request_success_probability(
    selector: &dyn StrategySelector,
    catalog: &StrategyCatalog,
    request: &Request,
    threshold: f64,
) -> Result<f64> {
    let ctx = SelectionContext {
        prompt: &request.prompt,
        power: request.power,
        p_total: request.p_total,
        ber: request.ber,
        history: &[],
    };
    let strategy = selector.select(&ctx, &mut Stream::seed_from_u64(0))?;
    let (mean, std) = catalog.quality_params(&request.prompt, strategy)?;
    let factor = 1.0 - catalog.kappa * catalog.effective_complexity(&request.prompt, strategy) * request.ber;
    if !(factor > 0.0) {
        return Ok(0.0);
    }
    // Raw scores are clamped to [0, 10] before degradation.
    let raw_needed = threshold / factor;
    if raw_needed > 10.0 {
        return Ok(0.0);
    }
    Ok(if std > 0.0 {
        normal_cdf((mean - raw_needed) / std)
    } else if mean >= raw_needed {
        1.0
    } else {
        0.0
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundsCell {
    pub policy: String,
    pub threshold: f64,
    pub images: usize,
    /// Success probability of one image, averaged over the requests.
    pub p_image: f64,
    pub rounds: Rounds,
}

/// The threshold × images-per-round grid for one selector.
pub fn rounds_grid(
    policy: &str,
    selector: &dyn StrategySelector,
    catalog: &StrategyCatalog,
    requests: &[Request],
    config: &RoundsConfig,
) -> Result<Vec<RoundsCell>> {
    config.validate()?;
    if requests.is_empty() {
        return Err(Error::invalid("service-round grid needs at least one request"));
    }
    let mut cells = Vec::new();
    for q in config.thresholds() {
        let p = requests.iter().map(|r| request_success_probability(selector, catalog, r, q)).sum::<Result<f64>>()?
            / requests.len() as f64;
        for n in 1..=config.images_max {
            cells.push(RoundsCell {
                policy: policy.to_string(),
                threshold: q,
                images: n,
                p_image: p,
                rounds: rounds_for_probability(p, n, config.confidence)?,
            });
        }
    }
    Ok(cells)
}

pub fn write_rounds_csv<W: Write>(cells: &[RoundsCell], mut out: W) -> Result<()> {
    writeln!(out, "policy,threshold,images,p_image,rounds")?;
    for c in cells {
        writeln!(out, "{},{:.1},{},{:e},{}", c.policy, c.threshold, c.images, c.p_image, c.rounds)?;
    }
    Ok(())
}
