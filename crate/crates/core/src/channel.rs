//! Wireless link model between the edge server and its users.
//!
//! Small-scale fading is Nakagami-m, so the power gain `G = X^2` is Gamma
//! distributed with shape `m` and mean `psi`. Large-scale gain combines path
//! loss `d^-xi` with log-normal shadowing `exp(sigma_s * Z)`. Bit errors use
//! the BPSK kernel `Q(sqrt(2 * snr))`.

use std::io::Write;
use std::sync::OnceLock;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{Error, Result};
use crate::numerics::{gauss_hermite, integrate_adaptive};

/// Gauss–Hermite order for the shadowing expectation.
pub const HERMITE_ORDER: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelParams {
    /// Nakagami fading severity, `m >= 0.5`.
    pub m: f64,
    /// Mean small-scale power gain `E[X^2]`.
    pub psi: f64,
    /// Path-loss exponent.
    pub xi: f64,
    /// Shadowing standard deviation (natural-log units).
    pub sigma_s: f64,
    /// Noise power in watts.
    pub n0: f64,
    /// Transmit power budget in watts.
    pub p_total: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self { m: 1.0, psi: 1.0, xi: 2.0, sigma_s: 0.5, n0: 1e-4, p_total: 3.0 }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.m >= 0.5
            && self.psi > 0.0
            && self.xi > 0.0
            && self.sigma_s >= 0.0
            && self.n0 > 0.0
            && self.p_total > 0.0;
        let finite = [self.m, self.psi, self.xi, self.sigma_s, self.n0, self.p_total].iter().all(|v| v.is_finite());
        if ok && finite {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid channel parameters: {self:?}")))
        }
    }

    /// Mean SNR for power `p` at distance `d` with the shadowing draw at its
    /// median (`Z = 0`).
    pub fn mean_snr(&self, p: f64, d: f64, reference: SnrReference) -> f64 {
        match reference {
            SnrReference::WithPathLoss => p * self.psi * d.powf(-self.xi) / self.n0,
            SnrReference::SmallScaleOnly => p * self.psi / self.n0,
        }
    }
}

/// Whether an "expected SNR" includes the large-scale path-loss factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnrReference {
    WithPathLoss,
    SmallScaleOnly,
}

/// Which BER expression to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BerMode {
    /// Quadrature of the Q-function kernel against the Gamma SNR density.
    #[default]
    Numeric,
    /// The MGF closed form kept verbatim; non-physical, see [`ber_closed_form`].
    ClosedForm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserLink {
    pub distance: f64,
    pub weight: f64,
    pub shadowing: f64,
}

impl UserLink {
    pub fn new(distance: f64, weight: f64, shadowing: f64) -> Result<Self> {
        if !(distance > 0.0) || !(weight > 0.0) {
            return Err(Error::invalid(format!(
                "link needs positive distance and weight, got d={distance}, w={weight}"
            )));
        }
        Ok(Self { distance, weight, shadowing })
    }

    pub fn large_scale_gain(&self, params: &ChannelParams) -> f64 {
        self.distance.powf(-params.xi) * (params.sigma_s * self.shadowing).exp()
    }
}

/// Draws a small-scale power gain `G ~ Gamma(shape = m, scale = psi / m)`.
pub fn sample_small_scale_gain<R: Rng + ?Sized>(params: &ChannelParams, rng: &mut R) -> f64 {
    let gamma = Gamma::new(params.m, params.psi / params.m).expect("validated channel parameters");
    // A Gamma draw can underflow to exactly zero for small shapes.
    gamma.sample(rng).max(f64::MIN_POSITIVE)
}

/// `L = d^-xi * exp(sigma_s * Z)`.
pub fn large_scale_gain(d: f64, xi: f64, sigma_s: f64, z: f64) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::invalid(format!("distance must be positive, got {d}")));
    }
    Ok(d.powf(-xi) * (sigma_s * z).exp())
}

/// `SNR = P * G * L / N0`.
pub fn instantaneous_snr(p: f64, g: f64, l: f64, n0: f64) -> Result<f64> {
    if !(n0 > 0.0) {
        return Err(Error::invalid(format!("noise power must be positive, got {n0}")));
    }
    if p < 0.0 {
        return Err(Error::invalid(format!("power must be non-negative, got {p}")));
    }
    Ok(p * g * l / n0)
}

/// Splits `p_total` proportionally to `weights`. The last share is computed
/// as the remainder and then nudged down (or, once it bottoms out, the
/// largest share) until the left-to-right floating sum of the shares does
/// not exceed `p_total`.
pub fn allocate_power(weights: &[f64], p_total: f64) -> Result<Vec<f64>> {
    if weights.is_empty() {
        return Err(Error::invalid("no users to allocate power to"));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
        return Err(Error::invalid(format!("allocation weights must be positive, got {w}")));
    }
    if !(p_total > 0.0) {
        return Err(Error::invalid(format!("power budget must be positive, got {p_total}")));
    }
    let total: f64 = weights.iter().sum();
    let mut shares: Vec<f64> = weights.iter().map(|w| w * p_total / total).collect();
    let n = shares.len();
    let head: f64 = shares[..n - 1].iter().sum();
    shares[n - 1] = (p_total - head).max(f64::MIN_POSITIVE);
    while shares.iter().sum::<f64>() > p_total {
        // The head alone can round above the budget; then shave the largest share.
        let i = if shares[n - 1] > f64::MIN_POSITIVE {
            n - 1
        } else {
            (0..n).max_by(|&a, &b| shares[a].total_cmp(&shares[b])).expect("non-empty")
        };
        shares[i] = shares[i].next_down();
    }
    Ok(shares)
}

fn check_ber_args(mean_snr: f64, m: f64) -> Result<()> {
    if !(mean_snr >= 0.0) || !mean_snr.is_finite() {
        return Err(Error::invalid(format!("mean SNR must be finite and non-negative, got {mean_snr}")));
    }
    if !(m >= 0.5) {
        return Err(Error::invalid(format!("fading severity must be >= 0.5, got {m}")));
    }
    Ok(())
}

/// Average BPSK bit error rate `E[Q(sqrt(2 g))]` for `g ~ Gamma(m, mean_snr / m)`.
///
/// Integrating by parts moves the fading distribution into its CDF and
/// leaves a fixed Gaussian weight, which avoids the density's singularity at
/// zero for `m < 1`:
///
/// ```text
/// BER = 1/sqrt(pi) * integral_0^inf P(m, m v^2 / mean_snr) exp(-v^2) dv
/// ```
///
/// where `P` is the regularized lower incomplete gamma function.
pub fn ber_numeric(mean_snr: f64, m: f64) -> Result<f64> {
    check_ber_args(mean_snr, m)?;
    if mean_snr == 0.0 {
        return Ok(0.5);
    }
    let scale = m / mean_snr;
    let integrand = |v: f64| gamma_lr(m, scale * v * v) * (-v * v).exp();
    // exp(-81) is far below the tolerance, so [0, 9] covers the tail.
    let integral = integrate_adaptive(integrand, 0.0, 9.0, 1e-13, 1e-10)?;
    Ok((integral / std::f64::consts::PI.sqrt()).clamp(0.0, 0.5))
}

/// The MGF-style closed form
/// `Gamma(m) / (2 Gamma(m + 1/2)) * (1 - sqrt(m / (m + mean_snr / 2)))^m`,
/// evaluated exactly as written and never clamped.
///
/// This expression *increases* with the mean SNR (it is 0 at zero SNR), so it
/// cannot be a bit error rate. It is retained for comparison tables only;
/// every simulation path uses [`ber_numeric`].
pub fn ber_closed_form(mean_snr: f64, m: f64) -> f64 {
    let prefactor = (ln_gamma(m) - ln_gamma(m + 0.5)).exp() / 2.0;
    prefactor * (1.0 - (m / (m + mean_snr / 2.0)).sqrt()).powf(m)
}

pub fn ber(mean_snr: f64, m: f64, mode: BerMode) -> Result<f64> {
    match mode {
        BerMode::Numeric => ber_numeric(mean_snr, m),
        BerMode::ClosedForm => {
            check_ber_args(mean_snr, m)?;
            Ok(ber_closed_form(mean_snr, m))
        }
    }
}

fn hermite_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_hermite(HERMITE_ORDER))
}

/// BER averaged over both fading and log-normal shadowing for a user at
/// distance `d` receiving power `p`.
///
/// The shadowing expectation `E_Z[BER(snr(Z))]` with `Z ~ N(0, 1)` uses
/// Gauss–Hermite quadrature including the `1/sqrt(2 pi)` density
/// normalization, so the result stays a probability.
pub fn expected_ber_shadowed(params: &ChannelParams, p: f64, d: f64) -> Result<f64> {
    params.validate()?;
    if !(d > 0.0) {
        return Err(Error::invalid(format!("distance must be positive, got {d}")));
    }
    if !(p >= 0.0) {
        return Err(Error::invalid(format!("power must be non-negative, got {p}")));
    }
    if p == 0.0 {
        return Ok(0.5);
    }
    let median_snr = params.mean_snr(p, d, SnrReference::WithPathLoss);
    if params.sigma_s == 0.0 {
        return ber_numeric(median_snr, params.m);
    }
    let (nodes, weights) = hermite_rule();
    let mut acc = 0.0;
    for (x, w) in nodes.iter().zip(weights) {
        let z = std::f64::consts::SQRT_2 * x;
        acc += w * ber_numeric(median_snr * (params.sigma_s * z).exp(), params.m)?;
    }
    Ok((acc / std::f64::consts::PI.sqrt()).clamp(0.0, 0.5))
}

/// Shadowed BER for one link as a function of power, tabulated on a
/// log-spaced grid and interpolated linearly in `ln p`.
///
/// Training and evaluation loops query the same link thousands of times;
/// a full quadrature per query costs about a millisecond. Powers below the
/// table fall back to the exact computation.
#[derive(Debug, Clone)]
pub struct BerCurve {
    params: ChannelParams,
    distance: f64,
    log_lo: f64,
    step: f64,
    values: Vec<f64>,
}

impl BerCurve {
    pub const NODES: usize = 257;
    /// Lowest tabulated power relative to `p_total`.
    pub const SPAN: f64 = 1e-4;

    pub fn new(params: &ChannelParams, distance: f64) -> Result<Self> {
        params.validate()?;
        let log_hi = params.p_total.ln();
        let log_lo = (params.p_total * Self::SPAN).ln();
        let step = (log_hi - log_lo) / (Self::NODES - 1) as f64;
        let values = (0..Self::NODES)
            .map(|i| expected_ber_shadowed(params, (log_lo + step * i as f64).exp(), distance))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { params: *params, distance, log_lo, step, values })
    }

    pub fn distance(&self) -> f64 {
        self.distance
    }

    pub fn params(&self) -> &ChannelParams {
        &self.params
    }

    pub fn ber(&self, p: f64) -> Result<f64> {
        if !(p > 0.0) {
            return expected_ber_shadowed(&self.params, p, self.distance);
        }
        let u = (p.ln() - self.log_lo) / self.step;
        if u < 0.0 || u > (Self::NODES - 1) as f64 {
            return expected_ber_shadowed(&self.params, p, self.distance);
        }
        let i = (u.floor() as usize).min(Self::NODES - 2);
        let f = u - i as f64;
        Ok(self.values[i] * (1.0 - f) + self.values[i + 1] * f)
    }
}

/// Monotonicity audit of [`ber_closed_form`] over a mean-SNR grid.
#[derive(Debug, Clone, Serialize)]
pub struct ClosedFormAudit {
    pub m: f64,
    pub mean_snr_db: Vec<f64>,
    pub values: Vec<f64>,
    pub increasing: bool,
    pub note: String,
}

pub const CLOSED_FORM_NOTE: &str = "closed-form Nakagami BER (ber_paper) increases with mean SNR \
and is non-physical; simulations use the quadrature BER (ber_numeric)";

pub fn audit_closed_form(m: f64, mean_snr_db: &[f64]) -> ClosedFormAudit {
    let values: Vec<f64> = mean_snr_db.iter().map(|db| ber_closed_form(db_to_linear(*db), m)).collect();
    let increasing = values.windows(2).all(|w| w[1] > w[0]);
    let note = if increasing {
        CLOSED_FORM_NOTE.to_string()
    } else {
        "closed-form Nakagami BER is not increasing on this grid".to_string()
    };
    ClosedFormAudit { m, mean_snr_db: mean_snr_db.to_vec(), values, increasing, note }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BerRow {
    pub m: f64,
    pub mean_snr_db: f64,
    pub ber_numeric: f64,
    pub ber_paper: f64,
}

pub const BER_TABLE_M: [f64; 4] = [0.5, 1.0, 2.0, 4.0];

/// Mean-SNR grid in dB for the BER table: -10 dB to 30 dB in 2 dB steps.
pub fn ber_table_grid() -> Vec<f64> {
    (0..=20).map(|i| -10.0 + 2.0 * f64::from(i)).collect()
}

pub fn ber_table(ms: &[f64], mean_snr_db: &[f64]) -> Result<Vec<BerRow>> {
    let mut rows = Vec::with_capacity(ms.len() * mean_snr_db.len());
    for &m in ms {
        for &db in mean_snr_db {
            let snr = db_to_linear(db);
            rows.push(BerRow {
                m,
                mean_snr_db: db,
                ber_numeric: ber_numeric(snr, m)?,
                ber_paper: ber_closed_form(snr, m),
            });
        }
    }
    Ok(rows)
}

pub fn write_ber_table<W: Write>(rows: &[BerRow], mut out: W) -> Result<()> {
    writeln!(out, "m,mean_snr_db,ber_numeric,ber_paper")?;
    for r in rows {
        writeln!(out, "{},{},{:e},{:e}", r.m, r.mean_snr_db, r.ber_numeric, r.ber_paper)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::q_function;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn rayleigh(snr: f64) -> f64 {
        0.5 * (1.0 - (snr / (1.0 + snr)).sqrt())
    }

    /// Exact BPSK BER for integer m (Proakis).
    fn integer_m_ber(snr: f64, m: u32) -> f64 {
        let mu = (snr / (f64::from(m) + snr)).sqrt();
        let mut sum = 0.0;
        let mut binom = 1.0;
        for k in 0..m {
            if k > 0 {
                binom *= f64::from(m - 1 + k) / f64::from(k);
            }
            sum += binom * ((1.0 + mu) / 2.0).powi(k as i32);
        }
        ((1.0 - mu) / 2.0).powi(m as i32) * sum
    }

    #[test]
    fn gain_moments_match_gamma() {
        let mut r = rng::stream(1, "test-gain");
        let unit = ChannelParams { m: 1.0, ..Default::default() };
        let n = 1_000_000;
        let mean: f64 = (0..n).map(|_| sample_small_scale_gain(&unit, &mut r)).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");

        let two = ChannelParams { m: 2.0, ..Default::default() };
        let draws: Vec<f64> = (0..n).map(|_| sample_small_scale_gain(&two, &mut r)).collect();
        let mu = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|g| (g - mu).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 0.5).abs() / 0.5 < 0.02, "variance {var}");
    }

    #[test]
    fn higher_m_means_less_fading() {
        let cv = |m: f64| {
            let p = ChannelParams { m, ..Default::default() };
            let mut r = rng::stream(2, "test-cv");
            let d: Vec<f64> = (0..100_000).map(|_| sample_small_scale_gain(&p, &mut r)).collect();
            let mu = d.iter().sum::<f64>() / d.len() as f64;
            (d.iter().map(|g| (g - mu).powi(2)).sum::<f64>() / d.len() as f64).sqrt() / mu
        };
        assert!(cv(4.0) < cv(1.0));
    }

    #[test]
    fn large_scale_gain_values() {
        assert_eq!(large_scale_gain(1.0, 3.7, 0.8, 0.0).unwrap(), 1.0);
        assert!((large_scale_gain(10.0, 2.0, 0.5, 0.0).unwrap() - 0.01).abs() < 1e-15);
        let v = large_scale_gain(2.0, 3.0, 0.5, 1.0).unwrap();
        assert!((v - 0.125 * 0.5f64.exp()).abs() < 1e-15);
        assert!((v - 0.2061).abs() < 1e-4);
        assert!(large_scale_gain(0.0, 2.0, 0.5, 0.0).is_err());
        assert!(large_scale_gain(-1.0, 2.0, 0.5, 0.0).is_err());
    }

    #[test]
    fn snr_values() {
        assert_eq!(instantaneous_snr(0.0, 3.0, 2.0, 0.1).unwrap(), 0.0);
        assert!((instantaneous_snr(1.0, 1.0, 1.0, 0.1).unwrap() - 10.0).abs() < 1e-12);
        assert!(instantaneous_snr(1.0, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn monte_carlo_mean_snr_matches_expectation() {
        let params = ChannelParams { m: 1.5, psi: 2.0, n0: 0.5, ..Default::default() };
        let mut r = rng::stream(3, "test-snr");
        let n = 1_000_000;
        let l = large_scale_gain(1.0, params.xi, params.sigma_s, 0.0).unwrap();
        let mean: f64 = (0..n)
            .map(|_| instantaneous_snr(1.2, sample_small_scale_gain(&params, &mut r), l, params.n0).unwrap())
            .sum::<f64>()
            / n as f64;
        let want = params.mean_snr(1.2, 1.0, SnrReference::SmallScaleOnly);
        assert!((mean - want).abs() / want < 0.01);
    }

    #[test]
    fn allocation_examples() {
        assert_eq!(allocate_power(&[1.0, 1.0, 1.0], 3.0).unwrap(), vec![1.0, 1.0, 1.0]);
        assert_eq!(allocate_power(&[2.0, 1.0, 1.0], 4.0).unwrap(), vec![2.0, 1.0, 1.0]);
        let third = allocate_power(&[1.0; 3], 1.0).unwrap();
        assert!(third.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));
        assert!(allocate_power(&[1.0, 0.0], 1.0).is_err());
        assert!(allocate_power(&[1.0, -2.0], 1.0).is_err());
        assert!(allocate_power(&[], 1.0).is_err());
        // A vanishing last weight cannot absorb the rounding of the head.
        let skewed = allocate_power(&[1.0, 1.0, 0.1, 1e-30], 3.0).unwrap();
        assert!(skewed.iter().sum::<f64>() <= 3.0);
    }

    proptest! {
        #[test]
        fn allocation_never_exceeds_budget(
            logw in prop::collection::vec(-60.0f64..5.0, 1..8),
            p_total in 0.1f64..50.0,
        ) {
            let w: Vec<f64> = logw.iter().map(|l| l.exp()).collect();
            let p = allocate_power(&w, p_total).unwrap();
            prop_assert!(p.iter().sum::<f64>() <= p_total);
        }
    }

    proptest! {
        #[test]
        fn allocation_sums_and_preserves_argmax(
            weights in prop::collection::vec(0.01f64..100.0, 1..8),
            p_total in 0.1f64..50.0,
        ) {
            let p = allocate_power(&weights, p_total).unwrap();
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - p_total).abs() <= 2.0 * f64::EPSILON * p_total);
            prop_assert!(p.iter().all(|v| *v > 0.0));
            let argmax = |v: &[f64]| v.iter().enumerate().fold(0, |b, (i, x)| if *x > v[b] { i } else { b });
            let (iw, ip) = (argmax(&weights), argmax(&p));
            prop_assert!(iw == ip || (p[iw] - p[ip]).abs() <= 4.0 * f64::EPSILON * p_total);
        }

        #[test]
        fn ber_numeric_bounded_and_monotone(m in 0.5f64..6.0, db in -15.0f64..35.0) {
            let lo = ber_numeric(db_to_linear(db), m).unwrap();
            let hi = ber_numeric(db_to_linear(db + 0.5), m).unwrap();
            prop_assert!((0.0..=0.5).contains(&lo));
            prop_assert!(hi < lo);
        }
    }

    #[test]
    fn ber_zero_snr_is_half() {
        for m in [0.5, 1.0, 3.3] {
            assert_eq!(ber_numeric(0.0, m).unwrap(), 0.5);
        }
    }

    #[test]
    fn ber_matches_rayleigh_closed_form() {
        assert!((rayleigh(10.0) - 0.02327).abs() < 1e-5);
        for snr in [0.01, 0.1, 1.0, 10.0, 100.0, 1e4] {
            let got = ber_numeric(snr, 1.0).unwrap();
            assert!((got - rayleigh(snr)).abs() < 1e-9, "snr {snr}: {got} vs {}", rayleigh(snr));
        }
    }

    #[test]
    fn ber_matches_integer_m_closed_forms() {
        for m in [2u32, 3, 4] {
            for snr in [0.3, 3.0, 30.0] {
                let got = ber_numeric(snr, f64::from(m)).unwrap();
                let want = integer_m_ber(snr, m);
                assert!((got - want).abs() < 1e-10 * want.max(1e-3), "m={m} snr={snr}");
            }
        }
    }

    #[test]
    fn ber_m2_matches_monte_carlo() {
        let params = ChannelParams { m: 2.0, psi: 10.0, n0: 1.0, ..Default::default() };
        let mut r = rng::stream(4, "test-ber-mc");
        let n = 10_000_000usize;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let q = q_function((2.0 * sample_small_scale_gain(&params, &mut r)).sqrt());
            s += q;
            s2 += q * q;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        let numeric = ber_numeric(10.0, 2.0).unwrap();
        assert!((numeric - 0.005_528).abs() < 5e-7, "{numeric}");
        assert!((mean - numeric).abs() < 4.0 * se, "mc {mean} ± {se} vs {numeric}");
    }

    #[test]
    fn closed_form_examples() {
        for m in [0.5, 1.0, 2.5] {
            assert_eq!(ber_closed_form(0.0, m), 0.0);
        }
        let gamma_1_5 = std::f64::consts::PI.sqrt() / 2.0;
        let want = (1.0 / (2.0 * gamma_1_5)) * (1.0 - (1.0f64 / 6.0).sqrt());
        let got = ber_closed_form(10.0, 1.0);
        assert!((got - want).abs() < 1e-14);
        assert!((got - 0.3339).abs() < 1e-4);
    }

    #[test]
    fn closed_form_rises_with_snr() {
        for m in BER_TABLE_M {
            let audit = audit_closed_form(m, &ber_table_grid());
            assert!(audit.increasing, "m = {m}");
            assert_eq!(audit.note, CLOSED_FORM_NOTE);
        }
    }

    #[test]
    fn shadowed_without_shadowing_is_plain_numeric() {
        let params = ChannelParams { sigma_s: 0.0, m: 1.7, psi: 1.3, xi: 2.5, n0: 0.02, p_total: 3.0 };
        let got = expected_ber_shadowed(&params, 0.8, 2.0).unwrap();
        let want = ber_numeric(0.8 * 1.3 * 2f64.powf(-2.5) / 0.02, 1.7).unwrap();
        assert!((got - want).abs() < 1e-10);
    }

    #[test]
    fn shadowed_zero_power_is_half() {
        assert_eq!(expected_ber_shadowed(&ChannelParams::default(), 0.0, 30.0).unwrap(), 0.5);
    }

    #[test]
    fn shadowed_matches_monte_carlo() {
        let params = ChannelParams { m: 1.0, psi: 1.0, xi: 2.0, sigma_s: 0.5, n0: 0.1, p_total: 1.0 };
        let got = expected_ber_shadowed(&params, 1.0, 1.0).unwrap();
        let mut r = rng::stream(5, "test-shadow-mc");
        let n = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let z: f64 = r.sample(StandardNormal);
            let l = large_scale_gain(1.0, params.xi, params.sigma_s, z).unwrap();
            let g = sample_small_scale_gain(&params, &mut r);
            acc += q_function((2.0 * instantaneous_snr(1.0, g, l, params.n0).unwrap()).sqrt());
        }
        assert!((acc / n as f64 - got).abs() < 1e-3);
    }

    #[test]
    fn shadowed_monotone_in_power_and_distance() {
        let params = ChannelParams::default();
        let a = expected_ber_shadowed(&params, 0.5, 40.0).unwrap();
        let b = expected_ber_shadowed(&params, 1.0, 40.0).unwrap();
        let c = expected_ber_shadowed(&params, 1.0, 60.0).unwrap();
        assert!(b < a && c > b);
        assert!((0.0..=0.5).contains(&a));
    }

    #[test]
    fn ber_table_layout() {
        let rows = ber_table(&[1.0], &[0.0, 10.0]).unwrap();
        let mut buf = Vec::new();
        write_ber_table(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "m,mean_snr_db,ber_numeric,ber_paper");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("1,0,"));
    }

    #[test]
    fn ber_curve_tracks_exact() {
        let params = ChannelParams::default();
        let curve = BerCurve::new(&params, 40.0).unwrap();
        let mut r = rng::stream(9, "test-ber-curve");
        for _ in 0..50 {
            let p: f64 = r.random_range(1e-3..params.p_total);
            let exact = expected_ber_shadowed(&params, p, 40.0).unwrap();
            assert!((curve.ber(p).unwrap() - exact).abs() < 1e-5, "p={p}");
        }
        assert_eq!(curve.ber(0.0).unwrap(), 0.5);
        assert_eq!(curve.ber(params.p_total * 2.0).unwrap(), expected_ber_shadowed(&params, 6.0, 40.0).unwrap());
    }
}
