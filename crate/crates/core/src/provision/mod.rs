//! QoE-aware provisioning: the objective, the service environment, a
//! brute-force oracle and reference allocation schemes.

mod env;
mod oracle;

pub use env::{Scenario, ServiceEnv, StepOutcome, UserDiagnostics, UserSpec};
pub use oracle::{
    brute_force_oracle, expected_reward, expected_user_term, power_compositions, random_baseline, static_baseline,
    OracleResult,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QoEConfig {
    /// Latency budget (s).
    pub l_max: f64,
    /// Time of one inference (s).
    pub t_zeta: f64,
    /// Computation cost of one inference.
    pub c_zeta: f64,
    pub eta_q: f64,
    pub eta_c: f64,
    /// Penalty per violating user.
    pub penalty: f64,
    /// Largest number of inferences per user.
    pub n_max: usize,
}

impl Default for QoEConfig {
    fn default() -> Self {
        Self { l_max: 10.0, t_zeta: 1.0, c_zeta: 0.25, eta_q: 1.0, eta_c: 0.1, penalty: 5.0, n_max: 5 }
    }
}

impl QoEConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.l_max > 0.0 && self.t_zeta > 0.0 && self.penalty > 0.0;
        let non_negative = self.c_zeta >= 0.0 && self.eta_q >= 0.0 && self.eta_c >= 0.0;
        let finite =
            [self.l_max, self.t_zeta, self.c_zeta, self.eta_q, self.eta_c, self.penalty].iter().all(|v| v.is_finite());
        if !(positive && non_negative && finite) || self.n_max == 0 {
            return Err(Error::InvalidConfig(format!("invalid QoE configuration: {self:?}")));
        }
        Ok(())
    }
}

/// Outcome of the per-user QoE evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Qoe {
    Value(f64),
    /// `N * T_zeta > L_max`.
    LatencyViolation,
    /// Best delivered quality below the user's threshold.
    ThresholdViolation,
}

/// `log_N(L_max / (N T_zeta))`, with the natural logarithm standing in for
/// the degenerate base at `N = 1`.
pub fn latency_factor(n: usize, config: &QoEConfig) -> f64 {
    let ratio = config.l_max / (n as f64 * config.t_zeta);
    if n == 1 {
        ratio.ln()
    } else {
        ratio.ln() / (n as f64).ln()
    }
}

/// Latency factor times `ln(max quality / q_th)`. The product is not
/// evaluated when a constraint is violated; the caller applies the penalty.
pub fn qoe(n: usize, qualities: &[f64], q_th: f64, config: &QoEConfig) -> Result<Qoe> {
    if n == 0 || qualities.len() != n {
        return Err(Error::invalid(format!("expected {n} >= 1 qualities, got {}", qualities.len())));
    }
    if !(q_th > 0.0) {
        return Err(Error::invalid(format!("quality threshold must be positive, got {q_th}")));
    }
    if n as f64 * config.t_zeta > config.l_max {
        return Ok(Qoe::LatencyViolation);
    }
    let best = qualities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(best >= q_th) {
        return Ok(Qoe::ThresholdViolation);
    }
    Ok(Qoe::Value(latency_factor(n, config) * (best / q_th).ln()))
}

/// Resource consumption `N (c_zeta + P)`.
pub fn cost(n: usize, power: f64, c_zeta: f64) -> f64 {
    n as f64 * (c_zeta + power)
}

/// Resources for one user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub inferences: usize,
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvisionAction {
    pub users: Vec<Allocation>,
}

impl ProvisionAction {
    pub fn total_power(&self) -> f64 {
        self.users.iter().map(|a| a.power).sum()
    }

    /// At least one inference per user and powers within the budget.
    pub fn is_feasible(&self, p_total: f64) -> bool {
        self.users.iter().all(|a| a.inferences >= 1 && a.power >= 0.0) && self.total_power() <= p_total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct RewardBreakdown {
    pub reward: f64,
    /// Sum of QoE over users that met their constraints.
    pub qoe_sum: f64,
    pub cost_sum: f64,
    /// Users replaced by the penalty (all of them when the budget is exceeded).
    pub violations: usize,
}

/// System reward for delivered (user-side) qualities.
///
/// Over-budget actions earn `-Q * penalty`. Otherwise each user adds
/// `eta_q * qoe - eta_c * cost`, or `-penalty` when it gets no inference,
/// exceeds the latency budget or misses its threshold.
pub fn reward(
    thresholds: &[f64],
    p_total: f64,
    action: &ProvisionAction,
    qualities: &[Vec<f64>],
    config: &QoEConfig,
) -> Result<RewardBreakdown> {
    let q = thresholds.len();
    if action.users.len() != q || qualities.len() != q {
        return Err(Error::invalid(format!(
            "{q} users but {} allocations and {} quality lists",
            action.users.len(),
            qualities.len()
        )));
    }
    if action.total_power() > p_total {
        return Ok(RewardBreakdown { reward: -(q as f64) * config.penalty, violations: q, ..Default::default() });
    }
    let mut out = RewardBreakdown::default();
    for ((alloc, th), qs) in action.users.iter().zip(thresholds).zip(qualities) {
        if alloc.inferences == 0 {
            out.violations += 1;
            out.reward -= config.penalty;
            continue;
        }
        match qoe(alloc.inferences, qs, *th, config)? {
            Qoe::Value(v) => {
                let c = cost(alloc.inferences, alloc.power, config.c_zeta);
                out.qoe_sum += v;
                out.cost_sum += c;
                out.reward += config.eta_q * v - config.eta_c * c;
            }
            Qoe::LatencyViolation | Qoe::ThresholdViolation => {
                out.violations += 1;
                out.reward -= config.penalty;
            }
        }
    }
    Ok(out)
}
