//! Adversarial imitation of the expert prompt-engineering policy.
//!
//! A discriminator scores (state, strategy) pairs as expert-like; the
//! generator is a categorical policy updated with the clipped surrogate and
//! rewarded by `-ln(1 - D)`. Decisions are one step long, so the critic
//! regresses the immediate reward.

mod policy;
mod train;

pub use policy::{PolicySnapshot, StrategyPolicy, POLICY_MAGIC};
pub use train::{evaluate_policy, train_irl, IrlEpoch, IrlOutcome, PolicyEvaluation};

use serde::{Deserialize, Serialize};

use crate::approx::Mlp;
use crate::error::{Error, Result};

/// Probabilities are kept inside `[CLAMP, 1 - CLAMP]` before taking logs.
pub const CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IrlConfig {
    pub clip_eps: f64,
    /// Inert for one-step decisions; kept so the critic target has its usual form.
    pub gamma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Generator learning rate.
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub lr_discriminator: f64,
    pub history_len: usize,
    pub hidden: usize,
    /// Surrogate optimization passes per batch.
    pub ppo_epochs: usize,
    /// Discriminator steps per batch.
    pub disc_steps: usize,
    pub entropy_coef: f64,
    /// Held-out states used for the match-rate and utility columns.
    pub eval_states: usize,
}

impl Default for IrlConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            gamma: 0.99,
            epochs: 300,
            batch_size: 256,
            lr_actor: 1e-3,
            lr_critic: 3e-3,
            lr_discriminator: 3e-3,
            history_len: 3,
            hidden: 64,
            ppo_epochs: 4,
            disc_steps: 5,
            entropy_coef: 0.005,
            eval_states: 1000,
        }
    }
}

impl IrlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::InvalidConfig(format!("clip_eps must lie in (0, 1), got {}", self.clip_eps)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidConfig(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        for (name, lr) in
            [("lr_actor", self.lr_actor), ("lr_critic", self.lr_critic), ("lr_discriminator", self.lr_discriminator)]
        {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {lr}")));
            }
        }
        if self.batch_size == 0
            || self.hidden == 0
            || self.ppo_epochs == 0
            || self.disc_steps == 0
            || self.eval_states == 0
        {
            return Err(Error::InvalidConfig(
                "batch_size, hidden, ppo_epochs, disc_steps and eval_states must be positive".into(),
            ));
        }
        if !(self.entropy_coef >= 0.0) {
            return Err(Error::InvalidConfig(format!("entropy_coef must be non-negative, got {}", self.entropy_coef)));
        }
        Ok(())
    }
}

/// Observation of the prompt-engineering policy.
#[derive(Debug, Clone, PartialEq)]
pub struct IrlState {
    /// Up to `K` previous strategy ids, oldest first.
    pub history: Vec<usize>,
    pub embedding: Vec<f64>,
    /// Allocated power divided by the power budget.
    pub power: f64,
}

impl IrlState {
    pub fn encoded_len(history_len: usize, num_strategies: usize, embedding_dim: usize) -> usize {
        history_len * num_strategies + embedding_dim + 1
    }

    /// `K` one-hot slots (most recent choice last, empty slots all zero),
    /// then the embedding, then the normalized power.
    pub fn encode(&self, history_len: usize, num_strategies: usize) -> Result<Vec<f64>> {
        if !(self.power > 0.0 && self.power <= 1.0) {
            return Err(Error::invalid(format!("normalized power must lie in (0, 1], got {}", self.power)));
        }
        let mut out = vec![0.0; history_len * num_strategies];
        let recent = &self.history[self.history.len().saturating_sub(history_len)..];
        let offset = history_len - recent.len();
        for (j, &s) in recent.iter().enumerate() {
            if s >= num_strategies {
                return Err(Error::invalid(format!("history strategy {s} outside catalog")));
            }
            out[(offset + j) * num_strategies + s] = 1.0;
        }
        out.extend_from_slice(&self.embedding);
        out.push(self.power);
        Ok(out)
    }
}

fn clamp_prob(d: f64) -> f64 {
    d.clamp(CLAMP, 1.0 - CLAMP)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// An encoded state with the strategy taken in it.
pub type StateAction = (Vec<f64>, usize);

/// Discriminator output `D(s, a)`: the network maps a state to one logit
/// per strategy and the sigmoid of the taken strategy's logit is the
/// probability that the pair came from the expert.
pub fn disc_prob(disc: &Mlp, state: &[f64], action: usize) -> Result<f64> {
    let logits = disc.forward(state)?;
    let z = logits.get(action).ok_or_else(|| {
        Error::invalid(format!("strategy {action} outside the discriminator's {} heads", logits.len()))
    })?;
    Ok(sigmoid(*z))
}

/// `-(mean ln D(expert) + mean ln(1 - D(policy)))`.
pub fn discriminator_loss(disc: &Mlp, expert: &[StateAction], policy: &[StateAction]) -> Result<f64> {
    if expert.is_empty() || policy.is_empty() {
        return Err(Error::invalid("discriminator loss needs non-empty expert and policy batches"));
    }
    let mut e = 0.0;
    for (s, a) in expert {
        e += clamp_prob(disc_prob(disc, s, *a)?).ln();
    }
    let mut p = 0.0;
    for (s, a) in policy {
        p += (1.0 - clamp_prob(disc_prob(disc, s, *a)?)).ln();
    }
    Ok(-(e / expert.len() as f64 + p / policy.len() as f64))
}

/// Accumulates the gradient of [`discriminator_loss`] into `grads` and
/// returns the loss. Derivatives are taken before clamping.
pub(crate) fn discriminator_gradient(
    disc: &Mlp,
    expert: &[StateAction],
    policy: &[StateAction],
    grads: &mut [f64],
) -> Result<f64> {
    if expert.is_empty() || policy.is_empty() {
        return Err(Error::invalid("discriminator loss needs non-empty expert and policy batches"));
    }
    let mut loss = 0.0;
    let heads = disc.output_dim();
    for (batch, from_expert) in [(expert, true), (policy, false)] {
        let n = batch.len() as f64;
        for (s, a) in batch {
            if *a >= heads {
                return Err(Error::invalid(format!("strategy {a} outside the discriminator's {heads} heads")));
            }
            let trace = disc.forward_trace(s)?;
            let d = sigmoid(trace.output()[*a]);
            let mut upstream = vec![0.0; heads];
            if from_expert {
                loss -= clamp_prob(d).ln() / n;
                upstream[*a] = -(1.0 - d) / n;
            } else {
                loss -= (1.0 - clamp_prob(d)).ln() / n;
                upstream[*a] = d / n;
            }
            disc.backward(&trace, &upstream, grads)?;
        }
    }
    Ok(loss)
}

/// Imitation reward `-ln(1 - D(s, a))`: zero for obvious imitations,
/// growing as the discriminator believes the pair came from the expert.
pub fn gail_reward(disc: &Mlp, state: &[f64], action: usize) -> Result<f64> {
    Ok(reward_from_prob(disc_prob(disc, state, action)?))
}

pub fn reward_from_prob(d: f64) -> f64 {
    -(1.0 - clamp_prob(d)).ln()
}

/// One-step advantage `r + gamma * V(s') - V(s)`. Pass `v_next = 0` for
/// terminal transitions.
pub fn advantage(reward: f64, gamma: f64, v_now: f64, v_next: f64) -> f64 {
    reward + gamma * v_next - v_now
}

/// Shifts and scales to zero mean and unit (population) standard deviation.
/// A constant batch is only centered.
pub fn standardize(values: &mut [f64]) {
    if values.is_empty() {
        return;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for v in values.iter_mut() {
        *v -= mean;
        if std > 1e-12 {
            *v /= std;
        }
    }
}

/// Mean of `min(r A, clip(r, 1 - eps, 1 + eps) A)`; an objective to maximize.
pub fn ppo_clip_loss(ratios: &[f64], advantages: &[f64], eps: f64) -> Result<f64> {
    if ratios.len() != advantages.len() || ratios.is_empty() {
        return Err(Error::invalid("ratios and advantages must be non-empty and equally long"));
    }
    let total: f64 = ratios.iter().zip(advantages).map(|(&r, &a)| surrogate_term(r, a, eps)).sum();
    Ok(total / ratios.len() as f64)
}

pub(crate) fn surrogate_term(ratio: f64, adv: f64, eps: f64) -> f64 {
    (ratio * adv).min(ratio.clamp(1.0 - eps, 1.0 + eps) * adv)
}

/// Derivative of one surrogate term with respect to the ratio. Zero when
/// the clipped branch is selected and the clip is active.
pub(crate) fn surrogate_slope(ratio: f64, adv: f64, eps: f64) -> f64 {
    let clipped = (adv >= 0.0 && ratio > 1.0 + eps) || (adv < 0.0 && ratio < 1.0 - eps);
    if clipped {
        0.0
    } else {
        adv
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::{grad_check, Activation, Optimizer};
    use std::f64::consts::LN_2;

    fn pairs(xs: &[[f64; 2]], action: usize) -> Vec<StateAction> {
        xs.iter().map(|x| (x.to_vec(), action)).collect()
    }

    #[test]
    fn constant_half_discriminator() {
        let d = Mlp::zeros(&[2, 4, 3], &[Activation::Tanh, Activation::Identity]).unwrap();
        let xs = pairs(&[[1.0, 0.0], [-1.0, 0.5]], 2);
        let loss = discriminator_loss(&d, &xs, &xs[..1]).unwrap();
        assert!((loss - 2.0 * LN_2).abs() < 1e-15);
        assert!((gail_reward(&d, &xs[0].0, 1).unwrap() - LN_2).abs() < 1e-15);
        assert!(gail_reward(&d, &xs[0].0, 3).is_err());
    }

    #[test]
    fn empty_batches_rejected() {
        let d = Mlp::zeros(&[2, 4, 3], &[Activation::Tanh, Activation::Identity]).unwrap();
        let one = pairs(&[[0.0, 0.0]], 0);
        assert!(discriminator_loss(&d, &[], &one).is_err());
        assert!(discriminator_loss(&d, &one, &[]).is_err());
    }

    #[test]
    fn reward_values() {
        assert!((reward_from_prob(0.9) - std::f64::consts::LN_10).abs() < 1e-12);
        assert!(reward_from_prob(0.0) < 1e-5);
        assert!(reward_from_prob(0.3) < reward_from_prob(0.31));
        assert!(reward_from_prob(1.0).is_finite());
    }

    fn clusters() -> (Vec<StateAction>, Vec<StateAction>) {
        let e: Vec<[f64; 2]> = (0..8).map(|i| [1.0 + 0.05 * i as f64, 1.0]).collect();
        let p: Vec<[f64; 2]> = (0..8).map(|i| [-1.0 - 0.05 * i as f64, -1.0]).collect();
        let mut expert = pairs(&e, 0);
        expert.extend(pairs(&p, 1));
        let mut policy = pairs(&p, 0);
        policy.extend(pairs(&e, 1));
        (expert, policy)
    }

    #[test]
    fn separable_clusters_drive_loss_down() {
        let mut d = Mlp::new(&[2, 8, 2], &[Activation::Tanh, Activation::Identity], 3).unwrap();
        let (expert, policy) = clusters();
        let mut opt = Optimizer::adam(0.05, d.num_params()).unwrap();
        for _ in 0..300 {
            let mut g = vec![0.0; d.num_params()];
            discriminator_gradient(&d, &expert, &policy, &mut g).unwrap();
            opt.step(d.params_mut(), &g).unwrap();
        }
        assert!(discriminator_loss(&d, &expert, &policy).unwrap() < 0.1);
    }

    #[test]
    fn indistinguishable_batches_stay_above_two_ln_two() {
        let mut d = Mlp::new(&[2, 8, 3], &[Activation::Tanh, Activation::Identity], 4).unwrap();
        let xs: Vec<StateAction> = (0..10).map(|i| (vec![i as f64 / 10.0, 1.0 - i as f64 / 5.0], i % 3)).collect();
        let mut opt = Optimizer::adam(0.02, d.num_params()).unwrap();
        for _ in 0..200 {
            let mut g = vec![0.0; d.num_params()];
            discriminator_gradient(&d, &xs, &xs, &mut g).unwrap();
            opt.step(d.params_mut(), &g).unwrap();
            assert!(discriminator_loss(&d, &xs, &xs).unwrap() >= 2.0 * LN_2 - 1e-12);
        }
    }

    #[test]
    fn discriminator_gradient_matches_finite_differences() {
        let d = Mlp::new(&[3, 5, 4], &[Activation::Tanh, Activation::Identity], 11).unwrap();
        let expert = vec![(vec![0.3, -0.2, 1.0], 1), (vec![0.1, 0.9, -0.4], 3)];
        let policy = vec![(vec![-0.5, 0.2, 0.7], 0)];
        let err = grad_check(
            |p| {
                let m = Mlp::from_params(d.sizes(), d.activations(), p.to_vec()).unwrap();
                let mut g = vec![0.0; p.len()];
                let loss = discriminator_gradient(&m, &expert, &policy, &mut g).unwrap();
                (loss, g)
            },
            d.params(),
            1e-6,
        );
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn advantage_arithmetic() {
        assert!((advantage(1.0, 0.9, 1.0, 2.0) - 1.8).abs() < 1e-15);
        assert_eq!(advantage(1.0, 0.9, 1.0, 0.0), 0.0);
    }

    #[test]
    fn standardized_batch_statistics() {
        let mut a = vec![1.0, 4.0, -2.0, 7.5, 0.25];
        standardize(&mut a);
        let mean = a.iter().sum::<f64>() / 5.0;
        let var = a.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0;
        assert!(mean.abs() < 1e-15);
        assert!((var - 1.0).abs() < 1e-12);
        let mut c = vec![3.0; 4];
        standardize(&mut c);
        assert_eq!(c, vec![0.0; 4]);
    }

    #[test]
    fn clip_loss_cases() {
        let adv = [0.5, -1.5, 2.0, 0.1];
        assert_eq!(ppo_clip_loss(&[1.0; 4], &adv, 0.2).unwrap(), adv.iter().sum::<f64>() / 4.0);
        assert!((ppo_clip_loss(&[2.0], &[1.0], 0.2).unwrap() - 1.2).abs() < 1e-15);
        assert!((ppo_clip_loss(&[0.5], &[-1.0], 0.2).unwrap() + 0.8).abs() < 1e-15);
        assert!(ppo_clip_loss(&[1.0], &[], 0.2).is_err());
    }

    #[test]
    fn clip_slope_vanishes_on_clipped_branch() {
        assert_eq!(surrogate_slope(2.0, 1.0, 0.2), 0.0);
        assert_eq!(surrogate_slope(0.5, -1.0, 0.2), 0.0);
        assert_eq!(surrogate_slope(0.5, 1.0, 0.2), 1.0);
        assert_eq!(surrogate_slope(2.0, -1.0, 0.2), -1.0);
        // Slope agrees with the difference quotient away from the kinks.
        for (r, a) in [(0.5, 1.0), (1.1, -2.0), (1.5, 0.7), (0.6, -0.3)] {
            let h = 1e-7;
            let fd = (surrogate_term(r + h, a, 0.2) - surrogate_term(r - h, a, 0.2)) / (2.0 * h);
            assert!((fd - surrogate_slope(r, a, 0.2)).abs() < 1e-6);
        }
    }

    #[test]
    fn state_encoding_layout() {
        let s = IrlState { history: vec![2, 5], embedding: vec![0.5, -0.5], power: 0.25 };
        let x = s.encode(3, 7).unwrap();
        assert_eq!(x.len(), IrlState::encoded_len(3, 7, 2));
        assert!(x[..7].iter().all(|v| *v == 0.0));
        assert_eq!(x[7 + 2], 1.0);
        assert_eq!(x[14 + 5], 1.0);
        assert_eq!(x.iter().take(21).sum::<f64>(), 2.0);
        assert_eq!(&x[21..], &[0.5, -0.5, 0.25]);
        let long = IrlState { history: vec![0, 1, 2, 3], embedding: vec![], power: 1.0 };
        let y = long.encode(3, 7).unwrap();
        assert_eq!((y[1], y[7 + 2], y[14 + 3]), (1.0, 1.0, 1.0));
        assert!(IrlState { history: vec![], embedding: vec![], power: 0.0 }.encode(3, 7).is_err());
        assert!(IrlState { history: vec![7], embedding: vec![], power: 0.5 }.encode(3, 7).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(IrlConfig::default().validate().is_ok());
        assert!(IrlConfig { clip_eps: 1.0, ..IrlConfig::default() }.validate().is_err());
        assert!(IrlConfig { gamma: 1.0, ..IrlConfig::default() }.validate().is_err());
        assert!(IrlConfig { batch_size: 0, ..IrlConfig::default() }.validate().is_err());
        let json = serde_json::to_string(&IrlConfig::default()).unwrap();
        assert_eq!(serde_json::from_str::<IrlConfig>(&json).unwrap(), IrlConfig::default());
        assert!(serde_json::from_str::<IrlConfig>(r#"{"clip": 0.1}"#).is_err());
    }
}
