//! DDPG with a denoising-diffusion actor.
//!
//! The actor turns Gaussian noise into a raw action in `[-1, 1]^(2Q)` by
//! running a short reverse diffusion chain conditioned on the state. Two
//! critics score (state, raw action) pairs; targets use the smaller of the
//! two target critics. A plain tanh-MLP actor is kept as an ablation.

mod diffusion;
mod train;

pub use diffusion::{
    explore, forward_diffuse, initial_noise, make_schedule, timestep_embedding, ChainTrace, DiffusionActor,
    DiffusionSchedule,
};
pub use train::{
    evaluate_greedy, train_d3pg, ActorSnapshot, D3pgEpisode, D3pgOutcome, GreedyEvaluation, TrainedActor, ACTOR_MAGIC,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::approx::{mac_count, reset_mac_count, Activation, Mlp};
use crate::channel::allocate_power;
use crate::error::{Error, Result};
use crate::provision::{Allocation, ProvisionAction};

/// Actor family trained by [`train_d3pg`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActorKind {
    Diffusion,
    /// Deterministic `tanh` MLP with Gaussian exploration (plain DDPG).
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct D3pgConfig {
    pub actor: ActorKind,
    /// Diffusion steps `T`.
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub time_dim: usize,
    pub hidden: usize,
    pub batch_size: usize,
    pub gamma: f64,
    /// Soft-update rate of the target networks.
    pub tau: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    /// Exploration std at the first and last episode, decayed linearly.
    pub explore_start: f64,
    pub explore_end: f64,
    pub episodes: usize,
    /// Environment steps per episode. The state does not change between
    /// steps, so the default treats every step as its own episode.
    pub episode_len: usize,
    pub buffer_capacity: usize,
    /// Weight of the quadratic penalty on actor outputs outside `[-1, 1]`.
    pub range_penalty: f64,
    /// Initial-noise draws averaged by the greedy evaluation.
    pub eval_draws: usize,
}

impl Default for D3pgConfig {
    fn default() -> Self {
        Self {
            actor: ActorKind::Diffusion,
            steps: 5,
            beta_start: 0.05,
            beta_end: 0.7,
            time_dim: 8,
            hidden: 64,
            batch_size: 64,
            gamma: 0.95,
            tau: 0.005,
            lr_actor: 1e-3,
            lr_critic: 1e-3,
            explore_start: 0.1,
            explore_end: 0.01,
            episodes: 2000,
            episode_len: 1,
            buffer_capacity: 10_000,
            range_penalty: 1.0,
            eval_draws: 32,
        }
    }
}

impl D3pgConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.steps == 0 {
            return bad("diffusion needs at least one step".into());
        }
        for (name, v) in [("tau", self.tau), ("lr_actor", self.lr_actor), ("lr_critic", self.lr_critic)] {
            if !(v > 0.0 && v <= 1.0) {
                return bad(format!("{name} must lie in (0, 1], got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if !(self.beta_start > 0.0 && self.beta_start <= self.beta_end && self.beta_end < 1.0) {
            return bad(format!("need 0 < beta_start <= beta_end < 1, got {}..{}", self.beta_start, self.beta_end));
        }
        if self.explore_start < 0.0 || self.explore_end < 0.0 || self.range_penalty < 0.0 {
            return bad("exploration std and range penalty must be non-negative".into());
        }
        if self.hidden == 0
            || self.batch_size == 0
            || self.episodes == 0
            || self.episode_len == 0
            || self.eval_draws == 0
        {
            return bad("hidden, batch_size, episodes, episode_len and eval_draws must be positive".into());
        }
        if self.buffer_capacity < self.batch_size {
            return bad(format!("buffer capacity {} below batch size {}", self.buffer_capacity, self.batch_size));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        make_schedule(self.steps, self.beta_start, self.beta_end)
    }

    /// Exploration std used in `episode` (0-based).
    pub fn exploration_std(&self, episode: usize) -> f64 {
        if self.episodes <= 1 {
            return self.explore_start;
        }
        let f = episode.min(self.episodes - 1) as f64 / (self.episodes - 1) as f64;
        self.explore_start + (self.explore_end - self.explore_start) * f
    }
}

/// Maps a raw action `[x_1..x_Q, y_1..y_Q]` to inference counts and powers.
///
/// `N_i = 1 + round((x_i + 1) / 2 * (N_max - 1))` with `x_i` clipped to
/// `[-1, 1]`, and powers split the whole budget in proportion to `exp(y_i)`.
pub fn decode_action(raw: &[f64], q: usize, n_max: usize, p_total: f64) -> Result<ProvisionAction> {
    if raw.len() != 2 * q || q == 0 {
        return Err(Error::invalid(format!("raw action of length {} for {q} users", raw.len())));
    }
    if n_max == 0 {
        return Err(Error::invalid("N_max must be positive"));
    }
    let (xs, ys) = raw.split_at(q);
    // Shift by the largest logit so exp never overflows.
    let top = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = ys.iter().map(|y| (y - top).exp().max(f64::MIN_POSITIVE)).collect();
    let powers = allocate_power(&weights, p_total)?;
    let users = xs
        .iter()
        .zip(powers)
        .map(|(x, power)| {
            let u = (x.clamp(-1.0, 1.0) + 1.0) / 2.0;
            Allocation { inferences: 1 + (u * (n_max - 1) as f64).round() as usize, power }
        })
        .collect();
    Ok(ProvisionAction { users })
}

/// Bellman target `R + gamma * min(Q1', Q2')`; `None` marks a terminal
/// transition.
pub fn critic_target(reward: f64, gamma: f64, next_values: Option<(f64, f64)>) -> f64 {
    match next_values {
        Some((q1, q2)) => reward + gamma * q1.min(q2),
        None => reward,
    }
}

/// `target <- (1 - rate) * target + rate * online`.
pub fn soft_update(target: &mut [f64], online: &[f64], rate: f64) -> Result<()> {
    if target.len() != online.len() {
        return Err(Error::invalid(format!("soft update of {} params from {}", target.len(), online.len())));
    }
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::invalid(format!("soft-update rate must lie in (0, 1], got {rate}")));
    }
    for (t, o) in target.iter_mut().zip(online) {
        *t = (1.0 - rate) * *t + rate * o;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayRecord {
    pub state: Vec<f64>,
    /// Executed raw action in `[-1, 1]^(2Q)`.
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

/// Fixed-capacity ring buffer with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    records: Vec<ReplayRecord>,
    capacity: usize,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("replay capacity must be positive"));
        }
        Ok(Self { records: Vec::with_capacity(capacity.min(1 << 16)), capacity, next: 0 })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Stores a record, overwriting the oldest one once full.
    pub fn push(&mut self, record: ReplayRecord) -> Result<()> {
        if let Some(first) = self.records.first() {
            if record.state.len() != first.state.len()
                || record.action.len() != first.action.len()
                || record.next_state.len() != first.next_state.len()
            {
                return Err(Error::invalid("replay record shape differs from the stored ones"));
            }
        }
        if self.records.len() < self.capacity {
            self.records.push(record);
        } else {
            self.records[self.next] = record;
        }
        self.next = (self.next + 1) % self.capacity;
        Ok(())
    }

    /// Indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<usize> {
        if self.records.is_empty() {
            return Vec::new();
        }
        (0..batch).map(|_| rng.random_range(0..self.records.len())).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<&ReplayRecord> {
        self.sample_indices(batch, rng).into_iter().map(|i| &self.records[i]).collect()
    }
}

/// A differentiable score of (state, action) pairs.
pub trait ActionValue {
    /// Value and its gradient with respect to the action.
    fn value_and_action_grad(&self, state: &[f64], action: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// Critic network over the concatenation `[state, action]` with one output.
impl ActionValue for Mlp {
    fn value_and_action_grad(&self, state: &[f64], action: &[f64]) -> Result<(f64, Vec<f64>)> {
        let input = critic_input(state, action);
        let trace = self.forward_trace(&input)?;
        let mut scratch = vec![0.0; self.num_params()];
        let dx = self.backward(&trace, &[1.0], &mut scratch)?;
        Ok((trace.output()[0], dx[state.len()..].to_vec()))
    }
}

pub(crate) fn critic_input(state: &[f64], action: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(state.len() + action.len());
    x.extend_from_slice(state);
    x.extend_from_slice(action);
    x
}

/// Critic with `[state, action] -> hidden -> hidden -> 1`.
pub fn new_critic(state_dim: usize, action_dim: usize, hidden: usize, seed: u64) -> Result<Mlp> {
    Mlp::new(
        &[state_dim + action_dim, hidden, hidden, 1],
        &[Activation::Relu, Activation::Relu, Activation::Identity],
        seed,
    )
}

/// Actor objective `-mean Q(s, a_0(s, noise)) + w * mean |a_0 - clip(a_0)|^2`
/// over a batch, with its gradient through the whole reverse chain.
///
/// The range term keeps raw outputs inside the box the critic was trained
/// on; clipping alone would cut the gradient there.
pub fn actor_loss(
    actor: &DiffusionActor,
    critic: &dyn ActionValue,
    states: &[Vec<f64>],
    noises: &[Vec<f64>],
    range_weight: f64,
) -> Result<(f64, Vec<f64>)> {
    if states.is_empty() || states.len() != noises.len() {
        return Err(Error::invalid(format!("{} states and {} noise draws", states.len(), noises.len())));
    }
    let n = states.len() as f64;
    let mut grads = vec![0.0; actor.net().num_params()];
    let mut loss = 0.0;
    for (s, z) in states.iter().zip(noises) {
        let trace = actor.denoise_traced(s, z)?;
        let a0 = trace.output();
        let (q, dq) = critic.value_and_action_grad(s, a0)?;
        loss -= q / n;
        let mut g: Vec<f64> = dq.iter().map(|d| -d / n).collect();
        for (gi, a) in g.iter_mut().zip(a0) {
            let excess = a - a.clamp(-1.0, 1.0);
            loss += range_weight * excess * excess / n;
            *gi += 2.0 * range_weight * excess / n;
        }
        actor.chain_backward(&trace, &g, &mut grads)?;
    }
    if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::numeric("actor loss is not finite"));
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexityReport {
    /// Parameters of the noise network.
    pub actor_params: usize,
    /// Parameters of one critic.
    pub critic_params: usize,
    pub steps: usize,
    /// Measured multiply-accumulates to produce one action.
    pub action_macs: u64,
    /// `(T + 1) * S_p + 2 * S_q`, the per-update parameter-touch estimate.
    pub update_estimate: u64,
}

/// Sizes and measured per-action cost of the networks built from `config`.
pub fn complexity_report(config: &D3pgConfig, state_dim: usize, action_dim: usize) -> Result<ComplexityReport> {
    config.validate()?;
    let actor = DiffusionActor::new(state_dim, action_dim, config.hidden, config.time_dim, config.schedule()?, 0)?;
    let critic = new_critic(state_dim, action_dim, config.hidden, 0)?;
    let state = vec![0.0; state_dim];
    let noise = vec![0.0; action_dim];
    reset_mac_count();
    actor.denoise(&state, &noise)?;
    let action_macs = mac_count();
    let (sp, sq) = (actor.net().num_params(), critic.num_params());
    Ok(ComplexityReport {
        actor_params: sp,
        critic_params: sq,
        steps: config.steps,
        action_macs,
        update_estimate: ((config.steps + 1) * sp + 2 * sq) as u64,
    })
}
