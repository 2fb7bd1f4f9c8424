use std::io::Write;

use log::debug;
use rand::{Rng, RngCore, SeedableRng};
use serde::Serialize;

use super::policy::sample_categorical;
use super::{
    advantage, disc_prob, discriminator_gradient, reward_from_prob, softmax, standardize, surrogate_slope, IrlConfig,
    IrlState, StrategyPolicy,
};
use crate::approx::{Activation, Mlp, Optimizer};
use crate::channel::BerCurve;
use crate::error::{Error, Result};
use crate::genmodel::{
    sample_power, DemoDataset, ExpertPolicy, PromptSpec, SelectionContext, StrategyCatalog, StrategySelector,
};
use crate::rng::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IrlEpoch {
    pub epoch: usize,
    pub disc_loss: f64,
    pub gen_reward: f64,
    pub expert_match_rate: f64,
    pub utility: f64,
}

#[derive(Debug, Clone)]
pub struct IrlOutcome {
    pub policy: StrategyPolicy,
    pub discriminator: Mlp,
    /// Held-out match rate of the policy before any update.
    pub untrained_match_rate: f64,
    pub curve: Vec<IrlEpoch>,
}

impl IrlOutcome {
    pub fn final_epoch(&self) -> Option<&IrlEpoch> {
        self.curve.last()
    }

    pub fn write_curve_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "epoch,disc_loss,gen_reward,expert_match_rate,utility")?;
        for e in &self.curve {
            writeln!(
                out,
                "{},{:e},{:e},{:e},{:e}",
                e.epoch, e.disc_loss, e.gen_reward, e.expert_match_rate, e.utility
            )?;
        }
        Ok(())
    }
}

struct Draw {
    prompt: usize,
    power: f64,
    encoded: Vec<f64>,
}

/// A random decision point: prompt and a power drawn around the
/// demonstration grid. Every decision opens a fresh episode, so the history
/// is empty (all-zero padding).
fn draw_state<R: Rng + ?Sized>(
    prompts: &[PromptSpec],
    grid: &[f64],
    p_total: f64,
    config: &IrlConfig,
    num_strategies: usize,
    rng: &mut R,
) -> Result<Draw> {
    let prompt = rng.random_range(0..prompts.len());
    let power = sample_power(grid, rng);
    let state = IrlState { history: Vec::new(), embedding: prompts[prompt].embedding.clone(), power: power / p_total };
    Ok(Draw { prompt, power, encoded: state.encode(config.history_len, num_strategies)? })
}

struct HeldOut {
    draws: Vec<Draw>,
    labels: Vec<usize>,
    bers: Vec<f64>,
}

impl HeldOut {
    fn score(&self, policy: &StrategyPolicy, prompts: &[PromptSpec], catalog: &StrategyCatalog) -> Result<(f64, f64)> {
        let mut hits = 0.0;
        let mut utility = 0.0;
        for ((d, label), ber) in self.draws.iter().zip(&self.labels).zip(&self.bers) {
            let probs = policy.probs(&d.encoded)?;
            hits += probs[*label];
            let a = policy.greedy(&d.encoded)?;
            utility += catalog.expected_user_score(&prompts[d.prompt], a, *ber)?;
        }
        let n = self.draws.len() as f64;
        Ok((hits / n, utility / n))
    }
}

fn finite(what: &str, epoch: usize, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::numeric(format!("{what} became {v} at epoch {epoch}")))
    }
}

/// Adversarial imitation of `expert` over the prompts of `dataset`.
///
/// Each epoch draws one batch of decision points, labels them with the
/// expert, samples the current policy on the same points, then takes one
/// discriminator step, `ppo_epochs` clipped-surrogate steps on standardized
/// advantages and as many critic steps. `link` is the channel of the user
/// who scored the demonstrations; it only feeds the utility column.
pub fn train_irl(
    dataset: &DemoDataset,
    expert: &ExpertPolicy,
    catalog: &StrategyCatalog,
    link: &BerCurve,
    config: &IrlConfig,
    rng: &mut Stream,
) -> Result<IrlOutcome> {
    config.validate()?;
    let prompts = &dataset.prompts;
    let grid = expert.power_grid();
    if prompts.is_empty() || grid.is_empty() {
        return Err(Error::invalid("imitation needs prompts and a power grid"));
    }
    let emb_dim = prompts[0].embedding.len();
    if prompts.iter().any(|p| p.embedding.len() != emb_dim) {
        return Err(Error::invalid("prompt embeddings differ in length"));
    }
    for p in prompts {
        for g in grid {
            expert.lookup(p.id, *g)?;
        }
    }
    let n_act = catalog.num_strategies();
    let p_total = link.params().p_total;
    if grid.iter().any(|g| !(*g > 0.0 && *g <= p_total)) {
        return Err(Error::invalid("demonstration powers must lie in (0, p_total]"));
    }
    let state_dim = IrlState::encoded_len(config.history_len, n_act, emb_dim);

    let mut policy = StrategyPolicy::new(config, n_act, emb_dim, rng.random())?;
    let mut critic = Mlp::new(&[state_dim, config.hidden, 1], &[Activation::Tanh, Activation::Identity], rng.random())?;
    let mut disc = Mlp::new(
        &[state_dim, config.hidden, config.hidden, n_act],
        &[Activation::Tanh, Activation::Tanh, Activation::Identity],
        rng.random(),
    )?;
    let mut held_rng = Stream::seed_from_u64(rng.random());

    let mut held = HeldOut { draws: Vec::new(), labels: Vec::new(), bers: Vec::new() };
    for _ in 0..config.eval_states {
        let d = draw_state(prompts, grid, p_total, config, n_act, &mut held_rng)?;
        held.labels.push(expert.lookup(prompts[d.prompt].id, d.power)?);
        held.bers.push(link.ber(d.power)?);
        held.draws.push(d);
    }
    let (untrained_match_rate, _) = held.score(&policy, prompts, catalog)?;

    let mut opt_pi = Optimizer::adam(config.lr_actor, policy.net().num_params())?;
    let mut opt_v = Optimizer::adam(config.lr_critic, critic.num_params())?;
    let mut opt_d = Optimizer::adam(config.lr_discriminator, disc.num_params())?;

    let b = config.batch_size;
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let mut draws = Vec::with_capacity(b);
        let mut expert_in = Vec::with_capacity(b);
        let mut policy_in = Vec::with_capacity(b);
        let mut actions = Vec::with_capacity(b);
        let mut old_probs = Vec::with_capacity(b);
        for _ in 0..b {
            let d = draw_state(prompts, grid, p_total, config, n_act, rng)?;
            let a_e = expert.lookup(prompts[d.prompt].id, d.power)?;
            let probs = policy.probs(&d.encoded)?;
            let a = sample_categorical(&probs, rng);
            expert_in.push((d.encoded.clone(), a_e));
            policy_in.push((d.encoded.clone(), a));
            actions.push(a);
            old_probs.push(probs[a]);
            draws.push(d);
        }

        let mut disc_loss = f64::NAN;
        for step in 0..config.disc_steps {
            let mut g_d = vec![0.0; disc.num_params()];
            let loss =
                finite("discriminator loss", epoch, discriminator_gradient(&disc, &expert_in, &policy_in, &mut g_d)?)?;
            if step == 0 {
                disc_loss = loss;
            }
            opt_d.step(disc.params_mut(), &g_d)?;
        }

        let mut rewards = Vec::with_capacity(b);
        for (s, a) in &policy_in {
            rewards.push(finite("imitation reward", epoch, reward_from_prob(disc_prob(&disc, s, *a)?))?);
        }
        let gen_reward = rewards.iter().sum::<f64>() / b as f64;
        let mut adv = Vec::with_capacity(b);
        for (d, r) in draws.iter().zip(&rewards) {
            // Every decision is terminal, so V(s') = 0.
            adv.push(advantage(*r, config.gamma, critic.forward(&d.encoded)?[0], 0.0));
        }
        standardize(&mut adv);

        for _ in 0..config.ppo_epochs {
            let mut g = vec![0.0; policy.net().num_params()];
            for (i, d) in draws.iter().enumerate() {
                let trace = policy.net().forward_trace(&d.encoded)?;
                let pi = softmax(trace.output());
                let a = actions[i];
                let ratio = pi[a] / old_probs[i];
                let slope = surrogate_slope(ratio, adv[i], config.clip_eps);
                let entropy: f64 = -pi.iter().map(|p| p * p.max(1e-300).ln()).sum::<f64>();
                let upstream: Vec<f64> = (0..n_act)
                    .map(|j| {
                        let onehot = if j == a { 1.0 } else { 0.0 };
                        let surrogate = -slope * ratio * (onehot - pi[j]);
                        let bonus = config.entropy_coef * pi[j] * (pi[j].max(1e-300).ln() + entropy);
                        (surrogate + bonus) / b as f64
                    })
                    .collect();
                policy.net().backward(&trace, &upstream, &mut g)?;
            }
            opt_pi.step(policy.net_mut().params_mut(), &g)?;

            let mut gv = vec![0.0; critic.num_params()];
            for (d, r) in draws.iter().zip(&rewards) {
                let trace = critic.forward_trace(&d.encoded)?;
                // Terminal target: y = r.
                critic.backward(&trace, &[(trace.output()[0] - r) / b as f64], &mut gv)?;
            }
            opt_v.step(critic.params_mut(), &gv)?;
        }

        let (expert_match_rate, utility) = held.score(&policy, prompts, catalog)?;
        debug!("irl epoch {epoch}: disc {disc_loss:.4} reward {gen_reward:.4} match {expert_match_rate:.3} utility {utility:.4}");
        curve.push(IrlEpoch { epoch, disc_loss, gen_reward, expert_match_rate, utility });
    }
    Ok(IrlOutcome { policy, discriminator: disc, untrained_match_rate, curve })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyEvaluation {
    /// Mean sampled user-side score.
    pub mean_score: f64,
    /// Mean of the expected user-side score over the same decisions.
    pub expected_score: f64,
    /// Selection counts per strategy.
    pub histogram: Vec<usize>,
}

/// Serves `n_trials` single requests: a random prompt at a power drawn
/// around `power_grid`, the selector's strategy, one quality draw, and
/// degradation by the link BER.
pub fn evaluate_policy(
    selector: &dyn StrategySelector,
    prompts: &[PromptSpec],
    catalog: &StrategyCatalog,
    link: &BerCurve,
    power_grid: &[f64],
    n_trials: usize,
    rng: &mut Stream,
) -> Result<PolicyEvaluation> {
    if n_trials == 0 || prompts.is_empty() || power_grid.is_empty() {
        return Err(Error::invalid("evaluation needs trials, prompts and a power grid"));
    }
    let mut histogram = vec![0usize; catalog.num_strategies()];
    let (mut sampled, mut expected) = (0.0, 0.0);
    for _ in 0..n_trials {
        let prompt = &prompts[rng.random_range(0..prompts.len())];
        let power = sample_power(power_grid, rng);
        let ber = link.ber(power)?;
        let ctx = SelectionContext { prompt, power, p_total: link.params().p_total, ber, history: &[] };
        let k = selector.select(&ctx, &mut *rng as &mut dyn RngCore)?;
        if k >= histogram.len() {
            return Err(Error::invalid(format!("selector chose strategy {k} outside the catalog")));
        }
        histogram[k] += 1;
        let raw = catalog.raw_quality(prompt, k, rng)?;
        sampled += catalog.degrade(raw, prompt, k, ber);
        expected += catalog.expected_user_score(prompt, k, ber)?;
    }
    Ok(PolicyEvaluation {
        mean_score: sampled / n_trials as f64,
        expected_score: expected / n_trials as f64,
        histogram,
    })
}
