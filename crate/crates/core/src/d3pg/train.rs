use std::io::Write;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use super::{
    actor_loss, critic_input, critic_target, decode_action, explore, initial_noise, new_critic, soft_update, ActorKind,
    D3pgConfig, DiffusionActor, DiffusionSchedule, ReplayBuffer, ReplayRecord,
};
use crate::approx::{Activation, Mlp, MlpSnapshot, Optimizer};
use crate::error::{Error, Result};
use crate::provision::{expected_reward, ProvisionAction, ServiceEnv};
use crate::rng::Stream;

pub const ACTOR_MAGIC: &str = "AES-D3PG-1";

/// Actor produced by [`train_d3pg`].
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedActor {
    Diffusion(DiffusionActor),
    /// `tanh` MLP from state to raw action.
    Gaussian(Mlp),
}

impl TrainedActor {
    fn new(config: &D3pgConfig, state_dim: usize, action_dim: usize, seed: u64) -> Result<Self> {
        Ok(match config.actor {
            ActorKind::Diffusion => TrainedActor::Diffusion(DiffusionActor::new(
                state_dim,
                action_dim,
                config.hidden,
                config.time_dim,
                config.schedule()?,
                seed,
            )?),
            ActorKind::Gaussian => {
                let mut net = Mlp::new(
                    &[state_dim, config.hidden, config.hidden, action_dim],
                    &[Activation::Tanh, Activation::Tanh, Activation::Tanh],
                    seed,
                )?;
                net.zero_output_layer();
                TrainedActor::Gaussian(net)
            }
        })
    }

    pub fn kind(&self) -> ActorKind {
        match self {
            TrainedActor::Diffusion(_) => ActorKind::Diffusion,
            TrainedActor::Gaussian(_) => ActorKind::Gaussian,
        }
    }

    pub fn net(&self) -> &Mlp {
        match self {
            TrainedActor::Diffusion(a) => a.net(),
            TrainedActor::Gaussian(n) => n,
        }
    }

    fn net_mut(&mut self) -> &mut Mlp {
        match self {
            TrainedActor::Diffusion(a) => a.net_mut(),
            TrainedActor::Gaussian(n) => n,
        }
    }

    /// Raw action before exploration noise and clipping. The diffusion actor
    /// draws its initial noise from `rng`; the MLP actor ignores it.
    pub fn act<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        match self {
            TrainedActor::Diffusion(a) => a.denoise(state, &initial_noise(a.action_dim(), rng)),
            TrainedActor::Gaussian(n) => n.forward(state),
        }
    }

    pub fn to_snapshot(&self) -> ActorSnapshot {
        let (schedule, time_dim, state_dim) = match self {
            TrainedActor::Diffusion(a) => (a.schedule().betas().to_vec(), a.time_dim(), a.state_dim()),
            TrainedActor::Gaussian(n) => (Vec::new(), 0, n.input_dim()),
        };
        ActorSnapshot {
            format: ACTOR_MAGIC.to_string(),
            kind: self.kind(),
            state_dim,
            time_dim,
            betas: schedule,
            network: MlpSnapshot::from(self.net()),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(&self.to_snapshot())?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        serde_json::from_str::<ActorSnapshot>(&std::fs::read_to_string(path)?)?.into_actor()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorSnapshot {
    pub format: String,
    pub kind: ActorKind,
    pub state_dim: usize,
    pub time_dim: usize,
    /// Diffusion schedule; empty for the MLP actor.
    pub betas: Vec<f64>,
    pub network: MlpSnapshot,
}

impl ActorSnapshot {
    pub fn into_actor(self) -> Result<TrainedActor> {
        if self.format != ACTOR_MAGIC {
            return Err(Error::invalid(format!(
                "unsupported actor format {:?}, expected {ACTOR_MAGIC:?}",
                self.format
            )));
        }
        let net = self.network.into_mlp()?;
        match self.kind {
            ActorKind::Diffusion => {
                let action_dim = net.output_dim();
                let schedule = DiffusionSchedule::from_betas(self.betas)?;
                Ok(TrainedActor::Diffusion(DiffusionActor::from_net(
                    net,
                    schedule,
                    self.state_dim,
                    action_dim,
                    self.time_dim,
                )?))
            }
            ActorKind::Gaussian => Ok(TrainedActor::Gaussian(net)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct D3pgEpisode {
    pub episode: usize,
    /// Mean step reward over the episode.
    pub reward: f64,
    pub qoe_sum: f64,
    pub cost_sum: f64,
    pub constraint_violations: usize,
}

/// Greedy (noise-free) performance of an actor under the expected reward.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GreedyEvaluation {
    /// Mean expected reward over the evaluated actions.
    pub expected_reward: f64,
    /// Mean power of each user.
    pub mean_power: Vec<f64>,
    /// Mean inference count of each user.
    pub mean_inferences: Vec<f64>,
    /// Action from the first draw.
    pub action: ProvisionAction,
}

impl GreedyEvaluation {
    /// User with the largest mean power; ties go to the lowest index.
    pub fn top_power_user(&self) -> usize {
        self.mean_power
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
            .0
    }
}

#[derive(Debug, Clone)]
pub struct D3pgOutcome {
    pub actor: TrainedActor,
    pub curve: Vec<D3pgEpisode>,
    pub greedy: GreedyEvaluation,
}

impl D3pgOutcome {
    pub fn write_curve_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "episode,reward,qoe_sum,cost_sum,constraint_violations")?;
        for e in &self.curve {
            writeln!(out, "{},{:e},{:e},{:e},{}", e.episode, e.reward, e.qoe_sum, e.cost_sum, e.constraint_violations)?;
        }
        Ok(())
    }
}

/// Runs the actor without exploration noise. The diffusion actor is
/// evaluated on `draws` initial-noise samples and the results averaged.
pub fn evaluate_greedy<R: Rng + ?Sized>(
    actor: &TrainedActor,
    env: &ServiceEnv<'_>,
    draws: usize,
    rng: &mut R,
) -> Result<GreedyEvaluation> {
    let q = env.num_users();
    let state = env.state_encoding();
    let draws = if actor.kind() == ActorKind::Gaussian { 1 } else { draws.max(1) };
    let mut total = 0.0;
    let mut mean_power = vec![0.0; q];
    let mut mean_inferences = vec![0.0; q];
    let mut first = None;
    for _ in 0..draws {
        let raw = explore(&actor.act(&state, rng)?, 0.0, rng);
        let action = decode_action(&raw, q, env.qoe_config().n_max, env.p_total())?;
        total += expected_reward(env, &action)?;
        for (i, a) in action.users.iter().enumerate() {
            mean_power[i] += a.power / draws as f64;
            mean_inferences[i] += a.inferences as f64 / draws as f64;
        }
        first.get_or_insert(action);
    }
    Ok(GreedyEvaluation {
        expected_reward: total / draws as f64,
        mean_power,
        mean_inferences,
        action: first.expect("at least one draw"),
    })
}

struct Learner {
    actor: TrainedActor,
    target_actor: TrainedActor,
    critics: [Mlp; 2],
    target_critics: [Mlp; 2],
    actor_opt: Optimizer,
    critic_opts: [Optimizer; 2],
}

impl Learner {
    fn update(&mut self, config: &D3pgConfig, batch: &[&ReplayRecord], rng: &mut Stream) -> Result<()> {
        let n = batch.len() as f64;
        let mut targets = Vec::with_capacity(batch.len());
        for r in batch {
            let next = if r.terminal {
                None
            } else {
                let a = explore(&self.target_actor.act(&r.next_state, rng)?, 0.0, rng);
                let x = critic_input(&r.next_state, &a);
                Some((self.target_critics[0].forward(&x)?[0], self.target_critics[1].forward(&x)?[0]))
            };
            targets.push(critic_target(r.reward, config.gamma, next));
        }
        for (critic, opt) in self.critics.iter_mut().zip(&mut self.critic_opts) {
            let mut grads = vec![0.0; critic.num_params()];
            for (r, y) in batch.iter().zip(&targets) {
                let trace = critic.forward_trace(&critic_input(&r.state, &r.action))?;
                let diff = trace.output()[0] - y;
                critic.backward(&trace, &[2.0 * diff / n], &mut grads)?;
            }
            finite(&grads, "critic gradient")?;
            opt.step(critic.params_mut(), &grads)?;
        }

        let states: Vec<Vec<f64>> = batch.iter().map(|r| r.state.clone()).collect();
        let grads = match &self.actor {
            TrainedActor::Diffusion(actor) => {
                let noises: Vec<Vec<f64>> = states.iter().map(|_| initial_noise(actor.action_dim(), rng)).collect();
                actor_loss(actor, &self.critics[0], &states, &noises, config.range_penalty)?.1
            }
            TrainedActor::Gaussian(net) => {
                let mut grads = vec![0.0; net.num_params()];
                for s in &states {
                    let trace = net.forward_trace(s)?;
                    let (_, dq) = super::ActionValue::value_and_action_grad(&self.critics[0], s, trace.output())?;
                    let up: Vec<f64> = dq.iter().map(|d| -d / n).collect();
                    net.backward(&trace, &up, &mut grads)?;
                }
                grads
            }
        };
        finite(&grads, "actor gradient")?;
        self.actor_opt.step(self.actor.net_mut().params_mut(), &grads)?;

        for (t, o) in self.target_critics.iter_mut().zip(&self.critics) {
            soft_update(t.params_mut(), o.params(), config.tau)?;
        }
        soft_update(self.target_actor.net_mut().params_mut(), self.actor.net().params(), config.tau)?;
        finite(self.actor.net().params(), "actor parameters")?;
        Ok(())
    }
}

fn finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::numeric(format!("{what} diverged")))
    }
}

/// Trains an actor and twin critics on `env`.
///
/// Every step draws an action from the actor, adds decaying Gaussian
/// exploration noise in raw space, clips to `[-1, 1]`, executes it, stores
/// the transition and, once the buffer holds a batch, updates both critics,
/// the actor and the target networks. Divergence aborts with a numeric
/// error naming the episode.
pub fn train_d3pg(env: &ServiceEnv<'_>, config: &D3pgConfig, rng: &mut Stream) -> Result<D3pgOutcome> {
    config.validate()?;
    let q = env.num_users();
    let state = env.state_encoding();
    let (state_dim, action_dim) = (state.len(), 2 * q);
    let actor = TrainedActor::new(config, state_dim, action_dim, rng.random())?;
    let critics = [
        new_critic(state_dim, action_dim, config.hidden, rng.random())?,
        new_critic(state_dim, action_dim, config.hidden, rng.random())?,
    ];
    let mut learner = Learner {
        target_actor: actor.clone(),
        actor_opt: Optimizer::adam(config.lr_actor, actor.net().num_params())?,
        actor,
        target_critics: critics.clone(),
        critic_opts: [
            Optimizer::adam(config.lr_critic, critics[0].num_params())?,
            Optimizer::adam(config.lr_critic, critics[1].num_params())?,
        ],
        critics,
    };
    let mut buffer = ReplayBuffer::new(config.buffer_capacity)?;
    let mut curve = Vec::with_capacity(config.episodes);
    for episode in 0..config.episodes {
        let std = config.exploration_std(episode);
        let mut row = D3pgEpisode { episode, reward: 0.0, qoe_sum: 0.0, cost_sum: 0.0, constraint_violations: 0 };
        for step in 0..config.episode_len {
            let raw = explore(&learner.actor.act(&state, rng)?, std, rng);
            let action = decode_action(&raw, q, env.qoe_config().n_max, env.p_total())?;
            let out = env.step(&action, &mut *rng as &mut dyn RngCore)?;
            let b = out.breakdown;
            row.reward += b.reward / config.episode_len as f64;
            row.qoe_sum += b.qoe_sum;
            row.cost_sum += b.cost_sum;
            row.constraint_violations += b.violations;
            buffer.push(ReplayRecord {
                state: state.clone(),
                action: raw,
                reward: b.reward,
                next_state: state.clone(),
                terminal: step + 1 == config.episode_len,
            })?;
            if buffer.len() >= config.batch_size {
                let batch = buffer.sample(config.batch_size, rng);
                learner.update(config, &batch, rng).map_err(|e| Error::numeric(format!("episode {episode}: {e}")))?;
            }
        }
        if episode % 200 == 0 {
            log::debug!("d3pg episode {episode}: reward {:.4}", row.reward);
        }
        curve.push(row);
    }
    let mut eval_rng = Stream::seed_from_u64(rng.random());
    let greedy = evaluate_greedy(&learner.actor, env, config.eval_draws, &mut eval_rng)?;
    Ok(D3pgOutcome { actor: learner.actor, curve, greedy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genmodel::{FixedStrategy, StrategyCatalog};
    use crate::provision::{QoEConfig, Scenario};
    use crate::rng;

    fn tiny() -> D3pgConfig {
        D3pgConfig {
            episodes: 60,
            batch_size: 16,
            hidden: 16,
            buffer_capacity: 100,
            eval_draws: 4,
            ..D3pgConfig::default()
        }
    }

    #[test]
    fn training_is_reproducible() {
        let catalog = StrategyCatalog::default();
        let sel = FixedStrategy(6);
        let env = ServiceEnv::new(&Scenario::default(), &catalog, &sel, QoEConfig::default(), 8, 0).unwrap();
        for kind in [ActorKind::Diffusion, ActorKind::Gaussian] {
            let cfg = D3pgConfig { actor: kind, ..tiny() };
            let a = train_d3pg(&env, &cfg, &mut rng::stream(3, rng::D3PG)).unwrap();
            let b = train_d3pg(&env, &cfg, &mut rng::stream(3, rng::D3PG)).unwrap();
            assert_eq!(a.actor, b.actor);
            assert_eq!(a.greedy, b.greedy);
            let (mut x, mut y) = (Vec::new(), Vec::new());
            a.write_curve_csv(&mut x).unwrap();
            b.write_curve_csv(&mut y).unwrap();
            assert_eq!(x, y);
            assert_eq!(a.curve.len(), 60);
            assert!(a.greedy.action.is_feasible(env.p_total()));
        }
    }

    #[test]
    fn multi_step_episodes_bootstrap() {
        let catalog = StrategyCatalog::default();
        let sel = FixedStrategy(6);
        let env = ServiceEnv::new(&Scenario::default(), &catalog, &sel, QoEConfig::default(), 8, 0).unwrap();
        let cfg = D3pgConfig { episode_len: 3, episodes: 10, ..tiny() };
        let out = train_d3pg(&env, &cfg, &mut rng::stream(1, rng::D3PG)).unwrap();
        assert_eq!(out.curve.len(), 10);
    }

    #[test]
    fn snapshot_round_trip() {
        let catalog = StrategyCatalog::default();
        let sel = FixedStrategy(6);
        let env = ServiceEnv::new(&Scenario::default(), &catalog, &sel, QoEConfig::default(), 8, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for kind in [ActorKind::Diffusion, ActorKind::Gaussian] {
            let cfg = D3pgConfig { actor: kind, episodes: 20, ..tiny() };
            let out = train_d3pg(&env, &cfg, &mut rng::stream(0, rng::D3PG)).unwrap();
            let path = dir.path().join("actor.json");
            out.actor.save(&path).unwrap();
            assert_eq!(TrainedActor::load(&path).unwrap(), out.actor);
        }
        let mut snap = TrainedActor::Gaussian(Mlp::zeros(&[2, 2], &[Activation::Tanh]).unwrap()).to_snapshot();
        snap.format = "nope".into();
        assert!(snap.into_actor().is_err());
    }
}
