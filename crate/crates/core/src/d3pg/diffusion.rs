use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::approx::{Activation, Mlp, Trace};
use crate::error::{Error, Result};

/// Noise schedule of the action diffusion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl DiffusionSchedule {
    /// Schedule from explicit `beta_t` in `[0, 1)`.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::invalid("a diffusion schedule needs at least one step"));
        }
        if let Some(b) = betas.iter().find(|b| !(0.0..1.0).contains(*b)) {
            return Err(Error::invalid(format!("beta must lie in [0, 1), got {b}")));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self { betas, alphas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// `alpha_t` for `t` in `1..=T`.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// `prod_{s <= t} alpha_s`; `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// Coefficients of one reverse step `a_{t-1} = k (a_t - c eps)`:
    /// `k = 1 / sqrt(alpha_t)` and `c = (1 - alpha_t) / sqrt(1 - alpha_bar_t)`,
    /// with `c = 0` on noiseless steps.
    pub fn reverse_coefficients(&self, t: usize) -> (f64, f64) {
        let a = self.alpha(t);
        let k = 1.0 / a.sqrt();
        let c = if a < 1.0 { (1.0 - a) / (1.0 - self.alpha_bar(t)).sqrt() } else { 0.0 };
        (k, c)
    }
}

/// Linear `beta` ramp from `beta_start` to `beta_end` over `t_steps` steps.
pub fn make_schedule(t_steps: usize, beta_start: f64, beta_end: f64) -> Result<DiffusionSchedule> {
    if t_steps == 0 {
        return Err(Error::invalid("a diffusion schedule needs at least one step"));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::invalid(format!("need 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}")));
    }
    let betas = (0..t_steps)
        .map(|i| {
            if t_steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (t_steps - 1) as f64
            }
        })
        .collect();
    DiffusionSchedule::from_betas(betas)
}

/// Closed-form jump `sqrt(alpha_bar_t) a_0 + sqrt(1 - alpha_bar_t) eps`.
pub fn forward_diffuse<R: Rng + ?Sized>(
    a0: &[f64],
    t: usize,
    schedule: &DiffusionSchedule,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if t == 0 || t > schedule.steps() {
        return Err(Error::invalid(format!("diffusion step {t} outside 1..={}", schedule.steps())));
    }
    let ab = schedule.alpha_bar(t);
    Ok(a0.iter().map(|a| ab.sqrt() * a + (1.0 - ab).sqrt() * rng.sample::<f64, _>(StandardNormal)).collect())
}

/// Sinusoidal embedding of the step index: `dim / 2` sine/cosine pairs with
/// geometrically spaced frequencies.
pub fn timestep_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = (-(100.0f64.ln()) * i as f64 / half.max(1) as f64).exp();
        out.push((t as f64 * freq).sin());
        out.push((t as f64 * freq).cos());
    }
    out.resize(dim, 0.0);
    out
}

/// Noise predictor `eps_theta(a_t, t, s)` and the deterministic reverse chain
/// built on it.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionActor {
    net: Mlp,
    schedule: DiffusionSchedule,
    action_dim: usize,
    state_dim: usize,
    time_dim: usize,
}

/// Per-step traces of one reverse chain, for backpropagation.
#[derive(Debug, Clone)]
pub struct ChainTrace {
    steps: Vec<Trace>,
    output: Vec<f64>,
}

impl ChainTrace {
    /// `a_0` before exploration noise and clipping.
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

impl DiffusionActor {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        hidden: usize,
        time_dim: usize,
        schedule: DiffusionSchedule,
        seed: u64,
    ) -> Result<Self> {
        let net = Mlp::new(
            &[action_dim + time_dim + state_dim, hidden, hidden, action_dim],
            &[Activation::Tanh, Activation::Tanh, Activation::Identity],
            seed,
        )?;
        Self::from_net(net, schedule, state_dim, action_dim, time_dim)
    }

    pub fn from_net(
        net: Mlp,
        schedule: DiffusionSchedule,
        state_dim: usize,
        action_dim: usize,
        time_dim: usize,
    ) -> Result<Self> {
        if net.input_dim() != action_dim + time_dim + state_dim || net.output_dim() != action_dim {
            return Err(Error::invalid(format!(
                "noise network {:?} does not fit action {action_dim}, time {time_dim}, state {state_dim}",
                net.sizes()
            )));
        }
        Ok(Self { net, schedule, action_dim, state_dim, time_dim })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn schedule(&self) -> &DiffusionSchedule {
        &self.schedule
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn time_dim(&self) -> usize {
        self.time_dim
    }

    fn step_input(&self, a_t: &[f64], t: usize, state: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.net.input_dim());
        x.extend_from_slice(a_t);
        x.extend(timestep_embedding(t, self.time_dim));
        x.extend_from_slice(state);
        x
    }

    fn check(&self, state: &[f64], a_t: &[f64]) -> Result<()> {
        if state.len() != self.state_dim || a_t.len() != self.action_dim {
            return Err(Error::invalid(format!(
                "expected state {} and noise {}, got {} and {}",
                self.state_dim,
                self.action_dim,
                state.len(),
                a_t.len()
            )));
        }
        Ok(())
    }

    /// Runs `a_{t-1} = k_t (a_t - c_t eps_theta(a_t, t, s))` from `t = T`
    /// down to 1 starting at `a_T = noise`.
    pub fn denoise(&self, state: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
        self.check(state, noise)?;
        let mut a = noise.to_vec();
        for t in (1..=self.schedule.steps()).rev() {
            let eps = self.net.forward(&self.step_input(&a, t, state))?;
            let (k, c) = self.schedule.reverse_coefficients(t);
            for (x, e) in a.iter_mut().zip(&eps) {
                *x = k * (*x - c * e);
            }
        }
        Ok(a)
    }

    pub fn denoise_traced(&self, state: &[f64], noise: &[f64]) -> Result<ChainTrace> {
        self.check(state, noise)?;
        let mut a = noise.to_vec();
        let mut steps = Vec::with_capacity(self.schedule.steps());
        for t in (1..=self.schedule.steps()).rev() {
            let trace = self.net.forward_trace(&self.step_input(&a, t, state))?;
            let (k, c) = self.schedule.reverse_coefficients(t);
            for (x, e) in a.iter_mut().zip(trace.output()) {
                *x = k * (*x - c * e);
            }
            steps.push(trace);
        }
        Ok(ChainTrace { steps, output: a })
    }

    /// Accumulates `d loss / d params` into `grads` given `d loss / d a_0`.
    pub fn chain_backward(&self, trace: &ChainTrace, grad_a0: &[f64], grads: &mut [f64]) -> Result<()> {
        let mut g = grad_a0.to_vec();
        // Steps were recorded from t = T down to 1; walk them back up.
        for (i, step) in trace.steps.iter().enumerate().rev() {
            let t = self.schedule.steps() - i;
            let (k, c) = self.schedule.reverse_coefficients(t);
            let upstream: Vec<f64> = g.iter().map(|v| -k * c * v).collect();
            let dx = self.net.backward(step, &upstream, grads)?;
            for (j, v) in g.iter_mut().enumerate() {
                *v = k * *v + dx[j];
            }
        }
        Ok(())
    }

    /// Trains `eps_theta` to predict the noise added by [`forward_diffuse`]
    /// (the standard denoising objective), returning the batch loss and
    /// accumulating its gradient.
    pub fn denoising_gradient<R: Rng + ?Sized>(
        &self,
        state: &[f64],
        a0: &[f64],
        rng: &mut R,
        grads: &mut [f64],
    ) -> Result<f64> {
        self.check(state, a0)?;
        let t = rng.random_range(1..=self.schedule.steps());
        let ab = self.schedule.alpha_bar(t);
        let eps: Vec<f64> = (0..self.action_dim).map(|_| rng.sample(StandardNormal)).collect();
        let a_t: Vec<f64> = a0.iter().zip(&eps).map(|(a, e)| ab.sqrt() * a + (1.0 - ab).sqrt() * e).collect();
        let trace = self.net.forward_trace(&self.step_input(&a_t, t, state))?;
        let diff: Vec<f64> = trace.output().iter().zip(&eps).map(|(p, e)| p - e).collect();
        self.net.backward(&trace, &diff.iter().map(|d| 2.0 * d / diff.len() as f64).collect::<Vec<_>>(), grads)?;
        Ok(diff.iter().map(|d| d * d).sum::<f64>() / diff.len() as f64)
    }
}

/// Draws the initial `a_T ~ N(0, I)`.
pub fn initial_noise<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Exploration noise followed by clipping to `[-1, 1]`.
pub fn explore<R: Rng + ?Sized>(a0: &[f64], std: f64, rng: &mut R) -> Vec<f64> {
    a0.iter()
        .map(|a| {
            let noisy = if std > 0.0 { a + std * rng.sample::<f64, _>(StandardNormal) } else { *a };
            noisy.clamp(-1.0, 1.0)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::{grad_check, Optimizer};
    use crate::rng;
    use statrs::distribution::{ContinuousCDF, Normal};

    #[test]
    fn zero_betas_are_noiseless() {
        let s = DiffusionSchedule::from_betas(vec![0.0; 4]).unwrap();
        assert_eq!(s.alpha_bar(4), 1.0);
        let a0 = vec![0.3, -0.7];
        let at = forward_diffuse(&a0, 3, &s, &mut rng::stream(0, "fd")).unwrap();
        assert_eq!(at, a0);
    }

    #[test]
    fn linear_schedule_golden() {
        let s = make_schedule(5, 1e-4, 0.02).unwrap();
        let expect: f64 = [1e-4, 0.005_075, 0.010_05, 0.015_025, 0.02].iter().map(|b| 1.0 - b).product();
        assert!((s.alpha_bar(5) - expect).abs() < 1e-15);
        assert!((s.alpha_bar(5) - 0.950_629_868_238_709_9).abs() < 1e-12);
        for t in 1..5 {
            assert!(s.alpha_bar(t + 1) < s.alpha_bar(t));
        }
        assert!(make_schedule(5, 0.0, 0.1).is_err());
        assert!(make_schedule(5, 0.2, 0.1).is_err());
        assert!(make_schedule(0, 0.1, 0.2).is_err());
        assert!(make_schedule(3, 0.1, 1.0).is_err());
    }

    #[test]
    fn forward_variance_matches_closed_form() {
        // alpha_bar_1 = 0.75.
        let s = DiffusionSchedule::from_betas(vec![0.25]).unwrap();
        let mut r = rng::stream(1, "fd-var");
        let n = 100_000;
        let mut sum2 = 0.0;
        for _ in 0..n {
            let x = forward_diffuse(&[0.0], 1, &s, &mut r).unwrap()[0];
            sum2 += x * x;
        }
        let std = (sum2 / n as f64).sqrt();
        assert!((std - 0.5).abs() < 0.005, "{std}");
    }

    #[test]
    fn conditional_variance_is_one_minus_alpha_bar() {
        let s = make_schedule(5, 0.05, 0.7).unwrap();
        let mut r = rng::stream(2, "fd-var");
        let a0 = [0.4];
        for t in [1, 3, 5] {
            let n = 100_000;
            let xs: Vec<f64> = (0..n).map(|_| forward_diffuse(&a0, t, &s, &mut r).unwrap()[0]).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
            assert!((var / (1.0 - s.alpha_bar(t)) - 1.0).abs() < 0.02, "t={t}");
        }
    }

    #[test]
    fn fully_noised_action_is_standard_normal() {
        let s = DiffusionSchedule::from_betas(vec![0.9; 10]).unwrap();
        assert!(s.alpha_bar(10) < 1e-9);
        let mut r = rng::stream(3, "fd-ks");
        let n = 5000;
        let mut xs: Vec<f64> = (0..n).map(|_| forward_diffuse(&[0.8], 10, &s, &mut r).unwrap()[0]).collect();
        xs.sort_by(f64::total_cmp);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let d = xs
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let f = normal.cdf(*x);
                (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
            })
            .fold(0.0, f64::max);
        // Kolmogorov critical value at the 1% level.
        assert!(d < 1.628 / (n as f64).sqrt(), "{d}");
    }

    #[test]
    fn identity_chain_returns_the_noise() {
        let s = DiffusionSchedule::from_betas(vec![0.0; 3]).unwrap();
        let mut actor = DiffusionActor::new(2, 2, 8, 4, s, 1).unwrap();
        actor.net_mut().zero_output_layer();
        let noise = vec![0.3, -1.7];
        assert_eq!(actor.denoise(&[0.1, 0.2], &noise).unwrap(), noise);
        // Zero predicted noise under a real schedule just rescales.
        let s = make_schedule(3, 0.1, 0.3).unwrap();
        let mut actor = DiffusionActor::new(2, 2, 8, 4, s.clone(), 1).unwrap();
        actor.net_mut().zero_output_layer();
        let out = actor.denoise(&[0.1, 0.2], &noise).unwrap();
        assert!((out[0] - noise[0] / s.alpha_bar(3).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn exploration_clips_and_is_deterministic() {
        let a = explore(&[0.5, 3.0, -2.0], 0.0, &mut rng::stream(0, "x"));
        assert_eq!(a, vec![0.5, 1.0, -1.0]);
        let b = explore(&[0.5, 0.0], 0.3, &mut rng::stream(5, "x"));
        let c = explore(&[0.5, 0.0], 0.3, &mut rng::stream(5, "x"));
        assert_eq!(b, c);
        assert!(b.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn chain_gradient_matches_finite_differences() {
        let s = make_schedule(5, 0.05, 0.7).unwrap();
        let actor = DiffusionActor::new(3, 2, 10, 4, s, 9).unwrap();
        let state = [0.2, -0.4, 0.9];
        let noise = [0.7, -0.3];
        let w = [0.8, -1.3];
        let err = grad_check(
            |p| {
                let net = Mlp::from_params(actor.net().sizes(), actor.net().activations(), p.to_vec()).unwrap();
                let a = DiffusionActor::from_net(net, actor.schedule().clone(), 3, 2, 4).unwrap();
                let tr = a.denoise_traced(&state, &noise).unwrap();
                let loss: f64 = tr.output().iter().zip(&w).map(|(x, w)| w * x * x).sum();
                let g0: Vec<f64> = tr.output().iter().zip(&w).map(|(x, w)| 2.0 * w * x).collect();
                let mut g = vec![0.0; p.len()];
                a.chain_backward(&tr, &g0, &mut g).unwrap();
                (loss, g)
            },
            actor.net().params(),
            1e-6,
        );
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn behavior_cloning_reproduces_targets() {
        // Two states with fixed target actions; train eps_theta with the
        // denoising objective and sample through the reverse chain.
        let s = make_schedule(5, 0.05, 0.7).unwrap();
        let mut actor = DiffusionActor::new(1, 2, 32, 4, s, 4).unwrap();
        let data = [([1.0], [0.5, -0.5]), ([-1.0], [-0.3, 0.8])];
        let mut opt = Optimizer::adam(3e-3, actor.net().num_params()).unwrap();
        let mut r = rng::stream(4, "bc");
        for _ in 0..6000 {
            let mut g = vec![0.0; actor.net().num_params()];
            for (st, a0) in &data {
                actor.denoising_gradient(st, a0, &mut r, &mut g).unwrap();
            }
            opt.step(actor.net_mut().params_mut(), &g).unwrap();
        }
        let mut mse = 0.0;
        let n = 200;
        for _ in 0..n {
            for (st, a0) in &data {
                let out = actor.denoise(st, &initial_noise(2, &mut r)).unwrap();
                mse += out.iter().zip(a0).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / 2.0;
            }
        }
        mse /= (2 * n) as f64;
        assert!(mse < 1e-2, "{mse}");
    }
}
