use rand::{Rng, SeedableRng};
use rand_distr::Exp1;
use serde::Serialize;

use super::{cost, latency_factor, Allocation, ProvisionAction, QoEConfig, ServiceEnv};
use crate::channel::allocate_power;
use crate::error::{Error, Result};
use crate::numerics::{integrate_adaptive, normal_cdf, normal_pdf};
use crate::rng::Stream;

/// Expected reward contribution of one user who gets `n` inferences at
/// `power`, with raw scores `Normal(mean, std)` clamped to `[0, 10]` and
/// scaled by `factor` on delivery.
///
/// The best of `n` draws has CDF `F^n`; the term integrates the QoE over the
/// part of that law above the threshold, adds the atom at the clamp `10`,
/// and charges the penalty for the mass below the threshold.
#[allow(clippy::too_many_arguments)]
pub fn expected_user_term(
    n: usize,
    power: f64,
    mean: f64,
    std: f64,
    factor: f64,
    threshold: f64,
    config: &QoEConfig,
) -> Result<f64> {
    let penalty = -config.penalty;
    if n == 0 || n as f64 * config.t_zeta > config.l_max || !(factor > 0.0) {
        return Ok(penalty);
    }
    let lf = latency_factor(n, config);
    let c = config.eta_c * cost(n, power, config.c_zeta);
    let gain = |x: f64| config.eta_q * lf * (factor * x / threshold).ln() - c;
    let x_th = threshold / factor;
    if x_th > 10.0 {
        return Ok(penalty);
    }
    if std == 0.0 {
        let x = mean.clamp(0.0, 10.0);
        return Ok(if x >= x_th { gain(x) } else { penalty });
    }
    let cdf = |x: f64| normal_cdf((x - mean) / std);
    let nf = n as f64;
    let p_below = cdf(x_th).powf(nf);
    let p_top = 1.0 - cdf(10.0).powf(nf);
    let lo = x_th.max(mean - 12.0 * std);
    let hi = (mean + 12.0 * std).min(10.0);
    let body = if hi > lo {
        integrate_adaptive(
            |x| {
                let z = (x - mean) / std;
                gain(x) * nf * normal_pdf(z) * normal_cdf(z).powf(nf - 1.0) / std
            },
            lo,
            hi,
            1e-10,
            1e-8,
        )?
    } else {
        0.0
    };
    Ok(penalty * p_below + body + gain(10.0) * p_top)
}

/// Positive integer vectors of length `parts` summing to `units`, in
/// lexicographic order.
pub fn power_compositions(parts: usize, units: usize) -> Vec<Vec<usize>> {
    fn rec(parts: usize, units: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if parts == 1 {
            prefix.push(units);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for k in 1..=units.saturating_sub(parts - 1) {
            prefix.push(k);
            rec(parts - 1, units - k, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if parts >= 1 && units >= parts {
        rec(parts, units, &mut Vec::with_capacity(parts), &mut out);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult {
    pub action: ProvisionAction,
    pub expected_reward: f64,
    /// Power units of each user.
    pub power_units: Vec<usize>,
    pub evaluated: usize,
}

pub const MAX_ORACLE_USERS: usize = 4;
pub const MAX_ORACLE_INFERENCES: usize = 6;
pub const MAX_POWER_UNITS: usize = 21;

/// Exhaustive search over `N in {1..N_max}^Q` and the power simplex split
/// into `units` equal steps (every user at least one step), maximizing the
/// expected reward.
///
/// Expected rewards come from [`expected_user_term`], not from sampling.
/// The environment's strategy selector is queried once per (user, power)
/// with a fixed stream, so it should be deterministic. Ties keep the
/// lexicographically smallest `(N, units)` pair.
pub fn brute_force_oracle(env: &ServiceEnv<'_>, units: usize) -> Result<OracleResult> {
    let q = env.num_users();
    let cfg = env.qoe_config();
    if q > MAX_ORACLE_USERS || cfg.n_max > MAX_ORACLE_INFERENCES || units > MAX_POWER_UNITS || units < q {
        return Err(Error::invalid(format!(
            "oracle grid too large or empty: {q} users, N_max {}, {units} power units",
            cfg.n_max
        )));
    }
    let p_total = env.p_total();
    let mut rng = Stream::seed_from_u64(0);
    let max_k = units - (q - 1);
    // table[i][n - 1][k - 1]
    let mut table = vec![vec![vec![0.0; max_k]; cfg.n_max]; q];
    for (i, user_table) in table.iter_mut().enumerate() {
        let threshold = env.scenario().users[i].threshold;
        for k in 1..=max_k {
            let power = k as f64 * p_total / units as f64;
            let (mean, std, factor) = user_quality_law(env, i, power, &mut rng)?;
            for n in 1..=cfg.n_max {
                user_table[n - 1][k - 1] = expected_user_term(n, power, mean, std, factor, threshold, cfg)?;
            }
        }
    }

    let compositions = power_compositions(q, units);
    let mut best: Option<(f64, Vec<usize>, Vec<usize>)> = None;
    let mut evaluated = 0;
    let mut ns = vec![1usize; q];
    loop {
        for comp in &compositions {
            let value: f64 = (0..q).map(|i| table[i][ns[i] - 1][comp[i] - 1]).sum();
            evaluated += 1;
            if best.as_ref().is_none_or(|(v, _, _)| value > *v) {
                best = Some((value, ns.clone(), comp.clone()));
            }
        }
        // Next N vector in lexicographic order.
        let mut i = q;
        loop {
            if i == 0 {
                let (expected_reward, ns, comp) = best.expect("at least one action evaluated");
                let weights: Vec<f64> = comp.iter().map(|&k| k as f64).collect();
                let powers = allocate_power(&weights, p_total)?;
                let users =
                    ns.iter().zip(powers).map(|(&inferences, power)| Allocation { inferences, power }).collect();
                return Ok(OracleResult {
                    action: ProvisionAction { users },
                    expected_reward,
                    power_units: comp,
                    evaluated,
                });
            }
            i -= 1;
            if ns[i] < cfg.n_max {
                ns[i] += 1;
                ns[i + 1..].iter_mut().for_each(|n| *n = 1);
                break;
            }
        }
    }
}

/// Raw-score mean, std and delivery factor of user `i` at `power`.
fn user_quality_law(env: &ServiceEnv<'_>, i: usize, power: f64, rng: &mut Stream) -> Result<(f64, f64, f64)> {
    let catalog = env.catalog();
    let prompt = &env.prompts()[i];
    let ber = env.ber(i, power)?;
    let strategy = env.select_strategy(i, power, ber, rng)?;
    let (mean, std) = catalog.quality_params(prompt, strategy)?;
    let factor = (1.0 - catalog.kappa * catalog.effective_complexity(prompt, strategy) * ber).max(0.0);
    Ok((mean, std, factor))
}

/// Expected reward of an arbitrary action, computed the same way as in
/// [`brute_force_oracle`].
pub fn expected_reward(env: &ServiceEnv<'_>, action: &ProvisionAction) -> Result<f64> {
    let q = env.num_users();
    if action.users.len() != q {
        return Err(Error::invalid(format!("action has {} allocations for {q} users", action.users.len())));
    }
    let cfg = env.qoe_config();
    if action.total_power() > env.p_total() {
        return Ok(-(q as f64) * cfg.penalty);
    }
    let mut rng = Stream::seed_from_u64(0);
    let mut total = 0.0;
    for (i, a) in action.users.iter().enumerate() {
        let threshold = env.scenario().users[i].threshold;
        let (mean, std, factor) = user_quality_law(env, i, a.power, &mut rng)?;
        total += expected_user_term(a.inferences, a.power, mean, std, factor, threshold, cfg)?;
    }
    Ok(total)
}

/// Four inferences per user and an even power split.
pub fn static_baseline(num_users: usize, p_total: f64, config: &QoEConfig) -> Result<ProvisionAction> {
    let powers = allocate_power(&vec![1.0; num_users], p_total)?;
    let inferences = 4.min(config.n_max);
    Ok(ProvisionAction { users: powers.into_iter().map(|power| Allocation { inferences, power }).collect() })
}

/// Uniform inference counts, a uniform point on the power simplex and a
/// uniform utilization of the budget in `(0, 1]`.
pub fn random_baseline<R: Rng + ?Sized>(
    num_users: usize,
    p_total: f64,
    config: &QoEConfig,
    rng: &mut R,
) -> Result<ProvisionAction> {
    let inferences: Vec<usize> = (0..num_users).map(|_| rng.random_range(1..=config.n_max)).collect();
    let weights: Vec<f64> = (0..num_users).map(|_| rng.sample::<f64, _>(Exp1).max(f64::MIN_POSITIVE)).collect();
    let utilization = 1.0 - rng.random::<f64>();
    let powers = allocate_power(&weights, utilization * p_total)?;
    Ok(ProvisionAction {
        users: inferences.into_iter().zip(powers).map(|(inferences, power)| Allocation { inferences, power }).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genmodel::{sample_power, ExpectedBest, FixedStrategy, StrategyCatalog};
    use crate::provision::{Scenario, UserSpec};
    use crate::rng;

    #[test]
    fn compositions_are_exhaustive_and_ordered() {
        let c = power_compositions(3, 6);
        assert_eq!(c.len(), 10);
        assert_eq!(c[0], vec![1, 1, 4]);
        assert_eq!(c[9], vec![4, 1, 1]);
        assert!(c.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(power_compositions(3, 21).len(), 190);
        assert_eq!(power_compositions(1, 21), vec![vec![21]]);
        assert!(power_compositions(3, 2).is_empty());
    }

    #[test]
    fn expected_term_matches_sampling() {
        let cfg = QoEConfig::default();
        let mut r = rng::stream(6, "oracle-mc");
        for &(n, mean, std, factor, th) in
            &[(1, 8.3, 0.6, 0.98, 8.0), (3, 8.5, 0.6, 0.95, 8.5), (5, 9.7, 0.6, 1.0, 8.2), (2, 7.0, 1.0, 0.7, 7.6)]
        {
            let exact = expected_user_term(n, 1.0, mean, std, factor, th, &cfg).unwrap();
            let trials = 200_000;
            let mut acc = 0.0;
            for _ in 0..trials {
                let best = (0..n)
                    .map(|_| {
                        let z: f64 = r.sample(rand_distr::StandardNormal);
                        (mean + std * z).clamp(0.0, 10.0) * factor
                    })
                    .fold(0.0, f64::max);
                acc += if best >= th {
                    latency_factor(n, &cfg) * (best / th).ln() - 0.1 * cost(n, 1.0, 0.25)
                } else {
                    -5.0
                };
            }
            let mc = acc / trials as f64;
            assert!((mc - exact).abs() < 0.03, "n={n}: {mc} vs {exact}");
        }
    }

    #[test]
    fn degenerate_terms() {
        let cfg = QoEConfig::default();
        assert_eq!(expected_user_term(0, 1.0, 8.0, 0.6, 1.0, 8.0, &cfg).unwrap(), -5.0);
        assert_eq!(expected_user_term(2, 1.0, 8.0, 0.6, 0.0, 8.0, &cfg).unwrap(), -5.0);
        assert_eq!(expected_user_term(2, 1.0, 8.0, 0.6, 0.5, 8.0, &cfg).unwrap(), -5.0);
        let tight = QoEConfig { l_max: 1.5, ..cfg };
        assert_eq!(expected_user_term(2, 1.0, 9.0, 0.6, 1.0, 8.0, &tight).unwrap(), -5.0);
    }

    fn env_with<'a>(
        scenario: &Scenario,
        catalog: &'a StrategyCatalog,
        sel: &'a FixedStrategy,
        cfg: QoEConfig,
    ) -> ServiceEnv<'a> {
        ServiceEnv::new(scenario, catalog, sel, cfg, 8, 5).unwrap()
    }

    fn one_user() -> Scenario {
        let mut s = Scenario::default();
        s.users.truncate(1);
        s
    }

    #[test]
    fn feasibility_forces_single_inference() {
        let catalog = StrategyCatalog::default();
        let sel = FixedStrategy(6);
        let cfg = QoEConfig { l_max: 1.5, ..QoEConfig::default() };
        let env = env_with(&one_user(), &catalog, &sel, cfg);
        let best = brute_force_oracle(&env, 21).unwrap();
        assert_eq!(best.action.users[0].inferences, 1);
        assert_eq!(best.action.users[0].power, 3.0);
    }

    #[test]
    fn symmetric_users_get_symmetric_actions() {
        let catalog = StrategyCatalog::default();
        let sel = FixedStrategy(6);
        let user =
            UserSpec { name: "u".into(), class: "garden".into(), complexity: 0.6, threshold: 8.2, distance: 40.0 };
        let s = Scenario { users: vec![user; 3], ..Scenario::default() };
        let env = env_with(&s, &catalog, &sel, QoEConfig::default());
        let best = brute_force_oracle(&env, 21).unwrap();
        assert_eq!(best.power_units, vec![7, 7, 7]);
        let n0 = best.action.users[0].inferences;
        assert!(best.action.users.iter().all(|a| a.inferences == n0));
    }

    #[test]
    fn oracle_is_exhaustive_on_a_small_grid() {
        let catalog = StrategyCatalog::default();
        let sel = FixedStrategy(6);
        let mut s = Scenario::default();
        s.users.truncate(2);
        let cfg = QoEConfig { n_max: 3, ..QoEConfig::default() };
        let env = env_with(&s, &catalog, &sel, cfg);
        let best = brute_force_oracle(&env, 6).unwrap();
        assert_eq!(best.evaluated, 9 * 5);
        for n1 in 1..=3 {
            for n2 in 1..=3 {
                for k in 1..6 {
                    let mut v = 0.0;
                    for (i, (n, units)) in [(n1, k), (n2, 6 - k)].into_iter().enumerate() {
                        let power = units as f64 * 0.5;
                        let ber = env.ber(i, power).unwrap();
                        let prompt = &env.prompts()[i];
                        let (mean, std) = catalog.quality_params(prompt, 6).unwrap();
                        let f = 1.0 - catalog.kappa * catalog.effective_complexity(prompt, 6) * ber;
                        v += expected_user_term(n, power, mean, std, f, s.users[i].threshold, &cfg).unwrap();
                    }
                    assert!(best.expected_reward >= v - 1e-12);
                }
            }
        }
    }

    #[test]
    fn demanding_user_gets_most_power() {
        let catalog = StrategyCatalog::default();
        let sel = ExpectedBest { catalog: &catalog };
        let env = ServiceEnv::new(&Scenario::default(), &catalog, &sel, QoEConfig::default(), 8, 5).unwrap();
        let best = brute_force_oracle(&env, 21).unwrap();
        let p: Vec<f64> = best.action.users.iter().map(|a| a.power).collect();
        assert!(p[2] > p[0] && p[2] > p[1], "{best:?}");
        let again = expected_reward(&env, &best.action).unwrap();
        assert!((again - best.expected_reward).abs() < 1e-9);
        let stat = static_baseline(3, env.p_total(), env.qoe_config()).unwrap();
        assert!(expected_reward(&env, &stat).unwrap() < best.expected_reward);
    }

    #[test]
    fn oracle_rejects_large_grids() {
        let catalog = StrategyCatalog::default();
        let sel = FixedStrategy(6);
        let env = env_with(&Scenario::default(), &catalog, &sel, QoEConfig::default());
        assert!(brute_force_oracle(&env, 22).is_err());
        let env = env_with(&Scenario::default(), &catalog, &sel, QoEConfig { n_max: 7, ..QoEConfig::default() });
        assert!(brute_force_oracle(&env, 21).is_err());
    }

    #[test]
    fn baselines_are_feasible() {
        let cfg = QoEConfig::default();
        let s = static_baseline(3, 3.0, &cfg).unwrap();
        assert_eq!(s.users, vec![Allocation { inferences: 4, power: 1.0 }; 3]);
        let mut r = rng::stream(2, "baseline");
        for _ in 0..10_000 {
            let q = r.random_range(1..5);
            let p_total = sample_power(&[0.5, 3.0, 10.0], &mut r);
            let a = random_baseline(q, p_total, &cfg, &mut r).unwrap();
            assert!(a.is_feasible(p_total));
            assert!(a.users.iter().all(|u| (1..=cfg.n_max).contains(&u.inferences) && u.power > 0.0));
        }
    }

    #[test]
    fn random_baseline_trails_oracle() {
        let catalog = StrategyCatalog::default();
        let sel = FixedStrategy(6);
        let env = env_with(&Scenario::default(), &catalog, &sel, QoEConfig::default());
        let best = brute_force_oracle(&env, 21).unwrap();
        for seed in 0..5 {
            let mut r = rng::stream(seed, rng::EVAL);
            let mut total = 0.0;
            for _ in 0..2000 {
                let a = random_baseline(3, env.p_total(), env.qoe_config(), &mut r).unwrap();
                total += env.step(&a, &mut r).unwrap().breakdown.reward;
            }
            assert!(total / 2000.0 < best.expected_reward);
        }
    }
}
