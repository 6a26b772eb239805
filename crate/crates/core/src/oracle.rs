//! Closed-form ground truth for finite environments.
//!
//! For KL weight `alpha` and scalar reward `R` the maximizer of
//! `E[(1 - alpha) R - alpha KL(pi || pi_ref)]` is the Gibbs policy
//! `pi*(a|x) = pi_ref(a|x) exp((1 - alpha) R(x, a) / alpha) / Z(x)`, and every
//! policy satisfies `V* - V(pi) = alpha E_x KL(pi(x) || pi*(x))`.

use crate::env::BanditEnv;
use crate::error::{dim, invalid, Result};
use crate::evaluation::{pareto_point, Front};
use crate::math::{self, Matrix};
use crate::policy::{Logits, Policy};
use crate::weightings::RewardWeights;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalPolicy {
    pub policy: Policy,
    /// `log pi_ref + (1 - alpha) R / alpha`, unnormalized.
    pub logits: Logits,
    /// `log Z(x)` per context.
    pub log_partition: Vec<f64>,
    pub alpha: f64,
}

fn check_shape(env: &BanditEnv, m: &Matrix, what: &str) -> Result<()> {
    if m.rows() != env.num_contexts() || m.cols() != env.num_actions() {
        return Err(dim(format!(
            "{what} is {}x{}, environment is {}x{}",
            m.rows(),
            m.cols(),
            env.num_contexts(),
            env.num_actions()
        )));
    }
    Ok(())
}

/// Gibbs-optimal policy for scalar reward table `reward` at KL weight `alpha`.
pub fn optimal_policy(env: &BanditEnv, alpha: f64, reward: &Matrix) -> Result<OptimalPolicy> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(invalid(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    check_shape(env, reward, "reward table")?;
    let temp = (1.0 - alpha) / alpha;
    let lref = env.reference().log_probs();
    let mut z = Matrix::zeros(env.num_contexts(), env.num_actions());
    let mut log_partition = Vec::with_capacity(env.num_contexts());
    for x in 0..env.num_contexts() {
        for a in 0..env.num_actions() {
            z.set(x, a, lref.get(x, a) + temp * reward.get(x, a));
        }
        log_partition.push(math::logsumexp(z.row(x)));
    }
    let logits = Logits(z);
    Ok(OptimalPolicy { policy: logits.to_policy(), logits, log_partition, alpha })
}

/// Optimal policy for the scalarization `w^T R`.
pub fn optimal_for_weights(env: &BanditEnv, alpha: f64, w: &RewardWeights) -> Result<OptimalPolicy> {
    optimal_policy(env, alpha, &env.scalarize(w)?)
}

/// Exact `V_{alpha,R}(pi)` by finite summation.
pub fn value(env: &BanditEnv, policy: &Policy, alpha: f64, reward: &Matrix) -> Result<f64> {
    check_shape(env, reward, "reward table")?;
    check_shape(env, policy.probs(), "policy")?;
    let lref = env.reference().log_probs();
    let mut total = 0.0;
    for (x, &mu) in env.context_dist().iter().enumerate() {
        let (p, lp) = (policy.probs().row(x), policy.log_probs().row(x));
        let mut vx = 0.0;
        for a in 0..env.num_actions() {
            if p[a] > 0.0 {
                vx += p[a] * ((1.0 - alpha) * reward.get(x, a) - alpha * (lp[a] - lref.get(x, a)));
            }
        }
        total += mu * vx;
    }
    Ok(total)
}

/// `V* = alpha E_x log Z(x)`.
pub fn optimal_value(env: &BanditEnv, opt: &OptimalPolicy) -> f64 {
    opt.alpha * env.context_dist().iter().zip(&opt.log_partition).map(|(mu, lz)| mu * lz).sum::<f64>()
}

/// Both sides of the regret identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regret {
    /// `V* - V(pi)`, with `V*` evaluated as the value of the optimal policy.
    pub value_gap: f64,
    /// `alpha E_x KL(pi(x) || pi*(x))`.
    pub scaled_kl: f64,
}

impl Regret {
    pub fn discrepancy(&self) -> f64 {
        (self.value_gap - self.scaled_kl).abs()
    }
}

pub fn regret(env: &BanditEnv, policy: &Policy, alpha: f64, reward: &Matrix) -> Result<Regret> {
    let opt = optimal_policy(env, alpha, reward)?;
    let v_star = value(env, &opt.policy, alpha, reward)?;
    let v = value(env, policy, alpha, reward)?;
    let kl: f64 = env
        .context_dist()
        .iter()
        .enumerate()
        .map(|(x, mu)| mu * math::kl_divergence(policy.probs().row(x), opt.policy.probs().row(x)))
        .sum();
    Ok(Regret { value_gap: v_star - v, scaled_kl: alpha * kl })
}

/// Evenly spaced two-reward weightings `(1 - t, t)`, `t = 0, 1/(n-1), ..., 1`.
pub fn pair_grid(n: usize) -> Vec<RewardWeights> {
    assert!(n >= 2, "grid needs at least two points");
    (0..n)
        .map(|k| {
            let t = k as f64 / (n - 1) as f64;
            RewardWeights::new(vec![1.0 - t, t]).expect("on simplex")
        })
        .collect()
}

/// 13 three-reward weightings: vertices, edge midpoints, centroid, and two
/// rings of interior points.
pub fn triple_grid() -> Vec<RewardWeights> {
    let mut pts = Vec::with_capacity(13);
    let perms = |a: f64, b: f64, c: f64| [[a, b, c], [b, a, c], [b, c, a]];
    pts.extend(perms(1.0, 0.0, 0.0));
    pts.extend(perms(0.0, 0.5, 0.5));
    pts.push([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
    pts.extend(perms(0.6, 0.2, 0.2));
    pts.extend(perms(0.2, 0.4, 0.4));
    pts.into_iter().map(|p| RewardWeights::normalized(p.to_vec()).expect("on simplex")).collect()
}

/// Default weighting grid for `m` rewards.
pub fn default_grid(m: usize) -> Result<Vec<RewardWeights>> {
    match m {
        1 => Ok(vec![RewardWeights::basis(1, 0)]),
        2 => Ok(pair_grid(21)),
        3 => Ok(triple_grid()),
        _ => Err(invalid(format!("no default grid for m = {m}; pass one explicitly"))),
    }
}

/// Ground-truth front: the optimal policy at every grid weighting.
pub fn pareto_front_oracle(env: &BanditEnv, alpha: f64, grid: &[RewardWeights]) -> Result<Front> {
    let mut points = Vec::with_capacity(grid.len());
    for w in grid {
        let opt = optimal_for_weights(env, alpha, w)?;
        points.push(pareto_point(env, &opt.policy, alpha, w)?);
    }
    Ok(Front::new("oracle", points))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn random_policy(env: &BanditEnv, seed: u64, scale: f64) -> Policy {
        let mut r = rng::from_seed(seed);
        let data = (0..env.num_contexts() * env.num_actions()).map(|_| scale * (r.random::<f64>() - 0.5)).collect();
        Logits(Matrix::from_vec(env.num_contexts(), env.num_actions(), data).unwrap()).to_policy()
    }

    #[test]
    fn alpha_one_gives_reference() {
        let env = BanditEnv::random(3, 4, 1, 2).unwrap();
        let opt = optimal_policy(&env, 1.0, &env.reward_component(0)).unwrap();
        assert!(math::max_total_variation(opt.policy.probs(), env.reference().probs()) < 1e-15);
        assert!(optimal_policy(&env, 0.0, &env.reward_component(0)).is_err());
        assert!(optimal_policy(&env, -0.5, &env.reward_component(0)).is_err());
    }

    #[test]
    fn two_action_hand_value() {
        let env = BanditEnv::new(
            1,
            2,
            1,
            vec![1.0, 0.0],
            vec![1.0],
            crate::env::ReferencePolicy::uniform(1, 2),
            0,
        )
        .unwrap();
        let opt = optimal_policy(&env, 0.5, &env.reward_component(0)).unwrap();
        let e = std::f64::consts::E;
        assert!((opt.policy.probs().get(0, 0) - e / (e + 1.0)).abs() < 1e-15);
        assert!((opt.policy.probs().get(0, 0) - 0.731_06).abs() < 1e-5);
        assert!((opt.policy.probs().get(0, 1) - 0.268_94).abs() < 1e-5);
    }

    #[test]
    fn counterexample_optimum_picks_third_action() {
        let env = BanditEnv::counterexample();
        let opt = optimal_for_weights(&env, 0.01, &RewardWeights::uniform(2)).unwrap();
        assert!(opt.policy.probs().get(0, 2) > 0.999);
    }

    #[test]
    fn values_at_reference_and_optimum() {
        let env = BanditEnv::random(4, 3, 1, 5).unwrap();
        let r = env.reward_component(0);
        let alpha = 0.3;
        let pref = Policy::from_probs(env.reference().probs().clone()).unwrap();
        let mut expect = 0.0;
        for x in 0..4 {
            for a in 0..3 {
                expect += 0.25 * env.reference().probs().get(x, a) * r.get(x, a);
            }
        }
        assert!((value(&env, &pref, alpha, &r).unwrap() - (1.0 - alpha) * expect).abs() < 1e-14);
        let opt = optimal_policy(&env, alpha, &r).unwrap();
        assert!((value(&env, &opt.policy, alpha, &r).unwrap() - optimal_value(&env, &opt)).abs() < 1e-12);
    }

    #[test]
    fn optimum_beats_random_policies() {
        let env = BanditEnv::random(3, 4, 1, 6).unwrap();
        let r = env.reward_component(0);
        let opt = optimal_policy(&env, 0.2, &r).unwrap();
        let v_star = value(&env, &opt.policy, 0.2, &r).unwrap();
        for s in 0..1000 {
            let p = random_policy(&env, s, 6.0);
            assert!(value(&env, &p, 0.2, &r).unwrap() <= v_star + 1e-12);
        }
    }

    #[test]
    fn regret_identity_and_gibbs_form() {
        for s in 0..200 {
            let mut r = rng::from_seed(s);
            let env = BanditEnv::random(1 + s as usize % 4, 2 + s as usize % 3, 1, s).unwrap();
            let alpha = 0.05 + 0.95 * r.random::<f64>();
            let reward = env.reward_component(0);
            let p = random_policy(&env, s + 1000, 5.0);
            let reg = regret(&env, &p, alpha, &reward).unwrap();
            assert!(reg.discrepancy() <= 1e-10, "seed {s}: {reg:?}");
            assert!(reg.scaled_kl >= 0.0);
            let opt = optimal_policy(&env, alpha, &reward).unwrap();
            assert!(regret(&env, &opt.policy, alpha, &reward).unwrap().value_gap.abs() < 1e-12);
            for x in 0..env.num_contexts() {
                let c: Vec<f64> = (0..env.num_actions())
                    .map(|a| {
                        opt.policy.log_prob(x, a)
                            - env.reference().log_probs().get(x, a)
                            - (1.0 - alpha) * reward.get(x, a) / alpha
                    })
                    .collect();
                assert!(c.iter().all(|v| (v - c[0]).abs() < 1e-10));
            }
        }
    }

    #[test]
    fn optimal_policy_is_continuous_in_alpha() {
        let env = BanditEnv::random(3, 4, 1, 8).unwrap();
        let r = env.reward_component(0);
        let mut prev = optimal_policy(&env, 0.05, &r).unwrap();
        for k in 1..=950 {
            let alpha = 0.05 + k as f64 * 1e-3;
            let cur = optimal_policy(&env, alpha, &r).unwrap();
            assert!(math::max_total_variation(prev.policy.probs(), cur.policy.probs()) < 0.05);
            prev = cur;
        }
    }

    #[test]
    fn grids() {
        assert_eq!(pair_grid(21).len(), 21);
        let g3 = triple_grid();
        assert_eq!(g3.len(), 13);
        for w in &g3 {
            assert!((w.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(default_grid(4).is_err());
    }

    #[test]
    fn oracle_front_properties() {
        let env = BanditEnv::counterexample();
        let front = pareto_front_oracle(&env, 0.01, &pair_grid(21)).unwrap();
        let mid = &front.points[10];
        assert!((mid.raw_rewards[0] - 0.75).abs() < 0.01 && (mid.raw_rewards[1] - 0.75).abs() < 0.01);
        // points are sorted by w, so index 20 is w = (1, 0)
        // endpoint optimum beats any other policy on reward-1 value
        let r1 = env.reward_component(0);
        for s in 0..100 {
            let p = random_policy(&env, s, 20.0);
            assert!(front.points[20].regularized_values[0] >= value(&env, &p, 0.01, &r1).unwrap() - 1e-12);
        }
        let mut rev = pair_grid(21);
        rev.reverse();
        let back = pareto_front_oracle(&env, 0.01, &rev).unwrap();
        assert_eq!(back.points, front.points);
    }
}
