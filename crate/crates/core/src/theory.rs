//! Concentrability coefficients, the logit-mixing sub-optimality bound, and a
//! fuzz campaign checking the bound against exact regrets.

use std::fmt::Write as _;

use rand::Rng;

use crate::conditioning::logit_mix;
use crate::env::BanditEnv;
use crate::error::{dim, invalid, Result};
use crate::math::Matrix;
use crate::oracle;
use crate::policy::{Logits, Policy};
use crate::rng;

/// `C_{p1,p2} = max_{x,y} p2(y|x) / p1(y|x)`; `+inf` when `p1` misses support of `p2`.
pub fn concentrability(p1: &Policy, p2: &Policy) -> Result<f64> {
    if !p1.probs().same_shape(p2.probs()) {
        return Err(dim("policies have different shapes"));
    }
    let mut c: f64 = 0.0;
    for (&a, &b) in p1.probs().as_slice().iter().zip(p2.probs().as_slice()) {
        if b == 0.0 {
            continue;
        }
        if a == 0.0 {
            return Ok(f64::INFINITY);
        }
        c = c.max(b / a);
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    /// Sub-optimality of each expert for its own reward.
    pub eps: f64,
    pub lambda: f64,
    /// `C_{pi1, pi2}`.
    pub c_12: f64,
    /// `C_{pi2, pi1}`.
    pub c_21: f64,
    /// Smallest action probability of either expert.
    pub p_min: f64,
    /// Largest absolute shift-normalized logit of either expert.
    pub eta: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        let ok = self.eps.is_finite()
            && self.eps >= 0.0
            && (0.0..=1.0).contains(&self.lambda)
            && self.c_12 >= 1.0 - 1e-12
            && self.c_21 >= 1.0 - 1e-12
            && self.p_min > 0.0
            && self.p_min <= 1.0
            && self.eta.is_finite()
            && self.eta >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("bound inputs out of range: {self:?}")))
        }
    }
}

/// `eps (exp(eta^2/8) ((1-l) C_21^l + l C_12^(1-l)) + 4 |A| / p_min)`.
pub fn mixing_bound(b: &BoundInputs, num_actions: usize) -> Result<f64> {
    b.validate()?;
    if num_actions == 0 {
        return Err(invalid("num_actions must be >= 1"));
    }
    if b.c_12.is_infinite() || b.c_21.is_infinite() {
        return Ok(f64::INFINITY);
    }
    let (c12, c21, l) = (b.c_12.max(1.0), b.c_21.max(1.0), b.lambda);
    let overlap = (1.0 - l) * c21.powf(l) + l * c12.powf(1.0 - l);
    Ok(b.eps * ((b.eta * b.eta / 8.0).exp() * overlap + 4.0 * num_actions as f64 / b.p_min))
}

/// Max absolute logit after pinning the last action's logit to zero in every row.
pub fn shift_normalized_eta(z: &Logits) -> f64 {
    let m = &z.0;
    let last = m.cols() - 1;
    (0..m.rows())
        .flat_map(|x| m.row(x).iter().map(move |v| (v - m.get(x, last)).abs()))
        .fold(0.0, f64::max)
}

/// Bound inputs for two experts at mixing weight `lambda`.
pub fn bound_inputs(p1: &Policy, p2: &Policy, eps: f64, lambda: f64) -> Result<BoundInputs> {
    let p_min = p1.probs().as_slice().iter().chain(p2.probs().as_slice()).copied().fold(f64::INFINITY, f64::min);
    let eta = shift_normalized_eta(&Logits(p1.log_probs().clone()))
        .max(shift_normalized_eta(&Logits(p2.log_probs().clone())));
    Ok(BoundInputs {
        eps,
        lambda,
        c_12: concentrability(p1, p2)?,
        c_21: concentrability(p2, p1)?,
        p_min,
        eta,
    })
}

/// `(1 - delta) p + delta * uniform`, row-wise.
pub fn perturb_toward_uniform(p: &Policy, delta: f64) -> Result<Policy> {
    let u = 1.0 / p.num_actions() as f64;
    Policy::from_probs(p.probs().map(|v| (1.0 - delta) * v + delta * u))
}

/// Lower edges of the `measured / bound` histogram buckets.
pub const RATIO_BUCKETS: [f64; 6] = [0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0];

#[derive(Debug, Clone, PartialEq)]
pub struct FuzzTrial {
    pub trial: usize,
    pub env_seed: u64,
    pub num_contexts: usize,
    pub num_actions: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub deltas: [f64; 2],
    pub inputs: BoundInputs,
    pub measured: f64,
    pub bound: f64,
}

impl FuzzTrial {
    pub fn violates(&self) -> bool {
        self.measured > self.bound + FUZZ_SLACK
    }

    fn describe(&self) -> String {
        format!(
            "trial={} env_seed={} contexts={} actions={} alpha={:?} lambda={:?} delta1={:?} delta2={:?} eps={:?} \
             c12={:?} c21={:?} p_min={:?} eta={:?} measured={:?} bound={:?}",
            self.trial,
            self.env_seed,
            self.num_contexts,
            self.num_actions,
            self.alpha,
            self.lambda,
            self.deltas[0],
            self.deltas[1],
            self.inputs.eps,
            self.inputs.c_12,
            self.inputs.c_21,
            self.inputs.p_min,
            self.inputs.eta,
            self.measured,
            self.bound
        )
    }
}

/// Absolute slack for floating-point noise when comparing measured regret to the bound.
pub const FUZZ_SLACK: f64 = 1e-12;

/// Shape of the random environments a fuzz campaign draws from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvFamily {
    pub max_contexts: usize,
    pub min_actions: usize,
    pub max_actions: usize,
    pub alpha_range: (f64, f64),
    pub max_delta: f64,
    /// Probability that an expert is left exactly optimal.
    pub exact_prob: f64,
}

impl Default for EnvFamily {
    fn default() -> Self {
        Self { max_contexts: 3, min_actions: 2, max_actions: 4, alpha_range: (0.05, 1.0), max_delta: 0.5, exact_prob: 0.1 }
    }
}

/// One fuzz trial, fully determined by `(seed, trial)`.
pub fn fuzz_trial(family: &EnvFamily, seed: u64, trial: usize) -> Result<FuzzTrial> {
    let mut rng = rng::stream(seed, &format!("bound_fuzz.trial{trial}"));
    let nc = rng.random_range(1..=family.max_contexts);
    let na = rng.random_range(family.min_actions..=family.max_actions);
    let env_seed: u64 = rng.random();
    let env = BanditEnv::random(nc, na, 2, env_seed)?;
    let alpha = rng.random_range(family.alpha_range.0..=family.alpha_range.1);
    let lambda: f64 = rng.random();
    let mut deltas = [0.0; 2];
    for d in deltas.iter_mut() {
        if !rng.random_bool(family.exact_prob) {
            *d = rng.random_range(0.0..=family.max_delta);
        }
    }

    let r1 = env.reward_component(0);
    let r2 = env.reward_component(1);
    let o1 = oracle::optimal_policy(&env, alpha, &r1)?;
    let o2 = oracle::optimal_policy(&env, alpha, &r2)?;
    let e1 = perturb_toward_uniform(&o1.policy, deltas[0])?;
    let e2 = perturb_toward_uniform(&o2.policy, deltas[1])?;
    let eps = oracle::regret(&env, &e1, alpha, &r1)?
        .value_gap
        .max(oracle::regret(&env, &e2, alpha, &r2)?.value_gap)
        .max(0.0);

    let mixed = logit_mix(&Logits(e1.log_probs().clone()), &Logits(e2.log_probs().clone()), lambda)?.to_policy();
    let r_lambda = combine(&r1, &r2, lambda);
    let measured = oracle::regret(&env, &mixed, alpha, &r_lambda)?.value_gap;
    let inputs = bound_inputs(&e1, &e2, eps, lambda)?;
    let bound = mixing_bound(&inputs, na)?;
    Ok(FuzzTrial { trial, env_seed, num_contexts: nc, num_actions: na, alpha, lambda, deltas, inputs, measured, bound })
}

fn combine(r1: &Matrix, r2: &Matrix, lambda: f64) -> Matrix {
    let data = r1.as_slice().iter().zip(r2.as_slice()).map(|(a, b)| (1.0 - lambda) * a + lambda * b).collect();
    Matrix::from_vec(r1.rows(), r1.cols(), data).expect("same shape")
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuzzReport {
    pub seed: u64,
    pub trials: usize,
    pub violations: Vec<FuzzTrial>,
    pub max_ratio: f64,
    pub histogram: [usize; RATIO_BUCKETS.len()],
    pub exact_trials: usize,
    /// Largest measured sub-optimality among trials with both experts exact.
    pub exact_max_suboptimality: f64,
}

impl FuzzReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("clp-lab bound-fuzz v1\n");
        writeln!(out, "seed {}", self.seed).unwrap();
        writeln!(out, "trials {}", self.trials).unwrap();
        writeln!(out, "violations {}", self.violations.len()).unwrap();
        writeln!(out, "max_ratio {:?}", self.max_ratio).unwrap();
        writeln!(out, "exact_expert_trials {}", self.exact_trials).unwrap();
        writeln!(out, "exact_expert_max_suboptimality {:?}", self.exact_max_suboptimality).unwrap();
        for (i, lo) in RATIO_BUCKETS.iter().enumerate() {
            let hi = RATIO_BUCKETS.get(i + 1).map_or("inf".to_string(), |h| format!("{h:e}"));
            writeln!(out, "histogram [{lo:e},{hi}) {}", self.histogram[i]).unwrap();
        }
        for v in &self.violations {
            writeln!(out, "violation {}", v.describe()).unwrap();
        }
        out
    }
}

/// Runs `trials` independent trials; aggregates are order-independent.
pub fn bound_fuzz(family: &EnvFamily, trials: usize, seed: u64) -> Result<FuzzReport> {
    let mut report = FuzzReport {
        seed,
        trials,
        violations: Vec::new(),
        max_ratio: 0.0,
        histogram: [0; RATIO_BUCKETS.len()],
        exact_trials: 0,
        exact_max_suboptimality: 0.0,
    };
    for t in 0..trials {
        let trial = fuzz_trial(family, seed, t)?;
        if trial.deltas == [0.0, 0.0] {
            report.exact_trials += 1;
            report.exact_max_suboptimality = report.exact_max_suboptimality.max(trial.measured);
        }
        if trial.bound > 0.0 {
            let ratio = trial.measured.max(0.0) / trial.bound;
            report.max_ratio = report.max_ratio.max(ratio);
            let bucket = RATIO_BUCKETS.iter().rposition(|&lo| ratio >= lo).unwrap_or(0);
            report.histogram[bucket] += 1;
        } else {
            report.histogram[0] += 1;
        }
        if trial.violates() {
            report.violations.push(trial);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pol(rows: &[Vec<f64>]) -> Policy {
        Policy::from_probs(Matrix::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn concentrability_examples() {
        let a = pol(&[vec![0.9, 0.1]]);
        let b = pol(&[vec![0.5, 0.5]]);
        assert_eq!(concentrability(&a, &a).unwrap(), 1.0);
        assert!((concentrability(&a, &b).unwrap() - 5.0).abs() < 1e-12);
        let z = pol(&[vec![1.0, 0.0]]);
        assert_eq!(concentrability(&z, &b).unwrap(), f64::INFINITY);
        assert_eq!(concentrability(&b, &z).unwrap(), 2.0);
    }

    #[test]
    fn concentrability_grows_as_experts_sharpen() {
        let env = BanditEnv::counterexample();
        let mut prev = 0.0;
        for alpha in [0.5, 0.2, 0.1, 0.05, 0.02, 0.01] {
            let p1 = oracle::optimal_policy(&env, alpha, &env.reward_component(0)).unwrap().policy;
            let p2 = oracle::optimal_policy(&env, alpha, &env.reward_component(1)).unwrap().policy;
            let c = concentrability(&p1, &p2).unwrap();
            assert!(c > prev, "{alpha}: {c} <= {prev}");
            prev = c;
        }
        assert!(prev > 1e6);
    }

    #[test]
    fn bound_examples() {
        let b = BoundInputs { eps: 0.01, lambda: 0.5, c_12: 2.0, c_21: 2.0, p_min: 0.1, eta: 1.0 };
        let expected = 0.01 * (0.125f64.exp() * 2.0f64.sqrt() + 120.0);
        assert!((mixing_bound(&b, 3).unwrap() - expected).abs() < 1e-12);
        assert!((mixing_bound(&b, 3).unwrap() - 1.2160).abs() < 1e-4);
        assert_eq!(mixing_bound(&BoundInputs { eps: 0.0, ..b }, 3).unwrap(), 0.0);
        let l0 = mixing_bound(&BoundInputs { lambda: 0.0, c_12: 7.0, c_21: 3.0, ..b }, 3).unwrap();
        assert!((l0 - 0.01 * (0.125f64.exp() + 120.0)).abs() < 1e-12);
        assert_eq!(mixing_bound(&BoundInputs { c_12: f64::INFINITY, ..b }, 3).unwrap(), f64::INFINITY);
        assert!(mixing_bound(&BoundInputs { p_min: 0.0, ..b }, 3).is_err());
    }

    #[test]
    fn eta_pins_last_action() {
        let z = Logits(Matrix::from_rows(&[vec![3.0, 1.0, 2.0]]).unwrap());
        assert_eq!(shift_normalized_eta(&z), 1.0);
    }

    #[test]
    fn exact_experts_mix_exactly() {
        let family = EnvFamily { exact_prob: 1.0, ..EnvFamily::default() };
        let report = bound_fuzz(&family, 50, 3).unwrap();
        assert_eq!(report.exact_trials, 50);
        assert!(report.exact_max_suboptimality <= 1e-10);
        assert!(report.passed());
    }

    #[test]
    fn fuzz_report_is_deterministic() {
        let f = EnvFamily::default();
        assert_eq!(bound_fuzz(&f, 40, 9).unwrap().to_text(), bound_fuzz(&f, 40, 9).unwrap().to_text());
    }

    proptest! {
        #[test]
        fn bound_monotonicity(
            eps in 0.0f64..1.0, de in 0.0f64..1.0, l in 0.0f64..=1.0,
            c1 in 1.0f64..10.0, c2 in 1.0f64..10.0, dc in 0.0f64..5.0,
            p in 0.01f64..1.0, eta in 0.0f64..3.0, na in 1usize..6,
        ) {
            let b = BoundInputs { eps, lambda: l, c_12: c1, c_21: c2, p_min: p, eta };
            let v = mixing_bound(&b, na).unwrap();
            let at = |b2: BoundInputs| mixing_bound(&b2, na).unwrap();
            let bigger = [
                at(BoundInputs { eps: eps + de, ..b }),
                at(BoundInputs { eta: eta + de, ..b }),
                at(BoundInputs { c_12: c1 + dc, ..b }),
                at(BoundInputs { c_21: c2 + dc, ..b }),
            ];
            let smaller = at(BoundInputs { p_min: (p + de).min(1.0), ..b });
            prop_assert!(bigger.iter().all(|&x| x >= v));
            prop_assert!(smaller <= v);
            prop_assert!(mixing_bound(&b, na + 1).unwrap() >= v);
        }

        #[test]
        fn row_max_ratio_at_least_one(a in 0.01f64..0.99, b in 0.01f64..0.99) {
            let p = pol(&[vec![a, 1.0 - a]]);
            let q = pol(&[vec![b, 1.0 - b]]);
            prop_assert!(concentrability(&p, &q).unwrap() >= 1.0);
        }
    }
}
