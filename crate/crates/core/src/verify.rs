//! Self-contained verification suites behind `clp-lab verify`.
//!
//! Every suite is a pure function of its seed and renders a plain-text
//! report with no timings, so repeated runs are byte-identical.

use std::fmt::{self, Write as _};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::conditioning::{dera_logits, logit_ensemble, logit_mix, ParameterBundle};
use crate::env::BanditEnv;
use crate::error::{invalid, Result};
use crate::evaluation::{dominates, sweep, BundleSource, LogitMixSource, SoupsSource, DOMINANCE_TOL};
use crate::math::{self, Matrix};
use crate::oracle;
use crate::policy::{Logits, ParameterVector, PartitionScheme, Policy, PolicyArchitecture};
use crate::rng::{self, LabRng};
use crate::theory::{self, EnvFamily};
use crate::trainer::{self, TrainConfig};
use crate::weightings::{f_mix, inv_f_mix, AlphaMode, KLWeight, RewardWeights, WeightingSampler};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Fmix,
    Gradients,
    LogitIdentity,
    Regret,
    BoundFuzz,
    Counterexample,
}

impl Suite {
    pub const ALL: [Suite; 6] =
        [Suite::Fmix, Suite::Gradients, Suite::LogitIdentity, Suite::Regret, Suite::BoundFuzz, Suite::Counterexample];

    pub fn as_str(&self) -> &'static str {
        match self {
            Suite::Fmix => "fmix",
            Suite::Gradients => "gradients",
            Suite::LogitIdentity => "logit_identity",
            Suite::Regret => "regret",
            Suite::BoundFuzz => "bound_fuzz",
            Suite::Counterexample => "counterexample",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|x| x.as_str() == s).ok_or_else(|| {
            invalid(format!(
                "unknown suite `{s}` (expected one of: {})",
                Self::ALL.map(|x| x.as_str()).join(", ")
            ))
        })
    }

    /// Process exit code when this suite fails.
    pub fn failure_exit_code(&self) -> i32 {
        match self {
            Suite::Fmix => 10,
            Suite::Gradients => 11,
            Suite::LogitIdentity => 12,
            Suite::Regret => 13,
            Suite::BoundFuzz => 14,
            Suite::Counterexample => 15,
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.to_string(), passed, detail: detail.into() }
    }

    /// `value <= limit`.
    fn at_most(name: &str, value: f64, limit: f64) -> Self {
        Self::new(name, value <= limit, format!("value={value:e} limit={limit:e}"))
    }

    fn at_least(name: &str, value: f64, limit: f64) -> Self {
        Self::new(name, value >= limit, format!("value={value:?} limit={limit:?}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub seed: u64,
    pub checks: Vec<Check>,
    /// Extra structured text appended verbatim (e.g. the fuzz report).
    pub appendix: String,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("clp-lab verify {}\nseed {}\n", self.suite, self.seed);
        for c in &self.checks {
            writeln!(out, "{} {} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail).unwrap();
        }
        writeln!(out, "result {}", if self.passed() { "PASS" } else { "FAIL" }).unwrap();
        out.push_str(&self.appendix);
        out
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<SuiteReport> {
    let (checks, appendix) = match suite {
        Suite::Fmix => (fmix_checks(seed)?, String::new()),
        Suite::Gradients => (gradient_checks(seed, 100)?, String::new()),
        Suite::LogitIdentity => {
            let mut c = logit_identity_checks(seed, 50)?;
            c.extend(dera_checks(seed)?);
            (c, String::new())
        }
        Suite::Regret => (regret_checks(seed, 1000)?, String::new()),
        Suite::BoundFuzz => {
            let r = theory::bound_fuzz(&EnvFamily::default(), 1000, seed)?;
            let checks = vec![
                Check::new("zero_violations", r.passed(), format!("violations={}", r.violations.len())),
                Check::at_most("exact_experts_suboptimality", r.exact_max_suboptimality, 1e-10),
            ];
            (checks, r.to_text())
        }
        Suite::Counterexample => {
            let o = counterexample(seed)?;
            (o.checks(), o.to_text())
        }
    };
    Ok(SuiteReport { suite, seed, checks, appendix })
}

/// Round-trip, endpoints, monotonicity and sampled median of the KL mixing map.
pub fn fmix_checks(seed: u64) -> Result<Vec<Check>> {
    let alpha_min = 0.01;
    let n = 10_000;
    let mut worst: f64 = 0.0;
    let mut increasing = true;
    let mut prev = f64::NEG_INFINITY;
    for k in 0..n {
        let u = k as f64 / (n - 1) as f64;
        let a = inv_f_mix(u, alpha_min)?;
        worst = worst.max((f_mix(a) - u).abs());
        increasing &= a.alpha() > prev;
        prev = a.alpha();
    }
    let one = f_mix(KLWeight::new(1.0, alpha_min)?);
    let zero = f_mix(KLWeight::new(alpha_min, alpha_min)?);
    let sampler = WeightingSampler::uniform(2, alpha_min, AlphaMode::InverseCdf, seed)?;
    let mut r = sampler.rng();
    let mut draws: Vec<f64> = (0..100_000).map(|_| sampler.sample_alpha(&mut r).alpha()).collect();
    draws.sort_by(f64::total_cmp);
    let median = 0.5 * (draws[49_999] + draws[50_000]);
    let expected = 2.0 * alpha_min / (alpha_min + 1.0);
    Ok(vec![
        Check::at_most("round_trip_max_error", worst, 1e-12),
        Check::new("endpoint_alpha_one", one == 1.0, format!("f_mix(1)={one:?}")),
        Check::new("endpoint_alpha_min", zero == 0.0, format!("f_mix(alpha_min)={zero:?}")),
        Check::new("inverse_increasing", increasing, "alpha strictly increasing in u"),
        Check::at_most("sampled_median_rel_error", (median - expected).abs() / expected, 0.01),
    ])
}

fn random_weights(rng: &mut LabRng, m: usize) -> RewardWeights {
    let raw: Vec<f64> = (0..m).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
    RewardWeights::normalized(raw).expect("positive weights")
}

fn jitter(v: &mut ParameterVector, rng: &mut LabRng, std: f64) {
    let normal = Normal::new(0.0, std).expect("valid std");
    v.values_mut().iter_mut().for_each(|x| *x += normal.sample(rng));
}

/// A random bundle, environment, weighting and batch for gradient checks.
pub struct GradientInstance {
    pub env: BanditEnv,
    pub bundle: ParameterBundle,
    pub alpha: KLWeight,
    pub w: RewardWeights,
    pub batch: Vec<trainer::Sample>,
}

pub fn gradient_instance(seed: u64, k: usize) -> Result<GradientInstance> {
    let mut r = rng::stream(seed, &format!("gradients.instance{k}"));
    let m = r.random_range(2..=3);
    let nc = r.random_range(1..=3);
    let na = r.random_range(2..=4);
    let env_seed: u64 = r.random();
    let kind = k % 5;
    let (arch, env, prompt) = match kind {
        0 => {
            let env = BanditEnv::random(nc, na, m, env_seed)?;
            (PolicyArchitecture::tabular(nc, na, PartitionScheme::Full)?, env, None)
        }
        _ => {
            let env = BanditEnv::random(nc, na, m, env_seed)?.with_dense_features(3, env_seed)?;
            let scheme = [PartitionScheme::Full, PartitionScheme::Mid, PartitionScheme::Logit, PartitionScheme::Full]
                [kind - 1];
            let prompt = (kind == 4).then_some(2);
            let extra = prompt.map_or(0, |p| p * m);
            (PolicyArchitecture::mlp2(3 + extra, 4, na, scheme)?, env, prompt)
        }
    };
    let (theta_ref, env) = arch.init_reference(&env, env_seed)?;
    let mut bundle = match prompt {
        Some(p) => ParameterBundle::prompt_only(arch, &theta_ref, m, p)?,
        None => ParameterBundle::from_reference(arch, &theta_ref, m, None)?,
    };
    jitter(bundle.unconditioned_mut(), &mut r, 0.5);
    for c in bundle.conditioned_mut() {
        jitter(c, &mut r, 0.5);
    }
    let alpha_min = 0.01;
    let alpha = KLWeight::new(r.random_range(alpha_min..1.0), alpha_min)?;
    let w = random_weights(&mut r, m);
    let normal = Normal::new(0.0, 1.0).expect("valid std");
    let batch = (0..4)
        .map(|_| trainer::Sample {
            x: r.random_range(0..nc),
            a: r.random_range(0..na),
            advantage: normal.sample(&mut r),
        })
        .collect();
    Ok(GradientInstance { env, bundle, alpha, w, batch })
}

/// `(1/B) sum_j A_j log pi(a_j | x_j)` under the conditioned policy.
pub fn surrogate(inst: &GradientInstance, bundle: &ParameterBundle) -> Result<f64> {
    let policy = bundle.condition(inst.alpha, &inst.w)?.policy(&inst.env)?;
    Ok(inst.batch.iter().map(|s| s.advantage * policy.log_prob(s.x, s.a)).sum::<f64>() / inst.batch.len() as f64)
}

/// Central finite differences of [`surrogate`] over every bundle coordinate,
/// in the order of `BundleGrad::flat`.
pub fn finite_difference(inst: &GradientInstance, h: f64) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    let mut b = inst.bundle.clone();
    for k in 0..b.unconditioned().len() {
        let orig = b.unconditioned().values()[k];
        b.unconditioned_mut().values_mut()[k] = orig + h;
        let up = surrogate(inst, &b)?;
        b.unconditioned_mut().values_mut()[k] = orig - h;
        let down = surrogate(inst, &b)?;
        b.unconditioned_mut().values_mut()[k] = orig;
        out.push((up - down) / (2.0 * h));
    }
    for i in 0..b.m() {
        for k in 0..b.conditioned()[i].len() {
            let orig = b.conditioned()[i].values()[k];
            b.conditioned_mut()[i].values_mut()[k] = orig + h;
            let up = surrogate(inst, &b)?;
            b.conditioned_mut()[i].values_mut()[k] = orig - h;
            let down = surrogate(inst, &b)?;
            b.conditioned_mut()[i].values_mut()[k] = orig;
            out.push((up - down) / (2.0 * h));
        }
    }
    Ok(out)
}

/// Relative error `|g - fd| / max(|g|, |fd|, 1e-8)` for one instance.
pub fn gradient_relative_error(inst: &GradientInstance) -> Result<f64> {
    let g = trainer::clp_gradient(&inst.bundle, &inst.env, inst.alpha, &inst.w, &inst.batch)?.flat();
    let fd = finite_difference(inst, 1e-5)?;
    let diff: Vec<f64> = g.iter().zip(&fd).map(|(a, b)| a - b).collect();
    Ok(math::l2_norm(&diff) / math::l2_norm(&g).max(math::l2_norm(&fd)).max(1e-8))
}

pub fn gradient_checks(seed: u64, instances: usize) -> Result<Vec<Check>> {
    let mut worst: f64 = 0.0;
    let mut ratio_ok = true;
    for k in 0..instances {
        let inst = gradient_instance(seed, k)?;
        worst = worst.max(gradient_relative_error(&inst)?);
        let g = trainer::clp_gradient(&inst.bundle, &inst.env, inst.alpha, &inst.w, &inst.batch)?;
        let scale = 1.0 - f_mix(inst.alpha);
        let mixed = inst.bundle.condition(inst.alpha, &inst.w)?;
        let features = mixed.features(inst.env.features());
        let gamma = trainer::policy_gradient(inst.bundle.arch(), mixed.theta(), &features, &inst.batch)?;
        let names: Vec<&str> = inst.bundle.conditioned_names().iter().map(String::as_str).collect();
        let gamma_s = gamma.restrict(&names)?;
        for (c, &wi) in g.conditioned.iter().zip(inst.w.as_slice()) {
            for (&v, &gs) in c.values().iter().zip(gamma_s.values()) {
                ratio_ok &= v == scale * wi * gs;
            }
        }
    }
    Ok(vec![
        Check::at_most("finite_difference_max_rel_error", worst, 1e-4),
        Check::new("decomposition_exact", ratio_ok, format!("instances={instances}")),
    ])
}

fn random_env(r: &mut LabRng, max_contexts: usize, max_actions: usize, m: usize) -> Result<BanditEnv> {
    let nc = r.random_range(1..=max_contexts);
    let na = r.random_range(2..=max_actions);
    BanditEnv::random(nc, na, m, r.random())
}

/// Worst TV between mixed expert optima and the optimum for the mixed reward.
pub fn logit_identity_error(seed: u64, k: usize) -> Result<f64> {
    let mut r = rng::stream(seed, &format!("logit_identity.env{k}"));
    let env = random_env(&mut r, 4, 6, 2)?;
    let alpha = r.random_range(0.05..=1.0);
    let z1 = oracle::optimal_policy(&env, alpha, &env.reward_component(0))?.logits;
    let z2 = oracle::optimal_policy(&env, alpha, &env.reward_component(1))?.logits;
    let mut worst: f64 = 0.0;
    for (j, w) in oracle::pair_grid(21).iter().enumerate() {
        let lambda = j as f64 / 20.0;
        let mixed = logit_mix(&z1, &z2, lambda)?.to_policy();
        let target = oracle::optimal_for_weights(&env, alpha, w)?.policy;
        worst = worst.max(math::max_total_variation(mixed.probs(), target.probs()));
    }
    Ok(worst)
}

pub fn logit_identity_checks(seed: u64, envs: usize) -> Result<Vec<Check>> {
    let mut worst: f64 = 0.0;
    for k in 0..envs {
        worst = worst.max(logit_identity_error(seed, k)?);
    }
    Ok(vec![Check::at_most("logit_mix_max_tv", worst, 1e-10)])
}

/// Worst TV between realigned logits of the exact `alpha_min` optimum and the
/// closed-form optimum, over 21 KL weights.
pub fn dera_error(seed: u64, k: usize) -> Result<f64> {
    let mut r = rng::stream(seed, &format!("dera.env{k}"));
    let env = random_env(&mut r, 4, 6, 2)?;
    let alpha_min = 0.05;
    let w = random_weights(&mut r, 2);
    let arch = PolicyArchitecture::tabular(env.num_contexts(), env.num_actions(), PartitionScheme::Full)?;
    let (theta_ref, env) = arch.init_reference(&env, 0)?;
    let opt_min = oracle::optimal_for_weights(&env, alpha_min, &w)?;
    let theta_min = ParameterVector::new(opt_min.logits.0.as_slice().to_vec(), arch.zeros().segments().to_vec())?;
    let mut worst: f64 = 0.0;
    for j in 0..21 {
        let alpha = alpha_min + (1.0 - alpha_min) * j as f64 / 20.0;
        let z = dera_logits(&arch, &theta_min, &theta_ref, env.features(), KLWeight::new(alpha.min(1.0), alpha_min)?)?;
        let target = oracle::optimal_for_weights(&env, alpha.min(1.0), &w)?.policy;
        worst = worst.max(math::max_total_variation(z.to_policy().probs(), target.probs()));
    }
    Ok(worst)
}

pub fn dera_checks(seed: u64) -> Result<Vec<Check>> {
    let mut worst: f64 = 0.0;
    for k in 0..10 {
        worst = worst.max(dera_error(seed, k)?);
    }
    Ok(vec![Check::at_most("realignment_max_tv", worst, 1e-10)])
}

/// Random full-support policy with log-probabilities spread over a few nats.
fn random_policy(r: &mut LabRng, nc: usize, na: usize) -> Policy {
    let normal = Normal::new(0.0, 2.0).expect("valid std");
    let z: Vec<f64> = (0..nc * na).map(|_| normal.sample(r)).collect();
    Logits(Matrix::from_vec(nc, na, z).expect("shape")).to_policy()
}

pub fn regret_discrepancy(seed: u64, k: usize) -> Result<f64> {
    let mut r = rng::stream(seed, &format!("regret.trial{k}"));
    let env = random_env(&mut r, 4, 6, 1)?;
    let alpha = r.random_range(0.01..=1.0);
    let policy = random_policy(&mut r, env.num_contexts(), env.num_actions());
    Ok(oracle::regret(&env, &policy, alpha, &env.reward_component(0))?.discrepancy())
}

pub fn regret_checks(seed: u64, trials: usize) -> Result<Vec<Check>> {
    let mut worst: f64 = 0.0;
    for k in 0..trials {
        worst = worst.max(regret_discrepancy(seed, k)?);
    }
    Ok(vec![Check::at_most("regret_identity_max_error", worst, 1e-10)])
}

/// Smoothing used for the near-deterministic experts of the counterexample.
pub const NEAR_DETERMINISTIC_DELTA: f64 = 0.01;

/// Settings for the counterexample pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterexampleSetup {
    pub alpha: f64,
    pub steps: usize,
    pub lr: f64,
    pub grid_points: usize,
}

impl Default for CounterexampleSetup {
    fn default() -> Self {
        Self { alpha: 0.01, steps: 20_000, lr: 0.1, grid_points: 21 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CounterexampleOutcome {
    pub setup: CounterexampleSetup,
    /// Mass on the compromise action at `w = (0.5, 0.5)`.
    pub clp_mass: f64,
    pub soups_mass: f64,
    pub logit_mix_mass: f64,
    /// Same, for soups of experts trained by REINFORCE on half the budget each.
    pub trained_soups_mass: f64,
    /// Smallest L-inf distance from a CLP front point to raw rewards `(0.75, 0.75)`.
    pub clp_distance: f64,
    pub soups_distance: f64,
    pub dominance_fraction: f64,
    pub dominance: Vec<bool>,
    pub clp_spread: f64,
    pub soups_spread: f64,
    pub oracle_spread: f64,
}

impl CounterexampleOutcome {
    pub fn checks(&self) -> Vec<Check> {
        vec![
            Check::at_least("clp_mass_on_compromise", self.clp_mass, 0.9),
            Check::at_most("soups_mass_on_compromise", self.soups_mass, 0.05),
            Check::at_most("logit_mix_mass_on_compromise", self.logit_mix_mass, 0.05),
            Check::at_most("clp_front_reaches_compromise", self.clp_distance, 0.05),
            Check::at_least("clp_dominates_soups_fraction", self.dominance_fraction, 0.9),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "alpha {:?}", self.setup.alpha).unwrap();
        writeln!(out, "steps {}", self.setup.steps).unwrap();
        writeln!(out, "lr {:?}", self.setup.lr).unwrap();
        writeln!(out, "trained_soups_mass_on_compromise {:?}", self.trained_soups_mass).unwrap();
        writeln!(out, "soups_front_distance_to_compromise {:?}", self.soups_distance).unwrap();
        let bits: String = self.dominance.iter().map(|&d| if d { '1' } else { '0' }).collect();
        writeln!(out, "dominance_per_point {bits}").unwrap();
        writeln!(out, "{} clp {:?}", crate::evaluation::SPREAD_LABEL, self.clp_spread).unwrap();
        writeln!(out, "{} soups {:?}", crate::evaluation::SPREAD_LABEL, self.soups_spread).unwrap();
        writeln!(out, "{} oracle {:?}", crate::evaluation::SPREAD_LABEL, self.oracle_spread).unwrap();
        out
    }
}

/// Logits of `(1 - delta) e_i + delta * uniform` on every context.
pub fn near_deterministic_expert(env: &BanditEnv, best_action: usize, delta: f64) -> Result<ParameterVector> {
    let arch = PolicyArchitecture::tabular(env.num_contexts(), env.num_actions(), PartitionScheme::Full)?;
    let mut p = Matrix::zeros(env.num_contexts(), env.num_actions());
    for x in 0..env.num_contexts() {
        p.set(x, best_action, 1.0);
    }
    let smoothed = theory::perturb_toward_uniform(&Policy::from_probs(p)?, delta)?;
    ParameterVector::new(smoothed.log_probs().as_slice().to_vec(), arch.zeros().segments().to_vec())
}

fn compromise_distance(front: &crate::evaluation::Front) -> f64 {
    front
        .points
        .iter()
        .map(|p| p.raw_rewards.iter().map(|r| (r - 0.75).abs()).fold(0.0, f64::max))
        .fold(f64::INFINITY, f64::min)
}

/// Multi-task training on the counterexample, then comparison against
/// zero-shot soups and logit mixing of near-deterministic experts.
pub fn counterexample_with(seed: u64, setup: &CounterexampleSetup) -> Result<CounterexampleOutcome> {
    let env = BanditEnv::counterexample();
    let arch = PolicyArchitecture::tabular(1, 3, PartitionScheme::Full)?;
    let (theta_ref, env) = arch.init_reference(&env, 0)?;
    let alpha = KLWeight::new(setup.alpha, setup.alpha)?;
    let sampler = WeightingSampler::new(
        vec![1.0, 1.0],
        setup.alpha,
        AlphaMode::Fixed(setup.alpha),
        rng::split_seed(seed, "counterexample.sampler"),
    )?;
    let cfg = TrainConfig::new(setup.steps, setup.lr, sampler, rng::split_seed(seed, "counterexample.train"));
    let bundle = ParameterBundle::from_reference(arch, &theta_ref, 2, None)?;
    let (bundle, _) = trainer::clp_train(&env, bundle, &cfg)?;

    let half = RewardWeights::pair(0.5)?;
    let compromise = 2;
    let clp_mass = bundle.condition(alpha, &half)?.policy(&env)?.probs().get(0, compromise);

    let experts = [
        near_deterministic_expert(&env, 0, NEAR_DETERMINISTIC_DELTA)?,
        near_deterministic_expert(&env, 1, NEAR_DETERMINISTIC_DELTA)?,
    ];
    let soups = SoupsSource { arch, experts: &experts, theta_ref: &theta_ref };
    let soups_mass = crate::conditioning::rewarded_soups(&arch, &experts, &theta_ref, &half)?
        .policy(&env)?
        .probs()
        .get(0, compromise);
    let expert_logits: Vec<Logits> =
        experts.iter().map(|e| arch.logits(e, env.features())).collect::<Result<_>>()?;
    let logit_mix_mass = logit_ensemble(&expert_logits, &half)?.to_policy().probs().get(0, compromise);

    let trained: Vec<ParameterVector> = trainer::train_experts(&env, &arch, &theta_ref, setup.alpha, setup.steps, &cfg)?
        .into_iter()
        .map(|(t, _)| t)
        .collect();
    let trained_soups_mass = crate::conditioning::rewarded_soups(&arch, &trained, &theta_ref, &half)?
        .policy(&env)?
        .probs()
        .get(0, compromise);

    let grid = oracle::pair_grid(setup.grid_points);
    let clp_front = sweep(&BundleSource { name: "clp".into(), bundle: &bundle }, &env, &[alpha], &grid)?;
    let soups_front = sweep(&soups, &env, &[alpha], &grid)?;
    let _ = sweep(&LogitMixSource { experts: expert_logits }, &env, &[alpha], &grid)?;
    let oracle_front = oracle::pareto_front_oracle(&env, setup.alpha, &grid)?;
    let dom = dominates(&clp_front, &soups_front, DOMINANCE_TOL)?;
    Ok(CounterexampleOutcome {
        setup: setup.clone(),
        clp_mass,
        soups_mass,
        logit_mix_mass,
        trained_soups_mass,
        clp_distance: compromise_distance(&clp_front),
        soups_distance: compromise_distance(&soups_front),
        dominance_fraction: dom.fraction,
        dominance: dom.per_point,
        clp_spread: crate::evaluation::spread(&clp_front)?,
        soups_spread: crate::evaluation::spread(&soups_front)?,
        oracle_spread: crate::evaluation::spread(&oracle_front)?,
    })
}

pub fn counterexample(seed: u64) -> Result<CounterexampleOutcome> {
    counterexample_with(seed, &CounterexampleSetup::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(Suite::parse(s.as_str()).unwrap(), s);
        }
        assert!(Suite::parse("everything").is_err());
        let codes: std::collections::BTreeSet<i32> = Suite::ALL.iter().map(|s| s.failure_exit_code()).collect();
        assert_eq!(codes.len(), Suite::ALL.len());
    }

    #[test]
    fn near_deterministic_mix_avoids_compromise() {
        let env = BanditEnv::counterexample();
        let e0 = near_deterministic_expert(&env, 0, 0.01).unwrap();
        let e1 = near_deterministic_expert(&env, 1, 0.01).unwrap();
        let z = logit_mix(&Logits(Matrix::from_vec(1, 3, e0.values().to_vec()).unwrap()),
            &Logits(Matrix::from_vec(1, 3, e1.values().to_vec()).unwrap()), 0.5).unwrap();
        // hand value: log-probs (ln 0.99333, ln 0.00333, ln 0.00333) mixed evenly
        let (hi, lo) = ((0.99f64 + 0.01 / 3.0).ln(), (0.01f64 / 3.0).ln());
        let mid = 0.5 * (hi + lo);
        let expected = lo.exp() / (2.0 * mid.exp() + lo.exp());
        let got = z.to_policy().probs().get(0, 2);
        assert!((got - expected).abs() < 1e-12);
        assert!(got < 0.05);
    }

    #[test]
    fn small_gradient_campaign() {
        let checks = gradient_checks(1, 10).unwrap();
        assert!(checks.iter().all(|c| c.passed), "{checks:?}");
    }

    #[test]
    fn report_text_has_no_timing_and_is_stable() {
        let a = run_suite(Suite::Regret, 4).unwrap().to_text();
        let b = run_suite(Suite::Regret, 4).unwrap().to_text();
        assert_eq!(a, b);
        assert!(a.contains("PASS regret_identity_max_error"));
    }
}
