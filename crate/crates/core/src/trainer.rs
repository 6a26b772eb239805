//! REINFORCE training of CLP bundles and single-objective experts, plus a
//! deterministic exact-gradient trainer for finite environments.
//!
//! Per step: one weighting `(alpha, w)` is drawn for the whole batch, the
//! bundle is conditioned once, contexts and actions are sampled, and the
//! batch-normalized advantages multiply `grad log pi` at the mixed
//! parameters. The gradient reaches the bundle through the mixing rule:
//! shared segments receive `gamma[S^C]`, copy `i` receives
//! `(1 - f_mix(alpha)) w[i] gamma[S]`.

use std::fmt::Write as _;

use rand::Rng;

use crate::conditioning::{BundleGrad, MixedPolicy, ParameterBundle};
use crate::env::BanditEnv;
use crate::error::{dim, invalid, Error, Result};
use crate::math::{self, Matrix};
use crate::policy::{ParameterVector, Policy, PolicyArchitecture};
use crate::rng;
use crate::weightings::{f_mix, AlphaMode, KLWeight, RewardWeights, WeightingSampler};

/// Update rule applied to the bundle gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    /// Plain gradient ascent.
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
struct Optimizer {
    kind: OptimizerKind,
    first: Vec<f64>,
    second: Vec<f64>,
    t: i32,
}

impl Optimizer {
    fn new(kind: OptimizerKind, n: usize) -> Self {
        Self { kind, first: vec![0.0; n], second: vec![0.0; n], t: 0 }
    }

    /// Ascent direction for gradient `g` (to be scaled by the learning rate).
    fn direction(&mut self, g: &[f64]) -> Vec<f64> {
        match self.kind {
            OptimizerKind::Sgd => g.to_vec(),
            OptimizerKind::Adam { beta1, beta2, eps } => {
                self.t += 1;
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                g.iter()
                    .enumerate()
                    .map(|(k, &gk)| {
                        self.first[k] = beta1 * self.first[k] + (1.0 - beta1) * gk;
                        self.second[k] = beta2 * self.second[k] + (1.0 - beta2) * gk * gk;
                        if self.second[k] == 0.0 {
                            0.0
                        } else {
                            (self.first[k] / c1) / ((self.second[k] / c2).sqrt() + eps)
                        }
                    })
                    .collect()
            }
        }
    }
}

fn grad_from_flat(template: &BundleGrad, flat: &[f64]) -> BundleGrad {
    let mut g = template.clone();
    let n = g.unconditioned.len();
    g.unconditioned.values_mut().copy_from_slice(&flat[..n]);
    let mut off = n;
    for c in g.conditioned.iter_mut() {
        let len = c.len();
        c.values_mut().copy_from_slice(&flat[off..off + len]);
        off += len;
    }
    g
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub lr_policy: f64,
    pub lr_value: f64,
    pub sampler: WeightingSampler,
    pub advantage_norm_eps: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl TrainConfig {
    /// Batch 32, SGD, advantage epsilon `1e-8`.
    pub fn new(steps: usize, lr_policy: f64, sampler: WeightingSampler, seed: u64) -> Self {
        Self {
            batch_size: 32,
            steps,
            lr_policy,
            lr_value: 0.1,
            sampler,
            advantage_norm_eps: 1e-8,
            seed,
            optimizer: OptimizerKind::Sgd,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(invalid("batch_size must be >= 2"));
        }
        if !(self.lr_policy > 0.0 && self.lr_value > 0.0) {
            return Err(invalid("learning rates must be > 0"));
        }
        if !(self.advantage_norm_eps >= 0.0) {
            return Err(invalid("advantage_norm_eps must be >= 0"));
        }
        Ok(())
    }
}

/// Per-context, per-reward predictions of `E[R_i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueBaseline {
    pub v: Matrix,
}

impl ValueBaseline {
    pub fn zeros(num_contexts: usize, m: usize) -> Self {
        Self { v: Matrix::zeros(num_contexts, m) }
    }

    /// `sum_i w[i] V_i(x)`.
    pub fn scalarized(&self, x: usize, w: &[f64]) -> f64 {
        math::dot(self.v.row(x), w)
    }

    /// One gradient step on the batch mean of `0.5 (V_i(x) - R_i)^2`.
    fn update(&mut self, env: &BanditEnv, batch: &[(usize, usize)], lr: f64) {
        let mut grad = Matrix::zeros(self.v.rows(), self.v.cols());
        let n = batch.len() as f64;
        for &(x, a) in batch {
            for (i, r) in env.reward_vec(x, a).iter().enumerate() {
                grad.set(x, i, grad.get(x, i) + (self.v.get(x, i) - r) / n);
            }
        }
        for x in 0..self.v.rows() {
            for i in 0..self.v.cols() {
                self.v.set(x, i, self.v.get(x, i) - lr * grad.get(x, i));
            }
        }
    }
}

/// One `(context, action, advantage)` triple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub x: usize,
    pub a: usize,
    pub advantage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub alpha: f64,
    pub w: Vec<f64>,
    pub mean_rewards: Vec<f64>,
    /// Batch mean of the exact per-context KL.
    pub kl: f64,
    /// Batch mean of `(1 - alpha) w^T R - alpha KL(x)`.
    pub objective: f64,
    pub advantage_mean: f64,
    pub advantage_std: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub records: Vec<StepRecord>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let m = self.records.first().map_or(0, |r| r.w.len());
        let mut cols = vec!["step".to_string(), "alpha".to_string()];
        cols.extend((0..m).map(|i| format!("w_{i}")));
        cols.extend((0..m).map(|i| format!("mean_r_{i}")));
        cols.extend(["kl", "objective", "grad_norm"].map(String::from));
        let mut out = cols.join(",");
        out.push('\n');
        for r in &self.records {
            let mut cells = vec![r.step.to_string(), r.alpha.to_string()];
            cells.extend(r.w.iter().map(f64::to_string));
            cells.extend(r.mean_rewards.iter().map(f64::to_string));
            cells.extend([r.kl, r.objective, r.grad_norm].map(|v| v.to_string()));
            writeln!(out, "{}", cells.join(",")).unwrap();
        }
        out
    }
}

/// `(1 / B) sum_j A_j grad log pi(a_j | x_j)` at `theta`.
pub fn policy_gradient(
    arch: &PolicyArchitecture,
    theta: &ParameterVector,
    features: &Matrix,
    batch: &[Sample],
) -> Result<ParameterVector> {
    arch.check(theta)?;
    let mut g = theta.zeros_like();
    if batch.is_empty() {
        return Ok(g);
    }
    let n = batch.len() as f64;
    for s in batch {
        let probs = math::softmax(&arch.logits_row(theta, features, s.x));
        let dz: Vec<f64> = probs.iter().enumerate().map(|(k, p)| f64::from(k == s.a) - p).collect();
        arch.backprop_into(theta, features, s.x, &dz, s.advantage / n, &mut g);
    }
    Ok(g)
}

/// Routes a full-layout gradient `gamma` through the mixing rule.
pub fn decompose_gradient(
    bundle: &ParameterBundle,
    alpha: KLWeight,
    w: &RewardWeights,
    gamma: &ParameterVector,
) -> Result<BundleGrad> {
    if w.len() != bundle.m() {
        return Err(dim("weighting length differs from bundle m"));
    }
    let mut g = bundle.zero_grad();
    let shared_names: Vec<String> = bundle.unconditioned().segment_names().map(String::from).collect();
    let shared_refs: Vec<&str> = shared_names.iter().map(String::as_str).collect();
    g.unconditioned = gamma.restrict(&shared_refs)?;
    let cond_refs: Vec<&str> = bundle.conditioned_names().iter().map(String::as_str).collect();
    let gamma_s = gamma.restrict(&cond_refs)?;
    let scale = 1.0 - f_mix(alpha);
    for (gc, &wi) in g.conditioned.iter_mut().zip(w.as_slice()) {
        for (dst, &src) in gc.values_mut().iter_mut().zip(gamma_s.values()) {
            *dst = scale * wi * src;
        }
    }
    Ok(g)
}

/// Bundle gradient of the batch surrogate `(1/B) sum_j A_j log pi(a_j | x_j; alpha, w)`.
pub fn clp_gradient(
    bundle: &ParameterBundle,
    env: &BanditEnv,
    alpha: KLWeight,
    w: &RewardWeights,
    batch: &[Sample],
) -> Result<BundleGrad> {
    let mixed = bundle.condition(alpha, w)?;
    let features = mixed.features(env.features());
    let gamma = policy_gradient(bundle.arch(), mixed.theta(), &features, batch)?;
    decompose_gradient(bundle, alpha, w, &gamma)
}

/// Batch normalization `(A - mean) / (std + eps)`; returns `(normalized, mean, std)`.
pub fn normalize_advantages(raw: &[f64], eps: f64) -> (Vec<f64>, f64, f64) {
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let std = (raw.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n).sqrt();
    if std == 0.0 {
        return (vec![0.0; raw.len()], mean, std);
    }
    (raw.iter().map(|a| (a - mean) / (std + eps)).collect(), mean, std)
}

/// Which weighting the policy is conditioned on versus scored against.
#[derive(Debug, Clone)]
enum Mode {
    /// Sample `(alpha, w)` from the config's sampler each step.
    MultiTask,
    /// Single objective; the bundle has one copy conditioned at `beta = 0`.
    Fixed { alpha: f64, w: RewardWeights },
}

/// Multi-task CLP training.
pub fn clp_train(env: &BanditEnv, bundle: ParameterBundle, cfg: &TrainConfig) -> Result<(ParameterBundle, TrainReport)> {
    clp_train_with(env, bundle, cfg, |_, _| Ok(()))
}

/// [`clp_train`] with a hook called after every step with `(step + 1, bundle)`.
pub fn clp_train_with(
    env: &BanditEnv,
    bundle: ParameterBundle,
    cfg: &TrainConfig,
    hook: impl FnMut(usize, &ParameterBundle) -> Result<()>,
) -> Result<(ParameterBundle, TrainReport)> {
    if cfg.sampler.m() != bundle.m() || bundle.m() != env.m() {
        return Err(dim("sampler, bundle and environment disagree on m"));
    }
    run(env, bundle, cfg, Mode::MultiTask, hook)
}

fn check_env(arch: &PolicyArchitecture, env: &BanditEnv, suffix: usize) -> Result<()> {
    if arch.num_actions() != env.num_actions() {
        return Err(dim("architecture action count differs from environment"));
    }
    match arch.feature_dim() {
        Some(d) if d != env.features().cols() + suffix => Err(dim(format!(
            "architecture expects {d} features, environment provides {} (+{suffix} prompt inputs)",
            env.features().cols()
        ))),
        None if env.num_contexts() * env.num_actions() != arch.zeros().len() => {
            Err(dim("tabular architecture does not match environment"))
        }
        _ => Ok(()),
    }
}

fn run(
    env: &BanditEnv,
    mut bundle: ParameterBundle,
    cfg: &TrainConfig,
    mode: Mode,
    mut hook: impl FnMut(usize, &ParameterBundle) -> Result<()>,
) -> Result<(ParameterBundle, TrainReport)> {
    cfg.validate()?;
    check_env(bundle.arch(), env, bundle.prompt_repeats().map_or(0, |k| k * bundle.m()))?;
    let mut rng_w = rng::stream(cfg.seed, "train.weightings");
    let mut rng_b = rng::stream(cfg.seed, "train.batch");
    let mut baseline = ValueBaseline::zeros(env.num_contexts(), env.m());
    let template = bundle.zero_grad();
    let mut opt = Optimizer::new(cfg.optimizer, template.flat().len());
    let lref = env.reference().log_probs().clone();
    let mut report = TrainReport::default();

    for step in 0..cfg.steps {
        let (cond_alpha, cond_w, alpha, w) = match &mode {
            Mode::MultiTask => {
                let (a, w) = cfg.sampler.sample(&mut rng_w);
                (a, w.clone(), a.alpha(), w)
            }
            Mode::Fixed { alpha, w } => {
                (KLWeight::new(*alpha, *alpha)?, RewardWeights::basis(1, 0), *alpha, w.clone())
            }
        };
        let mixed: MixedPolicy = bundle.condition(cond_alpha, &cond_w)?;
        let features = mixed.features(env.features());
        let policy: Policy = bundle.arch().logits(mixed.theta(), &features)?.to_policy();
        let kl_rows: Vec<f64> = (0..env.num_contexts()).map(|x| policy.kl_row(env.reference(), x)).collect();

        let pairs: Vec<(usize, usize)> = (0..cfg.batch_size)
            .map(|_| {
                let x = env.sample_context(&mut rng_b);
                (x, policy.sample(x, &mut rng_b))
            })
            .collect();

        let ws = w.as_slice();
        let mut raw = Vec::with_capacity(pairs.len());
        let mut objective = 0.0;
        let mut mean_rewards = vec![0.0; env.m()];
        let mut kl_mean = 0.0;
        for &(x, a) in &pairs {
            let rw = math::dot(env.reward_vec(x, a), ws);
            let log_ratio = policy.log_prob(x, a) - lref.get(x, a);
            objective += (1.0 - alpha) * rw - alpha * kl_rows[x];
            kl_mean += kl_rows[x];
            for (acc, r) in mean_rewards.iter_mut().zip(env.reward_vec(x, a)) {
                *acc += r;
            }
            // per-sample log-ratio keeps the KL term's score-function gradient;
            // the exact per-context KL is its baseline
            raw.push((1.0 - alpha) * (rw - baseline.scalarized(x, ws)) - alpha * (log_ratio - kl_rows[x]));
        }
        let n = pairs.len() as f64;
        let (adv, adv_mean, adv_std) = normalize_advantages(&raw, cfg.advantage_norm_eps);
        let batch: Vec<Sample> =
            pairs.iter().zip(&adv).map(|(&(x, a), &advantage)| Sample { x, a, advantage }).collect();

        let gamma = policy_gradient(bundle.arch(), mixed.theta(), &features, &batch)?;
        let g = decompose_gradient(&bundle, cond_alpha, &cond_w, &gamma)?;
        let grad_norm = g.norm();
        let dir = opt.direction(&g.flat());
        bundle.apply(&grad_from_flat(&template, &dir), cfg.lr_policy)?;
        baseline.update(env, &pairs, cfg.lr_value);

        if let Some(segment) = bundle.first_non_finite() {
            return Err(Error::Divergence { step, segment });
        }
        if baseline.v.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step, segment: "value_baseline".into() });
        }

        mean_rewards.iter_mut().for_each(|r| *r /= n);
        report.records.push(StepRecord {
            step,
            alpha,
            w: ws.to_vec(),
            mean_rewards,
            kl: kl_mean / n,
            objective: objective / n,
            advantage_mean: adv_mean,
            advantage_std: adv_std,
            grad_norm,
        });
        hook(step + 1, &bundle)?;
    }
    Ok((bundle, report))
}

/// Single-objective finetuning of a full parameter vector at fixed `(alpha, w)`.
pub fn soft_train(
    env: &BanditEnv,
    arch: &PolicyArchitecture,
    theta_init: &ParameterVector,
    alpha: f64,
    w: &RewardWeights,
    cfg: &TrainConfig,
) -> Result<(ParameterVector, TrainReport)> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(invalid(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    if w.len() != env.m() {
        return Err(dim("weighting length differs from environment"));
    }
    let full = full_arch(arch);
    let bundle = ParameterBundle::from_reference(full, theta_init, 1, None)?;
    let (trained, report) = run(env, bundle, cfg, Mode::Fixed { alpha, w: w.clone() }, |_, _| Ok(()))?;
    Ok((trained.full_copy(0)?, report))
}

fn full_arch(arch: &PolicyArchitecture) -> PolicyArchitecture {
    PolicyArchitecture { kind: arch.kind, scheme: crate::policy::PartitionScheme::Full }
}

/// Rewarded-soups experts: one SOFT run per reward at `w = e_i`, the total
/// step budget split evenly.
pub fn train_experts(
    env: &BanditEnv,
    arch: &PolicyArchitecture,
    theta_ref: &ParameterVector,
    alpha: f64,
    total_steps: usize,
    cfg: &TrainConfig,
) -> Result<Vec<(ParameterVector, TrainReport)>> {
    let m = env.m();
    (0..m)
        .map(|i| {
            let mut c = cfg.clone();
            c.steps = total_steps / m;
            c.seed = rng::split_seed(cfg.seed, &format!("expert{i}"));
            soft_train(env, arch, theta_ref, alpha, &RewardWeights::basis(m, i), &c)
        })
        .collect()
}

/// Exact `grad_theta V_{alpha, w^T R}(pi_theta)`.
pub fn exact_policy_gradient(
    env: &BanditEnv,
    arch: &PolicyArchitecture,
    theta: &ParameterVector,
    features: &Matrix,
    alpha: f64,
    w: &RewardWeights,
) -> Result<ParameterVector> {
    let reward = env.scalarize(w)?;
    let policy = arch.logits(theta, features)?.to_policy();
    let lref = env.reference().log_probs();
    let mut g = theta.zeros_like();
    for (x, &mu) in env.context_dist().iter().enumerate() {
        if mu == 0.0 {
            continue;
        }
        let p = policy.probs().row(x);
        let q: Vec<f64> = (0..env.num_actions())
            .map(|a| (1.0 - alpha) * reward.get(x, a) - alpha * (policy.log_prob(x, a) - lref.get(x, a)))
            .collect();
        let qbar = math::dot(p, &q);
        let dz: Vec<f64> = p.iter().zip(&q).map(|(pa, qa)| pa * (qa - qbar)).collect();
        arch.backprop_into(theta, features, x, &dz, mu, &mut g);
    }
    Ok(g)
}

/// Deterministic full-gradient ascent on the mean objective over a fixed list
/// of weightings.
pub fn exact_train(
    env: &BanditEnv,
    mut bundle: ParameterBundle,
    schedule: &[(KLWeight, RewardWeights)],
    steps: usize,
    lr: f64,
    optimizer: OptimizerKind,
) -> Result<ParameterBundle> {
    if schedule.is_empty() {
        return Err(invalid("weighting schedule is empty"));
    }
    check_env(bundle.arch(), env, bundle.prompt_repeats().map_or(0, |k| k * bundle.m()))?;
    let template = bundle.zero_grad();
    let mut opt = Optimizer::new(optimizer, template.flat().len());
    for step in 0..steps {
        let g = exact_bundle_gradient(env, &bundle, schedule)?;
        let dir = opt.direction(&g.flat());
        bundle.apply(&grad_from_flat(&template, &dir), lr)?;
        if let Some(segment) = bundle.first_non_finite() {
            return Err(Error::Divergence { step, segment });
        }
    }
    Ok(bundle)
}

/// Mean exact bundle gradient over the schedule.
pub fn exact_bundle_gradient(
    env: &BanditEnv,
    bundle: &ParameterBundle,
    schedule: &[(KLWeight, RewardWeights)],
) -> Result<BundleGrad> {
    let mut total = bundle.zero_grad();
    for (alpha, w) in schedule {
        let mixed = bundle.condition(*alpha, w)?;
        let features = mixed.features(env.features());
        let gamma = exact_policy_gradient(env, bundle.arch(), mixed.theta(), &features, alpha.alpha(), w)?;
        total.add_scaled(&decompose_gradient(bundle, *alpha, w, &gamma)?, 1.0 / schedule.len() as f64)?;
    }
    Ok(total)
}

/// Exact-gradient single-objective training of a full parameter vector.
pub fn exact_soft_train(
    env: &BanditEnv,
    arch: &PolicyArchitecture,
    theta_init: &ParameterVector,
    alpha: f64,
    w: &RewardWeights,
    steps: usize,
    lr: f64,
    optimizer: OptimizerKind,
) -> Result<ParameterVector> {
    let full = full_arch(arch);
    let mut theta = theta_init.clone();
    let mut opt = Optimizer::new(optimizer, theta.len());
    for step in 0..steps {
        let g = exact_policy_gradient(env, &full, &theta, env.features(), alpha, w)?;
        let dir = opt.direction(g.values());
        for (t, d) in theta.values_mut().iter_mut().zip(dir) {
            *t += lr * d;
        }
        if let Some(segment) = theta.first_non_finite() {
            return Err(Error::Divergence { step, segment: segment.to_string() });
        }
    }
    Ok(theta)
}

/// Unnormalized single-sample estimator `(q(x, a) - b(x)) grad log pi(a | x)`,
/// with `q = (1 - alpha) w^T R - alpha (log pi - log pi_ref)` and baseline `b`.
/// Its expectation under `x ~ mu, a ~ pi` is [`exact_policy_gradient`].
pub fn sampled_gradient_term<R: Rng + ?Sized>(
    env: &BanditEnv,
    arch: &PolicyArchitecture,
    theta: &ParameterVector,
    alpha: f64,
    w: &RewardWeights,
    baseline: &[f64],
    rng: &mut R,
) -> Result<ParameterVector> {
    let policy = arch.logits(theta, env.features())?.to_policy();
    let x = env.sample_context(rng);
    let a = policy.sample(x, rng);
    let rw = math::dot(env.reward_vec(x, a), w.as_slice());
    let q = (1.0 - alpha) * rw - alpha * (policy.log_prob(x, a) - env.reference().log_probs().get(x, a));
    policy_gradient(arch, theta, env.features(), &[Sample { x, a, advantage: q - baseline[x] }])
}

/// Convenience sampler for single-objective configs.
pub fn fixed_sampler(m: usize, alpha: f64, seed: u64) -> Result<WeightingSampler> {
    WeightingSampler::uniform(m, alpha, AlphaMode::Fixed(alpha), seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use crate::policy::PartitionScheme;

    #[test]
    fn normalization_handles_degenerate_batches() {
        let (a, mean, std) = normalize_advantages(&[0.3, 0.3, 0.3], 1e-8);
        assert_eq!(a, vec![0.0; 3]);
        assert_eq!((mean, std), (0.3, 0.0));
        let (b, _, _) = normalize_advantages(&[1.0, 3.0], 1e-8);
        assert!((b[0] + 1.0).abs() < 1e-7 && (b[1] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn config_validation() {
        let s = fixed_sampler(2, 0.1, 0).unwrap();
        let mut c = TrainConfig::new(10, 0.1, s, 0);
        c.batch_size = 1;
        assert!(c.validate().is_err());
        c.batch_size = 2;
        c.lr_value = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn decomposition_ratios_and_alpha_min_scale() {
        let env = BanditEnv::random(2, 3, 2, 0).unwrap();
        let arch = PolicyArchitecture::tabular(2, 3, PartitionScheme::Full).unwrap();
        let (theta_ref, _) = arch.init_reference(&env, 0).unwrap();
        let bundle = ParameterBundle::from_reference(arch, &theta_ref, 2, None).unwrap();
        let batch = [Sample { x: 0, a: 1, advantage: 1.3 }, Sample { x: 1, a: 2, advantage: -0.4 }];
        let w = RewardWeights::new(vec![0.25, 0.75]).unwrap();
        let amin = KLWeight::new(0.01, 0.01).unwrap();
        let g = clp_gradient(&bundle, &env, amin, &w, &batch).unwrap();
        let mixed = bundle.condition(amin, &w).unwrap();
        let gamma = policy_gradient(&arch, mixed.theta(), env.features(), &batch).unwrap();
        for k in 0..gamma.len() {
            assert_eq!(g.conditioned[0].values()[k], 0.25 * gamma.values()[k]);
            assert_eq!(g.conditioned[1].values()[k], 0.75 * gamma.values()[k]);
            if gamma.values()[k] != 0.0 {
                let ratio = g.conditioned[0].values()[k] / g.conditioned[1].values()[k];
                assert!((ratio - 1.0 / 3.0).abs() < 1e-12);
            }
        }
        let one = KLWeight::new(1.0, 0.01).unwrap();
        let g1 = clp_gradient(&bundle, &env, one, &w, &batch).unwrap();
        assert!(g1.conditioned.iter().all(|c| c.values().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn exact_gradient_vanishes_at_optimum() {
        let env = BanditEnv::random(3, 4, 2, 3).unwrap();
        let arch = PolicyArchitecture::tabular(3, 4, PartitionScheme::Full).unwrap();
        let w = RewardWeights::new(vec![0.4, 0.6]).unwrap();
        let opt = oracle::optimal_for_weights(&env, 0.2, &w).unwrap();
        let theta = ParameterVector::new(opt.logits.0.as_slice().to_vec(), arch.zeros().segments().to_vec()).unwrap();
        let g = exact_policy_gradient(&env, &arch, &theta, env.features(), 0.2, &w).unwrap();
        assert!(g.norm() < 1e-8, "{}", g.norm());
    }

    #[test]
    fn exact_training_is_monotone() {
        let env = BanditEnv::random(3, 4, 1, 5).unwrap();
        let arch = PolicyArchitecture::tabular(3, 4, PartitionScheme::Full).unwrap();
        let (theta_ref, _) = arch.init_reference(&env, 0).unwrap();
        let w = RewardWeights::basis(1, 0);
        let r = env.scalarize(&w).unwrap();
        let mut theta = theta_ref.clone();
        let mut prev = f64::NEG_INFINITY;
        for _ in 0..200 {
            let v = oracle::value(&env, &arch.logits(&theta, env.features()).unwrap().to_policy(), 0.3, &r).unwrap();
            assert!(v >= prev - 1e-15);
            prev = v;
            theta = exact_soft_train(&env, &arch, &theta, 0.3, &w, 1, 0.5, OptimizerKind::Sgd).unwrap();
        }
    }

    #[test]
    fn sampled_estimator_is_unbiased() {
        let env = BanditEnv::random(2, 3, 1, 7).unwrap();
        let arch = PolicyArchitecture::tabular(2, 3, PartitionScheme::Full).unwrap();
        let mut theta = arch.zeros();
        theta.values_mut().copy_from_slice(&[0.5, -0.2, 0.1, 1.0, 0.0, -0.7]);
        let w = RewardWeights::basis(1, 0);
        let exact = exact_policy_gradient(&env, &arch, &theta, env.features(), 0.2, &w).unwrap();
        let mut rng = rng::from_seed(1);
        let n = 100_000;
        let d = theta.len();
        let (mut sum, mut sq) = (vec![0.0; d], vec![0.0; d]);
        for _ in 0..n {
            let g = sampled_gradient_term(&env, &arch, &theta, 0.2, &w, &[0.3, 0.3], &mut rng).unwrap();
            for k in 0..d {
                sum[k] += g.values()[k];
                sq[k] += g.values()[k] * g.values()[k];
            }
        }
        for k in 0..d {
            let mean = sum[k] / n as f64;
            let se = ((sq[k] / n as f64 - mean * mean) / n as f64).sqrt();
            assert!((mean - exact.values()[k]).abs() <= 3.0 * se + 1e-12, "coord {k}: {mean} vs {}", exact.values()[k]);
        }
    }

    #[test]
    fn divergence_is_reported() {
        let env = BanditEnv::random(1, 2, 1, 0).unwrap();
        let arch = PolicyArchitecture::tabular(1, 2, PartitionScheme::Full).unwrap();
        let s = fixed_sampler(1, 0.5, 0).unwrap();
        let mut cfg = TrainConfig::new(5, f64::INFINITY, s, 0);
        cfg.lr_value = 0.1;
        let res = soft_train(&env, &arch, &arch.zeros(), 0.5, &RewardWeights::basis(1, 0), &cfg);
        assert!(matches!(res, Err(Error::Divergence { .. })), "{res:?}");
    }
}
