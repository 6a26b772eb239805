//! Turning a parameter bundle plus a weighting into a concrete policy, and the
//! zero-shot baselines built from the same pieces.
//!
//! For conditioned segments `S` the mixed parameters are
//! `(1 - beta) * sum_i w[i] theta_S^(i) + beta * theta_ref[S]` with
//! `beta = f_mix(alpha)`; the complement `S^C` is shared and copied as is.

use crate::env::BanditEnv;
use crate::error::{dim, invalid, Error, Result};
use crate::math::Matrix;
use crate::policy::{Logits, ParameterVector, Policy, PolicyArchitecture};
use crate::textfmt::{parse_err, TextDoc};
use crate::weightings::{f_mix, KLWeight, RewardWeights};

pub const CHECKPOINT_MAGIC: &str = "clp-lab checkpoint v1";

/// Default number of times each reward weight is repeated in the features.
pub const DEFAULT_PROMPT_REPEATS: usize = 5;

/// CLP parameters: one shared segment set plus `m` copies of the conditioned
/// segment set, and the frozen reference values of the conditioned set.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterBundle {
    arch: PolicyArchitecture,
    cond_names: Vec<String>,
    unconditioned: ParameterVector,
    conditioned: Vec<ParameterVector>,
    ref_s: ParameterVector,
    prompt_repeats: Option<usize>,
}

/// Bundle-shaped gradient (or update direction).
#[derive(Debug, Clone, PartialEq)]
pub struct BundleGrad {
    pub unconditioned: ParameterVector,
    pub conditioned: Vec<ParameterVector>,
}

impl BundleGrad {
    pub fn norm(&self) -> f64 {
        let sq: f64 = self.unconditioned.values().iter().map(|v| v * v).sum::<f64>()
            + self.conditioned.iter().flat_map(|c| c.values()).map(|v| v * v).sum::<f64>();
        sq.sqrt()
    }

    pub fn add_scaled(&mut self, other: &BundleGrad, s: f64) -> Result<()> {
        self.unconditioned.add_scaled(&other.unconditioned, s)?;
        for (a, b) in self.conditioned.iter_mut().zip(&other.conditioned) {
            a.add_scaled(b, s)?;
        }
        Ok(())
    }

    /// All entries flattened in bundle order (shared, then each copy).
    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.unconditioned.values().to_vec();
        for c in &self.conditioned {
            v.extend_from_slice(c.values());
        }
        v
    }
}

impl ParameterBundle {
    /// Initializes every conditioned copy at `theta_ref[S]`.
    ///
    /// `prompt_repeats = Some(k)` appends the reward weights, each repeated
    /// `k` times, to the context features; the architecture's feature width
    /// must already include those `m * k` extra inputs.
    pub fn from_reference(
        arch: PolicyArchitecture,
        theta_ref: &ParameterVector,
        m: usize,
        prompt_repeats: Option<usize>,
    ) -> Result<Self> {
        let names = arch.conditioned_names();
        Self::with_partition(arch, &names, theta_ref, m, prompt_repeats)
    }

    /// Prompt-conditioned policy with no replicated parameters.
    pub fn prompt_only(arch: PolicyArchitecture, theta_ref: &ParameterVector, m: usize, repeats: usize) -> Result<Self> {
        Self::with_partition(arch, &[], theta_ref, m, Some(repeats))
    }

    fn with_partition(
        arch: PolicyArchitecture,
        cond: &[&str],
        theta_ref: &ParameterVector,
        m: usize,
        prompt_repeats: Option<usize>,
    ) -> Result<Self> {
        arch.check(theta_ref)?;
        if m == 0 {
            return Err(invalid("bundle needs m >= 1"));
        }
        if let Some(k) = prompt_repeats {
            if arch.feature_dim().is_none() {
                return Err(invalid("prompt conditioning needs a feature-based architecture"));
            }
            if k == 0 {
                return Err(invalid("prompt repeats must be >= 1"));
            }
        }
        let uncond: Vec<&str> =
            arch.layout().into_iter().map(|(n, _)| n).filter(|n| !cond.contains(n)).collect();
        let ref_s = theta_ref.restrict(cond)?;
        Ok(Self {
            arch,
            cond_names: cond.iter().map(|s| s.to_string()).collect(),
            unconditioned: theta_ref.restrict(&uncond)?,
            conditioned: vec![ref_s.clone(); m],
            ref_s,
            prompt_repeats,
        })
    }

    pub fn arch(&self) -> &PolicyArchitecture {
        &self.arch
    }

    pub fn m(&self) -> usize {
        self.conditioned.len()
    }

    pub fn prompt_repeats(&self) -> Option<usize> {
        self.prompt_repeats
    }

    pub fn unconditioned(&self) -> &ParameterVector {
        &self.unconditioned
    }

    pub fn conditioned(&self) -> &[ParameterVector] {
        &self.conditioned
    }

    pub fn conditioned_mut(&mut self) -> &mut [ParameterVector] {
        &mut self.conditioned
    }

    pub fn unconditioned_mut(&mut self) -> &mut ParameterVector {
        &mut self.unconditioned
    }

    pub fn ref_s(&self) -> &ParameterVector {
        &self.ref_s
    }

    pub fn conditioned_names(&self) -> &[String] {
        &self.cond_names
    }

    /// Replaces conditioned copy `i`, keeping the layout.
    pub fn set_conditioned(&mut self, i: usize, values: ParameterVector) -> Result<()> {
        if !values.same_layout(&self.ref_s) {
            return Err(Error::Layout("conditioned copy layout differs from theta_ref[S]".into()));
        }
        self.conditioned[i] = values;
        Ok(())
    }

    pub fn zero_grad(&self) -> BundleGrad {
        BundleGrad {
            unconditioned: self.unconditioned.zeros_like(),
            conditioned: self.conditioned.iter().map(ParameterVector::zeros_like).collect(),
        }
    }

    /// `self += lr * g`.
    pub fn apply(&mut self, g: &BundleGrad, lr: f64) -> Result<()> {
        self.unconditioned.add_scaled(&g.unconditioned, lr)?;
        for (c, gc) in self.conditioned.iter_mut().zip(&g.conditioned) {
            c.add_scaled(gc, lr)?;
        }
        Ok(())
    }

    /// Name of a segment holding a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<String> {
        if let Some(n) = self.unconditioned.first_non_finite() {
            return Some(n.to_string());
        }
        self.conditioned
            .iter()
            .enumerate()
            .find_map(|(i, c)| c.first_non_finite().map(|n| format!("{n}#{i}")))
    }

    /// Mixed parameters and feature suffix for `(alpha, w)`.
    pub fn condition(&self, alpha: KLWeight, w: &RewardWeights) -> Result<MixedPolicy> {
        if w.len() != self.m() {
            return Err(dim(format!("weighting has {} entries, bundle has m = {}", w.len(), self.m())));
        }
        let beta = f_mix(alpha);
        let mut mixed_s = self.ref_s.clone();
        let out = mixed_s.values_mut();
        for (k, v) in out.iter_mut().enumerate() {
            let avg: f64 = self.conditioned.iter().zip(w.as_slice()).map(|(c, wi)| wi * c.values()[k]).sum();
            *v = (1.0 - beta) * avg + beta * *v;
        }
        let mut theta = self.arch.zeros();
        theta.overwrite(&self.unconditioned)?;
        theta.overwrite(&mixed_s)?;
        let feature_suffix = self.prompt_repeats.map(|k| prompt_suffix(w, k));
        Ok(MixedPolicy { arch: self.arch, theta, alpha, w: w.clone(), feature_suffix })
    }

    /// Full parameters of copy `i`: shared segments plus conditioned copy `i`.
    pub fn full_copy(&self, i: usize) -> Result<ParameterVector> {
        let c = self.conditioned.get(i).ok_or_else(|| invalid(format!("no conditioned copy {i}")))?;
        let mut theta = self.arch.zeros();
        theta.overwrite(&self.unconditioned)?;
        theta.overwrite(c)?;
        Ok(theta)
    }

    /// Full reference parameters: shared segments plus the stored reference slice.
    pub fn full_reference(&self) -> Result<ParameterVector> {
        let mut theta = self.arch.zeros();
        theta.overwrite(&self.unconditioned)?;
        theta.overwrite(&self.ref_s)?;
        Ok(theta)
    }

    pub fn to_text(&self) -> String {
        let mut doc = TextDoc::new(CHECKPOINT_MAGIC);
        doc.push_header("kind", ["bundle"]);
        doc.push_header("arch", self.arch.to_string().split_whitespace());
        doc.push_header("m", [self.m()]);
        doc.push_header("prompt_repeats", [self.prompt_repeats.unwrap_or(0)]);
        doc.push_header("conditioned", self.cond_names.iter());
        doc.sections.extend(self.unconditioned.to_sections("shared"));
        doc.sections.extend(self.ref_s.to_sections("ref"));
        for (i, c) in self.conditioned.iter().enumerate() {
            doc.sections.extend(c.to_sections(&format!("cond{i}")));
        }
        doc.render()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let doc = TextDoc::parse(text, CHECKPOINT_MAGIC)?;
        let kind: String = doc.header_value("kind")?;
        if kind != "bundle" {
            return Err(parse_err(0, format!("expected a bundle checkpoint, found `{kind}`")));
        }
        let arch = PolicyArchitecture::parse(doc.header_values("arch")?)?;
        let m: usize = doc.header_value("m")?;
        let repeats: usize = doc.header_value("prompt_repeats")?;
        let cond_names = doc.header_values("conditioned")?.to_vec();
        let unconditioned = ParameterVector::from_sections(&doc, "shared")?;
        let ref_s = ParameterVector::from_sections(&doc, "ref")?;
        let conditioned = (0..m)
            .map(|i| ParameterVector::from_sections(&doc, &format!("cond{i}")))
            .collect::<Result<Vec<_>>>()?;
        if conditioned.iter().any(|c| !c.same_layout(&ref_s)) {
            return Err(Error::Layout("conditioned copies differ in layout".into()));
        }
        let bundle = Self {
            arch,
            cond_names,
            unconditioned,
            conditioned,
            ref_s,
            prompt_repeats: (repeats > 0).then_some(repeats),
        };
        // layout check: the mixed vector must tile the architecture
        let mut theta = arch.zeros();
        theta.overwrite(&bundle.unconditioned)?;
        theta.overwrite(&bundle.ref_s)?;
        if bundle.unconditioned.len() + bundle.ref_s.len() != theta.len() {
            return Err(Error::Layout("bundle segments do not tile the architecture".into()));
        }
        Ok(bundle)
    }
}

/// Each reward weight repeated `k` times, in reward order.
pub fn prompt_suffix(w: &RewardWeights, k: usize) -> Vec<f64> {
    w.as_slice().iter().flat_map(|&wi| std::iter::repeat_n(wi, k)).collect()
}

/// Appends `suffix` to every feature row.
pub fn augment_features(base: &Matrix, suffix: &[f64]) -> Matrix {
    let cols = base.cols() + suffix.len();
    let mut out = Matrix::zeros(base.rows(), cols);
    for r in 0..base.rows() {
        let row = out.row_mut(r);
        row[..base.cols()].copy_from_slice(base.row(r));
        row[base.cols()..].copy_from_slice(suffix);
    }
    out
}

/// Full-layout parameters for one weighting.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedPolicy {
    arch: PolicyArchitecture,
    theta: ParameterVector,
    alpha: KLWeight,
    w: RewardWeights,
    feature_suffix: Option<Vec<f64>>,
}

impl MixedPolicy {
    pub fn arch(&self) -> &PolicyArchitecture {
        &self.arch
    }

    pub fn theta(&self) -> &ParameterVector {
        &self.theta
    }

    pub fn alpha(&self) -> KLWeight {
        self.alpha
    }

    pub fn w(&self) -> &RewardWeights {
        &self.w
    }

    pub fn feature_suffix(&self) -> Option<&[f64]> {
        self.feature_suffix.as_deref()
    }

    /// Input features seen by the network for the given base features.
    pub fn features(&self, base: &Matrix) -> Matrix {
        match &self.feature_suffix {
            Some(s) => augment_features(base, s),
            None => base.clone(),
        }
    }

    pub fn logits(&self, env: &BanditEnv) -> Result<Logits> {
        self.arch.logits(&self.theta, &self.features(env.features()))
    }

    pub fn policy(&self, env: &BanditEnv) -> Result<Policy> {
        Ok(self.logits(env)?.to_policy())
    }
}

/// `(1 - lambda) z0 + lambda z1`.
pub fn logit_mix(z0: &Logits, z1: &Logits, lambda: f64) -> Result<Logits> {
    if !z0.0.same_shape(&z1.0) {
        return Err(dim("logit tables have different shapes"));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(invalid(format!("lambda {lambda} outside [0, 1]")));
    }
    let data = z0.0.as_slice().iter().zip(z1.0.as_slice()).map(|(a, b)| (1.0 - lambda) * a + lambda * b).collect();
    Ok(Logits(Matrix::from_vec(z0.0.rows(), z0.0.cols(), data)?))
}

/// Weighted logit ensemble over any number of experts.
pub fn logit_ensemble(experts: &[Logits], w: &RewardWeights) -> Result<Logits> {
    if experts.len() != w.len() || experts.is_empty() {
        return Err(dim("one logit table per weight required"));
    }
    let shape = &experts[0].0;
    let mut out = Matrix::zeros(shape.rows(), shape.cols());
    for (e, &wi) in experts.iter().zip(w.as_slice()) {
        if !e.0.same_shape(shape) {
            return Err(dim("logit tables have different shapes"));
        }
        for r in 0..shape.rows() {
            for (o, v) in out.row_mut(r).iter_mut().zip(e.0.row(r)) {
                *o += wi * v;
            }
        }
    }
    Ok(Logits(out))
}

/// Rewarded soups: weight-average independently trained experts over the
/// architecture's conditioned segments; remaining segments come from
/// `theta_ref`.
pub fn rewarded_soups(
    arch: &PolicyArchitecture,
    experts: &[ParameterVector],
    theta_ref: &ParameterVector,
    w: &RewardWeights,
) -> Result<MixedPolicy> {
    if experts.len() != w.len() {
        return Err(dim(format!("{} experts for {} weights", experts.len(), w.len())));
    }
    for e in experts {
        arch.check(e)?;
    }
    let mut bundle = ParameterBundle::from_reference(*arch, theta_ref, experts.len(), None)?;
    let names = arch.conditioned_names();
    for (i, e) in experts.iter().enumerate() {
        bundle.set_conditioned(i, e.restrict(&names)?)?;
    }
    let alpha_min = 0.5;
    bundle.condition(KLWeight::new(alpha_min, alpha_min)?, w)
}

/// Decoding-time realignment: `(1 - beta) z(theta_min) + beta z(theta_ref)`
/// with `beta = f_mix(alpha)`, where `theta_min` was trained at `alpha_min`.
pub fn dera_logits(
    arch: &PolicyArchitecture,
    theta_min: &ParameterVector,
    theta_ref: &ParameterVector,
    features: &Matrix,
    alpha: KLWeight,
) -> Result<Logits> {
    let z_min = arch.logits(theta_min, features)?;
    let z_ref = arch.logits(theta_ref, features)?;
    logit_mix(&z_min, &z_ref, f_mix(alpha))
}
