//! Finite multi-reward contextual bandits.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{dim, invalid, Result};
use crate::math::Matrix;
use crate::rng;
use crate::textfmt::{parse_err, Section, TextDoc};
use crate::weightings::RewardWeights;

const ENV_MAGIC: &str = "clp-lab env v1";
const ROW_TOL: f64 = 1e-12;

/// Per-context action distribution of the base policy. Full support.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePolicy {
    probs: Matrix,
    log_probs: Matrix,
}

impl ReferencePolicy {
    pub fn new(probs: Matrix) -> Result<Self> {
        for r in 0..probs.rows() {
            let row = probs.row(r);
            if row.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
                return Err(invalid(format!("reference row {r} must be strictly positive: {row:?}")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > ROW_TOL {
                return Err(invalid(format!("reference row {r} sums to {total}")));
            }
        }
        let log_probs = probs.map(f64::ln);
        Ok(Self { probs, log_probs })
    }

    pub fn uniform(num_contexts: usize, num_actions: usize) -> Self {
        let probs = Matrix::filled(num_contexts, num_actions, 1.0 / num_actions as f64);
        let log_probs = probs.map(f64::ln);
        Self { probs, log_probs }
    }

    pub fn probs(&self) -> &Matrix {
        &self.probs
    }

    pub fn log_probs(&self) -> &Matrix {
        &self.log_probs
    }
}

/// How context feature vectors were produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeatureKind {
    OneHot,
    /// Standard normal entries drawn from the given seed.
    Dense { dim: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BanditEnv {
    num_contexts: usize,
    num_actions: usize,
    m: usize,
    /// Row-major `[context][action][reward]`.
    rewards: Vec<f64>,
    context_dist: Vec<f64>,
    feature_kind: FeatureKind,
    features: Matrix,
    reference: ReferencePolicy,
    seed: u64,
}

impl BanditEnv {
    pub fn new(
        num_contexts: usize,
        num_actions: usize,
        m: usize,
        rewards: Vec<f64>,
        context_dist: Vec<f64>,
        reference: ReferencePolicy,
        seed: u64,
    ) -> Result<Self> {
        if num_contexts < 1 || m < 1 {
            return Err(invalid("need at least one context and one reward"));
        }
        if num_actions < 2 {
            return Err(invalid("need at least two actions"));
        }
        if rewards.len() != num_contexts * num_actions * m {
            return Err(dim(format!(
                "reward tensor has {} entries, expected {}",
                rewards.len(),
                num_contexts * num_actions * m
            )));
        }
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(invalid("rewards must be finite"));
        }
        if context_dist.len() != num_contexts {
            return Err(dim("context distribution length"));
        }
        if context_dist.iter().any(|&p| !(p >= 0.0)) || (context_dist.iter().sum::<f64>() - 1.0).abs() > ROW_TOL {
            return Err(invalid(format!("context distribution is not a probability vector: {context_dist:?}")));
        }
        if reference.probs().rows() != num_contexts || reference.probs().cols() != num_actions {
            return Err(dim("reference policy shape"));
        }
        Ok(Self {
            num_contexts,
            num_actions,
            m,
            rewards,
            context_dist,
            feature_kind: FeatureKind::OneHot,
            features: one_hot(num_contexts),
            reference,
            seed,
        })
    }

    /// One context, three actions, rewards `R1 = (1, 0, 0.75)`,
    /// `R2 = (0, 1, 0.75)`, uniform reference. The middle trade-off is only
    /// reachable through the third action.
    pub fn counterexample() -> Self {
        let rewards = vec![1.0, 0.0, 0.0, 1.0, 0.75, 0.75];
        Self::new(1, 3, 2, rewards, vec![1.0], ReferencePolicy::uniform(1, 3), 0).expect("static instance")
    }

    /// Rewards i.i.d. uniform on `[0, 1]`, uniform contexts and reference.
    pub fn random(num_contexts: usize, num_actions: usize, m: usize, seed: u64) -> Result<Self> {
        let mut rng = rng::stream(seed, "env.rewards");
        let rewards = (0..num_contexts * num_actions * m).map(|_| rng.random::<f64>()).collect();
        Self::new(
            num_contexts,
            num_actions,
            m,
            rewards,
            vec![1.0 / num_contexts as f64; num_contexts],
            ReferencePolicy::uniform(num_contexts, num_actions),
            seed,
        )
    }

    /// Replaces one-hot features with dense Gaussian features.
    pub fn with_dense_features(mut self, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("feature dimension must be >= 1"));
        }
        let mut rng = rng::stream(seed, "env.features");
        let data = (0..self.num_contexts * dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        self.features = Matrix::from_vec(self.num_contexts, dim, data)?;
        self.feature_kind = FeatureKind::Dense { dim, seed };
        Ok(self)
    }

    pub fn with_reference(mut self, reference: ReferencePolicy) -> Result<Self> {
        if reference.probs().rows() != self.num_contexts || reference.probs().cols() != self.num_actions {
            return Err(dim("reference policy shape"));
        }
        self.reference = reference;
        Ok(self)
    }

    pub fn with_context_dist(mut self, context_dist: Vec<f64>) -> Result<Self> {
        Self::new(
            self.num_contexts,
            self.num_actions,
            self.m,
            std::mem::take(&mut self.rewards),
            context_dist,
            self.reference.clone(),
            self.seed,
        )
        .map(|mut e| {
            e.features = self.features;
            e.feature_kind = self.feature_kind;
            e
        })
    }

    pub fn num_contexts(&self) -> usize {
        self.num_contexts
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn context_dist(&self) -> &[f64] {
        &self.context_dist
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn feature_kind(&self) -> FeatureKind {
        self.feature_kind
    }

    pub fn reference(&self) -> &ReferencePolicy {
        &self.reference
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    #[inline]
    pub fn reward(&self, x: usize, a: usize, i: usize) -> f64 {
        self.rewards[(x * self.num_actions + a) * self.m + i]
    }

    #[inline]
    pub fn reward_vec(&self, x: usize, a: usize) -> &[f64] {
        let start = (x * self.num_actions + a) * self.m;
        &self.rewards[start..start + self.m]
    }

    /// Reward component `i` as a `[contexts, actions]` matrix.
    pub fn reward_component(&self, i: usize) -> Matrix {
        let mut out = Matrix::zeros(self.num_contexts, self.num_actions);
        for x in 0..self.num_contexts {
            for a in 0..self.num_actions {
                out.set(x, a, self.reward(x, a, i));
            }
        }
        out
    }

    /// `[x, a] -> sum_i w[i] R[x, a, i]`.
    pub fn scalarize(&self, w: &RewardWeights) -> Result<Matrix> {
        self.scalarize_raw(w.as_slice())
    }

    /// Scalarization with arbitrary (not necessarily simplex) coefficients.
    pub fn scalarize_raw(&self, w: &[f64]) -> Result<Matrix> {
        if w.len() != self.m {
            return Err(dim(format!("weights have length {}, env has m = {}", w.len(), self.m)));
        }
        let mut out = Matrix::zeros(self.num_contexts, self.num_actions);
        for x in 0..self.num_contexts {
            for a in 0..self.num_actions {
                let r = self.reward_vec(x, a).iter().zip(w).map(|(r, wi)| r * wi).sum();
                out.set(x, a, r);
            }
        }
        Ok(out)
    }

    pub fn sample_context<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_categorical(&self.context_dist, rng)
    }

    pub fn to_text(&self) -> String {
        let mut doc = TextDoc::new(ENV_MAGIC);
        doc.push_header("contexts", [self.num_contexts]);
        doc.push_header("actions", [self.num_actions]);
        doc.push_header("rewards", [self.m]);
        doc.push_header("seed", [self.seed]);
        match self.feature_kind {
            FeatureKind::OneHot => doc.push_header("features", ["onehot"]),
            FeatureKind::Dense { dim, seed } => {
                doc.push_header("features", ["dense".to_string(), dim.to_string(), seed.to_string()])
            }
        }
        let mut rewards = Section::new("rewards", vec![]);
        for x in 0..self.num_contexts {
            for a in 0..self.num_actions {
                rewards.rows.push(self.reward_vec(x, a).to_vec());
            }
        }
        let mut cd = Section::new("context_dist", vec![]);
        cd.rows.push(self.context_dist.clone());
        let mut reference = Section::new("reference", vec![]);
        for x in 0..self.num_contexts {
            reference.rows.push(self.reference.probs().row(x).to_vec());
        }
        doc.sections.extend([rewards, cd, reference]);
        if let FeatureKind::Dense { .. } = self.feature_kind {
            let mut f = Section::new("features", vec![]);
            for x in 0..self.num_contexts {
                f.rows.push(self.features.row(x).to_vec());
            }
            doc.sections.push(f);
        }
        doc.render()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let doc = TextDoc::parse(text, ENV_MAGIC)?;
        let nc: usize = doc.header_value("contexts")?;
        let na: usize = doc.header_value("actions")?;
        let m: usize = doc.header_value("rewards")?;
        let seed: u64 = doc.header_value("seed")?;
        let reference = Matrix::from_vec(nc, na, doc.section("reference")?.flat())?;
        let mut env = Self::new(
            nc,
            na,
            m,
            doc.section("rewards")?.flat(),
            doc.section("context_dist")?.flat(),
            ReferencePolicy::new(reference)?,
            seed,
        )?;
        let kind = doc.header_values("features")?;
        match kind.first().map(String::as_str) {
            Some("onehot") | None => {}
            Some("dense") => {
                let d: usize = kind.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| parse_err(0, "dense dim"))?;
                let fseed: u64 =
                    kind.get(2).and_then(|s| s.parse().ok()).ok_or_else(|| parse_err(0, "dense seed"))?;
                env.features = Matrix::from_vec(nc, d, doc.section("features")?.flat())?;
                env.feature_kind = FeatureKind::Dense { dim: d, seed: fseed };
            }
            Some(other) => return Err(parse_err(0, format!("unknown feature kind `{other}`"))),
        }
        Ok(env)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

fn one_hot(n: usize) -> Matrix {
    let mut f = Matrix::zeros(n, n);
    for i in 0..n {
        f.set(i, i, 1.0);
    }
    f
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the running sum; take the last supported entry
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}
