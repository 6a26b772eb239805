//! Softmax policies over flat, named-segment parameter vectors.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::env::{sample_categorical, BanditEnv, ReferencePolicy};
use crate::error::{dim, invalid, Error, Result};
use crate::math::{self, Matrix};
use crate::rng;
use crate::textfmt::{parse_err, Section, TextDoc};

/// Named contiguous slice of a [`ParameterVector`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Flat parameter array partitioned into named segments that tile it exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    values: Vec<f64>,
    segments: Vec<Segment>,
}

impl ParameterVector {
    pub fn new(values: Vec<f64>, segments: Vec<Segment>) -> Result<Self> {
        let mut cursor = 0;
        for s in &segments {
            if s.offset != cursor {
                return Err(Error::Layout(format!("segment `{}` does not start at {cursor}", s.name)));
            }
            cursor += s.len;
        }
        if cursor != values.len() {
            return Err(Error::Layout(format!("segments cover {cursor} of {} values", values.len())));
        }
        for (i, s) in segments.iter().enumerate() {
            if segments[..i].iter().any(|o| o.name == s.name) {
                return Err(Error::Layout(format!("duplicate segment `{}`", s.name)));
            }
        }
        if let Some(s) = segments.iter().find(|s| values[s.offset..s.offset + s.len].iter().any(|v| !v.is_finite())) {
            return Err(Error::Layout(format!("non-finite value in segment `{}`", s.name)));
        }
        Ok(Self { values, segments })
    }

    /// Zero vector with the given `(name, len)` layout.
    pub fn zeros(layout: &[(&str, usize)]) -> Self {
        let mut segments = Vec::with_capacity(layout.len());
        let mut offset = 0;
        for &(name, len) in layout {
            segments.push(Segment { name: name.to_string(), offset, len });
            offset += len;
        }
        Self { values: vec![0.0; offset], segments }
    }

    pub fn zeros_like(&self) -> Self {
        Self { values: vec![0.0; self.values.len()], segments: self.segments.clone() }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment_names(&self) -> impl Iterator<Item = &str> {
        self.segments.iter().map(|s| s.name.as_str())
    }

    fn find(&self, name: &str) -> Result<&Segment> {
        self.segments
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::Layout(format!("no segment `{name}`")))
    }

    pub fn segment(&self, name: &str) -> Result<&[f64]> {
        let s = self.find(name)?;
        Ok(&self.values[s.offset..s.offset + s.len])
    }

    pub fn segment_mut(&mut self, name: &str) -> Result<&mut [f64]> {
        let s = self.find(name)?.clone();
        Ok(&mut self.values[s.offset..s.offset + s.len])
    }

    /// Same segment names and lengths in the same order.
    pub fn same_layout(&self, other: &ParameterVector) -> bool {
        self.segments == other.segments
    }

    /// Sub-vector holding only the named segments, re-laid out contiguously.
    pub fn restrict(&self, names: &[&str]) -> Result<ParameterVector> {
        let mut values = Vec::new();
        let mut segments = Vec::new();
        for &n in names {
            let seg = self.segment(n)?;
            segments.push(Segment { name: n.to_string(), offset: values.len(), len: seg.len() });
            values.extend_from_slice(seg);
        }
        Ok(ParameterVector { values, segments })
    }

    /// Copies every segment of `part` into the same-named segment of `self`.
    pub fn overwrite(&mut self, part: &ParameterVector) -> Result<()> {
        for s in &part.segments {
            let dst = self.segment_mut(&s.name)?;
            if dst.len() != s.len {
                return Err(Error::Layout(format!("segment `{}` length {} vs {}", s.name, dst.len(), s.len)));
            }
            dst.copy_from_slice(&part.values[s.offset..s.offset + s.len]);
        }
        Ok(())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &ParameterVector, scale: f64) -> Result<()> {
        if !self.same_layout(other) {
            return Err(Error::Layout("add_scaled on different layouts".into()));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    pub fn norm(&self) -> f64 {
        math::l2_norm(&self.values)
    }

    /// Name of the first segment containing a non-finite value.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.segments
            .iter()
            .find(|s| self.values[s.offset..s.offset + s.len].iter().any(|v| !v.is_finite()))
            .map(|s| s.name.as_str())
    }

    pub(crate) fn to_sections(&self, prefix: &str) -> Vec<Section> {
        self.segments
            .iter()
            .map(|s| {
                let mut sec = Section::new("segment", vec![prefix.to_string(), s.name.clone(), s.len.to_string()]);
                if s.len > 0 {
                    sec.rows.push(self.values[s.offset..s.offset + s.len].to_vec());
                }
                sec
            })
            .collect()
    }

    pub(crate) fn from_sections(doc: &TextDoc, prefix: &str) -> Result<ParameterVector> {
        let mut values = Vec::new();
        let mut segments = Vec::new();
        for sec in doc.sections_named("segment").filter(|s| s.args.first().map(String::as_str) == Some(prefix)) {
            let name = sec.args.get(1).ok_or_else(|| parse_err(0, "segment without name"))?;
            let len: usize = sec
                .args
                .get(2)
                .and_then(|l| l.parse().ok())
                .ok_or_else(|| parse_err(0, format!("segment `{name}` without length")))?;
            let data = sec.flat();
            if data.len() != len {
                return Err(parse_err(0, format!("segment `{name}` declares {len} values, has {}", data.len())));
            }
            segments.push(Segment { name: name.clone(), offset: values.len(), len });
            values.extend(data);
        }
        ParameterVector::new(values, segments)
    }
}

/// Which parameter subset is replicated per reward and mixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PartitionScheme {
    /// Every parameter.
    Full,
    /// The hidden layer `{w1, b1}` of an `mlp2`.
    Mid,
    /// The output layer: `{w2, b2}` for `mlp2`, the table for tabular.
    Logit,
}

impl PartitionScheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            PartitionScheme::Full => "full",
            PartitionScheme::Mid => "mid",
            PartitionScheme::Logit => "logit",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "mid" | "attn" => Ok(Self::Mid),
            "logit" => Ok(Self::Logit),
            other => Err(invalid(format!("unknown partition scheme `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchKind {
    /// One logit per `(context, action)`; ignores features.
    Tabular { num_contexts: usize, num_actions: usize },
    /// `z = W2 tanh(W1 f + b1) + b2`.
    Mlp2 { feature_dim: usize, hidden_dim: usize, num_actions: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolicyArchitecture {
    pub kind: ArchKind,
    pub scheme: PartitionScheme,
}

impl fmt::Display for PolicyArchitecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ArchKind::Tabular { num_contexts, num_actions } => {
                write!(f, "tabular {num_contexts} {num_actions} {}", self.scheme.as_str())
            }
            ArchKind::Mlp2 { feature_dim, hidden_dim, num_actions } => {
                write!(f, "mlp2 {feature_dim} {hidden_dim} {num_actions} {}", self.scheme.as_str())
            }
        }
    }
}

impl PolicyArchitecture {
    pub fn tabular(num_contexts: usize, num_actions: usize, scheme: PartitionScheme) -> Result<Self> {
        let arch = Self { kind: ArchKind::Tabular { num_contexts, num_actions }, scheme };
        arch.validate()?;
        Ok(arch)
    }

    pub fn mlp2(feature_dim: usize, hidden_dim: usize, num_actions: usize, scheme: PartitionScheme) -> Result<Self> {
        let arch = Self { kind: ArchKind::Mlp2 { feature_dim, hidden_dim, num_actions }, scheme };
        arch.validate()?;
        Ok(arch)
    }

    fn validate(&self) -> Result<()> {
        match self.kind {
            ArchKind::Tabular { num_contexts, num_actions } => {
                if num_contexts == 0 || num_actions < 2 {
                    return Err(invalid("tabular needs >= 1 context and >= 2 actions"));
                }
                if self.scheme == PartitionScheme::Mid {
                    return Err(invalid("tabular policies have no hidden layer; use `full` or `logit`"));
                }
            }
            ArchKind::Mlp2 { feature_dim, hidden_dim, num_actions } => {
                if feature_dim == 0 || hidden_dim == 0 || num_actions < 2 {
                    return Err(invalid("mlp2 needs positive feature/hidden dims and >= 2 actions"));
                }
            }
        }
        Ok(())
    }

    pub fn num_actions(&self) -> usize {
        match self.kind {
            ArchKind::Tabular { num_actions, .. } | ArchKind::Mlp2 { num_actions, .. } => num_actions,
        }
    }

    /// Input feature width for `mlp2`; `None` for tabular.
    pub fn feature_dim(&self) -> Option<usize> {
        match self.kind {
            ArchKind::Tabular { .. } => None,
            ArchKind::Mlp2 { feature_dim, .. } => Some(feature_dim),
        }
    }

    pub fn layout(&self) -> Vec<(&'static str, usize)> {
        match self.kind {
            ArchKind::Tabular { num_contexts, num_actions } => vec![("table", num_contexts * num_actions)],
            ArchKind::Mlp2 { feature_dim: d, hidden_dim: h, num_actions: a } => {
                vec![("w1", h * d), ("b1", h), ("w2", a * h), ("b2", a)]
            }
        }
    }

    /// Segment names forming the conditioned subset.
    pub fn conditioned_names(&self) -> Vec<&'static str> {
        match (self.kind, self.scheme) {
            (ArchKind::Tabular { .. }, _) => vec!["table"],
            (ArchKind::Mlp2 { .. }, PartitionScheme::Full) => vec!["w1", "b1", "w2", "b2"],
            (ArchKind::Mlp2 { .. }, PartitionScheme::Mid) => vec!["w1", "b1"],
            (ArchKind::Mlp2 { .. }, PartitionScheme::Logit) => vec!["w2", "b2"],
        }
    }

    /// Complement of [`Self::conditioned_names`].
    pub fn unconditioned_names(&self) -> Vec<&'static str> {
        let cond = self.conditioned_names();
        self.layout().into_iter().map(|(n, _)| n).filter(|n| !cond.contains(n)).collect()
    }

    pub fn zeros(&self) -> ParameterVector {
        ParameterVector::zeros(&self.layout())
    }

    pub fn check(&self, theta: &ParameterVector) -> Result<()> {
        let expect = self.zeros();
        if !theta.same_layout(&expect) {
            return Err(Error::Layout(format!("parameters do not match architecture `{self}`")));
        }
        Ok(())
    }

    fn check_features(&self, features: &Matrix) -> Result<()> {
        if let Some(d) = self.feature_dim() {
            if features.cols() != d {
                return Err(dim(format!("features have width {}, architecture expects {d}", features.cols())));
            }
        }
        Ok(())
    }

    /// Logits for context `x` (row `x` of `features`).
    pub fn logits_row(&self, theta: &ParameterVector, features: &Matrix, x: usize) -> Vec<f64> {
        self.forward(theta, features, x).0
    }

    /// Returns the logits and (for `mlp2`) the hidden activations.
    fn forward(&self, theta: &ParameterVector, features: &Matrix, x: usize) -> (Vec<f64>, Vec<f64>) {
        match self.kind {
            ArchKind::Tabular { num_actions, .. } => {
                let table = &theta.values()[..];
                (table[x * num_actions..(x + 1) * num_actions].to_vec(), Vec::new())
            }
            ArchKind::Mlp2 { feature_dim: d, hidden_dim: h, num_actions: a } => {
                let v = theta.values();
                let (w1, rest) = v.split_at(h * d);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(a * h);
                let f = features.row(x);
                let hidden: Vec<f64> = (0..h).map(|j| (math::dot(&w1[j * d..(j + 1) * d], f) + b1[j]).tanh()).collect();
                let z = (0..a).map(|k| math::dot(&w2[k * h..(k + 1) * h], &hidden) + b2[k]).collect();
                (z, hidden)
            }
        }
    }

    pub fn logits(&self, theta: &ParameterVector, features: &Matrix) -> Result<Logits> {
        self.check(theta)?;
        self.check_features(features)?;
        let rows = match self.kind {
            ArchKind::Tabular { num_contexts, .. } => {
                if features.rows() != num_contexts {
                    return Err(dim("tabular policy context count differs from environment"));
                }
                num_contexts
            }
            ArchKind::Mlp2 { .. } => features.rows(),
        };
        let a = self.num_actions();
        let mut z = Matrix::zeros(rows, a);
        for x in 0..rows {
            z.row_mut(x).copy_from_slice(&self.logits_row(theta, features, x));
        }
        Ok(Logits(z))
    }

    /// Accumulates `scale * d(sum_a dz[a] z[x, a]) / d theta` into `out`.
    pub fn backprop_into(
        &self,
        theta: &ParameterVector,
        features: &Matrix,
        x: usize,
        dz: &[f64],
        scale: f64,
        out: &mut ParameterVector,
    ) {
        match self.kind {
            ArchKind::Tabular { num_actions, .. } => {
                let g = &mut out.values_mut()[x * num_actions..(x + 1) * num_actions];
                for (gi, d) in g.iter_mut().zip(dz) {
                    *gi += scale * d;
                }
            }
            ArchKind::Mlp2 { feature_dim: d, hidden_dim: h, num_actions: a } => {
                let (_, hidden) = self.forward(theta, features, x);
                let w2 = &theta.values()[h * d + h..h * d + h + a * h];
                let mut dpre = vec![0.0; h];
                for j in 0..h {
                    let dh: f64 = (0..a).map(|k| dz[k] * w2[k * h + j]).sum();
                    dpre[j] = dh * (1.0 - hidden[j] * hidden[j]);
                }
                let f = features.row(x);
                let g = out.values_mut();
                let (gw1, rest) = g.split_at_mut(h * d);
                let (gb1, rest) = rest.split_at_mut(h);
                let (gw2, gb2) = rest.split_at_mut(a * h);
                for j in 0..h {
                    let s = scale * dpre[j];
                    for k in 0..d {
                        gw1[j * d + k] += s * f[k];
                    }
                    gb1[j] += s;
                }
                for k in 0..a {
                    let s = scale * dz[k];
                    for j in 0..h {
                        gw2[k * h + j] += s * hidden[j];
                    }
                    gb2[k] += s;
                }
            }
        }
    }

    /// Exact `grad_theta log pi(a | x)`.
    pub fn grad_log_prob(&self, theta: &ParameterVector, features: &Matrix, x: usize, a: usize) -> Result<ParameterVector> {
        self.check(theta)?;
        self.check_features(features)?;
        let probs = math::softmax(&self.logits_row(theta, features, x));
        let dz: Vec<f64> = probs.iter().enumerate().map(|(k, p)| f64::from(k == a) - p).collect();
        let mut g = theta.zeros_like();
        self.backprop_into(theta, features, x, &dz, 1.0, &mut g);
        Ok(g)
    }

    /// Reference parameters and the matching reference policy for `env`.
    ///
    /// Tabular: `theta_ref = log pi_ref`, so the environment's reference is kept.
    /// `mlp2`: Gaussian init (std 0.1) frozen as the reference; the returned
    /// environment carries the induced reference policy.
    pub fn init_reference(&self, env: &BanditEnv, seed: u64) -> Result<(ParameterVector, BanditEnv)> {
        match self.kind {
            ArchKind::Tabular { num_contexts, num_actions } => {
                if num_contexts != env.num_contexts() || num_actions != env.num_actions() {
                    return Err(dim("tabular architecture does not match environment"));
                }
                let theta = ParameterVector::new(
                    env.reference().log_probs().as_slice().to_vec(),
                    self.zeros().segments().to_vec(),
                )?;
                Ok((theta, env.clone()))
            }
            ArchKind::Mlp2 { num_actions, .. } => {
                if num_actions != env.num_actions() {
                    return Err(dim("mlp2 action count does not match environment"));
                }
                let mut theta = self.zeros();
                let mut rng = rng::stream(seed, "policy.init");
                let normal = Normal::new(0.0, 0.1).expect("valid std");
                theta.values_mut().iter_mut().for_each(|v| *v = normal.sample(&mut rng));
                // the reference is the policy induced by theta_ref; prompt inputs
                // beyond the environment's features are held at zero
                let base = env.features();
                let d = self.feature_dim().unwrap_or(base.cols());
                if d < base.cols() {
                    return Err(dim("mlp2 feature dimension smaller than environment features"));
                }
                let mut feats = Matrix::zeros(base.rows(), d);
                for x in 0..base.rows() {
                    feats.row_mut(x)[..base.cols()].copy_from_slice(base.row(x));
                }
                let probs = self.logits(&theta, &feats)?.to_policy().probs().clone();
                let env = env.clone().with_reference(ReferencePolicy::new(probs)?)?;
                Ok((theta, env))
            }
        }
    }

    pub(crate) fn parse(tokens: &[String]) -> Result<Self> {
        let num = |i: usize| -> Result<usize> {
            tokens.get(i).and_then(|t| t.parse().ok()).ok_or_else(|| parse_err(0, "bad architecture descriptor"))
        };
        match tokens.first().map(String::as_str) {
            Some("tabular") => Self::tabular(num(1)?, num(2)?, PartitionScheme::parse(tokens.get(3).map_or("", |s| s))?),
            Some("mlp2") => {
                Self::mlp2(num(1)?, num(2)?, num(3)?, PartitionScheme::parse(tokens.get(4).map_or("", |s| s))?)
            }
            _ => Err(parse_err(0, "unknown architecture")),
        }
    }
}

/// Logit table `[contexts, actions]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits(pub Matrix);

impl Logits {
    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn to_policy(&self) -> Policy {
        Policy::from_logits(self)
    }
}

/// Concrete softmax policy table.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    probs: Matrix,
    log_probs: Matrix,
}

impl Policy {
    pub fn from_logits(z: &Logits) -> Self {
        Self { probs: math::softmax_rows(&z.0), log_probs: math::log_softmax_rows(&z.0) }
    }

    /// From a probability table; rows must already be normalized.
    pub fn from_probs(probs: Matrix) -> Result<Self> {
        for r in 0..probs.rows() {
            let total: f64 = probs.row(r).iter().sum();
            if (total - 1.0).abs() > 1e-9 || probs.row(r).iter().any(|&p| p < 0.0) {
                return Err(invalid(format!("row {r} is not a distribution")));
            }
        }
        let log_probs = probs.map(f64::ln);
        Ok(Self { probs, log_probs })
    }

    pub fn probs(&self) -> &Matrix {
        &self.probs
    }

    pub fn log_probs(&self) -> &Matrix {
        &self.log_probs
    }

    pub fn num_contexts(&self) -> usize {
        self.probs.rows()
    }

    pub fn num_actions(&self) -> usize {
        self.probs.cols()
    }

    pub fn log_prob(&self, x: usize, a: usize) -> f64 {
        self.log_probs.get(x, a)
    }

    pub fn sample<R: Rng + ?Sized>(&self, x: usize, rng: &mut R) -> usize {
        sample_categorical(self.probs.row(x), rng)
    }

    /// `KL(pi(.|x) || pi_ref(.|x))` for one context.
    pub fn kl_row(&self, reference: &ReferencePolicy, x: usize) -> f64 {
        let (p, lp, lr) = (self.probs.row(x), self.log_probs.row(x), reference.log_probs().row(x));
        (0..p.len()).filter(|&a| p[a] > 0.0).map(|a| p[a] * (lp[a] - lr[a])).sum::<f64>().max(0.0)
    }

    /// Context-averaged KL to the reference, in nats.
    pub fn kl_to_ref(&self, reference: &ReferencePolicy, context_dist: &[f64]) -> f64 {
        context_dist.iter().enumerate().map(|(x, &mu)| mu * self.kl_row(reference, x)).sum()
    }
}

/// Writes a single parameter vector with its architecture.
pub fn theta_to_text(arch: &PolicyArchitecture, theta: &ParameterVector) -> String {
    let mut doc = TextDoc::new(crate::conditioning::CHECKPOINT_MAGIC);
    doc.push_header("kind", ["theta"]);
    doc.push_header("arch", arch.to_string().split_whitespace());
    doc.sections.extend(theta.to_sections("theta"));
    doc.render()
}

pub fn theta_from_text(text: &str) -> Result<(PolicyArchitecture, ParameterVector)> {
    let doc = TextDoc::parse(text, crate::conditioning::CHECKPOINT_MAGIC)?;
    let kind: String = doc.header_value("kind")?;
    if kind != "theta" {
        return Err(parse_err(0, format!("expected a theta checkpoint, found `{kind}`")));
    }
    let arch = PolicyArchitecture::parse(doc.header_values("arch")?)?;
    let theta = ParameterVector::from_sections(&doc, "theta")?;
    arch.check(&theta)?;
    Ok((arch, theta))
}
