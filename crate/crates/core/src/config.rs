//! Experiment configuration: TOML with `[env]`, `[policy]`, `[train]`,
//! `[sampler]`, `[eval]` and `[output]` sections.
//!
//! Any key can be overridden from the environment as
//! `CLP__<SECTION>__<KEY>=<toml value>` (top-level keys: `CLP__<KEY>`).
//! Values that do not parse as TOML are taken as strings.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::BanditEnv;
use crate::error::{Error, Result};
use crate::oracle;
use crate::policy::{PartitionScheme, PolicyArchitecture};
use crate::trainer::{OptimizerKind, TrainConfig};
use crate::weightings::{AlphaMode, KLWeight, RewardWeights, WeightingSampler};

/// Prefix for environment-variable overrides.
pub const ENV_PREFIX: &str = "CLP__";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ClpFull,
    ClpMid,
    ClpLogit,
    Prompting,
    RewardedSoups,
    Dera,
    Oracle,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::ClpFull,
        Method::ClpMid,
        Method::ClpLogit,
        Method::Prompting,
        Method::RewardedSoups,
        Method::Dera,
        Method::Oracle,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::ClpFull => "clp_full",
            Method::ClpMid => "clp_mid",
            Method::ClpLogit => "clp_logit",
            Method::Prompting => "prompting",
            Method::RewardedSoups => "rewarded_soups",
            Method::Dera => "dera",
            Method::Oracle => "oracle",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }

    /// Methods trained with the multi-task sampler.
    pub fn is_clp(&self) -> bool {
        matches!(self, Method::ClpFull | Method::ClpMid | Method::ClpLogit | Method::Prompting)
    }

    pub fn scheme(&self) -> PartitionScheme {
        match self {
            Method::ClpMid => PartitionScheme::Mid,
            Method::ClpLogit => PartitionScheme::Logit,
            _ => PartitionScheme::Full,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    /// `counterexample` or `random`; ignored when `path` is set.
    pub builtin: String,
    pub path: Option<PathBuf>,
    pub contexts: usize,
    pub actions: usize,
    pub m: usize,
    /// Dense random features of this width instead of one-hot.
    pub feature_dim: Option<usize>,
}

impl Default for EnvSection {
    fn default() -> Self {
        Self { builtin: "counterexample".into(), path: None, contexts: 3, actions: 4, m: 2, feature_dim: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySection {
    /// `tabular` or `mlp2`.
    pub arch: String,
    pub hidden: usize,
    pub prompt_repeats: usize,
}

impl Default for PolicySection {
    fn default() -> Self {
        Self { arch: "tabular".into(), hidden: 16, prompt_repeats: crate::conditioning::DEFAULT_PROMPT_REPEATS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub steps: usize,
    pub batch_size: usize,
    pub lr_policy: f64,
    pub lr_value: f64,
    pub advantage_norm_eps: f64,
    /// `sgd` or `adam`.
    pub optimizer: String,
    /// KL weight for single-objective training (experts, DeRa); defaults to `sampler.alpha_min`.
    pub alpha: Option<f64>,
    /// Reward weighting for DeRa.
    pub w: Option<Vec<f64>>,
    pub checkpoint_every: Option<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 32,
            lr_policy: 0.1,
            lr_value: 0.1,
            advantage_norm_eps: 1e-8,
            optimizer: "sgd".into(),
            alpha: None,
            w: None,
            checkpoint_every: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    pub dirichlet: Option<Vec<f64>>,
    pub alpha_min: f64,
    /// `inverse_cdf` or `fixed`.
    pub alpha_mode: String,
    pub alpha_fixed: Option<f64>,
    /// Use this reward weighting at every step instead of Dirichlet draws.
    pub pinned_w: Option<Vec<f64>>,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self { dirichlet: None, alpha_min: 0.01, alpha_mode: "inverse_cdf".into(), alpha_fixed: None, pinned_w: None }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// KL weights to sweep; defaults to `[alpha_min]`.
    pub alphas: Option<Vec<f64>>,
    /// Number of two-reward grid points; defaults to 21 (13 fixed points for m = 3).
    pub grid: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("runs/default") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub env: EnvSection,
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Sets `table[path...] = value`, creating sub-tables as needed.
fn set_path(table: &mut toml::Table, path: &[String], value: toml::Value) -> Result<()> {
    let (last, parents) = path.split_last().ok_or_else(|| cfg_err("empty override key"))?;
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| cfg_err(format!("override path crosses non-table key `{p}`")))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

fn parse_override_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl ExperimentConfig {
    /// Parses TOML text, applying `overrides` (`(name, value)` pairs) whose
    /// name starts with [`ENV_PREFIX`].
    pub fn from_toml_with_overrides(
        text: &str,
        overrides: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| cfg_err(e.to_string()))?;
        let mut pairs: Vec<(String, String)> =
            overrides.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        pairs.sort();
        for (k, v) in pairs {
            let path: Vec<String> = k[ENV_PREFIX.len()..].split("__").map(str::to_lowercase).collect();
            set_path(&mut table, &path, parse_override_value(&v))?;
        }
        let cfg: ExperimentConfig = table.try_into().map_err(|e: toml::de::Error| cfg_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, std::iter::empty())
    }

    /// Reads a config file and applies overrides from the process environment.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_with_overrides(&text, std::env::vars())
    }

    /// Resolved configuration, sufficient to reproduce a run.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| cfg_err(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.env.m;
        if m == 0 {
            return Err(cfg_err("env.m must be >= 1"));
        }
        if self.env.path.is_none() && !matches!(self.env.builtin.as_str(), "counterexample" | "random") {
            return Err(cfg_err(format!("env.builtin must be `counterexample` or `random`, got `{}`", self.env.builtin)));
        }
        if !matches!(self.policy.arch.as_str(), "tabular" | "mlp2") {
            return Err(cfg_err(format!("policy.arch must be `tabular` or `mlp2`, got `{}`", self.policy.arch)));
        }
        if !matches!(self.train.optimizer.as_str(), "sgd" | "adam") {
            return Err(cfg_err(format!("train.optimizer must be `sgd` or `adam`, got `{}`", self.train.optimizer)));
        }
        if !(self.sampler.alpha_min > 0.0 && self.sampler.alpha_min < 1.0) {
            return Err(cfg_err("sampler.alpha_min must lie in (0, 1)"));
        }
        if self.method.is_clp() {
            match &self.sampler.dirichlet {
                None => {
                    return Err(cfg_err(format!("missing key `sampler.dirichlet` (required by method {})", self.method)))
                }
                Some(d) if d.len() != m => {
                    return Err(cfg_err(format!("sampler.dirichlet has {} entries, env.m is {m}", d.len())))
                }
                _ => {}
            }
            match self.sampler.alpha_mode.as_str() {
                "inverse_cdf" => {}
                "fixed" if self.sampler.alpha_fixed.is_none() => {
                    return Err(cfg_err("missing key `sampler.alpha_fixed` (required by sampler.alpha_mode = fixed)"))
                }
                "fixed" => {}
                other => return Err(cfg_err(format!("sampler.alpha_mode must be `inverse_cdf` or `fixed`, got `{other}`"))),
            }
        }
        if self.method == Method::Prompting && self.policy.arch != "mlp2" {
            return Err(cfg_err("method prompting requires policy.arch = mlp2"));
        }
        if self.method == Method::ClpMid && self.policy.arch != "mlp2" {
            return Err(cfg_err("method clp_mid requires policy.arch = mlp2 (tabular has no middle layer)"));
        }
        if self.method == Method::Dera {
            if self.eval.alphas.is_none() {
                return Err(cfg_err("missing key `eval.alphas` (required by method dera)"));
            }
            if self.train.w.is_none() {
                return Err(cfg_err("missing key `train.w` (required by method dera)"));
            }
        }
        if let Some(w) = &self.train.w {
            RewardWeights::new(w.clone()).map_err(|e| cfg_err(format!("train.w: {e}")))?;
            if w.len() != m {
                return Err(cfg_err(format!("train.w has {} entries, env.m is {m}", w.len())));
            }
        }
        if let Some(alphas) = &self.eval.alphas {
            for &a in alphas {
                KLWeight::new(a, self.sampler.alpha_min).map_err(|e| cfg_err(format!("eval.alphas: {e}")))?;
            }
        }
        if self.method == Method::RewardedSoups && self.train.steps < m {
            return Err(cfg_err("train.steps must be >= env.m for rewarded_soups"));
        }
        self.train_config()?.validate().map_err(|e| cfg_err(e.to_string()))?;
        Ok(())
    }

    pub fn build_env(&self) -> Result<BanditEnv> {
        let env = if let Some(p) = &self.env.path {
            BanditEnv::load(p)?
        } else if self.env.builtin == "counterexample" {
            BanditEnv::counterexample()
        } else {
            BanditEnv::random(self.env.contexts, self.env.actions, self.env.m, crate::rng::split_seed(self.seed, "env"))?
        };
        if env.m() != self.env.m {
            return Err(cfg_err(format!("environment has m = {}, env.m is {}", env.m(), self.env.m)));
        }
        match self.env.feature_dim {
            Some(d) => env.with_dense_features(d, crate::rng::split_seed(self.seed, "env.features")),
            None => Ok(env),
        }
    }

    /// Architecture for `env`; prompt inputs are added for `prompting`.
    pub fn build_arch(&self, env: &BanditEnv) -> Result<PolicyArchitecture> {
        let scheme = self.method.scheme();
        match self.policy.arch.as_str() {
            "tabular" => PolicyArchitecture::tabular(env.num_contexts(), env.num_actions(), scheme),
            _ => {
                let extra = if self.method == Method::Prompting { self.policy.prompt_repeats * env.m() } else { 0 };
                PolicyArchitecture::mlp2(env.features().cols() + extra, self.policy.hidden, env.num_actions(), scheme)
            }
        }
    }

    pub fn sampler(&self) -> Result<WeightingSampler> {
        let m = self.env.m;
        let mode = match (self.sampler.alpha_mode.as_str(), self.sampler.alpha_fixed) {
            ("fixed", Some(a)) => AlphaMode::Fixed(a),
            ("fixed", None) => AlphaMode::Fixed(self.single_alpha()),
            _ => AlphaMode::InverseCdf,
        };
        let dirichlet = self.sampler.dirichlet.clone().unwrap_or_else(|| vec![1.0; m]);
        let sampler =
            WeightingSampler::new(dirichlet, self.sampler.alpha_min, mode, crate::rng::split_seed(self.seed, "sampler"))?;
        match &self.sampler.pinned_w {
            Some(w) => sampler.with_pinned_w(RewardWeights::new(w.clone()).map_err(|e| cfg_err(format!("sampler.pinned_w: {e}")))?),
            None => Ok(sampler),
        }
    }

    /// KL weight for single-objective training.
    pub fn single_alpha(&self) -> f64 {
        self.train.alpha.unwrap_or(self.sampler.alpha_min)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let optimizer = if self.train.optimizer == "adam" { OptimizerKind::adam() } else { OptimizerKind::Sgd };
        Ok(TrainConfig {
            batch_size: self.train.batch_size,
            steps: self.train.steps,
            lr_policy: self.train.lr_policy,
            lr_value: self.train.lr_value,
            sampler: self.sampler()?,
            advantage_norm_eps: self.train.advantage_norm_eps,
            seed: crate::rng::split_seed(self.seed, "train"),
            optimizer,
        })
    }

    pub fn alphas(&self) -> Result<Vec<KLWeight>> {
        let amin = self.sampler.alpha_min;
        match &self.eval.alphas {
            Some(a) => a.iter().map(|&x| KLWeight::new(x, amin)).collect(),
            None => Ok(vec![KLWeight::new(amin, amin)?]),
        }
    }

    pub fn w_grid(&self) -> Result<Vec<RewardWeights>> {
        match (self.eval.grid, self.env.m) {
            (Some(n), 2) => {
                if n < 2 {
                    return Err(cfg_err("eval.grid must be >= 2"));
                }
                Ok(oracle::pair_grid(n))
            }
            (_, m) => oracle::default_grid(m),
        }
    }
}
