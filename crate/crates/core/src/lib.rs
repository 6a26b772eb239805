//! Conditional multi-objective policy finetuning on finite bandits.
//!
//! The crate trains one parameter bundle that can be conditioned at inference
//! time on a KL weight `alpha` and a reward weighting `w` on the simplex, and
//! compares it against zero-shot baselines (parameter soups, logit
//! interpolation) using closed-form optimal policies as ground truth.
//!
//! Layout:
//! - [`weightings`]: `(alpha, w)` values, the KL mixing map and its sampler.
//! - [`env`]: finite multi-reward contextual bandits.
//! - [`policy`]: softmax policies over partitioned parameter vectors.
//! - [`conditioning`]: parameter mixing, logit mixing, soups, realignment.
//! - [`trainer`]: REINFORCE training of bundles and single experts.
//! - [`oracle`]: Gibbs-optimal policies, exact values, regret.
//! - [`theory`]: concentrability and the logit-mixing sub-optimality bound.
//! - [`evaluation`]: Pareto fronts, dominance, spread.
//! - [`config`], [`verify`], [`textfmt`]: orchestration and file formats.

pub mod conditioning;
pub mod config;
pub mod env;
pub mod error;
pub mod evaluation;
pub mod math;
pub mod oracle;
pub mod policy;
pub mod rng;
pub mod textfmt;
pub mod theory;
pub mod trainer;
pub mod verify;
pub mod weightings;

pub use error::{Error, Result};
