//! KL and reward weightings, the KL mixing map, and the weighting sampler.

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{invalid, Result};
use crate::rng::{self, LabRng};

/// Entries below this are clamped to zero when sampling.
const CLAMP_FLOOR: f64 = 1e-15;
const SIMPLEX_TOL: f64 = 1e-12;

/// Reward weights on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardWeights(Vec<f64>);

impl RewardWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(invalid("reward weights must be non-empty"));
        }
        if w.iter().any(|&x| !x.is_finite() || x < 0.0) {
            return Err(invalid(format!("reward weights must be finite and >= 0, got {w:?}")));
        }
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(invalid(format!("reward weights sum to {total}, expected 1")));
        }
        Ok(Self(w))
    }

    /// Clamps tiny entries to zero and renormalizes onto the simplex.
    pub fn normalized(mut w: Vec<f64>) -> Result<Self> {
        if w.iter().any(|&x| !x.is_finite() || x < 0.0) {
            return Err(invalid(format!("cannot normalize {w:?}")));
        }
        for x in w.iter_mut() {
            if *x < CLAMP_FLOOR {
                *x = 0.0;
            }
        }
        let total: f64 = w.iter().sum();
        if total <= 0.0 {
            return Err(invalid("cannot normalize an all-zero weight vector"));
        }
        w.iter_mut().for_each(|x| *x /= total);
        Ok(Self(w))
    }

    pub fn basis(m: usize, i: usize) -> Self {
        let mut w = vec![0.0; m];
        w[i] = 1.0;
        Self(w)
    }

    pub fn uniform(m: usize) -> Self {
        Self(vec![1.0 / m as f64; m])
    }

    /// Two-reward weights `(1 - lambda, lambda)`.
    pub fn pair(lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(invalid(format!("lambda {lambda} outside [0, 1]")));
        }
        Ok(Self(vec![1.0 - lambda, lambda]))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// KL weight `alpha` in `[alpha_min, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KLWeight {
    alpha: f64,
    alpha_min: f64,
}

impl KLWeight {
    pub fn new(alpha: f64, alpha_min: f64) -> Result<Self> {
        if !(alpha_min > 0.0 && alpha_min < 1.0) {
            return Err(invalid(format!("alpha_min must lie in (0, 1), got {alpha_min}")));
        }
        if !(alpha >= alpha_min && alpha <= 1.0) {
            return Err(invalid(format!("alpha {alpha} outside [{alpha_min}, 1]")));
        }
        Ok(Self { alpha, alpha_min })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn alpha_min(&self) -> f64 {
        self.alpha_min
    }

    /// Parameter/logit mixing coefficient toward the reference.
    pub fn mix(&self) -> f64 {
        f_mix(*self)
    }
}

/// `beta = (alpha - alpha_min) / (alpha (1 - alpha_min))`.
///
/// Maps `alpha_min` to 0 and 1 to 1; the logits of the optimal policy at
/// `alpha` are `(1 - beta)` times those at `alpha_min` plus `beta` times the
/// reference logits.
pub fn f_mix(alpha: KLWeight) -> f64 {
    let (a, a_min) = (alpha.alpha, alpha.alpha_min);
    let beta = (a - a_min) / (a * (1.0 - a_min));
    beta.clamp(0.0, 1.0)
}

/// Unchecked form for callers holding raw numbers.
pub fn f_mix_raw(alpha: f64, alpha_min: f64) -> Result<f64> {
    Ok(f_mix(KLWeight::new(alpha, alpha_min)?))
}

/// Inverse of [`f_mix`]: `alpha = alpha_min / (alpha_min u + 1 - u)`.
pub fn inv_f_mix(u: f64, alpha_min: f64) -> Result<KLWeight> {
    if !(0.0..=1.0).contains(&u) {
        return Err(invalid(format!("u = {u} outside [0, 1]")));
    }
    if !(alpha_min > 0.0 && alpha_min < 1.0) {
        return Err(invalid(format!("alpha_min must lie in (0, 1), got {alpha_min}")));
    }
    let alpha = (alpha_min / (alpha_min * u + (1.0 - u))).clamp(alpha_min, 1.0);
    KLWeight::new(alpha, alpha_min)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaMode {
    Fixed(f64),
    /// `alpha = inv_f_mix(U)`, `U ~ Uniform[0, 1]`, so `f_mix(alpha)` is uniform.
    InverseCdf,
}

/// Distribution over `(alpha, w)`: Dirichlet reward weights and either a fixed
/// or an inverse-CDF KL weight.
#[derive(Debug, Clone)]
pub struct WeightingSampler {
    dirichlet: Vec<f64>,
    alpha_min: f64,
    alpha_mode: AlphaMode,
    seed: u64,
    pinned_w: Option<RewardWeights>,
}

impl WeightingSampler {
    pub fn new(dirichlet: Vec<f64>, alpha_min: f64, alpha_mode: AlphaMode, seed: u64) -> Result<Self> {
        if dirichlet.is_empty() {
            return Err(invalid("dirichlet parameters must be non-empty"));
        }
        if dirichlet.iter().any(|&b| !(b > 0.0 && b.is_finite())) {
            return Err(invalid(format!("dirichlet parameters must be > 0, got {dirichlet:?}")));
        }
        if let AlphaMode::Fixed(a) = alpha_mode {
            KLWeight::new(a, alpha_min)?;
        } else {
            KLWeight::new(1.0, alpha_min)?;
        }
        Ok(Self { dirichlet, alpha_min, alpha_mode, seed, pinned_w: None })
    }

    /// Uniform Dirichlet over `m` rewards.
    pub fn uniform(m: usize, alpha_min: f64, alpha_mode: AlphaMode, seed: u64) -> Result<Self> {
        Self::new(vec![1.0; m], alpha_min, alpha_mode, seed)
    }

    /// Always returns `w` instead of a Dirichlet draw.
    pub fn with_pinned_w(mut self, w: RewardWeights) -> Result<Self> {
        if w.len() != self.m() {
            return Err(invalid(format!("pinned w has {} entries, sampler has m = {}", w.len(), self.m())));
        }
        self.pinned_w = Some(w);
        Ok(self)
    }

    pub fn pinned_w(&self) -> Option<&RewardWeights> {
        self.pinned_w.as_ref()
    }

    pub fn m(&self) -> usize {
        self.dirichlet.len()
    }

    pub fn dirichlet(&self) -> &[f64] {
        &self.dirichlet
    }

    pub fn alpha_min(&self) -> f64 {
        self.alpha_min
    }

    pub fn alpha_mode(&self) -> AlphaMode {
        self.alpha_mode
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Fresh generator for this sampler's seed.
    pub fn rng(&self) -> LabRng {
        rng::from_seed(self.seed)
    }

    pub fn sample_alpha<R: Rng + ?Sized>(&self, rng: &mut R) -> KLWeight {
        match self.alpha_mode {
            AlphaMode::Fixed(a) => KLWeight { alpha: a, alpha_min: self.alpha_min },
            AlphaMode::InverseCdf => {
                let u: f64 = rng.random();
                inv_f_mix(u, self.alpha_min).expect("u in [0, 1) and alpha_min validated")
            }
        }
    }

    pub fn sample_w<R: Rng + ?Sized>(&self, rng: &mut R) -> RewardWeights {
        if let Some(w) = &self.pinned_w {
            return w.clone();
        }
        let draws: Vec<f64> = self
            .dirichlet
            .iter()
            .map(|&b| Gamma::new(b, 1.0).expect("validated shape").sample(rng))
            .collect();
        match RewardWeights::normalized(draws) {
            Ok(w) => w,
            // every gamma draw underflowed; only possible for tiny shapes
            Err(_) => RewardWeights::basis(self.m(), rng.random_range(0..self.m())),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (KLWeight, RewardWeights) {
        let w = self.sample_w(rng);
        let alpha = self.sample_alpha(rng);
        (alpha, w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn f_mix_endpoints_and_hand_value() {
        assert_eq!(f_mix(KLWeight::new(1.0, 0.01).unwrap()), 1.0);
        assert_eq!(f_mix(KLWeight::new(0.01, 0.01).unwrap()), 0.0);
        let b = f_mix(KLWeight::new(0.02, 0.01).unwrap());
        assert!((b - 0.01 / (0.02 * 0.99)).abs() < 1e-15);
        assert!((b - 0.505_050_505_050_505).abs() < 1e-12);
    }

    #[test]
    fn degenerate_alpha_min_is_rejected() {
        assert!(KLWeight::new(1.0, 1.0).is_err());
        assert!(f_mix_raw(1.0, 1.5).is_err());
        assert!(KLWeight::new(0.005, 0.01).is_err());
        assert!(inv_f_mix(1.2, 0.01).is_err());
    }

    #[test]
    fn inv_f_mix_endpoints_and_median() {
        assert_eq!(inv_f_mix(0.0, 0.01).unwrap().alpha(), 0.01);
        assert_eq!(inv_f_mix(1.0, 0.01).unwrap().alpha(), 1.0);
        let med = inv_f_mix(0.5, 0.01).unwrap().alpha();
        assert!((med - 2.0 * 0.01 / 1.01).abs() < 1e-15);
        assert!((med - 0.019_802).abs() < 1e-6);
    }

    #[test]
    fn normalized_clamps_tiny_entries() {
        let w = RewardWeights::normalized(vec![1e-16, 0.5, 0.5]).unwrap();
        assert_eq!(w.as_slice()[0], 0.0);
        assert!((w.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(RewardWeights::new(vec![0.6, 0.6]).is_err());
        assert!(RewardWeights::new(vec![-0.1, 1.1]).is_err());
    }

    #[test]
    fn sampler_rejects_bad_params() {
        assert!(WeightingSampler::new(vec![1.0, 0.0], 0.01, AlphaMode::InverseCdf, 0).is_err());
        assert!(WeightingSampler::new(vec![1.0], 0.01, AlphaMode::Fixed(0.001), 0).is_err());
    }

    #[test]
    fn dirichlet_mean_and_determinism() {
        let s = WeightingSampler::uniform(2, 0.01, AlphaMode::InverseCdf, 11).unwrap();
        let mut rng = s.rng();
        let n = 100_000;
        let mean = (0..n).map(|_| s.sample(&mut rng).1.as_slice()[0]).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");

        let (mut a, mut b) = (s.rng(), s.rng());
        for _ in 0..100 {
            assert_eq!(s.sample(&mut a), s.sample(&mut b));
        }
    }

    #[test]
    fn inverse_cdf_makes_mix_uniform() {
        let s = WeightingSampler::uniform(2, 0.01, AlphaMode::InverseCdf, 3).unwrap();
        let mut rng = s.rng();
        let n = 100_000;
        let mut betas: Vec<f64> = (0..n).map(|_| s.sample(&mut rng).0.mix()).collect();
        betas.sort_by(f64::total_cmp);
        let ks = betas
            .iter()
            .enumerate()
            .map(|(i, &b)| ((i + 1) as f64 / n as f64 - b).abs().max((b - i as f64 / n as f64).abs()))
            .fold(0.0, f64::max);
        assert!(ks < 0.01, "KS statistic {ks}");
    }

    proptest! {
        #[test]
        fn round_trip(u in 0.0f64..=1.0, a_min in 0.001f64..0.9) {
            let a = inv_f_mix(u, a_min).unwrap();
            prop_assert!((f_mix(a) - u).abs() <= 1e-12);
        }

        #[test]
        fn f_mix_strictly_increasing(a_min in 0.001f64..0.5, x in 0.0f64..1.0, y in 0.0f64..1.0) {
            prop_assume!((x - y).abs() > 1e-9);
            let lo = a_min + (1.0 - a_min) * x.min(y);
            let hi = a_min + (1.0 - a_min) * x.max(y);
            prop_assert!(f_mix(KLWeight::new(lo, a_min).unwrap()) < f_mix(KLWeight::new(hi, a_min).unwrap()));
        }

        #[test]
        fn samples_on_simplex(seed in 0u64..1000, b0 in 0.05f64..5.0, b1 in 0.05f64..5.0, b2 in 0.05f64..5.0) {
            let s = WeightingSampler::new(vec![b0, b1, b2], 0.01, AlphaMode::InverseCdf, seed).unwrap();
            let mut rng = s.rng();
            for _ in 0..20 {
                let (a, w) = s.sample(&mut rng);
                prop_assert!(w.as_slice().iter().all(|&x| x >= 0.0));
                prop_assert!((w.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                prop_assert!(a.alpha() >= 0.01 && a.alpha() <= 1.0);
            }
        }
    }
}
