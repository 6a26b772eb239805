//! Weighting sweeps, Pareto fronts, dominance and spread.
//!
//! The spread score is a stand-in steerability measure: the length of the
//! front's polyline in raw-reward space divided by `1 + CV` of its segment
//! lengths, so wide, evenly spaced fronts score high and collapsed ones 0.

use std::fmt::Write as _;

use crate::conditioning::{logit_ensemble, rewarded_soups, dera_logits, ParameterBundle};
use crate::env::BanditEnv;
use crate::error::{dim, invalid, Error, Result};
use crate::oracle;
use crate::policy::{Logits, ParameterVector, Policy, PolicyArchitecture};
use crate::weightings::{KLWeight, RewardWeights};

/// Label attached to every emitted spread value.
pub const SPREAD_LABEL: &str = "spread (stand-in steerability score: path length / (1 + CV of segment lengths))";

/// Default dominance tolerance.
pub const DOMINANCE_TOL: f64 = 1e-6;

/// Exact evaluation of one policy at one weighting.
#[derive(Debug, Clone, PartialEq)]
pub struct ParetoPoint {
    pub alpha: f64,
    pub w: RewardWeights,
    /// `E_x E_a R_i`.
    pub raw_rewards: Vec<f64>,
    /// Context-averaged KL to the reference, nats.
    pub kl: f64,
    /// `(1 - alpha) raw_i - alpha kl`.
    pub regularized_values: Vec<f64>,
    /// `(1 - alpha) w^T raw - alpha kl`.
    pub scalarized_value: f64,
}

impl ParetoPoint {
    pub fn consistency_error(&self) -> f64 {
        let wr: f64 = self.w.as_slice().iter().zip(&self.raw_rewards).map(|(w, r)| w * r).sum();
        ((1.0 - self.alpha) * wr - self.alpha * self.kl - self.scalarized_value).abs()
    }
}

pub fn pareto_point(env: &BanditEnv, policy: &Policy, alpha: f64, w: &RewardWeights) -> Result<ParetoPoint> {
    if w.len() != env.m() {
        return Err(dim("weighting length differs from environment reward count"));
    }
    let m = env.m();
    let mut raw = vec![0.0; m];
    for (x, &mu) in env.context_dist().iter().enumerate() {
        for a in 0..env.num_actions() {
            let p = policy.probs().get(x, a);
            for (i, r) in raw.iter_mut().enumerate() {
                *r += mu * p * env.reward(x, a, i);
            }
        }
    }
    let kl = policy.kl_to_ref(env.reference(), env.context_dist());
    let regularized_values = raw.iter().map(|r| (1.0 - alpha) * r - alpha * kl).collect();
    let wr: f64 = w.as_slice().iter().zip(&raw).map(|(w, r)| w * r).sum();
    Ok(ParetoPoint {
        alpha,
        w: w.clone(),
        raw_rewards: raw,
        kl,
        regularized_values,
        scalarized_value: (1.0 - alpha) * wr - alpha * kl,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Front {
    pub method: String,
    pub points: Vec<ParetoPoint>,
}

fn point_order(a: &ParetoPoint, b: &ParetoPoint) -> std::cmp::Ordering {
    a.w.as_slice()
        .iter()
        .zip(b.w.as_slice())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
        .then(a.alpha.total_cmp(&b.alpha))
}

impl Front {
    /// Sorts points by `w` lexicographically, then by `alpha`.
    pub fn new(method: impl Into<String>, mut points: Vec<ParetoPoint>) -> Self {
        points.sort_by(point_order);
        Self { method: method.into(), points }
    }
}

/// Anything that yields a policy for a weighting.
pub trait PolicySource {
    fn name(&self) -> &str;
    fn policy(&self, env: &BanditEnv, alpha: KLWeight, w: &RewardWeights) -> Result<Policy>;
}

/// Closed-form optimum at every weighting.
pub struct OracleSource;

impl PolicySource for OracleSource {
    fn name(&self) -> &str {
        "oracle"
    }

    fn policy(&self, env: &BanditEnv, alpha: KLWeight, w: &RewardWeights) -> Result<Policy> {
        Ok(oracle::optimal_for_weights(env, alpha.alpha(), w)?.policy)
    }
}

/// A trained (or initial) CLP bundle.
pub struct BundleSource<'a> {
    pub name: String,
    pub bundle: &'a ParameterBundle,
}

impl PolicySource for BundleSource<'_> {
    fn name(&self) -> &str {
        &self.name
    }

    fn policy(&self, env: &BanditEnv, alpha: KLWeight, w: &RewardWeights) -> Result<Policy> {
        self.bundle.condition(alpha, w)?.policy(env)
    }
}

/// Parameter averaging of independently trained experts.
pub struct SoupsSource<'a> {
    pub arch: PolicyArchitecture,
    pub experts: &'a [ParameterVector],
    pub theta_ref: &'a ParameterVector,
}

impl PolicySource for SoupsSource<'_> {
    fn name(&self) -> &str {
        "rewarded_soups"
    }

    fn policy(&self, env: &BanditEnv, _alpha: KLWeight, w: &RewardWeights) -> Result<Policy> {
        rewarded_soups(&self.arch, self.experts, self.theta_ref, w)?.policy(env)
    }
}

/// Weighted ensemble of expert logits.
pub struct LogitMixSource {
    pub experts: Vec<Logits>,
}

impl PolicySource for LogitMixSource {
    fn name(&self) -> &str {
        "logit_mix"
    }

    fn policy(&self, _env: &BanditEnv, _alpha: KLWeight, w: &RewardWeights) -> Result<Policy> {
        Ok(logit_ensemble(&self.experts, w)?.to_policy())
    }
}

/// Realignment between the reference and a policy trained at `alpha_min`.
pub struct DeraSource<'a> {
    pub arch: PolicyArchitecture,
    pub theta_min: &'a ParameterVector,
    pub theta_ref: &'a ParameterVector,
}

impl PolicySource for DeraSource<'_> {
    fn name(&self) -> &str {
        "dera"
    }

    fn policy(&self, env: &BanditEnv, alpha: KLWeight, _w: &RewardWeights) -> Result<Policy> {
        Ok(dera_logits(&self.arch, self.theta_min, self.theta_ref, env.features(), alpha)?.to_policy())
    }
}

/// Evaluates `source` at every `(alpha, w)` in `alphas x w_grid`.
pub fn sweep(
    source: &dyn PolicySource,
    env: &BanditEnv,
    alphas: &[KLWeight],
    w_grid: &[RewardWeights],
) -> Result<Front> {
    if alphas.is_empty() || w_grid.is_empty() {
        return Err(invalid("sweep needs a non-empty grid"));
    }
    let mut points = Vec::with_capacity(alphas.len() * w_grid.len());
    for &alpha in alphas {
        for w in w_grid {
            let policy = source.policy(env, alpha, w)?;
            points.push(pareto_point(env, &policy, alpha.alpha(), w)?);
        }
    }
    Ok(Front::new(source.name(), points))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dominance {
    pub per_point: Vec<bool>,
    /// Fraction of weightings where `a >= b - tol`.
    pub fraction: f64,
}

/// Pointwise comparison of scalarized values on identical grids.
pub fn dominates(a: &Front, b: &Front, tol: f64) -> Result<Dominance> {
    if a.points.len() != b.points.len() {
        return Err(dim("fronts have different grid sizes"));
    }
    let mut per_point = Vec::with_capacity(a.points.len());
    for (pa, pb) in a.points.iter().zip(&b.points) {
        if pa.w != pb.w || pa.alpha != pb.alpha {
            return Err(dim("fronts were evaluated on different grids"));
        }
        per_point.push(pa.scalarized_value >= pb.scalarized_value - tol);
    }
    let fraction = per_point.iter().filter(|&&d| d).count() as f64 / per_point.len().max(1) as f64;
    Ok(Dominance { per_point, fraction })
}

fn polyline_spread(pts: &[Vec<f64>]) -> f64 {
    let seg: Vec<f64> = pts
        .windows(2)
        .map(|p| p[0].iter().zip(&p[1]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .collect();
    let total: f64 = seg.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    let mean = total / seg.len() as f64;
    let var = seg.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / seg.len() as f64;
    total / (1.0 + var.sqrt() / mean)
}

/// Spread of the front in raw-reward space. For `m > 2` the score is the mean
/// over all pairwise two-reward projections.
pub fn spread(front: &Front) -> Result<f64> {
    if front.points.len() < 2 {
        return Err(invalid("spread needs at least two points"));
    }
    let m = front.points[0].raw_rewards.len();
    if m < 2 {
        let pts: Vec<Vec<f64>> = front.points.iter().map(|p| p.raw_rewards.clone()).collect();
        return Ok(polyline_spread(&pts));
    }
    let mut total = 0.0;
    let mut pairs = 0;
    for i in 0..m {
        for j in i + 1..m {
            let pts: Vec<Vec<f64>> = front.points.iter().map(|p| vec![p.raw_rewards[i], p.raw_rewards[j]]).collect();
            total += polyline_spread(&pts);
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Column names for `m` rewards.
pub fn csv_header(m: usize) -> String {
    let mut cols = vec!["method".to_string(), "alpha".to_string()];
    cols.extend((0..m).map(|i| format!("w_{i}")));
    cols.extend((0..m).map(|i| format!("r_{i}")));
    cols.push("kl".into());
    cols.extend((0..m).map(|i| format!("v_{i}")));
    cols.push("v_scalar".into());
    cols.join(",")
}

/// Writes fronts in the one-row-per-point CSV schema.
pub fn fronts_to_csv(fronts: &[&Front]) -> Result<String> {
    let m = fronts
        .iter()
        .flat_map(|f| f.points.first())
        .map(|p| p.w.len())
        .next()
        .ok_or_else(|| invalid("no points to write"))?;
    let mut out = csv_header(m);
    out.push('\n');
    for f in fronts {
        if f.method.contains(',') {
            return Err(invalid("method names may not contain commas"));
        }
        for p in &f.points {
            if p.w.len() != m {
                return Err(dim("mixed reward counts in one CSV"));
            }
            let mut cells = vec![f.method.clone(), p.alpha.to_string()];
            cells.extend(p.w.as_slice().iter().map(f64::to_string));
            cells.extend(p.raw_rewards.iter().map(f64::to_string));
            cells.push(p.kl.to_string());
            cells.extend(p.regularized_values.iter().map(f64::to_string));
            cells.push(p.scalarized_value.to_string());
            writeln!(out, "{}", cells.join(",")).unwrap();
        }
    }
    Ok(out)
}

/// Parses the CSV schema back into fronts, grouped by method in first-seen order.
pub fn fronts_from_csv(text: &str) -> Result<Vec<Front>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| invalid("empty CSV"))?;
    let ncols = header.split(',').count();
    if ncols < 6 || (ncols - 4) % 3 != 0 {
        return Err(invalid(format!("unexpected CSV header `{header}`")));
    }
    let m = (ncols - 4) / 3;
    if header != csv_header(m) {
        return Err(invalid(format!("unexpected CSV header `{header}`")));
    }
    let mut fronts: Vec<Front> = Vec::new();
    for (i, line) in lines {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != ncols {
            return Err(Error::Parse { line: i + 1, msg: format!("expected {ncols} cells") });
        }
        let nums = cells[1..]
            .iter()
            .map(|c| c.trim().parse::<f64>().map_err(|_| Error::Parse { line: i + 1, msg: format!("bad number `{c}`") }))
            .collect::<Result<Vec<_>>>()?;
        let alpha = nums[0];
        let w = RewardWeights::new(nums[1..1 + m].to_vec())?;
        let point = ParetoPoint {
            alpha,
            w,
            raw_rewards: nums[1 + m..1 + 2 * m].to_vec(),
            kl: nums[1 + 2 * m],
            regularized_values: nums[2 + 2 * m..2 + 3 * m].to_vec(),
            scalarized_value: nums[2 + 3 * m],
        };
        match fronts.iter_mut().find(|f| f.method == cells[0]) {
            Some(f) => f.points.push(point),
            None => fronts.push(Front { method: cells[0].to_string(), points: vec![point] }),
        }
    }
    Ok(fronts)
}

/// Plot-ready JSON: per method, the raw-reward and value coordinates plus the
/// spread score.
pub fn plot_data_json(fronts: &[&Front]) -> Result<String> {
    let mut methods = serde_json::Map::new();
    for f in fronts {
        let s = spread(f).ok();
        methods.insert(
            f.method.clone(),
            serde_json::json!({
                "w": f.points.iter().map(|p| p.w.as_slice().to_vec()).collect::<Vec<_>>(),
                "alpha": f.points.iter().map(|p| p.alpha).collect::<Vec<_>>(),
                "raw_rewards": f.points.iter().map(|p| p.raw_rewards.clone()).collect::<Vec<_>>(),
                "regularized_values": f.points.iter().map(|p| p.regularized_values.clone()).collect::<Vec<_>>(),
                "kl": f.points.iter().map(|p| p.kl).collect::<Vec<_>>(),
                "spread": s,
            }),
        );
    }
    let doc = serde_json::json!({ "spread_metric": SPREAD_LABEL, "fronts": methods });
    serde_json::to_string_pretty(&doc).map_err(|e| invalid(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{pair_grid, pareto_front_oracle};
    use crate::policy::PartitionScheme;

    fn point(raw: Vec<f64>) -> ParetoPoint {
        ParetoPoint {
            alpha: 0.1,
            w: RewardWeights::uniform(2),
            raw_rewards: raw,
            kl: 0.0,
            regularized_values: vec![0.0, 0.0],
            scalarized_value: 0.0,
        }
    }

    #[test]
    fn spread_hand_values() {
        let collapsed = Front { method: "x".into(), points: vec![point(vec![0.5, 0.5]); 4] };
        assert_eq!(spread(&collapsed).unwrap(), 0.0);
        let line = Front {
            method: "x".into(),
            points: vec![point(vec![0.0, 1.0]), point(vec![0.3, 0.6]), point(vec![0.6, 0.2])],
        };
        assert!((spread(&line).unwrap() - 1.0).abs() < 1e-12);
        let single = Front { method: "x".into(), points: vec![point(vec![0.0, 1.0])] };
        assert!(spread(&single).is_err());
    }

    #[test]
    fn oracle_sweep_matches_oracle_front_and_dominates() {
        let env = BanditEnv::random(3, 4, 2, 4).unwrap();
        let grid = pair_grid(11);
        let alpha = KLWeight::new(0.1, 0.1).unwrap();
        let swept = sweep(&OracleSource, &env, &[alpha], &grid).unwrap();
        let direct = pareto_front_oracle(&env, 0.1, &grid).unwrap();
        assert_eq!(swept, direct);
        assert!(swept.points.iter().all(|p| p.consistency_error() < 1e-10));
        assert_eq!(dominates(&swept, &swept, DOMINANCE_TOL).unwrap().fraction, 1.0);

        let arch = PolicyArchitecture::tabular(3, 4, PartitionScheme::Full).unwrap();
        let (theta_ref, _) = arch.init_reference(&env, 0).unwrap();
        let bundle = ParameterBundle::from_reference(arch, &theta_ref, 2, None).unwrap();
        let src = BundleSource { name: "init".into(), bundle: &bundle };
        let f = sweep(&src, &env, &[alpha], &grid).unwrap();
        let d = dominates(&swept, &f, DOMINANCE_TOL).unwrap();
        assert!(d.per_point.iter().all(|&b| b));
        assert!(dominates(&swept, &sweep(&OracleSource, &env, &[alpha], &pair_grid(5)).unwrap(), 1e-6).is_err());
    }

    #[test]
    fn sweep_is_order_independent() {
        let env = BanditEnv::random(2, 3, 2, 1).unwrap();
        let mut grid = pair_grid(7);
        let a = [KLWeight::new(0.2, 0.1).unwrap()];
        let f1 = sweep(&OracleSource, &env, &a, &grid).unwrap();
        grid.reverse();
        assert_eq!(f1, sweep(&OracleSource, &env, &a, &grid).unwrap());
    }

    #[test]
    fn csv_round_trip() {
        let env = BanditEnv::random(2, 3, 2, 1).unwrap();
        let f = pareto_front_oracle(&env, 0.05, &pair_grid(21)).unwrap();
        let csv = fronts_to_csv(&[&f]).unwrap();
        assert_eq!(csv.lines().count(), 22);
        let back = fronts_from_csv(&csv).unwrap();
        assert_eq!(back, vec![f]);
        assert!(plot_data_json(&back.iter().collect::<Vec<_>>()).unwrap().contains("stand-in"));
    }
}
