//! Out-of-sample evaluation and data exports for plots.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algo::NetPolicy;
use crate::env::{rollout, simulate_episode, total_cost, Environment};
use crate::error::{Error, Result};
use crate::net::{InputEncoding, PolicyNet, ValueNet};
use crate::rng::{domain, stream};
use crate::scoring::{lower_quantile, RiskSpec};

/// Number of contiguous batches used for batch-means standard errors.
pub const SE_BATCHES: usize = 20;

/// Default number of histogram bins.
pub const DEFAULT_BINS: usize = 101;

/// Summary statistics of a sample of total costs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostStats {
    pub mean: f64,
    #[serde(rename = "es_0.8")]
    pub es_08: f64,
    #[serde(rename = "es_0.6")]
    pub es_06: f64,
    /// Population variance (divides by n).
    pub variance: f64,
    /// `mean + variance`.
    pub mean_variance: f64,
}

impl CostStats {
    pub fn of(costs: &[f64]) -> Result<Self> {
        if costs.is_empty() {
            return Err(Error::Argument("statistics of an empty sample".into()));
        }
        let n = costs.len() as f64;
        let mean = costs.iter().sum::<f64>() / n;
        let variance = costs.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / n;
        Ok(CostStats {
            mean,
            es_08: expected_shortfall(costs, 0.8)?,
            es_06: expected_shortfall(costs, 0.6)?,
            variance,
            mean_variance: mean + variance,
        })
    }

    fn fields(&self) -> [f64; 5] {
        [self.mean, self.es_08, self.es_06, self.variance, self.mean_variance]
    }

    fn from_fields(v: [f64; 5]) -> Self {
        CostStats { mean: v[0], es_08: v[1], es_06: v[2], variance: v[3], mean_variance: v[4] }
    }
}

/// `q + mean((c - q)^+) / (1 - alpha)` at the lower empirical alpha-quantile `q`.
pub fn expected_shortfall(costs: &[f64], alpha: f64) -> Result<f64> {
    let q = lower_quantile(costs, alpha)?;
    let n = costs.len() as f64;
    let tail = costs.iter().map(|c| (c - q).max(0.0)).sum::<f64>() / n;
    Ok(q + tail / (1.0 - alpha))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n_episodes: usize,
    pub seed: u64,
    pub greedy: bool,
    pub upsilon_star: f64,
    #[serde(flatten)]
    pub stats: CostStats,
    /// Batch-means standard errors of each statistic.
    pub standard_errors: CostStats,
}

impl EvaluationReport {
    pub fn from_costs(costs: &[f64], seed: u64, greedy: bool, upsilon_star: f64) -> Result<Self> {
        let stats = CostStats::of(costs)?;
        Ok(EvaluationReport {
            n_episodes: costs.len(),
            seed,
            greedy,
            upsilon_star,
            stats,
            standard_errors: batch_means_se(costs, SE_BATCHES)?,
        })
    }
}

/// Standard errors from the spread of statistics over contiguous batches.
pub fn batch_means_se(costs: &[f64], batches: usize) -> Result<CostStats> {
    let size = costs.len() / batches;
    if size == 0 {
        return Ok(CostStats::from_fields([f64::NAN; 5]));
    }
    let per: Vec<[f64; 5]> = (0..batches)
        .map(|b| CostStats::of(&costs[b * size..(b + 1) * size]).map(|s| s.fields()))
        .collect::<Result<_>>()?;
    let k = batches as f64;
    let mut se = [0.0; 5];
    for (i, v) in se.iter_mut().enumerate() {
        let m = per.iter().map(|p| p[i]).sum::<f64>() / k;
        let var = per.iter().map(|p| (p[i] - m).powi(2)).sum::<f64>() / (k - 1.0);
        *v = (var / k).sqrt();
    }
    Ok(CostStats::from_fields(se))
}

/// Total costs of `n_episodes` episodes with the auxiliary variable held at
/// `upsilon_star`; episode `i` uses its own random stream.
pub fn simulate_costs(
    env: &dyn Environment,
    encoding: &InputEncoding,
    policy: &PolicyNet,
    upsilon_star: f64,
    n_episodes: usize,
    seed: u64,
    greedy: bool,
) -> Result<Vec<f64>> {
    let pol = NetPolicy { env, encoding, policy, greedy };
    (0..n_episodes)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, domain::EVAL_EPISODE, i as u64);
            simulate_episode(env, &pol, upsilon_star, &mut rng).map(|ep| total_cost(&ep))
        })
        .collect()
}

pub fn evaluate_policy(
    env: &dyn Environment,
    encoding: &InputEncoding,
    policy: &PolicyNet,
    upsilon_star: f64,
    n_episodes: usize,
    seed: u64,
    greedy: bool,
) -> Result<(EvaluationReport, Vec<f64>)> {
    if n_episodes == 0 {
        return Err(Error::Argument("n_episodes must be >= 1".into()));
    }
    let costs = simulate_costs(env, encoding, policy, upsilon_star, n_episodes, seed, greedy)?;
    Ok((EvaluationReport::from_costs(&costs, seed, greedy, upsilon_star)?, costs))
}

/// Critic output next to a Monte Carlo estimate of `E[f(-Y_T, u)]` from the
/// same augmented state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueProbe {
    pub t: usize,
    pub y: f64,
    pub upsilon: f64,
    pub v_net: f64,
    pub v_mc: f64,
    pub v_mc_se: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn probe_value(
    env: &dyn Environment,
    spec: &RiskSpec,
    encoding: &InputEncoding,
    value: &ValueNet,
    policy: &PolicyNet,
    t: usize,
    s: &[f64],
    y: f64,
    upsilon: f64,
    n_mc: usize,
    seed: u64,
) -> Result<ValueProbe> {
    let mut features = Vec::new();
    env.features(s, &mut features);
    let v_net = value.forward(encoding, t, upsilon, &features, y)?;
    let pol = NetPolicy { env, encoding, policy, greedy: false };
    let scores: Vec<f64> = (0..n_mc)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, domain::MONTE_CARLO, i as u64);
            let ep = rollout(env, &pol, t, s.to_vec(), y, upsilon, &mut rng)?;
            let y_end = ep.last().map(|tr| tr.y_next).unwrap_or(y);
            spec.eval_f(-y_end, upsilon)
        })
        .collect::<Result<_>>()?;
    let n = scores.len() as f64;
    let v_mc = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|v| (v - v_mc).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok(ValueProbe { t, y, upsilon, v_net, v_mc, v_mc_se: (var / n).sqrt() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueCurveRow {
    pub state_id: usize,
    pub upsilon: f64,
    pub v_net: f64,
    pub v_mc: f64,
    pub v_mc_se: f64,
}

/// Value at `(t = 0, s, y = 0)` across an upsilon grid for each state.
#[allow(clippy::too_many_arguments)]
pub fn value_curve(
    env: &dyn Environment,
    spec: &RiskSpec,
    encoding: &InputEncoding,
    value: &ValueNet,
    policy: &PolicyNet,
    states: &[Vec<f64>],
    upsilons: &[f64],
    n_mc: usize,
    seed: u64,
) -> Result<Vec<ValueCurveRow>> {
    let mut rows = Vec::with_capacity(states.len() * upsilons.len());
    for (state_id, s) in states.iter().enumerate() {
        for (j, &u) in upsilons.iter().enumerate() {
            let probe_seed = seed ^ ((state_id as u64) << 32 | j as u64);
            let p = probe_value(env, spec, encoding, value, policy, 0, s, 0.0, u, n_mc, probe_seed)?;
            rows.push(ValueCurveRow { state_id, upsilon: u, v_net: p.v_net, v_mc: p.v_mc, v_mc_se: p.v_mc_se });
        }
    }
    Ok(rows)
}

pub const VALUE_CURVE_HEADER: &str = "state_id,upsilon,v_net,v_mc";

pub fn export_value_curve(rows: &[ValueCurveRow], path: &Path) -> Result<()> {
    let mut out = String::from(VALUE_CURVE_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.state_id, r.upsilon, r.v_net, r.v_mc);
    }
    write_file(path, &out)
}

/// Grid of a policy slice for a two-feature state `(P, Q)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    pub prices: Vec<f64>,
    pub inventories: Vec<f64>,
    /// Accumulated-cost values for `t >= 1`; ignored at `t = 0`, where `y = 0`.
    pub ys: Vec<f64>,
}

/// Mean action of the policy at each grid point: `(y, P, Q, mean_action)`.
pub fn policy_heatmap(
    env: &dyn Environment,
    encoding: &InputEncoding,
    policy: &PolicyNet,
    upsilon: f64,
    t: usize,
    grid: &HeatmapGrid,
) -> Result<Vec<[f64; 4]>> {
    if t >= env.horizon() {
        return Err(Error::Argument(format!("t={t} outside the horizon")));
    }
    let ys: Vec<f64> = if t == 0 { vec![0.0] } else { grid.ys.clone() };
    let mut rows = Vec::new();
    let mut features = Vec::new();
    let mut x = Vec::new();
    for &y in &ys {
        for &p in &grid.prices {
            for &q in &grid.inventories {
                features.clear();
                env.features(&[p, q], &mut features);
                encoding.encode(t, upsilon, &features, y, &mut x)?;
                let a = policy.mean_action(&x)?;
                rows.push([y, p, q, a[0]]);
            }
        }
    }
    Ok(rows)
}

pub fn export_policy_heatmap(rows: &[[f64; 4]], t: usize, path: &Path) -> Result<()> {
    let mut out = String::from(if t == 0 { "P,Q,mean_action\n" } else { "y,P,Q,mean_action\n" });
    for r in rows {
        if t == 0 {
            let _ = writeln!(out, "{},{},{}", r[1], r[2], r[3]);
        } else {
            let _ = writeln!(out, "{},{},{},{}", r[0], r[1], r[2], r[3]);
        }
    }
    write_file(path, &out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub densities: Vec<f64>,
}

/// Density histogram over `[lo, hi]` with `bins` equal bins; samples at `hi`
/// fall into the last bin.
pub fn histogram(costs: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Histogram> {
    if bins == 0 || costs.is_empty() {
        return Err(Error::Argument("histogram needs bins and samples".into()));
    }
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| if i == bins { hi } else { lo + width * i as f64 }).collect();
    let mut counts = vec![0usize; bins];
    for &c in costs {
        if c < lo || c > hi {
            continue;
        }
        let i = (((c - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    let n = costs.len() as f64;
    let densities = counts.iter().zip(edges.windows(2)).map(|(&k, e)| k as f64 / (n * (e[1] - e[0]))).collect();
    Ok(Histogram { edges, densities })
}

/// Named cost samples, e.g. one per trained model.
pub struct CostSample<'a> {
    pub name: &'a str,
    pub costs: &'a [f64],
}

/// Histograms and alpha-quantile marks for several cost samples.
///
/// With `common_range` all models share bins over the pooled min/max;
/// otherwise each model uses its own range. Writes `path` with columns
/// `model,bin_lo,bin_hi,density` and a `<stem>_quantiles.csv` next to it
/// with `model,alpha,quantile`.
pub fn export_cost_distribution(samples: &[CostSample], alphas: &[f64], bins: usize, common_range: bool, path: &Path) -> Result<PathBuf> {
    let pooled = samples.iter().flat_map(|s| s.costs.iter().copied());
    let (plo, phi) = pooled.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), c| (a.min(c), b.max(c)));
    let mut hist = String::from("model,bin_lo,bin_hi,density\n");
    let mut marks = String::from("model,alpha,quantile\n");
    for s in samples {
        let (lo, hi) = if common_range {
            (plo, phi)
        } else {
            s.costs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &c| (a.min(c), b.max(c)))
        };
        let h = histogram(s.costs, lo, hi, bins)?;
        for (e, d) in h.edges.windows(2).zip(&h.densities) {
            let _ = writeln!(hist, "{},{},{},{}", s.name, e[0], e[1], d);
        }
        for &a in alphas {
            let _ = writeln!(marks, "{},{},{}", s.name, a, lower_quantile(s.costs, a)?);
        }
    }
    write_file(path, &hist)?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("costs");
    let qpath = path.with_file_name(format!("{stem}_quantiles.csv"));
    write_file(&qpath, &marks)?;
    Ok(qpath)
}

/// Provenance written next to every export as `<file>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub config_hash: String,
    pub seed: u64,
    pub kind: String,
    #[serde(default)]
    pub details: serde_json::Value,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".json");
    path.with_file_name(name)
}

pub fn write_sidecar(path: &Path, sidecar: &Sidecar) -> Result<()> {
    write_file(&sidecar_path(path), &serde_json::to_string_pretty(sidecar)?)
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algo::{Agent, NetConfig};
    use crate::env::{ArbitrageEnv, ArbitrageParams, TabularMdp};
    use crate::scoring::Interval;

    #[test]
    fn two_point_law_statistics() {
        let costs: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { -1.0 } else { 1.0 }).collect();
        let s = CostStats::of(&costs).unwrap();
        assert_eq!(s.mean, 0.0);
        assert!((s.es_08 - 1.0).abs() < 1e-12);
        assert!((s.variance - 1.0).abs() < 1e-12);
        assert!((s.mean_variance - 1.0).abs() < 1e-12);
    }

    #[test]
    fn es_agrees_with_scoring_module() {
        let mut rng = stream(1, 0, 0);
        use rand::Rng;
        for n in [1usize, 7, 100, 1000] {
            let costs: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..3.0)).collect();
            for alpha in [0.6, 0.8] {
                let direct = expected_shortfall(&costs, alpha).unwrap();
                let via = RiskSpec::es(alpha).empirical_risk(&costs, 101).unwrap().rho;
                assert!((direct - via).abs() < 1e-9);
            }
            let s = CostStats::of(&costs).unwrap();
            assert!(s.es_08 >= s.es_06 - 1e-12 && s.es_06 >= s.mean - 1e-12);
            assert!(s.variance >= 0.0);
        }
    }

    fn zero_cost_env() -> TabularMdp {
        TabularMdp {
            n_states: 1,
            n_actions: 2,
            horizon: 3,
            p: vec![vec![vec![1.0], vec![1.0]]],
            c: vec![vec![vec![0.0], vec![0.0]]],
            init: None,
        }
    }

    #[test]
    fn zero_cost_environment_reports_zeros() {
        let env = zero_cost_env();
        let bounds = env.cost_bounds().unwrap();
        let agent = Agent::new(&env, bounds, bounds, &NetConfig { hidden: vec![4], ..Default::default() }).unwrap();
        let (rep, _) = evaluate_policy(&env, &agent.encoding, &agent.policy, 0.0, 200, 3, false).unwrap();
        assert_eq!(rep.stats, CostStats { mean: 0.0, es_08: 0.0, es_06: 0.0, variance: 0.0, mean_variance: 0.0 });
        let again = evaluate_policy(&env, &agent.encoding, &agent.policy, 0.0, 200, 3, false).unwrap().0;
        assert_eq!(rep, again);
    }

    #[test]
    fn standard_errors_shrink_with_sample_size() {
        let env = ArbitrageEnv::new(ArbitrageParams::default()).unwrap();
        let bounds = Interval { lo: -3.0, hi: 3.0 };
        let agent = Agent::new(&env, bounds, bounds, &NetConfig { hidden: vec![8], policy_init_scale: 0.5, ..Default::default() }).unwrap();
        let small = evaluate_policy(&env, &agent.encoding, &agent.policy, 0.0, 20_000, 5, false).unwrap().0;
        let large = evaluate_policy(&env, &agent.encoding, &agent.policy, 0.0, 40_000, 5, false).unwrap().0;
        let ratio = small.standard_errors.mean / large.standard_errors.mean;
        // batch means with 20 batches: the ratio estimate has roughly 20% noise
        assert!(ratio > 2f64.sqrt() * 0.6 && ratio < 2f64.sqrt() * 1.6, "{ratio}");
    }

    #[test]
    fn histogram_normalizes_and_shares_edges() {
        let a: Vec<f64> = (0..500).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..300).map(|i| 0.5 * (i as f64 * 0.11).cos() + 0.2).collect();
        let h = histogram(&a, -1.0, 1.0, DEFAULT_BINS).unwrap();
        let mass: f64 = h.densities.iter().zip(h.edges.windows(2)).map(|(d, e)| d * (e[1] - e[0])).sum();
        assert!((mass - 1.0).abs() < 1e-9);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("costs.csv");
        let samples = [CostSample { name: "a", costs: &a }, CostSample { name: "b", costs: &b }];
        let qpath = export_cost_distribution(&samples, &[0.8], 11, true, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let edges = |m: &str| -> Vec<String> {
            text.lines().skip(1).filter(|l| l.starts_with(m)).map(|l| l.splitn(2, ',').nth(1).unwrap().rsplitn(2, ',').nth(1).unwrap().to_string()).collect()
        };
        assert_eq!(edges("a,"), edges("b,"));
        assert_eq!(edges("a,").len(), 11);
        let marks = std::fs::read_to_string(qpath).unwrap();
        let qa: f64 = marks.lines().nth(1).unwrap().rsplit(',').next().unwrap().parse().unwrap();
        assert_eq!(qa, crate::algo::es_quantile_update(&a, 0.8).unwrap());
    }

    #[test]
    fn heatmap_shape_and_symmetric_start() {
        let env = ArbitrageEnv::new(ArbitrageParams::default()).unwrap();
        let bounds = Interval { lo: -3.0, hi: 3.0 };
        let agent = Agent::new(&env, bounds, bounds, &NetConfig { hidden: vec![8], ..Default::default() }).unwrap();
        let grid = HeatmapGrid { prices: vec![0.6, 1.0, 1.4], inventories: vec![-5.0, 0.0, 2.5, 5.0], ys: vec![-0.5, 0.5] };
        let rows = policy_heatmap(&env, &agent.encoding, &agent.policy, 0.0, 0, &grid).unwrap();
        assert_eq!(rows.len(), 12);
        let centre = rows.iter().find(|r| r[1] == 1.0 && r[2] == 0.0).unwrap();
        assert!(centre[3].abs() < 0.05);
        let rows1 = policy_heatmap(&env, &agent.encoding, &agent.policy, 0.0, 2, &grid).unwrap();
        assert_eq!(rows1.len(), 24);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        export_policy_heatmap(&rows1, 2, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next().unwrap(), "y,P,Q,mean_action");
        assert_eq!(text.lines().count(), 25);
    }

    #[test]
    fn value_curve_rows_are_finite() {
        let env = zero_cost_env();
        let spec = RiskSpec::es(0.8);
        let bounds = env.cost_bounds().unwrap();
        let agent = Agent::new(&env, bounds, bounds, &NetConfig { hidden: vec![4], ..Default::default() }).unwrap();
        let rows = value_curve(&env, &spec, &agent.encoding, &agent.value, &agent.policy, &[vec![0.0]], &[-0.1, 0.0, 0.1], 50, 1).unwrap();
        assert_eq!(rows.len(), 3);
        for r in &rows {
            assert!(r.v_net.is_finite());
            assert!((r.v_mc - spec.eval_f(0.0, r.upsilon).unwrap()).abs() < 1e-12);
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.csv");
        export_value_curve(&rows, &p).unwrap();
        write_sidecar(&p, &Sidecar { config_hash: "x".into(), seed: 1, kind: "value_curve".into(), details: serde_json::Value::Null }).unwrap();
        assert!(dir.path().join("v.csv.json").exists());
    }
}
