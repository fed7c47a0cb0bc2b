//! Exact backward induction on the augmented state space of a tabular MDP.
//!
//! The accumulated-cost coordinate `y` only takes finitely many values, so the
//! reachable `(t, s, y)` nodes form a finite layered graph. Values on this
//! graph are exact up to floating-point summation; nodes are merged when their
//! `y` agree after rounding to `1e-12`.

mod enumerate;
mod random;

pub use enumerate::{literal_policy_count, literal_policies, tree_optimal_values};
pub use random::{random_mdp, RandomMdpParams};

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::TabularMdp;
use crate::error::{Error, Result};
use crate::net::{InputEncoding, PolicyNet};
use crate::rng::{domain, stream};
use crate::scoring::{minimize_on_grid, weighted_lower_quantile, Interval, RiskKind, RiskSpec};

/// Grid points used by default for scans over the auxiliary variable.
pub const DEFAULT_GRID_N: usize = 2001;

const KEY_SCALE: f64 = 1e12;
const MAX_ABS_Y: f64 = 1e6;

fn y_key(y: f64) -> Result<i64> {
    if !y.is_finite() || y.abs() > MAX_ABS_Y {
        return Err(Error::Domain(format!("accumulated cost {y} outside the oracle's key range")));
    }
    Ok((y * KEY_SCALE).round() as i64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub prob: f64,
    pub child: usize,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub s: usize,
    pub y: f64,
    /// Outgoing edges per action; empty at the terminal layer.
    pub edges: Vec<Vec<Edge>>,
}

/// Position of a node handed to an [`AugmentedPolicy`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeRef {
    pub t: usize,
    pub index: usize,
    pub s: usize,
    pub y: f64,
}

/// Randomized decision rule on augmented nodes.
pub trait AugmentedPolicy {
    /// Writes the action distribution at `node` into `out` (length `n_actions`).
    fn probs(&self, node: &NodeRef, n_actions: usize, out: &mut Vec<f64>) -> Result<()>;
}

/// Deterministic policy stored per graph node.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NodePolicy {
    pub actions: Vec<Vec<usize>>,
}

impl AugmentedPolicy for NodePolicy {
    fn probs(&self, node: &NodeRef, n_actions: usize, out: &mut Vec<f64>) -> Result<()> {
        let a = *self
            .actions
            .get(node.t)
            .and_then(|l| l.get(node.index))
            .ok_or_else(|| Error::Argument(format!("policy undefined at t={} node={}", node.t, node.index)))?;
        out.clear();
        out.resize(n_actions, 0.0);
        out[a] = 1.0;
        Ok(())
    }
}

/// Policy depending on `(t, s)` only.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovPolicy {
    pub actions: Vec<Vec<usize>>,
}

impl AugmentedPolicy for MarkovPolicy {
    fn probs(&self, node: &NodeRef, n_actions: usize, out: &mut Vec<f64>) -> Result<()> {
        let a = self.actions[node.t][node.s];
        out.clear();
        out.resize(n_actions, 0.0);
        out[a] = 1.0;
        Ok(())
    }
}

/// Randomized policy stored per graph node.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomizedNodePolicy {
    pub probs: Vec<Vec<Vec<f64>>>,
}

impl AugmentedPolicy for RandomizedNodePolicy {
    fn probs(&self, node: &NodeRef, _n_actions: usize, out: &mut Vec<f64>) -> Result<()> {
        let p = self
            .probs
            .get(node.t)
            .and_then(|l| l.get(node.index))
            .ok_or_else(|| Error::Argument(format!("policy undefined at t={} node={}", node.t, node.index)))?;
        out.clear();
        out.extend_from_slice(p);
        Ok(())
    }
}

/// A categorical policy network on a tabular environment, with the auxiliary
/// variable fixed.
pub struct NetworkPolicy<'a> {
    pub policy: &'a PolicyNet,
    pub encoding: &'a InputEncoding,
    pub n_states: usize,
    pub upsilon: f64,
}

impl AugmentedPolicy for NetworkPolicy<'_> {
    fn probs(&self, node: &NodeRef, n_actions: usize, out: &mut Vec<f64>) -> Result<()> {
        let mut features = vec![0.0; self.n_states];
        features[node.s] = 1.0;
        let mut x = Vec::with_capacity(self.encoding.input_dim());
        self.encoding.encode(node.t, self.upsilon, &features, node.y, &mut x)?;
        let p = self.policy.probs(&x)?;
        if p.len() != n_actions {
            return Err(Error::Shape { expected: n_actions, got: p.len() });
        }
        *out = p;
        Ok(())
    }
}

/// Values on every node of the augmented graph.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedValueTable {
    pub values: Vec<Vec<f64>>,
    /// Minimizing action per non-terminal node (optimal tables only).
    pub greedy: Vec<Vec<Option<usize>>>,
}

impl AugmentedValueTable {
    /// The greedy actions as a policy; lowest index wins ties.
    pub fn greedy_policy(&self) -> Result<NodePolicy> {
        let actions = self
            .greedy
            .iter()
            .take(self.greedy.len().saturating_sub(1))
            .map(|layer| layer.iter().map(|a| a.ok_or_else(|| Error::Argument("table has no greedy actions".into()))).collect())
            .collect::<Result<_>>()?;
        Ok(NodePolicy { actions })
    }
}

/// Reachable `(t, s, y)` nodes of a tabular MDP started at `y = 0`.
#[derive(Debug, Clone)]
pub struct AugmentedGraph {
    pub horizon: usize,
    pub n_states: usize,
    pub n_actions: usize,
    /// Layer `t` holds the nodes at time `t`; layer 0 is `(s, 0)` for every `s`.
    pub layers: Vec<Vec<Node>>,
    pub init: Vec<f64>,
    index: Vec<BTreeMap<(usize, i64), usize>>,
}

impl AugmentedGraph {
    pub fn new(mdp: &TabularMdp) -> Result<Self> {
        mdp.validate()?;
        let horizon = mdp.horizon;
        let mut layers: Vec<Vec<Node>> = Vec::with_capacity(horizon + 1);
        let mut index = Vec::with_capacity(horizon + 1);
        let first: Vec<Node> = (0..mdp.n_states).map(|s| Node { s, y: 0.0, edges: Vec::new() }).collect();
        index.push((0..mdp.n_states).map(|s| ((s, 0i64), s)).collect::<BTreeMap<_, _>>());
        layers.push(first);
        for t in 0..horizon {
            let mut next: Vec<Node> = Vec::new();
            let mut map: BTreeMap<(usize, i64), usize> = BTreeMap::new();
            for node in layers[t].iter_mut() {
                node.edges = (0..mdp.n_actions)
                    .map(|a| {
                        let mut edges = Vec::new();
                        for (s2, &p) in mdp.p[node.s][a].iter().enumerate() {
                            if p <= 0.0 {
                                continue;
                            }
                            let cost = mdp.c[node.s][a][s2];
                            let y2 = node.y - cost;
                            let key = (s2, y_key(y2)?);
                            let child = *map.entry(key).or_insert_with(|| {
                                next.push(Node { s: s2, y: y2, edges: Vec::new() });
                                next.len() - 1
                            });
                            edges.push(Edge { prob: p, child, cost });
                        }
                        Ok(edges)
                    })
                    .collect::<Result<_>>()?;
            }
            layers.push(next);
            index.push(map);
        }
        Ok(AugmentedGraph {
            horizon,
            n_states: mdp.n_states,
            n_actions: mdp.n_actions,
            layers,
            init: mdp.initial_distribution(),
            index,
        })
    }

    pub fn node_count(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    /// Non-terminal node count.
    pub fn decision_nodes(&self) -> usize {
        self.layers[..self.horizon].iter().map(Vec::len).sum()
    }

    pub fn lookup(&self, t: usize, s: usize, y: f64) -> Option<usize> {
        let key = y_key(y).ok()?;
        self.index.get(t)?.get(&(s, key)).copied()
    }

    fn node_ref(&self, t: usize, index: usize) -> NodeRef {
        let n = &self.layers[t][index];
        NodeRef { t, index, s: n.s, y: n.y }
    }

    fn terminal_values(&self, spec: &RiskSpec, u: f64) -> Result<Vec<f64>> {
        self.layers[self.horizon].iter().map(|n| spec.eval_f(-n.y, u)).collect()
    }

    /// Bellman backup `V_t(s, y) = min_a sum_s' p(s'|s,a) V_{t+1}(s', y - c)`
    /// from `V_T(s, y) = f(-y, u)`.
    pub fn dp_optimal_value(&self, spec: &RiskSpec, u: f64) -> Result<AugmentedValueTable> {
        let mut values = vec![Vec::new(); self.horizon + 1];
        let mut greedy = vec![Vec::new(); self.horizon + 1];
        values[self.horizon] = self.terminal_values(spec, u)?;
        greedy[self.horizon] = vec![None; self.layers[self.horizon].len()];
        for t in (0..self.horizon).rev() {
            let (v, g): (Vec<f64>, Vec<Option<usize>>) = self.layers[t]
                .iter()
                .map(|node| {
                    let mut best = (f64::INFINITY, 0usize);
                    for (a, edges) in node.edges.iter().enumerate() {
                        let q: f64 = edges.iter().map(|e| e.prob * values[t + 1][e.child]).sum();
                        if q < best.0 {
                            best = (q, a);
                        }
                    }
                    (best.0, Some(best.1))
                })
                .unzip();
            values[t] = v;
            greedy[t] = g;
        }
        Ok(AugmentedValueTable { values, greedy })
    }

    /// `Q_t(s, y, a)` for every action at a node, from next-layer values.
    pub fn q_values(&self, table: &AugmentedValueTable, t: usize, index: usize) -> Vec<f64> {
        self.layers[t][index]
            .edges
            .iter()
            .map(|edges| edges.iter().map(|e| e.prob * table.values[t + 1][e.child]).sum())
            .collect()
    }

    /// Policy evaluation by the same recursion with the policy's mixture
    /// in place of the minimum.
    pub fn dp_policy_value(&self, policy: &dyn AugmentedPolicy, spec: &RiskSpec, u: f64) -> Result<AugmentedValueTable> {
        let mut values = vec![Vec::new(); self.horizon + 1];
        values[self.horizon] = self.terminal_values(spec, u)?;
        let mut probs = Vec::with_capacity(self.n_actions);
        for t in (0..self.horizon).rev() {
            let mut layer = Vec::with_capacity(self.layers[t].len());
            for (i, node) in self.layers[t].iter().enumerate() {
                policy.probs(&self.node_ref(t, i), self.n_actions, &mut probs)?;
                check_distribution(&probs, self.n_actions)?;
                let mut v = 0.0;
                for (a, edges) in node.edges.iter().enumerate() {
                    if probs[a] == 0.0 {
                        continue;
                    }
                    let q: f64 = edges.iter().map(|e| e.prob * values[t + 1][e.child]).sum();
                    v += probs[a] * q;
                }
                layer.push(v);
            }
            values[t] = layer;
        }
        let greedy = self.layers.iter().map(|l| vec![None; l.len()]).collect();
        Ok(AugmentedValueTable { values, greedy })
    }

    /// `sum_s init(s) V_0(s, 0)`.
    pub fn initial_value(&self, table: &AugmentedValueTable) -> f64 {
        self.init.iter().zip(&table.values[0]).map(|(p, v)| p * v).sum()
    }

    /// `h(E_{s0}[V*_0(s0, 0; u)], u)`: the best objective for a fixed `u`.
    pub fn objective(&self, spec: &RiskSpec, u: f64) -> Result<f64> {
        let table = self.dp_optimal_value(spec, u)?;
        spec.eval_h(self.initial_value(&table), u)
    }

    /// Exact law of the total cost under `policy`, as sorted `(cost, prob)`
    /// atoms with zero-probability atoms dropped.
    pub fn cost_law(&self, policy: &dyn AugmentedPolicy) -> Result<Vec<(f64, f64)>> {
        let mut mass = self.init.clone();
        let mut probs = Vec::with_capacity(self.n_actions);
        for t in 0..self.horizon {
            let mut next = vec![0.0; self.layers[t + 1].len()];
            for (i, node) in self.layers[t].iter().enumerate() {
                if mass[i] == 0.0 {
                    continue;
                }
                policy.probs(&self.node_ref(t, i), self.n_actions, &mut probs)?;
                check_distribution(&probs, self.n_actions)?;
                for (a, edges) in node.edges.iter().enumerate() {
                    if probs[a] == 0.0 {
                        continue;
                    }
                    for e in edges {
                        next[e.child] += mass[i] * probs[a] * e.prob;
                    }
                }
            }
            mass = next;
        }
        let mut atoms: BTreeMap<i64, (f64, f64)> = BTreeMap::new();
        for (node, m) in self.layers[self.horizon].iter().zip(mass) {
            if m > 0.0 {
                let e = atoms.entry(y_key(-node.y)?).or_insert((-node.y, 0.0));
                e.1 += m;
            }
        }
        Ok(atoms.into_values().collect())
    }

    /// All nodes a policy may visit, as `(t, index)`.
    pub fn decision_node_refs(&self) -> impl Iterator<Item = NodeRef> + '_ {
        (0..self.horizon).flat_map(move |t| (0..self.layers[t].len()).map(move |i| self.node_ref(t, i)))
    }
}

fn check_distribution(p: &[f64], n: usize) -> Result<()> {
    if p.len() != n {
        return Err(Error::Shape { expected: n, got: p.len() });
    }
    let total: f64 = p.iter().sum();
    if p.iter().any(|&x| !(x >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!("action probabilities {p:?} are not a distribution")));
    }
    Ok(())
}

/// `(sum_i w_i f(c_i, u))` then `h`, for a cost law.
pub fn law_objective(spec: &RiskSpec, law: &[(f64, f64)], u: f64) -> Result<f64> {
    spec.objective(law, u)
}

/// Bracket for a tabular MDP: the scoring module's bracket on its cost bounds.
pub fn mdp_bracket(mdp: &TabularMdp, spec: &RiskSpec) -> Result<Interval> {
    use crate::env::Environment;
    let bounds = mdp.cost_bounds().ok_or_else(|| Error::Argument("tabular MDP without cost bounds".into()))?;
    Ok(spec.upsilon_bracket(bounds)?.interval)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpsilonScan {
    pub upsilon_star: f64,
    pub objective: f64,
    pub grid_n: usize,
    /// Grid spacing on the bracket.
    pub resolution: f64,
    /// The minimizer sits on an end of the bracket, which may be too tight.
    pub at_endpoint: bool,
}

/// Minimizes `u -> h(E[V*_0(s0, 0; u)], u)` over a grid on `bracket` with
/// ternary refinement of the winning cell.
pub fn optimal_upsilon_scan(graph: &AugmentedGraph, spec: &RiskSpec, bracket: Interval, grid_n: usize) -> Result<UpsilonScan> {
    if grid_n < 2 {
        return Err(Error::Argument(format!("grid_n must be >= 2, got {grid_n}")));
    }
    let est = minimize_on_grid(|u| graph.objective(spec, u), bracket, grid_n)?;
    let resolution = bracket.width() / (grid_n - 1) as f64;
    let at_endpoint = (est.upsilon_star - bracket.lo).abs() < 0.5 * resolution || (bracket.hi - est.upsilon_star).abs() < 0.5 * resolution;
    Ok(UpsilonScan { upsilon_star: est.upsilon_star, objective: est.rho, grid_n, resolution, at_endpoint })
}

/// First minimizer of `g` over the grid, without refinement.
pub fn grid_argmin<F>(mut g: F, bracket: Interval, grid_n: usize) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut best = (f64::NAN, f64::INFINITY);
    for u in bracket.grid(grid_n) {
        let v = g(u)?;
        if v < best.1 {
            best = (u, v);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStage {
    /// `u_n`, the point at which `pi_n` was optimized.
    pub upsilon: f64,
    /// `u_{n+1}`, the minimizer over the grid for `pi_n`.
    pub upsilon_next: f64,
    /// `h(E[V^{pi_n}_0(s0, 0; u_{n+1})], u_{n+1})`.
    pub objective: f64,
    /// Allowed suboptimality `eps / n^2` of `pi_n` at `u_n`.
    pub slack: f64,
    /// Measured suboptimality of `pi_n` at `u_n`.
    pub gap: f64,
}

/// Options for [`alt_min_trace`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AltMinOptions {
    pub n_stages: usize,
    pub eps: f64,
    pub grid_n: usize,
    /// When set, `pi_n` picks uniformly among actions whose Q-value lies
    /// within `eps / (n^2 T)` of the best, seeded by this value.
    pub perturb_seed: Option<u64>,
}

/// Alternating minimization: `pi_n` is an `eps/n^2`-optimal policy for
/// `u_n` and `u_{n+1}` minimizes the objective of `pi_n` over the grid.
/// Fails if the chain `obj_n <= obj_{n-1} + eps/n^2` breaks.
pub fn alt_min_trace(
    graph: &AugmentedGraph,
    spec: &RiskSpec,
    bracket: Interval,
    upsilon_init: f64,
    opts: AltMinOptions,
) -> Result<Vec<TraceStage>> {
    if !bracket.contains(upsilon_init) {
        return Err(Error::Argument(format!("initial upsilon {upsilon_init} outside [{}, {}]", bracket.lo, bracket.hi)));
    }
    let mut trace: Vec<TraceStage> = Vec::with_capacity(opts.n_stages);
    let mut u = upsilon_init;
    for n in 1..=opts.n_stages {
        let slack = opts.eps / (n * n) as f64;
        let table = graph.dp_optimal_value(spec, u)?;
        let policy = match opts.perturb_seed {
            None => table.greedy_policy()?,
            Some(seed) => perturbed_policy(graph, &table, slack / graph.horizon as f64, seed ^ n as u64),
        };
        let optimum = graph.initial_value(&table);
        let achieved = graph.initial_value(&graph.dp_policy_value(&policy, spec, u)?);
        let gap = achieved - optimum;
        if gap > slack + 1e-12 * (1.0 + optimum.abs()) {
            return Err(Error::Argument(format!("stage {n} policy misses its slack: gap {gap} > {slack}")));
        }
        let law = graph.cost_law(&policy)?;
        let (u_next, obj) = grid_argmin(|v| spec.objective(&law, v), bracket, opts.grid_n)?;
        if let Some(prev) = trace.last() {
            if obj > prev.objective + slack + 1e-12 * (1.0 + prev.objective.abs()) {
                return Err(Error::Argument(format!(
                    "descent chain broken at stage {n}: {obj} > {} + {slack}",
                    prev.objective
                )));
            }
        }
        trace.push(TraceStage { upsilon: u, upsilon_next: u_next, objective: obj, slack, gap });
        u = u_next;
    }
    Ok(trace)
}

/// Deterministic policy choosing, at each node, a uniformly random action
/// among those with `Q <= min Q + delta`.
fn perturbed_policy(graph: &AugmentedGraph, table: &AugmentedValueTable, delta: f64, seed: u64) -> NodePolicy {
    let mut rng = stream(seed, domain::MONTE_CARLO, 0);
    let actions = (0..graph.horizon)
        .map(|t| {
            (0..graph.layers[t].len())
                .map(|i| {
                    let q = graph.q_values(table, t, i);
                    let best = q.iter().copied().fold(f64::INFINITY, f64::min);
                    let ok: Vec<usize> = (0..q.len()).filter(|&a| q[a] <= best + delta).collect();
                    ok[rng.gen_range(0..ok.len())]
                })
                .collect()
        })
        .collect();
    NodePolicy { actions }
}

/// Largest number of Markov policies [`augmentation_advantage`] enumerates.
pub const MARKOV_ENUMERATION_LIMIT: f64 = 1e6;

/// Best value over augmented-state policies and over deterministic policies
/// of `(t, s)` only, both as `sum_s init(s) V_0(s, 0; u)`.
pub fn augmentation_advantage(graph: &AugmentedGraph, spec: &RiskSpec, u: f64) -> Result<(f64, f64)> {
    let v_aug = graph.initial_value(&graph.dp_optimal_value(spec, u)?);
    let slots = graph.horizon * graph.n_states;
    let count = (graph.n_actions as f64).powi(slots as i32);
    if count > MARKOV_ENUMERATION_LIMIT {
        return Err(Error::TooLarge { count, limit: MARKOV_ENUMERATION_LIMIT });
    }
    let mut digits = vec![0usize; slots];
    let mut v_markov = f64::INFINITY;
    loop {
        let actions = digits.chunks(graph.n_states).map(<[usize]>::to_vec).collect();
        let policy = MarkovPolicy { actions };
        let v = graph.initial_value(&graph.dp_policy_value(&policy, spec, u)?);
        v_markov = v_markov.min(v);
        if !odometer(&mut digits, graph.n_actions) {
            break;
        }
    }
    Ok((v_aug, v_markov))
}

/// Advances a base-`base` counter; false once it wraps around.
pub(crate) fn odometer(digits: &mut [usize], base: usize) -> bool {
    for d in digits.iter_mut() {
        *d += 1;
        if *d < base {
            return true;
        }
        *d = 0;
    }
    false
}

/// Full certification report for a tabular problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub risk: RiskSpec,
    pub upsilon_star: f64,
    pub objective: f64,
    pub grid_n: usize,
    pub resolution: f64,
    pub at_endpoint: bool,
    pub bracket: Interval,
    /// Greedy action at each `(t = 0, s, y = 0)`.
    pub initial_actions: Vec<usize>,
    pub trace: Vec<TraceStage>,
}

/// Scan, DP at the optimum and an alternating-minimization trace started at
/// the bracket midpoint.
pub fn oracle_report(mdp: &TabularMdp, spec: &RiskSpec, grid_n: usize, n_stages: usize) -> Result<OracleReport> {
    spec.validate()?;
    let graph = AugmentedGraph::new(mdp)?;
    let bracket = mdp_bracket(mdp, spec)?;
    let scan = optimal_upsilon_scan(&graph, spec, bracket, grid_n)?;
    let table = graph.dp_optimal_value(spec, scan.upsilon_star)?;
    let initial_actions = table.greedy[0].iter().map(|a| a.unwrap_or(0)).collect();
    let opts = AltMinOptions { n_stages, eps: 0.0, grid_n, perturb_seed: None };
    let trace = alt_min_trace(&graph, spec, bracket, bracket.mid(), opts)?;
    Ok(OracleReport {
        risk: *spec,
        upsilon_star: scan.upsilon_star,
        objective: scan.objective,
        grid_n,
        resolution: scan.resolution,
        at_endpoint: scan.at_endpoint,
        bracket,
        initial_actions,
        trace,
    })
}

/// Risk `min_u h(E f(C, u), u)` of a cost law, with the quantile / mean
/// closed forms where they apply.
pub fn law_risk(spec: &RiskSpec, law: &[(f64, f64)], bracket: Interval, grid_n: usize) -> Result<f64> {
    Ok(spec.law_risk(law, bracket, grid_n)?.rho)
}

/// Lower alpha-quantile of an exact cost law.
pub fn law_quantile(law: &[(f64, f64)], alpha: f64) -> f64 {
    weighted_lower_quantile(law, alpha)
}

/// Whether an objective depends on the auxiliary variable.
pub fn depends_on_upsilon(kind: RiskKind) -> bool {
    !matches!(kind, RiskKind::Expectation | RiskKind::Entropic)
}
