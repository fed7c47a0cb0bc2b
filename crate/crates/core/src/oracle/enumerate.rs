//! Brute-force references for the Bellman recursion.

use super::{odometer, AugmentedGraph, NodePolicy};
use crate::env::TabularMdp;
use crate::error::{Error, Result};
use crate::scoring::RiskSpec;

/// Optimal `E[f(C, u)]` from each start state by expectimin over the full
/// history tree: no merging of accumulated costs, the score is applied to
/// the path's own total. Choices at distinct histories are independent, so
/// this equals the minimum over all deterministic history-dependent policies.
pub fn tree_optimal_values(mdp: &TabularMdp, spec: &RiskSpec, u: f64) -> Result<Vec<f64>> {
    mdp.validate()?;
    (0..mdp.n_states).map(|s| expectimin(mdp, spec, u, 0, s, 0.0)).collect()
}

fn expectimin(mdp: &TabularMdp, spec: &RiskSpec, u: f64, t: usize, s: usize, total: f64) -> Result<f64> {
    if t == mdp.horizon {
        return spec.eval_f(total, u);
    }
    let mut best = f64::INFINITY;
    for a in 0..mdp.n_actions {
        let mut q = 0.0;
        for (s2, &p) in mdp.p[s][a].iter().enumerate() {
            if p > 0.0 {
                q += p * expectimin(mdp, spec, u, t + 1, s2, total + mdp.c[s][a][s2])?;
            }
        }
        best = best.min(q);
    }
    Ok(best)
}

/// Number of deterministic policies on the graph's decision nodes.
pub fn literal_policy_count(graph: &AugmentedGraph) -> f64 {
    (graph.n_actions as f64).powi(graph.decision_nodes() as i32)
}

/// Every deterministic policy on the graph's decision nodes, one action per
/// node, in odometer order. Refuses when there are more than `limit`.
pub fn literal_policies(graph: &AugmentedGraph, limit: f64) -> Result<LiteralPolicies> {
    let count = literal_policy_count(graph);
    if count > limit {
        return Err(Error::TooLarge { count, limit });
    }
    let shape = graph.layers[..graph.horizon].iter().map(Vec::len).collect();
    Ok(LiteralPolicies { shape, digits: vec![0; graph.decision_nodes()], base: graph.n_actions, done: false })
}

pub struct LiteralPolicies {
    shape: Vec<usize>,
    digits: Vec<usize>,
    base: usize,
    done: bool,
}

impl Iterator for LiteralPolicies {
    type Item = NodePolicy;

    fn next(&mut self) -> Option<NodePolicy> {
        if self.done {
            return None;
        }
        let mut actions = Vec::with_capacity(self.shape.len());
        let mut off = 0;
        for &n in &self.shape {
            actions.push(self.digits[off..off + n].to_vec());
            off += n;
        }
        self.done = !odometer(&mut self.digits, self.base);
        Some(NodePolicy { actions })
    }
}
