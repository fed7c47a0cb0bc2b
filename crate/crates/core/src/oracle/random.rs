use rand::Rng;

use crate::env::TabularMdp;
use crate::rng::SimRng;

/// Size limits and cost range for [`random_mdp`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomMdpParams {
    pub max_states: usize,
    pub max_actions: usize,
    pub max_horizon: usize,
    pub cost_lo: f64,
    pub cost_hi: f64,
    /// Probability that a transition entry is forced to zero.
    pub sparsity: f64,
}

impl Default for RandomMdpParams {
    fn default() -> Self {
        RandomMdpParams { max_states: 3, max_actions: 3, max_horizon: 3, cost_lo: 0.0, cost_hi: 1.0, sparsity: 0.3 }
    }
}

/// Tabular MDP with uniformly drawn sizes, Dirichlet-like rows and uniform costs.
pub fn random_mdp(rng: &mut SimRng, params: &RandomMdpParams) -> TabularMdp {
    let n_states = rng.gen_range(1..=params.max_states);
    let n_actions = rng.gen_range(1..=params.max_actions);
    let horizon = rng.gen_range(1..=params.max_horizon);
    let mut p = vec![vec![vec![0.0; n_states]; n_actions]; n_states];
    let mut c = vec![vec![vec![0.0; n_states]; n_actions]; n_states];
    for s in 0..n_states {
        for a in 0..n_actions {
            let mut row: Vec<f64> = (0..n_states)
                .map(|_| if rng.gen::<f64>() < params.sparsity { 0.0 } else { -rng.gen::<f64>().max(1e-300).ln() })
                .collect();
            if row.iter().all(|&x| x == 0.0) {
                row[rng.gen_range(0..n_states)] = 1.0;
            }
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= total);
            p[s][a] = row;
            for s2 in 0..n_states {
                c[s][a][s2] = rng.gen_range(params.cost_lo..params.cost_hi);
            }
        }
    }
    let init = if rng.gen::<bool>() {
        None
    } else {
        let mut w: Vec<f64> = (0..n_states).map(|_| rng.gen::<f64>() + 0.05).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= total);
        Some(w)
    };
    TabularMdp { n_states, n_actions, horizon, p, c, init }
}
