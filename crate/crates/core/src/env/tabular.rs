use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Action, ActionSpace, Environment, State};
use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::scoring::CostBounds;

/// Explicit finite MDP: `p[s][a][s']` transition probabilities, `c[s][a][s']`
/// costs and horizon `T`. The state vector of a tabular state is `[index]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub p: Vec<Vec<Vec<f64>>>,
    pub c: Vec<Vec<Vec<f64>>>,
    /// Initial state distribution; uniform when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<Vec<f64>>,
}

impl TabularMdp {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let mdp: TabularMdp = serde_json::from_str(text)?;
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Argument(format!("malformed tabular MDP: {msg}")));
        if self.n_states == 0 || self.n_actions == 0 || self.horizon == 0 {
            return bad("n_states, n_actions and T must be >= 1".into());
        }
        if self.p.len() != self.n_states || self.c.len() != self.n_states {
            return bad("p and c need one entry per state".into());
        }
        for s in 0..self.n_states {
            if self.p[s].len() != self.n_actions || self.c[s].len() != self.n_actions {
                return bad(format!("state {s} needs one row per action"));
            }
            for a in 0..self.n_actions {
                let row = &self.p[s][a];
                if row.len() != self.n_states || self.c[s][a].len() != self.n_states {
                    return bad(format!("row ({s},{a}) has wrong length"));
                }
                if row.iter().any(|&q| !(q >= 0.0)) || self.c[s][a].iter().any(|c| !c.is_finite()) {
                    return bad(format!("row ({s},{a}) has negative or non-finite entries"));
                }
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return bad(format!("p({s},{a}) sums to {total}"));
                }
            }
        }
        if let Some(init) = &self.init {
            if init.len() != self.n_states || init.iter().any(|&q| !(q >= 0.0)) {
                return bad("init must be a distribution over states".into());
            }
            if (init.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return bad("init does not sum to 1".into());
            }
        }
        Ok(())
    }

    pub fn initial_distribution(&self) -> Vec<f64> {
        self.init.clone().unwrap_or_else(|| vec![1.0 / self.n_states as f64; self.n_states])
    }

    pub fn min_cost(&self) -> f64 {
        self.c.iter().flatten().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_cost(&self) -> f64 {
        self.c.iter().flatten().flatten().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Samples `s' ~ p(.|s, a)` and returns it with `c(s, a, s')`.
    pub fn sample_transition(&self, s: usize, a: usize, rng: &mut SimRng) -> Result<(usize, f64)> {
        if s >= self.n_states || a >= self.n_actions {
            return Err(Error::Argument(format!("index out of range: s={s}, a={a}")));
        }
        let row = &self.p[s][a];
        let u: f64 = rng.gen();
        let mut cum = 0.0;
        let mut next = None;
        for (j, &q) in row.iter().enumerate() {
            if q > 0.0 {
                cum += q;
                next = Some(j);
                if u < cum {
                    break;
                }
            }
        }
        let next = next.expect("validated row has positive mass");
        Ok((next, self.c[s][a][next]))
    }
}

impl Environment for TabularMdp {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete(self.n_actions)
    }

    fn feature_dim(&self) -> usize {
        self.n_states
    }

    fn features(&self, s: &[f64], out: &mut Vec<f64>) {
        let idx = s[0] as usize;
        out.extend((0..self.n_states).map(|j| if j == idx { 1.0 } else { 0.0 }));
    }

    fn feature_normalization(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![0.0; self.n_states], vec![1.0; self.n_states])
    }

    fn reset(&self, rng: &mut SimRng) -> State {
        let init = self.initial_distribution();
        let u: f64 = rng.gen();
        let mut cum = 0.0;
        let mut pick = 0;
        for (j, &q) in init.iter().enumerate() {
            if q > 0.0 {
                cum += q;
                pick = j;
                if u < cum {
                    break;
                }
            }
        }
        vec![pick as f64]
    }

    fn step(&self, t: usize, s: &[f64], a: &Action, rng: &mut SimRng) -> Result<(State, f64)> {
        if t >= self.horizon {
            return Err(Error::Argument(format!("t={t} beyond horizon {}", self.horizon)));
        }
        let Action::Discrete(a) = *a else {
            return Err(Error::Argument("tabular MDP needs a discrete action".into()));
        };
        let (next, cost) = self.sample_transition(s[0] as usize, a, rng)?;
        Ok((vec![next as f64], cost))
    }

    fn cost_bounds(&self) -> Option<CostBounds> {
        let t = self.horizon as f64;
        let (lo, hi) = (t * self.min_cost(), t * self.max_cost());
        let pad = 0.05 * (hi - lo).max(1.0);
        Some(CostBounds { lo: lo - pad, hi: hi + pad })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn two_state() -> TabularMdp {
        TabularMdp {
            n_states: 2,
            n_actions: 2,
            horizon: 2,
            p: vec![vec![vec![1.0, 0.0], vec![0.3, 0.7]], vec![vec![0.5, 0.5], vec![0.0, 1.0]]],
            c: vec![vec![vec![0.0, 1.0], vec![2.0, 3.0]], vec![vec![4.0, 5.0], vec![6.0, 7.0]]],
            init: None,
        }
    }

    #[test]
    fn deterministic_row_always_lands() {
        let mdp = two_state();
        let mut rng = stream(1, 0, 0);
        for _ in 0..100 {
            assert_eq!(mdp.sample_transition(0, 0, &mut rng).unwrap(), (0, 0.0));
        }
    }

    #[test]
    fn frequencies_within_multinomial_band() {
        let mdp = two_state();
        let mut rng = stream(2, 0, 0);
        let n = 100_000;
        let hits = (0..n).filter(|_| mdp.sample_transition(0, 1, &mut rng).unwrap().0 == 1).count();
        let (p, nf) = (0.7, n as f64);
        let band = 3.0 * (p * (1.0 - p) / nf).sqrt();
        assert!((hits as f64 / nf - p).abs() < band);
    }

    #[test]
    fn single_state_cost_exact() {
        let mdp = TabularMdp {
            n_states: 1,
            n_actions: 2,
            horizon: 1,
            p: vec![vec![vec![1.0], vec![1.0]]],
            c: vec![vec![vec![0.25], vec![1.5]]],
            init: None,
        };
        let mut rng = stream(0, 0, 0);
        assert_eq!(mdp.step(0, &[0.0], &Action::Discrete(1), &mut rng).unwrap(), (vec![0.0], 1.5));
    }

    #[test]
    fn index_errors() {
        let mdp = two_state();
        let mut rng = stream(0, 0, 0);
        assert!(mdp.sample_transition(2, 0, &mut rng).is_err());
        assert!(mdp.sample_transition(0, 2, &mut rng).is_err());
    }

    #[test]
    fn json_round_trip_and_validation() {
        let mdp = two_state();
        let text = serde_json::to_string(&mdp).unwrap();
        assert!(text.contains("\"T\":2"));
        assert_eq!(TabularMdp::from_json_str(&text).unwrap(), mdp);
        let mut bad = mdp.clone();
        bad.p[0][1] = vec![0.3, 0.6];
        assert!(bad.validate().is_err());
        let mut neg = mdp;
        neg.p[0][1] = vec![1.2, -0.2];
        assert!(neg.validate().is_err());
    }
}
