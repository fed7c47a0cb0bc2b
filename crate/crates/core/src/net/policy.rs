use std::f64::consts::{LN_2, PI};
use std::sync::Once;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, Tape};
use crate::env::{Action, ActionSpace};
use crate::error::{Error, Result};
use crate::rng::SimRng;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Boundary actions are pulled this far inside `(-a_max, a_max)` before inversion.
const EDGE_TOL: f64 = 1e-6;

static EDGE_WARNING: Once = Once::new();

/// Output head interpreting the raw network outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PolicyHead {
    /// Outputs `[mean_1..mean_d, log_std_1..log_std_d]`; actions are
    /// `a_max * tanh(u)` with `u ~ N(mean, std^2)`.
    SquashedGaussian { a_max: Vec<f64> },
    /// Outputs one logit per action.
    Categorical { n: usize },
}

impl PolicyHead {
    pub fn for_space(space: &ActionSpace) -> Result<Self> {
        match space {
            ActionSpace::Discrete(n) => Ok(PolicyHead::Categorical { n: *n }),
            ActionSpace::Box { low, high } => {
                let mut a_max = Vec::with_capacity(low.len());
                for (&lo, &hi) in low.iter().zip(high) {
                    if (lo + hi).abs() > 1e-12 || hi <= 0.0 {
                        return Err(Error::Unsupported("squashed policy needs symmetric bounds".into()));
                    }
                    a_max.push(hi);
                }
                Ok(PolicyHead::SquashedGaussian { a_max })
            }
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            PolicyHead::SquashedGaussian { a_max } => 2 * a_max.len(),
            PolicyHead::Categorical { n } => *n,
        }
    }
}

/// Stochastic policy `pi(a | t, upsilon, s, y)` over encoded inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyNet {
    pub mlp: Mlp,
    pub head: PolicyHead,
}

fn clamp_log_std(raw: f64) -> (f64, bool) {
    if raw < LOG_STD_MIN {
        (LOG_STD_MIN, true)
    } else if raw > LOG_STD_MAX {
        (LOG_STD_MAX, true)
    } else {
        (raw, false)
    }
}

/// `log(1 - tanh(u)^2)` without cancellation for large `|u|`.
fn log_sech2(u: f64) -> f64 {
    let x = -2.0 * u.abs();
    2.0 * (LN_2 - u.abs() - x.exp().ln_1p())
}

fn log_softmax(logits: &[f64], out: &mut Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    out.clear();
    out.extend(logits.iter().map(|z| z - lse));
}

impl PolicyNet {
    pub fn new(mlp: Mlp, head: PolicyHead) -> Result<Self> {
        if mlp.output_dim() != head.output_dim() {
            return Err(Error::Shape { expected: head.output_dim(), got: mlp.output_dim() });
        }
        Ok(PolicyNet { mlp, head })
    }

    /// Categorical probabilities (discrete head only).
    pub fn probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        let PolicyHead::Categorical { .. } = self.head else {
            return Err(Error::Unsupported("probabilities need a categorical head".into()));
        };
        let out = self.mlp.predict(x);
        let mut lp = Vec::new();
        log_softmax(&out, &mut lp);
        Ok(lp.into_iter().map(f64::exp).collect())
    }

    /// Per-dimension `(mean, log_std)` of the pre-squash Gaussian.
    pub fn gaussian_params(&self, x: &[f64]) -> Result<Vec<(f64, f64)>> {
        let PolicyHead::SquashedGaussian { a_max } = &self.head else {
            return Err(Error::Unsupported("gaussian parameters need a continuous head".into()));
        };
        let out = self.mlp.predict(x);
        let d = a_max.len();
        Ok((0..d).map(|i| (out[i], clamp_log_std(out[d + i]).0)).collect())
    }

    pub fn sample(&self, x: &[f64], rng: &mut SimRng, tape: &mut Tape) -> (Action, f64) {
        let out = self.mlp.forward(x, tape);
        match &self.head {
            PolicyHead::Categorical { .. } => {
                let mut lp = Vec::with_capacity(out.len());
                log_softmax(out, &mut lp);
                let u: f64 = rng.gen();
                let mut cum = 0.0;
                let mut pick = lp.len() - 1;
                for (i, l) in lp.iter().enumerate() {
                    cum += l.exp();
                    if u < cum {
                        pick = i;
                        break;
                    }
                }
                (Action::Discrete(pick), lp[pick])
            }
            PolicyHead::SquashedGaussian { a_max } => {
                let d = a_max.len();
                let mut action = Vec::with_capacity(d);
                let mut logp = 0.0;
                for i in 0..d {
                    let (log_std, _) = clamp_log_std(out[d + i]);
                    let z: f64 = StandardNormal.sample(rng);
                    let u = out[i] + log_std.exp() * z;
                    logp += -0.5 * z * z - log_std - 0.5 * (2.0 * PI).ln() - a_max[i].ln() - log_sech2(u);
                    action.push(a_max[i] * u.tanh());
                }
                (Action::Continuous(action), logp)
            }
        }
    }

    /// Deterministic action: the most likely category, or `a_max * tanh(mean)`.
    pub fn greedy(&self, x: &[f64]) -> Action {
        let out = self.mlp.predict(x);
        match &self.head {
            PolicyHead::Categorical { .. } => {
                let best = out.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap_or(0);
                Action::Discrete(best)
            }
            PolicyHead::SquashedGaussian { a_max } => {
                Action::Continuous(a_max.iter().enumerate().map(|(i, m)| m * out[i].tanh()).collect())
            }
        }
    }

    /// Expected action `E[a_max tanh(u)]` per dimension, by trapezoidal
    /// integration against the Gaussian density on `[-8, 8]` standard deviations.
    pub fn mean_action(&self, x: &[f64]) -> Result<Vec<f64>> {
        let params = self.gaussian_params(x)?;
        let PolicyHead::SquashedGaussian { a_max } = &self.head else { unreachable!() };
        const N: usize = 257;
        let h = 16.0 / (N - 1) as f64;
        Ok(params
            .iter()
            .zip(a_max)
            .map(|(&(m, ls), &am)| {
                let s = ls.exp();
                let mut acc = 0.0;
                for k in 0..N {
                    let z = -8.0 + h * k as f64;
                    let w = if k == 0 || k + 1 == N { 0.5 } else { 1.0 };
                    acc += w * (-0.5 * z * z).exp() * (m + s * z).tanh();
                }
                am * acc * h / (2.0 * PI).sqrt()
            })
            .collect())
    }

    /// `log pi(a | x)`.
    pub fn log_prob(&self, x: &[f64], a: &Action) -> Result<f64> {
        let mut tape = Tape::default();
        let mut scratch = vec![0.0; self.mlp.n_params()];
        self.log_prob_grad(x, a, 0.0, &mut scratch, &mut tape)
    }

    /// Returns `log pi(a | x)` and accumulates `scale * grad_theta log pi(a | x)`
    /// into `grad`.
    pub fn log_prob_grad(&self, x: &[f64], a: &Action, scale: f64, grad: &mut [f64], tape: &mut Tape) -> Result<f64> {
        let out = self.mlp.forward(x, tape).to_vec();
        let mut dout = vec![0.0; out.len()];
        let logp = match (&self.head, a) {
            (PolicyHead::Categorical { n }, Action::Discrete(i)) => {
                if i >= n {
                    return Err(Error::Argument(format!("action {i} out of {n}")));
                }
                let mut lp = Vec::with_capacity(*n);
                log_softmax(&out, &mut lp);
                for j in 0..*n {
                    dout[j] = scale * (if j == *i { 1.0 } else { 0.0 } - lp[j].exp());
                }
                lp[*i]
            }
            (PolicyHead::SquashedGaussian { a_max }, Action::Continuous(v)) if v.len() == a_max.len() => {
                let d = a_max.len();
                let mut logp = 0.0;
                for i in 0..d {
                    let mut r = v[i] / a_max[i];
                    if r.abs() > 1.0 - EDGE_TOL {
                        EDGE_WARNING.call_once(|| log::warn!("boundary action clipped before inversion"));
                        r = r.clamp(-1.0 + EDGE_TOL, 1.0 - EDGE_TOL);
                    }
                    let u = r.atanh();
                    let mean = out[i];
                    let (log_std, clamped) = clamp_log_std(out[d + i]);
                    let inv_var = (-2.0 * log_std).exp();
                    let diff = u - mean;
                    logp += -0.5 * diff * diff * inv_var - log_std - 0.5 * (2.0 * PI).ln() - a_max[i].ln() - log_sech2(u);
                    dout[i] = scale * diff * inv_var;
                    if !clamped {
                        dout[d + i] = scale * (diff * diff * inv_var - 1.0);
                    }
                }
                logp
            }
            _ => return Err(Error::Argument(format!("action {a:?} does not match policy head"))),
        };
        if scale != 0.0 {
            self.mlp.backward(tape, &dout, grad, None);
        }
        Ok(logp)
    }
}
