//! Auxiliary-variable search, exploration sampling and schedules.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::net::{InputEncoding, Tape, ValueNet};
use crate::rng::SimRng;
use crate::scoring::{lower_quantile, Interval, RiskKind, RiskSpec};

/// The map `u -> (V_m(u), dV_m/du)` for a set of start points `m`.
pub trait UpsilonSurface {
    fn eval(&self, u: f64, out: &mut Vec<(f64, f64)>) -> Result<()>;
}

impl<F> UpsilonSurface for F
where
    F: Fn(f64, &mut Vec<(f64, f64)>) -> Result<()>,
{
    fn eval(&self, u: f64, out: &mut Vec<(f64, f64)>) -> Result<()> {
        self(u, out)
    }
}

/// Critic values `V(0, u, s0_m, 0)` at fixed start states.
pub struct CriticSurface<'a> {
    pub value: &'a ValueNet,
    pub encoding: &'a InputEncoding,
    pub features: Vec<Vec<f64>>,
}

impl<'a> CriticSurface<'a> {
    pub fn new(env: &dyn Environment, value: &'a ValueNet, encoding: &'a InputEncoding, states: &[Vec<f64>]) -> Self {
        let features = states
            .iter()
            .map(|s| {
                let mut f = Vec::new();
                env.features(s, &mut f);
                f
            })
            .collect();
        CriticSurface { value, encoding, features }
    }
}

impl UpsilonSurface for CriticSurface<'_> {
    fn eval(&self, u: f64, out: &mut Vec<(f64, f64)>) -> Result<()> {
        out.clear();
        let mut x = Vec::with_capacity(self.encoding.input_dim());
        let mut tape = Tape::default();
        for f in &self.features {
            self.encoding.encode(0, u, f, 0.0, &mut x)?;
            out.push(self.value.eval_with_upsilon_grad(&x, self.encoding, &mut tape));
        }
        Ok(())
    }
}

/// Lower bound applied to the first argument of a logarithmic `h`, whose
/// critic estimate may stray below zero.
const LOG_H_FLOOR: f64 = 1e-12;

/// `(1/M) sum_m h(V_m(u), u)` and its derivative in `u`.
pub fn upsilon_objective(spec: &RiskSpec, surface: &dyn UpsilonSurface, u: f64, scratch: &mut Vec<(f64, f64)>) -> Result<(f64, f64)> {
    surface.eval(u, scratch)?;
    if scratch.is_empty() {
        return Err(Error::Argument("upsilon search needs at least one start state".into()));
    }
    let logarithmic = !spec.kind.has_identity_transform();
    let m = scratch.len() as f64;
    let (mut obj, mut grad) = (0.0, 0.0);
    for &(v, dv) in scratch.iter() {
        let x = if logarithmic { v.max(LOG_H_FLOOR) } else { v };
        let (hx, hu) = spec.h_partials(x, u)?;
        obj += spec.eval_h(x, u)? / m;
        grad += (hx * dv + hu) / m;
    }
    Ok((obj, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpsilonSearch {
    pub upsilon: f64,
    pub objective: f64,
}

/// Projected SGD on `u` with step `lr / sqrt(k)`, started at `init`.
/// Returns the best iterate seen.
pub fn search_upsilon(
    spec: &RiskSpec,
    surface: &dyn UpsilonSurface,
    bracket: Interval,
    init: f64,
    iters: usize,
    lr: f64,
) -> Result<UpsilonSearch> {
    let mut scratch = Vec::new();
    let mut u = bracket.clamp(init);
    let (obj, mut grad) = upsilon_objective(spec, surface, u, &mut scratch)?;
    let mut best = UpsilonSearch { upsilon: u, objective: obj };
    for k in 1..=iters {
        if !grad.is_finite() {
            return Err(Error::NonFinite(format!("upsilon gradient at u={u}")));
        }
        u = bracket.clamp(u - lr / (k as f64).sqrt() * grad);
        let (obj, g) = upsilon_objective(spec, surface, u, &mut scratch)?;
        if !obj.is_finite() {
            return Err(Error::NonFinite(format!("upsilon objective at u={u}")));
        }
        if obj < best.objective {
            best = UpsilonSearch { upsilon: u, objective: obj };
        }
        grad = g;
    }
    Ok(best)
}

/// Quantile rule for ES-family objectives: the lower empirical
/// alpha-quantile of total costs.
pub fn es_quantile_update(costs: &[f64], alpha: f64) -> Result<f64> {
    lower_quantile(costs, alpha)
}

/// Exploration schedule of the auxiliary variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpsilonState {
    pub upsilon_star: f64,
    pub sigma2: f64,
    /// Epochs between updates of `upsilon_star`.
    pub period: usize,
    /// Epochs since the last update.
    pub counter: usize,
    pub stage: usize,
}

impl UpsilonState {
    pub fn new(upsilon_star: f64, sigma2: f64, period: usize) -> Self {
        UpsilonState { upsilon_star, sigma2, period: period.max(1), counter: 0, stage: 0 }
    }

    /// Counts one epoch; true when an update of `upsilon_star` is due.
    pub fn tick(&mut self) -> bool {
        self.counter += 1;
        self.counter >= self.period
    }

    /// Installs a new `upsilon_star` and shrinks period and variance.
    pub fn advance(&mut self, upsilon_star: f64, decay: f64, sigma2_floor: f64) {
        self.upsilon_star = upsilon_star;
        self.period = ((decay * self.period as f64).ceil() as usize).max(1);
        self.sigma2 = (decay * self.sigma2).max(sigma2_floor);
        self.counter = 0;
        self.stage += 1;
    }
}

/// Draw from `N(upsilon_star, sigma2)` clipped to `bracket`.
pub fn sample_upsilon(state: &UpsilonState, bracket: Interval, rng: &mut SimRng) -> f64 {
    bracket.clamp(sample_upsilon_unclipped(state, rng))
}

pub fn sample_upsilon_unclipped(state: &UpsilonState, rng: &mut SimRng) -> f64 {
    match Normal::new(state.upsilon_star, state.sigma2.sqrt()) {
        Ok(d) => d.sample(rng),
        Err(_) => state.upsilon_star,
    }
}

/// Whether the objective depends on `u` at all.
pub fn upsilon_matters(kind: RiskKind) -> bool {
    !matches!(kind, RiskKind::Expectation | RiskKind::Entropic)
}
