//! Finite-horizon episodic environments and augmented-state simulation.
//!
//! The augmented state `y` is the negative accumulated cost: it starts at 0
//! and every step applies `y_next = y - cost`.

mod arbitrage;
mod tabular;

pub use arbitrage::{ArbitrageEnv, ArbitrageParams};
pub use tabular::TabularMdp;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::scoring::{lower_quantile, CostBounds};

pub type State = Vec<f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ActionSpace {
    Discrete(usize),
    Box { low: Vec<f64>, high: Vec<f64> },
}

impl ActionSpace {
    pub fn check(&self, a: &Action) -> Result<()> {
        match (self, a) {
            (ActionSpace::Discrete(n), Action::Discrete(i)) if i < n => Ok(()),
            (ActionSpace::Box { low, high }, Action::Continuous(v)) if v.len() == low.len() => {
                for ((&x, &lo), &hi) in v.iter().zip(low).zip(high) {
                    if !(x >= lo - 1e-12 && x <= hi + 1e-12) {
                        return Err(Error::Argument(format!("action {x} outside [{lo}, {hi}]")));
                    }
                }
                Ok(())
            }
            _ => Err(Error::Argument(format!("action {a:?} does not belong to {self:?}"))),
        }
    }

    pub fn sample_uniform(&self, rng: &mut SimRng) -> Action {
        match self {
            ActionSpace::Discrete(n) => Action::Discrete(rng.gen_range(0..*n)),
            ActionSpace::Box { low, high } => {
                Action::Continuous(low.iter().zip(high).map(|(&l, &h)| rng.gen_range(l..=h)).collect())
            }
        }
    }
}

/// Episodic environment with horizon `T` and per-step costs.
///
/// `step` must be a deterministic function of its arguments and the rng state.
pub trait Environment: Send + Sync {
    fn horizon(&self) -> usize;
    fn action_space(&self) -> ActionSpace;
    /// Length of the raw feature vector produced by [`Environment::features`].
    fn feature_dim(&self) -> usize;
    /// Raw network features of a state, before normalization.
    fn features(&self, s: &[f64], out: &mut Vec<f64>);
    /// Offsets and scales that map raw features to roughly unit range.
    fn feature_normalization(&self) -> (Vec<f64>, Vec<f64>);
    fn reset(&self, rng: &mut SimRng) -> State;
    fn step(&self, t: usize, s: &[f64], a: &Action, rng: &mut SimRng) -> Result<(State, f64)>;
    /// Known bounds on the total episode cost, if the environment has them.
    fn cost_bounds(&self) -> Option<CostBounds> {
        None
    }
}

/// One logged step of an episode on the augmented state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedTransition {
    pub t: usize,
    pub s: State,
    pub y: f64,
    pub a: Action,
    pub s_next: State,
    pub y_next: f64,
    pub cost: f64,
    pub upsilon: f64,
}

/// Decision rule on the augmented state `(t, upsilon, s, y)`.
pub trait Policy: Sync {
    fn act(&self, t: usize, upsilon: f64, s: &[f64], y: f64, rng: &mut SimRng) -> Action;
}

impl<F> Policy for F
where
    F: Fn(usize, f64, &[f64], f64, &mut SimRng) -> Action + Sync,
{
    fn act(&self, t: usize, upsilon: f64, s: &[f64], y: f64, rng: &mut SimRng) -> Action {
        self(t, upsilon, s, y, rng)
    }
}

/// Runs one episode from a freshly sampled initial state.
pub fn simulate_episode(
    env: &dyn Environment,
    policy: &dyn Policy,
    upsilon: f64,
    rng: &mut SimRng,
) -> Result<Vec<AugmentedTransition>> {
    let s0 = env.reset(rng);
    simulate_from(env, policy, s0, upsilon, rng)
}

/// Runs one episode from `s0` with `y_0 = 0`.
pub fn simulate_from(
    env: &dyn Environment,
    policy: &dyn Policy,
    s0: State,
    upsilon: f64,
    rng: &mut SimRng,
) -> Result<Vec<AugmentedTransition>> {
    rollout(env, policy, 0, s0, 0.0, upsilon, rng)
}

/// Runs the remainder of an episode from `(t0, s, y)`.
pub fn rollout(
    env: &dyn Environment,
    policy: &dyn Policy,
    t0: usize,
    s: State,
    y: f64,
    upsilon: f64,
    rng: &mut SimRng,
) -> Result<Vec<AugmentedTransition>> {
    let horizon = env.horizon();
    if t0 > horizon {
        return Err(Error::Argument(format!("start time {t0} beyond horizon {horizon}")));
    }
    let mut out = Vec::with_capacity(horizon - t0);
    let mut s = s;
    let mut y = y;
    for t in t0..horizon {
        let a = policy.act(t, upsilon, &s, y, rng);
        let (s_next, cost) = env.step(t, &s, &a, rng)?;
        let y_next = y - cost;
        out.push(AugmentedTransition { t, s, y, a, s_next: s_next.clone(), y_next, cost, upsilon });
        s = s_next;
        y = y_next;
    }
    Ok(out)
}

pub fn total_cost(episode: &[AugmentedTransition]) -> f64 {
    episode.last().map(|tr| -tr.y_next).unwrap_or(0.0)
}

/// Empirical cost bounds from uniformly random actions: the 0.001 and 0.999
/// quantiles of total cost, each side padded by half the spread.
pub fn estimate_cost_bounds(env: &dyn Environment, n_episodes: usize, seed: u64) -> Result<CostBounds> {
    if let Some(b) = env.cost_bounds() {
        return Ok(b);
    }
    let space = env.action_space();
    let random = move |_: usize, _: f64, _: &[f64], _: f64, rng: &mut SimRng| space.sample_uniform(rng);
    let mut costs = Vec::with_capacity(n_episodes);
    for i in 0..n_episodes {
        let mut rng = crate::rng::stream(seed, crate::rng::domain::BOUNDS, i as u64);
        costs.push(total_cost(&simulate_episode(env, &random, 0.0, &mut rng)?));
    }
    let lo = lower_quantile(&costs, 0.001)?;
    let hi = lower_quantile(&costs, 0.999)?;
    let pad = 0.5 * (hi - lo).max(1e-6);
    CostBounds::new(lo - pad, hi + pad)
}
