use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Action, ActionSpace, Environment, State};
use crate::error::{Error, Result};
use crate::rng::SimRng;

/// Mean-reverting single-asset trading problem.
///
/// The price follows an Ornstein-Uhlenbeck process sampled exactly at period
/// length `dt`; the state is `(price, inventory)`. The cost of step `t` is the
/// wealth decrease `X_t - X_{t+1}`, so the episode cost is `-X_T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArbitrageParams {
    pub kappa: f64,
    pub mu: f64,
    pub sigma: f64,
    /// Quadratic transaction cost coefficient.
    pub phi: f64,
    /// Terminal inventory penalty coefficient.
    pub psi: f64,
    pub horizon: usize,
    pub q_max: f64,
    pub a_max: f64,
    pub dt: f64,
}

impl Default for ArbitrageParams {
    fn default() -> Self {
        ArbitrageParams {
            kappa: 2.0,
            mu: 1.0,
            sigma: 0.2,
            phi: 0.005,
            psi: 0.5,
            horizon: 5,
            q_max: 5.0,
            a_max: 2.0,
            dt: 0.2,
        }
    }
}

impl ArbitrageParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [("kappa", self.kappa), ("sigma", self.sigma), ("dt", self.dt), ("q_max", self.q_max), ("a_max", self.a_max)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("arbitrage {name} must be > 0, got {v}")));
            }
        }
        if !(self.phi >= 0.0 && self.psi >= 0.0) {
            return Err(Error::Config("arbitrage phi and psi must be >= 0".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        Ok(())
    }

    /// Standard deviation of the initial price, `sqrt(8 sigma^2 / kappa)`.
    pub fn initial_price_std(&self) -> f64 {
        (8.0 * self.sigma * self.sigma / self.kappa).sqrt()
    }

    /// Mean-reversion factor `exp(-kappa dt)` of one period.
    pub fn decay(&self) -> f64 {
        (-self.kappa * self.dt).exp()
    }

    /// Conditional standard deviation of the price after one period.
    pub fn step_std(&self) -> f64 {
        self.sigma * ((1.0 - (-2.0 * self.kappa * self.dt).exp()) / (2.0 * self.kappa)).sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct ArbitrageEnv {
    pub params: ArbitrageParams,
}

impl ArbitrageEnv {
    pub fn new(params: ArbitrageParams) -> Result<Self> {
        params.validate()?;
        Ok(ArbitrageEnv { params })
    }

    /// Transition with the Gaussian innovation supplied explicitly.
    pub fn step_with_noise(&self, t: usize, s: &[f64], trade: f64, z: f64) -> Result<(State, f64)> {
        let p = &self.params;
        if !(trade.abs() <= p.a_max + 1e-12) {
            return Err(Error::Argument(format!("trade {trade} outside [-{0}, {0}]", p.a_max)));
        }
        if t >= p.horizon {
            return Err(Error::Argument(format!("t={t} beyond horizon {}", p.horizon)));
        }
        let (price, inventory) = (s[0], s[1]);
        let inventory_next = (inventory + trade).clamp(-p.q_max, p.q_max);
        let price_next = p.mu + (price - p.mu) * p.decay() + p.step_std() * z;
        let mut cost = -inventory_next * (price_next - price) + p.phi * trade * trade;
        if t + 1 == p.horizon {
            cost += p.psi * inventory_next * inventory_next;
        }
        Ok((vec![price_next, inventory_next], cost))
    }
}

impl Environment for ArbitrageEnv {
    fn horizon(&self) -> usize {
        self.params.horizon
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Box { low: vec![-self.params.a_max], high: vec![self.params.a_max] }
    }

    fn feature_dim(&self) -> usize {
        2
    }

    fn features(&self, s: &[f64], out: &mut Vec<f64>) {
        out.extend_from_slice(&s[..2]);
    }

    fn feature_normalization(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![self.params.mu, 0.0], vec![self.params.initial_price_std(), self.params.q_max])
    }

    fn reset(&self, rng: &mut SimRng) -> State {
        let p = &self.params;
        let z: f64 = StandardNormal.sample(rng);
        let price = p.mu + p.initial_price_std() * z;
        let inventory = rng.gen_range(-p.q_max..p.q_max);
        vec![price, inventory]
    }

    fn step(&self, t: usize, s: &[f64], a: &Action, rng: &mut SimRng) -> Result<(State, f64)> {
        self.action_space().check(a)?;
        let Action::Continuous(v) = a else { unreachable!("checked above") };
        let z: f64 = StandardNormal.sample(rng);
        self.step_with_noise(t, s, v[0], z)
    }
}
