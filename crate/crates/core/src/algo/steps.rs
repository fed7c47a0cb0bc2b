//! Critic and actor updates on a filled replay buffer.

use super::buffer::ReplayBuffer;
use crate::env::{AugmentedTransition, Environment};
use crate::error::{Error, Result};
use crate::net::{Adam, InputEncoding, PolicyNet, Tape, ValueNet};
use crate::rng::SimRng;
use crate::scoring::RiskSpec;

/// Scratch buffers for encoding network inputs.
#[derive(Default)]
pub(crate) struct Encoder {
    features: Vec<f64>,
    pub input: Vec<f64>,
}

impl Encoder {
    pub fn encode(&mut self, env: &dyn Environment, enc: &InputEncoding, t: usize, upsilon: f64, s: &[f64], y: f64) -> Result<&[f64]> {
        self.features.clear();
        env.features(s, &mut self.features);
        enc.encode(t, upsilon, &self.features, y, &mut self.input)?;
        Ok(&self.input)
    }
}

/// Shared context of one update: the environment (for features), the input
/// encoding and the risk objective.
pub struct StepContext<'a> {
    pub env: &'a dyn Environment,
    pub encoding: &'a InputEncoding,
    pub spec: &'a RiskSpec,
}

impl StepContext<'_> {
    /// Regression target / policy-gradient weight of a transition: the terminal
    /// score `f(c - y, upsilon)` at `t = T-1`, else `V(t+1, upsilon, s', y - c)`.
    pub(crate) fn target(&self, frozen: &ValueNet, tr: &AugmentedTransition, enc: &mut Encoder, tape: &mut Tape) -> Result<f64> {
        let horizon = self.env.horizon();
        if tr.t + 1 == horizon {
            self.spec.eval_f(tr.cost - tr.y, tr.upsilon)
        } else {
            let x = enc.encode(self.env, self.encoding, tr.t + 1, tr.upsilon, &tr.s_next, tr.y - tr.cost)?;
            Ok(frozen.eval(x, tape))
        }
    }
}

fn check_finite(what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Policy evaluation: `inner_epochs` Adam steps on the mean squared error
/// between `V(t, upsilon, s, y)` and targets from a frozen copy of the critic,
/// each step using `batch` samples per time index. Returns the loss of the
/// last step.
pub fn critic_step(
    ctx: &StepContext,
    value: &mut ValueNet,
    opt: &mut Adam,
    buffer: &ReplayBuffer,
    batch: usize,
    inner_epochs: usize,
    rng: &mut SimRng,
) -> Result<f64> {
    buffer.require(batch)?;
    let frozen = value.clone();
    let horizon = ctx.env.horizon();
    let n = (batch * horizon) as f64;
    let mut grad = vec![0.0; value.mlp.n_params()];
    let mut enc = Encoder::default();
    let mut tape = Tape::default();
    let mut loss = f64::NAN;
    for _ in 0..inner_epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut total = 0.0;
        for t in (0..horizon).rev() {
            for _ in 0..batch {
                let tr = buffer.sample(t, rng);
                let target = ctx.target(&frozen, tr, &mut enc, &mut tape)?;
                let x = enc.encode(ctx.env, ctx.encoding, t, tr.upsilon, &tr.s, tr.y)?;
                let v = value.eval(x, &mut tape);
                let r = v - target;
                total += r * r / n;
                value.mlp.backward(&mut tape, &[2.0 * r / n], &mut grad, None);
            }
        }
        loss = check_finite("critic loss", total)?;
        opt.step(value.mlp.params_mut(), &grad)?;
    }
    Ok(loss)
}

/// Likelihood-ratio gradient estimate of the expected score with the critic
/// held fixed: the mean over `batch` samples per time index of
/// `grad log pi(a | t, upsilon, s, y) * G`. With `baseline` set, the frozen
/// critic's `V(t, upsilon, s, y)` is subtracted from `G`.
pub fn policy_gradient(
    ctx: &StepContext,
    policy: &PolicyNet,
    frozen: &ValueNet,
    buffer: &ReplayBuffer,
    batch: usize,
    baseline: bool,
    rng: &mut SimRng,
    grad: &mut [f64],
) -> Result<()> {
    let horizon = ctx.env.horizon();
    let n = (batch * horizon) as f64;
    let mut enc = Encoder::default();
    let mut tape = Tape::default();
    for t in (0..horizon).rev() {
        for _ in 0..batch {
            let tr = buffer.sample(t, rng);
            let mut weight = ctx.target(frozen, tr, &mut enc, &mut tape)?;
            let x = enc.encode(ctx.env, ctx.encoding, t, tr.upsilon, &tr.s, tr.y)?;
            if baseline {
                weight -= frozen.eval(x, &mut tape);
            }
            check_finite("policy-gradient weight", weight)?;
            let x = x.to_vec();
            policy.log_prob_grad(&x, &tr.a, weight / n, grad, &mut tape)?;
        }
    }
    Ok(())
}

/// Policy improvement: `inner_epochs` Adam descent steps along
/// [`policy_gradient`] with the critic frozen.
#[allow(clippy::too_many_arguments)]
pub fn actor_step(
    ctx: &StepContext,
    policy: &mut PolicyNet,
    opt: &mut Adam,
    value: &ValueNet,
    buffer: &ReplayBuffer,
    batch: usize,
    inner_epochs: usize,
    baseline: bool,
    rng: &mut SimRng,
) -> Result<()> {
    buffer.require(batch)?;
    let frozen = value.clone();
    let mut grad = vec![0.0; policy.mlp.n_params()];
    for _ in 0..inner_epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        policy_gradient(ctx, policy, &frozen, buffer, batch, baseline, rng, &mut grad)?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("policy gradient".into()));
        }
        opt.step(policy.mlp.params_mut(), &grad)?;
    }
    Ok(())
}
