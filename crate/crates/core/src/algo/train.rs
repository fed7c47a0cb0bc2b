use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::buffer::ReplayBuffer;
use super::steps::{actor_step, critic_step, StepContext};
use super::upsilon::{es_quantile_update, sample_upsilon, search_upsilon, upsilon_matters, CriticSurface, UpsilonState};
use crate::env::{simulate_episode, total_cost, Action, Environment, Policy};
use crate::error::{Error, Result};
use crate::net::{Adam, Checkpoint, InputEncoding, Mlp, PolicyHead, PolicyNet, Tape, ValueNet, CHECKPOINT_VERSION};
use crate::rng::{domain, stream, SimRng};
use crate::scoring::{CostBounds, Interval, RiskSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub hidden: Vec<usize>,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub seed: u64,
    /// Scale of the policy's output layer at initialization.
    pub policy_init_scale: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig { hidden: vec![64, 64, 64], lr_actor: 1e-3, lr_critic: 1e-3, seed: 0, policy_init_scale: 0.01 }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("net.hidden entries must be positive".into()));
        }
        if !(self.lr_actor > 0.0 && self.lr_critic > 0.0) {
            return Err(Error::Config("net.lr_actor and net.lr_critic must be positive".into()));
        }
        if !(self.policy_init_scale > 0.0) {
            return Err(Error::Config("net.policy_init_scale must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Episodes per epoch.
    #[serde(rename = "N")]
    pub episodes: usize,
    /// Outer epochs.
    #[serde(rename = "K")]
    pub epochs: usize,
    /// Batch size per time index.
    #[serde(rename = "B")]
    pub batch: usize,
    /// Start states for the auxiliary-variable search.
    #[serde(rename = "M")]
    pub upsilon_samples: usize,
    /// Initial number of epochs between auxiliary-variable updates.
    #[serde(rename = "L")]
    pub period: usize,
    pub sigma2: f64,
    pub sigma2_floor: f64,
    pub decay: f64,
    pub es_shortcut: bool,
    pub seed: u64,
    /// Adam steps per critic update.
    pub critic_epochs: usize,
    /// Adam steps per actor update.
    pub actor_epochs: usize,
    pub upsilon_iters: usize,
    pub upsilon_lr: f64,
    /// Subtract the frozen critic's value from the policy-gradient weight.
    pub baseline: bool,
    /// Starting value of the auxiliary variable; the bracket midpoint when unset.
    pub upsilon_init: Option<f64>,
    /// Random-policy episodes used to estimate cost bounds when the
    /// environment does not provide them.
    pub bounds_episodes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes: 256,
            epochs: 300,
            batch: 128,
            upsilon_samples: 256,
            period: 5,
            sigma2: 0.1,
            sigma2_floor: 1e-3,
            decay: 0.8,
            es_shortcut: true,
            seed: 0,
            critic_epochs: 10,
            actor_epochs: 1,
            upsilon_iters: 100,
            upsilon_lr: 0.1,
            baseline: false,
            upsilon_init: None,
            bounds_episodes: 100_000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("train.N", self.episodes),
            ("train.K", self.epochs),
            ("train.B", self.batch),
            ("train.M", self.upsilon_samples),
            ("train.L", self.period),
            ("train.critic_epochs", self.critic_epochs),
            ("train.actor_epochs", self.actor_epochs),
            ("train.bounds_episodes", self.bounds_episodes),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config(format!("train.decay must lie in (0, 1], got {}", self.decay)));
        }
        if !(self.sigma2_floor > 0.0 && self.sigma2 >= self.sigma2_floor) {
            return Err(Error::Config("need 0 < train.sigma2_floor <= train.sigma2".into()));
        }
        if !(self.upsilon_lr > 0.0) {
            return Err(Error::Config("train.upsilon_lr must be positive".into()));
        }
        Ok(())
    }
}

/// Actor, critic, their optimizers and the input encoding.
#[derive(Debug, Clone)]
pub struct Agent {
    pub encoding: InputEncoding,
    pub bracket: Interval,
    pub value: ValueNet,
    pub policy: PolicyNet,
    pub value_opt: Adam,
    pub policy_opt: Adam,
}

impl Agent {
    pub fn new(env: &dyn Environment, bracket: Interval, bounds: CostBounds, net: &NetConfig) -> Result<Self> {
        net.validate()?;
        let (offsets, scales) = env.feature_normalization();
        let encoding = InputEncoding::new(env.horizon(), bracket, bounds, offsets, scales)?;
        let head = PolicyHead::for_space(&env.action_space())?;
        let mut sizes = vec![encoding.input_dim()];
        sizes.extend(&net.hidden);
        let mut rng = stream(net.seed, domain::NET_INIT, 0);
        sizes.push(1);
        let value = ValueNet::new(Mlp::new(&sizes, 1.0, &mut rng)?)?;
        *sizes.last_mut().unwrap() = head.output_dim();
        let policy = PolicyNet::new(Mlp::new(&sizes, net.policy_init_scale, &mut rng)?, head)?;
        let value_opt = Adam::new(value.mlp.n_params(), net.lr_critic);
        let policy_opt = Adam::new(policy.mlp.n_params(), net.lr_actor);
        Ok(Agent { encoding, bracket, value, policy, value_opt, policy_opt })
    }

    pub fn net_policy<'a>(&'a self, env: &'a dyn Environment, greedy: bool) -> NetPolicy<'a> {
        NetPolicy { env, encoding: &self.encoding, policy: &self.policy, greedy }
    }

    pub fn to_checkpoint(&self, spec: &RiskSpec, upsilon_star: f64, config_hash: &str) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config_hash: config_hash.to_string(),
            risk: *spec,
            upsilon_star,
            encoding: self.encoding.clone(),
            value: self.value.clone(),
            policy: self.policy.clone(),
        }
    }
}

/// The policy network as an environment policy on raw states.
pub struct NetPolicy<'a> {
    pub env: &'a dyn Environment,
    pub encoding: &'a InputEncoding,
    pub policy: &'a PolicyNet,
    /// Use the most likely action instead of sampling.
    pub greedy: bool,
}

impl NetPolicy<'_> {
    pub fn encode(&self, t: usize, upsilon: f64, s: &[f64], y: f64) -> Result<Vec<f64>> {
        let mut f = Vec::with_capacity(self.env.feature_dim());
        self.env.features(s, &mut f);
        let mut x = Vec::with_capacity(self.encoding.input_dim());
        self.encoding.encode(t, upsilon, &f, y, &mut x)?;
        Ok(x)
    }
}

impl Policy for NetPolicy<'_> {
    fn act(&self, t: usize, upsilon: f64, s: &[f64], y: f64, rng: &mut SimRng) -> Action {
        let x = match self.encode(t, upsilon, s, y) {
            Ok(x) => x,
            // unreachable for finite states; the step that follows reports the problem
            Err(_) => vec![f64::NAN; self.encoding.input_dim()],
        };
        if self.greedy {
            self.policy.greedy(&x)
        } else {
            self.policy.sample(&x, rng, &mut Tape::default()).0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub upsilon: f64,
    pub mean_cost: f64,
    pub objective: f64,
    pub critic_loss: f64,
}

pub const LOG_HEADER: &str = "epoch,upsilon,mean_cost,objective,critic_loss";

impl LogRow {
    pub fn csv(&self) -> String {
        format!("{},{},{},{},{}", self.epoch, self.upsilon, self.mean_cost, self.objective, self.critic_loss)
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub agent: Agent,
    pub upsilon: UpsilonState,
    pub bounds: CostBounds,
    pub log: Vec<LogRow>,
    /// Set when training stopped early on a non-finite quantity; `agent`
    /// then holds the parameters of the last completed epoch.
    pub aborted: Option<Error>,
}

impl TrainOutcome {
    pub fn upsilon_star(&self) -> f64 {
        self.upsilon.upsilon_star
    }
}

/// Cost bounds and auxiliary-variable bracket for an environment.
pub fn bounds_and_bracket(env: &dyn Environment, spec: &RiskSpec, cfg: &TrainConfig) -> Result<(CostBounds, Interval)> {
    let bounds = crate::env::estimate_cost_bounds(env, cfg.bounds_episodes, cfg.seed)?;
    let bracket = spec.upsilon_bracket(bounds)?.interval;
    Ok((bounds, bracket))
}

/// Runs the full training loop. `on_epoch` sees every log row as it is produced.
pub fn train(
    env: &dyn Environment,
    spec: &RiskSpec,
    net: &NetConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&LogRow),
) -> Result<TrainOutcome> {
    spec.validate()?;
    cfg.validate()?;
    let (bounds, bracket) = bounds_and_bracket(env, spec, cfg)?;
    let mut agent = Agent::new(env, bracket, bounds, net)?;
    let init = bracket.clamp(cfg.upsilon_init.unwrap_or(bracket.mid()));
    let mut ustate = UpsilonState::new(init, cfg.sigma2, cfg.period);
    let mut buffer = ReplayBuffer::new(env.horizon());
    let mut log = Vec::with_capacity(cfg.epochs);
    info!("training {} on bracket [{}, {}], cost bounds [{}, {}]", spec.kind.name(), bracket.lo, bracket.hi, bounds.lo, bounds.hi);

    for epoch in 0..cfg.epochs {
        let snapshot = (agent.clone(), ustate);
        match run_epoch(env, spec, cfg, epoch, &mut agent, &mut ustate, &mut buffer) {
            Ok(row) => {
                debug!("{}", row.csv());
                on_epoch(&row);
                log.push(row);
            }
            Err(e @ Error::NonFinite(_)) => {
                warn!("training aborted at epoch {epoch}: {e}");
                let (agent, ustate) = snapshot;
                return Ok(TrainOutcome { agent, upsilon: ustate, bounds, log, aborted: Some(e) });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(TrainOutcome { agent, upsilon: ustate, bounds, log, aborted: None })
}

fn run_epoch(
    env: &dyn Environment,
    spec: &RiskSpec,
    cfg: &TrainConfig,
    epoch: usize,
    agent: &mut Agent,
    ustate: &mut UpsilonState,
    buffer: &mut ReplayBuffer,
) -> Result<LogRow> {
    let bracket = agent.bracket;
    let episodes: Vec<_> = {
        let policy = agent.net_policy(env, false);
        let us = *ustate;
        (0..cfg.episodes)
            .into_par_iter()
            .map(|n| {
                let mut rng = stream(cfg.seed, domain::TRAIN_EPISODE, (epoch * cfg.episodes + n) as u64);
                let u = sample_upsilon(&us, bracket, &mut rng);
                simulate_episode(env, &policy, u, &mut rng)
            })
            .collect::<Result<_>>()?
    };
    let costs: Vec<f64> = episodes.iter().map(|ep| total_cost(ep)).collect();

    if epoch == 0 {
        // start the critic at the average terminal score of the first episodes
        let mut acc = 0.0;
        for (ep, c) in episodes.iter().zip(&costs) {
            acc += spec.eval_f(*c, ep[0].upsilon)?;
        }
        let mean = acc / costs.len() as f64;
        if mean.is_finite() {
            agent.value.mlp.output_bias_mut()[0] = mean;
        }
    }
    for ep in episodes {
        buffer.push_episode(ep)?;
    }

    let ctx = StepContext { env, encoding: &agent.encoding, spec };
    let mut rng = stream(cfg.seed, domain::BATCH, 2 * epoch as u64);
    let critic_loss = critic_step(&ctx, &mut agent.value, &mut agent.value_opt, buffer, cfg.batch, cfg.critic_epochs, &mut rng)?;
    let mut rng = stream(cfg.seed, domain::BATCH, 2 * epoch as u64 + 1);
    actor_step(&ctx, &mut agent.policy, &mut agent.policy_opt, &agent.value, buffer, cfg.batch, cfg.actor_epochs, cfg.baseline, &mut rng)?;

    if ustate.tick() {
        let next = if !upsilon_matters(spec.kind) {
            ustate.upsilon_star
        } else if cfg.es_shortcut && spec.kind.is_es_family() {
            bracket.clamp(es_quantile_update(&costs, spec.alpha)?)
        } else {
            let states: Vec<Vec<f64>> = (0..cfg.upsilon_samples)
                .map(|m| env.reset(&mut stream(cfg.seed, domain::UPSILON, (epoch * cfg.upsilon_samples + m) as u64)))
                .collect();
            let surface = CriticSurface::new(env, &agent.value, &agent.encoding, &states);
            search_upsilon(spec, &surface, bracket, ustate.upsilon_star, cfg.upsilon_iters, cfg.upsilon_lr)?.upsilon
        };
        ustate.advance(next, cfg.decay, cfg.sigma2_floor);
    }
    buffer.clear();

    let u = ustate.upsilon_star;
    let mut acc = 0.0;
    for &c in &costs {
        acc += spec.eval_f(c, u)?;
    }
    let objective = spec.eval_h(acc / costs.len() as f64, u)?;
    let mean_cost = costs.iter().sum::<f64>() / costs.len() as f64;
    Ok(LogRow { epoch, upsilon: u, mean_cost, objective, critic_loss })
}
