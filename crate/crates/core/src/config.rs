//! Run configuration: a TOML file with `[risk]`, `[env]`, `[net]`, `[train]`,
//! `[eval]` and `[oracle]` sections. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::algo::{NetConfig, TrainConfig};
use crate::env::{ArbitrageEnv, ArbitrageParams, Environment, TabularMdp};
use crate::error::{Error, Result};
use crate::scoring::{Interval, RiskKind, RiskSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskConfig {
    pub kind: RiskKind,
    #[serde(default = "RiskConfig::default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default = "RiskConfig::default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub upsilon_lo: Option<f64>,
    #[serde(default)]
    pub upsilon_hi: Option<f64>,
}

impl RiskConfig {
    fn default_alpha() -> f64 {
        0.8
    }

    fn default_gamma() -> f64 {
        1.0
    }

    pub fn spec(&self) -> Result<RiskSpec> {
        let upsilon_bracket = match (self.upsilon_lo, self.upsilon_hi) {
            (Some(lo), Some(hi)) => Some(Interval::new(lo, hi).map_err(|e| Error::Config(e.to_string()))?),
            (None, None) => None,
            _ => return Err(Error::Config("risk.upsilon_lo and risk.upsilon_hi must be given together".into())),
        };
        let spec = RiskSpec { kind: self.kind, alpha: self.alpha, lambda: self.lambda, gamma: self.gamma, upsilon_bracket };
        spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Arbitrage,
    Tabular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub kind: EnvKind,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default, rename = "T")]
    pub horizon: Option<usize>,
    /// JSON file of a tabular MDP, relative to the config file.
    #[serde(default)]
    pub tabular_path: Option<PathBuf>,
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub phi: Option<f64>,
    #[serde(default)]
    pub psi: Option<f64>,
    #[serde(default)]
    pub q_max: Option<f64>,
    #[serde(default)]
    pub a_max: Option<f64>,
}

/// A constructed environment.
#[derive(Debug, Clone)]
pub enum EnvModel {
    Arbitrage(ArbitrageEnv),
    Tabular(TabularMdp),
}

impl EnvModel {
    pub fn as_env(&self) -> &dyn Environment {
        match self {
            EnvModel::Arbitrage(e) => e,
            EnvModel::Tabular(m) => m,
        }
    }

    pub fn tabular(&self) -> Option<&TabularMdp> {
        match self {
            EnvModel::Tabular(m) => Some(m),
            EnvModel::Arbitrage(_) => None,
        }
    }

    /// Start states for value curves: every tabular state, or prices at
    /// `mu` and one initial standard deviation either side with zero inventory.
    pub fn probe_states(&self) -> Vec<Vec<f64>> {
        match self {
            EnvModel::Tabular(m) => (0..m.n_states).map(|s| vec![s as f64]).collect(),
            EnvModel::Arbitrage(e) => {
                let (mu, sd) = (e.params.mu, e.params.initial_price_std());
                vec![vec![mu - sd, 0.0], vec![mu, 0.0], vec![mu + sd, 0.0]]
            }
        }
    }

    /// Serializable description used for hashing.
    fn fingerprint(&self) -> serde_json::Value {
        match self {
            EnvModel::Arbitrage(e) => serde_json::json!({ "arbitrage": e.params }),
            EnvModel::Tabular(m) => serde_json::json!({ "tabular": m }),
        }
    }
}

impl EnvConfig {
    pub fn build(&self, base_dir: &Path) -> Result<EnvModel> {
        match self.kind {
            EnvKind::Arbitrage => {
                if self.tabular_path.is_some() {
                    return Err(Error::Config("env.tabular_path is only valid with env.kind = \"tabular\"".into()));
                }
                let d = ArbitrageParams::default();
                let params = ArbitrageParams {
                    kappa: self.kappa.unwrap_or(d.kappa),
                    mu: self.mu.unwrap_or(d.mu),
                    sigma: self.sigma.unwrap_or(d.sigma),
                    phi: self.phi.unwrap_or(d.phi),
                    psi: self.psi.unwrap_or(d.psi),
                    horizon: self.horizon.unwrap_or(d.horizon),
                    q_max: self.q_max.unwrap_or(d.q_max),
                    a_max: self.a_max.unwrap_or(d.a_max),
                    dt: self.dt.unwrap_or(d.dt),
                };
                let env = ArbitrageEnv::new(params).map_err(|e| Error::Config(e.to_string()))?;
                Ok(EnvModel::Arbitrage(env))
            }
            EnvKind::Tabular => {
                let extra = [self.dt, self.kappa, self.mu, self.sigma, self.phi, self.psi, self.q_max, self.a_max];
                if extra.iter().any(Option::is_some) {
                    return Err(Error::Config("arbitrage parameters are not valid with env.kind = \"tabular\"".into()));
                }
                let rel = self
                    .tabular_path
                    .as_ref()
                    .ok_or_else(|| Error::Config("env.kind = \"tabular\" needs env.tabular_path".into()))?;
                let path = base_dir.join(rel);
                let mut mdp = match TabularMdp::load(&path) {
                    Err(Error::Io { path, source }) => return Err(Error::Io { path, source }),
                    Err(e) => return Err(Error::Config(format!("{}: {e}", path.display()))),
                    Ok(m) => m,
                };
                if let Some(t) = self.horizon {
                    if t == 0 {
                        return Err(Error::Config("env.T must be >= 1".into()));
                    }
                    mdp.horizon = t;
                }
                Ok(EnvModel::Tabular(mdp))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub n_episodes: usize,
    pub seed: u64,
    pub greedy: bool,
    pub bins: usize,
    /// Monte Carlo episodes per point of the value curve.
    pub mc_episodes: usize,
    /// Points of the upsilon grid for the value curve.
    pub upsilon_points: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { n_episodes: 50_000, seed: 12345, greedy: false, bins: 101, mc_episodes: 2000, upsilon_points: 21 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub grid_n: usize,
    pub stages: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { grid_n: crate::oracle::DEFAULT_GRID_N, stages: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub risk: RiskConfig,
    pub env: EnvConfig,
    #[serde(default)]
    pub net: NetConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    /// Output directory, relative to the working directory.
    #[serde(default)]
    pub out: Option<PathBuf>,
}

/// A parsed configuration together with everything built from it.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub spec: RiskSpec,
    pub env: EnvModel,
    /// Hex digest identifying the model-defining parts of the configuration.
    pub hash: String,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Validates every section and builds the environment; `base_dir`
    /// anchors relative paths inside the file.
    pub fn resolve(self, base_dir: &Path) -> Result<Resolved> {
        let spec = self.risk.spec()?;
        self.net.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.train.validate()?;
        if self.eval.n_episodes == 0 || self.eval.bins == 0 || self.eval.mc_episodes == 0 || self.eval.upsilon_points < 2 {
            return Err(Error::Config("eval.n_episodes, eval.bins, eval.mc_episodes must be >= 1 and eval.upsilon_points >= 2".into()));
        }
        if self.oracle.grid_n < 2 || self.oracle.stages == 0 {
            return Err(Error::Config("oracle.grid_n must be >= 2 and oracle.stages >= 1".into()));
        }
        let env = self.env.build(base_dir)?;
        if spec.kind == RiskKind::Evar {
            if let EnvModel::Arbitrage(_) = env {
                return Err(Error::Config("evar needs nonnegative costs; the arbitrage environment has signed costs".into()));
            }
            if let EnvModel::Tabular(m) = &env {
                if m.min_cost() < 0.0 {
                    return Err(Error::Config("evar needs nonnegative costs".into()));
                }
            }
        }
        let hash = config_hash(&spec, &env, &self.net);
        Ok(Resolved { config: self, spec, env, hash })
    }
}

/// SHA-256 over the risk objective, the environment and the network shape.
pub fn config_hash(spec: &RiskSpec, env: &EnvModel, net: &NetConfig) -> String {
    let doc = serde_json::json!({
        "risk": spec,
        "env": env.fingerprint(),
        "hidden": net.hidden,
    });
    let digest = Sha256::digest(doc.to_string().as_bytes());
    hex::encode(&digest[..8])
}
