//! Small feed-forward networks for the critic `V(t, upsilon, s, y)` and the
//! actor `pi(. | t, upsilon, s, y)`, with exact reverse-mode gradients.

mod adam;
mod mlp;
mod policy;

pub use adam::Adam;
pub use mlp::{Mlp, Tape};
pub use policy::{PolicyHead, PolicyNet, LOG_STD_MAX, LOG_STD_MIN};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::{Interval, RiskSpec};

/// Affine normalization of the network inputs `(t, upsilon, features, y)`.
///
/// `t` maps to `t / T`, `upsilon` and `y` to `[-1, 1]` over their ranges, and
/// each raw state feature to `(f - offset) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputEncoding {
    pub horizon: usize,
    pub upsilon_mid: f64,
    pub upsilon_scale: f64,
    pub y_mid: f64,
    pub y_scale: f64,
    pub feature_offset: Vec<f64>,
    pub feature_scale: Vec<f64>,
}

impl InputEncoding {
    /// `cost_bounds` bounds the total cost, so `y = -cost` lies in `[-hi, -lo]`.
    pub fn new(horizon: usize, upsilon: Interval, cost_bounds: Interval, offsets: Vec<f64>, scales: Vec<f64>) -> Result<Self> {
        let enc = InputEncoding {
            horizon,
            upsilon_mid: upsilon.mid(),
            upsilon_scale: upsilon.half_width(),
            y_mid: -cost_bounds.mid(),
            y_scale: cost_bounds.half_width(),
            feature_offset: offsets,
            feature_scale: scales,
        };
        enc.validate()?;
        Ok(enc)
    }

    /// The auxiliary-variable range the encoding was built for.
    pub fn upsilon_interval(&self) -> Interval {
        Interval { lo: self.upsilon_mid - self.upsilon_scale, hi: self.upsilon_mid + self.upsilon_scale }
    }

    pub fn validate(&self) -> Result<()> {
        let scales_ok = self.upsilon_scale > 0.0
            && self.y_scale > 0.0
            && self.feature_scale.iter().all(|&s| s > 0.0 && s.is_finite());
        if !scales_ok || self.horizon == 0 {
            return Err(Error::Argument("input encoding needs positive scales and horizon".into()));
        }
        if self.feature_offset.len() != self.feature_scale.len() {
            return Err(Error::Shape { expected: self.feature_scale.len(), got: self.feature_offset.len() });
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        3 + self.feature_scale.len()
    }

    /// Index of the upsilon channel in the encoded input.
    pub const UPSILON_INDEX: usize = 1;

    pub fn encode(&self, t: usize, upsilon: f64, features: &[f64], y: f64, out: &mut Vec<f64>) -> Result<()> {
        if !upsilon.is_finite() || !y.is_finite() || features.iter().any(|f| !f.is_finite()) {
            return Err(Error::Argument(format!("non-finite network input (upsilon={upsilon}, y={y})")));
        }
        if features.len() != self.feature_scale.len() {
            return Err(Error::Shape { expected: self.feature_scale.len(), got: features.len() });
        }
        out.clear();
        out.push(t as f64 / self.horizon as f64);
        out.push((upsilon - self.upsilon_mid) / self.upsilon_scale);
        for ((f, o), s) in features.iter().zip(&self.feature_offset).zip(&self.feature_scale) {
            out.push((f - o) / s);
        }
        out.push((y - self.y_mid) / self.y_scale);
        Ok(())
    }
}

/// Scalar critic `V(t, upsilon, s, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueNet {
    pub mlp: Mlp,
}

impl ValueNet {
    pub fn new(mlp: Mlp) -> Result<Self> {
        if mlp.output_dim() != 1 {
            return Err(Error::Shape { expected: 1, got: mlp.output_dim() });
        }
        Ok(ValueNet { mlp })
    }

    pub fn eval(&self, x: &[f64], tape: &mut Tape) -> f64 {
        self.mlp.forward(x, tape)[0]
    }

    /// Value and its derivative with respect to the raw (unencoded) upsilon.
    pub fn eval_with_upsilon_grad(&self, x: &[f64], enc: &InputEncoding, tape: &mut Tape) -> (f64, f64) {
        let v = self.mlp.forward(x, tape)[0];
        let mut sink = vec![0.0; self.mlp.n_params()];
        let mut dx = vec![0.0; x.len()];
        self.mlp.backward(tape, &[1.0], &mut sink, Some(&mut dx));
        (v, dx[InputEncoding::UPSILON_INDEX] / enc.upsilon_scale)
    }

    /// `value_forward` on raw inputs.
    pub fn forward(&self, enc: &InputEncoding, t: usize, upsilon: f64, features: &[f64], y: f64) -> Result<f64> {
        let mut x = Vec::with_capacity(enc.input_dim());
        enc.encode(t, upsilon, features, y, &mut x)?;
        Ok(self.eval(&x, &mut Tape::default()))
    }

    /// Mean squared error `mean_i (V(x_i) - target_i)^2` over a batch; the
    /// gradient of the loss is accumulated into `grad`.
    pub fn backprop_mse(&self, batch: &[(Vec<f64>, f64)], grad: &mut [f64], tape: &mut Tape) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Argument("empty regression batch".into()));
        }
        let n = batch.len() as f64;
        let mut loss = 0.0;
        for (x, target) in batch {
            let v = self.eval(x, tape);
            let r = v - target;
            loss += r * r / n;
            self.mlp.backward(tape, &[2.0 * r / n], grad, None);
        }
        Ok(loss)
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized trained model: both networks, the input encoding, the learned
/// auxiliary variable and the objective they were trained for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: String,
    pub risk: RiskSpec,
    pub upsilon_star: f64,
    pub encoding: InputEncoding,
    pub value: ValueNet,
    pub policy: PolicyNet,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "{} has version {}, expected {CHECKPOINT_VERSION}",
                path.display(),
                ck.version
            )));
        }
        ck.value.mlp.validate()?;
        ck.policy.mlp.validate()?;
        ck.encoding.validate()?;
        Ok(ck)
    }
}
