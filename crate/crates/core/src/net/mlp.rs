use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;

/// Fully connected network with tanh hidden layers and a linear output layer.
///
/// Parameters live in one flat vector; layer `l` stores its weight matrix
/// (row-major, `out x in`) followed by its bias vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Activations recorded by a forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Default, Clone)]
pub struct Tape {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

fn n_params(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(Error::Argument(format!("invalid layer sizes {sizes:?}")));
        }
        Ok(Mlp { sizes: sizes.to_vec(), params: vec![0.0; n_params(sizes)] })
    }

    /// Uniform fan-in initialization `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` with
    /// zero biases; the output layer weights are further multiplied by `out_scale`.
    pub fn new(sizes: &[usize], out_scale: f64, rng: &mut SimRng) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let n_layers = sizes.len() - 1;
        let mut off = 0;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let scale = if l + 1 == n_layers { out_scale } else { 1.0 };
            for w in &mut net.params[off..off + fan_in * fan_out] {
                *w = scale * rng.gen_range(-bound..bound);
            }
            off += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least two layers")
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Bias entries of the output layer.
    pub fn output_bias_mut(&mut self) -> &mut [f64] {
        let k = self.output_dim();
        let n = self.params.len();
        &mut self.params[n - k..]
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.len() < 2 || self.params.len() != n_params(&self.sizes) {
            return Err(Error::Shape { expected: n_params(&self.sizes), got: self.params.len() });
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("network parameters".into()));
        }
        Ok(())
    }

    /// Forward pass; the output is the last activation stored on the tape.
    pub fn forward<'t>(&self, x: &[f64], tape: &'t mut Tape) -> &'t [f64] {
        debug_assert_eq!(x.len(), self.input_dim());
        let n_layers = self.sizes.len() - 1;
        tape.acts.resize_with(n_layers + 1, Vec::new);
        tape.acts[0].clear();
        tape.acts[0].extend_from_slice(x);
        let mut off = 0;
        for l in 0..n_layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let (prev, rest) = tape.acts.split_at_mut(l + 1);
            let input = &prev[l];
            let out = &mut rest[0];
            out.clear();
            for j in 0..n_out {
                let row = &w[j * n_in..(j + 1) * n_in];
                let z = b[j] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
                out.push(if l + 1 == n_layers { z } else { z.tanh() });
            }
            off += n_in * n_out + n_out;
        }
        &tape.acts[n_layers]
    }

    /// Evaluates the network without keeping a caller-visible tape.
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let mut tape = Tape::default();
        self.forward(x, &mut tape).to_vec()
    }

    /// Reverse pass for the forward pass recorded on `tape`: accumulates
    /// `dout^T dOutput/dParams` into `grad` and, when requested, writes the
    /// input gradient into `dx`.
    pub fn backward(&self, tape: &mut Tape, dout: &[f64], grad: &mut [f64], dx: Option<&mut [f64]>) {
        debug_assert_eq!(grad.len(), self.params.len());
        let n_layers = self.sizes.len() - 1;
        let Tape { acts, delta, delta_prev } = tape;
        delta.clear();
        delta.extend_from_slice(dout);
        let mut off_end = self.params.len();
        let mut dx = dx;
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = off_end - (n_in * n_out + n_out);
            let input = &acts[l];
            {
                let (gw, gb) = grad[off..off_end].split_at_mut(n_in * n_out);
                for j in 0..n_out {
                    let d = delta[j];
                    if d == 0.0 {
                        continue;
                    }
                    gb[j] += d;
                    for (g, &a) in gw[j * n_in..(j + 1) * n_in].iter_mut().zip(input) {
                        *g += d * a;
                    }
                }
            }
            if l > 0 || dx.is_some() {
                let w = &self.params[off..off + n_in * n_out];
                delta_prev.clear();
                delta_prev.resize(n_in, 0.0);
                for j in 0..n_out {
                    let d = delta[j];
                    if d == 0.0 {
                        continue;
                    }
                    for (dp, &wv) in delta_prev.iter_mut().zip(&w[j * n_in..(j + 1) * n_in]) {
                        *dp += d * wv;
                    }
                }
                if l > 0 {
                    for (dp, &a) in delta_prev.iter_mut().zip(input) {
                        *dp *= 1.0 - a * a;
                    }
                } else if let Some(dx) = dx.as_deref_mut() {
                    dx.copy_from_slice(delta_prev);
                }
                std::mem::swap(delta, delta_prev);
            }
            off_end = off;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn fd_check(net: &Mlp, x: &[f64], dout: &[f64]) {
        let mut tape = Tape::default();
        net.forward(x, &mut tape);
        let mut grad = vec![0.0; net.n_params()];
        let mut dx = vec![0.0; x.len()];
        net.backward(&mut tape, dout, &mut grad, Some(&mut dx));
        let objective = |n: &Mlp, x: &[f64]| n.predict(x).iter().zip(dout).map(|(a, b)| a * b).sum::<f64>();
        let h = 1e-5;
        for i in 0..net.n_params() {
            let mut p = net.clone();
            p.params[i] += h;
            let up = objective(&p, x);
            p.params[i] -= 2.0 * h;
            let down = objective(&p, x);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-6 + 1e-4 * fd.abs(), "param {i}: {fd} vs {}", grad[i]);
        }
        for i in 0..x.len() {
            let mut xp = x.to_vec();
            xp[i] += h;
            let up = objective(net, &xp);
            xp[i] -= 2.0 * h;
            let down = objective(net, &xp);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - dx[i]).abs() <= 1e-6 + 1e-4 * fd.abs());
        }
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[4, 8, 8, 1]).unwrap();
        assert_eq!(net.predict(&[1.0, -2.0, 0.5, 3.0]), vec![0.0]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = stream(11, 0, 0);
        for sizes in [vec![3, 5, 2], vec![4, 6, 6, 1], vec![2, 1]] {
            let net = Mlp::new(&sizes, 1.0, &mut rng).unwrap();
            let x: Vec<f64> = (0..sizes[0]).map(|i| 0.3 * i as f64 - 0.4).collect();
            let dout: Vec<f64> = (0..*sizes.last().unwrap()).map(|i| 1.0 - 0.7 * i as f64).collect();
            fd_check(&net, &x, &dout);
        }
    }

    #[test]
    fn validate_detects_shape_and_nan() {
        let mut net = Mlp::zeros(&[2, 3, 1]).unwrap();
        net.validate().unwrap();
        net.params[0] = f64::NAN;
        assert!(net.validate().is_err());
        net.params.pop();
        assert!(matches!(net.validate(), Err(Error::Shape { .. })));
        assert!(Mlp::zeros(&[3]).is_err());
    }
}
