//! Conditional Gaussian mixture density network.
//!
//! A tanh multilayer perceptron maps the conditioning vector `x` to, per
//! mixture component, a logit, a mean and the lower-triangular Cholesky
//! factor `L` of the component covariance `L Lᵀ` (diagonal stored as logs).
//! All weights live in one flat vector; gradients are accumulated by hand in
//! reverse order through the mixture head and the network.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Number of lower-triangular entries for dimension `d`.
pub fn tri_len(d: usize) -> usize {
    d * (d + 1) / 2
}

#[inline]
fn tri_index(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdnModel {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub param_dim: usize,
    pub components: usize,
    pub weights: Vec<f64>,
}

impl MdnModel {
    /// Randomly initialised network. Output-layer weights start small so the
    /// initial mixture is broad and centred in the unit cube.
    pub fn new<R: Rng>(input_dim: usize, hidden: &[usize], param_dim: usize, components: usize, rng: &mut R) -> Self {
        let mut model = Self {
            input_dim,
            hidden: hidden.to_vec(),
            param_dim,
            components,
            weights: Vec::new(),
        };
        let sizes = model.layer_sizes();
        let mut weights = Vec::with_capacity(model.weight_count());
        let layers = sizes.len() - 1;
        for l in 0..layers {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let mut limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            if l + 1 == layers {
                limit *= 0.1;
            }
            weights.extend((0..fan_in * fan_out).map(|_| limit * (2.0 * rng.random::<f64>() - 1.0)));
            if l + 1 == layers {
                for _ in 0..components {
                    weights.push(0.0);
                    weights.extend((0..param_dim).map(|_| 0.25 + 0.5 * rng.random::<f64>()));
                    for i in 0..param_dim {
                        for j in 0..=i {
                            weights.push(if i == j { 0.25f64.ln() } else { 0.0 });
                        }
                    }
                }
            } else {
                weights.extend(std::iter::repeat_n(0.0, fan_out));
            }
        }
        model.weights = weights;
        model
    }

    /// Per-component output width: logit, mean, Cholesky entries.
    pub fn component_stride(&self) -> usize {
        1 + self.param_dim + tri_len(self.param_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.components * self.component_stride()
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim];
        s.extend(&self.hidden);
        s.push(self.output_dim());
        s
    }

    pub fn weight_count(&self) -> usize {
        self.layer_sizes().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.param_dim == 0 || self.components == 0 {
            return Err(Error::Format("network dimensions must be positive".into()));
        }
        if self.weights.len() != self.weight_count() {
            return Err(Error::Format(format!(
                "expected {} weights, found {}",
                self.weight_count(),
                self.weights.len()
            )));
        }
        Ok(())
    }

    pub fn workspace(&self) -> Workspace {
        let sizes = self.layer_sizes();
        Workspace {
            acts: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            deltas: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            mixture: Mixture::new(self.param_dim, self.components),
        }
    }

    /// Forward pass; leaves activations in `ws` and the mixture decoded.
    pub fn forward(&self, x: &[f64], ws: &mut Workspace) {
        debug_assert_eq!(x.len(), self.input_dim);
        ws.acts[0].copy_from_slice(x);
        let layers = ws.acts.len() - 1;
        let mut off = 0;
        for l in 0..layers {
            let (fan_in, fan_out) = (ws.acts[l].len(), ws.acts[l + 1].len());
            let w = &self.weights[off..off + fan_in * fan_out];
            let b = &self.weights[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            let (head, tail) = ws.acts.split_at_mut(l + 1);
            let input = &head[l];
            let output = &mut tail[0];
            for o in 0..fan_out {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                let mut acc = b[o];
                for (wi, xi) in row.iter().zip(input.iter()) {
                    acc += wi * xi;
                }
                output[o] = if l + 1 == layers { acc } else { acc.tanh() };
            }
            off += fan_in * fan_out + fan_out;
        }
        let out = &ws.acts[layers];
        ws.mixture.decode(out);
    }

    /// Back-propagate `ws.deltas[last]` (gradient w.r.t. the raw outputs of
    /// the last `forward`) into `grad`, accumulating.
    pub fn backward(&self, ws: &mut Workspace, grad: &mut [f64]) {
        let layers = ws.acts.len() - 1;
        let sizes: Vec<usize> = ws.acts.iter().map(|a| a.len()).collect();
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for l in 0..layers {
            offsets.push(off);
            off += sizes[l] * sizes[l + 1] + sizes[l + 1];
        }
        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let off = offsets[l];
            let (dhead, dtail) = ws.deltas.split_at_mut(l + 1);
            let dout = &mut dtail[0];
            if l + 1 != layers {
                // Through tanh: d/dpre = d/dact * (1 - act^2).
                for (d, a) in dout.iter_mut().zip(&ws.acts[l + 1]) {
                    *d *= 1.0 - a * a;
                }
            }
            let input = &ws.acts[l];
            let din = &mut dhead[l];
            din.iter_mut().for_each(|v| *v = 0.0);
            let w = &self.weights[off..off + fan_in * fan_out];
            let (gw, gb) = grad[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            for o in 0..fan_out {
                let d = dout[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = &w[o * fan_in..(o + 1) * fan_in];
                let grow = &mut gw[o * fan_in..(o + 1) * fan_in];
                for i in 0..fan_in {
                    grow[i] += d * input[i];
                    din[i] += d * row[i];
                }
            }
        }
    }

    /// log q(theta | x) with theta in the model's (unit-cube) coordinates.
    pub fn log_density(&self, theta: &[f64], x: &[f64]) -> f64 {
        let mut ws = self.workspace();
        self.forward(x, &mut ws);
        ws.mixture.log_density(theta)
    }

    /// Decoded mixture for a conditioning vector.
    pub fn mixture(&self, x: &[f64]) -> Mixture {
        let mut ws = self.workspace();
        self.forward(x, &mut ws);
        ws.mixture
    }
}

/// Reusable buffers for forward/backward passes.
#[derive(Debug, Clone)]
pub struct Workspace {
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
    pub mixture: Mixture,
}

impl Workspace {
    pub fn output_grad(&mut self) -> &mut [f64] {
        self.deltas.last_mut().expect("network has an output layer")
    }

    pub fn clear_output_grad(&mut self) {
        self.output_grad().iter_mut().for_each(|v| *v = 0.0);
    }

    /// Accumulate `scale * d log q(theta)/d outputs` and return log q(theta).
    pub fn accumulate_log_density_grad(&mut self, theta: &[f64], scale: f64) -> f64 {
        let Workspace { deltas, mixture, .. } = self;
        mixture.accumulate_grad(theta, scale, deltas.last_mut().expect("output layer"))
    }
}

/// Gaussian mixture decoded from a network output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    d: usize,
    m: usize,
    log_w: Vec<f64>,
    means: Vec<f64>,
    /// Dense lower-triangular factors, `m * d * d`, row-major.
    chol: Vec<f64>,
    log_det: Vec<f64>,
    z: Vec<f64>,
    w: Vec<f64>,
    log_comp: Vec<f64>,
}

impl Mixture {
    fn new(d: usize, m: usize) -> Self {
        Self {
            d,
            m,
            log_w: vec![0.0; m],
            means: vec![0.0; m * d],
            chol: vec![0.0; m * d * d],
            log_det: vec![0.0; m],
            z: vec![0.0; m * d],
            w: vec![0.0; d],
            log_comp: vec![0.0; m],
        }
    }

    /// Build directly from weights, means and Cholesky factors (dense, row-major).
    pub fn from_parts(weights: &[f64], means: &[Vec<f64>], chol: &[Vec<f64>]) -> Result<Self> {
        let m = weights.len();
        let d = means.first().map_or(0, |v| v.len());
        if m == 0 || d == 0 || means.len() != m || chol.len() != m || chol.iter().any(|c| c.len() != d * d) {
            return Err(Error::InvalidParameter("inconsistent mixture parts".into()));
        }
        let mut mix = Self::new(d, m);
        for k in 0..m {
            mix.log_w[k] = weights[k].ln();
            mix.means[k * d..(k + 1) * d].copy_from_slice(&means[k]);
            let mut log_det = 0.0;
            for i in 0..d {
                for j in 0..=i {
                    mix.chol[k * d * d + i * d + j] = chol[k][i * d + j];
                }
                if !(chol[k][i * d + i] > 0.0) {
                    return Err(Error::InvalidParameter("Cholesky diagonal must be positive".into()));
                }
                log_det += chol[k][i * d + i].ln();
            }
            mix.log_det[k] = log_det;
        }
        Ok(mix)
    }

    fn decode(&mut self, out: &[f64]) {
        let (d, m) = (self.d, self.m);
        let stride = 1 + d + tri_len(d);
        let max_logit = (0..m).map(|k| out[k * stride]).fold(f64::NEG_INFINITY, f64::max);
        let lse = max_logit + (0..m).map(|k| (out[k * stride] - max_logit).exp()).sum::<f64>().ln();
        for k in 0..m {
            let base = k * stride;
            self.log_w[k] = out[base] - lse;
            self.means[k * d..(k + 1) * d].copy_from_slice(&out[base + 1..base + 1 + d]);
            let tri = &out[base + 1 + d..base + stride];
            let l = &mut self.chol[k * d * d..(k + 1) * d * d];
            let mut log_det = 0.0;
            for i in 0..d {
                for j in 0..i {
                    l[i * d + j] = tri[tri_index(i, j)];
                }
                let s = tri[tri_index(i, i)];
                l[i * d + i] = s.exp();
                log_det += s;
            }
            self.log_det[k] = log_det;
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn components(&self) -> usize {
        self.m
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_w.iter().map(|l| l.exp()).collect()
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        &self.means[k * self.d..(k + 1) * self.d]
    }

    pub fn cholesky(&self, k: usize) -> &[f64] {
        &self.chol[k * self.d * self.d..(k + 1) * self.d * self.d]
    }

    /// Forward substitution for every component; fills `z` and `log_comp`.
    fn component_terms(&mut self, theta: &[f64]) {
        let d = self.d;
        for k in 0..self.m {
            let l = &self.chol[k * d * d..(k + 1) * d * d];
            let mu = &self.means[k * d..(k + 1) * d];
            let z = &mut self.z[k * d..(k + 1) * d];
            let mut sq = 0.0;
            for i in 0..d {
                let mut acc = theta[i] - mu[i];
                for j in 0..i {
                    acc -= l[i * d + j] * z[j];
                }
                z[i] = acc / l[i * d + i];
                sq += z[i] * z[i];
            }
            self.log_comp[k] = self.log_w[k] - 0.5 * d as f64 * LN_2PI - self.log_det[k] - 0.5 * sq;
        }
    }

    fn log_sum(&self) -> f64 {
        let max = self.log_comp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return max;
        }
        max + self.log_comp.iter().map(|c| (c - max).exp()).sum::<f64>().ln()
    }

    pub fn log_density(&mut self, theta: &[f64]) -> f64 {
        self.component_terms(theta);
        self.log_sum()
    }

    /// Accumulate `scale * d log q / d(raw outputs)` into `dout`; returns log q.
    pub fn accumulate_grad(&mut self, theta: &[f64], scale: f64, dout: &mut [f64]) -> f64 {
        self.component_terms(theta);
        let lq = self.log_sum();
        let d = self.d;
        let stride = 1 + d + tri_len(d);
        for k in 0..self.m {
            let resp = (self.log_comp[k] - lq).exp();
            let base = k * stride;
            dout[base] += scale * (resp - self.log_w[k].exp());
            if resp == 0.0 {
                continue;
            }
            let l = &self.chol[k * d * d..(k + 1) * d * d];
            let z = &self.z[k * d..(k + 1) * d];
            // Back substitution: w = L^-T z.
            for i in (0..d).rev() {
                let mut acc = z[i];
                for j in i + 1..d {
                    acc -= l[j * d + i] * self.w[j];
                }
                self.w[i] = acc / l[i * d + i];
            }
            let g = scale * resp;
            for i in 0..d {
                dout[base + 1 + i] += g * self.w[i];
            }
            let tri = base + 1 + d;
            for i in 0..d {
                for j in 0..i {
                    dout[tri + tri_index(i, j)] += g * self.w[i] * z[j];
                }
                dout[tri + tri_index(i, i)] += g * (l[i * d + i] * self.w[i] * z[i] - 1.0);
            }
        }
        lq
    }

    /// One draw: pick a component by weight, then `mu + L eps`.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.d;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.m - 1;
        for (i, lw) in self.log_w.iter().enumerate() {
            acc += lw.exp();
            if u < acc {
                k = i;
                break;
            }
        }
        let eps: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let l = self.cholesky(k);
        let mu = self.mean(k);
        (0..d).map(|i| mu[i] + (0..=i).map(|j| l[i * d + j] * eps[j]).sum::<f64>()).collect()
    }
}
