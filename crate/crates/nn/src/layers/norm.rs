use crate::module::{join, Mode, Module, NamedSlot, Param, Slot};
use crate::par;
use crate::tensor::Tensor;

/// Per-channel batch normalization for NCHW input.
///
/// In [`Mode::Train`] an unfrozen layer normalizes with batch statistics and
/// updates its running estimates (biased variance for normalization,
/// unbiased for the running estimate). Eval mode, or a frozen layer, uses
/// the running estimates and leaves them untouched.
pub struct BatchNorm2d {
    channels: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    momentum: f32,
    eps: f32,
    frozen: bool,
    cache: Option<Cache>,
}

struct Cache {
    xhat: Tensor,
    inv_std: Vec<f32>,
    batch_stats: bool,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            channels,
            gamma: Param::new(Tensor::full(&[channels], 1.0)),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            momentum: 0.1,
            eps: 1e-5,
            frozen: false,
            cache: None,
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Per-channel `(mean, biased var, count)` accumulated in f64.
    fn batch_moments(&self, x: &Tensor) -> (Vec<f32>, Vec<f32>, usize) {
        let (n, c, h, w) = x.dims4();
        let area = h * w;
        let moments = par::map(c, |ch| {
            let (mut s, mut ss) = (0.0f64, 0.0f64);
            for i in 0..n {
                for &v in &x.sample(i)[ch * area..(ch + 1) * area] {
                    s += v as f64;
                    ss += (v as f64) * (v as f64);
                }
            }
            let m = (n * area) as f64;
            let mean = s / m;
            ((mean) as f32, (ss / m - mean * mean).max(0.0) as f32)
        });
        let (mean, var) = moments.into_iter().unzip();
        (mean, var, n * area)
    }
}

impl Module for BatchNorm2d {
    fn forward(&mut self, input: &Tensor, mode: Mode) -> Tensor {
        let (n, c, h, w) = input.dims4();
        assert_eq!(c, self.channels, "batchnorm expected {} channels, got {c}", self.channels);
        let area = h * w;
        let batch_stats = mode == Mode::Train && !self.frozen;
        let (mean, var) = if batch_stats {
            let (mean, var, count) = self.batch_moments(input);
            let m = self.momentum;
            let unbias = if count > 1 { count as f32 / (count - 1) as f32 } else { 1.0 };
            for ch in 0..c {
                let rm = &mut self.running_mean.data_mut()[ch];
                *rm = (1.0 - m) * *rm + m * mean[ch];
                let rv = &mut self.running_var.data_mut()[ch];
                *rv = (1.0 - m) * *rv + m * var[ch] * unbias;
            }
            (mean, var)
        } else {
            (self.running_mean.data().to_vec(), self.running_var.data().to_vec())
        };
        let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = input.clone();
        par::for_each_chunk(xhat.data_mut(), area, |idx, plane| {
            let ch = idx % c;
            let (mu, is) = (mean[ch], inv_std[ch]);
            plane.iter_mut().for_each(|v| *v = (*v - mu) * is);
        });
        let mut out = xhat.clone();
        let (gamma, beta) = (self.gamma.value.data(), self.beta.value.data());
        par::for_each_chunk(out.data_mut(), area, |idx, plane| {
            let ch = idx % c;
            let (g, b) = (gamma[ch], beta[ch]);
            plane.iter_mut().for_each(|v| *v = g * *v + b);
        });
        let _ = n;
        self.cache = Some(Cache {
            xhat,
            inv_std,
            batch_stats,
        });
        out
    }

    fn backward(&mut self, grad_output: &Tensor) -> Tensor {
        let cache = self.cache.as_ref().expect("batchnorm backward called before forward");
        let (n, c, h, w) = grad_output.dims4();
        let area = h * w;
        let mut dgamma = vec![0.0f64; c];
        let mut dbeta = vec![0.0f64; c];
        for i in 0..n {
            let dy = grad_output.sample(i);
            let xh = cache.xhat.sample(i);
            for ch in 0..c {
                let r = ch * area..(ch + 1) * area;
                for (&g, &x) in dy[r.clone()].iter().zip(&xh[r]) {
                    dgamma[ch] += (g * x) as f64;
                    dbeta[ch] += g as f64;
                }
            }
        }
        let gamma = self.gamma.value.data();
        let m = (n * area) as f32;
        let mut dx = grad_output.clone();
        let xhat = &cache.xhat;
        let inv_std = &cache.inv_std;
        let batch_stats = cache.batch_stats;
        par::for_each_chunk(dx.data_mut(), area, |idx, plane| {
            let ch = idx % c;
            let scale = gamma[ch] * inv_std[ch];
            if batch_stats {
                let xh = &xhat.data()[idx * area..(idx + 1) * area];
                let (dg, db) = (dgamma[ch] as f32, dbeta[ch] as f32);
                for (v, &x) in plane.iter_mut().zip(xh) {
                    *v = scale / m * (m * *v - db - x * dg);
                }
            } else {
                plane.iter_mut().for_each(|v| *v *= scale);
            }
        });
        for ch in 0..c {
            self.gamma.grad.data_mut()[ch] += dgamma[ch] as f32;
            self.beta.grad.data_mut()[ch] += dbeta[ch] as f32;
        }
        dx
    }

    fn slots<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedSlot<'a>>) {
        out.push(NamedSlot {
            name: join(prefix, "weight"),
            slot: Slot::Param(&mut self.gamma),
        });
        out.push(NamedSlot {
            name: join(prefix, "bias"),
            slot: Slot::Param(&mut self.beta),
        });
        out.push(NamedSlot {
            name: join(prefix, "running_mean"),
            slot: Slot::Buffer(&mut self.running_mean),
        });
        out.push(NamedSlot {
            name: join(prefix, "running_var"),
            slot: Slot::Buffer(&mut self.running_var),
        });
    }

    fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }
}
