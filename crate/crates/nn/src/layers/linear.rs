use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::gemm;
use crate::module::{join, Mode, Module, NamedSlot, Param, Slot};
use crate::tensor::Tensor;

/// Fully connected layer `y = x W^T + b` over `(n, in)` input.
pub struct Linear {
    in_features: usize,
    out_features: usize,
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl Linear {
    /// Uniform `(-1/sqrt(in), 1/sqrt(in))` for both weight and bias.
    pub fn new<R: Rng + ?Sized>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_features as f32).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
        let w = (0..in_features * out_features).map(|_| dist.sample(rng)).collect();
        let b = (0..out_features).map(|_| dist.sample(rng)).collect();
        Linear {
            in_features,
            out_features,
            weight: Param::new(Tensor::from_vec(&[out_features, in_features], w)),
            bias: Param::new(Tensor::from_vec(&[out_features], b)),
            input: None,
        }
    }

    pub fn in_features(&self) -> usize {
        self.in_features
    }

    pub fn out_features(&self) -> usize {
        self.out_features
    }
}

impl Module for Linear {
    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Tensor {
        let (n, f) = input.dims2();
        assert_eq!(f, self.in_features, "linear expected {} features, got {f}", self.in_features);
        let mut out = vec![0.0f32; n * self.out_features];
        gemm(n, f, self.out_features, input.data(), false, self.weight.value.data(), true, &mut out, 0.0);
        for row in out.chunks_mut(self.out_features) {
            for (v, b) in row.iter_mut().zip(self.bias.value.data()) {
                *v += b;
            }
        }
        self.input = Some(input.clone());
        Tensor::from_vec(&[n, self.out_features], out)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Tensor {
        let x = self.input.as_ref().expect("linear backward called before forward");
        let (n, f) = x.dims2();
        let o = self.out_features;
        gemm(o, n, f, grad_output.data(), true, x.data(), false, self.weight.grad.data_mut(), 1.0);
        for row in grad_output.data().chunks(o) {
            for (b, g) in self.bias.grad.data_mut().iter_mut().zip(row) {
                *b += g;
            }
        }
        let mut dx = vec![0.0f32; n * f];
        gemm(n, o, f, grad_output.data(), false, self.weight.value.data(), false, &mut dx, 0.0);
        Tensor::from_vec(&[n, f], dx)
    }

    fn slots<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedSlot<'a>>) {
        out.push(NamedSlot {
            name: join(prefix, "weight"),
            slot: Slot::Param(&mut self.weight),
        });
        out.push(NamedSlot {
            name: join(prefix, "bias"),
            slot: Slot::Param(&mut self.bias),
        });
    }
}
