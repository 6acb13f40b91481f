use crate::module::{Mode, Module};
use crate::tensor::Tensor;

/// Rectified linear unit.
#[derive(Default)]
pub struct Relu {
    input: Option<Tensor>,
}

impl Relu {
    pub fn new() -> Self {
        Relu::default()
    }
}

impl Module for Relu {
    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Tensor {
        self.input = Some(input.clone());
        input.map(|v| v.max(0.0))
    }

    fn backward(&mut self, grad_output: &Tensor) -> Tensor {
        let x = self.input.as_ref().expect("relu backward called before forward");
        let mut g = grad_output.clone();
        for (gv, &xv) in g.data_mut().iter_mut().zip(x.data()) {
            if xv <= 0.0 {
                *gv = 0.0;
            }
        }
        g
    }
}

/// `min(max(x, 0), 6)`, as used by MobileNetV2.
#[derive(Default)]
pub struct Relu6 {
    input: Option<Tensor>,
}

impl Relu6 {
    pub fn new() -> Self {
        Relu6::default()
    }
}

impl Module for Relu6 {
    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Tensor {
        self.input = Some(input.clone());
        input.map(|v| v.clamp(0.0, 6.0))
    }

    fn backward(&mut self, grad_output: &Tensor) -> Tensor {
        let x = self.input.as_ref().expect("relu6 backward called before forward");
        let mut g = grad_output.clone();
        for (gv, &xv) in g.data_mut().iter_mut().zip(x.data()) {
            if xv <= 0.0 || xv >= 6.0 {
                *gv = 0.0;
            }
        }
        g
    }
}
