//! Residual composition shared by ResNet and MobileNetV2 blocks.

use crate::layers::Relu;
use crate::module::{join, Mode, Module, NamedSlot, Sequential};
use crate::tensor::Tensor;

/// `out = act(main(x) + shortcut(x))`, where a missing shortcut is the
/// identity and `act` is either ReLU or nothing (linear bottleneck).
///
/// Without `skip` the block is just `main`, which covers inverted residual
/// blocks whose stride or width rules out the identity path.
pub struct Residual {
    main: Sequential,
    shortcut: Option<Sequential>,
    skip: bool,
    out_relu: Option<Relu>,
}

impl Residual {
    pub fn new(main: Sequential) -> Self {
        Residual {
            main,
            shortcut: None,
            skip: true,
            out_relu: None,
        }
    }

    pub fn plain(main: Sequential) -> Self {
        Residual {
            main,
            shortcut: None,
            skip: false,
            out_relu: None,
        }
    }

    pub fn with_shortcut(mut self, shortcut: Sequential) -> Self {
        self.shortcut = Some(shortcut);
        self
    }

    pub fn with_output_relu(mut self) -> Self {
        self.out_relu = Some(Relu::new());
        self
    }
}

impl Module for Residual {
    fn forward(&mut self, input: &Tensor, mode: Mode) -> Tensor {
        let mut y = self.main.forward(input, mode);
        if self.skip {
            match &mut self.shortcut {
                Some(s) => y.add_assign(&s.forward(input, mode)),
                None => y.add_assign(input),
            }
        }
        match &mut self.out_relu {
            Some(r) => r.forward(&y, mode),
            None => y,
        }
    }

    fn backward(&mut self, grad_output: &Tensor) -> Tensor {
        let g = match &mut self.out_relu {
            Some(r) => r.backward(grad_output),
            None => grad_output.clone(),
        };
        let mut dx = self.main.backward(&g);
        if self.skip {
            match &mut self.shortcut {
                Some(s) => dx.add_assign(&s.backward(&g)),
                None => dx.add_assign(&g),
            }
        }
        dx
    }

    fn slots<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedSlot<'a>>) {
        self.main.slots(prefix, out);
        if let Some(s) = &mut self.shortcut {
            s.slots(&join(prefix, "downsample"), out);
        }
    }

    fn set_frozen(&mut self, frozen: bool) {
        self.main.set_frozen(frozen);
        if let Some(s) = &mut self.shortcut {
            s.set_frozen(frozen);
        }
    }
}
