use crate::tensor::Tensor;

/// Whether normalization layers use batch statistics (and update their
/// running estimates) or the stored running estimates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A trainable tensor with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Mutable view of one piece of module state.
pub enum Slot<'a> {
    Param(&'a mut Param),
    /// Non-trainable state such as normalization running statistics.
    Buffer(&'a mut Tensor),
}

pub struct NamedSlot<'a> {
    pub name: String,
    pub slot: Slot<'a>,
}

impl<'a> NamedSlot<'a> {
    pub fn tensor(&self) -> &Tensor {
        match &self.slot {
            Slot::Param(p) => &p.value,
            Slot::Buffer(t) => t,
        }
    }

    pub fn tensor_mut(&mut self) -> &mut Tensor {
        match &mut self.slot {
            Slot::Param(p) => &mut p.value,
            Slot::Buffer(t) => t,
        }
    }

    pub fn is_param(&self) -> bool {
        matches!(self.slot, Slot::Param(_))
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// A differentiable layer.
///
/// `backward` must be called after `forward` on the same instance; it
/// accumulates parameter gradients into each [`Param::grad`] and returns the
/// gradient with respect to the forward input.
pub trait Module: Send {
    fn forward(&mut self, input: &Tensor, mode: Mode) -> Tensor;

    fn backward(&mut self, grad_output: &Tensor) -> Tensor;

    /// Append every parameter and buffer under `prefix`, in a fixed order.
    fn slots<'a>(&'a mut self, _prefix: &str, _out: &mut Vec<NamedSlot<'a>>) {}

    /// Frozen modules keep normalization statistics fixed even in
    /// [`Mode::Train`].
    fn set_frozen(&mut self, _frozen: bool) {}
}

/// Named chain of modules applied in order.
#[derive(Default)]
pub struct Sequential {
    children: Vec<(String, Box<dyn Module>)>,
}

impl Sequential {
    pub fn new() -> Self {
        Sequential::default()
    }

    pub fn push(&mut self, name: impl Into<String>, module: impl Module + 'static) {
        self.children.push((name.into(), Box::new(module)));
    }

    /// Builder-style [`push`](Self::push).
    pub fn with(mut self, name: impl Into<String>, module: impl Module + 'static) -> Self {
        self.push(name, module);
        self
    }

    pub fn len(&self) -> usize {
        self.children.len()
    }

    pub fn is_empty(&self) -> bool {
        self.children.is_empty()
    }
}

impl Module for Sequential {
    fn forward(&mut self, input: &Tensor, mode: Mode) -> Tensor {
        let mut iter = self.children.iter_mut();
        let Some((_, first)) = iter.next() else {
            return input.clone();
        };
        let mut x = first.forward(input, mode);
        for (_, m) in iter {
            x = m.forward(&x, mode);
        }
        x
    }

    fn backward(&mut self, grad_output: &Tensor) -> Tensor {
        let mut iter = self.children.iter_mut().rev();
        let Some((_, last)) = iter.next() else {
            return grad_output.clone();
        };
        let mut g = last.backward(grad_output);
        for (_, m) in iter {
            g = m.backward(&g);
        }
        g
    }

    fn slots<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedSlot<'a>>) {
        for (name, m) in self.children.iter_mut() {
            m.slots(&join(prefix, name), out);
        }
    }

    fn set_frozen(&mut self, frozen: bool) {
        for (_, m) in self.children.iter_mut() {
            m.set_frozen(frozen);
        }
    }
}
