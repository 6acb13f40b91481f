use crate::module::{Mode, Module};
use crate::par;
use crate::tensor::Tensor;

/// Max pooling with a square window; padded positions never win.
pub struct MaxPool2d {
    kernel: usize,
    stride: usize,
    padding: usize,
    argmax: Vec<usize>,
    input_shape: Vec<usize>,
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        MaxPool2d {
            kernel,
            stride,
            padding,
            argmax: Vec::new(),
            input_shape: Vec::new(),
        }
    }

    pub fn output_size(&self, size: usize) -> usize {
        (size + 2 * self.padding - self.kernel) / self.stride + 1
    }
}

impl Module for MaxPool2d {
    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Tensor {
        let (n, c, h, w) = input.dims4();
        let (oh, ow) = (self.output_size(h), self.output_size(w));
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let planes = par::map(n * c, |idx| {
            let plane = &input.data()[idx * h * w..(idx + 1) * h * w];
            let mut vals = Vec::with_capacity(oh * ow);
            let mut arg = Vec::with_capacity(oh * ow);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_at = usize::MAX;
                    for ky in 0..k {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * s + kx) as isize - p;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let at = iy as usize * w + ix as usize;
                            if plane[at] > best || best_at == usize::MAX {
                                best = plane[at];
                                best_at = at;
                            }
                        }
                    }
                    vals.push(best);
                    arg.push(idx * h * w + best_at);
                }
            }
            (vals, arg)
        });
        let mut out = Vec::with_capacity(n * c * oh * ow);
        self.argmax.clear();
        for (v, a) in planes {
            out.extend(v);
            self.argmax.extend(a);
        }
        self.input_shape = input.shape().to_vec();
        Tensor::from_vec(&[n, c, oh, ow], out)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Tensor {
        let mut dx = Tensor::zeros(&self.input_shape);
        let d = dx.data_mut();
        for (&at, &g) in self.argmax.iter().zip(grad_output.data()) {
            d[at] += g;
        }
        dx
    }
}

/// Mean over the spatial axes: `(n, c, h, w) -> (n, c)`.
#[derive(Default)]
pub struct GlobalAvgPool {
    input_shape: Vec<usize>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        GlobalAvgPool::default()
    }
}

impl Module for GlobalAvgPool {
    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Tensor {
        let (n, c, h, w) = input.dims4();
        let area = (h * w) as f32;
        let out = input
            .data()
            .chunks(h * w)
            .map(|plane| plane.iter().sum::<f32>() / area)
            .collect();
        self.input_shape = input.shape().to_vec();
        Tensor::from_vec(&[n, c], out)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Tensor {
        let (h, w) = (self.input_shape[2], self.input_shape[3]);
        let area = h * w;
        let mut dx = Tensor::zeros(&self.input_shape);
        for (plane, &g) in dx.data_mut().chunks_mut(area).zip(grad_output.data()) {
            plane.fill(g / area as f32);
        }
        dx
    }
}
