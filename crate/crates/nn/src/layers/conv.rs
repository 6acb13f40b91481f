use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::gemm;
use crate::module::{join, Mode, Module, NamedSlot, Param, Slot};
use crate::par;
use crate::tensor::Tensor;

/// 2-d convolution over NCHW input with square kernels and optional groups.
pub struct Conv2d {
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    groups: usize,
    pub weight: Param,
    pub bias: Option<Param>,
    input: Option<Tensor>,
}

#[derive(Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

impl Conv2d {
    /// Kaiming-normal (fan-out, ReLU gain) weights, no bias.
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        rng: &mut R,
    ) -> Self {
        assert!(groups >= 1 && in_channels % groups == 0 && out_channels % groups == 0);
        assert!(kernel >= 1 && stride >= 1);
        let per_group = in_channels / groups;
        let fan_out = (out_channels / groups) * kernel * kernel;
        let std = (2.0 / fan_out as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let len = out_channels * per_group * kernel * kernel;
        let data = (0..len).map(|_| normal.sample(rng) as f32).collect();
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            groups,
            weight: Param::new(Tensor::from_vec(
                &[out_channels, per_group, kernel, kernel],
                data,
            )),
            bias: None,
            input: None,
        }
    }

    pub fn with_bias(mut self) -> Self {
        self.bias = Some(Param::new(Tensor::zeros(&[self.out_channels])));
        self
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn output_size(&self, size: usize) -> usize {
        (size + 2 * self.padding - self.kernel) / self.stride + 1
    }

    fn is_depthwise(&self) -> bool {
        self.groups > 1 && self.groups == self.in_channels && self.groups == self.out_channels
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    fn patch_len(&self) -> usize {
        (self.in_channels / self.groups) * self.kernel * self.kernel
    }

    /// Unfold channels `[c0, c0 + cg)` of one image into a
    /// `(cg * k * k) x (oh * ow)` matrix.
    fn im2col(&self, img: &[f32], g: Geometry, c0: usize, cg: usize, cols: &mut [f32]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let area = g.oh * g.ow;
        for ci in 0..cg {
            let plane = &img[(c0 + ci) * g.h * g.w..(c0 + ci + 1) * g.h * g.w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut cols[((ci * k + ky) * k + kx) * area..][..area];
                    for oy in 0..g.oh {
                        let iy = (oy * s + ky) as isize - p;
                        let dst = &mut row[oy * g.ow..(oy + 1) * g.ow];
                        if iy < 0 || iy >= g.h as isize {
                            dst.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - p;
                            *d = if ix < 0 || ix >= g.w as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f32], g: Geometry, c0: usize, cg: usize, img: &mut [f32]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let area = g.oh * g.ow;
        for ci in 0..cg {
            let plane = &mut img[(c0 + ci) * g.h * g.w..(c0 + ci + 1) * g.h * g.w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &cols[((ci * k + ky) * k + kx) * area..][..area];
                    for oy in 0..g.oh {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                        for ox in 0..g.ow {
                            let ix = (ox * s + kx) as isize - p;
                            if ix >= 0 && ix < g.w as isize {
                                dst[ix as usize] += row[oy * g.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    fn forward_image(&self, img: &[f32], g: Geometry) -> Vec<f32> {
        let area = g.oh * g.ow;
        let mut out = vec![0.0f32; self.out_channels * area];
        let w = self.weight.value.data();
        if self.is_depthwise() {
            self.depthwise_forward(img, g, &mut out);
        } else if self.is_pointwise() && self.groups == 1 {
            gemm(self.out_channels, self.in_channels, area, w, false, img, false, &mut out, 0.0);
        } else {
            let cg = self.in_channels / self.groups;
            let og = self.out_channels / self.groups;
            let plen = self.patch_len();
            let mut cols = vec![0.0f32; plen * area];
            for grp in 0..self.groups {
                self.im2col(img, g, grp * cg, cg, &mut cols);
                gemm(
                    og,
                    plen,
                    area,
                    &w[grp * og * plen..],
                    false,
                    &cols,
                    false,
                    &mut out[grp * og * area..],
                    0.0,
                );
            }
        }
        if let Some(b) = &self.bias {
            for (plane, &bv) in out.chunks_mut(area).zip(b.value.data()) {
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
        out
    }

    fn depthwise_forward(&self, img: &[f32], g: Geometry, out: &mut [f32]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let w = self.weight.value.data();
        for c in 0..g.c {
            let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
            let kern = &w[c * k * k..(c + 1) * k * k];
            let dst = &mut out[c * g.oh * g.ow..(c + 1) * g.oh * g.ow];
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let mut acc = 0.0f32;
                    for ky in 0..k {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * s + kx) as isize - p;
                            if ix >= 0 && ix < g.w as isize {
                                acc += kern[ky * k + kx] * plane[iy as usize * g.w + ix as usize];
                            }
                        }
                    }
                    dst[oy * g.ow + ox] = acc;
                }
            }
        }
    }

    /// Returns `(grad_input, grad_weight)` for one image.
    fn backward_image(&self, img: &[f32], dout: &[f32], g: Geometry) -> (Vec<f32>, Vec<f32>) {
        let area = g.oh * g.ow;
        let w = self.weight.value.data();
        let mut dx = vec![0.0f32; g.c * g.h * g.w];
        let mut dw = vec![0.0f32; w.len()];
        if self.is_depthwise() {
            let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
            for c in 0..g.c {
                let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
                let dplane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
                let kern = &w[c * k * k..(c + 1) * k * k];
                let dkern = &mut dw[c * k * k..(c + 1) * k * k];
                let dsrc = &dout[c * area..(c + 1) * area];
                for oy in 0..g.oh {
                    for ox in 0..g.ow {
                        let go = dsrc[oy * g.ow + ox];
                        if go == 0.0 {
                            continue;
                        }
                        for ky in 0..k {
                            let iy = (oy * s + ky) as isize - p;
                            if iy < 0 || iy >= g.h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * s + kx) as isize - p;
                                if ix >= 0 && ix < g.w as isize {
                                    let at = iy as usize * g.w + ix as usize;
                                    dkern[ky * k + kx] += go * plane[at];
                                    dplane[at] += go * kern[ky * k + kx];
                                }
                            }
                        }
                    }
                }
            }
        } else if self.is_pointwise() && self.groups == 1 {
            let (o, i) = (self.out_channels, self.in_channels);
            gemm(o, area, i, dout, false, img, true, &mut dw, 0.0);
            gemm(i, o, area, w, true, dout, false, &mut dx, 0.0);
        } else {
            let cg = self.in_channels / self.groups;
            let og = self.out_channels / self.groups;
            let plen = self.patch_len();
            let mut cols = vec![0.0f32; plen * area];
            let mut dcols = vec![0.0f32; plen * area];
            for grp in 0..self.groups {
                self.im2col(img, g, grp * cg, cg, &mut cols);
                let dslice = &dout[grp * og * area..(grp + 1) * og * area];
                gemm(og, area, plen, dslice, false, &cols, true, &mut dw[grp * og * plen..], 0.0);
                gemm(plen, og, area, &w[grp * og * plen..], true, dslice, false, &mut dcols, 0.0);
                self.col2im(&dcols, g, grp * cg, cg, &mut dx);
            }
        }
        (dx, dw)
    }
}

impl Module for Conv2d {
    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Tensor {
        let (n, c, h, w) = input.dims4();
        assert_eq!(c, self.in_channels, "conv expected {} channels, got {c}", self.in_channels);
        let g = Geometry {
            c,
            h,
            w,
            oh: self.output_size(h),
            ow: self.output_size(w),
        };
        let this = &*self;
        let outs = par::map(n, |i| this.forward_image(input.sample(i), g));
        self.input = Some(input.clone());
        Tensor::from_vec(&[n, self.out_channels, g.oh, g.ow], outs.concat())
    }

    fn backward(&mut self, grad_output: &Tensor) -> Tensor {
        let input = self.input.take().expect("conv backward called before forward");
        let (n, c, h, w) = input.dims4();
        let (_, _, oh, ow) = grad_output.dims4();
        let g = Geometry { c, h, w, oh, ow };
        let this = &*self;
        let parts = par::map(n, |i| this.backward_image(input.sample(i), grad_output.sample(i), g));
        let mut dx = Vec::with_capacity(input.len());
        let wgrad = self.weight.grad.data_mut();
        for (dxi, dwi) in parts {
            dx.extend_from_slice(&dxi);
            for (a, b) in wgrad.iter_mut().zip(&dwi) {
                *a += b;
            }
        }
        if let Some(b) = &mut self.bias {
            let area = oh * ow;
            let bg = b.grad.data_mut();
            for i in 0..n {
                for (ch, plane) in grad_output.sample(i).chunks(area).enumerate() {
                    bg[ch] += plane.iter().sum::<f32>();
                }
            }
        }
        self.input = Some(input);
        Tensor::from_vec(&[n, c, h, w], dx)
    }

    fn slots<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedSlot<'a>>) {
        out.push(NamedSlot {
            name: join(prefix, "weight"),
            slot: Slot::Param(&mut self.weight),
        });
        if let Some(b) = &mut self.bias {
            out.push(NamedSlot {
                name: join(prefix, "bias"),
                slot: Slot::Param(b),
            });
        }
    }
}
