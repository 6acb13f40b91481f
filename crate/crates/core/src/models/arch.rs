//! ResNet-34/50 and MobileNetV2 layouts for single-channel input.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use sharpscore_nn::{BatchNorm2d, Conv2d, Linear, MaxPool2d, Relu, Relu6, Residual, Sequential, Tensor};

use super::{Backbone, ModelScale};

/// Backbone sections in forward order plus the width of the feature map
/// handed to the head.
pub(crate) struct Layout {
    pub sections: Vec<(String, Sequential)>,
    pub feature_channels: usize,
}

fn conv<R: Rng + ?Sized>(cin: usize, cout: usize, k: usize, s: usize, groups: usize, rng: &mut R) -> Conv2d {
    Conv2d::new(cin, cout, k, s, k / 2, groups, rng)
}

fn basic_block<R: Rng + ?Sized>(cin: usize, width: usize, stride: usize, rng: &mut R) -> Residual {
    let main = Sequential::new()
        .with("conv1", conv(cin, width, 3, stride, 1, rng))
        .with("bn1", BatchNorm2d::new(width))
        .with("relu1", Relu::new())
        .with("conv2", conv(width, width, 3, 1, 1, rng))
        .with("bn2", BatchNorm2d::new(width));
    let mut block = Residual::new(main).with_output_relu();
    if stride != 1 || cin != width {
        block = block.with_shortcut(
            Sequential::new()
                .with("0", conv(cin, width, 1, stride, 1, rng))
                .with("1", BatchNorm2d::new(width)),
        );
    }
    block
}

fn bottleneck<R: Rng + ?Sized>(cin: usize, width: usize, stride: usize, rng: &mut R) -> Residual {
    let out = width * 4;
    let main = Sequential::new()
        .with("conv1", conv(cin, width, 1, 1, 1, rng))
        .with("bn1", BatchNorm2d::new(width))
        .with("relu1", Relu::new())
        .with("conv2", conv(width, width, 3, stride, 1, rng))
        .with("bn2", BatchNorm2d::new(width))
        .with("relu2", Relu::new())
        .with("conv3", conv(width, out, 1, 1, 1, rng))
        .with("bn3", BatchNorm2d::new(out));
    let mut block = Residual::new(main).with_output_relu();
    if stride != 1 || cin != out {
        block = block.with_shortcut(
            Sequential::new()
                .with("0", conv(cin, out, 1, stride, 1, rng))
                .with("1", BatchNorm2d::new(out)),
        );
    }
    block
}

fn resnet<R: Rng + ?Sized>(bottlenecks: bool, blocks: [usize; 4], base: usize, rng: &mut R) -> Layout {
    let stem = Sequential::new()
        .with("conv", conv(1, base, 7, 2, 1, rng))
        .with("bn", BatchNorm2d::new(base))
        .with("relu", Relu::new())
        .with("pool", MaxPool2d::new(3, 2, 1));
    let mut sections = vec![("stem".to_string(), stem)];
    let expansion = if bottlenecks { 4 } else { 1 };
    let mut cin = base;
    for (i, &count) in blocks.iter().enumerate() {
        let width = base << i;
        let mut stage = Sequential::new();
        for b in 0..count {
            let stride = if i > 0 && b == 0 { 2 } else { 1 };
            if bottlenecks {
                stage.push(b.to_string(), bottleneck(cin, width, stride, rng));
            } else {
                stage.push(b.to_string(), basic_block(cin, width, stride, rng));
            }
            cin = width * expansion;
        }
        sections.push((format!("stage{}", i + 1), stage));
    }
    Layout {
        sections,
        feature_channels: cin,
    }
}

/// `(expansion, out_channels, repeats, first_stride)` per stack.
type IrbStack = (usize, usize, usize, usize);

const MOBILENET_FULL: [IrbStack; 7] = [
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
];

const MOBILENET_DESK: [IrbStack; 7] = [
    (1, 8, 1, 1),
    (4, 8, 1, 2),
    (4, 16, 1, 2),
    (4, 16, 1, 2),
    (4, 24, 1, 1),
    (4, 32, 1, 2),
    (4, 32, 1, 1),
];

fn inverted_residual<R: Rng + ?Sized>(cin: usize, cout: usize, expand: usize, stride: usize, rng: &mut R) -> Residual {
    let hidden = cin * expand;
    let mut main = Sequential::new();
    if expand != 1 {
        main.push("expand_conv", conv(cin, hidden, 1, 1, 1, rng));
        main.push("expand_bn", BatchNorm2d::new(hidden));
        main.push("expand_relu", Relu6::new());
    }
    main.push("dw_conv", conv(hidden, hidden, 3, stride, hidden, rng));
    main.push("dw_bn", BatchNorm2d::new(hidden));
    main.push("dw_relu", Relu6::new());
    main.push("project_conv", conv(hidden, cout, 1, 1, 1, rng));
    main.push("project_bn", BatchNorm2d::new(cout));
    if stride == 1 && cin == cout {
        Residual::new(main)
    } else {
        Residual::plain(main)
    }
}

fn mobilenet<R: Rng + ?Sized>(stem_width: usize, stacks: &[IrbStack], last: usize, rng: &mut R) -> Layout {
    let stem = Sequential::new()
        .with("conv", conv(1, stem_width, 3, 2, 1, rng))
        .with("bn", BatchNorm2d::new(stem_width))
        .with("relu", Relu6::new());
    let mut sections = vec![("stem".to_string(), stem)];
    let mut cin = stem_width;
    for (i, &(t, c, n, s)) in stacks.iter().enumerate() {
        let mut stack = Sequential::new();
        for b in 0..n {
            let stride = if b == 0 { s } else { 1 };
            stack.push(b.to_string(), inverted_residual(cin, c, t, stride, rng));
            cin = c;
        }
        sections.push((format!("stack{}", i + 1), stack));
    }
    let tail = Sequential::new()
        .with("conv", conv(cin, last, 1, 1, 1, rng))
        .with("bn", BatchNorm2d::new(last))
        .with("relu", Relu6::new());
    sections.push(("tail".to_string(), tail));
    Layout {
        sections,
        feature_channels: last,
    }
}

pub(crate) fn backbone_layout<R: Rng + ?Sized>(backbone: Backbone, scale: ModelScale, rng: &mut R) -> Layout {
    match (backbone, scale) {
        (Backbone::Resnet34, ModelScale::Full) => resnet(false, [3, 4, 6, 3], 64, rng),
        (Backbone::Resnet34, ModelScale::Desk) => resnet(false, [1, 1, 1, 1], 8, rng),
        (Backbone::Resnet50, ModelScale::Full) => resnet(true, [3, 4, 6, 3], 64, rng),
        (Backbone::Resnet50, ModelScale::Desk) => resnet(true, [1, 1, 1, 1], 8, rng),
        (Backbone::Mobilenetv2, ModelScale::Full) => mobilenet(32, &MOBILENET_FULL, 1280, rng),
        (Backbone::Mobilenetv2, ModelScale::Desk) => mobilenet(8, &MOBILENET_DESK, 64, rng),
    }
}

/// Fresh head for `backbone`: PyTorch-default uniform for ResNets,
/// `N(0, 0.01)` weights and zero bias for MobileNetV2.
pub(crate) fn new_head<R: Rng + ?Sized>(backbone: Backbone, features: usize, outputs: usize, rng: &mut R) -> Linear {
    let mut fc = Linear::new(features, outputs, rng);
    if backbone == Backbone::Mobilenetv2 {
        let normal = Normal::new(0.0f32, 0.01).expect("finite sd");
        let w = (0..features * outputs).map(|_| normal.sample(rng)).collect();
        fc.weight.value = Tensor::from_vec(&[outputs, features], w);
        fc.bias.value.fill(0.0);
    }
    fc
}
