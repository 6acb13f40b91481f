//! Finite-difference checks of every layer's backward pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sharpscore_nn::{
    par, BatchNorm2d, Conv2d, GlobalAvgPool, Linear, MaxPool2d, Mode, Module, Relu, Relu6,
    Residual, Sequential, Slot, Tensor,
};

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let len = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| StandardNormal.sample(rng)).collect())
}

/// Projection loss `sum(r * f(x))` evaluated in f64.
fn project(y: &Tensor, r: &Tensor) -> f64 {
    y.data().iter().zip(r.data()).map(|(&a, &b)| a as f64 * b as f64).sum()
}

fn assert_close(analytic: f64, numeric: f64, scale: f64, what: &str) {
    let err = (analytic - numeric).abs();
    assert!(
        err <= 2e-2 * scale.max(1e-3),
        "{what}: analytic {analytic} vs numeric {numeric} (scale {scale})"
    );
}

/// Check input and parameter gradients of `module` at `x`.
fn check(module: &mut dyn Module, x: &Tensor, mode: Mode, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = module.forward(x, mode);
    let r = randn(y.shape(), &mut rng);
    let dx = module.backward(&r);
    let eps = 1e-2f32;

    let scale = dx.data().iter().map(|v| v.abs() as f64).fold(0.0, f64::max);
    let stride = (x.len() / 24).max(1);
    for i in (0..x.len()).step_by(stride) {
        let mut xp = x.clone();
        xp.data_mut()[i] += eps;
        let mut xm = x.clone();
        xm.data_mut()[i] -= eps;
        let num = (project(&module.forward(&xp, mode), &r) - project(&module.forward(&xm, mode), &r))
            / (2.0 * eps as f64);
        assert_close(dx.data()[i] as f64, num, scale, &format!("input[{i}]"));
    }

    // Parameter gradients from a clean forward/backward.
    let mut grads = Vec::new();
    {
        let mut slots = Vec::new();
        module.slots("", &mut slots);
        for s in slots.iter_mut() {
            if let Slot::Param(p) = &mut s.slot {
                p.zero_grad();
            }
        }
    }
    module.forward(x, mode);
    module.backward(&r);
    {
        let mut slots = Vec::new();
        module.slots("", &mut slots);
        for s in slots.iter() {
            if let Slot::Param(p) = &s.slot {
                grads.push((s.name.clone(), p.grad.clone()));
            }
        }
    }
    for (pi, (name, grad)) in grads.iter().enumerate() {
        let scale = grad.data().iter().map(|v| v.abs() as f64).fold(0.0, f64::max);
        let stride = (grad.len() / 8).max(1);
        for i in (0..grad.len()).step_by(stride) {
            let mut eval = |delta: f32| {
                {
                    let mut slots = Vec::new();
                    module.slots("", &mut slots);
                    let mut params: Vec<_> = slots.into_iter().filter(|s| s.is_param()).collect();
                    params[pi].tensor_mut().data_mut()[i] += delta;
                }
                let v = project(&module.forward(x, mode), &r);
                {
                    let mut slots = Vec::new();
                    module.slots("", &mut slots);
                    let mut params: Vec<_> = slots.into_iter().filter(|s| s.is_param()).collect();
                    params[pi].tensor_mut().data_mut()[i] -= delta;
                }
                v
            };
            let num = (eval(eps) - eval(-eps)) / (2.0 * eps as f64);
            assert_close(grad.data()[i] as f64, num, scale, &format!("{name}[{i}]"));
        }
    }
}

#[test]
fn conv_dense_strided_padded() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut conv = Conv2d::new(3, 4, 3, 2, 1, 1, &mut rng).with_bias();
    let x = randn(&[2, 3, 7, 7], &mut rng);
    check(&mut conv, &x, Mode::Train, 10);
}

#[test]
fn conv_pointwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut conv = Conv2d::new(5, 3, 1, 1, 0, 1, &mut rng);
    let x = randn(&[2, 5, 4, 4], &mut rng);
    check(&mut conv, &x, Mode::Train, 11);
}

#[test]
fn conv_depthwise_and_grouped() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut dw = Conv2d::new(4, 4, 3, 2, 1, 4, &mut rng);
    let x = randn(&[2, 4, 6, 6], &mut rng);
    check(&mut dw, &x, Mode::Train, 12);
    let mut grouped = Conv2d::new(4, 6, 3, 1, 1, 2, &mut rng);
    check(&mut grouped, &x, Mode::Train, 13);
}

#[test]
fn conv_seven_by_seven_stem() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut conv = Conv2d::new(1, 2, 7, 2, 3, 1, &mut rng);
    let x = randn(&[1, 1, 9, 9], &mut rng);
    check(&mut conv, &x, Mode::Train, 14);
}

#[test]
fn batchnorm_train_and_eval() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = randn(&[3, 2, 3, 3], &mut rng);
    let mut bn = BatchNorm2d::new(2);
    bn.gamma.value = Tensor::from_vec(&[2], vec![1.5, -0.7]);
    bn.beta.value = Tensor::from_vec(&[2], vec![0.2, 0.1]);
    check(&mut bn, &x, Mode::Train, 15);
    check(&mut bn, &x, Mode::Eval, 16);
}

#[test]
fn frozen_batchnorm_keeps_running_stats() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = randn(&[4, 3, 5, 5], &mut rng);
    let mut bn = BatchNorm2d::new(3);
    bn.set_frozen(true);
    let before = (bn.running_mean.clone(), bn.running_var.clone());
    let y = bn.forward(&x, Mode::Train);
    assert_eq!(before, (bn.running_mean.clone(), bn.running_var.clone()));
    let e = bn.forward(&x, Mode::Eval);
    assert_eq!(y, e);
    bn.set_frozen(false);
    bn.forward(&x, Mode::Train);
    assert_ne!(before.0, bn.running_mean);
}

#[test]
fn linear_and_pooling() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut fc = Linear::new(6, 3, &mut rng);
    let x = randn(&[4, 6], &mut rng);
    check(&mut fc, &x, Mode::Train, 17);

    let mut gap = GlobalAvgPool::new();
    check(&mut gap, &randn(&[2, 3, 4, 5], &mut rng), Mode::Train, 18);

    // Spread values out so the finite-difference step never flips a max.
    let mut mp = MaxPool2d::new(3, 2, 1);
    let vals: Vec<f32> = (0..2 * 2 * 6 * 6).map(|i| ((i * 37) % 144) as f32 * 0.1).collect();
    check(&mut mp, &Tensor::from_vec(&[2, 2, 6, 6], vals), Mode::Train, 19);
}

#[test]
fn activations_away_from_kinks() {
    let vals: Vec<f32> = (0..40).map(|i| -3.05 + 0.25 * i as f32).collect();
    let x = Tensor::from_vec(&[1, 1, 5, 8], vals);
    check(&mut Relu::new(), &x, Mode::Train, 20);
    check(&mut Relu6::new(), &x, Mode::Train, 21);
}

#[test]
fn residual_block_with_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let main = Sequential::new()
        .with("conv1", Conv2d::new(2, 4, 3, 2, 1, 1, &mut rng))
        .with("bn1", BatchNorm2d::new(4));
    let shortcut = Sequential::new()
        .with("0", Conv2d::new(2, 4, 1, 2, 0, 1, &mut rng))
        .with("1", BatchNorm2d::new(4));
    let mut block = Residual::new(main).with_shortcut(shortcut);
    let x = randn(&[2, 2, 6, 6], &mut rng);
    check(&mut block, &x, Mode::Eval, 22);
}

#[test]
fn parallel_and_sequential_agree_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = randn(&[6, 4, 9, 9], &mut rng);
    let r = randn(&[6, 8, 5, 5], &mut rng);
    let run = |sequential: bool| {
        par::set_sequential(sequential);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut conv = Conv2d::new(4, 8, 3, 2, 1, 1, &mut rng);
        let y = conv.forward(&x, Mode::Train);
        let dx = conv.backward(&r);
        (y, dx, conv.weight.grad.clone())
    };
    let a = run(true);
    let b = run(false);
    par::set_sequential(false);
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
}
