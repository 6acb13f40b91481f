//! Acceptance gate. Run with `cargo test -p sharpscore --test acceptance`;
//! prints one PASS/FAIL line per criterion and exits non-zero on any FAIL.
//!
//! Set `SHARPSCORE_READERS_CSV` to a two-column file of the two clinical
//! readers' totals to also check the published inter-rater agreement.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sharpscore::config::RunConfig;
use sharpscore::dataset::{bone_age_proxy, generate_synthetic, load_manifest, ImageRecord, Manifest, Split, TargetStats, Task};
use sharpscore::ensemble::{fit_stacker, EnsembleSpec, StackFit, StackMode, StackTargets};
use sharpscore::evaluation::{agreement_report_file, classification_metrics, regression_metrics, regression_to_classification, MetricsReport};
use sharpscore::explain::{grad_cam, CamTarget};
use sharpscore::imaging::GrayImage;
use sharpscore::models::{transfer_weights, Backbone, Checkpoint, FreezeScheme, HeadKind, ModelError, ModelSpec, Network};
use sharpscore::pipeline::{self, SynthesizeArgs};
use sharpscore::preprocess::{apply_augmentation, prepare_eval, AugmentDraw, PixelStats};
use sharpscore::svdh::{total_score, ErosionArea, ErosionEntry, Hand, JsnEntry, JsnJoint, SeverityBinning, SvdHScore};
use sharpscore::training::{
    loss_and_grad, smooth_loss, smooth_loss_grad, train_with_bank, ImageBank, LossKind, SmoothLossParams, Targets,
    TrainConfig, TrainTask,
};
use sharpscore_nn::{Mode, Sgd, Tensor};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_time(started: Instant, limit: Duration) -> Result<Duration, String> {
    let t = started.elapsed();
    ensure(t < limit, || format!("took {t:.2?}, limit {limit:?}"))?;
    Ok(t)
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// Brute-force references.

fn ref_mean(v: &[f64]) -> f64 {
    let mut s = 0.0;
    for x in v {
        s += x;
    }
    s / v.len() as f64
}

fn ref_pcc(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let (mx, my) = (ref_mean(x), ref_mean(y));
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for i in 0..x.len() {
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (n - 1.0)) / ((sxx / (n - 1.0)).sqrt() * (syy / (n - 1.0)).sqrt()))
}

fn ref_mae(x: &[f64], y: &[f64]) -> f64 {
    ref_mean(&x.iter().zip(y).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>())
}

fn ref_rmse(x: &[f64], y: &[f64]) -> f64 {
    ref_mean(&x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).collect::<Vec<_>>()).sqrt()
}

fn ref_accuracy(p: &[usize], t: &[usize]) -> f64 {
    p.iter().zip(t).filter(|(a, b)| a == b).count() as f64 / p.len() as f64
}

fn ref_balanced_accuracy(p: &[usize], t: &[usize]) -> f64 {
    let mut recalls = Vec::new();
    for class in 0..10 {
        let members: Vec<usize> = (0..t.len()).filter(|&i| t[i] == class).collect();
        if !members.is_empty() {
            let hits = members.iter().filter(|&&i| p[i] == class).count();
            recalls.push(hits as f64 / members.len() as f64);
        }
    }
    ref_mean(&recalls)
}

fn metric_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for case in 0..200 {
        let n = rng.random_range(2..60);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-50.0..300.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.7 * v + rng.random_range(-40.0..40.0)).collect();
        let m = regression_metrics(&x, &y).map_err(err)?;
        let pcc = m.pcc.ok_or("pcc undefined on a non-constant pair")?;
        for (got, want) in [(pcc, ref_pcc(&x, &y).unwrap()), (m.mae, ref_mae(&x, &y)), (m.rmse, ref_rmse(&x, &y))] {
            worst = worst.max((got - want).abs());
        }
        let p: Vec<usize> = (0..n).map(|_| rng.random_range(0..10)).collect();
        let t: Vec<usize> = (0..n).map(|_| rng.random_range(0..10)).collect();
        let r = classification_metrics(&p, &t).map_err(err)?;
        worst = worst.max((r.accuracy.unwrap() - ref_accuracy(&p, &t)).abs());
        worst = worst.max((r.balanced_accuracy.unwrap() - ref_balanced_accuracy(&p, &t)).abs());
        let pf: Vec<f64> = p.iter().map(|&c| c as f64).collect();
        let tf: Vec<f64> = t.iter().map(|&c| c as f64).collect();
        let on_indices = regression_metrics(&pf, &tf).map_err(err)?;
        ensure(
            r.pcc == on_indices.pcc && r.mae == on_indices.mae && r.rmse == on_indices.rmse,
            || format!("case {case}: class metrics differ from metrics on indices"),
        )?;
    }
    ensure(worst <= 1e-9, || format!("max deviation {worst:e} > 1e-9"))?;
    let t = within_time(started, Duration::from_secs(5))?;
    Ok(format!("200 pairs, max abs deviation {worst:.1e}, {t:.2?}"))
}

fn inter_rater() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a: Vec<f64> = (0..300).map(|_| rng.random_range(0.0..280.0f64).round()).collect();
    let b: Vec<f64> = a.iter().map(|v| (v + rng.random_range(-25.0..25.0f64)).clamp(0.0, 280.0).round()).collect();
    let path = dir.path().join("readers.csv");
    let mut text = String::from("reader_1,reader_2\n");
    for (x, y) in a.iter().zip(&b) {
        text.push_str(&format!("{x},{y}\n"));
    }
    std::fs::write(&path, text).map_err(err)?;
    let r = agreement_report_file(&path).map_err(err)?;
    let worst = [
        (r.pcc.unwrap() - ref_pcc(&a, &b).unwrap()).abs(),
        (r.mae - ref_mae(&a, &b)).abs(),
        (r.rmse - ref_rmse(&a, &b)).abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    ensure(r.n == 300 && worst <= 1e-9, || format!("n {} deviation {worst:e}", r.n))?;
    match std::env::var_os("SHARPSCORE_READERS_CSV") {
        Some(p) => {
            let r = agreement_report_file(Path::new(&p)).map_err(err)?;
            let pcc = r.pcc.ok_or("reader PCC undefined")?;
            let ok = (pcc - 0.97).abs() <= 0.005 && (r.mae - 12.24).abs() <= 0.005 && (r.rmse - 18.75).abs() <= 0.005;
            ensure(ok, || format!("readers: PCC {pcc:.4}, MAE {:.4}, RMSE {:.4}", r.mae, r.rmse))?;
            Ok(format!("synthetic deviation {worst:.1e}; readers PCC {pcc:.2}, MAE {:.2}, RMSE {:.2}", r.mae, r.rmse))
        }
        None => Ok(format!(
            "300-row CSV, deviation {worst:.1e}; clinical reader columns not supplied, published values not checked"
        )),
    }
}

fn direct_smooth(x: &[f64]) -> f64 {
    let mut total = 0.0;
    for &v in x {
        total += if v.abs() < 1.0 { 0.6 * v * v } else { v.abs() - 0.0 };
    }
    (total / x.len() as f64).sqrt()
}

fn smooth_loss_criterion() -> Outcome {
    let started = Instant::now();
    let p = SmoothLossParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_value, mut worst_grad) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let n = rng.random_range(1..40);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
        let got = smooth_loss(&x, &p).map_err(err)?;
        worst_value = worst_value.max((got - direct_smooth(&x)).abs());
        let (_, grad) = smooth_loss_grad(&x, &p).map_err(err)?;
        let h = 1e-6;
        for i in 0..n {
            if (x[i].abs() - 1.0).abs() < 1e-3 {
                continue;
            }
            let (mut up, mut down) = (x.clone(), x.clone());
            up[i] += h;
            down[i] -= h;
            let fd = (direct_smooth(&up) - direct_smooth(&down)) / (2.0 * h);
            worst_grad = worst_grad.max((fd - grad[i]).abs() / fd.abs().max(1e-8));
        }
    }
    ensure(worst_value <= 1e-12, || format!("value deviation {worst_value:e}"))?;
    ensure(worst_grad <= 1e-4, || format!("gradient relative deviation {worst_grad:e}"))?;
    let at = smooth_loss(&[1.0], &p).map_err(err)?;
    let below = smooth_loss(&[1.0 - 1e-12], &p).map_err(err)?.powi(2);
    ensure(at == 1.0, || format!("s(1.0) = {at}"))?;
    ensure((below - 0.6).abs() < 1e-9, || format!("left limit {below}"))?;
    let t = within_time(started, Duration::from_secs(5))?;
    Ok(format!(
        "1000 vectors, value dev {worst_value:.1e}, grad rel dev {worst_grad:.1e}, s(1)=1, s(1-)->0.6, {t:.2?}"
    ))
}

fn svdh_arithmetic() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut lo, mut hi) = (f64::MAX, 0.0f64);
    for case in 0..10_000 {
        let heavy = rng.random_bool(0.5);
        let mut erosions = Vec::new();
        let mut oracle = 0u32;
        for hand in Hand::ALL {
            for area in ErosionArea::ALL {
                let k = if heavy { rng.random_range(2..5) } else { rng.random_range(0..3) };
                let comps: Vec<u8> = (0..k).map(|_| rng.random_range(1..=3)).collect();
                let sum: u32 = comps.iter().map(|&c| c as u32).sum();
                oracle += if sum > 5 { 5 } else { sum };
                erosions.push(ErosionEntry::new(hand, area, comps));
            }
        }
        let mut jsn = Vec::new();
        for hand in Hand::ALL {
            for joint in JsnJoint::ALL {
                let g = if heavy { rng.random_range(2..=4u8) } else { rng.random_range(0..=2u8) };
                oracle += g as u32;
                jsn.push(JsnEntry::new(hand, joint, g));
            }
        }
        let total = total_score(&SvdHScore::Detailed { erosions, jsn }).map_err(err)?;
        ensure(total == oracle as f64, || format!("case {case}: {total} != oracle {oracle}"))?;
        ensure((0.0..=280.0).contains(&total), || format!("case {case}: {total} outside [0, 280]"))?;
        lo = lo.min(total);
        hi = hi.max(total);
    }
    let example = SvdHScore::Detailed {
        erosions: vec![ErosionEntry::new(Hand::Left, ErosionArea::ALL[0], vec![2, 2, 1, 1])],
        jsn: vec![],
    };
    let ex = total_score(&example).map_err(err)?;
    ensure(ex == 5.0, || format!("2+2+1+1 gave {ex}"))?;
    Ok(format!("10000 sets equal oracle, totals in [{lo}, {hi}], 2+2+1+1=6 -> 5"))
}

fn binning() -> Outcome {
    let b = SeverityBinning::default();
    let edges = b.edges().to_vec();
    let mut prev = 0;
    let mut steps = 0;
    for i in 0..=1120 {
        let s = i as f64 * 0.25;
        let c = b.score_to_class(s).map_err(err)?;
        let containing: Vec<usize> = (0..10)
            .filter(|&k| (edges[k] <= s && s < edges[k + 1]) || (k == 9 && s == 280.0))
            .collect();
        ensure(containing == vec![c], || format!("score {s}: class {c}, containing bins {containing:?}"))?;
        ensure(c >= prev, || format!("class decreased at {s}"))?;
        prev = c;
        steps += 1;
    }
    let ends = regression_to_classification(&[-3.2, -1e9, 281.0, 1e9], &b);
    ensure(ends == vec![0, 0, 9, 9], || format!("clamped classes {ends:?}"))?;
    Ok(format!("{steps} scores each in exactly one bin, monotone; clamped extremes -> 0 and 9"))
}

fn phantom_batch(n: usize, side: usize, seed: u64) -> (Tensor, Vec<f64>) {
    let ph = generate_synthetic(n, side, seed).unwrap();
    let stats = PixelStats::new(0.3, 0.2).unwrap();
    let samples: Vec<Tensor> = ph.iter().map(|p| prepare_eval(&p.image, side, &stats).unwrap().to_sample()).collect();
    (Tensor::stack(&samples), ph.iter().map(|p| (p.total - 100.0) / 80.0).collect())
}

fn bit_equal(a: &Tensor, b: &Tensor) -> bool {
    a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn freezing() -> Outcome {
    let started = Instant::now();
    let (x, y) = phantom_batch(4, 64, 5);
    let (mut checked, mut rejected) = (0, 0);
    for backbone in Backbone::ALL {
        for freeze in FreezeScheme::ALL {
            let spec = ModelSpec::new(backbone, HeadKind::Regression).desk().with_freeze(freeze);
            if !freeze.is_valid_for(backbone) {
                let r = Network::scratch(&spec, 0);
                ensure(matches!(r, Err(ModelError::InvalidFreeze { .. })), || {
                    format!("{backbone} + {freeze} was accepted")
                })?;
                rejected += 1;
                continue;
            }
            let mut net = Network::scratch(&spec, 9).map_err(err)?;
            let plan = net.freeze_plan();
            let before = net.state();
            let mut opt = Sgd::new(0.01, 0.9, 0.001);
            for _ in 0..3 {
                net.zero_grad();
                let out = net.forward(&x, Mode::Train).map_err(err)?;
                let outputs: Vec<f32> = out.data().to_vec();
                let (_, g) = loss_and_grad(LossKind::Mse, &SmoothLossParams::default(), &outputs, &Targets::Regression(y.clone()))
                    .map_err(err)?;
                net.backward(&Tensor::from_vec(out.shape(), g));
                net.sgd_step(&mut opt);
            }
            let after = net.state();
            let sections = freeze.frozen_sections();
            let frozen_buffers: Vec<&String> = before
                .keys()
                .filter(|k| sections.iter().any(|s| k.starts_with(&format!("{s}."))))
                .collect();
            for name in plan.frozen_parameter_names.iter().chain(frozen_buffers) {
                ensure(bit_equal(&before[name], &after[name]), || format!("{backbone} + {freeze}: frozen {name} changed"))?;
            }
            let changed = plan.trainable_parameter_names.iter().any(|n| !bit_equal(&before[n], &after[n]));
            ensure(changed, || format!("{backbone} + {freeze}: no trainable parameter changed"))?;
            checked += 1;
        }
    }
    let t = within_time(started, Duration::from_secs(120))?;
    Ok(format!("{checked} valid pairings hold, {rejected} invalid pairings rejected, {t:.2?}"))
}

fn synthetic_manifest(n: usize, side: usize, seed: u64, task: Task) -> (Manifest, ImageBank) {
    let ph = generate_synthetic(n, side, seed).unwrap();
    let records = ph
        .iter()
        .enumerate()
        .map(|(i, p)| ImageRecord {
            id: format!("s{i}"),
            image_path: format!("s{i}.png").into(),
            target: match task {
                Task::Svdh => p.total,
                Task::BoneAge => bone_age_proxy(p.total),
            },
            split: pipeline::synthetic_split(i),
        })
        .collect();
    let images: Vec<GrayImage> = ph.into_iter().map(|p| p.image).collect();
    (Manifest::from_records(records, task).unwrap(), ImageBank::from_images(&images, side).unwrap())
}

fn transfer() -> Outcome {
    let (manifest, bank) = synthetic_manifest(32, 64, 6, Task::BoneAge);
    let dir = tempfile::tempdir().map_err(err)?;
    let mut notes = Vec::new();
    for backbone in Backbone::ALL {
        let mut cfg = TrainConfig::new(TrainTask::BoneAge);
        cfg.epochs = 2;
        cfg.augment.target_size = 64;
        cfg.seed = 6;
        let mut net = Network::scratch(&ModelSpec::new(backbone, HeadKind::Regression).desk(), 6).map_err(err)?;
        let out = train_with_bank(&mut net, &manifest, &bank, &cfg, |_| {}).map_err(err)?;
        let path = dir.path().join(format!("{backbone}.ckpt"));
        out.best.save(&path).map_err(err)?;
        let loaded = Checkpoint::load(&path).map_err(err)?;
        let lossless = loaded.tensors.len() == out.best.tensors.len()
            && loaded.tensors.iter().all(|(k, v)| out.best.tensors.get(k).is_some_and(|w| bit_equal(v, w)))
            && loaded.target_stats == out.best.target_stats
            && loaded.pixel_stats == out.best.pixel_stats
            && (loaded.backbone, loaded.head, loaded.scale, loaded.epoch)
                == (out.best.backbone, out.best.head, out.best.scale, out.best.epoch);
        ensure(lossless, || format!("{backbone}: checkpoint round trip changed contents"))?;
        for head in [HeadKind::Regression, HeadKind::Classification] {
            let spec = ModelSpec::new(backbone, head).desk();
            let state = transfer_weights(&loaded, &spec, 99).map_err(err)?.state();
            let mut copied = 0;
            for (name, t) in &state {
                if name.starts_with("head.") {
                    continue;
                }
                ensure(bit_equal(t, &loaded.tensors[name]), || format!("{backbone}/{head:?}: {name} differs"))?;
                copied += 1;
            }
            let fresh = Network::scratch(&spec, 99).map_err(err)?.state();
            for name in state.keys().filter(|k| k.starts_with("head.")) {
                let reinit = bit_equal(&state[name], &fresh[name]) && !bit_equal(&state[name], &loaded.tensors[name]);
                ensure(reinit, || format!("{backbone}/{head:?}: {name} not re-initialized"))?;
            }
            ensure(state["head.fc.weight"].shape()[0] == head.width(), || "head width".into())?;
            if head == HeadKind::Regression {
                notes.push(format!("{backbone} {copied}"));
            }
        }
    }
    Ok(format!("backbone tensors copied bit-exactly ({}), heads fresh, round trip lossless", notes.join(", ")))
}

fn sorted_bits(img: &GrayImage) -> Vec<u32> {
    let mut v: Vec<u32> = img.pixels().iter().map(|p| p.to_bits()).collect();
    v.sort_unstable();
    v
}

fn augmentation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let stats = PixelStats::new(0.45, 0.27).map_err(err)?;
    for i in 0..100 {
        let (w, h) = (rng.random_range(1..40), rng.random_range(1..40));
        let img = GrayImage::new(w, h, (0..w * h).map(|_| rng.random::<f32>()).collect()).map_err(err)?;
        let reference = sorted_bits(&img);
        for turns in 0..4u8 {
            for flip in [false, true] {
                let base = if flip { img.flip_horizontal() } else { img.clone() };
                let out = base.rotate_quarter(turns);
                ensure(sorted_bits(&out) == reference, || format!("image {i}: flip {flip} turns {turns}"))?;
            }
        }
        let size = rng.random_range(8..48);
        let a = apply_augmentation(&img, AugmentDraw::IDENTITY, size, &stats).map_err(err)?;
        let b = prepare_eval(&img, size, &stats).map_err(err)?;
        let same = (a.width(), a.height()) == (b.width(), b.height())
            && a.pixels().iter().zip(b.pixels()).all(|(x, y)| x.to_bits() == y.to_bits());
        ensure(same, || format!("image {i}: identity draw differs from prepare_eval"))?;
    }
    Ok("100 images: flips and quarter turns preserve pixel multisets; identity draw == prepare_eval bitwise".into())
}

fn standardization() -> Outcome {
    let (manifest, _) = synthetic_manifest(64, 32, 10, Task::Svdh);
    let stats = manifest.target_stats;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0f64;
    let values = (0..=2800).map(|i| i as f64 * 0.1).chain((0..1000).map(|_| rng.random_range(0.0..=280.0)));
    for y in values {
        worst = worst.max((stats.destandardize(stats.standardize(y)) - y).abs());
    }
    ensure(worst <= 1e-6, || format!("round-trip deviation {worst:e}"))?;
    let pinned = TargetStats::new(15.0, 5.0).map_err(err)?;
    ensure((pinned.standardize(47.0) - 6.4).abs() < 1e-12, || "standardize(47) with mean 15, sd 5".into())?;
    Ok(format!("mean {:.2}, sd {:.2}; max round-trip deviation {worst:.1e} over [0, 280]", stats.mean, stats.sd))
}

/// Least squares for `y ~ w.x + b` via the normal equations and
/// Gauss-Jordan elimination with partial pivoting.
fn normal_equations(x: &[[f64; 3]], y: &[f64]) -> [f64; 4] {
    let mut a = [[0.0f64; 5]; 4];
    for (row, &t) in x.iter().zip(y) {
        let f = [row[0], row[1], row[2], 1.0];
        for i in 0..4 {
            for j in 0..4 {
                a[i][j] += f[i] * f[j];
            }
            a[i][4] += f[i] * t;
        }
    }
    for c in 0..4 {
        let p = (c..4).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        for r in 0..4 {
            if r != c {
                let k = a[r][c] / a[c][c];
                for j in c..5 {
                    a[r][j] -= k * a[c][j];
                }
            }
        }
    }
    [a[0][4] / a[0][0], a[1][4] / a[1][1], a[2][4] / a[2][2], a[3][4] / a[3][3]]
}

fn members_with_bias(rng: &mut ChaCha8Rng, n: usize) -> (Vec<[f64; 3]>, Vec<f64>) {
    let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
    let beta = 0.6;
    let mut rows = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let t: f64 = rng.sample(normal);
        let e: [f64; 3] = [rng.sample(normal), rng.sample(normal), rng.sample(normal)];
        rows.push([t + beta + 0.35 * e[0], t - beta + 0.4 * e[1], t + 0.5 * e[2]]);
        y.push(t);
    }
    (rows, y)
}

fn columns(rows: &[[f64; 3]]) -> Vec<Vec<f64>> {
    (0..3).map(|m| rows.iter().map(|r| r[m]).collect()).collect()
}

fn ensemble() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (fit_x, fit_y) = members_with_bias(&mut rng, 400);
    let (test_x, test_y) = members_with_bias(&mut rng, 400);
    let stacker = fit_stacker(&columns(&fit_x), &StackTargets::Regression(fit_y.clone()), StackMode::Regression, &StackFit::default())
        .map_err(err)?;
    let w = normal_equations(&fit_x, &fit_y);
    let oracle_pred: Vec<f64> = test_x.iter().map(|r| w[0] * r[0] + w[1] * r[1] + w[2] * r[2] + w[3]).collect();
    let test_cols = columns(&test_x);
    let pred = stacker.apply(&test_cols).map_err(err)?;
    let (rmse, rmse_oracle) = (ref_rmse(&pred, &test_y), ref_rmse(&oracle_pred, &test_y));
    let rel = (rmse - rmse_oracle).abs() / rmse_oracle;
    ensure(rel <= 1e-3, || format!("held-out RMSE {rmse:.6} vs oracle {rmse_oracle:.6} (rel {rel:.1e})"))?;
    let member_rmse: Vec<f64> = test_cols.iter().map(|m| ref_rmse(m, &test_y)).collect();
    ensure(member_rmse.iter().all(|&m| rmse < m), || format!("stacked {rmse:.4} vs members {member_rmse:?}"))?;
    let spec = EnsembleSpec::new(vec!["a".into(), "b".into(), "c".into()], stacker, None).map_err(err)?;
    ensure(EnsembleSpec::from_json(&spec.to_json().map_err(err)?).map_err(err)? == spec, || "spec JSON round trip".into())?;

    let (n, k) = (50, 10);
    let logits: Vec<Vec<f64>> = (0..3).map(|_| (0..n * k).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let single = fit_stacker(&logits, &StackTargets::Classes(labels), StackMode::ClassificationSingleClass, &StackFit::default())
        .map_err(err)?;
    let base = single.apply(&logits).map_err(err)?;
    for class in 0..k {
        let mut perturbed = logits.clone();
        for m in perturbed.iter_mut() {
            for i in 0..n {
                for c in (0..k).filter(|&c| c != class) {
                    m[i * k + c] += rng.random_range(-5.0..5.0);
                }
            }
        }
        let out = single.apply(&perturbed).map_err(err)?;
        for i in 0..n {
            ensure(out[i * k + class] == base[i * k + class], || format!("class {class} sample {i} moved"))?;
        }
    }
    let members = member_rmse.iter().map(|m| format!("{m:.3}")).collect::<Vec<_>>().join("/");
    Ok(format!(
        "held-out RMSE {rmse:.5} vs least squares {rmse_oracle:.5} (rel {rel:.1e}), members {members}; single-class logits independent"
    ))
}

fn grad_cam_criterion() -> Outcome {
    let started = Instant::now();
    let (x, _) = phantom_batch(2, 64, 13);
    for backbone in Backbone::ALL {
        for head in [HeadKind::Regression, HeadKind::Classification] {
            let mut net = Network::scratch(&ModelSpec::new(backbone, head).desk(), 14).map_err(err)?;
            let expected = net.feature_size(64);
            let maps = grad_cam(&mut net, &x, CamTarget::Predicted).map_err(err)?;
            for m in &maps {
                ensure(m.raw.iter().chain(&m.values).all(|&v| v >= 0.0), || format!("{backbone}: negative heat"))?;
                ensure((m.raw_width, m.raw_height) == (expected, expected), || {
                    format!("{backbone}: raw grid {}x{}, feature map {expected}", m.raw_width, m.raw_height)
                })?;
                ensure((m.width, m.height) == (64, 64), || "upsampled size".into())?;
                let constant = m.values.iter().all(|&v| v == m.values[0]);
                ensure(constant || m.max() == 1.0, || format!("{backbone}: max {}", m.max()))?;
            }
            net.head_mut().bias.value.data_mut().iter_mut().for_each(|b| *b += 3.5);
            let shifted = grad_cam(&mut net, &x, CamTarget::Predicted).map_err(err)?;
            ensure(shifted.iter().zip(&maps).all(|(a, b)| a.values == b.values), || {
                format!("{backbone}/{head:?}: output shift changed heatmap")
            })?;
            net.head_mut().weight.value.fill(0.0);
            let zero = grad_cam(&mut net, &x, CamTarget::Predicted).map_err(err)?;
            ensure(zero.iter().all(|m| m.values.iter().all(|&v| v == 0.0)), || {
                format!("{backbone}/{head:?}: zero head gave non-zero heat")
            })?;
        }
    }
    let mut net = Network::scratch(&ModelSpec::new(Backbone::Resnet34, HeadKind::Regression).desk(), 15).map_err(err)?;
    let full = Tensor::from_vec(&[1, 1, 1024, 1024], (0..1024 * 1024).map(|i| ((i % 97) as f32) / 97.0).collect());
    let expected = net.feature_size(1024);
    let m = grad_cam(&mut net, &full, CamTarget::Regression).map_err(err)?.remove(0);
    ensure((m.raw_width, m.raw_height, m.width) == (expected, expected, 1024), || {
        format!("1024 input: raw {}x{}, feature map {expected}", m.raw_width, m.raw_height)
    })?;
    let t = within_time(started, Duration::from_secs(30))?;
    Ok(format!(
        "3 backbones x 2 heads: non-negative, max 1, zero head -> 0, shift-invariant; raw 2x2 at 64 px, {expected}x{expected} at 1024 px; {t:.2?}"
    ))
}

fn end_to_end() -> Outcome {
    let started = Instant::now();
    let dir = tempfile::tempdir().map_err(err)?;
    let data = dir.path().join("data");
    pipeline::synthesize(&SynthesizeArgs {
        count: 64,
        size: 64,
        seed: 7,
        out: data.clone(),
        force: false,
    })
    .map_err(err)?;
    let mut config = RunConfig::default();
    config.desk_scale = true;
    config.seed = 7;
    config.out = dir.path().join("run");
    config.data.manifest = data.join(pipeline::SVDH_MANIFEST);
    config.train.epochs = Some(5);
    config.validate().map_err(err)?;
    let summary = pipeline::train(&config).map_err(err)?;
    let ratio = summary.final_train_mae / summary.first_train_mae;
    ensure(ratio < 0.5, || {
        format!("final train MAE {:.2} vs epoch-1 {:.2}", summary.final_train_mae, summary.first_train_mae)
    })?;
    pipeline::evaluate(&config).map_err(err)?;
    let eval_dir = config.out.join("evaluate");
    let text = std::fs::read_to_string(eval_dir.join("metrics.json")).map_err(err)?;
    let report: MetricsReport = serde_json::from_str(&text).map_err(err)?;
    let n_test = load_manifest(&config.data.manifest, Task::Svdh).map_err(err)?.count(Split::Test);
    ensure(report.n == n_test && report.rmse >= report.mae && report.mae >= 0.0, || format!("bad report {report:?}"))?;
    ensure(report.pcc.is_none_or(|p| (-1.0..=1.0).contains(&p)), || "pcc out of range".into())?;
    let scatter = image::open(eval_dir.join("scatter.png")).map_err(err)?;
    ensure(scatter.width() > 0 && scatter.height() > 0, || "empty scatter".into())?;
    let t = within_time(started, Duration::from_secs(300))?;
    Ok(format!(
        "train MAE {:.1} -> {:.1} (ratio {ratio:.2}); test MAE {:.1} on {n_test}; {t:.2?}",
        summary.first_train_mae, summary.final_train_mae, report.mae
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("metric oracle equivalence", metric_oracle),
        ("inter-rater agreement report", inter_rater),
        ("smooth loss", smooth_loss_criterion),
        ("SvdH arithmetic", svdh_arithmetic),
        ("severity binning", binning),
        ("freezing contract", freezing),
        ("transfer contract", transfer),
        ("augmentation invariants", augmentation),
        ("target standardization", standardization),
        ("stacked ensemble", ensemble),
        ("Grad-CAM", grad_cam_criterion),
        ("desk-scale end-to-end smoke", end_to_end),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        match std::panic::catch_unwind(run) {
            Ok(Ok(detail)) => println!("PASS  {name}: {detail}"),
            Ok(Err(why)) => {
                println!("FAIL  {name}: {why}");
                failed += 1;
            }
            Err(_) => {
                println!("FAIL  {name}: panicked");
                failed += 1;
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
