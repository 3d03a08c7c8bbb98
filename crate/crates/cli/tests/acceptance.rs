//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and exits
//! nonzero when any criterion fails.
//!
//! Criterion 8 checks the report tree of a full-size training run; point
//! `OCTSEG_FULL_RUN` at that run's output root to enable it.

mod common;

use std::fs;
use std::panic;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use ndarray::{s, Array1, Array2, Array3, Array4, Axis};
use octseg::dataio::{
    decode_one_hot, load_dataset, one_hot_encode, read_cache, resize_nearest, synthetic::layered_samples, write_npy_sample,
};
use octseg::evalreport::evaluate;
use octseg::nn::{Activation, LayerParams, Network, NetworkBuilder};
use octseg::objectives::{accuracy, hybrid_loss, hybrid_loss_with_grad, iou, ClassCounts, DiceReduction, LossConfig, MetricsReport};
use octseg::segnet::{build_model, ArchitectureConfig, DecoderMode};
use octseg::trainer::{
    train, CheckpointBest, EarlyStopConfig, EarlyStopping, ReduceLrConfig, ReduceLrOnPlateau, StopDecision,
    TrainingConfig,
};
use octseg::xai::{gradcam_network, mean_intensity, GradCamResult, ScoreKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = fn() -> Outcome;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn within_budget(start: Instant, budget: Duration, outcome: Outcome) -> Outcome {
    let took = start.elapsed();
    match outcome {
        Outcome::Pass(d) if took > budget => Outcome::Fail(format!("{d}; took {took:.1?} > budget {budget:?}")),
        Outcome::Pass(d) => Outcome::Pass(format!("{d}; {took:.1?}")),
        other => other,
    }
}

// 1. Metrics vs. an independent confusion-matrix computation.

fn confusion(t: &Array2<u8>, p: &Array2<u8>, k: usize) -> Vec<Vec<u64>> {
    let mut m = vec![vec![0u64; k]; k];
    for (&a, &b) in t.iter().zip(p.iter()) {
        m[a as usize][b as usize] += 1;
    }
    m
}

/// `(accuracy, mean dice, mean iou, per-class iou)`; classes with no pixel
/// in either mask are left out of the means and score 1.
fn oracle_metrics(m: &[Vec<u64>]) -> (f64, f64, f64, Vec<f64>) {
    let k = m.len();
    let total: u64 = m.iter().flatten().sum();
    let diag: u64 = (0..k).map(|c| m[c][c]).sum();
    let mut dice = Vec::new();
    let mut ious = Vec::new();
    let mut per_class = vec![1.0; k];
    for c in 0..k {
        let row: u64 = m[c].iter().sum();
        let col: u64 = m.iter().map(|r| r[c]).sum();
        if row + col == 0 {
            continue;
        }
        let tp = m[c][c] as f64;
        dice.push(2.0 * tp / (row + col) as f64);
        per_class[c] = tp / (row + col - m[c][c]) as f64;
        ious.push(per_class[c]);
    }
    let mean = |v: &[f64]| if v.is_empty() { 1.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    (diag as f64 / total as f64, mean(&dice), mean(&ious), per_class)
}

fn metric_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let trials = 2000;
    let mut worst = 0.0f64;
    for trial in 0..trials {
        // Skewed label draws so some classes go missing.
        let spread = 1 + trial % 8;
        let t = Array2::from_shape_simple_fn((8, 8), || rng.random_range(0..spread) as u8);
        let p = Array2::from_shape_simple_fn((8, 8), || {
            if rng.random_bool(0.6) {
                0
            } else {
                rng.random_range(0..8u8)
            }
        });
        let p = ndarray::Zip::from(&p).and(&t).map_collect(|&p, &t| if p == 0 { t } else { p });
        let (acc, dice, miou, per_class) = oracle_metrics(&confusion(&t, &p, 8));
        let mut counts = ClassCounts::new(8);
        counts.update(t.view(), p.view()).unwrap();
        let report = MetricsReport::from_counts(&counts, 0.0);
        let mut diffs = vec![
            (report.accuracy - acc).abs(),
            (accuracy(t.view(), p.view()).unwrap() - acc).abs(),
            (report.dice - dice).abs(),
            (report.iou - miou).abs(),
        ];
        for c in 0..8 {
            diffs.push((iou(t.view(), p.view(), c, 8).unwrap().value - per_class[c]).abs());
            diffs.push((report.per_class_iou[c] - per_class[c]).abs());
        }
        worst = diffs.into_iter().fold(worst, f64::max);
    }
    within_budget(
        start,
        Duration::from_secs(10),
        check(worst <= 1e-12, format!("{trials} mask pairs, max abs diff {worst:.1e} (tol 1e-12)")),
    )
}

// 2. Hybrid-loss gradient vs. central differences.

fn loss_gradient() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for trial in 0..100 {
        let config = LossConfig {
            dice_reduction: if trial % 2 == 0 { DiceReduction::MeanOverClasses } else { DiceReduction::Global },
            ..LossConfig::default()
        };
        let mut y = Array3::<f64>::zeros((4, 4, 8));
        for mut lane in y.lanes_mut(Axis(2)) {
            lane[rng.random_range(0..8)] = 1.0;
        }
        let logits = Array3::from_shape_simple_fn((4, 4, 8), || rng.random_range(-2.0..2.0));
        let mut p = logits.mapv(f64::exp);
        for mut lane in p.lanes_mut(Axis(2)) {
            let sum = lane.sum();
            lane /= sum;
        }
        let (_, grad) = hybrid_loss_with_grad(y.view(), p.view(), &config).unwrap();
        let mut fd = Array3::<f64>::zeros(p.raw_dim());
        for idx in ndarray::indices(p.raw_dim()) {
            let mut q = p.clone();
            q[idx] += h;
            let up = hybrid_loss(y.view(), q.view(), &config).unwrap();
            q[idx] -= 2.0 * h;
            let down = hybrid_loss(y.view(), q.view(), &config).unwrap();
            fd[idx] = (up - down) / (2.0 * h);
        }
        let num = (&grad - &fd).mapv(|v| v * v).sum().sqrt();
        let den = grad.mapv(|v| v * v).sum().sqrt().max(fd.mapv(|v| v * v).sum().sqrt());
        worst = worst.max(num / den);
    }
    within_budget(
        start,
        Duration::from_secs(30),
        check(worst < 1e-4, format!("100 trials on 4x4x8, max relative error {worst:.2e} (tol 1e-4)")),
    )
}

// 3. Default architecture shapes in both decoder modes.

fn architecture_shapes() -> Outcome {
    let start = Instant::now();
    let mut notes = Vec::new();
    let mut ok = true;
    for mode in [DecoderMode::TransposedConvSkip, DecoderMode::IndexUnpool] {
        let config = ArchitectureConfig {
            decoder_mode: mode,
            ..ArchitectureConfig::default()
        };
        let model = build_model::<f32>(&config, 0).unwrap();
        let deepest = model
            .network()
            .nodes()
            .iter()
            .map(|n| (n.shape.0, n.shape.1))
            .min()
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array4::<f32>::from_shape_simple_fn((1, 256, 256, 1), || rng.random_range(0.0..1.0));
        let out = model.forward(x.view(), &[]).unwrap().output;
        let sum_err = out.sum_axis(Axis(3)).iter().fold(0.0f32, |m, &s| m.max((s - 1.0).abs()));
        let good = config.bottleneck_size() == (8, 8)
            && deepest == (8, 8)
            && out.dim() == (1, 256, 256, 8)
            && sum_err <= 1e-6;
        ok &= good;
        notes.push(format!(
            "{mode}: bottleneck {deepest:?}, output {:?}, max |sum-1| {sum_err:.1e}",
            out.dim()
        ));
    }
    within_budget(start, Duration::from_secs(60), check(ok, notes.join("; ")))
}

// 4. Callback state machines on scripted loss sequences.

fn callbacks() -> Outcome {
    let start = Instant::now();
    let mut failures = Vec::new();

    // Plateau, reduction, improvement reset, tie, floor clamp.
    let mut reduce = ReduceLrOnPlateau::new(
        ReduceLrConfig {
            patience: 2,
            factor: 0.5,
            min_lr: 0.3,
            min_delta: 0.0,
        },
        1.0,
    );
    let losses = [1.0, 0.9, 0.9, 0.95, 0.8, 0.85, 0.8, 0.8, 0.8, 0.8, 0.7];
    let want = [1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 0.3, 0.3, 0.3, 0.3, 0.3];
    let got: Vec<f64> = losses.iter().map(|&l| reduce.step(l)).collect();
    if got != want {
        failures.push(format!("reduce-LR {got:?} != {want:?}"));
    }

    // min_delta makes small gains count as plateau.
    let mut reduce = ReduceLrOnPlateau::new(
        ReduceLrConfig {
            patience: 1,
            factor: 0.1,
            min_lr: 0.0,
            min_delta: 0.05,
        },
        1.0,
    );
    let got: Vec<f64> = [1.0, 0.99, 0.9].iter().map(|&l| reduce.step(l)).collect();
    if got != [1.0, 0.1, 0.1] {
        failures.push(format!("reduce-LR min_delta {got:?}"));
    }

    let mut stop = EarlyStopping::new(EarlyStopConfig {
        patience: 3,
        min_delta: 0.0,
    });
    let losses = [0.5, 0.4, 0.4, 0.45, 0.39, 0.39, 0.39, 0.39, 0.1];
    let decisions: Vec<StopDecision> = losses.iter().map(|&l| stop.step(l)).collect();
    let stop_at = decisions.iter().position(|d| *d == StopDecision::Stop).map(|i| i + 1);
    if stop_at != Some(8) {
        failures.push(format!("early stop at {stop_at:?}, expected epoch 8"));
    }

    // Default patience: stop exactly ten epochs after the last improvement.
    let mut stop = EarlyStopping::new(EarlyStopConfig::default());
    let decisions: Vec<StopDecision> = (1..=12).map(|e| stop.step(if e == 1 { 0.2 } else { 0.3 })).collect();
    if decisions.iter().position(|d| *d == StopDecision::Stop) != Some(10) {
        failures.push("default early stop did not fire at epoch 11".into());
    }

    let mut best = CheckpointBest::new();
    let losses = [0.9, 0.7, 0.7, 0.8, 0.6, f64::NAN, 0.6];
    let saves: Vec<bool> = losses.iter().enumerate().map(|(i, &l)| best.step(i + 1, l)).collect();
    let want = [true, true, false, false, true, false, false];
    if saves != want || best.best() != Some((5, 0.6)) {
        failures.push(format!("checkpoint saves {saves:?}, best {:?}", best.best()));
    }

    let outcome = if failures.is_empty() {
        Outcome::Pass("reduce-LR plateau/reset/floor/min_delta, early stop, checkpoint tie rule".into())
    } else {
        Outcome::Fail(failures.join("; "))
    };
    within_budget(start, Duration::from_secs(5), outcome)
}

// 5. Grad-CAM on a toy network vs. brute force and finite differences.

const TOY: usize = 7;

struct Toy {
    net: Network<f64>,
    params: Vec<LayerParams<f64>>,
}

fn toy_network() -> Toy {
    let mut b = NetworkBuilder::new(TOY, TOY, 1);
    let c1 = b.conv2d("c1", b.input(), 3, 3, Activation::Relu);
    let c2 = b.conv2d("c2", c1, 4, 3, Activation::Relu);
    let head = b.conv2d("head", c2, 3, 1, Activation::Linear);
    b.softmax("prob", head);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut layer = |k: usize, cin: usize, cout: usize| LayerParams {
        kernel: Array4::from_shape_simple_fn((k, k, cin, cout), || rng.random_range(-0.8..0.8)),
        bias: Array1::from_shape_simple_fn(cout, || rng.random_range(0.0..0.2)),
    };
    let params = vec![layer(3, 1, 3), layer(3, 3, 4), layer(1, 4, 3)];
    Toy {
        net: b.with_params(params.clone()).unwrap(),
        params,
    }
}

/// Naive same-padded cross-correlation.
fn naive_conv(x: &Array3<f64>, p: &LayerParams<f64>, relu: bool) -> (Array3<f64>, Array3<f64>) {
    let (h, w, cin) = x.dim();
    let (k, _, _, cout) = p.kernel.dim();
    let r = (k / 2) as isize;
    let mut z = Array3::<f64>::zeros((h, w, cout));
    for y in 0..h {
        for xx in 0..w {
            for o in 0..cout {
                let mut acc = p.bias[o];
                for dy in 0..k {
                    for dx in 0..k {
                        let (sy, sx) = (y as isize + dy as isize - r, xx as isize + dx as isize - r);
                        if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                            continue;
                        }
                        for i in 0..cin {
                            acc += x[[sy as usize, sx as usize, i]] * p.kernel[[dy, dx, i, o]];
                        }
                    }
                }
                z[[y, xx, o]] = acc;
            }
        }
    }
    let a = if relu { z.mapv(|v| v.max(0.0)) } else { z.clone() };
    (z, a)
}

/// Input gradient of a naive conv given the output gradient.
fn naive_conv_back(dz: &Array3<f64>, p: &LayerParams<f64>, in_shape: (usize, usize, usize)) -> Array3<f64> {
    let (h, w, cin) = in_shape;
    let (k, _, _, cout) = p.kernel.dim();
    let r = (k / 2) as isize;
    let mut dx_ = Array3::<f64>::zeros((h, w, cin));
    for y in 0..h {
        for xx in 0..w {
            for o in 0..cout {
                for dy in 0..k {
                    for dx in 0..k {
                        let (sy, sx) = (y as isize + dy as isize - r, xx as isize + dx as isize - r);
                        if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                            continue;
                        }
                        for i in 0..cin {
                            dx_[[sy as usize, sx as usize, i]] += dz[[y, xx, o]] * p.kernel[[dy, dx, i, o]];
                        }
                    }
                }
            }
        }
    }
    dx_
}

fn softmax_lanes(z: &Array3<f64>) -> Array3<f64> {
    let mut p = z.clone();
    for mut lane in p.lanes_mut(Axis(2)) {
        let m = lane.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        lane.mapv_inplace(|v| (v - m).exp());
        let s = lane.sum();
        lane /= s;
    }
    p
}

/// Score from the `c2` feature maps onward.
fn score_from_c2(toy: &Toy, a2: &Array3<f64>, class: usize, kind: ScoreKind) -> f64 {
    let (logits, _) = naive_conv(a2, &toy.params[2], false);
    match kind {
        ScoreKind::Logit => logits.slice(s![.., .., class]).sum(),
        ScoreKind::Probability => softmax_lanes(&logits).slice(s![.., .., class]).sum(),
    }
}

struct Brute {
    a1: Array3<f64>,
    a2: Array3<f64>,
    /// `(alpha at c1, alpha at c2)`
    alpha: (Array1<f64>, Array1<f64>),
}

fn brute_force(toy: &Toy, image: &Array3<f64>, class: usize, kind: ScoreKind) -> Brute {
    let (z1, a1) = naive_conv(image, &toy.params[0], true);
    let (z2, a2) = naive_conv(&a1, &toy.params[1], true);
    let (logits, _) = naive_conv(&a2, &toy.params[2], false);
    let (h, w, k) = logits.dim();
    let mut dlogits = Array3::<f64>::zeros((h, w, k));
    match kind {
        ScoreKind::Logit => dlogits.slice_mut(s![.., .., class]).fill(1.0),
        ScoreKind::Probability => {
            let p = softmax_lanes(&logits);
            for y in 0..h {
                for x in 0..w {
                    for j in 0..k {
                        let delta = if j == class { 1.0 } else { 0.0 };
                        dlogits[[y, x, j]] = p[[y, x, class]] * (delta - p[[y, x, j]]);
                    }
                }
            }
        }
    }
    let da2 = naive_conv_back(&dlogits, &toy.params[2], a2.dim());
    let dz2 = ndarray::Zip::from(&da2).and(&z2).map_collect(|&g, &z| if z > 0.0 { g } else { 0.0 });
    let da1 = naive_conv_back(&dz2, &toy.params[1], a1.dim());
    let _ = z1;
    let gap = |g: &Array3<f64>| g.mean_axis(Axis(0)).unwrap().mean_axis(Axis(0)).unwrap();
    Brute {
        alpha: (gap(&da1), gap(&da2)),
        a1,
        a2,
    }
}

fn brute_heatmap(a: &Array3<f64>, alpha: &Array1<f64>) -> Array2<f64> {
    let (h, w, k) = a.dim();
    let raw = Array2::from_shape_fn((h, w), |(y, x)| (0..k).map(|c| alpha[c] * a[[y, x, c]]).sum::<f64>().max(0.0));
    let m = raw.fold(0.0f64, |a, &b| a.max(b));
    if m > 0.0 {
        raw / m
    } else {
        raw
    }
}

fn max_abs(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn gradcam_oracle() -> Outcome {
    let start = Instant::now();
    let toy = toy_network();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_alpha = 0.0f64;
    let mut worst_heat = 0.0f64;
    let mut worst_fd = 0.0f64;
    let mut worst_mean = 0.0f64;
    let mut in_range = true;
    for _ in 0..3 {
        let image = Array3::from_shape_simple_fn((TOY, TOY, 1), || rng.random_range(0.0..1.0));
        let batch = image.clone().insert_axis(Axis(0));
        for kind in [ScoreKind::Probability, ScoreKind::Logit] {
            let classes = [0, 1, 2];
            let at_c1 = gradcam_network(&toy.net, batch.view(), "c1", &classes, kind).unwrap();
            let at_c2 = gradcam_network(&toy.net, batch.view(), "c2", &classes, kind).unwrap();
            for class in classes {
                let brute = brute_force(&toy, &image, class, kind);
                let results: [(&GradCamResult, &Array1<f64>, &Array3<f64>); 2] = [
                    (&at_c1[class], &brute.alpha.0, &brute.a1),
                    (&at_c2[class], &brute.alpha.1, &brute.a2),
                ];
                for (r, alpha, feats) in results {
                    worst_alpha = worst_alpha.max((&r.alpha - alpha).iter().fold(0.0, |m, v| m.max(v.abs())));
                    worst_heat = worst_heat.max(max_abs(&r.heatmap, &brute_heatmap(feats, alpha)));
                    in_range &= r.heatmap.iter().all(|&v| (0.0..=1.0).contains(&v));
                    let mean = r.heatmap.sum() / r.heatmap.len() as f64;
                    worst_mean = worst_mean
                        .max((r.mean_intensity - mean).abs())
                        .max((mean_intensity(r.heatmap.view()) - mean).abs());
                }

                // Finite-difference alpha at c2.
                let h = 1e-5;
                let mut fd = Array1::<f64>::zeros(4);
                for idx in ndarray::indices(brute.a2.raw_dim()) {
                    let mut a = brute.a2.clone();
                    a[idx] += h;
                    let up = score_from_c2(&toy, &a, class, kind);
                    a[idx] -= 2.0 * h;
                    let down = score_from_c2(&toy, &a, class, kind);
                    fd[idx.2] += (up - down) / (2.0 * h) / (TOY * TOY) as f64;
                }
                let got = &at_c2[class].alpha;
                let rel = (got - &fd).mapv(|v| v * v).sum().sqrt() / fd.mapv(|v| v * v).sum().sqrt().max(1e-12);
                worst_fd = worst_fd.max(rel);
            }
        }
    }
    let ok = worst_alpha <= 1e-6 && worst_heat <= 1e-6 && worst_fd < 1e-4 && in_range && worst_mean <= 1e-9;
    within_budget(
        start,
        Duration::from_secs(30),
        check(
            ok,
            format!(
                "alpha diff {worst_alpha:.1e}, heatmap diff {worst_heat:.1e} (tol 1e-6), FD alpha rel {worst_fd:.1e} (tol 1e-4), heatmaps in [0,1]: {in_range}, mean-intensity diff {worst_mean:.1e} (tol 1e-9)"
            ),
        ),
    )
}

// 6. Overfit an 8-sample fixture.

fn overfit() -> Outcome {
    let start = Instant::now();
    let samples: Vec<_> = layered_samples(8, 40, 52, 7)
        .iter()
        .map(|s| octseg::dataio::preprocess_sample(s, (32, 32), 8).unwrap())
        .collect();
    let split = octseg::dataio::split_dataset(samples, 1.0, 7).unwrap();
    let arch = ArchitectureConfig {
        input_shape: [32, 32, 1],
        encoder_filters: vec![8, 16, 16, 16, 16],
        ..ArchitectureConfig::default()
    };
    let model = build_model::<f32>(&arch, 7).unwrap();
    let config = TrainingConfig {
        batch_size: 4,
        epochs: 200,
        seed: 7,
        ..TrainingConfig::default()
    };
    let loss = LossConfig::default();
    let outcome = train(model, &split, &config, &loss).unwrap();
    let report = evaluate(&outcome.model, &split.train, &loss).unwrap();
    let last = outcome.history.last().unwrap();
    within_budget(
        start,
        Duration::from_secs(600),
        check(
            report.dice >= 0.90,
            format!(
                "{} epochs, final-model training Dice {:.4} (>= 0.90), last epoch running Dice {:.4}",
                outcome.history.len(),
                report.dice,
                last.dice
            ),
        ),
    )
}

// 7. `prepare` determinism and one-hot round trip.

fn prepare_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    fs::create_dir_all(&data).unwrap();
    let raw = layered_samples(10, 216, 500, 8);
    for s in &raw {
        write_npy_sample(&data, s).unwrap();
    }
    let config = common::write_config(dir.path(), 1, "");
    let text = fs::read_to_string(&config).unwrap().replace("[32, 32, 1]", "[256, 256, 1]");
    fs::write(&config, text).unwrap();
    let cache = dir.path().join("out/dataset.safetensors");

    let first = common::with_config("prepare", &config, &[]);
    if first.status.code() != Some(0) {
        return Outcome::Fail(format!("prepare failed: {}", common::stderr(&first)));
    }
    let bytes = fs::read(&cache).unwrap();
    fs::remove_file(&cache).unwrap();
    let second = common::with_config("prepare", &config, &[]);
    let identical = second.status.code() == Some(0) && fs::read(&cache).unwrap() == bytes;

    let (split, _) = read_cache(&cache).unwrap();
    let mut round_trips = 0;
    let mut ok = identical;
    for s in split.train.iter().chain(&split.validation) {
        let original = raw.iter().find(|r| r.source_id == s.source_id).unwrap();
        let resized = resize_nearest(original.mask.view(), (256, 256)).unwrap();
        let encoded = one_hot_encode(resized.view(), 8).unwrap();
        ok &= decode_one_hot(s.onehot_mask.view()) == resized && decode_one_hot(encoded.view()) == resized;
        round_trips += 1;
    }
    let mut detail = format!(
        "two prepare runs byte-identical: {identical} ({} bytes); one-hot round trip on {round_trips} fixture masks",
        bytes.len()
    );

    if let Some(duke) = std::env::var_os("OCTSEG_DATA_DIR").map(PathBuf::from) {
        match load_dataset(&duke) {
            Ok(samples) => {
                let exact = samples.iter().all(|s| {
                    let encoded = one_hot_encode(s.mask.view(), 8).unwrap();
                    decode_one_hot(encoded.view()) == s.mask
                });
                ok &= exact;
                detail.push_str(&format!("; {} dataset masks round-trip exactly: {exact}", samples.len()));
            }
            Err(e) => {
                ok = false;
                detail.push_str(&format!("; dataset at {} failed to load: {e}", duke.display()));
            }
        }
    }
    check(ok, detail)
}

// 8. Reported metrics of a full-size run.

fn full_run() -> Outcome {
    let Some(root) = std::env::var_os("OCTSEG_FULL_RUN").map(PathBuf::from) else {
        return Outcome::Skip("set OCTSEG_FULL_RUN to a trained and evaluated run directory".into());
    };
    let path = root.join("reports/metrics.json");
    let m: MetricsReport = match fs::read_to_string(&path).map(|t| serde_json::from_str(&t)) {
        Ok(Ok(m)) => m,
        Ok(Err(e)) => return Outcome::Fail(format!("{}: {e}", path.display())),
        Err(e) => return Outcome::Fail(format!("{}: {e}", path.display())),
    };
    let mut order: Vec<usize> = (0..m.per_class_iou.len()).collect();
    order.sort_by(|&a, &b| m.per_class_iou[a].total_cmp(&m.per_class_iou[b]));
    let weakest: Vec<usize> = order.iter().take(2).copied().collect();
    let ok = (m.accuracy - 0.9577).abs() <= 0.015
        && (m.dice - 0.9446).abs() <= 0.03
        && (m.iou - 0.8951).abs() <= 0.03
        && (m.loss - 0.1354).abs() <= 0.03
        && m.per_class_iou.first().is_some_and(|&v| v >= 0.95)
        && weakest.contains(&3)
        && weakest.contains(&4);
    check(
        ok,
        format!(
            "accuracy {:.4}, Dice {:.4}, IoU {:.4}, loss {:.4}, class-0 IoU {:.4}, weakest classes {weakest:?}",
            m.accuracy,
            m.dice,
            m.iou,
            m.loss,
            m.per_class_iou.first().copied().unwrap_or(f64::NAN)
        ),
    )
}

fn main() {
    let criteria: [(&str, Check); 8] = [
        ("metric oracle equivalence", metric_oracle),
        ("loss gradient check", loss_gradient),
        ("architecture shape suite", architecture_shapes),
        ("callback state machines", callbacks),
        ("Grad-CAM oracle", gradcam_oracle),
        ("overfit smoke test", overfit),
        ("preprocessing determinism", prepare_determinism),
        ("full dataset run", full_run),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.into_iter().enumerate() {
        let outcome = panic::catch_unwind(f).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::Fail(format!("panicked: {msg}"))
        });
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Skip(d) => ("SKIP", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {} [{tag}] {name}: {detail}", i + 1);
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
