//! Acceptance criteria. Every criterion prints one `PASS`/`FAIL` line straight
//! to stdout (bypassing the test harness capture) and then asserts.

use std::io::Write;
use std::time::{Duration, Instant};

use ascnet::container::{AnyTensor, Container};
use ascnet::conv::oracle::oracle_asc_forward;
use ascnet::conv::*;
use ascnet::data::pgm::{decode, encode, quantize};
use ascnet::data::{generate_synth, rate_stats, SegmentationSample, SynthConfig};
use ascnet::models::{Model, ModelSpec, Variant};
use ascnet::training::{evaluate, grad_check, train, CheckStatus, GradTarget, TrainConfig};
use ascnet::{RngState, Tensor};

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "criterion {id} [{status}] {name}: {detail}").unwrap();
    out.flush().unwrap();
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn random_tensor(shape: &[usize], rng: &mut RngState) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.normal()).collect()).unwrap()
}

fn random_layer(in_c: usize, out_c: usize, kind: LayerKind, rng: &mut RngState) -> ConvLayer<f64> {
    ConvLayer::new(random_tensor(&[out_c, in_c, 3, 3], rng), random_tensor(&[out_c], rng), kind).unwrap()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn criterion_1_asc_gradient_fidelity() {
    let start = Instant::now();
    let r = grad_check(GradTarget::Asc, 1, 1e-4, 1e-4).unwrap();
    let groups_ok = ["input", "weight", "bias", "rates"]
        .iter()
        .all(|g| r.group(g).is_some_and(|g| g.status == CheckStatus::Pass));
    let elapsed = start.elapsed();
    let pass = r.passed() && groups_ok && r.max_rel_err() < 1e-4 && within(elapsed, 60.0);
    report(
        1,
        "asc gradient check",
        pass,
        &format!("max rel err {:.3e} (< 1e-4), {:.2}s (< 60s)", r.max_rel_err(), elapsed.as_secs_f64()),
    );
    assert!(pass, "{r}");
}

#[test]
fn criterion_2_degeneracy_chain() {
    let start = Instant::now();
    let mut rng = RngState::new(2);
    let mut identical = 0;
    let mut worst_dilated = 0.0f64;
    for _ in 0..100 {
        let (h, w) = (rng.int_range(3, 10), rng.int_range(3, 10));
        let (in_c, out_c) = (rng.int_range(1, 3), rng.int_range(1, 3));
        let x = random_tensor(&[1, in_c, h, w], &mut rng);
        let asc = random_layer(in_c, out_c, LayerKind::Adaptive, &mut rng);
        let classic = ConvLayer { kind: LayerKind::Classic, ..asc.clone() };
        let a = asc_conv_forward(&x, &asc, &RateField::constant(h, w, 1.0)).unwrap();
        if a == conv_classic_forward(&x, &classic).unwrap() {
            identical += 1;
        }
        for k in [2usize, 3] {
            let dil = ConvLayer { kind: LayerKind::Dilated(k), ..asc.clone() };
            let a = asc_conv_forward(&x, &asc, &RateField::constant(h, w, k as f64)).unwrap();
            worst_dilated = worst_dilated.max(a.max_abs_diff(&conv_dilated_forward(&x, &dil).unwrap()));
        }
    }
    let elapsed = start.elapsed();
    let pass = identical == 100 && worst_dilated <= 1e-12 && within(elapsed, 10.0);
    report(
        2,
        "degeneracy chain",
        pass,
        &format!(
            "{identical}/100 bit-identical to classic, dilated max diff {worst_dilated:.3e} (<= 1e-12), {:.2}s (< 10s)",
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_3_partition_of_unity() {
    let start = Instant::now();
    let mut rng = RngState::new(3);
    let mut worst_sum = 0.0f64;
    let size = 10;
    for _ in 0..10_000 {
        let p = SamplePoint::new(rng.uniform_range(0.0, (size - 1) as f64), rng.uniform_range(0.0, (size - 1) as f64));
        let mut total = 0.0;
        for qy in 0..size as isize {
            for qx in 0..size as isize {
                total += bilinear_kernel(qy, qx, p);
            }
        }
        worst_sum = worst_sum.max((total - 1.0).abs());
    }

    let mut worst_oracle = 0.0f64;
    let x = random_tensor(&[1, 1, 6, 6], &mut rng);
    for _ in 0..1000 {
        let p = SamplePoint::new(rng.uniform_range(-2.0, 7.0), rng.uniform_range(-2.0, 7.0));
        let mut exhaustive = 0.0;
        for qy in 0..6 {
            for qx in 0..6 {
                exhaustive += bilinear_kernel(qy, qx, p) * x.data()[qy as usize * 6 + qx as usize];
            }
        }
        worst_oracle = worst_oracle.max((sample_bilinear(&x, p, 0).unwrap() - exhaustive).abs());
    }
    for seed in 0..100 {
        let mut rng = RngState::new(seed);
        let x = random_tensor(&[1, 1, 4, 4], &mut rng);
        let layer = random_layer(1, 1, LayerKind::Adaptive, &mut rng);
        let rates = (0..16).map(|_| rng.uniform_range(0.0, 3.0)).collect();
        let rates = RateField::new(Tensor::from_vec(&[1, 1, 4, 4], rates).unwrap()).unwrap();
        let fast = asc_conv_forward(&x, &layer, &rates).unwrap();
        worst_oracle = worst_oracle.max(fast.max_abs_diff(&oracle_asc_forward(&x, &layer, &rates).unwrap()));
    }
    let elapsed = start.elapsed();
    let pass = worst_sum < 1e-12 && worst_oracle < 1e-10 && within(elapsed, 5.0);
    report(
        3,
        "bilinear partition of unity",
        pass,
        &format!(
            "max |sum - 1| {worst_sum:.3e} (< 1e-12), oracle diff {worst_oracle:.3e} (< 1e-10), {:.2}s (< 5s)",
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_4_end_to_end_gradients() {
    let start = Instant::now();
    let r = grad_check(GradTarget::Model, 4, 1e-4, 1e-3).unwrap();
    let theta_groups = r.groups.iter().filter(|g| g.name.starts_with("ratenet.")).count();
    let elapsed = start.elapsed();
    let pass = r.passed() && theta_groups == 6 && r.max_rel_err() < 1e-3 && within(elapsed, 120.0);
    report(
        4,
        "end-to-end model gradients",
        pass,
        &format!(
            "{} groups incl. {theta_groups} rate-network groups, max rel err {:.3e} (< 1e-3), {:.2}s (< 120s)",
            r.groups.len(),
            r.max_rel_err(),
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass, "{r}");
}

struct Run {
    dice: f64,
    small_rate: f64,
    large_rate: f64,
}

fn train_and_score(
    variant: Variant,
    seed: u64,
    cfg: &SynthConfig,
    train_set: &[SegmentationSample],
    test_set: &[SegmentationSample],
) -> Run {
    let model = Model::build(ModelSpec::new(variant, 2, cfg.height, cfg.width), &mut RngState::new(seed)).unwrap();
    let tc = TrainConfig {
        iterations: 2000,
        seed,
        deterministic: true,
        ..TrainConfig::default()
    };
    assert_eq!(tc.adam.lr, 1e-3);
    let (model, _) = train(model, train_set, &tc).unwrap();
    let dice = evaluate(&model, test_set).unwrap().mean.dice;
    let (mut small, mut large) = (Vec::new(), Vec::new());
    if model.is_adaptive() {
        for s in test_set {
            let rates = model.forward(&s.image).unwrap().rates.unwrap();
            let stats = rate_stats(&rates, &s.labels, &s.objects, cfg.split_radius()).unwrap();
            small.extend(stats.small);
            large.extend(stats.large);
        }
    }
    let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
    Run {
        dice,
        small_rate: mean(&small),
        large_rate: mean(&large),
    }
}

/// Criteria 5, 6 and 7 share the same nine training runs.
#[test]
fn criteria_5_6_7_learning() {
    let start = Instant::now();
    let cfg = SynthConfig::default();
    let (train_set, test_set) = generate_synth(&cfg).unwrap();
    assert_eq!((train_set.len(), test_set.len(), cfg.height, cfg.width), (200, 50, 64, 64));
    let seeds = [1u64, 2, 3];
    let mut runs = Vec::new();
    for variant in [Variant::AscNet7, Variant::ClassicCnn7, Variant::DilatedCnn7] {
        let per_seed: Vec<Run> = seeds
            .iter()
            .map(|&s| train_and_score(variant, s, &cfg, &train_set, &test_set))
            .collect();
        runs.push(per_seed);
    }
    let elapsed = start.elapsed();
    let dice = |k: usize| median(runs[k].iter().map(|r| r.dice).collect());
    let (asc, classic, dilated) = (dice(0), dice(1), dice(2));
    let fmt = |k: usize| {
        runs[k].iter().map(|r| format!("{:.4}", r.dice)).collect::<Vec<_>>().join("/")
    };

    let pass5 = asc >= 0.85 && within(elapsed, 1800.0);
    report(
        5,
        "learning smoke",
        pass5,
        &format!(
            "ascnet7 median test dice {asc:.4} (>= 0.85; seeds {}), all nine runs {:.0}s (< 1800s)",
            fmt(0),
            elapsed.as_secs_f64()
        ),
    );

    let pass6 = asc > classic && asc >= dilated - 0.01;
    report(
        6,
        "ordering",
        pass6,
        &format!(
            "median dice ascnet7 {asc:.4} vs classic7 {classic:.4} ({}) and dilated7 {dilated:.4} ({})",
            fmt(1),
            fmt(2)
        ),
    );

    let small = median(runs[0].iter().map(|r| r.small_rate).collect());
    let large = median(runs[0].iter().map(|r| r.large_rate).collect());
    let pass7 = large > small;
    report(
        7,
        "rate-size correlation",
        pass7,
        &format!(
            "median mean rate large objects {large:.4} vs small objects {small:.4} (per seed large/small {})",
            runs[0]
                .iter()
                .map(|r| format!("{:.3}/{:.3}", r.large_rate, r.small_rate))
                .collect::<Vec<_>>()
                .join(" ")
        ),
    );
    assert!(pass5 && pass6 && pass7);
}

#[test]
fn criterion_8_determinism() {
    let cfg = SynthConfig {
        num_train: 20,
        num_test: 5,
        ..SynthConfig::default()
    };
    let (train_set, _) = generate_synth(&cfg).unwrap();
    let run = || {
        let model = Model::build(ModelSpec::new(Variant::AscNet7, 2, 64, 64), &mut RngState::new(42)).unwrap();
        let tc = TrainConfig {
            iterations: 60,
            seed: 42,
            deterministic: true,
            log_every: 10,
            ..TrainConfig::default()
        };
        let (model, rep) = train(model, &train_set, &tc).unwrap();
        (model.to_container().unwrap().to_bytes(), rep.to_csv())
    };
    let (a, b) = (run(), run());
    let pass = a == b;
    report(
        8,
        "determinism",
        pass,
        &format!(
            "checkpoints {} bytes identical: {}, reports identical: {}",
            a.0.len(),
            a.0 == b.0,
            a.1 == b.1
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_9_format_round_trips() {
    let mut rng = RngState::new(9);
    let dir = tempfile::tempdir().unwrap();
    let mut c = Container::default();
    let f64s = random_tensor(&[2, 3, 4], &mut rng);
    let f32s: Tensor<f32> = random_tensor(&[5, 1, 3, 3], &mut rng).cast();
    c.push("a.f64", AnyTensor::from(f64s.clone()));
    c.push("b.f32", AnyTensor::from(f32s.clone()));
    let path = dir.path().join("t.bin");
    c.save(&path).unwrap();
    let back = Container::load(&path).unwrap();
    let container_ok = back == c
        && back.get("a.f64").unwrap().to_tensor::<f64>() == f64s
        && back.get("b.f32").unwrap().to_tensor::<f32>() == f32s;

    let values: Vec<f32> = (0..48 * 40).map(|_| rng.normal() as f32).collect();
    let (img, lo, hi) = quantize(&values, 48, 40, 65535).unwrap();
    let restored = decode(&encode(&img), "memory").unwrap();
    let range = (hi - lo) as f64;
    let worst = values
        .iter()
        .zip(restored.normalized())
        .map(|(&v, q)| ((lo as f64 + q as f64 * range) - v as f64).abs() / range)
        .fold(0.0, f64::max);
    let pass = container_ok && restored == img && worst <= 1.0 / 65535.0;
    report(
        9,
        "format round-trips",
        pass,
        &format!("container exact: {container_ok}, pgm 16-bit max normalized error {worst:.3e} (<= 1/65535)"),
    );
    assert!(pass);
}
