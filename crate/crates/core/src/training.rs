//! Single-sample Adam training, evaluation and finite-difference gradient
//! checks.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::adam::{adam_step, AdamConfig, AdamState};
use crate::conv::{
    asc_conv_backward, asc_conv_forward, conv_classic_backward, conv_classic_forward,
    conv_dilated_backward, conv_dilated_forward, ConvLayer, LayerKind, RateField,
};
use crate::data::{MetricsReport, Pooling, SegmentationSample};
use crate::error::{Error, Result};
use crate::models::{Model, RateNetwork};
use crate::rng::RngState;
use crate::tensor::{argmax_classes, relu, softmax_cross_entropy, LabelMap, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Number of single-sample updates.
    pub iterations: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Report zero wall-clock time so that reports are reproducible byte for
    /// byte.
    pub deterministic: bool,
    /// Invoke the checkpoint hook every this many iterations; 0 disables it.
    pub checkpoint_every: usize,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 2000,
            adam: AdamConfig::default(),
            seed: 1,
            deterministic: false,
            checkpoint_every: 0,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log interval must be at least 1".into()));
        }
        Ok(())
    }
}

/// One report row: mean training loss over the iterations since the previous
/// row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    pub loss: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub rows: Vec<LogRow>,
    pub final_metrics: Option<MetricsReport>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,loss,seconds\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{:.3}\n", r.iteration, r.loss, r.seconds));
        }
        out
    }

    pub fn metrics_block(&self) -> Option<String> {
        self.final_metrics.as_ref().map(|m| {
            format!(
                "dice={:.4}\nprecision={:.4}\nrecall={:.4}\n",
                m.mean.dice, m.mean.precision, m.mean.recall
            )
        })
    }

    pub fn first_loss(&self) -> Option<f64> {
        self.rows.first().map(|r| r.loss)
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.rows.last().map(|r| r.loss)
    }
}

pub fn train(
    model: Model<f32>,
    data: &[SegmentationSample],
    cfg: &TrainConfig,
) -> Result<(Model<f32>, TrainReport)> {
    train_with_checkpoints(model, data, cfg, |_, _| Ok(()))
}

/// Trains on `data`, drawing one sample per iteration in a per-epoch shuffled
/// order seeded from `cfg.seed`. `on_checkpoint(iteration, model)` runs every
/// `cfg.checkpoint_every` iterations.
pub fn train_with_checkpoints(
    mut model: Model<f32>,
    data: &[SegmentationSample],
    cfg: &TrainConfig,
    mut on_checkpoint: impl FnMut(usize, &Model<f32>) -> Result<()>,
) -> Result<(Model<f32>, TrainReport)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let input = [1, model.in_channels, model.height, model.width];
    for (i, s) in data.iter().enumerate() {
        if s.image.shape() != input {
            return Err(Error::shape(format!(
                "sample {i} is {:?}, model expects {input:?}",
                s.image.shape()
            )));
        }
    }

    let mut states: Vec<AdamState<f32>> = model
        .params()
        .iter()
        .map(|p| AdamState::new(p.shape()))
        .collect();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = RngState::new(cfg.seed).fork(3);
    let mut cursor = order.len();
    let start = Instant::now();
    let mut report = TrainReport::default();
    let (mut window_sum, mut window_len) = (0.0f64, 0usize);

    for iteration in 1..=cfg.iterations {
        if cursor == order.len() {
            rng.shuffle(&mut order);
            cursor = 0;
        }
        let sample = &data[order[cursor]];
        cursor += 1;

        let pass = model.forward(&sample.image)?;
        let (loss, grad) = softmax_cross_entropy(&pass.logits, &sample.labels)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { iteration });
        }
        let grads = model.backward(&pass, &grad)?;
        for ((param, g), state) in model
            .params_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(&mut states)
        {
            adam_step(param, g, state, iteration as u64, &cfg.adam)?;
        }
        if model.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence { iteration });
        }

        window_sum += loss as f64;
        window_len += 1;
        if iteration % cfg.log_every == 0 || iteration == cfg.iterations {
            report.rows.push(LogRow {
                iteration,
                loss: window_sum / window_len as f64,
                seconds: if cfg.deterministic {
                    0.0
                } else {
                    start.elapsed().as_secs_f64()
                },
            });
            window_sum = 0.0;
            window_len = 0;
        }
        if cfg.checkpoint_every > 0 && iteration % cfg.checkpoint_every == 0 {
            on_checkpoint(iteration, &model)?;
        }
    }
    Ok((model, report))
}

/// Per-pixel argmax predictions of `model` for every sample.
pub fn predict(model: &Model<f32>, data: &[SegmentationSample]) -> Result<Vec<LabelMap>> {
    data.iter()
        .map(|s| argmax_classes(&model.forward(&s.image)?.logits))
        .collect()
}

pub fn evaluate(model: &Model<f32>, data: &[SegmentationSample]) -> Result<MetricsReport> {
    evaluate_with(model, data, Pooling::PerImage)
}

pub fn evaluate_with(
    model: &Model<f32>,
    data: &[SegmentationSample],
    pooling: Pooling,
) -> Result<MetricsReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let preds = predict(model, data)?;
    let truths: Vec<LabelMap> = data.iter().map(|s| s.labels.clone()).collect();
    MetricsReport::from_label_maps(&preds, &truths, model.num_classes, pooling)
}

// ---------------------------------------------------------------------------
// Gradient checks

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradTarget {
    Classic,
    Dilated,
    /// Adaptive-scale convolution at fractional rates.
    Asc,
    /// Adaptive-scale convolution at integer rates; the rate group is skipped.
    AscIntegerRates,
    RateNet,
    /// Reduced-depth ASC model including the rate network.
    Model,
}

impl GradTarget {
    pub fn name(self) -> &'static str {
        match self {
            GradTarget::Classic => "classic",
            GradTarget::Dilated => "dilated",
            GradTarget::Asc => "asc",
            GradTarget::AscIntegerRates => "asc-integer",
            GradTarget::RateNet => "ratenet",
            GradTarget::Model => "model",
        }
    }

    /// Relative-error threshold applied by default.
    pub fn default_tolerance(self) -> f64 {
        match self {
            GradTarget::Classic | GradTarget::Dilated => 1e-6,
            GradTarget::Asc | GradTarget::AscIntegerRates | GradTarget::RateNet => 1e-4,
            GradTarget::Model => 1e-3,
        }
    }
}

impl FromStr for GradTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            GradTarget::Classic,
            GradTarget::Dilated,
            GradTarget::Asc,
            GradTarget::AscIntegerRates,
            GradTarget::RateNet,
            GradTarget::Model,
        ]
        .into_iter()
        .find(|t| t.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown gradcheck target '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupResult {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
    pub status: CheckStatus,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub target: GradTarget,
    pub tolerance: f64,
    pub groups: Vec<GroupResult>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.status != CheckStatus::Fail)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.groups
            .iter()
            .filter(|g| g.status != CheckStatus::Skipped)
            .map(|g| g.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn group(&self, name: &str) -> Option<&GroupResult> {
        self.groups.iter().find(|g| g.name == name)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "target {} (tol {:e})", self.target.name(), self.tolerance)?;
        writeln!(f, "{:<24} {:>8} {:>12}  status", "group", "checked", "max_rel_err")?;
        for g in &self.groups {
            let status = match g.status {
                CheckStatus::Pass => "PASS",
                CheckStatus::Fail => "FAIL",
                CheckStatus::Skipped => "SKIPPED",
            };
            writeln!(
                f,
                "{:<24} {:>8} {:>12.3e}  {status}",
                g.name, g.checked, g.max_rel_err
            )?;
        }
        write!(f, "{}", if self.passed() { "PASS" } else { "FAIL" })
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Central differences `(f(x + h) - f(x - h)) / 2h` for every element of the
/// slice selected by `access`.
pub fn numeric_gradient<S: Clone>(
    state: &S,
    access: impl Fn(&mut S) -> &mut [f64],
    loss: impl Fn(&S) -> Result<f64>,
    h: f64,
) -> Result<Vec<f64>> {
    let mut probe = state.clone();
    let n = access(&mut probe).len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let orig = access(&mut probe)[i];
        access(&mut probe)[i] = orig + h;
        let plus = loss(&probe)?;
        access(&mut probe)[i] = orig - h;
        let minus = loss(&probe)?;
        access(&mut probe)[i] = orig;
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

fn compare(name: impl Into<String>, analytic: &[f64], numeric: &[f64], tol: f64) -> GroupResult {
    assert_eq!(analytic.len(), numeric.len());
    let max_rel_err = analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max);
    GroupResult {
        name: name.into(),
        max_rel_err,
        checked: analytic.len(),
        status: if max_rel_err < tol {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
    }
}

fn skipped(name: &str) -> GroupResult {
    GroupResult {
        name: name.into(),
        max_rel_err: 0.0,
        checked: 0,
        status: CheckStatus::Skipped,
    }
}

fn random_tensor(shape: &[usize], rng: &mut RngState) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.normal()).collect()).expect("shape matches")
}

fn random_layer(in_c: usize, out_c: usize, kind: LayerKind, rng: &mut RngState) -> ConvLayer<f64> {
    ConvLayer::new(
        random_tensor(&[out_c, in_c, 3, 3], rng),
        random_tensor(&[out_c], rng),
        kind,
    )
    .expect("valid layer")
}

/// Minimum distance of a rate from the nearest integer for it to count as
/// clear of bilinear kinks.
pub const KINK_MARGIN: f64 = 1e-3;

fn near_integer(r: f64) -> bool {
    (r - r.round()).abs() < KINK_MARGIN
}

/// Rates uniform in `[0.3, 2.3]`, redrawn while within [`KINK_MARGIN`] of an
/// integer.
fn random_rates(h: usize, w: usize, rng: &mut RngState) -> RateField<f64> {
    let data = (0..h * w)
        .map(|_| loop {
            let r = rng.uniform_range(0.3, 2.3);
            if !near_integer(r) {
                break r;
            }
        })
        .collect();
    RateField::new(Tensor::from_vec(&[1, 1, h, w], data).expect("shape")).expect("non-negative")
}

fn projection_loss(y: &Tensor<f64>, proj: &Tensor<f64>) -> f64 {
    y.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
}

/// Compares analytic gradients of `target` with central differences of step
/// `h`. Each parameter group passes when its maximum relative error is below
/// `tol`.
pub fn grad_check(target: GradTarget, seed: u64, h: f64, tol: f64) -> Result<GradCheckReport> {
    let mut rng = RngState::new(seed);
    let groups = match target {
        GradTarget::Classic | GradTarget::Dilated => {
            let (kind, size) = if target == GradTarget::Classic {
                (LayerKind::Classic, 6)
            } else {
                (LayerKind::Dilated(2), 7)
            };
            let x = random_tensor(&[1, 2, size, size], &mut rng);
            let layer = random_layer(2, 3, kind, &mut rng);
            let proj = random_tensor(&[1, 3, size, size], &mut rng);
            let fwd = |x: &Tensor<f64>, l: &ConvLayer<f64>| match kind {
                LayerKind::Classic => conv_classic_forward(x, l),
                _ => conv_dilated_forward(x, l),
            };
            let g = match kind {
                LayerKind::Classic => conv_classic_backward(&x, &layer, &proj)?,
                _ => conv_dilated_backward(&x, &layer, &proj)?,
            };
            let state = (x, layer);
            let loss = |s: &(Tensor<f64>, ConvLayer<f64>)| Ok(projection_loss(&fwd(&s.0, &s.1)?, &proj));
            vec![
                compare("input", g.grad_x.data(), &numeric_gradient(&state, |s| s.0.data_mut(), loss, h)?, tol),
                compare("weight", g.grad_weight.data(), &numeric_gradient(&state, |s| s.1.weight.data_mut(), loss, h)?, tol),
                compare("bias", g.grad_bias.data(), &numeric_gradient(&state, |s| s.1.bias.data_mut(), loss, h)?, tol),
            ]
        }
        GradTarget::Asc | GradTarget::AscIntegerRates => {
            let x = random_tensor(&[1, 2, 6, 6], &mut rng);
            let layer = random_layer(2, 3, LayerKind::Adaptive, &mut rng);
            let rates = if target == GradTarget::Asc {
                random_rates(6, 6, &mut rng)
            } else {
                let data = (0..36).map(|_| rng.int_range(1, 2) as f64).collect();
                RateField::new(Tensor::from_vec(&[1, 1, 6, 6], data)?)?
            };
            let proj = random_tensor(&[1, 3, 6, 6], &mut rng);
            let g = asc_conv_backward(&x, &layer, &rates, &proj)?;
            let state = (x, layer, rates.into_tensor());
            let loss = |s: &(Tensor<f64>, ConvLayer<f64>, Tensor<f64>)| {
                // Perturbed rates may leave the non-negative range near zero.
                let field = RateField::new(s.2.clone())?;
                Ok(projection_loss(&asc_conv_forward(&s.0, &s.1, &field)?, &proj))
            };
            let mut groups = vec![
                compare("input", g.grad_x.data(), &numeric_gradient(&state, |s| s.0.data_mut(), loss, h)?, tol),
                compare("weight", g.grad_weight.data(), &numeric_gradient(&state, |s| s.1.weight.data_mut(), loss, h)?, tol),
                compare("bias", g.grad_bias.data(), &numeric_gradient(&state, |s| s.1.bias.data_mut(), loss, h)?, tol),
            ];
            let kinked = state.2.data().iter().any(|&r| near_integer(r));
            groups.push(if kinked {
                skipped("rates")
            } else {
                let analytic = g.grad_rates.expect("adaptive layers report rate gradients");
                compare("rates", analytic.data(), &numeric_gradient(&state, |s| s.2.data_mut(), loss, h)?, tol)
            });
            groups
        }
        GradTarget::RateNet => {
            let (net, image) = checkable_rate_net_input(&mut rng)?;
            let proj = random_tensor(&[1, 1, 7, 7], &mut rng);
            let (_, cache) = net.forward_cached(&image)?;
            let analytic = net.backward(&cache, &proj)?;
            let loss = |n: &RateNetwork<f64>| Ok(projection_loss(n.forward(&image)?.values(), &proj));
            let mut groups = Vec::new();
            for (j, g) in analytic.iter().enumerate() {
                let w = numeric_gradient(&net, |n| n.layers[j].weight.data_mut(), loss, h)?;
                groups.push(compare(format!("ratenet.layer{j}.weight"), g.grad_weight.data(), &w, tol));
                let b = numeric_gradient(&net, |n| n.layers[j].bias.data_mut(), loss, h)?;
                groups.push(compare(format!("ratenet.layer{j}.bias"), g.grad_bias.data(), &b, tol));
            }
            groups
        }
        GradTarget::Model => {
            let (model, image, labels) = checkable_model(&mut rng)?;
            let pass = model.forward(&image)?;
            let (_, grad) = softmax_cross_entropy(&pass.logits, &labels)?;
            let analytic = model.backward(&pass, &grad)?;
            let loss = |m: &Model<f64>| {
                let logits = m.forward(&image)?.logits;
                Ok(softmax_cross_entropy(&logits, &labels)?.0)
            };
            let names = model.param_names();
            let mut groups = Vec::new();
            for (k, (name, a)) in names.iter().zip(analytic.tensors()).enumerate() {
                let n = numeric_gradient(&model, |m| m.params_mut().swap_remove(k).data_mut(), loss, h)?;
                groups.push(compare(name.clone(), a.data(), &n, tol));
            }
            groups
        }
    };
    Ok(GradCheckReport {
        target,
        tolerance: tol,
        groups,
    })
}

/// A rate network whose output varies with the input: random final-layer
/// weights and a positive bias keep most rates away from the ReLU floor.
fn checkable_rate_net(in_c: usize, rng: &mut RngState) -> RateNetwork<f64> {
    let mut net = RateNetwork::<f64>::new(in_c, rng);
    let last = &mut net.layers[2];
    for v in last.weight.data_mut() {
        *v = 0.15 * rng.normal();
    }
    last.bias.data_mut()[0] = 1.4;
    net
}

/// Minimum distance of every ReLU pre-activation from zero in checked
/// configurations, so that finite differences never straddle a ReLU kink.
const RELU_MARGIN: f64 = 2e-3;

/// Pre-activations of the three rate-network layers.
fn rate_net_preactivations(net: &RateNetwork<f64>, image: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
    let mut out = Vec::with_capacity(net.layers.len());
    let mut h = image.clone();
    for layer in &net.layers {
        let z = conv_classic_forward(&h, layer)?;
        h = relu(&z);
        out.push(z);
    }
    Ok(out)
}

fn clear_of_relu_kinks<'a>(pre: impl IntoIterator<Item = &'a Tensor<f64>>) -> bool {
    pre.into_iter()
        .flat_map(|t| t.data())
        .all(|z| z.abs() > RELU_MARGIN)
}

fn checkable_rate_net_input(rng: &mut RngState) -> Result<(RateNetwork<f64>, Tensor<f64>)> {
    for _ in 0..200 {
        let net = checkable_rate_net(1, rng);
        let image = random_tensor(&[1, 1, 7, 7], rng);
        if clear_of_relu_kinks(&rate_net_preactivations(&net, &image)?) {
            return Ok((net, image));
        }
    }
    Err(Error::Config("could not draw a kink-free rate network configuration".into()))
}

/// Reduced-depth ASC model (two adaptive layers) on an 8x8 input whose rate
/// field avoids integers and zero and whose ReLUs all stay clear of zero, with
/// random labels.
fn checkable_model(rng: &mut RngState) -> Result<(Model<f64>, Tensor<f64>, LabelMap)> {
    for _ in 0..500 {
        let mut model = Model::<f64>::adaptive_stack(1, &[3], 2, 8, 8, rng);
        let net = checkable_rate_net(1, rng);
        let image = random_tensor(&[1, 1, 8, 8], rng);
        let mut pre = rate_net_preactivations(&net, &image)?;
        let rates = RateField::new(relu(&pre[2]))?;
        let rates_clear = rates
            .values()
            .data()
            .iter()
            .all(|&r| r > 0.05 && (r - r.round()).abs() > 0.01);
        let mut h = image.clone();
        for layer in &model.layers[..model.layers.len() - 1] {
            let z = asc_conv_forward(&h, layer, &rates)?;
            h = relu(&z);
            pre.push(z);
        }
        model.rate_net = Some(net);
        if rates_clear && clear_of_relu_kinks(&pre) {
            let labels = LabelMap::new(8, 8, (0..64).map(|_| rng.int_range(0, 1) as u32).collect())?;
            return Ok((model, image, labels));
        }
    }
    Err(Error::Config("could not draw a kink-free model configuration".into()))
}

/// Convenience for tests: checks `target` at the default step and tolerance.
pub fn grad_check_default(target: GradTarget, seed: u64) -> Result<GradCheckReport> {
    grad_check(target, seed, 1e-4, target.default_tolerance())
}
