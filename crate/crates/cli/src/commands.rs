use std::fs;
use std::path::{Path, PathBuf};

use ascnet::adam::AdamConfig;
use ascnet::data::{
    export_rate_field, generate_synth, load_image_dir, objects_from_labels, pgm, preprocess,
    rate_stats, save_sample_pair, SegmentationSample, SynthConfig,
};
use ascnet::models::{Model, ModelSpec};
use ascnet::training::{evaluate, grad_check_default, train_with_checkpoints, TrainConfig};
use ascnet::{Error, LabelMap, Result, RngState, Tensor};

use crate::{EvalArgs, GradcheckArgs, RatefieldArgs, SynthArgs, TrainArgs, EXIT_GRADCHECK};

pub(crate) const MANIFEST: &str = "manifest.toml";

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

/// `dir/<split>` when it exists, otherwise `dir` itself.
pub(crate) fn split_dir(dir: &Path, split: &str) -> PathBuf {
    let sub = dir.join(split);
    if sub.is_dir() {
        sub
    } else {
        dir.to_path_buf()
    }
}

/// Loads the training split and checks it against the manifest, if any.
pub(crate) fn load_train_split(dir: &Path) -> Result<Vec<SegmentationSample>> {
    let samples = load_image_dir(split_dir(dir, "train"))?;
    let manifest = dir.join(MANIFEST);
    if manifest.is_file() {
        let text = fs::read_to_string(&manifest).map_err(|e| io_err(&manifest, e))?;
        let cfg = SynthConfig::from_toml(&text)?;
        if cfg.num_train != samples.len() {
            return Err(Error::Config(format!(
                "{} lists {} training images, found {}",
                manifest.display(),
                cfg.num_train,
                samples.len()
            )));
        }
    }
    Ok(samples)
}

pub(crate) fn num_classes(samples: &[SegmentationSample]) -> usize {
    let max = samples.iter().map(|s| s.labels.max_label()).max().unwrap_or(0);
    (max as usize + 1).max(2)
}

pub(crate) fn spec_for(variant: ascnet::models::Variant, samples: &[SegmentationSample]) -> Result<ModelSpec> {
    let first = samples.first().ok_or(Error::EmptyDataset)?;
    let (h, w) = first.dims();
    let mut spec = ModelSpec::new(variant, num_classes(samples), h, w);
    spec.in_channels = first.image.shape()[1];
    Ok(spec)
}

pub(crate) fn synth(args: SynthArgs) -> Result<u8> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            SynthConfig::from_toml(&text)?
        }
        None => SynthConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let (train, test) = generate_synth(&cfg)?;
    for (split, samples) in [("train", &train), ("test", &test)] {
        let dir = args.out.join(split);
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        for (i, s) in samples.iter().enumerate() {
            save_sample_pair(&dir, &format!("{i:04}"), s)?;
        }
    }
    let manifest = args.out.join(MANIFEST);
    fs::write(&manifest, cfg.to_toml()).map_err(|e| io_err(&manifest, e))?;
    println!(
        "wrote {} train and {} test pairs to {}",
        train.len(),
        test.len(),
        args.out.display()
    );
    Ok(0)
}

pub(crate) fn train(args: TrainArgs) -> Result<u8> {
    let data = load_train_split(&args.data)?;
    let spec = spec_for(args.model, &data)?;
    let model = Model::build(spec, &mut RngState::new(args.seed))?;
    let cfg = TrainConfig {
        iterations: args.iters as usize,
        adam: AdamConfig {
            lr: args.lr,
            beta1: args.beta1,
            beta2: args.beta2,
            eps: args.eps,
        },
        seed: args.seed,
        deterministic: args.deterministic,
        checkpoint_every: args.checkpoint_every as usize,
        log_every: args.log_every as usize,
    };
    let out = args.out.clone();
    let (model, mut report) = train_with_checkpoints(model, &data, &cfg, |iteration, m| {
        let mut path = out.clone().into_os_string();
        path.push(format!(".{iteration}"));
        m.save(PathBuf::from(path))
    })?;
    for row in &report.rows {
        eprintln!("iter {} loss {:.6}", row.iteration, row.loss);
    }
    model.save(&args.out)?;
    if let Some(path) = &args.report {
        fs::write(path, report.to_csv()).map_err(|e| io_err(path, e))?;
    }
    let test_dir = args.data.join("test");
    if test_dir.is_dir() {
        let test = load_image_dir(&test_dir)?;
        report.final_metrics = Some(evaluate(&model, &test)?);
        print!("{}", report.metrics_block().unwrap_or_default());
    }
    Ok(0)
}

pub(crate) fn eval(args: EvalArgs) -> Result<u8> {
    let model = Model::<f32>::load(&args.ckpt)?;
    let data = load_image_dir(split_dir(&args.data, "test"))?;
    for s in &data {
        if s.dims() != (model.height, model.width) || s.image.shape()[1] != model.in_channels {
            return Err(Error::Shape(format!(
                "checkpoint expects {}x{}x{} images, data has {:?}",
                model.in_channels,
                model.height,
                model.width,
                &s.image.shape()[1..]
            )));
        }
        if s.labels.max_label() as usize >= model.num_classes {
            return Err(Error::Config(format!(
                "labels reach class {}, checkpoint has {} classes",
                s.labels.max_label(),
                model.num_classes
            )));
        }
    }
    println!("{}", evaluate(&model, &data)?.summary_line());
    Ok(0)
}

pub(crate) fn gradcheck(args: GradcheckArgs) -> Result<u8> {
    let report = grad_check_default(args.target.into(), args.seed)?;
    println!("{report}");
    Ok(if report.passed() { 0 } else { EXIT_GRADCHECK })
}

/// `img_<stem>.pgm` -> `lbl_<stem>.pgm` in the same directory.
fn label_path(image: &Path) -> Option<PathBuf> {
    let name = image.file_name()?.to_str()?;
    let stem = name.strip_prefix("img_")?;
    Some(image.with_file_name(format!("lbl_{stem}")))
}

/// Radius separating small and large objects, taken from the corpus manifest
/// next to the image's split directory when there is one.
fn split_radius_for(image: &Path) -> Result<f64> {
    let candidates = image
        .ancestors()
        .skip(1)
        .take(2)
        .map(|d| d.join(MANIFEST))
        .find(|p| p.is_file());
    match candidates {
        Some(path) => {
            let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
            Ok(SynthConfig::from_toml(&text)?.split_radius())
        }
        None => Ok(SynthConfig::default().split_radius()),
    }
}

pub(crate) fn ratefield(args: RatefieldArgs) -> Result<u8> {
    let model = Model::<f32>::load(&args.ckpt)?;
    if !model.is_adaptive() {
        let name = model.variant.map_or("this model", |v| v.name());
        return Err(Error::Config(format!(
            "{name} has no adaptive layers, so there is no rate field to export"
        )));
    }
    let img = pgm::read(&args.image)?;
    if (img.height, img.width) != (model.height, model.width) {
        return Err(Error::Shape(format!(
            "{} is {}x{}, checkpoint expects {}x{}",
            args.image.display(),
            img.height,
            img.width,
            model.height,
            model.width
        )));
    }
    let image = preprocess(&Tensor::from_vec(&[1, 1, img.height, img.width], img.normalized())?)?;
    let rates = model
        .forward(&image)?
        .rates
        .expect("adaptive models emit a rate field");
    let export = export_rate_field(&rates, &args.out_prefix)?;
    println!("{}", export.csv.display());
    println!("{}", export.pgm.display());
    println!("{}", export.scale.display());

    if let Some(lbl_path) = label_path(&args.image).filter(|p| p.is_file()) {
        let lbl = pgm::read(&lbl_path)?;
        let labels = LabelMap::new(lbl.height, lbl.width, lbl.data.iter().map(|&v| v as u32).collect())?;
        let objects = objects_from_labels(&labels);
        let stats = rate_stats(&rates, &labels, &objects, split_radius_for(&args.image)?)?;
        let mut path = args.out_prefix.clone().into_os_string();
        path.push(".stats.txt");
        let path = PathBuf::from(path);
        fs::write(&path, stats.to_text()).map_err(|e| io_err(&path, e))?;
        println!("{}", path.display());
    }
    Ok(0)
}
