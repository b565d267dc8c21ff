use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use ascnet::data::{load_image_dir, BinaryMetrics, SegmentationSample};
use ascnet::models::{Model, Variant};
use ascnet::training::{evaluate, train, TrainConfig};
use ascnet::{Result, RngState};

use crate::commands::{load_train_split, spec_for, split_dir};
use crate::BenchArgs;

const MODELS: [Variant; 3] = [Variant::ClassicCnn7, Variant::DilatedCnn7, Variant::AscNet7];

/// Worker count: `ASC_THREADS` if set, otherwise the available cores.
fn thread_cap() -> usize {
    std::env::var("ASC_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn run_one(
    variant: Variant,
    seed: u64,
    iters: usize,
    train_set: &[SegmentationSample],
    test_set: &[SegmentationSample],
) -> Result<BinaryMetrics> {
    let model = Model::build(spec_for(variant, train_set)?, &mut RngState::new(seed))?;
    let cfg = TrainConfig {
        iterations: iters,
        seed,
        deterministic: true,
        ..TrainConfig::default()
    };
    let (model, _) = train(model, train_set, &cfg)?;
    Ok(evaluate(&model, test_set)?.mean)
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Markdown table of `(model, dice, precision, recall)` rows, sorted by Dice.
pub(crate) fn table(rows: &mut [(Variant, BinaryMetrics)]) -> String {
    rows.sort_by(|a, b| b.1.dice.total_cmp(&a.1.dice));
    let mut out = String::from("| Model | Dice | Precision | Recall |\n|---|---|---|---|\n");
    for (v, m) in rows.iter() {
        out.push_str(&format!(
            "| {} | {:.4} | {:.4} | {:.4} |\n",
            v.name(),
            m.dice,
            m.precision,
            m.recall
        ));
    }
    out
}

pub(crate) fn run(args: BenchArgs) -> Result<u8> {
    let train_set = load_train_split(&args.data)?;
    let test_set = load_image_dir(split_dir(&args.data, "test"))?;
    let seeds = &args.seeds.0;
    let jobs: Vec<(Variant, u64)> = MODELS
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    eprintln!(
        "note: synthetic desk-scale benchmark ({} iterations, seeds {:?}); absolute values \
         are not comparable to published results on real data",
        args.iters, seeds
    );

    // Each run is sequential and seeded, so running jobs side by side does not
    // change any result.
    let results: Mutex<Vec<Option<Result<BinaryMetrics>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = thread_cap().min(jobs.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(variant, seed)) = jobs.get(i) else {
                    break;
                };
                let r = run_one(variant, seed, args.iters as usize, &train_set, &test_set);
                if let Ok(m) = &r {
                    eprintln!("{variant} seed {seed}: dice={:.4}", m.dice);
                }
                results.lock().expect("no worker panicked")[i] = Some(r);
            });
        }
    });

    let results = results
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (variant, per_seed) in MODELS.iter().zip(results.chunks(seeds.len())) {
        let pick = |f: fn(&BinaryMetrics) -> f64| median(&mut per_seed.iter().map(f).collect::<Vec<_>>());
        rows.push((
            *variant,
            BinaryMetrics {
                dice: pick(|m| m.dice),
                precision: pick(|m| m.precision),
                recall: pick(|m| m.recall),
            },
        ));
    }
    print!("{}", table(&mut rows));
    Ok(0)
}
