//! Dice, precision and recall over binary masks.
//!
//! Empty denominators follow one convention throughout: if both sets involved
//! are empty the score is 1.0, if exactly one is empty it is 0.0.

use crate::error::{Error, Result};
use crate::tensor::LabelMap;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BinaryMetrics {
    pub dice: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Clone, Copy, Debug, Default)]
struct Counts {
    pred: usize,
    truth: usize,
    both: usize,
}

impl Counts {
    fn of(pred: &[bool], truth: &[bool]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::shape(format!(
                "masks have {} and {} pixels",
                pred.len(),
                truth.len()
            )));
        }
        let mut c = Counts::default();
        for (&p, &t) in pred.iter().zip(truth) {
            c.pred += p as usize;
            c.truth += t as usize;
            c.both += (p && t) as usize;
        }
        Ok(c)
    }

    fn add(&mut self, o: Counts) {
        self.pred += o.pred;
        self.truth += o.truth;
        self.both += o.both;
    }

    fn metrics(&self) -> BinaryMetrics {
        BinaryMetrics {
            dice: ratio(2 * self.both, self.pred + self.truth, self.pred == 0 && self.truth == 0),
            precision: ratio(self.both, self.pred, self.pred == 0 && self.truth == 0),
            recall: ratio(self.both, self.truth, self.pred == 0 && self.truth == 0),
        }
    }
}

fn ratio(num: usize, den: usize, both_empty: bool) -> f64 {
    if den == 0 {
        if both_empty {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

pub fn binary_metrics(pred: &[bool], truth: &[bool]) -> Result<BinaryMetrics> {
    Ok(Counts::of(pred, truth)?.metrics())
}

/// `2|P ∩ T| / (|P| + |T|)`.
pub fn dice(pred: &[bool], truth: &[bool]) -> Result<f64> {
    binary_metrics(pred, truth).map(|m| m.dice)
}

/// `|P ∩ T| / |P|`.
pub fn precision(pred: &[bool], truth: &[bool]) -> Result<f64> {
    binary_metrics(pred, truth).map(|m| m.precision)
}

/// `|P ∩ T| / |T|`.
pub fn recall(pred: &[bool], truth: &[bool]) -> Result<f64> {
    binary_metrics(pred, truth).map(|m| m.recall)
}

/// How per-image results are combined into a dataset score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Pooling {
    /// Score each image, then average the scores.
    #[default]
    PerImage,
    /// Accumulate counts over the whole dataset, then score once.
    Global,
}

/// Per-class metrics and their mean over the foreground classes (1..C).
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub per_class: Vec<BinaryMetrics>,
    pub mean: BinaryMetrics,
}

impl MetricsReport {
    pub fn from_label_maps(
        preds: &[LabelMap],
        truths: &[LabelMap],
        num_classes: usize,
        pooling: Pooling,
    ) -> Result<Self> {
        if preds.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if preds.len() != truths.len() {
            return Err(Error::shape(format!(
                "{} predictions for {} label maps",
                preds.len(),
                truths.len()
            )));
        }
        if num_classes < 2 {
            return Err(Error::Config("metrics need at least two classes".into()));
        }
        let mut per_class = Vec::with_capacity(num_classes);
        for class in 0..num_classes as u32 {
            let mut pooled = Counts::default();
            let mut sum = BinaryMetrics::default();
            for (p, t) in preds.iter().zip(truths) {
                let pm: Vec<bool> = p.data().iter().map(|&l| l == class).collect();
                let tm: Vec<bool> = t.data().iter().map(|&l| l == class).collect();
                let counts = Counts::of(&pm, &tm)?;
                pooled.add(counts);
                let m = counts.metrics();
                sum.dice += m.dice;
                sum.precision += m.precision;
                sum.recall += m.recall;
            }
            let n = preds.len() as f64;
            per_class.push(match pooling {
                Pooling::PerImage => BinaryMetrics {
                    dice: sum.dice / n,
                    precision: sum.precision / n,
                    recall: sum.recall / n,
                },
                Pooling::Global => pooled.metrics(),
            });
        }
        let fg = &per_class[1..];
        let k = fg.len() as f64;
        let mean = BinaryMetrics {
            dice: fg.iter().map(|m| m.dice).sum::<f64>() / k,
            precision: fg.iter().map(|m| m.precision).sum::<f64>() / k,
            recall: fg.iter().map(|m| m.recall).sum::<f64>() / k,
        };
        Ok(MetricsReport { per_class, mean })
    }

    /// `dice=… precision=… recall=…` with four decimals.
    pub fn summary_line(&self) -> String {
        format!(
            "dice={:.4} precision={:.4} recall={:.4}",
            self.mean.dice, self.mean.precision, self.mean.recall
        )
    }
}
