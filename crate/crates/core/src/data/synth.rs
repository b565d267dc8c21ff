//! Synthetic two-scale disk corpus.
//!
//! Every image holds a few large and several small non-overlapping disks on a
//! noisy background. Labels mark disk pixels 1 and background 0. The corpus is
//! a pure function of [`SynthConfig`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::{LabelMap, Tensor};

use super::{preprocess, SegmentationSample};

/// Accepted per-image foreground fraction.
pub const FOREGROUND_FRACTION: (f64, f64) = (0.02, 0.40);
const IMAGE_ATTEMPTS: usize = 200;
const DISK_ATTEMPTS: usize = 200;
/// Minimum pixel gap between disk rims.
const DISK_GAP: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub num_train: usize,
    pub num_test: usize,
    pub small_radius: [f64; 2],
    pub large_radius: [f64; 2],
    pub small_count: [usize; 2],
    pub large_count: [usize; 2],
    pub foreground_mean: f64,
    pub background_mean: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            height: 64,
            width: 64,
            num_train: 200,
            num_test: 50,
            small_radius: [2.0, 4.0],
            large_radius: [10.0, 16.0],
            small_count: [2, 6],
            large_count: [1, 2],
            foreground_mean: 1.0,
            background_mean: 0.0,
            noise_sigma: 0.6,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.height < 32 || self.width < 32 {
            return bad("synthetic images must be at least 32x32");
        }
        for [lo, hi] in [self.small_radius, self.large_radius] {
            if !(lo > 0.0 && lo <= hi) {
                return bad("radius ranges must be positive and ordered");
            }
        }
        if self.small_radius[1] >= self.large_radius[0] {
            return bad("small and large radius ranges must be disjoint");
        }
        for [lo, hi] in [self.small_count, self.large_count] {
            if lo > hi {
                return bad("object count ranges must be ordered");
            }
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise sigma must be non-negative");
        }
        if self.noise_sigma == 0.0 && self.small_count[1] + self.large_count[1] == 0 {
            return bad("images would be constant");
        }
        Ok(())
    }

    /// Radius separating the small and large populations.
    pub fn split_radius(&self) -> f64 {
        0.5 * (self.small_radius[1] + self.large_radius[0])
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SynthConfig =
            toml::from_str(text).map_err(|e| Error::format("synth config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Disk {
    pub cy: f64,
    pub cx: f64,
    pub radius: f64,
}

impl Disk {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        let dy = y as f64 - self.cy;
        let dx = x as f64 - self.cx;
        dy * dy + dx * dx <= self.radius * self.radius
    }
}

/// Generates the `(train, test)` split.
pub fn generate_synth(cfg: &SynthConfig) -> Result<(Vec<SegmentationSample>, Vec<SegmentationSample>)> {
    cfg.validate()?;
    let base = RngState::new(cfg.seed);
    let mut train_rng = base.fork(1);
    let mut test_rng = base.fork(2);
    let train = (0..cfg.num_train)
        .map(|_| generate_sample(cfg, &mut train_rng))
        .collect::<Result<_>>()?;
    let test = (0..cfg.num_test)
        .map(|_| generate_sample(cfg, &mut test_rng))
        .collect::<Result<_>>()?;
    Ok((train, test))
}

fn generate_sample(cfg: &SynthConfig, rng: &mut RngState) -> Result<SegmentationSample> {
    let (h, w) = (cfg.height, cfg.width);
    for _ in 0..IMAGE_ATTEMPTS {
        let Some(objects) = place_disks(cfg, rng) else {
            continue;
        };
        let labels = rasterize(&objects, h, w);
        let fg = labels.data().iter().filter(|&&l| l == 1).count() as f64 / (h * w) as f64;
        let no_objects = cfg.small_count[1] + cfg.large_count[1] == 0;
        if !no_objects && !(FOREGROUND_FRACTION.0..=FOREGROUND_FRACTION.1).contains(&fg) {
            continue;
        }
        let raw: Vec<f32> = labels
            .data()
            .iter()
            .map(|&l| {
                let mean = if l == 1 {
                    cfg.foreground_mean
                } else {
                    cfg.background_mean
                };
                (mean + cfg.noise_sigma * rng.normal()) as f32
            })
            .collect();
        let image = preprocess(&Tensor::from_vec(&[1, 1, h, w], raw)?)?;
        return Ok(SegmentationSample {
            image,
            labels,
            objects,
        });
    }
    Err(Error::Placement {
        attempts: IMAGE_ATTEMPTS,
    })
}

fn place_disks(cfg: &SynthConfig, rng: &mut RngState) -> Option<Vec<Disk>> {
    let n_large = rng.int_range(cfg.large_count[0], cfg.large_count[1]);
    let n_small = rng.int_range(cfg.small_count[0], cfg.small_count[1]);
    let mut disks: Vec<Disk> = Vec::with_capacity(n_large + n_small);
    let radii = (0..n_large)
        .map(|_| cfg.large_radius)
        .chain((0..n_small).map(|_| cfg.small_radius));
    for [lo, hi] in radii {
        let radius = rng.uniform_range(lo, hi);
        let placed = (0..DISK_ATTEMPTS).find_map(|_| {
            let margin = radius + 1.0;
            let cy = rng.uniform_range(margin, cfg.height as f64 - 1.0 - margin);
            let cx = rng.uniform_range(margin, cfg.width as f64 - 1.0 - margin);
            let d = Disk { cy, cx, radius };
            let clear = disks.iter().all(|o| {
                let dist = ((o.cy - cy).powi(2) + (o.cx - cx).powi(2)).sqrt();
                dist >= o.radius + radius + DISK_GAP
            });
            clear.then_some(d)
        })?;
        disks.push(placed);
    }
    Some(disks)
}

fn rasterize(objects: &[Disk], h: usize, w: usize) -> LabelMap {
    let mut labels = LabelMap::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            if objects.iter().any(|d| d.contains(y, x)) {
                labels.data_mut()[y * w + x] = 1;
            }
        }
    }
    labels
}

/// Recovers objects from a label map as 4-connected foreground components,
/// each summarized by its centroid and the radius of a disk of equal area.
pub fn objects_from_labels(labels: &LabelMap) -> Vec<Disk> {
    let (h, w) = (labels.height(), labels.width());
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..h * w {
        if seen[start] || labels.data()[start] == 0 {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut n, mut sy, mut sx) = (0usize, 0.0f64, 0.0f64);
        while let Some(i) = stack.pop() {
            let (y, x) = (i / w, i % w);
            n += 1;
            sy += y as f64;
            sx += x as f64;
            let mut visit = |j: usize| {
                if !seen[j] && labels.data()[j] != 0 {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
        }
        out.push(Disk {
            cy: sy / n as f64,
            cx: sx / n as f64,
            radius: (n as f64 / std::f64::consts::PI).sqrt(),
        });
    }
    out
}
