use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::conv::RateField;
use crate::error::{Error, Result};
use crate::tensor::{LabelMap, Tensor};

use super::pgm;
use super::synth::Disk;

/// Writes an `[.., H, W]` map as `H` lines of `W` comma-separated values.
/// Values use the shortest representation that parses back to the same `f32`.
pub fn write_csv(values: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let shape = values.shape();
    let w = shape[shape.len() - 1];
    let mut out = String::new();
    for row in values.data().chunks(w) {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write!(out, "{v}").expect("writing to a String");
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a CSV written by [`write_csv`] as an `[1, 1, H, W]` tensor.
pub fn read_csv(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ctx = path.display().to_string();
    let mut data = Vec::new();
    let mut width = None;
    let mut height = 0;
    for line in text.lines().filter(|l| !l.is_empty()) {
        let row: Vec<f32> = line
            .split(',')
            .map(|s| s.trim().parse::<f32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(&ctx, e.to_string()))?;
        if *width.get_or_insert(row.len()) != row.len() {
            return Err(Error::format(&ctx, "ragged rows"));
        }
        data.extend(row);
        height += 1;
    }
    let width = width.ok_or_else(|| Error::format(&ctx, "empty file"))?;
    Tensor::from_vec(&[1, 1, height, width], data)
}

/// Files written by [`export_rate_field`] and the PGM scale.
#[derive(Clone, Debug, PartialEq)]
pub struct RateFieldExport {
    pub csv: PathBuf,
    pub pgm: PathBuf,
    pub scale: PathBuf,
    pub min: f32,
    pub max: f32,
}

/// Writes `<prefix>.csv`, a 16-bit `<prefix>.pgm` min-max scaled for viewing,
/// and `<prefix>.pgm.txt` holding the scale as `min=… max=…`.
pub fn export_rate_field(rates: &RateField<f32>, prefix: impl AsRef<Path>) -> Result<RateFieldExport> {
    let prefix = prefix.as_ref().as_os_str().to_owned();
    let with = |ext: &str| {
        let mut p = prefix.clone();
        p.push(ext);
        PathBuf::from(p)
    };
    let (csv, pgm_path, scale) = (with(".csv"), with(".pgm"), with(".pgm.txt"));
    write_csv(rates.values(), &csv)?;
    let (h, w) = rates.dims();
    let (img, min, max) = pgm::quantize(rates.values().data(), w, h, 65535)?;
    pgm::write(&pgm_path, &img)?;
    fs::write(&scale, format!("min={min} max={max}\n")).map_err(|e| Error::io(&scale, e))?;
    Ok(RateFieldExport {
        csv,
        pgm: pgm_path,
        scale,
        min,
        max,
    })
}

/// Mean rates over pixels of small objects, large objects and background.
/// A population without pixels reports `None`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateStats {
    pub small: Option<f64>,
    pub large: Option<f64>,
    pub background: Option<f64>,
}

impl RateStats {
    pub fn to_text(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"));
        format!(
            "small_mean={}\nlarge_mean={}\nbackground_mean={}\n",
            fmt(self.small),
            fmt(self.large),
            fmt(self.background)
        )
    }
}

/// Foreground pixels are attributed to the object whose disk contains them;
/// objects with radius below `split_radius` count as small.
pub fn rate_stats(
    rates: &RateField<f32>,
    labels: &LabelMap,
    objects: &[Disk],
    split_radius: f64,
) -> Result<RateStats> {
    let (h, w) = rates.dims();
    if (labels.height(), labels.width()) != (h, w) {
        return Err(Error::shape(format!(
            "labels {}x{} vs rates {h}x{w}",
            labels.height(),
            labels.width()
        )));
    }
    let mut sums = [(0.0f64, 0usize); 3];
    for y in 0..h {
        for x in 0..w {
            let r = rates.values().data()[y * w + x] as f64;
            let slot = if labels.get(y, x) == 0 {
                Some(2)
            } else {
                // Recovered components may be slightly non-circular.
                objects
                    .iter()
                    .filter(|d| {
                        let dist = ((y as f64 - d.cy).powi(2) + (x as f64 - d.cx).powi(2)).sqrt();
                        dist <= d.radius + 1.0
                    })
                    .min_by(|a, b| {
                        let da = (y as f64 - a.cy).hypot(x as f64 - a.cx) - a.radius;
                        let db = (y as f64 - b.cy).hypot(x as f64 - b.cx) - b.radius;
                        da.total_cmp(&db)
                    })
                    .map(|d| usize::from(d.radius >= split_radius))
            };
            if let Some(s) = slot {
                sums[s].0 += r;
                sums[s].1 += 1;
            }
        }
    }
    let mean = |(s, n): (f64, usize)| (n > 0).then(|| s / n as f64);
    Ok(RateStats {
        small: mean(sums[0]),
        large: mean(sums[1]),
        background: mean(sums[2]),
    })
}
