//! The classical pattern-stamping watermark, which fine-tunes the target on
//! a poisoned training set, and the embedding-cost benchmark comparing it
//! with the plug-and-play scheme.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::fusion::{inject, NetworkOracle};
use crate::image::Image;
use crate::nn::{self, Network, TrainConfig};
use crate::ptynet::{poison_set_for_key, train_ptynet, PtyNetConfig};
use crate::data::PoisonConfig;
use crate::report::{fmt_f64, json_hash, Csv};
use crate::seed;
use crate::trigger::{make_key, make_verification_set, KeyConfig, VerificationItem, VerificationSet};
use crate::verify::effectiveness;

/// 8×8 high-contrast glyph; `#` is white, `.` is black.
pub const DEFAULT_GLYPH: [&str; 8] = [
    "########",
    "#......#",
    "#.####.#",
    "#.#..#.#",
    "#.#..#.#",
    "#.####.#",
    "#......#",
    "########",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Corner {
    TopLeft,
    TopRight,
    BottomLeft,
    #[default]
    BottomRight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternSpec {
    /// Rows of `#` (white) and `.` (black).
    #[serde(default = "default_glyph")]
    pub glyph: Vec<String>,
    #[serde(default)]
    pub corner: Corner,
    #[serde(default = "default_opacity")]
    pub opacity: f64,
    /// Fraction of the training set that is stamped and relabelled.
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    pub label: usize,
}

fn default_glyph() -> Vec<String> {
    DEFAULT_GLYPH.iter().map(|s| s.to_string()).collect()
}
fn default_opacity() -> f64 {
    1.0
}
fn default_fraction() -> f64 {
    0.1
}

impl PatternSpec {
    pub fn new(label: usize) -> Self {
        PatternSpec {
            glyph: default_glyph(),
            corner: Corner::BottomRight,
            opacity: 1.0,
            fraction: 0.1,
            label,
        }
    }

    fn extent(&self) -> (usize, usize) {
        (self.glyph.len(), self.glyph.first().map_or(0, |r| r.chars().count()))
    }

    pub fn validate(&self, h: usize, w: usize, classes: usize) -> Result<()> {
        let (gh, gw) = self.extent();
        if gh == 0 || gw == 0 || self.glyph.iter().any(|r| r.chars().count() != gw) {
            return Err(Error::InvalidParameter("glyph must be a non-empty rectangle".into()));
        }
        if gh > h || gw > w {
            return Err(Error::InvalidParameter(format!("{gh}x{gw} glyph does not fit {h}x{w}")));
        }
        if !(self.fraction > 0.0 && self.fraction < 1.0) {
            return Err(Error::InvalidParameter(format!("poison fraction {}", self.fraction)));
        }
        if !(0.0..=1.0).contains(&self.opacity) || self.opacity == 0.0 {
            return Err(Error::InvalidParameter(format!("opacity {}", self.opacity)));
        }
        if self.label >= classes {
            return Err(Error::LabelOutOfRange { label: self.label, classes });
        }
        Ok(())
    }

    /// Top-left pixel of the stamp in an `h × w` image.
    pub fn origin(&self, h: usize, w: usize) -> (usize, usize) {
        let (gh, gw) = self.extent();
        match self.corner {
            Corner::TopLeft => (0, 0),
            Corner::TopRight => (0, w - gw),
            Corner::BottomLeft => (h - gh, 0),
            Corner::BottomRight => (h - gh, w - gw),
        }
    }
}

pub fn stamp(img: &Image, spec: &PatternSpec) -> Result<Image> {
    let (h, w) = img.dims();
    let (gh, gw) = spec.extent();
    if gh == 0 || gw == 0 || gh > h || gw > w {
        return Err(Error::InvalidParameter("glyph does not fit the image".into()));
    }
    let (oy, ox) = spec.origin(h, w);
    let a = spec.opacity as f32;
    let mut out = img.clone();
    for (dy, row) in spec.glyph.iter().enumerate() {
        for (dx, ch) in row.chars().enumerate() {
            let v = if ch == '#' { 1.0 } else { 0.0 };
            let p = img.pixel(oy + dy, ox + dx);
            out.set_pixel(oy + dy, ox + dx, p.map(|c| (1.0 - a) * c + a * v));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct PatternWatermark {
    pub net: Network,
    pub vset: VerificationSet,
    pub poisoned: usize,
}

/// Stamp and relabel a fraction of `train`, fine-tune the whole target on
/// the mix, and stamp `n_verify` images from `verify_pool` as verification
/// samples. Only images whose label differs from the assigned one are
/// stamped.
pub fn embed_pattern_watermark(
    target: &Network,
    train: &Dataset,
    verify_pool: &Dataset,
    spec: &PatternSpec,
    ft: &TrainConfig,
    n_verify: usize,
) -> Result<PatternWatermark> {
    let (h, w) = train.image_dims().ok_or(Error::Empty("training set"))?;
    spec.validate(h, w, target.output_dim())?;
    let mut candidates: Vec<usize> = (0..train.len()).filter(|&i| train.samples[i].label != spec.label).collect();
    candidates.shuffle(&mut seed::derive_rng(ft.seed, "pattern-poison", 0));
    let n_poison = ((train.len() as f64 * spec.fraction).round() as usize).min(candidates.len());
    let mut samples = train.samples.clone();
    for &i in &candidates[..n_poison] {
        samples[i].image = stamp(&samples[i].image, spec)?.quantized();
        samples[i].label = spec.label;
    }
    let mixed = Dataset::new(samples, train.classes, Split::Train, train.provenance.clone())?;
    let trained = nn::train(target.clone(), &mixed, ft)?;

    let pool: Vec<usize> = (0..verify_pool.len())
        .filter(|&i| verify_pool.samples[i].label != spec.label)
        .collect();
    if pool.is_empty() || n_verify == 0 {
        return Err(Error::Empty("verification pool"));
    }
    let items = (0..n_verify)
        .map(|j| {
            let source = pool[j % pool.len()];
            Ok(VerificationItem {
                image: stamp(&verify_pool.samples[source].image, spec)?.quantized(),
                desired: spec.label,
                watermark_class: 0,
                source,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PatternWatermark {
        net: trained.net,
        vset: VerificationSet {
            items,
            key_hash: json_hash(spec)?,
            seed: ft.seed,
        },
        poisoned: n_poison,
    })
}

#[derive(Debug, Clone)]
pub struct BenchTarget {
    pub name: String,
    pub net: Network,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub key: KeyConfig,
    pub ptynet: PtyNetConfig,
    pub poison: PoisonConfig,
    pub baseline_epochs: usize,
    pub baseline_lr: f64,
    pub pattern: PatternSpec,
    pub n_verify: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub scheme: String,
    pub model: String,
    pub seconds: f64,
    pub effectiveness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    /// One-off cost: key, poisoned set and watermark network training.
    pub ptynet_training_seconds: f64,
    pub rows: Vec<BenchRow>,
    pub ptynet_total_seconds: f64,
    pub baseline_total_seconds: f64,
    /// `ptynet_total / baseline_total`, reported from two models upward.
    pub ratio: Option<f64>,
}

impl EfficiencyReport {
    pub fn csv(&self) -> Csv {
        let mut csv = Csv::new(&["scheme", "model", "seconds", "effectiveness"]);
        csv.push(vec![
            "ptynet".into(),
            "(training)".into(),
            fmt_f64(self.ptynet_training_seconds),
            String::new(),
        ]);
        for r in &self.rows {
            csv.push(vec![r.scheme.clone(), r.model.clone(), fmt_f64(r.seconds), fmt_f64(r.effectiveness)]);
        }
        csv
    }

    pub fn injection_seconds(&self) -> Vec<f64> {
        self.rows.iter().filter(|r| r.scheme == "ptynet").map(|r| r.seconds).collect()
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "ptynet training {:.2}s, ptynet total {:.2}s, baseline total {:.2}s",
            self.ptynet_training_seconds, self.ptynet_total_seconds, self.baseline_total_seconds
        );
        if let Some(r) = self.ratio {
            s.push_str(&format!(", ratio {r:.3}"));
        }
        s
    }
}

/// Wall-clock cost of watermarking every target with each scheme, run on a
/// single worker thread.
pub fn bench_efficiency(targets: &[BenchTarget], train: &Dataset, test: &Dataset, cfg: &BenchConfig) -> Result<EfficiencyReport> {
    if targets.is_empty() {
        return Err(Error::Empty("bench targets"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    pool.install(|| bench_inner(targets, train, test, cfg))
}

fn bench_inner(targets: &[BenchTarget], train: &Dataset, test: &Dataset, cfg: &BenchConfig) -> Result<EfficiencyReport> {
    let mut rows = Vec::new();

    let start = Instant::now();
    let key = make_key(&cfg.key, Some(&train.provenance))?;
    let poison = poison_set_for_key(&key, &cfg.poison)?;
    let pty = train_ptynet(&cfg.ptynet, &poison)?;
    let training = start.elapsed().as_secs_f64();
    let vset = make_verification_set(test, &key, cfg.n_verify, cfg.seed)?;
    let mut ptynet_total = training;
    for t in targets {
        let start = Instant::now();
        let fm = inject(t.net.clone(), pty.net.clone(), &key.mapping, key.alpha)?;
        let secs = start.elapsed().as_secs_f64();
        ptynet_total += secs;
        rows.push(BenchRow {
            scheme: "ptynet".into(),
            model: t.name.clone(),
            seconds: secs,
            effectiveness: effectiveness(&fm.as_oracle(), &vset)?.success_rate,
        });
    }

    let mut baseline_total = 0.0;
    for (i, t) in targets.iter().enumerate() {
        let ft = TrainConfig::adam(cfg.baseline_epochs, cfg.baseline_lr, seed::derive(cfg.seed, "bench-baseline", i as u64));
        let start = Instant::now();
        let wm = embed_pattern_watermark(&t.net, train, test, &cfg.pattern, &ft, cfg.n_verify)?;
        let secs = start.elapsed().as_secs_f64();
        baseline_total += secs;
        rows.push(BenchRow {
            scheme: "baseline".into(),
            model: t.name.clone(),
            seconds: secs,
            effectiveness: effectiveness(&NetworkOracle::new(&wm.net), &wm.vset)?.success_rate,
        });
    }

    Ok(EfficiencyReport {
        ptynet_training_seconds: training,
        rows,
        ptynet_total_seconds: ptynet_total,
        baseline_total_seconds: baseline_total,
        ratio: (targets.len() >= 2).then(|| ptynet_total / baseline_total),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stamp_touches_only_the_corner() {
        let img = Image::from_fn(16, 16, |y, x| [y as f32 / 16.0, x as f32 / 16.0, 0.5]);
        let spec = PatternSpec::new(0);
        let out = stamp(&img, &spec).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                if y >= 8 && x >= 8 {
                    let v = if DEFAULT_GLYPH[y - 8].as_bytes()[x - 8] == b'#' { 1.0 } else { 0.0 };
                    assert_eq!(out.pixel(y, x), [v; 3]);
                } else {
                    assert_eq!(out.pixel(y, x), img.pixel(y, x));
                }
            }
        }
    }

    #[test]
    fn degenerate_specs_rejected() {
        let mut s = PatternSpec::new(0);
        s.fraction = 0.0;
        assert!(s.validate(32, 32, 8).is_err());
        let mut s = PatternSpec::new(9);
        assert!(s.validate(32, 32, 8).is_err());
        s.label = 1;
        assert!(s.validate(4, 4, 8).is_err());
        s.glyph = vec!["##".into(), "#".into()];
        assert!(s.validate(32, 32, 8).is_err());
    }

    #[test]
    fn single_model_report_has_no_ratio() {
        let r = EfficiencyReport {
            ptynet_training_seconds: 1.0,
            rows: vec![],
            ptynet_total_seconds: 1.0,
            baseline_total_seconds: 2.0,
            ratio: None,
        };
        assert!(r.summary().contains("baseline total"));
        assert_eq!(r.csv().rows().len(), 1);
    }
}
