//! The proprietary watermark network: a small classifier with one output per
//! watermark class plus a final benign class, trained only on backgrounds.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::texture::{render_texture, sample_benign_spec, BenignFamily};
use crate::data::{build_poison_set, Dataset, LabeledSample, PoisonConfig, Split};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::models::{conv_stack, TargetArch};
use crate::nn::{self, predict_logits, softmax, EpochStats, Layer, Network, TrainConfig};
use crate::seed;
use crate::trigger::{blend_with, BlendMode, VerificationKey};

/// A watermark probability above this counts as a benign input "speaking".
pub const SILENCE_THRESHOLD: f64 = 0.1;
/// Hold-out accuracy required of a trained watermark network.
pub const ACCURACY_GATE: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PtyNetConfig {
    pub watermark_classes: usize,
    /// Defaults to `conv_stack(16, 32, 64, w + 1)`.
    #[serde(default)]
    pub layers: Option<Vec<Layer>>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_holdout")]
    pub holdout_fraction: f64,
    #[serde(default = "default_side")]
    pub height: usize,
    #[serde(default = "default_side")]
    pub width: usize,
    pub seed: u64,
}

fn default_epochs() -> usize {
    10
}
fn default_lr() -> f64 {
    0.001
}
fn default_batch() -> usize {
    32
}
fn default_holdout() -> f64 {
    0.1
}
fn default_side() -> usize {
    32
}

impl PtyNetConfig {
    pub fn new(watermark_classes: usize, seed: u64) -> Self {
        PtyNetConfig {
            watermark_classes,
            layers: None,
            epochs: default_epochs(),
            lr: default_lr(),
            batch_size: default_batch(),
            holdout_fraction: default_holdout(),
            height: 32,
            width: 32,
            seed,
        }
    }

    pub fn layers(&self) -> Vec<Layer> {
        self.layers
            .clone()
            .unwrap_or_else(|| conv_stack(16, 32, 64, self.watermark_classes + 1))
    }
}

pub fn build_ptynet(cfg: &PtyNetConfig) -> Result<Network> {
    if cfg.watermark_classes == 0 {
        return Err(Error::InvalidParameter("at least one watermark class".into()));
    }
    let net = Network::new(&[3, cfg.height, cfg.width], cfg.layers(), seed::derive(cfg.seed, "ptynet", 0))?;
    if net.output_dim() != cfg.watermark_classes + 1 {
        return Err(Error::InvalidNetwork(format!(
            "watermark network has {} outputs, expected {}",
            net.output_dim(),
            cfg.watermark_classes + 1
        )));
    }
    Ok(net)
}

/// Behaviour of a watermark network on benign inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SilenceReport {
    pub n: usize,
    /// Mean over inputs of the largest watermark-class probability.
    pub mean_max_watermark_prob: f64,
    /// Fraction of inputs with some watermark probability above
    /// [`SILENCE_THRESHOLD`].
    pub fraction_above_threshold: f64,
}

impl SilenceReport {
    pub fn is_silent(&self) -> bool {
        self.fraction_above_threshold <= 0.05
    }
}

pub fn silence_report(net: &Network, images: &[&Image]) -> Result<SilenceReport> {
    if images.is_empty() {
        return Err(Error::Empty("benign images"));
    }
    let w = net.output_dim() - 1;
    let logits = predict_logits(net, images)?;
    let mut sum = 0.0;
    let mut loud = 0usize;
    for row in &logits {
        let p = softmax(row)?;
        let m = p[..w].iter().fold(0.0f32, |a, &b| a.max(b)) as f64;
        sum += m;
        if m > SILENCE_THRESHOLD {
            loud += 1;
        }
    }
    Ok(SilenceReport {
        n: images.len(),
        mean_max_watermark_prob: sum / images.len() as f64,
        fraction_above_threshold: loud as f64 / images.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PtyNetReport {
    pub holdout_accuracy: f64,
    /// Held-out trigger samples classified as their watermark class.
    pub trigger_accuracy: f64,
    /// Held-out wild samples classified as benign.
    pub benign_accuracy: f64,
    pub silence: SilenceReport,
    pub history: Vec<EpochStats>,
    pub poison_hash: String,
}

#[derive(Debug, Clone)]
pub struct TrainedPtyNet {
    pub net: Network,
    pub report: PtyNetReport,
}

/// Wild backgrounds for a watermark network, drawn from the benign texture
/// families on a stream separate from any target dataset.
pub fn wild_backgrounds(n: usize, h: usize, w: usize, seed_value: u64) -> Vec<Image> {
    (0..n)
        .map(|i| {
            let mut rng = seed::derive_rng(seed_value, "wild", i as u64);
            render_texture(&sample_benign_spec(&mut rng, &BenignFamily::ALL), h, w)
        })
        .collect()
}

/// The poisoned background dataset for `key`.
///
/// Replace-mode keys put shapes over trigger backgrounds. Alpha-mode keys
/// instead blend a trigger background over shaped wild images, matching how
/// their verification samples are formed.
pub fn poison_set_for_key(key: &VerificationKey, cfg: &PoisonConfig) -> Result<Dataset> {
    let wild = wild_backgrounds(512, key.height, key.width, seed::derive(cfg.seed, "wild-pool", 0));
    let triggers = key.training_backgrounds(256, seed::derive(cfg.seed, "trigger-pool", 0))?;
    let mut ds = build_poison_set(&triggers, &wild, cfg)?;
    if let BlendMode::Alpha { .. } = key.blend {
        let w = triggers.len();
        let mut rng = seed::derive_rng(cfg.seed, "alpha-poison", 0);
        let shaped: Vec<LabeledSample> = ds
            .samples
            .iter()
            .filter(|s| s.label == w && s.mask.is_some())
            .cloned()
            .collect();
        if shaped.is_empty() {
            return Err(Error::Empty("shaped wild samples"));
        }
        for s in ds.samples.iter_mut().filter(|s| s.label < w) {
            let pool = &triggers[s.label];
            let bg = &pool[rng.gen_range(0..pool.len())];
            let src = &shaped[rng.gen_range(0..shaped.len())];
            s.image = blend_with(src, bg, key.blend)?.quantized();
            s.mask = src.mask.clone();
        }
    }
    Ok(ds)
}

/// Train on `poison` with an internal shuffled hold-out split.
///
/// Fails with a diagnostic carrying the epoch history when trained
/// (`epochs > 0`) and the hold-out accuracy misses [`ACCURACY_GATE`].
pub fn train_ptynet(cfg: &PtyNetConfig, poison: &Dataset) -> Result<TrainedPtyNet> {
    let w = cfg.watermark_classes;
    if poison.classes != w + 1 {
        return Err(Error::InvalidParameter(format!(
            "poison set has {} classes, expected {}",
            poison.classes,
            w + 1
        )));
    }
    if !(0.0..1.0).contains(&cfg.holdout_fraction) {
        return Err(Error::InvalidParameter("hold-out fraction outside [0, 1)".into()));
    }
    let mut order: Vec<usize> = (0..poison.len()).collect();
    order.shuffle(&mut seed::derive_rng(cfg.seed, "holdout", 0));
    let n_hold = ((poison.len() as f64 * cfg.holdout_fraction).round() as usize).clamp(1, poison.len());
    let (hold_idx, train_idx) = order.split_at(n_hold);
    let subset = |idx: &[usize], split| {
        Dataset::new(
            idx.iter().map(|&i| poison.samples[i].clone()).collect(),
            poison.classes,
            split,
            poison.provenance.clone(),
        )
    };
    let hold = subset(hold_idx, Split::Test)?;
    let net = build_ptynet(cfg)?;
    let (net, history) = if cfg.epochs == 0 || train_idx.is_empty() {
        (net, Vec::new())
    } else {
        let train_set = subset(train_idx, Split::Train)?;
        let mut tc = TrainConfig::adam(cfg.epochs, cfg.lr, seed::derive(cfg.seed, "ptynet-train", 0));
        tc.batch_size = cfg.batch_size;
        let t = nn::train(net, &train_set, &tc)?;
        (t.net, t.history)
    };

    let images: Vec<&Image> = hold.samples.iter().map(|s| &s.image).collect();
    let preds = nn::predict(&net, &images)?;
    let (mut hit, mut trig, mut trig_hit, mut ben, mut ben_hit) = (0, 0, 0, 0, 0);
    for (s, &p) in hold.samples.iter().zip(&preds) {
        let ok = s.label == p;
        hit += ok as usize;
        if s.label == w {
            ben += 1;
            ben_hit += ok as usize;
        } else {
            trig += 1;
            trig_hit += ok as usize;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 1.0 } else { a as f64 / b as f64 };
    let benign_images: Vec<&Image> = hold
        .samples
        .iter()
        .filter(|s| s.label == w)
        .map(|s| &s.image)
        .collect();
    let silence = if benign_images.is_empty() {
        silence_report(&net, &images)?
    } else {
        silence_report(&net, &benign_images)?
    };
    let report = PtyNetReport {
        holdout_accuracy: ratio(hit, hold.len()),
        trigger_accuracy: ratio(trig_hit, trig),
        benign_accuracy: ratio(ben_hit, ben),
        silence,
        history,
        poison_hash: poison.content_hash(),
    };
    if cfg.epochs > 0 && report.holdout_accuracy < ACCURACY_GATE {
        return Err(Error::TrainingFailed {
            reason: format!(
                "hold-out accuracy {:.4} below {ACCURACY_GATE}",
                report.holdout_accuracy
            ),
            history: serde_json::to_string(&report.history)?,
        });
    }
    Ok(TrainedPtyNet { net, report })
}

/// Metadata stored next to a watermark network's weight file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub watermark_classes: usize,
    /// Target labels the network was trained for, if known.
    #[serde(default)]
    pub mapping_hint: Option<Vec<usize>>,
    pub poison_hash: String,
    pub param_hash: String,
}

pub fn sidecar_path(weights: &Path) -> PathBuf {
    let mut name = weights.file_name().unwrap_or_default().to_os_string();
    name.push(".json");
    weights.with_file_name(name)
}

pub fn save_ptynet(path: impl AsRef<Path>, net: &Network, sidecar: &Sidecar) -> Result<()> {
    let path = path.as_ref();
    nn::save_weights(net, path)?;
    let side = sidecar_path(path);
    std::fs::write(&side, serde_json::to_string_pretty(sidecar)?).map_err(|e| Error::io(&side, e))
}

pub fn load_ptynet(path: impl AsRef<Path>) -> Result<(Network, Sidecar)> {
    let path = path.as_ref();
    let net = nn::load_weights(path)?;
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text)?;
    if sidecar.watermark_classes + 1 != net.output_dim() {
        return Err(Error::DescriptorMismatch(format!(
            "sidecar declares {} watermark classes for a network with {} outputs",
            sidecar.watermark_classes,
            net.output_dim()
        )));
    }
    Ok((net, sidecar))
}

/// Parameter count of the default watermark network against the smallest
/// stock target, both on 32×32 inputs with 8 target classes.
pub fn default_size_ratio(w: usize) -> Result<f64> {
    let pty = build_ptynet(&PtyNetConfig::new(w, 0))?;
    let target = TargetArch::SmallCnn.build(32, 32, 8, 0)?;
    Ok(pty.param_count() as f64 / target.param_count() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trigger::{make_key, KeyConfig, StrategyKind};

    #[test]
    fn output_dim_and_size() {
        let net = build_ptynet(&PtyNetConfig::new(3, 0)).unwrap();
        assert_eq!(net.output_dim(), 4);
        assert!(default_size_ratio(3).unwrap() < 1.0);
    }

    #[test]
    fn init_is_deterministic() {
        let a = build_ptynet(&PtyNetConfig::new(3, 5)).unwrap();
        let b = build_ptynet(&PtyNetConfig::new(3, 5)).unwrap();
        assert_eq!(a.param_hash(), b.param_hash());
    }

    fn small_poison(key: &VerificationKey) -> Dataset {
        let cfg = PoisonConfig {
            n_trigger: 60,
            n_wild: 60,
            ..Default::default()
        };
        poison_set_for_key(key, &cfg).unwrap()
    }

    #[test]
    fn zero_epochs_reports_on_random_init() {
        let key = make_key(&KeyConfig::new(StrategyKind::Search, 1), None).unwrap();
        let poison = small_poison(&key);
        let mut cfg = PtyNetConfig::new(3, 0);
        cfg.epochs = 0;
        let t = train_ptynet(&cfg, &poison).unwrap();
        assert!(t.report.history.is_empty());
        assert!(t.report.silence.n > 0);
    }

    #[test]
    fn class_count_mismatch_rejected() {
        let key = make_key(&KeyConfig::new(StrategyKind::Search, 1), None).unwrap();
        let poison = small_poison(&key);
        assert!(train_ptynet(&PtyNetConfig::new(2, 0), &poison).is_err());
    }

    #[test]
    fn alpha_poison_labels_match_key() {
        let mut kc = KeyConfig::new(StrategyKind::Search, 1);
        kc.blend = BlendMode::Alpha { beta: 0.4 };
        let key = make_key(&kc, None).unwrap();
        let poison = small_poison(&key);
        assert_eq!(poison.class_counts(), vec![20, 20, 20, 60]);
    }

    #[test]
    fn sidecar_round_trip() {
        let net = build_ptynet(&PtyNetConfig::new(2, 0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pty.ptyw");
        let side = Sidecar {
            watermark_classes: 2,
            mapping_hint: Some(vec![0, 1]),
            poison_hash: "x".into(),
            param_hash: net.param_hash(),
        };
        save_ptynet(&path, &net, &side).unwrap();
        let (back, s) = load_ptynet(&path).unwrap();
        assert_eq!(back.param_hash(), net.param_hash());
        assert_eq!(s, side);
    }
}
