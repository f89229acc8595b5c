use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{argmax, cross_entropy_smoothed};
use super::network::Network;
use super::optim::{OptimizerKind, OptimizerState};
use super::tensor::Tensor;
use crate::data::{images_to_batch, Dataset};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::{imaging, seed};

/// Training-time augmentation, off by default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Augment {
    /// Random rotation within ±15°.
    #[serde(default)]
    pub rotate: bool,
    /// Random rescale within 0.9–1.1.
    #[serde(default)]
    pub scale: bool,
}

impl Augment {
    pub fn any(&self) -> bool {
        self.rotate || self.scale
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    #[serde(default)]
    pub augment: Augment,
    /// Layers before this index are frozen.
    #[serde(default)]
    pub trainable_from: usize,
    /// Label-smoothing mass ε spread uniformly over all classes.
    #[serde(default)]
    pub label_smoothing: f64,
}

fn default_batch() -> usize {
    64
}

impl TrainConfig {
    pub fn adam(epochs: usize, lr: f64, seed: u64) -> Self {
        TrainConfig {
            epochs,
            batch_size: default_batch(),
            optimizer: OptimizerKind::adam(lr),
            seed,
            augment: Augment::default(),
            trainable_from: 0,
            label_smoothing: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub net: Network,
    pub history: Vec<EpochStats>,
}

fn augment_image(img: &Image, aug: Augment, rng: &mut seed::Rng) -> Image {
    let mut out = img.clone();
    if aug.rotate {
        out = imaging::rotate(&out, rng.gen_range(-15.0..15.0)).expect("finite angle");
    }
    if aug.scale {
        out = imaging::scale(&out, rng.gen_range(0.9..1.1)).expect("positive factor");
    }
    out
}

/// Mini-batch training with mean cross-entropy.
///
/// Shuffling, augmentation and initialization are all seeded, and every
/// reduction runs in a fixed order, so a given seed reproduces the final
/// weights bit for bit.
pub fn train(net: Network, ds: &Dataset, cfg: &TrainConfig) -> Result<Trained> {
    if ds.is_empty() {
        return Err(Error::Empty("training dataset"));
    }
    if let Some(s) = ds.samples.iter().find(|s| s.label >= net.output_dim()) {
        return Err(Error::LabelOutOfRange {
            label: s.label,
            classes: net.output_dim(),
        });
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidParameter("batch size 0".into()));
    }
    if cfg.trainable_from >= net.layers().len() {
        return Err(Error::InvalidParameter(format!(
            "trainable_from {} leaves nothing to train",
            cfg.trainable_from
        )));
    }
    let from = cfg.trainable_from;
    if from > 0 && !cfg.augment.any() {
        return train_head_on_features(net, ds, cfg);
    }

    let mut net = net;
    let mut opt = OptimizerState::new(cfg.optimizer);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut seed::derive_rng(cfg.seed, "shuffle", epoch as u64));
        let mut aug_rng = seed::derive_rng(cfg.seed, "augment", epoch as u64);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let (batch, labels) = if cfg.augment.any() {
                let images: Vec<Image> = chunk
                    .iter()
                    .map(|&i| augment_image(&ds.samples[i].image, cfg.augment, &mut aug_rng))
                    .collect();
                let refs: Vec<&Image> = images.iter().collect();
                (
                    images_to_batch(&refs),
                    chunk.iter().map(|&i| ds.samples[i].label).collect::<Vec<_>>(),
                )
            } else {
                ds.batch(chunk)
            };
            let (logits, cache) = net.forward_cached(&batch)?;
            let (loss, dlogits) = cross_entropy_smoothed(&logits, &labels, cfg.label_smoothing)?;
            correct += count_correct(&logits, &labels);
            loss_sum += loss as f64 * chunk.len() as f64;
            let grads = net.backward(&cache, &dlogits);
            opt.step(&mut net.params_mut()[from..], &grads[from..])?;
        }
        history.push(EpochStats {
            epoch,
            loss: loss_sum / ds.len() as f64,
            accuracy: correct as f64 / ds.len() as f64,
        });
    }
    Ok(Trained { net, history })
}

/// Frozen-trunk training: run the trunk once, then fit only the tail.
fn train_head_on_features(mut net: Network, ds: &Dataset, cfg: &TrainConfig) -> Result<Trained> {
    let from = cfg.trainable_from;
    let feature_shape = net.activation_shape(from).to_vec();
    let feat_len: usize = feature_shape.iter().product();
    let idx: Vec<usize> = (0..ds.len()).collect();
    let mut features = Vec::with_capacity(ds.len() * feat_len);
    for chunk in idx.chunks(256) {
        let (batch, _) = ds.batch(chunk);
        features.extend(net.forward_partial(&batch, from)?.into_data());
    }
    let labels = ds.labels();
    let mut head = net.tail(from);
    let mut opt = OptimizerState::new(cfg.optimizer);
    let mut order = idx;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut seed::derive_rng(cfg.seed, "shuffle", epoch as u64));
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let mut data = Vec::with_capacity(chunk.len() * feat_len);
            for &i in chunk {
                data.extend_from_slice(&features[i * feat_len..(i + 1) * feat_len]);
            }
            let mut shape = vec![chunk.len()];
            shape.extend_from_slice(&feature_shape);
            let batch = Tensor::from_vec(&shape, data)?;
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (logits, cache) = head.forward_cached(&batch)?;
            let (loss, dlogits) = cross_entropy_smoothed(&logits, &y, cfg.label_smoothing)?;
            correct += count_correct(&logits, &y);
            loss_sum += loss as f64 * chunk.len() as f64;
            let grads = head.backward(&cache, &dlogits);
            opt.step(head.params_mut(), &grads)?;
        }
        history.push(EpochStats {
            epoch,
            loss: loss_sum / ds.len() as f64,
            accuracy: correct as f64 / ds.len() as f64,
        });
    }
    net.replace_tail(from, head)?;
    Ok(Trained { net, history })
}

fn count_correct(logits: &Tensor, labels: &[usize]) -> usize {
    let c = logits.shape()[1];
    logits
        .data()
        .chunks_exact(c)
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count()
}

const EVAL_CHUNK: usize = 128;

/// Logits for every image, in input order.
pub fn predict_logits(net: &Network, images: &[&Image]) -> Result<Vec<Vec<f32>>> {
    let chunks: Vec<Result<Vec<Vec<f32>>>> = images
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let logits = net.forward(&images_to_batch(chunk))?;
            let c = logits.shape()[1];
            Ok(logits.data().chunks_exact(c).map(<[f32]>::to_vec).collect())
        })
        .collect();
    let mut out = Vec::with_capacity(images.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

/// Top-1 labels for every image, in input order.
pub fn predict(net: &Network, images: &[&Image]) -> Result<Vec<usize>> {
    Ok(predict_logits(net, images)?.iter().map(|l| argmax(l)).collect())
}

/// Top-1 accuracy on a dataset.
pub fn accuracy(net: &Network, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Empty("evaluation dataset"));
    }
    let images: Vec<&Image> = ds.samples.iter().map(|s| &s.image).collect();
    let pred = predict(net, &images)?;
    let hits = pred.iter().zip(&ds.samples).filter(|(p, s)| **p == s.label).count();
    Ok(hits as f64 / ds.len() as f64)
}
