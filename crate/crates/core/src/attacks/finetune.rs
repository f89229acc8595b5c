use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fusion::{check_mapping, inject, FusedModel};
use crate::nn::{self, softmax_rows, Layer, Network, OptimizerKind, OptimizerState, Tensor, TrainConfig};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinetuneMode {
    /// Re-initialize and retrain the target's last dense layer.
    Rtll,
    /// Fine-tune every parameter of the composite through the fusion.
    Ftal,
    /// New target head for the attacker's label space, trained on its data.
    Transfer,
}

impl FinetuneMode {
    pub fn name(self) -> &'static str {
        match self {
            FinetuneMode::Rtll => "rtll",
            FinetuneMode::Ftal => "ftal",
            FinetuneMode::Transfer => "transfer",
        }
    }
}

fn fresh_head(target: &Network, classes: usize, seed_value: u64) -> Result<(usize, Network)> {
    let last = target
        .last_param_layer()
        .ok_or_else(|| Error::InvalidNetwork("target has no trainable layer".into()))?;
    if !matches!(target.layers()[last], Layer::Dense { .. }) || last + 1 != target.layers().len() {
        return Err(Error::InvalidNetwork("target does not end in a dense layer".into()));
    }
    let head = Network::new(
        target.activation_shape(last),
        vec![Layer::dense(classes)],
        seed::derive(seed_value, "head", 0),
    )?;
    Ok((last, head))
}

/// Fine-tune the composite with `data`. `epochs = 0` returns the model
/// unchanged. The watermark network is only touched in FTAL mode.
pub fn finetune_attack(
    fm: &FusedModel,
    mode: FinetuneMode,
    epochs: usize,
    lr: f64,
    data: &Dataset,
    seed_value: u64,
) -> Result<FusedModel> {
    if epochs == 0 {
        return Ok(fm.clone());
    }
    let classes = fm.classes();
    match mode {
        FinetuneMode::Rtll | FinetuneMode::Transfer => {
            let new_classes = if mode == FinetuneMode::Rtll {
                if data.classes != classes {
                    return Err(Error::InvalidParameter(format!(
                        "attacker data has {} classes, target has {classes}",
                        data.classes
                    )));
                }
                classes
            } else {
                check_mapping(fm.mapping(), data.classes, fm.mapping().len())?;
                data.classes
            };
            let mut target = fm.target().clone();
            let (last, head) = fresh_head(&target, new_classes, seed_value)?;
            target.replace_tail(last, head)?;
            let mut cfg = TrainConfig::adam(epochs, lr, seed::derive(seed_value, "finetune", 0));
            cfg.trainable_from = last;
            let trained = nn::train(target, data, &cfg)?;
            inject(trained.net, fm.ptynet().clone(), fm.mapping(), fm.alpha())
        }
        FinetuneMode::Ftal => ftal(fm, epochs, lr, data, seed_value),
    }
}

/// Cross-entropy on the normalized fused vector, back-propagated into both
/// networks.
fn ftal(fm: &FusedModel, epochs: usize, lr: f64, data: &Dataset, seed_value: u64) -> Result<FusedModel> {
    if data.is_empty() {
        return Err(Error::Empty("fine-tuning data"));
    }
    let classes = fm.classes();
    if let Some(s) = data.samples.iter().find(|s| s.label >= classes) {
        return Err(Error::LabelOutOfRange { label: s.label, classes });
    }
    let mut target = fm.target().clone();
    let mut pty = fm.ptynet().clone();
    let mapping = fm.mapping().to_vec();
    let a = fm.alpha() as f32;
    let w = mapping.len();
    let kind = OptimizerKind::adam(lr);
    let (mut opt_t, mut opt_p) = (OptimizerState::new(kind), OptimizerState::new(kind));
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..epochs {
        order.shuffle(&mut seed::derive_rng(seed_value, "ftal", epoch as u64));
        for chunk in order.chunks(64) {
            let (batch, labels) = data.batch(chunk);
            let n = chunk.len();
            let (lt, ct) = target.forward_cached(&batch)?;
            let (lp, cp) = pty.forward_cached(&batch)?;
            let yt = softmax_rows(&lt);
            let yp = softmax_rows(&lp);
            let pc = w + 1;
            let mut gt = vec![0.0f32; n * classes];
            let mut gp = vec![0.0f32; n * pc];
            for (r, &y) in labels.iter().enumerate() {
                let t = &yt.data()[r * classes..(r + 1) * classes];
                let p = &yp.data()[r * pc..(r + 1) * pc];
                let mut f = t.to_vec();
                for (i, &m) in mapping.iter().enumerate() {
                    f[m] += a * p[i];
                }
                let total: f32 = f.iter().sum();
                // dL/df_l = 1/total − [l = y]/f_y, averaged over the batch
                let df: Vec<f32> = (0..classes)
                    .map(|l| (1.0 / total - if l == y { 1.0 / f[y].max(1e-30) } else { 0.0 }) / n as f32)
                    .collect();
                let mut dp = vec![0.0f32; pc];
                for (i, &m) in mapping.iter().enumerate() {
                    dp[i] = a * df[m];
                }
                softmax_backward(t, &df, &mut gt[r * classes..(r + 1) * classes]);
                softmax_backward(p, &dp, &mut gp[r * pc..(r + 1) * pc]);
            }
            let grads_t = target.backward(&ct, &Tensor::from_vec(&[n, classes], gt)?);
            let grads_p = pty.backward(&cp, &Tensor::from_vec(&[n, pc], gp)?);
            opt_t.step(target.params_mut(), &grads_t)?;
            opt_p.step(pty.params_mut(), &grads_p)?;
        }
    }
    inject(target, pty, &mapping, fm.alpha())
}

/// `dz_j = y_j (g_j − Σ_k y_k g_k)`.
fn softmax_backward(y: &[f32], g: &[f32], out: &mut [f32]) {
    let dot: f32 = y.iter().zip(g).map(|(a, b)| a * b).sum();
    for j in 0..y.len() {
        out[j] = y[j] * (g[j] - dot);
    }
}
