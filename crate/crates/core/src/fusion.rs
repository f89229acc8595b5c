//! Output fusion: the watermark network's class probabilities are added onto
//! designated coordinates of the target's softmax output.
//!
//! For watermark class `i` mapped to target label `m_i`:
//!
//! ```text
//! fused[m_i] = y_target[m_i] + α · y_pty[i]
//! fused[l]   = y_target[l]                    (l not mapped)
//! ```
//!
//! The watermark network's benign probability is never added and the fused
//! vector is not renormalized; only its argmax is consumed.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{self, argmax, predict_logits, softmax, Network};

#[derive(Debug, Clone)]
pub struct FusedModel {
    pub(crate) target: Network,
    pub(crate) ptynet: Network,
    mapping: Vec<usize>,
    alpha: f64,
    target_hash: String,
}

/// Check a watermark-class to target-label mapping against a target with
/// `classes` outputs and a watermark network with `w + 1` outputs.
pub fn check_mapping(mapping: &[usize], classes: usize, w: usize) -> Result<()> {
    if mapping.len() != w {
        return Err(Error::InvalidMapping(format!(
            "{} entries for {w} watermark classes",
            mapping.len()
        )));
    }
    for (i, &m) in mapping.iter().enumerate() {
        if m >= classes {
            return Err(Error::InvalidMapping(format!("label {m} >= {classes} target classes")));
        }
        if mapping[..i].contains(&m) {
            return Err(Error::InvalidMapping(format!("label {m} assigned twice")));
        }
    }
    Ok(())
}

/// Compose `target` and `ptynet`. Neither network is modified; the target's
/// parameter hash is recorded so later tampering is detectable.
pub fn inject(target: Network, ptynet: Network, mapping: &[usize], alpha: f64) -> Result<FusedModel> {
    if target.input_shape() != ptynet.input_shape() {
        return Err(Error::shape(target.input_shape(), ptynet.input_shape()));
    }
    if ptynet.output_dim() < 2 {
        return Err(Error::InvalidNetwork("watermark network needs at least 2 outputs".into()));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!("alpha must be non-negative, got {alpha}")));
    }
    check_mapping(mapping, target.output_dim(), ptynet.output_dim() - 1)?;
    let target_hash = target.param_hash();
    Ok(FusedModel {
        target,
        ptynet,
        mapping: mapping.to_vec(),
        alpha,
        target_hash,
    })
}

/// Fused score vector from the two probability vectors.
pub fn fuse_scores(y_target: &[f32], y_pty: &[f32], mapping: &[usize], alpha: f64) -> Vec<f32> {
    let mut fused = y_target.to_vec();
    let a = alpha as f32;
    for (i, &m) in mapping.iter().enumerate() {
        fused[m] += a * y_pty[i];
    }
    fused
}

impl FusedModel {
    pub fn target(&self) -> &Network {
        &self.target
    }

    pub fn ptynet(&self) -> &Network {
        &self.ptynet
    }

    pub fn mapping(&self) -> &[usize] {
        &self.mapping
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Target hash recorded at injection.
    pub fn target_hash(&self) -> &str {
        &self.target_hash
    }

    pub fn target_unchanged(&self) -> bool {
        self.target.param_hash() == self.target_hash
    }

    pub fn classes(&self) -> usize {
        self.target.output_dim()
    }

    /// Same networks under a different α.
    pub fn with_alpha(&self, alpha: f64) -> Result<FusedModel> {
        inject(self.target.clone(), self.ptynet.clone(), &self.mapping, alpha)
    }

    pub fn fuse_predict(&self, x: &Image) -> Result<(Vec<f32>, usize)> {
        Ok(self.fuse_predict_batch(&[x])?.pop().expect("one row"))
    }

    pub fn fuse_predict_batch(&self, xs: &[&Image]) -> Result<Vec<(Vec<f32>, usize)>> {
        let yt = predict_logits(&self.target, xs)?;
        let yp = predict_logits(&self.ptynet, xs)?;
        yt.iter()
            .zip(&yp)
            .map(|(t, p)| {
                let fused = fuse_scores(&softmax(t)?, &softmax(p)?, &self.mapping, self.alpha);
                let label = argmax(&fused);
                Ok((fused, label))
            })
            .collect()
    }

    pub fn predict(&self, xs: &[&Image]) -> Result<Vec<usize>> {
        Ok(self.fuse_predict_batch(xs)?.into_iter().map(|(_, l)| l).collect())
    }

    pub fn as_oracle(&self) -> FusedOracle<'_> {
        FusedOracle {
            model: self,
            queries: AtomicU64::new(0),
        }
    }

    pub fn descriptor(&self) -> FusionDescriptor {
        FusionDescriptor {
            mapping: self.mapping.clone(),
            alpha: self.alpha,
            target_hash: self.target_hash.clone(),
            ptynet_hash: self.ptynet.param_hash(),
        }
    }

    /// Write `target.ptyw`, `ptynet.ptyw` and `fusion.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        nn::save_weights(&self.target, dir.join(TARGET_FILE))?;
        nn::save_weights(&self.ptynet, dir.join(PTYNET_FILE))?;
        let path = dir.join(DESCRIPTOR_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&self.descriptor())?)
            .map_err(|e| Error::io(&path, e))
    }

    /// Load a fused model, checking both weight files against the hashes in
    /// the descriptor.
    pub fn load(dir: impl AsRef<Path>) -> Result<FusedModel> {
        let dir = dir.as_ref();
        let path = dir.join(DESCRIPTOR_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let d: FusionDescriptor = serde_json::from_str(&text)?;
        let target = nn::load_weights(dir.join(TARGET_FILE))?;
        let ptynet = nn::load_weights(dir.join(PTYNET_FILE))?;
        if ptynet.param_hash() != d.ptynet_hash {
            return Err(Error::DescriptorMismatch("watermark network hash differs".into()));
        }
        let fm = inject(target, ptynet, &d.mapping, d.alpha)?;
        if fm.target_hash != d.target_hash {
            return Err(Error::DescriptorMismatch("target hash differs".into()));
        }
        Ok(fm)
    }
}

pub const TARGET_FILE: &str = "target.ptyw";
pub const PTYNET_FILE: &str = "ptynet.ptyw";
pub const DESCRIPTOR_FILE: &str = "fusion.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionDescriptor {
    pub mapping: Vec<usize>,
    pub alpha: f64,
    pub target_hash: String,
    pub ptynet_hash: String,
}

/// Label-only query access to a suspect model.
pub trait LabelOracle: Sync {
    fn query_batch(&self, xs: &[&Image]) -> Result<Vec<usize>>;

    fn query(&self, x: &Image) -> Result<usize> {
        Ok(self.query_batch(&[x])?[0])
    }

    /// Images queried so far.
    fn queries(&self) -> u64;
}

pub struct FusedOracle<'a> {
    model: &'a FusedModel,
    queries: AtomicU64,
}

impl LabelOracle for FusedOracle<'_> {
    fn query_batch(&self, xs: &[&Image]) -> Result<Vec<usize>> {
        self.queries.fetch_add(xs.len() as u64, Ordering::Relaxed);
        self.model.predict(xs)
    }

    fn queries(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }
}

/// Oracle over a plain classifier.
pub struct NetworkOracle<'a> {
    net: &'a Network,
    queries: AtomicU64,
}

impl<'a> NetworkOracle<'a> {
    pub fn new(net: &'a Network) -> Self {
        NetworkOracle {
            net,
            queries: AtomicU64::new(0),
        }
    }
}

impl LabelOracle for NetworkOracle<'_> {
    fn query_batch(&self, xs: &[&Image]) -> Result<Vec<usize>> {
        self.queries.fetch_add(xs.len() as u64, Ordering::Relaxed);
        nn::predict(self.net, xs)
    }

    fn queries(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }
}
