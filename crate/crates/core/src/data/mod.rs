//! ShapeScape: a procedural classification task of foreground shapes over
//! textured backgrounds, plus poisoned-set construction and persistence.

mod io;
mod poison;
pub mod shapes;
pub mod texture;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use io::{load_dataset, save_dataset};
pub use poison::{build_poison_set, PoisonConfig};
pub use shapes::Shape;
pub use texture::{render_texture, BenignFamily, TextureFamily, TextureSpec};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::nn::Tensor;
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub image: Image,
    pub label: usize,
    pub mask: Option<Mask>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// How a dataset was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub seed: u64,
    #[serde(default)]
    pub params: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<LabeledSample>,
    pub classes: usize,
    pub split: Split,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(
        samples: Vec<LabeledSample>,
        classes: usize,
        split: Split,
        provenance: Provenance,
    ) -> Result<Self> {
        if let Some(s) = samples.iter().find(|s| s.label >= classes) {
            return Err(Error::LabelOutOfRange {
                label: s.label,
                classes,
            });
        }
        for s in &samples {
            if let Some(m) = &s.mask {
                if m.dims() != s.image.dims() {
                    let (h, w) = s.image.dims();
                    let (mh, mw) = m.dims();
                    return Err(Error::shape(&[h, w], &[mh, mw]));
                }
            }
        }
        Ok(Dataset {
            samples,
            classes,
            split,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn image_dims(&self) -> Option<(usize, usize)> {
        self.samples.first().map(|s| s.image.dims())
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// SHA-256 over class count, labels, pixels and masks in order.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.classes as u64).to_le_bytes());
        h.update((self.samples.len() as u64).to_le_bytes());
        for s in &self.samples {
            h.update((s.label as u64).to_le_bytes());
            h.update(s.image.content_bytes());
            match &s.mask {
                Some(m) => {
                    h.update([1u8]);
                    for v in m.data() {
                        h.update(v.to_le_bytes());
                    }
                }
                None => h.update([0u8]),
            }
        }
        hex::encode(h.finalize())
    }

    /// Stack the images at `indices` into a `[n, 3, H, W]` batch.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let images: Vec<&Image> = indices.iter().map(|&i| &self.samples[i].image).collect();
        let labels = indices.iter().map(|&i| self.samples[i].label).collect();
        (images_to_batch(&images), labels)
    }
}

/// Stack images (all of equal extent) into a channel-major batch tensor.
pub fn images_to_batch(images: &[&Image]) -> Tensor {
    let (h, w) = images.first().map(|i| i.dims()).unwrap_or((0, 0));
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        data.extend(img.to_chw());
    }
    Tensor::from_vec(&[images.len(), 3, h, w], data).unwrap()
}

/// `mask · foreground + (1 − mask) · background`, clamped to `[0, 1]`.
pub fn composite(foreground: &Image, mask: &Mask, background: &Image) -> Result<Image> {
    if foreground.dims() != background.dims() || mask.dims() != foreground.dims() {
        let (h, w) = foreground.dims();
        let (bh, bw) = background.dims();
        let (mh, mw) = mask.dims();
        return Err(Error::InvalidParameter(format!(
            "composite extents differ: foreground {h}x{w}, mask {mh}x{mw}, background {bh}x{bw}"
        )));
    }
    let (h, w) = foreground.dims();
    Ok(Image::from_fn(h, w, |y, x| {
        let m = mask.get(y, x);
        let (f, b) = (foreground.pixel(y, x), background.pixel(y, x));
        [0, 1, 2].map(|c| m * f[c] + (1.0 - m) * b[c])
    }))
}

fn mean_color(img: &Image) -> [f32; 3] {
    let mut acc = [0.0f64; 3];
    for px in img.data().chunks_exact(3) {
        for c in 0..3 {
            acc[c] += px[c] as f64;
        }
    }
    let n = (img.height() * img.width()) as f64;
    acc.map(|v| (v / n) as f32)
}

/// One benign sample: random wild background plus a shape of `label`.
pub fn render_benign_sample(
    sample_seed: u64,
    label: usize,
    h: usize,
    w: usize,
    families: &[BenignFamily],
) -> LabeledSample {
    let mut rng = seed::rng(sample_seed);
    let spec = texture::sample_benign_spec(&mut rng, families);
    let background = render_texture(&spec, h, w);
    let (placement, mask) =
        shapes::sample_placement(&mut rng, Shape::ALL[label], h, w, mean_color(&background));
    let image = composite(&placement.foreground(h, w), &mask, &background)
        .expect("extents agree")
        .quantized();
    LabeledSample {
        image,
        label,
        mask: Some(mask),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeScapeConfig {
    pub classes: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub height: usize,
    pub width: usize,
    pub families: Vec<BenignFamily>,
    /// First shape of the vocabulary used; class `i` is shape `offset + i`.
    #[serde(default)]
    pub shape_offset: usize,
}

impl Default for ShapeScapeConfig {
    fn default() -> Self {
        ShapeScapeConfig {
            classes: 8,
            n_train: 4000,
            n_test: 1000,
            height: 32,
            width: 32,
            families: BenignFamily::ALL.to_vec(),
            shape_offset: 0,
        }
    }
}

impl ShapeScapeConfig {
    fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.shape_offset + self.classes > Shape::ALL.len() {
            return Err(Error::InvalidParameter(format!(
                "shape vocabulary has {} entries; asked for {} classes from offset {}",
                Shape::ALL.len(),
                self.classes,
                self.shape_offset
            )));
        }
        if self.height < 8 || self.width < 8 {
            return Err(Error::InvalidParameter("images must be at least 8x8".into()));
        }
        if self.families.is_empty() {
            return Err(Error::Empty("benign texture families"));
        }
        Ok(())
    }
}

fn gen_split(cfg: &ShapeScapeConfig, seed: u64, split: Split) -> Result<Dataset> {
    let (tag, n) = match split {
        Split::Train => ("shapescape/train", cfg.n_train),
        Split::Test => ("shapescape/test", cfg.n_test),
    };
    let samples: Vec<LabeledSample> = (0..n)
        .into_par_iter()
        .map(|i| {
            let label = i % cfg.classes;
            let mut s = render_benign_sample(
                seed::derive(seed, tag, i as u64),
                cfg.shape_offset + label,
                cfg.height,
                cfg.width,
                &cfg.families,
            );
            s.label = label;
            s
        })
        .collect();
    Dataset::new(
        samples,
        cfg.classes,
        split,
        Provenance {
            generator: "shapescape".into(),
            seed,
            params: serde_json::to_value(cfg)?,
        },
    )
}

/// Generate the train and test splits. Labels cycle through the classes so
/// counts are balanced to within one; the splits use disjoint seed streams.
pub fn gen_shapescape(cfg: &ShapeScapeConfig, seed: u64) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    Ok((
        gen_split(cfg, seed, Split::Train)?,
        gen_split(cfg, seed, Split::Test)?,
    ))
}

/// Background specs of the first `limit` training samples of a generated
/// dataset, without rendering the samples.
pub fn benign_background_specs(provenance: &Provenance, limit: usize) -> Result<Vec<TextureSpec>> {
    if provenance.generator != "shapescape" {
        return Err(Error::InvalidParameter(format!(
            "no background record for generator {:?}",
            provenance.generator
        )));
    }
    let cfg: ShapeScapeConfig = serde_json::from_value(provenance.params.clone())?;
    Ok((0..cfg.n_train.min(limit))
        .map(|i| {
            let mut rng = seed::rng(seed::derive(provenance.seed, "shapescape/train", i as u64));
            texture::sample_benign_spec(&mut rng, &cfg.families)
        })
        .collect())
}

/// Rebuild a generated dataset from its provenance record.
pub fn regenerate(provenance: &Provenance, split: Split) -> Result<Dataset> {
    if provenance.generator != "shapescape" {
        return Err(Error::InvalidParameter(format!(
            "cannot regenerate datasets from generator {:?}",
            provenance.generator
        )));
    }
    let cfg: ShapeScapeConfig = serde_json::from_value(provenance.params.clone())?;
    cfg.validate()?;
    gen_split(&cfg, provenance.seed, split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ShapeScapeConfig {
        ShapeScapeConfig {
            n_train: 64,
            n_test: 16,
            ..Default::default()
        }
    }

    #[test]
    fn composite_extremes() {
        let fg = Image::filled(8, 8, [0.9, 0.1, 0.2]);
        let bg = Image::from_fn(8, 8, |y, x| [y as f32 / 8.0, x as f32 / 8.0, 0.5]);
        assert_eq!(composite(&fg, &Mask::filled(8, 8, 1.0), &bg).unwrap(), fg);
        assert_eq!(composite(&fg, &Mask::filled(8, 8, 0.0), &bg).unwrap(), bg);
    }

    #[test]
    fn composite_half_plane() {
        let fg = Image::from_fn(8, 8, |y, x| [0.1 * (x % 3) as f32, 0.05 * y as f32, 0.7]);
        let bg = Image::from_fn(8, 8, |y, x| [0.3, 0.02 * (x + y) as f32, 0.9]);
        let mask = Mask::from_fn(8, 8, |_, x| if x < 4 { 1.0 } else { 0.0 });
        let out = composite(&fg, &mask, &bg).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let want = if x < 4 { fg.pixel(y, x) } else { bg.pixel(y, x) };
                assert_eq!(out.pixel(y, x), want);
            }
        }
    }

    #[test]
    fn composite_rejects_mismatch() {
        let a = Image::new(8, 8);
        let b = Image::new(8, 9);
        assert!(composite(&a, &Mask::filled(8, 8, 1.0), &b).is_err());
    }

    #[test]
    fn generation_is_deterministic_and_balanced() {
        let (train, test) = gen_shapescape(&small(), 11).unwrap();
        let (train2, _) = gen_shapescape(&small(), 11).unwrap();
        assert_eq!(train.content_hash(), train2.content_hash());
        assert_ne!(train.content_hash(), test.content_hash());
        let counts = train.class_counts();
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        for s in train.samples.iter().chain(&test.samples) {
            let cov = s.mask.as_ref().unwrap().coverage();
            assert!((0.05..=0.5).contains(&cov), "{cov}");
            assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn regenerate_from_provenance() {
        let (train, test) = gen_shapescape(&small(), 5).unwrap();
        assert_eq!(
            regenerate(&train.provenance, Split::Train).unwrap().content_hash(),
            train.content_hash()
        );
        assert_eq!(
            regenerate(&test.provenance, Split::Test).unwrap().content_hash(),
            test.content_hash()
        );
    }

    #[test]
    fn too_many_classes_rejected() {
        let cfg = ShapeScapeConfig {
            classes: 9,
            ..small()
        };
        assert!(gen_shapescape(&cfg, 0).is_err());
    }

    #[test]
    fn images_are_quantized() {
        let (train, _) = gen_shapescape(&small(), 2).unwrap();
        let img = &train.samples[0].image;
        assert_eq!(&img.quantized(), img);
    }
}
