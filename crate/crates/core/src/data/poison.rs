use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::shapes::{sample_placement, Shape};
use super::{composite, mean_color, Dataset, LabeledSample, Provenance, Split};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoisonConfig {
    pub n_trigger: usize,
    pub n_wild: usize,
    /// Probability that a wild sample carries a foreground shape.
    pub wild_foreground: f64,
    pub seed: u64,
}

impl Default for PoisonConfig {
    fn default() -> Self {
        PoisonConfig {
            n_trigger: 2000,
            n_wild: 2000,
            wild_foreground: 0.75,
            seed: 0,
        }
    }
}

fn shaped(rng: &mut seed::Rng, background: &Image) -> LabeledSample {
    let (h, w) = background.dims();
    let shape = Shape::ALL[rng.gen_range(0..Shape::ALL.len())];
    let (placement, mask) = sample_placement(rng, shape, h, w, mean_color(background));
    let image = composite(&placement.foreground(h, w).quantized(), &mask, background)
        .expect("extents agree")
        .quantized();
    LabeledSample {
        image,
        label: 0,
        mask: Some(mask),
    }
}

/// Build the training set of a watermark network.
///
/// Trigger samples put a random shape over a background from
/// `trigger_backgrounds[i]` and carry label `i`; wild samples use
/// `wild_backgrounds` and carry the benign label `w = trigger_backgrounds.len()`.
/// Trigger classes are assigned round-robin.
pub fn build_poison_set(
    trigger_backgrounds: &[Vec<Image>],
    wild_backgrounds: &[Image],
    cfg: &PoisonConfig,
) -> Result<Dataset> {
    let w = trigger_backgrounds.len();
    if w == 0 {
        return Err(Error::Empty("trigger classes"));
    }
    if trigger_backgrounds.iter().any(|p| p.is_empty()) {
        return Err(Error::Empty("trigger background pool"));
    }
    if wild_backgrounds.is_empty() {
        return Err(Error::Empty("wild background pool"));
    }
    for i in 0..w {
        for j in i + 1..w {
            if trigger_backgrounds[i] == trigger_backgrounds[j] {
                return Err(Error::InvalidParameter(format!(
                    "watermark classes {i} and {j} share identical backgrounds; \
                     a single fixed background supports only one watermark class"
                )));
            }
        }
    }
    let dims = wild_backgrounds[0].dims();
    if trigger_backgrounds
        .iter()
        .flatten()
        .chain(wild_backgrounds)
        .any(|b| b.dims() != dims)
    {
        return Err(Error::InvalidParameter("background extents differ".into()));
    }
    let quantize = |pool: &[Image]| pool.iter().map(Image::quantized).collect::<Vec<_>>();
    let triggers: Vec<Vec<Image>> = trigger_backgrounds.iter().map(|p| quantize(p)).collect();
    let wild = quantize(wild_backgrounds);

    let mut rng = seed::derive_rng(cfg.seed, "poison", 0);
    let mut samples = Vec::with_capacity(cfg.n_trigger + cfg.n_wild);
    for j in 0..cfg.n_trigger {
        let class = j % w;
        let pool = &triggers[class];
        let bg = &pool[rng.gen_range(0..pool.len())];
        let mut s = shaped(&mut rng, bg);
        s.label = class;
        samples.push(s);
    }
    for _ in 0..cfg.n_wild {
        let bg = &wild[rng.gen_range(0..wild.len())];
        let mut s = if rng.gen_bool(cfg.wild_foreground.clamp(0.0, 1.0)) {
            shaped(&mut rng, bg)
        } else {
            LabeledSample {
                image: bg.clone(),
                label: 0,
                mask: None,
            }
        };
        s.label = w;
        samples.push(s);
    }
    Dataset::new(
        samples,
        w + 1,
        Split::Train,
        Provenance {
            generator: "poison".into(),
            seed: cfg.seed,
            params: serde_json::json!({
                "watermark_classes": w,
                "n_trigger": cfg.n_trigger,
                "n_wild": cfg.n_wild,
                "wild_foreground": cfg.wild_foreground,
            }),
        },
    )
}
