//! Trigger backgrounds, the owner's verification key, and verification sets.
//!
//! Three strategies produce the background that turns a benign image into a
//! verification sample:
//!
//! * **fixed**: one texture shared by every sample (one watermark class);
//! * **search**: each watermark class owns a pool of `K` textures and a
//!   sample's background is picked from its class pool by hashing a seed;
//! * **generated**: a noise vector `z` is pushed through a fixed, full-rank
//!   affine map followed by a per-coordinate bounded squash into the class's
//!   texture-parameter region, then rendered.
//!
//! Every watermark class owns a disjoint hue band inside the trigger zone,
//! which wild backgrounds never enter.

use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::texture::{
    self, hsv_to_rgb, render_texture, trigger_hue_band, TextureFamily, TextureSpec, Wave,
    TRIGGER_SAT, TRIGGER_STRIPE_FREQ,
};
use crate::data::{composite, Dataset, LabeledSample, Provenance};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::seed;

pub const NOISE_DIM: usize = 16;
pub const DEFAULT_POOL: usize = 32;
pub const DEFAULT_BETA: f64 = 0.4;
/// Minimum mean per-pixel RGB distance between a fixed trigger and any
/// benign background of the reference dataset.
pub const FIXED_MIN_DISTANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Fixed,
    Search,
    Generated,
}

impl StrategyKind {
    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Fixed => "fixed",
            StrategyKind::Search => "search",
            StrategyKind::Generated => "generated",
        }
    }
}

/// Injective map from noise to texture parameters of one watermark class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineGenerator {
    /// Row-major `NOISE_DIM × NOISE_DIM`, strictly diagonally dominant.
    pub matrix: Vec<f64>,
    /// Per class, per parameter `(lo, hi)` bounds.
    pub regions: Vec<Vec<(f64, f64)>>,
}

impl AffineGenerator {
    fn new(rng: &mut seed::Rng, classes: usize) -> Self {
        let mut matrix = vec![0.0; NOISE_DIM * NOISE_DIM];
        for r in 0..NOISE_DIM {
            for c in 0..NOISE_DIM {
                matrix[r * NOISE_DIM + c] = if r == c {
                    0.8
                } else {
                    rng.gen_range(-0.04..0.04)
                };
            }
        }
        let regions = (0..classes)
            .map(|class| {
                let band = trigger_hue_band(class, classes);
                let mut region = vec![
                    band,
                    TRIGGER_SAT,
                    (0.45, 0.7),
                    band,
                    TRIGGER_SAT,
                    (0.8, 1.0),
                ];
                for _ in 0..3 {
                    region.extend([(0.0, 180.0), TRIGGER_STRIPE_FREQ, (0.0, 1.0)]);
                }
                region.push((0.6, 1.0));
                region
            })
            .collect();
        AffineGenerator { matrix, regions }
    }

    /// Texture parameters for noise `z` in the region of `class`.
    pub fn params(&self, z: &NoiseVector, class: usize) -> Result<[f64; NOISE_DIM]> {
        let region = self.regions.get(class).ok_or_else(|| {
            Error::InvalidParameter(format!("watermark class {class} has no generator region"))
        })?;
        let mut out = [0.0; NOISE_DIM];
        for (r, o) in out.iter_mut().enumerate() {
            let u: f64 = (0..NOISE_DIM)
                .map(|c| self.matrix[r * NOISE_DIM + c] * z.0[c])
                .sum();
            let (lo, hi) = region[r];
            *o = lo + (hi - lo) * 0.5 * (1.0 + u.tanh());
        }
        Ok(out)
    }

    pub fn spec(&self, z: &NoiseVector, class: usize) -> Result<TextureSpec> {
        let p = self.params(z, class)?;
        let wave = |i: usize| Wave {
            angle: p[6 + 3 * i],
            frequency: p[7 + 3 * i],
            phase: p[8 + 3 * i],
        };
        Ok(TextureSpec {
            family: TextureFamily::WaveMix {
                waves: [wave(0), wave(1), wave(2)],
                contrast: p[15],
            },
            primary: hsv_to_rgb(p[0], p[1], p[2]),
            secondary: hsv_to_rgb(p[3], p[4], p[5]),
            seed: 0,
        })
    }
}

/// Standard-normal noise of length [`NOISE_DIM`].
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseVector(pub [f64; NOISE_DIM]);

impl NoiseVector {
    pub fn zero() -> Self {
        NoiseVector([0.0; NOISE_DIM])
    }

    pub fn sample(rng: &mut seed::Rng) -> Self {
        let mut z = [0.0; NOISE_DIM];
        for v in &mut z {
            *v = StandardNormal.sample(rng);
        }
        NoiseVector(z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum Strategy {
    Fixed { background: TextureSpec },
    Search { pools: Vec<Vec<TextureSpec>> },
    Generated { generator: AffineGenerator },
}

impl Strategy {
    pub fn kind(&self) -> StrategyKind {
        match self {
            Strategy::Fixed { .. } => StrategyKind::Fixed,
            Strategy::Search { .. } => StrategyKind::Search,
            Strategy::Generated { .. } => StrategyKind::Generated,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BlendMode {
    /// Swap the background under the foreground mask.
    Replace,
    /// `(1 − beta) · image + beta · background`.
    Alpha { beta: f64 },
}

/// The owner's secret: enough to regenerate every verification sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationKey {
    #[serde(flatten)]
    pub strategy: Strategy,
    /// Target label for each watermark class.
    pub mapping: Vec<usize>,
    pub alpha: f64,
    pub seed: u64,
    pub blend: BlendMode,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyConfig {
    pub strategy: StrategyKind,
    /// Watermark classes; forced to 1 for the fixed strategy.
    #[serde(default = "default_w")]
    pub watermark_classes: usize,
    #[serde(default = "default_pool")]
    pub pool_size: usize,
    /// Defaults to `0..w`.
    #[serde(default)]
    pub mapping: Option<Vec<usize>>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_blend")]
    pub blend: BlendMode,
    #[serde(default = "default_side")]
    pub height: usize,
    #[serde(default = "default_side")]
    pub width: usize,
    pub seed: u64,
}

fn default_w() -> usize {
    3
}
fn default_pool() -> usize {
    DEFAULT_POOL
}
fn default_alpha() -> f64 {
    1.0
}
fn default_blend() -> BlendMode {
    BlendMode::Replace
}
fn default_side() -> usize {
    32
}

impl KeyConfig {
    pub fn new(strategy: StrategyKind, seed: u64) -> Self {
        KeyConfig {
            strategy,
            watermark_classes: if strategy == StrategyKind::Fixed { 1 } else { 3 },
            pool_size: DEFAULT_POOL,
            mapping: None,
            alpha: 1.0,
            blend: BlendMode::Replace,
            height: 32,
            width: 32,
            seed,
        }
    }
}

fn check_mapping(mapping: &[usize]) -> Result<()> {
    if mapping.is_empty() {
        return Err(Error::InvalidMapping("no watermark classes".into()));
    }
    for (i, m) in mapping.iter().enumerate() {
        if mapping[..i].contains(m) {
            return Err(Error::InvalidMapping(format!("label {m} assigned twice")));
        }
    }
    Ok(())
}

/// Create a key.
///
/// With `reference` (the provenance of the protected model's data), a fixed
/// background is redrawn until its mean per-pixel distance to every benign
/// background in that dataset is at least [`FIXED_MIN_DISTANCE`].
pub fn make_key(cfg: &KeyConfig, reference: Option<&Provenance>) -> Result<VerificationKey> {
    let w = match cfg.strategy {
        StrategyKind::Fixed => 1,
        _ => cfg.watermark_classes,
    };
    if w == 0 {
        return Err(Error::InvalidParameter("at least one watermark class".into()));
    }
    if !(cfg.alpha > 0.0 && cfg.alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!("alpha must be positive, got {}", cfg.alpha)));
    }
    if let BlendMode::Alpha { beta } = cfg.blend {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::InvalidParameter(format!("beta {beta} outside [0, 1]")));
        }
    }
    let mapping = cfg.mapping.clone().unwrap_or_else(|| (0..w).collect());
    if mapping.len() != w {
        return Err(Error::InvalidMapping(format!(
            "{} mapping entries for {w} watermark classes",
            mapping.len()
        )));
    }
    check_mapping(&mapping)?;
    let mut rng = seed::derive_rng(cfg.seed, "key", 0);
    let strategy = match cfg.strategy {
        StrategyKind::Fixed => {
            let benign: Vec<Image> = match reference {
                Some(p) => crate::data::benign_background_specs(p, usize::MAX)?
                    .iter()
                    .map(|s| render_texture(s, cfg.height, cfg.width))
                    .collect(),
                None => Vec::new(),
            };
            let mut attempts = 0;
            loop {
                let spec = texture::sample_trigger_spec(&mut rng, 0, 1);
                let img = render_texture(&spec, cfg.height, cfg.width);
                if benign.iter().all(|b| img.mean_pixel_distance(b) >= FIXED_MIN_DISTANCE) {
                    break Strategy::Fixed { background: spec };
                }
                attempts += 1;
                if attempts > 100 {
                    return Err(Error::InvalidParameter(
                        "no fixed trigger separated from the benign backgrounds".into(),
                    ));
                }
            }
        }
        StrategyKind::Search => {
            if cfg.pool_size == 0 {
                return Err(Error::Empty("search pool"));
            }
            Strategy::Search {
                pools: (0..w)
                    .map(|c| {
                        (0..cfg.pool_size)
                            .map(|_| texture::sample_trigger_spec(&mut rng, c, w))
                            .collect()
                    })
                    .collect(),
            }
        }
        StrategyKind::Generated => Strategy::Generated {
            generator: AffineGenerator::new(&mut rng, w),
        },
    };
    Ok(VerificationKey {
        strategy,
        mapping,
        alpha: cfg.alpha,
        seed: cfg.seed,
        blend: cfg.blend,
        height: cfg.height,
        width: cfg.width,
    })
}

impl VerificationKey {
    pub fn watermark_classes(&self) -> usize {
        self.mapping.len()
    }

    pub fn kind(&self) -> StrategyKind {
        self.strategy.kind()
    }

    fn wrong(&self, expected: StrategyKind) -> Error {
        Error::WrongStrategy {
            expected: expected.name(),
            actual: self.kind().name(),
        }
    }

    fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.watermark_classes() {
            return Err(Error::InvalidParameter(format!(
                "watermark class {class} >= {}",
                self.watermark_classes()
            )));
        }
        Ok(())
    }

    /// Canonical JSON serialization.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// SHA-256 of the canonical serialization; names the key in reports.
    pub fn hash(&self) -> String {
        seed::sha256_hex(self.to_json().expect("key serializes").as_bytes())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let key: VerificationKey = serde_json::from_str(&text)?;
        check_mapping(&key.mapping)?;
        if let Strategy::Search { pools } = &key.strategy {
            if pools.len() != key.mapping.len() || pools.iter().any(|p| p.is_empty()) {
                return Err(Error::Empty("search pool"));
            }
        }
        Ok(key)
    }

    pub fn fixed_background(&self) -> Result<Image> {
        match &self.strategy {
            Strategy::Fixed { background } => Ok(render_texture(background, self.height, self.width)),
            _ => Err(self.wrong(StrategyKind::Fixed)),
        }
    }

    /// Pool index picked for `(class, sample_seed)`.
    pub fn search_index(&self, class: usize, sample_seed: u64) -> Result<usize> {
        match &self.strategy {
            Strategy::Search { pools } => {
                self.check_class(class)?;
                let pool = &pools[class];
                if pool.is_empty() {
                    return Err(Error::Empty("search pool"));
                }
                Ok((seed::derive(sample_seed, "search", class as u64) % pool.len() as u64) as usize)
            }
            _ => Err(self.wrong(StrategyKind::Search)),
        }
    }

    pub fn search_background(&self, class: usize, sample_seed: u64) -> Result<Image> {
        let idx = self.search_index(class, sample_seed)?;
        match &self.strategy {
            Strategy::Search { pools } => Ok(render_texture(&pools[class][idx], self.height, self.width)),
            _ => unreachable!(),
        }
    }

    pub fn generate_background(&self, z: &NoiseVector, class: usize) -> Result<Image> {
        match &self.strategy {
            Strategy::Generated { generator } => {
                self.check_class(class)?;
                Ok(render_texture(&generator.spec(z, class)?, self.height, self.width))
            }
            _ => Err(self.wrong(StrategyKind::Generated)),
        }
    }

    /// Background for draw `index` of watermark `class` under stream `seed`.
    pub fn background_for(&self, class: usize, stream: u64, index: u64) -> Result<Image> {
        match self.kind() {
            StrategyKind::Fixed => self.fixed_background(),
            StrategyKind::Search => self.search_background(class, seed::derive(stream, "draw", index)),
            StrategyKind::Generated => {
                let z = NoiseVector::sample(&mut seed::derive_rng(stream, "noise", index));
                self.generate_background(&z, class)
            }
        }
    }

    /// Trigger backgrounds per watermark class for training a watermark
    /// network: whole pools for search, fresh generator draws otherwise.
    pub fn training_backgrounds(&self, per_class: usize, stream: u64) -> Result<Vec<Vec<Image>>> {
        (0..self.watermark_classes())
            .map(|class| match &self.strategy {
                Strategy::Fixed { .. } => Ok(vec![self.fixed_background()?]),
                Strategy::Search { pools } => Ok(pools[class]
                    .iter()
                    .map(|s| render_texture(s, self.height, self.width))
                    .collect()),
                Strategy::Generated { .. } => (0..per_class)
                    .map(|i| self.background_for(class, seed::derive(stream, "train-bg", class as u64), i as u64))
                    .collect(),
            })
            .collect()
    }
}

/// Blend `background` into `sample` according to the key's blend mode.
pub fn blend_trigger(sample: &LabeledSample, background: &Image, key: &VerificationKey) -> Result<Image> {
    blend_with(sample, background, key.blend)
}

pub fn blend_with(sample: &LabeledSample, background: &Image, mode: BlendMode) -> Result<Image> {
    if sample.image.dims() != background.dims() {
        let (h, w) = sample.image.dims();
        let (bh, bw) = background.dims();
        return Err(Error::shape(&[h, w], &[bh, bw]));
    }
    match mode {
        BlendMode::Replace => {
            let mask = sample.mask.as_ref().ok_or(Error::MissingMask)?;
            composite(&sample.image, mask, background)
        }
        BlendMode::Alpha { beta } => {
            let (h, w) = sample.image.dims();
            let b = beta as f32;
            Ok(Image::from_fn(h, w, |y, x| {
                let (p, q) = (sample.image.pixel(y, x), background.pixel(y, x));
                [0, 1, 2].map(|c| (1.0 - b) * p[c] + b * q[c])
            }))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationItem {
    pub image: Image,
    pub desired: usize,
    pub watermark_class: usize,
    /// Index of the benign source sample.
    pub source: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationSet {
    pub items: Vec<VerificationItem>,
    pub key_hash: String,
    pub seed: u64,
}

impl VerificationSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn images(&self) -> Vec<&Image> {
        self.items.iter().map(|i| &i.image).collect()
    }

    pub fn content_hash(&self) -> String {
        let mut bytes = self.key_hash.as_bytes().to_vec();
        bytes.extend(self.seed.to_le_bytes());
        for item in &self.items {
            bytes.extend((item.desired as u64).to_le_bytes());
            bytes.extend(item.image.content_bytes());
        }
        seed::sha256_hex(&bytes)
    }
}

/// Draw `n` verification samples from `benign`.
///
/// Watermark classes are assigned round-robin. The source image of each draw
/// is a benign sample whose own label differs from the desired label, so a
/// hit can only come from the trigger.
pub fn make_verification_set(
    benign: &Dataset,
    key: &VerificationKey,
    n: usize,
    seed_value: u64,
) -> Result<VerificationSet> {
    if n == 0 {
        return Err(Error::InvalidParameter("verification set size 0".into()));
    }
    if benign.is_empty() {
        return Err(Error::Empty("benign pool"));
    }
    let w = key.watermark_classes();
    let mut rng = seed::derive_rng(seed_value, "verification", 0);
    let mut items = Vec::with_capacity(n);
    for j in 0..n {
        let class = j % w;
        let desired = key.mapping[class];
        let candidates = benign.samples.iter().filter(|s| s.label != desired).count();
        if candidates == 0 {
            return Err(Error::Empty("benign samples with a label other than the desired one"));
        }
        let source = loop {
            let i = rng.gen_range(0..benign.len());
            if benign.samples[i].label != desired {
                break i;
            }
        };
        let background = key.background_for(class, seed_value, j as u64)?;
        let image = blend_trigger(&benign.samples[source], &background, key)?.quantized();
        items.push(VerificationItem {
            image,
            desired,
            watermark_class: class,
            source,
        });
    }
    Ok(VerificationSet {
        items,
        key_hash: key.hash(),
        seed: seed_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_shapescape, ShapeScapeConfig};
    use crate::image::Mask;

    fn benign() -> Dataset {
        let cfg = ShapeScapeConfig {
            n_train: 48,
            n_test: 0,
            ..Default::default()
        };
        gen_shapescape(&cfg, 21).unwrap().0
    }

    #[test]
    fn fixed_is_stable_and_wrong_strategy_rejected() {
        let key = make_key(&KeyConfig::new(StrategyKind::Fixed, 1), None).unwrap();
        assert_eq!(key.watermark_classes(), 1);
        assert_eq!(key.fixed_background().unwrap(), key.fixed_background().unwrap());
        assert!(matches!(key.search_background(0, 1), Err(Error::WrongStrategy { .. })));
        assert!(matches!(
            key.generate_background(&NoiseVector::zero(), 0),
            Err(Error::WrongStrategy { .. })
        ));
    }

    #[test]
    fn solid_gray_fixed_background() {
        let mut key = make_key(&KeyConfig::new(StrategyKind::Fixed, 1), None).unwrap();
        key.strategy = Strategy::Fixed {
            background: TextureSpec::solid([0.5; 3]),
        };
        let img = key.fixed_background().unwrap();
        assert!(img.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn fixed_background_far_from_benign_backgrounds() {
        let ds = benign();
        let key = make_key(&KeyConfig::new(StrategyKind::Fixed, 4), Some(&ds.provenance)).unwrap();
        let c = key.fixed_background().unwrap();
        for spec in crate::data::benign_background_specs(&ds.provenance, usize::MAX).unwrap() {
            assert!(c.mean_pixel_distance(&render_texture(&spec, 32, 32)) >= FIXED_MIN_DISTANCE);
        }
    }

    #[test]
    fn search_is_deterministic() {
        let key = make_key(&KeyConfig::new(StrategyKind::Search, 2), None).unwrap();
        assert_eq!(key.search_background(1, 77).unwrap(), key.search_background(1, 77).unwrap());
        assert!(key.search_background(3, 0).is_err());
    }

    #[test]
    fn search_single_element_pool() {
        let mut cfg = KeyConfig::new(StrategyKind::Search, 2);
        cfg.pool_size = 1;
        let key = make_key(&cfg, None).unwrap();
        for s in 0..20 {
            assert_eq!(key.search_index(0, s).unwrap(), 0);
        }
    }

    #[test]
    fn search_hash_covers_the_pool() {
        let key = make_key(&KeyConfig::new(StrategyKind::Search, 3), None).unwrap();
        let mut seen = [false; DEFAULT_POOL];
        for s in 0..1000 {
            seen[key.search_index(2, s).unwrap()] = true;
        }
        assert!(seen.iter().all(|&b| b));
    }

    #[test]
    fn search_pools_occupy_disjoint_hue_bands() {
        let key = make_key(&KeyConfig::new(StrategyKind::Search, 5), None).unwrap();
        let Strategy::Search { pools } = &key.strategy else { unreachable!() };
        let ranges: Vec<(f64, f64)> = pools
            .iter()
            .map(|pool| {
                let hues: Vec<f64> = pool
                    .iter()
                    .flat_map(|s| [s.primary, s.secondary])
                    .map(|c| texture::rgb_hue_sat(c).0)
                    .collect();
                (
                    hues.iter().cloned().fold(f64::INFINITY, f64::min),
                    hues.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                )
            })
            .collect();
        for i in 0..ranges.len() {
            for j in i + 1..ranges.len() {
                assert!(ranges[i].1 < ranges[j].0 || ranges[j].1 < ranges[i].0);
            }
        }
    }

    #[test]
    fn generator_zero_noise_is_region_centre() {
        let key = make_key(&KeyConfig::new(StrategyKind::Generated, 8), None).unwrap();
        let Strategy::Generated { generator } = &key.strategy else { unreachable!() };
        let p = generator.params(&NoiseVector::zero(), 1).unwrap();
        for (v, (lo, hi)) in p.iter().zip(&generator.regions[1]) {
            assert!((v - (lo + hi) / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn generator_is_injective_on_samples() {
        let key = make_key(&KeyConfig::new(StrategyKind::Generated, 8), None).unwrap();
        let Strategy::Generated { generator } = &key.strategy else { unreachable!() };
        let mut rng = seed::rng(0);
        let a = NoiseVector::sample(&mut rng);
        let b = NoiseVector::sample(&mut rng);
        assert_ne!(generator.params(&a, 0).unwrap(), generator.params(&b, 0).unwrap());
        // diagonal dominance: |a_ii| > sum |a_ij|
        for r in 0..NOISE_DIM {
            let off: f64 = (0..NOISE_DIM)
                .filter(|&c| c != r)
                .map(|c| generator.matrix[r * NOISE_DIM + c].abs())
                .sum();
            assert!(generator.matrix[r * NOISE_DIM + r].abs() > off);
        }
    }

    #[test]
    fn blend_modes() {
        let ds = benign();
        let s = &ds.samples[0];
        let bg = Image::filled(32, 32, [0.1, 0.9, 0.4]);
        let mut empty = s.clone();
        empty.mask = Some(Mask::filled(32, 32, 0.0));
        assert_eq!(blend_with(&empty, &bg, BlendMode::Replace).unwrap(), bg);
        assert_eq!(blend_with(s, &bg, BlendMode::Alpha { beta: 0.0 }).unwrap(), s.image);
        assert_eq!(blend_with(s, &bg, BlendMode::Alpha { beta: 1.0 }).unwrap(), bg);
        let mut bare = s.clone();
        bare.mask = None;
        assert!(matches!(blend_with(&bare, &bg, BlendMode::Replace), Err(Error::MissingMask)));
        let replaced = blend_with(s, &bg, BlendMode::Replace).unwrap();
        let mask = s.mask.as_ref().unwrap();
        for y in 0..32 {
            for x in 0..32 {
                if mask.get(y, x) == 1.0 {
                    assert_eq!(replaced.pixel(y, x), s.image.pixel(y, x));
                }
            }
        }
    }

    #[test]
    fn verification_set_round_robin_and_deterministic() {
        let ds = benign();
        let key = make_key(&KeyConfig::new(StrategyKind::Search, 9), None).unwrap();
        let vs = make_verification_set(&ds, &key, 100, 4).unwrap();
        let mut counts = [0; 3];
        for item in &vs.items {
            counts[item.watermark_class] += 1;
            assert_eq!(item.desired, key.mapping[item.watermark_class]);
            assert_ne!(ds.samples[item.source].label, item.desired);
            let changed = item.image.differing_pixels(&ds.samples[item.source].image);
            assert!(changed as f64 >= 0.3 * 1024.0, "{changed}");
        }
        assert_eq!(counts, [34, 33, 33]);
        let again = make_verification_set(&ds, &key, 100, 4).unwrap();
        assert_eq!(vs.content_hash(), again.content_hash());
    }

    #[test]
    fn key_file_round_trip() {
        let key = make_key(&KeyConfig::new(StrategyKind::Generated, 3), None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("key.json");
        key.save(&path).unwrap();
        let back = VerificationKey::load(&path).unwrap();
        assert_eq!(back.hash(), key.hash());
    }

    #[test]
    fn duplicate_mapping_rejected() {
        let mut cfg = KeyConfig::new(StrategyKind::Search, 1);
        cfg.mapping = Some(vec![2, 2, 1]);
        assert!(matches!(make_key(&cfg, None), Err(Error::InvalidMapping(_))));
    }
}
