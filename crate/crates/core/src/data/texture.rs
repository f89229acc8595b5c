//! Procedural background textures.
//!
//! Benign ("wild") backgrounds and watermark trigger backgrounds come from
//! disjoint colour regions: benign hues live in [`BENIGN_HUE`] with muted
//! saturation, triggers in [`TRIGGER_HUE`] with strong saturation, and the
//! trigger zone is split into one band per watermark class.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::image::Image;
use crate::seed;

pub type Rgb = [f32; 3];

pub const BENIGN_HUE: (f64, f64) = (0.0, 0.45);
pub const BENIGN_SAT: (f64, f64) = (0.1, 0.6);
pub const TRIGGER_HUE: (f64, f64) = (0.55, 0.95);
pub const TRIGGER_SAT: (f64, f64) = (0.65, 1.0);
pub const BENIGN_STRIPE_FREQ: (f64, f64) = (1.0, 3.0);
pub const TRIGGER_STRIPE_FREQ: (f64, f64) = (4.0, 7.0);

/// One plane wave of a [`TextureFamily::WaveMix`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    /// Degrees.
    pub angle: f64,
    /// Cycles per image height.
    pub frequency: f64,
    /// Fraction of a period.
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TextureFamily {
    Solid,
    LinearGradient {
        angle: f64,
    },
    Stripes {
        angle: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
    ValueNoise {
        /// Lattice spacing in pixels.
        scale: f64,
    },
    /// Sum of three plane waves; the target family of the generated trigger
    /// strategy.
    WaveMix {
        waves: [Wave; 3],
        contrast: f64,
    },
}

impl TextureFamily {
    pub fn name(&self) -> &'static str {
        match self {
            TextureFamily::Solid => "solid",
            TextureFamily::LinearGradient { .. } => "linear_gradient",
            TextureFamily::Stripes { .. } => "stripes",
            TextureFamily::ValueNoise { .. } => "value_noise",
            TextureFamily::WaveMix { .. } => "wave_mix",
        }
    }
}

/// A fully specified texture; rendering is a pure function of this value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureSpec {
    #[serde(flatten)]
    pub family: TextureFamily,
    pub primary: Rgb,
    pub secondary: Rgb,
    #[serde(default)]
    pub seed: u64,
}

impl TextureSpec {
    pub fn solid(rgb: Rgb) -> Self {
        TextureSpec {
            family: TextureFamily::Solid,
            primary: rgb,
            secondary: rgb,
            seed: 0,
        }
    }
}

fn lerp(a: Rgb, b: Rgb, t: f32) -> Rgb {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

/// Render `spec` at `h × w`. Output is not quantized.
pub fn render_texture(spec: &TextureSpec, h: usize, w: usize) -> Image {
    let (a, b) = (spec.primary, spec.secondary);
    let hf = h as f64;
    let proj = |y: usize, x: usize, angle: f64| {
        let (s, c) = angle.to_radians().sin_cos();
        (y as f64 * c + x as f64 * s) / hf
    };
    match &spec.family {
        TextureFamily::Solid => Image::filled(h, w, a),
        TextureFamily::LinearGradient { angle } => {
            let (s, c) = angle.to_radians().sin_cos();
            let corners = [(0.0, 0.0), (0.0, w as f64 - 1.0), (hf - 1.0, 0.0), (hf - 1.0, w as f64 - 1.0)];
            let vals: Vec<f64> = corners.iter().map(|(y, x)| y * c + x * s).collect();
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let span = if hi > lo { hi - lo } else { 1.0 };
            Image::from_fn(h, w, |y, x| {
                let t = ((y as f64 * c + x as f64 * s) - lo) / span;
                lerp(a, b, t as f32)
            })
        }
        TextureFamily::Stripes {
            angle,
            frequency,
            phase,
        } => Image::from_fn(h, w, |y, x| {
            let u = proj(y, x, *angle) * frequency + phase;
            if u.rem_euclid(1.0) < 0.5 {
                a
            } else {
                b
            }
        }),
        TextureFamily::ValueNoise { scale } => {
            let scale = scale.max(1.0);
            let gh = (hf / scale).ceil() as usize + 2;
            let gw = (w as f64 / scale).ceil() as usize + 2;
            let mut rng = seed::derive_rng(spec.seed, "value_noise", 0);
            let lattice: Vec<f64> = (0..gh * gw).map(|_| rng.gen::<f64>()).collect();
            let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
            Image::from_fn(h, w, |y, x| {
                let (fy, fx) = (y as f64 / scale, x as f64 / scale);
                let (iy, ix) = (fy.floor() as usize, fx.floor() as usize);
                let (ty, tx) = (smooth(fy - iy as f64), smooth(fx - ix as f64));
                let at = |yy: usize, xx: usize| lattice[yy * gw + xx];
                let top = at(iy, ix) * (1.0 - tx) + at(iy, ix + 1) * tx;
                let bottom = at(iy + 1, ix) * (1.0 - tx) + at(iy + 1, ix + 1) * tx;
                lerp(a, b, (top * (1.0 - ty) + bottom * ty) as f32)
            })
        }
        TextureFamily::WaveMix { waves, contrast } => Image::from_fn(h, w, |y, x| {
            let mut v = 0.0;
            for wave in waves {
                let u = proj(y, x, wave.angle) * wave.frequency + wave.phase;
                v += (std::f64::consts::TAU * u).sin();
            }
            let t = 0.5 + 0.5 * contrast * v / 3.0;
            lerp(a, b, t as f32)
        }),
    }
}

/// HSV (all components in `[0, 1]`) to RGB.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> Rgb {
    let h = h.rem_euclid(1.0) * 6.0;
    let i = h.floor();
    let f = h - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    let (r, g, b) = match i as u32 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [r as f32, g as f32, b as f32]
}

/// Hue and saturation of an RGB colour.
pub fn rgb_hue_sat(c: Rgb) -> (f64, f64) {
    let (r, g, b) = (c[0] as f64, c[1] as f64, c[2] as f64);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let s = if max > 0.0 { d / max } else { 0.0 };
    if d == 0.0 {
        return (0.0, s);
    }
    let h = if max == r {
        ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        (b - r) / d + 2.0
    } else {
        (r - g) / d + 4.0
    };
    (h / 6.0, s)
}

/// Texture families available to the benign background sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenignFamily {
    Solid,
    LinearGradient,
    Stripes,
    ValueNoise,
}

impl BenignFamily {
    pub const ALL: [BenignFamily; 4] = [
        BenignFamily::Solid,
        BenignFamily::LinearGradient,
        BenignFamily::Stripes,
        BenignFamily::ValueNoise,
    ];
}

fn range(rng: &mut seed::Rng, (lo, hi): (f64, f64)) -> f64 {
    rng.gen_range(lo..hi)
}

fn benign_color(rng: &mut seed::Rng) -> Rgb {
    hsv_to_rgb(
        range(rng, BENIGN_HUE),
        range(rng, BENIGN_SAT),
        rng.gen_range(0.3..0.9),
    )
}

/// Draw a wild background spec outside every trigger region.
pub fn sample_benign_spec(rng: &mut seed::Rng, families: &[BenignFamily]) -> TextureSpec {
    let family = families[rng.gen_range(0..families.len())];
    let primary = benign_color(rng);
    let secondary = benign_color(rng);
    let family = match family {
        BenignFamily::Solid => TextureFamily::Solid,
        BenignFamily::LinearGradient => TextureFamily::LinearGradient {
            angle: rng.gen_range(0.0..360.0),
        },
        BenignFamily::Stripes => TextureFamily::Stripes {
            angle: rng.gen_range(0.0..180.0),
            frequency: range(rng, BENIGN_STRIPE_FREQ),
            phase: rng.gen(),
        },
        BenignFamily::ValueNoise => TextureFamily::ValueNoise {
            scale: rng.gen_range(4.0..16.0),
        },
    };
    TextureSpec {
        family,
        primary,
        secondary,
        seed: rng.gen(),
    }
}

/// Hue interval reserved for watermark class `class` out of `classes`.
/// Adjacent bands are separated by a gap of 30% of the band width.
pub fn trigger_hue_band(class: usize, classes: usize) -> (f64, f64) {
    let width = (TRIGGER_HUE.1 - TRIGGER_HUE.0) / classes as f64;
    let lo = TRIGGER_HUE.0 + class as f64 * width;
    (lo + 0.15 * width, lo + 0.85 * width)
}

/// Draw a striped trigger texture from the region of watermark `class`.
pub fn sample_trigger_spec(rng: &mut seed::Rng, class: usize, classes: usize) -> TextureSpec {
    let band = trigger_hue_band(class, classes);
    let dark = hsv_to_rgb(range(rng, band), range(rng, TRIGGER_SAT), rng.gen_range(0.45..0.7));
    let light = hsv_to_rgb(range(rng, band), range(rng, TRIGGER_SAT), rng.gen_range(0.8..1.0));
    TextureSpec {
        family: TextureFamily::Stripes {
            angle: rng.gen_range(0.0..180.0),
            frequency: range(rng, TRIGGER_STRIPE_FREQ),
            phase: rng.gen(),
        },
        primary: dark,
        secondary: light,
        seed: rng.gen(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solid_fills_every_pixel() {
        let img = render_texture(&TextureSpec::solid([0.2, 0.4, 0.6]), 8, 8);
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(img.pixel(y, x), [0.2, 0.4, 0.6]);
            }
        }
    }

    #[test]
    fn horizontal_stripes_have_period_h_over_f() {
        let (a, b) = ([1.0, 0.0, 0.0], [0.0, 0.0, 1.0]);
        let spec = TextureSpec {
            family: TextureFamily::Stripes {
                angle: 0.0,
                frequency: 4.0,
                phase: 0.0,
            },
            primary: a,
            secondary: b,
            seed: 0,
        };
        let img = render_texture(&spec, 32, 32);
        // analytic: row y is colour a iff frac(4y/32) < 1/2
        for y in 0..32 {
            let want = if (y as f64 * 4.0 / 32.0).fract() < 0.5 { a } else { b };
            for x in 0..32 {
                assert_eq!(img.pixel(y, x), want);
            }
        }
        let switches: Vec<usize> = (1..32).filter(|&y| img.pixel(y, 0) != img.pixel(y - 1, 0)).collect();
        for pair in switches.windows(2) {
            let half = pair[1] - pair[0];
            assert!((half as i64 * 2 - 8).abs() <= 1, "period {}", half * 2);
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let mut rng = seed::rng(5);
        for _ in 0..10 {
            let spec = sample_benign_spec(&mut rng, &BenignFamily::ALL);
            assert_eq!(render_texture(&spec, 16, 16), render_texture(&spec, 16, 16));
        }
    }

    #[test]
    fn wave_mix_stays_in_unit_range() {
        let spec = TextureSpec {
            family: TextureFamily::WaveMix {
                waves: [Wave { angle: 10.0, frequency: 5.0, phase: 0.1 }; 3],
                contrast: 1.0,
            },
            primary: [0.0; 3],
            secondary: [1.0; 3],
            seed: 0,
        };
        let img = render_texture(&spec, 16, 16);
        assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn hsv_round_trip_hue() {
        for h in [0.05, 0.3, 0.6, 0.9] {
            let (hh, s) = rgb_hue_sat(hsv_to_rgb(h, 0.8, 0.7));
            assert!((hh - h).abs() < 1e-6 && (s - 0.8).abs() < 1e-6);
        }
    }

    #[test]
    fn benign_and_trigger_hues_are_disjoint() {
        let mut rng = seed::rng(9);
        for _ in 0..200 {
            let b = sample_benign_spec(&mut rng, &BenignFamily::ALL);
            for c in [b.primary, b.secondary] {
                let (h, s) = rgb_hue_sat(c);
                assert!(s < 0.61);
                assert!(h < BENIGN_HUE.1 + 1e-6 || s < 1e-6);
            }
            let t = sample_trigger_spec(&mut rng, 1, 3);
            let band = trigger_hue_band(1, 3);
            for c in [t.primary, t.secondary] {
                let (h, s) = rgb_hue_sat(c);
                assert!(h >= band.0 - 1e-6 && h <= band.1 + 1e-6 && s >= 0.64);
            }
        }
    }

    #[test]
    fn trigger_bands_do_not_overlap() {
        for w in 1..6 {
            for i in 1..w {
                assert!(trigger_hue_band(i - 1, w).1 < trigger_hue_band(i, w).0);
            }
        }
    }
}
