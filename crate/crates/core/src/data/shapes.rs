use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::texture::{hsv_to_rgb, Rgb};
use crate::image::{Image, Mask};
use crate::seed;

/// Foreground shape vocabulary; the class index is the position in [`Shape::ALL`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Disk,
    Square,
    Triangle,
    Ring,
    PlusCross,
    XCross,
    HBars,
    CheckerPatch,
}

pub const MIN_COVERAGE: f64 = 0.05;
pub const MAX_COVERAGE: f64 = 0.50;

impl Shape {
    pub const ALL: [Shape; 8] = [
        Shape::Disk,
        Shape::Square,
        Shape::Triangle,
        Shape::Ring,
        Shape::PlusCross,
        Shape::XCross,
        Shape::HBars,
        Shape::CheckerPatch,
    ];

    /// Membership test in box coordinates `u, v ∈ [-1, 1]`.
    pub fn contains(self, u: f64, v: f64) -> bool {
        match self {
            Shape::Disk => u * u + v * v <= 1.0,
            Shape::Square => u.abs() <= 0.85 && v.abs() <= 0.85,
            Shape::Triangle => (-1.0..=0.9).contains(&v) && u.abs() <= (v + 1.0) / 1.9,
            Shape::Ring => {
                let r2 = u * u + v * v;
                (0.36..=1.0).contains(&r2)
            }
            Shape::PlusCross => u.abs() <= 0.3 || v.abs() <= 0.3,
            Shape::XCross => (u - v).abs() <= 0.42 || (u + v).abs() <= 0.42,
            Shape::HBars => ((v + 1.0) * 2.5).rem_euclid(2.0) < 1.0,
            Shape::CheckerPatch => {
                let a = ((u + 1.0) * 2.0).floor().min(3.0) as i32;
                let b = ((v + 1.0) * 2.0).floor().min(3.0) as i32;
                (a + b) % 2 == 0
            }
        }
    }
}

/// A shape instance: class, placement and colour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub shape: Shape,
    pub cy: f64,
    pub cx: f64,
    /// Half extent of the bounding box in pixels.
    pub half: f64,
    pub color: Rgb,
}

impl Placement {
    pub fn mask(&self, h: usize, w: usize) -> Mask {
        Mask::from_fn(h, w, |y, x| {
            let u = (x as f64 + 0.5 - self.cx) / self.half;
            let v = (y as f64 + 0.5 - self.cy) / self.half;
            if u.abs() <= 1.0 && v.abs() <= 1.0 && self.shape.contains(u, v) {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn foreground(&self, h: usize, w: usize) -> Image {
        Image::filled(h, w, self.color)
    }
}

fn color_distance(a: Rgb, b: Rgb) -> f32 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Random placement of `shape` whose mask covers between 5% and 50% of the
/// image and whose colour stands out from `background_mean`.
pub fn sample_placement(
    rng: &mut seed::Rng,
    shape: Shape,
    h: usize,
    w: usize,
    background_mean: Rgb,
) -> (Placement, Mask) {
    let min_dim = h.min(w) as f64;
    let mut color = hsv_to_rgb(rng.gen(), rng.gen_range(0.3..1.0), rng.gen_range(0.15..1.0));
    for _ in 0..32 {
        if color_distance(color, background_mean) >= 0.4 {
            break;
        }
        color = hsv_to_rgb(rng.gen(), rng.gen_range(0.3..1.0), rng.gen_range(0.15..1.0));
    }
    loop {
        let half = rng.gen_range(0.17 * min_dim..0.40 * min_dim);
        let cy = rng.gen_range(half..h as f64 - half);
        let cx = rng.gen_range(half..w as f64 - half);
        let p = Placement {
            shape,
            cy,
            cx,
            half,
            color,
        };
        let mask = p.mask(h, w);
        let cov = mask.coverage();
        if (MIN_COVERAGE..=MAX_COVERAGE).contains(&cov) {
            return (p, mask);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_shape_reaches_the_coverage_window() {
        let mut rng = seed::rng(3);
        for shape in Shape::ALL {
            for _ in 0..50 {
                let (_, mask) = sample_placement(&mut rng, shape, 32, 32, [0.5; 3]);
                let c = mask.coverage();
                assert!((MIN_COVERAGE..=MAX_COVERAGE).contains(&c), "{shape:?} {c}");
            }
        }
    }

    #[test]
    fn masks_are_binary() {
        let mut rng = seed::rng(4);
        let (_, mask) = sample_placement(&mut rng, Shape::Ring, 32, 32, [0.1; 3]);
        assert!(mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn shapes_are_pairwise_distinct() {
        let masks: Vec<Mask> = Shape::ALL
            .iter()
            .map(|&shape| {
                Placement {
                    shape,
                    cy: 16.0,
                    cx: 16.0,
                    half: 12.0,
                    color: [1.0; 3],
                }
                .mask(32, 32)
            })
            .collect();
        for i in 0..masks.len() {
            for j in i + 1..masks.len() {
                assert_ne!(masks[i], masks[j]);
            }
        }
    }
}
