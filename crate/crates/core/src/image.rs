use crate::error::{Error, Result};

/// RGB image with intensities in `[0, 1]`, stored row-major as `[y][x][c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize) -> Self {
        Image {
            height,
            width,
            data: vec![0.0; height * width * 3],
        }
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        Image::from_fn(height, width, |_, _| rgb)
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend(f(y, x).map(|v| v.clamp(0.0, 1.0)));
            }
        }
        Image {
            height,
            width,
            data,
        }
    }

    /// Wrap raw interleaved RGB data; values are clamped to `[0, 1]`.
    pub fn from_raw(height: usize, width: usize, mut data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::shape(&[height, width, 3], &[data.len()]));
        }
        for v in &mut data {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    index: 0,
                    value: *v as f64,
                });
            }
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Image {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        for c in 0..3 {
            self.data[i + c] = rgb[c].clamp(0.0, 1.0);
        }
    }

    /// Channel-major copy (`[3, H, W]`) as consumed by the networks.
    pub fn to_chw(&self) -> Vec<f32> {
        let hw = self.height * self.width;
        let mut out = vec![0.0; 3 * hw];
        for (p, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * hw + p] = px[c];
            }
        }
        out
    }

    /// Per-pixel mean of the RGB Euclidean distance to `other`.
    pub fn mean_pixel_distance(&self, other: &Image) -> f64 {
        let total: f64 = self
            .data
            .chunks_exact(3)
            .zip(other.data.chunks_exact(3))
            .map(|(a, b)| {
                let d: f64 = (0..3).map(|c| ((a[c] - b[c]) as f64).powi(2)).sum();
                d.sqrt()
            })
            .sum();
        total / (self.height * self.width) as f64
    }

    /// Number of pixels whose RGB value differs from `other`.
    pub fn differing_pixels(&self, other: &Image) -> usize {
        self.data
            .chunks_exact(3)
            .zip(other.data.chunks_exact(3))
            .filter(|(a, b)| a != b)
            .count()
    }

    /// Snap every value to the 8-bit grid `i / 255`.
    pub fn quantized(&self) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| quantize(v) as f32 / 255.0).collect(),
        }
    }

    pub fn content_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

pub(crate) fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Single-channel mask in `[0, 1]`; binary for generated foregrounds.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Mask {
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x).clamp(0.0, 1.0));
            }
        }
        Mask {
            height,
            width,
            data,
        }
    }

    pub fn filled(height: usize, width: usize, v: f32) -> Self {
        Mask::from_fn(height, width, |_, _| v)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Fraction of pixels with weight above one half.
    pub fn coverage(&self) -> f64 {
        self.data.iter().filter(|&&v| v > 0.5).count() as f64 / self.data.len() as f64
    }
}
