//! Geometric and photometric image transforms shared by training-time
//! augmentation and the input-preprocessing attacks.

use crate::error::{Error, Result};
use crate::image::Image;

/// Fill for pixels that rotate or shrink out of frame.
pub const FILL: f32 = 0.5;

/// Odd-length Gaussian taps with `sigma = k / 6`, normalized to sum 1.
pub fn gaussian_kernel(k: usize) -> Result<Vec<f64>> {
    if k == 0 || k % 2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "blur kernel must be odd and >= 1, got {k}"
        )));
    }
    let sigma = k as f64 / 6.0;
    let r = (k / 2) as f64;
    let taps: Vec<f64> = (0..k)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    Ok(taps.into_iter().map(|t| t / s).collect())
}

/// Mirror an out-of-range index back into `0..n` without repeating the edge.
fn reflect(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Separable Gaussian blur with reflect padding.
pub fn gaussian_blur(img: &Image, k: usize) -> Result<Image> {
    let taps = gaussian_kernel(k)?;
    if k == 1 {
        return Ok(img.clone());
    }
    let (h, w) = img.dims();
    let r = (k / 2) as isize;
    // Each output is centre + sum(w_i * (x_i - centre)): the taps sum to one,
    // and a constant neighbourhood comes back bit-exact.
    let pass = |src: &[f32], horizontal: bool| -> Vec<f32> {
        let mut out = vec![0.0f32; src.len()];
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let centre = src[(y * w + x) * 3 + c] as f64;
                    let mut acc = 0.0f64;
                    for (t, &wt) in taps.iter().enumerate() {
                        let off = t as isize - r;
                        let (yy, xx) = if horizontal {
                            (y, reflect(x as isize + off, w))
                        } else {
                            (reflect(y as isize + off, h), x)
                        };
                        acc += wt * (src[(yy * w + xx) * 3 + c] as f64 - centre);
                    }
                    out[(y * w + x) * 3 + c] = (centre + acc) as f32;
                }
            }
        }
        out
    };
    let tmp = pass(img.data(), true);
    let out = pass(&tmp, false);
    Image::from_raw(h, w, out)
}

#[inline]
fn bilinear(img: &Image, sy: f64, sx: f64) -> [f32; 3] {
    let (h, w) = img.dims();
    let y0 = sy.floor().clamp(0.0, (h - 1) as f64) as usize;
    let x0 = sx.floor().clamp(0.0, (w - 1) as f64) as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = (sy - y0 as f64).clamp(0.0, 1.0);
    let fx = (sx - x0 as f64).clamp(0.0, 1.0);
    let (a, b, c, d) = (
        img.pixel(y0, x0),
        img.pixel(y0, x1),
        img.pixel(y1, x0),
        img.pixel(y1, x1),
    );
    let mut out = [0.0f32; 3];
    for ch in 0..3 {
        let top = a[ch] as f64 * (1.0 - fx) + b[ch] as f64 * fx;
        let bottom = c[ch] as f64 * (1.0 - fx) + d[ch] as f64 * fx;
        out[ch] = (top * (1.0 - fy) + bottom * fy) as f32;
    }
    out
}

/// Rotate counter-clockwise about the image centre with bilinear sampling.
pub fn rotate(img: &Image, degrees: f64) -> Result<Image> {
    if !degrees.is_finite() {
        return Err(Error::InvalidParameter(format!("rotation {degrees}")));
    }
    let deg = degrees.rem_euclid(360.0);
    if deg == 0.0 {
        return Ok(img.clone());
    }
    let (h, w) = img.dims();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = deg.to_radians().sin_cos();
    let eps = 1e-9;
    Ok(Image::from_fn(h, w, |y, x| {
        let (dy, dx) = (y as f64 - cy, x as f64 - cx);
        // inverse rotation maps the output pixel back into the source
        let sx = cos * dx - sin * dy + cx;
        let sy = sin * dx + cos * dy + cy;
        if sx < -eps || sy < -eps || sx > (w - 1) as f64 + eps || sy > (h - 1) as f64 + eps {
            [FILL; 3]
        } else {
            bilinear(img, sy, sx)
        }
    }))
}

/// Bilinear resize (half-pixel centres).
pub fn resize(img: &Image, new_h: usize, new_w: usize) -> Image {
    let (h, w) = img.dims();
    let (ry, rx) = (h as f64 / new_h as f64, w as f64 / new_w as f64);
    Image::from_fn(new_h, new_w, |y, x| {
        let sy = ((y as f64 + 0.5) * ry - 0.5).clamp(0.0, (h - 1) as f64);
        let sx = ((x as f64 + 0.5) * rx - 0.5).clamp(0.0, (w - 1) as f64);
        bilinear(img, sy, sx)
    })
}

/// Resize by `factor`, then centre-crop or pad with [`FILL`] back to the
/// original extent.
pub fn scale(img: &Image, factor: f64) -> Result<Image> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::InvalidParameter(format!("scale factor {factor}")));
    }
    if factor == 1.0 {
        return Ok(img.clone());
    }
    let (h, w) = img.dims();
    let nh = ((h as f64 * factor).round() as usize).max(1);
    let nw = ((w as f64 * factor).round() as usize).max(1);
    let scaled = resize(img, nh, nw);
    let oy = nh as isize - h as isize;
    let ox = nw as isize - w as isize;
    Ok(Image::from_fn(h, w, |y, x| {
        let sy = y as isize + oy / 2;
        let sx = x as isize + ox / 2;
        if sy < 0 || sx < 0 || sy >= nh as isize || sx >= nw as isize {
            [FILL; 3]
        } else {
            scaled.pixel(sy as usize, sx as usize)
        }
    }))
}

/// `clamp(gamma * x + amplitude * L)` where `L` is a linear luminance ramp
/// in `[-1, 1]` oriented at `angle` radians.
pub fn relight(img: &Image, gamma: f64, amplitude: f64, angle: f64) -> Result<Image> {
    if !(gamma >= 0.0 && gamma.is_finite() && amplitude.is_finite() && angle.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "relight gamma {gamma} amplitude {amplitude}"
        )));
    }
    let (h, w) = img.dims();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = angle.sin_cos();
    let norm = cx * cos.abs() + cy * sin.abs();
    let norm = if norm > 0.0 { norm } else { 1.0 };
    let (g, b) = (gamma as f32, amplitude as f32);
    Ok(Image::from_fn(h, w, |y, x| {
        let ramp = (((x as f64 - cx) * cos + (y as f64 - cy) * sin) / norm) as f32;
        img.pixel(y, x).map(|v| g * v + b * ramp)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_image() -> Image {
        Image::from_fn(16, 16, |y, x| {
            [x as f32 / 15.0, y as f32 / 15.0, ((x + y) % 5) as f32 / 4.0]
        })
    }

    #[test]
    fn kernel_validation() {
        assert!(gaussian_kernel(4).is_err());
        assert!(gaussian_kernel(0).is_err());
        assert_eq!(gaussian_kernel(1).unwrap(), vec![1.0]);
        let k = gaussian_kernel(7).unwrap();
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((k[0] - k[6]).abs() < 1e-15);
    }

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-2, 5), 2);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(2, 5), 2);
        assert_eq!(reflect(-3, 1), 0);
    }

    #[test]
    fn blur_identities() {
        let img = gradient_image();
        assert_eq!(gaussian_blur(&img, 1).unwrap(), img);
        let flat = Image::filled(16, 16, [0.3, 0.6, 0.9]);
        assert_eq!(gaussian_blur(&flat, 5).unwrap(), flat);
    }

    #[test]
    fn blur_smooths_a_step() {
        let img = Image::from_fn(8, 8, |_, x| if x < 4 { [0.0; 3] } else { [1.0; 3] });
        let out = gaussian_blur(&img, 3).unwrap();
        let left = out.pixel(0, 3)[0];
        let right = out.pixel(0, 4)[0];
        assert!(left > 0.0 && left < 0.5 && right > 0.5 && right < 1.0);
    }

    #[test]
    fn rotation_identities() {
        let img = gradient_image();
        assert_eq!(rotate(&img, 0.0).unwrap(), img);
        assert_eq!(rotate(&img, 360.0).unwrap(), img);
        assert_eq!(rotate(&img, -720.0).unwrap(), img);
    }

    #[test]
    fn quarter_turn_moves_corners() {
        let mut img = Image::filled(5, 5, [0.0; 3]);
        img.set_pixel(0, 4, [1.0; 3]);
        let out = rotate(&img, 90.0).unwrap();
        // counter-clockwise: top-right corner goes to top-left
        assert!((out.pixel(0, 0)[0] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn rotation_fills_out_of_frame() {
        let img = Image::filled(9, 9, [0.0; 3]);
        let out = rotate(&img, 45.0).unwrap();
        assert_eq!(out.pixel(0, 0), [FILL; 3]);
        assert_eq!(out.pixel(4, 4), [0.0; 3]);
    }

    #[test]
    fn scale_identity_and_padding() {
        let img = gradient_image();
        assert_eq!(scale(&img, 1.0).unwrap(), img);
        let small = scale(&Image::filled(16, 16, [0.0; 3]), 0.5).unwrap();
        assert_eq!(small.pixel(0, 0), [FILL; 3]);
        assert_eq!(small.pixel(8, 8), [0.0; 3]);
        let big = scale(&img, 1.5).unwrap();
        assert_eq!(big.dims(), (16, 16));
        assert!(scale(&img, 0.0).is_err());
    }

    #[test]
    fn relight_identity_and_range() {
        let img = gradient_image();
        assert_eq!(relight(&img, 1.0, 0.0, 0.7).unwrap(), img);
        let out = relight(&img, 1.3, 0.2, 1.1).unwrap();
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
