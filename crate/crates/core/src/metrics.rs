//! Image similarity metrics for novel-view evaluation.

use crate::error::{HsrError, Result};
use crate::raster::Image;

/// Returned by [`psnr`] for (near-)identical images.
pub const PSNR_CAP: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn check_shapes(a: &Image, b: &Image) -> Result<()> {
    if a.resolution() != b.resolution() {
        return Err(HsrError::ResolutionMismatch {
            expected: a.resolution(),
            found: b.resolution(),
        });
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_shapes(a, b)?;
    let n = a.data.len().max(1) as f64;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n)
}

/// `10 log10(1 / MSE)` for unit dynamic range.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let mse = mse(a, b)?;
    if mse < 1e-10 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Normalized 1-d Gaussian of odd `size`.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Mean structural similarity over all fully-contained 11×11 Gaussian
/// windows (σ = 1.5) and the three channels. Images smaller than the window
/// use one window spanning the shorter side.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_shapes(a, b)?;
    let (w, h) = a.resolution();
    let mut size = SSIM_WINDOW.min(w).min(h);
    if size % 2 == 0 {
        size -= 1;
    }
    let kernel = gaussian_kernel(size, SSIM_SIGMA);
    let (out_w, out_h) = (w + 1 - size, h + 1 - size);
    let mut total = 0.0;
    for c in 0..3 {
        let channel = |img: &Image| -> Vec<f64> { img.data.iter().skip(c).step_by(3).copied().collect() };
        let (x, y) = (channel(a), channel(b));
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let [mx, my, sxx, syy, sxy] = [&x, &y, &xx, &yy, &xy].map(|v| filter_valid(v, w, h, &kernel));
        for i in 0..out_w * out_h {
            let (mu_x, mu_y) = (mx[i], my[i]);
            let var_x = sxx[i] - mu_x * mu_x;
            let var_y = syy[i] - mu_y * mu_y;
            let cov = sxy[i] - mu_x * mu_y;
            total += ((2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (var_x + var_y + SSIM_C2));
        }
    }
    Ok(total / (3 * out_w * out_h) as f64)
}

/// Separable filtering keeping only outputs whose window lies inside the image.
fn filter_valid(v: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let size = k.len();
    let out_w = w + 1 - size;
    let out_h = h + 1 - size;
    let mut rows = vec![0.0; out_w * h];
    for y in 0..h {
        for x in 0..out_w {
            rows[y * out_w + x] = (0..size).map(|i| k[i] * v[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; out_w * out_h];
    for y in 0..out_h {
        for x in 0..out_w {
            out[y * out_w + x] = (0..size).map(|i| k[i] * rows[(y + i) * out_w + x]).sum();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> Image {
        let pixels: Vec<[f64; 3]> = (0..w * h)
            .map(|i| {
                let (x, y) = ((i % w) as f64 / w as f64, (i / w) as f64 / h as f64);
                [x, y, 0.5 * (x + y)]
            })
            .collect();
        Image::from_pixels(w, h, &pixels).unwrap()
    }

    #[test]
    fn identical_images() {
        let a = ramp(20, 16);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unit_mse_is_zero_db() {
        let a = Image::filled(4, 4, [0.0; 3]);
        let b = Image::filled(4, 4, [1.0; 3]);
        assert_eq!(psnr(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn negation_scores_lower() {
        let a = ramp(24, 24);
        let neg = Image {
            data: a.data.iter().map(|v| 1.0 - v).collect(),
            ..a.clone()
        };
        assert!(ssim(&a, &neg).unwrap() < ssim(&a, &a).unwrap());
    }

    #[test]
    fn shape_mismatch() {
        assert!(psnr(&ramp(4, 4), &ramp(4, 5)).is_err());
        assert!(ssim(&ramp(4, 4), &ramp(5, 4)).is_err());
    }

    #[test]
    fn kernel_sums_to_one() {
        let k = gaussian_kernel(11, 1.5);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(k[0], k[10]);
    }
}
