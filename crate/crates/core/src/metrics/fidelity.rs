//! PSNR and SSIM.

use crate::error::{dim_err, Result};
use crate::tensor::Tensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_same(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return dim_err(format!(
            "images have shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        ));
    }
    if a.is_empty() {
        return dim_err("empty image");
    }
    Ok(())
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_same(a, b)?;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64)
}

/// `10·log10(peak² / MSE)` in dB; identical images give `f64::INFINITY`.
pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

/// Normalized 1-d Gaussian taps.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Channel mean of a `[C×H×W]` image, or the image itself when it is `[H×W]`.
pub fn to_gray(img: &Tensor) -> Result<(Vec<f64>, usize, usize)> {
    match *img.shape() {
        [h, w] => Ok((img.data().to_vec(), h, w)),
        [c, h, w] => {
            let plane = h * w;
            let mut g = vec![0.0; plane];
            for chan in img.data().chunks(plane) {
                g.iter_mut().zip(chan).for_each(|(o, v)| *o += v / c as f64);
            }
            Ok((g, h, w))
        }
        _ => dim_err(format!("expected an image, got shape {:?}", img.shape())),
    }
}

/// Valid-region separable filtering of an `h×w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        for ox in 0..wo {
            rows[y * wo + ox] = (0..k).map(|t| taps[t] * x[y * w + ox + t]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for oy in 0..ho {
        for ox in 0..wo {
            out[oy * wo + ox] = (0..k).map(|t| taps[t] * rows[(oy + t) * wo + ox]).sum();
        }
    }
    out
}

/// Mean SSIM over all fully-contained 11×11 Gaussian windows of the grayscale images, peak 1.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_same(a, b)?;
    let (x, h, w) = to_gray(a)?;
    let (y, _, _) = to_gray(b)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return dim_err(format!(
            "image {h}×{w} smaller than the {SSIM_WINDOW}×{SSIM_WINDOW} SSIM window"
        ));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mu_x = filter_valid(&x, h, w, &taps);
    let mu_y = filter_valid(&y, h, w, &taps);
    let xx = filter_valid(&prod(&x, &x), h, w, &taps);
    let yy = filter_valid(&prod(&y, &y), h, w, &taps);
    let xy = filter_valid(&prod(&x, &y), h, w, &taps);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let total: f64 = (0..mu_x.len())
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = xx[i] - mx * mx;
            let vy = yy[i] - my * my;
            let cov = xy[i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mu_x.len() as f64)
}
