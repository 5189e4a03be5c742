//! PSNR and SSIM.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

const C1: f64 = SSIM_K1 * SSIM_K1;
const C2: f64 = SSIM_K2 * SSIM_K2;

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b)?;
    if a.data.is_empty() {
        return Err(Error::DimensionMismatch("empty image".into()));
    }
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64)
}

fn psnr_from_mse(m: f64) -> f64 {
    if m <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / m).log10()).min(PSNR_CAP)
    }
}

/// Peak signal-to-noise ratio for unit dynamic range, capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

fn gaussian_kernel(size: usize) -> Vec<f64> {
    let mut k = vec![0.0; size];
    let c = (size / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable "valid" correlation of a single-channel `w x h` buffer.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let ow = w + 1 - n;
    let oh = h + 1 - n;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Adjoint of [`filter_valid`].
fn filter_valid_adjoint(g: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let ow = w + 1 - n;
    let oh = h + 1 - n;
    let mut rows = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let v = g[y * ow + x];
            for i in 0..n {
                rows[(y + i) * ow + x] += k[i] * v;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let v = rows[y * ow + x];
            for i in 0..n {
                out[y * w + x + i] += k[i] * v;
            }
        }
    }
    out
}

struct SsimMaps {
    w: usize,
    h: usize,
    mu_a: Vec<f64>,
    mu_b: Vec<f64>,
    e_aa: Vec<f64>,
    e_bb: Vec<f64>,
    e_ab: Vec<f64>,
}

fn ssim_maps(a: &[f64], b: &[f64], w: usize, h: usize, window: usize) -> Result<SsimMaps> {
    if w < window || h < window || window == 0 {
        return Err(Error::DimensionMismatch(format!("{w}x{h} image is smaller than the {window}x{window} SSIM window")));
    }
    let k = gaussian_kernel(window);
    let sq = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    Ok(SsimMaps {
        w,
        h,
        mu_a: filter_valid(a, w, h, &k),
        mu_b: filter_valid(b, w, h, &k),
        e_aa: filter_valid(&sq(a, a), w, h, &k),
        e_bb: filter_valid(&sq(b, b), w, h, &k),
        e_ab: filter_valid(&sq(a, b), w, h, &k),
    })
}

/// `(A1, A2, B1, B2)` with SSIM = A1 A2 / (B1 B2) at window position `i`.
fn terms(m: &SsimMaps, i: usize) -> (f64, f64, f64, f64) {
    let (ma, mb) = (m.mu_a[i], m.mu_b[i]);
    let var_a = m.e_aa[i] - ma * ma;
    let var_b = m.e_bb[i] - mb * mb;
    let cov = m.e_ab[i] - ma * mb;
    (2.0 * ma * mb + C1, 2.0 * cov + C2, ma * ma + mb * mb + C1, var_a + var_b + C2)
}

fn ssim_gray(a: &[f64], b: &[f64], w: usize, h: usize, window: usize) -> Result<f64> {
    let m = ssim_maps(a, b, w, h, window)?;
    let n = m.mu_a.len();
    Ok((0..n)
        .map(|i| {
            let (a1, a2, b1, b2) = terms(&m, i);
            a1 * a2 / (b1 * b2)
        })
        .sum::<f64>()
        / n as f64)
}

/// Structural similarity of the channel-mean grayscale images.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b)?;
    ssim_gray(&a.to_gray().data, &b.to_gray().data, a.width, a.height, SSIM_WINDOW)
}

/// Largest odd window no bigger than [`SSIM_WINDOW`] that fits the image.
pub fn fitting_window(width: usize, height: usize) -> usize {
    let m = SSIM_WINDOW.min(width).min(height);
    if m % 2 == 0 {
        m.saturating_sub(1)
    } else {
        m
    }
}

/// SSIM with a window shrunk by [`fitting_window`] for images smaller than
/// the standard window.
pub fn ssim_fitted(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b)?;
    ssim_gray(&a.to_gray().data, &b.to_gray().data, a.width, a.height, fitting_window(a.width, a.height))
}

/// SSIM together with its gradient w.r.t. every value of `a`.
pub fn ssim_grad(a: &Image, b: &Image) -> Result<(f64, Vec<f64>)> {
    ssim_grad_window(a, b, SSIM_WINDOW)
}

/// [`ssim_fitted`] together with its gradient w.r.t. `a`.
pub fn ssim_fitted_grad(a: &Image, b: &Image) -> Result<(f64, Vec<f64>)> {
    ssim_grad_window(a, b, fitting_window(a.width, a.height))
}

fn ssim_grad_window(a: &Image, b: &Image, window: usize) -> Result<(f64, Vec<f64>)> {
    a.check_same_shape(b)?;
    let (ga, gb) = (a.to_gray(), b.to_gray());
    let m = ssim_maps(&ga.data, &gb.data, a.width, a.height, window)?;
    let n = m.mu_a.len();
    let inv = 1.0 / n as f64;
    let mut total = 0.0;
    let mut d_mu = vec![0.0; n];
    let mut d_aa = vec![0.0; n];
    let mut d_ab = vec![0.0; n];
    for i in 0..n {
        let (a1, a2, b1, b2) = terms(&m, i);
        let s = a1 * a2 / (b1 * b2);
        total += s;
        let (ma, mb) = (m.mu_a[i], m.mu_b[i]);
        d_mu[i] = inv * s * (2.0 * mb / a1 - 2.0 * mb / a2 - 2.0 * ma / b1 + 2.0 * ma / b2);
        d_aa[i] = -inv * s / b2;
        d_ab[i] = inv * 2.0 * s / a2;
    }
    let k = gaussian_kernel(window);
    let (w, h) = (m.w, m.h);
    let g_mu = filter_valid_adjoint(&d_mu, w, h, &k);
    let g_aa = filter_valid_adjoint(&d_aa, w, h, &k);
    let g_ab = filter_valid_adjoint(&d_ab, w, h, &k);
    let c = a.channels;
    let mut grad = vec![0.0; a.data.len()];
    for p in 0..w * h {
        let g = (g_mu[p] + 2.0 * ga.data[p] * g_aa[p] + gb.data[p] * g_ab[p]) / c as f64;
        grad[p * c..(p + 1) * c].iter_mut().for_each(|v| *v = g);
    }
    Ok((total * inv, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMetrics {
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub psnr: f64,
    pub ssim: f64,
    pub per_channel: Vec<ChannelMetrics>,
}

pub fn report(a: &Image, b: &Image) -> Result<MetricsReport> {
    let per_channel = (0..a.channels)
        .map(|c| {
            let (ca, cb) = (a.channel(c), b.channel(c));
            Ok(ChannelMetrics {
                psnr: psnr(&ca, &cb)?,
                ssim: ssim(&ca, &cb)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(MetricsReport {
        psnr: psnr(a, b)?,
        ssim: ssim(a, b)?,
        per_channel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn noise(w: usize, h: usize, c: usize, seed: u64) -> Image {
        let mut img = Image::new(w, h, c);
        let mut s = seed;
        for v in img.data.iter_mut() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            *v = ((s >> 11) as f64) / ((1u64 << 53) as f64);
        }
        img
    }

    #[test]
    fn psnr_examples() {
        let a = noise(8, 8, 3, 1);
        assert_eq!(psnr(&a, &a).unwrap(), 99.0);
        let z = Image::new(4, 4, 3);
        let o = Image::filled(4, 4, 3, 1.0);
        assert_eq!(psnr(&z, &o).unwrap(), 0.0);
        let b = Image::filled(4, 4, 1, 0.0);
        let c = Image::filled(4, 4, 1, 1e-3f64.sqrt());
        assert!((psnr(&b, &c).unwrap() - 30.0).abs() < 1e-9);
        assert!(psnr(&z, &Image::new(4, 3, 3)).is_err());
    }

    #[test]
    fn ssim_examples() {
        let a = noise(16, 16, 3, 2);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        let mut inv = a.clone();
        inv.data.iter_mut().for_each(|v| *v = 1.0 - *v);
        let s = ssim(&a, &inv).unwrap();
        assert!(s > -1.0 && s < 1.0);
        assert!((s - ssim(&inv, &a).unwrap()).abs() < 1e-15);

        let p = Image::filled(12, 12, 1, 0.5);
        let q = Image::filled(12, 12, 1, 0.6);
        let expected = (2.0 * 0.5 * 0.6 + C1) / (0.25 + 0.36 + C1);
        assert!((ssim(&p, &q).unwrap() - expected).abs() < 1e-12);
        assert!(ssim(&Image::new(10, 20, 1), &Image::new(10, 20, 1)).is_err());
        assert_eq!(fitting_window(8, 8), 7);
        assert_eq!(fitting_window(64, 9), 9);
        let a = noise(8, 8, 3, 9);
        assert!((ssim_fitted(&a, &a).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ssim_gradient_matches_finite_differences() {
        let a = noise(13, 12, 3, 5);
        let b = noise(13, 12, 3, 6);
        let (_, g) = ssim_grad(&a, &b).unwrap();
        let h = 1e-6;
        for i in (0..a.data.len()).step_by(7) {
            let mut p = a.clone();
            let mut m = a.clone();
            p.data[i] += h;
            m.data[i] -= h;
            let fd = (ssim(&p, &b).unwrap() - ssim(&m, &b).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7, "{i}: {fd} vs {}", g[i]);
        }
    }

    proptest! {
        #[test]
        fn psnr_monotone_in_mse(m1 in 1e-8f64..1.0, m2 in 1e-8f64..1.0) {
            prop_assume!(m1 < m2);
            prop_assert!(psnr_from_mse(m1) >= psnr_from_mse(m2));
        }

        #[test]
        fn ssim_symmetric_and_bounded(s1 in 0u64..1000, s2 in 0u64..1000) {
            let a = noise(12, 12, 3, s1);
            let b = noise(12, 12, 3, s2 + 1000);
            let x = ssim(&a, &b).unwrap();
            let y = ssim(&b, &a).unwrap();
            prop_assert!((x - y).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&x));
        }
    }
}
