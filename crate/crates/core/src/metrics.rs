//! Image and depth quality metrics.

use serde::{Deserialize, Serialize};

use crate::grid::{ColorImage, ScalarMap};
use crate::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// Peak signal-to-noise ratio in dB for images in `[0, 1]`; identical
/// images give `f64::INFINITY`.
pub fn psnr(a: &ColorImage, b: &ColorImage) -> Result<f64> {
    a.ensure_same_shape(b)?;
    if a.is_empty() {
        return Err(Error::invalid("PSNR of an empty image"));
    }
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(p, q)| (0..3).map(|c| (p[c] - q[c]).powi(2)).sum::<f64>())
        .sum();
    let mse = sum / (3 * a.len()) as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable "valid" filtering: output is `(w - 10) x (h - 10)`.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = k.iter().enumerate().map(|(i, kv)| kv * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(i, kv)| kv * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM of two single-channel maps.
pub fn ssim_channel(a: &ScalarMap, b: &ScalarMap) -> Result<f64> {
    b.ensure_shape(a.width, a.height, "SSIM input")?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {}x{}",
            a.width, a.height
        )));
    }
    let (w, h) = (a.width, a.height);
    let k = gaussian_kernel();
    let prod = |f: fn(f64, f64) -> f64| a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect::<Vec<_>>();
    let mu_a = filter_valid(&a.data, w, h, &k);
    let mu_b = filter_valid(&b.data, w, h, &k);
    let aa = filter_valid(&prod(|x, _| x * x), w, h, &k);
    let bb = filter_valid(&prod(|_, y| y * y), w, h, &k);
    let ab = filter_valid(&prod(|x, y| x * y), w, h, &k);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2))
        })
        .sum();
    Ok(total / n as f64)
}

/// SSIM computed per RGB channel and averaged.
pub fn ssim(a: &ColorImage, b: &ColorImage) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let mut acc = 0.0;
    for c in 0..3 {
        let ca = ScalarMap::from_fn(a.width, a.height, |x, y| a.get(x, y)[c]);
        let cb = ScalarMap::from_fn(b.width, b.height, |x, y| b.get(x, y)[c]);
        acc += ssim_channel(&ca, &cb)?;
    }
    Ok(acc / 3.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub abs_diff: f64,
    pub abs_rel: f64,
    pub delta_1_25: f64,
    pub delta_1_10: f64,
    pub valid_count: usize,
}

/// Depth errors over pixels where `gt > 0` and `mask` (if given) is set.
pub fn depth_metrics(pred: &ScalarMap, gt: &ScalarMap, mask: Option<&[bool]>) -> Result<DepthMetrics> {
    pred.ensure_shape(gt.width, gt.height, "predicted depth")?;
    if let Some(m) = mask {
        if m.len() != gt.len() {
            return Err(Error::mismatch(format!("mask has {} entries, depth has {}", m.len(), gt.len())));
        }
    }
    let (mut n, mut diff, mut rel, mut d125, mut d110) = (0usize, 0.0, 0.0, 0usize, 0usize);
    for i in 0..gt.len() {
        let (p, g) = (pred.data[i], gt.data[i]);
        if !(g > 0.0 && g.is_finite()) || mask.is_some_and(|m| !m[i]) {
            continue;
        }
        n += 1;
        diff += (p - g).abs();
        rel += (p - g).abs() / g;
        let ratio = (p / g).max(g / p);
        d125 += usize::from(ratio < 1.25);
        d110 += usize::from(ratio < 1.10);
    }
    if n == 0 {
        return Err(Error::invalid("depth metrics over an empty mask"));
    }
    let nf = n as f64;
    Ok(DepthMetrics {
        abs_diff: diff / nf,
        abs_rel: rel / nf,
        delta_1_25: d125 as f64 / nf,
        delta_1_10: d110 as f64 / nf,
        valid_count: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn psnr_examples() {
        let z = ColorImage::new(8, 8, [0.0; 3]);
        let half = ColorImage::new(8, 8, [0.5; 3]);
        let one = ColorImage::new(8, 8, [1.0; 3]);
        assert_eq!(psnr(&z, &z).unwrap(), f64::INFINITY);
        assert!((psnr(&z, &half).unwrap() - 6.0206).abs() < 1e-3);
        assert_eq!(psnr(&z, &one).unwrap(), 0.0);
        assert!(psnr(&z, &ColorImage::new(8, 7, [0.0; 3])).is_err());
    }

    fn stripes(w: usize, h: usize) -> ScalarMap {
        ScalarMap::from_fn(w, h, |x, y| 0.5 + 0.4 * if (x / 2 + y / 3) % 2 == 0 { 1.0 } else { -1.0 })
    }

    #[test]
    fn ssim_examples() {
        let a = stripes(24, 20);
        assert!((ssim_channel(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        let neg = ScalarMap::from_fn(24, 20, |x, y| 1.0 - a.get(x, y));
        assert!(ssim_channel(&a, &neg).unwrap() < -0.95);
        for (p, q) in [(0.2, 0.7), (0.0, 1.0), (0.4, 0.4)] {
            let s = ssim_channel(&ScalarMap::new(16, 16, p), &ScalarMap::new(16, 16, q)).unwrap();
            let expect = (2.0 * p * q + C1) / (p * p + q * q + C1);
            assert!((s - expect).abs() < 1e-9, "{s} vs {expect}");
        }
        assert!(ssim_channel(&ScalarMap::new(10, 16, 0.0), &ScalarMap::new(10, 16, 0.0)).is_err());
        let img = ColorImage::from_fn(16, 16, |x, y| [x as f64 / 16.0, y as f64 / 16.0, 0.3]);
        assert!((ssim(&img, &img).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn depth_examples() {
        let gt = ScalarMap::from_fn(6, 5, |x, y| 0.5 + 0.3 * x as f64 + 0.7 * y as f64);
        let m = depth_metrics(&gt, &gt, None).unwrap();
        assert_eq!((m.abs_diff, m.abs_rel, m.delta_1_25, m.delta_1_10), (0.0, 0.0, 1.0, 1.0));
        let scaled = |s: f64| ScalarMap::from_fn(6, 5, |x, y| s * gt.get(x, y));
        let m = depth_metrics(&scaled(1.3), &gt, None).unwrap();
        assert!((m.abs_rel - 0.3).abs() < 1e-12);
        assert_eq!(m.delta_1_25, 0.0);
        let m = depth_metrics(&scaled(1.2), &gt, None).unwrap();
        assert_eq!(m.delta_1_25, 1.0);
        assert_eq!(m.delta_1_10, 0.0);
        let mut holes = gt.clone();
        holes.data[3] = 0.0;
        assert_eq!(depth_metrics(&gt, &holes, None).unwrap().valid_count, 29);
        assert!(depth_metrics(&gt, &gt, Some(&[false; 30])).is_err());
    }

    proptest! {
        #[test]
        fn metrics_are_symmetric(seed in 0u64..10_000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a = ColorImage::from_fn(14, 13, |_, _| [rng.random(), rng.random(), rng.random()]);
            let b = ColorImage::from_fn(14, 13, |_, _| [rng.random(), rng.random(), rng.random()]);
            prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
            prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
            let s = ssim(&a, &b).unwrap();
            prop_assert!((-1.0..=1.0).contains(&s));
        }
    }
}
