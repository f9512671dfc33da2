//! Quarter-resolution matching features and their plane-induced warps.
//!
//! Each quarter-resolution pixel carries:
//!
//! | channels | content                                              |
//! |----------|------------------------------------------------------|
//! | 0..3     | mean RGB over the 4x4 source block                    |
//! | 3..5     | Sobel x / y gradient of the quarter-resolution luma   |
//! | 5..14    | zero-mean, unit-norm 3x3 luma patch (zero if flat)    |
//! | 14..     | zero padding up to the configured channel count       |

use nalgebra::Vector3;

use crate::camera::{project_camera, unproject_camera, CameraView, Intrinsics, RigidTransform};
use crate::grid::{bilinear_taps, luma};
use crate::{Error, Result};

/// Downsampling factor between input images and feature maps.
pub const FEATURE_SCALE: usize = 4;

/// Channels produced by the hand-crafted extractor before padding.
pub const BASE_CHANNELS: usize = 14;

/// Pixel-major feature tensor: `data[(y * width + x) * channels + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    pub scale: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, width: usize, height: usize) -> Self {
        Self {
            channels,
            width,
            height,
            scale: FEATURE_SCALE,
            data: vec![0.0; channels * width * height],
        }
    }

    #[inline]
    pub fn pixel(&self, idx: usize) -> &[f64] {
        &self.data[idx * self.channels..(idx + 1) * self.channels]
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> &[f64] {
        self.pixel(y * self.width + x)
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn same_layout(&self, other: &FeatureMap) -> bool {
        self.channels == other.channels && self.width == other.width && self.height == other.height
    }

    /// Bilinear sample at continuous index coordinates, edge-clamped.
    pub fn sample_into(&self, sx: f64, sy: f64, out: &mut [f64]) {
        let (x0, x1, y0, y1, fx, fy) = bilinear_taps(sx, sy, self.width, self.height);
        let w00 = (1.0 - fx) * (1.0 - fy);
        let w01 = fx * (1.0 - fy);
        let w10 = (1.0 - fx) * fy;
        let w11 = fx * fy;
        let (a, b) = (self.at(x0, y0), self.at(x1, y0));
        let (c, d) = (self.at(x0, y1), self.at(x1, y1));
        for k in 0..self.channels {
            out[k] = w00 * a[k] + w01 * b[k] + w10 * c[k] + w11 * d[k];
        }
    }
}

/// Features warped into a target grid, with per-pixel validity.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpedFeatures {
    pub features: FeatureMap,
    pub valid: Vec<bool>,
}

/// Mean RGB of every 4x4 block.
pub fn block_mean_rgb(view: &CameraView) -> Result<Vec<[f64; 3]>> {
    let (w, h) = (view.width(), view.height());
    if w % FEATURE_SCALE != 0 || h % FEATURE_SCALE != 0 || w == 0 || h == 0 {
        return Err(Error::invalid(format!(
            "image size {w}x{h} must be a positive multiple of {FEATURE_SCALE}"
        )));
    }
    let (qw, qh) = (w / FEATURE_SCALE, h / FEATURE_SCALE);
    let norm = 1.0 / (FEATURE_SCALE * FEATURE_SCALE) as f64;
    let mut out = vec![[0.0; 3]; qw * qh];
    for qy in 0..qh {
        for qx in 0..qw {
            let mut acc = [0.0; 3];
            for dy in 0..FEATURE_SCALE {
                for dx in 0..FEATURE_SCALE {
                    let c = view.image.get(qx * FEATURE_SCALE + dx, qy * FEATURE_SCALE + dy);
                    acc[0] += c[0];
                    acc[1] += c[1];
                    acc[2] += c[2];
                }
            }
            out[qy * qw + qx] = [acc[0] * norm, acc[1] * norm, acc[2] * norm];
        }
    }
    Ok(out)
}

/// Quarter-resolution luma (luma of the block mean).
pub fn quarter_luma(view: &CameraView) -> Result<Vec<f64>> {
    Ok(block_mean_rgb(view)?.into_iter().map(luma).collect())
}

pub fn compute_matching_features(view: &CameraView, channels: usize) -> Result<FeatureMap> {
    if channels < BASE_CHANNELS {
        return Err(Error::invalid(format!(
            "matching features need at least {BASE_CHANNELS} channels, got {channels}"
        )));
    }
    let rgb = block_mean_rgb(view)?;
    let (qw, qh) = (view.width() / FEATURE_SCALE, view.height() / FEATURE_SCALE);
    let lum: Vec<f64> = rgb.iter().map(|&c| luma(c)).collect();
    let at = |x: isize, y: isize| -> f64 {
        let xc = x.clamp(0, qw as isize - 1) as usize;
        let yc = y.clamp(0, qh as isize - 1) as usize;
        lum[yc * qw + xc]
    };

    let mut map = FeatureMap::zeros(channels, qw, qh);
    for y in 0..qh {
        for x in 0..qw {
            let (xi, yi) = (x as isize, y as isize);
            let mut patch = [0.0; 9];
            for dy in -1..=1 {
                for dx in -1..=1 {
                    patch[((dy + 1) * 3 + dx + 1) as usize] = at(xi + dx, yi + dy);
                }
            }
            let gx = (patch[2] + 2.0 * patch[5] + patch[8]) - (patch[0] + 2.0 * patch[3] + patch[6]);
            let gy = (patch[6] + 2.0 * patch[7] + patch[8]) - (patch[0] + 2.0 * patch[1] + patch[2]);

            let mean = patch.iter().sum::<f64>() / 9.0;
            for p in &mut patch {
                *p -= mean;
            }
            let norm = patch.iter().map(|p| p * p).sum::<f64>().sqrt();
            let scale = if norm > 1e-9 { 1.0 / norm } else { 0.0 };

            let idx = y * qw + x;
            let out = &mut map.data[idx * channels..(idx + 1) * channels];
            out[..3].copy_from_slice(&rgb[idx]);
            out[3] = gx;
            out[4] = gy;
            for (o, p) in out[5..14].iter_mut().zip(patch.iter()) {
                *o = p * scale;
            }
        }
    }
    Ok(map)
}

/// Warps `src` features into the `dst` quarter-resolution grid through the
/// fronto-parallel plane at `plane_depth` in the dst camera.
///
/// `src_to_dst` maps src-camera points into the dst camera frame;
/// intrinsics are given at full resolution.
pub fn warp_features(
    src: &FeatureMap,
    src_to_dst: &RigidTransform,
    src_intr: &Intrinsics,
    dst_intr: &Intrinsics,
    plane_depth: f64,
) -> Result<WarpedFeatures> {
    if !(plane_depth > 0.0) {
        return Err(Error::invalid(format!("plane depth must be > 0, got {plane_depth}")));
    }
    let src_q = src_intr.downscaled(src.scale);
    let dst_q = dst_intr.downscaled(src.scale);
    if src_q.width != src.width || src_q.height != src.height {
        return Err(Error::mismatch(format!(
            "feature map {}x{} does not match source intrinsics ({}x{} at 1/{})",
            src.width, src.height, src_intr.width, src_intr.height, src.scale
        )));
    }
    let dst_to_src = src_to_dst.inverse();
    let (w, h, c) = (dst_q.width, dst_q.height, src.channels);
    let mut features = FeatureMap::zeros(c, w, h);
    let mut valid = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let idx = y * w + x;
            let p_dst = unproject_camera(x as f64 + 0.5, y as f64 + 0.5, plane_depth, &dst_q);
            let p_src: Vector3<f64> = dst_to_src.apply(&p_dst);
            if p_src.z <= 1e-9 {
                continue;
            }
            let proj = project_camera(&p_src, &src_q);
            if !(proj.u >= 0.0 && proj.u <= src.width as f64 && proj.v >= 0.0 && proj.v <= src.height as f64) {
                continue;
            }
            src.sample_into(proj.u - 0.5, proj.v - 0.5, &mut features.data[idx * c..(idx + 1) * c]);
            valid[idx] = true;
        }
    }
    Ok(WarpedFeatures { features, valid })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{relative_transform, Pose};
    use crate::grid::ColorImage;

    fn view_from(image: ColorImage) -> CameraView {
        let (w, h) = (image.width, image.height);
        let intr = Intrinsics::new(w as f64, w as f64, w as f64 / 2.0, h as f64 / 2.0, w, h).unwrap();
        CameraView::new(image, intr, Pose::identity(), 0).unwrap()
    }

    fn textured(w: usize, h: usize) -> ColorImage {
        ColorImage::from_fn(w, h, |x, y| {
            let s = ((x * 7 + y * 13) % 11) as f64 / 10.0;
            let t = ((x / 3 + y / 5) % 4) as f64 / 3.0;
            [s, t, 0.5 * (s + t)]
        })
    }

    #[test]
    fn constant_image_has_flat_features() {
        let f = compute_matching_features(&view_from(ColorImage::new(16, 12, [0.4; 3])), 14).unwrap();
        assert_eq!((f.width, f.height), (4, 3));
        for i in 0..f.num_pixels() {
            let px = f.pixel(i);
            assert!((px[0] - 0.4).abs() < 1e-12);
            assert!(px[3..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn vertical_step_edge_has_only_horizontal_gradient() {
        let img = ColorImage::from_fn(32, 16, |x, _| if x < 16 { [0.0; 3] } else { [1.0; 3] });
        let f = compute_matching_features(&view_from(img), 16).unwrap();
        for y in 0..f.height {
            for x in 0..f.width {
                let px = f.at(x, y);
                assert_eq!(px[4], 0.0);
                let on_edge = x == 3 || x == 4;
                assert_eq!(px[3] != 0.0, on_edge, "x={x}");
                assert!(px[14..].iter().all(|&v| v == 0.0));
            }
        }
        // Sobel across a unit step: 1 + 2 + 1.
        assert!((f.at(3, 2)[3] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn patch_channels_are_unit_norm_or_zero() {
        let f = compute_matching_features(&view_from(textured(32, 32)), 14).unwrap();
        for i in 0..f.num_pixels() {
            let n: f64 = f.pixel(i)[5..14].iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(n == 0.0 || (n - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn features_are_deterministic() {
        let a = compute_matching_features(&view_from(textured(32, 24)), 14).unwrap();
        let b = compute_matching_features(&view_from(textured(32, 24)), 14).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(compute_matching_features(&view_from(ColorImage::new(18, 16, [0.0; 3])), 14).is_err());
        assert!(compute_matching_features(&view_from(ColorImage::new(16, 16, [0.0; 3])), 8).is_err());
    }

    #[test]
    fn identity_warp_is_identity() {
        let v = view_from(textured(32, 24));
        let f = compute_matching_features(&v, 14).unwrap();
        for d in [0.5, 2.0, 10.0] {
            let w = warp_features(&f, &RigidTransform::identity(), &v.intrinsics, &v.intrinsics, d).unwrap();
            assert!(w.valid.iter().all(|&b| b));
            for (a, b) in w.features.data.iter().zip(&f.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert!(warp_features(&f, &RigidTransform::identity(), &v.intrinsics, &v.intrinsics, 0.0).is_err());
    }

    #[test]
    fn x_baseline_shifts_by_disparity() {
        // Horizontal ramp: channel 0 equals the quarter-res column center, so
        // a warp reads back the sampled source column directly.
        let img = ColorImage::from_fn(64, 16, |x, _| [(x / 4) as f64 / 16.0, 0.0, 0.0]);
        let v = view_from(img);
        let f = compute_matching_features(&v, 14).unwrap();
        let baseline = 0.5;
        let depth = 4.0;
        let src = Pose::from_translation(Vector3::new(baseline, 0.0, 0.0));
        let rel = relative_transform(&src, &Pose::identity());
        let w = warp_features(&f, &rel, &v.intrinsics, &v.intrinsics, depth).unwrap();
        let fq = v.intrinsics.fx / 4.0;
        let shift = fq * baseline / depth; // 2 quarter pixels
        assert!((shift - 2.0).abs() < 1e-12);
        for x in 0..f.width {
            let idx = 2 * f.width + x;
            let src_x = x as f64 - shift;
            if src_x >= -0.5 {
                assert!(w.valid[idx]);
                let expect = src_x.clamp(0.0, 15.0) / 16.0;
                assert!((w.features.pixel(idx)[0] - expect).abs() < 1e-12, "x={x}");
            } else {
                assert!(!w.valid[idx]);
                assert!(w.features.pixel(idx).iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn plane_behind_source_is_invalid() {
        let v = view_from(textured(32, 32));
        let f = compute_matching_features(&v, 14).unwrap();
        // Source camera sits 5 m in front of dst, facing the same way: a plane
        // at 1 m lies behind it.
        let src = Pose::from_translation(Vector3::new(0.0, 0.0, 5.0));
        let rel = relative_transform(&src, &Pose::identity());
        let w = warp_features(&f, &rel, &v.intrinsics, &v.intrinsics, 1.0).unwrap();
        assert!(w.valid.iter().all(|&b| !b));
        assert!(w.features.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn warped_values_are_convex_combinations() {
        let v = view_from(textured(48, 32));
        let f = compute_matching_features(&v, 14).unwrap();
        let src = Pose::look_at(Vector3::new(0.3, -0.1, 0.0), Vector3::new(0.0, 0.0, 3.0), Vector3::new(0.0, -1.0, 0.0)).unwrap();
        let rel = relative_transform(&src, &Pose::identity());
        for d in [1.0, 2.5, 6.0] {
            let w = warp_features(&f, &rel, &v.intrinsics, &v.intrinsics, d).unwrap();
            for c in 0..f.channels {
                let lo = (0..f.num_pixels()).map(|i| f.pixel(i)[c]).fold(f64::INFINITY, f64::min);
                let hi = (0..f.num_pixels()).map(|i| f.pixel(i)[c]).fold(f64::NEG_INFINITY, f64::max);
                for i in 0..f.num_pixels() {
                    if w.valid[i] {
                        let val = w.features.pixel(i)[c];
                        assert!(val >= lo - 1e-12 && val <= hi + 1e-12);
                    }
                }
            }
        }
    }
}
