//! Pixel-aligned Gaussian triplets: a center, a fusion weight and a latent
//! feature vector per pixel.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::camera::{unproject, CameraView};
use crate::cost_volume::{softmax_into, DepthCandidates};
use crate::features::FeatureMap;
use crate::grid::ScalarMap;
use crate::{Error, Result};

/// Lower clamp applied to per-pixel confidence weights.
pub const MIN_CONFIDENCE: f64 = 1e-4;

/// Layout of the default latent feature vector.
pub mod layout {
    /// RGB at the pixel.
    pub const RGB: std::ops::Range<usize> = 0..3;
    /// Confidence weight at creation time.
    pub const CONFIDENCE: usize = 3;
    /// Depth used to unproject the pixel.
    pub const DEPTH: usize = 4;
    /// First channel of the bilinearly sampled matching feature.
    pub const MATCHING: usize = 5;

    pub const fn dim(matching_channels: usize) -> usize {
        MATCHING + matching_channels
    }
}

/// Origin of a triplet: the view and pixel it was unprojected from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SourceTag {
    pub view: usize,
    pub pixel: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletSet {
    pub centers: Vec<Vector3<f64>>,
    pub weights: Vec<f64>,
    /// Row-major `len x feature_dim`.
    pub features: Vec<f64>,
    pub feature_dim: usize,
    /// `None` once a triplet has been merged.
    pub sources: Vec<Option<SourceTag>>,
}

impl TripletSet {
    pub fn empty(feature_dim: usize) -> Self {
        Self {
            centers: Vec::new(),
            weights: Vec::new(),
            features: Vec::new(),
            feature_dim,
            sources: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    #[inline]
    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    #[inline]
    pub fn feature_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn push(&mut self, center: Vector3<f64>, weight: f64, feature: &[f64], source: Option<SourceTag>) {
        debug_assert_eq!(feature.len(), self.feature_dim);
        self.centers.push(center);
        self.weights.push(weight);
        self.features.extend_from_slice(feature);
        self.sources.push(source);
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Checks the structural invariants: consistent lengths, finite values
    /// and strictly positive weights.
    pub fn validate(&self) -> Result<()> {
        let m = self.len();
        if self.weights.len() != m || self.sources.len() != m || self.features.len() != m * self.feature_dim {
            return Err(Error::mismatch("triplet set columns have inconsistent lengths"));
        }
        if let Some(i) = self.weights.iter().position(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::invalid(format!("triplet {i} has weight {}", self.weights[i])));
        }
        if let Some(i) = self.centers.iter().position(|c| !c.iter().all(|v| v.is_finite())) {
            return Err(Error::invalid(format!("triplet {i} has a non-finite center")));
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("triplet features contain non-finite values"));
        }
        Ok(())
    }
}

/// Per-pixel confidence: the largest softmax probability over the planes,
/// clamped to `[1e-4, 1 - 1e-4]`.
pub fn compute_confidence_weights(cand: &DepthCandidates, temperature: f64) -> Result<ScalarMap> {
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!("temperature must be > 0, got {temperature}")));
    }
    let n = cand.width * cand.height;
    let data = (0..n)
        .into_par_iter()
        .map_init(
            || vec![0.0; cand.num_planes],
            |probs, i| {
                softmax_into(cand.pixel(i), temperature, probs);
                probs
                    .iter()
                    .copied()
                    .fold(0.0, f64::max)
                    .clamp(MIN_CONFIDENCE, 1.0 - MIN_CONFIDENCE)
            },
        )
        .collect();
    Ok(ScalarMap {
        width: cand.width,
        height: cand.height,
        data,
    })
}

/// Full-resolution latent features, row-major `width * height * dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentMap {
    pub dim: usize,
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl LatentMap {
    pub fn pixel(&self, idx: usize) -> &[f64] {
        &self.data[idx * self.dim..(idx + 1) * self.dim]
    }
}

/// Builds the default latent layout: RGB, confidence, depth and the
/// matching feature sampled at the pixel center.
pub fn default_latents(view: &CameraView, omega: &ScalarMap, depth: &ScalarMap, matching: &FeatureMap) -> Result<LatentMap> {
    let (w, h) = (view.width(), view.height());
    omega.ensure_shape(w, h, "confidence map")?;
    depth.ensure_shape(w, h, "depth map")?;
    if matching.width * matching.scale != w || matching.height * matching.scale != h {
        return Err(Error::mismatch(format!(
            "matching features {}x{} do not cover a {w}x{h} image",
            matching.width, matching.height
        )));
    }
    let dim = layout::dim(matching.channels);
    let s = matching.scale as f64;
    let mut data = vec![0.0; w * h * dim];
    data.par_chunks_mut(w * dim).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            let idx = y * w + x;
            let out = &mut row[x * dim..(x + 1) * dim];
            out[layout::RGB].copy_from_slice(&view.image.data[idx]);
            out[layout::CONFIDENCE] = omega.data[idx];
            out[layout::DEPTH] = depth.data[idx];
            let (u, v) = (x as f64 + 0.5, y as f64 + 0.5);
            matching.sample_into(u / s - 0.5, v / s - 0.5, &mut out[layout::MATCHING..]);
        }
    });
    Ok(LatentMap {
        dim,
        width: w,
        height: h,
        data,
    })
}

/// Lifts every pixel to a triplet at its depth; triplet `i` comes from
/// pixel `i` in row-major order.
pub fn unproject_to_triplets(depth: &ScalarMap, latents: &LatentMap, omega: &ScalarMap, view: &CameraView) -> Result<TripletSet> {
    let (w, h) = (view.width(), view.height());
    depth.ensure_shape(w, h, "depth map")?;
    omega.ensure_shape(w, h, "weight map")?;
    if latents.width != w || latents.height != h {
        return Err(Error::mismatch(format!(
            "latent map is {}x{}, expected {w}x{h}",
            latents.width, latents.height
        )));
    }
    if let Some(i) = omega.data.iter().position(|&o| !(o > 0.0 && o.is_finite())) {
        return Err(Error::invalid(format!("weight at pixel {i} is {}", omega.data[i])));
    }
    let centers = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            unproject(x as f64 + 0.5, y as f64 + 0.5, depth.data[i], &view.pose, &view.intrinsics)
                .map_err(|_| Error::invalid(format!("pixel ({x}, {y}) has non-positive depth {}", depth.data[i])))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TripletSet {
        centers,
        weights: omega.data.clone(),
        features: latents.data.clone(),
        feature_dim: latents.dim,
        sources: (0..w * h)
            .map(|pixel| {
                Some(SourceTag {
                    view: view.index,
                    pixel,
                })
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{project, Intrinsics, Pose};
    use crate::grid::ColorImage;
    use nalgebra::{Rotation3, Unit};

    fn cand(logits: Vec<f64>, k: usize) -> DepthCandidates {
        DepthCandidates {
            num_planes: k,
            width: logits.len() / k,
            height: 1,
            logits,
        }
    }

    #[test]
    fn confidence_examples() {
        let w = compute_confidence_weights(&cand(vec![0.3; 4], 4), 1.0).unwrap();
        assert!((w.data[0] - 0.25).abs() < 1e-12);
        let w = compute_confidence_weights(&cand(vec![1e6, 0.0, 0.0, 0.0], 4), 1.0).unwrap();
        assert_eq!(w.data[0], 1.0 - 1e-4);
        let w = compute_confidence_weights(&cand(vec![0.0, 3f64.ln()], 2), 1.0).unwrap();
        assert!((w.data[0] - 0.75).abs() < 1e-12);
        assert!(compute_confidence_weights(&cand(vec![0.0, 0.0], 2), -1.0).is_err());
    }

    fn latents(w: usize, h: usize, dim: usize) -> LatentMap {
        LatentMap {
            dim,
            width: w,
            height: h,
            data: (0..w * h * dim).map(|i| i as f64 * 0.01).collect(),
        }
    }

    #[test]
    fn single_pixel_unprojects_onto_axis() {
        let intr = Intrinsics::new(100.0, 100.0, 0.5, 0.5, 1, 1).unwrap();
        let view = CameraView::new(ColorImage::new(1, 1, [0.2; 3]), intr, Pose::identity(), 7).unwrap();
        let t = unproject_to_triplets(&ScalarMap::new(1, 1, 2.0), &latents(1, 1, 6), &ScalarMap::new(1, 1, 0.5), &view).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.centers[0], Vector3::new(0.0, 0.0, 2.0));
        assert_eq!(t.sources[0], Some(SourceTag { view: 7, pixel: 0 }));
    }

    #[test]
    fn two_by_two_cardinality_and_tags() {
        let intr = Intrinsics::new(10.0, 10.0, 1.0, 1.0, 2, 2).unwrap();
        let view = CameraView::new(ColorImage::new(2, 2, [0.2; 3]), intr, Pose::identity(), 3).unwrap();
        let t = unproject_to_triplets(&ScalarMap::new(2, 2, 1.0), &latents(2, 2, 6), &ScalarMap::new(2, 2, 0.5), &view).unwrap();
        assert_eq!(t.len(), 4);
        let tags: Vec<_> = t.sources.iter().map(|s| s.unwrap()).collect();
        assert_eq!(tags, (0..4).map(|p| SourceTag { view: 3, pixel: p }).collect::<Vec<_>>());
        assert_eq!(t.feature(3), latents(2, 2, 6).pixel(3));
        t.validate().unwrap();
    }

    #[test]
    fn rejects_nonpositive_depth() {
        let intr = Intrinsics::new(10.0, 10.0, 1.0, 1.0, 2, 2).unwrap();
        let view = CameraView::new(ColorImage::new(2, 2, [0.2; 3]), intr, Pose::identity(), 0).unwrap();
        let mut d = ScalarMap::new(2, 2, 1.0);
        d.data[2] = 0.0;
        assert!(unproject_to_triplets(&d, &latents(2, 2, 6), &ScalarMap::new(2, 2, 0.5), &view).is_err());
    }

    #[test]
    fn triplets_reproject_onto_their_pixels() {
        let (w, h) = (24, 16);
        let intr = Intrinsics::new(30.0, 28.0, 11.0, 8.5, w, h).unwrap();
        let rot = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::new(0.2, 1.0, -0.3)), 0.8).into_inner();
        let pose = Pose::new(rot, Vector3::new(1.0, -2.0, 0.5)).unwrap();
        let view = CameraView::new(ColorImage::new(w, h, [0.2; 3]), intr, pose, 0).unwrap();
        let depth = ScalarMap::from_fn(w, h, |x, y| 0.5 + 0.1 * x as f64 + 0.37 * y as f64);
        let t = unproject_to_triplets(&depth, &latents(w, h, 6), &ScalarMap::new(w, h, 0.5), &view).unwrap();
        for (i, c) in t.centers.iter().enumerate() {
            let p = project(c, &pose, &intr);
            let (x, y) = ((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
            assert!((p.u - x).abs() < 1e-6 * x);
            assert!((p.v - y).abs() < 1e-6 * y);
            assert!((p.depth - depth.data[i]).abs() < 1e-6 * depth.data[i]);
        }
    }

    #[test]
    fn default_latent_layout() {
        let (w, h) = (8, 8);
        let intr = Intrinsics::new(8.0, 8.0, 4.0, 4.0, w, h).unwrap();
        let img = ColorImage::from_fn(w, h, |x, y| [x as f64 / 8.0, y as f64 / 8.0, 0.5]);
        let view = CameraView::new(img, intr, Pose::identity(), 0).unwrap();
        let feats = crate::features::compute_matching_features(&view, 14).unwrap();
        let omega = ScalarMap::new(w, h, 0.8);
        let depth = ScalarMap::new(w, h, 2.5);
        let lat = default_latents(&view, &omega, &depth, &feats).unwrap();
        assert_eq!(lat.dim, 19);
        let px = lat.pixel(3 * w + 5);
        assert_eq!(&px[0..3], &[5.0 / 8.0, 3.0 / 8.0, 0.5]);
        assert_eq!(px[layout::CONFIDENCE], 0.8);
        assert_eq!(px[layout::DEPTH], 2.5);
        assert!(lat.data.iter().all(|v| v.is_finite()));
    }
}
