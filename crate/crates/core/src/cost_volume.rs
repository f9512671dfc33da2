//! Plane-sweep cost volumes and soft-argmax depth regression.

use rayon::prelude::*;

use crate::camera::{relative_transform, CameraView, Intrinsics, Pose};
use crate::features::{quarter_luma, warp_features, FeatureMap, WarpedFeatures};
use crate::grid::{sample_plane, ScalarMap};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum PlaneSpacing {
    #[default]
    Uniform,
    /// Uniform in inverse depth.
    Inverse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthPlaneSet {
    pub depths: Vec<f64>,
    pub d_near: f64,
    pub d_far: f64,
}

impl DepthPlaneSet {
    pub fn uniform(d_near: f64, d_far: f64, k: usize) -> Result<Self> {
        Self::build(d_near, d_far, k, PlaneSpacing::Uniform)
    }

    pub fn build(d_near: f64, d_far: f64, k: usize, spacing: PlaneSpacing) -> Result<Self> {
        if k < 2 {
            return Err(Error::invalid(format!("need at least 2 depth planes, got {k}")));
        }
        if !(d_near > 0.0 && d_far > d_near && d_far.is_finite()) {
            return Err(Error::invalid(format!(
                "depth bounds must satisfy 0 < near < far, got [{d_near}, {d_far}]"
            )));
        }
        let last = (k - 1) as f64;
        let mut depths: Vec<f64> = match spacing {
            PlaneSpacing::Uniform => (0..k)
                .map(|i| d_near + (d_far - d_near) * (i as f64 / last))
                .collect(),
            PlaneSpacing::Inverse => {
                let (a, b) = (1.0 / d_near, 1.0 / d_far);
                (0..k).map(|i| 1.0 / (a + (b - a) * (i as f64 / last))).collect()
            }
        };
        depths[0] = d_near;
        depths[k - 1] = d_far;
        Ok(Self {
            depths,
            d_near,
            d_far,
        })
    }

    pub fn len(&self) -> usize {
        self.depths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depths.is_empty()
    }

    /// Spacing of a uniform set.
    pub fn spacing(&self) -> f64 {
        (self.d_far - self.d_near) / (self.len() - 1) as f64
    }
}

/// How per-plane matching evidence is reduced to a scalar cost.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum CostHead {
    /// Mean cosine similarity over valid nearby views.
    #[default]
    MeanCosine,
    /// Affine map over `[mean cosine, mean warped feature...]`.
    Linear { weights: Vec<f64>, bias: f64 },
}

/// `K x h x w` matching costs, plane-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVolume {
    pub planes: DepthPlaneSet,
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
    /// Number of nearby views contributing at each plane and pixel.
    pub valid_counts: Vec<u16>,
}

impl CostVolume {
    pub fn num_planes(&self) -> usize {
        self.planes.len()
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[k * n..(k + 1) * n]
    }

    /// Bilinear sample of plane `k` at full-resolution image coordinates,
    /// assuming the volume sits at quarter resolution.
    pub fn sample(&self, k: usize, u: f64, v: f64, scale: usize) -> f64 {
        let s = scale as f64;
        sample_plane(self.slice(k), self.width, self.height, u / s - 0.5, v / s - 0.5)
    }

    /// Pixels where at least one nearby view contributes at some plane.
    pub fn covered(&self) -> Vec<bool> {
        let n = self.width * self.height;
        (0..n)
            .map(|i| (0..self.num_planes()).any(|k| self.valid_counts[k * n + i] > 0))
            .collect()
    }
}

/// Cosine similarity, defined as 0 when either vector is zero.
#[inline]
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

/// Costs of a single plane from the warps of every nearby view.
pub fn plane_cost(target: &FeatureMap, warped: &[WarpedFeatures], head: &CostHead) -> Result<(Vec<f64>, Vec<u16>)> {
    if warped.is_empty() {
        return Err(Error::invalid("cost volume needs at least one nearby view"));
    }
    for w in warped {
        if !w.features.same_layout(target) || w.valid.len() != target.num_pixels() {
            return Err(Error::mismatch(format!(
                "warped features {}x{}x{} vs target {}x{}x{}",
                w.features.channels, w.features.width, w.features.height, target.channels, target.width, target.height
            )));
        }
    }
    if let CostHead::Linear { weights, .. } = head {
        if weights.len() != target.channels + 1 {
            return Err(Error::mismatch(format!(
                "cost head has {} weights, expected {}",
                weights.len(),
                target.channels + 1
            )));
        }
    }
    let n = target.num_pixels();
    let c = target.channels;
    let mut costs = vec![0.0; n];
    let mut counts = vec![0u16; n];
    let mut mean_feat = vec![0.0; c];
    for i in 0..n {
        let t = target.pixel(i);
        let mut sum = 0.0;
        let mut count = 0u16;
        mean_feat.iter_mut().for_each(|v| *v = 0.0);
        for w in warped {
            if !w.valid[i] {
                continue;
            }
            let f = w.features.pixel(i);
            sum += cosine(t, f);
            count += 1;
            if matches!(head, CostHead::Linear { .. }) {
                for (m, v) in mean_feat.iter_mut().zip(f) {
                    *m += v;
                }
            }
        }
        counts[i] = count;
        if count == 0 {
            continue;
        }
        let mean_cos = sum / count as f64;
        costs[i] = match head {
            CostHead::MeanCosine => mean_cos,
            CostHead::Linear { weights, bias } => {
                let inv = 1.0 / count as f64;
                weights[0] * mean_cos
                    + weights[1..].iter().zip(&mean_feat).map(|(w, m)| w * m * inv).sum::<f64>()
                    + bias
            }
        };
    }
    Ok((costs, counts))
}

/// Assembles a cost volume from pre-warped features, indexed
/// `warped[plane][nearby_view]`.
pub fn build_cost_volume(
    target: &FeatureMap,
    warped: &[Vec<WarpedFeatures>],
    planes: &DepthPlaneSet,
    head: &CostHead,
) -> Result<CostVolume> {
    if warped.len() != planes.len() {
        return Err(Error::mismatch(format!(
            "{} warped planes for {} depth planes",
            warped.len(),
            planes.len()
        )));
    }
    let slices: Vec<(Vec<f64>, Vec<u16>)> = warped
        .iter()
        .map(|per_view| plane_cost(target, per_view, head))
        .collect::<Result<_>>()?;
    Ok(assemble(planes, target, slices))
}

fn assemble(planes: &DepthPlaneSet, target: &FeatureMap, slices: Vec<(Vec<f64>, Vec<u16>)>) -> CostVolume {
    let n = target.num_pixels();
    let mut data = Vec::with_capacity(planes.len() * n);
    let mut valid_counts = Vec::with_capacity(planes.len() * n);
    for (c, v) in slices {
        data.extend(c);
        valid_counts.extend(v);
    }
    CostVolume {
        planes: planes.clone(),
        width: target.width,
        height: target.height,
        data,
        valid_counts,
    }
}

/// A nearby view participating in a plane sweep.
pub struct SweepSource<'a> {
    pub features: &'a FeatureMap,
    pub pose: &'a Pose,
    pub intrinsics: &'a Intrinsics,
}

/// Plane-sweeps `sources` against the target view, warping one plane at a
/// time so the full warped stack is never materialized.
pub fn sweep(
    target: &FeatureMap,
    target_pose: &Pose,
    target_intr: &Intrinsics,
    sources: &[SweepSource<'_>],
    planes: &DepthPlaneSet,
    head: &CostHead,
) -> Result<CostVolume> {
    if sources.is_empty() {
        return Err(Error::invalid("plane sweep needs at least one nearby view"));
    }
    let rels: Vec<_> = sources.iter().map(|s| relative_transform(s.pose, target_pose)).collect();
    let slices: Vec<(Vec<f64>, Vec<u16>)> = planes
        .depths
        .par_iter()
        .map(|&d| {
            let warped: Vec<WarpedFeatures> = sources
                .iter()
                .zip(&rels)
                .map(|(s, rel)| warp_features(s.features, rel, s.intrinsics, target_intr, d))
                .collect::<Result<_>>()?;
            plane_cost(target, &warped, head)
        })
        .collect::<Result<_>>()?;
    Ok(assemble(planes, target, slices))
}

/// Edge-aware smoothing of every cost slice, guided by the quarter-res
/// luma of `guide`. Pixels without any contributing view keep their
/// sentinel cost and do not feed their neighbors.
pub fn refine_cost_volume(vol: &CostVolume, guide: &CameraView, iterations: usize, sigma: f64) -> Result<CostVolume> {
    let scale = guide.width() / vol.width.max(1);
    if vol.width * scale != guide.width()
        || vol.height * scale != guide.height()
        || scale != crate::features::FEATURE_SCALE
    {
        return Err(Error::mismatch(format!(
            "guide {}x{} is not 4x the cost volume {}x{}",
            guide.width(),
            guide.height(),
            vol.width,
            vol.height
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("guide sigma must be > 0, got {sigma}")));
    }
    if iterations == 0 {
        return Ok(vol.clone());
    }
    let lum = quarter_luma(guide)?;
    let weights = guide_weights(&lum, vol.width, vol.height, sigma);
    let n = vol.width * vol.height;
    let mut out = vol.clone();
    out.data
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(k, slice)| {
            let counts = &vol.valid_counts[k * n..(k + 1) * n];
            let mut cur = slice.to_vec();
            for _ in 0..iterations {
                cur = filter_slice(&cur, counts, &weights, vol.width, vol.height);
            }
            slice.copy_from_slice(&cur);
        });
    Ok(out)
}

const RADIUS: isize = 2;
const WINDOW: usize = 5;

/// Per-pixel 5x5 range weights `exp(-(L_p - L_q)^2 / 2 sigma^2)`.
fn guide_weights(lum: &[f64], w: usize, h: usize, sigma: f64) -> Vec<[f64; WINDOW * WINDOW]> {
    let inv = 1.0 / (2.0 * sigma * sigma);
    (0..w * h)
        .map(|i| {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            let mut ws = [0.0; WINDOW * WINDOW];
            for dy in -RADIUS..=RADIUS {
                for dx in -RADIUS..=RADIUS {
                    let (qx, qy) = (x + dx, y + dy);
                    if qx < 0 || qy < 0 || qx >= w as isize || qy >= h as isize {
                        continue;
                    }
                    let diff = lum[i] - lum[qy as usize * w + qx as usize];
                    ws[((dy + RADIUS) as usize) * WINDOW + (dx + RADIUS) as usize] = (-diff * diff * inv).exp();
                }
            }
            ws
        })
        .collect()
}

fn filter_slice(src: &[f64], counts: &[u16], weights: &[[f64; WINDOW * WINDOW]], w: usize, h: usize) -> Vec<f64> {
    (0..w * h)
        .map(|i| {
            if counts[i] == 0 {
                return src[i];
            }
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            let (mut acc, mut norm) = (0.0, 0.0);
            for dy in -RADIUS..=RADIUS {
                for dx in -RADIUS..=RADIUS {
                    let (qx, qy) = (x + dx, y + dy);
                    if qx < 0 || qy < 0 || qx >= w as isize || qy >= h as isize {
                        continue;
                    }
                    let q = qy as usize * w + qx as usize;
                    if counts[q] == 0 {
                        continue;
                    }
                    let wt = weights[i][((dy + RADIUS) as usize) * WINDOW + (dx + RADIUS) as usize];
                    acc += wt * src[q];
                    norm += wt;
                }
            }
            acc / norm
        })
        .collect()
}

/// Full-resolution per-pixel logits over the depth planes, pixel-major:
/// `logits[(y * width + x) * k + plane]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthCandidates {
    pub num_planes: usize,
    pub width: usize,
    pub height: usize,
    pub logits: Vec<f64>,
}

impl DepthCandidates {
    pub fn pixel(&self, idx: usize) -> &[f64] {
        &self.logits[idx * self.num_planes..(idx + 1) * self.num_planes]
    }

    /// Index of the largest logit per pixel (lowest plane on ties).
    pub fn argmax(&self) -> Vec<usize> {
        (0..self.width * self.height)
            .map(|i| {
                let l = self.pixel(i);
                let mut best = 0;
                for k in 1..l.len() {
                    if l[k] > l[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

pub fn upsample_candidates(vol: &CostVolume, width: usize, height: usize) -> Result<DepthCandidates> {
    let scale = crate::features::FEATURE_SCALE;
    if width != vol.width * scale || height != vol.height * scale {
        return Err(Error::mismatch(format!(
            "cannot upsample {}x{} volume to {width}x{height}",
            vol.width, vol.height
        )));
    }
    let k = vol.num_planes();
    let mut logits = vec![0.0; k * width * height];
    logits
        .par_chunks_mut(k * width)
        .enumerate()
        .for_each(|(y, row)| {
            for x in 0..width {
                let (u, v) = (x as f64 + 0.5, y as f64 + 0.5);
                for p in 0..k {
                    row[x * k + p] = vol.sample(p, u, v, scale);
                }
            }
        });
    Ok(DepthCandidates {
        num_planes: k,
        width,
        height,
        logits,
    })
}

/// Softmax of `logits / temperature` written into `out`.
#[inline]
pub fn softmax_into(logits: &[f64], temperature: f64, out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = ((l - max) / temperature).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

pub fn soft_argmax_depth(cand: &DepthCandidates, planes: &DepthPlaneSet, temperature: f64) -> Result<ScalarMap> {
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!("temperature must be > 0, got {temperature}")));
    }
    if cand.num_planes != planes.len() {
        return Err(Error::mismatch(format!(
            "{} logits per pixel for {} planes",
            cand.num_planes,
            planes.len()
        )));
    }
    let n = cand.width * cand.height;
    let data: Vec<f64> = (0..n)
        .into_par_iter()
        .map_init(
            || vec![0.0; planes.len()],
            |probs, i| {
                softmax_into(cand.pixel(i), temperature, probs);
                let d: f64 = probs.iter().zip(&planes.depths).map(|(p, d)| p * d).sum();
                d.clamp(planes.d_near, planes.d_far)
            },
        )
        .collect();
    Ok(ScalarMap {
        width: cand.width,
        height: cand.height,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ColorImage;
    use proptest::prelude::*;

    fn fmap(channels: usize, w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> FeatureMap {
        let mut m = FeatureMap::zeros(channels, w, h);
        for i in 0..w * h {
            for c in 0..channels {
                m.data[i * channels + c] = f(i, c);
            }
        }
        m
    }

    fn all_valid(f: FeatureMap) -> WarpedFeatures {
        let n = f.num_pixels();
        WarpedFeatures {
            features: f,
            valid: vec![true; n],
        }
    }

    #[test]
    fn plane_set_examples() {
        let p = DepthPlaneSet::uniform(0.5, 15.0, 128).unwrap();
        assert!((p.spacing() - 14.5 / 127.0).abs() < 1e-15);
        assert!((p.spacing() - 0.114_17).abs() < 1e-5);
        assert_eq!(p.depths[0], 0.5);
        assert_eq!(p.depths[127], 15.0);
        for w in p.depths.windows(2) {
            assert!(w[1] > w[0]);
            assert!(((w[1] - w[0]) - p.spacing()).abs() < 1e-9);
        }
        assert_eq!(DepthPlaneSet::uniform(1.0, 3.0, 2).unwrap().depths, vec![1.0, 3.0]);
        assert_eq!(DepthPlaneSet::uniform(1.0, 3.0, 3).unwrap().depths, vec![1.0, 2.0, 3.0]);
        assert!(DepthPlaneSet::uniform(1.0, 3.0, 1).is_err());
        assert!(DepthPlaneSet::uniform(3.0, 1.0, 4).is_err());
        assert!(DepthPlaneSet::uniform(0.0, 1.0, 4).is_err());
        let inv = DepthPlaneSet::build(1.0, 4.0, 4, PlaneSpacing::Inverse).unwrap();
        assert_eq!(inv.depths[0], 1.0);
        assert_eq!(inv.depths[3], 4.0);
        assert!(inv.depths.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn cosine_conventions() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 2.0]), 0.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 3.0]), 0.0);
        assert!((cosine(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cost_examples() {
        let target = fmap(2, 2, 1, |i, c| if c == i { 1.0 } else { 0.0 });
        // identical at plane 0, orthogonal at plane 1; two views averaging 1 and 0 at plane 2
        let same = all_valid(target.clone());
        let ortho = all_valid(fmap(2, 2, 1, |i, c| if c != i { 1.0 } else { 0.0 }));
        let planes = DepthPlaneSet::uniform(1.0, 3.0, 3).unwrap();
        let warped = vec![vec![same.clone()], vec![ortho.clone()], vec![same.clone(), ortho.clone()]];
        let vol = build_cost_volume(&target, &warped, &planes, &CostHead::MeanCosine).unwrap();
        assert_eq!(vol.slice(0), &[1.0, 1.0]);
        assert_eq!(vol.slice(1), &[0.0, 0.0]);
        assert_eq!(vol.slice(2), &[0.5, 0.5]);
        assert_eq!(&vol.valid_counts[4..6], &[2, 2]);
    }

    #[test]
    fn invalid_samples_are_excluded() {
        let target = fmap(3, 2, 1, |_, c| c as f64 + 1.0);
        let mut half = all_valid(target.clone());
        half.valid[1] = false;
        let mut garbage = all_valid(fmap(3, 2, 1, |_, c| if c == 0 { -1.0 } else { 0.0 }));
        garbage.valid = vec![false, false];
        let planes = DepthPlaneSet::uniform(1.0, 2.0, 2).unwrap();
        let vol = build_cost_volume(&target, &[vec![half, garbage.clone()], vec![garbage]], &planes, &CostHead::MeanCosine).unwrap();
        assert!((vol.slice(0)[0] - 1.0).abs() < 1e-12);
        assert_eq!(vol.slice(0)[1], 0.0);
        assert_eq!(vol.slice(1), &[0.0, 0.0]);
        assert_eq!(vol.valid_counts, vec![1, 0, 0, 0]);
        assert_eq!(vol.covered(), vec![true, false]);
    }

    #[test]
    fn cost_rejects_mismatch() {
        let a = fmap(3, 2, 2, |_, _| 1.0);
        let b = all_valid(fmap(3, 2, 1, |_, _| 1.0));
        assert!(plane_cost(&a, &[b], &CostHead::MeanCosine).is_err());
        assert!(plane_cost(&a, &[], &CostHead::MeanCosine).is_err());
    }

    #[test]
    fn linear_head_combines_cosine_and_mean_features() {
        let target = fmap(2, 1, 1, |_, c| [1.0, 0.0][c]);
        let a = all_valid(fmap(2, 1, 1, |_, c| [1.0, 0.0][c]));
        let b = all_valid(fmap(2, 1, 1, |_, c| [0.0, 2.0][c]));
        let head = CostHead::Linear {
            weights: vec![2.0, 1.0, 10.0],
            bias: 0.25,
        };
        let (c, _) = plane_cost(&target, &[a, b], &head).unwrap();
        // 2 * 0.5 + 1 * 0.5 + 10 * 1.0 + 0.25
        assert!((c[0] - 11.75).abs() < 1e-12);
    }

    fn guide_view(w: usize, h: usize, f: impl Fn(usize, usize) -> [f64; 3]) -> CameraView {
        let intr = Intrinsics::new(w as f64, w as f64, w as f64 / 2.0, h as f64 / 2.0, w, h).unwrap();
        CameraView::new(ColorImage::from_fn(w, h, f), intr, Pose::identity(), 0).unwrap()
    }

    fn volume_from(slices: Vec<Vec<f64>>, w: usize, h: usize) -> CostVolume {
        let k = slices.len();
        CostVolume {
            planes: DepthPlaneSet::uniform(1.0, 2.0, k.max(2)).unwrap(),
            width: w,
            height: h,
            data: slices.concat(),
            valid_counts: vec![1; k * w * h],
        }
    }

    #[test]
    fn refine_zero_iterations_is_identity() {
        let vol = volume_from(vec![(0..12).map(|i| i as f64).collect(), vec![0.5; 12]], 4, 3);
        let g = guide_view(16, 12, |x, y| [(x * y) as f64 / 200.0; 3]);
        assert_eq!(refine_cost_volume(&vol, &g, 0, 0.05).unwrap(), vol);
    }

    #[test]
    fn refine_preserves_constants() {
        let vol = volume_from(vec![vec![0.3; 12], vec![-0.7; 12]], 4, 3);
        let g = guide_view(16, 12, |x, _| [x as f64 / 16.0; 3]);
        let r = refine_cost_volume(&vol, &g, 3, 0.05).unwrap();
        for (a, b) in r.data.iter().zip(&vol.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn refine_spreads_spike_mass() {
        let (w, h) = (9, 9);
        let mut s = vec![0.0; w * h];
        s[4 * w + 4] = 1.0;
        let vol = volume_from(vec![s, vec![0.0; w * h]], w, h);
        let g = guide_view(4 * w, 4 * h, |_, _| [0.5; 3]);
        let r = refine_cost_volume(&vol, &g, 1, 0.05).unwrap();
        let out = r.slice(0);
        let total: f64 = out.iter().sum();
        assert!((total - 1.0).abs() < 1e-6);
        for y in 0..h {
            for x in 0..w {
                let inside = (x as isize - 4).abs() <= 2 && (y as isize - 4).abs() <= 2;
                let expect = if inside { 1.0 / 25.0 } else { 0.0 };
                assert!((out[y * w + x] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn refine_rejects_wrong_guide() {
        let vol = volume_from(vec![vec![0.0; 12], vec![0.0; 12]], 4, 3);
        assert!(refine_cost_volume(&vol, &guide_view(16, 16, |_, _| [0.0; 3]), 1, 0.05).is_err());
    }

    #[test]
    fn upsample_examples() {
        let vol = volume_from(vec![vec![0.25], vec![-1.0]], 1, 1);
        let c = upsample_candidates(&vol, 4, 4).unwrap();
        for i in 0..16 {
            assert_eq!(c.pixel(i), &[0.25, -1.0]);
        }
        assert!(upsample_candidates(&vol, 8, 4).is_err());

        let w = 5;
        let ramp: Vec<f64> = (0..w * 3).map(|i| 2.0 * (i % w) as f64 - 1.0).collect();
        let vol = volume_from(vec![ramp.clone(), ramp.clone()], w, 3);
        // knots: quarter pixel j sits at full-res coordinate 4j + 2
        for j in 0..w {
            assert_eq!(vol.sample(0, 4.0 * j as f64 + 2.0, 6.0, 4), ramp[j]);
        }
        let c = upsample_candidates(&vol, 4 * w, 12).unwrap();
        // interior pixels lie on the linear ramp 2 * ((x + 0.5) / 4 - 0.5) - 1
        for x in 2..(4 * w - 2) {
            let expect = 2.0 * ((x as f64 + 0.5) / 4.0 - 0.5) - 1.0;
            assert!((c.pixel(5 * 4 * w + x)[0] - expect).abs() < 1e-12, "x={x}");
        }
    }

    fn cand(logits: Vec<f64>, k: usize) -> DepthCandidates {
        DepthCandidates {
            num_planes: k,
            width: logits.len() / k,
            height: 1,
            logits,
        }
    }

    #[test]
    fn soft_argmax_examples() {
        let planes = DepthPlaneSet::uniform(1.0, 3.0, 2).unwrap();
        let d = soft_argmax_depth(&cand(vec![0.7, 0.7], 2), &planes, 1.0).unwrap();
        assert!((d.data[0] - 2.0).abs() < 1e-12);
        let d = soft_argmax_depth(&cand(vec![0.0, 3f64.ln()], 2), &planes, 1.0).unwrap();
        assert!((d.data[0] - 2.5).abs() < 1e-12);
        let d = soft_argmax_depth(&cand(vec![1e6, 0.0], 2), &planes, 1.0).unwrap();
        assert!((d.data[0] - 1.0).abs() < 1e-9);
        assert!(soft_argmax_depth(&cand(vec![0.0, 0.0], 2), &planes, 0.0).is_err());
        assert!(soft_argmax_depth(&cand(vec![0.0, 0.0, 0.0], 3), &planes, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn soft_argmax_is_bounded(
            logits in prop::collection::vec(-50.0f64..50.0, 8),
            t in 0.001f64..100.0,
        ) {
            let planes = DepthPlaneSet::uniform(0.5, 15.0, 8).unwrap();
            let d = soft_argmax_depth(&cand(logits, 8), &planes, t).unwrap();
            prop_assert!(d.data[0] >= 0.5 && d.data[0] <= 15.0);
        }

        #[test]
        fn refinement_stays_within_slice_bounds(
            vals in prop::collection::vec(-1.0f64..1.0, 24),
            lum in prop::collection::vec(0.0f64..1.0, 24),
        ) {
            let vol = volume_from(vec![vals.clone(), vals.iter().map(|v| -v).collect()], 6, 4);
            let g = guide_view(24, 16, |x, y| [lum[(y / 4) * 6 + x / 4]; 3]);
            let r = refine_cost_volume(&vol, &g, 2, 0.05).unwrap();
            for k in 0..2 {
                let s = vol.slice(k);
                let lo = s.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(r.slice(k).iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
            }
        }
    }
}
