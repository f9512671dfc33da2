//! Pixel-wise triplet fusion.
//!
//! Global triplets are projected into each incoming view. Every local pixel
//! is paired with the nearest (smallest depth) global triplet whose
//! projection rounds onto that pixel, provided the depth gap is below
//! `delta` times the local depth. Paired triplets are merged in place;
//! unpaired local triplets are appended.

use nalgebra::{DMatrix, DVector, Vector3};
use rayon::prelude::*;

use crate::camera::{pixel_of, project, round_half_up, CameraView};
use crate::grid::ScalarMap;
use crate::triplets::TripletSet;
use crate::{Error, Result};

/// A global triplet projected into the current view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalProjection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    /// Row-major pixel index, `None` when behind the camera or off-image.
    pub pixel: Option<usize>,
}

pub fn project_global(global: &TripletSet, view: &CameraView) -> Vec<GlobalProjection> {
    let (w, h) = (view.width(), view.height());
    global
        .centers
        .par_iter()
        .map(|c| {
            let p = project(c, &view.pose, &view.intrinsics);
            let pixel = if p.depth > 0.0 {
                pixel_of(p.u, p.v, w, h).map(|(x, y)| y * w + x)
            } else {
                None
            };
            GlobalProjection {
                u: p.u,
                v: p.v,
                depth: p.depth,
                pixel,
            }
        })
        .collect()
}

/// One-to-one local/global pairs, sorted by local pixel.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CorrespondenceSet {
    pub pairs: Vec<(usize, usize)>,
    pub matched: usize,
    pub unmatched: usize,
}

impl CorrespondenceSet {
    fn from_pairs(pairs: Vec<(usize, usize)>, num_local: usize) -> Self {
        let matched = pairs.len();
        Self {
            pairs,
            matched,
            unmatched: num_local - matched,
        }
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::invalid(format!("alignment threshold must be > 0, got {delta}")));
    }
    Ok(())
}

#[inline]
fn within_threshold(local_depth: f64, global_depth: f64, delta: f64) -> bool {
    (local_depth - global_depth).abs() < delta * local_depth
}

/// Pairs local pixels with global projections using a per-pixel bucket of
/// the nearest projection.
pub fn pixel_wise_alignment(local_depths: &ScalarMap, projections: &[GlobalProjection], delta: f64) -> Result<CorrespondenceSet> {
    check_delta(delta)?;
    let n = local_depths.len();
    let mut nearest: Vec<Option<(f64, usize)>> = vec![None; n];
    for (j, p) in projections.iter().enumerate() {
        let Some(pix) = p.pixel else { continue };
        if pix >= n {
            return Err(Error::mismatch(format!("projection {j} targets pixel {pix} of {n}")));
        }
        match nearest[pix] {
            Some((d, _)) if d <= p.depth => {}
            _ => nearest[pix] = Some((p.depth, j)),
        }
    }
    let pairs = nearest
        .iter()
        .enumerate()
        .filter_map(|(i, best)| {
            let (d_g, j) = (*best)?;
            within_threshold(local_depths.data[i], d_g, delta).then_some((i, j))
        })
        .collect();
    Ok(CorrespondenceSet::from_pairs(pairs, n))
}

/// Reference alignment: for every pixel, scans all projections and
/// re-derives pixel membership from the raw coordinates.
pub fn alignment_oracle(local_depths: &ScalarMap, projections: &[GlobalProjection], delta: f64) -> Result<CorrespondenceSet> {
    check_delta(delta)?;
    let (w, h) = (local_depths.width, local_depths.height);
    let mut pairs = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let mut best: Option<(f64, usize)> = None;
            for (j, p) in projections.iter().enumerate() {
                let in_front = p.depth > 0.0;
                let px = round_half_up(p.u - 0.5);
                let py = round_half_up(p.v - 0.5);
                if !in_front || px != x as f64 || py != y as f64 {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((d, k)) => p.depth < d || (p.depth == d && j < k),
                };
                if better {
                    best = Some((p.depth, j));
                }
            }
            if let Some((d_g, j)) = best {
                let i = y * w + x;
                if within_threshold(local_depths.data[i], d_g, delta) {
                    pairs.push((i, j));
                }
            }
        }
    }
    Ok(CorrespondenceSet::from_pairs(pairs, w * h))
}

/// Weighted merge of two triplet centers; weights add.
pub fn merge_pair(local_center: &Vector3<f64>, local_weight: f64, global_center: &Vector3<f64>, global_weight: f64) -> Result<(Vector3<f64>, f64)> {
    if !(local_weight > 0.0 && global_weight > 0.0) {
        return Err(Error::invalid(format!(
            "merge weights must be positive, got {local_weight} and {global_weight}"
        )));
    }
    let total = local_weight + global_weight;
    let center = global_center + (local_center - global_center) * (local_weight / total);
    Ok((center, total))
}

/// Weights of a GRU cell over feature vectors of size `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_z: DMatrix<f64>,
    pub u_z: DMatrix<f64>,
    pub b_z: DVector<f64>,
    pub w_r: DMatrix<f64>,
    pub u_r: DMatrix<f64>,
    pub b_r: DVector<f64>,
    pub w_h: DMatrix<f64>,
    pub u_h: DMatrix<f64>,
    pub b_h: DVector<f64>,
}

impl GruParams {
    pub fn zeros(dim: usize) -> Self {
        let m = || DMatrix::zeros(dim, dim);
        let v = || DVector::zeros(dim);
        Self {
            w_z: m(),
            u_z: m(),
            b_z: v(),
            w_r: m(),
            u_r: m(),
            b_r: v(),
            w_h: m(),
            u_h: m(),
            b_h: v(),
        }
    }

    pub fn dim(&self) -> usize {
        self.b_z.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let mats = [&self.w_z, &self.u_z, &self.w_r, &self.u_r, &self.w_h, &self.u_h];
        if mats.iter().any(|m| m.nrows() != d || m.ncols() != d) || self.b_r.len() != d || self.b_h.len() != d {
            return Err(Error::mismatch(format!("GRU weights are not all {d}x{d} / {d}")));
        }
        let finite = mats.iter().all(|m| m.iter().all(|v| v.is_finite()))
            && [&self.b_z, &self.b_r, &self.b_h].iter().all(|b| b.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::invalid("GRU weights contain non-finite values"));
        }
        Ok(())
    }

    /// One GRU step with input `f_local` and hidden state `f_global`.
    pub fn step(&self, f_local: &[f64], f_global: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        if f_local.len() != d || f_global.len() != d {
            return Err(Error::mismatch(format!(
                "GRU expects {d}-dim features, got {} and {}",
                f_local.len(),
                f_global.len()
            )));
        }
        let x = DVector::from_column_slice(f_local);
        let hprev = DVector::from_column_slice(f_global);
        let z = (&self.w_z * &x + &self.u_z * &hprev + &self.b_z).map(sigmoid);
        let r = (&self.w_r * &x + &self.u_r * &hprev + &self.b_r).map(sigmoid);
        let cand = (&self.w_h * &x + &self.u_h * r.component_mul(&hprev) + &self.b_h).map(f64::tanh);
        Ok((0..d).map(|i| (1.0 - z[i]) * hprev[i] + z[i] * cand[i]).collect())
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// How matched triplets combine their latent features.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum FeatureFusion {
    /// Weight-proportional average of the two features.
    #[default]
    Blend,
    Gru(GruParams),
}

pub fn gru_update(f_local: &[f64], f_global: &[f64], local_weight: f64, global_weight: f64, mode: &FeatureFusion) -> Result<Vec<f64>> {
    match mode {
        FeatureFusion::Gru(params) => params.step(f_local, f_global),
        FeatureFusion::Blend => {
            if f_local.len() != f_global.len() {
                return Err(Error::mismatch(format!(
                    "feature sizes differ: {} vs {}",
                    f_local.len(),
                    f_global.len()
                )));
            }
            if !(local_weight > 0.0 && global_weight > 0.0) {
                return Err(Error::invalid("blend weights must be positive"));
            }
            // Written as an offset from the global feature so equal inputs
            // come back unchanged.
            let t = local_weight / (local_weight + global_weight);
            Ok(f_local.iter().zip(f_global).map(|(l, g)| g + t * (l - g)).collect())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct FusionStats {
    pub input_global: usize,
    pub input_local: usize,
    pub merged: usize,
    pub output: usize,
    /// `merged / (input_global + input_local)`.
    pub reduction_ratio: f64,
}

impl FusionStats {
    fn new(input_global: usize, input_local: usize, merged: usize) -> Self {
        let total = input_global + input_local;
        Self {
            input_global,
            input_local,
            merged,
            output: total - merged,
            reduction_ratio: if total == 0 { 0.0 } else { merged as f64 / total as f64 },
        }
    }
}

/// Fuses the pixel-aligned `local` triplets of `view` into `global`.
pub fn fuse_view(global: &TripletSet, local: &TripletSet, view: &CameraView, delta: f64, mode: &FeatureFusion) -> Result<(TripletSet, FusionStats)> {
    check_delta(delta)?;
    let (w, h) = (view.width(), view.height());
    if local.len() != w * h {
        return Err(Error::mismatch(format!(
            "local set has {} triplets for a {w}x{h} view",
            local.len()
        )));
    }
    if local.feature_dim != global.feature_dim {
        return Err(Error::mismatch(format!(
            "feature dims differ: local {} vs global {}",
            local.feature_dim, global.feature_dim
        )));
    }
    if let FeatureFusion::Gru(p) = mode {
        if p.dim() != local.feature_dim {
            return Err(Error::mismatch(format!(
                "GRU dim {} vs feature dim {}",
                p.dim(),
                local.feature_dim
            )));
        }
    }
    if global.is_empty() {
        let stats = FusionStats::new(0, local.len(), 0);
        return Ok((local.clone(), stats));
    }

    let local_depths = ScalarMap {
        width: w,
        height: h,
        data: local
            .centers
            .par_iter()
            .map(|c| project(c, &view.pose, &view.intrinsics).depth)
            .collect(),
    };
    let projections = project_global(global, view);
    let corr = pixel_wise_alignment(&local_depths, &projections, delta)?;

    let merged: Vec<(usize, Vector3<f64>, f64, Vec<f64>)> = corr
        .pairs
        .par_iter()
        .map(|&(i, j)| {
            let (wl, wg) = (local.weights[i], global.weights[j]);
            let (c, wt) = merge_pair(&local.centers[i], wl, &global.centers[j], wg)?;
            let f = gru_update(local.feature(i), global.feature(j), wl, wg, mode)?;
            Ok((j, c, wt, f))
        })
        .collect::<Result<_>>()?;

    let mut out = global.clone();
    let mut is_matched = vec![false; local.len()];
    for &(i, _) in &corr.pairs {
        is_matched[i] = true;
    }
    for (j, c, wt, f) in merged {
        out.centers[j] = c;
        out.weights[j] = wt;
        out.feature_mut(j).copy_from_slice(&f);
        out.sources[j] = None;
    }
    for i in (0..local.len()).filter(|&i| !is_matched[i]) {
        out.push(local.centers[i], local.weights[i], local.feature(i), local.sources[i]);
    }
    let stats = FusionStats::new(global.len(), local.len(), corr.matched);
    debug_assert_eq!(out.len(), stats.output);
    Ok((out, stats))
}
