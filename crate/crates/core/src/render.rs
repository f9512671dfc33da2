//! Tile-based forward Gaussian splatting.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3};
use rayon::prelude::*;

use crate::camera::{Intrinsics, Pose};
use crate::decode::{GaussianPrimitiveSet, SH_C0};
use crate::grid::{ColorImage, ScalarMap};
use crate::{Error, Result};

/// First-band real SH constant.
pub const SH_C1: f64 = 0.488_602_511_902_919_9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    pub background: [f64; 3],
    pub tile_size: usize,
    /// Binning radius in standard deviations.
    pub sigma_extent: f64,
    /// Added to the diagonal of every projected covariance, px².
    pub low_pass: f64,
    pub alpha_cap: f64,
    pub min_alpha: f64,
    /// Compositing stops once transmittance falls below this. Zero disables
    /// early exit.
    pub min_transmittance: f64,
    pub near: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            background: [0.0; 3],
            tile_size: 16,
            sigma_extent: 3.0,
            low_pass: 0.3,
            alpha_cap: 0.99,
            min_alpha: 1.0 / 255.0,
            min_transmittance: 1e-4,
            near: 0.01,
        }
    }
}

impl RenderConfig {
    pub fn with_background(background: [f64; 3]) -> Self {
        Self {
            background,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splat2D {
    pub mean: [f64; 2],
    pub covariance: Matrix2<f64>,
    /// Inverse of `covariance`.
    pub conic: Matrix2<f64>,
    pub depth: f64,
    pub color: [f64; 3],
    pub opacity: f64,
    /// Bounding radius in pixels.
    pub radius: f64,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFrame {
    pub color: ColorImage,
    pub depth: ScalarMap,
    pub alpha: ScalarMap,
}

/// `d(u, v) / d(x, y, z)` of the pinhole projection at camera-space `p`.
pub fn pinhole_jacobian(p: &Vector3<f64>, intr: &Intrinsics) -> Matrix2x3<f64> {
    let iz = 1.0 / p.z;
    Matrix2x3::new(
        intr.fx * iz,
        0.0,
        -intr.fx * p.x * iz * iz,
        0.0,
        intr.fy * iz,
        -intr.fy * p.y * iz * iz,
    )
}

/// Evaluates degree 0 or 1 SH (`coeffs` coefficient-major, then RGB) along
/// a unit direction, clamped to `[0, 1]`.
pub fn evaluate_sh(coeffs: &[f64], dir: &Vector3<f64>) -> Result<[f64; 3]> {
    let n = dir.norm();
    if (n - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!("SH direction has norm {n}")));
    }
    let basis: &[f64] = match coeffs.len() {
        3 => &[SH_C0],
        12 => &[SH_C0, -SH_C1 * dir.y, SH_C1 * dir.z, -SH_C1 * dir.x],
        k => return Err(Error::mismatch(format!("{k} SH coefficients, expected 3 or 12"))),
    };
    let mut rgb = [0.5; 3];
    for (k, b) in basis.iter().enumerate() {
        for (c, out) in rgb.iter_mut().enumerate() {
            *out += b * coeffs[3 * k + c];
        }
    }
    Ok(rgb.map(|v| v.clamp(0.0, 1.0)))
}

struct Camera {
    rot: Matrix3<f64>,
    trans: Vector3<f64>,
    center: Vector3<f64>,
}

impl Camera {
    fn new(pose: &Pose) -> Self {
        let w2c = pose.world_to_camera();
        Self {
            rot: w2c.rotation,
            trans: w2c.translation,
            center: pose.center(),
        }
    }
}

fn project_with(prims: &GaussianPrimitiveSet, i: usize, cam: &Camera, intr: &Intrinsics, cfg: &RenderConfig) -> Result<Option<Splat2D>> {
    let mu = Vector3::from(prims.mean(i));
    let p = cam.rot * mu + cam.trans;
    if !(p.z > cfg.near) {
        return Ok(None);
    }
    let j = pinhole_jacobian(&p, intr);
    let jw = j * cam.rot;
    let cov3 = prims.covariance(i)?;
    let mut cov = jw * cov3 * jw.transpose();
    cov[(0, 1)] = 0.5 * (cov[(0, 1)] + cov[(1, 0)]);
    cov[(1, 0)] = cov[(0, 1)];
    cov[(0, 0)] += cfg.low_pass;
    cov[(1, 1)] += cfg.low_pass;
    let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(0, 1)];
    if !(det > 0.0) {
        return Ok(None);
    }
    let conic = Matrix2::new(cov[(1, 1)], -cov[(0, 1)], -cov[(1, 0)], cov[(0, 0)]) / det;
    let mid = 0.5 * (cov[(0, 0)] + cov[(1, 1)]);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    let dir = (mu - cam.center).normalize();
    let sh: Vec<f64> = prims.sh_of(i).iter().map(|&c| f64::from(c)).collect();
    Ok(Some(Splat2D {
        mean: [intr.fx * p.x / p.z + intr.cx, intr.fy * p.y / p.z + intr.cy],
        covariance: cov,
        conic,
        depth: p.z,
        color: evaluate_sh(&sh, &dir)?,
        opacity: prims.opacity(i),
        radius: cfg.sigma_extent * lambda_max.sqrt(),
        index: i,
    }))
}

/// Projects primitive `i` to the image plane; `None` when it is culled.
pub fn project_gaussian(prims: &GaussianPrimitiveSet, i: usize, pose: &Pose, intr: &Intrinsics, cfg: &RenderConfig) -> Result<Option<Splat2D>> {
    project_with(prims, i, &Camera::new(pose), intr, cfg)
}

/// Renders color, alpha-weighted depth and alpha.
pub fn render(prims: &GaussianPrimitiveSet, pose: &Pose, intr: &Intrinsics, cfg: &RenderConfig) -> Result<RenderedFrame> {
    prims.validate()?;
    intr.validate()?;
    if cfg.tile_size == 0 {
        return Err(Error::invalid("tile size must be positive"));
    }
    let cam = Camera::new(pose);
    let projected: Vec<Option<Splat2D>> = (0..prims.len())
        .into_par_iter()
        .map(|i| project_with(prims, i, &cam, intr, cfg))
        .collect::<Result<_>>()?;
    let mut splats: Vec<Splat2D> = projected.into_iter().flatten().collect();
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));

    let (w, h, ts) = (intr.width, intr.height, cfg.tile_size);
    let (tx, ty) = (w.div_ceil(ts), h.div_ceil(ts));
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tx * ty];
    for (s, sp) in splats.iter().enumerate() {
        // Pixel columns whose centers fall inside the bounding square.
        let x0 = (sp.mean[0] - sp.radius - 0.5).ceil().max(0.0);
        let x1 = (sp.mean[0] + sp.radius - 0.5).floor().min(w as f64 - 1.0);
        let y0 = (sp.mean[1] - sp.radius - 0.5).ceil().max(0.0);
        let y1 = (sp.mean[1] + sp.radius - 0.5).floor().min(h as f64 - 1.0);
        if !(x0 <= x1 && y0 <= y1) {
            continue;
        }
        let (x0, x1, y0, y1) = (x0 as usize / ts, x1 as usize / ts, y0 as usize / ts, y1 as usize / ts);
        for by in y0..=y1 {
            for bx in x0..=x1 {
                bins[by * tx + bx].push(s as u32);
            }
        }
    }

    let tiles: Vec<Vec<([f64; 3], f64, f64)>> = (0..tx * ty)
        .into_par_iter()
        .map(|t| {
            let (bx, by) = (t % tx, t / tx);
            let mut out = Vec::with_capacity(ts * ts);
            for y in by * ts..((by + 1) * ts).min(h) {
                for x in bx * ts..((bx + 1) * ts).min(w) {
                    out.push(shade_pixel(&splats, &bins[t], x, y, cfg));
                }
            }
            out
        })
        .collect();

    let mut color = ColorImage::new(w, h, [0.0; 3]);
    let mut depth = ScalarMap::new(w, h, 0.0);
    let mut alpha = ScalarMap::new(w, h, 0.0);
    for (t, px) in tiles.into_iter().enumerate() {
        let (bx, by) = (t % tx, t / tx);
        let mut it = px.into_iter();
        for y in by * ts..((by + 1) * ts).min(h) {
            for x in bx * ts..((bx + 1) * ts).min(w) {
                let (c, d, a) = it.next().expect("tile pixel count");
                color.set(x, y, c);
                depth.set(x, y, d);
                alpha.set(x, y, a);
            }
        }
    }
    Ok(RenderedFrame { color, depth, alpha })
}

fn shade_pixel(splats: &[Splat2D], list: &[u32], x: usize, y: usize, cfg: &RenderConfig) -> ([f64; 3], f64, f64) {
    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
    let mut t = 1.0;
    let mut c = [0.0; 3];
    let mut d = 0.0;
    for &s in list {
        let sp = &splats[s as usize];
        let (dx, dy) = (px - sp.mean[0], py - sp.mean[1]);
        let q = sp.conic[(0, 0)] * dx * dx + 2.0 * sp.conic[(0, 1)] * dx * dy + sp.conic[(1, 1)] * dy * dy;
        let a = (sp.opacity * (-0.5 * q).exp()).min(cfg.alpha_cap);
        if a < cfg.min_alpha {
            continue;
        }
        let wgt = a * t;
        for k in 0..3 {
            c[k] += sp.color[k] * wgt;
        }
        d += sp.depth * wgt;
        t *= 1.0 - a;
        if t < cfg.min_transmittance {
            break;
        }
    }
    let alpha = 1.0 - t;
    for k in 0..3 {
        c[k] = (c[k] + t * cfg.background[k]).clamp(0.0, 1.0);
    }
    let depth = if alpha > 1e-6 { d / alpha } else { 0.0 };
    (c, depth, alpha)
}
