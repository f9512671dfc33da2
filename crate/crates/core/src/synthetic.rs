//! Procedural indoor scenes with exact ground-truth depth.
//!
//! Geometry is a handful of axis-aligned textured rectangles, ray-cast in
//! closed form. World coordinates have `+y` pointing down so camera and
//! world axes agree for level cameras.

use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use crate::camera::{pixel_of, project, unproject, CameraView, Intrinsics, Pose};
use crate::grid::{ColorImage, ScalarMap};
use crate::io::dataset::write_scene;
use crate::{Error, Result};

/// Minimum fraction of pixels that must see geometry in every view.
pub const MIN_COVERAGE: f64 = 0.5;
/// Minimum fraction of co-visible pixels between consecutive views of a
/// looping trajectory.
pub const MIN_LOOP_OVERLAP: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    BoxRoom,
    Corridor,
    PlaneWall,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "box-room" => Ok(Preset::BoxRoom),
            "corridor" => Ok(Preset::Corridor),
            "plane-wall" => Ok(Preset::PlaneWall),
            _ => Err(Error::invalid(format!("unknown preset {s:?} (box-room, corridor, plane-wall)"))),
        }
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Preset::BoxRoom => "box-room",
            Preset::Corridor => "corridor",
            Preset::PlaneWall => "plane-wall",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub preset: Preset,
    pub seed: u64,
    pub views: usize,
    pub width: usize,
    pub height: usize,
    /// Plane-wall only: depth of the wall in meters.
    pub wall_depth: f64,
    /// Plane-wall only: camera spacing along `x` in meters.
    pub baseline: f64,
}

impl SceneSpec {
    pub fn new(preset: Preset, seed: u64, views: usize, width: usize, height: usize) -> Self {
        Self {
            preset,
            seed,
            views,
            width,
            height,
            wall_depth: 2.0,
            baseline: 0.3,
        }
    }
}

/// Axis-aligned rectangle: `coord[axis] = offset`, bounded on the other two
/// axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub axis: usize,
    pub offset: f64,
    pub min: [f64; 2],
    pub max: [f64; 2],
    /// Checker cell size in meters.
    pub cell: f64,
}

impl Rect {
    fn others(&self) -> (usize, usize) {
        ((self.axis + 1) % 3, (self.axis + 2) % 3)
    }

    /// Ray parameter of the hit, if any.
    fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        let da = d[self.axis];
        if da.abs() < 1e-15 {
            return None;
        }
        let t = (self.offset - o[self.axis]) / da;
        if !(t > 0.0) {
            return None;
        }
        let (a, b) = self.others();
        let (pa, pb) = (o[a] + t * d[a], o[b] + t * d[b]);
        (pa >= self.min[0] && pa <= self.max[0] && pb >= self.min[1] && pb <= self.max[1]).then_some(t)
    }
}

/// Seeded lattice values for checker colors and value noise.
#[derive(Debug, Clone)]
struct Lattice {
    perm: [u8; 512],
    values: [f64; 256],
}

impl Lattice {
    fn new(seed: u64) -> Self {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut p: Vec<u8> = (0..=255).collect();
        for i in (1..256).rev() {
            let j = rng.random_range(0..=i);
            p.swap(i, j);
        }
        let mut perm = [0u8; 512];
        for i in 0..512 {
            perm[i] = p[i & 255];
        }
        let mut values = [0.0; 256];
        for v in values.iter_mut() {
            *v = rng.random();
        }
        Self { perm, values }
    }

    fn at(&self, i: i64, j: i64, layer: usize) -> f64 {
        let a = self.perm[(i & 255) as usize] as usize + (j & 255) as usize;
        let h = self.perm[self.perm[a] as usize + (layer & 255)];
        self.values[h as usize]
    }

    /// Smooth value noise in `[0, 1]`.
    fn noise(&self, s: f64, t: f64, layer: usize) -> f64 {
        let (i, j) = (s.floor(), t.floor());
        let (fs, ft) = (s - i, t - j);
        let (ws, wt) = (fs * fs * (3.0 - 2.0 * fs), ft * ft * (3.0 - 2.0 * ft));
        let (i, j) = (i as i64, j as i64);
        let a = self.at(i, j, layer) + ws * (self.at(i + 1, j, layer) - self.at(i, j, layer));
        let b = self.at(i, j + 1, layer) + ws * (self.at(i + 1, j + 1, layer) - self.at(i, j + 1, layer));
        a + wt * (b - a)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub spec: SceneSpec,
    pub rects: Vec<Rect>,
    pub poses: Vec<Pose>,
    pub intrinsics: Intrinsics,
    lattice: Lattice,
    light: Vector3<f64>,
}

fn level_pose(eye: Vector3<f64>, yaw: f64, pitch: f64) -> Result<Pose> {
    let dir = Vector3::new(yaw.sin() * pitch.cos(), pitch.sin(), yaw.cos() * pitch.cos());
    Pose::look_at(eye, eye + dir, Vector3::new(0.0, -1.0, 0.0))
}

fn room(x: [f64; 2], y: [f64; 2], z: [f64; 2], cell: f64) -> Vec<Rect> {
    let r = |axis: usize, offset: f64, lo: [f64; 2], hi: [f64; 2]| Rect {
        axis,
        offset,
        min: lo,
        max: hi,
        cell,
    };
    // Bounds are on axes (axis + 1) % 3 and (axis + 2) % 3.
    vec![
        r(0, x[0], [y[0], z[0]], [y[1], z[1]]),
        r(0, x[1], [y[0], z[0]], [y[1], z[1]]),
        r(1, y[0], [z[0], x[0]], [z[1], x[1]]),
        r(1, y[1], [z[0], x[0]], [z[1], x[1]]),
        r(2, z[0], [x[0], y[0]], [x[1], y[1]]),
        r(2, z[1], [x[0], y[0]], [x[1], y[1]]),
    ]
}

impl SyntheticScene {
    pub fn build(spec: SceneSpec) -> Result<Self> {
        if spec.views < 2 {
            return Err(Error::invalid(format!("need at least 2 views, got {}", spec.views)));
        }
        if spec.width == 0 || spec.height == 0 || spec.width % 4 != 0 || spec.height % 4 != 0 {
            return Err(Error::invalid(format!("resolution {}x{} must be a positive multiple of 4", spec.width, spec.height)));
        }
        let (w, h) = (spec.width as f64, spec.height as f64);
        let intrinsics = Intrinsics::new(0.8 * w, 0.8 * w, w / 2.0, h / 2.0, spec.width, spec.height)?;
        let n = spec.views;
        let (rects, poses) = match spec.preset {
            Preset::PlaneWall => {
                if !(spec.wall_depth > 0.0 && spec.baseline > 0.0) {
                    return Err(Error::invalid("wall depth and baseline must be positive"));
                }
                let wall = Rect {
                    axis: 2,
                    offset: spec.wall_depth,
                    min: [-100.0, -100.0],
                    max: [100.0, 100.0],
                    cell: 0.12,
                };
                let poses = (0..n).map(|i| Pose::from_translation(Vector3::new(i as f64 * spec.baseline, 0.0, 0.0))).collect();
                (vec![wall], poses)
            }
            Preset::BoxRoom => {
                let rects = room([-3.0, 3.0], [-1.4, 1.4], [-3.0, 3.0], 0.25);
                let poses = (0..n)
                    .map(|i| {
                        let phi = std::f64::consts::TAU * i as f64 / n as f64;
                        let eye = Vector3::new(0.35 * phi.cos(), 0.1 * phi.sin(), 0.35 * phi.sin());
                        level_pose(eye, 0.3 + 0.35 * phi.sin(), 0.12)
                    })
                    .collect::<Result<_>>()?;
                (rects, poses)
            }
            Preset::Corridor => {
                let rects = room([-1.2, 1.2], [-1.3, 1.3], [-1.0, 10.0], 0.2);
                let poses = (0..n)
                    .map(|i| {
                        let t = i as f64;
                        let eye = Vector3::new(0.4 * (2.0 * t).sin(), 0.05 * (1.3 * t).cos(), 0.25 * t);
                        level_pose(eye, 0.1 * (2.0 * t).sin(), 0.05)
                    })
                    .collect::<Result<_>>()?;
                (rects, poses)
            }
        };
        Ok(Self {
            spec,
            rects,
            poses,
            intrinsics,
            lattice: Lattice::new(spec.seed),
            light: Vector3::new(0.3, -1.0, 0.5).normalize(),
        })
    }

    /// Nearest hit along a world ray: `(t, rect index)`.
    fn cast(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, usize)> {
        self.rects
            .iter()
            .enumerate()
            .filter_map(|(k, r)| r.intersect(o, d).map(|t| (t, k)))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
    }

    fn ray(&self, view: usize, u: f64, v: f64) -> (Vector3<f64>, Vector3<f64>) {
        let pose = &self.poses[view];
        let k = &self.intrinsics;
        let d_cam = Vector3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
        (pose.center(), pose.rotation() * d_cam)
    }

    /// Camera-space depth of the surface seen at `(u, v)` in `view`.
    pub fn depth_at(&self, view: usize, u: f64, v: f64) -> Option<f64> {
        let (o, d) = self.ray(view, u, v);
        // `d` has unit camera-z, so the ray parameter is the depth.
        self.cast(&o, &d).map(|(t, _)| t)
    }

    fn albedo(&self, rect: usize, p: &Vector3<f64>) -> [f64; 3] {
        let r = &self.rects[rect];
        let (a, b) = r.others();
        let (s, t) = (p[a] / r.cell, p[b] / r.cell);
        let (ci, cj) = (s.floor() as i64, t.floor() as i64);
        let layer = rect * 8;
        let n = 0.7 + 0.3 * self.lattice.noise(3.0 * s, 3.0 * t, layer + 7);
        [0, 1, 2].map(|c| (0.1 + 0.85 * self.lattice.at(ci, cj, layer + c)) * n)
    }

    fn shade(&self, view: usize, u: f64, v: f64) -> [f64; 3] {
        let (o, d) = self.ray(view, u, v);
        match self.cast(&o, &d) {
            None => [0.0; 3],
            Some((t, k)) => {
                let p = o + d * t;
                let mut normal = Vector3::zeros();
                normal[self.rects[k].axis] = 1.0;
                let lambert = 0.45 + 0.55 * normal.dot(&self.light).abs();
                self.albedo(k, &p).map(|c| (c * lambert).clamp(0.0, 1.0))
            }
        }
    }

    /// Color (2x2 supersampled) and ground-truth depth (pixel-center ray)
    /// for one view. Pixels that see no geometry have depth 0.
    pub fn render_view(&self, view: usize) -> (ColorImage, ScalarMap) {
        let (w, h) = (self.spec.width, self.spec.height);
        let rows: Vec<(Vec<[f64; 3]>, Vec<f64>)> = (0..h)
            .into_par_iter()
            .map(|y| {
                let mut colors = Vec::with_capacity(w);
                let mut depths = Vec::with_capacity(w);
                for x in 0..w {
                    let (u, v) = (x as f64 + 0.5, y as f64 + 0.5);
                    let mut c = [0.0; 3];
                    for (du, dv) in [(-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25)] {
                        let s = self.shade(view, u + du, v + dv);
                        for k in 0..3 {
                            c[k] += 0.25 * s[k];
                        }
                    }
                    colors.push(c);
                    depths.push(self.depth_at(view, u, v).unwrap_or(0.0));
                }
                (colors, depths)
            })
            .collect();
        let mut color = ColorImage::new(w, h, [0.0; 3]);
        let mut depth = ScalarMap::new(w, h, 0.0);
        for (y, (cs, ds)) in rows.into_iter().enumerate() {
            color.data[y * w..(y + 1) * w].copy_from_slice(&cs);
            depth.data[y * w..(y + 1) * w].copy_from_slice(&ds);
        }
        (color, depth)
    }

    /// Renders every view, validating coverage and (for the looping
    /// box-room trajectory) consecutive overlap.
    pub fn render_all(&self) -> Result<(Vec<CameraView>, Vec<ScalarMap>)> {
        let rendered: Vec<(ColorImage, ScalarMap)> = (0..self.poses.len()).into_par_iter().map(|i| self.render_view(i)).collect();
        let mut views = Vec::with_capacity(rendered.len());
        let mut depths = Vec::with_capacity(rendered.len());
        for (i, (img, d)) in rendered.into_iter().enumerate() {
            let cov = coverage(&d);
            if cov < MIN_COVERAGE {
                return Err(Error::invalid(format!("view {i} sees only {:.1}% geometry", 100.0 * cov)));
            }
            views.push(CameraView::new(img, self.intrinsics, self.poses[i], i)?);
            depths.push(d);
        }
        if self.spec.preset == Preset::BoxRoom {
            let n = views.len();
            for i in 0..n {
                let j = (i + 1) % n;
                let ov = overlap_fraction(&depths[i], &self.poses[i], &depths[j], &self.poses[j], &self.intrinsics);
                if ov < MIN_LOOP_OVERLAP {
                    return Err(Error::invalid(format!("views {i} and {j} overlap by only {:.1}%", 100.0 * ov)));
                }
            }
        }
        Ok((views, depths))
    }

    /// Near/far hint covering the ground-truth depths with some margin.
    pub fn depth_range(depths: &[ScalarMap]) -> Option<(f64, f64)> {
        let valid = depths.iter().flat_map(|d| d.data.iter().copied()).filter(|&v| v > 0.0);
        let (lo, hi) = valid.fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
        (hi > 0.0).then(|| (0.9 * lo, 1.1 * hi))
    }
}

/// Fraction of pixels with geometry.
pub fn coverage(depth: &ScalarMap) -> f64 {
    depth.data.iter().filter(|&&d| d > 0.0).count() as f64 / depth.len().max(1) as f64
}

/// Fraction of view-a pixels whose surface point is visible in view b:
/// it projects inside b and agrees with b's depth at that pixel within 2%.
pub fn overlap_fraction(depth_a: &ScalarMap, pose_a: &Pose, depth_b: &ScalarMap, pose_b: &Pose, intr: &Intrinsics) -> f64 {
    let (w, h) = (depth_a.width, depth_a.height);
    let mut hits = 0usize;
    for y in 0..h {
        for x in 0..w {
            let d = depth_a.get(x, y);
            if d <= 0.0 {
                continue;
            }
            let Ok(p) = unproject(x as f64 + 0.5, y as f64 + 0.5, d, pose_a, intr) else {
                continue;
            };
            let q = project(&p, pose_b, intr);
            if q.depth <= 0.0 {
                continue;
            }
            if let Some((bx, by)) = pixel_of(q.u, q.v, w, h) {
                let db = depth_b.get(bx, by);
                if db > 0.0 && (db - q.depth).abs() <= 0.02 * q.depth {
                    hits += 1;
                }
            }
        }
    }
    hits as f64 / (w * h) as f64
}

/// In-memory result of [`generate_scene`].
#[derive(Debug, Clone)]
pub struct GeneratedScene {
    pub scene: SyntheticScene,
    pub views: Vec<CameraView>,
    pub depths: Vec<ScalarMap>,
}

/// Builds, renders and validates a scene, then writes it to `dir` in the
/// dataset layout.
pub fn generate_scene(spec: SceneSpec, dir: &Path) -> Result<GeneratedScene> {
    let scene = SyntheticScene::build(spec)?;
    let (views, depths) = scene.render_all()?;
    write_scene(dir, &views, Some(&depths), SyntheticScene::depth_range(&depths))?;
    Ok(GeneratedScene { scene, views, depths })
}
