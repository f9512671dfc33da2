//! Scene directories:
//!
//! ```text
//! intrinsics.txt        3x3 row-major
//! images/000000.png     8- or 16-bit RGB
//! poses/000000.txt      4x4 row-major camera-to-world
//! depths/000000.png     optional, 16-bit millimeters, 0 = invalid
//! meta.txt              optional `near = ..` / `far = ..` hints
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb};
use nalgebra::{Matrix3, Matrix4};
use rayon::prelude::*;

use crate::camera::{CameraView, Intrinsics, Pose};
use crate::grid::{ColorImage, ScalarMap};
use crate::io::config::parse_key_values;
use crate::{Error, Result};

/// Rotations further than this from orthonormal are rejected on load.
pub const POSE_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct SceneDataset {
    pub root: PathBuf,
    pub views: Vec<CameraView>,
    pub gt_depths: Option<Vec<ScalarMap>>,
    pub intrinsics: Intrinsics,
    pub depth_range: Option<(f64, f64)>,
}

impl SceneDataset {
    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn poses(&self) -> Vec<Pose> {
        self.views.iter().map(|v| v.pose).collect()
    }

    pub fn view(&self, i: usize) -> Result<&CameraView> {
        self.views
            .get(i)
            .ok_or_else(|| Error::invalid(format!("view {i} out of range (scene has {})", self.views.len())))
    }
}

pub fn image_path(root: &Path, i: usize) -> PathBuf {
    root.join("images").join(format!("{i:06}.png"))
}

pub fn pose_path(root: &Path, i: usize) -> PathBuf {
    root.join("poses").join(format!("{i:06}.txt"))
}

pub fn depth_path(root: &Path, i: usize) -> PathBuf {
    root.join("depths").join(format!("{i:06}.png"))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_numbers(path: &Path, text: &str, expected: usize) -> Result<Vec<f64>> {
    let vals = text
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| Error::parse(path, format!("not a number: {t:?}"))))
        .collect::<Result<Vec<_>>>()?;
    if vals.len() != expected {
        return Err(Error::parse(path, format!("expected {expected} numbers, found {}", vals.len())));
    }
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::parse(path, "non-finite value"));
    }
    Ok(vals)
}

pub fn read_pose(path: &Path) -> Result<Pose> {
    let v = parse_numbers(path, &read_text(path)?, 16)?;
    let m = Matrix4::from_row_slice(&v);
    Pose::from_matrix(&m, POSE_TOLERANCE).map_err(|e| Error::parse(path, e.to_string()))
}

fn format_rows(rows: usize, cols: usize, get: impl Fn(usize, usize) -> f64) -> String {
    let mut s = String::new();
    for r in 0..rows {
        let line: Vec<String> = (0..cols).map(|c| get(r, c).to_string()).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_pose(path: &Path, pose: &Pose) -> Result<()> {
    let m = pose.to_matrix();
    write_text(path, &format_rows(4, 4, |r, c| m[(r, c)]))
}

/// Reads a 3x3 intrinsics matrix for images of the given size.
pub fn read_intrinsics(path: &Path, width: usize, height: usize) -> Result<Intrinsics> {
    let v = parse_numbers(path, &read_text(path)?, 9)?;
    let k = Matrix3::from_row_slice(&v);
    if k[(0, 1)].abs() > 1e-9 || k[(1, 0)].abs() > 1e-9 || k[(2, 0)].abs() > 1e-9 || k[(2, 1)].abs() > 1e-9 || (k[(2, 2)] - 1.0).abs() > 1e-9 {
        return Err(Error::parse(path, "intrinsics must be [fx 0 cx; 0 fy cy; 0 0 1]"));
    }
    Intrinsics::new(k[(0, 0)], k[(1, 1)], k[(0, 2)], k[(1, 2)], width, height).map_err(|e| Error::parse(path, e.to_string()))
}

pub fn write_intrinsics(path: &Path, intr: &Intrinsics) -> Result<()> {
    let k = intr.matrix();
    write_text(path, &format_rows(3, 3, |r, c| k[(r, c)]))
}

fn open_image(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|source| match source {
        image::ImageError::IoError(e) => Error::io(path, e),
        source => Error::Image {
            path: path.to_path_buf(),
            source,
        },
    })
}

/// Loads an RGB image normalized to `[0, 1]`.
pub fn read_color_png(path: &Path) -> Result<ColorImage> {
    let img = open_image(path)?.into_rgb16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| p.0.map(|c| f64::from(c) / 65535.0)).collect();
    Ok(ColorImage {
        width: w,
        height: h,
        data,
    })
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        _ => Ok(()),
    }
}

fn save<P, C>(path: &Path, img: &ImageBuffer<P, C>) -> Result<()>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    ensure_parent(path)?;
    img.save_with_format(path, image::ImageFormat::Png).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes an 8-bit RGB PNG, rounding and clamping each channel.
pub fn write_color_png(path: &Path, img: &ColorImage) -> Result<()> {
    let buf = ImageBuffer::from_fn(img.width as u32, img.height as u32, |x, y| {
        Rgb(img.get(x as usize, y as usize).map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8))
    });
    save(path, &buf)
}

/// Loads a 16-bit millimeter depth PNG as meters.
pub fn read_depth_png(path: &Path) -> Result<ScalarMap> {
    let img = open_image(path)?;
    if !matches!(img.color(), image::ColorType::L16 | image::ColorType::L8) {
        return Err(Error::parse(path, format!("depth must be single-channel, found {:?}", img.color())));
    }
    let img = img.into_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| f64::from(p.0[0]) / 1000.0).collect();
    Ok(ScalarMap {
        width: w,
        height: h,
        data,
    })
}

/// Writes depth in meters as 16-bit millimeters; non-positive or
/// non-finite values become 0, values beyond 65.535 m saturate.
pub fn write_depth_png(path: &Path, depth: &ScalarMap) -> Result<()> {
    let buf = ImageBuffer::from_fn(depth.width as u32, depth.height as u32, |x, y| {
        let d = depth.get(x as usize, y as usize);
        let mm = if d > 0.0 && d.is_finite() { (d * 1000.0).round().min(65535.0) } else { 0.0 };
        Luma([mm as u16])
    });
    save(path, &buf)
}

fn read_meta(path: &Path) -> Result<Option<(f64, f64)>> {
    if !path.exists() {
        return Ok(None);
    }
    let kv = parse_key_values(path, &read_text(path)?)?;
    let get = |k: &str| -> Result<Option<f64>> {
        kv.iter()
            .find(|(key, _, _)| key == k)
            .map(|(_, v, line)| v.parse::<f64>().map_err(|_| Error::parse(path, format!("line {line}: {k} is not a number"))))
            .transpose()
    };
    match (get("near")?, get("far")?) {
        (Some(n), Some(f)) if n > 0.0 && f > n => Ok(Some((n, f))),
        (None, None) => Ok(None),
        _ => Err(Error::parse(path, "near/far hints must both be set with 0 < near < far")),
    }
}

fn count_views(root: &Path) -> Result<usize> {
    let dir = root.join("images");
    let entries = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut indices = Vec::new();
    for e in entries {
        let e = e.map_err(|err| Error::io(&dir, err))?;
        let name = e.file_name();
        let name = name.to_string_lossy();
        if let Some(stem) = name.strip_suffix(".png") {
            let i: usize = stem.parse().map_err(|_| Error::parse(e.path(), "image names must be zero-padded indices"))?;
            indices.push(i);
        }
    }
    indices.sort_unstable();
    if indices.is_empty() {
        return Err(Error::parse(&dir, "no images found"));
    }
    if let Some(gap) = indices.iter().enumerate().position(|(k, &i)| k != i) {
        return Err(Error::parse(image_path(root, gap), "image indices must be contiguous from 0"));
    }
    Ok(indices.len())
}

pub fn load_scene(root: &Path) -> Result<SceneDataset> {
    if !root.is_dir() {
        return Err(Error::io(root, std::io::Error::new(std::io::ErrorKind::NotFound, "scene directory not found")));
    }
    let n = count_views(root)?;
    let images = (0..n).into_par_iter().map(|i| read_color_png(&image_path(root, i))).collect::<Result<Vec<_>>>()?;
    let (w, h) = (images[0].width, images[0].height);
    if let Some(i) = images.iter().position(|im| im.width != w || im.height != h) {
        return Err(Error::parse(image_path(root, i), format!("size {}x{} differs from {w}x{h}", images[i].width, images[i].height)));
    }
    let intrinsics = read_intrinsics(&root.join("intrinsics.txt"), w, h)?;
    let poses = (0..n).map(|i| read_pose(&pose_path(root, i))).collect::<Result<Vec<_>>>()?;
    let gt_depths = if root.join("depths").is_dir() {
        let d = (0..n).into_par_iter().map(|i| read_depth_png(&depth_path(root, i))).collect::<Result<Vec<_>>>()?;
        if let Some(i) = d.iter().position(|m| m.width != w || m.height != h) {
            return Err(Error::parse(depth_path(root, i), format!("depth size differs from {w}x{h}")));
        }
        Some(d)
    } else {
        None
    };
    let views = images
        .into_iter()
        .zip(poses)
        .enumerate()
        .map(|(i, (img, pose))| CameraView::new(img, intrinsics, pose, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(SceneDataset {
        root: root.to_path_buf(),
        views,
        gt_depths,
        intrinsics,
        depth_range: read_meta(&root.join("meta.txt"))?,
    })
}

/// Writes a scene directory in the layout read by [`load_scene`].
pub fn write_scene(root: &Path, views: &[CameraView], depths: Option<&[ScalarMap]>, depth_range: Option<(f64, f64)>) -> Result<()> {
    let first = views.first().ok_or_else(|| Error::invalid("cannot write a scene without views"))?;
    if let Some(d) = depths {
        if d.len() != views.len() {
            return Err(Error::mismatch(format!("{} depth maps for {} views", d.len(), views.len())));
        }
    }
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    write_intrinsics(&root.join("intrinsics.txt"), &first.intrinsics)?;
    views
        .par_iter()
        .enumerate()
        .try_for_each(|(i, v)| -> Result<()> {
            write_color_png(&image_path(root, i), &v.image)?;
            write_pose(&pose_path(root, i), &v.pose)?;
            if let Some(d) = depths {
                write_depth_png(&depth_path(root, i), &d[i])?;
            }
            Ok(())
        })?;
    if let Some((near, far)) = depth_range {
        write_text(&root.join("meta.txt"), &format!("near = {near}\nfar = {far}\n"))?;
    }
    Ok(())
}
