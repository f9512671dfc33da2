//! Dense row-major image containers.
//!
//! Continuous image coordinates place the center of pixel `(x, y)` at
//! `(x + 0.5, y + 0.5)`; the image covers `[0, width] x [0, height]`.

use crate::{Error, Result};

/// Row-major RGB image with channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 3]>,
}

impl ColorImage {
    pub fn new(width: usize, height: usize, fill: [f64; 3]) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: [f64; 3]) {
        self.data[y * self.width + x] = v;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rec. 601 luma of every pixel.
    pub fn luma(&self) -> ScalarMap {
        ScalarMap {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&c| luma(c)).collect(),
        }
    }

    pub fn ensure_same_shape(&self, other: &ColorImage) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::mismatch(format!(
                "image {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }
}

#[inline]
pub fn luma(c: [f64; 3]) -> f64 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

/// Row-major single-channel map (depth, weights, luma).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ScalarMap {
    pub fn new(width: usize, height: usize, fill: f64) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ensure_shape(&self, width: usize, height: usize, what: &str) -> Result<()> {
        if self.width != width || self.height != height {
            return Err(Error::mismatch(format!(
                "{what} is {}x{}, expected {width}x{height}",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Bilinear interpolation weights for a continuous *index* coordinate
/// (pixel `i` sits at index coordinate `i`), clamped to the grid edge.
///
/// Returns `(x0, x1, y0, y1, fx, fy)` with `fx, fy` in `[0, 1]`.
#[inline]
pub(crate) fn bilinear_taps(
    sx: f64,
    sy: f64,
    width: usize,
    height: usize,
) -> (usize, usize, usize, usize, f64, f64) {
    let cx = sx.clamp(0.0, (width - 1) as f64);
    let cy = sy.clamp(0.0, (height - 1) as f64);
    let x0 = cx.floor() as usize;
    let y0 = cy.floor() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    (x0, x1, y0, y1, cx - x0 as f64, cy - y0 as f64)
}

/// Bilinear sample of a row-major scalar plane at index coordinates.
#[inline]
pub(crate) fn sample_plane(plane: &[f64], width: usize, height: usize, sx: f64, sy: f64) -> f64 {
    let (x0, x1, y0, y1, fx, fy) = bilinear_taps(sx, sy, width, height);
    let a = plane[y0 * width + x0];
    let b = plane[y0 * width + x1];
    let c = plane[y1 * width + x0];
    let d = plane[y1 * width + x1];
    let top = if fx == 0.0 { a } else { a + (b - a) * fx };
    let bot = if fx == 0.0 { c } else { c + (d - c) * fx };
    if fy == 0.0 {
        top
    } else {
        top + (bot - top) * fy
    }
}
