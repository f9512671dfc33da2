//! Decoding fused triplets into renderable Gaussian primitives.
//!
//! Primitives are stored in the splatting interchange encoding (f32 means,
//! log scales, opacity logits, `w, x, y, z` quaternions, raw SH
//! coefficients), so a PLY round trip reproduces them bit-for-bit.

use nalgebra::{DMatrix, DVector, Matrix3, Quaternion, UnitQuaternion};

use crate::camera::Intrinsics;
use crate::ptf::sigmoid;
use crate::triplets::{layout, TripletSet};
use crate::{Error, Result};

/// Degree-0 spherical harmonic basis constant.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;

/// Opacity range produced by the default decoder.
pub const OPACITY_RANGE: (f64, f64) = (0.01, 0.99);

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GaussianPrimitiveSet {
    pub means: Vec<[f32; 3]>,
    pub log_scales: Vec<[f32; 3]>,
    /// Unit quaternions, `w, x, y, z`.
    pub rotations: Vec<[f32; 4]>,
    pub opacity_logits: Vec<f32>,
    /// Row-major `len x 3 * (degree + 1)^2`, coefficient-major then RGB.
    pub sh: Vec<f32>,
    pub sh_degree: u8,
}

impl GaussianPrimitiveSet {
    pub fn new(sh_degree: u8) -> Result<Self> {
        if sh_degree > 1 {
            return Err(Error::invalid(format!("SH degree {sh_degree} not supported (0 or 1)")));
        }
        Ok(Self {
            sh_degree,
            ..Default::default()
        })
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn sh_coeffs_per_channel(&self) -> usize {
        let l = self.sh_degree as usize + 1;
        l * l
    }

    pub fn sh_stride(&self) -> usize {
        3 * self.sh_coeffs_per_channel()
    }

    pub fn sh_of(&self, i: usize) -> &[f32] {
        let s = self.sh_stride();
        &self.sh[i * s..(i + 1) * s]
    }

    pub fn mean(&self, i: usize) -> [f64; 3] {
        self.means[i].map(f64::from)
    }

    pub fn scale(&self, i: usize) -> [f64; 3] {
        self.log_scales[i].map(|s| f64::from(s).exp())
    }

    pub fn opacity(&self, i: usize) -> f64 {
        sigmoid(f64::from(self.opacity_logits[i]))
    }

    pub fn rotation(&self, i: usize) -> [f64; 4] {
        self.rotations[i].map(f64::from)
    }

    pub fn covariance(&self, i: usize) -> Result<Matrix3<f64>> {
        covariance_from_scale_rotation(self.scale(i), self.rotation(i))
    }

    /// Appends a primitive given in activated form (meters, probability,
    /// any non-zero quaternion).
    pub fn push(&mut self, mean: [f64; 3], scale: [f64; 3], rotation: [f64; 4], opacity: f64, sh: &[f64]) -> Result<()> {
        if sh.len() != self.sh_stride() {
            return Err(Error::mismatch(format!(
                "expected {} SH coefficients, got {}",
                self.sh_stride(),
                sh.len()
            )));
        }
        if !scale.iter().all(|&s| s > 0.0 && s.is_finite()) {
            return Err(Error::invalid(format!("scales must be positive, got {scale:?}")));
        }
        if !(opacity > 0.0 && opacity < 1.0) {
            return Err(Error::invalid(format!("opacity must be in (0, 1), got {opacity}")));
        }
        let qn = rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(qn > 0.0 && qn.is_finite()) {
            return Err(Error::invalid("rotation quaternion has zero norm"));
        }
        self.means.push(mean.map(|v| v as f32));
        self.log_scales.push(scale.map(|s| s.ln() as f32));
        self.rotations.push(rotation.map(|v| (v / qn) as f32));
        self.opacity_logits.push((opacity / (1.0 - opacity)).ln() as f32);
        self.sh.extend(sh.iter().map(|&v| v as f32));
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.log_scales.len() != n || self.rotations.len() != n || self.opacity_logits.len() != n || self.sh.len() != n * self.sh_stride() {
            return Err(Error::mismatch("primitive columns have inconsistent lengths"));
        }
        for i in 0..n {
            let q = self.rotation(i);
            let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(format!("primitive {i}: quaternion norm {norm}")));
            }
            let finite = self.means[i].iter().chain(&self.log_scales[i]).all(|v| v.is_finite())
                && self.opacity_logits[i].is_finite();
            if !finite {
                return Err(Error::invalid(format!("primitive {i} has non-finite parameters")));
            }
        }
        Ok(())
    }
}

/// `R S S^T R^T` for a unit quaternion `w, x, y, z`.
pub fn covariance_from_scale_rotation(scale: [f64; 3], q: [f64; 4]) -> Result<Matrix3<f64>> {
    if !scale.iter().all(|&s| s > 0.0 && s.is_finite()) {
        return Err(Error::invalid(format!("scales must be positive, got {scale:?}")));
    }
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!("quaternion norm {norm} is not 1")));
    }
    let r = UnitQuaternion::new_unchecked(Quaternion::new(q[0], q[1], q[2], q[3])).to_rotation_matrix().into_inner();
    let m = r * Matrix3::from_diagonal(&nalgebra::Vector3::from(scale));
    let cov = m * m.transpose();
    Ok((cov + cov.transpose()) * 0.5)
}

/// A single affine layer mapping a latent feature to primitive parameters.
///
/// Output rows: 3 scale pre-activations (softplus), 4 quaternion components
/// (normalized), 1 opacity logit, then 3 or 12 SH coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl DecoderParams {
    pub const ROWS_DEGREE_0: usize = 11;
    pub const ROWS_DEGREE_1: usize = 20;

    pub fn sh_degree(&self) -> Result<u8> {
        match self.weight.nrows() {
            Self::ROWS_DEGREE_0 => Ok(0),
            Self::ROWS_DEGREE_1 => Ok(1),
            r => Err(Error::mismatch(format!("decoder has {r} outputs, expected 11 or 20"))),
        }
    }

    pub fn validate(&self, feature_dim: usize) -> Result<()> {
        self.sh_degree()?;
        if self.weight.ncols() != feature_dim || self.bias.len() != self.weight.nrows() {
            return Err(Error::mismatch(format!(
                "decoder is {}x{} (+{}), features have {feature_dim} dims",
                self.weight.nrows(),
                self.weight.ncols(),
                self.bias.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decoder {
    /// Color from the stored RGB, opacity from the stored confidence, and an
    /// isotropic scale covering `kappa` pixels at the source depth.
    Default { kappa: f64 },
    Loaded(DecoderParams),
}

impl Default for Decoder {
    fn default() -> Self {
        Decoder::Default { kappa: 1.0 }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn decode_triplets(global: &TripletSet, decoder: &Decoder, intr: &Intrinsics) -> Result<GaussianPrimitiveSet> {
    match decoder {
        Decoder::Default { kappa } => {
            if !(*kappa > 0.0) {
                return Err(Error::invalid(format!("kappa must be > 0, got {kappa}")));
            }
            if global.feature_dim < layout::MATCHING {
                return Err(Error::mismatch(format!(
                    "default decoder needs at least {} feature dims, got {}",
                    layout::MATCHING,
                    global.feature_dim
                )));
            }
            let mut out = GaussianPrimitiveSet::new(0)?;
            for i in 0..global.len() {
                let f = global.feature(i);
                let depth = f[layout::DEPTH];
                if !(depth > 0.0 && depth.is_finite()) {
                    return Err(Error::invalid(format!("triplet {i}: source depth {depth}")));
                }
                let s = kappa * depth / intr.fx;
                let alpha = f[layout::CONFIDENCE].clamp(OPACITY_RANGE.0, OPACITY_RANGE.1);
                let dc: Vec<f64> = f[layout::RGB].iter().map(|c| (c - 0.5) / SH_C0).collect();
                let c = global.centers[i];
                out.push([c.x, c.y, c.z], [s; 3], [1.0, 0.0, 0.0, 0.0], alpha, &dc)?;
            }
            Ok(out)
        }
        Decoder::Loaded(params) => {
            params.validate(global.feature_dim)?;
            let mut out = GaussianPrimitiveSet::new(params.sh_degree()?)?;
            for i in 0..global.len() {
                let y = &params.weight * DVector::from_column_slice(global.feature(i)) + &params.bias;
                let scale = [0, 1, 2].map(|k| softplus(y[k]).max(1e-8));
                let mut q = [y[3], y[4], y[5], y[6]];
                if q.iter().map(|v| v * v).sum::<f64>() < 1e-24 {
                    q = [1.0, 0.0, 0.0, 0.0];
                }
                let c = global.centers[i];
                let sh: Vec<f64> = y.iter().skip(8).copied().collect();
                out.push([c.x, c.y, c.z], scale, q, 0.5, &sh)?;
                // The opacity logit is the raw network output.
                *out.opacity_logits.last_mut().unwrap() = y[7] as f32;
            }
            out.validate()?;
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use proptest::prelude::*;

    fn triplet(rgb: [f64; 3], omega: f64, depth: f64) -> TripletSet {
        let mut f = vec![0.0; layout::dim(14)];
        f[..3].copy_from_slice(&rgb);
        f[layout::CONFIDENCE] = omega;
        f[layout::DEPTH] = depth;
        let mut t = TripletSet::empty(f.len());
        t.push(Vector3::new(0.1, 0.2, depth), 1.7, &f, None);
        t
    }

    fn intr() -> Intrinsics {
        Intrinsics::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap()
    }

    #[test]
    fn default_decoder_example() {
        let p = decode_triplets(&triplet([1.0, 0.0, 0.0], 0.9, 2.0), &Decoder::default(), &intr()).unwrap();
        assert_eq!(p.len(), 1);
        let rgb: Vec<f64> = p.sh_of(0).iter().map(|&c| 0.5 + SH_C0 * f64::from(c)).collect();
        assert!((rgb[0] - 1.0).abs() < 1e-6 && rgb[1].abs() < 1e-6 && rgb[2].abs() < 1e-6);
        assert!((p.opacity(0) - 0.9).abs() < 1e-6);
        for s in p.scale(0) {
            assert!((s - 0.02).abs() < 1e-8);
        }
        assert_eq!(p.rotation(0), [1.0, 0.0, 0.0, 0.0]);
        let p = decode_triplets(&triplet([0.5; 3], 1.0 - 1e-4, 2.0), &Decoder::default(), &intr()).unwrap();
        assert!((p.opacity(0) - 0.99).abs() < 1e-6);
        let p = decode_triplets(&triplet([0.5; 3], 1e-4, 2.0), &Decoder::default(), &intr()).unwrap();
        assert!((p.opacity(0) - 0.01).abs() < 1e-6);
    }

    #[test]
    fn decode_rejects_malformed_layouts() {
        let mut t = TripletSet::empty(3);
        t.push(Vector3::zeros(), 1.0, &[0.0; 3], None);
        assert!(decode_triplets(&t, &Decoder::default(), &intr()).is_err());
        assert!(decode_triplets(&triplet([0.5; 3], 0.5, -1.0), &Decoder::default(), &intr()).is_err());
        let bad = DecoderParams {
            weight: DMatrix::zeros(9, layout::dim(14)),
            bias: DVector::zeros(9),
        };
        assert!(decode_triplets(&triplet([0.5; 3], 0.5, 1.0), &Decoder::Loaded(bad), &intr()).is_err());
    }

    #[test]
    fn loaded_decoder_applies_activations() {
        let dim = layout::dim(14);
        let mut bias = DVector::zeros(20);
        bias[0] = 0.0; // softplus(0) = ln 2
        bias[1] = 1.0;
        bias[2] = -1.0;
        bias[3] = 2.0; // quaternion (2, 0, 0, 0) -> identity
        bias[7] = 0.0; // opacity 0.5
        bias[8] = 0.3;
        let params = DecoderParams {
            weight: DMatrix::zeros(20, dim),
            bias,
        };
        let mut t = triplet([0.5; 3], 0.5, 1.0);
        t.push(Vector3::new(1.0, 1.0, 1.0), 1.0, &vec![0.25; dim], None);
        let p = decode_triplets(&t, &Decoder::Loaded(params), &intr()).unwrap();
        assert_eq!((p.len(), p.sh_degree, p.sh_stride()), (2, 1, 12));
        let s = p.scale(1);
        assert!((s[0] - 2f64.ln()).abs() < 1e-6);
        assert!((s[1] - (1f64.exp().ln_1p())).abs() < 1e-6);
        assert_eq!(p.rotation(1), [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(p.opacity(1), 0.5);
        assert!((f64::from(p.sh_of(1)[0]) - 0.3).abs() < 1e-7);
    }

    #[test]
    fn covariance_examples() {
        let c = covariance_from_scale_rotation([1.0, 2.0, 3.0], [1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(c, Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 9.0)));
        let h = std::f64::consts::FRAC_PI_4;
        let c = covariance_from_scale_rotation([1.0, 2.0, 1.0], [h.cos(), 0.0, 0.0, h.sin()]).unwrap();
        let expect = Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0));
        assert!((c - expect).abs().max() < 1e-12);
        assert!(covariance_from_scale_rotation([1.0; 3], [1.0, 0.1, 0.0, 0.0]).is_err());
        assert!(covariance_from_scale_rotation([0.0, 1.0, 1.0], [1.0, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn push_encodes_opacity_logit() {
        let mut p = GaussianPrimitiveSet::new(0).unwrap();
        p.push([0.0; 3], [1.0; 3], [1.0, 0.0, 0.0, 0.0], 0.5, &[0.0; 3]).unwrap();
        assert_eq!(p.opacity_logits[0], 0.0);
        assert_eq!(p.log_scales[0], [0.0; 3]);
        assert!(p.push([0.0; 3], [1.0; 3], [1.0, 0.0, 0.0, 0.0], 1.0, &[0.0; 3]).is_err());
        assert!(p.push([0.0; 3], [1.0; 3], [0.0; 4], 0.5, &[0.0; 3]).is_err());
        assert!(p.push([0.0; 3], [1.0; 3], [1.0, 0.0, 0.0, 0.0], 0.5, &[0.0; 12]).is_err());
        assert!(GaussianPrimitiveSet::new(2).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn covariances_are_symmetric_positive_definite(
            s in prop::array::uniform3(1e-3f64..10.0),
            q in prop::array::uniform4(-1.0f64..1.0),
        ) {
            let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assume!(n > 1e-3);
            let q = q.map(|v| v / n);
            let c = covariance_from_scale_rotation(s, q).unwrap();
            prop_assert!((c - c.transpose()).abs().max() <= 1e-9);
            prop_assert!(c.cholesky().is_some());
            let mut eig: Vec<f64> = c.symmetric_eigenvalues().iter().copied().collect();
            eig.sort_by(f64::total_cmp);
            let mut sq: Vec<f64> = s.iter().map(|v| v * v).collect();
            sq.sort_by(f64::total_cmp);
            for (a, b) in eig.iter().zip(&sq) {
                prop_assert!((a - b).abs() <= 1e-9 * b.max(1.0));
            }
            prop_assert!(eig[0] > 0.0);
        }
    }
}
