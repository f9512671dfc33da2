//! Engine configuration and its `key = value` text format.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cost_volume::PlaneSpacing;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    Blend,
    Gru,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub num_planes: usize,
    pub d_near: f64,
    pub d_far: f64,
    pub plane_spacing: PlaneSpacing,
    pub matching_channels: usize,
    pub nearby_views: usize,
    pub proximity_lambda: f64,
    pub temperature: f64,
    pub refine_iterations: usize,
    pub refine_sigma: f64,
    pub delta: f64,
    pub kappa: f64,
    pub fusion: FusionMode,
    /// Optional SPLF container with GRU and/or decoder weights.
    pub weights: Option<PathBuf>,
    pub tile_size: usize,
    pub background: [f64; 3],
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            num_planes: 128,
            d_near: 0.5,
            d_far: 15.0,
            plane_spacing: PlaneSpacing::Uniform,
            matching_channels: crate::features::BASE_CHANNELS,
            nearby_views: 4,
            proximity_lambda: 0.5,
            temperature: 0.001,
            refine_iterations: 2,
            refine_sigma: 0.05,
            delta: 0.05,
            kappa: 0.3,
            fusion: FusionMode::Blend,
            weights: None,
            tile_size: 16,
            background: [0.0; 3],
        }
    }
}

/// Splits a config file into `(key, value, line number)` triples.
pub fn parse_key_values(path: &Path, text: &str) -> Result<Vec<(String, String, usize)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(path, format!("line {}: expected `key = value`", n + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::parse(path, format!("line {}: empty key", n + 1)));
        }
        out.push((k.to_string(), v.trim().to_string(), n + 1));
    }
    Ok(out)
}

pub fn parse_background(v: &str) -> Option<[f64; 3]> {
    let parts: Vec<f64> = v.split(',').map(|p| p.trim().parse().ok()).collect::<Option<_>>()?;
    <[f64; 3]>::try_from(parts).ok()
}

impl EngineConfig {
    pub const KEYS: [&'static str; 16] = [
        "num_planes",
        "d_near",
        "d_far",
        "plane_spacing",
        "matching_channels",
        "nearby_views",
        "proximity_lambda",
        "temperature",
        "refine_iterations",
        "refine_sigma",
        "delta",
        "kappa",
        "fusion",
        "weights",
        "tile_size",
        "background",
    ];

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, what: &str| if ok { Ok(()) } else { Err(Error::invalid(what.to_string())) };
        check(self.num_planes >= 2, "num_planes must be at least 2")?;
        check(self.num_planes <= 4096, "num_planes must be at most 4096")?;
        check(self.d_near > 0.0 && self.d_far > self.d_near && self.d_far.is_finite(), "need 0 < d_near < d_far")?;
        check(self.matching_channels >= crate::features::BASE_CHANNELS, "matching_channels must be at least 14")?;
        check(self.nearby_views >= 1, "nearby_views must be at least 1")?;
        check(self.proximity_lambda >= 0.0 && self.proximity_lambda.is_finite(), "proximity_lambda must be >= 0")?;
        check(self.temperature > 0.0 && self.temperature.is_finite(), "temperature must be > 0")?;
        check(self.refine_sigma > 0.0 && self.refine_sigma.is_finite(), "refine_sigma must be > 0")?;
        check(self.delta > 0.0 && self.delta.is_finite(), "delta must be > 0")?;
        check(self.kappa > 0.0 && self.kappa.is_finite(), "kappa must be > 0")?;
        check(self.tile_size >= 1, "tile_size must be positive")?;
        check(self.background.iter().all(|c| (0.0..=1.0).contains(c)), "background channels must be in [0, 1]")?;
        check(self.fusion == FusionMode::Blend || self.weights.is_some(), "gru fusion needs a weights file")?;
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        fn num<T: FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("invalid value {v:?} for {key}"))
        }
        match key {
            "num_planes" => self.num_planes = num(key, v)?,
            "d_near" => self.d_near = num(key, v)?,
            "d_far" => self.d_far = num(key, v)?,
            "plane_spacing" => {
                self.plane_spacing = match v {
                    "uniform" => PlaneSpacing::Uniform,
                    "inverse" => PlaneSpacing::Inverse,
                    _ => return Err(format!("plane_spacing must be uniform or inverse, got {v:?}")),
                }
            }
            "matching_channels" => self.matching_channels = num(key, v)?,
            "nearby_views" => self.nearby_views = num(key, v)?,
            "proximity_lambda" => self.proximity_lambda = num(key, v)?,
            "temperature" => self.temperature = num(key, v)?,
            "refine_iterations" => self.refine_iterations = num(key, v)?,
            "refine_sigma" => self.refine_sigma = num(key, v)?,
            "delta" => self.delta = num(key, v)?,
            "kappa" => self.kappa = num(key, v)?,
            "fusion" => {
                self.fusion = match v {
                    "blend" => FusionMode::Blend,
                    "gru" => FusionMode::Gru,
                    _ => return Err(format!("fusion must be blend or gru, got {v:?}")),
                }
            }
            "weights" => self.weights = if v.is_empty() { None } else { Some(PathBuf::from(v)) },
            "tile_size" => self.tile_size = num(key, v)?,
            "background" => self.background = parse_background(v).ok_or_else(|| format!("background must be r,g,b, got {v:?}"))?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    pub fn from_text(path: &Path, text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v, line) in parse_key_values(path, text)? {
            cfg.set(&k, &v).map_err(|m| Error::parse(path, format!("line {line}: {m}")))?;
        }
        cfg.validate().map_err(|e| Error::parse(path, e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(path, &text)
    }

    /// Every key, one per line; parsing the result gives back `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let spacing = match self.plane_spacing {
            PlaneSpacing::Uniform => "uniform",
            PlaneSpacing::Inverse => "inverse",
        };
        let fusion = match self.fusion {
            FusionMode::Blend => "blend",
            FusionMode::Gru => "gru",
        };
        let weights = self.weights.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let bg = self.background;
        let _ = writeln!(s, "num_planes = {}", self.num_planes);
        let _ = writeln!(s, "d_near = {}", self.d_near);
        let _ = writeln!(s, "d_far = {}", self.d_far);
        let _ = writeln!(s, "plane_spacing = {spacing}");
        let _ = writeln!(s, "matching_channels = {}", self.matching_channels);
        let _ = writeln!(s, "nearby_views = {}", self.nearby_views);
        let _ = writeln!(s, "proximity_lambda = {}", self.proximity_lambda);
        let _ = writeln!(s, "temperature = {}", self.temperature);
        let _ = writeln!(s, "refine_iterations = {}", self.refine_iterations);
        let _ = writeln!(s, "refine_sigma = {}", self.refine_sigma);
        let _ = writeln!(s, "delta = {}", self.delta);
        let _ = writeln!(s, "kappa = {}", self.kappa);
        let _ = writeln!(s, "fusion = {fusion}");
        let _ = writeln!(s, "weights = {weights}");
        let _ = writeln!(s, "tile_size = {}", self.tile_size);
        let _ = writeln!(s, "background = {},{},{}", bg[0], bg[1], bg[2]);
        s
    }
}
