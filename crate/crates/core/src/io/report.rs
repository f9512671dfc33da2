//! JSON metrics report.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::{json, Map, Value};

use crate::metrics::DepthMetrics;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TargetMetrics {
    pub view: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub depth: Option<DepthMetrics>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub psnr: f64,
    pub ssim: f64,
    pub depth: Option<DepthMetrics>,
    pub num_gaussians: usize,
    pub reduction_ratio: f64,
    pub timings_ms: BTreeMap<String, f64>,
    pub targets: Vec<TargetMetrics>,
}

/// Finite numbers as JSON numbers; infinities as `"inf"` / `"-inf"`.
fn number(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else if v == f64::INFINITY {
        json!("inf")
    } else if v == f64::NEG_INFINITY {
        json!("-inf")
    } else {
        Value::Null
    }
}

fn depth_fields(map: &mut Map<String, Value>, d: Option<&DepthMetrics>) {
    map.insert("abs_diff".into(), d.map_or(Value::Null, |d| number(d.abs_diff)));
    map.insert("abs_rel".into(), d.map_or(Value::Null, |d| number(d.abs_rel)));
    map.insert("delta_1_25".into(), d.map_or(Value::Null, |d| number(d.delta_1_25)));
    map.insert("delta_1_10".into(), d.map_or(Value::Null, |d| number(d.delta_1_10)));
}

impl MetricsReport {
    pub fn to_value(&self) -> Value {
        let mut m = Map::new();
        m.insert("psnr".into(), number(self.psnr));
        m.insert("ssim".into(), number(self.ssim));
        depth_fields(&mut m, self.depth.as_ref());
        m.insert("num_gaussians".into(), json!(self.num_gaussians));
        m.insert("reduction_ratio".into(), number(self.reduction_ratio));
        let timings: Map<String, Value> = self.timings_ms.iter().map(|(k, v)| (k.clone(), number(*v))).collect();
        m.insert("timings_ms".into(), Value::Object(timings));
        let targets: Vec<Value> = self
            .targets
            .iter()
            .map(|t| {
                let mut e = Map::new();
                e.insert("view".into(), json!(t.view));
                e.insert("psnr".into(), number(t.psnr));
                e.insert("ssim".into(), number(t.ssim));
                depth_fields(&mut e, t.depth.as_ref());
                Value::Object(e)
            })
            .collect();
        m.insert("targets".into(), Value::Array(targets));
        Value::Object(m)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_value()).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infinite_psnr_and_missing_depth() {
        let r = MetricsReport {
            psnr: f64::INFINITY,
            ssim: 1.0,
            num_gaussians: 12,
            reduction_ratio: 0.5,
            ..Default::default()
        };
        let v = r.to_value();
        assert_eq!(v["psnr"], json!("inf"));
        assert_eq!(v["abs_rel"], Value::Null);
        assert_eq!(v["delta_1_25"], Value::Null);
        assert_eq!(v["num_gaussians"], json!(12));
        assert_eq!(v["timings_ms"], json!({}));
        assert_eq!(r.to_json(), r.clone().to_json());
    }

    #[test]
    fn depth_fields_present() {
        let d = DepthMetrics {
            abs_diff: 0.1,
            abs_rel: 0.05,
            delta_1_25: 1.0,
            delta_1_10: 0.9,
            valid_count: 4,
        };
        let r = MetricsReport {
            psnr: 30.0,
            depth: Some(d),
            ..Default::default()
        };
        let v = r.to_value();
        assert_eq!(v["abs_rel"], json!(0.05));
        assert_eq!(v["delta_1_10"], json!(0.9));
    }
}
