//! End-to-end reconstruction: per-view depth and triplets, sequential
//! fusion, decoding, rendering and evaluation.

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use log::{debug, info};

use crate::camera::{select_nearby_views, CameraView, Pose};
use crate::cost_volume::{refine_cost_volume, soft_argmax_depth, sweep, upsample_candidates, CostHead, DepthPlaneSet, SweepSource};
use crate::decode::{decode_triplets, Decoder, GaussianPrimitiveSet};
use crate::features::{compute_matching_features, FeatureMap};
use crate::grid::ScalarMap;
use crate::io::config::{EngineConfig, FusionMode};
use crate::io::dataset::SceneDataset;
use crate::io::report::{MetricsReport, TargetMetrics};
use crate::io::weights::read_weights;
use crate::metrics::{depth_metrics, psnr, ssim};
use crate::ptf::{fuse_view, FeatureFusion, FusionStats};
use crate::render::{render, RenderConfig, RenderedFrame};
use crate::triplets::{compute_confidence_weights, default_latents, layout, unproject_to_triplets, TripletSet};
use crate::{Error, Result};

/// Wall-clock milliseconds per stage, accumulated.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Timings(pub BTreeMap<String, f64>);

impl Timings {
    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        *self.0.entry(stage.to_string()).or_default() += start.elapsed().as_secs_f64() * 1e3;
        out
    }

    pub fn merge(&mut self, other: &Timings) {
        for (k, v) in &other.0 {
            *self.0.entry(k.clone()).or_default() += v;
        }
    }
}

/// Depth, confidence and triplets estimated for one view.
#[derive(Debug, Clone)]
pub struct ViewEstimate {
    pub view: usize,
    pub nearby: Vec<usize>,
    pub depth: ScalarMap,
    pub confidence: ScalarMap,
    pub triplets: TripletSet,
}

/// Totals over a fusion sequence.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct SequenceStats {
    pub local_input: usize,
    pub merged: usize,
    pub output: usize,
    /// `merged / local_input`.
    pub reduction_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub context: Vec<usize>,
    pub estimates: Vec<ViewEstimate>,
    pub steps: Vec<FusionStats>,
    pub totals: SequenceStats,
    pub global: TripletSet,
    pub primitives: GaussianPrimitiveSet,
    pub timings: Timings,
}

pub struct Engine {
    pub config: EngineConfig,
    pub planes: DepthPlaneSet,
    pub fusion: FeatureFusion,
    pub decoder: Decoder,
    pub head: CostHead,
}

impl Engine {
    /// Builds an engine, loading weights from `config.weights` if set.
    pub fn new(config: EngineConfig) -> Result<Self> {
        config.validate()?;
        let dim = layout::dim(config.matching_channels);
        let mut fusion = FeatureFusion::Blend;
        let mut decoder = Decoder::Default { kappa: config.kappa };
        if let Some(path) = &config.weights {
            let w = read_weights(path)?;
            if w.feature_dim != dim {
                return Err(Error::parse(path, format!("weights are for {}-dim features, pipeline uses {dim}", w.feature_dim)));
            }
            if config.fusion == FusionMode::Gru {
                fusion = FeatureFusion::Gru(w.gru().map_err(|e| Error::parse(path, e.to_string()))?);
            }
            if w.has_decoder() {
                decoder = Decoder::Loaded(w.decoder().map_err(|e| Error::parse(path, e.to_string()))?);
            }
        }
        Self::with_parts(config, fusion, decoder)
    }

    pub fn with_parts(config: EngineConfig, fusion: FeatureFusion, decoder: Decoder) -> Result<Self> {
        config.validate()?;
        let planes = DepthPlaneSet::build(config.d_near, config.d_far, config.num_planes, config.plane_spacing)?;
        Ok(Self {
            config,
            planes,
            fusion,
            decoder,
            head: CostHead::MeanCosine,
        })
    }

    pub fn render_config(&self) -> RenderConfig {
        RenderConfig {
            background: self.config.background,
            tile_size: self.config.tile_size,
            ..RenderConfig::default()
        }
    }

    /// Views used as plane-sweep sources for `target`: the closest
    /// `nearby_views` members of `pool` (excluding `target`).
    pub fn nearby_for(&self, views: &[CameraView], target: usize, pool: &[usize]) -> Result<Vec<usize>> {
        let mut pool: Vec<usize> = pool.iter().copied().filter(|&i| i != target).collect();
        pool.sort_unstable();
        pool.dedup();
        if pool.is_empty() {
            return Err(Error::invalid(format!("no nearby views available for view {target}")));
        }
        let mut poses: Vec<Pose> = vec![views[target].pose];
        poses.extend(pool.iter().map(|&i| views[i].pose));
        let n = self.config.nearby_views.min(pool.len());
        let picked = select_nearby_views(0, &poses, n, self.config.proximity_lambda)?;
        Ok(picked.into_iter().map(|k| pool[k - 1]).collect())
    }

    /// Estimates depth, confidence and triplets for `target` from the
    /// given nearby views.
    pub fn estimate_view(
        &self,
        views: &[CameraView],
        target: usize,
        nearby: &[usize],
        features: &mut HashMap<usize, FeatureMap>,
        timings: &mut Timings,
    ) -> Result<ViewEstimate> {
        let cfg = &self.config;
        for &i in std::iter::once(&target).chain(nearby) {
            if !features.contains_key(&i) {
                let f = timings.time("features", || compute_matching_features(&views[i], cfg.matching_channels))?;
                features.insert(i, f);
            }
        }
        let tv = &views[target];
        let sources: Vec<SweepSource<'_>> = nearby
            .iter()
            .map(|&i| SweepSource {
                features: &features[&i],
                pose: &views[i].pose,
                intrinsics: &views[i].intrinsics,
            })
            .collect();
        let vol = timings.time("cost_volume", || -> Result<_> {
            let raw = sweep(&features[&target], &tv.pose, &tv.intrinsics, &sources, &self.planes, &self.head)?;
            refine_cost_volume(&raw, tv, cfg.refine_iterations, cfg.refine_sigma)
        })?;
        let (depth, confidence) = timings.time("depth", || -> Result<_> {
            let cand = upsample_candidates(&vol, tv.width(), tv.height())?;
            Ok((soft_argmax_depth(&cand, &self.planes, cfg.temperature)?, compute_confidence_weights(&cand, cfg.temperature)?))
        })?;
        let triplets = timings.time("triplets", || -> Result<_> {
            let latents = default_latents(tv, &confidence, &depth, &features[&target])?;
            unproject_to_triplets(&depth, &latents, &confidence, tv)
        })?;
        Ok(ViewEstimate {
            view: target,
            nearby: nearby.to_vec(),
            depth,
            confidence,
            triplets,
        })
    }

    /// Reconstructs from `context` views in order. Nearby views come from
    /// the other context views, or from every view not in `exclude` when
    /// the context holds a single distinct view.
    pub fn reconstruct(&self, views: &[CameraView], context: &[usize], exclude: &[usize]) -> Result<Reconstruction> {
        if context.is_empty() {
            return Err(Error::invalid("context view list is empty"));
        }
        if let Some(&bad) = context.iter().find(|&&i| i >= views.len()) {
            return Err(Error::invalid(format!("context view {bad} out of range (scene has {})", views.len())));
        }
        let dims = (views[context[0]].width(), views[context[0]].height());
        if context.iter().any(|&i| (views[i].width(), views[i].height()) != dims) {
            return Err(Error::mismatch("context views differ in resolution"));
        }
        let mut timings = Timings::default();
        let mut features: HashMap<usize, FeatureMap> = HashMap::new();
        let mut cache: HashMap<usize, ViewEstimate> = HashMap::new();
        let mut global = TripletSet::empty(layout::dim(self.config.matching_channels));
        let mut steps = Vec::with_capacity(context.len());
        let mut estimates = Vec::with_capacity(context.len());
        for &t in context {
            if !cache.contains_key(&t) {
                let distinct: Vec<usize> = context.iter().copied().filter(|&i| i != t).collect();
                let pool: Vec<usize> = if distinct.is_empty() {
                    (0..views.len()).filter(|i| *i != t && !exclude.contains(i)).collect()
                } else {
                    distinct
                };
                let nearby = self.nearby_for(views, t, &pool)?;
                debug!("view {t}: nearby {nearby:?}");
                let est = self.estimate_view(views, t, &nearby, &mut features, &mut timings)?;
                cache.insert(t, est);
            }
            let est = &cache[&t];
            let (next, stats) = timings.time("fusion", || fuse_view(&global, &est.triplets, &views[t], self.config.delta, &self.fusion))?;
            info!(
                "view {t}: {} local, {} merged, {} total ({:.1}% reduction)",
                stats.input_local,
                stats.merged,
                stats.output,
                100.0 * stats.reduction_ratio
            );
            global = next;
            steps.push(stats);
            estimates.push(est.clone());
        }
        let local_input: usize = steps.iter().map(|s| s.input_local).sum();
        let merged: usize = steps.iter().map(|s| s.merged).sum();
        let totals = SequenceStats {
            local_input,
            merged,
            output: global.len(),
            reduction_ratio: merged as f64 / local_input as f64,
        };
        let primitives = timings.time("decode", || decode_triplets(&global, &self.decoder, &views[context[0]].intrinsics))?;
        Ok(Reconstruction {
            context: context.to_vec(),
            estimates,
            steps,
            totals,
            global,
            primitives,
            timings,
        })
    }

    pub fn render_view(&self, prims: &GaussianPrimitiveSet, view: &CameraView) -> Result<RenderedFrame> {
        render(prims, &view.pose, &view.intrinsics, &self.render_config())
    }

    /// Renders each target and scores it against the dataset images and,
    /// when present, ground-truth depth (over pixels with alpha > 0.5).
    pub fn evaluate(&self, scene: &SceneDataset, rec: &Reconstruction, targets: &[usize], timings: &mut Timings) -> Result<MetricsReport> {
        if targets.is_empty() {
            return Err(Error::invalid("no evaluation targets"));
        }
        let mut per = Vec::with_capacity(targets.len());
        for &t in targets {
            let view = scene.view(t)?;
            let frame = timings.time("render", || self.render_view(&rec.primitives, view))?;
            let (p, s) = timings.time("metrics", || -> Result<_> { Ok((psnr(&frame.color, &view.image)?, ssim(&frame.color, &view.image)?)) })?;
            let depth = match &scene.gt_depths {
                Some(gt) => {
                    let mask: Vec<bool> = frame.alpha.data.iter().map(|&a| a > 0.5).collect();
                    depth_metrics(&frame.depth, &gt[t], Some(&mask)).ok()
                }
                None => None,
            };
            per.push(TargetMetrics {
                view: t,
                psnr: p,
                ssim: s,
                depth,
            });
        }
        let n = per.len() as f64;
        let depth = if per.iter().all(|t| t.depth.is_some()) {
            let ds: Vec<_> = per.iter().filter_map(|t| t.depth).collect();
            let mean = |f: fn(&crate::metrics::DepthMetrics) -> f64| ds.iter().map(f).sum::<f64>() / n;
            Some(crate::metrics::DepthMetrics {
                abs_diff: mean(|d| d.abs_diff),
                abs_rel: mean(|d| d.abs_rel),
                delta_1_25: mean(|d| d.delta_1_25),
                delta_1_10: mean(|d| d.delta_1_10),
                valid_count: ds.iter().map(|d| d.valid_count).sum(),
            })
        } else {
            None
        };
        Ok(MetricsReport {
            psnr: per.iter().map(|t| t.psnr).sum::<f64>() / n,
            ssim: per.iter().map(|t| t.ssim).sum::<f64>() / n,
            depth,
            num_gaussians: rec.primitives.len(),
            reduction_ratio: rec.totals.reduction_ratio,
            timings_ms: BTreeMap::new(),
            targets: per,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{Preset, SceneSpec, SyntheticScene};

    fn small_engine() -> Engine {
        Engine::new(EngineConfig {
            num_planes: 32,
            ..EngineConfig::default()
        })
        .unwrap()
    }

    fn room(views: usize) -> Vec<CameraView> {
        SyntheticScene::build(SceneSpec::new(Preset::BoxRoom, 0, views, 64, 48)).unwrap().render_all().unwrap().0
    }

    #[test]
    fn single_view_keeps_every_pixel() {
        let views = room(4);
        let e = small_engine();
        let rec = e.reconstruct(&views, &[0], &[]).unwrap();
        assert_eq!(rec.primitives.len(), 64 * 48);
        assert_eq!(rec.totals.merged, 0);
        let nearby = &rec.estimates[0].nearby;
        assert_eq!(nearby.len(), 3);
        assert!(!nearby.contains(&0));
    }

    #[test]
    fn duplicate_context_halves_the_count() {
        let views = room(4);
        let e = small_engine();
        let rec = e.reconstruct(&views, &[2, 2], &[]).unwrap();
        assert_eq!(rec.primitives.len(), 64 * 48);
        assert_eq!(rec.steps[1].reduction_ratio, 0.5);
        assert_eq!(rec.totals.reduction_ratio, 0.5);
    }

    #[test]
    fn fusion_bounds_hold_over_three_views() {
        let views = room(6);
        let e = small_engine();
        let rec = e.reconstruct(&views, &[0, 1, 2], &[]).unwrap();
        let hw = 64 * 48;
        assert!(rec.primitives.len() >= hw && rec.primitives.len() <= 3 * hw);
        let w_in: f64 = rec.estimates.iter().map(|e| e.triplets.total_weight()).sum();
        assert!((rec.global.total_weight() - w_in).abs() < 1e-6 * w_in);
        rec.global.validate().unwrap();
    }

    #[test]
    fn rejects_bad_context() {
        let views = room(3);
        let e = small_engine();
        assert!(e.reconstruct(&views, &[], &[]).is_err());
        assert!(e.reconstruct(&views, &[5], &[]).is_err());
        assert!(e.reconstruct(&views[..1], &[0], &[]).is_err());
    }
}
