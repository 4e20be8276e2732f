//! Voxel-wise BCE, weight fusion and the intensity-distance guided loss.

use rayon::prelude::*;

use crate::distance::{build_distance_weight_map, DistWeightMap};
use crate::error::{Error, Result};
use crate::grid::{check_same_dims, normalize_window, sum_indexed, BinaryMask3, GridShape, Volume3};
use crate::intensity::{build_intensity_weight_map, fit_airway_model, AirwayIntensityModel, IdgConfig, IntensityWeightMap, SkeletonSource};
use crate::morphology::{build_dilated_region, skeletonize, DilatedRegion};

/// Probability clamp keeping the logarithms finite.
pub const DEFAULT_EPS: f64 = 1e-7;

/// Per-voxel binary cross-entropy values.
#[derive(Debug, Clone, PartialEq)]
pub struct LossMap {
    pub shape: GridShape,
    pub values: Vec<f64>,
}

impl LossMap {
    pub fn mean(&self) -> f64 {
        sum_indexed(self.values.len(), |i| self.values[i]) / self.values.len() as f64
    }
}

/// `-[y ln p + (1 - y) ln(1 - p)]` with `p` clamped to `[eps, 1 - eps]`.
pub fn bce_map(pred: &Volume3, target: &BinaryMask3, eps: f64) -> Result<LossMap> {
    check_same_dims(pred.shape(), target.shape(), "prediction vs target")?;
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::Parameter(format!("eps = {eps} must be in (0, 0.5)")));
    }
    if let Some(i) = pred.data().iter().position(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Domain(format!("probability {} at voxel {:?}", pred.data()[i], pred.shape().coords(i))));
    }
    let values = pred
        .data()
        .par_iter()
        .zip(target.data().par_iter())
        .map(|(&p, &y)| {
            let p = (p as f64).clamp(eps, 1.0 - eps);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .collect();
    Ok(LossMap { shape: *pred.shape(), values })
}

/// Element-wise product of the two weight maps.
pub fn fuse_weights(w_in: &IntensityWeightMap, w_dis: &DistWeightMap) -> Result<Volume3> {
    check_same_dims(&w_in.shape, &w_dis.shape, "intensity vs distance weight map")?;
    let data = w_in.w.par_iter().zip(w_dis.w.par_iter()).map(|(&a, &b)| (a * b) as f32).collect();
    Volume3::new(w_in.shape, data)
}

/// Mean over all voxels of `bce * fused`.
pub fn idg_loss(bce: &LossMap, fused: &Volume3) -> Result<f64> {
    check_same_dims(&bce.shape, fused.shape(), "loss map vs weight map")?;
    let w = fused.data();
    let n = bce.values.len();
    Ok(sum_indexed(n, |i| bce.values[i] * w[i] as f64) / n as f64)
}

/// Every intermediate of the weight-map pipeline for one case.
#[derive(Debug, Clone)]
pub struct IdgMaps {
    pub region: DilatedRegion,
    pub skeleton: BinaryMask3,
    pub model: AirwayIntensityModel,
    pub w_in: IntensityWeightMap,
    pub w_dis: DistWeightMap,
}

impl IdgMaps {
    pub fn fused(&self) -> Result<Volume3> {
        fuse_weights(&self.w_in, &self.w_dis)
    }

    pub fn intensity_volume(&self) -> Volume3 {
        to_volume(self.w_in.shape, &self.w_in.w)
    }

    pub fn distance_volume(&self) -> Volume3 {
        to_volume(self.w_dis.shape, &self.w_dis.w)
    }
}

fn to_volume(shape: GridShape, w: &[f64]) -> Volume3 {
    Volume3::new(shape, w.iter().map(|&v| v as f32).collect()).expect("weights are finite")
}

/// Runs the full pipeline: window normalization, dilation, skeleton,
/// distance weights, intensity model and intensity weights.
///
/// `image` holds raw intensities (HU); it is normalized with `cfg.window`.
pub fn compute_idg_maps(image: &Volume3, airway_gt: &BinaryMask3, cfg: &IdgConfig) -> Result<IdgMaps> {
    cfg.validate()?;
    check_same_dims(image.shape(), airway_gt.shape(), "image vs airway mask")?;
    let norm = normalize_window(image, cfg.window.0, cfg.window.1)?;
    let region = build_dilated_region(airway_gt, cfg.kernel_size)?;
    let skeleton = match cfg.skeleton_source {
        SkeletonSource::Dilated => skeletonize(&region.dilated)?,
        SkeletonSource::Bronchus => skeletonize(airway_gt)?,
    };
    let spacing = image.shape().spacing();
    let w_dis = build_distance_weight_map(&region, &skeleton, spacing)?;
    let model = fit_airway_model(&norm, airway_gt, cfg)?;
    let w_in = build_intensity_weight_map(&norm, &region, &model, cfg)?;
    Ok(IdgMaps { region, skeleton, model, w_in, w_dis })
}

/// Fused weight map `W_in * W_dis` for one case.
pub fn compute_idg_weightmap(image: &Volume3, airway_gt: &BinaryMask3, cfg: &IdgConfig) -> Result<Volume3> {
    compute_idg_maps(image, airway_gt, cfg)?.fused()
}
