//! Per-case airway intensity statistics and the intensity-prior weight map.
//!
//! All statistics are computed on window-normalized intensities in `[0, 1]`.
//! Inside the airway a brighter voxel is considered harder; outside it, a
//! voxel is harder the closer its intensity is to the airway mean. The
//! outside rule is expressed through the flipped value
//! `d_o(x) = 1 - (x - mu_in)`, which is used both to fit the background
//! model and to evaluate it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{check_same_dims, sum_indexed, BinaryMask3, GridShape, Volume3};
use crate::morphology::DilatedRegion;

/// Which mask the distance weight map's skeleton is computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkeletonSource {
    /// Medial axis of the dilated bronchus region.
    Dilated,
    /// Medial axis of the airway mask itself.
    Bronchus,
}

/// Hyper-parameters of the weight-map pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdgConfig {
    /// Side of the cubic dilation kernel, in voxels.
    pub kernel_size: usize,
    /// Half-width of the difficulty ramp, in standard deviations.
    pub theta: f64,
    /// Extra weight available inside the dilated region.
    pub w_dila: f64,
    /// HU window mapped to `[0, 1]` before fitting.
    pub window: (f64, f64),
    pub sigma_floor: f64,
    pub skeleton_source: SkeletonSource,
}

impl Default for IdgConfig {
    fn default() -> Self {
        Self {
            kernel_size: 19,
            theta: 1.5,
            w_dila: 1.0,
            window: (-1000.0, 600.0),
            sigma_floor: 1e-4,
            skeleton_source: SkeletonSource::Dilated,
        }
    }
}

impl IdgConfig {
    /// Parses a TOML table; missing keys take their defaults.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Parameter(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return Err(Error::Kernel(self.kernel_size as i64));
        }
        if !(self.theta.is_finite() && self.theta > 0.0) {
            return Err(Error::Parameter(format!("theta = {} must be positive", self.theta)));
        }
        if !(self.w_dila.is_finite() && self.w_dila >= 0.0) {
            return Err(Error::Parameter(format!("w_dila = {} must be non-negative", self.w_dila)));
        }
        let (lo, hi) = self.window;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidWindow { lo, hi });
        }
        if !(self.sigma_floor.is_finite() && self.sigma_floor > 0.0) {
            return Err(Error::Parameter(format!("sigma_floor = {} must be positive", self.sigma_floor)));
        }
        Ok(())
    }
}

/// Gaussian fits of airway intensities and of background difficulty values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AirwayIntensityModel {
    pub mu_in: f64,
    pub sigma_in: f64,
    pub mu_out: f64,
    pub sigma_out: f64,
    pub n_in: usize,
    pub n_out: usize,
}

impl AirwayIntensityModel {
    /// Flipped background value: 1 for a voxel at the airway mean, lower for brighter voxels.
    #[inline]
    pub fn outer_difficulty(&self, x: f64) -> f64 {
        1.0 - (x - self.mu_in)
    }
}

/// Mean and population standard deviation over the selected voxels.
fn mean_std(n: usize, value: impl Fn(usize) -> f64 + Sync) -> (f64, f64) {
    let mean = sum_indexed(n, &value) / n as f64;
    let var = sum_indexed(n, |i| {
        let d = value(i) - mean;
        d * d
    }) / n as f64;
    (mean, var.sqrt())
}

fn check_normalized(image: &Volume3) -> Result<()> {
    if let Some(i) = image.data().iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Normalization(format!(
            "value {} at voxel {:?}",
            image.data()[i],
            image.shape().coords(i)
        )));
    }
    Ok(())
}

/// Fits the airway model on a normalized image.
pub fn fit_airway_model(image_norm: &Volume3, airway: &BinaryMask3, cfg: &IdgConfig) -> Result<AirwayIntensityModel> {
    check_same_dims(image_norm.shape(), airway.shape(), "image vs airway mask")?;
    check_normalized(image_norm)?;
    let inside = airway.indices();
    if inside.is_empty() {
        return Err(Error::EmptyMask("airway"));
    }
    let outside = airway.complement().indices();
    if outside.is_empty() {
        return Err(Error::EmptyMask("background"));
    }
    let img = image_norm.data();
    let (mu_in, sigma_in) = mean_std(inside.len(), |k| img[inside[k]] as f64);
    let flip = |x: f64| 1.0 - (x - mu_in);
    let (mu_out, sigma_out) = mean_std(outside.len(), |k| flip(img[outside[k]] as f64));
    Ok(AirwayIntensityModel {
        mu_in,
        sigma_in: sigma_in.max(cfg.sigma_floor),
        mu_out,
        sigma_out: sigma_out.max(cfg.sigma_floor),
        n_in: inside.len(),
        n_out: outside.len(),
    })
}

/// Clamped linear ramp from 0 at `mu - theta*sigma` to 1 at `mu + theta*sigma`.
pub fn difficulty_f(mu: f64, sigma: f64, theta: f64, x: f64) -> Result<f64> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::Parameter(format!("sigma = {sigma} must be positive")));
    }
    if !(theta.is_finite() && theta > 0.0) {
        return Err(Error::Parameter(format!("theta = {theta} must be positive")));
    }
    Ok(ramp(mu, sigma, theta, x))
}

#[inline]
fn ramp(mu: f64, sigma: f64, theta: f64, x: f64) -> f64 {
    let half = theta * sigma;
    // The upper boundary itself maps to 1 on the continuous ramp.
    if x >= mu + half {
        1.0
    } else if x <= mu - half {
        0.0
    } else {
        ((x - (mu - half)) / (2.0 * half)).clamp(0.0, 1.0)
    }
}

/// Intensity-prior weights in `[1, 1 + w_dila]`; 1 outside the dilated region.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityWeightMap {
    pub shape: GridShape,
    pub w: Vec<f64>,
}

pub fn build_intensity_weight_map(
    image_norm: &Volume3,
    region: &DilatedRegion,
    model: &AirwayIntensityModel,
    cfg: &IdgConfig,
) -> Result<IntensityWeightMap> {
    check_same_dims(image_norm.shape(), region.dilated.shape(), "image vs dilated region")?;
    if !(model.sigma_in > 0.0 && model.sigma_out > 0.0) {
        return Err(Error::Parameter("model standard deviations must be positive".into()));
    }
    if !(cfg.theta.is_finite() && cfg.theta > 0.0) {
        return Err(Error::Parameter(format!("theta = {} must be positive", cfg.theta)));
    }
    let img = image_norm.data();
    let inner = region.inner.data();
    let outer = region.outer.data();
    let w = (0..img.len())
        .into_par_iter()
        .map(|i| {
            let x = img[i] as f64;
            if inner[i] {
                1.0 + cfg.w_dila * ramp(model.mu_in, model.sigma_in, cfg.theta, x)
            } else if outer[i] {
                1.0 + cfg.w_dila * ramp(model.mu_out, model.sigma_out, cfg.theta, model.outer_difficulty(x))
            } else {
                1.0
            }
        })
        .collect();
    Ok(IntensityWeightMap { shape: *image_norm.shape(), w })
}
