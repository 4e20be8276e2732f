//! Exact Euclidean distance transform and the distance-prior weight map.
//!
//! The transform runs the 1D lower-envelope-of-parabolas algorithm along x,
//! then y, then z. Each pass scales sample positions by the axis spacing, so
//! distances are physical (mm) on anisotropic grids.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{check_same_dims, map_lines, BinaryMask3, GridShape};
use crate::morphology::DilatedRegion;

/// Squared distances (mm²) to the nearest seed voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    pub shape: GridShape,
    pub d2: Vec<f64>,
    /// Largest distance (mm) over the designated region; the whole grid unless
    /// narrowed with [`DistanceField::restrict_max`].
    pub d_max: f64,
}

impl DistanceField {
    #[inline]
    pub fn distance(&self, index: usize) -> f64 {
        self.d2[index].sqrt()
    }

    /// Recomputes `d_max` over `region` only (0 when the region is empty).
    pub fn restrict_max(&mut self, region: &BinaryMask3) -> Result<()> {
        check_same_dims(&self.shape, region.shape(), "distance region")?;
        self.d_max = max_sqrt(&self.d2, Some(region.data()));
        Ok(())
    }
}

fn max_sqrt(d2: &[f64], region: Option<&[bool]>) -> f64 {
    let m = match region {
        Some(r) => d2
            .par_iter()
            .zip(r.par_iter())
            .filter(|(_, &inside)| inside)
            .map(|(&v, _)| v)
            .reduce(|| 0.0, f64::max),
        None => d2.par_iter().copied().reduce(|| 0.0, f64::max),
    };
    m.sqrt()
}

/// 1D squared-distance transform of `f` with sample spacing `h`.
///
/// `f` holds squared distances from previous passes (`INFINITY` where no
/// seed has been reached); output `d[q] = min_p f[p] + (h (q - p))²`.
fn transform_line(f: &[f64], d: &mut [f64], h: f64, v: &mut Vec<usize>, z: &mut Vec<f64>) {
    v.clear();
    z.clear();
    for (q, &fq) in f.iter().enumerate() {
        if !fq.is_finite() {
            continue;
        }
        let pq = h * q as f64;
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let pp = h * p as f64;
                    let s = ((fq + pq * pq) - (f[p] + pp * pp)) / (2.0 * (pq - pp));
                    if s <= *z.last().unwrap() {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        d.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, out) in d.iter_mut().enumerate() {
        let x = h * q as f64;
        while k + 1 < v.len() && z[k + 1] < x {
            k += 1;
        }
        let p = v[k];
        let dx = x - h * p as f64;
        *out = dx * dx + f[p];
    }
}

/// Squared Euclidean distance (mm²) from every voxel to the nearest seed.
pub fn edt_squared(seeds: &BinaryMask3, spacing: [f64; 3]) -> Result<DistanceField> {
    if !seeds.any() {
        return Err(Error::NoSeeds);
    }
    let shape = seeds.shape().with_spacing(spacing)?;
    let mut d2: Vec<f64> = seeds.data().iter().map(|&s| if s { 0.0 } else { f64::INFINITY }).collect();
    for axis in 0..3 {
        let h = spacing[axis];
        d2 = map_lines(&d2, &shape, axis, |line, out| {
            let mut v = Vec::with_capacity(line.len());
            let mut z = Vec::with_capacity(line.len());
            transform_line(line, out, h, &mut v, &mut z);
        });
    }
    let d_max = max_sqrt(&d2, None);
    Ok(DistanceField { shape, d2, d_max })
}

/// Distance-prior weights: 2 on the skeleton falling linearly to 1 at the
/// farthest voxel of the dilated region; 1 outside the region.
#[derive(Debug, Clone, PartialEq)]
pub struct DistWeightMap {
    pub shape: GridShape,
    pub w: Vec<f64>,
}

/// `w = 1 + (1 - d / d_max)` inside the dilated region, `w = 1` outside.
///
/// `d` is the physical distance to the nearest skeleton voxel and `d_max`
/// its maximum over the dilated region. A region that is entirely skeleton
/// (`d_max = 0`) gets weight 2.
pub fn build_distance_weight_map(region: &DilatedRegion, skeleton: &BinaryMask3, spacing: [f64; 3]) -> Result<DistWeightMap> {
    check_same_dims(region.dilated.shape(), skeleton.shape(), "skeleton vs dilated region")?;
    if !skeleton.any() {
        return Err(Error::Precondition("skeleton is empty".into()));
    }
    if !skeleton.is_subset_of(&region.dilated)? {
        return Err(Error::Precondition("skeleton is not contained in the dilated region".into()));
    }
    let mut field = edt_squared(skeleton, spacing)?;
    field.restrict_max(&region.dilated)?;
    let d_max = field.d_max;
    let w = field
        .d2
        .par_iter()
        .zip(region.dilated.data().par_iter())
        .map(|(&d2, &inside)| {
            if !inside {
                1.0
            } else if d_max == 0.0 {
                2.0
            } else {
                (1.0 + (1.0 - d2.sqrt() / d_max)).clamp(1.0, 2.0)
            }
        })
        .collect();
    Ok(DistWeightMap { shape: field.shape, w })
}
