//! Synthetic bronchial-tree phantoms: a full binary tree of capsules with
//! bright walls, noisy parenchyma and dark airway-like pockets just outside
//! the airway.
//!
//! Noise is drawn from a ChaCha stream positioned at a fixed word offset per
//! voxel, so the output depends only on `PhantomSpec`, not on thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask3, GridShape, Volume3};
use crate::morphology::dilate_cube;

/// ChaCha words reserved for each voxel's noise sample.
const WORDS_PER_VOXEL: u128 = 16;
const NOISE_STREAM: u64 = 0;
const POCKET_STREAM: u64 = 1;
const POCKET_ATTEMPTS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    /// Voxel spacing; lengths and radii below are in mm.
    pub spacing: [f64; 3],
    /// Generations of the full binary tree; `2^depth - 1` segments.
    pub depth: u32,
    pub root_radius: f64,
    pub radius_decay: f64,
    pub root_length: f64,
    pub length_decay: f64,
    pub branch_angle_deg: f64,
    /// Normalized intensities in `[0, 1]`.
    pub airway_mu: f64,
    pub airway_sigma: f64,
    pub wall_intensity: f64,
    pub wall_thickness: f64,
    pub parenchyma_mu: f64,
    pub parenchyma_sigma: f64,
    pub n_confusable_pockets: usize,
    /// Pocket intensity sits at `airway_mu + pocket_offset`.
    pub pocket_offset: f64,
    pub pocket_radius: f64,
    /// HU window used to map normalized intensities back to HU.
    pub window: (f64, f64),
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: [96, 96, 96],
            spacing: [1.0, 1.0, 1.0],
            depth: 3,
            root_radius: 4.0,
            radius_decay: 0.75,
            root_length: 28.0,
            length_decay: 0.8,
            branch_angle_deg: 35.0,
            airway_mu: 0.05,
            airway_sigma: 0.02,
            wall_intensity: 0.6,
            wall_thickness: 1.5,
            parenchyma_mu: 0.3,
            parenchyma_sigma: 0.05,
            n_confusable_pockets: 6,
            pocket_offset: 0.02,
            pocket_radius: 2.0,
            window: (-1000.0, 600.0),
            seed: 0,
        }
    }
}

fn spec_err(msg: String) -> Error {
    Error::Spec(msg)
}

impl PhantomSpec {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let spec: Self = toml::from_str(s).map_err(|e| spec_err(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        GridShape::new(self.dims, self.spacing).map_err(|e| spec_err(e.to_string()))?;
        if !(1..=12).contains(&self.depth) {
            return Err(spec_err(format!("depth = {} must be in 1..=12", self.depth)));
        }
        if !(self.root_radius >= 1.0 && self.root_radius.is_finite()) {
            return Err(spec_err(format!("root_radius = {} must be at least 1", self.root_radius)));
        }
        if !(self.radius_decay > 0.0 && self.radius_decay < 1.0) {
            return Err(spec_err(format!("radius_decay = {} must be in (0, 1)", self.radius_decay)));
        }
        if !(self.length_decay > 0.0 && self.length_decay <= 1.0) {
            return Err(spec_err(format!("length_decay = {} must be in (0, 1]", self.length_decay)));
        }
        if !(self.root_length > 0.0 && self.root_length.is_finite()) {
            return Err(spec_err(format!("root_length = {} must be positive", self.root_length)));
        }
        if !(self.branch_angle_deg > 0.0 && self.branch_angle_deg < 90.0) {
            return Err(spec_err(format!("branch_angle_deg = {} must be in (0, 90)", self.branch_angle_deg)));
        }
        for (name, v) in [
            ("airway_mu", self.airway_mu),
            ("wall_intensity", self.wall_intensity),
            ("parenchyma_mu", self.parenchyma_mu),
            ("airway_mu + pocket_offset", self.airway_mu + self.pocket_offset),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(spec_err(format!("{name} = {v} must be in [0, 1]")));
            }
        }
        for (name, v) in [("airway_sigma", self.airway_sigma), ("parenchyma_sigma", self.parenchyma_sigma), ("wall_thickness", self.wall_thickness)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(spec_err(format!("{name} = {v} must be non-negative")));
            }
        }
        if !(self.pocket_radius > 0.0 && self.pocket_radius.is_finite()) {
            return Err(spec_err(format!("pocket_radius = {} must be positive", self.pocket_radius)));
        }
        let (lo, hi) = self.window;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidWindow { lo, hi });
        }
        Ok(())
    }
}

/// One capsule of the tree, in physical coordinates (mm) of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Segment {
    pub start: [f64; 3],
    pub end: [f64; 3],
    pub radius: f64,
    pub generation: u32,
}

impl Segment {
    /// Distance from `p` to the segment axis.
    pub fn axis_distance(&self, p: [f64; 3]) -> f64 {
        let d = sub(self.end, self.start);
        let len2 = dot(d, d);
        let t = if len2 > 0.0 { (dot(sub(p, self.start), d) / len2).clamp(0.0, 1.0) } else { 0.0 };
        norm(sub(p, add(self.start, scale(d, t))))
    }
}

#[derive(Debug, Clone)]
pub struct Phantom {
    /// CT-like intensities in HU.
    pub image: Volume3,
    pub mask: BinaryMask3,
    pub wall: BinaryMask3,
    pub pockets: BinaryMask3,
    pub segments: Vec<Segment>,
    pub pocket_centers: Vec<[f64; 3]>,
}

impl Phantom {
    pub fn n_segments(&self) -> usize {
        self.segments.len()
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}
fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}
fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}
fn unit(a: [f64; 3]) -> [f64; 3] {
    scale(a, 1.0 / norm(a))
}

/// Component of `e` orthogonal to the unit vector `d`, normalized.
fn perpendicular(d: [f64; 3], e: [f64; 3]) -> [f64; 3] {
    let p = sub(e, scale(d, dot(e, d)));
    if norm(p) < 1e-9 {
        let alt = if d[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
        return unit(sub(alt, scale(d, dot(alt, d))));
    }
    unit(p)
}

/// Tree segments rooted at the origin with the root pointing along -z.
fn tree_segments(spec: &PhantomSpec) -> Vec<Segment> {
    let angle = spec.branch_angle_deg.to_radians();
    let mut out = Vec::new();
    let mut frontier = vec![([0.0; 3], [0.0, 0.0, -1.0])];
    let (mut radius, mut length) = (spec.root_radius, spec.root_length);
    for generation in 0..spec.depth {
        let plane = if generation % 2 == 0 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
        let mut next = Vec::with_capacity(frontier.len() * 2);
        for (start, dir) in frontier {
            let end = add(start, scale(dir, length));
            out.push(Segment { start, end, radius, generation });
            let u = perpendicular(dir, plane);
            for sign in [1.0, -1.0] {
                next.push((end, unit(add(scale(dir, angle.cos()), scale(u, sign * angle.sin())))));
            }
        }
        frontier = next;
        radius *= spec.radius_decay;
        length *= spec.length_decay;
    }
    out
}

fn noise_at(base: &ChaCha8Rng, index: usize) -> f64 {
    let mut rng = base.clone();
    rng.set_word_pos(index as u128 * WORDS_PER_VOXEL);
    rng.sample(StandardNormal)
}

/// Builds the phantom described by `spec`.
pub fn generate(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let shape = GridShape::new(spec.dims, spec.spacing)?;
    let mut segments = tree_segments(spec);

    // Center the tree's padded bounding box in the grid.
    let pad = spec.wall_thickness + 2.0 * spec.pocket_radius + 1.0;
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for s in &segments {
        for p in [s.start, s.end] {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k] - s.radius - pad);
                hi[k] = hi[k].max(p[k] + s.radius + pad);
            }
        }
    }
    let mut shift = [0.0; 3];
    for k in 0..3 {
        let extent = (spec.dims[k] - 1) as f64 * spec.spacing[k];
        if hi[k] - lo[k] > extent {
            return Err(Error::Geometry(format!(
                "tree needs {:.1} mm along axis {k} but the grid spans {:.1} mm",
                hi[k] - lo[k],
                extent
            )));
        }
        shift[k] = 0.5 * extent - 0.5 * (lo[k] + hi[k]);
    }
    for s in &mut segments {
        s.start = add(s.start, shift);
        s.end = add(s.end, shift);
    }

    let position = |i: usize| {
        let c = shape.coords(i);
        [c[0] as f64 * spec.spacing[0], c[1] as f64 * spec.spacing[1], c[2] as f64 * spec.spacing[2]]
    };
    // Signed distance to the airway surface (negative inside).
    let surface: Vec<f64> = (0..shape.len())
        .into_par_iter()
        .map(|i| {
            let p = position(i);
            segments.iter().map(|s| s.axis_distance(p) - s.radius).fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mask = BinaryMask3::new(shape, surface.iter().map(|&d| d <= 0.0).collect())?;
    let wall = BinaryMask3::new(shape, surface.iter().map(|&d| d > 0.0 && d <= spec.wall_thickness).collect())?;
    if !mask.any() {
        return Err(Error::Geometry("airway tree rasterizes to no voxels".into()));
    }

    let (pockets, pocket_centers) = place_pockets(spec, &shape, &segments, &mask, &wall, &surface)?;

    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    noise_rng.set_stream(NOISE_STREAM);
    let (m, w, pk) = (mask.data(), wall.data(), pockets.data());
    let (wlo, whi) = spec.window;
    let data = (0..shape.len())
        .into_par_iter()
        .map(|i| {
            let z = noise_at(&noise_rng, i);
            let x = if m[i] {
                spec.airway_mu + spec.airway_sigma * z
            } else if pk[i] {
                spec.airway_mu + spec.pocket_offset + spec.airway_sigma * z
            } else if w[i] {
                spec.wall_intensity + spec.parenchyma_sigma * z
            } else {
                spec.parenchyma_mu + spec.parenchyma_sigma * z
            };
            (wlo + x.clamp(0.0, 1.0) * (whi - wlo)) as f32
        })
        .collect();
    let image = Volume3::new(shape, data)?;
    Ok(Phantom { image, mask, wall, pockets, segments, pocket_centers })
}

/// Spheres centered just beyond the wall of random segments, clipped to the
/// s = 19 dilation of the airway and kept off the airway and its wall.
fn place_pockets(
    spec: &PhantomSpec,
    shape: &GridShape,
    segments: &[Segment],
    mask: &BinaryMask3,
    wall: &BinaryMask3,
    surface: &[f64],
) -> Result<(BinaryMask3, Vec<[f64; 3]>)> {
    let mut pockets = BinaryMask3::empty(*shape);
    let mut centers = Vec::new();
    if spec.n_confusable_pockets == 0 {
        return Ok((pockets, centers));
    }
    let kernel = 19usize.min(2 * shape.dims().into_iter().max().unwrap_or(1) - 1) | 1;
    let allowed = dilate_cube(mask, kernel)?.and_not(&mask.or(wall)?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(POCKET_STREAM);
    let sp = shape.spacing();
    let r = spec.pocket_radius;
    for _ in 0..spec.n_confusable_pockets {
        for _ in 0..POCKET_ATTEMPTS {
            let s = &segments[rng.gen_range(0..segments.len())];
            let t: f64 = rng.gen_range(0.15..0.85);
            let axis = unit(sub(s.end, s.start));
            let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let u = perpendicular(axis, [1.0, 0.0, 0.0]);
            let v = [axis[1] * u[2] - axis[2] * u[1], axis[2] * u[0] - axis[0] * u[2], axis[0] * u[1] - axis[1] * u[0]];
            let radial = add(scale(u, phi.cos()), scale(v, phi.sin()));
            let on_axis = add(s.start, scale(sub(s.end, s.start), t));
            let c = add(on_axis, scale(radial, s.radius + spec.wall_thickness + r + 1.0));
            // Skip centers that landed near another part of the tree.
            let ci = [0, 1, 2].map(|k| (c[k] / sp[k]).round() as i64);
            let Some(cidx) = shape.checked_index(ci[0], ci[1], ci[2]) else { continue };
            if surface[cidx] < spec.wall_thickness + r {
                continue;
            }
            let mut voxels = Vec::new();
            let ext = [0, 1, 2].map(|k| (r / sp[k]).ceil() as i64);
            for dz in -ext[2]..=ext[2] {
                for dy in -ext[1]..=ext[1] {
                    for dx in -ext[0]..=ext[0] {
                        let Some(j) = shape.checked_index(ci[0] + dx, ci[1] + dy, ci[2] + dz) else { continue };
                        let q = shape.coords(j);
                        let p = [q[0] as f64 * sp[0], q[1] as f64 * sp[1], q[2] as f64 * sp[2]];
                        if norm(sub(p, c)) <= r && allowed.data()[j] {
                            voxels.push(j);
                        }
                    }
                }
            }
            if voxels.is_empty() {
                continue;
            }
            for j in voxels {
                pockets.set_linear(j, true);
            }
            centers.push(c);
            break;
        }
    }
    Ok((pockets, centers))
}
