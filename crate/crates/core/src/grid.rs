//! Dense 3D grids, cropping and tiling, and intensity windowing.
//!
//! Every grid in the crate stores voxels x-fastest: the linear index of
//! `(x, y, z)` is `x + nx * (y + ny * z)`.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Voxel counts and physical spacing (mm) of a grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridShape {
    dims: [usize; 3],
    spacing: [f64; 3],
}

impl GridShape {
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidShape(format!("dimensions {dims:?} must all be positive")));
        }
        if dims.iter().try_fold(1usize, |acc, &n| acc.checked_mul(n)).is_none() {
            return Err(Error::InvalidShape(format!("dimensions {dims:?} overflow")));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::InvalidShape(format!(
                "spacing {spacing:?} must be finite and strictly positive"
            )));
        }
        Ok(Self { dims, spacing })
    }

    /// Unit spacing on every axis.
    pub fn isotropic(dims: [usize; 3]) -> Result<Self> {
        Self::new(dims, [1.0; 3])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn nx(&self) -> usize {
        self.dims[0]
    }

    pub fn ny(&self) -> usize {
        self.dims[1]
    }

    pub fn nz(&self) -> usize {
        self.dims[2]
    }

    /// Total number of voxels.
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Always false; a grid has at least one voxel.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn with_spacing(&self, spacing: [f64; 3]) -> Result<Self> {
        Self::new(self.dims, spacing)
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.dims[0] && y < self.dims[1] && z < self.dims[2]);
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    /// Linear index of a signed coordinate, or `None` outside the grid.
    #[inline]
    pub fn checked_index(&self, x: i64, y: i64, z: i64) -> Option<usize> {
        if x < 0 || y < 0 || z < 0 {
            return None;
        }
        let (x, y, z) = (x as usize, y as usize, z as usize);
        if x >= self.dims[0] || y >= self.dims[1] || z >= self.dims[2] {
            return None;
        }
        Some(self.index(x, y, z))
    }

    /// Linear stride of one step along `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        match axis {
            0 => 1,
            1 => self.dims[0],
            _ => self.dims[0] * self.dims[1],
        }
    }

    pub fn same_dims(&self, other: &GridShape) -> bool {
        self.dims == other.dims
    }
}

// Spacing is always finite, so equality is reflexive.
impl Eq for GridShape {}

pub(crate) fn check_same_dims(a: &GridShape, b: &GridShape, what: &str) -> Result<()> {
    if a.same_dims(b) {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!(
            "{what}: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )))
    }
}

/// Scalar volume of 32-bit values (CT intensities, probabilities, weights).
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3 {
    shape: GridShape,
    data: Vec<f32>,
}

impl Volume3 {
    pub fn new(shape: GridShape, data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::ShapeMismatch(format!(
                "volume data has {} values, grid {:?} needs {}",
                data.len(),
                shape.dims(),
                shape.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite value {} at voxel {:?}",
                data[i],
                shape.coords(i)
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: GridShape, value: f32) -> Self {
        assert!(value.is_finite(), "fill value must be finite");
        Self { shape, data: vec![value; shape.len()] }
    }

    /// Builds a volume by evaluating `f` at every voxel coordinate.
    pub fn from_fn<F>(shape: GridShape, f: F) -> Result<Self>
    where
        F: Fn([usize; 3]) -> f32 + Sync,
    {
        let data = (0..shape.len()).into_par_iter().map(|i| f(shape.coords(i))).collect();
        Self::new(shape, data)
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.shape.index(x, y, z)]
    }

    /// Same data on a grid with different spacing.
    pub fn with_spacing(mut self, spacing: [f64; 3]) -> Result<Self> {
        self.shape = self.shape.with_spacing(spacing)?;
        Ok(self)
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Arithmetic mean with a thread-count independent summation order.
    pub fn mean(&self) -> f64 {
        sum_indexed(self.data.len(), |i| self.data[i] as f64) / self.data.len() as f64
    }

    /// Overwrites the block starting at `origin` with `tile`.
    pub fn paste(&mut self, tile: &Volume3, origin: [usize; 3]) -> Result<()> {
        check_block(&self.shape, origin, tile.shape.dims())?;
        paste_block(&mut self.data, &self.shape, &tile.data, &tile.shape, origin);
        Ok(())
    }
}

/// Boolean voxel grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask3 {
    shape: GridShape,
    data: Vec<bool>,
}

impl BinaryMask3 {
    pub fn new(shape: GridShape, data: Vec<bool>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::ShapeMismatch(format!(
                "mask data has {} values, grid {:?} needs {}",
                data.len(),
                shape.dims(),
                shape.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn empty(shape: GridShape) -> Self {
        Self { shape, data: vec![false; shape.len()] }
    }

    pub fn from_fn<F>(shape: GridShape, f: F) -> Self
    where
        F: Fn([usize; 3]) -> bool + Sync,
    {
        let data = (0..shape.len()).into_par_iter().map(|i| f(shape.coords(i))).collect();
        Self { shape, data }
    }

    /// Mask with exactly the given linear indices set.
    pub fn from_indices<I: IntoIterator<Item = usize>>(shape: GridShape, indices: I) -> Result<Self> {
        let mut m = Self::empty(shape);
        for i in indices {
            if i >= m.data.len() {
                return Err(Error::OutOfBounds(format!("voxel index {i} outside {:?}", shape.dims())));
            }
            m.data[i] = true;
        }
        Ok(m)
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn into_data(self) -> Vec<bool> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[self.shape.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, value: bool) {
        let i = self.shape.index(x, y, z);
        self.data[i] = value;
    }

    pub fn set_linear(&mut self, index: usize, value: bool) {
        self.data[index] = value;
    }

    pub fn with_spacing(mut self, spacing: [f64; 3]) -> Result<Self> {
        self.shape = self.shape.with_spacing(spacing)?;
        Ok(self)
    }

    /// Number of foreground voxels.
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn any(&self) -> bool {
        self.data.iter().any(|&b| b)
    }

    /// Linear indices of foreground voxels in ascending order.
    pub fn indices(&self) -> Vec<usize> {
        self.data.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
    }

    pub fn complement(&self) -> Self {
        Self { shape: self.shape, data: self.data.iter().map(|&b| !b).collect() }
    }

    pub fn and(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a && b)
    }

    pub fn or(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a || b)
    }

    /// Voxels in `self` but not in `other`.
    pub fn and_not(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a && !b)
    }

    pub fn is_subset_of(&self, other: &Self) -> Result<bool> {
        check_same_dims(&self.shape, &other.shape, "mask subset test")?;
        Ok(self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b))
    }

    /// 0/1 volume of the mask.
    pub fn to_volume(&self) -> Volume3 {
        Volume3 {
            shape: self.shape,
            data: self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn paste(&mut self, tile: &BinaryMask3, origin: [usize; 3]) -> Result<()> {
        check_block(&self.shape, origin, tile.shape.dims())?;
        paste_block(&mut self.data, &self.shape, &tile.data, &tile.shape, origin);
        Ok(())
    }

    fn zip(&self, other: &Self, f: impl Fn(bool, bool) -> bool) -> Result<Self> {
        check_same_dims(&self.shape, &other.shape, "mask combination")?;
        Ok(Self {
            shape: self.shape,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }
}

/// Maps intensities to `[0, 1]` through the window `[lo, hi]`, clamping outside it.
pub fn normalize_window(v: &Volume3, lo: f64, hi: f64) -> Result<Volume3> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidWindow { lo, hi });
    }
    let width = hi - lo;
    let data = v
        .data
        .par_iter()
        .map(|&x| (((x as f64) - lo) / width).clamp(0.0, 1.0) as f32)
        .collect();
    Ok(Volume3 { shape: v.shape, data })
}

fn check_block(shape: &GridShape, origin: [usize; 3], size: [usize; 3]) -> Result<()> {
    for axis in 0..3 {
        let end = origin[axis].checked_add(size[axis]);
        if size[axis] == 0 || end.is_none_or(|e| e > shape.dims()[axis]) {
            return Err(Error::OutOfBounds(format!(
                "block at {origin:?} of size {size:?} does not fit in {:?}",
                shape.dims()
            )));
        }
    }
    Ok(())
}

fn crop_block<T: Copy>(data: &[T], shape: &GridShape, origin: [usize; 3], size: [usize; 3]) -> Vec<T> {
    let mut out = Vec::with_capacity(size[0] * size[1] * size[2]);
    for z in 0..size[2] {
        for y in 0..size[1] {
            let start = shape.index(origin[0], origin[1] + y, origin[2] + z);
            out.extend_from_slice(&data[start..start + size[0]]);
        }
    }
    out
}

fn paste_block<T: Copy>(dst: &mut [T], shape: &GridShape, src: &[T], src_shape: &GridShape, origin: [usize; 3]) {
    let [sx, sy, sz] = src_shape.dims();
    for z in 0..sz {
        for y in 0..sy {
            let d = shape.index(origin[0], origin[1] + y, origin[2] + z);
            let s = src_shape.index(0, y, z);
            dst[d..d + sx].copy_from_slice(&src[s..s + sx]);
        }
    }
}

/// Axis-aligned sub-block of a volume; spacing is preserved.
pub fn crop(v: &Volume3, origin: [usize; 3], size: [usize; 3]) -> Result<Volume3> {
    check_block(&v.shape, origin, size)?;
    let shape = GridShape::new(size, v.shape.spacing())?;
    Ok(Volume3 { shape, data: crop_block(&v.data, &v.shape, origin, size) })
}

/// Mask counterpart of [`crop`].
pub fn crop_mask(m: &BinaryMask3, origin: [usize; 3], size: [usize; 3]) -> Result<BinaryMask3> {
    check_block(&m.shape, origin, size)?;
    let shape = GridShape::new(size, m.shape.spacing())?;
    Ok(BinaryMask3 { shape, data: crop_block(&m.data, &m.shape, origin, size) })
}

/// Window start positions along one axis.
///
/// Starts step by `window - overlap` from 0; the last start is clamped to
/// `extent - window` so the final window ends flush with the axis.
pub fn plan_tiling(extent: usize, window: usize, overlap: usize) -> Result<Vec<usize>> {
    if window == 0 || window > extent {
        return Err(Error::Tiling(format!("window {window} must be in 1..={extent}")));
    }
    if overlap >= window {
        return Err(Error::Tiling(format!("overlap {overlap} must be smaller than window {window}")));
    }
    let step = window - overlap;
    let last = extent - window;
    let mut starts = Vec::new();
    let mut s = 0;
    while s < last {
        starts.push(s);
        s += step;
    }
    starts.push(last);
    Ok(starts)
}

/// Per-axis tiling of a grid into (possibly overlapping) windows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TilingPlan {
    pub window: [usize; 3],
    pub overlap: [usize; 3],
    pub starts: [Vec<usize>; 3],
}

impl TilingPlan {
    pub fn new(shape: &GridShape, window: [usize; 3], overlap: [usize; 3]) -> Result<Self> {
        let dims = shape.dims();
        let starts = [
            plan_tiling(dims[0], window[0], overlap[0])?,
            plan_tiling(dims[1], window[1], overlap[1])?,
            plan_tiling(dims[2], window[2], overlap[2])?,
        ];
        Ok(Self { window, overlap, starts })
    }

    /// Tile origins, x varying fastest.
    pub fn origins(&self) -> Vec<[usize; 3]> {
        let mut out = Vec::new();
        for &z in &self.starts[2] {
            for &y in &self.starts[1] {
                for &x in &self.starts[0] {
                    out.push([x, y, z]);
                }
            }
        }
        out
    }
}

/// Applies `f(input_line, output_line)` to every 1D line of `data` along `axis`.
///
/// Lines are independent, so the result does not depend on the number of
/// worker threads.
pub(crate) fn map_lines<T, F>(data: &[T], shape: &GridShape, axis: usize, f: F) -> Vec<T>
where
    T: Copy + Send + Sync + Default,
    F: Fn(&[T], &mut [T]) + Sync,
{
    let [nx, ny, nz] = shape.dims();
    if axis == 0 {
        let mut out = vec![T::default(); data.len()];
        out.par_chunks_mut(nx)
            .zip(data.par_chunks(nx))
            .for_each(|(o, i)| f(i, o));
        return out;
    }
    let (len, stride) = if axis == 1 { (ny, nx) } else { (nz, nx * ny) };
    // Base indices of lines: every voxel whose coordinate along `axis` is 0.
    let bases: Vec<usize> = if axis == 1 {
        (0..nz).flat_map(|z| (0..nx).map(move |x| x + nx * ny * z)).collect()
    } else {
        (0..nx * ny).collect()
    };
    let lines: Vec<Vec<T>> = bases
        .par_iter()
        .map_init(
            || vec![T::default(); len],
            |buf, &base| {
                for (k, slot) in buf.iter_mut().enumerate() {
                    *slot = data[base + k * stride];
                }
                let mut res = vec![T::default(); len];
                f(buf, &mut res);
                res
            },
        )
        .collect();
    let mut out = vec![T::default(); data.len()];
    for (base, line) in bases.iter().zip(lines) {
        for (k, v) in line.into_iter().enumerate() {
            out[base + k * stride] = v;
        }
    }
    out
}

const PAIRWISE_BLOCK: usize = 1024;

/// Sums `f(0) + ... + f(n - 1)` over a fixed binary tree of blocks.
///
/// The tree shape depends only on `n`, so the rounding is identical for any
/// number of threads.
pub fn sum_indexed<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    fn rec<F: Fn(usize) -> f64 + Sync>(lo: usize, hi: usize, f: &F) -> f64 {
        if hi - lo <= PAIRWISE_BLOCK {
            let mut acc = 0.0;
            for i in lo..hi {
                acc += f(i);
            }
            return acc;
        }
        let mid = lo + (hi - lo) / 2;
        let (a, b) = rayon::join(|| rec(lo, mid, f), || rec(mid, hi, f));
        a + b
    }
    if n == 0 {
        return 0.0;
    }
    rec(0, n, &f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(d: [usize; 3]) -> GridShape {
        GridShape::isotropic(d).unwrap()
    }

    #[test]
    fn index_roundtrip() {
        let s = shape([3, 4, 5]);
        for i in 0..s.len() {
            let [x, y, z] = s.coords(i);
            assert_eq!(s.index(x, y, z), i);
        }
        assert_eq!(s.index(2, 1, 1), 2 + 3 * (1 + 4));
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(GridShape::new([0, 1, 1], [1.0; 3]).is_err());
        assert!(GridShape::new([1, 1, 1], [1.0, 0.0, 1.0]).is_err());
        assert!(GridShape::new([1, 1, 1], [1.0, f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn volume_rejects_nonfinite_and_wrong_len() {
        let s = shape([2, 1, 1]);
        assert!(Volume3::new(s, vec![0.0]).is_err());
        assert!(Volume3::new(s, vec![0.0, f32::NAN]).is_err());
        assert!(Volume3::new(s, vec![0.0, f32::INFINITY]).is_err());
    }

    #[test]
    fn normalize_window_examples() {
        let s = shape([3, 1, 1]);
        let v = Volume3::new(s, vec![-1000.0, 600.0, -200.0]).unwrap();
        let n = normalize_window(&v, -1000.0, 600.0).unwrap();
        assert_eq!(n.data(), &[0.0, 1.0, 0.5]);
        assert!(matches!(normalize_window(&v, 1.0, 1.0), Err(Error::InvalidWindow { .. })));
        assert!(normalize_window(&v, 2.0, 1.0).is_err());
    }

    #[test]
    fn crop_identity_and_interior() {
        let s = shape([4, 4, 4]);
        let v = Volume3::from_fn(s, |[x, y, z]| (x + 4 * y + 16 * z) as f32).unwrap();
        assert_eq!(crop(&v, [0, 0, 0], [4, 4, 4]).unwrap(), v);

        let c = crop(&v, [1, 1, 1], [2, 2, 2]).unwrap();
        let mut expected = Vec::new();
        for z in 1..3 {
            for y in 1..3 {
                for x in 1..3 {
                    expected.push(v.get(x, y, z));
                }
            }
        }
        assert_eq!(c.data(), expected.as_slice());
        assert!(matches!(crop(&v, [3, 0, 0], [2, 1, 1]), Err(Error::OutOfBounds(_))));
    }

    #[test]
    fn crop_keeps_spacing() {
        let s = GridShape::new([4, 4, 4], [0.5, 0.7, 2.0]).unwrap();
        let v = Volume3::filled(s, 1.0);
        assert_eq!(crop(&v, [1, 0, 0], [2, 2, 2]).unwrap().shape().spacing(), [0.5, 0.7, 2.0]);
    }

    #[test]
    fn tiling_examples() {
        assert_eq!(plan_tiling(96, 96, 16).unwrap(), vec![0]);
        assert_eq!(plan_tiling(176, 96, 16).unwrap(), vec![0, 80]);
        assert_eq!(plan_tiling(100, 96, 16).unwrap(), vec![0, 4]);
        assert!(matches!(plan_tiling(50, 96, 16), Err(Error::Tiling(_))));
        assert!(plan_tiling(96, 16, 16).is_err());
    }

    #[test]
    fn pairwise_sum_matches_naive_on_integers() {
        let n = 10_000;
        let s = sum_indexed(n, |i| i as f64);
        assert_eq!(s, (n * (n - 1) / 2) as f64);
        assert_eq!(sum_indexed(0, |_| 1.0), 0.0);
    }

    #[test]
    fn map_lines_visits_each_axis() {
        let s = shape([3, 4, 5]);
        let data: Vec<f64> = (0..s.len()).map(|i| i as f64).collect();
        for axis in 0..3 {
            // Reverse each line; reversing twice is the identity.
            let rev = |i: &[f64], o: &mut [f64]| {
                for (k, v) in i.iter().rev().enumerate() {
                    o[k] = *v;
                }
            };
            let once = map_lines(&data, &s, axis, rev);
            assert_ne!(once, data);
            assert_eq!(map_lines(&once, &s, axis, rev), data);
        }
    }
}
