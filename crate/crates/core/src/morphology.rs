//! Binary morphology on voxel masks.
//!
//! - [`dilate_cube`]: dilation by an `s x s x s` cube, as three separable 1D passes
//! - [`skeletonize`]: directional thinning that deletes simple points only
//! - [`connected_components`]: 6/18/26-connected labelling
//!
//! Thinning uses 26-connectivity for the foreground and 6-connectivity for
//! the background. A voxel is deleted only if it is simple (its removal does
//! not change the topology of its 3x3x3 neighbourhood) and is not a curve
//! end point, so curve skeletons keep their full extent.

use std::sync::OnceLock;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{map_lines, BinaryMask3, GridShape};

/// Dilation by a centered cube of side `s` (odd), clipped at the volume faces.
pub fn dilate_cube(m: &BinaryMask3, s: usize) -> Result<BinaryMask3> {
    let shape = *m.shape();
    let max_extent = shape.dims().into_iter().max().unwrap_or(1);
    if s == 0 || s % 2 == 0 || s > 2 * max_extent {
        return Err(Error::Kernel(s as i64));
    }
    if s == 1 {
        return Ok(m.clone());
    }
    let r = s / 2;
    let mut data = m.data().to_vec();
    for axis in 0..3 {
        data = map_lines(&data, &shape, axis, |line, out| dilate_line(line, out, r));
    }
    BinaryMask3::new(shape, data)
}

/// out[i] = any(line[i - r ..= i + r]) via a running count of set voxels.
fn dilate_line(line: &[bool], out: &mut [bool], r: usize) {
    let n = line.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0u32);
    let mut acc = 0u32;
    for &b in line {
        acc += b as u32;
        prefix.push(acc);
    }
    for (i, o) in out.iter_mut().enumerate() {
        let lo = i.saturating_sub(r);
        let hi = (i + r + 1).min(n);
        *o = prefix[hi] > prefix[lo];
    }
}

/// The dilated bronchus region split into the airway itself and the shell around it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DilatedRegion {
    pub dilated: BinaryMask3,
    pub inner: BinaryMask3,
    pub outer: BinaryMask3,
    pub kernel_size: usize,
}

pub fn build_dilated_region(bronchus: &BinaryMask3, s: usize) -> Result<DilatedRegion> {
    if !bronchus.any() {
        return Err(Error::EmptyMask("bronchus"));
    }
    let dilated = dilate_cube(bronchus, s)?;
    let outer = dilated.and_not(bronchus)?;
    Ok(DilatedRegion { dilated, inner: bronchus.clone(), outer, kernel_size: s })
}

// 3x3x3 neighbourhood bit layout: bit k <-> offset (k % 3 - 1, k / 3 % 3 - 1, k / 9 - 1).
const CENTER: usize = 13;

struct NeighborTables {
    /// 26-adjacency between neighbourhood cells (center excluded).
    adj26: [u32; 27],
    /// 6-adjacency restricted to the 18-neighbourhood (center excluded).
    adj6: [u32; 27],
    n18: u32,
    face6: u32,
}

fn offset_of(k: usize) -> [i32; 3] {
    [(k % 3) as i32 - 1, (k / 3 % 3) as i32 - 1, (k / 9) as i32 - 1]
}

fn tables() -> &'static NeighborTables {
    static TABLES: OnceLock<NeighborTables> = OnceLock::new();
    TABLES.get_or_init(|| {
        let mut t = NeighborTables { adj26: [0; 27], adj6: [0; 27], n18: 0, face6: 0 };
        let l1 = |o: [i32; 3]| o.iter().map(|v| v.abs()).sum::<i32>();
        for k in 0..27 {
            if k == CENTER {
                continue;
            }
            let ok = offset_of(k);
            if l1(ok) <= 2 {
                t.n18 |= 1 << k;
            }
            if l1(ok) == 1 {
                t.face6 |= 1 << k;
            }
            for j in 0..27 {
                if j == CENTER || j == k {
                    continue;
                }
                let oj = offset_of(j);
                let d = [ok[0] - oj[0], ok[1] - oj[1], ok[2] - oj[2]];
                if d.iter().all(|v| v.abs() <= 1) {
                    t.adj26[k] |= 1 << j;
                }
                if l1(d) == 1 && l1(ok) <= 2 && l1(oj) <= 2 {
                    t.adj6[k] |= 1 << j;
                }
            }
        }
        t
    })
}

fn flood(seed_bit: usize, set: u32, adj: &[u32; 27]) -> u32 {
    let mut comp = 1u32 << seed_bit;
    loop {
        let mut next = comp;
        let mut bits = comp;
        while bits != 0 {
            let b = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            next |= adj[b] & set;
        }
        if next == comp {
            return comp;
        }
        comp = next;
    }
}

/// Number of 26-components of the foreground neighbours (center excluded).
fn foreground_components(nb: u32) -> usize {
    let t = tables();
    let mut rest = nb & !(1 << CENTER);
    let mut count = 0;
    while rest != 0 {
        let comp = flood(rest.trailing_zeros() as usize, rest, &t.adj26);
        rest &= !comp;
        count += 1;
    }
    count
}

/// Number of 6-components of the background in the 18-neighbourhood that touch a face neighbour.
fn background_components(nb: u32) -> usize {
    let t = tables();
    let bg = !nb & t.n18;
    let mut rest = bg;
    let mut count = 0;
    while rest != 0 {
        let comp = flood(rest.trailing_zeros() as usize, rest, &t.adj6);
        rest &= !comp;
        if comp & t.face6 != 0 {
            count += 1;
        }
    }
    count
}

/// Whether the center of a 3x3x3 neighbourhood is a (26, 6) simple point.
pub fn is_simple(nb: u32) -> bool {
    foreground_components(nb) == 1 && background_components(nb) == 1
}

#[inline]
fn foreground_neighbors(nb: u32) -> u32 {
    (nb & !(1 << CENTER)).count_ones()
}

fn neighborhood(data: &[bool], shape: &GridShape, index: usize) -> u32 {
    let [x, y, z] = shape.coords(index);
    let (x, y, z) = (x as i64, y as i64, z as i64);
    let mut nb = 0u32;
    for k in 0..27 {
        let o = offset_of(k);
        if let Some(j) = shape.checked_index(x + o[0] as i64, y + o[1] as i64, z + o[2] as i64) {
            if data[j] {
                nb |= 1 << k;
            }
        }
    }
    nb
}

// Face neighbour checked in each of the six directional sub-iterations.
const BORDER_BITS: [usize; 6] = [
    CENTER - 3, // -y
    CENTER + 3, // +y
    CENTER + 1, // +x
    CENTER - 1, // -x
    CENTER + 9, // +z
    CENTER - 9, // -z
];

/// Topology-preserving thinning to a curve skeleton.
///
/// Each pass visits the six face directions in turn; a voxel is a candidate
/// when its neighbour in that direction is background, it is not a curve end
/// (exactly one foreground neighbour), and it is simple. Candidates are then re-checked
/// and deleted one at a time in ascending index order, which keeps the
/// result independent of how candidate collection is parallelised. Passes
/// repeat until nothing changes.
pub fn skeletonize(m: &BinaryMask3) -> Result<BinaryMask3> {
    if !m.any() {
        return Err(Error::EmptyMask("skeleton input"));
    }
    let shape = *m.shape();
    let mut data = m.data().to_vec();
    let mut alive = m.indices();
    loop {
        let mut changed = false;
        for &border in &BORDER_BITS {
            let candidates: Vec<usize> = alive
                .par_iter()
                .copied()
                .filter(|&i| {
                    let nb = neighborhood(&data, &shape, i);
                    nb & (1 << border) == 0 && foreground_neighbors(nb) != 1 && is_simple(nb)
                })
                .collect();
            let mut removed = false;
            for i in candidates {
                let nb = neighborhood(&data, &shape, i);
                if foreground_neighbors(nb) != 1 && is_simple(nb) {
                    data[i] = false;
                    removed = true;
                }
            }
            if removed {
                alive.retain(|&i| data[i]);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    BinaryMask3::new(shape, data)
}

/// Voxel adjacency used for component labelling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Six,
    Eighteen,
    TwentySix,
}

impl Connectivity {
    pub fn from_count(n: u32) -> Result<Self> {
        match n {
            6 => Ok(Self::Six),
            18 => Ok(Self::Eighteen),
            26 => Ok(Self::TwentySix),
            other => Err(Error::Parameter(format!("connectivity {other} (expected 6, 18 or 26)"))),
        }
    }

    fn admits(self, o: [i32; 3]) -> bool {
        let l1: i32 = o.iter().map(|v| v.abs()).sum();
        match self {
            Self::Six => l1 == 1,
            Self::Eighteen => (1..=2).contains(&l1),
            Self::TwentySix => l1 >= 1,
        }
    }

    /// Offsets that precede the center in raster order.
    fn backward_offsets(self) -> Vec<[i32; 3]> {
        (0..CENTER).map(offset_of).filter(|&o| self.admits(o)).collect()
    }

    pub fn offsets(self) -> Vec<[i32; 3]> {
        (0..27).filter(|&k| k != CENTER).map(offset_of).filter(|&o| self.admits(o)).collect()
    }
}

/// Component labelling result. Label 0 is background; labels `1..=K` are
/// ordered by decreasing size, ties broken by the smallest voxel index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Components {
    pub shape: GridShape,
    pub labels: Vec<u32>,
    /// `sizes[k]` is the voxel count of label `k + 1`.
    pub sizes: Vec<usize>,
}

impl Components {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    pub fn mask_of(&self, label: u32) -> BinaryMask3 {
        let data = self.labels.iter().map(|&l| l == label && label != 0).collect();
        BinaryMask3::new(self.shape, data).expect("labels match shape")
    }
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Keep the smaller id as root so roots are first-visited voxels.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Two-pass union-find labelling.
pub fn connected_components(m: &BinaryMask3, connectivity: Connectivity) -> Components {
    let shape = *m.shape();
    let data = m.data();
    let backward = connectivity.backward_offsets();
    let mut provisional = vec![u32::MAX; data.len()];
    let mut sets = DisjointSet { parent: Vec::new() };
    for (i, &fg) in data.iter().enumerate() {
        if !fg {
            continue;
        }
        let [x, y, z] = shape.coords(i);
        let mut own: Option<u32> = None;
        for o in &backward {
            let j = shape.checked_index(x as i64 + o[0] as i64, y as i64 + o[1] as i64, z as i64 + o[2] as i64);
            if let Some(j) = j {
                let lj = provisional[j];
                if lj != u32::MAX {
                    match own {
                        None => own = Some(lj),
                        Some(l) => sets.union(l, lj),
                    }
                }
            }
        }
        provisional[i] = own.unwrap_or_else(|| {
            let id = sets.parent.len() as u32;
            sets.parent.push(id);
            id
        });
    }

    // Resolve roots; record size and first voxel of each root.
    let n_prov = sets.parent.len();
    let mut size = vec![0usize; n_prov];
    let mut first = vec![usize::MAX; n_prov];
    for (i, l) in provisional.iter_mut().enumerate() {
        if *l == u32::MAX {
            continue;
        }
        let r = sets.find(*l);
        *l = r;
        size[r as usize] += 1;
        first[r as usize] = first[r as usize].min(i);
    }
    let mut roots: Vec<usize> = (0..n_prov).filter(|&r| size[r] > 0).collect();
    roots.sort_by(|&a, &b| size[b].cmp(&size[a]).then(first[a].cmp(&first[b])));
    let mut final_label = vec![0u32; n_prov];
    for (k, &r) in roots.iter().enumerate() {
        final_label[r] = k as u32 + 1;
    }
    let labels = provisional
        .iter()
        .map(|&l| if l == u32::MAX { 0 } else { final_label[l as usize] })
        .collect();
    let sizes = roots.iter().map(|&r| size[r]).collect();
    Components { shape, labels, sizes }
}

/// Largest 26-connected component; empty input gives an empty mask.
pub fn largest_component(m: &BinaryMask3) -> BinaryMask3 {
    let comps = connected_components(m, Connectivity::TwentySix);
    if comps.count() == 0 {
        return BinaryMask3::empty(*m.shape());
    }
    comps.mask_of(1)
}
