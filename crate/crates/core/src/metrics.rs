//! Segmentation scores: Dice, tree length detected (TD), branches detected (BD),
//! and histograms of misclassified-voxel intensities.
//!
//! TD and BD are measured on the ground-truth skeleton. Each skeleton voxel
//! carries half the physical length of every skeleton edge (26-adjacent
//! pair) it touches, so voxel lengths sum to the total edge length.

use std::collections::HashSet;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{check_same_dims, BinaryMask3, GridShape, Volume3};
use crate::morphology::{largest_component, skeletonize, Connectivity};

/// Dice coefficient `2|P ∩ G| / (|P| + |G|)`; 1 when both masks are empty.
pub fn dsc(pred: &BinaryMask3, gt: &BinaryMask3) -> Result<f64> {
    check_same_dims(pred.shape(), gt.shape(), "prediction vs ground truth")?;
    let (mut inter, mut np, mut ng) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        np += p as usize;
        ng += g as usize;
        inter += (p && g) as usize;
    }
    if np + ng == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (np + ng) as f64)
}

/// One skeleton segment between two nodes (junction clusters or end points).
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    /// Linear voxel indices in path order; terminal junction voxels are shared
    /// with the other branches meeting there.
    pub voxels: Vec<usize>,
    pub length_mm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonGraph {
    pub shape: GridShape,
    pub voxels: Vec<usize>,
    /// Voxels with three or more skeleton neighbours.
    pub junctions: Vec<usize>,
    /// Voxels with exactly one skeleton neighbour.
    pub endpoints: Vec<usize>,
    pub branches: Vec<Branch>,
}

impl SkeletonGraph {
    pub fn total_length_mm(&self) -> f64 {
        self.branches.iter().map(|b| b.length_mm).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }
}

/// Skeleton voxels with their 26-neighbour lists (positions into `voxels`).
struct Adjacency {
    voxels: Vec<usize>,
    neighbors: Vec<Vec<u32>>,
}

fn adjacency(skeleton: &BinaryMask3) -> Adjacency {
    let shape = skeleton.shape();
    let voxels = skeleton.indices();
    let mut pos = vec![u32::MAX; shape.len()];
    for (k, &v) in voxels.iter().enumerate() {
        pos[v] = k as u32;
    }
    let offsets = Connectivity::TwentySix.offsets();
    let neighbors = voxels
        .iter()
        .map(|&v| {
            let [x, y, z] = shape.coords(v);
            offsets
                .iter()
                .filter_map(|o| shape.checked_index(x as i64 + o[0] as i64, y as i64 + o[1] as i64, z as i64 + o[2] as i64))
                .filter(|&j| pos[j] != u32::MAX)
                .map(|j| pos[j])
                .collect()
        })
        .collect();
    Adjacency { voxels, neighbors }
}

fn step_length(shape: &GridShape, a: usize, b: usize) -> f64 {
    let (ca, cb, sp) = (shape.coords(a), shape.coords(b), shape.spacing());
    (0..3)
        .map(|k| {
            let d = (ca[k] as f64 - cb[k] as f64) * sp[k];
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn edge_key(a: u32, b: u32) -> (u32, u32) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Splits a one-voxel-wide skeleton into branches.
///
/// Adjacent junction voxels are merged into one node. Every edge of the
/// skeleton graph is assigned to exactly one branch (edges inside a
/// junction cluster go to the first branch touching the cluster), so branch
/// lengths add up to the skeleton length.
pub fn decompose_branches(skeleton: &BinaryMask3) -> SkeletonGraph {
    let shape = *skeleton.shape();
    let adj = adjacency(skeleton);
    let n = adj.voxels.len();
    let deg: Vec<usize> = adj.neighbors.iter().map(Vec::len).collect();
    let is_junction = |k: usize| deg[k] >= 3;
    let len = |a: u32, b: u32| step_length(&shape, adj.voxels[a as usize], adj.voxels[b as usize]);

    // Junction clusters.
    let mut cluster = vec![u32::MAX; n];
    let mut clusters: Vec<Vec<u32>> = Vec::new();
    for k in 0..n {
        if !is_junction(k) || cluster[k] != u32::MAX {
            continue;
        }
        let id = clusters.len() as u32;
        let mut members = vec![k as u32];
        cluster[k] = id;
        let mut head = 0;
        while head < members.len() {
            let c = members[head] as usize;
            head += 1;
            for &nb in &adj.neighbors[c] {
                if is_junction(nb as usize) && cluster[nb as usize] == u32::MAX {
                    cluster[nb as usize] = id;
                    members.push(nb);
                }
            }
        }
        clusters.push(members);
    }

    let mut used: HashSet<(u32, u32)> = HashSet::new();
    let mut on_branch = vec![false; n];
    let mut branches: Vec<(Vec<u32>, f64)> = Vec::new();
    let mut cluster_branch = vec![usize::MAX; clusters.len()];

    fn record(
        path: Vec<u32>,
        length: f64,
        cluster: &[u32],
        cluster_branch: &mut [usize],
        branches: &mut Vec<(Vec<u32>, f64)>,
        on_branch: &mut [bool],
    ) {
        let b = branches.len();
        for &p in &path {
            on_branch[p as usize] = true;
            let c = cluster[p as usize];
            if c != u32::MAX && cluster_branch[c as usize] == usize::MAX {
                cluster_branch[c as usize] = b;
            }
        }
        branches.push((path, length));
    }

    // Paths starting at nodes (junctions and end points).
    for start in 0..n {
        if deg[start] == 2 {
            continue;
        }
        if deg[start] == 0 {
            record(vec![start as u32], 0.0, &cluster, &mut cluster_branch, &mut branches, &mut on_branch);
            continue;
        }
        for &first in &adj.neighbors[start] {
            let s = start as u32;
            if used.contains(&edge_key(s, first)) {
                continue;
            }
            if is_junction(start) && is_junction(first as usize) {
                continue;
            }
            used.insert(edge_key(s, first));
            let mut path = vec![s, first];
            let mut length = len(s, first);
            let (mut prev, mut cur) = (s, first);
            while deg[cur as usize] == 2 {
                let nbs = &adj.neighbors[cur as usize];
                let next = if nbs[0] == prev { nbs[1] } else { nbs[0] };
                if !used.insert(edge_key(cur, next)) {
                    break;
                }
                length += len(cur, next);
                path.push(next);
                prev = cur;
                cur = next;
            }
            record(path, length, &cluster, &mut cluster_branch, &mut branches, &mut on_branch);
        }
    }

    // Closed loops without any node.
    for start in 0..n {
        if deg[start] != 2 || on_branch[start] {
            continue;
        }
        let s = start as u32;
        let mut path = vec![s];
        let mut length = 0.0;
        let (mut prev, mut cur) = (u32::MAX, s);
        loop {
            let nbs = &adj.neighbors[cur as usize];
            let next = if nbs[0] == prev { nbs[1] } else { nbs[0] };
            if !used.insert(edge_key(cur, next)) {
                break;
            }
            length += len(cur, next);
            if next == s {
                break;
            }
            path.push(next);
            prev = cur;
            cur = next;
        }
        record(path, length, &cluster, &mut cluster_branch, &mut branches, &mut on_branch);
    }

    // Edges and voxels inside junction clusters.
    for (c, members) in clusters.iter().enumerate() {
        let mut extra_len = 0.0;
        for &m in members {
            for &nb in &adj.neighbors[m as usize] {
                if cluster[nb as usize] == c as u32 && used.insert(edge_key(m, nb)) {
                    extra_len += len(m, nb);
                }
            }
        }
        let orphans: Vec<u32> = members.iter().copied().filter(|&m| !on_branch[m as usize]).collect();
        match cluster_branch[c] {
            usize::MAX => {
                let mut path = members.clone();
                path.sort_unstable();
                record(path, extra_len, &cluster, &mut cluster_branch, &mut branches, &mut on_branch);
            }
            b => {
                branches[b].1 += extra_len;
                for o in orphans {
                    on_branch[o as usize] = true;
                    branches[b].0.push(o);
                }
            }
        }
    }

    let to_linear = |ks: &[u32]| ks.iter().map(|&k| adj.voxels[k as usize]).collect::<Vec<_>>();
    SkeletonGraph {
        shape,
        junctions: (0..n).filter(|&k| is_junction(k)).map(|k| adj.voxels[k]).collect(),
        endpoints: (0..n).filter(|&k| deg[k] == 1).map(|k| adj.voxels[k]).collect(),
        branches: branches
            .into_iter()
            .map(|(p, l)| Branch { voxels: to_linear(&p), length_mm: l })
            .collect(),
        voxels: adj.voxels,
    }
}

/// Per-voxel length: half the length of each incident skeleton edge.
fn half_edge_lengths(skeleton: &BinaryMask3, spacing: [f64; 3]) -> Result<(Vec<usize>, Vec<f64>)> {
    let shape = skeleton.shape().with_spacing(spacing)?;
    let adj = adjacency(skeleton);
    let w = adj
        .neighbors
        .iter()
        .enumerate()
        .map(|(k, nbs)| {
            nbs.iter()
                .map(|&j| 0.5 * step_length(&shape, adj.voxels[k], adj.voxels[j as usize]))
                .sum()
        })
        .collect();
    Ok((adj.voxels, w))
}

/// Physical length of a skeleton under the half-edge convention.
pub fn skeleton_length(skeleton: &BinaryMask3, spacing: [f64; 3]) -> Result<f64> {
    Ok(half_edge_lengths(skeleton, spacing)?.1.iter().sum())
}

/// Covered fraction of the skeleton length, without component filtering.
///
/// Skeletons made only of isolated voxels have zero length; the covered
/// voxel fraction is returned for them instead.
pub fn tree_length_covered(pred: &BinaryMask3, gt_skeleton: &BinaryMask3, spacing: [f64; 3]) -> Result<f64> {
    check_same_dims(pred.shape(), gt_skeleton.shape(), "prediction vs skeleton")?;
    let (voxels, w) = half_edge_lengths(gt_skeleton, spacing)?;
    if voxels.is_empty() {
        return Err(Error::Precondition("ground-truth skeleton is empty".into()));
    }
    let total: f64 = w.iter().sum();
    let p = pred.data();
    if total == 0.0 {
        let hit = voxels.iter().filter(|&&v| p[v]).count();
        return Ok(hit as f64 / voxels.len() as f64);
    }
    let covered: f64 = voxels.iter().zip(&w).filter(|(&v, _)| p[v]).map(|(_, &l)| l).sum();
    Ok((covered / total).clamp(0.0, 1.0))
}

/// TD: fraction of ground-truth centerline length inside the largest
/// component of `pred`.
pub fn tree_length_detected(pred: &BinaryMask3, gt_skeleton: &BinaryMask3, spacing: [f64; 3]) -> Result<f64> {
    check_same_dims(pred.shape(), gt_skeleton.shape(), "prediction vs skeleton")?;
    tree_length_covered(&largest_component(pred), gt_skeleton, spacing)
}

fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold <= 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("branch detection threshold {threshold} must be in (0, 1]")))
    }
}

/// Number of branches whose covered voxel fraction reaches `threshold`, without component filtering.
pub fn branches_covered(pred: &BinaryMask3, graph: &SkeletonGraph, threshold: f64) -> Result<usize> {
    check_same_dims(pred.shape(), &graph.shape, "prediction vs skeleton graph")?;
    check_threshold(threshold)?;
    if graph.branches.is_empty() {
        return Err(Error::Precondition("skeleton graph has no branches".into()));
    }
    let p = pred.data();
    Ok(graph
        .branches
        .iter()
        .filter(|b| {
            let hit = b.voxels.iter().filter(|&&v| p[v]).count();
            hit as f64 >= threshold * b.voxels.len() as f64
        })
        .count())
}

/// BD: fraction of branches detected by the largest component of `pred`.
pub fn branches_detected(pred: &BinaryMask3, graph: &SkeletonGraph, threshold: f64) -> Result<f64> {
    check_same_dims(pred.shape(), &graph.shape, "prediction vs skeleton graph")?;
    let hit = branches_covered(&largest_component(pred), graph, threshold)?;
    Ok(hit as f64 / graph.branches.len() as f64)
}

pub const DEFAULT_BD_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsOptions {
    pub bd_threshold: f64,
    /// Reduce the prediction to its largest 26-connected component before TD/BD.
    pub largest_component: bool,
}

impl Default for MetricsOptions {
    fn default() -> Self {
        Self { bd_threshold: DEFAULT_BD_THRESHOLD, largest_component: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub dsc: f64,
    pub td: f64,
    pub bd: f64,
    pub n_branches_gt: usize,
    pub n_branches_detected: usize,
    pub skeleton_length_mm: f64,
}

/// Scores `pred` against `gt`. The ground-truth skeleton is computed by
/// thinning `gt` unless one is supplied.
pub fn evaluate(pred: &BinaryMask3, gt: &BinaryMask3, gt_skeleton: Option<&BinaryMask3>, opts: &MetricsOptions) -> Result<MetricsReport> {
    check_same_dims(pred.shape(), gt.shape(), "prediction vs ground truth")?;
    check_threshold(opts.bd_threshold)?;
    let skeleton = match gt_skeleton {
        Some(s) => {
            check_same_dims(s.shape(), gt.shape(), "skeleton vs ground truth")?;
            s.clone()
        }
        None => skeletonize(gt)?,
    };
    let spacing = gt.shape().spacing();
    let reduced = if opts.largest_component { largest_component(pred) } else { pred.clone() };
    let graph = decompose_branches(&skeleton);
    let detected = branches_covered(&reduced, &graph, opts.bd_threshold)?;
    Ok(MetricsReport {
        dsc: dsc(pred, gt)?,
        td: tree_length_covered(&reduced, &skeleton, spacing)?,
        bd: detected as f64 / graph.branches.len() as f64,
        n_branches_gt: graph.branches.len(),
        n_branches_detected: detected,
        skeleton_length_mm: skeleton_length(&skeleton, spacing)?,
    })
}

/// Intensity histograms of false-positive and false-negative voxels over
/// uniform bins on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorHistogram {
    pub edges: Vec<f64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
}

impl ErrorHistogram {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,fp_count,fn_count\n");
        for b in 0..self.fp.len() {
            out.push_str(&format!("{},{},{},{}\n", self.edges[b], self.edges[b + 1], self.fp[b], self.fn_[b]));
        }
        out
    }
}

/// Values outside `[0, 1]` fall into the first or last bin.
pub fn error_intensity_histogram(image_norm: &Volume3, pred: &BinaryMask3, gt: &BinaryMask3, bins: usize) -> Result<ErrorHistogram> {
    check_same_dims(image_norm.shape(), pred.shape(), "image vs prediction")?;
    check_same_dims(pred.shape(), gt.shape(), "prediction vs ground truth")?;
    if bins < 2 {
        return Err(Error::Parameter(format!("bins = {bins} must be at least 2")));
    }
    let edges = (0..=bins).map(|b| b as f64 / bins as f64).collect();
    let mut fp = vec![0u64; bins];
    let mut fn_ = vec![0u64; bins];
    for ((&x, &p), &g) in image_norm.data().iter().zip(pred.data()).zip(gt.data()) {
        if p == g {
            continue;
        }
        let b = ((x as f64 * bins as f64).floor().max(0.0) as usize).min(bins - 1);
        if p {
            fp[b] += 1;
        } else {
            fn_[b] += 1;
        }
    }
    Ok(ErrorHistogram { edges, fp, fn_ })
}
