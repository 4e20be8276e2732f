use std::collections::VecDeque;

use idg_core::metrics::{branches_detected, decompose_branches, evaluate, MetricsOptions};
use idg_core::morphology::{build_dilated_region, connected_components, skeletonize, Connectivity};
use idg_core::phantom::{generate, PhantomSpec};
use idg_core::{BinaryMask3, GridShape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn neighbours(sh: &GridShape, i: usize) -> Vec<usize> {
    let c = sh.coords(i);
    Connectivity::TwentySix
        .offsets()
        .into_iter()
        .filter_map(|o| sh.checked_index(c[0] as i64 + o[0] as i64, c[1] as i64 + o[1] as i64, c[2] as i64 + o[2] as i64))
        .collect()
}

#[test]
fn straight_tube_skeleton_is_thin_path() {
    let sh = GridShape::isotropic([11, 11, 40]).unwrap();
    let tube = BinaryMask3::from_fn(sh, |[x, y, z]| {
        let (dx, dy) = (x as f64 - 5.0, y as f64 - 5.0);
        dx * dx + dy * dy <= 4.0 && (5..35).contains(&z)
    });
    let skel = skeletonize(&tube).unwrap();
    let n = skel.count();
    assert!((30..=34).contains(&n), "skeleton has {n} voxels");
    assert_eq!(connected_components(&skel, Connectivity::TwentySix).count(), 1);
    // One voxel per slice: a 1-voxel-wide curve along z.
    let mut per_slice = vec![0; 40];
    for i in skel.indices() {
        per_slice[sh.coords(i)[2]] += 1;
    }
    assert!(per_slice.iter().all(|&c| c <= 1));
    let g = decompose_branches(&skel);
    assert_eq!(g.branches.len(), 1);
    assert_eq!(g.endpoints.len(), 2);
}

#[test]
fn solid_cube_skeleton_is_one_component() {
    let sh = GridShape::isotropic([13, 13, 13]).unwrap();
    let cube = BinaryMask3::from_fn(sh, |c| c.iter().all(|&v| (2..11).contains(&v)));
    let skel = skeletonize(&cube).unwrap();
    assert!(skel.any());
    assert_eq!(connected_components(&skel, Connectivity::TwentySix).count(), 1);
}

#[test]
fn labelling_agrees_with_flood_fill() {
    let sh = GridShape::isotropic([12, 12, 12]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let m = BinaryMask3::new(sh, (0..sh.len()).map(|_| rng.gen_bool(0.25)).collect()).unwrap();
        let comps = connected_components(&m, Connectivity::TwentySix);
        let mut seen = vec![false; sh.len()];
        let mut sizes = Vec::new();
        for start in m.indices() {
            if seen[start] {
                continue;
            }
            let label = comps.labels[start];
            let mut queue = VecDeque::from([start]);
            seen[start] = true;
            let mut size = 0;
            while let Some(v) = queue.pop_front() {
                size += 1;
                assert_eq!(comps.labels[v], label);
                for j in neighbours(&sh, v) {
                    if m.data()[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
            assert_eq!(comps.sizes[label as usize - 1], size);
            sizes.push(size);
        }
        assert_eq!(sizes.len(), comps.count());
        assert!(comps.sizes.windows(2).all(|w| w[0] >= w[1]));
    }
}

#[test]
fn phantom_outer_shell_within_chebyshev_nine() {
    let spec = PhantomSpec { dims: [40, 40, 56], depth: 1, n_confusable_pockets: 0, ..Default::default() };
    let ph = generate(&spec).unwrap();
    let region = build_dilated_region(&ph.mask, 19).unwrap();
    let sh = *ph.mask.shape();
    let airway: Vec<[usize; 3]> = ph.mask.indices().into_iter().map(|i| sh.coords(i)).collect();
    for i in region.outer.indices() {
        let c = sh.coords(i);
        let cheb = airway
            .iter()
            .map(|a| (0..3).map(|k| (a[k] as i64 - c[k] as i64).unsigned_abs()).max().unwrap())
            .min()
            .unwrap();
        assert!((1..=9).contains(&cheb));
    }
}

#[test]
fn removing_a_leaf_branch_lowers_bd_by_one() {
    let spec = PhantomSpec { dims: [64, 64, 72], root_length: 22.0, n_confusable_pockets: 0, ..Default::default() };
    let ph = generate(&spec).unwrap();
    let skel = skeletonize(&ph.mask).unwrap();
    let g = decompose_branches(&skel);
    let n = g.branches.len();
    // Carve out the deepest leaf capsule, sparing the stretch next to its junction.
    let leaf = ph.segments.last().unwrap();
    let d = [0, 1, 2].map(|k| leaf.end[k] - leaf.start[k]);
    let len2: f64 = d.iter().map(|v| v * v).sum();
    let pred = BinaryMask3::from_fn(*ph.mask.shape(), |[x, y, z]| {
        let p = [x as f64, y as f64, z as f64];
        let t = (0..3).map(|k| (p[k] - leaf.start[k]) * d[k]).sum::<f64>() / len2;
        let in_leaf = leaf.axis_distance(p) <= leaf.radius + 1.0 && t >= 0.2;
        ph.mask.get(x, y, z) && !in_leaf
    });
    let bd = branches_detected(&pred, &g, 0.8).unwrap();
    assert!((bd - (n as f64 - 1.0) / n as f64).abs() < 1e-12, "bd {bd} with {n} branches");
    let full = evaluate(&ph.mask, &ph.mask, Some(&skel), &MetricsOptions::default()).unwrap();
    assert_eq!((full.dsc, full.td, full.bd), (1.0, 1.0, 1.0));
}
