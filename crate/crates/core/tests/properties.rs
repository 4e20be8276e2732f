use idg_core::distance::{build_distance_weight_map, edt_squared};
use idg_core::grid::{crop, normalize_window, TilingPlan};
use idg_core::intensity::{build_intensity_weight_map, difficulty_f, fit_airway_model, IdgConfig};
use idg_core::loss::{bce_map, idg_loss, DEFAULT_EPS};
use idg_core::metrics::{decompose_branches, dsc, skeleton_length, tree_length_detected};
use idg_core::morphology::{build_dilated_region, connected_components, dilate_cube, largest_component, skeletonize, Connectivity};
use idg_core::volio::{read_volume, write_volume, DataType, WriteOptions};
use idg_core::{BinaryMask3, GridShape, Volume3};
use proptest::prelude::*;

fn mask_strategy(max_side: usize, density: f64) -> impl Strategy<Value = BinaryMask3> {
    (2..=max_side, 2..=max_side, 2..=max_side).prop_flat_map(move |(nx, ny, nz)| {
        prop::collection::vec(prop::bool::weighted(density), nx * ny * nz)
            .prop_map(move |data| BinaryMask3::new(GridShape::isotropic([nx, ny, nz]).unwrap(), data).unwrap())
    })
}

fn volume_strategy(max_side: usize) -> impl Strategy<Value = Volume3> {
    (1..=max_side, 1..=max_side, 1..=max_side).prop_flat_map(|(nx, ny, nz)| {
        prop::collection::vec(-2000.0f32..2000.0, nx * ny * nz)
            .prop_map(move |data| Volume3::new(GridShape::isotropic([nx, ny, nz]).unwrap(), data).unwrap())
    })
}

fn spacing_strategy() -> impl Strategy<Value = [f64; 3]> {
    [0.3f64..3.0, 0.3f64..3.0, 0.3f64..3.0]
}

fn brute_d2(seeds: &BinaryMask3, spacing: [f64; 3]) -> Vec<f64> {
    let sh = seeds.shape();
    let pts: Vec<[usize; 3]> = seeds.indices().into_iter().map(|i| sh.coords(i)).collect();
    (0..sh.len())
        .map(|i| {
            let c = sh.coords(i);
            pts.iter()
                .map(|p| (0..3).map(|k| ((c[k] as f64 - p[k] as f64) * spacing[k]).powi(2)).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tiling_stitch_reconstructs(v in volume_strategy(14), w in [1usize..14, 1usize..14, 1usize..14], o in [0usize..13, 0usize..13, 0usize..13]) {
        let dims = v.shape().dims();
        let window = [0, 1, 2].map(|k| w[k].min(dims[k]));
        let overlap = [0, 1, 2].map(|k| o[k] % window[k]);
        let plan = TilingPlan::new(v.shape(), window, overlap).unwrap();
        let mut out = Volume3::filled(*v.shape(), 1.0e9);
        for origin in plan.origins() {
            out.paste(&crop(&v, origin, window).unwrap(), origin).unwrap();
        }
        prop_assert_eq!(out, v);
    }

    #[test]
    fn crop_then_embed_leaves_rest_untouched(v in volume_strategy(10), a in [0usize..10, 0usize..10, 0usize..10]) {
        let dims = v.shape().dims();
        let origin = [0, 1, 2].map(|k| a[k] % dims[k]);
        let size = [0, 1, 2].map(|k| dims[k] - origin[k]);
        let tile = crop(&v, origin, size).unwrap();
        let mut w = v.clone();
        w.paste(&tile, origin).unwrap();
        prop_assert_eq!(w, v);
    }

    #[test]
    fn normalize_monotone_and_idempotent(a in -3000.0f32..3000.0, b in -3000.0f32..3000.0) {
        let sh = GridShape::isotropic([2, 1, 1]).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let n = normalize_window(&Volume3::new(sh, vec![lo, hi]).unwrap(), -1000.0, 600.0).unwrap();
        prop_assert!(n.data()[0] <= n.data()[1]);
        let again = normalize_window(&n, 0.0, 1.0).unwrap();
        prop_assert_eq!(again, n);
    }

    #[test]
    fn nifti_float_roundtrip(v in volume_strategy(6), gz in any::<bool>(), sp in spacing_strategy()) {
        let v = v.with_spacing(sp).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(if gz { "v.nii.gz" } else { "v.nii" });
        write_volume(&path, &v, &WriteOptions::default()).unwrap();
        let (back, _) = read_volume(&path).unwrap();
        prop_assert_eq!(back.data(), v.data());
        for k in 0..3 {
            prop_assert!((back.shape().spacing()[k] - sp[k]).abs() <= 1e-5);
        }
    }

    #[test]
    fn nifti_integer_roundtrip(vals in prop::collection::vec(0u8..=255, 8), gz in any::<bool>()) {
        let sh = GridShape::isotropic([2, 2, 2]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for dt in [DataType::Uint8, DataType::Int16] {
            let v = Volume3::new(sh, vals.iter().map(|&x| x as f32).collect()).unwrap();
            let path = dir.path().join(if gz { "i.nii.gz" } else { "i.nii" });
            write_volume(&path, &v, &WriteOptions { datatype: Some(dt), ..Default::default() }).unwrap();
            prop_assert_eq!(read_volume(&path).unwrap().0, v);
        }
    }

    #[test]
    fn dilation_is_monotone(m in mask_strategy(9, 0.1), extra in mask_strategy(9, 0.1), s in prop::sample::select(vec![1usize, 3, 5])) {
        let extra = BinaryMask3::new(*m.shape(), (0..m.shape().len()).map(|i| extra.data().get(i).copied().unwrap_or(false)).collect()).unwrap();
        let bigger = m.or(&extra).unwrap();
        let a = dilate_cube(&m, s).unwrap();
        let b = dilate_cube(&bigger, s).unwrap();
        prop_assert!(a.is_subset_of(&b).unwrap());
    }

    #[test]
    fn dilation_composes(data in prop::collection::vec(prop::bool::weighted(0.03), 14 * 14 * 14), s1 in prop::sample::select(vec![1usize, 3, 5]), s2 in prop::sample::select(vec![1usize, 3, 5])) {
        let m = BinaryMask3::new(GridShape::isotropic([14, 14, 14]).unwrap(), data).unwrap();
        let twice = dilate_cube(&dilate_cube(&m, s1).unwrap(), s2).unwrap();
        let big = dilate_cube(&m, s1.max(s2)).unwrap();
        prop_assert!(big.is_subset_of(&twice).unwrap());
        let joint = dilate_cube(&m, s1 + s2 - 1).unwrap();
        let margin = (s1 + s2) / 2;
        let sh = *m.shape();
        for i in 0..sh.len() {
            let c = sh.coords(i);
            if (0..3).all(|k| c[k] >= margin && c[k] + margin < sh.dims()[k]) {
                prop_assert_eq!(twice.data()[i], joint.data()[i]);
            }
        }
    }

    #[test]
    fn skeleton_idempotent_and_topology_preserving(m in mask_strategy(9, 0.45)) {
        prop_assume!(m.any());
        let s = skeletonize(&m).unwrap();
        prop_assert!(s.is_subset_of(&m).unwrap());
        prop_assert_eq!(
            connected_components(&s, Connectivity::TwentySix).count(),
            connected_components(&m, Connectivity::TwentySix).count()
        );
        prop_assert_eq!(skeletonize(&s).unwrap(), s);
    }

    #[test]
    fn largest_component_is_connected_subset(m in mask_strategy(10, 0.2)) {
        let l = largest_component(&m);
        prop_assert!(l.is_subset_of(&m).unwrap());
        prop_assert!(connected_components(&l, Connectivity::TwentySix).count() <= 1);
    }

    #[test]
    fn edt_matches_brute_force(m in mask_strategy(8, 0.05), sp in spacing_strategy()) {
        prop_assume!(m.any());
        let f = edt_squared(&m, sp).unwrap();
        let want = brute_d2(&m, sp);
        for (got, want) in f.d2.iter().zip(&want) {
            prop_assert!((got - want).abs() <= 1e-9 * want.max(1.0));
        }
    }

    #[test]
    fn edt_triangle_consistency(m in mask_strategy(8, 0.05), sp in spacing_strategy()) {
        prop_assume!(m.any());
        let f = edt_squared(&m, sp).unwrap();
        let sh = f.shape;
        for i in 0..sh.len() {
            let c = sh.coords(i);
            for o in Connectivity::TwentySix.offsets() {
                if let Some(j) = sh.checked_index(c[0] as i64 + o[0] as i64, c[1] as i64 + o[1] as i64, c[2] as i64 + o[2] as i64) {
                    let step = (0..3).map(|k| (o[k] as f64 * sp[k]).powi(2)).sum::<f64>().sqrt();
                    prop_assert!((f.distance(i) - f.distance(j)).abs() <= step + 1e-6);
                }
            }
        }
    }

    #[test]
    fn spacing_scale_scales_distance_but_not_weight(data in prop::collection::vec(prop::bool::weighted(0.05), 9 * 9 * 9), sp in spacing_strategy(), c in 0.2f64..5.0) {
        let m = BinaryMask3::new(GridShape::isotropic([9, 9, 9]).unwrap(), data).unwrap();
        prop_assume!(m.any());
        let scaled = [sp[0] * c, sp[1] * c, sp[2] * c];
        let a = edt_squared(&m, sp).unwrap();
        let b = edt_squared(&m, scaled).unwrap();
        for i in 0..a.d2.len() {
            prop_assert!((b.distance(i) - c * a.distance(i)).abs() <= 1e-9 * (1.0 + b.distance(i)));
        }
        let region = build_dilated_region(&m, 3).unwrap();
        let wa = build_distance_weight_map(&region, &m, sp).unwrap();
        let wb = build_distance_weight_map(&region, &m, scaled).unwrap();
        for (x, y) in wa.w.iter().zip(&wb.w) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn distance_weight_monotone_in_distance(data in prop::collection::vec(prop::bool::weighted(0.04), 10 * 10 * 10), sp in spacing_strategy()) {
        let m = BinaryMask3::new(GridShape::isotropic([10, 10, 10]).unwrap(), data).unwrap();
        prop_assume!(m.any());
        let region = build_dilated_region(&m, 3).unwrap();
        let w = build_distance_weight_map(&region, &m, sp).unwrap();
        let d = edt_squared(&m, sp).unwrap();
        let mut inside: Vec<(f64, f64)> = region.dilated.indices().into_iter().map(|i| (d.d2[i], w.w[i])).collect();
        inside.sort_by(|a, b| a.0.total_cmp(&b.0));
        for pair in inside.windows(2) {
            prop_assert!(pair[0].1 >= pair[1].1);
        }
        for (i, &r) in region.dilated.data().iter().enumerate() {
            if !r {
                prop_assert_eq!(w.w[i], 1.0);
            }
        }
    }

    #[test]
    fn intensity_weight_monotonicity(img in prop::collection::vec(0.0f32..=1.0, 8 * 8 * 8), data in prop::collection::vec(prop::bool::weighted(0.1), 8 * 8 * 8), w_dila in 0.0f64..3.0) {
        let sh = GridShape::isotropic([8, 8, 8]).unwrap();
        let m = BinaryMask3::new(sh, data).unwrap();
        prop_assume!(m.any() && m.count() < sh.len());
        let image = Volume3::new(sh, img).unwrap();
        let cfg = IdgConfig { w_dila, ..Default::default() };
        let region = build_dilated_region(&m, 3).unwrap();
        let model = fit_airway_model(&image, &m, &cfg).unwrap();
        let w = build_intensity_weight_map(&image, &region, &model, &cfg).unwrap();
        let x = image.data();
        for (mask, increasing) in [(&region.inner, true), (&region.outer, false)] {
            let mut pts: Vec<(f32, f64)> = mask.indices().into_iter().map(|i| (x[i], w.w[i])).collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            for p in pts.windows(2) {
                if increasing {
                    prop_assert!(p[0].1 <= p[1].1);
                } else {
                    prop_assert!(p[0].1 >= p[1].1);
                }
            }
        }
        prop_assert!(w.w.iter().all(|&v| (1.0..=1.0 + w_dila).contains(&v)));
        let flat = build_intensity_weight_map(&image, &region, &model, &IdgConfig { w_dila: 0.0, ..Default::default() }).unwrap();
        prop_assert!(flat.w.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn ramp_affine_equivariance(mu in -1.0f64..1.0, sigma in 0.01f64..1.0, x in -3.0f64..3.0, a in 0.1f64..10.0, b in -5.0f64..5.0) {
        let f = difficulty_f(mu, sigma, 1.5, x).unwrap();
        let g = difficulty_f(a * mu + b, a * sigma, 1.5, a * x + b).unwrap();
        prop_assert!((f - g).abs() <= 1e-9);
    }

    #[test]
    fn weighted_loss_bounds_and_linearity(p in prop::collection::vec(0.0f32..=1.0, 27), y in prop::collection::vec(any::<bool>(), 27), w in prop::collection::vec(1.0f32..4.0, 27), k in 0.5f64..4.0) {
        let sh = GridShape::isotropic([3, 3, 3]).unwrap();
        let bce = bce_map(&Volume3::new(sh, p).unwrap(), &BinaryMask3::new(sh, y).unwrap(), DEFAULT_EPS).unwrap();
        let fused = Volume3::new(sh, w.clone()).unwrap();
        let base = idg_loss(&bce, &fused).unwrap();
        prop_assert!(base >= bce.mean() - 1e-12);
        let scaled = Volume3::new(sh, w.iter().map(|&v| (v as f64 * k) as f32).collect()).unwrap();
        let want: f64 = bce.values.iter().zip(scaled.data()).map(|(b, &v)| b * v as f64).sum::<f64>() / 27.0;
        prop_assert!((idg_loss(&bce, &scaled).unwrap() - want).abs() <= 1e-9 * want.max(1.0));
    }

    #[test]
    fn dice_is_symmetric(a in mask_strategy(6, 0.4), b in mask_strategy(6, 0.4)) {
        let b = BinaryMask3::new(*a.shape(), (0..a.shape().len()).map(|i| b.data().get(i).copied().unwrap_or(false)).collect()).unwrap();
        prop_assert_eq!(dsc(&a, &b).unwrap(), dsc(&b, &a).unwrap());
    }

    #[test]
    fn branch_lengths_sum_to_skeleton_length(m in mask_strategy(10, 0.5), sp in spacing_strategy()) {
        prop_assume!(m.any());
        let skel = skeletonize(&m).unwrap().with_spacing(sp).unwrap();
        let g = decompose_branches(&skel);
        let total = skeleton_length(&skel, sp).unwrap();
        prop_assert!((g.total_length_mm() - total).abs() <= 1e-9 * total.max(1.0));
        let mut seen = vec![false; skel.shape().len()];
        for b in &g.branches {
            for &v in &b.voxels {
                seen[v] = true;
            }
        }
        prop_assert_eq!(seen.iter().filter(|&&s| s).count(), skel.count());
    }

    #[test]
    fn td_monotone_under_growth(cut in 0usize..30, extra in 0usize..30) {
        let sh = GridShape::isotropic([5, 5, 30]).unwrap();
        let skel = BinaryMask3::from_fn(sh, |[x, y, _]| x == 2 && y == 2);
        let small = BinaryMask3::from_fn(sh, |[_, _, z]| z <= cut);
        let grown = BinaryMask3::from_fn(sh, |[_, _, z]| z <= cut + extra);
        let a = tree_length_detected(&small, &skel, [1.0; 3]).unwrap();
        let b = tree_length_detected(&grown, &skel, [1.0; 3]).unwrap();
        prop_assert!(a <= b);
    }
}
