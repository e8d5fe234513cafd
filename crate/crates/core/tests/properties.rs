use agri_autograd::{array, Array, Var};
use agri_contrast::cli::RunConfig;
use agri_contrast::contrastcore::{info_nce_value, pixpro_loss, NegativeQueue, PixelPairSet, Subspace};
use agri_contrast::encoders::{momentum_update, pixel_similarity, ppm_smooth_with, EncoderSpec, Network};
use agri_contrast::evalsuite::{cross_entropy, focal_loss, subsample_indices, ConfusionMatrix};
use agri_contrast::fieldstore::{
    build_revisit_index, reconstruct_region, synthesize_field_series, tile_scene, FlightTime, SynthConfig,
};
use agri_contrast::viewfactory::{
    augment, render_view, sample_crop, sample_photometric, warp_to_source, warp_to_view, AugmentConfig,
    GeometricTransform, SourceTile,
};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scene(seed: u64, h: usize, w: usize, flights: usize) -> Vec<agri_contrast::fieldstore::FieldScene> {
    let cfg = SynthConfig {
        height: h,
        width: w,
        flights,
        ..SynthConfig::default()
    };
    synthesize_field_series(seed, &cfg).unwrap().group.scenes
}

fn rand_array(shape: &[usize], rng: &mut ChaCha8Rng) -> Array {
    let n = shape.iter().product();
    array(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn geometry() -> impl Strategy<Value = GeometricTransform> {
    (8usize..300, 4usize..128, any::<bool>(), any::<u64>()).prop_map(|(size, out, flip, seed)| {
        let cfg = AugmentConfig {
            crop_size: out,
            ..AugmentConfig::default()
        };
        sample_crop(size, size, &cfg, flip, &mut ChaCha8Rng::seed_from_u64(seed))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tiles_partition_the_covered_region(seed in 0u64..1000, h in 8usize..70, w in 8usize..70, size in 1usize..24) {
        let s = &scene(seed, h, w, 1)[0];
        prop_assume!(size <= h && size <= w);
        let (tiles, manifest) = tile_scene(s, size).unwrap();
        let mut count = vec![0u8; h * w];
        for t in &tiles {
            prop_assert!(t.row_origin + size <= h && t.col_origin + size <= w);
            for r in t.row_origin..t.row_origin + size {
                for c in t.col_origin..t.col_origin + size {
                    count[r * w + c] += 1;
                }
            }
        }
        let (rows, cols) = (h / size * size, w / size * size);
        for r in 0..h {
            for c in 0..w {
                let want = u8::from(r < rows && c < cols);
                prop_assert_eq!(count[r * w + c], want);
            }
        }
        let frag = reconstruct_region(&manifest, &tiles).unwrap();
        prop_assert!(frag.matches_scene(s));
    }

    #[test]
    fn synthesis_is_deterministic(seed in any::<u64>()) {
        prop_assert_eq!(scene(seed, 24, 24, 2), scene(seed, 24, 24, 2));
    }

    #[test]
    fn revisit_grouping_partitions_scenes(seeds in prop::collection::vec(0u64..6, 1..8)) {
        let mut all = Vec::new();
        for (i, &s) in seeds.iter().enumerate() {
            let mut scenes = scene(s, 16, 16, 1 + i % 3);
            for (k, sc) in scenes.iter_mut().enumerate() {
                sc.field_id = format!("f{s}");
                sc.flight_time = FlightTime::from_days(&sc.flight_time, (i * 10 + k) as i64);
            }
            all.extend(scenes);
        }
        let n = all.len();
        let mut keys: Vec<_> = all.iter().map(|s| (s.field_id.clone(), s.flight_time)).collect();
        let index = build_revisit_index(all);
        prop_assert_eq!(index.num_scenes(), n);
        let mut seen: Vec<_> = index
            .groups
            .iter()
            .flat_map(|g| g.scenes.iter().map(|s| (s.field_id.clone(), s.flight_time)))
            .chain(index.rejected.iter().flat_map(|g| g.scenes.iter().map(|s| (s.field_id.clone(), s.flight_time))))
            .collect();
        keys.sort();
        seen.sort();
        prop_assert_eq!(keys, seen);
        for g in &index.groups {
            prop_assert!(g.scenes.windows(2).all(|p| p[0].flight_time <= p[1].flight_time));
            prop_assert!(g.scenes.iter().all(|s| s.field_id == g.field_id));
        }
    }

    #[test]
    fn warp_round_trip_and_flip_involution(g in geometry(), r in 0.0f64..1.0, c in 0.0f64..1.0) {
        let p = (r * g.out_h as f64, c * g.out_w as f64);
        let back = warp_to_view(&g, &warp_to_source(&g, &[p]))[0];
        prop_assert!((back.0 - p.0).abs() < 1e-9 && (back.1 - p.1).abs() < 1e-9);
        let twice = g.flipped().flipped();
        prop_assert_eq!(twice, g);
        prop_assert_eq!(twice.to_source(p.0, p.1), g.to_source(p.0, p.1));
    }

    #[test]
    fn photometry_leaves_geometry_alone(seed in any::<u64>(), out in 4usize..40) {
        let tiles = tile_scene(&scene(seed % 50, 48, 48, 1)[0], 48).unwrap().0;
        let tile = SourceTile::from_record(&tiles[0]);
        let cfg = AugmentConfig { crop_size: out, ..AugmentConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = sample_crop(48, 48, &cfg, rng.random_bool(0.5), &mut rng);
        let recipe = sample_photometric(&cfg, &mut rng);
        let v = render_view(&tile, g, recipe);
        prop_assert_eq!(v.geometry, g);
        prop_assert_eq!(v.pixels.shape(), &[4, g.out_h, g.out_w]);
        prop_assert!(v.pixels.iter().all(|&x| (0.0..=1.0).contains(&x)));
        let a = augment(&tile, &cfg, &mut rng);
        prop_assert_eq!(a.pixels.shape(), &[4, a.geometry.out_h, a.geometry.out_w]);
        prop_assert!(a.pixels.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn similarity_is_symmetric_and_bounded(seed in any::<u64>(), gamma in 0.0f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = pixel_similarity(&Var::constant(rand_array(&[2, 6, 5], &mut rng)), gamma);
        let v = s.value();
        for n in 0..2 {
            for i in 0..6 {
                for j in 0..6 {
                    prop_assert!((-1e-12..=1.0 + 1e-12).contains(&v[[n, i, j]]));
                    prop_assert!((v[[n, i, j]] - v[[n, j, i]]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn uniform_propagation_at_gamma_zero(seed in any::<u64>()) {
        // non-negative inputs give non-negative cosines, so S is all ones
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_array(&[1, 3, 2, 3], &mut rng).mapv(|v| v.abs() + 0.01);
        let q = ppm_smooth_with(&Var::constant(x.clone()), 0.0, |t| t.clone());
        for c in 0..3 {
            let total: f64 = (0..2).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| x[[0, c, i, j]]).sum();
            for i in 0..2 {
                for j in 0..3 {
                    prop_assert!((q.value()[[0, c, i, j]] - total).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn info_nce_positive_with_negatives(seed in any::<u64>(), k in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unit = |rng: &mut ChaCha8Rng| {
            let v: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect::<Vec<f64>>()
        };
        let q = unit(&mut rng);
        let kp = unit(&mut rng);
        let negs = Array2::from_shape_vec((k, 4), (0..k).flat_map(|_| unit(&mut rng)).collect()).unwrap();
        prop_assert!(info_nce_value(&q, &kp, &negs, 0.2).unwrap() > 0.0);
    }

    #[test]
    fn pixpro_bounded_scale_invariant_symmetric(seed in any::<u64>(), scale in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let maps: Vec<Var> = (0..4).map(|_| Var::constant(rand_array(&[2, 3, 2, 2], &mut rng))).collect();
        let pairs: Vec<PixelPairSet> = (0..2)
            .map(|_| PixelPairSet { pairs: vec![(rng.random_range(0..4), rng.random_range(0..4)), (3, 0)], tau_dist: 0.7 })
            .collect();
        let base = pixpro_loss(&maps[0], &maps[1], &maps[2], &maps[3], &pairs).unwrap().0.item();
        prop_assert!((-2.0..=2.0).contains(&base));
        let scaled = pixpro_loss(&maps[0].scale(scale), &maps[1], &maps[2], &maps[3].scale(scale), &pairs).unwrap().0.item();
        prop_assert!((scaled - base).abs() < 1e-9);
        let swapped_pairs: Vec<PixelPairSet> = pairs
            .iter()
            .map(|p| PixelPairSet { pairs: p.pairs.iter().map(|&(a, b)| (b, a)).collect(), tau_dist: p.tau_dist })
            .collect();
        let swapped = pixpro_loss(&maps[2], &maps[3], &maps[0], &maps[1], &swapped_pairs).unwrap().0.item();
        prop_assert!((swapped - base).abs() < 1e-9);
    }

    #[test]
    fn queue_keeps_capacity_order_and_norms(cap in 1usize..40, batches in prop::collection::vec(0usize..15, 1..60), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut q = NegativeQueue::new(cap, 3, Subspace::Temporal);
        let mut pushed = 0u64;
        for n in batches {
            let mut keys = Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0f64));
            for mut r in keys.rows_mut() {
                let norm = r.dot(&r).sqrt();
                r /= norm;
            }
            q.enqueue(&keys, Subspace::Temporal).unwrap();
            pushed += n as u64;
            prop_assert!(q.check_invariants().is_ok());
            prop_assert_eq!(q.len() as u64, pushed.min(cap as u64));
            let seqs: Vec<u64> = q.entries().map(|e| e.seq).collect();
            let first = pushed - seqs.len() as u64;
            prop_assert_eq!(seqs, (first..pushed).collect::<Vec<_>>());
            prop_assert!(q.entries().all(|e| e.origin == Subspace::Temporal));
        }
        prop_assert!(q.enqueue(&Array2::from_elem((1, 3), 1.0 / 3f64.sqrt()), Subspace::Joint).is_err());
    }

    #[test]
    fn momentum_update_leaves_online_untouched(seed in any::<u64>(), m in 0.0f64..=1.0) {
        let spec = EncoderSpec { feature_dim: 8, map_stride: 4, base_width: 4, ..EncoderSpec::default() };
        let net = Network::new(&spec, 1, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let online = net.init(&mut rng);
        let before = online.clone();
        let mut offline = net.init(&mut rng);
        momentum_update(&online, &mut offline, m).unwrap();
        prop_assert_eq!(online, before);
    }

    #[test]
    fn subsample_is_nested_and_idempotent(n in 1usize..200, f1 in 0.01f64..1.0, f2 in 0.01f64..1.0, seed in any::<u64>()) {
        let strata: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
        let a = subsample_indices(&strata, lo, seed).unwrap();
        let b = subsample_indices(&strata, hi, seed).unwrap();
        prop_assert_eq!(&a, &subsample_indices(&strata, lo, seed).unwrap());
        prop_assert!(a.iter().all(|i| b.contains(i)));
    }

    #[test]
    fn focal_at_gamma_zero_is_cross_entropy(seed in any::<u64>(), rows in 1usize..30, classes in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Var::constant(rand_array(&[rows, classes], &mut rng).mapv(|v| 5.0 * v));
        let y: Vec<usize> = (0..rows).map(|_| rng.random_range(0..classes)).collect();
        let f = focal_loss(&x, &y, 0.0, None).unwrap().item();
        let ce = cross_entropy(&x, &y, None).unwrap().item();
        prop_assert!((f - ce).abs() < 1e-7);
    }

    #[test]
    fn confusion_rows_count_truth(truth in prop::collection::vec(0usize..4, 1..100), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pred: Vec<usize> = truth.iter().map(|_| rng.random_range(0..4)).collect();
        let mut cm = ConfusionMatrix::new(4);
        cm.accumulate(&truth, &pred, None).unwrap();
        let rows = cm.row_sums();
        for c in 0..4 {
            prop_assert_eq!(rows[c], truth.iter().filter(|&&t| t == c).count() as u64);
        }
    }
}

#[test]
fn config_rejects_unknown_keys_and_round_trips() {
    for preset in ["desk", "paper-scale"] {
        let cfg = RunConfig::preset(preset).unwrap();
        let text = cfg.to_toml_string();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
    }
    assert!(RunConfig::from_toml_str("[pretrain]\nepochz = 3\n").is_err());
    assert!(RunConfig::from_toml_str("[probe]\nlr = 0.5\nfoo = 1\n").is_err());
}
