use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bspc_core::codec::{
    decode_tree, encode_tree, quantize_fit, BitReader, BitWriter, CoeffQuantizer, CoefficientTables,
};
use bspc_core::geometry::{region_candidates, split_region, AngleGrid, Region};
use bspc_core::harness::{psnr, tile_image};
use bspc_core::tree::{
    build_tree, prune_tree, render, BspTree, BuildParams, FixedRateModel, NodeId, NodeKind,
    RateModel,
};
use bspc_core::GrayImage;

fn image(seed: u64, w: u32, h: u32) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b) = (rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0));
    GrayImage::from_fn(w, h, |x, y| {
        (128.0 + a * f64::from(x) + b * f64::from(y) + rng.gen_range(-40.0..40.0)).clamp(0.0, 255.0)
            as u8
    })
}

/// Every `(distortion, bits)` pair reachable by pruning the subtree at `id`.
fn all_prunings(tree: &BspTree, id: NodeId, model: &dyn RateModel) -> Vec<(f64, f64)> {
    let leaf = (model.leaf_distortion(tree, id), model.leaf_bits(tree, id));
    let mut out = vec![leaf];
    if let NodeKind::Internal {
        children: [c0, c1], ..
    } = tree.nodes[id].kind
    {
        let split = model.split_bits(tree, id);
        let left = all_prunings(tree, c0, model);
        let right = all_prunings(tree, c1, model);
        for l in &left {
            for r in &right {
                out.push((l.0 + r.0, l.1 + r.1 + split));
            }
        }
    }
    out
}

fn tree_cost(tree: &BspTree, model: &dyn RateModel) -> (f64, f64) {
    tree.nodes
        .iter()
        .enumerate()
        .fold((0.0, 0.0), |(d, r), (id, n)| match n.kind {
            NodeKind::Leaf => (
                d + model.leaf_distortion(tree, id),
                r + model.leaf_bits(tree, id),
            ),
            NodeKind::Internal { .. } => (d, r + model.split_bits(tree, id)),
        })
}

fn small_tree(seed: u64) -> BspTree {
    let img = image(seed, 12, 12);
    let grid = AngleGrid::for_dims(12, 12);
    // Raise the child floor until the tree is small enough to enumerate.
    (8..=72)
        .map(|limit| {
            let params = BuildParams {
                partition_limit: limit,
                min_domain_pixels: 1,
                error_threshold: 0.0,
            };
            build_tree(&img, &params, &grid).unwrap().0
        })
        .find(|t| t.len() <= 15)
        .expect("a single leaf fits")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pruning_matches_exhaustive_search(seed in any::<u64>(), lambda in 0.0f64..2000.0, payload in 4.0f64..60.0) {
        let tree = small_tree(seed);
        let model = FixedRateModel { leaf_payload_bits: payload };
        let best = all_prunings(&tree, 0, &model)
            .into_iter()
            .map(|(d, r)| d + lambda * r)
            .fold(f64::INFINITY, f64::min);
        let pruned = prune_tree(&tree, lambda, &model);
        pruned.validate(12, 12, &BuildParams { partition_limit: 1, min_domain_pixels: 1, error_threshold: 0.0 }).unwrap();
        let (d, r) = tree_cost(&pruned, &model);
        prop_assert!((d + lambda * r - best).abs() <= 1e-9 * best.max(1.0), "pruned {} vs best {}", d + lambda * r, best);
    }

    #[test]
    fn tree_coding_round_trips(seed in any::<u64>(), w in 8u32..40, h in 8u32..40, limit in 4usize..48, lambda in 0.0f64..500.0) {
        let img = image(seed, w, h);
        let grid = AngleGrid::for_dims(w, h);
        let params = BuildParams { partition_limit: limit, min_domain_pixels: 16, error_threshold: 0.0 };
        let (tree, _) = build_tree(&img, &params, &grid).unwrap();
        let tree = prune_tree(&tree, lambda, &FixedRateModel { leaf_payload_bits: 24.0 });
        let q = CoeffQuantizer::default();
        let tables = CoefficientTables::for_forest(std::slice::from_ref(&tree), &q).unwrap();
        let mut out = BitWriter::new();
        let written = encode_tree(&tree, Region::tile(w, h), &grid, &params, &q, &tables, &mut out).unwrap();
        let bytes = out.finish();
        let mut reader = BitReader::new(&bytes);
        let back = decode_tree(&mut reader, Region::tile(w, h), &grid, &params, &q, &tables).unwrap();
        prop_assert_eq!(reader.position(), written);
        prop_assert_eq!(back.len(), tree.len());
        for (a, b) in tree.nodes.iter().zip(&back.nodes) {
            prop_assert_eq!(a.kind, b.kind);
            prop_assert_eq!(a.pixel_count, b.pixel_count);
            prop_assert_eq!(a.split_options, b.split_options);
            if a.is_leaf() {
                prop_assert_eq!(quantize_fit(&a.fit.unwrap(), &q).unwrap(), quantize_fit(&b.fit.unwrap(), &q).unwrap());
            }
        }
    }

    #[test]
    fn split_children_partition_the_pixels(w in 2u32..20, h in 2u32..20, pick in any::<prop::sample::Index>()) {
        let grid = AngleGrid::for_dims(w, h);
        let region = Region::tile(w, h);
        let options = region_candidates(&region, &grid);
        prop_assume!(!options.is_empty());
        let line = options.line_at(pick.index(options.len())).unwrap();
        prop_assert_eq!(options.position(&line), Some(pick.index(options.len())));
        let (a, b) = split_region(&region, &line, &grid).unwrap();
        prop_assert!(a.pixel_count() > 0 && b.pixel_count() > 0);
        prop_assert_eq!(a.pixel_count() + b.pixel_count(), region.pixel_count());
        prop_assert!((a.area() + b.area() - region.area()).abs() < 1e-9 * region.area());
        for p in &a.pixels {
            prop_assert!(line.signed_value(&grid, f64::from(p.x), f64::from(p.y)) < 0.0);
        }
        for p in &b.pixels {
            prop_assert!(line.signed_value(&grid, f64::from(p.x), f64::from(p.y)) >= 0.0);
        }
    }

    #[test]
    fn tiles_cover_the_image_exactly(w in 1u32..300, h in 1u32..300, tile in 8u32..130) {
        let layout = tile_image(w, h, tile).unwrap();
        let mut hits = vec![0u8; (w * h) as usize];
        for t in &layout.tiles {
            prop_assert!(t.width >= 1 && t.width <= tile && t.height >= 1 && t.height <= tile);
            for y in t.y..t.y + t.height {
                for x in t.x..t.x + t.width {
                    hits[(y * w + x) as usize] += 1;
                }
            }
        }
        prop_assert!(hits.iter().all(|&c| c == 1));
    }

    #[test]
    fn psnr_matches_naive_mse(seed in any::<u64>(), w in 1u32..40, h in 1u32..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = GrayImage::from_fn(w, h, |_, _| rng.gen());
        let b = GrayImage::from_fn(w, h, |_, _| rng.gen());
        let mse: f64 = a.as_raw().iter().zip(b.as_raw()).map(|(&p, &q)| (f64::from(p) - f64::from(q)).powi(2)).sum::<f64>()
            / f64::from(w * h);
        let expected = if mse == 0.0 { 99.0 } else { (10.0 * (255.0f64.powi(2) / mse).log10()).min(99.0) };
        prop_assert!((psnr(&a, &b).unwrap() - expected).abs() < 1e-9);
    }
}

#[test]
fn psnr_of_unit_mse() {
    let a = GrayImage::filled(8, 8, 10);
    let b = GrayImage::from_fn(8, 8, |x, _| if x % 2 == 0 { 9 } else { 11 });
    assert!((psnr(&a, &b).unwrap() - 48.13).abs() < 0.01);
}

#[test]
fn pruning_does_not_improve_the_rendering() {
    let img = image(7, 32, 32);
    let grid = AngleGrid::for_dims(32, 32);
    let (tree, _) = build_tree(
        &img,
        &BuildParams {
            partition_limit: 8,
            min_domain_pixels: 16,
            error_threshold: 0.0,
        },
        &grid,
    )
    .unwrap();
    let full = render(&tree, 32, 32).unwrap();
    let coarse = render(
        &prune_tree(
            &tree,
            1e4,
            &FixedRateModel {
                leaf_payload_bits: 30.0,
            },
        ),
        32,
        32,
    )
    .unwrap();
    assert!(psnr(&img, &full).unwrap() >= psnr(&img, &coarse).unwrap());
}

#[test]
fn lowering_the_limit_adds_iterations_on_smooth_tiles() {
    for seed in 0..6 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b, c) = (
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(20.0..60.0),
        );
        let img = GrayImage::from_fn(64, 64, |x, y| {
            let (x, y) = (f64::from(x), f64::from(y));
            (128.0 + a * x + b * y + c * ((x / 9.0).sin() + (y / 7.0).cos())).clamp(0.0, 255.0)
                as u8
        });
        let grid = AngleGrid::for_dims(64, 64);
        let its: Vec<usize> = [2000, 1000, 500, 250, 128, 64]
            .iter()
            .map(|&l| {
                build_tree(&img, &BuildParams::with_limit(l), &grid)
                    .unwrap()
                    .1
                    .iterations
            })
            .collect();
        assert_eq!(its[0], 3, "seed {seed}: {its:?}");
        assert!(its.iter().all(|i| i % 2 == 1), "seed {seed}: {its:?}");
        assert!(its.windows(2).all(|w| w[0] <= w[1]), "seed {seed}: {its:?}");
    }
}
