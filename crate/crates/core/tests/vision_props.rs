mod common;

use common::*;
use pcdiff_core::vision::{aggregate_features, encode_image, encode_views, mfa_scores};
use pcdiff_core::{Aggregation, ImageTensor, ParamStore, SeededRng, Tape, Tensor, VisionConfig};

fn cfg(image_size: usize, patch: usize, depth: usize, aggregation: Aggregation) -> VisionConfig {
    VisionConfig {
        image_size,
        channels: 1,
        patch_size: patch,
        width: 8,
        depth,
        heads: 2,
        embed_dim: 6,
        aggregation,
        mfa_heads: 1,
    }
}

fn random_image(size: usize, rng: &mut SeededRng) -> ImageTensor<f64> {
    ImageTensor::new(size, size, 1, (0..size * size).map(|_| rng.uniform()).collect()).unwrap()
}

fn embed(store: &ParamStore<f64>, c: &VisionConfig, img: &ImageTensor<f64>) -> Vec<f64> {
    let mut tape = Tape::new();
    let v = encode_image(&mut tape, store, c, img, &mut SeededRng::new(0)).unwrap();
    tape.value(v).data().to_vec()
}

fn aggregate(store: &ParamStore<f64>, c: &VisionConfig, e: &Tensor<f64>) -> Vec<f64> {
    let mut tape = Tape::new();
    let v = tape.constant(e.clone());
    let out = aggregate_features(&mut tape, store, c, v).unwrap();
    assert_eq!(tape.shape(out), &[1, c.embed_dim]);
    tape.value(out).data().to_vec()
}

#[test]
fn encoder_is_deterministic_and_input_sensitive() {
    let c = cfg(8, 4, 2, Aggregation::Mfa);
    let store = dense_store(&c.param_shapes(), 1);
    let img = random_image(8, &mut SeededRng::new(2));
    assert_eq!(embed(&store, &c, &img), embed(&store, &c, &img));
    let zeros = ImageTensor::new(8, 8, 1, vec![0.0; 64]).unwrap();
    let ones = ImageTensor::new(8, 8, 1, vec![1.0; 64]).unwrap();
    assert!(max_abs_diff(&embed(&store, &c, &zeros), &embed(&store, &c, &ones)) > 0.0);
}

#[test]
fn encoder_matches_reference_forward() {
    for (size, patch) in [(4, 4), (8, 4)] {
        let c = cfg(size, patch, 4, Aggregation::Mfa);
        let store = dense_store(&c.param_shapes(), 3);
        let img = random_image(size, &mut SeededRng::new(4));
        let p = |n: &str| store.get(n).unwrap();
        // Patch rows flattened as (row, col) within each patch, patches in
        // raster order.
        let g = size / patch;
        let rows: Rows = (0..g * g)
            .map(|i| {
                let (py, px) = (i / g, i % g);
                (0..patch * patch)
                    .map(|j| img.get(py * patch + j / patch, px * patch + j % patch, 0))
                    .collect()
            })
            .collect();
        let x = ref_add(
            &ref_linear(&rows, p("image.embed.w"), Some(p("image.embed.b"))),
            &rows_of(p("image.pos")),
        );
        let y = ref_transformer(&x, &store, "image.blocks", 4, 2, "image.norm");
        let mean: Vec<f64> = (0..8)
            .map(|j| y.iter().map(|r| r[j]).sum::<f64>() / y.len() as f64)
            .collect();
        let want = ref_linear(&vec![mean], p("image.out.w"), Some(p("image.out.b")));
        assert!(max_abs_diff(&embed(&store, &c, &img), &want[0]) < 1e-12);
    }
}

#[test]
fn encoder_rejects_mismatched_images() {
    let c = cfg(8, 4, 1, Aggregation::Mfa);
    let store = dense_store(&c.param_shapes(), 1);
    let mut tape = Tape::new();
    let img = random_image(12, &mut SeededRng::new(2));
    assert!(encode_image(&mut tape, &store, &c, &img, &mut SeededRng::new(0)).is_err());
    assert!(cfg(10, 4, 1, Aggregation::Mfa).validate().is_err());
}

#[test]
fn single_view_mfa_is_value_then_output_projection() {
    let c = cfg(8, 4, 1, Aggregation::Mfa);
    let store = dense_store(&c.param_shapes(), 5);
    let e = random_tensor(&[1, 6], &mut SeededRng::new(6));
    let p = |n: &str| store.get(n).unwrap();
    let v = ref_linear(&rows_of(&e), p("mfa.value.w"), Some(p("mfa.value.b")));
    let want = ref_linear(&v, p("mfa.out.w"), Some(p("mfa.out.b")));
    assert!(max_abs_diff(&aggregate(&store, &c, &e), &want[0]) < 1e-12);
    assert_eq!(mfa_scores(&store, &c, &e).unwrap(), vec![vec![1.0]]);
}

#[test]
fn mfa_matches_reference_pooling() {
    let c = cfg(8, 4, 1, Aggregation::Mfa);
    let store = dense_store(&c.param_shapes(), 7);
    let e = random_tensor(&[4, 6], &mut SeededRng::new(8));
    let p = |n: &str| store.get(n).unwrap();
    let rows = rows_of(&e);
    let k = ref_linear(&rows, p("mfa.key.w"), None);
    let v = ref_linear(&rows, p("mfa.value.w"), Some(p("mfa.value.b")));
    let q = p("mfa.query").data();
    let scores: Vec<f64> = k
        .iter()
        .map(|kr| kr.iter().zip(q).map(|(a, b)| a * b).sum::<f64>() / 6f64.sqrt())
        .collect();
    let w = ref_softmax(&scores);
    let pooled: Vec<f64> = (0..6)
        .map(|j| v.iter().zip(&w).map(|(r, wi)| wi * r[j]).sum())
        .collect();
    let want = ref_linear(&vec![pooled], p("mfa.out.w"), Some(p("mfa.out.b")));
    assert!(max_abs_diff(&aggregate(&store, &c, &e), &want[0]) < 1e-12);
    let s = &mfa_scores(&store, &c, &e).unwrap()[0];
    assert!(max_abs_diff(s, &w) < 1e-12);
}

#[test]
fn scores_form_probability_vectors() {
    let mut c = cfg(8, 4, 1, Aggregation::Mfa);
    c.mfa_heads = 3;
    let store = dense_store(&c.param_shapes(), 9);
    let mut rng = SeededRng::new(10);
    for v in 1..=6 {
        let e = random_tensor(&[v, 6], &mut rng).map(|x| 4.0 * x);
        for head in mfa_scores(&store, &c, &e).unwrap() {
            assert!(head.iter().all(|&s| s >= 0.0));
            assert!((head.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn aggregation_is_exactly_view_order_invariant() {
    for agg in [Aggregation::Mfa, Aggregation::Avg] {
        let mut c = cfg(8, 4, 1, agg);
        c.mfa_heads = 2;
        let store = dense_store(&c.param_shapes(), 11);
        let mut rng = SeededRng::new(12);
        for _ in 0..20 {
            let e = random_tensor(&[3, 6], &mut rng);
            let rows = rows_of(&e);
            let perm = rng.choose_distinct(3, 3);
            let pe = Tensor::from_rows(&perm.iter().map(|&i| rows[i].clone()).collect::<Vec<_>>()).unwrap();
            assert_eq!(aggregate(&store, &c, &e), aggregate(&store, &c, &pe));
        }
    }
}

#[test]
fn identical_views_reduce_to_single_view() {
    let c = cfg(8, 4, 1, Aggregation::Mfa);
    let store = dense_store(&c.param_shapes(), 13);
    let e = random_tensor(&[1, 6], &mut SeededRng::new(14));
    let rep = Tensor::from_rows(&vec![e.data().to_vec(); 4]).unwrap();
    assert!(max_abs_diff(&aggregate(&store, &c, &e), &aggregate(&store, &c, &rep)) < 1e-12);
}

#[test]
fn average_equals_mfa_in_identity_state() {
    let mfa = cfg(8, 4, 1, Aggregation::Mfa);
    let avg = cfg(8, 4, 1, Aggregation::Avg);
    let mut store = dense_store(&mfa.param_shapes(), 15);
    // Zero query gives uniform scores; identity value/output projections.
    store.get_mut("mfa.query").unwrap().data_mut().fill(0.0);
    for n in ["mfa.value", "mfa.out"] {
        *store.get_mut(&format!("{n}.w")).unwrap() = Tensor::<f64>::eye(6);
        store.get_mut(&format!("{n}.b")).unwrap().data_mut().fill(0.0);
    }
    let e = random_tensor(&[5, 6], &mut SeededRng::new(16));
    assert!(max_abs_diff(&aggregate(&store, &mfa, &e), &aggregate(&store, &avg, &e)) < 1e-12);
}

#[test]
fn view_sets() {
    let c = cfg(8, 4, 1, Aggregation::Mfa);
    let store = dense_store(&c.param_shapes(), 17);
    let mut rng = SeededRng::new(18);
    let a = random_image(8, &mut rng);
    let run = |views: &[&ImageTensor<f64>]| {
        let mut tape = Tape::new();
        let v = encode_views(&mut tape, &store, &c, views, &mut SeededRng::new(0)).unwrap();
        assert_eq!(tape.shape(v), &[1, 6]);
        tape.value(v).data().to_vec()
    };
    let single = run(&[&a]);
    assert!(max_abs_diff(&single, &run(&[&a, &a, &a])) < 1e-12);
    let five: Vec<ImageTensor<f64>> = (0..5).map(|_| random_image(8, &mut rng)).collect();
    let refs: Vec<&ImageTensor<f64>> = five.iter().collect();
    assert_eq!(run(&refs).len(), 6);

    let mut tape = Tape::new();
    assert!(encode_views(&mut tape, &store, &c, &[], &mut SeededRng::new(0)).is_err());
    let small = random_image(4, &mut rng);
    assert!(encode_views(&mut tape, &store, &c, &[&a, &small], &mut SeededRng::new(0)).is_err());
}

#[test]
fn image_invariants() {
    assert!(ImageTensor::new(2, 2, 1, vec![0.0f32, 0.5, 1.0, 1.5]).is_err());
    assert!(ImageTensor::new(2, 2, 1, vec![0.0f32, 0.5, f32::NAN, 1.0]).is_err());
    assert!(ImageTensor::new(2, 2, 1, vec![0.0f32; 3]).is_err());
}
