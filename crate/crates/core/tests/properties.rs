use emosup::analysis::{derive_negative_pools, CrossModalSimilarityMatrix, MAX_EXCLUDED};
use emosup::corpus::{EmotionLabel, EMOTION_COUNT};
use emosup::metrics::{csim, fad, lse_d, FeatureSet};
use emosup::numerics::{cosine_similarity, Scalar};
use emosup::pepl::contrastive_loss_l1;
use emosup::vtedc::l2_from_diffs;
use emosup::{Matrix, Vector};
use proptest::prelude::*;

const DIM: usize = 6;

fn vector(dim: usize) -> impl Strategy<Value = Vector> {
    prop::collection::vec(-10.0..10.0f64, dim).prop_map(|v| Vector::new(v).unwrap())
}

// Mostly ordinary vectors, sometimes exactly zero or below the zero-norm threshold.
fn maybe_degenerate(dim: usize) -> impl Strategy<Value = Vector> {
    prop_oneof![
        6 => vector(dim),
        1 => Just(Vector::zeros(dim)),
        1 => vector(dim).prop_map(|v| v.scale(1e-14)),
    ]
}

fn is_degenerate(v: &Vector) -> bool {
    v.norm() < f64::norm_epsilon()
}

fn orthogonal(dim: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-1.0..1.0f64, dim * dim).prop_filter_map("rank deficient", move |raw| {
        let cols: Vec<Vector> = (0..dim)
            .map(|c| Vector::new((0..dim).map(|r| raw[r * dim + c]).collect()).unwrap())
            .collect();
        let mut basis: Vec<Vector> = Vec::new();
        for v in cols {
            let mut r = v.clone();
            for _ in 0..2 {
                for b in &basis {
                    let p = b.dot(&r).unwrap();
                    r.axpy(-p, b).unwrap();
                }
            }
            let n = r.norm();
            if n < 1e-3 {
                return None;
            }
            basis.push(r.scale(1.0 / n));
        }
        Some(Matrix::from_columns(&basis).unwrap())
    })
}

fn feature_set(n: usize, dim: usize) -> impl Strategy<Value = Vec<Vector>> {
    prop::collection::vec(vector(dim), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn cosine_is_bounded_and_symmetric(a in maybe_degenerate(DIM), b in maybe_degenerate(DIM)) {
        let ab = cosine_similarity(&a, &b).unwrap();
        let ba = cosine_similarity(&b, &a).unwrap();
        prop_assert!((-1.0..=1.0).contains(&ab.value));
        prop_assert_eq!(ab.value, ba.value);
        prop_assert_eq!(ab.degenerate, is_degenerate(&a) || is_degenerate(&b));
        if ab.degenerate {
            prop_assert_eq!(ab.value, 0.0);
        }
    }

    #[test]
    fn cosine_is_scale_invariant(a in vector(DIM), b in vector(DIM), s in 0.01..100.0f64) {
        prop_assume!(!is_degenerate(&a) && !is_degenerate(&b));
        let x = cosine_similarity(&a, &b).unwrap().value;
        let y = cosine_similarity(&a.scale(s), &b).unwrap().value;
        prop_assert!((x - y).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn contrastive_loss_stays_in_range(
        pos in maybe_degenerate(DIM),
        neg in maybe_degenerate(DIM),
        vis in maybe_degenerate(DIM),
    ) {
        let l = contrastive_loss_l1(&pos, &neg, &vis).unwrap();
        prop_assert!((-1.0..=3.0).contains(&l.value), "L1 = {}", l.value);
        prop_assert_eq!(l.degenerate_positive, is_degenerate(&pos) || is_degenerate(&vis));
        prop_assert_eq!(l.degenerate_negative, is_degenerate(&neg) || is_degenerate(&vis));
    }

    #[test]
    fn difference_loss_stays_in_range(i in maybe_degenerate(DIM), t in maybe_degenerate(DIM)) {
        let l = l2_from_diffs(&i, &t).unwrap();
        prop_assert!((0.0..=2.0).contains(&l.value), "L2 = {}", l.value);
        prop_assert_eq!(l.degenerate, is_degenerate(&i) || is_degenerate(&t));
        if l.degenerate {
            prop_assert_eq!(l.value, 1.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn difference_loss_ignores_constant_offsets(
        i_s in vector(DIM),
        i_t in vector(DIM),
        t_s in vector(DIM),
        t_t in vector(DIM),
        ci in vector(DIM),
        ct in vector(DIM),
    ) {
        let original = l2_from_diffs(&i_s.sub(&i_t).unwrap(), &t_s.sub(&t_t).unwrap()).unwrap();
        let shifted_i = i_s.add(&ci).unwrap().sub(&i_t.add(&ci).unwrap()).unwrap();
        let shifted_t = t_s.add(&ct).unwrap().sub(&t_t.add(&ct).unwrap()).unwrap();
        let shifted = l2_from_diffs(&shifted_i, &shifted_t).unwrap();
        prop_assert!((shifted.value - original.value).abs() < 1e-12);
    }
}

fn similarity_matrix() -> impl Strategy<Value = CrossModalSimilarityMatrix> {
    prop::collection::vec(prop::collection::vec(-1.0..=1.0f64, EMOTION_COUNT), EMOTION_COUNT)
        .prop_map(|values| {
            CrossModalSimilarityMatrix::new(values, vec![vec![1; EMOTION_COUNT]; EMOTION_COUNT])
                .unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn derived_pools_are_valid_for_every_k(m in similarity_matrix()) {
        for k in 0..=MAX_EXCLUDED {
            let pools = derive_negative_pools(&m, k).unwrap();
            for e in EmotionLabel::ALL {
                let pool = pools.pool(e);
                prop_assert_eq!(pool.len(), EMOTION_COUNT - 1 - k);
                prop_assert!(!pool.contains(&e));
                // Every excluded negative is at least as similar as every kept one.
                let kept_max = pool.iter().map(|&n| m.get(e, n)).fold(f64::NEG_INFINITY, f64::max);
                for n in EmotionLabel::ALL.iter().filter(|&&n| n != e && !pool.contains(&n)) {
                    prop_assert!(m.get(e, *n) >= kept_max);
                }
            }
        }
        prop_assert!(derive_negative_pools(&m, MAX_EXCLUDED + 1).is_err());
    }

    #[test]
    fn csim_is_permutation_and_scale_invariant(
        gen in feature_set(5, DIM),
        real in feature_set(5, DIM),
        shift in 1usize..5,
        scale in 0.1..10.0f64,
    ) {
        let base = csim(&gen, &real).unwrap();
        let rot = |v: &[Vector]| -> Vec<Vector> {
            (0..v.len()).map(|i| v[(i + shift) % v.len()].clone()).collect()
        };
        let permuted = csim(&rot(&gen), &rot(&real)).unwrap();
        let scaled: Vec<Vector> = gen.iter().map(|v| v.scale(scale)).collect();
        prop_assert!((base - permuted).abs() < 1e-12);
        prop_assert!((base - csim(&scaled, &real).unwrap()).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&base));
    }

    #[test]
    fn lse_d_is_permutation_invariant_and_scales_linearly(
        audio in feature_set(6, DIM),
        visual in feature_set(6, DIM),
        shift in 1usize..6,
        scale in 0.1..10.0f64,
    ) {
        let base = lse_d(&audio, &visual).unwrap();
        let rot = |v: &[Vector]| -> Vec<Vector> {
            (0..v.len()).map(|i| v[(i + shift) % v.len()].clone()).collect()
        };
        let permuted = lse_d(&rot(&audio), &rot(&visual)).unwrap();
        let sa: Vec<Vector> = audio.iter().map(|v| v.scale(scale)).collect();
        let sv: Vec<Vector> = visual.iter().map(|v| v.scale(scale)).collect();
        prop_assert!(base >= 0.0);
        prop_assert!((base - permuted).abs() < 1e-9 * base.max(1.0));
        prop_assert!((lse_d(&sa, &sv).unwrap() - scale * base).abs() < 1e-9 * (scale * base).max(1.0));
    }

    #[test]
    fn fad_is_symmetric_and_rotation_invariant(
        a in feature_set(12, 4),
        b in feature_set(15, 4),
        q in orthogonal(4),
        t in vector(4),
    ) {
        let fa = FeatureSet::new(a.clone(), "a").unwrap();
        let fb = FeatureSet::new(b.clone(), "b").unwrap();
        let ab = fad(&fa, &fb).unwrap();
        let ba = fad(&fb, &fa).unwrap();
        let rotate = |s: &[Vector]| -> FeatureSet {
            let v = s.iter().map(|x| q.matvec(x).unwrap().add(&t).unwrap()).collect();
            FeatureSet::new(v, "rotated").unwrap()
        };
        let rotated = fad(&rotate(&a), &rotate(&b)).unwrap();
        let tol = 1e-6 * ab.abs().max(1.0);
        prop_assert!((ab - ba).abs() < tol, "{} vs {}", ab, ba);
        prop_assert!((ab - rotated).abs() < tol, "{} vs {}", ab, rotated);
        prop_assert!(ab > -1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn fad_of_a_set_with_itself_vanishes(n in 2usize..30, dim in 1usize..24, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vector> = (0..n)
            .map(|_| Vector::new((0..dim).map(|_| rng.random_range(-5.0..5.0)).collect()).unwrap())
            .collect();
        let a = FeatureSet::new(rows, "a").unwrap();
        let v = fad(&a, &a).unwrap();
        prop_assert!(v.abs() < 1e-9, "n = {}, dim = {}: {}", n, dim, v);
    }
}
