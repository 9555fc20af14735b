//! Property tests for the structural invariants: round trips, sparsity
//! bounds, linearity, and shift invariance.

mod common;

use hyperattn::io::{decode_matrix, encode_matrix, Dtype};
use hyperattn::*;
use proptest::prelude::*;

fn finite_matrix() -> impl Strategy<Value = Matrix> {
    ((1usize..8), (1usize..8)).prop_flat_map(|(r, c)| {
        proptest::collection::vec(-1e100f64..1e100, r * c)
            .prop_map(move |data| Matrix::new(r, c, data).unwrap())
    })
}

proptest! {
    #[test]
    fn f64_encode_decode_round_trip(m in finite_matrix()) {
        let back = decode_matrix(&encode_matrix(&m, Dtype::F64)).unwrap();
        prop_assert_eq!(m.data(), back.data());
        prop_assert_eq!((m.rows(), m.cols()), (back.rows(), back.cols()));
    }

    #[test]
    fn sorted_hash_mask_respects_sparsity_budget(
        n in 1usize..96,
        b in 1usize..16,
        bits in 1u32..8,
        seed in 0u64..1000,
    ) {
        let q = common::gaussian(n, 4, seed);
        let k = common::gaussian(n, 4, seed.wrapping_add(1));
        let mask = sort_lsh_mask(&q, &k, b, &LshParams::new(bits, seed).unwrap()).unwrap();
        prop_assert!(mask.nnz() <= n * b, "nnz {} > n*b {}", mask.nnz(), n * b);
        // Membership agrees with the row-entry listing.
        for i in 0..n {
            let cols = mask.row_entries(i);
            prop_assert!(cols.len() <= b);
            for j in 0..n {
                prop_assert_eq!(mask.contains(i, j), cols.binary_search(&j).is_ok());
            }
        }
    }

    #[test]
    fn sketch_is_linear(seed in 0u64..500) {
        let a = common::gaussian(24, 3, seed);
        let b = common::gaussian(24, 3, seed.wrapping_add(7));
        let sum = Matrix::from_fn(24, 3, |i, j| a.get(i, j) + b.get(i, j));
        let params = SketchParams::new(2.0, seed).unwrap();
        let cs = CountSketch::new(24, params);
        let (sa, sb, ssum) = (cs.sketch_matrix(&a), cs.sketch_matrix(&b), cs.sketch_matrix(&sum));
        for idx in 0..sa.data().len() {
            let want = sa.data()[idx] + sb.data()[idx];
            let got = ssum.data()[idx];
            prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
    }

    #[test]
    fn normalized_attention_is_shift_invariant_and_row_stochastic(
        seed in 0u64..300,
        shift_a in -2.0f64..2.0,
        shift_b in -2.0f64..2.0,
    ) {
        let n = 12;
        let inputs = common::flat_inputs(n, 4, seed);
        let a = exact_attention_matrix(&inputs, shift_a).unwrap();
        let b = exact_attention_matrix(&inputs, shift_b).unwrap();
        let da = exact_row_sums(&a).unwrap();
        let db = exact_row_sums(&b).unwrap();
        for i in 0..n {
            let mut row_sum = 0.0;
            for j in 0..n {
                let pa = a.get(i, j) / da.get(i);
                let pb = b.get(i, j) / db.get(i);
                prop_assert!((pa - pb).abs() <= 1e-12 * pa.max(1e-300));
                row_sum += pa;
            }
            prop_assert!((row_sum - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn row_sum_estimates_scale_with_shift(seed in 0u64..200) {
        let inputs = common::flat_inputs(16, 4, seed);
        let mask = sort_lsh_mask(&inputs.q, &inputs.k, 4, &LshParams::new(4, seed).unwrap()).unwrap();
        let base = ApproxDParams::practical(8, seed);
        let shifted = base.with_shift(0.9);
        let x = approx_d_estimate(&inputs.q, &inputs.k, &mask, &base).unwrap();
        let y = approx_d_estimate(&inputs.q, &inputs.k, &mask, &shifted).unwrap();
        let scale = (-0.9f64).exp();
        for i in 0..16 {
            let want = x.final_values[i] * scale;
            prop_assert!((want - y.final_values[i]).abs() <= 1e-12 * want);
        }
    }
}

/// Row-stochastic matrices have operator norm at least 1.
#[test]
fn softmax_norm_at_least_one() {
    for seed in 0..20u64 {
        let inputs = common::flat_inputs(48, 6, seed);
        let a = exact_attention_matrix(&inputs, 0.0).unwrap();
        let d = exact_row_sums(&a).unwrap();
        let mut p = a;
        for i in 0..48 {
            let inv = 1.0 / d.get(i);
            for v in p.row_mut(i) {
                *v *= inv;
            }
        }
        let norm = operator_norm(&p, 1e-6, 10_000, seed).value;
        assert!(norm >= 1.0 - 1e-6, "seed {seed}: {norm}");
    }
}
