use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `sum(v ⊙ r)` for a fixed random `r`, so no gradient entry is trivially symmetric.
fn probe(tape: &mut Tape, v: Var, seed: u64) -> crate::Result<Var> {
    let shape = tape.shape(v).to_vec();
    let r = tape.constant(Tensor::randn(shape, 1.0, &mut rng(seed ^ 0xabcd)));
    let p = tape.mul(v, r)?;
    tape.sum(p)
}

#[test]
fn matmul_identity_and_hand_case() {
    let mut tape = Tape::new();
    let eye = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let m = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let out = tape.matmul(eye, m).unwrap();
    assert_eq!(tape.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);

    let a = tape.constant(t(&[1, 2], &[1.0, 2.0]));
    let b = tape.constant(t(&[2, 1], &[3.0, 4.0]));
    let out = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(out).data(), &[11.0]);
}

#[test]
fn matmul_shape_mismatch_is_dimension_error() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros([2, 3]));
    let b = tape.constant(Tensor::zeros([2, 3]));
    assert!(matches!(tape.matmul(a, b), Err(Error::Dimension(_))));
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let mut r = rng(1);
    let a = Tensor::randn([3, 3], 1.0, &mut r);
    let b = Tensor::randn([3, 3], 1.0, &mut r);
    let err = finite_diff_check(
        |tape, x| {
            let bv = tape.constant(b.clone());
            let p = tape.matmul(x, bv)?;
            tape.sum(p)
        },
        &a,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "rel err {err}");
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[2], &[0.0, 0.0]));
    let s = tape.softmax(x, 0).unwrap();
    assert_eq!(tape.value(s).data(), &[0.5, 0.5]);

    let x = tape.constant(t(&[3], &[3.0, 1.0, 2.0]));
    let masked = tape.top_k_mask(x, 2).unwrap();
    let s = tape.softmax(masked, 0).unwrap();
    let expected = 1.0 / (1.0 + (-1.0f64).exp());
    let got = tape.value(s).data();
    assert!((got[0] - expected).abs() < 1e-12);
    assert_eq!(got[1], 0.0);
    assert!((got[2] - (1.0 - expected)).abs() < 1e-12);
    assert!((got[0] - 0.7311).abs() < 1e-4);
}

#[test]
fn softmax_along_first_axis() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[2, 2], &[0.0, 5.0, 0.0, -5.0]));
    let s = tape.softmax(x, 0).unwrap();
    let v = tape.value(s).data();
    assert_eq!(v[0], 0.5);
    assert!((v[1] + v[3] - 1.0).abs() < 1e-15);
    assert!(matches!(tape.softmax(x, 2), Err(Error::Dimension(_))));
}

#[test]
fn top_k_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[3], &[3.0, 1.0, 2.0]));
    let full = tape.top_k_mask(x, 3).unwrap();
    assert_eq!(tape.value(full).data(), &[3.0, 1.0, 2.0]);
    let two = tape.top_k_mask(x, 2).unwrap();
    assert_eq!(tape.value(two).data(), &[3.0, f64::NEG_INFINITY, 2.0]);

    let tie = tape.constant(t(&[3], &[5.0, 5.0, 1.0]));
    let one = tape.top_k_mask(tie, 1).unwrap();
    assert_eq!(
        tape.value(one).data(),
        &[5.0, f64::NEG_INFINITY, f64::NEG_INFINITY]
    );

    assert!(matches!(tape.top_k_mask(x, 0), Err(Error::Parameter(_))));
    assert!(matches!(tape.top_k_mask(x, 4), Err(Error::Parameter(_))));
}

/// Exhaustive oracle: among all k-subsets, the one with the largest sum, preferring the
/// lexicographically smallest index set.
fn brute_force_top_k(row: &[f64], k: usize) -> Vec<usize> {
    let m = row.len();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for bits in 0u32..(1 << m) {
        if bits.count_ones() as usize != k {
            continue;
        }
        let set: Vec<usize> = (0..m).filter(|j| bits & (1 << j) != 0).collect();
        let total: f64 = set.iter().map(|&j| row[j]).sum();
        let better = match &best {
            None => true,
            Some((bt, bs)) => total > *bt || (total == *bt && set < *bs),
        };
        if better {
            best = Some((total, set));
        }
    }
    best.unwrap().1
}

proptest! {
    #[test]
    fn softmax_shift_invariant(xs in prop::collection::vec(-20.0f64..20.0, 1..8), c in -50.0f64..50.0) {
        let mut tape = Tape::new();
        let n = xs.len();
        let a = tape.constant(t(&[n], &xs));
        let shifted: Vec<f64> = xs.iter().map(|v| v + c).collect();
        let b = tape.constant(t(&[n], &shifted));
        let sa = tape.softmax(a, 0).unwrap();
        let sb = tape.softmax(b, 0).unwrap();
        prop_assert!(tape.value(sa).max_abs_diff(tape.value(sb)) < 1e-12);
        let total: f64 = tape.value(sa).data().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        prop_assert!(tape.value(sa).data().iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn top_k_keeps_exactly_k(
        // small integer grid so ties are frequent
        raw in prop::collection::vec(0i32..4, 1..7),
        kfrac in 0.0f64..1.0,
    ) {
        let row: Vec<f64> = raw.iter().map(|&v| v as f64).collect();
        let m = row.len();
        let k = 1 + ((m - 1) as f64 * kfrac).round() as usize;
        let mut tape = Tape::new();
        let x = tape.constant(t(&[m], &row));
        let masked = tape.top_k_mask(x, k).unwrap();
        let kept: Vec<usize> = (0..m).filter(|&j| tape.value(masked).data()[j].is_finite()).collect();
        prop_assert_eq!(kept.len(), k);
        prop_assert_eq!(kept, brute_force_top_k(&row, k));
        let s = tape.softmax(masked, 0).unwrap();
        prop_assert_eq!(tape.value(s).data().iter().filter(|&&p| p > 0.0).count(), k);
    }
}

#[test]
fn depthwise_identity_and_box_filter() {
    let mut r = rng(3);
    let x = Tensor::randn([3, 5, 5], 1.0, &mut r);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let w = tape.constant(Tensor::full([3, 1, 1, 1], 1.0));
    let b = tape.constant(Tensor::zeros([3]));
    let y = tape.conv2d(xv, w, Some(b), 1, 0, 3).unwrap();
    assert_eq!(tape.value(y), &x);

    let c = 0.37;
    let xv = tape.constant(Tensor::full([2, 6, 6], c));
    let w = tape.constant(Tensor::full([2, 1, 3, 3], 1.0));
    let y = tape.conv2d(xv, w, None, 1, 1, 2).unwrap();
    let yv = tape.value(y);
    assert_eq!(yv.shape(), &[2, 6, 6]);
    for ch in 0..2 {
        for i in 1..5 {
            for j in 1..5 {
                let direct: f64 = (0..9).map(|_| c).sum();
                assert!((yv.data()[ch * 36 + i * 6 + j] - direct).abs() < 1e-12);
            }
        }
        // corner sees only 4 in-bounds taps
        assert!((yv.data()[ch * 36] - 4.0 * c).abs() < 1e-12);
    }
}

#[test]
fn conv_kernel_larger_than_padded_input_fails() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros([1, 2, 2]));
    let w = tape.constant(Tensor::zeros([1, 1, 5, 5]));
    assert!(matches!(
        tape.conv2d(x, w, None, 1, 1, 1),
        Err(Error::Dimension(_))
    ));
    let w = tape.constant(Tensor::zeros([2, 1, 3, 3]));
    assert!(matches!(
        tape.conv2d(x, w, None, 1, 1, 2),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn conv_stride_two_matches_direct_sum() {
    let mut r = rng(11);
    let x = Tensor::randn([2, 7, 6], 1.0, &mut r);
    let w = Tensor::randn([3, 2, 3, 3], 1.0, &mut r);
    let mut tape = Tape::new();
    let (xv, wv) = (tape.constant(x.clone()), tape.constant(w.clone()));
    let y = tape.conv2d(xv, wv, None, 2, 1, 1).unwrap();
    let yv = tape.value(y);
    assert_eq!(yv.shape(), &[3, 4, 3]);
    for co in 0..3 {
        for oy in 0..4 {
            for ox in 0..3 {
                let mut s = 0.0;
                for ci in 0..2 {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let iy = (oy * 2 + ky) as isize - 1;
                            let ix = (ox * 2 + kx) as isize - 1;
                            if iy < 0 || ix < 0 || iy >= 7 || ix >= 6 {
                                continue;
                            }
                            s += w.data()[((co * 2 + ci) * 3 + ky) * 3 + kx]
                                * x.data()[(ci * 7 + iy as usize) * 6 + ix as usize];
                        }
                    }
                }
                assert!((yv.data()[(co * 4 + oy) * 3 + ox] - s).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn conv_weight_gradient_matches_finite_differences() {
    let mut r = rng(5);
    let x = Tensor::randn([1, 4, 4], 1.0, &mut r);
    let w = Tensor::randn([2, 1, 3, 3], 1.0, &mut r);
    let err = finite_diff_check(
        |tape, wv| {
            let xv = tape.constant(x.clone());
            let y = tape.conv2d(xv, wv, None, 1, 1, 1)?;
            probe(tape, y, 5)
        },
        &w,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-5, "rel err {err}");
}

#[test]
fn full_conv_equals_depthwise_then_pointwise_on_one_channel() {
    for seed in 0..5 {
        let mut r = rng(100 + seed);
        let x = Tensor::randn([1, 6, 5], 1.0, &mut r);
        let dw = Tensor::randn([1, 1, 3, 3], 1.0, &mut r);
        let pw = Tensor::randn([4, 1, 1, 1], 1.0, &mut r);
        let full = Tensor::from_fn([4, 1, 3, 3], |i| pw.data()[i / 9] * dw.data()[i % 9]);
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let (dwv, pwv, fv) = (tape.constant(dw), tape.constant(pw), tape.constant(full));
        let a = tape.conv2d(xv, dwv, None, 1, 1, 1).unwrap();
        let composed = tape.conv2d(a, pwv, None, 1, 0, 1).unwrap();
        let direct = tape.conv2d(xv, fv, None, 1, 1, 1).unwrap();
        assert!(tape.value(composed).max_abs_diff(tape.value(direct)) < 1e-12);
    }
}

#[test]
fn layer_norm_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::full([1, 6], 2.5));
    let g = tape.constant(Tensor::full([6], 1.0));
    let b = tape.constant(Tensor::zeros([6]));
    let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));

    let mut r = rng(9);
    let x = tape.constant(Tensor::randn([4, 64], 3.0, &mut r));
    let g = tape.constant(Tensor::full([64], -1.7));
    let b = tape.constant(Tensor::full([64], 0.4));
    let y = tape.layer_norm(x, g, b, 1e-12).unwrap();
    for row in tape.value(y).data().chunks(64) {
        let mean = row.iter().sum::<f64>() / 64.0;
        let std = (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 64.0).sqrt();
        assert!((mean - 0.4).abs() < 1e-6);
        assert!((std - 1.7).abs() < 1e-6);
    }
}

#[test]
fn layer_norm_gradient_matches_finite_differences() {
    let mut r = rng(21);
    let x = Tensor::randn([2, 8], 1.0, &mut r);
    let gamma = Tensor::randn([8], 1.0, &mut r);
    let beta = Tensor::randn([8], 1.0, &mut r);
    let err = finite_diff_check(
        |tape, xv| {
            let g = tape.constant(gamma.clone());
            let b = tape.constant(beta.clone());
            let y = tape.layer_norm(xv, g, b, 1e-5)?;
            probe(tape, y, 21)
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-5, "rel err {err}");
}

#[test]
fn supporting_op_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::full([5, 3], 0.8));
    let p = tape.global_avg_pool(x).unwrap();
    assert_eq!(tape.value(p).shape(), &[3]);
    assert!(tape
        .value(p)
        .data()
        .iter()
        .all(|&v| (v - 0.8).abs() < 1e-15));

    let logits = tape.constant(t(&[2, 3], &[50.0, 0.0, 0.0, 0.0, 0.0, 50.0]));
    let ce = tape.cross_entropy(logits, &[0, 2]).unwrap();
    assert!(tape.value(ce).item() < 1e-20);

    let y = tape.constant(t(&[3], &[0.1, -0.4, 2.0]));
    let l1 = tape.l1_loss(y, y).unwrap();
    assert_eq!(tape.value(l1).item(), 0.0);

    let z = tape.constant(Tensor::zeros([2]));
    assert!(matches!(tape.l1_loss(y, z), Err(Error::Dimension(_))));
}

#[test]
fn backward_square_sum() {
    let mut tape = Tape::new();
    let x = tape.param(t(&[2], &[1.0, 2.0]));
    let sq = tape.mul(x, x).unwrap();
    let s = tape.sum(sq).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0]);

    // a second pass accumulates
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[4.0, 8.0]);
    tape.zero_grad();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn backward_rejects_non_scalar_and_zeros_unused_params() {
    let mut tape = Tape::new();
    let x = tape.param(t(&[2], &[1.0, 2.0]));
    let unused = tape.param(t(&[3], &[1.0, 2.0, 3.0]));
    assert!(matches!(tape.backward(x), Err(Error::Usage(_))));
    let s = tape.sum(x).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(unused).unwrap().data(), &[0.0, 0.0, 0.0]);
}

#[test]
fn detached_values_block_gradient() {
    let mut tape = Tape::new();
    let x = tape.param(t(&[2], &[1.0, 2.0]));
    let d = tape.detach(x);
    let p = tape.mul(x, d).unwrap();
    let s = tape.sum(p).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 2.0]);
}

#[test]
fn gated_softmax_gradient_flows_through_selected_logits_only() {
    let logits = t(&[2, 4], &[0.3, -1.2, 0.9, 0.1, 2.0, 1.1, -0.5, 0.4]);
    let k = 2;
    let f = |tape: &mut Tape, x: Var| -> crate::Result<Var> {
        let m = tape.top_k_mask(x, k)?;
        let s = tape.softmax(m, 1)?;
        probe(tape, s, 77)
    };
    let selected: Vec<usize> = logits
        .data()
        .chunks(4)
        .enumerate()
        .flat_map(|(r, row)| {
            tape::top_k_indices(row, k)
                .into_iter()
                .map(move |j| r * 4 + j)
        })
        .collect();
    let err = finite_diff_check_at(f, &logits, 1e-6, &selected).unwrap();
    assert!(err < 1e-6, "rel err {err}");

    let mut tape = Tape::new();
    let x = tape.param(logits.clone());
    let loss = f(&mut tape, x).unwrap();
    tape.backward(loss).unwrap();
    let g = tape.grad(x).unwrap();
    for j in 0..8 {
        if !selected.contains(&j) {
            assert_eq!(g.data()[j], 0.0);
        }
    }
}

#[test]
fn finite_diff_check_examples() {
    let mut r = rng(4);
    let a = Tensor::randn([4, 4], 1.0, &mut r);
    let x = Tensor::randn([4, 1], 1.0, &mut r);
    // xᵀ A x
    let quad = finite_diff_check(
        |tape, xv| {
            let av = tape.constant(a.clone());
            let ax = tape.matmul(av, xv)?;
            let p = tape.mul(xv, ax)?;
            tape.sum(p)
        },
        &x,
        1e-4,
    )
    .unwrap();
    assert!(quad < 1e-8, "quadratic rel err {quad}");

    let c = Tensor::randn([4, 1], 1.0, &mut r);
    let lin = finite_diff_check(
        |tape, xv| {
            let cv = tape.constant(c.clone());
            let p = tape.mul(xv, cv)?;
            tape.sum(p)
        },
        &x,
        1e-3,
    )
    .unwrap();
    assert!(lin < 1e-10, "linear rel err {lin}");
}

#[test]
fn finite_diff_check_rejects_bad_inputs() {
    let x = t(&[1], &[0.0]);
    let log_at_zero = |tape: &mut Tape, v: Var| {
        let inv = tape.scale(v, 1.0)?;
        let r = tape.constant(Tensor::full([1], f64::INFINITY));
        let p = tape.mul(inv, r)?;
        tape.sum(p)
    };
    assert!(finite_diff_check(log_at_zero, &x, 1e-5).is_err());
    assert!(matches!(
        finite_diff_check(|tape, v| tape.sum(v), &x, 1e-1),
        Err(Error::Parameter(_))
    ));
}

#[test]
fn non_finite_forward_is_an_error() {
    let mut tape = Tape::new();
    let a = tape.constant(t(&[1], &[1e308]));
    assert!(matches!(tape.scale(a, 10.0), Err(Error::NonFinite(_))));
}

#[test]
fn every_op_passes_finite_differences_over_seeds() {
    for seed in 0..20u64 {
        for check in crate::gradsuite::check_ops(seed).unwrap() {
            assert!(check.passed(), "{check:?}");
        }
    }
}
