use super::gradcheck::{check_gradients, max_error};
use super::*;
use crate::error::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, data).unwrap()
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

#[test]
fn matmul_identity_and_dot() {
    let mut tape = Tape::<f64>::new();
    let i = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let col = tape.constant(t(&[2, 1], &[3.0, 4.0]));
    let y = tape.matmul(i, col).unwrap();
    assert_eq!(tape.value(y).data(), &[3.0, 4.0]);

    let row = tape.constant(t(&[1, 2], &[1.0, 2.0]));
    let z = tape.matmul(row, col).unwrap();
    assert_eq!(tape.value(z).shape(), &[1, 1]);
    assert_eq!(tape.value(z).item(), 11.0);
}

#[test]
fn matmul_shape_mismatch_is_dimension_error() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    assert!(matches!(tape.matmul(a, b), Err(Error::Dimension { .. })));
}

#[test]
fn matmul_backward_matches_finite_differences() {
    let a = t(&[1, 2], &[1.0, 2.0]);
    let b = t(&[2, 1], &[3.0, 4.0]);
    let report = check_gradients(&[a, b], 1e-5, 1e-8, |tape, v| {
        let y = tape.matmul(v[0], v[1])?;
        let sq = tape.mul(y, y)?;
        Ok(tape.sum(sq))
    })
    .unwrap();
    assert!(max_error(&report) <= 1e-6, "{report:?}");
}

#[test]
fn max0_negative_branch() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(t(&[1], &[-0.3]), true);
    let y = tape.max0(x);
    assert_eq!(tape.value(y).item(), 0.0);
    let s = tape.sum(y);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().item(), 0.0);
}

#[test]
fn max0_gradient_at_zero_is_zero() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(t(&[2], &[0.0, 1.5]), true);
    let y = tape.max0(x);
    let s = tape.sum(y);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 1.0]);
}

#[test]
fn div_quotient_rule() {
    let mut tape = Tape::<f64>::new();
    let a = tape.leaf(t(&[1], &[3.0]), true);
    let b = tape.leaf(t(&[1], &[0.5]), true);
    let q = tape.div(a, b).unwrap();
    assert_eq!(tape.value(q).item(), 6.0);
    let s = tape.sum(q);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(b).unwrap().item(), -12.0);
    assert_eq!(tape.grad(a).unwrap().item(), 2.0);
}

#[cfg(debug_assertions)]
#[test]
fn div_by_zero_is_trapped_in_debug() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(t(&[2], &[1.0, 1.0]));
    let b = tape.constant(t(&[2], &[1.0, 0.0]));
    assert!(matches!(tape.div(a, b), Err(Error::Contract(_))));
}

#[test]
fn affine_direct_evaluation() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t(&[1], &[2.0]));
    let g = tape.constant(t(&[1], &[3.0]));
    let b = tape.constant(t(&[1], &[0.1]));
    let y = tape.affine(x, g, b).unwrap();
    assert!((tape.value(y).item() - 6.1).abs() < 1e-15);
}

#[test]
fn broadcast_rejects_leading_axis() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(&[3, 4]));
    let b = tape.constant(Tensor::zeros(&[3]));
    assert!(matches!(tape.add(a, b), Err(Error::Dimension { .. })));
    let c = tape.constant(Tensor::zeros(&[4]));
    assert!(tape.add(a, c).is_ok());
}

#[test]
fn backward_of_sum_is_all_ones() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(t(&[3], &[0.2, -1.0, 5.0]), true);
    let s = tape.sum(x);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);
}

#[test]
fn backward_of_sum_of_squares() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(t(&[2], &[1.0, 2.0]), true);
    let sq = tape.mul(x, x).unwrap();
    let s = tape.sum(sq);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(t(&[2], &[1.0, 2.0]), true);
    assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
}

#[test]
fn repeated_backward_accumulates_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(rand_tensor(&mut rng, &[4, 3], -1.0, 1.0), true);
    let w = tape.leaf(rand_tensor(&mut rng, &[5, 3], -1.0, 1.0), true);
    let y = tape.linear(x, w).unwrap();
    let y = tape.max0(y);
    let s = tape.sum(y);
    tape.backward(s).unwrap();
    let once = tape.grad(w).unwrap().clone();
    tape.backward(s).unwrap();
    let twice = tape.grad(w).unwrap();
    for (a, b) in once.data().iter().zip(twice.data()) {
        assert_eq!(2.0 * a, *b);
    }
}

#[test]
fn two_layer_composite_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
    let w1 = rand_tensor(&mut rng, &[5, 4], -1.0, 1.0);
    let w2 = rand_tensor(&mut rng, &[2, 5], -1.0, 1.0);
    let report = check_gradients(&[x, w1, w2], 1e-5, 1e-8, |tape, v| {
        let h = tape.linear(v[0], v[1])?;
        let h = tape.mul(h, h)?;
        let o = tape.linear(h, v[2])?;
        tape.softmax_cross_entropy(o, &[0, 1, 1])
    })
    .unwrap();
    assert!(max_error(&report) <= 1e-5, "{report:?}");
}

#[test]
fn custom_grad_routes_gradient_to_source() {
    let mut tape = Tape::<f64>::new();
    let fwd = tape.leaf(t(&[1], &[5.0]), true);
    let src = tape.leaf(t(&[1], &[3.0]), true);
    let y = tape.custom_grad(fwd, src).unwrap();
    assert_eq!(tape.value(y).item(), 5.0);
    let s = tape.sum(y);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(src).unwrap().item(), 1.0);
    assert!(tape.grad(fwd).is_none());
}

#[test]
fn custom_grad_with_same_tensor_is_identity() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(t(&[2], &[1.5, -2.0]), true);
    let y = tape.custom_grad(x, x).unwrap();
    assert_eq!(tape.value(y).data(), &[1.5, -2.0]);
    let z = tape.mul(y, y).unwrap();
    let s = tape.sum(z);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[3.0, -4.0]);
}

#[test]
fn custom_grad_shape_mismatch() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(&[2]));
    let b = tape.constant(Tensor::zeros(&[3]));
    assert!(matches!(tape.custom_grad(a, b), Err(Error::Dimension { .. })));
}

#[test]
fn non_finite_values_are_recorded() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(t(&[1], &[1e300]));
    let y = tape.mul(a, a).unwrap();
    assert_eq!(tape.first_non_finite(), Some((y.index(), "mul")));
}

/// Absolute floor for the relative-error denominator: central differences at
/// eps=1e-5 carry ~1e-11 round-off, so gradients below 1e-6 are compared absolutely.
const FLOOR: f64 = 1e-6;

/// Every differentiable primitive against central differences on random shapes.
#[test]
fn primitives_match_finite_differences_on_random_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let b = rng.random_range(1..4);
        let k = rng.random_range(1..5);
        let n = rng.random_range(1..5);
        let x = rand_tensor(&mut rng, &[b, k], -1.0, 1.0);
        let w = rand_tensor(&mut rng, &[n, k], -1.0, 1.0);
        let m = rand_tensor(&mut rng, &[k, n], -1.0, 1.0);
        let y = rand_tensor(&mut rng, &[b, k], -1.0, 1.0);
        let g = rand_tensor(&mut rng, &[k], 0.5, 1.5);
        let bias = rand_tensor(&mut rng, &[k], -0.5, 0.5);
        // Denominators and relu inputs kept away from 0 so finite differences are valid.
        let den = rand_tensor(&mut rng, &[b, k], 0.5, 2.0);
        let mut away = rand_tensor(&mut rng, &[b, k], 0.1, 1.0);
        for v in away.data_mut() {
            if rng.random_bool(0.5) {
                *v = -*v;
            }
        }
        let hw = 2 * rng.random_range(1..3);
        let c = rng.random_range(1..3);
        let img = rand_tensor(&mut rng, &[b, hw, hw, c], -1.0, 1.0);
        let kern = rand_tensor(&mut rng, &[2, 3, 3, c], -1.0, 1.0);
        let weights = rand_tensor(&mut rng, &[b * hw * hw * 2 / 4], -1.0, 1.0);
        let c_scale = rng.random_range(-2.0..2.0);

        let reports = [
            check_gradients(&[x.clone(), w.clone()], 1e-5, FLOOR, |tp, v| {
                let o = tp.linear(v[0], v[1])?;
                let o2 = tp.mul(o, o)?;
                Ok(tp.sum(o2))
            }),
            check_gradients(&[x.clone(), m.clone()], 1e-5, FLOOR, |tp, v| {
                let o = tp.matmul(v[0], v[1])?;
                let o2 = tp.mul(o, o)?;
                Ok(tp.sum(o2))
            }),
            check_gradients(&[x.clone(), y.clone(), g.clone()], 1e-5, FLOOR, |tp, v| {
                let s = tp.add(v[0], v[1])?;
                let d = tp.sub(s, v[2])?;
                let p = tp.mul(d, v[1])?;
                let q = tp.mul(p, v[2])?;
                let r = tp.scale(q, c_scale);
                let r = tp.add_scalar(r, 0.3);
                let r2 = tp.mul(r, r)?;
                Ok(tp.sum(r2))
            }),
            check_gradients(&[y.clone(), den.clone(), g.clone()], 1e-5, FLOOR, |tp, v| {
                let q = tp.div(v[0], v[1])?;
                let q2 = tp.div(q, v[2])?;
                let q3 = tp.mul(q2, q2)?;
                Ok(tp.sum(q3))
            }),
            check_gradients(&[away.clone(), g.clone(), bias.clone()], 1e-5, FLOOR, |tp, v| {
                let r = tp.max0(v[0]);
                let a = tp.affine(r, v[1], v[2])?;
                let a2 = tp.mul(a, a)?;
                Ok(tp.sum(a2))
            }),
            check_gradients(&[img.clone(), kern.clone(), weights.clone()], 1e-5, FLOOR, |tp, v| {
                let o = tp.conv2d(v[0], v[1])?;
                let p = tp.avg_pool2(o)?;
                let flat = tp.reshape(p, &[p_len(tp, p)])?;
                let prod = tp.mul(flat, v[2])?;
                let sq = tp.mul(prod, prod)?;
                Ok(tp.sum(sq))
            }),
            check_gradients(&[x.clone(), w.clone()], 1e-5, FLOOR, |tp, v| {
                let o = tp.linear(v[0], v[1])?;
                let labels: Vec<usize> = (0..b).map(|i| i % n).collect();
                tp.softmax_cross_entropy(o, &labels)
            }),
        ];
        for (i, r) in reports.into_iter().enumerate() {
            let r = r.unwrap();
            let e = max_error(&r);
            assert!(e <= 1e-5, "case {case} primitive group {i}: {r:?}");
            worst = worst.max(e);
        }
    }
    assert!(worst <= 1e-5);
}

fn p_len(tp: &Tape<f64>, v: Var) -> usize {
    tp.value(v).len()
}

#[test]
fn backward_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(rand_tensor(&mut rng, &[2, 4, 4, 3], -1.0, 1.0), true);
        let k = tape.leaf(rand_tensor(&mut rng, &[4, 3, 3, 3], -1.0, 1.0), true);
        let y = tape.conv2d(x, k).unwrap();
        let y = tape.max0(y);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        (tape.grad(x).unwrap().clone(), tape.grad(k).unwrap().clone())
    };
    let (a, b) = run();
    let (c, d) = run();
    assert_eq!(a.data(), c.data());
    assert_eq!(b.data(), d.data());
}

#[test]
fn avg_pool_rejects_odd_extent() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[1, 3, 4, 1]));
    assert!(matches!(tape.avg_pool2(x), Err(Error::Dimension { .. })));
}

#[test]
fn avg_pool_of_constant_is_constant() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::full(&[2, 4, 4, 3], 0.7), true);
    let y = tape.avg_pool2(x).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
    let s = tape.sum(y);
    tape.backward(s).unwrap();
    assert!(tape.grad(x).unwrap().data().iter().all(|&v| v == 0.25));
}
