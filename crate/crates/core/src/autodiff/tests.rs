use super::*;
use crate::error::Error;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

#[test]
fn forward_identity() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[2], &[2.0, 3.0]));
    assert_eq!(g.value(x).data(), &[2.0, 3.0]);
}

#[test]
fn forward_sum_of_squares() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[2], &[1.0, 2.0]));
    let xx = g.mul(x, x).unwrap();
    let s = g.sum(xx);
    assert_eq!(g.scalar(s), 5.0);
}

#[test]
fn forward_matmul_identity() {
    let mut g = Graph::new();
    let eye = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let x = g.leaf(t(&[2, 1], &[5.0, 7.0]));
    let y = g.matmul(eye, x).unwrap();
    assert_eq!(g.value(y).shape(), &[2, 1]);
    assert_eq!(g.value(y).data(), &[5.0, 7.0]);
}

#[test]
fn shape_mismatch_names_operation() {
    let mut g = Graph::new();
    let a = g.leaf(t(&[2], &[1.0, 2.0]));
    let b = g.leaf(t(&[3], &[1.0, 2.0, 3.0]));
    match g.add(a, b) {
        Err(Error::ShapeMismatch { op, .. }) => assert_eq!(op, "add"),
        other => panic!("expected shape mismatch, got {other:?}"),
    }
    let m = g.leaf(t(&[2, 3], &[0.0; 6]));
    match g.matmul(m, m) {
        Err(Error::ShapeMismatch { op, .. }) => assert_eq!(op, "matmul"),
        other => panic!("expected shape mismatch, got {other:?}"),
    }
}

#[test]
fn backward_square_gradient() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[2], &[1.0, 2.0]));
    let xx = g.mul(x, x).unwrap();
    let s = g.sum(xx);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn backward_sum_is_all_ones() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[2, 3], &[0.3, -1.0, 2.0, 4.0, 5.0, 6.0]));
    let s = g.sum(x);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0; 6]);
    assert_eq!(g.grad(x).unwrap().shape(), &[2, 3]);
}

#[test]
fn backward_sigmoid_at_zero() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[1], &[0.0]));
    let y = g.sigmoid(x);
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[0.25]);
}

#[test]
fn backward_rejects_non_scalar_root() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[2], &[1.0, 2.0]));
    let y = g.exp(x);
    assert!(matches!(g.backward(y), Err(Error::NonScalarRoot(s)) if s == vec![2]));
}

#[test]
fn repeated_backward_accumulates() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[2], &[1.0, 2.0]));
    let xx = g.mul(x, x).unwrap();
    let s = g.sum(xx);
    g.backward(s).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[4.0, 8.0]);
    g.zero_grad();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn backward_of_sum_equals_sum_of_backwards() {
    let build = |g: &mut Graph| {
        let x = g.leaf(t(&[3], &[0.5, -1.5, 2.0]));
        let a = {
            let e = g.exp(x);
            g.sum(e)
        };
        let b = {
            let th = g.tanh(x);
            let sq = g.mul(th, x).unwrap();
            g.sum(sq)
        };
        (x, a, b)
    };
    let mut g1 = Graph::new();
    let (x1, a1, b1) = build(&mut g1);
    g1.backward(a1).unwrap();
    g1.backward(b1).unwrap();

    let mut g2 = Graph::new();
    let (x2, a2, b2) = build(&mut g2);
    let total = g2.add(a2, b2).unwrap();
    g2.backward(total).unwrap();

    let (d1, d2) = (g1.grad(x1).unwrap(), g2.grad(x2).unwrap());
    assert!(d1.max_abs_diff(d2) < 1e-14);
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = Graph::new();
    let c = g.constant(t(&[2], &[1.0, 2.0]));
    let x = g.leaf(t(&[2], &[3.0, 4.0]));
    let y = g.mul(c, x).unwrap();
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert!(g.grad(c).is_none());
    assert_eq!(g.grad(x).unwrap().data(), &[1.0, 2.0]);
}

#[test]
fn param_gradients_flow_to_store() {
    let mut store = ParamStore::new();
    let w = store.add("w", t(&[2], &[1.0, -3.0]));
    let mut g = Graph::new();
    let a = g.param(&store, w);
    let b = g.param(&store, w);
    let p = g.mul(a, b).unwrap();
    let s = g.sum(p);
    g.backward(s).unwrap();
    store.accumulate_all(&g);
    assert_eq!(store.grad(w).data(), &[2.0, -6.0]);
}

#[test]
fn gradcheck_quadratic_is_near_exact() {
    let mut store = ParamStore::new();
    let w = store.add("w", t(&[3], &[0.3, -1.2, 2.5]));
    let a = store.add("a", t(&[3], &[1.5, 0.4, -0.7]));
    let report = grad_check(&mut store, &[w, a], DEFAULT_STEP, 1e-8, |g, s| {
        let w = g.param(s, w);
        let a = g.param(s, a);
        let wa = g.mul(w, a)?;
        let sq = g.square(wa);
        let sq = g.add(sq, w)?;
        Ok(g.sum(sq))
    })
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn gradcheck_dead_parameter_is_zero_on_both_sides() {
    let mut store = ParamStore::new();
    let w = store.add("w", t(&[2], &[0.3, -1.2]));
    let dead = store.add("dead", t(&[2], &[5.0, 6.0]));
    let report = grad_check(&mut store, &[w, dead], DEFAULT_STEP, 1e-8, |g, s| {
        let w = g.param(s, w);
        let sq = g.square(w);
        Ok(g.sum(sq))
    })
    .unwrap();
    let d = &report.params[1];
    assert_eq!(d.analytic, 0.0);
    assert_eq!(d.numeric, 0.0);
    assert!(report.passed());
}

#[test]
fn gradcheck_detects_nondeterminism() {
    let mut store = ParamStore::new();
    let w = store.add("w", t(&[1], &[1.0]));
    let mut calls = 0.0;
    let res = grad_check(&mut store, &[w], DEFAULT_STEP, 1e-4, |g, s| {
        calls += 1.0;
        let w = g.param(s, w);
        let shifted = g.add_scalar(w, calls);
        Ok(g.sum(shifted))
    });
    assert!(matches!(res, Err(Error::NonDeterministic { .. })));
}

#[test]
fn relative_error_uses_floor() {
    assert_eq!(relative_error(0.0, 0.0), 0.0);
    assert!((relative_error(1.0, 1.0 + 1e-6) - 1e-6 / (1.0 + 1e-6)).abs() < 1e-15);
}

#[test]
fn conv1d_matches_direct_sum() {
    // x: [1, 1, 5], w: [1, 1, 3], stride 2, padding 1 -> length 3
    let mut g = Graph::new();
    let x = g.leaf(t(&[1, 1, 5], &[1.0, 2.0, 3.0, 4.0, 5.0]));
    let w = g.leaf(t(&[1, 1, 3], &[1.0, 10.0, 100.0]));
    let b = g.leaf(t(&[1], &[0.5]));
    let y = g.conv1d(x, w, b, 2, 1).unwrap();
    // positions: -1,0,1 -> 0*1 + 1*10 + 2*100; 1,2,3 -> 2+30+400; 3,4,5 -> 4+50+0
    assert_eq!(g.value(y).data(), &[210.5, 432.5, 54.5]);
}

#[test]
fn conv_transpose_is_adjoint_of_conv() {
    // <conv(x), y> == <x, conv_transpose(y)> with zero bias and shared weights.
    let xs = [0.3, -1.0, 2.0, 0.7, 1.1, -0.4, 0.9, 0.2];
    let ws: Vec<f64> = (0..2 * 1 * 4).map(|i| (i as f64 * 0.37).sin()).collect();
    let mut g = Graph::new();
    let x = g.constant(t(&[1, 1, 8], &xs));
    let w_conv = g.constant(t(&[2, 1, 4], &ws));
    let zero2 = g.constant(t(&[2], &[0.0, 0.0]));
    let cx = g.conv1d(x, w_conv, zero2, 2, 1).unwrap();
    assert_eq!(g.value(cx).shape(), &[1, 2, 4]);
    let w_t = g.constant(t(&[2, 1, 4], &ws));
    let zero1 = g.constant(t(&[1], &[0.0]));
    let y8 = g.constant(t(&[1, 2, 4], &[1.0, -2.0, 0.5, 0.25, 0.1, 0.2, -0.3, 0.4]));
    let ty8 = g.conv_transpose1d(y8, w_t, zero1, 2, 1).unwrap();
    assert_eq!(g.value(ty8).shape(), &[1, 1, 8]);
    let lhs: f64 = g
        .value(cx)
        .data()
        .iter()
        .zip(g.value(y8).data())
        .map(|(a, b)| a * b)
        .sum();
    let rhs: f64 = xs.iter().zip(g.value(ty8).data()).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
}

#[test]
fn log_mean_exp_of_equal_terms_is_exact() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[1, 8], &[-123.456; 8]));
    let y = g.log_mean_exp_last(x).unwrap();
    assert_eq!(g.value(y).data(), &[-123.456]);
}

#[test]
fn repeat_rows_layout() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let y = g.repeat_rows(x, 2).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 4.0]);
}

#[test]
fn deterministic_forward_and_backward() {
    let run = || {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2, 3], &[0.1, 0.2, -0.3, 0.4, 0.5, -0.6]));
        let w = g.leaf(t(&[3, 2], &[1.0, -1.0, 0.5, 0.25, -2.0, 3.0]));
        let y = g.matmul(x, w).unwrap();
        let y = g.softplus(y);
        let s = g.sum(y);
        g.backward(s).unwrap();
        (g.scalar(s).to_bits(), g.grad(w).unwrap().clone())
    };
    assert_eq!(run(), run());
}
