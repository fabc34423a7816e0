use approx::{assert_abs_diff_eq, assert_relative_eq};
use proptest::prelude::*;

use super::gradcheck::{analytic_gradient, check, numeric_gradient};
use super::{Shape, SuffixMask, Tape, TapeError, Var};

const FD_EPS: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;

fn fd_ok<F>(x: &[f64], shape: Shape, build: F)
where
    F: Fn(&mut Tape, Var) -> Var,
{
    let err = check(x, shape, build, FD_EPS);
    assert!(err < FD_TOL, "finite-difference mismatch: rel err {err:e}");
}

// Generic test points: away from relu/clamp kinks and from zero norms.
const V4: [f64; 4] = [0.83, -1.47, 0.29, 2.11];
const V4B: [f64; 4] = [-0.55, 0.91, 1.83, -0.37];
const M23: [f64; 6] = [0.4, -1.2, 0.7, 2.3, -0.6, 0.15];

#[test]
fn fd_elementwise_binary() {
    fd_ok(&V4, Shape::Vector(4), |t, p| {
        let c = t.constant(Shape::Vector(4), V4B.to_vec());
        let s = t.add(p, c);
        let d = t.sub(s, p);
        let m = t.mul(d, p);
        t.sum(m)
    });
}

#[test]
fn fd_scale_add_const() {
    fd_ok(&V4, Shape::Vector(4), |t, p| {
        let a = t.scale(p, -2.7);
        let b = t.add_const(a, 0.4);
        t.sum(b)
    });
}

#[test]
fn fd_mul_scalar_wrt_vector() {
    fd_ok(&V4, Shape::Vector(4), |t, p| {
        let s = t.constant(Shape::Scalar, vec![1.7]);
        let y = t.mul_scalar(p, s);
        let w = t.constant(Shape::Vector(4), V4B.to_vec());
        t.dot(y, w)
    });
}

#[test]
fn fd_mul_scalar_wrt_scalar() {
    fd_ok(&[0.63], Shape::Scalar, |t, p| {
        let v = t.constant(Shape::Vector(4), V4.to_vec());
        let y = t.mul_scalar(v, p);
        let w = t.constant(Shape::Vector(4), V4B.to_vec());
        t.dot(y, w)
    });
}

#[test]
fn fd_matvec_wrt_matrix_and_vector() {
    fd_ok(&M23, Shape::Matrix(2, 3), |t, p| {
        let x = t.constant(Shape::Vector(3), vec![0.3, -0.8, 1.1]);
        let y = t.matvec(p, x);
        let w = t.constant(Shape::Vector(2), vec![1.0, -2.0]);
        t.dot(y, w)
    });
    fd_ok(&[0.3, -0.8, 1.1], Shape::Vector(3), |t, p| {
        let m = t.constant(Shape::Matrix(2, 3), M23.to_vec());
        let y = t.matvec(m, p);
        let w = t.constant(Shape::Vector(2), vec![1.0, -2.0]);
        t.dot(y, w)
    });
}

#[test]
fn fd_matvec_masked_matches_dense_on_masked_values() {
    let mask = SuffixMask::new(vec![0, 1, 2], 3);
    // Matrix with zeros on masked-out entries, as the memory always has.
    let m = vec![0.5, -1.2, 0.8, 0.0, 0.4, -0.9, 0.0, 0.0, 1.3];
    let x = [0.7, -0.2, 0.9];

    let mut t = Tape::new();
    let mv = t.constant(Shape::Matrix(3, 3), m.clone());
    let xv = t.constant(Shape::Vector(3), x.to_vec());
    let dense = t.matvec(mv, xv);
    let masked = t.matvec_masked(mv, xv, &mask);
    assert_eq!(t.value(dense), t.value(masked));

    let mask2 = mask.clone();
    fd_ok(&x, Shape::Vector(3), move |t, p| {
        let m = t.constant(Shape::Matrix(3, 3), m.clone());
        let y = t.matvec_masked(m, p, &mask2);
        let w = t.constant(Shape::Vector(3), vec![0.6, -1.1, 0.4]);
        t.dot(y, w)
    });
}

#[test]
fn fd_matmul_both_sides() {
    let bm: Vec<f64> = vec![0.7, -0.3, 1.1, 0.2, -0.8, 0.5];
    let wts: Vec<f64> = (0..4).map(|i| 0.3 * i as f64 - 0.5).collect();
    let (b2, w2) = (bm.clone(), wts.clone());
    fd_ok(&M23, Shape::Matrix(2, 3), move |t, p| {
        let b = t.constant(Shape::Matrix(3, 2), b2.clone());
        let c = t.matmul(p, b);
        let w = t.constant(Shape::Matrix(2, 2), w2.clone());
        t.dot(c, w)
    });
    fd_ok(&bm, Shape::Matrix(3, 2), move |t, p| {
        let a = t.constant(Shape::Matrix(2, 3), M23.to_vec());
        let c = t.matmul(a, p);
        let w = t.constant(Shape::Matrix(2, 2), wts.clone());
        t.dot(c, w)
    });
}

#[test]
fn fd_outer() {
    fd_ok(&V4, Shape::Vector(4), |t, p| {
        let b = t.constant(Shape::Vector(3), vec![0.2, -1.5, 0.9]);
        let o = t.outer(p, b);
        let w = t.constant(
            Shape::Matrix(4, 3),
            (0..12).map(|i| 0.1 * i as f64 - 0.55).collect(),
        );
        t.dot(o, w)
    });
    fd_ok(&[0.2, -1.5, 0.9], Shape::Vector(3), |t, p| {
        let a = t.constant(Shape::Vector(4), V4.to_vec());
        let o = t.outer(a, p);
        let w = t.constant(
            Shape::Matrix(4, 3),
            (0..12).map(|i| 0.1 * i as f64 - 0.55).collect(),
        );
        t.dot(o, w)
    });
}

#[test]
fn fd_dot_with_shared_operand() {
    fd_ok(&V4, Shape::Vector(4), |t, p| t.dot(p, p));
}

#[test]
fn fd_unary_smooth() {
    fd_ok(&V4, Shape::Vector(4), |t, p| {
        let a = t.tanh(p);
        let b = t.sigmoid(a);
        let c = t.softplus(b);
        let d = t.exp(c);
        t.sum(d)
    });
}

#[test]
fn fd_recip() {
    fd_ok(&[1.3, -2.1, 0.7], Shape::Vector(3), |t, p| {
        let r = t.recip(p);
        t.sum(r)
    });
}

#[test]
fn fd_relu_leaky_clamp_away_from_kinks() {
    fd_ok(&V4, Shape::Vector(4), |t, p| {
        let a = t.relu(p);
        t.sum(a)
    });
    fd_ok(&V4, Shape::Vector(4), |t, p| {
        let a = t.leaky_relu(p, 0.01);
        let w = t.constant(Shape::Vector(4), V4B.to_vec());
        t.dot(a, w)
    });
    fd_ok(&V4, Shape::Vector(4), |t, p| {
        let a = t.clamp_pm1(p);
        let w = t.constant(Shape::Vector(4), V4B.to_vec());
        t.dot(a, w)
    });
}

#[test]
fn fd_demean_l2() {
    fd_ok(&V4, Shape::Vector(4), |t, p| {
        let d = t.demean(p);
        let w = t.constant(Shape::Vector(4), V4B.to_vec());
        t.dot(d, w)
    });
    fd_ok(&V4, Shape::Vector(4), |t, p| {
        let n = t.l2_normalize(p);
        let w = t.constant(Shape::Vector(4), V4B.to_vec());
        t.dot(n, w)
    });
    fd_ok(&V4, Shape::Vector(4), |t, p| t.l2_norm(p));
}

#[test]
fn fd_softmax_cross_entropy() {
    fd_ok(&V4, Shape::Vector(4), |t, p| t.softmax_cross_entropy(p, 2));
}

#[test]
fn fd_squared_error_both_sides() {
    fd_ok(&V4, Shape::Vector(4), |t, p| {
        let c = t.constant(Shape::Vector(4), V4B.to_vec());
        t.squared_error(p, c)
    });
    fd_ok(&V4, Shape::Vector(4), |t, p| {
        let c = t.constant(Shape::Vector(4), V4B.to_vec());
        t.squared_error(c, p)
    });
}

#[test]
fn fd_structural() {
    fd_ok(&V4, Shape::Vector(4), |t, p| {
        let c = t.concat(&[p, p]);
        let s = t.slice(c, 2, 4);
        let ti = t.tile(s, 3);
        let r = t.repeat_each(ti, 2);
        let k = t.sum_chunks(r, 4);
        let w = t.constant(
            Shape::Vector(6),
            vec![0.3, -0.9, 1.2, 0.1, -0.4, 0.8],
        );
        t.dot(k, w)
    });
}

#[test]
fn fd_scatter_suffix() {
    // mask rows allow 3, 2, 1 columns: packed length 6
    let packed: Vec<f64> = vec![0.7, -0.2, 0.5, 1.1, -0.8, 0.3];
    fd_ok(&packed, Shape::Vector(6), |t, p| {
        let mask = SuffixMask::new(vec![0, 1, 2], 3);
        let m = t.scatter_suffix(p, &mask);
        let v = t.constant(Shape::Vector(3), vec![0.4, -1.2, 0.9]);
        let y = t.matvec(m, v);
        let w = t.constant(Shape::Vector(3), vec![0.6, 0.25, -0.5]);
        t.dot(y, w)
    });
}

#[test]
fn scatter_suffix_forward_layout() {
    let mut t = Tape::new();
    let mask = SuffixMask::new(vec![1, 0, 2], 3);
    let p = t.constant(Shape::Vector(6), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let m = t.scatter_suffix(p, &mask);
    assert_eq!(
        t.value(m),
        &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 0.0, 0.0, 6.0]
    );
}

#[test]
fn fd_hebbian_store_all_inputs() {
    let n = 3;
    let mem: Vec<f64> = vec![0.12, -0.3, 0.44, 0.0, 0.25, -0.17, 0.0, 0.0, 0.31];
    let p: Vec<f64> = vec![0.9, -0.4, 0.6];
    let q: Vec<f64> = vec![0.2, 0.5, -0.8];
    let wts: Vec<f64> = (0..9).map(|i| 0.2 * i as f64 - 0.7).collect();
    let mask = SuffixMask::new(vec![0, 1, 2], 3);

    for masked in [false, true] {
        let mask_opt = masked.then(|| mask.clone());
        let (memc, pc, qc, w) = (mem.clone(), p.clone(), q.clone(), wts.clone());
        let m2 = mask_opt.clone();
        fd_ok(&mem, Shape::Matrix(n, n), move |t, pm| {
            let pv = t.constant(Shape::Vector(n), pc.clone());
            let qv = t.constant(Shape::Vector(n), qc.clone());
            let out = t.hebbian_store(pm, pv, qv, 0.9999, 0.5, m2.as_ref());
            let wv = t.constant(Shape::Matrix(n, n), w.clone());
            t.dot(out, wv)
        });
        let (pc, qc, w) = (p.clone(), q.clone(), wts.clone());
        let (memc2, m3) = (memc.clone(), mask_opt.clone());
        fd_ok(&p, Shape::Vector(n), move |t, pp| {
            let mv = t.constant(Shape::Matrix(n, n), memc2.clone());
            let qv = t.constant(Shape::Vector(n), qc.clone());
            let out = t.hebbian_store(mv, pp, qv, 0.9999, 0.5, m3.as_ref());
            let wv = t.constant(Shape::Matrix(n, n), w.clone());
            t.dot(out, wv)
        });
        let (w, m4) = (wts.clone(), mask_opt.clone());
        let (memc3, pc2) = (mem.clone(), pc.clone());
        fd_ok(&q, Shape::Vector(n), move |t, pq| {
            let mv = t.constant(Shape::Matrix(n, n), memc3.clone());
            let pv = t.constant(Shape::Vector(n), pc2.clone());
            let out = t.hebbian_store(mv, pv, pq, 0.9999, 0.5, m4.as_ref());
            let wv = t.constant(Shape::Matrix(n, n), w.clone());
            t.dot(out, wv)
        });
    }
}

#[test]
fn hebbian_store_matches_composed_primitives() {
    let n = 4;
    let mask = SuffixMask::new(vec![0, 0, 2, 3], n);
    let mem: Vec<f64> = (0..16).map(|i| ((i * 7 + 3) % 11) as f64 * 0.07 - 0.3).collect();
    // Zero the masked-out entries as the invariant requires.
    let mem: Vec<f64> = mem
        .iter()
        .enumerate()
        .map(|(i, &v)| if mask.allows(i / n, i % n) { v } else { 0.0 })
        .collect();
    let p: Vec<f64> = vec![0.8, -0.2, 0.5, -0.9];
    let q: Vec<f64> = vec![0.1, 0.4, -0.6, 0.3];
    let wts: Vec<f64> = (0..16).map(|i| 0.11 * i as f64 - 0.8).collect();
    let (lambda, eta) = (0.9999, 0.5);

    let grads_of = |fused: bool| {
        let mut t = Tape::new();
        let mv = t.param(Shape::Matrix(n, n), mem.clone());
        let pv = t.param(Shape::Vector(n), p.clone());
        let qv = t.param(Shape::Vector(n), q.clone());
        let out = if fused {
            t.hebbian_store(mv, pv, qv, lambda, eta, Some(&mask))
        } else {
            let u = t.sub(pv, qv);
            let w = t.add(pv, qv);
            let o = t.outer(u, w);
            let o = t.scale(o, eta);
            let decayed = t.scale(mv, lambda);
            let raw = t.add(decayed, o);
            let md = t.constant(Shape::Matrix(n, n), mask.dense());
            t.mul(raw, md)
        };
        let wv = t.constant(Shape::Matrix(n, n), wts.clone());
        let loss = t.dot(out, wv);
        let grads = t.backward(loss).unwrap();
        (
            t.value(out).to_vec(),
            grads.get(mv).unwrap().to_vec(),
            grads.get(pv).unwrap().to_vec(),
            grads.get(qv).unwrap().to_vec(),
        )
    };

    let (out_f, gm_f, gp_f, gq_f) = grads_of(true);
    let (out_c, gm_c, gp_c, gq_c) = grads_of(false);
    for (a, b) in out_f.iter().zip(&out_c) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }
    for (a, b) in gp_f.iter().zip(&gp_c) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }
    for (a, b) in gq_f.iter().zip(&gq_c) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }
    // Composed version leaks gradient into masked-out memory entries via
    // scale; the fused op must report zero there, and match elsewhere.
    for (idx, (a, b)) in gm_f.iter().zip(&gm_c).enumerate() {
        if mask.allows(idx / n, idx % n) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        } else {
            assert_eq!(*a, 0.0);
        }
    }
}

#[test]
fn stop_gradient_blocks_ancestors() {
    let mut t = Tape::new();
    let p = t.param(Shape::Vector(3), vec![1.0, 2.0, 3.0]);
    let s = t.stop_gradient(p);
    let q = t.param(Shape::Vector(3), vec![0.5, -0.5, 1.5]);
    let m = t.mul(s, q);
    let loss = t.sum(m);
    let grads = t.backward(loss).unwrap();
    assert!(grads.get(p).is_none(), "stop_gradient must block flow");
    assert_eq!(grads.get(q).unwrap(), t.value(s));
}

#[test]
fn constants_receive_no_gradient() {
    let mut t = Tape::new();
    let c = t.constant(Shape::Vector(2), vec![1.0, 2.0]);
    let p = t.param(Shape::Vector(2), vec![3.0, 4.0]);
    let m = t.mul(c, p);
    let loss = t.sum(m);
    let grads = t.backward(loss).unwrap();
    assert!(grads.get(c).is_none());
    assert_eq!(grads.get(p).unwrap(), &[1.0, 2.0]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut t = Tape::new();
    let p = t.param(Shape::Vector(2), vec![1.0, 2.0]);
    let y = t.scale(p, 2.0);
    match t.backward(y) {
        Err(TapeError::NonScalarLoss(Shape::Vector(2))) => {}
        Err(other) => panic!("expected NonScalarLoss, got {other:?}"),
        Ok(_) => panic!("expected NonScalarLoss, got Ok"),
    }
}

#[test]
fn matvec_forward_oracle() {
    let mut t = Tape::new();
    let m = t.constant(Shape::Matrix(2, 3), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let x = t.constant(Shape::Vector(3), vec![1.0, 0.0, -1.0]);
    let y = t.matvec(m, x);
    assert_eq!(t.value(y), &[-2.0, -2.0]);
}

#[test]
fn matmul_forward_oracle() {
    let mut t = Tape::new();
    let a = t.constant(Shape::Matrix(2, 2), vec![1.0, 2.0, 3.0, 4.0]);
    let b = t.constant(Shape::Matrix(2, 2), vec![5.0, 6.0, 7.0, 8.0]);
    let c = t.matmul(a, b);
    assert_eq!(t.value(c), &[19.0, 22.0, 43.0, 50.0]);
}

#[test]
fn softmax_cross_entropy_forward_oracle() {
    let mut t = Tape::new();
    let logits = t.constant(Shape::Vector(3), vec![1.0, 2.0, 3.0]);
    let l = t.softmax_cross_entropy(logits, 1);
    let z: f64 = (1.0f64.exp() + 2.0f64.exp() + 3.0f64.exp()).ln();
    assert_relative_eq!(t.value_scalar(l), z - 2.0, max_relative = 1e-12);
    // Uniform logits: loss is exactly ln(n) regardless of target.
    let u = t.constant(Shape::Vector(45), vec![0.0; 45]);
    let lu = t.softmax_cross_entropy(u, 7);
    assert_relative_eq!(t.value_scalar(lu), 45.0f64.ln(), max_relative = 1e-12);
}

#[test]
fn l2_normalize_handles_zero_vector() {
    let mut t = Tape::new();
    let z = t.param(Shape::Vector(3), vec![0.0; 3]);
    let n = t.l2_normalize(z);
    assert_eq!(t.value(n), &[0.0, 0.0, 0.0]);
    let loss = t.sum(n);
    let grads = t.backward(loss).unwrap();
    // Zero branch: gradient defined as zero (buffer may be absent or zero).
    if let Some(g) = grads.get(z) {
        assert!(g.iter().all(|&x| x == 0.0));
    }
}

#[test]
fn demean_output_has_zero_mean() {
    let mut t = Tape::new();
    let p = t.constant(Shape::Vector(4), V4.to_vec());
    let d = t.demean(p);
    let mean: f64 = t.value(d).iter().sum::<f64>() / 4.0;
    assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-15);
}

#[test]
fn clamp_forward_oracle() {
    let mut t = Tape::new();
    let p = t.constant(Shape::Vector(5), vec![-3.0, -1.0, 0.25, 1.0, 7.5]);
    let c = t.clamp_pm1(p);
    assert_eq!(t.value(c), &[-1.0, -1.0, 0.25, 1.0, 1.0]);
}

#[test]
fn suffix_mask_dense_and_allows() {
    let mask = SuffixMask::new(vec![0, 2, 3], 3);
    assert_eq!(
        mask.dense(),
        vec![1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]
    );
    assert!(mask.allows(0, 0));
    assert!(!mask.allows(1, 1));
    assert!(mask.allows(1, 2));
    assert!(!mask.allows(2, 2));
}

#[test]
fn hebbian_store_forward_oracle_2x2() {
    let mut t = Tape::new();
    let m = t.constant(Shape::Matrix(2, 2), vec![1.0, 2.0, 3.0, 4.0]);
    let p = t.constant(Shape::Vector(2), vec![1.0, 0.0]);
    let q = t.constant(Shape::Vector(2), vec![0.0, 1.0]);
    // u = (1,-1), w = (1,1); out = 0.5*M + 2*u w^T elementwise:
    // 0.5*[[1,2],[3,4]] + 2*[[1,1],[-1,-1]]
    let out = t.hebbian_store(m, p, q, 0.5, 2.0, None);
    assert_eq!(t.value(out), &[2.5, 3.0, -0.5, 0.0]);
}

#[test]
fn reused_variable_accumulates_gradient() {
    // loss = sum((k*h + M h)), h used twice: dL/dh = k*1 + M^T 1.
    let mut t = Tape::new();
    let h = t.param(Shape::Vector(2), vec![0.3, -0.7]);
    let m = t.constant(Shape::Matrix(2, 2), vec![1.0, 2.0, 3.0, 4.0]);
    let kh = t.scale(h, 0.5);
    let mh = t.matvec(m, h);
    let s = t.add(kh, mh);
    let loss = t.sum(s);
    let grads = t.backward(loss).unwrap();
    // dL/dh = 0.5 + col sums of M = [0.5+4, 0.5+6]
    assert_eq!(grads.get(h).unwrap(), &[4.5, 6.5]);
}

#[test]
fn fd_attractor_like_composite() {
    // Three unrolled attractor iterations with a memory readout, the exact
    // op mix the model uses per timestep.
    let h0 = [0.4, -0.3, 0.8, 0.1];
    fd_ok(&h0, Shape::Vector(4), |t, h0| {
        let m = t.constant(
            Shape::Matrix(4, 4),
            (0..16).map(|i| 0.1 * ((i * 5 + 2) % 7) as f64 - 0.25).collect(),
        );
        let mut h = h0;
        for _ in 0..3 {
            let kh = t.scale(h, 0.5);
            let mh = t.matvec(m, h);
            let pre = t.add(kh, mh);
            h = t.leaky_relu(pre, 0.01);
        }
        let n = t.l2_normalize(h);
        let w = t.constant(Shape::Vector(4), V4B.to_vec());
        t.dot(n, w)
    });
}

#[test]
fn numeric_gradient_of_quadratic_is_exact() {
    // Central differences are exact for quadratics up to roundoff.
    let x = [1.0, -2.0, 3.0];
    let g = numeric_gradient(&x, |v| v.iter().map(|&a| a * a).sum(), 1e-4);
    for (gi, xi) in g.iter().zip(&x) {
        assert_relative_eq!(*gi, 2.0 * xi, max_relative = 1e-9);
    }
}

#[test]
fn analytic_gradient_returns_zeros_for_unreached_param() {
    let g = analytic_gradient(&[1.0, 2.0], Shape::Vector(2), |t, _p| t.scalar(3.0));
    assert_eq!(g, vec![0.0, 0.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Gradient-check property over a composite smooth graph at random points.
    #[test]
    fn prop_fd_matches_analytic(
        x in proptest::collection::vec(-2.0f64..2.0, 6),
        w in proptest::collection::vec(-1.0f64..1.0, 18),
    ) {
        let wm = w.clone();
        let err = check(&x, Shape::Vector(6), move |t, p| {
            let m = t.constant(Shape::Matrix(3, 6), wm.clone());
            let y = t.matvec(m, p);
            let a = t.tanh(y);
            let d = t.demean(a);
            let n = t.l2_normalize(d);
            let s = t.sigmoid(n);
            t.softmax_cross_entropy(s, 1)
        }, FD_EPS);
        prop_assert!(err < FD_TOL, "rel err {}", err);
    }

    #[test]
    fn prop_l2_normalize_is_unit_or_zero(
        x in proptest::collection::vec(-5.0f64..5.0, 8),
    ) {
        let mut t = Tape::new();
        let p = t.constant(Shape::Vector(8), x);
        let n = t.l2_normalize(p);
        let norm: f64 = t.value(n).iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((norm - 1.0).abs() < 1e-9 || norm == 0.0);
    }

    #[test]
    fn prop_softmax_xent_nonnegative_and_matches_manual(
        logits in proptest::collection::vec(-10.0f64..10.0, 5),
        target in 0usize..5,
    ) {
        let mut t = Tape::new();
        let l = t.constant(Shape::Vector(5), logits.clone());
        let loss = t.softmax_cross_entropy(l, target);
        let v = t.value_scalar(loss);
        prop_assert!(v >= 0.0);
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|&x| (x-m).exp()).sum::<f64>().ln();
        prop_assert!((v - (lse - logits[target])).abs() < 1e-10);
    }
}
