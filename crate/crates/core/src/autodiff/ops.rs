//! Reverse-pass rules for every tape op. `backward_step` consumes the
//! gradient of one node and accumulates into its inputs; nodes that do not
//! need gradients are skipped so constant subgraphs cost nothing.

use super::tape::{l2, sigmoid, Op, Tape, NORM_EPS};

fn acc<'a>(tape: &Tape, grads: &'a mut [Option<Vec<f64>>], id: usize) -> Option<&'a mut [f64]> {
    if !tape.nodes[id].needs_grad {
        return None;
    }
    let len = tape.nodes[id].value.len();
    Some(grads[id].get_or_insert_with(|| vec![0.0; len]).as_mut_slice())
}

pub(crate) fn backward_step(tape: &Tape, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &tape.nodes[id];
    match &node.op {
        Op::Leaf { .. } | Op::StopGradient(_) => {}

        Op::Add(a, b) => {
            if let Some(ga) = acc(tape, grads, *a) {
                axpy(1.0, g, ga);
            }
            if let Some(gb) = acc(tape, grads, *b) {
                axpy(1.0, g, gb);
            }
        }
        Op::Sub(a, b) => {
            if let Some(ga) = acc(tape, grads, *a) {
                axpy(1.0, g, ga);
            }
            if let Some(gb) = acc(tape, grads, *b) {
                axpy(-1.0, g, gb);
            }
        }
        Op::Mul(a, b) => {
            let (a, b) = (*a, *b);
            let bv = &tape.nodes[b].value;
            if let Some(ga) = acc(tape, grads, a) {
                for ((ga_i, &g_i), &b_i) in ga.iter_mut().zip(g).zip(bv) {
                    *ga_i += g_i * b_i;
                }
            }
            let av = &tape.nodes[a].value;
            if let Some(gb) = acc(tape, grads, b) {
                for ((gb_i, &g_i), &a_i) in gb.iter_mut().zip(g).zip(av) {
                    *gb_i += g_i * a_i;
                }
            }
        }
        Op::Scale(a, k) => {
            if let Some(ga) = acc(tape, grads, *a) {
                axpy(*k, g, ga);
            }
        }
        Op::AddConst(a) => {
            if let Some(ga) = acc(tape, grads, *a) {
                axpy(1.0, g, ga);
            }
        }
        Op::MulScalar { vec, scalar } => {
            let (vec, scalar) = (*vec, *scalar);
            let s = tape.nodes[scalar].value[0];
            if let Some(gv) = acc(tape, grads, vec) {
                axpy(s, g, gv);
            }
            let vv = &tape.nodes[vec].value;
            if tape.nodes[scalar].needs_grad {
                let d: f64 = g.iter().zip(vv).map(|(&gi, &vi)| gi * vi).sum();
                let gs = acc(tape, grads, scalar).expect("needs_grad");
                gs[0] += d;
            }
        }

        Op::MatVec { mat, vec, mask } => {
            let (mat, vec) = (*mat, *vec);
            let cols = tape.nodes[vec].value.len();
            let xv = &tape.nodes[vec].value;
            if let Some(gm) = acc(tape, grads, mat) {
                for (i, &gi) in g.iter().enumerate() {
                    if gi == 0.0 {
                        continue;
                    }
                    let cs = mask.as_ref().map_or(0, |m| m.col_start[i]);
                    axpy(gi, &xv[cs..], &mut gm[i * cols + cs..(i + 1) * cols]);
                }
            }
            let mv = &tape.nodes[mat].value;
            if let Some(gv) = acc(tape, grads, vec) {
                for (i, &gi) in g.iter().enumerate() {
                    if gi == 0.0 {
                        continue;
                    }
                    let cs = mask.as_ref().map_or(0, |m| m.col_start[i]);
                    axpy(gi, &mv[i * cols + cs..(i + 1) * cols], &mut gv[cs..]);
                }
            }
        }
        Op::MatMul(a, b) => {
            let (a, b) = (*a, *b);
            let (m, k) = match tape.nodes[a].shape {
                super::Shape::Matrix(r, c) => (r, c),
                _ => unreachable!(),
            };
            let n = tape.nodes[b].value.len() / k;
            let bv = &tape.nodes[b].value;
            if let Some(ga) = acc(tape, grads, a) {
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for l in 0..k {
                        let mut s = 0.0;
                        for (gj, bj) in grow.iter().zip(&bv[l * n..(l + 1) * n]) {
                            s += gj * bj;
                        }
                        ga[i * k + l] += s;
                    }
                }
            }
            let av = &tape.nodes[a].value;
            if let Some(gb) = acc(tape, grads, b) {
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for l in 0..k {
                        let a_il = av[i * k + l];
                        if a_il != 0.0 {
                            axpy(a_il, grow, &mut gb[l * n..(l + 1) * n]);
                        }
                    }
                }
            }
        }
        Op::Outer(a, b) => {
            let (a, b) = (*a, *b);
            let n = tape.nodes[b].value.len();
            let bv = &tape.nodes[b].value;
            if let Some(ga) = acc(tape, grads, a) {
                for (i, ga_i) in ga.iter_mut().enumerate() {
                    let mut s = 0.0;
                    for (gj, bj) in g[i * n..(i + 1) * n].iter().zip(bv) {
                        s += gj * bj;
                    }
                    *ga_i += s;
                }
            }
            let av = &tape.nodes[a].value;
            if let Some(gb) = acc(tape, grads, b) {
                for (i, &a_i) in av.iter().enumerate() {
                    if a_i != 0.0 {
                        axpy(a_i, &g[i * n..(i + 1) * n], gb);
                    }
                }
            }
        }
        Op::Dot(a, b) => {
            let (a, b) = (*a, *b);
            let g0 = g[0];
            let bv = &tape.nodes[b].value;
            if let Some(ga) = acc(tape, grads, a) {
                axpy(g0, bv, ga);
            }
            let av = &tape.nodes[a].value;
            if let Some(gb) = acc(tape, grads, b) {
                axpy(g0, av, gb);
            }
        }
        Op::Sum(a) => {
            if let Some(ga) = acc(tape, grads, *a) {
                for ga_i in ga.iter_mut() {
                    *ga_i += g[0];
                }
            }
        }

        Op::Relu(a) => {
            let a = *a;
            let xv = &tape.nodes[a].value;
            if let Some(ga) = acc(tape, grads, a) {
                for ((ga_i, &g_i), &x) in ga.iter_mut().zip(g).zip(xv) {
                    if x > 0.0 {
                        *ga_i += g_i;
                    }
                }
            }
        }
        Op::LeakyRelu(a, slope) => {
            let (a, slope) = (*a, *slope);
            let xv = &tape.nodes[a].value;
            if let Some(ga) = acc(tape, grads, a) {
                for ((ga_i, &g_i), &x) in ga.iter_mut().zip(g).zip(xv) {
                    *ga_i += if x >= 0.0 { g_i } else { slope * g_i };
                }
            }
        }
        Op::ClampPm1(a) => {
            let a = *a;
            let xv = &tape.nodes[a].value;
            if let Some(ga) = acc(tape, grads, a) {
                for ((ga_i, &g_i), &x) in ga.iter_mut().zip(g).zip(xv) {
                    if (-1.0..=1.0).contains(&x) {
                        *ga_i += g_i;
                    }
                }
            }
        }
        Op::Tanh(a) => {
            unary_from_output(tape, grads, *a, id, g, |y| 1.0 - y * y);
        }
        Op::Sigmoid(a) => {
            unary_from_output(tape, grads, *a, id, g, |y| y * (1.0 - y));
        }
        Op::Softplus(a) => {
            let a = *a;
            let xv = &tape.nodes[a].value;
            if let Some(ga) = acc(tape, grads, a) {
                for ((ga_i, &g_i), &x) in ga.iter_mut().zip(g).zip(xv) {
                    *ga_i += g_i * sigmoid(x);
                }
            }
        }
        Op::Exp(a) => {
            unary_from_output(tape, grads, *a, id, g, |y| y);
        }
        Op::Recip(a) => {
            unary_from_output(tape, grads, *a, id, g, |y| -y * y);
        }
        Op::Demean(a) => {
            let a = *a;
            if tape.nodes[a].needs_grad {
                let gmean = g.iter().sum::<f64>() / g.len() as f64;
                let ga = acc(tape, grads, a).expect("needs_grad");
                for (ga_i, &g_i) in ga.iter_mut().zip(g) {
                    *ga_i += g_i - gmean;
                }
            }
        }
        Op::L2Normalize(a) => {
            let a = *a;
            let r = l2(&tape.nodes[a].value);
            if r > NORM_EPS {
                let y = &tape.nodes[id].value;
                let gy: f64 = g.iter().zip(y).map(|(&gi, &yi)| gi * yi).sum();
                if let Some(ga) = acc(tape, grads, a) {
                    for ((ga_i, &g_i), &y_i) in ga.iter_mut().zip(g).zip(y) {
                        *ga_i += (g_i - y_i * gy) / r;
                    }
                }
            }
        }
        Op::L2Norm(a) => {
            let a = *a;
            let r = tape.nodes[id].value[0];
            if r > NORM_EPS {
                let xv = &tape.nodes[a].value;
                if let Some(ga) = acc(tape, grads, a) {
                    axpy(g[0] / r, xv, ga);
                }
            }
        }

        Op::SoftmaxCrossEntropy { logits, target } => {
            let (logits, target) = (*logits, *target);
            if tape.nodes[logits].needs_grad {
                let lv = &tape.nodes[logits].value;
                let m = lv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = lv.iter().map(|&x| (x - m).exp()).sum();
                let probs: Vec<f64> = lv.iter().map(|&x| (x - m).exp() / z).collect();
                let gl = acc(tape, grads, logits).expect("needs_grad");
                for (i, (gl_i, &p_i)) in gl.iter_mut().zip(&probs).enumerate() {
                    let y = if i == target { 1.0 } else { 0.0 };
                    *gl_i += g[0] * (p_i - y);
                }
            }
        }
        Op::SquaredError(a, b) => {
            let (a, b) = (*a, *b);
            let g0 = g[0];
            let diff: Vec<f64> = tape.nodes[a]
                .value
                .iter()
                .zip(&tape.nodes[b].value)
                .map(|(&x, &y)| 2.0 * g0 * (x - y))
                .collect();
            if let Some(ga) = acc(tape, grads, a) {
                axpy(1.0, &diff, ga);
            }
            if let Some(gb) = acc(tape, grads, b) {
                axpy(-1.0, &diff, gb);
            }
        }

        Op::Concat(parts) => {
            let mut offset = 0;
            for &p in parts {
                let len = tape.nodes[p].value.len();
                if let Some(gp) = acc(tape, grads, p) {
                    axpy(1.0, &g[offset..offset + len], gp);
                }
                offset += len;
            }
        }
        Op::SumChunks { input, chunk } => {
            let (input, chunk) = (*input, *chunk);
            if let Some(gi) = acc(tape, grads, input) {
                for (j, gi_j) in gi.iter_mut().enumerate() {
                    *gi_j += g[j / chunk];
                }
            }
        }
        Op::Slice { input, start, len } => {
            let (input, start, len) = (*input, *start, *len);
            if let Some(gi) = acc(tape, grads, input) {
                axpy(1.0, g, &mut gi[start..start + len]);
            }
        }
        Op::Tile { input, reps } => {
            let (input, reps) = (*input, *reps);
            let n = tape.nodes[input].value.len();
            if let Some(gi) = acc(tape, grads, input) {
                for r in 0..reps {
                    axpy(1.0, &g[r * n..(r + 1) * n], gi);
                }
            }
        }
        Op::RepeatEach { input, reps } => {
            let (input, reps) = (*input, *reps);
            if let Some(gi) = acc(tape, grads, input) {
                for (j, gi_j) in gi.iter_mut().enumerate() {
                    *gi_j += g[j * reps..(j + 1) * reps].iter().sum::<f64>();
                }
            }
        }
        Op::ScatterSuffix { input, mask } => {
            let input = *input;
            if let Some(gi) = acc(tape, grads, input) {
                let cols = mask.cols;
                let mut k = 0;
                for (i, &cs) in mask.col_start.iter().enumerate() {
                    let len = cols - cs;
                    axpy(1.0, &g[i * cols + cs..(i + 1) * cols], &mut gi[k..k + len]);
                    k += len;
                }
            }
        }

        Op::HebbianStore {
            mem,
            p,
            p_hat,
            lambda,
            eta,
            mask,
        } => {
            let (mem, p, p_hat) = (*mem, *p, *p_hat);
            let n = tape.nodes[p].value.len();
            if let Some(gm) = acc(tape, grads, mem) {
                for i in 0..n {
                    let cs = mask.as_ref().map_or(0, |m| m.col_start[i]);
                    axpy(
                        *lambda,
                        &g[i * n + cs..(i + 1) * n],
                        &mut gm[i * n + cs..(i + 1) * n],
                    );
                }
            }
            let p_needs = tape.nodes[p].needs_grad;
            let ph_needs = tape.nodes[p_hat].needs_grad;
            if p_needs || ph_needs {
                let pv = &tape.nodes[p].value;
                let qv = &tape.nodes[p_hat].value;
                let mut du = vec![0.0; n];
                let mut dw = vec![0.0; n];
                for i in 0..n {
                    let cs = mask.as_ref().map_or(0, |m| m.col_start[i]);
                    let grow = &g[i * n + cs..(i + 1) * n];
                    let mut s = 0.0;
                    for ((gj, &p_j), &q_j) in grow.iter().zip(&pv[cs..]).zip(&qv[cs..]) {
                        s += gj * (p_j + q_j);
                    }
                    du[i] = eta * s;
                    let u_i = eta * (pv[i] - qv[i]);
                    if u_i != 0.0 {
                        axpy(u_i, grow, &mut dw[cs..]);
                    }
                }
                if p_needs {
                    let gp = acc(tape, grads, p).expect("needs_grad");
                    for ((gp_i, &du_i), &dw_i) in gp.iter_mut().zip(&du).zip(&dw) {
                        *gp_i += du_i + dw_i;
                    }
                }
                if ph_needs {
                    let gq = acc(tape, grads, p_hat).expect("needs_grad");
                    for ((gq_i, &du_i), &dw_i) in gq.iter_mut().zip(&du).zip(&dw) {
                        *gq_i += dw_i - du_i;
                    }
                }
            }
        }
    }
}

fn unary_from_output(
    tape: &Tape,
    grads: &mut [Option<Vec<f64>>],
    input: usize,
    output: usize,
    g: &[f64],
    dydx_from_y: impl Fn(f64) -> f64,
) {
    let yv = &tape.nodes[output].value;
    if let Some(ga) = acc(tape, grads, input) {
        for ((ga_i, &g_i), &y) in ga.iter_mut().zip(g).zip(yv) {
            *ga_i += g_i * dydx_from_y(y);
        }
    }
}

fn axpy(k: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (y_i, &x_i) in y.iter_mut().zip(x) {
        *y_i += k * x_i;
    }
}
