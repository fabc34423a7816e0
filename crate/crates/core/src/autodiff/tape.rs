use std::sync::Arc;

use thiserror::Error;

use super::ops;

/// Shape of a tape value: scalar, vector, or row-major matrix.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Shape {
    Scalar,
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Scalar => 1,
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Handle to a value on a [`Tape`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Var {
    pub(crate) id: usize,
}

#[derive(Debug, Error)]
pub enum TapeError {
    #[error("backward requires a scalar loss, got {0:?}")]
    NonScalarLoss(Shape),
    #[error("non-finite value produced by {op} (node {node})")]
    NonFinite { op: &'static str, node: usize },
}

/// Row-suffix sparsity pattern: row `i` may hold nonzeros only in columns
/// `col_start[i]..cols`. Captures the block-upper-triangular connectivity of
/// the hierarchical memory matrix.
#[derive(Clone, Debug)]
pub struct SuffixMask {
    pub col_start: Arc<Vec<usize>>,
    pub cols: usize,
}

impl SuffixMask {
    pub fn new(col_start: Vec<usize>, cols: usize) -> Self {
        assert!(col_start.iter().all(|&c| c <= cols));
        SuffixMask {
            col_start: Arc::new(col_start),
            cols,
        }
    }

    pub fn rows(&self) -> usize {
        self.col_start.len()
    }

    /// Dense 0/1 view, row-major.
    pub fn dense(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.rows() * self.cols];
        for (i, &cs) in self.col_start.iter().enumerate() {
            for j in cs..self.cols {
                m[i * self.cols + j] = 1.0;
            }
        }
        m
    }

    pub fn allows(&self, row: usize, col: usize) -> bool {
        col >= self.col_start[row]
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf { requires_grad: bool },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddConst(usize),
    MulScalar { vec: usize, scalar: usize },
    MatVec {
        mat: usize,
        vec: usize,
        mask: Option<SuffixMask>,
    },
    MatMul(usize, usize),
    Outer(usize, usize),
    Dot(usize, usize),
    Sum(usize),
    Relu(usize),
    LeakyRelu(usize, f64),
    ClampPm1(usize),
    Tanh(usize),
    Sigmoid(usize),
    Softplus(usize),
    Exp(usize),
    Recip(usize),
    Demean(usize),
    L2Normalize(usize),
    L2Norm(usize),
    SoftmaxCrossEntropy { logits: usize, target: usize },
    SquaredError(usize, usize),
    Concat(Vec<usize>),
    SumChunks { input: usize, chunk: usize },
    Slice { input: usize, start: usize, len: usize },
    Tile { input: usize, reps: usize },
    RepeatEach { input: usize, reps: usize },
    StopGradient(usize),
    ScatterSuffix { input: usize, mask: SuffixMask },
    HebbianStore {
        mem: usize,
        p: usize,
        p_hat: usize,
        lambda: f64,
        eta: f64,
        mask: Option<SuffixMask>,
    },
}

pub(crate) struct Node {
    pub op: Op,
    pub shape: Shape,
    pub value: Vec<f64>,
    pub needs_grad: bool,
}

/// Recorded computation: ops in insertion order with eagerly computed values.
#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
}

/// Result of a backward pass: per-node gradient arrays. Gradients are kept
/// for leaves that require them; interior buffers are dropped as they are
/// consumed.
pub struct Gradients {
    pub(crate) grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.id).and_then(|g| g.as_deref())
    }

    pub fn get_scalar(&self, var: Var) -> Option<f64> {
        self.get(var).map(|g| g[0])
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &[f64] {
        &self.nodes[var.id].value
    }

    pub fn value_scalar(&self, var: Var) -> f64 {
        debug_assert_eq!(self.shape(var), Shape::Scalar);
        self.nodes[var.id].value[0]
    }

    pub fn shape(&self, var: Var) -> Shape {
        self.nodes[var.id].shape
    }

    pub fn all_finite(&self, var: Var) -> bool {
        self.nodes[var.id].value.iter().all(|v| v.is_finite())
    }

    fn push(&mut self, op: Op, shape: Shape, value: Vec<f64>) -> Var {
        debug_assert_eq!(shape.len(), value.len());
        let needs_grad = match &op {
            Op::Leaf { requires_grad } => *requires_grad,
            Op::StopGradient(_) => false,
            other => op_inputs(other).iter().any(|&i| self.nodes[i].needs_grad),
        };
        let id = self.nodes.len();
        self.nodes.push(Node {
            op,
            shape,
            value,
            needs_grad,
        });
        Var { id }
    }

    // ---- leaves ------------------------------------------------------

    /// Constant input: no gradient is accumulated for it.
    pub fn constant(&mut self, shape: Shape, value: Vec<f64>) -> Var {
        assert_eq!(
            shape.len(),
            value.len(),
            "constant: shape {:?} does not match value length {}",
            shape,
            value.len()
        );
        self.push(
            Op::Leaf {
                requires_grad: false,
            },
            shape,
            value,
        )
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Shape::Scalar, vec![value])
    }

    /// Leaf parameter: backward accumulates and keeps its gradient.
    pub fn param(&mut self, shape: Shape, value: Vec<f64>) -> Var {
        assert_eq!(
            shape.len(),
            value.len(),
            "param: shape {:?} does not match value length {}",
            shape,
            value.len()
        );
        self.push(
            Op::Leaf {
                requires_grad: true,
            },
            shape,
            value,
        )
    }

    // ---- elementwise -------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary_elementwise("add", a, b, |x, y| x + y, Op::Add(a.id, b.id))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary_elementwise("sub", a, b, |x, y| x - y, Op::Sub(a.id, b.id))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary_elementwise("mul", a, b, |x, y| x * y, Op::Mul(a.id, b.id))
    }

    fn binary_elementwise(
        &mut self,
        name: &str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert_eq!(sa, sb, "{name}: shape mismatch {sa:?} vs {sb:?}");
        let value = self.nodes[a.id]
            .value
            .iter()
            .zip(&self.nodes[b.id].value)
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(op, sa, value)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let shape = self.shape(a);
        let value = self.nodes[a.id].value.iter().map(|&x| x * k).collect();
        self.push(Op::Scale(a.id, k), shape, value)
    }

    pub fn add_const(&mut self, a: Var, k: f64) -> Var {
        let shape = self.shape(a);
        let value = self.nodes[a.id].value.iter().map(|&x| x + k).collect();
        self.push(Op::AddConst(a.id), shape, value)
    }

    /// Multiply a vector (or matrix) elementwise by a single-element tape
    /// value (scalar or length-1 vector).
    pub fn mul_scalar(&mut self, vec: Var, scalar: Var) -> Var {
        assert_eq!(
            self.shape(scalar).len(),
            1,
            "mul_scalar: scalar operand has shape {:?}",
            self.shape(scalar)
        );
        let s = self.nodes[scalar.id].value[0];
        let shape = self.shape(vec);
        let value = self.nodes[vec.id].value.iter().map(|&x| x * s).collect();
        self.push(
            Op::MulScalar {
                vec: vec.id,
                scalar: scalar.id,
            },
            shape,
            value,
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let shape = self.shape(a);
        let value = self.nodes[a.id].value.iter().map(|&x| x.max(0.0)).collect();
        self.push(Op::Relu(a.id), shape, value)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let shape = self.shape(a);
        let value = self.nodes[a.id]
            .value
            .iter()
            .map(|&x| if x >= 0.0 { x } else { slope * x })
            .collect();
        self.push(Op::LeakyRelu(a.id, slope), shape, value)
    }

    /// Linear inside [-1, 1], clamped outside.
    pub fn clamp_pm1(&mut self, a: Var) -> Var {
        let shape = self.shape(a);
        let value = self.nodes[a.id]
            .value
            .iter()
            .map(|&x| x.clamp(-1.0, 1.0))
            .collect();
        self.push(Op::ClampPm1(a.id), shape, value)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let shape = self.shape(a);
        let value = self.nodes[a.id].value.iter().map(|&x| x.tanh()).collect();
        self.push(Op::Tanh(a.id), shape, value)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let shape = self.shape(a);
        let value = self.nodes[a.id].value.iter().map(|&x| sigmoid(x)).collect();
        self.push(Op::Sigmoid(a.id), shape, value)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let shape = self.shape(a);
        let value = self.nodes[a.id]
            .value
            .iter()
            .map(|&x| softplus(x))
            .collect();
        self.push(Op::Softplus(a.id), shape, value)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let shape = self.shape(a);
        let value = self.nodes[a.id].value.iter().map(|&x| x.exp()).collect();
        self.push(Op::Exp(a.id), shape, value)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let shape = self.shape(a);
        let value = self.nodes[a.id].value.iter().map(|&x| 1.0 / x).collect();
        self.push(Op::Recip(a.id), shape, value)
    }

    /// Subtract the mean of the vector from every component.
    pub fn demean(&mut self, a: Var) -> Var {
        let shape = self.shape(a);
        let v = &self.nodes[a.id].value;
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let value = v.iter().map(|&x| x - mean).collect();
        self.push(Op::Demean(a.id), shape, value)
    }

    /// Unit L2 normalisation; an (effectively) all-zero input maps to zero.
    pub fn l2_normalize(&mut self, a: Var) -> Var {
        let shape = self.shape(a);
        let v = &self.nodes[a.id].value;
        let norm = l2(v);
        let value = if norm <= NORM_EPS {
            vec![0.0; v.len()]
        } else {
            v.iter().map(|&x| x / norm).collect()
        };
        self.push(Op::L2Normalize(a.id), shape, value)
    }

    /// Scalar L2 norm of a vector.
    pub fn l2_norm(&mut self, a: Var) -> Var {
        let norm = l2(&self.nodes[a.id].value);
        self.push(Op::L2Norm(a.id), Shape::Scalar, vec![norm])
    }

    // ---- reductions / linear algebra ----------------------------------

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.id].value.iter().sum();
        self.push(Op::Sum(a.id), Shape::Scalar, vec![s])
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert_eq!(sa, sb, "dot: shape mismatch {sa:?} vs {sb:?}");
        let s = self.nodes[a.id]
            .value
            .iter()
            .zip(&self.nodes[b.id].value)
            .map(|(&x, &y)| x * y)
            .sum();
        self.push(Op::Dot(a.id, b.id), Shape::Scalar, vec![s])
    }

    /// Matrix-vector product (m x n) * (n) -> (m).
    pub fn matvec(&mut self, mat: Var, vec: Var) -> Var {
        self.matvec_impl(mat, vec, None)
    }

    /// Matrix-vector product where rows of `mat` are known to be zero before
    /// `mask.col_start`. Same result as [`Tape::matvec`], skips the zero
    /// prefixes.
    pub fn matvec_masked(&mut self, mat: Var, vec: Var, mask: &SuffixMask) -> Var {
        self.matvec_impl(mat, vec, Some(mask.clone()))
    }

    fn matvec_impl(&mut self, mat: Var, vec: Var, mask: Option<SuffixMask>) -> Var {
        let (rows, cols) = match self.shape(mat) {
            Shape::Matrix(r, c) => (r, c),
            s => panic!("matvec: left operand must be a matrix, got {s:?}"),
        };
        let n = match self.shape(vec) {
            Shape::Vector(n) => n,
            s => panic!("matvec: right operand must be a vector, got {s:?}"),
        };
        assert_eq!(cols, n, "matvec: inner dimensions differ ({cols} vs {n})");
        if let Some(m) = &mask {
            assert_eq!(m.rows(), rows, "matvec: mask row count mismatch");
            assert_eq!(m.cols, cols, "matvec: mask column count mismatch");
        }
        let m = &self.nodes[mat.id].value;
        let x = &self.nodes[vec.id].value;
        let mut y = vec![0.0; rows];
        for (i, yi) in y.iter_mut().enumerate() {
            let cs = mask.as_ref().map_or(0, |m| m.col_start[i]);
            *yi = dot_slice(&m[i * cols + cs..(i + 1) * cols], &x[cs..]);
        }
        self.push(
            Op::MatVec {
                mat: mat.id,
                vec: vec.id,
                mask,
            },
            Shape::Vector(rows),
            y,
        )
    }

    /// Row-major matrix product (m x k) * (k x n) -> (m x n).
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = match self.shape(a) {
            Shape::Matrix(r, c) => (r, c),
            s => panic!("matmul: left operand must be a matrix, got {s:?}"),
        };
        let (k2, n) = match self.shape(b) {
            Shape::Matrix(r, c) => (r, c),
            s => panic!("matmul: right operand must be a matrix, got {s:?}"),
        };
        assert_eq!(k, k2, "matmul: inner dimensions differ ({k} vs {k2})");
        let av = &self.nodes[a.id].value;
        let bv = &self.nodes[b.id].value;
        let mut y = vec![0.0; m * n];
        for i in 0..m {
            for l in 0..k {
                let a_il = av[i * k + l];
                if a_il == 0.0 {
                    continue;
                }
                let brow = &bv[l * n..(l + 1) * n];
                let yrow = &mut y[i * n..(i + 1) * n];
                for (yj, &bj) in yrow.iter_mut().zip(brow) {
                    *yj += a_il * bj;
                }
            }
        }
        self.push(Op::MatMul(a.id, b.id), Shape::Matrix(m, n), y)
    }

    /// Outer product of two vectors -> (m x n) matrix.
    pub fn outer(&mut self, a: Var, b: Var) -> Var {
        let m = match self.shape(a) {
            Shape::Vector(n) => n,
            s => panic!("outer: left operand must be a vector, got {s:?}"),
        };
        let n = match self.shape(b) {
            Shape::Vector(n) => n,
            s => panic!("outer: right operand must be a vector, got {s:?}"),
        };
        let av = &self.nodes[a.id].value;
        let bv = &self.nodes[b.id].value;
        let mut y = vec![0.0; m * n];
        for i in 0..m {
            let ai = av[i];
            for j in 0..n {
                y[i * n + j] = ai * bv[j];
            }
        }
        self.push(Op::Outer(a.id, b.id), Shape::Matrix(m, n), y)
    }

    // ---- structural ----------------------------------------------------

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat: empty part list");
        let mut value = Vec::new();
        for &p in parts {
            match self.shape(p) {
                Shape::Vector(_) | Shape::Scalar => {}
                s => panic!("concat: parts must be vectors or scalars, got {s:?}"),
            }
            value.extend_from_slice(&self.nodes[p.id].value);
        }
        let n = value.len();
        self.push(
            Op::Concat(parts.iter().map(|v| v.id).collect()),
            Shape::Vector(n),
            value,
        )
    }

    /// Sum consecutive chunks of length `chunk`: out[i] = sum of
    /// in[i*chunk .. (i+1)*chunk].
    pub fn sum_chunks(&mut self, a: Var, chunk: usize) -> Var {
        let n = match self.shape(a) {
            Shape::Vector(n) => n,
            s => panic!("sum_chunks: operand must be a vector, got {s:?}"),
        };
        assert!(chunk >= 1, "sum_chunks: chunk must be >= 1");
        assert_eq!(n % chunk, 0, "sum_chunks: length {n} not divisible by {chunk}");
        let value: Vec<f64> = self.nodes[a.id]
            .value
            .chunks_exact(chunk)
            .map(|c| c.iter().sum())
            .collect();
        self.push(
            Op::SumChunks {
                input: a.id,
                chunk,
            },
            Shape::Vector(n / chunk),
            value,
        )
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let n = match self.shape(a) {
            Shape::Vector(n) => n,
            s => panic!("slice: operand must be a vector, got {s:?}"),
        };
        assert!(
            start + len <= n,
            "slice: range {start}..{} out of bounds for length {n}",
            start + len
        );
        let value = self.nodes[a.id].value[start..start + len].to_vec();
        self.push(
            Op::Slice {
                input: a.id,
                start,
                len,
            },
            Shape::Vector(len),
            value,
        )
    }

    /// Repeat the whole vector `reps` times: [a b], 3 -> [a b a b a b].
    pub fn tile(&mut self, a: Var, reps: usize) -> Var {
        let n = match self.shape(a) {
            Shape::Vector(n) => n,
            s => panic!("tile: operand must be a vector, got {s:?}"),
        };
        assert!(reps >= 1, "tile: reps must be >= 1");
        let src = &self.nodes[a.id].value;
        let mut value = Vec::with_capacity(n * reps);
        for _ in 0..reps {
            value.extend_from_slice(src);
        }
        self.push(
            Op::Tile {
                input: a.id,
                reps,
            },
            Shape::Vector(n * reps),
            value,
        )
    }

    /// Repeat each element `reps` times: [a b], 3 -> [a a a b b b].
    pub fn repeat_each(&mut self, a: Var, reps: usize) -> Var {
        let n = match self.shape(a) {
            Shape::Vector(n) => n,
            Shape::Scalar => 1,
            s => panic!("repeat_each: operand must be a vector or scalar, got {s:?}"),
        };
        assert!(reps >= 1, "repeat_each: reps must be >= 1");
        let src = &self.nodes[a.id].value;
        let mut value = Vec::with_capacity(n * reps);
        for &x in src.iter() {
            for _ in 0..reps {
                value.push(x);
            }
        }
        self.push(
            Op::RepeatEach {
                input: a.id,
                reps,
            },
            Shape::Vector(n * reps),
            value,
        )
    }

    /// Build a matrix whose masked-out entries are structurally zero from a
    /// packed vector of the allowed entries, row by row.
    pub fn scatter_suffix(&mut self, packed: Var, mask: &SuffixMask) -> Var {
        let n = match self.shape(packed) {
            Shape::Vector(n) => n,
            s => panic!("scatter_suffix: packed input must be a vector, got {s:?}"),
        };
        let expected: usize = mask.col_start.iter().map(|&cs| mask.cols - cs).sum();
        assert_eq!(
            n, expected,
            "scatter_suffix: packed length {n} does not match {expected} allowed entries"
        );
        let rows = mask.rows();
        let cols = mask.cols;
        let src = &self.nodes[packed.id].value;
        let mut out = vec![0.0; rows * cols];
        let mut k = 0;
        for (i, &cs) in mask.col_start.iter().enumerate() {
            let len = cols - cs;
            out[i * cols + cs..(i + 1) * cols].copy_from_slice(&src[k..k + len]);
            k += len;
        }
        self.push(
            Op::ScatterSuffix {
                input: packed.id,
                mask: mask.clone(),
            },
            Shape::Matrix(rows, cols),
            out,
        )
    }

    /// Identity in the forward pass; contributes zero gradient to ancestors.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let shape = self.shape(a);
        let value = self.nodes[a.id].value.clone();
        self.push(Op::StopGradient(a.id), shape, value)
    }

    // ---- fused losses / memory ops -------------------------------------

    /// log-sum-exp stabilised cross-entropy of `logits` against class `target`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: usize) -> Var {
        let n = match self.shape(logits) {
            Shape::Vector(n) => n,
            s => panic!("softmax_cross_entropy: logits must be a vector, got {s:?}"),
        };
        assert!(
            target < n,
            "softmax_cross_entropy: target {target} out of range for {n} classes"
        );
        let v = &self.nodes[logits.id].value;
        let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + v.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
        let loss = lse - v[target];
        self.push(
            Op::SoftmaxCrossEntropy {
                logits: logits.id,
                target,
            },
            Shape::Scalar,
            vec![loss],
        )
    }

    /// Sum of squared componentwise differences.
    pub fn squared_error(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert_eq!(sa, sb, "squared_error: shape mismatch {sa:?} vs {sb:?}");
        let s = self.nodes[a.id]
            .value
            .iter()
            .zip(&self.nodes[b.id].value)
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        self.push(Op::SquaredError(a.id, b.id), Shape::Scalar, vec![s])
    }

    /// Fast-weight update `M' = lambda*M + eta*(p - p_hat)(p + p_hat)^T`,
    /// restricted to `mask` when given. Masked entries of the result are
    /// exactly zero and receive no gradient.
    pub fn hebbian_store(
        &mut self,
        mem: Var,
        p: Var,
        p_hat: Var,
        lambda: f64,
        eta: f64,
        mask: Option<&SuffixMask>,
    ) -> Var {
        let (rows, cols) = match self.shape(mem) {
            Shape::Matrix(r, c) => (r, c),
            s => panic!("hebbian_store: memory must be a matrix, got {s:?}"),
        };
        assert_eq!(rows, cols, "hebbian_store: memory must be square");
        for (name, v) in [("p", p), ("p_hat", p_hat)] {
            match self.shape(v) {
                Shape::Vector(n) if n == rows => {}
                s => panic!("hebbian_store: {name} must be a vector of length {rows}, got {s:?}"),
            }
        }
        if let Some(m) = mask {
            assert_eq!(m.rows(), rows, "hebbian_store: mask row count mismatch");
            assert_eq!(m.cols, cols, "hebbian_store: mask column count mismatch");
        }
        let pv = &self.nodes[p.id].value;
        let qv = &self.nodes[p_hat.id].value;
        let u: Vec<f64> = pv.iter().zip(qv).map(|(&a, &b)| a - b).collect();
        let w: Vec<f64> = pv.iter().zip(qv).map(|(&a, &b)| a + b).collect();
        let mv = &self.nodes[mem.id].value;
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            let cs = mask.map_or(0, |m| m.col_start[i]);
            let ui = eta * u[i];
            let src = &mv[i * cols + cs..(i + 1) * cols];
            let dst = &mut out[i * cols + cs..(i + 1) * cols];
            for ((d, &m_ij), &w_j) in dst.iter_mut().zip(src).zip(&w[cs..]) {
                *d = lambda * m_ij + ui * w_j;
            }
        }
        self.push(
            Op::HebbianStore {
                mem: mem.id,
                p: p.id,
                p_hat: p_hat.id,
                lambda,
                eta,
                mask: mask.cloned(),
            },
            Shape::Matrix(rows, cols),
            out,
        )
    }

    // ---- backward -------------------------------------------------------

    /// Reverse pass from a scalar loss. Returns gradients for every leaf
    /// created with `param`; interior buffers are freed as they are consumed.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TapeError> {
        let shape = self.shape(loss);
        if shape != Shape::Scalar {
            return Err(TapeError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            if !self.nodes[id].needs_grad {
                grads[id] = None;
                continue;
            }
            let Some(grad) = grads[id].take() else {
                continue;
            };
            ops::backward_step(self, id, &grad, &mut grads);
            if matches!(
                self.nodes[id].op,
                Op::Leaf {
                    requires_grad: true
                }
            ) {
                grads[id] = Some(grad);
            }
        }
        Ok(Gradients { grads })
    }
}

pub(crate) const NORM_EPS: f64 = 1e-12;

pub(crate) fn l2(v: &[f64]) -> f64 {
    v.iter().map(|&x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot_slice(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (xa, xb) in ca.zip(cb) {
        acc[0] += xa[0] * xb[0];
        acc[1] += xa[1] * xb[1];
        acc[2] += xa[2] * xb[2];
        acc[3] += xa[3] * xb[3];
    }
    let mut s = acc[0] + acc[1] + acc[2] + acc[3];
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn op_inputs(op: &Op) -> Vec<usize> {
    match op {
        Op::Leaf { .. } => vec![],
        Op::Add(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b)
        | Op::Dot(a, b)
        | Op::MatMul(a, b)
        | Op::Outer(a, b)
        | Op::SquaredError(a, b) => vec![*a, *b],
        Op::MulScalar { vec, scalar } => vec![*vec, *scalar],
        Op::MatVec { mat, vec, .. } => vec![*mat, *vec],
        Op::Scale(a, _)
        | Op::AddConst(a)
        | Op::Sum(a)
        | Op::Relu(a)
        | Op::LeakyRelu(a, _)
        | Op::ClampPm1(a)
        | Op::Tanh(a)
        | Op::Sigmoid(a)
        | Op::Softplus(a)
        | Op::Exp(a)
        | Op::Recip(a)
        | Op::Demean(a)
        | Op::L2Normalize(a)
        | Op::L2Norm(a)
        | Op::StopGradient(a) => vec![*a],
        Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
        Op::Concat(parts) => parts.clone(),
        Op::Slice { input, .. }
        | Op::Tile { input, .. }
        | Op::RepeatEach { input, .. }
        | Op::SumChunks { input, .. }
        | Op::ScatterSuffix { input, .. } => {
            vec![*input]
        }
        Op::HebbianStore { mem, p, p_hat, .. } => vec![*mem, *p, *p_hat],
    }
}
