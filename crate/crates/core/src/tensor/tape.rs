//! Reverse-mode tape over 2-D values.
//!
//! Each forward pass records onto a fresh [`Tape`]; [`Tape::backward`] walks
//! the records once in reverse and the tape is dropped afterwards. Values are
//! `rows x cols` row-major blocks; scalars are `1 x 1`.
//!
//! Shape misuse inside the graph is a programming error and panics. Shape
//! errors that depend on caller data are checked at module boundaries
//! (see [`super::Mlp::forward`]).

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use super::{Tensor, TensorError};
use crate::real::{gemm, MatView, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Minimum(Var, Var),
    MulScalarVar(Var, Var),
    MulCol(Var, Var),
    DivCol(Var, Var),
    Scale(Var, F),
    AddScalar(Var),
    Neg(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Square(Var),
    Sqrt(Var),
    Clamp(Var, F, F),
    SumCols(Var),
    Sum(Var),
    Mean(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    LogSoftmax(Var),
    PickCols(Var, Vec<usize>),
    Detach,
}

#[derive(Debug)]
struct Node<F> {
    value: Vec<F>,
    rows: usize,
    cols: usize,
    op: Op<F>,
    needs_grad: bool,
    param: Option<u64>,
}

#[derive(Debug, Default)]
pub struct Tape<F = f32> {
    nodes: Vec<Node<F>>,
}

/// Gradients produced by one backward pass.
#[derive(Debug)]
pub struct Gradients<F> {
    nodes: Vec<Option<Vec<F>>>,
    params: BTreeMap<u64, Vec<F>>,
}

impl<F: Real> Gradients<F> {
    /// Gradient w.r.t. a graph value, if the loss depended on it.
    pub fn of(&self, v: Var) -> Option<&[F]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }

    /// Summed gradient for a parameter tensor id across all its leaves.
    pub fn param(&self, id: u64) -> Option<&[F]> {
        self.params.get(&id).map(|g| g.as_slice())
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<F>, rows: usize, cols: usize, op: Op<F>, needs_grad: bool) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node { value, rows, cols, op, needs_grad, param: None });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<F> {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &[F] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    pub fn scalar(&self, v: Var) -> F {
        let n = self.node(v);
        assert_eq!(n.value.len(), 1, "scalar() on a non-scalar value");
        n.value[0]
    }

    /// Constant input block; never receives gradient.
    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<F>) -> Var {
        assert_eq!(data.len(), rows * cols, "constant: data does not fill {rows}x{cols}");
        self.push(data, rows, cols, Op::Leaf, false)
    }

    pub fn scalar_const(&mut self, x: F) -> Var {
        self.constant(1, 1, vec![x])
    }

    /// Differentiable input block that is not a parameter (used by tests and
    /// gradient checks w.r.t. inputs).
    pub fn variable(&mut self, rows: usize, cols: usize, data: Vec<F>) -> Var {
        assert_eq!(data.len(), rows * cols);
        self.push(data, rows, cols, Op::Leaf, true)
    }

    /// Binds a parameter tensor. Gradient is tracked only if `track` is set and
    /// the tensor requires grad; otherwise it enters as a constant.
    pub fn param(&mut self, t: &Tensor<F>, track: bool) -> Var {
        let cols = t.cols();
        let rows = t.rows();
        let tracked = track && t.requires_grad();
        let v = self.push(t.data().to_vec(), rows, cols, Op::Leaf, tracked);
        if tracked {
            self.nodes[v.0].param = Some(t.id());
        }
        v
    }

    fn unary(&mut self, a: Var, op: Op<F>, f: impl Fn(F) -> F) -> Var {
        let n = self.node(a);
        let (rows, cols, ng) = (n.rows, n.cols, n.needs_grad);
        let value = n.value.iter().map(|&x| f(x)).collect();
        self.push(value, rows, cols, op, ng)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op<F>, name: &str, f: impl Fn(F, F) -> F) -> Var {
        let (na, nb) = (self.node(a), self.node(b));
        assert!(
            na.rows == nb.rows && na.cols == nb.cols,
            "{name}: shape {}x{} vs {}x{}",
            na.rows,
            na.cols,
            nb.rows,
            nb.cols
        );
        let value = na.value.iter().zip(&nb.value).map(|(&x, &y)| f(x, y)).collect();
        let (rows, cols, ng) = (na.rows, na.cols, na.needs_grad || nb.needs_grad);
        self.push(value, rows, cols, op, ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (na, nb) = (self.node(a), self.node(b));
        assert_eq!(na.cols, nb.rows, "matmul: inner dims {} vs {}", na.cols, nb.rows);
        let (m, k, n) = (na.rows, na.cols, nb.cols);
        let mut out = vec![F::zero(); m * n];
        gemm(m, k, n, MatView::rows(&na.value, k), MatView::rows(&nb.value, n), F::zero(), &mut out);
        let ng = na.needs_grad || nb.needs_grad;
        self.push(out, m, n, Op::MatMul(a, b), ng)
    }

    /// Adds a `1 x cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (na, nb) = (self.node(a), self.node(row));
        assert_eq!(nb.value.len(), na.cols, "add_row: bias width");
        let cols = na.cols;
        let mut out = na.value.clone();
        for chunk in out.chunks_mut(cols) {
            for (x, &b) in chunk.iter_mut().zip(&nb.value) {
                *x = *x + b;
            }
        }
        let ng = na.needs_grad || nb.needs_grad;
        let rows = na.rows;
        self.push(out, rows, cols, Op::AddRow(a, row), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Div(a, b), "div", |x, y| x / y)
    }

    /// Element-wise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Minimum(a, b), "minimum", |x, y| if y < x { y } else { x })
    }

    /// Multiplies every element by a `1 x 1` value.
    pub fn mul_scalar_var(&mut self, a: Var, s: Var) -> Var {
        let sv = {
            let ns = self.node(s);
            assert_eq!(ns.value.len(), 1, "mul_scalar_var: scale must be 1x1");
            ns.value[0]
        };
        let ng = self.node(a).needs_grad || self.node(s).needs_grad;
        let n = self.node(a);
        let (rows, cols) = (n.rows, n.cols);
        let value = n.value.iter().map(|&x| x * sv).collect();
        self.push(value, rows, cols, Op::MulScalarVar(a, s), ng)
    }

    fn col_broadcast(&mut self, a: Var, c: Var, div: bool) -> Var {
        let (na, nc) = (self.node(a), self.node(c));
        assert!(nc.cols == 1 && nc.rows == na.rows, "column broadcast: need {}x1", na.rows);
        let cols = na.cols;
        let mut out = na.value.clone();
        for (chunk, &s) in out.chunks_mut(cols.max(1)).zip(&nc.value) {
            for x in chunk.iter_mut() {
                *x = if div { *x / s } else { *x * s };
            }
        }
        let ng = na.needs_grad || nc.needs_grad;
        let rows = na.rows;
        let op = if div { Op::DivCol(a, c) } else { Op::MulCol(a, c) };
        self.push(out, rows, cols, op, ng)
    }

    /// Scales each row of `a` by the matching entry of the `rows x 1` column `c`.
    pub fn mul_col(&mut self, a: Var, c: Var) -> Var {
        self.col_broadcast(a, c, false)
    }

    pub fn div_col(&mut self, a: Var, c: Var) -> Var {
        self.col_broadcast(a, c, true)
    }

    pub fn scale(&mut self, a: Var, s: F) -> Var {
        self.unary(a, Op::Scale(a, s), |x| x * s)
    }

    pub fn add_scalar(&mut self, a: Var, s: F) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + s)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, Op::Neg(a), |x| -x)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), |x| x.tanh())
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| if x > F::zero() { x } else { F::zero() })
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), |x| x.exp())
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), |x| x.ln())
    }

    /// `ln(1 + e^x)`, computed stably.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a), |x| x.sqrt())
    }

    /// Clamps into `[lo, hi]`; gradient passes where the input lies inside.
    pub fn clamp(&mut self, a: Var, lo: F, hi: F) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.max(lo).min(hi))
    }

    /// Row sums, `rows x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let n = self.node(a);
        let (rows, cols, ng) = (n.rows, n.cols, n.needs_grad);
        let value = n.value.chunks(cols.max(1)).map(|r| r.iter().copied().sum()).collect();
        self.push(value, rows, 1, Op::SumCols(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let n = self.node(a);
        let s = n.value.iter().copied().sum();
        let ng = n.needs_grad;
        self.push(vec![s], 1, 1, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.node(a);
        assert!(!n.value.is_empty(), "mean of empty value");
        let s: F = n.value.iter().copied().sum();
        let m = s / F::from_usize(n.value.len()).unwrap();
        let ng = n.needs_grad;
        self.push(vec![m], 1, 1, Op::Mean(a), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.node(parts[0]).rows;
        let total: usize = parts
            .iter()
            .map(|&p| {
                let n = self.node(p);
                assert_eq!(n.rows, rows, "concat_cols: row mismatch");
                n.cols
            })
            .sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let n = self.node(p);
                out.extend_from_slice(&n.value[r * n.cols..(r + 1) * n.cols]);
            }
        }
        let ng = parts.iter().any(|&p| self.node(p).needs_grad);
        self.push(out, rows, total, Op::ConcatCols(parts.to_vec()), ng)
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let n = self.node(a);
        assert!(start <= end && end <= n.cols, "slice_cols: {start}..{end} of {}", n.cols);
        let width = end - start;
        let mut out = Vec::with_capacity(n.rows * width);
        for r in n.value.chunks(n.cols.max(1)) {
            out.extend_from_slice(&r[start..end]);
        }
        let (rows, ng) = (n.rows, n.needs_grad);
        self.push(out, rows, width, Op::SliceCols(a, start), ng)
    }

    /// Row lookup: output row `j` is `table[idx[j]]`.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Var {
        let n = self.node(table);
        let cols = n.cols;
        let mut out = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            assert!(i < n.rows, "gather_rows: index {i} of {}", n.rows);
            out.extend_from_slice(&n.value[i * cols..(i + 1) * cols]);
        }
        let ng = n.needs_grad;
        self.push(out, idx.len(), cols, Op::GatherRows(table, idx.to_vec()), ng)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let n = self.node(a);
        let cols = n.cols;
        let mut out = Vec::with_capacity(n.value.len());
        for r in n.value.chunks(cols) {
            let m = r.iter().copied().fold(F::neg_infinity(), F::max);
            let lse = m + r.iter().map(|&x| (x - m).exp()).sum::<F>().ln();
            out.extend(r.iter().map(|&x| x - lse));
        }
        let (rows, ng) = (n.rows, n.needs_grad);
        self.push(out, rows, cols, Op::LogSoftmax(a), ng)
    }

    /// Picks `a[j, idx[j]]` for every row, giving `rows x 1`.
    pub fn pick_cols(&mut self, a: Var, idx: &[usize]) -> Var {
        let n = self.node(a);
        assert_eq!(idx.len(), n.rows, "pick_cols: one index per row");
        let value = idx
            .iter()
            .enumerate()
            .map(|(r, &c)| {
                assert!(c < n.cols, "pick_cols: column {c} of {}", n.cols);
                n.value[r * n.cols + c]
            })
            .collect();
        let (rows, ng) = (n.rows, n.needs_grad);
        self.push(value, rows, 1, Op::PickCols(a, idx.to_vec()), ng)
    }

    /// Same value, no gradient flow.
    pub fn detach(&mut self, a: Var) -> Var {
        let n = self.node(a);
        let (rows, cols) = (n.rows, n.cols);
        let value = n.value.clone();
        self.push(value, rows, cols, Op::Detach, false)
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>, TensorError> {
        let ln = self.node(loss);
        if ln.value.len() != 1 {
            return Err(TensorError::Contract(alloc::format!(
                "backward needs a scalar loss, got {}x{}",
                ln.rows,
                ln.cols
            )));
        }
        if !ln.value[0].is_finite() {
            return Err(TensorError::NonFinite("loss"));
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let mut params: BTreeMap<u64, Vec<F>> = BTreeMap::new();
        for (node, g) in self.nodes.iter().zip(&grads) {
            if let (Some(id), Some(g)) = (node.param, g) {
                if g.iter().any(|x| !x.is_finite()) {
                    return Err(TensorError::NonFinite("parameter gradient"));
                }
                match params.get_mut(&id) {
                    Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b),
                    None => {
                        params.insert(id, g.clone());
                    }
                }
            }
        }
        Ok(Gradients { nodes: grads, params })
    }

    fn propagate(&self, node: &Node<F>, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf | Op::Detach => {}
            Op::MatMul(a, b) => {
                let (na, nb) = (self.node(*a), self.node(*b));
                let (m, k, n) = (na.rows, na.cols, nb.cols);
                if na.needs_grad {
                    let ga = slot(grads, *a, m * k);
                    gemm(m, n, k, MatView::rows(g, n), MatView::transposed(&nb.value, n), F::one(), ga);
                }
                if nb.needs_grad {
                    let gb = slot(grads, *b, k * n);
                    gemm(k, m, n, MatView::transposed(&na.value, k), MatView::rows(g, n), F::one(), gb);
                }
            }
            Op::AddRow(a, b) => {
                let cols = node.cols;
                if self.node(*a).needs_grad {
                    acc(slot(grads, *a, g.len()), g.iter().copied());
                }
                if self.node(*b).needs_grad {
                    let gb = slot(grads, *b, cols);
                    for r in g.chunks(cols) {
                        acc(gb, r.iter().copied());
                    }
                }
            }
            Op::Add(a, b) => {
                self.acc_if(grads, *a, g.iter().copied());
                self.acc_if(grads, *b, g.iter().copied());
            }
            Op::Sub(a, b) => {
                self.acc_if(grads, *a, g.iter().copied());
                self.acc_if(grads, *b, g.iter().map(|&x| -x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&self.node(*a).value, &self.node(*b).value);
                self.acc_if(grads, *a, g.iter().zip(vb).map(|(&d, &y)| d * y));
                self.acc_if(grads, *b, g.iter().zip(va).map(|(&d, &x)| d * x));
            }
            Op::Div(a, b) => {
                let (va, vb) = (&self.node(*a).value, &self.node(*b).value);
                self.acc_if(grads, *a, g.iter().zip(vb).map(|(&d, &y)| d / y));
                self.acc_if(grads, *b, g.iter().zip(va.iter().zip(vb)).map(|(&d, (&x, &y))| -d * x / (y * y)));
            }
            Op::Minimum(a, b) => {
                let (va, vb) = (&self.node(*a).value, &self.node(*b).value);
                let pick_b: Vec<bool> = va.iter().zip(vb).map(|(x, y)| y < x).collect();
                self.acc_if(grads, *a, g.iter().zip(&pick_b).map(|(&d, &pb)| if pb { F::zero() } else { d }));
                self.acc_if(grads, *b, g.iter().zip(&pick_b).map(|(&d, &pb)| if pb { d } else { F::zero() }));
            }
            Op::MulScalarVar(a, s) => {
                let sv = self.node(*s).value[0];
                self.acc_if(grads, *a, g.iter().map(|&d| d * sv));
                if self.node(*s).needs_grad {
                    let va = &self.node(*a).value;
                    let total: F = g.iter().zip(va).map(|(&d, &x)| d * x).sum();
                    acc(slot(grads, *s, 1), core::iter::once(total));
                }
            }
            Op::MulCol(a, c) | Op::DivCol(a, c) => {
                let div = matches!(node.op, Op::DivCol(..));
                let cols = node.cols.max(1);
                let (va, vc) = (&self.node(*a).value, &self.node(*c).value);
                if self.node(*a).needs_grad {
                    let it = g.chunks(cols).zip(vc).flat_map(|(r, &s)| {
                        r.iter().map(move |&d| if div { d / s } else { d * s })
                    });
                    acc(slot(grads, *a, va.len()), it);
                }
                if self.node(*c).needs_grad {
                    let it = g.chunks(cols).zip(va.chunks(cols)).zip(vc).map(|((gr, xr), &s)| {
                        let dot: F = gr.iter().zip(xr).map(|(&d, &x)| d * x).sum();
                        if div {
                            -dot / (s * s)
                        } else {
                            dot
                        }
                    });
                    acc(slot(grads, *c, vc.len()), it);
                }
            }
            Op::Scale(a, s) => self.acc_if(grads, *a, g.iter().map(|&d| d * *s)),
            Op::AddScalar(a) => self.acc_if(grads, *a, g.iter().copied()),
            Op::Neg(a) => self.acc_if(grads, *a, g.iter().map(|&d| -d)),
            Op::Tanh(a) => self.acc_if(grads, *a, g.iter().zip(y).map(|(&d, &t)| d * (F::one() - t * t))),
            Op::Relu(a) => {
                let va = &self.node(*a).value;
                self.acc_if(grads, *a, g.iter().zip(va).map(|(&d, &x)| if x > F::zero() { d } else { F::zero() }));
            }
            Op::Exp(a) => self.acc_if(grads, *a, g.iter().zip(y).map(|(&d, &e)| d * e)),
            Op::Log(a) => {
                let va = &self.node(*a).value;
                self.acc_if(grads, *a, g.iter().zip(va).map(|(&d, &x)| d / x));
            }
            Op::Softplus(a) => {
                let va = &self.node(*a).value;
                self.acc_if(grads, *a, g.iter().zip(va).map(|(&d, &x)| d * sigmoid(x)));
            }
            Op::Square(a) => {
                let va = &self.node(*a).value;
                let two = F::one() + F::one();
                self.acc_if(grads, *a, g.iter().zip(va).map(|(&d, &x)| d * two * x));
            }
            Op::Sqrt(a) => {
                let two = F::one() + F::one();
                self.acc_if(
                    grads,
                    *a,
                    g.iter().zip(y).map(|(&d, &r)| if r > F::zero() { d / (two * r) } else { F::zero() }),
                );
            }
            Op::Clamp(a, lo, hi) => {
                let va = &self.node(*a).value;
                self.acc_if(
                    grads,
                    *a,
                    g.iter().zip(va).map(|(&d, &x)| if x >= *lo && x <= *hi { d } else { F::zero() }),
                );
            }
            Op::SumCols(a) => {
                let cols = self.node(*a).cols;
                self.acc_if(grads, *a, g.iter().flat_map(|&d| core::iter::repeat_n(d, cols)));
            }
            Op::Sum(a) => {
                let n = self.node(*a).value.len();
                self.acc_if(grads, *a, core::iter::repeat_n(g[0], n));
            }
            Op::Mean(a) => {
                let n = self.node(*a).value.len();
                let d = g[0] / F::from_usize(n).unwrap();
                self.acc_if(grads, *a, core::iter::repeat_n(d, n));
            }
            Op::ConcatCols(parts) => {
                let total = node.cols;
                let mut offset = 0;
                for &p in parts {
                    let np = self.node(p);
                    let w = np.cols;
                    if np.needs_grad {
                        let it = g.chunks(total).flat_map(|r| r[offset..offset + w].iter().copied());
                        acc(slot(grads, p, np.value.len()), it);
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                let na = self.node(*a);
                if na.needs_grad {
                    let (cols, w, start) = (na.cols, node.cols, *start);
                    let ga = slot(grads, *a, na.value.len());
                    for (r, gr) in g.chunks(w.max(1)).enumerate() {
                        for (j, &d) in gr.iter().enumerate() {
                            ga[r * cols + start + j] = ga[r * cols + start + j] + d;
                        }
                    }
                }
            }
            Op::GatherRows(t, idx) => {
                let nt = self.node(*t);
                if nt.needs_grad {
                    let cols = nt.cols;
                    let gt = slot(grads, *t, nt.value.len());
                    for (j, &i) in idx.iter().enumerate() {
                        for c in 0..cols {
                            gt[i * cols + c] = gt[i * cols + c] + g[j * cols + c];
                        }
                    }
                }
            }
            Op::LogSoftmax(a) => {
                let cols = node.cols;
                let it = g.chunks(cols).zip(y.chunks(cols)).flat_map(|(gr, yr)| {
                    let gs: F = gr.iter().copied().sum();
                    gr.iter().zip(yr).map(move |(&d, &ly)| d - ly.exp() * gs)
                });
                self.acc_if(grads, *a, it);
            }
            Op::PickCols(a, idx) => {
                let na = self.node(*a);
                if na.needs_grad {
                    let cols = na.cols;
                    let ga = slot(grads, *a, na.value.len());
                    for (r, &c) in idx.iter().enumerate() {
                        ga[r * cols + c] = ga[r * cols + c] + g[r];
                    }
                }
            }
        }
    }

    fn acc_if(&self, grads: &mut [Option<Vec<F>>], v: Var, it: impl Iterator<Item = F>) {
        let n = self.node(v);
        if n.needs_grad {
            acc(slot(grads, v, n.value.len()), it);
        }
    }
}

fn slot<F: Real>(grads: &mut [Option<Vec<F>>], v: Var, len: usize) -> &mut [F] {
    grads[v.0].get_or_insert_with(|| vec![F::zero(); len])
}

fn acc<F: Real>(dst: &mut [F], it: impl Iterator<Item = F>) {
    for (d, x) in dst.iter_mut().zip(it) {
        *d = *d + x;
    }
}

pub(crate) fn softplus<F: Real>(x: F) -> F {
    // max(x, 0) + ln(1 + e^{-|x|})
    x.max(F::zero()) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn linear_gradient_is_input() {
        // loss = sum(w * x), x = [1, 2]
        let mut tape = Tape::<f64>::new();
        let w = tape.variable(1, 2, vec![0.3, -0.7]);
        let x = tape.constant(1, 2, vec![1.0, 2.0]);
        let p = tape.mul(w, x);
        let loss = tape.sum(p);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.of(w).unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn squared_offset_gradient() {
        // loss = (w - 3)^2 at w = 1 -> -4
        let mut tape = Tape::<f64>::new();
        let w = tape.variable(1, 1, vec![1.0]);
        let d = tape.add_scalar(w, -3.0);
        let loss = tape.square(d);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.of(w).unwrap(), &[-4.0]);
    }

    #[test]
    fn detached_branch_gets_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let w = tape.variable(1, 1, vec![2.0]);
        let dw = tape.detach(w);
        let sq = tape.square(dw);
        let loss = tape.add(sq, w);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.of(w).unwrap(), &[1.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::<f32>::new();
        let w = tape.variable(1, 2, vec![1.0, 2.0]);
        assert!(matches!(tape.backward(w), Err(TensorError::Contract(_))));
    }

    #[test]
    fn nan_loss_is_surfaced() {
        let mut tape = Tape::<f32>::new();
        let w = tape.variable(1, 1, vec![-1.0]);
        let l = tape.sqrt(w);
        assert_eq!(tape.backward(l).unwrap_err(), TensorError::NonFinite("loss"));
    }

    #[test]
    fn matmul_gradients_match_closed_form() {
        // L = sum(A @ B): dA = 1 @ B^T, dB = A^T @ 1
        let mut tape = Tape::<f64>::new();
        let a = tape.variable(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = tape.variable(3, 2, vec![0.5, -1.0, 2.0, 0.0, 1.0, 3.0]);
        let c = tape.matmul(a, b);
        assert_eq!(tape.value(c), &[7.5, 8.0, 18.0, 14.0]);
        let l = tape.sum(c);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.of(a).unwrap(), &[-0.5, 2.0, 4.0, -0.5, 2.0, 4.0]);
        assert_eq!(g.of(b).unwrap(), &[5.0, 5.0, 7.0, 7.0, 9.0, 9.0]);
    }

    #[test]
    fn log_softmax_rows_normalize() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(2, 3, vec![0.0, 1.0, 2.0, -5.0, 0.0, 5.0]);
        let ls = tape.log_softmax(a);
        for r in tape.value(ls).chunks(3) {
            let s: f64 = r.iter().map(|x| x.exp()).sum();
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn softplus_is_stable_at_extremes() {
        assert_abs_diff_eq!(softplus(100.0f64), 100.0, epsilon = 1e-12);
        assert!(softplus(-100.0f64) > 0.0);
        assert_abs_diff_eq!(softplus(0.0f64), 2f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn shared_parameter_gradients_accumulate() {
        let mut p = Tensor::<f64>::new(vec![1], vec![3.0]).unwrap().trainable();
        p.set_requires_grad(true);
        let mut tape = Tape::new();
        let a = tape.param(&p, true);
        let b = tape.param(&p, true);
        let l = tape.mul(a, b);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.param(p.id()).unwrap(), &[6.0]);
    }

    #[test]
    fn untracked_param_is_constant() {
        let p = Tensor::<f64>::new(vec![1], vec![3.0]).unwrap().trainable();
        let mut tape = Tape::new();
        let a = tape.param(&p, false);
        let x = tape.variable(1, 1, vec![2.0]);
        let l = tape.mul(a, x);
        let g = tape.backward(l).unwrap();
        assert!(g.param(p.id()).is_none());
        assert_eq!(g.of(x).unwrap(), &[3.0]);
    }
}
