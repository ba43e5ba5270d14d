//! Minimal reverse-mode autodiff over `f64` matrices.
//!
//! Everything downstream (encoders, transformers, fusion gates, losses) is
//! expressed through the primitives here. Values are dense 2-d arrays; row
//! vectors are `[1, n]`, scalars are `[1, 1]`. A [`Tape`] records one forward
//! pass; [`Tape::backward`] replays it in reverse and accumulates gradients
//! for every node, including leaves.
//!
//! Double precision is deliberate: the test suites check gradients against
//! central finite differences at tight tolerances, which f32 cannot sustain.

use std::sync::Arc;

use ndarray::{s, Array2, Axis};

pub type Arr = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Value {
    Owned(Arr),
    Shared(Arc<Arr>),
}

impl Value {
    fn get(&self) -> &Arr {
        match self {
            Value::Owned(a) => a,
            Value::Shared(a) => a,
        }
    }
}

/// Given (grad_out, parent_values, out_value), produce one gradient per parent.
type BackFn = Box<dyn Fn(&Arr, &[&Arr], &Arr) -> Vec<Arr>>;

struct Node {
    value: Value,
    parents: Vec<Var>,
    back: Option<BackFn>,
}

/// A recorded forward pass.
///
/// With `grad = false` (evaluation, frozen teacher) no backward closures are
/// stored; the tape degrades to a plain expression evaluator.
pub struct Tape {
    nodes: Vec<Node>,
    grad: bool,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Arr>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Arr> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Arr> {
        self.grads[v.0].take()
    }
}

impl Tape {
    pub fn new(grad: bool) -> Self {
        Tape {
            nodes: Vec::with_capacity(256),
            grad,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Arr {
        self.nodes[v.0].value.get()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let a = self.value(v);
        assert_eq!(a.dim(), (1, 1), "scalar() on non-scalar node");
        a[(0, 0)]
    }

    fn push(&mut self, value: Arr, parents: Vec<Var>, back: BackFn) -> Var {
        let node = if self.grad {
            Node {
                value: Value::Owned(value),
                parents,
                back: Some(back),
            }
        } else {
            Node {
                value: Value::Owned(value),
                parents: Vec::new(),
                back: None,
            }
        };
        self.nodes.push(node);
        Var(self.nodes.len() - 1)
    }

    /// Owned leaf. Gradients accumulate but nothing propagates further.
    pub fn leaf(&mut self, value: Arr) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            parents: Vec::new(),
            back: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Shared leaf; the array is not copied. Used for model parameters so a
    /// batch of per-record tapes can reference one parameter set.
    pub fn shared_leaf(&mut self, value: Arc<Arr>) -> Var {
        self.nodes.push(Node {
            value: Value::Shared(value),
            parents: Vec::new(),
            back: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse pass from a scalar root. Returns gradients for every node.
    pub fn backward(&self, root: Var) -> Gradients {
        assert!(self.grad, "backward on a no-grad tape");
        assert_eq!(self.value(root).dim(), (1, 1), "backward root must be scalar");
        let mut grads: Vec<Option<Arr>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Arr::ones((1, 1)));
        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            let Some(back) = &node.back else {
                continue; // leaf: keep its accumulated gradient
            };
            let Some(gout) = grads[id].take() else {
                continue;
            };
            let pvals: Vec<&Arr> = node.parents.iter().map(|p| self.nodes[p.0].value.get()).collect();
            let pgrads = back(&gout, &pvals, node.value.get());
            debug_assert_eq!(pgrads.len(), node.parents.len());
            for (p, pg) in node.parents.iter().zip(pgrads) {
                match &mut grads[p.0] {
                    Some(acc) => *acc += &pg,
                    slot => *slot = Some(pg),
                }
            }
        }
        Gradients { grads }
    }

    // ---- arithmetic -----------------------------------------------------

    /// `a · b`
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.ncols(), bv.nrows(), "matmul inner dims");
        let y = av.dot(bv);
        self.push(
            y,
            vec![a, b],
            Box::new(|dy, p, _| vec![dy.dot(&p[1].t()), p[0].t().dot(dy)]),
        )
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.ncols(), bv.ncols(), "matmul_nt inner dims");
        let y = av.dot(&bv.t());
        self.push(
            y,
            vec![a, b],
            Box::new(|dy, p, _| vec![dy.dot(p[1]), dy.t().dot(p[0])]),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a) + self.value(b);
        self.push(y, vec![a, b], Box::new(|dy, _, _| vec![dy.clone(), dy.clone()]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a) - self.value(b);
        self.push(y, vec![a, b], Box::new(|dy, _, _| vec![dy.clone(), -dy]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a) * self.value(b);
        self.push(
            y,
            vec![a, b],
            Box::new(|dy, p, _| vec![dy * p[1], dy * p[0]]),
        )
    }

    /// Elementwise `a / b`; caller keeps `b` bounded away from zero.
    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a) / self.value(b);
        self.push(
            y,
            vec![a, b],
            Box::new(|dy, p, _| vec![dy / p[1], -(dy * p[0]) / (p[1] * p[1])]),
        )
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let y = self.value(a) * c;
        self.push(y, vec![a], Box::new(move |dy, _, _| vec![dy * c]))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let y = self.value(a) + c;
        self.push(y, vec![a], Box::new(|dy, _, _| vec![dy.clone()]))
    }

    /// Broadcast add of a `[1, n]` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(row));
        assert_eq!(rv.nrows(), 1);
        assert_eq!(av.ncols(), rv.ncols());
        let y = av + rv;
        self.push(
            y,
            vec![a, row],
            Box::new(|dy, _, _| {
                let dr = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
                vec![dy.clone(), dr]
            }),
        )
    }

    /// Broadcast multiply by a `[m, 1]` column.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (av, cv) = (self.value(a), self.value(col));
        assert_eq!(cv.ncols(), 1);
        assert_eq!(av.nrows(), cv.nrows());
        let y = av * cv;
        self.push(
            y,
            vec![a, col],
            Box::new(|dy, p, _| {
                let da = dy * p[1];
                let dc = (dy * p[0]).sum_axis(Axis(1)).insert_axis(Axis(1));
                vec![da, dc]
            }),
        )
    }

    /// Multiply by a `[1, 1]` scalar node.
    pub fn mul_scalar_var(&mut self, a: Var, sc: Var) -> Var {
        let c = self.scalar(sc);
        let y = self.value(a) * c;
        self.push(
            y,
            vec![a, sc],
            Box::new(move |dy, p, _| {
                let ds = Arr::from_elem((1, 1), (dy * p[0]).sum());
                vec![dy * c, ds]
            }),
        )
    }

    /// Add a constant array (e.g. an attention mask).
    pub fn add_const(&mut self, a: Var, c: &Arr) -> Var {
        let y = self.value(a) + c;
        self.push(y, vec![a], Box::new(|dy, _, _| vec![dy.clone()]))
    }

    /// Multiply by a constant array (e.g. a dropout mask).
    pub fn mul_const(&mut self, a: Var, c: &Arr) -> Var {
        let y = self.value(a) * c;
        let cc = c.clone();
        self.push(y, vec![a], Box::new(move |dy, _, _| vec![dy * &cc]))
    }

    // ---- nonlinearities -------------------------------------------------

    pub fn relu(&mut self, a: Var) -> Var {
        let y = self.value(a).mapv(|x| x.max(0.0));
        self.push(
            y,
            vec![a],
            Box::new(|dy, p, _| {
                let mask = p[0].mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                vec![dy * &mask]
            }),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let y = self.value(a).mapv(sigmoid_f);
        self.push(
            y,
            vec![a],
            Box::new(|dy, _, y| vec![dy * &y.mapv(|s| s * (1.0 - s))]),
        )
    }

    /// Elementwise square root; caller keeps inputs strictly positive.
    pub fn sqrt(&mut self, a: Var) -> Var {
        let y = self.value(a).mapv(f64::sqrt);
        self.push(
            y,
            vec![a],
            Box::new(|dy, _, y| vec![dy / (y * 2.0)]),
        )
    }

    /// `min(a, 1)` elementwise; the derivative at the kink is taken as 0.
    pub fn clamp_max_one(&mut self, a: Var) -> Var {
        let y = self.value(a).mapv(|x| x.min(1.0));
        self.push(
            y,
            vec![a],
            Box::new(|dy, p, _| {
                let mask = p[0].mapv(|x| if x < 1.0 { 1.0 } else { 0.0 });
                vec![dy * &mask]
            }),
        )
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let y = softmax_rows_f(self.value(a));
        self.push(
            y,
            vec![a],
            Box::new(|dy, _, y| {
                let dot = (dy * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                vec![(dy - &dot) * y]
            }),
        )
    }

    /// Row-wise log-sum-exp, `[m, n] -> [m, 1]`.
    pub fn logsumexp_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut y = Arr::zeros((av.nrows(), 1));
        for (i, row) in av.rows().into_iter().enumerate() {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let s: f64 = row.iter().map(|&x| (x - m).exp()).sum();
            y[(i, 0)] = m + s.ln();
        }
        self.push(
            y,
            vec![a],
            Box::new(|dy, p, y| {
                // d lse / dx = softmax(x) = exp(x - lse)
                let sm = p[0] - y; // broadcast [m,1] over columns
                let sm = sm.mapv(f64::exp);
                vec![&sm * dy]
            }),
        )
    }

    /// Row-wise layer norm with learned `gamma`, `beta` (`[1, n]` each).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let n = xv.ncols() as f64;
        let mean = xv.mean_axis(Axis(1)).unwrap().insert_axis(Axis(1));
        let var = xv.var_axis(Axis(1), 0.0).insert_axis(Axis(1));
        let sigma = var.mapv(|v| (v + eps).sqrt());
        let xhat = (xv - &mean) / &sigma;
        let y = &xhat * self.value(gamma) + self.value(beta);
        self.push(
            y,
            vec![x, gamma, beta],
            Box::new(move |dy, p, _| {
                let xv = p[0];
                let gv = p[1];
                let mean = xv.mean_axis(Axis(1)).unwrap().insert_axis(Axis(1));
                let var = xv.var_axis(Axis(1), 0.0).insert_axis(Axis(1));
                let sigma = var.mapv(|v| (v + eps).sqrt());
                let xhat = (xv - &mean) / &sigma;
                let dxhat = dy * gv;
                let m1 = dxhat.mean_axis(Axis(1)).unwrap().insert_axis(Axis(1));
                let m2 = (&dxhat * &xhat).mean_axis(Axis(1)).unwrap().insert_axis(Axis(1));
                let dx = (&dxhat - &m1 - &xhat * &m2) / &sigma;
                let dgamma = (dy * &xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                let dbeta = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
                let _ = n;
                vec![dx, dgamma, dbeta]
            }),
        )
    }

    /// Rows scaled to unit L2 norm. Caller guards against zero rows.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let norms = row_norms(av);
        let y = av / &norms;
        self.push(
            y,
            vec![a],
            Box::new(|dy, p, y| {
                let norms = row_norms(p[0]);
                let dot = (dy * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                vec![(dy - y * &dot) / &norms]
            }),
        )
    }

    /// Row L2 norms, `[m, n] -> [m, 1]`. Caller guards against zero rows.
    pub fn rows_l2norm(&mut self, a: Var) -> Var {
        let y = row_norms(self.value(a));
        self.push(
            y,
            vec![a],
            Box::new(|dy, p, y| vec![(p[0] / y) * dy]),
        )
    }

    // ---- shape ops ------------------------------------------------------

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let ncols = self.value(parts[0]).ncols();
        let total: usize = parts.iter().map(|&v| self.value(v).nrows()).collect::<Vec<_>>().iter().sum();
        let mut y = Arr::zeros((total, ncols));
        let mut offsets = Vec::with_capacity(parts.len());
        let mut at = 0;
        for &v in parts {
            let pv = self.value(v);
            assert_eq!(pv.ncols(), ncols);
            let r = pv.nrows();
            y.slice_mut(s![at..at + r, ..]).assign(pv);
            offsets.push((at, r));
            at += r;
        }
        self.push(
            y,
            parts.to_vec(),
            Box::new(move |dy, _, _| {
                offsets
                    .iter()
                    .map(|&(at, r)| dy.slice(s![at..at + r, ..]).to_owned())
                    .collect()
            }),
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let nrows = self.value(parts[0]).nrows();
        let total: usize = parts.iter().map(|&v| self.value(v).ncols()).sum();
        let mut y = Arr::zeros((nrows, total));
        let mut offsets = Vec::with_capacity(parts.len());
        let mut at = 0;
        for &v in parts {
            let pv = self.value(v);
            assert_eq!(pv.nrows(), nrows);
            let c = pv.ncols();
            y.slice_mut(s![.., at..at + c]).assign(pv);
            offsets.push((at, c));
            at += c;
        }
        self.push(
            y,
            parts.to_vec(),
            Box::new(move |dy, _, _| {
                offsets
                    .iter()
                    .map(|&(at, c)| dy.slice(s![.., at..at + c]).to_owned())
                    .collect()
            }),
        )
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        let (rows, cols) = av.dim();
        assert!(start + len <= rows);
        let y = av.slice(s![start..start + len, ..]).to_owned();
        self.push(
            y,
            vec![a],
            Box::new(move |dy, _, _| {
                let mut da = Arr::zeros((rows, cols));
                da.slice_mut(s![start..start + len, ..]).assign(dy);
                vec![da]
            }),
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        let (rows, cols) = av.dim();
        assert!(start + len <= cols);
        let y = av.slice(s![.., start..start + len]).to_owned();
        self.push(
            y,
            vec![a],
            Box::new(move |dy, _, _| {
                let mut da = Arr::zeros((rows, cols));
                da.slice_mut(s![.., start..start + len]).assign(dy);
                vec![da]
            }),
        )
    }

    /// Gather rows of `table` by index, with repeats allowed; the backward
    /// pass scatter-adds, which is exactly embedding-lookup gradient.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Var {
        let tv = self.value(table);
        let (rows, cols) = tv.dim();
        let mut y = Arr::zeros((idx.len(), cols));
        for (i, &r) in idx.iter().enumerate() {
            assert!(r < rows, "gather index {r} out of range {rows}");
            y.row_mut(i).assign(&tv.row(r));
        }
        let idx = idx.to_vec();
        self.push(
            y,
            vec![table],
            Box::new(move |dy, _, _| {
                let mut dt = Arr::zeros((rows, cols));
                for (i, &r) in idx.iter().enumerate() {
                    let mut target = dt.row_mut(r);
                    target += &dy.row(i);
                }
                vec![dt]
            }),
        )
    }

    /// Diagonal of a square matrix as `[k, 1]`.
    pub fn take_diag(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let k = av.nrows();
        assert_eq!(av.ncols(), k);
        let mut y = Arr::zeros((k, 1));
        for i in 0..k {
            y[(i, 0)] = av[(i, i)];
        }
        self.push(
            y,
            vec![a],
            Box::new(move |dy, _, _| {
                let mut da = Arr::zeros((k, k));
                for i in 0..k {
                    da[(i, i)] = dy[(i, 0)];
                }
                vec![da]
            }),
        )
    }

    // ---- reductions & losses ---------------------------------------------

    pub fn sum_all(&mut self, a: Var) -> Var {
        let y = Arr::from_elem((1, 1), self.value(a).sum());
        self.push(
            y,
            vec![a],
            Box::new(|dy, p, _| vec![Arr::from_elem(p[0].dim(), dy[(0, 0)])]),
        )
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let n = (av.nrows() * av.ncols()) as f64;
        let y = Arr::from_elem((1, 1), av.sum() / n);
        self.push(
            y,
            vec![a],
            Box::new(move |dy, p, _| vec![Arr::from_elem(p[0].dim(), dy[(0, 0)] / n)]),
        )
    }

    /// Mean squared error between two same-shape nodes: mean over elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "mse shape mismatch");
        let d = self.sub(a, b);
        let sq = self.mul(d, d);
        self.mean_all(sq)
    }

    /// Numerically-stable binary cross-entropy with logits against constant
    /// multi-hot targets; mean over all elements.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Arr) -> Var {
        let z = self.value(logits);
        assert_eq!(z.dim(), targets.dim(), "bce shape mismatch");
        let n = (z.nrows() * z.ncols()) as f64;
        let mut total = 0.0;
        for (zi, ti) in z.iter().zip(targets.iter()) {
            total += zi.max(0.0) - zi * ti + (-zi.abs()).exp().ln_1p();
        }
        let y = Arr::from_elem((1, 1), total / n);
        let t = targets.clone();
        self.push(
            y,
            vec![logits],
            Box::new(move |dy, p, _| {
                let scale = dy[(0, 0)] / n;
                let g = p[0]
                    .iter()
                    .zip(t.iter())
                    .map(|(&z, &tt)| (sigmoid_f(z) - tt) * scale)
                    .collect::<Vec<_>>();
                vec![Arr::from_shape_vec(p[0].dim(), g).unwrap()]
            }),
        )
    }
}

fn sigmoid_f(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_rows_f(a: &Arr) -> Arr {
    let mut y = a.clone();
    for mut row in y.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    y
}

fn row_norms(a: &Arr) -> Arr {
    let mut y = Arr::zeros((a.nrows(), 1));
    for (i, row) in a.rows().into_iter().enumerate() {
        y[(i, 0)] = row.iter().map(|&x| x * x).sum::<f64>().sqrt();
    }
    y
}

/// Stable sigmoid, shared with evaluation code.
pub fn sigmoid(x: f64) -> f64 {
    sigmoid_f(x)
}
