//! Eager reverse-mode tape.
//!
//! Every node is a row-major `rows x cols` matrix whose value is computed when
//! the node is recorded. Nodes are appended in evaluation order, so inputs
//! always precede their consumers and `backward` is a single reverse sweep.
//! Domain-specific differentiable kernels (hash encoding, compositing, losses)
//! plug in through [`CustomOp`].

use crate::autodiff::params::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Everything a custom op sees during the backward sweep.
pub struct BackwardCtx<'a, T> {
    pub inputs: Vec<&'a [T]>,
    pub output: &'a [T],
    pub out_grad: &'a [T],
    /// One slot per input; `None` when that input does not need a gradient.
    pub input_grads: Vec<Option<&'a mut [T]>>,
    pub params: &'a ParamStore<T>,
    pub param_grads: &'a mut Gradients<T>,
}

pub trait CustomOp<T: Real>: Send + Sync {
    fn name(&self) -> &'static str;

    /// Whether the op writes parameter gradients even if no input needs one.
    fn touches_params(&self) -> bool {
        false
    }

    fn backward(&self, ctx: BackwardCtx<'_, T>);
}

enum Op<T: Real> {
    Input,
    Leaf,
    Param(ParamId),
    Linear { x: Var, w: Var, b: Var },
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Concat(Vec<Var>),
    SliceCols { x: Var, start: usize },
    GatherRows { table: Var, rows: Vec<Option<usize>> },
    Affine { x: Var, scale: T },
    Mul(Var, Var),
    Sum(Var),
    WeightedSum(Vec<(Var, T)>),
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp<T>> },
}

struct Node<T: Real> {
    rows: usize,
    cols: usize,
    value: Vec<T>,
    needs_grad: bool,
    op: Op<T>,
}

pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    adjoints: Vec<Vec<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            adjoints: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    /// Adjoint of `v` after [`Tape::backward`]; `None` if no gradient reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.adjoints.get(v.0).filter(|a| !a.is_empty()).map(|a| a.as_slice())
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<T>, needs_grad: bool, op: Op<T>) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            rows,
            cols,
            value,
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant leaf; never receives an adjoint.
    pub fn input(&mut self, rows: usize, cols: usize, value: Vec<T>) -> Var {
        assert_eq!(value.len(), rows * cols, "input shape mismatch");
        self.push(rows, cols, value, false, Op::Input)
    }

    /// Leaf whose adjoint is kept so callers can read input gradients.
    pub fn leaf(&mut self, rows: usize, cols: usize, value: Vec<T>) -> Var {
        assert_eq!(value.len(), rows * cols, "leaf shape mismatch");
        self.push(rows, cols, value, true, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let g = store.get(id);
        self.push(g.rows, g.cols, g.data.clone(), true, Op::Param(id))
    }

    /// `x (N x in) * w (in x out) + b (1 x out)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, k) = self.shape(x);
        let (wk, m) = self.shape(w);
        let (br, bm) = self.shape(b);
        if wk != k || br != 1 || bm != m {
            return Err(Error::Config(format!(
                "linear layer shape mismatch: x {n}x{k}, w {wk}x{m}, b {br}x{bm}"
            )));
        }
        let mut y = Vec::with_capacity(n * m);
        let bias = self.value(b);
        for _ in 0..n {
            y.extend_from_slice(bias);
        }
        T::gemm(
            n,
            k,
            m,
            T::one(),
            self.value(x),
            (k as isize, 1),
            self.value(w),
            (m as isize, 1),
            T::one(),
            &mut y,
            (m as isize, 1),
        );
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(n, m, y, ng, Op::Linear { x, w, b }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let y = self
            .value(x)
            .iter()
            .map(|v| if *v > T::zero() { *v } else { T::zero() })
            .collect();
        let ng = self.needs(x);
        self.push(r, c, y, ng, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let y = self.value(x).iter().map(|v| sigmoid(*v)).collect();
        let ng = self.needs(x);
        self.push(r, c, y, ng, Op::Sigmoid(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let y = self.value(x).iter().map(|v| softplus(*v)).collect();
        let ng = self.needs(x);
        self.push(r, c, y, ng, Op::Softplus(x))
    }

    /// Column-wise concatenation of equally tall blocks.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.shape(parts[0]).0;
        if parts.iter().any(|p| self.shape(*p).0 != rows) {
            return Err(Error::Config("concat inputs differ in row count".into()));
        }
        let cols: usize = parts.iter().map(|p| self.shape(*p).1).sum();
        let mut y = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                let c = self.shape(*p).1;
                y.extend_from_slice(&self.value(*p)[r * c..(r + 1) * c]);
            }
        }
        let ng = parts.iter().any(|p| self.needs(*p));
        Ok(self.push(rows, cols, y, ng, Op::Concat(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(x);
        if start + len > c || len == 0 {
            return Err(Error::Config(format!(
                "column slice {start}..{} out of {c} columns",
                start + len
            )));
        }
        let src = self.value(x);
        let mut y = Vec::with_capacity(r * len);
        for i in 0..r {
            y.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        let ng = self.needs(x);
        Ok(self.push(r, len, y, ng, Op::SliceCols { x, start }))
    }

    /// Selects rows of `table`; `None` selects the mean row.
    pub fn gather_rows(&mut self, table: Var, rows: Vec<Option<usize>>) -> Result<Var> {
        let (tr, tc) = self.shape(table);
        if let Some(bad) = rows.iter().flatten().find(|r| **r >= tr) {
            return Err(Error::Lookup(format!("row {bad} out of range for table of {tr} rows")));
        }
        let src = self.value(table);
        let mut mean = vec![T::zero(); tc];
        if rows.iter().any(|r| r.is_none()) && tr > 0 {
            let inv = T::one() / T::from_usize(tr).unwrap();
            for r in 0..tr {
                for c in 0..tc {
                    mean[c] += src[r * tc + c] * inv;
                }
            }
        }
        let mut y = Vec::with_capacity(rows.len() * tc);
        for r in &rows {
            match r {
                Some(i) => y.extend_from_slice(&src[i * tc..(i + 1) * tc]),
                None => y.extend_from_slice(&mean),
            }
        }
        let n = rows.len();
        let ng = self.needs(table);
        Ok(self.push(n, tc, y, ng, Op::GatherRows { table, rows }))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        let (r, c) = self.shape(x);
        let y = self.value(x).iter().map(|v| scale * *v + shift).collect();
        let ng = self.needs(x);
        self.push(r, c, y, ng, Op::Affine { x, scale })
    }

    /// Elementwise product of equally shaped nodes.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Config("mul operands differ in shape".into()));
        }
        let (r, c) = self.shape(a);
        let y = self.value(a).iter().zip(self.value(b)).map(|(x, y)| *x * *y).collect();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(r, c, y, ng, Op::Mul(a, b)))
    }

    /// Sum of all entries, as a 1x1 node.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().copied().sum();
        let ng = self.needs(x);
        self.push(1, 1, vec![s], ng, Op::Sum(x))
    }

    /// `sum_k weight_k * term_k` over 1x1 terms.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        if terms.iter().any(|(v, _)| self.shape(*v) != (1, 1)) {
            return Err(Error::Config("weighted_sum expects scalar terms".into()));
        }
        let s = terms.iter().map(|(v, w)| *w * self.scalar(*v)).sum();
        let ng = terms.iter().any(|(v, _)| self.needs(*v));
        Ok(self.push(1, 1, vec![s], ng, Op::WeightedSum(terms.to_vec())))
    }

    /// Records a domain op whose forward value was computed by the caller.
    pub fn custom(
        &mut self,
        inputs: Vec<Var>,
        rows: usize,
        cols: usize,
        value: Vec<T>,
        op: Box<dyn CustomOp<T>>,
    ) -> Var {
        assert_eq!(value.len(), rows * cols, "custom op `{}` shape mismatch", op.name());
        let ng = op.touches_params() || inputs.iter().any(|v| self.needs(*v));
        self.push(rows, cols, value, ng, Op::Custom { inputs, op })
    }

    /// Propagates the adjoint `seed` of the scalar node `root` back through
    /// the tape, accumulating parameter gradients into `grads`.
    pub fn backward(&mut self, root: Var, seed: T, params: &ParamStore<T>, grads: &mut Gradients<T>) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::State(
                "backward called before any forward op was recorded".into(),
            ));
        }
        if root.0 >= self.nodes.len() {
            return Err(Error::State("backward root is not on this tape".into()));
        }
        if self.shape(root) != (1, 1) {
            return Err(Error::State(format!(
                "backward needs a scalar root, got {:?}",
                self.shape(root)
            )));
        }
        let mut adj: Vec<Vec<T>> = (0..self.nodes.len()).map(|_| Vec::new()).collect();
        adj[root.0] = vec![seed];
        for i in (0..=root.0).rev() {
            if adj[i].is_empty() || !self.nodes[i].needs_grad {
                continue;
            }
            let g = std::mem::take(&mut adj[i]);
            self.backward_node(i, &g, &mut adj, params, grads);
            adj[i] = g;
        }
        self.adjoints = adj;
        Ok(())
    }

    fn backward_node(&self, i: usize, g: &[T], adj: &mut [Vec<T>], params: &ParamStore<T>, grads: &mut Gradients<T>) {
        let node = &self.nodes[i];
        let nodes = &self.nodes;
        macro_rules! adj_of {
            ($v:expr) => {
                adjoint_slot(nodes, adj, $v)
            };
        }
        match &node.op {
            Op::Input | Op::Leaf => {}
            Op::Param(id) => {
                for (d, s) in grads.get_mut(*id).iter_mut().zip(g) {
                    *d += *s;
                }
            }
            Op::Linear { x, w, b } => {
                let (n, k) = (nodes[x.0].rows, nodes[x.0].cols);
                let m = node.cols;
                if let Some(dx) = adj_of!(*x) {
                    T::gemm(
                        n,
                        m,
                        k,
                        T::one(),
                        g,
                        (m as isize, 1),
                        &nodes[w.0].value,
                        (1, m as isize),
                        T::one(),
                        dx,
                        (k as isize, 1),
                    );
                }
                if let Some(dw) = adj_of!(*w) {
                    T::gemm(
                        k,
                        n,
                        m,
                        T::one(),
                        &nodes[x.0].value,
                        (1, k as isize),
                        g,
                        (m as isize, 1),
                        T::one(),
                        dw,
                        (m as isize, 1),
                    );
                }
                if let Some(db) = adj_of!(*b) {
                    for r in 0..n {
                        for (d, s) in db.iter_mut().zip(&g[r * m..(r + 1) * m]) {
                            *d += *s;
                        }
                    }
                }
            }
            Op::Relu(x) => {
                if let Some(dx) = adj_of!(*x) {
                    for ((d, y), s) in dx.iter_mut().zip(&node.value).zip(g) {
                        if *y > T::zero() {
                            *d += *s;
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(dx) = adj_of!(*x) {
                    for ((d, y), s) in dx.iter_mut().zip(&node.value).zip(g) {
                        *d += *s * *y * (T::one() - *y);
                    }
                }
            }
            Op::Softplus(x) => {
                if let Some(dx) = adj_of!(*x) {
                    for ((d, xv), s) in dx.iter_mut().zip(&nodes[x.0].value).zip(g) {
                        *d += *s * sigmoid(*xv);
                    }
                }
            }
            Op::Concat(parts) => {
                let rows = node.rows;
                let total = node.cols;
                let mut offset = 0;
                for p in parts {
                    let c = nodes[p.0].cols;
                    if let Some(dp) = adj_of!(*p) {
                        for r in 0..rows {
                            for j in 0..c {
                                dp[r * c + j] += g[r * total + offset + j];
                            }
                        }
                    }
                    offset += c;
                }
            }
            Op::SliceCols { x, start } => {
                let c = nodes[x.0].cols;
                let len = node.cols;
                if let Some(dx) = adj_of!(*x) {
                    for r in 0..node.rows {
                        for j in 0..len {
                            dx[r * c + start + j] += g[r * len + j];
                        }
                    }
                }
            }
            Op::GatherRows { table, rows } => {
                let (tr, tc) = (nodes[table.0].rows, nodes[table.0].cols);
                if let Some(dt) = adj_of!(*table) {
                    let inv = T::one() / T::from_usize(tr.max(1)).unwrap();
                    for (o, r) in rows.iter().enumerate() {
                        let src = &g[o * tc..(o + 1) * tc];
                        match r {
                            Some(i) => {
                                for c in 0..tc {
                                    dt[i * tc + c] += src[c];
                                }
                            }
                            None => {
                                for t in 0..tr {
                                    for c in 0..tc {
                                        dt[t * tc + c] += src[c] * inv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::Affine { x, scale, .. } => {
                if let Some(dx) = adj_of!(*x) {
                    for (d, s) in dx.iter_mut().zip(g) {
                        *d += *scale * *s;
                    }
                }
            }
            Op::Mul(a, b) => {
                if a == b {
                    if let Some(da) = adj_of!(*a) {
                        for ((d, v), s) in da.iter_mut().zip(&nodes[a.0].value).zip(g) {
                            *d += T::lit(2.0) * *v * *s;
                        }
                    }
                } else {
                    if let Some(da) = adj_of!(*a) {
                        for ((d, v), s) in da.iter_mut().zip(&nodes[b.0].value).zip(g) {
                            *d += *v * *s;
                        }
                    }
                    if let Some(db) = adj_of!(*b) {
                        for ((d, v), s) in db.iter_mut().zip(&nodes[a.0].value).zip(g) {
                            *d += *v * *s;
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(dx) = adj_of!(*x) {
                    for d in dx.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::WeightedSum(terms) => {
                for (v, w) in terms {
                    if let Some(dv) = adj_of!(*v) {
                        dv[0] += *w * g[0];
                    }
                }
            }
            Op::Custom { inputs, op } => {
                let mut taken: Vec<Option<Vec<T>>> = inputs
                    .iter()
                    .map(|v| {
                        let n = &nodes[v.0];
                        if !n.needs_grad {
                            return None;
                        }
                        let mut a = std::mem::take(&mut adj[v.0]);
                        if a.is_empty() {
                            a = vec![T::zero(); n.rows * n.cols];
                        }
                        Some(a)
                    })
                    .collect();
                {
                    let ctx = BackwardCtx {
                        inputs: inputs.iter().map(|v| nodes[v.0].value.as_slice()).collect(),
                        output: &node.value,
                        out_grad: g,
                        input_grads: taken.iter_mut().map(|o| o.as_deref_mut()).collect(),
                        params,
                        param_grads: grads,
                    };
                    op.backward(ctx);
                }
                for (v, a) in inputs.iter().zip(taken) {
                    if let Some(a) = a {
                        adj[v.0] = a;
                    }
                }
            }
        }
    }
}

fn adjoint_slot<'a, T: Real>(nodes: &[Node<T>], adj: &'a mut [Vec<T>], v: Var) -> Option<&'a mut [T]> {
    let n = &nodes[v.0];
    if !n.needs_grad {
        return None;
    }
    if adj[v.0].is_empty() {
        adj[v.0] = vec![T::zero(); n.rows * n.cols];
    }
    Some(adj[v.0].as_mut_slice())
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    if x > T::lit(20.0) {
        x
    } else {
        x.max(T::zero()) + (-(x.abs())).exp().ln_1p()
    }
}
