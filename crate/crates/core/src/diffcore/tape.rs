use super::tensor::{sigmoid, softmax_into, softmax_rows, softplus, Tensor2};
use super::{DiffError, ParamId, ParamStore};

/// Handle to a node on a [`Tape`]. Only valid for the tape that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    /// Leaf with no gradient consumers outside the tape.
    Constant,
    /// Leaf whose gradient is scattered back into a [`ParamStore`].
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    MulElem(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    /// a (n×m) + row (1×m), broadcast over rows.
    AddRow(Var, Var),
    /// a (n×m) ⊙ row (1×m), broadcast over rows.
    MulRow(Var, Var),
    /// a (n×m) ⊙ col (n×1), broadcast over columns.
    MulCol(Var, Var),
    /// Column j of a (n×m) as n×1.
    Column(Var, usize),
    Softplus(Var),
    Relu(Var),
    Exp(Var),
    Ln(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    /// Sum of all entries, 1×1.
    Sum(Var),
}

struct Node {
    value: Tensor2,
    op: Op,
}

/// Records a forward computation so gradients can be propagated backwards.
///
/// Nodes are created in topological order by construction, so the backward
/// pass is a single reverse sweep. A tape is built per training step and
/// dropped afterwards.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Option<Vec<Tensor2>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor2, op: Op) -> Var {
        debug_assert!(self.grads.is_none(), "tape extended after backward");
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    /// Value of a scalar (1×1) node.
    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        assert_eq!(t.shape(), (1, 1), "scalar() on non-scalar node");
        t.data()[0]
    }

    /// Gradient of the loss w.r.t. node `v`; panics before `backward` ran.
    pub fn grad(&self, v: Var) -> &Tensor2 {
        &self.grads.as_ref().expect("backward has not run")[v.0]
    }

    pub fn constant(&mut self, t: Tensor2) -> Var {
        self.push(t, Op::Constant)
    }

    pub fn constant_row(&mut self, values: &[f64]) -> Var {
        self.constant(Tensor2::row_vector(values))
    }

    /// Copies the current value of `id` onto the tape as a parameter leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        v.add_scaled(self.value(b), 1.0);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        v.add_scaled(self.value(b), -1.0);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul_elem(&mut self, a: Var, b: Var) -> Var {
        let ta = self.value(a);
        let tb = self.value(b);
        assert_eq!(ta.shape(), tb.shape(), "mul_elem shape mismatch");
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x * y)
            .collect();
        let v = Tensor2::from_vec(ta.rows(), ta.cols(), data);
        self.push(v, Op::MulElem(a, b))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul_elem(a, a)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| c * x);
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddScalar(a))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let ta = self.value(a);
        let tr = self.value(row);
        assert_eq!(tr.rows(), 1, "add_row: broadcast operand must be 1×m");
        assert_eq!(ta.cols(), tr.cols(), "add_row shape mismatch");
        let mut v = ta.clone();
        for i in 0..v.rows() {
            for (x, r) in v.row_mut(i).iter_mut().zip(tr.row(0)) {
                *x += r;
            }
        }
        self.push(v, Op::AddRow(a, row))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let ta = self.value(a);
        let tr = self.value(row);
        assert_eq!(tr.rows(), 1, "mul_row: broadcast operand must be 1×m");
        assert_eq!(ta.cols(), tr.cols(), "mul_row shape mismatch");
        let mut v = ta.clone();
        for i in 0..v.rows() {
            for (x, r) in v.row_mut(i).iter_mut().zip(tr.row(0)) {
                *x *= r;
            }
        }
        self.push(v, Op::MulRow(a, row))
    }

    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let ta = self.value(a);
        let tc = self.value(col);
        assert_eq!(tc.cols(), 1, "mul_col: broadcast operand must be n×1");
        assert_eq!(ta.rows(), tc.rows(), "mul_col shape mismatch");
        let mut v = ta.clone();
        for i in 0..v.rows() {
            let c = tc.get(i, 0);
            for x in v.row_mut(i) {
                *x *= c;
            }
        }
        self.push(v, Op::MulCol(a, col))
    }

    pub fn column(&mut self, a: Var, j: usize) -> Var {
        let ta = self.value(a);
        assert!(j < ta.cols(), "column index out of range");
        let v = Tensor2::from_fn(ta.rows(), 1, |i, _| ta.get(i, j));
        self.push(v, Op::Column(a, j))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        self.push(v, Op::Softplus(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Ln(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = softmax_rows(self.value(a));
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let mut v = Tensor2::zeros(ta.rows(), ta.cols());
        for i in 0..ta.rows() {
            let row = ta.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            for (o, &x) in v.row_mut(i).iter_mut().zip(row) {
                *o = x - lse;
            }
        }
        self.push(v, Op::LogSoftmaxRows(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Tensor2::from_vec(1, 1, vec![s]), Op::Sum(a))
    }

    /// Propagates d(loss)/d(node) to every node; `loss` must be scalar.
    pub fn backward(&mut self, loss: Var) -> Result<(), DiffError> {
        let lt = self.value(loss);
        if lt.shape() != (1, 1) {
            return Err(DiffError::NonScalarLoss {
                rows: lt.rows(),
                cols: lt.cols(),
            });
        }
        let lv = lt.data()[0];
        if !lv.is_finite() {
            return Err(DiffError::NonFiniteLoss { value: lv });
        }

        let mut grads: Vec<Tensor2> = self
            .nodes
            .iter()
            .map(|n| Tensor2::zeros(n.value.rows(), n.value.cols()))
            .collect();
        grads[loss.0].data_mut()[0] = 1.0;

        for i in (0..self.nodes.len()).rev() {
            let g = std::mem::replace(&mut grads[i], Tensor2::zeros(0, 0));
            self.propagate(i, &g, &mut grads);
            grads[i] = g;
        }
        self.grads = Some(grads);
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor2, grads: &mut [Tensor2]) {
        let value = |v: Var| &self.nodes[v.0].value;
        match self.nodes[i].op {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                grads[a.0].add_scaled(&g.matmul_nt(value(b)), 1.0);
                grads[b.0].add_scaled(&value(a).matmul_tn(g), 1.0);
            }
            Op::Transpose(a) => {
                grads[a.0].add_scaled(&g.transpose(), 1.0);
            }
            Op::Add(a, b) => {
                grads[a.0].add_scaled(g, 1.0);
                grads[b.0].add_scaled(g, 1.0);
            }
            Op::Sub(a, b) => {
                grads[a.0].add_scaled(g, 1.0);
                grads[b.0].add_scaled(g, -1.0);
            }
            Op::MulElem(a, b) => {
                let da = Tensor2::from_vec(
                    g.rows(),
                    g.cols(),
                    g.data()
                        .iter()
                        .zip(value(b).data())
                        .map(|(x, y)| x * y)
                        .collect(),
                );
                let db = Tensor2::from_vec(
                    g.rows(),
                    g.cols(),
                    g.data()
                        .iter()
                        .zip(value(a).data())
                        .map(|(x, y)| x * y)
                        .collect(),
                );
                grads[a.0].add_scaled(&da, 1.0);
                grads[b.0].add_scaled(&db, 1.0);
            }
            Op::Scale(a, c) => {
                grads[a.0].add_scaled(g, c);
            }
            Op::AddScalar(a) => {
                grads[a.0].add_scaled(g, 1.0);
            }
            Op::AddRow(a, row) => {
                grads[a.0].add_scaled(g, 1.0);
                let dr = grads[row.0].row_mut(0);
                for i in 0..g.rows() {
                    for (d, &x) in dr.iter_mut().zip(g.row(i)) {
                        *d += x;
                    }
                }
            }
            Op::MulRow(a, row) => {
                let ta = value(a);
                let tr = value(row);
                {
                    let da = &mut grads[a.0];
                    for i in 0..g.rows() {
                        for ((d, &x), &r) in da.row_mut(i).iter_mut().zip(g.row(i)).zip(tr.row(0))
                        {
                            *d += x * r;
                        }
                    }
                }
                let dr = grads[row.0].row_mut(0);
                for i in 0..g.rows() {
                    for ((d, &x), &av) in dr.iter_mut().zip(g.row(i)).zip(ta.row(i)) {
                        *d += x * av;
                    }
                }
            }
            Op::MulCol(a, col) => {
                let ta = value(a);
                let tc = value(col);
                {
                    let da = &mut grads[a.0];
                    for i in 0..g.rows() {
                        let c = tc.get(i, 0);
                        for (d, &x) in da.row_mut(i).iter_mut().zip(g.row(i)) {
                            *d += x * c;
                        }
                    }
                }
                let dc = &mut grads[col.0];
                for i in 0..g.rows() {
                    let dot: f64 = g.row(i).iter().zip(ta.row(i)).map(|(x, a)| x * a).sum();
                    *dc.row_mut(i).first_mut().expect("n×1 gradient") += dot;
                }
            }
            Op::Column(a, j) => {
                let da = &mut grads[a.0];
                for i in 0..g.rows() {
                    da.row_mut(i)[j] += g.get(i, 0);
                }
            }
            Op::Softplus(a) => {
                let ta = value(a);
                let da = Tensor2::from_vec(
                    g.rows(),
                    g.cols(),
                    g.data()
                        .iter()
                        .zip(ta.data())
                        .map(|(x, &v)| x * sigmoid(v))
                        .collect(),
                );
                grads[a.0].add_scaled(&da, 1.0);
            }
            Op::Relu(a) => {
                let ta = value(a);
                let da = Tensor2::from_vec(
                    g.rows(),
                    g.cols(),
                    g.data()
                        .iter()
                        .zip(ta.data())
                        .map(|(x, &v)| if v > 0.0 { *x } else { 0.0 })
                        .collect(),
                );
                grads[a.0].add_scaled(&da, 1.0);
            }
            Op::Exp(a) => {
                let y = &self.nodes[i].value;
                let da = Tensor2::from_vec(
                    g.rows(),
                    g.cols(),
                    g.data()
                        .iter()
                        .zip(y.data())
                        .map(|(x, y)| x * y)
                        .collect(),
                );
                grads[a.0].add_scaled(&da, 1.0);
            }
            Op::Ln(a) => {
                let ta = value(a);
                let da = Tensor2::from_vec(
                    g.rows(),
                    g.cols(),
                    g.data()
                        .iter()
                        .zip(ta.data())
                        .map(|(x, v)| x / v)
                        .collect(),
                );
                grads[a.0].add_scaled(&da, 1.0);
            }
            Op::SoftmaxRows(a) => {
                // dx_j = y_j (g_j − Σ_k g_k y_k) per row
                let y = &self.nodes[i].value;
                let da = &mut grads[a.0];
                for r in 0..g.rows() {
                    let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(x, yv)| x * yv).sum();
                    for ((d, &gv), &yv) in da.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *d += yv * (gv - dot);
                    }
                }
            }
            Op::LogSoftmaxRows(a) => {
                // dx_j = g_j − softmax(x)_j Σ_k g_k per row
                let ta = value(a);
                let da = &mut grads[a.0];
                let mut sm = vec![0.0; ta.cols()];
                for r in 0..g.rows() {
                    softmax_into(ta.row(r), &mut sm);
                    let gsum: f64 = g.row(r).iter().sum();
                    for ((d, &gv), &s) in da.row_mut(r).iter_mut().zip(g.row(r)).zip(&sm) {
                        *d += gv - s * gsum;
                    }
                }
            }
            Op::Sum(a) => {
                let gv = g.data()[0];
                for d in grads[a.0].data_mut() {
                    *d += gv;
                }
            }
        }
    }

    /// Adds this tape's parameter-leaf gradients into the store's accumulators.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        let grads = self.grads.as_ref().expect("backward has not run");
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(id) = node.op {
                store.grad_mut(id).add_scaled(&grads[i], 1.0);
            }
        }
    }
}
