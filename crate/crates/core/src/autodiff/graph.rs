use super::matrix::Matrix;
use super::store::ParamStore;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// How an elementwise loss aggregates its per-entry terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` inside the
/// cross-entropy ops so saturated sigmoids cannot produce `ln(0)`. Outside
/// the clamp the op is flat, so its gradient there is zero.
const BCE_CLAMP: f64 = 1e-12;
/// Vectors with norm below this are treated as exactly zero by
/// `l2_normalize` and `euclidean_distance` (value and gradient).
const NORM_GUARD: f64 = 1e-12;
/// Floor for probabilities fed to `ln` in the softmax pick loss.
const LOG_GUARD: f64 = 1e-300;
/// Most negative argument passed to `exp` by the sigmoid; `exp` of anything
/// below this underflows to 0.0, which would make the output exactly zero.
const SIGMOID_EXP_FLOOR: f64 = -708.0;

/// Numerically stable logistic function.
///
/// Strictly inside `(0, 1)` for every finite input: large positive inputs
/// saturate to exactly 1.0 only in the last ulp, and arbitrarily negative
/// inputs are floored so the result stays a positive subnormal rather than
/// underflowing to zero. Never NaN or infinite for finite input.
pub fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.max(SIGMOID_EXP_FLOOR).exp();
        e / (1.0 + e)
    }
}

enum Op {
    Leaf,
    /// `W x + b` with the bias broadcast across columns.
    Affine {
        w: usize,
        b: usize,
        x: usize,
    },
    MatMul {
        a: usize,
        b: usize,
    },
    Transpose {
        x: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Sub {
        a: usize,
        b: usize,
    },
    Scale {
        x: usize,
        c: f64,
    },
    AddScalar {
        x: usize,
    },
    Sigmoid {
        x: usize,
    },
    Relu {
        x: usize,
    },
    /// Zero-padded temporal convolution, output length equals input length.
    /// Kernel rows are output channels; row layout is `[in_ch * width]`
    /// with taps for one input channel contiguous.
    Conv1dSame {
        kernel: usize,
        bias: usize,
        x: usize,
        width: usize,
    },
    RowSlice {
        x: usize,
        start: usize,
        len: usize,
    },
    /// Mean over a fixed set of columns; output has one column.
    MeanCols {
        x: usize,
        cols: Vec<usize>,
    },
    L2Normalize {
        x: usize,
    },
    EuclideanDistance {
        a: usize,
        b: usize,
    },
    SoftmaxCols {
        x: usize,
    },
    /// Masked binary cross-entropy against constant targets.
    BinaryCrossEntropy {
        p: usize,
        target: Matrix,
        mask: Matrix,
        reduction: Reduction,
    },
    /// Mean negative log-probability of a fixed set of entries.
    LogLossPicks {
        p: usize,
        picks: Vec<(usize, usize)>,
    },
    MeanAll {
        x: usize,
    },
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Tape for one forward computation.
///
/// Nodes are appended in evaluation order and may only reference earlier
/// nodes, so walking the tape backwards is already a topological order for
/// the backward pass. A graph is built per optimization step and dropped
/// afterwards; parameters live in a [`ParamStore`] and are pulled into the
/// graph with [`Graph::param`], which records the binding so
/// [`Graph::write_grads`] can push gradients back by name.
pub struct Graph {
    nodes: Vec<Node>,
    bound: Vec<(usize, String)>,
    grads: Vec<Matrix>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            bound: Vec::new(),
            grads: Vec::new(),
        }
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// A constant input; it participates in the forward pass and receives a
    /// gradient (queryable via [`Graph::grad`]) but is not tied to a store.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A `1 x 1` constant.
    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Matrix::filled(1, 1, value))
    }

    /// Pull a named parameter out of the store, recording the binding so
    /// gradients can be written back later. Binding the same name more than
    /// once is allowed; the written-back gradients accumulate.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let value = store.value(name)?.clone();
        let var = self.push(value, Op::Leaf);
        self.bound.push((var.0, name.to_string()));
        Ok(var)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Gradient of the last [`Graph::backward`] target with respect to `v`.
    ///
    /// Panics if `backward` has not been run on this graph.
    pub fn grad(&self, v: Var) -> &Matrix {
        assert!(
            !self.grads.is_empty(),
            "gradient queried before backward() was run"
        );
        &self.grads[v.0]
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// `W x + b`: `W` is `[m x n]`, `b` is `[m x 1]`, `x` is `[n x T]`.
    pub fn affine(&mut self, w: Var, b: Var, x: Var) -> Result<Var> {
        let (m, n) = self.shape(w);
        let (bm, bc) = self.shape(b);
        let (xn, t) = self.shape(x);
        if n != xn || bm != m || bc != 1 {
            return Err(Error::shape(
                "affine",
                format!("W {m}x{n}, b {bm}x{bc}, x {xn}x{t}"),
            ));
        }
        let wv = &self.nodes[w.0].value;
        let bv = &self.nodes[b.0].value;
        let xv = &self.nodes[x.0].value;
        let mut out = Matrix::zeros(m, t);
        for i in 0..m {
            let bias = bv.get(i, 0);
            let or = out.row_mut(i);
            or.fill(bias);
            for j in 0..n {
                let wij = wv.get(i, j);
                if wij == 0.0 {
                    continue;
                }
                let xr = xv.row(j);
                for tt in 0..t {
                    or[tt] += wij * xr[tt];
                }
            }
        }
        Ok(self.push(out, Op::Affine { w: w.0, b: b.0, x: x.0 }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (kb, n) = self.shape(b);
        if k != kb {
            return Err(Error::shape("matmul", format!("{m}x{k} * {kb}x{n}")));
        }
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let mut out = Matrix::zeros(m, n);
        for i in 0..m {
            for q in 0..k {
                let aiq = av.get(i, q);
                if aiq == 0.0 {
                    continue;
                }
                let br = bv.row(q);
                let or = out.row_mut(i);
                for j in 0..n {
                    or[j] += aiq * br[j];
                }
            }
        }
        Ok(self.push(out, Op::MatMul { a: a.0, b: b.0 }))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.nodes[x.0].value.transpose();
        self.push(out, Op::Transpose { x: x.0 })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let out = self.nodes[a.0]
            .value
            .zip_map(&self.nodes[b.0].value, |x, y| x + y)?;
        Ok(self.push(out, Op::Add { a: a.0, b: b.0 }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                "sub",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let out = self.nodes[a.0]
            .value
            .zip_map(&self.nodes[b.0].value, |x, y| x - y)?;
        Ok(self.push(out, Op::Sub { a: a.0, b: b.0 }))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.nodes[x.0].value.map(|v| c * v);
        self.push(out, Op::Scale { x: x.0, c })
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.nodes[x.0].value.map(|v| v + c);
        self.push(out, Op::AddScalar { x: x.0 })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.nodes[x.0].value.map(stable_sigmoid);
        self.push(out, Op::Sigmoid { x: x.0 })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.nodes[x.0].value.map(|v| if v > 0.0 { v } else { 0.0 });
        self.push(out, Op::Relu { x: x.0 })
    }

    /// Temporal convolution with zero padding so the output covers the same
    /// snippet range as the input. `kernel` is `[out_ch x in_ch*width]`,
    /// `bias` is `[out_ch x 1]`, `x` is `[in_ch x T]`, `width` must be odd.
    pub fn conv1d_same(&mut self, kernel: Var, bias: Var, x: Var, width: usize) -> Result<Var> {
        if width == 0 || width % 2 == 0 {
            return Err(Error::Config(format!(
                "conv1d_same kernel width must be odd and positive, got {width}"
            )));
        }
        let (out_ch, kc) = self.shape(kernel);
        let (in_ch, t) = self.shape(x);
        let (bm, bc) = self.shape(bias);
        if kc != in_ch * width || bm != out_ch || bc != 1 {
            return Err(Error::shape(
                "conv1d_same",
                format!("kernel {out_ch}x{kc}, bias {bm}x{bc}, x {in_ch}x{t}, width {width}"),
            ));
        }
        let pad = (width - 1) / 2;
        let kv = &self.nodes[kernel.0].value;
        let bv = &self.nodes[bias.0].value;
        let xv = &self.nodes[x.0].value;
        let mut out = Matrix::zeros(out_ch, t);
        for o in 0..out_ch {
            let kr = kv.row(o);
            let bias_o = bv.get(o, 0);
            let or = out.row_mut(o);
            or.fill(bias_o);
            for i in 0..in_ch {
                let xr = xv.row(i);
                for j in 0..width {
                    let kk = kr[i * width + j];
                    if kk == 0.0 {
                        continue;
                    }
                    // out[o][t] += k * x[i][t + j - pad] where in range
                    for (tt, ov) in or.iter_mut().enumerate() {
                        let u = tt as isize + j as isize - pad as isize;
                        if u >= 0 && (u as usize) < t {
                            *ov += kk * xr[u as usize];
                        }
                    }
                }
            }
        }
        Ok(self.push(
            out,
            Op::Conv1dSame {
                kernel: kernel.0,
                bias: bias.0,
                x: x.0,
                width,
            },
        ))
    }

    pub fn row_slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(x);
        if start + len > r || len == 0 {
            return Err(Error::shape(
                "row_slice",
                format!("rows {start}..{} of a {r}x{c} matrix", start + len),
            ));
        }
        let xv = &self.nodes[x.0].value;
        let out = Matrix::from_fn(len, c, |i, j| xv.get(start + i, j));
        Ok(self.push(out, Op::RowSlice { x: x.0, start, len }))
    }

    /// Mean over the given columns; the result has a single column.
    pub fn mean_cols(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let (r, c) = self.shape(x);
        if cols.is_empty() {
            return Err(Error::shape("mean_cols", "empty column set".to_string()));
        }
        if let Some(&bad) = cols.iter().find(|&&j| j >= c) {
            return Err(Error::shape(
                "mean_cols",
                format!("column {bad} out of range for {r}x{c}"),
            ));
        }
        let xv = &self.nodes[x.0].value;
        let inv = 1.0 / cols.len() as f64;
        let out = Matrix::from_fn(r, 1, |i, _| {
            cols.iter().map(|&j| xv.get(i, j)).sum::<f64>() * inv
        });
        Ok(self.push(
            out,
            Op::MeanCols {
                x: x.0,
                cols: cols.to_vec(),
            },
        ))
    }

    /// Scale the input to unit Frobenius norm. Inputs with norm below the
    /// guard map to the zero vector and pass no gradient.
    pub fn l2_normalize(&mut self, x: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let norm = frobenius(xv);
        let out = if norm < NORM_GUARD {
            Matrix::zeros(xv.rows(), xv.cols())
        } else {
            xv.map(|v| v / norm)
        };
        self.push(out, Op::L2Normalize { x: x.0 })
    }

    /// Euclidean distance between two same-shape values, as a `1 x 1` node.
    pub fn euclidean_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                "euclidean_distance",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let d = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        Ok(self.push(
            Matrix::filled(1, 1, d),
            Op::EuclideanDistance { a: a.0, b: b.0 },
        ))
    }

    /// Column-wise softmax (each column sums to one).
    pub fn softmax_cols(&mut self, x: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let (r, c) = xv.shape();
        let mut out = Matrix::zeros(r, c);
        for j in 0..c {
            let mut max = f64::NEG_INFINITY;
            for i in 0..r {
                max = max.max(xv.get(i, j));
            }
            let mut sum = 0.0;
            for i in 0..r {
                let e = (xv.get(i, j) - max).exp();
                out.set(i, j, e);
                sum += e;
            }
            for i in 0..r {
                out.set(i, j, out.get(i, j) / sum);
            }
        }
        self.push(out, Op::SoftmaxCols { x: x.0 })
    }

    /// Masked binary cross-entropy of predicted probabilities `p` against
    /// constant `target`, counting only entries where `mask` is nonzero.
    /// With `Reduction::Mean` the total is divided by the number of counted
    /// entries; an empty mask yields exactly zero.
    pub fn binary_cross_entropy(
        &mut self,
        p: Var,
        target: &Matrix,
        mask: &Matrix,
        reduction: Reduction,
    ) -> Result<Var> {
        let shape = self.shape(p);
        if target.shape() != shape || mask.shape() != shape {
            return Err(Error::shape(
                "binary_cross_entropy",
                format!(
                    "p {:?}, target {:?}, mask {:?}",
                    shape,
                    target.shape(),
                    mask.shape()
                ),
            ));
        }
        let pv = &self.nodes[p.0].value;
        let mut total = 0.0;
        let mut count = 0usize;
        for idx in 0..pv.len() {
            if mask.data()[idx] == 0.0 {
                continue;
            }
            let pc = pv.data()[idx].clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            let y = target.data()[idx];
            total -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
            count += 1;
        }
        let value = match reduction {
            Reduction::Sum => total,
            Reduction::Mean => {
                if count == 0 {
                    0.0
                } else {
                    total / count as f64
                }
            }
        };
        Ok(self.push(
            Matrix::filled(1, 1, value),
            Op::BinaryCrossEntropy {
                p: p.0,
                target: target.clone(),
                mask: mask.clone(),
                reduction,
            },
        ))
    }

    /// Mean of `-ln p[r, c]` over the picked entries (softmax cross-entropy
    /// against one-hot targets). An empty pick set yields exactly zero.
    pub fn log_loss_picks(&mut self, p: Var, picks: &[(usize, usize)]) -> Result<Var> {
        let (r, c) = self.shape(p);
        if let Some(&(br, bc)) = picks.iter().find(|&&(pr, pc)| pr >= r || pc >= c) {
            return Err(Error::shape(
                "log_loss_picks",
                format!("entry ({br}, {bc}) out of range for {r}x{c}"),
            ));
        }
        let pv = &self.nodes[p.0].value;
        let value = if picks.is_empty() {
            0.0
        } else {
            let total: f64 = picks
                .iter()
                .map(|&(i, j)| -pv.get(i, j).max(LOG_GUARD).ln())
                .sum();
            total / picks.len() as f64
        };
        Ok(self.push(
            Matrix::filled(1, 1, value),
            Op::LogLossPicks {
                p: p.0,
                picks: picks.to_vec(),
            },
        ))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let value = xv.sum() / xv.len() as f64;
        self.push(Matrix::filled(1, 1, value), Op::MeanAll { x: x.0 })
    }

    /// Backpropagate from a `1 x 1` loss node, filling every node's gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::shape(
                "backward",
                format!("loss must be 1x1, got {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Matrix> = self
            .nodes
            .iter()
            .map(|n| Matrix::zeros(n.value.rows(), n.value.cols()))
            .collect();
        grads[loss.0].set(0, 0, 1.0);

        for i in (0..=loss.0).rev() {
            if grads[i].all_zero() {
                continue;
            }
            let g = grads[i].clone();
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Affine { w, b, x } => {
                    let (m, n) = self.nodes[*w].value.shape();
                    let t = g.cols();
                    let wv = &self.nodes[*w].value;
                    let xv = &self.nodes[*x].value;
                    // dW[i][j] += sum_t g[i][t] x[j][t]
                    {
                        let dw = &mut grads[*w];
                        for ii in 0..m {
                            let gr = g.row(ii);
                            let dwr = dw.row_mut(ii);
                            for j in 0..n {
                                let xr = xv.row(j);
                                let mut acc = 0.0;
                                for tt in 0..t {
                                    acc += gr[tt] * xr[tt];
                                }
                                dwr[j] += acc;
                            }
                        }
                    }
                    {
                        let db = &mut grads[*b];
                        for ii in 0..m {
                            let gr = g.row(ii);
                            db[(ii, 0)] += gr.iter().sum::<f64>();
                        }
                    }
                    {
                        let dx = &mut grads[*x];
                        for ii in 0..m {
                            let gr = g.row(ii);
                            for j in 0..n {
                                let wij = wv.get(ii, j);
                                if wij == 0.0 {
                                    continue;
                                }
                                let dxr = dx.row_mut(j);
                                for tt in 0..t {
                                    dxr[tt] += wij * gr[tt];
                                }
                            }
                        }
                    }
                }
                Op::MatMul { a, b } => {
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    let (m, k) = av.shape();
                    let n = bv.cols();
                    {
                        // dA = g . B^T
                        let da = &mut grads[*a];
                        for ii in 0..m {
                            let gr = g.row(ii);
                            let dar = da.row_mut(ii);
                            for q in 0..k {
                                let br = bv.row(q);
                                let mut acc = 0.0;
                                for j in 0..n {
                                    acc += gr[j] * br[j];
                                }
                                dar[q] += acc;
                            }
                        }
                    }
                    {
                        // dB = A^T . g
                        let db = &mut grads[*b];
                        for ii in 0..m {
                            let gr = g.row(ii);
                            for q in 0..k {
                                let aiq = av.get(ii, q);
                                if aiq == 0.0 {
                                    continue;
                                }
                                let dbr = db.row_mut(q);
                                for j in 0..n {
                                    dbr[j] += aiq * gr[j];
                                }
                            }
                        }
                    }
                }
                Op::Transpose { x } => {
                    let dx = &mut grads[*x];
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            dx[(c, r)] += g.get(r, c);
                        }
                    }
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads[*a], &g, 1.0);
                    accumulate(&mut grads[*b], &g, 1.0);
                }
                Op::Sub { a, b } => {
                    accumulate(&mut grads[*a], &g, 1.0);
                    accumulate(&mut grads[*b], &g, -1.0);
                }
                Op::Scale { x, c } => {
                    accumulate(&mut grads[*x], &g, *c);
                }
                Op::AddScalar { x } => {
                    accumulate(&mut grads[*x], &g, 1.0);
                }
                Op::Sigmoid { x } => {
                    let yv = &self.nodes[i].value;
                    let dx = &mut grads[*x];
                    for idx in 0..g.len() {
                        let y = yv.data()[idx];
                        dx.data_mut()[idx] += g.data()[idx] * y * (1.0 - y);
                    }
                }
                Op::Relu { x } => {
                    let xv = &self.nodes[*x].value;
                    let dx = &mut grads[*x];
                    for idx in 0..g.len() {
                        if xv.data()[idx] > 0.0 {
                            dx.data_mut()[idx] += g.data()[idx];
                        }
                    }
                }
                Op::Conv1dSame {
                    kernel,
                    bias,
                    x,
                    width,
                } => {
                    let width = *width;
                    let pad = (width - 1) / 2;
                    let kv = &self.nodes[*kernel].value;
                    let xv = &self.nodes[*x].value;
                    let (out_ch, _) = kv.shape();
                    let (in_ch, t) = xv.shape();
                    {
                        let dk = &mut grads[*kernel];
                        for o in 0..out_ch {
                            let gr = g.row(o);
                            let dkr = dk.row_mut(o);
                            for ii in 0..in_ch {
                                let xr = xv.row(ii);
                                for j in 0..width {
                                    let mut acc = 0.0;
                                    for (tt, gv) in gr.iter().enumerate() {
                                        let u = tt as isize + j as isize - pad as isize;
                                        if u >= 0 && (u as usize) < t {
                                            acc += gv * xr[u as usize];
                                        }
                                    }
                                    dkr[ii * width + j] += acc;
                                }
                            }
                        }
                    }
                    {
                        let db = &mut grads[*bias];
                        for o in 0..out_ch {
                            db[(o, 0)] += g.row(o).iter().sum::<f64>();
                        }
                    }
                    {
                        let dx = &mut grads[*x];
                        for o in 0..out_ch {
                            let gr = g.row(o);
                            let kr = kv.row(o);
                            for ii in 0..in_ch {
                                let dxr = dx.row_mut(ii);
                                for j in 0..width {
                                    let kk = kr[ii * width + j];
                                    if kk == 0.0 {
                                        continue;
                                    }
                                    for (tt, gv) in gr.iter().enumerate() {
                                        let u = tt as isize + j as isize - pad as isize;
                                        if u >= 0 && (u as usize) < t {
                                            dxr[u as usize] += kk * gv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                Op::RowSlice { x, start, len } => {
                    let dx = &mut grads[*x];
                    for r in 0..*len {
                        for c in 0..g.cols() {
                            dx[(start + r, c)] += g.get(r, c);
                        }
                    }
                }
                Op::MeanCols { x, cols } => {
                    let inv = 1.0 / cols.len() as f64;
                    let dx = &mut grads[*x];
                    for r in 0..g.rows() {
                        let gv = g.get(r, 0) * inv;
                        for &c in cols {
                            dx[(r, c)] += gv;
                        }
                    }
                }
                Op::L2Normalize { x } => {
                    let xv = &self.nodes[*x].value;
                    let norm = frobenius(xv);
                    if norm >= NORM_GUARD {
                        // y = x / n  =>  dx = (g - y (y . g)) / n
                        let yv = &self.nodes[i].value;
                        let dot: f64 = yv
                            .data()
                            .iter()
                            .zip(g.data())
                            .map(|(y, gv)| y * gv)
                            .sum();
                        let dx = &mut grads[*x];
                        for idx in 0..g.len() {
                            let y = yv.data()[idx];
                            dx.data_mut()[idx] += (g.data()[idx] - y * dot) / norm;
                        }
                    }
                }
                Op::EuclideanDistance { a, b } => {
                    let d = self.nodes[i].value.get(0, 0);
                    if d >= NORM_GUARD {
                        let gv = g.get(0, 0) / d;
                        let av = &self.nodes[*a].value;
                        let bv = &self.nodes[*b].value;
                        let diffs: Vec<f64> = av
                            .data()
                            .iter()
                            .zip(bv.data())
                            .map(|(x, y)| x - y)
                            .collect();
                        {
                            let da = &mut grads[*a];
                            for (idx, diff) in diffs.iter().enumerate() {
                                da.data_mut()[idx] += gv * diff;
                            }
                        }
                        {
                            let db = &mut grads[*b];
                            for (idx, diff) in diffs.iter().enumerate() {
                                db.data_mut()[idx] -= gv * diff;
                            }
                        }
                    }
                }
                Op::SoftmaxCols { x } => {
                    let yv = &self.nodes[i].value;
                    let (r, c) = yv.shape();
                    let dx = &mut grads[*x];
                    for j in 0..c {
                        let mut dot = 0.0;
                        for ii in 0..r {
                            dot += yv.get(ii, j) * g.get(ii, j);
                        }
                        for ii in 0..r {
                            dx[(ii, j)] += yv.get(ii, j) * (g.get(ii, j) - dot);
                        }
                    }
                }
                Op::BinaryCrossEntropy {
                    p,
                    target,
                    mask,
                    reduction,
                } => {
                    let pv = &self.nodes[*p].value;
                    let count = mask.data().iter().filter(|&&m| m != 0.0).count();
                    if count > 0 {
                        let denom = match reduction {
                            Reduction::Sum => 1.0,
                            Reduction::Mean => count as f64,
                        };
                        let gv = g.get(0, 0) / denom;
                        let dp = &mut grads[*p];
                        for idx in 0..pv.len() {
                            if mask.data()[idx] == 0.0 {
                                continue;
                            }
                            let raw = pv.data()[idx];
                            // flat outside the clamp
                            if raw <= BCE_CLAMP || raw >= 1.0 - BCE_CLAMP {
                                continue;
                            }
                            let y = target.data()[idx];
                            dp.data_mut()[idx] += gv * (raw - y) / (raw * (1.0 - raw));
                        }
                    }
                }
                Op::LogLossPicks { p, picks } => {
                    if !picks.is_empty() {
                        let gv = g.get(0, 0) / picks.len() as f64;
                        let pv = &self.nodes[*p].value;
                        let dp = &mut grads[*p];
                        for &(r, c) in picks {
                            let raw = pv.get(r, c);
                            if raw > LOG_GUARD {
                                dp[(r, c)] -= gv / raw;
                            }
                        }
                    }
                }
                Op::MeanAll { x } => {
                    let n = self.nodes[*x].value.len() as f64;
                    let gv = g.get(0, 0) / n;
                    let dx = &mut grads[*x];
                    for v in dx.data_mut() {
                        *v += gv;
                    }
                }
            }
        }
        self.grads = grads;
        Ok(())
    }

    /// Accumulate the gradients of every bound parameter into the store.
    pub fn write_grads(&self, store: &mut ParamStore) -> Result<()> {
        if self.grads.is_empty() {
            return Err(Error::Config(
                "write_grads called before backward".to_string(),
            ));
        }
        for (idx, name) in &self.bound {
            store.accumulate_grad(name, &self.grads[*idx])?;
        }
        Ok(())
    }
}

fn frobenius(m: &Matrix) -> f64 {
    m.data().iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn accumulate(dst: &mut Matrix, src: &Matrix, scale: f64) {
    debug_assert_eq!(dst.shape(), src.shape());
    for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d += scale * s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        let v = stable_sigmoid(-1000.0);
        assert!(v > 0.0 && v <= 1e-6, "sigmoid(-1000) = {v}");
        assert!(v.is_finite());
        let w = stable_sigmoid(1000.0);
        assert!(w.is_finite() && w <= 1.0 && w > 1.0 - 1e-6);
        assert_eq!(stable_sigmoid(0.0), 0.5);
    }

    #[test]
    fn relu_at_zero_is_zero() {
        let mut g = Graph::new();
        let x = g.constant(Matrix::row_vector(&[0.0, -1.5, 2.0]));
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn affine_matches_hand_computation() {
        let mut g = Graph::new();
        let w = g.constant(Matrix::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5]]).unwrap());
        let b = g.constant(Matrix::col_vector(&[10.0, -10.0]));
        let x = g.constant(Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap());
        let y = g.affine(w, b, x).unwrap();
        assert_eq!(g.value(y).row(0), &[11.0, 14.0]);
        assert_eq!(g.value(y).row(1), &[-11.0, -9.0]);
    }

    #[test]
    fn affine_rejects_mismatched_shapes() {
        let mut g = Graph::new();
        let w = g.constant(Matrix::zeros(2, 3));
        let b = g.constant(Matrix::zeros(2, 1));
        let x = g.constant(Matrix::zeros(4, 5));
        assert!(g.affine(w, b, x).is_err());
    }

    #[test]
    fn conv1d_width_one_with_identity_kernel_is_identity() {
        let mut g = Graph::new();
        // 2 channels, kernel width 1, identity mapping
        let k = g.constant(Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let b = g.constant(Matrix::zeros(2, 1));
        let x = g.constant(
            Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap(),
        );
        let y = g.conv1d_same(k, b, x, 1).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn conv1d_rejects_even_width() {
        let mut g = Graph::new();
        let k = g.constant(Matrix::zeros(1, 2));
        let b = g.constant(Matrix::zeros(1, 1));
        let x = g.constant(Matrix::zeros(1, 4));
        assert!(matches!(
            g.conv1d_same(k, b, x, 2),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn conv1d_zero_pads_the_borders() {
        let mut g = Graph::new();
        // single channel, moving-sum kernel of width 3
        let k = g.constant(Matrix::row_vector(&[1.0, 1.0, 1.0]));
        let b = g.constant(Matrix::zeros(1, 1));
        let x = g.constant(Matrix::row_vector(&[1.0, 2.0, 3.0, 4.0]));
        let y = g.conv1d_same(k, b, x, 3).unwrap();
        assert_eq!(g.value(y).row(0), &[3.0, 6.0, 9.0, 7.0]);
    }

    #[test]
    fn softmax_columns_sum_to_one() {
        let mut g = Graph::new();
        let x = g.constant(
            Matrix::from_rows(&[vec![1.0, -50.0, 300.0], vec![2.0, 60.0, 300.0]]).unwrap(),
        );
        let y = g.softmax_cols(x);
        for j in 0..3 {
            let s: f64 = (0..2).map(|i| g.value(y).get(i, j)).sum();
            assert!((s - 1.0).abs() < 1e-12, "column {j} sums to {s}");
        }
        // equal logits split evenly even when huge
        assert!((g.value(y).get(0, 2) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn bce_handles_empty_mask() {
        let mut g = Graph::new();
        let p = g.constant(Matrix::filled(2, 2, 0.3));
        let target = Matrix::zeros(2, 2);
        let mask = Matrix::zeros(2, 2);
        let l = g
            .binary_cross_entropy(p, &target, &mask, Reduction::Mean)
            .unwrap();
        assert_eq!(g.value(l).get(0, 0), 0.0);
        g.backward(l).unwrap();
        assert!(g.grad(p).all_zero());
    }

    #[test]
    fn bce_at_half_is_ln2_per_entry() {
        let mut g = Graph::new();
        let p = g.constant(Matrix::filled(1, 4, 0.5));
        let target = Matrix::row_vector(&[1.0, 0.0, 1.0, 0.0]);
        let mask = Matrix::filled(1, 4, 1.0);
        let sum = g
            .binary_cross_entropy(p, &target, &mask, Reduction::Sum)
            .unwrap();
        let mean = g
            .binary_cross_entropy(p, &target, &mask, Reduction::Mean)
            .unwrap();
        assert!((g.value(sum).get(0, 0) - 4.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((g.value(mean).get(0, 0) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn l2_normalize_zero_vector_maps_to_zero() {
        let mut g = Graph::new();
        let x = g.constant(Matrix::col_vector(&[0.0, 0.0, 0.0]));
        let y = g.l2_normalize(x);
        assert!(g.value(y).all_zero());
        let d = g.euclidean_distance(y, y).unwrap();
        g.backward(d).unwrap();
        assert!(g.grad(x).all_zero());
    }

    #[test]
    fn euclidean_distance_of_identical_points_is_zero_with_zero_grad() {
        let mut g = Graph::new();
        let a = g.constant(Matrix::col_vector(&[1.0, 2.0]));
        let b = g.constant(Matrix::col_vector(&[1.0, 2.0]));
        let d = g.euclidean_distance(a, b).unwrap();
        assert_eq!(g.value(d).get(0, 0), 0.0);
        g.backward(d).unwrap();
        assert!(g.grad(a).all_zero());
        assert!(g.grad(b).all_zero());
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::new();
        let x = g.constant(Matrix::zeros(2, 2));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn gradients_accumulate_across_shared_use() {
        // loss = mean(x) + mean(x) => dx = 2/n
        let mut g = Graph::new();
        let x = g.constant(Matrix::filled(2, 2, 3.0));
        let m1 = g.mean_all(x);
        let m2 = g.mean_all(x);
        let loss = g.add(m1, m2).unwrap();
        g.backward(loss).unwrap();
        for &v in g.grad(x).data() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }
}
