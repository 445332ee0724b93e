//! A small reverse-mode gradient tape over dense row-major matrices.
//!
//! Leaves read directly from a flat parameter slice; [`Tape::backward`]
//! scatters the gradient of a scalar node back into a buffer laid out like
//! that slice. The op set is exactly what the tiny transformer needs.

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor shape does not match data");
        Self { rows, cols, data }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    /// `rows × cols` block of the parameter vector starting at `offset`.
    Param {
        offset: usize,
    },
    /// Selected rows of an embedding table stored at `offset`.
    Gather {
        offset: usize,
        ids: Vec<u32>,
    },
    Add(NodeId, NodeId),
    /// Adds a `1 × cols` row to every row.
    AddRow(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    /// `a · bᵀ`
    MatMulNt(NodeId, NodeId),
    Scale(NodeId, f64),
    SoftmaxRows(NodeId),
    /// Row-wise layer norm; caches the normalized input and 1/σ per row.
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gelu(NodeId),
    MeanRows(NodeId),
    SliceCols {
        x: NodeId,
        start: usize,
    },
    ConcatCols(Vec<NodeId>),
    /// `−ln softmax(logits)[label]` of a `1 × C` row; caches the probabilities.
    CrossEntropy {
        logits: NodeId,
        label: usize,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Records a forward computation against a borrowed parameter slice.
pub struct Tape<'p> {
    params: &'p [f64],
    nodes: Vec<Node>,
}

/// Numerically stable softmax of one row (max subtracted first).
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// `−ln softmax(logits)[label]`, written as `(max − z_label) + ln Σ exp(z − max)`
/// so that equal logits give exactly `ln C`.
pub fn cross_entropy_of(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|v| (v - max).exp()).sum();
    (max - logits[label]) + sum.ln()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [f64]) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn param(&mut self, offset: usize, rows: usize, cols: usize) -> NodeId {
        let data = self.params[offset..offset + rows * cols].to_vec();
        self.push(Op::Param { offset }, Tensor::from_vec(rows, cols, data))
    }

    pub fn gather(&mut self, offset: usize, width: usize, ids: &[u32]) -> NodeId {
        let mut data = Vec::with_capacity(ids.len() * width);
        for &id in ids {
            let start = offset + id as usize * width;
            data.extend_from_slice(&self.params[start..start + width]);
        }
        let value = Tensor::from_vec(ids.len(), width, data);
        self.push(
            Op::Gather {
                offset,
                ids: ids.to_vec(),
            },
            value,
        )
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!((x.rows, x.cols), (y.rows, y.cols));
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p + q).collect();
        let value = Tensor::from_vec(x.rows, x.cols, data);
        self.push(Op::Add(a, b), value)
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (x, r) = (self.value(a), self.value(row));
        assert_eq!((r.rows, r.cols), (1, x.cols));
        let mut value = x.clone();
        for chunk in value.data.chunks_mut(x.cols) {
            for (v, b) in chunk.iter_mut().zip(&r.data) {
                *v += b;
            }
        }
        self.push(Op::AddRow(a, row), value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.cols, y.rows);
        let mut out = Tensor::zeros(x.rows, y.cols);
        for i in 0..x.rows {
            let orow = &mut out.data[i * y.cols..(i + 1) * y.cols];
            for k in 0..x.cols {
                let xv = x.at(i, k);
                for (o, w) in orow.iter_mut().zip(y.row(k)) {
                    *o += xv * w;
                }
            }
        }
        self.push(Op::MatMul(a, b), out)
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.cols, y.cols);
        let mut out = Tensor::zeros(x.rows, y.rows);
        for i in 0..x.rows {
            for j in 0..y.rows {
                out.data[i * y.rows + j] = x.row(i).iter().zip(y.row(j)).map(|(p, q)| p * q).sum();
            }
        }
        self.push(Op::MatMulNt(a, b), out)
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let mut value = self.value(a).clone();
        value.data.iter_mut().for_each(|v| *v *= s);
        self.push(Op::Scale(a, s), value)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let mut value = self.value(a).clone();
        for row in value.data.chunks_mut(value.cols) {
            softmax_in_place(row);
        }
        self.push(Op::SoftmaxRows(a), value)
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        let (xv, g, b) = (self.value(x), self.value(gain), self.value(bias));
        let cols = xv.cols;
        assert_eq!((g.rows, g.cols), (1, cols));
        assert_eq!((b.rows, b.cols), (1, cols));
        let mut normalized = Vec::with_capacity(xv.data.len());
        let mut inv_std = Vec::with_capacity(xv.rows);
        let mut out = Tensor::zeros(xv.rows, cols);
        for r in 0..xv.rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            for (c, &x) in row.iter().enumerate() {
                let n = (x - mean) * is;
                normalized.push(n);
                out.data[r * cols + c] = n * g.data[c] + b.data[c];
            }
        }
        self.push(
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            },
            out,
        )
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let mut value = self.value(a).clone();
        value.data.iter_mut().for_each(|v| *v = gelu(*v));
        self.push(Op::Gelu(a), value)
    }

    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let mut out = Tensor::zeros(1, x.cols);
        if x.rows > 0 {
            for r in 0..x.rows {
                for (o, v) in out.data.iter_mut().zip(x.row(r)) {
                    *o += v;
                }
            }
            let n = x.rows as f64;
            out.data.iter_mut().for_each(|v| *v /= n);
        }
        self.push(Op::MeanRows(a), out)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, width: usize) -> NodeId {
        let x = self.value(a);
        assert!(start + width <= x.cols);
        let mut data = Vec::with_capacity(x.rows * width);
        for r in 0..x.rows {
            data.extend_from_slice(&x.row(r)[start..start + width]);
        }
        let value = Tensor::from_vec(x.rows, width, data);
        self.push(Op::SliceCols { x: a, start }, value)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let t = self.value(p);
                assert_eq!(t.rows, rows);
                data.extend_from_slice(t.row(r));
            }
        }
        let value = Tensor::from_vec(rows, cols, data);
        self.push(Op::ConcatCols(parts.to_vec()), value)
    }

    pub fn cross_entropy(&mut self, logits: NodeId, label: usize) -> NodeId {
        let z = self.value(logits);
        assert_eq!(z.rows, 1);
        let mut probs = z.data.clone();
        softmax_in_place(&mut probs);
        let loss = cross_entropy_of(&z.data, label);
        self.push(
            Op::CrossEntropy { logits, label, probs },
            Tensor::from_vec(1, 1, vec![loss]),
        )
    }

    /// Accumulates `seed · ∂output/∂params` into `param_grad`.
    pub fn backward(&self, output: NodeId, seed: f64, param_grad: &mut [f64]) {
        assert_eq!(param_grad.len(), self.params.len());
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        let out = &self.nodes[output.0].value;
        grads[output.0] = Some(vec![seed; out.data.len()]);

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let value = &node.value;
            match &node.op {
                Op::Param { offset } => {
                    for (p, gv) in param_grad[*offset..offset + g.len()].iter_mut().zip(&g) {
                        *p += gv;
                    }
                }
                Op::Gather { offset, ids } => {
                    let w = value.cols;
                    for (r, &id) in ids.iter().enumerate() {
                        let start = offset + id as usize * w;
                        for (p, gv) in param_grad[start..start + w].iter_mut().zip(&g[r * w..]) {
                            *p += gv;
                        }
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, &g);
                    accumulate(&mut grads, *b, &g);
                }
                Op::AddRow(a, row) => {
                    let mut gr = vec![0.0; value.cols];
                    for chunk in g.chunks(value.cols) {
                        for (s, v) in gr.iter_mut().zip(chunk) {
                            *s += v;
                        }
                    }
                    accumulate(&mut grads, *a, &g);
                    accumulate(&mut grads, *row, &gr);
                }
                Op::MatMul(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    // dA = G · Bᵀ, dB = Aᵀ · G
                    let mut da = vec![0.0; x.data.len()];
                    let mut db = vec![0.0; y.data.len()];
                    for i in 0..x.rows {
                        let grow = &g[i * y.cols..(i + 1) * y.cols];
                        for k in 0..x.cols {
                            let yrow = y.row(k);
                            da[i * x.cols + k] = grow.iter().zip(yrow).map(|(p, q)| p * q).sum();
                            let xv = x.at(i, k);
                            for (d, gv) in db[k * y.cols..(k + 1) * y.cols].iter_mut().zip(grow) {
                                *d += xv * gv;
                            }
                        }
                    }
                    accumulate(&mut grads, *a, &da);
                    accumulate(&mut grads, *b, &db);
                }
                Op::MatMulNt(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    // C = A·Bᵀ: dA = G·B, dB = Gᵀ·A
                    let mut da = vec![0.0; x.data.len()];
                    let mut db = vec![0.0; y.data.len()];
                    for i in 0..x.rows {
                        for j in 0..y.rows {
                            let gv = g[i * y.rows + j];
                            if gv == 0.0 {
                                continue;
                            }
                            for c in 0..x.cols {
                                da[i * x.cols + c] += gv * y.at(j, c);
                                db[j * y.cols + c] += gv * x.at(i, c);
                            }
                        }
                    }
                    accumulate(&mut grads, *a, &da);
                    accumulate(&mut grads, *b, &db);
                }
                Op::Scale(a, s) => {
                    let d: Vec<f64> = g.iter().map(|v| v * s).collect();
                    accumulate(&mut grads, *a, &d);
                }
                Op::SoftmaxRows(a) => {
                    let mut d = vec![0.0; g.len()];
                    for r in 0..value.rows {
                        let p = value.row(r);
                        let gr = &g[r * value.cols..(r + 1) * value.cols];
                        let dot: f64 = p.iter().zip(gr).map(|(pi, gi)| pi * gi).sum();
                        for c in 0..value.cols {
                            d[r * value.cols + c] = p[c] * (gr[c] - dot);
                        }
                    }
                    accumulate(&mut grads, *a, &d);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    normalized,
                    inv_std,
                } => {
                    let cols = value.cols;
                    let gv = &self.value(*gain).data;
                    let mut dx = vec![0.0; g.len()];
                    let mut dgain = vec![0.0; cols];
                    let mut dbias = vec![0.0; cols];
                    for r in 0..value.rows {
                        let gr = &g[r * cols..(r + 1) * cols];
                        let nr = &normalized[r * cols..(r + 1) * cols];
                        let mut mean_dn = 0.0;
                        let mut mean_dn_n = 0.0;
                        for c in 0..cols {
                            dgain[c] += gr[c] * nr[c];
                            dbias[c] += gr[c];
                            let dn = gr[c] * gv[c];
                            mean_dn += dn;
                            mean_dn_n += dn * nr[c];
                        }
                        mean_dn /= cols as f64;
                        mean_dn_n /= cols as f64;
                        for c in 0..cols {
                            let dn = gr[c] * gv[c];
                            dx[r * cols + c] = inv_std[r] * (dn - mean_dn - nr[c] * mean_dn_n);
                        }
                    }
                    accumulate(&mut grads, *x, &dx);
                    accumulate(&mut grads, *gain, &dgain);
                    accumulate(&mut grads, *bias, &dbias);
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let d: Vec<f64> = g.iter().zip(&x.data).map(|(gv, xv)| gv * gelu_grad(*xv)).collect();
                    accumulate(&mut grads, *a, &d);
                }
                Op::MeanRows(a) => {
                    let x = self.value(*a);
                    if x.rows > 0 {
                        let n = x.rows as f64;
                        let mut d = Vec::with_capacity(x.data.len());
                        for _ in 0..x.rows {
                            d.extend(g.iter().map(|v| v / n));
                        }
                        accumulate(&mut grads, *a, &d);
                    }
                }
                Op::SliceCols { x, start } => {
                    let src = self.value(*x);
                    let mut d = vec![0.0; src.data.len()];
                    for r in 0..src.rows {
                        let dst = &mut d[r * src.cols + start..r * src.cols + start + value.cols];
                        dst.copy_from_slice(&g[r * value.cols..(r + 1) * value.cols]);
                    }
                    accumulate(&mut grads, *x, &d);
                }
                Op::ConcatCols(parts) => {
                    let mut col = 0;
                    for &p in parts {
                        let t = self.value(p);
                        let mut d = Vec::with_capacity(t.data.len());
                        for r in 0..t.rows {
                            let base = r * value.cols + col;
                            d.extend_from_slice(&g[base..base + t.cols]);
                        }
                        accumulate(&mut grads, p, &d);
                        col += t.cols;
                    }
                }
                Op::CrossEntropy { logits, label, probs } => {
                    let s = g[0];
                    let mut d: Vec<f64> = probs.iter().map(|p| s * p).collect();
                    d[*label] -= s;
                    accumulate(&mut grads, *logits, &d);
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: NodeId, d: &[f64]) {
    match &mut grads[id.0] {
        Some(acc) => acc.iter_mut().zip(d).for_each(|(a, v)| *a += v),
        slot @ None => *slot = Some(d.to_vec()),
    }
}
