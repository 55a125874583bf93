use std::collections::HashMap;
use std::ops::Range;

use ndarray::{s, Array2, Axis, Zip};

use super::params::{ParamId, ParameterStore};
use super::{Mat, NumError};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Input,
    Param,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    Rows(Var, Vec<usize>),
    PickRows(Vec<Var>, Vec<usize>),
    Softmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Mat, inv_std: Vec<f64> },
    /// Keeps the inner tanh for the backward pass.
    Gelu(Var, Mat),
    Tanh(Var),
    Reshape(Var),
    Attention { q: Var, k: Var, v: Var, segments: Vec<Range<usize>>, heads: usize, probs: Vec<Mat> },
    /// Scalar output with precomputed d(out)/d(input) per input.
    Scalar(Vec<(Var, Mat)>),
}

struct Node {
    value: Mat,
    op: Op,
    needs_grad: bool,
}

/// Tape of one forward computation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

fn shape(m: &Mat) -> (usize, usize) {
    m.dim()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        shape(self.value(v))
    }

    /// Value of a 1×1 variable.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, value: Mat) -> Var {
        self.push(value, Op::Input, false)
    }

    /// Trainable parameter. Repeated calls for the same id share one leaf.
    pub fn param(&mut self, store: &ParameterStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param, true);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(NumError::Shape { op: "matmul", shapes: vec![sa, sb] });
        }
        let v = self.value(a).dot(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.1 {
            return Err(NumError::Shape { op: "matmul_bt", shapes: vec![sa, sb] });
        }
        let v = self.value(a).dot(&self.value(b).t());
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::MatMulBt(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(NumError::Shape { op: "add", shapes: vec![sa, sb] });
        }
        let v = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Add(a, b), ng))
    }

    /// Adds the 1×n row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.0 != 1 || sa.1 != sb.1 {
            return Err(NumError::Shape { op: "add_row", shapes: vec![sa, sb] });
        }
        let v = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::AddRow(a, b), ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(NumError::Shape { op: "mul", shapes: vec![sa, sb] });
        }
        let v = self.value(a) * self.value(b);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Mul(a, b), ng))
    }

    /// Multiplies every row of `a` elementwise by the 1×n row `b`.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.0 != 1 || sa.1 != sb.1 {
            return Err(NumError::Shape { op: "mul_row", shapes: vec![sa, sb] });
        }
        let v = self.value(a) * self.value(b);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::MulRow(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, k), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        let shapes: Vec<_> = parts.iter().map(|&p| self.shape(p)).collect();
        if parts.is_empty() || shapes.iter().any(|s| s.0 != shapes[0].0) {
            return Err(NumError::Shape { op: "concat_cols", shapes });
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("rows checked");
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(v, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        let shapes: Vec<_> = parts.iter().map(|&p| self.shape(p)).collect();
        if parts.is_empty() || shapes.iter().any(|s| s.1 != shapes[0].1) {
            return Err(NumError::Shape { op: "concat_rows", shapes });
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("cols checked");
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(v, Op::ConcatRows(parts.to_vec()), ng))
    }

    /// Columns `start..start + width`.
    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var, NumError> {
        let sa = self.shape(a);
        if start + width > sa.1 || width == 0 {
            return Err(NumError::Argument { op: "slice_cols", msg: format!("columns {start}..{} of {sa:?}", start + width) });
        }
        let v = self.value(a).slice(s![.., start..start + width]).to_owned();
        let ng = self.ng(a);
        Ok(self.push(v, Op::SliceCols(a, start), ng))
    }

    /// Gathers rows by index; rows may repeat. Serves as embedding lookup.
    pub fn rows(&mut self, a: Var, idx: &[usize]) -> Result<Var, NumError> {
        let sa = self.shape(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= sa.0) {
            return Err(NumError::Argument { op: "rows", msg: format!("row {bad} of {sa:?}") });
        }
        if idx.is_empty() {
            return Err(NumError::Argument { op: "rows", msg: "no rows selected".into() });
        }
        let v = self.value(a).select(Axis(0), idx);
        let ng = self.ng(a);
        Ok(self.push(v, Op::Rows(a, idx.to_vec()), ng))
    }

    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumError> {
        self.rows(table, ids)
    }

    /// Row `i` of the result is row `i` of `sources[which[i]]`.
    pub fn pick_rows(&mut self, sources: &[Var], which: &[usize]) -> Result<Var, NumError> {
        let shapes: Vec<_> = sources.iter().map(|&p| self.shape(p)).collect();
        if sources.is_empty() || shapes.iter().any(|s| *s != shapes[0]) || shapes[0].0 != which.len() {
            return Err(NumError::Shape { op: "pick_rows", shapes });
        }
        if let Some(&bad) = which.iter().find(|&&w| w >= sources.len()) {
            return Err(NumError::Argument { op: "pick_rows", msg: format!("source {bad} of {}", sources.len()) });
        }
        let mut v = Array2::zeros(shapes[0]);
        for (i, &w) in which.iter().enumerate() {
            v.row_mut(i).assign(&self.value(sources[w]).row(i));
        }
        let ng = sources.iter().any(|&p| self.ng(p));
        Ok(self.push(v, Op::PickRows(sources.to_vec(), which.to_vec()), ng))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let v = softmax_rows(self.value(a));
        let ng = self.ng(a);
        self.push(v, Op::Softmax(a), ng)
    }

    /// Row-wise normalization to zero mean and unit variance, then `gamma`
    /// scale and `beta` shift (both 1×n).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, NumError> {
        let (sx, sg, sb) = (self.shape(x), self.shape(gamma), self.shape(beta));
        if sg != (1, sx.1) || sb != (1, sx.1) {
            return Err(NumError::Shape { op: "layer_norm", shapes: vec![sx, sg, sb] });
        }
        let (xhat, inv_std) = normalize_rows(self.value(x), eps);
        let v = &xhat * self.value(gamma) + self.value(beta);
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push(v, Op::LayerNorm { x, gamma, beta, xhat, inv_std }, ng))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let t = x.mapv(|x| (GELU_C * (x + GELU_A * x * x * x)).tanh());
        let v = Zip::from(x).and(&t).map_collect(|&x, &t| 0.5 * x * (1.0 + t));
        let ng = self.ng(a);
        self.push(v, Op::Gelu(a, t), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        let ng = self.ng(a);
        self.push(v, Op::Tanh(a), ng)
    }

    /// Sum of all entries, as 1×1.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.value(a).sum();
        let ones = Array2::ones(self.shape(a));
        self.scalar_op(&[a], v, vec![ones]).expect("shapes match")
    }

    /// Summed cross-entropy over rows with a label; unlabeled rows
    /// contribute nothing. Returns 1×1.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[Option<usize>]) -> Result<Var, NumError> {
        let sl = self.shape(logits);
        if labels.len() != sl.0 {
            return Err(NumError::Argument { op: "cross_entropy", msg: format!("{} labels for {sl:?}", labels.len()) });
        }
        if let Some(bad) = labels.iter().flatten().find(|&&c| c >= sl.1) {
            return Err(NumError::Argument { op: "cross_entropy", msg: format!("class {bad} of {}", sl.1) });
        }
        let lv = self.value(logits);
        let mut grad = softmax_rows(lv);
        let mut loss = 0.0;
        for (i, l) in labels.iter().enumerate() {
            match l {
                Some(c) => {
                    let row = lv.row(i);
                    let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    loss += m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln() - row[*c];
                    grad[[i, *c]] -= 1.0;
                }
                None => grad.row_mut(i).fill(0.0),
            }
        }
        self.scalar_op(&[logits], loss, vec![grad])
    }

    /// Records a scalar-valued function of `inputs` whose gradient with
    /// respect to each input has already been computed.
    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, NumError> {
        let sa = self.shape(a);
        if sa.0 * sa.1 != rows * cols {
            return Err(NumError::Shape { op: "reshape", shapes: vec![sa, (rows, cols)] });
        }
        let v = self.value(a).as_standard_layout().into_owned().into_shape_with_order((rows, cols)).expect("sizes checked");
        let ng = self.ng(a);
        Ok(self.push(v, Op::Reshape(a), ng))
    }

    /// Multi-head scaled dot-product attention restricted to row segments:
    /// rows of one segment attend only to rows of the same segment. `q` and
    /// `k` split into `heads` column blocks of width `dk`, `v` into blocks of
    /// width `dv`; scores are scaled by `1/sqrt(dk)`. Rows outside every
    /// segment produce zeros.
    pub fn segment_attention(&mut self, q: Var, k: Var, v: Var, segments: &[Range<usize>], heads: usize) -> Result<Var, NumError> {
        let (sq, sk, sv) = (self.shape(q), self.shape(k), self.shape(v));
        if heads == 0 || sq != sk || sq.0 != sv.0 || sq.1 % heads != 0 || sv.1 % heads != 0 {
            return Err(NumError::Shape { op: "segment_attention", shapes: vec![sq, sk, sv] });
        }
        if let Some(bad) = segments.iter().find(|r| r.end > sq.0 || r.is_empty()) {
            return Err(NumError::Argument { op: "segment_attention", msg: format!("segment {bad:?} of {} rows", sq.0) });
        }
        let mut sorted: Vec<_> = segments.to_vec();
        sorted.sort_by_key(|r| r.start);
        if sorted.windows(2).any(|w| w[0].end > w[1].start) {
            return Err(NumError::Argument { op: "segment_attention", msg: "segments overlap".into() });
        }
        let (dk, dv) = (sq.1 / heads, sv.1 / heads);
        let scale = 1.0 / (dk as f64).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut out = Array2::zeros((sq.0, sv.1));
        let mut probs = Vec::with_capacity(segments.len() * heads);
        for seg in segments {
            for h in 0..heads {
                let qh = qv.slice(s![seg.clone(), h * dk..(h + 1) * dk]);
                let kh = kv.slice(s![seg.clone(), h * dk..(h + 1) * dk]);
                let vh = vv.slice(s![seg.clone(), h * dv..(h + 1) * dv]);
                let a = softmax_rows(&(qh.dot(&kh.t()) * scale));
                out.slice_mut(s![seg.clone(), h * dv..(h + 1) * dv]).assign(&a.dot(&vh));
                probs.push(a);
            }
        }
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        Ok(self.push(out, Op::Attention { q, k, v, segments: segments.to_vec(), heads, probs }, ng))
    }

    /// Attention weights recorded by [`segment_attention`](Self::segment_attention),
    /// segment-major then head.
    pub fn attention_probs(&self, v: Var) -> Option<&[Mat]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    pub fn scalar_op(&mut self, inputs: &[Var], value: f64, jacobians: Vec<Mat>) -> Result<Var, NumError> {
        if inputs.len() != jacobians.len() {
            return Err(NumError::Argument { op: "scalar_op", msg: "one jacobian per input".into() });
        }
        for (&v, j) in inputs.iter().zip(&jacobians) {
            if self.shape(v) != shape(j) {
                return Err(NumError::Shape { op: "scalar_op", shapes: vec![self.shape(v), shape(j)] });
            }
        }
        let ng = inputs.iter().any(|&v| self.ng(v));
        let pairs = inputs.iter().copied().zip(jacobians).collect();
        Ok(self.push(Array2::from_elem((1, 1), value), Op::Scalar(pairs), ng))
    }

    /// Reverse pass from the 1×1 variable `loss`.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones((1, 1)));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Grads { grads, params: self.params.iter().map(|(&p, &v)| (p, v)).collect() }
    }

    fn propagate(&self, node: &Node, g: &Mat, grads: &mut [Option<Mat>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut Mat)| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| Array2::zeros(self.nodes[v.0].value.dim()));
            f(slot);
        };
        match &node.op {
            Op::Input | Op::Param => {}
            Op::MatMul(a, b) => {
                acc(*a, &mut |s| ndarray::linalg::general_mat_mul(1.0, g, &val(*b).t(), 1.0, s));
                acc(*b, &mut |s| ndarray::linalg::general_mat_mul(1.0, &val(*a).t(), g, 1.0, s));
            }
            Op::MatMulBt(a, b) => {
                acc(*a, &mut |s| ndarray::linalg::general_mat_mul(1.0, g, val(*b), 1.0, s));
                acc(*b, &mut |s| ndarray::linalg::general_mat_mul(1.0, &g.t(), val(*a), 1.0, s));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |s| *s += g);
                acc(*b, &mut |s| *s += g);
            }
            Op::AddRow(a, b) => {
                acc(*a, &mut |s| *s += g);
                acc(*b, &mut |s| *s += &g.sum_axis(Axis(0)));
            }
            Op::Mul(a, b) => {
                acc(*a, &mut |s| Zip::from(s).and(g).and(val(*b)).for_each(|s, &g, &y| *s += g * y));
                acc(*b, &mut |s| Zip::from(s).and(g).and(val(*a)).for_each(|s, &g, &x| *s += g * x));
            }
            Op::MulRow(a, b) => {
                acc(*a, &mut |s| *s += &(g * val(*b)));
                acc(*b, &mut |s| *s += &(g * val(*a)).sum_axis(Axis(0)));
            }
            Op::Scale(a, k) => acc(*a, &mut |s| s.scaled_add(*k, g)),
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = val(p).ncols();
                    acc(p, &mut |s| *s += &g.slice(s![.., off..off + w]));
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let h = val(p).nrows();
                    acc(p, &mut |s| *s += &g.slice(s![off..off + h, ..]));
                    off += h;
                }
            }
            Op::SliceCols(a, start) => {
                let w = g.ncols();
                acc(*a, &mut |s| {
                    let mut view = s.slice_mut(s![.., *start..*start + w]);
                    view += g;
                });
            }
            Op::Rows(a, idx) => acc(*a, &mut |s| {
                for (r, &i) in idx.iter().enumerate() {
                    let mut row = s.row_mut(i);
                    row += &g.row(r);
                }
            }),
            Op::PickRows(sources, which) => {
                for (k, &src) in sources.iter().enumerate() {
                    acc(src, &mut |s| {
                        for (i, &w) in which.iter().enumerate() {
                            if w == k {
                                let mut row = s.row_mut(i);
                                row += &g.row(i);
                            }
                        }
                    });
                }
            }
            Op::Softmax(a) => {
                let y = &node.value;
                acc(*a, &mut |s| {
                    for ((mut srow, grow), yrow) in s.rows_mut().into_iter().zip(g.rows()).zip(y.rows()) {
                        let dot = grow.dot(&yrow);
                        Zip::from(&mut srow).and(&grow).and(&yrow).for_each(|s, &g, &y| *s += y * (g - dot));
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let gam = val(*gamma);
                acc(*x, &mut |s| {
                    let n = xhat.ncols() as f64;
                    for (r, ((mut srow, grow), xrow)) in s.rows_mut().into_iter().zip(g.rows()).zip(xhat.rows()).enumerate() {
                        let dxhat = &grow * &gam.row(0);
                        let sum = dxhat.sum();
                        let sum_x = dxhat.dot(&xrow);
                        let k = inv_std[r] / n;
                        Zip::from(&mut srow).and(&dxhat).and(&xrow).for_each(|s, &d, &xh| *s += k * (n * d - sum - xh * sum_x));
                    }
                });
                acc(*gamma, &mut |s| *s += &(g * xhat).sum_axis(Axis(0)));
                acc(*beta, &mut |s| *s += &g.sum_axis(Axis(0)));
            }
            Op::Gelu(a, t) => acc(*a, &mut |s| {
                Zip::from(s).and(g).and(val(*a)).and(t).for_each(|s, &g, &x, &t| {
                    let d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                    *s += g * d;
                })
            }),
            Op::Tanh(a) => acc(*a, &mut |s| Zip::from(s).and(g).and(&node.value).for_each(|s, &g, &y| *s += g * (1.0 - y * y))),
            Op::Reshape(a) => acc(*a, &mut |s| {
                let shaped = g.as_standard_layout().into_owned().into_shape_with_order(s.dim()).expect("same size");
                *s += &shaped;
            }),
            Op::Attention { q, k, v, segments, heads, probs } => {
                let (qv, kv, vv) = (val(*q), val(*k), val(*v));
                let (dk, dv) = (qv.ncols() / heads, vv.ncols() / heads);
                let scale = 1.0 / (dk as f64).sqrt();
                let mut dq = Array2::zeros(qv.dim());
                let mut dk_ = Array2::zeros(kv.dim());
                let mut dv_ = Array2::zeros(vv.dim());
                for (si, seg) in segments.iter().enumerate() {
                    for h in 0..*heads {
                        let a = &probs[si * heads + h];
                        let (qc, vc) = (h * dk..(h + 1) * dk, h * dv..(h + 1) * dv);
                        let go = g.slice(s![seg.clone(), vc.clone()]);
                        let vh = vv.slice(s![seg.clone(), vc.clone()]);
                        dv_.slice_mut(s![seg.clone(), vc]).assign(&a.t().dot(&go));
                        let da = go.dot(&vh.t());
                        let mut ds = a * &da;
                        for (mut row, arow) in ds.rows_mut().into_iter().zip(a.rows()) {
                            let sum = row.sum();
                            Zip::from(&mut row).and(&arow).for_each(|d, &p| *d -= p * sum);
                        }
                        ds *= scale;
                        let kh = kv.slice(s![seg.clone(), qc.clone()]);
                        let qh = qv.slice(s![seg.clone(), qc.clone()]);
                        dq.slice_mut(s![seg.clone(), qc.clone()]).assign(&ds.dot(&kh));
                        dk_.slice_mut(s![seg.clone(), qc]).assign(&ds.t().dot(&qh));
                    }
                }
                acc(*q, &mut |s| *s += &dq);
                acc(*k, &mut |s| *s += &dk_);
                acc(*v, &mut |s| *s += &dv_);
            }
            Op::Scalar(pairs) => {
                let k = g[[0, 0]];
                for (v, j) in pairs {
                    acc(*v, &mut |s| s.scaled_add(k, j));
                }
            }
        }
    }
}

/// Gradients from one reverse pass.
pub struct Grads {
    grads: Vec<Option<Mat>>,
    params: Vec<(ParamId, Var)>,
}

impl Grads {
    /// Gradient of the loss with respect to `v`, if `v` influences it.
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }

    /// Adds parameter gradients into the store's accumulators.
    pub fn accumulate_into(&self, store: &mut ParameterStore) {
        for &(p, v) in &self.params {
            if let Some(g) = &self.grads[v.0] {
                *store.grad_mut(p) += g;
            }
        }
    }
}

pub(crate) fn softmax_rows(m: &Mat) -> Mat {
    let mut out = m.clone();
    for mut row in out.rows_mut() {
        let mx = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|x| (x - mx).exp());
        let z = row.sum();
        row /= z;
    }
    out
}

fn normalize_rows(m: &Mat, eps: f64) -> (Mat, Vec<f64>) {
    let n = m.ncols() as f64;
    let mut out = m.clone();
    let mut inv = Vec::with_capacity(m.nrows());
    for mut row in out.rows_mut() {
        let mean = row.sum() / n;
        row -= mean;
        let var = row.dot(&row) / n;
        let k = 1.0 / (var + eps).sqrt();
        row *= k;
        inv.push(k);
    }
    (out, inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::new();
        let x = g.input(array![[1.0, 2.0, 3.0], [-1000.0, 0.0, 1000.0], [0.0, 0.0, 0.0]]);
        let y = g.softmax(x);
        for row in g.value(y).rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_moments() {
        let mut g = Graph::new();
        let x = g.input(array![[1.0, 2.0, 3.0, 10.0], [5.0, -5.0, 0.5, 0.25]]);
        let gamma = g.input(Array2::ones((1, 4)));
        let beta = g.input(Array2::zeros((1, 4)));
        let y = g.layer_norm(x, gamma, beta, 1e-12).unwrap();
        for row in g.value(y).rows() {
            let mean = row.sum() / 4.0;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn cross_entropy_of_confident_correct_prediction_is_zero() {
        let mut g = Graph::new();
        let x = g.input(array![[0.0, 800.0, 0.0], [1.0, 2.0, 3.0]]);
        let l = g.cross_entropy(x, &[Some(1), None]).unwrap();
        assert_eq!(g.scalar(l), 0.0);
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut g = Graph::new();
        let a = g.input(Array2::zeros((2, 3)));
        let b = g.input(Array2::zeros((2, 3)));
        let e = g.matmul(a, b).unwrap_err();
        assert_eq!(e, NumError::Shape { op: "matmul", shapes: vec![(2, 3), (2, 3)] });
        assert!(e.to_string().contains("matmul"));
    }

    #[test]
    fn inputs_get_no_gradient() {
        let mut store = ParameterStore::new();
        let w = store.add("w", array![[2.0]]).unwrap();
        let mut g = Graph::new();
        let x = g.input(array![[3.0]]);
        let wv = g.param(&store, w);
        let y = g.matmul(x, wv).unwrap();
        let l = g.sum(y);
        let grads = g.backward(l);
        assert!(grads.get(x).is_none());
        assert_eq!(grads.get(wv).unwrap()[[0, 0]], 3.0);
    }
}
