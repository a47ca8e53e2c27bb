//! Reverse-mode automatic differentiation over vector-valued nodes.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles during the
//! forward pass. [`Tape::backward`] walks the record in reverse, producing
//! gradients for every parameter that the loss depends on. Parameter values
//! are read from a borrowed [`ParamStore`] and cached once per tape.

use super::{Gradients, ParamId, ParamStore, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatVec(Var, Var),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddN(Vec<Var>),
    Scale(Var, f64),
    /// a * s where s is a one-element var
    ScaleBy(Var, Var),
    /// mul * a + add, elementwise constants
    Affine(Var, f64),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Sum(Var),
    Dot(Var, Var),
    Pick(Var, usize),
    Softmax(Var),
    LogSoftmax(Var),
    Sigmoid(Var),
    Tanh(Var),
    LeakyRelu(Var, f64),
    Log(Var),
    WeightedSum(Var, Vec<Var>),
    ScatterAdd(Var, Vec<usize>),
    Gather(Var, Vec<usize>),
    Normalize(Var),
}

struct Node {
    /// `None` for parameters, whose values are read from the store.
    value: Option<Tensor>,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

fn mismatch<T>(msg: String) -> Result<T, TensorError> {
    Err(TensorError::ShapeMismatch(msg))
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::with_capacity(1024),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.get(*id),
            (None, _) => unreachable!("only parameter nodes borrow their value"),
        }
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.value(v).data()
    }

    /// Value of a one-element var.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data()[0]
    }

    fn vlen(&self, v: Var) -> usize {
        self.value(v).len()
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn vector(&mut self, data: Vec<f64>) -> Var {
        self.constant(Tensor::vector(data))
    }

    pub fn zeros(&mut self, n: usize) -> Var {
        self.vector(vec![0.0; n])
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var, TensorError> {
        let (r, c) = self.value(w).dims2()?;
        if self.vlen(x) != c {
            return mismatch(format!("matvec {r}x{c} by vector of {}", self.vlen(x)));
        }
        let wd = self.data(w);
        let xd = self.data(x);
        let out: Vec<f64> = (0..r)
            .map(|i| {
                wd[i * c..(i + 1) * c]
                    .iter()
                    .zip(xd)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        Ok(self.push(Tensor::vector(out), Op::MatVec(w, x)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    fn same_len(&self, a: Var, b: Var, what: &str) -> Result<usize, TensorError> {
        let (la, lb) = (self.vlen(a), self.vlen(b));
        if la != lb {
            return mismatch(format!("{what}: lengths {la} and {lb}"));
        }
        Ok(la)
    }

    fn zip_with(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var, TensorError> {
        self.same_len(a, b, what)?;
        let out: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Tensor::new(shape, out)?, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_with(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_with(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise sum of equally sized vectors. An empty list yields a zero
    /// vector of length `len`.
    pub fn add_n(&mut self, items: &[Var], len: usize) -> Result<Var, TensorError> {
        if items.is_empty() {
            return Ok(self.zeros(len));
        }
        if items.len() == 1 && self.vlen(items[0]) == len {
            return Ok(items[0]);
        }
        let mut out = vec![0.0; len];
        for &v in items {
            if self.vlen(v) != len {
                return mismatch(format!("add_n: length {} vs {len}", self.vlen(v)));
            }
            for (o, x) in out.iter_mut().zip(self.data(v)) {
                *o += x;
            }
        }
        Ok(self.push(Tensor::vector(out), Op::AddN(items.to_vec())))
    }

    /// Elementwise mean of a non-empty list of equally sized vectors.
    pub fn mean_n(&mut self, items: &[Var]) -> Result<Var, TensorError> {
        let Some(&first) = items.first() else {
            return Err(TensorError::EmptySet("mean of no vectors".into()));
        };
        let len = self.vlen(first);
        let sum = self.add_n(items, len)?;
        Ok(self.scale(sum, 1.0 / items.len() as f64))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out: Vec<f64> = self.data(a).iter().map(|x| x * factor).collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Tensor { shape, data: out }, Op::Scale(a, factor))
    }

    /// Multiplies every entry of `a` by the one-element var `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var, TensorError> {
        if self.vlen(s) != 1 {
            return mismatch("scale_by expects a one-element scale".into());
        }
        let k = self.scalar(s);
        let out: Vec<f64> = self.data(a).iter().map(|x| x * k).collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Tensor { shape, data: out }, Op::ScaleBy(a, s)))
    }

    /// `mul * a + add` elementwise.
    pub fn affine(&mut self, a: Var, mul: f64, add: f64) -> Var {
        let out: Vec<f64> = self.data(a).iter().map(|x| mul * x + add).collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Tensor { shape, data: out }, Op::Affine(a, mul))
    }

    pub fn concat(&mut self, items: &[Var]) -> Var {
        let mut out = Vec::with_capacity(items.iter().map(|&v| self.vlen(v)).sum());
        for &v in items {
            out.extend_from_slice(self.data(v));
        }
        self.push(Tensor::vector(out), Op::Concat(items.to_vec()))
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        if start + len > self.vlen(a) {
            return mismatch(format!(
                "slice {start}..{} of length {}",
                start + len,
                self.vlen(a)
            ));
        }
        let out = self.data(a)[start..start + len].to_vec();
        Ok(self.push(Tensor::vector(out), Op::Slice(a, start)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.vlen(a).max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_len(a, b, "dot")?;
        let s = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).sum();
        Ok(self.push(Tensor::scalar(s), Op::Dot(a, b)))
    }

    pub fn pick(&mut self, a: Var, index: usize) -> Result<Var, TensorError> {
        if index >= self.vlen(a) {
            return mismatch(format!("pick {index} of length {}", self.vlen(a)));
        }
        let x = self.data(a)[index];
        Ok(self.push(Tensor::scalar(x), Op::Pick(a, index)))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let out = softmax_values(self.data(a));
        self.push(Tensor::vector(out), Op::Softmax(a))
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let d = self.data(a);
        let m = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + d.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        let out = d.iter().map(|x| x - lse).collect();
        self.push(Tensor::vector(out), Op::LogSoftmax(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.data(a).iter().map(|&x| sigmoid(x)).collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Tensor { shape, data: out }, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.data(a).iter().map(|x| x.tanh()).collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Tensor { shape, data: out }, Op::Tanh(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self
            .data(a)
            .iter()
            .map(|&x| if x > 0.0 { x } else { slope * x })
            .collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Tensor { shape, data: out }, Op::LeakyRelu(a, slope))
    }

    /// Natural log; inputs are floored at the smallest positive normal so a
    /// zero probability yields a large finite loss instead of infinity.
    pub fn log(&mut self, a: Var) -> Var {
        let out = self
            .data(a)
            .iter()
            .map(|&x| x.max(f64::MIN_POSITIVE).ln())
            .collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Tensor { shape, data: out }, Op::Log(a))
    }

    /// `sum_i weights[i] * items[i]`.
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Result<Var, TensorError> {
        if self.vlen(weights) != items.len() || items.is_empty() {
            return mismatch(format!(
                "weighted_sum: {} weights for {} items",
                self.vlen(weights),
                items.len()
            ));
        }
        let len = self.vlen(items[0]);
        let mut out = vec![0.0; len];
        for (k, &v) in items.iter().enumerate() {
            if self.vlen(v) != len {
                return mismatch("weighted_sum: ragged items".into());
            }
            let w = self.data(weights)[k];
            for (o, x) in out.iter_mut().zip(self.data(v)) {
                *o += w * x;
            }
        }
        Ok(self.push(Tensor::vector(out), Op::WeightedSum(weights, items.to_vec())))
    }

    /// Output of length `size` with `out[targets[i]] += a[i]`.
    pub fn scatter_add(&mut self, a: Var, targets: &[usize], size: usize) -> Result<Var, TensorError> {
        if targets.len() != self.vlen(a) || targets.iter().any(|&t| t >= size) {
            return mismatch("scatter_add: bad targets".into());
        }
        let mut out = vec![0.0; size];
        for (&t, &x) in targets.iter().zip(self.data(a)) {
            out[t] += x;
        }
        Ok(self.push(Tensor::vector(out), Op::ScatterAdd(a, targets.to_vec())))
    }

    /// `out[i] = a[indices[i]]`.
    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Result<Var, TensorError> {
        let n = self.vlen(a);
        if indices.iter().any(|&i| i >= n) {
            return mismatch(format!("gather index out of range for length {n}"));
        }
        let d = self.data(a);
        let out = indices.iter().map(|&i| d[i]).collect();
        Ok(self.push(Tensor::vector(out), Op::Gather(a, indices.to_vec())))
    }

    /// Divides a non-negative vector by its sum.
    pub fn normalize(&mut self, a: Var) -> Result<Var, TensorError> {
        let total: f64 = self.data(a).iter().sum();
        if !(total > 0.0) {
            return Err(TensorError::NonFinite("normalize of a zero-sum vector".into()));
        }
        let out = self.data(a).iter().map(|x| x / total).collect();
        Ok(self.push(Tensor::vector(out), Op::Normalize(a)))
    }

    pub fn check_finite(&self, v: Var, what: &str) -> Result<(), TensorError> {
        if self.value(v).is_finite() {
            Ok(())
        } else {
            Err(TensorError::NonFinite(what.to_string()))
        }
    }

    /// Backpropagates from a one-element loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        if self.vlen(loss) != 1 {
            return mismatch(format!("loss must be scalar, has {} values", self.vlen(loss)));
        }
        let mut grads = Gradients::zeros_like(self.params);
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        let mut reached = false;

        fn acc(adj: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
            f(adj[v.0].as_mut().expect("gradient buffer allocated"));
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            let ensure = |adj: &mut [Option<Vec<f64>>], v: Var| {
                if adj[v.0].is_none() {
                    adj[v.0] = Some(vec![0.0; self.vlen(v)]);
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    reached = true;
                    for (a, b) in grads.get_mut(*id).iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                Op::MatVec(w, x) => {
                    let (r, c) = self.value(*w).dims2()?;
                    let wd = self.data(*w);
                    let xd = self.data(*x);
                    ensure(&mut adj, *w);
                    acc(&mut adj, *w, |gw| {
                        for i in 0..r {
                            let gi = g[i];
                            if gi != 0.0 {
                                for (o, &xv) in gw[i * c..(i + 1) * c].iter_mut().zip(xd) {
                                    *o += gi * xv;
                                }
                            }
                        }
                    });
                    ensure(&mut adj, *x);
                    acc(&mut adj, *x, |gx| {
                        for i in 0..r {
                            let gi = g[i];
                            if gi != 0.0 {
                                for (o, &wv) in gx.iter_mut().zip(&wd[i * c..(i + 1) * c]) {
                                    *o += gi * wv;
                                }
                            }
                        }
                    });
                }
                Op::MatMul(a, b) => {
                    let (r, k) = self.value(*a).dims2()?;
                    let (_, c) = self.value(*b).dims2()?;
                    let ad = self.data(*a);
                    let bd = self.data(*b);
                    ensure(&mut adj, *a);
                    acc(&mut adj, *a, |ga| {
                        for i in 0..r {
                            for p in 0..k {
                                let mut s = 0.0;
                                for j in 0..c {
                                    s += g[i * c + j] * bd[p * c + j];
                                }
                                ga[i * k + p] += s;
                            }
                        }
                    });
                    ensure(&mut adj, *b);
                    acc(&mut adj, *b, |gb| {
                        for p in 0..k {
                            for j in 0..c {
                                let mut s = 0.0;
                                for i in 0..r {
                                    s += ad[i * k + p] * g[i * c + j];
                                }
                                gb[p * c + j] += s;
                            }
                        }
                    });
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        ensure(&mut adj, v);
                        acc(&mut adj, v, |gv| add_into(gv, &g));
                    }
                }
                Op::Sub(a, b) => {
                    ensure(&mut adj, *a);
                    acc(&mut adj, *a, |gv| add_into(gv, &g));
                    ensure(&mut adj, *b);
                    acc(&mut adj, *b, |gv| {
                        for (o, x) in gv.iter_mut().zip(&g) {
                            *o -= x;
                        }
                    });
                }
                Op::Mul(a, b) => {
                    let (ad, bd) = (self.data(*a), self.data(*b));
                    ensure(&mut adj, *a);
                    acc(&mut adj, *a, |gv| {
                        for ((o, x), y) in gv.iter_mut().zip(&g).zip(bd) {
                            *o += x * y;
                        }
                    });
                    ensure(&mut adj, *b);
                    acc(&mut adj, *b, |gv| {
                        for ((o, x), y) in gv.iter_mut().zip(&g).zip(ad) {
                            *o += x * y;
                        }
                    });
                }
                Op::AddN(items) => {
                    for &v in items {
                        ensure(&mut adj, v);
                        acc(&mut adj, v, |gv| add_into(gv, &g));
                    }
                }
                Op::Scale(a, f) => {
                    ensure(&mut adj, *a);
                    acc(&mut adj, *a, |gv| {
                        for (o, x) in gv.iter_mut().zip(&g) {
                            *o += f * x;
                        }
                    });
                }
                Op::ScaleBy(a, s) => {
                    let k = self.scalar(*s);
                    let ad = self.data(*a);
                    let ds: f64 = g.iter().zip(ad).map(|(x, y)| x * y).sum();
                    ensure(&mut adj, *a);
                    acc(&mut adj, *a, |gv| {
                        for (o, x) in gv.iter_mut().zip(&g) {
                            *o += k * x;
                        }
                    });
                    ensure(&mut adj, *s);
                    acc(&mut adj, *s, |gv| gv[0] += ds);
                }
                Op::Affine(a, mul) => {
                    ensure(&mut adj, *a);
                    acc(&mut adj, *a, |gv| {
                        for (o, x) in gv.iter_mut().zip(&g) {
                            *o += mul * x;
                        }
                    });
                }
                Op::Concat(items) => {
                    let mut offset = 0;
                    for &v in items {
                        let n = self.vlen(v);
                        ensure(&mut adj, v);
                        acc(&mut adj, v, |gv| add_into(gv, &g[offset..offset + n]));
                        offset += n;
                    }
                }
                Op::Slice(a, start) => {
                    let n = g.len();
                    ensure(&mut adj, *a);
                    acc(&mut adj, *a, |gv| add_into(&mut gv[*start..*start + n], &g));
                }
                Op::Sum(a) => {
                    ensure(&mut adj, *a);
                    acc(&mut adj, *a, |gv| {
                        for o in gv.iter_mut() {
                            *o += g[0];
                        }
                    });
                }
                Op::Dot(a, b) => {
                    let (ad, bd) = (self.data(*a), self.data(*b));
                    ensure(&mut adj, *a);
                    acc(&mut adj, *a, |gv| {
                        for (o, y) in gv.iter_mut().zip(bd) {
                            *o += g[0] * y;
                        }
                    });
                    ensure(&mut adj, *b);
                    acc(&mut adj, *b, |gv| {
                        for (o, x) in gv.iter_mut().zip(ad) {
                            *o += g[0] * x;
                        }
                    });
                }
                Op::Pick(a, i) => {
                    ensure(&mut adj, *a);
                    acc(&mut adj, *a, |gv| gv[*i] += g[0]);
                }
                Op::Softmax(a) => {
                    let y = self.data(Var(idx));
                    let inner: f64 = g.iter().zip(y).map(|(x, yy)| x * yy).sum();
                    ensure(&mut adj, *a);
                    acc(&mut adj, *a, |gv| {
                        for ((o, gi), yi) in gv.iter_mut().zip(&g).zip(y) {
                            *o += yi * (gi - inner);
                        }
                    });
                }
                Op::LogSoftmax(a) => {
                    let y = self.data(Var(idx));
                    let total: f64 = g.iter().sum();
                    ensure(&mut adj, *a);
                    acc(&mut adj, *a, |gv| {
                        for ((o, gi), yi) in gv.iter_mut().zip(&g).zip(y) {
                            *o += gi - yi.exp() * total;
                        }
                    });
                }
                Op::Sigmoid(a) => {
                    let y = self.data(Var(idx));
                    ensure(&mut adj, *a);
                    acc(&mut adj, *a, |gv| {
                        for ((o, gi), yi) in gv.iter_mut().zip(&g).zip(y) {
                            *o += gi * yi * (1.0 - yi);
                        }
                    });
                }
                Op::Tanh(a) => {
                    let y = self.data(Var(idx));
                    ensure(&mut adj, *a);
                    acc(&mut adj, *a, |gv| {
                        for ((o, gi), yi) in gv.iter_mut().zip(&g).zip(y) {
                            *o += gi * (1.0 - yi * yi);
                        }
                    });
                }
                Op::LeakyRelu(a, slope) => {
                    let x = self.data(*a);
                    ensure(&mut adj, *a);
                    acc(&mut adj, *a, |gv| {
                        for ((o, gi), xi) in gv.iter_mut().zip(&g).zip(x) {
                            *o += if *xi > 0.0 { *gi } else { slope * gi };
                        }
                    });
                }
                Op::Log(a) => {
                    let x = self.data(*a);
                    ensure(&mut adj, *a);
                    acc(&mut adj, *a, |gv| {
                        for ((o, gi), xi) in gv.iter_mut().zip(&g).zip(x) {
                            *o += gi / xi.max(f64::MIN_POSITIVE);
                        }
                    });
                }
                Op::WeightedSum(w, items) => {
                    let wd = self.data(*w);
                    let dw: Vec<f64> = items
                        .iter()
                        .map(|&v| self.data(v).iter().zip(&g).map(|(x, y)| x * y).sum())
                        .collect();
                    for (k, &v) in items.iter().enumerate() {
                        let wk = wd[k];
                        ensure(&mut adj, v);
                        acc(&mut adj, v, |gv| {
                            for (o, x) in gv.iter_mut().zip(&g) {
                                *o += wk * x;
                            }
                        });
                    }
                    ensure(&mut adj, *w);
                    acc(&mut adj, *w, |gv| add_into(gv, &dw));
                }
                Op::Gather(a, indices) => {
                    ensure(&mut adj, *a);
                    acc(&mut adj, *a, |gv| {
                        for (&i, x) in indices.iter().zip(&g) {
                            gv[i] += x;
                        }
                    });
                }
                Op::Normalize(a) => {
                    let y = self.data(Var(idx));
                    let total: f64 = self.data(*a).iter().sum();
                    let inner: f64 = g.iter().zip(y).map(|(x, yy)| x * yy).sum();
                    ensure(&mut adj, *a);
                    acc(&mut adj, *a, |gv| {
                        for (o, gi) in gv.iter_mut().zip(&g) {
                            *o += (gi - inner) / total;
                        }
                    });
                }
                Op::ScatterAdd(a, targets) => {
                    ensure(&mut adj, *a);
                    acc(&mut adj, *a, |gv| {
                        for (o, &t) in gv.iter_mut().zip(targets) {
                            *o += g[t];
                        }
                    });
                }
            }
        }
        if !reached {
            return Err(TensorError::Detached);
        }
        Ok(grads)
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (o, x) in dst.iter_mut().zip(src) {
        *o += x;
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_values(d: &[f64]) -> Vec<f64> {
    let m = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = d.iter().map(|x| (x - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{check_gradients, GradCheck};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_and_sigmoid_values() {
        let params = ParamStore::new();
        let mut t = Tape::new(&params);
        let z = t.zeros(3);
        let s = t.softmax(z);
        for &p in t.data(s) {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let zero = t.zeros(1);
        let sg = t.sigmoid(zero);
        assert_eq!(t.scalar(sg), 0.5);
        let big = t.vector(vec![1000.0, -1000.0, 3.0]);
        let s = t.softmax(big);
        assert!((t.data(s).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let sg = t.sigmoid(big);
        assert!(t.data(sg).iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut params = ParamStore::new();
        let p = params.add("p", Tensor::vector(vec![0.3, -1.2, 2.0]));
        let t = {
            let mut t = Tape::new(&params);
            let v = t.param(p);
            let l = t.sum(v);
            t.backward(l).unwrap()
        };
        assert_eq!(t.get(p), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn dot_self_gradient_is_twice() {
        let mut params = ParamStore::new();
        let p = params.add("p", Tensor::vector(vec![0.3, -1.2, 2.0]));
        let mut t = Tape::new(&params);
        let v = t.param(p);
        let l = t.dot(v, v).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(p), &[0.6, -2.4, 4.0]);
    }

    #[test]
    fn detached_loss_errors() {
        let mut params = ParamStore::new();
        params.add("p", Tensor::vector(vec![1.0]));
        let mut t = Tape::new(&params);
        let c = t.vector(vec![2.0, 3.0]);
        let l = t.sum(c);
        assert!(matches!(t.backward(l), Err(TensorError::Detached)));
        assert!(matches!(t.backward(c), Err(TensorError::ShapeMismatch(_))));
    }

    #[test]
    fn shape_errors() {
        let params = ParamStore::new();
        let mut t = Tape::new(&params);
        let a = t.zeros(2);
        let b = t.zeros(3);
        assert!(t.add(a, b).is_err());
        assert!(t.dot(a, b).is_err());
        assert!(t.slice(a, 1, 2).is_err());
        assert!(t.pick(a, 2).is_err());
        let m = t.constant(Tensor::zeros(vec![2, 2]));
        assert!(t.matvec(m, b).is_err());
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut params = ParamStore::new();
        let w = params.add("w", Tensor::uniform(vec![4, 3], 1.0, &mut rng));
        let m = params.add("m", Tensor::uniform(vec![3, 2], 1.0, &mut rng));
        let x = params.add("x", Tensor::uniform(vec![3], 1.0, &mut rng));
        let y = params.add("y", Tensor::uniform(vec![4], 1.0, &mut rng));
        let report = check_gradients(&mut params, GradCheck::default(), |t| {
            let wv = t.param(w);
            let xv = t.param(x);
            let yv = t.param(y);
            let mv = t.param(m);
            let h = t.matvec(wv, xv)?;
            let h = t.add(h, yv)?;
            let h2 = t.mul(h, yv)?;
            let h3 = t.sub(h2, h)?;
            let th = t.tanh(h3);
            let lr = t.leaky_relu(h3, 0.1);
            let sg = t.sigmoid(lr);
            let cat = t.concat(&[th, sg]);
            let sl = t.slice(cat, 2, 4)?;
            let sm = t.softmax(sl);
            let ls = t.log_softmax(cat);
            let p0 = t.pick(ls, 3)?;
            let lg = t.log(sm);
            let s = t.sum(lg);
            let d = t.dot(sl, yv)?;
            let ws = t.weighted_sum(sm, &[sl, yv, h, th])?;
            let sc = t.scatter_add(sm, &[0, 2, 2, 1], 3)?;
            let scs = t.scale_by(sc, d)?;
            let an = t.add_n(&[ws, yv, th], 4)?;
            let mm = t.matmul(wv, mv)?;
            let mmv = t.slice(mm, 0, 8)?;
            let mmsum = t.sum(mmv);
            let af = t.affine(an, -0.5, 1.0);
            let parts = [s, d, p0, mmsum];
            let tot = t.add_n(&parts, 1)?;
            let x1 = t.sum(scs);
            let x2 = t.sum(af);
            let x3 = t.mean(ws);
            let x4 = t.scale(x3, 2.5);
            let ga = t.gather(sm, &[3, 0, 0])?;
            let nm = t.normalize(ga)?;
            let head = t.slice(mmv, 2, 3)?;
            let x5 = t.dot(nm, head)?;
            t.add_n(&[tot, x1, x2, x4, x5], 1)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }
}
