//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! Each op evaluates eagerly through [`super::kernels`] and records enough
//! to replay its vector-Jacobian product in [`Tape::backward`].

use super::kernels::{self, ConvGeometry};
use super::tensor::Tensor;
use crate::error::{LoatError, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatVec { w: Var, x: Var, m: usize, n: usize },
    MatMul { a: Var, b: Var, m: usize, n: usize, p: usize },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Logistic(Var),
    Softmax(Var),
    Conv2d { x: Var, k: Var, b: Var, geom: ConvGeometry },
    ChannelScale { map: Var, scores: Var },
    Lerp { gamma: Var, a: Var, b: Var },
    Concat(Vec<Var>),
    Upsample { a: Var, factor: usize },
    Reshape(Var),
    Sum(Var),
    CrossEntropy { logits: Var, target: Vec<f64> },
    LogProbAt { logits: Var, index: usize },
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Grads {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Grads {
    /// Gradient of the loss with respect to `v`; zeros when `v` did not influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

fn shape_err(expected: &[usize], found: &[usize], context: &str) -> LoatError {
    LoatError::ShapeMismatch {
        expected: expected.to_vec(),
        found: found.to_vec(),
        context: context.to_string(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// `w [m, n] · x [n]`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let ws = self.shape(w).to_vec();
        let xs = self.shape(x).to_vec();
        if ws.len() != 2 || xs != [ws[1]] {
            return Err(shape_err(&ws, &xs, "matvec"));
        }
        let (m, n) = (ws[0], ws[1]);
        let out = kernels::matvec(self.value(w).data(), m, n, self.value(x).data());
        Ok(self.push(Tensor::from_vec(out), Op::MatVec { w, x, m, n }))
    }

    /// `a [m, n] · b [n, p]`; a 1-D `a` is treated as `[1, n]` and yields `[p]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let as_ = self.shape(a).to_vec();
        let bs = self.shape(b).to_vec();
        let (m, n, vector) = match as_.len() {
            1 => (1, as_[0], true),
            2 => (as_[0], as_[1], false),
            _ => return Err(shape_err(&[0, 0], &as_, "matmul lhs")),
        };
        if bs.len() != 2 || bs[0] != n {
            return Err(shape_err(&[n, 0], &bs, "matmul rhs"));
        }
        let p = bs[1];
        let out = kernels::matmul(self.value(a).data(), m, n, self.value(b).data(), p);
        let shape = if vector { vec![p] } else { vec![m, p] };
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, Op::MatMul { a, b, m, n, p }))
    }

    fn same_shape(&self, a: Var, b: Var, ctx: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(self.shape(a), self.shape(b), ctx));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let data = self.value(a).data().iter().map(|x| x * c).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data).expect("same shape");
        self.push(t, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let data = self.value(a).data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data).expect("same shape");
        self.push(t, Op::Relu(a))
    }

    pub fn logistic(&mut self, a: Var) -> Var {
        let data = self.value(a).data().iter().map(|&x| kernels::logistic(x)).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data).expect("same shape");
        self.push(t, Op::Logistic(a))
    }

    /// Softmax over all elements (max-subtracted).
    pub fn softmax(&mut self, a: Var) -> Var {
        let data = kernels::softmax(self.value(a).data());
        let t = Tensor::new(self.shape(a).to_vec(), data).expect("same shape");
        self.push(t, Op::Softmax(a))
    }

    /// Cross-correlation of `x [C, H, W]` with `k [O, C, kh, kw]`, bias `b [O]`.
    pub fn conv2d(&mut self, x: Var, k: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(k).to_vec();
        if xs.len() != 3 || ks.len() != 4 || ks[1] != xs[0] {
            return Err(shape_err(&ks, &xs, "conv2d input channels"));
        }
        if self.shape(b) != [ks[0]] {
            return Err(shape_err(&[ks[0]], self.shape(b), "conv2d bias"));
        }
        let geom = ConvGeometry::new(xs[0], xs[1], xs[2], ks[0], ks[2], ks[3], stride, pad).ok_or_else(|| {
            LoatError::InvalidArgument(format!(
                "conv2d input {}x{} smaller than kernel {}x{} (pad {pad})",
                xs[1], xs[2], ks[2], ks[3]
            ))
        })?;
        let out = kernels::conv2d(&geom, self.value(x).data(), self.value(k).data(), self.value(b).data());
        let t = Tensor::new(vec![geom.out_channels, geom.out_h, geom.out_w], out)?;
        Ok(self.push(t, Op::Conv2d { x, k, b, geom }))
    }

    /// Multiplies channel `c` of `map [C, ...]` by `scores[c]`.
    pub fn channel_scale(&mut self, map: Var, scores: Var) -> Result<Var> {
        let ms = self.shape(map).to_vec();
        let c = self.shape(scores).to_vec();
        if c.len() != 1 || ms.is_empty() || ms[0] != c[0] {
            return Err(shape_err(&[ms.first().copied().unwrap_or(0)], &c, "channel_scale scores"));
        }
        let plane = self.value(map).len() / ms[0];
        let s = self.value(scores).data();
        let data = self
            .value(map)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| s[i / plane] * v)
            .collect();
        let t = Tensor::new(ms, data)?;
        Ok(self.push(t, Op::ChannelScale { map, scores }))
    }

    /// `gamma * a + (1 - gamma) * b` with scalar `gamma`.
    pub fn lerp(&mut self, gamma: Var, a: Var, b: Var) -> Result<Var> {
        if self.value(gamma).len() != 1 {
            return Err(shape_err(&[1], self.shape(gamma), "lerp gamma"));
        }
        self.same_shape(a, b, "lerp")?;
        let g = self.value(gamma).item();
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| g * x + (1.0 - g) * y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(t, Op::Lerp { gamma, a, b }))
    }

    /// Concatenation along the leading axis; trailing dims must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.shape(parts[0]).to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len() || s[1..] != first[1..] {
                return Err(shape_err(&first, s, "concat trailing dims"));
            }
            lead += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = first;
        shape[0] = lead;
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t, Op::Concat(parts.to_vec())))
    }

    /// Nearest-neighbour upsampling of `a [C, H, W]` to `[C, H*factor, W*factor]`.
    pub fn upsample(&mut self, a: Var, factor: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 3 || factor == 0 {
            return Err(shape_err(&[0, 0, 0], &s, "upsample expects [C, H, W] and factor >= 1"));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let (oh, ow) = (h * factor, w * factor);
        let src = self.value(a).data();
        let mut data = vec![0.0; c * oh * ow];
        for ch in 0..c {
            for r in 0..oh {
                for col in 0..ow {
                    data[(ch * oh + r) * ow + col] = src[(ch * h + r / factor) * w + col / factor];
                }
            }
        }
        let t = Tensor::new(vec![c, oh, ow], data)?;
        Ok(self.push(t, Op::Upsample { a, factor }))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(a)))
    }

    pub fn flatten(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        self.reshape(a, &[n]).expect("flatten preserves count")
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let mut s = 0.0;
        for v in self.value(a).data() {
            s += v;
        }
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// `-Σ target_i · log softmax(logits)_i` over all elements.
    pub fn cross_entropy(&mut self, logits: Var, target: Vec<f64>) -> Result<Var> {
        if target.len() != self.value(logits).len() {
            return Err(LoatError::DimensionMismatch {
                expected: self.value(logits).len(),
                found: target.len(),
                context: "cross_entropy target".into(),
            });
        }
        let lp = kernels::log_softmax(self.value(logits).data());
        let mut loss = 0.0;
        for (t, l) in target.iter().zip(&lp) {
            if *t != 0.0 {
                loss -= t * l;
            }
        }
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, target }))
    }

    /// Cross-entropy against a one-hot label.
    pub fn cross_entropy_index(&mut self, logits: Var, index: usize) -> Result<Var> {
        let n = self.value(logits).len();
        if index >= n {
            return Err(LoatError::InvalidArgument(format!("label {index} out of range {n}")));
        }
        let mut t = vec![0.0; n];
        t[index] = 1.0;
        self.cross_entropy(logits, t)
    }

    /// `log softmax(logits)[index]` as a scalar.
    pub fn log_prob_at(&mut self, logits: Var, index: usize) -> Result<Var> {
        let n = self.value(logits).len();
        if index >= n {
            return Err(LoatError::InvalidArgument(format!("index {index} out of range {n}")));
        }
        let lp = kernels::log_softmax(self.value(logits).data());
        Ok(self.push(Tensor::scalar(lp[index]), Op::LogProbAt { logits, index }))
    }

    /// Mean of scalar vars.
    pub fn mean(&mut self, items: &[Var]) -> Result<Var> {
        if items.is_empty() {
            return Err(LoatError::InvalidArgument("mean of zero items".into()));
        }
        let mut acc = items[0];
        for &v in &items[1..] {
            acc = self.add(acc, v)?;
        }
        Ok(self.scale(acc, 1.0 / items.len() as f64))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if self.value(loss).len() != 1 {
            return Err(LoatError::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for idx in (0..n).rev() {
            let Some(gout) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let shape_of = |v: Var| self.nodes[v.0].value.shape().to_vec();
            let val = |v: Var| self.nodes[v.0].value.data();
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(gout);
                    continue;
                }
                Op::MatVec { w, x, m, n } => {
                    let g = gout.data();
                    let xv = val(*x);
                    let wv = val(*w);
                    let mut dw = vec![0.0; m * n];
                    let mut dx = vec![0.0; *n];
                    for i in 0..*m {
                        for j in 0..*n {
                            dw[i * n + j] = g[i] * xv[j];
                            dx[j] += g[i] * wv[i * n + j];
                        }
                    }
                    acc(&mut grads, *w, Tensor::new(vec![*m, *n], dw)?);
                    acc(&mut grads, *x, Tensor::from_vec(dx));
                }
                Op::MatMul { a, b, m, n, p } => {
                    let g = gout.data();
                    let av = val(*a);
                    let bv = val(*b);
                    // da = g · bᵀ, db = aᵀ · g
                    let mut da = vec![0.0; m * n];
                    let mut db = vec![0.0; n * p];
                    for i in 0..*m {
                        for k in 0..*n {
                            let mut s = 0.0;
                            for j in 0..*p {
                                s += g[i * p + j] * bv[k * p + j];
                                db[k * p + j] += av[i * n + k] * g[i * p + j];
                            }
                            da[i * n + k] = s;
                        }
                    }
                    acc(&mut grads, *a, Tensor::new(shape_of(*a), da)?);
                    acc(&mut grads, *b, Tensor::new(shape_of(*b), db)?);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, gout.clone());
                    acc(&mut grads, *b, gout);
                }
                Op::Mul(a, b) => {
                    let ga = gout.data().iter().zip(val(*b)).map(|(g, y)| g * y).collect();
                    let gb = gout.data().iter().zip(val(*a)).map(|(g, x)| g * x).collect();
                    acc(&mut grads, *a, Tensor::new(shape_of(*a), ga)?);
                    acc(&mut grads, *b, Tensor::new(shape_of(*b), gb)?);
                }
                Op::Scale(a, c) => {
                    let ga = gout.data().iter().map(|g| g * c).collect();
                    acc(&mut grads, *a, Tensor::new(shape_of(*a), ga)?);
                }
                Op::Relu(a) => {
                    let ga = gout
                        .data()
                        .iter()
                        .zip(val(*a))
                        .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                        .collect();
                    acc(&mut grads, *a, Tensor::new(shape_of(*a), ga)?);
                }
                Op::Logistic(a) => {
                    let ga = gout
                        .data()
                        .iter()
                        .zip(node.value.data())
                        .map(|(g, y)| g * y * (1.0 - y))
                        .collect();
                    acc(&mut grads, *a, Tensor::new(shape_of(*a), ga)?);
                }
                Op::Softmax(a) => {
                    let y = node.value.data();
                    let mut dot = 0.0;
                    for (g, p) in gout.data().iter().zip(y) {
                        dot += g * p;
                    }
                    let ga = gout.data().iter().zip(y).map(|(g, p)| p * (g - dot)).collect();
                    acc(&mut grads, *a, Tensor::new(shape_of(*a), ga)?);
                }
                Op::Conv2d { x, k, b, geom } => {
                    let (dx, dk, db) = kernels::conv2d_backward(geom, val(*x), val(*k), gout.data());
                    acc(&mut grads, *x, Tensor::new(shape_of(*x), dx)?);
                    acc(&mut grads, *k, Tensor::new(shape_of(*k), dk)?);
                    acc(&mut grads, *b, Tensor::new(shape_of(*b), db)?);
                }
                Op::ChannelScale { map, scores } => {
                    let s = val(*scores);
                    let mv = val(*map);
                    let plane = mv.len() / s.len();
                    let g = gout.data();
                    let dmap = g.iter().enumerate().map(|(i, gv)| gv * s[i / plane]).collect();
                    let mut ds = vec![0.0; s.len()];
                    for (c, d) in ds.iter_mut().enumerate() {
                        let mut a = 0.0;
                        for i in c * plane..(c + 1) * plane {
                            a += g[i] * mv[i];
                        }
                        *d = a;
                    }
                    acc(&mut grads, *map, Tensor::new(shape_of(*map), dmap)?);
                    acc(&mut grads, *scores, Tensor::new(shape_of(*scores), ds)?);
                }
                Op::Lerp { gamma, a, b } => {
                    let gm = val(*gamma)[0];
                    let g = gout.data();
                    let av = val(*a);
                    let bv = val(*b);
                    let mut dg = 0.0;
                    for i in 0..g.len() {
                        dg += g[i] * (av[i] - bv[i]);
                    }
                    let da = g.iter().map(|x| x * gm).collect();
                    let db = g.iter().map(|x| x * (1.0 - gm)).collect();
                    acc(&mut grads, *gamma, Tensor::new(shape_of(*gamma), vec![dg])?);
                    acc(&mut grads, *a, Tensor::new(shape_of(*a), da)?);
                    acc(&mut grads, *b, Tensor::new(shape_of(*b), db)?);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let len = self.nodes[p.0].value.len();
                        let piece = gout.data()[off..off + len].to_vec();
                        off += len;
                        acc(&mut grads, *p, Tensor::new(shape_of(*p), piece)?);
                    }
                }
                Op::Upsample { a, factor } => {
                    let s = shape_of(*a);
                    let (c, h, w) = (s[0], s[1], s[2]);
                    let (oh, ow) = (h * factor, w * factor);
                    let g = gout.data();
                    let mut da = vec![0.0; c * h * w];
                    for ch in 0..c {
                        for r in 0..oh {
                            for col in 0..ow {
                                da[(ch * h + r / factor) * w + col / factor] += g[(ch * oh + r) * ow + col];
                            }
                        }
                    }
                    acc(&mut grads, *a, Tensor::new(s, da)?);
                }
                Op::Reshape(a) => {
                    acc(&mut grads, *a, gout.reshape(&shape_of(*a))?);
                }
                Op::Sum(a) => {
                    acc(&mut grads, *a, Tensor::filled(&shape_of(*a), gout.item()));
                }
                Op::CrossEntropy { logits, target } => {
                    let p = kernels::softmax(val(*logits));
                    let total: f64 = target.iter().sum();
                    let g = gout.item();
                    let d = p.iter().zip(target).map(|(pi, ti)| g * (total * pi - ti)).collect();
                    acc(&mut grads, *logits, Tensor::new(shape_of(*logits), d)?);
                }
                Op::LogProbAt { logits, index } => {
                    let p = kernels::softmax(val(*logits));
                    let g = gout.item();
                    let d = p
                        .iter()
                        .enumerate()
                        .map(|(i, pi)| g * (if i == *index { 1.0 } else { 0.0 } - pi))
                        .collect();
                    acc(&mut grads, *logits, Tensor::new(shape_of(*logits), d)?);
                }
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Grads { grads, shapes })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0));
        let y = t.mul(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(x).item(), 6.0);
    }

    #[test]
    fn unused_leaf_has_zero_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0));
        let unused = t.leaf(Tensor::from_vec(vec![1.0, 2.0]));
        let y = t.scale(x, 2.0);
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(unused).data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::from_vec(vec![1.0, 2.0]));
        assert!(t.backward(x).is_err());
    }

    #[test]
    fn conv_rejects_small_input() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::zeros(&[1, 2, 2]));
        let k = t.leaf(Tensor::zeros(&[1, 1, 3, 3]));
        let b = t.leaf(Tensor::zeros(&[1]));
        assert!(t.conv2d(x, k, b, 1, 0).is_err());
        assert!(t.conv2d(x, k, b, 1, 1).is_ok());
    }
}
