use super::kernels::{self, ConvGeom};
use super::{Scalar, Tensor};
use crate::error::{dim_err, Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for a node recorded with [`Tape::custom`].
///
/// Receives the upstream gradient, the forward values of the node's inputs
/// and its own output, and returns one optional gradient per input.
pub trait BackwardRule<S: Scalar> {
    fn name(&self) -> &'static str;

    fn backward(
        &self,
        upstream: &Tensor<S>,
        inputs: &[&Tensor<S>],
        output: &Tensor<S>,
    ) -> Vec<Option<Tensor<S>>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

enum Op<S: Scalar> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
        trans_b: bool,
    },
    Binary {
        kind: BinaryKind,
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        c: S,
    },
    AddScalar {
        x: Var,
    },
    Relu {
        x: Var,
    },
    Affine {
        x: Var,
        gain: Var,
        bias: Var,
    },
    StraightThrough {
        source: Var,
    },
    Conv2d {
        x: Var,
        w: Var,
        geom: ConvGeom,
        batch: usize,
    },
    AvgPool2 {
        x: Var,
        dims: [usize; 4],
    },
    Reshape {
        x: Var,
    },
    SumAll {
        x: Var,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<S>,
    },
    Custom {
        inputs: Vec<Var>,
        rule: Box<dyn BackwardRule<S>>,
    },
}

impl<S: Scalar> Op<S> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Binary { kind, .. } => match kind {
                BinaryKind::Add => "add",
                BinaryKind::Sub => "sub",
                BinaryKind::Mul => "mul",
                BinaryKind::Div => "div",
            },
            Op::Scale { .. } => "scale",
            Op::AddScalar { .. } => "add_scalar",
            Op::Relu { .. } => "max0",
            Op::Affine { .. } => "affine",
            Op::StraightThrough { .. } => "custom_grad",
            Op::Conv2d { .. } => "conv2d",
            Op::AvgPool2 { .. } => "avg_pool2",
            Op::Reshape { .. } => "reshape",
            Op::SumAll { .. } => "sum",
            Op::SoftmaxCrossEntropy { .. } => "cross_entropy",
            Op::Custom { rule, .. } => rule.name(),
        }
    }
}

struct Node<S: Scalar> {
    value: Tensor<S>,
    op: Op<S>,
    needs_grad: bool,
    grad: Option<Tensor<S>>,
}

/// Reverse-mode differentiation tape for one forward/backward cycle.
///
/// Nodes are appended in evaluation order, so the node vector is already a
/// topological order and backward is a single reverse sweep.
pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
    first_non_finite: Option<(usize, &'static str)>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            first_non_finite: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Accumulated gradient of a leaf created with `requires_grad`.
    pub fn grad(&self, v: Var) -> Option<&Tensor<S>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<S>> {
        self.nodes[v.0].grad.take()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// First op (node index, op name) that produced a NaN or infinite value.
    pub fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        self.first_non_finite
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, needs_grad: bool) -> Var {
        if self.first_non_finite.is_none() && !value.all_finite() {
            self.first_non_finite = Some((self.nodes.len(), op.name()));
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, false)
    }

    /// Plain matrix product `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(dim_err("matmul", format!("{:?} · {:?}", sa, sb)));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        self.matmul_impl(a, b, m, k, n, false, vec![m, n])
    }

    /// `x · wᵀ` over the last axis of `x`; `w` is `[n, k]`. Leading axes of
    /// `x` are treated as rows.
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w));
        if sw.len() != 2 || sx.is_empty() || *sx.last().unwrap() != sw[1] {
            return Err(dim_err("linear", format!("{:?} · {:?}ᵀ", sx, sw)));
        }
        let (k, n) = (sw[1], sw[0]);
        let m = self.value(x).len() / k.max(1);
        let mut shape = sx;
        *shape.last_mut().unwrap() = n;
        self.matmul_impl(x, w, m, k, n, true, shape)
    }

    #[allow(clippy::too_many_arguments)]
    fn matmul_impl(
        &mut self,
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
        trans_b: bool,
        shape: Vec<usize>,
    ) -> Result<Var> {
        let mut out = vec![S::ZERO; m * n];
        kernels::gemm(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            k,
            n,
            false,
            trans_b,
            false,
        );
        let ng = self.ng(a) || self.ng(b);
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(
            value,
            Op::MatMul {
                a,
                b,
                m,
                k,
                n,
                trans_b,
            },
            ng,
        ))
    }

    fn check_broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(dim_err(
                op,
                format!("{:?} cannot broadcast against {:?}", sb, sa),
            ));
        }
        Ok(())
    }

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let name = match kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        };
        self.check_broadcast(name, a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        if kind == BinaryKind::Div
            && cfg!(debug_assertions)
            && vb.data().iter().any(|&v| v == S::ZERO)
        {
            return Err(Error::Contract(
                "division by a zero denominator element; stabilize the denominator first".into(),
            ));
        }
        let inner = vb.len();
        let bd = vb.data();
        let mut out = va.data().to_vec();
        for chunk in out.chunks_mut(inner.max(1)) {
            match kind {
                BinaryKind::Add => chunk.iter_mut().zip(bd).for_each(|(x, &y)| *x += y),
                BinaryKind::Sub => chunk.iter_mut().zip(bd).for_each(|(x, &y)| *x -= y),
                BinaryKind::Mul => chunk.iter_mut().zip(bd).for_each(|(x, &y)| *x *= y),
                BinaryKind::Div => chunk.iter_mut().zip(bd).for_each(|(x, &y)| *x /= y),
            }
        }
        let value = Tensor::new(va.shape(), out)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Binary { kind, a, b }, ng))
    }

    /// Elementwise `a + b`; `b` may match a trailing suffix of `a`'s shape.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    /// Elementwise quotient. Debug builds reject zero denominators.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    pub fn scale(&mut self, x: Var, c: S) -> Var {
        let value = self.value(x).map(|v| v * c);
        let ng = self.ng(x);
        self.push(value, Op::Scale { x, c }, ng)
    }

    pub fn add_scalar(&mut self, x: Var, c: S) -> Var {
        let value = self.value(x).map(|v| v + c);
        let ng = self.ng(x);
        self.push(value, Op::AddScalar { x }, ng)
    }

    /// `max(0, x)`; the derivative at exactly 0 is taken as 0.
    pub fn max0(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > S::ZERO { v } else { S::ZERO });
        let ng = self.ng(x);
        self.push(value, Op::Relu { x }, ng)
    }

    /// `x ⊙ gain + bias` with `gain`, `bias` broadcast over trailing axes.
    pub fn affine(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        self.check_broadcast("affine", x, gain)?;
        self.check_broadcast("affine", x, bias)?;
        if self.shape(gain) != self.shape(bias) {
            return Err(dim_err(
                "affine",
                format!("gain {:?} vs bias {:?}", self.shape(gain), self.shape(bias)),
            ));
        }
        let (vx, vg, vb) = (self.value(x), self.value(gain), self.value(bias));
        let inner = vg.len().max(1);
        let mut out = vx.data().to_vec();
        for chunk in out.chunks_mut(inner) {
            for ((o, &g), &b) in chunk.iter_mut().zip(vg.data()).zip(vb.data()) {
                *o = *o * g + b;
            }
        }
        let value = Tensor::new(vx.shape(), out)?;
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        Ok(self.push(value, Op::Affine { x, gain, bias }, ng))
    }

    /// Value of `forward_value`, gradient routed entirely (identity) to
    /// `grad_source`. `forward_value` itself receives no gradient.
    pub fn custom_grad(&mut self, forward_value: Var, grad_source: Var) -> Result<Var> {
        if self.shape(forward_value) != self.shape(grad_source) {
            return Err(dim_err(
                "custom_grad",
                format!(
                    "{:?} vs {:?}",
                    self.shape(forward_value),
                    self.shape(grad_source)
                ),
            ));
        }
        let value = self.value(forward_value).clone();
        let ng = self.ng(grad_source);
        Ok(self.push(value, Op::StraightThrough { source: grad_source }, ng))
    }

    /// Stride-1 "same" convolution over NHWC input `x[B,H,W,C_in]` with
    /// `w[C_out, k, k, C_in]` (odd `k`).
    pub fn conv2d(&mut self, x: Var, w: Var) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 4 || sw.len() != 4 || sw[1] != sw[2] || sw[1] % 2 == 0 || sw[3] != sx[3]
        {
            return Err(dim_err("conv2d", format!("input {:?} kernel {:?}", sx, sw)));
        }
        let geom = ConvGeom {
            height: sx[1],
            width: sx[2],
            c_in: sx[3],
            c_out: sw[0],
            kernel: sw[1],
        };
        let batch = sx[0];
        let out = kernels::conv2d_forward(self.value(x).data(), self.value(w).data(), batch, &geom);
        let value = Tensor::new(&[batch, geom.height, geom.width, geom.c_out], out)?;
        let ng = self.ng(x) || self.ng(w);
        Ok(self.push(value, Op::Conv2d { x, w, geom, batch }, ng))
    }

    /// 2×2 mean pooling over NHWC input with even spatial extents.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || s[1] % 2 != 0 || s[2] % 2 != 0 {
            return Err(dim_err(
                "avg_pool2",
                format!("needs [B,H,W,C] with even H, W; got {:?}", s),
            ));
        }
        let out = kernels::avg_pool2_forward(self.value(x).data(), s[0], s[1], s[2], s[3]);
        let value = Tensor::new(&[s[0], s[1] / 2, s[2] / 2, s[3]], out)?;
        let ng = self.ng(x);
        Ok(self.push(
            value,
            Op::AvgPool2 {
                x,
                dims: [s[0], s[1], s[2], s[3]],
            },
            ng,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::Reshape { x }, ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let ng = self.ng(x);
        self.push(value, Op::SumAll { x }, ng)
    }

    /// Mean cross-entropy of softmax(`logits[B,K]`) against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(dim_err(
                "cross_entropy",
                format!("logits {:?} with {} labels", s, labels.len()),
            ));
        }
        let (b, k) = (s[0], s[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Parameter(format!("label {} out of range 0..{}", bad, k)));
        }
        let z = self.value(logits).data();
        let mut probs = vec![S::ZERO; b * k];
        let mut loss = 0.0f64;
        for (i, &label) in labels.iter().enumerate() {
            let row = &z[i * k..(i + 1) * k];
            let mx = row.iter().copied().fold(row[0], S::max);
            let mut denom = S::ZERO;
            for (p, &v) in probs[i * k..(i + 1) * k].iter_mut().zip(row) {
                *p = (v - mx).exp();
                denom += *p;
            }
            for p in &mut probs[i * k..(i + 1) * k] {
                *p /= denom;
            }
            loss += (denom.ln() + mx - row[label]).to_f64();
        }
        let value = Tensor::scalar(S::from_f64(loss / b.max(1) as f64));
        let ng = self.ng(logits);
        Ok(self.push(
            value,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            ng,
        ))
    }

    /// Records a node whose forward value was computed by the caller and
    /// whose backward pass is supplied by `rule`.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        value: Tensor<S>,
        rule: Box<dyn BackwardRule<S>>,
    ) -> Var {
        let ng = inputs.iter().any(|&v| self.ng(v));
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                rule,
            },
            ng,
        )
    }

    /// Reverse sweep from a scalar `loss`, accumulating into leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(self.shape(loss)));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                let node = &mut self.nodes[i];
                match node.grad.as_mut() {
                    Some(acc) => acc.add_assign(&g)?,
                    None => node.grad = Some(g),
                }
                continue;
            }
            for (v, t) in self.input_grads(i, &g)? {
                if !self.nodes[v.0].needs_grad {
                    continue;
                }
                match grads[v.0].as_mut() {
                    Some(acc) => acc.add_assign(&t)?,
                    None => grads[v.0] = Some(t),
                }
            }
        }
        Ok(())
    }

    fn input_grads(&self, i: usize, g: &Tensor<S>) -> Result<Vec<(Var, Tensor<S>)>> {
        let node = &self.nodes[i];
        let mut out = Vec::with_capacity(2);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul {
                a,
                b,
                m,
                k,
                n,
                trans_b,
            } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    // da[m,k] = g[m,n] · op(b)ᵀ
                    let mut da = vec![S::ZERO; m * k];
                    kernels::gemm(g.data(), vb.data(), &mut da, *m, *n, *k, false, !*trans_b, false);
                    out.push((*a, Tensor::new(va.shape(), da)?));
                }
                if self.ng(*b) {
                    let mut db = vec![S::ZERO; k * n];
                    if *trans_b {
                        // b is [n,k]: db = gᵀ[n,m] · a[m,k]
                        kernels::gemm(g.data(), va.data(), &mut db, *n, *m, *k, true, false, false);
                    } else {
                        // db[k,n] = aᵀ[k,m] · g[m,n]
                        kernels::gemm(va.data(), g.data(), &mut db, *k, *m, *n, true, false, false);
                    }
                    out.push((*b, Tensor::new(vb.shape(), db)?));
                }
            }
            Op::Binary { kind, a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let inner = vb.len().max(1);
                let reduce = |full: Vec<S>| -> Result<Tensor<S>> {
                    if full.len() == inner {
                        return Tensor::new(vb.shape(), full);
                    }
                    let mut acc = vec![S::ZERO; inner];
                    for chunk in full.chunks(inner) {
                        acc.iter_mut().zip(chunk).for_each(|(s, &v)| *s += v);
                    }
                    Tensor::new(vb.shape(), acc)
                };
                let gd = g.data();
                let bd = vb.data();
                match kind {
                    BinaryKind::Add | BinaryKind::Sub => {
                        if self.ng(*a) {
                            out.push((*a, g.clone()));
                        }
                        if self.ng(*b) {
                            let mut t = reduce(gd.to_vec())?;
                            if *kind == BinaryKind::Sub {
                                t.map_inplace(|v| -v);
                            }
                            out.push((*b, t));
                        }
                    }
                    BinaryKind::Mul => {
                        if self.ng(*a) {
                            let mut da = gd.to_vec();
                            for chunk in da.chunks_mut(inner) {
                                chunk.iter_mut().zip(bd).for_each(|(x, &y)| *x *= y);
                            }
                            out.push((*a, Tensor::new(va.shape(), da)?));
                        }
                        if self.ng(*b) {
                            let prod: Vec<S> =
                                gd.iter().zip(va.data()).map(|(&x, &y)| x * y).collect();
                            out.push((*b, reduce(prod)?));
                        }
                    }
                    BinaryKind::Div => {
                        if self.ng(*a) {
                            let mut da = gd.to_vec();
                            for chunk in da.chunks_mut(inner) {
                                chunk.iter_mut().zip(bd).for_each(|(x, &y)| *x /= y);
                            }
                            out.push((*a, Tensor::new(va.shape(), da)?));
                        }
                        if self.ng(*b) {
                            let mut db = Vec::with_capacity(gd.len());
                            for (gc, ac) in gd.chunks(inner).zip(va.data().chunks(inner)) {
                                for ((&gv, &av), &bv) in gc.iter().zip(ac).zip(bd) {
                                    db.push(-gv * av / (bv * bv));
                                }
                            }
                            out.push((*b, reduce(db)?));
                        }
                    }
                }
            }
            Op::Scale { x, c } => {
                let c = *c;
                out.push((*x, g.map(|v| v * c)));
            }
            Op::AddScalar { x } => out.push((*x, g.clone())),
            Op::Relu { x } => {
                let t = g.zip_map(self.value(*x), |gv, xv| if xv > S::ZERO { gv } else { S::ZERO })?;
                out.push((*x, t));
            }
            Op::Affine { x, gain, bias } => {
                let (vx, vg) = (self.value(*x), self.value(*gain));
                let inner = vg.len().max(1);
                if self.ng(*x) {
                    let mut dx = g.data().to_vec();
                    for chunk in dx.chunks_mut(inner) {
                        chunk.iter_mut().zip(vg.data()).for_each(|(d, &s)| *d *= s);
                    }
                    out.push((*x, Tensor::new(vx.shape(), dx)?));
                }
                if self.ng(*gain) {
                    let mut acc = vec![S::ZERO; inner];
                    for (gc, xc) in g.data().chunks(inner).zip(vx.data().chunks(inner)) {
                        for ((a, &gv), &xv) in acc.iter_mut().zip(gc).zip(xc) {
                            *a += gv * xv;
                        }
                    }
                    out.push((*gain, Tensor::new(vg.shape(), acc)?));
                }
                if self.ng(*bias) {
                    let mut acc = vec![S::ZERO; inner];
                    for gc in g.data().chunks(inner) {
                        acc.iter_mut().zip(gc).for_each(|(a, &gv)| *a += gv);
                    }
                    out.push((*bias, Tensor::new(vg.shape(), acc)?));
                }
            }
            Op::StraightThrough { source } => out.push((*source, g.clone())),
            Op::Conv2d { x, w, geom, batch } => {
                let (dx, dw) = kernels::conv2d_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    g.data(),
                    *batch,
                    geom,
                    self.ng(*x),
                    self.ng(*w),
                );
                if let Some(dx) = dx {
                    out.push((*x, Tensor::new(self.shape(*x), dx)?));
                }
                if let Some(dw) = dw {
                    out.push((*w, Tensor::new(self.shape(*w), dw)?));
                }
            }
            Op::AvgPool2 { x, dims } => {
                let dx = kernels::avg_pool2_backward(g.data(), dims[0], dims[1], dims[2], dims[3]);
                out.push((*x, Tensor::new(dims, dx)?));
            }
            Op::Reshape { x } => out.push((*x, g.clone().reshape(self.shape(*x))?)),
            Op::SumAll { x } => out.push((*x, Tensor::full(self.shape(*x), g.item()))),
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let k = self.shape(*logits)[1];
                let scale = g.item() / S::from_f64(labels.len().max(1) as f64);
                let mut d = probs.clone();
                for (i, &l) in labels.iter().enumerate() {
                    d[i * k + l] -= S::ONE;
                }
                d.iter_mut().for_each(|v| *v *= scale);
                out.push((*logits, Tensor::new(self.shape(*logits), d)?));
            }
            Op::Custom { inputs, rule } => {
                let vals: Vec<&Tensor<S>> = inputs.iter().map(|&v| self.value(v)).collect();
                let grads = rule.backward(g, &vals, &node.value);
                for (&v, t) in inputs.iter().zip(grads) {
                    if let Some(t) = t {
                        if t.shape() != self.shape(v) {
                            return Err(dim_err(
                                "custom backward",
                                format!("{} returned {:?} for input {:?}", rule.name(), t.shape(), self.shape(v)),
                            ));
                        }
                        out.push((v, t));
                    }
                }
            }
        }
        Ok(out)
    }
}
