//! Reverse-mode automatic differentiation over an append-only tape.
//!
//! Every operation appends a node holding its output value plus whatever it
//! needs for the adjoint. [`Tape::backward`] walks the nodes in reverse append
//! order exactly once, summing gradient contributions into each input.

mod conv;
pub mod gradcheck;

pub use conv::Padding;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use conv::ConvGeometry;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, geo: ConvGeometry },
    MaxPool2 { x: Var, argmax: Vec<usize> },
    Upsample2 { x: Var },
    Concat { a: Var, b: Var },
    Dense { x: Var, w: Var, b: Var },
    Relu { x: Var },
    Sigmoid { x: Var },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T> },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: T },
    AddScalar { x: Var },
    LogClamped { x: Var, floor: T },
    Sum { x: Var },
    Mean { x: Var },
    MeanPerExample { x: Var },
    Reshape { x: Var },
    GlobalAvgPool { x: Var },
    BroadcastSpatial { x: Var },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Single-threaded differentiation graph; one training step owns one tape.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A differentiable input (parameter or probe).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient populated by the last [`Tape::backward`]; `None` for
    /// constants and nodes the loss does not depend on.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of a leaf, zero-filled when the loss did not reach it.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor<T> {
        self.grad(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.value(v).shape().to_vec()))
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        const OP: &str = "conv2d";
        let (batch, cin, h, wd) = self.value(x).dims4(OP)?;
        let (cout, kcin, kh, kw) = self.value(w).dims4(OP)?;
        if kcin != cin {
            return Err(Error::Shape {
                op: OP,
                axis: "channel",
                expected: kcin,
                found: cin,
            });
        }
        if kh != kw {
            return Err(Error::Shape {
                op: OP,
                axis: "width",
                expected: kh,
                found: kw,
            });
        }
        if self.value(b).shape() != [cout] {
            return Err(Error::Shape {
                op: OP,
                axis: "bias",
                expected: cout,
                found: self.value(b).len(),
            });
        }
        let geo = ConvGeometry::new(cin, h, wd, kh, stride, padding)?;
        let mut out = vec![T::zero(); batch * cout * geo.out_pixels()];
        conv::forward(
            self.value(x).data(),
            batch,
            &geo,
            self.value(w).data(),
            self.value(b).data(),
            &mut out,
        );
        let value = Tensor::new([batch, cout, geo.hout, geo.wout], out)?;
        let rg = self.needs(&[x, w, b]);
        Ok(self.push(value, Op::Conv2d { x, w, b, geo }, rg))
    }

    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        const OP: &str = "maxpool2";
        let (batch, ch, h, w) = self.value(x).dims4(OP)?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::precondition(
                OP,
                format!("spatial dimensions must be even, got {h}x{w}"),
            ));
        }
        let (ho, wo) = (h / 2, w / 2);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(batch * ch * ho * wo);
        let mut argmax = Vec::with_capacity(out.capacity());
        for plane in 0..batch * ch {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    // row-major window order; strict comparison keeps the first on ties,
                    // and a NaN anywhere in the window wins so it is not hidden
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if src[idx] > src[best] || (src[idx].is_nan() && !src[best].is_nan()) {
                            best = idx;
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::new([batch, ch, ho, wo], out)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::MaxPool2 { x, argmax }, rg))
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let (batch, ch, h, w) = self.value(x).dims4("upsample2")?;
        let src = self.value(x).data();
        let (ho, wo) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); batch * ch * ho * wo];
        for plane in 0..batch * ch {
            for y in 0..ho {
                for xo in 0..wo {
                    out[plane * ho * wo + y * wo + xo] = src[plane * h * w + (y / 2) * w + xo / 2];
                }
            }
        }
        let value = Tensor::new([batch, ch, ho, wo], out)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::Upsample2 { x }, rg))
    }

    /// Channel concatenation: `a` fills channels `[0, C1)`, `b` fills `[C1, C1 + C2)`.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        const OP: &str = "concat_channels";
        let (ba, ca, ha, wa) = self.value(a).dims4(OP)?;
        let (bb, cb, hb, wb) = self.value(b).dims4(OP)?;
        for (axis, expected, found) in [("batch", ba, bb), ("height", ha, hb), ("width", wa, wb)] {
            if expected != found {
                return Err(Error::Shape {
                    op: OP,
                    axis,
                    expected,
                    found,
                });
            }
        }
        let (sa, sb) = (ca * ha * wa, cb * ha * wa);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(ba * (sa + sb));
        for n in 0..ba {
            out.extend_from_slice(&da[n * sa..(n + 1) * sa]);
            out.extend_from_slice(&db[n * sb..(n + 1) * sb]);
        }
        let value = Tensor::new([ba, ca + cb, ha, wa], out)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Concat { a, b }, rg))
    }

    /// Affine map `x · w + b` for `x: [B, N]`, `w: [N, M]`, `b: [M]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        const OP: &str = "dense";
        let (batch, n) = self.value(x).dims2(OP)?;
        let (wn, m) = self.value(w).dims2(OP)?;
        if wn != n {
            return Err(Error::Shape {
                op: OP,
                axis: "inner",
                expected: wn,
                found: n,
            });
        }
        if self.value(b).shape() != [m] {
            return Err(Error::Shape {
                op: OP,
                axis: "bias",
                expected: m,
                found: self.value(b).len(),
            });
        }
        let mut out = vec![T::zero(); batch * m];
        for row in out.chunks_mut(m) {
            row.copy_from_slice(self.value(b).data());
        }
        T::gemm(
            batch,
            n,
            m,
            self.value(x).data(),
            false,
            self.value(w).data(),
            false,
            &mut out,
            true,
        );
        let value = Tensor::new([batch, m], out)?;
        let rg = self.needs(&[x, w, b]);
        Ok(self.push(value, Op::Dense { x, w, b }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > T::zero() || v.is_nan() { v } else { T::zero() });
        let rg = self.needs(&[x]);
        self.push(value, Op::Relu { x }, rg)
    }

    /// Logistic function, kept strictly inside `(0, 1)` even where the
    /// storage precision would round to an endpoint.
    pub fn sigmoid(&mut self, x: Var) -> Var {
        let lo = T::min_positive_value();
        let hi = T::one() - T::epsilon() / T::from_f64_lossy(2.0);
        let value = self.value(x).map(|v| {
            if v.is_nan() {
                return v;
            }
            let s = if v >= T::zero() {
                T::one() / (T::one() + (-v).exp())
            } else {
                let e = v.exp();
                e / (T::one() + e)
            };
            s.max(lo).min(hi)
        });
        let rg = self.needs(&[x]);
        self.push(value, Op::Sigmoid { x }, rg)
    }

    /// Batch normalisation over `(batch, height, width)` per channel, using
    /// the statistics of the current batch.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        const OP: &str = "batch_norm";
        let (batch, ch, h, w) = self.value(x).dims4(OP)?;
        for p in [gamma, beta] {
            if self.value(p).shape() != [ch] {
                return Err(Error::Shape {
                    op: OP,
                    axis: "channel",
                    expected: ch,
                    found: self.value(p).len(),
                });
            }
        }
        let hw = h * w;
        let count = T::from_usize(batch * hw).unwrap_or_else(T::one);
        let src = self.value(x).data();
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); src.len()];
        let mut out = vec![T::zero(); src.len()];
        let mut inv_std = Vec::with_capacity(ch);
        for c in 0..ch {
            let idx = |n: usize| (n * ch + c) * hw;
            let mut mean = T::zero();
            for n in 0..batch {
                mean += src[idx(n)..idx(n) + hw].iter().copied().sum::<T>();
            }
            mean = mean / count;
            let mut var = T::zero();
            for n in 0..batch {
                var += src[idx(n)..idx(n) + hw]
                    .iter()
                    .map(|&v| (v - mean) * (v - mean))
                    .sum::<T>();
            }
            var = var / count;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for n in 0..batch {
                for i in idx(n)..idx(n) + hw {
                    xhat[i] = (src[i] - mean) * is;
                    out[i] = g[c] * xhat[i] + bt[c];
                }
            }
        }
        let value = Tensor::new([batch, ch, h, w], out)?;
        let rg = self.needs(&[x, gamma, beta]);
        Ok(self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "add", |p, q| p + q)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add { a, b }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "sub", |p, q| p - q)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Sub { a, b }, rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "mul", |p, q| p * q)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let value = self.value(x).map(|v| v * factor);
        let rg = self.needs(&[x]);
        self.push(value, Op::Scale { x, factor }, rg)
    }

    pub fn add_scalar(&mut self, x: Var, offset: T) -> Var {
        let value = self.value(x).map(|v| v + offset);
        let rg = self.needs(&[x]);
        self.push(value, Op::AddScalar { x }, rg)
    }

    /// `ln(max(x, floor))`; the gradient is zero where the floor is active.
    pub fn log_clamped(&mut self, x: Var, floor: T) -> Var {
        let value = self.value(x).map(|v| v.max(floor).ln());
        let rg = self.needs(&[x]);
        self.push(value, Op::LogClamped { x, floor }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.needs(&[x]);
        self.push(value, Op::Sum { x }, rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(Error::precondition("mean", "empty tensor"));
        }
        let value = Tensor::scalar(self.value(x).sum() / T::from_usize(n).unwrap_or_else(T::one));
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::Mean { x }, rg))
    }

    /// Mean over every axis but the first: `[B, ...] -> [B]`.
    pub fn mean_per_example(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let batch = *t.shape().first().ok_or(Error::Rank {
            op: "mean_per_example",
            expected: 1,
            found: 0,
        })?;
        if batch == 0 || t.is_empty() {
            return Err(Error::precondition("mean_per_example", "empty batch"));
        }
        let inner = t.len() / batch;
        let denom = T::from_usize(inner).unwrap_or_else(T::one);
        let means = t
            .data()
            .chunks(inner)
            .map(|c| c.iter().copied().sum::<T>() / denom)
            .collect();
        let value = Tensor::new([batch], means)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::MeanPerExample { x }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::Reshape { x }, rg))
    }

    /// `[B, C, H, W] -> [B, C·H·W]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let (b, c, h, w) = self.value(x).dims4("flatten")?;
        self.reshape(x, [b, c * h * w])
    }

    /// `[B, C, H, W] -> [B, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (b, c, h, w) = self.value(x).dims4("global_avg_pool")?;
        let hw = h * w;
        let denom = T::from_usize(hw).unwrap_or_else(T::one);
        let means = self
            .value(x)
            .data()
            .chunks(hw)
            .map(|p| p.iter().copied().sum::<T>() / denom)
            .collect();
        let value = Tensor::new([b, c], means)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::GlobalAvgPool { x }, rg))
    }

    /// `[B, F] -> [B, F, H, W]` by spatial replication.
    pub fn broadcast_spatial(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let (b, f) = self.value(x).dims2("broadcast_spatial")?;
        let mut out = Vec::with_capacity(b * f * h * w);
        for &v in self.value(x).data() {
            out.extend(std::iter::repeat(v).take(h * w));
        }
        let value = Tensor::new([b, f, h, w], out)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::BroadcastSpatial { x }, rg))
    }

    /// Populates gradients of every node the scalar `loss` depends on.
    /// Gradients from a previous call are discarded first.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::precondition("backward", "loss is not on this tape"));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::precondition(
                "backward",
                format!(
                    "loss must be a scalar, got shape {:?}",
                    self.nodes[loss.0].value.shape()
                ),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(
            self.nodes[loss.0].value.shape().to_vec(),
            T::one(),
        ));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else {
                continue;
            };
            self.propagate(node, &gy, &mut grads)?;
            grads[i] = Some(gy);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, node: &Node<T>, gy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut send = |v: Var, g: Tensor<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        };
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geo } => {
                let batch = val(*x).shape()[0];
                let cout = val(*b).len();
                let mut gx = wants(*x).then(|| vec![T::zero(); val(*x).len()]);
                let mut gw = wants(*w).then(|| vec![T::zero(); val(*w).len()]);
                let mut gb = wants(*b).then(|| vec![T::zero(); cout]);
                conv::backward(
                    val(*x).data(),
                    batch,
                    geo,
                    val(*w).data(),
                    cout,
                    gy.data(),
                    gx.as_deref_mut(),
                    gw.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                for (v, g) in [(*x, gx), (*w, gw), (*b, gb)] {
                    if let Some(g) = g {
                        send(v, Tensor::new(val(v).shape().to_vec(), g)?);
                    }
                }
            }
            Op::MaxPool2 { x, argmax } => {
                let mut g = vec![T::zero(); val(*x).len()];
                for (&src, &d) in argmax.iter().zip(gy.data()) {
                    g[src] += d;
                }
                send(*x, Tensor::new(val(*x).shape().to_vec(), g)?);
            }
            Op::Upsample2 { x } => {
                let (_, _, h, w) = val(*x).dims4("upsample2")?;
                let (ho, wo) = (2 * h, 2 * w);
                let mut g = vec![T::zero(); val(*x).len()];
                for (plane, dst) in g.chunks_mut(h * w).enumerate() {
                    let src = &gy.data()[plane * ho * wo..(plane + 1) * ho * wo];
                    for yy in 0..ho {
                        for xx in 0..wo {
                            dst[(yy / 2) * w + xx / 2] += src[yy * wo + xx];
                        }
                    }
                }
                send(*x, Tensor::new(val(*x).shape().to_vec(), g)?);
            }
            Op::Concat { a, b } => {
                let batch = val(*a).shape()[0];
                let (sa, sb) = (val(*a).len() / batch, val(*b).len() / batch);
                let mut ga = Vec::with_capacity(val(*a).len());
                let mut gb = Vec::with_capacity(val(*b).len());
                for chunk in gy.data().chunks(sa + sb) {
                    ga.extend_from_slice(&chunk[..sa]);
                    gb.extend_from_slice(&chunk[sa..]);
                }
                send(*a, Tensor::new(val(*a).shape().to_vec(), ga)?);
                send(*b, Tensor::new(val(*b).shape().to_vec(), gb)?);
            }
            Op::Dense { x, w, b } => {
                let (batch, n) = val(*x).dims2("dense")?;
                let m = val(*b).len();
                if wants(*x) {
                    let mut g = vec![T::zero(); batch * n];
                    T::gemm(batch, m, n, gy.data(), false, val(*w).data(), true, &mut g, false);
                    send(*x, Tensor::new([batch, n], g)?);
                }
                if wants(*w) {
                    let mut g = vec![T::zero(); n * m];
                    T::gemm(n, batch, m, val(*x).data(), true, gy.data(), false, &mut g, false);
                    send(*w, Tensor::new([n, m], g)?);
                }
                if wants(*b) {
                    let mut g = vec![T::zero(); m];
                    for row in gy.data().chunks(m) {
                        for (acc, &d) in g.iter_mut().zip(row) {
                            *acc += d;
                        }
                    }
                    send(*b, Tensor::new([m], g)?);
                }
            }
            Op::Relu { x } => {
                send(
                    *x,
                    val(*x).zip_map(gy, "relu", |v, d| if v > T::zero() { d } else { T::zero() })?,
                );
            }
            Op::Sigmoid { x } => {
                send(*x, y.zip_map(gy, "sigmoid", |s, d| d * s * (T::one() - s))?);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (batch, ch, h, w) = val(*x).dims4("batch_norm")?;
                let hw = h * w;
                let count = T::from_usize(batch * hw).unwrap_or_else(T::one);
                let g = val(*gamma).data();
                let dy = gy.data();
                let mut gx = vec![T::zero(); dy.len()];
                let mut ggamma = vec![T::zero(); ch];
                let mut gbeta = vec![T::zero(); ch];
                for c in 0..ch {
                    let planes = (0..batch).map(|n| (n * ch + c) * hw);
                    let (mut sum_d, mut sum_dx) = (T::zero(), T::zero());
                    for base in planes.clone() {
                        for i in base..base + hw {
                            sum_d += dy[i];
                            sum_dx += dy[i] * xhat[i];
                        }
                    }
                    ggamma[c] = sum_dx;
                    gbeta[c] = sum_d;
                    let k = g[c] * inv_std[c] / count;
                    for base in planes {
                        for i in base..base + hw {
                            gx[i] = k * (count * dy[i] - sum_d - xhat[i] * sum_dx);
                        }
                    }
                }
                send(*x, Tensor::new(val(*x).shape().to_vec(), gx)?);
                send(*gamma, Tensor::new([ch], ggamma)?);
                send(*beta, Tensor::new([ch], gbeta)?);
            }
            Op::Add { a, b } => {
                send(*a, gy.clone());
                send(*b, gy.clone());
            }
            Op::Sub { a, b } => {
                send(*a, gy.clone());
                send(*b, gy.map(|d| -d));
            }
            Op::Mul { a, b } => {
                send(*a, gy.zip_map(val(*b), "mul", |d, q| d * q)?);
                send(*b, gy.zip_map(val(*a), "mul", |d, p| d * p)?);
            }
            Op::Scale { x, factor } => send(*x, gy.map(|d| d * *factor)),
            Op::AddScalar { x } => send(*x, gy.clone()),
            Op::LogClamped { x, floor } => {
                send(
                    *x,
                    val(*x).zip_map(gy, "log", |v, d| if v > *floor { d / v } else { T::zero() })?,
                );
            }
            Op::Sum { x } => {
                let d = gy.data()[0];
                send(*x, Tensor::full(val(*x).shape().to_vec(), d));
            }
            Op::Mean { x } => {
                let n = T::from_usize(val(*x).len()).unwrap_or_else(T::one);
                let d = gy.data()[0] / n;
                send(*x, Tensor::full(val(*x).shape().to_vec(), d));
            }
            Op::MeanPerExample { x } => {
                let batch = gy.len();
                let inner = val(*x).len() / batch;
                let n = T::from_usize(inner).unwrap_or_else(T::one);
                let mut g = Vec::with_capacity(val(*x).len());
                for &d in gy.data() {
                    g.extend(std::iter::repeat(d / n).take(inner));
                }
                send(*x, Tensor::new(val(*x).shape().to_vec(), g)?);
            }
            Op::Reshape { x } => send(*x, gy.clone().reshape(val(*x).shape().to_vec())?),
            Op::GlobalAvgPool { x } => {
                let (_, _, h, w) = val(*x).dims4("global_avg_pool")?;
                let n = T::from_usize(h * w).unwrap_or_else(T::one);
                let mut g = Vec::with_capacity(val(*x).len());
                for &d in gy.data() {
                    g.extend(std::iter::repeat(d / n).take(h * w));
                }
                send(*x, Tensor::new(val(*x).shape().to_vec(), g)?);
            }
            Op::BroadcastSpatial { x } => {
                let (_, _, h, w) = y.dims4("broadcast_spatial")?;
                let g = gy
                    .data()
                    .chunks(h * w)
                    .map(|c| c.iter().copied().sum::<T>())
                    .collect();
                send(*x, Tensor::new(val(*x).shape().to_vec(), g)?);
            }
        }
        Ok(())
    }
}
