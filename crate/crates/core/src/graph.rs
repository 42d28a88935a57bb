//! Reverse-mode differentiation over a recorded operation list.
//!
//! A [`Graph`] owns every value produced while evaluating a model. Operations
//! append nodes, so node order is a topological order and `backward` is a
//! single reverse sweep. [`Var`] is a plain index into the graph.

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::tensor::{Float, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Abs(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    LeakyRelu(Var, T),
    Tanh(Var),
    Sigmoid(Var),
    Ln(Var),
    Clamp(Var, T, T),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    /// `geom` describes the convolution this op is the adjoint of.
    Deconv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Dense {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    UpsampleNearest(Var, usize),
    UpsampleBilinear(Var, usize),
    DownsampleAvg(Var, usize),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<T>,
        inv_std: Vec<T>,
    },
    ChannelAffine {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        inv_std: Vec<T>,
    },
    Concat(Vec<Var>),
    GlobalAvgPool(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

/// Batch statistics computed by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance.
    pub var: Vec<T>,
}

#[derive(Clone, Debug, Default)]
pub struct Graph<T: Float = f32> {
    nodes: Vec<Node<T>>,
}

/// `(batch, channels, plane)` view of an NCHW or N×C tensor.
fn channel_layout<T: Float>(t: &Tensor<T>, op: &'static str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [n, c] => Ok((n, c, 1)),
        [n, c, h, w] => Ok((n, c, h * w)),
        _ => Err(Error::dim(op, "rank", "2 or 4", t.ndim())),
    }
}

fn check_vector<T: Float>(t: &Tensor<T>, len: usize, op: &'static str, axis: &'static str) -> Result<()> {
    if t.len() != len {
        return Err(Error::dim(op, axis, len, t.len()));
    }
    Ok(())
}

fn conv_geom(
    op: &'static str,
    x: (usize, usize, usize, usize),
    w: (usize, usize, usize, usize),
    stride: usize,
    padding: usize,
) -> Result<ConvGeom> {
    let (n, c, h, wd) = x;
    let (o, i, kh, kw) = w;
    if stride == 0 {
        return Err(Error::InvalidArgument(format!("{op}: stride must be >= 1")));
    }
    if kh != kw {
        return Err(Error::dim(op, "kernel_width", kh, kw));
    }
    if i != c {
        return Err(Error::dim(op, "in_channels", c, i));
    }
    if h + 2 * padding < kh {
        return Err(Error::dim(op, "height", format!(">= {}", kh), h + 2 * padding));
    }
    if wd + 2 * padding < kh {
        return Err(Error::dim(op, "width", format!(">= {}", kh), wd + 2 * padding));
    }
    Ok(ConvGeom {
        batch: n,
        in_channels: c,
        in_h: h,
        in_w: wd,
        out_channels: o,
        kernel: kh,
        stride,
        padding,
        out_h: (h + 2 * padding - kh) / stride + 1,
        out_w: (wd + 2 * padding - kh) / stride + 1,
    })
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of `v`, populated by [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// A gradient-free copy of `v`.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(
                op,
                "shape",
                format!("{:?}", self.shape(a)),
                format!("{:?}", self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_parts(ta.shape().to_vec(), data)
    }

    fn unary(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let value = self.value(x).map(f);
        self.push(value, op, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.zip_map(a, b, |x, y| x - y);
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        self.unary(x, Op::Scale(x, s), |v| v * s)
    }

    pub fn add_scalar(&mut self, x: Var, s: T) -> Var {
        self.unary(x, Op::AddScalar(x), |v| v + s)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Op::Abs(x), |v| v.abs())
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().copied().sum::<T>() / T::from_f64(t.len() as f64);
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        self.unary(x, Op::LeakyRelu(x, slope), |v| if v >= T::zero() { v } else { slope * v })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, T::zero())
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), |v| v.tanh())
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), |v| T::one() / (T::one() + (-v).exp()))
    }

    /// Natural logarithm.
    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, Op::Ln(x), |v| v.ln())
    }

    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        self.unary(x, Op::Clamp(x, lo, hi), |v| v.max(lo).min(hi))
    }

    /// Zero-padded 2-D convolution. `x: [N, C, H, W]`, `w: [O, C, K, K]`, `b: [O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let geom = conv_geom(
            "conv2d",
            self.value(x).dims4("conv2d")?,
            self.value(w).dims4("conv2d")?,
            stride,
            padding,
        )?;
        if let Some(b) = b {
            check_vector(self.value(b), geom.out_channels, "conv2d", "bias")?;
        }
        let data = kernels::conv_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &geom,
        );
        let value = Tensor::from_parts(vec![geom.batch, geom.out_channels, geom.out_h, geom.out_w], data);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }, &inputs))
    }

    /// Transposed convolution, the adjoint of [`Graph::conv2d`] with the same
    /// kernel. `x: [N, Cin, H, W]`, `w: [Cin, Cout, K, K]`, `b: [Cout]`;
    /// output extent is `(H - 1)·stride - 2·padding + K`.
    pub fn deconv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let (n, cin, h, wd) = self.value(x).dims4("deconv2d")?;
        let (wi, wo, kh, kw) = self.value(w).dims4("deconv2d")?;
        if stride == 0 {
            return Err(Error::InvalidArgument("deconv2d: stride must be >= 1".into()));
        }
        if wi != cin {
            return Err(Error::dim("deconv2d", "in_channels", cin, wi));
        }
        if kh != kw {
            return Err(Error::dim("deconv2d", "kernel_width", kh, kw));
        }
        let out_h = ((h - 1) * stride + kh).checked_sub(2 * padding).filter(|&v| v > 0);
        let out_w = ((wd - 1) * stride + kh).checked_sub(2 * padding).filter(|&v| v > 0);
        let (Some(out_h), Some(out_w)) = (out_h, out_w) else {
            return Err(Error::dim("deconv2d", "height", format!("padding < {}", kh), padding));
        };
        // The convolution mapping the deconv output back onto its input.
        let geom = conv_geom("deconv2d", (n, wo, out_h, out_w), (cin, wo, kh, kw), stride, padding)?;
        debug_assert_eq!((geom.out_h, geom.out_w), (h, wd));
        if let Some(b) = b {
            check_vector(self.value(b), wo, "deconv2d", "bias")?;
        }
        let mut data = kernels::conv_backward_data(self.value(x).data(), self.value(w).data(), &geom);
        if let Some(b) = b {
            let bias = self.value(b).data();
            for (i, chunk) in data.chunks_mut(out_h * out_w).enumerate() {
                let bc = bias[i % wo];
                chunk.iter_mut().for_each(|v| *v += bc);
            }
        }
        let value = Tensor::from_parts(vec![n, wo, out_h, out_w], data);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(value, Op::Deconv2d { x, w, b, geom }, &inputs))
    }

    /// Affine map `x·W + b`. `x: [N, F]`, `w: [F, G]`, `b: [G]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, f) = self.value(x).dims2("dense")?;
        let (wf, g) = self.value(w).dims2("dense")?;
        if wf != f {
            return Err(Error::dim("dense", "features", f, wf));
        }
        let mut data = vec![T::zero(); n * g];
        if let Some(b) = b {
            check_vector(self.value(b), g, "dense", "bias")?;
            let bias = self.value(b).data();
            for row in data.chunks_mut(g) {
                row.copy_from_slice(bias);
            }
        }
        kernels::gemm_nn(n, g, f, self.value(x).data(), self.value(w).data(), &mut data);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(Tensor::from_parts(vec![n, g], data), Op::Dense { x, w, b }, &inputs))
    }

    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(Error::InvalidArgument("upsample factor must be >= 1".into()));
        }
        let (n, c, h, w) = self.value(x).dims4("upsample_nearest")?;
        let data = kernels::upsample_nearest(self.value(x).data(), n * c, h, w, factor);
        let value = Tensor::from_parts(vec![n, c, h * factor, w * factor], data);
        Ok(self.push(value, Op::UpsampleNearest(x, factor), &[x]))
    }

    /// Bilinear upsampling with half-pixel centres and edge clamping.
    pub fn upsample_bilinear(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(Error::InvalidArgument("upsample factor must be >= 1".into()));
        }
        let (n, c, h, w) = self.value(x).dims4("upsample_bilinear")?;
        let data = kernels::upsample_bilinear(self.value(x).data(), n * c, h, w, factor);
        let value = Tensor::from_parts(vec![n, c, h * factor, w * factor], data);
        Ok(self.push(value, Op::UpsampleBilinear(x, factor), &[x]))
    }

    /// Non-overlapping `factor×factor` mean pooling.
    pub fn downsample_avg(&mut self, x: Var, factor: usize) -> Result<Var> {
        let value = downsample_avg(self.value(x), factor)?;
        Ok(self.push(value, Op::DownsampleAvg(x, factor), &[x]))
    }

    /// Training-mode batch normalization over the channel axis.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<(Var, BatchStats<T>)> {
        let (n, c, plane) = channel_layout(self.value(x), "batch_norm")?;
        check_vector(self.value(gamma), c, "batch_norm", "gamma")?;
        check_vector(self.value(beta), c, "batch_norm", "beta")?;
        let xs = self.value(x).data();
        let m = T::from_f64((n * plane) as f64);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut s = T::zero();
            for b in 0..n {
                let start = (b * c + ch) * plane;
                s += xs[start..start + plane].iter().copied().sum::<T>();
            }
            mean[ch] = s / m;
            let mut sq = T::zero();
            for b in 0..n {
                let start = (b * c + ch) * plane;
                sq += xs[start..start + plane]
                    .iter()
                    .map(|&v| (v - mean[ch]) * (v - mean[ch]))
                    .sum::<T>();
            }
            var[ch] = sq / m;
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut normalized = vec![T::zero(); xs.len()];
        let mut out = vec![T::zero(); xs.len()];
        for (i, (nv, ov)) in normalized.iter_mut().zip(out.iter_mut()).enumerate() {
            let ch = (i / plane) % c;
            *nv = (xs[i] - mean[ch]) * inv_std[ch];
            *ov = g[ch] * *nv + bt[ch];
        }
        let value = Tensor::from_parts(self.value(x).shape().to_vec(), out);
        let var_node = self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            },
            &[x, gamma, beta],
        );
        Ok((var_node, BatchStats { mean, var }))
    }

    /// Inference-mode batch normalization with fixed statistics.
    pub fn batch_norm_inference(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        var: &[T],
        eps: T,
    ) -> Result<Var> {
        let (_, c, plane) = channel_layout(self.value(x), "batch_norm")?;
        check_vector(self.value(gamma), c, "batch_norm", "gamma")?;
        check_vector(self.value(beta), c, "batch_norm", "beta")?;
        if mean.len() != c || var.len() != c {
            return Err(Error::dim("batch_norm", "running_stats", c, mean.len().min(var.len())));
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let xs = self.value(x);
        let out: Vec<T> = xs
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let ch = (i / plane) % c;
                g[ch] * ((v - mean[ch]) * inv_std[ch]) + bt[ch]
            })
            .collect();
        let value = Tensor::from_parts(xs.shape().to_vec(), out);
        Ok(self.push(
            value,
            Op::ChannelAffine {
                x,
                gamma,
                beta,
                mean: mean.to_vec(),
                inv_std,
            },
            &[x, gamma, beta],
        ))
    }

    /// Concatenation along the channel axis of NCHW tensors.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::EmptyBatch("concat_channels"))?;
        let (n, _, h, w) = self.value(first).dims4("concat_channels")?;
        let mut total_c = 0;
        for &p in parts {
            let (pn, pc, ph, pw) = self.value(p).dims4("concat_channels")?;
            if pn != n {
                return Err(Error::dim("concat_channels", "batch", n, pn));
            }
            if (ph, pw) != (h, w) {
                return Err(Error::dim("concat_channels", "spatial", format!("{h}x{w}"), format!("{ph}x{pw}")));
            }
            total_c += pc;
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * total_c * plane);
        for b in 0..n {
            for &p in parts {
                let t = self.value(p);
                let c = t.shape()[1];
                data.extend_from_slice(&t.data()[b * c * plane..(b + 1) * c * plane]);
            }
        }
        let value = Tensor::from_parts(vec![n, total_c, h, w], data);
        Ok(self.push(value, Op::Concat(parts.to_vec()), parts))
    }

    /// Mean over spatial positions: `[N, C, H, W] -> [N, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4("global_avg_pool")?;
        let plane = h * w;
        let scale = T::from_f64(1.0 / plane as f64);
        let data = self
            .value(x)
            .data()
            .chunks(plane)
            .map(|p| p.iter().copied().sum::<T>() * scale)
            .collect();
        Ok(self.push(Tensor::from_parts(vec![n, c], data), Op::GlobalAvgPool(x), &[x]))
    }

    /// Mean softmax cross-entropy of `[N, K]` logits against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, k) = self.value(logits).dims2("softmax_cross_entropy")?;
        if labels.len() != n {
            return Err(Error::dim("softmax_cross_entropy", "batch", n, labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::dim("softmax_cross_entropy", "label", format!("< {k}"), bad));
        }
        let mut probs = vec![T::zero(); n * k];
        let mut loss = T::zero();
        for (row, (lrow, prow)) in self
            .value(logits)
            .data()
            .chunks(k)
            .zip(probs.chunks_mut(k))
            .enumerate()
        {
            let max = lrow.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = lrow.iter().map(|&v| (v - max).exp()).sum();
            for (p, &v) in prow.iter_mut().zip(lrow) {
                *p = (v - max).exp() / z;
            }
            loss += z.ln() + max - lrow[labels[row]];
        }
        loss /= T::from_f64(n as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Propagates d`loss`/d· to every node that requires a gradient and adds
    /// the result to its stored gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        if !self.requires_grad(loss) {
            return Ok(());
        }
        let mut pending: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        pending[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = pending[i].take() else { continue };
            self.propagate(i, &g, &mut pending);
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, &d)| *a += d),
                None => node.grad = Some(Tensor::from_parts(node.value.shape().to_vec(), g)),
            }
        }
        Ok(())
    }

    fn send(&self, pending: &mut [Option<Vec<T>>], v: Var, contribution: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut pending[v.0] {
            Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, &d)| *a += d),
            slot @ None => *slot = Some(contribution),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, i: usize, g: &[T], pending: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        let elementwise = |x: Var, f: &dyn Fn(T, T) -> T| -> Vec<T> {
            val(x).iter().zip(g).map(|(&xv, &gv)| f(xv, gv)).collect()
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.send(pending, *a, g.to_vec());
                self.send(pending, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.send(pending, *a, g.to_vec());
                self.send(pending, *b, g.iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let ga = g.iter().zip(val(*b)).map(|(&gv, &bv)| gv * bv).collect();
                    self.send(pending, *a, ga);
                }
                if self.wants(*b) {
                    let gb = g.iter().zip(val(*a)).map(|(&gv, &av)| gv * av).collect();
                    self.send(pending, *b, gb);
                }
            }
            Op::Scale(x, s) => self.send(pending, *x, g.iter().map(|&v| v * *s).collect()),
            Op::AddScalar(x) | Op::Reshape(x) => self.send(pending, *x, g.to_vec()),
            Op::Abs(x) => {
                let gx = elementwise(*x, &|xv, gv| {
                    if xv > T::zero() {
                        gv
                    } else if xv < T::zero() {
                        -gv
                    } else {
                        T::zero()
                    }
                });
                self.send(pending, *x, gx);
            }
            Op::Sum(x) => self.send(pending, *x, vec![g[0]; val(*x).len()]),
            Op::Mean(x) => {
                let n = val(*x).len();
                self.send(pending, *x, vec![g[0] / T::from_f64(n as f64); n]);
            }
            Op::LeakyRelu(x, slope) => {
                let gx = elementwise(*x, &|xv, gv| if xv >= T::zero() { gv } else { gv * *slope });
                self.send(pending, *x, gx);
            }
            Op::Tanh(x) => {
                let gx = y.iter().zip(g).map(|(&yv, &gv)| gv * (T::one() - yv * yv)).collect();
                self.send(pending, *x, gx);
            }
            Op::Sigmoid(x) => {
                let gx = y.iter().zip(g).map(|(&yv, &gv)| gv * yv * (T::one() - yv)).collect();
                self.send(pending, *x, gx);
            }
            Op::Ln(x) => {
                let gx = elementwise(*x, &|xv, gv| gv / xv);
                self.send(pending, *x, gx);
            }
            Op::Clamp(x, lo, hi) => {
                let gx = elementwise(*x, &|xv, gv| if xv >= *lo && xv <= *hi { gv } else { T::zero() });
                self.send(pending, *x, gx);
            }
            Op::Conv2d { x, w, b, geom } => {
                if self.wants(*x) {
                    self.send(pending, *x, kernels::conv_backward_data(g, val(*w), geom));
                }
                if self.wants(*w) {
                    self.send(pending, *w, kernels::conv_backward_kernel(val(*x), g, geom));
                }
                if let Some(b) = b {
                    let plane = geom.out_h * geom.out_w;
                    self.send(pending, *b, kernels::channel_sums(g, geom.batch, geom.out_channels, plane));
                }
            }
            Op::Deconv2d { x, w, b, geom } => {
                if self.wants(*x) {
                    self.send(pending, *x, kernels::conv_forward(g, val(*w), None, geom));
                }
                if self.wants(*w) {
                    self.send(pending, *w, kernels::conv_backward_kernel(g, val(*x), geom));
                }
                if let Some(b) = b {
                    let plane = geom.in_h * geom.in_w;
                    self.send(pending, *b, kernels::channel_sums(g, geom.batch, geom.in_channels, plane));
                }
            }
            Op::Dense { x, w, b } => {
                let (n, f) = (self.nodes[x.0].value.shape()[0], self.nodes[x.0].value.shape()[1]);
                let gdim = self.nodes[w.0].value.shape()[1];
                if self.wants(*x) {
                    let mut gx = vec![T::zero(); n * f];
                    kernels::gemm_nt(n, f, gdim, g, val(*w), &mut gx);
                    self.send(pending, *x, gx);
                }
                if self.wants(*w) {
                    let mut gw = vec![T::zero(); f * gdim];
                    kernels::gemm_tn(f, gdim, n, val(*x), g, &mut gw);
                    self.send(pending, *w, gw);
                }
                if let Some(b) = b {
                    self.send(pending, *b, kernels::channel_sums(g, n, gdim, 1));
                }
            }
            Op::UpsampleNearest(x, f) => {
                let (n, c, h, w) = dims(&self.nodes[x.0].value);
                self.send(pending, *x, kernels::block_sum(g, n * c, h * f, w * f, *f));
            }
            Op::UpsampleBilinear(x, f) => {
                let (n, c, h, w) = dims(&self.nodes[x.0].value);
                self.send(pending, *x, kernels::upsample_bilinear_backward(g, n * c, h, w, *f));
            }
            Op::DownsampleAvg(x, f) => {
                let (n, c, h, w) = dims(&node.value);
                let inv = T::from_f64(1.0 / (f * f) as f64);
                let mut gx = kernels::upsample_nearest(g, n * c, h, w, *f);
                gx.iter_mut().for_each(|v| *v *= inv);
                self.send(pending, *x, gx);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let (n, c, plane) = layout(&node.value);
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for (idx, (&gv, &nv)) in g.iter().zip(normalized).enumerate() {
                    let ch = (idx / plane) % c;
                    sum_g[ch] += gv;
                    sum_gx[ch] += gv * nv;
                }
                if self.wants(*x) {
                    let gam = val(*gamma);
                    let m = T::from_f64((n * plane) as f64);
                    let gx = g
                        .iter()
                        .zip(normalized)
                        .enumerate()
                        .map(|(idx, (&gv, &nv))| {
                            let ch = (idx / plane) % c;
                            gam[ch] * inv_std[ch] / m * (m * gv - sum_g[ch] - nv * sum_gx[ch])
                        })
                        .collect();
                    self.send(pending, *x, gx);
                }
                self.send(pending, *gamma, sum_gx);
                self.send(pending, *beta, sum_g);
            }
            Op::ChannelAffine {
                x,
                gamma,
                beta,
                mean,
                inv_std,
            } => {
                let (_, c, plane) = layout(&node.value);
                let xs = val(*x);
                let gam = val(*gamma);
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for (idx, (&gv, &xv)) in g.iter().zip(xs).enumerate() {
                    let ch = (idx / plane) % c;
                    sum_g[ch] += gv;
                    sum_gx[ch] += gv * (xv - mean[ch]) * inv_std[ch];
                }
                if self.wants(*x) {
                    let gx = g
                        .iter()
                        .enumerate()
                        .map(|(idx, &gv)| {
                            let ch = (idx / plane) % c;
                            gv * gam[ch] * inv_std[ch]
                        })
                        .collect();
                    self.send(pending, *x, gx);
                }
                self.send(pending, *gamma, sum_gx);
                self.send(pending, *beta, sum_g);
            }
            Op::Concat(parts) => {
                let (n, total_c, h, w) = dims(&node.value);
                let plane = h * w;
                let mut offset = 0;
                for &p in parts {
                    let c = self.nodes[p.0].value.shape()[1];
                    if self.wants(p) {
                        let mut gp = Vec::with_capacity(n * c * plane);
                        for b in 0..n {
                            let start = (b * total_c + offset) * plane;
                            gp.extend_from_slice(&g[start..start + c * plane]);
                        }
                        self.send(pending, p, gp);
                    }
                    offset += c;
                }
            }
            Op::GlobalAvgPool(x) => {
                let (_, _, h, w) = dims(&self.nodes[x.0].value);
                let plane = h * w;
                let scale = T::from_f64(1.0 / plane as f64);
                let gx = g.iter().flat_map(|&gv| std::iter::repeat_n(gv * scale, plane)).collect();
                self.send(pending, *x, gx);
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                let k = probs.len() / labels.len();
                let scale = g[0] / T::from_f64(labels.len() as f64);
                let mut gl: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (row, &l) in labels.iter().enumerate() {
                    gl[row * k + l] -= scale;
                }
                self.send(pending, *logits, gl);
            }
        }
    }
}

fn dims<T: Float>(t: &Tensor<T>) -> (usize, usize, usize, usize) {
    let s = t.shape();
    (s[0], s[1], s[2], s[3])
}

fn layout<T: Float>(t: &Tensor<T>) -> (usize, usize, usize) {
    match *t.shape() {
        [n, c] => (n, c, 1),
        [n, c, h, w] => (n, c, h * w),
        _ => unreachable!("validated at construction"),
    }
}

/// Mean pooling outside any graph.
pub fn downsample_avg<T: Float>(t: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor == 0 {
        return Err(Error::InvalidArgument("downsample factor must be >= 1".into()));
    }
    let (n, c, h, w) = t.dims4("downsample_avg")?;
    if h % factor != 0 {
        return Err(Error::dim("downsample_avg", "height", format!("multiple of {factor}"), h));
    }
    if w % factor != 0 {
        return Err(Error::dim("downsample_avg", "width", format!("multiple of {factor}"), w));
    }
    let inv = T::from_f64(1.0 / (factor * factor) as f64);
    let mut data = kernels::block_sum(t.data(), n * c, h, w, factor);
    data.iter_mut().for_each(|v| *v *= inv);
    Ok(Tensor::from_parts(vec![n, c, h / factor, w / factor], data))
}

/// Nearest-neighbour upsampling outside any graph.
pub fn upsample_nearest<T: Float>(t: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor == 0 {
        return Err(Error::InvalidArgument("upsample factor must be >= 1".into()));
    }
    let (n, c, h, w) = t.dims4("upsample_nearest")?;
    let data = kernels::upsample_nearest(t.data(), n * c, h, w, factor);
    Ok(Tensor::from_parts(vec![n, c, h * factor, w * factor], data))
}

/// Bilinear upsampling outside any graph.
pub fn upsample_bilinear<T: Float>(t: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor == 0 {
        return Err(Error::InvalidArgument("upsample factor must be >= 1".into()));
    }
    let (n, c, h, w) = t.dims4("upsample_bilinear")?;
    let data = kernels::upsample_bilinear(t.data(), n * c, h, w, factor);
    Ok(Tensor::from_parts(vec![n, c, h * factor, w * factor], data))
}
