//! Operation tape with reverse-mode accumulation.
//!
//! A [`Tape`] owns every intermediate value of one computation. Leaves are
//! either owned tensors or borrowed parameters (so a model's weights are not
//! copied per example). [`Tape::backward`] walks the recorded operations in
//! reverse, each exactly once, accumulating gradients additively.

use rand::Rng;

use super::activation::{prelu, prelu_dx, ActivationKind};
use super::{Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Value<'p> {
    Owned(Tensor),
    Borrowed(&'p Tensor),
}

impl Value<'_> {
    fn tensor(&self) -> &Tensor {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

enum Op {
    Leaf,
    /// `out[f, i] = bias[f] + <seq[i..i+h, :], kernels[f]>`
    ConvValid {
        seq: Var,
        kernels: Var,
        bias: Var,
        window: usize,
    },
    /// Zero-padded same-length convolution of every map row with every kernel:
    /// `out[k, r, i] = bias[k] + sum_j pad(map[r])[i + j] * kernels[k, j]`.
    ConvSame {
        maps: Var,
        kernels: Var,
        bias: Var,
        window: usize,
    },
    /// `maps ⊙ mean_k act(conv_same_k(maps))`, see [`Tape::attention_gate`].
    AttentionGate {
        maps: Var,
        groups: Vec<(Var, Var)>,
        slope: Option<Var>,
        gate: Vec<f64>,
        deriv: Vec<f64>,
        slope_coef: Vec<f64>,
    },
    Activate {
        x: Var,
        kind: ActivationKind,
    },
    PRelu {
        x: Var,
        slope: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    Sum {
        x: Var,
    },
    MeanLeading {
        x: Var,
    },
    Concat {
        parts: Vec<Var>,
    },
    /// Row-wise max; `argmax[r]` is the first maximizing column of row `r`.
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Dense {
        x: Var,
        weight: Var,
        bias: Var,
    },
    Softmax {
        x: Var,
    },
    SoftmaxXent {
        logits: Var,
        label: usize,
        probs: Vec<f64>,
    },
}

struct Node<'p> {
    value: Value<'p>,
    op: Op,
    needs_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Left and right zero padding for a same-length convolution of width `w`.
pub fn same_padding(window: usize) -> (usize, usize) {
    let total = window - 1;
    (total / 2, total - total / 2)
}

#[derive(Default)]
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
    trace: Vec<Var>,
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            trace: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an owned leaf; it receives a gradient iff `requires_grad` is set.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let needs_grad = tensor.requires_grad();
        self.push(Value::Owned(tensor), Op::Leaf, needs_grad)
    }

    /// Records a constant leaf.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.push(Value::Owned(tensor.with_requires_grad(false)), Op::Leaf, false)
    }

    /// Records a borrowed leaf without copying it.
    pub fn leaf_ref(&mut self, tensor: &'p Tensor) -> Var {
        let needs_grad = tensor.requires_grad();
        self.push(Value::Borrowed(tensor), Op::Leaf, needs_grad)
    }

    /// Borrowed leaf with an explicit gradient flag, overriding the tensor's own.
    pub fn leaf_ref_with(&mut self, tensor: &'p Tensor, requires_grad: bool) -> Var {
        self.push(Value::Borrowed(tensor), Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.nodes[v.0].value.tensor()
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.value(v).data()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Gradient of the last backward pass w.r.t. `v`, if `v` takes part in it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Operations visited by the last backward pass, in visiting order.
    pub fn backward_trace(&self) -> &[Var] {
        &self.trace
    }

    fn push(&mut self, value: Value<'p>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, inputs: &[Var]) -> Result<Var, TensorError> {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        let tensor = Tensor::new(shape, data)?;
        Ok(self.push(Value::Owned(tensor), op, needs_grad))
    }

    fn check(&self, v: Var) -> Result<(), TensorError> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(TensorError::UnknownVar(v.0))
        }
    }

    fn expect_len(&self, op: &'static str, v: Var, len: usize) -> Result<(), TensorError> {
        if self.value(v).len() != len {
            return Err(TensorError::ShapeMismatch {
                op,
                left: self.shape(v).to_vec(),
                right: vec![len],
            });
        }
        Ok(())
    }

    // ---------------------------------------------------------------------
    // Convolutions

    /// Valid 1-D convolution of `seq [L×d]` with a single `kernel [h×d]` and
    /// scalar `bias`, giving `[L−h+1]`.
    pub fn conv1d_valid(&mut self, seq: Var, kernel: Var, bias: Var) -> Result<Var, TensorError> {
        self.check(kernel)?;
        let ks = self.shape(kernel).to_vec();
        if ks.len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d_valid",
                left: self.shape(seq).to_vec(),
                right: ks,
            });
        }
        self.conv_valid_impl(seq, kernel, bias, 1, ks[0], ks[1], true)
    }

    /// Bank of `n` valid convolutions over `seq [L×d]` with `kernels [n×h×d]`
    /// and `bias [n]`, giving `[n×(L−h+1)]`.
    pub fn conv1d_valid_bank(&mut self, seq: Var, kernels: Var, bias: Var) -> Result<Var, TensorError> {
        self.check(kernels)?;
        let ks = self.shape(kernels).to_vec();
        if ks.len() != 3 {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d_valid_bank",
                left: self.shape(seq).to_vec(),
                right: ks,
            });
        }
        self.conv_valid_impl(seq, kernels, bias, ks[0], ks[1], ks[2], false)
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_valid_impl(
        &mut self,
        seq: Var,
        kernels: Var,
        bias: Var,
        n: usize,
        h: usize,
        d: usize,
        squeeze: bool,
    ) -> Result<Var, TensorError> {
        self.check(seq)?;
        self.check(bias)?;
        let ss = self.shape(seq);
        if ss.len() != 2 || ss[1] != d {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d_valid",
                left: ss.to_vec(),
                right: vec![n, h, d],
            });
        }
        let len = ss[0];
        if h > len {
            return Err(TensorError::WindowExceedsSequence { window: h, len });
        }
        self.expect_len("conv1d_valid", bias, n)?;
        let l_out = len - h + 1;
        let span = h * d;
        let s = self.data(seq);
        let k = self.data(kernels);
        let b = self.data(bias);
        let mut out = vec![0.0; n * l_out];
        for f in 0..n {
            let kern = &k[f * span..(f + 1) * span];
            for i in 0..l_out {
                let window = &s[i * d..i * d + span];
                out[f * l_out + i] = b[f] + dot(window, kern);
            }
        }
        let shape = if squeeze { vec![l_out] } else { vec![n, l_out] };
        self.record(
            shape,
            out,
            Op::ConvValid {
                seq,
                kernels,
                bias,
                window: h,
            },
            &[seq, kernels, bias],
        )
    }

    /// Same-length convolution of `map [L]` with `kernel [w]` and scalar bias.
    /// The map is zero-padded with `floor((w−1)/2)` values on the left and
    /// `ceil((w−1)/2)` on the right.
    pub fn conv1d_same_asym(&mut self, map: Var, kernel: Var, bias: Var) -> Result<Var, TensorError> {
        self.check(map)?;
        self.check(kernel)?;
        let len = self.value(map).len();
        let w = self.value(kernel).len();
        if self.shape(map).len() != 1 || self.shape(kernel).len() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d_same_asym",
                left: self.shape(map).to_vec(),
                right: self.shape(kernel).to_vec(),
            });
        }
        self.conv_same_impl(map, kernel, bias, 1, len, 1, w, vec![len])
    }

    /// Applies every kernel of `kernels [K×w]` to every row of `maps [n×L]`,
    /// giving `[K×n×L]`.
    pub fn conv1d_same_bank(&mut self, maps: Var, kernels: Var, bias: Var) -> Result<Var, TensorError> {
        self.check(maps)?;
        self.check(kernels)?;
        let ms = self.shape(maps).to_vec();
        let ks = self.shape(kernels).to_vec();
        if ms.len() != 2 || ks.len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d_same_bank",
                left: ms,
                right: ks,
            });
        }
        self.conv_same_impl(maps, kernels, bias, ms[0], ms[1], ks[0], ks[1], vec![ks[0], ms[0], ms[1]])
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_same_impl(
        &mut self,
        maps: Var,
        kernels: Var,
        bias: Var,
        rows: usize,
        len: usize,
        count: usize,
        w: usize,
        shape: Vec<usize>,
    ) -> Result<Var, TensorError> {
        self.check(bias)?;
        self.expect_len("conv1d_same", bias, count)?;
        let (pad_left, _) = same_padding(w);
        let m = self.data(maps);
        let k = self.data(kernels);
        let b = self.data(bias);
        let mut out = vec![0.0; count * rows * len];
        for c in 0..count {
            let kern = &k[c * w..(c + 1) * w];
            for r in 0..rows {
                let row = &m[r * len..(r + 1) * len];
                let dst = &mut out[(c * rows + r) * len..(c * rows + r + 1) * len];
                dst.fill(b[c]);
                for (j, &kv) in kern.iter().enumerate() {
                    let (o, s, n) = tap_overlap(j, pad_left, len);
                    axpy(kv, &row[s..s + n], &mut dst[o..o + n]);
                }
            }
        }
        self.record(
            shape,
            out,
            Op::ConvSame {
                maps,
                kernels,
                bias,
                window: w,
            },
            &[maps, kernels, bias],
        )
    }

    /// Attention gate over `maps [n×L]`: every kernel of every `(kernels [K×w],
    /// bias [K])` group is applied to every map row as a zero-padded same-length
    /// convolution, activated, and the activations are averaged into one gate
    /// per map position. Returns `maps ⊙ gate`. With `kind` PReLU, `slope`
    /// (a scalar) replaces the fixed default slope.
    ///
    /// Equivalent to composing `conv1d_same_bank`, `concat`, `activate` (or
    /// `prelu`), `mean_leading` and `mul`, without materializing the stack.
    pub fn attention_gate(
        &mut self,
        maps: Var,
        groups: &[(Var, Var)],
        kind: ActivationKind,
        slope: Option<Var>,
    ) -> Result<Var, TensorError> {
        self.check(maps)?;
        let ms = self.shape(maps).to_vec();
        if ms.len() != 2 || groups.is_empty() {
            return Err(TensorError::ShapeMismatch {
                op: "attention_gate",
                left: ms,
                right: vec![groups.len()],
            });
        }
        let (rows, len) = (ms[0], ms[1]);
        let mut total = 0;
        let mut max_window = 1;
        for &(k, b) in groups {
            self.check(k)?;
            self.check(b)?;
            let ks = self.shape(k);
            if ks.len() != 2 || self.value(b).len() != ks[0] {
                return Err(TensorError::ShapeMismatch {
                    op: "attention_gate",
                    left: ks.to_vec(),
                    right: self.shape(b).to_vec(),
                });
            }
            total += ks[0];
            max_window = max_window.max(ks[1]);
        }
        let slope_value = match (kind, slope) {
            (ActivationKind::PRelu, Some(s)) => {
                self.check(s)?;
                self.expect_len("attention_gate", s, 1)?;
                Some(self.data(s)[0])
            }
            _ => None,
        };
        let slope = slope_value.and(slope);
        let layout = RowLayout::new(rows, len, max_window);
        let inv = 1.0 / total as f64;
        let m = self.data(maps);
        let x = layout.pad(m);
        let (lo, hi) = (layout.lo(), layout.hi());
        let mut gate = vec![0.0; rows * len];
        let mut deriv = vec![0.0; total * rows * len];
        let mut slope_coef = if slope.is_some() { vec![0.0; total * rows * len] } else { vec![] };
        let mut pre = vec![0.0; x.len()];
        let mut c_global = 0;
        for &(k, b) in groups {
            let w = self.shape(k)[1];
            let pad_left = same_padding(w).0;
            let kd = self.data(k);
            for (c, &bias) in self.data(b).iter().enumerate() {
                pre[lo..hi].fill(bias);
                for (j, &kv) in kd[c * w..(c + 1) * w].iter().enumerate() {
                    let from = lo + j - pad_left;
                    axpy(kv, &x[from..from + hi - lo], &mut pre[lo..hi]);
                }
                for r in 0..rows {
                    let src = &pre[layout.start(r)..layout.start(r) + len];
                    let acc = &mut gate[r * len..(r + 1) * len];
                    let at = (c_global * rows + r) * len;
                    let dst = &mut deriv[at..at + len];
                    match slope_value {
                        Some(a) => {
                            let coef = &mut slope_coef[at..at + len];
                            for i in 0..len {
                                let v = src[i];
                                acc[i] += prelu(v, a);
                                dst[i] = prelu_dx(v, a);
                                coef[i] = if v <= 0.0 { v } else { 0.0 };
                            }
                        }
                        None => {
                            for i in 0..len {
                                let (v, d) = kind.apply_with_derivative(src[i]);
                                acc[i] += v;
                                dst[i] = d;
                            }
                        }
                    }
                }
                c_global += 1;
            }
        }
        gate.iter_mut().for_each(|v| *v *= inv);
        let out = m.iter().zip(&gate).map(|(x, g)| x * g).collect();
        let mut inputs = vec![maps];
        inputs.extend(groups.iter().flat_map(|&(k, b)| [k, b]));
        inputs.extend(slope);
        self.record(
            ms,
            out,
            Op::AttentionGate {
                maps,
                groups: groups.to_vec(),
                slope,
                gate,
                deriv,
                slope_coef,
            },
            &inputs,
        )
    }

    // ---------------------------------------------------------------------
    // Elementwise

    pub fn activate(&mut self, kind: ActivationKind, x: Var) -> Result<Var, TensorError> {
        self.check(x)?;
        let t = self.value(x);
        let shape = t.shape().to_vec();
        let out = t.data().iter().map(|&v| kind.apply(v)).collect();
        self.record(shape, out, Op::Activate { x, kind }, &[x])
    }

    /// PReLU with a learnable scalar `slope`.
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var, TensorError> {
        self.check(x)?;
        self.check(slope)?;
        self.expect_len("prelu", slope, 1)?;
        let a = self.data(slope)[0];
        let t = self.value(x);
        let shape = t.shape().to_vec();
        let out = t.data().iter().map(|&v| prelu(v, a)).collect();
        self.record(shape, out, Op::PRelu { x, slope }, &[x, slope])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        self.check(a)?;
        self.check(b)?;
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("elementwise_mul", a, b)?;
        let shape = self.shape(a).to_vec();
        let out = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        self.record(shape, out, Op::Mul { a, b }, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("add", a, b)?;
        let shape = self.shape(a).to_vec();
        let out = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        self.record(shape, out, Op::Add { a, b }, &[a, b])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var, TensorError> {
        self.check(x)?;
        let shape = self.shape(x).to_vec();
        let out = self.data(x).iter().map(|v| v * factor).collect();
        self.record(shape, out, Op::Scale { x, factor }, &[x])
    }

    // ---------------------------------------------------------------------
    // Reductions and reshaping

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        self.check(x)?;
        let total = self.data(x).iter().sum();
        self.record(vec![1], vec![total], Op::Sum { x }, &[x])
    }

    /// Mean over the leading axis: `[K × rest] -> [rest]`.
    pub fn mean_leading(&mut self, x: Var) -> Result<Var, TensorError> {
        self.check(x)?;
        let shape = self.shape(x).to_vec();
        let k = shape[0];
        let rest: Vec<usize> = if shape.len() > 1 { shape[1..].to_vec() } else { vec![1] };
        let width = self.value(x).len() / k;
        let data = self.data(x);
        let mut out = vec![0.0; width];
        for block in data.chunks_exact(width) {
            for (o, v) in out.iter_mut().zip(block) {
                *o += v;
            }
        }
        let inv = 1.0 / k as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        self.record(rest, out, Op::MeanLeading { x }, &[x])
    }

    /// Concatenation along the leading axis; trailing extents must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts.first().ok_or(TensorError::InvalidShape(vec![]))?;
        for &p in parts {
            self.check(p)?;
            if self.shape(p)[1..] != self.shape(first)[1..] {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    left: self.shape(first).to_vec(),
                    right: self.shape(p).to_vec(),
                });
            }
        }
        let mut shape = self.shape(first).to_vec();
        shape[0] = parts.iter().map(|&p| self.shape(p)[0]).sum();
        let mut out = Vec::with_capacity(shape.iter().product());
        for &p in parts {
            out.extend_from_slice(self.data(p));
        }
        self.record(shape, out, Op::Concat { parts: parts.to_vec() }, parts)
    }

    /// Maximum of a 1-D map, as a one-element tensor. Ties route the gradient
    /// to the first maximizing index.
    pub fn max_over_time(&mut self, map: Var) -> Result<Var, TensorError> {
        self.check(map)?;
        if self.shape(map).len() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "max_over_time",
                left: self.shape(map).to_vec(),
                right: vec![self.value(map).len()],
            });
        }
        self.max_pool_impl(map, 1)
    }

    /// Row-wise max over `x [n×L]`, giving `[n]`.
    pub fn max_pool_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        self.check(x)?;
        let shape = self.shape(x);
        if shape.len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "max_pool_rows",
                left: shape.to_vec(),
                right: vec![],
            });
        }
        let rows = shape[0];
        self.max_pool_impl(x, rows)
    }

    fn max_pool_impl(&mut self, x: Var, rows: usize) -> Result<Var, TensorError> {
        let data = self.data(x);
        let width = data.len() / rows;
        let mut argmax = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(rows);
        for row in data.chunks_exact(width) {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = i;
                }
            }
            argmax.push(best);
            out.push(row[best]);
        }
        self.record(vec![rows], out, Op::MaxPool { x, argmax }, &[x])
    }

    /// Inverted dropout. In training mode each element survives with
    /// probability `keep_rate` and is scaled by `1 / keep_rate`; otherwise, or
    /// when `keep_rate == 1`, `x` is returned unchanged.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        keep_rate: f64,
        rng: &mut R,
        training: bool,
    ) -> Result<Var, TensorError> {
        self.check(x)?;
        if !(keep_rate > 0.0 && keep_rate <= 1.0) {
            return Err(TensorError::InvalidKeepRate(keep_rate));
        }
        if !training || keep_rate == 1.0 {
            return Ok(x);
        }
        let scale = 1.0 / keep_rate;
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < keep_rate { scale } else { 0.0 })
            .collect();
        let shape = self.shape(x).to_vec();
        let out = self.data(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        self.record(shape, out, Op::Dropout { x, mask }, &[x])
    }

    /// `weight [c×m] · x [m] + bias [c]`.
    pub fn dense(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var, TensorError> {
        self.check(x)?;
        self.check(weight)?;
        self.check(bias)?;
        let m = self.value(x).len();
        let ws = self.shape(weight).to_vec();
        if ws.len() != 2 || ws[1] != m || self.value(bias).len() != ws[0] {
            return Err(TensorError::ShapeMismatch {
                op: "dense",
                left: ws,
                right: vec![self.value(bias).len(), m],
            });
        }
        let c = ws[0];
        let xd = self.data(x);
        let wd = self.data(weight);
        let bd = self.data(bias);
        let out = (0..c).map(|i| bd[i] + dot(&wd[i * m..(i + 1) * m], xd)).collect();
        self.record(vec![c], out, Op::Dense { x, weight, bias }, &[x, weight, bias])
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        self.check(x)?;
        let probs = softmax(self.data(x));
        let shape = self.shape(x).to_vec();
        self.record(shape, probs, Op::Softmax { x }, &[x])
    }

    /// `-ln softmax(logits)[label]`, computed with max subtraction.
    pub fn softmax_xent(&mut self, logits: Var, label: usize) -> Result<Var, TensorError> {
        self.check(logits)?;
        let z = self.data(logits);
        if label >= z.len() {
            return Err(TensorError::LabelOutOfRange {
                label,
                classes: z.len(),
            });
        }
        // The arg-max term contributes exactly 1 to the normalizer; summing the
        // rest separately lets ln_1p keep precision for confident predictions.
        let (top, max) = z
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, v)| if v > bv { (i, v) } else { (bi, bv) });
        let rest: f64 = z
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != top)
            .map(|(_, v)| (v - max).exp())
            .sum();
        let loss = rest.ln_1p() - (z[label] - max);
        let probs = softmax(z);
        self.record(vec![1], vec![loss], Op::SoftmaxXent { logits, label, probs }, &[logits])
    }

    // ---------------------------------------------------------------------
    // Reverse pass

    /// Accumulates `d loss / d v` into every node that needs a gradient.
    /// Leaves with `requires_grad` always end up with a gradient, zero when
    /// they do not influence `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        self.check(loss)?;
        if !self.value(loss).is_scalar() {
            return Err(TensorError::NotScalar(self.shape(loss).to_vec()));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.trace.clear();
        if self.nodes[loss.0].needs_grad {
            self.nodes[loss.0].grad = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            self.trace.push(Var(i));
            let Some(upstream) = self.nodes[i].grad.take() else {
                continue;
            };
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            self.backprop_op(i, &op, &upstream);
            self.nodes[i].op = op;
            self.nodes[i].grad = Some(upstream);
        }
        for node in &mut self.nodes {
            if matches!(node.op, Op::Leaf) && node.needs_grad && node.grad.is_none() {
                node.grad = Some(vec![0.0; node.value.tensor().len()]);
            }
            if let (Value::Owned(t), Some(g)) = (&mut node.value, &node.grad) {
                if matches!(node.op, Op::Leaf) {
                    t.set_grad(g.clone())?;
                }
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn accumulate(&mut self, v: Var, contrib: Vec<f64>) {
        let node = &mut self.nodes[v.0];
        if !node.needs_grad {
            return;
        }
        match &mut node.grad {
            Some(g) => g.iter_mut().zip(contrib).for_each(|(a, b)| *a += b),
            None => node.grad = Some(contrib),
        }
    }

    fn backprop_op(&mut self, i: usize, op: &Op, g: &[f64]) {
        match *op {
            Op::Leaf => {}
            Op::ConvValid {
                seq,
                kernels,
                bias,
                window,
            } => {
                let s = self.data(seq);
                let k = self.data(kernels);
                let d = self.shape(seq)[1];
                let n = self.value(bias).len();
                let l_out = g.len() / n;
                let span = window * d;
                let mut ds = if self.wants(seq) { vec![0.0; s.len()] } else { vec![] };
                let mut dk = if self.wants(kernels) { vec![0.0; k.len()] } else { vec![] };
                let mut db = vec![0.0; n];
                for f in 0..n {
                    let kern = &k[f * span..(f + 1) * span];
                    for pos in 0..l_out {
                        let up = g[f * l_out + pos];
                        if up == 0.0 {
                            continue;
                        }
                        db[f] += up;
                        if !ds.is_empty() {
                            axpy(up, kern, &mut ds[pos * d..pos * d + span]);
                        }
                        if !dk.is_empty() {
                            axpy(up, &s[pos * d..pos * d + span], &mut dk[f * span..(f + 1) * span]);
                        }
                    }
                }
                if !ds.is_empty() {
                    self.accumulate(seq, ds);
                }
                if !dk.is_empty() {
                    self.accumulate(kernels, dk);
                }
                self.accumulate(bias, db);
            }
            Op::ConvSame {
                maps,
                kernels,
                bias,
                window,
            } => {
                let m = self.data(maps);
                let k = self.data(kernels);
                let count = self.value(bias).len();
                let len = *self.shape(maps).last().unwrap_or(&1);
                let rows = m.len() / len;
                let (pad_left, _) = same_padding(window);
                let mut dm = if self.wants(maps) { vec![0.0; m.len()] } else { vec![] };
                let mut dk = if self.wants(kernels) { vec![0.0; k.len()] } else { vec![] };
                let mut db = vec![0.0; count];
                for c in 0..count {
                    let kern = &k[c * window..(c + 1) * window];
                    for r in 0..rows {
                        let row = &m[r * len..(r + 1) * len];
                        let up_row = &g[(c * rows + r) * len..(c * rows + r + 1) * len];
                        db[c] += up_row.iter().sum::<f64>();
                        for (j, &kv) in kern.iter().enumerate() {
                            let (o, s, n) = tap_overlap(j, pad_left, len);
                            if !dm.is_empty() {
                                axpy(kv, &up_row[o..o + n], &mut dm[r * len + s..r * len + s + n]);
                            }
                            if !dk.is_empty() {
                                dk[c * window + j] += dot(&up_row[o..o + n], &row[s..s + n]);
                            }
                        }
                    }
                }
                if !dm.is_empty() {
                    self.accumulate(maps, dm);
                }
                if !dk.is_empty() {
                    self.accumulate(kernels, dk);
                }
                self.accumulate(bias, db);
            }
            Op::AttentionGate {
                maps,
                ref groups,
                slope,
                ref gate,
                ref deriv,
                ref slope_coef,
            } => {
                let m = self.data(maps);
                let ms = self.shape(maps);
                let (rows, len) = (ms[0], ms[1]);
                let total: usize = groups.iter().map(|&(_, b)| self.value(b).len()).sum();
                let max_window = groups.iter().map(|&(k, _)| self.shape(k)[1]).max().unwrap_or(1);
                let layout = RowLayout::new(rows, len, max_window);
                let x = layout.pad(m);
                let (lo, hi) = (layout.lo(), layout.hi());
                let inv = 1.0 / total as f64;
                let want_maps = self.wants(maps);
                let mut dm: Vec<f64> = if want_maps {
                    g.iter().zip(gate).map(|(up, gv)| up * gv).collect()
                } else {
                    vec![]
                };
                let dgate: Vec<f64> = g.iter().zip(m).map(|(up, v)| up * v * inv).collect();
                let mut dks: Vec<Vec<f64>> = groups.iter().map(|&(k, _)| vec![0.0; self.value(k).len()]).collect();
                let mut dbs: Vec<Vec<f64>> = groups.iter().map(|&(_, b)| vec![0.0; self.value(b).len()]).collect();
                let mut dslope = 0.0;
                // Padding slots of `dpre` stay zero, so whole-span products only
                // pick up real positions.
                let mut dpre = vec![0.0; x.len()];
                let mut dx = if want_maps { vec![0.0; x.len()] } else { vec![] };
                let mut c_global = 0;
                for (gi, &(k, _)) in groups.iter().enumerate() {
                    let w = self.shape(k)[1];
                    let pad_left = same_padding(w).0;
                    let kd = self.data(k);
                    for c in 0..dbs[gi].len() {
                        let base = c_global * rows * len;
                        for r in 0..rows {
                            let at = base + r * len;
                            let dst = &mut dpre[layout.start(r)..layout.start(r) + len];
                            for i in 0..len {
                                dst[i] = dgate[r * len + i] * deriv[at + i];
                            }
                        }
                        if slope.is_some() {
                            dslope += dot(&dgate, &slope_coef[base..base + rows * len]);
                        }
                        let span = &dpre[lo..hi];
                        dbs[gi][c] += span.iter().sum::<f64>();
                        for j in 0..w {
                            let from = lo + j - pad_left;
                            dks[gi][c * w + j] += dot(span, &x[from..from + hi - lo]);
                            if want_maps {
                                axpy(kd[c * w + j], span, &mut dx[from..from + hi - lo]);
                            }
                        }
                        c_global += 1;
                    }
                }
                if want_maps {
                    for r in 0..rows {
                        let src = &dx[layout.start(r)..layout.start(r) + len];
                        for (d, s) in dm[r * len..(r + 1) * len].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                if want_maps {
                    self.accumulate(maps, dm);
                }
                for ((&(k, b), dk), db) in groups.iter().zip(dks).zip(dbs) {
                    self.accumulate(k, dk);
                    self.accumulate(b, db);
                }
                if let Some(s) = slope {
                    self.accumulate(s, vec![dslope]);
                }
            }
            Op::Activate { x, kind } => {
                let dx = self
                    .data(x)
                    .iter()
                    .zip(g)
                    .map(|(&v, &up)| up * kind.derivative(v))
                    .collect();
                self.accumulate(x, dx);
            }
            Op::PRelu { x, slope } => {
                let a = self.data(slope)[0];
                let xs = self.data(x);
                let dx = xs.iter().zip(g).map(|(&v, &up)| up * prelu_dx(v, a)).collect();
                let da: f64 = xs.iter().zip(g).filter(|(&v, _)| v <= 0.0).map(|(&v, &up)| up * v).sum();
                self.accumulate(x, dx);
                self.accumulate(slope, vec![da]);
            }
            Op::Mul { a, b } => {
                let da = self.data(b).iter().zip(g).map(|(v, up)| v * up).collect();
                let db = self.data(a).iter().zip(g).map(|(v, up)| v * up).collect();
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            Op::Add { a, b } => {
                self.accumulate(a, g.to_vec());
                self.accumulate(b, g.to_vec());
            }
            Op::Scale { x, factor } => {
                self.accumulate(x, g.iter().map(|up| up * factor).collect());
            }
            Op::Sum { x } => {
                let n = self.value(x).len();
                self.accumulate(x, vec![g[0]; n]);
            }
            Op::MeanLeading { x } => {
                let k = self.shape(x)[0];
                let inv = 1.0 / k as f64;
                let mut dx = Vec::with_capacity(k * g.len());
                for _ in 0..k {
                    dx.extend(g.iter().map(|up| up * inv));
                }
                self.accumulate(x, dx);
            }
            Op::Concat { ref parts } => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    self.accumulate(p, g[offset..offset + n].to_vec());
                    offset += n;
                }
            }
            Op::MaxPool { x, ref argmax } => {
                let n = self.value(x).len();
                let width = n / argmax.len();
                let mut dx = vec![0.0; n];
                for (r, (&col, &up)) in argmax.iter().zip(g).enumerate() {
                    dx[r * width + col] += up;
                }
                self.accumulate(x, dx);
            }
            Op::Dropout { x, ref mask } => {
                self.accumulate(x, g.iter().zip(mask).map(|(up, m)| up * m).collect());
            }
            Op::Dense { x, weight, bias } => {
                let xd = self.data(x);
                let wd = self.data(weight);
                let m = xd.len();
                let mut dx = if self.wants(x) { vec![0.0; m] } else { vec![] };
                let mut dw = if self.wants(weight) { vec![0.0; wd.len()] } else { vec![] };
                for (row, &up) in g.iter().enumerate() {
                    if !dx.is_empty() {
                        axpy(up, &wd[row * m..(row + 1) * m], &mut dx);
                    }
                    if !dw.is_empty() {
                        axpy(up, xd, &mut dw[row * m..(row + 1) * m]);
                    }
                }
                if !dx.is_empty() {
                    self.accumulate(x, dx);
                }
                if !dw.is_empty() {
                    self.accumulate(weight, dw);
                }
                self.accumulate(bias, g.to_vec());
            }
            Op::Softmax { x } => {
                let p = self.nodes[i].value.tensor().data();
                let inner: f64 = p.iter().zip(g).map(|(pi, up)| pi * up).sum();
                let dx = p.iter().zip(g).map(|(pi, up)| pi * (up - inner)).collect();
                self.accumulate(x, dx);
            }
            Op::SoftmaxXent {
                logits,
                label,
                ref probs,
            } => {
                let mut dz: Vec<f64> = probs.iter().map(|p| p * g[0]).collect();
                dz[label] -= g[0];
                self.accumulate(logits, dz);
            }
        }
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Eight independent accumulators, so the sum pipelines and vectorizes.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Rows of length `len` laid out back to back with `gap` zeros before, between
/// and after them, wide enough for any same-length window up to `max_window`.
/// A tap then touches every row with one contiguous slice operation.
struct RowLayout {
    rows: usize,
    len: usize,
    gap: usize,
}

impl RowLayout {
    fn new(rows: usize, len: usize, max_window: usize) -> Self {
        let (left, right) = same_padding(max_window);
        RowLayout {
            rows,
            len,
            gap: left.max(right),
        }
    }

    fn stride(&self) -> usize {
        self.len + self.gap
    }

    fn start(&self, r: usize) -> usize {
        self.gap + r * self.stride()
    }

    /// First and one-past-last data slot.
    fn lo(&self) -> usize {
        self.gap
    }

    fn hi(&self) -> usize {
        self.start(self.rows - 1) + self.len
    }

    fn pad(&self, m: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.gap + self.rows * self.stride()];
        for (r, row) in m.chunks_exact(self.len).enumerate() {
            out[self.start(r)..self.start(r) + self.len].copy_from_slice(row);
        }
        out
    }
}

/// For kernel tap `j` of a same-length convolution: the first output index
/// it touches, the matching input index and the overlap length.
#[inline]
fn tap_overlap(j: usize, pad_left: usize, len: usize) -> (usize, usize, usize) {
    if j >= pad_left {
        let s = j - pad_left;
        (0, s.min(len), len.saturating_sub(s))
    } else {
        let o = pad_left - j;
        (o.min(len), 0, len.saturating_sub(o))
    }
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
