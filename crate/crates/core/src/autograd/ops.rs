use std::rc::Rc;

use super::{Function, Tensor, Var};

/// `C = alpha * A·B + beta * C` on row-major buffers with explicit strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
    rsc: isize,
    csc: isize,
) {
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: callers pass buffers that cover every (row, col) addressed by
    // the given dimensions and strides; all strides are non-negative.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

/// Pointwise nonlinearities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    Neg,
    Exp,
    Log,
    Sqrt,
    Abs,
    Square,
    Relu,
    Silu,
    Softplus,
    LeakyRelu(f64),
}

impl Unary {
    fn eval(self, x: f64) -> f64 {
        match self {
            Unary::Neg => -x,
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Sqrt => x.sqrt(),
            Unary::Abs => x.abs(),
            Unary::Square => x * x,
            Unary::Relu => x.max(0.0),
            Unary::Silu => x / (1.0 + (-x).exp()),
            Unary::Softplus => {
                if x > 30.0 {
                    x
                } else {
                    x.exp().ln_1p()
                }
            }
            Unary::LeakyRelu(a) => {
                if x >= 0.0 {
                    x
                } else {
                    a * x
                }
            }
        }
    }

    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Neg => -1.0,
            Unary::Exp => y,
            Unary::Log => 1.0 / x,
            Unary::Sqrt => 0.5 / y,
            Unary::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Unary::Square => 2.0 * x,
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
            Unary::Softplus => 1.0 / (1.0 + (-x).exp()),
            Unary::LeakyRelu(a) => {
                if x >= 0.0 {
                    1.0
                } else {
                    a
                }
            }
        }
    }
}

struct UnaryFn(Unary);

impl Function for UnaryFn {
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let x = inputs[0].data();
        let y = output.data();
        let data = grad
            .data()
            .iter()
            .enumerate()
            .map(|(i, g)| g * self.0.derivative(x[i], y[i]))
            .collect();
        vec![Some(Tensor::new(grad.shape().to_vec(), data))]
    }
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

struct BinaryFn(Binary);

impl Function for BinaryFn {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (a, b) = (inputs[0].data(), inputs[1].data());
        let g = grad.data();
        let shape = grad.shape().to_vec();
        let make = |f: &dyn Fn(usize) -> f64| Tensor::new(shape.clone(), (0..g.len()).map(f).collect());
        let (ga, gb) = match self.0 {
            Binary::Add => (
                needs[0].then(|| grad.clone()),
                needs[1].then(|| grad.clone()),
            ),
            Binary::Sub => (needs[0].then(|| grad.clone()), needs[1].then(|| grad.map(|v| -v))),
            Binary::Mul => (
                needs[0].then(|| make(&|i| g[i] * b[i])),
                needs[1].then(|| make(&|i| g[i] * a[i])),
            ),
            Binary::Div => (
                needs[0].then(|| make(&|i| g[i] / b[i])),
                needs[1].then(|| make(&|i| -g[i] * a[i] / (b[i] * b[i]))),
            ),
        };
        vec![ga, gb]
    }
}

struct AffineFn {
    scale: f64,
}

impl Function for AffineFn {
    fn backward(&self, _: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(grad.map(|g| g * self.scale))]
    }
}

struct SumFn {
    scale: f64,
}

impl Function for SumFn {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let g = grad.item() * self.scale;
        vec![Some(Tensor::full(inputs[0].shape().to_vec(), g))]
    }
}

/// Sum (or mean) over the last axis.
struct ReduceLastFn {
    scale: f64,
}

impl Function for ReduceLastFn {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let shape = inputs[0].shape().to_vec();
        let n = *shape.last().unwrap();
        let mut data = Vec::with_capacity(inputs[0].len());
        for &g in grad.data() {
            data.extend(std::iter::repeat_n(g * self.scale, n));
        }
        vec![Some(Tensor::new(shape, data))]
    }
}

struct ReshapeFn;

impl Function for ReshapeFn {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(grad.clone().reshaped(inputs[0].shape().to_vec()))]
    }
}

/// Splits a shape into (leading, axis-1 extent, trailing) for axis-1 ops.
fn axis1_split(shape: &[usize]) -> (usize, usize, usize) {
    assert!(shape.len() >= 2, "axis-1 op on tensor of rank {}", shape.len());
    (shape[0], shape[1], shape[2..].iter().product())
}

struct ConcatFn {
    widths: Vec<usize>,
}

impl Function for ConcatFn {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (batch, total, inner) = axis1_split(grad.shape());
        let mut out = Vec::with_capacity(inputs.len());
        let mut offset = 0;
        for (i, &w) in self.widths.iter().enumerate() {
            if needs[i] {
                let mut data = Vec::with_capacity(batch * w * inner);
                for b in 0..batch {
                    let start = (b * total + offset) * inner;
                    data.extend_from_slice(&grad.data()[start..start + w * inner]);
                }
                out.push(Some(Tensor::new(inputs[i].shape().to_vec(), data)));
            } else {
                out.push(None);
            }
            offset += w;
        }
        out
    }
}

struct SliceFn {
    start: usize,
}

impl Function for SliceFn {
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let (batch, total, inner) = axis1_split(inputs[0].shape());
        let width = output.shape()[1];
        let mut g = Tensor::zeros(inputs[0].shape().to_vec());
        for b in 0..batch {
            let dst = (b * total + self.start) * inner;
            let src = b * width * inner;
            g.data[dst..dst + width * inner].copy_from_slice(&grad.data()[src..src + width * inner]);
        }
        vec![Some(g)]
    }
}

struct GatherLastFn {
    index: Rc<Vec<usize>>,
}

impl Function for GatherLastFn {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let n_in = *inputs[0].shape().last().unwrap();
        let n_out = self.index.len();
        let mut g = Tensor::zeros(inputs[0].shape().to_vec());
        for (row_in, row_out) in g.data.chunks_mut(n_in).zip(grad.data().chunks(n_out)) {
            for (j, &src) in self.index.iter().enumerate() {
                row_in[src] += row_out[j];
            }
        }
        vec![Some(g)]
    }
}

struct LinearFn;

impl Function for LinearFn {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (x, w) = (inputs[0], inputs[1]);
        let (batch, fan_in) = (x.shape()[0], x.shape()[1]);
        let fan_out = w.shape()[0];
        let gx = needs[0].then(|| {
            let mut gx = Tensor::zeros(x.shape().to_vec());
            gemm(
                batch, fan_out, fan_in, 1.0,
                grad.data(), fan_out as isize, 1,
                w.data(), fan_in as isize, 1,
                0.0, &mut gx.data, fan_in as isize, 1,
            );
            gx
        });
        let gw = needs[1].then(|| {
            let mut gw = Tensor::zeros(w.shape().to_vec());
            gemm(
                fan_out, batch, fan_in, 1.0,
                grad.data(), 1, fan_out as isize,
                x.data(), fan_in as isize, 1,
                0.0, &mut gw.data, fan_in as isize, 1,
            );
            gw
        });
        let gb = needs[2].then(|| {
            let mut gb = Tensor::zeros(vec![fan_out]);
            for row in grad.data().chunks(fan_out) {
                for (acc, v) in gb.data.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            gb
        });
        vec![gx, gw, gb]
    }
}

/// Geometry of a 1-D convolution over the last axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv1dSpec {
    pub stride: usize,
    pub padding: usize,
}

impl Conv1dSpec {
    pub fn same() -> Self {
        Self {
            stride: 1,
            padding: 1,
        }
    }

    pub fn output_len(&self, len: usize, kernel: usize) -> usize {
        (len + 2 * self.padding - kernel) / self.stride + 1
    }
}

fn im2col(x: &[f64], channels: usize, len: usize, kernel: usize, spec: Conv1dSpec, out_len: usize, col: &mut [f64]) {
    for c in 0..channels {
        let xrow = &x[c * len..(c + 1) * len];
        for k in 0..kernel {
            let crow = &mut col[(c * kernel + k) * out_len..(c * kernel + k + 1) * out_len];
            for (t, v) in crow.iter_mut().enumerate() {
                let pos = (t * spec.stride + k) as isize - spec.padding as isize;
                *v = if pos >= 0 && (pos as usize) < len {
                    xrow[pos as usize]
                } else {
                    0.0
                };
            }
        }
    }
}

fn col2im(col: &[f64], channels: usize, len: usize, kernel: usize, spec: Conv1dSpec, out_len: usize, x: &mut [f64]) {
    for c in 0..channels {
        let xrow = &mut x[c * len..(c + 1) * len];
        for k in 0..kernel {
            let crow = &col[(c * kernel + k) * out_len..(c * kernel + k + 1) * out_len];
            for (t, v) in crow.iter().enumerate() {
                let pos = (t * spec.stride + k) as isize - spec.padding as isize;
                if pos >= 0 && (pos as usize) < len {
                    xrow[pos as usize] += v;
                }
            }
        }
    }
}

struct Conv1dFn {
    spec: Conv1dSpec,
}

impl Conv1dFn {
    fn is_pointwise(&self, kernel: usize) -> bool {
        kernel == 1 && self.spec.stride == 1 && self.spec.padding == 0
    }
}

impl Function for Conv1dFn {
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (x, w) = (inputs[0], inputs[1]);
        let (batch, cin, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (cout, kernel) = (w.shape()[0], w.shape()[2]);
        let out_len = output.shape()[2];
        let ck = cin * kernel;
        let pointwise = self.is_pointwise(kernel);
        let mut gx = needs[0].then(|| Tensor::zeros(x.shape().to_vec()));
        let mut gw = needs[1].then(|| Tensor::zeros(w.shape().to_vec()));
        let mut col = vec![0.0; if pointwise { 0 } else { ck * out_len }];
        let mut gcol = vec![0.0; if pointwise || gx.is_none() { 0 } else { ck * out_len }];
        for b in 0..batch {
            let xb = &x.data()[b * cin * len..(b + 1) * cin * len];
            let gy = &grad.data()[b * cout * out_len..(b + 1) * cout * out_len];
            if let Some(gw) = gw.as_mut() {
                let colb: &[f64] = if pointwise {
                    xb
                } else {
                    im2col(xb, cin, len, kernel, self.spec, out_len, &mut col);
                    &col
                };
                gemm(
                    cout, out_len, ck, 1.0,
                    gy, out_len as isize, 1,
                    colb, 1, out_len as isize,
                    1.0, &mut gw.data, ck as isize, 1,
                );
            }
            if let Some(gx) = gx.as_mut() {
                let gxb = &mut gx.data[b * cin * len..(b + 1) * cin * len];
                if pointwise {
                    gemm(
                        ck, cout, out_len, 1.0,
                        w.data(), 1, ck as isize,
                        gy, out_len as isize, 1,
                        0.0, gxb, out_len as isize, 1,
                    );
                } else {
                    gemm(
                        ck, cout, out_len, 1.0,
                        w.data(), 1, ck as isize,
                        gy, out_len as isize, 1,
                        0.0, &mut gcol, out_len as isize, 1,
                    );
                    col2im(&gcol, cin, len, kernel, self.spec, out_len, gxb);
                }
            }
        }
        let gb = needs[2].then(|| {
            let mut gb = Tensor::zeros(vec![cout]);
            for gy in grad.data().chunks(cout * out_len) {
                for (o, acc) in gb.data.iter_mut().enumerate() {
                    *acc += gy[o * out_len..(o + 1) * out_len].iter().sum::<f64>();
                }
            }
            gb
        });
        vec![gx, gw, gb]
    }
}

struct GroupNormFn {
    groups: usize,
    eps: f64,
}

impl GroupNormFn {
    /// Per (batch, group) mean and inverse standard deviation.
    fn stats(&self, x: &Tensor) -> Vec<(f64, f64)> {
        let (batch, channels, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let span = channels / self.groups * len;
        (0..batch * self.groups)
            .map(|bg| {
                let chunk = &x.data()[bg * span..(bg + 1) * span];
                let mean = chunk.iter().sum::<f64>() / span as f64;
                let var = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / span as f64;
                (mean, 1.0 / (var + self.eps).sqrt())
            })
            .collect()
    }
}

impl Function for GroupNormFn {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (x, gamma) = (inputs[0], inputs[1]);
        let (batch, channels, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let cpg = channels / self.groups;
        let span = cpg * len;
        let stats = self.stats(x);
        let mut gx = needs[0].then(|| Tensor::zeros(x.shape().to_vec()));
        let mut ggamma = vec![0.0; channels];
        let mut gbeta = vec![0.0; channels];
        let mut dxhat = vec![0.0; span];
        for b in 0..batch {
            for g in 0..self.groups {
                let (mean, inv) = stats[b * self.groups + g];
                let base = (b * self.groups + g) * span;
                let xs = &x.data()[base..base + span];
                let gs = &grad.data()[base..base + span];
                let (mut m1, mut m2) = (0.0, 0.0);
                for i in 0..span {
                    let c = g * cpg + i / len;
                    let xhat = (xs[i] - mean) * inv;
                    ggamma[c] += gs[i] * xhat;
                    gbeta[c] += gs[i];
                    dxhat[i] = gs[i] * gamma.data()[c];
                    m1 += dxhat[i];
                    m2 += dxhat[i] * xhat;
                }
                if let Some(gx) = gx.as_mut() {
                    m1 /= span as f64;
                    m2 /= span as f64;
                    let out = &mut gx.data[base..base + span];
                    for i in 0..span {
                        let xhat = (xs[i] - mean) * inv;
                        out[i] = inv * (dxhat[i] - m1 - xhat * m2);
                    }
                }
            }
        }
        vec![
            gx,
            needs[1].then(|| Tensor::new(vec![channels], ggamma)),
            needs[2].then(|| Tensor::new(vec![channels], gbeta)),
        ]
    }
}

/// `x[b, c, :] * scale[b, c] + shift[b, c]`.
struct ScaleShiftFn;

impl Function for ScaleShiftFn {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (x, scale) = (inputs[0], inputs[1]);
        let len = x.shape()[2];
        let mut gx = needs[0].then(|| Tensor::zeros(x.shape().to_vec()));
        let mut gscale = Tensor::zeros(scale.shape().to_vec());
        let mut gshift = Tensor::zeros(scale.shape().to_vec());
        for (bc, s) in scale.data().iter().enumerate() {
            let xs = &x.data()[bc * len..(bc + 1) * len];
            let gs = &grad.data()[bc * len..(bc + 1) * len];
            gscale.data[bc] = xs.iter().zip(gs).map(|(a, b)| a * b).sum();
            gshift.data[bc] = gs.iter().sum();
            if let Some(gx) = gx.as_mut() {
                for (o, g) in gx.data[bc * len..(bc + 1) * len].iter_mut().zip(gs) {
                    *o = g * s;
                }
            }
        }
        vec![gx, needs[1].then_some(gscale), needs[2].then_some(gshift)]
    }
}

/// Rows scaled to unit L2 norm: `x / sqrt(|x|^2 + eps_sq)`.
struct L2NormalizeFn {
    eps_sq: f64,
}

impl Function for L2NormalizeFn {
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let dim = *inputs[0].shape().last().unwrap();
        let mut gx = Tensor::zeros(inputs[0].shape().to_vec());
        for ((xr, yr), (gr, out)) in inputs[0]
            .data()
            .chunks(dim)
            .zip(output.data().chunks(dim))
            .zip(grad.data().chunks(dim).zip(gx.data.chunks_mut(dim)))
        {
            let r = (xr.iter().map(|v| v * v).sum::<f64>() + self.eps_sq).sqrt();
            let yg: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
            // Jacobian I/r - x x^T / r^3, written in terms of y = x / r.
            for i in 0..dim {
                out[i] = (gr[i] - yr[i] * yg) / r;
            }
        }
        vec![Some(gx)]
    }
}

/// `sqrt(re^2 + im^2 + delta)` for tensors laid out as `[B, 2, ...]`.
struct ComplexAbsFn;

impl Function for ComplexAbsFn {
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let (batch, _, inner) = axis1_split(inputs[0].shape());
        let mut gx = Tensor::zeros(inputs[0].shape().to_vec());
        for b in 0..batch {
            let src = &inputs[0].data()[b * 2 * inner..(b + 1) * 2 * inner];
            let (re, im) = src.split_at(inner);
            let mag = &output.data()[b * inner..(b + 1) * inner];
            let g = &grad.data()[b * inner..(b + 1) * inner];
            let dst = &mut gx.data[b * 2 * inner..(b + 1) * 2 * inner];
            let (gre, gim) = dst.split_at_mut(inner);
            for i in 0..inner {
                let s = g[i] / mag[i];
                gre[i] = s * re[i];
                gim[i] = s * im[i];
            }
        }
        vec![Some(gx)]
    }
}

fn same_shape(a: &Var<'_>, b: &Var<'_>, op: &str) {
    let (sa, sb) = (a.shape(), b.shape());
    assert_eq!(sa, sb, "{op}: shape mismatch {sa:?} vs {sb:?}");
}

impl<'g> Var<'g> {
    pub fn unary(&self, kind: Unary) -> Var<'g> {
        let value = self.value().map(|v| kind.eval(v));
        self.graph.apply(Box::new(UnaryFn(kind)), &[*self], value)
    }

    pub fn neg(&self) -> Var<'g> {
        self.unary(Unary::Neg)
    }
    pub fn exp(&self) -> Var<'g> {
        self.unary(Unary::Exp)
    }
    pub fn ln(&self) -> Var<'g> {
        self.unary(Unary::Log)
    }
    pub fn sqrt(&self) -> Var<'g> {
        self.unary(Unary::Sqrt)
    }
    pub fn abs(&self) -> Var<'g> {
        self.unary(Unary::Abs)
    }
    pub fn square(&self) -> Var<'g> {
        self.unary(Unary::Square)
    }
    pub fn relu(&self) -> Var<'g> {
        self.unary(Unary::Relu)
    }
    pub fn silu(&self) -> Var<'g> {
        self.unary(Unary::Silu)
    }
    pub fn softplus(&self) -> Var<'g> {
        self.unary(Unary::Softplus)
    }
    pub fn leaky_relu(&self, slope: f64) -> Var<'g> {
        self.unary(Unary::LeakyRelu(slope))
    }

    fn binary(&self, other: &Var<'g>, kind: Binary, name: &str) -> Var<'g> {
        same_shape(self, other, name);
        let (a, b) = (self.value(), other.value());
        let f: fn(f64, f64) -> f64 = match kind {
            Binary::Add => |x, y| x + y,
            Binary::Sub => |x, y| x - y,
            Binary::Mul => |x, y| x * y,
            Binary::Div => |x, y| x / y,
        };
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(a.shape().to_vec(), data);
        self.graph.apply(Box::new(BinaryFn(kind)), &[*self, *other], value)
    }

    pub fn add(&self, other: &Var<'g>) -> Var<'g> {
        self.binary(other, Binary::Add, "add")
    }
    pub fn sub(&self, other: &Var<'g>) -> Var<'g> {
        self.binary(other, Binary::Sub, "sub")
    }
    pub fn mul(&self, other: &Var<'g>) -> Var<'g> {
        self.binary(other, Binary::Mul, "mul")
    }
    pub fn div(&self, other: &Var<'g>) -> Var<'g> {
        self.binary(other, Binary::Div, "div")
    }

    /// `scale * x + shift` with scalar coefficients.
    pub fn affine(&self, scale: f64, shift: f64) -> Var<'g> {
        let value = self.value().map(|v| scale * v + shift);
        self.graph.apply(Box::new(AffineFn { scale }), &[*self], value)
    }

    pub fn scale(&self, scale: f64) -> Var<'g> {
        self.affine(scale, 0.0)
    }

    pub fn sum(&self) -> Var<'g> {
        let value = Tensor::scalar(self.value().data().iter().sum());
        self.graph.apply(Box::new(SumFn { scale: 1.0 }), &[*self], value)
    }

    pub fn mean(&self) -> Var<'g> {
        let v = self.value();
        let n = v.len() as f64;
        let value = Tensor::scalar(v.data().iter().sum::<f64>() / n);
        self.graph.apply(Box::new(SumFn { scale: 1.0 / n }), &[*self], value)
    }

    fn reduce_last(&self, mean: bool) -> Var<'g> {
        let v = self.value();
        let shape = v.shape();
        let n = *shape.last().expect("reduce on rank-0 tensor");
        let scale = if mean { 1.0 / n as f64 } else { 1.0 };
        let data = v.data().chunks(n).map(|c| c.iter().sum::<f64>() * scale).collect();
        let out_shape = shape[..shape.len() - 1].to_vec();
        let value = Tensor::new(out_shape, data);
        self.graph.apply(Box::new(ReduceLastFn { scale }), &[*self], value)
    }

    /// Sum over the last axis, dropping it.
    pub fn sum_last(&self) -> Var<'g> {
        self.reduce_last(false)
    }

    /// Mean over the last axis, dropping it.
    pub fn mean_last(&self) -> Var<'g> {
        self.reduce_last(true)
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Var<'g> {
        let value = (*self.value()).clone().reshaped(shape);
        self.graph.apply(Box::new(ReshapeFn), &[*self], value)
    }

    /// Concatenation along axis 1.
    pub fn concat(parts: &[Var<'g>]) -> Var<'g> {
        let graph = parts[0].graph;
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let (batch, _, inner) = axis1_split(values[0].shape());
        let widths: Vec<usize> = values.iter().map(|v| v.shape()[1]).collect();
        for v in &values {
            assert_eq!(v.shape()[0], batch, "concat: batch mismatch");
            assert_eq!(v.shape()[2..], values[0].shape()[2..], "concat: trailing shape mismatch");
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(batch * total * inner);
        for b in 0..batch {
            for (v, &w) in values.iter().zip(&widths) {
                data.extend_from_slice(&v.data()[b * w * inner..(b + 1) * w * inner]);
            }
        }
        let mut shape = values[0].shape().to_vec();
        shape[1] = total;
        graph.apply(Box::new(ConcatFn { widths }), parts, Tensor::new(shape, data))
    }

    /// `width` entries of axis 1 starting at `start`.
    pub fn slice1(&self, start: usize, width: usize) -> Var<'g> {
        let v = self.value();
        let (batch, total, inner) = axis1_split(v.shape());
        assert!(start + width <= total, "slice1 out of range");
        let mut data = Vec::with_capacity(batch * width * inner);
        for b in 0..batch {
            let s = (b * total + start) * inner;
            data.extend_from_slice(&v.data()[s..s + width * inner]);
        }
        let mut shape = v.shape().to_vec();
        shape[1] = width;
        self.graph.apply(Box::new(SliceFn { start }), &[*self], Tensor::new(shape, data))
    }

    /// `out[..., j] = x[..., index[j]]`; covers crops, reflection pads and
    /// nearest-neighbour upsampling along the last axis.
    pub fn gather_last(&self, index: Rc<Vec<usize>>) -> Var<'g> {
        let v = self.value();
        let n_in = *v.shape().last().unwrap();
        assert!(index.iter().all(|&i| i < n_in), "gather_last index out of range");
        let mut data = Vec::with_capacity(v.len() / n_in * index.len());
        for row in v.data().chunks(n_in) {
            data.extend(index.iter().map(|&i| row[i]));
        }
        let mut shape = v.shape().to_vec();
        *shape.last_mut().unwrap() = index.len();
        self.graph.apply(Box::new(GatherLastFn { index }), &[*self], Tensor::new(shape, data))
    }

    /// `x [B, in] · w[out, in]^T + b[out]`.
    pub fn linear(&self, weight: &Var<'g>, bias: &Var<'g>) -> Var<'g> {
        let (x, w, b) = (self.value(), weight.value(), bias.value());
        let (batch, fan_in) = (x.shape()[0], x.shape()[1]);
        let fan_out = w.shape()[0];
        assert_eq!(w.shape(), [fan_out, fan_in], "linear: weight shape");
        assert_eq!(b.shape(), [fan_out], "linear: bias shape");
        let mut out = Vec::with_capacity(batch * fan_out);
        for _ in 0..batch {
            out.extend_from_slice(b.data());
        }
        gemm(
            batch, fan_in, fan_out, 1.0,
            x.data(), fan_in as isize, 1,
            w.data(), 1, fan_in as isize,
            1.0, &mut out, fan_out as isize, 1,
        );
        self.graph.apply(
            Box::new(LinearFn),
            &[*self, *weight, *bias],
            Tensor::new(vec![batch, fan_out], out),
        )
    }

    /// 1-D convolution of `x [B, Cin, T]` with `w [Cout, Cin, K]` plus bias.
    pub fn conv1d(&self, weight: &Var<'g>, bias: &Var<'g>, spec: Conv1dSpec) -> Var<'g> {
        let (x, w, bv) = (self.value(), weight.value(), bias.value());
        let (batch, cin, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (cout, kernel) = (w.shape()[0], w.shape()[2]);
        assert_eq!(w.shape()[1], cin, "conv1d: input channels {} vs weight {:?}", cin, w.shape());
        assert_eq!(bv.shape(), [cout], "conv1d: bias shape");
        assert!(len + 2 * spec.padding >= kernel, "conv1d: input shorter than kernel");
        let out_len = spec.output_len(len, kernel);
        let ck = cin * kernel;
        let func = Conv1dFn { spec };
        let pointwise = func.is_pointwise(kernel);
        let mut out = vec![0.0; batch * cout * out_len];
        let mut col = vec![0.0; if pointwise { 0 } else { ck * out_len }];
        for b in 0..batch {
            let xb = &x.data()[b * cin * len..(b + 1) * cin * len];
            let yb = &mut out[b * cout * out_len..(b + 1) * cout * out_len];
            for (o, row) in yb.chunks_mut(out_len).enumerate() {
                row.fill(bv.data()[o]);
            }
            let colb: &[f64] = if pointwise {
                xb
            } else {
                im2col(xb, cin, len, kernel, spec, out_len, &mut col);
                &col
            };
            gemm(
                cout, ck, out_len, 1.0,
                w.data(), ck as isize, 1,
                colb, out_len as isize, 1,
                1.0, yb, out_len as isize, 1,
            );
        }
        self.graph.apply(
            Box::new(func),
            &[*self, *weight, *bias],
            Tensor::new(vec![batch, cout, out_len], out),
        )
    }

    /// Group normalization of `[B, C, T]` with per-channel affine parameters.
    pub fn group_norm(&self, groups: usize, gamma: &Var<'g>, beta: &Var<'g>, eps: f64) -> Var<'g> {
        let x = self.value();
        let (channels, len) = (x.shape()[1], x.shape()[2]);
        assert_eq!(channels % groups, 0, "group_norm: {channels} channels not divisible by {groups}");
        let func = GroupNormFn { groups, eps };
        let stats = func.stats(&x);
        let (g, b) = (gamma.value(), beta.value());
        let span = channels / groups * len;
        let mut out = vec![0.0; x.len()];
        for (i, (o, v)) in out.iter_mut().zip(x.data()).enumerate() {
            let (mean, inv) = stats[i / span];
            let c = (i / len) % channels;
            *o = (v - mean) * inv * g.data()[c] + b.data()[c];
        }
        self.graph.apply(
            Box::new(func),
            &[*self, *gamma, *beta],
            Tensor::new(x.shape().to_vec(), out),
        )
    }

    /// Per-channel affine modulation of `[B, C, T]` by `scale, shift: [B, C]`.
    pub fn scale_shift(&self, scale: &Var<'g>, shift: &Var<'g>) -> Var<'g> {
        let (x, s, t) = (self.value(), scale.value(), shift.value());
        let (batch, channels, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        assert_eq!(s.shape(), [batch, channels], "scale_shift: scale shape");
        assert_eq!(t.shape(), [batch, channels], "scale_shift: shift shape");
        let mut out = vec![0.0; x.len()];
        for (i, o) in out.iter_mut().enumerate() {
            let bc = i / len;
            *o = x.data()[i] * s.data()[bc] + t.data()[bc];
        }
        self.graph.apply(
            Box::new(ScaleShiftFn),
            &[*self, *scale, *shift],
            Tensor::new(x.shape().to_vec(), out),
        )
    }

    /// Normalizes the last axis to unit L2 norm, `x / sqrt(|x|^2 + eps^2)`.
    pub fn l2_normalize(&self, eps: f64) -> Var<'g> {
        let v = self.value();
        let dim = *v.shape().last().unwrap();
        let eps_sq = eps * eps;
        let mut data = Vec::with_capacity(v.len());
        for row in v.data().chunks(dim) {
            let r = (row.iter().map(|x| x * x).sum::<f64>() + eps_sq).sqrt();
            data.extend(row.iter().map(|x| x / r));
        }
        self.graph.apply(
            Box::new(L2NormalizeFn { eps_sq }),
            &[*self],
            Tensor::new(v.shape().to_vec(), data),
        )
    }

    /// Magnitude of a `[B, 2, ...]` (real, imaginary) tensor, `[B, ...]` out.
    pub fn complex_abs(&self, delta: f64) -> Var<'g> {
        let v = self.value();
        let (batch, two, inner) = axis1_split(v.shape());
        assert_eq!(two, 2, "complex_abs expects [B, 2, ...]");
        let mut data = Vec::with_capacity(batch * inner);
        for chunk in v.data().chunks(2 * inner) {
            let (re, im) = chunk.split_at(inner);
            data.extend(re.iter().zip(im).map(|(a, b)| (a * a + b * b + delta).sqrt()));
        }
        let mut shape = vec![batch];
        shape.extend_from_slice(&v.shape()[2..]);
        self.graph.apply(
            Box::new(ComplexAbsFn),
            &[*self],
            Tensor::new(shape, data),
        )
    }
}
