//! Layer kernels with hand-written backward passes.
//!
//! Activations use an HWC layout; every kernel also accepts a leading batch
//! axis (`[B,H,W,C]`, `[B,N]`) and then processes the whole batch in one GEMM.

use std::borrow::Cow;

use crate::error::{shape_err, Result};
use crate::numerics::tensor::{Scalar, Tensor};

/// Resolved geometry of a valid (unpadded) convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvShape {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub out_height: usize,
    pub out_width: usize,
    pub out_channels: usize,
    batched: bool,
}

impl ConvShape {
    pub fn resolve(input: &[usize], weights: &[usize], stride: usize) -> Result<Self> {
        const OP: &str = "conv2d";
        let (batched, batch, h, w, c) = match *input {
            [h, w, c] => (false, 1, h, w, c),
            [b, h, w, c] => (true, b, h, w, c),
            _ => return shape_err(OP, format!("input rank must be 3 or 4, got {input:?}")),
        };
        let [kh, kw, cin, cout] = *weights else {
            return shape_err(OP, format!("weights must be [k,k,Cin,Cout], got {weights:?}"));
        };
        if kh != kw {
            return shape_err(OP, format!("kernel must be square, got {kh}x{kw}"));
        }
        if cin != c {
            return shape_err(
                OP,
                format!("input channels {c} != weight input channels {cin}"),
            );
        }
        if stride == 0 {
            return shape_err(OP, "stride must be positive");
        }
        for (name, extent) in [("height", h), ("width", w)] {
            if extent < kh {
                return shape_err(OP, format!("input {name} {extent} < kernel {kh}"));
            }
            if (extent - kh) % stride != 0 {
                return shape_err(
                    OP,
                    format!("input {name} {extent}: ({extent}-{kh}) not divisible by stride {stride}"),
                );
            }
        }
        Ok(Self {
            batch,
            height: h,
            width: w,
            in_channels: c,
            kernel: kh,
            stride,
            out_height: (h - kh) / stride + 1,
            out_width: (w - kh) / stride + 1,
            out_channels: cout,
            batched,
        })
    }

    /// Number of output locations across the batch (GEMM rows).
    pub fn rows(&self) -> usize {
        self.batch * self.out_height * self.out_width
    }

    /// Length of one receptive field (GEMM inner dimension).
    pub fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.in_channels
    }

    pub fn output_shape(&self) -> Vec<usize> {
        let spatial = [self.out_height, self.out_width, self.out_channels];
        if self.batched {
            std::iter::once(self.batch).chain(spatial).collect()
        } else {
            spatial.to_vec()
        }
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1
    }
}

/// Gathers every receptive field into a row of a `rows × patch_len` matrix,
/// ordered `(ky, kx, c)` to match the weight layout.
pub fn im2col<'a, T: Scalar>(input: &'a [T], cs: &ConvShape) -> Cow<'a, [T]> {
    if cs.is_pointwise() {
        return Cow::Borrowed(input);
    }
    let k = cs.kernel;
    let c = cs.in_channels;
    let run = k * c;
    let mut cols = Vec::with_capacity(cs.rows() * cs.patch_len());
    for b in 0..cs.batch {
        let image = &input[b * cs.height * cs.width * c..][..cs.height * cs.width * c];
        for oy in 0..cs.out_height {
            for ox in 0..cs.out_width {
                let (y0, x0) = (oy * cs.stride, ox * cs.stride);
                for ky in 0..k {
                    let start = ((y0 + ky) * cs.width + x0) * c;
                    cols.extend_from_slice(&image[start..start + run]);
                }
            }
        }
    }
    Cow::Owned(cols)
}

fn col2im<T: Scalar>(cols: &[T], cs: &ConvShape) -> Vec<T> {
    if cs.is_pointwise() {
        return cols.to_vec();
    }
    let k = cs.kernel;
    let c = cs.in_channels;
    let run = k * c;
    let mut out = vec![T::zero(); cs.batch * cs.height * cs.width * c];
    let mut row = 0;
    for b in 0..cs.batch {
        let image = &mut out[b * cs.height * cs.width * c..][..cs.height * cs.width * c];
        for oy in 0..cs.out_height {
            for ox in 0..cs.out_width {
                let patch = &cols[row * cs.patch_len()..][..cs.patch_len()];
                let (y0, x0) = (oy * cs.stride, ox * cs.stride);
                for ky in 0..k {
                    let start = ((y0 + ky) * cs.width + x0) * c;
                    image[start..start + run]
                        .iter_mut()
                        .zip(&patch[ky * run..(ky + 1) * run])
                        .for_each(|(d, &s)| *d += s);
                }
                row += 1;
            }
        }
    }
    out
}

fn check_bias<T: Scalar>(op: &'static str, bias: &Tensor<T>, n: usize) -> Result<()> {
    if bias.shape() != [n] {
        return shape_err(op, format!("bias shape {:?}, expected [{n}]", bias.shape()));
    }
    Ok(())
}

/// Adds `bias` to every row of a row-major `rows × bias.len()` matrix.
fn add_bias_rows<T: Scalar>(out: &mut [T], bias: &[T]) {
    for row in out.chunks_exact_mut(bias.len()) {
        row.iter_mut().zip(bias).for_each(|(o, &b)| *o += b);
    }
}

fn column_sums<T: Scalar>(m: &[T], width: usize) -> Vec<T> {
    let mut sums = vec![T::zero(); width];
    for row in m.chunks_exact(width) {
        sums.iter_mut().zip(row).for_each(|(s, &x)| *s += x);
    }
    sums
}

/// Valid cross-correlation plus bias.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
) -> Result<Tensor<T>> {
    let cs = ConvShape::resolve(input.shape(), weights.shape(), stride)?;
    check_bias("conv2d", bias, cs.out_channels)?;
    let cols = im2col(input.data(), &cs);
    let (m, k, n) = (cs.rows(), cs.patch_len(), cs.out_channels);
    let mut out = vec![T::zero(); m * n];
    T::gemm(m, k, n, &cols, (k, 1), weights.data(), (n, 1), T::zero(), &mut out);
    add_bias_rows(&mut out, bias.data());
    Tensor::from_vec(&cs.output_shape(), out)
}

/// Gradients of a convolution with respect to its input, weights and bias.
#[derive(Clone, Debug)]
pub struct ConvGrads<T = f32> {
    /// `None` when the caller asked to skip the input gradient.
    pub input: Option<Tensor<T>>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    upstream: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let g = conv2d_grads(input, weights, stride, upstream, true)?;
    Ok((g.input.expect("requested"), g.weights, g.bias))
}

/// Backward pass of [`conv2d`]; `need_input` skips the input gradient for
/// layers whose input is data rather than an activation.
pub fn conv2d_grads<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    upstream: &Tensor<T>,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let cs = ConvShape::resolve(input.shape(), weights.shape(), stride)?;
    if upstream.shape() != cs.output_shape().as_slice() {
        return shape_err(
            "conv2d_backward",
            format!(
                "upstream gradient {:?} != output {:?}",
                upstream.shape(),
                cs.output_shape()
            ),
        );
    }
    let cols = im2col(input.data(), &cs);
    let (r, k, n) = (cs.rows(), cs.patch_len(), cs.out_channels);
    let dy = upstream.data();

    let mut dw = vec![T::zero(); k * n];
    T::gemm(k, r, n, &cols, (1, k), dy, (n, 1), T::zero(), &mut dw);
    let db = column_sums(dy, n);

    let input_grad = if need_input {
        let mut dcols = vec![T::zero(); r * k];
        T::gemm(r, n, k, dy, (n, 1), weights.data(), (1, n), T::zero(), &mut dcols);
        Some(Tensor::from_vec(input.shape(), col2im(&dcols, &cs))?)
    } else {
        None
    };
    Ok(ConvGrads {
        input: input_grad,
        weights: Tensor::from_vec(weights.shape(), dw)?,
        bias: Tensor::from_vec(&[n], db)?,
    })
}

/// 2×2 max pooling with stride 2. A trailing odd row/column is dropped.
/// Returns the pooled tensor and, per output element, the flat input index
/// of the selected maximum (first index wins ties).
pub fn maxpool2<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (batched, b, h, w, c) = match *input.shape() {
        [h, w, c] => (false, 1, h, w, c),
        [b, h, w, c] => (true, b, h, w, c),
        ref s => return shape_err("maxpool2", format!("input rank must be 3 or 4, got {s:?}")),
    };
    if h < 2 || w < 2 {
        return shape_err("maxpool2", format!("input {h}x{w} smaller than 2x2 window"));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(b * oh * ow * c);
    let mut idx = Vec::with_capacity(out.capacity());
    for bi in 0..b {
        let base = bi * h * w * c;
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best_i = base + ((2 * oy) * w + 2 * ox) * c + ch;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = base + ((2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                        if x[i] > x[best_i] {
                            best_i = i;
                        }
                    }
                    out.push(x[best_i]);
                    idx.push(best_i);
                }
            }
        }
    }
    let shape: Vec<usize> = if batched {
        vec![b, oh, ow, c]
    } else {
        vec![oh, ow, c]
    };
    Ok((Tensor::from_vec(&shape, out)?, idx))
}

/// Routes the upstream gradient to the recorded argmax positions.
pub fn maxpool2_backward<T: Scalar>(
    input_shape: &[usize],
    indices: &[usize],
    upstream: &Tensor<T>,
) -> Result<Tensor<T>> {
    if indices.len() != upstream.len() {
        return shape_err(
            "maxpool2_backward",
            format!("{} indices for {} upstream values", indices.len(), upstream.len()),
        );
    }
    let mut grad = Tensor::zeros(input_shape);
    let g = grad.data_mut();
    for (&i, &u) in indices.iter().zip(upstream.data()) {
        if i >= g.len() {
            return shape_err("maxpool2_backward", format!("index {i} out of range"));
        }
        g[i] += u;
    }
    Ok(grad)
}

fn dense_dims(op: &'static str, input: &[usize], weights: &[usize]) -> Result<(usize, usize, usize)> {
    let [n, m] = *weights else {
        return shape_err(op, format!("weights must be [N,M], got {weights:?}"));
    };
    let (b, ni) = match *input {
        [ni] => (1, ni),
        [b, ni] => (b, ni),
        _ => return shape_err(op, format!("input must be [N] or [B,N], got {input:?}")),
    };
    if ni != n {
        return shape_err(op, format!("input length {ni} != weight rows {n}"));
    }
    Ok((b, n, m))
}

/// Affine map `x·W + b` with `W: [N,M]`.
pub fn dense<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, n, m) = dense_dims("dense", input.shape(), weights.shape())?;
    check_bias("dense", bias, m)?;
    let mut out = vec![T::zero(); b * m];
    T::gemm(b, n, m, input.data(), (n, 1), weights.data(), (m, 1), T::zero(), &mut out);
    add_bias_rows(&mut out, bias.data());
    let shape: Vec<usize> = if input.rank() == 1 { vec![m] } else { vec![b, m] };
    Tensor::from_vec(&shape, out)
}

/// Backward pass of [`dense`]: `(grad_input, grad_weights, grad_bias)`.
pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (b, n, m) = dense_dims("dense_backward", input.shape(), weights.shape())?;
    if upstream.len() != b * m {
        return shape_err(
            "dense_backward",
            format!("upstream {:?} does not match batch {b} x {m}", upstream.shape()),
        );
    }
    let dy = upstream.data();
    let mut dx = vec![T::zero(); b * n];
    T::gemm(b, m, n, dy, (m, 1), weights.data(), (1, m), T::zero(), &mut dx);
    let mut dw = vec![T::zero(); n * m];
    T::gemm(n, b, m, input.data(), (1, n), dy, (m, 1), T::zero(), &mut dw);
    Ok((
        Tensor::from_vec(input.shape(), dx)?,
        Tensor::from_vec(&[n, m], dw)?,
        Tensor::from_vec(&[m], column_sums(dy, m))?,
    ))
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|x| if x > T::zero() { x } else { T::zero() })
}

pub fn relu_inplace<T: Scalar>(t: &mut Tensor<T>) {
    t.data_mut().iter_mut().for_each(|x| {
        if !(*x > T::zero()) {
            *x = T::zero()
        }
    });
}

/// Masks `upstream` by `activation > 0`; works on either the pre- or the
/// post-activation values since both share the same positive set.
pub fn relu_backward<T: Scalar>(activation: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    if activation.shape() != upstream.shape() {
        return shape_err(
            "relu_backward",
            format!("{:?} vs {:?}", activation.shape(), upstream.shape()),
        );
    }
    let data = activation
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(upstream.shape(), data)
}

/// Huber loss of `prediction - target` and its derivative w.r.t. `prediction`.
pub fn huber_loss<T: Scalar>(prediction: T, target: T, delta: T) -> (T, T) {
    let e = prediction - target;
    let half = T::cast_from(0.5);
    if e.abs() <= delta {
        (half * e * e, e)
    } else {
        (delta * (e.abs() - half * delta), delta * e.signum())
    }
}
