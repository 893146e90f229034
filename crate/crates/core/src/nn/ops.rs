//! Layer kernels: forward and backward passes for convolution, batch
//! normalization, ReLU, linear layers and the softmax cross-entropy head.

use super::gemm::{gemm, Op};
use super::{NnError, Result, Tensor};

/// Whether batch normalization uses batch statistics (and updates running
/// ones) or only the stored running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

fn shape_err(op: &'static str, expected: &[usize], got: &[usize]) -> NnError {
    NnError::Shape {
        op,
        expected: expected.to_vec(),
        got: got.to_vec(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `[out_channels, in_channels, kh, kw]`
    pub weight: Tensor,
    /// `[out_channels]`
    pub bias: Tensor,
    pub padding: usize,
}

/// Geometry of one stride-1 convolution.
#[derive(Debug, Clone, Copy)]
struct ConvDims {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvDims {
    fn new(input: &[usize], weight: &[usize], bias: &[usize], pad: usize) -> Result<Self> {
        if input.len() != 4 {
            return Err(shape_err("conv2d input", &[0, 0, 0, 0], input));
        }
        if weight.len() != 4 || weight[1] != input[1] {
            return Err(shape_err(
                "conv2d kernel",
                &[weight.first().copied().unwrap_or(0), input[1], 3, 3],
                weight,
            ));
        }
        if bias != [weight[0]] {
            return Err(shape_err("conv2d bias", &[weight[0]], bias));
        }
        let (h, w) = (input[2], input[3]);
        let (kh, kw) = (weight[2], weight[3]);
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(shape_err(
                "conv2d spatial",
                &[kh, kw],
                &[h + 2 * pad, w + 2 * pad],
            ));
        }
        Ok(ConvDims {
            n: input[0],
            c: input[1],
            h,
            w,
            k: weight[0],
            kh,
            kw,
            pad,
            ho: h + 2 * pad - kh + 1,
            wo: w + 2 * pad - kw + 1,
        })
    }

    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn out_px(&self) -> usize {
        self.ho * self.wo
    }
}

/// Unfolds one `[c, h, w]` sample into a `[c*kh*kw, ho*wo]` patch matrix.
fn im2col(x: &[f64], d: &ConvDims, cols: &mut [f64]) {
    let px = d.out_px();
    for ci in 0..d.c {
        let plane = &x[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (ci * d.kh + ki) * d.kw + kj;
                let dst = &mut cols[row * px..(row + 1) * px];
                for oy in 0..d.ho {
                    let iy = (oy + ki) as isize - d.pad as isize;
                    let line = &mut dst[oy * d.wo..(oy + 1) * d.wo];
                    if iy < 0 || iy >= d.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox + kj) as isize - d.pad as isize;
                        *v = if ix < 0 || ix >= d.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the sample.
fn col2im(cols: &[f64], d: &ConvDims, dx: &mut [f64]) {
    let px = d.out_px();
    for ci in 0..d.c {
        let plane = &mut dx[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (ci * d.kh + ki) * d.kw + kj;
                let src = &cols[row * px..(row + 1) * px];
                for oy in 0..d.ho {
                    let iy = (oy + ki) as isize - d.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    for ox in 0..d.wo {
                        let ix = (ox + kj) as isize - d.pad as isize;
                        if ix >= 0 && ix < d.w as isize {
                            plane[iy as usize * d.w + ix as usize] += src[oy * d.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Saved state for [`conv2d_backward`]: the unfolded input patches.
#[derive(Debug, Clone)]
pub struct ConvCache {
    dims_in: Vec<usize>,
    cols: Vec<f64>,
}

/// Stride-1 cross-correlation with zero padding, `[N,C,H,W] -> [N,K,Ho,Wo]`.
pub fn conv2d_forward(input: &Tensor, conv: &Conv2d) -> Result<Tensor> {
    conv2d_forward_cached(input, conv).map(|(y, _)| y)
}

pub fn conv2d_forward_cached(input: &Tensor, conv: &Conv2d) -> Result<(Tensor, ConvCache)> {
    let d = ConvDims::new(
        input.shape(),
        conv.weight.shape(),
        conv.bias.shape(),
        conv.padding,
    )?;
    let patch = d.patch();
    let px = d.out_px();
    let in_stride = d.c * d.h * d.w;
    let out_stride = d.k * px;
    let mut cols = vec![0.0; d.n * patch * px];
    let mut out = vec![0.0; d.n * out_stride];
    let bias = conv.bias.data();
    for s in 0..d.n {
        let c = &mut cols[s * patch * px..(s + 1) * patch * px];
        im2col(&input.data()[s * in_stride..(s + 1) * in_stride], &d, c);
        let o = &mut out[s * out_stride..(s + 1) * out_stride];
        for (row, &b) in o.chunks_exact_mut(px).zip(bias) {
            row.fill(b);
        }
        gemm(
            d.k,
            patch,
            px,
            1.0,
            conv.weight.data(),
            Op::Normal,
            c,
            Op::Normal,
            1.0,
            o,
        );
    }
    let y = Tensor::new(&[d.n, d.k, d.ho, d.wo], out)?;
    Ok((
        y,
        ConvCache {
            dims_in: input.shape().to_vec(),
            cols,
        },
    ))
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub weight: Tensor,
    pub bias: Tensor,
    pub input: Option<Tensor>,
}

pub fn conv2d_backward(
    cache: &ConvCache,
    conv: &Conv2d,
    grad_out: &Tensor,
    need_input: bool,
) -> Result<ConvGrads> {
    let d = ConvDims::new(
        &cache.dims_in,
        conv.weight.shape(),
        conv.bias.shape(),
        conv.padding,
    )?;
    let expect = [d.n, d.k, d.ho, d.wo];
    if grad_out.shape() != expect {
        return Err(shape_err("conv2d grad", &expect, grad_out.shape()));
    }
    let patch = d.patch();
    let px = d.out_px();
    let out_stride = d.k * px;
    let in_stride = d.c * d.h * d.w;
    let mut gw = vec![0.0; d.k * patch];
    let mut gb = vec![0.0; d.k];
    let mut gx = if need_input {
        vec![0.0; d.n * in_stride]
    } else {
        Vec::new()
    };
    let mut gcols = vec![0.0; if need_input { patch * px } else { 0 }];
    for s in 0..d.n {
        let go = &grad_out.data()[s * out_stride..(s + 1) * out_stride];
        let c = &cache.cols[s * patch * px..(s + 1) * patch * px];
        gemm(
            d.k,
            px,
            patch,
            1.0,
            go,
            Op::Normal,
            c,
            Op::Transposed,
            1.0,
            &mut gw,
        );
        for (b, row) in gb.iter_mut().zip(go.chunks_exact(px)) {
            *b += row.iter().sum::<f64>();
        }
        if need_input {
            gemm(
                patch,
                d.k,
                px,
                1.0,
                conv.weight.data(),
                Op::Transposed,
                go,
                Op::Normal,
                0.0,
                &mut gcols,
            );
            col2im(&gcols, &d, &mut gx[s * in_stride..(s + 1) * in_stride]);
        }
    }
    Ok(ConvGrads {
        weight: Tensor::new(conv.weight.shape(), gw)?,
        bias: Tensor::new(&[d.k], gb)?,
        input: if need_input {
            Some(Tensor::new(&cache.dims_in, gx)?)
        } else {
            None
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm {
    pub const EPS: f64 = 1e-5;
    pub const MOMENTUM: f64 = 0.1;

    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Tensor::full(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            eps: Self::EPS,
            momentum: Self::MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// `(n, c, spatial)` for `[N,C]` or `[N,C,H,W]` inputs.
fn bn_dims(input: &Tensor, bn: &BatchNorm) -> Result<(usize, usize, usize)> {
    let s = input.shape();
    if s.len() < 2 || s[1] != bn.channels() {
        return Err(shape_err(
            "batchnorm",
            &[s.first().copied().unwrap_or(0), bn.channels()],
            s,
        ));
    }
    Ok((s[0], s[1], s[2..].iter().product()))
}

#[derive(Debug, Clone)]
pub struct BnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

/// Normalizes with batch statistics (biased variance) and folds them into
/// the running statistics; the running variance uses the unbiased estimate.
pub fn batchnorm_train(input: &Tensor, bn: &mut BatchNorm) -> Result<(Tensor, BnCache)> {
    let (n, c, sp) = bn_dims(input, bn)?;
    let m = n * sp;
    if m < 2 {
        return Err(NnError::BatchTooSmall { count: m });
    }
    let x = input.data();
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; c];
    for ch in 0..c {
        let blocks = || (0..n).map(move |s| (s * c + ch) * sp);
        let mut sum = 0.0;
        for b in blocks() {
            sum += x[b..b + sp].iter().sum::<f64>();
        }
        let mean = sum / m as f64;
        let mut sq = 0.0;
        for b in blocks() {
            sq += x[b..b + sp]
                .iter()
                .map(|v| (v - mean) * (v - mean))
                .sum::<f64>();
        }
        let var = sq / m as f64;
        let istd = 1.0 / (var + bn.eps).sqrt();
        inv_std[ch] = istd;
        let (g, be) = (bn.gamma.data()[ch], bn.beta.data()[ch]);
        for b in blocks() {
            for i in b..b + sp {
                let h = (x[i] - mean) * istd;
                xhat[i] = h;
                y[i] = g * h + be;
            }
        }
        let mom = bn.momentum;
        let unbiased = sq / (m - 1) as f64;
        let rm = &mut bn.running_mean.data_mut()[ch];
        *rm = (1.0 - mom) * *rm + mom * mean;
        let rv = &mut bn.running_var.data_mut()[ch];
        *rv = (1.0 - mom) * *rv + mom * unbiased;
    }
    Ok((Tensor::new(input.shape(), y)?, BnCache { xhat, inv_std }))
}

/// Normalizes with the running statistics only.
pub fn batchnorm_eval(input: &Tensor, bn: &BatchNorm) -> Result<Tensor> {
    let (n, c, sp) = bn_dims(input, bn)?;
    let x = input.data();
    let mut y = vec![0.0; x.len()];
    for ch in 0..c {
        let var = bn.running_var.data()[ch];
        if !(var > 0.0 && var.is_finite()) {
            return Err(NnError::CorruptStatistics { channel: ch, var });
        }
        let istd = 1.0 / (var + bn.eps).sqrt();
        let mean = bn.running_mean.data()[ch];
        let (g, be) = (bn.gamma.data()[ch], bn.beta.data()[ch]);
        for s in 0..n {
            let b = (s * c + ch) * sp;
            for i in b..b + sp {
                y[i] = g * (x[i] - mean) * istd + be;
            }
        }
    }
    Tensor::new(input.shape(), y)
}

pub fn batchnorm_forward(input: &Tensor, bn: &mut BatchNorm, mode: Mode) -> Result<Tensor> {
    match mode {
        Mode::Train => batchnorm_train(input, bn).map(|(y, _)| y),
        Mode::Eval => batchnorm_eval(input, bn),
    }
}

/// Returns `(d_input, d_gamma, d_beta)`.
pub fn batchnorm_backward(
    cache: &BnCache,
    bn: &BatchNorm,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, c, sp) = bn_dims(grad_out, bn)?;
    if cache.xhat.len() != grad_out.len() {
        return Err(shape_err(
            "batchnorm grad",
            &[cache.xhat.len()],
            &[grad_out.len()],
        ));
    }
    let m = (n * sp) as f64;
    let dy = grad_out.data();
    let mut dx = vec![0.0; dy.len()];
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for ch in 0..c {
        let g = bn.gamma.data()[ch];
        let (mut s_dy, mut s_dy_xhat) = (0.0, 0.0);
        for s in 0..n {
            let b = (s * c + ch) * sp;
            for i in b..b + sp {
                s_dy += dy[i];
                s_dy_xhat += dy[i] * cache.xhat[i];
            }
        }
        dgamma[ch] = s_dy_xhat;
        dbeta[ch] = s_dy;
        let k = g * cache.inv_std[ch] / m;
        for s in 0..n {
            let b = (s * c + ch) * sp;
            for i in b..b + sp {
                dx[i] = k * (m * dy[i] - s_dy - cache.xhat[i] * s_dy_xhat);
            }
        }
    }
    Ok((
        Tensor::new(grad_out.shape(), dx)?,
        Tensor::new(&[c], dgamma)?,
        Tensor::new(&[c], dbeta)?,
    ))
}

pub fn relu(input: &Tensor) -> Tensor {
    let mut t = input.clone();
    for v in t.data_mut() {
        *v = v.max(0.0);
    }
    t
}

/// Gates `grad` by the positive entries of the ReLU output.
pub fn relu_backward(output: &Tensor, grad: &Tensor) -> Tensor {
    let mut g = grad.clone();
    for (d, &y) in g.data_mut().iter_mut().zip(output.data()) {
        if y <= 0.0 {
            *d = 0.0;
        }
    }
    g
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `[out, in]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

impl Linear {
    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }
}

/// `[N,D] -> [N,M]`: `y = x Wᵀ + b`.
pub fn linear_forward(input: &Tensor, layer: &Linear) -> Result<Tensor> {
    let (m, d) = (layer.out_features(), layer.in_features());
    let s = input.shape();
    if s.len() != 2 || s[1] != d {
        return Err(shape_err("linear input", &[s[0], d], s));
    }
    if layer.bias.shape() != [m] {
        return Err(shape_err("linear bias", &[m], layer.bias.shape()));
    }
    let n = s[0];
    let mut out = Vec::with_capacity(n * m);
    for _ in 0..n {
        out.extend_from_slice(layer.bias.data());
    }
    gemm(
        n,
        d,
        m,
        1.0,
        input.data(),
        Op::Normal,
        layer.weight.data(),
        Op::Transposed,
        1.0,
        &mut out,
    );
    Tensor::new(&[n, m], out)
}

/// Returns `(d_weight, d_bias, d_input)`.
pub fn linear_backward(
    input: &Tensor,
    layer: &Linear,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (m, d) = (layer.out_features(), layer.in_features());
    let n = input.shape()[0];
    if grad_out.shape() != [n, m] {
        return Err(shape_err("linear grad", &[n, m], grad_out.shape()));
    }
    let mut gw = vec![0.0; m * d];
    gemm(
        m,
        n,
        d,
        1.0,
        grad_out.data(),
        Op::Transposed,
        input.data(),
        Op::Normal,
        0.0,
        &mut gw,
    );
    let mut gb = vec![0.0; m];
    for row in grad_out.data().chunks_exact(m) {
        for (b, v) in gb.iter_mut().zip(row) {
            *b += v;
        }
    }
    let mut gx = vec![0.0; n * d];
    gemm(
        n,
        m,
        d,
        1.0,
        grad_out.data(),
        Op::Normal,
        layer.weight.data(),
        Op::Normal,
        0.0,
        &mut gx,
    );
    Ok((
        Tensor::new(&[m, d], gw)?,
        Tensor::new(&[m], gb)?,
        Tensor::new(&[n, d], gx)?,
    ))
}

fn check_logits(logits: &Tensor) -> Result<(usize, usize)> {
    let s = logits.shape();
    if s.len() != 2 {
        return Err(shape_err("logits", &[0, 0], s));
    }
    if !logits.all_finite() {
        return Err(NnError::NonFinite("logits"));
    }
    Ok((s[0], s[1]))
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let (_, k) = check_logits(logits)?;
    let mut p = logits.clone();
    for row in p.data_mut().chunks_exact_mut(k) {
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    Ok(p)
}

fn check_labels(labels: &[usize], n: usize, k: usize) -> Result<()> {
    if labels.len() != n {
        return Err(shape_err("labels", &[n], &[labels.len()]));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(NnError::LabelOutOfRange {
            label: bad,
            classes: k,
        });
    }
    Ok(())
}

/// Mean negative log probability of the true class.
pub fn cross_entropy(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    let (n, k) = check_logits(probs)?;
    check_labels(labels, n, k)?;
    let total: f64 = probs
        .data()
        .chunks_exact(k)
        .zip(labels)
        .map(|(row, &l)| -row[l].ln())
        .sum();
    Ok(total / n as f64)
}

/// Loss from logits via log-sum-exp, together with the softmax and the
/// gradient of the mean loss with respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor, Tensor)> {
    let (n, k) = check_logits(logits)?;
    check_labels(labels, n, k)?;
    let probs = softmax(logits)?;
    let mut loss = 0.0;
    for (row, &l) in logits.data().chunks_exact(k).zip(labels) {
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
        loss += lse - row[l];
    }
    let mut grad = probs.clone();
    for (row, &l) in grad.data_mut().chunks_exact_mut(k).zip(labels) {
        row[l] -= 1.0;
        for v in row.iter_mut() {
            *v /= n as f64;
        }
    }
    Ok((loss / n as f64, probs, grad))
}
