//! Layer primitives with analytic gradients.
//!
//! Convolution is cross-correlation (no kernel flip) over NCHW tensors. Work is
//! split across rayon tasks by output row (conv) or by example (fc), and every
//! reduction runs in a fixed order inside one task or through a pairwise
//! tree, so results are bitwise identical for any number of worker threads.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{pairwise_sum, pairwise_sum_buffers, Tensor};

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone)]
pub struct FcGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Output extent of one spatial axis.
pub fn conv_out_extent(size: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = size + 2 * pad;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
    h_out: usize,
    w_out: usize,
}

impl ConvGeom {
    fn check(
        input: &Tensor,
        weights: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if input.rank() != 4 {
            return Err(Error::shape(
                "conv2d",
                format!("input must be [n,c,h,w], got {:?}", input.shape()),
            ));
        }
        if weights.rank() != 4 || weights.dim(2) != weights.dim(3) {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "weights must be [c_out,c_in,k,k], got {:?}",
                    weights.shape()
                ),
            ));
        }
        let (c_in, h, w) = (input.dim(1), input.dim(2), input.dim(3));
        let (c_out, k) = (weights.dim(0), weights.dim(2));
        if weights.dim(1) != c_in {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "input has {c_in} channels but weights {:?} expect {}",
                    weights.shape(),
                    weights.dim(1)
                ),
            ));
        }
        if let Some(b) = bias {
            if b.shape() != [c_out] {
                return Err(Error::shape(
                    "conv2d",
                    format!("bias must be [{c_out}], got {:?}", b.shape()),
                ));
            }
        }
        let h_out = conv_out_extent(h, k, stride, pad);
        let w_out = conv_out_extent(w, k, stride, pad);
        let (Some(h_out), Some(w_out)) = (h_out, w_out) else {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {k} with pad {pad}, stride {stride} does not fit {h}x{w} input"),
            ));
        };
        Ok(Self {
            c_in,
            h,
            w,
            c_out,
            k,
            stride,
            pad,
            h_out,
            w_out,
        })
    }

    fn rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.h_out * self.w_out
    }

    /// Unfolds one example `[c_in,h,w]` into `[c_in*k*k, h_out*w_out]`.
    fn im2col(&self, x: &[f32]) -> Vec<f32> {
        let p = self.positions();
        let mut cols = vec![0.0f32; self.rows() * p];
        for c in 0..self.c_in {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let r = (c * self.k + ky) * self.k + kx;
                    let row = &mut cols[r * p..(r + 1) * p];
                    for oy in 0..self.h_out {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let src = &x[(c * self.h + iy as usize) * self.w..];
                        for ox in 0..self.w_out {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                row[oy * self.w_out + ox] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    /// Folds column gradients back onto one example's input gradient.
    fn col2im(&self, cols: &[f32], dx: &mut [f32]) {
        let p = self.positions();
        for c in 0..self.c_in {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let r = (c * self.k + ky) * self.k + kx;
                    let row = &cols[r * p..(r + 1) * p];
                    for oy in 0..self.h_out {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let base = (c * self.h + iy as usize) * self.w;
                        for ox in 0..self.w_out {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dx[base + ix as usize] += row[oy * self.w_out + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Dot product with eight fixed accumulator lanes (vectorizes, deterministic).
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut lanes = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let mut tail = 0.0f32;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            lanes[l] += x[l] * y[l];
        }
    }
    pairwise_sum(&lanes) + tail
}

fn axpy(alpha: f32, x: &[f32], y: &mut [f32]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `c[m x n] += a[m x k] * b[k x n]`, row-major. Rows of `c` are split across
/// tasks in groups of four; each element accumulates over `k` in order.
fn gemm_acc(a: &[f32], b: &[f32], c: &mut [f32], m: usize, k: usize, n: usize) {
    const NB: usize = 512;
    if m == 0 || n == 0 {
        return;
    }
    c.par_chunks_mut(4 * n).enumerate().for_each(|(blk, rows)| {
        let i0 = blk * 4;
        let mr = rows.len() / n;
        for j0 in (0..n).step_by(NB) {
            let j1 = (j0 + NB).min(n);
            if mr == 4 {
                let (r0, rest) = rows.split_at_mut(n);
                let (r1, rest) = rest.split_at_mut(n);
                let (r2, r3) = rest.split_at_mut(n);
                let (c0, c1, c2, c3) = (
                    &mut r0[j0..j1],
                    &mut r1[j0..j1],
                    &mut r2[j0..j1],
                    &mut r3[j0..j1],
                );
                for r in 0..k {
                    let bv = &b[r * n + j0..r * n + j1];
                    let (a0, a1, a2, a3) = (
                        a[i0 * k + r],
                        a[(i0 + 1) * k + r],
                        a[(i0 + 2) * k + r],
                        a[(i0 + 3) * k + r],
                    );
                    for (jj, &x) in bv.iter().enumerate() {
                        c0[jj] += a0 * x;
                        c1[jj] += a1 * x;
                        c2[jj] += a2 * x;
                        c3[jj] += a3 * x;
                    }
                }
            } else {
                for ii in 0..mr {
                    let crow = &mut rows[ii * n + j0..ii * n + j1];
                    for r in 0..k {
                        axpy(a[(i0 + ii) * k + r], &b[r * n + j0..r * n + j1], crow);
                    }
                }
            }
        }
    });
}

/// `c[m x k] = a[m x n] * b[k x n]^T` via blocked dot products; each element
/// is a [`dot`] of two full rows, so the summation order is fixed.
fn gemm_nt(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut c = vec![0.0f32; m * k];
    if m == 0 || k == 0 {
        return c;
    }
    c.par_chunks_mut(k).enumerate().for_each(|(i, crow)| {
        let arow = &a[i * n..(i + 1) * n];
        for (r, out) in crow.iter_mut().enumerate() {
            *out = dot(arow, &b[r * n..(r + 1) * n]);
        }
    });
    c
}

/// Unfolds the whole batch into `[c_in*k*k, n*h_out*w_out]`.
fn im2col_batch(g: &ConvGeom, input: &Tensor) -> Vec<f32> {
    let n = input.dim(0);
    let in_len = g.c_in * g.h * g.w;
    let p = g.positions();
    let np = n * p;
    let rows = g.rows();
    let mut cols = vec![0.0f32; rows * np];
    for i in 0..n {
        let one = g.im2col(&input.data()[i * in_len..(i + 1) * in_len]);
        for r in 0..rows {
            cols[r * np + i * p..r * np + (i + 1) * p].copy_from_slice(&one[r * p..(r + 1) * p]);
        }
    }
    cols
}

pub fn conv2d(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let g = ConvGeom::check(input, weights, Some(bias), stride, pad)?;
    let n = input.dim(0);
    let p = g.positions();
    let np = n * p;
    let rows = g.rows();
    let cols = im2col_batch(&g, input);
    let w = weights.data();
    let b = bias.data();
    let mut flat = vec![0.0f32; g.c_out * np];
    for (co, row) in flat.chunks_mut(np).enumerate() {
        row.fill(b[co]);
    }
    gemm_acc(w, &cols, &mut flat, g.c_out, rows, np);
    let per_channel: Vec<&[f32]> = flat.chunks(np).collect();
    let mut out = vec![0.0f32; n * g.c_out * p];
    for (co, ch) in per_channel.iter().enumerate() {
        for i in 0..n {
            out[(i * g.c_out + co) * p..(i * g.c_out + co + 1) * p]
                .copy_from_slice(&ch[i * p..(i + 1) * p]);
        }
    }
    Tensor::new(vec![n, g.c_out, g.h_out, g.w_out], out)
}

pub fn conv2d_grad(
    input: &Tensor,
    weights: &Tensor,
    stride: usize,
    pad: usize,
    grad_out: &Tensor,
) -> Result<ConvGrads> {
    let g = ConvGeom::check(input, weights, None, stride, pad)?;
    let n = input.dim(0);
    if grad_out.shape() != [n, g.c_out, g.h_out, g.w_out] {
        return Err(Error::shape(
            "conv2d_grad",
            format!(
                "upstream gradient {:?} does not match output [{n},{},{},{}]",
                grad_out.shape(),
                g.c_out,
                g.h_out,
                g.w_out
            ),
        ));
    }
    let in_len = g.c_in * g.h * g.w;
    let p = g.positions();
    let np = n * p;
    let rows = g.rows();
    let w = weights.data();
    let cols = im2col_batch(&g, input);

    // upstream gradient as [c_out, n*p]
    let mut go = vec![0.0f32; g.c_out * np];
    for i in 0..n {
        for co in 0..g.c_out {
            go[co * np + i * p..co * np + (i + 1) * p].copy_from_slice(
                &grad_out.data()[(i * g.c_out + co) * p..(i * g.c_out + co + 1) * p],
            );
        }
    }

    let gw = gemm_nt(&go, &cols, g.c_out, rows, np);
    let gb: Vec<f32> = go.chunks(np).map(pairwise_sum).collect();

    let mut wt = vec![0.0f32; rows * g.c_out];
    for co in 0..g.c_out {
        for r in 0..rows {
            wt[r * g.c_out + co] = w[co * rows + r];
        }
    }
    let mut gcols = vec![0.0f32; rows * np];
    gemm_acc(&wt, &go, &mut gcols, rows, g.c_out, np);
    let mut gx = vec![0.0f32; n * in_len];
    let mut one = vec![0.0f32; rows * p];
    for i in 0..n {
        for (r, row) in gcols.chunks(np).enumerate() {
            one[r * p..(r + 1) * p].copy_from_slice(&row[i * p..(i + 1) * p]);
        }
        g.col2im(&one, &mut gx[i * in_len..(i + 1) * in_len]);
    }
    Ok(ConvGrads {
        input: Tensor::new(input.shape().to_vec(), gx)?,
        weights: Tensor::new(weights.shape().to_vec(), gw)?,
        bias: Tensor::new(vec![g.c_out], gb)?,
    })
}

fn fc_dims(input: &Tensor, weights: &Tensor) -> Result<(usize, usize, usize)> {
    if input.rank() < 2 || weights.rank() < 2 {
        return Err(Error::shape(
            "fc",
            format!(
                "input {:?} and weights {:?} must both have rank >= 2",
                input.shape(),
                weights.shape()
            ),
        ));
    }
    let n = input.dim(0);
    let d_in: usize = input.shape()[1..].iter().product();
    let d_out = weights.dim(0);
    let w_in: usize = weights.shape()[1..].iter().product();
    if w_in != d_in {
        return Err(Error::shape(
            "fc",
            format!(
                "input {:?} flattens to {d_in} features but weights {:?} expect {w_in}",
                input.shape(),
                weights.shape()
            ),
        ));
    }
    Ok((n, d_in, d_out))
}

/// Affine map `y = x W^T + b`; trailing input dims are flattened.
pub fn fc(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, d_in, d_out) = fc_dims(input, weights)?;
    if bias.shape() != [d_out] {
        return Err(Error::shape(
            "fc",
            format!("bias must be [{d_out}], got {:?}", bias.shape()),
        ));
    }
    let w = weights.data();
    let outs: Vec<Vec<f32>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x = &input.data()[i * d_in..(i + 1) * d_in];
            (0..d_out)
                .map(|o| bias.data()[o] + dot(&w[o * d_in..(o + 1) * d_in], x))
                .collect()
        })
        .collect();
    Tensor::new(vec![n, d_out], outs.concat())
}

pub fn fc_grad(input: &Tensor, weights: &Tensor, grad_out: &Tensor) -> Result<FcGrads> {
    let (n, d_in, d_out) = fc_dims(input, weights)?;
    if grad_out.shape() != [n, d_out] {
        return Err(Error::shape(
            "fc_grad",
            format!(
                "upstream gradient {:?} does not match output [{n},{d_out}]",
                grad_out.shape()
            ),
        ));
    }
    let w = weights.data();
    let per_example: Vec<(Vec<f32>, Vec<f32>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x = &input.data()[i * d_in..(i + 1) * d_in];
            let go = &grad_out.data()[i * d_out..(i + 1) * d_out];
            let mut gx = vec![0.0f32; d_in];
            let mut gw = vec![0.0f32; d_out * d_in];
            for o in 0..d_out {
                axpy(go[o], &w[o * d_in..(o + 1) * d_in], &mut gx);
                axpy(go[o], x, &mut gw[o * d_in..(o + 1) * d_in]);
            }
            (gx, gw)
        })
        .collect();
    let mut gx = Vec::with_capacity(n * d_in);
    let mut gws = Vec::with_capacity(n);
    for (x, w) in per_example {
        gx.extend_from_slice(&x);
        gws.push(w);
    }
    let gw = if n == 0 {
        vec![0.0; weights.numel()]
    } else {
        pairwise_sum_buffers(gws)
    };
    let gb: Vec<f32> = (0..d_out)
        .map(|o| {
            let col: Vec<f32> = (0..n).map(|i| grad_out.data()[i * d_out + o]).collect();
            pairwise_sum(&col)
        })
        .collect();
    Ok(FcGrads {
        input: Tensor::new(input.shape().to_vec(), gx)?,
        weights: Tensor::new(weights.shape().to_vec(), gw)?,
        bias: Tensor::new(vec![d_out], gb)?,
    })
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Subgradient 0 at the kink.
pub fn relu_grad(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if input.shape() != grad_out.shape() {
        return Err(Error::shape(
            "relu_grad",
            format!("{:?} vs {:?}", input.shape(), grad_out.shape()),
        ));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(x, g)| if *x > 0.0 { *g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

fn pool_dims(input: &Tensor) -> Result<(usize, usize, usize, usize)> {
    if input.rank() != 4 {
        return Err(Error::shape(
            "maxpool2x2",
            format!("input must be [n,c,h,w], got {:?}", input.shape()),
        ));
    }
    let (n, c, h, w) = (input.dim(0), input.dim(1), input.dim(2), input.dim(3));
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(
            "maxpool2x2",
            format!("spatial dims must be even, got {h}x{w}"),
        ));
    }
    Ok((n, c, h, w))
}

/// Index (into the plane) of the maximum of each 2x2 window; first wins on ties.
fn pool_argmax(plane: &[f32], w: usize, oy: usize, ox: usize) -> usize {
    let mut best = (2 * oy) * w + 2 * ox;
    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
        let idx = (2 * oy + dy) * w + 2 * ox + dx;
        if plane[idx] > plane[best] {
            best = idx;
        }
    }
    best
}

pub fn maxpool2x2(input: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = pool_dims(input)?;
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    for plane in input.data().chunks(h * w) {
        for oy in 0..ho {
            for ox in 0..wo {
                out.push(plane[pool_argmax(plane, w, oy, ox)]);
            }
        }
    }
    Tensor::new(vec![n, c, ho, wo], out)
}

pub fn maxpool2x2_grad(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = pool_dims(input)?;
    let (ho, wo) = (h / 2, w / 2);
    if grad_out.shape() != [n, c, ho, wo] {
        return Err(Error::shape(
            "maxpool2x2_grad",
            format!(
                "upstream gradient {:?} does not match [{n},{c},{ho},{wo}]",
                grad_out.shape()
            ),
        ));
    }
    let mut gx = vec![0.0f32; input.numel()];
    for (p, plane) in input.data().chunks(h * w).enumerate() {
        let go = &grad_out.data()[p * ho * wo..(p + 1) * ho * wo];
        let dst = &mut gx[p * h * w..(p + 1) * h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                dst[pool_argmax(plane, w, oy, ox)] += go[oy * wo + ox];
            }
        }
    }
    Tensor::new(input.shape().to_vec(), gx)
}

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn softmax_xent(logits: &Tensor, labels: &[usize]) -> Result<(f32, Tensor)> {
    if logits.rank() != 2 {
        return Err(Error::shape(
            "softmax_xent",
            format!("logits must be [n,classes], got {:?}", logits.shape()),
        ));
    }
    let (n, classes) = (logits.dim(0), logits.dim(1));
    if labels.len() != n {
        return Err(Error::shape(
            "softmax_xent",
            format!("{} labels for {n} examples", labels.len()),
        ));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidLabel { label, classes });
    }
    let inv_n = 1.0 / n.max(1) as f32;
    let mut losses = Vec::with_capacity(n);
    let mut grad = Vec::with_capacity(n * classes);
    for (row, &label) in logits.data().chunks(classes).zip(labels) {
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let exps: Vec<f32> = row.iter().map(|v| (v - max).exp()).collect();
        let z = pairwise_sum(&exps);
        losses.push(z.ln() - (row[label] - max));
        for (c, e) in exps.iter().enumerate() {
            let p = e / z;
            let target = if c == label { 1.0 } else { 0.0 };
            grad.push((p - target) * inv_n);
        }
    }
    let loss = pairwise_sum(&losses) * inv_n;
    Ok((loss.max(0.0), Tensor::new(vec![n, classes], grad)?))
}

/// L1 subgradient convention: `sign(0) = 0`.
pub fn l1_sign(w: f32) -> f32 {
    if w > 0.0 {
        1.0
    } else if w < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_input_gives_bias() {
        let x = Tensor::zeros(&[2, 3, 5, 5]);
        let w = Tensor::from_fn(&[4, 3, 3, 3], |i| (i as f32 * 0.37).sin());
        let b = Tensor::new(vec![4], vec![0.5, -1.0, 2.0, 0.0]).unwrap();
        let y = conv2d(&x, &w, &b, 1, 1).unwrap();
        assert_eq!(y.shape(), &[2, 4, 5, 5]);
        for (i, v) in y.data().iter().enumerate() {
            let ch = (i / 25) % 4;
            assert_eq!(*v, b.data()[ch]);
        }
    }

    #[test]
    fn ones_kernel_is_box_sum() {
        // hand-computed 3x3 box sums of a 3x3 input with zero padding
        let x = Tensor::new(vec![1, 1, 3, 3], vec![1., 2., 3., 4., 5., 6., 7., 8., 9.]).unwrap();
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let b = Tensor::zeros(&[1]);
        let y = conv2d(&x, &w, &b, 1, 1).unwrap();
        assert_eq!(y.data(), &[12., 21., 16., 27., 45., 33., 24., 39., 28.]);

        let impulse =
            Tensor::new(vec![1, 1, 3, 3], vec![0., 0., 0., 0., 1., 0., 0., 0., 0.]).unwrap();
        let y = conv2d(&impulse, &w, &b, 1, 1).unwrap();
        assert_eq!(y.data(), &[1.0; 9]);
    }

    #[test]
    fn zero_filter_gives_zero_channel() {
        let x = Tensor::from_fn(&[1, 2, 4, 4], |i| (i as f32).cos());
        let mut w = Tensor::from_fn(&[3, 2, 3, 3], |i| (i as f32 * 0.1).sin());
        w.data_mut()[18..36].fill(0.0);
        let y = conv2d(&x, &w, &Tensor::zeros(&[3]), 1, 1).unwrap();
        assert!(y.data()[16..32].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn stride_and_output_extent() {
        assert_eq!(conv_out_extent(7, 3, 2, 1), Some(4));
        assert_eq!(conv_out_extent(2, 5, 1, 1), None);
        let x = Tensor::zeros(&[1, 1, 7, 7]);
        let y = conv2d(
            &x,
            &Tensor::zeros(&[2, 1, 3, 3]),
            &Tensor::zeros(&[2]),
            2,
            1,
        )
        .unwrap();
        assert_eq!(y.shape(), &[1, 2, 4, 4]);
    }

    #[test]
    fn conv_shape_errors() {
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        let w = Tensor::zeros(&[3, 1, 3, 3]);
        let err = conv2d(&x, &w, &Tensor::zeros(&[3]), 1, 1).unwrap_err();
        assert!(err.to_string().contains("channels"), "{err}");
        assert!(conv2d(
            &x,
            &Tensor::zeros(&[3, 2, 3, 3]),
            &Tensor::zeros(&[2]),
            1,
            1
        )
        .is_err());
        assert!(conv2d(
            &x,
            &Tensor::zeros(&[3, 2, 7, 7]),
            &Tensor::zeros(&[3]),
            1,
            1
        )
        .is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let x = Tensor::from_fn(&[2, 2, 5, 5], |i| (i as f32).sin());
        let w = Tensor::from_fn(&[3, 2, 3, 3], |i| (i as f32).cos());
        let g = conv2d_grad(&x, &w, 1, 1, &Tensor::zeros(&[2, 3, 5, 5])).unwrap();
        assert!(g.input.data().iter().all(|v| *v == 0.0));
        assert!(g.weights.data().iter().all(|v| *v == 0.0));
        assert!(g.bias.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn grad_bias_is_channel_sum_of_upstream() {
        let x = Tensor::from_fn(&[2, 2, 5, 5], |i| (i as f32 * 0.3).sin());
        let w = Tensor::from_fn(&[3, 2, 3, 3], |i| (i as f32 * 0.7).cos());
        let go = Tensor::from_fn(&[2, 3, 5, 5], |i| (i as f32 * 1.3).sin());
        let g = conv2d_grad(&x, &w, 1, 1, &go).unwrap();
        for c in 0..3 {
            let mut s = 0.0f64;
            for n in 0..2 {
                for p in 0..25 {
                    s += go.data()[(n * 3 + c) * 25 + p] as f64;
                }
            }
            assert!((g.bias.data()[c] as f64 - s).abs() < 1e-5);
        }
    }

    #[test]
    fn fc_identity_and_zero_weights() {
        let x = Tensor::from_fn(&[3, 4], |i| i as f32 - 5.0);
        let eye = Tensor::from_fn(&[4, 4], |i| if i / 4 == i % 4 { 1.0 } else { 0.0 });
        assert_eq!(fc(&x, &eye, &Tensor::zeros(&[4])).unwrap().data(), x.data());
        let b = Tensor::new(vec![2], vec![0.25, -3.0]).unwrap();
        let y = fc(&x, &Tensor::zeros(&[2, 4]), &b).unwrap();
        assert_eq!(y.data(), &[0.25, -3.0, 0.25, -3.0, 0.25, -3.0]);
        assert!(fc(&x, &Tensor::zeros(&[2, 5]), &b).is_err());
    }

    #[test]
    fn pool_routes_gradient_to_max() {
        let x = Tensor::new(vec![1, 1, 2, 4], vec![1., 5., 2., 0., 3., 4., 9., 1.]).unwrap();
        assert_eq!(maxpool2x2(&x).unwrap().data(), &[5., 9.]);
        let g = maxpool2x2_grad(&x, &Tensor::new(vec![1, 1, 1, 2], vec![1., 2.]).unwrap()).unwrap();
        assert_eq!(g.data(), &[0., 1., 0., 0., 0., 0., 2., 0.]);
        assert!(maxpool2x2(&Tensor::zeros(&[1, 1, 3, 4])).is_err());
    }

    #[test]
    fn xent_uniform_and_confident() {
        let (loss, grad) = softmax_xent(&Tensor::zeros(&[2, 7]), &[3, 0]).unwrap();
        assert!((loss - 7f32.ln()).abs() < 1e-6);
        for row in grad.data().chunks(7) {
            assert!(row.iter().sum::<f32>().abs() < 1e-6);
        }
        let mut logits = Tensor::zeros(&[1, 4]);
        logits.data_mut()[2] = 100.0;
        let (loss, _) = softmax_xent(&logits, &[2]).unwrap();
        assert!(loss < 1e-6);
        assert!(matches!(
            softmax_xent(&logits, &[4]),
            Err(Error::InvalidLabel {
                label: 4,
                classes: 4
            })
        ));
    }
}
