//! Differentiable operations. Every op validates shapes up front and returns
//! [`NnError::Shape`] naming itself and the offending shapes.

use std::rc::Rc;

use super::gemm::{gemm, View};
use super::{NnError, Tensor};

fn shape_err(op: &'static str, detail: String) -> NnError {
    NnError::Shape { op: op.to_string(), detail }
}

fn need_rank(op: &'static str, t: &Tensor, rank: usize) -> Result<(), NnError> {
    if t.shape().len() == rank {
        Ok(())
    } else {
        Err(shape_err(op, format!("expected rank {rank}, got {:?}", t.shape())))
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), NnError> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape())))
    }
}

/// Splits a shape into (rows, last) where rows is the product of leading dims.
fn rows_last(t: &Tensor) -> (usize, usize) {
    let last = t.shape().last().copied().unwrap_or(1);
    (t.numel() / last.max(1), last)
}

pub fn reshape(x: &Tensor, shape: &[usize]) -> Result<Tensor, NnError> {
    if shape.iter().product::<usize>() != x.numel() {
        return Err(shape_err("reshape", format!("{:?} -> {shape:?}", x.shape())));
    }
    Ok(Tensor::from_op(x.data().to_vec(), shape.to_vec(), "reshape", vec![x.clone()], Box::new(|g, _| vec![Some(g.to_vec())])))
}

fn permute_data(data: &[f64], shape: &[usize], axes: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(data.len());
    if data.is_empty() || rank == 0 {
        out.extend_from_slice(data);
        return (out, out_shape);
    }
    // odometer over all but the innermost output axis, which is a strided run
    let (inner, inner_stride) = (out_shape[rank - 1], strides[rank - 1]);
    let mut idx = vec![0usize; rank - 1];
    let mut base = 0usize;
    loop {
        if inner_stride == 1 {
            out.extend_from_slice(&data[base..base + inner]);
        } else {
            out.extend((0..inner).map(|i| data[base + i * inner_stride]));
        }
        let mut d = rank - 1;
        loop {
            if d == 0 {
                return (out, out_shape);
            }
            d -= 1;
            idx[d] += 1;
            base += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            base -= strides[d] * idx[d];
            idx[d] = 0;
        }
    }
}

/// Reorders axes: output axis `i` is input axis `axes[i]`.
pub fn permute(x: &Tensor, axes: &[usize]) -> Result<Tensor, NnError> {
    let rank = x.shape().len();
    let mut seen = vec![false; rank];
    if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
        return Err(shape_err("permute", format!("axes {axes:?} for shape {:?}", x.shape())));
    }
    let (data, out_shape) = permute_data(x.data(), x.shape(), axes);
    let mut inverse = vec![0; rank];
    for (i, &a) in axes.iter().enumerate() {
        inverse[a] = i;
    }
    let gshape = out_shape.clone();
    Ok(Tensor::from_op(
        data,
        out_shape,
        "permute",
        vec![x.clone()],
        Box::new(move |g, _| vec![Some(permute_data(g, &gshape, &inverse).0)]),
    ))
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor, NnError> {
    same_shape("add", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Ok(Tensor::from_op(
        data,
        a.shape().to_vec(),
        "add",
        vec![a.clone(), b.clone()],
        Box::new(|g, _| vec![Some(g.to_vec()), Some(g.to_vec())]),
    ))
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor, NnError> {
    same_shape("mul", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    let (ac, bc) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        data,
        a.shape().to_vec(),
        "mul",
        vec![a.clone(), b.clone()],
        Box::new(move |g, _| {
            let ga = ac.requires_grad().then(|| g.iter().zip(bc.data()).map(|(g, y)| g * y).collect());
            let gb = bc.requires_grad().then(|| g.iter().zip(ac.data()).map(|(g, x)| g * x).collect());
            vec![ga, gb]
        }),
    ))
}

/// Element-wise product with a constant mask (no gradient to the mask).
pub fn mul_const(x: &Tensor, mask: Rc<Vec<f64>>) -> Result<Tensor, NnError> {
    if mask.len() != x.numel() {
        return Err(shape_err("mul_const", format!("mask {} vs {:?}", mask.len(), x.shape())));
    }
    let data = x.data().iter().zip(mask.iter()).map(|(a, m)| a * m).collect();
    Ok(Tensor::from_op(
        data,
        x.shape().to_vec(),
        "mul_const",
        vec![x.clone()],
        Box::new(move |g, _| vec![Some(g.iter().zip(mask.iter()).map(|(g, m)| g * m).collect())]),
    ))
}

pub fn scale(x: &Tensor, s: f64) -> Tensor {
    let data = x.data().iter().map(|v| v * s).collect();
    Tensor::from_op(data, x.shape().to_vec(), "scale", vec![x.clone()], Box::new(move |g, _| vec![Some(g.iter().map(|v| v * s).collect())]))
}

pub fn sum(x: &Tensor) -> Tensor {
    let n = x.numel();
    Tensor::from_op(vec![x.data().iter().sum()], vec![], "sum", vec![x.clone()], Box::new(move |g, _| vec![Some(vec![g[0]; n])]))
}

pub fn mean(x: &Tensor) -> Tensor {
    scale(&sum(x), 1.0 / x.numel().max(1) as f64)
}

/// `[m,k] · [k,n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, NnError> {
    need_rank("matmul", a, 2)?;
    need_rank("matmul", b, 2)?;
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    if b.shape()[0] != k {
        return Err(shape_err("matmul", format!("{:?} x {:?}", a.shape(), b.shape())));
    }
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, View::rows(a.data(), k), View::rows(b.data(), n), 0.0, &mut out, n, 1);
    let (ac, bc) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        out,
        vec![m, n],
        "matmul",
        vec![a.clone(), b.clone()],
        Box::new(move |g, _| {
            let ga = ac.requires_grad().then(|| {
                let mut ga = vec![0.0; m * k];
                gemm(m, n, k, View::rows(g, n), View::t(bc.data(), n), 0.0, &mut ga, k, 1);
                ga
            });
            let gb = bc.requires_grad().then(|| {
                let mut gb = vec![0.0; k * n];
                gemm(k, m, n, View::t(ac.data(), k), View::rows(g, n), 0.0, &mut gb, n, 1);
                gb
            });
            vec![ga, gb]
        }),
    ))
}

/// Affine map on the last axis: `x[.., in] · w[in, out] + b[out]`.
pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, NnError> {
    need_rank("linear", w, 2)?;
    let (rows, fin) = rows_last(x);
    let fout = w.shape()[1];
    if x.shape().is_empty() || w.shape()[0] != fin || b.shape() != [fout] {
        return Err(shape_err("linear", format!("x {:?}, w {:?}, b {:?}", x.shape(), w.shape(), b.shape())));
    }
    let mut out = Vec::with_capacity(rows * fout);
    for _ in 0..rows {
        out.extend_from_slice(b.data());
    }
    gemm(rows, fin, fout, View::rows(x.data(), fin), View::rows(w.data(), fout), 1.0, &mut out, fout, 1);
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = fout;
    let (xc, wc, bc) = (x.clone(), w.clone(), b.clone());
    Ok(Tensor::from_op(
        out,
        shape,
        "linear",
        vec![x.clone(), w.clone(), b.clone()],
        Box::new(move |g, _| {
            let gx = xc.requires_grad().then(|| {
                let mut gx = vec![0.0; rows * fin];
                gemm(rows, fout, fin, View::rows(g, fout), View::t(wc.data(), fout), 0.0, &mut gx, fin, 1);
                gx
            });
            let gw = wc.requires_grad().then(|| {
                let mut gw = vec![0.0; fin * fout];
                gemm(fin, rows, fout, View::t(xc.data(), fin), View::rows(g, fout), 0.0, &mut gw, fout, 1);
                gw
            });
            let gb = bc.requires_grad().then(|| {
                let mut gb = vec![0.0; fout];
                for row in g.chunks_exact(fout) {
                    gb.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                }
                gb
            });
            vec![gx, gw, gb]
        }),
    ))
}

/// `x` for `x > 0`, `exp(x) − 1` otherwise.
pub fn elu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| if v > 0.0 { v } else { v.exp_m1() }).collect();
    Tensor::from_op(
        data,
        x.shape().to_vec(),
        "elu",
        vec![x.clone()],
        Box::new(|g, y| vec![Some(g.iter().zip(y).map(|(g, &y)| if y > 0.0 { *g } else { g * (y + 1.0) }).collect())]),
    )
}

fn softmax_rows(data: &mut [f64], cols: usize) {
    for row in data.chunks_exact_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
}

/// Row-wise `dx = y ⊙ (g − Σ g⊙y)`.
fn softmax_backward(g: &[f64], y: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; g.len()];
    for ((o, g), y) in out.chunks_exact_mut(cols).zip(g.chunks_exact(cols)).zip(y.chunks_exact(cols)) {
        let dot: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
        for i in 0..cols {
            o[i] = y[i] * (g[i] - dot);
        }
    }
    out
}

/// Softmax over the last axis.
pub fn softmax(x: &Tensor) -> Result<Tensor, NnError> {
    if x.shape().is_empty() {
        return Err(shape_err("softmax", "scalar input".into()));
    }
    let (_, cols) = rows_last(x);
    let mut data = x.data().to_vec();
    softmax_rows(&mut data, cols);
    Ok(Tensor::from_op(
        data,
        x.shape().to_vec(),
        "softmax",
        vec![x.clone()],
        Box::new(move |g, y| vec![Some(softmax_backward(g, y, cols))]),
    ))
}

/// Normalizes over the last axis then applies per-feature `gamma`, `beta`.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor, NnError> {
    let (rows, f) = rows_last(x);
    if x.shape().is_empty() || gamma.shape() != [f] || beta.shape() != [f] {
        return Err(shape_err("layer_norm", format!("x {:?}, gamma {:?}, beta {:?}", x.shape(), gamma.shape(), beta.shape())));
    }
    let mut xhat = vec![0.0; rows * f];
    let mut inv_std = vec![0.0; rows];
    let mut out = vec![0.0; rows * f];
    for r in 0..rows {
        let row = &x.data()[r * f..(r + 1) * f];
        let mu = row.iter().sum::<f64>() / f as f64;
        let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / f as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std[r] = is;
        for i in 0..f {
            let h = (row[i] - mu) * is;
            xhat[r * f + i] = h;
            out[r * f + i] = h * gamma.data()[i] + beta.data()[i];
        }
    }
    let (xc, gc, bc) = (x.clone(), gamma.clone(), beta.clone());
    Ok(Tensor::from_op(
        out,
        x.shape().to_vec(),
        "layer_norm",
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |g, _| {
            let gam = gc.data();
            let mut dgamma = vec![0.0; f];
            let mut dbeta = vec![0.0; f];
            let mut dx = vec![0.0; rows * f];
            for r in 0..rows {
                let gr = &g[r * f..(r + 1) * f];
                let hr = &xhat[r * f..(r + 1) * f];
                let mut s1 = 0.0;
                let mut s2 = 0.0;
                for i in 0..f {
                    dgamma[i] += gr[i] * hr[i];
                    dbeta[i] += gr[i];
                    let dh = gr[i] * gam[i];
                    s1 += dh;
                    s2 += dh * hr[i];
                }
                let (m1, m2) = (s1 / f as f64, s2 / f as f64);
                for i in 0..f {
                    dx[r * f + i] = inv_std[r] * (gr[i] * gam[i] - m1 - hr[i] * m2);
                }
            }
            vec![xc.requires_grad().then_some(dx), gc.requires_grad().then_some(dgamma), bc.requires_grad().then_some(dbeta)]
        }),
    ))
}

/// Padding mode of a 2D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Output spatial size equals input size; the extra pad goes after.
    Same,
    Valid,
}

struct ConvGeom {
    b: usize,
    ci: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    pt: usize,
    pl: usize,
}

impl ConvGeom {
    fn k(&self) -> usize {
        self.ci * self.kh * self.kw
    }
    fn hw_out(&self) -> usize {
        self.ho * self.wo
    }
}

fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let ncol = g.b * g.hw_out();
    let mut cols = vec![0.0; g.k() * ncol];
    for c in 0..g.ci {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let dst = &mut cols[row * ncol..(row + 1) * ncol];
                for b in 0..g.b {
                    for oh in 0..g.ho {
                        let ih = (oh + i).wrapping_sub(g.pt);
                        if ih >= g.h {
                            continue;
                        }
                        let src = &x[((b * g.ci + c) * g.h + ih) * g.w..][..g.w];
                        let d = &mut dst[b * g.hw_out() + oh * g.wo..][..g.wo];
                        for (ow, v) in d.iter_mut().enumerate() {
                            let iw = (ow + j).wrapping_sub(g.pl);
                            if iw < g.w {
                                *v = src[iw];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], g: &ConvGeom) -> Vec<f64> {
    let ncol = g.b * g.hw_out();
    let mut x = vec![0.0; g.b * g.ci * g.h * g.w];
    for c in 0..g.ci {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let src = &cols[row * ncol..(row + 1) * ncol];
                for b in 0..g.b {
                    for oh in 0..g.ho {
                        let ih = (oh + i).wrapping_sub(g.pt);
                        if ih >= g.h {
                            continue;
                        }
                        let base = ((b * g.ci + c) * g.h + ih) * g.w;
                        let s = &src[b * g.hw_out() + oh * g.wo..][..g.wo];
                        for (ow, v) in s.iter().enumerate() {
                            let iw = (ow + j).wrapping_sub(g.pl);
                            if iw < g.w {
                                x[base + iw] += v;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// NCHW convolution, stride 1. `w` is `[co, ci, kh, kw]`, `b` is `[co]`.
pub fn conv2d(x: &Tensor, w: &Tensor, bias: &Tensor, padding: Padding) -> Result<Tensor, NnError> {
    need_rank("conv2d", x, 4)?;
    need_rank("conv2d", w, 4)?;
    let (b, ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, wci, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    let bad = wci != ci || bias.shape() != [co] || (padding == Padding::Valid && (kh > h || kw > wd));
    if bad {
        return Err(shape_err("conv2d", format!("x {:?}, w {:?}, b {:?}", x.shape(), w.shape(), bias.shape())));
    }
    let g = match padding {
        Padding::Same => ConvGeom { b, ci, h, w: wd, kh, kw, ho: h, wo: wd, pt: (kh - 1) / 2, pl: (kw - 1) / 2 },
        Padding::Valid => ConvGeom { b, ci, h, w: wd, kh, kw, ho: h - kh + 1, wo: wd - kw + 1, pt: 0, pl: 0 },
    };
    let cols = im2col(x.data(), &g);
    let (k, hwo, ncol) = (g.k(), g.hw_out(), b * g.hw_out());
    let mut out = vec![0.0; b * co * hwo];
    for n in 0..b {
        let dst = &mut out[n * co * hwo..(n + 1) * co * hwo];
        for (o, chunk) in dst.chunks_exact_mut(hwo).enumerate() {
            chunk.fill(bias.data()[o]);
        }
        let rhs = View { data: &cols[n * hwo..], rs: ncol, cs: 1 };
        gemm(co, k, hwo, View::rows(w.data(), k), rhs, 1.0, dst, hwo, 1);
    }
    let (xc, wc, bc) = (x.clone(), w.clone(), bias.clone());
    Ok(Tensor::from_op(
        out,
        vec![b, co, g.ho, g.wo],
        "conv2d",
        vec![x.clone(), w.clone(), bias.clone()],
        Box::new(move |gout, _| {
            let gb = bc.requires_grad().then(|| {
                let mut gb = vec![0.0; co];
                for (i, chunk) in gout.chunks_exact(hwo).enumerate() {
                    gb[i % co] += chunk.iter().sum::<f64>();
                }
                gb
            });
            let gw = wc.requires_grad().then(|| {
                let mut gw = vec![0.0; co * k];
                for n in 0..b {
                    let lhs = View::rows(&gout[n * co * hwo..(n + 1) * co * hwo], hwo);
                    let rhs = View { data: &cols[n * hwo..], rs: 1, cs: ncol };
                    gemm(co, hwo, k, lhs, rhs, 1.0, &mut gw, k, 1);
                }
                gw
            });
            let gx = xc.requires_grad().then(|| {
                let mut dcols = vec![0.0; k * ncol];
                for n in 0..b {
                    let rhs = View::rows(&gout[n * co * hwo..(n + 1) * co * hwo], hwo);
                    gemm(k, co, hwo, View::t(wc.data(), k), rhs, 0.0, &mut dcols[n * hwo..], ncol, 1);
                }
                col2im(&dcols, &g)
            });
            vec![gx, gw, gb]
        }),
    ))
}

/// Depthwise NCHW convolution, stride 1, valid padding. Output map `o` reads
/// input map `o / multiplier`. `w` is `[ci·m, kh, kw]`, `b` is `[ci·m]`.
pub fn depthwise_conv2d(x: &Tensor, w: &Tensor, bias: &Tensor, multiplier: usize) -> Result<Tensor, NnError> {
    need_rank("depthwise_conv2d", x, 4)?;
    need_rank("depthwise_conv2d", w, 3)?;
    let (b, ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    if multiplier == 0 || co != ci * multiplier || bias.shape() != [co] || kh > h || kw > wd {
        return Err(shape_err(
            "depthwise_conv2d",
            format!("x {:?}, w {:?}, b {:?}, multiplier {multiplier}", x.shape(), w.shape(), bias.shape()),
        ));
    }
    let (ho, wo) = (h - kh + 1, wd - kw + 1);
    let mut out = vec![0.0; b * co * ho * wo];
    let xd = x.data();
    for n in 0..b {
        for o in 0..co {
            let src = &xd[(n * ci + o / multiplier) * h * wd..][..h * wd];
            let ker = &w.data()[o * kh * kw..][..kh * kw];
            let dst = &mut out[(n * co + o) * ho * wo..][..ho * wo];
            dst.fill(bias.data()[o]);
            for oh in 0..ho {
                for i in 0..kh {
                    for j in 0..kw {
                        let kv = ker[i * kw + j];
                        let s = &src[(oh + i) * wd + j..][..wo];
                        for (d, v) in dst[oh * wo..][..wo].iter_mut().zip(s) {
                            *d += kv * v;
                        }
                    }
                }
            }
        }
    }
    let (xc, wc, bc) = (x.clone(), w.clone(), bias.clone());
    Ok(Tensor::from_op(
        out,
        vec![b, co, ho, wo],
        "depthwise_conv2d",
        vec![x.clone(), w.clone(), bias.clone()],
        Box::new(move |g, _| {
            let mut gx = vec![0.0; b * ci * h * wd];
            let mut gw = vec![0.0; co * kh * kw];
            let mut gb = vec![0.0; co];
            let xd = xc.data();
            for n in 0..b {
                for o in 0..co {
                    let xoff = (n * ci + o / multiplier) * h * wd;
                    let gsl = &g[(n * co + o) * ho * wo..][..ho * wo];
                    gb[o] += gsl.iter().sum::<f64>();
                    for oh in 0..ho {
                        let grow = &gsl[oh * wo..][..wo];
                        for i in 0..kh {
                            for j in 0..kw {
                                let start = xoff + (oh + i) * wd + j;
                                let xs = &xd[start..][..wo];
                                gw[(o * kh + i) * kw + j] += grow.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>();
                                let kv = wc.data()[(o * kh + i) * kw + j];
                                for (d, gv) in gx[start..][..wo].iter_mut().zip(grow) {
                                    *d += kv * gv;
                                }
                            }
                        }
                    }
                }
            }
            vec![xc.requires_grad().then_some(gx), wc.requires_grad().then_some(gw), bc.requires_grad().then_some(gb)]
        }),
    ))
}

/// Non-overlapping average pooling over the last two axes of an NCHW tensor.
/// Trailing rows/columns that do not fill a pool are dropped.
pub fn avg_pool2d(x: &Tensor, pool: (usize, usize)) -> Result<Tensor, NnError> {
    need_rank("avg_pool2d", x, 4)?;
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (ph, pw) = pool;
    if ph == 0 || pw == 0 || ph > h || pw > w {
        return Err(shape_err("avg_pool2d", format!("pool {pool:?} for {:?}", x.shape())));
    }
    let (ho, wo) = (h / ph, w / pw);
    let inv = 1.0 / (ph * pw) as f64;
    let mut out = vec![0.0; b * c * ho * wo];
    for m in 0..b * c {
        let src = &x.data()[m * h * w..][..h * w];
        for oh in 0..ho {
            for ow in 0..wo {
                let mut s = 0.0;
                for i in 0..ph {
                    for j in 0..pw {
                        s += src[(oh * ph + i) * w + ow * pw + j];
                    }
                }
                out[(m * ho + oh) * wo + ow] = s * inv;
            }
        }
    }
    Ok(Tensor::from_op(
        out,
        vec![b, c, ho, wo],
        "avg_pool2d",
        vec![x.clone()],
        Box::new(move |g, _| {
            let mut gx = vec![0.0; b * c * h * w];
            for m in 0..b * c {
                for oh in 0..ho {
                    for ow in 0..wo {
                        let v = g[(m * ho + oh) * wo + ow] * inv;
                        for i in 0..ph {
                            for j in 0..pw {
                                gx[m * h * w + (oh * ph + i) * w + ow * pw + j] += v;
                            }
                        }
                    }
                }
            }
            vec![Some(gx)]
        }),
    ))
}

/// Dilated 1D convolution over time on `[n, t, ci]` with same padding
/// (total pad `d·(k−1)`, left half rounded down). `w` is `[k, ci, co]`.
pub fn conv1d(x: &Tensor, w: &Tensor, bias: &Tensor, dilation: usize) -> Result<Tensor, NnError> {
    need_rank("conv1d", x, 3)?;
    need_rank("conv1d", w, 3)?;
    let (n, t, ci) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (k, wci, co) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    if dilation == 0 || wci != ci || bias.shape() != [co] {
        return Err(shape_err("conv1d", format!("x {:?}, w {:?}, b {:?}, dilation {dilation}", x.shape(), w.shape(), bias.shape())));
    }
    let left = dilation * (k - 1) / 2;
    let kc = k * ci;
    let mut cols = vec![0.0; n * t * kc];
    for s in 0..n {
        for tt in 0..t {
            for j in 0..k {
                let src_t = (tt + j * dilation).wrapping_sub(left);
                if src_t < t {
                    let src = &x.data()[(s * t + src_t) * ci..][..ci];
                    cols[(s * t + tt) * kc + j * ci..][..ci].copy_from_slice(src);
                }
            }
        }
    }
    let mut out = Vec::with_capacity(n * t * co);
    for _ in 0..n * t {
        out.extend_from_slice(bias.data());
    }
    gemm(n * t, kc, co, View::rows(&cols, kc), View::rows(w.data(), co), 1.0, &mut out, co, 1);
    let (xc, wc, bc) = (x.clone(), w.clone(), bias.clone());
    Ok(Tensor::from_op(
        out,
        vec![n, t, co],
        "conv1d",
        vec![x.clone(), w.clone(), bias.clone()],
        Box::new(move |g, _| {
            let rows = n * t;
            let gb = bc.requires_grad().then(|| {
                let mut gb = vec![0.0; co];
                for r in g.chunks_exact(co) {
                    gb.iter_mut().zip(r).for_each(|(a, v)| *a += v);
                }
                gb
            });
            let gw = wc.requires_grad().then(|| {
                let mut gw = vec![0.0; kc * co];
                gemm(kc, rows, co, View::t(&cols, kc), View::rows(g, co), 0.0, &mut gw, co, 1);
                gw
            });
            let gx = xc.requires_grad().then(|| {
                let mut dcols = vec![0.0; rows * kc];
                gemm(rows, co, kc, View::rows(g, co), View::t(wc.data(), co), 0.0, &mut dcols, kc, 1);
                let mut gx = vec![0.0; n * t * ci];
                for s in 0..n {
                    for tt in 0..t {
                        for j in 0..k {
                            let src_t = (tt + j * dilation).wrapping_sub(left);
                            if src_t < t {
                                let d = &dcols[(s * t + tt) * kc + j * ci..][..ci];
                                gx[(s * t + src_t) * ci..][..ci].iter_mut().zip(d).for_each(|(a, v)| *a += v);
                            }
                        }
                    }
                }
                gx
            });
            vec![gx, gw, gb]
        }),
    ))
}

/// Attention probabilities `softmax(Q_h K_hᵀ / √d_h)` for every sequence and
/// head, laid out `[n, heads, t, t]`.
pub fn attention_weights(q: &[f64], k: &[f64], n: usize, t: usize, d: usize, heads: usize) -> Vec<f64> {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut p = vec![0.0; n * heads * t * t];
    for s in 0..n {
        for h in 0..heads {
            let blk = &mut p[(s * heads + h) * t * t..][..t * t];
            for i in 0..t {
                let qi = &q[(s * t + i) * d + h * dh..][..dh];
                for j in 0..t {
                    let kj = &k[(s * t + j) * d + h * dh..][..dh];
                    blk[i * t + j] = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                }
            }
            softmax_rows(blk, t);
        }
    }
    p
}

/// Scaled dot-product attention core on already projected `q, k, v` of shape
/// `[n, t, d]`, split into `heads` contiguous slices of the last axis. Heads
/// are concatenated back in order.
pub fn multi_head_attention(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize) -> Result<Tensor, NnError> {
    need_rank("attention", q, 3)?;
    let (n, t, d) = (q.shape()[0], q.shape()[1], q.shape()[2]);
    if k.shape() != q.shape() || v.shape() != q.shape() || heads == 0 || d % heads != 0 {
        return Err(shape_err("attention", format!("q {:?}, k {:?}, v {:?}, heads {heads}", q.shape(), k.shape(), v.shape())));
    }
    let dh = d / heads;
    let p = attention_weights(q.data(), k.data(), n, t, d, heads);
    let mut out = vec![0.0; n * t * d];
    let vd = v.data();
    for s in 0..n {
        for h in 0..heads {
            let blk = &p[(s * heads + h) * t * t..][..t * t];
            for i in 0..t {
                let o = &mut out[(s * t + i) * d + h * dh..][..dh];
                for j in 0..t {
                    let pij = blk[i * t + j];
                    let vj = &vd[(s * t + j) * d + h * dh..][..dh];
                    o.iter_mut().zip(vj).for_each(|(a, b)| *a += pij * b);
                }
            }
        }
    }
    let (qc, kc, vc) = (q.clone(), k.clone(), v.clone());
    Ok(Tensor::from_op(
        out,
        vec![n, t, d],
        "attention",
        vec![q.clone(), k.clone(), v.clone()],
        Box::new(move |g, _| {
            let scale = 1.0 / (dh as f64).sqrt();
            let (qd, kd, vd) = (qc.data(), kc.data(), vc.data());
            let mut gq = vec![0.0; n * t * d];
            let mut gk = vec![0.0; n * t * d];
            let mut gv = vec![0.0; n * t * d];
            let mut dp = vec![0.0; t * t];
            for s in 0..n {
                for h in 0..heads {
                    let blk = &p[(s * heads + h) * t * t..][..t * t];
                    let at = |i: usize| (s * t + i) * d + h * dh;
                    for i in 0..t {
                        let gi = &g[at(i)..][..dh];
                        for j in 0..t {
                            let vj = &vd[at(j)..][..dh];
                            dp[i * t + j] = gi.iter().zip(vj).map(|(a, b)| a * b).sum();
                            let pij = blk[i * t + j];
                            let off = at(j);
                            gv[off..off + dh].iter_mut().zip(gi).for_each(|(a, b)| *a += pij * b);
                        }
                    }
                    let ds = softmax_backward(&dp, blk, t);
                    for i in 0..t {
                        for j in 0..t {
                            let w = ds[i * t + j] * scale;
                            if w == 0.0 {
                                continue;
                            }
                            let (oi, oj) = (at(i), at(j));
                            for c in 0..dh {
                                gq[oi + c] += w * kd[oj + c];
                                gk[oj + c] += w * qd[oi + c];
                            }
                        }
                    }
                }
            }
            vec![qc.requires_grad().then_some(gq), kc.requires_grad().then_some(gk), vc.requires_grad().then_some(gv)]
        }),
    ))
}

/// Concatenates along the last axis; leading dims must agree.
pub fn concat_last(a: &Tensor, b: &Tensor) -> Result<Tensor, NnError> {
    let (ra, fa) = rows_last(a);
    let (rb, fb) = rows_last(b);
    let (sa, sb) = (a.shape(), b.shape());
    if sa.is_empty() || sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
        return Err(shape_err("concat_last", format!("{sa:?} and {sb:?}")));
    }
    debug_assert_eq!(ra, rb);
    let f = fa + fb;
    let mut out = Vec::with_capacity(ra * f);
    for r in 0..ra {
        out.extend_from_slice(&a.data()[r * fa..(r + 1) * fa]);
        out.extend_from_slice(&b.data()[r * fb..(r + 1) * fb]);
    }
    let mut shape = sa.to_vec();
    *shape.last_mut().unwrap() = f;
    Ok(Tensor::from_op(
        out,
        shape,
        "concat_last",
        vec![a.clone(), b.clone()],
        Box::new(move |g, _| {
            let mut ga = Vec::with_capacity(ra * fa);
            let mut gb = Vec::with_capacity(ra * fb);
            for row in g.chunks_exact(f) {
                ga.extend_from_slice(&row[..fa]);
                gb.extend_from_slice(&row[fa..]);
            }
            vec![Some(ga), Some(gb)]
        }),
    ))
}

/// Rows `start..start+len` along the first axis.
pub fn narrow_first(x: &Tensor, start: usize, len: usize) -> Result<Tensor, NnError> {
    let Some(&n0) = x.shape().first() else {
        return Err(shape_err("narrow_first", "scalar input".into()));
    };
    if len == 0 || start + len > n0 {
        return Err(shape_err("narrow_first", format!("{start}..{} of {:?}", start + len, x.shape())));
    }
    let inner = x.numel() / n0;
    let total = x.numel();
    let mut shape = x.shape().to_vec();
    shape[0] = len;
    Ok(Tensor::from_op(
        x.data()[start * inner..(start + len) * inner].to_vec(),
        shape,
        "narrow_first",
        vec![x.clone()],
        Box::new(move |g, _| {
            let mut gx = vec![0.0; total];
            gx[start * inner..(start + len) * inner].copy_from_slice(g);
            vec![Some(gx)]
        }),
    ))
}

/// Concatenates along the first axis; trailing dims must agree.
pub fn concat_first(parts: &[Tensor]) -> Result<Tensor, NnError> {
    let Some(first) = parts.first() else {
        return Err(shape_err("concat_first", "no inputs".into()));
    };
    let tail = &first.shape()[1.min(first.shape().len())..];
    if first.shape().is_empty() || parts.iter().any(|p| p.shape().len() != first.shape().len() || &p.shape()[1..] != tail) {
        let shapes: Vec<_> = parts.iter().map(|p| p.shape().to_vec()).collect();
        return Err(shape_err("concat_first", format!("{shapes:?}")));
    }
    let sizes: Vec<usize> = parts.iter().map(Tensor::numel).collect();
    let mut data = Vec::with_capacity(sizes.iter().sum());
    for p in parts {
        data.extend_from_slice(p.data());
    }
    let mut shape = first.shape().to_vec();
    shape[0] = parts.iter().map(|p| p.shape()[0]).sum();
    Ok(Tensor::from_op(
        data,
        shape,
        "concat_first",
        parts.to_vec(),
        Box::new(move |g, _| {
            let mut off = 0;
            sizes
                .iter()
                .map(|&n| {
                    let s = g[off..off + n].to_vec();
                    off += n;
                    Some(s)
                })
                .collect()
        }),
    ))
}
