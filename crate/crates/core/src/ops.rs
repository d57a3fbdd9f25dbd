//! Forward and backward kernels. Everything here is a pure function of its
//! arguments; the tape in [`crate::tape`] wires them together.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Label value excluded from cross-entropy.
pub const IGNORE_LABEL: i32 = -1;

/// Normalized loss value together with the number of contributing terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue<T = f32> {
    pub value: T,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub const fn new(stride: usize, padding: usize) -> Self {
        ConvGeometry { stride, padding }
    }

    pub fn output_dim(&self, input: usize, kernel: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        if self.stride == 0 || padded < kernel {
            return None;
        }
        Some((padded - kernel) / self.stride + 1)
    }
}

/// Range of output positions `o` with `0 <= o*stride + k - pad < input`.
#[inline]
fn valid_range(input: usize, output: usize, k: usize, geo: ConvGeometry) -> (usize, usize) {
    let (s, p) = (geo.stride as isize, geo.padding as isize);
    let k = k as isize;
    // first o with o*s + k - p >= 0
    let lo = if p > k { (p - k + s - 1) / s } else { 0 };
    // last o with o*s + k - p <= input - 1
    let top = input as isize - 1 + p - k;
    if top < 0 {
        return (0, 0);
    }
    let hi = (top / s + 1).min(output as isize);
    if lo >= hi {
        (0, 0)
    } else {
        (lo as usize, hi as usize)
    }
}

pub fn conv_output_shape(input: Shape, weight: Shape, geo: ConvGeometry) -> Result<Shape> {
    if input.c != weight.c {
        return Err(Error::Shape {
            op: "conv2d",
            left: input,
            right: weight,
        });
    }
    match (geo.output_dim(input.h, weight.h), geo.output_dim(input.w, weight.w)) {
        (Some(h), Some(w)) if h >= 1 && w >= 1 => Ok(Shape::new(input.n, weight.n, h, w)),
        _ => Err(Error::Shape {
            op: "conv2d",
            left: input,
            right: weight,
        }),
    }
}

/// Direct convolution. `weight` is `(C_out, C_in, K_h, K_w)`, `bias` holds
/// `C_out` values. Each output element accumulates over C_in, then K_h, then
/// K_w, and the bias is added last.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    geo: ConvGeometry,
) -> Result<Tensor<T>> {
    let is = input.shape();
    let ws = weight.shape();
    let os = conv_output_shape(is, ws, geo)?;
    if bias.len() != ws.n {
        return Err(Error::Shape {
            op: "conv2d bias",
            left: bias.shape(),
            right: ws,
        });
    }
    let mut out = Tensor::zeros(os);
    let x = input.data();
    let wd = weight.data();
    let s = geo.stride;
    let p = geo.padding;
    let in_plane = is.plane();
    let out_plane = os.plane();
    let out_data = out.data_mut();
    for n in 0..is.n {
        for co in 0..ws.n {
            let obase = (n * os.c + co) * out_plane;
            let oplane = &mut out_data[obase..obase + out_plane];
            for ci in 0..ws.c {
                let iplane = &x[(n * is.c + ci) * in_plane..(n * is.c + ci + 1) * in_plane];
                for kh in 0..ws.h {
                    let (oh0, oh1) = valid_range(is.h, os.h, kh, geo);
                    for kw in 0..ws.w {
                        let wv = wd[((co * ws.c + ci) * ws.h + kh) * ws.w + kw];
                        let (ow0, ow1) = valid_range(is.w, os.w, kw, geo);
                        if ow0 == ow1 {
                            continue;
                        }
                        for oh in oh0..oh1 {
                            let ih = oh * s + kh - p;
                            let irow = &iplane[ih * is.w..(ih + 1) * is.w];
                            let orow = &mut oplane[oh * os.w..(oh + 1) * os.w];
                            if s == 1 {
                                let shift = kw as isize - p as isize;
                                let src = &irow[(ow0 as isize + shift) as usize
                                    ..(ow1 as isize + shift) as usize];
                                for (o, &v) in orow[ow0..ow1].iter_mut().zip(src) {
                                    *o += wv * v;
                                }
                            } else {
                                for ow in ow0..ow1 {
                                    orow[ow] += wv * irow[ow * s + kw - p];
                                }
                            }
                        }
                    }
                }
            }
            let b = bias.data()[co];
            for o in oplane.iter_mut() {
                *o += b;
            }
        }
    }
    Ok(out)
}

/// Dot product with four interleaved partial sums combined in a fixed order.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for l in 0..4 {
            lanes[l] += a[4 * i + l] * b[4 * i + l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    geo: ConvGeometry,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let is = input.shape();
    let ws = weight.shape();
    let os = grad_out.shape();
    let mut gin = Tensor::zeros(is);
    let mut gw = Tensor::zeros(ws);
    let mut gb = Tensor::zeros(Shape::new(ws.n, 1, 1, 1));
    let x = input.data();
    let wd = weight.data();
    let g = grad_out.data();
    let s = geo.stride;
    let p = geo.padding;
    let in_plane = is.plane();
    let out_plane = os.plane();
    {
        let gbd = gb.data_mut();
        for n in 0..os.n {
            for co in 0..os.c {
                let base = (n * os.c + co) * out_plane;
                let mut acc = T::zero();
                for &v in &g[base..base + out_plane] {
                    acc += v;
                }
                gbd[co] += acc;
            }
        }
    }
    let gind = gin.data_mut();
    let gwd = gw.data_mut();
    for n in 0..is.n {
        for co in 0..ws.n {
            let gplane = &g[(n * os.c + co) * out_plane..(n * os.c + co + 1) * out_plane];
            for ci in 0..ws.c {
                let ibase = (n * is.c + ci) * in_plane;
                for kh in 0..ws.h {
                    let (oh0, oh1) = valid_range(is.h, os.h, kh, geo);
                    for kw in 0..ws.w {
                        let widx = ((co * ws.c + ci) * ws.h + kh) * ws.w + kw;
                        let wv = wd[widx];
                        let (ow0, ow1) = valid_range(is.w, os.w, kw, geo);
                        if ow0 == ow1 {
                            continue;
                        }
                        let mut acc = T::zero();
                        for oh in oh0..oh1 {
                            let ih = oh * s + kh - p;
                            let grow = &gplane[oh * os.w..(oh + 1) * os.w];
                            let row = ibase + ih * is.w;
                            if s == 1 {
                                let lo = row + ow0 + kw - p;
                                let hi = row + ow1 + kw - p;
                                let gs = &grow[ow0..ow1];
                                acc += dot(gs, &x[lo..hi]);
                                for (gi, &gv) in gind[lo..hi].iter_mut().zip(gs) {
                                    *gi += gv * wv;
                                }
                            } else {
                                for ow in ow0..ow1 {
                                    let iw = ow * s + kw - p;
                                    let gv = grow[ow];
                                    acc += gv * x[row + iw];
                                    gind[row + iw] += gv * wv;
                                }
                            }
                        }
                        gwd[widx] += acc;
                    }
                }
            }
        }
    }
    (gin, gw, gb)
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let data = input
        .data()
        .iter()
        .map(|&v| if v > T::zero() { v } else { T::zero() })
        .collect();
    Tensor::from_vec(input.shape(), data).expect("same shape")
}

/// Upstream gradient masked to positions where the forward input was positive.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(input.shape(), data).expect("same shape")
}

/// 2x2 max pooling with stride 2. Returns the pooled tensor and, for every
/// output element, the flat input index it was taken from. Ties resolve to
/// the first position in row-major window order.
pub fn maxpool2x2<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let is = input.shape();
    if is.h % 2 != 0 || is.w % 2 != 0 || is.h == 0 || is.w == 0 {
        return Err(Error::config(format!(
            "max-pool needs even, non-zero spatial dims, got {is}"
        )));
    }
    let os = Shape::new(is.n, is.c, is.h / 2, is.w / 2);
    let mut out = Tensor::zeros(os);
    let mut argmax = vec![0usize; os.len()];
    let x = input.data();
    let od = out.data_mut();
    let mut o = 0;
    for nc in 0..is.n * is.c {
        let base = nc * is.plane();
        for oh in 0..os.h {
            for ow in 0..os.w {
                let mut best = base + (2 * oh) * is.w + 2 * ow;
                for (dh, dw) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oh + dh) * is.w + 2 * ow + dw;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                od[o] = x[best];
                argmax[o] = best;
                o += 1;
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool2x2_backward<T: Scalar>(
    input_shape: Shape,
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let mut gin = Tensor::zeros(input_shape);
    let gd = gin.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        gd[idx] += g;
    }
    gin
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op: "add",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::from_vec(a.shape(), data)
}

/// Multiplies every channel `c` of `input` by `scale[c]`.
pub fn channel_scale<T: Scalar>(input: &Tensor<T>, scale: &Tensor<T>) -> Result<Tensor<T>> {
    let is = input.shape();
    if scale.len() != is.c {
        return Err(Error::Shape {
            op: "channel_scale",
            left: is,
            right: scale.shape(),
        });
    }
    let plane = is.plane();
    let mut out = input.clone();
    for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        let s = scale.data()[i % is.c];
        for v in chunk {
            *v = s * *v;
        }
    }
    Ok(out)
}

pub fn channel_scale_backward<T: Scalar>(
    input: &Tensor<T>,
    scale: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let is = input.shape();
    let plane = is.plane();
    let mut gin = Tensor::zeros(is);
    let mut gs = Tensor::zeros(scale.shape());
    for (i, (gchunk, xchunk)) in grad_out
        .data()
        .chunks(plane)
        .zip(input.data().chunks(plane))
        .enumerate()
    {
        let c = i % is.c;
        let s = scale.data()[c];
        let mut acc = T::zero();
        for (&g, &x) in gchunk.iter().zip(xchunk) {
            acc += g * x;
        }
        gs.data_mut()[c] += acc;
        for (o, &g) in gin.data_mut()[i * plane..(i + 1) * plane]
            .iter_mut()
            .zip(gchunk)
        {
            *o = s * g;
        }
    }
    (gin, gs)
}

/// Source index pair and weights for one output coordinate of a bilinear
/// resize (half-pixel centers, edge clamped).
fn bilinear_taps(out_len: usize, in_len: usize, factor: usize) -> Vec<(usize, usize, f64, f64)> {
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            let frac = src - i0 as f64;
            let frac = if i0 == i1 { 0.0 } else { frac };
            (i0, i1, 1.0 - frac, frac)
        })
        .collect()
}

/// Bilinear upsampling by an integer factor.
pub fn upsample_bilinear<T: Scalar>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let is = input.shape();
    if factor == 0 || is.h == 0 || is.w == 0 {
        return Err(Error::config(format!(
            "cannot upsample {is} by factor {factor}"
        )));
    }
    let os = Shape::new(is.n, is.c, is.h * factor, is.w * factor);
    let rows = bilinear_taps(os.h, is.h, factor);
    let cols = bilinear_taps(os.w, is.w, factor);
    let mut out = Tensor::zeros(os);
    let x = input.data();
    let od = out.data_mut();
    for nc in 0..is.n * is.c {
        let ib = nc * is.plane();
        let ob = nc * os.plane();
        for (oh, &(r0, r1, wr0, wr1)) in rows.iter().enumerate() {
            let (wr0, wr1) = (T::from_f64(wr0), T::from_f64(wr1));
            for (ow, &(c0, c1, wc0, wc1)) in cols.iter().enumerate() {
                let (wc0, wc1) = (T::from_f64(wc0), T::from_f64(wc1));
                let top = wc0 * x[ib + r0 * is.w + c0] + wc1 * x[ib + r0 * is.w + c1];
                let bot = wc0 * x[ib + r1 * is.w + c0] + wc1 * x[ib + r1 * is.w + c1];
                od[ob + oh * os.w + ow] = wr0 * top + wr1 * bot;
            }
        }
    }
    Ok(out)
}

pub fn upsample_bilinear_backward<T: Scalar>(
    input_shape: Shape,
    factor: usize,
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let is = input_shape;
    let os = grad_out.shape();
    let rows = bilinear_taps(os.h, is.h, factor);
    let cols = bilinear_taps(os.w, is.w, factor);
    let mut gin = Tensor::zeros(is);
    let g = grad_out.data();
    let gd = gin.data_mut();
    for nc in 0..is.n * is.c {
        let ib = nc * is.plane();
        let ob = nc * os.plane();
        for (oh, &(r0, r1, wr0, wr1)) in rows.iter().enumerate() {
            let (wr0, wr1) = (T::from_f64(wr0), T::from_f64(wr1));
            for (ow, &(c0, c1, wc0, wc1)) in cols.iter().enumerate() {
                let (wc0, wc1) = (T::from_f64(wc0), T::from_f64(wc1));
                let gv = g[ob + oh * os.w + ow];
                let top = wr0 * gv;
                let bot = wr1 * gv;
                gd[ib + r0 * is.w + c0] += wc0 * top;
                gd[ib + r0 * is.w + c1] += wc1 * top;
                gd[ib + r1 * is.w + c0] += wc0 * bot;
                gd[ib + r1 * is.w + c1] += wc1 * bot;
            }
        }
    }
    gin
}

/// Mean softmax cross-entropy over all non-ignored positions, plus the
/// gradient of that mean with respect to `logits`.
///
/// `labels` holds one entry per (n, h, w) position in row-major order.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[i32],
    ignore_label: i32,
) -> Result<(LossValue<T>, Tensor<T>)> {
    let s = logits.shape();
    if labels.len() != s.n * s.plane() {
        return Err(Error::config(format!(
            "label map has {} entries, logits {s} need {}",
            labels.len(),
            s.n * s.plane()
        )));
    }
    let plane = s.plane();
    let x = logits.data();
    let mut grad = Tensor::zeros(s);
    let mut total = 0.0f64;
    let mut count = 0usize;
    let mut probs = vec![T::zero(); s.c];
    for n in 0..s.n {
        for pos in 0..plane {
            let label = labels[n * plane + pos];
            if label == ignore_label {
                continue;
            }
            if label < 0 || label as usize >= s.c {
                return Err(Error::data(format!(
                    "label {label} out of range for {} classes",
                    s.c
                )));
            }
            let at = |c: usize| (n * s.c + c) * plane + pos;
            let mut max = x[at(0)];
            for c in 1..s.c {
                max = max.max(x[at(c)]);
            }
            let mut denom = T::zero();
            for (c, p) in probs.iter_mut().enumerate() {
                *p = (x[at(c)] - max).exp();
                denom += *p;
            }
            let lse = max + denom.ln();
            total += (lse - x[at(label as usize)]).as_f64();
            for (c, p) in probs.iter().enumerate() {
                grad.data_mut()[at(c)] = *p / denom;
            }
            grad.data_mut()[at(label as usize)] -= T::one();
            count += 1;
        }
    }
    if count == 0 {
        return Ok((
            LossValue {
                value: T::zero(),
                count: 0,
            },
            grad,
        ));
    }
    let inv = T::from_f64(1.0 / count as f64);
    for g in grad.data_mut() {
        *g *= inv;
    }
    Ok((
        LossValue {
            value: T::from_f64(total / count as f64),
            count,
        },
        grad,
    ))
}

/// Smooth-L1 (Huber with unit transition) averaged over masked elements,
/// plus its gradient with respect to `pred`.
pub fn smooth_l1<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    mask: &Tensor<T>,
) -> Result<(LossValue<T>, Tensor<T>)> {
    for other in [target, mask] {
        if other.shape() != pred.shape() {
            return Err(Error::Shape {
                op: "smooth_l1",
                left: pred.shape(),
                right: other.shape(),
            });
        }
    }
    let mut grad = Tensor::zeros(pred.shape());
    let mut total = 0.0f64;
    let mut count = 0usize;
    let half = T::from_f64(0.5);
    for (i, ((&p, &t), &m)) in pred
        .data()
        .iter()
        .zip(target.data())
        .zip(mask.data())
        .enumerate()
    {
        if m == T::zero() {
            continue;
        }
        let d = p - t;
        let (loss, slope) = if d.abs() < T::one() {
            (half * d * d, d)
        } else {
            (d.abs() - half, d.signum())
        };
        total += loss.as_f64();
        grad.data_mut()[i] = slope;
        count += 1;
    }
    if count == 0 {
        return Ok((
            LossValue {
                value: T::zero(),
                count: 0,
            },
            grad,
        ));
    }
    let inv = T::from_f64(1.0 / count as f64);
    for g in grad.data_mut() {
        *g *= inv;
    }
    Ok((
        LossValue {
            value: T::from_f64(total / count as f64),
            count,
        },
        grad,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padded_kernel_wider_than_input() {
        let x = Tensor::<f64>::filled(Shape::new(1, 1, 1, 1), 2.0);
        let w = Tensor::filled(Shape::new(1, 1, 3, 3), 1.0);
        let b = Tensor::zeros(Shape::new(1, 1, 1, 1));
        let y = conv2d(&x, &w, &b, ConvGeometry::new(1, 1)).unwrap();
        assert_eq!(y.data(), &[2.0]);
        let (gin, gw, _) = conv2d_backward(&x, &w, &Tensor::filled(y.shape(), 1.0), ConvGeometry::new(1, 1));
        assert_eq!(gin.data(), &[1.0]);
        assert_eq!(gw.data().iter().sum::<f64>(), 2.0);
    }

    fn t(shape: Shape, data: &[f32]) -> Tensor<f32> {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn identity_1x1_conv_is_exact() {
        let shape = Shape::new(2, 3, 4, 5);
        let input = Tensor::from_vec(
            shape,
            (0..shape.len()).map(|i| (i as f32 * 0.37).sin()).collect(),
        )
        .unwrap();
        let mut w = Tensor::zeros(Shape::new(3, 3, 1, 1));
        for c in 0..3 {
            w.data_mut()[c * 3 + c] = 1.0;
        }
        let b = Tensor::zeros(Shape::new(3, 1, 1, 1));
        let out = conv2d(&input, &w, &b, ConvGeometry::new(1, 0)).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn all_ones_3x3_counts_neighbours() {
        let input = Tensor::filled(Shape::new(1, 1, 4, 4), 1.0f32);
        let w = Tensor::filled(Shape::new(1, 1, 3, 3), 1.0f32);
        let b = Tensor::zeros(Shape::new(1, 1, 1, 1));
        let out = conv2d(&input, &w, &b, ConvGeometry::new(1, 1)).unwrap();
        #[rustfmt::skip]
        let expected = [
            4.0, 6.0, 6.0, 4.0,
            6.0, 9.0, 9.0, 6.0,
            6.0, 9.0, 9.0, 6.0,
            4.0, 6.0, 6.0, 4.0,
        ];
        assert_eq!(out.data(), &expected);
    }

    #[test]
    fn strided_conv_shape() {
        let input = Tensor::<f32>::zeros(Shape::new(1, 3, 8, 8));
        let w = Tensor::zeros(Shape::new(5, 3, 3, 3));
        let b = Tensor::zeros(Shape::new(5, 1, 1, 1));
        let out = conv2d(&input, &w, &b, ConvGeometry::new(2, 0)).unwrap();
        assert_eq!(out.shape(), Shape::new(1, 5, 3, 3));
    }

    #[test]
    fn strided_padded_conv_matches_naive() {
        let input = Tensor::from_vec(
            Shape::new(1, 2, 5, 7),
            (0..70).map(|i| ((i * 7919) % 13) as f32 - 6.0).collect(),
        )
        .unwrap();
        let w = Tensor::from_vec(
            Shape::new(3, 2, 3, 3),
            (0..54).map(|i| ((i * 31) % 7) as f32 - 3.0).collect(),
        )
        .unwrap();
        let b = t(Shape::new(3, 1, 1, 1), &[0.5, -1.0, 2.0]);
        let geo = ConvGeometry::new(2, 1);
        let out = conv2d(&input, &w, &b, geo).unwrap();
        let os = out.shape();
        for co in 0..3 {
            for oh in 0..os.h {
                for ow in 0..os.w {
                    let mut acc = 0.0f32;
                    for ci in 0..2 {
                        for kh in 0..3 {
                            for kw in 0..3 {
                                let ih = (oh * 2 + kh) as isize - 1;
                                let iw = (ow * 2 + kw) as isize - 1;
                                if ih < 0 || iw < 0 || ih >= 5 || iw >= 7 {
                                    continue;
                                }
                                acc += w.at(co, ci, kh, kw)
                                    * input.at(0, ci, ih as usize, iw as usize);
                            }
                        }
                    }
                    assert_eq!(out.at(0, co, oh, ow), acc + b.data()[co]);
                }
            }
        }
    }

    #[test]
    fn conv_channel_mismatch_names_both_shapes() {
        let input = Tensor::<f32>::zeros(Shape::new(1, 2, 4, 4));
        let w = Tensor::zeros(Shape::new(1, 3, 3, 3));
        let b = Tensor::zeros(Shape::new(1, 1, 1, 1));
        let err = conv2d(&input, &w, &b, ConvGeometry::new(1, 1)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("1x2x4x4") && msg.contains("1x3x3x3"), "{msg}");
    }

    #[test]
    fn relu_forward_backward() {
        let x = t(Shape::new(1, 1, 1, 3), &[-1.0, 0.0, 2.0]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let neg = t(Shape::new(1, 1, 1, 3), &[-1.0, -2.0, -0.5]);
        let g = relu_backward(&neg, &Tensor::filled(neg.shape(), 1.0));
        assert!(g.data().iter().all(|&v| v == 0.0));
        let three = t(Shape::new(1, 1, 1, 1), &[3.0]);
        let g = relu_backward(&three, &t(Shape::new(1, 1, 1, 1), &[0.5]));
        assert_eq!(g.data(), &[0.5]);
    }

    #[test]
    fn maxpool_cases() {
        let x = t(Shape::new(1, 1, 2, 2), &[1.0, 2.0, 3.0, 4.0]);
        let (y, _) = maxpool2x2(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);

        let c = Tensor::filled(Shape::new(1, 2, 4, 6), 7.5f32);
        let (y, _) = maxpool2x2(&c).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 2, 2, 3));
        assert!(y.data().iter().all(|&v| v == 7.5));

        let tie = t(Shape::new(1, 1, 2, 2), &[5.0, 5.0, 5.0, 5.0]);
        let (y, arg) = maxpool2x2(&tie).unwrap();
        assert_eq!(y.data(), &[5.0]);
        let g = maxpool2x2_backward(tie.shape(), &arg, &t(Shape::scalar(), &[1.0]));
        assert_eq!(g.data(), &[1.0, 0.0, 0.0, 0.0]);

        assert!(maxpool2x2(&Tensor::<f32>::zeros(Shape::new(1, 1, 3, 2))).is_err());
    }

    #[test]
    fn add_cases() {
        let a = t(Shape::new(1, 1, 1, 2), &[1.0, 2.0]);
        let b = t(Shape::new(1, 1, 1, 2), &[3.0, 4.0]);
        assert_eq!(add(&a, &b).unwrap().data(), &[4.0, 6.0]);
        assert_eq!(add(&a, &Tensor::zeros(a.shape())).unwrap(), a);
        assert!(add(&a, &Tensor::zeros(Shape::new(1, 1, 2, 1))).is_err());
    }

    #[test]
    fn cross_entropy_cases() {
        let uniform = Tensor::<f64>::zeros(Shape::new(1, 4, 2, 3));
        let (loss, _) = softmax_cross_entropy(&uniform, &[0, 1, 2, 3, 0, 1], IGNORE_LABEL).unwrap();
        assert!((loss.value - 4f64.ln()).abs() < 1e-12);
        assert_eq!(loss.count, 6);

        let mut confident = Tensor::<f32>::zeros(Shape::new(1, 3, 1, 1));
        confident.data_mut()[2] = 1000.0;
        let (loss, _) = softmax_cross_entropy(&confident, &[2], IGNORE_LABEL).unwrap();
        assert!(loss.value.abs() < 1e-6);

        let (loss, grad) =
            softmax_cross_entropy(&uniform, &[IGNORE_LABEL; 6], IGNORE_LABEL).unwrap();
        assert_eq!(loss, LossValue { value: 0.0, count: 0 });
        assert!(grad.data().iter().all(|&g| g == 0.0));

        let err = softmax_cross_entropy(&uniform, &[4, 0, 0, 0, 0, 0], IGNORE_LABEL).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn smooth_l1_cases() {
        let s = Shape::new(1, 1, 1, 1);
        let zero = Tensor::<f64>::zeros(s);
        let one = Tensor::filled(s, 1.0);
        for (d, expected) in [(0.0, 0.0), (0.5, 0.125), (2.0, 1.5)] {
            let (loss, _) = smooth_l1(&Tensor::filled(s, d), &zero, &one).unwrap();
            assert_eq!(loss.value, expected);
        }
        let (loss, _) = smooth_l1(&Tensor::filled(s, 3.0), &zero, &zero).unwrap();
        assert_eq!(loss, LossValue { value: 0.0, count: 0 });
        assert!(smooth_l1(&zero, &Tensor::zeros(Shape::new(2, 1, 1, 1)), &one).is_err());
    }

    #[test]
    fn bilinear_upsample_preserves_constants() {
        let x = Tensor::filled(Shape::new(1, 2, 3, 2), 0.25f64);
        let y = upsample_bilinear(&x, 4).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 2, 12, 8));
        assert!(y.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }
}
