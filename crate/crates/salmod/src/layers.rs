//! Numeric kernels for every network operation: forward passes and
//! hand-derived backward passes over plain tensors.
//!
//! The autodiff tape (`tape` module) delegates here; keeping the math as free
//! functions makes each derivative testable against finite differences in
//! isolation. Feature maps are `[C, H, W]`, convolution weights are
//! `[out_c, in_c, kh, kw]`, fully-connected weights are `[out, in]`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Geometry of a 2-D convolution (weights live elsewhere).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_channels: usize,
    pub out_channels: usize,
    /// (kernel_h, kernel_w)
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> ConvGeom {
        ConvGeom {
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            stride,
            padding,
        }
    }

    /// Number of weight elements (`out_c * in_c * kh * kw`).
    pub fn weight_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel.0 * self.kernel.1
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel.0, self.kernel.1]
    }

    /// Output spatial size for an input of `(h, w)`; errors when the kernel
    /// does not fit even once.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel;
        if self.stride == 0 {
            return Err(Error::shape("convolution stride must be >= 1"));
        }
        let hp = h + 2 * self.padding;
        let wp = w + 2 * self.padding;
        if hp < kh || wp < kw {
            return Err(Error::shape(format!(
                "conv kernel {}x{} does not fit padded input {}x{}",
                kh, kw, hp, wp
            )));
        }
        Ok(((hp - kh) / self.stride + 1, (wp - kw) / self.stride + 1))
    }
}

/// Copy `[C, H, W]` into a zero-padded `[C, H + 2p, W + 2p]` buffer.
fn pad3(x: &Tensor, c: usize, h: usize, w: usize, p: usize) -> Vec<f64> {
    if p == 0 {
        return x.data().to_vec();
    }
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let mut out = vec![0.0; c * hp * wp];
    let src = x.data();
    for ch in 0..c {
        for row in 0..h {
            let s = (ch * h + row) * w;
            let d = (ch * hp + row + p) * wp + p;
            out[d..d + w].copy_from_slice(&src[s..s + w]);
        }
    }
    out
}

fn check_conv_shapes(x: &Tensor, weight: &Tensor, bias: &Tensor, geom: &ConvGeom) -> Result<(usize, usize)> {
    let xs = x.shape();
    if xs.len() != 3 {
        return Err(Error::shape(format!("conv input must be [C,H,W], got {:?}", xs)));
    }
    if xs[0] != geom.in_channels {
        return Err(Error::shape(format!(
            "conv expects {} input channels, image has {}",
            geom.in_channels, xs[0]
        )));
    }
    if weight.shape() != geom.weight_shape() {
        return Err(Error::shape(format!(
            "conv weight shape {:?} does not match geometry {:?}",
            weight.shape(),
            geom.weight_shape()
        )));
    }
    if bias.shape() != [geom.out_channels] {
        return Err(Error::shape(format!(
            "conv bias shape {:?} does not match {} output channels",
            bias.shape(),
            geom.out_channels
        )));
    }
    geom.output_size(xs[1], xs[2])
}

/// out[o, oh, ow] = bias[o] + sum over (c, kh, kw) of w[o,c,kh,kw] * xp[c, oh*s+kh, ow*s+kw]
///
/// The loops are arranged so the innermost walk is contiguous in both input
/// and output rows; per output cell the accumulation order is (c, kh, kw),
/// the same as the textbook sextuple loop.
pub fn conv2d_forward(x: &Tensor, weight: &Tensor, bias: &Tensor, geom: &ConvGeom) -> Result<Tensor> {
    let (oh_n, ow_n) = check_conv_shapes(x, weight, bias, geom)?;
    let (c_n, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (kh_n, kw_n) = geom.kernel;
    let (s, p) = (geom.stride, geom.padding);
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let xp = pad3(x, c_n, h, w, p);
    let wd = weight.data();
    let bd = bias.data();

    let mut out = vec![0.0; geom.out_channels * oh_n * ow_n];
    for o in 0..geom.out_channels {
        let plane = &mut out[o * oh_n * ow_n..(o + 1) * oh_n * ow_n];
        plane.fill(bd[o]);
        for c in 0..c_n {
            for kh in 0..kh_n {
                for kw in 0..kw_n {
                    let wv = wd[((o * c_n + c) * kh_n + kh) * kw_n + kw];
                    for oh in 0..oh_n {
                        let xrow = &xp[(c * hp + oh * s + kh) * wp + kw..];
                        let orow = &mut plane[oh * ow_n..(oh + 1) * ow_n];
                        if s == 1 {
                            for (ov, xv) in orow.iter_mut().zip(&xrow[..ow_n]) {
                                *ov += wv * xv;
                            }
                        } else {
                            for (ow, ov) in orow.iter_mut().enumerate() {
                                *ov += wv * xrow[ow * s];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[geom.out_channels, oh_n, ow_n], out)
}

/// Gradients of `conv2d_forward` w.r.t. input, weight, and bias.
pub fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    geom: &ConvGeom,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (c_n, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (oh_n, ow_n) = (grad_out.shape()[1], grad_out.shape()[2]);
    let (kh_n, kw_n) = geom.kernel;
    let (s, p) = (geom.stride, geom.padding);
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let xp = pad3(x, c_n, h, w, p);
    let wd = weight.data();
    let gd = grad_out.data();

    let mut d_xp = vec![0.0; c_n * hp * wp];
    let mut d_w = vec![0.0; weight.numel()];
    let mut d_b = vec![0.0; geom.out_channels];

    for o in 0..geom.out_channels {
        let gplane = &gd[o * oh_n * ow_n..(o + 1) * oh_n * ow_n];
        // db[o] = sum of the upstream plane
        d_b[o] += gplane.iter().sum::<f64>();
        for c in 0..c_n {
            for kh in 0..kh_n {
                for kw in 0..kw_n {
                    let widx = ((o * c_n + c) * kh_n + kh) * kw_n + kw;
                    let wv = wd[widx];
                    let mut wsum = 0.0;
                    for oh in 0..oh_n {
                        let base = (c * hp + oh * s + kh) * wp + kw;
                        let grow = &gplane[oh * ow_n..(oh + 1) * ow_n];
                        if s == 1 {
                            let xrow = &xp[base..base + ow_n];
                            let drow = &mut d_xp[base..base + ow_n];
                            for i in 0..ow_n {
                                wsum += xrow[i] * grow[i];
                                drow[i] += wv * grow[i];
                            }
                        } else {
                            for (ow, &gv) in grow.iter().enumerate() {
                                wsum += xp[base + ow * s] * gv;
                                d_xp[base + ow * s] += wv * gv;
                            }
                        }
                    }
                    d_w[widx] += wsum;
                }
            }
        }
    }

    // Crop the padded input gradient back to [C, H, W].
    let d_x = if p == 0 {
        d_xp
    } else {
        let mut out = vec![0.0; c_n * h * w];
        for c in 0..c_n {
            for row in 0..h {
                let s_off = (c * hp + row + p) * wp + p;
                let d_off = (c * h + row) * w;
                out[d_off..d_off + w].copy_from_slice(&d_xp[s_off..s_off + w]);
            }
        }
        out
    };

    Ok((
        Tensor::from_vec(&[c_n, h, w], d_x)?,
        Tensor::from_vec(&geom.weight_shape(), d_w)?,
        Tensor::from_vec(&[geom.out_channels], d_b)?,
    ))
}

/// Max pooling over `[C, H, W]`. Returns the pooled map and, per output cell,
/// the flat input index of the selected maximum (first index in row-major
/// window order on ties).
pub fn maxpool2d_forward(
    x: &Tensor,
    window: (usize, usize),
    stride: usize,
) -> Result<(Tensor, Vec<usize>)> {
    let xs = x.shape();
    if xs.len() != 3 {
        return Err(Error::shape(format!("maxpool input must be [C,H,W], got {:?}", xs)));
    }
    let (c_n, h, w) = (xs[0], xs[1], xs[2]);
    let (wh, ww) = window;
    if wh == 0 || ww == 0 || stride == 0 {
        return Err(Error::shape("maxpool window and stride must be >= 1"));
    }
    if wh > h || ww > w {
        return Err(Error::shape(format!(
            "maxpool window {}x{} larger than input {}x{}",
            wh, ww, h, w
        )));
    }
    let oh_n = (h - wh) / stride + 1;
    let ow_n = (w - ww) / stride + 1;
    let xd = x.data();
    let mut out = vec![0.0; c_n * oh_n * ow_n];
    let mut argmax = vec![0usize; c_n * oh_n * ow_n];
    for c in 0..c_n {
        for oh in 0..oh_n {
            for ow in 0..ow_n {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0usize;
                for kh in 0..wh {
                    let row = (c * h + oh * stride + kh) * w + ow * stride;
                    for kw in 0..ww {
                        let v = xd[row + kw];
                        // strict > keeps the first (row-major) max on ties
                        if v > best {
                            best = v;
                            best_idx = row + kw;
                        }
                    }
                }
                let off = (c * oh_n + oh) * ow_n + ow;
                out[off] = best;
                argmax[off] = best_idx;
            }
        }
    }
    Ok((Tensor::from_vec(&[c_n, oh_n, ow_n], out)?, argmax))
}

/// Routes each upstream cell back to the input element that won the max.
pub fn maxpool2d_backward(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let mut d_x = Tensor::zeros(input_shape);
    let dd = d_x.data_mut();
    for (&src, &g) in argmax.iter().zip(grad_out.data()) {
        dd[src] += g;
    }
    Ok(d_x)
}

/// max(x, 0) elementwise.
pub fn relu_forward(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

/// d relu = upstream where x > 0, else 0 (subgradient 0 at exactly 0).
pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

/// Numerically stable logistic sigmoid, elementwise.
pub fn sigmoid_forward(x: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .map(|&v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        })
        .collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

/// d sigmoid = upstream * y * (1 - y), using the stored output y.
pub fn sigmoid_backward(y: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = y
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&yv, &g)| g * yv * (1.0 - yv))
        .collect();
    Tensor::from_vec(y.shape(), data).expect("same shape")
}

fn check_fc_shapes(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<(usize, usize)> {
    let ws = weight.shape();
    if ws.len() != 2 {
        return Err(Error::shape(format!("fc weight must be [out,in], got {:?}", ws)));
    }
    let (out_n, in_n) = (ws[0], ws[1]);
    if x.numel() != in_n {
        return Err(Error::shape(format!(
            "fc expects {} inputs, tensor {:?} has {}",
            in_n,
            x.shape(),
            x.numel()
        )));
    }
    if bias.shape() != [out_n] {
        return Err(Error::shape(format!(
            "fc bias shape {:?} does not match {} outputs",
            bias.shape(),
            out_n
        )));
    }
    Ok((out_n, in_n))
}

/// y = W x + b, flattening the input row-major. Output shape `[out]`.
pub fn fully_connected_forward(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (out_n, in_n) = check_fc_shapes(x, weight, bias)?;
    let xd = x.data();
    let wd = weight.data();
    let mut y = bias.data().to_vec();
    for (o, yo) in y.iter_mut().enumerate() {
        let row = &wd[o * in_n..(o + 1) * in_n];
        let mut acc = 0.0;
        for i in 0..in_n {
            acc += row[i] * xd[i];
        }
        *yo += acc;
    }
    Tensor::from_vec(&[out_n], y)
}

/// dx = W^T g (reshaped to the input's shape), dW = g x^T, db = g.
pub fn fully_connected_backward(
    x: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let ws = weight.shape();
    let (out_n, in_n) = (ws[0], ws[1]);
    let xd = x.data();
    let wd = weight.data();
    let gd = grad_out.data();
    let mut d_x = vec![0.0; in_n];
    let mut d_w = vec![0.0; out_n * in_n];
    for o in 0..out_n {
        let g = gd[o];
        let row = &wd[o * in_n..(o + 1) * in_n];
        let drow = &mut d_w[o * in_n..(o + 1) * in_n];
        for i in 0..in_n {
            d_x[i] += row[i] * g;
            drow[i] = xd[i] * g;
        }
    }
    Ok((
        Tensor::from_vec(x.shape(), d_x)?,
        Tensor::from_vec(&[out_n, in_n], d_w)?,
        Tensor::from_vec(&[out_n], gd.to_vec())?,
    ))
}

/// Softmax + cross-entropy in one stable step.
/// loss = log(sum_j exp(z_j - max)) + max - z_label; also returns softmax probs.
pub fn softmax_cross_entropy_forward(logits: &Tensor, label: usize) -> Result<(f64, Vec<f64>)> {
    if logits.rank() != 1 {
        return Err(Error::shape(format!(
            "cross-entropy expects a logit vector, got {:?}",
            logits.shape()
        )));
    }
    let z = logits.data();
    if label >= z.len() {
        return Err(Error::shape(format!(
            "label {} out of range for {} classes",
            label,
            z.len()
        )));
    }
    let m = z.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut sum = 0.0;
    let mut probs = vec![0.0; z.len()];
    for (p, &v) in probs.iter_mut().zip(z) {
        *p = (v - m).exp();
        sum += *p;
    }
    for p in probs.iter_mut() {
        *p /= sum;
    }
    let loss = sum.ln() + m - z[label];
    Ok((loss, probs))
}

/// d logits = (probs - onehot(label)) * upstream.
pub fn softmax_cross_entropy_backward(probs: &[f64], label: usize, upstream: f64) -> Tensor {
    let mut d: Vec<f64> = probs.iter().map(|&p| p * upstream).collect();
    d[label] -= upstream;
    Tensor::from_vec(&[probs.len()], d).expect("same shape")
}

/// Multiplicative gating of a feature stack by a scalar modulation image:
/// out[c,x,y] = features[c,x,y] * m(x,y), with m = modulation (skip = false)
/// or m = modulation + 1 (skip = true, so a zero map is the identity).
pub fn modulate_forward(features: &Tensor, modulation: &Tensor, skip: bool) -> Result<Tensor> {
    check_modulate_shapes(features, modulation)?;
    #[cfg(debug_assertions)]
    for &m in modulation.data() {
        assert!(
            (0.0..=1.0).contains(&m),
            "modulation value {} outside [0,1]",
            m
        );
    }
    let (c_n, hw) = (features.shape()[0], modulation.numel());
    let fd = features.data();
    let md = modulation.data();
    let mut out = vec![0.0; fd.len()];
    let offset = if skip { 1.0 } else { 0.0 };
    for c in 0..c_n {
        let f = &fd[c * hw..(c + 1) * hw];
        let o = &mut out[c * hw..(c + 1) * hw];
        for i in 0..hw {
            o[i] = f[i] * (md[i] + offset);
        }
    }
    Tensor::from_vec(features.shape(), out)
}

/// d features = upstream * (m + skip); d modulation[x,y] = sum_c upstream * features.
pub fn modulate_backward(
    features: &Tensor,
    modulation: &Tensor,
    skip: bool,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (c_n, hw) = (features.shape()[0], modulation.numel());
    let fd = features.data();
    let md = modulation.data();
    let gd = grad_out.data();
    let offset = if skip { 1.0 } else { 0.0 };
    let mut d_f = vec![0.0; fd.len()];
    let mut d_m = vec![0.0; hw];
    for c in 0..c_n {
        let f = &fd[c * hw..(c + 1) * hw];
        let g = &gd[c * hw..(c + 1) * hw];
        let df = &mut d_f[c * hw..(c + 1) * hw];
        for i in 0..hw {
            df[i] = g[i] * (md[i] + offset);
            d_m[i] += g[i] * f[i];
        }
    }
    Ok((
        Tensor::from_vec(features.shape(), d_f)?,
        Tensor::from_vec(modulation.shape(), d_m)?,
    ))
}

fn check_modulate_shapes(features: &Tensor, modulation: &Tensor) -> Result<()> {
    let fs = features.shape();
    let ms = modulation.shape();
    if fs.len() != 3 {
        return Err(Error::shape(format!("modulate features must be [C,H,W], got {:?}", fs)));
    }
    if ms.len() != 3 || ms[0] != 1 {
        return Err(Error::shape(format!(
            "modulation image must be [1,H,W], got {:?}",
            ms
        )));
    }
    if fs[1] != ms[1] || fs[2] != ms[2] {
        return Err(Error::shape(format!(
            "modulation {}x{} does not match feature map {}x{}",
            ms[1], ms[2], fs[1], fs[2]
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    /// Textbook sextuple-loop convolution, the independent oracle.
    fn conv_oracle(x: &Tensor, w: &Tensor, b: &Tensor, geom: &ConvGeom) -> Tensor {
        let (c_n, h, wid) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (kh_n, kw_n) = geom.kernel;
        let (oh_n, ow_n) = geom.output_size(h, wid).unwrap();
        let p = geom.padding as isize;
        let mut out = Tensor::zeros(&[geom.out_channels, oh_n, ow_n]);
        for o in 0..geom.out_channels {
            for oh in 0..oh_n {
                for ow in 0..ow_n {
                    let mut acc = b.data()[o];
                    for c in 0..c_n {
                        for kh in 0..kh_n {
                            for kw in 0..kw_n {
                                let ih = (oh * geom.stride + kh) as isize - p;
                                let iw = (ow * geom.stride + kw) as isize - p;
                                if ih >= 0 && iw >= 0 && (ih as usize) < h && (iw as usize) < wid {
                                    acc += w.at(&[o, c, kh, kw]).unwrap()
                                        * x.at(&[c, ih as usize, iw as usize]).unwrap();
                                }
                            }
                        }
                    }
                    out.set_at(&[o, oh, ow], acc).unwrap();
                }
            }
        }
        out
    }

    #[test]
    fn conv_identity_kernel_reproduces_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&mut rng, &[1, 4, 4]);
        let geom = ConvGeom::new(1, 1, 1, 1, 0);
        let w = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let b = Tensor::zeros(&[1]);
        let y = conv2d_forward(&x, &w, &b, &geom).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv_box_kernel_sums_windows() {
        // all-ones 3x3 kernel over a constant-1 5x5 image, no padding:
        // every output cell is exactly 9.
        let x = Tensor::filled(&[1, 5, 5], 1.0);
        let geom = ConvGeom::new(1, 1, 3, 1, 0);
        let w = Tensor::filled(&[1, 1, 3, 3], 1.0);
        let b = Tensor::zeros(&[1]);
        let y = conv2d_forward(&x, &w, &b, &geom).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 9.0));
    }

    #[test]
    fn conv_matches_naive_oracle_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for &(cin, cout, k, s, p, h, w) in &[
            (3usize, 4usize, 3usize, 1usize, 1usize, 7usize, 6usize),
            (2, 3, 5, 2, 2, 9, 9),
            (1, 2, 3, 2, 0, 8, 5),
            (4, 1, 1, 1, 0, 4, 4),
        ] {
            let geom = ConvGeom::new(cin, cout, k, s, p);
            let x = rand_tensor(&mut rng, &[cin, h, w]);
            let wt = rand_tensor(&mut rng, &geom.weight_shape());
            let b = rand_tensor(&mut rng, &[cout]);
            let fast = conv2d_forward(&x, &wt, &b, &geom).unwrap();
            let slow = conv_oracle(&x, &wt, &b, &geom);
            assert_eq!(fast.shape(), slow.shape());
            // identical accumulation order per cell, so results are bit-equal
            assert_eq!(fast.data(), slow.data());
        }
    }

    #[test]
    fn conv_channel_mismatch_is_error() {
        let x = Tensor::zeros(&[3, 4, 4]);
        let geom = ConvGeom::new(2, 1, 3, 1, 1);
        let w = Tensor::zeros(&geom.weight_shape());
        let b = Tensor::zeros(&[1]);
        assert!(conv2d_forward(&x, &w, &b, &geom).is_err());
    }

    #[test]
    fn conv_kernel_larger_than_padded_input_is_error() {
        let geom = ConvGeom::new(1, 1, 7, 1, 0);
        assert!(geom.output_size(4, 4).is_err());
    }

    #[test]
    fn maxpool_picks_window_max() {
        let x = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, argmax) = maxpool2d_forward(&x, (2, 2), 2).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(argmax, &[3]);
    }

    #[test]
    fn maxpool_tie_break_routes_gradient_to_first_element() {
        // constant input: every window ties, so the first element in
        // row-major window order wins and receives all the gradient.
        let x = Tensor::filled(&[1, 4, 4], 2.5);
        let (y, argmax) = maxpool2d_forward(&x, (2, 2), 2).unwrap();
        assert!(y.data().iter().all(|&v| v == 2.5));
        assert_eq!(argmax, &[0, 2, 8, 10]);
        let g = Tensor::filled(&[1, 2, 2], 1.0);
        let dx = maxpool2d_backward(&[1, 4, 4], &argmax, &g).unwrap();
        let mut expect = vec![0.0; 16];
        for &i in &[0, 2, 8, 10] {
            expect[i] = 1.0;
        }
        assert_eq!(dx.data(), &expect[..]);
    }

    #[test]
    fn maxpool_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&mut rng, &[3, 7, 6]);
        let (y, _) = maxpool2d_forward(&x, (2, 2), 2).unwrap();
        for c in 0..3 {
            for oh in 0..3 {
                for ow in 0..3 {
                    let mut m = f64::NEG_INFINITY;
                    for kh in 0..2 {
                        for kw in 0..2 {
                            m = m.max(x.at(&[c, oh * 2 + kh, ow * 2 + kw]).unwrap());
                        }
                    }
                    assert_eq!(y.at(&[c, oh, ow]).unwrap(), m);
                }
            }
        }
    }

    #[test]
    fn maxpool_window_larger_than_input_is_error() {
        let x = Tensor::zeros(&[1, 1, 1]);
        assert!(maxpool2d_forward(&x, (2, 2), 2).is_err());
    }

    #[test]
    fn relu_clamps_and_masks_gradient() {
        let x = Tensor::from_vec(&[4], vec![-1.0, 0.0, 0.5, 2.0]).unwrap();
        let y = relu_forward(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 0.5, 2.0]);
        let g = Tensor::filled(&[4], 1.0);
        let dx = relu_backward(&x, &g);
        // subgradient at exactly 0 is 0
        assert_eq!(dx.data(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn sigmoid_midpoint_and_symmetry() {
        let x = Tensor::from_vec(&[3], vec![0.0, 3.0, -3.0]).unwrap();
        let y = sigmoid_forward(&x);
        assert_eq!(y.data()[0], 0.5);
        assert!((y.data()[1] + y.data()[2] - 1.0).abs() < 1e-15);
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn sigmoid_saturates_exactly_at_extremes() {
        // the structural-identity protocol relies on sigma(-1e9) == 0.0
        let x = Tensor::from_vec(&[2], vec![-1e9, 1e9]).unwrap();
        let y = sigmoid_forward(&x);
        assert_eq!(y.data(), &[0.0, 1.0]);
    }

    #[test]
    fn fully_connected_known_matvec() {
        let x = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(&[2], vec![0.5, -0.5]).unwrap();
        let y = fully_connected_forward(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[5.5, 10.5]);
    }

    #[test]
    fn fully_connected_numel_mismatch_is_error() {
        let x = Tensor::zeros(&[3]);
        let w = Tensor::zeros(&[2, 4]);
        let b = Tensor::zeros(&[2]);
        assert!(fully_connected_forward(&x, &w, &b).is_err());
    }

    #[test]
    fn fully_connected_flattens_row_major() {
        // [C,H,W] input is consumed in row-major order, matching flat_index
        let x = Tensor::from_vec(&[2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::from_vec(&[1, 4], vec![1.0, 10.0, 100.0, 1000.0]).unwrap();
        let b = Tensor::zeros(&[1]);
        let y = fully_connected_forward(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[4321.0]);
    }

    #[test]
    fn uniform_logits_loss_is_ln_n() {
        for n in [2usize, 5, 10] {
            let z = Tensor::filled(&[n], 0.7);
            let (loss, probs) = softmax_cross_entropy_forward(&z, 0).unwrap();
            assert!((loss - (n as f64).ln()).abs() < 1e-12);
            assert!(probs.iter().all(|&p| (p - 1.0 / n as f64).abs() < 1e-12));
        }
    }

    #[test]
    fn cross_entropy_is_shift_invariant() {
        let z = Tensor::from_vec(&[3], vec![1.0, -2.0, 0.3]).unwrap();
        let zs = Tensor::from_vec(&[3], vec![101.0, 98.0, 100.3]).unwrap();
        let (a, _) = softmax_cross_entropy_forward(&z, 2).unwrap();
        let (b, _) = softmax_cross_entropy_forward(&zs, 2).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn label_out_of_range_is_error() {
        let z = Tensor::zeros(&[3]);
        assert!(softmax_cross_entropy_forward(&z, 3).is_err());
    }

    #[test]
    fn modulate_zero_map_with_skip_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = rand_tensor(&mut rng, &[3, 4, 5]);
        let m = Tensor::zeros(&[1, 4, 5]);
        let y = modulate_forward(&f, &m, true).unwrap();
        assert_eq!(y.data(), f.data());
    }

    #[test]
    fn modulate_scales_per_pixel() {
        // feature 2.0 at a pixel with modulation 0.5 and skip: 2 * (0.5 + 1) = 3
        let f = Tensor::filled(&[1, 1, 1], 2.0);
        let m = Tensor::filled(&[1, 1, 1], 0.5);
        assert_eq!(modulate_forward(&f, &m, true).unwrap().data(), &[3.0]);
        assert_eq!(modulate_forward(&f, &m, false).unwrap().data(), &[1.0]);
    }

    #[test]
    fn modulate_backward_matches_gating_identity_exactly() {
        // d features must equal upstream * (m + 1) elementwise, bit for bit.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let f = rand_tensor(&mut rng, &[4, 3, 3]);
            let m_raw = rand_tensor(&mut rng, &[1, 3, 3]);
            let m = Tensor::from_vec(&[1, 3, 3], m_raw.data().iter().map(|v| v.abs().min(1.0)).collect()).unwrap();
            let g = rand_tensor(&mut rng, &[4, 3, 3]);
            let (df, dm) = modulate_backward(&f, &m, true, &g).unwrap();
            for c in 0..4 {
                for i in 0..9 {
                    let expect = g.data()[c * 9 + i] * (m.data()[i] + 1.0);
                    assert_eq!(df.data()[c * 9 + i], expect);
                }
            }
            // d modulation is the channel-sum of upstream * features
            for i in 0..9 {
                let mut acc = 0.0;
                for c in 0..4 {
                    acc += g.data()[c * 9 + i] * f.data()[c * 9 + i];
                }
                assert!((dm.data()[i] - acc).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn modulate_spatial_mismatch_is_error() {
        let f = Tensor::zeros(&[2, 4, 4]);
        let m = Tensor::zeros(&[1, 3, 4]);
        assert!(modulate_forward(&f, &m, true).is_err());
    }
}
