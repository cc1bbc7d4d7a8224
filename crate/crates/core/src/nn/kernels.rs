//! Raw numeric kernels shared by the tape and by plain inference code.
//!
//! Every kernel accumulates in index order so results are bit-reproducible.

/// Numerically stable softmax over the whole slice.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let mut sum = 0.0;
    for e in &exps {
        sum += e;
    }
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the first maximum; 0 for an empty slice.
pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = i;
        }
    }
    best
}

pub fn log_softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x {
        sum += (v - max).exp();
    }
    let lse = max + sum.ln();
    x.iter().map(|v| v - lse).collect()
}

/// `w [m, n] · x [n]`.
pub fn matvec(w: &[f64], m: usize, n: usize, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m];
    for (i, o) in out.iter_mut().enumerate() {
        let row = &w[i * n..(i + 1) * n];
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(x) {
            acc += a * b;
        }
        *o = acc;
    }
    out
}

/// `a [m, n] · b [n, p]`.
pub fn matmul(a: &[f64], m: usize, n: usize, b: &[f64], p: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * p];
    for i in 0..m {
        let orow = &mut out[i * p..(i + 1) * p];
        for k in 0..n {
            let av = a[i * n + k];
            let brow = &b[k * p..(k + 1) * p];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// Output extent of a 1-D correlation, or `None` when the input is too small.
pub fn conv_out_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || input + 2 * pad < kernel {
        return None;
    }
    Some((input + 2 * pad - kernel) / stride + 1)
}

/// Output positions `o` in `[lo, hi)` whose input index `o*stride + k - pad` lies in `[0, n_in)`.
fn valid_range(n_out: usize, n_in: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if n_in + pad > k {
        ((n_in + pad - k - 1) / stride + 1).min(n_out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(
        in_channels: usize,
        height: usize,
        width: usize,
        out_channels: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    ) -> Option<Self> {
        Some(Self {
            in_channels,
            height,
            width,
            out_channels,
            kh,
            kw,
            stride,
            pad,
            out_h: conv_out_len(height, kh, stride, pad)?,
            out_w: conv_out_len(width, kw, stride, pad)?,
        })
    }
}

/// Zero-padded cross-correlation of `x [C, H, W]` with `k [O, C, kh, kw]` plus bias.
pub fn conv2d(g: &ConvGeometry, x: &[f64], k: &[f64], bias: &[f64]) -> Vec<f64> {
    let plane = g.out_h * g.out_w;
    let mut out = vec![0.0; g.out_channels * plane];
    for oc in 0..g.out_channels {
        let o = &mut out[oc * plane..(oc + 1) * plane];
        o.iter_mut().for_each(|v| *v = bias[oc]);
        for ic in 0..g.in_channels {
            let xin = &x[ic * g.height * g.width..(ic + 1) * g.height * g.width];
            for ky in 0..g.kh {
                let (ylo, yhi) = valid_range(g.out_h, g.height, ky, g.stride, g.pad);
                for kx in 0..g.kw {
                    let wv = k[((oc * g.in_channels + ic) * g.kh + ky) * g.kw + kx];
                    let (xlo, xhi) = valid_range(g.out_w, g.width, kx, g.stride, g.pad);
                    for oy in ylo..yhi {
                        let iy = oy * g.stride + ky - g.pad;
                        let orow = &mut o[oy * g.out_w..(oy + 1) * g.out_w];
                        let irow = &xin[iy * g.width..(iy + 1) * g.width];
                        if g.stride == 1 {
                            let shift = kx + xlo - g.pad;
                            for (o, i) in orow[xlo..xhi].iter_mut().zip(&irow[shift..shift + xhi - xlo]) {
                                *o += wv * i;
                            }
                        } else {
                            for ox in xlo..xhi {
                                orow[ox] += wv * irow[ox * g.stride + kx - g.pad];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of [`conv2d`] with respect to input, kernel and bias.
pub fn conv2d_backward(g: &ConvGeometry, x: &[f64], k: &[f64], dout: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let plane = g.out_h * g.out_w;
    let mut dx = vec![0.0; x.len()];
    let mut dk = vec![0.0; k.len()];
    let mut db = vec![0.0; g.out_channels];
    for oc in 0..g.out_channels {
        let d = &dout[oc * plane..(oc + 1) * plane];
        db[oc] = d.iter().sum();
        for ic in 0..g.in_channels {
            let base = ic * g.height * g.width;
            for ky in 0..g.kh {
                let (ylo, yhi) = valid_range(g.out_h, g.height, ky, g.stride, g.pad);
                for kx in 0..g.kw {
                    let widx = ((oc * g.in_channels + ic) * g.kh + ky) * g.kw + kx;
                    let wv = k[widx];
                    let (xlo, xhi) = valid_range(g.out_w, g.width, kx, g.stride, g.pad);
                    let mut acc = 0.0;
                    for oy in ylo..yhi {
                        let iy = oy * g.stride + ky - g.pad;
                        let drow = &d[oy * g.out_w..(oy + 1) * g.out_w];
                        let roff = base + iy * g.width;
                        if g.stride == 1 {
                            let lo = roff + kx + xlo - g.pad;
                            let n = xhi - xlo;
                            let dr = &drow[xlo..xhi];
                            acc += dr.iter().zip(&x[lo..lo + n]).map(|(a, b)| a * b).sum::<f64>();
                            for (v, dv) in dx[lo..lo + n].iter_mut().zip(dr) {
                                *v += wv * dv;
                            }
                        } else {
                            for ox in xlo..xhi {
                                let xi = roff + ox * g.stride + kx - g.pad;
                                acc += drow[ox] * x[xi];
                                dx[xi] += wv * drow[ox];
                            }
                        }
                    }
                    dk[widx] += acc;
                }
            }
        }
    }
    (dx, dk, db)
}

pub fn logistic(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_matches_brute_force() {
        for n_in in 1..8 {
            for k in 0..5 {
                for stride in 1..4 {
                    for pad in 0..4 {
                        let kernel = k + 1;
                        let Some(n_out) = conv_out_len(n_in, kernel, stride, pad) else { continue };
                        let (lo, hi) = valid_range(n_out, n_in, k, stride, pad);
                        for o in 0..n_out {
                            let idx = (o * stride + k) as isize - pad as isize;
                            let inside = idx >= 0 && (idx as usize) < n_in;
                            assert_eq!(inside, o >= lo && o < hi, "n_in={n_in} k={k} s={stride} p={pad} o={o}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn softmax_handles_large_logits() {
        let p = softmax(&[1000.0, 1000.0]);
        assert_eq!(p, vec![0.5, 0.5]);
        let lp = log_softmax(&[0.0, 0.0, 0.0, 0.0]);
        assert!((lp[0] + 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn logistic_is_symmetric() {
        assert_eq!(logistic(0.0), 0.5);
        assert!((logistic(3.0) + logistic(-3.0) - 1.0).abs() < 1e-15);
        assert!(logistic(-800.0) >= 0.0);
    }
}
