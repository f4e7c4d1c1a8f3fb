//! Raw loops behind the graph operations. Image layouts are NHWC and
//! convolution weights are `[kh, kw, c_in, c_out]`, stride 1, zero "same"
//! padding.

use crate::scalar::Scalar;

/// `[m, k] x [k, n] -> [m, n]`, accumulating into `out`.
pub fn matmul_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
}

/// `a^T b` for `a: [k, m]`, `b: [k, n]`, accumulating into `out: [m, n]`.
pub fn matmul_at_b_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], k: usize, m: usize, n: usize) {
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == T::zero() {
                continue;
            }
            let row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
}

/// `a b^T` for `a: [m, k]`, `b: [n, k]`, accumulating into `out: [m, n]`.
pub fn matmul_a_bt_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = T::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                s = s + x * y;
            }
            out[i * n + j] = out[i * n + j] + s;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvDims {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
}

impl ConvDims {
    fn pad(&self) -> isize {
        (self.kernel / 2) as isize
    }

    /// Visits every (output pixel, kernel tap, input pixel) triple inside the image.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (h, w, k) = (self.height as isize, self.width as isize, self.kernel);
        for n in 0..self.batch {
            for i in 0..h {
                for j in 0..w {
                    let out_px = (n * self.height + i as usize) * self.width + j as usize;
                    for di in 0..k {
                        let si = i + di as isize - self.pad();
                        if si < 0 || si >= h {
                            continue;
                        }
                        for dj in 0..k {
                            let sj = j + dj as isize - self.pad();
                            if sj < 0 || sj >= w {
                                continue;
                            }
                            let in_px = (n * self.height + si as usize) * self.width + sj as usize;
                            f(out_px, di * k + dj, in_px);
                        }
                    }
                }
            }
        }
    }
}

/// `y[px, o] += sum x[src, c] w[tap, c, o]`.
pub fn conv_forward<T: Scalar>(x: &[T], w: &[T], y: &mut [T], d: ConvDims) {
    let (ci, co) = (d.c_in, d.c_out);
    d.for_each_tap(|out_px, tap, in_px| {
        let yrow = &mut y[out_px * co..(out_px + 1) * co];
        for c in 0..ci {
            let xv = x[in_px * ci + c];
            if xv == T::zero() {
                continue;
            }
            let wrow = &w[(tap * ci + c) * co..(tap * ci + c + 1) * co];
            for (yo, &wv) in yrow.iter_mut().zip(wrow) {
                *yo = *yo + xv * wv;
            }
        }
    });
}

/// Adjoint of [`conv_forward`] with respect to its input:
/// `gx[src, c] += sum g[px, o] w[tap, c, o]`.
pub fn conv_backward_data<T: Scalar>(g: &[T], w: &[T], gx: &mut [T], d: ConvDims) {
    let (ci, co) = (d.c_in, d.c_out);
    d.for_each_tap(|out_px, tap, in_px| {
        let grow = &g[out_px * co..(out_px + 1) * co];
        for c in 0..ci {
            let wrow = &w[(tap * ci + c) * co..(tap * ci + c + 1) * co];
            let mut s = T::zero();
            for (&gv, &wv) in grow.iter().zip(wrow) {
                s = s + gv * wv;
            }
            gx[in_px * ci + c] = gx[in_px * ci + c] + s;
        }
    });
}

/// Gradient of [`conv_forward`] with respect to its weights:
/// `gw[tap, c, o] += sum x[src, c] g[px, o]`.
pub fn conv_backward_weight<T: Scalar>(x: &[T], g: &[T], gw: &mut [T], d: ConvDims) {
    let (ci, co) = (d.c_in, d.c_out);
    d.for_each_tap(|out_px, tap, in_px| {
        let grow = &g[out_px * co..(out_px + 1) * co];
        for c in 0..ci {
            let xv = x[in_px * ci + c];
            if xv == T::zero() {
                continue;
            }
            let gwrow = &mut gw[(tap * ci + c) * co..(tap * ci + c + 1) * co];
            for (gwv, &gv) in gwrow.iter_mut().zip(grow) {
                *gwv = *gwv + xv * gv;
            }
        }
    });
}

/// Non-overlapping `factor x factor` max pooling over NHWC. Returns pooled
/// values and, per output element, the flat input index that won (first in
/// row-major window order on ties).
pub fn maxpool<T: Scalar>(
    x: &[T],
    [n, h, w, c]: [usize; 4],
    factor: usize,
) -> (Vec<T>, Vec<usize>) {
    let (oh, ow) = (h / factor, w / factor);
    let mut vals = Vec::with_capacity(n * oh * ow * c);
    let mut args = Vec::with_capacity(n * oh * ow * c);
    for b in 0..n {
        for i in 0..oh {
            for j in 0..ow {
                for ch in 0..c {
                    let mut best = T::neg_infinity();
                    let mut arg = 0;
                    for di in 0..factor {
                        for dj in 0..factor {
                            let idx = ((b * h + i * factor + di) * w + j * factor + dj) * c + ch;
                            if x[idx] > best {
                                best = x[idx];
                                arg = idx;
                            }
                        }
                    }
                    vals.push(best);
                    args.push(arg);
                }
            }
        }
    }
    (vals, args)
}

/// Nearest-neighbour upsampling of NHWC by an integer factor.
pub fn upsample<T: Scalar>(x: &[T], [n, h, w, c]: [usize; 4], factor: usize) -> Vec<T> {
    let (oh, ow) = (h * factor, w * factor);
    let mut out = Vec::with_capacity(n * oh * ow * c);
    for b in 0..n {
        for i in 0..oh {
            for j in 0..ow {
                let src = ((b * h + i / factor) * w + j / factor) * c;
                out.extend_from_slice(&x[src..src + c]);
            }
        }
    }
    out
}

/// Adjoint of [`upsample`]: sums each output block back onto its source.
pub fn upsample_backward<T: Scalar>(g: &[T], [n, h, w, c]: [usize; 4], factor: usize) -> Vec<T> {
    let (oh, ow) = (h * factor, w * factor);
    let mut gx = vec![T::zero(); n * h * w * c];
    for b in 0..n {
        for i in 0..oh {
            for j in 0..ow {
                let src = ((b * h + i / factor) * w + j / factor) * c;
                let dst = ((b * oh + i) * ow + j) * c;
                for ch in 0..c {
                    gx[src + ch] = gx[src + ch] + g[dst + ch];
                }
            }
        }
    }
    gx
}

pub const GELU_COEFF: f64 = 0.044715;

pub fn gelu<T: Scalar>(x: T) -> T {
    let k = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let u = k * (x + T::lit(GELU_COEFF) * x * x * x);
    T::lit(0.5) * x * (T::one() + u.tanh())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let k = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let u = k * (x + T::lit(GELU_COEFF) * x * x * x);
    let t = u.tanh();
    let du = k * (T::one() + T::lit(3.0 * GELU_COEFF) * x * x);
    T::lit(0.5) * (T::one() + t) + T::lit(0.5) * x * (T::one() - t * t) * du
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_data_adjoint_identity() {
        // <conv(x), g> == <x, conv^T(g)> for random-ish data.
        let d = ConvDims {
            batch: 1,
            height: 3,
            width: 4,
            c_in: 2,
            c_out: 3,
            kernel: 3,
        };
        let x: Vec<f64> = (0..24).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let w: Vec<f64> = (0..54).map(|i| ((i * 5) % 13) as f64 * 0.1 - 0.6).collect();
        let g: Vec<f64> = (0..36).map(|i| ((i * 3) % 7) as f64 - 3.0).collect();
        let mut y = vec![0.0; 36];
        conv_forward(&x, &w, &mut y, d);
        let mut gx = vec![0.0; 24];
        conv_backward_data(&g, &w, &mut gx, d);
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&gx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu(0.0f64), 0.0);
        assert!((gelu(1.0f64) - 0.841_191_990_1).abs() < 1e-9);
    }

    #[test]
    fn maxpool_first_max_on_ties() {
        let (v, a) = maxpool(&[1.0f64, 1.0, 1.0, 1.0], [1, 2, 2, 1], 2);
        assert_eq!(v, vec![1.0]);
        assert_eq!(a, vec![0]);
    }
}
