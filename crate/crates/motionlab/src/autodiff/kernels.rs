//! Low-level numeric kernels behind the graph operations.
//!
//! The matmul variants use loop orders that keep the innermost loop over
//! contiguous memory so the compiler can vectorize them; convolution is
//! lowered to matmul through im2col/col2im.

/// `c = a (m x k) * b (k x n)`, overwriting `c`.
pub fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    c.fill(0.0);
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for l in 0..k {
            let av = a[i * k + l];
            if av == 0.0 {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c += a (m x k) * b^T` where `b` is `(n x k)`.
pub fn matmul_nt_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut dot = 0.0;
            for (av, bv) in arow.iter().zip(brow) {
                dot += av * bv;
            }
            crow[j] += dot;
        }
    }
}

/// `c += a^T * b` where `a` is `(m x k)` and `b` is `(m x n)`, giving `(k x n)`.
pub fn matmul_tn_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (l, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[l * n..(l + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// Spatial geometry of a 2D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub h_in: usize,
    pub w_in: usize,
    pub h_out: usize,
    pub w_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    /// Geometry of a forward convolution over an `h x w` input.
    pub fn forward(h: usize, w: usize, kh: usize, kw: usize, stride: usize, pad: usize) -> Option<Self> {
        let h_span = h + 2 * pad;
        let w_span = w + 2 * pad;
        if h_span < kh || w_span < kw || stride == 0 {
            return None;
        }
        Some(ConvGeom {
            h_in: h,
            w_in: w,
            h_out: (h_span - kh) / stride + 1,
            w_out: (w_span - kw) / stride + 1,
            kh,
            kw,
            stride,
            pad,
        })
    }

    /// Output size of a transpose convolution over an `h x w` input. Output
    /// padding is per axis so odd and even input sizes can both be
    /// reconstructed exactly.
    pub fn transpose_output(
        h: usize,
        w: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
        out_pad: (usize, usize),
    ) -> Option<(usize, usize)> {
        if stride == 0 || out_pad.0 >= stride || out_pad.1 >= stride {
            return None;
        }
        let h_out = ((h - 1) * stride + kh + out_pad.0).checked_sub(2 * pad)?;
        let w_out = ((w - 1) * stride + kw + out_pad.1).checked_sub(2 * pad)?;
        Some((h_out, w_out))
    }
}

/// Unfolds one `(c, h, w)` image into columns of shape
/// `(c * kh * kw, h_out * w_out)`; out-of-bounds taps read zero.
pub fn im2col(img: &[f64], c: usize, geom: &ConvGeom, col: &mut [f64]) {
    let &ConvGeom {
        h_in,
        w_in,
        h_out,
        w_out,
        kh,
        kw,
        stride,
        pad,
        ..
    } = geom;
    debug_assert_eq!(img.len(), c * h_in * w_in);
    debug_assert_eq!(col.len(), c * kh * kw * h_out * w_out);
    col.fill(0.0);
    let cols = h_out * w_out;
    for ch in 0..c {
        let img_ch = &img[ch * h_in * w_in..(ch + 1) * h_in * w_in];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ch * kh + ki) * kw + kj;
                let out_row = &mut col[row * cols..(row + 1) * cols];
                for ho in 0..h_out {
                    let hi = (ho * stride + ki) as isize - pad as isize;
                    if hi < 0 || hi >= h_in as isize {
                        continue;
                    }
                    for wo in 0..w_out {
                        let wi = (wo * stride + kj) as isize - pad as isize;
                        if wi < 0 || wi >= w_in as isize {
                            continue;
                        }
                        out_row[ho * w_out + wo] = img_ch[hi as usize * w_in + wi as usize];
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds columns back into a `(c, h, w)` image.
pub fn col2im(col: &[f64], c: usize, geom: &ConvGeom, img: &mut [f64]) {
    let &ConvGeom {
        h_in,
        w_in,
        h_out,
        w_out,
        kh,
        kw,
        stride,
        pad,
        ..
    } = geom;
    debug_assert_eq!(img.len(), c * h_in * w_in);
    debug_assert_eq!(col.len(), c * kh * kw * h_out * w_out);
    img.fill(0.0);
    let cols = h_out * w_out;
    for ch in 0..c {
        let img_ch = &mut img[ch * h_in * w_in..(ch + 1) * h_in * w_in];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ch * kh + ki) * kw + kj;
                let col_row = &col[row * cols..(row + 1) * cols];
                for ho in 0..h_out {
                    let hi = (ho * stride + ki) as isize - pad as isize;
                    if hi < 0 || hi >= h_in as isize {
                        continue;
                    }
                    for wo in 0..w_out {
                        let wi = (wo * stride + kj) as isize - pad as isize;
                        if wi < 0 || wi >= w_in as isize {
                            continue;
                        }
                        img_ch[hi as usize * w_in + wi as usize] += col_row[ho * w_out + wo];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for l in 0..k {
                    c[i * n + j] += a[i * k + l] * b[l * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn matmul_variants_agree_with_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (m, k, n) = (7, 5, 9);
        let a: Vec<f64> = (0..m * k).map(|_| rng.gen::<f64>() - 0.5).collect();
        let b: Vec<f64> = (0..k * n).map(|_| rng.gen::<f64>() - 0.5).collect();
        let expected = naive_matmul(&a, &b, m, k, n);

        let mut c = vec![0.0; m * n];
        matmul_nn(&a, &b, m, k, n, &mut c);
        assert_eq!(c, expected);

        // nt: a * (b^T)^T by storing b transposed.
        let mut bt = vec![0.0; n * k];
        for i in 0..k {
            for j in 0..n {
                bt[j * k + i] = b[i * n + j];
            }
        }
        let mut c2 = vec![0.0; m * n];
        matmul_nt_acc(&a, &bt, m, k, n, &mut c2);
        for (x, y) in c2.iter().zip(expected.iter()) {
            assert!((x - y).abs() < 1e-12);
        }

        // tn: (a^T)^T * b by storing a transposed.
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for j in 0..k {
                at[j * m + i] = a[i * k + j];
            }
        }
        let mut c3 = vec![0.0; m * n];
        matmul_tn_acc(&at, &b, k, m, n, &mut c3);
        for (x, y) in c3.iter().zip(expected.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_geometry() {
        // 16 -> 8 -> 4 under k=3, s=2, p=1; transpose recovers with out_pad 1.
        let g = ConvGeom::forward(16, 47, 3, 3, 2, 1).unwrap();
        assert_eq!((g.h_out, g.w_out), (8, 24));
        let g2 = ConvGeom::forward(8, 24, 3, 3, 2, 1).unwrap();
        assert_eq!((g2.h_out, g2.w_out), (4, 12));
        assert_eq!(
            ConvGeom::transpose_output(4, 12, 3, 3, 2, 1, (1, 1)),
            Some((8, 24))
        );
        // Asymmetric output padding recovers the odd width.
        assert_eq!(
            ConvGeom::transpose_output(8, 24, 3, 3, 2, 1, (1, 0)),
            Some((16, 47))
        );
        assert_eq!(ConvGeom::transpose_output(8, 24, 3, 3, 2, 1, (2, 0)), None);
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        // <im2col(x), y> == <x, col2im(y)> for random x, y.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (c, h, w) = (3, 5, 4);
        let geom = ConvGeom::forward(h, w, 3, 3, 2, 1).unwrap();
        let x: Vec<f64> = (0..c * h * w).map(|_| rng.gen::<f64>() - 0.5).collect();
        let cols = c * 9 * geom.h_out * geom.w_out;
        let y: Vec<f64> = (0..cols).map(|_| rng.gen::<f64>() - 0.5).collect();
        let mut cx = vec![0.0; cols];
        im2col(&x, c, &geom, &mut cx);
        let mut xy = vec![0.0; c * h * w];
        col2im(&y, c, &geom, &mut xy);
        let lhs: f64 = cx.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(xy.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
