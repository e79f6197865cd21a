//! Dense kernels shared by forward and backward passes.

use crate::real::Real;

/// Row-major view: pointer offset plus (row stride, column stride).
#[derive(Clone, Copy)]
pub(crate) struct Layout {
    pub rs: isize,
    pub cs: isize,
}

impl Layout {
    /// Plain row-major `rows × cols` matrix.
    pub fn rm(cols: usize) -> Self {
        Layout { rs: cols as isize, cs: 1 }
    }

    /// Transposed view of a row-major `rows × cols` matrix.
    pub fn tr(cols: usize) -> Self {
        Layout { rs: 1, cs: cols as isize }
    }
}

/// `c (+)= a · b` with `a` m×k and `b` k×n under the given layouts.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<F: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[F],
    la: Layout,
    b: &[F],
    lb: Layout,
    c: &mut [F],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let beta = if accumulate { F::one() } else { F::zero() };
    // SAFETY: lengths checked above; layouts describe dense m×k / k×n / m×n views.
    unsafe {
        F::gemm_raw(
            m,
            k,
            n,
            F::one(),
            a.as_ptr(),
            la.rs,
            la.cs,
            b.as_ptr(),
            lb.rs,
            lb.cs,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Fixed-order product: `c[i][j] (+)= Σ_p a[i][p]·b[p][j]`, summing p ascending.
///
/// Identical input rows give bit-identical output rows, and `a·aᵀ` is exactly
/// symmetric, which the similarity invariants rely on.
#[allow(clippy::too_many_arguments)]
pub(crate) fn ordered_matmul<F: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[F],
    la: Layout,
    b: &[F],
    lb: Layout,
    c: &mut [F],
    accumulate: bool,
) {
    for i in 0..m {
        for j in 0..n {
            let mut acc = F::zero();
            for p in 0..k {
                let ai = (i as isize * la.rs + p as isize * la.cs) as usize;
                let bi = (p as isize * lb.rs + j as isize * lb.cs) as usize;
                acc += a[ai] * b[bi];
            }
            if accumulate {
                c[i * n + j] += acc;
            } else {
                c[i * n + j] = acc;
            }
        }
    }
}

pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfolds one C×H×W image into a (C·k·k) × (OH·OW) column matrix.
pub(crate) fn im2col<F: Real>(img: &[F], g: &ConvGeom, cols: &mut [F]) {
    let p = g.col_cols();
    for c in 0..g.channels {
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        line.iter_mut().for_each(|v| *v = F::zero());
                        continue;
                    }
                    let src = &img[(c * g.height + iy as usize) * g.width..][..g.width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        *v = if ix < 0 || ix >= g.width as isize {
                            F::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the image.
pub(crate) fn col2im<F: Real>(cols: &[F], g: &ConvGeom, img: &mut [F]) {
    let p = g.col_cols();
    for c in 0..g.channels {
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let base = (c * g.height + iy as usize) * g.width;
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && ix < g.width as isize {
                            img[base + ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Numpy-style broadcast of two shapes.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let r = a.len().max(b.len());
    let mut out = vec![0; r];
    for i in 0..r {
        let da = if i + a.len() >= r { a[i + a.len() - r] } else { 1 };
        let db = if i + b.len() >= r { b[i + b.len() - r] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every flat index of `out`, the flat index of the broadcast operand.
pub(crate) fn broadcast_index(out: &[usize], operand: &[usize]) -> Vec<u32> {
    let r = out.len();
    let pad = r - operand.len();
    let mut strides = vec![0usize; r];
    let mut s = 1;
    for i in (0..operand.len()).rev() {
        strides[i + pad] = if operand[i] == 1 { 0 } else { s };
        s *= operand[i];
    }
    let total: usize = out.iter().product();
    let mut idx = Vec::with_capacity(total);
    let mut digit = vec![0usize; r];
    let mut cur = 0usize;
    for _ in 0..total {
        idx.push(cur as u32);
        for d in (0..r).rev() {
            digit[d] += 1;
            cur += strides[d];
            if digit[d] < out[d] {
                break;
            }
            cur -= strides[d] * digit[d];
            digit[d] = 0;
        }
    }
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_shapes() {
        assert_eq!(broadcast_shape(&[2, 3, 4], &[4]), Some(vec![2, 3, 4]));
        assert_eq!(broadcast_shape(&[2, 1, 4], &[3, 1]), Some(vec![2, 3, 4]));
        assert_eq!(broadcast_shape(&[2, 3], &[4]), None);
    }

    #[test]
    fn broadcast_index_tiles_bias() {
        assert_eq!(broadcast_index(&[2, 3], &[3]), vec![0, 1, 2, 0, 1, 2]);
        assert_eq!(broadcast_index(&[2, 3], &[2, 1]), vec![0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn gemm_matches_ordered_kernel() {
        let a: Vec<f64> = (0..12).map(|x| x as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..20).map(|x| (x as f64).sin()).collect();
        let mut c1 = vec![0.0; 15];
        let mut c2 = vec![0.0; 15];
        gemm(3, 4, 5, &a, Layout::rm(4), &b, Layout::rm(5), &mut c1, false);
        ordered_matmul(3, 4, 5, &a, Layout::rm(4), &b, Layout::rm(5), &mut c2, false);
        for (x, y) in c1.iter().zip(&c2) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
