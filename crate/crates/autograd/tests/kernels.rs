use corelnet_autograd::{Graph, Tensor};
use proptest::prelude::*;

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, n)
}

fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
        }
    }
    out
}

/// Direct convolution with zero padding, `[N,C,H,W] * [O,C,k,k]`.
#[allow(clippy::too_many_arguments)]
fn naive_conv(x: &[f64], w: &[f64], n: usize, c: usize, h: usize, o: usize, k: usize, stride: usize, pad: usize) -> Vec<f64> {
    let out_side = (h + 2 * pad - k) / stride + 1;
    let mut y = vec![0.0; n * o * out_side * out_side];
    for b in 0..n {
        for f in 0..o {
            for r in 0..out_side {
                for col in 0..out_side {
                    let mut acc = 0.0;
                    for ch in 0..c {
                        for i in 0..k {
                            for j in 0..k {
                                let (yy, xx) = ((r * stride + i) as isize - pad as isize, (col * stride + j) as isize - pad as isize);
                                if yy < 0 || xx < 0 || yy >= h as isize || xx >= h as isize {
                                    continue;
                                }
                                acc += x[((b * c + ch) * h + yy as usize) * h + xx as usize] * w[((f * c + ch) * k + i) * k + j];
                            }
                        }
                    }
                    y[((b * o + f) * out_side + r) * out_side + col] = acc;
                }
            }
        }
    }
    y
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matmul_matches_the_triple_loop(m in 1usize..7, k in 1usize..7, n in 1usize..7, a in values(36), b in values(36)) {
        let (a, b) = (&a[..m * k], &b[..k * n]);
        let mut g = Graph::<f64>::new();
        let av = g.constant(Tensor::new([m, k], a.to_vec()).unwrap());
        let bv = g.constant(Tensor::new([k, n], b.to_vec()).unwrap());
        let y = g.matmul(av, bv).unwrap();
        let want = naive_matmul(a, b, m, k, n);
        for (got, want) in g.value(y).data().iter().zip(&want) {
            prop_assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn batched_gram_matrix_is_bitwise_symmetric(bsz in 1usize..4, t in 2usize..7, d in 1usize..9, z in values(3 * 6 * 8)) {
        let z = &z[..bsz * t * d];
        let mut g = Graph::<f64>::new();
        let zv = g.constant(Tensor::new([bsz, t, d], z.to_vec()).unwrap());
        let zt = g.transpose(zv).unwrap();
        let s = g.matmul(zv, zt).unwrap();
        let v = g.value(s).data();
        for b in 0..bsz {
            for i in 0..t {
                for j in 0..t {
                    prop_assert_eq!(v[(b * t + i) * t + j].to_bits(), v[(b * t + j) * t + i].to_bits());
                }
            }
        }
    }

    #[test]
    fn conv2d_matches_direct_convolution(n in 1usize..3, c in 1usize..4, o in 1usize..4, half in 2usize..5, x in values(2 * 3 * 64), w in values(3 * 3 * 16)) {
        let (h, k, stride, pad) = (2 * half, 4, 2, 1);
        let (x, w) = (&x[..n * c * h * h], &w[..o * c * k * k]);
        let mut g = Graph::<f64>::new();
        let xv = g.constant(Tensor::new([n, c, h, h], x.to_vec()).unwrap());
        let wv = g.constant(Tensor::new([o, c, k, k], w.to_vec()).unwrap());
        let y = g.conv2d(xv, wv, stride, pad).unwrap();
        prop_assert_eq!(g.shape(y), &[n, o, half, half][..]);
        let want = naive_conv(x, w, n, c, h, o, k, stride, pad);
        for (got, want) in g.value(y).data().iter().zip(&want) {
            prop_assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn transpose_twice_is_identity(r in 1usize..6, c in 1usize..6, x in values(25)) {
        let x = &x[..r * c];
        let mut g = Graph::<f64>::new();
        let v = g.constant(Tensor::new([r, c], x.to_vec()).unwrap());
        let t = g.transpose(v).unwrap();
        prop_assert_eq!(g.shape(t), &[c, r][..]);
        let tt = g.transpose(t).unwrap();
        prop_assert_eq!(g.value(tt).data(), x);
    }
}
