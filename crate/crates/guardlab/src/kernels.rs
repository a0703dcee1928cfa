//! Deterministic dense-math primitives.
//!
//! Everything here is written with fixed accumulation order so that the same
//! per-sample inputs produce bitwise-identical outputs regardless of how many
//! samples share a batch. That property is load-bearing: the guidance code
//! compares batched and unbatched denoiser evaluations, and several identity
//! reductions are checked bitwise.

use ndarray::{Array1, Array2, Array3, Array4};

/// `a (m×k) · b (k×n)`, ikj loop order.
pub fn matmul(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (m, k) = a.dim();
    let (k2, n) = b.dim();
    assert_eq!(k, k2, "matmul inner dims");
    let a = a.as_standard_layout();
    let b = b.as_standard_layout();
    let (a, b) = (a.as_slice().unwrap(), b.as_slice().unwrap());
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += aip * brow[j];
            }
        }
    }
    Array2::from_shape_vec((m, n), c).unwrap()
}

/// `a (m×k) · bᵀ (n×k) -> (m×n)`.
pub fn matmul_nt(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (m, k) = a.dim();
    let (n, k2) = b.dim();
    assert_eq!(k, k2, "matmul_nt inner dims");
    let a = a.as_standard_layout();
    let b = b.as_standard_layout();
    let (a, b) = (a.as_slice().unwrap(), b.as_slice().unwrap());
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for p in 0..k {
                acc += arow[p] * brow[p];
            }
            c[i * n + j] = acc;
        }
    }
    Array2::from_shape_vec((m, n), c).unwrap()
}

/// `aᵀ (k×m) · b (k×n) -> (m×n)`.
pub fn matmul_tn(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (k, m) = a.dim();
    let (k2, n) = b.dim();
    assert_eq!(k, k2, "matmul_tn inner dims");
    let a = a.as_standard_layout();
    let b = b.as_standard_layout();
    let (a, b) = (a.as_slice().unwrap(), b.as_slice().unwrap());
    let mut c = vec![0.0; m * n];
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let api = arow[i];
            if api == 0.0 {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += api * brow[j];
            }
        }
    }
    Array2::from_shape_vec((m, n), c).unwrap()
}

/// Row-wise softmax with max subtraction. Rows of `-inf` entries get weight 0
/// there (used by the masking baseline).
pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut y = x.clone();
    for mut row in y.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    y
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// 3×3, stride-1, zero-padded im2col: `(C,H,W) -> (C*9, H*W)`.
pub fn im2col3(x: &Array3<f64>) -> Array2<f64> {
    let (c, h, w) = x.dim();
    let mut cols = Array2::zeros((c * 9, h * w));
    for ch in 0..c {
        for ky in 0..3usize {
            for kx in 0..3usize {
                let row = ch * 9 + ky * 3 + kx;
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for xq in 0..w {
                        let sx = xq as isize + kx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        cols[[row, y * w + xq]] = x[[ch, sy as usize, sx as usize]];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col3`]: scatter `(C*9, H*W)` gradients back to `(C,H,W)`.
pub fn col2im3(cols: &Array2<f64>, c: usize, h: usize, w: usize) -> Array3<f64> {
    let mut x = Array3::zeros((c, h, w));
    for ch in 0..c {
        for ky in 0..3usize {
            for kx in 0..3usize {
                let row = ch * 9 + ky * 3 + kx;
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for xq in 0..w {
                        let sx = xq as isize + kx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        x[[ch, sy as usize, sx as usize]] += cols[[row, y * w + xq]];
                    }
                }
            }
        }
    }
    x
}

/// Sinusoidal timestep embedding of even dimension `dim`.
pub fn time_embedding(t: usize, dim: usize) -> Array1<f64> {
    assert!(dim % 2 == 0);
    let half = dim / 2;
    let mut e = Array1::zeros(dim);
    for i in 0..half {
        let freq = (-(i as f64) * (10_000f64).ln() / (half as f64 - 1.0)).exp();
        e[i] = (t as f64 * freq).sin();
        e[half + i] = (t as f64 * freq).cos();
    }
    e
}

/// 2×2 average pool on `(B,C,H,W)`.
pub fn avg_pool2(x: &Array4<f64>) -> Array4<f64> {
    let (b, c, h, w) = x.dim();
    let mut y = Array4::zeros((b, c, h / 2, w / 2));
    for bi in 0..b {
        for ci in 0..c {
            for yi in 0..h / 2 {
                for xi in 0..w / 2 {
                    y[[bi, ci, yi, xi]] = 0.25
                        * (x[[bi, ci, 2 * yi, 2 * xi]]
                            + x[[bi, ci, 2 * yi, 2 * xi + 1]]
                            + x[[bi, ci, 2 * yi + 1, 2 * xi]]
                            + x[[bi, ci, 2 * yi + 1, 2 * xi + 1]]);
                }
            }
        }
    }
    y
}

/// Nearest-neighbor 2× upsample on `(B,C,H,W)`.
pub fn upsample2(x: &Array4<f64>) -> Array4<f64> {
    let (b, c, h, w) = x.dim();
    let mut y = Array4::zeros((b, c, h * 2, w * 2));
    for bi in 0..b {
        for ci in 0..c {
            for yi in 0..h * 2 {
                for xi in 0..w * 2 {
                    y[[bi, ci, yi, xi]] = x[[bi, ci, yi / 2, xi / 2]];
                }
            }
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn matmul_small() {
        let a = array![[1.0, 2.0], [3.0, 4.0]];
        let b = array![[5.0, 6.0], [7.0, 8.0]];
        assert_eq!(matmul(&a, &b), array![[19.0, 22.0], [43.0, 50.0]]);
    }

    #[test]
    fn matmul_variants_agree() {
        let a = Array2::from_shape_fn((4, 3), |(i, j)| (i * 3 + j) as f64 * 0.3 - 1.0);
        let b = Array2::from_shape_fn((3, 5), |(i, j)| (i * 5 + j) as f64 * 0.1);
        let c = matmul(&a, &b);
        let c_nt = matmul_nt(&a, &b.t().to_owned());
        let c_tn = matmul_tn(&a.t().to_owned(), &b);
        for ((x, y), z) in c.iter().zip(c_nt.iter()).zip(c_tn.iter()) {
            assert!((x - y).abs() < 1e-12 && (x - z).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_hand_value() {
        // e^2 / (e^2 + 1) = 0.88079707...
        let y = softmax_rows(&array![[2.0, 0.0]]);
        assert!((y[[0, 0]] - 0.8807970779778823).abs() < 1e-12);
        assert!((y[[0, 1]] - 0.11920292202211755).abs() < 1e-12);
    }

    #[test]
    fn softmax_handles_neg_inf() {
        let y = softmax_rows(&array![[1.0, f64::NEG_INFINITY, 0.0]]);
        assert_eq!(y[[0, 1]], 0.0);
        assert!((y.row(0).sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)> for random x, y.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let x = Array3::from_shape_fn((2, 4, 4), |_| rng.gen::<f64>() - 0.5);
        let y = Array2::from_shape_fn((18, 16), |_| rng.gen::<f64>() - 0.5);
        let lhs: f64 = (&im2col3(&x) * &y).sum();
        let rhs: f64 = (&x * &col2im3(&y, 2, 4, 4)).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn pool_and_upsample_shapes() {
        let x = Array4::from_shape_fn((1, 2, 4, 4), |(_, c, y, xq)| (c + y + xq) as f64);
        let p = avg_pool2(&x);
        assert_eq!(p.dim(), (1, 2, 2, 2));
        let u = upsample2(&p);
        assert_eq!(u.dim(), (1, 2, 4, 4));
        assert_eq!(p[[0, 0, 0, 0]], (0.0 + 1.0 + 1.0 + 2.0) / 4.0);
    }
}
