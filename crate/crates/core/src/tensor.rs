//! Dense row-major f64 tensors and the small set of linear-algebra kernels
//! the training engine is built on.
//!
//! Every kernel accumulates in a fixed order, so results are reproducible
//! bit-for-bit across runs on the same inputs.

use serde::{Deserialize, Serialize};

/// Row-major n-dimensional array of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    /// Zero-filled tensor with the given shape.
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    /// Tensor wrapping existing data. Panics if the element count does not
    /// match the shape.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    /// Total number of elements.
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Number of rows when viewed as a matrix (first axis).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Elements per row when viewed as a matrix (product of trailing axes).
    pub fn row_size(&self) -> usize {
        self.shape[1..].iter().product()
    }

    /// Borrow row `i` of the matrix view.
    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.row_size();
        &self.data[i * w..(i + 1) * w]
    }

    /// Mutably borrow row `i` of the matrix view.
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.row_size();
        &mut self.data[i * w..(i + 1) * w]
    }

    /// Same data, new shape. Panics if the element count changes.
    pub fn reshaped(&self, shape: &[usize]) -> Tensor {
        Tensor::from_vec(shape, self.data.clone())
    }

    /// Squared Euclidean norm of all elements.
    pub fn sq_l2(&self) -> f64 {
        dot(&self.data, &self.data)
    }

    /// True when every element is finite.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

// --- kernels ---------------------------------------------------------------

/// Dot product with four-lane accumulation. The lane split is fixed, so the
/// summation order (and therefore the rounding) never varies.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let split = a.len() - a.len() % 4;
    let (a4, a_tail) = a.split_at(split);
    let (b4, b_tail) = b.split_at(split);
    let mut acc = [0.0f64; 4];
    for (ca, cb) in a4.chunks_exact(4).zip(b4.chunks_exact(4)) {
        acc[0] += ca[0] * cb[0];
        acc[1] += ca[1] * cb[1];
        acc[2] += ca[2] * cb[2];
        acc[3] += ca[3] * cb[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in a_tail.iter().zip(b_tail) {
        s += x * y;
    }
    s
}

/// y += alpha * x
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// C = A * B^T for A (m,k) and B (n,k); C is (m,n).
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let ai = &a[i * k..(i + 1) * k];
        let ci = &mut c[i * n..(i + 1) * n];
        for (j, cij) in ci.iter_mut().enumerate() {
            *cij = dot(ai, &b[j * k..(j + 1) * k]);
        }
    }
}

/// C += A * B for A (m,k) and B (k,n); C is (m,n).
pub fn matmul_nn_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let ci = &mut c[i * n..(i + 1) * n];
        for l in 0..k {
            axpy(a[i * k + l], &b[l * n..(l + 1) * n], ci);
        }
    }
}

/// C += A^T * B for A (k,m) and B (k,n); C is (m,n).
pub fn matmul_tn_acc(a: &[f64], b: &[f64], k: usize, m: usize, n: usize, c: &mut [f64]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for l in 0..k {
        let bl = &b[l * n..(l + 1) * n];
        for i in 0..m {
            axpy(a[l * m + i], bl, &mut c[i * n..(i + 1) * n]);
        }
    }
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

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

    fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
        let mut t = vec![0.0; a.len()];
        for i in 0..rows {
            for j in 0..cols {
                t[j * rows + i] = a[i * cols + j];
            }
        }
        t
    }

    #[test]
    fn dot_matches_naive_sum() {
        let a: Vec<f64> = (0..13).map(|i| i as f64 * 0.25 - 1.0).collect();
        let b: Vec<f64> = (0..13).map(|i| (i as f64).sin()).collect();
        let expect: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - expect).abs() < 1e-12);
    }

    #[test]
    fn matmul_nt_matches_naive() {
        let (m, n, k) = (3, 5, 7);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).cos()).collect();
        let b: Vec<f64> = (0..n * k).map(|i| (i as f64 * 0.11).sin()).collect();
        let mut c = vec![0.0; m * n];
        matmul_nt(&a, &b, m, n, k, &mut c);
        let expect = naive_matmul(&a, &transpose(&b, n, k), m, k, n);
        for (x, y) in c.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_nn_acc_matches_naive() {
        let (m, k, n) = (4, 6, 3);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.7).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.3).cos()).collect();
        let mut c = vec![0.0; m * n];
        matmul_nn_acc(&a, &b, m, k, n, &mut c);
        let expect = naive_matmul(&a, &b, m, k, n);
        for (x, y) in c.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_tn_acc_matches_naive() {
        let (k, m, n) = (5, 4, 6);
        let a: Vec<f64> = (0..k * m).map(|i| (i as f64 * 0.21).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.43).cos()).collect();
        let mut c = vec![0.0; m * n];
        matmul_tn_acc(&a, &b, k, m, n, &mut c);
        let expect = naive_matmul(&transpose(&a, k, m), &b, m, k, n);
        for (x, y) in c.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn tensor_shape_helpers() {
        let t = Tensor::zeros(&[2, 3, 4]);
        assert_eq!(t.numel(), 24);
        assert_eq!(t.rows(), 2);
        assert_eq!(t.row_size(), 12);
        let r = t.reshaped(&[6, 4]);
        assert_eq!(r.rows(), 6);
    }

    #[test]
    #[should_panic]
    fn from_vec_rejects_bad_shape() {
        Tensor::from_vec(&[2, 2], vec![1.0; 5]);
    }
}
