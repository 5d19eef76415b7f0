//! Dense vector/matrix helpers used by the surrogate models.
//!
//! Everything here is f64 and single-threaded. The dot/axpy kernels are
//! written with independent accumulators so LLVM can vectorize them; the
//! summation order is fixed, which keeps results bit-reproducible.

/// Dot product with eight independent accumulators.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 8;
    let mut acc = [0.0f64; 8];
    for i in 0..chunks {
        let j = i * 8;
        let (aj, bj) = (&a[j..j + 8], &b[j..j + 8]);
        for k in 0..8 {
            acc[k] += aj[k] * bj[k];
        }
    }
    let mut tail = 0.0;
    for j in chunks * 8..n {
        tail += a[j] * b[j];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// y += alpha * x
#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Square matrix, row-major.
#[derive(Debug, Clone)]
pub(crate) struct SquareMat {
    pub n: usize,
    pub data: Vec<f64>,
}

impl SquareMat {
    pub fn zeros(n: usize) -> Self {
        SquareMat { n, data: vec![0.0; n * n] }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

/// In-place lower Cholesky factorization. Fails on a non-positive pivot.
pub(crate) fn cholesky_in_place(a: &mut SquareMat) -> Result<(), ()> {
    let n = a.n;
    for j in 0..n {
        let mut d = a.at(j, j);
        for k in 0..j {
            let l = a.at(j, k);
            d -= l * l;
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(());
        }
        let d = d.sqrt();
        a.set(j, j, d);
        for i in j + 1..n {
            let mut s = a.at(i, j);
            let (ri, rj) = (i * n, j * n);
            s -= dot(&a.data[ri..ri + j], &a.data[rj..rj + j]);
            a.set(i, j, s / d);
        }
        for k in j + 1..n {
            a.set(j, k, 0.0);
        }
    }
    Ok(())
}

/// Solve L v = b by forward substitution (L lower-triangular).
pub(crate) fn solve_lower(l: &SquareMat, b: &[f64]) -> Vec<f64> {
    let n = l.n;
    let mut v = vec![0.0; n];
    for i in 0..n {
        let s = dot(&l.row(i)[..i], &v[..i]);
        v[i] = (b[i] - s) / l.at(i, i);
    }
    v
}

/// Solve L^T w = b by backward substitution.
pub(crate) fn solve_lower_transpose(l: &SquareMat, b: &[f64]) -> Vec<f64> {
    let n = l.n;
    let mut w = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l.at(k, i) * w[k];
        }
        w[i] = s / l.at(i, i);
    }
    w
}
