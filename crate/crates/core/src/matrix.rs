//! Small dense symmetric matrices.
//!
//! Everything here targets n up to about 10 (ellipsoid shapes) and N up to a
//! few dozen (graph Laplacians), so storage is a full row-major `Vec<f64>` and
//! all factorizations are direct.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used when accepting a matrix as symmetric.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Dense symmetric matrix. May be indefinite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_diag(&vec![1.0; dim])
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * diag.len() + i] = d;
        }
        m
    }

    /// Builds from row-major entries, rejecting asymmetry above
    /// `SYMMETRY_TOL * max(1, max|a_ij|)` and averaging away the rest.
    pub fn from_row_major(dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: data.len(),
            });
        }
        let scale = data.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
        let mut asym = 0.0_f64;
        for i in 0..dim {
            for j in (i + 1)..dim {
                asym = asym.max((data[i * dim + j] - data[j * dim + i]).abs());
            }
        }
        if !asym.is_finite() || asym > SYMMETRY_TOL * scale {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        let mut m = Self { dim, data };
        m.symmetrize();
        Ok(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::from_row_major(dim, data)
    }

    /// Builds from a closure over the upper triangle (`i <= j`).
    pub fn from_upper_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                let v = f(i, j);
                m.data[i * dim + j] = v;
                m.data[j * dim + i] = v;
            }
        }
        m
    }

    /// Number of independent entries, n(n+1)/2.
    pub fn packed_len(dim: usize) -> usize {
        dim * (dim + 1) / 2
    }

    /// Rebuilds from the upper triangle stored row by row.
    pub fn from_packed(dim: usize, packed: &[f64]) -> Self {
        debug_assert_eq!(packed.len(), Self::packed_len(dim));
        let mut k = 0;
        Self::from_upper_fn(dim, |_, _| {
            let v = packed[k];
            k += 1;
            v
        })
    }

    pub fn to_packed(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(Self::packed_len(self.dim));
        for i in 0..self.dim {
            for j in i..self.dim {
                out.push(self.data[i * self.dim + j]);
            }
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    fn symmetrize(&mut self) {
        let n = self.dim;
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (self.data[i * n + j] + self.data[j * n + i]);
                self.data[i * n + j] = avg;
                self.data[j * n + i] = avg;
            }
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|v| a * v).collect(),
        }
    }

    /// `self += a * other`
    pub fn add_scaled(&mut self, a: f64, other: &SymMatrix) {
        debug_assert_eq!(self.dim, other.dim);
        for (s, o) in self.data.iter_mut().zip(&other.data) {
            *s += a * o;
        }
    }

    pub fn mat_vec(&self, y: &[f64]) -> Vec<f64> {
        self.data
            .chunks(self.dim)
            .map(|row| row.iter().zip(y).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn quad_form(&self, y: &[f64]) -> f64 {
        self.mat_vec(y).iter().zip(y).map(|(a, b)| a * b).sum()
    }

    /// tr(A B) for symmetric A, B.
    pub fn trace_product(&self, other: &SymMatrix) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// Dense product, row-major. Not symmetric in general.
    pub fn matmul(&self, other: &SymMatrix) -> Vec<f64> {
        let n = self.dim;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                for j in 0..n {
                    out[i * n + j] += a * other.data[k * n + j];
                }
            }
        }
        out
    }

    /// Product A B A of symmetric matrices (symmetric again).
    pub fn sandwich(&self, middle: &SymMatrix) -> SymMatrix {
        let n = self.dim;
        let am = self.matmul(middle);
        let mut out = SymMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out.data[i * n + j] = (0..n).map(|k| am[i * n + k] * self.data[k * n + j]).sum();
            }
        }
        out.symmetrize();
        out
    }

    pub fn cholesky(&self) -> Result<Cholesky> {
        Cholesky::factor(self)
    }

    /// Ascending eigenvalues by cyclic Jacobi rotation.
    pub fn eigenvalues(&self) -> Vec<f64> {
        jacobi_eigen(self).values
    }
}

impl TryFrom<Vec<Vec<f64>>> for SymMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        SymMatrix::from_rows(&rows)
    }
}

impl From<SymMatrix> for Vec<Vec<f64>> {
    fn from(m: SymMatrix) -> Self {
        m.rows()
    }
}

/// Lower-triangular Cholesky factor, A = L Lᵀ.
#[derive(Clone, Debug)]
pub struct Cholesky {
    dim: usize,
    l: Vec<f64>,
}

impl Cholesky {
    pub fn factor(a: &SymMatrix) -> Result<Self> {
        let n = a.dim;
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = a.get(j, j);
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: j, value: d });
            }
            let djj = d.sqrt();
            l[j * n + j] = djj;
            for i in (j + 1)..n {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / djj;
            }
        }
        Ok(Self { dim: n, l })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row-major lower factor.
    pub fn lower(&self) -> &[f64] {
        &self.l
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim).map(|i| self.l[i * self.dim + i].ln()).sum::<f64>()
    }

    /// Solves L y = b.
    pub fn forward(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                y[i] -= self.l[i * n + k] * y[k];
            }
            y[i] /= self.l[i * n + i];
        }
        y
    }

    /// Solves Lᵀ x = y.
    pub fn backward(&self, y: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let mut x = y.to_vec();
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                x[i] -= self.l[k * n + i] * x[k];
            }
            x[i] /= self.l[i * n + i];
        }
        x
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.backward(&self.forward(b))
    }

    pub fn inverse(&self) -> SymMatrix {
        let n = self.dim;
        let mut inv = SymMatrix::zeros(n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            for (i, v) in col.into_iter().enumerate() {
                inv.data[i * n + j] = v;
            }
        }
        inv.symmetrize();
        inv
    }
}

/// A symmetric matrix whose Cholesky factorization is known to succeed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SymMatrix", into = "SymMatrix")]
pub struct SpdMatrix(SymMatrix);

impl SpdMatrix {
    pub fn new(m: SymMatrix) -> Result<Self> {
        m.cholesky()?;
        Ok(Self(m))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(SymMatrix::from_rows(rows)?)
    }

    pub fn identity(dim: usize) -> Self {
        Self(SymMatrix::identity(dim))
    }

    pub fn from_diag(diag: &[f64]) -> Result<Self> {
        Self::new(SymMatrix::from_diag(diag))
    }

    pub fn as_sym(&self) -> &SymMatrix {
        &self.0
    }

    pub fn into_sym(self) -> SymMatrix {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim
    }

    pub fn cholesky(&self) -> Cholesky {
        Cholesky::factor(&self.0).expect("SpdMatrix invariant")
    }

    pub fn inverse(&self) -> Result<SpdMatrix> {
        spd_inverse(self)
    }
}

impl std::ops::Deref for SpdMatrix {
    type Target = SymMatrix;
    fn deref(&self) -> &SymMatrix {
        &self.0
    }
}

impl TryFrom<SymMatrix> for SpdMatrix {
    type Error = Error;
    fn try_from(m: SymMatrix) -> Result<Self> {
        SpdMatrix::new(m)
    }
}

impl From<SpdMatrix> for SymMatrix {
    fn from(m: SpdMatrix) -> Self {
        m.0
    }
}

pub fn cholesky(a: &SymMatrix) -> Result<Cholesky> {
    Cholesky::factor(a)
}

/// Inverse through the Cholesky factor. Fails only when roundoff on a badly
/// conditioned input breaks definiteness of the result.
pub fn spd_inverse(a: &SpdMatrix) -> Result<SpdMatrix> {
    SpdMatrix::new(a.cholesky().inverse())
}

pub struct Eigen {
    /// Ascending.
    pub values: Vec<f64>,
    /// Column `k` (stored row-major as `vectors[i * n + k]`) pairs with `values[k]`.
    pub vectors: Vec<f64>,
}

/// Cyclic Jacobi eigensolver for symmetric matrices.
pub fn jacobi_eigen(m: &SymMatrix) -> Eigen {
    let n = m.dim;
    let mut a = m.data.clone();
    let mut v = SymMatrix::identity(n).data;
    let scale = m.frobenius().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i * n + i].total_cmp(&a[j * n + j]));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (new_col, &old_col) in order.iter().enumerate() {
        for row in 0..n {
            vectors[row * n + new_col] = v[row * n + old_col];
        }
    }
    Eigen { values, vectors }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> SpdMatrix {
        let m: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = SymMatrix::from_upper_fn(n, |i, j| {
            (0..n).map(|k| m[k * n + i] * m[k * n + j]).sum::<f64>() + if i == j { 0.1 } else { 0.0 }
        });
        SpdMatrix::new(a).unwrap()
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).fold(0.0, |acc, (x, y)| acc.max((x - y).abs()))
    }

    #[test]
    fn cholesky_identity_and_diagonal() {
        let l = SymMatrix::identity(2).cholesky().unwrap();
        assert_eq!(l.lower(), &[1.0, 0.0, 0.0, 1.0]);
        let l = SymMatrix::from_diag(&[4.0, 9.0]).cholesky().unwrap();
        assert_eq!(l.lower(), &[2.0, 0.0, 0.0, 3.0]);
    }

    #[test]
    fn cholesky_remultiplies() {
        let a = SymMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let l = a.cholesky().unwrap();
        let f = l.lower();
        let mut llt = [0.0; 4];
        for i in 0..2 {
            for j in 0..2 {
                llt[i * 2 + j] = (0..2).map(|k| f[i * 2 + k] * f[j * 2 + k]).sum();
            }
        }
        let err: f64 = llt.iter().zip(a.as_slice()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!(err / a.frobenius() < 1e-10);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = SymMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(a.cholesky(), Err(Error::NotPositiveDefinite { pivot: 1, .. })));
        let z = SymMatrix::zeros(2);
        assert!(matches!(z.cholesky(), Err(Error::NotPositiveDefinite { pivot: 0, .. })));
    }

    #[test]
    fn rejects_asymmetric_input() {
        let r = SymMatrix::from_rows(&[vec![1.0, 0.5], vec![0.4, 1.0]]);
        assert!(matches!(r, Err(Error::NotSymmetric { .. })));
        let tiny = SymMatrix::from_rows(&[vec![1.0, 0.5], vec![0.5 + 1e-15, 1.0]]).unwrap();
        assert_eq!(tiny.get(0, 1), tiny.get(1, 0));
    }

    #[test]
    fn inverse_examples() {
        let inv = spd_inverse(&SpdMatrix::identity(3)).unwrap();
        assert_eq!(inv.as_slice(), SymMatrix::identity(3).as_slice());
        let inv = spd_inverse(&SpdMatrix::from_diag(&[2.0, 4.0]).unwrap()).unwrap();
        assert!(max_abs_diff(inv.as_slice(), &[0.5, 0.0, 0.0, 0.25]) < 1e-15);
    }

    #[test]
    fn inverse_residual_and_involution() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..=6 {
            let a = random_spd(&mut rng, n);
            let inv = spd_inverse(&a).unwrap();
            let prod = a.matmul(&inv);
            let eye = SymMatrix::identity(n);
            assert!(max_abs_diff(&prod, eye.as_slice()) < 1e-9, "n = {n}");
            let back = spd_inverse(&inv).unwrap();
            let rel = max_abs_diff(back.as_slice(), a.as_slice()) / a.max_abs();
            assert!(rel < 1e-8, "n = {n}, rel = {rel}");
        }
    }

    #[test]
    fn log_det_matches_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_spd(&mut rng, 4);
        let from_eig: f64 = a.eigenvalues().iter().map(|v| v.ln()).sum();
        assert!((a.cholesky().log_det() - from_eig).abs() < 1e-10);
    }

    #[test]
    fn jacobi_matches_nalgebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [1, 2, 5, 9] {
            let vals: Vec<f64> = (0..n * n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let a = SymMatrix::from_upper_fn(n, |i, j| vals[i * n + j] + vals[j * n + i]);
            let ours = a.eigenvalues();
            let na = nalgebra::DMatrix::from_row_slice(n, n, a.as_slice());
            let mut theirs: Vec<f64> = na.symmetric_eigen().eigenvalues.iter().copied().collect();
            theirs.sort_by(f64::total_cmp);
            assert!(max_abs_diff(&ours, &theirs) < 1e-10, "n = {n}");
        }
    }

    #[test]
    fn jacobi_eigenvectors_diagonalize() {
        let a = SymMatrix::from_rows(&[
            vec![2.0, -1.0, 0.0],
            vec![-1.0, 2.0, -1.0],
            vec![0.0, -1.0, 2.0],
        ])
        .unwrap();
        let eig = jacobi_eigen(&a);
        for k in 0..3 {
            let v: Vec<f64> = (0..3).map(|i| eig.vectors[i * 3 + k]).collect();
            let av = a.mat_vec(&v);
            for i in 0..3 {
                assert!((av[i] - eig.values[k] * v[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn packed_roundtrip() {
        let a = SymMatrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![2.0, 4.0, 5.0], vec![3.0, 5.0, 6.0]]).unwrap();
        assert_eq!(a.to_packed(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(SymMatrix::from_packed(3, &a.to_packed()), a);
    }
}
