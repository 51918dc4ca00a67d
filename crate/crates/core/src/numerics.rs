//! Dense vectors and matrices, orthonormalization and null spaces.
//!
//! Everything here is deliberately small: row-major `f64` storage, no
//! blocking, no SIMD. The dimensions this crate works at (a few thousand
//! features, tangent spaces of a few hundred directions) do not need more.

use std::ops::{Add, Deref, DerefMut, Index, IndexMut, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Default tolerances, in one place.
pub mod tolerances {
    /// Columns whose residual after orthogonalization is below this fraction
    /// of the largest column norm are treated as linearly dependent.
    pub const RANK_TOL: f64 = 1e-10;
    /// Allowed deviation of a Gram matrix from the identity.
    pub const ORTHONORMAL_TOL: f64 = 1e-10;
    /// File-loaded bases within this of orthonormal are accepted verbatim;
    /// beyond it they are re-orthonormalized.
    pub const FILE_BASIS_TOL: f64 = 1e-8;
    /// Allowed asymmetry for matrices handed to the Gershgorin test.
    pub const SYMMETRY_TOL: f64 = 1e-8;
}

/// A real vector in feature coordinates.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(entries: Vec<f64>) -> Self {
        Vector(entries)
    }

    pub fn zeros(len: usize) -> Self {
        Vector(vec![0.0; len])
    }

    /// The `i`-th standard basis vector of `R^len`.
    pub fn unit(len: usize, i: usize) -> Self {
        let mut v = Self::zeros(len);
        v[i] = 1.0;
        v
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        self.iter().zip(other.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn norm_squared(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn norm_l1(&self) -> f64 {
        self.iter().map(|a| a.abs()).sum()
    }

    pub fn scaled(&self, factor: f64) -> Vector {
        Vector(self.iter().map(|a| a * factor).collect())
    }

    /// `self += factor * other`.
    pub fn axpy(&mut self, factor: f64, other: &Vector) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += factor * b;
        }
    }

    pub fn hadamard(&self, other: &Vector) -> Vector {
        debug_assert_eq!(self.len(), other.len());
        Vector(self.iter().zip(other.iter()).map(|(a, b)| a * b).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|a| a.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |m, a| m.max(a.abs()))
    }

    pub fn max_abs_diff(&self, other: &Vector) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        self.iter()
            .zip(other.iter())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn distance(&self, other: &Vector) -> f64 {
        (self - other).norm()
    }
}

impl Deref for Vector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Vector(v)
    }
}

impl From<&[f64]> for Vector {
    fn from(v: &[f64]) -> Self {
        Vector(v.to_vec())
    }
}

impl<const N: usize> From<[f64; N]> for Vector {
    fn from(v: [f64; N]) -> Self {
        Vector(v.to_vec())
    }
}

impl FromIterator<f64> for Vector {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        Vector(iter.into_iter().collect())
    }
}

impl Add for &Vector {
    type Output = Vector;
    fn add(self, rhs: &Vector) -> Vector {
        debug_assert_eq!(self.len(), rhs.len());
        self.iter().zip(rhs.iter()).map(|(a, b)| a + b).collect()
    }
}

impl Sub for &Vector {
    type Output = Vector;
    fn sub(self, rhs: &Vector) -> Vector {
        debug_assert_eq!(self.len(), rhs.len());
        self.iter().zip(rhs.iter()).map(|(a, b)| a - b).collect()
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            entries: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        check_dim(rows * cols, entries.len())?;
        Ok(Matrix {
            rows,
            cols,
            entries,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut entries = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_dim(cols, r.len())?;
            entries.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            entries,
        })
    }

    /// Builds a matrix whose `j`-th column is `columns[j]`.
    pub fn from_columns(columns: &[Vector]) -> Result<Self> {
        let rows = columns.first().map_or(0, |c| c.len());
        let mut m = Self::zeros(rows, columns.len());
        for (j, c) in columns.iter().enumerate() {
            check_dim(rows, c.len())?;
            for (i, v) in c.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [f64] {
        &mut self.entries
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vector {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn columns(&self) -> Vec<Vector> {
        (0..self.cols).map(|j| self.column(j)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn mul_vec(&self, v: &[f64]) -> Result<Vector> {
        check_dim(self.cols, v.len())?;
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// `selfᵀ v`.
    pub fn mul_vec_transposed(&self, v: &[f64]) -> Result<Vector> {
        check_dim(self.rows, v.len())?;
        let mut out = vec![0.0; self.cols];
        for (i, vi) in v.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        Ok(Vector(out))
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        check_dim(self.cols, other.rows)?;
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                let dst = &mut out.entries[i * other.cols..(i + 1) * other.cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|a| a.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.entries
            .iter()
            .zip(&other.entries)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Largest `|m_ij - m_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols.min(self.rows) {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    /// `(M + Mᵀ) / 2`; requires a square matrix.
    pub fn symmetrized(&self) -> Matrix {
        let mut s = self.clone();
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let avg = 0.5 * (self[(i, j)] + self[(j, i)]);
                s[(i, j)] = avg;
                s[(j, i)] = avg;
            }
        }
        s
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.entries[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.entries[i * self.cols + j]
    }
}

/// `k` mutually orthogonal unit vectors in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthonormalBasis {
    ambient_dim: usize,
    vectors: Vec<Vector>,
}

impl OrthonormalBasis {
    /// Wraps vectors that are already orthonormal, checking the Gram matrix
    /// against the identity with tolerance `tol`.
    pub fn from_orthonormal(ambient_dim: usize, vectors: Vec<Vector>, tol: f64) -> Result<Self> {
        for v in &vectors {
            check_dim(ambient_dim, v.len())?;
        }
        let basis = OrthonormalBasis {
            ambient_dim,
            vectors,
        };
        let err = basis.orthonormality_error();
        if err > tol {
            return Err(Error::NotABasis(format!(
                "Gram matrix differs from identity by {err:e}"
            )));
        }
        Ok(basis)
    }

    /// The first `count` standard basis vectors indexed by `axes`.
    pub fn axes(ambient_dim: usize, axes: &[usize]) -> Result<Self> {
        let mut seen = vec![false; ambient_dim];
        let mut vectors = Vec::with_capacity(axes.len());
        for &a in axes {
            if a >= ambient_dim || seen[a] {
                return Err(Error::NotABasis(format!("axis {a} invalid or repeated")));
            }
            seen[a] = true;
            vectors.push(Vector::unit(ambient_dim, a));
        }
        Ok(OrthonormalBasis {
            ambient_dim,
            vectors,
        })
    }

    pub fn standard(ambient_dim: usize) -> Self {
        OrthonormalBasis {
            ambient_dim,
            vectors: (0..ambient_dim).map(|i| Vector::unit(ambient_dim, i)).collect(),
        }
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn count(&self) -> usize {
        self.vectors.len()
    }

    pub fn vectors(&self) -> &[Vector] {
        &self.vectors
    }

    /// Coordinates `⟨v, b_i⟩` of `v` in this basis.
    pub fn coefficients(&self, v: &Vector) -> Result<Vec<f64>> {
        check_dim(self.ambient_dim, v.len())?;
        Ok(self.vectors.iter().map(|b| b.dot(v)).collect())
    }

    /// Orthogonal projection of `v` onto the span.
    pub fn project(&self, v: &Vector) -> Result<Vector> {
        let coeffs = self.coefficients(v)?;
        let mut out = Vector::zeros(self.ambient_dim);
        for (c, b) in coeffs.iter().zip(&self.vectors) {
            out.axpy(*c, b);
        }
        Ok(out)
    }

    /// Basis vectors as the columns of a `d × k` matrix.
    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_columns(&self.vectors).expect("basis vectors share a dimension")
    }

    /// `max |⟨b_i, b_j⟩ − δ_ij|`.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, a) in self.vectors.iter().enumerate() {
            for (j, b) in self.vectors.iter().enumerate().skip(i) {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((a.dot(b) - target).abs());
            }
        }
        worst
    }

    /// Appends the vectors of `other`; the caller guarantees orthogonality.
    pub fn concat(&self, other: &OrthonormalBasis) -> Result<OrthonormalBasis> {
        check_dim(self.ambient_dim, other.ambient_dim)?;
        let mut vectors = self.vectors.clone();
        vectors.extend(other.vectors.iter().cloned());
        Ok(OrthonormalBasis {
            ambient_dim: self.ambient_dim,
            vectors,
        })
    }
}

/// Orthonormalizes the columns of `cols` with the default rank tolerance.
pub fn orthonormalize(cols: &Matrix) -> Result<OrthonormalBasis> {
    orthonormalize_with(cols, tolerances::RANK_TOL)
}

/// Modified Gram–Schmidt with one reorthogonalization pass.
///
/// A column is dropped when its residual norm falls below
/// `rank_tol · max_j ‖col_j‖`, so a rank-deficient input yields a smaller
/// basis instead of amplified noise.
pub fn orthonormalize_with(cols: &Matrix, rank_tol: f64) -> Result<OrthonormalBasis> {
    let d = cols.rows();
    let columns = cols.columns();
    let scale = columns.iter().map(Vector::norm).fold(0.0, f64::max);
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::AllColumnsDegenerate);
    }
    let threshold = rank_tol * scale;
    let mut accepted: Vec<Vector> = Vec::with_capacity(columns.len());
    for mut c in columns {
        for _ in 0..2 {
            for q in &accepted {
                let r = q.dot(&c);
                c.axpy(-r, q);
            }
        }
        let norm = c.norm();
        if norm > threshold {
            accepted.push(c.scaled(1.0 / norm));
        }
    }
    if accepted.is_empty() {
        return Err(Error::AllColumnsDegenerate);
    }
    Ok(OrthonormalBasis {
        ambient_dim: d,
        vectors: accepted,
    })
}

/// Orthonormal basis of the orthogonal complement of `basis`.
///
/// Completes the input with standard basis vectors in index order, keeping a
/// candidate when its residual exceeds `1/(2√d)`. Some standard vector always
/// clears that bar while the complement is incomplete, because the squared
/// distances of `e_1..e_d` to a proper subspace sum to at least one.
pub fn null_space(basis: &OrthonormalBasis) -> Result<OrthonormalBasis> {
    let d = basis.ambient_dim();
    let n = basis.count();
    if n >= d {
        return Err(Error::FullRankInput);
    }
    let threshold = 0.5 / (d as f64).sqrt();
    let mut complement: Vec<Vector> = Vec::with_capacity(d - n);
    for k in 0..d {
        if complement.len() == d - n {
            break;
        }
        let mut r = Vector::unit(d, k);
        for _ in 0..2 {
            for q in basis.vectors().iter().chain(&complement) {
                let c = q.dot(&r);
                if c != 0.0 {
                    r.axpy(-c, q);
                }
            }
        }
        let norm = r.norm();
        if norm > threshold {
            complement.push(r.scaled(1.0 / norm));
        }
    }
    debug_assert_eq!(complement.len(), d - n);
    Ok(OrthonormalBasis {
        ambient_dim: d,
        vectors: complement,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gram_error(q: &OrthonormalBasis) -> f64 {
        q.orthonormality_error()
    }

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        let entries = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::from_row_major(rows, cols, entries).unwrap()
    }

    #[test]
    fn axis_scaling_is_normalized() {
        let m = Matrix::from_columns(&[Vector::from([2.0, 0.0]), Vector::from([0.0, 3.0])]).unwrap();
        let q = orthonormalize(&m).unwrap();
        assert_eq!(q.vectors(), &[Vector::from([1.0, 0.0]), Vector::from([0.0, 1.0])]);
    }

    #[test]
    fn nearly_dependent_column_is_dropped() {
        let m =
            Matrix::from_columns(&[Vector::from([1.0, 0.0]), Vector::from([1.0, 1e-15])]).unwrap();
        let q = orthonormalize(&m).unwrap();
        assert_eq!(q.count(), 1);
        assert_eq!(q.vectors()[0], Vector::from([1.0, 0.0]));
    }

    #[test]
    fn skewed_pair_spans_plane() {
        let m = Matrix::from_columns(&[Vector::from([1.0, 1.0]), Vector::from([1.0, 0.0])]).unwrap();
        let q = orthonormalize(&m).unwrap();
        assert_eq!(q.count(), 2);
        // QᵀQ = I computed independently of the checker helper.
        let qm = q.to_matrix();
        let gram = qm.transpose().matmul(&qm).unwrap();
        assert!(gram.max_abs_diff(&Matrix::identity(2)) < 1e-15);
    }

    #[test]
    fn all_zero_columns_error() {
        let m = Matrix::zeros(3, 2);
        assert!(matches!(orthonormalize(&m), Err(Error::AllColumnsDegenerate)));
    }

    #[test]
    fn null_space_of_first_axis() {
        let b = OrthonormalBasis::axes(3, &[0]).unwrap();
        let n = null_space(&b).unwrap();
        assert_eq!(n.count(), 2);
        for v in n.vectors() {
            assert!(v[0].abs() < 1e-15);
        }
        assert!(gram_error(&b.concat(&n).unwrap()) < 1e-12);
    }

    #[test]
    fn null_space_of_diagonal_in_plane() {
        let s = 0.5f64.sqrt();
        let b = OrthonormalBasis::from_orthonormal(2, vec![Vector::from([s, s])], 1e-12).unwrap();
        let n = null_space(&b).unwrap();
        assert_eq!(n.count(), 1);
        let v = &n.vectors()[0];
        let sign = v[0].signum();
        assert!((v[0] - sign * s).abs() < 1e-12 && (v[1] + sign * s).abs() < 1e-12);
    }

    #[test]
    fn null_space_of_random_subspace_completes_basis() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let b = orthonormalize(&random_matrix(&mut rng, 64, 10)).unwrap();
        let n = null_space(&b).unwrap();
        assert_eq!(n.count(), 54);
        let full = b.concat(&n).unwrap().to_matrix();
        let gram = full.transpose().matmul(&full).unwrap();
        assert!(gram.max_abs_diff(&Matrix::identity(64)) < 1e-10);
    }

    #[test]
    fn full_rank_input_rejected() {
        assert!(matches!(
            null_space(&OrthonormalBasis::standard(4)),
            Err(Error::FullRankInput)
        ));
    }

    #[test]
    fn from_orthonormal_rejects_skewed_vectors() {
        let r = OrthonormalBasis::from_orthonormal(
            2,
            vec![Vector::from([1.0, 0.0]), Vector::from([1.0, 1.0])],
            1e-10,
        );
        assert!(matches!(r, Err(Error::NotABasis(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        fn matrix_strategy() -> impl Strategy<Value = Matrix> {
            (2usize..12, 1usize..6).prop_flat_map(|(rows, cols)| {
                let cols = cols.min(rows);
                proptest::collection::vec(-10.0f64..10.0, rows * cols)
                    .prop_map(move |e| Matrix::from_row_major(rows, cols, e).unwrap())
            })
        }

        proptest! {
            #[test]
            fn output_is_orthonormal(m in matrix_strategy()) {
                if let Ok(q) = orthonormalize(&m) {
                    prop_assert!(q.orthonormality_error() < 1e-9);
                }
            }

            #[test]
            fn orthonormalize_is_idempotent(m in matrix_strategy()) {
                if let Ok(q) = orthonormalize(&m) {
                    let q2 = orthonormalize(&q.to_matrix()).unwrap();
                    prop_assert_eq!(q.count(), q2.count());
                    for v in q.vectors() {
                        prop_assert!(v.distance(&q2.project(v).unwrap()) < 1e-9);
                    }
                    for v in q2.vectors() {
                        prop_assert!(v.distance(&q.project(v).unwrap()) < 1e-9);
                    }
                }
            }

            #[test]
            fn basis_plus_null_space_reconstructs(
                m in matrix_strategy(),
                seed in any::<u64>(),
            ) {
                let q = match orthonormalize(&m) { Ok(q) => q, Err(_) => return Ok(()) };
                if q.count() == q.ambient_dim() { return Ok(()); }
                let full = q.concat(&null_space(&q).unwrap()).unwrap();
                prop_assert_eq!(full.count(), q.ambient_dim());
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let v: Vector = (0..q.ambient_dim()).map(|_| rng.random_range(-5.0..5.0)).collect();
                prop_assert!(v.max_abs_diff(&full.project(&v).unwrap()) < 1e-8);
            }
        }
    }
}
