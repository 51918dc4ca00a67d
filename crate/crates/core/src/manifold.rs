//! Tangent spaces of the data manifold and the tangent-fraction measure.
//!
//! A [`TangentBasis`] holds an orthonormal basis `τ_1..τ_n` of `T_xM` at a
//! point `x`. With it,
//!
//! * `π_x(v) = Σ ⟨v, τ_ℓ⟩ τ_ℓ` is the tangent projection,
//! * `π_x^⊥(v) = v − π_x(v)` the normal projection, and
//! * `μ_x(v) = ‖π_x v‖² / ‖v‖²` measures how much of `v` is tangent:
//!   1 for tangent vectors, 0 for normal ones.
//!
//! [`ManifoldProvider`] produces tangent bases: analytic ones (coordinate
//! subspaces, spheres) used as oracles, the span of an autoencoder's decoder
//! Jacobian for real data, or a fixed basis loaded from a file.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{check_dim, Error, Result};
use crate::nn::{AutoencoderPair, Model};
use crate::numerics::{orthonormalize, tolerances, Matrix, OrthonormalBasis, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct TangentBasis {
    point: Vector,
    basis: OrthonormalBasis,
}

impl TangentBasis {
    pub fn new(point: Vector, basis: OrthonormalBasis) -> Result<Self> {
        check_dim(basis.ambient_dim(), point.len())?;
        if basis.count() >= basis.ambient_dim() {
            return Err(Error::DegenerateTangent(
                "tangent space must be a proper subspace".into(),
            ));
        }
        Ok(TangentBasis { point, basis })
    }

    pub fn point(&self) -> &Vector {
        &self.point
    }

    pub fn basis(&self) -> &OrthonormalBasis {
        &self.basis
    }

    /// Ambient dimension `d`.
    pub fn ambient_dim(&self) -> usize {
        self.basis.ambient_dim()
    }

    /// Tangent dimension `n`.
    pub fn dim(&self) -> usize {
        self.basis.count()
    }

    pub fn project_tangent(&self, v: &Vector) -> Result<Vector> {
        self.basis.project(v)
    }

    pub fn project_normal(&self, v: &Vector) -> Result<Vector> {
        let t = self.project_tangent(v)?;
        Ok(v - &t)
    }

    /// `μ_x(v) = ‖π_x v‖² / ‖v‖²`.
    pub fn tangent_fraction(&self, v: &Vector) -> Result<f64> {
        check_dim(self.ambient_dim(), v.len())?;
        let total = v.norm_squared();
        if total == 0.0 {
            return Err(Error::ZeroVector);
        }
        // ‖π_x v‖² equals the squared coefficient sum because the basis is
        // orthonormal.
        let tangent: f64 = self.basis.coefficients(v)?.iter().map(|c| c * c).sum();
        Ok((tangent / total).clamp(0.0, 1.0))
    }

    /// `‖π_x v‖ / ‖v‖`, the square root of [`Self::tangent_fraction`].
    pub fn norm_fraction(&self, v: &Vector) -> Result<f64> {
        Ok(self.tangent_fraction(v)?.sqrt())
    }
}

/// Expected `μ_x` of an isotropic random vector: `n / d`.
pub fn random_tangent_fraction(n: usize, d: usize) -> f64 {
    n as f64 / d as f64
}

/// The `√(n/d)` reference line for norm fractions of random vectors.
pub fn random_norm_fraction_reference(n: usize, d: usize) -> f64 {
    random_tangent_fraction(n, d).sqrt()
}

/// Exact mean of `‖π v‖/‖v‖` for isotropic `v`.
///
/// The squared fraction is `Beta(n/2, (d−n)/2)`, so its square root has mean
/// `Γ(a+½)Γ(a+b) / (Γ(a)Γ(a+b+½))`. For small `n` this sits noticeably
/// below `√(n/d)`.
pub fn random_norm_fraction_mean(n: usize, d: usize) -> f64 {
    let a = n as f64 / 2.0;
    let b = (d - n) as f64 / 2.0;
    (ln_gamma(a + 0.5) + ln_gamma(a + b) - ln_gamma(a) - ln_gamma(a + b + 0.5)).exp()
}

/// Lanczos approximation (g = 7, 9 terms), accurate to ~1e-15 for x > 0.
fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEFFS: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEFFS[0];
    for (i, c) in COEFFS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Source of tangent spaces.
#[derive(Debug, Clone)]
pub enum ManifoldProvider {
    /// The coordinate subspace spanned by `axes` in `R^dim`.
    LinearSubspace { dim: usize, axes: Vec<usize> },
    /// A sphere of `radius` living in the first `sphere_dims` coordinates of
    /// `R^dim`. The tangent space at `x` is the orthogonal complement of
    /// `x/‖x‖` inside those coordinates.
    Sphere {
        dim: usize,
        sphere_dims: usize,
        radius: f64,
    },
    /// Span of the decoder Jacobian at the encoding of `x`.
    Decoder(AutoencoderPair),
    /// One fixed basis read from a tangent-basis file.
    File { path: PathBuf, basis: OrthonormalBasis },
}

impl ManifoldProvider {
    pub fn subspace(dim: usize, axes: Vec<usize>) -> Result<Self> {
        OrthonormalBasis::axes(dim, &axes)?;
        if axes.is_empty() || axes.len() >= dim {
            return Err(Error::DegenerateTangent(format!(
                "{} axes in R^{dim}",
                axes.len()
            )));
        }
        Ok(ManifoldProvider::LinearSubspace { dim, axes })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let basis = read_tangent_basis(path)?;
        if basis.count() >= basis.ambient_dim() {
            return Err(Error::format(path, "tangent basis must have n < d"));
        }
        Ok(ManifoldProvider::File {
            path: path.to_path_buf(),
            basis,
        })
    }

    /// Ambient dimension, when the provider fixes it.
    pub fn ambient_dim(&self) -> usize {
        match self {
            ManifoldProvider::LinearSubspace { dim, .. } | ManifoldProvider::Sphere { dim, .. } => *dim,
            ManifoldProvider::Decoder(ae) => ae.encoder().input_dim(),
            ManifoldProvider::File { basis, .. } => basis.ambient_dim(),
        }
    }

    pub fn tangent_basis_at(&self, x: &Vector) -> Result<TangentBasis> {
        check_dim(self.ambient_dim(), x.len())?;
        let basis = match self {
            ManifoldProvider::LinearSubspace { dim, axes } => OrthonormalBasis::axes(*dim, axes)?,
            ManifoldProvider::Sphere {
                dim, sphere_dims, ..
            } => sphere_tangent(*dim, *sphere_dims, x)?,
            ManifoldProvider::Decoder(ae) => {
                let z = ae.encoder().forward(x)?;
                let jac = ae.decoder().decoder_jacobian(&z)?;
                orthonormalize(&jac).map_err(|e| match e {
                    Error::AllColumnsDegenerate => {
                        Error::DegenerateTangent("decoder Jacobian has rank 0".into())
                    }
                    other => other,
                })?
            }
            ManifoldProvider::File { basis, .. } => basis.clone(),
        };
        TangentBasis::new(x.clone(), basis)
    }
}

fn sphere_tangent(dim: usize, sphere_dims: usize, x: &Vector) -> Result<OrthonormalBasis> {
    if sphere_dims < 2 || sphere_dims > dim {
        return Err(Error::DegenerateTangent(format!(
            "sphere in {sphere_dims} of {dim} coordinates"
        )));
    }
    let r = x[..sphere_dims].iter().map(|v| v * v).sum::<f64>().sqrt();
    if r == 0.0 {
        return Err(Error::DegenerateTangent("point at the sphere's centre".into()));
    }
    // Radial direction first, so orthonormalization removes it from the
    // axis columns that follow; then drop it.
    let mut cols = Vec::with_capacity(sphere_dims + 1);
    let mut radial = Vector::zeros(dim);
    radial[..sphere_dims].copy_from_slice(&x[..sphere_dims]);
    cols.push(radial.scaled(1.0 / r));
    cols.extend((0..sphere_dims).map(|i| Vector::unit(dim, i)));
    let full = orthonormalize(&Matrix::from_columns(&cols)?)?;
    let tangent: Vec<Vector> = full.vectors()[1..].to_vec();
    OrthonormalBasis::from_orthonormal(dim, tangent, tolerances::ORTHONORMAL_TOL)
}

/// Reads a tangent-basis file: a header line `TGTB d n` followed by `n`
/// lines of `d` whitespace-separated decimals.
///
/// Bases within `1e-8` of orthonormal are taken verbatim; others are
/// re-orthonormalized, which fails if they are rank deficient.
pub fn read_tangent_basis(path: &Path) -> Result<OrthonormalBasis> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tangent_basis(&text).map_err(|reason| Error::format(path, reason))
}

fn parse_tangent_basis(text: &str) -> std::result::Result<OrthonormalBasis, String> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or("empty file")?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 3 || fields[0] != "TGTB" {
        return Err(format!("bad header {header:?}"));
    }
    let d: usize = fields[1].parse().map_err(|_| "bad d in header")?;
    let n: usize = fields[2].parse().map_err(|_| "bad n in header")?;
    let mut vectors = Vec::with_capacity(n);
    for (row, line) in lines.enumerate() {
        if row >= n {
            return Err(format!("more than {n} basis rows"));
        }
        let v: Vector = line
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| format!("row {row}: {e}"))?
            .into();
        if v.len() != d {
            return Err(format!("row {row} has {} values, expected {d}", v.len()));
        }
        if !v.is_finite() {
            return Err(format!("row {row} has non-finite values"));
        }
        vectors.push(v);
    }
    if vectors.len() != n {
        return Err(format!("expected {n} basis rows, found {}", vectors.len()));
    }
    if n == 0 {
        return Err("basis is empty".into());
    }
    match OrthonormalBasis::from_orthonormal(d, vectors.clone(), tolerances::FILE_BASIS_TOL) {
        Ok(b) => Ok(b),
        Err(_) => {
            let m = Matrix::from_columns(&vectors).map_err(|e| e.to_string())?;
            let b = orthonormalize(&m).map_err(|e| e.to_string())?;
            if b.count() != n {
                return Err(format!("basis rows have rank {} < {n}", b.count()));
            }
            Ok(b)
        }
    }
}

/// Formats a basis in the tangent-basis file layout, using shortest
/// round-trip decimals.
pub fn format_tangent_basis(basis: &OrthonormalBasis) -> String {
    let mut out = format!("TGTB {} {}\n", basis.ambient_dim(), basis.count());
    for v in basis.vectors() {
        let row: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

pub fn write_tangent_basis(path: &Path, basis: &OrthonormalBasis) -> Result<()> {
    fs::write(path, format_tangent_basis(basis)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, DenseNetwork};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn axes_basis(d: usize, axes: &[usize]) -> TangentBasis {
        TangentBasis::new(Vector::zeros(d), OrthonormalBasis::axes(d, axes).unwrap()).unwrap()
    }

    fn diagonal_basis() -> TangentBasis {
        let s = 0.5f64.sqrt();
        let b = OrthonormalBasis::from_orthonormal(2, vec![Vector::from([s, s])], 1e-12).unwrap();
        TangentBasis::new(Vector::zeros(2), b).unwrap()
    }

    #[test]
    fn subspace_provider_returns_its_axes() {
        let p = ManifoldProvider::subspace(4, vec![0, 1]).unwrap();
        let tb = p.tangent_basis_at(&Vector::from([0.3, -1.0, 2.0, 5.0])).unwrap();
        assert_eq!(tb.basis().vectors(), &[Vector::unit(4, 0), Vector::unit(4, 1)]);
    }

    #[test]
    fn sphere_tangent_at_pole() {
        let p = ManifoldProvider::Sphere {
            dim: 3,
            sphere_dims: 3,
            radius: 1.0,
        };
        let tb = p.tangent_basis_at(&Vector::unit(3, 2)).unwrap();
        assert_eq!(tb.dim(), 2);
        for v in tb.basis().vectors() {
            assert!(v[2].abs() < 1e-15);
        }
        let at_origin = p.tangent_basis_at(&Vector::zeros(3));
        assert!(matches!(at_origin, Err(Error::DegenerateTangent(_))));
    }

    #[test]
    fn sphere_tangent_is_orthogonal_to_radius() {
        let p = ManifoldProvider::Sphere {
            dim: 5,
            sphere_dims: 4,
            radius: 1.0,
        };
        let x = Vector::from([0.3, -0.4, 0.1, 0.5, 0.0]);
        let tb = p.tangent_basis_at(&x).unwrap();
        assert_eq!(tb.dim(), 3);
        for v in tb.basis().vectors() {
            assert!(v.dot(&x).abs() < 1e-14);
            assert!(v[4].abs() < 1e-15);
        }
    }

    #[test]
    fn linear_decoder_with_orthonormal_columns() {
        let s = 0.5f64.sqrt();
        let a = Matrix::from_rows(&[vec![s, 0.0], vec![s, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let dec = DenseNetwork::linear(a.clone(), Vector::zeros(4)).unwrap();
        let enc = DenseNetwork::linear(a.transpose(), Vector::zeros(2)).unwrap();
        let p = ManifoldProvider::Decoder(AutoencoderPair::new(enc, dec).unwrap());
        let tb = p.tangent_basis_at(&Vector::from([1.0, 2.0, 3.0, 4.0])).unwrap();
        for (j, v) in tb.basis().vectors().iter().enumerate() {
            assert!(v.max_abs_diff(&a.column(j)) < 1e-15);
        }
    }

    #[test]
    fn constant_decoder_is_degenerate() {
        let enc = DenseNetwork::linear(Matrix::zeros(1, 3), Vector::zeros(1)).unwrap();
        let dec = DenseNetwork::linear(Matrix::zeros(3, 1), Vector::from([1.0, 1.0, 1.0])).unwrap();
        let p = ManifoldProvider::Decoder(AutoencoderPair::new(enc, dec).unwrap());
        assert!(matches!(
            p.tangent_basis_at(&Vector::zeros(3)),
            Err(Error::DegenerateTangent(_))
        ));
    }

    #[test]
    fn decoder_basis_spans_jacobian_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let enc = DenseNetwork::random(&[6, 5, 2], Activation::Softplus, Activation::Identity, &mut rng).unwrap();
        let dec = DenseNetwork::random(&[2, 5, 6], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let ae = AutoencoderPair::new(enc, dec).unwrap();
        let x = Vector::from([0.1, 0.2, -0.3, 0.4, 0.0, 0.9]);
        let jac = ae.decoder().decoder_jacobian(&ae.encoder().forward(&x).unwrap()).unwrap();
        let tb = ManifoldProvider::Decoder(ae).tangent_basis_at(&x).unwrap();
        assert_eq!(tb.dim(), 2);
        for col in jac.columns() {
            assert!(tb.project_normal(&col).unwrap().norm() < 1e-8 * col.norm().max(1.0));
        }
    }

    #[test]
    fn projections_on_axes() {
        let tb = axes_basis(3, &[0, 1]);
        let v = Vector::from([3.0, 4.0, 5.0]);
        assert_eq!(tb.project_tangent(&v).unwrap(), Vector::from([3.0, 4.0, 0.0]));
        assert_eq!(tb.project_tangent(&Vector::unit(3, 2)).unwrap(), Vector::zeros(3));

        let tb = axes_basis(2, &[0]);
        assert_eq!(tb.project_normal(&Vector::from([3.0, 4.0])).unwrap(), Vector::from([0.0, 4.0]));
        assert_eq!(tb.project_normal(&Vector::from([7.0, 0.0])).unwrap(), Vector::zeros(2));
    }

    #[test]
    fn projection_onto_diagonal() {
        let p = diagonal_basis().project_tangent(&Vector::from([1.0, 0.0])).unwrap();
        assert!(p.max_abs_diff(&Vector::from([0.5, 0.5])) < 1e-15);
    }

    #[test]
    fn tangent_and_normal_parts_sum_to_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tb = ManifoldProvider::Sphere { dim: 6, sphere_dims: 6, radius: 1.0 }
            .tangent_basis_at(&Vector::from([1.0, 2.0, 0.0, -1.0, 0.5, 0.3]))
            .unwrap();
        for _ in 0..20 {
            let v: Vector = (0..6).map(|_| StandardNormal.sample(&mut rng)).collect();
            let sum = &tb.project_tangent(&v).unwrap() + &tb.project_normal(&v).unwrap();
            assert!(sum.distance(&v) < 1e-12);
        }
    }

    #[test]
    fn fractions_on_simple_vectors() {
        let tb = axes_basis(2, &[0]);
        assert_eq!(tb.tangent_fraction(&Vector::unit(2, 0)).unwrap(), 1.0);
        assert_eq!(tb.tangent_fraction(&Vector::unit(2, 1)).unwrap(), 0.0);
        assert!((tb.tangent_fraction(&Vector::from([1.0, 1.0])).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(tb.norm_fraction(&Vector::from([2.0, 0.0])).unwrap(), 1.0);
        assert!((tb.norm_fraction(&Vector::from([1.0, 1.0])).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(matches!(tb.tangent_fraction(&Vector::zeros(2)), Err(Error::ZeroVector)));
        assert!(matches!(tb.norm_fraction(&Vector::zeros(2)), Err(Error::ZeroVector)));
    }

    #[test]
    fn exact_random_norm_fraction_mean() {
        // Values from mpmath at 30 digits.
        assert!((random_norm_fraction_mean(10, 1024) - 0.096_408_776_916_085_65).abs() < 1e-12);
        assert!((random_norm_fraction_mean(144, 3072) - 0.216_148_390_460_531_86).abs() < 1e-12);
        // n = d−1 = 1 in R²: E|cos θ| = 2/π.
        assert!((random_norm_fraction_mean(1, 2) - 2.0 / std::f64::consts::PI).abs() < 1e-13);
    }

    /// Monte Carlo mean of the norm fraction for 10⁵ isotropic vectors with
    /// n = 10, d = 1024, against the exact Beta-distribution mean. The
    /// `√(n/d)` approximation is 0.0988 while the true mean is 0.0964.
    #[test]
    fn norm_fraction_monte_carlo_matches_exact_mean() {
        let (n, d, samples) = (10, 1024, 100_000);
        let tb = axes_basis(d, &(0..n).collect::<Vec<_>>());
        let mut rng = ChaCha8Rng::seed_from_u64(1024);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..samples {
            let v: Vector = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let f = tb.norm_fraction(&v).unwrap();
            sum += f;
            sum_sq += f * f;
        }
        let mean = sum / samples as f64;
        let se = ((sum_sq / samples as f64 - mean * mean) / samples as f64).sqrt();
        let exact = random_norm_fraction_mean(n, d);
        assert!((mean - exact).abs() < 3.0 * se, "mean {mean}, exact {exact}, se {se}");
    }

    #[test]
    fn tangent_basis_file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cols: Vec<Vector> = (0..3)
            .map(|_| (0..7).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let b = orthonormalize(&Matrix::from_columns(&cols).unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("basis.tgtb");
        write_tangent_basis(&path, &b).unwrap();
        assert_eq!(read_tangent_basis(&path).unwrap(), b);
        let p = ManifoldProvider::from_file(&path).unwrap();
        assert_eq!(p.tangent_basis_at(&Vector::zeros(7)).unwrap().basis(), &b);
    }

    #[test]
    fn tangent_basis_file_parsing() {
        let b = parse_tangent_basis("TGTB 3 2  \n1 0 0   \n0 1 0\t\n\n").unwrap();
        assert_eq!(b.vectors(), &[Vector::unit(3, 0), Vector::unit(3, 1)]);
        // Skewed rows are re-orthonormalized.
        let b = parse_tangent_basis("TGTB 2 1\n3 4\n").unwrap();
        assert!(b.vectors()[0].max_abs_diff(&Vector::from([0.6, 0.8])) < 1e-15);
        for bad in ["", "TGTX 2 1\n1 0\n", "TGTB 2 1\n1\n", "TGTB 2 2\n1 0\n", "TGTB 2 1\n1 0\n0 1\n", "TGTB 2 2\n1 0\n2 0\n", "TGTB 2 1\nx 0\n"] {
            assert!(parse_tangent_basis(bad).is_err(), "{bad:?}");
        }
    }
}
