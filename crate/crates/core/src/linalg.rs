//! Dense Hermitian linear algebra on `nalgebra` complex matrices.
//!
//! [`HermitianOperator`] is the carrier for every operator in the crate
//! (effects, `R`, `T`, basis operators, parity) and [`DensityMatrix`] adds the
//! positivity and unit-trace invariants on top of it.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::tolerance::Tolerances;

pub type Complex64 = nalgebra::Complex<f64>;
pub type CMatrix = DMatrix<Complex64>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Largest entrywise deviation from Hermiticity, `max |H_ij - conj(H_ji)|`.
pub fn hermitian_asymmetry(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

fn hermitize(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).scale(0.5)
}

/// A dense `D x D` complex Hermitian matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianOperator {
    m: CMatrix,
}

impl HermitianOperator {
    /// Validates Hermiticity (within [`Tolerances::hermiticity`]) and
    /// symmetrizes away the residual asymmetry.
    pub fn try_from_matrix(m: CMatrix) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        if m.nrows() == 0 {
            return Err(Error::InvalidConfig(
                "operator dimension must be positive".into(),
            ));
        }
        let asymmetry = hermitian_asymmetry(&m);
        if !asymmetry.is_finite() || asymmetry > Tolerances::DEFAULT.hermiticity {
            return Err(Error::NonHermitianInput { asymmetry });
        }
        Ok(Self { m: hermitize(&m) })
    }

    /// Takes the Hermitian part `(M + M^dagger)/2` of a square matrix.
    ///
    /// Used for products that are Hermitian in exact arithmetic.
    pub fn from_matrix_hermitized(m: CMatrix) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "operator must be square");
        Self { m: hermitize(&m) }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            m: CMatrix::zeros(dim, dim),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            m: CMatrix::identity(dim, dim),
        }
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let v = DVector::from_iterator(diag.len(), diag.iter().map(|&d| Complex64::new(d, 0.0)));
        Self {
            m: CMatrix::from_diagonal(&v),
        }
    }

    /// Real symmetric matrix promoted to a Hermitian operator.
    pub fn from_real_symmetric(m: &DMatrix<f64>) -> Result<Self> {
        Self::try_from_matrix(m.map(|x| Complex64::new(x, 0.0)))
    }

    /// Rank-one projector-like operator `|v><v|` (not normalized).
    pub fn outer(v: &DVector<Complex64>) -> Self {
        Self::from_matrix_hermitized(v * v.adjoint())
    }

    pub fn pauli_x() -> Self {
        Self {
            m: CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO]),
        }
    }

    pub fn pauli_y() -> Self {
        Self {
            m: CMatrix::from_row_slice(2, 2, &[ZERO, -I, I, ZERO]),
        }
    }

    pub fn pauli_z() -> Self {
        Self {
            m: CMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE]),
        }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.m
    }

    pub fn into_matrix(self) -> CMatrix {
        self.m
    }

    pub fn trace(&self) -> f64 {
        self.m.diagonal().iter().map(|z| z.re).sum()
    }

    /// `tr(A B)`, which is real for Hermitian `A`, `B`.
    pub fn trace_product(&self, other: &HermitianOperator) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        // tr(AB) = sum_ij A_ij B_ji = sum_ij A_ij conj(B_ij)
        self.m
            .iter()
            .zip(other.m.iter())
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.m.norm()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { m: self.m.scale(s) }
    }

    /// `U^dagger H U` for a square matrix `U`.
    pub fn congruence(&self, u: &CMatrix) -> Self {
        Self::from_matrix_hermitized(u.adjoint() * &self.m * u)
    }

    /// Upper-left `d x d` block, i.e. the compression onto the first `d` basis states.
    pub fn compress(&self, d: usize) -> Self {
        assert!(
            d >= 1 && d <= self.dim(),
            "compression dimension out of range"
        );
        Self {
            m: self.m.view((0, 0), (d, d)).into_owned(),
        }
    }

    /// Zero-padded embedding into a larger space.
    pub fn embed(&self, dim: usize) -> Self {
        assert!(
            dim >= self.dim(),
            "embedding dimension smaller than operator"
        );
        let mut m = CMatrix::zeros(dim, dim);
        m.view_mut((0, 0), (self.dim(), self.dim()))
            .copy_from(&self.m);
        Self { m }
    }

    pub fn spectrum(&self) -> Spectrum {
        spectral_decompose(self)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let eig = SymmetricEigen::new(self.m.clone()).eigenvalues;
        eig.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        let eig = SymmetricEigen::new(self.m.clone()).eigenvalues;
        eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Coordinates with respect to the trace-orthonormal basis
    /// `{E_ii} u {(E_ij + E_ji)/sqrt2} u {i(E_ij - E_ji)/sqrt2}` (i < j).
    ///
    /// `tr(A B)` equals the Euclidean dot product of the coordinate vectors.
    pub fn to_real_coords(&self) -> DVector<f64> {
        let d = self.dim();
        let mut v = DVector::zeros(d * d);
        let mut k = 0;
        for i in 0..d {
            v[k] = self.m[(i, i)].re;
            k += 1;
        }
        let s = std::f64::consts::SQRT_2;
        for i in 0..d {
            for j in (i + 1)..d {
                v[k] = s * self.m[(i, j)].re;
                v[k + 1] = s * self.m[(i, j)].im;
                k += 2;
            }
        }
        v
    }

    /// Inverse of [`HermitianOperator::to_real_coords`].
    pub fn from_real_coords(dim: usize, v: &DVector<f64>) -> Self {
        assert_eq!(v.len(), dim * dim, "coordinate vector has wrong length");
        let mut m = CMatrix::zeros(dim, dim);
        let mut k = 0;
        for i in 0..dim {
            m[(i, i)] = Complex64::new(v[k], 0.0);
            k += 1;
        }
        let h = std::f64::consts::FRAC_1_SQRT_2;
        for i in 0..dim {
            for j in (i + 1)..dim {
                let z = Complex64::new(h * v[k], h * v[k + 1]);
                m[(i, j)] = z;
                m[(j, i)] = z.conj();
                k += 2;
            }
        }
        Self { m }
    }
}

impl Add for &HermitianOperator {
    type Output = HermitianOperator;
    fn add(self, rhs: &HermitianOperator) -> HermitianOperator {
        HermitianOperator {
            m: &self.m + &rhs.m,
        }
    }
}

impl Sub for &HermitianOperator {
    type Output = HermitianOperator;
    fn sub(self, rhs: &HermitianOperator) -> HermitianOperator {
        HermitianOperator {
            m: &self.m - &rhs.m,
        }
    }
}

impl Neg for &HermitianOperator {
    type Output = HermitianOperator;
    fn neg(self) -> HermitianOperator {
        HermitianOperator { m: -&self.m }
    }
}

impl Mul<f64> for &HermitianOperator {
    type Output = HermitianOperator;
    fn mul(self, rhs: f64) -> HermitianOperator {
        self.scale(rhs)
    }
}

#[derive(Serialize, Deserialize)]
struct OperatorJson {
    dim: usize,
    re: Vec<Vec<f64>>,
    im: Vec<Vec<f64>>,
}

impl Serialize for HermitianOperator {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let d = self.dim();
        let rows = |f: fn(&Complex64) -> f64| -> Vec<Vec<f64>> {
            (0..d)
                .map(|i| (0..d).map(|j| f(&self.m[(i, j)])).collect())
                .collect()
        };
        OperatorJson {
            dim: d,
            re: rows(|z| z.re),
            im: rows(|z| z.im),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for HermitianOperator {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = OperatorJson::deserialize(deserializer)?;
        let d = raw.dim;
        if d == 0 {
            return Err(D::Error::custom("dim must be positive"));
        }
        for (name, rows) in [("re", &raw.re), ("im", &raw.im)] {
            if rows.len() != d {
                return Err(D::Error::custom(format!(
                    "field `{name}` has {} rows, expected {d}",
                    rows.len()
                )));
            }
            if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != d) {
                return Err(D::Error::custom(format!(
                    "field `{name}` row {i} has {} entries, expected {d}",
                    r.len()
                )));
            }
        }
        let m = CMatrix::from_fn(d, d, |i, j| Complex64::new(raw.re[i][j], raw.im[i][j]));
        HermitianOperator::try_from_matrix(m).map_err(D::Error::custom)
    }
}

/// Eigenvalues in descending order with matching orthonormal eigenvectors
/// stored as the columns of `eigenvectors`.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: CMatrix,
}

impl Spectrum {
    /// `V diag(w) V^dagger`.
    pub fn reconstruct(&self) -> HermitianOperator {
        self.map(|w| w)
    }

    /// Applies a real function to the eigenvalues: `V diag(f(w)) V^dagger`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> HermitianOperator {
        let v = &self.eigenvectors;
        let mut scaled = v.clone();
        for (k, &w) in self.eigenvalues.iter().enumerate() {
            let fw = f(w);
            scaled.column_mut(k).scale_mut(fw);
        }
        HermitianOperator::from_matrix_hermitized(scaled * v.adjoint())
    }

    pub fn min(&self) -> f64 {
        *self.eigenvalues.last().expect("empty spectrum")
    }

    pub fn max(&self) -> f64 {
        self.eigenvalues[0]
    }
}

/// Spectral decomposition of a validated Hermitian operator.
///
/// Eigenvalues are sorted descending (stable with respect to the solver's
/// order for exact ties) and each eigenvector's first significant component
/// is rotated to be real and positive.
pub fn spectral_decompose(h: &HermitianOperator) -> Spectrum {
    let eig = SymmetricEigen::new(h.m.clone());
    let d = h.dim();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut vectors = CMatrix::zeros(d, d);
    for (k, &src) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(src);
        let scale = col.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let pivot = col
            .iter()
            .find(|z| z.norm() > 1e-8 * scale)
            .copied()
            .unwrap_or(ONE);
        let phase = pivot.conj() / pivot.norm();
        vectors.set_column(k, &(col * phase));
    }
    Spectrum {
        eigenvalues: order.iter().map(|&k| eig.eigenvalues[k]).collect(),
        eigenvectors: vectors,
    }
}

/// Spectral decomposition of a raw matrix, rejecting non-Hermitian input.
pub fn spectral_decompose_matrix(m: &CMatrix) -> Result<Spectrum> {
    let h = HermitianOperator::try_from_matrix(m.clone())?;
    Ok(spectral_decompose(&h))
}

/// A positive semidefinite, unit-trace Hermitian operator.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct DensityMatrix {
    op: HermitianOperator,
}

impl DensityMatrix {
    pub fn new(op: HermitianOperator) -> Result<Self> {
        let tol = Tolerances::DEFAULT;
        let tr = op.trace();
        if !tr.is_finite() || (tr - 1.0).abs() > tol.trace {
            return Err(Error::InvalidDensityMatrix(format!(
                "trace {tr} differs from 1"
            )));
        }
        let min = op.min_eigenvalue();
        if !(min >= -tol.positivity) {
            return Err(Error::InvalidDensityMatrix(format!(
                "smallest eigenvalue {min:.3e} is negative"
            )));
        }
        Ok(Self { op })
    }

    /// Normalizes a positive semidefinite operator by its trace.
    pub fn from_unnormalized(op: HermitianOperator) -> Result<Self> {
        let tr = op.trace();
        if !(tr > 0.0) || !tr.is_finite() {
            return Err(Error::InvalidDensityMatrix(format!(
                "trace {tr} is not positive"
            )));
        }
        Self::new(op.scale(1.0 / tr))
    }

    /// Wraps an operator known to be a state, skipping the eigenvalue check.
    pub(crate) fn new_unchecked(op: HermitianOperator) -> Self {
        Self { op }
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self {
            op: HermitianOperator::identity(dim).scale(1.0 / dim as f64),
        }
    }

    /// `|psi><psi| / <psi|psi>`.
    pub fn pure(psi: &DVector<Complex64>) -> Result<Self> {
        Self::from_unnormalized(HermitianOperator::outer(psi))
    }

    /// Number state `|n><n|` in a `dim`-dimensional Fock space.
    pub fn fock(n: usize, dim: usize) -> Self {
        assert!(n < dim, "Fock index outside the space");
        let mut diag = vec![0.0; dim];
        diag[n] = 1.0;
        Self {
            op: HermitianOperator::from_real_diagonal(&diag),
        }
    }

    /// Qubit state `(1 + r . sigma)/2`; requires `|r| <= 1`.
    pub fn from_bloch(r: [f64; 3]) -> Result<Self> {
        let op = &(&(&HermitianOperator::identity(2) + &(&HermitianOperator::pauli_x() * r[0]))
            + &(&HermitianOperator::pauli_y() * r[1]))
            + &(&HermitianOperator::pauli_z() * r[2]);
        Self::new(op.scale(0.5))
    }

    /// Bloch vector `(tr rho sigma_x, tr rho sigma_y, tr rho sigma_z)` of a qubit state.
    pub fn bloch_vector(&self) -> Result<[f64; 3]> {
        if self.dim() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                found: self.dim(),
            });
        }
        Ok([
            self.op.trace_product(&HermitianOperator::pauli_x()),
            self.op.trace_product(&HermitianOperator::pauli_y()),
            self.op.trace_product(&HermitianOperator::pauli_z()),
        ])
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    pub fn operator(&self) -> &HermitianOperator {
        &self.op
    }

    pub fn into_operator(self) -> HermitianOperator {
        self.op
    }

    pub fn spectrum(&self) -> Spectrum {
        spectral_decompose(&self.op)
    }

    /// Zero-padded embedding into a larger Fock space; still a valid state.
    pub fn embed(&self, dim: usize) -> Self {
        Self {
            op: self.op.embed(dim),
        }
    }

    /// Compression onto the first `d` basis states, renormalized.
    pub fn truncate(&self, d: usize) -> Result<Self> {
        Self::from_unnormalized(self.op.compress(d))
    }
}

impl<'de> Deserialize<'de> for DensityMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let op = HermitianOperator::deserialize(deserializer)?;
        DensityMatrix::new(op).map_err(D::Error::custom)
    }
}

/// `log rho` with eigenvalues clamped below at `floor` before the logarithm.
pub fn matrix_log_on_support(rho: &DensityMatrix, floor: f64) -> HermitianOperator {
    assert!(floor > 0.0, "log floor must be positive");
    rho.spectrum().map(|w| w.max(floor).ln())
}

/// Half the trace norm of `rho - sigma`.
pub fn trace_distance(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    if rho.dim() != sigma.dim() {
        return Err(Error::DimensionMismatch {
            expected: rho.dim(),
            found: sigma.dim(),
        });
    }
    let diff = rho.operator() - sigma.operator();
    let eig = SymmetricEigen::new(diff.into_matrix()).eigenvalues;
    Ok((0.5 * eig.iter().map(|w| w.abs()).sum::<f64>()).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn identity_and_pauli_spectra() {
        let s = spectral_decompose(&HermitianOperator::identity(2));
        assert!(close(s.eigenvalues[0], 1.0, 1e-14) && close(s.eigenvalues[1], 1.0, 1e-14));
        let s = spectral_decompose(&HermitianOperator::pauli_z());
        assert!(close(s.eigenvalues[0], 1.0, 1e-14) && close(s.eigenvalues[1], -1.0, 1e-14));
    }

    #[test]
    fn half_plus_sigma_x_over_two() {
        // closed form: eigenvalues of (1 + sigma_x)/2 are 1 and 0
        let h = (&HermitianOperator::identity(2) + &HermitianOperator::pauli_x()).scale(0.5);
        let s = spectral_decompose(&h);
        assert!(close(s.eigenvalues[0], 1.0, 1e-14));
        assert!(close(s.eigenvalues[1], 0.0, 1e-14));
        // top eigenvector (1,1)/sqrt2 with real positive leading phase
        let v = s.eigenvectors.column(0);
        assert!(close(v[0].re, std::f64::consts::FRAC_1_SQRT_2, 1e-12));
        assert!(close(v[0].im, 0.0, 1e-15));
        assert!((&s.reconstruct() - &h).frobenius_norm() < 1e-12);
    }

    #[test]
    fn rejects_non_hermitian() {
        let m = CMatrix::from_row_slice(2, 2, &[ONE, ONE, ZERO, ONE]);
        assert!(matches!(
            spectral_decompose_matrix(&m),
            Err(Error::NonHermitianInput { .. })
        ));
        let tiny = CMatrix::from_row_slice(2, 2, &[ONE, Complex64::new(1e-10, 0.0), ZERO, ONE]);
        assert!(spectral_decompose_matrix(&tiny).is_ok());
    }

    #[test]
    fn log_on_support() {
        let mm = DensityMatrix::maximally_mixed(2);
        let l = matrix_log_on_support(&mm, 1e-12);
        let expect = HermitianOperator::identity(2).scale(-(2f64.ln()));
        assert!((&l - &expect).frobenius_norm() < 1e-14);

        let pure = DensityMatrix::fock(0, 2);
        let l = matrix_log_on_support(&pure, 1e-12);
        assert!(close(l.matrix()[(0, 0)].re, 0.0, 1e-14));
        assert!(close(l.matrix()[(1, 1)].re, 1e-12f64.ln(), 1e-9));

        let rho = DensityMatrix::new(HermitianOperator::from_real_diagonal(&[0.75, 0.25])).unwrap();
        let l = matrix_log_on_support(&rho, 1e-12);
        assert!(close(l.matrix()[(0, 0)].re, 0.75f64.ln(), 1e-14));
        assert!(close(l.matrix()[(1, 1)].re, 0.25f64.ln(), 1e-14));
    }

    #[test]
    fn trace_distance_examples() {
        let a = DensityMatrix::fock(0, 2);
        let b = DensityMatrix::fock(1, 2);
        let mm = DensityMatrix::maximally_mixed(2);
        assert!(close(trace_distance(&a, &a).unwrap(), 0.0, 1e-15));
        assert!(close(trace_distance(&a, &b).unwrap(), 1.0, 1e-14));
        assert!(close(trace_distance(&a, &mm).unwrap(), 0.5, 1e-14));
        assert!(matches!(
            trace_distance(&a, &DensityMatrix::maximally_mixed(3)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn density_matrix_validation() {
        assert!(DensityMatrix::new(HermitianOperator::identity(2)).is_err());
        assert!(DensityMatrix::new(HermitianOperator::from_real_diagonal(&[1.5, -0.5])).is_err());
        assert!(DensityMatrix::from_bloch([0.0, 0.0, 1.0]).is_ok());
        assert!(DensityMatrix::from_bloch([0.0, 0.8, 0.8]).is_err());
        let r = DensityMatrix::from_bloch([0.1, -0.2, 0.3])
            .unwrap()
            .bloch_vector()
            .unwrap();
        assert!(close(r[0], 0.1, 1e-15) && close(r[1], -0.2, 1e-15) && close(r[2], 0.3, 1e-15));
    }

    #[test]
    fn real_coordinates_preserve_trace_inner_product() {
        let a =
            (&HermitianOperator::pauli_y() + &HermitianOperator::pauli_x().scale(0.3)).scale(0.7);
        let b = &HermitianOperator::pauli_y() + &HermitianOperator::identity(2);
        let va = a.to_real_coords();
        let vb = b.to_real_coords();
        assert!(close(va.dot(&vb), a.trace_product(&b), 1e-14));
        let back = HermitianOperator::from_real_coords(2, &va);
        assert!((&back - &a).frobenius_norm() < 1e-15);
    }

    #[test]
    fn json_shape() {
        let v = serde_json::to_value(HermitianOperator::pauli_y()).unwrap();
        assert_eq!(v["dim"], 2);
        assert_eq!(v["im"][0][1], -1.0);
        let bad = r#"{"dim": 2, "re": [[1, 0]], "im": [[0, 0],[0, 0]]}"#;
        assert!(serde_json::from_str::<HermitianOperator>(bad).is_err());
    }
}
