//! Probability operator measurements: construction, informational
//! completeness, and the split of operator space into the measurement
//! subspace and its trace-orthogonal complement.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, Complex64, DensityMatrix, HermitianOperator};
use crate::quadrature;
use crate::tolerance::Tolerances;

/// An ordered set of positive effects resolving the identity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Pom {
    dim: usize,
    effects: Vec<HermitianOperator>,
    labels: Vec<String>,
}

impl Pom {
    pub fn new(effects: Vec<HermitianOperator>, labels: Vec<String>) -> Result<Self> {
        let Some(first) = effects.first() else {
            return Err(Error::InvalidPom("no effects".into()));
        };
        let dim = first.dim();
        if labels.len() != effects.len() {
            return Err(Error::InvalidPom(format!(
                "{} labels for {} effects",
                labels.len(),
                effects.len()
            )));
        }
        let tol = Tolerances::DEFAULT;
        for (j, e) in effects.iter().enumerate() {
            if e.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: e.dim(),
                });
            }
            let min = e.min_eigenvalue();
            if !(min >= -tol.positivity) {
                return Err(Error::InvalidPom(format!(
                    "effect {j} ({}) has negative eigenvalue {min:.3e}",
                    labels[j]
                )));
            }
        }
        let pom = Self {
            dim,
            effects,
            labels,
        };
        let residual = pom.closure_residual();
        if !(residual <= tol.closure) {
            return Err(Error::InvalidPom(format!(
                "effects sum to identity only within {residual:.3e}"
            )));
        }
        Ok(pom)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of outcomes `K`.
    pub fn len(&self) -> usize {
        self.effects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.effects.is_empty()
    }

    pub fn effects(&self) -> &[HermitianOperator] {
        &self.effects
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn effect_sum(&self) -> HermitianOperator {
        self.effects
            .iter()
            .fold(HermitianOperator::zeros(self.dim), |acc, e| &acc + e)
    }

    /// `|| sum_j Pi_j - 1 ||_F`.
    pub fn closure_residual(&self) -> f64 {
        (&self.effect_sum() - &HermitianOperator::identity(self.dim)).frobenius_norm()
    }

    /// Effects reordered so that outcome `k` of the result is outcome `order[k]` here.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.len()];
        if order.len() != self.len()
            || order
                .iter()
                .any(|&k| k >= self.len() || std::mem::replace(&mut seen[k], true))
        {
            return Err(Error::InvalidPom(
                "order is not a permutation of the outcomes".into(),
            ));
        }
        Ok(Self {
            dim: self.dim,
            effects: order.iter().map(|&k| self.effects[k].clone()).collect(),
            labels: order.iter().map(|&k| self.labels[k].clone()).collect(),
        })
    }

    /// Compression of every effect onto the first `d` Fock states.
    ///
    /// Any deficit `1_d - sum_j Pi_j` left by the compression is appended as
    /// an extra outcome labelled `deficit` so the result is again a POM.
    pub fn compress(&self, d: usize) -> Result<Self> {
        if d == 0 || d > self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: d,
            });
        }
        let mut effects: Vec<HermitianOperator> =
            self.effects.iter().map(|e| e.compress(d)).collect();
        let mut labels = self.labels.clone();
        let sum = effects
            .iter()
            .fold(HermitianOperator::zeros(d), |acc, e| &acc + e);
        let deficit = &HermitianOperator::identity(d) - &sum;
        if deficit.frobenius_norm() > Tolerances::DEFAULT.closure {
            effects.push(deficit);
            labels.push("deficit".into());
        }
        Self::new(effects, labels)
    }
}

#[derive(Deserialize)]
struct PomJson {
    dim: usize,
    effects: Vec<HermitianOperator>,
    labels: Vec<String>,
}

impl<'de> Deserialize<'de> for Pom {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = PomJson::deserialize(deserializer)?;
        if let Some(e) = raw.effects.iter().find(|e| e.dim() != raw.dim) {
            return Err(D::Error::custom(format!(
                "effect has dim {}, POM declares dim {}",
                e.dim(),
                raw.dim
            )));
        }
        Pom::new(raw.effects, raw.labels).map_err(D::Error::custom)
    }
}

/// The symmetric three-outcome qubit measurement in the x-z plane:
/// `Pi_0 = (1 + sigma_z)/3`, `Pi_+- = (1 +- (sqrt3/2) sigma_x - sigma_z/2)/3`.
pub fn trine_pom() -> Pom {
    let one = HermitianOperator::identity(2);
    let sx = HermitianOperator::pauli_x();
    let sz = HermitianOperator::pauli_z();
    let half_root3 = 3f64.sqrt() / 2.0;
    let p0 = (&one + &sz).scale(1.0 / 3.0);
    let plus = (&(&one + &sx.scale(half_root3)) - &sz.scale(0.5)).scale(1.0 / 3.0);
    let minus = (&(&one - &sx.scale(half_root3)) - &sz.scale(0.5)).scale(1.0 / 3.0);
    Pom::new(
        vec![p0, plus, minus],
        vec!["0".into(), "+".into(), "-".into()],
    )
    .expect("trine effects form a POM")
}

/// The six Pauli eigenprojectors, each weighted by 1/3. Informationally complete on a qubit.
pub fn pauli_pom() -> Pom {
    let one = HermitianOperator::identity(2);
    let mut effects = Vec::with_capacity(6);
    let mut labels = Vec::with_capacity(6);
    for (name, s) in [
        ("x", HermitianOperator::pauli_x()),
        ("y", HermitianOperator::pauli_y()),
        ("z", HermitianOperator::pauli_z()),
    ] {
        effects.push((&one + &s).scale(1.0 / 6.0));
        labels.push(format!("+{name}"));
        effects.push((&one - &s).scale(1.0 / 6.0));
        labels.push(format!("-{name}"));
    }
    Pom::new(effects, labels).expect("Pauli effects form a POM")
}

/// Harmonic-oscillator eigenfunction `psi_n(x)` (Hermite function).
pub fn hermite_function(n: usize, x: f64) -> f64 {
    hermite_functions(n + 1, x)[n]
}

/// `psi_0(x), ..., psi_{count-1}(x)` by the normalized upward recurrence.
pub fn hermite_functions(count: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(count);
    if count == 0 {
        return out;
    }
    out.push(PI.powf(-0.25) * (-0.5 * x * x).exp());
    if count > 1 {
        out.push(std::f64::consts::SQRT_2 * x * out[0]);
    }
    for n in 1..count.saturating_sub(1) {
        let nf = n as f64;
        let next = x * (2.0 / (nf + 1.0)).sqrt() * out[n] - (nf / (nf + 1.0)).sqrt() * out[n - 1];
        out.push(next);
    }
    out
}

/// `|x_theta><x_theta|` in the first `dim` Fock states, with matrix elements
/// `exp(i theta (m - n)) psi_m(x) psi_n(x)`.
pub fn quadrature_projector(theta: f64, x: f64, dim: usize) -> HermitianOperator {
    assert!(dim >= 1, "dimension must be positive");
    let psi = hermite_functions(dim, x);
    let v = DVector::from_iterator(
        dim,
        psi.iter()
            .enumerate()
            .map(|(m, &p)| Complex64::from_polar(p, theta * m as f64)),
    );
    HermitianOperator::outer(&v)
}

/// One phase setting `theta` with the quadrature values recorded for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSetting {
    pub theta: f64,
    pub xs: Vec<f64>,
}

impl QuadratureSetting {
    fn validate(&self) -> Result<()> {
        if self.xs.is_empty() {
            return Err(Error::InvalidSettings(format!(
                "setting theta = {} has no x values",
                self.theta
            )));
        }
        if !self.theta.is_finite() || self.xs.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidSettings("non-finite theta or x".into()));
        }
        if self.xs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidSettings(format!(
                "x values for theta = {} are not strictly increasing",
                self.theta
            )));
        }
        Ok(())
    }
}

/// Four phases `k pi / 4` (k = 0..3), each with `x in {-2, -1, 0, 1, 2}`.
pub fn default_homodyne_settings() -> Vec<QuadratureSetting> {
    (0..4)
        .map(|k| QuadratureSetting {
            theta: k as f64 * PI / 4.0,
            xs: vec![-2.0, -1.0, 0.0, 1.0, 2.0],
        })
        .collect()
}

/// How raw quadrature projectors are turned into a closed POM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HomodyneMode {
    /// Scale the projectors uniformly and add one complement outcome.
    #[default]
    ScaledComplement,
    /// Integrate projectors over bins partitioning the real line.
    Binned,
}

/// The quadrature settings file: `{"settings": [...], "dim": D, "mode": ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomodyneSpec {
    pub settings: Vec<QuadratureSetting>,
    pub dim: usize,
    #[serde(default)]
    pub mode: HomodyneMode,
}

impl HomodyneSpec {
    pub fn build(&self) -> Result<Pom> {
        homodyne_pom(&self.settings, self.dim, self.mode)
    }
}

const BIN_TOLERANCE: f64 = 1e-10;

pub fn homodyne_pom(settings: &[QuadratureSetting], dim: usize, mode: HomodyneMode) -> Result<Pom> {
    if settings.is_empty() {
        return Err(Error::InvalidSettings("no settings".into()));
    }
    if dim < 2 {
        return Err(Error::InvalidSettings(format!("dimension {dim} < 2")));
    }
    for s in settings {
        s.validate()?;
    }
    match mode {
        HomodyneMode::ScaledComplement => scaled_complement_pom(settings, dim),
        HomodyneMode::Binned => binned_pom(settings, dim),
    }
}

fn scaled_complement_pom(settings: &[QuadratureSetting], dim: usize) -> Result<Pom> {
    let mut raw = Vec::new();
    let mut labels = Vec::new();
    for s in settings {
        for &x in &s.xs {
            raw.push(quadrature_projector(s.theta, x, dim));
            labels.push(format!("theta={},x={}", s.theta, x));
        }
    }
    let sum = raw
        .iter()
        .fold(HermitianOperator::zeros(dim), |acc, q| &acc + q);
    let scale = 1.0 / sum.max_eigenvalue();
    let mut effects: Vec<HermitianOperator> = raw.iter().map(|q| q.scale(scale)).collect();
    effects.push(&HermitianOperator::identity(dim) - &sum.scale(scale));
    labels.push("complement".into());
    Pom::new(effects, labels)
}

/// Real matrix `int_a^b psi_m(x) psi_n(x) dx` for `m, n < dim`.
fn hermite_overlap(a: f64, b: f64, dim: usize) -> DMatrix<f64> {
    let n_entries = dim * (dim + 1) / 2;
    let values = quadrature::integrate(
        |x, out| {
            let psi = hermite_functions(dim, x);
            let mut k = 0;
            for m in 0..dim {
                for n in m..dim {
                    out[k] = psi[m] * psi[n];
                    k += 1;
                }
            }
        },
        a,
        b,
        n_entries,
        BIN_TOLERANCE,
    );
    let mut out = DMatrix::zeros(dim, dim);
    let mut k = 0;
    for m in 0..dim {
        for n in m..dim {
            out[(m, n)] = values[k];
            out[(n, m)] = values[k];
            k += 1;
        }
    }
    out
}

fn binned_pom(settings: &[QuadratureSetting], dim: usize) -> Result<Pom> {
    // Beyond this cutoff every psi_n with n < dim is below ~1e-20.
    let cutoff = (2.0 * dim as f64 + 1.0).sqrt() + 12.0;
    let weight = 1.0 / settings.len() as f64;
    let mut effects = Vec::new();
    let mut labels = Vec::new();
    for s in settings {
        let lo_max = s.xs[0].min(-cutoff);
        let hi_max = s.xs[s.xs.len() - 1].max(cutoff);
        let mut edges = Vec::with_capacity(s.xs.len() + 1);
        edges.push(lo_max - 1.0);
        edges.extend(s.xs.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        edges.push(hi_max + 1.0);
        for (k, &x) in s.xs.iter().enumerate() {
            let overlap = hermite_overlap(edges[k], edges[k + 1], dim);
            let m = CMatrix::from_fn(dim, dim, |i, j| {
                Complex64::from_polar(weight * overlap[(i, j)], s.theta * (i as f64 - j as f64))
            });
            effects.push(HermitianOperator::from_matrix_hermitized(m));
            labels.push(format!("theta={},bin@{}", s.theta, x));
        }
    }
    Pom::new(effects, labels)
}

/// Gram matrix `M_jk = tr(Pi_j Pi_k)` and its spectrum.
#[derive(Debug, Clone)]
pub struct GramAnalysis {
    pub gram: DMatrix<f64>,
    /// Gram eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Matching orthonormal eigenvectors (columns).
    pub eigenvectors: DMatrix<f64>,
    pub rank_tolerance: f64,
    /// Number of Gram eigenvalues above `rank_tolerance`, `n_{>0}`.
    pub informational_rank: usize,
    pub dim: usize,
}

impl GramAnalysis {
    pub fn is_complete(&self) -> bool {
        self.informational_rank == self.dim * self.dim
    }
}

/// Coordinates of every effect as the columns of a `D^2 x K` real matrix.
fn effect_coords(pom: &Pom) -> DMatrix<f64> {
    let cols: Vec<DVector<f64>> = pom.effects().iter().map(|e| e.to_real_coords()).collect();
    DMatrix::from_columns(&cols)
}

/// Counts independent outcomes. `tol = None` uses `K * eps * max eigenvalue`.
pub fn gram_analysis(pom: &Pom, tol: Option<f64>) -> GramAnalysis {
    let a = effect_coords(pom);
    let gram = a.transpose() * &a;
    let k = gram.nrows();
    let eig = SymmetricEigen::new(gram.clone());
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut eigenvectors = DMatrix::zeros(k, k);
    for (c, &i) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        // sign convention: largest-magnitude component positive
        let pivot = v
            .iter()
            .cloned()
            .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if pivot < 0.0 {
            v.neg_mut();
        }
        eigenvectors.set_column(c, &v);
    }
    let largest = eigenvalues[0].max(0.0);
    let rank_tolerance = tol.unwrap_or(k as f64 * f64::EPSILON * largest);
    let d2 = pom.dim() * pom.dim();
    let informational_rank = eigenvalues
        .iter()
        .filter(|&&w| w > rank_tolerance)
        .count()
        .clamp(1, k.min(d2));
    GramAnalysis {
        gram,
        eigenvalues,
        eigenvectors,
        rank_tolerance,
        informational_rank,
        dim: pom.dim(),
    }
}

/// Trace-orthonormal Hermitian basis split into the measurement subspace and its complement.
#[derive(Debug, Clone)]
pub struct OperatorBasis {
    pub dim: usize,
    pub measurement: Vec<HermitianOperator>,
    pub complement: Vec<HermitianOperator>,
    /// `K x n_{>0}` real coefficients with `Pi_j = sum_k a_jk Gamma_k`.
    pub expansion: DMatrix<f64>,
}

impl OperatorBasis {
    /// All `D^2` basis operators, measurement part first.
    pub fn all(&self) -> impl Iterator<Item = &HermitianOperator> {
        self.measurement.iter().chain(self.complement.iter())
    }

    /// `max_j || Pi_j - sum_k a_jk Gamma_k ||_F`.
    pub fn expansion_residual(&self, pom: &Pom) -> f64 {
        pom.effects()
            .iter()
            .enumerate()
            .map(|(j, e)| {
                let rebuilt = self
                    .measurement
                    .iter()
                    .enumerate()
                    .fold(HermitianOperator::zeros(self.dim), |acc, (k, g)| {
                        &acc + &g.scale(self.expansion[(j, k)])
                    });
                (e - &rebuilt).frobenius_norm()
            })
            .fold(0.0, f64::max)
    }
}

fn fix_column_signs(q: &mut DMatrix<f64>) {
    for mut col in q.column_iter_mut() {
        let pivot = col
            .iter()
            .cloned()
            .fold(0.0f64, |m, x| if x.abs() > m.abs() + 1e-12 { x } else { m });
        if pivot < 0.0 {
            col.neg_mut();
        }
    }
}

pub fn build_operator_basis(pom: &Pom, analysis: &GramAnalysis) -> Result<OperatorBasis> {
    let k = pom.len();
    if analysis.gram.nrows() != k || analysis.dim != pom.dim() {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: analysis.gram.nrows(),
        });
    }
    let d = pom.dim();
    let d2 = d * d;
    let n = analysis.informational_rank;
    let a = effect_coords(pom);

    // Gamma_k = sum_j u_jk Pi_j / sqrt(m_k), then one QR pass to restore
    // orthonormality lost to rounding on small Gram eigenvalues.
    let mut g = DMatrix::zeros(d2, n);
    for c in 0..n {
        let m = analysis.eigenvalues[c];
        if !(m > 0.0) {
            return Err(Error::RankDeficiencyMismatch {
                expected: n,
                found: c,
            });
        }
        let col = &a * analysis.eigenvectors.column(c) / m.sqrt();
        g.set_column(c, &col);
    }
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for c in 0..n {
        if r[(c, c)] < 0.0 {
            q.column_mut(c).neg_mut();
        }
    }
    let independent = (0..n).filter(|&c| r[(c, c)].abs() > 0.5).count();
    if independent != n {
        return Err(Error::RankDeficiencyMismatch {
            expected: n,
            found: independent,
        });
    }

    let expansion = a.transpose() * &q;
    let outside = &a - &q * expansion.transpose();
    let scale = a.norm().max(1.0);
    let missed = outside
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .filter(|&&s| s > 1e-8 * scale)
        .count();
    if missed > 0 {
        return Err(Error::RankDeficiencyMismatch {
            expected: n,
            found: n + missed,
        });
    }

    // Orthonormal complement: eigenvectors of I - Q Q^T with eigenvalue 1.
    let mut complement_coords = DMatrix::zeros(d2, d2 - n);
    if n < d2 {
        let perp = DMatrix::<f64>::identity(d2, d2) - &q * q.transpose();
        let eig = SymmetricEigen::new(perp);
        let mut order: Vec<usize> = (0..d2).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let found = eig.eigenvalues.iter().filter(|&&w| w > 0.5).count();
        if found != d2 - n {
            return Err(Error::RankDeficiencyMismatch {
                expected: n,
                found: d2 - found,
            });
        }
        for (c, &i) in order.iter().take(d2 - n).enumerate() {
            complement_coords.set_column(c, &eig.eigenvectors.column(i));
        }
        fix_column_signs(&mut complement_coords);
    }

    let to_ops = |m: &DMatrix<f64>| -> Vec<HermitianOperator> {
        m.column_iter()
            .map(|c| HermitianOperator::from_real_coords(d, &c.into_owned()))
            .collect()
    };
    Ok(OperatorBasis {
        dim: d,
        measurement: to_ops(&q),
        complement: to_ops(&complement_coords),
        expansion,
    })
}

/// Split of a state into its measurement-subspace and complementary parts.
#[derive(Debug, Clone)]
pub struct StateDecomposition {
    pub ml_coeffs: Vec<f64>,
    pub me_coeffs: Vec<f64>,
    pub ml_part: HermitianOperator,
    pub me_part: HermitianOperator,
}

pub fn decompose_state(rho: &DensityMatrix, basis: &OperatorBasis) -> Result<StateDecomposition> {
    if rho.dim() != basis.dim {
        return Err(Error::DimensionMismatch {
            expected: basis.dim,
            found: rho.dim(),
        });
    }
    let d = basis.dim;
    let project = |ops: &[HermitianOperator]| -> (Vec<f64>, HermitianOperator) {
        let coeffs: Vec<f64> = ops
            .iter()
            .map(|g| rho.operator().trace_product(g))
            .collect();
        let part = ops
            .iter()
            .zip(&coeffs)
            .fold(HermitianOperator::zeros(d), |acc, (g, &c)| {
                &acc + &g.scale(c)
            });
        (coeffs, part)
    };
    let (ml_coeffs, ml_part) = project(&basis.measurement);
    let (me_coeffs, me_part) = project(&basis.complement);
    Ok(StateDecomposition {
        ml_coeffs,
        me_coeffs,
        ml_part,
        me_part,
    })
}
