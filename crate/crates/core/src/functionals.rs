//! Information functionals over states and count data, the `R` and `T`
//! operators driving the reconstruction, and the Wigner-origin diagnostic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matrix_log_on_support, DensityMatrix, HermitianOperator, Spectrum};
use crate::pom::Pom;
use crate::tolerance::Tolerances;

/// Observed outcome counts and the frequencies derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct CountData {
    counts: Option<Vec<u64>>,
    total: u64,
    frequencies: Vec<f64>,
}

impl CountData {
    pub fn from_counts(counts: Vec<u64>) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if counts.is_empty() {
            return Err(Error::InvalidCounts("no outcomes".into()));
        }
        if total == 0 {
            return Err(Error::InvalidCounts("total count is zero".into()));
        }
        let frequencies = counts.iter().map(|&n| n as f64 / total as f64).collect();
        Ok(Self {
            counts: Some(counts),
            total,
            frequencies,
        })
    }

    /// Frequencies without underlying integer counts (e.g. exact probabilities).
    ///
    /// `total` is the nominal number of copies. The frequencies are
    /// renormalized after checking they sum to one within 1e-9.
    pub fn from_frequencies(frequencies: Vec<f64>, total: u64) -> Result<Self> {
        if frequencies.is_empty() {
            return Err(Error::InvalidCounts("no outcomes".into()));
        }
        if frequencies.iter().any(|f| !(*f >= 0.0) || !f.is_finite()) {
            return Err(Error::InvalidCounts(
                "frequencies must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = frequencies.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidCounts(format!("frequencies sum to {sum}")));
        }
        Ok(Self {
            counts: None,
            total: total.max(1),
            frequencies: frequencies.iter().map(|f| f / sum).collect(),
        })
    }

    pub fn counts(&self) -> Option<&[u64]> {
        self.counts.as_deref()
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }
}

/// Counts file: `{"counts": [n_0, ...], "total": N}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CountsFile {
    pub counts: Vec<u64>,
    #[serde(default)]
    pub total: Option<u64>,
}

impl TryFrom<CountsFile> for CountData {
    type Error = Error;

    fn try_from(file: CountsFile) -> Result<Self> {
        let sum: u64 = file.counts.iter().sum();
        if let Some(total) = file.total {
            if total != sum {
                return Err(Error::InvalidCounts(format!(
                    "declared total {total} but counts sum to {sum}"
                )));
            }
        }
        CountData::from_counts(file.counts)
    }
}

/// Born probabilities `p_j = tr(rho Pi_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Probabilities(pub Vec<f64>);

impl Probabilities {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

pub fn born_probabilities(rho: &DensityMatrix, pom: &Pom) -> Result<Probabilities> {
    if rho.dim() != pom.dim() {
        return Err(Error::DimensionMismatch {
            expected: pom.dim(),
            found: rho.dim(),
        });
    }
    let tol = Tolerances::DEFAULT.probability;
    let mut out = Vec::with_capacity(pom.len());
    for (j, e) in pom.effects().iter().enumerate() {
        let p = rho.operator().trace_product(e);
        if !(p >= -tol) {
            return Err(Error::InvalidPom(format!(
                "outcome {j} has probability {p:.3e}"
            )));
        }
        out.push(p.clamp(0.0, 1.0));
    }
    Ok(Probabilities(out))
}

/// `(1/N) log L = sum_j f_j log p_j`; `-inf` when a seen outcome has `p_j = 0`.
pub fn normalized_log_likelihood(f: &CountData, p: &Probabilities) -> f64 {
    assert_eq!(
        f.len(),
        p.0.len(),
        "frequency and probability lengths differ"
    );
    let mut total = 0.0;
    for (&fj, &pj) in f.frequencies().iter().zip(&p.0) {
        if fj == 0.0 {
            continue;
        }
        if pj <= 0.0 {
            return f64::NEG_INFINITY;
        }
        total += fj * pj.ln();
    }
    total
}

/// `sum_j f_j log f_j`, the additive constant separating likelihood and relative entropy.
pub fn frequency_self_information(f: &CountData) -> f64 {
    f.frequencies()
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum()
}

/// Natural-log entropy of a spectrum, with `0 log 0 = 0`.
pub fn spectrum_entropy(spec: &Spectrum) -> f64 {
    -spec
        .eigenvalues
        .iter()
        .filter(|&&w| w > 0.0)
        .map(|&w| w * w.ln())
        .sum::<f64>()
}

pub fn von_neumann_entropy(rho: &DensityMatrix) -> f64 {
    spectrum_entropy(&rho.spectrum())
}

/// `S({f}|{p}) = sum_j f_j log(f_j/p_j)`; `+inf` when a seen outcome has `p_j = 0`.
pub fn relative_entropy(f: &CountData, p: &Probabilities) -> f64 {
    assert_eq!(
        f.len(),
        p.0.len(),
        "frequency and probability lengths differ"
    );
    let mut total = 0.0;
    for (&fj, &pj) in f.frequencies().iter().zip(&p.0) {
        if fj == 0.0 {
            continue;
        }
        if pj <= 0.0 {
            return f64::INFINITY;
        }
        total += fj * (fj / pj).ln();
    }
    total
}

fn check_lengths(f: &CountData, pom: &Pom) -> Result<()> {
    if f.len() != pom.len() {
        return Err(Error::DimensionMismatch {
            expected: pom.len(),
            found: f.len(),
        });
    }
    Ok(())
}

/// `I(lambda; rho) = lambda S(rho) + (1/N) log L(rho)`.
pub fn objective(lambda: f64, rho: &DensityMatrix, f: &CountData, pom: &Pom) -> Result<f64> {
    check_lengths(f, pom)?;
    let p = born_probabilities(rho, pom)?;
    let loglik = normalized_log_likelihood(f, &p);
    if lambda == 0.0 {
        return Ok(loglik);
    }
    Ok(lambda * von_neumann_entropy(rho) + loglik)
}

/// `R = sum_j (f_j / p_j) Pi_j` from precomputed probabilities.
pub(crate) fn r_operator_from(
    f: &CountData,
    p: &Probabilities,
    pom: &Pom,
) -> Result<HermitianOperator> {
    let tiny = Tolerances::DEFAULT.zero_probability;
    let mut r = HermitianOperator::zeros(pom.dim());
    for (j, ((&fj, &pj), e)) in f
        .frequencies()
        .iter()
        .zip(&p.0)
        .zip(pom.effects())
        .enumerate()
    {
        if fj == 0.0 {
            continue;
        }
        if pj < tiny {
            return Err(Error::ZeroProbabilityOutcome {
                outcome: j,
                frequency: fj,
                probability: pj,
            });
        }
        r = &r + &e.scale(fj / pj);
    }
    Ok(r)
}

pub fn r_operator(rho: &DensityMatrix, f: &CountData, pom: &Pom) -> Result<HermitianOperator> {
    check_lengths(f, pom)?;
    let p = born_probabilities(rho, pom)?;
    r_operator_from(f, &p, pom)
}

/// `T = R - 1 - lambda (log rho - tr(rho log rho))`.
pub fn t_operator(
    rho: &DensityMatrix,
    f: &CountData,
    pom: &Pom,
    lambda: f64,
) -> Result<HermitianOperator> {
    let r = r_operator(rho, f, pom)?;
    let mut t = &r - &HermitianOperator::identity(rho.dim());
    if lambda != 0.0 {
        let log = matrix_log_on_support(rho, Tolerances::DEFAULT.log_floor);
        let mean = rho.operator().trace_product(&log);
        let centered = &log - &HermitianOperator::identity(rho.dim()).scale(mean);
        t = &t - &centered.scale(lambda);
    }
    Ok(t)
}

/// Photon-number parity `diag((-1)^n)`.
pub fn parity_operator(dim: usize) -> HermitianOperator {
    assert!(dim >= 1, "dimension must be positive");
    let diag: Vec<f64> = (0..dim)
        .map(|n| if n % 2 == 0 { 1.0 } else { -1.0 })
        .collect();
    HermitianOperator::from_real_diagonal(&diag)
}

/// Wigner function at the phase-space origin, `W00 = 2 tr(rho P)`.
pub fn wigner_origin(rho: &DensityMatrix) -> f64 {
    let m = rho.operator().matrix();
    2.0 * (0..rho.dim())
        .map(|n| {
            if n % 2 == 0 {
                m[(n, n)].re
            } else {
                -m[(n, n)].re
            }
        })
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pom::{pauli_pom, trine_pom};

    fn freqs(v: &[f64]) -> CountData {
        CountData::from_frequencies(v.to_vec(), 9).unwrap()
    }

    #[test]
    fn born_examples() {
        let trine = trine_pom();
        let p = born_probabilities(&DensityMatrix::maximally_mixed(2), &trine).unwrap();
        assert!(p.0.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
        let p = born_probabilities(&DensityMatrix::fock(0, 2), &trine).unwrap();
        assert!((p.0[0] - 2.0 / 3.0).abs() < 1e-15);
        let single = Pom::new(vec![HermitianOperator::identity(2)], vec!["1".into()]).unwrap();
        let p = born_probabilities(
            &DensityMatrix::from_bloch([0.2, 0.1, 0.0]).unwrap(),
            &single,
        )
        .unwrap();
        assert!((p.0[0] - 1.0).abs() < 1e-15);
        assert!(born_probabilities(&DensityMatrix::maximally_mixed(3), &trine).is_err());
    }

    #[test]
    fn likelihood_examples() {
        let half = Probabilities(vec![0.5, 0.5]);
        assert!(
            (normalized_log_likelihood(&freqs(&[0.5, 0.5]), &half) + 0.5f64.ln().abs()).abs()
                < 1e-15
        );
        assert!(
            (normalized_log_likelihood(&freqs(&[1.0, 0.0]), &half) - 0.5f64.ln()).abs() < 1e-15
        );
        let f = [2.0 / 3.0, 2.0 / 9.0, 1.0 / 9.0];
        let direct: f64 = f.iter().map(|x: &f64| x * x.ln()).sum();
        assert!((direct + 0.848_685).abs() < 1e-6);
        assert!(
            (normalized_log_likelihood(&freqs(&f), &Probabilities(f.to_vec())) - direct).abs()
                < 1e-15
        );
        let boundary = Probabilities(vec![1.0, 0.0]);
        assert_eq!(
            normalized_log_likelihood(&freqs(&[0.5, 0.5]), &boundary),
            f64::NEG_INFINITY
        );
        assert_eq!(
            relative_entropy(&freqs(&[0.5, 0.5]), &boundary),
            f64::INFINITY
        );
    }

    #[test]
    fn entropy_examples() {
        assert!(von_neumann_entropy(&DensityMatrix::fock(2, 4)).abs() < 1e-15);
        assert!(
            (von_neumann_entropy(&DensityMatrix::maximally_mixed(5)) - 5f64.ln()).abs() < 1e-14
        );
        assert!((5f64.ln() - 1.609_438).abs() < 1e-6);
        let rho = DensityMatrix::new(HermitianOperator::from_real_diagonal(&[0.75, 0.25])).unwrap();
        let expect = -(0.75 * 0.75f64.ln() + 0.25 * 0.25f64.ln());
        assert!((von_neumann_entropy(&rho) - expect).abs() < 1e-15);
        assert!((expect - 0.562_335).abs() < 1e-6);
    }

    #[test]
    fn relative_entropy_examples() {
        let f = freqs(&[0.3, 0.7]);
        let p = Probabilities(vec![0.3, 0.7]);
        assert!(relative_entropy(&f, &p).abs() < 1e-15);
        let rel = relative_entropy(&freqs(&[1.0, 0.0]), &Probabilities(vec![0.5, 0.5]));
        assert!((rel - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn objective_examples() {
        let trine = trine_pom();
        let mm = DensityMatrix::maximally_mixed(2);
        let f = freqs(&[1.0 / 3.0; 3]);
        let val = objective(1.0, &mm, &f, &trine).unwrap();
        assert!((val - (2f64.ln() + (1.0f64 / 3.0).ln())).abs() < 1e-14);
        assert!((val + 0.405_465).abs() < 1e-6);
        let rho = DensityMatrix::from_bloch([0.2, 0.3, -0.1]).unwrap();
        let f = freqs(&[0.5, 0.3, 0.2]);
        let l0 = objective(0.0, &rho, &f, &trine).unwrap();
        let l = objective(0.7, &rho, &f, &trine).unwrap();
        assert!((l - l0 - 0.7 * von_neumann_entropy(&rho)).abs() < 1e-14);
        assert!(objective(0.1, &rho, &freqs(&[0.5, 0.5]), &trine).is_err());
    }

    #[test]
    fn r_operator_examples() {
        let trine = trine_pom();
        let mm = DensityMatrix::maximally_mixed(2);
        let r = r_operator(&mm, &freqs(&[1.0 / 3.0; 3]), &trine).unwrap();
        assert!((&r - &HermitianOperator::identity(2)).frobenius_norm() < 1e-14);

        let f = freqs(&[2.0 / 3.0, 2.0 / 9.0, 1.0 / 9.0]);
        let r = r_operator(&mm, &f, &trine).unwrap();
        let e = trine.effects();
        let expect = &(&e[0].scale(2.0) + &e[1].scale(2.0 / 3.0)) + &e[2].scale(1.0 / 3.0);
        assert!((&r - &expect).frobenius_norm() < 1e-14);
        assert!((r.trace_product(mm.operator()) - 1.0).abs() < 1e-14);

        let up = DensityMatrix::fock(1, 2);
        let z = pauli_pom();
        // outcome +z has zero probability in |1><1|
        assert!(matches!(
            r_operator(
                &up,
                &CountData::from_counts(vec![1, 1, 1, 1, 1, 1]).unwrap(),
                &z
            ),
            Err(Error::ZeroProbabilityOutcome { outcome: 4, .. })
        ));
    }

    #[test]
    fn t_operator_examples() {
        let trine = trine_pom();
        let mm = DensityMatrix::maximally_mixed(2);
        let t = t_operator(&mm, &freqs(&[1.0 / 3.0; 3]), &trine, 0.0).unwrap();
        assert!(t.frobenius_norm() < 1e-14);
        let f = freqs(&[2.0 / 3.0, 2.0 / 9.0, 1.0 / 9.0]);
        let t = t_operator(&mm, &f, &trine, 0.8).unwrap();
        let r = r_operator(&mm, &f, &trine).unwrap();
        assert!((&t - &(&r - &HermitianOperator::identity(2))).frobenius_norm() < 1e-14);
        let rho = DensityMatrix::from_bloch([0.4, -0.2, 0.5]).unwrap();
        let t = t_operator(&rho, &f, &trine, 0.3).unwrap();
        assert!(t.trace_product(rho.operator()).abs() < 1e-12);
    }

    #[test]
    fn parity_and_wigner() {
        let p = parity_operator(3);
        assert_eq!(p, HermitianOperator::from_real_diagonal(&[1.0, -1.0, 1.0]));
        assert_eq!(parity_operator(1), HermitianOperator::identity(1));
        let p6 = parity_operator(6);
        let sq = HermitianOperator::from_matrix_hermitized(p6.matrix() * p6.matrix());
        assert_eq!(sq, HermitianOperator::identity(6));
        assert_eq!(wigner_origin(&DensityMatrix::fock(0, 4)), 2.0);
        assert_eq!(wigner_origin(&DensityMatrix::fock(1, 4)), -2.0);
        assert!(wigner_origin(&DensityMatrix::maximally_mixed(2)).abs() < 1e-15);
    }
}
