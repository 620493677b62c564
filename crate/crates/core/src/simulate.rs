//! Synthetic experiments: random true states, multinomial sampling, and the
//! lambda and dimension sweeps with trial-averaged diagnostics.
//!
//! All randomness comes from ChaCha8 streams derived from one seed. The true
//! state uses stream 0 and trial `t` of sweep entry `k` uses its own stream,
//! so trials are independent of each other and of evaluation order.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::{
    born_probabilities, normalized_log_likelihood, von_neumann_entropy, wigner_origin, CountData,
};
use crate::linalg::{trace_distance, Complex64, DensityMatrix, HermitianOperator};
use crate::pom::{
    default_homodyne_settings, gram_analysis, homodyne_pom, trine_pom, HomodyneMode, Pom,
    QuadratureSetting,
};
use crate::reconstruct::{mlme_reconstruct, IterationConfig, ReconstructionResult};

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Hilbert-Schmidt random state `G G^dagger / tr(G G^dagger)`.
pub fn random_density(dim: usize, seed: u64) -> Result<DensityMatrix> {
    random_density_with(dim, &mut rng_for(seed, 0))
}

pub fn random_density_with<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<DensityMatrix> {
    if dim == 0 {
        return Err(Error::InvalidConfig("dimension must be at least 1".into()));
    }
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let g = DMatrix::from_fn(dim, dim, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(scale * re, scale * im)
    });
    let op = HermitianOperator::from_matrix_hermitized(&g * g.adjoint());
    DensityMatrix::from_unnormalized(op)
}

/// One multinomial draw of `copies` outcomes from the Born probabilities.
pub fn sample_counts(rho: &DensityMatrix, pom: &Pom, copies: u64, seed: u64) -> Result<CountData> {
    sample_counts_with(rho, pom, copies, &mut rng_for(seed, 0))
}

pub fn sample_counts_with<R: Rng + ?Sized>(
    rho: &DensityMatrix,
    pom: &Pom,
    copies: u64,
    rng: &mut R,
) -> Result<CountData> {
    if copies == 0 {
        return Err(Error::InvalidConfig("copies must be at least 1".into()));
    }
    let p = born_probabilities(rho, pom)?;
    CountData::from_counts(multinomial(p.values(), copies, rng))
}

// Sequential conditional binomials.
fn multinomial<R: Rng + ?Sized>(p: &[f64], n: u64, rng: &mut R) -> Vec<u64> {
    let mut counts = vec![0u64; p.len()];
    let mut left = n;
    let mut mass: f64 = p.iter().sum();
    for (j, &pj) in p.iter().enumerate() {
        if left == 0 {
            break;
        }
        if j + 1 == p.len() {
            counts[j] = left;
            break;
        }
        let q = if mass > 0.0 {
            (pj / mass).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let draw = Binomial::new(left, q)
            .expect("probability in [0, 1]")
            .sample(rng);
        counts[j] = draw;
        left -= draw;
        mass -= pj;
    }
    counts
}

/// Measurement used by an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PomSpec {
    Trine,
    Homodyne {
        /// Defaults to [`default_homodyne_settings`].
        #[serde(default)]
        settings: Option<Vec<QuadratureSetting>>,
        #[serde(default)]
        mode: HomodyneMode,
    },
}

impl Default for PomSpec {
    fn default() -> Self {
        PomSpec::Homodyne {
            settings: None,
            mode: HomodyneMode::default(),
        }
    }
}

impl PomSpec {
    pub fn build(&self, dim: usize) -> Result<Pom> {
        match self {
            PomSpec::Trine if dim == 2 => Ok(trine_pom()),
            PomSpec::Trine => Err(Error::InvalidConfig(format!(
                "trine POM needs dim_true = 2, got {dim}"
            ))),
            PomSpec::Homodyne { settings, mode } => match settings {
                Some(s) => homodyne_pom(s, dim, *mode),
                None => homodyne_pom(&default_homodyne_settings(), dim, *mode),
            },
        }
    }
}

fn default_lambda() -> f64 {
    IterationConfig::default().lambda
}

fn default_trials() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dim_true: usize,
    #[serde(default)]
    pub pom_spec: PomSpec,
    pub copies: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub seed: u64,
    /// MLME weight for the dimension sweep.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Reconstruction dimensions for the dimension sweep; `None` means `[dim_true]`.
    #[serde(default)]
    pub recon_dims: Option<Vec<usize>>,
    /// Grid for the lambda sweep.
    #[serde(default)]
    pub lambdas: Vec<f64>,
    /// Use exact probabilities as frequencies instead of sampling.
    #[serde(default)]
    pub noiseless: bool,
    /// Fixed true state; a seeded random state otherwise.
    #[serde(default)]
    pub true_state: Option<DensityMatrix>,
    #[serde(default)]
    pub max_iters: Option<usize>,
    #[serde(default)]
    pub residual_tol: Option<f64>,
}

impl ExperimentConfig {
    pub fn new(dim_true: usize, copies: u64, seed: u64) -> Self {
        Self {
            dim_true,
            pom_spec: PomSpec::default(),
            copies,
            trials: 1,
            seed,
            lambda: default_lambda(),
            recon_dims: None,
            lambdas: Vec::new(),
            noiseless: false,
            true_state: None,
            max_iters: None,
            residual_tol: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim_true < 2 {
            return Err(Error::InvalidConfig(format!(
                "dim_true = {} < 2",
                self.dim_true
            )));
        }
        if self.copies == 0 {
            return Err(Error::InvalidConfig("copies must be at least 1".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lambda = {} must be finite and >= 0",
                self.lambda
            )));
        }
        if let Some(dims) = &self.recon_dims {
            if dims.is_empty() {
                return Err(Error::InvalidConfig("recon_dims is empty".into()));
            }
            if let Some(d) = dims.iter().find(|&&d| d < 2 || d > self.dim_true) {
                return Err(Error::InvalidConfig(format!(
                    "reconstruction dimension {d} outside 2..={}",
                    self.dim_true
                )));
            }
        }
        if let Some(rho) = &self.true_state {
            if rho.dim() != self.dim_true {
                return Err(Error::DimensionMismatch {
                    expected: self.dim_true,
                    found: rho.dim(),
                });
            }
        }
        self.iteration(self.lambda).validate()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.recon_dims
            .clone()
            .unwrap_or_else(|| vec![self.dim_true])
    }

    pub fn iteration(&self, lambda: f64) -> IterationConfig {
        let mut cfg = IterationConfig::default().with_lambda(lambda);
        if let Some(n) = self.max_iters {
            cfg.max_iters = n;
        }
        if let Some(t) = self.residual_tol {
            cfg.residual_tol = t;
        }
        cfg
    }

    pub fn true_state(&self) -> Result<DensityMatrix> {
        match &self.true_state {
            Some(rho) => Ok(rho.clone()),
            None => random_density(self.dim_true, self.seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialFailure {
    pub trial: usize,
    pub message: String,
}

/// Trial-averaged diagnostics for one lambda or one reconstruction dimension.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRecord {
    pub key: f64,
    pub mean_entropy: f64,
    pub mean_log_likelihood: f64,
    pub mean_trace_distance: f64,
    pub mean_w00: f64,
    /// Successful trials entering the means.
    pub trials: usize,
    /// Dimension sweep only: whether the projected POM is informationally complete.
    pub complete: Option<bool>,
    /// Dimension sweep only: trace distance of the true state to its truncation.
    pub truncation_bias: Option<f64>,
    /// Successful trials that hit the iteration limit or stalled.
    pub unconverged: usize,
    pub failures: Vec<TrialFailure>,
}

struct TrialResult {
    entropy: f64,
    loglik: f64,
    distance: f64,
    w00: f64,
    converged: bool,
}

fn data_for(
    rho: &DensityMatrix,
    pom: &Pom,
    cfg: &ExperimentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<CountData> {
    if cfg.noiseless {
        let p = born_probabilities(rho, pom)?;
        CountData::from_frequencies(p.0, cfg.copies)
    } else {
        sample_counts_with(rho, pom, cfg.copies, rng)
    }
}

fn evaluate(
    res: &ReconstructionResult,
    data: &CountData,
    pom: &Pom,
    rho_true: &DensityMatrix,
) -> Result<TrialResult> {
    let est = &res.estimator;
    let p = born_probabilities(est, pom)?;
    let r = TrialResult {
        entropy: von_neumann_entropy(est),
        loglik: normalized_log_likelihood(data, &p),
        distance: trace_distance(&est.embed(rho_true.dim()), rho_true)?,
        w00: wigner_origin(est),
        converged: res.converged,
    };
    if [r.entropy, r.loglik, r.distance, r.w00]
        .iter()
        .all(|v| v.is_finite())
    {
        Ok(r)
    } else {
        Err(Error::InvalidConfig("non-finite diagnostic".into()))
    }
}

fn aggregate(key: f64, outcomes: Vec<Result<TrialResult>>) -> SweepRecord {
    let mut rec = SweepRecord {
        key,
        mean_entropy: 0.0,
        mean_log_likelihood: 0.0,
        mean_trace_distance: 0.0,
        mean_w00: 0.0,
        trials: 0,
        complete: None,
        truncation_bias: None,
        unconverged: 0,
        failures: Vec::new(),
    };
    for (trial, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok(r) => {
                rec.mean_entropy += r.entropy;
                rec.mean_log_likelihood += r.loglik;
                rec.mean_trace_distance += r.distance;
                rec.mean_w00 += r.w00;
                rec.trials += 1;
                if !r.converged {
                    rec.unconverged += 1;
                }
            }
            Err(e) => rec.failures.push(TrialFailure {
                trial,
                message: e.to_string(),
            }),
        }
    }
    if rec.trials > 0 {
        let n = rec.trials as f64;
        rec.mean_entropy /= n;
        rec.mean_log_likelihood /= n;
        rec.mean_trace_distance /= n;
        rec.mean_w00 /= n;
    } else {
        rec.mean_entropy = f64::NAN;
        rec.mean_log_likelihood = f64::NAN;
        rec.mean_trace_distance = f64::NAN;
        rec.mean_w00 = f64::NAN;
    }
    rec
}

/// Reconstructs every trial's data set once per `lambdas` entry.
///
/// Each trial samples one data set from the true state and reuses it for
/// all lambda values. Reconstruction is in `dim_true`.
pub fn lambda_sweep(config: &ExperimentConfig, lambdas: &[f64]) -> Result<Vec<SweepRecord>> {
    config.validate()?;
    if lambdas.is_empty() {
        return Err(Error::InvalidConfig("no lambda values".into()));
    }
    if lambdas.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
        return Err(Error::InvalidConfig(
            "lambda values must be positive and finite".into(),
        ));
    }
    if lambdas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig(
            "lambda values must be strictly increasing".into(),
        ));
    }
    let rho_true = config.true_state()?;
    let pom = config.pom_spec.build(config.dim_true)?;
    let data: Vec<Result<CountData>> = (0..config.trials)
        .map(|t| {
            data_for(
                &rho_true,
                &pom,
                config,
                &mut rng_for(config.seed, t as u64 + 1),
            )
        })
        .collect();

    let jobs: Vec<(usize, usize)> = (0..lambdas.len())
        .flat_map(|k| (0..config.trials).map(move |t| (k, t)))
        .collect();
    let mut results: Vec<Option<Result<TrialResult>>> = jobs
        .par_iter()
        .map(|&(k, t)| {
            let d = match &data[t] {
                Ok(d) => d,
                Err(e) => return Some(Err(e.clone())),
            };
            let res = mlme_reconstruct(d, &pom, &config.iteration(lambdas[k]));
            Some(res.and_then(|r| evaluate(&r, d, &pom, &rho_true)))
        })
        .collect();

    Ok(lambdas
        .iter()
        .enumerate()
        .map(|(k, &lambda)| {
            let outcomes = (0..config.trials)
                .map(|t| {
                    results[k * config.trials + t]
                        .take()
                        .expect("each job visited once")
                })
                .collect();
            aggregate(lambda, outcomes)
        })
        .collect())
}

/// Reconstructs in each of `recon_dims` using the POM compressed to that subspace.
///
/// Data are drawn afresh for every dimension and trial from the true state
/// measured with the full POM. ML is used where the compressed POM is
/// informationally complete and MLME elsewhere. Estimators are zero-padded
/// to `dim_true` before comparing with the true state.
pub fn dimension_sweep(config: &ExperimentConfig) -> Result<Vec<SweepRecord>> {
    config.validate()?;
    let dims = config.dims();
    let rho_true = config.true_state()?;
    let full = config.pom_spec.build(config.dim_true)?;
    let mut poms = Vec::with_capacity(dims.len());
    for &d in &dims {
        let pom = full.compress(d)?;
        if pom.len() != full.len() {
            return Err(Error::InvalidPom(format!(
                "compression to dimension {d} changed the outcome count"
            )));
        }
        let complete = gram_analysis(&pom, None).is_complete();
        let bias = trace_distance(&rho_true.truncate(d)?.embed(config.dim_true), &rho_true)?;
        poms.push((pom, complete, bias));
    }

    let trials = config.trials;
    let jobs: Vec<(usize, usize)> = (0..dims.len())
        .flat_map(|k| (0..trials).map(move |t| (k, t)))
        .collect();
    let mut results: Vec<Option<Result<TrialResult>>> = jobs
        .par_iter()
        .map(|&(k, t)| {
            let (pom, complete, _) = &poms[k];
            let stream = (k * trials + t) as u64 + 1;
            let run = || {
                let data = data_for(&rho_true, &full, config, &mut rng_for(config.seed, stream))?;
                let lambda = if *complete { 0.0 } else { config.lambda };
                let res = mlme_reconstruct(&data, pom, &config.iteration(lambda))?;
                evaluate(&res, &data, pom, &rho_true)
            };
            Some(run())
        })
        .collect();

    Ok(dims
        .iter()
        .enumerate()
        .map(|(k, &d)| {
            let outcomes = (0..trials)
                .map(|t| {
                    results[k * trials + t]
                        .take()
                        .expect("each job visited once")
                })
                .collect();
            let mut rec = aggregate(d as f64, outcomes);
            rec.complete = Some(poms[k].1);
            rec.truncation_bias = Some(poms[k].2);
            rec
        })
        .collect())
}

/// `%.12g`-style formatting.
pub fn format_sig12(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.11e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-4..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        trim(&format!("{:.*}", decimals, x))
    } else {
        format!("{}e{}", trim(mantissa), exp)
    }
}

pub const CSV_HEADER: &str = "key,mean_entropy,mean_loglik,mean_trace_distance,mean_w00,trials";

/// Sweep records as CSV. Records carrying completeness information get two
/// extra columns, `complete,truncation_bias`.
pub fn records_to_csv(records: &[SweepRecord]) -> String {
    let extended = records.iter().any(|r| r.complete.is_some());
    let mut out = String::from(CSV_HEADER);
    if extended {
        out.push_str(",complete,truncation_bias");
    }
    out.push('\n');
    for r in records {
        let _ = write!(
            out,
            "{},{},{},{},{},{}",
            format_sig12(r.key),
            format_sig12(r.mean_entropy),
            format_sig12(r.mean_log_likelihood),
            format_sig12(r.mean_trace_distance),
            format_sig12(r.mean_w00),
            r.trials
        );
        if extended {
            let _ = write!(
                out,
                ",{},{}",
                r.complete.map_or(String::new(), |c| c.to_string()),
                r.truncation_bias.map_or(String::new(), format_sig12)
            );
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pom::pauli_pom;

    #[test]
    fn random_density_is_valid_and_deterministic() {
        for seed in 0..5 {
            let a = random_density(4, seed).unwrap();
            assert!((a.operator().trace() - 1.0).abs() < 1e-12);
            assert!(a.operator().min_eigenvalue() >= 0.0);
            let b = random_density(4, seed).unwrap();
            assert_eq!(a.operator().matrix(), b.operator().matrix());
        }
        let one = random_density(1, 3).unwrap();
        assert!((one.operator().matrix()[(0, 0)].re - 1.0).abs() < 1e-15);
        assert_ne!(
            random_density(3, 1).unwrap().operator().matrix(),
            random_density(3, 2).unwrap().operator().matrix()
        );
        assert!(random_density(0, 1).is_err());
    }

    #[test]
    fn sampling_closes_and_respects_degenerate_distributions() {
        let rho = random_density(2, 11).unwrap();
        let c = sample_counts(&rho, &trine_pom(), 9, 5).unwrap();
        assert_eq!(c.counts().unwrap().iter().sum::<u64>(), 9);

        let up = DensityMatrix::from_bloch([0.0, 0.0, 1.0]).unwrap();
        let pom = pauli_pom();
        let p = born_probabilities(&up, &pom).unwrap();
        let c = sample_counts(&up, &pom, 1000, 1).unwrap();
        for (n, pj) in c.counts().unwrap().iter().zip(p.values()) {
            if *pj == 0.0 {
                assert_eq!(*n, 0);
            }
        }
        assert_eq!(
            multinomial(&[1.0, 0.0, 0.0], 17, &mut rng_for(0, 0)),
            vec![17, 0, 0]
        );
    }

    #[test]
    fn sampling_matches_probabilities_within_standard_errors() {
        let rho = random_density(2, 4).unwrap();
        let pom = pauli_pom();
        let n = 1_000_000u64;
        let c = sample_counts(&rho, &pom, n, 9).unwrap();
        let p = born_probabilities(&rho, &pom).unwrap();
        for (f, pj) in c.frequencies().iter().zip(p.values()) {
            let se = (pj * (1.0 - pj) / n as f64).sqrt();
            assert!((f - pj).abs() <= 3.0 * se, "f {f} p {pj}");
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = ExperimentConfig::new(4, 100, 1);
        assert!(cfg.validate().is_ok());
        cfg.recon_dims = Some(vec![]);
        assert!(cfg.validate().is_err());
        cfg.recon_dims = Some(vec![2, 5]);
        assert!(cfg.validate().is_err());
        cfg.recon_dims = Some(vec![2, 4]);
        cfg.trials = 0;
        assert!(cfg.validate().is_err());
        let json = r#"{"dim_true": 3, "copies": 10, "seed": 2, "recon_dims": [2, 3],
                       "pom_spec": {"kind": "homodyne", "mode": "binned"}}"#;
        let cfg: ExperimentConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.trials, 1);
        assert_eq!(cfg.dims(), vec![2, 3]);
        assert!(serde_json::from_str::<ExperimentConfig>(
            r#"{"dim_true": 3, "copies": 10, "seed": 1, "bogus": 1}"#
        )
        .is_err());
    }

    #[test]
    fn lambda_sweep_reuses_data_and_is_deterministic() {
        let mut cfg = ExperimentConfig::new(2, 200, 7);
        cfg.pom_spec = PomSpec::Trine;
        cfg.trials = 2;
        let a = lambda_sweep(&cfg, &[0.01, 0.1, 1.0]).unwrap();
        let b = lambda_sweep(&cfg, &[0.01, 0.1, 1.0]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        for w in a.windows(2) {
            assert!(w[0].mean_entropy <= w[1].mean_entropy + 1e-9);
            assert!(w[0].mean_log_likelihood >= w[1].mean_log_likelihood - 1e-9);
        }
        assert!(a.iter().all(|r| r.trials == 2 && r.failures.is_empty()));
        assert!(lambda_sweep(&cfg, &[0.1, 0.01]).is_err());
        assert!(lambda_sweep(&cfg, &[]).is_err());
    }

    #[test]
    fn noiseless_full_dimension_recovers_true_state() {
        let mut cfg = ExperimentConfig::new(3, 10_000, 3);
        cfg.noiseless = true;
        cfg.recon_dims = Some(vec![2, 3]);
        let recs = dimension_sweep(&cfg).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].complete, Some(true));
        assert!(
            recs[1].mean_trace_distance <= 1e-3,
            "{}",
            recs[1].mean_trace_distance
        );
        assert!(recs[0].truncation_bias.unwrap() > 0.0);
        assert!(recs[1].truncation_bias.unwrap() < 1e-12);
    }

    #[test]
    fn sig12_formatting() {
        assert_eq!(format_sig12(0.0), "0");
        assert_eq!(format_sig12(1.0), "1");
        assert_eq!(format_sig12(1e-4), "0.0001");
        assert_eq!(format_sig12(1e-5), "1e-5");
        assert_eq!(format_sig12(-1.6094379124341003), "-1.60943791243");
        assert_eq!(format_sig12(123456789012345.0), "1.23456789012e14");
        assert_eq!(format_sig12(2.5), "2.5");
    }

    #[test]
    fn csv_layout() {
        let rec = SweepRecord {
            key: 2.0,
            mean_entropy: 0.5,
            mean_log_likelihood: -1.0,
            mean_trace_distance: 0.1,
            mean_w00: 0.2,
            trials: 3,
            complete: Some(true),
            truncation_bias: Some(0.0),
            unconverged: 0,
            failures: vec![],
        };
        let csv = records_to_csv(&[rec.clone()]);
        assert_eq!(
            csv,
            "key,mean_entropy,mean_loglik,mean_trace_distance,mean_w00,trials,complete,truncation_bias\n2,0.5,-1,0.1,0.2,3,true,0\n"
        );
        let plain = SweepRecord {
            complete: None,
            truncation_bias: None,
            ..rec
        };
        assert!(records_to_csv(&[plain]).starts_with(&format!("{CSV_HEADER}\n")));
    }
}
