//! Maximum-likelihood maximum-entropy reconstruction.
//!
//! The estimator is found by the multiplicative ascent
//! `rho <- (1 + eps T) rho (1 + eps T) / tr(...)` with
//! `T = R - 1 - lambda (log rho - tr(rho log rho))`, starting from the
//! maximally mixed state. Every iterate is a congruence of the previous one,
//! so positivity and unit trace are preserved by construction. The step size
//! is halved whenever a step would lower the objective
//! `I(lambda; rho) = lambda S(rho) + (1/N) log L(rho)`.
//!
//! Near convergence the per-step gain in `I` drops below the rounding error
//! of evaluating `I` itself, so the acceptance test compares objective
//! *differences* computed directly from the step `delta = rho' - rho`:
//! the likelihood change as `sum_j f_j log1p(dp_j / p_j)` and, for small
//! steps, the entropy change by its second-order expansion in the eigenbasis
//! of `rho`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::functionals::{
    born_probabilities, r_operator_from, spectrum_entropy, CountData, Probabilities,
};
use crate::linalg::{CMatrix, DensityMatrix, HermitianOperator, Spectrum};
use crate::pom::Pom;
use crate::tolerance::Tolerances;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct IterationConfig {
    pub lambda: f64,
    /// Initial step size.
    pub epsilon: f64,
    /// Cap for step doubling.
    pub max_epsilon: f64,
    pub max_iters: usize,
    /// Convergence threshold on `||T rho||_F`.
    pub residual_tol: f64,
    /// Stall threshold on the relative objective gain over `stall_window` accepted steps.
    pub objective_tol: f64,
    pub stall_window: usize,
    pub log_floor: f64,
}

impl Default for IterationConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            epsilon: 0.1,
            max_epsilon: 0.5,
            max_iters: 50_000,
            residual_tol: 1e-8,
            objective_tol: 1e-18,
            stall_window: 10,
            log_floor: Tolerances::DEFAULT.log_floor,
        }
    }
}

impl IterationConfig {
    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad("lambda must be finite and non-negative");
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return bad("epsilon must lie in (0, 1]");
        }
        if !(self.max_epsilon >= self.epsilon && self.max_epsilon <= 1.0) {
            return bad("max_epsilon must lie in [epsilon, 1]");
        }
        if !(self.residual_tol > 0.0) || !(self.objective_tol > 0.0) || !(self.log_floor > 0.0) {
            return bad("tolerances must be positive");
        }
        if self.stall_window == 0 {
            return bad("stall_window must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Converged,
    MaxIters,
    /// No step could increase the objective, or the gain over the stall window became negligible.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    pub estimator: DensityMatrix,
    pub iterations: usize,
    /// `||T rho||_F` at the estimator.
    pub residual: f64,
    /// Objective after every accepted step, starting with the initial state.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub termination: Termination,
    pub lambda: f64,
}

#[derive(Serialize)]
struct ResultJson<'a> {
    estimator: &'a DensityMatrix,
    iterations: usize,
    residual: f64,
    converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    objective_trace: Option<&'a [f64]>,
}

impl ReconstructionResult {
    /// `{"estimator", "iterations", "residual", "converged"[, "objective_trace"]}`.
    pub fn to_json(&self, include_trace: bool) -> serde_json::Value {
        serde_json::to_value(ResultJson {
            estimator: &self.estimator,
            iterations: self.iterations,
            residual: self.residual,
            converged: self.converged,
            objective_trace: include_trace.then_some(self.objective_trace.as_slice()),
        })
        .expect("result serializes")
    }
}

/// What an observer sees after every accepted iterate (and the start).
#[derive(Debug)]
pub struct IterateView<'a> {
    pub iteration: usize,
    pub state: &'a DensityMatrix,
    pub spectrum: &'a Spectrum,
    pub objective: f64,
    pub epsilon: f64,
}

/// Optional knobs for a single run.
#[derive(Default)]
pub struct RunOptions<'a> {
    /// Initial state; the maximally mixed state when `None`.
    pub start: Option<DensityMatrix>,
    pub observer: Option<&'a mut dyn FnMut(&IterateView<'_>)>,
}

struct Iterate {
    rho: DensityMatrix,
    spectrum: Spectrum,
    probs: Probabilities,
}

impl Iterate {
    fn new(rho: DensityMatrix, pom: &Pom) -> Result<Self> {
        let spectrum = rho.spectrum();
        let probs = born_probabilities(&rho, pom)?;
        Ok(Self {
            rho,
            spectrum,
            probs,
        })
    }

    fn objective(&self, f: &CountData, lambda: f64) -> f64 {
        let loglik = crate::functionals::normalized_log_likelihood(f, &self.probs);
        if lambda == 0.0 {
            loglik
        } else {
            lambda * spectrum_entropy(&self.spectrum) + loglik
        }
    }
}

fn t_operator_at(
    it: &Iterate,
    f: &CountData,
    pom: &Pom,
    lambda: f64,
    floor: f64,
) -> Result<HermitianOperator> {
    let r = r_operator_from(f, &it.probs, pom)?;
    let mut t = &r - &HermitianOperator::identity(pom.dim());
    if lambda != 0.0 {
        let log = it.spectrum.map(|w| w.max(floor).ln());
        let mean = it.rho.operator().trace_product(&log);
        let centered = &log - &HermitianOperator::identity(pom.dim()).scale(mean);
        t = &t - &centered.scale(lambda);
    }
    Ok(t)
}

/// First divided difference of `log`: `(ln a - ln b)/(a - b)`, `1/a` at `a = b`.
fn log_divided_difference(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi - lo <= 1e-8 * hi {
        let mid = 0.5 * (hi + lo);
        1.0 / mid
    } else {
        (hi.ln() - lo.ln()) / (hi - lo)
    }
}

/// `S(rho + delta) - S(rho)`: second-order expansion in the eigenbasis of
/// `rho` for steps small relative to its spectrum, direct difference otherwise.
fn entropy_change(current: &Iterate, delta: &CMatrix, next: &Spectrum, floor: f64) -> f64 {
    let spec = &current.spectrum;
    let w_min = spec.min().max(0.0);
    let v = &spec.eigenvectors;
    let rotated = v.adjoint() * delta * v;
    let largest = rotated.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
    if w_min > floor && largest <= 1e-4 * w_min {
        let d = rotated.nrows();
        let mut first = 0.0;
        let mut second = 0.0;
        for i in 0..d {
            first -= rotated[(i, i)].re * (spec.eigenvalues[i].ln() + 1.0);
            for j in 0..d {
                second += rotated[(i, j)].norm_sqr()
                    * log_divided_difference(spec.eigenvalues[i], spec.eigenvalues[j]);
            }
        }
        first - 0.5 * second
    } else {
        spectrum_entropy(next) - spectrum_entropy(spec)
    }
}

/// `sum_j f_j [log p'_j - log p_j]` with `p' = p + dp`, accurate for small `dp`.
fn loglik_change(f: &CountData, p: &Probabilities, delta: &HermitianOperator, pom: &Pom) -> f64 {
    let mut total = 0.0;
    for ((&fj, &pj), e) in f.frequencies().iter().zip(p.values()).zip(pom.effects()) {
        if fj == 0.0 {
            continue;
        }
        let ratio = delta.trace_product(e) / pj;
        if !(ratio > -1.0) {
            return f64::NEG_INFINITY;
        }
        total += fj * ratio.ln_1p();
    }
    total
}

fn check_inputs(
    f: &CountData,
    pom: &Pom,
    config: &IterationConfig,
    start: Option<&DensityMatrix>,
) -> Result<()> {
    config.validate()?;
    if f.len() != pom.len() {
        return Err(Error::DimensionMismatch {
            expected: pom.len(),
            found: f.len(),
        });
    }
    if let Some(s) = start {
        if s.dim() != pom.dim() {
            return Err(Error::DimensionMismatch {
                expected: pom.dim(),
                found: s.dim(),
            });
        }
    }
    Ok(())
}

const MIN_EPSILON: f64 = 1e-14;
const DOUBLING_STREAK: usize = 5;

/// MLME estimator for fixed `lambda`, started from the maximally mixed state.
pub fn mlme_reconstruct(
    f: &CountData,
    pom: &Pom,
    config: &IterationConfig,
) -> Result<ReconstructionResult> {
    mlme_reconstruct_with(f, pom, config, RunOptions::default())
}

/// ML estimator: [`mlme_reconstruct`] with `lambda = 0`.
pub fn ml_reconstruct(
    f: &CountData,
    pom: &Pom,
    config: &IterationConfig,
) -> Result<ReconstructionResult> {
    mlme_reconstruct(f, pom, &config.with_lambda(0.0))
}

pub fn mlme_reconstruct_with(
    f: &CountData,
    pom: &Pom,
    config: &IterationConfig,
    mut options: RunOptions<'_>,
) -> Result<ReconstructionResult> {
    check_inputs(f, pom, config, options.start.as_ref())?;
    let lambda = config.lambda;
    let dim = pom.dim();
    let start = options
        .start
        .take()
        .unwrap_or_else(|| DensityMatrix::maximally_mixed(dim));
    let mut current = Iterate::new(start, pom)?;
    let mut objective = current.objective(f, lambda);
    if !objective.is_finite() {
        return Err(Error::InvalidCounts(
            "initial state assigns zero probability to an observed outcome".into(),
        ));
    }
    let mut trace = vec![objective];
    let mut epsilon = config.epsilon;
    let cap = config.max_epsilon;
    let mut streak = 0usize;
    let mut iterations = 0usize;
    let mut stalled = false;
    let mut recent_gains = std::collections::VecDeque::with_capacity(config.stall_window + 1);

    let mut notify = |it: &Iterate, n: usize, obj: f64, eps: f64| {
        if let Some(obs) = options.observer.as_mut() {
            obs(&IterateView {
                iteration: n,
                state: &it.rho,
                spectrum: &it.spectrum,
                objective: obj,
                epsilon: eps,
            });
        }
    };
    notify(&current, 0, objective, epsilon);

    let (residual, termination) = loop {
        let t = t_operator_at(&current, f, pom, lambda, config.log_floor)?;
        let rho = current.rho.operator().matrix();
        // tr(T rho) vanishes exactly; removing its rounding keeps the
        // normalization term from swamping small gains.
        let shift = (t.matrix() * rho).trace().re;
        let t = &t - &HermitianOperator::identity(dim).scale(shift);
        let a = t.matrix() * rho;
        let residual = a.norm();
        if residual <= config.residual_tol {
            break (residual, Termination::Converged);
        }
        if stalled {
            break (residual, Termination::Stalled);
        }
        if iterations >= config.max_iters {
            break (residual, Termination::MaxIters);
        }
        let tr_a = a.trace().re;
        let ata = &a * t.matrix();
        let tr_ata = ata.trace().re;
        let sym = &a + a.adjoint();

        let accepted = loop {
            let z = 1.0 + 2.0 * epsilon * tr_a + epsilon * epsilon * tr_ata;
            let step: CMatrix =
                (sym.scale(epsilon) + ata.scale(epsilon * epsilon) - rho.scale(z - 1.0)).unscale(z);
            let drift = step.trace().re;
            let delta = HermitianOperator::from_matrix_hermitized(step - rho.scale(drift));
            let next_op = {
                let summed = rho + delta.matrix();
                HermitianOperator::from_matrix_hermitized(summed)
            };
            let next_spec = next_op.spectrum();
            let mut gain = f64::NEG_INFINITY;
            if next_spec.min() >= -1e-12 {
                let dl = loglik_change(f, &current.probs, &delta, pom);
                gain = if lambda == 0.0 {
                    dl
                } else {
                    dl + lambda
                        * entropy_change(&current, delta.matrix(), &next_spec, config.log_floor)
                };
            }

            if gain >= 0.0 {
                let rho_next = DensityMatrix::new_unchecked(next_op);
                let probs = born_probabilities(&rho_next, pom)?;
                break Some((
                    Iterate {
                        rho: rho_next,
                        spectrum: next_spec,
                        probs,
                    },
                    gain,
                ));
            }
            epsilon *= 0.5;
            streak = 0;
            if epsilon < MIN_EPSILON {
                break None;
            }
        };
        let Some((next, gain)) = accepted else {
            stalled = true;
            continue;
        };
        current = next;
        objective += gain;
        trace.push(objective);
        iterations += 1;
        streak += 1;
        if streak >= DOUBLING_STREAK {
            epsilon = (2.0 * epsilon).min(cap);
            streak = 0;
        }
        notify(&current, iterations, objective, epsilon);

        recent_gains.push_back(gain);
        if recent_gains.len() > config.stall_window {
            recent_gains.pop_front();
            let recent: f64 = recent_gains.iter().sum();
            if recent <= config.objective_tol * objective.abs().max(1.0) {
                stalled = true;
            }
        }
    };

    Ok(ReconstructionResult {
        estimator: current.rho,
        iterations,
        residual,
        objective_trace: trace,
        converged: termination == Termination::Converged,
        termination,
        lambda,
    })
}

/// `||T rho||_F` for the given data and `lambda`.
pub fn extremal_residual(
    rho: &DensityMatrix,
    f: &CountData,
    pom: &Pom,
    lambda: f64,
) -> Result<f64> {
    let t = crate::functionals::t_operator(rho, f, pom, lambda)?;
    Ok((t.matrix() * rho.operator().matrix()).norm())
}

/// Lagrange multipliers of `exp(sum_j mu_j Pi_j) / tr(...)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaxEntParams {
    pub mus: Vec<f64>,
}

impl MaxEntParams {
    pub fn state(&self, pom: &Pom) -> DensityMatrix {
        gibbs_state(&self.mus, pom).0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct MaxEntConfig {
    pub max_iters: usize,
    /// Target `max_j |p_j - f_j|`.
    pub tol: f64,
    /// `||mu||_inf` beyond which a residual above `tol` is declared infeasible.
    pub mu_bound: f64,
}

impl Default for MaxEntConfig {
    fn default() -> Self {
        Self {
            max_iters: 10_000,
            tol: 1e-10,
            mu_bound: 1e3,
        }
    }
}

#[derive(Debug, Clone)]
pub enum MaxEntOutcome {
    Solved {
        params: MaxEntParams,
        state: DensityMatrix,
        residual: f64,
        iterations: usize,
    },
    /// The multipliers diverged while the probabilities stayed away from the frequencies.
    Infeasible {
        best_residual: f64,
        mu_norm: f64,
        iterations: usize,
    },
    /// Iteration budget exhausted with bounded multipliers.
    Unresolved {
        best_residual: f64,
        iterations: usize,
    },
}

impl MaxEntOutcome {
    pub fn is_infeasible(&self) -> bool {
        matches!(self, MaxEntOutcome::Infeasible { .. })
    }
}

struct GibbsPoint {
    state: DensityMatrix,
    spectrum: Spectrum,
    /// Normalized weights `exp(w_a - top) / z`.
    weights: Vec<f64>,
    log_z: f64,
}

/// Normalized `exp(H)` for `H = sum_j mu_j Pi_j`, and `log tr exp(H)`.
fn gibbs_point(mus: &[f64], pom: &Pom) -> GibbsPoint {
    let h = pom
        .effects()
        .iter()
        .zip(mus)
        .fold(HermitianOperator::zeros(pom.dim()), |acc, (e, &m)| {
            &acc + &e.scale(m)
        });
    let spectrum = h.spectrum();
    let top = spectrum.max();
    let raw: Vec<f64> = spectrum
        .eigenvalues
        .iter()
        .map(|w| (w - top).exp())
        .collect();
    let z: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|r| r / z).collect();
    let v = &spectrum.eigenvectors;
    let mut scaled = v.clone();
    for (k, &q) in weights.iter().enumerate() {
        scaled.column_mut(k).scale_mut(q);
    }
    let state = DensityMatrix::new_unchecked(HermitianOperator::from_matrix_hermitized(
        scaled * v.adjoint(),
    ));
    GibbsPoint {
        state,
        spectrum,
        weights,
        log_z: top + z.ln(),
    }
}

fn gibbs_state(mus: &[f64], pom: &Pom) -> (DensityMatrix, f64) {
    let g = gibbs_point(mus, pom);
    (g.state, g.log_z)
}

/// Hessian of `log tr exp(sum mu_j Pi_j)`: the Kubo-Mori covariance of the effects.
fn gibbs_hessian(point: &GibbsPoint, pom: &Pom, probs: &[f64]) -> DMatrix<f64> {
    let v = &point.spectrum.eigenvectors;
    let w = &point.spectrum.eigenvalues;
    let q = &point.weights;
    let d = w.len();
    let rotated: Vec<CMatrix> = pom
        .effects()
        .iter()
        .map(|e| v.adjoint() * e.matrix() * v)
        .collect();
    let kernel = DMatrix::from_fn(d, d, |a, b| {
        if (w[a] - w[b]).abs() < 1e-9 {
            0.5 * (q[a] + q[b])
        } else {
            (q[a] - q[b]) / (w[a] - w[b])
        }
    });
    let k = pom.len();
    let mut hess = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let mut s = 0.0;
            for a in 0..d {
                for b in 0..d {
                    s += (rotated[i][(a, b)] * rotated[j][(b, a)]).re * kernel[(a, b)];
                }
            }
            let val = s - probs[i] * probs[j];
            hess[(i, j)] = val;
            hess[(j, i)] = val;
        }
    }
    hess
}

/// `-H^+ g` with eigenvalues below `1e-12 * max` treated as null (gauge) directions.
fn newton_direction(hess: &DMatrix<f64>, grad: &[f64]) -> Vec<f64> {
    let eig = SymmetricEigen::new(hess.clone());
    let top = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let g = DVector::from_column_slice(grad);
    let mut dir = DVector::zeros(grad.len());
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > 1e-12 * top {
            let u = eig.eigenvectors.column(k);
            dir -= u * (u.dot(&g) / lam);
        }
    }
    dir.iter().cloned().collect()
}

/// Standard maximum-entropy fit: find `mu` whose Gibbs state reproduces `f`
/// exactly, by minimizing the convex dual
/// `log tr exp(sum mu_j Pi_j) - sum mu_j f_j`.
///
/// Damped Newton steps are tried first; when the line search rejects them a
/// backtracking gradient step is taken instead. For frequencies that no state
/// reproduces the dual is unbounded below and the multipliers run off to
/// infinity, which is reported as [`MaxEntOutcome::Infeasible`].
pub fn standard_me_solve(f: &CountData, pom: &Pom, config: &MaxEntConfig) -> Result<MaxEntOutcome> {
    if f.len() != pom.len() {
        return Err(Error::DimensionMismatch {
            expected: pom.len(),
            found: f.len(),
        });
    }
    let freqs = f.frequencies();
    let k = pom.len();
    let evaluate = |mus: &[f64]| -> (f64, GibbsPoint, Vec<f64>) {
        let point = gibbs_point(mus, pom);
        let linear: f64 = mus.iter().zip(freqs).map(|(m, f)| m * f).sum();
        let probs: Vec<f64> = pom
            .effects()
            .iter()
            .map(|e| point.state.operator().trace_product(e))
            .collect();
        (point.log_z - linear, point, probs)
    };

    let mut mus = vec![0.0; k];
    let (mut value, mut point, mut probs) = evaluate(&mus);
    let mut gradient_step = 1.0;
    let mut best = f64::INFINITY;
    for iter in 0..config.max_iters {
        let grad: Vec<f64> = probs.iter().zip(freqs).map(|(p, f)| p - f).collect();
        let residual = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        best = best.min(residual);
        if residual <= config.tol {
            return Ok(MaxEntOutcome::Solved {
                params: MaxEntParams { mus },
                state: point.state,
                residual,
                iterations: iter,
            });
        }
        let mu_norm = mus.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if mu_norm > config.mu_bound {
            return Ok(MaxEntOutcome::Infeasible {
                best_residual: best,
                mu_norm,
                iterations: iter,
            });
        }
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let slack = 1e-14 * value.abs().max(1.0);
        let base = value;
        let accept = |trial_value: f64, trial_probs: &[f64], slope: f64, t: f64| -> bool {
            if trial_value <= base + 1e-4 * t * slope {
                return true;
            }
            // rounding-limited regime: fall back on the gradient norm
            let trial_norm = trial_probs
                .iter()
                .zip(freqs)
                .map(|(p, f)| (p - f) * (p - f))
                .sum::<f64>()
                .sqrt();
            trial_value <= base + slack && trial_norm < 0.5 * grad_norm
        };

        let hess = gibbs_hessian(&point, pom, &probs);
        let dir = newton_direction(&hess, &grad);
        let slope: f64 = dir.iter().zip(&grad).map(|(d, g)| d * g).sum();
        let mut moved = false;
        if slope < 0.0 {
            let mut t = 1.0;
            while t > 1e-6 {
                let trial: Vec<f64> = mus.iter().zip(&dir).map(|(m, d)| m + t * d).collect();
                let (tv, tp, tprobs) = evaluate(&trial);
                if accept(tv, &tprobs, slope, t) {
                    (mus, value, point, probs) = (trial, tv, tp, tprobs);
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
        }
        if !moved {
            let slope = -grad_norm * grad_norm;
            loop {
                let trial: Vec<f64> = mus
                    .iter()
                    .zip(&grad)
                    .map(|(m, g)| m - gradient_step * g)
                    .collect();
                let (tv, tp, tprobs) = evaluate(&trial);
                if accept(tv, &tprobs, slope, gradient_step) {
                    (mus, value, point, probs) = (trial, tv, tp, tprobs);
                    gradient_step *= 2.0;
                    break;
                }
                gradient_step *= 0.5;
                if gradient_step < 1e-14 {
                    return Ok(MaxEntOutcome::Unresolved {
                        best_residual: best,
                        iterations: iter,
                    });
                }
            }
        }
    }
    Ok(MaxEntOutcome::Unresolved {
        best_residual: best,
        iterations: config.max_iters,
    })
}
