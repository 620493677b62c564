//! The `mlme` command-line tool.
//!
//! Exit codes: 0 success, 1 the trine demo contradicted its expected outcome,
//! 2 input or validation error, 3 reconstruction did not converge, 4 some
//! sweep trials failed (the CSV is still written).

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;

use crate::error::Error;
use crate::functionals::{CountData, CountsFile};
use crate::linalg::DensityMatrix;
use crate::pom::{
    default_homodyne_settings, gram_analysis, pauli_pom, trine_pom, HomodyneMode, HomodyneSpec, Pom,
};
use crate::reconstruct::{
    mlme_reconstruct, standard_me_solve, IterationConfig, MaxEntConfig, MaxEntOutcome,
};
use crate::simulate::{
    dimension_sweep, lambda_sweep, records_to_csv, ExperimentConfig, SweepRecord,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DEMO_MISMATCH: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_PARTIAL_SWEEP: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "mlme",
    version,
    about = "Maximum-likelihood maximum-entropy state reconstruction"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepKind {
    Lambda,
    Dimension,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BuiltinPom {
    Trine,
    Pauli,
    Homodyne,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Gram analysis of a POM file (POM JSON or quadrature settings JSON).
    PomInfo {
        pom: PathBuf,
        /// Gram eigenvalue threshold; defaults to K * eps * largest eigenvalue.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Reconstruct a state from counts.
    Reconstruct {
        #[arg(long)]
        pom: PathBuf,
        #[arg(long)]
        counts: PathBuf,
        #[arg(long, default_value_t = IterationConfig::default().lambda)]
        lambda: f64,
        #[arg(long, default_value_t = IterationConfig::default().epsilon)]
        epsilon: f64,
        #[arg(long, default_value_t = IterationConfig::default().max_iters)]
        max_iters: usize,
        /// Convergence threshold on ||T rho||_F.
        #[arg(long, default_value_t = IterationConfig::default().residual_tol)]
        tol: f64,
        /// Output file; stdout when omitted.
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Include the objective after every accepted step.
        #[arg(long)]
        trace: bool,
    },
    /// Standard ME versus MLME on the trine counts (6, 2, 1).
    TrineDemo,
    /// Run a lambda or dimension sweep and write CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, value_enum)]
        kind: SweepKind,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Density matrix JSON for the true state.
        #[arg(long)]
        true_state: Option<PathBuf>,
    },
    /// Shorthand for `sweep --kind lambda`.
    SweepLambda {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        true_state: Option<PathBuf>,
    },
    /// Shorthand for `sweep --kind dimension`.
    SweepDimension {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        true_state: Option<PathBuf>,
    },
    /// Write a built-in POM as POM JSON.
    ExportPom {
        #[arg(value_enum)]
        kind: BuiltinPom,
        /// Fock dimension for the homodyne POM.
        #[arg(long, default_value_t = 5)]
        dim: usize,
        #[arg(long, value_enum, default_value = "scaled-complement")]
        mode: ModeArg,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    ScaledComplement,
    Binned,
}

impl From<ModeArg> for HomodyneMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::ScaledComplement => HomodyneMode::ScaledComplement,
            ModeArg::Binned => HomodyneMode::Binned,
        }
    }
}

/// A failure carrying its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::input(e.to_string())
    }
}

type CmdResult = std::result::Result<i32, Failure>;

pub fn main() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    match command {
        Command::PomInfo { pom, tol } => cmd_pom_info(&pom, tol, out),
        Command::Reconstruct {
            pom,
            counts,
            lambda,
            epsilon,
            max_iters,
            tol,
            out: path,
            trace,
        } => {
            let mut cfg = IterationConfig::default()
                .with_lambda(lambda)
                .with_max_iters(max_iters);
            cfg.epsilon = epsilon;
            cfg.residual_tol = tol;
            cmd_reconstruct(&pom, &counts, &cfg, path.as_deref(), trace, out, err)
        }
        Command::TrineDemo => cmd_trine_demo(out),
        Command::Sweep {
            config,
            out: path,
            kind,
            seed,
            true_state,
        } => cmd_sweep(&config, &path, kind, seed, true_state.as_deref(), out, err),
        Command::SweepLambda {
            config,
            out: path,
            seed,
            true_state,
        } => cmd_sweep(
            &config,
            &path,
            SweepKind::Lambda,
            seed,
            true_state.as_deref(),
            out,
            err,
        ),
        Command::SweepDimension {
            config,
            out: path,
            seed,
            true_state,
        } => cmd_sweep(
            &config,
            &path,
            SweepKind::Dimension,
            seed,
            true_state.as_deref(),
            out,
            err,
        ),
        Command::ExportPom {
            kind,
            dim,
            mode,
            out: path,
        } => cmd_export_pom(kind, dim, mode.into(), path.as_deref(), out),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> std::result::Result<T, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::input(format!("cannot read {what} file {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Failure::input(format!("{what} file {}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> std::result::Result<(), Failure> {
    fs::write(path, contents)
        .map_err(|e| Failure::input(format!("cannot write {}: {e}", path.display())))
}

fn emit(
    path: Option<&Path>,
    contents: &str,
    out: &mut dyn Write,
) -> std::result::Result<(), Failure> {
    match path {
        Some(p) => write_file(p, contents),
        None => writeln!(out, "{contents}")
            .map_err(|e| Failure::input(format!("cannot write output: {e}"))),
    }
}

/// Loads POM JSON, or quadrature settings JSON (recognized by a `settings` key).
pub fn load_pom(path: &Path) -> crate::Result<Pom> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidPom(format!("{}: {e}", path.display())))?;
    if value.get("settings").is_some() {
        let spec: HomodyneSpec = serde_json::from_value(value)
            .map_err(|e| Error::InvalidSettings(format!("{}: {e}", path.display())))?;
        spec.build()
    } else {
        serde_json::from_value(value)
            .map_err(|e| Error::InvalidPom(format!("{}: {e}", path.display())))
    }
}

fn cmd_pom_info(path: &Path, tol: Option<f64>, out: &mut dyn Write) -> CmdResult {
    if let Some(t) = tol {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Failure::input("--tol must be positive"));
        }
    }
    let pom = load_pom(path)?;
    let g = gram_analysis(&pom, tol);
    let d2 = pom.dim() * pom.dim();
    let eig: Vec<String> = g.eigenvalues.iter().map(|w| format!("{w:.6e}")).collect();
    let verdict = if g.is_complete() {
        "COMPLETE"
    } else {
        "INCOMPLETE"
    };
    let report = format!(
        "dim = {}\nK = {}\nclosure residual = {:.3e}\ngram eigenvalues = [{}]\nrank tolerance = {:.3e}\nn_>0 = {} of {}: {}",
        pom.dim(),
        pom.len(),
        pom.closure_residual(),
        eig.join(", "),
        g.rank_tolerance,
        g.informational_rank,
        d2,
        verdict
    );
    emit(None, &report, out)?;
    Ok(EXIT_OK)
}

fn cmd_reconstruct(
    pom: &Path,
    counts: &Path,
    cfg: &IterationConfig,
    path: Option<&Path>,
    trace: bool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> CmdResult {
    cfg.validate()?;
    let pom = load_pom(pom)?;
    let file: CountsFile = read_json(counts, "counts")?;
    let data = CountData::try_from(file)?;
    if data.len() != pom.len() {
        return Err(Failure::input(format!(
            "counts have {} entries but the POM has {} outcomes",
            data.len(),
            pom.len()
        )));
    }
    let res = mlme_reconstruct(&data, &pom, cfg)?;
    let json = serde_json::to_string_pretty(&res.to_json(trace)).expect("result serializes");
    emit(path, &json, out)?;
    if res.converged {
        Ok(EXIT_OK)
    } else {
        let _ = writeln!(
            err,
            "not converged: {:?} after {} iterations, residual {:.3e}",
            res.termination, res.iterations, res.residual
        );
        Ok(EXIT_NOT_CONVERGED)
    }
}

const DEMO_COUNTS: [u64; 3] = [6, 2, 1];
const DEMO_BLOCH: [f64; 3] = [0.194, 0.0, 0.981];
const DEMO_TOLERANCE: f64 = 0.005;

fn cmd_trine_demo(out: &mut dyn Write) -> CmdResult {
    let pom = trine_pom();
    let data = CountData::from_counts(DEMO_COUNTS.to_vec())?;
    let mut ok = true;
    let mut lines = vec![format!(
        "trine counts ({}, {}, {}), N = {}",
        DEMO_COUNTS[0],
        DEMO_COUNTS[1],
        DEMO_COUNTS[2],
        data.total()
    )];

    match standard_me_solve(&data, &pom, &MaxEntConfig::default())? {
        MaxEntOutcome::Infeasible {
            best_residual,
            mu_norm,
            ..
        } => lines.push(format!(
            "standard ME: INFEASIBLE (best residual {best_residual:.3e}, |mu|_inf {mu_norm:.1})"
        )),
        MaxEntOutcome::Solved { residual, .. } => {
            ok = false;
            lines.push(format!(
                "standard ME: SOLVED (residual {residual:.3e}), expected INFEASIBLE"
            ));
        }
        MaxEntOutcome::Unresolved { best_residual, .. } => {
            ok = false;
            lines.push(format!(
                "standard ME: UNRESOLVED (best residual {best_residual:.3e}), expected INFEASIBLE"
            ));
        }
    }

    let res = mlme_reconstruct(&data, &pom, &IterationConfig::default())?;
    let r = res.estimator.bloch_vector()?;
    let clean = |x: f64| if x.abs() < 5e-4 { 0.0 } else { x };
    lines.push(format!(
        "MLME Bloch: ({:.3}, {:.3}, {:.3})",
        clean(r[0]),
        clean(r[1]),
        clean(r[2])
    ));
    if !res.converged
        || r.iter()
            .zip(DEMO_BLOCH)
            .any(|(a, b)| (a - b).abs() > DEMO_TOLERANCE)
    {
        ok = false;
        lines.push(format!(
            "MLME estimate differs from ({}, {}, {}) by more than {DEMO_TOLERANCE}",
            DEMO_BLOCH[0], DEMO_BLOCH[1], DEMO_BLOCH[2]
        ));
    }
    emit(None, &lines.join("\n"), out)?;
    Ok(if ok { EXIT_OK } else { EXIT_DEMO_MISMATCH })
}

fn cmd_sweep(
    config: &Path,
    path: &Path,
    kind: SweepKind,
    seed: Option<u64>,
    true_state: Option<&Path>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> CmdResult {
    let mut cfg: ExperimentConfig = read_json(config, "config")?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(p) = true_state {
        cfg.true_state = Some(read_json::<DensityMatrix>(p, "true state")?);
    }
    cfg.validate()?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        if !parent.is_dir() {
            return Err(Failure::input(format!(
                "output directory {} does not exist",
                parent.display()
            )));
        }
    }
    let records = match kind {
        SweepKind::Lambda => {
            if cfg.lambdas.is_empty() {
                return Err(Failure::input("config has no lambdas for a lambda sweep"));
            }
            lambda_sweep(&cfg, &cfg.lambdas)?
        }
        SweepKind::Dimension => {
            if cfg.recon_dims.is_none() {
                return Err(Failure::input(
                    "config has no recon_dims for a dimension sweep",
                ));
            }
            dimension_sweep(&cfg)?
        }
    };
    write_file(path, &records_to_csv(&records))?;
    let mut failed = false;
    for r in &records {
        let _ = writeln!(out, "{}", summary(kind, r));
        for f in &r.failures {
            failed = true;
            let _ = writeln!(err, "key {} trial {}: {}", r.key, f.trial, f.message);
        }
    }
    Ok(if failed { EXIT_PARTIAL_SWEEP } else { EXIT_OK })
}

fn summary(kind: SweepKind, r: &SweepRecord) -> String {
    let key = match kind {
        SweepKind::Lambda => format!("lambda = {:e}", r.key),
        SweepKind::Dimension => format!("d = {}", r.key),
    };
    let mut line = format!(
        "{key}: S = {:.6}, logL/N = {:.6}, D_tr = {:.6}, W00 = {:.6}, trials = {}",
        r.mean_entropy, r.mean_log_likelihood, r.mean_trace_distance, r.mean_w00, r.trials
    );
    if let Some(c) = r.complete {
        line.push_str(if c { ", complete" } else { ", incomplete" });
    }
    if let Some(b) = r.truncation_bias {
        line.push_str(&format!(", truncation bias = {b:.6}"));
    }
    if r.unconverged > 0 {
        line.push_str(&format!(", unconverged = {}", r.unconverged));
    }
    if !r.failures.is_empty() {
        line.push_str(&format!(", failed = {}", r.failures.len()));
    }
    line
}

fn cmd_export_pom(
    kind: BuiltinPom,
    dim: usize,
    mode: HomodyneMode,
    path: Option<&Path>,
    out: &mut dyn Write,
) -> CmdResult {
    let pom = match kind {
        BuiltinPom::Trine => trine_pom(),
        BuiltinPom::Pauli => pauli_pom(),
        BuiltinPom::Homodyne => HomodyneSpec {
            settings: default_homodyne_settings(),
            dim,
            mode,
        }
        .build()?,
    };
    let json = serde_json::to_string_pretty(&pom).expect("POM serializes");
    emit(path, &json, out)?;
    Ok(EXIT_OK)
}
