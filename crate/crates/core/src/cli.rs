//! Command-line front end: `construct | audit | evolve | liouville | all`.
//!
//! Exit codes: 0 when every check passes, 2 for usage or parameter errors,
//! 3 when a check fails or a numerical stage aborts. Errors are reported on
//! stderr as a JSON object.

use std::ffi::OsString;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::analysis::{liouville_report, LiouvilleReport, LiouvilleTolerances};
use crate::coefficients::{construct, CaseConstants, CaseId, Construction, EllipticityReport, FieldMetadata, FieldOptions, LogSlopeFit, Overrides};
use crate::error::{Error, Result};
use crate::evolution::{run_blowup_experiment, BoundaryMode, EvolutionConfig, ExperimentReport, SelfSimilarSolution};
use crate::profile::Variant;
use crate::spiral::{AsymptoticsReport, FullResidualStats, ResidualStats, SpiralField};

pub const SCHEMA_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_FAILED: i32 = 3;

/// Everything that determines a run; echoed verbatim in `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub n: usize,
    pub mu: f64,
    pub delta: f64,
    pub variant: Variant,
    pub c_mu: Option<f64>,
    pub alpha: Option<f64>,
    pub seed: u64,
    /// Random points for the ellipticity, full-residual and key-identity audits.
    pub samples: usize,
    /// Constant added to γ (test hook).
    pub corrupt_gamma: f64,
    pub evolution: EvolutionConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n: 2,
            mu: 0.9,
            delta: 0.5,
            variant: Variant::Piecewise,
            c_mu: None,
            alpha: None,
            seed: 0,
            samples: 1000,
            corrupt_gamma: 0.0,
            evolution: EvolutionConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
    Both,
}

impl Format {
    fn json(self) -> bool {
        self != Format::Csv
    }

    fn csv(self) -> bool {
        self != Format::Json
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Construct,
    Audit,
    Evolve,
    Liouville,
    All,
}

#[derive(Debug, Parser)]
#[command(name = "spiral", version, about = "Spiraling self-similar singular solutions of complex parabolic equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Select constants and write the coefficient tables.
    Construct(Flags),
    /// Ellipticity, residual, asymptotics and monotonicity audits.
    Audit(Flags),
    /// Evolve from t = -1 toward the blowup and record norm traces.
    Evolve(Flags),
    /// Key identity, Caccioppoli, cutoff, decay and monotonicity checks.
    Liouville(Flags),
    /// Every stage above.
    All(Flags),
}

#[derive(Debug, Args)]
struct Flags {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    mu: Option<f64>,
    /// Integrability gain; p = 2 + delta.
    #[arg(long, allow_negative_numbers = true)]
    delta: Option<f64>,
    #[arg(long, value_enum)]
    variant: Option<Variant>,
    #[arg(long = "c-mu", allow_negative_numbers = true)]
    c_mu: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    alpha: Option<f64>,
    #[arg(long)]
    rmax: Option<f64>,
    #[arg(long)]
    points: Option<usize>,
    /// Final time; the sign is ignored (t_min = -|tmin|).
    #[arg(long, allow_negative_numbers = true)]
    tmin: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long = "steps-per-decade")]
    steps_per_decade: Option<usize>,
    #[arg(long, value_enum)]
    boundary: Option<BoundaryMode>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long = "corrupt-gamma", allow_negative_numbers = true)]
    corrupt_gamma: Option<f64>,
    /// JSON run configuration; explicit flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    format: Format,
}

impl Flags {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => serde_json::from_str(&fs::read_to_string(path)?)
                .map_err(|e| Error::Usage(format!("config {}: {e}", path.display())))?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag { c.$($field).+ = v; })*
            };
        }
        set!(n => n, mu => mu, delta => delta, variant => variant, seed => seed, samples => samples,
            corrupt_gamma => corrupt_gamma, rmax => evolution.r_max, points => evolution.points,
            theta => evolution.theta, steps_per_decade => evolution.steps_per_decade,
            boundary => evolution.boundary);
        if self.c_mu.is_some() {
            c.c_mu = self.c_mu;
        }
        if self.alpha.is_some() {
            c.alpha = self.alpha;
        }
        if let Some(t) = self.tmin {
            c.evolution.t_min = -t.abs();
        }
        Ok(c)
    }
}

/// A measured value judged against a tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub value: f64,
    pub tolerance: f64,
    pub relation: Relation,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    AtMost,
    AtLeast,
    Below,
}

impl Check {
    pub fn at_most(value: f64, tolerance: f64) -> Self {
        Check {
            value,
            tolerance,
            relation: Relation::AtMost,
            pass: value <= tolerance,
        }
    }

    pub fn at_least(value: f64, tolerance: f64) -> Self {
        Check {
            value,
            tolerance,
            relation: Relation::AtLeast,
            pass: value >= tolerance,
        }
    }

    pub fn below(value: f64, tolerance: f64) -> Self {
        Check {
            value,
            tolerance,
            relation: Relation::Below,
            pass: value < tolerance,
        }
    }
}

/// A measured value required to lie in the open interval `(lower, upper)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalCheck {
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
    pub pass: bool,
}

impl IntervalCheck {
    pub fn open(value: f64, lower: f64, upper: f64) -> Self {
        IntervalCheck {
            value,
            lower,
            upper,
            pass: value > lower && value < upper,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructionSummary {
    pub metadata: FieldMetadata,
    pub case_constants: CaseConstants,
    pub sup_beta: f64,
    pub sup_gamma: f64,
    pub beta_origin: f64,
    pub gamma_origin: f64,
    pub lambda_predicted: f64,
    pub big_lambda_predicted: f64,
    /// Only in the critical case.
    pub beta_log_fit: Option<LogSlopeFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub ellipticity: EllipticityReport,
    /// `|λ_measured − α| / α`.
    pub coercivity_rel_error: Check,
    pub bounded: Check,
    pub reduced_residuals: ResidualStats,
    pub reduced_first: Check,
    pub reduced_second: Check,
    pub full_residuals: FullResidualStats,
    pub full_residual: Check,
    pub asymptotics: AsymptoticsReport,
    /// Distance of the fitted order from −2, or the largest relative
    /// deviation when the leading term is exact.
    pub asymptotics_check: Check,
    pub monotonicity_min: f64,
    /// `min m ≥ −1e-12` for `C_μ = 0`; `min m < 0` otherwise (value negated).
    pub monotonicity_sign: Check,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionSummary {
    pub experiment: ExperimentReport,
    pub norm_agreement: Check,
    /// Sup relative error at `t = −10⁻²` when reached.
    pub sup_error_at_1e_2: Option<Check>,
    /// `|fit/expected − 1|` in the blowup regime; otherwise the fit itself,
    /// which must not indicate growth.
    pub exponent: Option<Check>,
    pub grad_increasing: bool,
    /// Smallest decade factor of the accumulated gradient norm (blowup regime).
    pub grad_doubling: Option<Check>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiouvilleSection {
    pub report: LiouvilleReport,
    pub key_identity: Check,
    /// Smallest Caccioppoli slack over the bump cutoffs.
    pub caccioppoli_slack: Check,
    /// `|ratio − 2| / 2`.
    pub log_cutoff: Option<Check>,
    /// `|slope − (n − 2μ − 2)|`.
    pub decay: Check,
    pub monotonicity: Check,
    /// Argmin of the defect, judged against `(1, 3)` when `C_μ > 0`.
    pub monotonicity_argmin: Option<IntervalCheck>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub command: Stage,
    pub config: RunConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub construction: Option<ConstructionSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub audit: Option<AuditReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evolution: Option<EvolutionSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub liouville: Option<LiouvilleSection>,
    pub pass: bool,
}

fn build(config: &RunConfig) -> Result<Construction> {
    let options = FieldOptions {
        gamma_shift: config.corrupt_gamma,
        ..FieldOptions::default()
    };
    let overrides = Overrides {
        c_mu: config.c_mu,
        alpha: config.alpha,
    };
    construct(config.n, config.mu, config.variant, overrides, options)
}

pub fn summarize_construction(c: &Construction) -> Result<ConstructionSummary> {
    let f = &c.field;
    let (b0, g0) = f.origin_limits();
    let (lp, bp) = f.predicted_constants();
    let beta_log_fit = if f.case_id() == CaseId::Case3 {
        Some(f.beta_log_fit(1e2, 1e6, 41)?)
    } else {
        None
    };
    Ok(ConstructionSummary {
        metadata: f.metadata(),
        case_constants: c.selection.constants,
        sup_beta: f.table().sup_beta(),
        sup_gamma: f.table().sup_gamma(),
        beta_origin: b0,
        gamma_origin: g0,
        lambda_predicted: lp,
        big_lambda_predicted: bp,
        beta_log_fit,
    })
}

pub fn audit(sf: &SpiralField, config: &RunConfig) -> Result<AuditReport> {
    let f = sf.field();
    let ellipticity = f.audit_ellipticity(config.samples, config.seed)?;
    let coercivity_rel_error = Check::at_most((ellipticity.lambda - f.alpha()).abs() / f.alpha(), 1e-12);
    let sup = f.table().sup_beta().max(f.table().sup_gamma());
    let bounded = Check::below(sup, f.options().ceiling);
    let reduced_residuals = sf.residual_sweep()?;
    let full_residuals = sf.full_residual_sweep(config.samples, 1e-2, 1e3, config.seed)?;
    let asymptotics = sf.check_asymptotics(&[1e1, 1e2, 1e3, 1e4])?;
    let asymptotics_check = match asymptotics.fitted_order {
        Some(order) if sf.profile().c_mu() > 0.0 || config.variant == Variant::Analytic => {
            Check::at_most((order + 2.0).abs(), 0.1)
        }
        _ => Check::at_most(asymptotics.rel_error.iter().fold(0.0, |m: f64, v| m.max(*v)), 1e-12),
    };
    let scan = crate::analysis::monotonicity_scan(sf, 100.0);
    let monotonicity_sign = if sf.profile().c_mu() == 0.0 {
        Check::at_least(scan.min, -1e-12)
    } else {
        Check::below(scan.min, 0.0)
    };
    let reduced_first = Check::at_most(reduced_residuals.max_first, 1e-6);
    let reduced_second = Check::at_most(reduced_residuals.max_second, 1e-6);
    let full_residual = Check::at_most(full_residuals.max_abs, 1e-5);
    let pass = [
        coercivity_rel_error,
        bounded,
        reduced_first,
        reduced_second,
        full_residual,
        asymptotics_check,
        monotonicity_sign,
    ]
    .iter()
    .all(|c| c.pass);
    Ok(AuditReport {
        ellipticity,
        coercivity_rel_error,
        bounded,
        reduced_residuals,
        reduced_first,
        reduced_second,
        full_residuals,
        full_residual,
        asymptotics,
        asymptotics_check,
        monotonicity_min: scan.min,
        monotonicity_sign,
        pass,
    })
}

pub fn evolve(sf: &SpiralField, config: &RunConfig) -> Result<EvolutionSummary> {
    if !(config.delta > 0.0) {
        return Err(Error::Usage(format!("delta = {} must be positive", config.delta)));
    }
    let sol = SelfSimilarSolution::new(sf.clone());
    let experiment = run_blowup_experiment(&sol, config.evolution, 2.0 + config.delta)?;
    let norm_agreement = Check::at_most(experiment.norm_deviation, 0.02);
    let sup_error_at_1e_2 = experiment
        .trace
        .iter()
        .find(|r| (r.t / -1e-2 - 1.0).abs() < 1e-9)
        .map(|r| Check::at_most(r.sup_rel_error, 0.02));
    let exponent = experiment.fitted_exact.map(|fit| {
        if experiment.no_blowup {
            Check::at_least(fit.exponent, -0.01)
        } else {
            Check::at_most((fit.exponent / experiment.expected_exponent - 1.0).abs(), 0.1)
        }
    });
    let grad_doubling = if experiment.no_blowup {
        None
    } else {
        experiment
            .grad_decade_factors
            .iter()
            .copied()
            .reduce(f64::min)
            .map(|m| Check::at_least(m, 2.0))
    };
    let pass = experiment.grad_increasing
        && [Some(norm_agreement), sup_error_at_1e_2, exponent, grad_doubling]
            .iter()
            .flatten()
            .all(|c| c.pass);
    Ok(EvolutionSummary {
        grad_increasing: experiment.grad_increasing,
        experiment,
        norm_agreement,
        sup_error_at_1e_2,
        exponent,
        grad_doubling,
        pass,
    })
}

pub fn liouville(sf: &SpiralField, config: &RunConfig) -> Result<LiouvilleSection> {
    let tols = LiouvilleTolerances::default();
    let report = liouville_report(sf, config.samples, config.seed, tols)?;
    let key_identity = Check::at_most(report.key_identity_residual, tols.key_identity);
    let min_slack = report.caccioppoli.iter().map(|c| c.slack).fold(f64::INFINITY, f64::min);
    let caccioppoli_slack = Check::at_least(min_slack, 0.0);
    let log_cutoff = report
        .log_cutoff
        .map(|l| Check::at_most((l.ratio - tols.log_ratio_target).abs() / tols.log_ratio_target, tols.log_ratio_rel));
    let decay = Check::at_most((report.decay.slope - report.decay.expected).abs(), report.decay.tolerance);
    let c_zero = sf.profile().c_mu() == 0.0;
    let monotonicity = if c_zero {
        Check::at_least(report.monotonicity.min, tols.monotone_floor)
    } else {
        Check::below(report.monotonicity.min, 0.0)
    };
    let argmin = report.monotonicity.argmin;
    let monotonicity_argmin = (!c_zero).then_some(IntervalCheck::open(argmin, 1.0, 3.0));
    let pass = report.pass;
    Ok(LiouvilleSection {
        report,
        key_identity,
        caccioppoli_slack,
        log_cutoff,
        decay,
        monotonicity,
        monotonicity_argmin,
        pass,
    })
}

/// Runs `stage`, writing outputs under `out`.
pub fn execute(stage: Stage, config: &RunConfig, out: &Path, format: Format) -> Result<Report> {
    if matches!(stage, Stage::Evolve | Stage::All) {
        config.evolution.validate()?;
        if !(config.delta > 0.0) {
            return Err(Error::Usage(format!("delta = {} must be positive", config.delta)));
        }
    }
    let c = build(config)?;
    fs::create_dir_all(out)?;
    let sf = SpiralField::new(c.field.clone());
    let mut report = Report {
        schema_version: SCHEMA_VERSION,
        command: stage,
        config: config.clone(),
        construction: Some(summarize_construction(&c)?),
        audit: None,
        evolution: None,
        liouville: None,
        pass: true,
    };
    if format.csv() && matches!(stage, Stage::Construct | Stage::Audit | Stage::All) {
        c.field.write_csv(BufWriter::new(fs::File::create(out.join("coefficients.csv"))?))?;
    }
    if matches!(stage, Stage::Audit | Stage::All) {
        let a = audit(&sf, config)?;
        report.pass &= a.pass;
        report.audit = Some(a);
    }
    if matches!(stage, Stage::Evolve | Stage::All) {
        let e = evolve(&sf, config)?;
        if format.csv() {
            e.experiment.write_csv(BufWriter::new(fs::File::create(out.join("norms.csv"))?))?;
        }
        report.pass &= e.pass;
        report.evolution = Some(e);
    }
    if matches!(stage, Stage::Liouville | Stage::All) {
        let l = liouville(&sf, config)?;
        if format.csv() {
            use std::io::Write;
            let mut w = BufWriter::new(fs::File::create(out.join("decay.csv"))?);
            writeln!(w, "R,annulus_energy")?;
            for (r, v) in l.report.decay.radii.iter().zip(&l.report.decay.increments) {
                writeln!(w, "{r:e},{v:e}")?;
            }
        }
        report.pass &= l.pass;
        report.liouville = Some(l);
    }
    if format.json() {
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        fs::write(out.join("report.json"), text)?;
    }
    Ok(report)
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Usage(_) | Error::InvalidParams(_) | Error::Io(_) | Error::Json(_) => EXIT_USAGE,
        _ => EXIT_FAILED,
    }
}

/// Parses `args` (including the program name), runs, and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let (stage, flags) = match &cli.command {
        Command::Construct(f) => (Stage::Construct, f),
        Command::Audit(f) => (Stage::Audit, f),
        Command::Evolve(f) => (Stage::Evolve, f),
        Command::Liouville(f) => (Stage::Liouville, f),
        Command::All(f) => (Stage::All, f),
    };
    let result = flags.resolve().and_then(|cfg| execute(stage, &cfg, &flags.out, flags.format));
    match result {
        Ok(report) if report.pass => EXIT_OK,
        Ok(_) => EXIT_FAILED,
        Err(e) => {
            let code = exit_code(&e);
            let msg = serde_json::json!({
                "error": { "kind": e.kind(), "message": e.to_string() },
                "exit_code": code,
            });
            eprintln!("{msg}");
            code
        }
    }
}
