//! The `kvn` command: `basis | expand | evolve | verify | partition | uncertainty`.
//!
//! Exit codes: 0 success, 1 a verification failed, 2 unbounded dynamical
//! time, 3 under-resolved grid, 4 configuration error, 5 any other failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::amplitude::{AmplitudeGrid, GridLayout};
use crate::config::{Check, ConfigError, ExampleKind, Format, RunConfig, SystemArg, Truncation};
use crate::ensemble::{log_partition_function, mean_energy, EnergyProfile, Region};
use crate::error::KvnError;
use crate::io::{self, DensityRow, FloatFormat, IoError, RunReport, TimedError};
use crate::kvn::{apply_tilde_hamiltonian, kvn_residual, Gauge};
use crate::model::HamiltonianModel;
use crate::quadrature::compensated_sum;
use crate::spectral::{
    default_tau_energy_layout, evolve, expand_auto, expand_with_offset, gram_defect, gram_matrix, liouville_residual,
    reconstruct_density, select_spectrum, BasisFamily, SpectralExpansion,
};
use crate::worked::{
    box_initial_grid, oracle_density, shifted_canonical_coefficients, shifted_initial_grid, uncertainty_product,
    ExampleSpec, ShiftedGrid, UncertaintyReport,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_UNBOUNDED_TAU: i32 = 2;
pub const EXIT_UNDER_RESOLVED: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;
pub const EXIT_COMPUTATION: i32 = 5;

/// τ panels and nodes per panel of the box quadrature grid.
const BOX_PER_PANEL: usize = 16;
const BOX_AUTO_PANELS: usize = 64;
/// τ nodes of the shifted-ensemble grid when `N` is chosen automatically.
const SHIFTED_AUTO_TAU: usize = 1024;
/// Energies up to `e^{−20}` of the canonical weight fit the default window.
const CANONICAL_WINDOW: f64 = 20.0;

#[derive(Debug, Parser)]
#[command(name = "kvn", version, about = "Spectral solver for the classical Liouville equation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Eigenvalues and Gram matrix of the truncated basis.
    Basis,
    /// Coefficients of the configured initial state.
    Expand,
    /// Densities at the configured times, with oracle errors.
    Evolve,
    /// Runs an invariant suite; all suites when `--check` is absent.
    Verify {
        #[arg(long, value_enum)]
        check: Option<Check>,
    },
    /// Partition function and mean energy at `--beta`.
    Partition,
    /// Uncertainty product at the configured times.
    Uncertainty,
}

#[derive(Debug, Default, Args)]
pub struct CommonArgs {
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub system: Option<SystemArg>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub m: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub omega: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub force: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub hbar: Option<f64>,
    /// Truncation `N`, or `auto`.
    #[arg(long, global = true)]
    pub nmax: Option<Truncation>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub epsilon0: Option<f64>,
    /// Nodes per axis of output grids.
    #[arg(long, global = true)]
    pub grid: Option<usize>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Significant digits of written floats.
    #[arg(long, global = true)]
    pub precision: Option<usize>,
    /// Tolerance override, `NAME=VAL`; repeatable.
    #[arg(long = "tol", global = true, value_name = "NAME=VAL")]
    pub tol: Vec<String>,
    #[arg(long, global = true, value_enum)]
    pub example: Option<ExampleKind>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub tau_center: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub tau_width: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub energy_center: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub energy_width: Option<f64>,
    /// Inverse temperature of the shifted ensemble and of `partition`.
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub beta: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub q_shift: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub basis_beta: Option<f64>,
    /// Amplitude grid (JSON) to expand; implies `--example file`.
    #[arg(long, global = true)]
    pub grid_file: Option<PathBuf>,
    /// Evaluation times, comma separated.
    #[arg(long, global = true, value_delimiter = ',', allow_negative_numbers = true)]
    pub times: Option<Vec<f64>>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub dt: Option<f64>,
    /// Expansion JSON to use instead of expanding the configured state.
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Kvn(#[from] KvnError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("verification failed: {}", .0.join(", "))]
    CheckFailed(Vec<String>),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Kvn(KvnError::UnboundedTau) => EXIT_UNBOUNDED_TAU,
            CliError::Kvn(KvnError::UnderResolved(_)) => EXIT_UNDER_RESOLVED,
            CliError::Kvn(_) | CliError::Io(_) => EXIT_COMPUTATION,
            CliError::CheckFailed(_) => EXIT_CHECK_FAILED,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Entry point of the binary; returns the process exit code.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("kvn: {e}");
            e.exit_code()
        }
    }
}

/// Config file, then flags.
pub fn resolve_config(common: &CommonArgs) -> Result<RunConfig, ConfigError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let c = common;
    macro_rules! set {
        ($flag:expr => $field:expr) => {
            if let Some(v) = $flag.clone() {
                $field = v;
            }
        };
    }
    set!(c.system => cfg.model.system);
    set!(c.m => cfg.model.m);
    set!(c.omega => cfg.model.omega);
    set!(c.force => cfg.model.force);
    set!(c.hbar => cfg.model.hbar);
    set!(c.nmax => cfg.spectral.nmax);
    set!(c.epsilon0 => cfg.spectral.epsilon0);
    set!(c.grid => cfg.grid.nodes);
    set!(c.out => cfg.output.dir);
    set!(c.format => cfg.output.format);
    set!(c.example => cfg.example.kind);
    set!(c.tau_center => cfg.example.tau_center);
    set!(c.tau_width => cfg.example.tau_width);
    set!(c.energy_center => cfg.example.energy_center);
    set!(c.energy_width => cfg.example.energy_width);
    set!(c.q_shift => cfg.example.q_shift);
    set!(c.times => cfg.run.times);
    set!(c.dt => cfg.run.dt);
    if let Some(p) = c.precision {
        cfg.output.precision = Some(p);
    }
    if let Some(b) = c.beta {
        cfg.example.beta = b;
        cfg.run.beta = b;
    }
    if let Some(b) = c.basis_beta {
        cfg.example.basis_beta = Some(b);
    }
    if let Some(path) = &c.grid_file {
        cfg.example.kind = ExampleKind::File;
        cfg.example.input = Some(path.clone());
    }
    for item in &c.tol {
        let (name, value) = item
            .split_once('=')
            .ok_or_else(|| ConfigError::Invalid(format!("--tol expects NAME=VAL, got {item:?}")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| ConfigError::Invalid(format!("--tol {name}: {value:?} is not a number")))?;
        cfg.tolerances_mut().set(name.trim(), value)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Ctx {
    cfg: RunConfig,
    model: HamiltonianModel,
    fmt: FloatFormat,
    json: bool,
}

impl Ctx {
    fn out(&self, name: &str) -> PathBuf {
        self.cfg.output.dir.join(name)
    }

    fn tol(&self, name: &str) -> f64 {
        self.cfg.tolerances().get(name)
    }

    fn spec(&self) -> Option<ExampleSpec> {
        self.cfg.example.spec()
    }

    /// Basis profile: explicit, else the example's, else the file profile.
    fn profile(&self) -> CliResult<EnergyProfile> {
        if let Some(p) = &self.cfg.spectral.profile {
            return Ok(p.clone());
        }
        if let Some(spec) = self.spec() {
            return Ok(spec.profile());
        }
        self.cfg
            .example
            .profile
            .clone()
            .ok_or_else(|| ConfigError::Invalid("file input needs example.profile or spectral.profile".into()).into())
    }

    fn fixed_n(&self) -> CliResult<usize> {
        match self.cfg.spectral.nmax {
            Truncation::Fixed(n) => Ok(n),
            Truncation::Auto => Err(ConfigError::Invalid("this subcommand needs a numeric --nmax".into()).into()),
        }
    }

    fn tau_layout(&self, profile: &EnergyProfile, min_tau: usize) -> CliResult<GridLayout> {
        let n_tau = self.cfg.grid.tau_nodes.unwrap_or(self.cfg.grid.nodes).max(min_tau);
        Ok(default_tau_energy_layout(&self.model, profile, n_tau, self.cfg.grid.energy_nodes)?)
    }

    /// `(q,p)` output grid; a square of half-width `grid.extent` when set.
    fn phase_layout(&self, profile: &EnergyProfile) -> CliResult<GridLayout> {
        let n = self.cfg.grid.nodes;
        let (q, p) = match self.cfg.grid.extent {
            Some(e) => ((-e, e), (-e, e)),
            None => self.default_window(profile)?,
        };
        Ok(GridLayout::phase_space(q, p, n, n)?)
    }

    fn default_window(&self, profile: &EnergyProfile) -> CliResult<((f64, f64), (f64, f64))> {
        let m = &self.model;
        let k = m.mass * m.omega * m.omega;
        let half = |h: f64| ((2.0 * h / k).sqrt(), (2.0 * m.mass * h).sqrt());
        Ok(match self.spec() {
            Some(ExampleSpec::Box(b)) => {
                let (qr, pr) = half(1.05 * b.energy_range().1);
                ((-qr, qr), (-pr, pr))
            }
            Some(ExampleSpec::ShiftedCanonical(s)) => {
                let (qr, pr) = half(CANONICAL_WINDOW / s.beta);
                ((s.q_shift - qr, s.q_shift + qr), (-pr, pr))
            }
            None => {
                let (qr, pr) = half(profile.support().1);
                ((-qr, qr), (-pr, pr))
            }
        })
    }
}

fn execute(cli: &Cli) -> CliResult<()> {
    let cfg = resolve_config(&cli.common)?;
    let model = cfg.build_model()?;
    let ctx = Ctx {
        fmt: FloatFormat {
            precision: cfg.output.precision,
        },
        json: cfg.output.format == Format::Json,
        model,
        cfg,
    };
    std::fs::create_dir_all(&ctx.cfg.output.dir).map_err(|source| IoError::File {
        path: ctx.cfg.output.dir.clone(),
        source,
    })?;
    let input = cli.common.input.as_deref();
    match &cli.command {
        Command::Basis => cmd_basis(&ctx),
        Command::Expand => cmd_expand(&ctx),
        Command::Evolve => cmd_evolve(&ctx, input),
        Command::Verify { check } => cmd_verify(&ctx, check.or(ctx.cfg.run.check), input),
        Command::Partition => cmd_partition(&ctx),
        Command::Uncertainty => cmd_uncertainty(&ctx, input),
    }
}

fn print_summary<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string(value).unwrap_or_default());
}

fn write_table(ctx: &Ctx, stem: &str, header: &[&str], rows: Vec<Vec<f64>>) -> CliResult<PathBuf> {
    if ctx.json {
        let path = ctx.out(&format!("{stem}.json"));
        let records: Vec<serde_json::Map<String, serde_json::Value>> = rows
            .iter()
            .map(|r| {
                header
                    .iter()
                    .zip(r)
                    .map(|(h, x)| (h.to_string(), json!(ctx.fmt.round(*x))))
                    .collect()
            })
            .collect();
        io::write_json(&path, &records)?;
        Ok(path)
    } else {
        let path = ctx.out(&format!("{stem}.csv"));
        io::write_csv(&path, header, rows, ctx.fmt)?;
        Ok(path)
    }
}

fn cmd_basis(ctx: &Ctx) -> CliResult<()> {
    let n_max = ctx.fixed_n()?;
    let eps = select_spectrum(&ctx.model, ctx.cfg.spectral.epsilon0, n_max)?;
    let profile = ctx.profile()?;
    let family = BasisFamily::Shared(profile.clone());
    let layout = ctx.tau_layout(&profile, 16 * n_max.max(1))?;
    let gram = gram_matrix(&ctx.model, &family, n_max, Some(&layout))?;
    let n0 = n_max as i64;
    let spectrum: Vec<Vec<f64>> = (-n0..=n0).zip(&eps).map(|(n, e)| vec![n as f64, *e]).collect();
    write_table(ctx, "spectrum", &["n", "epsilon"], spectrum)?;
    write_table(ctx, "gram", &io::GRAM_HEADER, io::gram_rows(&gram))?;
    let defect = gram_defect(&gram);
    let tol = ctx.tol("orthonormality");
    print_summary(&json!({
        "N": n_max,
        "eigenvalues": eps.iter().map(|e| ctx.fmt.round(*e)).collect::<Vec<_>>(),
        "gram_defect": defect,
    }));
    if defect > tol {
        return Err(CliError::CheckFailed(vec![format!("orthonormality: max |G - I| = {defect:e} > {tol:e}")]));
    }
    Ok(())
}

/// Expansion plus what the example knows about it.
struct Prepared {
    expansion: SpectralExpansion,
    formula_flags: Option<Vec<i64>>,
}

fn initial_grid(ctx: &Ctx, n_max: Option<usize>) -> CliResult<AmplitudeGrid> {
    let model = &ctx.model;
    let energy_nodes = ctx.cfg.grid.energy_nodes;
    Ok(match ctx.spec() {
        Some(ExampleSpec::Box(b)) => {
            let panels = n_max.map_or(BOX_AUTO_PANELS, |n| n.max(8));
            box_initial_grid(&b, model, panels, BOX_PER_PANEL, energy_nodes)?
        }
        Some(ExampleSpec::ShiftedCanonical(s)) => {
            let g = n_max.map_or(
                ShiftedGrid {
                    n_tau: SHIFTED_AUTO_TAU,
                    energy_nodes: ShiftedGrid::for_window(1).energy_nodes,
                },
                ShiftedGrid::for_window,
            );
            shifted_initial_grid(&s, model, g.n_tau, g.energy_nodes)?
        }
        None => {
            let path = ctx.cfg.example.input.as_deref().expect("validated");
            io::read_amplitude_grid(path)?
        }
    })
}

fn compute_expansion(ctx: &Ctx) -> CliResult<Prepared> {
    let model = &ctx.model;
    let profile = ctx.profile()?;
    let eps0 = ctx.cfg.spectral.epsilon0;
    if let Some(spec) = ctx.spec() {
        spec.validate(model)?;
    }
    let n_max = match ctx.cfg.spectral.nmax {
        Truncation::Fixed(n) => n,
        Truncation::Auto => {
            let grid = initial_grid(ctx, None)?;
            let auto = expand_auto(model, &grid, &profile)?;
            if eps0 == 0.0 && !matches!(ctx.spec(), Some(ExampleSpec::ShiftedCanonical(_))) {
                return Ok(Prepared {
                    expansion: auto,
                    formula_flags: None,
                });
            }
            auto.n_max
        }
    };
    if let (Some(ExampleSpec::ShiftedCanonical(s)), true) = (ctx.spec(), eps0 == 0.0) {
        let sc = shifted_canonical_coefficients(&s, model, n_max, ShiftedGrid::for_window(n_max))?;
        return Ok(Prepared {
            expansion: sc.expansion,
            formula_flags: Some(sc.transcribed_flags),
        });
    }
    let grid = initial_grid(ctx, Some(n_max))?;
    let expansion = expand_with_offset(model, &grid, &BasisFamily::Shared(profile), n_max, eps0)?;
    Ok(Prepared {
        expansion,
        formula_flags: None,
    })
}

fn load_or_compute(ctx: &Ctx, input: Option<&Path>) -> CliResult<Prepared> {
    match input {
        Some(path) => Ok(Prepared {
            expansion: io::read_expansion(path)?,
            formula_flags: None,
        }),
        None => compute_expansion(ctx),
    }
}

fn base_report(ctx: &Ctx, prepared: &Prepared) -> RunReport {
    let exp = &prepared.expansion;
    RunReport {
        spec: ctx.spec(),
        n_max: exp.n_max,
        completeness: ctx.fmt.round(exp.completeness),
        bound_rhs: ctx.spec().and_then(|s| s.bound_rhs(&exp.model)),
        l2_error_vs_oracle: Vec::new(),
        uncertainty: None,
        formula_flags: prepared.formula_flags.clone(),
        clamped: 0,
    }
}

fn cmd_expand(ctx: &Ctx) -> CliResult<()> {
    let prepared = compute_expansion(ctx)?;
    let exp = &prepared.expansion;
    io::write_expansion(&ctx.out("expansion.json"), exp, ctx.fmt)?;
    let mut report = base_report(ctx, &prepared);
    report.uncertainty = uncertainty_product(exp).ok().map(|u| (&u).into());
    io::write_json(&ctx.out("report.json"), &report)?;
    if let Some(flags) = prepared.formula_flags.as_ref().filter(|f| !f.is_empty()) {
        eprintln!("kvn: uncorrected coefficient formula departs from quadrature at n = {flags:?}");
    }
    print_summary(&json!({ "N": exp.n_max, "completeness": exp.completeness }));
    Ok(())
}

fn cmd_evolve(ctx: &Ctx, input: Option<&Path>) -> CliResult<()> {
    let prepared = load_or_compute(ctx, input)?;
    let exp = &prepared.expansion;
    let model = &exp.model;
    let layout = ctx.phase_layout(exp.profile.profile(0, exp.n_max))?;
    let spec = if input.is_none() { ctx.spec() } else { ctx.spec().filter(|s| s.validate(model).is_ok()) };
    let mut report = base_report(ctx, &prepared);
    for &t in &ctx.cfg.run.times {
        let rho = reconstruct_density(exp, t, &layout)?;
        report.clamped += rho.clamped;
        let oracle = spec.map(|s| oracle_density(&s, model, t, &layout)).transpose()?;
        if let Some(o) = &oracle {
            report.l2_error_vs_oracle.push(TimedError {
                t,
                err: ctx.fmt.round(rho.relative_l2_error(o)?),
            });
        }
        let rows: Vec<DensityRow> = io::density_rows(&rho, oracle.as_ref());
        io::write_density(&ctx.out(&io::density_file_name(t, ctx.json)), &rows, ctx.json, ctx.fmt)?;
    }
    report.uncertainty = uncertainty_product(exp).ok().map(|u| (&u).into());
    if input.is_none() {
        io::write_expansion(&ctx.out("expansion.json"), exp, ctx.fmt)?;
    }
    io::write_json(&ctx.out("report.json"), &report)?;
    print_summary(&json!({
        "N": exp.n_max,
        "completeness": exp.completeness,
        "l2_error_vs_oracle": report.l2_error_vs_oracle,
    }));
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Assertion {
    pub name: String,
    pub value: f64,
    /// `"<="` or `">="`.
    pub relation: &'static str,
    pub limit: f64,
    pub pass: bool,
}

impl Assertion {
    fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            relation: "<=",
            limit,
            pass: value <= limit,
        }
    }

    fn at_least(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            relation: ">=",
            limit,
            pass: value >= limit,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
struct VerifyReport {
    check: Option<Check>,
    pass: bool,
    assertions: Vec<Assertion>,
}

const ALL_CHECKS: [Check; 6] = [
    Check::Orthonormality,
    Check::Hermiticity,
    Check::KvnResidual,
    Check::LiouvilleResidual,
    Check::Uncertainty,
    Check::Bounds,
];

/// Step of the KvN residual stencil; small enough that the `O(dt²)` error of
/// central differences stays below the residual tolerance for moderate `N`.
const KVN_DT: f64 = 1e-5;

fn cmd_verify(ctx: &Ctx, check: Option<Check>, input: Option<&Path>) -> CliResult<()> {
    let checks: Vec<Check> = check.map_or(ALL_CHECKS.to_vec(), |c| vec![c]);
    let needs_expansion = checks.iter().any(|c| {
        matches!(
            c,
            Check::KvnResidual | Check::LiouvilleResidual | Check::Uncertainty | Check::Bounds
        )
    }) || input.is_some();
    let prepared = if needs_expansion { Some(load_or_compute(ctx, input)?) } else { None };
    let mut out = Vec::new();
    if let Some(p) = &prepared {
        out.extend(consistency(ctx, &p.expansion, input.is_some())?);
    }
    for c in &checks {
        let exp = prepared.as_ref().map(|p| &p.expansion);
        match c {
            Check::Orthonormality => out.extend(verify_orthonormality(ctx, exp)?),
            Check::Hermiticity => out.extend(verify_hermiticity(ctx, exp)?),
            Check::KvnResidual => out.extend(verify_kvn(ctx, exp.expect("loaded"))?),
            Check::LiouvilleResidual => out.extend(verify_liouville(ctx, exp.expect("loaded"))?),
            Check::Uncertainty => out.extend(verify_uncertainty(ctx, exp.expect("loaded"))?),
            Check::Bounds => out.extend(verify_bounds(ctx, exp.expect("loaded"))),
        }
    }
    let pass = out.iter().all(|a| a.pass);
    let report = VerifyReport {
        check,
        pass,
        assertions: out,
    };
    io::write_json(&ctx.out("verify.json"), &report)?;
    print_summary(&report);
    if pass {
        Ok(())
    } else {
        Err(CliError::CheckFailed(
            report
                .assertions
                .iter()
                .filter(|a| !a.pass)
                .map(|a| format!("{} ({:e} {} {:e} violated)", a.name, a.value, a.relation, a.limit))
                .collect(),
        ))
    }
}

/// Stored completeness against the coefficients and, for a loaded file,
/// the coefficients against a fresh expansion of the configured example.
fn consistency(ctx: &Ctx, exp: &SpectralExpansion, loaded: bool) -> CliResult<Vec<Assertion>> {
    let tol = ctx.tol("parseval");
    let mut out = vec![
        Assertion::at_most(
            "completeness_matches_coefficients",
            (exp.completeness - exp.recomputed_completeness()).abs(),
            tol.max(ctx.fmt.precision.map_or(0.0, |p| 10f64.powi(1 - p as i32))),
        ),
        Assertion::at_most("parseval", exp.recomputed_completeness(), 1.0 + tol),
    ];
    if loaded && ctx.spec().is_some() && exp.model == ctx.model {
        let fresh = compute_with_n(ctx, exp.n_max)?;
        let worst = exp
            .coefficients
            .iter()
            .map(|c| (c.value() - fresh.coefficient(c.n)).norm())
            .fold(0.0, f64::max);
        out.push(Assertion::at_most("coefficients_match_example", worst, ctx.tol("coefficients")));
    }
    Ok(out)
}

fn compute_with_n(ctx: &Ctx, n_max: usize) -> CliResult<SpectralExpansion> {
    let mut cfg = ctx.cfg.clone();
    cfg.spectral.nmax = Truncation::Fixed(n_max);
    let sub = Ctx {
        cfg,
        model: ctx.model,
        fmt: ctx.fmt,
        json: ctx.json,
    };
    Ok(compute_expansion(&sub)?.expansion)
}

fn window(ctx: &Ctx, exp: Option<&SpectralExpansion>) -> CliResult<(usize, BasisFamily, HamiltonianModel)> {
    Ok(match exp {
        Some(e) => (e.n_max, e.profile.clone(), e.model),
        None => (ctx.fixed_n()?, BasisFamily::Shared(ctx.profile()?), ctx.model),
    })
}

fn verify_orthonormality(ctx: &Ctx, exp: Option<&SpectralExpansion>) -> CliResult<Vec<Assertion>> {
    let (n_max, family, model) = window(ctx, exp)?;
    let tol = ctx.tol("orthonormality");
    let closed = gram_defect(&gram_matrix(&model, &family, n_max, None)?);
    let layout = ctx.tau_layout(family.profile(0, n_max), 16 * n_max.max(1))?;
    let quad = gram_defect(&gram_matrix(&model, &family, n_max, Some(&layout))?);
    Ok(vec![
        Assertion::at_most("orthonormality_closed_form", closed, tol),
        Assertion::at_most("orthonormality_quadrature", quad, tol),
    ])
}

fn basis_grids(
    ctx: &Ctx,
    model: &HamiltonianModel,
    family: &BasisFamily,
    n_max: usize,
    eps0: f64,
) -> CliResult<(GridLayout, Vec<AmplitudeGrid>)> {
    let layout = ctx.tau_layout(family.profile(0, n_max), 16 * n_max.max(1))?;
    let n0 = n_max as i64;
    let grids = (-n0..=n0)
        .map(|n| Ok(family.basis_state(model, n, n_max, eps0, 0.0)?.sample(model, &layout)?))
        .collect::<CliResult<Vec<_>>>()?;
    Ok((layout, grids))
}

fn verify_hermiticity(ctx: &Ctx, exp: Option<&SpectralExpansion>) -> CliResult<Vec<Assertion>> {
    let (n_max, family, model) = window(ctx, exp)?;
    let (_, grids) = basis_grids(ctx, &model, &family, n_max, 0.0)?;
    let applied = grids
        .iter()
        .map(|g| apply_tilde_hamiltonian(&model, &Gauge::Zero, g))
        .collect::<Result<Vec<_>, _>>()?;
    let mut worst: f64 = 0.0;
    for (a, ha) in grids.iter().zip(&applied) {
        for (b, hb) in grids.iter().zip(&applied) {
            worst = worst.max((a.inner(hb)? - ha.inner(b)?).norm());
        }
    }
    Ok(vec![Assertion::at_most("hermiticity_defect", worst, ctx.tol("hermiticity"))])
}

fn verify_kvn(ctx: &Ctx, exp: &SpectralExpansion) -> CliResult<Vec<Assertion>> {
    let model = exp.model;
    let tol = ctx.tol("residual");
    let (_, grids) = basis_grids(ctx, &model, &exp.profile, exp.n_max, exp.epsilon0)?;
    let n0 = exp.n_max as i64;
    let mut eigen: f64 = 0.0;
    for (n, g) in (-n0..=n0).zip(&grids) {
        let h = apply_tilde_hamiltonian(&model, &Gauge::Zero, g)?;
        let e = exp.epsilon(n)?;
        let r = compensated_sum(
            (0..g.layout.len()).map(|k| g.layout.weight(k) * (h.values[k] - e * g.values[k]).norm_sqr()),
        );
        eigen = eigen.max(r.sqrt());
    }
    let layout = ctx.tau_layout(exp.profile.profile(0, exp.n_max), 2 * exp.n_max + 1)?;
    let mut state: f64 = 0.0;
    for &t in &ctx.cfg.run.times {
        let slices = [t - KVN_DT, t, t + KVN_DT]
            .iter()
            .map(|s| evolve(exp, *s).amplitude(&layout))
            .collect::<Result<Vec<_>, _>>()?;
        state = state.max(kvn_residual(&model, &Gauge::Zero, &slices)?);
    }
    Ok(vec![
        Assertion::at_most("kvn_residual_basis", eigen, tol),
        Assertion::at_most("kvn_residual_state", state, tol),
    ])
}

fn verify_liouville(ctx: &Ctx, exp: &SpectralExpansion) -> CliResult<Vec<Assertion>> {
    let layout = ctx.tau_layout(exp.profile.profile(0, exp.n_max), 4 * exp.n_max + 1)?;
    let mut worst: f64 = 0.0;
    for &t in &ctx.cfg.run.times {
        worst = worst.max(liouville_residual(exp, t, ctx.cfg.run.dt, &layout)?);
    }
    Ok(vec![Assertion::at_most("liouville_residual", worst, ctx.tol("liouville"))])
}

fn verify_uncertainty(ctx: &Ctx, exp: &SpectralExpansion) -> CliResult<Vec<Assertion>> {
    let u = uncertainty_product(exp)?;
    Ok(vec![Assertion::at_least(
        "uncertainty_product",
        u.product,
        u.bound - ctx.tol("uncertainty"),
    )])
}

fn verify_bounds(ctx: &Ctx, exp: &SpectralExpansion) -> Vec<Assertion> {
    let mut out = vec![Assertion::at_most(
        "completeness_at_most_one",
        exp.completeness,
        1.0 + ctx.tol("parseval"),
    )];
    if let Some(rhs) = ctx.spec().and_then(|s| s.bound_rhs(&exp.model)) {
        out.push(Assertion::at_most("completeness_under_bound", exp.completeness, rhs));
    }
    out
}

fn cmd_partition(ctx: &Ctx) -> CliResult<()> {
    let beta = ctx.cfg.run.beta;
    if !(beta.is_finite() && beta > 0.0) {
        return Err(ConfigError::Invalid(format!("beta = {beta} must be positive")).into());
    }
    let model = &ctx.model;
    let region = Region::of_model(model);
    let log_z = log_partition_function(model, beta, &region)?;
    let mean = mean_energy(model, beta, &region)?;
    let r = |x: f64| ctx.fmt.round(x);
    let summary = json!({
        "beta": r(beta),
        "log_z": r(log_z),
        "z": r(log_z.exp()),
        "mean_energy": { "quadrature": r(mean.quadrature), "log_derivative": r(mean.log_derivative) },
    });
    io::write_json(&ctx.out("partition.json"), &summary)?;
    print_summary(&summary);
    Ok(())
}

fn cmd_uncertainty(ctx: &Ctx, input: Option<&Path>) -> CliResult<()> {
    let prepared = load_or_compute(ctx, input)?;
    let exp = &prepared.expansion;
    let reports = ctx
        .cfg
        .run
        .times
        .iter()
        .map(|&t| Ok((t, uncertainty_product(&evolve(exp, t))?)))
        .collect::<CliResult<Vec<(f64, UncertaintyReport)>>>()?;
    let rows = reports
        .iter()
        .map(|(t, u)| {
            vec![
                *t,
                u.delta_tau,
                u.delta_eps,
                u.product,
                u.bound,
                u.delta_tau_circular.unwrap_or(f64::NAN),
                u.product_circular.unwrap_or(f64::NAN),
            ]
        })
        .collect();
    write_table(
        ctx,
        "uncertainty",
        &["t", "dtau", "deps", "product", "bound", "dtau_circular", "product_circular"],
        rows,
    )?;
    let min = reports.iter().map(|(_, u)| u.product).fold(f64::INFINITY, f64::min);
    print_summary(&json!({ "N": exp.n_max, "min_product": min, "bound": 0.5 * exp.model.hbar }));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("kvn").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_config() {
        let cli = parse(&["basis", "--omega", "3", "--nmax", "4", "--tol", "orthonormality=1e-6"]);
        let cfg = resolve_config(&cli.common).unwrap();
        assert_eq!(cfg.model.omega, 3.0);
        assert_eq!(cfg.spectral.nmax, Truncation::Fixed(4));
        assert_eq!(cfg.tolerances().get("orthonormality"), 1e-6);
    }

    #[test]
    fn negative_values_parse() {
        let cli = parse(&["expand", "--tau-center", "-1.5", "--times", "0,0.5,1"]);
        let cfg = resolve_config(&cli.common).unwrap();
        assert_eq!(cfg.example.tau_center, -1.5);
        assert_eq!(cfg.run.times, [0.0, 0.5, 1.0]);
    }

    #[test]
    fn bad_tolerance_is_a_config_error() {
        let cli = parse(&["basis", "--tol", "nonsense"]);
        let err = CliError::from(resolve_config(&cli.common).unwrap_err());
        assert_eq!(err.exit_code(), EXIT_CONFIG);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::from(KvnError::UnboundedTau).exit_code(), EXIT_UNBOUNDED_TAU);
        assert_eq!(
            CliError::from(KvnError::UnderResolved("x".into())).exit_code(),
            EXIT_UNDER_RESOLVED
        );
        assert_eq!(CliError::CheckFailed(vec![]).exit_code(), EXIT_CHECK_FAILED);
    }
}
