//! Command-line front end: synthesize controller bundles, verify them, run
//! scenarios and compare against the tracking baseline.
//!
//! Exit statuses: 0 success, 1 domain failure (infeasible, lost, FAIL),
//! 2 usage or parse error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use reachctl::case_study::{build_case_study, ManeuverParams, TrackingBaseline};
use reachctl::executor::{run, schedule_of, ControlUpdate, Fallback, RcpPolicy, RunOptions, RunSummary, RunStatus, TrajectoryLog};
use reachctl::files::{
    load_baseline, load_bundle, load_scenario, load_toml, to_toml, write_file, BundleFile, DynamicsFile, RunOutputs, SummaryFile,
    TriangulationFile,
};
use reachctl::geometry::{validate_triangulation, DEFAULT_COVER_SAMPLES};
use reachctl::synthesis::{
    reachability_check, reflect_mode, synthesize_mode, AffineDynamics, ControlBounds, HybridController, ModeSpec, Objective, SimplexCheck,
    SynthesisOptions, DEFAULT_MARGIN,
};

pub mod manifest;

pub use manifest::{manifest_path_for, RunManifest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Bad invocation or unreadable input.
    Usage(String),
    /// The inputs were fine but the answer is negative.
    Failure(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Failure(_) => EXIT_FAILURE,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Failure(m) => f.write_str(m),
        }
    }
}

impl From<reachctl::Error> for CliError {
    fn from(e: reachctl::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "reachctl", version, about = "Reach-control synthesis, verification and simulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a controller bundle from a triangulation file.
    Synthesize(SynthesizeArgs),
    /// Re-check every simplex of a bundle.
    Verify(VerifyArgs),
    /// Run one scenario with a bundle.
    Simulate(SimulateArgs),
    /// Run a scenario with both the bundle and the tracking baseline.
    Compare(CompareArgs),
    /// Write the side-to-side triangulation and baseline configuration.
    CaseStudy(CaseStudyArgs),
}

#[derive(Debug, clap::Args)]
pub struct SynthesizeArgs {
    pub triangulation: PathBuf,
    /// Dynamics file (a, b, drift); defaults to the triangulation's own, then the double integrator.
    #[arg(long)]
    pub dynamics: Option<PathBuf>,
    /// Symmetric control bound, m/s².
    #[arg(long, default_value_t = 3.2)]
    pub bounds: f64,
    #[arg(long, default_value_t = DEFAULT_MARGIN)]
    pub margin: f64,
    #[arg(long, default_value_t = Objective::MaxSlack)]
    pub objective: Objective,
    /// Seed of the sampling-based cover check.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_COVER_SAMPLES)]
    pub samples: usize,
    #[arg(short, long, default_value = "bundle.cfg")]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct VerifyArgs {
    pub bundle: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum UpdateArg {
    Continuous,
    Zoh,
}

impl From<UpdateArg> for ControlUpdate {
    fn from(u: UpdateArg) -> Self {
        match u {
            UpdateArg::Continuous => ControlUpdate::Continuous,
            UpdateArg::Zoh => ControlUpdate::ZeroOrderHold,
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct SimulateArgs {
    pub bundle: PathBuf,
    pub scenario: PathBuf,
    /// Prefix of every output file.
    #[arg(short, long, default_value = "out/")]
    pub out: String,
    /// Overrides the scenario's step, s.
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long, value_enum, default_value_t = UpdateArg::Continuous)]
    pub update: UpdateArg,
}

#[derive(Debug, clap::Args)]
pub struct CompareArgs {
    pub bundle: PathBuf,
    pub baseline: PathBuf,
    pub scenario: PathBuf,
    #[arg(short, long, default_value = "out/")]
    pub out: String,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long, value_enum, default_value_t = UpdateArg::Continuous)]
    pub update: UpdateArg,
}

#[derive(Debug, clap::Args)]
pub struct CaseStudyArgs {
    /// Output directory.
    #[arg(short, long, default_value = ".")]
    pub out: PathBuf,
}

/// Parse `args` (program name first), run the command and return the exit status.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    // program name normalised so manifests do not depend on the install path
    let command: Vec<String> = std::iter::once("reachctl".to_string()).chain(args.iter().skip(1).map(|a| a.to_string_lossy().into_owned())).collect();
    let result = match &cli.command {
        Command::Synthesize(a) => cmd_synthesize(a, &command, out),
        Command::Verify(a) => cmd_verify(a, out),
        Command::Simulate(a) => cmd_simulate(a, &command, out),
        Command::Compare(a) => cmd_compare(a, &command, out),
        Command::CaseStudy(a) => cmd_case_study(a, &command, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.code()
        }
    }
}

fn io(e: std::io::Error) -> CliError {
    CliError::Usage(format!("cannot write output: {e}"))
}

/// Synthesize every mode a triangulation file's design section asks for.
pub fn synthesize_design(file: &TriangulationFile, dynamics: &AffineDynamics, opts: &SynthesisOptions) -> CliResult<HybridController> {
    let design = file.design.as_ref().ok_or_else(|| CliError::Usage("triangulation file has no [design] section".into()))?;
    let tri = file.triangulation()?;
    let roles = file.roles()?;
    let reach = reachability_check(&tri, &roles, &design.target);
    if !reach.ok() {
        let ids: Vec<String> = reach.unreachable.iter().map(|i| i.to_string()).collect();
        return Err(CliError::Failure(format!("no exit-facet path to {} from {}", design.target.name, ids.join(", "))));
    }
    let discontinuity = design.discontinuity.iter().copied().collect();
    let successor = design.mirror_mode.clone().unwrap_or_else(|| design.mode.clone());
    let spec = ModeSpec { name: &design.mode, successor: &successor, target: design.target.clone(), roles: &roles, discontinuity: &discontinuity };
    let first = synthesize_mode(&tri, dynamics, &spec, opts).map_err(|e| CliError::Failure(format!("synthesis failed: {e}")))?;
    let mut modes = vec![];
    if let Some(mirror) = &design.mirror_mode {
        let target = design.mirror_target.as_deref().ok_or_else(|| CliError::Usage("design has mirror_mode but no mirror_target".into()))?;
        let second = reflect_mode(&tri, &first, mirror, &design.mode, target).map_err(|e| CliError::Failure(format!("reflection failed: {e}")))?;
        modes.push(first);
        modes.push(second);
    } else {
        modes.push(first);
    }
    Ok(HybridController {
        triangulation: tri,
        dynamics: dynamics.clone(),
        bounds: opts.bounds.clone(),
        discontinuity,
        margin: opts.margin,
        objective: opts.objective,
        modes,
    })
}

pub fn cmd_synthesize(a: &SynthesizeArgs, command: &[String], out: &mut dyn Write) -> CliResult {
    let mut manifest = RunManifest::new(command.to_vec());
    let (file, hash): (TriangulationFile, String) = load_toml(&a.triangulation)?;
    manifest.input(&a.triangulation, hash.clone());
    let mut provenance = BTreeMap::from([("triangulation".to_string(), hash)]);
    let dynamics = match &a.dynamics {
        Some(p) => {
            let (d, h): (DynamicsFile, String) = load_toml(p)?;
            manifest.input(p, h.clone());
            provenance.insert("dynamics".into(), h);
            d.to_dynamics()?
        }
        None => match &file.dynamics {
            Some(d) => d.to_dynamics()?,
            None => AffineDynamics::double_integrator(),
        },
    };
    if !(a.bounds > 0.0) || !(a.margin >= 0.0) {
        return Err(CliError::Usage(format!("--bounds must be positive and --margin non-negative (got {}, {})", a.bounds, a.margin)));
    }
    let tri = file.triangulation()?;
    if !file.region.is_empty() {
        let report = validate_triangulation(&tri, &file.region, a.samples, a.seed);
        if !report.is_valid() {
            return Err(CliError::Failure(format!("triangulation does not tile its region: {:?}", report.violations)));
        }
        writeln!(out, "triangulation: {} vertices, {} simplices, cover check passed ({} samples, seed {})", tri.vertices().len(), tri.len(), a.samples, a.seed).map_err(io)?;
    }
    let mut opts = SynthesisOptions::new(ControlBounds::symmetric(dynamics.n_u(), a.bounds)?);
    opts.margin = a.margin;
    opts.objective = a.objective;
    let hc = synthesize_design(&file, &dynamics, &opts)?;
    let bundle = BundleFile::from_controller(&hc, provenance, file.params.clone(), &file.region);
    write_file(&a.out, to_toml(&bundle)?.as_bytes())?;
    manifest.output(&a.out)?;
    let mpath = manifest_path_for(&a.out);
    manifest.write(&mpath)?;
    let names: Vec<&str> = hc.modes.iter().map(|m| m.name.as_str()).collect();
    writeln!(out, "synthesized modes {} over {} simplices (|u| <= {}, objective {})", names.join(", "), tri.len(), a.bounds, a.objective).map_err(io)?;
    writeln!(out, "wrote {} and {}", a.out.display(), mpath.display()).map_err(io)?;
    Ok(())
}

fn check_row(c: &SimplexCheck) -> String {
    let eq = match &c.equilibrium {
        None => "none".to_string(),
        Some(p) => format!("{p:?}"),
    };
    format!(
        "{:<6} {:<5} {:>11.3e} {:>11.3e} {:>11.3e} {:>6} {:<12} {}",
        c.mode,
        c.simplex.to_string(),
        c.invariance_residual,
        c.interpolation_error,
        c.continuity_mismatch,
        if c.within_bounds { "yes" } else { "no" },
        eq,
        if c.pass() { "PASS" } else { "FAIL" }
    )
}

pub fn cmd_verify(a: &VerifyArgs, out: &mut dyn Write) -> CliResult {
    let (hc, _, _) = load_bundle(&a.bundle)?;
    let checks = hc.verify()?;
    writeln!(out, "{:<6} {:<5} {:>11} {:>11} {:>11} {:>6} {:<12} result", "mode", "id", "invariance", "interp", "continuity", "bounds", "equilibrium").map_err(io)?;
    for c in &checks {
        writeln!(out, "{}", check_row(c)).map_err(io)?;
    }
    let failed = checks.iter().filter(|c| !c.pass()).count();
    if failed > 0 {
        return Err(CliError::Failure(format!("{failed} of {} simplex checks FAIL", checks.len())));
    }
    writeln!(out, "all {} simplex checks PASS", checks.len()).map_err(io)?;
    Ok(())
}

fn specs_of(bundle: &BundleFile) -> ManeuverParams {
    bundle.params.clone().unwrap_or_else(ManeuverParams::side_to_side)
}

fn summary_lines(label: &str, log: &TrajectoryLog, s: &RunSummary) -> Vec<String> {
    let v: Vec<String> = reachctl::executor::SpecFlags::NAMES.iter().zip(s.violations).map(|(n, c)| format!("{n}={c}")).collect();
    vec![
        format!("{label}: {} samples, {} crossings, T1 {}", log.samples.len(), s.crossing_sequence.len(), if s.t1_ok { "ok" } else { "VIOLATED" }),
        format!("{label}: violations {}", v.join(" ")),
        format!("{label}: crossing sequence {}", s.crossing_sequence.join(",")),
    ]
}

fn write_run(prefix: &str, log: &TrajectoryLog, manifest: &mut RunManifest) -> CliResult<RunOutputs> {
    let outputs = RunOutputs::from_prefix(prefix);
    outputs.write(log)?;
    for p in outputs.all() {
        manifest.output(p)?;
    }
    Ok(outputs)
}

fn lost_error(label: &str, log: &TrajectoryLog) -> Option<CliError> {
    match &log.status {
        RunStatus::Lost { t, state } => Some(CliError::Failure(format!("{label} run lost at t = {t}, last state {state:?}"))),
        RunStatus::Completed => None,
    }
}

pub fn cmd_simulate(a: &SimulateArgs, command: &[String], out: &mut dyn Write) -> CliResult {
    let mut manifest = RunManifest::new(command.to_vec());
    let (hc, bundle, bhash) = load_bundle(&a.bundle)?;
    manifest.input(&a.bundle, bhash);
    let (mut scenario, shash) = load_scenario(&a.scenario)?;
    manifest.input(&a.scenario, shash);
    if let Some(dt) = a.dt {
        scenario.dt = dt;
    }
    scenario.validate()?;
    let policy = RcpPolicy::new(&hc, Fallback::default());
    let log = run(&scenario, &policy, &schedule_of(&hc)?, &specs_of(&bundle), &RunOptions { update: a.update.into() })?;
    write_run(&a.out, &log, &mut manifest)?;
    let mpath = PathBuf::from(format!("{}manifest.cfg", a.out));
    manifest.write(&mpath)?;
    for line in summary_lines("rcp", &log, &log.summary()) {
        writeln!(out, "{line}").map_err(io)?;
    }
    writeln!(out, "wrote {}*.csv, {}summary.cfg and {}", a.out, a.out, mpath.display()).map_err(io)?;
    match lost_error("rcp", &log) {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// Mean time between successive crossings of the same target.
pub fn cycle_period(log: &TrajectoryLog) -> Option<f64> {
    let mut gaps = Vec::new();
    for (i, c) in log.crossings.iter().enumerate() {
        if let Some(prev) = log.crossings[..i].iter().rev().find(|p| p.target == c.target) {
            gaps.push(c.t - prev.t);
        }
    }
    (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64)
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct ComparisonFile {
    pub rcp: SummaryFile,
    pub baseline: SummaryFile,
    pub rcp_cycle_period: Option<f64>,
    pub baseline_cycle_period: Option<f64>,
}

pub fn cmd_compare(a: &CompareArgs, command: &[String], out: &mut dyn Write) -> CliResult {
    let mut manifest = RunManifest::new(command.to_vec());
    let (hc, bundle, bhash) = load_bundle(&a.bundle)?;
    manifest.input(&a.bundle, bhash);
    let (baseline, basehash) = load_baseline(&a.baseline)?;
    manifest.input(&a.baseline, basehash);
    let (mut scenario, shash) = load_scenario(&a.scenario)?;
    manifest.input(&a.scenario, shash);
    if let Some(dt) = a.dt {
        scenario.dt = dt;
    }
    scenario.validate()?;
    let specs = specs_of(&bundle);
    let schedule = schedule_of(&hc)?;
    let opts = RunOptions { update: a.update.into() };
    let rcp = run(&scenario, &RcpPolicy::new(&hc, Fallback::default()), &schedule, &specs, &opts)?;
    let base = run(&scenario, &baseline, &schedule, &specs, &opts)?;
    write_run(&format!("{}rcp_", a.out), &rcp, &mut manifest)?;
    write_run(&format!("{}baseline_", a.out), &base, &mut manifest)?;
    let (rs, bs) = (rcp.summary(), base.summary());
    let cmp = ComparisonFile {
        rcp: SummaryFile::new(&rcp, &rs),
        baseline: SummaryFile::new(&base, &bs),
        rcp_cycle_period: cycle_period(&rcp),
        baseline_cycle_period: cycle_period(&base),
    };
    let cpath = PathBuf::from(format!("{}comparison.cfg", a.out));
    write_file(&cpath, to_toml(&cmp)?.as_bytes())?;
    manifest.output(&cpath)?;
    let mpath = PathBuf::from(format!("{}manifest.cfg", a.out));
    manifest.write(&mpath)?;

    let w = |x: &mut dyn Write, s: String| writeln!(x, "{s}").map_err(io);
    w(out, format!("{:<22} {:>12} {:>12}", "", "rcp", "baseline"))?;
    for (k, name) in reachctl::executor::SpecFlags::NAMES.iter().enumerate() {
        w(out, format!("{:<22} {:>12} {:>12}", format!("{name} violations"), rs.violations[k], bs.violations[k]))?;
    }
    w(out, format!("{:<22} {:>12} {:>12}", "unsafe samples", rs.unsafe_samples, bs.unsafe_samples))?;
    w(out, format!("{:<22} {:>12} {:>12}", "unlive samples", rs.unlive_samples, bs.unlive_samples))?;
    let yes = |b: bool| if b { "ok" } else { "VIOLATED" };
    w(out, format!("{:<22} {:>12} {:>12}", "T1 sequence", yes(rs.t1_ok), yes(bs.t1_ok)))?;
    w(out, format!("{:<22} {:>12} {:>12}", "crossings", rs.crossing_sequence.len(), bs.crossing_sequence.len()))?;
    w(out, format!("{:<22} {:>12.4} {:>12.4}", "max |x|", rs.max_abs_x, bs.max_abs_x))?;
    w(out, format!("{:<22} {:>12.4} {:>12.4}", "max |xdot|", rs.max_abs_xdot, bs.max_abs_xdot))?;
    let per = |p: Option<f64>| p.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into());
    w(out, format!("{:<22} {:>12} {:>12}", "cycle period (s)", per(cmp.rcp_cycle_period), per(cmp.baseline_cycle_period)))?;
    w(out, format!("wrote {}rcp_*, {}baseline_*, {} and {}", a.out, a.out, cpath.display(), mpath.display()))?;
    if let Some(e) = lost_error("baseline", &base) {
        w(out, format!("note: {e}"))?;
    }
    match lost_error("rcp", &rcp) {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

pub fn cmd_case_study(a: &CaseStudyArgs, command: &[String], out: &mut dyn Write) -> CliResult {
    let cs = build_case_study(&ManeuverParams::side_to_side())?;
    let mut manifest = RunManifest::new(command.to_vec());
    let tri = a.out.join("tri.cfg");
    write_file(&tri, to_toml(&TriangulationFile::from_case_study(&cs))?.as_bytes())?;
    let base = a.out.join("baseline.cfg");
    write_file(&base, to_toml(&TrackingBaseline::default())?.as_bytes())?;
    for p in [&tri, &base] {
        manifest.output(p)?;
    }
    let mpath = a.out.join("case_study.manifest.cfg");
    manifest.write(&mpath)?;
    writeln!(
        out,
        "side-to-side case study: {} vertices, {} simplices; wrote {}, {} and {}",
        cs.triangulation.vertices().len(),
        cs.triangulation.len(),
        tri.display(),
        base.display(),
        mpath.display()
    )
    .map_err(io)?;
    Ok(())
}

/// Value of the bundle's law at `s` in `mode`, if `s` lies in the triangulation.
pub fn law_at(hc: &HybridController, mode: usize, s: &[f64]) -> Option<DVector<f64>> {
    reachctl::executor::eval_control(hc, mode, &DVector::from_column_slice(s), None).map(|(u, _)| u)
}

/// Convenience for callers holding a path: load and return the controller.
pub fn load_controller(path: &Path) -> CliResult<HybridController> {
    Ok(load_bundle(path)?.0)
}
