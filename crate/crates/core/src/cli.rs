//! Command-line front end: `generate`, `solve`, `compare`, `validate`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::analysis::{
    data_profile, median_time, profile_csv, profile_grid, success_times, summaries_csv,
    targets_csv, theta_grid, time_to_target, timed_feasible_objective, timed_objective, RunSummary,
};
use crate::apg::ApgConfig;
use crate::baselines::{alm_run, palm_run, AlmConfig, PalmConfig};
use crate::constants::{BaseConstants, ConstantInputs, ConstantsBundle};
use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::metrics::{averages, curves_csv, kkt_residual};
use crate::np::{BinarizeRule, NpInstance};
use crate::problem::{Problem, Vector};
use crate::qcqp::{QcqpInstance, QcqpSpec};
use crate::qpalm::{self, QpalmConfig, ScheduleMode};
use crate::surrogate::DEFAULT_PAD;
use crate::trace::{parse_csv, parse_lambda_csv, write_text, RunTrace};
use crate::validate::{curve_fits, validate_trace, ValidationReport};

#[derive(Debug, Parser)]
#[command(
    name = "qpalm",
    version,
    about = "QPALM solver, baselines and experiment harness"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a problem instance file.
    Generate(GenerateArgs),
    /// Run one solver on one instance.
    Solve(SolveArgs),
    /// Run several solvers on several instances and aggregate.
    Compare(CompareArgs),
    /// Check invariants and fit rates on a run or batch directory.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Qcqp,
    Np,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    Qpalm,
    Palm,
    Alm,
}

impl Solver {
    fn name(self) -> &'static str {
        match self {
            Solver::Qpalm => "qpalm",
            Solver::Palm => "palm",
            Solver::Alm => "alm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Theory,
    Practical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Start {
    /// The instance's strictly feasible point.
    Xhat,
    Zero,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FamilyArgs {
    #[arg(long, value_enum)]
    pub family: Option<Family>,
    /// Generator settings as `key=value` pairs.
    #[arg(long, num_args = 1.., value_name = "KEY=VAL")]
    pub spec: Vec<String>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub family: FamilyArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SolverArgs {
    #[arg(long, value_enum, default_value_t = Mode::Practical)]
    pub mode: Mode,
    #[arg(long = "T", default_value_t = 1000)]
    pub t: usize,
    #[arg(long, default_value_t = qpalm::DEFAULT_C_ALPHA)]
    pub c_alpha: f64,
    #[arg(long, default_value_t = DEFAULT_PAD)]
    pub pad: f64,
    /// APG stopping tolerance on the step length.
    #[arg(long, default_value_t = 1e-6)]
    pub inner_tol: f64,
    #[arg(long, default_value_t = 5000)]
    pub inner_max_iter: usize,
    /// Stride of the Moreau-gradient diagnostic; 0 disables it. Defaults to 10 in theory mode
    /// and off otherwise.
    #[arg(long)]
    pub moreau_every: Option<usize>,
    /// Per-run solver time budget in seconds.
    #[arg(long)]
    pub budget_s: Option<f64>,
    /// Write `cpu_s` as 0 so traces are byte-reproducible.
    #[arg(long)]
    pub no_timing: bool,
    #[arg(long, value_enum, default_value_t = Start::Xhat)]
    pub start: Start,
    #[arg(long, default_value_t = 50)]
    pub alm_outer: usize,
    #[arg(long, default_value_t = 1.0)]
    pub alm_sigma0: f64,
    #[arg(long, default_value_t = 10.0)]
    pub alm_rho: f64,
    /// Early stop for ALM on `||R_1|| <= tol` and `max g <= tol`.
    #[arg(long)]
    pub kkt_tol: Option<f64>,
}

impl Default for SolverArgs {
    /// The command-line defaults.
    fn default() -> Self {
        #[derive(Parser)]
        struct Wrap {
            #[command(flatten)]
            s: SolverArgs,
        }
        Wrap::parse_from(["qpalm"]).s
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SolveArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long, value_enum)]
    pub solver: Solver,
    #[command(flatten)]
    pub solver_args: SolverArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CompareArgs {
    #[command(flatten)]
    pub family: FamilyArgs,
    /// Instance seeds: `a..b` (inclusive) or a comma-separated list.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Existing instance files instead of generated ones.
    #[arg(long, num_args = 1..)]
    pub instances: Vec<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',', required = true)]
    pub solvers: Vec<Solver>,
    #[command(flatten)]
    pub solver_args: SolverArgs,
    /// Count only points with `max g <= tol` toward success (excluded from acceptance).
    #[arg(long)]
    pub feasible_tol: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ValidateArgs {
    /// A run directory (with `summary.json`) or a batch directory (with `runs/`).
    #[arg(long)]
    pub run: PathBuf,
    /// Report path; defaults to `<run>/acceptance.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Input(_) | Error::Parse { .. } | Error::Io { .. } | Error::Json(_) => 2,
        Error::Numerical(_) => 3,
        Error::RegularityViolated { .. } | Error::BudgetTooSmall { .. } => 4,
    }
}

/// Parse `args` (program name first), run, and return the process exit code.
pub fn main_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Generate(a) => cmd_generate(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Validate(a) => cmd_validate(a),
    }
}

fn ensure_fresh(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::Input(format!(
            "{} already exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(serde_json::from_str(&text)?)
}

fn spec_map(pairs: &[String]) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for p in pairs {
        let (k, v) = p
            .split_once('=')
            .ok_or_else(|| Error::Input(format!("spec entry '{p}' is not key=value")))?;
        if map
            .insert(k.trim().to_string(), v.trim().to_string())
            .is_some()
        {
            return Err(Error::Input(format!("spec key '{k}' given twice")));
        }
    }
    Ok(map)
}

struct SpecReader(BTreeMap<String, String>);

impl SpecReader {
    fn take<T: std::str::FromStr>(&mut self, keys: &[&str], default: T) -> Result<T> {
        for k in keys {
            if let Some(v) = self.0.remove(*k) {
                return v
                    .parse()
                    .map_err(|_| Error::Input(format!("spec key '{k}' has bad value '{v}'")));
            }
        }
        Ok(default)
    }

    fn take_str(&mut self, key: &str) -> Option<String> {
        self.0.remove(key)
    }

    fn finish(self) -> Result<()> {
        match self.0.keys().next() {
            Some(k) => Err(Error::Input(format!("unknown spec key '{k}'"))),
            None => Ok(()),
        }
    }
}

fn parse_rule(s: &str) -> Result<BinarizeRule> {
    match s {
        "identity" => Ok(BinarizeRule::Identity),
        "odd_even" => Ok(BinarizeRule::OddEven),
        _ => s
            .strip_prefix("one_vs_rest:")
            .and_then(|l| l.parse().ok())
            .map(BinarizeRule::OneVsRest)
            .ok_or_else(|| Error::Input(format!("unknown binarize rule '{s}'"))),
    }
}

/// Build an instance from `--family` and `--spec`.
pub fn build_instance(args: &FamilyArgs, seed: u64) -> Result<Instance> {
    let family = args
        .family
        .ok_or_else(|| Error::Input("--family is required".into()))?;
    let mut r = SpecReader(spec_map(&args.spec)?);
    let inst = match family {
        Family::Qcqp => {
            let n = r.take(&["n"], 80usize)?;
            let p = r.take(&["p"], 30usize)?;
            let radius = r.take(&["R", "radius"], 2.0)?;
            let mut spec = QcqpSpec::new(n, p, radius);
            spec.l0 = r.take(&["l0"], spec.l0)?;
            spec.lg = r.take(&["lg"], spec.lg)?;
            spec.neg_fraction_obj = r.take(&["neg_frac"], spec.neg_fraction_obj)?;
            if let Some(k) = r.take_str("indefinite") {
                spec.indefinite_constraint_count = Some(
                    k.parse()
                        .map_err(|_| Error::Input(format!("bad indefinite count '{k}'")))?,
                );
            }
            spec.neg_fraction_constraint =
                r.take(&["neg_frac_con"], spec.neg_fraction_constraint)?;
            spec.tau0 = r.take(&["tau0"], spec.tau0)?;
            spec.tau_g = r.take(&["tau_g"], spec.tau_g)?;
            let lo = r.take(&["delta_lo"], spec.delta_range.0)?;
            let hi = r.take(&["delta_hi"], spec.delta_range.1)?;
            spec.delta_range = (lo, hi);
            r.finish()?;
            Instance::Qcqp(QcqpInstance::generate(&spec, seed)?)
        }
        Family::Np => {
            let tau = r.take(&["tau"], 0.2)?;
            let r_box = r.take(&["box", "R_box"], crate::np::DEFAULT_BOX)?;
            let inst = if let Some(path) = r.take_str("dataset") {
                let rule = parse_rule(&r.take_str("rule").unwrap_or_else(|| "identity".into()))?;
                let max_rows = r.take(&["max_rows"], 5000usize)?;
                NpInstance::load_dataset(Path::new(&path), rule, tau, Some(max_rows), seed)?
            } else {
                let n0 = r.take(&["n0", "N0"], 500usize)?;
                let n1 = r.take(&["n1", "N1"], 500usize)?;
                let d = r.take(&["d"], 50usize)?;
                let separation = r.take(&["separation"], 2.0)?;
                NpInstance::synth_generate(n0, n1, d, separation, tau, seed)?
            };
            r.finish()?;
            Instance::Np(inst.with_box(r_box)?)
        }
    };
    Ok(inst)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Digest {
    pub family: String,
    pub n: usize,
    pub p: usize,
    pub eps0: f64,
    pub moduli: crate::problem::Moduli,
    pub digest: String,
}

fn digest_of(inst: &Instance) -> Result<Digest> {
    Ok(Digest {
        family: inst.family().into(),
        n: inst.dim(),
        p: inst.num_constraints(),
        eps0: inst.bounds()?.eps0,
        moduli: inst.moduli(),
        digest: inst.digest()?,
    })
}

fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    ensure_fresh(&a.out, a.force)?;
    let inst = build_instance(&a.family, a.seed)?;
    write_text(&a.out, &inst.to_json()?)?;
    println!("{}", serde_json::to_string(&digest_of(&inst)?)?);
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinalMetrics {
    /// Values at the last iterate `x^{T+1}` with `lambda^{T+1}`.
    pub f: f64,
    pub max_violation: f64,
    pub complementarity: f64,
    pub r_alpha: f64,
    pub lam_norm: f64,
    /// Smallest `eps` for which the pair is an eps-KKT point.
    pub kkt_eps: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceRef {
    pub path: Option<PathBuf>,
    #[serde(flatten)]
    pub digest: Digest,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummaryFile {
    pub config: serde_json::Value,
    pub instance: InstanceRef,
    pub solver: String,
    pub theory: bool,
    pub alpha: f64,
    pub sigmas: Vec<f64>,
    pub rows: usize,
    pub inner_failures: usize,
    pub cpu_s: f64,
    pub final_metrics: FinalMetrics,
    pub fitted_exponents: BTreeMap<String, Option<f64>>,
    pub constant_inputs: ConstantInputs,
    pub constants: Option<ConstantsBundle>,
    pub x_final: Vec<f64>,
}

fn final_metrics(inst: &Instance, trace: &RunTrace) -> Result<FinalMetrics> {
    let x = trace.x_final();
    let lam = trace.lambda_final();
    let g = inst.constraints(&x);
    let r = kkt_residual(inst, &x, &lam, trace.alpha)?.norm();
    let comp = -lam.dot(&g);
    let max_violation = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_lam = lam.iter().copied().fold(0.0, f64::min);
    Ok(FinalMetrics {
        f: inst.objective(&x),
        max_violation,
        complementarity: comp,
        r_alpha: r,
        lam_norm: lam.norm(),
        kkt_eps: r.max(comp).max(max_violation).max(-min_lam),
    })
}

fn constant_inputs(inst: &Instance, pad: f64) -> Result<ConstantInputs> {
    ConstantInputs::new(&inst.bounds()?, &inst.moduli(), pad)
}

fn start_vector(inst: &Instance, start: Start) -> Result<Vector> {
    Ok(match start {
        Start::Xhat => inst.bounds()?.xhat(),
        Start::Zero => Vector::zeros(inst.dim()),
    })
}

fn inner_config(s: &SolverArgs) -> ApgConfig {
    ApgConfig {
        step_tol: s.inner_tol,
        max_iter: s.inner_max_iter,
        ..ApgConfig::default()
    }
}

/// Run one solver; returns the trace and, in theory mode, the constants used.
pub fn run_solver(
    inst: &Instance,
    solver: Solver,
    s: &SolverArgs,
    seed: u64,
) -> Result<(RunTrace, Option<ConstantsBundle>)> {
    let x1 = start_vector(inst, s.start)?;
    let inner = inner_config(s);
    let record_time = !s.no_timing;
    match solver {
        Solver::Qpalm => {
            let mut cfg = QpalmConfig::practical(s.t);
            cfg.c_alpha = s.c_alpha;
            cfg.pad = s.pad;
            cfg.inner = inner;
            cfg.seed = seed;
            cfg.record_time = record_time;
            cfg.budget_s = s.budget_s;
            let stride = s.moreau_every.unwrap_or(match s.mode {
                Mode::Theory => 10,
                Mode::Practical => 0,
            });
            cfg.record_moreau = stride > 0;
            cfg.moreau_every = stride.max(1);
            let bundle = match s.mode {
                Mode::Theory => {
                    cfg.mode = ScheduleMode::Theory;
                    Some(ConstantsBundle::compute(
                        &inst.bounds()?,
                        &inst.moduli(),
                        s.pad,
                    )?)
                }
                Mode::Practical => None,
            };
            let trace = qpalm::run(inst, &cfg, Some(x1), bundle.as_ref())?;
            Ok((trace, bundle))
        }
        _ if s.mode == Mode::Theory => Err(Error::Input(
            "the theory schedule applies to qpalm only".into(),
        )),
        Solver::Palm => {
            let mut cfg = PalmConfig::new(s.t, s.c_alpha);
            cfg.inner = inner;
            cfg.budget_s = s.budget_s;
            cfg.record_time = record_time;
            Ok((palm_run(inst, &cfg, Some(x1))?, None))
        }
        Solver::Alm => {
            let cfg = AlmConfig {
                sigma0: s.alm_sigma0,
                rho_pen: s.alm_rho,
                inner,
                outer_iters: s.alm_outer,
                kkt_tol: s.kkt_tol,
                budget_s: s.budget_s,
                record_time,
                ..AlmConfig::default()
            };
            Ok((alm_run(inst, &cfg, Some(x1))?, None))
        }
    }
}

/// Write `trace.csv`, `lambda.csv`, `curves.csv` and `summary.json` into `dir`.
#[allow(clippy::too_many_arguments)]
fn write_run(
    dir: &Path,
    inst: &Instance,
    inst_path: Option<&Path>,
    trace: &RunTrace,
    bundle: Option<ConstantsBundle>,
    inputs: ConstantInputs,
    theory: bool,
    config: serde_json::Value,
) -> Result<RunSummaryFile> {
    create_dir(dir)?;
    write_text(&dir.join("trace.csv"), &trace.to_csv())?;
    write_text(&dir.join("lambda.csv"), &trace.lambda_csv())?;
    let curves = averages(&trace.rows)?;
    write_text(&dir.join("curves.csv"), &curves_csv(&curves))?;
    let fitted_exponents = curve_fits(&curves)
        .into_iter()
        .map(|f| (f.metric, f.fit.map(|r| r.exponent)))
        .collect();
    let summary = RunSummaryFile {
        config,
        instance: InstanceRef {
            path: inst_path.map(Path::to_path_buf),
            digest: digest_of(inst)?,
        },
        solver: trace.solver.clone(),
        theory,
        alpha: trace.alpha,
        sigmas: trace.sigmas.clone(),
        rows: trace.rows.len(),
        inner_failures: trace.inner_failures,
        cpu_s: trace.final_row().map_or(0.0, |r| r.cpu_s),
        final_metrics: final_metrics(inst, trace)?,
        fitted_exponents,
        constant_inputs: inputs,
        constants: bundle,
        x_final: trace.x_final.clone(),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

fn cmd_solve(a: &SolveArgs) -> Result<()> {
    ensure_fresh(&a.out.join("summary.json"), a.force)?;
    let inst = Instance::load(&a.instance)?;
    let inputs = constant_inputs(&inst, a.solver_args.pad)?;
    let (trace, bundle) = run_solver(&inst, a.solver, &a.solver_args, a.seed)?;
    let theory = bundle.is_some();
    let config = serde_json::json!({ "command": "solve", "args": a });
    let s = write_run(
        &a.out,
        &inst,
        Some(&a.instance),
        &trace,
        bundle,
        inputs,
        theory,
        config,
    )?;
    println!(
        "{}",
        serde_json::json!({
            "solver": s.solver,
            "rows": s.rows,
            "final_metrics": s.final_metrics,
            "inner_failures": s.inner_failures,
            "out": a.out,
        })
    );
    Ok(())
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::Input(format!("bad seed list '{s}'"));
    if let Some((lo, hi)) = s.split_once("..") {
        let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: u64 = hi.trim().parse().map_err(|_| bad())?;
        if hi < lo {
            return Err(bad());
        }
        return Ok((lo..=hi).collect());
    }
    s.split(',')
        .map(|t| t.trim().parse().map_err(|_| bad()))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairResult {
    pub instance: String,
    pub solver: String,
    pub error: Option<String>,
    pub rows: usize,
    pub cpu_s: f64,
    pub f_final: Option<f64>,
    pub max_violation_final: Option<f64>,
    pub success_time: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchFile {
    pub config: serde_json::Value,
    pub instances: BTreeMap<String, Digest>,
    pub pairs: Vec<PairResult>,
    /// Median success time per solver; `null` when more than half never succeeded.
    pub median_success_s: BTreeMap<String, Option<f64>>,
    pub success_rule: String,
}

fn cmd_compare(a: &CompareArgs) -> Result<()> {
    if a.solvers.is_empty() {
        return Err(Error::Input(
            "--solvers must name at least one solver".into(),
        ));
    }
    ensure_fresh(&a.out.join("batch.json"), a.force)?;
    let mut instances: Vec<(String, Option<PathBuf>, Instance)> = Vec::new();
    for path in &a.instances {
        let id = path.file_stem().map_or_else(
            || path.display().to_string(),
            |s| s.to_string_lossy().into_owned(),
        );
        instances.push((id, Some(path.clone()), Instance::load(path)?));
    }
    if let Some(seeds) = &a.seeds {
        for seed in parse_seeds(seeds)? {
            instances.push((
                format!("seed{seed}"),
                None,
                build_instance(&a.family, seed)?,
            ));
        }
    }
    if instances.is_empty() {
        return Err(Error::Input(
            "give --instances or --family with --seeds".into(),
        ));
    }
    create_dir(&a.out)?;
    let config = serde_json::json!({ "command": "compare", "args": a });
    let mut pairs = Vec::new();
    let mut summaries = Vec::new();
    let mut digests = BTreeMap::new();
    let mut target_inputs: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for (id, path, inst) in &instances {
        digests.insert(id.clone(), digest_of(inst)?);
        let inputs = constant_inputs(inst, a.solver_args.pad)?;
        let mut runs: Vec<(Solver, Result<RunTrace>)> = Vec::new();
        for &solver in &a.solvers {
            let res = run_solver(inst, solver, &a.solver_args, 0).and_then(|(trace, bundle)| {
                let dir = a.out.join("runs").join(format!("{id}_{}", solver.name()));
                write_run(
                    &dir,
                    inst,
                    path.as_deref(),
                    &trace,
                    bundle.clone(),
                    inputs.clone(),
                    bundle.is_some(),
                    config.clone(),
                )?;
                Ok(trace)
            });
            runs.push((solver, res));
        }
        let f_start = inst.objective(&start_vector(inst, a.solver_args.start)?);
        let series: Vec<Vec<(f64, f64)>> = runs
            .iter()
            .map(|(_, r)| match r {
                Ok(t) => match a.feasible_tol {
                    Some(tol) => timed_feasible_objective(&t.rows, tol),
                    None => timed_objective(&t.rows),
                },
                Err(_) => Vec::new(),
            })
            .collect();
        let times = success_times(f_start, &series);
        for (((solver, res), time), s) in runs.iter().zip(&times).zip(&series) {
            summaries.push(RunSummary {
                instance: id.clone(),
                solver: solver.name().into(),
                success_time: *time,
            });
            if instances.len() == 1 {
                target_inputs.push((solver.name().into(), s.clone()));
            }
            pairs.push(match res {
                Ok(t) => {
                    let fm = final_metrics(inst, t)?;
                    PairResult {
                        instance: id.clone(),
                        solver: solver.name().into(),
                        error: None,
                        rows: t.rows.len(),
                        cpu_s: t.final_row().map_or(0.0, |r| r.cpu_s),
                        f_final: Some(fm.f),
                        max_violation_final: Some(fm.max_violation),
                        success_time: *time,
                    }
                }
                Err(e) => PairResult {
                    instance: id.clone(),
                    solver: solver.name().into(),
                    error: Some(e.to_string()),
                    rows: 0,
                    cpu_s: 0.0,
                    f_final: None,
                    max_violation_final: None,
                    success_time: None,
                },
            });
        }
    }
    write_text(&a.out.join("summaries.csv"), &summaries_csv(&summaries))?;
    let grid = profile_grid(&summaries);
    write_text(
        &a.out.join("profile.csv"),
        &profile_csv(&data_profile(&summaries, &grid)),
    )?;
    if !target_inputs.is_empty() {
        let f_ref = target_inputs
            .iter()
            .flat_map(|(_, s)| s.iter().map(|p| p.1))
            .fold(f64::INFINITY, f64::min);
        let thetas = theta_grid();
        let curves = target_inputs
            .iter()
            .filter(|(_, s)| !s.is_empty())
            .map(|(name, s)| Ok((name.clone(), time_to_target(s, f_ref, &thetas)?)))
            .collect::<Result<Vec<_>>>();
        match curves {
            Ok(c) => write_text(&a.out.join("targets.csv"), &targets_csv(&c))?,
            Err(e) => eprintln!("warning: time-to-target skipped: {e}"),
        }
    }
    let median_success_s = a
        .solvers
        .iter()
        .map(|s| {
            let times: Vec<Option<f64>> = summaries
                .iter()
                .filter(|r| r.solver == s.name())
                .map(|r| r.success_time)
                .collect();
            (s.name().to_string(), median_time(&times))
        })
        .collect();
    let batch = BatchFile {
        config,
        instances: digests,
        pairs,
        median_success_s,
        success_rule: match a.feasible_tol {
            Some(tol) => format!("80% of best decrease, points with max g <= {tol}"),
            None => "80% of best objective decrease".into(),
        },
    };
    write_json(&a.out.join("batch.json"), &batch)?;
    println!("{}", serde_json::to_string(&batch.median_success_s)?);
    Ok(())
}

/// Rebuild a trace from the files `write_run` produced.
pub fn load_run(dir: &Path) -> Result<(RunSummaryFile, RunTrace)> {
    let summary: RunSummaryFile = read_json(&dir.join("summary.json"))?;
    let read = |name: &str| {
        let p = dir.join(name);
        fs::read_to_string(&p).map_err(|e| Error::io(format!("reading {}", p.display()), e))
    };
    let rows = parse_csv(&read("trace.csv")?)?;
    let lambdas = parse_lambda_csv(&read("lambda.csv")?)?;
    if lambdas.len() != rows.len() + 1 || summary.sigmas.len() != rows.len() {
        return Err(Error::Input(format!(
            "{}: {} trace rows, {} multipliers, {} penalties",
            dir.display(),
            rows.len(),
            lambdas.len(),
            summary.sigmas.len()
        )));
    }
    let trace = RunTrace {
        solver: summary.solver.clone(),
        rows,
        lambdas,
        sigmas: summary.sigmas.clone(),
        alpha: summary.alpha,
        x_final: summary.x_final.clone(),
        inner_failures: summary.inner_failures,
    };
    Ok((summary, trace))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub dir: PathBuf,
    pub instance_digest: String,
    pub report: ValidationReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AcceptanceFile {
    pub config: serde_json::Value,
    pub runs: Vec<RunReport>,
    pub passed: bool,
}

pub fn validate_dir(dir: &Path) -> Result<RunReport> {
    let (summary, trace) = load_run(dir)?;
    let base = BaseConstants::compute(summary.constant_inputs.clone())?;
    let bundle = summary
        .constants
        .clone()
        .or_else(|| ConstantsBundle::from_base(base.clone()).ok());
    let report = validate_trace(&trace, &base, bundle.as_ref(), summary.theory)?;
    Ok(RunReport {
        dir: dir.to_path_buf(),
        instance_digest: summary.instance.digest.digest,
        report,
    })
}

fn cmd_validate(a: &ValidateArgs) -> Result<()> {
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| a.run.join("acceptance.json"));
    ensure_fresh(&out, a.force)?;
    let mut dirs = Vec::new();
    if a.run.join("summary.json").exists() {
        dirs.push(a.run.clone());
    } else {
        let runs = a.run.join("runs");
        let listing =
            fs::read_dir(&runs).map_err(|e| Error::io(format!("listing {}", runs.display()), e))?;
        for entry in listing {
            let entry = entry.map_err(|e| Error::io(format!("listing {}", runs.display()), e))?;
            if entry.path().join("summary.json").exists() {
                dirs.push(entry.path());
            }
        }
        dirs.sort();
    }
    if dirs.is_empty() {
        return Err(Error::Input(format!(
            "no runs found under {}",
            a.run.display()
        )));
    }
    let runs = dirs
        .iter()
        .map(|d| validate_dir(d))
        .collect::<Result<Vec<_>>>()?;
    let passed = runs.iter().all(|r| r.report.passed);
    let file = AcceptanceFile {
        config: serde_json::json!({ "command": "validate", "args": a }),
        runs,
        passed,
    };
    write_json(&out, &file)?;
    for r in &file.runs {
        let failed: Vec<&str> = r
            .report
            .checks
            .iter()
            .filter(|c| c.required && !c.passed)
            .map(|c| c.name.as_str())
            .collect();
        println!(
            "{} {} {}",
            if r.report.passed { "PASS" } else { "FAIL" },
            r.dir.display(),
            failed.join(",")
        );
    }
    Ok(())
}
