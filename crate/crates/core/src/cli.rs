//! Command-line front end for the `structcov` binary.
//!
//! Exit codes: 0 ok, 2 non-convergence, 3 input error, 4 identifiability failure.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::covstruct::{CovariateSet, ParameterVector};
use crate::error::{Error, Result};
use crate::identify::{check_identifiability, IdentifiabilityReport};
use crate::init::{ive, pearson_type, qp_init, AddedBound};
use crate::io::{self, ComponentSpec, GridSpec, Mode, ModelConfig};
use crate::linalg::{Mask, Matrix};
use crate::mle::{confidence_intervals, fit_sce_errors, ConfidenceInterval, Dataset, FitOptions};
use crate::select::{average_effects, select_best, AverageEffects, SelectionReport};
use crate::shrink::{lambda_bootstrap, nearest_pd_correlation, shrinkage_closed_form, wsce, ShrinkageEstimate};
use crate::sim::{
    run_benchmark, simulate, Estimator, MissingPattern, ScenarioConfig, ScenarioKind, ShrinkageChoice,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_NOT_IDENTIFIABLE: i32 = 4;
const EXIT_FAILURE: i32 = 1;

#[derive(Parser, Debug)]
#[command(name = "structcov", version, about = "Structured correlation estimation from pairwise and spatial covariates")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Base seed for every random stream.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, env = "STRUCTCOV_THREADS", default_value_t = 0)]
    pub threads: usize,
    /// Output file or directory, depending on the command.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// T × d data CSV; NA or empty cells are missing.
    #[arg(long)]
    pub data: PathBuf,
    /// Model configuration JSON.
    #[arg(long)]
    pub model: PathBuf,
    /// Optional T × d 0/1 observed mask.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// T × d means (known mode)
    #[arg(long)]
    pub mu: Option<PathBuf>,
    /// T × d scales (known mode)
    #[arg(long)]
    pub sigma: Option<PathBuf>,
    /// Overrides the mode in the model file.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// β grid `a:b:n`; overrides the model file.
    #[arg(long)]
    pub beta_grid: Option<String>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum ModeArg {
    Known,
    Unknown,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum SettingArg {
    Fss,
    Structured,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum MissingArg {
    None,
    Monotone,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum ShrinkageArg {
    Auto,
    ClosedForm,
    Bootstrap,
}

#[derive(Args, Debug, Clone)]
pub struct ScenarioArgs {
    #[arg(long, value_enum, default_value = "fss")]
    pub setting: SettingArg,
    #[arg(long, default_value_t = 50)]
    pub d: usize,
    #[arg(long, default_value_t = 11)]
    pub t: usize,
    /// Misspecification: 0 keeps the model, 1 ignores the covariates.
    #[arg(long, default_value_t = 0.0)]
    pub xi: f64,
    #[arg(long, value_enum, default_value = "none")]
    pub missing: MissingArg,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit the structured estimator and its shrinkage variant.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        /// Bootstrap replicates for λ when the closed form does not apply.
        #[arg(long)]
        bootstrap_b: Option<usize>,
        /// Skip shrinkage; the report has no λ.
        #[arg(long)]
        no_wsce: bool,
        /// Also write R̂ (SCE) as CSV.
        #[arg(long)]
        r_csv: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Draw one dataset and write fit-ready inputs to a directory.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 0)]
        replicate: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Score the estimator roster over simulated replicates.
    Benchmark {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 10)]
        reps: usize,
        #[arg(long, value_enum, default_value = "known")]
        mode: ModeArg,
        /// Comma-separated subset of pearson,ledoit_wolf,ive,sce,wsce.
        #[arg(long)]
        estimators: Option<String>,
        #[arg(long, value_enum, default_value = "auto")]
        shrinkage: ShrinkageArg,
        #[arg(long, default_value_t = 100)]
        bootstrap_b: usize,
        /// Scenario JSON; replaces the scenario flags.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Rank every admissible sub-model by BIC.
    Select {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Check identifiability of a model over a β grid.
    CheckId {
        #[arg(long)]
        model: PathBuf,
        /// Number of variables when the model file does not state it.
        #[arg(long)]
        d: Option<usize>,
        /// β grid `a:b:n`.
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        tol: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
}

/// Parses arguments and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let threads = match &cli.command {
        Command::Fit { common, .. }
        | Command::Simulate { common, .. }
        | Command::Benchmark { common, .. }
        | Command::Select { common, .. }
        | Command::CheckId { common, .. } => common.threads,
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start {threads} worker threads: {e}");
            return EXIT_FAILURE;
        }
    };
    match pool.install(|| dispatch(cli.command)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Identifiability(_) => EXIT_NOT_IDENTIFIABLE,
        Error::Io { .. }
        | Error::Parse { .. }
        | Error::InvalidInput(_)
        | Error::Dimension(_)
        | Error::InvalidParameters(_) => EXIT_INPUT,
        _ => EXIT_FAILURE,
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Fit {
            data,
            bootstrap_b,
            no_wsce,
            r_csv,
            common,
        } => cmd_fit(&data, bootstrap_b, no_wsce, r_csv.as_deref(), &common),
        Command::Simulate {
            scenario,
            replicate,
            common,
        } => cmd_simulate(&scenario, replicate, &common),
        Command::Benchmark {
            scenario,
            reps,
            mode,
            estimators,
            shrinkage,
            bootstrap_b,
            config,
            common,
        } => cmd_benchmark(
            &scenario,
            reps,
            mode,
            estimators.as_deref(),
            shrinkage,
            bootstrap_b,
            config.as_deref(),
            &common,
        ),
        Command::Select { data, common } => cmd_select(&data, &common),
        Command::CheckId {
            model,
            d,
            grid,
            tol,
            common,
        } => cmd_check_id(&model, d, grid.as_deref(), tol, &common),
    }
}

fn emit<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    match out {
        Some(p) => io::write_json(p, value),
        None => {
            let s = serde_json::to_string_pretty(value).expect("serializable");
            let mut stdout = std::io::stdout().lock();
            let _ = writeln!(stdout, "{s}");
            Ok(())
        }
    }
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

struct Loaded {
    config: ModelConfig,
    set: CovariateSet,
    dataset: Dataset,
    mode: Mode,
    grid: Vec<f64>,
}

fn load(args: &DataArgs) -> Result<Loaded> {
    let config = ModelConfig::load(&args.model)?;
    let table = io::read_table(&args.data)?;
    let (t, d) = table.values.shape();
    let mut mask = table.observed;
    if let Some(p) = &args.mask {
        let extra = io::read_mask(p)?;
        if extra.shape() != (t, d) {
            return Err(Error::Dimension(format!(
                "mask {} is {}x{}, data are {t}x{d}",
                p.display(),
                extra.nrows(),
                extra.ncols()
            )));
        }
        mask = Mask::from_fn(t, d, |i, j| mask[(i, j)] && extra[(i, j)]);
    }
    let mode = match args.mode {
        Some(ModeArg::Known) => Mode::Known,
        Some(ModeArg::Unknown) => Mode::Unknown,
        None => config.mode,
    };
    let dataset = match mode {
        Mode::Known => {
            let need = |p: &Option<PathBuf>, flag: &str| -> Result<Matrix> {
                let p = p.as_ref().ok_or_else(|| {
                    Error::InvalidInput(format!("known mode needs --{flag} (a T x d CSV)"))
                })?;
                let m = io::read_matrix(p)?;
                if m.shape() != (t, d) {
                    return Err(Error::Dimension(format!("{} must be {t}x{d}", p.display())));
                }
                Ok(m)
            };
            let mu = need(&args.mu, "mu")?;
            let sigma = need(&args.sigma, "sigma")?;
            Dataset::known(table.values, mask, mu, sigma)?
        }
        Mode::Unknown => Dataset::unknown(table.values, mask)?,
    };
    let set = config.build_set(d)?;
    let grid = match &args.beta_grid {
        Some(g) => io::parse_grid(g)?,
        None => config.beta_grid(),
    };
    Ok(Loaded {
        config,
        set,
        dataset,
        mode,
        grid,
    })
}

#[derive(Serialize)]
struct FitReport {
    mode: Mode,
    names: Vec<String>,
    theta: ParameterVector,
    theta0: ParameterVector,
    init_bounds_added: Vec<AddedBound>,
    converged: bool,
    iterations: usize,
    grad_norm: f64,
    n_times: usize,
    n_obs: usize,
    log_likelihood: f64,
    average_effects: AverageEffects,
    confidence_intervals: Option<Vec<ConfidenceInterval>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ci_error: Option<String>,
    fisher: Vec<Vec<f64>>,
    r_ive: Vec<Vec<f64>>,
    r_sce: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    shrinkage: Option<ShrinkageEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    r_wsce: Option<Vec<Vec<f64>>>,
}

fn cmd_fit(
    args: &DataArgs,
    bootstrap_b: Option<usize>,
    no_wsce: bool,
    r_csv: Option<&Path>,
    common: &Common,
) -> Result<i32> {
    let l = load(args)?;
    let errors = l.dataset.errors()?;
    let r_p = pearson_type(&errors)?;
    let init = qp_init(&r_p, &l.set, &l.grid)?;
    let r_ive = ive(&init.theta0, &l.set)?;
    let opts = FitOptions {
        max_iter: l.config.tolerances.max_iter,
        grad_tol: l.config.tolerances.grad_tol,
    };
    let fit = fit_sce_errors(&errors, &l.set, &init.theta0, &opts)?;
    let (cis, ci_error) = match confidence_intervals(&fit, 0.95) {
        Ok(c) => (Some(c), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let (lambda, shrinkage, r_wsce) = if no_wsce {
        (None, None, None)
    } else {
        let r_p_pd = nearest_pd_correlation(&r_p);
        let est = if l.mode == Mode::Known && errors.is_complete() {
            shrinkage_closed_form(&fit, &l.set, &errors, &r_p, &r_p_pd)?
        } else {
            let b = bootstrap_b.unwrap_or(l.config.bootstrap.b);
            let seed = common.seed.unwrap_or(l.config.bootstrap.seed);
            lambda_bootstrap(&init.theta0, &l.set, &errors, b, seed)?
        };
        let w = wsce(&fit.r, &r_p_pd, est.lambda)?;
        (Some(est.lambda), Some(est), Some(rows(&w)))
    };
    if let Some(p) = r_csv {
        io::write_matrix(p, &fit.r)?;
    }
    let report = FitReport {
        mode: l.mode,
        names: fit.names.clone(),
        theta: fit.theta.clone(),
        theta0: init.theta0.clone(),
        init_bounds_added: init.constraints_added.clone(),
        converged: fit.converged,
        iterations: fit.iterations,
        grad_norm: fit.grad_norm,
        n_times: fit.n_times,
        n_obs: fit.n_obs,
        log_likelihood: fit.log_likelihood(),
        average_effects: average_effects(&fit.theta, &l.set)?,
        confidence_intervals: cis,
        ci_error,
        fisher: rows(&fit.fisher),
        r_ive: rows(&r_ive),
        r_sce: rows(&fit.r),
        lambda,
        shrinkage,
        r_wsce,
    };
    emit(common.out.as_deref(), &report)?;
    if !fit.converged {
        eprintln!(
            "warning: optimizer stopped after {} iterations (gradient norm {:.3e})",
            fit.iterations, fit.grad_norm
        );
        return Ok(EXIT_NOT_CONVERGED);
    }
    Ok(EXIT_OK)
}

fn scenario_config(s: &ScenarioArgs, seed: u64) -> Result<ScenarioConfig> {
    let kind = match s.setting {
        SettingArg::Fss => ScenarioKind::Fss,
        SettingArg::Structured => ScenarioKind::Structured,
    };
    let mut cfg = ScenarioConfig::new(kind, s.d, seed);
    cfg.t = s.t;
    cfg.xi = s.xi;
    cfg.missing = match s.missing {
        MissingArg::None => MissingPattern::None,
        MissingArg::Monotone => MissingPattern::Monotone,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_simulate(s: &ScenarioArgs, replicate: u64, common: &Common) -> Result<i32> {
    let cfg = scenario_config(s, common.seed.unwrap_or(1))?;
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("sim_out"));
    std::fs::create_dir_all(&out).map_err(|e| Error::Io {
        path: out.display().to_string(),
        source: e,
    })?;
    let sim = simulate(&cfg, replicate)?;
    let (t, d) = sim.y.shape();
    io::write_table(&out.join("data.csv"), &sim.y, &sim.mask)?;
    io::write_mask(&out.join("mask.csv"), &sim.mask)?;
    io::write_matrix(&out.join("mu.csv"), &Matrix::zeros(t, d))?;
    io::write_matrix(&out.join("sigma.csv"), &Matrix::from_element(t, d, 1.0))?;
    io::write_matrix(&out.join("r_true.csv"), &sim.r_true)?;
    io::write_labels(&out.join("comcol.csv"), &sim.structure.comcol)?;
    io::write_labels(&out.join("region.csv"), &sim.structure.region)?;
    io::write_edges(&out.join("adjacency.csv"), &sim.structure.graph)?;
    let mut components = vec![
        ComponentSpec::Cluster {
            name: "comcol".into(),
            labels: "comcol.csv".into(),
        },
        ComponentSpec::Cluster {
            name: "region".into(),
            labels: "region.csv".into(),
        },
        ComponentSpec::Global { name: "global".into() },
        ComponentSpec::Spatial {
            name: "contig".into(),
            adjacency: "adjacency.csv".into(),
        },
    ];
    let model = |components: Vec<ComponentSpec>| ModelConfig {
        dim: Some(d),
        components,
        beta_grid: Some(GridSpec::Points(cfg.beta_grid.clone())),
        mode: Mode::Known,
        tolerances: Default::default(),
        bootstrap: Default::default(),
        base_dir: PathBuf::new(),
    };
    io::write_json(&out.join("model.json"), &model(components.clone()))?;
    for (a, b) in [("comcol", "region"), ("comcol", "contig"), ("region", "contig")] {
        components.push(ComponentSpec::Interaction {
            name: None,
            parents: [a.into(), b.into()],
        });
    }
    io::write_json(&out.join("roster.json"), &model(components))?;
    io::write_json(&out.join("scenario.json"), &cfg)?;
    eprintln!("wrote {t}x{d} dataset to {}", out.display());
    Ok(EXIT_OK)
}

fn parse_estimators(s: Option<&str>) -> Result<Vec<Estimator>> {
    let Some(s) = s else {
        return Ok(Estimator::ALL.to_vec());
    };
    s.split(',')
        .map(|tok| {
            let tok = tok.trim();
            Estimator::ALL
                .into_iter()
                .find(|e| e.name() == tok || (tok == "lw" && *e == Estimator::LedoitWolf))
                .ok_or_else(|| Error::InvalidInput(format!("unknown estimator '{tok}'")))
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn cmd_benchmark(
    s: &ScenarioArgs,
    reps: usize,
    mode: ModeArg,
    estimators: Option<&str>,
    shrinkage: ShrinkageArg,
    bootstrap_b: usize,
    config: Option<&Path>,
    common: &Common,
) -> Result<i32> {
    let cfg = match config {
        Some(p) => {
            let mut c: ScenarioConfig = io::read_json(p)?;
            if let Some(seed) = common.seed {
                c.seed = seed;
            }
            c.validate()?;
            c
        }
        None => {
            let mut c = scenario_config(s, common.seed.unwrap_or(1))?;
            c.known_musigma = matches!(mode, ModeArg::Known);
            c.shrinkage = match shrinkage {
                ShrinkageArg::Auto => ShrinkageChoice::Auto,
                ShrinkageArg::ClosedForm => ShrinkageChoice::ClosedForm,
                ShrinkageArg::Bootstrap => ShrinkageChoice::Bootstrap,
            };
            c.bootstrap_b = bootstrap_b;
            c
        }
    };
    let ests = parse_estimators(estimators)?;
    let report = run_benchmark(&cfg, &ests, reps)?;
    let mut summary = BTreeMap::new();
    for e in &ests {
        let m = report.mae(*e);
        if !m.is_empty() {
            summary.insert(e.name(), m.iter().sum::<f64>() / m.len() as f64);
        }
    }
    match &common.out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::Io {
                path: dir.display().to_string(),
                source: e,
            })?;
            io::write_json(&dir.join("report.json"), &report)?;
            let mut csv = String::from("replicate,estimator,mae,seconds\n");
            for (r, secs) in report.replicates.iter().zip(&report.seconds) {
                for (name, mae) in &r.mae {
                    let sec = secs.get(name).copied().unwrap_or(f64::NAN);
                    csv.push_str(&format!("{},{name},{},{sec}\n", r.replicate, io::format_f64(*mae)));
                }
            }
            let p = dir.join("replicates.csv");
            std::fs::write(&p, csv).map_err(|e| Error::Io {
                path: p.display().to_string(),
                source: e,
            })?;
        }
        None => emit(None, &report)?,
    }
    for (name, mean) in summary {
        eprintln!("{name:<12} mean MAE {mean:.5}");
    }
    Ok(EXIT_OK)
}

fn cmd_select(args: &DataArgs, common: &Common) -> Result<i32> {
    let l = load(args)?;
    let errors = l.dataset.errors()?;
    let opts = FitOptions {
        max_iter: l.config.tolerances.max_iter,
        grad_tol: l.config.tolerances.grad_tol,
    };
    let report: SelectionReport = select_best(&errors, &l.set, &l.grid, &opts)?;
    emit(common.out.as_deref(), &report)?;
    eprintln!("{} candidate models", report.candidates.len());
    for c in report.candidates.iter().take(10) {
        eprintln!("{:>10.3}  {}", c.centered_bic, c.components.join(" + "));
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct CheckIdOutput<'a> {
    components: Vec<String>,
    tol: f64,
    report: &'a IdentifiabilityReport,
}

fn cmd_check_id(
    model: &Path,
    d: Option<usize>,
    grid: Option<&str>,
    tol: Option<f64>,
    common: &Common,
) -> Result<i32> {
    let cfg = ModelConfig::load(model)?;
    let d = d.or(cfg.dim).ok_or_else(|| {
        Error::InvalidInput("number of variables unknown; pass --d or set \"dim\" in the model".into())
    })?;
    let set = cfg.build_set(d)?;
    let grid = match grid {
        Some(g) => io::parse_grid(g)?,
        None => cfg.beta_grid(),
    };
    let tol = tol.unwrap_or(cfg.tolerances.identify_tol);
    let report = check_identifiability(&set, &grid, tol)?;
    let out = CheckIdOutput {
        components: set.components().iter().map(|c| c.name().to_string()).collect(),
        tol,
        report: &report,
    };
    emit(common.out.as_deref(), &out)?;
    if report.identifiable {
        Ok(EXIT_OK)
    } else {
        eprintln!(
            "not identifiable: {} witness(es), largest LP value {:.3e}",
            report.witnesses.len(),
            report.max_value
        );
        Ok(EXIT_NOT_IDENTIFIABLE)
    }
}
