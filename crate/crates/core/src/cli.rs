//! Command-line interface: `fit`, `effects`, `lrtest`, `influence` and
//! `simulate`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::dataset::{load_csv, LoadOptions, Mode, ObservationTable};
use crate::design::build_design;
use crate::effects::{severity_effects, EffectsReport};
use crate::error::{Error, Result};
use crate::fit::{fit, FitOptions};
use crate::influence::{search_influence, Grid};
use crate::lrtest::{mc_null_distribution, McOptions};
use crate::manifest::RunManifest;
use crate::mixed::{DrawMatrix, DEFAULT_SKIP};
use crate::mle::{FitResult, OptimSettings};
use crate::nb::marginal_effects;
use crate::report;
use crate::spec::{ModelSpec, CONSTANT};
use crate::synth::{simulate, DgpConfig};

/// Exit code for a run whose estimation did not converge. Outputs are still
/// written, marked `converged = false`.
pub const EXIT_NOT_CONVERGED: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "crashmle",
    version,
    about = "Maximum-likelihood accident severity and frequency models"
)]
pub struct Cli {
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the model described by a spec file.
    Fit(FitArgs),
    /// Elasticities (severity fits) or marginal effects (frequency fits).
    Effects(EffectsArgs),
    /// Likelihood-ratio test of pooled versus split estimation.
    Lrtest(LrArgs),
    /// Grid search for a distance of influence.
    Influence(InfluenceArgs),
    /// Generate a synthetic data set from a JSON data-generating config.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args, Clone)]
pub struct ModelArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub spec: PathBuf,
    /// Simulation draws per observation (required for mixed families).
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_SKIP)]
    pub halton_skip: usize,
    /// Seeded random shift of the Halton sequences.
    #[arg(long)]
    pub shift: bool,
    /// JSON optimizer settings (max_iterations, gradient_tolerance, ...).
    #[arg(long)]
    pub settings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EffectsArgs {
    /// fit.json written by `crashmle fit`.
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub continuous: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub indicator: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LrArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// 0/1 column splitting the data into subsamples A (1) and B (0).
    #[arg(long)]
    pub split: String,
    /// Monte-Carlo replicates for the simulated null distribution.
    #[arg(long)]
    pub mc: Option<usize>,
    #[arg(long, default_value_t = 50)]
    pub bins: usize,
    /// Report (k+1)/(R+1) instead of k/R.
    #[arg(long)]
    pub bias_corrected: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InfluenceArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Distance column, also the capped variable in the spec.
    #[arg(long)]
    pub distance: String,
    #[arg(long, default_value_t = 0.1)]
    pub dmin: f64,
    #[arg(long, default_value_t = 2.0)]
    pub dmax: f64,
    #[arg(long, default_value_t = 0.05)]
    pub step: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub dgp: PathBuf,
    /// Output CSV; a manifest is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

/// Load the columns a spec needs (plus `extra`) from a CSV.
pub fn load_for_spec(path: &Path, spec: &ModelSpec, extra: &[&str]) -> Result<ObservationTable> {
    let mut columns: Vec<String> = spec
        .variables()
        .into_iter()
        .filter(|v| v != CONSTANT)
        .collect();
    for e in extra {
        if !columns.iter().any(|c| c == e) {
            columns.push(e.to_string());
        }
    }
    let mut opts = LoadOptions::new(spec.mode(), &spec.outcome_column).columns(columns);
    if spec.mode() == Mode::Severity {
        opts = opts.labels(spec.outcomes.clone());
    }
    let table = load_csv(path, &opts)?;
    if table.dropped_rows() > 0 {
        log::warn!(
            "{} row(s) with missing values dropped from {}",
            table.dropped_rows(),
            path.display()
        );
    }
    Ok(table)
}

fn fit_options(m: &ModelArgs, spec: &ModelSpec) -> Result<FitOptions> {
    let settings = match &m.settings {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| Error::Io {
                path: p.clone(),
                source,
            })?;
            let s: OptimSettings = serde_json::from_str(&text)?;
            s.validate()?;
            s
        }
        None => OptimSettings::default(),
    };
    let draws = match (spec.family.is_mixed(), m.draws) {
        (true, None) => {
            return Err(Error::Config(format!(
                "family {} needs --draws",
                spec.family.as_str()
            )))
        }
        (_, d) => d.unwrap_or(crate::mixed::DEFAULT_DRAWS),
    };
    Ok(FitOptions {
        settings,
        draws,
        seed: m.seed,
        halton_skip: m.halton_skip,
        shift: m.shift,
        ..FitOptions::default()
    })
}

fn model_manifest(command: &str, m: &ModelArgs, spec: &ModelSpec) -> Result<RunManifest> {
    let mut man = RunManifest::new(command, std::env::args().skip(1).collect());
    man.input("data", &m.data)?;
    man.input("spec", &m.spec)?;
    if let Some(s) = &m.settings {
        man.input("settings", s)?;
    }
    man.seed = Some(m.seed);
    if spec.family.is_mixed() {
        man.draws = m.draws;
    }
    Ok(man)
}

fn cmd_fit(a: &FitArgs) -> Result<i32> {
    let spec = ModelSpec::load(&a.model.spec)?;
    let table = load_for_spec(&a.model.data, &spec, &[])?;
    let opts = fit_options(&a.model, &spec)?;
    let mut man = model_manifest("fit", &a.model, &spec)?;
    let result = fit(&table, &spec, &opts)?;
    ensure_dir(&a.out)?;
    let txt = a.out.join("fit.txt");
    let json = a.out.join("fit.json");
    write_file(&txt, report::fit_table(&result))?;
    write_file(&json, result.to_json()?)?;
    man.output("table", &txt)?;
    man.output("fit", &json)?;
    man.finish(&a.out.join("manifest.json"))?;
    print!("{}", report::fit_table(&result));
    Ok(if result.converged { 0 } else { EXIT_NOT_CONVERGED })
}

/// Effects of a saved fit on `table`: elasticities for severity models,
/// marginal effects for count models.
pub fn effects_for_fit(
    fit: &FitResult,
    table: &ObservationTable,
    continuous: &[String],
    indicators: &[String],
) -> Result<EffectsReport> {
    let spec = fit
        .spec
        .as_ref()
        .ok_or_else(|| Error::Config("fit file carries no model spec".into()))?;
    let design = build_design(table, spec)?;
    let draws = match fit.draws {
        Some(s) if design.n_random() > 0 => Some(DrawMatrix::new(&design, s)?),
        _ => None,
    };
    match spec.mode() {
        Mode::Severity => {
            severity_effects(&design, &fit.theta_raw, draws.as_ref(), continuous, indicators)
        }
        Mode::Frequency => {
            let mut vars: Vec<String> = continuous.iter().chain(indicators).cloned().collect();
            if vars.is_empty() {
                vars = design
                    .variables()
                    .iter()
                    .filter(|v| *v != CONSTANT)
                    .cloned()
                    .collect();
            }
            marginal_effects(&fit.theta_raw, &design, draws.as_ref(), &vars)
        }
    }
}

fn cmd_effects(a: &EffectsArgs) -> Result<i32> {
    let text = std::fs::read_to_string(&a.fit).map_err(|source| Error::Io {
        path: a.fit.clone(),
        source,
    })?;
    let fit = FitResult::from_json(&text)?;
    let spec = fit
        .spec
        .clone()
        .ok_or_else(|| Error::Config("fit file carries no model spec".into()))?;
    let table = load_for_spec(&a.data, &spec, &[])?;
    let mut man = RunManifest::new("effects", std::env::args().skip(1).collect());
    man.input("fit", &a.fit)?;
    man.input("data", &a.data)?;
    let rep = effects_for_fit(&fit, &table, &a.continuous, &a.indicator)?;
    ensure_dir(&a.out)?;
    let csv_path = a.out.join("effects.csv");
    let json_path = a.out.join("effects.json");
    let txt_path = a.out.join("effects.txt");
    let mut buf = Vec::new();
    rep.write_csv(&mut buf)?;
    write_file(&csv_path, buf)?;
    write_file(&json_path, serde_json::to_string_pretty(&rep)?)?;
    write_file(&txt_path, report::effects_table(&rep))?;
    for (role, p) in [("csv", &csv_path), ("json", &json_path), ("table", &txt_path)] {
        man.output(role, p)?;
    }
    man.finish(&a.out.join("manifest.json"))?;
    print!("{}", report::effects_table(&rep));
    Ok(if fit.converged { 0 } else { EXIT_NOT_CONVERGED })
}

fn cmd_lrtest(a: &LrArgs) -> Result<i32> {
    let spec = ModelSpec::load(&a.model.spec)?;
    let table = load_for_spec(&a.model.data, &spec, &[&a.split])?;
    let opts = fit_options(&a.model, &spec)?;
    let mut man = model_manifest("lrtest", &a.model, &spec)?;
    let mc = McOptions {
        replicates: a.mc.unwrap_or(0),
        seed: a.model.seed,
        bins: a.bins,
        bias_corrected: a.bias_corrected,
    };
    let result = mc_null_distribution(&table, &spec, &a.split, &opts, &mc)?;
    ensure_dir(&a.out)?;
    let json = a.out.join("lrtest.json");
    let txt = a.out.join("lrtest.txt");
    write_file(&json, result.to_json()?)?;
    write_file(&txt, report::lrtest_text(&result))?;
    man.output("json", &json)?;
    man.output("table", &txt)?;
    if let Some(h) = &result.null_histogram {
        let hist = a.out.join("histogram.csv");
        let mut buf = Vec::new();
        h.write_csv(&mut buf)?;
        write_file(&hist, buf)?;
        man.output("histogram", &hist)?;
    }
    man.finish(&a.out.join("manifest.json"))?;
    print!("{}", report::lrtest_text(&result));
    Ok(if result.converged { 0 } else { EXIT_NOT_CONVERGED })
}

fn cmd_influence(a: &InfluenceArgs) -> Result<i32> {
    let spec = ModelSpec::load(&a.model.spec)?;
    let table = load_for_spec(&a.model.data, &spec, &[&a.distance])?;
    let opts = fit_options(&a.model, &spec)?;
    let mut man = model_manifest("influence", &a.model, &spec)?;
    let grid = Grid {
        d_min: a.dmin,
        d_max: a.dmax,
        step: a.step,
    };
    let profile = search_influence(&table, &spec, &a.distance, &grid, &opts)?;
    ensure_dir(&a.out)?;
    let csv_path = a.out.join("profile.csv");
    let json_path = a.out.join("profile.json");
    let mut buf = Vec::new();
    profile.write_csv(&mut buf)?;
    write_file(&csv_path, buf)?;
    write_file(&json_path, profile.to_json()?)?;
    man.output("profile_csv", &csv_path)?;
    man.output("profile", &json_path)?;
    man.finish(&a.out.join("manifest.json"))?;
    print!("{}", report::influence_text(&profile));
    let all = profile.converged.iter().all(|&c| c);
    Ok(if all { 0 } else { EXIT_NOT_CONVERGED })
}

fn cmd_simulate(a: &SimulateArgs) -> Result<i32> {
    let config = DgpConfig::load(&a.dgp)?;
    let mut man = RunManifest::new("simulate", std::env::args().skip(1).collect());
    man.input("dgp", &a.dgp)?;
    man.seed = Some(config.seed);
    let table = simulate(&config)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    table.save_csv(&a.out)?;
    man.output("data", &a.out)?;
    let mut mpath = a.out.clone().into_os_string();
    mpath.push(".manifest.json");
    man.finish(Path::new(&mpath))?;
    Ok(0)
}

/// Run a parsed command line and return the process exit code.
pub fn run(cli: &Cli) -> Result<i32> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        // A pool may already exist when run() is called twice in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Effects(a) => cmd_effects(a),
        Command::Lrtest(a) => cmd_lrtest(a),
        Command::Influence(a) => cmd_influence(a),
        Command::Simulate(a) => cmd_simulate(a),
    }
}

/// Entry point used by the binary.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
