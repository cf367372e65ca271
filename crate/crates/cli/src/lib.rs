//! `ikk` subcommands. Each is a pure function of its input files and flags.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use ikk_core::capture::{load_recording, synthesize_calibration, CalibrationSession, SynthConfig};
use ikk_core::control::{stream, write_signal_csv};
use ikk_core::experiments::{
    fit_learning_curve, report, start_config, write_results, ControllerKind, Exp2Mode, ExperimentConfig, FitOptions, SimContext,
    SphereSchedule, TrialResult, XMin,
};
use ikk_core::identify::{identify_session, BasisFile, IdentifyConfig};
use ikk_core::{ArmModel, ControlConfig, InterpolationVolume, SignalMode};

#[derive(Debug, Parser)]
#[command(name = "ikk", version, about = "Null-space (implicit kinematic kernel) control signal from redundant-arm motion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Identify per-node signal bases from a calibration session.
    Calibrate(CalibrateArgs),
    /// Build the interpolation volume from a basis file.
    Build(BuildArgs),
    /// Stream a recording through the control pipeline.
    Run(RunArgs),
    /// Run simulated experiments.
    Simulate(SimulateArgs),
    /// Fit the learning curve to per-trial performance counts.
    Fit(FitArgs),
    /// Render result tables.
    Report(ReportArgs),
    /// Host live sessions over WebSocket.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Session manifest (JSON listing point labels and recording CSVs).
    #[arg(long, conflicts_with = "synthetic")]
    pub manifest: Option<PathBuf>,
    /// Generate a synthetic session on the default arm instead.
    #[arg(long)]
    pub synthetic: bool,
    /// Seed for --synthetic.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Identification config (JSON); flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Explained-variance ratio for one-component nodes (0–1).
    #[arg(long)]
    pub variance_threshold: Option<f64>,
    /// Neighbourhood radius around each cluster centroid, m.
    #[arg(long)]
    pub neighborhood_radius: Option<f64>,
    /// Steady-segment hand speed limit, m/s.
    #[arg(long)]
    pub v_lin_max: Option<f64>,
    /// Steady-segment hand angular speed limit, rad/s.
    #[arg(long)]
    pub v_ang_max: Option<f64>,
    /// Also write the (synthetic) session recordings to this directory.
    #[arg(long)]
    pub session_out: Option<PathBuf>,
    /// Output basis file.
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Basis file (`ikk-basis/1`).
    #[arg(long)]
    pub basis: PathBuf,
    /// Output volume file (`ikk-volume/1`).
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Volume or basis file.
    #[arg(long, alias = "basis")]
    pub volume: PathBuf,
    /// Recording CSV (t, q1..qn[, hand pose]) or JSON.
    #[arg(long)]
    pub input: PathBuf,
    /// Control config (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Low-pass time constant, s.
    #[arg(long)]
    pub time_constant: Option<f64>,
    /// Output slew limit, units/s.
    #[arg(long)]
    pub slew_rate: Option<f64>,
    /// Signal CSV; stdout when omitted.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExperimentArg {
    Exp1,
    Exp2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ControllerArg {
    Ikk,
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Single,
    Parallel,
    Both,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub experiment: ExperimentArg,
    /// Basis file.
    #[arg(long, conflicts_with = "volume")]
    pub basis: Option<PathBuf>,
    /// Volume file.
    #[arg(long)]
    pub volume: Option<PathBuf>,
    /// Experiment config (JSON); flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed(s), comma separated.
    #[arg(long, value_delimiter = ',')]
    pub seed: Vec<u64>,
    #[arg(long, value_enum, default_value_t = ControllerArg::Ikk)]
    pub controller: ControllerArg,
    /// Experiment 2 mode.
    #[arg(long, value_enum, default_value_t = ModeArg::Both)]
    pub mode: ModeArg,
    /// Results directory.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Performance counts for trials 1..T, comma separated.
    #[arg(long, value_delimiter = ',', required_unless_present = "input")]
    pub counts: Vec<f64>,
    /// File with one count per line (or comma separated).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Random restarts.
    #[arg(long, default_value_t = 200)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Curve floor: `observed` (minimum count) or a number.
    #[arg(long, default_value = "observed")]
    pub x_min: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
    Markdown,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// `summary.json` or a results directory containing one.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Externally measured time table (JSON), rendered as Markdown.
    #[arg(long)]
    pub times: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Markdown)]
    pub format: FormatArg,
    /// Output file; stdout when omitted.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Basis file.
    #[arg(long, conflicts_with = "volume")]
    pub basis: Option<PathBuf>,
    /// Volume file.
    #[arg(long)]
    pub volume: Option<PathBuf>,
    /// TCP port (0 picks a free one).
    #[arg(long, default_value_t = 8765)]
    pub port: u16,
    /// Bind address.
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Session config (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for trial results.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

/// Failure with its exit code: 2 for usage problems, 1 at runtime.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<ikk_core::Error> for CliError {
    fn from(e: ikk_core::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

type CliResult<T> = Result<T, CliError>;

fn existing(path: &Path, what: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} not found: {}", path.display())))
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> CliResult<T> {
    existing(path, what)?;
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid {what} {}: {e}", path.display())))
}

/// Load a basis or volume file, telling them apart by schema.
pub fn load_volume(path: &Path) -> CliResult<(ArmModel, InterpolationVolume)> {
    existing(path, "volume/basis file")?;
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let schema = serde_json::from_str::<serde_json::Value>(&text)
        .ok()
        .and_then(|v| v.get("schema").and_then(|s| s.as_str()).map(str::to_owned))
        .unwrap_or_default();
    let volume = if schema.starts_with("ikk-basis") {
        InterpolationVolume::from_basis_file(&BasisFile::from_json_str(&text)?)?
    } else {
        InterpolationVolume::from_json_str(&text)?
    };
    let model = volume.model.clone().unwrap_or_default();
    Ok((model, volume))
}

fn one_of(basis: &Option<PathBuf>, volume: &Option<PathBuf>) -> CliResult<PathBuf> {
    basis
        .clone()
        .or_else(|| volume.clone())
        .ok_or_else(|| CliError::Usage("one of --basis or --volume is required".into()))
}

fn write_out(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().write_all(text.as_bytes()).context("writing stdout")?,
    }
    Ok(())
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Calibrate(a) => calibrate(a),
        Command::Build(a) => build(a),
        Command::Run(a) => run_stream(a),
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Report(a) => report_cmd(a),
        Command::Serve(a) => serve(a),
    }
}

fn calibrate(a: CalibrateArgs) -> CliResult<()> {
    let mut cfg: IdentifyConfig = match &a.config {
        Some(p) => read_json(p, "identify config")?,
        None => IdentifyConfig::default(),
    };
    if let Some(v) = a.variance_threshold {
        if !(0.0..=1.0).contains(&v) {
            return Err(CliError::Usage(format!("--variance-threshold must be in [0, 1], got {v}")));
        }
        cfg.variance_threshold = v;
    }
    if let Some(v) = a.neighborhood_radius {
        cfg.neighborhood_radius = v;
    }
    if let Some(v) = a.v_lin_max {
        cfg.steady.v_lin_max = v;
    }
    if let Some(v) = a.v_ang_max {
        cfg.steady.v_ang_max = v;
    }
    let session = match (&a.manifest, a.synthetic) {
        (Some(m), _) => {
            existing(m, "manifest")?;
            CalibrationSession::load_manifest(m).with_context(|| format!("loading {}", m.display()))?
        }
        (None, true) => synthesize_calibration(&ArmModel::default(), a.seed, &SynthConfig::default())?,
        (None, false) => return Err(CliError::Usage("either --manifest or --synthetic is required".into())),
    };
    if let Some(dir) = &a.session_out {
        session.save(dir)?;
    }
    let nodes = identify_session(&session, &cfg)?;
    for n in &nodes {
        let ratio: Vec<String> = n.explained_variance_ratio.iter().take(2).map(|r| format!("{r:.4}")).collect();
        println!(
            "{:>8}  {:<6}  ratio [{}]  range [{:.4}, {:.4}]",
            n.label,
            match n.mode {
                SignalMode::OnePC => "1pc",
                SignalMode::TwoPC => "2pc",
            },
            ratio.join(", "),
            n.range[0],
            n.range[1]
        );
    }
    BasisFile::new(session.model.clone(), cfg, nodes).save(&a.out)?;
    Ok(())
}

fn build(a: BuildArgs) -> CliResult<()> {
    let (_, volume) = load_volume(&a.basis)?;
    volume.save(&a.out)?;
    println!("{} nodes, {} tetrahedra", volume.nodes.len(), volume.tetrahedra().len());
    Ok(())
}

fn run_stream(a: RunArgs) -> CliResult<()> {
    existing(&a.input, "input recording")?;
    let (_, volume) = load_volume(&a.volume)?;
    let mut cfg: ControlConfig = match &a.config {
        Some(p) => read_json(p, "control config")?,
        None => ControlConfig::default(),
    };
    if let Some(v) = a.time_constant {
        cfg.time_constant = v;
    }
    if let Some(v) = a.slew_rate {
        cfg.slew_rate = v;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let rec = load_recording(&a.input).with_context(|| format!("loading {}", a.input.display()))?;
    let samples = stream(&volume, cfg, &rec.frames)?;
    let outside = samples.iter().filter(|s| !s.inside_hull).count();
    if outside > 0 {
        eprintln!(
            "warning: {outside} of {} frames outside the calibration hull (nearest-node fallback)",
            samples.len()
        );
    }
    let mut buf = Vec::new();
    write_signal_csv(&samples, &mut buf)?;
    write_out(a.out.as_deref(), &String::from_utf8(buf).expect("csv is utf-8"))
}

fn simulate(a: SimulateArgs) -> CliResult<()> {
    let path = one_of(&a.basis, &a.volume)?;
    let mut cfg: ExperimentConfig = match &a.config {
        Some(p) => {
            existing(p, "experiment config")?;
            ExperimentConfig::load(p).map_err(|e| CliError::Usage(format!("invalid experiment config {}: {e}", p.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if !a.seed.is_empty() {
        cfg.seeds = a.seed.clone();
    }
    if let Some(o) = &a.out {
        cfg.output = Some(o.clone());
    }
    if cfg.seeds.is_empty() {
        return Err(CliError::Usage("no seeds given".into()));
    }
    let (model, volume) = load_volume(&path)?;
    let ctx = SimContext {
        model: &model,
        volume: &volume,
        gains: cfg.gains,
        control: cfg.control,
    };
    let controller = match a.controller {
        ControllerArg::Ikk => ControllerKind::Ikk,
        ControllerArg::Direct => ControllerKind::Direct,
    };
    let many = cfg.seeds.len() > 1;
    let mut all: Vec<TrialResult> = Vec::new();
    for &seed in &cfg.seeds {
        let mut results = match a.experiment {
            ExperimentArg::Exp1 => ikk_core::experiments::run_experiment1(&ctx, &cfg.exp1, controller, seed)?,
            ExperimentArg::Exp2 => {
                let q0 = start_config(&model, &volume)?;
                let start = model.forward_kinematics(&q0)?.position;
                let schedule = SphereSchedule::generate(&cfg.exp2, &start, &volume, seed)?;
                let modes: &[Exp2Mode] = match a.mode {
                    ModeArg::Single => &[Exp2Mode::Single],
                    ModeArg::Parallel => &[Exp2Mode::Parallel],
                    ModeArg::Both => &[Exp2Mode::Single, Exp2Mode::Parallel],
                };
                let mut r = Vec::new();
                for &m in modes {
                    r.extend(ikk_core::experiments::run_experiment2(&ctx, &cfg.exp2, &schedule, m, controller, seed)?);
                }
                r
            }
        };
        if many {
            for r in &mut results {
                r.trial = format!("seed{seed}_{}", r.trial);
            }
        }
        all.extend(results);
    }
    for r in all.iter().filter(|r| !r.success) {
        eprintln!("warning: trial {} failed: {}", r.trial, r.failure.as_deref().unwrap_or("unknown"));
    }
    let summaries: Vec<_> = all.iter().map(|r| r.summary()).collect();
    match &cfg.output {
        Some(dir) => {
            let files = write_results(dir, &all)?;
            println!("wrote {} files to {}", files.len(), dir.display());
        }
        None => print!("{}", report::render(&summaries, report::Format::Markdown)?),
    }
    Ok(())
}

fn parse_counts(text: &str) -> CliResult<Vec<f64>> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|e| CliError::Usage(format!("bad count {s:?}: {e}"))))
        .collect()
}

fn fit(a: FitArgs) -> CliResult<()> {
    let counts = match &a.input {
        Some(p) => {
            existing(p, "counts file")?;
            parse_counts(&std::fs::read_to_string(p).context("reading counts")?)?
        }
        None => a.counts.clone(),
    };
    let x_min = match a.x_min.as_str() {
        "observed" => XMin::Observed,
        v => XMin::Fixed(
            v.parse()
                .map_err(|_| CliError::Usage(format!("--x-min must be 'observed' or a number, got {v:?}")))?,
        ),
    };
    if counts.len() < 5 {
        return Err(CliError::Usage(format!("need at least 5 counts, got {}", counts.len())));
    }
    let opts = FitOptions {
        restarts: a.restarts,
        seed: a.seed,
        x_min,
        ..Default::default()
    };
    let mut fit = fit_learning_curve(&counts, &opts)?;
    fit.best_trace.clear();
    println!("{}", serde_json::to_string_pretty(&fit).context("encoding fit")?);
    Ok(())
}

fn report_cmd(a: ReportArgs) -> CliResult<()> {
    let mut text = String::new();
    if let Some(input) = &a.input {
        let path = if input.is_dir() { input.join("summary.json") } else { input.clone() };
        let rep: report::Report = read_json(&path, "summary")?;
        let format = match a.format {
            FormatArg::Csv => report::Format::Csv,
            FormatArg::Json => report::Format::Json,
            FormatArg::Markdown => report::Format::Markdown,
        };
        text.push_str(&report::render(&rep.trials, format)?);
    }
    if let Some(times) = &a.times {
        let table: report::TimeTable = read_json(times, "time table")?;
        if !text.is_empty() {
            text.push('\n');
        }
        text.push_str(&report::render_time_table(&table)?);
    }
    if text.is_empty() {
        return Err(CliError::Usage("nothing to report: give --input and/or --times".into()));
    }
    write_out(a.out.as_deref(), &text)
}

fn serve(a: ServeArgs) -> CliResult<()> {
    let path = one_of(&a.basis, &a.volume)?;
    let session: ikk_service::SessionConfig = match &a.config {
        Some(p) => read_json(p, "session config")?,
        None => Default::default(),
    };
    let (model, volume) = load_volume(&path)?;
    let addr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| CliError::Usage(format!("bad address: {e}")))?;
    let cfg = ikk_service::ServeConfig {
        addr,
        results_dir: a.out.clone(),
        session,
        ..Default::default()
    };
    let rt = tokio::runtime::Runtime::new().context("starting runtime")?;
    rt.block_on(async move {
        let server = ikk_service::Server::bind(model, volume, cfg).await.context("binding")?;
        eprintln!("listening on ws://{}", server.local_addr().context("local address")?);
        server.run().await.context("serving")
    })
    .map_err(CliError::Runtime)
}

/// Parse arguments, run, and map the outcome to an exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
