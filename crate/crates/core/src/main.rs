use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use msafe::basis::{build_multiscale_basis, build_spline_basis, BasisSet};
use msafe::bench::bench;
use msafe::io::{self, EstimateReport, Manifest, RunReport, StageReport};
use msafe::pipeline::{assemble_all, run_full, Bases, Mode, Model, RunConfig};
use msafe::signal::Dataset;
use msafe::sim::{generate_responses, run_sim, sample_noise, sigma_for_snr, NoiseModel, SimSettings};
use msafe::synth::{synthetic_dataset, SyntheticConfig, Truth};
use msafe::{Error, Result};

#[derive(Parser)]
#[command(name = "msafe", version, about = "Multiscale sensor selection and kernel estimation for historical functional linear models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Summarize a lag or position basis.
    InspectBasis(InspectArgs),
    /// Assemble design blocks and write them as triplet CSV files.
    Assemble(DataArgs),
    /// Multistage sensor selection.
    Select(DataArgs),
    /// Ridge kernel estimation on given sensors.
    Estimate(EstimateArgs),
    /// Selection followed by estimation.
    Run(DataArgs),
    /// Correlated-noise recovery study on synthetic data.
    Simulate(SimArgs),
    /// Compare spline and multiscale lag bases on one dataset.
    Bench(DataArgs),
    /// Write a synthetic dataset with responses from the shipped truth.
    Generate(GenerateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Multiscale,
    Spline,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Multiscale => Mode::Multiscale,
            ModeArg::Spline => Mode::Spline,
        }
    }
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long, value_enum, default_value = "multiscale")]
    kind: ModeArg,
    #[arg(long, default_value_t = 3)]
    p: usize,
    #[arg(long, default_value_t = 2)]
    n: usize,
    /// Spline dimension.
    #[arg(long, default_value_t = 10)]
    q: usize,
}

/// Overrides of configuration fields.
#[derive(Args, Default)]
struct ConfigArgs {
    /// JSON run configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    /// Truncation level.
    #[arg(long)]
    m: Option<usize>,
    /// Keep every multiscale level.
    #[arg(long, conflicts_with = "m")]
    no_truncation: bool,
    #[arg(long)]
    q: Option<usize>,
    #[arg(long)]
    keep_fraction: Option<f64>,
    #[arg(long)]
    window: Option<f64>,
    #[arg(long)]
    stages: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Multiply the log-λ grid step by this factor.
    #[arg(long)]
    coarsen: Option<f64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg: RunConfig = match &self.config {
            Some(p) => io::read_json(p)?,
            None => RunConfig::default(),
        };
        if let Some(m) = self.mode {
            let mode = Mode::from(m);
            if self.config.is_none() && mode == Mode::Spline {
                cfg = RunConfig::spline();
            }
            cfg.mode = mode;
        }
        if let Some(v) = self.p {
            cfg.p = v;
        }
        if let Some(v) = self.n {
            cfg.n = v;
        }
        if self.m.is_some() || self.no_truncation {
            cfg.m = self.m;
        }
        if let Some(v) = self.q {
            cfg.q = v;
        }
        if self.keep_fraction.is_some() {
            cfg.keep_fraction = self.keep_fraction;
        }
        if let Some(v) = self.window {
            cfg.window = v;
        }
        if let Some(v) = self.stages {
            cfg.stages = v;
        }
        if let Some(v) = self.folds {
            cfg.folds = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(f) = self.coarsen {
            if !(f > 0.0) {
                return Err(Error::InvalidInput("--coarsen must be positive".into()));
            }
            cfg.grids = cfg.grids.coarsened(f);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct DataArgs {
    /// CSV with a time column and one column per sensor.
    #[arg(long)]
    signals: PathBuf,
    /// CSV with columns time,position[,response].
    #[arg(long)]
    observations: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// 1-based sensors, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    sensors: Vec<usize>,
}

#[derive(Args)]
struct SimArgs {
    /// JSON simulation settings; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    theta: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    eta: Vec<f64>,
    /// Replicates per setting.
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, value_delimiter = ',')]
    modes: Vec<ModeArg>,
    /// Selection stages in both modes.
    #[arg(long)]
    stages: Option<usize>,
    /// Multiply the log-λ grid step of both modes by this factor.
    #[arg(long)]
    coarsen: Option<f64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value = "data")]
    out: PathBuf,
    /// Synthetic data seed.
    #[arg(long, default_value_t = 2021)]
    data_seed: u64,
    /// Noise seed.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 0.25)]
    theta: f64,
    #[arg(long, default_value_t = 10.0)]
    eta: f64,
    #[arg(long, default_value_t = 10.0)]
    snr: f64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::InspectBasis(a) => inspect(&a),
        Command::Assemble(a) => assemble(&a),
        Command::Select(a) => select(&a),
        Command::Estimate(a) => estimate(&a),
        Command::Run(a) => run(&a),
        Command::Simulate(a) => simulate(&a),
        Command::Bench(a) => bench_cmd(&a),
        Command::Generate(a) => generate(&a),
    }
}

#[derive(Serialize)]
struct BasisSummary {
    functions: usize,
    levels: Vec<usize>,
    gram_diagonal: Vec<f64>,
    max_cross_level_inner_product: f64,
    min_gram_eigenvalue: f64,
}

fn summarize_basis(b: &BasisSet) -> BasisSummary {
    let g = b.gram();
    let mut cross = 0.0f64;
    for i in 0..b.len() {
        for j in 0..b.len() {
            if b.levels()[i] != b.levels()[j] && b.levels()[i].max(b.levels()[j]) > 0 {
                cross = cross.max(g[(i, j)].abs());
            }
        }
    }
    let eig = g.clone().symmetric_eigen().eigenvalues;
    BasisSummary {
        functions: b.len(),
        levels: b.levels().to_vec(),
        gram_diagonal: g.diagonal().iter().copied().collect(),
        max_cross_level_inner_product: cross,
        min_gram_eigenvalue: eig.iter().copied().fold(f64::INFINITY, f64::min),
    }
}

fn inspect(a: &InspectArgs) -> Result<()> {
    let basis = match a.kind {
        ModeArg::Multiscale => build_multiscale_basis(a.p, a.n)?,
        ModeArg::Spline => build_spline_basis(a.q)?,
    };
    println!("{}", serde_json::to_string_pretty(&summarize_basis(&basis))?);
    Ok(())
}

fn load(a: &DataArgs, cfg: &RunConfig) -> Result<Dataset> {
    io::create_dir(&a.out)?;
    io::load_dataset(&a.signals, &a.observations, cfg.window)
}

fn manifest(command: &str, a: &DataArgs, cfg: &RunConfig) -> Result<()> {
    let m = Manifest::new(command, cfg, &[a.signals.as_path(), a.observations.as_path()])?;
    io::write_json(&a.out.join("manifest.json"), &m)
}

#[derive(Serialize)]
struct BlockSummary {
    sensor: usize,
    rows: usize,
    cols: usize,
    kept_t: usize,
    stored: usize,
    file: String,
}

fn assemble(a: &DataArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    let data = load(a, &cfg)?;
    let bases = Bases::new(&cfg)?;
    let assembled = assemble_all(&data, &bases, &cfg)?;
    let mut summary = Vec::new();
    for (k, b) in assembled.blocks.iter().enumerate() {
        let file = format!("block_{:02}.csv", k + 1);
        io::write_block(&a.out.join(&file), b)?;
        summary.push(BlockSummary {
            sensor: k + 1,
            rows: b.nrows(),
            cols: b.ncols(),
            kept_t: b.kept_t,
            stored: b.matrix.nnz(),
            file,
        });
    }
    io::write_json(&a.out.join("blocks.json"), &summary)?;
    manifest("assemble", a, &cfg)
}

fn with_model<T>(a: &DataArgs, cfg: &RunConfig, f: impl FnOnce(&Model) -> Result<T>) -> Result<T> {
    let data = load(a, cfg)?;
    let bases = Bases::new(cfg)?;
    let assembled = assemble_all(&data, &bases, cfg)?;
    let model = Model::new(cfg, &bases, &assembled, data.responses())?;
    f(&model)
}

fn select(a: &DataArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    let stages = with_model(a, &cfg, |m| m.select_sensors())?;
    let report: Vec<StageReport> = stages.iter().map(StageReport::from).collect();
    io::write_json(&a.out.join("selection.json"), &report)?;
    let last = report.last().map(|s| s.active.clone()).unwrap_or_default();
    println!("selected sensors: {last:?}");
    manifest("select", a, &cfg)
}

fn estimate(a: &EstimateArgs) -> Result<()> {
    let cfg = a.data.cfg.resolve()?;
    if a.sensors.iter().any(|&s| s == 0) {
        return Err(Error::InvalidInput("sensor labels are 1-based".into()));
    }
    let sensors: Vec<usize> = a.sensors.iter().map(|s| s - 1).collect();
    let est = with_model(&a.data, &cfg, |m| {
        if let Some(&k) = sensors.iter().find(|&&k| k >= m.assembled.blocks.len()) {
            return Err(Error::InvalidInput(format!("sensor {} does not exist", k + 1)));
        }
        m.estimate_kernels(&sensors)
    })?;
    io::write_json(&a.data.out.join("estimate.json"), &EstimateReport::from(&est))?;
    println!("cv_mse: {:e}", est.cv_mse);
    manifest("estimate", &a.data, &cfg)
}

fn run(a: &DataArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    let data = load(a, &cfg)?;
    let fit = run_full(&data, &cfg)?;
    io::write_json(&a.out.join("report.json"), &RunReport::new(&cfg, &data, &fit))?;
    io::write_json(&a.out.join("timings.json"), &fit.timings)?;
    let selected: Vec<usize> = fit.selected.iter().map(|k| k + 1).collect();
    println!("selected sensors: {selected:?}  cv_mse: {:e}", fit.cv_mse);
    manifest("run", a, &cfg)
}

fn simulate(a: &SimArgs) -> Result<()> {
    let mut s: SimSettings = match &a.config {
        Some(p) => io::read_json(p)?,
        None => SimSettings::default(),
    };
    if !a.theta.is_empty() {
        s.thetas = a.theta.clone();
    }
    if !a.eta.is_empty() {
        s.etas = a.eta.clone();
    }
    if let Some(j) = a.replicates {
        s.replicates = j;
    }
    if let Some(v) = a.seed {
        s.seed = v;
    }
    if !a.modes.is_empty() {
        s.modes = a.modes.iter().map(|&m| m.into()).collect();
    }
    for cfg in [&mut s.multiscale, &mut s.spline] {
        if let Some(r) = a.stages {
            cfg.stages = r;
        }
        if let Some(f) = a.coarsen {
            cfg.grids = cfg.grids.coarsened(f);
        }
        cfg.validate()?;
    }
    io::create_dir(&a.out)?;
    let report = run_sim(&s, &Truth::fixture())?;
    io::write_json(&a.out.join("sim_report.json"), &report)?;
    io::write_text(&a.out.join("sim_rows.csv"), &report.rows_csv())?;
    io::write_json(&a.out.join("timings.json"), &report.timings())?;
    io::write_json(&a.out.join("manifest.json"), &Manifest::new("simulate", &s, &[])?)?;
    for m in &report.summaries {
        println!(
            "theta {:>6} eta {:>5} {:<10} size {:.2} fp {:.2} truth {}/{} cv {:.3e} time {:.1}s",
            m.theta,
            m.eta,
            msafe::sim::mode_name(m.mode),
            m.mean_size,
            m.mean_false_positive,
            m.truth_selected,
            m.replicates,
            m.mean_cv_mse,
            m.mean_time
        );
    }
    Ok(())
}

fn bench_cmd(a: &DataArgs) -> Result<()> {
    let ms = a.cfg.resolve()?;
    let spline = RunConfig {
        mode: Mode::Spline,
        m: None,
        keep_fraction: None,
        ..ms.clone()
    };
    let ms = RunConfig {
        mode: Mode::Multiscale,
        ..ms
    };
    let data = load(a, &ms)?;
    let report = bench(&data, &[spline.clone(), ms.clone()])?;
    io::write_json(&a.out.join("bench.json"), &report)?;
    io::write_text(&a.out.join("bench.csv"), &report.to_csv())?;
    for m in &report.modes {
        println!(
            "{:<10} total {:.2}s  small entries {:.3}  cv {:.3e}  selected {:?}",
            msafe::sim::mode_name(m.mode),
            m.timings.total(),
            m.entries.small_fraction,
            m.cv_mse,
            m.selected
        );
    }
    manifest("bench", a, &ms)
}

fn generate(a: &GenerateArgs) -> Result<()> {
    let cfg = SyntheticConfig {
        seed: a.data_seed,
        ..Default::default()
    };
    let data = synthetic_dataset(&cfg)?;
    let truth = Truth::fixture();
    let clean = truth.clean_response(&data)?;
    let noise = sample_noise(
        &NoiseModel {
            theta: a.theta,
            eta: a.eta,
            sigma_h: sigma_for_snr(&clean, a.snr, a.theta),
            len: data.n_obs(),
        },
        a.seed,
    )?;
    let data = data.with_responses(generate_responses(&data, &truth, &noise)?)?;
    io::create_dir(&a.out)?;
    write_dataset(&a.out, &data)?;
    Ok(())
}

fn write_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    io::write_signals(&dir.join("signals.csv"), data)?;
    io::write_observations(&dir.join("observations.csv"), data)?;
    println!(
        "wrote {} ({} sensors) and {} ({} observations)",
        dir.join("signals.csv").display(),
        data.n_sensors(),
        dir.join("observations.csv").display(),
        data.n_obs()
    );
    Ok(())
}
