//! CSV ingestion and export, block dumps, run manifests and JSON reports.
//!
//! Files are UTF-8 CSV with a header row, comma separators and `.` decimals.
//! Floats are written with Rust's shortest round-trip formatting, so a dump
//! followed by a load reproduces every value exactly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::assembly::DesignBlock;
use crate::error::{Error, Result};
use crate::pipeline::{FitResult, KernelEstimate, RunConfig, StageState};
use crate::signal::Dataset;
use crate::smoother::velocities;
use crate::sparse::CsrMatrix;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Numeric table: header names and rows with their 1-based file lines.
struct Table {
    header: Vec<String>,
    rows: Vec<(usize, Vec<f64>)>,
}

fn read_table(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    if text.trim().is_empty() {
        return Err(parse_err(path, 1, "file is empty"));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != header.len() {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        let values = record
            .iter()
            .enumerate()
            .map(|(j, field)| match field.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                Ok(v) => Err(parse_err(path, line, format!("column '{}' is not finite ({v})", header[j]))),
                Err(_) => Err(parse_err(path, line, format!("column '{}': cannot parse '{field}'", header[j]))),
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((line, values));
    }
    if rows.is_empty() {
        return Err(parse_err(path, 2, "no data rows"));
    }
    Ok(Table { header, rows })
}

fn check_increasing(path: &Path, table: &Table) -> Result<()> {
    for w in table.rows.windows(2) {
        if w[1].1[0] <= w[0].1[0] {
            return Err(parse_err(
                path,
                w[1].0,
                format!("time {} does not increase after {}", w[1].1[0], w[0].1[0]),
            ));
        }
    }
    Ok(())
}

/// Signals file: a `time` column followed by one column per sensor.
pub fn load_signals(path: &Path) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let table = read_table(path)?;
    if table.header.len() < 2 {
        return Err(parse_err(path, 1, "need a time column and at least one sensor column"));
    }
    check_increasing(path, &table)?;
    let times = table.rows.iter().map(|r| r.1[0]).collect();
    let channels = (1..table.header.len())
        .map(|k| table.rows.iter().map(|r| r.1[k]).collect())
        .collect();
    Ok((times, channels))
}

/// Observations file: `time,position[,response]`.
pub fn load_observations(path: &Path) -> Result<(Vec<f64>, Vec<f64>, Option<Vec<f64>>)> {
    let table = read_table(path)?;
    if !(2..=3).contains(&table.header.len()) {
        return Err(parse_err(path, 1, "expected columns time,position[,response]"));
    }
    check_increasing(path, &table)?;
    let col = |j: usize| table.rows.iter().map(|r| r.1[j]).collect::<Vec<f64>>();
    let responses = (table.header.len() == 3).then(|| col(2));
    Ok((col(0), col(1), responses))
}

/// Dataset from a signals file and an observations file. Without a
/// response column the responses are velocities of the smoothed positions.
pub fn load_dataset(signals: &Path, observations: &Path, window: f64) -> Result<Dataset> {
    let (signal_times, channels) = load_signals(signals)?;
    let (times, positions, responses) = load_observations(observations)?;
    let responses = match responses {
        Some(r) => r,
        None => velocities(&times, &positions)?,
    };
    Dataset::new(signal_times, channels, times, positions, responses, window)
}

fn write_csv(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(io_err(path))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => parse_err(path, 0, format!("{other:?}")),
    }
}

pub fn write_signals(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut header = vec!["time".to_string()];
    header.extend((1..=dataset.n_sensors()).map(|k| format!("sensor{k}")));
    let rows = dataset.signal_times().iter().enumerate().map(|(i, t)| {
        let mut r = vec![t.to_string()];
        r.extend((0..dataset.n_sensors()).map(|k| dataset.signal(k).values()[i].to_string()));
        r
    });
    write_csv(path, &header, rows)
}

pub fn write_observations(path: &Path, dataset: &Dataset) -> Result<()> {
    let header = ["time", "position", "response"].map(String::from);
    let rows = (0..dataset.n_obs()).map(|i| {
        vec![
            dataset.times()[i].to_string(),
            dataset.positions()[i].to_string(),
            dataset.responses()[i].to_string(),
        ]
    });
    write_csv(path, &header, rows)
}

/// `row,col,value` triplets of a block's stored entries.
pub fn write_block(path: &Path, block: &DesignBlock) -> Result<()> {
    let header = ["row", "col", "value"].map(String::from);
    let rows = block
        .matrix
        .triplets()
        .map(|(i, j, v)| vec![i.to_string(), j.to_string(), v.to_string()]);
    write_csv(path, &header, rows)
}

pub fn load_triplets(path: &Path, nrows: usize, ncols: usize) -> Result<CsrMatrix> {
    let table = read_table(path)?;
    if table.header.len() != 3 {
        return Err(parse_err(path, 1, "expected columns row,col,value"));
    }
    let mut rows = vec![Vec::new(); nrows];
    for (line, r) in &table.rows {
        let (i, j) = (r[0], r[1]);
        if i.fract() != 0.0 || j.fract() != 0.0 || i < 0.0 || j < 0.0 || i as usize >= nrows || j as usize >= ncols {
            return Err(parse_err(path, *line, format!("index ({i}, {j}) outside {nrows}x{ncols}")));
        }
        rows[i as usize].push((j as usize, r[2]));
    }
    CsrMatrix::from_rows(ncols, rows)
}

/// Hex SHA-256 of a file's bytes.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, Serialize)]
pub struct InputHash {
    pub path: PathBuf,
    pub sha256: String,
}

/// What is needed to repeat a command: its name, full configuration and
/// content hashes of its inputs.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config: serde_json::Value,
    pub inputs: Vec<InputHash>,
}

impl Manifest {
    pub fn new(command: &str, config: &impl Serialize, inputs: &[&Path]) -> Result<Self> {
        Ok(Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: serde_json::to_value(config)?,
            inputs: inputs
                .iter()
                .map(|p| {
                    Ok(InputHash {
                        path: p.to_path_buf(),
                        sha256: file_sha256(p)?,
                    })
                })
                .collect::<Result<_>>()?,
        })
    }
}

/// Pretty JSON with a trailing newline.
pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(io_err(path))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e.line(), e.to_string()))
}

/// Summary of one selection stage with 1-based sensor labels.
#[derive(Debug, Clone, Serialize)]
pub struct StageReport {
    pub stage: usize,
    pub candidates: Vec<usize>,
    pub active: Vec<usize>,
    pub lambda: f64,
    pub lambda_max: f64,
    pub phi_t: f64,
    pub phi_z: f64,
    pub cv_mse: f64,
    pub solver_converged: bool,
    /// Adaptive `f` weights used in the stage, aligned with `candidates`.
    pub weights: Vec<f64>,
}

impl From<&StageState> for StageReport {
    fn from(s: &StageState) -> Self {
        StageReport {
            stage: s.stage,
            candidates: s.candidates.iter().map(|k| k + 1).collect(),
            active: s.active.iter().map(|k| k + 1).collect(),
            lambda: s.lambda,
            lambda_max: s.lambda_max,
            phi_t: s.phi_t,
            phi_z: s.phi_z,
            cv_mse: s.cv_mse,
            solver_converged: s.solver_converged,
            weights: s.weights.iter().map(|w| w.f).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelReport {
    pub sensor: usize,
    /// Full coefficients in the order `l * dim_t + j`.
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub sensors: Vec<usize>,
    pub phi: f64,
    pub phi_t: f64,
    pub phi_z: f64,
    pub cv_mse: f64,
    pub ridge_fallback: bool,
    pub normal_residual: f64,
    pub kernels: Vec<KernelReport>,
}

impl From<&KernelEstimate> for EstimateReport {
    fn from(e: &KernelEstimate) -> Self {
        EstimateReport {
            sensors: e.sensors.iter().map(|k| k + 1).collect(),
            phi: e.phi,
            phi_t: e.phi_t,
            phi_z: e.phi_z,
            cv_mse: e.cv_mse,
            ridge_fallback: e.ridge_fallback,
            normal_residual: e.normal_residual,
            kernels: e
                .sensors
                .iter()
                .zip(&e.betas)
                .map(|(k, b)| KernelReport {
                    sensor: k + 1,
                    coefficients: b.clone(),
                })
                .collect(),
        }
    }
}

/// Deterministic result of a full run; wall-clock timings are written
/// separately.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub observations: usize,
    pub sensors: usize,
    pub selected: Vec<usize>,
    pub cv_mse: f64,
    pub stages: Vec<StageReport>,
    pub estimate: Option<EstimateReport>,
}

impl RunReport {
    pub fn new(cfg: &RunConfig, dataset: &Dataset, fit: &FitResult) -> Self {
        RunReport {
            config: cfg.clone(),
            observations: dataset.n_obs(),
            sensors: dataset.n_sensors(),
            selected: fit.selected.iter().map(|k| k + 1).collect(),
            cv_mse: fit.cv_mse,
            stages: fit.stages.iter().map(StageReport::from).collect(),
            estimate: fit.estimate.as_ref().map(EstimateReport::from),
        }
    }
}
