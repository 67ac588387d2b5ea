//! File formats shared with the command-line tool: JSON for spectra, tail
//! fits, reports, and models; plain CSV for matrices (one row per line,
//! comma-separated, shortest round-tripping decimal form) with a JSON
//! sidecar (`foo.csv` → `foo.meta.json`) carrying the dimensions and kind.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixopt::{BandedGram, MixingMatrix, SolveReport};
use crate::spectrum::{EigenSpectrum, TailFit};
use crate::trainer::{AccountantParams, Dataset, ModelParams, StepMetrics};
use crate::workload::{WorkloadKind, WorkloadMatrix};

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Sidecar path of a matrix file: `foo.csv` → `foo.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| parse_err(path, format!("serialization failed: {e}")))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e.to_string()))
}

pub fn write_spectrum(path: &Path, s: &EigenSpectrum) -> Result<()> {
    write_json(path, s)
}

pub fn read_spectrum(path: &Path) -> Result<EigenSpectrum> {
    let s: EigenSpectrum = read_json(path)?;
    s.validate()
        .map_err(|e| parse_err(path, e.to_string()))?;
    Ok(s)
}

pub fn write_tail_fit(path: &Path, fit: &TailFit) -> Result<()> {
    write_json(path, fit)
}

pub fn read_tail_fit(path: &Path) -> Result<TailFit> {
    let fit: TailFit = read_json(path)?;
    fit.validate()
        .map_err(|e| parse_err(path, e.to_string()))?;
    Ok(fit)
}

/// Writes a matrix as plain CSV. Values use Rust's shortest round-tripping
/// decimal formatting, so write-then-read is bit-exact.
pub fn write_matrix_csv(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut out = String::new();
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

pub fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|v| v.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| parse_err(path, format!("line {}: {e}", lineno + 1)))?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(parse_err(
                    path,
                    format!("line {}: expected {} columns, got {}", lineno + 1, first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(path, "matrix file is empty"));
    }
    let ncols = rows[0].len();
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), ncols), flat)
        .map_err(|e| parse_err(path, e.to_string()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct WorkloadMeta {
    #[serde(rename = "T")]
    t: usize,
    eta: Option<f64>,
    kind: WorkloadKind,
}

pub fn write_workload(path: &Path, g: &WorkloadMatrix) -> Result<()> {
    write_matrix_csv(path, g.entries())?;
    let meta = WorkloadMeta {
        t: g.dim(),
        eta: g.eta(),
        kind: g.kind(),
    };
    write_json(&sidecar_path(path), &meta)
}

/// Reads a workload CSV; a missing sidecar degrades to `kind = custom`.
pub fn read_workload(path: &Path) -> Result<WorkloadMatrix> {
    let entries = read_matrix_csv(path)?;
    let side = sidecar_path(path);
    let (eta, kind) = if side.exists() {
        let meta: WorkloadMeta = read_json(&side)?;
        if meta.t != entries.nrows() {
            return Err(parse_err(
                &side,
                format!("sidecar says T = {} but the matrix is {}x{}", meta.t, entries.nrows(), entries.ncols()),
            ));
        }
        (meta.eta, meta.kind)
    } else {
        (None, WorkloadKind::Custom)
    };
    WorkloadMatrix::from_parts(entries, eta, kind)
        .map_err(|e| parse_err(path, e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum MatrixKind {
    Gram,
    Mixing,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BandedMeta {
    #[serde(rename = "T")]
    t: usize,
    band: usize,
    kind: MatrixKind,
}

pub fn write_gram(path: &Path, x: &BandedGram) -> Result<()> {
    write_matrix_csv(path, x.entries())?;
    let meta = BandedMeta {
        t: x.dim(),
        band: x.band(),
        kind: MatrixKind::Gram,
    };
    write_json(&sidecar_path(path), &meta)
}

pub fn read_gram(path: &Path) -> Result<BandedGram> {
    let entries = read_matrix_csv(path)?;
    let band = read_band_meta(path, &entries, MatrixKind::Gram)?;
    BandedGram::new(entries, band).map_err(|e| parse_err(path, e.to_string()))
}

pub fn write_mixing(path: &Path, c: &MixingMatrix) -> Result<()> {
    write_matrix_csv(path, c.entries())?;
    let meta = BandedMeta {
        t: c.dim(),
        band: c.band(),
        kind: MatrixKind::Mixing,
    };
    write_json(&sidecar_path(path), &meta)
}

pub fn read_mixing(path: &Path) -> Result<MixingMatrix> {
    let entries = read_matrix_csv(path)?;
    let band = read_band_meta(path, &entries, MatrixKind::Mixing)?;
    MixingMatrix::new(entries, band).map_err(|e| parse_err(path, e.to_string()))
}

/// Band from the sidecar when present (with a kind check), otherwise the
/// narrowest band consistent with the zero pattern.
fn read_band_meta(path: &Path, entries: &Array2<f64>, expect: MatrixKind) -> Result<usize> {
    let side = sidecar_path(path);
    if side.exists() {
        let meta: BandedMeta = read_json(&side)?;
        if meta.kind != expect {
            return Err(parse_err(
                &side,
                format!("expected a {expect:?} file, sidecar says {:?}", meta.kind),
            ));
        }
        if meta.t != entries.nrows() {
            return Err(parse_err(
                &side,
                format!("sidecar says T = {} but the matrix is {}x{}", meta.t, entries.nrows(), entries.ncols()),
            ));
        }
        Ok(meta.band)
    } else {
        Ok(infer_band(entries))
    }
}

fn infer_band(entries: &Array2<f64>) -> usize {
    let t = entries.nrows();
    let mut band = 1;
    for i in 0..t {
        for j in 0..t.min(entries.ncols()) {
            if entries[[i, j]] != 0.0 {
                band = band.max(i.abs_diff(j) + 1);
            }
        }
    }
    band
}

pub fn write_solve_report(path: &Path, report: &SolveReport) -> Result<()> {
    write_json(path, report)
}

pub fn read_solve_report(path: &Path) -> Result<SolveReport> {
    read_json(path)
}

/// One simulation comparison: closed form vs. Monte Carlo.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub closed_form: f64,
    pub mc_mean: f64,
    pub mc_std_error: f64,
    pub trials: usize,
    pub seed: u64,
    pub params: SimulationParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationParams {
    pub p: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub band: usize,
    pub eta: f64,
    pub noise_scale: f64,
}

pub fn write_sim_report(path: &Path, record: &SimulationRecord) -> Result<()> {
    write_json(path, record)
}

pub fn read_sim_report(path: &Path) -> Result<SimulationRecord> {
    read_json(path)
}

/// Plot-ready sweep of excess loss against band size.
pub fn write_band_sweep(path: &Path, records: &[SimulationRecord]) -> Result<()> {
    let mut out = String::from("band,closed_form,mc_mean,mc_std_error\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.params.band, r.closed_form, r.mc_mean, r.mc_std_error
        ));
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Reads a dataset CSV with a header row; the label column is named
/// `label`, every other column is a feature in header order.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut reader =
        csv::Reader::from_path(path).map_err(|e| parse_err(path, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| parse_err(path, e.to_string()))?
        .clone();
    let label_col = headers
        .iter()
        .position(|h| h == "label")
        .ok_or_else(|| parse_err(path, "no column named `label`"))?;
    let n_features = headers.len() - 1;

    let mut features: Vec<f64> = Vec::new();
    let mut labels: Vec<f64> = Vec::new();
    for (lineno, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(path, e.to_string()))?;
        if record.len() != headers.len() {
            return Err(parse_err(
                path,
                format!("row {}: expected {} fields, got {}", lineno + 2, headers.len(), record.len()),
            ));
        }
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|e| {
                parse_err(path, format!("row {}, column {}: {e}", lineno + 2, col + 1))
            })?;
            if col == label_col {
                labels.push(v);
            } else {
                features.push(v);
            }
        }
    }
    let n = labels.len();
    let arr = Array2::from_shape_vec((n, n_features), features)
        .map_err(|e| parse_err(path, e.to_string()))?;
    Dataset::new(arr, labels).map_err(|e| parse_err(path, e.to_string()))
}

/// Writes a dataset with feature columns `x0..x{f−1}` and a `label` column.
pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut out = String::new();
    let f = data.n_features();
    let header: Vec<String> = (0..f)
        .map(|j| format!("x{j}"))
        .chain(std::iter::once("label".to_string()))
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..data.len() {
        let mut fields: Vec<String> = data
            .features()
            .row(i)
            .iter()
            .map(|v| format!("{v}"))
            .collect();
        fields.push(format!("{}", data.labels()[i]));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Training log CSV: `step,batch_loss,grad_norm_mean,clipped_fraction`.
pub fn write_train_log(path: &Path, metrics: &[StepMetrics]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| parse_err(path, e.to_string()))?;
    for m in metrics {
        writer
            .serialize(m)
            .map_err(|e| parse_err(path, e.to_string()))?;
    }
    writer.flush().map_err(|e| io_err(path, e))
}

pub fn write_model(path: &Path, model: &ModelParams) -> Result<()> {
    write_json(path, model)
}

pub fn read_model(path: &Path) -> Result<ModelParams> {
    let m: ModelParams = read_json(path)?;
    if m.weights.iter().any(|v| !v.is_finite()) {
        return Err(parse_err(path, "model weights contain non-finite values"));
    }
    Ok(m)
}

/// Reduction-in-objective comparison of two gram matrices under a workload.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReductionReport {
    pub reduction: f64,
    pub objective_approx: f64,
    pub objective_star: f64,
}

pub fn write_reduction_report(path: &Path, report: &ReductionReport) -> Result<()> {
    write_json(path, report)
}

pub fn read_reduction_report(path: &Path) -> Result<ReductionReport> {
    read_json(path)
}

/// Accountant hand-off file `{q, compositions, sigma}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccountantFile {
    pub q: f64,
    pub compositions: u64,
    pub sigma: f64,
}

pub fn write_accountant(path: &Path, params: &AccountantParams, sigma: f64) -> Result<()> {
    write_json(
        path,
        &AccountantFile {
            q: params.q,
            compositions: params.compositions,
            sigma,
        },
    )
}

pub fn read_accountant(path: &Path) -> Result<AccountantFile> {
    read_json(path)
}
