//! Output files: CSV with a header row and JSON, both with floats in shortest
//! round-trip decimal unless a precision is configured.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amplitude::{AmplitudeGrid, DensityGrid};
use crate::spectral::SpectralExpansion;
use crate::worked::{ExampleSpec, UncertaintyReport};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

/// Float formatting shared by every writer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FloatFormat {
    /// Significant digits; `None` is shortest round-trip.
    pub precision: Option<usize>,
}

impl FloatFormat {
    pub fn round(&self, x: f64) -> f64 {
        match self.precision {
            Some(p) if x.is_finite() => format!("{:.*e}", p.saturating_sub(1), x).parse().unwrap_or(x),
            _ => x,
        }
    }

    pub fn format(&self, x: f64) -> String {
        if !x.is_finite() {
            return if x.is_nan() {
                "NaN".into()
            } else if x > 0.0 {
                "inf".into()
            } else {
                "-inf".into()
            };
        }
        let mut buf = ryu::Buffer::new();
        buf.format_finite(self.round(x)).to_string()
    }
}

/// `1` for 1.0, `0.5` for 0.5: the time tag used in density file names.
pub fn time_tag(t: f64) -> String {
    let s = FloatFormat::default().format(t);
    s.strip_suffix(".0").map(str::to_string).unwrap_or(s)
}

pub fn density_file_name(t: f64, json: bool) -> String {
    format!("density_t{}.{}", time_tag(t), if json { "json" } else { "csv" })
}

fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| IoError::File {
            path: path.to_path_buf(),
            source,
        })
}

fn open(path: &Path) -> Result<File, IoError> {
    File::open(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut w = create(path)?;
    let json_err = |source| IoError::Json {
        path: path.to_path_buf(),
        source,
    };
    serde_json::to_writer_pretty(&mut w, value).map_err(json_err)?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|source| IoError::File {
            path: path.to_path_buf(),
            source,
        })
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    serde_json::from_reader(std::io::BufReader::new(open(path)?)).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `header` then `rows`, every cell a float.
pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>, fmt: FloatFormat) -> Result<(), IoError> {
    let csv_err = |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row.iter().map(|x| fmt.format(*x))).map_err(csv_err)?;
    }
    w.flush().map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a float table written by [`write_csv`]; empty cells become NaN.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), IoError> {
    let csv_err = |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_reader(open(path)?);
    let header = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        rows.push(rec.iter().map(|c| c.parse().unwrap_or(f64::NAN)).collect());
    }
    Ok((header, rows))
}

/// Coefficients rounded to the configured precision, so that the JSON file
/// carries exactly the digits the CSV files would.
pub fn rounded_expansion(exp: &SpectralExpansion, fmt: FloatFormat) -> SpectralExpansion {
    let mut out = exp.clone();
    for c in &mut out.coefficients {
        c.re = fmt.round(c.re);
        c.im = fmt.round(c.im);
    }
    out.completeness = fmt.round(out.completeness);
    out
}

pub fn write_expansion(path: &Path, exp: &SpectralExpansion, fmt: FloatFormat) -> Result<(), IoError> {
    write_json(path, &rounded_expansion(exp, fmt))
}

pub fn read_expansion(path: &Path) -> Result<SpectralExpansion, IoError> {
    read_json(path)
}

pub fn read_amplitude_grid(path: &Path) -> Result<AmplitudeGrid, IoError> {
    read_json(path)
}

/// `m,n,re,im` rows of a Gram matrix over `−N..=N`.
pub fn gram_rows(gram: &[Vec<Complex64>]) -> Vec<Vec<f64>> {
    let n0 = (gram.len() / 2) as f64;
    let mut rows = Vec::with_capacity(gram.len() * gram.len());
    for (i, row) in gram.iter().enumerate() {
        for (j, g) in row.iter().enumerate() {
            rows.push(vec![i as f64 - n0, j as f64 - n0, g.re, g.im]);
        }
    }
    rows
}

pub const GRAM_HEADER: [&str; 4] = ["m", "n", "re", "im"];
pub const DENSITY_HEADER: [&str; 4] = ["q", "p", "rho_spectral", "rho_oracle"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityRow {
    pub q: f64,
    pub p: f64,
    pub rho_spectral: f64,
    pub rho_oracle: Option<f64>,
}

/// Rows of a `(q,p)` density file; the oracle column is empty when no
/// oracle is available.
pub fn density_rows(spectral: &DensityGrid, oracle: Option<&DensityGrid>) -> Vec<DensityRow> {
    let layout = &spectral.layout;
    (0..layout.len())
        .map(|k| {
            let (q, p) = layout.node(k);
            DensityRow {
                q,
                p,
                rho_spectral: spectral.values[k],
                rho_oracle: oracle.map(|o| o.values[k]),
            }
        })
        .collect()
}

pub fn write_density(path: &Path, rows: &[DensityRow], json: bool, fmt: FloatFormat) -> Result<(), IoError> {
    if json {
        let rounded: Vec<DensityRow> = rows
            .iter()
            .map(|r| DensityRow {
                q: fmt.round(r.q),
                p: fmt.round(r.p),
                rho_spectral: fmt.round(r.rho_spectral),
                rho_oracle: r.rho_oracle.map(|x| fmt.round(x)),
            })
            .collect();
        return write_json(path, &rounded);
    }
    let csv_err = |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(DENSITY_HEADER).map_err(csv_err)?;
    for r in rows {
        let oracle = r.rho_oracle.map(|x| fmt.format(x)).unwrap_or_default();
        w.write_record([fmt.format(r.q), fmt.format(r.p), fmt.format(r.rho_spectral), oracle])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimedError {
    pub t: f64,
    pub err: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintySummary {
    pub dtau: f64,
    pub deps: f64,
    pub product: f64,
}

impl From<&UncertaintyReport> for UncertaintySummary {
    fn from(r: &UncertaintyReport) -> Self {
        Self {
            dtau: r.delta_tau,
            deps: r.delta_eps,
            product: r.product,
        }
    }
}

/// `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub spec: Option<ExampleSpec>,
    #[serde(rename = "N")]
    pub n_max: usize,
    pub completeness: f64,
    pub bound_rhs: Option<f64>,
    pub l2_error_vs_oracle: Vec<TimedError>,
    pub uncertainty: Option<UncertaintySummary>,
    /// Modes where the uncorrected shifted-ensemble formula departs from quadrature.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub formula_flags: Option<Vec<i64>>,
    /// Negative densities clamped to zero, summed over the written times.
    #[serde(default)]
    pub clamped: usize,
}
