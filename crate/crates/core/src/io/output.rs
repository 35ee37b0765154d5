//! Trajectory and report serialization.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analysis::DiagnosticsReport;
use crate::error::{Error, Result};
use crate::simulator::{ClosedLoop, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::invalid(
                "format",
                format!("unknown format `{other}`, expected csv or json"),
            )),
        }
    }
}

pub const DIAGNOSTIC_COLUMNS: [&str; 5] = ["H", "Hbar", "dHbar_dt", "kkt_residual", "consensus_err"];

/// Column names in output order.
pub fn columns(cl: &ClosedLoop) -> Vec<String> {
    let lay = cl.layout();
    let mut out = vec!["t".to_string()];
    let mut push = |name: &str, count: usize| out.extend((1..=count).map(|i| format!("{name}_{i}")));
    push("eta", lay.m);
    push("omega", lay.n);
    push("Eq", lay.n);
    push("Pg", lay.n);
    push("Pd", lay.n);
    push("v", lay.mc);
    push(if cl.variant().uses_theta() { "theta" } else { "lambda" }, lay.n);
    push("mu", lay.l);
    push("mu_plus", lay.lines);
    push("mu_minus", lay.lines);
    out.extend(DIAGNOSTIC_COLUMNS.iter().map(|s| s.to_string()));
    out
}

/// One row per recorded sample; momenta are written as frequencies `ω = p/M`.
pub fn rows(cl: &ClosedLoop, traj: &Trajectory, diagnostics: &DiagnosticsReport) -> Result<Vec<Vec<f64>>> {
    if diagnostics.samples.len() != traj.len() {
        return Err(Error::dimension(
            "diagnostic samples",
            traj.len(),
            diagnostics.samples.len(),
        ));
    }
    let lay = cl.layout();
    Ok((0..traj.len())
        .map(|i| {
            let y = &traj.states[i];
            let d = &diagnostics.samples[i];
            let mut row = Vec::with_capacity(lay.len() + 6);
            row.push(traj.times[i]);
            row.extend_from_slice(&y[lay.eta()]);
            row.extend(cl.physical().omega(&y[lay.p()]));
            row.extend_from_slice(&y[lay.e_q().start..]);
            row.extend([
                d.hamiltonian,
                d.shifted,
                d.shifted_rate,
                d.kkt_residual,
                d.consensus_error,
            ]);
            row
        })
        .collect())
}

#[derive(Serialize)]
struct JsonTrajectory<'a> {
    columns: &'a [String],
    rows: &'a [Vec<f64>],
}

pub fn write_trajectory(
    path: impl AsRef<Path>,
    format: Format,
    cl: &ClosedLoop,
    traj: &Trajectory,
    diagnostics: &DiagnosticsReport,
) -> Result<()> {
    let header = columns(cl);
    let data = rows(cl, traj, diagnostics)?;
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
            w.write_record(&header).map_err(csv_error)?;
            for row in &data {
                w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_error)?;
            }
            w.flush()?;
        }
        Format::Json => write_json(
            path,
            &JsonTrajectory {
                columns: &header,
                rows: &data,
            },
        )?,
    }
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Parse(e.to_string()))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Header and numeric rows of a trajectory CSV.
pub fn read_trajectory_csv(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    let header = r.headers().map_err(csv_error)?.iter().map(str::to_string).collect();
    let mut data = Vec::new();
    for record in r.records() {
        let record = record.map_err(csv_error)?;
        let row = record
            .iter()
            .map(|v| v.parse::<f64>().map_err(|e| Error::Parse(format!("`{v}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        data.push(row);
    }
    Ok((header, data))
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse(format!("{other:?}")),
    }
}
