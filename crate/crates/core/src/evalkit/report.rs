//! Report files: per-method traces, a metrics table and plot data.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::MetricReport;
use crate::error::{Error, Result};
use crate::train::{TraceRecord, TrainingTrace};

pub const METRICS_COLUMNS: [&str; 6] = ["method", "jsd", "cbc", "bpc", "rs", "n"];

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: String,
    pub jsd: f64,
    pub cbc: f64,
    pub bpc: f64,
    pub rs: f64,
    pub n: usize,
}

impl MethodMetrics {
    pub fn new(method: impl Into<String>, r: &MetricReport) -> Self {
        Self {
            method: method.into(),
            jsd: r.jsd,
            cbc: r.cbc,
            bpc: r.bpc,
            rs: r.rs,
            n: r.n,
        }
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Parse {
        path: path.to_owned(),
        line: e.position().map_or(0, |p| p.line() as usize),
        message: e.to_string(),
    }
}

pub fn write_metrics_csv(rows: &[MethodMetrics], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    w.write_record(METRICS_COLUMNS).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MethodMetrics>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?;
    if header.iter().ne(METRICS_COLUMNS) {
        return Err(Error::Parse {
            path: path.to_owned(),
            line: 1,
            message: format!("expected columns {METRICS_COLUMNS:?}"),
        });
    }
    r.deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| csv_err(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSeries {
    pub name: String,
    /// "method" or "baseline".
    pub kind: String,
    pub x: Vec<usize>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<PlotSeries>,
}

type Column = fn(&TraceRecord) -> f64;

const BASELINES: [(&str, Column); 4] = [
    ("majority", |r| r.jsd_majority_baseline),
    ("reverse", |r| r.jsd_reverse_baseline),
    ("uniform", |r| r.jsd_uniform_baseline),
    ("noise", |r| r.jsd_noise_baseline),
];

/// One series per method trace, then the four reference baselines taken
/// from the first trace.
pub fn plot_data(traces: &[(String, TrainingTrace)]) -> PlotData {
    let mut series: Vec<PlotSeries> = traces
        .iter()
        .map(|(name, t)| PlotSeries {
            name: name.clone(),
            kind: "method".into(),
            x: t.records.iter().map(|r| r.step).collect(),
            y: t.records.iter().map(|r| r.avg_jsd).collect(),
        })
        .collect();
    let first = traces.first().map(|(_, t)| t.records.as_slice()).unwrap_or(&[]);
    for (name, get) in BASELINES {
        series.push(PlotSeries {
            name: format!("{name} baseline"),
            kind: "baseline".into(),
            x: first.iter().map(|r| r.step).collect(),
            y: first.iter().map(get).collect(),
        });
    }
    PlotData {
        x_label: "step".into(),
        y_label: "avg_jsd".into(),
        series,
    }
}

const PLOT_SCRIPT: &str = r#"# Renders plot_data.json; requires matplotlib.
import json
import matplotlib.pyplot as plt

data = json.load(open("plot_data.json"))
for s in data["series"]:
    style = "--" if s["kind"] == "baseline" else "-"
    plt.plot(s["x"], s["y"], style, label=s["name"])
plt.xlabel(data["x_label"])
plt.ylabel(data["y_label"])
plt.legend()
plt.savefig("jsd.png", dpi=150)
"#;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFiles {
    pub traces: Vec<PathBuf>,
    pub metrics: PathBuf,
    pub plot_data: PathBuf,
    pub plot_script: PathBuf,
}

/// Writes `trace_<method>.csv` per trace, `metrics.csv`, `plot_data.json`
/// and `plot.py` into `dir`.
pub fn emit_report(
    traces: &[(String, TrainingTrace)],
    metrics: &[MethodMetrics],
    dir: &Path,
) -> Result<ReportFiles> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut trace_paths = Vec::with_capacity(traces.len());
    for (name, t) in traces {
        let p = dir.join(format!("trace_{name}.csv"));
        t.write_csv(&p)?;
        trace_paths.push(p);
    }
    let metrics_path = dir.join("metrics.csv");
    write_metrics_csv(metrics, &metrics_path)?;
    let plot_path = dir.join("plot_data.json");
    let json = serde_json::to_string_pretty(&plot_data(traces)).expect("plot data serializes");
    fs::write(&plot_path, json + "\n").map_err(|e| Error::io(&plot_path, e))?;
    let script = dir.join("plot.py");
    fs::write(&script, PLOT_SCRIPT).map_err(|e| Error::io(&script, e))?;
    Ok(ReportFiles {
        traces: trace_paths,
        metrics: metrics_path,
        plot_data: plot_path,
        plot_script: script,
    })
}
