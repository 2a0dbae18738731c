//! Per-evaluation-point training records and their CSV form.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One evaluation point. Margins of an empty subset are NaN.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub avg_jsd: f64,
    pub jsd_majority_baseline: f64,
    pub jsd_reverse_baseline: f64,
    pub jsd_uniform_baseline: f64,
    pub jsd_noise_baseline: f64,
    pub margin_majority: f64,
    pub margin_minority: f64,
    pub margin_other: f64,
    pub loss_total: f64,
    pub loss_kl: f64,
    pub loss_pref: f64,
    pub loss_nll: f64,
}

pub const TRACE_COLUMNS: [&str; 13] = [
    "step",
    "avg_jsd",
    "jsd_majority_baseline",
    "jsd_reverse_baseline",
    "jsd_uniform_baseline",
    "jsd_noise_baseline",
    "margin_majority",
    "margin_minority",
    "margin_other",
    "loss_total",
    "loss_kl",
    "loss_pref",
    "loss_nll",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingTrace {
    pub records: Vec<TraceRecord>,
}

impl TrainingTrace {
    pub fn push(&mut self, r: TraceRecord) {
        debug_assert!(self.records.last().is_none_or(|l| l.step < r.step));
        self.records.push(r);
    }

    pub fn first(&self) -> Option<&TraceRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Least-squares slope of `avg_jsd` against step.
    pub fn jsd_slope(&self) -> f64 {
        let n = self.records.len() as f64;
        if n < 2.0 {
            return 0.0;
        }
        let mx = self.records.iter().map(|r| r.step as f64).sum::<f64>() / n;
        let my = self.records.iter().map(|r| r.avg_jsd).sum::<f64>() / n;
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for r in &self.records {
            let dx = r.step as f64 - mx;
            sxy += dx * (r.avg_jsd - my);
            sxx += dx * dx;
        }
        sxy / sxx
    }

    /// CSV text with the fixed header; header only when empty.
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.write_record(TRACE_COLUMNS).expect("in-memory write");
        for r in &self.records {
            w.serialize(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    pub fn from_csv(text: &str, path: &Path) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let header = rd.headers().map_err(|e| parse_err(path, 1, e))?;
        if header.iter().ne(TRACE_COLUMNS) {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: 1,
                message: "unexpected trace header".into(),
            });
        }
        let mut trace = TrainingTrace::default();
        for (i, rec) in rd.deserialize().enumerate() {
            trace.records.push(rec.map_err(|e| parse_err(path, i + 2, e))?);
        }
        Ok(trace)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, path)
    }
}

fn parse_err(path: &Path, line: usize, e: csv::Error) -> Error {
    Error::Parse {
        path: path.to_owned(),
        line,
        message: e.to_string(),
    }
}
