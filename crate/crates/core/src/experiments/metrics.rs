//! Append-only metrics CSV.
//!
//! Header `step,epoch,layer,metric,value,std,n`. `layer` is the 1-based
//! block index and, like `std` and `n`, is empty when it does not apply.
//! Floats are written in shortest round-trip form, so re-reading a file
//! gives back the exact values.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::alignment::AlignmentRecord;
use crate::{Error, Result};

pub const HEADER: &str = "step,epoch,layer,metric,value,std,n";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub step: u64,
    pub epoch: usize,
    pub layer: Option<usize>,
    pub metric: String,
    pub value: f64,
    pub std: Option<f64>,
    pub n: Option<usize>,
}

impl MetricRow {
    pub fn scalar(step: u64, epoch: usize, metric: &str, value: f64) -> Self {
        Self {
            step,
            epoch,
            layer: None,
            metric: metric.to_string(),
            value,
            std: None,
            n: None,
        }
    }

    /// The cosine row and the matching angle row for one record.
    pub fn alignment(epoch: usize, r: &AlignmentRecord) -> [Self; 2] {
        let base = Self {
            step: r.step,
            epoch,
            layer: Some(r.layer),
            metric: "align_cos".into(),
            value: r.mean_cos,
            std: Some(r.std_cos),
            n: Some(r.batch_size),
        };
        let deg = Self {
            metric: "align_deg".into(),
            value: r.mean_degrees(),
            std: None,
            ..base.clone()
        };
        [base, deg]
    }

    fn to_line(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.step,
            self.epoch,
            opt(self.layer.map(|v| v.to_string())),
            self.metric,
            self.value,
            opt(self.std.map(|v| v.to_string())),
            opt(self.n.map(|v| v.to_string())),
        )
    }
}

pub struct MetricsWriter {
    out: BufWriter<File>,
    path: PathBuf,
}

impl MetricsWriter {
    /// Creates (truncating) `path` and writes the header.
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = Self {
            out: BufWriter::new(file),
            path: path.to_path_buf(),
        };
        writeln!(w.out, "{HEADER}").map_err(|e| Error::io(path, e))?;
        Ok(w)
    }

    /// Opens an existing file for appending.
    pub fn append(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            out: BufWriter::new(file),
            path: path.to_path_buf(),
        })
    }

    pub fn write(&mut self, rows: &[MetricRow]) -> Result<()> {
        for r in rows {
            if r.metric.contains(',') || r.metric.contains('\n') {
                return Err(Error::Param(format!("metric name `{}` is not CSV-safe", r.metric)));
            }
            writeln!(self.out, "{}", r.to_line()).map_err(|e| Error::io(&self.path, e))?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .transpose()
        .map_err(|e| Error::io(path, e))?
        .unwrap_or_default();
    if header != HEADER {
        return Err(Error::format(path, format!("unexpected header `{header}`")));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let bad = || Error::format(path, format!("line {}: `{line}`", i + 2));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(bad());
        }
        let opt_usize = |s: &str| -> Result<Option<usize>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad())
            }
        };
        rows.push(MetricRow {
            step: f[0].parse().map_err(|_| bad())?,
            epoch: f[1].parse().map_err(|_| bad())?,
            layer: opt_usize(f[2])?,
            metric: f[3].to_string(),
            value: f[4].parse().map_err(|_| bad())?,
            std: if f[5].is_empty() {
                None
            } else {
                Some(f[5].parse().map_err(|_| bad())?)
            },
            n: opt_usize(f[6])?,
        });
    }
    Ok(rows)
}
