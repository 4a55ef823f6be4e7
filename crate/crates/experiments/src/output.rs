//! CSV outputs.
//!
//! | file | header |
//! |------|--------|
//! | trace | `epoch,quantity,i,j,value` |
//! | kernel slice | `m,seed,theta,value,source` |
//! | gap report | `i,j,sup_dev,threshold,exceeded,first_exceed_epoch` |
//! | certificate | `kernel,n,fingerprint,lambda_min,tolerance,verdict` |
//!
//! Trace quantities are `f` and `u` (indexed by sample `i`), `K` (indexed by
//! the pair `i,j`), and the unindexed `V`, `lambda_min`, `theta_inf_dist` and
//! `loss`. Reals are written in Rust's shortest round-trip form, so reading
//! a file back reproduces every value bit for bit.

use std::fs::File;
use std::path::{Path, PathBuf};

use ntk_core::certify::{GapReport, SpdCertificate, Verdict};
use ntk_core::dynamics::TraceRecord;

use crate::error::{ExpError, Result};

pub const TRACE_HEADER: [&str; 5] = ["epoch", "quantity", "i", "j", "value"];
pub const SLICE_HEADER: [&str; 5] = ["m", "seed", "theta", "value", "source"];
pub const GAP_HEADER: [&str; 6] = ["i", "j", "sup_dev", "threshold", "exceeded", "first_exceed_epoch"];
pub const CERTIFICATE_HEADER: [&str; 6] = ["kernel", "n", "fingerprint", "lambda_min", "tolerance", "verdict"];

pub const TRACE_QUANTITIES: [&str; 7] = ["f", "u", "V", "lambda_min", "K", "theta_inf_dist", "loss"];

struct CsvFile {
    path: PathBuf,
    inner: csv::Writer<File>,
}

impl CsvFile {
    fn create(path: &Path, header: &[&str]) -> Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| ExpError::io(parent, e))?;
        }
        let file = File::create(path).map_err(|e| ExpError::io(path, e))?;
        let mut out = CsvFile {
            path: path.to_path_buf(),
            inner: csv::Writer::from_writer(file),
        };
        out.row(header)?;
        Ok(out)
    }

    fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.inner.write_record(fields).map_err(|e| ExpError::Csv {
            path: self.path.clone(),
            source: e,
        })
    }

    fn flush(&mut self) -> Result<()> {
        self.inner.flush().map_err(|e| ExpError::io(&self.path, e))
    }
}

fn opt(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Long-format trace, flushed after every record.
pub struct TraceWriter {
    csv: CsvFile,
    watch: Vec<(usize, usize)>,
}

impl TraceWriter {
    pub fn create(path: &Path, watch: &[(usize, usize)]) -> Result<Self> {
        Ok(TraceWriter {
            csv: CsvFile::create(path, &TRACE_HEADER)?,
            watch: watch.to_vec(),
        })
    }

    fn value(&mut self, epoch: usize, quantity: &str, i: Option<usize>, j: Option<usize>, v: f64) -> Result<()> {
        self.csv
            .row([epoch.to_string(), quantity.to_string(), opt(i), opt(j), v.to_string()])
    }

    pub fn write(&mut self, r: &TraceRecord) -> Result<()> {
        let e = r.epoch;
        for (i, &f) in r.outputs.iter().enumerate() {
            self.value(e, "f", Some(i), None, f)?;
        }
        for (i, &u) in r.residuals.iter().enumerate() {
            self.value(e, "u", Some(i), None, u)?;
        }
        self.value(e, "V", None, None, r.lyapunov)?;
        self.value(e, "lambda_min", None, None, r.lambda_min)?;
        for k in 0..self.watch.len() {
            let (i, j) = self.watch[k];
            self.value(e, "K", Some(i), Some(j), r.watched[k])?;
        }
        self.value(e, "theta_inf_dist", None, None, r.theta_inf_dist)?;
        self.value(e, "loss", None, None, r.loss)?;
        self.csv.flush()
    }
}

/// One row of a kernel-slice file.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceRow {
    /// Network width; 0 for analytic rows.
    pub m: usize,
    /// Initialization seed; 0 for analytic rows.
    pub seed: u64,
    pub theta: f64,
    pub value: f64,
    pub source: SliceSourceKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SliceSourceKind {
    Empirical,
    Analytic,
}

impl SliceSourceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SliceSourceKind::Empirical => "empirical",
            SliceSourceKind::Analytic => "analytic",
        }
    }
}

pub fn write_slice(path: &Path, rows: &[SliceRow]) -> Result<()> {
    let mut csv = CsvFile::create(path, &SLICE_HEADER)?;
    for r in rows {
        csv.row([
            r.m.to_string(),
            r.seed.to_string(),
            r.theta.to_string(),
            r.value.to_string(),
            r.source.as_str().to_string(),
        ])?;
    }
    csv.flush()
}

pub fn write_gap(path: &Path, report: &GapReport) -> Result<()> {
    let mut csv = CsvFile::create(path, &GAP_HEADER)?;
    for p in &report.pairs {
        csv.row([
            p.i.to_string(),
            p.j.to_string(),
            p.sup_dev.to_string(),
            report.threshold.to_string(),
            p.first_exceed_epoch.is_some().to_string(),
            opt(p.first_exceed_epoch),
        ])?;
    }
    csv.flush()
}

pub fn write_certificate(path: &Path, kernel: &str, cert: &SpdCertificate) -> Result<()> {
    let mut csv = CsvFile::create(path, &CERTIFICATE_HEADER)?;
    let verdict = match cert.verdict {
        Verdict::Certified => "certified",
        Verdict::Failed => "failed",
    };
    csv.row([
        kernel.to_string(),
        cert.n.to_string(),
        cert.fingerprint.clone(),
        cert.lambda_min.to_string(),
        cert.tolerance.to_string(),
        verdict.to_string(),
    ])?;
    csv.flush()
}

/// Write a small free-form `key,value` summary.
pub fn write_summary(path: &Path, entries: &[(String, String)]) -> Result<()> {
    let mut csv = CsvFile::create(path, &["key", "value"])?;
    for (k, v) in entries {
        csv.row([k, v])?;
    }
    csv.flush()
}

/// A parsed trace row.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub epoch: usize,
    pub quantity: String,
    pub i: Option<usize>,
    pub j: Option<usize>,
    pub value: f64,
}

fn open_checked(path: &Path, header: &[&str]) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| ExpError::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let found = rdr
        .headers()
        .map_err(|e| ExpError::Csv {
            path: path.to_path_buf(),
            source: e,
        })?
        .clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(ExpError::format(
            path,
            "header",
            format!("expected {:?}, found {:?}", header.join(","), found.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    Ok(rdr)
}

fn cell<T: std::str::FromStr>(path: &Path, line: usize, column: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| ExpError::format(path, column, format!("row {line}: cannot parse {raw:?}")))
}

fn optional_cell(path: &Path, line: usize, column: &str, raw: &str) -> Result<Option<usize>> {
    if raw.is_empty() {
        Ok(None)
    } else {
        cell(path, line, column, raw).map(Some)
    }
}

/// Read and validate a trace file.
pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let mut rdr = open_checked(path, &TRACE_HEADER)?;
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| ExpError::Csv {
            path: path.to_path_buf(),
            source: e,
        })?;
        let quantity = rec[1].to_string();
        if !TRACE_QUANTITIES.contains(&quantity.as_str()) {
            return Err(ExpError::format(path, "quantity", format!("row {line}: unknown {quantity:?}")));
        }
        rows.push(TraceRow {
            epoch: cell(path, line, "epoch", &rec[0])?,
            quantity,
            i: optional_cell(path, line, "i", &rec[2])?,
            j: optional_cell(path, line, "j", &rec[3])?,
            value: cell(path, line, "value", &rec[4])?,
        });
    }
    Ok(rows)
}

/// Read and validate a kernel-slice file.
pub fn read_slice(path: &Path) -> Result<Vec<SliceRow>> {
    let mut rdr = open_checked(path, &SLICE_HEADER)?;
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| ExpError::Csv {
            path: path.to_path_buf(),
            source: e,
        })?;
        let source = match &rec[4] {
            "empirical" => SliceSourceKind::Empirical,
            "analytic" => SliceSourceKind::Analytic,
            other => return Err(ExpError::format(path, "source", format!("row {line}: unknown {other:?}"))),
        };
        rows.push(SliceRow {
            m: cell(path, line, "m", &rec[0])?,
            seed: cell(path, line, "seed", &rec[1])?,
            theta: cell(path, line, "theta", &rec[2])?,
            value: cell(path, line, "value", &rec[3])?,
            source,
        });
    }
    Ok(rows)
}

/// A parsed gap-report row.
#[derive(Clone, Debug, PartialEq)]
pub struct GapRow {
    pub i: usize,
    pub j: usize,
    pub sup_dev: f64,
    pub threshold: f64,
    pub exceeded: bool,
    pub first_exceed_epoch: Option<usize>,
}

pub fn read_gap(path: &Path) -> Result<Vec<GapRow>> {
    let mut rdr = open_checked(path, &GAP_HEADER)?;
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| ExpError::Csv {
            path: path.to_path_buf(),
            source: e,
        })?;
        rows.push(GapRow {
            i: cell(path, line, "i", &rec[0])?,
            j: cell(path, line, "j", &rec[1])?,
            sup_dev: cell(path, line, "sup_dev", &rec[2])?,
            threshold: cell(path, line, "threshold", &rec[3])?,
            exceeded: cell(path, line, "exceeded", &rec[4])?,
            first_exceed_epoch: optional_cell(path, line, "first_exceed_epoch", &rec[5])?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ntk_core::certify::PairGap;

    fn record(epoch: usize) -> TraceRecord {
        TraceRecord {
            epoch,
            outputs: vec![0.1 + epoch as f64, -1.0 / 3.0],
            residuals: vec![0.4, 0.6],
            lyapunov: 1.2345678901234567,
            lyapunov_saturated: false,
            lambda_min: 1e-17,
            watched: vec![13.0, -0.1],
            theta_inf_dist: 0.0,
            loss: f64::NAN,
        }
    }

    #[test]
    fn trace_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/trace.csv");
        let mut w = TraceWriter::create(&path, &[(0, 0), (0, 1)]).unwrap();
        w.write(&record(0)).unwrap();
        w.write(&record(10)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("epoch,quantity,i,j,value\n0,f,0,,0.1\n"));
        let rows = read_trace(&path).unwrap();
        assert_eq!(rows.len(), 2 * 10);
        let v = rows.iter().find(|r| r.quantity == "V").unwrap();
        assert_eq!(v.value, 1.2345678901234567);
        assert_eq!((v.i, v.j), (None, None));
        let k = rows.iter().filter(|r| r.quantity == "K").nth(1).unwrap();
        assert_eq!((k.i, k.j, k.value), (Some(0), Some(1), -0.1));
        let f = rows.iter().find(|r| r.quantity == "f" && r.i == Some(1)).unwrap();
        assert_eq!(f.value, -1.0 / 3.0);
        assert!(rows.iter().find(|r| r.quantity == "loss").unwrap().value.is_nan());
    }

    #[test]
    fn trace_reader_rejects_schema_violations() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(&path, "epoch,i,j,value\n").unwrap();
        let err = read_trace(&path).unwrap_err();
        assert!(matches!(&err, ExpError::Format { field, .. } if field == "header"));
        std::fs::write(&path, "epoch,quantity,i,j,value\n0,f,0,,abc\n").unwrap();
        let err = read_trace(&path).unwrap_err();
        assert!(matches!(&err, ExpError::Format { field, .. } if field == "value"), "{err}");
        std::fs::write(&path, "epoch,quantity,i,j,value\n0,q,0,,1\n").unwrap();
        assert!(read_trace(&path).is_err());
    }

    #[test]
    fn slice_and_gap_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            SliceRow {
                m: 200,
                seed: 3,
                theta: -std::f64::consts::PI,
                value: 7.25,
                source: SliceSourceKind::Empirical,
            },
            SliceRow {
                m: 0,
                seed: 0,
                theta: 0.1,
                value: 13.0,
                source: SliceSourceKind::Analytic,
            },
        ];
        let sp = dir.path().join("slice.csv");
        write_slice(&sp, &rows).unwrap();
        assert_eq!(read_slice(&sp).unwrap(), rows);

        let report = GapReport {
            threshold: 0.01,
            exceeded: true,
            pairs: vec![
                PairGap {
                    i: 0,
                    j: 1,
                    sup_dev: 0.5,
                    first_exceed_epoch: Some(40),
                },
                PairGap {
                    i: 2,
                    j: 2,
                    sup_dev: 0.001,
                    first_exceed_epoch: None,
                },
            ],
        };
        let gp = dir.path().join("gap.csv");
        write_gap(&gp, &report).unwrap();
        let text = std::fs::read_to_string(&gp).unwrap();
        assert!(text.starts_with("i,j,sup_dev,threshold,exceeded,first_exceed_epoch\n0,1,0.5,0.01,true,40\n2,2,0.001,0.01,false,\n"));
        let back = read_gap(&gp).unwrap();
        assert_eq!(back[0].first_exceed_epoch, Some(40));
        assert!(!back[1].exceeded && back[1].first_exceed_epoch.is_none());
    }
}
