//! Per-iteration trace records and sinks.
//!
//! CSV columns, in order: `iter, theta_0..theta_{d-1}, n_particles,
//! log_lik_est, accepted, recycled_loglik, sigma_hat`. `sigma_hat` is blank
//! except on epoch-boundary rows, where `n_particles` is the value in force
//! after the boundary update. An epoch invalidated by a zero estimate is
//! written as `NaN`.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub iter: u64,
    pub theta: Vec<f64>,
    pub n_particles: usize,
    pub log_lik_est: f64,
    pub accepted: bool,
    pub recycled_log_lik: Option<f64>,
    pub sigma_hat: Option<f64>,
}

pub trait TraceSink {
    fn record(&mut self, rec: &TraceRecord) -> Result<()>;

    fn flush(&mut self) -> Result<()> {
        Ok(())
    }
}

/// Discards records.
pub struct NullSink;

impl TraceSink for NullSink {
    fn record(&mut self, _rec: &TraceRecord) -> Result<()> {
        Ok(())
    }
}

/// Keeps every record in memory.
#[derive(Default)]
pub struct MemorySink {
    pub records: Vec<TraceRecord>,
}

impl TraceSink for MemorySink {
    fn record(&mut self, rec: &TraceRecord) -> Result<()> {
        self.records.push(rec.clone());
        Ok(())
    }
}

pub fn header(dim: usize) -> String {
    let mut h = String::from("iter");
    for i in 0..dim {
        h.push_str(&format!(",theta_{i}"));
    }
    h.push_str(",n_particles,log_lik_est,accepted,recycled_loglik,sigma_hat");
    h
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub struct CsvTraceSink<W: Write> {
    out: BufWriter<W>,
    dim: usize,
}

impl<W: Write> CsvTraceSink<W> {
    pub fn new(out: W, dim: usize) -> Result<Self> {
        let mut out = BufWriter::new(out);
        writeln!(out, "{}", header(dim))?;
        Ok(Self { out, dim })
    }

    pub fn into_inner(self) -> Result<W> {
        self.out.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

impl CsvTraceSink<std::fs::File> {
    pub fn create(path: &Path, dim: usize) -> Result<Self> {
        Self::new(std::fs::File::create(path)?, dim)
    }
}

impl<W: Write> TraceSink for CsvTraceSink<W> {
    fn record(&mut self, rec: &TraceRecord) -> Result<()> {
        debug_assert_eq!(rec.theta.len(), self.dim);
        write!(self.out, "{}", rec.iter)?;
        for x in &rec.theta {
            write!(self.out, ",{x}")?;
        }
        writeln!(
            self.out,
            ",{},{},{},{},{}",
            rec.n_particles,
            rec.log_lik_est,
            u8::from(rec.accepted),
            opt(rec.recycled_log_lik),
            opt(rec.sigma_hat)
        )?;
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

fn parse_f64(s: &str) -> std::result::Result<f64, String> {
    s.parse::<f64>().map_err(|e| format!("{s:?}: {e}"))
}

/// Reads a trace CSV written by [`CsvTraceSink`].
pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRecord>> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path)?;
    let mut lines = std::io::BufReader::new(file).lines();
    let head = lines.next().transpose()?.unwrap_or_default();
    let cols: Vec<&str> = head.split(',').collect();
    let dim = cols.len().saturating_sub(6);
    if cols.len() < 7 || head != header(dim) {
        return Err(Error::Parse {
            path: display,
            line: 1,
            msg: "not a trace header".into(),
        });
    }
    let mut out = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line?;
        let lineno = idx as u64 + 2;
        let fields: Vec<&str> = line.split(',').collect();
        let parsed = (|| -> std::result::Result<TraceRecord, String> {
            if fields.len() != dim + 6 {
                return Err(format!("expected {} fields", dim + 6));
            }
            let theta = fields[1..=dim]
                .iter()
                .map(|s| parse_f64(s))
                .collect::<std::result::Result<_, _>>()?;
            let optional = |s: &str| {
                if s.is_empty() {
                    Ok(None)
                } else {
                    parse_f64(s).map(Some)
                }
            };
            Ok(TraceRecord {
                iter: fields[0].parse().map_err(|e| format!("iter: {e}"))?,
                theta,
                n_particles: fields[dim + 1].parse().map_err(|e| format!("n: {e}"))?,
                log_lik_est: parse_f64(fields[dim + 2])?,
                accepted: fields[dim + 3] == "1",
                recycled_log_lik: optional(fields[dim + 4])?,
                sigma_hat: optional(fields[dim + 5])?,
            })
        })();
        out.push(parsed.map_err(|msg| Error::Parse {
            path: display.clone(),
            line: lineno,
            msg,
        })?);
    }
    Ok(out)
}
