use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::Weights;

/// One row of a run trace. `eta` is the step size applied at iterate `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub loss: f64,
    pub eta: f64,
    /// `S_t` for schedule GD; absent for the other optimizers.
    #[serde(rename = "S")]
    pub s: Option<f64>,
    pub grad_norm: f64,
    pub w_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
    pub final_weights: Weights,
    pub seed: Option<u64>,
}

impl RunTrace {
    pub fn terminal_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.loss)
    }

    /// Writes `t,loss,eta,S,grad_norm,w_norm`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv_to(file).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })
    }

    pub fn write_csv_to<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        for record in &self.records {
            writer.serialize(record).map_err(csv_failure)?;
        }
        writer.flush().map_err(|e| Error::io("<trace>", e))
    }
}

/// Parses a trace CSV back into records.
pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_trace_from(file)
}

pub(crate) fn read_trace_from<R: Read>(input: R) -> Result<Vec<TraceRecord>> {
    let mut reader = csv::Reader::from_reader(input);
    let header = reader.headers().map_err(csv_failure)?.clone();
    let expected = ["t", "loss", "eta", "S", "grad_norm", "w_norm"];
    if header.iter().ne(expected) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {}, found {}", expected.join(","), header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    reader
        .deserialize()
        .map(|row| row.map_err(csv_failure))
        .collect()
}

pub(crate) fn csv_failure(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io("<csv>", source),
        kind => Error::Parse {
            line,
            message: format!("{kind:?}"),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_with_optional_s() {
        let trace = RunTrace {
            records: vec![
                TraceRecord { t: 0, loss: std::f64::consts::LN_2, eta: 1.0 / 3.0, s: Some(0.1), grad_norm: 0.5, w_norm: 0.0 },
                TraceRecord { t: 7, loss: 1e-300, eta: 100.0, s: None, grad_norm: 0.0, w_norm: 12.25 },
            ],
            final_weights: Weights::zeros(2),
            seed: Some(3),
        };
        let mut bytes = Vec::new();
        trace.write_csv_to(&mut bytes).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("t,loss,eta,S,grad_norm,w_norm\n"));
        assert!(text.lines().nth(2).unwrap().starts_with("7,1e-300,100.0,,"));
        assert_eq!(read_trace_from(bytes.as_slice()).unwrap(), trace.records);
    }

    #[test]
    fn wrong_header_is_rejected() {
        let err = read_trace_from("t,loss\n0,1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }
}
