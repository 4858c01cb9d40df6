//! Separable dataset generation, CSV ingestion and margin certificates.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{dot, min_margin, norm, Dataset, MarginCertificate};

/// Parameters of a synthetic separable dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenParams {
    pub dim: usize,
    pub count: usize,
    pub margin: f64,
    pub seed: u64,
}

impl GenParams {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.count == 0 {
            return Err(Error::InvalidInput(format!(
                "dimension and count must be positive (dim={}, count={})",
                self.dim, self.count
            )));
        }
        if !(self.margin > 0.0 && self.margin < 1.0) {
            return Err(Error::InvalidInput(format!(
                "margin must lie in (0, 1) for unit-norm features, got {}",
                self.margin
            )));
        }
        Ok(())
    }
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let len = norm(&v);
        if len > 1e-8 {
            return v.into_iter().map(|x| x / len).collect();
        }
    }
}

/// Draws a labelled, margin-certified dataset.
///
/// A unit direction `w*` is drawn from the sphere and points are drawn
/// uniformly from the unit ball. Each point's component along `w*` is pushed
/// out of the slab `|⟨x, w*⟩| < γ` via `m ↦ γ + (1 − γ)|m|`, keeping its side,
/// and the orthogonal part is shrunk so the point stays in the ball. The
/// label is the side. The stream is ChaCha8 seeded from `params.seed`.
pub fn generate_separable(params: &GenParams) -> Result<Dataset> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let dim = params.dim;
    let gamma = params.margin;
    let direction = random_unit(&mut rng, dim);

    let mut rows = Vec::with_capacity(params.count);
    let mut labels = Vec::with_capacity(params.count);
    while rows.len() < params.count {
        let radius = rng.random::<f64>().powf(1.0 / dim as f64);
        let mut point: Vec<f64> = random_unit(&mut rng, dim)
            .into_iter()
            .map(|x| x * radius)
            .collect();
        let along = dot(&point, &direction);
        let side = if along >= 0.0 { 1.0 } else { -1.0 };
        let pushed = gamma + (1.0 - gamma) * along.abs();
        let room = 1.0 - along * along;
        let shrink = if room > 0.0 {
            ((1.0 - pushed * pushed).max(0.0) / room).sqrt()
        } else {
            0.0
        };
        for (p, w) in point.iter_mut().zip(&direction) {
            let orth = *p - along * w;
            *p = side * pushed * w + shrink * orth;
        }
        // Rounding can leave a point an ulp short of the slab or the ball;
        // such draws are discarded.
        if side * dot(&point, &direction) >= gamma && norm(&point) <= 1.0 {
            rows.push(point);
            labels.push(side);
        }
    }
    let cert = MarginCertificate::new(direction, gamma)?;
    Dataset::new(rows, labels)?.with_certificate(cert)
}

/// Smallest signed margin `min_i y_i⟨x_i, w*⟩`; the certificate holds iff this
/// is at least `cert.margin()`.
pub fn verify_margin(data: &Dataset, cert: &MarginCertificate) -> Result<f64> {
    min_margin(data, cert.direction())
}

/// Finds a separating direction with the perceptron and certifies its
/// (normalized) smallest margin. The result is a lower bound on the maximum
/// margin, which is all the step-size schedules need.
pub fn estimate_margin(data: &Dataset, max_epochs: usize) -> Result<MarginCertificate> {
    let mut w = vec![0.0; data.dim()];
    for _ in 0..max_epochs {
        let mut mistakes = 0usize;
        for i in 0..data.n() {
            if data.margin(&w, i) <= 0.0 {
                let y = data.label(i);
                for (wj, xj) in w.iter_mut().zip(data.row(i)) {
                    *wj += y * xj;
                }
                mistakes += 1;
            }
        }
        if mistakes == 0 {
            let len = norm(&w);
            let direction: Vec<f64> = w.iter().map(|v| v / len).collect();
            let margin = min_margin(data, &direction)?;
            if margin > 0.0 {
                return MarginCertificate::new(direction, margin);
            }
        }
    }
    Err(Error::NotSeparable { epochs: max_epochs })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CsvOptions {
    /// Skip one header line.
    pub skip_header: bool,
    /// Leave features untouched instead of dividing by the largest row norm.
    pub keep_scale: bool,
}

/// A dataset read from CSV with the factor its features were multiplied by.
#[derive(Debug, Clone)]
pub struct LoadedCsv {
    pub dataset: Dataset,
    pub scale: f64,
}

fn parse_label(field: &str, line: usize) -> Result<f64> {
    let value: f64 = field.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("label {field:?} is not numeric"),
    })?;
    match value {
        1.0 => Ok(1.0),
        0.0 | -1.0 => Ok(-1.0),
        _ => Err(Error::Parse {
            line,
            message: format!("label {field:?} is not one of 0, 1, -1, +1"),
        }),
    }
}

/// Reads `label,feature_1,…,feature_d` rows. Labels in {0, 1} or {−1, +1}
/// map to ±1. Unless `keep_scale` is set, every feature is divided by the
/// largest row norm so that all rows end up in the unit ball.
pub fn load_csv(path: &Path, options: CsvOptions) -> Result<LoadedCsv> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(options.skip_header)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() < 2 {
            return Err(Error::Parse {
                line,
                message: "expected a label and at least one feature".into(),
            });
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::Parse {
                    line,
                    message: format!("row has {} fields, expected {w}", record.len()),
                })
            }
            _ => {}
        }
        labels.push(parse_label(&record[0], line)?);
        let features = record
            .iter()
            .skip(1)
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse {
                        line,
                        message: format!("feature {f:?} is not a finite number"),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(features);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "no data rows".into(),
        });
    }

    let mut scale = 1.0;
    if !options.keep_scale {
        let max = rows.iter().map(|r| norm(r)).fold(0.0, f64::max);
        if max > 0.0 {
            scale = 1.0 / max;
            let mut scaled = scale_rows(&rows, scale);
            // Division can leave a row norm at 1 + ulp.
            while scaled.iter().any(|r| norm(r) > 1.0) {
                scale *= 1.0 - f64::EPSILON;
                scaled = scale_rows(&rows, scale);
            }
            rows = scaled;
        }
        let dataset = Dataset::new(rows, labels)?;
        return Ok(LoadedCsv { dataset, scale });
    }
    let dataset = Dataset::from_rows_unnormalized(rows, labels)?;
    Ok(LoadedCsv { dataset, scale })
}

fn scale_rows(rows: &[Vec<f64>], scale: f64) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| r.iter().map(|v| v * scale).collect())
        .collect()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::Parse {
            line: line.unwrap_or(0),
            message: format!("{other:?}"),
        },
    }
}

/// Writes the dataset in the same layout [`load_csv`] reads.
pub fn write_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(data.n() * (data.dim() + 1) * 12);
    for (i, row) in data.rows().enumerate() {
        out.push_str(if data.label(i) > 0.0 { "1" } else { "-1" });
        for v in row {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CertificateFile {
    margin: f64,
    direction: Vec<f64>,
}

/// Certificate sidecar: a TOML table with `margin` and `direction`.
pub fn write_certificate(cert: &MarginCertificate, path: &Path) -> Result<()> {
    let file = CertificateFile {
        margin: cert.margin(),
        direction: cert.direction().to_vec(),
    };
    let text = toml::to_string(&file).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_certificate(path: &Path) -> Result<MarginCertificate> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CertificateFile = toml::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    MarginCertificate::new(file.direction, file.margin)
}
