//! Logistic loss on a labelled dataset and the curvature quantities that
//! control it.
//!
//! All reductions run left to right over the samples so that repeated runs
//! produce bit-identical sums.

use std::ops::Deref;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Power iteration gives up after this many matrix-vector products.
pub const POWER_ITERATION_CAP: usize = 10_000;

const POWER_ITERATION_SEED: u64 = 0x5E_ED0F_4E55;

/// `ln(1 + e^z)` without overflow for large `z` or cancellation for very negative `z`.
#[inline]
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// The logistic function `1 / (1 + e^{-z})`.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `σ(z)σ(-z)`, the per-sample Hessian weight.
#[inline]
fn sigmoid_product(z: f64) -> f64 {
    let e = (-z.abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// A witness `(w*, γ)` for linear separability: `‖w*‖ = 1` and every sample
/// has signed margin at least `γ` along `w*`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginCertificate {
    direction: Vec<f64>,
    margin: f64,
}

impl MarginCertificate {
    pub const UNIT_TOLERANCE: f64 = 1e-12;

    pub fn new(direction: Vec<f64>, margin: f64) -> Result<Self> {
        if !(margin > 0.0 && margin.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "certificate margin must be positive, got {margin}"
            )));
        }
        if direction.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "certificate direction has non-finite entries".into(),
            ));
        }
        let len = norm(&direction);
        if (len - 1.0).abs() > Self::UNIT_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "certificate direction must be a unit vector, norm is {len}"
            )));
        }
        Ok(Self { direction, margin })
    }

    pub fn direction(&self) -> &[f64] {
        &self.direction
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn dim(&self) -> usize {
        self.direction.len()
    }

    /// The same certificate with the direction negated (and hence invalid).
    pub fn negated(&self) -> Self {
        Self {
            direction: self.direction.iter().map(|v| -v).collect(),
            margin: self.margin,
        }
    }

    /// Same direction, different claimed margin. The claim is not checked.
    pub fn with_margin(&self, margin: f64) -> Result<Self> {
        Self::new(self.direction.clone(), margin)
    }

    /// The comparator `(scale) · w*`.
    pub fn comparator(&self, scale: f64) -> Weights {
        Weights(self.direction.iter().map(|v| v * scale).collect())
    }
}

/// Parameter vector `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights(Vec<f64>);

impl Weights {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "weight entry {pos} is not finite"
            )));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Weights {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Samples `x_i` (rows of an `n × d` matrix) with labels `y_i ∈ {−1, +1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<f64>,
    dim: usize,
    certificate: Option<MarginCertificate>,
}

impl Dataset {
    /// Builds a dataset satisfying the normalization assumption `‖x_i‖ ≤ 1`.
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self> {
        let data = Self::from_rows_unnormalized(rows, labels)?;
        if let Some((i, len)) = data.max_row_norm() {
            if len > 1.0 {
                return Err(Error::InvalidInput(format!(
                    "row {i} has norm {len} > 1"
                )));
            }
        }
        Ok(data)
    }

    /// Like [`Dataset::new`] but accepts rows of any norm. Used when auditing
    /// external data; the optimizers reject such datasets.
    pub fn from_rows_unnormalized(rows: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidInput("dataset has no samples".into()));
        }
        if rows.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                actual: labels.len(),
            });
        }
        let dim = rows[0].len();
        if dim == 0 {
            return Err(Error::InvalidInput("samples have zero features".into()));
        }
        let mut features = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != dim {
                return Err(Error::InvalidInput(format!(
                    "row {i} has {} features, expected {dim}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("row {i} has non-finite entries")));
            }
            features.extend(row);
        }
        if let Some(i) = labels.iter().position(|&y| y != 1.0 && y != -1.0) {
            return Err(Error::InvalidInput(format!(
                "label {} at row {i} is not ±1",
                labels[i]
            )));
        }
        Ok(Self {
            features,
            labels,
            dim,
            certificate: None,
        })
    }

    /// Attaches a certificate after checking it against every sample.
    pub fn with_certificate(mut self, cert: MarginCertificate) -> Result<Self> {
        let min = min_margin(&self, cert.direction())?;
        if min < cert.margin() {
            return Err(Error::InvalidInput(format!(
                "certificate claims margin {} but the smallest sample margin is {min}",
                cert.margin()
            )));
        }
        self.certificate = Some(cert);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.dim)
    }

    pub fn certificate(&self) -> Option<&MarginCertificate> {
        self.certificate.as_ref()
    }

    /// Index and value of the largest row norm.
    pub fn max_row_norm(&self) -> Option<(usize, f64)> {
        self.rows()
            .map(norm)
            .enumerate()
            .fold(None, |acc, (i, v)| match acc {
                Some((_, best)) if best >= v => acc,
                _ => Some((i, v)),
            })
    }

    pub fn is_normalized(&self) -> bool {
        self.rows().all(|r| norm(r) <= 1.0)
    }

    /// Signed margin `y_i⟨x_i, w⟩`.
    #[inline]
    pub fn margin(&self, w: &[f64], i: usize) -> f64 {
        self.labels[i] * dot(self.row(i), w)
    }

    pub(crate) fn check_dim(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: w.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.n() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.n(),
            });
        }
        Ok(())
    }
}

/// `min_i y_i⟨x_i, direction⟩`.
pub(crate) fn min_margin(data: &Dataset, direction: &[f64]) -> Result<f64> {
    data.check_dim(direction)?;
    Ok((0..data.n())
        .map(|i| data.margin(direction, i))
        .fold(f64::INFINITY, f64::min))
}

/// Empirical logistic loss `(1/n) Σ ln(1 + exp(−y_i⟨x_i, w⟩))`.
pub fn full_loss(w: &[f64], data: &Dataset) -> Result<f64> {
    data.check_dim(w)?;
    Ok(full_loss_unchecked(w, data))
}

pub(crate) fn full_loss_unchecked(w: &[f64], data: &Dataset) -> f64 {
    let sum: f64 = (0..data.n()).map(|i| softplus(-data.margin(w, i))).sum();
    sum / data.n() as f64
}

/// Fills `out` with every per-sample loss at `w` and returns their mean.
pub(crate) fn sample_losses_into(w: &[f64], data: &Dataset, out: &mut Vec<f64>) -> f64 {
    out.clear();
    out.extend((0..data.n()).map(|i| softplus(-data.margin(w, i))));
    out.iter().sum::<f64>() / data.n() as f64
}

/// Loss of a single sample, `ln(1 + exp(−y_i⟨x_i, w⟩))`.
pub fn sample_loss(w: &[f64], data: &Dataset, i: usize) -> Result<f64> {
    data.check_dim(w)?;
    data.check_index(i)?;
    Ok(softplus(-data.margin(w, i)))
}

/// `(1/n) Σ σ(−y_i⟨x_i, w⟩)(−y_i x_i)`.
pub fn full_gradient(w: &[f64], data: &Dataset) -> Result<Vec<f64>> {
    data.check_dim(w)?;
    let mut grad = vec![0.0; data.dim()];
    full_gradient_into(w, data, &mut grad);
    Ok(grad)
}

/// Gradient into a preallocated buffer; returns the loss computed on the same pass.
pub(crate) fn full_gradient_into(w: &[f64], data: &Dataset, grad: &mut [f64]) -> f64 {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut loss = 0.0;
    for i in 0..data.n() {
        let m = data.margin(w, i);
        loss += softplus(-m);
        let coeff = -sigmoid(-m) * data.label(i);
        for (g, x) in grad.iter_mut().zip(data.row(i)) {
            *g += coeff * x;
        }
    }
    let inv_n = 1.0 / data.n() as f64;
    grad.iter_mut().for_each(|g| *g *= inv_n);
    loss * inv_n
}

/// `σ(−y_i⟨x_i, w⟩)(−y_i x_i)`.
pub fn sample_gradient(w: &[f64], data: &Dataset, i: usize) -> Result<Vec<f64>> {
    data.check_dim(w)?;
    data.check_index(i)?;
    let coeff = -sigmoid(-data.margin(w, i)) * data.label(i);
    Ok(data.row(i).iter().map(|x| coeff * x).collect())
}

/// Exponential loss average `(1/n) Σ exp(−y_i⟨x_i, w⟩)`.
pub fn exp_loss(w: &[f64], data: &Dataset) -> Result<f64> {
    data.check_dim(w)?;
    let mut sum = 0.0;
    for i in 0..data.n() {
        let m = data.margin(w, i);
        if -m > 700.0 {
            return Err(Error::Range { index: i, margin: m });
        }
        sum += (-m).exp();
    }
    Ok(sum / data.n() as f64)
}

/// Largest eigenvalue of the loss Hessian at `w`, by power iteration on
/// sample-wise matrix-vector products (the Hessian is never formed).
///
/// Stops when successive Rayleigh quotients agree to relative `tol`.
pub fn hessian_max_eigenvalue(w: &[f64], data: &Dataset, tol: f64) -> Result<f64> {
    data.check_dim(w)?;
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("tolerance must be positive, got {tol}")));
    }
    let weights: Vec<f64> = (0..data.n())
        .map(|i| sigmoid_product(data.margin(w, i)) / data.n() as f64)
        .collect();
    let apply = |v: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &c) in weights.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let row = data.row(i);
            let proj = c * dot(row, v);
            for (o, x) in out.iter_mut().zip(row) {
                *o += proj * x;
            }
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(POWER_ITERATION_SEED ^ data.dim() as u64);
    let mut v: Vec<f64> = (0..data.dim()).map(|_| rng.random::<f64>() - 0.5).collect();
    let len = norm(&v);
    v.iter_mut().for_each(|x| *x /= len);
    let mut hv = vec![0.0; data.dim()];
    let mut previous = f64::NAN;
    for _ in 0..POWER_ITERATION_CAP {
        apply(&v, &mut hv);
        let rayleigh = dot(&v, &hv);
        let len = norm(&hv);
        if len == 0.0 {
            return Ok(0.0);
        }
        if (rayleigh - previous).abs() <= tol * rayleigh.abs() {
            return Ok(rayleigh);
        }
        previous = rayleigh;
        for (x, h) in v.iter_mut().zip(&hv) {
            *x = h / len;
        }
    }
    Err(Error::NoConvergence {
        iterations: POWER_ITERATION_CAP,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_sample(x: Vec<f64>, y: f64) -> Dataset {
        Dataset::new(vec![x], vec![y]).unwrap()
    }

    #[test]
    fn softplus_is_stable_at_extremes() {
        assert_eq!(softplus(1e4), 1e4);
        assert!(softplus(-1e4) >= 0.0);
        assert!(softplus(800.0).is_finite());
        // ln(1 + e^{-50}) from a 40-digit evaluation.
        let v = softplus(-50.0);
        assert!((v - 1.928_749_847_963_917_8e-22).abs() <= 1e-12 * 1.93e-22);
    }

    #[test]
    fn loss_at_origin_is_ln2() {
        let data = Dataset::new(
            vec![vec![0.3, -0.1], vec![0.0, 0.9], vec![-0.5, 0.5]],
            vec![1.0, -1.0, 1.0],
        )
        .unwrap();
        let w = [0.0, 0.0];
        assert!((full_loss(&w, &data).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        for i in 0..3 {
            assert_eq!(sample_loss(&w, &data, i).unwrap(), std::f64::consts::LN_2);
        }
    }

    #[test]
    fn loss_decays_along_separating_direction() {
        let data = one_sample(vec![1.0], 1.0);
        let mut last = f64::INFINITY;
        for z in [1.0, 10.0, 100.0, 1000.0, 1e4] {
            let l = full_loss(&[z], &data).unwrap();
            assert!(l >= 0.0 && (l < last || l == 0.0));
            last = l;
        }
        assert_eq!(full_loss(&[1e4], &data).unwrap(), 0.0);
    }

    #[test]
    fn gradient_at_origin_is_half_label_mean() {
        let data = Dataset::new(
            vec![vec![0.3, -0.1], vec![0.0, 0.9]],
            vec![1.0, -1.0],
        )
        .unwrap();
        let g = full_gradient(&[0.0, 0.0], &data).unwrap();
        let expected = [-(0.3 - 0.0) / 4.0, -(-0.1 - 0.9) / 4.0];
        for (a, b) in g.iter().zip(expected) {
            assert!((a - b).abs() < 1e-16);
        }
        let gi = sample_gradient(&[0.0, 0.0], &data, 1).unwrap();
        assert_eq!(gi, vec![0.0, 0.45]);
    }

    #[test]
    fn single_sample_hessian_at_origin_is_quarter() {
        let data = one_sample(vec![1.0, 0.0], 1.0);
        let lambda = hessian_max_eigenvalue(&[0.0, 0.0], &data, 1e-12).unwrap();
        assert!((lambda - 0.25).abs() < 1e-12);
    }

    #[test]
    fn errors_on_bad_dimensions_and_indices() {
        let data = one_sample(vec![1.0, 0.0], 1.0);
        assert!(matches!(
            full_loss(&[0.0], &data),
            Err(Error::DimensionMismatch { expected: 2, actual: 1 })
        ));
        assert!(matches!(
            sample_loss(&[0.0, 0.0], &data, 1),
            Err(Error::IndexOutOfRange { index: 1, len: 1 })
        ));
        assert!(sample_gradient(&[0.0, 0.0], &data, 3).is_err());
        assert!(hessian_max_eigenvalue(&[0.0, 0.0], &data, 0.0).is_err());
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(vec![vec![1.5]], vec![1.0]).is_err());
        assert!(Dataset::from_rows_unnormalized(vec![vec![1.5]], vec![1.0]).is_ok());
        assert!(Dataset::new(vec![vec![0.5]], vec![0.0]).is_err());
        assert!(Dataset::new(vec![vec![0.5], vec![0.1, 0.2]], vec![1.0, 1.0]).is_err());
        let cert = MarginCertificate::new(vec![1.0], 0.5).unwrap();
        let data = one_sample(vec![0.5], 1.0);
        assert!(data.clone().with_certificate(cert.clone()).is_ok());
        assert!(data.with_certificate(cert.with_margin(0.6).unwrap()).is_err());
        assert!(MarginCertificate::new(vec![0.5, 0.5], 0.1).is_err());
        assert!(MarginCertificate::new(vec![1.0], 0.0).is_err());
    }

    #[test]
    fn comparator_loss_is_below_exp_minus_beta() {
        let rows = vec![vec![0.6, 0.2], vec![-0.4, -0.7], vec![0.9, -0.3]];
        let labels = vec![1.0, -1.0, 1.0];
        let cert = MarginCertificate::new(vec![1.0, 0.0], 0.4).unwrap();
        let data = Dataset::new(rows, labels).unwrap().with_certificate(cert.clone()).unwrap();
        for beta in [0.5, 2.0, 10.0, 40.0] {
            let u = cert.comparator(beta / cert.margin());
            assert!(full_loss(&u, &data).unwrap() <= (-beta).exp());
            assert!(exp_loss(&u, &data).unwrap() <= (-beta).exp() * (1.0 + 1e-15));
        }
    }

    #[test]
    fn exp_loss_examples() {
        let data = Dataset::new(vec![vec![1.0], vec![1.0]], vec![1.0, -1.0]).unwrap();
        assert_eq!(exp_loss(&[0.0], &data).unwrap(), 1.0);
        let cosh1 = exp_loss(&[1.0], &data).unwrap();
        assert!((cosh1 - 1.543_080_634_815_243_7).abs() < 1e-15);
        assert!(matches!(exp_loss(&[800.0], &data), Err(Error::Range { index: 1, .. })));
    }
}
