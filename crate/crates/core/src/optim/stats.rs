use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::trace::csv_failure;

/// Outcome of a stopping-time search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum HitTime {
    /// First iteration meeting the tolerance.
    Hit(usize),
    /// The run stopped at this iteration without meeting it.
    Censored(usize),
}

impl HitTime {
    pub fn hit(self) -> Option<usize> {
        match self {
            HitTime::Hit(t) => Some(t),
            HitTime::Censored(_) => None,
        }
    }

    pub fn is_censored(self) -> bool {
        matches!(self, HitTime::Censored(_))
    }

    /// The hit time, or the censoring iteration.
    pub fn time(self) -> usize {
        match self {
            HitTime::Hit(t) | HitTime::Censored(t) => t,
        }
    }
}

/// One row of `seed,tau,censored,epsilon,bound`; `tau` is the cap when censored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HittingRow {
    pub seed: u64,
    pub tau: usize,
    pub censored: u8,
    pub epsilon: f64,
    pub bound: f64,
}

/// Hitting times across seeds with the expectation bound they are checked against.
#[derive(Debug, Clone, PartialEq)]
pub struct HittingStats {
    /// Sorted by seed, then outcome, so that merges commute.
    taus: Vec<(u64, HitTime)>,
    pub epsilon: f64,
    pub bound_expectation: f64,
    pub n: usize,
    pub gamma: f64,
}

impl HittingStats {
    pub fn new(epsilon: f64, n: usize, gamma: f64) -> Self {
        Self {
            taus: Vec::new(),
            epsilon,
            bound_expectation: super::sgd::sgd_expectation_bound(n, gamma, epsilon),
            n,
            gamma,
        }
    }

    pub fn push(&mut self, seed: u64, tau: HitTime) {
        let at = self.taus.partition_point(|entry| *entry < (seed, tau));
        self.taus.insert(at, (seed, tau));
    }

    /// Order-independent union of two seed sets.
    pub fn merge(mut self, other: HittingStats) -> Result<HittingStats> {
        if self.epsilon != other.epsilon || self.n != other.n || self.gamma != other.gamma {
            return Err(Error::InvalidInput(
                "cannot merge hitting statistics from different settings".into(),
            ));
        }
        for (seed, tau) in other.taus {
            self.push(seed, tau);
        }
        Ok(self)
    }

    pub fn taus(&self) -> &[(u64, HitTime)] {
        &self.taus
    }

    pub fn censored_count(&self) -> usize {
        self.taus.iter().filter(|(_, t)| t.is_censored()).count()
    }

    /// Mean over all runs, counting a censored run at its cap (a lower bound on
    /// the true mean when anything is censored).
    pub fn mean_tau(&self) -> Option<f64> {
        if self.taus.is_empty() {
            return None;
        }
        Some(self.taus.iter().map(|(_, t)| t.time() as f64).sum::<f64>() / self.taus.len() as f64)
    }

    /// Fraction of runs that hit strictly before `threshold`.
    pub fn fraction_below(&self, threshold: f64) -> f64 {
        if self.taus.is_empty() {
            return 0.0;
        }
        let below = self
            .taus
            .iter()
            .filter(|(_, t)| t.hit().is_some_and(|tau| (tau as f64) < threshold))
            .count();
        below as f64 / self.taus.len() as f64
    }

    /// Fraction of runs with `τ < bound/δ`, the Markov-inequality event.
    pub fn fraction_below_markov(&self, delta: f64) -> f64 {
        self.fraction_below(self.bound_expectation / delta)
    }

    pub fn rows(&self) -> Vec<HittingRow> {
        self.taus
            .iter()
            .map(|&(seed, tau)| HittingRow {
                seed,
                tau: tau.time(),
                censored: u8::from(tau.is_censored()),
                epsilon: self.epsilon,
                bound: self.bound_expectation,
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv_to(file)
    }

    pub fn write_csv_to<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        if self.taus.is_empty() {
            writer
                .write_record(["seed", "tau", "censored", "epsilon", "bound"])
                .map_err(csv_failure)?;
        }
        for row in self.rows() {
            writer.serialize(row).map_err(csv_failure)?;
        }
        writer.flush().map_err(|e| Error::io("<hitting stats>", e))
    }

    pub fn read_rows(path: &Path) -> Result<Vec<HittingRow>> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        read_rows_from(file)
    }
}

pub(crate) fn read_rows_from<R: Read>(input: R) -> Result<Vec<HittingRow>> {
    let mut reader = csv::Reader::from_reader(input);
    reader.deserialize().map(|r| r.map_err(csv_failure)).collect()
}
