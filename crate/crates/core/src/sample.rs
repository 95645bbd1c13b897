use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::Matrix;

/// Immutable columnar data set: outcome, scalar treatment, covariates,
/// optional instruments and optional observation weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    outcome: Vec<f64>,
    treatment: Vec<f64>,
    covariates: Matrix,
    instruments: Matrix,
    weights: Option<Vec<f64>>,
}

impl Sample {
    pub fn new(outcome: Vec<f64>, treatment: Vec<f64>, covariates: Matrix) -> Result<Self> {
        let n = outcome.len();
        if n == 0 {
            return Err(Error::invalid("sample", "at least one observation is required"));
        }
        if treatment.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: treatment.len(),
            });
        }
        if covariates.rows() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: covariates.rows(),
            });
        }
        if !outcome.iter().chain(&treatment).all(|x| x.is_finite()) || !covariates.is_finite() {
            return Err(Error::invalid("sample", "all entries must be finite"));
        }
        Ok(Self {
            outcome,
            treatment,
            covariates,
            instruments: Matrix::empty(n),
            weights: None,
        })
    }

    pub fn with_instruments(mut self, instruments: Matrix) -> Result<Self> {
        if instruments.rows() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: instruments.rows(),
            });
        }
        if !instruments.is_finite() {
            return Err(Error::invalid("instruments", "all entries must be finite"));
        }
        self.instruments = instruments;
        Ok(self)
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: weights.len(),
            });
        }
        if !weights.iter().all(|w| w.is_finite()) {
            return Err(Error::invalid("weights", "all weights must be finite"));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.outcome.len()
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn treatment(&self) -> &[f64] {
        &self.treatment
    }

    pub fn covariates(&self) -> &Matrix {
        &self.covariates
    }

    pub fn instruments(&self) -> &Matrix {
        &self.instruments
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    /// Same data with the outcome replaced (used for transformed outcomes).
    pub fn with_outcome(&self, outcome: Vec<f64>) -> Result<Self> {
        if outcome.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: outcome.len(),
            });
        }
        let mut s = self.clone();
        s.outcome = outcome;
        Ok(s)
    }

    /// Same data with the treatment replaced.
    pub fn with_treatment(&self, treatment: Vec<f64>) -> Result<Self> {
        if treatment.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: treatment.len(),
            });
        }
        let mut s = self.clone();
        s.treatment = treatment;
        Ok(s)
    }
}
