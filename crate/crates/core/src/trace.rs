//! Uniformly sampled real or complex records.

use num_complex::Complex64;

use crate::{Error, Result};

/// Sample payload of a [`TimeTrace`].
#[derive(Debug, Clone)]
pub enum Samples {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

impl Samples {
    pub fn len(&self) -> usize {
        match self {
            Samples::Real(v) => v.len(),
            Samples::Complex(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A uniformly sampled record with a rate, start time and labelling.
#[derive(Debug, Clone)]
pub struct TimeTrace {
    pub sample_rate: f64,
    pub samples: Samples,
    pub start_time: f64,
    pub label: String,
    pub units: String,
}

impl TimeTrace {
    pub fn real(sample_rate: f64, samples: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        Self::build(sample_rate, Samples::Real(samples), label)
    }

    pub fn complex(
        sample_rate: f64,
        samples: Vec<Complex64>,
        label: impl Into<String>,
    ) -> Result<Self> {
        Self::build(sample_rate, Samples::Complex(samples), label)
    }

    fn build(sample_rate: f64, samples: Samples, label: impl Into<String>) -> Result<Self> {
        if !(sample_rate > 0.0) {
            return Err(Error::InvalidParameter("sample_rate must be > 0".into()));
        }
        if samples.is_empty() {
            return Err(Error::InvalidParameter("empty trace".into()));
        }
        Ok(TimeTrace {
            sample_rate,
            samples,
            start_time: 0.0,
            label: label.into(),
            units: String::new(),
        })
    }

    pub fn with_units(mut self, units: impl Into<String>) -> Self {
        self.units = units.into();
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 * self.dt()
    }

    pub fn is_complex(&self) -> bool {
        matches!(self.samples, Samples::Complex(_))
    }

    /// View of the samples promoted to complex.
    pub fn to_complex(&self) -> Vec<Complex64> {
        match &self.samples {
            Samples::Real(v) => v.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
            Samples::Complex(v) => v.clone(),
        }
    }

    /// Sample variance about zero (mean power).
    pub fn power(&self) -> f64 {
        let n = self.len() as f64;
        match &self.samples {
            Samples::Real(v) => v.iter().map(|x| x * x).sum::<f64>() / n,
            Samples::Complex(v) => v.iter().map(|x| x.norm_sqr()).sum::<f64>() / n,
        }
    }

    /// Slice out `[start, start + len)` keeping metadata.
    pub fn window(&self, start: usize, len: usize) -> Result<TimeTrace> {
        if start + len > self.len() || len == 0 {
            return Err(Error::Mismatch(format!(
                "window [{start}, {}) out of trace of length {}",
                start + len,
                self.len()
            )));
        }
        let samples = match &self.samples {
            Samples::Real(v) => Samples::Real(v[start..start + len].to_vec()),
            Samples::Complex(v) => Samples::Complex(v[start..start + len].to_vec()),
        };
        Ok(TimeTrace {
            sample_rate: self.sample_rate,
            samples,
            start_time: self.start_time + start as f64 * self.dt(),
            label: self.label.clone(),
            units: self.units.clone(),
        })
    }

    /// Require another trace to be alignable with this one.
    pub fn check_aligned(&self, other: &TimeTrace) -> Result<()> {
        if self.len() != other.len() || self.sample_rate != other.sample_rate {
            return Err(Error::Mismatch(format!(
                "traces '{}' ({} @ {} Hz) and '{}' ({} @ {} Hz) not aligned",
                self.label,
                self.len(),
                self.sample_rate,
                other.label,
                other.len(),
                other.sample_rate
            )));
        }
        Ok(())
    }
}
