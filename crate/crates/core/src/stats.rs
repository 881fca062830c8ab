//! Small Monte Carlo summaries.

use nalgebra::DVector;
use serde::Serialize;

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub estimate: f64,
    pub std_err: f64,
}

impl Estimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self {
                estimate: f64::NAN,
                std_err: f64::NAN,
            };
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Self {
                estimate: mean,
                std_err: 0.0,
            };
        }
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Self {
            estimate: mean,
            std_err: (var / n as f64).sqrt(),
        }
    }
}

/// Component-wise mean and standard error of vector samples.
pub fn vector_estimate(samples: &[DVector<f64>]) -> (DVector<f64>, DVector<f64>) {
    let d = samples.first().map_or(0, DVector::len);
    let mut mean = DVector::zeros(d);
    let mut se = DVector::zeros(d);
    for i in 0..d {
        let column: Vec<f64> = samples.iter().map(|s| s[i]).collect();
        let e = Estimate::from_samples(&column);
        mean[i] = e.estimate;
        se[i] = e.std_err;
    }
    (mean, se)
}
