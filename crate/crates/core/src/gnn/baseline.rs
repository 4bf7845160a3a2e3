//! Response-length logistic regression baseline.

use serde::{Deserialize, Serialize};

use super::sigmoid;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub learning_rate: f64,
    pub iterations: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            iterations: 2000,
        }
    }
}

/// Univariate logistic regression on standardized token length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthBaseline {
    pub weight: f64,
    pub bias: f64,
    pub length_mean: f64,
    pub length_std: f64,
}

/// Full-batch gradient descent on the mean cross-entropy.
pub fn train_length_baseline(pairs: &[(f64, u8)], config: &BaselineConfig) -> Result<LengthBaseline> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("length/label pairs"));
    }
    if pairs.iter().any(|&(_, y)| y > 1) {
        return Err(Error::Integrity("labels must be 0 or 1".into()));
    }
    let n = pairs.len() as f64;
    let mean = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let var = pairs.iter().map(|p| (p.0 - mean).powi(2)).sum::<f64>() / n;
    let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
    let xs: Vec<(f64, f64)> = pairs.iter().map(|&(l, y)| ((l - mean) / std, y as f64)).collect();

    let (mut w, mut b) = (0.0, 0.0);
    for _ in 0..config.iterations {
        let (mut gw, mut gb) = (0.0, 0.0);
        for &(x, y) in &xs {
            let err = sigmoid(w * x + b) - y;
            gw += err * x;
            gb += err;
        }
        w -= config.learning_rate * gw / n;
        b -= config.learning_rate * gb / n;
    }
    if !(w.is_finite() && b.is_finite()) {
        return Err(Error::Integrity("baseline diverged".into()));
    }
    Ok(LengthBaseline {
        weight: w,
        bias: b,
        length_mean: mean,
        length_std: std,
    })
}

pub fn baseline_score(model: &LengthBaseline, length: f64) -> f64 {
    sigmoid(model.weight * (length - model.length_mean) / model.length_std + model.bias)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_is_negative_when_long_means_wrong() {
        let pairs: Vec<(f64, u8)> = (0..50)
            .map(|i| (100.0 + i as f64, 1))
            .chain((0..50).map(|i| (300.0 + i as f64, 0)))
            .collect();
        let m = train_length_baseline(&pairs, &BaselineConfig::default()).unwrap();
        assert!(m.weight < 0.0);
        assert!(baseline_score(&m, 120.0) > 0.5);
        assert!(baseline_score(&m, 330.0) < 0.5);
    }

    #[test]
    fn constant_lengths_are_finite() {
        let pairs = vec![(10.0, 0), (10.0, 1), (10.0, 1)];
        let m = train_length_baseline(&pairs, &BaselineConfig::default()).unwrap();
        assert_eq!(m.weight, 0.0);
        assert!(baseline_score(&m, 10.0) > 0.5);
        assert!(train_length_baseline(&[], &BaselineConfig::default()).is_err());
    }
}
