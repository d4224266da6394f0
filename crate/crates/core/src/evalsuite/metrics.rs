use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub const DEFAULT_MARGINS: [f64; 3] = [0.1, 0.2, 0.3];

fn check(y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.len() != y_hat.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} vs {}",
            y.len(),
            y_hat.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::invalid("metrics need at least one sample"));
    }
    Ok(())
}

fn errors<'a>(y: &'a [f64], y_hat: &'a [f64]) -> Result<impl Iterator<Item = f64> + 'a> {
    check(y, y_hat)?;
    Ok(y.iter().zip(y_hat).map(|(a, b)| b - a))
}

pub fn mae(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    Ok(errors(y, y_hat)?.map(f64::abs).sum::<f64>() / y.len() as f64)
}

pub fn mse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    Ok(errors(y, y_hat)?.map(|e| e * e).sum::<f64>() / y.len() as f64)
}

pub fn rmse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    Ok(mse(y, y_hat)?.sqrt())
}

/// Population variance of `y_hat - y`.
pub fn error_variance(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    let n = y.len() as f64;
    let mean = errors(y, y_hat)?.sum::<f64>() / n;
    Ok(errors(y, y_hat)?.map(|e| (e - mean) * (e - mean)).sum::<f64>() / n)
}

/// Percent of samples with `|y - y_hat| <= t`, for each ascending threshold.
pub fn margin_percentages(y: &[f64], y_hat: &[f64], thresholds: &[f64]) -> Result<Vec<f64>> {
    check(y, y_hat)?;
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::invalid("margin thresholds must be sorted ascending"));
    }
    let abs: Vec<f64> = errors(y, y_hat)?.map(f64::abs).collect();
    let n = abs.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&t| 100.0 * abs.iter().filter(|&&e| e <= t).count() as f64 / n)
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Margin {
    pub threshold: f64,
    pub percent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub map_kind: String,
    pub n_samples: usize,
    pub mae: f64,
    pub mse: f64,
    pub rmse: f64,
    pub error_variance: f64,
    pub margins: Vec<Margin>,
}

impl MetricsReport {
    pub fn compute(method: &str, map_kind: &str, y: &[f64], y_hat: &[f64]) -> Result<Self> {
        let pct = margin_percentages(y, y_hat, &DEFAULT_MARGINS)?;
        let mse = mse(y, y_hat)?;
        Ok(MetricsReport {
            method: method.to_string(),
            map_kind: map_kind.to_string(),
            n_samples: y.len(),
            mae: mae(y, y_hat)?,
            mse,
            rmse: mse.sqrt(),
            error_variance: error_variance(y, y_hat)?,
            margins: DEFAULT_MARGINS
                .iter()
                .zip(pct)
                .map(|(&threshold, percent)| Margin { threshold, percent })
                .collect(),
        })
    }

    pub fn margin(&self, threshold: f64) -> Option<f64> {
        self.margins
            .iter()
            .find(|m| (m.threshold - threshold).abs() < 1e-12)
            .map(|m| m.percent)
    }
}
