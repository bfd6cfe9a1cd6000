use serde::{Deserialize, Serialize};

use super::SdeError;

/// Coefficient of determination below which a fit is flagged.
pub const MIN_R_SQUARED: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelaxationFit {
    /// Decay rate `λ` in `|s(t) − s∞| ≈ A e^{−λ t}`.
    pub rate: f64,
    /// `ln A`.
    pub intercept: f64,
    /// `None` when the log-series has no variance (constant input).
    pub r_squared: Option<f64>,
    /// Set when the fit quality is poor or undefined.
    pub flagged: bool,
}

/// Least-squares slope of `ln|s(t) − limit|` against `t`.
pub fn estimate_relaxation_rate(times: &[f64], values: &[f64], limit: f64) -> Result<RelaxationFit, SdeError> {
    if times.len() != values.len() {
        return Err(SdeError::Fit(format!("{} times but {} values", times.len(), values.len())));
    }
    if times.len() < 2 {
        return Err(SdeError::Fit("need at least two points".into()));
    }
    let logs = values
        .iter()
        .zip(times)
        .map(|(&v, &t)| {
            let d = (v - limit).abs();
            if d > 0.0 && d.is_finite() {
                Ok(d.ln())
            } else {
                Err(SdeError::Fit(format!("series meets its limit at t = {t}")))
            }
        })
        .collect::<Result<Vec<f64>, _>>()?;
    let n = times.len() as f64;
    let t_mean = times.iter().sum::<f64>() / n;
    let y_mean = logs.iter().sum::<f64>() / n;
    let stt: f64 = times.iter().map(|t| (t - t_mean).powi(2)).sum();
    if stt == 0.0 {
        return Err(SdeError::Fit("all times coincide".into()));
    }
    let sty: f64 = times.iter().zip(&logs).map(|(t, y)| (t - t_mean) * (y - y_mean)).sum();
    let slope = sty / stt;
    let intercept = y_mean - slope * t_mean;
    let syy: f64 = logs.iter().map(|y| (y - y_mean).powi(2)).sum();
    let r_squared = if syy > 0.0 {
        let sse: f64 = times.iter().zip(&logs).map(|(t, y)| (y - intercept - slope * t).powi(2)).sum();
        Some(1.0 - sse / syy)
    } else {
        None
    };
    let flagged = r_squared.is_none_or(|r2| r2 < MIN_R_SQUARED);
    Ok(RelaxationFit { rate: -slope, intercept, r_squared, flagged })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_exponential() {
        let kappa = 0.25;
        let times: Vec<f64> = (0..20).map(|i| 0.3 * i as f64).collect();
        let values: Vec<f64> = times.iter().map(|t| 1.0 + 3.0 * (-4.0 * kappa * t).exp()).collect();
        let fit = estimate_relaxation_rate(&times, &values, 1.0).unwrap();
        assert!((fit.rate - 1.0).abs() < 1e-10);
        assert!((fit.intercept - 3f64.ln()).abs() < 1e-10);
        assert!(!fit.flagged);
    }

    #[test]
    fn constant_series_is_flagged() {
        let fit = estimate_relaxation_rate(&[0.0, 1.0, 2.0], &[2.0, 2.0, 2.0], 0.0).unwrap();
        assert_eq!(fit.rate, 0.0);
        assert_eq!(fit.r_squared, None);
        assert!(fit.flagged);
    }

    #[test]
    fn noisy_non_monotone_series_is_flagged() {
        let fit = estimate_relaxation_rate(&[0.0, 1.0, 2.0, 3.0], &[1.0, 3.0, 0.5, 2.5], 0.0).unwrap();
        assert!(fit.flagged);
    }

    #[test]
    fn series_touching_limit_is_an_error() {
        assert!(estimate_relaxation_rate(&[0.0, 1.0], &[1.0, 0.0], 0.0).is_err());
        assert!(estimate_relaxation_rate(&[0.0], &[1.0], 0.0).is_err());
    }
}
