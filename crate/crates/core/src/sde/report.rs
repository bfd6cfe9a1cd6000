use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// Ensemble statistics at one record time. Matrices are dense `dim × dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSnapshot {
    pub t: f64,
    pub mean: Vec<f64>,
    pub mean_stderr: Vec<f64>,
    /// Raw moments `⟨x_i x_k⟩` about the origin.
    pub second_moment: Vec<Vec<f64>>,
    pub second_moment_stderr: Vec<Vec<f64>>,
    pub covariance: Vec<Vec<f64>>,
    pub covariance_stderr: Vec<Vec<f64>>,
}

impl MomentSnapshot {
    /// Mean of `Σ c_ik x_i x_k` (upper-triangle coefficients welcome) with a
    /// standard error that adds the per-entry errors in quadrature.
    pub fn quadratic_form(&self, coeffs: &[(usize, usize, f64)]) -> (f64, f64) {
        let mut value = 0.0;
        let mut var = 0.0;
        for &(i, k, c) in coeffs {
            value += c * self.second_moment[i][k];
            var += (c * self.second_moment_stderr[i][k]).powi(2);
        }
        (value, var.sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub dim: usize,
    pub n_traj: usize,
    pub snapshots: Vec<MomentSnapshot>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_samples: Option<Vec<Vec<f64>>>,
}

impl MomentReport {
    /// One row per record time: `t`, `mean_i`, `cov_i_k` (i ≤ k), `stderr_i_k`.
    /// Indices are 1-based. LF line endings, fixed column order.
    pub fn to_csv(&self) -> String {
        let n = self.dim;
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |k| (i, k))).collect();
        let mut out = String::from("t");
        for i in 0..n {
            write!(out, ",mean_{}", i + 1).unwrap();
        }
        for (i, k) in &pairs {
            write!(out, ",cov_{}_{}", i + 1, k + 1).unwrap();
        }
        for (i, k) in &pairs {
            write!(out, ",stderr_{}_{}", i + 1, k + 1).unwrap();
        }
        out.push('\n');
        for s in &self.snapshots {
            write!(out, "{}", s.t).unwrap();
            for m in &s.mean {
                write!(out, ",{m}").unwrap();
            }
            for &(i, k) in &pairs {
                write!(out, ",{}", s.covariance[i][k]).unwrap();
            }
            for &(i, k) in &pairs {
                write!(out, ",{}", s.covariance_stderr[i][k]).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn snapshot_at(&self, t: f64) -> Option<&MomentSnapshot> {
        self.snapshots.iter().find(|s| (s.t - t).abs() <= 1e-9 * t.abs().max(1.0))
    }

    pub fn last(&self) -> &MomentSnapshot {
        self.snapshots.last().expect("reports have at least one snapshot")
    }
}
