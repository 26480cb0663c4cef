//! From-scratch estimators: OLS with robust covariance, probit maximum
//! likelihood with average marginal effects, and lasso with BIC selection.

mod lasso;
mod ols;
mod probit;

pub use lasso::{lambda_max, lasso_bic, lasso_path_with_grid, LassoPath};
pub use ols::{ols, VcovKind};
pub use probit::{norm_cdf, norm_pdf, probit, probit_ame, probit_loglik, probit_score, ProbitMarginals};

use ndarray::{Array1, Array2};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("design matrix is rank deficient; dependent columns: {columns:?}")]
    RankDeficient { columns: Vec<String> },
    #[error("too few rows: n={n} must exceed k={k}")]
    TooFewRows { n: usize, k: usize },
    #[error("response has no variation (single class)")]
    NoVariationInY,
    #[error("perfect separation detected: |x'beta| exceeded {0} while the likelihood kept improving")]
    PerfectSeparation(f64),
    #[error("maximum iterations ({0}) reached without convergence")]
    MaxIterations(usize),
}

/// Coefficients, covariance and residual diagnostics of one fitted model.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub column_names: Vec<String>,
    pub beta: Array1<f64>,
    pub vcov: Array2<f64>,
    pub se: Array1<f64>,
    pub residuals: Array1<f64>,
    pub fitted: Array1<f64>,
    pub n: usize,
    pub k: usize,
    /// Maximized log-likelihood; present for probit, absent for OLS.
    pub loglik: Option<f64>,
}

impl FitResult {
    pub fn coef(&self, name: &str) -> Option<f64> {
        self.column_names.iter().position(|c| c == name).map(|j| self.beta[j])
    }

    pub fn to_json(&self, include_vcov: bool) -> serde_json::Value {
        let mut obj = serde_json::json!({
            "names": self.column_names,
            "beta": self.beta.to_vec(),
            "se": self.se.to_vec(),
            "n": self.n,
            "k": self.k,
        });
        if let Some(ll) = self.loglik {
            obj["loglik"] = serde_json::json!(ll);
        }
        if include_vcov {
            let rows: Vec<Vec<f64>> =
                (0..self.k).map(|i| self.vcov.row(i).to_vec()).collect();
            obj["vcov"] = serde_json::json!(rows);
        }
        obj
    }
}

pub(crate) fn se_from_vcov(vcov: &Array2<f64>) -> Array1<f64> {
    Array1::from_iter((0..vcov.nrows()).map(|j| vcov[[j, j]].max(0.0).sqrt()))
}
