//! Three-fold decomposition of a mean outcome gap between two groups into
//! endowment, coefficient and interaction effects, with per-covariate
//! detail and delta-method standard errors.
//!
//! With group a the numerator and group b the reference for weights,
//!
//!   gap         = mean(y_a) - mean(y_b)
//!   endowment   = (xbar_a - xbar_b)' beta_b
//!   coefficient = xbar_b' (beta_a - beta_b)
//!   interaction = (xbar_a - xbar_b)' (beta_a - beta_b)
//!
//! and the three components sum to the gap as an algebraic identity when
//! both fits include an intercept. Standard errors treat the two fits as
//! independent, use their HC1 covariances, and treat the covariate means
//! as stochastic with their sample covariance.

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::estimators::{ols, EstimatorError, VcovKind};
use crate::frame::{build_design, ColumnData, DesignMatrix, FormulaSpec, Frame, FrameError};

#[derive(Debug, Error)]
pub enum KboError {
    #[error("design matrices have different columns: {0:?} vs {1:?}")]
    ColumnMismatch(Vec<String>, Vec<String>),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("group column {0:?} must be boolean")]
    BadGroupColumn(String),
    #[error("period column {0:?} must be categorical")]
    BadPeriodColumn(String),
}

/// Contribution of one design column to each component.
#[derive(Debug, Clone)]
pub struct KboCell {
    pub covariate: String,
    pub endowment: f64,
    pub coefficient: f64,
    pub interaction: f64,
    pub se_endowment: f64,
    pub se_coefficient: f64,
    pub se_interaction: f64,
}

#[derive(Debug, Clone)]
pub struct KboResult {
    pub overall_gap: f64,
    pub endowment: f64,
    pub coefficient: f64,
    pub interaction: f64,
    pub se_endowment: f64,
    pub se_coefficient: f64,
    pub se_interaction: f64,
    pub per_covariate: Vec<KboCell>,
    pub n_a: usize,
    pub n_b: usize,
    /// Columns identically zero within one group; retained with a zero
    /// coefficient there rather than dropped.
    pub zero_columns_a: Vec<String>,
    pub zero_columns_b: Vec<String>,
}

impl KboResult {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "overall_gap": self.overall_gap,
            "endowment": self.endowment,
            "coefficient": self.coefficient,
            "interaction": self.interaction,
            "se": {
                "endowment": self.se_endowment,
                "coefficient": self.se_coefficient,
                "interaction": self.se_interaction,
            },
            "n_a": self.n_a,
            "n_b": self.n_b,
        })
    }
}

struct GroupFit {
    beta: Array1<f64>,
    vcov_beta: Array2<f64>,
    /// Covariance of the covariate-mean vector: Cov(X)/n.
    vcov_mean: Array2<f64>,
    means: Array1<f64>,
    y_mean: f64,
    n: usize,
    zero_columns: Vec<String>,
}

/// Fit one group, allowing columns that are identically zero in this group
/// (a categorical level absent here): they get coefficient 0 and zero
/// variance, and are flagged.
fn fit_group(y: &Array1<f64>, design: &DesignMatrix) -> Result<GroupFit, KboError> {
    let n = design.n();
    let k = design.k();
    let zero_idx: Vec<usize> =
        (0..k).filter(|&j| design.x.column(j).iter().all(|&v| v == 0.0)).collect();
    let zero_columns: Vec<String> =
        zero_idx.iter().map(|&j| design.column_names[j].clone()).collect();

    let (beta, vcov_beta) = if zero_idx.is_empty() {
        let fit = ols(y, design, VcovKind::RobustHc1)?;
        (fit.beta, fit.vcov)
    } else {
        let keep: Vec<usize> = (0..k).filter(|j| !zero_idx.contains(j)).collect();
        let mut x_red = Array2::zeros((n, keep.len()));
        for (slot, &j) in keep.iter().enumerate() {
            for i in 0..n {
                x_red[[i, slot]] = design.x[[i, j]];
            }
        }
        let reduced = DesignMatrix {
            x: x_red,
            column_names: keep.iter().map(|&j| design.column_names[j].clone()).collect(),
            has_intercept: design.has_intercept,
            row_index: design.row_index.clone(),
            rank_warning: false,
        };
        let fit = ols(y, &reduced, VcovKind::RobustHc1)?;
        let mut beta = Array1::zeros(k);
        let mut vcov = Array2::zeros((k, k));
        for (slot, &j) in keep.iter().enumerate() {
            beta[j] = fit.beta[slot];
            for (slot2, &j2) in keep.iter().enumerate() {
                vcov[[j, j2]] = fit.vcov[[slot, slot2]];
            }
        }
        (beta, vcov)
    };

    let means = design.column_means();
    // Cov(xbar) = sample covariance of X divided by n
    let mut vcov_mean = Array2::zeros((k, k));
    if n > 1 {
        for a in 0..k {
            for b in a..k {
                let mut s = 0.0;
                for i in 0..n {
                    s += (design.x[[i, a]] - means[a]) * (design.x[[i, b]] - means[b]);
                }
                let v = s / ((n - 1) as f64 * n as f64);
                vcov_mean[[a, b]] = v;
                vcov_mean[[b, a]] = v;
            }
        }
    }
    let y_mean = y.sum() / n as f64;
    Ok(GroupFit { beta, vcov_beta, vcov_mean, means, y_mean, n, zero_columns })
}

fn quad_form(v: &Array1<f64>, m: &Array2<f64>) -> f64 {
    let mut s = 0.0;
    for a in 0..v.len() {
        for b in 0..v.len() {
            s += v[a] * m[[a, b]] * v[b];
        }
    }
    s
}

/// Three-fold decomposition of `mean(y_a) - mean(y_b)` with group b's
/// coefficients weighting the endowment term.
pub fn kbo_threefold(
    y_a: &Array1<f64>,
    x_a: &DesignMatrix,
    y_b: &Array1<f64>,
    x_b: &DesignMatrix,
) -> Result<KboResult, KboError> {
    if x_a.column_names != x_b.column_names {
        return Err(KboError::ColumnMismatch(
            x_a.column_names.clone(),
            x_b.column_names.clone(),
        ));
    }
    let k = x_a.k();
    let fit_a = fit_group(y_a, x_a)?;
    let fit_b = fit_group(y_b, x_b)?;

    let d = &fit_a.means - &fit_b.means;
    let delta = &fit_a.beta - &fit_b.beta;

    let endowment = d.dot(&fit_b.beta);
    let coefficient = fit_b.means.dot(&delta);
    let interaction = d.dot(&delta);
    let overall_gap = fit_a.y_mean - fit_b.y_mean;

    let sum_mean_var = &fit_a.vcov_mean + &fit_b.vcov_mean;
    let sum_beta_var = &fit_a.vcov_beta + &fit_b.vcov_beta;

    let var_endowment = quad_form(&d, &fit_b.vcov_beta) + quad_form(&fit_b.beta, &sum_mean_var);
    let var_coefficient =
        quad_form(&fit_b.means, &sum_beta_var) + quad_form(&delta, &fit_b.vcov_mean);
    let var_interaction = quad_form(&d, &sum_beta_var) + quad_form(&delta, &sum_mean_var);

    let mut per_covariate = Vec::with_capacity(k);
    for j in 0..k {
        let var_mean_j = fit_a.vcov_mean[[j, j]] + fit_b.vcov_mean[[j, j]];
        let var_beta_j = fit_a.vcov_beta[[j, j]] + fit_b.vcov_beta[[j, j]];
        let var_e = d[j] * d[j] * fit_b.vcov_beta[[j, j]] + fit_b.beta[j] * fit_b.beta[j] * var_mean_j;
        let var_c = fit_b.means[j] * fit_b.means[j] * var_beta_j
            + delta[j] * delta[j] * fit_b.vcov_mean[[j, j]];
        let var_i = d[j] * d[j] * var_beta_j + delta[j] * delta[j] * var_mean_j;
        per_covariate.push(KboCell {
            covariate: x_a.column_names[j].clone(),
            endowment: d[j] * fit_b.beta[j],
            coefficient: fit_b.means[j] * delta[j],
            interaction: d[j] * delta[j],
            se_endowment: var_e.max(0.0).sqrt(),
            se_coefficient: var_c.max(0.0).sqrt(),
            se_interaction: var_i.max(0.0).sqrt(),
        });
    }

    let mut zero_columns_a = fit_a.zero_columns;
    let mut zero_columns_b = fit_b.zero_columns;
    zero_columns_a.sort();
    zero_columns_b.sort();

    Ok(KboResult {
        overall_gap,
        endowment,
        coefficient,
        interaction,
        se_endowment: var_endowment.max(0.0).sqrt(),
        se_coefficient: var_coefficient.max(0.0).sqrt(),
        se_interaction: var_interaction.max(0.0).sqrt(),
        per_covariate,
        n_a: fit_a.n,
        n_b: fit_b.n,
        zero_columns_a,
        zero_columns_b,
    })
}

/// One decomposition per period level. Group membership comes from a
/// boolean column: rows where it equals `a_value` form group a. Strata
/// where either group has too few rows for the fit are skipped and listed.
pub struct KboByPeriod {
    pub results: Vec<(String, KboResult)>,
    pub skipped: Vec<(String, String)>,
}

pub fn kbo_by_period(
    frame: &Frame,
    period: &str,
    group: &str,
    a_value: bool,
    spec: &FormulaSpec,
) -> Result<KboByPeriod, KboError> {
    let period_col = frame.column(period)?;
    let levels: Vec<String> = match &period_col.data {
        ColumnData::Categorical { levels, .. } => levels.clone(),
        _ => return Err(KboError::BadPeriodColumn(period.to_string())),
    };
    let group_col = frame.column(group)?;
    let group_vals = match &group_col.data {
        ColumnData::Boolean(v) => v.clone(),
        _ => return Err(KboError::BadGroupColumn(group.to_string())),
    };

    let mut results = Vec::new();
    let mut skipped = Vec::new();
    for level in &levels {
        let in_period: Vec<bool> = (0..frame.n_rows())
            .map(|r| frame.column(period).unwrap().label(r) == Some(level.as_str()))
            .collect();
        let mask_a: Vec<bool> = (0..frame.n_rows())
            .map(|r| in_period[r] && group_vals[r] == Some(a_value))
            .collect();
        let mask_b: Vec<bool> = (0..frame.n_rows())
            .map(|r| in_period[r] && group_vals[r] == Some(!a_value))
            .collect();
        let frame_a = frame.filter(&mask_a);
        let frame_b = frame.filter(&mask_b);

        let built_a = build_design(&frame_a, spec);
        let built_b = build_design(&frame_b, spec);
        let ((ya, da), (yb, db)) = match (built_a, built_b) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => {
                skipped.push((level.clone(), e.to_string()));
                continue;
            }
        };
        if da.n() <= da.k() || db.n() <= db.k() {
            skipped.push((level.clone(), "stratum too small".to_string()));
            continue;
        }
        match kbo_threefold(&ya, &da, &yb, &db) {
            Ok(result) => results.push((level.clone(), result)),
            Err(KboError::Estimator(e)) => skipped.push((level.clone(), e.to_string())),
            Err(e) => return Err(e),
        }
    }
    Ok(KboByPeriod { results, skipped })
}
