//! L1-penalized least squares by cyclic coordinate descent with
//! soft-thresholding and warm starts, model selection by BIC, and an
//! unpenalized refit on the selected support.
//!
//! The objective at each grid point is
//! `(1/2n) ||y - Xb||^2 + lambda * sum_j |b_j|` with the intercept
//! unpenalized. Columns are standardized internally to unit variance and
//! coefficients are mapped back to the original scale on output.

use ndarray::{Array1, Array2};

use super::{ols, EstimatorError, FitResult, VcovKind};
use crate::frame::DesignMatrix;

const KKT_TOL: f64 = 1e-10;
const MAX_CYCLES: usize = 200_000;

/// Solutions along a descending lambda grid.
#[derive(Debug, Clone)]
pub struct LassoPath {
    /// Descending penalty grid.
    pub lambda_grid: Vec<f64>,
    /// Original-scale coefficients, one row per grid point (intercept first).
    pub coef: Array2<f64>,
    /// BIC per grid point: `n ln(RSS/n) + ln(n) df`, df = support size.
    pub bic: Vec<f64>,
    /// Index of the minimum-BIC grid point.
    pub selected_index: usize,
    /// Unpenalized OLS refit on the selected support.
    pub post_ols: FitResult,
    /// Zero-variance columns excluded from the penalized problem.
    pub excluded: Vec<String>,
    pub column_names: Vec<String>,
}

impl LassoPath {
    pub fn selected_lambda(&self) -> f64 {
        self.lambda_grid[self.selected_index]
    }

    /// Non-intercept column names with nonzero coefficients at the selected
    /// grid point.
    pub fn selected_support(&self) -> Vec<String> {
        let row = self.coef.row(self.selected_index);
        self.column_names
            .iter()
            .enumerate()
            .skip(1)
            .filter(|(j, _)| row[*j] != 0.0)
            .map(|(_, name)| name.clone())
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "lambda_grid": self.lambda_grid,
            "bic": self.bic,
            "selected_index": self.selected_index,
            "selected_lambda": self.selected_lambda(),
            "names": self.column_names,
            "selected_coef": self.coef.row(self.selected_index).to_vec(),
            "post_ols": self.post_ols.to_json(false),
            "excluded": self.excluded,
        })
    }
}

struct Standardized {
    /// Centered response.
    yc: Vec<f64>,
    y_mean: f64,
    /// Standardized slope columns, column-major; zero-variance columns stay
    /// as zeros and are listed in `excluded_idx`.
    cols: Vec<Vec<f64>>,
    means: Vec<f64>,
    sds: Vec<f64>,
    excluded_idx: Vec<usize>,
}

fn standardize(y: &Array1<f64>, design: &DesignMatrix) -> Standardized {
    let n = design.n();
    let nf = n as f64;
    let k_slopes = design.k() - 1;
    let y_mean = y.sum() / nf;
    let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();

    let mut cols = Vec::with_capacity(k_slopes);
    let mut means = Vec::with_capacity(k_slopes);
    let mut sds = Vec::with_capacity(k_slopes);
    let mut excluded_idx = Vec::new();
    for j in 0..k_slopes {
        let col = design.x.column(j + 1);
        let mean = col.sum() / nf;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
        let sd = var.sqrt();
        means.push(mean);
        sds.push(sd);
        if sd == 0.0 {
            excluded_idx.push(j);
            cols.push(vec![0.0; n]);
        } else {
            cols.push(col.iter().map(|v| (v - mean) / sd).collect());
        }
    }
    Standardized { yc, y_mean, cols, means, sds, excluded_idx }
}

/// One coordinate-descent solve at a fixed lambda, warm-started from `beta`.
/// Runs until every KKT subgradient condition holds within `KKT_TOL`.
fn cd_solve(std_data: &Standardized, lambda: f64, beta: &mut [f64], residual: &mut [f64]) {
    let n = std_data.yc.len();
    let nf = n as f64;
    let k = beta.len();
    for _cycle in 0..MAX_CYCLES {
        for j in 0..k {
            if std_data.sds[j] == 0.0 {
                continue;
            }
            let col = &std_data.cols[j];
            let mut dot = 0.0;
            for i in 0..n {
                dot += col[i] * residual[i];
            }
            let z = dot / nf + beta[j];
            let new = soft_threshold(z, lambda);
            let delta = beta[j] - new;
            if delta != 0.0 {
                for i in 0..n {
                    residual[i] += delta * col[i];
                }
                beta[j] = new;
            }
        }
        // stop on the exact optimality conditions rather than step size
        let mut worst: f64 = 0.0;
        for j in 0..k {
            if std_data.sds[j] == 0.0 {
                continue;
            }
            let col = &std_data.cols[j];
            let mut g = 0.0;
            for i in 0..n {
                g += col[i] * residual[i];
            }
            g /= nf;
            let violation = if beta[j] != 0.0 {
                (g - lambda * beta[j].signum()).abs()
            } else {
                (g.abs() - lambda).max(0.0)
            };
            worst = worst.max(violation);
        }
        if worst < KKT_TOL {
            return;
        }
    }
}

#[inline]
fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

/// Lasso path over an explicit lambda grid (descending). Used directly by
/// tests that append extra grid points; `lasso_bic` builds the default grid.
pub fn lasso_path_with_grid(
    y: &Array1<f64>,
    design: &DesignMatrix,
    grid: &[f64],
) -> Result<LassoPath, EstimatorError> {
    assert!(design.has_intercept, "lasso requires an intercept column");
    let n = design.n();
    let k = design.k();
    if n <= 2 {
        return Err(EstimatorError::TooFewRows { n, k });
    }
    let std_data = standardize(y, design);
    let k_slopes = k - 1;

    let mut beta_std = vec![0.0; k_slopes];
    let mut residual = std_data.yc.clone();
    let mut coef = Array2::zeros((grid.len(), k));
    let mut bic = Vec::with_capacity(grid.len());
    let nf = n as f64;

    for (g, &lambda) in grid.iter().enumerate() {
        cd_solve(&std_data, lambda, &mut beta_std, &mut residual);
        let rss: f64 = residual.iter().map(|r| r * r).sum();
        let df = beta_std.iter().filter(|b| **b != 0.0).count();
        bic.push(nf * (rss.max(1e-300) / nf).ln() + nf.ln() * df as f64);
        // map back to the original scale
        let mut intercept = std_data.y_mean;
        for j in 0..k_slopes {
            let b = if std_data.sds[j] == 0.0 { 0.0 } else { beta_std[j] / std_data.sds[j] };
            coef[[g, j + 1]] = b;
            intercept -= b * std_data.means[j];
        }
        coef[[g, 0]] = intercept;
    }

    let selected_index = bic
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();

    // unpenalized refit on the selected support
    let support: Vec<usize> = (1..k).filter(|&j| coef[[selected_index, j]] != 0.0).collect();
    let mut x_post = Array2::zeros((n, support.len() + 1));
    let mut names_post = vec!["intercept".to_string()];
    for i in 0..n {
        x_post[[i, 0]] = 1.0;
    }
    for (slot, &j) in support.iter().enumerate() {
        names_post.push(design.column_names[j].clone());
        for i in 0..n {
            x_post[[i, slot + 1]] = design.x[[i, j]];
        }
    }
    let post_design = DesignMatrix {
        x: x_post,
        column_names: names_post,
        has_intercept: true,
        row_index: design.row_index.clone(),
        rank_warning: false,
    };
    let post_ols = ols(y, &post_design, VcovKind::Classical)?;

    let excluded =
        std_data.excluded_idx.iter().map(|&j| design.column_names[j + 1].clone()).collect();

    Ok(LassoPath {
        lambda_grid: grid.to_vec(),
        coef,
        bic,
        selected_index,
        post_ols,
        excluded,
        column_names: design.column_names.clone(),
    })
}

/// Smallest penalty that zeroes every slope: `max_j |x_j'(y - ybar)| / n`
/// over standardized columns.
pub fn lambda_max(y: &Array1<f64>, design: &DesignMatrix) -> f64 {
    let std_data = standardize(y, design);
    let nf = std_data.yc.len() as f64;
    let mut lmax: f64 = 0.0;
    for (j, col) in std_data.cols.iter().enumerate() {
        if std_data.sds[j] == 0.0 {
            continue;
        }
        let dot: f64 = col.iter().zip(&std_data.yc).map(|(a, b)| a * b).sum();
        lmax = lmax.max((dot / nf).abs());
    }
    lmax
}

/// Lasso with BIC model selection down a log-spaced grid of `grid_size`
/// points from `lambda_max` to `lambda_max * 1e-4`.
pub fn lasso_bic(
    y: &Array1<f64>,
    design: &DesignMatrix,
    grid_size: usize,
) -> Result<LassoPath, EstimatorError> {
    assert!(grid_size >= 2, "grid must have at least two points");
    let lmax = lambda_max(y, design);
    let lmin = lmax * 1e-4;
    let ratio = (lmin / lmax).powf(1.0 / (grid_size - 1) as f64);
    let grid: Vec<f64> = (0..grid_size).map(|g| lmax * ratio.powi(g as i32)).collect();
    lasso_path_with_grid(y, design, &grid)
}
