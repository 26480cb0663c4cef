//! Ordinary least squares via column-pivoted Householder QR, with classical
//! or HC1 heteroskedasticity-robust covariance.

use ndarray::{Array1, Array2};

use super::{se_from_vcov, EstimatorError, FitResult};
use crate::frame::DesignMatrix;
use crate::linalg::qr_pivot;

/// Covariance estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VcovKind {
    /// `sigma^2 (X'X)^-1` with `sigma^2 = RSS / (n - k)`.
    Classical,
    /// HC1 sandwich: `n/(n-k) (X'X)^-1 X' diag(e^2) X (X'X)^-1`.
    RobustHc1,
}

/// Least-squares fit of `y` on the design. The solver is rank-revealing;
/// a rank-deficient design is an error naming the dependent columns rather
/// than being silently repaired.
pub fn ols(
    y: &Array1<f64>,
    design: &DesignMatrix,
    vcov_kind: VcovKind,
) -> Result<FitResult, EstimatorError> {
    let n = design.n();
    let k = design.k();
    assert_eq!(y.len(), n, "response length must match the design");
    if n <= k {
        return Err(EstimatorError::TooFewRows { n, k });
    }

    let qr = qr_pivot(&design.x);
    if qr.rank() < k {
        let columns = qr
            .dependent_columns()
            .into_iter()
            .map(|j| design.column_names[j].clone())
            .collect();
        return Err(EstimatorError::RankDeficient { columns });
    }

    let beta = qr.solve_ls(y);
    let fitted = design.x.dot(&beta);
    let residuals = y - &fitted;

    let xtx_inv = qr.xtx_inverse();
    let vcov = match vcov_kind {
        VcovKind::Classical => {
            let rss: f64 = residuals.iter().map(|e| e * e).sum();
            let sigma2 = rss / (n - k) as f64;
            &xtx_inv * sigma2
        }
        VcovKind::RobustHc1 => {
            // meat = X' diag(e^2) X
            let mut meat = Array2::zeros((k, k));
            for i in 0..n {
                let e2 = residuals[i] * residuals[i];
                for a in 0..k {
                    let xa = design.x[[i, a]] * e2;
                    for b in a..k {
                        meat[[a, b]] += xa * design.x[[i, b]];
                    }
                }
            }
            for a in 0..k {
                for b in 0..a {
                    meat[[a, b]] = meat[[b, a]];
                }
            }
            let scale = n as f64 / (n - k) as f64;
            let bread_meat = xtx_inv.dot(&meat);
            bread_meat.dot(&xtx_inv) * scale
        }
    };

    let se = se_from_vcov(&vcov);
    Ok(FitResult {
        column_names: design.column_names.clone(),
        beta,
        vcov,
        se,
        residuals,
        fitted,
        n,
        k,
        loglik: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRng;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    pub(crate) fn design_from(x: Array2<f64>, names: &[&str]) -> DesignMatrix {
        let n = x.nrows();
        DesignMatrix {
            x,
            column_names: names.iter().map(|s| s.to_string()).collect(),
            has_intercept: true,
            row_index: (0..n).collect(),
            rank_warning: false,
        }
    }

    /// Independent normal-equations oracle: beta = (X'X)^-1 X'y by
    /// Gauss-Jordan elimination.
    pub(crate) fn normal_equations(x: &Array2<f64>, y: &Array1<f64>) -> Array1<f64> {
        let k = x.ncols();
        let xtx = x.t().dot(x);
        let xty = x.t().dot(y);
        let mut aug = Array2::zeros((k, k + 1));
        for a in 0..k {
            for b in 0..k {
                aug[[a, b]] = xtx[[a, b]];
            }
            aug[[a, k]] = xty[a];
        }
        for col in 0..k {
            let mut pivot = col;
            for r in (col + 1)..k {
                if aug[[r, col]].abs() > aug[[pivot, col]].abs() {
                    pivot = r;
                }
            }
            for c in 0..=k {
                aug.swap([col, c], [pivot, c]);
            }
            let d = aug[[col, col]];
            for c in col..=k {
                aug[[col, c]] /= d;
            }
            for r in 0..k {
                if r != col {
                    let f = aug[[r, col]];
                    for c in col..=k {
                        let v = aug[[col, c]];
                        aug[[r, c]] -= f * v;
                    }
                }
            }
        }
        Array1::from_iter((0..k).map(|r| aug[[r, k]]))
    }

    #[test]
    fn perfect_fit_recovers_exact_line() {
        let x = array![[1.0, 1.0], [1.0, 2.0], [1.0, 3.0], [1.0, 4.0]];
        let y = array![2.0, 4.0, 6.0, 8.0];
        let fit = ols(&y, &design_from(x, &["intercept", "x"]), VcovKind::Classical).unwrap();
        assert_abs_diff_eq!(fit.beta[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.beta[1], 2.0, epsilon = 1e-12);
        for e in fit.residuals.iter() {
            assert_abs_diff_eq!(*e, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn five_row_system_matches_normal_equations_oracle() {
        let x = array![
            [1.0, 0.3, 2.1],
            [1.0, -1.2, 0.4],
            [1.0, 0.8, -0.9],
            [1.0, 2.5, 1.1],
            [1.0, -0.4, 0.6]
        ];
        let y = array![1.0, -0.5, 0.3, 2.2, 0.1];
        let oracle = normal_equations(&x, &y);
        let fit = ols(&y, &design_from(x, &["intercept", "a", "b"]), VcovKind::Classical).unwrap();
        for j in 0..3 {
            assert_abs_diff_eq!(fit.beta[j], oracle[j], epsilon = 1e-10);
        }
    }

    #[test]
    fn duplicated_column_is_rank_deficient() {
        let x = array![[1.0, 2.0, 2.0], [1.0, 3.0, 3.0], [1.0, 4.0, 4.0], [1.0, 5.0, 5.0]];
        let y = array![1.0, 2.0, 3.0, 4.0];
        match ols(&y, &design_from(x, &["intercept", "x", "x_copy"]), VcovKind::Classical) {
            Err(EstimatorError::RankDeficient { columns }) => {
                assert!(!columns.is_empty());
                assert!(columns.iter().all(|c| c == "x" || c == "x_copy"));
            }
            other => panic!("expected RankDeficient, got {other:?}"),
        }
    }

    #[test]
    fn too_few_rows_errors() {
        let x = array![[1.0, 2.0], [1.0, 3.0]];
        let y = array![1.0, 2.0];
        assert!(matches!(
            ols(&y, &design_from(x, &["intercept", "x"]), VcovKind::Classical),
            Err(EstimatorError::TooFewRows { .. })
        ));
    }

    #[test]
    fn fitted_plus_residuals_reconstructs_y() {
        let mut rng = StreamRng::new(21);
        let n = 40;
        let x = Array2::from_shape_fn((n, 3), |(i, j)| if j == 0 { 1.0 } else { rng.at((i * 7 + j) as u64) as f64 / u64::MAX as f64 });
        let y = Array1::from_shape_fn(n, |_| rng.next_gaussian());
        let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let fit = ols(&y, &design_from(x, &["intercept", "a", "b"]), VcovKind::Classical).unwrap();
        for i in 0..n {
            assert_abs_diff_eq!(fit.fitted[i] + fit.residuals[i], y[i], epsilon = 1e-12 * scale.max(1.0));
        }
        // orthogonality: X'e = 0 when the intercept is present
        let xte = fit.residuals.dot(&fit.fitted);
        assert!(xte.abs() < 1e-8 * scale.max(1.0));
    }

    #[test]
    fn hc1_equals_classical_for_constant_absolute_residuals() {
        // y constructed so |e_i| is constant: x symmetric, y = x + alternating sign
        let x = array![[1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [1.0, 1.0]];
        let y = array![-1.5, -0.5, 0.5, 1.5];
        let d = design_from(x, &["intercept", "x"]);
        let classical = ols(&y, &d, VcovKind::Classical).unwrap();
        let robust = ols(&y, &d, VcovKind::RobustHc1).unwrap();
        // residuals are +-0.5 everywhere
        for e in classical.residuals.iter() {
            assert_abs_diff_eq!(e.abs(), 0.5, epsilon = 1e-12);
        }
        // with homoskedastic constant residuals the HC0 meat equals
        // sigma_0^2 X'X with sigma_0^2 = RSS/n, so HC1 = classical exactly
        let n = 4.0;
        let k = 2.0;
        let ratio = (n / (n - k)) * ((n - k) / n);
        for a in 0..2 {
            for b in 0..2 {
                assert_abs_diff_eq!(
                    robust.vcov[[a, b]],
                    classical.vcov[[a, b]] * ratio,
                    epsilon = 1e-14
                );
            }
        }
    }

    #[test]
    fn vcov_is_symmetric_and_se_is_sqrt_diag() {
        let x = array![
            [1.0, 0.3, 2.1],
            [1.0, -1.2, 0.4],
            [1.0, 0.8, -0.9],
            [1.0, 2.5, 1.1],
            [1.0, -0.4, 0.6],
            [1.0, 1.4, -1.6]
        ];
        let y = array![1.0, -0.5, 0.3, 2.2, 0.1, 0.9];
        let fit = ols(&y, &design_from(x, &["intercept", "a", "b"]), VcovKind::RobustHc1).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                assert_abs_diff_eq!(fit.vcov[[a, b]], fit.vcov[[b, a]], epsilon = 1e-8);
            }
            assert_abs_diff_eq!(fit.se[a], fit.vcov[[a, a]].sqrt(), epsilon = 1e-14);
        }
    }
}
