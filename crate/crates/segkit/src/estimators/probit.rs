//! Probit maximum likelihood by Newton-Raphson with step halving, plus
//! average marginal effects with delta-method standard errors.

use ndarray::{Array1, Array2};
use statrs::function::erf::erfc;

use super::{se_from_vcov, EstimatorError, FitResult};
use crate::frame::DesignMatrix;
use crate::linalg::{chol_inverse, chol_solve, cholesky, qr_pivot};

const SEPARATION_BOUND: f64 = 30.0;
const MAX_ITER: usize = 100;
const SCORE_TOL: f64 = 1e-8;
const LOGLIK_RTOL: f64 = 1e-12;

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * INV_SQRT_2)
}

/// log Phi(x); the erfc route stays accurate far into the lower tail.
#[inline]
fn log_norm_cdf(x: f64) -> f64 {
    (0.5 * erfc(-x * INV_SQRT_2)).ln()
}

/// Probit log-likelihood at `beta`.
pub fn probit_loglik(y: &Array1<f64>, x: &Array2<f64>, beta: &Array1<f64>) -> f64 {
    let eta = x.dot(beta);
    y.iter()
        .zip(eta.iter())
        .map(|(&yi, &e)| if yi > 0.5 { log_norm_cdf(e) } else { log_norm_cdf(-e) })
        .sum()
}

/// Analytic score (gradient of the log-likelihood) at `beta`.
pub fn probit_score(y: &Array1<f64>, x: &Array2<f64>, beta: &Array1<f64>) -> Array1<f64> {
    let eta = x.dot(beta);
    let lambda = generalized_residuals(y, &eta);
    x.t().dot(&lambda)
}

/// lambda_i = phi/Phi for successes, -phi/(1-Phi) for failures.
fn generalized_residuals(y: &Array1<f64>, eta: &Array1<f64>) -> Array1<f64> {
    Array1::from_iter(y.iter().zip(eta.iter()).map(|(&yi, &e)| {
        if yi > 0.5 {
            norm_pdf(e) / norm_cdf(e)
        } else {
            -norm_pdf(e) / norm_cdf(-e)
        }
    }))
}

/// Probit fit. Converges when the score is below 1e-8 in sup norm and the
/// relative log-likelihood change is below 1e-12; each Newton step is
/// halved until it improves the log-likelihood, which makes the iterate
/// sequence monotone.
///
/// The Newton iteration runs on columns scaled to unit root-mean-square,
/// which keeps the information matrix well conditioned for raw polynomial
/// regressors; coefficients and covariance are mapped back on exit.
pub fn probit(y: &Array1<f64>, design: &DesignMatrix) -> Result<FitResult, EstimatorError> {
    let n = design.n();
    let k = design.k();
    assert_eq!(y.len(), n, "response length must match the design");
    for &v in y.iter() {
        assert!(v == 0.0 || v == 1.0, "probit response must be 0/1");
    }
    if n < k {
        return Err(EstimatorError::TooFewRows { n, k });
    }
    let ones = y.iter().filter(|&&v| v > 0.5).count();
    if ones == 0 || ones == n {
        return Err(EstimatorError::NoVariationInY);
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

    let scales: Vec<f64> = (0..k)
        .map(|j| {
            let rms =
                (design.x.column(j).iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
            if rms > 0.0 {
                rms
            } else {
                1.0
            }
        })
        .collect();
    let x_scaled = Array2::from_shape_fn((n, k), |(i, j)| design.x[[i, j]] / scales[j]);

    let x = &x_scaled;
    let mut beta: Array1<f64> = Array1::zeros(k);
    let mut loglik = probit_loglik(y, x, &beta);

    for _ in 0..MAX_ITER {
        let eta = x.dot(&beta);
        let max_eta = eta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if max_eta > SEPARATION_BOUND {
            return Err(EstimatorError::PerfectSeparation(SEPARATION_BOUND));
        }

        let lambda = generalized_residuals(y, &eta);
        let score = x.t().dot(&lambda);

        // observed information X'WX with w = lambda (lambda + eta) > 0
        let weights: Vec<f64> =
            lambda.iter().zip(eta.iter()).map(|(&l, &e)| l * (l + e)).collect();
        let mut info = Array2::zeros((k, k));
        for i in 0..n {
            let w = weights[i];
            for a in 0..k {
                let xa = x[[i, a]] * w;
                for b in a..k {
                    info[[a, b]] += xa * x[[i, b]];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                info[[a, b]] = info[[b, a]];
            }
        }

        let chol = match cholesky(&info) {
            Some(l) => l,
            // the information degenerates only when probabilities saturate
            None => return Err(EstimatorError::PerfectSeparation(SEPARATION_BOUND)),
        };
        let direction = chol_solve(&chol, &score);
        // predicted log-likelihood gain of the full Newton step; once it
        // falls below representable precision the fit is stationary even
        // if the raw score has not reached the absolute tolerance
        let decrement = 0.5 * score.dot(&direction);

        // step halving keeps the log-likelihood monotone
        let mut step = 1.0;
        let mut improved = false;
        let mut new_beta = beta.clone();
        let mut new_loglik = loglik;
        for _ in 0..50 {
            let candidate = &beta + &(&direction * step);
            let cand_ll = probit_loglik(y, x, &candidate);
            if cand_ll.is_finite() && cand_ll >= loglik {
                new_beta = candidate;
                new_loglik = cand_ll;
                improved = true;
                break;
            }
            step *= 0.5;
        }

        let max_score = score.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let rel_change =
            (new_loglik - loglik).abs() / (loglik.abs().max(1.0));
        beta = new_beta;
        let stationary =
            max_score < SCORE_TOL || decrement.abs() < LOGLIK_RTOL * (1.0 + loglik.abs());
        let converged = stationary && rel_change < LOGLIK_RTOL;
        loglik = new_loglik;

        if converged {
            let eta = x.dot(&beta);
            // separation shows up either as the latent index escaping, or
            // as zero deviance: every outcome predicted with probability 1
            if eta.iter().any(|v| v.abs() > SEPARATION_BOUND)
                || loglik > -1e-8 * n as f64
            {
                return Err(EstimatorError::PerfectSeparation(SEPARATION_BOUND));
            }
            // map the fit back to the raw column basis
            let vcov_scaled = chol_inverse(&chol);
            let mut vcov = Array2::zeros((k, k));
            for a in 0..k {
                for b in 0..k {
                    vcov[[a, b]] = vcov_scaled[[a, b]] / (scales[a] * scales[b]);
                }
            }
            let beta_raw = Array1::from_iter((0..k).map(|j| beta[j] / scales[j]));
            let se = se_from_vcov(&vcov);
            let fitted = eta.mapv(norm_cdf);
            let residuals = y - &fitted;
            return Ok(FitResult {
                column_names: design.column_names.clone(),
                beta: beta_raw,
                vcov,
                se,
                residuals,
                fitted,
                n,
                k,
                loglik: Some(loglik),
            });
        }
        if !improved {
            // no uphill step of any length: at a stationary point that is
            // not score-converged, which does not happen for the concave
            // probit likelihood unless the problem separates
            return Err(EstimatorError::PerfectSeparation(SEPARATION_BOUND));
        }
    }
    Err(EstimatorError::MaxIterations(MAX_ITER))
}

/// Average marginal effects of a probit fit.
#[derive(Debug, Clone)]
pub struct ProbitMarginals {
    pub column_names: Vec<String>,
    pub ame: Array1<f64>,
    pub se: Array1<f64>,
}

impl ProbitMarginals {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "names": self.column_names,
            "ame": self.ame.to_vec(),
            "se": self.se.to_vec(),
        })
    }
}

fn is_dummy_column(x: &Array2<f64>, j: usize) -> bool {
    x.column(j).iter().all(|&v| v == 0.0 || v == 1.0)
}

/// Average marginal effects: `mean_i phi(x_i'b) b_j` for continuous
/// regressors and the average discrete change `Phi(.|x_j=1) - Phi(.|x_j=0)`
/// for 0/1 regressors. Standard errors by the delta method from the fit's
/// covariance. The intercept column, when present, is reported with the
/// continuous formula.
pub fn probit_ame(fit: &FitResult, design: &DesignMatrix) -> ProbitMarginals {
    let n = design.n();
    let k = design.k();
    assert_eq!(fit.k, k, "fit and design disagree on k");
    let x = &design.x;
    let eta = x.dot(&fit.beta);
    let nf = n as f64;

    let mut ame = Array1::zeros(k);
    let mut grad = Array2::zeros((k, k)); // gradient of ame_j wrt beta, row j

    let mean_pdf: f64 = eta.iter().map(|&e| norm_pdf(e)).sum::<f64>() / nf;

    for j in 0..k {
        let treat_as_dummy = is_dummy_column(x, j) && !(design.has_intercept && j == 0);
        if treat_as_dummy {
            let bj = fit.beta[j];
            let mut effect = 0.0;
            let mut g = Array1::<f64>::zeros(k);
            for i in 0..n {
                let eta1 = eta[i] + (1.0 - x[[i, j]]) * bj;
                let eta0 = eta[i] - x[[i, j]] * bj;
                effect += norm_cdf(eta1) - norm_cdf(eta0);
                let p1 = norm_pdf(eta1);
                let p0 = norm_pdf(eta0);
                for m in 0..k {
                    let x1 = if m == j { 1.0 } else { x[[i, m]] };
                    let x0 = if m == j { 0.0 } else { x[[i, m]] };
                    g[m] += p1 * x1 - p0 * x0;
                }
            }
            ame[j] = effect / nf;
            for m in 0..k {
                grad[[j, m]] = g[m] / nf;
            }
        } else {
            let bj = fit.beta[j];
            ame[j] = mean_pdf * bj;
            for m in 0..k {
                // d/d beta_m of mean phi(eta) beta_j
                let mut s = 0.0;
                for i in 0..n {
                    s += -eta[i] * norm_pdf(eta[i]) * x[[i, m]];
                }
                grad[[j, m]] = s / nf * bj;
            }
            grad[[j, j]] += mean_pdf;
        }
    }

    let mut se = Array1::zeros(k);
    for j in 0..k {
        let gj = grad.row(j);
        let mut var = 0.0;
        for a in 0..k {
            for b in 0..k {
                var += gj[a] * fit.vcov[[a, b]] * gj[b];
            }
        }
        se[j] = var.max(0.0).sqrt();
    }

    ProbitMarginals { column_names: design.column_names.clone(), ame, se }
}
