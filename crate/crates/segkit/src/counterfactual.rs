//! Predicted and residual wages, their counterfactual versions under a
//! reference group's coefficients, empirical CDFs, the two-sample
//! Kolmogorov-Smirnov test and a stochastic-dominance checker.

use ndarray::Array1;
use thiserror::Error;

use crate::estimators::FitResult;
use crate::frame::DesignMatrix;
use crate::segregation::{Dominance, Gender};

#[derive(Debug, Error)]
pub enum CounterfactualError {
    #[error("design columns of {0:?} do not match the reference model")]
    ColumnMismatch(String),
    #[error("reference subgroup {0:?} not among the inputs")]
    MissingReference(String),
    #[error("empty input sample")]
    EmptyInput,
}

/// Identifies one of the four gender x dominance subgroups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SubgroupId {
    pub gender: Gender,
    pub dominance: Dominance,
}

impl SubgroupId {
    pub fn tag(&self) -> String {
        let g = match self.gender {
            Gender::M => "ml",
            Gender::F => "fml",
        };
        let d = match self.dominance {
            Dominance::Male => "ml-dom",
            Dominance::Female => "fml-dom",
        };
        format!("{g},{d}")
    }
}

/// The reference cell: men in male-dominated sectors.
pub const REFERENCE: SubgroupId = SubgroupId { gender: Gender::M, dominance: Dominance::Male };

/// One subgroup's fitted model, design and observed outcome.
pub struct SubgroupFit {
    pub id: SubgroupId,
    pub fit: FitResult,
    pub design: DesignMatrix,
    pub y: Array1<f64>,
}

/// Own and counterfactual predictions and residuals for one subgroup.
#[derive(Debug, Clone)]
pub struct WageDecomp {
    pub id: SubgroupId,
    pub predicted: Vec<f64>,
    pub residual: Vec<f64>,
    pub cf_predicted: Vec<f64>,
    pub cf_residual: Vec<f64>,
}

/// Apply each subgroup's own coefficients and the reference subgroup's
/// coefficients to its design: `yhat = X b_own`, `yhat_c = X b_ref`,
/// residuals are the complements `y - yhat` and `y - yhat_c`.
pub fn decompose_wages(
    subgroups: &[SubgroupFit],
    reference: SubgroupId,
) -> Result<Vec<WageDecomp>, CounterfactualError> {
    let ref_fit = subgroups
        .iter()
        .find(|s| s.id == reference)
        .ok_or_else(|| CounterfactualError::MissingReference(reference.tag()))?;
    let ref_beta = ref_fit.fit.beta.clone();
    let ref_columns = ref_fit.design.column_names.clone();

    let mut out = Vec::with_capacity(subgroups.len());
    for sub in subgroups {
        if sub.design.column_names != ref_columns {
            return Err(CounterfactualError::ColumnMismatch(sub.id.tag()));
        }
        let predicted = sub.design.x.dot(&sub.fit.beta);
        let cf_predicted = sub.design.x.dot(&ref_beta);
        let residual: Vec<f64> =
            sub.y.iter().zip(predicted.iter()).map(|(y, p)| y - p).collect();
        let cf_residual: Vec<f64> =
            sub.y.iter().zip(cf_predicted.iter()).map(|(y, p)| y - p).collect();
        out.push(WageDecomp {
            id: sub.id,
            predicted: predicted.to_vec(),
            residual,
            cf_predicted: cf_predicted.to_vec(),
            cf_residual,
        });
    }
    Ok(out)
}

/// Right-continuous empirical CDF with tied values merged.
#[derive(Debug, Clone)]
pub struct CdfSeries {
    pub values: Vec<f64>,
    pub probs: Vec<f64>,
}

pub fn ecdf(values: &[f64]) -> Result<CdfSeries, CounterfactualError> {
    if values.is_empty() {
        return Err(CounterfactualError::EmptyInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut out_values = Vec::new();
    let mut probs = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let v = sorted[i];
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == v {
            j += 1;
        }
        out_values.push(v);
        probs.push((j + 1) as f64 / n);
        i = j + 1;
    }
    Ok(CdfSeries { values: out_values, probs })
}

impl CdfSeries {
    /// F(x): the fraction of mass at or below x.
    pub fn eval(&self, x: f64) -> f64 {
        match self.values.partition_point(|&v| v <= x) {
            0 => 0.0,
            idx => self.probs[idx - 1],
        }
    }
}

/// Two-sample Kolmogorov-Smirnov test.
#[derive(Debug, Clone, serde::Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
}

/// Survival function of the Kolmogorov distribution,
/// `Q(t) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 t^2)`, with the
/// theta-function form used for small t where that series converges slowly.
fn kolmogorov_sf(t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    if t < 1.18 {
        // 1 - (sqrt(2 pi)/t) sum_{k odd} exp(-k^2 pi^2 / (8 t^2))
        let factor = (std::f64::consts::TAU).sqrt() / t;
        let a = -std::f64::consts::PI * std::f64::consts::PI / (8.0 * t * t);
        let mut sum = 0.0;
        for k in [1.0f64, 3.0, 5.0, 7.0, 9.0] {
            sum += (a * k * k).exp();
        }
        (1.0 - factor * sum).clamp(0.0, 1.0)
    } else {
        let mut sum = 0.0;
        let mut sign = 1.0;
        for k in 1..=25 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * t * t).exp();
            sum += sign * term;
            sign = -sign;
            if term < 1e-18 {
                break;
            }
        }
        (2.0 * sum).clamp(0.0, 1.0)
    }
}

/// D = sup |F1 - F2| by a sweep over the merged sorted samples; asymptotic
/// p-value from the Kolmogorov distribution at
/// `sqrt(n1 n2 / (n1 + n2)) * D`.
pub fn ks_test(a: &[f64], b: &[f64]) -> Result<KsResult, CounterfactualError> {
    if a.is_empty() || b.is_empty() {
        return Err(CounterfactualError::EmptyInput);
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (n1, n2) = (sa.len(), sb.len());
    let (n1f, n2f) = (n1 as f64, n2 as f64);

    let mut d: f64 = 0.0;
    let mut ia = 0;
    let mut ib = 0;
    while ia < n1 && ib < n2 {
        let step = sa[ia].min(sb[ib]);
        while ia < n1 && sa[ia] == step {
            ia += 1;
        }
        while ib < n2 && sb[ib] == step {
            ib += 1;
        }
        d = d.max((ia as f64 / n1f - ib as f64 / n2f).abs());
    }
    // after one sample is exhausted the gap only shrinks toward |1 - F|,
    // which the loop has already seen at the last merged value

    let effective_n = n1f * n2f / (n1f + n2f);
    let p_value = kolmogorov_sf(effective_n.sqrt() * d);
    Ok(KsResult { statistic: d, p_value, n1, n2 })
}

/// Relation of CDF a to CDF b over their merged jump points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum CdfRelation {
    /// F_a <= F_b everywhere: a lies to the right (stochastically larger).
    Dominates,
    /// F_a >= F_b everywhere: a lies to the left of b.
    Dominated,
    Crosses,
    Equal,
}

/// First-order stochastic-dominance check with a tolerance on probability
/// differences.
pub fn cdf_relation(a: &CdfSeries, b: &CdfSeries, tol: f64) -> CdfRelation {
    let mut points: Vec<f64> = a.values.iter().chain(b.values.iter()).copied().collect();
    points.sort_by(|x, y| x.partial_cmp(y).unwrap());
    points.dedup();
    let mut max_diff = f64::NEG_INFINITY;
    let mut min_diff = f64::INFINITY;
    for &x in &points {
        let diff = a.eval(x) - b.eval(x);
        max_diff = max_diff.max(diff);
        min_diff = min_diff.min(diff);
    }
    let above = max_diff > tol;
    let below = min_diff < -tol;
    match (above, below) {
        (true, true) => CdfRelation::Crosses,
        (true, false) => CdfRelation::Dominated,
        (false, true) => CdfRelation::Dominates,
        (false, false) => CdfRelation::Equal,
    }
}
