//! Formula terms and design-matrix construction.
//!
//! Terms are written as strings: `"age"`, `"age^2"`, `"female:incouple"`.
//! Categoricals expand to one dummy per non-reference level (reference =
//! first level in first-appearance order unless overridden), booleans to a
//! single 0/1 column, and interactions to products over the expanded
//! columns of their parts. Rows with a missing cell in any referenced
//! column are dropped (listwise deletion).

use std::collections::HashMap;

use ndarray::{Array1, Array2};

use super::{ColumnData, Frame, FrameError};

/// One term of a model formula.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Term {
    /// A column by name (numeric, boolean, or categorical).
    Var(String),
    /// The square of a numeric column, written `name^2`.
    Square(String),
    /// An elementwise product of two or more columns, written `a:b`.
    Interaction(Vec<String>),
}

impl Term {
    pub fn parse(text: &str) -> Term {
        let t = text.trim();
        if let Some(base) = t.strip_suffix("^2") {
            return Term::Square(base.trim().to_string());
        }
        if t.contains(':') {
            return Term::Interaction(t.split(':').map(|s| s.trim().to_string()).collect());
        }
        Term::Var(t.to_string())
    }

    /// Column names this term reads.
    pub fn variables(&self) -> Vec<&str> {
        match self {
            Term::Var(v) | Term::Square(v) => vec![v.as_str()],
            Term::Interaction(vs) => vs.iter().map(|s| s.as_str()).collect(),
        }
    }
}

/// Response, terms and intercept flag for one model.
#[derive(Debug, Clone)]
pub struct FormulaSpec {
    pub response: String,
    pub terms: Vec<Term>,
    pub intercept: bool,
    /// Optional per-variable reference-level override for dummy expansion.
    pub reference_levels: HashMap<String, String>,
}

impl FormulaSpec {
    pub fn new(response: &str, terms: &[&str]) -> FormulaSpec {
        FormulaSpec {
            response: response.to_string(),
            terms: terms.iter().map(|t| Term::parse(t)).collect(),
            intercept: true,
            reference_levels: HashMap::new(),
        }
    }

    pub fn without_intercept(mut self) -> FormulaSpec {
        self.intercept = false;
        self
    }

    pub fn with_reference(mut self, var: &str, level: &str) -> FormulaSpec {
        self.reference_levels.insert(var.to_string(), level.to_string());
        self
    }

    fn referenced_columns(&self) -> Vec<&str> {
        let mut cols = vec![self.response.as_str()];
        for term in &self.terms {
            cols.extend(term.variables());
        }
        cols
    }
}

/// A dense regressor matrix with named columns and a map back to the rows
/// of the frame it was built from.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub x: Array2<f64>,
    pub column_names: Vec<String>,
    pub has_intercept: bool,
    /// Frame row behind each design row (listwise-deleted rows absent).
    pub row_index: Vec<usize>,
    /// Advisory collinearity flag; resolving rank problems is the
    /// estimator's job.
    pub rank_warning: bool,
}

impl DesignMatrix {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    pub fn column_means(&self) -> Array1<f64> {
        let n = self.n() as f64;
        let mut means = Array1::zeros(self.k());
        for j in 0..self.k() {
            means[j] = self.x.column(j).sum() / n;
        }
        means
    }

    /// Keep only the given design rows (positions, not frame rows).
    pub fn subset_rows(&self, keep: &[usize]) -> DesignMatrix {
        let mut x = Array2::zeros((keep.len(), self.k()));
        for (slot, &i) in keep.iter().enumerate() {
            for j in 0..self.k() {
                x[[slot, j]] = self.x[[i, j]];
            }
        }
        DesignMatrix {
            x,
            column_names: self.column_names.clone(),
            has_intercept: self.has_intercept,
            row_index: keep.iter().map(|&i| self.row_index[i]).collect(),
            rank_warning: self.rank_warning,
        }
    }
}

/// Expanded representation of one variable: a list of (name, values).
fn expand_variable(
    frame: &Frame,
    name: &str,
    rows: &[usize],
    reference_levels: &HashMap<String, String>,
) -> Result<Vec<(String, Vec<f64>)>, FrameError> {
    let col = frame.column(name)?;
    match &col.data {
        ColumnData::Numeric(v) => {
            let vals = rows.iter().map(|&r| v[r].unwrap()).collect();
            Ok(vec![(name.to_string(), vals)])
        }
        ColumnData::Boolean(v) => {
            let vals = rows.iter().map(|&r| if v[r].unwrap() { 1.0 } else { 0.0 }).collect();
            Ok(vec![(name.to_string(), vals)])
        }
        ColumnData::Categorical { levels, codes } => {
            let reference = match reference_levels.get(name) {
                Some(level) => levels
                    .iter()
                    .position(|l| l == level)
                    .ok_or_else(|| FrameError::BadColumnType(name.to_string()))?,
                None => 0,
            };
            let mut out = Vec::with_capacity(levels.len().saturating_sub(1));
            for (code, level) in levels.iter().enumerate() {
                if code == reference {
                    continue;
                }
                let vals = rows
                    .iter()
                    .map(|&r| if codes[r].unwrap() as usize == code { 1.0 } else { 0.0 })
                    .collect();
                out.push((format!("{name}={level}"), vals));
            }
            Ok(out)
        }
    }
}

/// Build the response vector and design matrix for a formula, dropping rows
/// with any missing cell among the referenced columns.
pub fn build_design(
    frame: &Frame,
    spec: &FormulaSpec,
) -> Result<(Array1<f64>, DesignMatrix), FrameError> {
    let referenced = spec.referenced_columns();
    for name in &referenced {
        frame.column(name)?;
    }

    let rows: Vec<usize> = (0..frame.n_rows())
        .filter(|&r| referenced.iter().all(|name| !frame.column(name).unwrap().data.is_missing(r)))
        .collect();
    if rows.is_empty() {
        return Err(FrameError::EmptyAfterDeletion);
    }
    let n = rows.len();

    let response = frame.column(&spec.response)?;
    let resp_values = response.as_numeric()?;
    let y = Array1::from_iter(rows.iter().map(|&r| resp_values[r].unwrap()));

    let mut names: Vec<String> = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    if spec.intercept {
        names.push("intercept".to_string());
        cols.push(vec![1.0; n]);
    }

    for term in &spec.terms {
        match term {
            Term::Var(v) => {
                for (name, vals) in expand_variable(frame, v, &rows, &spec.reference_levels)? {
                    names.push(name);
                    cols.push(vals);
                }
            }
            Term::Square(v) => {
                let base = frame.column(v)?.as_numeric()?;
                if frame.column(v)?.data.kind() == super::ColumnKind::Categorical {
                    return Err(FrameError::BadColumnType(v.clone()));
                }
                names.push(format!("{v}^2"));
                cols.push(rows.iter().map(|&r| { let x = base[r].unwrap(); x * x }).collect());
            }
            Term::Interaction(vars) => {
                let mut partial: Vec<(String, Vec<f64>)> = vec![(String::new(), vec![1.0; n])];
                for v in vars {
                    let expanded = expand_variable(frame, v, &rows, &spec.reference_levels)?;
                    let mut next = Vec::with_capacity(partial.len() * expanded.len());
                    for (pname, pvals) in &partial {
                        for (ename, evals) in &expanded {
                            let name = if pname.is_empty() {
                                ename.clone()
                            } else {
                                format!("{pname}:{ename}")
                            };
                            let vals = pvals.iter().zip(evals).map(|(a, b)| a * b).collect();
                            next.push((name, vals));
                        }
                    }
                    partial = next;
                }
                for (name, vals) in partial {
                    names.push(name);
                    cols.push(vals);
                }
            }
        }
    }

    let k = cols.len();
    let mut x = Array2::zeros((n, k));
    for (j, col) in cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            x[[i, j]] = v;
        }
    }

    let rank_warning = gram_rank_deficient(&x);

    Ok((
        y,
        DesignMatrix { x, column_names: names, has_intercept: spec.intercept, row_index: rows, rank_warning },
    ))
}

/// Advisory rank probe on the Gram matrix via pivoted Cholesky.
fn gram_rank_deficient(x: &Array2<f64>) -> bool {
    let (n, k) = x.dim();
    if n < k {
        return true;
    }
    let mut gram = Array2::zeros((k, k));
    for a in 0..k {
        for b in a..k {
            let mut s = 0.0;
            for i in 0..n {
                s += x[[i, a]] * x[[i, b]];
            }
            gram[[a, b]] = s;
            gram[[b, a]] = s;
        }
    }
    // pivoted Cholesky: stop when the largest remaining diagonal falls under
    // tolerance; rank < k means some column is (nearly) dependent
    let mut diag_max: f64 = (0..k).map(|j| gram[[j, j]]).fold(0.0, f64::max);
    if diag_max <= 0.0 {
        return true;
    }
    let tol = diag_max * 1e-12 * k as f64;
    let mut perm: Vec<usize> = (0..k).collect();
    let mut l = gram.clone();
    for step in 0..k {
        let (pivot, pval) = (step..k)
            .map(|j| (j, l[[j, j]]))
            .fold((step, f64::MIN), |acc, c| if c.1 > acc.1 { c } else { acc });
        if pval <= tol {
            return true;
        }
        if pivot != step {
            perm.swap(step, pivot);
            for j in 0..k {
                l.swap([step, j], [pivot, j]);
            }
            for i in 0..k {
                l.swap([i, step], [i, pivot]);
            }
        }
        let d = l[[step, step]].sqrt();
        l[[step, step]] = d;
        for i in (step + 1)..k {
            l[[i, step]] /= d;
        }
        for j in (step + 1)..k {
            for i in j..k {
                let v = l[[i, step]] * l[[j, step]];
                l[[i, j]] -= v;
                if i != j {
                    l[[j, i]] -= v;
                }
            }
        }
        diag_max = (step + 1..k).map(|j| l[[j, j]]).fold(0.0, f64::max);
        let _ = diag_max;
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::Column;
    use approx::assert_abs_diff_eq;

    fn toy_frame() -> Frame {
        let mut frame = Frame::new();
        frame
            .push_column(Column::numeric("y", vec![Some(1.0), Some(2.0), Some(3.0), Some(4.0)]))
            .unwrap();
        frame
            .push_column(Column::numeric("x", vec![Some(1.0), Some(2.0), Some(3.0), None]))
            .unwrap();
        frame
            .push_column(Column::categorical_from_labels(
                "g",
                &[Some("a"), Some("b"), Some("c"), Some("a")],
            ))
            .unwrap();
        frame
            .push_column(Column::boolean("female", vec![Some(true), Some(false), Some(true), Some(true)]))
            .unwrap();
        frame
            .push_column(Column::boolean("incouple", vec![Some(true), Some(true), Some(false), Some(false)]))
            .unwrap();
        frame
    }

    #[test]
    fn categorical_three_levels_two_dummies() {
        let frame = toy_frame();
        let spec = FormulaSpec::new("y", &["g"]);
        let (_, design) = build_design(&frame, &spec).unwrap();
        assert_eq!(design.column_names, vec!["intercept", "g=b", "g=c"]);
        // reference level "a" maps to all-zero dummies
        assert_eq!(design.x.row(0).to_vec(), vec![1.0, 0.0, 0.0]);
        assert_eq!(design.x.row(1).to_vec(), vec![1.0, 1.0, 0.0]);
        assert_eq!(design.x.row(2).to_vec(), vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn squares_are_elementwise() {
        let frame = toy_frame();
        let spec = FormulaSpec::new("y", &["x", "x^2"]);
        let (y, design) = build_design(&frame, &spec).unwrap();
        // row 3 dropped: x missing
        assert_eq!(design.n(), 3);
        assert_eq!(y.to_vec(), vec![1.0, 2.0, 3.0]);
        assert_eq!(design.column_names, vec!["intercept", "x", "x^2"]);
        let squares: Vec<f64> = design.x.column(2).to_vec();
        assert_eq!(squares, vec![1.0, 4.0, 9.0]);
    }

    #[test]
    fn interaction_is_product_of_expanded_columns() {
        let frame = toy_frame();
        let spec = FormulaSpec::new("y", &["female", "incouple", "female:incouple"]);
        let (_, design) = build_design(&frame, &spec).unwrap();
        // hand expansion of the product column
        let female = [1.0, 0.0, 1.0, 1.0];
        let incouple = [1.0, 1.0, 0.0, 0.0];
        let expect: Vec<f64> = female.iter().zip(&incouple).map(|(a, b)| a * b).collect();
        let got: Vec<f64> = design.x.column(3).to_vec();
        assert_eq!(got, expect);
        assert_eq!(design.column_names[3], "female:incouple");
    }

    #[test]
    fn listwise_deletion_counts_add_up() {
        let frame = toy_frame();
        let spec = FormulaSpec::new("y", &["x"]);
        let (_, design) = build_design(&frame, &spec).unwrap();
        let dropped = frame.n_rows() - design.n();
        assert_eq!(dropped, 1);
        assert_eq!(design.row_index, vec![0, 1, 2]);
    }

    #[test]
    fn empty_after_deletion_errors() {
        let mut frame = Frame::new();
        frame.push_column(Column::numeric("y", vec![None, None])).unwrap();
        frame.push_column(Column::numeric("x", vec![Some(1.0), Some(2.0)])).unwrap();
        let spec = FormulaSpec::new("y", &["x"]);
        assert!(matches!(build_design(&frame, &spec), Err(FrameError::EmptyAfterDeletion)));
    }

    #[test]
    fn reference_level_override() {
        let frame = toy_frame();
        let spec = FormulaSpec::new("y", &["g"]).with_reference("g", "b");
        let (_, design) = build_design(&frame, &spec).unwrap();
        assert_eq!(design.column_names, vec!["intercept", "g=a", "g=c"]);
    }

    #[test]
    fn rank_warning_on_duplicate_column() {
        let frame = toy_frame();
        let spec = FormulaSpec::new("y", &["female", "female:incouple", "incouple:female"]);
        let (_, design) = build_design(&frame, &spec).unwrap();
        assert!(design.rank_warning);

        let clean = FormulaSpec::new("y", &["female", "incouple"]);
        let (_, design) = build_design(&frame, &clean).unwrap();
        assert!(!design.rank_warning);
    }

    #[test]
    fn dummy_rows_sum_to_at_most_one() {
        let frame = toy_frame();
        let spec = FormulaSpec::new("y", &["g"]);
        let (_, design) = build_design(&frame, &spec).unwrap();
        for i in 0..design.n() {
            let s: f64 = design.x.row(i).iter().skip(1).sum();
            assert!(s <= 1.0 + 1e-15);
            // exactly one when the row is not the reference level
            let is_reference = frame.column("g").unwrap().label(design.row_index[i]) == Some("a");
            assert_abs_diff_eq!(s, if is_reference { 0.0 } else { 1.0 }, epsilon = 0.0);
        }
    }
}
