//! Per-analysis stage runners: each consumes the loaded input, writes its
//! JSON/CSV/SVG artifacts into its own directory, and fails with the stage
//! name attached.

use std::path::Path;

use ndarray::Array1;

use super::svg::{self, Plot, Series};
use super::{write_atomic, AnalysisConfig, LoadedInput, PipelineError};
use crate::counterfactual::{
    decompose_wages, ecdf, ks_test, SubgroupFit, SubgroupId, REFERENCE,
};
use crate::estimators::{lasso_bic, ols, probit_ame, VcovKind};
use crate::frame::{build_design, FormulaSpec, Frame};
use crate::kbo::kbo_by_period;
use crate::matching::{balance, estimate_pscore, ipw_ate, match_att};
use crate::segregation::{
    classify_dominance, rank_segregation, ssi, Dominance, Gender, Pooling, SplitRule,
};
use crate::shiftshare::shift_share;

pub(crate) fn run_stage(
    config: &super::PipelineConfig,
    analysis: &AnalysisConfig,
    input: &LoadedInput,
    dir: &Path,
    stamp: Option<&str>,
) -> Result<(), PipelineError> {
    let result = match analysis.kind.as_str() {
        "segregation" => run_segregation(analysis, input, dir, stamp),
        "shiftshare" => run_shiftshare(analysis, input, dir, stamp),
        "participation_probit" => run_participation(analysis, input, dir),
        "lasso_select" => run_lasso(analysis, input, dir),
        "psm" => run_psm(analysis, input, dir, stamp),
        "mincer" => run_mincer(analysis, input, dir),
        "kbo" => run_kbo(analysis, input, dir, stamp),
        "counterfactual" => run_counterfactual(config, analysis, input, dir, stamp),
        other => Err(format!("unknown analysis kind {other:?}")),
    };
    result.map_err(|message| PipelineError::AnalysisFailed {
        stage: analysis.stage_name(),
        message,
    })
}

type StageResult = Result<(), String>;

fn formula_of(analysis: &AnalysisConfig) -> Result<FormulaSpec, String> {
    let response = analysis.response.as_deref().ok_or("missing `response`")?;
    let term_refs: Vec<&str> = analysis.terms.iter().map(|s| s.as_str()).collect();
    let mut spec = FormulaSpec::new(response, &term_refs);
    if analysis.intercept == Some(false) {
        spec = spec.without_intercept();
    }
    for (var, level) in &analysis.reference_levels {
        spec = spec.with_reference(var, level);
    }
    Ok(spec)
}

fn frame_of<'a>(input: &'a LoadedInput) -> Result<&'a Frame, String> {
    input.frame.as_ref().ok_or_else(|| "this analysis needs microdata input".to_string())
}

/// Remove formula terms that read `column`; stratified fits would otherwise
/// carry a regressor constant within the stratum.
fn drop_terms_referencing(spec: &FormulaSpec, column: &str) -> FormulaSpec {
    let mut out = spec.clone();
    out.terms.retain(|t| !t.variables().contains(&column));
    out
}

fn save(dir: &Path, file: &str, bytes: &[u8]) -> Result<(), String> {
    write_atomic(&dir.join(file), bytes).map_err(|e| e.to_string())
}

fn save_json(dir: &Path, file: &str, value: &serde_json::Value) -> Result<(), String> {
    let text = serde_json::to_string_pretty(value).map_err(|e| e.to_string())?;
    save(dir, file, text.as_bytes())
}

fn save_svg(dir: &Path, file: &str, plot: Plot, stamp: Option<&str>) -> Result<(), String> {
    let plot = match stamp {
        Some(s) => plot.with_timestamp(s),
        None => plot,
    };
    save(dir, file, plot.render().as_bytes())
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::Writer::from_writer(Vec::new())
}

fn finish_csv(writer: csv::Writer<Vec<u8>>, dir: &Path, file: &str) -> Result<(), String> {
    let bytes = writer.into_inner().map_err(|e| e.to_string())?;
    save(dir, file, &bytes)
}

fn num(v: f64) -> String {
    format!("{v}")
}

// ---------------------------------------------------------------- segregation

fn run_segregation(
    analysis: &AnalysisConfig,
    input: &LoadedInput,
    dir: &Path,
    stamp: Option<&str>,
) -> StageResult {
    let pooling = match analysis.pooling.as_deref() {
        Some("per_time") => Pooling::PerTime,
        Some("pooled") | None => Pooling::Pooled,
        Some(other) => return Err(format!("unknown pooling {other:?}")),
    };
    let split = match analysis.split.as_deref() {
        Some("explicit") => SplitRule::Explicit(analysis.high_sectors.clone()),
        Some("median") | None => SplitRule::Median,
        Some(other) => return Err(format!("unknown split {other:?}")),
    };
    let panel = &input.panel;
    let dominance = classify_dominance(panel, pooling).map_err(|e| e.to_string())?;
    let series = ssi(panel, &dominance).map_err(|e| e.to_string())?;
    // panels too small to rank still get their index table; the degree
    // column stays empty
    let degrees = match rank_segregation(&series, &dominance, &split) {
        Ok(d) => Some(d),
        Err(crate::segregation::SegregationError::GroupTooSmall(_)) => None,
        Err(e) => return Err(e.to_string()),
    };

    let mut writer = csv_writer();
    writer
        .write_record(["time", "group", "sector", "contribution", "group_ssi", "degree"])
        .map_err(|e| e.to_string())?;
    for point in &series.points {
        for (sector, contribution) in &point.contributions {
            let degree = degrees
                .as_ref()
                .and_then(|d| d.degree_of(sector))
                .map(|d| format!("{d:?}"))
                .unwrap_or_default();
            writer
                .write_record([
                    point.time.as_str(),
                    point.group.tag(),
                    sector.as_str(),
                    &num(*contribution),
                    &num(point.value),
                    &degree,
                ])
                .map_err(|e| e.to_string())?;
        }
    }
    finish_csv(writer, dir, "segregation.csv")?;

    let fd_values: Vec<f64> = series
        .points
        .iter()
        .filter(|p| p.group == Dominance::Female)
        .map(|p| p.value)
        .collect();
    let md_values: Vec<f64> = series
        .points
        .iter()
        .filter(|p| p.group == Dominance::Male)
        .map(|p| p.value)
        .collect();
    let plot = svg::frequency_polygon(
        "Sectoral segregation index by dominance group",
        "SSI",
        &[("female-dominated".into(), fd_values), ("male-dominated".into(), md_values)],
        12,
    );
    save_svg(dir, "segregation.svg", plot, stamp)
}

// ----------------------------------------------------------------- shiftshare

fn run_shiftshare(
    analysis: &AnalysisConfig,
    input: &LoadedInput,
    dir: &Path,
    stamp: Option<&str>,
) -> StageResult {
    let gender = match analysis.gender.as_deref() {
        Some("M") | Some("m") => Gender::M,
        Some("F") | Some("f") | None => Gender::F,
        Some(other) => return Err(format!("unknown gender {other:?}")),
    };
    let panel = &input.panel;
    let base_time = analysis
        .base_time
        .clone()
        .or_else(|| panel.times.first().cloned())
        .ok_or("panel has no time points")?;
    let dominance = classify_dominance(panel, Pooling::Pooled).map_err(|e| e.to_string())?;
    let result = shift_share(panel, gender, &base_time, &dominance).map_err(|e| e.to_string())?;

    let mut writer = csv_writer();
    writer
        .write_record(["time", "group", "overall", "between", "within", "residual"])
        .map_err(|e| e.to_string())?;
    for row in &result.rows {
        writer
            .write_record([
                row.time.as_str(),
                row.group.tag(),
                &num(row.overall),
                &num(row.between),
                &num(row.within),
                &num(row.residual),
            ])
            .map_err(|e| e.to_string())?;
    }
    finish_csv(writer, dir, "shiftshare.csv")?;

    let mut series = Vec::new();
    for group in [Dominance::Female, Dominance::Male] {
        for (component, pick) in [
            ("overall", 0usize),
            ("between", 1),
            ("within", 2),
        ] {
            let points: Vec<(f64, f64)> = result
                .rows
                .iter()
                .filter(|r| r.group == group)
                .enumerate()
                .map(|(t, r)| {
                    let v = match pick {
                        0 => r.overall,
                        1 => r.between,
                        _ => r.within,
                    };
                    (t as f64, v)
                })
                .collect();
            series.push(Series { label: format!("{} {component}", group.tag()), points });
        }
    }
    let plot = svg::line_chart(
        "Shift-share decomposition of employment change",
        "periods since base",
        "change in employment share",
        &series,
    );
    save_svg(dir, "shiftshare.svg", plot, stamp)
}

// -------------------------------------------------------------- participation

fn run_participation(analysis: &AnalysisConfig, input: &LoadedInput, dir: &Path) -> StageResult {
    let frame = frame_of(input)?;
    let spec = formula_of(analysis)?;
    let (y, design) = build_design(frame, &spec).map_err(|e| e.to_string())?;
    let fit = crate::estimators::probit(&y, &design).map_err(|e| e.to_string())?;
    let marginals = probit_ame(&fit, &design);

    save_json(
        dir,
        "participation_probit.json",
        &serde_json::json!({
            "fit": fit.to_json(false),
            "marginal_effects": marginals.to_json(),
        }),
    )?;

    let mut writer = csv_writer();
    writer
        .write_record(["term", "coef", "se", "ame", "ame_se"])
        .map_err(|e| e.to_string())?;
    for j in 0..fit.k {
        writer
            .write_record([
                fit.column_names[j].as_str(),
                &num(fit.beta[j]),
                &num(fit.se[j]),
                &num(marginals.ame[j]),
                &num(marginals.se[j]),
            ])
            .map_err(|e| e.to_string())?;
    }
    finish_csv(writer, dir, "participation_probit.csv")
}

// -------------------------------------------------------------------- lasso

fn run_lasso(analysis: &AnalysisConfig, input: &LoadedInput, dir: &Path) -> StageResult {
    let frame = frame_of(input)?;
    let spec = formula_of(analysis)?;
    let (y, design) = build_design(frame, &spec).map_err(|e| e.to_string())?;
    let grid_size = analysis.grid_size.unwrap_or(100);
    let path = lasso_bic(&y, &design, grid_size).map_err(|e| e.to_string())?;

    save_json(dir, "lasso_select.json", &path.to_json())?;

    // selected covariates with their penalized and refit coefficients
    let mut writer = csv_writer();
    writer
        .write_record(["term", "lasso_coef", "post_ols_coef"])
        .map_err(|e| e.to_string())?;
    let selected_row = path.coef.row(path.selected_index);
    for (j, name) in path.column_names.iter().enumerate() {
        let lasso_value = selected_row[j];
        if j > 0 && lasso_value == 0.0 {
            continue;
        }
        let post = path.post_ols.coef(name).unwrap_or(0.0);
        writer
            .write_record([name.as_str(), &num(lasso_value), &num(post)])
            .map_err(|e| e.to_string())?;
    }
    finish_csv(writer, dir, "lasso_select.csv")
}

// ---------------------------------------------------------------------- psm

fn run_psm(
    analysis: &AnalysisConfig,
    input: &LoadedInput,
    dir: &Path,
    stamp: Option<&str>,
) -> StageResult {
    let frame = frame_of(input)?;
    let treatment = analysis.treatment.as_deref().ok_or("missing `treatment`")?;
    let term_refs: Vec<&str> = analysis.terms.iter().map(|s| s.as_str()).collect();
    let spec = FormulaSpec::new(treatment, &term_refs);
    let k = analysis.neighbors.unwrap_or(5);
    let common_support = analysis.common_support.unwrap_or(true);
    let gender_col = analysis.gender_column.as_deref().unwrap_or("female");
    let samples: Vec<String> = if analysis.samples.is_empty() {
        vec!["pooled".to_string()]
    } else {
        analysis.samples.clone()
    };

    let mut table_writer = csv_writer();
    table_writer
        .write_record([
            "sample",
            "outcome",
            "treated_mean",
            "control_mean",
            "att",
            "se",
            "t_stat",
            "n_untreated_on_support",
            "n_treated_on_support",
            "n_treated_off_support",
            "ipw_ate",
            "ipw_se",
        ])
        .map_err(|e| e.to_string())?;
    let mut balance_writer = csv_writer();
    balance_writer
        .write_record(["sample", "covariate", "bias_before", "bias_after", "pass"])
        .map_err(|e| e.to_string())?;
    let mut json_samples = serde_json::Map::new();
    let mut first_balance_rows: Vec<(String, f64, f64)> = Vec::new();

    for sample in &samples {
        let sub_frame = match sample.as_str() {
            "pooled" => frame.clone(),
            "men" | "women" => {
                let flags = frame
                    .column(gender_col)
                    .map_err(|e| e.to_string())?
                    .as_numeric()
                    .map_err(|e| e.to_string())?;
                let want = if sample == "women" { 1.0 } else { 0.0 };
                let mask: Vec<bool> = flags.iter().map(|f| *f == Some(want)).collect();
                frame.filter(&mask)
            }
            other => return Err(format!("unknown sample {other:?} (use pooled, men, women)")),
        };
        let sample_spec = if sample == "pooled" {
            spec.clone()
        } else {
            drop_terms_referencing(&spec, gender_col)
        };
        let ps = estimate_pscore(&sub_frame, treatment, &sample_spec).map_err(|e| e.to_string())?;

        let mut outcome_json = serde_json::Map::new();
        for (outcome_idx, outcome) in analysis.outcomes.iter().enumerate() {
            let values = sub_frame
                .column(outcome)
                .map_err(|e| e.to_string())?
                .as_numeric()
                .map_err(|e| e.to_string())?;
            // keep score-model rows whose outcome is observed
            let mut positions = Vec::new();
            let mut y = Vec::new();
            for (pos, &frame_row) in ps.row_index.iter().enumerate() {
                if let Some(v) = values[frame_row] {
                    positions.push(pos);
                    y.push(v);
                }
            }
            if y.is_empty() {
                return Err(format!("outcome {outcome:?} has no observed values"));
            }
            let ps_outcome = ps.subset(&positions);
            let result =
                match_att(&ps_outcome, &y, k, common_support).map_err(|e| e.to_string())?;
            let ipw = ipw_ate(&ps_outcome, &y);

            table_writer
                .write_record([
                    sample.as_str(),
                    outcome.as_str(),
                    &num(result.mean_treated),
                    &num(result.mean_control_matched),
                    &num(result.att),
                    &num(result.se_naive),
                    &num(result.t_stat),
                    &result.n_untreated_on_support.to_string(),
                    &result.n_treated_on_support.to_string(),
                    &result.n_treated_off_support.to_string(),
                    &num(ipw.ate),
                    &num(ipw.se),
                ])
                .map_err(|e| e.to_string())?;

            // balance diagnostics on the first outcome's matches
            if outcome_idx == 0 {
                let design = ps
                    .design
                    .as_ref()
                    .expect("estimated score model retains its design")
                    .subset_rows(&positions);
                let table = balance(&ps_outcome, &design, &result);
                for row in &table.rows {
                    balance_writer
                        .write_record([
                            sample.as_str(),
                            row.covariate.as_str(),
                            &num(row.bias_before),
                            &num(row.bias_after),
                            if row.pass { "true" } else { "false" },
                        ])
                        .map_err(|e| e.to_string())?;
                    if sample == &samples[0] {
                        first_balance_rows.push((
                            row.covariate.clone(),
                            row.bias_before,
                            row.bias_after,
                        ));
                    }
                }
            }

            outcome_json.insert(
                outcome.clone(),
                serde_json::json!({
                    "match": result.to_json(),
                    "ipw": { "ate": ipw.ate, "se": ipw.se, "extreme_weights": ipw.extreme_weights },
                }),
            );
        }
        json_samples.insert(sample.clone(), serde_json::Value::Object(outcome_json));
    }

    finish_csv(table_writer, dir, "psm.csv")?;
    finish_csv(balance_writer, dir, "balance.csv")?;
    save_json(dir, "psm.json", &serde_json::Value::Object(json_samples))?;
    let plot =
        svg::balance_dot_plot("Covariate balance before and after matching", &first_balance_rows);
    save_svg(dir, "balance.svg", plot, stamp)
}

// ------------------------------------------------------------------- mincer

fn run_mincer(analysis: &AnalysisConfig, input: &LoadedInput, dir: &Path) -> StageResult {
    let frame = frame_of(input)?;
    let spec = formula_of(analysis)?;
    let gender_col = analysis.gender_column.as_deref().unwrap_or("female");
    let dom_col = analysis.dominance_column.as_deref();

    let gender_flags = frame
        .column(gender_col)
        .map_err(|e| e.to_string())?
        .as_numeric()
        .map_err(|e| e.to_string())?;
    let dom_flags = match dom_col {
        Some(col) => Some(
            frame.column(col).map_err(|e| e.to_string())?.as_numeric().map_err(|e| e.to_string())?,
        ),
        None => None,
    };

    let mut subsets: Vec<(String, Vec<bool>)> = Vec::new();
    for (sample, want_female) in [("men", 0.0), ("women", 1.0)] {
        let base: Vec<bool> = gender_flags.iter().map(|f| *f == Some(want_female)).collect();
        subsets.push((sample.to_string(), base.clone()));
        if let Some(dom) = &dom_flags {
            for (suffix, want_fd) in [("mdom", 0.0), ("fdom", 1.0)] {
                let mask: Vec<bool> =
                    base.iter().zip(dom).map(|(b, d)| *b && *d == Some(want_fd)).collect();
                subsets.push((format!("{sample}_{suffix}"), mask));
            }
        }
    }

    let mut writer = csv_writer();
    writer.write_record(["sample", "term", "estimate", "se", "n"]).map_err(|e| e.to_string())?;
    let mut json = serde_json::Map::new();
    for (sample, mask) in subsets {
        let sub = frame.filter(&mask);
        let sample_spec = if sample.ends_with("dom") {
            drop_terms_referencing(&spec, dom_col.unwrap())
        } else {
            spec.clone()
        };
        let (y, design) = build_design(&sub, &sample_spec).map_err(|e| format!("{sample}: {e}"))?;
        let fit =
            ols(&y, &design, VcovKind::RobustHc1).map_err(|e| format!("{sample}: {e}"))?;
        for j in 0..fit.k {
            writer
                .write_record([
                    sample.as_str(),
                    fit.column_names[j].as_str(),
                    &num(fit.beta[j]),
                    &num(fit.se[j]),
                    &fit.n.to_string(),
                ])
                .map_err(|e| e.to_string())?;
        }
        json.insert(sample, fit.to_json(false));
    }
    finish_csv(writer, dir, "mincer.csv")?;
    save_json(dir, "mincer.json", &serde_json::Value::Object(json))
}

// ---------------------------------------------------------------------- kbo

fn run_kbo(
    analysis: &AnalysisConfig,
    input: &LoadedInput,
    dir: &Path,
    stamp: Option<&str>,
) -> StageResult {
    let frame = frame_of(input)?;
    let spec = formula_of(analysis)?;
    let period = analysis.period.as_deref().unwrap_or("period");
    let group = analysis.group.as_deref().unwrap_or("female");

    // strata: the whole sample, or each side of a dominance flag
    let strata: Vec<(String, Frame)> = match analysis.within.as_deref() {
        None => vec![("all".to_string(), frame.clone())],
        Some(col) => {
            let flags = frame
                .column(col)
                .map_err(|e| e.to_string())?
                .as_numeric()
                .map_err(|e| e.to_string())?;
            let fd_mask: Vec<bool> = flags.iter().map(|f| *f == Some(1.0)).collect();
            let md_mask: Vec<bool> = flags.iter().map(|f| *f == Some(0.0)).collect();
            vec![
                ("fd".to_string(), frame.filter(&fd_mask)),
                ("md".to_string(), frame.filter(&md_mask)),
            ]
        }
    };

    let mut writer = csv_writer();
    writer
        .write_record(["stratum", "period", "component", "covariate", "estimate", "se"])
        .map_err(|e| e.to_string())?;
    let mut json = serde_json::Map::new();
    let mut series: Vec<Series> = Vec::new();

    for (stratum, sub_frame) in &strata {
        // group a = men (the numerator of the gap)
        let by_period =
            kbo_by_period(sub_frame, period, group, false, &spec).map_err(|e| e.to_string())?;
        let mut stratum_json = serde_json::Map::new();
        let mut component_points: Vec<Vec<(f64, f64)>> = vec![Vec::new(); 4];
        for (t, (period_label, result)) in by_period.results.iter().enumerate() {
            writer
                .write_record([
                    stratum.as_str(),
                    period_label.as_str(),
                    "overall",
                    "(total)",
                    &num(result.overall_gap),
                    "",
                ])
                .map_err(|e| e.to_string())?;
            for (component, total, se, pick) in [
                ("endowment", result.endowment, result.se_endowment, 0usize),
                ("coefficient", result.coefficient, result.se_coefficient, 1),
                ("interaction", result.interaction, result.se_interaction, 2),
            ] {
                writer
                    .write_record([
                        stratum.as_str(),
                        period_label.as_str(),
                        component,
                        "(total)",
                        &num(total),
                        &num(se),
                    ])
                    .map_err(|e| e.to_string())?;
                component_points[pick].push((t as f64, total));
                for cell in &result.per_covariate {
                    let (value, cell_se) = match component {
                        "endowment" => (cell.endowment, cell.se_endowment),
                        "coefficient" => (cell.coefficient, cell.se_coefficient),
                        _ => (cell.interaction, cell.se_interaction),
                    };
                    writer
                        .write_record([
                            stratum.as_str(),
                            period_label.as_str(),
                            component,
                            cell.covariate.as_str(),
                            &num(value),
                            &num(cell_se),
                        ])
                        .map_err(|e| e.to_string())?;
                }
            }
            component_points[3].push((t as f64, result.overall_gap));
            stratum_json.insert(period_label.clone(), result.to_json());
        }
        for (pick, label) in
            [(0usize, "endowment"), (1, "coefficient"), (2, "interaction"), (3, "overall")]
        {
            series.push(Series {
                label: format!("{stratum} {label}"),
                points: component_points[pick].clone(),
            });
        }
        if !by_period.skipped.is_empty() {
            stratum_json.insert(
                "skipped".to_string(),
                serde_json::json!(by_period
                    .skipped
                    .iter()
                    .map(|(p, why)| serde_json::json!({ "period": p, "reason": why }))
                    .collect::<Vec<_>>()),
            );
        }
        json.insert(stratum.clone(), serde_json::Value::Object(stratum_json));
    }

    finish_csv(writer, dir, "kbo.csv")?;
    save_json(dir, "kbo.json", &serde_json::Value::Object(json))?;
    let plot = svg::line_chart(
        "Wage-gap decomposition over time",
        "periods since start",
        "log-wage gap contribution",
        &series,
    );
    save_svg(dir, "kbo.svg", plot, stamp)
}

// ------------------------------------------------------------ counterfactual

fn subgroup_tagged(id: SubgroupId) -> String {
    match (id.gender, id.dominance) {
        (Gender::M, Dominance::Male) => "ml_mdom".to_string(),
        (Gender::M, Dominance::Female) => "ml_fdom".to_string(),
        (Gender::F, Dominance::Male) => "fml_mdom".to_string(),
        (Gender::F, Dominance::Female) => "fml_fdom".to_string(),
    }
}

fn run_counterfactual(
    config: &super::PipelineConfig,
    analysis: &AnalysisConfig,
    input: &LoadedInput,
    dir: &Path,
    stamp: Option<&str>,
) -> StageResult {
    let frame = frame_of(input)?;
    let gender_col = analysis.gender_column.as_deref().unwrap_or("female");
    let dom_col = analysis.dominance_column.as_deref().unwrap_or("fd_sector");
    // the formula comes from the referenced mincer stage; the validator
    // guarantees the reference resolves
    let mincer_name = analysis.mincer.as_deref().ok_or("missing `mincer` reference")?;
    let mincer_cfg = config
        .analyses
        .iter()
        .find(|a| a.kind == "mincer" && a.stage_name() == mincer_name)
        .ok_or_else(|| format!("mincer stage {mincer_name:?} not found"))?;
    let spec = formula_of(mincer_cfg)?;
    let spec = drop_terms_referencing(&drop_terms_referencing(&spec, gender_col), dom_col);

    let gender_flags = frame
        .column(gender_col)
        .map_err(|e| e.to_string())?
        .as_numeric()
        .map_err(|e| e.to_string())?;
    let dom_flags = frame
        .column(dom_col)
        .map_err(|e| e.to_string())?
        .as_numeric()
        .map_err(|e| e.to_string())?;

    let mut subgroups = Vec::with_capacity(4);
    for (gender, want_female) in [(Gender::M, 0.0), (Gender::F, 1.0)] {
        for (dominance, want_fd) in [(Dominance::Male, 0.0), (Dominance::Female, 1.0)] {
            let mask: Vec<bool> = gender_flags
                .iter()
                .zip(&dom_flags)
                .map(|(g, d)| *g == Some(want_female) && *d == Some(want_fd))
                .collect();
            let sub = frame.filter(&mask);
            let id = SubgroupId { gender, dominance };
            let (y, design) =
                build_design(&sub, &spec).map_err(|e| format!("{}: {e}", subgroup_tagged(id)))?;
            let fit = ols(&y, &design, VcovKind::RobustHc1)
                .map_err(|e| format!("{}: {e}", subgroup_tagged(id)))?;
            subgroups.push(SubgroupFit { id, fit, design, y: Array1::from(y.to_vec()) });
        }
    }

    let decomps = decompose_wages(&subgroups, REFERENCE).map_err(|e| e.to_string())?;

    // tidy values table
    let mut writer = csv_writer();
    writer.write_record(["subgroup", "kind", "value"]).map_err(|e| e.to_string())?;
    for d in &decomps {
        let tag = subgroup_tagged(d.id);
        for (kind, values) in [
            ("predicted", &d.predicted),
            ("residual", &d.residual),
            ("cf_predicted", &d.cf_predicted),
            ("cf_residual", &d.cf_residual),
        ] {
            for v in values {
                writer.write_record([tag.as_str(), kind, &num(*v)]).map_err(|e| e.to_string())?;
            }
        }
    }
    finish_csv(writer, dir, "counterfactual_values.csv")?;

    // Kolmogorov-Smirnov tests across the published four comparisons
    let find = |id: SubgroupId| decomps.iter().find(|d| d.id == id).unwrap();
    let ml_md = find(SubgroupId { gender: Gender::M, dominance: Dominance::Male });
    let ml_fd = find(SubgroupId { gender: Gender::M, dominance: Dominance::Female });
    let fml_md = find(SubgroupId { gender: Gender::F, dominance: Dominance::Male });
    let fml_fd = find(SubgroupId { gender: Gender::F, dominance: Dominance::Female });

    let comparisons: [(&str, &crate::counterfactual::WageDecomp, &crate::counterfactual::WageDecomp);
        4] = [
        ("men_vs_women_fdom", ml_fd, fml_fd),
        ("men_vs_women_mdom", ml_md, fml_md),
        ("fdom_vs_mdom_women", fml_fd, fml_md),
        ("fdom_vs_mdom_men", ml_fd, ml_md),
    ];
    let mut ks_json = serde_json::Map::new();
    for kind in ["predicted", "residual", "cf_predicted", "cf_residual"] {
        let mut row = serde_json::Map::new();
        for (label, a, b) in &comparisons {
            let pick = |d: &crate::counterfactual::WageDecomp| -> Vec<f64> {
                match kind {
                    "predicted" => d.predicted.clone(),
                    "residual" => d.residual.clone(),
                    "cf_predicted" => d.cf_predicted.clone(),
                    _ => d.cf_residual.clone(),
                }
            };
            let result = ks_test(&pick(a), &pick(b)).map_err(|e| e.to_string())?;
            row.insert(label.to_string(), serde_json::to_value(&result).unwrap());
        }
        ks_json.insert(kind.to_string(), serde_json::Value::Object(row));
    }
    save_json(dir, "ks_tests.json", &serde_json::Value::Object(ks_json))?;

    // CDF overlays, thinned for plotting
    for (kind, file) in [
        ("predicted", "cdf_predicted.svg"),
        ("residual", "cdf_residual.svg"),
        ("cf_predicted", "cdf_cf_predicted.svg"),
        ("cf_residual", "cdf_cf_residual.svg"),
    ] {
        let mut curves = Vec::new();
        for d in &decomps {
            let values = match kind {
                "predicted" => &d.predicted,
                "residual" => &d.residual,
                "cf_predicted" => &d.cf_predicted,
                _ => &d.cf_residual,
            };
            let cdf = ecdf(values).map_err(|e| e.to_string())?;
            let step = (cdf.values.len() / 400).max(1);
            let thin_values: Vec<f64> = cdf.values.iter().step_by(step).copied().collect();
            let thin_probs: Vec<f64> = cdf.probs.iter().step_by(step).copied().collect();
            curves.push((subgroup_tagged(d.id), thin_values, thin_probs));
        }
        let plot = svg::cdf_overlay(
            &format!("Empirical CDF of {kind} log wages"),
            "log wage",
            &curves,
        );
        save_svg(dir, file, plot, stamp)?;
    }
    Ok(())
}
