//! Between/within decomposition of the change in a gender's employment
//! share relative to a base period.
//!
//! For sector j at time t let `e_jt = E_jt / E_t` be the sector's share of
//! total employment and `e^g_jt = E^g_jt / E_jt` the gender's share within
//! the sector (0 when the sector is empty). With midpoint weights
//! `a^g_jt = (e^g_jt0 + e^g_jt)/2` and `a_jt = (e_jt0 + e_jt)/2`, the
//! change over a dominance group S decomposes as
//!
//!   between = sum_{j in S} a^g_jt (e_jt - e_jt0)
//!   within  = sum_{j in S} a_jt (e^g_jt - e^g_jt0)
//!
//! and between + within telescopes to
//! `sum_{j in S} (e^g_jt e_jt - e^g_jt0 e_jt0)`, the change in the group's
//! gender employment as a share of economy-wide employment. That quantity
//! is reported as `overall`; the residual overall - between - within is
//! reported rather than forced to zero.

use std::path::Path;

use thiserror::Error;

use crate::segregation::{Dominance, DominanceMap, Gender, SectorPanel};

#[derive(Debug, Error)]
pub enum ShiftShareError {
    #[error("base time {0:?} is not in the panel")]
    UnknownBaseTime(String),
    #[error("i/o failure: {0}")]
    Io(String),
}

/// One decomposition row: a comparison time and dominance group.
#[derive(Debug, Clone)]
pub struct ShiftShareRow {
    pub time: String,
    pub group: Dominance,
    pub overall: f64,
    pub between: f64,
    pub within: f64,
    /// overall - between - within; zero up to rounding.
    pub residual: f64,
}

/// Per-sector audit detail: the weights and share changes behind one row.
#[derive(Debug, Clone)]
pub struct SectorTerm {
    pub time: String,
    pub sector: String,
    pub group: Dominance,
    /// Midpoint gender-share weight a^g_jt.
    pub alpha_gender: f64,
    /// Midpoint sector-size weight a_jt.
    pub alpha_sector: f64,
    /// Change in the sector's share of total employment.
    pub delta_sector_share: f64,
    /// Change in the gender's share within the sector.
    pub delta_gender_share: f64,
}

#[derive(Debug, Clone)]
pub struct ShiftShareResult {
    pub gender: Gender,
    pub base_time: String,
    pub rows: Vec<ShiftShareRow>,
    pub terms: Vec<SectorTerm>,
}

impl ShiftShareResult {
    pub fn row(&self, time: &str, group: Dominance) -> Option<&ShiftShareRow> {
        self.rows.iter().find(|r| r.time == time && r.group == group)
    }

    /// Tidy CSV: time,group,overall,between,within,residual.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), ShiftShareError> {
        let mut writer =
            csv::Writer::from_path(path.as_ref()).map_err(|e| ShiftShareError::Io(e.to_string()))?;
        writer
            .write_record(["time", "group", "overall", "between", "within", "residual"])
            .map_err(|e| ShiftShareError::Io(e.to_string()))?;
        for r in &self.rows {
            writer
                .write_record([
                    r.time.as_str(),
                    r.group.tag(),
                    &format!("{}", r.overall),
                    &format!("{}", r.between),
                    &format!("{}", r.within),
                    &format!("{}", r.residual),
                ])
                .map_err(|e| ShiftShareError::Io(e.to_string()))?;
        }
        writer.flush().map_err(|e| ShiftShareError::Io(e.to_string()))?;
        Ok(())
    }
}

/// Sector share of total employment and gender share within the sector at
/// one time; empty sectors contribute (0, 0).
fn shares(panel: &SectorPanel, t: usize, gender: Gender) -> Vec<(f64, f64)> {
    let n_j = panel.sectors.len();
    let total: f64 =
        (0..n_j).map(|j| panel.count(t, j, Gender::F) + panel.count(t, j, Gender::M)).sum();
    (0..n_j)
        .map(|j| {
            let sector_total = panel.count(t, j, Gender::F) + panel.count(t, j, Gender::M);
            if sector_total == 0.0 {
                (0.0, 0.0)
            } else {
                (sector_total / total, panel.count(t, j, gender) / sector_total)
            }
        })
        .collect()
}

/// Decompose the change in `gender`'s employment share against `base_time`
/// for every panel time, aggregated within each dominance group of the
/// supplied map (its pooled labels keep the sector sets constant over time).
pub fn shift_share(
    panel: &SectorPanel,
    gender: Gender,
    base_time: &str,
    dominance: &DominanceMap,
) -> Result<ShiftShareResult, ShiftShareError> {
    let base_t = panel
        .times
        .iter()
        .position(|t| t == base_time)
        .ok_or_else(|| ShiftShareError::UnknownBaseTime(base_time.to_string()))?;

    let base_shares = shares(panel, base_t, gender);
    let mut rows = Vec::new();
    let mut terms = Vec::new();

    for t in 0..panel.times.len() {
        let current = shares(panel, t, gender);
        for group in [Dominance::Female, Dominance::Male] {
            let mut between = 0.0;
            let mut within = 0.0;
            let mut overall = 0.0;
            for j in 0..panel.sectors.len() {
                if dominance.pooled[j] != group {
                    continue;
                }
                let (e_j0, g_j0) = base_shares[j];
                let (e_jt, g_jt) = current[j];
                let alpha_gender = 0.5 * (g_j0 + g_jt);
                let alpha_sector = 0.5 * (e_j0 + e_jt);
                let delta_sector_share = e_jt - e_j0;
                let delta_gender_share = g_jt - g_j0;
                between += alpha_gender * delta_sector_share;
                within += alpha_sector * delta_gender_share;
                overall += g_jt * e_jt - g_j0 * e_j0;
                terms.push(SectorTerm {
                    time: panel.times[t].clone(),
                    sector: panel.sectors[j].clone(),
                    group,
                    alpha_gender,
                    alpha_sector,
                    delta_sector_share,
                    delta_gender_share,
                });
            }
            let residual = overall - between - within;
            rows.push(ShiftShareRow {
                time: panel.times[t].clone(),
                group,
                overall,
                between,
                within,
                residual,
            });
        }
    }

    Ok(ShiftShareResult { gender, base_time: base_time.to_string(), rows, terms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segregation::{classify_dominance, Pooling};
    use approx::assert_abs_diff_eq;

    fn panel_two_sectors() -> SectorPanel {
        // base (F,M) = (40,60), (10,90); current (50,50), (20,80)
        let mut panel =
            SectorPanel::new(vec!["t0".into(), "t1".into()], vec!["a".into(), "b".into()]);
        panel.set_count(0, 0, Gender::F, 40.0);
        panel.set_count(0, 0, Gender::M, 60.0);
        panel.set_count(0, 1, Gender::F, 10.0);
        panel.set_count(0, 1, Gender::M, 90.0);
        panel.set_count(1, 0, Gender::F, 50.0);
        panel.set_count(1, 0, Gender::M, 50.0);
        panel.set_count(1, 1, Gender::F, 20.0);
        panel.set_count(1, 1, Gender::M, 80.0);
        panel
    }

    #[test]
    fn base_period_components_vanish() {
        let panel = panel_two_sectors();
        let map = classify_dominance(&panel, Pooling::Pooled).unwrap();
        let result = shift_share(&panel, Gender::F, "t0", &map).unwrap();
        for group in [Dominance::Female, Dominance::Male] {
            let row = result.row("t0", group).unwrap();
            assert_eq!(row.overall, 0.0);
            assert_eq!(row.between, 0.0);
            assert_eq!(row.within, 0.0);
        }
    }

    #[test]
    fn unknown_base_time_errors() {
        let panel = panel_two_sectors();
        let map = classify_dominance(&panel, Pooling::Pooled).unwrap();
        assert!(matches!(
            shift_share(&panel, Gender::F, "t9", &map),
            Err(ShiftShareError::UnknownBaseTime(_))
        ));
    }

    #[test]
    fn single_sector_economy_is_pure_within() {
        let mut panel = SectorPanel::new(vec!["t0".into(), "t1".into()], vec!["only".into()]);
        panel.set_count(0, 0, Gender::F, 30.0);
        panel.set_count(0, 0, Gender::M, 70.0);
        panel.set_count(1, 0, Gender::F, 45.0);
        panel.set_count(1, 0, Gender::M, 55.0);
        let map = classify_dominance(&panel, Pooling::Pooled).unwrap();
        let result = shift_share(&panel, Gender::F, "t0", &map).unwrap();
        let row = result.row("t1", Dominance::Male).unwrap();
        assert_abs_diff_eq!(row.between, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(row.within, 0.45 - 0.30, epsilon = 1e-15);
        assert_abs_diff_eq!(row.overall, 0.45 - 0.30, epsilon = 1e-15);
    }

    #[test]
    fn two_sector_example_matches_term_by_term_oracle() {
        // spreadsheet-style oracle: every quantity evaluated longhand.
        // Pooled gender shares put sector a (W 90/120 vs M 110/280) in the
        // female-dominated group and sector b in the male-dominated group.
        let panel = panel_two_sectors();
        let map = classify_dominance(&panel, Pooling::Pooled).unwrap();
        assert_eq!(map.pooled, vec![Dominance::Female, Dominance::Male]);
        let result = shift_share(&panel, Gender::F, "t0", &map).unwrap();

        let e_a0: f64 = 100.0 / 200.0;
        let e_b0: f64 = 100.0 / 200.0;
        let e_a1: f64 = 100.0 / 200.0;
        let e_b1: f64 = 100.0 / 200.0;
        let g_a0: f64 = 40.0 / 100.0;
        let g_b0: f64 = 10.0 / 100.0;
        let g_a1: f64 = 50.0 / 100.0;
        let g_b1: f64 = 20.0 / 100.0;

        let fd = result.row("t1", Dominance::Female).unwrap();
        assert_abs_diff_eq!(fd.between, 0.5 * (g_a0 + g_a1) * (e_a1 - e_a0), epsilon = 1e-14);
        assert_abs_diff_eq!(fd.within, 0.5 * (e_a0 + e_a1) * (g_a1 - g_a0), epsilon = 1e-14);
        assert_abs_diff_eq!(fd.overall, g_a1 * e_a1 - g_a0 * e_a0, epsilon = 1e-14);
        assert!(fd.residual.abs() < 1e-14);

        let md = result.row("t1", Dominance::Male).unwrap();
        assert_abs_diff_eq!(md.between, 0.5 * (g_b0 + g_b1) * (e_b1 - e_b0), epsilon = 1e-14);
        assert_abs_diff_eq!(md.within, 0.5 * (e_b0 + e_b1) * (g_b1 - g_b0), epsilon = 1e-14);
        assert_abs_diff_eq!(md.overall, g_b1 * e_b1 - g_b0 * e_b0, epsilon = 1e-14);
        assert!(md.residual.abs() < 1e-14);
    }

    #[test]
    fn male_variant_mirrors_female_within_sector_changes() {
        let panel = panel_two_sectors();
        let map = classify_dominance(&panel, Pooling::Pooled).unwrap();
        let female = shift_share(&panel, Gender::F, "t0", &map).unwrap();
        let male = shift_share(&panel, Gender::M, "t0", &map).unwrap();
        // per sector, the within-sector gender share changes negate
        for (tf, tm) in female.terms.iter().zip(&male.terms) {
            assert_eq!(tf.sector, tm.sector);
            assert_abs_diff_eq!(tf.delta_gender_share, -tm.delta_gender_share, epsilon = 1e-15);
        }
    }

    #[test]
    fn empty_sector_contributes_nothing() {
        let mut panel =
            SectorPanel::new(vec!["t0".into(), "t1".into()], vec!["a".into(), "ghost".into()]);
        panel.set_count(0, 0, Gender::F, 40.0);
        panel.set_count(0, 0, Gender::M, 60.0);
        panel.set_count(1, 0, Gender::F, 55.0);
        panel.set_count(1, 0, Gender::M, 45.0);
        let map = classify_dominance(&panel, Pooling::Pooled).unwrap();
        let with_ghost = shift_share(&panel, Gender::F, "t0", &map).unwrap();
        let ghost_terms: Vec<_> =
            with_ghost.terms.iter().filter(|t| t.sector == "ghost").collect();
        for term in ghost_terms {
            assert_eq!(term.alpha_gender * term.delta_sector_share, 0.0);
            assert_eq!(term.alpha_sector * term.delta_gender_share, 0.0);
        }
    }

    #[test]
    fn additivity_on_random_panels() {
        let mut rng = crate::rng::StreamRng::new(2024);
        for _ in 0..50 {
            let n_t = 3;
            let n_j = 5;
            let times = (0..n_t).map(|t| format!("t{t}")).collect();
            let sectors = (0..n_j).map(|j| format!("s{j}")).collect();
            let mut panel = SectorPanel::new(times, sectors);
            for t in 0..n_t {
                for j in 0..n_j {
                    panel.set_count(t, j, Gender::F, (rng.next_f64() * 500.0).round() + 1.0);
                    panel.set_count(t, j, Gender::M, (rng.next_f64() * 500.0).round() + 1.0);
                }
            }
            let map = classify_dominance(&panel, Pooling::Pooled).unwrap();
            for gender in [Gender::F, Gender::M] {
                let result = shift_share(&panel, gender, "t0", &map).unwrap();
                for row in &result.rows {
                    assert!(
                        row.residual.abs() < 1e-12,
                        "residual {} at {} {:?}",
                        row.residual,
                        row.time,
                        row.group
                    );
                }
            }
        }
    }
}
