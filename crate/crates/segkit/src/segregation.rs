//! Gender sectoral dominance, the Sectoral Segregation Index, and the
//! high/low segregation ranking.
//!
//! A sector is female dominated at time t when women's share of total
//! female employment in that sector exceeds men's share of total male
//! employment, and male dominated otherwise (ties are male: the rule is
//! "female if strictly greater"). The SSI for a dominance group is half
//! the sum of absolute share differences over the group's sectors; summed
//! over both groups it is the classical dissimilarity index.

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SegregationError {
    #[error("total {gender:?} employment is zero at time {time:?}")]
    ZeroGenderTotal { time: String, gender: Gender },
    #[error("dominance group {0:?} has fewer than 2 sectors")]
    GroupTooSmall(Dominance),
    #[error("panel i/o failure: {0}")]
    Io(String),
    #[error("malformed panel record: {0}")]
    BadRecord(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Gender {
    F,
    M,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Dominance {
    Female,
    Male,
}

impl Dominance {
    pub fn tag(self) -> &'static str {
        match self {
            Dominance::Female => "fd",
            Dominance::Male => "md",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    PerTime,
    Pooled,
}

/// Employment counts by time, sector and gender.
#[derive(Debug, Clone)]
pub struct SectorPanel {
    pub times: Vec<String>,
    pub sectors: Vec<String>,
    /// counts[t][j] = (female, male); non-negative.
    counts: Vec<Vec<(f64, f64)>>,
}

impl SectorPanel {
    pub fn new(times: Vec<String>, sectors: Vec<String>) -> SectorPanel {
        let counts = vec![vec![(0.0, 0.0); sectors.len()]; times.len()];
        SectorPanel { times, sectors, counts }
    }

    pub fn set_count(&mut self, t: usize, j: usize, gender: Gender, value: f64) {
        assert!(value >= 0.0, "employment counts must be non-negative");
        match gender {
            Gender::F => self.counts[t][j].0 = value,
            Gender::M => self.counts[t][j].1 = value,
        }
    }

    pub fn add_count(&mut self, t: usize, j: usize, gender: Gender, value: f64) {
        match gender {
            Gender::F => self.counts[t][j].0 += value,
            Gender::M => self.counts[t][j].1 += value,
        }
    }

    pub fn count(&self, t: usize, j: usize, gender: Gender) -> f64 {
        match gender {
            Gender::F => self.counts[t][j].0,
            Gender::M => self.counts[t][j].1,
        }
    }

    /// Total employment of one gender at time t.
    pub fn gender_total(&self, t: usize, gender: Gender) -> f64 {
        (0..self.sectors.len()).map(|j| self.count(t, j, gender)).sum()
    }

    /// Counts summed over all times: (female, male) per sector.
    pub fn pooled_counts(&self) -> Vec<(f64, f64)> {
        let mut out = vec![(0.0, 0.0); self.sectors.len()];
        for t in 0..self.times.len() {
            for j in 0..self.sectors.len() {
                out[j].0 += self.counts[t][j].0;
                out[j].1 += self.counts[t][j].1;
            }
        }
        out
    }

    /// Read a long-format CSV with columns time,sector,gender,count.
    /// Times and sectors are ordered by first appearance.
    pub fn read_long_csv(path: impl AsRef<Path>) -> Result<SectorPanel, SegregationError> {
        let mut reader = csv::Reader::from_path(path.as_ref())
            .map_err(|e| SegregationError::Io(e.to_string()))?;
        let headers = reader.headers().map_err(|e| SegregationError::Io(e.to_string()))?.clone();
        let pos = |name: &str| -> Result<usize, SegregationError> {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| SegregationError::BadRecord(format!("missing column {name:?}")))
        };
        let (ti, si, gi, ci) = (pos("time")?, pos("sector")?, pos("gender")?, pos("count")?);

        let mut times: Vec<String> = Vec::new();
        let mut sectors: Vec<String> = Vec::new();
        let mut cells: Vec<(usize, usize, Gender, f64)> = Vec::new();
        let mut time_idx: HashMap<String, usize> = HashMap::new();
        let mut sector_idx: HashMap<String, usize> = HashMap::new();
        for record in reader.records() {
            let record = record.map_err(|e| SegregationError::Io(e.to_string()))?;
            let time = record.get(ti).unwrap_or("").to_string();
            let sector = record.get(si).unwrap_or("").to_string();
            let gender = match record.get(gi).unwrap_or("") {
                "F" | "f" => Gender::F,
                "M" | "m" => Gender::M,
                other => {
                    return Err(SegregationError::BadRecord(format!("unknown gender {other:?}")))
                }
            };
            let count: f64 = record
                .get(ci)
                .unwrap_or("")
                .parse()
                .map_err(|_| SegregationError::BadRecord("unparseable count".into()))?;
            let t = *time_idx.entry(time.clone()).or_insert_with(|| {
                times.push(time);
                times.len() - 1
            });
            let j = *sector_idx.entry(sector.clone()).or_insert_with(|| {
                sectors.push(sector);
                sectors.len() - 1
            });
            cells.push((t, j, gender, count));
        }
        let mut panel = SectorPanel::new(times, sectors);
        for (t, j, g, c) in cells {
            panel.add_count(t, j, g, c);
        }
        Ok(panel)
    }

    /// Write the long-format CSV consumed by `read_long_csv`.
    pub fn write_long_csv(&self, path: impl AsRef<Path>) -> Result<(), SegregationError> {
        let mut writer =
            csv::Writer::from_path(path.as_ref()).map_err(|e| SegregationError::Io(e.to_string()))?;
        writer
            .write_record(["time", "sector", "gender", "count"])
            .map_err(|e| SegregationError::Io(e.to_string()))?;
        for (t, time) in self.times.iter().enumerate() {
            for (j, sector) in self.sectors.iter().enumerate() {
                for (gender, tag) in [(Gender::F, "F"), (Gender::M, "M")] {
                    writer
                        .write_record([
                            time.as_str(),
                            sector.as_str(),
                            tag,
                            &format!("{}", self.count(t, j, gender)),
                        ])
                        .map_err(|e| SegregationError::Io(e.to_string()))?;
                }
            }
        }
        writer.flush().map_err(|e| SegregationError::Io(e.to_string()))?;
        Ok(())
    }
}

/// Dominance labels per (time, sector) plus a pooled per-sector label.
#[derive(Debug, Clone)]
pub struct DominanceMap {
    pub pooling: Pooling,
    /// per_time[t][j]
    pub per_time: Vec<Vec<Dominance>>,
    /// pooled[j], over counts summed across times
    pub pooled: Vec<Dominance>,
    pub sectors: Vec<String>,
    pub times: Vec<String>,
}

impl DominanceMap {
    /// The label effective at time t under this map's pooling mode.
    pub fn label_at(&self, t: usize, j: usize) -> Dominance {
        match self.pooling {
            Pooling::PerTime => self.per_time[t][j],
            Pooling::Pooled => self.pooled[j],
        }
    }

    pub fn pooled_label(&self, sector: &str) -> Option<Dominance> {
        self.sectors.iter().position(|s| s == sector).map(|j| self.pooled[j])
    }
}

fn classify(w_share: f64, m_share: f64) -> Dominance {
    if w_share > m_share {
        Dominance::Female
    } else {
        Dominance::Male
    }
}

/// Label each sector female or male dominated: female iff the sector's
/// share of total female employment strictly exceeds its share of total
/// male employment.
pub fn classify_dominance(
    panel: &SectorPanel,
    pooling: Pooling,
) -> Result<DominanceMap, SegregationError> {
    let n_t = panel.times.len();
    let n_j = panel.sectors.len();

    let mut per_time = Vec::with_capacity(n_t);
    for t in 0..n_t {
        let w_total = panel.gender_total(t, Gender::F);
        let m_total = panel.gender_total(t, Gender::M);
        if w_total <= 0.0 {
            return Err(SegregationError::ZeroGenderTotal {
                time: panel.times[t].clone(),
                gender: Gender::F,
            });
        }
        if m_total <= 0.0 {
            return Err(SegregationError::ZeroGenderTotal {
                time: panel.times[t].clone(),
                gender: Gender::M,
            });
        }
        let labels = (0..n_j)
            .map(|j| {
                classify(panel.count(t, j, Gender::F) / w_total, panel.count(t, j, Gender::M) / m_total)
            })
            .collect();
        per_time.push(labels);
    }

    let pooled_counts = panel.pooled_counts();
    let w_total: f64 = pooled_counts.iter().map(|c| c.0).sum();
    let m_total: f64 = pooled_counts.iter().map(|c| c.1).sum();
    let pooled = pooled_counts.iter().map(|&(w, m)| classify(w / w_total, m / m_total)).collect();

    Ok(DominanceMap {
        pooling,
        per_time,
        pooled,
        sectors: panel.sectors.clone(),
        times: panel.times.clone(),
    })
}

/// SSI value for one dominance group at one time, with the per-sector
/// contributions `0.5 |W_jt/W_t - M_jt/M_t|`.
#[derive(Debug, Clone)]
pub struct SsiPoint {
    pub time: String,
    pub group: Dominance,
    pub value: f64,
    /// (sector, contribution) for sectors in this group at this time.
    pub contributions: Vec<(String, f64)>,
}

#[derive(Debug, Clone)]
pub struct SsiSeries {
    pub points: Vec<SsiPoint>,
}

impl SsiSeries {
    pub fn value(&self, time: &str, group: Dominance) -> Option<f64> {
        self.points.iter().find(|p| p.time == time && p.group == group).map(|p| p.value)
    }

    /// Tidy CSV: time,group,sector,contribution,group_value.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), SegregationError> {
        let mut writer =
            csv::Writer::from_path(path.as_ref()).map_err(|e| SegregationError::Io(e.to_string()))?;
        writer
            .write_record(["time", "group", "sector", "contribution", "group_value"])
            .map_err(|e| SegregationError::Io(e.to_string()))?;
        for p in &self.points {
            for (sector, contribution) in &p.contributions {
                writer
                    .write_record([
                        p.time.as_str(),
                        p.group.tag(),
                        sector.as_str(),
                        &format!("{contribution}"),
                        &format!("{}", p.value),
                    ])
                    .map_err(|e| SegregationError::Io(e.to_string()))?;
            }
        }
        writer.flush().map_err(|e| SegregationError::Io(e.to_string()))?;
        Ok(())
    }
}

/// Sectoral Segregation Index per time and dominance group:
/// `SSI^s_t = 1/2 sum_{j in J_s} |W_jt/W_t - M_jt/M_t|`.
pub fn ssi(panel: &SectorPanel, dominance: &DominanceMap) -> Result<SsiSeries, SegregationError> {
    let mut points = Vec::new();
    for t in 0..panel.times.len() {
        let w_total = panel.gender_total(t, Gender::F);
        let m_total = panel.gender_total(t, Gender::M);
        if w_total <= 0.0 || m_total <= 0.0 {
            return Err(SegregationError::ZeroGenderTotal {
                time: panel.times[t].clone(),
                gender: if w_total <= 0.0 { Gender::F } else { Gender::M },
            });
        }
        for group in [Dominance::Female, Dominance::Male] {
            let mut contributions = Vec::new();
            let mut value = 0.0;
            for j in 0..panel.sectors.len() {
                if dominance.label_at(t, j) != group {
                    continue;
                }
                let w_share = panel.count(t, j, Gender::F) / w_total;
                let m_share = panel.count(t, j, Gender::M) / m_total;
                let contribution = 0.5 * (w_share - m_share).abs();
                value += contribution;
                contributions.push((panel.sectors[j].clone(), contribution));
            }
            points.push(SsiPoint { time: panel.times[t].clone(), group, value, contributions });
        }
    }
    Ok(SsiSeries { points })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Degree {
    High,
    Low,
}

/// How to split each dominance group into high/low segregated sectors.
#[derive(Debug, Clone)]
pub enum SplitRule {
    /// Above the within-group median mean-contribution is High; ties Low.
    Median,
    /// Sectors named here are High, all others Low.
    Explicit(Vec<String>),
}

#[derive(Debug, Clone)]
pub struct SectorDegree {
    pub sector: String,
    pub group: Dominance,
    pub mean_contribution: f64,
    pub degree: Degree,
}

#[derive(Debug, Clone)]
pub struct SegregationDegree {
    pub sectors: Vec<SectorDegree>,
}

impl SegregationDegree {
    pub fn degree_of(&self, sector: &str) -> Option<Degree> {
        self.sectors.iter().find(|s| s.sector == sector).map(|s| s.degree)
    }
}

/// Rank sectors inside each dominance group by their mean SSI contribution
/// over time and split into High/Low. Grouping uses the pooled dominance
/// labels so each sector lands in exactly one group.
pub fn rank_segregation(
    series: &SsiSeries,
    dominance: &DominanceMap,
    split: &SplitRule,
) -> Result<SegregationDegree, SegregationError> {
    // mean contribution per sector over all times it appears
    let mut sums: HashMap<String, (f64, usize)> = HashMap::new();
    for point in &series.points {
        for (sector, contribution) in &point.contributions {
            let entry = sums.entry(sector.clone()).or_insert((0.0, 0));
            entry.0 += contribution;
            entry.1 += 1;
        }
    }

    let mut by_group: HashMap<Dominance, Vec<(String, f64)>> = HashMap::new();
    for (j, sector) in dominance.sectors.iter().enumerate() {
        let group = dominance.pooled[j];
        let mean = sums.get(sector).map(|(s, c)| s / *c as f64).unwrap_or(0.0);
        by_group.entry(group).or_default().push((sector.clone(), mean));
    }

    let mut out = Vec::new();
    for (group, mut members) in by_group {
        if members.len() < 2 {
            return Err(SegregationError::GroupTooSmall(group));
        }
        members.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        match split {
            SplitRule::Median => {
                let values: Vec<f64> = members.iter().map(|m| m.1).collect();
                let mid = values.len() / 2;
                let median = if values.len() % 2 == 1 {
                    values[mid]
                } else {
                    0.5 * (values[mid - 1] + values[mid])
                };
                for (sector, mean) in members {
                    let degree = if mean > median { Degree::High } else { Degree::Low };
                    out.push(SectorDegree { sector, group, mean_contribution: mean, degree });
                }
            }
            SplitRule::Explicit(high) => {
                for (sector, mean) in members {
                    let degree =
                        if high.iter().any(|h| h == &sector) { Degree::High } else { Degree::Low };
                    out.push(SectorDegree { sector, group, mean_contribution: mean, degree });
                }
            }
        }
    }
    out.sort_by(|a, b| a.sector.cmp(&b.sector));
    Ok(SegregationDegree { sectors: out })
}

/// Duncan dissimilarity index over all sectors at time t:
/// `1/2 sum_j |W_jt/W_t - M_jt/M_t|`. SSI^fd + SSI^md equals this.
pub fn dissimilarity_index(panel: &SectorPanel, t: usize) -> f64 {
    let w_total = panel.gender_total(t, Gender::F);
    let m_total = panel.gender_total(t, Gender::M);
    (0..panel.sectors.len())
        .map(|j| {
            0.5 * (panel.count(t, j, Gender::F) / w_total - panel.count(t, j, Gender::M) / m_total)
                .abs()
        })
        .sum()
}
