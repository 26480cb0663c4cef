//! Synthetic labour-force microdata with a fully specified data-generating
//! process and closed-form ground truth, used to validate every estimator
//! in the crate against planted values.
//!
//! Two sector-assignment modes:
//!
//! * `Quota` allocates workers to sectors and genders by largest-remainder
//!   quotas, so realized sector sizes and within-sector gender mixes equal
//!   the configured shares up to integer rounding. Employment status uses
//!   systematic (low-variance) Bernoulli sampling within sector x gender
//!   cells: each worker keeps the marginal participation probability of
//!   the probit while realized cell counts stay within one unit of their
//!   expectation, which keeps the calibrated population moments tight.
//! * `Latent` draws covariates first and selects workers into
//!   female-dominated sectors through a probit latent index, giving the
//!   matching estimators genuine confounding to remove; the true
//!   propensity of every worker is recorded in the ground truth.
//!
//! Log wages are linear in the covariates with coefficients per
//! gender x dominance cell plus a constant penalty for female-dominated
//! sectors, with Gaussian noise (optionally heteroskedastic in part-time
//! status). Weekly hours are a part-time/full-time mixture; in quota mode
//! the hour noise is drawn antithetically within sector x gender x
//! part-time strata so stratum noise sums to (almost) zero and the
//! configured hour means are reproduced to high precision.

mod calibrate;

pub use calibrate::{calibrate_to_paper, CALIBRATION_SEED, HIGH_SEGREGATION_SECTORS};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::norm_cdf;
use crate::frame::{Column, Frame};
use crate::rng::StreamRng;
use crate::segregation::{Dominance, Gender, SectorPanel};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
}

/// Fixed covariate distributions of the generator (documented constants):
/// age ~ Uniform(16, 64), years of education ~ Normal(13.16, 2.97),
/// potential experience ~ Uniform(0, 48).
pub const AGE_LO: f64 = 16.0;
pub const AGE_HI: f64 = 64.0;
pub const YRSEDUC_MEAN: f64 = 13.16;
pub const YRSEDUC_SD: f64 = 2.97;
pub const EXPERIENCE_LO: f64 = 0.0;
pub const EXPERIENCE_HI: f64 = 48.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SectorSpec {
    pub id: String,
    /// Relative employment weight (normalized internally).
    pub employment_share: f64,
    /// Share of the sector's workers who are women.
    pub female_share: f64,
    /// Part-time rate among employed women / men in this sector.
    pub pt_female: f64,
    pub pt_male: f64,
    pub low_segregation: bool,
}

/// Log-wage equation for one gender x dominance cell. Slope order matches
/// [`CovariateMeans`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct WageCoefs {
    pub intercept: f64,
    pub age: f64,
    pub age_sq: f64,
    pub yrseduc: f64,
    pub yrseduc_sq: f64,
    pub experience: f64,
    pub experience_sq: f64,
    pub incouple: f64,
    pub kids: f64,
    pub training: f64,
    pub public: f64,
    pub parttime: f64,
}

impl WageCoefs {
    pub fn slopes(&self) -> [f64; 11] {
        [
            self.age,
            self.age_sq,
            self.yrseduc,
            self.yrseduc_sq,
            self.experience,
            self.experience_sq,
            self.incouple,
            self.kids,
            self.training,
            self.public,
            self.parttime,
        ]
    }
}

/// Population means of the wage-equation covariates, same order as
/// [`WageCoefs::slopes`].
#[derive(Debug, Clone, Copy)]
pub struct CovariateMeans(pub [f64; 11]);

impl CovariateMeans {
    pub fn dot(&self, slopes: &[f64; 11]) -> f64 {
        self.0.iter().zip(slopes).map(|(m, b)| m * b).sum()
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GenderRates {
    pub female: f64,
    pub male: f64,
}

impl GenderRates {
    pub fn get(&self, gender: Gender) -> f64 {
        match gender {
            Gender::F => self.female,
            Gender::M => self.male,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovariateConfig {
    pub incouple: GenderRates,
    pub kids: GenderRates,
    pub training: GenderRates,
    pub public_sector: GenderRates,
    pub benefit: GenderRates,
    /// Native / EEA / non-EEA.
    pub nationality: [f64; 3],
    /// Low / Intermediate / High.
    pub education: [f64; 3],
    pub occupation_female: [f64; 9],
    pub occupation_male: [f64; 9],
}

/// Participation probit: latent = intercept_g + benefit*b + kids_g*k + u.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParticipationCoefs {
    pub intercept_female: f64,
    pub intercept_male: f64,
    pub benefit: f64,
    pub kids_female: f64,
    pub kids_male: f64,
}

impl ParticipationCoefs {
    pub fn prob(&self, gender: Gender, kids: bool, benefit: bool) -> f64 {
        let intercept = match gender {
            Gender::F => self.intercept_female,
            Gender::M => self.intercept_male,
        };
        let kids_coef = match gender {
            Gender::F => self.kids_female,
            Gender::M => self.kids_male,
        };
        norm_cdf(
            intercept
                + if benefit { self.benefit } else { 0.0 }
                + if kids { kids_coef } else { 0.0 },
        )
    }

    /// E[kids | employed, gender] by exact enumeration over the four
    /// (kids, benefit) cells.
    pub fn kids_given_employed(&self, gender: Gender, config: &CovariateConfig) -> f64 {
        let pk = config.kids.get(gender);
        let pb = config.benefit.get(gender);
        let mut num = 0.0;
        let mut den = 0.0;
        for (kids, p_kids) in [(false, 1.0 - pk), (true, pk)] {
            for (benefit, p_benefit) in [(false, 1.0 - pb), (true, pb)] {
                let w = p_kids * p_benefit * self.prob(gender, kids, benefit);
                den += w;
                if kids {
                    num += w;
                }
            }
        }
        num / den
    }

    /// Overall participation rate for one gender.
    pub fn rate(&self, gender: Gender, config: &CovariateConfig) -> f64 {
        let pk = config.kids.get(gender);
        let pb = config.benefit.get(gender);
        let mut total = 0.0;
        for (kids, p_kids) in [(false, 1.0 - pk), (true, pk)] {
            for (benefit, p_benefit) in [(false, 1.0 - pb), (true, pb)] {
                total += p_kids * p_benefit * self.prob(gender, kids, benefit);
            }
        }
        total
    }
}

/// Probit selection into female-dominated sectors (latent mode). The
/// continuous covariates enter standardized: age_std = (age-40)/13.856,
/// yrseduc_std = (yrseduc-13.16)/2.97.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionCoefs {
    pub intercept: f64,
    pub female: f64,
    pub age_std: f64,
    pub yrseduc_std: f64,
    pub incouple: f64,
    pub kids: f64,
}

impl SelectionCoefs {
    pub fn index(&self, female: bool, age: f64, yrseduc: f64, incouple: bool, kids: bool) -> f64 {
        let age_sd = (AGE_HI - AGE_LO) / 12f64.sqrt();
        self.intercept
            + if female { self.female } else { 0.0 }
            + self.age_std * (age - 0.5 * (AGE_LO + AGE_HI)) / age_sd
            + self.yrseduc_std * (yrseduc - YRSEDUC_MEAN) / YRSEDUC_SD
            + if incouple { self.incouple } else { 0.0 }
            + if kids { self.kids } else { 0.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Assignment {
    /// Exact largest-remainder quotas for sector sizes and gender mixes.
    Quota,
    /// Probit selection into the female-dominated group, then a sector
    /// within the group drawn proportional to employment shares.
    Latent { coefs: SelectionCoefs, female_share: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WageCells {
    pub male_mdom: WageCoefs,
    pub male_fdom: WageCoefs,
    pub female_mdom: WageCoefs,
    pub female_fdom: WageCoefs,
}

impl WageCells {
    pub fn cell(&self, gender: Gender, dom: Dominance) -> &WageCoefs {
        match (gender, dom) {
            (Gender::M, Dominance::Male) => &self.male_mdom,
            (Gender::M, Dominance::Female) => &self.male_fdom,
            (Gender::F, Dominance::Male) => &self.female_mdom,
            (Gender::F, Dominance::Female) => &self.female_fdom,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HoursConfig {
    pub parttime_mean: f64,
    pub fulltime_mean_female: f64,
    pub fulltime_mean_male: f64,
    /// Gaussian noise, truncated at 3 sd.
    pub noise_sd: f64,
    /// Pair the noise antithetically within strata (quota mode only).
    pub antithetic: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteRates {
    pub female_fdom: f64,
    pub female_mdom: f64,
    pub male_fdom: f64,
    pub male_mdom: f64,
}

impl RemoteRates {
    fn get(&self, gender: Gender, dom: Dominance) -> f64 {
        match (gender, dom) {
            (Gender::F, Dominance::Female) => self.female_fdom,
            (Gender::F, Dominance::Male) => self.female_mdom,
            (Gender::M, Dominance::Female) => self.male_fdom,
            (Gender::M, Dominance::Male) => self.male_mdom,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DgpSpec {
    pub seed: u64,
    pub n_workers: usize,
    pub n_periods: usize,
    pub first_period: u32,
    pub sectors: Vec<SectorSpec>,
    pub assignment: Assignment,
    pub covariates: CovariateConfig,
    pub participation: Option<ParticipationCoefs>,
    pub wage: WageCells,
    /// Constant log-wage shift for working in a female-dominated sector.
    pub fd_penalty: f64,
    pub wage_noise_sd: f64,
    /// Noise sd multiplier (1 + factor) for part-timers; 0 = homoskedastic.
    pub parttime_noise_factor: f64,
    pub hours: HoursConfig,
    pub remote: RemoteRates,
}

impl DgpSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_workers == 0 || self.n_periods == 0 {
            return Err(SynthError::InvalidSpec("n_workers and n_periods must be positive".into()));
        }
        if self.sectors.is_empty() {
            return Err(SynthError::InvalidSpec("at least one sector is required".into()));
        }
        for s in &self.sectors {
            if s.employment_share <= 0.0 {
                return Err(SynthError::InvalidSpec(format!(
                    "sector {}: employment_share must be > 0",
                    s.id
                )));
            }
            for (label, p) in
                [("female_share", s.female_share), ("pt_female", s.pt_female), ("pt_male", s.pt_male)]
            {
                if !(0.0..=1.0).contains(&p) {
                    return Err(SynthError::InvalidSpec(format!(
                        "sector {}: {label} must lie in [0,1]",
                        s.id
                    )));
                }
            }
        }
        if self.wage_noise_sd <= 0.0 || self.hours.noise_sd <= 0.0 {
            return Err(SynthError::InvalidSpec("noise scales must be positive".into()));
        }
        if self.parttime_noise_factor < 0.0 {
            return Err(SynthError::InvalidSpec("parttime_noise_factor must be >= 0".into()));
        }
        let probs = [
            self.covariates.incouple.female,
            self.covariates.incouple.male,
            self.covariates.kids.female,
            self.covariates.kids.male,
            self.covariates.training.female,
            self.covariates.training.male,
            self.covariates.public_sector.female,
            self.covariates.public_sector.male,
            self.covariates.benefit.female,
            self.covariates.benefit.male,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(SynthError::InvalidSpec("covariate rates must lie in [0,1]".into()));
        }
        if let Assignment::Latent { female_share, .. } = &self.assignment {
            if !(0.0..=1.0).contains(female_share) {
                return Err(SynthError::InvalidSpec("female_share must lie in [0,1]".into()));
            }
        }
        Ok(())
    }

    /// Normalized sector employment shares.
    pub fn sector_shares(&self) -> Vec<f64> {
        let total: f64 = self.sectors.iter().map(|s| s.employment_share).sum();
        self.sectors.iter().map(|s| s.employment_share / total).collect()
    }

    /// Economy-wide female employment share implied by the mix parameters.
    pub fn female_employment_share(&self) -> f64 {
        let shares = self.sector_shares();
        shares.iter().zip(&self.sectors).map(|(s, sec)| s * sec.female_share).sum()
    }

    /// True dominance label per sector: female iff the sector's female
    /// share strictly exceeds the economy-wide female share (equivalent to
    /// the within-gender share rule).
    pub fn dominance_labels(&self) -> Vec<Dominance> {
        let threshold = self.female_employment_share();
        self.sectors
            .iter()
            .map(|s| if s.female_share > threshold { Dominance::Female } else { Dominance::Male })
            .collect()
    }

    /// Population SSI per dominance group implied by the mix parameters.
    pub fn population_ssi(&self) -> (f64, f64) {
        let shares = self.sector_shares();
        let labels = self.dominance_labels();
        let f_total = self.female_employment_share();
        let m_total = 1.0 - f_total;
        let mut fd = 0.0;
        let mut md = 0.0;
        for ((share, sector), label) in shares.iter().zip(&self.sectors).zip(&labels) {
            let w_share = share * sector.female_share / f_total;
            let m_share = share * (1.0 - sector.female_share) / m_total;
            let contribution = 0.5 * (w_share - m_share).abs();
            match label {
                Dominance::Female => fd += contribution,
                Dominance::Male => md += contribution,
            }
        }
        (fd, md)
    }

    /// Mean part-time rate for a gender within one dominance group,
    /// weighted by the gender's employment distribution over the group.
    pub fn parttime_rate(&self, gender: Gender, dom: Dominance) -> Option<f64> {
        let shares = self.sector_shares();
        let labels = self.dominance_labels();
        let mut num = 0.0;
        let mut den = 0.0;
        for ((share, sector), label) in shares.iter().zip(&self.sectors).zip(&labels) {
            if *label != dom {
                continue;
            }
            let gshare = match gender {
                Gender::F => sector.female_share,
                Gender::M => 1.0 - sector.female_share,
            };
            let rate = match gender {
                Gender::F => sector.pt_female,
                Gender::M => sector.pt_male,
            };
            num += share * gshare * rate;
            den += share * gshare;
        }
        if den == 0.0 {
            None
        } else {
            Some(num / den)
        }
    }

    /// Share of a gender's employment in female-dominated sectors.
    pub fn fd_share(&self, gender: Gender) -> f64 {
        let shares = self.sector_shares();
        let labels = self.dominance_labels();
        let mut num = 0.0;
        let mut den = 0.0;
        for ((share, sector), label) in shares.iter().zip(&self.sectors).zip(&labels) {
            let gshare = match gender {
                Gender::F => sector.female_share,
                Gender::M => 1.0 - sector.female_share,
            };
            den += share * gshare;
            if *label == Dominance::Female {
                num += share * gshare;
            }
        }
        num / den
    }

    /// Population means of the wage-equation covariates for one cell.
    /// Kids are conditioned on employment through the participation model.
    pub fn covariate_means(&self, gender: Gender, dom: Dominance) -> Option<CovariateMeans> {
        let pt = self.parttime_rate(gender, dom)?;
        let kids = match &self.participation {
            Some(p) => p.kids_given_employed(gender, &self.covariates),
            None => self.covariates.kids.get(gender),
        };
        let age_mean = 0.5 * (AGE_LO + AGE_HI);
        let age_sq = (AGE_LO * AGE_LO + AGE_LO * AGE_HI + AGE_HI * AGE_HI) / 3.0;
        let exp_mean = 0.5 * (EXPERIENCE_LO + EXPERIENCE_HI);
        let exp_sq = (EXPERIENCE_LO * EXPERIENCE_LO
            + EXPERIENCE_LO * EXPERIENCE_HI
            + EXPERIENCE_HI * EXPERIENCE_HI)
            / 3.0;
        Some(CovariateMeans([
            age_mean,
            age_sq,
            YRSEDUC_MEAN,
            YRSEDUC_MEAN * YRSEDUC_MEAN + YRSEDUC_SD * YRSEDUC_SD,
            exp_mean,
            exp_sq,
            self.covariates.incouple.get(gender),
            kids,
            self.covariates.training.get(gender),
            self.covariates.public_sector.get(gender),
            pt,
        ]))
    }

    /// Population mean log wage for one cell (employed workers).
    pub fn cell_mean_lnwage(&self, gender: Gender, dom: Dominance) -> Option<f64> {
        let means = self.covariate_means(gender, dom)?;
        let coefs = self.wage.cell(gender, dom);
        let penalty = if dom == Dominance::Female { self.fd_penalty } else { 0.0 };
        Some(coefs.intercept + penalty + means.dot(&coefs.slopes()))
    }
}

/// Closed-form three-fold decomposition truth for male (group a) vs female
/// (group b) within one dominance group.
#[derive(Debug, Clone, Serialize)]
pub struct KboTruth {
    pub overall: f64,
    pub endowment: f64,
    pub coefficient: f64,
    pub interaction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroundTruth {
    /// True dominance label per sector id.
    pub dominance: Vec<(String, Dominance)>,
    /// Economy-wide female employment share (the dominance threshold).
    pub female_employment_share: f64,
    /// Population SSI per dominance group (constant over periods).
    pub ssi_fd: f64,
    pub ssi_md: f64,
    /// Constant treatment effect of working in a female-dominated sector,
    /// present when the wage cells make the effect homogeneous.
    pub att: Option<f64>,
    /// Population mean log wage per cell, (gender, dominance, mean).
    pub cell_mean_lnwage: Vec<(Gender, Dominance, f64)>,
    /// Closed-form KBO components per dominance group (quota mode).
    pub kbo: Vec<(Dominance, KboTruth)>,
    /// True P(female-dominated sector | x) per worker (latent mode).
    pub propensity: Option<Vec<f64>>,
}

impl GroundTruth {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("ground truth serializes")
    }
}

/// Largest-remainder apportionment of `n` units over `weights`.
pub fn largest_remainder(n: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| n as f64 * w / total).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut remainders: Vec<(usize, f64)> =
        quotas.iter().enumerate().map(|(i, q)| (i, q - q.floor())).collect();
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for &(i, _) in remainders.iter().take(n - assigned) {
        counts[i] += 1;
    }
    counts
}

struct Worker {
    sector: usize,
    period: usize,
    female: bool,
    age: f64,
    yrseduc: f64,
    experience: f64,
    nationality: usize,
    education: usize,
    occupation: usize,
    incouple: bool,
    kids: bool,
    training: bool,
    public: bool,
    benefit: bool,
    employed: bool,
    parttime: Option<bool>,
    hours: Option<f64>,
    ln_wage: Option<f64>,
    remote: Option<bool>,
    propensity: Option<f64>,
}

/// Draw the covariates that do not depend on the assignment mode. Each
/// worker reads from its own counter substream, so draws are independent
/// of evaluation order.
fn draw_base_covariates(rng: &mut StreamRng, gender: Gender, config: &CovariateConfig) -> Worker {
    let age = rng.next_range(AGE_LO, AGE_HI);
    let yrseduc = YRSEDUC_MEAN + YRSEDUC_SD * rng.next_gaussian();
    let experience = rng.next_range(EXPERIENCE_LO, EXPERIENCE_HI);
    let nationality = rng.next_categorical(&config.nationality);
    let education = rng.next_categorical(&config.education);
    let occupation = rng.next_categorical(match gender {
        Gender::F => &config.occupation_female,
        Gender::M => &config.occupation_male,
    });
    let incouple = rng.next_bool(config.incouple.get(gender));
    let kids = rng.next_bool(config.kids.get(gender));
    let training = rng.next_bool(config.training.get(gender));
    let public = rng.next_bool(config.public_sector.get(gender));
    let benefit = rng.next_bool(config.benefit.get(gender));
    Worker {
        sector: 0,
        period: 0,
        female: gender == Gender::F,
        age,
        yrseduc,
        experience,
        nationality,
        education,
        occupation,
        incouple,
        kids,
        training,
        public,
        benefit,
        employed: true,
        parttime: None,
        hours: None,
        ln_wage: None,
        remote: None,
        propensity: None,
    }
}

fn truncated_gaussian(rng: &mut StreamRng, sd: f64) -> f64 {
    // rejection at 3 sd; acceptance probability ~0.997
    for _ in 0..64 {
        let z = rng.next_gaussian();
        if z.abs() <= 3.0 {
            return z * sd;
        }
    }
    0.0
}

pub const NATIONALITY_LEVELS: [&str; 3] = ["Native", "EEA", "NonEEA"];
pub const EDUCATION_LEVELS: [&str; 3] = ["Low", "Intermediate", "High"];

/// Generate the microdata frame, the employment panel and the ground truth.
/// Deterministic given the spec (including its seed).
pub fn generate(spec: &DgpSpec) -> Result<(Frame, SectorPanel, GroundTruth), SynthError> {
    spec.validate()?;
    let n = spec.n_workers;
    let root = StreamRng::new(spec.seed);
    let labels = spec.dominance_labels();
    let shares = spec.sector_shares();

    let mut workers: Vec<Worker> = Vec::with_capacity(n);

    match &spec.assignment {
        Assignment::Quota => {
            let sector_counts = largest_remainder(n, &shares);
            // contiguous sector blocks; periods stripe as id % n_periods
            let mut starts = vec![0usize; spec.sectors.len() + 1];
            for j in 0..spec.sectors.len() {
                starts[j + 1] = starts[j] + sector_counts[j];
            }
            for (j, &count) in sector_counts.iter().enumerate() {
                let female_count =
                    (count as f64 * spec.sectors[j].female_share).round() as usize;
                for pos in 0..count {
                    let id = starts[j] + pos;
                    let gender = if pos < female_count { Gender::F } else { Gender::M };
                    let mut rng = root.substream_index(id as u64);
                    let mut worker = draw_base_covariates(&mut rng, gender, &spec.covariates);
                    worker.sector = j;
                    worker.period = id % spec.n_periods;
                    workers.push(worker);
                }
            }
        }
        Assignment::Latent { coefs, female_share } => {
            for id in 0..n {
                let mut rng = root.substream_index(id as u64);
                let is_female = rng.next_bool(*female_share);
                let gender = if is_female { Gender::F } else { Gender::M };
                let mut worker = draw_base_covariates(&mut rng, gender, &spec.covariates);
                let index = coefs.index(
                    worker.female,
                    worker.age,
                    worker.yrseduc,
                    worker.incouple,
                    worker.kids,
                );
                let treated = index + rng.next_gaussian() > 0.0;
                worker.propensity = Some(norm_cdf(index));
                // sector within the dominance group, proportional to size
                let group = if treated { Dominance::Female } else { Dominance::Male };
                let group_weights: Vec<f64> = shares
                    .iter()
                    .zip(&labels)
                    .map(|(s, l)| if *l == group { *s } else { 0.0 })
                    .collect();
                if group_weights.iter().sum::<f64>() <= 0.0 {
                    return Err(SynthError::InvalidSpec(format!(
                        "latent assignment needs at least one {group:?}-dominated sector"
                    )));
                }
                worker.sector = rng.next_categorical(&group_weights);
                worker.period = id % spec.n_periods;
                workers.push(worker);
            }
        }
    }

    // employment
    match (&spec.participation, &spec.assignment) {
        (None, _) => {}
        (Some(part), Assignment::Quota) => {
            // systematic Bernoulli per sector x gender cell: marginal
            // probabilities are preserved while realized counts stay within
            // one unit of the cell's expected count
            for j in 0..spec.sectors.len() {
                for gender in [Gender::F, Gender::M] {
                    let ids: Vec<usize> = (0..n)
                        .filter(|&i| {
                            workers[i].sector == j
                                && (workers[i].female == (gender == Gender::F))
                        })
                        .collect();
                    if ids.is_empty() {
                        continue;
                    }
                    let mut cell_rng = root
                        .substream(&format!("employment/{}/{}", spec.sectors[j].id, gender_tag(gender)));
                    let offset = cell_rng.next_f64();
                    let mut cum = offset;
                    let mut prev_floor = offset.floor();
                    for &i in &ids {
                        let p = part.prob(gender, workers[i].kids, workers[i].benefit);
                        cum += p;
                        let this_floor = cum.floor();
                        workers[i].employed = this_floor > prev_floor;
                        prev_floor = this_floor;
                    }
                }
            }
        }
        (Some(part), Assignment::Latent { .. }) => {
            for (i, worker) in workers.iter_mut().enumerate() {
                let gender = if worker.female { Gender::F } else { Gender::M };
                let p = part.prob(gender, worker.kids, worker.benefit);
                let mut rng = root.substream("employment-latent").substream_index(i as u64);
                worker.employed = rng.next_f64() < p;
            }
        }
    }

    // part-time status among the employed
    match &spec.assignment {
        Assignment::Quota => {
            for j in 0..spec.sectors.len() {
                for gender in [Gender::F, Gender::M] {
                    let mut ids: Vec<usize> = (0..n)
                        .filter(|&i| {
                            workers[i].sector == j
                                && workers[i].employed
                                && (workers[i].female == (gender == Gender::F))
                        })
                        .collect();
                    if ids.is_empty() {
                        continue;
                    }
                    let rate = match gender {
                        Gender::F => spec.sectors[j].pt_female,
                        Gender::M => spec.sectors[j].pt_male,
                    };
                    let mut cell_rng = root
                        .substream(&format!("parttime/{}/{}", spec.sectors[j].id, gender_tag(gender)));
                    cell_rng.shuffle(&mut ids);
                    let pt_count = (ids.len() as f64 * rate).round() as usize;
                    for (slot, &i) in ids.iter().enumerate() {
                        workers[i].parttime = Some(slot < pt_count);
                    }
                }
            }
        }
        Assignment::Latent { .. } => {
            for i in 0..n {
                if !workers[i].employed {
                    continue;
                }
                let j = workers[i].sector;
                let rate = if workers[i].female {
                    spec.sectors[j].pt_female
                } else {
                    spec.sectors[j].pt_male
                };
                let mut rng = root.substream("parttime-latent").substream_index(i as u64);
                workers[i].parttime = Some(rng.next_f64() < rate);
            }
        }
    }

    // weekly hours
    let hour_base = |female: bool, pt: bool| -> f64 {
        if pt {
            spec.hours.parttime_mean
        } else if female {
            spec.hours.fulltime_mean_female
        } else {
            spec.hours.fulltime_mean_male
        }
    };
    if spec.hours.antithetic && matches!(spec.assignment, Assignment::Quota) {
        for j in 0..spec.sectors.len() {
            for gender in [Gender::F, Gender::M] {
                for pt in [false, true] {
                    let ids: Vec<usize> = (0..n)
                        .filter(|&i| {
                            workers[i].sector == j
                                && workers[i].employed
                                && workers[i].parttime == Some(pt)
                                && (workers[i].female == (gender == Gender::F))
                        })
                        .collect();
                    if ids.is_empty() {
                        continue;
                    }
                    let mut stratum_rng = root.substream(&format!(
                        "hours/{}/{}/{}",
                        spec.sectors[j].id,
                        gender_tag(gender),
                        pt
                    ));
                    let base = hour_base(gender == Gender::F, pt);
                    let mut idx = 0;
                    while idx + 1 < ids.len() {
                        let eps = truncated_gaussian(&mut stratum_rng, spec.hours.noise_sd);
                        workers[ids[idx]].hours = Some(base + eps);
                        workers[ids[idx + 1]].hours = Some(base - eps);
                        idx += 2;
                    }
                    if idx < ids.len() {
                        let eps = truncated_gaussian(&mut stratum_rng, spec.hours.noise_sd);
                        workers[ids[idx]].hours = Some(base + eps);
                    }
                }
            }
        }
    } else {
        for i in 0..n {
            if let Some(pt) = workers[i].parttime {
                let mut rng = root.substream("hours-plain").substream_index(i as u64);
                let eps = truncated_gaussian(&mut rng, spec.hours.noise_sd);
                workers[i].hours = Some(hour_base(workers[i].female, pt) + eps);
            }
        }
    }

    // log wages and remote work for the employed
    let wage_root = root.substream("wages");
    let remote_root = root.substream("remote");
    for (i, worker) in workers.iter_mut().enumerate() {
        if !worker.employed {
            continue;
        }
        let gender = if worker.female { Gender::F } else { Gender::M };
        let dom = labels[worker.sector];
        let coefs = spec.wage.cell(gender, dom);
        let pt = worker.parttime.unwrap_or(false);
        let x = [
            worker.age,
            worker.age * worker.age,
            worker.yrseduc,
            worker.yrseduc * worker.yrseduc,
            worker.experience,
            worker.experience * worker.experience,
            bool_f(worker.incouple),
            bool_f(worker.kids),
            bool_f(worker.training),
            bool_f(worker.public),
            bool_f(pt),
        ];
        let mut mean = coefs.intercept
            + if dom == Dominance::Female { spec.fd_penalty } else { 0.0 };
        for (value, slope) in x.iter().zip(coefs.slopes().iter()) {
            mean += value * slope;
        }
        let sd = spec.wage_noise_sd * (1.0 + spec.parttime_noise_factor * bool_f(pt));
        let mut wrng = wage_root.substream_index(i as u64);
        worker.ln_wage = Some(mean + sd * wrng.next_gaussian());
        let mut rrng = remote_root.substream_index(i as u64);
        worker.remote = Some(rrng.next_bool(spec.remote.get(gender, dom)));
    }

    // panel of employed counts
    let times: Vec<String> =
        (0..spec.n_periods).map(|t| format!("{}", spec.first_period + t as u32)).collect();
    let sector_ids: Vec<String> = spec.sectors.iter().map(|s| s.id.clone()).collect();
    let mut panel = SectorPanel::new(times.clone(), sector_ids.clone());
    for worker in &workers {
        if worker.employed {
            let gender = if worker.female { Gender::F } else { Gender::M };
            panel.add_count(worker.period, worker.sector, gender, 1.0);
        }
    }

    let frame = build_frame(spec, &workers, &times, &labels)?;

    // ground truth
    let (ssi_fd, ssi_md) = spec.population_ssi();
    let att = constant_effect(spec);
    let mut cell_means = Vec::new();
    let mut kbo = Vec::new();
    for dom in [Dominance::Male, Dominance::Female] {
        for gender in [Gender::M, Gender::F] {
            if let Some(mean) = spec.cell_mean_lnwage(gender, dom) {
                cell_means.push((gender, dom, mean));
            }
        }
        if matches!(spec.assignment, Assignment::Quota) {
            if let Some(truth) = kbo_truth(spec, dom) {
                kbo.push((dom, truth));
            }
        }
    }
    let propensity = if matches!(spec.assignment, Assignment::Latent { .. }) {
        Some(workers.iter().map(|w| w.propensity.unwrap_or(0.0)).collect())
    } else {
        None
    };
    let truth = GroundTruth {
        dominance: sector_ids.iter().cloned().zip(labels.iter().copied()).collect(),
        female_employment_share: spec.female_employment_share(),
        ssi_fd,
        ssi_md,
        att,
        cell_mean_lnwage: cell_means,
        kbo,
        propensity,
    };

    Ok((frame, panel, truth))
}

fn gender_tag(gender: Gender) -> &'static str {
    match gender {
        Gender::F => "F",
        Gender::M => "M",
    }
}

fn bool_f(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// The fd effect is a constant iff the wage cells coincide across
/// dominance within each gender.
fn constant_effect(spec: &DgpSpec) -> Option<f64> {
    if spec.wage.male_mdom == spec.wage.male_fdom && spec.wage.female_mdom == spec.wage.female_fdom
    {
        Some(spec.fd_penalty)
    } else {
        None
    }
}

/// Closed-form three-fold components for male vs female within one
/// dominance group, the male side being the numerator and female
/// coefficients weighting the endowment term.
fn kbo_truth(spec: &DgpSpec, dom: Dominance) -> Option<KboTruth> {
    let mean_m = spec.covariate_means(Gender::M, dom)?;
    let mean_f = spec.covariate_means(Gender::F, dom)?;
    let coefs_m = spec.wage.cell(Gender::M, dom);
    let coefs_f = spec.wage.cell(Gender::F, dom);
    let slopes_m = coefs_m.slopes();
    let slopes_f = coefs_f.slopes();

    let mut endowment = 0.0;
    let mut coefficient = coefs_m.intercept - coefs_f.intercept;
    let mut interaction = 0.0;
    for j in 0..11 {
        let d_mean = mean_m.0[j] - mean_f.0[j];
        let d_beta = slopes_m[j] - slopes_f[j];
        endowment += d_mean * slopes_f[j];
        coefficient += mean_f.0[j] * d_beta;
        interaction += d_mean * d_beta;
    }
    Some(KboTruth {
        overall: endowment + coefficient + interaction,
        endowment,
        coefficient,
        interaction,
    })
}

fn build_frame(
    spec: &DgpSpec,
    workers: &[Worker],
    times: &[String],
    labels: &[Dominance],
) -> Result<Frame, SynthError> {
    let mut frame = Frame::new();
    let push = |frame: &mut Frame, col: Column| {
        frame.push_column(col).map_err(|e| SynthError::InvalidSpec(e.to_string()))
    };

    let period_labels: Vec<Option<&str>> =
        workers.iter().map(|w| Some(times[w.period].as_str())).collect();
    push(&mut frame, Column::categorical_from_labels("period", &period_labels))?;

    let sector_labels: Vec<Option<&str>> =
        workers.iter().map(|w| Some(spec.sectors[w.sector].id.as_str())).collect();
    push(&mut frame, Column::categorical_from_labels("sector", &sector_labels))?;

    push(&mut frame, Column::boolean("female", workers.iter().map(|w| Some(w.female)).collect()))?;
    push(&mut frame, Column::numeric("age", workers.iter().map(|w| Some(w.age)).collect()))?;

    let natl: Vec<Option<&str>> =
        workers.iter().map(|w| Some(NATIONALITY_LEVELS[w.nationality])).collect();
    push(&mut frame, Column::categorical_from_labels("nationality", &natl))?;

    let educ: Vec<Option<&str>> =
        workers.iter().map(|w| Some(EDUCATION_LEVELS[w.education])).collect();
    push(&mut frame, Column::categorical_from_labels("education", &educ))?;

    push(&mut frame, Column::numeric("yrseduc", workers.iter().map(|w| Some(w.yrseduc)).collect()))?;
    push(
        &mut frame,
        Column::numeric("experience", workers.iter().map(|w| Some(w.experience)).collect()),
    )?;
    push(
        &mut frame,
        Column::boolean("incouple", workers.iter().map(|w| Some(w.incouple)).collect()),
    )?;
    push(&mut frame, Column::boolean("kids", workers.iter().map(|w| Some(w.kids)).collect()))?;
    push(
        &mut frame,
        Column::boolean("training", workers.iter().map(|w| Some(w.training)).collect()),
    )?;
    push(&mut frame, Column::boolean("public", workers.iter().map(|w| Some(w.public)).collect()))?;
    push(&mut frame, Column::boolean("benefit", workers.iter().map(|w| Some(w.benefit)).collect()))?;

    let occ_names: Vec<String> = (1..=9).map(|k| format!("soc{k}")).collect();
    let occ: Vec<Option<&str>> =
        workers.iter().map(|w| Some(occ_names[w.occupation].as_str())).collect();
    push(&mut frame, Column::categorical_from_labels("occupation", &occ))?;

    push(&mut frame, Column::boolean("in_lf", workers.iter().map(|w| Some(w.employed)).collect()))?;
    push(
        &mut frame,
        Column::boolean("employed", workers.iter().map(|w| Some(w.employed)).collect()),
    )?;
    push(&mut frame, Column::boolean("parttime", workers.iter().map(|w| w.parttime).collect()))?;
    push(&mut frame, Column::numeric("hours", workers.iter().map(|w| w.hours).collect()))?;
    push(
        &mut frame,
        Column::numeric("ln_hours", workers.iter().map(|w| w.hours.map(f64::ln)).collect()),
    )?;
    push(&mut frame, Column::numeric("ln_wage", workers.iter().map(|w| w.ln_wage).collect()))?;
    push(&mut frame, Column::boolean("remote", workers.iter().map(|w| w.remote).collect()))?;
    push(
        &mut frame,
        Column::boolean(
            "fd_sector",
            workers.iter().map(|w| Some(labels[w.sector] == Dominance::Female)).collect(),
        ),
    )?;
    push(
        &mut frame,
        Column::boolean(
            "low_seg",
            workers.iter().map(|w| Some(spec.sectors[w.sector].low_segregation)).collect(),
        ),
    )?;
    Ok(frame)
}
