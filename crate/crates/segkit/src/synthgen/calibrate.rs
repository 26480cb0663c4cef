//! The shipped default generator spec, calibrated so the synthetic
//! population reproduces the published sector gender mixes, the headline
//! summary means (female mean log wage 2.41, female part-time share 0.43,
//! male weekly hours 40.33) and the female/male-dominated sector partition.
//!
//! Sector female shares are the published 2005-2020 sector shares of women;
//! employment weights reconcile the male- and female-sample sector
//! distributions. All intercepts are solved in closed form from the target
//! means, so the calibration carries no fitted constants.

use super::{
    Assignment, CovariateConfig, DgpSpec, GenderRates, HoursConfig, ParticipationCoefs,
    RemoteRates, SectorSpec, WageCells, WageCoefs,
};
use crate::segregation::{Dominance, Gender};

pub const CALIBRATION_SEED: u64 = 20052020;

/// Calibration targets.
const FEMALE_MEAN_LNWAGE: f64 = 2.41;
const MALE_MEAN_LNWAGE: f64 = 2.59;
const FEMALE_PT_SHARE: f64 = 0.43;
const MALE_PT_SHARE: f64 = 0.12;
const MALE_WEEKLY_HOURS: f64 = 40.33;
const FEMALE_WEEKLY_HOURS: f64 = 30.89;
const PT_MEAN_HOURS: f64 = 19.0;
const FD_WAGE_PENALTY: f64 = -0.094;
// One participation level for both genders: uneven thinning would pull
// the employed within-sector female shares off their published anchors.
const PARTICIPATION_RATE: f64 = 0.74;

/// (id, employment weight, female share, low-segregation flag).
/// Female shares are the published 2005-2020 column; weights reconcile the
/// two published per-gender sector distributions.
const SECTOR_TABLE: [(&str, f64, f64, bool); 19] = [
    ("A", 0.0076, 0.299, true),
    ("B", 0.0040, 0.180, true),
    ("C", 0.1062, 0.259, false),
    ("D", 0.0044, 0.276, true),
    ("E", 0.0075, 0.203, true),
    ("F", 0.0539, 0.168, false),
    ("G", 0.1871, 0.517, true),
    ("H", 0.0431, 0.245, false),
    ("I", 0.1089, 0.575, false),
    ("J", 0.0326, 0.304, false),
    ("K", 0.0353, 0.509, true),
    ("L", 0.0120, 0.578, true),
    ("M", 0.0701, 0.480, false),
    ("N", 0.0510, 0.446, true),
    ("P", 0.1035, 0.753, false),
    ("Q", 0.1317, 0.804, false),
    ("R", 0.0318, 0.503, true),
    ("S", 0.0221, 0.624, false),
    ("T", 0.0026, 0.748, true),
];

/// Published high/low segregation partition, usable as the explicit split
/// override in the ranking step.
pub const HIGH_SEGREGATION_SECTORS: [&str; 9] = ["I", "P", "Q", "S", "C", "F", "H", "J", "M"];

/// Slope vectors styled on the published wage regressions, by gender.
fn male_slopes() -> WageCoefs {
    WageCoefs {
        intercept: 0.0,
        age: 0.007,
        age_sq: -0.00005,
        yrseduc: 0.158,
        yrseduc_sq: -0.005,
        experience: 0.015,
        experience_sq: -0.0002,
        incouple: 0.064,
        kids: 0.041,
        training: 0.068,
        public: 0.032,
        parttime: -0.097,
    }
}

fn female_slopes() -> WageCoefs {
    WageCoefs {
        intercept: 0.0,
        age: 0.005,
        age_sq: -0.00004,
        yrseduc: 0.117,
        yrseduc_sq: -0.003,
        experience: 0.013,
        experience_sq: -0.0002,
        incouple: 0.015,
        kids: -0.029,
        training: 0.049,
        public: 0.059,
        parttime: -0.038,
    }
}

/// Solve the participation intercept so the overall rate for a gender hits
/// its target, by bisection (the rate is monotone in the intercept).
fn solve_participation_intercept(
    gender: Gender,
    target: f64,
    template: &ParticipationCoefs,
    covariates: &CovariateConfig,
) -> f64 {
    let mut lo = -4.0;
    let mut hi = 4.0;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let mut probe = template.clone();
        match gender {
            Gender::F => probe.intercept_female = mid,
            Gender::M => probe.intercept_male = mid,
        }
        if probe.rate(gender, covariates) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// The shipped default spec. Population moments match the published
/// anchors; everything stochastic flows from `CALIBRATION_SEED`.
pub fn calibrate_to_paper() -> DgpSpec {
    let covariates = CovariateConfig {
        incouple: GenderRates { female: 0.51, male: 0.50 },
        kids: GenderRates { female: 0.37, male: 0.28 },
        training: GenderRates { female: 0.33, male: 0.32 },
        public_sector: GenderRates { female: 0.33, male: 0.13 },
        benefit: GenderRates { female: 0.46, male: 0.20 },
        nationality: [0.86, 0.05, 0.09],
        education: [0.25, 0.40, 0.35],
        occupation_female: [
            0.0454, 0.1210, 0.1037, 0.1661, 0.0154, 0.1637, 0.1712, 0.0182, 0.1953,
        ],
        occupation_male: [
            0.0785, 0.1329, 0.1116, 0.0569, 0.1314, 0.0391, 0.1007, 0.1223, 0.2265,
        ],
    };

    // sector list with part-time rates chosen so the gender-level part-time
    // shares aggregate to their targets: female rates differ by dominance
    // group, male rates are flat
    let mut draft = DgpSpec {
        seed: CALIBRATION_SEED,
        n_workers: 200_000,
        n_periods: 16,
        first_period: 2005,
        sectors: SECTOR_TABLE
            .iter()
            .map(|&(id, weight, female_share, low)| SectorSpec {
                id: id.to_string(),
                employment_share: weight,
                female_share,
                pt_female: 0.0,
                pt_male: MALE_PT_SHARE,
                low_segregation: low,
            })
            .collect(),
        assignment: Assignment::Quota,
        covariates,
        participation: None,
        wage: WageCells {
            male_mdom: male_slopes(),
            male_fdom: male_slopes(),
            female_mdom: female_slopes(),
            female_fdom: female_slopes(),
        },
        fd_penalty: FD_WAGE_PENALTY,
        wage_noise_sd: 0.45,
        parttime_noise_factor: 0.0,
        hours: HoursConfig {
            parttime_mean: PT_MEAN_HOURS,
            fulltime_mean_female: 0.0,
            fulltime_mean_male: 0.0,
            noise_sd: 5.0,
            antithetic: true,
        },
        remote: RemoteRates {
            female_fdom: 0.025,
            female_mdom: 0.055,
            male_fdom: 0.035,
            male_mdom: 0.062,
        },
    };

    // female part-time: 0.50 in female-dominated sectors, and the
    // male-dominated rate solved so the overall female share is on target
    let pt_f_fd = 0.50;
    let ffd = draft.fd_share(Gender::F);
    let pt_f_md = (FEMALE_PT_SHARE - ffd * pt_f_fd) / (1.0 - ffd);
    let labels = draft.dominance_labels();
    for (sector, label) in draft.sectors.iter_mut().zip(&labels) {
        sector.pt_female = match label {
            Dominance::Female => pt_f_fd,
            Dominance::Male => pt_f_md,
        };
    }

    // full-time hour means back out from the overall targets
    draft.hours.fulltime_mean_male =
        (MALE_WEEKLY_HOURS - MALE_PT_SHARE * PT_MEAN_HOURS) / (1.0 - MALE_PT_SHARE);
    draft.hours.fulltime_mean_female =
        (FEMALE_WEEKLY_HOURS - FEMALE_PT_SHARE * PT_MEAN_HOURS) / (1.0 - FEMALE_PT_SHARE);

    // participation: benefit strongly negative, children raising male and
    // mildly raising female participation; intercepts hit the target rates
    let mut participation = ParticipationCoefs {
        intercept_female: 0.0,
        intercept_male: 0.0,
        benefit: -0.75,
        kids_female: 0.07,
        kids_male: 0.20,
    };
    participation.intercept_female = solve_participation_intercept(
        Gender::F,
        PARTICIPATION_RATE,
        &participation,
        &draft.covariates,
    );
    participation.intercept_male = solve_participation_intercept(
        Gender::M,
        PARTICIPATION_RATE,
        &participation,
        &draft.covariates,
    );
    draft.participation = Some(participation);

    // wage intercepts: one per gender (identical across dominance cells so
    // the fd penalty is the constant treatment effect), solved so the
    // gender-level mean log wages land on target:
    //   mean_g = i_g + fd_share_g * penalty + E_dom[ beta_g' E[x|g,dom] ]
    for gender in [Gender::M, Gender::F] {
        let fd_share = draft.fd_share(gender);
        let slopes = match gender {
            Gender::M => male_slopes(),
            Gender::F => female_slopes(),
        };
        let mean_md = draft.covariate_means(gender, Dominance::Male).unwrap();
        let mean_fd = draft.covariate_means(gender, Dominance::Female).unwrap();
        let xbeta = (1.0 - fd_share) * mean_md.dot(&slopes.slopes())
            + fd_share * mean_fd.dot(&slopes.slopes());
        let target = match gender {
            Gender::M => MALE_MEAN_LNWAGE,
            Gender::F => FEMALE_MEAN_LNWAGE,
        };
        let intercept = target - fd_share * FD_WAGE_PENALTY - xbeta;
        match gender {
            Gender::M => {
                draft.wage.male_mdom.intercept = intercept;
                draft.wage.male_fdom.intercept = intercept;
            }
            Gender::F => {
                draft.wage.female_mdom.intercept = intercept;
                draft.wage.female_fdom.intercept = intercept;
            }
        }
    }

    draft
}
