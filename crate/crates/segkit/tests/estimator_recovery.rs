//! Estimator recovery against the synthetic generator's planted truth:
//! null effects stay within Monte Carlo error, planted effects are
//! recovered, and closed-form ground-truth quantities match.

use ndarray::Array1;

use segkit::estimators::{ols, probit, probit_ame, VcovKind};
use segkit::frame::{build_design, FormulaSpec};
use segkit::kbo::kbo_threefold;
use segkit::matching::{estimate_pscore, match_att, PScoreModel};
use segkit::segregation::{classify_dominance, ssi, Dominance, Pooling};
use segkit::synthgen::{
    calibrate_to_paper, generate, Assignment, DgpSpec, GenderRates, SelectionCoefs,
};

fn mc_mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn base_spec(n: usize, seed: u64) -> DgpSpec {
    DgpSpec { n_workers: n, seed, ..calibrate_to_paper() }
}

#[test]
fn probit_null_slopes_stay_within_4_mc_se() {
    // participation with zero covariate effects: the response is
    // independent of every regressor, so probit slopes center on zero
    let terms = ["incouple", "kids", "yrseduc", "age"];
    let mut estimates: Vec<Vec<f64>> = vec![Vec::new(); terms.len()];
    for rep in 0..10 {
        let mut spec = base_spec(10_000, 900 + rep);
        if let Some(p) = spec.participation.as_mut() {
            p.benefit = 0.0;
            p.kids_female = 0.0;
            p.kids_male = 0.0;
            p.intercept_female = 0.3;
            p.intercept_male = 0.3;
        }
        let (frame, _, _) = generate(&spec).unwrap();
        let formula = FormulaSpec::new("in_lf", &terms);
        let (y, design) = build_design(&frame, &formula).unwrap();
        let fit = probit(&y, &design).unwrap();
        for (slot, name) in terms.iter().enumerate() {
            estimates[slot].push(fit.coef(name).unwrap());
        }
    }
    for (slot, name) in terms.iter().enumerate() {
        let (mean, se) = mc_mean_se(&estimates[slot]);
        assert!(mean.abs() < 4.0 * se, "{name}: mean {mean} exceeds 4 x MC SE {se}");
    }
}

#[test]
fn pscore_on_independent_treatment_is_flat() {
    // latent selection with all slopes zero: treatment ignores covariates
    let coefs = SelectionCoefs {
        intercept: -0.3,
        female: 0.0,
        age_std: 0.0,
        yrseduc_std: 0.0,
        incouple: 0.0,
        kids: 0.0,
    };
    let mut ame_estimates: Vec<Vec<f64>> = vec![Vec::new(); 3];
    let mut score_spreads = Vec::new();
    let terms = ["age", "yrseduc", "kids"];
    for rep in 0..10 {
        let mut spec = base_spec(8_000, 300 + rep);
        spec.assignment = Assignment::Latent { coefs: coefs.clone(), female_share: 0.5 };
        spec.participation = None;
        let (frame, _, _) = generate(&spec).unwrap();
        let formula = FormulaSpec::new("fd_sector", &terms);
        let ps = estimate_pscore(&frame, "fd_sector", &formula).unwrap();
        let treated_share =
            ps.treatment.iter().filter(|t| **t).count() as f64 / ps.treatment.len() as f64;
        let mean_score = ps.scores.iter().sum::<f64>() / ps.scores.len() as f64;
        assert!((mean_score - treated_share).abs() < 0.02);
        let spread = ps
            .scores
            .iter()
            .map(|s| (s - mean_score) * (s - mean_score))
            .sum::<f64>()
            / ps.scores.len() as f64;
        score_spreads.push(spread.sqrt());
        let fit = ps.fit.as_ref().unwrap();
        let design = ps.design.as_ref().unwrap();
        let marginals = probit_ame(fit, design);
        for (slot, name) in terms.iter().enumerate() {
            let idx = marginals.column_names.iter().position(|c| c == name).unwrap();
            ame_estimates[slot].push(marginals.ame[idx]);
        }
    }
    // scores concentrate near the treated fraction
    let mean_spread = score_spreads.iter().sum::<f64>() / score_spreads.len() as f64;
    assert!(mean_spread < 0.02, "score spread {mean_spread}");
    for (slot, name) in terms.iter().enumerate() {
        let (mean, se) = mc_mean_se(&ame_estimates[slot]);
        assert!(mean.abs() < 4.0 * se, "AME {name}: {mean} vs 4 x {se}");
    }
}

#[test]
fn constant_only_pscore_equals_treated_fraction() {
    let scores_y = vec![
        (0.0, false),
        (0.0, true),
        (0.0, true),
        (0.0, false),
        (0.0, true),
        (0.0, false),
        (0.0, false),
        (0.0, false),
    ];
    // intercept-only probit: fitted probability is the sample share
    let mut frame = segkit::frame::Frame::new();
    frame
        .push_column(segkit::frame::Column::boolean(
            "treated",
            scores_y.iter().map(|v| Some(v.1)).collect(),
        ))
        .unwrap();
    let formula = FormulaSpec::new("treated", &[]);
    let ps = estimate_pscore(&frame, "treated", &formula).unwrap();
    let share = 3.0 / 8.0;
    for s in &ps.scores {
        assert!((s - share).abs() < 1e-6, "score {s} vs share {share}");
    }
}

#[test]
fn ols_recovers_planted_wage_coefficients() {
    let spec = base_spec(50_000, 41);
    let (frame, _, _) = generate(&spec).unwrap();
    let truth = &spec.wage.female_mdom;
    // women in male-dominated sectors: coefficients known exactly
    let female = frame.column("female").unwrap().as_numeric().unwrap();
    let fd = frame.column("fd_sector").unwrap().as_numeric().unwrap();
    let mask: Vec<bool> = female
        .iter()
        .zip(&fd)
        .map(|(f, d)| *f == Some(1.0) && *d == Some(0.0))
        .collect();
    let sub = frame.filter(&mask);
    let formula = FormulaSpec::new(
        "ln_wage",
        &[
            "age",
            "age^2",
            "yrseduc",
            "yrseduc^2",
            "experience",
            "experience^2",
            "incouple",
            "kids",
            "training",
            "public",
            "parttime",
        ],
    );
    let (y, design) = build_design(&sub, &formula).unwrap();
    let fit = ols(&y, &design, VcovKind::RobustHc1).unwrap();
    let expected = [
        ("age", truth.age),
        ("yrseduc", truth.yrseduc),
        ("experience", truth.experience),
        ("incouple", truth.incouple),
        ("kids", truth.kids),
        ("training", truth.training),
        ("public", truth.public),
        ("parttime", truth.parttime),
    ];
    for (name, value) in expected {
        let idx = fit.column_names.iter().position(|c| c == name).unwrap();
        assert!(
            (fit.beta[idx] - value).abs() < 4.0 * fit.se[idx],
            "{name}: {} vs planted {value} (se {})",
            fit.beta[idx],
            fit.se[idx]
        );
    }
}

#[test]
fn match_att_recovers_planted_effect_with_true_scores() {
    // latent confounded selection, constant planted penalty
    let mut spec = base_spec(20_000, 555);
    spec.assignment = Assignment::Latent {
        coefs: SelectionCoefs {
            intercept: -0.2,
            female: 0.7,
            age_std: -0.2,
            yrseduc_std: 0.3,
            incouple: 0.1,
            kids: 0.25,
        },
        female_share: 0.5,
    };
    spec.participation = None;
    spec.fd_penalty = 0.5;
    let (frame, _, truth) = generate(&spec).unwrap();
    assert_eq!(truth.att, Some(0.5));
    let outcome: Vec<f64> = frame
        .column("ln_wage")
        .unwrap()
        .as_numeric()
        .unwrap()
        .into_iter()
        .map(|v| v.unwrap())
        .collect();
    let treated: Vec<bool> = frame
        .column("fd_sector")
        .unwrap()
        .as_numeric()
        .unwrap()
        .into_iter()
        .map(|v| v == Some(1.0))
        .collect();
    let ps = PScoreModel::from_scores(truth.propensity.unwrap(), treated);
    let result = match_att(&ps, &outcome, 5, true).unwrap();
    assert!(
        (result.att - 0.5).abs() < 4.0 * result.se_naive,
        "att {} se {}",
        result.att,
        result.se_naive
    );
}

#[test]
fn kbo_estimates_converge_to_ground_truth_at_50k() {
    // gender-specific slopes and rates so every component is nonzero
    let mut spec = base_spec(50_000, 808);
    spec.covariates.kids = GenderRates { female: 0.45, male: 0.25 };
    spec.participation = None;
    let (frame, _, truth) = generate(&spec).unwrap();
    let (_, t) = truth
        .kbo
        .iter()
        .find(|(d, _)| *d == Dominance::Male)
        .expect("male-dominated cell present");

    let female = frame.column("female").unwrap().as_numeric().unwrap();
    let fd = frame.column("fd_sector").unwrap().as_numeric().unwrap();
    let formula = FormulaSpec::new(
        "ln_wage",
        &[
            "age",
            "age^2",
            "yrseduc",
            "yrseduc^2",
            "experience",
            "experience^2",
            "incouple",
            "kids",
            "training",
            "public",
            "parttime",
        ],
    );
    let mask_m: Vec<bool> = female
        .iter()
        .zip(&fd)
        .map(|(f, d)| *f == Some(0.0) && *d == Some(0.0))
        .collect();
    let mask_f: Vec<bool> = female
        .iter()
        .zip(&fd)
        .map(|(f, d)| *f == Some(1.0) && *d == Some(0.0))
        .collect();
    let (ya, da) = build_design(&frame.filter(&mask_m), &formula).unwrap();
    let (yb, db) = build_design(&frame.filter(&mask_f), &formula).unwrap();
    let result = kbo_threefold(&ya, &da, &yb, &db).unwrap();

    assert!(
        (result.endowment - t.endowment).abs() < 4.0 * result.se_endowment,
        "endowment {} truth {} se {}",
        result.endowment,
        t.endowment,
        result.se_endowment
    );
    assert!(
        (result.coefficient - t.coefficient).abs() < 4.0 * result.se_coefficient,
        "coefficient {} truth {} se {}",
        result.coefficient,
        t.coefficient,
        result.se_coefficient
    );
    assert!(
        (result.interaction - t.interaction).abs() < 4.0 * result.se_interaction,
        "interaction {} truth {} se {}",
        result.interaction,
        t.interaction,
        result.se_interaction
    );
}

#[test]
fn generated_panel_reproduces_closed_form_ssi() {
    let spec = base_spec(60_000, 99);
    let (_, panel, truth) = generate(&spec).unwrap();
    let map = classify_dominance(&panel, Pooling::Pooled).unwrap();
    let series = ssi(&panel, &map).unwrap();
    // quota assignment pins the pooled shares, so every period's index sits
    // near the population value
    for point in &series.points {
        let expect = match point.group {
            Dominance::Female => truth.ssi_fd,
            Dominance::Male => truth.ssi_md,
        };
        assert!(
            (point.value - expect).abs() < 0.02,
            "{:?} at {}: {} vs {}",
            point.group,
            point.time,
            point.value,
            expect
        );
    }
}

#[test]
fn mc_null_att_is_centred_on_zero() {
    // no planted penalty and unconfounded selection: matching on the true
    // scores estimates zero
    let mut atts = Vec::new();
    let mut ses = Vec::new();
    for rep in 0..8 {
        let mut spec = base_spec(20_000, 7000 + rep);
        spec.assignment = Assignment::Latent {
            coefs: SelectionCoefs {
                intercept: -0.1,
                female: 0.5,
                age_std: -0.15,
                yrseduc_std: 0.2,
                incouple: 0.0,
                kids: 0.2,
            },
            female_share: 0.5,
        };
        spec.participation = None;
        spec.fd_penalty = 0.0;
        let (frame, _, truth) = generate(&spec).unwrap();
        let outcome: Vec<f64> = frame
            .column("ln_wage")
            .unwrap()
            .as_numeric()
            .unwrap()
            .into_iter()
            .map(|v| v.unwrap())
            .collect();
        let treated: Vec<bool> = frame
            .column("fd_sector")
            .unwrap()
            .as_numeric()
            .unwrap()
            .into_iter()
            .map(|v| v == Some(1.0))
            .collect();
        let ps = PScoreModel::from_scores(truth.propensity.unwrap(), treated);
        let result = match_att(&ps, &outcome, 5, true).unwrap();
        atts.push(result.att);
        ses.push(result.se_naive);
    }
    let (mean, mc_se) = mc_mean_se(&atts);
    assert!(mean.abs() < 4.0 * mc_se, "null ATT mean {mean} vs MC SE {mc_se}");
}

#[test]
fn probit_gradient_check_on_generated_data() {
    // analytic score against central finite differences on generator data
    let spec = base_spec(2_000, 17);
    let (frame, _, _) = generate(&spec).unwrap();
    let formula = FormulaSpec::new("parttime", &["age", "yrseduc", "incouple"]);
    let (y, design) = build_design(&frame, &formula).unwrap();
    let h = 1e-5;
    let mut rng = segkit::rng::StreamRng::new(5);
    for _ in 0..5 {
        let beta = Array1::from_shape_fn(design.k(), |_| rng.next_gaussian() * 0.1);
        let score = segkit::estimators::probit_score(&y, &design.x, &beta);
        for j in 0..design.k() {
            let mut up = beta.clone();
            up[j] += h;
            let mut down = beta.clone();
            down[j] -= h;
            let fd = (segkit::estimators::probit_loglik(&y, &design.x, &up)
                - segkit::estimators::probit_loglik(&y, &design.x, &down))
                / (2.0 * h);
            let denom = score[j].abs().max(1.0);
            assert!(((score[j] - fd) / denom).abs() < 1e-6);
        }
    }
}
