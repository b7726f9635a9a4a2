use super::*;
use crate::event_model::build_trajectories;
use crate::renewal::{fit_weibull, WeibullParams};

fn ymd(y: i32, m: u32, d: u32) -> Day {
    Day::from_ymd(y, m, d).unwrap()
}

fn drug(code: &str, k: f64, lambda: f64, sporadic: f64) -> DrugProfile {
    DrugProfile {
        code: code.into(),
        non_renewable: WeibullSpec { k, lambda },
        renewable: WeibullSpec { k, lambda: lambda * 3.0 },
        sporadic_rate_per_year: sporadic,
        sporadic_chronic_prob: 0.0,
        therapy_acute_prob: 0.0,
    }
}

fn scenario(n: usize, prevalence: f64) -> ScenarioConfig {
    ScenarioConfig {
        name: "t".into(),
        n_patients: n,
        seed: 1,
        history_start: ymd(2005, 1, 1),
        study_start: ymd(2014, 1, 1),
        study_end: ymd(2022, 12, 31),
        switch_after_events: Some(4),
        drugs: vec![drug("A", 2.0, 90.0, 0.5), drug("B", 1.5, 60.0, 0.5), drug("C", 3.0, 30.0, 0.2)],
        diseases: vec![DiseaseProfile {
            icd: "E11".into(),
            drugs: vec!["A".into(), "B".into()],
            prevalence,
            treatment_prob: 0.8,
            drugs_per_patient: 1,
            onset_from: ymd(2010, 1, 1),
            onset_to: ymd(2022, 6, 30),
            therapy_available_from: None,
            diagnosis_delay_mean_days: 0.0,
            rediagnosis_rate_per_year: 0.0,
            prodromal_rate_per_year: 0.0,
            prodromal_lead_days: 0,
            recording_ramp: vec![RampStep { from_year: 1900, prob: 1.0 }],
        }],
    }
}

#[test]
fn quantile_fixed_point_is_scale() {
    let u = (-1.0f64).exp();
    for &(k, lambda) in &[(0.5, 10.0), (2.0, 350.0), (7.0, 100.0)] {
        let q = weibull_quantile(k, lambda, u);
        assert!((q - lambda).abs() <= 1e-12 * lambda, "{q}");
        assert_eq!(q.round(), lambda);
    }
}

#[test]
fn exponential_sample_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 1_000_000;
    let total: u64 = (0..n).map(|_| u64::from(sample_weibull(1.0, 100.0, &mut rng))).sum();
    let mean = total as f64 / n as f64;
    assert!((mean / 100.0 - 1.0).abs() < 0.02, "{mean}");
}

#[test]
fn weibull_sample_mean_matches_mean_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 200_000;
    let total: u64 = (0..n).map(|_| u64::from(sample_weibull(2.0, 100.0, &mut rng))).sum();
    let mean = total as f64 / n as f64;
    let expected = WeibullParams::new(2.0, 100.0).unwrap().mean_interval();
    assert!((expected - 88.6227).abs() < 1e-3);
    assert!((mean - expected).abs() < 1.0, "{mean}");
}

#[test]
fn samples_are_at_least_one_day() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    assert!((0..10_000).all(|_| sample_weibull(0.3, 0.5, &mut rng) >= 1));
}

#[test]
fn zero_prevalence_leaves_background_only() {
    let c = simulate(&scenario(500, 0.0)).unwrap();
    assert!(c.truth.onsets.is_empty());
    assert!(c.truth.transitions.is_empty());
    assert!(c.diagnoses.is_empty());
    assert!(!c.prescriptions.is_empty());
    assert!(c.prescriptions.iter().all(|e| !e.chronic_label && !e.renewable));
}

#[test]
fn full_adoption_and_no_delay_diagnose_on_onset_day() {
    let cfg = scenario(2000, 0.5);
    let c = simulate(&cfg).unwrap();
    let in_window: Vec<_> = c
        .truth
        .onsets
        .iter()
        .filter(|o| o.onset_date >= cfg.study_start)
        .collect();
    assert!(in_window.len() > 500);
    for o in in_window {
        assert!(c
            .diagnoses
            .iter()
            .any(|d| d.patient_id == o.patient_id && d.icd_code == o.icd_code && d.date == o.onset_date));
    }
}

#[test]
fn nothing_precedes_study_start() {
    let cfg = scenario(2000, 0.5);
    let c = simulate(&cfg).unwrap();
    assert!(c.prescriptions.iter().all(|e| e.date >= cfg.study_start && e.date <= cfg.study_end));
    assert!(c.diagnoses.iter().all(|e| e.date >= cfg.study_start && e.date <= cfg.study_end));
    assert!(c.truth.onsets.iter().any(|o| o.onset_date < cfg.study_start));
}

#[test]
fn same_seed_same_cohort() {
    let cfg = scenario(300, 0.4);
    assert_eq!(simulate(&cfg).unwrap(), simulate(&cfg).unwrap());
    let other = ScenarioConfig { seed: 2, ..cfg.clone() };
    assert_ne!(simulate(&cfg).unwrap().prescriptions, simulate(&other).unwrap().prescriptions);
}

#[test]
fn flags_follow_switch_rule_without_noise() {
    let cfg = scenario(1500, 0.5);
    let c = simulate(&cfg).unwrap();
    let trajectories = build_trajectories(&c.prescriptions);
    let mut checked = 0;
    for tr in &c.truth.transitions {
        let Some(start) = tr.event_index else { continue };
        let t = trajectories
            .iter()
            .find(|t| t.patient_id == tr.patient_id && t.drug_code == tr.drug_code)
            .unwrap();
        let events = t.events();
        assert!(events[..start].iter().all(|e| !e.chronic_label && !e.renewable));
        assert!(events[start..].iter().all(|e| e.chronic_label));
        if tr.therapy_start >= cfg.study_start {
            assert_eq!(events[start].date, tr.therapy_start);
            for (m, e) in events[start..].iter().enumerate() {
                assert_eq!(e.renewable, m >= 4);
            }
            checked += 1;
        } else {
            assert_eq!(start, 0);
        }
    }
    assert!(checked > 200);
}

#[test]
fn label_noise_rates_are_honored() {
    let mut cfg = scenario(3000, 0.0);
    for d in &mut cfg.drugs {
        d.sporadic_chronic_prob = 0.2;
    }
    let c = simulate(&cfg).unwrap();
    let chronic = c.prescriptions.iter().filter(|e| e.chronic_label).count();
    let rate = chronic as f64 / c.prescriptions.len() as f64;
    assert!((rate - 0.2).abs() < 0.01, "{rate}");
}

#[test]
fn therapy_intervals_recover_generating_parameters() {
    let mut cfg = scenario(4000, 1.0);
    cfg.history_start = ymd(1960, 1, 1);
    cfg.study_start = ymd(1990, 1, 1);
    cfg.switch_after_events = None;
    cfg.drugs = vec![drug("A", 2.0, 350.0, 0.0), drug("B", 2.0, 350.0, 0.0)];
    cfg.diseases[0].treatment_prob = 1.0;
    cfg.diseases[0].onset_from = ymd(1970, 1, 1);
    cfg.diseases[0].onset_to = ymd(1995, 1, 1);
    let c = simulate(&cfg).unwrap();
    let taus: Vec<f64> = build_trajectories(&c.prescriptions)
        .iter()
        .flat_map(|t| t.taus())
        .collect();
    assert!(taus.len() >= 5000);
    let p = fit_weibull(&taus).unwrap();
    assert!((p.shape() / 2.0 - 1.0).abs() < 0.05, "{p:?}");
    assert!((p.scale() / 350.0 - 1.0).abs() < 0.05, "{p:?}");
}

#[test]
fn therapy_waits_for_availability() {
    let mut cfg = scenario(1000, 1.0);
    cfg.diseases[0].therapy_available_from = Some(ymd(2020, 3, 1));
    let c = simulate(&cfg).unwrap();
    assert!(c.truth.transitions.iter().all(|t| t.therapy_start >= ymd(2020, 3, 1)));
    assert!(c
        .prescriptions
        .iter()
        .filter(|e| e.chronic_label)
        .all(|e| e.date >= ymd(2020, 3, 1)));
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = scenario(10, 1.5);
    assert!(matches!(simulate(&cfg), Err(ScenarioError::Invalid(_))));
    cfg.diseases[0].prevalence = 0.5;
    cfg.diseases[0].drugs.push("Z".into());
    assert!(matches!(simulate(&cfg), Err(ScenarioError::Invalid(_))));
    let mut cfg = scenario(10, 0.5);
    cfg.study_end = ymd(2000, 1, 1);
    assert!(cfg.validate().is_err());
    let mut cfg = scenario(10, 0.5);
    cfg.drugs[0].non_renewable.k = 0.0;
    assert!(cfg.validate().is_err());
    let mut cfg = scenario(10, 0.5);
    cfg.diseases[0].drugs_per_patient = 3;
    assert!(cfg.validate().is_err());
}

#[test]
fn presets_validate_and_round_trip() {
    for name in PRESET_NAMES {
        let cfg = preset(name).unwrap();
        cfg.validate().unwrap();
        let back: ScenarioConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        for d in &cfg.diseases {
            assert!(d.drugs.len() >= 10, "{name}/{}", d.icd);
        }
    }
    assert!(matches!(preset("nope"), Err(ScenarioError::UnknownPreset(_))));
}

#[test]
fn left_censored_preset_predates_thirty_percent() {
    let cfg = preset("left_censored").unwrap();
    let c = simulate(&cfg).unwrap();
    let before = c.truth.onsets.iter().filter(|o| o.onset_date < cfg.study_start).count();
    let frac = before as f64 / c.truth.onsets.len() as f64;
    assert!((frac - 0.3).abs() < 0.02, "{frac}");
}

#[test]
fn ground_truth_file_round_trip() {
    let c = simulate(&scenario(200, 0.5)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ground_truth.csv");
    write_ground_truth(&path, &c.truth).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("patient_id,icd,true_onset_date\n"));
    let back = read_ground_truth(&path).unwrap();
    assert_eq!(back.len(), c.truth.onsets.len());
    assert!(back
        .iter()
        .zip(&c.truth.onsets)
        .all(|(a, b)| a.patient_id == b.patient_id && a.onset_date == b.onset_date));
}
