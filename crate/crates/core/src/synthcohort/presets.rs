//! Bundled scenarios.

use super::{DiseaseProfile, DrugProfile, RampStep, ScenarioConfig, ScenarioError, WeibullSpec};
use crate::event_model::Day;

pub const PRESET_NAMES: [&str; 6] = [
    "demo",
    "dense_single",
    "left_censored",
    "covid_analog",
    "density_sweep",
    "label_noise",
];

fn ymd(y: i32, m: u32, d: u32) -> Day {
    Day::from_ymd(y, m, d).expect("valid preset date")
}

struct DrugSet {
    k: f64,
    lambda: f64,
    renewable_lambda: f64,
    sporadic_rate: f64,
    sporadic_chronic: f64,
    therapy_acute: f64,
}

impl DrugSet {
    fn build(&self, prefix: &str, n: usize) -> Vec<DrugProfile> {
        (1..=n)
            .map(|i| DrugProfile {
                code: format!("{prefix}{i:02}"),
                non_renewable: WeibullSpec {
                    k: self.k,
                    lambda: self.lambda,
                },
                renewable: WeibullSpec {
                    k: self.k,
                    lambda: self.renewable_lambda,
                },
                sporadic_rate_per_year: self.sporadic_rate,
                sporadic_chronic_prob: self.sporadic_chronic,
                therapy_acute_prob: self.therapy_acute,
            })
            .collect()
    }
}

fn ramp(steps: &[(i32, f64)]) -> Vec<RampStep> {
    steps
        .iter()
        .map(|&(from_year, prob)| RampStep { from_year, prob })
        .collect()
}

struct DiseaseSpec<'a> {
    icd: &'a str,
    prevalence: f64,
    treatment_prob: f64,
    drugs_per_patient: usize,
    onset: (Day, Day),
    delay: f64,
    rediagnosis: f64,
    ramp: &'a [(i32, f64)],
    prodromal: (f64, i32),
}

impl DiseaseSpec<'_> {
    fn build(&self, drugs: &[DrugProfile]) -> DiseaseProfile {
        DiseaseProfile {
            icd: self.icd.to_string(),
            drugs: drugs.iter().map(|d| d.code.clone()).collect(),
            prevalence: self.prevalence,
            treatment_prob: self.treatment_prob,
            drugs_per_patient: self.drugs_per_patient,
            onset_from: self.onset.0,
            onset_to: self.onset.1,
            therapy_available_from: None,
            diagnosis_delay_mean_days: self.delay,
            rediagnosis_rate_per_year: self.rediagnosis,
            recording_ramp: ramp(self.ramp),
            prodromal_rate_per_year: self.prodromal.0,
            prodromal_lead_days: self.prodromal.1,
        }
    }
}

fn assemble(
    name: &str,
    n_patients: usize,
    seed: u64,
    window: (Day, Day),
    switch_after_events: Option<usize>,
    parts: Vec<(Vec<DrugProfile>, DiseaseProfile)>,
) -> ScenarioConfig {
    let mut drugs = Vec::new();
    let mut diseases = Vec::new();
    for (d, s) in parts {
        drugs.extend(d);
        diseases.push(s);
    }
    ScenarioConfig {
        name: name.to_string(),
        n_patients,
        seed,
        history_start: window.0.offset(-3650),
        study_start: window.0,
        study_end: window.1,
        switch_after_events,
        drugs,
        diseases,
    }
}

/// Four chronic diseases over a nine-year window with a rising diagnosis
/// recording rate and some onsets before the window.
fn demo() -> ScenarioConfig {
    let window = (ymd(2014, 1, 1), ymd(2022, 12, 31));
    let adoption = [(2014, 0.4), (2016, 0.6), (2018, 0.85), (2020, 1.0)];
    let noise = |k, lambda, renewable_lambda| DrugSet {
        k,
        lambda,
        renewable_lambda,
        sporadic_rate: 0.05,
        sporadic_chronic: 0.05,
        therapy_acute: 0.05,
    };
    let disease = |icd, prevalence, treatment_prob| DiseaseSpec {
        icd,
        prevalence,
        treatment_prob,
        drugs_per_patient: 2,
        onset: (ymd(2011, 1, 1), ymd(2022, 6, 30)),
        delay: 60.0,
        rediagnosis: 1.0,
        ramp: &adoption,
        prodromal: (1.0, 365),
    };
    let e11 = noise(2.5, 90.0, 330.0).build("A10Z", 12);
    let i10 = noise(2.0, 100.0, 360.0).build("C09Z", 12);
    let j45 = noise(1.3, 120.0, 300.0).build("R03Z", 10);
    let f32 = noise(1.8, 60.0, 200.0).build("N06Z", 10);
    assemble(
        "demo",
        10_000,
        20_240_601,
        window,
        Some(6),
        vec![
            (e11.clone(), disease("E11", 0.15, 0.85).build(&e11)),
            (i10.clone(), disease("I10", 0.20, 0.80).build(&i10)),
            (j45.clone(), disease("J45", 0.12, 0.60).build(&j45)),
            (f32.clone(), disease("F32", 0.12, 0.70).build(&f32)),
        ],
    )
}

/// One dense disease refilled as non-renewable Weibull(2.5, 100), with
/// background prescribing that is chronically mislabeled 15% of the time.
fn dense_single() -> ScenarioConfig {
    let window = (ymd(2014, 1, 1), ymd(2022, 12, 31));
    let drugs = DrugSet {
        k: 2.5,
        lambda: 100.0,
        renewable_lambda: 100.0,
        sporadic_rate: 0.02,
        sporadic_chronic: 0.15,
        therapy_acute: 0.0,
    }
    .build("A10Z", 10);
    let disease = DiseaseSpec {
        icd: "E11",
        prevalence: 0.3,
        treatment_prob: 1.0,
        drugs_per_patient: 1,
        onset: (ymd(2015, 1, 1), ymd(2021, 12, 31)),
        delay: 45.0,
        rediagnosis: 1.0,
        ramp: &[(2000, 1.0)],
        prodromal: (1.5, 1826),
    }
    .build(&drugs);
    assemble("dense_single", 10_000, 7_001, window, None, vec![(drugs, disease)])
}

/// Two diseases where 30% of onsets predate the study window.
fn left_censored() -> ScenarioConfig {
    let window = (ymd(2014, 1, 1), ymd(2022, 12, 31));
    let span = window.1.days_since(window.0);
    // A uniform onset over [start - 3w/7, end] predates the window with
    // probability 0.3.
    let onset = (window.0.offset(-(3 * span) / 7), window.1);
    let adoption = [(2014, 0.5), (2016, 0.8), (2018, 1.0)];
    let set = DrugSet {
        k: 2.5,
        lambda: 100.0,
        renewable_lambda: 100.0,
        sporadic_rate: 0.02,
        sporadic_chronic: 0.15,
        therapy_acute: 0.02,
    };
    let disease = |icd| DiseaseSpec {
        icd,
        prevalence: 0.25,
        treatment_prob: 0.95,
        drugs_per_patient: 1,
        onset,
        delay: 60.0,
        rediagnosis: 1.0,
        ramp: &adoption,
        prodromal: (2.5, 1826),
    };
    let e11 = set.build("A10Z", 10);
    let i10 = set.build("C09Z", 10);
    assemble(
        "left_censored",
        10_000,
        7_002,
        window,
        None,
        vec![
            (e11.clone(), disease("E11").build(&e11)),
            (i10.clone(), disease("I10").build(&i10)),
        ],
    )
}

/// A disease whose sustained therapy exists only after a cutover, with
/// pre-cutover sporadic use of its drugs that is often labeled chronic.
fn covid_analog() -> ScenarioConfig {
    let window = (ymd(2016, 1, 1), ymd(2022, 12, 31));
    let cutover = ymd(2020, 3, 1);
    let u07 = DrugSet {
        k: 3.0,
        lambda: 30.0,
        renewable_lambda: 30.0,
        sporadic_rate: 0.05,
        sporadic_chronic: 0.05,
        therapy_acute: 0.05,
    }
    .build("J05Z", 10);
    let mut covid = DiseaseSpec {
        icd: "U07",
        prevalence: 0.25,
        treatment_prob: 1.0,
        drugs_per_patient: 1,
        onset: (cutover, ymd(2022, 6, 30)),
        delay: 7.0,
        rediagnosis: 0.5,
        ramp: &[(2000, 1.0)],
        prodromal: (0.0, 0),
    }
    .build(&u07);
    covid.therapy_available_from = Some(cutover);
    let e11 = DrugSet {
        k: 2.5,
        lambda: 90.0,
        renewable_lambda: 90.0,
        sporadic_rate: 0.15,
        sporadic_chronic: 0.05,
        therapy_acute: 0.05,
    }
    .build("A10Z", 10);
    let diabetes = DiseaseSpec {
        icd: "E11",
        prevalence: 0.2,
        treatment_prob: 0.9,
        drugs_per_patient: 1,
        onset: (ymd(2013, 1, 1), ymd(2022, 6, 30)),
        delay: 60.0,
        rediagnosis: 1.0,
        ramp: &[(2000, 1.0)],
        prodromal: (1.0, 1095),
    }
    .build(&e11);
    assemble(
        "covid_analog",
        10_000,
        7_003,
        window,
        None,
        vec![(u07, covid), (e11, diabetes)],
    )
}

/// Five diseases from sparse to dense prescribing.
fn density_sweep() -> ScenarioConfig {
    let window = (ymd(2014, 1, 1), ymd(2022, 12, 31));
    let levels = [
        ("D01", "S01Z", 700.0, 0.5),
        ("D02", "S02Z", 400.0, 0.6),
        ("D03", "S03Z", 240.0, 0.7),
        ("D04", "S04Z", 150.0, 0.8),
        ("D05", "S05Z", 90.0, 0.9),
    ];
    let parts = levels
        .iter()
        .map(|&(icd, prefix, lambda, treatment_prob)| {
            let drugs = DrugSet {
                k: 2.0,
                lambda,
                renewable_lambda: lambda,
                sporadic_rate: 0.02,
                sporadic_chronic: 0.05,
                therapy_acute: 0.1,
            }
            .build(prefix, 10);
            let disease = DiseaseSpec {
                icd,
                prevalence: 0.25,
                treatment_prob,
                drugs_per_patient: 1,
                onset: (ymd(2013, 1, 1), ymd(2021, 12, 31)),
                delay: 60.0,
                rediagnosis: 1.0,
                ramp: &[(2000, 1.0)],
                prodromal: (1.0, 1095),
            }
            .build(&drugs);
            (drugs, disease)
        })
        .collect();
    assemble("density_sweep", 30_000, 7_004, window, None, parts)
}

/// 33 drugs with shapes from 0.8 to 4 and 20% label noise in both
/// directions.
fn label_noise() -> ScenarioConfig {
    let window = (ymd(2014, 1, 1), ymd(2022, 12, 31));
    let mut parts = Vec::new();
    for (g, icd) in ["E11", "I10", "J45"].iter().enumerate() {
        let mut drugs = Vec::new();
        for j in 0..11 {
            let idx = g * 11 + j;
            let k = 0.8 + 3.2 * idx as f64 / 32.0;
            let lambda = 40.0 + 10.0 * ((idx * 7) % 33) as f64;
            drugs.extend(
                DrugSet {
                    k,
                    lambda,
                    renewable_lambda: 3.0 * lambda,
                    sporadic_rate: 0.1,
                    sporadic_chronic: 0.2,
                    therapy_acute: 0.2,
                }
                .build(&format!("L{idx:02}Z"), 1),
            );
        }
        let disease = DiseaseSpec {
            icd,
            prevalence: 0.2,
            treatment_prob: 0.9,
            drugs_per_patient: 2,
            onset: (ymd(2010, 1, 1), ymd(2021, 12, 31)),
            delay: 60.0,
            rediagnosis: 1.0,
            ramp: &[(2000, 1.0)],
            prodromal: (1.0, 1095),
        }
        .build(&drugs);
        parts.push((drugs, disease));
    }
    assemble("label_noise", 10_000, 7_005, window, Some(6), parts)
}

pub fn preset(name: &str) -> Result<ScenarioConfig, ScenarioError> {
    match name {
        "demo" => Ok(demo()),
        "dense_single" => Ok(dense_single()),
        "left_censored" => Ok(left_censored()),
        "covid_analog" => Ok(covid_analog()),
        "density_sweep" => Ok(density_sweep()),
        "label_noise" => Ok(label_noise()),
        other => Err(ScenarioError::UnknownPreset(other.to_string())),
    }
}
