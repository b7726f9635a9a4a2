use std::collections::BTreeSet;

use rxonset::changepoint::{detect_all, read_onsets, write_onsets, DetectionConfig, OnsetMethod};
use rxonset::evalharness::{median_abs, recall_at, truth_errors, DEFAULT_DELTAS};
use rxonset::event_model::{ingest_prescriptions, write_prescriptions, PrescriptionSchema};
use rxonset::phenotype::{
    build_dictionary, infer_disease_onsets, load_dictionary, naive_baseline, save_dictionary,
    DictionaryConfig,
};
use rxonset::population::{estimate_params, load_params, save_params, LabelFilter};
use rxonset::synthcohort::{patient_id, preset, simulate};
use rxonset::{build_trajectories, split_patients, PatientId};

#[test]
fn frozen_model_recovers_onsets_on_held_out_patients() {
    let cfg = preset("dense_single").unwrap();
    let cohort = simulate(&cfg).unwrap();
    let patients: BTreeSet<PatientId> = (0..cfg.n_patients).map(patient_id).collect();
    let (train, test) = split_patients(&patients, 0.42, 5).unwrap();
    let trajectories = build_trajectories(&cohort.prescriptions);
    let (tr, te): (Vec<_>, Vec<_>) = trajectories
        .into_iter()
        .partition(|t| train.contains(&t.patient_id));

    let params = estimate_params(&tr, LabelFilter::ChronicOnly, 100);
    let det = DetectionConfig::default();
    let (train_onsets, _) = detect_all(&tr, &params, &det).unwrap();
    let train_dx: Vec<_> = cohort
        .diagnoses
        .iter()
        .filter(|d| train.contains(&d.patient_id))
        .cloned()
        .collect();
    let dict = build_dictionary(&train_onsets, &train_dx, &DictionaryConfig::default()).unwrap();
    assert!(dict.audit().is_ok());
    assert!(dict.training_patients().iter().all(|p| train.contains(p)));

    let (test_onsets, report) = detect_all(&te, &params, &det).unwrap();
    assert!(report.failures.is_empty());
    let mut all = infer_disease_onsets(&test_onsets, &dict);
    all.extend(naive_baseline(&te, &dict));
    assert!(all.iter().all(|o| test.contains(&o.patient_id)));

    let truth: Vec<_> = cohort
        .truth
        .onsets
        .iter()
        .filter(|t| test.contains(&t.patient_id))
        .cloned()
        .collect();
    let errs = truth_errors(&all, &truth);
    let cp = median_abs(&errs[&OnsetMethod::Changepoint]).unwrap();
    let naive = median_abs(&errs[&OnsetMethod::Naive]).unwrap();
    assert!(cp < naive, "changepoint {cp} vs naive {naive}");

    let test_dx: Vec<_> = cohort
        .diagnoses
        .iter()
        .filter(|d| test.contains(&d.patient_id))
        .cloned()
        .collect();
    let curve = recall_at(&all, &test_dx, &DEFAULT_DELTAS).unwrap();
    for icd in curve.per_icd.keys() {
        for m in OnsetMethod::ALL {
            let c = curve.curve(icd, m);
            assert!(c.windows(2).all(|w| w[0].1 <= w[1].1));
        }
    }
}

#[test]
fn artifacts_survive_a_disk_round_trip() {
    let cfg = preset("dense_single").unwrap();
    let cohort = simulate(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();

    let rx_path = dir.path().join("rx.csv");
    write_prescriptions(&rx_path, &cohort.prescriptions).unwrap();
    let (back, report) = ingest_prescriptions(&rx_path, &PrescriptionSchema::default()).unwrap();
    assert_eq!(report.rejected(), 0);
    assert_eq!(back, cohort.prescriptions);

    let trajectories = build_trajectories(&back);
    let params = estimate_params(&trajectories, LabelFilter::ChronicOnly, 100);
    let params_path = dir.path().join("params.json");
    save_params(&params, &params_path, Some("abc")).unwrap();
    let loaded = load_params(&params_path).unwrap();
    assert_eq!(loaded, params);

    let (onsets, _) = detect_all(&trajectories, &loaded, &DetectionConfig::default()).unwrap();
    let onsets_path = dir.path().join("onsets.csv");
    write_onsets(&onsets_path, &onsets).unwrap();
    assert_eq!(read_onsets(&onsets_path).unwrap(), onsets);

    let dict = build_dictionary(&onsets, &cohort.diagnoses, &DictionaryConfig::default()).unwrap();
    let dict_path = dir.path().join("dict.json");
    save_dictionary(&dict, &dict_path, None).unwrap();
    assert_eq!(load_dictionary(&dict_path).unwrap(), dict);
}
