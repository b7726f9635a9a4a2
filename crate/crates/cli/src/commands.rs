//! Pipeline stages. Each stage reads its inputs from files, writes its
//! artifacts into the output directory and records them in the manifest.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rxonset::changepoint::{detect_all, read_onsets, write_onsets, OnsetMethod};
use rxonset::evalharness::{
    density_recall_correlation, early_onset_fraction, median_abs, onset_counts,
    pre_cutover_fraction, recall_at, time_differences, truth_errors, write_density_csv,
    write_recall_csv, write_timediff_csv, DiffSummary,
};
use rxonset::event_model::{
    ingest_diagnoses, ingest_prescriptions, write_diagnoses, write_prescriptions, DiagnosisSchema,
    IngestReport, PrescriptionSchema,
};
use rxonset::phenotype::{
    build_dictionary, infer_disease_onsets, load_dictionary, naive_baseline, read_disease_onsets,
    save_dictionary, write_disease_onsets, PhenotypeError,
};
use rxonset::population::{compare_label_filters, estimate_params, load_params, save_params};
use rxonset::synthcohort::{self, ScenarioConfig};
use rxonset::{
    build_trajectories, split_patients, Day, DiagnosisEvent, IcdCode, PatientId,
    PrescriptionEvent,
};
use serde::Serialize;

use crate::artifacts::{
    ensure_dir, read_ids, record_outputs, require, write_ids, write_json, Fingerprint,
};
use crate::config::{files, parse_day, PipelineConfig};
use crate::error::{CliError, Result};

const HINT_COHORT: &str = "pass --prescriptions/--diagnoses or run `rxonset simulate` first";
const HINT_SPLIT: &str = "run `rxonset split` first";
const HINT_PARAMS: &str = "run `rxonset fit-params` first or pass --params";
const HINT_DICT: &str = "run `rxonset build-dict` first or pass --dict";

fn log_ingest(path: &Path, report: &IngestReport) -> Result<()> {
    if report.rows_read > 0 && report.rows_accepted == 0 {
        return Err(CliError::Data(format!(
            "{}: all {} rows rejected (first: line {}: {})",
            path.display(),
            report.rows_read,
            report.errors[0].line,
            report.errors[0].message
        )));
    }
    if !report.errors.is_empty() {
        warn!(
            "{}: skipped {} of {} rows (first: line {}: {})",
            path.display(),
            report.rejected(),
            report.rows_read,
            report.errors[0].line,
            report.errors[0].message
        );
    }
    Ok(())
}

fn load_prescriptions(path: &Path) -> Result<Vec<PrescriptionEvent>> {
    require(path, HINT_COHORT)?;
    let (events, report) = ingest_prescriptions(path, &PrescriptionSchema::default())
        .map_err(|e| CliError::Data(e.to_string()))?;
    log_ingest(path, &report)?;
    Ok(events)
}

fn load_diagnoses(path: &Path) -> Result<Vec<DiagnosisEvent>> {
    require(path, HINT_COHORT)?;
    let (events, report) = ingest_diagnoses(path, &DiagnosisSchema::default())
        .map_err(|e| CliError::Data(e.to_string()))?;
    log_ingest(path, &report)?;
    Ok(events)
}

fn load_id_file(path: &Path) -> Result<BTreeSet<PatientId>> {
    require(path, HINT_SPLIT)?;
    read_ids(path)
}

fn overlap<'a>(a: &'a BTreeSet<PatientId>, b: &BTreeSet<PatientId>) -> Vec<&'a PatientId> {
    a.iter().filter(|p| b.contains(*p)).collect()
}

fn leakage(what: &str, ids: &[&PatientId]) -> CliError {
    let shown: Vec<&str> = ids.iter().take(5).map(|p| p.as_str()).collect();
    CliError::Leakage(format!(
        "{what}: {} patient(s), e.g. {}",
        ids.len(),
        shown.join(", ")
    ))
}

fn keep_patients<T>(items: Vec<T>, ids: &BTreeSet<PatientId>, id: impl Fn(&T) -> &PatientId) -> Vec<T> {
    let lookup: HashSet<&PatientId> = ids.iter().collect();
    items.into_iter().filter(|x| lookup.contains(id(x))).collect()
}

// ---------------------------------------------------------------- simulate

#[derive(Clone, Debug, Default)]
pub struct SimulateArgs {
    pub preset: Option<String>,
    pub scenario: Option<PathBuf>,
    pub patients: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SimulateSummary {
    pub scenario: String,
    pub patients: usize,
    pub prescriptions: usize,
    pub diagnoses: usize,
    pub true_onsets: usize,
}

pub fn resolve_scenario(args: &SimulateArgs) -> Result<ScenarioConfig> {
    let mut scenario = match (&args.preset, &args.scenario) {
        (Some(_), Some(_)) => {
            return Err(CliError::Usage("pass either --preset or --scenario, not both".into()))
        }
        (Some(name), None) => synthcohort::preset(name).map_err(|e| {
            CliError::Usage(format!("{e} (available: {})", synthcohort::PRESET_NAMES.join(", ")))
        })?,
        (None, Some(path)) => {
            require(path, "scenario file not found")?;
            ScenarioConfig::load(path).map_err(|e| CliError::Usage(e.to_string()))?
        }
        (None, None) => synthcohort::preset("demo").expect("demo preset exists"),
    };
    if let Some(n) = args.patients {
        scenario.n_patients = n;
    }
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    scenario.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(scenario)
}

pub fn cmd_simulate(args: &SimulateArgs, cfg: &PipelineConfig) -> Result<SimulateSummary> {
    let scenario = resolve_scenario(args)?;
    ensure_dir(&cfg.out_dir)?;
    info!("simulating `{}` with {} patients", scenario.name, scenario.n_patients);
    let cohort = synthcohort::simulate(&scenario).map_err(|e| CliError::Usage(e.to_string()))?;

    let fp = Fingerprint::new("simulate").finish(cfg, serde_json::from_str(&scenario.to_json()).unwrap_or_default());
    let out = |name| cfg.out(name);
    let paths = [
        out(files::PRESCRIPTIONS),
        out(files::DIAGNOSES),
        out(files::GROUND_TRUTH),
        out(files::TRANSITIONS),
        out(files::SCENARIO),
    ];
    write_prescriptions(&paths[0], &cohort.prescriptions).map_err(|e| CliError::write(&paths[0], e))?;
    write_diagnoses(&paths[1], &cohort.diagnoses).map_err(|e| CliError::write(&paths[1], e))?;
    synthcohort::write_ground_truth(&paths[2], &cohort.truth).map_err(|e| CliError::write(&paths[2], e))?;
    synthcohort::write_transitions(&paths[3], &cohort.truth).map_err(|e| CliError::write(&paths[3], e))?;
    std::fs::write(&paths[4], scenario.to_json() + "\n").map_err(|e| CliError::write(&paths[4], e))?;
    record_outputs(&cfg.out_dir, "simulate", &fp, &paths)?;

    Ok(SimulateSummary {
        scenario: scenario.name.clone(),
        patients: scenario.n_patients,
        prescriptions: cohort.prescriptions.len(),
        diagnoses: cohort.diagnoses.len(),
        true_onsets: cohort.truth.onsets.len(),
    })
}

// ------------------------------------------------------------------- split

#[derive(Clone, Debug, Serialize)]
pub struct SplitSummary {
    pub train: usize,
    pub test: usize,
}

/// Splits every patient seen in the prescriptions or diagnoses.
pub fn cmd_split(cfg: &PipelineConfig) -> Result<SplitSummary> {
    cfg.validate()?;
    ensure_dir(&cfg.out_dir)?;
    let rx_path = cfg.prescriptions_path();
    let dx_path = cfg.diagnoses_path();
    let rx = load_prescriptions(&rx_path)?;
    let dx = load_diagnoses(&dx_path)?;
    let mut universe: BTreeSet<PatientId> = rx.iter().map(|e| e.patient_id.clone()).collect();
    universe.extend(dx.iter().map(|d| d.patient_id.clone()));
    let (train, test) = split_patients(&universe, cfg.train_fraction, cfg.seed)
        .map_err(|e| CliError::Data(e.to_string()))?;

    let mut fp = Fingerprint::new("split");
    fp.input(&rx_path)?;
    fp.input(&dx_path)?;
    let fp = fp.finish(cfg, serde_json::Value::Null);
    let paths = [cfg.out(files::TRAIN_IDS), cfg.out(files::TEST_IDS)];
    write_ids(&paths[0], &train)?;
    write_ids(&paths[1], &test)?;
    record_outputs(&cfg.out_dir, "split", &fp, &paths)?;
    info!("split {} patients: {} train, {} test", universe.len(), train.len(), test.len());
    Ok(SplitSummary {
        train: train.len(),
        test: test.len(),
    })
}

/// Installs externally supplied id lists as the split, refusing overlaps.
pub fn install_split(cfg: &PipelineConfig, train: &Path, test: &Path) -> Result<SplitSummary> {
    ensure_dir(&cfg.out_dir)?;
    let train_ids = load_id_file(train)?;
    let test_ids = load_id_file(test)?;
    let shared = overlap(&test_ids, &train_ids);
    if !shared.is_empty() {
        return Err(leakage("test patients listed in the training ids", &shared));
    }
    let mut fp = Fingerprint::new("split");
    fp.input(train)?;
    fp.input(test)?;
    let fp = fp.finish(cfg, serde_json::Value::Null);
    let paths = [cfg.out(files::TRAIN_IDS), cfg.out(files::TEST_IDS)];
    write_ids(&paths[0], &train_ids)?;
    write_ids(&paths[1], &test_ids)?;
    record_outputs(&cfg.out_dir, "split", &fp, &paths)?;
    Ok(SplitSummary {
        train: train_ids.len(),
        test: test_ids.len(),
    })
}

// -------------------------------------------------------------- fit-params

#[derive(Clone, Debug, Serialize)]
pub struct LabelRobustness {
    pub fingerprint: String,
    pub pearson_r: Option<f64>,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub drugs: usize,
    pub pairs: Vec<LabelPairRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LabelPairRow {
    pub drug: String,
    pub regime: String,
    pub k_all: f64,
    pub k_chronic: f64,
    pub n_all: usize,
    pub n_chronic: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct FitSummary {
    pub training_patients: usize,
    pub entries: usize,
    pub fallbacks: usize,
    pub label_robustness: LabelRobustness,
}

pub fn cmd_fit_params(cfg: &PipelineConfig) -> Result<FitSummary> {
    cfg.validate()?;
    let train_path = cfg.out(files::TRAIN_IDS);
    let test_path = cfg.out(files::TEST_IDS);
    let rx_path = cfg.prescriptions_path();
    let train = load_id_file(&train_path)?;
    if cfg.leakage_guard && test_path.is_file() {
        let test = read_ids(&test_path)?;
        let shared = overlap(&test, &train);
        if !shared.is_empty() {
            return Err(leakage("test patients present in the training ids", &shared));
        }
    }
    let rx = keep_patients(load_prescriptions(&rx_path)?, &train, |e| &e.patient_id);
    let trajectories = build_trajectories(&rx);
    info!("fitting parameters on {} training trajectories", trajectories.len());
    let mut table = estimate_params(&trajectories, cfg.fit.label_filter, cfg.fit.min_intervals);
    table.set_training_patients(train.clone());

    let mut fp = Fingerprint::new("fit-params");
    fp.input(&rx_path)?;
    fp.input(&train_path)?;
    let fp = fp.finish(cfg, serde_json::Value::Null);

    let label = match compare_label_filters(&trajectories, cfg.fit.min_intervals) {
        Ok(c) => {
            let drugs: BTreeSet<&str> = c.pairs.iter().map(|p| p.drug.as_str()).collect();
            LabelRobustness {
                fingerprint: fp.clone(),
                pearson_r: Some(c.fit.pearson_r),
                slope: Some(c.fit.slope),
                intercept: Some(c.fit.intercept),
                drugs: drugs.len(),
                pairs: c
                    .pairs
                    .iter()
                    .map(|p| LabelPairRow {
                        drug: p.drug.to_string(),
                        regime: p.regime.as_str().to_string(),
                        k_all: p.k_all,
                        k_chronic: p.k_chronic,
                        n_all: p.n_all,
                        n_chronic: p.n_chronic,
                    })
                    .collect(),
                error: None,
            }
        }
        Err(e) => LabelRobustness {
            fingerprint: fp.clone(),
            pearson_r: None,
            slope: None,
            intercept: None,
            drugs: 0,
            pairs: Vec::new(),
            error: Some(e.to_string()),
        },
    };

    ensure_dir(&cfg.out_dir)?;
    let params_path = cfg.params_path();
    let label_path = cfg.out(files::LABEL_ROBUSTNESS);
    save_params(&table, &params_path, Some(&fp)).map_err(|e| CliError::write(&params_path, e))?;
    write_json(&label_path, &label)?;
    record_outputs(&cfg.out_dir, "fit-params", &fp, &[params_path, label_path])?;

    let fallbacks = table.entries().filter(|(_, _, e)| e.is_fallback()).count();
    Ok(FitSummary {
        training_patients: train.len(),
        entries: table.len(),
        fallbacks,
        label_robustness: label,
    })
}

// ------------------------------------------------------------------ detect

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DetectCohort {
    Train,
    Test,
}

impl DetectCohort {
    pub fn onsets_file(self) -> &'static str {
        match self {
            DetectCohort::Train => files::ONSETS_TRAIN,
            DetectCohort::Test => files::ONSETS_TEST,
        }
    }

    fn name(self) -> &'static str {
        match self {
            DetectCohort::Train => "train",
            DetectCohort::Test => "test",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DetectSummary {
    pub trajectories: usize,
    pub too_short: usize,
    pub scored: usize,
    pub accepted: usize,
    pub failures: usize,
}

/// Scores the trajectories of one cohort. `patients` overrides the cohort's
/// id list.
pub fn cmd_detect(
    cfg: &PipelineConfig,
    cohort: DetectCohort,
    patients: Option<&Path>,
) -> Result<DetectSummary> {
    cfg.validate()?;
    let params_path = cfg.params_path();
    require(&params_path, HINT_PARAMS)?;
    let params = load_params(&params_path).map_err(|e| CliError::Data(e.to_string()))?;
    let ids_path = match (patients, cohort) {
        (Some(p), _) => p.to_path_buf(),
        (None, DetectCohort::Train) => cfg.out(files::TRAIN_IDS),
        (None, DetectCohort::Test) => cfg.out(files::TEST_IDS),
    };
    let ids = load_id_file(&ids_path)?;
    if cfg.leakage_guard && cohort == DetectCohort::Test {
        let shared = overlap(&ids, params.training_patients());
        if !shared.is_empty() {
            return Err(leakage(
                "scoring patients that the parameters were fitted on",
                &shared,
            ));
        }
    }

    let rx_path = cfg.prescriptions_path();
    let rx = keep_patients(load_prescriptions(&rx_path)?, &ids, |e| &e.patient_id);
    let trajectories = build_trajectories(&rx);
    drop(rx);
    info!("scoring {} {} trajectories", trajectories.len(), cohort.name());
    let (onsets, report) = detect_all(&trajectories, &params, &cfg.detection)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(f) = report.failures.first() {
        warn!(
            "{} trajectories could not be scored (first: {} {}: {})",
            report.failures.len(),
            f.patient_id,
            f.drug_code,
            f.error
        );
    }

    let mut fp = Fingerprint::new("detect");
    fp.input(&rx_path)?;
    fp.input(&params_path)?;
    fp.input(&ids_path)?;
    let fp = fp.finish(cfg, serde_json::json!({ "cohort": cohort.name() }));
    ensure_dir(&cfg.out_dir)?;
    let out = cfg.out(cohort.onsets_file());
    write_onsets(&out, &onsets).map_err(|e| CliError::write(&out, e))?;
    record_outputs(&cfg.out_dir, "detect", &fp, &[out])?;

    Ok(DetectSummary {
        trajectories: report.trajectories,
        too_short: report.too_short,
        scored: report.scored,
        accepted: report.accepted,
        failures: report.failures.len(),
    })
}

// -------------------------------------------------------------- build-dict

#[derive(Clone, Debug, Serialize)]
pub struct DictSummary {
    pub icds: BTreeMap<String, usize>,
}

pub fn cmd_build_dict(cfg: &PipelineConfig) -> Result<DictSummary> {
    cfg.validate()?;
    let onsets_path = cfg.out(files::ONSETS_TRAIN);
    let train_path = cfg.out(files::TRAIN_IDS);
    let dx_path = cfg.diagnoses_path();
    require(&onsets_path, "run `rxonset detect --cohort train` first")?;
    let train = load_id_file(&train_path)?;
    let onsets = read_onsets(&onsets_path).map_err(|e| CliError::Data(e.to_string()))?;
    if cfg.leakage_guard {
        let outside: BTreeSet<PatientId> = onsets
            .iter()
            .filter(|o| !train.contains(&o.patient_id))
            .map(|o| o.patient_id.clone())
            .collect();
        if !outside.is_empty() {
            let v: Vec<&PatientId> = outside.iter().collect();
            return Err(leakage("training onsets include non-training patients", &v));
        }
    }
    let dx = keep_patients(load_diagnoses(&dx_path)?, &train, |d| &d.patient_id);
    let mut dict = build_dictionary(&onsets, &dx, &cfg.dictionary).map_err(|e| match e {
        PhenotypeError::Audit(problems) => CliError::Data(format!(
            "dictionary failed its audit: {}",
            problems.join("; ")
        )),
        other => CliError::Data(other.to_string()),
    })?;
    dict.set_training_patients(train);

    let mut fp = Fingerprint::new("build-dict");
    fp.input(&onsets_path)?;
    fp.input(&dx_path)?;
    fp.input(&train_path)?;
    let fp = fp.finish(cfg, serde_json::Value::Null);
    ensure_dir(&cfg.out_dir)?;
    let out = cfg.dict_path();
    save_dictionary(&dict, &out, Some(&fp)).map_err(|e| CliError::write(&out, e))?;
    record_outputs(&cfg.out_dir, "build-dict", &fp, &[out])?;
    if dict.is_empty() {
        warn!("the dictionary is empty");
    }
    Ok(DictSummary {
        icds: dict.icds().map(|(icd, l)| (icd.to_string(), l.len())).collect(),
    })
}

// ------------------------------------------------------------------- infer

#[derive(Clone, Debug, Serialize)]
pub struct InferSummary {
    pub counts: BTreeMap<OnsetMethod, usize>,
}

pub fn cmd_infer(cfg: &PipelineConfig) -> Result<InferSummary> {
    cfg.validate()?;
    let onsets_path = cfg.out(files::ONSETS_TEST);
    let test_path = cfg.out(files::TEST_IDS);
    let dict_path = cfg.dict_path();
    let rx_path = cfg.prescriptions_path();
    require(&onsets_path, "run `rxonset detect --cohort test` first")?;
    require(&dict_path, HINT_DICT)?;
    let test = load_id_file(&test_path)?;
    let dict = load_dictionary(&dict_path).map_err(|e| CliError::Data(e.to_string()))?;
    let onsets = read_onsets(&onsets_path).map_err(|e| CliError::Data(e.to_string()))?;
    if cfg.leakage_guard {
        let shared = overlap(&test, dict.training_patients());
        if !shared.is_empty() {
            return Err(leakage(
                "applying the dictionary to patients it was built from",
                &shared,
            ));
        }
        let outside: BTreeSet<PatientId> = onsets
            .iter()
            .filter(|o| !test.contains(&o.patient_id))
            .map(|o| o.patient_id.clone())
            .collect();
        if !outside.is_empty() {
            let v: Vec<&PatientId> = outside.iter().collect();
            return Err(leakage("test onsets include non-test patients", &v));
        }
    }
    let rx = keep_patients(load_prescriptions(&rx_path)?, &test, |e| &e.patient_id);
    let trajectories = build_trajectories(&rx);

    let mut all = infer_disease_onsets(&onsets, &dict);
    all.extend(naive_baseline(&trajectories, &dict));
    all.sort_by(|a, b| {
        (&a.patient_id, &a.icd_code, a.method).cmp(&(&b.patient_id, &b.icd_code, b.method))
    });

    let mut fp = Fingerprint::new("infer");
    fp.input(&onsets_path)?;
    fp.input(&dict_path)?;
    fp.input(&rx_path)?;
    fp.input(&test_path)?;
    let fp = fp.finish(cfg, serde_json::Value::Null);
    ensure_dir(&cfg.out_dir)?;
    let out = cfg.out(files::DISEASE_ONSETS);
    write_disease_onsets(&out, &all).map_err(|e| CliError::write(&out, e))?;
    record_outputs(&cfg.out_dir, "infer", &fp, &[out])?;
    Ok(InferSummary {
        counts: onset_counts(&all),
    })
}

// ---------------------------------------------------------------- evaluate

#[derive(Clone, Debug, Serialize)]
pub struct DensitySummary {
    pub per_icd: BTreeMap<IcdCode, f64>,
    pub r: BTreeMap<OnsetMethod, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct WindowFraction {
    pub icd: Option<IcdCode>,
    pub date: Day,
    pub days: Option<i32>,
    pub fraction: BTreeMap<OnsetMethod, Option<f64>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct TruthSummary {
    pub n: usize,
    pub median_abs_error: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalSummary {
    pub fingerprint: String,
    pub test_patients: usize,
    pub onset_counts: BTreeMap<OnsetMethod, usize>,
    pub time_differences: BTreeMap<OnsetMethod, Option<DiffSummary>>,
    pub recall: BTreeMap<IcdCode, BTreeMap<OnsetMethod, Vec<(i32, f64)>>>,
    pub density: DensitySummary,
    pub early_window: WindowFraction,
    pub pre_cutover: Option<WindowFraction>,
    pub truth: Option<BTreeMap<OnsetMethod, TruthSummary>>,
}

pub fn cmd_evaluate(cfg: &PipelineConfig) -> Result<EvalSummary> {
    cfg.validate()?;
    let onsets_path = cfg.out(files::DISEASE_ONSETS);
    let test_path = cfg.out(files::TEST_IDS);
    let dict_path = cfg.dict_path();
    let rx_path = cfg.prescriptions_path();
    let dx_path = cfg.diagnoses_path();
    require(&onsets_path, "run `rxonset infer` first")?;
    require(&dict_path, HINT_DICT)?;
    let test = load_id_file(&test_path)?;
    let dict = load_dictionary(&dict_path).map_err(|e| CliError::Data(e.to_string()))?;
    let onsets = read_disease_onsets(&onsets_path).map_err(|e| CliError::Data(e.to_string()))?;
    let all_rx = load_prescriptions(&rx_path)?;
    let window_start = match &cfg.window_start {
        Some(s) => parse_day(s, "window start")?,
        None => all_rx
            .iter()
            .map(|e| e.date)
            .min()
            .ok_or_else(|| CliError::Data(format!("{}: no prescriptions", rx_path.display())))?,
    };
    let rx = keep_patients(all_rx, &test, |e| &e.patient_id);
    let dx = keep_patients(load_diagnoses(&dx_path)?, &test, |d| &d.patient_id);

    let mut fp = Fingerprint::new("evaluate");
    fp.input(&onsets_path)?;
    fp.input(&dict_path)?;
    fp.input(&rx_path)?;
    fp.input(&dx_path)?;
    fp.input(&test_path)?;
    let truth_path = cfg.ground_truth_path();
    if let Some(p) = &truth_path {
        fp.input(p)?;
    }
    let fp = fp.finish(cfg, serde_json::Value::Null);

    let diffs = time_differences(&onsets, &dx);
    let curve = recall_at(&onsets, &dx, &cfg.deltas).map_err(|e| CliError::Data(e.to_string()))?;
    let correlation = curve
        .at(365)
        .and_then(|r365| density_recall_correlation(&r365, &rx, &dx, &dict));
    let density = match &correlation {
        Ok(c) => DensitySummary {
            per_icd: c.density.clone(),
            r: c.r.clone(),
            error: None,
        },
        Err(e) => DensitySummary {
            per_icd: BTreeMap::new(),
            r: BTreeMap::new(),
            error: Some(e.to_string()),
        },
    };
    let early_window = WindowFraction {
        icd: None,
        date: window_start,
        days: Some(cfg.early_window_days),
        fraction: early_onset_fraction(&onsets, &dx, window_start, cfg.early_window_days),
    };
    let pre_cutover = match &cfg.cutover {
        Some(c) => {
            let date = parse_day(&c.date, "cutover date")?;
            let icd = IcdCode::new(&c.icd);
            Some(WindowFraction {
                fraction: pre_cutover_fraction(&onsets, date, &icd),
                icd: Some(icd),
                date,
                days: None,
            })
        }
        None => None,
    };
    let truth = match &truth_path {
        Some(p) => {
            let t = synthcohort::read_ground_truth(p).map_err(|e| CliError::Data(e.to_string()))?;
            let t = keep_patients(t, &test, |o| &o.patient_id);
            Some(
                truth_errors(&onsets, &t)
                    .into_iter()
                    .map(|(m, errs)| {
                        (
                            m,
                            TruthSummary {
                                n: errs.len(),
                                median_abs_error: median_abs(&errs),
                            },
                        )
                    })
                    .collect(),
            )
        }
        None => None,
    };

    let summary = EvalSummary {
        fingerprint: fp.clone(),
        test_patients: test.len(),
        onset_counts: onset_counts(&onsets),
        time_differences: OnsetMethod::ALL
            .iter()
            .map(|&m| (m, DiffSummary::of(&diffs.pooled(m))))
            .collect(),
        recall: curve
            .per_icd
            .keys()
            .map(|icd| {
                let per_method = OnsetMethod::ALL
                    .iter()
                    .map(|&m| (m, curve.curve(icd, m)))
                    .collect();
                (icd.clone(), per_method)
            })
            .collect(),
        density,
        early_window,
        pre_cutover,
        truth,
    };

    ensure_dir(&cfg.out_dir)?;
    let paths = [
        cfg.out(files::TIMEDIFF),
        cfg.out(files::RECALL),
        cfg.out(files::DENSITY),
        cfg.out(files::SUMMARY),
    ];
    write_timediff_csv(&paths[0], &diffs).map_err(|e| CliError::write(&paths[0], e))?;
    write_recall_csv(&paths[1], &curve).map_err(|e| CliError::write(&paths[1], e))?;
    match &correlation {
        Ok(c) => write_density_csv(&paths[2], c).map_err(|e| CliError::write(&paths[2], e))?,
        Err(_) => {
            // Keep the file set stable: header only.
            std::fs::write(&paths[2], "icd,density,recall365_changepoint,recall365_naive\n")
                .map_err(|e| CliError::write(&paths[2], e))?
        }
    }
    write_json(&paths[3], &summary)?;
    record_outputs(&cfg.out_dir, "evaluate", &fp, &paths)?;
    Ok(summary)
}

// ---------------------------------------------------------------- pipeline

#[derive(Clone, Debug, Default)]
pub struct PipelineArgs {
    /// Simulate a cohort into the output directory first.
    pub simulate: Option<SimulateArgs>,
    pub train_ids: Option<PathBuf>,
    pub test_ids: Option<PathBuf>,
}

pub fn cmd_pipeline(cfg: &PipelineConfig, args: &PipelineArgs) -> Result<EvalSummary> {
    cfg.validate()?;
    if let Some(sim) = &args.simulate {
        cmd_simulate(sim, cfg)?;
    }
    match (&args.train_ids, &args.test_ids) {
        (Some(train), Some(test)) => install_split(cfg, train, test)?,
        (None, None) => cmd_split(cfg)?,
        _ => {
            return Err(CliError::Usage(
                "--train-ids and --test-ids must be given together".into(),
            ))
        }
    };
    cmd_fit_params(cfg)?;
    cmd_detect(cfg, DetectCohort::Train, None)?;
    cmd_build_dict(cfg)?;
    cmd_detect(cfg, DetectCohort::Test, None)?;
    cmd_infer(cfg)?;
    cmd_evaluate(cfg)
}
