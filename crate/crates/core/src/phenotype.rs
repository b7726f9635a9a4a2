//! Drug-disease dictionary learned from training onsets and diagnoses, and
//! disease-level onset inference (change-point and naive).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::changepoint::{OnsetMethod, OnsetRecord};
use crate::event_model::{Day, DiagnosisEvent, DrugCode, IcdCode, PatientId, Trajectory};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DictionaryConfig {
    /// Days before an onset in which diagnoses are associated with it.
    pub window_before_days: i32,
    /// Days after an onset in which diagnoses are associated with it.
    pub window_after_days: i32,
    /// Pairs need strictly more associated events than this.
    pub min_support: usize,
    /// Drugs need a strictly larger alignment rate than this.
    pub min_alignment_rate: f64,
    pub max_drugs_per_icd: usize,
    pub min_drugs_per_icd: usize,
    /// Count each ICD at most once per onset instead of every in-window
    /// diagnosis.
    pub dedup_per_onset: bool,
}

impl Default for DictionaryConfig {
    fn default() -> Self {
        DictionaryConfig {
            window_before_days: 90,
            window_after_days: 365,
            min_support: 25,
            min_alignment_rate: 0.05,
            max_drugs_per_icd: 30,
            min_drugs_per_icd: 10,
            dedup_per_onset: false,
        }
    }
}

impl DictionaryConfig {
    pub fn validate(&self) -> Result<(), PhenotypeError> {
        let bad = |m: &str| Err(PhenotypeError::InvalidConfig(m.to_string()));
        if self.window_before_days < 0 || self.window_after_days < 0 {
            return bad("association windows must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.min_alignment_rate) {
            return bad("min_alignment_rate must lie in [0, 1]");
        }
        if self.max_drugs_per_icd == 0 || self.min_drugs_per_icd > self.max_drugs_per_icd {
            return bad("need 0 < min_drugs_per_icd <= max_drugs_per_icd");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DictEntry {
    pub drug: DrugCode,
    /// Associated diagnosis events over all detected onsets of the drug.
    pub alignment_rate: f64,
    /// Associated diagnosis events.
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct PhenotypeDictionary {
    icds: BTreeMap<IcdCode, Vec<DictEntry>>,
    config: DictionaryConfig,
    training_patients: BTreeSet<PatientId>,
}

impl PhenotypeDictionary {
    /// Ranked drugs of `icd`, highest alignment rate first.
    pub fn drugs(&self, icd: &IcdCode) -> Option<&[DictEntry]> {
        self.icds.get(icd).map(Vec::as_slice)
    }

    pub fn icds(&self) -> impl Iterator<Item = (&IcdCode, &[DictEntry])> {
        self.icds.iter().map(|(k, v)| (k, v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.icds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.icds.is_empty()
    }

    pub fn config(&self) -> DictionaryConfig {
        self.config
    }

    pub fn training_patients(&self) -> &BTreeSet<PatientId> {
        &self.training_patients
    }

    pub fn set_training_patients(&mut self, patients: BTreeSet<PatientId>) {
        self.training_patients = patients;
    }

    /// Checks the build thresholds on every entry. Returns one message per
    /// violation.
    pub fn audit(&self) -> Result<(), Vec<String>> {
        let cfg = &self.config;
        let mut problems = Vec::new();
        for (icd, list) in &self.icds {
            if list.len() < cfg.min_drugs_per_icd || list.len() > cfg.max_drugs_per_icd {
                problems.push(format!(
                    "{icd}: {} drugs outside [{}, {}]",
                    list.len(),
                    cfg.min_drugs_per_icd,
                    cfg.max_drugs_per_icd
                ));
            }
            for e in list {
                if e.support <= cfg.min_support {
                    problems.push(format!("{icd}/{}: support {} <= {}", e.drug, e.support, cfg.min_support));
                }
                if !(e.alignment_rate > cfg.min_alignment_rate) {
                    problems.push(format!(
                        "{icd}/{}: alignment rate {} <= {}",
                        e.drug, e.alignment_rate, cfg.min_alignment_rate
                    ));
                }
            }
            if list.windows(2).any(|w| w[0].alignment_rate < w[1].alignment_rate) {
                problems.push(format!("{icd}: drugs not ranked by alignment rate"));
            }
            let unique: BTreeSet<_> = list.iter().map(|e| &e.drug).collect();
            if unique.len() != list.len() {
                problems.push(format!("{icd}: duplicate drug"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems)
        }
    }

    /// drug -> [(icd, alignment rate)], for onset aggregation.
    fn by_drug(&self) -> HashMap<&DrugCode, Vec<(&IcdCode, f64)>> {
        let mut index: HashMap<&DrugCode, Vec<(&IcdCode, f64)>> = HashMap::new();
        for (icd, list) in &self.icds {
            for e in list {
                index.entry(&e.drug).or_default().push((icd, e.alignment_rate));
            }
        }
        index
    }
}

#[derive(Debug, Error)]
pub enum PhenotypeError {
    #[error("invalid dictionary config: {0}")]
    InvalidConfig(String),
    #[error("dictionary audit failed: {}", .0.join("; "))]
    Audit(Vec<String>),
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("malformed {path}: {message}")]
    Malformed { path: String, message: String },
    #[error("dictionary file {path} has schema version {found}, expected {SCHEMA_VERSION}")]
    VersionMismatch { path: String, found: u32 },
}

/// Learns the drug-disease dictionary.
///
/// Each onset is associated with every diagnosis of the same patient dated
/// in `[onset - before, onset + after]`. A (drug, icd) pair's support is its
/// number of associated diagnosis events, and its alignment rate divides
/// that by the drug's total onset count across all ICDs. The result is
/// audited before it is returned.
pub fn build_dictionary(
    onsets: &[OnsetRecord],
    diagnoses: &[DiagnosisEvent],
    cfg: &DictionaryConfig,
) -> Result<PhenotypeDictionary, PhenotypeError> {
    cfg.validate()?;
    let mut training_patients: BTreeSet<PatientId> =
        onsets.iter().map(|o| o.patient_id.clone()).collect();
    training_patients.extend(diagnoses.iter().map(|d| d.patient_id.clone()));
    if onsets.is_empty() || diagnoses.is_empty() {
        warn!(
            "building dictionary from {} onsets and {} diagnoses: result is empty",
            onsets.len(),
            diagnoses.len()
        );
        return Ok(PhenotypeDictionary {
            icds: BTreeMap::new(),
            config: *cfg,
            training_patients,
        });
    }

    let mut dx_by_patient: HashMap<&PatientId, Vec<(Day, &IcdCode)>> = HashMap::new();
    for d in diagnoses {
        dx_by_patient.entry(&d.patient_id).or_default().push((d.date, &d.icd_code));
    }
    for list in dx_by_patient.values_mut() {
        list.sort_unstable();
    }

    let mut onset_totals: HashMap<&DrugCode, usize> = HashMap::new();
    for o in onsets {
        *onset_totals.entry(&o.drug_code).or_default() += 1;
    }

    let support: HashMap<(&DrugCode, &IcdCode), usize> = onsets
        .par_iter()
        .fold(HashMap::new, |mut acc: HashMap<(&DrugCode, &IcdCode), usize>, o| {
            let Some(dx) = dx_by_patient.get(&o.patient_id) else {
                return acc;
            };
            let lo = o.onset_date.offset(-cfg.window_before_days);
            let hi = o.onset_date.offset(cfg.window_after_days);
            let start = dx.partition_point(|(d, _)| *d < lo);
            let window = dx[start..].iter().take_while(|(d, _)| *d <= hi);
            if cfg.dedup_per_onset {
                let icds: BTreeSet<&IcdCode> = window.map(|(_, icd)| *icd).collect();
                for icd in icds {
                    *acc.entry((&o.drug_code, icd)).or_default() += 1;
                }
            } else {
                for (_, icd) in window {
                    *acc.entry((&o.drug_code, *icd)).or_default() += 1;
                }
            }
            acc
        })
        .reduce(HashMap::new, |mut a, b| {
            for (k, v) in b {
                *a.entry(k).or_default() += v;
            }
            a
        });

    let mut candidates: BTreeMap<IcdCode, Vec<DictEntry>> = BTreeMap::new();
    for ((drug, icd), n) in support {
        if n <= cfg.min_support {
            continue;
        }
        let rate = n as f64 / onset_totals[drug] as f64;
        if rate > cfg.min_alignment_rate {
            candidates.entry(icd.clone()).or_default().push(DictEntry {
                drug: drug.clone(),
                alignment_rate: rate,
                support: n,
            });
        }
    }

    let mut icds = BTreeMap::new();
    for (icd, mut list) in candidates {
        list.sort_by(|a, b| {
            b.alignment_rate
                .total_cmp(&a.alignment_rate)
                .then(b.support.cmp(&a.support))
                .then_with(|| a.drug.cmp(&b.drug))
        });
        list.truncate(cfg.max_drugs_per_icd);
        if list.len() >= cfg.min_drugs_per_icd {
            icds.insert(icd, list);
        }
    }
    let dict = PhenotypeDictionary {
        icds,
        config: *cfg,
        training_patients,
    };
    dict.audit().map_err(PhenotypeError::Audit)?;
    Ok(dict)
}

/// Disease-level treated-phenotype onset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiseaseOnset {
    pub patient_id: PatientId,
    pub icd_code: IcdCode,
    pub onset_date: Day,
    pub source_drug: DrugCode,
    pub method: OnsetMethod,
}

/// Assigns each (patient, icd) the earliest drug onset among the ICD's
/// listed drugs. Equal dates go to the higher alignment rate, then the
/// smaller drug code. The method is taken from the drug-level records.
pub fn infer_disease_onsets(onsets: &[OnsetRecord], dict: &PhenotypeDictionary) -> Vec<DiseaseOnset> {
    let index = dict.by_drug();
    // (patient, icd, method) -> (date, -rate, drug)
    let mut best: BTreeMap<(&PatientId, &IcdCode, OnsetMethod), (Day, f64, &DrugCode)> = BTreeMap::new();
    for o in onsets {
        let Some(icds) = index.get(&o.drug_code) else {
            continue;
        };
        for &(icd, rate) in icds {
            let cand = (o.onset_date, rate, &o.drug_code);
            best.entry((&o.patient_id, icd, o.method))
                .and_modify(|cur| {
                    let better = cand
                        .0
                        .cmp(&cur.0)
                        .then(cur.1.total_cmp(&cand.1))
                        .then_with(|| cand.2.cmp(cur.2))
                        .is_lt();
                    if better {
                        *cur = cand;
                    }
                })
                .or_insert(cand);
        }
    }
    best.into_iter()
        .map(|((patient, icd, method), (date, _, drug))| DiseaseOnset {
            patient_id: patient.clone(),
            icd_code: icd.clone(),
            onset_date: date,
            source_drug: drug.clone(),
            method,
        })
        .collect()
}

/// First chronically labeled prescription of each trajectory, as a
/// drug-level onset.
pub fn naive_drug_onsets(trajectories: &[Trajectory]) -> Vec<OnsetRecord> {
    trajectories
        .iter()
        .filter_map(|t| {
            let first = t.events().iter().find(|e| e.chronic_label)?;
            Some(OnsetRecord {
                patient_id: t.patient_id.clone(),
                drug_code: t.drug_code.clone(),
                onset_date: first.date,
                margin: None,
                method: OnsetMethod::Naive,
            })
        })
        .collect()
}

/// Naive baseline: the first chronically labeled prescription of any of
/// the ICD's listed drugs. One prescription is enough.
pub fn naive_baseline(trajectories: &[Trajectory], dict: &PhenotypeDictionary) -> Vec<DiseaseOnset> {
    infer_disease_onsets(&naive_drug_onsets(trajectories), dict)
}

#[derive(Serialize, Deserialize)]
struct DictFile {
    schema_version: u32,
    config: DictionaryConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fingerprint: Option<String>,
    training_patients: Vec<PatientId>,
    icds: BTreeMap<IcdCode, Vec<DictEntry>>,
}

#[derive(Deserialize)]
struct VersionProbe {
    schema_version: u32,
}

pub fn save_dictionary(
    dict: &PhenotypeDictionary,
    path: &Path,
    fingerprint: Option<&str>,
) -> Result<(), PhenotypeError> {
    let file = DictFile {
        schema_version: SCHEMA_VERSION,
        config: dict.config,
        fingerprint: fingerprint.map(str::to_string),
        training_patients: dict.training_patients.iter().cloned().collect(),
        icds: dict.icds.clone(),
    };
    let json = serde_json::to_string_pretty(&file).expect("dictionary serializes");
    fs::write(path, json + "\n").map_err(|source| PhenotypeError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads a dictionary file and re-runs the audit on it.
pub fn load_dictionary(path: &Path) -> Result<PhenotypeDictionary, PhenotypeError> {
    let p = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| PhenotypeError::Io {
        path: p.clone(),
        source,
    })?;
    let malformed = |message: String| PhenotypeError::Malformed {
        path: p.clone(),
        message,
    };
    let probe: VersionProbe = serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;
    if probe.schema_version != SCHEMA_VERSION {
        return Err(PhenotypeError::VersionMismatch {
            path: p.clone(),
            found: probe.schema_version,
        });
    }
    let file: DictFile = serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;
    let dict = PhenotypeDictionary {
        icds: file.icds,
        config: file.config,
        training_patients: file.training_patients.into_iter().collect(),
    };
    dict.audit().map_err(PhenotypeError::Audit)?;
    Ok(dict)
}

/// Writes `patient_id,icd,onset_date,source_drug,method`.
pub fn write_disease_onsets(path: &Path, onsets: &[DiseaseOnset]) -> Result<(), PhenotypeError> {
    let p = || path.display().to_string();
    let file = File::create(path).map_err(|source| PhenotypeError::Io { path: p(), source })?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let e = |source| PhenotypeError::Csv { path: p(), source };
    w.write_record(["patient_id", "icd", "onset_date", "source_drug", "method"])
        .map_err(e)?;
    for o in onsets {
        let date = o.onset_date.to_string();
        w.write_record([
            o.patient_id.as_str(),
            o.icd_code.as_str(),
            &date,
            o.source_drug.as_str(),
            o.method.as_str(),
        ])
        .map_err(e)?;
    }
    w.flush().map_err(|source| PhenotypeError::Io { path: p(), source })
}

pub fn read_disease_onsets(path: &Path) -> Result<Vec<DiseaseOnset>, PhenotypeError> {
    let p = || path.display().to_string();
    let mut reader = csv::Reader::from_path(path).map_err(|source| PhenotypeError::Csv { path: p(), source })?;
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|source| PhenotypeError::Csv { path: p(), source })?;
        let line = row.position().map_or(0, |pos| pos.line());
        let bad = |m: String| PhenotypeError::Malformed {
            path: p(),
            message: format!("line {line}: {m}"),
        };
        if row.len() != 5 {
            return Err(bad(format!("expected 5 fields, got {}", row.len())));
        }
        out.push(DiseaseOnset {
            patient_id: PatientId::new(&row[0]),
            icd_code: IcdCode::new(&row[1]),
            onset_date: Day::parse_iso(&row[2]).ok_or_else(|| bad(format!("invalid date `{}`", &row[2])))?,
            source_drug: DrugCode::new(&row[3]),
            method: OnsetMethod::parse(&row[4]).ok_or_else(|| bad(format!("unknown method `{}`", &row[4])))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_model::RxMark;
    use proptest::prelude::*;

    fn onset(p: &str, drug: &str, day: i32) -> OnsetRecord {
        OnsetRecord {
            patient_id: p.into(),
            drug_code: drug.into(),
            onset_date: Day(day),
            margin: Some(1.0),
            method: OnsetMethod::Changepoint,
        }
    }

    fn dx(p: &str, icd: &str, day: i32) -> DiagnosisEvent {
        DiagnosisEvent {
            patient_id: p.into(),
            icd_code: icd.into(),
            date: Day(day),
        }
    }

    /// `n_onsets` onsets of `drug` at day 1000, the first `n_aligned` of
    /// which have one `icd` diagnosis 10 days later.
    fn cohort(drug: &str, icd: &str, n_onsets: usize, n_aligned: usize, on: &mut Vec<OnsetRecord>, dg: &mut Vec<DiagnosisEvent>) {
        for i in 0..n_onsets {
            let p = format!("{drug}-{i}");
            on.push(onset(&p, drug, 1000));
            if i < n_aligned {
                dg.push(dx(&p, icd, 1010));
            }
        }
    }

    fn ten_drug_dictionary(first_aligned: usize) -> (Vec<OnsetRecord>, Vec<DiagnosisEvent>) {
        let (mut on, mut dg) = (vec![], vec![]);
        cohort("D00", "E11", 100, first_aligned, &mut on, &mut dg);
        for d in 1..10 {
            cohort(&format!("D{d:02}"), "E11", 100, 40 + d, &mut on, &mut dg);
        }
        (on, dg)
    }

    #[test]
    fn alignment_rate_is_support_over_onsets() {
        let (on, dg) = ten_drug_dictionary(30);
        let dict = build_dictionary(&on, &dg, &DictionaryConfig::default()).unwrap();
        let list = dict.drugs(&"E11".into()).unwrap();
        assert_eq!(list.len(), 10);
        let d0 = list.iter().find(|e| e.drug.as_str() == "D00").unwrap();
        assert_eq!(d0.alignment_rate, 0.30);
        assert_eq!(d0.support, 30);
        assert_eq!(list[0].drug.as_str(), "D09");
        assert_eq!(list.last().unwrap().drug.as_str(), "D00");
    }

    #[test]
    fn support_threshold_is_strict() {
        let (on, dg) = ten_drug_dictionary(26);
        let dict = build_dictionary(&on, &dg, &DictionaryConfig::default()).unwrap();
        assert_eq!(dict.drugs(&"E11".into()).unwrap().len(), 10);

        let (on, dg) = ten_drug_dictionary(25);
        let dict = build_dictionary(&on, &dg, &DictionaryConfig::default()).unwrap();
        assert!(dict.drugs(&"E11".into()).is_none());
    }

    #[test]
    fn alignment_threshold_is_strict() {
        let (mut on, dg) = ten_drug_dictionary(30);
        // 600 onsets of D00 make its rate 30/600 = 0.05 exactly.
        for i in 100..600 {
            on.push(onset(&format!("D00-{i}"), "D00", 1000));
        }
        let dict = build_dictionary(&on, &dg, &DictionaryConfig::default()).unwrap();
        assert!(dict.drugs(&"E11".into()).is_none());
    }

    #[test]
    fn window_bounds_are_inclusive() {
        let (mut on, mut dg) = (vec![], vec![]);
        for d in 0..10 {
            let drug = format!("W{d}");
            for i in 0..40 {
                let p = format!("{drug}-{i}");
                on.push(onset(&p, &drug, 1000));
                dg.push(dx(&p, "I10", 1000 - 90));
                dg.push(dx(&p, "I10", 1000 + 365));
                dg.push(dx(&p, "J45", 1000 - 91));
                dg.push(dx(&p, "J45", 1000 + 366));
            }
        }
        let dict = build_dictionary(&on, &dg, &DictionaryConfig::default()).unwrap();
        let list = dict.drugs(&"I10".into()).unwrap();
        assert!(list.iter().all(|e| e.support == 80 && e.alignment_rate == 2.0));
        assert!(dict.drugs(&"J45".into()).is_none());

        let dedup = DictionaryConfig {
            dedup_per_onset: true,
            ..Default::default()
        };
        let dict = build_dictionary(&on, &dg, &dedup).unwrap();
        assert!(dict.drugs(&"I10".into()).unwrap().iter().all(|e| e.support == 40));
    }

    #[test]
    fn nine_drugs_drop_the_icd_and_thirty_is_the_cap() {
        let (mut on, mut dg) = (vec![], vec![]);
        for d in 0..9 {
            cohort(&format!("A{d:02}"), "K50", 100, 50, &mut on, &mut dg);
        }
        for d in 0..35 {
            cohort(&format!("B{d:02}"), "M05", 100, 30 + d, &mut on, &mut dg);
        }
        let dict = build_dictionary(&on, &dg, &DictionaryConfig::default()).unwrap();
        assert!(dict.drugs(&"K50".into()).is_none());
        let m05 = dict.drugs(&"M05".into()).unwrap();
        assert_eq!(m05.len(), 30);
        assert_eq!(m05[0].drug.as_str(), "B34");
        assert_eq!(m05[29].drug.as_str(), "B05");
    }

    #[test]
    fn empty_inputs_give_empty_dictionary() {
        let (on, dg) = ten_drug_dictionary(30);
        assert!(build_dictionary(&[], &dg, &DictionaryConfig::default()).unwrap().is_empty());
        assert!(build_dictionary(&on, &[], &DictionaryConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn audit_flags_violations() {
        let (on, dg) = ten_drug_dictionary(30);
        let mut dict = build_dictionary(&on, &dg, &DictionaryConfig::default()).unwrap();
        assert!(dict.audit().is_ok());
        let list = dict.icds.get_mut(&IcdCode::new("E11")).unwrap();
        list[0].support = 25;
        list.pop();
        let problems = dict.audit().unwrap_err();
        assert_eq!(problems.len(), 2, "{problems:?}");
    }

    fn small_dict(entries: &[(&str, &str, f64)]) -> PhenotypeDictionary {
        let mut icds: BTreeMap<IcdCode, Vec<DictEntry>> = BTreeMap::new();
        for &(icd, drug, rate) in entries {
            icds.entry(icd.into()).or_default().push(DictEntry {
                drug: drug.into(),
                alignment_rate: rate,
                support: 100,
            });
        }
        PhenotypeDictionary {
            icds,
            config: DictionaryConfig::default(),
            training_patients: BTreeSet::new(),
        }
    }

    #[test]
    fn disease_onset_is_earliest_listed_drug() {
        let dict = small_dict(&[("E11", "A", 0.4), ("E11", "B", 0.2), ("I10", "C", 0.3)]);
        let onsets = vec![onset("p1", "A", 500), onset("p1", "B", 300), onset("p2", "Z", 10)];
        let got = infer_disease_onsets(&onsets, &dict);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].onset_date, Day(300));
        assert_eq!(got[0].source_drug.as_str(), "B");
        assert_eq!(got[0].icd_code.as_str(), "E11");
    }

    #[test]
    fn date_ties_prefer_higher_alignment_then_code() {
        let dict = small_dict(&[("E11", "B", 0.4), ("E11", "A", 0.2), ("E11", "C", 0.4)]);
        let onsets = vec![onset("p1", "A", 300), onset("p1", "C", 300), onset("p1", "B", 300)];
        let got = infer_disease_onsets(&onsets, &dict);
        assert_eq!(got[0].source_drug.as_str(), "B");
        let got = infer_disease_onsets(&onsets[..1], &dict);
        assert_eq!(got[0].source_drug.as_str(), "A");
    }

    fn traj(p: &str, drug: &str, marks: &[(i32, bool)]) -> Trajectory {
        Trajectory::from_marks(
            p.into(),
            drug.into(),
            marks
                .iter()
                .map(|&(d, c)| RxMark {
                    date: Day(d),
                    chronic_label: c,
                    renewable: false,
                })
                .collect(),
        )
    }

    #[test]
    fn naive_takes_first_chronic_label() {
        let dict = small_dict(&[("E11", "A", 0.4), ("E11", "B", 0.2)]);
        let ts = vec![
            traj("p1", "A", &[(10, false), (42, true), (90, true)]),
            traj("p1", "B", &[(50, true)]),
            traj("p2", "A", &[(10, false), (20, false)]),
        ];
        let got = naive_baseline(&ts, &dict);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].onset_date, Day(42));
        assert_eq!(got[0].method, OnsetMethod::Naive);
    }

    #[test]
    fn dictionary_and_onset_files_round_trip() {
        let (on, dg) = ten_drug_dictionary(30);
        let dict = build_dictionary(&on, &dg, &DictionaryConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.json");
        let b = dir.path().join("b.json");
        save_dictionary(&dict, &a, Some("abc")).unwrap();
        let rebuilt = build_dictionary(&on, &dg, &DictionaryConfig::default()).unwrap();
        save_dictionary(&rebuilt, &b, Some("abc")).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        assert_eq!(load_dictionary(&a).unwrap(), dict);

        let onsets = infer_disease_onsets(&on, &dict);
        let csv = dir.path().join("d.csv");
        write_disease_onsets(&csv, &onsets).unwrap();
        assert_eq!(read_disease_onsets(&csv).unwrap(), onsets);
    }

    #[test]
    fn tampered_dictionary_fails_audit_on_load() {
        let dict = small_dict(&[("E11", "A", 0.4)]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.json");
        save_dictionary(&dict, &path, None).unwrap();
        assert!(matches!(load_dictionary(&path), Err(PhenotypeError::Audit(_))));
    }

    proptest! {
        #[test]
        fn built_dictionaries_pass_audit(
            spec in prop::collection::vec((0usize..40, 0usize..4, 20usize..80, 0usize..80), 1..60),
            dedup in any::<bool>(),
        ) {
            let (mut on, mut dg) = (vec![], vec![]);
            for (i, &(drug, icd, n, aligned)) in spec.iter().enumerate() {
                for j in 0..n {
                    let p = format!("p{i}-{j}");
                    on.push(onset(&p, &format!("D{drug}"), 2000));
                    if j < aligned {
                        dg.push(dx(&p, &format!("X{icd}"), 2000 + (j as i32 % 500) - 100));
                        if j % 3 == 0 {
                            dg.push(dx(&p, &format!("X{icd}"), 2100));
                        }
                    }
                }
            }
            let cfg = DictionaryConfig { dedup_per_onset: dedup, ..Default::default() };
            let dict = build_dictionary(&on, &dg, &cfg).unwrap();
            prop_assert!(dict.audit().is_ok());
        }

        #[test]
        fn naive_precedes_every_first_chronic_label(
            trajs in prop::collection::vec(
                (0usize..5, 0usize..4, prop::collection::vec((0i32..2000, any::<bool>()), 1..12)),
                1..30,
            ),
        ) {
            let dict = small_dict(&[("E11", "D0", 0.4), ("E11", "D1", 0.3), ("E11", "D2", 0.2), ("I10", "D3", 0.3)]);
            let mut seen = BTreeSet::new();
            let ts: Vec<Trajectory> = trajs
                .iter()
                .filter(|(p, d, _)| seen.insert((*p, *d)))
                .map(|(p, d, m)| traj(&format!("p{p}"), &format!("D{d}"), m))
                .collect();
            let naive = naive_baseline(&ts, &dict);
            for n in &naive {
                for t in ts.iter().filter(|t| t.patient_id == n.patient_id) {
                    let listed = dict.drugs(&n.icd_code).unwrap().iter().any(|e| e.drug == t.drug_code);
                    if let (true, Some(first)) = (listed, t.events().iter().find(|e| e.chronic_label)) {
                        prop_assert!(n.onset_date <= first.date);
                    }
                }
            }
        }
    }
}
