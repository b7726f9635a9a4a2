//! Evaluation against recorded diagnoses: diagnosis-minus-onset
//! differences, recall under a symmetric tolerance window, the
//! density-recall association and temporal sanity checks.
//!
//! The reference diagnosis of a (patient, icd) pair is its earliest
//! recorded diagnosis. Only ICDs that appear in the evaluated onsets are
//! scored. Recall is measured against recorded diagnoses only, so it is a
//! lower bound on coverage.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::changepoint::OnsetMethod;
use crate::event_model::{Day, DiagnosisEvent, IcdCode, PatientId, PrescriptionEvent};
use crate::numeric::{linear_fit, mean, median, quantile};
use crate::phenotype::{DiseaseOnset, PhenotypeDictionary};
use crate::synthcohort::TrueOnset;

pub const DEFAULT_DELTAS: [i32; 6] = [30, 60, 90, 180, 365, 730];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("tolerance windows must be positive and strictly increasing: {0:?}")]
    InvalidDeltas(Vec<i32>),
    #[error("density-recall correlation needs at least 3 ICDs, got {0}")]
    TooFewIcds(usize),
    #[error("density-recall correlation undefined for {0}: zero variance")]
    UndefinedCorrelation(OnsetMethod),
    #[error("no recall computed at delta {0}")]
    MissingDelta(i32),
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

type PairKey = (PatientId, IcdCode);

/// Earliest recorded diagnosis per (patient, icd).
pub fn reference_diagnoses(diagnoses: &[DiagnosisEvent]) -> BTreeMap<PairKey, Day> {
    let mut out: BTreeMap<PairKey, Day> = BTreeMap::new();
    for d in diagnoses {
        out.entry((d.patient_id.clone(), d.icd_code.clone()))
            .and_modify(|cur| *cur = (*cur).min(d.date))
            .or_insert(d.date);
    }
    out
}

/// Earliest onset per (patient, icd) for each method.
fn onset_index(onsets: &[DiseaseOnset]) -> HashMap<OnsetMethod, HashMap<PairKey, Day>> {
    let mut out: HashMap<OnsetMethod, HashMap<PairKey, Day>> = HashMap::new();
    for o in onsets {
        out.entry(o.method)
            .or_default()
            .entry((o.patient_id.clone(), o.icd_code.clone()))
            .and_modify(|cur| *cur = (*cur).min(o.onset_date))
            .or_insert(o.onset_date);
    }
    out
}

fn scored_icds(onsets: &[DiseaseOnset]) -> BTreeSet<IcdCode> {
    onsets.iter().map(|o| o.icd_code.clone()).collect()
}

/// Diagnosed pairs grouped by ICD, restricted to scored ICDs.
fn diagnosed_by_icd(
    reference: &BTreeMap<PairKey, Day>,
    icds: &BTreeSet<IcdCode>,
) -> BTreeMap<IcdCode, Vec<(PatientId, Day)>> {
    let mut out: BTreeMap<IcdCode, Vec<(PatientId, Day)>> =
        icds.iter().map(|i| (i.clone(), Vec::new())).collect();
    for ((p, icd), &day) in reference {
        if let Some(v) = out.get_mut(icd) {
            v.push((p.clone(), day));
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DiffSummary {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

impl DiffSummary {
    pub fn of(values: &[i32]) -> Option<DiffSummary> {
        let v: Vec<f64> = values.iter().map(|&d| f64::from(d)).collect();
        Some(DiffSummary {
            n: v.len(),
            mean: mean(&v)?,
            median: median(&v)?,
            q1: quantile(&v, 0.25)?,
            q3: quantile(&v, 0.75)?,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TimeDiffGroup {
    /// (patient, diagnosis date - onset date in days), by patient.
    pub samples: Vec<(PatientId, i32)>,
    /// Diagnosed pairs without an onset from this method.
    pub unmatched: usize,
}

impl TimeDiffGroup {
    pub fn values(&self) -> Vec<i32> {
        self.samples.iter().map(|s| s.1).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TimeDiffStats {
    pub groups: BTreeMap<(IcdCode, OnsetMethod), TimeDiffGroup>,
}

impl TimeDiffStats {
    pub fn group(&self, icd: &IcdCode, method: OnsetMethod) -> Option<&TimeDiffGroup> {
        self.groups.get(&(icd.clone(), method))
    }

    /// All differences of one method across ICDs.
    pub fn pooled(&self, method: OnsetMethod) -> Vec<i32> {
        self.groups
            .iter()
            .filter(|((_, m), _)| *m == method)
            .flat_map(|(_, g)| g.values())
            .collect()
    }
}

/// Diagnosis-minus-onset differences, one per diagnosed pair that has an
/// onset. Negative values mean the onset precedes the diagnosis.
pub fn time_differences(onsets: &[DiseaseOnset], diagnoses: &[DiagnosisEvent]) -> TimeDiffStats {
    let reference = reference_diagnoses(diagnoses);
    let by_icd = diagnosed_by_icd(&reference, &scored_icds(onsets));
    let index = onset_index(onsets);
    let empty = HashMap::new();
    let mut stats = TimeDiffStats::default();
    for (icd, pairs) in by_icd {
        for method in OnsetMethod::ALL {
            let found = index.get(&method).unwrap_or(&empty);
            let mut group = TimeDiffGroup::default();
            for (p, dx) in &pairs {
                match found.get(&(p.clone(), icd.clone())) {
                    Some(onset) => group.samples.push((p.clone(), dx.days_since(*onset))),
                    None => group.unmatched += 1,
                }
            }
            stats.groups.insert((icd.clone(), method), group);
        }
    }
    stats
}

#[derive(Clone, Debug, PartialEq)]
pub struct IcdRecall {
    pub n_diagnosed: usize,
    /// Per method, detections within each delta of the grid.
    pub hits: BTreeMap<OnsetMethod, Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecallCurve {
    pub deltas: Vec<i32>,
    pub per_icd: BTreeMap<IcdCode, IcdRecall>,
}

impl RecallCurve {
    pub fn recall(&self, icd: &IcdCode, method: OnsetMethod, delta: i32) -> Option<f64> {
        let j = self.deltas.iter().position(|&d| d == delta)?;
        let r = self.per_icd.get(icd)?;
        Some(r.hits.get(&method)?[j] as f64 / r.n_diagnosed as f64)
    }

    pub fn curve(&self, icd: &IcdCode, method: OnsetMethod) -> Vec<(i32, f64)> {
        self.deltas
            .iter()
            .filter_map(|&d| Some((d, self.recall(icd, method, d)?)))
            .collect()
    }

    /// Recall at `delta` for every ICD and method.
    pub fn at(&self, delta: i32) -> Result<BTreeMap<IcdCode, BTreeMap<OnsetMethod, f64>>, EvalError> {
        if !self.deltas.contains(&delta) {
            return Err(EvalError::MissingDelta(delta));
        }
        Ok(self
            .per_icd
            .keys()
            .map(|icd| {
                let per_method = OnsetMethod::ALL
                    .iter()
                    .filter_map(|&m| Some((m, self.recall(icd, m, delta)?)))
                    .collect();
                (icd.clone(), per_method)
            })
            .collect())
    }
}

pub fn validate_deltas(deltas: &[i32]) -> Result<(), EvalError> {
    if deltas.is_empty() || deltas[0] <= 0 || deltas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EvalError::InvalidDeltas(deltas.to_vec()));
    }
    Ok(())
}

/// Per ICD, the fraction of diagnosed patients whose onset lies within
/// `±Δ` days of the reference diagnosis. ICDs without diagnosed patients
/// are left out.
pub fn recall_at(
    onsets: &[DiseaseOnset],
    diagnoses: &[DiagnosisEvent],
    deltas: &[i32],
) -> Result<RecallCurve, EvalError> {
    validate_deltas(deltas)?;
    let reference = reference_diagnoses(diagnoses);
    let by_icd = diagnosed_by_icd(&reference, &scored_icds(onsets));
    let index = onset_index(onsets);
    let empty = HashMap::new();
    let per_icd = by_icd
        .into_par_iter()
        .filter_map(|(icd, pairs)| {
            if pairs.is_empty() {
                warn!("{icd}: no diagnosed patients; excluded from recall");
                return None;
            }
            let hits = OnsetMethod::ALL
                .iter()
                .map(|&m| {
                    let found = index.get(&m).unwrap_or(&empty);
                    let counts = deltas
                        .iter()
                        .map(|&delta| {
                            pairs
                                .iter()
                                .filter(|(p, dx)| {
                                    found
                                        .get(&(p.clone(), icd.clone()))
                                        .is_some_and(|o| dx.days_since(*o).abs() <= delta)
                                })
                                .count()
                        })
                        .collect();
                    (m, counts)
                })
                .collect();
            Some((
                icd,
                IcdRecall {
                    n_diagnosed: pairs.len(),
                    hits,
                },
            ))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect();
    Ok(RecallCurve {
        deltas: deltas.to_vec(),
        per_icd,
    })
}

/// Median number of prescriptions of the ICD's listed drugs per diagnosed
/// patient, counting patients with none as zero.
pub fn prescription_density(
    prescriptions: &[PrescriptionEvent],
    diagnoses: &[DiagnosisEvent],
    dict: &PhenotypeDictionary,
) -> BTreeMap<IcdCode, f64> {
    let mut counts: HashMap<(&PatientId, &str), usize> = HashMap::new();
    for e in prescriptions {
        *counts.entry((&e.patient_id, e.drug_code.as_str())).or_default() += 1;
    }
    let reference = reference_diagnoses(diagnoses);
    let mut out = BTreeMap::new();
    for (icd, drugs) in dict.icds() {
        let per_patient: Vec<f64> = reference
            .keys()
            .filter(|(_, i)| i == icd)
            .map(|(p, _)| {
                drugs
                    .iter()
                    .map(|d| counts.get(&(p, d.drug.as_str())).copied().unwrap_or(0))
                    .sum::<usize>() as f64
            })
            .collect();
        if let Some(m) = median(&per_patient) {
            out.insert(icd.clone(), m);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityCorrelation {
    pub density: BTreeMap<IcdCode, f64>,
    pub recall: BTreeMap<IcdCode, BTreeMap<OnsetMethod, f64>>,
    /// Pearson r between density and recall, per method.
    pub r: BTreeMap<OnsetMethod, f64>,
}

/// Pearson correlation between prescription density and recall across
/// ICDs present in both `recall` and the dictionary.
pub fn density_recall_correlation(
    recall: &BTreeMap<IcdCode, BTreeMap<OnsetMethod, f64>>,
    prescriptions: &[PrescriptionEvent],
    diagnoses: &[DiagnosisEvent],
    dict: &PhenotypeDictionary,
) -> Result<DensityCorrelation, EvalError> {
    let mut density = prescription_density(prescriptions, diagnoses, dict);
    density.retain(|icd, _| recall.contains_key(icd));
    let recall: BTreeMap<_, _> = recall
        .iter()
        .filter(|(icd, _)| density.contains_key(*icd))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    if density.len() < 3 {
        return Err(EvalError::TooFewIcds(density.len()));
    }
    let x: Vec<f64> = density.values().copied().collect();
    let mut r = BTreeMap::new();
    for m in OnsetMethod::ALL {
        let y: Vec<f64> = recall.values().map(|v| v.get(&m).copied().unwrap_or(0.0)).collect();
        let fit = linear_fit(&x, &y).ok_or(EvalError::UndefinedCorrelation(m))?;
        r.insert(m, fit.pearson_r);
    }
    Ok(DensityCorrelation { density, recall, r })
}

/// Fraction of one ICD's onsets dated before `cutover`, per method;
/// `None` when a method has no onsets for the ICD.
pub fn pre_cutover_fraction(
    onsets: &[DiseaseOnset],
    cutover: Day,
    icd: &IcdCode,
) -> BTreeMap<OnsetMethod, Option<f64>> {
    OnsetMethod::ALL
        .iter()
        .map(|&m| {
            let dates: Vec<Day> = onsets
                .iter()
                .filter(|o| o.method == m && &o.icd_code == icd)
                .map(|o| o.onset_date)
                .collect();
            let frac = (!dates.is_empty())
                .then(|| dates.iter().filter(|&&d| d < cutover).count() as f64 / dates.len() as f64);
            (m, frac)
        })
        .collect()
}

/// Among diagnosed pairs with an onset, the fraction whose onset falls in
/// `[window_start, window_start + days)`, per method.
pub fn early_onset_fraction(
    onsets: &[DiseaseOnset],
    diagnoses: &[DiagnosisEvent],
    window_start: Day,
    days: i32,
) -> BTreeMap<OnsetMethod, Option<f64>> {
    let reference = reference_diagnoses(diagnoses);
    let index = onset_index(onsets);
    let end = window_start.offset(days);
    OnsetMethod::ALL
        .iter()
        .map(|&m| {
            let matched: Vec<Day> = index
                .get(&m)
                .map(|found| {
                    reference
                        .keys()
                        .filter_map(|k| found.get(k).copied())
                        .collect()
                })
                .unwrap_or_default();
            let frac = (!matched.is_empty()).then(|| {
                matched.iter().filter(|&&d| d >= window_start && d < end).count() as f64
                    / matched.len() as f64
            });
            (m, frac)
        })
        .collect()
}

/// Inferred minus true onset in days, per method, over pairs present in
/// both.
pub fn truth_errors(onsets: &[DiseaseOnset], truth: &[TrueOnset]) -> BTreeMap<OnsetMethod, Vec<i32>> {
    let truth: HashMap<PairKey, Day> = truth
        .iter()
        .map(|t| ((t.patient_id.clone(), t.icd_code.clone()), t.onset_date))
        .collect();
    let index = onset_index(onsets);
    OnsetMethod::ALL
        .iter()
        .map(|&m| {
            let mut errs: Vec<(PairKey, i32)> = index
                .get(&m)
                .map(|found| {
                    found
                        .iter()
                        .filter_map(|(k, d)| Some((k.clone(), d.days_since(*truth.get(k)?))))
                        .collect()
                })
                .unwrap_or_default();
            errs.sort();
            (m, errs.into_iter().map(|e| e.1).collect())
        })
        .collect()
}

/// Median absolute value.
pub fn median_abs(values: &[i32]) -> Option<f64> {
    let v: Vec<f64> = values.iter().map(|&x| f64::from(x.unsigned_abs())).collect();
    median(&v)
}

pub fn onset_counts(onsets: &[DiseaseOnset]) -> BTreeMap<OnsetMethod, usize> {
    let mut out: BTreeMap<OnsetMethod, usize> = OnsetMethod::ALL.iter().map(|&m| (m, 0)).collect();
    for o in onsets {
        *out.entry(o.method).or_default() += 1;
    }
    out
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, EvalError> {
    let file = File::create(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn finish(path: &Path, mut w: csv::Writer<BufWriter<File>>) -> Result<(), EvalError> {
    w.flush().map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// `icd,method,patient_id,diff_days`
pub fn write_timediff_csv(path: &Path, stats: &TimeDiffStats) -> Result<(), EvalError> {
    let mut w = csv_writer(path)?;
    let e = |source| EvalError::Csv {
        path: path.display().to_string(),
        source,
    };
    w.write_record(["icd", "method", "patient_id", "diff_days"]).map_err(e)?;
    for ((icd, method), g) in &stats.groups {
        for (p, d) in &g.samples {
            w.write_record([icd.as_str(), method.as_str(), p.as_str(), &d.to_string()])
                .map_err(e)?;
        }
    }
    finish(path, w)
}

/// `icd,method,delta,recall,n_diagnosed`
pub fn write_recall_csv(path: &Path, curve: &RecallCurve) -> Result<(), EvalError> {
    let mut w = csv_writer(path)?;
    let e = |source| EvalError::Csv {
        path: path.display().to_string(),
        source,
    };
    w.write_record(["icd", "method", "delta", "recall", "n_diagnosed"]).map_err(e)?;
    for (icd, r) in &curve.per_icd {
        for method in OnsetMethod::ALL {
            for (delta, recall) in curve.curve(icd, method) {
                w.write_record([
                    icd.as_str(),
                    method.as_str(),
                    &delta.to_string(),
                    &recall.to_string(),
                    &r.n_diagnosed.to_string(),
                ])
                .map_err(e)?;
            }
        }
    }
    finish(path, w)
}

/// `icd,density,recall365_changepoint,recall365_naive`
pub fn write_density_csv(path: &Path, corr: &DensityCorrelation) -> Result<(), EvalError> {
    let mut w = csv_writer(path)?;
    let e = |source| EvalError::Csv {
        path: path.display().to_string(),
        source,
    };
    w.write_record(["icd", "density", "recall365_changepoint", "recall365_naive"])
        .map_err(e)?;
    for (icd, density) in &corr.density {
        let get = |m| {
            corr.recall
                .get(icd)
                .and_then(|r| r.get(&m))
                .map(|v: &f64| v.to_string())
                .unwrap_or_default()
        };
        w.write_record([
            icd.as_str(),
            &density.to_string(),
            &get(OnsetMethod::Changepoint),
            &get(OnsetMethod::Naive),
        ])
        .map_err(e)?;
    }
    finish(path, w)
}
