//! Synthetic prescription and diagnosis cohorts with known onsets.
//!
//! Each patient draws diseases by prevalence. A treated patient starts one
//! or more of the disease's drugs at onset and refills them as a Weibull
//! renewal process, switching from non-renewable to renewable dispensing
//! after a fixed number of prescriptions. Every drug is also prescribed
//! sporadically as a homogeneous Poisson process, and afflicted patients
//! get extra sporadic prescriptions of the disease's drugs before onset. Diagnoses are recorded
//! after a delay, subject to a per-calendar-year recording probability.
//! Everything dated before the study window is deleted; the ground truth
//! keeps uncensored onsets.

mod presets;

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event_model::{Day, DiagnosisEvent, DrugCode, IcdCode, PatientId, PrescriptionEvent};

pub use presets::{preset, PRESET_NAMES};

const DAYS_PER_YEAR: f64 = 365.25;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeibullSpec {
    pub k: f64,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrugProfile {
    pub code: String,
    pub non_renewable: WeibullSpec,
    pub renewable: WeibullSpec,
    /// Background prescriptions per patient-year.
    pub sporadic_rate_per_year: f64,
    /// Probability that a sporadic prescription carries a chronic label.
    pub sporadic_chronic_prob: f64,
    /// Probability that a therapy prescription carries an acute label.
    pub therapy_acute_prob: f64,
}

/// Piecewise-constant recording probability: a year uses the entry with
/// the largest `from_year` not after it, and years before every entry
/// record nothing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RampStep {
    pub from_year: i32,
    pub prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiseaseProfile {
    pub icd: String,
    pub drugs: Vec<String>,
    pub prevalence: f64,
    /// Probability that an afflicted patient receives sustained therapy.
    pub treatment_prob: f64,
    /// Distinct listed drugs a treated patient takes.
    pub drugs_per_patient: usize,
    /// Onsets are uniform over `[onset_from, onset_to]`, possibly before
    /// the study window.
    pub onset_from: Day,
    pub onset_to: Day,
    /// Sustained therapy cannot start before this date.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub therapy_available_from: Option<Day>,
    /// Mean of the exponential onset-to-diagnosis delay, in days.
    pub diagnosis_delay_mean_days: f64,
    /// Repeat codings per patient-year after the first diagnosis.
    #[serde(default)]
    pub rediagnosis_rate_per_year: f64,
    /// Sporadic prescriptions of the listed drugs per patient-year in the
    /// `prodromal_lead_days` before onset, each of a uniformly chosen drug.
    #[serde(default)]
    pub prodromal_rate_per_year: f64,
    #[serde(default)]
    pub prodromal_lead_days: i32,
    pub recording_ramp: Vec<RampStep>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub n_patients: usize,
    pub seed: u64,
    /// Processes start here; events before `study_start` are then deleted.
    pub history_start: Day,
    pub study_start: Day,
    pub study_end: Day,
    /// Non-renewable therapy prescriptions before switching to renewable.
    /// `None` never switches.
    pub switch_after_events: Option<usize>,
    pub drugs: Vec<DrugProfile>,
    pub diseases: Vec<DiseaseProfile>,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
}

fn check_prob(what: &str, p: f64) -> Result<(), ScenarioError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(ScenarioError::Invalid(format!("{what} = {p} is not a probability")))
    }
}

fn check_weibull(what: &str, w: &WeibullSpec) -> Result<(), ScenarioError> {
    if w.k > 0.0 && w.lambda > 0.0 && w.k.is_finite() && w.lambda.is_finite() {
        Ok(())
    } else {
        Err(ScenarioError::Invalid(format!("{what}: k and lambda must be positive")))
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |m: String| Err(ScenarioError::Invalid(m));
        if !(self.history_start <= self.study_start && self.study_start <= self.study_end) {
            return invalid("need history_start <= study_start <= study_end".into());
        }
        if self.switch_after_events == Some(0) {
            return invalid("switch_after_events must be >= 1 when set".into());
        }
        let mut codes = BTreeMap::new();
        for d in &self.drugs {
            if codes.insert(d.code.as_str(), ()).is_some() {
                return invalid(format!("duplicate drug {}", d.code));
            }
            check_weibull(&format!("{} non_renewable", d.code), &d.non_renewable)?;
            check_weibull(&format!("{} renewable", d.code), &d.renewable)?;
            if !(d.sporadic_rate_per_year >= 0.0 && d.sporadic_rate_per_year.is_finite()) {
                return invalid(format!("{}: sporadic rate must be >= 0", d.code));
            }
            check_prob(&format!("{} sporadic_chronic_prob", d.code), d.sporadic_chronic_prob)?;
            check_prob(&format!("{} therapy_acute_prob", d.code), d.therapy_acute_prob)?;
        }
        let mut icds = BTreeMap::new();
        for s in &self.diseases {
            if icds.insert(s.icd.as_str(), ()).is_some() {
                return invalid(format!("duplicate disease {}", s.icd));
            }
            for d in &s.drugs {
                if !codes.contains_key(d.as_str()) {
                    return invalid(format!("{}: unknown drug {d}", s.icd));
                }
            }
            check_prob(&format!("{} prevalence", s.icd), s.prevalence)?;
            check_prob(&format!("{} treatment_prob", s.icd), s.treatment_prob)?;
            if s.drugs_per_patient == 0 || s.drugs_per_patient > s.drugs.len() {
                return invalid(format!("{}: drugs_per_patient outside 1..={}", s.icd, s.drugs.len()));
            }
            if s.onset_from > s.onset_to {
                return invalid(format!("{}: onset_from after onset_to", s.icd));
            }
            if !(s.diagnosis_delay_mean_days >= 0.0 && s.diagnosis_delay_mean_days.is_finite()) {
                return invalid(format!("{}: diagnosis delay mean must be >= 0", s.icd));
            }
            if !(s.rediagnosis_rate_per_year >= 0.0 && s.rediagnosis_rate_per_year.is_finite()) {
                return invalid(format!("{}: rediagnosis rate must be >= 0", s.icd));
            }
            if !(s.prodromal_rate_per_year >= 0.0 && s.prodromal_rate_per_year.is_finite())
                || s.prodromal_lead_days < 0
            {
                return invalid(format!("{}: prodromal rate and lead must be >= 0", s.icd));
            }
            for step in &s.recording_ramp {
                check_prob(&format!("{} recording_ramp[{}]", s.icd, step.from_year), step.prob)?;
            }
            if s.recording_ramp.windows(2).any(|w| w[0].from_year >= w[1].from_year) {
                return invalid(format!("{}: recording ramp years must increase", s.icd));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let p = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: p.clone(), source })?;
        let cfg: ScenarioConfig = serde_json::from_str(&text).map_err(|source| ScenarioError::Json { path: p, source })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes") + "\n"
    }
}

impl DiseaseProfile {
    fn recording_prob(&self, year: i32) -> f64 {
        self.recording_ramp
            .iter()
            .rev()
            .find(|s| s.from_year <= year)
            .map_or(0.0, |s| s.prob)
    }
}

/// Inverse Weibull CDF at survival probability `u`: `λ (-ln u)^(1/k)`.
pub fn weibull_quantile(k: f64, lambda: f64, u: f64) -> f64 {
    lambda * (-u.ln()).powf(1.0 / k)
}

/// Draws a Weibull interval rounded to whole days, at least one.
pub fn sample_weibull<R: Rng + ?Sized>(k: f64, lambda: f64, rng: &mut R) -> u32 {
    // 1 - U lies in (0, 1], so the logarithm is finite.
    let u = 1.0 - rng.random::<f64>();
    let tau = weibull_quantile(k, lambda, u).round();
    if tau >= f64::from(u32::MAX) {
        u32::MAX
    } else {
        (tau as u32).max(1)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrueOnset {
    pub patient_id: PatientId,
    pub icd_code: IcdCode,
    /// Uncensored; may predate the study window.
    pub onset_date: Day,
    pub treated: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrueTransition {
    pub patient_id: PatientId,
    pub drug_code: DrugCode,
    pub icd_code: IcdCode,
    pub therapy_start: Day,
    /// 0-based position of the first therapy prescription among the
    /// emitted, date-collapsed prescriptions of the pair. 0 when therapy
    /// began before the window; `None` when nothing was emitted.
    pub event_index: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroundTruth {
    pub onsets: Vec<TrueOnset>,
    pub transitions: Vec<TrueTransition>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Cohort {
    pub prescriptions: Vec<PrescriptionEvent>,
    pub diagnoses: Vec<DiagnosisEvent>,
    pub truth: GroundTruth,
}

#[derive(Default)]
struct PatientOutput {
    prescriptions: Vec<PrescriptionEvent>,
    diagnoses: Vec<DiagnosisEvent>,
    onsets: Vec<TrueOnset>,
    transitions: Vec<TrueTransition>,
}

/// Formats the id of the `i`-th patient. Zero padding keeps string order
/// equal to generation order.
pub fn patient_id(i: usize) -> PatientId {
    PatientId::new(format!("P{:07}", i + 1))
}

fn poisson_days<R: Rng>(rate_per_day: f64, from: Day, to: Day, rng: &mut R, out: &mut Vec<Day>) {
    if rate_per_day <= 0.0 || from > to {
        return;
    }
    let gap = Exp::new(rate_per_day).expect("positive rate");
    let mut t = f64::from(from.0);
    loop {
        t += gap.sample(rng);
        if t > f64::from(to.0) {
            return;
        }
        out.push(Day(t.floor() as i32));
    }
}

struct Catalog<'a> {
    drugs: &'a [DrugProfile],
    ids: Vec<DrugCode>,
    index: HashMap<&'a str, usize>,
    icds: Vec<IcdCode>,
}

fn simulate_patient(cfg: &ScenarioConfig, cat: &Catalog<'_>, i: usize) -> PatientOutput {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(i as u64);
    let pid = patient_id(i);
    let mut out = PatientOutput::default();
    let end = cfg.study_end;

    // Per drug: therapy start (earliest across diseases) and its ICD.
    let mut therapy: Vec<Option<(Day, usize)>> = vec![None; cat.drugs.len()];
    let mut therapy_events: Vec<Vec<(Day, bool, bool)>> = vec![Vec::new(); cat.drugs.len()];
    let mut extra_sporadic: Vec<Vec<Day>> = vec![Vec::new(); cat.drugs.len()];

    for (di, disease) in cfg.diseases.iter().enumerate() {
        if !rng.random_bool(disease.prevalence) {
            continue;
        }
        let span = disease.onset_to.days_since(disease.onset_from);
        let onset = disease.onset_from.offset(rng.random_range(0..=span));
        let treated = rng.random_bool(disease.treatment_prob);
        let mut prodromal = Vec::new();
        poisson_days(
            disease.prodromal_rate_per_year / DAYS_PER_YEAR,
            onset.offset(-disease.prodromal_lead_days).max(cfg.history_start),
            onset.offset(-1),
            &mut rng,
            &mut prodromal,
        );
        for day in prodromal {
            let d = cat.index[disease.drugs[rng.random_range(0..disease.drugs.len())].as_str()];
            extra_sporadic[d].push(day);
        }
        out.onsets.push(TrueOnset {
            patient_id: pid.clone(),
            icd_code: cat.icds[di].clone(),
            onset_date: onset,
            treated,
        });

        if treated {
            let start = disease.therapy_available_from.map_or(onset, |a| onset.max(a));
            for pick in sample(&mut rng, disease.drugs.len(), disease.drugs_per_patient) {
                let d = cat.index[disease.drugs[pick].as_str()];
                if therapy[d].is_some_and(|(s, _)| s <= start) {
                    continue;
                }
                therapy[d] = Some((start, di));
                let prof = &cat.drugs[d];
                let mut events = Vec::new();
                let mut day = start;
                let mut n = 0usize;
                while day <= end {
                    let renewable = cfg.switch_after_events.is_some_and(|s| n >= s);
                    let chronic = !rng.random_bool(prof.therapy_acute_prob);
                    events.push((day, chronic, renewable));
                    let w = if renewable { prof.renewable } else { prof.non_renewable };
                    let tau = sample_weibull(w.k, w.lambda, &mut rng);
                    day = Day(day.0.saturating_add(tau.min(i32::MAX as u32) as i32));
                    n += 1;
                }
                therapy_events[d] = events;
            }
        }

        let delay = if disease.diagnosis_delay_mean_days > 0.0 {
            Exp::new(1.0 / disease.diagnosis_delay_mean_days)
                .expect("positive mean")
                .sample(&mut rng)
                .round() as i32
        } else {
            0
        };
        let first_dx = onset.offset(delay);
        let mut dx_days = vec![first_dx];
        poisson_days(
            disease.rediagnosis_rate_per_year / DAYS_PER_YEAR,
            first_dx,
            end,
            &mut rng,
            &mut dx_days,
        );
        for day in dx_days {
            let recorded = rng.random_bool(disease.recording_prob(day.year()));
            if recorded && day >= cfg.study_start && day <= end {
                out.diagnoses.push(DiagnosisEvent {
                    patient_id: pid.clone(),
                    icd_code: cat.icds[di].clone(),
                    date: day,
                });
            }
        }
    }

    let mut sporadic = Vec::new();
    for (d, prof) in cat.drugs.iter().enumerate() {
        sporadic.clear();
        poisson_days(
            prof.sporadic_rate_per_year / DAYS_PER_YEAR,
            cfg.history_start,
            end,
            &mut rng,
            &mut sporadic,
        );
        sporadic.append(&mut extra_sporadic[d]);
        let cutoff = therapy[d].map(|(s, _)| s);
        let mut emitted: Vec<(Day, bool, bool, bool)> = Vec::new();
        for &day in &sporadic {
            let chronic = rng.random_bool(prof.sporadic_chronic_prob);
            if cutoff.is_none_or(|s| day < s) {
                emitted.push((day, chronic, false, false));
            }
        }
        emitted.extend(therapy_events[d].iter().map(|&(day, c, r)| (day, c, r, true)));
        emitted.retain(|e| e.0 >= cfg.study_start);
        emitted.sort_by_key(|e| e.0);

        if let Some((start, di)) = therapy[d] {
            let mut distinct = emitted.iter().map(|e| e.0).collect::<Vec<_>>();
            distinct.dedup();
            let event_index = emitted
                .iter()
                .position(|e| e.3)
                .map(|_| distinct.partition_point(|&day| day < start));
            out.transitions.push(TrueTransition {
                patient_id: pid.clone(),
                drug_code: cat.ids[d].clone(),
                icd_code: cat.icds[di].clone(),
                therapy_start: start,
                event_index,
            });
        }
        for (date, chronic_label, renewable, _) in emitted {
            out.prescriptions.push(PrescriptionEvent {
                patient_id: pid.clone(),
                drug_code: cat.ids[d].clone(),
                date,
                chronic_label,
                renewable,
            });
        }
    }
    out.prescriptions
        .sort_by(|a, b| (a.date, &a.drug_code).cmp(&(b.date, &b.drug_code)));
    out.diagnoses
        .sort_by(|a, b| (a.date, &a.icd_code).cmp(&(b.date, &b.icd_code)));
    out
}

/// Generates a cohort. Output depends only on the config: each patient
/// draws from its own stream of the seeded generator.
pub fn simulate(cfg: &ScenarioConfig) -> Result<Cohort, ScenarioError> {
    cfg.validate()?;
    let cat = Catalog {
        drugs: &cfg.drugs,
        ids: cfg.drugs.iter().map(|d| DrugCode::new(&d.code)).collect(),
        index: cfg.drugs.iter().enumerate().map(|(i, d)| (d.code.as_str(), i)).collect(),
        icds: cfg.diseases.iter().map(|d| IcdCode::new(&d.icd)).collect(),
    };
    let patients: Vec<PatientOutput> = (0..cfg.n_patients)
        .into_par_iter()
        .map(|i| simulate_patient(cfg, &cat, i))
        .collect();
    let mut cohort = Cohort::default();
    for p in patients {
        cohort.prescriptions.extend(p.prescriptions);
        cohort.diagnoses.extend(p.diagnoses);
        cohort.truth.onsets.extend(p.onsets);
        cohort.truth.transitions.extend(p.transitions);
    }
    Ok(cohort)
}

/// Writes `patient_id,icd,true_onset_date`.
pub fn write_ground_truth(path: &Path, truth: &GroundTruth) -> Result<(), ScenarioError> {
    let p = || path.display().to_string();
    let file = File::create(path).map_err(|source| ScenarioError::Io { path: p(), source })?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let e = |source| ScenarioError::Csv { path: p(), source };
    w.write_record(["patient_id", "icd", "true_onset_date"]).map_err(e)?;
    for o in &truth.onsets {
        w.write_record([o.patient_id.as_str(), o.icd_code.as_str(), &o.onset_date.to_string()])
            .map_err(e)?;
    }
    w.flush().map_err(|source| ScenarioError::Io { path: p(), source })
}

/// Writes `patient_id,drug_atc,icd,therapy_start,event_index`.
pub fn write_transitions(path: &Path, truth: &GroundTruth) -> Result<(), ScenarioError> {
    let p = || path.display().to_string();
    let file = File::create(path).map_err(|source| ScenarioError::Io { path: p(), source })?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let e = |source| ScenarioError::Csv { path: p(), source };
    w.write_record(["patient_id", "drug_atc", "icd", "therapy_start", "event_index"])
        .map_err(e)?;
    for t in &truth.transitions {
        let idx = t.event_index.map(|i| i.to_string()).unwrap_or_default();
        w.write_record([
            t.patient_id.as_str(),
            t.drug_code.as_str(),
            t.icd_code.as_str(),
            &t.therapy_start.to_string(),
            &idx,
        ])
        .map_err(e)?;
    }
    w.flush().map_err(|source| ScenarioError::Io { path: p(), source })
}

/// Reads `ground_truth.csv`. Treatment status is not stored and reads as
/// `false`.
pub fn read_ground_truth(path: &Path) -> Result<Vec<TrueOnset>, ScenarioError> {
    let p = || path.display().to_string();
    let mut reader = csv::Reader::from_path(path).map_err(|source| ScenarioError::Csv { path: p(), source })?;
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|source| ScenarioError::Csv { path: p(), source })?;
        let date = row
            .get(2)
            .and_then(Day::parse_iso)
            .ok_or_else(|| ScenarioError::Invalid(format!("{}: bad row {:?}", p(), row)))?;
        out.push(TrueOnset {
            patient_id: PatientId::new(&row[0]),
            icd_code: IcdCode::new(&row[1]),
            onset_date: date,
            treated: false,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
