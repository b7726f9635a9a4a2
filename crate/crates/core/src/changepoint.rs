//! Single change-point detection from sporadic (Poisson) to sustained
//! (Weibull renewal) prescribing.
//!
//! For a trajectory with intervals `τ_1..τ_n` and candidate `c` in `1..=n`,
//! intervals before `c` are scored under the exponential null model and
//! intervals from `c` on under the drug's regime-specific Weibull model:
//!
//! ```text
//! ℓ(c) = Σ_{i<c} log p_null(τ_i) + Σ_{i>=c} log p_chr(τ_i | r_i)
//! ```
//!
//! The null rate is the trajectory's own maximum-likelihood rate and is
//! shared by `ℓ_null` and every pre-change segment. The best candidate is
//! accepted when `ℓ(ĉ) - ℓ_null > ε`, and its onset is the date of the
//! prescription that opens interval `ĉ`.

use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event_model::{Day, DrugCode, Interval, PatientId, Regime, Trajectory};
use crate::numeric::ExactSum;
use crate::population::RegimeParamTable;
use crate::renewal::{exp_log_density, exp_loglik, fit_exponential, weibull_log_density};
use crate::renewal::{ExpParams, RenewalError, WeibullParams};

pub const DEFAULT_EPSILON: f64 = 0.05;
pub const DEFAULT_MIN_PRESCRIPTIONS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionConfig {
    /// Minimum log-likelihood gain over the null model.
    pub epsilon: f64,
    /// Minimum prescriptions (after same-day collapsing) to attempt detection.
    pub min_prescriptions: usize,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            epsilon: DEFAULT_EPSILON,
            min_prescriptions: DEFAULT_MIN_PRESCRIPTIONS,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<(), ChangePointError> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(ChangePointError::InvalidConfig(format!(
                "epsilon must be finite and >= 0, got {}",
                self.epsilon
            )));
        }
        if self.min_prescriptions < 2 {
            return Err(ChangePointError::InvalidConfig(format!(
                "min_prescriptions must be >= 2, got {}",
                self.min_prescriptions
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChangePointError {
    #[error("trajectory has {have} prescriptions; detection needs at least {need}")]
    TooFewEvents { have: usize, need: usize },
    #[error("no parameters for drug {drug} in the {regime} regime")]
    MissingParams { drug: DrugCode, regime: Regime },
    #[error("candidate {c} outside 1..={n}")]
    InvalidCandidate { c: usize, n: usize },
    #[error("invalid detection config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Renewal(#[from] RenewalError),
}

/// Outcome of scanning one trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct ChangePointResult {
    pub accepted: bool,
    /// Arg-max candidate (1-based), reported even when rejected.
    pub best_candidate: usize,
    /// Date of the prescription opening interval `ĉ`; set only when accepted.
    pub onset_date: Option<Day>,
    pub loglik_at_c: f64,
    pub loglik_null: f64,
    pub margin: f64,
}

impl ChangePointResult {
    /// `ĉ`, present only for accepted change-points.
    pub fn c_hat(&self) -> Option<usize> {
        self.accepted.then_some(self.best_candidate)
    }
}

/// Regime-specific parameters of one drug, resolved once per trajectory.
struct DrugModel {
    renewable: Option<WeibullParams>,
    non_renewable: Option<WeibullParams>,
}

impl DrugModel {
    fn resolve(
        table: &RegimeParamTable,
        drug: &DrugCode,
        intervals: &[Interval],
    ) -> Result<Self, ChangePointError> {
        let mut need = [false, false];
        for iv in intervals {
            need[(iv.regime == Regime::NonRenewable) as usize] = true;
        }
        let lookup = |regime: Regime, needed: bool| -> Result<Option<WeibullParams>, ChangePointError> {
            if !needed {
                return Ok(None);
            }
            table
                .get(drug, regime)
                .map(|e| Some(e.params))
                .ok_or_else(|| ChangePointError::MissingParams {
                    drug: drug.clone(),
                    regime,
                })
        };
        Ok(DrugModel {
            renewable: lookup(Regime::Renewable, need[0])?,
            non_renewable: lookup(Regime::NonRenewable, need[1])?,
        })
    }

    fn log_density(&self, iv: &Interval) -> f64 {
        let p = match iv.regime {
            Regime::Renewable => self.renewable.as_ref(),
            Regime::NonRenewable => self.non_renewable.as_ref(),
        }
        .expect("resolved for every regime present");
        weibull_log_density(f64::from(iv.tau), p)
    }
}

/// Log-likelihood of intervals under the regime-specific Weibull models of
/// `drug`, correctly rounded.
pub fn chronic_segment_loglik(
    intervals: &[Interval],
    drug: &DrugCode,
    params: &RegimeParamTable,
) -> Result<f64, ChangePointError> {
    let model = DrugModel::resolve(params, drug, intervals)?;
    Ok(intervals
        .iter()
        .map(|iv| model.log_density(iv))
        .collect::<ExactSum>()
        .value())
}

/// `ℓ(c)` evaluated directly from its two segments.
pub fn changepoint_loglik(
    trajectory: &Trajectory,
    params: &RegimeParamTable,
    null_rate: &ExpParams,
    c: usize,
) -> Result<f64, ChangePointError> {
    let intervals = trajectory.intervals();
    let n = intervals.len();
    if c < 1 || c > n {
        return Err(ChangePointError::InvalidCandidate { c, n });
    }
    let taus = trajectory.taus();
    let null_part = exp_loglik(&taus[..c - 1], null_rate)?;
    let chronic_part = chronic_segment_loglik(&intervals[c - 1..], &trajectory.drug_code, params)?;
    Ok(null_part + chronic_part)
}

/// Finds the best change-point of one trajectory and applies the acceptance
/// rule.
///
/// Every candidate is scored in one pass from a running null prefix and a
/// running Weibull suffix. Ties go to the smallest candidate.
pub fn detect_onset(
    trajectory: &Trajectory,
    params: &RegimeParamTable,
    config: &DetectionConfig,
) -> Result<ChangePointResult, ChangePointError> {
    if trajectory.len() < config.min_prescriptions.max(2) {
        return Err(ChangePointError::TooFewEvents {
            have: trajectory.len(),
            need: config.min_prescriptions.max(2),
        });
    }
    let intervals = trajectory.intervals();
    let n = intervals.len();
    let taus = trajectory.taus();
    let null = fit_exponential(&taus)?;
    let model = DrugModel::resolve(params, &trajectory.drug_code, intervals)?;

    // suffix[j] = Σ_{i>=j} chronic terms (0-based), for j in 0..n.
    let mut suffix = vec![0.0; n];
    let mut acc = ExactSum::new();
    for j in (0..n).rev() {
        acc.add(model.log_density(&intervals[j]));
        suffix[j] = acc.value();
    }

    let mut prefix = ExactSum::new();
    let mut best_c = 1;
    let mut best = f64::NEG_INFINITY;
    for c in 1..=n {
        let ll = prefix.value() + suffix[c - 1];
        if ll > best {
            best = ll;
            best_c = c;
        }
        prefix.add(exp_log_density(taus[c - 1], &null));
    }
    let loglik_null = prefix.value();
    let margin = best - loglik_null;
    let accepted = margin > config.epsilon;
    Ok(ChangePointResult {
        accepted,
        best_candidate: best_c,
        onset_date: accepted.then(|| trajectory.events()[best_c - 1].date),
        loglik_at_c: best,
        loglik_null,
        margin,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnsetMethod {
    Changepoint,
    Naive,
}

impl OnsetMethod {
    pub const ALL: [OnsetMethod; 2] = [OnsetMethod::Changepoint, OnsetMethod::Naive];

    pub fn as_str(self) -> &'static str {
        match self {
            OnsetMethod::Changepoint => "changepoint",
            OnsetMethod::Naive => "naive",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "changepoint" => Some(OnsetMethod::Changepoint),
            "naive" => Some(OnsetMethod::Naive),
            _ => None,
        }
    }
}

impl fmt::Display for OnsetMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Inferred treated-phenotype onset for one patient-drug pair.
#[derive(Clone, Debug, PartialEq)]
pub struct OnsetRecord {
    pub patient_id: PatientId,
    pub drug_code: DrugCode,
    pub onset_date: Day,
    /// `ℓ(ĉ) - ℓ_null`; absent for the naive rule.
    pub margin: Option<f64>,
    pub method: OnsetMethod,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryFailure {
    pub patient_id: PatientId,
    pub drug_code: DrugCode,
    pub error: ChangePointError,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DetectionReport {
    pub trajectories: usize,
    /// Skipped by the minimum-prescription filter.
    pub too_short: usize,
    pub scored: usize,
    pub accepted: usize,
    pub failures: Vec<TrajectoryFailure>,
}

/// Runs [`detect_onset`] over every trajectory long enough to score.
///
/// Per-trajectory failures are collected in the report. Output is ordered
/// by `(patient_id, drug_code)` regardless of scheduling.
pub fn detect_all(
    trajectories: &[Trajectory],
    params: &RegimeParamTable,
    config: &DetectionConfig,
) -> Result<(Vec<OnsetRecord>, DetectionReport), ChangePointError> {
    config.validate()?;
    let eligible: Vec<&Trajectory> = trajectories
        .iter()
        .filter(|t| t.len() >= config.min_prescriptions)
        .collect();
    let outcomes: Vec<(&Trajectory, Result<ChangePointResult, ChangePointError>)> = eligible
        .par_iter()
        .map(|t| (*t, detect_onset(t, params, config)))
        .collect();

    let mut report = DetectionReport {
        trajectories: trajectories.len(),
        too_short: trajectories.len() - eligible.len(),
        ..Default::default()
    };
    let mut onsets = Vec::new();
    for (t, outcome) in outcomes {
        match outcome {
            Ok(r) => {
                report.scored += 1;
                if let Some(onset_date) = r.onset_date {
                    report.accepted += 1;
                    onsets.push(OnsetRecord {
                        patient_id: t.patient_id.clone(),
                        drug_code: t.drug_code.clone(),
                        onset_date,
                        margin: Some(r.margin),
                        method: OnsetMethod::Changepoint,
                    });
                }
            }
            Err(error) => report.failures.push(TrajectoryFailure {
                patient_id: t.patient_id.clone(),
                drug_code: t.drug_code.clone(),
                error,
            }),
        }
    }
    onsets.sort_by(|a, b| {
        (&a.patient_id, &a.drug_code).cmp(&(&b.patient_id, &b.drug_code))
    });
    report
        .failures
        .sort_by(|a, b| (&a.patient_id, &a.drug_code).cmp(&(&b.patient_id, &b.drug_code)));
    Ok((onsets, report))
}

#[derive(Debug, Error)]
pub enum OnsetIoError {
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Row {
        path: String,
        line: u64,
        message: String,
    },
}

/// Writes the onset CSV (`patient_id,drug_atc,onset_date,margin,method`).
pub fn write_onsets(path: &Path, onsets: &[OnsetRecord]) -> Result<(), OnsetIoError> {
    let p = || path.display().to_string();
    let file = File::create(path).map_err(|source| OnsetIoError::Io { path: p(), source })?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let e = |source| OnsetIoError::Csv { path: p(), source };
    w.write_record(["patient_id", "drug_atc", "onset_date", "margin", "method"])
        .map_err(e)?;
    for o in onsets {
        let date = o.onset_date.to_string();
        let margin = o.margin.map(|m| m.to_string()).unwrap_or_default();
        w.write_record([
            o.patient_id.as_str(),
            o.drug_code.as_str(),
            &date,
            &margin,
            o.method.as_str(),
        ])
        .map_err(e)?;
    }
    w.flush().map_err(|source| OnsetIoError::Io { path: p(), source })
}

pub fn read_onsets(path: &Path) -> Result<Vec<OnsetRecord>, OnsetIoError> {
    let p = || path.display().to_string();
    let mut reader = csv::Reader::from_path(path).map_err(|source| OnsetIoError::Csv { path: p(), source })?;
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|source| OnsetIoError::Csv { path: p(), source })?;
        let line = row.position().map_or(0, |pos| pos.line());
        let bad = |message: String| OnsetIoError::Row {
            path: p(),
            line,
            message,
        };
        if row.len() != 5 {
            return Err(bad(format!("expected 5 fields, got {}", row.len())));
        }
        let onset_date = Day::parse_iso(&row[2]).ok_or_else(|| bad(format!("invalid date `{}`", &row[2])))?;
        let margin = match &row[3] {
            "" => None,
            m => Some(m.parse::<f64>().map_err(|_| bad(format!("invalid margin `{m}`")))?),
        };
        let method = OnsetMethod::parse(&row[4]).ok_or_else(|| bad(format!("unknown method `{}`", &row[4])))?;
        out.push(OnsetRecord {
            patient_id: PatientId::new(&row[0]),
            drug_code: DrugCode::new(&row[1]),
            onset_date,
            margin,
            method,
        });
    }
    Ok(out)
}
