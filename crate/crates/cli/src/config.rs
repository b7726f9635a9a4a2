use std::path::{Path, PathBuf};

use rxonset::changepoint::DetectionConfig;
use rxonset::evalharness::{validate_deltas, DEFAULT_DELTAS};
use rxonset::phenotype::DictionaryConfig;
use rxonset::population::FitConfig;
use rxonset::Day;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.42;
pub const DEFAULT_SEED: u64 = 42;

/// Pre-cutover check for one ICD.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cutover {
    pub icd: String,
    pub date: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub prescriptions: Option<PathBuf>,
    pub diagnoses: Option<PathBuf>,
    pub params: Option<PathBuf>,
    pub dict: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub train_fraction: f64,
    pub seed: u64,
    pub detection: DetectionConfig,
    pub fit: FitConfig,
    pub dictionary: DictionaryConfig,
    pub deltas: Vec<i32>,
    pub cutover: Option<Cutover>,
    /// Start of the observation window for the early-onset fraction. When
    /// unset the earliest prescription date is used.
    pub window_start: Option<String>,
    pub early_window_days: i32,
    pub leakage_guard: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            prescriptions: None,
            diagnoses: None,
            params: None,
            dict: None,
            ground_truth: None,
            out_dir: PathBuf::from("out"),
            train_fraction: DEFAULT_TRAIN_FRACTION,
            seed: DEFAULT_SEED,
            detection: DetectionConfig::default(),
            fit: FitConfig::default(),
            dictionary: DictionaryConfig::default(),
            deltas: DEFAULT_DELTAS.to_vec(),
            cutover: None,
            window_start: None,
            early_window_days: 90,
            leakage_guard: true,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::MissingInput {
            path: path.to_path_buf(),
            hint: format!("config file could not be read ({e})"),
        })?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let usage = |e: &dyn std::fmt::Display| CliError::Usage(e.to_string());
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(CliError::Usage(format!(
                "train fraction must lie strictly between 0 and 1, got {}",
                self.train_fraction
            )));
        }
        self.detection.validate().map_err(|e| usage(&e))?;
        self.dictionary.validate().map_err(|e| usage(&e))?;
        validate_deltas(&self.deltas).map_err(|e| usage(&e))?;
        if self.fit.min_intervals < 2 {
            return Err(CliError::Usage("min_intervals must be at least 2".into()));
        }
        if self.early_window_days < 0 {
            return Err(CliError::Usage("early_window_days must be >= 0".into()));
        }
        if let Some(c) = &self.cutover {
            parse_day(&c.date, "cutover date")?;
        }
        if let Some(s) = &self.window_start {
            parse_day(s, "window start")?;
        }
        Ok(())
    }

    fn in_out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn prescriptions_path(&self) -> PathBuf {
        self.prescriptions.clone().unwrap_or_else(|| self.in_out(files::PRESCRIPTIONS))
    }

    pub fn diagnoses_path(&self) -> PathBuf {
        self.diagnoses.clone().unwrap_or_else(|| self.in_out(files::DIAGNOSES))
    }

    pub fn params_path(&self) -> PathBuf {
        self.params.clone().unwrap_or_else(|| self.in_out(files::PARAMS))
    }

    pub fn dict_path(&self) -> PathBuf {
        self.dict.clone().unwrap_or_else(|| self.in_out(files::DICTIONARY))
    }

    pub fn ground_truth_path(&self) -> Option<PathBuf> {
        self.ground_truth.clone().or_else(|| {
            let p = self.in_out(files::GROUND_TRUTH);
            p.exists().then_some(p)
        })
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.in_out(name)
    }

    /// Settings that change results, without any file locations.
    pub fn settings_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            for key in ["prescriptions", "diagnoses", "params", "dict", "ground_truth", "out_dir"] {
                map.remove(key);
            }
        }
        v
    }
}

pub fn parse_day(s: &str, what: &str) -> Result<Day> {
    Day::parse_iso(s).ok_or_else(|| CliError::Usage(format!("{what}: invalid date `{s}` (expected YYYY-MM-DD)")))
}

/// Artifact file names inside the output directory.
pub mod files {
    pub const PRESCRIPTIONS: &str = "prescriptions.csv";
    pub const DIAGNOSES: &str = "diagnoses.csv";
    pub const GROUND_TRUTH: &str = "ground_truth.csv";
    pub const TRANSITIONS: &str = "transitions.csv";
    pub const SCENARIO: &str = "scenario.json";
    pub const TRAIN_IDS: &str = "train_patients.txt";
    pub const TEST_IDS: &str = "test_patients.txt";
    pub const PARAMS: &str = "params.json";
    pub const LABEL_ROBUSTNESS: &str = "label_robustness.json";
    pub const ONSETS_TRAIN: &str = "onsets_train.csv";
    pub const ONSETS_TEST: &str = "onsets_test.csv";
    pub const DICTIONARY: &str = "dictionary.json";
    pub const DISEASE_ONSETS: &str = "disease_onsets.csv";
    pub const TIMEDIFF: &str = "timediff.csv";
    pub const RECALL: &str = "recall.csv";
    pub const DENSITY: &str = "density.csv";
    pub const SUMMARY: &str = "summary.json";
    pub const MANIFEST: &str = "manifest.json";
}
