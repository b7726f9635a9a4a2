//! Prescription and diagnosis records, per-(patient, drug) trajectories and
//! the train/test patient split.
//!
//! Dates are whole days counted from 1970-01-01. All interval arithmetic is
//! done on these integer day counts.

mod io;
mod split;
mod trajectory;

use std::fmt;
use std::sync::Arc;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use io::{
    ingest_diagnoses, ingest_prescriptions, write_diagnoses, write_prescriptions, DiagnosisSchema,
    IngestReport, PrescriptionSchema, RowError,
};
pub use split::split_patients;
pub use trajectory::{build_trajectories, Interval, Regime, RxMark, Trajectory};

/// Days between 0001-01-01 (CE day 1) and 1970-01-01.
const UNIX_EPOCH_CE_DAYS: i32 = 719_163;

/// A calendar day, stored as days since 1970-01-01.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Day(pub i32);

impl Day {
    pub fn from_ymd(year: i32, month: u32, day: u32) -> Option<Day> {
        NaiveDate::from_ymd_opt(year, month, day).map(Day::from_naive)
    }

    pub fn from_naive(date: NaiveDate) -> Day {
        Day(date.num_days_from_ce() - UNIX_EPOCH_CE_DAYS)
    }

    pub fn to_naive(self) -> NaiveDate {
        NaiveDate::from_num_days_from_ce_opt(self.0 + UNIX_EPOCH_CE_DAYS)
            .expect("day count within chrono range")
    }

    pub fn year(self) -> i32 {
        self.to_naive().year()
    }

    /// Parses a strict `YYYY-MM-DD` string.
    pub fn parse_iso(s: &str) -> Option<Day> {
        let b = s.as_bytes();
        if b.len() != 10 || b[4] != b'-' || b[7] != b'-' {
            return None;
        }
        let num = |range: std::ops::Range<usize>| -> Option<u32> {
            b[range].iter().try_fold(0u32, |acc, &c| {
                c.is_ascii_digit().then(|| acc * 10 + u32::from(c - b'0'))
            })
        };
        Day::from_ymd(num(0..4)? as i32, num(5..7)?, num(8..10)?)
    }

    pub fn offset(self, days: i32) -> Day {
        Day(self.0 + days)
    }

    pub fn days_since(self, earlier: Day) -> i32 {
        self.0 - earlier.0
    }
}

impl fmt::Display for Day {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_naive().format("%Y-%m-%d"))
    }
}

impl Serialize for Day {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Day {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Day::parse_iso(&s)
            .ok_or_else(|| serde::de::Error::custom(format!("invalid ISO date `{s}`")))
    }
}

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(Arc<str>);

        impl $name {
            pub fn new(s: impl AsRef<str>) -> Self {
                $name(Arc::from(s.as_ref()))
            }

            pub fn from_arc(s: Arc<str>) -> Self {
                $name(s)
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{:?}", &*self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name::new(s)
            }
        }

        impl std::borrow::Borrow<str> for $name {
            fn borrow(&self) -> &str {
                &self.0
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.serialize_str(&self.0)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                Ok($name::new(String::deserialize(deserializer)?))
            }
        }
    };
}

string_id!(
    /// Opaque patient identifier.
    PatientId
);
string_id!(
    /// ATC level-5 drug code.
    DrugCode
);
string_id!(
    /// ICD-10 diagnosis category.
    IcdCode
);

/// One outpatient prescription.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrescriptionEvent {
    pub patient_id: PatientId,
    pub drug_code: DrugCode,
    pub date: Day,
    /// Administrative acute/chronic flag. Noisy; not ground truth.
    pub chronic_label: bool,
    /// Dispensing-policy flag.
    pub renewable: bool,
}

/// One recorded diagnosis.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiagnosisEvent {
    pub patient_id: PatientId,
    pub icd_code: IcdCode,
    pub date: Day,
}

#[derive(Debug, Error)]
pub enum EventError {
    #[error("cannot read {path}: {source}")]
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
    #[error("{path}: missing column `{column}` in header")]
    MissingColumn { path: String, column: String },
    #[error("cannot split an empty patient set")]
    EmptyPatientSet,
    #[error("train fraction must lie strictly between 0 and 1, got {0}")]
    InvalidFraction(f64),
}
