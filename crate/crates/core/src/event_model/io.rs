use std::collections::HashSet;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::sync::Arc;

use super::{Day, DiagnosisEvent, DrugCode, EventError, IcdCode, PatientId, PrescriptionEvent};

/// Column names for the prescriptions CSV.
#[derive(Clone, Debug)]
pub struct PrescriptionSchema {
    pub patient_id: String,
    pub drug: String,
    pub date: String,
    pub chronic: String,
    pub renewable: String,
}

impl Default for PrescriptionSchema {
    fn default() -> Self {
        PrescriptionSchema {
            patient_id: "patient_id".into(),
            drug: "drug_atc".into(),
            date: "date".into(),
            chronic: "chronic".into(),
            renewable: "renewable".into(),
        }
    }
}

/// Column names for the diagnoses CSV.
#[derive(Clone, Debug)]
pub struct DiagnosisSchema {
    pub patient_id: String,
    pub icd: String,
    pub date: String,
}

impl Default for DiagnosisSchema {
    fn default() -> Self {
        DiagnosisSchema {
            patient_id: "patient_id".into(),
            icd: "icd".into(),
            date: "date".into(),
        }
    }
}

/// A rejected input row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RowError {
    /// 1-based line number in the source file (the header is line 1).
    pub line: u64,
    pub message: String,
}

/// Tally of an ingestion run.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub rows_read: u64,
    pub rows_accepted: u64,
    pub errors: Vec<RowError>,
}

impl IngestReport {
    pub fn rejected(&self) -> usize {
        self.errors.len()
    }
}

/// Hands out shared `Arc<str>` values so repeated ids share one allocation.
#[derive(Default)]
struct Interner(HashSet<Arc<str>>);

impl Interner {
    fn intern(&mut self, s: &str) -> Arc<str> {
        if let Some(v) = self.0.get(s) {
            return v.clone();
        }
        let v: Arc<str> = Arc::from(s);
        self.0.insert(v.clone());
        v
    }
}

fn open_reader(path: &Path) -> Result<csv::Reader<File>, EventError> {
    let file = File::open(path).map_err(|source| EventError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file))
}

fn column_index(
    headers: &csv::ByteRecord,
    name: &str,
    path: &Path,
) -> Result<usize, EventError> {
    headers
        .iter()
        .position(|h| h == name.as_bytes())
        .ok_or_else(|| EventError::MissingColumn {
            path: path.display().to_string(),
            column: name.to_string(),
        })
}

fn field<'r>(record: &'r csv::ByteRecord, idx: usize, name: &str) -> Result<&'r str, String> {
    let raw = record
        .get(idx)
        .ok_or_else(|| format!("missing field `{name}`"))?;
    let s = std::str::from_utf8(raw).map_err(|_| format!("field `{name}` is not UTF-8"))?;
    let s = s.trim();
    if s.is_empty() {
        return Err(format!("empty field `{name}`"));
    }
    Ok(s)
}

fn parse_date(s: &str) -> Result<Day, String> {
    Day::parse_iso(s).ok_or_else(|| format!("invalid date `{s}`"))
}

fn parse_flag(s: &str, name: &str) -> Result<bool, String> {
    match s {
        "1" => Ok(true),
        "0" => Ok(false),
        other => Err(format!("unknown boolean `{other}` in `{name}` (expected 0 or 1)")),
    }
}

fn csv_err(path: &Path, source: csv::Error) -> EventError {
    EventError::Csv {
        path: path.display().to_string(),
        source,
    }
}

/// Reads a prescriptions CSV. Malformed rows are skipped and tallied in the
/// report with their line number.
pub fn ingest_prescriptions(
    path: &Path,
    schema: &PrescriptionSchema,
) -> Result<(Vec<PrescriptionEvent>, IngestReport), EventError> {
    let mut reader = open_reader(path)?;
    let headers = reader.byte_headers().map_err(|e| csv_err(path, e))?.clone();
    let mut report = IngestReport::default();
    if headers.is_empty() {
        return Ok((Vec::new(), report));
    }
    let cols = [
        column_index(&headers, &schema.patient_id, path)?,
        column_index(&headers, &schema.drug, path)?,
        column_index(&headers, &schema.date, path)?,
        column_index(&headers, &schema.chronic, path)?,
        column_index(&headers, &schema.renewable, path)?,
    ];

    let mut patients = Interner::default();
    let mut drugs = Interner::default();
    let mut events = Vec::new();
    let mut record = csv::ByteRecord::new();
    loop {
        match reader.read_byte_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                report.rows_read += 1;
                report.errors.push(RowError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        }
        report.rows_read += 1;
        let line = record.position().map_or(0, |p| p.line());
        let parsed = (|| -> Result<PrescriptionEvent, String> {
            let patient = field(&record, cols[0], &schema.patient_id)?;
            let drug = field(&record, cols[1], &schema.drug)?;
            let date = parse_date(field(&record, cols[2], &schema.date)?)?;
            let chronic = parse_flag(field(&record, cols[3], &schema.chronic)?, &schema.chronic)?;
            let renewable =
                parse_flag(field(&record, cols[4], &schema.renewable)?, &schema.renewable)?;
            Ok(PrescriptionEvent {
                patient_id: PatientId::from_arc(patients.intern(patient)),
                drug_code: DrugCode::from_arc(drugs.intern(drug)),
                date,
                chronic_label: chronic,
                renewable,
            })
        })();
        match parsed {
            Ok(ev) => {
                report.rows_accepted += 1;
                events.push(ev);
            }
            Err(message) => report.errors.push(RowError { line, message }),
        }
    }
    Ok((events, report))
}

/// Reads a diagnoses CSV with the same row-level error policy as
/// [`ingest_prescriptions`].
pub fn ingest_diagnoses(
    path: &Path,
    schema: &DiagnosisSchema,
) -> Result<(Vec<DiagnosisEvent>, IngestReport), EventError> {
    let mut reader = open_reader(path)?;
    let headers = reader.byte_headers().map_err(|e| csv_err(path, e))?.clone();
    let mut report = IngestReport::default();
    if headers.is_empty() {
        return Ok((Vec::new(), report));
    }
    let cols = [
        column_index(&headers, &schema.patient_id, path)?,
        column_index(&headers, &schema.icd, path)?,
        column_index(&headers, &schema.date, path)?,
    ];

    let mut patients = Interner::default();
    let mut icds = Interner::default();
    let mut events = Vec::new();
    let mut record = csv::ByteRecord::new();
    loop {
        match reader.read_byte_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                report.rows_read += 1;
                report.errors.push(RowError {
                    line: e.position().map_or(0, |p| p.line()),
                    message: e.to_string(),
                });
                continue;
            }
        }
        report.rows_read += 1;
        let line = record.position().map_or(0, |p| p.line());
        let parsed = (|| -> Result<DiagnosisEvent, String> {
            let patient = field(&record, cols[0], &schema.patient_id)?;
            let icd = field(&record, cols[1], &schema.icd)?;
            let date = parse_date(field(&record, cols[2], &schema.date)?)?;
            Ok(DiagnosisEvent {
                patient_id: PatientId::from_arc(patients.intern(patient)),
                icd_code: IcdCode::from_arc(icds.intern(icd)),
                date,
            })
        })();
        match parsed {
            Ok(ev) => {
                report.rows_accepted += 1;
                events.push(ev);
            }
            Err(message) => report.errors.push(RowError { line, message }),
        }
    }
    Ok((events, report))
}

fn create(path: &Path) -> Result<csv::Writer<BufWriter<File>>, EventError> {
    let file = File::create(path).map_err(|source| EventError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn finish(mut w: csv::Writer<BufWriter<File>>, path: &Path) -> Result<(), EventError> {
    w.flush().map_err(|source| EventError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_prescriptions(path: &Path, events: &[PrescriptionEvent]) -> Result<(), EventError> {
    let mut w = create(path)?;
    let e = |err| csv_err(path, err);
    w.write_record(["patient_id", "drug_atc", "date", "chronic", "renewable"])
        .map_err(e)?;
    for ev in events {
        let date = ev.date.to_string();
        w.write_record([
            ev.patient_id.as_str(),
            ev.drug_code.as_str(),
            date.as_str(),
            if ev.chronic_label { "1" } else { "0" },
            if ev.renewable { "1" } else { "0" },
        ])
        .map_err(e)?;
    }
    finish(w, path)
}

pub fn write_diagnoses(path: &Path, events: &[DiagnosisEvent]) -> Result<(), EventError> {
    let mut w = create(path)?;
    let e = |err| csv_err(path, err);
    w.write_record(["patient_id", "icd", "date"]).map_err(e)?;
    for ev in events {
        let date = ev.date.to_string();
        w.write_record([ev.patient_id.as_str(), ev.icd_code.as_str(), date.as_str()])
            .map_err(e)?;
    }
    finish(w, path)
}
