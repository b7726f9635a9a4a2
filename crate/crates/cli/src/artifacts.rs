//! Fingerprints, the output manifest and patient-id list files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rxonset::PatientId;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{files, PipelineConfig};
use crate::error::{CliError, Result};

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(|e| CliError::data(path.display(), e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = file.read(&mut buf).map_err(|e| CliError::data(path.display(), e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Fails with an actionable message when a stage input is absent.
pub fn require(path: &Path, hint: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::MissingInput {
            path: path.to_path_buf(),
            hint: hint.to_string(),
        })
    }
}

/// Identity of one stage run: stage name, result-relevant settings and the
/// content hash of every input.
pub struct Fingerprint {
    stage: &'static str,
    inputs: Vec<(String, String)>,
}

impl Fingerprint {
    pub fn new(stage: &'static str) -> Self {
        Fingerprint {
            stage,
            inputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        self.inputs.push((name, sha256_file(path)?));
        Ok(())
    }

    pub fn finish(&self, cfg: &PipelineConfig, extra: serde_json::Value) -> String {
        let doc = serde_json::json!({
            "stage": self.stage,
            "settings": cfg.settings_json(),
            "extra": extra,
            "inputs": self.inputs,
        });
        hex::encode(Sha256::digest(doc.to_string().as_bytes()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub stage: String,
    pub fingerprint: String,
    pub sha256: String,
}

pub type Manifest = BTreeMap<String, ManifestEntry>;

pub fn read_manifest(out_dir: &Path) -> Result<Manifest> {
    let path = out_dir.join(files::MANIFEST);
    if !path.exists() {
        return Ok(Manifest::new());
    }
    let text = fs::read_to_string(&path).map_err(|e| CliError::data(path.display(), e))?;
    serde_json::from_str(&text).map_err(|e| CliError::data(path.display(), e))
}

/// Records the outputs of one stage run in `manifest.json`.
pub fn record_outputs(
    out_dir: &Path,
    stage: &str,
    fingerprint: &str,
    outputs: &[PathBuf],
) -> Result<()> {
    let mut manifest = read_manifest(out_dir)?;
    for p in outputs {
        let name = p
            .strip_prefix(out_dir)
            .unwrap_or(p)
            .to_string_lossy()
            .into_owned();
        manifest.insert(
            name,
            ManifestEntry {
                stage: stage.to_string(),
                fingerprint: fingerprint.to_string(),
                sha256: sha256_file(p)?,
            },
        );
    }
    write_json(&out_dir.join(files::MANIFEST), &manifest)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Internal(format!("serializing {}: {e}", path.display())))?;
    fs::write(path, json + "\n").map_err(|e| CliError::write(path, e))
}

pub fn write_ids(path: &Path, ids: &BTreeSet<PatientId>) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::write(path, e))?;
    let mut w = BufWriter::new(file);
    for id in ids {
        writeln!(w, "{id}").map_err(|e| CliError::write(path, e))?;
    }
    w.flush().map_err(|e| CliError::write(path, e))
}

/// Reads one patient id per line; blank lines are ignored.
pub fn read_ids(path: &Path) -> Result<BTreeSet<PatientId>> {
    let file = File::open(path).map_err(|e| CliError::data(path.display(), e))?;
    let mut ids = BTreeSet::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| CliError::data(path.display(), e))?;
        let id = line.trim();
        if !id.is_empty() {
            ids.insert(PatientId::new(id));
        }
    }
    Ok(ids)
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::write(dir, e))
}
