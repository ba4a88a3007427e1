//! Corpus manifest: `manifest.csv` at the corpus root maps every WAV file to
//! its patient, auscultation position, label, and demographics.
//!
//! Layout: `<root>/<patient_id>/<position>_<index>.wav`. All fields we emit
//! are comma-free by construction, so rows are plain `split(',')` parses.

use crate::error::{PcgError, Result};
use crate::recording::{Label, PcgRecording, Position};
use crate::wav;
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sex {
    Male,
    Female,
}

impl Sex {
    pub fn as_str(&self) -> &'static str {
        match self {
            Sex::Male => "M",
            Sex::Female => "F",
        }
    }
}

impl FromStr for Sex {
    type Err = PcgError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "M" | "MALE" => Ok(Sex::Male),
            "F" | "FEMALE" => Ok(Sex::Female),
            other => Err(PcgError::Config(format!("unknown sex '{other}'"))),
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One manifest row.
#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub patient_id: String,
    pub position: Position,
    pub label: Label,
    pub age_years: f64,
    pub sex: Sex,
    /// Path of the WAV file relative to the corpus root.
    pub path: PathBuf,
}

pub const MANIFEST_HEADER: &str = "patient_id,position,label,age_years,sex,path";

pub fn write_manifest(root: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for e in entries {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            e.patient_id,
            e.position,
            e.label,
            e.age_years,
            e.sex,
            e.path.display()
        ));
    }
    std::fs::write(root.join("manifest.csv"), out)?;
    Ok(())
}

pub fn read_manifest(root: &Path) -> Result<Vec<ManifestEntry>> {
    let path = root.join("manifest.csv");
    let text = std::fs::read_to_string(&path)?;
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(PcgError::Config(format!(
                "{path:?}:{}: expected 6 fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        entries.push(ManifestEntry {
            patient_id: fields[0].to_string(),
            position: fields[1].parse()?,
            label: fields[2].parse()?,
            age_years: fields[3]
                .parse()
                .map_err(|_| PcgError::Config(format!("bad age_years '{}'", fields[3])))?,
            sex: fields[4].parse()?,
            path: PathBuf::from(fields[5]),
        });
    }
    Ok(entries)
}

/// Per-patient demographics pulled out of the manifest.
#[derive(Debug, Clone, Copy)]
pub struct PatientMeta {
    pub age_years: f64,
    pub sex: Sex,
    pub label: Label,
}

pub fn patient_metadata(entries: &[ManifestEntry]) -> BTreeMap<String, PatientMeta> {
    let mut map = BTreeMap::new();
    for e in entries {
        map.entry(e.patient_id.clone()).or_insert(PatientMeta {
            age_years: e.age_years,
            sex: e.sex,
            label: e.label,
        });
    }
    map
}

/// Load every recording listed in the manifest, attaching its metadata.
pub fn load_corpus(root: &Path) -> Result<Vec<PcgRecording>> {
    let entries = read_manifest(root)?;
    let mut recordings = Vec::with_capacity(entries.len());
    for e in &entries {
        let rec = wav::load_wav(&root.join(&e.path))?;
        recordings.push(PcgRecording {
            patient_id: e.patient_id.clone(),
            position: e.position,
            label: e.label,
            ..rec
        });
    }
    Ok(recordings)
}
