//! Domain types for phonocardiogram recordings and their fixed-duration segments.

use crate::error::{PcgError, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Sample rate every pipeline stage assumes, in Hz.
pub const SAMPLE_RATE_HZ: u32 = 4000;

/// Auscultation position a recording was captured at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Position {
    Mv,
    Tv,
    Pv,
    Av,
    Unknown,
}

impl Position {
    pub const ALL: [Position; 4] = [Position::Mv, Position::Tv, Position::Pv, Position::Av];

    pub fn as_str(&self) -> &'static str {
        match self {
            Position::Mv => "MV",
            Position::Tv => "TV",
            Position::Pv => "PV",
            Position::Av => "AV",
            Position::Unknown => "UNKNOWN",
        }
    }
}

impl FromStr for Position {
    type Err = PcgError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "MV" => Ok(Position::Mv),
            "TV" => Ok(Position::Tv),
            "PV" => Ok(Position::Pv),
            "AV" => Ok(Position::Av),
            "UNKNOWN" => Ok(Position::Unknown),
            other => Err(PcgError::Config(format!("unknown position '{other}'"))),
        }
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Diagnosis label. CHD is the positive class everywhere in the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Chd,
    NonChd,
    Unlabeled,
}

impl Label {
    /// Class index used by the model head: 0 = non-CHD, 1 = CHD.
    pub fn class_index(&self) -> Option<usize> {
        match self {
            Label::NonChd => Some(0),
            Label::Chd => Some(1),
            Label::Unlabeled => None,
        }
    }

    pub fn from_class_index(idx: usize) -> Label {
        if idx == 1 {
            Label::Chd
        } else {
            Label::NonChd
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Chd => "CHD",
            Label::NonChd => "NON_CHD",
            Label::Unlabeled => "UNLABELED",
        }
    }
}

impl FromStr for Label {
    type Err = PcgError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "CHD" => Ok(Label::Chd),
            "NON_CHD" | "NONCHD" | "NON-CHD" => Ok(Label::NonChd),
            "UNLABELED" => Ok(Label::Unlabeled),
            other => Err(PcgError::Config(format!("unknown label '{other}'"))),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The three segment durations the experiments compare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DurationClass {
    S15,
    S5,
    S3,
}

impl DurationClass {
    /// Segment length in samples at 4000 Hz.
    pub fn samples(&self) -> usize {
        match self {
            DurationClass::S15 => 60_000,
            DurationClass::S5 => 20_000,
            DurationClass::S3 => 12_000,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            DurationClass::S15 => "15s",
            DurationClass::S5 => "5s",
            DurationClass::S3 => "3s",
        }
    }
}

impl FromStr for DurationClass {
    type Err = PcgError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "15s" | "s15" | "15" => Ok(DurationClass::S15),
            "5s" | "s5" | "5" => Ok(DurationClass::S5),
            "3s" | "s3" | "3" => Ok(DurationClass::S3),
            other => Err(PcgError::Config(format!("unknown duration class '{other}'"))),
        }
    }
}

impl fmt::Display for DurationClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A raw mono heart-sound recording plus its capture metadata.
#[derive(Debug, Clone)]
pub struct PcgRecording {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub patient_id: String,
    pub position: Position,
    pub label: Label,
}

impl PcgRecording {
    pub fn new(
        samples: Vec<f64>,
        sample_rate: u32,
        patient_id: impl Into<String>,
        position: Position,
        label: Label,
    ) -> Result<Self> {
        if sample_rate == 0 {
            return Err(PcgError::CorruptHeader("sample rate is zero".into()));
        }
        if samples.is_empty() {
            return Err(PcgError::TooShort("recording has no samples".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
            patient_id: patient_id.into(),
            position,
            label,
        })
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// One fixed-duration slice of a recording, the unit the rest of the
/// pipeline operates on.
#[derive(Debug, Clone)]
pub struct Segment {
    pub samples: Vec<f64>,
    pub duration_class: DurationClass,
    /// `<patient_id>-<position>-<segment index>`
    pub parent_id: String,
}

impl Segment {
    pub fn from_samples(
        samples: Vec<f64>,
        duration_class: DurationClass,
        parent_id: impl Into<String>,
    ) -> Self {
        Self {
            samples,
            duration_class,
            parent_id: parent_id.into(),
        }
    }
}

/// Split a recording into consecutive non-overlapping segments of the given
/// duration class, discarding any incomplete tail.
pub fn split_recording(rec: &PcgRecording, duration_class: DurationClass) -> Result<Vec<Segment>> {
    if rec.sample_rate != SAMPLE_RATE_HZ {
        return Err(PcgError::UnsupportedSampleRate(rec.sample_rate));
    }
    let seg_len = duration_class.samples();
    if rec.samples.len() < seg_len {
        return Err(PcgError::TooShort(format!(
            "recording has {} samples, segment needs {}",
            rec.samples.len(),
            seg_len
        )));
    }
    let count = rec.samples.len() / seg_len;
    let mut segments = Vec::with_capacity(count);
    for i in 0..count {
        let start = i * seg_len;
        segments.push(Segment {
            samples: rec.samples[start..start + seg_len].to_vec(),
            duration_class,
            parent_id: format!("{}-{}-{}", rec.patient_id, rec.position, i),
        });
    }
    Ok(segments)
}
