//! Minimal RIFF WAV reader/writer for mono recordings.
//!
//! Reads PCM 8/16/24-bit integer and 32-bit float encodings. Integer samples
//! are rescaled to [-1, 1] by dividing by the type's maximum magnitude
//! (e.g. 32768 for 16-bit), so a 16-bit round trip through
//! [`write_wav_16bit`] is bit-exact.

use crate::error::{PcgError, Result};
use crate::recording::{Label, PcgRecording, Position};
use std::fs;
use std::io::Write;
use std::path::Path;

const FORMAT_PCM: u16 = 1;
const FORMAT_IEEE_FLOAT: u16 = 3;

struct Fmt {
    format: u16,
    channels: u16,
    sample_rate: u32,
    bits_per_sample: u16,
}

fn read_u16(bytes: &[u8], at: usize) -> Result<u16> {
    bytes
        .get(at..at + 2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .ok_or_else(|| PcgError::CorruptHeader("truncated file".into()))
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| PcgError::CorruptHeader("truncated file".into()))
}

/// Decode WAV bytes into amplitudes in [-1, 1] plus the header sample rate.
pub fn decode_wav(bytes: &[u8]) -> Result<(Vec<f64>, u32)> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(PcgError::CorruptHeader("missing RIFF/WAVE magic".into()));
    }

    let mut fmt: Option<Fmt> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12usize;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(bytes, pos + 4)? as usize;
        let body_start = pos + 8;
        if body_start + size > bytes.len() {
            return Err(PcgError::CorruptHeader(format!(
                "chunk {:?} overruns file",
                String::from_utf8_lossy(id)
            )));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(PcgError::CorruptHeader("fmt chunk too small".into()));
                }
                fmt = Some(Fmt {
                    format: read_u16(bytes, body_start)?,
                    channels: read_u16(bytes, body_start + 2)?,
                    sample_rate: read_u32(bytes, body_start + 4)?,
                    bits_per_sample: read_u16(bytes, body_start + 14)?,
                });
            }
            b"data" => {
                data = Some(&bytes[body_start..body_start + size]);
            }
            _ => {}
        }
        // chunks are word-aligned
        pos = body_start + size + (size & 1);
    }

    let fmt = fmt.ok_or_else(|| PcgError::CorruptHeader("no fmt chunk".into()))?;
    let data = data.ok_or_else(|| PcgError::CorruptHeader("no data chunk".into()))?;
    if fmt.channels != 1 {
        return Err(PcgError::UnsupportedFormat(format!(
            "{} channels (mono required)",
            fmt.channels
        )));
    }
    if fmt.sample_rate == 0 {
        return Err(PcgError::CorruptHeader("sample rate is zero".into()));
    }

    let samples = match (fmt.format, fmt.bits_per_sample) {
        (FORMAT_PCM, 8) => data.iter().map(|&b| (b as f64 - 128.0) / 128.0).collect(),
        (FORMAT_PCM, 16) => data
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
            .collect(),
        (FORMAT_PCM, 24) => data
            .chunks_exact(3)
            .map(|c| {
                let v = (c[0] as i32) | ((c[1] as i32) << 8) | ((c[2] as i8 as i32) << 16);
                v as f64 / 8_388_608.0
            })
            .collect(),
        (FORMAT_IEEE_FLOAT, 32) => data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        (format, bits) => {
            return Err(PcgError::UnsupportedFormat(format!(
                "format tag {format} with {bits} bits per sample"
            )))
        }
    };

    Ok((samples, fmt.sample_rate))
}

/// Load a mono WAV file. Metadata defaults to unknown/unlabeled; the corpus
/// manifest supplies it for canonical corpora.
pub fn load_wav(path: &Path) -> Result<PcgRecording> {
    let bytes = fs::read(path)?;
    let (samples, sample_rate) = decode_wav(&bytes)?;
    let patient_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    PcgRecording::new(samples, sample_rate, patient_id, Position::Unknown, Label::Unlabeled)
}

/// Encode amplitudes as a mono 16-bit PCM WAV.
pub fn encode_wav_16bit(samples: &[f64], sample_rate: u32) -> Vec<u8> {
    let data_len = samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Write a mono 16-bit PCM WAV file.
pub fn write_wav_16bit(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(&encode_wav_16bit(samples, sample_rate))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wav_16bit_from_i16(raw: &[i16], rate: u32) -> Vec<u8> {
        let samples: Vec<f64> = raw.iter().map(|&v| v as f64 / 32768.0).collect();
        encode_wav_16bit(&samples, rate)
    }

    #[test]
    fn all_zero_16bit_decodes_to_zero_amplitudes() {
        let bytes = wav_16bit_from_i16(&[0i16; 128], 4000);
        let (samples, rate) = decode_wav(&bytes).unwrap();
        assert_eq!(rate, 4000);
        assert_eq!(samples.len(), 128);
        assert!(samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn positive_full_scale_16bit_rescales_by_type_max() {
        let bytes = wav_16bit_from_i16(&[32767], 4000);
        let (samples, _) = decode_wav(&bytes).unwrap();
        assert_eq!(samples[0], 32767.0 / 32768.0);
        assert!((samples[0] - 0.99997).abs() < 1e-4);
    }

    #[test]
    fn fifteen_second_file_has_60000_samples() {
        let bytes = wav_16bit_from_i16(&vec![1i16; 60_000], 4000);
        let (samples, rate) = decode_wav(&bytes).unwrap();
        assert_eq!(rate, 4000);
        assert_eq!(samples.len(), 60_000);
    }

    #[test]
    fn sixteen_bit_round_trip_is_bit_exact() {
        let raw: Vec<i16> = (0..2000).map(|i| ((i * 37) % 65536 - 32768) as i16).collect();
        let bytes = wav_16bit_from_i16(&raw, 4000);
        let (samples, _) = decode_wav(&bytes).unwrap();
        let rewritten = encode_wav_16bit(&samples, 4000);
        assert_eq!(bytes, rewritten);
    }

    #[test]
    fn stereo_is_rejected() {
        let mut bytes = wav_16bit_from_i16(&[0i16; 16], 4000);
        bytes[22] = 2; // channel count
        assert!(matches!(decode_wav(&bytes), Err(PcgError::UnsupportedFormat(_))));
    }

    #[test]
    fn garbage_is_rejected() {
        assert!(matches!(
            decode_wav(b"not a wav at all"),
            Err(PcgError::CorruptHeader(_))
        ));
    }

    #[test]
    fn float32_decodes_verbatim() {
        // hand-build a float WAV
        let mut out = Vec::new();
        let vals = [0.5f32, -0.25, 1.0];
        let data_len = vals.len() * 4;
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
        out.extend_from_slice(b"WAVE");
        out.extend_from_slice(b"fmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&3u16.to_le_bytes());
        out.extend_from_slice(&1u16.to_le_bytes());
        out.extend_from_slice(&4000u32.to_le_bytes());
        out.extend_from_slice(&16000u32.to_le_bytes());
        out.extend_from_slice(&4u16.to_le_bytes());
        out.extend_from_slice(&32u16.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&(data_len as u32).to_le_bytes());
        for v in vals {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let (samples, _) = decode_wav(&out).unwrap();
        assert_eq!(samples, vec![0.5, -0.25, 1.0]);
    }

    #[test]
    fn load_wav_reads_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let samples: Vec<f64> = (0..4000).map(|i| (i as f64 * 0.01).sin() * 0.5).collect();
        write_wav_16bit(&path, &samples, 4000).unwrap();
        let rec = load_wav(&path).unwrap();
        assert_eq!(rec.sample_rate, 4000);
        assert_eq!(rec.samples.len(), 4000);
        assert_eq!(rec.label, Label::Unlabeled);
    }
}
