//! Seeded synthetic heart-sound generator. Produces labeled desk-scale
//! corpora with controllable murmur, noise, and spike content so every
//! pipeline stage can be exercised end to end.

use crate::error::{PcgError, Result};
use crate::manifest::{write_manifest, ManifestEntry, Sex};
use crate::recording::{Label, PcgRecording, Position, SAMPLE_RATE_HZ};
use crate::rng::{next_gaussian, stream};
use crate::wav::write_wav_16bit;
use rand::Rng;
use std::path::{Path, PathBuf};

/// Systolic murmur description: band-limited noise between S1 and S2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Murmur {
    None,
    Systolic {
        band_low_hz: f64,
        band_high_hz: f64,
        /// Murmur RMS relative to the S1 peak.
        rel_amplitude: f64,
    },
}

/// Parameters of one synthetic recording, fully determined by `seed`.
#[derive(Debug, Clone, Copy)]
pub struct SynthSpec {
    pub heart_rate_bpm: f64,
    pub s1_freq_hz: f64,
    pub s2_freq_hz: f64,
    pub s1_width_ms: f64,
    pub s2_width_ms: f64,
    pub murmur: Murmur,
    /// Additive white noise level; `None` means noiseless.
    pub noise_snr_db: Option<f64>,
    pub spike_count: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            heart_rate_bpm: 90.0,
            s1_freq_hz: 70.0,
            s2_freq_hz: 100.0,
            s1_width_ms: 25.0,
            s2_width_ms: 18.0,
            murmur: Murmur::None,
            noise_snr_db: None,
            spike_count: 0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if !(60.0..=160.0).contains(&self.heart_rate_bpm) {
            return Err(PcgError::InvalidSpec(format!(
                "heart rate {} bpm outside [60, 160]",
                self.heart_rate_bpm
            )));
        }
        let nyquist = SAMPLE_RATE_HZ as f64 / 2.0;
        let mut freqs = vec![self.s1_freq_hz, self.s2_freq_hz];
        if let Murmur::Systolic {
            band_low_hz,
            band_high_hz,
            rel_amplitude,
        } = self.murmur
        {
            if !(band_low_hz < band_high_hz) || rel_amplitude <= 0.0 {
                return Err(PcgError::InvalidSpec("malformed murmur band".into()));
            }
            freqs.push(band_high_hz);
        }
        if freqs.iter().any(|&f| f <= 0.0 || f >= nyquist) {
            return Err(PcgError::InvalidSpec("component frequency outside (0, Nyquist)".into()));
        }
        if self.s1_width_ms <= 0.0 || self.s2_width_ms <= 0.0 {
            return Err(PcgError::InvalidSpec("burst widths must be positive".into()));
        }
        Ok(())
    }
}

// Cycle anatomy: S1 at 8% of the cycle, S2 at 40%, murmur centered between.
const S1_PHASE: f64 = 0.08;
const S2_PHASE: f64 = 0.40;
const S2_REL_AMP: f64 = 0.6;
const MURMUR_TONES: usize = 48;
const SPIKE_LEN: usize = 20;

/// Synthesize one recording. Output is normalized to a 0.95 peak, so all
/// amplitudes stay inside [-1, 1].
pub fn generate(spec: &SynthSpec, duration_s: f64) -> Result<PcgRecording> {
    spec.validate()?;
    if duration_s < 3.0 {
        return Err(PcgError::InvalidSpec(format!(
            "duration {duration_s} s below the 3 s minimum"
        )));
    }
    let fs = SAMPLE_RATE_HZ as f64;
    let n = (duration_s * fs).round() as usize;
    let cycle = 60.0 / spec.heart_rate_bpm;
    let two_pi = 2.0 * std::f64::consts::PI;

    let mut samples = vec![0.0f64; n];
    let burst = |t: f64, center: f64, width_s: f64, freq: f64, amp: f64| {
        let d = t - center;
        amp * (-d * d / (2.0 * width_s * width_s)).exp() * (two_pi * freq * (t - center)).sin()
    };

    let cycles = (duration_s / cycle).ceil() as usize + 1;
    for i in 0..n {
        let t = i as f64 / fs;
        let mut v = 0.0;
        // only the two neighboring cycles contribute at any instant
        let k0 = (t / cycle) as isize;
        for k in (k0 - 1)..=(k0 + 1) {
            if k < 0 || k as usize >= cycles {
                continue;
            }
            let base = k as f64 * cycle;
            v += burst(t, base + S1_PHASE * cycle, spec.s1_width_ms / 1000.0, spec.s1_freq_hz, 1.0);
            v += burst(
                t,
                base + S2_PHASE * cycle,
                spec.s2_width_ms / 1000.0,
                spec.s2_freq_hz,
                S2_REL_AMP,
            );
        }
        samples[i] = v;
    }

    if let Murmur::Systolic {
        band_low_hz,
        band_high_hz,
        rel_amplitude,
    } = spec.murmur
    {
        let mut rng = stream(spec.seed, "synth-murmur", 0);
        let tones: Vec<(f64, f64)> = (0..MURMUR_TONES)
            .map(|_| {
                (
                    rng.gen_range(band_low_hz..band_high_hz),
                    rng.gen_range(0.0..two_pi),
                )
            })
            .collect();
        let tone_amp = rel_amplitude / (MURMUR_TONES as f64 / 2.0).sqrt();
        let center = (S1_PHASE + S2_PHASE) / 2.0 * cycle;
        let width = 0.09 * cycle;
        for i in 0..n {
            let t = i as f64 / fs;
            let phase = t - (t / cycle).floor() * cycle;
            let d = phase - center;
            let env = (-d * d / (2.0 * width * width)).exp();
            if env > 1e-6 {
                let mut m = 0.0;
                for &(f, p) in &tones {
                    m += (two_pi * f * t + p).sin();
                }
                samples[i] += env * tone_amp * m;
            }
        }
    }

    if let Some(snr_db) = spec.noise_snr_db {
        let power = samples.iter().map(|v| v * v).sum::<f64>() / n as f64;
        let sigma = power.sqrt() * 10f64.powf(-snr_db / 20.0);
        let mut rng = stream(spec.seed, "synth-noise", 0);
        for v in &mut samples {
            *v += sigma * next_gaussian(&mut rng);
        }
    }

    if spec.spike_count > 0 {
        let peak = samples.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        let mut rng = stream(spec.seed, "synth-spikes", 0);
        for _ in 0..spec.spike_count {
            let at = rng.gen_range(n / 10..n * 9 / 10 - SPIKE_LEN);
            for i in 0..SPIKE_LEN {
                let lobe = (std::f64::consts::PI * i as f64 / (SPIKE_LEN - 1) as f64).sin();
                samples[at + i] = 10.0 * peak * lobe;
            }
        }
    }

    let peak = samples.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if peak > 0.0 {
        let scale = 0.95 / peak;
        for v in &mut samples {
            *v *= scale;
        }
    }

    PcgRecording::new(
        samples,
        SAMPLE_RATE_HZ,
        "SYNTH",
        Position::Unknown,
        if spec.murmur == Murmur::None {
            Label::NonChd
        } else {
            Label::Chd
        },
    )
}

/// Parameters for a whole on-disk corpus.
#[derive(Debug, Clone, Copy)]
pub struct CorpusParams {
    pub n_patients: usize,
    pub chd_fraction: f64,
    pub seed: u64,
    pub noise_snr_db: Option<f64>,
    pub spike_count: usize,
    pub duration_s: f64,
}

impl Default for CorpusParams {
    fn default() -> Self {
        Self {
            n_patients: 100,
            chd_fraction: 0.63,
            seed: 42,
            noise_snr_db: Some(25.0),
            spike_count: 0,
            duration_s: 15.0,
        }
    }
}

/// Generate a corpus in the canonical layout:
/// `<root>/<patient_id>/<position>_0.wav` plus `manifest.csv`.
/// One recording per auscultation position per patient; all four share the
/// patient's label.
pub fn generate_corpus(root: &Path, params: &CorpusParams) -> Result<Vec<ManifestEntry>> {
    if params.n_patients < 4 {
        return Err(PcgError::InvalidSpec("need at least 4 patients".into()));
    }
    if !(0.0..=1.0).contains(&params.chd_fraction) {
        return Err(PcgError::InvalidSpec("chd_fraction must be in [0, 1]".into()));
    }
    let n_chd = (params.n_patients as f64 * params.chd_fraction).round() as usize;
    let mut entries = Vec::with_capacity(params.n_patients * 4);
    for p in 0..params.n_patients {
        let patient_id = format!("P{p:04}");
        let label = if p < n_chd { Label::Chd } else { Label::NonChd };
        let mut prng = stream(params.seed, "corpus-patient", p as u64);
        let age_years = (prng.gen_range(0.25f64..16.0) * 100.0).round() / 100.0;
        let sex = if prng.gen_bool(0.5) { Sex::Male } else { Sex::Female };
        let heart_rate = prng.gen_range(70.0..140.0);

        let dir = root.join(&patient_id);
        std::fs::create_dir_all(&dir)?;
        for (pi, &position) in Position::ALL.iter().enumerate() {
            let mut rrng = stream(params.seed, "corpus-recording", (p * 4 + pi) as u64);
            let spec = SynthSpec {
                heart_rate_bpm: heart_rate,
                s1_freq_hz: rrng.gen_range(60.0..90.0),
                s2_freq_hz: rrng.gen_range(90.0..130.0),
                s1_width_ms: rrng.gen_range(20.0..30.0),
                s2_width_ms: rrng.gen_range(14.0..24.0),
                murmur: match label {
                    Label::Chd => Murmur::Systolic {
                        band_low_hz: 250.0,
                        band_high_hz: 380.0,
                        rel_amplitude: rrng.gen_range(0.18..0.30),
                    },
                    _ => Murmur::None,
                },
                noise_snr_db: params.noise_snr_db,
                spike_count: params.spike_count,
                seed: rrng.gen(),
            };
            let rec = generate(&spec, params.duration_s)?;
            let rel = PathBuf::from(&patient_id).join(format!("{position}_0.wav"));
            write_wav_16bit(&root.join(&rel), &rec.samples, SAMPLE_RATE_HZ)?;
            entries.push(ManifestEntry {
                patient_id: patient_id.clone(),
                position,
                label,
                age_years,
                sex,
                path: rel,
            });
        }
    }
    write_manifest(root, &entries)?;
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::QualityConfig;
    use crate::quality::assess_quality;
    use crate::recording::{split_recording, DurationClass};

    #[test]
    fn fifteen_seconds_is_60000_samples() {
        let rec = generate(&SynthSpec::default(), 15.0).unwrap();
        assert_eq!(rec.samples.len(), 60_000);
        assert_eq!(rec.sample_rate, 4000);
    }

    #[test]
    fn amplitudes_stay_in_unit_range() {
        let spec = SynthSpec {
            noise_snr_db: Some(10.0),
            spike_count: 2,
            seed: 5,
            ..Default::default()
        };
        let rec = generate(&spec, 15.0).unwrap();
        assert!(rec.samples.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    /// Envelope peak-count oracle: moving RMS over 50 ms, then count maxima
    /// above 75% of the global peak with at least half a cycle between them.
    fn count_major_bursts(samples: &[f64], min_sep_s: f64) -> usize {
        let fs = SAMPLE_RATE_HZ as f64;
        let half = 100usize; // 25 ms each side
        let env: Vec<f64> = (0..samples.len())
            .map(|i| {
                let lo = i.saturating_sub(half);
                let hi = (i + half).min(samples.len());
                (samples[lo..hi].iter().map(|v| v * v).sum::<f64>() / (hi - lo) as f64).sqrt()
            })
            .collect();
        let peak = env.iter().fold(0.0f64, |m, &v| m.max(v));
        let min_sep = (min_sep_s * fs) as usize;
        let mut count = 0;
        let mut last: Option<usize> = None;
        for i in 1..env.len() - 1 {
            if env[i] > 0.75 * peak && env[i] >= env[i - 1] && env[i] >= env[i + 1] {
                if last.map_or(true, |l| i - l >= min_sep) {
                    count += 1;
                    last = Some(i);
                }
            }
        }
        count
    }

    #[test]
    fn sixty_bpm_gives_fifteen_s1_bursts_in_fifteen_seconds() {
        let spec = SynthSpec {
            heart_rate_bpm: 60.0,
            ..Default::default()
        };
        let rec = generate(&spec, 15.0).unwrap();
        assert_eq!(count_major_bursts(&rec.samples, 0.5), 15);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = SynthSpec {
            murmur: Murmur::Systolic {
                band_low_hz: 250.0,
                band_high_hz: 380.0,
                rel_amplitude: 0.25,
            },
            noise_snr_db: Some(25.0),
            spike_count: 1,
            seed: 77,
            ..Default::default()
        };
        let a = generate(&spec, 15.0).unwrap();
        let b = generate(&spec, 15.0).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.label, Label::Chd);
    }

    #[test]
    fn murmur_sets_the_label() {
        assert_eq!(generate(&SynthSpec::default(), 3.0).unwrap().label, Label::NonChd);
        let spec = SynthSpec {
            murmur: Murmur::Systolic {
                band_low_hz: 250.0,
                band_high_hz: 380.0,
                rel_amplitude: 0.2,
            },
            ..Default::default()
        };
        assert_eq!(generate(&spec, 3.0).unwrap().label, Label::Chd);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let spec = SynthSpec {
            heart_rate_bpm: 40.0,
            ..Default::default()
        };
        assert!(generate(&spec, 15.0).is_err());
        let spec = SynthSpec {
            s1_freq_hz: 2100.0,
            ..Default::default()
        };
        assert!(generate(&spec, 15.0).is_err());
        assert!(generate(&SynthSpec::default(), 2.0).is_err());
    }

    /// Band energy in [250, 380] Hz via the one-sided power spectrum.
    fn murmur_band_energy(samples: &[f64]) -> f64 {
        let n = 4096;
        let spec = crate::features::power_spectrum(&samples[..n], n);
        let fs = SAMPLE_RATE_HZ as f64;
        let lo = (250.0 * n as f64 / fs) as usize;
        let hi = (380.0 * n as f64 / fs) as usize;
        spec[lo..=hi].iter().sum::<f64>() / spec.iter().sum::<f64>()
    }

    #[test]
    fn murmur_classes_separate_in_band_energy() {
        let mut chd_min = f64::INFINITY;
        let mut non_max = 0.0f64;
        for seed in 0..10u64 {
            let chd = SynthSpec {
                murmur: Murmur::Systolic {
                    band_low_hz: 250.0,
                    band_high_hz: 380.0,
                    rel_amplitude: 0.2,
                },
                noise_snr_db: Some(20.0),
                seed,
                ..Default::default()
            };
            let non = SynthSpec {
                noise_snr_db: Some(20.0),
                seed,
                ..Default::default()
            };
            chd_min = chd_min.min(murmur_band_energy(&generate(&chd, 5.0).unwrap().samples));
            non_max = non_max.max(murmur_band_energy(&generate(&non, 5.0).unwrap().samples));
        }
        assert!(
            chd_min > 2.0 * non_max,
            "chd min {chd_min} vs non-chd max {non_max}"
        );
    }

    #[test]
    fn quality_gate_passes_clean_and_fails_noisy() {
        let cfg = QualityConfig::default(); // thresholds 0.4 / 0.4
        let clean = generate(
            &SynthSpec {
                seed: 3,
                ..Default::default()
            },
            15.0,
        )
        .unwrap();
        let seg = &split_recording(&clean, DurationClass::S5).unwrap()[0];
        let report = assess_quality(seg, &cfg).unwrap();
        assert!(report.suitable, "clean: {report:?}");

        let noisy = generate(
            &SynthSpec {
                noise_snr_db: Some(0.0),
                seed: 3,
                ..Default::default()
            },
            15.0,
        )
        .unwrap();
        let seg = &split_recording(&noisy, DurationClass::S5).unwrap()[0];
        let report = assess_quality(seg, &cfg).unwrap();
        assert!(!report.suitable, "noisy: {report:?}");
    }

    #[test]
    fn corpus_layout_counts_and_labels() {
        let dir = tempfile::tempdir().unwrap();
        let params = CorpusParams {
            n_patients: 8,
            chd_fraction: 0.5,
            seed: 9,
            noise_snr_db: None,
            spike_count: 0,
            duration_s: 3.0,
        };
        let entries = generate_corpus(dir.path(), &params).unwrap();
        assert_eq!(entries.len(), 32);
        let chd_patients: std::collections::BTreeSet<_> = entries
            .iter()
            .filter(|e| e.label == Label::Chd)
            .map(|e| e.patient_id.clone())
            .collect();
        assert_eq!(chd_patients.len(), 4);
        // every patient's four recordings share one label
        let mut by_patient: std::collections::BTreeMap<String, Vec<Label>> = Default::default();
        for e in &entries {
            by_patient.entry(e.patient_id.clone()).or_default().push(e.label);
        }
        for (pid, labels) in &by_patient {
            assert_eq!(labels.len(), 4, "{pid}");
            assert!(labels.iter().all(|l| l == &labels[0]));
        }
        // files exist and are loadable
        let corpus = crate::manifest::load_corpus(dir.path()).unwrap();
        assert_eq!(corpus.len(), 32);
        assert!(corpus.iter().all(|r| r.samples.len() == 12_000));
    }

    #[test]
    fn corpus_regenerates_identically() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let params = CorpusParams {
            n_patients: 4,
            chd_fraction: 0.5,
            seed: 31,
            noise_snr_db: Some(25.0),
            spike_count: 0,
            duration_s: 3.0,
        };
        generate_corpus(d1.path(), &params).unwrap();
        generate_corpus(d2.path(), &params).unwrap();
        let m1 = std::fs::read(d1.path().join("manifest.csv")).unwrap();
        let m2 = std::fs::read(d2.path().join("manifest.csv")).unwrap();
        assert_eq!(m1, m2);
        let w1 = std::fs::read(d1.path().join("P0002/TV_0.wav")).unwrap();
        let w2 = std::fs::read(d2.path().join("P0002/TV_0.wav")).unwrap();
        assert_eq!(w1, w2);
    }
}
