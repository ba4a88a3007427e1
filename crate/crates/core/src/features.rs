//! MFCC feature extraction: pre-emphasis, Hamming-windowed framing, power
//! spectrum, mel filterbank, log energies, DCT, and the Δ / Δ² temporal
//! regressions, producing the 39 x T matrix the classifier consumes.

use crate::error::{PcgError, Result};
use crate::recording::{Segment, SAMPLE_RATE_HZ};
use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::path::Path;

/// Floor under mel energies before the logarithm.
pub const LOG_MEL_FLOOR: f64 = 1e-10;

/// Framing and cepstrum parameters. Defaults: 192 ms frames (768 samples at
/// 4 kHz) with 50% overlap, Hamming alpha 0.46, pre-emphasis 0.97, 26 mel
/// filters, 13 cepstral coefficients, delta window 2, FFT size 1024.
#[derive(Debug, Clone, Copy)]
pub struct FrameParams {
    pub frame_len: usize,
    pub hop: usize,
    pub window_alpha: f64,
    pub pre_emphasis_alpha: f64,
    pub n_mels: usize,
    pub n_mfcc: usize,
    pub delta_window: usize,
    pub fft_size: usize,
}

impl Default for FrameParams {
    fn default() -> Self {
        Self {
            frame_len: 768,
            hop: 384,
            window_alpha: 0.46,
            pre_emphasis_alpha: 0.97,
            n_mels: 26,
            n_mfcc: 13,
            delta_window: 2,
            fft_size: 1024,
        }
    }
}

impl FrameParams {
    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop != self.frame_len / 2 {
            return Err(PcgError::Config("hop must equal frame_len / 2".into()));
        }
        if self.n_mfcc > self.n_mels {
            return Err(PcgError::Config("n_mfcc must not exceed n_mels".into()));
        }
        if self.n_mels < 2 {
            return Err(PcgError::Config("need at least 2 mel filters".into()));
        }
        if self.fft_size < self.frame_len {
            return Err(PcgError::Config("fft_size must cover frame_len".into()));
        }
        if self.delta_window == 0 {
            return Err(PcgError::Config("delta_window must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of complete frames in a signal of the given length.
    pub fn frame_count(&self, len: usize) -> Option<usize> {
        if len < self.frame_len {
            None
        } else {
            Some((len - self.frame_len) / self.hop + 1)
        }
    }

    pub fn feature_rows(&self) -> usize {
        3 * self.n_mfcc
    }
}

/// The 39 x T feature matrix. Rows 0..13 are MFCC, 13..26 ΔMFCC,
/// 26..39 Δ²MFCC.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Array2<f64>,
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn frames(&self) -> usize {
        self.values.ncols()
    }
}

/// x'(n) = x(n) - alpha * x(n-1), with x'(0) = x(0).
pub fn pre_emphasize(x: &[f64], alpha: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    if x.is_empty() {
        return out;
    }
    out.push(x[0]);
    for i in 1..x.len() {
        out.push(x[i] - alpha * x[i - 1]);
    }
    out
}

pub fn hamming_window(len: usize, alpha: f64) -> Vec<f64> {
    (0..len)
        .map(|n| {
            (1.0 - alpha)
                - alpha * (2.0 * std::f64::consts::PI * n as f64 / (len - 1) as f64).cos()
        })
        .collect()
}

/// Split into 50%-overlap frames and apply the Hamming window; incomplete
/// tail frames are dropped.
pub fn frame_and_window(x: &[f64], params: &FrameParams) -> Result<Vec<Vec<f64>>> {
    let count = params.frame_count(x.len()).ok_or_else(|| {
        PcgError::TooShort(format!(
            "signal of {} samples is shorter than one {}-sample frame",
            x.len(),
            params.frame_len
        ))
    })?;
    let window = hamming_window(params.frame_len, params.window_alpha);
    let mut frames = Vec::with_capacity(count);
    for m in 0..count {
        let start = m * params.hop;
        let frame: Vec<f64> = x[start..start + params.frame_len]
            .iter()
            .zip(&window)
            .map(|(&v, &w)| v * w)
            .collect();
        frames.push(frame);
    }
    Ok(frames)
}

fn power_spectrum_with(fft: &dyn Fft<f64>, frame: &[f64], fft_size: usize) -> Vec<f64> {
    let mut buf: Vec<Complex64> = frame
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
        .take(fft_size)
        .collect();
    fft.process(&mut buf);
    buf[..=fft_size / 2]
        .iter()
        .map(|c| c.norm_sqr() / fft_size as f64)
        .collect()
}

/// One-sided power spectrum S(k) = |X(k)|^2 / N for k = 0..=N/2, with the
/// frame zero-padded to the FFT size.
pub fn power_spectrum(frame: &[f64], fft_size: usize) -> Vec<f64> {
    let fft = FftPlanner::new().plan_fft_forward(fft_size);
    power_spectrum_with(fft.as_ref(), frame, fft_size)
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank over one-sided FFT bins. Centers are equally
/// spaced on the mel axis between 0 Hz and Nyquist; triangles are evaluated
/// on the (fractional) bin axis, so adjacent filters sum to one between the
/// first and last centers.
pub fn mel_filterbank(params: &FrameParams, sample_rate_hz: f64) -> Vec<Vec<f64>> {
    let n_bins = params.fft_size / 2 + 1;
    let m = params.n_mels;
    let mel_max = hz_to_mel(sample_rate_hz / 2.0);
    // m + 2 boundary points in fractional-bin units
    let bounds: Vec<f64> = (0..m + 2)
        .map(|j| {
            let hz = mel_to_hz(mel_max * j as f64 / (m + 1) as f64);
            hz * params.fft_size as f64 / sample_rate_hz
        })
        .collect();
    let mut bank = Vec::with_capacity(m);
    for i in 1..=m {
        let (lo, center, hi) = (bounds[i - 1], bounds[i], bounds[i + 1]);
        let mut filter = vec![0.0; n_bins];
        for (k, w) in filter.iter_mut().enumerate() {
            let kf = k as f64;
            if kf >= lo && kf <= center {
                *w = (kf - lo) / (center - lo);
            } else if kf > center && kf <= hi {
                *w = (hi - kf) / (hi - center);
            }
        }
        bank.push(filter);
    }
    bank
}

/// Log mel energies with the floor applied before the logarithm.
pub fn log_mel(spectrum: &[f64], filterbank: &[Vec<f64>]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(filterbank.len());
    for filter in filterbank {
        if filter.len() != spectrum.len() {
            return Err(PcgError::ShapeMismatch(format!(
                "filter has {} bins, spectrum {}",
                filter.len(),
                spectrum.len()
            )));
        }
        let energy: f64 = filter.iter().zip(spectrum).map(|(&h, &s)| h * s).sum();
        out.push(energy.max(LOG_MEL_FLOOR).ln());
    }
    Ok(out)
}

/// DCT-II dropping the DC term: MFCC_n = sum_m s(m) cos(pi n (m + 0.5) / M),
/// n = 1..=L.
pub fn dct_mfcc(log_energies: &[f64], n_mfcc: usize) -> Vec<f64> {
    let m_count = log_energies.len();
    (1..=n_mfcc)
        .map(|n| {
            log_energies
                .iter()
                .enumerate()
                .map(|(m, &s)| {
                    s * (std::f64::consts::PI * n as f64 * (m as f64 + 0.5) / m_count as f64).cos()
                })
                .sum()
        })
        .collect()
}

/// Regression deltas over the frame axis with replication padding:
/// Δ_i = sum_n n (c_{i+n} - c_{i-n}) / (2 sum_n n^2). Returns (Δ, Δ²).
pub fn delta_features(coeffs: &Array2<f64>, window: usize) -> Result<(Array2<f64>, Array2<f64>)> {
    let frames = coeffs.ncols();
    if frames < 2 * window + 1 {
        return Err(PcgError::TooShort(format!(
            "delta window {window} needs at least {} frames, got {frames}",
            2 * window + 1
        )));
    }
    let delta = delta_pass(coeffs, window);
    let delta2 = delta_pass(&delta, window);
    Ok((delta, delta2))
}

fn delta_pass(coeffs: &Array2<f64>, window: usize) -> Array2<f64> {
    let (rows, frames) = coeffs.dim();
    let denom: f64 = 2.0 * (1..=window).map(|n| (n * n) as f64).sum::<f64>();
    let clamp = |i: isize| -> usize { i.clamp(0, frames as isize - 1) as usize };
    let mut out = Array2::zeros((rows, frames));
    for r in 0..rows {
        for i in 0..frames {
            let mut acc = 0.0;
            for n in 1..=window {
                let fwd = coeffs[[r, clamp(i as isize + n as isize)]];
                let back = coeffs[[r, clamp(i as isize - n as isize)]];
                acc += n as f64 * (fwd - back);
            }
            out[[r, i]] = acc / denom;
        }
    }
    out
}

/// Run the full chain on a preprocessed segment.
pub fn extract_features(seg: &Segment, params: &FrameParams) -> Result<FeatureMatrix> {
    params.validate()?;
    let emphasized = pre_emphasize(&seg.samples, params.pre_emphasis_alpha);
    let frames = frame_and_window(&emphasized, params)?;
    let filterbank = mel_filterbank(params, SAMPLE_RATE_HZ as f64);
    let fft = FftPlanner::new().plan_fft_forward(params.fft_size);

    let t = frames.len();
    let mut mfcc = Array2::zeros((params.n_mfcc, t));
    for (i, frame) in frames.iter().enumerate() {
        let spectrum = power_spectrum_with(fft.as_ref(), frame, params.fft_size);
        let energies = log_mel(&spectrum, &filterbank)?;
        for (n, v) in dct_mfcc(&energies, params.n_mfcc).into_iter().enumerate() {
            mfcc[[n, i]] = v;
        }
    }

    let (delta, delta2) = delta_features(&mfcc, params.delta_window)?;
    let mut values = Array2::zeros((params.feature_rows(), t));
    values.slice_mut(ndarray::s![0..params.n_mfcc, ..]).assign(&mfcc);
    values
        .slice_mut(ndarray::s![params.n_mfcc..2 * params.n_mfcc, ..])
        .assign(&delta);
    values
        .slice_mut(ndarray::s![2 * params.n_mfcc..3 * params.n_mfcc, ..])
        .assign(&delta2);
    Ok(FeatureMatrix { values })
}

const FEATURE_MAGIC: &[u8; 4] = b"PCGF";

/// Write a feature matrix: magic `PCGF`, u32 rows, u32 cols, then row-major
/// little-endian f32 values.
pub fn write_feature_file(path: &Path, matrix: &FeatureMatrix) -> Result<()> {
    let (rows, cols) = matrix.values.dim();
    let mut bytes = Vec::with_capacity(12 + rows * cols * 4);
    bytes.extend_from_slice(FEATURE_MAGIC);
    bytes.extend_from_slice(&(rows as u32).to_le_bytes());
    bytes.extend_from_slice(&(cols as u32).to_le_bytes());
    for r in 0..rows {
        for c in 0..cols {
            bytes.extend_from_slice(&(matrix.values[[r, c]] as f32).to_le_bytes());
        }
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_feature_file(path: &Path) -> Result<FeatureMatrix> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 12 || &bytes[0..4] != FEATURE_MAGIC {
        return Err(PcgError::CorruptHeader(format!("{path:?}: bad feature file magic")));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() != 12 + rows * cols * 4 {
        return Err(PcgError::CorruptHeader(format!(
            "{path:?}: expected {} payload bytes, found {}",
            rows * cols * 4,
            bytes.len() - 12
        )));
    }
    let mut values = Array2::zeros((rows, cols));
    for r in 0..rows {
        for c in 0..cols {
            let at = 12 + (r * cols + c) * 4;
            values[[r, c]] =
                f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as f64;
        }
    }
    Ok(FeatureMatrix { values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recording::DurationClass;

    fn seg(samples: Vec<f64>, class: DurationClass) -> Segment {
        Segment::from_samples(samples, class, "t")
    }

    #[test]
    fn pre_emphasis_of_constant_leaves_residual() {
        let out = pre_emphasize(&[2.0; 5], 0.97);
        assert_eq!(out[0], 2.0);
        for &v in &out[1..] {
            assert!((v - 0.06).abs() < 1e-12); // 0.03 * 2
        }
    }

    #[test]
    fn pre_emphasis_with_zero_alpha_is_identity() {
        let x = [0.1, -0.4, 0.9];
        assert_eq!(pre_emphasize(&x, 0.0), x.to_vec());
    }

    #[test]
    fn pre_emphasis_of_impulse() {
        let out = pre_emphasize(&[0.0, 1.0, 0.0, 0.0], 0.97);
        assert_eq!(out[0], 0.0);
        assert_eq!(out[1], 1.0);
        assert!((out[2] + 0.97).abs() < 1e-15);
        assert_eq!(out[3], 0.0);
    }

    #[test]
    fn frame_counts_match_the_published_shapes() {
        let p = FrameParams::default();
        assert_eq!(p.frame_count(60_000), Some(155));
        assert_eq!(p.frame_count(20_000), Some(51));
        assert_eq!(p.frame_count(12_000), Some(30));
        assert_eq!(p.frame_count(767), None);
    }

    #[test]
    fn all_ones_frames_equal_the_window() {
        let p = FrameParams::default();
        let frames = frame_and_window(&vec![1.0; 2000], &p).unwrap();
        let window = hamming_window(p.frame_len, p.window_alpha);
        assert_eq!(frames.len(), 4);
        for f in &frames {
            for (a, b) in f.iter().zip(&window) {
                assert_eq!(a, b);
            }
        }
    }

    fn naive_dft_power(x: &[f64], n: usize) -> Vec<f64> {
        let padded: Vec<f64> = x.iter().copied().chain(std::iter::repeat(0.0)).take(n).collect();
        (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0f64, 0.0f64);
                for (i, &v) in padded.iter().enumerate() {
                    let ang = -2.0 * std::f64::consts::PI * k as f64 * i as f64 / n as f64;
                    re += v * ang.cos();
                    im += v * ang.sin();
                }
                (re * re + im * im) / n as f64
            })
            .collect()
    }

    #[test]
    fn zero_frame_gives_zero_spectrum() {
        let s = power_spectrum(&[0.0; 768], 1024);
        assert_eq!(s.len(), 513);
        assert!(s.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn resolvable_sinusoid_concentrates_at_its_bin() {
        let n = 1024;
        let k0 = 64;
        let a = 0.8;
        let x: Vec<f64> = (0..n)
            .map(|i| a * (2.0 * std::f64::consts::PI * k0 as f64 * i as f64 / n as f64).cos())
            .collect();
        let s = power_spectrum(&x, n);
        // X(k0) = A*N/2 so S(k0) = A^2 * N / 4
        let expected = a * a * n as f64 / 4.0;
        assert!((s[k0] - expected).abs() < 1e-9 * expected);
        for (k, &v) in s.iter().enumerate() {
            if k != k0 {
                assert!(v < 1e-18, "bin {k} leaked {v}");
            }
        }
        // full agreement with the naive oracle
        let oracle = naive_dft_power(&x, n);
        for (a, b) in s.iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1e-12));
        }
    }

    #[test]
    fn parseval_identity_holds() {
        let mut rng = crate::rng::stream(2, "parseval", 0);
        let x: Vec<f64> = (0..768).map(|_| crate::rng::next_gaussian(&mut rng)).collect();
        let n = 1024;
        let s = power_spectrum(&x, n);
        let time_energy: f64 = x.iter().map(|v| v * v).sum();
        let spec_energy = s[0] + s[n / 2] + 2.0 * s[1..n / 2].iter().sum::<f64>();
        assert!((time_energy - spec_energy).abs() <= 1e-9 * time_energy);
    }

    #[test]
    fn mel_scale_anchors() {
        assert_eq!(hz_to_mel(0.0), 0.0);
        let m1000 = hz_to_mel(1000.0);
        let expected = 2595.0 * (1.0 + 10.0 / 7.0f64).log10();
        assert!((m1000 - expected).abs() < 1e-9);
        assert!((m1000 - 999.99).abs() < 0.01);
        for f in [0.0, 33.5, 440.0, 1999.0] {
            assert!((mel_to_hz(hz_to_mel(f)) - f).abs() < 1e-9);
        }
    }

    #[test]
    fn filterbank_is_nonnegative_and_unimodal() {
        let p = FrameParams::default();
        let bank = mel_filterbank(&p, 4000.0);
        assert_eq!(bank.len(), 26);
        for filter in &bank {
            assert!(filter.iter().all(|&v| v >= 0.0));
            let peak = filter
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            // nondecreasing up to the peak, nonincreasing after
            for k in 1..=peak {
                assert!(filter[k] >= filter[k - 1] - 1e-12);
            }
            for k in peak + 1..filter.len() {
                assert!(filter[k] <= filter[k - 1] + 1e-12);
            }
        }
    }

    #[test]
    fn filterbank_partitions_unity_between_first_and_last_centers() {
        let p = FrameParams::default();
        let fs = 4000.0;
        let bank = mel_filterbank(&p, fs);
        let mel_max = hz_to_mel(fs / 2.0);
        let first_center = mel_to_hz(mel_max / 27.0) * p.fft_size as f64 / fs;
        let last_center = mel_to_hz(mel_max * 26.0 / 27.0) * p.fft_size as f64 / fs;
        let mut checked = 0;
        for k in (first_center.ceil() as usize)..=(last_center.floor() as usize) {
            let sum: f64 = bank.iter().map(|f| f[k]).sum();
            assert!((sum - 1.0).abs() < 1e-6, "bin {k}: sum {sum}");
            checked += 1;
        }
        assert!(checked > 400);
    }

    #[test]
    fn filterbank_covers_zero_to_nyquist() {
        let p = FrameParams::default();
        let fs = 4000.0;
        let bank = mel_filterbank(&p, fs);
        let mel_max = hz_to_mel(fs / 2.0);
        let first_center_hz = mel_to_hz(mel_max / 27.0);
        assert!(first_center_hz > 0.0);
        // last filter's upper vertex is the Nyquist bin
        let last = bank.last().unwrap();
        assert_eq!(last[p.fft_size / 2], 0.0);
        assert!(last[p.fft_size / 2 - 1] > 0.0);
    }

    #[test]
    fn log_mel_floor_engages_on_zero_spectrum() {
        let p = FrameParams::default();
        let bank = mel_filterbank(&p, 4000.0);
        let energies = log_mel(&vec![0.0; 513], &bank).unwrap();
        for &e in &energies {
            assert_eq!(e, LOG_MEL_FLOOR.ln());
        }
    }

    #[test]
    fn doubling_the_spectrum_adds_ln2() {
        let p = FrameParams::default();
        let bank = mel_filterbank(&p, 4000.0);
        let spectrum: Vec<f64> = (0..513).map(|k| 1.0 + (k % 7) as f64).collect();
        let base = log_mel(&spectrum, &bank).unwrap();
        let doubled: Vec<f64> = spectrum.iter().map(|&v| 2.0 * v).collect();
        let shifted = log_mel(&doubled, &bank).unwrap();
        for (a, b) in base.iter().zip(&shifted) {
            assert!((b - a - 2f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn single_bin_spectrum_weights_by_hand() {
        let p = FrameParams::default();
        let bank = mel_filterbank(&p, 4000.0);
        let mut spectrum = vec![0.0; 513];
        spectrum[100] = 3.0;
        let energies = log_mel(&spectrum, &bank).unwrap();
        for (m, &e) in energies.iter().enumerate() {
            let expected = (bank[m][100] * 3.0).max(LOG_MEL_FLOOR).ln();
            assert!((e - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn dct_of_constant_is_zero() {
        let out = dct_mfcc(&vec![4.2; 26], 13);
        assert_eq!(out.len(), 13);
        for &v in &out {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn dct_of_first_cosine_mode_is_m_over_2() {
        let m = 26;
        let s: Vec<f64> = (0..m)
            .map(|i| (std::f64::consts::PI * (i as f64 + 0.5) / m as f64).cos())
            .collect();
        let out = dct_mfcc(&s, 13);
        assert!((out[0] - m as f64 / 2.0).abs() < 1e-10);
        for &v in &out[1..] {
            assert!(v.abs() < 1e-10);
        }
    }

    #[test]
    fn dct_matches_double_loop_oracle() {
        let mut rng = crate::rng::stream(9, "dct", 0);
        let s: Vec<f64> = (0..26).map(|_| crate::rng::next_gaussian(&mut rng)).collect();
        let got = dct_mfcc(&s, 13);
        for n in 1..=13usize {
            let mut want = 0.0;
            for (m, &v) in s.iter().enumerate() {
                want += v
                    * (std::f64::consts::PI * n as f64 * (m as f64 + 0.5) / 26.0).cos();
            }
            assert!((got[n - 1] - want).abs() <= 1e-9 * want.abs().max(1.0));
        }
    }

    #[test]
    fn deltas_of_constant_coefficients_vanish() {
        let coeffs = Array2::from_elem((13, 10), 3.3);
        let (d, d2) = delta_features(&coeffs, 2).unwrap();
        assert!(d.iter().all(|&v| v.abs() < 1e-12));
        assert!(d2.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn delta_of_linear_ramp_is_one_in_the_interior() {
        let coeffs = Array2::from_shape_fn((2, 12), |(_, i)| i as f64);
        let (d, d2) = delta_features(&coeffs, 2).unwrap();
        for i in 2..10 {
            assert!((d[[0, i]] - 1.0).abs() < 1e-12, "frame {i}: {}", d[[0, i]]);
        }
        for i in 4..8 {
            assert!(d2[[0, i]].abs() < 1e-12);
        }
    }

    #[test]
    fn delta_rejects_short_sequences() {
        let coeffs = Array2::zeros((13, 4));
        assert!(matches!(
            delta_features(&coeffs, 2),
            Err(PcgError::TooShort(_))
        ));
    }

    fn test_signal(len: usize) -> Vec<f64> {
        (0..len)
            .map(|i| {
                let t = i as f64 / SAMPLE_RATE_HZ as f64;
                (2.0 * std::f64::consts::PI * 80.0 * t).sin() * 0.5
                    + (2.0 * std::f64::consts::PI * 310.0 * t).sin() * 0.2
            })
            .collect()
    }

    #[test]
    fn extracted_shapes_match_duration_classes() {
        let p = FrameParams::default();
        let f5 = extract_features(&seg(test_signal(20_000), DurationClass::S5), &p).unwrap();
        assert_eq!(f5.values.dim(), (39, 51));
        let f3 = extract_features(&seg(test_signal(12_000), DurationClass::S3), &p).unwrap();
        assert_eq!(f3.values.dim(), (39, 30));
        assert!(f5.values.iter().all(|v| v.is_finite()));
        assert!(f3.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn extraction_is_deterministic() {
        let p = FrameParams::default();
        let s = seg(test_signal(12_000), DurationClass::S3);
        let a = extract_features(&s, &p).unwrap();
        let b = extract_features(&s, &p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn positive_scaling_leaves_features_unchanged() {
        // the DCT drops the DC term, so a global gain (an additive log
        // constant across mel channels) cancels out of every row
        let p = FrameParams::default();
        let x = test_signal(12_000);
        let scaled: Vec<f64> = x.iter().map(|&v| v * 3.7).collect();
        let a = extract_features(&seg(x, DurationClass::S3), &p).unwrap();
        let b = extract_features(&seg(scaled, DurationClass::S3), &p).unwrap();
        let max_diff = a
            .values
            .iter()
            .zip(b.values.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff < 1e-8, "max diff {max_diff}");
    }

    #[test]
    fn feature_file_round_trips_at_f32_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seg.pcgf");
        let p = FrameParams::default();
        let m = extract_features(&seg(test_signal(12_000), DurationClass::S3), &p).unwrap();
        write_feature_file(&path, &m).unwrap();
        let back = read_feature_file(&path).unwrap();
        assert_eq!(back.values.dim(), m.values.dim());
        for (a, b) in m.values.iter().zip(back.values.iter()) {
            assert_eq!(*a as f32, *b as f32);
        }
        // header is exactly 12 bytes
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 12 + 39 * 30 * 4);
        assert_eq!(&bytes[0..4], b"PCGF");
    }
}
