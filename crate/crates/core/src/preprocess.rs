//! Preprocessing of quality-passing segments: zero-phase Butterworth bandpass
//! filtering followed by iterative spike removal.

use crate::error::{PcgError, Result};
use crate::recording::{Segment, SAMPLE_RATE_HZ};
use rustfft::num_complex::Complex64;

/// Bandpass design parameters. The defaults are the pipeline's 5th-order
/// 25-400 Hz filter.
#[derive(Debug, Clone, Copy)]
pub struct FilterSpec {
    pub order: usize,
    pub low_cut_hz: f64,
    pub high_cut_hz: f64,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            order: 5,
            low_cut_hz: 25.0,
            high_cut_hz: 400.0,
        }
    }
}

impl FilterSpec {
    pub fn validate(&self, sample_rate_hz: f64) -> Result<()> {
        if self.order == 0 {
            return Err(PcgError::InvalidSpec("filter order must be >= 1".into()));
        }
        if !(self.low_cut_hz > 0.0 && self.low_cut_hz < self.high_cut_hz) {
            return Err(PcgError::InvalidSpec(
                "need 0 < low_cut < high_cut".into(),
            ));
        }
        if self.high_cut_hz >= sample_rate_hz / 2.0 {
            return Err(PcgError::InvalidSpec(format!(
                "high_cut {} Hz must sit below Nyquist {} Hz",
                self.high_cut_hz,
                sample_rate_hz / 2.0
            )));
        }
        Ok(())
    }
}

/// One second-order section; coefficients normalized so a0 = 1.
#[derive(Debug, Clone, Copy)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn magnitude_at(&self, z: Complex64) -> Complex64 {
        let z1 = z.inv();
        let z2 = z1 * z1;
        (self.b[0] + self.b[1] * z1 + self.b[2] * z2)
            / (Complex64::new(1.0, 0.0) + self.a[0] * z1 + self.a[1] * z2)
    }
}

/// Digital Butterworth bandpass as a cascade of second-order sections:
/// analog lowpass prototype, lowpass-to-bandpass transform with pre-warped
/// edges, bilinear transform, then conjugate-pair grouping.
pub fn design_butterworth_bandpass(spec: &FilterSpec, sample_rate_hz: f64) -> Result<Vec<Biquad>> {
    spec.validate(sample_rate_hz)?;
    let n = spec.order;
    let fs2 = 2.0 * sample_rate_hz;
    let warp = |f: f64| fs2 * (std::f64::consts::PI * f / sample_rate_hz).tan();
    let wl = warp(spec.low_cut_hz);
    let wh = warp(spec.high_cut_hz);
    let w0sq = wl * wh;
    let bw = wh - wl;

    // unit-cutoff lowpass prototype poles
    let proto: Vec<Complex64> = (0..n)
        .map(|k| {
            let theta = std::f64::consts::PI * (2 * k + n + 1) as f64 / (2 * n) as f64;
            Complex64::new(theta.cos(), theta.sin())
        })
        .collect();

    // s_lp -> (s^2 + w0^2) / (bw * s): each prototype pole yields two
    // bandpass poles; n zeros land at s = 0 and n at infinity.
    let mut poles: Vec<Complex64> = Vec::with_capacity(2 * n);
    for p in proto {
        let pb = p * bw;
        let disc = (pb * pb / 4.0 - w0sq).sqrt();
        poles.push(pb / 2.0 + disc);
        poles.push(pb / 2.0 - disc);
    }
    let analog_gain = bw.powi(n as i32);

    // bilinear transform; analog zeros at 0 -> z = 1, at infinity -> z = -1
    let fs2c = Complex64::new(fs2, 0.0);
    let zpoles: Vec<Complex64> = poles.iter().map(|&s| (fs2c + s) / (fs2c - s)).collect();
    let mut gain_num = Complex64::new(analog_gain, 0.0);
    for _ in 0..n {
        gain_num *= fs2c; // analog zero at s=0: (fs2 - 0)
    }
    let mut gain_den = Complex64::new(1.0, 0.0);
    for &s in &poles {
        gain_den *= fs2c - s;
    }
    let gain = (gain_num / gain_den).re;

    // Pair poles into sections: conjugate pairs first, leftover real poles
    // (odd prototype order) pair with each other.
    let mut remaining = zpoles;
    let mut pairs: Vec<(Complex64, Complex64)> = Vec::with_capacity(n);
    let mut reals: Vec<Complex64> = Vec::new();
    while let Some(p) = remaining.pop() {
        if p.im.abs() < 1e-12 {
            reals.push(p);
            continue;
        }
        let conj_idx = remaining
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                let da = (**a - p.conj()).norm();
                let db = (**b - p.conj()).norm();
                da.partial_cmp(&db).unwrap()
            })
            .map(|(i, _)| i)
            .ok_or_else(|| PcgError::InvalidSpec("unpaired complex pole".into()))?;
        let q = remaining.swap_remove(conj_idx);
        pairs.push((p, q));
    }
    reals.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap());
    for pair in reals.chunks_exact(2) {
        pairs.push((pair[0], pair[1]));
    }

    // Every section carries one zero at z = 1 and one at z = -1.
    let mut sections: Vec<Biquad> = pairs
        .iter()
        .map(|&(p, q)| {
            let a1 = -(p + q).re;
            let a2 = (p * q).re;
            Biquad {
                b: [1.0, 0.0, -1.0],
                a: [a1, a2],
            }
        })
        .collect();
    for v in &mut sections[0].b {
        *v *= gain;
    }
    Ok(sections)
}

fn sos_filter_in_place(sections: &[Biquad], x: &mut [f64]) {
    for s in sections {
        let (b0, b1, b2) = (s.b[0], s.b[1], s.b[2]);
        let (a1, a2) = (s.a[0], s.a[1]);
        let mut z1 = 0.0;
        let mut z2 = 0.0;
        for v in x.iter_mut() {
            let input = *v;
            let y = b0 * input + z1;
            z1 = b1 * input - a1 * y + z2;
            z2 = b2 * input - a2 * y;
            *v = y;
        }
    }
}

const FILTFILT_PAD: usize = 512;

/// Forward-backward filtering with odd reflection padding, so the effective
/// magnitude response is the squared single-pass response and the phase is
/// zero.
pub fn sos_filtfilt(sections: &[Biquad], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let pad = FILTFILT_PAD.min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    for i in (1..=pad).rev() {
        ext.push(2.0 * x[0] - x[i]);
    }
    ext.extend_from_slice(x);
    for i in (1..=pad).rev() {
        ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
    }
    sos_filter_in_place(sections, &mut ext);
    ext.reverse();
    sos_filter_in_place(sections, &mut ext);
    ext.reverse();
    ext[pad..pad + n].to_vec()
}

/// Squared single-pass magnitude response of the cascade at `freq_hz`,
/// i.e. the gain a steady sinusoid sees through [`sos_filtfilt`].
pub fn filtfilt_gain_at(sections: &[Biquad], freq_hz: f64, sample_rate_hz: f64) -> f64 {
    let w = 2.0 * std::f64::consts::PI * freq_hz / sample_rate_hz;
    let z = Complex64::new(w.cos(), w.sin());
    let h: Complex64 = sections
        .iter()
        .map(|s| s.magnitude_at(z))
        .product();
    h.norm_sqr()
}

/// Zero-phase bandpass of one segment; output length equals input length.
pub fn bandpass_filter(seg: &Segment, spec: &FilterSpec) -> Result<Segment> {
    let sections = design_butterworth_bandpass(spec, SAMPLE_RATE_HZ as f64)?;
    Ok(Segment {
        samples: sos_filtfilt(&sections, &seg.samples),
        duration_class: seg.duration_class,
        parent_id: seg.parent_id.clone(),
    })
}

/// Spike-removal window: 500 ms at 4 kHz.
const SPIKE_WINDOW: usize = 2000;

fn window_ranges(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n / SPIKE_WINDOW + 1);
    let mut start = 0;
    while start < n {
        out.push((start, (start + SPIKE_WINDOW).min(n)));
        start += SPIKE_WINDOW;
    }
    out
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Iterative spike removal: window the signal into 500 ms chunks, and while
/// any window's maximum absolute amplitude exceeds three times the median of
/// all window maxima, zero the offending spike between its surrounding zero
/// crossings. A zero crossing is an exactly-zero sample or a strict sign
/// change between neighbors; without one, the window edge bounds the spike.
pub fn remove_spikes(seg: &Segment) -> Result<Segment> {
    if seg.samples.len() < SPIKE_WINDOW {
        return Err(PcgError::TooShort(format!(
            "spike removal needs at least {SPIKE_WINDOW} samples, got {}",
            seg.samples.len()
        )));
    }
    let mut x = seg.samples.clone();
    let windows = window_ranges(x.len());
    loop {
        let maas: Vec<f64> = windows
            .iter()
            .map(|&(s, e)| x[s..e].iter().fold(0.0f64, |m, &v| m.max(v.abs())))
            .collect();
        let med = median(&mut maas.clone());
        let (worst, &worst_maa) = maas
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.partial_cmp(b).unwrap())
            .unwrap();
        if worst_maa <= 3.0 * med {
            break;
        }
        let (ws, we) = windows[worst];
        let peak = (ws..we)
            .max_by(|&i, &j| x[i].abs().partial_cmp(&x[j].abs()).unwrap())
            .unwrap();
        let mut start = ws;
        for s in (ws..=peak).rev() {
            if x[s] == 0.0 || (s > ws && x[s - 1] * x[s] < 0.0) {
                start = s;
                break;
            }
        }
        let mut end = we - 1;
        for e in peak..we {
            if x[e] == 0.0 || (e + 1 < we && x[e] * x[e + 1] < 0.0) {
                end = e;
                break;
            }
        }
        for v in &mut x[start..=end] {
            *v = 0.0;
        }
    }
    Ok(Segment {
        samples: x,
        duration_class: seg.duration_class,
        parent_id: seg.parent_id.clone(),
    })
}
