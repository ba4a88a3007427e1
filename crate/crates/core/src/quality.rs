//! Signal-quality assessment: a 3-level Daubechies DWT of the segment, then
//! RMSSD and zero-crossing-ratio indicators on the level-3 approximation
//! coefficients, thresholded into a suitable/unsuitable gate.
//!
//! Both the raw segment and the approximation sequence are scaled to max-abs 1
//! before the indicators run, which makes the 0.2-1 threshold range meaningful
//! independently of recording gain.

use crate::config::QualityConfig;
use crate::error::{PcgError, Result};
use crate::recording::Segment;
use rustfft::num_complex::Complex64;

/// Analysis filter pair for a Daubechies wavelet of the given order
/// (2 * order taps).
#[derive(Debug, Clone)]
pub struct DaubechiesWavelet {
    pub order: usize,
    /// Scaling (lowpass) filter, minimum phase, sums to sqrt(2).
    pub lowpass: Vec<f64>,
    /// Wavelet (highpass) filter: g[k] = (-1)^k h[L-1-k].
    pub highpass: Vec<f64>,
}

impl DaubechiesWavelet {
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 || order > 10 {
            return Err(PcgError::Config(format!(
                "daubechies order {order} outside supported range 1..=10"
            )));
        }
        let lowpass = daubechies_scaling(order);
        let len = lowpass.len();
        let highpass: Vec<f64> = (0..len)
            .map(|k| {
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                sign * lowpass[len - 1 - k]
            })
            .collect();
        Ok(Self {
            order,
            lowpass,
            highpass,
        })
    }

    pub fn filter_len(&self) -> usize {
        self.lowpass.len()
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// Roots of a complex-coefficient polynomial (ascending coefficients) via
/// Durand-Kerner. Degrees here are at most 9.
fn polynomial_roots(coeffs: &[f64]) -> Vec<Complex64> {
    let degree = coeffs.len() - 1;
    if degree == 0 {
        return Vec::new();
    }
    let lead = coeffs[degree];
    let monic: Vec<Complex64> = coeffs
        .iter()
        .map(|&c| Complex64::new(c / lead, 0.0))
        .collect();
    let eval = |x: Complex64| {
        let mut acc = Complex64::new(0.0, 0.0);
        for &c in monic.iter().rev() {
            acc = acc * x + c;
        }
        acc
    };
    // radius bound: 1 + max |coeff|
    let radius = 1.0
        + monic[..degree]
            .iter()
            .map(|c| c.norm())
            .fold(0.0f64, f64::max);
    let seed = Complex64::new(0.4, 0.9);
    let mut roots: Vec<Complex64> = (0..degree)
        .map(|i| seed.powu(i as u32 + 1) * radius / seed.norm())
        .collect();
    for _ in 0..1000 {
        let mut max_step = 0.0f64;
        for i in 0..degree {
            let mut denom = Complex64::new(1.0, 0.0);
            for j in 0..degree {
                if j != i {
                    denom *= roots[i] - roots[j];
                }
            }
            let step = eval(roots[i]) / denom;
            roots[i] -= step;
            max_step = max_step.max(step.norm());
        }
        if max_step < 1e-15 {
            break;
        }
    }
    roots
}

fn polymul(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); a.len() + b.len() - 1];
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            out[i + j] += ai * bj;
        }
    }
    out
}

/// Minimum-phase Daubechies scaling filter via spectral factorization of the
/// Daubechies polynomial P(y) = sum_k C(order-1+k, k) y^k.
fn daubechies_scaling(order: usize) -> Vec<f64> {
    let sqrt2 = std::f64::consts::SQRT_2;
    if order == 1 {
        return vec![sqrt2 / 2.0, sqrt2 / 2.0];
    }
    let p: Vec<f64> = (0..order).map(|k| binomial(order - 1 + k, k)).collect();
    let y_roots = polynomial_roots(&p);

    // Each y-root maps to a zero pair of |H|^2 via z + 1/z = 2 - 4y;
    // keeping |z| < 1 yields the minimum-phase factor.
    let one = Complex64::new(1.0, 0.0);
    let mut coeffs = vec![one];
    for _ in 0..order {
        coeffs = polymul(&coeffs, &[one, one]); // (1 + x)^order
    }
    for y in y_roots {
        let b = Complex64::new(2.0, 0.0) - y * 4.0;
        let disc = (b * b - Complex64::new(4.0, 0.0)).sqrt();
        let z1 = (b + disc) / 2.0;
        let z2 = (b - disc) / 2.0;
        let z = if z1.norm() < 1.0 { z1 } else { z2 };
        coeffs = polymul(&coeffs, &[one, -z]);
    }
    let mut h: Vec<f64> = coeffs.iter().map(|c| c.re).collect();
    let sum: f64 = h.iter().sum();
    let scale = sqrt2 / sum;
    for v in &mut h {
        *v *= scale;
    }
    h
}

/// Coefficients of a 3-level analysis cascade.
#[derive(Debug, Clone)]
pub struct WaveletDecomposition {
    /// Level-3 approximation coefficients.
    pub approx3: Vec<f64>,
    /// Detail coefficients for levels 1..=3.
    pub details: [Vec<f64>; 3],
}

/// Half-point symmetric sample lookup: index may run one reflection past
/// either edge.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let m = if i < 0 { -1 - i } else if i >= n { 2 * n - 1 - i } else { i };
    debug_assert!((0..n).contains(&m));
    m as usize
}

/// One analysis step: correlate with the filter over the symmetrically
/// extended signal and keep every second position. Output length is
/// floor((n + filter_len - 1) / 2).
fn analysis_step(x: &[f64], filter: &[f64]) -> Vec<f64> {
    let n = x.len();
    let len = filter.len();
    let ext = len as isize - 1;
    let out_len = (n + len - 1) / 2;
    let mut out = Vec::with_capacity(out_len);
    for j in 0..out_len {
        let base = 2 * j as isize - ext;
        let mut acc = 0.0;
        for (m, &f) in filter.iter().enumerate() {
            acc += f * x[reflect(base + m as isize, n)];
        }
        out.push(acc);
    }
    out
}

/// Run the 3-level DWT cascade, keeping the final approximation and every
/// level's detail coefficients.
pub fn dwt_approx3(samples: &[f64], wavelet: &DaubechiesWavelet) -> Result<WaveletDecomposition> {
    if samples.len() < 8 * wavelet.filter_len() {
        return Err(PcgError::TooShort(format!(
            "dwt needs at least {} samples, got {}",
            8 * wavelet.filter_len(),
            samples.len()
        )));
    }
    let mut current = samples.to_vec();
    let mut details: Vec<Vec<f64>> = Vec::with_capacity(3);
    for _ in 0..3 {
        let detail = analysis_step(&current, &wavelet.highpass);
        let approx = analysis_step(&current, &wavelet.lowpass);
        details.push(detail);
        current = approx;
    }
    let d3 = details.pop().unwrap();
    let d2 = details.pop().unwrap();
    let d1 = details.pop().unwrap();
    Ok(WaveletDecomposition {
        approx3: current,
        details: [d1, d2, d3],
    })
}

/// Root mean square of successive differences:
/// sqrt(sum (x[i+1] - x[i])^2 / (N - 1)).
pub fn compute_rmssd(x: &[f64]) -> Result<f64> {
    if x.len() < 2 {
        return Err(PcgError::TooShort("rmssd needs at least 2 values".into()));
    }
    let n = x.len();
    let sum: f64 = x.windows(2).map(|w| (w[1] - w[0]) * (w[1] - w[0])).sum();
    Ok((sum / (n - 1) as f64).sqrt())
}

/// Zero-crossing ratio: the fraction of adjacent pairs whose product is
/// non-positive while differing, i.e. an actual sign transition. The sign
/// indicator is 1 when the product <= 0 and 0 otherwise.
pub fn compute_zcr(x: &[f64]) -> Result<f64> {
    if x.len() < 2 {
        return Err(PcgError::TooShort("zcr needs at least 2 values".into()));
    }
    let n = x.len();
    let count = x
        .windows(2)
        .filter(|w| w[0] * w[1] <= 0.0 && (w[1] - w[0]).abs() > 0.0)
        .count();
    Ok(count as f64 / (n - 1) as f64)
}

/// Indicator values and the gate verdict for one segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityReport {
    pub rmssd: f64,
    pub zcr: f64,
    pub suitable: bool,
    pub rmssd_threshold: f64,
    pub zcr_threshold: f64,
}

fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
}

/// Gate a segment: normalize, decompose, compute both indicators, AND the
/// two threshold tests. An identically-zero segment has no defined
/// indicators and errors out; callers treat it as unsuitable.
pub fn assess_quality(seg: &Segment, cfg: &QualityConfig) -> Result<QualityReport> {
    let peak = max_abs(&seg.samples);
    if peak == 0.0 {
        return Err(PcgError::DegenerateSignal);
    }
    let normalized: Vec<f64> = seg.samples.iter().map(|&v| v / peak).collect();
    let wavelet = DaubechiesWavelet::new(cfg.wavelet_order)?;
    let decomp = dwt_approx3(&normalized, &wavelet)?;
    let approx_peak = max_abs(&decomp.approx3);
    if approx_peak == 0.0 {
        return Err(PcgError::DegenerateSignal);
    }
    let approx: Vec<f64> = decomp.approx3.iter().map(|&v| v / approx_peak).collect();
    let rmssd = compute_rmssd(&approx)?;
    let zcr = compute_zcr(&approx)?;
    Ok(QualityReport {
        rmssd,
        zcr,
        suitable: rmssd <= cfg.rmssd_threshold && zcr <= cfg.zcr_threshold,
        rmssd_threshold: cfg.rmssd_threshold,
        zcr_threshold: cfg.zcr_threshold,
    })
}
