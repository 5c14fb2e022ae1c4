//! Direct DFT, Welch cross-spectra and the FFT-domain Hilbert transform.
//!
//! Segment and series lengths here are tens of points, so a twiddle-table
//! DFT is fast enough and keeps the crate free of an FFT dependency.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::Complex;

use crate::math;

pub type C64 = Complex<f64>;

pub struct Dft {
    n: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl Dft {
    pub fn new(n: usize) -> Self {
        let (cos, sin) = (0..n)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / n as f64;
                (math::cos(a), math::sin(a))
            })
            .unzip();
        Self { n, cos, sin }
    }

    /// Forward transform of a real signal, bins `0..bins`.
    pub fn forward_real(&self, x: &[f64], bins: usize) -> Vec<C64> {
        debug_assert_eq!(x.len(), self.n);
        (0..bins)
            .map(|k| {
                let mut acc = C64::new(0.0, 0.0);
                for (t, &v) in x.iter().enumerate() {
                    let idx = (k * t) % self.n;
                    acc.re += v * self.cos[idx];
                    acc.im -= v * self.sin[idx];
                }
                acc
            })
            .collect()
    }

    /// Inverse transform (with 1/n normalisation) of a full spectrum.
    pub fn inverse(&self, spectrum: &[C64]) -> Vec<C64> {
        debug_assert_eq!(spectrum.len(), self.n);
        (0..self.n)
            .map(|t| {
                let mut acc = C64::new(0.0, 0.0);
                for (k, s) in spectrum.iter().enumerate() {
                    let idx = (k * t) % self.n;
                    let (c, si) = (self.cos[idx], self.sin[idx]);
                    acc.re += s.re * c - s.im * si;
                    acc.im += s.re * si + s.im * c;
                }
                acc / self.n as f64
            })
            .collect()
    }
}

/// Analytic signal of the mean-removed series.
pub fn analytic_signal(x: &[f64], dft: &Dft) -> Vec<C64> {
    let n = x.len();
    let m = math::mean(x);
    let centred: Vec<f64> = x.iter().map(|v| v - m).collect();
    let mut spectrum = dft.forward_real(&centred, n);
    for (k, s) in spectrum.iter_mut().enumerate() {
        let gain = if k == 0 || (n.is_multiple_of(2) && k == n / 2) {
            1.0
        } else if k < n.div_ceil(2) {
            2.0
        } else {
            0.0
        };
        *s *= gain;
    }
    dft.inverse(&spectrum)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WelchPlan {
    pub segment_len: usize,
    pub step: usize,
    pub n_segments: usize,
}

impl WelchPlan {
    /// Segment length `round(T/4)` forced even, 50% overlap.
    pub fn for_length(t: usize) -> Self {
        let mut segment_len = (math::round(t as f64 / 4.0) as usize).max(2);
        if segment_len % 2 == 1 {
            segment_len += 1;
        }
        let step = segment_len / 2;
        let n_segments = if t >= segment_len { (t - segment_len) / step + 1 } else { 0 };
        Self { segment_len, step, n_segments }
    }

    /// Positive-frequency bins `1..=segment_len/2` whose fraction of Nyquist
    /// lies in `(f_lo, f_hi]`.
    pub fn bins(&self, f_lo: f64, f_hi: f64) -> Vec<usize> {
        let nyq = self.segment_len / 2;
        (1..=nyq)
            .filter(|&k| {
                let f = k as f64 / nyq as f64;
                f > f_lo && f <= f_hi
            })
            .collect()
    }
}

/// Per-row Welch spectra: `out[row][segment][bin]`, Hann-windowed and
/// mean-detrended per segment.
pub fn welch_segments(rows: &[&[f64]], plan: &WelchPlan, bins: &[usize]) -> Vec<Vec<Vec<C64>>> {
    let len = plan.segment_len;
    let dft = Dft::new(len);
    let window: Vec<f64> = (0..len).map(|i| 0.5 - 0.5 * math::cos(2.0 * PI * i as f64 / len as f64)).collect();
    let max_bin = bins.iter().copied().max().unwrap_or(0) + 1;
    rows.iter()
        .map(|row| {
            (0..plan.n_segments)
                .map(|s| {
                    let seg = &row[s * plan.step..s * plan.step + len];
                    let m = math::mean(seg);
                    let tapered: Vec<f64> = seg.iter().zip(&window).map(|(v, w)| (v - m) * w).collect();
                    let full = dft.forward_real(&tapered, max_bin);
                    bins.iter().map(|&k| full[k]).collect()
                })
                .collect()
        })
        .collect()
}

/// Segment-averaged cross spectrum `S_ij(f)` for every bin.
pub fn cross_spectrum(a: &[Vec<C64>], b: &[Vec<C64>]) -> Vec<C64> {
    let bins = a.first().map_or(0, Vec::len);
    let mut out = vec![C64::new(0.0, 0.0); bins];
    for (sa, sb) in a.iter().zip(b) {
        for (o, (x, y)) in out.iter_mut().zip(sa.iter().zip(sb)) {
            *o += x * y.conj();
        }
    }
    out
}

#[inline]
pub fn abs(z: C64) -> f64 {
    math::sqrt(z.re * z.re + z.im * z.im)
}
