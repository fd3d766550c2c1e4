//! Complex-envelope signals on a periodic sampling window.
//!
//! Every optical field in the simulator is a [`ComplexEnvelope`]: uniformly
//! sampled complex amplitudes (√mW) referenced to an absolute optical
//! frequency. The window is treated as periodic, so every spectral operation
//! is an exact DFT-domain operation with circular semantics.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bins whose power is below this fraction of the strongest bin are treated
/// as empty when measuring occupied bandwidth.
pub const OCCUPANCY_FLOOR: f64 = 1e-20;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

/// Unnormalized forward DFT in place.
pub(crate) fn fft_forward(buf: &mut [Complex64]) {
    plan(buf.len(), false).process(buf);
}

/// Inverse DFT in place, scaled by 1/N so that it inverts [`fft_forward`].
pub(crate) fn fft_inverse(buf: &mut [Complex64]) {
    plan(buf.len(), true).process(buf);
    let scale = 1.0 / buf.len() as f64;
    buf.iter_mut().for_each(|v| *v *= scale);
}

/// Signed frequency index of DFT bin `j` for a transform of length `n`.
pub(crate) fn signed_index(j: usize, n: usize) -> i64 {
    if j < n.div_ceil(2) {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

/// Number of whole cycles a tone of `freq_hz` completes in a window of `n`
/// samples at `sample_rate_hz`, if that number is an integer.
pub fn commensurate_cycles(freq_hz: f64, sample_rate_hz: f64, n: usize) -> Option<i64> {
    let cycles = freq_hz * n as f64 / sample_rate_hz;
    let rounded = cycles.round();
    if (cycles - rounded).abs() <= 1e-9 * cycles.abs().max(1.0) {
        Some(rounded as i64)
    } else {
        None
    }
}

/// Phase `2π·f·k/fs` of sample `k`, reduced exactly when the tone is
/// commensurate with the window.
pub(crate) fn tone_phases(freq_hz: f64, sample_rate_hz: f64, n: usize) -> Vec<f64> {
    match commensurate_cycles(freq_hz, sample_rate_hz, n) {
        Some(c) => {
            let c = c.rem_euclid(n as i64) as u128;
            (0..n as u128)
                .map(|k| 2.0 * PI * ((c * k) % n as u128) as f64 / n as f64)
                .collect()
        }
        None => {
            let ratio = freq_hz / sample_rate_hz;
            (0..n)
                .map(|k| {
                    let cyc = ratio * k as f64;
                    2.0 * PI * (cyc - cyc.floor())
                })
                .collect()
        }
    }
}

/// Uniformly sampled complex baseband field referenced to `center_freq_hz`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexEnvelope {
    samples: Vec<Complex64>,
    sample_rate_hz: f64,
    center_freq_hz: f64,
}

impl ComplexEnvelope {
    pub fn new(samples: Vec<Complex64>, sample_rate_hz: f64, center_freq_hz: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidEnvelope(
                "envelope needs at least one sample".into(),
            ));
        }
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::InvalidEnvelope(format!(
                "sample rate must be positive and finite, got {sample_rate_hz}"
            )));
        }
        if !center_freq_hz.is_finite() {
            return Err(Error::InvalidEnvelope(
                "center frequency must be finite".into(),
            ));
        }
        if samples
            .iter()
            .any(|s| !s.re.is_finite() || !s.im.is_finite())
        {
            return Err(Error::InvalidEnvelope("samples must be finite".into()));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
            center_freq_hz,
        })
    }

    pub fn zeros(len: usize, sample_rate_hz: f64, center_freq_hz: f64) -> Result<Self> {
        Self::new(
            vec![Complex64::new(0.0, 0.0); len],
            sample_rate_hz,
            center_freq_hz,
        )
    }

    /// A single tone `amplitude·e^{i(2π·offset·t + phase)}`.
    pub fn tone(
        len: usize,
        sample_rate_hz: f64,
        center_freq_hz: f64,
        offset_hz: f64,
        amplitude: f64,
        phase_rad: f64,
    ) -> Result<Self> {
        let phases = tone_phases(offset_hz, sample_rate_hz, len);
        let samples = phases
            .into_iter()
            .map(|p| Complex64::from_polar(amplitude, p + phase_rad))
            .collect();
        Self::new(samples, sample_rate_hz, center_freq_hz)
    }

    pub(crate) fn from_parts_unchecked(
        samples: Vec<Complex64>,
        sample_rate_hz: f64,
        center_freq_hz: f64,
    ) -> Self {
        Self {
            samples,
            sample_rate_hz,
            center_freq_hz,
        }
    }

    /// Same grid, new samples.
    pub(crate) fn with_samples(&self, samples: Vec<Complex64>) -> Self {
        debug_assert_eq!(samples.len(), self.samples.len());
        Self::from_parts_unchecked(samples, self.sample_rate_hz, self.center_freq_hz)
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn center_freq_hz(&self) -> f64 {
        self.center_freq_hz
    }

    /// Duration of the periodic window.
    pub fn window_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }

    pub fn bin_spacing_hz(&self) -> f64 {
        self.sample_rate_hz / self.samples.len() as f64
    }

    /// Mean power, mean(|sample|²), in mW.
    pub fn power(&self) -> f64 {
        self.energy() / self.samples.len() as f64
    }

    /// Sum of |sample|².
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum()
    }

    pub fn scale(&self, factor: Complex64) -> Self {
        self.with_samples(self.samples.iter().map(|s| s * factor).collect())
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.samples.len() == other.samples.len()
            && rel_eq(self.sample_rate_hz, other.sample_rate_hz)
            && rel_eq(self.center_freq_hz, other.center_freq_hz)
    }

    pub(crate) fn check_grid(&self, other: &Self) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "({} samples, {} Hz, {} Hz) vs ({} samples, {} Hz, {} Hz)",
                self.len(),
                self.sample_rate_hz,
                self.center_freq_hz,
                other.len(),
                other.sample_rate_hz,
                other.center_freq_hz
            )))
        }
    }

    /// Unnormalized DFT of the samples, in natural (unshifted) order.
    pub(crate) fn dft(&self) -> Vec<Complex64> {
        let mut buf = self.samples.clone();
        fft_forward(&mut buf);
        buf
    }

    pub(crate) fn with_dft(&self, mut bins: Vec<Complex64>) -> Self {
        fft_inverse(&mut bins);
        self.with_samples(bins)
    }

    /// Baseband frequency of natural-order DFT bin `j`.
    pub(crate) fn bin_freq(&self, j: usize) -> f64 {
        signed_index(j, self.len()) as f64 * self.bin_spacing_hz()
    }

    pub fn spectrum(&self) -> SpectrumView {
        SpectrumView::from_envelope(self)
    }

    /// Band-limited (trigonometric) interpolation at an arbitrary time within
    /// the periodic window.
    pub fn interpolate_at(&self, t_s: f64) -> Complex64 {
        let bins = self.dft();
        let n = self.len() as f64;
        bins.iter()
            .enumerate()
            .map(|(j, b)| b * Complex64::from_polar(1.0, 2.0 * PI * self.bin_freq(j) * t_s))
            .sum::<Complex64>()
            / n
    }

    /// Lowest and highest baseband frequency carrying power above
    /// [`OCCUPANCY_FLOOR`] relative to the strongest bin. `None` for an
    /// all-zero envelope.
    pub fn occupied_band(&self) -> Option<(f64, f64)> {
        occupied_band_of(&self.dft(), self)
    }

    /// Export as CSV with columns `index,re,im`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,re,im\n");
        for (k, s) in self.samples.iter().enumerate() {
            let _ = writeln!(out, "{k},{},{}", s.re, s.im);
        }
        out
    }
}

pub(crate) fn occupied_band_of(bins: &[Complex64], grid: &ComplexEnvelope) -> Option<(f64, f64)> {
    let peak = bins.iter().map(|b| b.norm_sqr()).fold(0.0, f64::max);
    if peak == 0.0 {
        return None;
    }
    let floor = peak * OCCUPANCY_FLOOR;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (j, b) in bins.iter().enumerate() {
        if b.norm_sqr() > floor {
            let f = grid.bin_freq(j);
            lo = lo.min(f);
            hi = hi.max(f);
        }
    }
    Some((lo, hi))
}

fn rel_eq(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

/// DFT of an envelope with unitary scaling, bins in ascending frequency.
///
/// `sum(|bin|²)` equals `sum(|sample|²)` of the originating envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumView {
    pub bins: Vec<Complex64>,
    pub bin_spacing_hz: f64,
    pub center_freq_hz: f64,
    /// Signed index of `bins[0]`; bin `i` sits at `(first_index + i)·bin_spacing_hz`.
    pub first_index: i64,
}

impl SpectrumView {
    pub fn from_envelope(x: &ComplexEnvelope) -> Self {
        let n = x.len();
        let natural = x.dft();
        let norm = 1.0 / (n as f64).sqrt();
        let first_index = -((n / 2) as i64);
        let bins = (0..n)
            .map(|i| {
                let signed = first_index + i as i64;
                natural[signed.rem_euclid(n as i64) as usize] * norm
            })
            .collect();
        Self {
            bins,
            bin_spacing_hz: x.bin_spacing_hz(),
            center_freq_hz: x.center_freq_hz(),
            first_index,
        }
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn offset_hz(&self, i: usize) -> f64 {
        (self.first_index + i as i64) as f64 * self.bin_spacing_hz
    }

    /// Index of the bin at `offset_hz`, if the offset falls on a bin.
    pub fn index_of(&self, offset_hz: f64) -> Option<usize> {
        let k = offset_hz / self.bin_spacing_hz;
        let r = k.round();
        if (k - r).abs() > 1e-6 {
            return None;
        }
        let i = r as i64 - self.first_index;
        (i >= 0 && (i as usize) < self.bins.len()).then_some(i as usize)
    }

    /// Complex amplitude of a tone at `offset_hz` (a tone `A·e^{iθ}` reads
    /// back as `A·e^{iθ}`).
    pub fn tone(&self, offset_hz: f64) -> Option<Complex64> {
        let n = self.bins.len() as f64;
        self.index_of(offset_hz).map(|i| self.bins[i] / n.sqrt())
    }

    /// Power contributed by bin `i` to the envelope's mean power, in mW.
    pub fn bin_power_mw(&self, i: usize) -> f64 {
        self.bins[i].norm_sqr() / self.bins.len() as f64
    }

    pub fn energy(&self) -> f64 {
        self.bins.iter().map(|b| b.norm_sqr()).sum()
    }

    /// Mean power (mW) carried by bins with offsets in `[lo, hi]`.
    pub fn band_power_mw(&self, lo_hz: f64, hi_hz: f64) -> f64 {
        let tol = 1e-9 * self.bin_spacing_hz;
        (0..self.bins.len())
            .filter(|&i| {
                let f = self.offset_hz(i);
                f >= lo_hz - tol && f <= hi_hz + tol
            })
            .map(|i| self.bin_power_mw(i))
            .sum()
    }

    /// CSV with columns `offset_hz,power_dbm,phase_rad`. Empty bins are
    /// floored at -400 dBm.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("offset_hz,power_dbm,phase_rad\n");
        for (i, b) in self.bins.iter().enumerate() {
            let p = self.bin_power_mw(i).max(1e-40);
            let _ = writeln!(
                out,
                "{},{},{}",
                self.offset_hz(i),
                10.0 * p.log10(),
                b.arg()
            );
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    BrickwallBandpass,
    BrickwallLowpass,
    RaisedCosine,
    GaussianBpf,
}

/// Spectral filter. `bandwidth_hz` is the two-sided passband width: the
/// brickwall edges, the 6 dB width of the raised cosine, or the 3 dB width of
/// the Gaussian. Lowpass filters ignore `center_offset_hz`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub kind: FilterKind,
    #[serde(default)]
    pub center_offset_hz: f64,
    pub bandwidth_hz: f64,
    #[serde(default)]
    pub rolloff: f64,
}

impl FilterSpec {
    pub fn lowpass(bandwidth_hz: f64) -> Self {
        Self {
            kind: FilterKind::BrickwallLowpass,
            center_offset_hz: 0.0,
            bandwidth_hz,
            rolloff: 0.0,
        }
    }

    pub fn bandpass(center_offset_hz: f64, bandwidth_hz: f64) -> Self {
        Self {
            kind: FilterKind::BrickwallBandpass,
            center_offset_hz,
            bandwidth_hz,
            rolloff: 0.0,
        }
    }

    pub fn raised_cosine(center_offset_hz: f64, bandwidth_hz: f64, rolloff: f64) -> Self {
        Self {
            kind: FilterKind::RaisedCosine,
            center_offset_hz,
            bandwidth_hz,
            rolloff,
        }
    }

    pub fn gaussian(center_offset_hz: f64, bandwidth_hz: f64) -> Self {
        Self {
            kind: FilterKind::GaussianBpf,
            center_offset_hz,
            bandwidth_hz,
            rolloff: 0.0,
        }
    }

    fn center(&self) -> f64 {
        match self.kind {
            FilterKind::BrickwallLowpass => 0.0,
            _ => self.center_offset_hz,
        }
    }

    pub(crate) fn validate(&self, sample_rate_hz: f64) -> Result<()> {
        if !(self.bandwidth_hz > 0.0 && self.bandwidth_hz.is_finite()) {
            return Err(Error::InvalidFilter(format!(
                "bandwidth must be positive, got {}",
                self.bandwidth_hz
            )));
        }
        if self.bandwidth_hz > sample_rate_hz * (1.0 + 1e-12) {
            return Err(Error::InvalidFilter(format!(
                "bandwidth {} Hz exceeds sample rate {} Hz",
                self.bandwidth_hz, sample_rate_hz
            )));
        }
        if self.kind == FilterKind::RaisedCosine && !(0.0..=1.0).contains(&self.rolloff) {
            return Err(Error::InvalidFilter(format!(
                "rolloff must lie in [0, 1], got {}",
                self.rolloff
            )));
        }
        Ok(())
    }

    /// Real, non-negative amplitude response at baseband offset `f_hz`.
    /// `tol_hz` widens brickwall edges to absorb rounding of bin positions.
    pub fn response(&self, f_hz: f64, tol_hz: f64) -> f64 {
        let d = (f_hz - self.center()).abs();
        let half = self.bandwidth_hz / 2.0;
        match self.kind {
            FilterKind::BrickwallBandpass | FilterKind::BrickwallLowpass => {
                if d <= half + tol_hz {
                    1.0
                } else {
                    0.0
                }
            }
            FilterKind::RaisedCosine => {
                raised_cosine_response(d, self.bandwidth_hz, self.rolloff, tol_hz)
            }
            FilterKind::GaussianBpf => (-(std::f64::consts::LN_2 / 2.0) * (d / half).powi(2)).exp(),
        }
    }
}

/// Raised-cosine amplitude response at distance `d` from the center for a
/// 6 dB width `width` and roll-off `beta`.
pub(crate) fn raised_cosine_response(d: f64, width: f64, beta: f64, tol: f64) -> f64 {
    let inner = (1.0 - beta) * width / 2.0;
    let outer = (1.0 + beta) * width / 2.0;
    if beta == 0.0 {
        return if (d - width / 2.0).abs() <= tol {
            0.5
        } else if d < width / 2.0 {
            1.0
        } else {
            0.0
        };
    }
    if d <= inner {
        1.0
    } else if d <= outer {
        0.5 * (1.0 + (PI / (beta * width) * (d - inner)).cos())
    } else {
        0.0
    }
}

/// Pointwise sum of two envelopes on the same grid.
pub fn combine(a: &ComplexEnvelope, b: &ComplexEnvelope) -> Result<ComplexEnvelope> {
    a.check_grid(b)?;
    Ok(a.with_samples(
        a.samples
            .iter()
            .zip(&b.samples)
            .map(|(x, y)| x + y)
            .collect(),
    ))
}

/// Moves the spectrum by `delta_hz` (multiplication by `e^{i2π·Δ·t}`).
pub fn frequency_shift(x: &ComplexEnvelope, delta_hz: f64) -> Result<ComplexEnvelope> {
    if delta_hz == 0.0 {
        return Ok(x.clone());
    }
    let nyq = x.sample_rate_hz() / 2.0;
    if let Some((lo, hi)) = x.occupied_band() {
        let (lo, hi) = (lo + delta_hz, hi + delta_hz);
        if lo < -nyq || hi >= nyq {
            return Err(Error::Aliasing(format!(
                "shift by {delta_hz} Hz moves occupied band to [{lo}, {hi}] Hz, outside ±{nyq} Hz"
            )));
        }
    }
    let phases = tone_phases(delta_hz, x.sample_rate_hz(), x.len());
    Ok(x.with_samples(
        x.samples
            .iter()
            .zip(phases)
            .map(|(s, p)| s * Complex64::from_polar(1.0, p))
            .collect(),
    ))
}

/// Multiplies every DFT bin by the filter's amplitude response.
pub fn apply_filter(x: &ComplexEnvelope, f: &FilterSpec) -> Result<ComplexEnvelope> {
    f.validate(x.sample_rate_hz())?;
    let mut bins = x.dft();
    let tol = 1e-9 * x.bin_spacing_hz();
    for (j, b) in bins.iter_mut().enumerate() {
        let h = f.response(x.bin_freq(j), tol);
        if h != 1.0 {
            *b *= h;
        }
    }
    Ok(x.with_dft(bins))
}

/// Whether [`delay`] also rotates the optical carrier phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CarrierPhase {
    #[default]
    Ignore,
    Track,
}

/// Circular delay by `tau_s`: every bin is multiplied by `e^{-i2π·f·τ}`.
/// With [`CarrierPhase::Track`] the field is additionally rotated by
/// `e^{-i2π·f_c·τ}`.
pub fn delay(x: &ComplexEnvelope, tau_s: f64, carrier: CarrierPhase) -> ComplexEnvelope {
    if tau_s == 0.0 {
        return x.clone();
    }
    let n = x.len();
    let shift_samples = tau_s * x.sample_rate_hz();
    let mut bins = x.dft();
    for (j, b) in bins.iter_mut().enumerate() {
        let p = signed_index(j, n) as f64 * shift_samples;
        let turns = p - (n as f64) * (p / n as f64).floor();
        *b *= Complex64::from_polar(1.0, -2.0 * PI * turns / n as f64);
    }
    let out = x.with_dft(bins);
    match carrier {
        CarrierPhase::Ignore => out,
        CarrierPhase::Track => {
            let cyc = x.center_freq_hz() * tau_s;
            out.scale(Complex64::from_polar(1.0, -2.0 * PI * (cyc - cyc.floor())))
        }
    }
}

/// Band-limited resampling to `new_rate_hz` by zero-padding or truncating the
/// spectrum. The new sample count must be an integer.
pub fn resample(x: &ComplexEnvelope, new_rate_hz: f64) -> Result<ComplexEnvelope> {
    if rel_eq(new_rate_hz, x.sample_rate_hz()) {
        return Ok(x.clone());
    }
    let n = x.len();
    let exact = n as f64 * new_rate_hz / x.sample_rate_hz();
    let m = exact.round();
    if m < 1.0 || (exact - m).abs() > 1e-9 * exact {
        return Err(Error::GridMismatch(format!(
            "resampling {n} samples from {} Hz to {new_rate_hz} Hz gives a non-integer length {exact}",
            x.sample_rate_hz()
        )));
    }
    let m = m as usize;
    let bins = x.dft();
    if m < n {
        if let Some((lo, hi)) = occupied_band_of(&bins, x) {
            let nyq = new_rate_hz / 2.0;
            if lo < -nyq || hi >= nyq {
                return Err(Error::Aliasing(format!(
                    "occupied band [{lo}, {hi}] Hz does not fit the new rate {new_rate_hz} Hz"
                )));
            }
        }
    }
    let scale = m as f64 / n as f64;
    let mut out = vec![Complex64::new(0.0, 0.0); m];
    for (j, b) in bins.iter().enumerate() {
        let s = signed_index(j, n);
        if s >= -((m / 2) as i64) && s < m.div_ceil(2) as i64 {
            out[s.rem_euclid(m as i64) as usize] += b * scale;
        }
    }
    fft_inverse(&mut out);
    ComplexEnvelope::new(out, new_rate_hz, x.center_freq_hz())
}
