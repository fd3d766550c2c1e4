//! Coherent reception and constellation metrology.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::golden_section;
use crate::signal::{
    apply_filter, frequency_shift, resample, tone_phases, ComplexEnvelope, FilterSpec,
};
use crate::transmitter::{ModFormat, PulseShape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RxMode {
    #[default]
    HomodyneIdeal,
    Heterodyne,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RxConfig {
    #[serde(default)]
    pub mode: RxMode,
    /// Intermediate frequency of the heterodyne LO.
    #[serde(default)]
    pub lo_offset_hz: f64,
    /// Two-sided width of the baseband lowpass.
    pub lowpass_bw_hz: f64,
    pub samples_per_symbol_out: usize,
    pub symbol_rate_baud: f64,
    /// Grid offset of the channel to detect.
    #[serde(default)]
    pub channel_offset_hz: f64,
}

impl RxConfig {
    pub fn homodyne(
        lowpass_bw_hz: f64,
        symbol_rate_baud: f64,
        samples_per_symbol_out: usize,
    ) -> Self {
        Self {
            mode: RxMode::HomodyneIdeal,
            lo_offset_hz: 0.0,
            lowpass_bw_hz,
            samples_per_symbol_out,
            symbol_rate_baud,
            channel_offset_hz: 0.0,
        }
    }

    pub fn heterodyne(self, lo_offset_hz: f64) -> Self {
        Self {
            mode: RxMode::Heterodyne,
            lo_offset_hz,
            ..self
        }
    }

    pub fn at_offset(self, channel_offset_hz: f64) -> Self {
        Self {
            channel_offset_hz,
            ..self
        }
    }

    pub fn validate(&self, sample_rate_hz: f64) -> Result<()> {
        if !(self.lowpass_bw_hz > 0.0 && self.lowpass_bw_hz <= sample_rate_hz) {
            return Err(Error::ReceiverConfig(format!(
                "lowpass bandwidth {} Hz must be positive and within the {} Hz grid",
                self.lowpass_bw_hz, sample_rate_hz
            )));
        }
        if self.samples_per_symbol_out == 0 {
            return Err(Error::ReceiverConfig(
                "samples per symbol must be at least 1".into(),
            ));
        }
        if !(self.symbol_rate_baud > 0.0 && self.symbol_rate_baud.is_finite()) {
            return Err(Error::ReceiverConfig(format!(
                "symbol rate must be positive, got {}",
                self.symbol_rate_baud
            )));
        }
        if self.channel_offset_hz.abs() >= sample_rate_hz / 2.0 {
            return Err(Error::ReceiverConfig(format!(
                "channel offset {} Hz lies outside the grid",
                self.channel_offset_hz
            )));
        }
        if self.mode == RxMode::Heterodyne {
            if self.lo_offset_hz <= 0.0 {
                return Err(Error::ReceiverConfig(
                    "heterodyne reception needs a positive LO offset".into(),
                ));
            }
            if self.lowpass_bw_hz / 2.0 >= self.lo_offset_hz {
                return Err(Error::ReceiverConfig(format!(
                    "lowpass half-width {} Hz reaches the image at the {} Hz IF",
                    self.lowpass_bw_hz / 2.0,
                    self.lo_offset_hz
                )));
            }
        }
        Ok(())
    }
}

/// Detects the configured channel and returns its complex baseband at
/// `samples_per_symbol_out · symbol_rate_baud`.
pub fn receive(x: &ComplexEnvelope, rx: &RxConfig) -> Result<ComplexEnvelope> {
    let fs = x.sample_rate_hz();
    rx.validate(fs)?;
    let base = match rx.mode {
        RxMode::HomodyneIdeal => {
            let sel = apply_filter(
                x,
                &FilterSpec::bandpass(rx.channel_offset_hz, rx.lowpass_bw_hz),
            )?;
            frequency_shift(&sel, -rx.channel_offset_hz)?
        }
        RxMode::Heterodyne => heterodyne(x, rx)?,
    };
    resample(
        &base,
        rx.symbol_rate_baud * rx.samples_per_symbol_out as f64,
    )
}

fn heterodyne(x: &ComplexEnvelope, rx: &RxConfig) -> Result<ComplexEnvelope> {
    let f_if = rx.lo_offset_hz;
    // front-end optical filter, then beat against the offset LO
    let sel = apply_filter(x, &FilterSpec::bandpass(rx.channel_offset_hz, 2.0 * f_if))?;
    let beat = frequency_shift(&sel, f_if - rx.channel_offset_hz)?;
    check_image(&beat, f_if, rx.lowpass_bw_hz)?;
    let phases = tone_phases(-f_if, x.sample_rate_hz(), x.len());
    let mixed: Vec<Complex64> = beat
        .samples()
        .iter()
        .zip(phases)
        .map(|(s, p)| Complex64::from_polar(2.0 * s.re, p))
        .collect();
    let mixed = ComplexEnvelope::new(mixed, x.sample_rate_hz(), x.center_freq_hz())?;
    apply_filter(&mixed, &FilterSpec::lowpass(rx.lowpass_bw_hz))
}

/// The real photocurrent folds every component at `f` onto `−f`. After
/// downconversion by the IF those images must miss the lowpass band.
fn check_image(beat: &ComplexEnvelope, f_if: f64, bw: f64) -> Result<()> {
    let spec = beat.spectrum();
    let fs = beat.sample_rate_hz();
    let total: f64 = spec.energy();
    if total == 0.0 {
        return Ok(());
    }
    let tol = 1e-9 * spec.bin_spacing_hz;
    for i in 0..spec.len() {
        let p = spec.bins[i].norm_sqr();
        if p <= 1e-20 * total {
            continue;
        }
        let image = (-spec.offset_hz(i) - f_if + fs / 2.0).rem_euclid(fs) - fs / 2.0;
        if image.abs() <= bw / 2.0 + tol {
            return Err(Error::ReceiverConfig(format!(
                "image of the component at {} Hz falls inside the {} Hz lowpass",
                spec.offset_hz(i) - f_if,
                bw
            )));
        }
    }
    Ok(())
}

/// Recovered constellation with its metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstellationReport {
    pub format: ModFormat,
    #[serde(skip)]
    pub recovered: Vec<Complex64>,
    #[serde(skip)]
    pub decisions: Vec<usize>,
    pub symbols: usize,
    pub evm_avg_pct: f64,
    pub evm_std_pct: f64,
    /// Worst adjacent-cluster Q (linear), `"inf"` for noiseless clusters.
    /// `None` when some cluster is empty.
    #[serde(with = "crate::serde_inf::option")]
    pub q_factor: Option<f64>,
    #[serde(with = "crate::serde_inf::option")]
    pub q_factor_db: Option<f64>,
    /// Symbol error rate against ground truth, when known.
    pub ser: Option<f64>,
    pub cluster_means: Vec<Complex64>,
    /// RMS distance of each cluster's members from its mean.
    pub cluster_sigmas: Vec<f64>,
    pub cluster_counts: Vec<usize>,
    pub timing_phase: usize,
    pub carrier_phase_rad: f64,
    /// Decisions are only valid up to the format's rotational symmetry.
    pub rotational_ambiguity: bool,
}

impl ConstellationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Per-symbol export, columns `index,re,im,decision`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,re,im,decision\n");
        for (k, (z, d)) in self.recovered.iter().zip(&self.decisions).enumerate() {
            let _ = writeln!(out, "{k},{},{},{d}", z.re, z.im);
        }
        out
    }
}

/// Blocks used for the EVM mean and spread.
pub const EVM_BLOCKS: usize = 10;

fn rotate_scale(samples: &[Complex64], theta: f64) -> Vec<Complex64> {
    let rot = Complex64::from_polar(1.0, theta);
    let p = samples.iter().map(|z| z.norm_sqr()).sum::<f64>() / samples.len() as f64;
    let g = if p > 0.0 { rot / p.sqrt() } else { rot };
    samples.iter().map(|z| z * g).collect()
}

fn dd_error(samples: &[Complex64], pts: &[Complex64]) -> f64 {
    samples
        .iter()
        .map(|z| {
            pts.iter()
                .map(|p| (z - p).norm_sqr())
                .fold(f64::INFINITY, f64::min)
        })
        .sum::<f64>()
        / samples.len() as f64
}

/// Blind M-power phase estimate.
fn m_power_phase(samples: &[Complex64], format: ModFormat) -> f64 {
    let m = format.phase_symmetry() as i32;
    let acc: Complex64 = samples.iter().map(|z| z.powi(m)).sum();
    let reference: Complex64 = format.points().iter().map(|p| p.powi(m)).sum();
    if acc.norm() == 0.0 {
        return 0.0;
    }
    -(acc.arg() - reference.arg()) / m as f64
}

/// Phase that minimizes the decision-directed error, searched around the
/// M-power estimate, with the resulting error.
fn fine_phase(samples: &[Complex64], format: ModFormat) -> (f64, f64) {
    let pts = format.points();
    let span = PI / format.phase_symmetry() as f64;
    let start = m_power_phase(samples, format);
    let cost = |th: f64| dd_error(&rotate_scale(samples, th), &pts);
    const GRID: usize = 64;
    let step = 2.0 * span / GRID as f64;
    let (mut best_th, mut best_c) = (start, cost(start));
    for k in 0..GRID {
        let th = start - span + k as f64 * step;
        let c = cost(th);
        if c < best_c {
            best_th = th;
            best_c = c;
        }
    }
    let (th, c) = golden_section(cost, best_th - step, best_th + step, 40);
    if c < best_c {
        (th, c)
    } else {
        (best_th, best_c)
    }
}

/// Symbol-spaced samples for one timing phase.
fn decimate(x: &[Complex64], sps: usize, phase: usize) -> Vec<Complex64> {
    x.iter().skip(phase).step_by(sps).copied().collect()
}

fn samples_per_symbol(x: &ComplexEnvelope, rate_baud: f64) -> Result<usize> {
    let exact = x.sample_rate_hz() / rate_baud;
    let sps = exact.round();
    if sps < 1.0 || (exact - sps).abs() > 1e-9 * exact {
        return Err(Error::ReceiverConfig(format!(
            "sample rate {} Hz is not an integer multiple of the {rate_baud} Bd symbol rate",
            x.sample_rate_hz()
        )));
    }
    if !x.len().is_multiple_of(sps as usize) {
        return Err(Error::ReceiverConfig(format!(
            "{} samples do not hold a whole number of {sps}-sample symbols",
            x.len()
        )));
    }
    Ok(sps as usize)
}

/// Timing, carrier phase and amplitude recovery followed by nearest-point
/// decisions. Both pulse shapes are sampled at their maxima: the raised
/// cosine is a full Nyquist response at the transmitter, so no further
/// matched filtering is needed for zero ISI. `truth` resolves the residual
/// rotational ambiguity.
pub fn recover_symbols(
    x: &ComplexEnvelope,
    format: ModFormat,
    rate_baud: f64,
    shape: &PulseShape,
    truth: Option<&[usize]>,
) -> Result<ConstellationReport> {
    recover_symbols_at(x, format, rate_baud, shape, truth, None)
}

/// [`recover_symbols`] with the timing phase optionally locked instead of
/// searched, e.g. to a clock recovered from another channel.
pub fn recover_symbols_at(
    x: &ComplexEnvelope,
    format: ModFormat,
    rate_baud: f64,
    shape: &PulseShape,
    truth: Option<&[usize]>,
    timing: Option<usize>,
) -> Result<ConstellationReport> {
    shape.validate()?;
    let sps = samples_per_symbol(x, rate_baud)?;
    let count = x.len() / sps;
    if let Some(t) = truth {
        if t.len() != count {
            return Err(Error::ReceiverConfig(format!(
                "{} reference symbols for {count} received symbols",
                t.len()
            )));
        }
    }
    let mut best: Option<(usize, f64, f64)> = None;
    if let Some(t) = timing.filter(|&t| t >= sps) {
        return Err(Error::ReceiverConfig(format!(
            "timing phase {t} outside 0..{sps}"
        )));
    }
    let phases = match timing {
        Some(t) => t..t + 1,
        None => 0..sps,
    };
    for phase in phases {
        let s = decimate(x.samples(), sps, phase);
        let (th, c) = fine_phase(&s, format);
        if best.is_none_or(|(_, _, bc)| c < bc) {
            best = Some((phase, th, c));
        }
    }
    let (timing_phase, mut theta, _) = best.expect("at least one timing phase");
    let raw = decimate(x.samples(), sps, timing_phase);
    let pts = format.points();
    let mut recovered = rotate_scale(&raw, theta);
    let mut decisions: Vec<usize> = recovered.iter().map(|z| format.nearest(*z)).collect();

    let m = format.phase_symmetry();
    let mut ser = None;
    if let Some(t) = truth {
        let mut best_k = (0, usize::MAX);
        for k in 0..m {
            let rot = Complex64::from_polar(1.0, 2.0 * PI * k as f64 / m as f64);
            let errs = recovered
                .iter()
                .zip(t)
                .filter(|(z, &ti)| format.nearest(*z * rot) != ti)
                .count();
            if errs < best_k.1 {
                best_k = (k, errs);
            }
        }
        if best_k.0 != 0 {
            let extra = 2.0 * PI * best_k.0 as f64 / m as f64;
            theta += extra;
            recovered = rotate_scale(&raw, theta);
            decisions = recovered.iter().map(|z| format.nearest(*z)).collect();
        }
        ser = Some(best_k.1 as f64 / count as f64);
    }
    let (evm_avg_pct, evm_std_pct) = compute_evm(&recovered, format);
    let stats = cluster_stats(&recovered, &decisions, pts.len());
    let q = compute_q_factor(&recovered, &decisions, format).ok();
    Ok(ConstellationReport {
        format,
        symbols: count,
        evm_avg_pct,
        evm_std_pct,
        q_factor: q.map(|q| q.q_factor),
        q_factor_db: q.map(|q| q.q_factor_db),
        ser,
        cluster_means: stats.iter().map(|c| c.mean).collect(),
        cluster_sigmas: stats.iter().map(|c| c.rms_spread).collect(),
        cluster_counts: stats.iter().map(|c| c.count).collect(),
        timing_phase,
        carrier_phase_rad: crate::optim::wrap_pi(theta),
        rotational_ambiguity: truth.is_none() && m > 1,
        recovered,
        decisions,
    })
}

fn block_bounds(n: usize, blocks: usize) -> Vec<(usize, usize)> {
    let b = blocks.min(n).max(1);
    (0..b).map(|k| (k * n / b, (k + 1) * n / b)).collect()
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    (mean, var.sqrt())
}

fn evm_blocks(
    recovered: &[Complex64],
    refs: impl Fn(usize, Complex64) -> Complex64,
    format: ModFormat,
) -> (f64, f64) {
    if recovered.is_empty() {
        return (0.0, 0.0);
    }
    let pts = format.points();
    let ref_power = pts.iter().map(|p| p.norm_sqr()).sum::<f64>() / pts.len() as f64;
    let per_block: Vec<f64> = block_bounds(recovered.len(), EVM_BLOCKS)
        .into_iter()
        .map(|(a, b)| {
            let e = (a..b)
                .map(|k| (recovered[k] - refs(k, recovered[k])).norm_sqr())
                .sum::<f64>()
                / (b - a) as f64;
            100.0 * (e / ref_power).sqrt()
        })
        .collect();
    mean_std(&per_block)
}

/// Decision-directed EVM in percent of the constellation RMS, as mean and
/// sample standard deviation over [`EVM_BLOCKS`] consecutive blocks.
pub fn compute_evm(recovered: &[Complex64], format: ModFormat) -> (f64, f64) {
    let pts = format.points();
    evm_blocks(recovered, |_, z| pts[format.nearest(z)], format)
}

/// EVM against the transmitted points instead of the decisions.
pub fn compute_evm_data_aided(
    recovered: &[Complex64],
    truth: &[usize],
    format: ModFormat,
) -> (f64, f64) {
    let pts = format.points();
    evm_blocks(
        &recovered[..recovered.len().min(truth.len())],
        |k, _| pts[truth[k]],
        format,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Cluster {
    mean: Complex64,
    rms_spread: f64,
    count: usize,
}

fn cluster_stats(recovered: &[Complex64], decisions: &[usize], n_points: usize) -> Vec<Cluster> {
    let mut sum = vec![Complex64::new(0.0, 0.0); n_points];
    let mut count = vec![0usize; n_points];
    for (z, &d) in recovered.iter().zip(decisions) {
        sum[d] += z;
        count[d] += 1;
    }
    let means: Vec<Complex64> = sum
        .iter()
        .zip(&count)
        .map(|(s, &c)| {
            if c > 0 {
                s / c as f64
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    let mut spread = vec![0.0; n_points];
    for (z, &d) in recovered.iter().zip(decisions) {
        spread[d] += (z - means[d]).norm_sqr();
    }
    (0..n_points)
        .map(|i| Cluster {
            mean: means[i],
            rms_spread: if count[i] > 0 {
                (spread[i] / count[i] as f64).sqrt()
            } else {
                0.0
            },
            count: count[i],
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QFactor {
    #[serde(with = "crate::serde_inf")]
    pub q_factor: f64,
    #[serde(with = "crate::serde_inf")]
    pub q_factor_db: f64,
    /// Constellation indices of the limiting cluster pair.
    pub pair: (usize, usize),
}

/// Worst-case Q over adjacent clusters: `|μa − μb| / (σa + σb)` with means
/// and deviations taken from the projections onto the line joining the two
/// empirical cluster means. Adjacent means the ideal points lie at minimum
/// distance. `q_factor_db = 20·log10(q_factor)`.
pub fn compute_q_factor(
    recovered: &[Complex64],
    decisions: &[usize],
    format: ModFormat,
) -> Result<QFactor> {
    let pts = format.points();
    let mut members: Vec<Vec<Complex64>> = vec![Vec::new(); pts.len()];
    for (z, &d) in recovered.iter().zip(decisions) {
        if d >= pts.len() {
            return Err(Error::InsufficientStatistics(format!(
                "decision {d} is not a {format} point"
            )));
        }
        members[d].push(*z);
    }
    if let Some(i) = members.iter().position(|m| m.is_empty()) {
        return Err(Error::InsufficientStatistics(format!(
            "{format} cluster {i} is empty"
        )));
    }
    let dmin = format.min_distance();
    let mean = |v: &[Complex64]| v.iter().sum::<Complex64>() / v.len() as f64;
    let mut best: Option<QFactor> = None;
    for a in 0..pts.len() {
        for b in a + 1..pts.len() {
            if (pts[a] - pts[b]).norm() > dmin * (1.0 + 1e-6) {
                continue;
            }
            let (ma, mb) = (mean(&members[a]), mean(&members[b]));
            let axis = mb - ma;
            let dist = axis.norm();
            if dist == 0.0 {
                return Err(Error::InsufficientStatistics(format!(
                    "clusters {a} and {b} coincide"
                )));
            }
            let u = axis.conj() / dist;
            let proj_sd = |v: &[Complex64], m: Complex64| {
                let var = v.iter().map(|z| ((z - m) * u).re.powi(2)).sum::<f64>() / v.len() as f64;
                var.sqrt()
            };
            let s = proj_sd(&members[a], ma) + proj_sd(&members[b], mb);
            let q = if s <= 1e-9 * dist {
                f64::INFINITY
            } else {
                dist / s
            };
            if best.is_none_or(|bq| q < bq.q_factor) {
                best = Some(QFactor {
                    q_factor: q,
                    q_factor_db: 20.0 * q.log10(),
                    pair: (a, b),
                });
            }
        }
    }
    best.ok_or_else(|| {
        Error::InsufficientStatistics(format!("{format} has no adjacent cluster pair"))
    })
}

/// Folded amplitude histograms of the I and Q waveforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EyeDiagram {
    pub samples_per_symbol: usize,
    pub span_symbols: usize,
    /// Centre of each amplitude row.
    pub amplitudes: Vec<f64>,
    /// `i_hist[row][time]`.
    pub i_hist: Vec<Vec<u32>>,
    pub q_hist: Vec<Vec<u32>>,
}

impl EyeDiagram {
    pub fn time_bins(&self) -> usize {
        self.samples_per_symbol * self.span_symbols
    }

    /// Histogram matrix, columns `component,amplitude,t0,t1,...` where `tk`
    /// is the k-th sample within the folded span.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("component,amplitude");
        for t in 0..self.time_bins() {
            let _ = write!(out, ",t{t}");
        }
        out.push('\n');
        for (name, hist) in [("I", &self.i_hist), ("Q", &self.q_hist)] {
            for (a, row) in self.amplitudes.iter().zip(hist) {
                let _ = write!(out, "{name},{a}");
                for c in row {
                    let _ = write!(out, ",{c}");
                }
                out.push('\n');
            }
        }
        out
    }
}

pub const EYE_ROWS: usize = 64;

/// Folds the waveform modulo `span_symbols` symbol periods.
pub fn eye_diagram(x: &ComplexEnvelope, rate_baud: f64, span_symbols: usize) -> Result<EyeDiagram> {
    let sps = samples_per_symbol(x, rate_baud)?;
    if sps < 8 {
        return Err(Error::ReceiverConfig(format!(
            "eye diagrams need at least 8 samples per symbol, got {sps}"
        )));
    }
    if span_symbols == 0 {
        return Err(Error::ReceiverConfig(
            "eye span must be at least one symbol".into(),
        ));
    }
    let peak = x
        .samples()
        .iter()
        .map(|z| z.re.abs().max(z.im.abs()))
        .fold(0.0, f64::max);
    let amp = if peak > 0.0 { peak * 1.05 } else { 1.0 };
    let row_of = |v: f64| (((v + amp) / (2.0 * amp) * EYE_ROWS as f64) as usize).min(EYE_ROWS - 1);
    let cols = sps * span_symbols;
    let mut i_hist = vec![vec![0u32; cols]; EYE_ROWS];
    let mut q_hist = vec![vec![0u32; cols]; EYE_ROWS];
    for (k, z) in x.samples().iter().enumerate() {
        let t = k % cols;
        i_hist[row_of(z.re)][t] += 1;
        q_hist[row_of(z.im)][t] += 1;
    }
    let amplitudes = (0..EYE_ROWS)
        .map(|r| -amp + (r as f64 + 0.5) * 2.0 * amp / EYE_ROWS as f64)
        .collect();
    Ok(EyeDiagram {
        samples_per_symbol: sps,
        span_symbols,
        amplitudes,
        i_hist,
        q_hist,
    })
}
