//! Parent-channel generation: symbol mapping, pulse shaping and the
//! coherent two-tone carrier pair.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt::{self, Write as _};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::link::{apply_weight, WeightPlan};
use crate::modulators::{bessel_j, iq_modulate, mzm_modulate, MzmParams, RfDrive};
use crate::signal::{
    apply_filter, combine, fft_forward, fft_inverse, raised_cosine_response, signed_index,
    ComplexEnvelope, FilterSpec,
};

/// Constellation formats. Points have unit mean energy and carry Gray labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModFormat {
    #[serde(rename = "BPSK", alias = "bpsk")]
    Bpsk,
    #[serde(rename = "QPSK", alias = "qpsk")]
    Qpsk,
    #[serde(rename = "PAM4", alias = "pam4")]
    Pam4,
    #[serde(rename = "QAM16", alias = "qam16")]
    Qam16,
}

const GRAY2: [u8; 4] = [0b00, 0b01, 0b11, 0b10];

impl ModFormat {
    pub const ALL: [ModFormat; 4] = [
        ModFormat::Bpsk,
        ModFormat::Qpsk,
        ModFormat::Pam4,
        ModFormat::Qam16,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ModFormat::Bpsk => "BPSK",
            ModFormat::Qpsk => "QPSK",
            ModFormat::Pam4 => "PAM4",
            ModFormat::Qam16 => "QAM16",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let norm: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect();
        match norm.to_ascii_uppercase().as_str() {
            "BPSK" => Some(ModFormat::Bpsk),
            "QPSK" => Some(ModFormat::Qpsk),
            "PAM4" => Some(ModFormat::Pam4),
            "QAM16" | "16QAM" => Some(ModFormat::Qam16),
            _ => None,
        }
    }

    pub fn order(&self) -> usize {
        match self {
            ModFormat::Bpsk => 2,
            ModFormat::Qpsk | ModFormat::Pam4 => 4,
            ModFormat::Qam16 => 16,
        }
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.order().trailing_zeros() as usize
    }

    /// Constellation points, unit mean energy.
    pub fn points(&self) -> Vec<Complex64> {
        let c = Complex64::new;
        match self {
            ModFormat::Bpsk => vec![c(-1.0, 0.0), c(1.0, 0.0)],
            ModFormat::Qpsk => [(1.0, 1.0), (-1.0, 1.0), (1.0, -1.0), (-1.0, -1.0)]
                .iter()
                .map(|&(i, q)| c(i * FRAC_1_SQRT_2, q * FRAC_1_SQRT_2))
                .collect(),
            ModFormat::Pam4 => {
                let s = 5f64.sqrt();
                [-3.0, -1.0, 1.0, 3.0]
                    .iter()
                    .map(|&v| c(v / s, 0.0))
                    .collect()
            }
            ModFormat::Qam16 => {
                let s = 10f64.sqrt();
                let levels = [-3.0, -1.0, 1.0, 3.0];
                let mut pts = Vec::with_capacity(16);
                for q in levels {
                    for i in levels {
                        pts.push(c(i / s, q / s));
                    }
                }
                pts
            }
        }
    }

    /// Gray bit label of each point, same order as [`ModFormat::points`].
    pub fn bit_labels(&self) -> Vec<u8> {
        match self {
            ModFormat::Bpsk => vec![0, 1],
            ModFormat::Qpsk => vec![0b00, 0b01, 0b10, 0b11],
            ModFormat::Pam4 => GRAY2.to_vec(),
            ModFormat::Qam16 => (0..16)
                .map(|k| (GRAY2[k / 4] << 2) | GRAY2[k % 4])
                .collect(),
        }
    }

    pub fn label_string(&self, index: usize) -> String {
        let bits = self.bits_per_symbol();
        format!("{:0width$b}", self.bit_labels()[index], width = bits)
    }

    /// Rotational symmetry order used by blind M-power phase recovery.
    pub fn phase_symmetry(&self) -> u32 {
        match self {
            ModFormat::Bpsk | ModFormat::Pam4 => 2,
            ModFormat::Qpsk | ModFormat::Qam16 => 4,
        }
    }

    /// Whether the format occupies only the in-phase axis.
    pub fn is_real(&self) -> bool {
        matches!(self, ModFormat::Bpsk | ModFormat::Pam4)
    }

    /// Index of the nearest point (ties resolve to the lowest index).
    pub fn nearest(&self, z: Complex64) -> usize {
        nearest_index(&self.points(), z)
    }

    pub fn min_distance(&self) -> f64 {
        min_pairwise_distance(&self.points())
    }
}

impl fmt::Display for ModFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub(crate) fn nearest_index(points: &[Complex64], z: Complex64) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, p) in points.iter().enumerate() {
        let d = (z - p).norm_sqr();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

pub(crate) fn min_pairwise_distance(points: &[Complex64]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            best = best.min((points[i] - points[j]).norm());
        }
    }
    best
}

/// Mapped data for one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolStream {
    pub format: ModFormat,
    pub indices: Vec<usize>,
    pub symbols: Vec<Complex64>,
    pub rate_baud: f64,
    pub seed: u64,
}

impl SymbolStream {
    pub fn from_indices(
        format: ModFormat,
        indices: Vec<usize>,
        rate_baud: f64,
        seed: u64,
    ) -> Result<Self> {
        let pts = format.points();
        if let Some(bad) = indices.iter().find(|&&i| i >= pts.len()) {
            return Err(Error::Transmitter(format!(
                "point index {bad} out of range for {format}"
            )));
        }
        let symbols = indices.iter().map(|&i| pts[i]).collect();
        Ok(Self {
            format,
            indices,
            symbols,
            rate_baud,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn with_rate(mut self, rate_baud: f64) -> Self {
        self.rate_baud = rate_baud;
        self
    }
}

/// Uniform, seeded symbol source.
pub fn generate_symbols(format: ModFormat, count: usize, seed: u64) -> Result<SymbolStream> {
    if count == 0 {
        return Err(Error::Transmitter("symbol count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = format.order();
    let indices = (0..count).map(|_| rng.random_range(0..m)).collect();
    SymbolStream::from_indices(format, indices, 1.0, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseKind {
    RaisedCosineNrz,
    SincSequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseShape {
    pub kind: PulseKind,
    #[serde(default = "default_rolloff")]
    pub rolloff: f64,
    #[serde(default = "default_comb_lines")]
    pub comb_lines: u32,
}

fn default_rolloff() -> f64 {
    1.0
}

fn default_comb_lines() -> u32 {
    3
}

impl PulseShape {
    pub fn raised_cosine(rolloff: f64) -> Self {
        Self {
            kind: PulseKind::RaisedCosineNrz,
            rolloff,
            comb_lines: default_comb_lines(),
        }
    }

    pub fn sinc_sequence(comb_lines: u32) -> Self {
        Self {
            kind: PulseKind::SincSequence,
            rolloff: default_rolloff(),
            comb_lines,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            PulseKind::RaisedCosineNrz if !(0.0..=1.0).contains(&self.rolloff) => Err(
                Error::Transmitter(format!("rolloff must lie in [0, 1], got {}", self.rolloff)),
            ),
            PulseKind::SincSequence if self.comb_lines < 3 || self.comb_lines.is_multiple_of(2) => {
                Err(Error::Transmitter(format!(
                    "comb_lines must be odd and at least 3, got {}",
                    self.comb_lines
                )))
            }
            _ => Ok(()),
        }
    }

    /// Two-sided occupied bandwidth at `rate_baud`.
    pub fn bandwidth_hz(&self, rate_baud: f64) -> f64 {
        match self.kind {
            PulseKind::RaisedCosineNrz => (1.0 + self.rolloff) * rate_baud,
            PulseKind::SincSequence => self.comb_lines as f64 * rate_baud,
        }
    }

    /// Spectral weight at frequency `u` in units of the symbol rate. The
    /// time-domain pulse peaks at 1.
    fn weight(&self, u: f64) -> f64 {
        let tol = 1e-12;
        match self.kind {
            PulseKind::RaisedCosineNrz => raised_cosine_response(u.abs(), 1.0, self.rolloff, tol),
            PulseKind::SincSequence => {
                let n = self.comb_lines as f64;
                let d = u.abs() - n / 2.0;
                if d.abs() <= tol {
                    0.5 / n
                } else if d < 0.0 {
                    1.0 / n
                } else {
                    0.0
                }
            }
        }
    }

    /// Symbol-centre gain and mean power of a pulse train of `k` unit-energy
    /// symbols, both exact on the periodic grid.
    pub fn gains(&self, k: usize) -> PulseGains {
        let span = (self.bandwidth_hz(1.0) * k as f64).ceil() as i64 + 1;
        let (mut sum, mut sq) = (0.0, 0.0);
        for j in -span..=span {
            let w = self.weight(j as f64 / k as f64);
            sum += w;
            sq += w * w;
        }
        PulseGains {
            center: sum / k as f64,
            mean_power: sq / k as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseGains {
    /// Sample value at a symbol centre for a unit symbol.
    pub center: f64,
    /// Mean power of the pulse train for i.i.d. unit-energy symbols.
    pub mean_power: f64,
}

impl PulseGains {
    /// Symbol-centre power over mean power.
    pub fn peak_to_average(&self) -> f64 {
        self.center * self.center / self.mean_power
    }
}

/// Electrical baseband waveform of the symbol stream on a grid of `len`
/// samples at `sample_rate_hz`. The grid window must equal the stream
/// duration. Each pulse peaks at 1 at its symbol centre; symbol `k` is
/// centred at `k/rate`.
pub fn shape_pulses(
    s: &SymbolStream,
    p: &PulseShape,
    sample_rate_hz: f64,
    len: usize,
) -> Result<ComplexEnvelope> {
    p.validate()?;
    let k = s.len();
    if k == 0 {
        return Err(Error::Transmitter("empty symbol stream".into()));
    }
    if !(s.rate_baud > 0.0) {
        return Err(Error::Transmitter(format!(
            "symbol rate must be positive, got {}",
            s.rate_baud
        )));
    }
    let window = len as f64 / sample_rate_hz;
    let wanted = k as f64 / s.rate_baud;
    if (window - wanted).abs() > 1e-9 * wanted {
        return Err(Error::GridMismatch(format!(
            "grid window {window} s does not hold {k} symbols at {} Bd",
            s.rate_baud
        )));
    }
    let bw = p.bandwidth_hz(s.rate_baud);
    if bw / 2.0 >= sample_rate_hz / 2.0 {
        return Err(Error::Aliasing(format!(
            "pulse bandwidth {bw} Hz does not fit the {sample_rate_hz} Hz grid"
        )));
    }
    let mut a = s.symbols.clone();
    fft_forward(&mut a);
    let scale = len as f64 / k as f64;
    let mut bins = vec![Complex64::new(0.0, 0.0); len];
    for (j, b) in bins.iter_mut().enumerate() {
        let sj = signed_index(j, len);
        let w = p.weight(sj as f64 / k as f64);
        if w != 0.0 {
            *b = a[sj.rem_euclid(k as i64) as usize] * (w * scale);
        }
    }
    fft_inverse(&mut bins);
    ComplexEnvelope::new(bins, sample_rate_hz, 0.0)
}

/// The periodic sinc kernel `sin(π·N·Δf·t) / (N·sin(π·Δf·t))`.
pub fn sinc_kernel(t_s: f64, comb_lines: u32, delta_f_hz: f64) -> f64 {
    let n = comb_lines as f64;
    let phase = delta_f_hz * t_s;
    if (phase - phase.round()).abs() < 1e-12 {
        let cycles = phase.round() as i64;
        // limit at multiples of the period: ±1 depending on parity of (N−1)·cycles
        return if ((comb_lines as i64 - 1) * cycles) % 2 == 0 {
            1.0
        } else {
            -1.0
        };
    }
    (std::f64::consts::PI * n * phase).sin() / (n * (std::f64::consts::PI * phase).sin())
}

/// Settings for the two-tone carrier source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarrierSpec {
    pub spacing_hz: f64,
    /// Residual centre tone relative to the unmodulated input, in dB.
    /// `"inf"` for a perfect null.
    #[serde(with = "crate::serde_inf", default = "default_suppression")]
    pub suppression_db: f64,
    #[serde(default = "default_mod_index")]
    pub mod_index: f64,
    #[serde(default)]
    pub drive_phase_rad: f64,
}

fn default_suppression() -> f64 {
    20.0
}

fn default_mod_index() -> f64 {
    1.0
}

impl CarrierSpec {
    pub fn new(spacing_hz: f64, suppression_db: f64) -> Self {
        Self {
            spacing_hz,
            suppression_db,
            mod_index: default_mod_index(),
            drive_phase_rad: 0.0,
        }
    }

    pub fn drive(&self) -> RfDrive {
        RfDrive::new(self.spacing_hz / 2.0, self.mod_index, self.drive_phase_rad)
    }

    /// The null-biased carrier modulator. Its static arm is balanced against
    /// the driven arm's order-0 term so that the residual carrier sits
    /// exactly `suppression_db` below the input.
    pub fn modulator(&self) -> Result<MzmParams> {
        if !(self.suppression_db > 0.0) {
            return Err(Error::Transmitter(format!(
                "suppression must be positive, got {} dB",
                self.suppression_db
            )));
        }
        let j0 = bessel_j(0, self.mod_index);
        let s = if self.suppression_db.is_infinite() {
            0.0
        } else {
            10f64.powf(-self.suppression_db / 20.0)
        };
        let r = if j0 + 2.0 * s <= 1.0 {
            j0 + 2.0 * s
        } else {
            j0 - 2.0 * s
        };
        if !(r > 0.0) {
            return Err(Error::Transmitter(format!(
                "no static-arm balance reaches {} dB suppression at modulation index {}",
                self.suppression_db, self.mod_index
            )));
        }
        let v_pi = MzmParams::default().v_pi;
        MzmParams::from_static_arm(v_pi, v_pi, r)
    }

    /// Complex amplitude of the tone at `+spacing/2` for unit input.
    pub fn tone_amplitude(&self) -> f64 {
        0.5 * bessel_j(1, self.mod_index).abs()
    }
}

/// Grid shared by every optical envelope in a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub sample_rate_hz: f64,
    pub len: usize,
    pub center_freq_hz: f64,
}

impl Grid {
    pub fn window_s(&self) -> f64 {
        self.len as f64 / self.sample_rate_hz
    }
}

/// MZM-1 driven at `spacing/2` in carrier suppression, fed by a 1 mW CW laser.
pub fn two_tone_carriers(spec: &CarrierSpec, grid: &Grid) -> Result<ComplexEnvelope> {
    if !(spec.spacing_hz > 0.0 && spec.spacing_hz < grid.sample_rate_hz / 2.0) {
        return Err(Error::Transmitter(format!(
            "tone spacing {} Hz does not fit the {} Hz grid",
            spec.spacing_hz, grid.sample_rate_hz
        )));
    }
    let laser = ComplexEnvelope::tone(
        grid.len,
        grid.sample_rate_hz,
        grid.center_freq_hz,
        0.0,
        1.0,
        0.0,
    )?;
    mzm_modulate(&laser, &spec.modulator()?, &spec.drive())
}

/// How the two parent channels receive their data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decorrelation {
    /// One modulator per carrier, each with its own seeded data.
    #[default]
    IndependentData,
    /// One modulator for both carriers; the link's dispersion separates them.
    Dispersion,
}

/// Transmitter section of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct TxConfig {
    pub grid: Grid,
    pub carrier: CarrierSpec,
    pub formats: [ModFormat; 2],
    pub rate_baud: f64,
    pub pulse: PulseShape,
    pub symbol_count: usize,
    pub seeds: [u64; 2],
    pub decorrelation: Decorrelation,
    /// Keep only the two carrier tones before data modulation.
    pub carrier_select: bool,
    /// Amplitude weight of channel 2 relative to channel 1.
    pub alpha: f64,
}

#[derive(Debug, Clone)]
pub struct ParentChannels {
    pub envelope: ComplexEnvelope,
    /// Data of the lower-frequency (index 0) and upper-frequency channel.
    pub streams: [SymbolStream; 2],
    pub gains: PulseGains,
    /// Scale applied so each unweighted channel has unit mean power.
    pub optical_scale: f64,
}

/// Separates the carrier comb at 0 Hz: lower half for channel 1, upper half
/// (excluding the centre bin) for channel 2.
fn split_carriers(c: &ComplexEnvelope) -> Result<(ComplexEnvelope, ComplexEnvelope)> {
    let fs = c.sample_rate_hz();
    let df = c.bin_spacing_hz();
    let lower = apply_filter(
        c,
        &FilterSpec::bandpass(-fs / 4.0 + df / 4.0, fs / 2.0 + df / 2.0),
    )?;
    let upper = apply_filter(c, &FilterSpec::bandpass(fs / 4.0, fs / 2.0 - df))?;
    Ok((lower, upper))
}

/// The optical carrier pair as it reaches the data modulators: MZM-1 output,
/// optionally reduced to its two tones, scaled so each tone has unit
/// amplitude and weighted by `alpha` on the upper tone.
pub fn optical_carriers(cfg: &TxConfig) -> Result<ComplexEnvelope> {
    let grid = &cfg.grid;
    if !(cfg.alpha > 0.0 && cfg.alpha <= 1.0) {
        return Err(Error::Transmitter(format!(
            "alpha must lie in (0, 1], got {}",
            cfg.alpha
        )));
    }
    let mut carriers = two_tone_carriers(&cfg.carrier, grid)?;
    let fm = cfg.carrier.spacing_hz / 2.0;
    if cfg.carrier_select {
        let bw = fm.min(grid.sample_rate_hz / 4.0);
        carriers = combine(
            &apply_filter(&carriers, &FilterSpec::bandpass(-fm, bw))?,
            &apply_filter(&carriers, &FilterSpec::bandpass(fm, bw))?,
        )?;
    }
    carriers = carriers.scale(Complex64::new(1.0 / cfg.carrier.tone_amplitude(), 0.0));
    if cfg.alpha != 1.0 {
        carriers = apply_weight(
            &carriers,
            &WeightPlan::upper_channel(cfg.alpha, grid.sample_rate_hz),
        )?;
    }
    Ok(carriers)
}

/// Splits a carrier envelope into the tone at `-tone_offset_hz`, the tone at
/// `+tone_offset_hz` and everything else.
pub fn isolate_tones(
    carriers: &ComplexEnvelope,
    tone_offset_hz: f64,
) -> Result<[ComplexEnvelope; 3]> {
    let df = carriers.bin_spacing_hz();
    let lower = apply_filter(carriers, &FilterSpec::bandpass(-tone_offset_hz, df / 2.0))?;
    let upper = apply_filter(carriers, &FilterSpec::bandpass(tone_offset_hz, df / 2.0))?;
    let rest = carriers.with_samples(
        carriers
            .samples()
            .iter()
            .zip(lower.samples())
            .zip(upper.samples())
            .map(|((c, l), u)| c - l - u)
            .collect(),
    );
    Ok([lower, upper, rest])
}

pub fn build_parent_channels(cfg: &TxConfig) -> Result<ParentChannels> {
    cfg.pulse.validate()?;
    let grid = &cfg.grid;
    if cfg.decorrelation == Decorrelation::Dispersion && cfg.formats[0] != cfg.formats[1] {
        return Err(Error::Transmitter(
            "a shared modulator needs the same format on both channels".into(),
        ));
    }
    let carriers = optical_carriers(cfg)?;
    let optical_scale = 1.0 / cfg.carrier.tone_amplitude();

    let gains = cfg.pulse.gains(cfg.symbol_count);
    let norm = Complex64::new(1.0 / gains.mean_power.sqrt(), 0.0);
    let stream = |ch: usize, seed: u64| -> Result<SymbolStream> {
        Ok(generate_symbols(cfg.formats[ch], cfg.symbol_count, seed)?.with_rate(cfg.rate_baud))
    };
    let data = |s: &SymbolStream| -> Result<ComplexEnvelope> {
        Ok(shape_pulses(s, &cfg.pulse, grid.sample_rate_hz, grid.len)?.scale(norm))
    };

    let (envelope, streams) = match cfg.decorrelation {
        Decorrelation::Dispersion => {
            let s1 = stream(0, cfg.seeds[0])?;
            let env = iq_modulate(&carriers, &data(&s1)?)?;
            let s2 = s1.clone();
            (env, [s1, s2])
        }
        Decorrelation::IndependentData => {
            let (lower, upper) = split_carriers(&carriers)?;
            let s1 = stream(0, cfg.seeds[0])?;
            let s2 = stream(1, cfg.seeds[1])?;
            let env = combine(
                &iq_modulate(&lower, &data(&s1)?)?,
                &iq_modulate(&upper, &data(&s2)?)?,
            )?;
            (env, [s1, s2])
        }
    };
    Ok(ParentChannels {
        envelope,
        streams,
        gains,
        optical_scale,
    })
}

/// Ground-truth export with columns `channel,index,re,im,bits`.
pub fn symbols_csv(streams: &[SymbolStream]) -> String {
    let mut out = String::from("channel,index,re,im,bits\n");
    for (ch, s) in streams.iter().enumerate() {
        for (k, (&i, z)) in s.indices.iter().zip(&s.symbols).enumerate() {
            let _ = writeln!(
                out,
                "{},{k},{},{},{}",
                ch + 1,
                z.re,
                z.im,
                s.format.label_string(i)
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn formats_have_unit_energy_and_gray_labels() {
        for f in ModFormat::ALL {
            let pts = f.points();
            assert_eq!(pts.len(), f.order());
            let e: f64 = pts.iter().map(|p| p.norm_sqr()).sum::<f64>() / pts.len() as f64;
            assert!((e - 1.0).abs() < 1e-15, "{f}");
            let labels = f.bit_labels();
            let mut sorted = labels.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), pts.len());
            // nearest neighbours differ in exactly one bit
            let d = f.min_distance();
            for i in 0..pts.len() {
                for j in 0..pts.len() {
                    if i != j && ((pts[i] - pts[j]).norm() - d).abs() < 1e-12 {
                        assert_eq!((labels[i] ^ labels[j]).count_ones(), 1, "{f} {i} {j}");
                    }
                }
            }
        }
    }

    #[test]
    fn format_names_parse() {
        for f in ModFormat::ALL {
            assert_eq!(ModFormat::parse(f.name()), Some(f));
        }
        assert_eq!(ModFormat::parse("pam-4"), Some(ModFormat::Pam4));
        assert_eq!(ModFormat::parse("ook"), None);
    }

    #[test]
    fn symbols_are_deterministic() {
        let a = generate_symbols(ModFormat::Bpsk, 4, 7).unwrap();
        let b = generate_symbols(ModFormat::Bpsk, 4, 7).unwrap();
        assert_eq!(a, b);
        assert!(generate_symbols(ModFormat::Bpsk, 0, 7).is_err());
    }

    #[test]
    fn qpsk_is_uniform() {
        let n = 1 << 14;
        let s = generate_symbols(ModFormat::Qpsk, n, 11).unwrap();
        let mut counts = [0usize; 4];
        s.indices.iter().for_each(|&i| counts[i] += 1);
        let mean = n as f64 / 4.0;
        let sigma = (n as f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() < 3.0 * sigma);
        }
        // chi-square with 3 dof; 16.27 is the 0.001 upper quantile
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - mean).powi(2) / mean)
            .sum();
        assert!(chi2 < 16.27);
    }

    #[test]
    fn qam16_energy_near_one() {
        let s = generate_symbols(ModFormat::Qam16, 16_000, 5).unwrap();
        let e = s.symbols.iter().map(|z| z.norm_sqr()).sum::<f64>() / s.len() as f64;
        assert!((e - 1.0).abs() < 0.02);
    }

    fn single_symbol(k: usize, rate: f64) -> SymbolStream {
        let mut idx = vec![0usize; k];
        idx[0] = 1;
        let mut s = SymbolStream::from_indices(ModFormat::Bpsk, idx, rate, 0).unwrap();
        s.symbols = (0..k)
            .map(|i| Complex64::new(if i == 0 { 1.0 } else { 0.0 }, 0.0))
            .collect();
        s
    }

    #[test]
    fn raised_cosine_has_zero_isi() {
        let (k, sps, rate) = (64, 16, 10e9);
        let x = shape_pulses(
            &single_symbol(k, rate),
            &PulseShape::raised_cosine(1.0),
            rate * sps as f64,
            k * sps,
        )
        .unwrap();
        assert!((x.samples()[0].re - 1.0).abs() < 1e-12);
        for m in 1..k {
            assert!(x.samples()[m * sps].norm() < 1e-9, "symbol {m}");
        }
    }

    #[test]
    fn sinc_kernel_zeros_at_dirichlet_positions() {
        let df = 5e9;
        for k in 1..30 {
            let t = k as f64 / (3.0 * df);
            let v = sinc_kernel(t, 3, df);
            if k % 3 == 0 {
                assert!((v.abs() - 1.0).abs() < 1e-9);
            } else {
                assert!(v.abs() < 1e-9, "k={k}: {v}");
            }
        }
    }

    #[test]
    fn sinc_sequence_zero_crossings_are_exact() {
        let (k, rate) = (40, 5e9);
        let sps = 48;
        let s = generate_symbols(ModFormat::Qpsk, k, 3)
            .unwrap()
            .with_rate(rate);
        let x = shape_pulses(
            &s,
            &PulseShape::sinc_sequence(3),
            rate * sps as f64,
            k * sps,
        )
        .unwrap();
        let peak = x.samples().iter().map(|z| z.norm()).fold(0.0, f64::max);
        for (i, z) in x.samples().iter().enumerate() {
            if i % (sps / 3) == 0 && i % sps != 0 {
                assert!(z.norm() < 1e-9 * peak);
            }
            if i % sps == 0 {
                assert!((z - s.symbols[i / sps]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn unmodulated_sinc_sequence_is_three_flat_lines() {
        let (k, rate) = (40, 5e9);
        let ones = SymbolStream::from_indices(ModFormat::Bpsk, vec![1; k], rate, 0).unwrap();
        let x = shape_pulses(&ones, &PulseShape::sinc_sequence(3), 240e9, k * 48).unwrap();
        let spec = x.spectrum();
        let peak = spec.bins.iter().map(|b| b.norm()).fold(0.0, f64::max);
        let lit: Vec<usize> = (0..spec.len())
            .filter(|&i| spec.bins[i].norm() > 1e-9 * peak)
            .collect();
        let offsets: Vec<f64> = lit.iter().map(|&i| spec.offset_hz(i)).collect();
        assert_eq!(offsets, vec![-5e9, 0.0, 5e9]);
        for &i in &lit {
            let db = 20.0 * (spec.bins[i].norm() / peak).log10();
            assert!(db.abs() < 0.01);
        }
        // and the waveform equals the periodic kernel
        for (i, z) in x.samples().iter().enumerate() {
            let t = i as f64 / 240e9;
            assert!((z.re - sinc_kernel(t, 3, rate)).abs() < 1e-12);
        }
    }

    #[test]
    fn pulse_gains_match_closed_forms() {
        let rc = PulseShape::raised_cosine(1.0).gains(5000);
        assert!((rc.center - 1.0).abs() < 1e-12);
        assert!((rc.peak_to_average() - 4.0 / 3.0).abs() < 1e-3);
        let sinc = PulseShape::sinc_sequence(3).gains(5000);
        assert!((sinc.center - 1.0).abs() < 1e-12);
        assert!((sinc.peak_to_average() - 3.0).abs() < 1e-3);
    }

    #[test]
    fn pulse_validation() {
        assert!(PulseShape::raised_cosine(1.2).validate().is_err());
        assert!(PulseShape::sinc_sequence(4).validate().is_err());
        assert!(PulseShape::sinc_sequence(1).validate().is_err());
        let s = generate_symbols(ModFormat::Bpsk, 10, 1)
            .unwrap()
            .with_rate(10e9);
        assert!(matches!(
            shape_pulses(&s, &PulseShape::raised_cosine(1.0), 20e9, 20),
            Err(Error::Aliasing(_))
        ));
        assert!(shape_pulses(&s, &PulseShape::raised_cosine(1.0), 640e9, 100).is_err());
    }

    fn grid() -> Grid {
        Grid {
            sample_rate_hz: 640e9,
            len: 640,
            center_freq_hz: 193.4e12,
        }
    }

    #[test]
    fn two_tone_levels() {
        let x = two_tone_carriers(&CarrierSpec::new(36e9, 20.0), &grid()).unwrap();
        let spec = x.spectrum();
        let up = spec.tone(18e9).unwrap().norm_sqr();
        let down = spec.tone(-18e9).unwrap().norm_sqr();
        assert!((10.0 * (up / down).log10()).abs() < 0.01);
        let center = 10.0 * spec.tone(0.0).unwrap().norm_sqr().log10();
        assert!((center + 20.0).abs() < 0.1, "{center}");
    }

    #[test]
    fn perfect_suppression_nulls_the_center() {
        let x = two_tone_carriers(&CarrierSpec::new(36e9, f64::INFINITY), &grid()).unwrap();
        let spec = x.spectrum();
        let c = spec.tone(0.0).unwrap().norm();
        assert!(c < 1e-15 * spec.tone(18e9).unwrap().norm(), "{c}");
    }

    #[test]
    fn carrier_drive_phase_moves_tones_oppositely() {
        let base = two_tone_carriers(&CarrierSpec::new(36e9, 20.0), &grid())
            .unwrap()
            .spectrum();
        let mut spec = CarrierSpec::new(36e9, 20.0);
        spec.drive_phase_rad = 0.7;
        let moved = two_tone_carriers(&spec, &grid()).unwrap().spectrum();
        let up = (moved.tone(18e9).unwrap() / base.tone(18e9).unwrap()).arg();
        let down = (moved.tone(-18e9).unwrap() / base.tone(-18e9).unwrap()).arg();
        assert!((up - 0.7).abs() < 1e-9 && (down + 0.7).abs() < 1e-9);
    }

    fn tx(decorrelation: Decorrelation, format: ModFormat) -> TxConfig {
        TxConfig {
            grid: Grid {
                sample_rate_hz: 640e9,
                len: 250 * 64,
                center_freq_hz: 193.4e12,
            },
            carrier: CarrierSpec::new(36e9, 20.0),
            formats: [format; 2],
            rate_baud: 10e9,
            pulse: PulseShape::raised_cosine(1.0),
            symbol_count: 250,
            seeds: [1, 2],
            decorrelation,
            carrier_select: true,
            alpha: 1.0,
        }
    }

    #[test]
    fn composite_occupies_spacing_plus_channel_width() {
        let p = build_parent_channels(&tx(Decorrelation::Dispersion, ModFormat::Qpsk)).unwrap();
        let (lo, hi) = p.envelope.occupied_band().unwrap();
        let df = p.envelope.bin_spacing_hz();
        assert!((hi - lo - 56e9).abs() <= 2.0 * df, "{lo} {hi}");
        // each channel ±10 GHz around its carrier
        assert!((hi - 28e9).abs() <= df && (lo + 28e9).abs() <= df);
    }

    #[test]
    fn parent_channels_have_unit_power() {
        let p =
            build_parent_channels(&tx(Decorrelation::IndependentData, ModFormat::Qpsk)).unwrap();
        let spec = p.envelope.spectrum();
        let ch1 = spec.band_power_mw(-30e9, -6e9);
        let ch2 = spec.band_power_mw(6e9, 30e9);
        assert!(
            (ch1 - 1.0).abs() < 0.1 && (ch2 - 1.0).abs() < 0.1,
            "{ch1} {ch2}"
        );
    }

    #[test]
    fn alpha_scales_upper_channel() {
        let mut cfg = tx(Decorrelation::IndependentData, ModFormat::Bpsk);
        let a = build_parent_channels(&cfg).unwrap().envelope.spectrum();
        cfg.alpha = 0.5;
        let b = build_parent_channels(&cfg).unwrap().envelope.spectrum();
        let r_up = b.band_power_mw(6e9, 30e9) / a.band_power_mw(6e9, 30e9);
        let r_lo = b.band_power_mw(-30e9, -6e9) / a.band_power_mw(-30e9, -6e9);
        assert!((10.0 * r_up.log10() + 6.0206).abs() < 1e-6);
        assert!((r_lo - 1.0).abs() < 1e-9);
    }

    #[test]
    fn independent_channels_are_uncorrelated() {
        let count = 4096;
        let a = generate_symbols(ModFormat::Bpsk, count, 1).unwrap();
        let b = generate_symbols(ModFormat::Bpsk, count, 2).unwrap();
        let bound = 5.0 / (count as f64).sqrt();
        for lag in 0..64 {
            let c: f64 = (0..count)
                .map(|k| (a.symbols[k] * b.symbols[(k + lag) % count].conj()).re)
                .sum::<f64>()
                / count as f64;
            assert!(c.abs() < bound, "lag {lag}: {c}");
        }
    }

    #[test]
    fn symbol_csv_format() {
        let s = generate_symbols(ModFormat::Pam4, 3, 9).unwrap();
        let csv = symbols_csv(&[s.clone(), s]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "channel,index,re,im,bits");
        assert_eq!(lines.len(), 7);
        assert!(lines[4].starts_with("2,0,"));
        assert_eq!(lines[1].rsplit(',').next().unwrap().len(), 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn every_symbol_is_a_constellation_point(seed in any::<u64>(), fi in 0usize..4) {
            let f = ModFormat::ALL[fi];
            let s = generate_symbols(f, 200, seed).unwrap();
            let pts = f.points();
            prop_assert!(s.symbols.iter().all(|z| pts.contains(z)));
        }

        #[test]
        fn sinc_sequence_is_confined(seed in any::<u64>()) {
            let (k, rate) = (32, 5e9);
            let s = generate_symbols(ModFormat::Qpsk, k, seed).unwrap().with_rate(rate);
            let x = shape_pulses(&s, &PulseShape::sinc_sequence(3), 160e9, k * 32).unwrap();
            let spec = x.spectrum();
            let inside = spec.band_power_mw(-7.5e9, 7.5e9);
            prop_assert!(inside / x.power() >= 0.99999);
        }

        #[test]
        fn nearest_point_recovers_symbols(seed in any::<u64>(), fi in 0usize..4, rot in -1e-3f64..1e-3) {
            let f = ModFormat::ALL[fi];
            let s = generate_symbols(f, 50, seed).unwrap();
            for (&i, z) in s.indices.iter().zip(&s.symbols) {
                prop_assert_eq!(f.nearest(z * Complex64::from_polar(1.0, rot * PI)), i);
            }
        }
    }
}
