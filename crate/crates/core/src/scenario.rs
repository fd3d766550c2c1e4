//! Scenario configuration and the end-to-end pipeline: carriers, data
//! modulation, link, aggregation and coherent detection.
//!
//! All randomness derives from the scenario `seed`. Stage `k` draws its seed
//! as the first output of a ChaCha8 generator seeded with `seed` on stream
//! `k`: stage 0 is channel 1 data, 1 is channel 2 data, 2 is amplifier noise
//! after the transmitter and 3 is amplifier noise after aggregation.

use std::fmt::Write as _;
use std::sync::OnceLock;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregator::{
    calibrate, diagnose, pair_decision_table, pairs_bijective, predict_format, solve_controls,
    AggregationDiagnostics, AggregationPlan, Calibration,
};
use crate::error::{Error, Result};
use crate::link::{
    apply_ase, apply_dispersion, apply_weight, noise_density, AseNoiseSpec, DispersionSpec,
    NoiseCalibration, NoiseLevel, WeightPlan, DEFAULT_BPF_HZ,
};
use crate::modulators::{mzm_modulate, sideband_reach_hz, MzmParams, RfDrive};
use crate::receiver::{
    eye_diagram, receive, recover_symbols, recover_symbols_at, ConstellationReport, EyeDiagram,
    RxConfig, RxMode,
};
use crate::signal::{apply_filter, commensurate_cycles, ComplexEnvelope, FilterSpec, SpectrumView};
use crate::transmitter::{
    build_parent_channels, isolate_tones, optical_carriers, symbols_csv, CarrierSpec,
    Decorrelation, Grid, ModFormat, ParentChannels, PulseShape, SymbolStream, TxConfig,
};
use crate::tuner::{tune, TuneResult, TuneSpec};
use num_complex::Complex64;

pub const STAGE_CH1_DATA: u64 = 0;
pub const STAGE_CH2_DATA: u64 = 1;
pub const STAGE_ASE_TX: u64 = 2;
pub const STAGE_ASE_AGG: u64 = 3;

/// Seed for one pipeline stage.
pub fn stage_seed(seed: u64, stage: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stage);
    rng.next_u64()
}

/// A number or a keyword asking the pipeline to determine the value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Setting {
    Fixed(f64),
    Auto(AutoMode),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoMode {
    /// Search by repeated short noiseless runs.
    Tune,
    /// Set from the CW calibration and the constellation algebra.
    Calibrate,
    /// Solve the amplitude ratio from the constellation algebra.
    Solve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    #[serde(default)]
    pub seed: u64,
    pub grid: GridSection,
    pub transmitter: TxSection,
    #[serde(default)]
    pub link: LinkSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregation: Option<AggSection>,
    pub receiver: RxSection,
    #[serde(default)]
    pub outputs: Outputs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub sample_rate_hz: f64,
    #[serde(default = "default_center")]
    pub center_freq_hz: f64,
}

fn default_center() -> f64 {
    193.4e12
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TxSection {
    pub formats: [ModFormat; 2],
    pub rate_baud: f64,
    pub pulse: PulseShape,
    pub symbol_count: usize,
    #[serde(default)]
    pub decorrelation: Decorrelation,
    pub carrier: CarrierSpec,
    #[serde(default = "yes")]
    pub carrier_select: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSection {
    /// Waveshaper amplitude weight of channel 2, or `"solve"`.
    #[serde(default = "unit_alpha")]
    pub alpha: Setting,
    #[serde(default)]
    pub dispersion_ps_per_nm: f64,
    #[serde(default = "default_wavelength")]
    pub ref_wavelength_nm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ase: Option<AseSection>,
}

fn unit_alpha() -> Setting {
    Setting::Fixed(1.0)
}

fn default_wavelength() -> f64 {
    1550.0
}

impl Default for LinkSection {
    fn default() -> Self {
        Self {
            alpha: unit_alpha(),
            dispersion_ps_per_nm: 0.0,
            ref_wavelength_nm: default_wavelength(),
            ase: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoisePlacement {
    #[default]
    AfterTransmitter,
    AfterAggregation,
}

/// Amplifier noise. Exactly one of the two level fields must be given.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AseSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_parent_evm_pct: Option<f64>,
    /// `√N0` in √(mW/Hz).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_psd: Option<f64>,
    #[serde(default = "default_bpf")]
    pub bpf_bandwidth_hz: f64,
    #[serde(default)]
    pub placement: NoisePlacement,
}

fn default_bpf() -> f64 {
    DEFAULT_BPF_HZ
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggSection {
    pub rf_freq_hz: f64,
    #[serde(default = "one")]
    pub mod_index: f64,
    #[serde(default = "default_v_pi")]
    pub v_pi: f64,
    #[serde(default = "default_v_pi")]
    pub bias_v: f64,
    #[serde(with = "crate::serde_inf", default = "default_er")]
    pub extinction_ratio_db: f64,
    /// Drive phase, `"calibrate"` or `"tune"`.
    pub phi_rad: Setting,
    pub target: ModFormat,
    /// Width of the post-aggregation bandpass; defaults to the channel
    /// bandwidth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub select_band_hz: Option<f64>,
}

fn one() -> f64 {
    1.0
}

fn default_v_pi() -> f64 {
    5.0
}

fn default_er() -> f64 {
    20.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RxChannel {
    #[default]
    Aggregate,
    Parent1,
    Parent2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RxSection {
    #[serde(default)]
    pub channel: RxChannel,
    #[serde(default)]
    pub mode: RxMode,
    #[serde(default)]
    pub lo_offset_hz: f64,
    /// Defaults to the channel bandwidth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lowpass_bw_hz: Option<f64>,
    #[serde(default = "default_sps")]
    pub samples_per_symbol_out: usize,
}

fn default_sps() -> usize {
    8
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default = "yes")]
    pub spectrum: bool,
    #[serde(default = "yes")]
    pub constellation: bool,
    #[serde(default)]
    pub eye: bool,
    #[serde(default = "default_span")]
    pub eye_span_symbols: usize,
    #[serde(default)]
    pub symbols: bool,
}

fn default_span() -> usize {
    2
}

impl Default for Outputs {
    fn default() -> Self {
        Self {
            spectrum: true,
            constellation: true,
            eye: false,
            eye_span_symbols: default_span(),
            symbols: false,
        }
    }
}

/// 1-based line of the JSON key at the end of `path` (`a.b.c`), found by
/// walking the keys in order through the text.
fn locate(text: &str, path: &str) -> Option<usize> {
    let mut pos = 0;
    let mut found = None;
    for seg in path.split('.') {
        let key = seg.split('[').next().unwrap_or(seg);
        if key.is_empty() {
            continue;
        }
        let needle = format!("\"{key}\"");
        let at = text[pos..].find(&needle)? + pos;
        pos = at + needle.len();
        found = Some(at);
    }
    found.map(|at| text[..at].matches('\n').count() + 1)
}

fn anchored(text: &str, e: Error) -> Error {
    match e {
        Error::Config { field, reason } => {
            let reason = match locate(text, &field) {
                Some(line) if !reason.starts_with("line ") => format!("line {line}: {reason}"),
                _ => reason,
            };
            Error::Config { field, reason }
        }
        other => other,
    }
}

fn finite_positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(
            field,
            format!("must be positive and finite, got {v}"),
        ))
    }
}

impl Scenario {
    /// Parses and validates a scenario, or the `config` of a run manifest.
    /// Errors name the offending field and its line.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| Error::config("<document>", format!("line {}: {e}", e.line())))?;
        let (body, prefix) = if value.get("manifest_version").is_some() {
            match value.get("config") {
                Some(c) => (c.clone(), "config."),
                None => return Err(Error::config("config", "manifest carries no config")),
            }
        } else {
            (value, "")
        };
        let s: Scenario = serde_path_to_error::deserialize(body).map_err(|e| {
            let path = format!("{prefix}{}", e.path());
            let path = if path.is_empty() || path == "." {
                "<document>".to_string()
            } else {
                path
            };
            let msg = e.into_inner().to_string();
            let line = locate(text, &path);
            Error::config(
                path,
                match line {
                    Some(l) => format!("line {l}: {msg}"),
                    None => msg,
                },
            )
        })?;
        s.validate().map_err(|e| match e {
            Error::Config { field, reason } => anchored(
                text,
                Error::Config {
                    field: format!("{prefix}{field}"),
                    reason,
                },
            ),
            other => other,
        })?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// SHA-256 of the compact JSON form.
    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(
            serde_json::to_string(self)
                .expect("scenario serializes")
                .as_bytes(),
        );
        digest.iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn sample_count(&self) -> Result<usize> {
        let exact = self.transmitter.symbol_count as f64 * self.grid.sample_rate_hz
            / self.transmitter.rate_baud;
        let n = exact.round();
        if n < 1.0 || (exact - n).abs() > 1e-9 * exact {
            return Err(Error::config(
                "transmitter.symbol_count",
                format!(
                    "{} symbols at {} Bd do not fill a whole number of samples at {} Hz",
                    self.transmitter.symbol_count,
                    self.transmitter.rate_baud,
                    self.grid.sample_rate_hz
                ),
            ));
        }
        Ok(n as usize)
    }

    pub fn channel_bandwidth_hz(&self) -> f64 {
        self.transmitter
            .pulse
            .bandwidth_hz(self.transmitter.rate_baud)
    }

    pub fn lowpass_bw_hz(&self) -> f64 {
        self.receiver
            .lowpass_bw_hz
            .unwrap_or_else(|| self.channel_bandwidth_hz())
    }

    pub fn select_band_hz(&self) -> Option<f64> {
        self.aggregation.map(|a| {
            a.select_band_hz
                .unwrap_or_else(|| self.channel_bandwidth_hz())
        })
    }

    pub fn window_s(&self) -> f64 {
        self.transmitter.symbol_count as f64 / self.transmitter.rate_baud
    }

    /// Format seen by the receiver.
    pub fn detected_format(&self) -> ModFormat {
        match self.receiver.channel {
            RxChannel::Aggregate => self
                .aggregation
                .map_or(self.transmitter.formats[0], |a| a.target),
            RxChannel::Parent1 => self.transmitter.formats[0],
            RxChannel::Parent2 => self.transmitter.formats[1],
        }
    }

    fn check_commensurate(&self, field: &str, freq: f64) -> Result<()> {
        if self.fits(freq) {
            return Ok(());
        }
        let hint = match commensurate_symbol_count(self, self.transmitter.symbol_count) {
            Ok(k) => format!("; transmitter.symbol_count {k} would fit"),
            Err(_) => String::new(),
        };
        Err(Error::config(
            field,
            format!(
                "{freq} Hz does not complete a whole number of cycles in the {} s window{hint}",
                self.window_s()
            ),
        ))
    }

    fn fits(&self, freq: f64) -> bool {
        self.sample_count()
            .is_ok_and(|n| commensurate_cycles(freq, self.grid.sample_rate_hz, n).is_some())
    }

    pub fn validate(&self) -> Result<()> {
        let fs = self.grid.sample_rate_hz;
        finite_positive("grid.sample_rate_hz", fs)?;
        if !self.grid.center_freq_hz.is_finite() {
            return Err(Error::config("grid.center_freq_hz", "must be finite"));
        }
        let tx = &self.transmitter;
        finite_positive("transmitter.rate_baud", tx.rate_baud)?;
        if tx.symbol_count < 2 {
            return Err(Error::config(
                "transmitter.symbol_count",
                "needs at least 2 symbols",
            ));
        }
        tx.pulse
            .validate()
            .map_err(|e| Error::config("transmitter.pulse", e.to_string()))?;
        self.sample_count()?;
        finite_positive("transmitter.carrier.spacing_hz", tx.carrier.spacing_hz)?;
        let half = tx.carrier.spacing_hz / 2.0;
        let bw = self.channel_bandwidth_hz();
        if half + bw / 2.0 >= fs / 2.0 {
            return Err(Error::config(
                "grid.sample_rate_hz",
                format!(
                    "channels at ±{half} Hz with {bw} Hz bandwidth exceed the ±{} Hz grid",
                    fs / 2.0
                ),
            ));
        }
        if bw / 2.0 >= half {
            return Err(Error::config(
                "transmitter.carrier.spacing_hz",
                format!("{bw} Hz wide channels overlap at ±{half} Hz"),
            ));
        }
        if tx.decorrelation == Decorrelation::Dispersion && tx.formats[0] != tx.formats[1] {
            return Err(Error::config(
                "transmitter.decorrelation",
                "a shared modulator needs the same format on both channels",
            ));
        }
        self.check_commensurate("transmitter.carrier.spacing_hz", half)?;
        tx.carrier
            .modulator()
            .map_err(|e| Error::config("transmitter.carrier.suppression_db", e.to_string()))?;
        let reach = sideband_reach_hz(&tx.carrier.drive());
        if reach >= fs / 2.0 {
            return Err(Error::config(
                "grid.sample_rate_hz",
                format!(
                    "carrier generator sidebands reach ±{reach} Hz beyond the ±{} Hz grid",
                    fs / 2.0
                ),
            ));
        }

        let link = &self.link;
        match link.alpha {
            Setting::Fixed(a) if !(a > 0.0 && a <= 1.0) => {
                return Err(Error::config(
                    "link.alpha",
                    format!("must lie in (0, 1], got {a}"),
                ))
            }
            Setting::Auto(AutoMode::Solve) if self.aggregation.is_none() => {
                return Err(Error::config(
                    "link.alpha",
                    "\"solve\" needs an aggregation section",
                ))
            }
            Setting::Auto(AutoMode::Tune | AutoMode::Calibrate) => {
                return Err(Error::config(
                    "link.alpha",
                    "expected a number or \"solve\"",
                ))
            }
            _ => {}
        }
        DispersionSpec {
            d_ps_per_nm: link.dispersion_ps_per_nm,
            ref_wavelength_nm: link.ref_wavelength_nm,
        }
        .validate()
        .map_err(|e| Error::config("link.dispersion_ps_per_nm", e.to_string()))?;
        if let Some(ase) = &link.ase {
            match (ase.target_parent_evm_pct, ase.noise_psd) {
                (Some(t), None) => {
                    finite_positive("link.ase.target_parent_evm_pct", t)?;
                    if ase.placement != NoisePlacement::AfterTransmitter {
                        return Err(Error::config(
                            "link.ase.placement",
                            "a target parent EVM calibrates noise added after the transmitter",
                        ));
                    }
                }
                (None, Some(p)) if p >= 0.0 && p.is_finite() => {}
                (None, Some(p)) => {
                    return Err(Error::config(
                        "link.ase.noise_psd",
                        format!("must be non-negative, got {p}"),
                    ))
                }
                _ => {
                    return Err(Error::config(
                        "link.ase",
                        "give exactly one of target_parent_evm_pct and noise_psd",
                    ))
                }
            }
            finite_positive("link.ase.bpf_bandwidth_hz", ase.bpf_bandwidth_hz)?;
            if ase.bpf_bandwidth_hz > fs {
                return Err(Error::config(
                    "link.ase.bpf_bandwidth_hz",
                    format!("{} Hz exceeds the {fs} Hz grid", ase.bpf_bandwidth_hz),
                ));
            }
        }

        if let Some(agg) = &self.aggregation {
            finite_positive("aggregation.rf_freq_hz", agg.rf_freq_hz)?;
            self.check_commensurate("aggregation.rf_freq_hz", agg.rf_freq_hz)?;
            finite_positive("aggregation.v_pi", agg.v_pi)?;
            if !(agg.mod_index > 0.0 && agg.mod_index.is_finite()) {
                return Err(Error::config("aggregation.mod_index", "must be positive"));
            }
            let sel = self.select_band_hz().unwrap_or(bw);
            finite_positive("aggregation.select_band_hz", sel)?;
            if sel > fs {
                return Err(Error::config(
                    "aggregation.select_band_hz",
                    format!("{sel} Hz exceeds the {fs} Hz grid"),
                ));
            }
            let plan = self.plan(0.0)?;
            plan.order()
                .map_err(|e| Error::config("aggregation.rf_freq_hz", e.to_string()))?;
            let reach = half + sideband_reach_hz(&plan.rf);
            if reach >= fs / 2.0 {
                return Err(Error::config(
                    "grid.sample_rate_hz",
                    format!(
                        "aggregating modulator sidebands reach ±{reach} Hz beyond the ±{} Hz grid",
                        fs / 2.0
                    ),
                ));
            }
            match agg.phi_rad {
                Setting::Fixed(p) if !p.is_finite() => {
                    return Err(Error::config("aggregation.phi_rad", "must be finite"))
                }
                Setting::Auto(AutoMode::Solve) => {
                    return Err(Error::config(
                        "aggregation.phi_rad",
                        "expected a number, \"calibrate\" or \"tune\"",
                    ))
                }
                Setting::Auto(_) => {
                    let alpha = match link.alpha {
                        Setting::Fixed(a) => Some(a),
                        _ => None,
                    };
                    solve_controls(tx.formats[0], tx.formats[1], agg.target, alpha)
                        .map_err(|e| Error::config("aggregation.target", e.to_string()))?;
                }
                _ => {}
            }
        } else if self.receiver.channel == RxChannel::Aggregate {
            return Err(Error::config(
                "receiver.channel",
                "\"aggregate\" needs an aggregation section",
            ));
        }

        let rx = &self.receiver;
        let lp = self.lowpass_bw_hz();
        finite_positive("receiver.lowpass_bw_hz", lp)?;
        if lp > fs {
            return Err(Error::config(
                "receiver.lowpass_bw_hz",
                format!("{lp} Hz exceeds the {fs} Hz grid"),
            ));
        }
        if rx.samples_per_symbol_out == 0 {
            return Err(Error::config(
                "receiver.samples_per_symbol_out",
                "must be at least 1",
            ));
        }
        if (rx.samples_per_symbol_out as f64) * tx.rate_baud < lp {
            return Err(Error::config(
                "receiver.samples_per_symbol_out",
                format!(
                    "{lp} Hz lowpass does not fit {} samples per symbol",
                    rx.samples_per_symbol_out
                ),
            ));
        }
        if rx.mode == RxMode::Heterodyne && !(rx.lo_offset_hz > lp / 2.0) {
            return Err(Error::config(
                "receiver.lo_offset_hz",
                format!(
                    "heterodyne IF must exceed the lowpass half-width {} Hz",
                    lp / 2.0
                ),
            ));
        }
        if self.outputs.eye {
            if rx.samples_per_symbol_out < 8 {
                return Err(Error::config(
                    "outputs.eye",
                    "eye diagrams need samples_per_symbol_out ≥ 8",
                ));
            }
            if self.outputs.eye_span_symbols == 0 {
                return Err(Error::config(
                    "outputs.eye_span_symbols",
                    "must be at least 1",
                ));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        Ok(Grid {
            sample_rate_hz: self.grid.sample_rate_hz,
            len: self.sample_count()?,
            center_freq_hz: self.grid.center_freq_hz,
        })
    }

    /// Transmitter settings with channel 2 weighted by `alpha`.
    pub fn tx_config(&self, alpha: f64) -> Result<TxConfig> {
        let tx = &self.transmitter;
        Ok(TxConfig {
            grid: self.grid()?,
            carrier: tx.carrier,
            formats: tx.formats,
            rate_baud: tx.rate_baud,
            pulse: tx.pulse,
            symbol_count: tx.symbol_count,
            seeds: [
                stage_seed(self.seed, STAGE_CH1_DATA),
                stage_seed(self.seed, STAGE_CH2_DATA),
            ],
            decorrelation: tx.decorrelation,
            carrier_select: tx.carrier_select,
            alpha,
        })
    }

    /// Aggregation plan at drive phase `phi`.
    pub fn plan(&self, phi: f64) -> Result<AggregationPlan> {
        let agg = self
            .aggregation
            .ok_or_else(|| Error::config("aggregation", "scenario has no aggregation stage"))?;
        let half = self.transmitter.carrier.spacing_hz / 2.0;
        let mzm = MzmParams {
            v_pi: agg.v_pi,
            bias_v: agg.bias_v,
            extinction_ratio_db: agg.extinction_ratio_db,
        };
        Ok(AggregationPlan {
            carrier1_offset_hz: -half,
            carrier2_offset_hz: half,
            rf: RfDrive::new(agg.rf_freq_hz, agg.mod_index, 0.0),
            mzm,
            alpha: 1.0,
            phi_rad: phi,
            select_band: FilterSpec::bandpass(0.0, self.select_band_hz().unwrap_or(0.0)),
        })
    }

    fn dispersion(&self) -> Option<DispersionSpec> {
        (self.link.dispersion_ps_per_nm != 0.0).then_some(DispersionSpec {
            d_ps_per_nm: self.link.dispersion_ps_per_nm,
            ref_wavelength_nm: self.link.ref_wavelength_nm,
        })
    }

    fn rx_config(&self, channel: RxChannel) -> RxConfig {
        let half = self.transmitter.carrier.spacing_hz / 2.0;
        let offset = match channel {
            RxChannel::Aggregate => 0.0,
            RxChannel::Parent1 => -half,
            RxChannel::Parent2 => half,
        };
        RxConfig {
            mode: self.receiver.mode,
            lo_offset_hz: self.receiver.lo_offset_hz,
            lowpass_bw_hz: self.lowpass_bw_hz(),
            samples_per_symbol_out: self.receiver.samples_per_symbol_out,
            symbol_rate_baud: self.transmitter.rate_baud,
            channel_offset_hz: offset,
        }
    }
}

/// Aggregation controls actually used by a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolvedControls {
    /// Waveshaper weight of channel 2.
    pub alpha: f64,
    pub phi_rad: Option<f64>,
    pub theta0_rad: Option<f64>,
    /// Amplitude ratio of the two contributions at the superposition point.
    pub alpha_eff: Option<f64>,
    pub rel_phase_rad: Option<f64>,
    pub order: Option<i32>,
}

/// Reproducibility record of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub tool: String,
    pub version: String,
    pub name: String,
    pub config_sha256: String,
    pub seed: u64,
    pub stage_seeds: [u64; 4],
    pub symbol_count: usize,
    pub sample_count: usize,
    pub controls: ResolvedControls,
    pub config: Scenario,
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: ConstellationReport,
    pub controls: ResolvedControls,
    pub diagnostics: Option<AggregationDiagnostics>,
    /// Whether received points map one-to-one onto the transmitted pairs.
    pub pairs_bijective: Option<bool>,
    /// Optical spectrum: after the aggregating modulator (before band
    /// selection), or the link output when a parent is detected.
    pub spectrum: SpectrumView,
    /// Receiver output.
    pub baseband: ComplexEnvelope,
    pub streams: [SymbolStream; 2],
    pub eye: Option<EyeDiagram>,
    pub tune: Option<TuneResult>,
    pub manifest: Manifest,
    outputs: Outputs,
}

impl Outcome {
    /// Named text artifacts in a fixed order.
    pub fn artifacts(&self) -> Vec<(&'static str, String)> {
        let mut out = vec![("report.json", self.report.to_json())];
        if self.outputs.constellation {
            out.push(("constellation.csv", self.report.to_csv()));
        }
        if self.outputs.spectrum {
            out.push(("spectrum.csv", self.spectrum.to_csv()));
        }
        if let Some(eye) = &self.eye {
            out.push(("eye.csv", eye.to_csv()));
        }
        if self.outputs.symbols {
            out.push(("symbols.csv", symbols_csv(&self.streams)));
        }
        if let Some(d) = &self.diagnostics {
            out.push((
                "diagnostics.json",
                serde_json::to_string_pretty(d).expect("diagnostics serialize"),
            ));
        }
        if let Some(t) = &self.tune {
            out.push(("tune.json", t.to_json()));
        }
        out.push((
            "manifest.json",
            serde_json::to_string_pretty(&self.manifest).expect("manifest serializes"),
        ));
        out
    }
}

/// A validated scenario with its data-independent precomputations.
pub struct Pipeline {
    scenario: Scenario,
    calibration: Option<Calibration>,
    tones: Option<[ComplexEnvelope; 3]>,
    parents: OnceLock<std::result::Result<ParentChannels, Error>>,
    floor_evm: OnceLock<std::result::Result<(f64, usize), Error>>,
    calibrated_psd: OnceLock<std::result::Result<f64, Error>>,
}

const CALIBRATION_ROUNDS: usize = 6;

impl Pipeline {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        scenario.validate()?;
        let (calibration, tones) = match &scenario.aggregation {
            Some(_) => {
                let t = tones(scenario)?;
                (
                    Some(calibrate(&t[0], &t[1], &scenario.plan(0.0)?)?),
                    Some(t),
                )
            }
            None => (None, None),
        };
        Ok(Self {
            scenario: scenario.clone(),
            calibration,
            tones,
            parents: OnceLock::new(),
            floor_evm: OnceLock::new(),
            calibrated_psd: OnceLock::new(),
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    /// Calibration with unweighted carriers.
    pub fn calibration(&self) -> Option<&Calibration> {
        self.calibration.as_ref()
    }

    /// Unweighted parent channels after the dispersion module.
    fn parents(&self) -> Result<&ParentChannels> {
        self.parents
            .get_or_init(|| {
                let mut p = build_parent_channels(&self.scenario.tx_config(1.0)?)?;
                if let Some(d) = self.scenario.dispersion() {
                    p.envelope = apply_dispersion(&p.envelope, &d)?;
                }
                Ok(p)
            })
            .as_ref()
            .map_err(Clone::clone)
    }

    /// Noiseless EVM of channel 1 at the configured receiver.
    fn floor_evm(&self) -> Result<f64> {
        self.parent_reference().map(|(evm, _)| evm)
    }

    /// Noiseless EVM and timing phase of channel 1 at the configured
    /// receiver.
    fn parent_reference(&self) -> Result<(f64, usize)> {
        self.floor_evm
            .get_or_init(|| {
                let s = &self.scenario;
                let p = self.parents()?;
                let y = receive(&p.envelope, &s.rx_config(RxChannel::Parent1))?;
                let r = recover_symbols(
                    &y,
                    s.transmitter.formats[0],
                    s.transmitter.rate_baud,
                    &s.transmitter.pulse,
                    Some(&p.streams[0].indices),
                )?;
                Ok((r.evm_avg_pct, r.timing_phase))
            })
            .clone()
    }

    fn ase_spec(&self, a: &AseSection, psd: f64, stage: u64) -> AseNoiseSpec {
        AseNoiseSpec {
            level: NoiseLevel::NoisePsd(psd),
            bpf_bandwidth_hz: a.bpf_bandwidth_hz,
            seed: stage_seed(self.scenario.seed, stage),
        }
    }

    /// Noise density (`√N0`) that gives channel 1 the configured target EVM.
    /// The analytic density is the starting point; it is then rescaled until
    /// the measured parent EVM, with this scenario's noise realization,
    /// matches the target to 0.1 %.
    pub fn calibrated_psd(&self) -> Result<f64> {
        self.calibrated_psd
            .get_or_init(|| {
                let s = &self.scenario;
                let a = s
                    .link
                    .ase
                    .ok_or_else(|| Error::config("link.ase", "no noise configured"))?;
                let target = a
                    .target_parent_evm_pct
                    .ok_or_else(|| Error::config("link.ase.target_parent_evm_pct", "not set"))?;
                let parents = self.parents()?;
                let floor = self.floor_evm()?;
                let cal = NoiseCalibration {
                    peak_to_average: parents.gains.peak_to_average(),
                    channel_power_mw: 1.0,
                    rx_bandwidth_hz: s.lowpass_bw_hz(),
                    floor_evm_pct: floor,
                };
                let spec = AseNoiseSpec {
                    level: NoiseLevel::TargetParentEvmPct(target),
                    ..self.ase_spec(&a, 0.0, STAGE_ASE_TX)
                };
                let mut psd = noise_density(&spec, Some(&cal))?.sqrt();
                for _ in 0..CALIBRATION_ROUNDS {
                    let y = apply_ase(
                        &parents.envelope,
                        &self.ase_spec(&a, psd, STAGE_ASE_TX),
                        None,
                    )?;
                    let y = receive(&y, &s.rx_config(RxChannel::Parent1))?;
                    let evm = recover_symbols(
                        &y,
                        s.transmitter.formats[0],
                        s.transmitter.rate_baud,
                        &s.transmitter.pulse,
                        None,
                    )?
                    .evm_avg_pct;
                    if (evm - target).abs() <= 1e-3 * target || evm <= floor {
                        break;
                    }
                    psd *= ((target * target - floor * floor) / (evm * evm - floor * floor)).sqrt();
                }
                Ok(psd)
            })
            .clone()
    }

    /// Controls from the configuration, without tuning.
    pub fn resolve(&self) -> Result<ResolvedControls> {
        let s = &self.scenario;
        let fixed_alpha = match s.link.alpha {
            Setting::Fixed(a) => Some(a),
            _ => None,
        };
        let (Some(agg), Some(cal)) = (&s.aggregation, &self.calibration) else {
            return Ok(ResolvedControls {
                alpha: fixed_alpha.unwrap_or(1.0),
                phi_rad: None,
                theta0_rad: None,
                alpha_eff: None,
                rel_phase_rad: None,
                order: None,
            });
        };
        let (phi, alpha) = match agg.phi_rad {
            Setting::Fixed(phi) => {
                let alpha = match fixed_alpha {
                    Some(a) => a,
                    None => {
                        let c = solve_controls(
                            s.transmitter.formats[0],
                            s.transmitter.formats[1],
                            agg.target,
                            None,
                        )?;
                        (c.alpha / cal.alpha_eff).min(1.0)
                    }
                };
                (phi, alpha)
            }
            _ => {
                // Calibrate; "tune" is handled by the caller
                let target_alpha = fixed_alpha.map(|a| a * cal.alpha_eff);
                let c = solve_controls(
                    s.transmitter.formats[0],
                    s.transmitter.formats[1],
                    agg.target,
                    target_alpha,
                )?;
                let alpha = fixed_alpha.unwrap_or((c.alpha / cal.alpha_eff).min(1.0));
                (cal.phi_for_relative(c.rel_phase_rad), alpha)
            }
        };
        Ok(self.controls_at(phi, alpha))
    }

    pub fn controls_at(&self, phi: f64, alpha: f64) -> ResolvedControls {
        let cal = self.calibration.as_ref();
        ResolvedControls {
            alpha,
            phi_rad: cal.map(|_| phi),
            theta0_rad: cal.map(|c| c.theta0_rad),
            alpha_eff: cal.map(|c| alpha * c.alpha_eff),
            rel_phase_rad: cal.map(|c| c.relative_phase(phi)),
            order: cal.map(|c| c.order),
        }
    }

    /// Noiseless aggregate at the given controls, decided blind with the
    /// symbol clock of channel 1. Used by the tuner: a free timing search
    /// can find ISI-spread sampling instants that mimic the target levels.
    pub fn probe(&self, phi: f64, alpha: f64) -> Result<ConstellationReport> {
        let s = &self.scenario;
        let x = apply_weight(
            &self.parents()?.envelope,
            &WeightPlan::upper_channel(alpha, s.grid.sample_rate_hz),
        )?;
        let plan = s.plan(phi)?;
        let y = apply_filter(
            &mzm_modulate(&x, &plan.mzm, &plan.rf.with_phase(phi))?,
            &plan.select_band,
        )?;
        let y = receive(&y, &s.rx_config(RxChannel::Aggregate))?;
        let (_, timing) = self.parent_reference()?;
        recover_symbols_at(
            &y,
            s.detected_format(),
            s.transmitter.rate_baud,
            &s.transmitter.pulse,
            None,
            Some(timing),
        )
    }

    /// Candidate whole-symbol lags of each channel at the receiver. Filters
    /// are zero-phase, so only dispersion delays a channel.
    fn lag_candidates(&self) -> [Vec<i64>; 2] {
        let s = &self.scenario;
        let half = s.transmitter.carrier.spacing_hz / 2.0;
        match s.dispersion() {
            None => [vec![0], vec![0]],
            Some(d) => [-half, half].map(|f| {
                let l = d.differential_delay_s(f) * s.transmitter.rate_baud;
                (l.floor() as i64 - 1..=l.ceil() as i64 + 1).collect()
            }),
        }
    }

    /// Data source of channel 2: its own stream, or channel 1's when both
    /// share a modulator.
    fn channel2_source<'a>(&self, streams: &'a [SymbolStream; 2]) -> &'a [usize] {
        match self.scenario.transmitter.decorrelation {
            Decorrelation::Dispersion => &streams[0].indices,
            Decorrelation::IndependentData => &streams[1].indices,
        }
    }

    /// One pass through the whole chain at the given controls.
    pub fn evaluate(&self, controls: &ResolvedControls, with_noise: bool) -> Result<Outcome> {
        let s = &self.scenario;
        let parents = self.parents()?;
        let fs = s.grid.sample_rate_hz;
        let mut x = apply_weight(
            &parents.envelope,
            &WeightPlan::upper_channel(controls.alpha, fs),
        )?;

        let ase = if with_noise { s.link.ase } else { None };
        if let Some(a) = ase.filter(|a| a.placement == NoisePlacement::AfterTransmitter) {
            let psd = match (a.target_parent_evm_pct, a.noise_psd) {
                (Some(_), _) => self.calibrated_psd()?,
                (None, Some(p)) => p,
                (None, None) => unreachable!("validated"),
            };
            x = apply_ase(&x, &self.ase_spec(&a, psd, STAGE_ASE_TX), None)?;
        }

        let channel = s.receiver.channel;
        let idx1 = &parents.streams[0].indices;
        let idx2 = self.channel2_source(&parents.streams);
        let n2 = s.transmitter.formats[1].order();
        let mut diagnostics = None;
        let mut pair_map: Option<Vec<usize>> = None;
        let spectrum;
        if channel == RxChannel::Aggregate {
            let agg = s.aggregation.expect("validated");
            let phi = controls.phi_rad.unwrap_or(0.0);
            let plan = s.plan(phi)?;
            let raw = mzm_modulate(&x, &plan.mzm, &plan.rf.with_phase(phi))?;
            spectrum = raw.spectrum();
            x = apply_filter(&raw, &plan.select_band)?;
            if let Some(a) = ase.filter(|a| a.placement == NoisePlacement::AfterAggregation) {
                let spec = AseNoiseSpec {
                    level: NoiseLevel::NoisePsd(a.noise_psd.expect("validated")),
                    bpf_bandwidth_hz: a.bpf_bandwidth_hz,
                    seed: stage_seed(s.seed, STAGE_ASE_AGG),
                };
                x = apply_ase(&x, &spec, None)?;
            }
            let [t1, t2, rest] = self.tones.as_ref().expect("aggregation scenario");
            let weight = WeightPlan::upper_channel(controls.alpha, fs);
            diagnostics = Some(diagnose(
                t1,
                &apply_weight(t2, &weight)?,
                &apply_weight(rest, &weight)?,
                &plan,
            )?);
            let pred = predict_format(
                s.transmitter.formats[0],
                s.transmitter.formats[1],
                controls.alpha_eff.expect("calibrated"),
                controls.rel_phase_rad.expect("calibrated"),
            )?;
            pair_map = pred.map_to_target(agg.target, 0.05);
        } else {
            spectrum = x.spectrum();
        }

        let rx = s.rx_config(channel);
        let baseband = receive(&x, &rx)?;
        let format = s.detected_format();
        let rate = s.transmitter.rate_baud;
        let blind = recover_symbols(&baseband, format, rate, &s.transmitter.pulse, None)?;
        let [lags1, lags2] = self.lag_candidates();
        let mut candidates: Vec<(Vec<usize>, Vec<usize>, Vec<usize>)> = Vec::new();
        match channel {
            RxChannel::Aggregate => {
                if let Some(map) = &pair_map {
                    for &l1 in &lags1 {
                        for &l2 in &lags2 {
                            let a = lagged(idx1, l1);
                            let b = lagged(idx2, l2);
                            let t = a.iter().zip(&b).map(|(&i, &j)| map[i * n2 + j]).collect();
                            candidates.push((t, a, b));
                        }
                    }
                }
            }
            RxChannel::Parent1 => {
                candidates.extend(lags1.iter().map(|&l| (lagged(idx1, l), vec![], vec![])))
            }
            RxChannel::Parent2 => {
                candidates.extend(lags2.iter().map(|&l| (lagged(idx2, l), vec![], vec![])))
            }
        }
        let best = candidates
            .into_iter()
            .min_by_key(|(t, _, _)| symbol_errors(&blind.recovered, t, format));
        let (report, pairs_ok) = match best {
            Some((truth, a, b)) => {
                let report =
                    recover_symbols(&baseband, format, rate, &s.transmitter.pulse, Some(&truth))?;
                let ok = (channel == RxChannel::Aggregate)
                    .then(|| pairs_bijective(&pair_decision_table(&a, &b, n2, &report.decisions)));
                (report, ok)
            }
            None => (blind, (channel == RxChannel::Aggregate).then_some(false)),
        };
        let eye = if s.outputs.eye {
            Some(eye_diagram(
                &baseband,
                s.transmitter.rate_baud,
                s.outputs.eye_span_symbols,
            )?)
        } else {
            None
        };
        let manifest = Manifest {
            manifest_version: 1,
            tool: "optagg".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            name: s.name.clone(),
            config_sha256: s.config_hash(),
            seed: s.seed,
            stage_seeds: [0, 1, 2, 3].map(|k| stage_seed(s.seed, k)),
            symbol_count: s.transmitter.symbol_count,
            sample_count: s.sample_count()?,
            controls: *controls,
            config: s.clone(),
        };
        Ok(Outcome {
            report,
            controls: *controls,
            diagnostics,
            pairs_bijective: pairs_ok,
            spectrum,
            baseband,
            streams: parents.streams.clone(),
            eye,
            tune: None,
            manifest,
            outputs: s.outputs,
        })
    }
}

fn lagged(idx: &[usize], lag: i64) -> Vec<usize> {
    let k = idx.len() as i64;
    (0..k)
        .map(|i| idx[(i - lag).rem_euclid(k) as usize])
        .collect()
}

/// Fewest decision errors of `recovered` against `truth` over the format's
/// rotational symmetry.
fn symbol_errors(recovered: &[Complex64], truth: &[usize], format: ModFormat) -> usize {
    let m = format.phase_symmetry();
    (0..m)
        .map(|k| {
            let rot = Complex64::from_polar(1.0, std::f64::consts::TAU * k as f64 / m as f64);
            recovered
                .iter()
                .zip(truth)
                .filter(|(z, &t)| format.nearest(**z * rot) != t)
                .count()
        })
        .min()
        .unwrap_or(0)
}

/// Smallest symbol count of at least `min` that fits the scenario's grid
/// and drive frequencies.
pub fn commensurate_symbol_count(s: &Scenario, min: usize) -> Result<usize> {
    let mut t = s.clone();
    let even = t.transmitter.pulse.kind == crate::transmitter::PulseKind::SincSequence;
    for k in min.max(2)..min.max(2) + 100_000 {
        if even && k % 2 == 1 {
            continue;
        }
        t.transmitter.symbol_count = k;
        let fits = t.fits(t.transmitter.carrier.spacing_hz / 2.0)
            && t.aggregation.is_none_or(|a| t.fits(a.rf_freq_hz));
        if fits {
            return Ok(k);
        }
    }
    Err(Error::config(
        "transmitter.symbol_count",
        format!("no symbol count near {min} fits the grid and drive frequencies"),
    ))
}

/// Isolated CW tones after the link: `[lower, upper, residual comb]`,
/// unweighted.
fn tones(s: &Scenario) -> Result<[ComplexEnvelope; 3]> {
    let carriers = optical_carriers(&s.tx_config(1.0)?)?;
    let carriers = match s.dispersion() {
        Some(d) => apply_dispersion(&carriers, &d)?,
        None => carriers,
    };
    isolate_tones(&carriers, s.transmitter.carrier.spacing_hz / 2.0)
}

/// Runs a scenario, tuning first when the drive phase says so.
pub fn run(s: &Scenario) -> Result<Outcome> {
    let pipeline = Pipeline::new(s)?;
    let tuned = match s.aggregation.map(|a| a.phi_rad) {
        Some(Setting::Auto(AutoMode::Tune)) => Some(tune(s, &TuneSpec::for_scenario(s))?),
        _ => None,
    };
    let controls = match &tuned {
        Some(t) => pipeline.controls_at(t.phi_star_rad, t.alpha_star),
        None => pipeline.resolve()?,
    };
    let mut out = pipeline.evaluate(&controls, true)?;
    out.tune = tuned;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    PhiRad,
    Alpha,
    TargetEvmPct,
    RateBaud,
}

impl SweepParam {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "phi" | "phi_rad" => Some(Self::PhiRad),
            "alpha" => Some(Self::Alpha),
            "target_evm" | "target_evm_pct" | "evm" => Some(Self::TargetEvmPct),
            "rate" | "rate_baud" => Some(Self::RateBaud),
            _ => None,
        }
    }

    pub const NAMES: [&'static str; 4] = ["phi_rad", "alpha", "target_evm_pct", "rate_baud"];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub evm_avg_pct: f64,
    pub evm_std_pct: f64,
    pub q_factor: Option<f64>,
    pub ser: Option<f64>,
}

/// Scenario with one parameter overridden. Controls not being swept are
/// pinned to the values the base scenario resolves to.
pub fn sweep_point(
    base: &Scenario,
    pinned: &ResolvedControls,
    param: SweepParam,
    value: f64,
) -> Result<Scenario> {
    let mut s = base.clone();
    let pin_phi = |s: &mut Scenario| {
        if let (Some(agg), Some(phi)) = (s.aggregation.as_mut(), pinned.phi_rad) {
            agg.phi_rad = Setting::Fixed(phi);
        }
    };
    match param {
        SweepParam::PhiRad => {
            let agg = s.aggregation.as_mut().ok_or_else(|| {
                Error::config("aggregation.phi_rad", "scenario has no aggregation stage")
            })?;
            agg.phi_rad = Setting::Fixed(value);
            s.link.alpha = Setting::Fixed(pinned.alpha);
        }
        SweepParam::Alpha => {
            s.link.alpha = Setting::Fixed(value);
            pin_phi(&mut s);
        }
        SweepParam::TargetEvmPct => {
            let mut a = s.link.ase.unwrap_or(AseSection {
                target_parent_evm_pct: None,
                noise_psd: None,
                bpf_bandwidth_hz: DEFAULT_BPF_HZ,
                placement: NoisePlacement::AfterTransmitter,
            });
            a.target_parent_evm_pct = Some(value);
            a.noise_psd = None;
            a.placement = NoisePlacement::AfterTransmitter;
            s.link.ase = Some(a);
        }
        SweepParam::RateBaud => s.transmitter.rate_baud = value,
    }
    s.validate()?;
    Ok(s)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let opt = |v: Option<f64>| match v {
        Some(x) if x.is_infinite() => "inf".to_string(),
        Some(x) => x.to_string(),
        None => String::new(),
    };
    let mut out = String::from("value,evm_avg,evm_std,q_factor,ser\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.value,
            r.evm_avg_pct,
            r.evm_std_pct,
            opt(r.q_factor),
            opt(r.ser)
        );
    }
    out
}

/// Runs `values` in parallel on the current rayon pool; `each` sees every
/// point's outcome (for writing artifacts) before it is dropped.
pub fn sweep<F>(
    base: &Scenario,
    param: SweepParam,
    values: &[f64],
    each: F,
) -> Result<Vec<SweepRow>>
where
    F: Fn(usize, f64, &Outcome) -> Result<()> + Sync,
{
    if values.is_empty() {
        return Err(Error::config("values", "sweep needs at least one value"));
    }
    let pinned = match base.aggregation.map(|a| a.phi_rad) {
        Some(Setting::Auto(AutoMode::Tune)) => {
            let t = tune(base, &TuneSpec::for_scenario(base))?;
            Pipeline::new(base)?.controls_at(t.phi_star_rad, t.alpha_star)
        }
        _ => Pipeline::new(base)?.resolve()?,
    };
    let points: Vec<Scenario> = values
        .iter()
        .map(|&v| sweep_point(base, &pinned, param, v))
        .collect::<Result<_>>()?;
    points
        .par_iter()
        .zip(values.par_iter())
        .enumerate()
        .map(|(i, (s, &v))| {
            let out = run(s)?;
            each(i, v, &out)?;
            Ok(SweepRow {
                value: v,
                evm_avg_pct: out.report.evm_avg_pct,
                evm_std_pct: out.report.evm_std_pct,
                q_factor: out.report.q_factor,
                ser: out.report.ser,
            })
        })
        .collect()
}

/// Bundled scenarios, one per reproduced figure.
pub const GOLDEN: [(&str, &str, &str); 9] = [
    (
        "fig5a_qpsk",
        "BPSK + BPSK -> QPSK, 10 GBd raised cosine",
        include_str!("../scenarios/fig5a_qpsk.json"),
    ),
    (
        "fig5b_pam4",
        "BPSK + BPSK -> PAM-4, 10 GBd raised cosine",
        include_str!("../scenarios/fig5b_pam4.json"),
    ),
    (
        "fig6_qam16",
        "QPSK + QPSK -> QAM-16, 10 GBd raised cosine, output spectrum and eye",
        include_str!("../scenarios/fig6_qam16.json"),
    ),
    (
        "fig7a_nyq5_qpsk",
        "Nyquist BPSK + BPSK -> QPSK, 5 GBd",
        include_str!("../scenarios/fig7a_nyq5_qpsk.json"),
    ),
    (
        "fig7b_nyq8_qpsk",
        "Nyquist BPSK + BPSK -> QPSK, 8 GBd",
        include_str!("../scenarios/fig7b_nyq8_qpsk.json"),
    ),
    (
        "fig7c_nyq5_pam4",
        "Nyquist BPSK + BPSK -> PAM-4, 5 GBd",
        include_str!("../scenarios/fig7c_nyq5_pam4.json"),
    ),
    (
        "fig7d_nyq8_pam4",
        "Nyquist BPSK + BPSK -> PAM-4, 8 GBd",
        include_str!("../scenarios/fig7d_nyq8_pam4.json"),
    ),
    (
        "fig8a_nyq5_qam16",
        "Nyquist QPSK + QPSK -> QAM-16, 5 GBd",
        include_str!("../scenarios/fig8a_nyq5_qam16.json"),
    ),
    (
        "fig8b_nyq8_qam16",
        "Nyquist QPSK + QPSK -> QAM-16, 8 GBd, eye diagram",
        include_str!("../scenarios/fig8b_nyq8_qam16.json"),
    ),
];

pub fn golden(name: &str) -> Option<Scenario> {
    GOLDEN
        .iter()
        .find(|(n, _, _)| *n == name)
        .map(|(_, _, text)| Scenario::from_json(text).expect("bundled scenario is valid"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Scenario {
        let mut s = golden("fig5a_qpsk").unwrap();
        s.transmitter.symbol_count = 500;
        s
    }

    #[test]
    fn stage_seeds_are_distinct_and_stable() {
        let seeds: Vec<u64> = (0..4).map(|k| stage_seed(42, k)).collect();
        let mut d = seeds.clone();
        d.sort_unstable();
        d.dedup();
        assert_eq!(d.len(), 4);
        assert_eq!(seeds, (0..4).map(|k| stage_seed(42, k)).collect::<Vec<_>>());
        assert_ne!(stage_seed(43, 0), seeds[0]);
    }

    #[test]
    fn goldens_parse_and_round_trip() {
        for (name, _, text) in GOLDEN {
            let s = Scenario::from_json(text).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(s.name, name);
            let again = Scenario::from_json(&s.to_json()).unwrap();
            assert_eq!(again, s);
        }
    }

    #[test]
    fn schema_errors_name_field_and_line() {
        let text = "{\n  \"name\": \"x\",\n  \"grid\": {\"sample_rate_hz\": \"fast\"}\n}";
        let e = Scenario::from_json(text).unwrap_err();
        match e {
            Error::Config { field, reason } => {
                assert_eq!(field, "grid.sample_rate_hz");
                assert!(reason.starts_with("line 3"), "{reason}");
            }
            other => panic!("{other}"),
        }
        let mut s = small();
        s.receiver.lowpass_bw_hz = Some(1e15);
        let e = Scenario::from_json(&s.to_json()).unwrap_err();
        assert!(
            matches!(&e, Error::Config { field, .. } if field == "receiver.lowpass_bw_hz"),
            "{e}"
        );
        assert!(e.to_string().contains("line "));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&small().to_json()).unwrap();
        v["receiver"]["bandwidth"] = 1.into();
        let e = Scenario::from_json(&v.to_string()).unwrap_err();
        assert!(
            matches!(&e, Error::Config { field, .. } if field.starts_with("receiver")),
            "{e}"
        );
    }

    #[test]
    fn incommensurate_symbol_count_is_a_config_error() {
        let mut s = small();
        s.transmitter.symbol_count = 512;
        assert!(
            matches!(s.validate(), Err(Error::Config { field, .. }) if field.starts_with("transmitter") || field.starts_with("aggregation"))
        );
    }

    #[test]
    fn infeasible_target_is_a_config_error() {
        let mut s = small();
        s.aggregation.as_mut().unwrap().target = ModFormat::Qam16;
        assert!(
            matches!(s.validate(), Err(Error::Config { field, .. }) if field == "aggregation.target")
        );
    }

    #[test]
    fn small_run_is_clean_and_deterministic() {
        let s = small();
        let a = run(&s).unwrap();
        assert_eq!(a.report.ser, Some(0.0));
        assert_eq!(a.pairs_bijective, Some(true));
        assert!(a.report.evm_avg_pct < 1.0);
        let b = run(&s).unwrap();
        assert_eq!(a.artifacts(), b.artifacts());
    }

    #[test]
    fn manifest_reruns_identically() {
        let s = small();
        let a = run(&s).unwrap();
        let manifest = a
            .artifacts()
            .into_iter()
            .find(|(n, _)| *n == "manifest.json")
            .unwrap()
            .1;
        let again = Scenario::from_json(&manifest).unwrap();
        assert_eq!(again, s);
        assert_eq!(run(&again).unwrap().artifacts(), a.artifacts());
    }

    #[test]
    fn parent_channels_can_be_detected() {
        let mut s = small();
        for ch in [RxChannel::Parent1, RxChannel::Parent2] {
            s.receiver.channel = ch;
            let out = run(&s).unwrap();
            assert_eq!(out.report.format, ModFormat::Bpsk);
            assert_eq!(out.report.ser, Some(0.0));
            assert!(out.pairs_bijective.is_none());
        }
    }

    #[test]
    fn sweep_rejects_empty_values() {
        let e = sweep(&small(), SweepParam::Alpha, &[], |_, _, _| Ok(())).unwrap_err();
        assert!(e.is_config());
    }
}
