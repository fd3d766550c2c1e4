//! Electro-optic device models: the single-drive Mach-Zehnder modulator, an
//! ideal I/Q modulator, and the Jacobi-Anger sideband series of the MZM.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{commensurate_cycles, tone_phases, ComplexEnvelope};

/// Sidebands weaker than this (relative to the strongest input bin) may fold
/// over Nyquist without raising an aliasing error.
pub const SIDEBAND_NEGLIGIBLE: f64 = 1e-12;

/// Single-drive MZM. The bias acts as a phase `π·bias_v/v_pi` in the driven
/// arm; finite extinction is an amplitude imbalance of the static arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MzmParams {
    pub v_pi: f64,
    pub bias_v: f64,
    /// Positive; `f64::INFINITY` for a perfectly balanced device. Written as
    /// the string `"inf"` in JSON.
    #[serde(with = "crate::serde_inf", default = "default_er")]
    pub extinction_ratio_db: f64,
}

fn default_er() -> f64 {
    20.0
}

impl Default for MzmParams {
    /// Null-biased, 20 dB extinction.
    fn default() -> Self {
        Self {
            v_pi: 5.0,
            bias_v: 5.0,
            extinction_ratio_db: 20.0,
        }
    }
}

impl MzmParams {
    pub fn null_biased(extinction_ratio_db: f64) -> Self {
        Self {
            extinction_ratio_db,
            ..Self::default()
        }
    }

    pub fn quadrature_free(extinction_ratio_db: f64) -> Self {
        Self {
            v_pi: 5.0,
            bias_v: 0.0,
            extinction_ratio_db,
        }
    }

    /// Device whose static arm has amplitude `r` (0 < r ≤ 1).
    pub fn from_static_arm(v_pi: f64, bias_v: f64, r: f64) -> Result<Self> {
        if !(r > 0.0 && r <= 1.0) {
            return Err(Error::Modulator(format!(
                "static-arm amplitude must lie in (0, 1], got {r}"
            )));
        }
        let er = if r == 1.0 {
            f64::INFINITY
        } else {
            20.0 * ((1.0 + r) / (1.0 - r)).log10()
        };
        let p = Self {
            v_pi,
            bias_v,
            extinction_ratio_db: er,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_pi > 0.0 && self.v_pi.is_finite()) {
            return Err(Error::Modulator(format!(
                "v_pi must be positive, got {}",
                self.v_pi
            )));
        }
        if !self.bias_v.is_finite() {
            return Err(Error::Modulator("bias_v must be finite".into()));
        }
        if !(self.extinction_ratio_db > 0.0) {
            return Err(Error::Modulator(format!(
                "extinction ratio must be positive, got {} dB",
                self.extinction_ratio_db
            )));
        }
        Ok(())
    }

    /// Phase `π·bias_v/v_pi` added to the driven arm.
    pub fn bias_phase(&self) -> f64 {
        PI * self.bias_v / self.v_pi
    }

    /// Static-arm amplitude `(a−1)/(a+1)` with `a = 10^{ER/20}`; 1 for
    /// infinite extinction.
    pub fn static_arm(&self) -> f64 {
        if self.extinction_ratio_db.is_infinite() {
            1.0
        } else {
            let a = 10f64.powf(self.extinction_ratio_db / 20.0);
            (a - 1.0) / (a + 1.0)
        }
    }
}

/// Sinusoidal RF drive `m·sin(2π·f·t + φ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RfDrive {
    pub freq_hz: f64,
    pub mod_index: f64,
    #[serde(default)]
    pub phase_rad: f64,
}

impl RfDrive {
    pub fn new(freq_hz: f64, mod_index: f64, phase_rad: f64) -> Self {
        Self {
            freq_hz,
            mod_index,
            phase_rad,
        }
    }

    pub fn with_phase(self, phase_rad: f64) -> Self {
        Self { phase_rad, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.freq_hz > 0.0 && self.freq_hz.is_finite()) {
            return Err(Error::Modulator(format!(
                "drive frequency must be positive, got {}",
                self.freq_hz
            )));
        }
        if !(self.mod_index >= 0.0 && self.mod_index.is_finite()) {
            return Err(Error::Modulator(format!(
                "modulation index must be non-negative, got {}",
                self.mod_index
            )));
        }
        if !self.phase_rad.is_finite() {
            return Err(Error::Modulator("drive phase must be finite".into()));
        }
        Ok(())
    }
}

/// Complex coefficient of each sideband order `n` (at offset `n·f_m`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidebandTable {
    pub orders: BTreeMap<i32, Complex64>,
}

impl SidebandTable {
    pub fn get(&self, n: i32) -> Complex64 {
        self.orders.get(&n).copied().unwrap_or_default()
    }
}

/// Bessel function of the first kind of integer order.
pub fn bessel_j(n: i32, x: f64) -> f64 {
    if n < 0 {
        let v = bessel_j(-n, x);
        return if n % 2 == 0 { v } else { -v };
    }
    if x < 0.0 {
        let v = bessel_j(n, -x);
        return if n % 2 == 0 { v } else { -v };
    }
    bessel_j_range(n as usize, x)[n as usize]
}

/// `J_0(x) … J_nmax(x)` for `x ≥ 0` by Miller's backward recurrence,
/// normalized with `J_0 + 2·Σ J_2k = 1`.
pub fn bessel_j_range(nmax: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; nmax + 1];
    if x == 0.0 {
        out[0] = 1.0;
        return out;
    }
    let x = x.abs();
    let top = nmax.max(x.ceil() as usize);
    let mut start = top + 20 + (40.0 * top as f64).sqrt() as usize;
    start += start % 2;
    let mut next = 0.0;
    let mut cur = 1e-30;
    let mut norm = 0.0;
    for k in (1..=start).rev() {
        // cur holds J_k, next holds J_{k+1}
        if k <= nmax {
            out[k] = cur;
        }
        if k % 2 == 0 {
            norm += 2.0 * cur;
        }
        let prev = 2.0 * k as f64 / x * cur - next;
        next = cur;
        cur = prev;
        if cur.abs() > 1e250 {
            let s = 1e-250;
            cur *= s;
            next *= s;
            norm *= s;
            out.iter_mut().for_each(|v| *v *= s);
        }
    }
    out[0] = cur;
    norm += cur;
    out.iter_mut().for_each(|v| *v /= norm);
    out
}

/// Analytic sideband coefficients of the two-arm model for orders
/// `−n_max..=n_max`: `½·[J_n(m)·e^{i(nφ + β)} + r·δ_n0]`.
pub fn sideband_coefficients(p: &MzmParams, d: &RfDrive, n_max: u32) -> SidebandTable {
    let n_max = n_max.max(1) as i32;
    let j = bessel_j_range(n_max as usize, d.mod_index);
    let beta = p.bias_phase();
    let r = p.static_arm();
    let mut orders = BTreeMap::new();
    for n in -n_max..=n_max {
        let jn = if n < 0 && n % 2 != 0 {
            -j[(-n) as usize]
        } else {
            j[n.unsigned_abs() as usize]
        };
        let mut c = Complex64::from_polar(jn, n as f64 * d.phase_rad + beta) * 0.5;
        if n == 0 {
            c += 0.5 * r;
        }
        orders.insert(n, c);
    }
    SidebandTable { orders }
}

/// Highest order whose Bessel weight exceeds `floor`.
fn significant_order(mod_index: f64, floor: f64) -> usize {
    if mod_index == 0.0 {
        return 0;
    }
    let probe = (mod_index.ceil() as usize + 60).max(8);
    let j = bessel_j_range(probe, mod_index);
    (0..=probe).rev().find(|&n| j[n].abs() > floor).unwrap_or(0)
}

/// How far a drive spreads a single tone: the highest significant sideband
/// order times the drive frequency.
pub fn sideband_reach_hz(d: &RfDrive) -> f64 {
    significant_order(d.mod_index, SIDEBAND_NEGLIGIBLE) as f64 * d.freq_hz
}

fn check_sideband_aliasing(x: &ComplexEnvelope, d: &RfDrive) -> Result<()> {
    if d.mod_index == 0.0 {
        return Ok(());
    }
    let bins = x.spectrum();
    let peak = bins.bins.iter().map(|b| b.norm()).fold(0.0, f64::max);
    if peak == 0.0 {
        return Ok(());
    }
    let nmax = significant_order(d.mod_index, SIDEBAND_NEGLIGIBLE);
    let j = bessel_j_range(nmax, d.mod_index);
    let nyq = x.sample_rate_hz() / 2.0;
    for (i, b) in bins.bins.iter().enumerate() {
        let a = b.norm() / peak;
        if a <= SIDEBAND_NEGLIGIBLE {
            continue;
        }
        let Some(n) = (1..=nmax)
            .rev()
            .find(|&n| a * j[n].abs() > SIDEBAND_NEGLIGIBLE)
        else {
            continue;
        };
        let f = bins.offset_hz(i);
        let reach = n as f64 * d.freq_hz;
        if f + reach >= nyq || f - reach < -nyq {
            return Err(Error::Aliasing(format!(
                "MZM sideband of order {n} from the component at {f} Hz reaches beyond ±{nyq} Hz"
            )));
        }
    }
    Ok(())
}

/// Two-arm MZM: `out = ½·x·[e^{i(m·sin(2π·f_m·t + φ) + β)} + r]`.
///
/// The drive must complete a whole number of cycles in the window so the
/// periodic simulation stays consistent.
pub fn mzm_modulate(x: &ComplexEnvelope, p: &MzmParams, d: &RfDrive) -> Result<ComplexEnvelope> {
    p.validate()?;
    d.validate()?;
    if commensurate_cycles(d.freq_hz, x.sample_rate_hz(), x.len()).is_none() {
        return Err(Error::Modulator(format!(
            "drive at {} Hz does not complete a whole number of cycles in the {} s window",
            d.freq_hz,
            x.window_s()
        )));
    }
    check_sideband_aliasing(x, d)?;
    let beta = p.bias_phase();
    let r = p.static_arm();
    let phases = tone_phases(d.freq_hz, x.sample_rate_hz(), x.len());
    let out = x
        .samples()
        .iter()
        .zip(phases)
        .map(|(s, wt)| {
            let arm = Complex64::from_polar(1.0, d.mod_index * (wt + d.phase_rad).sin() + beta);
            s * 0.5 * (arm + r)
        })
        .collect();
    Ok(x.with_samples(out))
}

/// Ideal I/Q modulator: pointwise product of the optical carrier and the
/// electrical data envelope.
pub fn iq_modulate(carrier: &ComplexEnvelope, data: &ComplexEnvelope) -> Result<ComplexEnvelope> {
    if carrier.len() != data.len() || carrier.sample_rate_hz() != data.sample_rate_hz() {
        return Err(Error::GridMismatch(format!(
            "carrier ({} samples at {} Hz) vs data ({} samples at {} Hz)",
            carrier.len(),
            carrier.sample_rate_hz(),
            data.len(),
            data.sample_rate_hz()
        )));
    }
    Ok(carrier.with_samples(
        carrier
            .samples()
            .iter()
            .zip(data.samples())
            .map(|(c, d)| c * d)
            .collect(),
    ))
}
