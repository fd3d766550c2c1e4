//! Inter-stage elements: waveshaper weighting, the dispersion module and
//! amplifier noise with its bandpass filter.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{apply_filter, ComplexEnvelope, FilterSpec};

pub const SPEED_OF_LIGHT_M_S: f64 = 299_792_458.0;

/// Default noise bandpass: 3 nm at 1550 nm.
pub const DEFAULT_BPF_HZ: f64 = 375e9;

/// Scales the bins inside `applied_band_hz` (inclusive) by `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightPlan {
    pub alpha: f64,
    pub applied_band_hz: (f64, f64),
}

impl WeightPlan {
    pub fn new(alpha: f64, lo_hz: f64, hi_hz: f64) -> Self {
        Self {
            alpha,
            applied_band_hz: (lo_hz, hi_hz),
        }
    }

    /// Weight everything strictly above the grid centre.
    pub fn upper_channel(alpha: f64, sample_rate_hz: f64) -> Self {
        Self::new(alpha, 1.0, sample_rate_hz / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Link(format!(
                "alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        let (lo, hi) = self.applied_band_hz;
        if !(lo < hi) {
            return Err(Error::Link(format!("weight band [{lo}, {hi}] Hz is empty")));
        }
        Ok(())
    }
}

pub fn apply_weight(x: &ComplexEnvelope, w: &WeightPlan) -> Result<ComplexEnvelope> {
    w.validate()?;
    if w.alpha == 1.0 {
        return Ok(x.clone());
    }
    let (lo, hi) = w.applied_band_hz;
    let tol = 1e-9 * x.bin_spacing_hz();
    let mut bins = x.dft();
    for (j, b) in bins.iter_mut().enumerate() {
        let f = x.bin_freq(j);
        if f >= lo - tol && f <= hi + tol {
            *b *= w.alpha;
        }
    }
    Ok(x.with_dft(bins))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispersionSpec {
    pub d_ps_per_nm: f64,
    #[serde(default = "default_wavelength")]
    pub ref_wavelength_nm: f64,
}

fn default_wavelength() -> f64 {
    1550.0
}

impl DispersionSpec {
    pub fn new(d_ps_per_nm: f64) -> Self {
        Self {
            d_ps_per_nm,
            ref_wavelength_nm: default_wavelength(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_ps_per_nm.abs() <= 10_000.0) {
            return Err(Error::Link(format!(
                "dispersion {} ps/nm is outside ±10000 ps/nm",
                self.d_ps_per_nm
            )));
        }
        if !(self.ref_wavelength_nm > 0.0 && self.ref_wavelength_nm.is_finite()) {
            return Err(Error::Link(format!(
                "reference wavelength must be positive, got {} nm",
                self.ref_wavelength_nm
            )));
        }
        Ok(())
    }

    /// `D·λ²/c` in s²: group delay per unit of baseband frequency.
    pub fn delay_slope_s2(&self) -> f64 {
        let d_s_per_m2 = self.d_ps_per_nm * 1e-3;
        let lambda = self.ref_wavelength_nm * 1e-9;
        d_s_per_m2 * lambda * lambda / SPEED_OF_LIGHT_M_S
    }

    /// Group-delay difference between two frequencies `delta_f_hz` apart.
    pub fn differential_delay_s(&self, delta_f_hz: f64) -> f64 {
        self.delay_slope_s2() * delta_f_hz
    }
}

/// All-pass quadratic phase `exp(−iπ·K·f²)`, `K = D·λ²/c`. A component at
/// baseband frequency `f` is delayed by `K·f`.
pub fn apply_dispersion(x: &ComplexEnvelope, d: &DispersionSpec) -> Result<ComplexEnvelope> {
    d.validate()?;
    if d.d_ps_per_nm == 0.0 {
        return Ok(x.clone());
    }
    let k = d.delay_slope_s2();
    let mut bins = x.dft();
    for (j, b) in bins.iter_mut().enumerate() {
        let f = x.bin_freq(j);
        *b *= Complex64::from_polar(1.0, -PI * k * f * f);
    }
    Ok(x.with_dft(bins))
}

/// How the noise level is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLevel {
    /// EVM (percent) a unit-power parent channel should show at the
    /// reference receiver.
    TargetParentEvmPct(f64),
    /// Amplitude density `√N0` in √mW/√Hz, where `N0` is the complex noise
    /// power per Hz.
    NoisePsd(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AseNoiseSpec {
    pub level: NoiseLevel,
    pub bpf_bandwidth_hz: f64,
    pub seed: u64,
}

impl AseNoiseSpec {
    pub fn target_evm(pct: f64, seed: u64) -> Self {
        Self {
            level: NoiseLevel::TargetParentEvmPct(pct),
            bpf_bandwidth_hz: DEFAULT_BPF_HZ,
            seed,
        }
    }

    pub fn psd(noise_psd: f64, seed: u64) -> Self {
        Self {
            level: NoiseLevel::NoisePsd(noise_psd),
            bpf_bandwidth_hz: DEFAULT_BPF_HZ,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.level {
            NoiseLevel::TargetParentEvmPct(p) if !(p > 0.0 && p.is_finite()) => {
                return Err(Error::Link(format!(
                    "target EVM must be positive, got {p}%"
                )))
            }
            NoiseLevel::NoisePsd(p) if !(p >= 0.0 && p.is_finite()) => {
                return Err(Error::Link(format!(
                    "noise density must be non-negative, got {p}"
                )))
            }
            _ => {}
        }
        if !(self.bpf_bandwidth_hz > 0.0 && self.bpf_bandwidth_hz.is_finite()) {
            return Err(Error::Link(format!(
                "BPF bandwidth must be positive, got {} Hz",
                self.bpf_bandwidth_hz
            )));
        }
        Ok(())
    }
}

/// Reference-receiver facts needed to turn a target EVM into a noise level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseCalibration {
    /// Symbol-centre power over mean power of the pulse train.
    pub peak_to_average: f64,
    /// Mean power of one parent channel (mW).
    pub channel_power_mw: f64,
    /// Two-sided noise bandwidth of the reference receiver.
    pub rx_bandwidth_hz: f64,
    /// Noiseless EVM of the reference chain, subtracted in quadrature.
    pub floor_evm_pct: f64,
}

/// Noise-to-symbol power ratio that makes a power-normalized receiver
/// report an EVM of `evm_pct`, assuming correct decisions.
///
/// After normalizing `s + n` to unit power the error is
/// `2 − 2/√(1 + σ²)`, which inverts to the expression below.
pub fn noise_ratio_for_evm(evm_pct: f64) -> Result<f64> {
    let e2 = (evm_pct / 100.0).powi(2);
    if !(e2 < 2.0) {
        return Err(Error::Calibration(format!(
            "EVM {evm_pct}% is not reachable with additive noise"
        )));
    }
    // (2/(2−e²))² − 1 without the cancellation at small e
    Ok(e2 * (4.0 - e2) / (2.0 - e2).powi(2))
}

/// Inverse of [`noise_ratio_for_evm`].
pub fn evm_for_noise_ratio(sigma2: f64) -> f64 {
    let root = (1.0 + sigma2).sqrt();
    100.0 * (2.0 * sigma2 / (root * (root + 1.0))).sqrt()
}

/// Two-sided noise density N0 (mW/Hz) for the spec, resolving target-EVM
/// mode through `cal`.
pub fn noise_density(n: &AseNoiseSpec, cal: Option<&NoiseCalibration>) -> Result<f64> {
    n.validate()?;
    match n.level {
        NoiseLevel::NoisePsd(p) => Ok(p * p),
        NoiseLevel::TargetParentEvmPct(target) => {
            let cal = cal.ok_or_else(|| {
                Error::Calibration("target-EVM noise needs a reference receiver description".into())
            })?;
            if target <= cal.floor_evm_pct {
                return Err(Error::Calibration(format!(
                    "target EVM {target}% is at or below the noiseless floor {}%",
                    cal.floor_evm_pct
                )));
            }
            let effective = (target * target - cal.floor_evm_pct * cal.floor_evm_pct).sqrt();
            let sigma2 = noise_ratio_for_evm(effective)?;
            let symbol_power = cal.peak_to_average * cal.channel_power_mw;
            Ok(sigma2 * symbol_power / cal.rx_bandwidth_hz)
        }
    }
}

/// Adds circular complex white Gaussian noise, brickwall-limited to the BPF.
pub fn apply_ase(
    x: &ComplexEnvelope,
    n: &AseNoiseSpec,
    cal: Option<&NoiseCalibration>,
) -> Result<ComplexEnvelope> {
    let n0 = noise_density(n, cal)?;
    if n0 == 0.0 {
        return Ok(x.clone());
    }
    if n.bpf_bandwidth_hz > x.sample_rate_hz() {
        return Err(Error::Link(format!(
            "BPF bandwidth {} Hz exceeds the {} Hz grid",
            n.bpf_bandwidth_hz,
            x.sample_rate_hz()
        )));
    }
    let noise = white_noise(x, n0, n.seed)?;
    let noise = if n.bpf_bandwidth_hz < x.sample_rate_hz() {
        apply_filter(&noise, &FilterSpec::lowpass(n.bpf_bandwidth_hz))?
    } else {
        noise
    };
    Ok(x.with_samples(
        x.samples()
            .iter()
            .zip(noise.samples())
            .map(|(s, w)| s + w)
            .collect(),
    ))
}

/// White noise of two-sided density `n0` on `x`'s grid.
fn white_noise(x: &ComplexEnvelope, n0: f64, seed: u64) -> Result<ComplexEnvelope> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = (n0 * x.sample_rate_hz() / 2.0).sqrt();
    let samples = (0..x.len())
        .map(|_| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(re * sd, im * sd)
        })
        .collect();
    ComplexEnvelope::new(samples, x.sample_rate_hz(), x.center_freq_hz())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::combine;
    use proptest::prelude::*;

    fn tone(f: f64, a: f64) -> ComplexEnvelope {
        ComplexEnvelope::tone(1280, 640e9, 193.4e12, f, a, 0.4).unwrap()
    }

    #[test]
    fn unit_weight_is_identity() {
        let x = combine(&tone(-18e9, 1.0), &tone(18e9, 1.0)).unwrap();
        assert_eq!(
            apply_weight(&x, &WeightPlan::new(1.0, 0.0, 40e9)).unwrap(),
            x
        );
    }

    #[test]
    fn half_weight_drops_six_db_and_keeps_phase() {
        let x = combine(&tone(-18e9, 1.0), &tone(18e9, 1.0)).unwrap();
        let y = apply_weight(&x, &WeightPlan::upper_channel(0.5, 640e9)).unwrap();
        let (sx, sy) = (x.spectrum(), y.spectrum());
        let up = sy.tone(18e9).unwrap() / sx.tone(18e9).unwrap();
        let down = sy.tone(-18e9).unwrap() / sx.tone(-18e9).unwrap();
        assert!((10.0 * up.norm_sqr().log10() + 6.0206).abs() < 1e-4);
        assert!(up.arg().abs() < 1e-12);
        assert!((down.norm() - 1.0).abs() < 1e-9 && down.arg().abs() < 1e-12);
    }

    #[test]
    fn weighting_commutes_with_disjoint_combine() {
        let a = tone(18e9, 1.0);
        let b = tone(-18e9, 0.7);
        let w = WeightPlan::new(0.3, 5e9, 30e9);
        let lhs = combine(&apply_weight(&a, &w).unwrap(), &b).unwrap();
        let rhs = apply_weight(&combine(&a, &b).unwrap(), &w).unwrap();
        for (p, q) in lhs.samples().iter().zip(rhs.samples()) {
            assert!((p - q).norm() < 1e-12);
        }
    }

    #[test]
    fn weight_validation() {
        assert!(WeightPlan::new(1.5, 0.0, 1.0).validate().is_err());
        assert!(WeightPlan::new(0.0, 0.0, 1.0).validate().is_err());
        assert!(WeightPlan::new(0.5, 2.0, 1.0).validate().is_err());
    }

    #[test]
    fn zero_dispersion_is_identity() {
        let x = tone(5e9, 1.0);
        assert_eq!(apply_dispersion(&x, &DispersionSpec::new(0.0)).unwrap(), x);
        assert!(apply_dispersion(&x, &DispersionSpec::new(2e4)).is_err());
    }

    #[test]
    fn differential_delay_from_formula() {
        let d = DispersionSpec::new(-270.0);
        let tau = d.differential_delay_s(36e9);
        assert!((tau * 1e12 + 77.8).abs() < 0.1, "{tau}");
        let tau2 = DispersionSpec::new(-520.0).differential_delay_s(36e9);
        assert!((tau2 * 1e12 + 149.9).abs() < 0.2, "{tau2}");
    }

    #[test]
    fn dispersion_delays_a_pulse_by_k_f() {
        // a narrow pulse on a carrier at +f is delayed by K·f
        let n = 4096;
        let fs = 640e9;
        let f0 = 40e9;
        let sigma_t = 20e-12;
        let t0 = n as f64 / fs / 2.0;
        let samples: Vec<Complex64> = (0..n)
            .map(|k| {
                let t = k as f64 / fs;
                Complex64::from_polar(
                    (-(t - t0).powi(2) / (2.0 * sigma_t * sigma_t)).exp(),
                    2.0 * PI * f0 * t,
                )
            })
            .collect();
        let x = ComplexEnvelope::new(samples, fs, 193.4e12).unwrap();
        let d = DispersionSpec::new(-270.0);
        let y = apply_dispersion(&x, &d).unwrap();
        let centroid = |e: &ComplexEnvelope| {
            let w: f64 = e.samples().iter().map(|s| s.norm_sqr()).sum();
            e.samples()
                .iter()
                .enumerate()
                .map(|(k, s)| k as f64 / fs * s.norm_sqr())
                .sum::<f64>()
                / w
        };
        let shift = centroid(&y) - centroid(&x);
        let expected = d.delay_slope_s2() * f0;
        assert!((shift - expected).abs() < 0.01e-12, "{shift} vs {expected}");
    }

    #[test]
    fn calibration_inverts() {
        for evm in [1.0, 9.43, 12.72, 30.0] {
            let s2 = noise_ratio_for_evm(evm).unwrap();
            assert!((evm_for_noise_ratio(s2) / evm - 1.0).abs() < 1e-12);
        }
        assert!(noise_ratio_for_evm(150.0).is_err());
    }

    #[test]
    fn zero_psd_is_identity() {
        let x = tone(5e9, 1.0);
        assert_eq!(apply_ase(&x, &AseNoiseSpec::psd(0.0, 3), None).unwrap(), x);
    }

    #[test]
    fn target_below_floor_is_rejected() {
        let cal = NoiseCalibration {
            peak_to_average: 1.0,
            channel_power_mw: 1.0,
            rx_bandwidth_hz: 20e9,
            floor_evm_pct: 2.0,
        };
        let x = tone(0.0, 1.0);
        assert!(matches!(
            apply_ase(&x, &AseNoiseSpec::target_evm(1.5, 1), Some(&cal)),
            Err(Error::Calibration(_))
        ));
        assert!(matches!(
            apply_ase(&x, &AseNoiseSpec::target_evm(5.0, 1), None),
            Err(Error::Calibration(_))
        ));
    }

    #[test]
    fn noise_has_the_requested_density_and_band() {
        let x = ComplexEnvelope::zeros(1 << 16, 640e9, 0.0).unwrap();
        let n0: f64 = 1e-12;
        let y = apply_ase(&x, &AseNoiseSpec::psd(n0.sqrt(), 9), None).unwrap();
        let expected = n0 * DEFAULT_BPF_HZ;
        assert!(
            (y.power() / expected - 1.0).abs() < 0.02,
            "{}",
            y.power() / expected
        );
        let spec = y.spectrum();
        assert!(spec.band_power_mw(190e9, 320e9) < 1e-20 * y.power());
    }

    #[test]
    fn different_seeds_are_uncorrelated() {
        let x = ComplexEnvelope::zeros(1 << 14, 640e9, 0.0).unwrap();
        let a = apply_ase(&x, &AseNoiseSpec::psd(1e-6, 1), None).unwrap();
        let b = apply_ase(&x, &AseNoiseSpec::psd(1e-6, 2), None).unwrap();
        let num: Complex64 = a
            .samples()
            .iter()
            .zip(b.samples())
            .map(|(p, q)| p * q.conj())
            .sum();
        let rho = num.norm() / (a.energy() * b.energy()).sqrt();
        // the BPF keeps 375/640 of the band, which lowers the effective sample count
        let eff = (1 << 14) as f64 * DEFAULT_BPF_HZ / 640e9;
        assert!(rho < 5.0 / eff.sqrt(), "{rho}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn dispersion_is_unitary_and_invertible(d in -5000.0f64..5000.0, f in -100i32..100, g in -100i32..100) {
            let x = combine(&tone(f as f64 * 1e9, 1.0), &tone(g as f64 * 0.5e9, 0.3)).unwrap();
            let spec = DispersionSpec::new(d);
            let y = apply_dispersion(&x, &spec).unwrap();
            prop_assert!(((y.power() - x.power()) / x.power()).abs() < 1e-12);
            let back = apply_dispersion(&y, &DispersionSpec::new(-d)).unwrap();
            let rms = (back.samples().iter().zip(x.samples()).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>() / x.len() as f64).sqrt();
            prop_assert!(rms < 1e-10);
            let (sx, sy) = (x.spectrum(), y.spectrum());
            for (p, q) in sx.bins.iter().zip(&sy.bins) {
                prop_assert!((p.norm() - q.norm()).abs() < 1e-12 * (1.0 + p.norm()));
            }
        }
    }
}
