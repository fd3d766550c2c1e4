//! Coherent spectral superposition of two parent channels by a sinusoidally
//! driven MZM, and the constellation algebra of the resulting vector sum.
//!
//! Channel 1 sits below the superposition frequency and reaches it through
//! sideband order `+n`; channel 2 sits above and arrives through order `−n`.
//! Their contributions rotate by `+nφ` and `−nφ` with the drive phase φ, so
//! the relative phase of the sum follows `2n·φ + θ0`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modulators::{mzm_modulate, MzmParams, RfDrive};
use crate::optim::{golden_section, wrap_pi};
use crate::signal::{apply_filter, ComplexEnvelope, FilterSpec};
use crate::transmitter::{min_pairwise_distance, ModFormat};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregationPlan {
    pub carrier1_offset_hz: f64,
    pub carrier2_offset_hz: f64,
    pub rf: RfDrive,
    pub mzm: MzmParams,
    /// Amplitude of channel 2 relative to channel 1 (applied upstream by the
    /// waveshaper; recorded here for prediction).
    pub alpha: f64,
    pub phi_rad: f64,
    pub select_band: FilterSpec,
}

impl AggregationPlan {
    /// The common configuration: carriers at `±f_m`, select band centred
    /// between them.
    pub fn symmetric(rf: RfDrive, mzm: MzmParams, alpha: f64, phi_rad: f64, band_hz: f64) -> Self {
        Self {
            carrier1_offset_hz: -rf.freq_hz,
            carrier2_offset_hz: rf.freq_hz,
            rf,
            mzm,
            alpha,
            phi_rad,
            select_band: FilterSpec::bandpass(0.0, band_hz),
        }
    }

    pub fn with_phi(self, phi_rad: f64) -> Self {
        Self { phi_rad, ..self }
    }

    pub fn superposition_hz(&self) -> f64 {
        0.5 * (self.carrier1_offset_hz + self.carrier2_offset_hz)
    }

    /// Sideband order `n` that carries channel 1 up (and channel 2 down) to
    /// the superposition frequency.
    pub fn order(&self) -> Result<i32> {
        let spacing = self.carrier2_offset_hz - self.carrier1_offset_hz;
        if !(spacing > 0.0) {
            return Err(Error::Geometry(format!(
                "channel 2 ({} Hz) must lie above channel 1 ({} Hz)",
                self.carrier2_offset_hz, self.carrier1_offset_hz
            )));
        }
        let ratio = spacing / (2.0 * self.rf.freq_hz);
        let n = ratio.round();
        if n < 1.0 || (ratio - n).abs() > 1e-9 * ratio {
            return Err(Error::Geometry(format!(
                "spacing {spacing} Hz is not an even multiple of the {} Hz drive; no sidebands overlap",
                self.rf.freq_hz
            )));
        }
        Ok(n as i32)
    }
}

/// MZM-2 with drive phase `plan.phi_rad`, followed by the select band.
pub fn aggregate(x: &ComplexEnvelope, plan: &AggregationPlan) -> Result<ComplexEnvelope> {
    plan.order()?;
    let out = mzm_modulate(x, &plan.mzm, &plan.rf.with_phase(plan.phi_rad))?;
    apply_filter(&out, &plan.select_band)
}

/// Measured phase and amplitude relation between the two contributions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Sideband order used by the superposition.
    pub order: i32,
    /// Relative phase at φ = 0.
    pub theta0_rad: f64,
    /// |contribution 2| / |contribution 1|.
    pub alpha_eff: f64,
    /// Complex gains of the two contributions at the phase used to measure.
    pub gain1: Complex64,
    pub gain2: Complex64,
    pub phi_measured_rad: f64,
}

impl Calibration {
    /// Relative phase `2n·φ + θ0`, wrapped to `[-π, π)`.
    pub fn relative_phase(&self, phi_rad: f64) -> f64 {
        wrap_pi(2.0 * self.order as f64 * phi_rad + self.theta0_rad)
    }

    /// Smallest non-negative drive phase giving relative phase `rel_rad`.
    pub fn phi_for_relative(&self, rel_rad: f64) -> f64 {
        let n2 = 2.0 * self.order as f64;
        ((rel_rad - self.theta0_rad) / n2).rem_euclid(2.0 * PI / n2)
    }
}

/// Relative phase induced by the plan under a calibration.
pub fn phase_to_relative(plan: &AggregationPlan, cal: &Calibration) -> f64 {
    cal.relative_phase(plan.phi_rad)
}

/// Gain of one CW input into the superposition bin.
fn tone_gain(
    tone: &ComplexEnvelope,
    plan: &AggregationPlan,
    input_offset_hz: f64,
) -> Result<Complex64> {
    let spec_in = tone.spectrum();
    let a_in = spec_in.tone(input_offset_hz).ok_or_else(|| {
        Error::Geometry(format!(
            "carrier offset {input_offset_hz} Hz is not on the frequency grid"
        ))
    })?;
    if a_in.norm() == 0.0 {
        return Err(Error::Geometry(format!(
            "no carrier power at {input_offset_hz} Hz"
        )));
    }
    let out = aggregate(tone, plan)?;
    let a_out = out
        .spectrum()
        .tone(plan.superposition_hz())
        .ok_or_else(|| Error::Geometry("superposition frequency is not on the grid".into()))?;
    Ok(a_out)
}

/// Unmodulated calibration: each carrier tone is passed through the plan on
/// its own and the gains into the superposition bin are compared.
pub fn calibrate(
    tone1: &ComplexEnvelope,
    tone2: &ComplexEnvelope,
    plan: &AggregationPlan,
) -> Result<Calibration> {
    let order = plan.order()?;
    let g1 = tone_gain(tone1, plan, plan.carrier1_offset_hz)?;
    let g2 = tone_gain(tone2, plan, plan.carrier2_offset_hz)?;
    if g1.norm() == 0.0 || g2.norm() == 0.0 {
        return Err(Error::Geometry(
            "a carrier does not reach the superposition frequency".into(),
        ));
    }
    let rel = (g1 / g2).arg();
    Ok(Calibration {
        order,
        theta0_rad: wrap_pi(rel - 2.0 * order as f64 * plan.phi_rad),
        alpha_eff: g2.norm() / g1.norm(),
        gain1: g1,
        gain2: g2,
        phi_measured_rad: plan.phi_rad,
    })
}

/// Diagnostic report of one aggregation plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationDiagnostics {
    pub theta0_rad: f64,
    pub alpha_eff: f64,
    pub order: i32,
    /// `(offset_hz, power_mw)` of every populated bin in the select band for
    /// the unmodulated carriers.
    pub superposed_bins: Vec<(f64, f64)>,
    /// Power the residual carrier comb deposits inside the select band.
    pub leakage_power_mw: f64,
    /// Same, relative to channel 1's contribution, in dB (`-inf` written as
    /// `null`).
    pub leakage_rel_db: Option<f64>,
}

/// Calibration plus in-band leakage of `residual` (carrier-comb content other
/// than the two tones).
pub fn diagnose(
    tone1: &ComplexEnvelope,
    tone2: &ComplexEnvelope,
    residual: &ComplexEnvelope,
    plan: &AggregationPlan,
) -> Result<AggregationDiagnostics> {
    let cal = calibrate(tone1, tone2, plan)?;
    let both = crate::signal::combine(tone1, tone2)?;
    let out = aggregate(&both, plan)?.spectrum();
    let peak = (0..out.len())
        .map(|i| out.bin_power_mw(i))
        .fold(0.0, f64::max);
    let superposed_bins = (0..out.len())
        .filter(|&i| peak > 0.0 && out.bin_power_mw(i) > 1e-12 * peak)
        .map(|i| (out.offset_hz(i), out.bin_power_mw(i)))
        .collect();
    // Rounding residue of the tone separation is not leakage
    let leak = if residual.power() > 1e-24 * tone1.power() {
        aggregate(residual, plan)?.power()
    } else {
        0.0
    };
    let reference = cal.gain1.norm_sqr();
    let leakage_rel_db = (leak > 0.0).then(|| 10.0 * (leak / reference).log10());
    Ok(AggregationDiagnostics {
        theta0_rad: cal.theta0_rad,
        alpha_eff: cal.alpha_eff,
        order: cal.order,
        superposed_bins,
        leakage_power_mw: leak,
        leakage_rel_db,
    })
}

/// Constellation of `s1·e^{i·rel} + α·s2` over all symbol pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormatPrediction {
    /// Distinct aggregate points.
    pub points: Vec<Complex64>,
    /// How many symbol pairs land on each point.
    pub multiplicity: Vec<usize>,
    /// Point index for pair `(i1, i2)`, stored at `i1·|f2| + i2`.
    pub source_pairs: Vec<usize>,
    pub format1: ModFormat,
    pub format2: ModFormat,
    pub min_distance: f64,
}

impl FormatPrediction {
    pub fn pair_point(&self, i1: usize, i2: usize) -> usize {
        self.source_pairs[i1 * self.format2.order() + i2]
    }

    /// Pairs sharing a point with another pair.
    pub fn coincidences(&self) -> usize {
        self.multiplicity.iter().filter(|&&m| m > 1).copied().sum()
    }

    /// Raw sum for every pair, in pair order.
    pub fn pair_sums(&self) -> Vec<Complex64> {
        self.source_pairs.iter().map(|&p| self.points[p]).collect()
    }

    /// Maps every pair onto a point of `target` when the prediction equals
    /// the target up to rotation and positive scale, bijectively.
    pub fn map_to_target(&self, target: ModFormat, tol: f64) -> Option<Vec<usize>> {
        let tp = target.points();
        if self.points.len() != tp.len() || self.coincidences() > 0 {
            return None;
        }
        let sums = self.pair_sums();
        let (rot, err) = best_rotation(&sums, &tp)?;
        if err > tol {
            return None;
        }
        let mapping: Vec<usize> = sums
            .iter()
            .map(|s| crate::transmitter::nearest_index(&tp, rot * s))
            .collect();
        let mut seen = vec![false; tp.len()];
        for &m in &mapping {
            if seen[m] {
                return None;
            }
            seen[m] = true;
        }
        Some(mapping)
    }
}

pub fn predict_format(
    f1: ModFormat,
    f2: ModFormat,
    alpha: f64,
    rel_phase_rad: f64,
) -> Result<FormatPrediction> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Geometry(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    let rot = Complex64::from_polar(1.0, rel_phase_rad);
    let p1 = f1.points();
    let p2 = f2.points();
    let mut points: Vec<Complex64> = Vec::new();
    let mut multiplicity = Vec::new();
    let mut source_pairs = Vec::with_capacity(p1.len() * p2.len());
    for s1 in &p1 {
        for s2 in &p2 {
            let z = s1 * rot + alpha * s2;
            let tol = 1e-9 * (1.0 + alpha);
            match points.iter().position(|p| (p - z).norm() <= tol) {
                Some(i) => {
                    multiplicity[i] += 1;
                    source_pairs.push(i);
                }
                None => {
                    points.push(z);
                    multiplicity.push(1);
                    source_pairs.push(points.len() - 1);
                }
            }
        }
    }
    let min_distance = min_pairwise_distance(&points);
    Ok(FormatPrediction {
        points,
        multiplicity,
        source_pairs,
        format1: f1,
        format2: f2,
        min_distance,
    })
}

/// Rotation that best maps RMS-normalized `sums` onto `target`, with the
/// resulting RMS distance to the nearest target points. The rotation carries
/// the normalization scale.
fn best_rotation(sums: &[Complex64], target: &[Complex64]) -> Option<(Complex64, f64)> {
    let rms = (sums.iter().map(|s| s.norm_sqr()).sum::<f64>() / sums.len() as f64).sqrt();
    if rms == 0.0 {
        return None;
    }
    let t_rms = (target.iter().map(|t| t.norm_sqr()).sum::<f64>() / target.len() as f64).sqrt();
    let scale = t_rms / rms;
    let anchor = sums
        .iter()
        .copied()
        .max_by(|a, b| a.norm_sqr().total_cmp(&b.norm_sqr()))?;
    let mut best: Option<(Complex64, f64)> = None;
    for t in target {
        if t.norm() == 0.0 {
            continue;
        }
        let rot = (t / t.norm()) * (anchor.conj() / anchor.norm()) * scale;
        let err = (sums
            .iter()
            .map(|s| {
                let z = rot * s;
                target
                    .iter()
                    .map(|p| (z - p).norm_sqr())
                    .fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>()
            / sums.len() as f64)
            .sqrt();
        if best.is_none_or(|(_, e)| err < e) {
            best = Some((rot, err));
        }
    }
    best
}

/// Distance of the predicted constellation from `target` up to rotation and
/// scale; zero when the geometry matches.
pub fn geometry_mismatch(
    f1: ModFormat,
    f2: ModFormat,
    alpha: f64,
    rel: f64,
    target: ModFormat,
) -> f64 {
    let Ok(pred) = predict_format(f1, f2, alpha, rel) else {
        return f64::INFINITY;
    };
    best_rotation(&pred.pair_sums(), &target.points()).map_or(f64::INFINITY, |(_, e)| e)
}

/// A `(α, relative phase)` pair realizing a target format.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Controls {
    pub alpha: f64,
    pub rel_phase_rad: f64,
    pub mismatch: f64,
}

const REL_GRID: usize = 1440;
const GEOMETRY_TOL: f64 = 1e-6;

/// Finds controls whose predicted constellation equals `target` (up to
/// rotation and scale). With `alpha` fixed only the phase is searched.
pub fn solve_controls(
    f1: ModFormat,
    f2: ModFormat,
    target: ModFormat,
    alpha: Option<f64>,
) -> Result<Controls> {
    let alphas: Vec<f64> = match alpha {
        Some(a) => vec![a],
        None => (1..=40).map(|k| k as f64 / 40.0).collect(),
    };
    let rel_grid = if alpha.is_some() { REL_GRID } else { 180 };
    let mut best = Controls {
        alpha: alphas[0],
        rel_phase_rad: 0.0,
        mismatch: f64::INFINITY,
    };
    for &a in &alphas {
        for k in 0..rel_grid {
            let rel = 2.0 * PI * k as f64 / rel_grid as f64;
            let m = geometry_mismatch(f1, f2, a, rel, target);
            if m < best.mismatch {
                best = Controls {
                    alpha: a,
                    rel_phase_rad: rel,
                    mismatch: m,
                };
            }
        }
    }
    let step = 2.0 * PI / rel_grid as f64;
    let a_step = if alpha.is_some() { 0.0 } else { 1.0 / 40.0 };
    for _ in 0..if alpha.is_some() { 1 } else { 6 } {
        let a = best.alpha;
        let (rel, m) = golden_section(
            |r| geometry_mismatch(f1, f2, a, r, target),
            best.rel_phase_rad - step,
            best.rel_phase_rad + step,
            80,
        );
        if m < best.mismatch {
            best.rel_phase_rad = rel;
            best.mismatch = m;
        }
        if a_step > 0.0 {
            let r = best.rel_phase_rad;
            let (a, m) = golden_section(
                |a| geometry_mismatch(f1, f2, a, r, target),
                (best.alpha - a_step).max(1e-6),
                (best.alpha + a_step).min(1.0),
                80,
            );
            if m < best.mismatch {
                best.alpha = a;
                best.mismatch = m;
            }
        }
    }
    best.rel_phase_rad = wrap_pi(best.rel_phase_rad);
    let pred = predict_format(f1, f2, best.alpha, best.rel_phase_rad)?;
    if best.mismatch > GEOMETRY_TOL || pred.map_to_target(target, 1e-4).is_none() {
        return Err(Error::Infeasible(format!(
            "{f1} + {f2} cannot form {target}; closest: alpha {:.4}, relative phase {:.4} rad, residual {:.3e}",
            best.alpha, best.rel_phase_rad, best.mismatch
        )));
    }
    Ok(best)
}

/// Per-pair bookkeeping of decisions, used to check that received points map
/// one-to-one onto the transmitted symbol pairs.
pub fn pair_decision_table(
    idx1: &[usize],
    idx2: &[usize],
    n2: usize,
    decisions: &[usize],
) -> BTreeMap<usize, BTreeMap<usize, usize>> {
    let mut table: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for ((&a, &b), &d) in idx1.iter().zip(idx2).zip(decisions) {
        *table.entry(a * n2 + b).or_default().entry(d).or_default() += 1;
    }
    table
}

/// Whether every pair met in the data maps to exactly one decision and no
/// two pairs share a decision.
pub fn pairs_bijective(table: &BTreeMap<usize, BTreeMap<usize, usize>>) -> bool {
    let mut used = std::collections::BTreeSet::new();
    for decisions in table.values() {
        if decisions.len() != 1 {
            return false;
        }
        let d = *decisions.keys().next().unwrap();
        if !used.insert(d) {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::combine;
    use proptest::prelude::*;

    const FS: f64 = 640e9;
    const N: usize = 640;

    fn plan(phi: f64) -> AggregationPlan {
        AggregationPlan::symmetric(
            RfDrive::new(18e9, 1.0, 0.0),
            MzmParams::null_biased(20.0),
            1.0,
            phi,
            20e9,
        )
    }

    fn tone(f: f64, a: f64, ph: f64) -> ComplexEnvelope {
        ComplexEnvelope::tone(N, FS, 193.4e12, f, a, ph).unwrap()
    }

    #[test]
    fn center_power_follows_two_phasor_interference() {
        let x = combine(&tone(-18e9, 1.0, 0.3), &tone(18e9, 1.0, -0.2)).unwrap();
        let cal = calibrate(&tone(-18e9, 1.0, 0.3), &tone(18e9, 1.0, -0.2), &plan(0.0)).unwrap();
        let g = cal.gain1.norm();
        for k in 0..32 {
            let phi = PI * k as f64 / 32.0;
            let out = aggregate(&x, &plan(phi)).unwrap();
            let p = out.spectrum().tone(0.0).unwrap().norm_sqr();
            // |g·e^{i·rel} + g|² with rel = 2φ + θ0
            let expected = 2.0 * g * g * (1.0 + cal.relative_phase(phi).cos());
            assert!((p - expected).abs() < 1e-12, "phi {phi}: {p} vs {expected}");
        }
        // full extinction at the predicted phase
        let null_phi = cal.phi_for_relative(PI);
        let p = aggregate(&x, &plan(null_phi))
            .unwrap()
            .spectrum()
            .tone(0.0)
            .unwrap()
            .norm();
        assert!(p < 1e-12, "{p}");
    }

    #[test]
    fn control_law_has_slope_two() {
        let t1 = tone(-18e9, 1.0, 0.0);
        let t2 = tone(18e9, 1.0, 0.0);
        let c0 = calibrate(&t1, &t2, &plan(0.0)).unwrap();
        for k in 0..16 {
            let phi = 0.1 + k as f64 * 0.17;
            let c = calibrate(&t1, &t2, &plan(phi)).unwrap();
            let measured = (c.gain1 / c.gain2).arg();
            assert!(wrap_pi(measured - c0.relative_phase(phi)).abs() < 1e-9);
            assert!(wrap_pi(c.theta0_rad - c0.theta0_rad).abs() < 1e-9);
        }
        let r0 = c0.relative_phase(0.2);
        let r1 = c0.relative_phase(0.2 + PI / 4.0);
        assert!((wrap_pi(r1 - r0) - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn alpha_eff_is_weight_ratio() {
        let c = calibrate(&tone(-18e9, 1.0, 0.0), &tone(18e9, 0.5, 1.0), &plan(0.4)).unwrap();
        assert!((c.alpha_eff - 0.5).abs() < 1e-6);
    }

    #[test]
    fn rejects_non_overlapping_geometry() {
        let mut p = plan(0.0);
        p.carrier2_offset_hz = 30e9;
        assert!(matches!(p.order(), Err(Error::Geometry(_))));
        let x = tone(0.0, 1.0, 0.0);
        assert!(matches!(aggregate(&x, &p), Err(Error::Geometry(_))));
        let mut q = plan(0.0);
        q.carrier1_offset_hz = -36e9;
        q.carrier2_offset_hz = 36e9;
        assert_eq!(q.order().unwrap(), 2);
    }

    #[test]
    fn aggregation_is_linear() {
        let x = combine(&tone(-18e9, 1.0, 0.3), &tone(18e9, 0.5, -0.2)).unwrap();
        let a = Complex64::new(0.3, -1.2);
        let lhs = aggregate(&x.scale(a), &plan(0.7)).unwrap();
        let rhs = aggregate(&x, &plan(0.7)).unwrap().scale(a);
        for (p, q) in lhs.samples().iter().zip(rhs.samples()) {
            assert!((p - q).norm() < 1e-10);
        }
    }

    #[test]
    fn bpsk_pairs_form_qpsk_and_pam4() {
        let q = predict_format(ModFormat::Bpsk, ModFormat::Bpsk, 1.0, PI / 2.0).unwrap();
        assert_eq!(q.points.len(), 4);
        assert!(q.map_to_target(ModFormat::Qpsk, 1e-9).is_some());
        let p = predict_format(ModFormat::Bpsk, ModFormat::Bpsk, 0.5, 0.0).unwrap();
        assert!(p.points.iter().all(|z| z.im.abs() < 1e-15));
        let mut re: Vec<f64> = p.points.iter().map(|z| z.re).collect();
        re.sort_by(f64::total_cmp);
        let gaps: Vec<f64> = re.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(gaps.iter().all(|g| (g - gaps[0]).abs() < 1e-12));
        assert!(p.map_to_target(ModFormat::Pam4, 1e-9).is_some());
    }

    #[test]
    fn qpsk_pairs_form_qam16() {
        let p = predict_format(ModFormat::Qpsk, ModFormat::Qpsk, 0.5, 0.0).unwrap();
        assert_eq!(p.points.len(), 16);
        assert!(p.map_to_target(ModFormat::Qam16, 1e-9).is_some());
        assert!(p.map_to_target(ModFormat::Qpsk, 1e-9).is_none());
    }

    #[test]
    fn degenerate_sum_reports_multiplicity() {
        let p = predict_format(ModFormat::Bpsk, ModFormat::Bpsk, 1.0, 0.0).unwrap();
        assert_eq!(p.points.len(), 3);
        let zero = p.points.iter().position(|z| z.norm() < 1e-12).unwrap();
        assert_eq!(p.multiplicity[zero], 2);
        assert_eq!(p.coincidences(), 2);
        assert!(p.map_to_target(ModFormat::Pam4, 1e-3).is_none());
    }

    #[test]
    fn solver_finds_known_controls() {
        let qpsk =
            solve_controls(ModFormat::Bpsk, ModFormat::Bpsk, ModFormat::Qpsk, Some(1.0)).unwrap();
        assert!((wrap_pi(2.0 * qpsk.rel_phase_rad).abs() - PI).abs() < 1e-6);
        let pam = solve_controls(ModFormat::Bpsk, ModFormat::Bpsk, ModFormat::Pam4, None).unwrap();
        assert!((pam.alpha - 0.5).abs() < 1e-4, "{pam:?}");
        assert!(wrap_pi(2.0 * pam.rel_phase_rad).abs() < 1e-4);
        let qam = solve_controls(ModFormat::Qpsk, ModFormat::Qpsk, ModFormat::Qam16, None).unwrap();
        assert!((qam.alpha - 0.5).abs() < 1e-4, "{qam:?}");
        assert!(solve_controls(ModFormat::Bpsk, ModFormat::Bpsk, ModFormat::Qam16, None).is_err());
        assert!(
            solve_controls(ModFormat::Bpsk, ModFormat::Bpsk, ModFormat::Pam4, Some(1.0)).is_err()
        );
    }

    #[test]
    fn bijectivity_check() {
        let t = pair_decision_table(&[0, 0, 1, 1], &[0, 1, 0, 1], 2, &[3, 2, 1, 0]);
        assert!(pairs_bijective(&t));
        let t = pair_decision_table(&[0, 0, 1, 1], &[0, 1, 0, 1], 2, &[3, 3, 1, 0]);
        assert!(!pairs_bijective(&t));
        let t = pair_decision_table(&[0, 0], &[0, 0], 2, &[3, 2]);
        assert!(!pairs_bijective(&t));
    }

    #[test]
    fn diagnostics_report_leakage() {
        let t1 = tone(-18e9, 1.0, 0.0);
        let t2 = tone(18e9, 1.0, 0.0);
        let residual = tone(0.0, 0.1, 0.0);
        let d = diagnose(&t1, &t2, &residual, &plan(0.3)).unwrap();
        assert!(d.leakage_power_mw > 0.0);
        assert!(d.superposed_bins.iter().all(|(f, _)| f.abs() <= 10e9));
        let zero = ComplexEnvelope::zeros(N, FS, 193.4e12).unwrap();
        let d0 = diagnose(&t1, &t2, &zero, &plan(0.3)).unwrap();
        assert_eq!(d0.leakage_rel_db, None);
        let json = serde_json::to_string(&d).unwrap();
        assert!(json.contains("theta0_rad"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn theta0_is_independent_of_phi(phi in -PI..PI, ph1 in -PI..PI, ph2 in -PI..PI) {
            let t1 = tone(-18e9, 1.0, ph1);
            let t2 = tone(18e9, 0.7, ph2);
            let a = calibrate(&t1, &t2, &plan(0.0)).unwrap();
            let b = calibrate(&t1, &t2, &plan(phi)).unwrap();
            prop_assert!(wrap_pi(a.theta0_rad - b.theta0_rad).abs() < 1e-9);
            prop_assert!((a.alpha_eff - 0.7).abs() < 1e-9);
        }

        #[test]
        fn prediction_size_bound(fi in 0usize..4, fj in 0usize..4, alpha in 0.05f64..1.0, rel in -PI..PI) {
            let (f1, f2) = (ModFormat::ALL[fi], ModFormat::ALL[fj]);
            let p = predict_format(f1, f2, alpha, rel).unwrap();
            prop_assert!(p.points.len() <= f1.order() * f2.order());
            prop_assert_eq!(p.multiplicity.iter().sum::<usize>(), f1.order() * f2.order());
            prop_assert_eq!(p.points.len() == f1.order() * f2.order(), p.coincidences() == 0);
        }

        #[test]
        fn rotation_by_pi_keeps_geometry(rel in -PI..PI) {
            let a = geometry_mismatch(ModFormat::Bpsk, ModFormat::Bpsk, 1.0, rel, ModFormat::Qpsk);
            let b = geometry_mismatch(ModFormat::Bpsk, ModFormat::Bpsk, 1.0, rel + 2.0 * PI, ModFormat::Qpsk);
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
