//! Automatic search for the RF drive phase and waveshaper weight that
//! produce a requested target format, using short noiseless runs.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregator::predict_format;
use crate::error::{Error, Result};
use crate::optim::golden_section;
use crate::receiver::ConstellationReport;
use crate::scenario::{
    commensurate_symbol_count, AutoMode, Pipeline, RxChannel, Scenario, Setting,
};
use crate::transmitter::ModFormat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Decision-directed EVM.
    Evm,
    /// EVM plus 100 times the fraction of empty target clusters. Collapsed
    /// geometries (a tiny weight leaves the points on a subset of the
    /// target) otherwise show deceptively low EVM.
    #[default]
    MinDistancePenalizedEvm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuneSpec {
    /// Overrides the scenario's target format.
    pub target: Option<ModFormat>,
    /// Coarse points over one period of the drive phase.
    pub phi_grid: usize,
    /// Golden-section iterations per coordinate and round.
    pub refine_iters: usize,
    /// Search range of the waveshaper weight; `None` keeps it fixed.
    pub alpha_bounds: Option<(f64, f64)>,
    pub objective: Objective,
    /// Minimum symbols per probe run.
    pub calibration_symbols: usize,
}

pub const REFINE_ROUNDS: usize = 4;
const ALPHA_GRID: usize = 6;

impl Default for TuneSpec {
    fn default() -> Self {
        Self {
            target: None,
            phi_grid: 64,
            refine_iters: 20,
            alpha_bounds: None,
            objective: Objective::default(),
            calibration_symbols: 1024,
        }
    }
}

impl TuneSpec {
    /// Defaults, with the weight free when the scenario asks for it to be
    /// solved.
    pub fn for_scenario(s: &Scenario) -> Self {
        let alpha_bounds = match s.link.alpha {
            Setting::Fixed(_) => None,
            _ => Some((0.05, 1.0)),
        };
        Self {
            alpha_bounds,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TunePoint {
    pub phi_rad: f64,
    pub alpha: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub target: ModFormat,
    pub phi_star_rad: f64,
    pub alpha_star: f64,
    pub evm_at_opt_pct: f64,
    pub objective_at_opt: f64,
    /// Coarse grid, row-major in weight then phase.
    pub landscape: Vec<TunePoint>,
    /// The refinement stopped improving before its round budget ran out.
    pub converged: bool,
    /// Accepted improvements, in order.
    pub history: Vec<TunePoint>,
    pub symbols_per_probe: usize,
}

impl TuneResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tune result serializes")
    }

    pub fn landscape_csv(&self) -> String {
        let mut out = String::from("phi_rad,alpha,objective\n");
        for p in &self.landscape {
            out.push_str(&format!("{},{},{}\n", p.phi_rad, p.alpha, p.objective));
        }
        out
    }
}

fn score(r: &ConstellationReport, objective: Objective) -> f64 {
    match objective {
        Objective::Evm => r.evm_avg_pct,
        Objective::MinDistancePenalizedEvm => {
            let empty = r.cluster_counts.iter().filter(|&&c| c == 0).count();
            r.evm_avg_pct + 100.0 * empty as f64 / r.cluster_counts.len() as f64
        }
    }
}

/// Short noiseless copy of `s` with the controls pinned, used for probing.
fn probe_scenario(s: &Scenario, spec: &TuneSpec) -> Result<Scenario> {
    let mut t = s.clone();
    let agg = t
        .aggregation
        .as_mut()
        .ok_or_else(|| Error::config("aggregation", "tuning needs an aggregation stage"))?;
    if let Some(target) = spec.target {
        agg.target = target;
    }
    agg.phi_rad = Setting::Fixed(0.0);
    if let Setting::Auto(AutoMode::Solve) = t.link.alpha {
        t.link.alpha = Setting::Fixed(1.0);
    }
    t.link.ase = None;
    t.receiver.channel = RxChannel::Aggregate;
    t.outputs.eye = false;
    t.transmitter.symbol_count = commensurate_symbol_count(&t, spec.calibration_symbols)?;
    t.validate()?;
    Ok(t)
}

/// Searches the drive phase (and the weight, when `alpha_bounds` is set) for
/// the lowest objective on the target constellation.
pub fn tune(s: &Scenario, spec: &TuneSpec) -> Result<TuneResult> {
    if spec.phi_grid < 8 {
        return Err(Error::config(
            "phi_grid",
            format!("needs at least 8 points, got {}", spec.phi_grid),
        ));
    }
    if let Some((lo, hi)) = spec.alpha_bounds {
        if !(lo > 0.0 && lo < hi && hi <= 1.0) {
            return Err(Error::config(
                "alpha_bounds",
                format!("need 0 < lo < hi ≤ 1, got ({lo}, {hi})"),
            ));
        }
    }
    let probe = probe_scenario(s, spec)?;
    let target = probe.aggregation.expect("checked").target;
    let pipeline = Pipeline::new(&probe)?;
    let cal = *pipeline.calibration().expect("aggregation scenario");
    let fixed_alpha = match probe.link.alpha {
        Setting::Fixed(a) => a,
        Setting::Auto(_) => 1.0,
    };
    let eval = |phi: f64, alpha: f64| -> f64 {
        pipeline
            .probe(phi, alpha)
            .map(|r| score(&r, spec.objective))
            .unwrap_or(f64::INFINITY)
    };

    // The relative phase advances by 2n per radian of drive phase.
    let period = PI / cal.order as f64;
    let alphas: Vec<f64> = match spec.alpha_bounds {
        None => vec![fixed_alpha],
        Some((lo, hi)) => (0..ALPHA_GRID)
            .map(|k| lo + (hi - lo) * k as f64 / (ALPHA_GRID - 1) as f64)
            .collect(),
    };
    let grid: Vec<(f64, f64)> = alphas
        .iter()
        .flat_map(|&a| {
            (0..spec.phi_grid).map(move |k| (period * k as f64 / spec.phi_grid as f64, a))
        })
        .collect();
    let landscape: Vec<TunePoint> = grid
        .par_iter()
        .map(|&(phi_rad, alpha)| TunePoint {
            phi_rad,
            alpha,
            objective: eval(phi_rad, alpha),
        })
        .collect();
    let mut best = *landscape
        .iter()
        .min_by(|a, b| a.objective.total_cmp(&b.objective))
        .expect("non-empty grid");
    let mut history = vec![best];

    let phi_step = period / spec.phi_grid as f64;
    let alpha_step = spec
        .alpha_bounds
        .map(|(lo, hi)| (hi - lo) / (ALPHA_GRID - 1) as f64);
    let mut converged = false;
    for _ in 0..REFINE_ROUNDS {
        let before = best.objective;
        let (phi, f) = golden_section(
            |p| eval(p, best.alpha),
            best.phi_rad - phi_step,
            best.phi_rad + phi_step,
            spec.refine_iters,
        );
        if f < best.objective {
            best = TunePoint {
                phi_rad: phi,
                alpha: best.alpha,
                objective: f,
            };
            history.push(best);
        }
        if let (Some((lo, hi)), Some(step)) = (spec.alpha_bounds, alpha_step) {
            let (a, f) = golden_section(
                |a| eval(best.phi_rad, a),
                (best.alpha - step).max(lo),
                (best.alpha + step).min(hi),
                spec.refine_iters,
            );
            if f < best.objective {
                best = TunePoint {
                    phi_rad: best.phi_rad,
                    alpha: a,
                    objective: f,
                };
                history.push(best);
            }
        }
        if before - best.objective < 1e-4 {
            converged = true;
            break;
        }
    }
    best.phi_rad = best.phi_rad.rem_euclid(period);

    let f = probe.transmitter.formats;
    let pred = predict_format(
        f[0],
        f[1],
        best.alpha * cal.alpha_eff,
        cal.relative_phase(best.phi_rad),
    )?;
    if pred.map_to_target(target, 0.05).is_none() {
        return Err(Error::Infeasible(format!(
            "{} + {} cannot form {target}: best drive phase {:.4} rad with weight {:.3} leaves {:.2}% EVM",
            f[0], f[1], best.phi_rad, best.alpha, best.objective
        )));
    }
    let evm = pipeline.probe(best.phi_rad, best.alpha)?.evm_avg_pct;
    Ok(TuneResult {
        target,
        phi_star_rad: best.phi_rad,
        alpha_star: best.alpha,
        evm_at_opt_pct: evm,
        objective_at_opt: best.objective,
        landscape,
        converged,
        history,
        symbols_per_probe: probe.transmitter.symbol_count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub delta_phi_rad: f64,
    pub delta_alpha: f64,
    pub evm_pct: f64,
    /// RMS error vector as a fraction of the target's minimum distance.
    pub error_over_dmin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sensitivity {
    pub phi_rows: Vec<SensitivityRow>,
    pub alpha_rows: Vec<SensitivityRow>,
    /// Mean EVM rise per degree of drive phase error.
    pub evm_per_degree: f64,
    /// Mean EVM rise per percent of weight error.
    pub evm_per_alpha_pct: f64,
}

impl Sensitivity {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("delta_phi_rad,delta_alpha,evm_pct,error_over_dmin\n");
        for r in self.phi_rows.iter().chain(&self.alpha_rows) {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.delta_phi_rad, r.delta_alpha, r.evm_pct, r.error_over_dmin
            ));
        }
        out
    }
}

fn mean_slope(rows: &[SensitivityRow], base: f64, step: impl Fn(&SensitivityRow) -> f64) -> f64 {
    let v: Vec<f64> = rows
        .iter()
        .filter(|r| step(r) != 0.0)
        .map(|r| (r.evm_pct - base) / step(r).abs())
        .collect();
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Noiseless EVM around an operating point: drive phase `φ* + δ` at the
/// tuned weight, and weight `α*·(1 + δ)` at the tuned phase.
pub fn sensitivity(
    s: &Scenario,
    at: &TuneResult,
    phi_deltas: &[f64],
    alpha_deltas: &[f64],
) -> Result<Sensitivity> {
    let spec = TuneSpec {
        target: Some(at.target),
        ..TuneSpec::default()
    };
    let probe = probe_scenario(s, &spec)?;
    let pipeline = Pipeline::new(&probe)?;
    let pts = at.target.points();
    let rms = (pts.iter().map(|p| p.norm_sqr()).sum::<f64>() / pts.len() as f64).sqrt();
    let dmin = at.target.min_distance();
    let row = |dp: f64, da: f64| -> Result<SensitivityRow> {
        let alpha = (at.alpha_star * (1.0 + da)).min(1.0);
        let evm = pipeline.probe(at.phi_star_rad + dp, alpha)?.evm_avg_pct;
        Ok(SensitivityRow {
            delta_phi_rad: dp,
            delta_alpha: da,
            evm_pct: evm,
            error_over_dmin: evm / 100.0 * rms / dmin,
        })
    };
    let phi_rows: Vec<SensitivityRow> = phi_deltas
        .par_iter()
        .map(|&d| row(d, 0.0))
        .collect::<Result<_>>()?;
    let alpha_rows: Vec<SensitivityRow> = alpha_deltas
        .par_iter()
        .map(|&d| row(0.0, d))
        .collect::<Result<_>>()?;
    let base = pipeline.probe(at.phi_star_rad, at.alpha_star)?.evm_avg_pct;
    Ok(Sensitivity {
        evm_per_degree: mean_slope(&phi_rows, base, |r| r.delta_phi_rad.to_degrees()),
        evm_per_alpha_pct: mean_slope(&alpha_rows, base, |r| 100.0 * r.delta_alpha),
        phi_rows,
        alpha_rows,
    })
}
