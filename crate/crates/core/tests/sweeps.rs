use std::f64::consts::PI;

use optagg_core::scenario::{commensurate_symbol_count, SweepRow};
use optagg_core::*;

fn short(name: &str, min_symbols: usize) -> Scenario {
    let mut s = golden(name).unwrap();
    s.transmitter.symbol_count = commensurate_symbol_count(&s, min_symbols).unwrap();
    s.outputs.spectrum = false;
    s
}

/// Indices of cyclic local minima that sit well below the landscape median.
fn deep_minima(rows: &[SweepRow]) -> Vec<usize> {
    let evm: Vec<f64> = rows.iter().map(|r| r.evm_avg_pct).collect();
    let mut sorted = evm.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let n = evm.len();
    (0..n)
        .filter(|&i| {
            let (prev, next) = (evm[(i + n - 1) % n], evm[(i + 1) % n]);
            evm[i] < prev && evm[i] <= next && evm[i] < 0.25 * median
        })
        .collect()
}

#[test]
fn phi_sweep_shows_two_qpsk_minima_per_pi() {
    let s = short("fig5a_qpsk", 1000);
    let theta0 = Pipeline::new(&s).unwrap().calibration().unwrap().theta0_rad;
    let values: Vec<f64> = (0..64).map(|k| k as f64 * PI / 64.0).collect();
    let rows = sweep(&s, SweepParam::PhiRad, &values, |_, _, _| Ok(())).unwrap();
    assert_eq!(rows.len(), 64);
    let minima = deep_minima(&rows);
    assert_eq!(minima.len(), 2, "minima at {minima:?}");
    let step = PI / 64.0;
    for &i in &minima {
        // QPSK needs the relative phase 2φ + θ0 at π/2 modulo π.
        let rel = 2.0 * values[i] + theta0;
        let off = (rel - PI / 2.0).rem_euclid(PI);
        let off = off.min(PI - off);
        assert!(
            off <= 2.0 * step,
            "minimum at φ={} misses by {off} rad",
            values[i]
        );
        assert!(rows[i].evm_avg_pct < 2.0, "{:?}", rows[i]);
    }
    let gap = (values[minima[1]] - values[minima[0]]).abs();
    assert!((gap - PI / 2.0).abs() <= step * 1.01, "gap {gap}");
}

#[test]
fn alpha_sweep_finds_pam4_weight() {
    let s = short("fig5b_pam4", 1000);
    let values: Vec<f64> = (0..=8).map(|k| 0.3 + 0.05 * k as f64).collect();
    let rows = sweep(&s, SweepParam::Alpha, &values, |_, _, _| Ok(())).unwrap();
    let best = rows
        .iter()
        .min_by(|a, b| a.evm_avg_pct.total_cmp(&b.evm_avg_pct))
        .unwrap();
    assert!((best.value - 0.5).abs() <= 0.05 + 1e-12, "best {best:?}");
    // Unit-power normalization leaves a short-block floor on PAM-4 (level
    // populations are not exactly equal), so only the location is checked,
    // plus a clear dip against the neighbours.
    for r in &rows {
        if (r.value - best.value).abs() > 1e-9 {
            assert!(r.evm_avg_pct > 2.0 * best.evm_avg_pct, "{rows:#?}");
        }
    }
}

#[test]
fn sweep_visits_each_point_once() {
    let s = short("fig5a_qpsk", 500);
    let seen = std::sync::Mutex::new(Vec::new());
    let values = [0.9, 1.0];
    let rows = sweep(&s, SweepParam::Alpha, &values, |i, v, out| {
        assert!(out.report.symbols > 0);
        seen.lock().unwrap().push((i, v));
        Ok(())
    })
    .unwrap();
    let mut seen = seen.into_inner().unwrap();
    seen.sort_by_key(|p| p.0);
    assert_eq!(seen, vec![(0, 0.9), (1, 1.0)]);
    assert_eq!(rows[1].value, 1.0);
    let csv = scenario::sweep_csv(&rows);
    assert!(csv.starts_with("value,evm_avg,evm_std,q_factor,ser\n"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn empty_sweep_is_a_config_error() {
    let s = short("fig5a_qpsk", 500);
    let e = sweep(&s, SweepParam::Alpha, &[], |_, _, _| Ok(())).unwrap_err();
    assert!(e.is_config(), "{e}");
}

#[test]
fn sweep_parameter_names_round_trip() {
    for name in SweepParam::NAMES {
        assert!(SweepParam::parse(name).is_some(), "{name}");
    }
    assert!(SweepParam::parse("bias").is_none());
}

#[test]
fn phi_sweep_needs_aggregation() {
    let mut s = short("fig5a_qpsk", 500);
    s.aggregation = None;
    s.receiver.channel = scenario::RxChannel::Parent1;
    let e = sweep(&s, SweepParam::PhiRad, &[0.1], |_, _, _| Ok(())).unwrap_err();
    assert!(e.is_config(), "{e}");
}
