//! Benchmark fixtures shared by the criterion benches.

use optagg_core::scenario::commensurate_symbol_count;
use optagg_core::{golden, run, ComplexEnvelope, Scenario};

/// Bundled scenario cut to at least `symbols` symbols, spectrum export off.
pub fn short_scenario(name: &str, symbols: usize) -> Scenario {
    let mut s = golden(name).unwrap_or_else(|| panic!("no golden scenario {name}"));
    s.transmitter.symbol_count = commensurate_symbol_count(&s, symbols).expect("symbol count");
    s.outputs.spectrum = false;
    s
}

/// Receiver output of a short run, for timing symbol recovery alone.
pub fn received(name: &str, symbols: usize) -> (Scenario, ComplexEnvelope) {
    let s = short_scenario(name, symbols);
    let out = run(&s).expect("scenario runs");
    (s, out.baseband)
}

/// 1 mW CW tone on a grid of `len` samples at 640 GS/s.
pub fn cw(len: usize) -> ComplexEnvelope {
    ComplexEnvelope::tone(len, 640e9, 193.4e12, 0.0, 1.0, 0.0).expect("tone")
}
