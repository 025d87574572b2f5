//! Three small views of the pipeline for the browser page in `www/`.
//!
//! Every export takes and returns plain numbers, vectors or strings, so the
//! same functions run natively under `cargo test`.

use mpdpd::fxp::{cordic_eval, CordicConfig, CordicMode, Fxp};
use mpdpd::pa::PaSimModel;
use mpdpd::quant::QuantSpec;
use wasm_bindgen::prelude::*;

/// Fraction bits of the CORDIC input and output codes.
const IO_FRAC_BITS: i32 = 12;

/// Interleaved `[x0, q0, x1, q1, ...]` of the fake-quantizer staircase over
/// `[lo, hi]`. Empty when the spec is invalid.
#[wasm_bindgen]
pub fn quantizer_curve(n_bits: u32, signed: bool, scale_log2: i32, lo: f64, hi: f64, points: u32) -> Vec<f64> {
    let Ok(spec) = QuantSpec::new(n_bits, signed, scale_log2) else {
        return Vec::new();
    };
    let n = points.max(2) as usize;
    let mut out = Vec::with_capacity(2 * n);
    for i in 0..n {
        let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
        out.push(x);
        out.push(spec.apply(x));
    }
    out
}

/// `[step, q_min * step, q_max * step]` of a quantizer, or empty if invalid.
#[wasm_bindgen]
pub fn quantizer_range(n_bits: u32, signed: bool, scale_log2: i32) -> Vec<f64> {
    match QuantSpec::new(n_bits, signed, scale_log2) {
        Ok(s) => vec![s.scale(), s.q_min() as f64 * s.scale(), s.q_max() as f64 * s.scale()],
        Err(_) => Vec::new(),
    }
}

/// Interleaved `[x, err]` of the CORDIC activation minus the libm reference
/// over `[-4, 4]`. `func` is `"tanh"` or `"sigmoid"`.
#[wasm_bindgen]
pub fn cordic_error_curve(func: &str, iterations: u32, internal_width_bits: u32, points: u32) -> Vec<f64> {
    let (mode, reference): (CordicMode, fn(f64) -> f64) = match func {
        "sigmoid" => (CordicMode::HyperbolicSigmoid, |x| 1.0 / (1.0 + (-x).exp())),
        _ => (CordicMode::HyperbolicTanh, f64::tanh),
    };
    let cfg = CordicConfig {
        iterations: iterations.clamp(1, 40),
        mode,
        internal_width_bits: internal_width_bits.clamp(8, 40),
        ..Default::default()
    };
    let n = points.max(2) as usize;
    let mut out = Vec::with_capacity(2 * n);
    for i in 0..n {
        let code = ((-4.0 + 8.0 * i as f64 / (n - 1) as f64) * (1 << IO_FRAC_BITS) as f64).round() as i64;
        let x = Fxp {
            value: code,
            exp: -IO_FRAC_BITS,
        };
        let y = cordic_eval(&cfg, x, -(internal_width_bits.clamp(8, 40) as i32));
        out.push(x.to_f64());
        out.push(y.to_f64() - reference(x.to_f64()));
    }
    out
}

/// Largest absolute value in the odd slots of an interleaved curve.
#[wasm_bindgen]
pub fn max_abs_error(curve: &[f64]) -> f64 {
    curve.iter().skip(1).step_by(2).fold(0.0, |m, e| m.max(e.abs()))
}

/// Interleaved `[r_in, r_out, phase_deg]` of the default PA's memoryless
/// response, for input amplitudes up to `drive` (full scale is 1).
#[wasm_bindgen]
pub fn pa_am_curves(drive: f64, points: u32) -> Vec<f64> {
    let pa = PaSimModel::default();
    let top = drive.clamp(0.01, 1.0);
    let n = points.max(2) as usize;
    let mut out = Vec::with_capacity(3 * n);
    for i in 0..n {
        let r = top * i as f64 / (n - 1) as f64;
        let g = pa.static_gain(r);
        out.extend([r, g.norm() * r, g.arg().to_degrees()]);
    }
    out
}
