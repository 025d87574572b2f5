//! Fake quantization on power-of-two grids with straight-through gradients.
//!
//! `q = s * round(clip(x / s, Q_min, Q_max))` with `s = 2^scale_log2`.
//! Rounding is half-to-even. During training the continuous scale
//! (`learnable_scale_raw`) receives gradients and is snapped to the nearest
//! power of two before every forward pass.

use serde::{Deserialize, Serialize};

use crate::nn::{GruModel, Param, Site};
use crate::signal::FeatureVector;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum QuantError {
    #[error("unsupported bit width {0} (expected 8, 12 or 16)")]
    UnsupportedWidth(u32),
    #[error("bit width {0} outside 2..=24")]
    BadWidth(u32),
    #[error("non-finite input {0}")]
    NonFinite(f64),
    #[error("scale must be positive and finite, got {0}")]
    BadScale(f64),
}

/// Bit widths the mixed-precision scheme supports.
pub const SUPPORTED_WIDTHS: [u32; 3] = [8, 12, 16];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantSpec {
    pub n_bits: u32,
    pub signed: bool,
    pub scale_log2: i32,
    pub learnable_scale_raw: f64,
}

impl QuantSpec {
    /// A spec whose raw scale sits exactly on `2^scale_log2`.
    pub fn new(n_bits: u32, signed: bool, scale_log2: i32) -> Result<Self, QuantError> {
        if !(2..=24).contains(&n_bits) {
            return Err(QuantError::BadWidth(n_bits));
        }
        Ok(Self {
            n_bits,
            signed,
            scale_log2,
            learnable_scale_raw: pow2(scale_log2),
        })
    }

    /// Smallest power-of-two scale whose range covers `max_abs`.
    pub fn covering(n_bits: u32, signed: bool, max_abs: f64) -> Result<Self, QuantError> {
        let mut spec = Self::new(n_bits, signed, 0)?;
        let max_abs = if max_abs > 0.0 && max_abs.is_finite() { max_abs } else { 1.0 };
        let e = (max_abs / spec.q_max() as f64).log2().ceil() as i32;
        spec.scale_log2 = e;
        spec.learnable_scale_raw = pow2(e);
        Ok(spec)
    }

    pub fn q_min(&self) -> i64 {
        if self.signed {
            -(1i64 << (self.n_bits - 1))
        } else {
            0
        }
    }

    pub fn q_max(&self) -> i64 {
        if self.signed {
            (1i64 << (self.n_bits - 1)) - 1
        } else {
            (1i64 << self.n_bits) - 1
        }
    }

    pub fn scale(&self) -> f64 {
        pow2(self.scale_log2)
    }

    /// Integer code of `x` on this grid.
    #[inline]
    pub fn code(&self, x: f64) -> i64 {
        let v = (x * pow2(-self.scale_log2)).clamp(self.q_min() as f64, self.q_max() as f64);
        v.round_ties_even() as i64
    }

    /// Fake-quantized value; callers guarantee `x` is finite.
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        self.code(x) as f64 * self.scale()
    }

    pub fn is_snapped(&self) -> bool {
        self.learnable_scale_raw > 0.0 && snap_exponent(self.learnable_scale_raw) == self.scale_log2
    }
}

#[inline]
pub fn pow2(e: i32) -> f64 {
    2f64.powi(e)
}

/// `round(log2(raw))` with exact midpoints going to the larger exponent.
pub fn snap_exponent(raw: f64) -> i32 {
    (raw.log2() + 0.5).floor() as i32
}

/// Fake quantization of one value.
pub fn quantize(x: f64, spec: &QuantSpec) -> Result<f64, QuantError> {
    if !x.is_finite() {
        return Err(QuantError::NonFinite(x));
    }
    Ok(spec.apply(x))
}

/// Gradients of `quantize` with respect to `x` and to the scale `s`
/// (straight-through estimator; the clipped region passes nothing to `x`).
pub fn quantize_backward(x: f64, spec: &QuantSpec, upstream: f64) -> (f64, f64) {
    let s = spec.scale();
    let v = x / s;
    let (lo, hi) = (spec.q_min() as f64, spec.q_max() as f64);
    if v < lo {
        (0.0, upstream * lo)
    } else if v > hi {
        (0.0, upstream * hi)
    } else {
        (upstream, upstream * (v.round_ties_even() - v))
    }
}

/// Snaps the scale exponent to the nearest power of two of the raw scale.
pub fn snap_scale(spec: &QuantSpec) -> Result<QuantSpec, QuantError> {
    if !(spec.learnable_scale_raw.is_finite() && spec.learnable_scale_raw > 0.0) {
        return Err(QuantError::BadScale(spec.learnable_scale_raw));
    }
    Ok(QuantSpec {
        scale_log2: snap_exponent(spec.learnable_scale_raw),
        ..*spec
    })
}

/// Per-tensor weight specs and per-site activation specs of one GRU model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantState {
    pub weight_bits: u32,
    pub act_bits: u32,
    /// Indexed by [`Param::index`].
    pub weights: Vec<QuantSpec>,
    /// Indexed by [`Site::index`].
    pub sites: Vec<QuantSpec>,
}

impl QuantState {
    pub fn weight(&self, p: Param) -> &QuantSpec {
        &self.weights[p.index()]
    }

    pub fn site(&self, s: Site) -> &QuantSpec {
        &self.sites[s.index()]
    }

    pub fn all_specs(&self) -> impl Iterator<Item = &QuantSpec> {
        self.weights.iter().chain(&self.sites)
    }

    pub fn all_specs_mut(&mut self) -> impl Iterator<Item = &mut QuantSpec> {
        self.weights.iter_mut().chain(&mut self.sites)
    }

    pub fn is_snapped(&self) -> bool {
        self.all_specs().all(QuantSpec::is_snapped)
    }

    /// Fake-quantized copy of the model parameters.
    pub fn quantize_params(&self, model: &GruModel) -> Vec<f64> {
        let mut out = model.params().to_vec();
        for p in Param::ALL {
            let spec = self.weight(p);
            for v in &mut out[model.dims().range(p)] {
                *v = spec.apply(*v);
            }
        }
        out
    }

    pub fn tag(&self) -> String {
        format!("W{}A{}", self.weight_bits, self.act_bits)
    }
}

/// Attaches quantization specs to every weight tensor and activation site.
///
/// Scales start at the smallest power of two covering the tensor's (or the
/// site's, over `calibration`) maximum magnitude.
pub fn apply_mixed_precision(
    model: &GruModel,
    weight_bits: u32,
    act_bits: u32,
    calibration: &[FeatureVector],
) -> Result<QuantState, QuantError> {
    for b in [weight_bits, act_bits] {
        if !SUPPORTED_WIDTHS.contains(&b) {
            return Err(QuantError::UnsupportedWidth(b));
        }
    }
    let dims = model.dims();
    let weights = Param::ALL
        .iter()
        .map(|&p| {
            let max = model.params()[dims.range(p)].iter().fold(0.0f64, |m, v| m.max(v.abs()));
            QuantSpec::covering(weight_bits, true, max)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let site_max = calibrate_sites(model, calibration);
    let sites = Site::ALL
        .iter()
        .map(|&s| QuantSpec::covering(act_bits, s.signed(), site_max[s.index()]))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(QuantState {
        weight_bits,
        act_bits,
        weights,
        sites,
    })
}

/// Maximum magnitude seen at each activation site in a float forward pass.
pub fn calibrate_sites(model: &GruModel, features: &[FeatureVector]) -> Vec<f64> {
    let mut max = vec![0.0f64; Site::ALL.len()];
    if features.is_empty() {
        return vec![1.0; Site::ALL.len()];
    }
    let trace = model.forward_sequence(features, None);
    for t in 0..features.len() {
        for s in Site::ALL {
            for v in trace.site_out(t, s) {
                max[s.index()] = max[s.index()].max(v.abs());
            }
        }
    }
    // gates saturate at 1; keep their grids able to represent it
    for s in [Site::R, Site::Z] {
        max[s.index()] = max[s.index()].max(1.0);
    }
    max
}
