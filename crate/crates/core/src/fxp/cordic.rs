use serde::{Deserialize, Serialize};

use super::{rescale_with, Fxp, RoundMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CordicMode {
    HyperbolicSigmoid,
    HyperbolicTanh,
    VectoringAmplitude,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CordicConfig {
    pub iterations: u32,
    pub mode: CordicMode,
    /// Fraction bits of the internal fixed-point format.
    pub internal_width_bits: u32,
    /// Apply the first-order correction `e^theta * (1 + z_n)` for the
    /// residual angle left after the last micro-rotation.
    pub residual_correction: bool,
}

impl Default for CordicConfig {
    fn default() -> Self {
        Self {
            iterations: 15,
            mode: CordicMode::HyperbolicTanh,
            internal_width_bits: 24,
            residual_correction: true,
        }
    }
}

/// |x| beyond which tanh is taken as +-1.
const TANH_SATURATION: i64 = 8;

/// CORDIC core with precomputed angle tables and gain constants.
#[derive(Clone, Debug, PartialEq)]
pub struct Cordic {
    cfg: CordicConfig,
    one: i64,
    ln2: i64,
    /// hyperbolic micro-rotation schedule: (shift, atanh(2^-shift))
    hyper: Vec<(u32, i64)>,
    hyper_x0: i64,
    circ_gain: i64,
    rounding: RoundMode,
}

impl Cordic {
    /// Builds tables for `cfg`. Table constants are rounded once here; the
    /// evaluation itself is integer-only.
    pub fn new(cfg: CordicConfig) -> Self {
        Self::with_rounding(cfg, RoundMode::default())
    }

    pub fn with_rounding(cfg: CordicConfig, rounding: RoundMode) -> Self {
        assert!(cfg.iterations >= 1, "CORDIC needs at least one iteration");
        assert!((8..=40).contains(&cfg.internal_width_bits), "internal width must be 8..=40");
        let f = cfg.internal_width_bits as i32;
        let q = |x: f64| (x * 2f64.powi(f)).round() as i64;
        let mut hyper = Vec::new();
        let mut gain = 1.0f64;
        for i in 1..=cfg.iterations {
            let reps = if i == 4 || i == 13 { 2 } else { 1 };
            for _ in 0..reps {
                let t = 2f64.powi(-(i as i32));
                hyper.push((i, q(t.atanh())));
                gain *= (1.0 - t * t).sqrt();
            }
        }
        let mut circ = 1.0f64;
        for i in 0..cfg.iterations {
            circ *= 1.0 / (1.0 + 4f64.powi(-(i as i32))).sqrt();
        }
        Self {
            cfg,
            one: 1i64 << f,
            ln2: q(std::f64::consts::LN_2),
            hyper,
            hyper_x0: q(1.0 / gain),
            circ_gain: q(circ),
            rounding,
        }
    }

    pub fn config(&self) -> &CordicConfig {
        &self.cfg
    }

    fn frac(&self) -> u32 {
        self.cfg.internal_width_bits
    }

    fn rescale(&self, v: i128, from: i32, to: i32) -> i128 {
        rescale_with(v, from, to, self.rounding)
    }

    fn shr(&self, v: i128, k: u32) -> i128 {
        self.rescale(v, 0, k as i32)
    }

    /// Converts to the internal format, saturating far outside the useful range.
    fn to_internal(&self, x: Fxp) -> i64 {
        let limit = (2 * TANH_SATURATION) as i128 * self.one as i128;
        let v = self.rescale(x.value as i128, x.exp, -(self.frac() as i32));
        v.clamp(-limit, limit) as i64
    }

    fn from_internal(&self, v: i64, dest_exp: i32) -> Fxp {
        Fxp::new(self.rescale(v as i128, -(self.frac() as i32), dest_exp) as i64, dest_exp)
    }

    /// `e^y` for internal `y` with `|y| <= 16`: `y = k ln2 + r`, hyperbolic
    /// rotation gives `cosh r + sinh r`, then a shift by `k`.
    fn exp_internal(&self, y: i64) -> i64 {
        let k = (2 * y + self.ln2).div_euclid(2 * self.ln2);
        let r = y - k * self.ln2;
        let (mut x, mut yy, mut z) = (self.hyper_x0, 0i64, r);
        for &(i, t) in &self.hyper {
            let (xs, ys) = (x >> i, yy >> i);
            if z >= 0 {
                x += ys;
                yy += xs;
                z -= t;
            } else {
                x -= ys;
                yy -= xs;
                z += t;
            }
        }
        let mut e = x + yy;
        if self.cfg.residual_correction {
            e += self.shr(e as i128 * z as i128, self.frac()) as i64;
        }
        if k >= 0 {
            e << k
        } else {
            self.shr(e as i128, (-k) as u32) as i64
        }
    }

    /// Internal tanh for internal input; odd by construction.
    fn tanh_internal(&self, x: i64) -> i64 {
        let ax = x.abs();
        let t = if ax >= TANH_SATURATION * self.one {
            self.one
        } else {
            let e = self.exp_internal(2 * ax) as i128;
            let one = self.one as i128;
            let num = (e - one) << self.frac();
            let den = e + one;
            // round-half-up division
            (2 * num + den).div_euclid(2 * den) as i64
        };
        if x < 0 {
            -t
        } else {
            t
        }
    }

    pub fn tanh(&self, x: Fxp, dest_exp: i32) -> Fxp {
        let v = self.tanh_internal(self.to_internal(x));
        self.from_internal(v, dest_exp)
    }

    /// `sigma(x) = (1 + tanh(x / 2)) / 2`.
    pub fn sigmoid(&self, x: Fxp, dest_exp: i32) -> Fxp {
        let half = Fxp::new(x.value, x.exp - 1);
        let t = self.tanh_internal(self.to_internal(half));
        // (one + t) / 2 kept exact by dropping one fraction bit in the exponent
        let v = self.one + t;
        Fxp::new(
            self.rescale(v as i128, -(self.frac() as i32) - 1, dest_exp) as i64,
            dest_exp,
        )
    }

    /// `sqrt(i^2 + q^2)` by circular vectoring; inputs share exponent `exp`.
    pub fn magnitude(&self, i: i64, q: i64, exp: i32, dest_exp: i32) -> Fxp {
        let mut x = self.to_internal_wide(i, exp).abs();
        let mut y = self.to_internal_wide(q, exp);
        for k in 0..self.cfg.iterations {
            let (xs, ys) = (x >> k, y >> k);
            if y > 0 {
                x += ys;
                y -= xs;
            } else {
                x -= ys;
                y += xs;
            }
        }
        let m = self.shr(x as i128 * self.circ_gain as i128, self.frac()) as i64;
        self.from_internal(m, dest_exp)
    }

    fn to_internal_wide(&self, v: i64, exp: i32) -> i64 {
        self.rescale(v as i128, exp, -(self.frac() as i32)) as i64
    }
}

/// Evaluates the configured function on a scalar, result at `dest_exp`.
/// Vectoring mode returns `|x|`.
pub fn cordic_eval(cfg: &CordicConfig, x: Fxp, dest_exp: i32) -> Fxp {
    let c = Cordic::new(*cfg);
    match cfg.mode {
        CordicMode::HyperbolicTanh => c.tanh(x, dest_exp),
        CordicMode::HyperbolicSigmoid => c.sigmoid(x, dest_exp),
        CordicMode::VectoringAmplitude => c.magnitude(x.value, 0, x.exp, dest_exp),
    }
}
