use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cordic::{Cordic, CordicConfig};
use super::{rescale_with, FxpError, RoundMode};
use crate::nn::{Checkpoint, GruDims, GruModel, Param, Site, OUTPUT_DIM};
use crate::quant::{QuantSpec, QuantState};
use crate::signal::FeatureVector;

pub const IMAGE_FORMAT: &str = "mpdpd-fxp-v1";
pub const DEFAULT_ACCUMULATOR_BITS: u32 = 48;

/// Grid of one activation site plus the exponent its inputs accumulate at.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FxpSite {
    pub name: String,
    pub exp: i32,
    pub q_min: i64,
    pub q_max: i64,
    /// Exponent of the exact accumulation domain feeding this site.
    pub acc_exp: i32,
    /// Right shift from `acc_exp` to `exp` (negative means left shift).
    pub shift: i32,
}

/// Integer-only model: weight codes, exponents, site grids and shift table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FxpImage {
    pub format: String,
    pub dims: GruDims,
    pub weight_exps: Vec<i32>,
    pub weights: Vec<i32>,
    pub sites: Vec<FxpSite>,
    pub cordic: CordicConfig,
    pub accumulator_bits: u32,
    /// Tie rule for every right shift.
    #[serde(default)]
    pub rounding: RoundMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct FxpOptions {
    /// Compute `|x|` with vectoring CORDIC from integer I/Q instead of
    /// ingesting the float amplitude features.
    pub vectoring_features: bool,
    /// Record the executed operation sequence.
    pub trace: bool,
}

/// One recorded engine operation. Only `Ingest` and `Descale` touch
/// floating-point values.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FxpOp {
    Ingest { step: usize },
    Accumulate { site: Site },
    Shift { site: Site, k: i32 },
    Cordic { site: Site },
    Multiply { site: Site },
    Clamp { site: Site },
    Descale { step: usize },
}

impl FxpOp {
    pub fn touches_float(&self) -> bool {
        matches!(self, FxpOp::Ingest { .. } | FxpOp::Descale { .. })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FxpOutput {
    /// Output codes on the `y` site grid.
    pub codes: Vec<[i64; 2]>,
    pub y: Vec<[f64; 2]>,
    pub ops: Vec<FxpOp>,
}

fn pow2(e: i32) -> f64 {
    2f64.powi(e)
}

fn check_snapped(name: &str, spec: &QuantSpec) -> Result<(), FxpError> {
    if spec.is_snapped() {
        Ok(())
    } else {
        Err(FxpError::Unsnapped(name.to_string()))
    }
}

impl FxpImage {
    pub fn lower(model: &GruModel, quant: &QuantState, cordic: CordicConfig) -> Result<Self, FxpError> {
        let dims = model.dims();
        for p in Param::ALL {
            check_snapped(p.name(), quant.weight(p))?;
        }
        for s in Site::ALL {
            check_snapped(s.name(), quant.site(s))?;
        }
        let mut weights = Vec::with_capacity(model.parameter_count());
        for p in Param::ALL {
            let spec = quant.weight(p);
            weights.extend(model.tensor(p).iter().map(|&w| spec.code(w) as i32));
        }
        let we: Vec<i32> = Param::ALL.iter().map(|&p| quant.weight(p).scale_log2).collect();
        let se = |s: Site| quant.site(s).scale_log2;
        let w = |p: Param| we[p.index()];
        let frac = -(cordic.internal_width_bits as i32);
        let acc_exp = |s: Site| -> i32 {
            use Param::*;
            match s {
                Site::Feat => se(Site::Feat),
                Site::RPre => (w(Wir) + se(Site::Feat)).min(w(Bir)).min(w(Whr) + se(Site::H)).min(w(Bhr)),
                Site::ZPre => (w(Wiz) + se(Site::Feat)).min(w(Biz)).min(w(Whz) + se(Site::H)).min(w(Bhz)),
                Site::R | Site::Z | Site::N => frac,
                Site::HnPart => (w(Whn) + se(Site::H)).min(w(Bhn)),
                Site::RHn => se(Site::R) + se(Site::HnPart),
                Site::NPre => (w(Win) + se(Site::Feat)).min(w(Bin)).min(se(Site::RHn)),
                Site::ZcN => se(Site::Z).min(0) + se(Site::N),
                Site::ZH => se(Site::Z) + se(Site::H),
                Site::H => se(Site::ZcN).min(se(Site::ZH)),
                Site::Y => (w(Wy) + se(Site::H)).min(w(By)),
            }
        };
        let sites = Site::ALL
            .iter()
            .map(|&s| {
                let spec = quant.site(s);
                let a = acc_exp(s);
                FxpSite {
                    name: s.name().to_string(),
                    exp: spec.scale_log2,
                    q_min: spec.q_min(),
                    q_max: spec.q_max(),
                    acc_exp: a,
                    shift: spec.scale_log2 - a,
                }
            })
            .collect();
        let img = Self {
            format: IMAGE_FORMAT.to_string(),
            dims,
            weight_exps: we,
            weights,
            sites,
            cordic,
            accumulator_bits: DEFAULT_ACCUMULATOR_BITS,
            rounding: RoundMode::default(),
        };
        img.validate()?;
        Ok(img)
    }

    pub fn validate(&self) -> Result<(), FxpError> {
        let bad = |m: String| Err(FxpError::Invalid(m));
        if self.format != IMAGE_FORMAT {
            return bad(format!("unknown format {:?}", self.format));
        }
        if self.weights.len() != self.dims.parameter_count() {
            return bad(format!("{} weight codes for {} parameters", self.weights.len(), self.dims.parameter_count()));
        }
        if self.weight_exps.len() != Param::ALL.len() || self.sites.len() != Site::ALL.len() {
            return bad("exponent tables have the wrong length".into());
        }
        for (s, site) in Site::ALL.iter().zip(&self.sites) {
            if site.name != s.name() {
                return bad(format!("site {} out of order", site.name));
            }
            if site.q_min > site.q_max || site.q_max >= 1 << 30 || site.q_min < -(1 << 30) {
                return bad(format!("site {} has range {}..{}", site.name, site.q_min, site.q_max));
            }
            if site.shift != site.exp - site.acc_exp {
                return bad(format!("site {} shift table is inconsistent", site.name));
            }
        }
        if !(16..=120).contains(&self.accumulator_bits) {
            return bad(format!("accumulator width {}", self.accumulator_bits));
        }
        if !(8..=40).contains(&self.cordic.internal_width_bits) || self.cordic.iterations == 0 {
            return bad("CORDIC configuration out of range".into());
        }
        Ok(())
    }

    pub fn site(&self, s: Site) -> &FxpSite {
        &self.sites[s.index()]
    }

    pub fn weight_codes(&self, p: Param) -> &[i32] {
        &self.weights[self.dims.range(p)]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("image serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, FxpError> {
        let img: Self = serde_json::from_str(s).map_err(|e| FxpError::Invalid(e.to_string()))?;
        img.validate()?;
        Ok(img)
    }

    pub fn save(&self, path: &Path) -> Result<(), FxpError> {
        std::fs::write(path, self.to_json()).map_err(|e| FxpError::Invalid(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, FxpError> {
        let s = std::fs::read_to_string(path).map_err(|e| FxpError::Invalid(format!("{}: {e}", path.display())))?;
        Self::from_json(&s)
    }
}

/// Lowers a checkpoint carrying a snapped quantization state.
pub fn lower_checkpoint(ckpt: &Checkpoint, cordic: CordicConfig) -> Result<FxpImage, FxpError> {
    let model = ckpt.model().map_err(|e| FxpError::Invalid(e.to_string()))?;
    let quant = ckpt.quant.as_ref().ok_or(FxpError::NoQuantState)?;
    FxpImage::lower(&model, quant, cordic)
}

struct Engine<'a> {
    img: &'a FxpImage,
    cordic: Cordic,
    limit: i128,
    step: usize,
    ops: Option<Vec<FxpOp>>,
}

impl Engine<'_> {
    fn record(&mut self, op: FxpOp) {
        if let Some(ops) = &mut self.ops {
            ops.push(op);
        }
    }

    fn check(&self, v: i128, site: Site) -> Result<i128, FxpError> {
        if v.abs() >= self.limit {
            Err(FxpError::Overflow {
                site: site.name(),
                step: self.step,
                bits: self.img.accumulator_bits,
            })
        } else {
            Ok(v)
        }
    }

    /// Adds `x * 2^x_exp` into an accumulator held at `acc_exp`.
    fn add(&self, acc: i128, x: i128, x_exp: i32, acc_exp: i32, site: Site) -> Result<i128, FxpError> {
        let shifted = self.check(x, site)? << (x_exp - acc_exp) as u32;
        self.check(shifted, site)?;
        self.check(acc + shifted, site)
    }

    /// Rescales an accumulator to the site grid and clamps.
    fn settle(&mut self, acc: i128, site: Site) -> i64 {
        let s = self.img.site(site);
        self.record(FxpOp::Shift { site, k: s.shift });
        let v = rescale_with(acc, s.acc_exp, s.exp, self.img.rounding);
        self.record(FxpOp::Clamp { site });
        v.clamp(s.q_min as i128, s.q_max as i128) as i64
    }

    fn clamp(&mut self, v: i64, site: Site) -> i64 {
        let s = self.img.site(site);
        self.record(FxpOp::Clamp { site });
        v.clamp(s.q_min, s.q_max)
    }

    /// `W[row] . v + b[row] (+ W2[row] . v2 + b2[row])` accumulated exactly.
    fn affine(&mut self, site: Site, terms: &[(Param, &[i64], i32)], biases: &[Param], extra: Option<(i64, i32)>, row: usize) -> Result<i64, FxpError> {
        let acc_exp = self.img.site(site).acc_exp;
        self.record(FxpOp::Accumulate { site });
        let mut acc: i128 = 0;
        for &(p, v, v_exp) in terms {
            let cols = v.len();
            let wrow = &self.img.weight_codes(p)[row * cols..(row + 1) * cols];
            let e = self.img.weight_exps[p.index()] + v_exp;
            for (&wc, &x) in wrow.iter().zip(v) {
                acc = self.add(acc, wc as i128 * x as i128, e, acc_exp, site)?;
            }
        }
        for &b in biases {
            let code = self.img.weight_codes(b)[row];
            acc = self.add(acc, code as i128, self.img.weight_exps[b.index()], acc_exp, site)?;
        }
        if let Some((x, e)) = extra {
            acc = self.add(acc, x as i128, e, acc_exp, site)?;
        }
        Ok(self.settle(acc, site))
    }

    fn product(&mut self, site: Site, a: i64, b: i64) -> Result<i64, FxpError> {
        self.record(FxpOp::Multiply { site });
        let p = self.check(a as i128 * b as i128, site)?;
        Ok(self.settle(p, site))
    }
}

/// Runs the integer GRU over `features` from a zero state.
pub fn fxp_gru_infer(img: &FxpImage, features: &[FeatureVector], opts: FxpOptions) -> Result<FxpOutput, FxpError> {
    img.validate()?;
    let d = img.dims;
    if d.input_dim != FeatureVector::DIM {
        return Err(FxpError::Dimension {
            expected: d.input_dim,
            found: FeatureVector::DIM,
        });
    }
    let hd = d.hidden_dim;
    let mut eng = Engine {
        img,
        cordic: Cordic::with_rounding(img.cordic, img.rounding),
        limit: 1i128 << (img.accumulator_bits - 1),
        step: 0,
        ops: opts.trace.then(Vec::new),
    };
    let e = |s: Site| img.site(s).exp;
    let feat = img.site(Site::Feat).clone();
    let mut h = vec![0i64; hd];
    let mut codes = Vec::with_capacity(features.len());
    let mut y = Vec::with_capacity(features.len());
    let y_site = img.site(Site::Y).clone();

    for (t, f) in features.iter().enumerate() {
        eng.step = t;
        if f.0.iter().any(|v| !v.is_finite()) {
            return Err(FxpError::NonFinite(t));
        }
        // ingestion: the only float -> integer conversion
        eng.record(FxpOp::Ingest { step: t });
        let ingest = |x: f64| {
            let v = (x / pow2(feat.exp)).round_ties_even();
            v.clamp(feat.q_min as f64, feat.q_max as f64) as i64
        };
        let phi: Vec<i64> = if opts.vectoring_features {
            let (i, q) = (ingest(f.0[0]), ingest(f.0[1]));
            eng.record(FxpOp::Cordic { site: Site::Feat });
            let m = eng.cordic.magnitude(i, q, feat.exp, feat.exp).value;
            let m = eng.clamp(m, Site::Feat);
            eng.record(FxpOp::Multiply { site: Site::Feat });
            let cube = m as i128 * m as i128 * m as i128;
            let cube = rescale_with(cube, 3 * feat.exp, feat.exp, img.rounding) as i64;
            let cube = eng.clamp(cube, Site::Feat);
            vec![i, q, m, cube]
        } else {
            f.0.iter().map(|&x| ingest(x)).collect()
        };

        let mut h_new = vec![0i64; hd];
        for i in 0..hd {
            use Param::*;
            let r_pre = eng.affine(
                Site::RPre,
                &[(Wir, &phi[..], e(Site::Feat)), (Whr, &h[..], e(Site::H))],
                &[Bir, Bhr],
                None,
                i,
            )?;
            eng.record(FxpOp::Cordic { site: Site::R });
            let r = eng.cordic.sigmoid(super::Fxp::new(r_pre, e(Site::RPre)), e(Site::R)).value;
            let r = eng.clamp(r, Site::R);

            let z_pre = eng.affine(
                Site::ZPre,
                &[(Wiz, &phi[..], e(Site::Feat)), (Whz, &h[..], e(Site::H))],
                &[Biz, Bhz],
                None,
                i,
            )?;
            eng.record(FxpOp::Cordic { site: Site::Z });
            let z = eng.cordic.sigmoid(super::Fxp::new(z_pre, e(Site::ZPre)), e(Site::Z)).value;
            let z = eng.clamp(z, Site::Z);

            let hn = eng.affine(Site::HnPart, &[(Whn, &h[..], e(Site::H))], &[Bhn], None, i)?;
            let rhn = eng.product(Site::RHn, r, hn)?;
            let n_pre = eng.affine(Site::NPre, &[(Win, &phi[..], e(Site::Feat))], &[Bin], Some((rhn, e(Site::RHn))), i)?;
            eng.record(FxpOp::Cordic { site: Site::N });
            let n = eng.cordic.tanh(super::Fxp::new(n_pre, e(Site::NPre)), e(Site::N)).value;
            let n = eng.clamp(n, Site::N);

            // 1 - z on the grid min(e_z, 0)
            let ez1 = e(Site::Z).min(0);
            let one_minus_z = (1i64 << (-ez1) as u32) - (z << (e(Site::Z) - ez1) as u32);
            let zcn = eng.product(Site::ZcN, one_minus_z, n)?;
            let zh = eng.product(Site::ZH, z, h[i])?;
            let acc_exp = img.site(Site::H).acc_exp;
            eng.record(FxpOp::Accumulate { site: Site::H });
            let acc = eng.add(0, zcn as i128, e(Site::ZcN), acc_exp, Site::H)?;
            let acc = eng.add(acc, zh as i128, e(Site::ZH), acc_exp, Site::H)?;
            h_new[i] = eng.settle(acc, Site::H);
        }
        h = h_new;
        let mut out = [0i64; 2];
        for (o, slot) in out.iter_mut().enumerate().take(OUTPUT_DIM) {
            *slot = eng.affine(Site::Y, &[(Param::Wy, &h[..], e(Site::H))], &[Param::By], None, o)?;
        }
        // final de-scaling
        eng.record(FxpOp::Descale { step: t });
        codes.push(out);
        y.push([out[0] as f64 * pow2(y_site.exp), out[1] as f64 * pow2(y_site.exp)]);
    }
    Ok(FxpOutput {
        codes,
        y,
        ops: eng.ops.unwrap_or_default(),
    })
}
