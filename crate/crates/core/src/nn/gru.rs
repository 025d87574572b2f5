use std::borrow::Cow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GruDims, NnError, Param, RealTensor, Site, OUTPUT_DIM};
use crate::quant::QuantState;
use crate::signal::FeatureVector;

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// GRU + FC parameters stored contiguously in [`Param::ALL`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct GruModel {
    dims: GruDims,
    params: Vec<f64>,
}

/// How activation sites and weights are treated during a forward pass.
#[derive(Clone, Copy, Debug)]
pub enum QuantMode<'a> {
    Float,
    /// Fake quantization on the snapped power-of-two grids.
    Fake(&'a QuantState),
    /// Straight-through surrogate `s*clip(v/s) + s*delta` with frozen rounding
    /// residuals and continuous scales. Used by gradient checks.
    Surrogate(&'a QuantState, &'a FrozenResiduals),
}

/// Rounding residuals `round(c) - c` (with `c = clip(v/s)`) captured from a
/// fake-quant pass, plus the scales the surrogate evaluates with.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenResiduals {
    pub weights: Vec<f64>,
    pub sites: Vec<f64>,
    pub weight_scales: Vec<f64>,
    pub site_scales: Vec<f64>,
}

impl QuantMode<'_> {
    fn effective_params<'m>(&self, model: &'m GruModel) -> Cow<'m, [f64]> {
        match self {
            QuantMode::Float => Cow::Borrowed(&model.params),
            QuantMode::Fake(q) => Cow::Owned(q.quantize_params(model)),
            QuantMode::Surrogate(q, r) => {
                let mut w = model.params.clone();
                for p in Param::ALL {
                    let spec = q.weight(p);
                    let s = r.weight_scales[p.index()];
                    let (lo, hi) = (spec.q_min() as f64, spec.q_max() as f64);
                    for k in model.dims.range(p) {
                        w[k] = s * (w[k] / s).clamp(lo, hi) + s * r.weights[k];
                    }
                }
                Cow::Owned(w)
            }
        }
    }

    #[inline]
    fn site(&self, site: Site, slot: usize, v: f64) -> f64 {
        match self {
            QuantMode::Float => v,
            QuantMode::Fake(q) => q.site(site).apply(v),
            QuantMode::Surrogate(q, r) => {
                let spec = q.site(site);
                let s = r.site_scales[site.index()];
                s * (v / s).clamp(spec.q_min() as f64, spec.q_max() as f64) + s * r.sites[slot]
            }
        }
    }

    fn quant(&self) -> Option<&QuantState> {
        match self {
            QuantMode::Float => None,
            QuantMode::Fake(q) | QuantMode::Surrogate(q, _) => Some(q),
        }
    }

    fn scale_of(&self, site: Option<Site>, param: Option<Param>) -> f64 {
        match (self, site, param) {
            (QuantMode::Surrogate(_, r), Some(s), _) => r.site_scales[s.index()],
            (QuantMode::Surrogate(_, r), _, Some(p)) => r.weight_scales[p.index()],
            (m, Some(s), _) => m.quant().map_or(1.0, |q| q.site(s).scale()),
            (m, _, Some(p)) => m.quant().map_or(1.0, |q| q.weight(p).scale()),
            _ => 1.0,
        }
    }
}

/// Straight-through gradient of one fake-quant op: `(d/dx, d/ds)`.
#[inline]
fn ste(x: f64, s: f64, lo: f64, hi: f64, g: f64) -> (f64, f64) {
    let v = x / s;
    if v < lo {
        (0.0, g * lo)
    } else if v > hi {
        (0.0, g * hi)
    } else {
        (g, g * (v.round_ties_even() - v))
    }
}

/// Everything a forward pass recorded: per-step site values before (`pre`)
/// and after (`out`) quantization, plus the weights actually used.
#[derive(Clone, Debug)]
pub struct Trace {
    dims: GruDims,
    len: usize,
    h0: Vec<f64>,
    pre: Vec<f64>,
    out: Vec<f64>,
    weights: Vec<f64>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn slot(&self, t: usize, s: Site) -> std::ops::Range<usize> {
        let o = t * self.dims.site_stride() + self.dims.site_offset(s);
        o..o + self.dims.site_len(s)
    }

    pub fn site_out(&self, t: usize, s: Site) -> &[f64] {
        &self.out[self.slot(t, s)]
    }

    pub fn site_pre(&self, t: usize, s: Site) -> &[f64] {
        &self.pre[self.slot(t, s)]
    }

    pub fn output(&self, t: usize) -> [f64; 2] {
        let y = self.site_out(t, Site::Y);
        [y[0], y[1]]
    }

    pub fn outputs(&self) -> Vec<[f64; 2]> {
        (0..self.len).map(|t| self.output(t)).collect()
    }

    pub fn hidden(&self, t: usize) -> &[f64] {
        self.site_out(t, Site::H)
    }

    fn h_prev(&self, t: usize) -> &[f64] {
        if t == 0 {
            &self.h0
        } else {
            self.hidden(t - 1)
        }
    }

    pub fn effective_weights(&self) -> &[f64] {
        &self.weights
    }

    /// Rounding residuals of this (fake-quant) pass, for the surrogate mode.
    pub fn residuals(&self, model: &GruModel, q: &QuantState) -> FrozenResiduals {
        let stride = self.dims.site_stride();
        let mut slot_site = Vec::with_capacity(stride);
        for s in Site::ALL {
            slot_site.extend(std::iter::repeat(s).take(self.dims.site_len(s)));
        }
        let resid = |v: f64, spec: &crate::quant::QuantSpec| {
            let c = (v / spec.scale()).clamp(spec.q_min() as f64, spec.q_max() as f64);
            c.round_ties_even() - c
        };
        let sites = self
            .pre
            .iter()
            .enumerate()
            .map(|(k, &v)| resid(v, q.site(slot_site[k % stride])))
            .collect();
        let mut weights = vec![0.0; model.params.len()];
        for p in Param::ALL {
            for k in model.dims.range(p) {
                weights[k] = resid(model.params[k], q.weight(p));
            }
        }
        FrozenResiduals {
            weights,
            sites,
            weight_scales: q.weights.iter().map(|s| s.scale()).collect(),
            site_scales: q.sites.iter().map(|s| s.scale()).collect(),
        }
    }
}

/// Result of one GRU cell step.
#[derive(Clone, Debug, PartialEq)]
pub struct CellOutput {
    pub h: Vec<f64>,
    pub r: Vec<f64>,
    pub z: Vec<f64>,
    pub n: Vec<f64>,
    pub r_pre: Vec<f64>,
    pub z_pre: Vec<f64>,
    pub n_pre: Vec<f64>,
}

/// Gradients of a scalar loss.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    /// Same layout as [`GruModel::params`].
    pub params: Vec<f64>,
    /// `T x input_dim`, with respect to the raw (pre-quantization) inputs.
    pub inputs: Vec<f64>,
    /// With respect to each weight tensor's scale (zero in float mode).
    pub weight_scales: Vec<f64>,
    /// With respect to each activation site's scale (zero in float mode).
    pub site_scales: Vec<f64>,
}

impl GruModel {
    pub fn zeros(dims: GruDims) -> Self {
        Self {
            dims,
            params: vec![0.0; dims.parameter_count()],
        }
    }

    /// Uniform initialization in `[-1/sqrt(h), 1/sqrt(h)]`.
    pub fn init(dims: GruDims, seed: u64) -> Self {
        let bound = 1.0 / (dims.hidden_dim as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = (0..dims.parameter_count())
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        Self { dims, params }
    }

    pub fn from_params(dims: GruDims, params: Vec<f64>) -> Result<Self, NnError> {
        if params.len() != dims.parameter_count() {
            return Err(NnError::Dimension(format!(
                "{} parameters for dims needing {}",
                params.len(),
                dims.parameter_count()
            )));
        }
        Ok(Self { dims, params })
    }

    pub fn dims(&self) -> GruDims {
        self.dims
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn tensor(&self, p: Param) -> &[f64] {
        &self.params[self.dims.range(p)]
    }

    pub fn tensor_mut(&mut self, p: Param) -> &mut [f64] {
        let r = self.dims.range(p);
        &mut self.params[r]
    }

    pub fn to_tensors(&self) -> Vec<(Param, RealTensor)> {
        Param::ALL
            .iter()
            .map(|&p| {
                (
                    p,
                    RealTensor {
                        shape: self.dims.shape(p),
                        data: self.tensor(p).to_vec(),
                    },
                )
            })
            .collect()
    }

    /// One float GRU step (reset, update, candidate, new state) with intermediates.
    pub fn cell_forward(&self, phi: &[f64], h_prev: &[f64]) -> Result<CellOutput, NnError> {
        if h_prev.len() != self.dims.hidden_dim {
            return Err(NnError::Dimension(format!(
                "h_prev has {} entries, hidden_dim is {}",
                h_prev.len(),
                self.dims.hidden_dim
            )));
        }
        let tr = self.forward_flat(phi, Some(h_prev), QuantMode::Float)?;
        if tr.len != 1 {
            return Err(NnError::Dimension(format!(
                "phi has {} entries, input_dim is {}",
                phi.len(),
                self.dims.input_dim
            )));
        }
        Ok(CellOutput {
            h: tr.site_out(0, Site::H).to_vec(),
            r: tr.site_out(0, Site::R).to_vec(),
            z: tr.site_out(0, Site::Z).to_vec(),
            n: tr.site_out(0, Site::N).to_vec(),
            r_pre: tr.site_out(0, Site::RPre).to_vec(),
            z_pre: tr.site_out(0, Site::ZPre).to_vec(),
            n_pre: tr.site_out(0, Site::NPre).to_vec(),
        })
    }

    /// Output layer `W_y h + b_y`.
    pub fn fc_forward(&self, h: &[f64]) -> Result<[f64; 2], NnError> {
        let hd = self.dims.hidden_dim;
        if h.len() != hd {
            return Err(NnError::Dimension(format!("h has {} entries, hidden_dim is {hd}", h.len())));
        }
        let wy = self.tensor(Param::Wy);
        let by = self.tensor(Param::By);
        Ok([dot(&wy[..hd], h) + by[0], dot(&wy[hd..], h) + by[1]])
    }

    /// Runs the model over a feature sequence starting from a zero state.
    pub fn forward_sequence(&self, features: &[FeatureVector], quant: Option<&QuantState>) -> Trace {
        let mode = quant.map_or(QuantMode::Float, QuantMode::Fake);
        self.forward_features(features, mode)
    }

    pub fn forward_features(&self, features: &[FeatureVector], mode: QuantMode) -> Trace {
        assert_eq!(self.dims.input_dim, FeatureVector::DIM, "model input_dim must be 4 for features");
        let flat: Vec<f64> = features.iter().flat_map(|f| f.0).collect();
        self.forward_flat(&flat, None, mode).expect("feature sequence matches input_dim")
    }

    /// Forward pass over `T x input_dim` inputs.
    pub fn forward_flat(&self, x: &[f64], h0: Option<&[f64]>, mode: QuantMode) -> Result<Trace, NnError> {
        let d = self.dims;
        let (n_in, hd) = (d.input_dim, d.hidden_dim);
        if x.is_empty() {
            return Err(NnError::EmptySequence);
        }
        if x.len() % n_in != 0 {
            return Err(NnError::Dimension(format!(
                "{} input values is not a multiple of input_dim {n_in}",
                x.len()
            )));
        }
        let h0 = match h0 {
            Some(h) if h.len() != hd => {
                return Err(NnError::Dimension(format!("h0 has {} entries, hidden_dim is {hd}", h.len())))
            }
            Some(h) => h.to_vec(),
            None => vec![0.0; hd],
        };
        let steps = x.len() / n_in;
        let w = mode.effective_params(self);
        let stride = d.site_stride();
        let mut pre = vec![0.0; steps * stride];
        let mut out = vec![0.0; steps * stride];

        let t_of = |p: Param| &w[d.range(p)];
        let (wir, wiz, win) = (t_of(Param::Wir), t_of(Param::Wiz), t_of(Param::Win));
        let (whr, whz, whn) = (t_of(Param::Whr), t_of(Param::Whz), t_of(Param::Whn));
        let (bir, biz, bin) = (t_of(Param::Bir), t_of(Param::Biz), t_of(Param::Bin));
        let (bhr, bhz, bhn) = (t_of(Param::Bhr), t_of(Param::Bhz), t_of(Param::Bhn));
        let (wy, by) = (t_of(Param::Wy), t_of(Param::By));
        let off: Vec<usize> = Site::ALL.iter().map(|&s| d.site_offset(s)).collect();
        let mut phi = vec![0.0; n_in];
        let mut hp = h0.clone();
        let mut hnew = vec![0.0; hd];

        for t in 0..steps {
            let base = t * stride;
            let pre_t = &mut pre[base..base + stride];
            let out_t = &mut out[base..base + stride];
            let mut put = |s: Site, i: usize, v: f64| -> f64 {
                let k = off[s.index()] + i;
                pre_t[k] = v;
                let y = mode.site(s, base + k, v);
                out_t[k] = y;
                y
            };
            for j in 0..n_in {
                phi[j] = put(Site::Feat, j, x[t * n_in + j]);
            }
            for i in 0..hd {
                let wi = i * n_in..(i + 1) * n_in;
                let wh = i * hd..(i + 1) * hd;
                let a_r = dot(&wir[wi.clone()], &phi) + bir[i] + dot(&whr[wh.clone()], &hp) + bhr[i];
                let r_pre = put(Site::RPre, i, a_r);
                let r = put(Site::R, i, sigmoid(r_pre));
                let a_z = dot(&wiz[wi.clone()], &phi) + biz[i] + dot(&whz[wh.clone()], &hp) + bhz[i];
                let z_pre = put(Site::ZPre, i, a_z);
                let z = put(Site::Z, i, sigmoid(z_pre));
                let hn = put(Site::HnPart, i, dot(&whn[wh], &hp) + bhn[i]);
                let rhn = put(Site::RHn, i, r * hn);
                let n_pre = put(Site::NPre, i, dot(&win[wi], &phi) + bin[i] + rhn);
                let n = put(Site::N, i, n_pre.tanh());
                let zcn = put(Site::ZcN, i, (1.0 - z) * n);
                let zh = put(Site::ZH, i, z * hp[i]);
                hnew[i] = put(Site::H, i, zcn + zh);
            }
            for o in 0..OUTPUT_DIM {
                put(Site::Y, o, dot(&wy[o * hd..(o + 1) * hd], &hnew) + by[o]);
            }
            std::mem::swap(&mut hp, &mut hnew);
        }
        Ok(Trace {
            dims: d,
            len: steps,
            h0,
            pre,
            out,
            weights: w.into_owned(),
        })
    }

    /// Backpropagation through time for `loss_grads[t] = dL/dy_t`.
    pub fn backward(&self, trace: &Trace, loss_grads: &[[f64; 2]], mode: QuantMode) -> Result<Gradients, NnError> {
        let d = self.dims;
        if trace.dims != d {
            return Err(NnError::Dimension("trace was produced by a model of different size".into()));
        }
        if loss_grads.len() != trace.len {
            return Err(NnError::Dimension(format!(
                "{} loss gradients for a trace of length {}",
                loss_grads.len(),
                trace.len
            )));
        }
        let (n_in, hd) = (d.input_dim, d.hidden_dim);
        let w = &trace.weights;
        let mut gw = vec![0.0; w.len()];
        let mut gin = vec![0.0; trace.len * n_in];
        let mut site_scales = vec![0.0; Site::ALL.len()];
        let quant = mode.quant();
        let site_meta: Vec<(f64, f64, f64)> = Site::ALL
            .iter()
            .map(|&s| match quant {
                Some(q) => {
                    let sp = q.site(s);
                    (mode.scale_of(Some(s), None), sp.q_min() as f64, sp.q_max() as f64)
                }
                None => (1.0, 0.0, 0.0),
            })
            .collect();

        let r_of = |p: Param| d.range(p);
        let (rwir, rwiz, rwin) = (r_of(Param::Wir), r_of(Param::Wiz), r_of(Param::Win));
        let (rwhr, rwhz, rwhn) = (r_of(Param::Whr), r_of(Param::Whz), r_of(Param::Whn));
        let (rbir, rbiz, rbin) = (r_of(Param::Bir), r_of(Param::Biz), r_of(Param::Bin));
        let (rbhr, rbhz, rbhn) = (r_of(Param::Bhr), r_of(Param::Bhz), r_of(Param::Bhn));
        let (rwy, rby) = (r_of(Param::Wy), r_of(Param::By));

        let mut dh_next = vec![0.0; hd];
        let mut dh = vec![0.0; hd];
        let mut dphi = vec![0.0; n_in];

        for t in (0..trace.len).rev() {
            let hp = trace.h_prev(t).to_vec();
            let pre_of = |s: Site| trace.site_pre(t, s);
            let out_of = |s: Site| trace.site_out(t, s);
            let mut sb = |s: Site, i: usize, g: f64| -> f64 {
                if quant.is_none() {
                    return g;
                }
                let (sc, lo, hi) = site_meta[s.index()];
                let (gx, gs) = ste(pre_of(s)[i], sc, lo, hi, g);
                site_scales[s.index()] += gs;
                gx
            };
            let hnew = out_of(Site::H);
            let (phi, r, z, n, hn) = (out_of(Site::Feat), out_of(Site::R), out_of(Site::Z), out_of(Site::N), out_of(Site::HnPart));
            let (sig_r, sig_z, tanh_n) = (pre_of(Site::R), pre_of(Site::Z), pre_of(Site::N));

            dh.copy_from_slice(&dh_next);
            for o in 0..OUTPUT_DIM {
                let gy = sb(Site::Y, o, loss_grads[t][o]);
                gw[rby.start + o] += gy;
                for i in 0..hd {
                    gw[rwy.start + o * hd + i] += gy * hnew[i];
                    dh[i] += w[rwy.start + o * hd + i] * gy;
                }
            }
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            dphi.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..hd {
                let g_h = sb(Site::H, i, dh[i]);
                let g_zh = sb(Site::ZH, i, g_h);
                let g_zcn = sb(Site::ZcN, i, g_h);
                let dz = g_zh * hp[i] - g_zcn * n[i];
                dh_next[i] += g_zh * z[i];
                let dn = g_zcn * (1.0 - z[i]);
                let g_n = sb(Site::N, i, dn);
                let g_an = sb(Site::NPre, i, g_n * (1.0 - tanh_n[i] * tanh_n[i]));
                gw[rbin.start + i] += g_an;
                for j in 0..n_in {
                    gw[rwin.start + i * n_in + j] += g_an * phi[j];
                    dphi[j] += w[rwin.start + i * n_in + j] * g_an;
                }
                let g_rhn = sb(Site::RHn, i, g_an);
                let dr = g_rhn * hn[i];
                let g_hn = sb(Site::HnPart, i, g_rhn * r[i]);
                gw[rbhn.start + i] += g_hn;
                for k in 0..hd {
                    gw[rwhn.start + i * hd + k] += g_hn * hp[k];
                    dh_next[k] += w[rwhn.start + i * hd + k] * g_hn;
                }
                let g_z = sb(Site::Z, i, dz);
                let g_az = sb(Site::ZPre, i, g_z * sig_z[i] * (1.0 - sig_z[i]));
                gw[rbiz.start + i] += g_az;
                gw[rbhz.start + i] += g_az;
                for j in 0..n_in {
                    gw[rwiz.start + i * n_in + j] += g_az * phi[j];
                    dphi[j] += w[rwiz.start + i * n_in + j] * g_az;
                }
                for k in 0..hd {
                    gw[rwhz.start + i * hd + k] += g_az * hp[k];
                    dh_next[k] += w[rwhz.start + i * hd + k] * g_az;
                }
                let g_r = sb(Site::R, i, dr);
                let g_ar = sb(Site::RPre, i, g_r * sig_r[i] * (1.0 - sig_r[i]));
                gw[rbir.start + i] += g_ar;
                gw[rbhr.start + i] += g_ar;
                for j in 0..n_in {
                    gw[rwir.start + i * n_in + j] += g_ar * phi[j];
                    dphi[j] += w[rwir.start + i * n_in + j] * g_ar;
                }
                for k in 0..hd {
                    gw[rwhr.start + i * hd + k] += g_ar * hp[k];
                    dh_next[k] += w[rwhr.start + i * hd + k] * g_ar;
                }
            }
            for j in 0..n_in {
                gin[t * n_in + j] = sb(Site::Feat, j, dphi[j]);
            }
        }

        let mut weight_scales = vec![0.0; Param::ALL.len()];
        if let Some(q) = quant {
            for p in Param::ALL {
                let spec = q.weight(p);
                let sc = mode.scale_of(None, Some(p));
                let (lo, hi) = (spec.q_min() as f64, spec.q_max() as f64);
                for k in d.range(p) {
                    let (gx, gs) = ste(self.params[k], sc, lo, hi, gw[k]);
                    gw[k] = gx;
                    weight_scales[p.index()] += gs;
                }
            }
        }
        Ok(Gradients {
            params: gw,
            inputs: gin,
            weight_scales,
            site_scales,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::apply_mixed_precision;

    fn random_inputs(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_model_step() {
        let m = GruModel::zeros(GruDims::new(4, 3));
        let c = m.cell_forward(&[0.3, -0.2, 0.5, 0.1], &[0.0; 3]).unwrap();
        assert_eq!(c.r, vec![0.5; 3]);
        assert_eq!(c.z, vec![0.5; 3]);
        assert_eq!(c.n, vec![0.0; 3]);
        assert_eq!(c.h, vec![0.0; 3]);
    }

    #[test]
    fn saturated_update_gate_holds_state() {
        let mut m = GruModel::init(GruDims::new(4, 3), 5);
        m.tensor_mut(Param::Biz).fill(20.0);
        m.tensor_mut(Param::Bhz).fill(20.0);
        let h_prev = [0.4, -0.7, 0.1];
        let c = m.cell_forward(&[0.9, -0.3, 0.95, 0.86], &h_prev).unwrap();
        for (a, b) in c.h.iter().zip(h_prev) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    /// GRU equations written out scalar by scalar, independent of the flat layout code.
    fn scalar_oracle(m: &GruModel, phi: &[f64], hp: &[f64]) -> (Vec<f64>, [f64; 2]) {
        let d = m.dims();
        let (ni, h) = (d.input_dim, d.hidden_dim);
        let w = |p: Param, i: usize, j: usize, cols: usize| m.tensor(p)[i * cols + j];
        let b = |p: Param, i: usize| m.tensor(p)[i];
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let mut hn = vec![0.0; h];
        for i in 0..h {
            let mut ar = b(Param::Bir, i) + b(Param::Bhr, i);
            let mut az = b(Param::Biz, i) + b(Param::Bhz, i);
            let mut anx = b(Param::Bin, i);
            let mut anh = b(Param::Bhn, i);
            for j in 0..ni {
                ar += w(Param::Wir, i, j, ni) * phi[j];
                az += w(Param::Wiz, i, j, ni) * phi[j];
                anx += w(Param::Win, i, j, ni) * phi[j];
            }
            for k in 0..h {
                ar += w(Param::Whr, i, k, h) * hp[k];
                az += w(Param::Whz, i, k, h) * hp[k];
                anh += w(Param::Whn, i, k, h) * hp[k];
            }
            let (r, z) = (sig(ar), sig(az));
            let n = (anx + r * anh).tanh();
            hn[i] = (1.0 - z) * n + z * hp[i];
        }
        let mut y = [0.0; 2];
        for o in 0..2 {
            y[o] = b(Param::By, o);
            for i in 0..h {
                y[o] += w(Param::Wy, o, i, h) * hn[i];
            }
        }
        (hn, y)
    }

    #[test]
    fn cell_and_fc_match_scalar_oracle() {
        for seed in 0..5 {
            let m = GruModel::init(GruDims::new(4, 3), seed);
            let phi = random_inputs(4, seed + 100);
            let hp = random_inputs(3, seed + 200);
            let c = m.cell_forward(&phi, &hp).unwrap();
            let y = m.fc_forward(&c.h).unwrap();
            let (h_ref, y_ref) = scalar_oracle(&m, &phi, &hp);
            for (a, b) in c.h.iter().zip(&h_ref) {
                assert!((a - b).abs() <= 1e-12);
            }
            for (a, b) in y.iter().zip(&y_ref) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn fc_examples() {
        let mut m = GruModel::init(GruDims::new(4, 3), 1);
        m.tensor_mut(Param::Wy).fill(0.0);
        m.tensor_mut(Param::By).copy_from_slice(&[0.3, -0.2]);
        assert_eq!(m.fc_forward(&[0.5, -1.0, 2.0]).unwrap(), [0.3, -0.2]);
        let m = GruModel::init(GruDims::new(4, 3), 2);
        let wy = m.tensor(Param::Wy).to_vec();
        let by = m.tensor(Param::By).to_vec();
        let y = m.fc_forward(&[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(y, [wy[1] + by[0], wy[4] + by[1]]);
    }

    #[test]
    fn dimension_errors() {
        let m = GruModel::zeros(GruDims::new(4, 3));
        assert!(m.cell_forward(&[0.0; 4], &[0.0; 2]).is_err());
        assert!(m.cell_forward(&[0.0; 5], &[0.0; 3]).is_err());
        assert!(m.fc_forward(&[0.0; 4]).is_err());
        assert_eq!(m.forward_flat(&[], None, QuantMode::Float).unwrap_err(), NnError::EmptySequence);
        let tr = m.forward_flat(&[0.0; 8], None, QuantMode::Float).unwrap();
        assert!(m.backward(&tr, &[[0.0; 2]; 3], QuantMode::Float).is_err());
    }

    #[test]
    fn zero_loss_gradient_gives_zero_gradients() {
        let m = GruModel::init(GruDims::new(4, 3), 3);
        let x = random_inputs(4 * 5, 9);
        let tr = m.forward_flat(&x, None, QuantMode::Float).unwrap();
        let g = m.backward(&tr, &[[0.0; 2]; 5], QuantMode::Float).unwrap();
        assert!(g.params.iter().all(|&v| v == 0.0));
        assert!(g.inputs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_cell_closed_form_whn_gradient() {
        // T=1, h=1 with a nonzero initial state so the W_hn path is live
        let mut m = GruModel::init(GruDims::new(1, 1), 11);
        m.tensor_mut(Param::Wy).copy_from_slice(&[1.0, 0.0]);
        m.tensor_mut(Param::By).copy_from_slice(&[0.0, 0.0]);
        let x = [0.7];
        let h0 = [0.4];
        let tr = m.forward_flat(&x, Some(&h0), QuantMode::Float).unwrap();
        let g = m.backward(&tr, &[[1.0, 0.0]], QuantMode::Float).unwrap();
        let r = tr.site_out(0, Site::R)[0];
        let z = tr.site_out(0, Site::Z)[0];
        let n = tr.site_out(0, Site::N)[0];
        // dh/dW_hn = (1-z) (1-n^2) r h0
        let expected = (1.0 - z) * (1.0 - n * n) * r * h0[0];
        let got = g.params[m.dims().range(Param::Whn).start];
        assert!((got - expected).abs() < 1e-14, "{got} vs {expected}");
    }

    fn loss_and_grads(m: &GruModel, x: &[f64], targets: &[[f64; 2]], mode: QuantMode) -> (f64, Gradients) {
        let tr = m.forward_flat(x, None, mode).unwrap();
        let mut loss = 0.0;
        let dy: Vec<[f64; 2]> = tr
            .outputs()
            .iter()
            .zip(targets)
            .map(|(y, t)| {
                let e = [y[0] - t[0], y[1] - t[1]];
                loss += 0.5 * (e[0] * e[0] + e[1] * e[1]);
                e
            })
            .collect();
        (loss, m.backward(&tr, &dy, mode).unwrap())
    }

    fn loss_only(m: &GruModel, x: &[f64], targets: &[[f64; 2]], mode: QuantMode) -> f64 {
        loss_and_grads(m, x, targets, mode).0
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn float_gradients_match_finite_differences() {
        for (h, steps) in [(1, 1), (2, 3), (5, 8)] {
            let dims = GruDims::new(4, h);
            let m = GruModel::init(dims, 40 + h as u64);
            let x = random_inputs(4 * steps, 7);
            let targets: Vec<[f64; 2]> = random_inputs(2 * steps, 8).chunks(2).map(|c| [c[0], c[1]]).collect();
            let (_, g) = loss_and_grads(&m, &x, &targets, QuantMode::Float);
            let eps = 1e-5;
            for k in 0..m.parameter_count() {
                let mut mp = m.clone();
                mp.params_mut()[k] += eps;
                let mut mm = m.clone();
                mm.params_mut()[k] -= eps;
                let fd = (loss_only(&mp, &x, &targets, QuantMode::Float) - loss_only(&mm, &x, &targets, QuantMode::Float)) / (2.0 * eps);
                assert!(rel_err(fd, g.params[k]) < 1e-4, "h={h} T={steps} k={k}: fd {fd} an {}", g.params[k]);
            }
            for k in 0..x.len() {
                let mut xp = x.clone();
                xp[k] += eps;
                let mut xm = x.clone();
                xm[k] -= eps;
                let fd = (loss_only(&m, &xp, &targets, QuantMode::Float) - loss_only(&m, &xm, &targets, QuantMode::Float)) / (2.0 * eps);
                assert!(rel_err(fd, g.inputs[k]) < 1e-4, "input {k}: fd {fd} an {}", g.inputs[k]);
            }
        }
    }

    #[test]
    fn fake_quant_backward_equals_surrogate_backward_at_base_point() {
        let m = GruModel::init(GruDims::new(4, 3), 4);
        let feats: Vec<FeatureVector> = random_inputs(2 * 6, 3)
            .chunks(2)
            .map(|c| FeatureVector::of(num_complex::Complex64::new(c[0], c[1])))
            .collect();
        let q = apply_mixed_precision(&m, 8, 8, &feats).unwrap();
        let x: Vec<f64> = feats.iter().flat_map(|f| f.0).collect();
        let targets = vec![[0.1, -0.2]; 6];
        let tr = m.forward_flat(&x, None, QuantMode::Fake(&q)).unwrap();
        let res = tr.residuals(&m, &q);
        let (l1, g1) = loss_and_grads(&m, &x, &targets, QuantMode::Fake(&q));
        let (l2, g2) = loss_and_grads(&m, &x, &targets, QuantMode::Surrogate(&q, &res));
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.params.iter().zip(&g2.params) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in g1.site_scales.iter().zip(&g2.site_scales) {
            assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
        }
    }

    #[test]
    fn surrogate_scale_gradients_match_finite_differences() {
        for (h, steps) in [(1, 1), (2, 3), (5, 8)] {
            let m = GruModel::init(GruDims::new(4, h), 60 + h as u64);
            let feats: Vec<FeatureVector> = random_inputs(2 * steps, 5)
                .chunks(2)
                .map(|c| FeatureVector::of(num_complex::Complex64::new(c[0], c[1])))
                .collect();
            let q = apply_mixed_precision(&m, 8, 8, &feats).unwrap();
            let x: Vec<f64> = feats.iter().flat_map(|f| f.0).collect();
            let targets: Vec<[f64; 2]> = random_inputs(2 * steps, 6).chunks(2).map(|c| [c[0], c[1]]).collect();
            let res = m.forward_flat(&x, None, QuantMode::Fake(&q)).unwrap().residuals(&m, &q);
            let (_, g) = loss_and_grads(&m, &x, &targets, QuantMode::Surrogate(&q, &res));
            let at = |r: &FrozenResiduals| loss_only(&m, &x, &targets, QuantMode::Surrogate(&q, r));
            for k in 0..Site::ALL.len() {
                let eps = 1e-6 * res.site_scales[k];
                let (mut rp, mut rm) = (res.clone(), res.clone());
                rp.site_scales[k] += eps;
                rm.site_scales[k] -= eps;
                let fd = (at(&rp) - at(&rm)) / (2.0 * eps);
                assert!(rel_err(fd, g.site_scales[k]) < 1e-4, "site {k}: fd {fd} an {}", g.site_scales[k]);
            }
            for k in 0..Param::ALL.len() {
                let eps = 1e-6 * res.weight_scales[k];
                let (mut rp, mut rm) = (res.clone(), res.clone());
                rp.weight_scales[k] += eps;
                rm.weight_scales[k] -= eps;
                let fd = (at(&rp) - at(&rm)) / (2.0 * eps);
                assert!(rel_err(fd, g.weight_scales[k]) < 1e-4, "weight {k}: fd {fd} an {}", g.weight_scales[k]);
            }
            let eps = 1e-6;
            for k in 0..m.parameter_count() {
                let (mut mp, mut mm) = (m.clone(), m.clone());
                mp.params_mut()[k] += eps;
                mm.params_mut()[k] -= eps;
                let fd = (loss_only(&mp, &x, &targets, QuantMode::Surrogate(&q, &res))
                    - loss_only(&mm, &x, &targets, QuantMode::Surrogate(&q, &res)))
                    / (2.0 * eps);
                assert!(rel_err(fd, g.params[k]) < 1e-4, "param {k}: fd {fd} an {}", g.params[k]);
            }
        }
    }

    #[test]
    fn gates_are_bounded() {
        let m = GruModel::init(GruDims::new(4, 5), 8);
        let x: Vec<f64> = random_inputs(4 * 50, 1).iter().map(|v| v * 5.0).collect();
        let tr = m.forward_flat(&x, None, QuantMode::Float).unwrap();
        for t in 0..tr.len() {
            assert!(tr.site_out(t, Site::R).iter().all(|&v| v > 0.0 && v < 1.0));
            assert!(tr.site_out(t, Site::Z).iter().all(|&v| v > 0.0 && v < 1.0));
            assert!(tr.site_out(t, Site::N).iter().all(|&v| v > -1.0 && v < 1.0));
        }
    }

    #[test]
    fn forward_backward_deterministic() {
        let m = GruModel::init(GruDims::new(4, 4), 2);
        let x = random_inputs(4 * 10, 2);
        let targets = vec![[0.0, 0.0]; 10];
        let (l1, g1) = loss_and_grads(&m, &x, &targets, QuantMode::Float);
        let (l2, g2) = loss_and_grads(&m, &x, &targets, QuantMode::Float);
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert_eq!(g1, g2);
    }
}
