//! Two-stage end-to-end training: a GRU behavioral model of the PA, then a
//! GRU DPD trained through the frozen PA model, in float or with
//! quantization-aware training.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::fxp::{fxp_gru_infer, FxpError, FxpImage, FxpOptions};
use crate::metrics::{evaluate_signal, ChannelPlan, MetricsError, MetricsReport};
use crate::nn::{AdamConfig, AdamState, Checkpoint, CheckpointError, Gradients, GruDims, GruModel, NnError, QuantMode};
use crate::pa::{clip_to_full_scale, simulate_pa, PaError, PaSimModel, DEFAULT_DRIVE, FULL_SCALE};
use crate::quant::{apply_mixed_precision, snap_exponent, QuantError, QuantState, SUPPORTED_WIDTHS};
use crate::signal::{generate_ofdm, DatasetSplit, FeatureVector, IqSignal, OfdmConfig, OfdmReference, SignalError, SignalPair};

/// Samples used to calibrate initial activation scales.
const CALIBRATION_SAMPLES: usize = 20_000;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("dataset too short: {0} samples give no full frame")]
    TooShort(usize),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Pa(#[from] PaError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Fxp(#[from] FxpError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size_samples: usize,
    pub frame_length: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
    /// Linear gain of the DPD+PA cascade; `None` uses the least-squares
    /// complex gain of the PA data.
    pub target_gain: Option<f64>,
    /// Worker threads for the per-frame forward/backward; 0 = all cores.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 1e-3,
            batch_size_samples: 3200,
            frame_length: 200,
            early_stop_patience: 10,
            seed: 0,
            target_gain: None,
            threads: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if self.epochs < 1 {
            return bad("epochs must be >= 1");
        }
        if self.frame_length < 2 {
            return bad("frame_length must be >= 2");
        }
        if self.batch_size_samples == 0 || self.batch_size_samples % self.frame_length != 0 {
            return bad("batch_size_samples must be a positive multiple of frame_length");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if let Some(g) = self.target_gain {
            if !(g.is_finite() && g > 0.0) {
                return bad("target_gain must be positive");
            }
        }
        Ok(())
    }

    fn frames_per_batch(&self) -> usize {
        self.batch_size_samples / self.frame_length
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..Default::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Best-validation model of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub model: GruModel,
    pub quant: Option<QuantState>,
    pub history: Vec<EpochLoss>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl TrainOutcome {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_model(&self.model, self.quant.as_ref())
            .with_attribute("best_epoch", self.best_epoch)
            .with_attribute("best_val_loss", self.best_val_loss)
    }

    pub fn history_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for e in &self.history {
            let _ = writeln!(s, "{},{:e},{:e}", e.epoch, e.train_loss, e.val_loss);
        }
        s
    }
}

/// One training frame: input samples and the I/Q target per step.
#[derive(Clone, Debug)]
struct Frame {
    features: Vec<FeatureVector>,
    target: Vec<[f64; 2]>,
}

fn iq(c: Complex64) -> [f64; 2] {
    [c.re, c.im]
}

/// Cuts aligned input/target sequences into non-overlapping frames.
fn frames(input: &[Complex64], target: &[Complex64], len: usize) -> Vec<Frame> {
    input
        .chunks_exact(len)
        .zip(target.chunks_exact(len))
        .map(|(x, y)| Frame {
            features: x.iter().map(|&v| FeatureVector::of(v)).collect(),
            target: y.iter().map(|&v| iq(v)).collect(),
        })
        .collect()
}

/// Least-squares complex gain `g` minimizing `|y - g x|^2`.
pub fn ls_gain(input: &[Complex64], output: &[Complex64]) -> Complex64 {
    let num: Complex64 = input.iter().zip(output).map(|(x, y)| x.conj() * y).sum();
    let den: f64 = input.iter().map(|x| x.norm_sqr()).sum();
    if den == 0.0 {
        Complex64::new(1.0, 0.0)
    } else {
        num / den
    }
}

/// Gain the DPD+PA cascade is trained towards.
pub fn target_gain(cfg: &TrainConfig, data: &SignalPair) -> Complex64 {
    match cfg.target_gain {
        Some(g) => Complex64::new(g, 0.0),
        None => ls_gain(data.input.samples(), data.output.samples()),
    }
}

/// Per-frame loss-gradient evaluation shared by both training stages.
trait Objective: Sync {
    /// Sum of squared errors over the frame and its gradients, where
    /// `norm` divides the loss.
    fn frame(&self, model: &GruModel, quant: Option<&QuantState>, f: &Frame, norm: f64) -> Result<(f64, Gradients)>;
}

fn mode(quant: Option<&QuantState>) -> QuantMode<'_> {
    match quant {
        Some(q) => QuantMode::Fake(q),
        None => QuantMode::Float,
    }
}

struct PaFit;

impl Objective for PaFit {
    fn frame(&self, model: &GruModel, _: Option<&QuantState>, f: &Frame, norm: f64) -> Result<(f64, Gradients)> {
        let tr = model.forward_features(&f.features, QuantMode::Float);
        let mut sse = 0.0;
        let grads: Vec<[f64; 2]> = (0..tr.len())
            .map(|t| {
                let y = tr.output(t);
                let e = [y[0] - f.target[t][0], y[1] - f.target[t][1]];
                sse += e[0] * e[0] + e[1] * e[1];
                [2.0 * e[0] / norm, 2.0 * e[1] / norm]
            })
            .collect();
        Ok((sse, model.backward(&tr, &grads, QuantMode::Float)?))
    }
}

struct Cascade<'a> {
    pa: &'a GruModel,
}

impl Objective for Cascade<'_> {
    fn frame(&self, dpd: &GruModel, quant: Option<&QuantState>, f: &Frame, norm: f64) -> Result<(f64, Gradients)> {
        let m = mode(quant);
        let dtr = dpd.forward_features(&f.features, m);
        let u: Vec<[f64; 2]> = dtr.outputs();
        let pa_in: Vec<FeatureVector> = u.iter().map(|v| FeatureVector::of(Complex64::new(v[0], v[1]))).collect();
        let ptr = self.pa.forward_features(&pa_in, QuantMode::Float);
        let mut sse = 0.0;
        let gy: Vec<[f64; 2]> = (0..ptr.len())
            .map(|t| {
                let y = ptr.output(t);
                let e = [y[0] - f.target[t][0], y[1] - f.target[t][1]];
                sse += e[0] * e[0] + e[1] * e[1];
                [2.0 * e[0] / norm, 2.0 * e[1] / norm]
            })
            .collect();
        let pg = self.pa.backward(&ptr, &gy, QuantMode::Float)?;
        let d = FeatureVector::DIM;
        // chain through [I, Q, |u|, |u|^3]
        let gu: Vec<[f64; 2]> = u
            .iter()
            .enumerate()
            .map(|(t, v)| {
                let g = &pg.inputs[t * d..(t + 1) * d];
                let a = v[0].hypot(v[1]);
                let mut out = [g[0], g[1]];
                if a > 0.0 {
                    for k in 0..2 {
                        out[k] += g[2] * v[k] / a + g[3] * 3.0 * a * v[k];
                    }
                }
                out
            })
            .collect();
        Ok((sse, dpd.backward(&dtr, &gu, m)?))
    }
}

fn add_into(acc: &mut Gradients, g: &Gradients) {
    for (a, b) in acc.params.iter_mut().zip(&g.params) {
        *a += b;
    }
    for (a, b) in acc.weight_scales.iter_mut().zip(&g.weight_scales) {
        *a += b;
    }
    for (a, b) in acc.site_scales.iter_mut().zip(&g.site_scales) {
        *a += b;
    }
}

fn worker_count(cfg: &TrainConfig) -> usize {
    match cfg.threads {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
}

/// Loss and summed gradients over `batch`; per-frame results are combined in
/// frame order so the sum does not depend on the thread count.
fn batch_eval<O: Objective>(
    obj: &O,
    model: &GruModel,
    quant: Option<&QuantState>,
    batch: &[&Frame],
    norm: f64,
    threads: usize,
) -> Result<(f64, Option<Gradients>)> {
    let per = batch.len().div_ceil(threads.max(1)).max(1);
    let parts: Vec<Result<Vec<(f64, Gradients)>>> = std::thread::scope(|s| {
        let handles: Vec<_> = batch
            .chunks(per)
            .map(|chunk| s.spawn(move || chunk.iter().map(|f| obj.frame(model, quant, f, norm)).collect()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut loss = 0.0;
    let mut total: Option<Gradients> = None;
    for part in parts {
        for (l, g) in part? {
            loss += l;
            match &mut total {
                None => total = Some(g),
                Some(acc) => add_into(acc, &g),
            }
        }
    }
    Ok((loss / norm, total))
}

fn mean_loss<O: Objective>(obj: &O, model: &GruModel, quant: Option<&QuantState>, frames: &[Frame], threads: usize) -> Result<f64> {
    let refs: Vec<&Frame> = frames.iter().collect();
    let n: usize = frames.iter().map(|f| 2 * f.target.len()).sum();
    let mut total = 0.0;
    for chunk in refs.chunks(64) {
        total += batch_eval(obj, model, quant, chunk, n as f64, threads)?.0;
    }
    Ok(total)
}

/// Learned log2 scales of every quantizer, optimized alongside the weights.
struct ScaleLearner {
    log2: Vec<f64>,
    adam: AdamState,
}

impl ScaleLearner {
    fn new(q: &QuantState, cfg: AdamConfig) -> Self {
        let log2: Vec<f64> = q.all_specs().map(|s| s.learnable_scale_raw.log2()).collect();
        let adam = AdamState::new(log2.len(), cfg);
        Self { log2, adam }
    }

    /// Takes a step on `dL/ds` and re-snaps every scale.
    fn step(&mut self, q: &mut QuantState, g: &Gradients) {
        let ds = g.weight_scales.iter().chain(&g.site_scales);
        let grads: Vec<f64> = q
            .all_specs()
            .zip(ds)
            .map(|(spec, d)| d * spec.scale() * std::f64::consts::LN_2)
            .collect();
        self.adam.step(&mut self.log2, &grads);
        for (spec, &l) in q.all_specs_mut().zip(&self.log2) {
            spec.learnable_scale_raw = 2f64.powf(l);
            spec.scale_log2 = snap_exponent(spec.learnable_scale_raw);
        }
    }
}

fn run<O: Objective>(
    obj: &O,
    mut model: GruModel,
    mut quant: Option<QuantState>,
    train: &[Frame],
    val: &[Frame],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::TooShort(cfg.frame_length));
    }
    let threads = worker_count(cfg);
    let mut adam = AdamState::new(model.parameter_count(), cfg.adam());
    let mut scales = quant.as_ref().map(|q| ScaleLearner::new(q, cfg.adam()));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_f4a3);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best = (model.clone(), quant.clone(), 0usize, f64::INFINITY);
    let per_batch = cfg.frames_per_batch();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for idx in order.chunks(per_batch) {
            let batch: Vec<&Frame> = idx.iter().map(|&i| &train[i]).collect();
            let n: usize = batch.iter().map(|f| 2 * f.target.len()).sum();
            let (loss, grads) = batch_eval(obj, &model, quant.as_ref(), &batch, n as f64, threads)?;
            if !loss.is_finite() {
                return Err(TrainError::Diverged { epoch, loss });
            }
            sum += loss * batch.len() as f64;
            let grads = grads.expect("non-empty batch");
            adam.step(model.params_mut(), &grads.params);
            if let (Some(q), Some(s)) = (quant.as_mut(), scales.as_mut()) {
                s.step(q, &grads);
            }
        }
        let train_loss = sum / train.len() as f64;
        let val_loss = mean_loss(obj, &model, quant.as_ref(), val, threads)?;
        if !val_loss.is_finite() || model.params().iter().any(|p| !p.is_finite()) {
            return Err(TrainError::Diverged { epoch, loss: val_loss });
        }
        history.push(EpochLoss {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best.3 {
            best = (model.clone(), quant.clone(), epoch, val_loss);
        } else if epoch - best.2 >= cfg.early_stop_patience {
            break;
        }
    }
    Ok(TrainOutcome {
        model: best.0,
        quant: best.1,
        history,
        best_epoch: best.2,
        best_val_loss: best.3,
    })
}

fn split_frames(split: &DatasetSplit, cfg: &TrainConfig, target: impl Fn(&SignalPair) -> Vec<Complex64>) -> Result<(Vec<Frame>, Vec<Frame>)> {
    let tr = frames(split.train.input.samples(), &target(&split.train), cfg.frame_length);
    let va = frames(split.validation.input.samples(), &target(&split.validation), cfg.frame_length);
    if tr.is_empty() {
        return Err(TrainError::TooShort(split.train.len()));
    }
    if va.is_empty() {
        return Err(TrainError::TooShort(split.validation.len()));
    }
    Ok((tr, va))
}

/// Fits a GRU behavioral model mapping PA input features to PA output I/Q.
pub fn train_pa_model(split: &DatasetSplit, dims: GruDims, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (tr, va) = split_frames(split, cfg, |p| p.output.samples().to_vec())?;
    run(&PaFit, GruModel::init(dims, cfg.seed), None, &tr, &va, cfg)
}

/// Trains a DPD through the frozen PA model towards `gain * x`. With
/// `quant = Some((w, a))` the DPD is trained quantization-aware.
pub fn train_dpd(
    pa_model: &GruModel,
    split: &DatasetSplit,
    dims: GruDims,
    cfg: &TrainConfig,
    quant: Option<(u32, u32)>,
    gain: Complex64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if let Some((w, a)) = quant {
        for b in [w, a] {
            if !SUPPORTED_WIDTHS.contains(&b) {
                return Err(QuantError::UnsupportedWidth(b).into());
            }
        }
    }
    let (tr, va) = split_frames(split, cfg, |p| p.input.samples().iter().map(|&x| gain * x).collect())?;
    let model = GruModel::init(dims, cfg.seed.wrapping_add(1));
    let q = match quant {
        Some((w, a)) => {
            let calib: Vec<FeatureVector> = tr.iter().flat_map(|f| f.features.iter().copied()).take(CALIBRATION_SAMPLES).collect();
            Some(apply_mixed_precision(&model, w, a, &calib)?)
        }
        None => None,
    };
    run(&Cascade { pa: pa_model }, model, q, &tr, &va, cfg)
}

/// Seeded OFDM frame scaled to `drive` and passed through `pa`.
pub fn synthetic_dataset(ofdm: &OfdmConfig, sample_rate_hz: f64, drive: f64, pa: &PaSimModel) -> Result<(SignalPair, OfdmReference)> {
    let (x, reference) = generate_ofdm(ofdm, sample_rate_hz)?;
    let x = x.scaled(Complex64::new(drive, 0.0));
    let y = simulate_pa(pa, &x, None)?;
    Ok((SignalPair::new(x, y)?, reference))
}

/// Default 4 x 40 MHz 1024-QAM dataset at 640 MHz through the default PA.
pub fn default_dataset() -> Result<(SignalPair, OfdmReference)> {
    synthetic_dataset(&OfdmConfig::default(), 640e6, DEFAULT_DRIVE, &PaSimModel::default())
}

/// How the DPD stage is executed during evaluation.
#[derive(Clone, Copy, Debug)]
pub enum Predistorter<'a> {
    Bypass,
    Float(&'a GruModel),
    FakeQuant(&'a GruModel, &'a QuantState),
    FixedPoint(&'a FxpImage),
}

/// Runs the DPD over `x` from a zero state and clips to the PA's full scale.
pub fn predistort(dpd: Predistorter, x: &IqSignal) -> Result<IqSignal> {
    let feats = x.features();
    let u: Vec<[f64; 2]> = match dpd {
        Predistorter::Bypass => return Ok(x.clone()),
        Predistorter::Float(m) => m.forward_features(&feats, QuantMode::Float).outputs(),
        Predistorter::FakeQuant(m, q) => m.forward_features(&feats, QuantMode::Fake(q)).outputs(),
        Predistorter::FixedPoint(img) => fxp_gru_infer(img, &feats, FxpOptions::default())?.y,
    };
    let u = IqSignal::new(u.iter().map(|v| Complex64::new(v[0], v[1])).collect(), x.sample_rate_hz())?;
    Ok(clip_to_full_scale(&u, FULL_SCALE))
}

/// DPD -> simulated PA -> RF metrics on a test segment starting at frame
/// sample `start`; `gain * x` is the NMSE reference.
pub fn evaluate(
    dpd: Predistorter,
    pa: &PaSimModel,
    x: &IqSignal,
    gain: Complex64,
    reference: &OfdmReference,
    start: usize,
) -> Result<MetricsReport> {
    let u = predistort(dpd, x)?;
    let y = simulate_pa(pa, &u, None)?;
    let ideal: Vec<Complex64> = x.samples().iter().map(|&v| gain * v).collect();
    let plan = ChannelPlan::for_ofdm(&reference.config);
    Ok(evaluate_signal(&y, &ideal, reference, start, &plan)?)
}

/// Writes the run-directory artifacts.
pub fn write_run_dir(dir: &Path, config_snapshot: &str, outcome: &TrainOutcome, checkpoint: &Checkpoint, metrics: Option<&MetricsReport>) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), config_snapshot)?;
    fs::write(dir.join("loss_history.csv"), outcome.history_csv())?;
    checkpoint.save(&dir.join("checkpoint.json"))?;
    if let Some(m) = metrics {
        fs::write(dir.join("metrics.txt"), m.to_text())?;
    }
    Ok(())
}
