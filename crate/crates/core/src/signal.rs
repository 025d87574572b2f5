//! Baseband I/Q signals: generation, dataset I/O, splitting and featurization.
//!
//! Every other module consumes signals through [`IqSignal`] and features
//! through [`FeatureVector`], so the data layout is defined here once.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

/// Errors raised while building, loading or transforming signals.
#[derive(Debug, thiserror::Error)]
pub enum SignalError {
    #[error("signal is empty")]
    Empty,
    #[error("sample rate must be positive and finite, got {0}")]
    BadSampleRate(f64),
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("invalid OFDM configuration: {0}")]
    BadConfig(String),
    #[error(
        "band overflow: {n_channels} x {channel_bw_hz} Hz does not fit in half the sample rate ({sample_rate_hz} Hz)"
    )]
    BandOverflow {
        n_channels: usize,
        channel_bw_hz: f64,
        sample_rate_hz: f64,
    },
    #[error("invalid split fractions: {0}")]
    BadSplit(String),
    #[error("cannot normalize an all-zero signal")]
    AllZero,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

pub type Result<T> = std::result::Result<T, SignalError>;

/// A finite sequence of complex baseband samples at a fixed sample rate.
#[derive(Clone, Debug, PartialEq)]
pub struct IqSignal {
    samples: Vec<Complex64>,
    sample_rate_hz: f64,
}

impl IqSignal {
    pub fn new(samples: Vec<Complex64>, sample_rate_hz: f64) -> Result<Self> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(SignalError::BadSampleRate(sample_rate_hz));
        }
        if let Some(i) = samples.iter().position(|s| !(s.re.is_finite() && s.im.is_finite())) {
            return Err(SignalError::NonFinite(i));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn peak_amplitude(&self) -> f64 {
        self.samples.iter().map(|s| s.norm()).fold(0.0, f64::max)
    }

    pub fn mean_power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.samples.len() as f64
    }

    /// Peak-to-average power ratio in dB.
    pub fn papr_db(&self) -> f64 {
        let peak = self.peak_amplitude();
        10.0 * (peak * peak / self.mean_power()).log10()
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * factor).collect(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    /// Contiguous sub-range `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            samples: self.samples[start..end].to_vec(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    pub fn features(&self) -> Vec<FeatureVector> {
        self.samples.iter().map(|&s| FeatureVector::of(s)).collect()
    }
}

/// Per-timestep GRU input `[I, Q, |x|, |x|^3]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; 4]);

impl FeatureVector {
    pub const DIM: usize = 4;

    /// Feature vector of a sample already known to be finite.
    #[inline]
    pub fn of(x: Complex64) -> Self {
        let amp = x.norm();
        FeatureVector([x.re, x.im, amp, amp * amp * amp])
    }

    pub fn values(&self) -> &[f64; 4] {
        &self.0
    }
}

/// Full-precision feature extraction for one sample.
pub fn extract_features(x: Complex64) -> Result<FeatureVector> {
    if !(x.re.is_finite() && x.im.is_finite()) {
        return Err(SignalError::NonFinite(0));
    }
    Ok(FeatureVector::of(x))
}

/// Subcarriers per channel in the FFT grid; the channel raster.
pub const BINS_PER_CHANNEL: usize = 64;
/// Active subcarriers either side of each channel centre (the centre bin is unused).
pub const ACTIVE_HALF_WIDTH: i64 = 26;
/// Length of the raised-cosine ramp at each symbol edge, as a fraction of the FFT size.
const RAMP_FRACTION: f64 = 3.0 / 32.0;

/// Multi-channel OFDM test-signal configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfdmConfig {
    pub n_channels: usize,
    pub channel_bw_hz: f64,
    pub qam_order: u32,
    pub n_symbols: usize,
    pub seed: u64,
}

impl Default for OfdmConfig {
    fn default() -> Self {
        Self {
            n_channels: 4,
            channel_bw_hz: 40e6,
            qam_order: 1024,
            n_symbols: 128,
            seed: 2024,
        }
    }
}

impl OfdmConfig {
    pub fn validate(&self, sample_rate_hz: f64) -> Result<()> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(SignalError::BadSampleRate(sample_rate_hz));
        }
        if self.n_channels == 0 || self.n_symbols == 0 {
            return Err(SignalError::BadConfig(
                "n_channels and n_symbols must be positive".into(),
            ));
        }
        if !(self.channel_bw_hz.is_finite() && self.channel_bw_hz > 0.0) {
            return Err(SignalError::BadConfig("channel_bw_hz must be positive".into()));
        }
        if ![4, 16, 64, 256, 1024].contains(&self.qam_order) {
            return Err(SignalError::BadConfig(format!(
                "qam_order {} not in {{4, 16, 64, 256, 1024}}",
                self.qam_order
            )));
        }
        if self.n_channels as f64 * self.channel_bw_hz > sample_rate_hz / 2.0 + 1e-6 {
            return Err(SignalError::BandOverflow {
                n_channels: self.n_channels,
                channel_bw_hz: self.channel_bw_hz,
                sample_rate_hz,
            });
        }
        let fft = sample_rate_hz / self.channel_bw_hz * BINS_PER_CHANNEL as f64;
        if (fft - fft.round()).abs() > 1e-6 || fft.round() < 8.0 {
            return Err(SignalError::BadConfig(format!(
                "sample rate / channel bandwidth must give an integer FFT size (got {fft})"
            )));
        }
        Ok(())
    }

    pub fn fft_size(&self, sample_rate_hz: f64) -> usize {
        (sample_rate_hz / self.channel_bw_hz * BINS_PER_CHANNEL as f64).round() as usize
    }

    pub fn cp_len(&self, sample_rate_hz: f64) -> usize {
        self.fft_size(sample_rate_hz) / 8
    }

    pub fn symbol_len(&self, sample_rate_hz: f64) -> usize {
        self.fft_size(sample_rate_hz) + self.cp_len(sample_rate_hz)
    }

    /// Centre bin of each channel, on a uniform grid centred at DC.
    pub fn channel_center_bins(&self) -> Vec<i64> {
        let n = self.n_channels as i64;
        // (i - (n-1)/2) * 64, computed in half-bins to stay integral
        (0..n)
            .map(|i| (2 * i - (n - 1)) * BINS_PER_CHANNEL as i64 / 2)
            .collect()
    }

    /// Active subcarrier offsets relative to the channel centre.
    pub fn subcarrier_offsets() -> Vec<i64> {
        (-ACTIVE_HALF_WIDTH..=ACTIVE_HALF_WIDTH)
            .filter(|&k| k != 0)
            .collect()
    }
}

/// Transmitted symbols of a generated OFDM frame, kept for EVM demodulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OfdmReference {
    pub config: OfdmConfig,
    pub sample_rate_hz: f64,
    /// `symbols[channel][symbol][subcarrier]`
    pub symbols: Vec<Vec<Vec<Complex64>>>,
    /// Factor applied to the raw modulator output to reach unit peak amplitude.
    pub peak_scale: f64,
}

impl OfdmReference {
    pub fn fft_size(&self) -> usize {
        self.config.fft_size(self.sample_rate_hz)
    }

    pub fn cp_len(&self) -> usize {
        self.config.cp_len(self.sample_rate_hz)
    }

    pub fn symbol_len(&self) -> usize {
        self.config.symbol_len(self.sample_rate_hz)
    }

    pub fn frame_len(&self) -> usize {
        self.symbol_len() * self.config.n_symbols
    }

    /// Re-synthesizes the clean unit-peak waveform.
    pub fn waveform(&self) -> Vec<Complex64> {
        let mut w = modulate(&self.config, self.sample_rate_hz, &self.symbols);
        for s in &mut w {
            *s *= self.peak_scale;
        }
        w
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).expect("reference serializes");
        fs::write(path, text).map_err(|source| SignalError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| SignalError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| SignalError::Parse {
            line: e.line(),
            msg: e.to_string(),
        })
    }
}

/// Square Gray-coded QAM constellation with unit average energy.
pub fn qam_constellation(order: u32) -> Vec<Complex64> {
    let m = (order as f64).sqrt().round() as i64;
    let norm = (2.0 * (order as f64 - 1.0) / 3.0).sqrt();
    let level = |g: i64| {
        // Gray index -> amplitude level
        let mut b = g;
        let mut shift = g >> 1;
        while shift != 0 {
            b ^= shift;
            shift >>= 1;
        }
        (2 * b - (m - 1)) as f64 / norm
    };
    let mut pts = Vec::with_capacity(order as usize);
    for i in 0..m {
        for q in 0..m {
            pts.push(Complex64::new(level(i), level(q)));
        }
    }
    pts
}

fn raised_cosine_ramp(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 * (1.0 - (PI * (n as f64 + 0.5) / len as f64).cos()))
        .collect()
}

/// Windowed CP-OFDM synthesis of all channels; output is not amplitude-normalized.
fn modulate(cfg: &OfdmConfig, sample_rate_hz: f64, symbols: &[Vec<Vec<Complex64>>]) -> Vec<Complex64> {
    let nfft = cfg.fft_size(sample_rate_hz);
    let cp = cfg.cp_len(sample_rate_hz);
    let ramp_len = ((nfft as f64 * RAMP_FRACTION).round() as usize).clamp(1, cp);
    let sym_len = nfft + cp;
    let total = sym_len * cfg.n_symbols;
    let ramp = raised_cosine_ramp(ramp_len);
    let offsets = OfdmConfig::subcarrier_offsets();
    let centers = cfg.channel_center_bins();
    let ifft = FftPlanner::new().plan_fft_inverse(nfft);

    let mut out = vec![Complex64::new(0.0, 0.0); total];
    let mut body = vec![Complex64::new(0.0, 0.0); nfft];
    for (ch, &center) in centers.iter().enumerate() {
        for (s, syms) in symbols[ch].iter().enumerate() {
            body.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
            for (&k, &v) in offsets.iter().zip(syms) {
                body[k.rem_euclid(nfft as i64) as usize] = v;
            }
            ifft.process(&mut body);
            let start = s * sym_len;
            // extended symbol: cyclic prefix, body, then a cyclic suffix overlapping the next symbol
            for n in 0..(sym_len + ramp_len) {
                let src = (n + nfft - cp) % nfft;
                let mut v = body[src] / nfft as f64;
                if n < ramp_len {
                    v *= ramp[n];
                } else if n >= sym_len {
                    v *= ramp[ramp_len - 1 - (n - sym_len)];
                }
                let t = start + n;
                let phase = 2.0 * PI * ((center * t as i64).rem_euclid(nfft as i64)) as f64 / nfft as f64;
                out[t % total] += v * Complex64::from_polar(1.0, phase);
            }
        }
    }
    out
}

/// Generates a seeded multi-channel OFDM frame normalized to unit peak amplitude.
pub fn generate_ofdm(cfg: &OfdmConfig, sample_rate_hz: f64) -> Result<(IqSignal, OfdmReference)> {
    cfg.validate(sample_rate_hz)?;
    let constellation = qam_constellation(cfg.qam_order);
    let n_sc = OfdmConfig::subcarrier_offsets().len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let symbols: Vec<Vec<Vec<Complex64>>> = (0..cfg.n_channels)
        .map(|_| {
            (0..cfg.n_symbols)
                .map(|_| {
                    (0..n_sc)
                        .map(|_| constellation[rng.gen_range(0..constellation.len())])
                        .collect()
                })
                .collect()
        })
        .collect();
    let raw = modulate(cfg, sample_rate_hz, &symbols);
    let peak = raw.iter().map(|s| s.norm()).fold(0.0, f64::max);
    let peak_scale = 1.0 / peak;
    let samples = raw.into_iter().map(|s| s * peak_scale).collect();
    let reference = OfdmReference {
        config: cfg.clone(),
        sample_rate_hz,
        symbols,
        peak_scale,
    };
    Ok((IqSignal::new(samples, sample_rate_hz)?, reference))
}

/// A time-aligned PA input/output pair.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalPair {
    pub input: IqSignal,
    pub output: IqSignal,
    /// Index of the first sample within the original sequence.
    pub start: usize,
}

impl SignalPair {
    pub fn new(input: IqSignal, output: IqSignal) -> Result<Self> {
        if input.len() != output.len() {
            return Err(SignalError::LengthMismatch(input.len(), output.len()));
        }
        Ok(Self {
            input,
            output,
            start: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.input.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input.is_empty()
    }
}

/// Contiguous train/validation/test segments.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub train: SignalPair,
    pub validation: SignalPair,
    pub test: SignalPair,
    pub split_fractions: [f64; 3],
}

/// Splits a pair into contiguous time-ordered segments; train and validation
/// take `floor(N * fraction)` samples and the test segment takes the rest.
pub fn split_dataset(data: &SignalPair, fractions: [f64; 3]) -> Result<DatasetSplit> {
    if fractions.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(SignalError::BadSplit(format!(
            "fractions must be positive, got {fractions:?}"
        )));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(SignalError::BadSplit(format!("fractions sum to {sum}, not 1")));
    }
    let n = data.len();
    // the tiny bias keeps exact products such as 491520 * 0.6 from flooring one short
    let take = |f: f64| ((n as f64 * f) * (1.0 + 1e-12)).floor() as usize;
    let n_train = take(fractions[0]);
    let n_val = take(fractions[1]).min(n - n_train);
    let bounds = [
        (0, n_train),
        (n_train, n_train + n_val),
        (n_train + n_val, n),
    ];
    let seg = |(a, b): (usize, usize)| SignalPair {
        input: data.input.slice(a, b),
        output: data.output.slice(a, b),
        start: data.start + a,
    };
    Ok(DatasetSplit {
        train: seg(bounds[0]),
        validation: seg(bounds[1]),
        test: seg(bounds[2]),
        split_fractions: fractions,
    })
}

/// Peak-amplitude scale factors; `raw = normalized * scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormScales {
    pub input: f64,
    pub output: f64,
}

/// Scales each signal to unit peak amplitude.
pub fn normalize_pair(input: &IqSignal, output: &IqSignal) -> Result<(IqSignal, IqSignal, NormScales)> {
    if input.is_empty() || output.is_empty() {
        return Err(SignalError::Empty);
    }
    let pi = input.peak_amplitude();
    let po = output.peak_amplitude();
    if pi == 0.0 || po == 0.0 {
        return Err(SignalError::AllZero);
    }
    Ok((
        input.scaled(Complex64::new(1.0 / pi, 0.0)),
        output.scaled(Complex64::new(1.0 / po, 0.0)),
        NormScales {
            input: pi,
            output: po,
        },
    ))
}

/// Contents of a dataset CSV: the PA input and, when present, the PA output.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub input: IqSignal,
    pub output: Option<IqSignal>,
}

impl Dataset {
    pub fn pair(&self) -> Option<SignalPair> {
        self.output.as_ref().map(|o| SignalPair {
            input: self.input.clone(),
            output: o.clone(),
            start: 0,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetMeta {
    format: String,
    sample_rate_hz: f64,
}

const DATASET_FORMAT: &str = "mpdpd-dataset-v1";
const DATASET_HEADER: &str = "I_in,Q_in,I_out,Q_out";

/// Sidecar file carrying the sample rate of a dataset CSV.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    let mut name = csv.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    csv.with_file_name(name)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SignalError + '_ {
    move |source| SignalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `I_in,Q_in,I_out,Q_out` rows plus the sample-rate sidecar.
/// Output columns are left empty when `output` is `None`.
pub fn save_dataset(path: &Path, input: &IqSignal, output: Option<&IqSignal>) -> Result<()> {
    if let Some(o) = output {
        if o.len() != input.len() {
            return Err(SignalError::LengthMismatch(input.len(), o.len()));
        }
    }
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = std::io::BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "{DATASET_HEADER}")?;
        for (i, x) in input.samples().iter().enumerate() {
            match output {
                Some(o) => {
                    let y = o.samples()[i];
                    writeln!(w, "{:e},{:e},{:e},{:e}", x.re, x.im, y.re, y.im)?
                }
                None => writeln!(w, "{:e},{:e},,", x.re, x.im)?,
            }
        }
        w.flush()
    };
    write().map_err(io_err(path))?;
    let meta = DatasetMeta {
        format: DATASET_FORMAT.into(),
        sample_rate_hz: input.sample_rate_hz(),
    };
    let side = sidecar_path(path);
    fs::write(&side, serde_json::to_string_pretty(&meta).expect("meta serializes"))
        .map_err(io_err(&side))
}

/// Reads a dataset CSV and its sample-rate sidecar.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let side = sidecar_path(path);
    let meta_text = fs::read_to_string(&side).map_err(io_err(&side))?;
    let meta: DatasetMeta = serde_json::from_str(&meta_text).map_err(|e| SignalError::Parse {
        line: e.line(),
        msg: format!("{}: {e}", side.display()),
    })?;
    if meta.format != DATASET_FORMAT {
        return Err(SignalError::Parse {
            line: 1,
            msg: format!("{}: unknown format tag {:?}", side.display(), meta.format),
        });
    }
    let file = fs::File::open(path).map_err(io_err(path))?;
    parse_dataset(BufReader::new(file), meta.sample_rate_hz)
}

fn parse_dataset(reader: impl BufRead, sample_rate_hz: f64) -> Result<Dataset> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(h) => h.map_err(|e| SignalError::Parse {
            line: 1,
            msg: e.to_string(),
        })?,
        None => {
            return Err(SignalError::Parse {
                line: 1,
                msg: "missing header".into(),
            })
        }
    };
    if header.trim() != DATASET_HEADER {
        return Err(SignalError::Parse {
            line: 1,
            msg: format!("expected header `{DATASET_HEADER}`, found `{}`", header.trim()),
        });
    }
    let mut input = Vec::new();
    let mut output = Vec::new();
    let mut has_output: Option<bool> = None;
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line.map_err(|e| SignalError::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(SignalError::Parse {
                line: line_no,
                msg: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let num = |s: &str, col: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| SignalError::Parse {
                    line: line_no,
                    msg: format!("column {col}: not a finite number: {s:?}"),
                })
        };
        input.push(Complex64::new(num(fields[0], "I_in")?, num(fields[1], "Q_in")?));
        let row_has_output = !(fields[2].is_empty() && fields[3].is_empty());
        match has_output {
            None => has_output = Some(row_has_output),
            Some(prev) if prev != row_has_output => {
                return Err(SignalError::Parse {
                    line: line_no,
                    msg: "row count mismatch: output columns present on some rows only".into(),
                })
            }
            _ => {}
        }
        if row_has_output {
            output.push(Complex64::new(num(fields[2], "I_out")?, num(fields[3], "Q_out")?));
        }
    }
    if input.is_empty() {
        return Err(SignalError::Empty);
    }
    let input = IqSignal::new(input, sample_rate_hz)?;
    let output = if has_output == Some(true) {
        Some(IqSignal::new(output, sample_rate_hz)?)
    } else {
        None
    };
    Ok(Dataset { input, output })
}

impl fmt::Display for FeatureVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [i, q, a, a3] = self.0;
        write!(f, "[{i}, {q}, {a}, {a3}]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn features_worked_examples() {
        assert_eq!(extract_features(c(1.0, 0.0)).unwrap().0, [1.0, 0.0, 1.0, 1.0]);
        assert_eq!(extract_features(c(0.0, 0.0)).unwrap().0, [0.0; 4]);
        assert_eq!(extract_features(c(3.0, 4.0)).unwrap().0, [3.0, 4.0, 5.0, 125.0]);
        assert!(extract_features(c(f64::NAN, 0.0)).is_err());
        assert!(extract_features(c(0.0, f64::INFINITY)).is_err());
    }

    proptest! {
        #[test]
        fn features_on_real_axis_are_exact(a in -100.0f64..100.0) {
            let f = extract_features(c(a, 0.0)).unwrap();
            prop_assert_eq!(f.0, [a, 0.0, a.abs(), a.abs().powi(3)]);
        }

        #[test]
        fn feature_invariants(re in -10.0f64..10.0, im in -10.0f64..10.0) {
            let [i, q, a, a3] = extract_features(c(re, im)).unwrap().0;
            prop_assert!(a >= 0.0 && a3 >= 0.0);
            let tol = 1e-9 * (i * i + q * q).max(1e-300);
            prop_assert!((a * a - (i * i + q * q)).abs() <= tol);
            prop_assert!((a3 - a * a * a).abs() <= 1e-9 * a3.max(1e-300));
        }

        #[test]
        fn split_then_concat_is_identity(n in 3usize..400, f0 in 0.1f64..0.8) {
            let f1 = (1.0 - f0) / 2.0;
            let samples: Vec<_> = (0..n).map(|i| c(i as f64, -(i as f64))).collect();
            let sig = IqSignal::new(samples.clone(), 1.0).unwrap();
            let pair = SignalPair::new(sig.clone(), sig).unwrap();
            let split = split_dataset(&pair, [f0, f1, 1.0 - f0 - f1]).unwrap();
            let mut joined = split.train.input.samples().to_vec();
            joined.extend_from_slice(split.validation.input.samples());
            joined.extend_from_slice(split.test.input.samples());
            prop_assert_eq!(joined, samples);
            prop_assert_eq!(split.validation.start, split.train.len());
        }
    }

    fn pair_of_len(n: usize) -> SignalPair {
        let sig = IqSignal::new(vec![c(1.0, 0.0); n], 1.0).unwrap();
        SignalPair::new(sig.clone(), sig).unwrap()
    }

    #[test]
    fn split_lengths() {
        let lens = |n| {
            let s = split_dataset(&pair_of_len(n), [0.6, 0.2, 0.2]).unwrap();
            (s.train.len(), s.validation.len(), s.test.len())
        };
        assert_eq!(lens(10), (6, 2, 2));
        assert_eq!(lens(11), (6, 2, 3));
        assert_eq!(lens(491_520), (294_912, 98_304, 98_304));
    }

    #[test]
    fn split_rejects_bad_fractions() {
        let p = pair_of_len(10);
        assert!(split_dataset(&p, [0.6, 0.4, 0.0]).is_err());
        assert!(split_dataset(&p, [0.7, -0.1, 0.4]).is_err());
        assert!(split_dataset(&p, [0.6, 0.2, 0.3]).is_err());
    }

    #[test]
    fn normalize_to_unit_peak() {
        let a = IqSignal::new(vec![c(0.5, 0.0), c(0.0, -2.0)], 1.0).unwrap();
        let b = IqSignal::new(vec![c(3.0, 4.0), c(1.0, 0.0)], 1.0).unwrap();
        let (na, nb, s) = normalize_pair(&a, &b).unwrap();
        assert_eq!(na.peak_amplitude(), 1.0);
        assert_eq!(nb.peak_amplitude(), 1.0);
        assert_eq!(s, NormScales { input: 2.0, output: 5.0 });
        let zero = IqSignal::new(vec![c(0.0, 0.0); 3], 1.0).unwrap();
        assert!(matches!(normalize_pair(&zero, &b), Err(SignalError::AllZero)));
    }

    #[test]
    fn ofdm_is_deterministic() {
        let cfg = OfdmConfig {
            n_channels: 1,
            channel_bw_hz: 40e6,
            qam_order: 4,
            n_symbols: 1,
            seed: 7,
        };
        let (a, ra) = generate_ofdm(&cfg, 640e6).unwrap();
        let (b, rb) = generate_ofdm(&cfg, 640e6).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert_eq!(a.len(), 1152);
        assert!((a.peak_amplitude() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ofdm_band_overflow_rejected() {
        let cfg = OfdmConfig {
            n_channels: 9,
            ..OfdmConfig::default()
        };
        assert!(matches!(
            generate_ofdm(&cfg, 640e6),
            Err(SignalError::BandOverflow { .. })
        ));
        let cfg = OfdmConfig {
            qam_order: 32,
            ..OfdmConfig::default()
        };
        assert!(matches!(generate_ofdm(&cfg, 640e6), Err(SignalError::BadConfig(_))));
    }

    #[test]
    fn channel_grid_is_centred() {
        let cfg = OfdmConfig::default();
        assert_eq!(cfg.channel_center_bins(), vec![-96, -32, 32, 96]);
        assert_eq!(cfg.fft_size(640e6), 1024);
        // outermost active subcarrier sits below 80 MHz
        let edge_hz = (96 + ACTIVE_HALF_WIDTH) as f64 * 640e6 / 1024.0;
        assert!(edge_hz < 80e6);
    }

    #[test]
    fn papr_in_expected_range() {
        let cfg = OfdmConfig {
            n_symbols: 64,
            ..OfdmConfig::default()
        };
        let (sig, _) = generate_ofdm(&cfg, 640e6).unwrap();
        let papr = sig.papr_db();
        assert!((9.0..=12.0).contains(&papr), "PAPR {papr}");
    }

    #[test]
    fn qam_has_unit_energy_and_gray_neighbours() {
        for order in [4, 16, 64, 256, 1024] {
            let pts = qam_constellation(order);
            assert_eq!(pts.len(), order as usize);
            let e = pts.iter().map(|p| p.norm_sqr()).sum::<f64>() / order as f64;
            assert!((e - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dataset_csv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let x = IqSignal::new(vec![c(0.1, -0.2), c(0.3, 0.4)], 640e6).unwrap();
        let y = IqSignal::new(vec![c(1.5, 2.5), c(-3.0, 1e-9)], 640e6).unwrap();
        save_dataset(&path, &x, Some(&y)).unwrap();
        let d = load_dataset(&path).unwrap();
        assert_eq!(d.input, x);
        assert_eq!(d.output.as_ref(), Some(&y));

        save_dataset(&path, &x, None).unwrap();
        assert!(load_dataset(&path).unwrap().output.is_none());

        let bad = |body: &str| parse_dataset(body.as_bytes(), 1.0).unwrap_err();
        assert!(matches!(bad("I,Q\n1,2,3,4\n"), SignalError::Parse { line: 1, .. }));
        assert!(matches!(
            bad("I_in,Q_in,I_out,Q_out\n1,2,3,4\n1,x,3,4\n"),
            SignalError::Parse { line: 3, .. }
        ));
        assert!(matches!(
            bad("I_in,Q_in,I_out,Q_out\n1,2,3,4\n1,2,,\n"),
            SignalError::Parse { line: 3, .. }
        ));
        assert!(matches!(bad(""), SignalError::Parse { line: 1, .. }));
    }
}
