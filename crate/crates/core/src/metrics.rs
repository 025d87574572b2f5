//! RF metrics from baseband I/Q: Welch PSD, ACPR, EVM and NMSE.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::signal::{IqSignal, OfdmConfig, OfdmReference};

/// Lowest ACPR / NMSE value reported; anything below is flagged as floor-limited.
pub const FLOOR_DB: f64 = -300.0;
/// Minimum normalized correlation accepted when aligning a received frame.
pub const ALIGN_THRESHOLD: f64 = 0.5;
/// Largest sample lag searched by the EVM aligner.
pub const MAX_LAG: i64 = 8;
pub const DEFAULT_SEGMENT: usize = 4096;
pub const DEFAULT_OVERLAP: f64 = 0.5;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("signal has {len} samples, need at least {need}")]
    TooShort { len: usize, need: usize },
    #[error("invalid PSD settings: {0}")]
    BadSettings(String),
    #[error("invalid channel plan: {0}")]
    BadPlan(String),
    #[error("no power in the main band")]
    NoMainPower,
    #[error("alignment failed: correlation peak {0:.3} below threshold")]
    Alignment(f64),
    #[error("signals differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("reference signal has zero power")]
    ZeroReference,
}

pub type Result<T> = std::result::Result<T, MetricsError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Window {
    Hann,
    Rectangular,
}

impl Window {
    fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            // periodic Hann
            Window::Hann => (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect(),
            Window::Rectangular => vec![1.0; n],
        }
    }
}

/// Averaged periodogram, fftshifted so frequencies run from `-fs/2` upward.
#[derive(Clone, Debug, PartialEq)]
pub struct Psd {
    pub freqs_hz: Vec<f64>,
    /// Power per Hz.
    pub density: Vec<f64>,
    pub bin_hz: f64,
    pub segments: usize,
}

impl Psd {
    pub fn total_power(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.bin_hz
    }

    /// Power integrated over `[lo, hi]`, counting partial bin overlap.
    pub fn band_power(&self, lo: f64, hi: f64) -> f64 {
        let half = self.bin_hz / 2.0;
        self.freqs_hz
            .iter()
            .zip(&self.density)
            .map(|(&f, &d)| {
                let overlap = (hi.min(f + half) - lo.max(f - half)).max(0.0);
                d * overlap
            })
            .sum()
    }

    pub fn peak_bin(&self) -> usize {
        let mut best = 0;
        for (i, &d) in self.density.iter().enumerate() {
            if d > self.density[best] {
                best = i;
            }
        }
        best
    }

    /// `(freq_hz, power_db)` pairs, power per bin in dB.
    pub fn db_pairs(&self) -> Vec<(f64, f64)> {
        self.freqs_hz
            .iter()
            .zip(&self.density)
            .map(|(&f, &d)| (f, 10.0 * (d * self.bin_hz).max(1e-30).log10()))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("freq_hz,power_db\n");
        for (f, p) in self.db_pairs() {
            writeln!(s, "{f},{p:.6}").unwrap();
        }
        s
    }
}

/// Welch PSD estimate. The result is rescaled so that the integrated density
/// equals the time-domain mean power of `x`.
pub fn compute_psd(x: &IqSignal, segment_length: usize, overlap: f64, window: Window) -> Result<Psd> {
    if segment_length < 2 {
        return Err(MetricsError::BadSettings(format!("segment length {segment_length}")));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(MetricsError::BadSettings(format!("overlap {overlap} outside [0, 1)")));
    }
    let n = x.len();
    if n < segment_length {
        return Err(MetricsError::TooShort {
            len: n,
            need: segment_length,
        });
    }
    let hop = ((segment_length as f64 * (1.0 - overlap)).round() as usize).max(1);
    let segments = (n - segment_length) / hop + 1;
    let w = window.coefficients(segment_length);
    let fft = FftPlanner::new().plan_fft_forward(segment_length);
    let mut acc = vec![0.0; segment_length];
    let mut buf = vec![Complex64::new(0.0, 0.0); segment_length];
    let samples = x.samples();
    for k in 0..segments {
        let seg = &samples[k * hop..k * hop + segment_length];
        for ((b, &s), &wi) in buf.iter_mut().zip(seg).zip(&w) {
            *b = s * wi;
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
    }
    let fs = x.sample_rate_hz();
    let bin_hz = fs / segment_length as f64;
    let half = segment_length / 2;
    // fftshift: bin (i + half) mod n holds frequency (i - half) * df
    let mut density: Vec<f64> = (0..segment_length).map(|i| acc[(i + half) % segment_length]).collect();
    let freqs_hz = (0..segment_length).map(|i| (i as f64 - half as f64) * bin_hz).collect();
    let raw_total: f64 = density.iter().sum::<f64>() * bin_hz;
    let target = x.mean_power();
    let scale = if raw_total > 0.0 { target / raw_total } else { 0.0 };
    density.iter_mut().for_each(|d| *d *= scale);
    Ok(Psd {
        freqs_hz,
        density,
        bin_hz,
        segments,
    })
}

/// Main and adjacent integration bands for ACPR.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelPlan {
    pub main_band_hz: (f64, f64),
    pub adjacent_left_hz: (f64, f64),
    pub adjacent_right_hz: (f64, f64),
}

impl Default for ChannelPlan {
    fn default() -> Self {
        Self::centered(160e6)
    }
}

impl ChannelPlan {
    /// Main band of `width` centered at DC with equal-width neighbours on both sides.
    pub fn centered(width: f64) -> Self {
        let h = width / 2.0;
        Self {
            main_band_hz: (-h, h),
            adjacent_left_hz: (-3.0 * h, -h),
            adjacent_right_hz: (h, 3.0 * h),
        }
    }

    /// Plan covering the occupied bandwidth of an OFDM configuration.
    pub fn for_ofdm(cfg: &OfdmConfig) -> Self {
        Self::centered(cfg.n_channels as f64 * cfg.channel_bw_hz)
    }

    pub fn validate(&self, sample_rate_hz: f64) -> Result<()> {
        let (m, l, r) = (self.main_band_hz, self.adjacent_left_hz, self.adjacent_right_hz);
        for (name, b) in [("main", m), ("left", l), ("right", r)] {
            if !(b.0 < b.1) {
                return Err(MetricsError::BadPlan(format!("{name} band {b:?} is empty")));
            }
            if b.0 < -sample_rate_hz / 2.0 - 1e-6 || b.1 > sample_rate_hz / 2.0 + 1e-6 {
                return Err(MetricsError::BadPlan(format!("{name} band {b:?} exceeds Nyquist")));
            }
        }
        let width = m.1 - m.0;
        let tol = 1e-9 * width;
        if ((l.1 - l.0) - width).abs() > tol || ((r.1 - r.0) - width).abs() > tol {
            return Err(MetricsError::BadPlan("adjacent bands must match the main band width".into()));
        }
        if (l.1 - m.0).abs() > tol || (r.0 - m.1).abs() > tol {
            return Err(MetricsError::BadPlan("adjacent bands must touch the main band".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Acpr {
    pub left_dbc: f64,
    pub right_dbc: f64,
    /// At least one side hit [`FLOOR_DB`].
    pub floor_limited: bool,
}

fn db_with_floor(ratio: f64) -> (f64, bool) {
    let db = 10.0 * ratio.log10();
    if db.is_finite() && db > FLOOR_DB {
        (db, false)
    } else {
        (FLOOR_DB, true)
    }
}

pub fn compute_acpr(psd: &Psd, plan: &ChannelPlan) -> Result<Acpr> {
    plan.validate(psd.bin_hz * psd.density.len() as f64)?;
    let main = psd.band_power(plan.main_band_hz.0, plan.main_band_hz.1);
    if !(main > 0.0) {
        return Err(MetricsError::NoMainPower);
    }
    let (left_dbc, fl) = db_with_floor(psd.band_power(plan.adjacent_left_hz.0, plan.adjacent_left_hz.1) / main);
    let (right_dbc, fr) = db_with_floor(psd.band_power(plan.adjacent_right_hz.0, plan.adjacent_right_hz.1) / main);
    Ok(Acpr {
        left_dbc,
        right_dbc,
        floor_limited: fl || fr,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstellationPoint {
    pub channel: usize,
    pub re: f64,
    pub im: f64,
    pub ref_re: f64,
    pub ref_im: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvmResult {
    pub evm_db: f64,
    pub lag: i64,
    pub symbols_used: usize,
    /// Equalized points and their references.
    pub constellation: Vec<ConstellationPoint>,
}

impl EvmResult {
    pub fn constellation_csv(&self) -> String {
        let mut s = String::from("channel,re,im,ref_re,ref_im\n");
        for p in &self.constellation {
            writeln!(s, "{},{},{},{},{}", p.channel, p.re, p.im, p.ref_re, p.ref_im).unwrap();
        }
        s
    }
}

/// Normalized cross-correlation peak between `rx` and the reference waveform
/// around the nominal position `start`.
fn align(rx: &[Complex64], wave: &[Complex64], start: usize) -> (i64, f64) {
    let n = rx.len().min(4096);
    let mut best = (0, -1.0);
    for lag in -MAX_LAG..=MAX_LAG {
        let (mut c, mut er, mut ew) = (Complex64::new(0.0, 0.0), 0.0, 0.0);
        for (i, r) in rx[..n].iter().enumerate() {
            let j = start as i64 + i as i64 + lag;
            if j < 0 || j as usize >= wave.len() {
                continue;
            }
            let w = wave[j as usize];
            c += r * w.conj();
            er += r.norm_sqr();
            ew += w.norm_sqr();
        }
        let rho = if er > 0.0 && ew > 0.0 { c.norm() / (er * ew).sqrt() } else { 0.0 };
        if rho > best.1 {
            best = (lag, rho);
        }
    }
    best
}

/// EVM of `received`, whose first sample corresponds to frame sample `start`
/// of the reference waveform. Every OFDM symbol fully inside the received
/// span is demodulated; each channel gets one least-squares complex tap.
pub fn compute_evm(received: &IqSignal, reference: &OfdmReference, start: usize) -> Result<EvmResult> {
    let nfft = reference.fft_size();
    let cp = reference.cp_len();
    let sym_len = reference.symbol_len();
    let rx = received.samples();
    let wave = reference.waveform();
    let (lag, rho) = align(rx, &wave, start);
    if rho < ALIGN_THRESHOLD {
        return Err(MetricsError::Alignment(rho));
    }
    // received index i holds frame sample start + i + lag
    let first = start as i64 + lag;
    let last = first + rx.len() as i64;
    let symbols: Vec<usize> = (0..reference.config.n_symbols)
        .filter(|&s| {
            let a = (s * sym_len + cp) as i64;
            a >= first && a + nfft as i64 <= last
        })
        .collect();
    if symbols.is_empty() {
        return Err(MetricsError::TooShort {
            len: rx.len(),
            need: sym_len,
        });
    }
    let fft = FftPlanner::new().plan_fft_forward(nfft);
    let offsets = OfdmConfig::subcarrier_offsets();
    let centers = reference.config.channel_center_bins();
    let n_ch = centers.len();
    // per channel: (received, reference) pairs
    let mut pairs: Vec<Vec<(Complex64, Complex64)>> = vec![Vec::new(); n_ch];
    let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
    for &s in &symbols {
        let a = s * sym_len + cp;
        let i0 = (a as i64 - first) as usize;
        buf.copy_from_slice(&rx[i0..i0 + nfft]);
        fft.process(&mut buf);
        for (ch, &c) in centers.iter().enumerate() {
            // undo the channel shift's phase at the body start
            let rot = Complex64::from_polar(
                1.0,
                -2.0 * PI * ((c * a as i64).rem_euclid(nfft as i64)) as f64 / nfft as f64,
            );
            for (k, &off) in offsets.iter().enumerate() {
                let bin = (c + off).rem_euclid(nfft as i64) as usize;
                pairs[ch].push((buf[bin] * rot, reference.symbols[ch][s][k]));
            }
        }
    }
    let mut err = 0.0;
    let mut total = 0.0;
    let mut constellation = Vec::new();
    for (ch, p) in pairs.iter().enumerate() {
        let num: Complex64 = p.iter().map(|(r, x)| r * x.conj()).sum();
        let den: f64 = p.iter().map(|(_, x)| x.norm_sqr()).sum();
        let tap = num / den;
        for &(r, x) in p {
            let eq = if tap.norm() > 0.0 { r / tap } else { Complex64::new(0.0, 0.0) };
            err += (eq - x).norm_sqr();
            total += x.norm_sqr();
            constellation.push(ConstellationPoint {
                channel: ch,
                re: eq.re,
                im: eq.im,
                ref_re: x.re,
                ref_im: x.im,
            });
        }
    }
    Ok(EvmResult {
        evm_db: db_with_floor(err / total).0,
        lag,
        symbols_used: symbols.len(),
        constellation,
    })
}

/// `10 log10(sum |y - ref|^2 / sum |ref|^2)`, floored at [`FLOOR_DB`].
pub fn compute_nmse(y: &[Complex64], reference: &[Complex64]) -> Result<f64> {
    if y.len() != reference.len() {
        return Err(MetricsError::LengthMismatch(y.len(), reference.len()));
    }
    let mut err = 0.0;
    let mut pow = 0.0;
    for (a, b) in y.iter().zip(reference) {
        err += (a - b).norm_sqr();
        pow += b.norm_sqr();
    }
    if pow == 0.0 {
        return Err(MetricsError::ZeroReference);
    }
    Ok(db_with_floor(err / pow).0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub acpr_left_dbc: f64,
    pub acpr_right_dbc: f64,
    pub acpr_floor_limited: bool,
    pub evm_db: f64,
    pub nmse_db: f64,
    pub psd: Vec<(f64, f64)>,
}

impl MetricsReport {
    pub fn is_finite(&self) -> bool {
        [self.acpr_left_dbc, self.acpr_right_dbc, self.evm_db, self.nmse_db]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Plain `key = value` report with fixed formatting.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "acpr_left_dbc = {:.4}", self.acpr_left_dbc).unwrap();
        writeln!(s, "acpr_right_dbc = {:.4}", self.acpr_right_dbc).unwrap();
        writeln!(s, "acpr_floor_limited = {}", self.acpr_floor_limited).unwrap();
        writeln!(s, "evm_db = {:.4}", self.evm_db).unwrap();
        writeln!(s, "nmse_db = {:.4}", self.nmse_db).unwrap();
        writeln!(s, "psd_bins = {}", self.psd.len()).unwrap();
        s
    }
}

/// ACPR, EVM and NMSE of `received` against the clean frame.
///
/// `ideal` is the target for NMSE (for a linearized PA, the input times the
/// target gain); the received PSD uses the default Welch settings.
pub fn evaluate_signal(
    received: &IqSignal,
    ideal: &[Complex64],
    reference: &OfdmReference,
    start: usize,
    plan: &ChannelPlan,
) -> Result<MetricsReport> {
    let seg = DEFAULT_SEGMENT.min(received.len());
    let psd = compute_psd(received, seg, DEFAULT_OVERLAP, Window::Hann)?;
    let acpr = compute_acpr(&psd, plan)?;
    let evm = compute_evm(received, reference, start)?;
    let nmse = compute_nmse(received.samples(), ideal)?;
    Ok(MetricsReport {
        acpr_left_dbc: acpr.left_dbc,
        acpr_right_dbc: acpr.right_dbc,
        acpr_floor_limited: acpr.floor_limited,
        evm_db: evm.evm_db,
        nmse_db: nmse,
        psd: psd.db_pairs(),
    })
}
