//! Synthetic power amplifier: a memory polynomial over odd orders 1..7 and
//! four memory taps, used to create datasets and close the DPD loop.

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::signal::IqSignal;

pub const ORDERS: [u32; 4] = [1, 3, 5, 7];
pub const MEMORY_DEPTH: usize = 4;

const DEFAULT_COEFFS: &str = include_str!("../data/pa_default.csv");

/// Peak input amplitude the polynomial is valid for.
pub const FULL_SCALE: f64 = 1.0;

/// Drive level (peak amplitude at the PA input) of the default dataset.
pub const DEFAULT_DRIVE: f64 = 0.9;

#[derive(Debug, thiserror::Error)]
pub enum PaError {
    #[error("input peak {0} exceeds full scale {FULL_SCALE}")]
    Unnormalized(f64),
    #[error("coefficient file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Complex white Gaussian noise added at a level relative to the output power.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub level_dbc: f64,
    pub seed: u64,
}

/// Memory-polynomial coefficients `c[k][m]` for order `ORDERS[k]` and tap `m`.
#[derive(Clone, Debug, PartialEq)]
pub struct PaSimModel {
    pub coefficients: [[Complex64; MEMORY_DEPTH]; 4],
    pub id: String,
}

impl Default for PaSimModel {
    fn default() -> Self {
        let mut m = Self::parse_csv(DEFAULT_COEFFS).expect("shipped coefficients parse");
        m.id = "default-v1".into();
        m
    }
}

impl PaSimModel {
    pub fn identity() -> Self {
        let mut coefficients = [[Complex64::new(0.0, 0.0); MEMORY_DEPTH]; 4];
        coefficients[0][0] = Complex64::new(1.0, 0.0);
        Self {
            coefficients,
            id: "identity".into(),
        }
    }

    /// The linear tap at `(k=1, m=0)` must be the strictly largest coefficient.
    pub fn validate(&self) -> Result<(), PaError> {
        let lead = self.coefficients[0][0].norm();
        if !(lead > 0.0) {
            return Err(PaError::Invalid("c(1,0) must be non-zero".into()));
        }
        for (k, row) in self.coefficients.iter().enumerate() {
            for (m, c) in row.iter().enumerate() {
                if !(c.re.is_finite() && c.im.is_finite()) {
                    return Err(PaError::Invalid(format!("c({},{m}) not finite", ORDERS[k])));
                }
                if (k, m) != (0, 0) && c.norm() >= lead {
                    return Err(PaError::Invalid(format!(
                        "c({},{m}) = {c} is not smaller than c(1,0)",
                        ORDERS[k]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn parse_csv(text: &str) -> Result<Self, PaError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == "k,m,re,im" => {}
            _ => {
                return Err(PaError::Parse {
                    line: 1,
                    msg: "expected header `k,m,re,im`".into(),
                })
            }
        }
        let mut coefficients = [[Complex64::new(0.0, 0.0); MEMORY_DEPTH]; 4];
        for (i, line) in lines {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let err = |msg: String| PaError::Parse { line: line_no, msg };
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 4 {
                return Err(err(format!("expected 4 fields, found {}", f.len())));
            }
            let k: u32 = f[0].parse().map_err(|_| err(format!("bad order {:?}", f[0])))?;
            let m: usize = f[1].parse().map_err(|_| err(format!("bad tap {:?}", f[1])))?;
            let re: f64 = f[2].parse().map_err(|_| err(format!("bad re {:?}", f[2])))?;
            let im: f64 = f[3].parse().map_err(|_| err(format!("bad im {:?}", f[3])))?;
            let ki = ORDERS
                .iter()
                .position(|&o| o == k)
                .ok_or_else(|| err(format!("order {k} not in {ORDERS:?}")))?;
            if m >= MEMORY_DEPTH {
                return Err(err(format!("tap {m} >= memory depth {MEMORY_DEPTH}")));
            }
            coefficients[ki][m] = Complex64::new(re, im);
        }
        let model = Self {
            coefficients,
            id: "file".into(),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn load_csv(path: &Path) -> Result<Self, PaError> {
        let mut m = Self::parse_csv(&std::fs::read_to_string(path)?)?;
        m.id = path.display().to_string();
        Ok(m)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,m,re,im\n");
        for (k, row) in self.coefficients.iter().enumerate() {
            for (m, c) in row.iter().enumerate() {
                if c.norm() != 0.0 {
                    let _ = writeln!(s, "{},{m},{},{}", ORDERS[k], c.re, c.im);
                }
            }
        }
        s
    }

    /// Complex gain of the memoryless (tap 0) part at amplitude `r`.
    pub fn static_gain(&self, r: f64) -> Complex64 {
        ORDERS
            .iter()
            .zip(&self.coefficients)
            .map(|(&k, row)| row[0] * r.powi(k as i32 - 1))
            .sum()
    }
}

/// Runs the memory polynomial over `x`, optionally adding white noise.
pub fn simulate_pa(model: &PaSimModel, x: &IqSignal, noise: Option<NoiseSpec>) -> Result<IqSignal, PaError> {
    let peak = x.peak_amplitude();
    if peak > FULL_SCALE + 1e-9 {
        return Err(PaError::Unnormalized(peak));
    }
    let xs = x.samples();
    // basis[t][k] = x_t |x_t|^(k-1)
    let basis: Vec<[Complex64; 4]> = xs
        .iter()
        .map(|&s| {
            let a2 = s.norm_sqr();
            let s3 = s * a2;
            let s5 = s3 * a2;
            [s, s3, s5, s5 * a2]
        })
        .collect();
    let mut y: Vec<Complex64> = (0..xs.len())
        .map(|t| {
            let mut acc = Complex64::new(0.0, 0.0);
            for m in 0..MEMORY_DEPTH.min(t + 1) {
                let b = &basis[t - m];
                for k in 0..4 {
                    acc += model.coefficients[k][m] * b[k];
                }
            }
            acc
        })
        .collect();
    if let Some(n) = noise {
        let p = y.iter().map(|v| v.norm_sqr()).sum::<f64>() / y.len().max(1) as f64;
        let sigma = (p * 10f64.powf(n.level_dbc / 10.0) / 2.0).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(n.seed);
        for v in &mut y {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            *v += Complex64::new(re, im) * sigma;
        }
    }
    Ok(IqSignal::new(y, x.sample_rate_hz()).expect("finite polynomial output"))
}

/// Scales samples whose magnitude exceeds `limit` back onto the limit circle.
pub fn clip_to_full_scale(x: &IqSignal, limit: f64) -> IqSignal {
    let samples = x
        .samples()
        .iter()
        .map(|&s| {
            let a = s.norm();
            if a > limit {
                s * (limit / a)
            } else {
                s
            }
        })
        .collect();
    IqSignal::new(samples, x.sample_rate_hz()).expect("clipping keeps samples finite")
}
