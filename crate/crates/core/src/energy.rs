//! Analytic inference cost: operation counts per input sample, a per-operation
//! energy table for two process nodes, energy per inference and dynamic power.
//!
//! Counting convention (per I/Q sample, GRU with input `i`, hidden `h`, FC to 2):
//!
//! | term                         | MUL            | ADD                              |
//! |------------------------------|----------------|----------------------------------|
//! | gate matmuls (r, z, n)       | `3h(i + h)`    | `3h((i-1) + (h-1) + 2 + 1)`      |
//! | FC output                    | `2h`           | `2((h-1) + 1)`                   |
//! | `r*hn`, `(1-z)*n`, `z*h`     | `3h`           |                                  |
//! | `1-z`, final sum             |                | `2h`                             |
//! | sigmoid/tanh (`3h` of them)  |                | `3h * 2 * cordic_iterations`     |
//! | feature extraction           | 14 (float)     | 17 (float)                       |
//!
//! The three gate ADD terms are the dot-product reductions, the two biases and
//! the join of the input and hidden parts. MEM = parameters + 2 * window + 2.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::nn::GruDims;

pub const FEATURE_MULS: u64 = 14;
pub const FEATURE_ADDS: u64 = 17;
pub const DEFAULT_CORDIC_ITERATIONS: u32 = 15;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EnergyError {
    #[error("energy table has no entry for {0}")]
    MissingEntry(String),
    #[error("energy table line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error("negative input: {0}")]
    Negative(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OpKind {
    Mul,
    Add,
    Mem,
}

impl OpKind {
    pub fn label(self) -> &'static str {
        match self {
            OpKind::Mul => "MUL",
            OpKind::Add => "ADD",
            OpKind::Mem => "MEM",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "MUL" => Some(OpKind::Mul),
            "ADD" => Some(OpKind::Add),
            "MEM" => Some(OpKind::Mem),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NumFormat {
    Float,
    Fixed,
}

impl NumFormat {
    pub fn label(self) -> &'static str {
        match self {
            NumFormat::Float => "float",
            NumFormat::Fixed => "fixed",
        }
    }
}

/// An operation bucket: kind, number format and bit width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OpClass {
    pub kind: OpKind,
    pub format: NumFormat,
    pub bits: u32,
}

impl OpClass {
    pub const fn new(kind: OpKind, format: NumFormat, bits: u32) -> Self {
        Self { kind, format, bits }
    }

    const fn float(kind: OpKind) -> Self {
        Self::new(kind, NumFormat::Float, 32)
    }
}

impl fmt::Display for OpClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.kind.label(), self.format.label(), self.bits)
    }
}

/// Arithmetic precision of a model for cost purposes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    Fp32,
    Mixed { weight_bits: u32, act_bits: u32 },
}

impl Precision {
    pub fn tag(&self) -> String {
        match self {
            Precision::Fp32 => "FP32".into(),
            Precision::Mixed { weight_bits, act_bits } => format!("W{weight_bits}A{act_bits}"),
        }
    }

    /// Parses `fp32` or `W<w>A<a>` (case-insensitive).
    pub fn parse(s: &str) -> Option<Self> {
        let u = s.trim().to_ascii_uppercase();
        if u == "FP32" {
            return Some(Precision::Fp32);
        }
        let rest = u.strip_prefix('W')?;
        let (w, a) = rest.split_once('A')?;
        Some(Precision::Mixed {
            weight_bits: w.parse().ok()?,
            act_bits: a.parse().ok()?,
        })
    }

    /// The sweep set, from full precision down to W8A8.
    pub fn sweep() -> Vec<Precision> {
        let mut v = vec![Precision::Fp32];
        for (w, a) in [(16, 16), (12, 16), (12, 12), (8, 16), (8, 12), (8, 8)] {
            v.push(Precision::Mixed {
                weight_bits: w,
                act_bits: a,
            });
        }
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountConfig {
    pub input_window: usize,
    pub cordic_iterations: u32,
    pub include_activations: bool,
    pub include_features: bool,
}

impl Default for CountConfig {
    fn default() -> Self {
        Self {
            input_window: 1,
            cordic_iterations: DEFAULT_CORDIC_ITERATIONS,
            include_activations: true,
            include_features: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct OpCountReport {
    pub counts: BTreeMap<OpClass, u64>,
    pub input_window: usize,
    pub parameter_count: usize,
}

impl OpCountReport {
    pub fn add(&mut self, class: OpClass, n: u64) {
        if n > 0 {
            *self.counts.entry(class).or_insert(0) += n;
        }
    }

    pub fn total(&self, kind: OpKind) -> u64 {
        self.counts.iter().filter(|(c, _)| c.kind == kind).map(|(_, n)| n).sum()
    }
}

/// Operation counts for one inference (one I/Q sample) of a GRU + FC model.
pub fn count_ops(dims: GruDims, precision: Precision, cfg: &CountConfig) -> OpCountReport {
    let (i, h) = (dims.input_dim as u64, dims.hidden_dim as u64);
    let p = dims.parameter_count();
    let (arith, weight, act_bits) = match precision {
        Precision::Fp32 => (NumFormat::Float, 32, 32),
        Precision::Mixed { weight_bits, act_bits } => (NumFormat::Fixed, weight_bits, act_bits),
    };
    let widest = |k| OpClass::new(k, arith, weight.max(act_bits));
    let at_act = |k| OpClass::new(k, arith, act_bits);

    let mut r = OpCountReport {
        input_window: cfg.input_window,
        parameter_count: p,
        ..Default::default()
    };
    // weight-input products: gates and FC
    r.add(widest(OpKind::Mul), 3 * h * (i + h) + 2 * h);
    // gate reductions, biases, input/hidden join; FC reductions and bias
    r.add(widest(OpKind::Add), 3 * h * ((i - 1) + (h - 1) + 2 + 1) + 2 * h);
    r.add(at_act(OpKind::Mul), 3 * h);
    r.add(at_act(OpKind::Add), 2 * h);
    if cfg.include_activations {
        r.add(at_act(OpKind::Add), 3 * h * 2 * cfg.cordic_iterations as u64);
    }
    if cfg.include_features {
        r.add(OpClass::float(OpKind::Mul), FEATURE_MULS);
        r.add(OpClass::float(OpKind::Add), FEATURE_ADDS);
    }
    let mem_w = OpClass::new(OpKind::Mem, arith, weight);
    let mem_a = OpClass::new(OpKind::Mem, arith, act_bits);
    r.add(mem_w, p as u64);
    r.add(mem_a, 2 * cfg.input_window as u64 + 2);
    r
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Node {
    Nm45,
    Nm7,
}

impl Node {
    pub const ALL: [Node; 2] = [Node::Nm45, Node::Nm7];

    pub fn nm(self) -> u32 {
        match self {
            Node::Nm45 => 45,
            Node::Nm7 => 7,
        }
    }

    pub fn from_nm(nm: u32) -> Option<Self> {
        Node::ALL.into_iter().find(|n| n.nm() == nm)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyEntry {
    pub class: OpClass,
    pub node: Node,
    pub energy_pj: f64,
    pub provenance: String,
}

/// Per-operation energies, loaded from CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyTable {
    entries: BTreeMap<(OpClass, Node), EnergyEntry>,
}

const DEFAULT_TABLE: &str = include_str!("../data/energy_default.csv");
const TABLE_HEADER: &str = "op_kind,format,bit_width,node_nm,energy_pj,provenance";

impl Default for EnergyTable {
    fn default() -> Self {
        Self::parse_csv(DEFAULT_TABLE).expect("bundled energy table parses")
    }
}

impl EnergyTable {
    pub fn parse_csv(text: &str) -> Result<Self, EnergyError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == TABLE_HEADER => {}
            _ => {
                return Err(EnergyError::Parse {
                    line: 1,
                    msg: format!("expected header {TABLE_HEADER}"),
                })
            }
        }
        let mut entries = BTreeMap::new();
        for (idx, line) in lines {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let err = |msg: String| EnergyError::Parse { line: line_no, msg };
            let f: Vec<&str> = line.splitn(6, ',').map(str::trim).collect();
            if f.len() < 5 {
                return Err(err(format!("expected 6 fields, found {}", f.len())));
            }
            let kind = OpKind::parse(f[0]).ok_or_else(|| err(format!("unknown op kind {:?}", f[0])))?;
            let format = match f[1] {
                "float" => NumFormat::Float,
                "fixed" => NumFormat::Fixed,
                o => return Err(err(format!("unknown format {o:?}"))),
            };
            let bits: u32 = f[2].parse().map_err(|_| err(format!("bad bit width {:?}", f[2])))?;
            let nm: u32 = f[3].parse().map_err(|_| err(format!("bad node {:?}", f[3])))?;
            let node = Node::from_nm(nm).ok_or_else(|| err(format!("unsupported node {nm} nm")))?;
            let energy_pj: f64 = f[4].parse().map_err(|_| err(format!("bad energy {:?}", f[4])))?;
            if !(energy_pj > 0.0 && energy_pj.is_finite()) {
                return Err(err(format!("energy must be positive, got {energy_pj}")));
            }
            let class = OpClass::new(kind, format, bits);
            let entry = EnergyEntry {
                class,
                node,
                energy_pj,
                provenance: f.get(5).unwrap_or(&"").to_string(),
            };
            if entries.insert((class, node), entry).is_some() {
                return Err(err(format!("duplicate entry {class} @ {nm} nm")));
            }
        }
        Ok(Self { entries })
    }

    pub fn load_csv(path: &Path) -> Result<Self, EnergyError> {
        let text = std::fs::read_to_string(path).map_err(|e| EnergyError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Self::parse_csv(&text)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{TABLE_HEADER}\n");
        for e in self.entries.values() {
            writeln!(
                s,
                "{},{},{},{},{},{}",
                e.class.kind.label(),
                e.class.format.label(),
                e.class.bits,
                e.node.nm(),
                e.energy_pj,
                e.provenance
            )
            .unwrap();
        }
        s
    }

    pub fn get(&self, class: OpClass, node: Node) -> Result<f64, EnergyError> {
        self.entries
            .get(&(class, node))
            .map(|e| e.energy_pj)
            .ok_or_else(|| EnergyError::MissingEntry(format!("{class} @ {} nm", node.nm())))
    }

    pub fn entries(&self) -> impl Iterator<Item = &EnergyEntry> {
        self.entries.values()
    }

    /// One multiply plus one add at the given format and width.
    pub fn mac(&self, format: NumFormat, bits: u32, node: Node) -> Result<f64, EnergyError> {
        Ok(self.get(OpClass::new(OpKind::Mul, format, bits), node)?
            + self.get(OpClass::new(OpKind::Add, format, bits), node)?)
    }
}

/// Energy per inference split by operation kind, in pJ.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub mul_pj: f64,
    pub add_pj: f64,
    pub mem_pj: f64,
}

impl EnergyBreakdown {
    pub fn total_pj(&self) -> f64 {
        self.mul_pj + self.add_pj + self.mem_pj
    }

    pub fn total_nj(&self) -> f64 {
        self.total_pj() * 1e-3
    }
}

pub fn estimate_energy(report: &OpCountReport, table: &EnergyTable, node: Node) -> Result<EnergyBreakdown, EnergyError> {
    let mut b = EnergyBreakdown::default();
    for (&class, &n) in &report.counts {
        let e = n as f64 * table.get(class, node)?;
        match class.kind {
            OpKind::Mul => b.mul_pj += e,
            OpKind::Add => b.add_pj += e,
            OpKind::Mem => b.mem_pj += e,
        }
    }
    Ok(b)
}

/// Dynamic power in watts for `energy_nj` per inference at `sample_rate_hz` inferences per second.
pub fn estimate_power(energy_nj: f64, sample_rate_hz: f64) -> Result<f64, EnergyError> {
    for v in [energy_nj, sample_rate_hz] {
        if v < 0.0 || !v.is_finite() {
            return Err(EnergyError::Negative(v));
        }
    }
    Ok(energy_nj * 1e-9 * sample_rate_hz)
}

/// One row of the cost report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub precision: Precision,
    pub muls: u64,
    pub adds: u64,
    pub mems: u64,
    pub energy_nj_45: f64,
    pub energy_nj_7: f64,
    pub power_w_45: f64,
    pub power_w_7: f64,
    /// 7 nm power reduction relative to the FP32 row.
    pub reduction: f64,
}

pub fn cost_rows(
    dims: GruDims,
    precisions: &[Precision],
    table: &EnergyTable,
    cfg: &CountConfig,
    sample_rate_hz: f64,
) -> Result<Vec<CostRow>, EnergyError> {
    let base_report = count_ops(dims, Precision::Fp32, cfg);
    let base_p7 = estimate_power(estimate_energy(&base_report, table, Node::Nm7)?.total_nj(), sample_rate_hz)?;
    precisions
        .iter()
        .map(|&precision| {
            let r = count_ops(dims, precision, cfg);
            let e45 = estimate_energy(&r, table, Node::Nm45)?.total_nj();
            let e7 = estimate_energy(&r, table, Node::Nm7)?.total_nj();
            let p7 = estimate_power(e7, sample_rate_hz)?;
            Ok(CostRow {
                precision,
                muls: r.total(OpKind::Mul),
                adds: r.total(OpKind::Add),
                mems: r.total(OpKind::Mem),
                energy_nj_45: e45,
                energy_nj_7: e7,
                power_w_45: estimate_power(e45, sample_rate_hz)?,
                power_w_7: p7,
                reduction: base_p7 / p7,
            })
        })
        .collect()
}

/// Fixed-width text table: counts, energy and power per node, reduction factor.
pub fn format_cost_table(rows: &[CostRow]) -> String {
    let mut s = String::new();
    writeln!(
        s,
        "{:<8} {:>16} {:>9} {:>9} {:>9} {:>9} {:>9}",
        "model", "MUL/ADD/MEM", "E45(nJ)", "E7(nJ)", "P45(W)", "P7(W)", "reduct."
    )
    .unwrap();
    for r in rows {
        writeln!(
            s,
            "{:<8} {:>16} {:>9.2} {:>9.2} {:>9.2} {:>9.2} {:>8.1}x",
            r.precision.tag(),
            format!("{}/{}/{}", r.muls, r.adds, r.mems),
            r.energy_nj_45,
            r.energy_nj_7,
            r.power_w_45,
            r.power_w_7,
            r.reduction
        )
        .unwrap();
    }
    s
}
