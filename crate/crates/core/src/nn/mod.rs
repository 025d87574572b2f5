//! Hand-written GRU + fully-connected output layer with exact reverse-mode
//! gradients, the ADAM optimizer, and model checkpoints.

mod adam;
mod checkpoint;
mod gru;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, CheckpointError, CHECKPOINT_FORMAT};
pub use gru::{CellOutput, FrozenResiduals, Gradients, GruModel, QuantMode, Trace};
pub use tensor::RealTensor;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NnError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("empty sequence")]
    EmptySequence,
    #[error("invalid tensor: {0}")]
    Tensor(String),
}

/// Layer sizes of a GRU + FC model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GruDims {
    pub input_dim: usize,
    pub hidden_dim: usize,
}

/// Output width of the FC layer (I and Q).
pub const OUTPUT_DIM: usize = 2;

impl GruDims {
    pub const fn new(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
        }
    }

    /// `3h(in + h) + 6h + 2h + 2`
    pub fn parameter_count(&self) -> usize {
        Param::ALL.iter().map(|&p| self.len(p)).sum()
    }

    pub fn shape(&self, p: Param) -> Vec<usize> {
        let (i, h) = (self.input_dim, self.hidden_dim);
        use Param::*;
        match p {
            Wir | Wiz | Win => vec![h, i],
            Whr | Whz | Whn => vec![h, h],
            Bir | Biz | Bin | Bhr | Bhz | Bhn => vec![h],
            Wy => vec![OUTPUT_DIM, h],
            By => vec![OUTPUT_DIM],
        }
    }

    pub fn len(&self, p: Param) -> usize {
        self.shape(p).iter().product()
    }

    pub fn offset(&self, p: Param) -> usize {
        Param::ALL[..p.index()].iter().map(|&q| self.len(q)).sum()
    }

    pub fn range(&self, p: Param) -> std::ops::Range<usize> {
        let o = self.offset(p);
        o..o + self.len(p)
    }

    pub fn site_len(&self, s: Site) -> usize {
        match s {
            Site::Feat => self.input_dim,
            Site::Y => OUTPUT_DIM,
            _ => self.hidden_dim,
        }
    }

    pub fn site_offset(&self, s: Site) -> usize {
        Site::ALL[..s.index()].iter().map(|&q| self.site_len(q)).sum()
    }

    /// Number of activation values recorded per timestep.
    pub fn site_stride(&self) -> usize {
        Site::ALL.iter().map(|&s| self.site_len(s)).sum()
    }
}

/// Parameter tensors in checkpoint order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Param {
    Wir,
    Wiz,
    Win,
    Whr,
    Whz,
    Whn,
    Bir,
    Biz,
    Bin,
    Bhr,
    Bhz,
    Bhn,
    Wy,
    By,
}

impl Param {
    pub const ALL: [Param; 14] = [
        Param::Wir,
        Param::Wiz,
        Param::Win,
        Param::Whr,
        Param::Whz,
        Param::Whn,
        Param::Bir,
        Param::Biz,
        Param::Bin,
        Param::Bhr,
        Param::Bhz,
        Param::Bhn,
        Param::Wy,
        Param::By,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        use Param::*;
        match self {
            Wir => "W_ir",
            Wiz => "W_iz",
            Win => "W_in",
            Whr => "W_hr",
            Whz => "W_hz",
            Whn => "W_hn",
            Bir => "b_ir",
            Biz => "b_iz",
            Bin => "b_in",
            Bhr => "b_hr",
            Bhz => "b_hz",
            Bhn => "b_hn",
            Wy => "W_y",
            By => "b_y",
        }
    }

    pub fn from_name(name: &str) -> Option<Param> {
        Param::ALL.into_iter().find(|p| p.name() == name)
    }

    pub fn is_bias(self) -> bool {
        use Param::*;
        matches!(self, Bir | Biz | Bin | Bhr | Bhz | Bhn | By)
    }
}

/// Activation sites: every intermediate that is rounded onto a grid in
/// quantized execution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Site {
    /// Input features entering the GRU.
    Feat,
    /// `W_ir phi + b_ir + W_hr h + b_hr`
    RPre,
    /// reset gate
    R,
    ZPre,
    /// update gate
    Z,
    /// `W_hn h + b_hn`
    HnPart,
    /// `r * (W_hn h + b_hn)`
    RHn,
    NPre,
    /// candidate state
    N,
    /// `(1 - z) * n`
    ZcN,
    /// `z * h_prev`
    ZH,
    H,
    Y,
}

impl Site {
    pub const ALL: [Site; 13] = [
        Site::Feat,
        Site::RPre,
        Site::R,
        Site::ZPre,
        Site::Z,
        Site::HnPart,
        Site::RHn,
        Site::NPre,
        Site::N,
        Site::ZcN,
        Site::ZH,
        Site::H,
        Site::Y,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Sigmoid outputs live in (0, 1) and use unsigned grids.
    pub fn signed(self) -> bool {
        !matches!(self, Site::R | Site::Z)
    }

    pub fn name(self) -> &'static str {
        use Site::*;
        match self {
            Feat => "feat",
            RPre => "r_pre",
            R => "r",
            ZPre => "z_pre",
            Z => "z",
            HnPart => "hn_part",
            RHn => "r_hn",
            NPre => "n_pre",
            N => "n",
            ZcN => "zc_n",
            ZH => "z_h",
            H => "h",
            Y => "y",
        }
    }
}
