//! Mixed-precision GRU digital predistortion for wideband power amplifiers.

pub mod energy;
pub mod fxp;
pub mod metrics;
pub mod nn;
pub mod pa;
pub mod quant;
pub mod signal;
pub mod train;
