use serde::{Deserialize, Serialize};

use super::NnError;

/// Row-major real tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl RealTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NnError> {
        let t = Self { shape, data };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.shape.iter().any(|&d| d == 0) {
            return Err(NnError::Tensor(format!("zero dimension in shape {:?}", self.shape)));
        }
        let n: usize = self.shape.iter().product();
        if n != self.data.len() {
            return Err(NnError::Tensor(format!(
                "shape {:?} needs {n} values, found {}",
                self.shape,
                self.data.len()
            )));
        }
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(NnError::Tensor(format!("non-finite entry at {i}")));
        }
        Ok(())
    }
}
