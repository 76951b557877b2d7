use serde::{Deserialize, Serialize};

/// Dense row-major f64 tensor. `data.len()` is the product of `shape`; a
/// scalar has an empty shape and one element.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorValue {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl TensorValue {
    pub fn scalar(v: f64) -> Self {
        TensorValue {
            shape: Vec::new(),
            data: vec![v],
        }
    }

    /// `None` if `data` does not fill `shape` or a dimension is zero.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Option<Self> {
        if shape.contains(&0) || shape.iter().product::<usize>() != data.len() {
            return None;
        }
        Some(TensorValue { shape, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Equality of shape and of every element's bit pattern, so `NaN`
    /// matches itself and `0.0` differs from `-0.0`.
    pub fn bitwise_eq(&self, other: &TensorValue) -> bool {
        self.shape == other.shape
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}
