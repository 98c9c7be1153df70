use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{MlpSpec, NnError};

/// A named slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Flat parameter storage with a stable segment table.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    segments: Vec<Segment>,
    data: Vec<f64>,
}

impl ParamVector {
    /// Zero parameters laid out as consecutive networks. Each layer gets a
    /// `{prefix}.{l}.weight` segment of shape `[in, out]` and a
    /// `{prefix}.{l}.bias` segment of shape `[out]`.
    pub fn for_networks(nets: &[(&str, &MlpSpec)]) -> Self {
        let mut segments = Vec::new();
        let mut offset = 0;
        for (prefix, spec) in nets {
            for l in 0..spec.layers() {
                let (i, o) = (spec.widths[l], spec.widths[l + 1]);
                segments.push(Segment { name: format!("{prefix}.{l}.weight"), offset, shape: vec![i, o] });
                offset += i * o;
                segments.push(Segment { name: format!("{prefix}.{l}.bias"), offset, shape: vec![o] });
                offset += o;
            }
        }
        Self { segments, data: vec![0.0; offset] }
    }

    pub fn from_parts(segments: Vec<Segment>, data: Vec<f64>) -> Result<Self, NnError> {
        let mut expected = 0;
        for s in &segments {
            if s.offset != expected {
                return Err(NnError::Layout(format!("segment {} starts at {} not {}", s.name, s.offset, expected)));
            }
            expected += s.len();
        }
        if expected != data.len() {
            return Err(NnError::ShapeMismatch { what: "parameter data", expected, found: data.len() });
        }
        Ok(Self { segments, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Same layout, different values.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self, NnError> {
        Self::from_parts(self.segments.clone(), data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Glorot-uniform weights `U(±√(6/(fan_in+fan_out)))`, zero biases.
    pub fn init_glorot<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for s in &self.segments {
            let range = s.range();
            if let [fan_in, fan_out] = s.shape[..] {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for v in &mut self.data[range] {
                    *v = rng.random_range(-limit..=limit);
                }
            } else {
                self.data[range].fill(0.0);
            }
        }
    }
}
