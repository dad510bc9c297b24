use std::ops::Range;

use serde::{Deserialize, Serialize};

/// Named contiguous slice of a flat vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

impl Segment {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Flat vector with named segments. Used both for the trainable parameters
/// and for frozen buffers (Fourier matrices, phases).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParameterStore {
    pub values: Vec<f64>,
    pub segments: Vec<Segment>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a segment and returns its offset.
    pub fn push(&mut self, name: impl Into<String>, values: impl IntoIterator<Item = f64>) -> usize {
        let offset = self.values.len();
        self.values.extend(values);
        self.segments.push(Segment {
            name: name.into(),
            offset,
            len: self.values.len() - offset,
        });
        offset
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.segment(name).map(|s| &self.values[s.range()])
    }

    /// Segment containing flat index `idx`.
    pub fn segment_of(&self, idx: usize) -> Option<&Segment> {
        self.segments.iter().find(|s| s.range().contains(&idx))
    }
}
