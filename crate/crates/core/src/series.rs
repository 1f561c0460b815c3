use serde::{Deserialize, Serialize};

/// Displacement in meters sampled at the frame rate.
///
/// `start_time` is the instant of `values[0]` relative to the first radar
/// frame; it is non-zero when delay alignment trims leading frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplacementSeries {
    pub values: Vec<f64>,
    pub frame_rate: f64,
    #[serde(default)]
    pub start_time: f64,
}

impl DisplacementSeries {
    pub fn new(values: Vec<f64>, frame_rate: f64) -> Self {
        DisplacementSeries {
            values,
            frame_rate,
            start_time: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.values.len() as f64 / self.frame_rate
    }

    /// Sample instants in seconds.
    pub fn times(&self) -> Vec<f64> {
        (0..self.values.len())
            .map(|m| self.start_time + m as f64 / self.frame_rate)
            .collect()
    }

    /// Index of the first frame, `round(start_time · frame_rate)`.
    pub fn start_frame(&self) -> usize {
        (self.start_time * self.frame_rate).round().max(0.0) as usize
    }

    /// Sub-range of `other` covering the same frames as `self`, when both
    /// share a frame grid.
    pub fn overlap<'a>(&self, other: &'a DisplacementSeries) -> Option<(&[f64], &'a [f64])> {
        let a0 = self.start_frame();
        let b0 = other.start_frame();
        let start = a0.max(b0);
        let end = (a0 + self.len()).min(b0 + other.len());
        if end <= start {
            return None;
        }
        Some((
            &self.values[start - a0..end - a0],
            &other.values[start - b0..end - b0],
        ))
    }
}
