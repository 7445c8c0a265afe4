use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Which part of a source recording a derived recording or window came from.
///
/// Experiment runners use this tag to assert that training data never leaks
/// into reference sets and vice versa.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentPart {
    Full,
    Reference,
    Test,
}

/// One subject performing one activity, sampled uniformly.
///
/// Samples are stored row-major, `n_samples x n_channels`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalRecording {
    pub subject_id: String,
    pub activity_id: usize,
    pub recording_id: String,
    pub sample_rate: f64,
    pub channel_names: Vec<String>,
    pub samples: Vec<f64>,
    /// Offset of sample 0 within the source recording (non-zero after a split).
    pub start_offset: usize,
    pub part: SegmentPart,
}

impl CanonicalRecording {
    pub fn new(
        subject_id: impl Into<String>,
        activity_id: usize,
        recording_id: impl Into<String>,
        sample_rate: f64,
        channel_names: Vec<String>,
        samples: Vec<f64>,
    ) -> Result<Self> {
        let rec = CanonicalRecording {
            subject_id: subject_id.into(),
            activity_id,
            recording_id: recording_id.into(),
            sample_rate,
            channel_names,
            samples,
            start_offset: 0,
            part: SegmentPart::Full,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn n_channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn n_samples(&self) -> usize {
        if self.channel_names.is_empty() {
            0
        } else {
            self.samples.len() / self.channel_names.len()
        }
    }

    pub fn duration_s(&self) -> f64 {
        (self.n_samples().saturating_sub(1)) as f64 / self.sample_rate
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.n_channels();
        &self.samples[i * c..(i + 1) * c]
    }

    pub fn channel(&self, ch: usize) -> Vec<f64> {
        let c = self.n_channels();
        self.samples.iter().skip(ch).step_by(c).copied().collect()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.n_channels();
        if c == 0 {
            return Err(Error::InvalidInput(format!(
                "recording {} has no channels",
                self.recording_id
            )));
        }
        if self.samples.is_empty() || !self.samples.len().is_multiple_of(c) {
            return Err(Error::InvalidInput(format!(
                "recording {} has {} values, not a positive multiple of {c} channels",
                self.recording_id,
                self.samples.len()
            )));
        }
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return Err(Error::InvalidInput(format!(
                "recording {} has invalid sample rate {}",
                self.recording_id, self.sample_rate
            )));
        }
        if let Some(pos) = self.samples.iter().position(|v| v.is_nan()) {
            return Err(Error::InvalidInput(format!(
                "recording {} has NaN at sample {} channel {}",
                self.recording_id,
                pos / c,
                pos % c
            )));
        }
        Ok(())
    }
}

/// Checks that every recording of a dataset shares channel count and order.
pub fn check_consistent_channels(recordings: &[CanonicalRecording]) -> Result<()> {
    if let Some(first) = recordings.first() {
        for r in &recordings[1..] {
            if r.channel_names != first.channel_names {
                return Err(Error::InvalidInput(format!(
                    "recording {} channels {:?} differ from {:?}",
                    r.recording_id, r.channel_names, first.channel_names
                )));
            }
        }
    }
    Ok(())
}

/// A fixed-length window of uniform activity cut from one recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSegment {
    pub subject_id: String,
    pub activity_id: usize,
    /// Sample offset within the source recording.
    pub start_index: usize,
    pub source_recording_id: String,
    pub part: SegmentPart,
    pub window_len: usize,
    pub n_channels: usize,
    /// Row-major `window_len x n_channels`.
    pub data: Vec<f64>,
}

impl WindowSegment {
    pub fn channel(&self, ch: usize) -> Vec<f64> {
        self.data
            .iter()
            .skip(ch)
            .step_by(self.n_channels)
            .copied()
            .collect()
    }

    pub fn end_index(&self) -> usize {
        self.start_index + self.window_len
    }

    /// True when both windows come from the same source recording and
    /// share at least one sample.
    pub fn overlaps(&self, other: &WindowSegment) -> bool {
        self.source_recording_id == other.source_recording_id
            && self.start_index < other.end_index()
            && other.start_index < self.end_index()
    }
}
