use super::recording::{CanonicalRecording, WindowSegment};
use crate::{Error, Result};

/// Round half up.
pub(crate) fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

/// Window length in samples for a window of `window_seconds` at `sample_rate`.
pub fn window_len(window_seconds: f64, sample_rate: f64) -> usize {
    round_half_up(window_seconds * sample_rate)
}

/// Hop between consecutive window starts; never below one sample.
pub fn window_step(window_len: usize, overlap_ratio: f64) -> usize {
    round_half_up(window_len as f64 * (1.0 - overlap_ratio)).max(1)
}

/// Number of complete windows that fit in `n_samples`.
pub fn window_count(n_samples: usize, window_len: usize, step: usize) -> usize {
    if window_len == 0 || n_samples < window_len {
        0
    } else {
        (n_samples - window_len) / step + 1
    }
}

/// Cuts a recording into fixed-length sliding windows.
///
/// Windows start at `0, step, 2*step, ...`; trailing samples that do not fill
/// a window are dropped. A recording shorter than one window yields no
/// windows.
pub fn segment(
    recording: &CanonicalRecording,
    window_seconds: f64,
    overlap_ratio: f64,
) -> Result<Vec<WindowSegment>> {
    if !(0.0..1.0).contains(&overlap_ratio) {
        return Err(Error::InvalidInput(format!(
            "overlap ratio must be in [0, 1), got {overlap_ratio}"
        )));
    }
    let len = window_len(window_seconds, recording.sample_rate);
    if len == 0 {
        return Err(Error::InvalidInput(format!(
            "window of {window_seconds} s at {} Hz is empty",
            recording.sample_rate
        )));
    }
    let step = window_step(len, overlap_ratio);
    let c = recording.n_channels();
    let count = window_count(recording.n_samples(), len, step);
    Ok((0..count)
        .map(|w| {
            let start = w * step;
            WindowSegment {
                subject_id: recording.subject_id.clone(),
                activity_id: recording.activity_id,
                start_index: recording.start_offset + start,
                source_recording_id: recording.recording_id.clone(),
                part: recording.part,
                window_len: len,
                n_channels: c,
                data: recording.samples[start * c..(start + len) * c].to_vec(),
            }
        })
        .collect())
}
