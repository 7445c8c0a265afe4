//! Dataset ingestion and preprocessing.

mod adapters;
mod canonical;
mod folds;
mod recording;
mod resample;
mod segment;
mod split;
mod synth;

pub use adapters::{
    ingest_dataset, DatasetAdapter, IMU6_CHANNELS, MHEALTH_CHANNELS, WISDM_ACTIVITY_CODES,
    WISDM_EXCLUDED_SUBJECTS,
};
pub use canonical::{
    read_canonical_csv, read_canonical_file, write_canonical_csv, write_canonical_file,
};
pub use folds::{make_subject_folds, FoldPlan};
pub use recording::{check_consistent_channels, CanonicalRecording, SegmentPart, WindowSegment};
pub use resample::{resample, resampled_len, NaturalCubicSpline};
pub use segment::{segment, window_count, window_len, window_step};
pub use split::temporal_split;
pub use synth::{synth_dataset, SynthSpec};

/// Segments every recording and concatenates the windows in input order.
pub fn segment_all(
    recordings: &[CanonicalRecording],
    window_seconds: f64,
    overlap_ratio: f64,
) -> crate::Result<Vec<WindowSegment>> {
    let mut out = Vec::new();
    for r in recordings {
        out.extend(segment(r, window_seconds, overlap_ratio)?);
    }
    Ok(out)
}
