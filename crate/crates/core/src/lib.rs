//! Personalized inertial human-activity recognition.
//!
//! The crate is organised around the pipeline stages:
//!
//! * [`datakit`]: dataset ingestion, resampling, sliding windows, temporal
//!   reference/test splits, subject-grouped folds and synthetic fixtures.
//! * [`featkit`]: engineered per-channel features, standardization and
//!   Extra-Trees Gini importance ranking.
//! * [`nncore`]: the fully convolutional encoder with hand-derived
//!   backward passes and an Adam optimizer with gradient-norm clipping.
//! * [`trainkit`]: cross-entropy and (subject) triplet training loops.
//! * [`personalize`]: per-subject reference sets, k-NN inference and
//!   out-of-distribution scoring.
//! * [`evalkit`]: metrics, the experiment runners and report emission.

pub mod config;
pub mod container;
pub mod datakit;
pub mod error;
pub mod evalkit;
pub mod featkit;
pub mod model;
pub mod nncore;
pub mod personalize;
pub mod trainkit;

pub use error::{Error, ErrorClass, Result};

/// Keeps freed heap memory inside the process on glibc.
///
/// Training allocates and frees many multi-megabyte activation buffers per
/// step. With the default thresholds glibc returns each of them to the
/// kernel, and the resulting page faults can cost more than the arithmetic.
/// Call once at program start; a no-op on other platforms.
pub fn tune_allocator() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    // SAFETY: mallopt only adjusts allocator tunables and is safe to call at any time.
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 1 << 30);
        libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX);
        libc::mallopt(libc::M_TOP_PAD, 256 << 20);
    }
}
