use super::recording::{CanonicalRecording, SegmentPart};
use crate::{Error, Result};

/// Splits a recording along time: the first `floor(n * fraction)` samples
/// become reference data, the remainder test data.
///
/// Split before segmenting so no window straddles the boundary.
pub fn temporal_split(
    recording: &CanonicalRecording,
    reference_fraction: f64,
) -> Result<(CanonicalRecording, CanonicalRecording)> {
    if !(reference_fraction > 0.0 && reference_fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "reference fraction must be in (0, 1), got {reference_fraction}"
        )));
    }
    let n = recording.n_samples();
    let boundary = (n as f64 * reference_fraction).floor() as usize;
    let c = recording.n_channels();
    let reference = CanonicalRecording {
        samples: recording.samples[..boundary * c].to_vec(),
        part: SegmentPart::Reference,
        ..recording.clone()
    };
    let test = CanonicalRecording {
        samples: recording.samples[boundary * c..].to_vec(),
        start_offset: recording.start_offset + boundary,
        part: SegmentPart::Test,
        ..recording.clone()
    };
    Ok((reference, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::segment;

    fn rec(n: usize) -> CanonicalRecording {
        CanonicalRecording::new(
            "s",
            0,
            "r",
            50.0,
            vec!["x".into()],
            (0..n).map(|v| v as f64).collect(),
        )
        .unwrap()
    }

    #[test]
    fn halves() {
        let (a, b) = temporal_split(&rec(1000), 0.5).unwrap();
        assert_eq!((a.n_samples(), b.n_samples()), (500, 500));
        let (a, b) = temporal_split(&rec(1001), 0.5).unwrap();
        assert_eq!((a.n_samples(), b.n_samples()), (500, 501));
        assert_eq!(b.start_offset, 500);
        assert_eq!(b.samples[0], 500.0);
    }

    #[test]
    fn small_reference_side_yields_no_windows() {
        let (a, _) = temporal_split(&rec(200), 0.1).unwrap();
        assert!(segment(&a, 4.0, 0.8).unwrap().is_empty());
    }

    #[test]
    fn windows_never_cross_the_boundary() {
        let (a, b) = temporal_split(&rec(1234), 0.37).unwrap();
        let ra = segment(&a, 1.0, 0.8).unwrap();
        let rb = segment(&b, 1.0, 0.8).unwrap();
        for x in &ra {
            assert!(x.end_index() <= b.start_offset);
            for y in &rb {
                assert!(!x.overlaps(y));
            }
        }
    }

    #[test]
    fn fraction_bounds() {
        assert!(temporal_split(&rec(10), 0.0).is_err());
        assert!(temporal_split(&rec(10), 1.0).is_err());
    }
}
