use std::io::Write;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::datakit::WindowSegment;
use crate::{Error, Result};

/// Per-channel features, in output order.
pub const FEATURE_NAMES: [&str; 11] = [
    "mean",
    "median",
    "abs_energy",
    "std",
    "var",
    "min",
    "max",
    "skewness",
    "kurtosis",
    "mean_spectral_energy",
    "mean_crossings",
];

pub const FEATURES_PER_CHANNEL: usize = FEATURE_NAMES.len();

/// Engineered features of one window, channel-major then feature-minor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub feature_names: Vec<String>,
}

/// `<channel>_<feature>` names in vector order.
pub fn feature_names(channel_names: &[String]) -> Vec<String> {
    channel_names
        .iter()
        .flat_map(|ch| FEATURE_NAMES.iter().map(move |f| format!("{ch}_{f}")))
        .collect()
}

fn default_channel_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("ch_{i}")).collect()
}

/// Mean squared DFT magnitude over bins `1..=N/2` (DC excluded).
pub fn mean_spectral_energy(x: &[f64], planner: &mut FftPlanner<f64>) -> f64 {
    let n = x.len();
    let half = n / 2;
    if half == 0 {
        return 0.0;
    }
    let fft = planner.plan_fft_forward(n);
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft.process(&mut buf);
    buf[1..=half].iter().map(|c| c.norm_sqr()).sum::<f64>() / half as f64
}

/// Strict sign changes of `x - mean(x)`; exact zeros inherit the previous sign.
pub fn mean_crossings(x: &[f64], mean: f64) -> usize {
    let mut prev: Option<bool> = None;
    let mut count = 0;
    for &v in x {
        let d = v - mean;
        let sign = if d > 0.0 {
            Some(true)
        } else if d < 0.0 {
            Some(false)
        } else {
            prev
        };
        if let (Some(p), Some(s)) = (prev, sign) {
            if p != s {
                count += 1;
            }
        }
        if sign.is_some() {
            prev = sign;
        }
    }
    count
}

fn channel_features(x: &[f64], planner: &mut FftPlanner<f64>, out: &mut Vec<f64>) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let median = if m % 2 == 1 {
        sorted[m / 2]
    } else {
        0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
    };
    let abs_energy = x.iter().map(|v| v * v).sum::<f64>();
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in x {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let (skew, kurt) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    } else {
        (0.0, 0.0)
    };
    out.extend_from_slice(&[
        mean,
        median,
        abs_energy,
        m2.sqrt(),
        m2,
        sorted[0],
        sorted[m - 1],
        skew,
        kurt,
        mean_spectral_energy(x, planner),
        mean_crossings(x, mean) as f64,
    ]);
}

/// Computes the 11 per-channel features of a window.
pub fn extract_engineered(segment: &WindowSegment) -> Result<FeatureVector> {
    extract_with_names(segment, &default_channel_names(segment.n_channels))
}

pub fn extract_with_names(segment: &WindowSegment, channel_names: &[String]) -> Result<FeatureVector> {
    if segment.window_len < 2 {
        return Err(Error::InvalidInput(format!(
            "feature extraction needs windows of at least 2 samples, got {}",
            segment.window_len
        )));
    }
    if segment.data.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidInput(format!(
            "NaN in window {}@{}",
            segment.source_recording_id, segment.start_index
        )));
    }
    let mut planner = FftPlanner::new();
    let mut values = Vec::with_capacity(FEATURES_PER_CHANNEL * segment.n_channels);
    for ch in 0..segment.n_channels {
        channel_features(&segment.channel(ch), &mut planner, &mut values);
    }
    Ok(FeatureVector {
        values,
        feature_names: feature_names(channel_names),
    })
}

/// Feature matrix for many windows, one row per window.
pub fn extract_matrix(segments: &[WindowSegment]) -> Result<Vec<Vec<f64>>> {
    segments
        .iter()
        .map(|s| extract_engineered(s).map(|f| f.values))
        .collect()
}

/// Writes a feature matrix as CSV with the feature names as header.
pub fn write_feature_csv<W: Write>(out: W, names: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let fmt = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(names).map_err(fmt)?;
    for r in rows {
        w.write_record(r.iter().map(|v| v.to_string())).map_err(fmt)?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::SegmentPart;
    use proptest::prelude::*;

    fn seg(channels: &[Vec<f64>]) -> WindowSegment {
        let n = channels[0].len();
        let c = channels.len();
        let mut data = vec![0.0; n * c];
        for (ch, col) in channels.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                data[i * c + ch] = *v;
            }
        }
        WindowSegment {
            subject_id: "s".into(),
            activity_id: 0,
            start_index: 0,
            source_recording_id: "r".into(),
            part: SegmentPart::Full,
            window_len: n,
            n_channels: c,
            data,
        }
    }

    fn direct_dft_energy(x: &[f64]) -> f64 {
        let n = x.len();
        let half = n / 2;
        (1..=half)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, v) in x.iter().enumerate() {
                    let a = -std::f64::consts::TAU * (k * t) as f64 / n as f64;
                    re += v * a.cos();
                    im += v * a.sin();
                }
                re * re + im * im
            })
            .sum::<f64>()
            / half as f64
    }

    #[test]
    fn constant_channel() {
        let f = extract_engineered(&seg(&[vec![2.5; 16]])).unwrap().values;
        assert_eq!(f[0], 2.5);
        assert_eq!(f[1], 2.5);
        assert_eq!(f[3], 0.0);
        assert_eq!(f[7], 0.0);
        assert_eq!(f[8], 0.0);
        assert!(f[9].abs() < 1e-20);
        assert_eq!(f[10], 0.0);
    }

    #[test]
    fn alternating_channel() {
        let f = extract_engineered(&seg(&[vec![1.0, -1.0, 1.0, -1.0]])).unwrap().values;
        assert_eq!(f[0], 0.0);
        assert_eq!(f[2], 4.0);
        assert_eq!(f[10], 3.0);
        assert_eq!(f[5], -1.0);
        assert_eq!(f[6], 1.0);
        assert_eq!(f[4], 1.0);
    }

    #[test]
    fn six_channels_give_66_features() {
        let chans: Vec<Vec<f64>> = (0..6).map(|c| (0..20).map(|i| (i * c) as f64).collect()).collect();
        let f = extract_engineered(&seg(&chans)).unwrap();
        assert_eq!(f.values.len(), 66);
        assert_eq!(f.feature_names[11], "ch_1_mean");
        assert_eq!(f.feature_names[65], "ch_5_mean_crossings");
    }

    #[test]
    fn moments_match_hand_values() {
        // x = [0, 0, 0, 4]: mean 1, m2 3, m3 6, m4 21
        let f = extract_engineered(&seg(&[vec![0.0, 0.0, 0.0, 4.0]])).unwrap().values;
        assert!((f[4] - 3.0).abs() < 1e-12);
        assert!((f[7] - 6.0 / 3f64.powf(1.5)).abs() < 1e-12);
        assert!((f[8] - (21.0 / 9.0 - 3.0)).abs() < 1e-12);
        assert_eq!(f[1], 0.0);
    }

    #[test]
    fn zeros_attach_to_previous_sign() {
        assert_eq!(mean_crossings(&[1.0, 0.0, 1.0], 0.0), 0);
        assert_eq!(mean_crossings(&[1.0, 0.0, -1.0], 0.0), 1);
        assert_eq!(mean_crossings(&[0.0, 0.0, -1.0, 2.0], 0.0), 1);
    }

    #[test]
    fn nan_rejected() {
        assert!(extract_engineered(&seg(&[vec![1.0, f64::NAN, 2.0]])).is_err());
    }

    #[test]
    fn too_short_rejected() {
        assert!(extract_engineered(&seg(&[vec![1.0]])).is_err());
    }

    proptest! {
        #[test]
        fn spectral_energy_matches_direct_dft(x in prop::collection::vec(-5.0f64..5.0, 2..40)) {
            let mut planner = FftPlanner::new();
            let fast = mean_spectral_energy(&x, &mut planner);
            let slow = direct_dft_energy(&x);
            prop_assert!((fast - slow).abs() <= 1e-9 * (1.0 + slow.abs()));
        }

        #[test]
        fn shift_covariance(x in prop::collection::vec(-5.0f64..5.0, 3..30), c in -10.0f64..10.0) {
            let a = extract_engineered(&seg(std::slice::from_ref(&x))).unwrap().values;
            let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
            let b = extract_engineered(&seg(&[shifted])).unwrap().values;
            for i in [0usize, 1, 5, 6] {
                prop_assert!((b[i] - a[i] - c).abs() < 1e-9);
            }
            for i in [3usize, 4] {
                prop_assert!((b[i] - a[i]).abs() < 1e-8);
            }
            let mean = a[0];
            if x.iter().all(|v| (v - mean).abs() > 1e-6) {
                prop_assert_eq!(a[10], b[10]);
            }
            // higher moments are ill-conditioned when the spread is tiny
            if a[4] > 1e-3 {
                prop_assert!((b[7] - a[7]).abs() < 1e-6);
                prop_assert!((b[8] - a[8]).abs() < 1e-6);
            }
        }
    }
}
