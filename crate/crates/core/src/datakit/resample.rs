use super::recording::CanonicalRecording;
use crate::{Error, Result};

/// Natural cubic spline through uniformly spaced knots `x_i = i * h`.
#[derive(Debug, Clone)]
pub struct NaturalCubicSpline {
    h: f64,
    y: Vec<f64>,
    /// Second derivatives at the knots; zero at both ends.
    m: Vec<f64>,
}

impl NaturalCubicSpline {
    pub fn uniform(y: &[f64], h: f64) -> Result<Self> {
        let n = y.len();
        if n < 4 {
            return Err(Error::InvalidInput(format!(
                "cubic spline needs at least 4 samples, got {n}"
            )));
        }
        // Interior system: m[i-1] + 4 m[i] + m[i+1] = 6 (y[i+1] - 2y[i] + y[i-1]) / h^2
        let interior = n - 2;
        let mut diag = vec![4.0; interior];
        let mut rhs: Vec<f64> = (1..n - 1)
            .map(|i| 6.0 * (y[i + 1] - 2.0 * y[i] + y[i - 1]) / (h * h))
            .collect();
        // Thomas algorithm, off-diagonals are all 1.
        for i in 1..interior {
            let w = 1.0 / diag[i - 1];
            diag[i] -= w;
            rhs[i] -= w * rhs[i - 1];
        }
        let mut m = vec![0.0; n];
        m[interior] = rhs[interior - 1] / diag[interior - 1];
        for i in (0..interior - 1).rev() {
            m[i + 1] = (rhs[i] - m[i + 2]) / diag[i];
        }
        Ok(NaturalCubicSpline {
            h,
            y: y.to_vec(),
            m,
        })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.y.len();
        let h = self.h;
        let i = ((x / h).floor().max(0.0) as usize).min(n - 2);
        let a = (i as f64 + 1.0) * h - x;
        let b = x - i as f64 * h;
        (self.m[i] * a * a * a + self.m[i + 1] * b * b * b) / (6.0 * h)
            + (self.y[i] / h - self.m[i] * h / 6.0) * a
            + (self.y[i + 1] / h - self.m[i + 1] * h / 6.0) * b
    }
}

/// Number of output samples when resampling `n` samples from `source_hz` to
/// `target_hz`, anchored at t = 0 and dropping the trailing partial interval.
pub fn resampled_len(n: usize, source_hz: f64, target_hz: f64) -> usize {
    let span = (n.saturating_sub(1)) as f64 * target_hz / source_hz;
    // Guard against 2.9999999 style round-off on exact multiples.
    (span + 1e-9).floor() as usize + 1
}

/// Resamples every channel onto `t_i = i / target_hz` with a natural cubic
/// spline. Equal rates return an exact copy.
pub fn resample(recording: &CanonicalRecording, target_hz: f64) -> Result<CanonicalRecording> {
    if !(target_hz.is_finite() && target_hz > 0.0) {
        return Err(Error::InvalidInput(format!(
            "target rate must be positive, got {target_hz}"
        )));
    }
    recording.validate()?;
    if recording.sample_rate == target_hz {
        return Ok(recording.clone());
    }
    let n = recording.n_samples();
    if n < 4 {
        return Err(Error::InvalidInput(format!(
            "recording {} has {n} samples; resampling needs at least 4",
            recording.recording_id
        )));
    }
    let c = recording.n_channels();
    let h = 1.0 / recording.sample_rate;
    let n_out = resampled_len(n, recording.sample_rate, target_hz);
    let mut out = vec![0.0; n_out * c];
    for ch in 0..c {
        let spline = NaturalCubicSpline::uniform(&recording.channel(ch), h)?;
        for i in 0..n_out {
            out[i * c + ch] = spline.eval(i as f64 / target_hz);
        }
    }
    Ok(CanonicalRecording {
        sample_rate: target_hz,
        samples: out,
        start_offset: resampled_len(recording.start_offset + 1, recording.sample_rate, target_hz)
            - 1,
        ..recording.clone()
    })
}
