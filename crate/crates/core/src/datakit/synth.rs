use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::recording::CanonicalRecording;
use crate::{Error, Result};

/// Parameters of the synthetic multi-subject dataset.
///
/// Each class owns a per-channel signature (fundamental frequency,
/// amplitude, phase, offset, second-harmonic weight). Each subject distorts
/// every signature with its own tempo, gain, offset and phase, so classes
/// stay separable within a subject but overlap across subjects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_subjects: usize,
    pub n_classes: usize,
    pub n_channels: usize,
    pub sample_rate: f64,
    pub seconds_per_class: f64,
    pub seed: u64,
    /// Standard deviation of additive Gaussian noise.
    #[serde(default = "default_noise")]
    pub noise_std: f64,
    /// Relative spread of subject tempo and gain distortions.
    #[serde(default = "default_subject_spread")]
    pub subject_spread: f64,
    /// Frequency of class 0 in Hz; later classes step up by `class_step_hz`.
    #[serde(default = "default_base_hz")]
    pub base_hz: f64,
    #[serde(default = "default_class_step_hz")]
    pub class_step_hz: f64,
}

fn default_noise() -> f64 {
    0.3
}
fn default_subject_spread() -> f64 {
    0.25
}
fn default_base_hz() -> f64 {
    0.8
}
fn default_class_step_hz() -> f64 {
    0.45
}

impl SynthSpec {
    pub fn new(
        n_subjects: usize,
        n_classes: usize,
        n_channels: usize,
        sample_rate: f64,
        seconds_per_class: f64,
        seed: u64,
    ) -> Self {
        SynthSpec {
            n_subjects,
            n_classes,
            n_channels,
            sample_rate,
            seconds_per_class,
            seed,
            noise_std: default_noise(),
            subject_spread: default_subject_spread(),
            base_hz: default_base_hz(),
            class_step_hz: default_class_step_hz(),
        }
    }
}

struct ChannelSignature {
    freq: f64,
    amp: f64,
    phase: f64,
    offset: f64,
    harmonic: f64,
    harmonic_phase: f64,
}

struct SubjectStyle {
    tempo: f64,
    gain: Vec<f64>,
    offset: Vec<f64>,
    phase: Vec<f64>,
}

pub fn synth_dataset(spec: &SynthSpec) -> Result<Vec<CanonicalRecording>> {
    if spec.n_subjects == 0
        || spec.n_classes == 0
        || spec.n_channels == 0
        || !(spec.sample_rate > 0.0)
        || !(spec.seconds_per_class > 0.0)
    {
        return Err(Error::InvalidInput(format!(
            "synthetic dataset counts must be positive: {spec:?}"
        )));
    }
    let c = spec.n_channels;
    let mut class_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    class_rng.set_stream(0);
    let signatures: Vec<Vec<ChannelSignature>> = (0..spec.n_classes)
        .map(|k| {
            let base = spec.base_hz + spec.class_step_hz * k as f64;
            (0..c)
                .map(|_| ChannelSignature {
                    freq: base * class_rng.random_range(0.9..1.1),
                    amp: class_rng.random_range(0.5..1.5),
                    phase: class_rng.random_range(0.0..TAU),
                    offset: class_rng.random_range(-1.0..1.0),
                    harmonic: class_rng.random_range(0.0..0.6),
                    harmonic_phase: class_rng.random_range(0.0..TAU),
                })
                .collect()
        })
        .collect();

    let n = (spec.seconds_per_class * spec.sample_rate).round() as usize;
    let names: Vec<String> = (0..c).map(|i| format!("ch_{i}")).collect();
    let mut out = Vec::with_capacity(spec.n_subjects * spec.n_classes);
    for s in 0..spec.n_subjects {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(1 + s as u64);
        let spread = spec.subject_spread;
        let gain_dist = Normal::new(0.0, spread).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let style = SubjectStyle {
            tempo: rng.random_range(1.0 - spread..=1.0 + spread),
            gain: (0..c).map(|_| gain_dist.sample(&mut rng).exp()).collect(),
            offset: (0..c).map(|_| gain_dist.sample(&mut rng) * 2.0).collect(),
            phase: (0..c).map(|_| rng.random_range(0.0..TAU)).collect(),
        };
        let noise =
            Normal::new(0.0, spec.noise_std).map_err(|e| Error::InvalidInput(e.to_string()))?;
        for (k, sig) in signatures.iter().enumerate() {
            let mut samples = Vec::with_capacity(n * c);
            for i in 0..n {
                let t = i as f64 / spec.sample_rate;
                for ch in 0..c {
                    let g = &sig[ch];
                    let w = TAU * g.freq * style.tempo * t;
                    let v = g.offset
                        + style.offset[ch]
                        + style.gain[ch]
                            * g.amp
                            * ((w + g.phase + style.phase[ch]).sin()
                                + g.harmonic * (2.0 * w + g.harmonic_phase).sin());
                    samples.push(v + noise.sample(&mut rng));
                }
            }
            out.push(CanonicalRecording::new(
                format!("synth{s:02}"),
                k,
                format!("synth{s:02}_c{k}"),
                spec.sample_rate,
                names.clone(),
                samples,
            )?);
        }
    }
    Ok(out)
}
