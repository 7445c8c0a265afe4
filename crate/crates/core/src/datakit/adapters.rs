//! Readers for the public dataset layouts.
//!
//! Every adapter splits raw streams into maximal runs of one activity by one
//! subject, drops unlabeled spans and returns canonical recordings.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::canonical::read_canonical_file;
use super::recording::{check_consistent_channels, CanonicalRecording};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetAdapter {
    Mhealth,
    WisdmWatch,
    Spar,
    CanonicalCsv,
}

impl DatasetAdapter {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "mhealth" => Ok(Self::Mhealth),
            "wisdm_watch" | "wisdm" => Ok(Self::WisdmWatch),
            "spar" => Ok(Self::Spar),
            "canonical_csv" | "canonical" => Ok(Self::CanonicalCsv),
            other => Err(Error::Config(format!(
                "unknown dataset adapter {other:?} (expected mhealth, wisdm_watch, spar or canonical_csv)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Mhealth => "mhealth",
            Self::WisdmWatch => "wisdm_watch",
            Self::Spar => "spar",
            Self::CanonicalCsv => "canonical_csv",
        }
    }
}

/// MHEALTH log files carry no timestamps; this is the rate documented with
/// the dataset.
pub const MHEALTH_RATE_HZ: f64 = 50.0;
pub const WISDM_RATE_HZ: f64 = 20.0;
pub const SPAR_RATE_HZ: f64 = 50.0;

/// WISDM subjects with absent or duplicated readings.
pub const WISDM_EXCLUDED_SUBJECTS: [u32; 4] = [1637, 1638, 1639, 1640];

/// WISDM activity codes in label order (there is no code `N`).
pub const WISDM_ACTIVITY_CODES: &str = "ABCDEFGHIJKLMOPQRS";

pub const MHEALTH_CHANNELS: [&str; 23] = [
    "chest_acc_x",
    "chest_acc_y",
    "chest_acc_z",
    "ecg_lead1",
    "ecg_lead2",
    "ankle_acc_x",
    "ankle_acc_y",
    "ankle_acc_z",
    "ankle_gyro_x",
    "ankle_gyro_y",
    "ankle_gyro_z",
    "ankle_mag_x",
    "ankle_mag_y",
    "ankle_mag_z",
    "arm_acc_x",
    "arm_acc_y",
    "arm_acc_z",
    "arm_gyro_x",
    "arm_gyro_y",
    "arm_gyro_z",
    "arm_mag_x",
    "arm_mag_y",
    "arm_mag_z",
];

pub const IMU6_CHANNELS: [&str; 6] = ["acc_x", "acc_y", "acc_z", "gyro_x", "gyro_y", "gyro_z"];

pub fn ingest_dataset(root: &Path, adapter: DatasetAdapter) -> Result<Vec<CanonicalRecording>> {
    let recs = match adapter {
        DatasetAdapter::Mhealth => ingest_mhealth(root)?,
        DatasetAdapter::WisdmWatch => ingest_wisdm_watch(root)?,
        DatasetAdapter::Spar => ingest_spar(root)?,
        DatasetAdapter::CanonicalCsv => ingest_canonical(root)?,
    };
    check_consistent_channels(&recs)?;
    Ok(recs)
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn sorted_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    Ok(entries)
}

fn file_name(p: &Path) -> &str {
    p.file_name().and_then(|n| n.to_str()).unwrap_or("")
}

/// Splits labelled rows into maximal same-label runs.
fn label_runs(labels: &[i64]) -> Vec<(i64, std::ops::Range<usize>)> {
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 1..=labels.len() {
        if i == labels.len() || labels[i] != labels[start] {
            if i > start {
                runs.push((labels[start], start..i));
            }
            start = i;
        }
    }
    runs
}

fn ingest_canonical(root: &Path) -> Result<Vec<CanonicalRecording>> {
    if root.is_file() {
        return read_canonical_file(root);
    }
    let files: Vec<PathBuf> = sorted_dir(root)?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    if files.is_empty() {
        return Err(Error::ingest(root, None, "no *.csv files found"));
    }
    let mut out = Vec::new();
    for f in files {
        out.extend(read_canonical_file(&f)?);
    }
    Ok(out)
}

/// `mHealth_subject<N>.log`: 23 whitespace separated channels then a label
/// (0 = unlabeled, 1..=12 activities).
fn ingest_mhealth(root: &Path) -> Result<Vec<CanonicalRecording>> {
    let mut files: Vec<(u32, PathBuf)> = sorted_dir(root)?
        .into_iter()
        .filter_map(|p| {
            let id = file_name(&p)
                .strip_prefix("mHealth_subject")?
                .strip_suffix(".log")?
                .parse()
                .ok()?;
            Some((id, p))
        })
        .collect();
    if files.is_empty() {
        return Err(Error::ingest(
            root.join("mHealth_subject1.log"),
            None,
            "missing file: no mHealth_subject<N>.log files in dataset root",
        ));
    }
    files.sort();
    let mut out = Vec::new();
    for (id, path) in files {
        let text = read_to_string(&path)?;
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 24 {
                return Err(Error::ingest(
                    &path,
                    Some(lineno + 1),
                    format!("expected 24 columns, found {}", fields.len()),
                ));
            }
            for f in &fields[..23] {
                values.push(f.parse::<f64>().map_err(|_| {
                    Error::ingest(&path, Some(lineno + 1), format!("bad number {f:?}"))
                })?);
            }
            let label: f64 = fields[23].parse().map_err(|_| {
                Error::ingest(&path, Some(lineno + 1), format!("bad label {:?}", fields[23]))
            })?;
            labels.push(label as i64);
        }
        for (k, (label, range)) in label_runs(&labels).into_iter().enumerate() {
            if label <= 0 {
                continue;
            }
            out.push(CanonicalRecording::new(
                format!("subject{id}"),
                (label - 1) as usize,
                format!("mhealth_s{id}_r{k}"),
                MHEALTH_RATE_HZ,
                MHEALTH_CHANNELS.iter().map(|s| s.to_string()).collect(),
                values[range.start * 23..range.end * 23].to_vec(),
            )?);
        }
    }
    Ok(out)
}

struct WisdmRow {
    code: char,
    t: i64,
    xyz: [f64; 3],
}

fn parse_wisdm_file(path: &Path, subject: u32) -> Result<Vec<WisdmRow>> {
    let text = read_to_string(path)?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim().trim_end_matches(';');
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::ingest(path, Some(lineno + 1), msg);
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 6 {
            return Err(err(format!("expected 6 fields, found {}", f.len())));
        }
        if f[0].parse::<u32>().ok() != Some(subject) {
            return Err(err(format!("subject {:?} does not match file", f[0])));
        }
        let code = f[1]
            .chars()
            .next()
            .filter(|c| f[1].len() == 1 && WISDM_ACTIVITY_CODES.contains(*c))
            .ok_or_else(|| err(format!("unknown activity code {:?}", f[1])))?;
        let t = f[2]
            .parse::<i64>()
            .map_err(|_| err(format!("bad timestamp {:?}", f[2])))?;
        let mut xyz = [0.0; 3];
        for (k, v) in f[3..].iter().enumerate() {
            xyz[k] = v
                .parse()
                .map_err(|_| err(format!("bad number {v:?}")))?;
        }
        rows.push(WisdmRow { code, t, xyz });
    }
    Ok(rows)
}

/// Splits one WISDM stream into activity runs, rejecting duplicated
/// timestamps inside a run.
fn wisdm_runs(rows: &[WisdmRow], path: &Path) -> Result<Vec<(char, std::ops::Range<usize>)>> {
    let codes: Vec<i64> = rows.iter().map(|r| r.code as i64).collect();
    let runs = label_runs(&codes);
    for (_, range) in &runs {
        let mut ts: Vec<i64> = rows[range.clone()].iter().map(|r| r.t).collect();
        ts.sort_unstable();
        if let Some(w) = ts.windows(2).find(|w| w[0] == w[1]) {
            let line = rows[range.clone()].iter().position(|r| r.t == w[0]).unwrap() + range.start;
            return Err(Error::ingest(
                path,
                Some(line + 1),
                format!("duplicated timestamp {}", w[0]),
            ));
        }
    }
    Ok(runs
        .into_iter()
        .map(|(c, r)| (char::from_u32(c as u32).unwrap(), r))
        .collect())
}

fn wisdm_watch_dir(root: &Path, sensor: &str) -> Option<PathBuf> {
    [
        root.join("raw").join("watch").join(sensor),
        root.join("wisdm-dataset").join("raw").join("watch").join(sensor),
        root.join("watch").join(sensor),
    ]
    .into_iter()
    .find(|p| p.is_dir())
}

/// `raw/watch/{accel,gyro}/data_<id>_{accel,gyro}_watch.txt` with rows
/// `id,code,timestamp_ns,x,y,z;`. Accelerometer and gyroscope runs of the
/// same activity are paired by order and truncated to the shorter length.
fn ingest_wisdm_watch(root: &Path) -> Result<Vec<CanonicalRecording>> {
    let accel_dir = wisdm_watch_dir(root, "accel").ok_or_else(|| {
        Error::ingest(root.join("raw/watch/accel"), None, "missing directory")
    })?;
    let gyro_dir = wisdm_watch_dir(root, "gyro")
        .ok_or_else(|| Error::ingest(root.join("raw/watch/gyro"), None, "missing directory"))?;
    let mut subjects: Vec<u32> = sorted_dir(&accel_dir)?
        .iter()
        .filter_map(|p| {
            file_name(p)
                .strip_prefix("data_")?
                .strip_suffix("_accel_watch.txt")?
                .parse()
                .ok()
        })
        .filter(|id| !WISDM_EXCLUDED_SUBJECTS.contains(id))
        .collect();
    subjects.sort();
    if subjects.is_empty() {
        return Err(Error::ingest(
            accel_dir.join("data_<id>_accel_watch.txt"),
            None,
            "missing files: no watch accelerometer files",
        ));
    }
    let names: Vec<String> = IMU6_CHANNELS.iter().map(|s| s.to_string()).collect();
    let mut out = Vec::new();
    for id in subjects {
        let accel_path = accel_dir.join(format!("data_{id}_accel_watch.txt"));
        let gyro_path = gyro_dir.join(format!("data_{id}_gyro_watch.txt"));
        if !gyro_path.is_file() {
            return Err(Error::ingest(&gyro_path, None, "missing file"));
        }
        let accel = parse_wisdm_file(&accel_path, id)?;
        let gyro = parse_wisdm_file(&gyro_path, id)?;
        let accel_runs = wisdm_runs(&accel, &accel_path)?;
        let gyro_runs = wisdm_runs(&gyro, &gyro_path)?;
        let mut used = vec![false; gyro_runs.len()];
        for (k, (code, ar)) in accel_runs.iter().enumerate() {
            let Some(g) = (0..gyro_runs.len()).find(|&g| !used[g] && gyro_runs[g].0 == *code)
            else {
                log::warn!("WISDM subject {id}: no gyroscope run for activity {code}");
                continue;
            };
            used[g] = true;
            let gr = &gyro_runs[g].1;
            let n = ar.len().min(gr.len());
            let mut samples = Vec::with_capacity(n * 6);
            for i in 0..n {
                samples.extend_from_slice(&accel[ar.start + i].xyz);
                samples.extend_from_slice(&gyro[gr.start + i].xyz);
            }
            let activity = WISDM_ACTIVITY_CODES.find(*code).unwrap();
            out.push(CanonicalRecording::new(
                id.to_string(),
                activity,
                format!("wisdm_{id}_{code}_{k}"),
                WISDM_RATE_HZ,
                names.clone(),
                samples,
            )?);
        }
    }
    Ok(out)
}

/// Parses `S<subject>_E<exercise>_<L|R>` out of a SPAR file stem.
fn parse_spar_name(stem: &str) -> Option<(u32, u32, char)> {
    let mut parts = stem.split('_');
    let subject = parts.next()?.strip_prefix(['S', 's'])?.parse().ok()?;
    let exercise = parts.next()?.strip_prefix(['E', 'e'])?.parse().ok()?;
    let side = parts.next()?.chars().next()?.to_ascii_uppercase();
    matches!(side, 'L' | 'R').then_some((subject, exercise, side))
}

/// One CSV per subject, exercise and shoulder (`S<n>_E<m>_<L|R>*.csv`) with
/// six IMU columns, optionally preceded by a timestamp column and a header
/// row. Each shoulder is treated as its own subject.
fn ingest_spar(root: &Path) -> Result<Vec<CanonicalRecording>> {
    let mut files: Vec<((u32, u32, char), PathBuf)> = sorted_dir(root)?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .filter_map(|p| {
            let key = parse_spar_name(p.file_stem()?.to_str()?)?;
            Some((key, p))
        })
        .collect();
    if files.is_empty() {
        return Err(Error::ingest(
            root.join("S<n>_E<m>_<L|R>.csv"),
            None,
            "missing files: no SPAR exercise files in dataset root",
        ));
    }
    files.sort();
    let min_ex = files.iter().map(|((_, e, _), _)| *e).min().unwrap();
    let names: Vec<String> = IMU6_CHANNELS.iter().map(|s| s.to_string()).collect();
    let mut out = Vec::new();
    for ((subject, exercise, side), path) in files {
        let text = read_to_string(&path)?;
        let mut samples = Vec::new();
        let mut last_t: Option<f64> = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let parsed: std::result::Result<Vec<f64>, _> =
                fields.iter().map(|f| f.parse::<f64>()).collect();
            let values = match parsed {
                Ok(v) => v,
                Err(_) if lineno == 0 => continue,
                Err(_) => {
                    return Err(Error::ingest(&path, Some(lineno + 1), "malformed row"));
                }
            };
            let imu = match values.len() {
                6 => &values[..],
                7 => {
                    let t = values[0];
                    if last_t == Some(t) {
                        return Err(Error::ingest(
                            &path,
                            Some(lineno + 1),
                            format!("duplicated timestamp {t}"),
                        ));
                    }
                    last_t = Some(t);
                    &values[1..]
                }
                n => {
                    return Err(Error::ingest(
                        &path,
                        Some(lineno + 1),
                        format!("expected 6 or 7 columns, found {n}"),
                    ))
                }
            };
            samples.extend_from_slice(imu);
        }
        if samples.is_empty() {
            return Err(Error::ingest(&path, None, "no samples"));
        }
        out.push(CanonicalRecording::new(
            format!("S{subject}_{side}"),
            (exercise - min_ex) as usize,
            format!("spar_S{subject}_{side}_E{exercise}"),
            SPAR_RATE_HZ,
            names.clone(),
            samples,
        )?);
    }
    Ok(out)
}
