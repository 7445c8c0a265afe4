use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::recording::{check_consistent_channels, CanonicalRecording};
use crate::{Error, Result};

const FIXED_COLUMNS: [&str; 4] = ["subject_id", "activity_id", "recording_id", "t_s"];

/// Writes recordings as long CSV:
/// `subject_id,activity_id,recording_id,t_s,<channels...>`, one row per
/// sample, rows contiguous per recording and sorted by time.
pub fn write_canonical_csv<W: Write>(out: W, recordings: &[CanonicalRecording]) -> Result<()> {
    check_consistent_channels(recordings)?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let channel_names: Vec<String> = recordings
        .first()
        .map(|r| r.channel_names.clone())
        .unwrap_or_default();
    let header: Vec<&str> = FIXED_COLUMNS
        .iter()
        .copied()
        .chain(channel_names.iter().map(String::as_str))
        .collect();
    w.write_record(&header).map_err(csv_err)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for rec in recordings {
        for i in 0..rec.n_samples() {
            row.clear();
            row.push(rec.subject_id.clone());
            row.push(rec.activity_id.to_string());
            row.push(rec.recording_id.clone());
            row.push((i as f64 / rec.sample_rate).to_string());
            row.extend(rec.row(i).iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}

pub fn write_canonical_file(path: &Path, recordings: &[CanonicalRecording]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_canonical_csv(BufWriter::new(f), recordings)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

struct Pending {
    subject_id: String,
    activity_id: usize,
    recording_id: String,
    times: Vec<f64>,
    samples: Vec<f64>,
    first_line: usize,
}

/// Parses the canonical CSV produced by [`write_canonical_csv`].
///
/// The sample rate of each recording is inferred from its timestamps, which
/// must be strictly increasing and uniformly spaced.
pub fn read_canonical_csv<R: Read>(input: R, path: &Path) -> Result<Vec<CanonicalRecording>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = reader
        .headers()
        .map_err(|e| Error::ingest(path, Some(1), e.to_string()))?
        .clone();
    if header.len() < 5 || header.iter().take(4).ne(FIXED_COLUMNS.iter().copied()) {
        return Err(Error::ingest(
            path,
            Some(1),
            format!(
                "expected header {},<channels...>",
                FIXED_COLUMNS.join(",")
            ),
        ));
    }
    let channel_names: Vec<String> = header.iter().skip(4).map(str::to_string).collect();
    let c = channel_names.len();

    let mut done: Vec<CanonicalRecording> = Vec::new();
    let mut seen_ids = std::collections::HashSet::new();
    let mut cur: Option<Pending> = None;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize);
            Error::ingest(path, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != c + 4 {
            return Err(Error::ingest(
                path,
                Some(line),
                format!("expected {} fields, found {}", c + 4, record.len()),
            ));
        }
        let recording_id = &record[2];
        let parse = |idx: usize| -> Result<f64> {
            record[idx].trim().parse::<f64>().map_err(|_| {
                Error::ingest(
                    path,
                    Some(line),
                    format!("column {} is not a number: {:?}", header.get(idx).unwrap_or("?"), &record[idx]),
                )
            })
        };
        let activity_id: usize = record[1].trim().parse().map_err(|_| {
            Error::ingest(path, Some(line), format!("bad activity_id {:?}", &record[1]))
        })?;
        let t = parse(3)?;
        let starts_new = cur.as_ref().is_none_or(|p| p.recording_id != recording_id);
        if starts_new {
            if let Some(p) = cur.take() {
                done.push(finish(p, &channel_names, path)?);
            }
            if !seen_ids.insert(recording_id.to_string()) {
                return Err(Error::ingest(
                    path,
                    Some(line),
                    format!("rows of recording {recording_id} are not contiguous"),
                ));
            }
            cur = Some(Pending {
                subject_id: record[0].to_string(),
                activity_id,
                recording_id: recording_id.to_string(),
                times: Vec::new(),
                samples: Vec::new(),
                first_line: line,
            });
        }
        let p = cur.as_mut().unwrap();
        if p.subject_id != record[0] || p.activity_id != activity_id {
            return Err(Error::ingest(
                path,
                Some(line),
                format!("recording {recording_id} changes subject or activity"),
            ));
        }
        if let Some(&prev) = p.times.last() {
            if t == prev {
                return Err(Error::ingest(
                    path,
                    Some(line),
                    format!("duplicated timestamp {t} in recording {recording_id}"),
                ));
            }
            if t < prev {
                return Err(Error::ingest(
                    path,
                    Some(line),
                    format!("timestamps of recording {recording_id} are not increasing"),
                ));
            }
        }
        p.times.push(t);
        for idx in 4..c + 4 {
            let v = parse(idx)?;
            if v.is_nan() {
                return Err(Error::ingest(path, Some(line), "missing value (NaN)"));
            }
            p.samples.push(v);
        }
    }
    if let Some(p) = cur.take() {
        done.push(finish(p, &channel_names, path)?);
    }
    Ok(done)
}

fn finish(p: Pending, channel_names: &[String], path: &Path) -> Result<CanonicalRecording> {
    let n = p.times.len();
    if n < 2 {
        return Err(Error::ingest(
            path,
            Some(p.first_line),
            format!(
                "recording {} has a single sample; cannot infer its sample rate",
                p.recording_id
            ),
        ));
    }
    let span = p.times[n - 1] - p.times[0];
    let rate = ((n - 1) as f64 / span * 1e6).round() / 1e6;
    let dt = 1.0 / rate;
    if let Some(i) = (1..n).find(|&i| ((p.times[i] - p.times[i - 1]) - dt).abs() > 0.01 * dt) {
        return Err(Error::ingest(
            path,
            Some(p.first_line + i),
            format!("recording {} is not uniformly sampled", p.recording_id),
        ));
    }
    CanonicalRecording::new(
        p.subject_id,
        p.activity_id,
        p.recording_id,
        rate,
        channel_names.to_vec(),
        p.samples,
    )
}

pub fn read_canonical_file(path: &Path) -> Result<Vec<CanonicalRecording>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_canonical_csv(std::io::BufReader::new(f), path)
}
