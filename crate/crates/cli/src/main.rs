//! `perhar` command-line interface.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 runtime or numeric error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use perhar::config::RunConfig;
use perhar::datakit::{
    ingest_dataset, read_canonical_file, synth_dataset, window_len, write_canonical_file,
    DatasetAdapter, SynthSpec, WindowSegment,
};
use perhar::evalkit::{emit_report, run_experiment, ExperimentKind};
use perhar::model::{InputSpec, ModelBody, ModelKind, PefModel, TrainedModel};
use perhar::personalize::{knn_classify, ood_score, softmax_ood_score, ReferenceBank, ReferenceSet};
use perhar::trainkit::{train_classifier, train_triplet, LossKind, TrainLog};
use perhar::{Error, ErrorClass, Result};

#[derive(Parser)]
#[command(name = "perhar", version, about = "Personalized inertial activity recognition")]
struct Cli {
    /// Log progress to standard error (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a public dataset to canonical CSV.
    Ingest {
        /// mhealth, wisdm, spar or canonical.
        #[arg(long)]
        dataset: String,
        /// Dataset directory [default: $PERHAR_DATA_ROOT].
        #[arg(long)]
        root: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the model selected by `model.kind` on every subject of the dataset.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `training.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the per-epoch training log as CSV.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Embed every window of a canonical CSV.
    Embed {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also store the embeddings as per-subject reference sets.
        #[arg(long)]
        reference_out: Option<PathBuf>,
    },
    /// Classify windows against subject reference sets and score them for OOD.
    Classify {
        #[arg(long)]
        model: PathBuf,
        /// Reference sets from `embed --reference-out` (not needed for fcn).
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Neighbors for the vote and the OOD score.
        #[arg(long, default_value_t = 3)]
        k: usize,
    },
    /// Run a cross-validated experiment and write report files.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        /// classification, ood, generalization, refsize or embsize.
        #[arg(long)]
        experiment: String,
        /// Output directory [default: `output.dir` from the config].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Folds run in parallel [default: `evaluation.jobs`, 1].
        #[arg(long)]
        jobs: Option<usize>,
        /// Overrides `evaluation.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate the synthetic dataset described by a TOML spec.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    perhar::tune_allocator();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Usage => 1,
                ErrorClass::Data => 2,
                ErrorClass::Runtime => 3,
            })
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Ingest { dataset, root, out } => {
            let adapter = DatasetAdapter::parse(&dataset).map_err(|e| Error::Config(e.to_string()))?;
            let root = match root {
                Some(r) => r,
                None => std::env::var_os(perhar::config::DATA_ROOT_ENV)
                    .map(PathBuf::from)
                    .ok_or_else(|| Error::Config("--root not given and PERHAR_DATA_ROOT is unset".into()))?,
            };
            let recs = ingest_dataset(&root, adapter)?;
            write_canonical_file(&out, &recs)
        }
        Command::Train {
            config,
            out,
            seed,
            log,
        } => {
            let mut cfg = RunConfig::from_file(&config)?;
            if let Some(s) = seed {
                cfg.training.seed = s;
            }
            let (model, train_log) = train(&cfg)?;
            model.save(&out)?;
            if let Some(path) = log {
                let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
                train_log.write_csv(f)?;
            }
            println!("{}", model.embedder_id()?);
            Ok(())
        }
        Command::Embed {
            model,
            input,
            out,
            reference_out,
        } => {
            let model = TrainedModel::load(&model)?;
            let windows = model.input.prepare(&read_canonical_file(&input)?)?;
            let emb = model.embed(&windows)?;
            write_embeddings(&out, &windows, &emb)?;
            if let Some(path) = reference_out {
                let id = model.embedder_id()?;
                let mut bank = ReferenceBank::default();
                for (subject, rows) in by_subject(&windows) {
                    let segs: Vec<WindowSegment> = rows.iter().map(|&i| windows[i].clone()).collect();
                    let data: Vec<f32> = rows.iter().flat_map(|&i| emb.row(i).to_vec()).collect();
                    let m = perhar::nncore::Matrix::from_vec(rows.len(), emb.cols, data)?;
                    bank.insert(ReferenceSet::from_matrix(&subject, &m, &segs, id.clone(), model.kind.is_deep())?)?;
                }
                bank.save(&path)?;
            }
            Ok(())
        }
        Command::Classify {
            model,
            reference,
            input,
            out,
            k,
        } => classify(&model, reference.as_deref(), &input, &out, k),
        Command::Evaluate {
            config,
            experiment,
            out,
            jobs,
            seed,
        } => {
            let kind = ExperimentKind::parse(&experiment)?;
            let mut cfg = RunConfig::from_file(&config)?;
            if let Some(j) = jobs {
                cfg.evaluation.jobs = j;
            }
            if let Some(s) = seed {
                cfg.evaluation.seed = s;
            }
            let out = out
                .or_else(|| cfg.output.dir.clone())
                .ok_or_else(|| Error::Config("no --out given and output.dir is unset".into()))?;
            cfg.validate()?;
            let recs = cfg.load_recordings()?;
            let report = run_experiment(kind, &cfg, &recs)?;
            for r in &report.results {
                println!(
                    "{:<17} {:<7} {:<16} {:.4} +/- {:.4}",
                    r.model.name(),
                    r.point,
                    r.metric,
                    r.metrics.mean,
                    r.metrics.std
                );
            }
            emit_report(&report, &out)?;
            Ok(())
        }
        Command::Synth { spec, out } => {
            let text = std::fs::read_to_string(&spec).map_err(|e| Error::io(&spec, e))?;
            let spec: SynthSpec = toml::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {}", spec.display(), e.message())))?;
            write_canonical_file(&out, &synth_dataset(&spec)?)
        }
    }
}

/// Trains `model.kind` on all subjects of the configured dataset.
fn train(cfg: &RunConfig) -> Result<(TrainedModel, TrainLog)> {
    let recs = cfg.load_recordings()?;
    let first = recs
        .first()
        .ok_or_else(|| Error::InvalidInput("dataset has no recordings".into()))?;
    let p = &cfg.preprocessing;
    let input = InputSpec {
        sample_rate: first.sample_rate,
        window_seconds: cfg.window_seconds(),
        overlap: p.overlap,
        channels: first.channel_names.clone(),
        n_channels: first.n_channels(),
        window_len: window_len(cfg.window_seconds(), first.sample_rate),
    };
    let windows = input.prepare(&recs)?;
    let kind = cfg.model.kind;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.training.seed);
    let arch = cfg.model.fcn_config(input.n_channels, cfg.model.embed_dim);
    let (body, log) = match cfg.training.for_kind(kind, cfg.training.seed) {
        None => (
            ModelBody::Pef(PefModel::fit(&windows, cfg.model.pef_dim, cfg.model.pef_trees, cfg.training.seed)?),
            TrainLog::default(),
        ),
        Some(tc) if tc.loss == LossKind::Cce => {
            let (m, log) = train_classifier(&windows, &[], &arch, &tc, &mut rng)?;
            (ModelBody::Fcn(m), log)
        }
        Some(tc) => {
            let (m, log) = train_triplet(&windows, &[], &arch, &tc, &mut rng)?;
            (ModelBody::Fcn(m), log)
        }
    };
    Ok((TrainedModel { kind, input, body }, log))
}

fn by_subject(windows: &[WindowSegment]) -> std::collections::BTreeMap<String, Vec<usize>> {
    let mut m: std::collections::BTreeMap<String, Vec<usize>> = Default::default();
    for (i, w) in windows.iter().enumerate() {
        m.entry(w.subject_id.clone()).or_default().push(i);
    }
    m
}

fn csv_out(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Format(format!("{}: {e}", path.display()))
}

fn window_fields(w: &WindowSegment) -> Vec<String> {
    vec![
        w.subject_id.clone(),
        w.source_recording_id.clone(),
        w.start_index.to_string(),
        w.activity_id.to_string(),
    ]
}

fn write_embeddings(path: &Path, windows: &[WindowSegment], emb: &perhar::nncore::Matrix<f32>) -> Result<()> {
    let mut w = csv_out(path)?;
    let mut header: Vec<String> = ["subject_id", "recording_id", "start_index", "activity_id"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..emb.cols).map(|j| format!("e{j}")));
    w.write_record(&header).map_err(csv_err(path))?;
    for (i, win) in windows.iter().enumerate() {
        let mut rec = window_fields(win);
        rec.extend(emb.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn classify(model_path: &Path, reference: Option<&Path>, input: &Path, out: &Path, k: usize) -> Result<()> {
    let model = TrainedModel::load(model_path)?;
    let windows = model.input.prepare(&read_canonical_file(input)?)?;
    let mut w = csv_out(out)?;
    w.write_record(["subject_id", "recording_id", "start_index", "activity_id", "predicted", "ood_score"])
        .map_err(csv_err(out))?;
    if model.kind == ModelKind::Fcn {
        let probs = model.probabilities(&windows)?;
        for (i, win) in windows.iter().enumerate() {
            let row = probs.row(i);
            let pred = (0..row.len())
                .max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a)))
                .unwrap_or(0);
            let mut rec = window_fields(win);
            rec.push(pred.to_string());
            rec.push(softmax_ood_score(row)?.score.to_string());
            w.write_record(&rec).map_err(csv_err(out))?;
        }
        return w.flush().map_err(|e| Error::io(out, e));
    }
    let reference = reference
        .ok_or_else(|| Error::Config(format!("--reference is required for {} models", model.kind)))?;
    let bank = ReferenceBank::load(reference)?;
    let model_id = model.embedder_id()?;
    let bank_id = bank.embedder_id().unwrap_or_default().to_string();
    if model_id != bank_id {
        return Err(Error::EmbedderMismatch {
            model: model_id,
            reference: bank_id,
        });
    }
    let emb = model.embed(&windows)?;
    for (i, win) in windows.iter().enumerate() {
        let set = bank.get(&win.subject_id)?;
        let k_eff = k.min(set.len());
        let pred = knn_classify(set, emb.row(i), k_eff)?;
        let score = ood_score(set, emb.row(i), k_eff)?;
        let mut rec = window_fields(win);
        rec.push(pred.label.to_string());
        rec.push(score.score.to_string());
        w.write_record(&rec).map_err(csv_err(out))?;
    }
    w.flush().map_err(|e| Error::io(out, e))
}
