use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::metrics::{auroc, quartiles, SubjectMetrics};
use super::report::{ExperimentKind, ExperimentReport, FoldSummary, ModelResult, Timing};
use crate::config::RunConfig;
use crate::datakit::{
    make_subject_folds, segment, temporal_split, window_len, CanonicalRecording, FoldPlan,
    SegmentPart, WindowSegment,
};
use crate::featkit::FEATURES_PER_CHANNEL;
use crate::model::{
    content_id, FcnModel, InputSpec, ModelBody, ModelKind, PefModel, TrainedModel,
};
use crate::nncore::Matrix;
use crate::personalize::{knn_classify, ood_score, softmax_ood_score, ReferenceSet};
use crate::trainkit::{train_classifier, train_triplet, LossKind};
use crate::{Error, Result};

/// RNG stream offsets; each fold owns a block of `FOLD_STREAMS` streams.
const FOLD_STREAMS: u64 = 1 << 16;
const HOLDOUT_STREAM: u64 = FOLD_STREAMS - 1;

pub fn run_classification_experiment(cfg: &RunConfig, recs: &[CanonicalRecording]) -> Result<ExperimentReport> {
    run_experiment(ExperimentKind::Classification, cfg, recs)
}

pub fn run_ood_experiment(cfg: &RunConfig, recs: &[CanonicalRecording]) -> Result<ExperimentReport> {
    run_experiment(ExperimentKind::Ood, cfg, recs)
}

pub fn run_generalization_experiment(cfg: &RunConfig, recs: &[CanonicalRecording]) -> Result<ExperimentReport> {
    run_experiment(ExperimentKind::Generalization, cfg, recs)
}

pub fn run_refsize_sweep(cfg: &RunConfig, recs: &[CanonicalRecording]) -> Result<ExperimentReport> {
    run_experiment(ExperimentKind::Refsize, cfg, recs)
}

pub fn run_embsize_sweep(cfg: &RunConfig, recs: &[CanonicalRecording]) -> Result<ExperimentReport> {
    run_experiment(ExperimentKind::Embsize, cfg, recs)
}

/// Number of in-distribution classes kept for OOD-style runs:
/// `floor((1 - ood_fraction) * n)`, at least 2.
pub fn in_distribution_count(n_classes: usize, ood_fraction: f64) -> Result<usize> {
    let n_in = (((1.0 - ood_fraction) * n_classes as f64) + 1e-9).floor() as usize;
    let n_in = n_in.max(2);
    if n_in >= n_classes {
        return Err(Error::InvalidInput(format!(
            "class holdout with {n_classes} classes leaves no out-of-distribution class \
             (need at least 3 classes)"
        )));
    }
    Ok(n_in)
}

/// Seeded per-fold class holdout; identical for every model kind.
pub fn heldout_classes(classes: &[usize], ood_fraction: f64, seed: u64, fold: usize) -> Result<Vec<usize>> {
    let n_in = in_distribution_count(classes.len(), ood_fraction)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fold as u64 * FOLD_STREAMS + HOLDOUT_STREAM);
    let mut shuffled = classes.to_vec();
    shuffled.sort_unstable();
    shuffled.shuffle(&mut rng);
    let mut out = shuffled[n_in..].to_vec();
    out.sort_unstable();
    Ok(out)
}

/// Validates an explicit holdout against the classes present in the data.
pub fn fixed_holdout(classes: &[usize], fixed: &[usize]) -> Result<Vec<usize>> {
    let mut out = fixed.to_vec();
    out.sort_unstable();
    out.dedup();
    if let Some(c) = out.iter().find(|c| !classes.contains(c)) {
        return Err(Error::Config(format!("evaluation.ood_classes names class {c}, which has no data")));
    }
    if classes.len() < out.len() + 2 {
        return Err(Error::Config(format!(
            "holding out {} of {} classes leaves fewer than two in-distribution classes",
            out.len(),
            classes.len()
        )));
    }
    Ok(out)
}

struct SubjectData {
    id: String,
    reference: Vec<WindowSegment>,
    test: Vec<WindowSegment>,
}

/// Per-fold contribution to one result row.
struct Partial {
    model: ModelKind,
    point: String,
    metric: &'static str,
    values: Vec<(String, f64, usize)>,
    fit_seconds: f64,
    inference_seconds: f64,
    model_bytes: usize,
    reference_bytes: Vec<usize>,
    flags: Vec<String>,
}

struct FoldOutput {
    summary: FoldSummary,
    partials: Vec<Partial>,
    warnings: Vec<String>,
}

struct Fitted {
    model: TrainedModel,
    id: String,
    bytes: usize,
    fit_seconds: f64,
}

struct Ctx<'a> {
    kind: ExperimentKind,
    cfg: &'a RunConfig,
    input: InputSpec,
    by_subject: BTreeMap<&'a str, Vec<&'a CanonicalRecording>>,
    plan: FoldPlan,
}

pub fn run_experiment(
    kind: ExperimentKind,
    cfg: &RunConfig,
    recs: &[CanonicalRecording],
) -> Result<ExperimentReport> {
    cfg.validate()?;
    let first = recs
        .first()
        .ok_or_else(|| Error::InvalidInput("dataset has no recordings".into()))?;
    if let Some(r) = recs.iter().find(|r| (r.sample_rate - first.sample_rate).abs() > 1e-9) {
        return Err(Error::InvalidInput(format!(
            "mixed sample rates ({} Hz and {} Hz in {}); set preprocessing.sample_rate",
            first.sample_rate, r.sample_rate, r.recording_id
        )));
    }
    let p = &cfg.preprocessing;
    let e = &cfg.evaluation;
    let input = InputSpec {
        sample_rate: first.sample_rate,
        window_seconds: cfg.window_seconds(),
        overlap: p.overlap,
        channels: first.channel_names.clone(),
        n_channels: first.n_channels(),
        window_len: window_len(cfg.window_seconds(), first.sample_rate),
    };
    let mut warnings = Vec::new();
    let models: Vec<ModelKind> = e
        .models
        .iter()
        .copied()
        .filter(|m| {
            let skip = m == &ModelKind::Fcn
                && matches!(
                    kind,
                    ExperimentKind::Generalization | ExperimentKind::Refsize | ExperimentKind::Embsize
                );
            if skip {
                warnings.push(format!("fcn is not evaluated in the {} experiment", kind.name()));
            }
            !skip
        })
        .collect();
    if models.is_empty() {
        return Err(Error::Config(format!(
            "no model kinds left to evaluate in the {} experiment",
            kind.name()
        )));
    }
    if kind == ExperimentKind::Embsize && models.contains(&ModelKind::Pef) {
        let total = FEATURES_PER_CHANNEL * input.n_channels;
        if let Some(d) = e.embsize_grid.iter().find(|&&d| d > total) {
            return Err(Error::Config(format!(
                "evaluation.embsize_grid has {d}, above the {total} engineered features \
                 available for pef"
            )));
        }
    }
    let classes: Vec<usize> = recs
        .iter()
        .map(|r| r.activity_id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut by_subject: BTreeMap<&str, Vec<&CanonicalRecording>> = BTreeMap::new();
    for r in recs {
        by_subject.entry(&r.subject_id).or_default().push(r);
    }
    let subjects: Vec<String> = by_subject.keys().map(|s| s.to_string()).collect();
    let plan = make_subject_folds(&subjects, e.k_folds, e.seed)?;
    let holdouts: Vec<Vec<usize>> = (0..e.k_folds)
        .map(|f| match kind {
            ExperimentKind::Ood | ExperimentKind::Generalization => match &e.ood_classes {
                Some(fixed) => fixed_holdout(&classes, fixed),
                None => heldout_classes(&classes, e.ood_class_fraction, e.seed, f),
            },
            _ => Ok(Vec::new()),
        })
        .collect::<Result<_>>()?;

    let mut resolved = cfg.clone();
    resolved.evaluation.models = models.clone();
    let ctx = Ctx {
        kind,
        cfg: &resolved,
        input,
        by_subject,
        plan,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(e.jobs)
        .build()
        .map_err(|err| Error::Config(format!("thread pool: {err}")))?;
    let outputs: Vec<FoldOutput> = pool.install(|| {
        (0..e.k_folds)
            .into_par_iter()
            .map(|f| {
                run_fold(&ctx, &models, f, &holdouts[f])
                    .map_err(|err| with_context(err, &format!("fold {f}")))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut folds = Vec::new();
    let mut grouped: Vec<((ModelKind, String, &'static str), Vec<Partial>)> = Vec::new();
    for out in outputs {
        folds.push(out.summary);
        warnings.extend(out.warnings);
        for p in out.partials {
            let key = (p.model, p.point.clone(), p.metric);
            match grouped.iter_mut().find(|(k, _)| *k == key) {
                Some((_, v)) => v.push(p),
                None => grouped.push((key, vec![p])),
            }
        }
    }
    let mut results = Vec::new();
    for ((model, point, metric), parts) in grouped {
        let mut per_subject = BTreeMap::new();
        let mut n_windows = BTreeMap::new();
        let mut refs = Vec::new();
        let mut flags = BTreeSet::new();
        for p in &parts {
            for (s, v, n) in &p.values {
                per_subject.insert(s.clone(), *v);
                n_windows.insert(s.clone(), *n);
            }
            refs.extend(&p.reference_bytes);
            flags.extend(p.flags.iter().cloned());
        }
        if per_subject.is_empty() {
            warnings.push(format!("{model} {point} {metric}: no subject could be scored"));
            continue;
        }
        let values: Vec<f64> = per_subject.values().copied().collect();
        let nf = parts.len() as f64;
        results.push(ModelResult {
            model,
            point,
            metric: metric.to_string(),
            boxplot: quartiles(&values)?,
            metrics: SubjectMetrics::from_values(per_subject)?,
            n_windows,
            timing: Timing {
                fit_seconds: parts.iter().map(|p| p.fit_seconds).sum::<f64>() / nf,
                inference_seconds: parts.iter().map(|p| p.inference_seconds).sum::<f64>() / nf,
                model_bytes: parts.iter().map(|p| p.model_bytes).max().unwrap_or(0),
                reference_bytes: if refs.is_empty() {
                    0
                } else {
                    refs.iter().sum::<usize>() / refs.len()
                },
            },
            flags: flags.into_iter().collect(),
        });
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(ExperimentReport {
        experiment: kind,
        dataset: cfg.dataset.name.clone(),
        config: resolved.resolved(),
        folds,
        results,
        warnings,
    })
}

fn with_context(err: Error, ctx: &str) -> Error {
    match err {
        Error::InvalidInput(m) => Error::InvalidInput(format!("{ctx}: {m}")),
        Error::Numeric(m) => Error::Numeric(format!("{ctx}: {m}")),
        Error::Shape(m) => Error::Shape(format!("{ctx}: {m}")),
        other => other,
    }
}

fn provenance_error(msg: String) -> Error {
    Error::InvalidInput(format!("provenance violation: {msg}"))
}

fn run_fold(ctx: &Ctx, models: &[ModelKind], fold: usize, heldout: &[usize]) -> Result<FoldOutput> {
    let cfg = ctx.cfg;
    let p = &cfg.preprocessing;
    let train_subjects = ctx.plan.train_subjects(fold);
    let test_subjects = ctx.plan.test_subjects(fold);
    let mut warnings = Vec::new();

    let window = cfg.window_seconds();
    // Training windows: whole recordings of training subjects.
    let mut train = Vec::new();
    for s in &train_subjects {
        for r in &ctx.by_subject[s.as_str()] {
            train.extend(segment(r, window, p.overlap)?);
        }
    }
    // Test subjects: split each recording in time before windowing.
    let mut subjects = Vec::new();
    for s in &test_subjects {
        let mut reference = Vec::new();
        let mut test = Vec::new();
        for r in &ctx.by_subject[s.as_str()] {
            let (a, b) = temporal_split(r, cfg.evaluation.reference_fraction)?;
            reference.extend(segment(&a, window, p.overlap)?);
            test.extend(segment(&b, window, p.overlap)?);
        }
        if test.is_empty() {
            warnings.push(format!("fold {fold}: subject {s} has no test windows; excluded"));
            continue;
        }
        subjects.push(SubjectData {
            id: s.clone(),
            reference,
            test,
        });
    }

    let train_set: BTreeSet<&str> = train_subjects.iter().map(|s| s.as_str()).collect();
    if let Some(w) = train.iter().find(|w| w.part != SegmentPart::Full || !train_set.contains(w.subject_id.as_str())) {
        return Err(provenance_error(format!(
            "training window {}@{} from subject {} ({:?})",
            w.source_recording_id, w.start_index, w.subject_id, w.part
        )));
    }
    for sd in &subjects {
        let bad_ref = sd.reference.iter().find(|w| w.part != SegmentPart::Reference || w.subject_id != sd.id);
        let bad_test = sd.test.iter().find(|w| w.part != SegmentPart::Test || w.subject_id != sd.id);
        if let Some(w) = bad_ref.or(bad_test) {
            return Err(provenance_error(format!(
                "window {}@{} ({:?}) in data of test subject {}",
                w.source_recording_id, w.start_index, w.part, sd.id
            )));
        }
        if train_set.contains(sd.id.as_str()) {
            return Err(provenance_error(format!("subject {} in both training and test", sd.id)));
        }
    }

    // Class holdout: train on in-distribution classes relabelled 0..n_in.
    let heldout_set: BTreeSet<usize> = heldout.iter().copied().collect();
    let all_classes: BTreeSet<usize> = train.iter().map(|w| w.activity_id).collect();
    let in_map: BTreeMap<usize, usize> = all_classes
        .iter()
        .filter(|c| !heldout_set.contains(c))
        .enumerate()
        .map(|(i, c)| (*c, i))
        .collect();
    let relabel = |ws: &[WindowSegment]| -> Vec<WindowSegment> {
        ws.iter()
            .filter_map(|w| {
                in_map.get(&w.activity_id).map(|&c| WindowSegment {
                    activity_id: c,
                    ..w.clone()
                })
            })
            .collect()
    };
    let train = if heldout.is_empty() { train } else { relabel(&train) };
    let val: Vec<WindowSegment> = if cfg.training.validate {
        let all: Vec<WindowSegment> = subjects.iter().flat_map(|s| s.test.iter().cloned()).collect();
        if heldout.is_empty() {
            all
        } else {
            relabel(&all)
        }
    } else {
        Vec::new()
    };

    let summary = FoldSummary {
        fold,
        train_subjects: train_subjects.clone(),
        test_subjects: subjects.iter().map(|s| s.id.clone()).collect(),
        heldout_classes: heldout.to_vec(),
        n_train_windows: train.len(),
    };
    log::info!(
        "{} fold {fold}: {} training windows, {} test subjects",
        ctx.kind.name(),
        train.len(),
        subjects.len()
    );

    let k = cfg.evaluation.knn_k;
    let mut partials = Vec::new();
    match ctx.kind {
        ExperimentKind::Classification | ExperimentKind::Refsize => {
            let fitted = fit_models(ctx, models, &train, &val, fold, None, 0)?;
            for (kind, f) in &fitted {
                if ctx.kind == ExperimentKind::Classification {
                    partials.push(classify_partial(*kind, "", f, &subjects, k, None, &mut warnings, fold)?);
                } else {
                    partials.extend(refsize_partials(*kind, f, &subjects, k, &cfg.evaluation.refsize_grid, &mut warnings, fold)?);
                }
            }
        }
        ExperimentKind::Embsize => {
            for (i, &d) in cfg.evaluation.embsize_grid.iter().enumerate() {
                let fitted = fit_models(ctx, models, &train, &val, fold, Some(d), i as u64 + 1)?;
                for (kind, f) in &fitted {
                    partials.push(classify_partial(*kind, &format!("d={d}"), f, &subjects, k, None, &mut warnings, fold)?);
                }
            }
        }
        ExperimentKind::Generalization => {
            let fitted = fit_models(ctx, models, &train, &val, fold, None, 0)?;
            for (kind, f) in &fitted {
                partials.push(classify_partial(*kind, "", f, &subjects, k, None, &mut warnings, fold)?);
                partials.push(classify_partial(*kind, "", f, &subjects, k, Some(&heldout_set), &mut warnings, fold)?);
            }
        }
        ExperimentKind::Ood => {
            let fitted = fit_models(ctx, models, &train, &val, fold, None, 0)?;
            for (kind, f) in &fitted {
                partials.push(ood_partial(*kind, f, &subjects, k, &in_map, &heldout_set, &mut warnings, fold)?);
            }
        }
    }
    Ok(FoldOutput {
        summary,
        partials,
        warnings,
    })
}

fn stream_of(kind: ModelKind) -> u64 {
    match kind {
        ModelKind::Fcn | ModelKind::Pdf => 1,
        ModelKind::Ptn => 2,
        ModelKind::PtnConventional => 3,
        ModelKind::Pef => 4,
    }
}

/// Trains every requested kind; `fcn` and `pdf` share one classifier.
fn fit_models(
    ctx: &Ctx,
    models: &[ModelKind],
    train: &[WindowSegment],
    val: &[WindowSegment],
    fold: usize,
    dim: Option<usize>,
    point: u64,
) -> Result<Vec<(ModelKind, Fitted)>> {
    let cfg = ctx.cfg;
    let mut cce: Option<(FcnModel, f64)> = None;
    let mut out = Vec::new();
    for &kind in models {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.evaluation.seed);
        rng.set_stream(fold as u64 * FOLD_STREAMS + point * 16 + stream_of(kind));
        let started = Instant::now();
        let embed_dim = dim.or(cfg.model.embed_dim);
        let arch = cfg.model.fcn_config(ctx.input.n_channels, embed_dim);
        let (body, seconds) = match cfg.training.for_kind(kind, cfg.evaluation.seed) {
            None => {
                let pef_dim = dim.or(cfg.model.pef_dim);
                let ranking_seed = cfg.evaluation.seed ^ (fold as u64 * FOLD_STREAMS + point * 16);
                log::info!("fold {fold}: fitting pef");
                let m = PefModel::fit(train, pef_dim, cfg.model.pef_trees, ranking_seed)?;
                (ModelBody::Pef(m), started.elapsed().as_secs_f64())
            }
            Some(tc) if tc.loss == LossKind::Cce => {
                if cce.is_none() {
                    log::info!("fold {fold}: training cross-entropy classifier");
                    let (m, _) = train_classifier(train, val, &arch, &tc, &mut rng)?;
                    cce = Some((m, started.elapsed().as_secs_f64()));
                }
                let (m, s) = cce.as_ref().unwrap();
                (ModelBody::Fcn(m.clone()), *s)
            }
            Some(tc) => {
                log::info!("fold {fold}: training {kind}");
                let (m, _) = train_triplet(train, val, &arch, &tc, &mut rng)?;
                (ModelBody::Fcn(m), started.elapsed().as_secs_f64())
            }
        };
        let model = TrainedModel {
            kind,
            input: ctx.input.clone(),
            body,
        };
        let bytes = model.to_bytes()?;
        out.push((
            kind,
            Fitted {
                id: content_id(&bytes),
                bytes: bytes.len(),
                model,
                fit_seconds: seconds,
            },
        ));
    }
    Ok(out)
}

fn argmax(row: &[f32]) -> usize {
    (0..row.len())
        .max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a)))
        .unwrap()
}

fn row_vec(m: &Matrix<f32>, r: usize) -> &[f32] {
    m.row(r)
}

/// Accuracy per subject. With `only` set, scores only windows of those
/// classes (reported as `heldout_accuracy`).
#[allow(clippy::too_many_arguments)]
fn classify_partial(
    kind: ModelKind,
    point: &str,
    f: &Fitted,
    subjects: &[SubjectData],
    k: usize,
    only: Option<&BTreeSet<usize>>,
    warnings: &mut Vec<String>,
    fold: usize,
) -> Result<Partial> {
    let started = Instant::now();
    let mut values = Vec::new();
    let mut reference_bytes = Vec::new();
    for sd in subjects {
        let test: Vec<WindowSegment> = match only {
            Some(c) => sd.test.iter().filter(|w| c.contains(&w.activity_id)).cloned().collect(),
            None => sd.test.clone(),
        };
        if test.is_empty() {
            continue;
        }
        let preds: Vec<usize> = if kind.is_personalized() {
            if sd.reference.is_empty() {
                warnings.push(format!("fold {fold}: subject {} has no reference windows; excluded for {kind}", sd.id));
                continue;
            }
            let set = reference_set(f, sd)?;
            reference_bytes.push(set.byte_size());
            let emb = f.model.embed(&test)?;
            let k_eff = k.min(set.len());
            (0..emb.rows)
                .map(|r| knn_classify(&set, row_vec(&emb, r), k_eff).map(|p| p.label))
                .collect::<Result<_>>()?
        } else {
            let probs = f.model.probabilities(&test)?;
            (0..probs.rows).map(|r| argmax(probs.row(r))).collect()
        };
        let correct = preds.iter().zip(&test).filter(|(p, w)| **p == w.activity_id).count();
        values.push((sd.id.clone(), correct as f64 / test.len() as f64, test.len()));
    }
    Ok(Partial {
        model: kind,
        point: point.to_string(),
        metric: if only.is_some() { "heldout_accuracy" } else { "accuracy" },
        values,
        fit_seconds: f.fit_seconds,
        inference_seconds: started.elapsed().as_secs_f64(),
        model_bytes: f.bytes,
        reference_bytes,
        flags: Vec::new(),
    })
}

fn reference_set(f: &Fitted, sd: &SubjectData) -> Result<ReferenceSet> {
    let emb = f.model.embed(&sd.reference)?;
    ReferenceSet::from_matrix(&sd.id, &emb, &sd.reference, f.id.clone(), f.model.kind.is_deep())
}

fn refsize_partials(
    kind: ModelKind,
    f: &Fitted,
    subjects: &[SubjectData],
    k: usize,
    grid: &[usize],
    warnings: &mut Vec<String>,
    fold: usize,
) -> Result<Vec<Partial>> {
    let mut points: Vec<Option<usize>> = grid.iter().map(|m| Some(*m)).collect();
    points.push(None);
    let mut out: Vec<Partial> = points
        .iter()
        .map(|m| Partial {
            model: kind,
            point: m.map_or("m=all".to_string(), |m| format!("m={m}")),
            metric: "accuracy",
            values: Vec::new(),
            fit_seconds: f.fit_seconds,
            inference_seconds: 0.0,
            model_bytes: f.bytes,
            reference_bytes: Vec::new(),
            flags: Vec::new(),
        })
        .collect();
    for sd in subjects {
        if sd.reference.is_empty() {
            warnings.push(format!("fold {fold}: subject {} has no reference windows; excluded for {kind}", sd.id));
            continue;
        }
        let full = reference_set(f, sd)?;
        let emb = f.model.embed(&sd.test)?;
        for (m, part) in points.iter().zip(out.iter_mut()) {
            let started = Instant::now();
            let (set, short) = match m {
                Some(m) => full.first_per_class(*m),
                None => (full.clone(), false),
            };
            if short {
                part.flags.push(format!("{}: fewer than {} reference windows in some class; all used", sd.id, m.unwrap()));
            }
            part.reference_bytes.push(set.byte_size());
            let k_eff = k.min(set.len());
            let mut correct = 0;
            for (r, w) in sd.test.iter().enumerate() {
                correct += usize::from(knn_classify(&set, emb.row(r), k_eff)?.label == w.activity_id);
            }
            part.values.push((sd.id.clone(), correct as f64 / sd.test.len() as f64, sd.test.len()));
            part.inference_seconds += started.elapsed().as_secs_f64();
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn ood_partial(
    kind: ModelKind,
    f: &Fitted,
    subjects: &[SubjectData],
    k: usize,
    in_map: &BTreeMap<usize, usize>,
    heldout: &BTreeSet<usize>,
    warnings: &mut Vec<String>,
    fold: usize,
) -> Result<Partial> {
    let started = Instant::now();
    let mut values = Vec::new();
    let mut reference_bytes = Vec::new();
    for sd in subjects {
        let positives: Vec<bool> = sd.test.iter().map(|w| heldout.contains(&w.activity_id)).collect();
        if positives.iter().all(|p| *p) || positives.iter().all(|p| !*p) {
            warnings.push(format!(
                "fold {fold}: subject {} lacks in- or out-of-distribution test windows; no AUROC",
                sd.id
            ));
            continue;
        }
        let scores: Vec<f64> = if kind.is_personalized() {
            let reference: Vec<WindowSegment> = sd
                .reference
                .iter()
                .filter_map(|w| in_map.get(&w.activity_id).map(|&c| WindowSegment { activity_id: c, ..w.clone() }))
                .collect();
            if reference.is_empty() {
                warnings.push(format!("fold {fold}: subject {} has no in-distribution reference windows; excluded for {kind}", sd.id));
                continue;
            }
            let emb = f.model.embed(&reference)?;
            let set = ReferenceSet::from_matrix(&sd.id, &emb, &reference, f.id.clone(), kind.is_deep())?;
            reference_bytes.push(set.byte_size());
            let q = f.model.embed(&sd.test)?;
            let k_eff = k.min(set.len());
            (0..q.rows)
                .map(|r| ood_score(&set, q.row(r), k_eff).map(|s| s.score))
                .collect::<Result<_>>()?
        } else {
            let probs = f.model.probabilities(&sd.test)?;
            (0..probs.rows)
                .map(|r| softmax_ood_score(probs.row(r)).map(|s| s.score))
                .collect::<Result<_>>()?
        };
        values.push((sd.id.clone(), auroc(&scores, &positives)?, sd.test.len()));
    }
    Ok(Partial {
        model: kind,
        point: String::new(),
        metric: "auroc",
        values,
        fit_seconds: f.fit_seconds,
        inference_seconds: started.elapsed().as_secs_f64(),
        model_bytes: f.bytes,
        reference_bytes,
        flags: Vec::new(),
    })
}
