//! Command implementations.
//!
//! Random streams are named per purpose (`init.encoder`, `init.head`,
//! `pretrain`, `finetune`) and derived from the run seed, so the baseline
//! and pretrained arms of a seed share their initial encoder, head and data
//! order, and `compare` reproduces standalone `pretrain`/`finetune` runs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde_json::json;
use tcssl_core::io::{load_checkpoint, load_dataset, save_checkpoint, to_json_bytes, write_atomic, write_dataset, Checkpoint, Dataset};
use tcssl_core::metrics::Summary;
use tcssl_core::nn::{EncoderModel, Parameterized, PhaseModel};
use tcssl_core::retrieval::{retrieval_report, QueryFrame, RetrievalReport};
use tcssl_core::rng::{derive, stream_id, StreamRng};
use tcssl_core::synth::generate_dataset;
use tcssl_core::train::{self, evaluate, Evaluation, FinetuneLog, PretrainHistory, PretrainMethod};
use tcssl_core::{Error, FrameSequence, Split};

use crate::config::Config;
use crate::report::{align, eval_csv, eval_table, retrieval_csv, retrieval_summary};
use crate::{
    CliError, Command, CompareArgs, EvalArgs, FinetuneArgs, PretrainArgs, RetrieveArgs, RunManifest, SynthArgs,
    VERSION,
};

pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

fn stream(seed: u64, name: &str) -> StreamRng {
    derive(seed, stream_id(name))
}

/// `path` with its extension replaced, e.g. `enc.ckpt` → `enc.history.csv`.
pub fn sibling(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

struct ManifestDraft<'a> {
    invocation: &'a Command,
    cfg: &'a Config,
    seed: Option<u64>,
    inputs: Vec<String>,
    outputs: Vec<String>,
    resolved: serde_json::Value,
    started: Instant,
}

impl ManifestDraft<'_> {
    fn write(self, path: &Path) -> Result<(), CliError> {
        let manifest = RunManifest {
            tool: "tcssl".into(),
            version: VERSION.into(),
            invocation: self.invocation.clone(),
            config: self.cfg.values().clone(),
            seed: self.seed,
            inputs: self.inputs,
            outputs: self.outputs,
            resolved: self.resolved,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        write_atomic(path, &to_json_bytes(&manifest)?)?;
        Ok(())
    }
}

fn load(data: &Path) -> Result<Dataset, CliError> {
    Ok(load_dataset(data)?)
}

/// The common frame rate of `videos`.
fn data_fps(videos: &[FrameSequence]) -> Result<f64, CliError> {
    let first = videos
        .first()
        .ok_or(Error::EmptyInput("no videos selected"))?
        .fps;
    if let Some(v) = videos.iter().find(|v| v.fps != first) {
        return Err(Error::InvalidConfig(format!(
            "video {} is at {} fps, others at {first}",
            v.video_id, v.fps
        ))
        .into());
    }
    Ok(f64::from(first))
}

fn num_phases(ds: &Dataset) -> Result<usize, CliError> {
    if let Some(k) = ds.manifest.num_phases {
        return Ok(k);
    }
    ds.videos
        .iter()
        .filter_map(|v| v.labels.as_ref())
        .flat_map(|l| l.iter().copied())
        .max()
        .map(|m| m + 1)
        .ok_or_else(|| Error::MissingLabels("dataset has no labels and no phase count".into()).into())
}

fn select(ds: &Dataset, sets: &[Split]) -> Result<Vec<FrameSequence>, CliError> {
    let videos = ds.select(sets);
    if videos.is_empty() {
        let names: String = sets.iter().map(|s| s.as_str()).collect();
        return Err(Error::InvalidConfig(format!("split {names} of {} is empty", ds.root.display())).into());
    }
    Ok(videos)
}

fn feature_dim(ds: &Dataset) -> Result<usize, CliError> {
    Ok(ds.feature_dim().ok_or(Error::EmptyInput("dataset has no videos"))?)
}

fn parse_sets(s: &str) -> Result<Vec<Split>, CliError> {
    Split::parse_set(s).map_err(|e| CliError::Usage(e.to_string()))
}

/// Videos of `sets` at the phase-model frame rate.
fn phase_videos(cfg: &Config, ds: &Dataset, sets: &[Split]) -> Result<(Vec<FrameSequence>, usize), CliError> {
    let videos = select(ds, sets)?;
    let stride = cfg.phase_stride(data_fps(&videos)?)?;
    let videos = videos
        .iter()
        .map(|v| v.subsample(stride))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((videos, stride))
}

pub fn synth(args: &SynthArgs, cfg: Config, invocation: &Command) -> Result<(), CliError> {
    let started = Instant::now();
    if args.videos < 4 {
        return Err(CliError::Usage(format!(
            "--videos must be at least 4 for the four-way split, got {}",
            args.videos
        )));
    }
    let synth_cfg = cfg.synth()?;
    let ds = generate_dataset(&synth_cfg, args.videos, args.seed)?;
    let splits: Vec<Option<Split>> = ds.splits.iter().copied().map(Some).collect();
    let provenance = json!({
        "generator": "synthetic procedures",
        "seed": args.seed,
        "config": synth_cfg,
    });
    write_dataset(&args.out, &ds.videos, &splits, Some(synth_cfg.num_phases), provenance)?;
    let sizes: serde_json::Map<String, serde_json::Value> = Split::ALL
        .iter()
        .map(|s| (s.to_string(), json!(ds.splits.iter().filter(|x| *x == s).count())))
        .collect();
    ManifestDraft {
        invocation,
        cfg: &cfg,
        seed: Some(args.seed),
        inputs: vec![],
        outputs: vec![display(&args.out)],
        resolved: json!({ "videos": args.videos, "split_sizes": sizes }),
        started,
    }
    .write(&args.out.join(RUN_MANIFEST_FILE))
}

/// Randomly initialized encoder of a seed; the starting point of both arms.
fn initial_encoder(cfg: &Config, input_dim: usize, seed: u64) -> Result<EncoderModel, CliError> {
    let arch = cfg.encoder_arch(input_dim)?;
    Ok(EncoderModel::new(&arch, &mut stream(seed, "init.encoder"))?)
}

struct Pretrained {
    encoder: EncoderModel,
    history: PretrainHistory,
    resolved: serde_json::Value,
}

fn pretrain_encoder(
    cfg: &Config,
    ds: &Dataset,
    method: PretrainMethod,
    initial: EncoderModel,
    seed: u64,
) -> Result<Pretrained, CliError> {
    let videos: Vec<FrameSequence> = select(ds, &[Split::A, Split::B, Split::C])?
        .into_iter()
        .map(|mut v| {
            v.labels = None;
            v
        })
        .collect();
    let fps = data_fps(&videos)?;
    let pcfg = cfg.pretrain(method, fps)?;
    let mut encoder = initial;
    let history = train::pretrain(&mut encoder, &videos, &pcfg, &mut stream(seed, "pretrain"))?;
    let resolved = json!({
        "method": method,
        "delta_seconds": pcfg.sampler.delta_seconds,
        "delta_frames": pcfg.sampler.delta_frames(),
        "gamma_seconds": pcfg.sampler.gamma_seconds,
        "gamma_frames": pcfg.sampler.gamma_frames(),
        "frames_per_second": fps,
        "train_videos": videos.len(),
        "optimizer_steps": history.optimizer_steps,
    });
    Ok(Pretrained {
        encoder,
        history,
        resolved,
    })
}

pub fn history_csv(history: &PretrainHistory) -> String {
    let mut out = String::from("epoch,mean_loss\n");
    for (e, l) in history.epoch_loss.iter().enumerate() {
        out.push_str(&format!("{e},{l}\n"));
    }
    out
}

pub fn pretrain(args: &PretrainArgs, cfg: Config, invocation: &Command) -> Result<(), CliError> {
    let started = Instant::now();
    let ds = load(&args.data)?;
    let initial = initial_encoder(&cfg, feature_dim(&ds)?, args.seed)?;
    let run = pretrain_encoder(&cfg, &ds, args.method, initial, args.seed)?;
    let meta = json!({ "method": args.method, "seed": args.seed });
    save_checkpoint(&args.out, &Checkpoint::Encoder(run.encoder), meta)?;
    let history_path = sibling(&args.out, "history.csv");
    write_atomic(&history_path, history_csv(&run.history).as_bytes())?;
    ManifestDraft {
        invocation,
        cfg: &cfg,
        seed: Some(args.seed),
        inputs: vec![display(&args.data)],
        outputs: vec![display(&args.out), display(&history_path)],
        resolved: run.resolved,
        started,
    }
    .write(&sibling(&args.out, "manifest.json"))
}

struct Finetuned {
    model: PhaseModel,
    log: FinetuneLog,
    stride: usize,
    train_videos: usize,
}

fn finetune_model(
    cfg: &Config,
    ds: &Dataset,
    sets: &[Split],
    encoder: EncoderModel,
    seed: u64,
) -> Result<Finetuned, CliError> {
    let (videos, stride) = phase_videos(cfg, ds, sets)?;
    let k = num_phases(ds)?;
    let arch = cfg.phase_arch(feature_dim(ds)?, k)?;
    if encoder.arch() != arch.encoder {
        return Err(Error::InvalidConfig(format!(
            "initial encoder {:?} does not match the configured encoder {:?}",
            encoder.arch(),
            arch.encoder
        ))
        .into());
    }
    let mut model = PhaseModel::with_encoder(encoder, arch.lstm_hidden, k, &mut stream(seed, "init.head"))?;
    let frozen: Vec<String> = cfg.list("finetune.frozen_layers")?;
    let frozen: Vec<&str> = frozen.iter().map(String::as_str).collect();
    model
        .set_trainable(&frozen, false)
        .map_err(|e| CliError::Usage(format!("finetune.frozen_layers: {e}")))?;
    let log = train::finetune(&mut model, &videos, &cfg.finetune()?, &mut stream(seed, "finetune"))?;
    Ok(Finetuned {
        model,
        log,
        stride,
        train_videos: videos.len(),
    })
}

fn finetune_log_csv(log: &FinetuneLog) -> String {
    let mut out = String::from("epoch,train_accuracy,mean_loss,optimizer_steps\n");
    for e in &log.epochs {
        out.push_str(&format!(
            "{},{},{},{}\n",
            e.epoch, e.train_accuracy, e.mean_loss, e.optimizer_steps
        ));
    }
    out
}

pub fn finetune(args: &FinetuneArgs, cfg: Config, invocation: &Command) -> Result<(), CliError> {
    let started = Instant::now();
    let ds = load(&args.data)?;
    let sets = parse_sets(&args.labeled_sets)?;
    let encoder = match &args.init {
        Some(path) => load_checkpoint(path, None)?.0.into_encoder(),
        None => initial_encoder(&cfg, feature_dim(&ds)?, args.seed)?,
    };
    let run = finetune_model(&cfg, &ds, &sets, encoder, args.seed)?;
    let meta = json!({
        "labeled_sets": args.labeled_sets,
        "init": args.init.as_deref().map(display),
        "seed": args.seed,
        "frame_stride": run.stride,
    });
    save_checkpoint(&args.out, &Checkpoint::Phase(run.model), meta)?;
    let log_path = sibling(&args.out, "log.csv");
    write_atomic(&log_path, finetune_log_csv(&run.log).as_bytes())?;
    let mut inputs = vec![display(&args.data)];
    inputs.extend(args.init.as_deref().map(display));
    ManifestDraft {
        invocation,
        cfg: &cfg,
        seed: Some(args.seed),
        inputs,
        outputs: vec![display(&args.out), display(&log_path)],
        resolved: json!({
            "train_videos": run.train_videos,
            "frame_stride": run.stride,
            "epochs": run.log.epochs.len(),
            "converged": run.log.converged,
        }),
        started,
    }
    .write(&sibling(&args.out, "manifest.json"))
}

fn evaluate_split(cfg: &Config, ds: &Dataset, model: &PhaseModel, split: Split) -> Result<Evaluation, CliError> {
    let (videos, _) = phase_videos(cfg, ds, &[split])?;
    Ok(evaluate(model, &videos)?)
}

fn parse_one_split(s: &str) -> Result<Split, CliError> {
    let sets = parse_sets(s)?;
    match sets.as_slice() {
        [one] => Ok(*one),
        _ => Err(CliError::Usage(format!("expected a single split, got {s:?}"))),
    }
}

pub fn eval(args: &EvalArgs, cfg: Config, invocation: &Command) -> Result<(), CliError> {
    let started = Instant::now();
    let split = parse_one_split(&args.split)?;
    let ds = load(&args.data)?;
    let model = load_checkpoint(&args.model, None)?.0.into_phase_model()?;
    let ev = evaluate_split(&cfg, &ds, &model, split)?;
    let table_path = sibling(&args.out, "txt");
    write_atomic(&args.out, eval_csv(&ev).as_bytes())?;
    write_atomic(&table_path, eval_table(&ev.report).as_bytes())?;
    ManifestDraft {
        invocation,
        cfg: &cfg,
        seed: None,
        inputs: vec![display(&args.data), display(&args.model)],
        outputs: vec![display(&args.out), display(&table_path)],
        resolved: json!({ "split": split, "videos": ev.per_video.len() }),
        started,
    }
    .write(&sibling(&args.out, "manifest.json"))
}

/// Query frames from a spec: `SPLIT[:STRIDE]` or `ID@FRAME,ID@FRAME,...`.
pub fn build_queries(spec: &str, ds: &Dataset, default_stride: usize) -> Result<Vec<QueryFrame>, CliError> {
    let spec = spec.trim();
    if spec.contains('@') {
        return spec
            .split(',')
            .map(|item| {
                let (id, frame) = item
                    .trim()
                    .rsplit_once('@')
                    .ok_or_else(|| CliError::Usage(format!("bad query {item:?}, expected VIDEO_ID@FRAME")))?;
                let frame: usize = frame
                    .parse()
                    .map_err(|_| CliError::Usage(format!("bad frame index in query {item:?}")))?;
                let video = ds
                    .videos
                    .iter()
                    .find(|v| v.video_id == id)
                    .ok_or_else(|| Error::InvalidConfig(format!("query video {id} is not in the dataset")))?;
                Ok(QueryFrame::from_video(format!("{id}@{frame}"), video, frame)?)
            })
            .collect();
    }
    let (split, stride) = match spec.split_once(':') {
        Some((s, n)) => (
            s,
            n.parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| CliError::Usage(format!("bad query stride in {spec:?}")))?,
        ),
        None => (spec, default_stride),
    };
    let split = parse_one_split(split)?;
    let mut queries = Vec::new();
    for v in select(ds, &[split])? {
        for t in (0..v.len()).step_by(stride) {
            queries.push(QueryFrame::from_video(format!("{}@{t}", v.video_id), &v, t)?);
        }
    }
    Ok(queries)
}

pub fn retrieve(args: &RetrieveArgs, cfg: Config, invocation: &Command) -> Result<(), CliError> {
    let started = Instant::now();
    let ds = load(&args.data)?;
    let encoder = load_checkpoint(&args.model, None)?.0.into_encoder();
    let queries = build_queries(&args.queries, &ds, cfg.get("retrieval.query_stride")?)?;
    let corpus = select(&ds, &[parse_one_split(&args.corpus_split)?])?;
    let report = retrieval_report(&encoder, &queries, &corpus)?;
    let summary_path = sibling(&args.out, "txt");
    write_atomic(&args.out, retrieval_csv(&report).as_bytes())?;
    write_atomic(&summary_path, retrieval_summary(&report, corpus.len()).as_bytes())?;
    ManifestDraft {
        invocation,
        cfg: &cfg,
        seed: None,
        inputs: vec![display(&args.data), display(&args.model)],
        outputs: vec![display(&args.out), display(&summary_path)],
        resolved: json!({
            "queries": report.results.len(),
            "corpus_videos": corpus.len(),
            "agreement_rate": report.agreement_rate,
        }),
        started,
    }
    .write(&sibling(&args.out, "manifest.json"))
}

/// Test metrics of one fine-tuned arm of one seed.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ArmResult {
    pub seed: u64,
    /// `None` for the no-pretraining baseline.
    pub method: Option<PretrainMethod>,
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub finetune_epochs: usize,
    pub converged: bool,
    /// Phase agreement of the arm's encoder before fine-tuning.
    pub agreement: Option<f64>,
}

fn arm_result(seed: u64, method: Option<PretrainMethod>, run: &Finetuned, ev: &Evaluation, agreement: Option<f64>) -> Result<ArmResult, CliError> {
    let mean = |s: &Summary| s.mean.ok_or(Error::EmptyInput("no test videos"));
    Ok(ArmResult {
        seed,
        method,
        accuracy: mean(&ev.report.accuracy)?,
        recall: mean(&ev.report.recall)?,
        precision: mean(&ev.report.precision)?,
        f1: mean(&ev.report.f1)?,
        finetune_epochs: run.log.epochs.len(),
        converged: run.log.converged,
        agreement,
    })
}

fn method_label(m: Option<PretrainMethod>) -> String {
    m.map_or_else(|| "none".to_string(), |m| m.name().to_string())
}

fn agreement(encoder: &EncoderModel, queries: &[QueryFrame], corpus: &[FrameSequence]) -> Result<Option<f64>, CliError> {
    let report: RetrievalReport = retrieval_report(encoder, queries, corpus)?;
    Ok(report.agreement_rate)
}

fn compare_seed(
    args: &CompareArgs,
    cfg: &Config,
    ds: &Dataset,
    sets: &[Split],
    queries: &[QueryFrame],
    corpus: &[FrameSequence],
    seed: u64,
) -> Result<Vec<ArmResult>, CliError> {
    let initial = initial_encoder(cfg, feature_dim(ds)?, seed)?;
    let mut out = Vec::with_capacity(args.methods.len() + 1);
    let base = finetune_model(cfg, ds, sets, initial.clone(), seed)?;
    let ev = evaluate_split(cfg, ds, &base.model, Split::D)?;
    out.push(arm_result(seed, None, &base, &ev, agreement(&initial, queries, corpus)?)?);
    for &method in &args.methods {
        let pre = pretrain_encoder(cfg, ds, method, initial.clone(), seed)?;
        let ckpt = args.out.join("checkpoints").join(format!("{}-seed{seed}.tcsm", method.name()));
        save_checkpoint(&ckpt, &Checkpoint::Encoder(pre.encoder.clone()), json!({ "method": method, "seed": seed }))?;
        let agree = agreement(&pre.encoder, queries, corpus)?;
        let run = finetune_model(cfg, ds, sets, pre.encoder, seed)?;
        let ev = evaluate_split(cfg, ds, &run.model, Split::D)?;
        out.push(arm_result(seed, Some(method), &run, &ev, agree)?);
    }
    Ok(out)
}

pub fn per_seed_csv(results: &[ArmResult]) -> String {
    let mut out = String::from(
        "seed,method,accuracy,recall,precision,f1,f1_minus_baseline,finetune_epochs,converged,agreement\n",
    );
    for r in results {
        let base = results
            .iter()
            .find(|b| b.seed == r.seed && b.method.is_none())
            .map_or(f64::NAN, |b| b.f1);
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.seed,
            method_label(r.method),
            r.accuracy,
            r.recall,
            r.precision,
            r.f1,
            r.f1 - base,
            r.finetune_epochs,
            r.converged,
            r.agreement.map(|a| a.to_string()).unwrap_or_default()
        ));
    }
    out
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SummaryRow {
    pub method: String,
    pub seeds: usize,
    pub accuracy: Summary,
    pub recall: Summary,
    pub precision: Summary,
    pub f1: Summary,
    /// Mean over seeds of `f1 − baseline f1`.
    pub f1_difference: Option<f64>,
    /// Seeds whose F1 beats the same seed's baseline.
    pub wins: usize,
    pub agreement: Summary,
}

pub fn summarize(results: &[ArmResult], methods: &[PretrainMethod]) -> Vec<SummaryRow> {
    let arms: Vec<Option<PretrainMethod>> = std::iter::once(None).chain(methods.iter().copied().map(Some)).collect();
    arms.into_iter()
        .map(|arm| {
            let rows: Vec<&ArmResult> = results.iter().filter(|r| r.method == arm).collect();
            let col = |f: &dyn Fn(&ArmResult) -> f64| Summary::of(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
            let diffs: Vec<f64> = rows
                .iter()
                .filter_map(|r| {
                    results
                        .iter()
                        .find(|b| b.seed == r.seed && b.method.is_none())
                        .map(|b| r.f1 - b.f1)
                })
                .collect();
            SummaryRow {
                method: method_label(arm),
                seeds: rows.len(),
                accuracy: col(&|r| r.accuracy),
                recall: col(&|r| r.recall),
                precision: col(&|r| r.precision),
                f1: col(&|r| r.f1),
                f1_difference: arm.and(Summary::of(&diffs).mean),
                wins: diffs.iter().filter(|&&d| d > 0.0).count(),
                agreement: Summary::of(&rows.iter().filter_map(|r| r.agreement).collect::<Vec<_>>()),
            }
        })
        .collect()
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(
        "method,seeds,accuracy_mean,accuracy_std,recall_mean,recall_std,precision_mean,precision_std,f1_mean,f1_std,f1_difference,wins,agreement_mean\n",
    );
    let o = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.method,
            r.seeds,
            o(r.accuracy.mean),
            o(r.accuracy.std),
            o(r.recall.mean),
            o(r.recall.std),
            o(r.precision.mean),
            o(r.precision.std),
            o(r.f1.mean),
            o(r.f1.std),
            o(r.f1_difference),
            r.wins,
            o(r.agreement.mean)
        ));
    }
    out
}

pub fn summary_table(rows: &[SummaryRow], labeled_sets: &str) -> String {
    let mut table = vec![vec![
        "Pretraining".to_string(),
        "Accuracy".into(),
        "Recall".into(),
        "Precision".into(),
        "F1".into(),
        "ΔF1".into(),
        "Wins".into(),
        "Agreement".into(),
    ]];
    for r in rows {
        table.push(vec![
            r.method.clone(),
            r.accuracy.display(),
            r.recall.display(),
            r.precision.display(),
            r.f1.display(),
            r.f1_difference.map_or_else(|| "-".into(), |d| format!("{d:+.1}")),
            if r.method == "none" { "-".into() } else { format!("{}/{}", r.wins, r.seeds) },
            r.agreement.mean.map_or_else(|| "n/a".into(), |a| format!("{:.1}%", 100.0 * a)),
        ]);
    }
    format!("labeled sets: {labeled_sets}\n\n{}", align(&table))
}

pub fn compare(args: &CompareArgs, cfg: Config, invocation: &Command) -> Result<(), CliError> {
    let started = Instant::now();
    if args.seeds == 0 {
        return Err(CliError::Usage("--seeds must be positive".into()));
    }
    let sets = parse_sets(&args.labeled_sets)?;
    let ds = load(&args.data)?;
    let queries = build_queries("A", &ds, cfg.get("retrieval.query_stride")?)?;
    let corpus = select(&ds, &[Split::D])?;
    std::fs::create_dir_all(args.out.join("checkpoints"))?;
    let per_seed = (0..args.seeds)
        .into_par_iter()
        .map(|seed| compare_seed(args, &cfg, &ds, &sets, &queries, &corpus, seed))
        .collect::<Result<Vec<_>, _>>()?;
    let results: Vec<ArmResult> = per_seed.into_iter().flatten().collect();
    let rows = summarize(&results, &args.methods);

    let per_seed_path = args.out.join("per_seed.csv");
    let summary_path = args.out.join("summary.csv");
    let table_path = args.out.join("summary.txt");
    write_atomic(&per_seed_path, per_seed_csv(&results).as_bytes())?;
    write_atomic(&summary_path, summary_csv(&rows).as_bytes())?;
    write_atomic(&table_path, summary_table(&rows, &args.labeled_sets).as_bytes())?;
    let deltas: serde_json::Map<String, serde_json::Value> = args
        .methods
        .iter()
        .map(|&m| {
            let delta = cfg.delta_seconds(m).map(|d| json!(d));
            (m.name().to_string(), delta.unwrap_or(serde_json::Value::Null))
        })
        .collect();
    ManifestDraft {
        invocation,
        cfg: &cfg,
        seed: None,
        inputs: vec![display(&args.data)],
        outputs: vec![display(&per_seed_path), display(&summary_path), display(&table_path)],
        resolved: json!({
            "seeds": (0..args.seeds).collect::<Vec<_>>(),
            "training_runs": args.seeds as usize * (args.methods.len() + 1),
            "delta_seconds": deltas,
            "queries": queries.len(),
        }),
        started,
    }
    .write(&args.out.join(RUN_MANIFEST_FILE))
}
