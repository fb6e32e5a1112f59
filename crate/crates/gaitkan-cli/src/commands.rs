//! The experiment modes: generate, train, evaluate, hyperopt, the two
//! compare protocols and the inference benchmark.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use gaitkan::basis::Activation;
use gaitkan::data::{
    class_counts, default_profiles, export_csv, fold_checksum, ingest_csv, smooth_trial,
    split_trials, synth_subject, ten_divisions, validation_split, windows_for_trials, DataError,
    SubjectProfile, Trial, Window,
};
use gaitkan::hyperopt::{space_for, suggest, TrialRecord};
use gaitkan::metrics::ClassWeights;
use gaitkan::models::{
    benchmark_inference, build_model, evaluate_with_divisions, train, Family, KanConfig,
    MlpConfig, ModelConfig, ModelError, ModelSpec, TrainOptions, TrainedModel,
};
use gaitkan::stats::{hypothesis_harness, HarnessReport, PairedScores, SubjectComparison};

use crate::config::ExperimentConfig;
use crate::reports::{self, RunEntry, ScoreBlock};

/// Errors ranked by exit code: config 1, I/O 2, numerical 3.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 1,
            Self::Io(_) => 2,
            Self::Numerical(_) => 3,
        }
    }
}

fn data_err(e: DataError) -> CliError {
    match e {
        DataError::Csv { .. } | DataError::Io(_) => CliError::Io(e.to_string()),
        DataError::BadWindowSize(_)
        | DataError::BadFilterWidth(_)
        | DataError::InfeasibleProfile { .. } => CliError::Config(e.to_string()),
        other => CliError::Io(format!("dataset unusable: {other}")),
    }
}

fn model_err(e: ModelError) -> CliError {
    match e {
        ModelError::Config { .. }
        | ModelError::InputShape { .. }
        | ModelError::BadRepetitions(_)
        | ModelError::Basis(_) => CliError::Config(e.to_string()),
        ModelError::Container(msg) => CliError::Io(format!("model file: {msg}")),
        ModelError::MissingClass(c) => {
            CliError::Io(format!("dataset unusable: no {c} windows in the training set"))
        }
        ModelError::NonFiniteLoss { .. } | ModelError::Optimizer { .. } | ModelError::Num(_) => {
            CliError::Numerical(e.to_string())
        }
    }
}

fn fnv64(s: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

// ---- dataset loading ----

/// Ingests a dataset and applies the seven-point acceleration smoothing.
pub fn load_trials(path: &Path) -> Result<Vec<Trial>, CliError> {
    if !path.exists() {
        return Err(CliError::Io(format!(
            "missing dataset `{}`",
            path.display()
        )));
    }
    let trials = ingest_csv(path).map_err(data_err)?;
    if trials.is_empty() {
        return Err(CliError::Io(format!(
            "dataset `{}` contains no trials",
            path.display()
        )));
    }
    trials
        .iter()
        .map(smooth_trial)
        .collect::<Result<Vec<_>, _>>()
        .map_err(data_err)
}

pub fn subject_ids(trials: &[Trial]) -> Vec<String> {
    let mut ids: Vec<String> = trials.iter().map(|t| t.subject.clone()).collect();
    ids.sort();
    ids.dedup();
    ids
}

fn trials_of<'a>(trials: &'a [Trial], subject: &str) -> Result<Vec<&'a Trial>, CliError> {
    let subset: Vec<&Trial> = trials.iter().filter(|t| t.subject == subject).collect();
    if subset.is_empty() {
        return Err(CliError::Io(format!(
            "dataset has no trials for subject `{subject}`"
        )));
    }
    Ok(subset)
}

/// Split seed depends only on (experiment seed, subject), so every model and
/// condition sees identical splits and test folds.
fn split_seed(cfg: &ExperimentConfig, subject: &str) -> u64 {
    cfg.seed ^ fnv64(subject)
}

struct SubjectData {
    subject: String,
    train_windows: Vec<Window>,
    test_windows: Vec<Window>,
    folds: Vec<Vec<usize>>,
    checksum: u64,
}

fn prepare_subject(
    cfg: &ExperimentConfig,
    trials: &[Trial],
    subject: &str,
    window: usize,
) -> Result<SubjectData, CliError> {
    let own: Vec<Trial> = trials_of(trials, subject)?
        .into_iter()
        .cloned()
        .collect();
    let split = split_trials(&own, split_seed(cfg, subject)).map_err(data_err)?;
    let train_windows = windows_for_trials(&split.train, window).map_err(data_err)?;
    let test_windows = windows_for_trials(&split.test, window).map_err(data_err)?;
    let folds = ten_divisions(&test_windows, split_seed(cfg, subject)).map_err(data_err)?;
    let checksum = fold_checksum(&folds);
    Ok(SubjectData {
        subject: subject.to_string(),
        train_windows,
        test_windows,
        folds,
        checksum,
    })
}

fn class_weights_for(windows: &[Window]) -> Result<ClassWeights, CliError> {
    let counts = class_counts(windows);
    ClassWeights::from_counts(counts)
        .map_err(|e| CliError::Io(format!("dataset unusable: {e}")))
}

struct FittedModel {
    model: TrainedModel,
    train_seconds: f64,
}

fn fit(
    cfg: &ExperimentConfig,
    model_config: &ModelConfig,
    train_windows: &[Window],
) -> Result<FittedModel, CliError> {
    let mut model = build_model(model_config, cfg.seed).map_err(model_err)?;
    let weights = class_weights_for(train_windows)?;
    let t0 = Instant::now();
    train(
        &mut model,
        train_windows,
        &weights,
        &TrainOptions {
            epochs: cfg.epochs,
            seed: cfg.seed,
            lr_override: None,
        },
    )
    .map_err(model_err)?;
    Ok(FittedModel {
        model,
        train_seconds: t0.elapsed().as_secs_f64(),
    })
}

fn entry_for(
    cfg: &ExperimentConfig,
    subject_data: &SubjectData,
    fitted: &FittedModel,
    family: Family,
    condition: &str,
) -> Result<RunEntry, CliError> {
    let report = evaluate_with_divisions(
        &fitted.model,
        &subject_data.test_windows,
        &subject_data.folds,
    )
    .map_err(model_err)?;
    let inference = benchmark_inference(
        &fitted.model,
        &subject_data.test_windows[..subject_data.test_windows.len().min(10)],
        cfg.repetitions.max(30),
    )
    .map_err(model_err)?;
    Ok(RunEntry {
        subject: subject_data.subject.clone(),
        model: family.name().to_string(),
        condition: condition.to_string(),
        window: fitted.model.config.window_size,
        seed: cfg.seed,
        n_test_windows: subject_data.test_windows.len(),
        fold_checksum: format!("{:016x}", subject_data.checksum),
        scores: ScoreBlock::from_report(&report),
        report: Some(report),
        train_seconds: fitted.train_seconds,
        inference_seconds: inference,
    })
}

// ---- generate ----

#[derive(serde::Deserialize)]
struct ProfilesFile {
    profile: Vec<SubjectProfile>,
}

pub fn cmd_generate(
    cfg: &ExperimentConfig,
    out: &Path,
    profiles_path: Option<&Path>,
) -> Result<(), CliError> {
    let mut profiles = match profiles_path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| {
                CliError::Io(format!("cannot read profiles `{}`: {e}", p.display()))
            })?;
            let parsed: ProfilesFile = toml::from_str(&text)
                .map_err(|e| CliError::Config(format!("profiles `{}`: {e}", p.display())))?;
            parsed.profile
        }
        None => {
            let defaults = default_profiles();
            if cfg.subjects == 0 || cfg.subjects > defaults.len() {
                return Err(CliError::Config(format!(
                    "invalid config field `subjects`: {} (1..={} built-in profiles)",
                    cfg.subjects,
                    defaults.len()
                )));
            }
            defaults
                .into_iter()
                .take(cfg.subjects)
                .map(|p| SubjectProfile {
                    trials_per_cell: cfg.trials_per_cell,
                    straight_trials: cfg.straight_trials,
                    separation: cfg.separation,
                    noise_sigma: cfg.noise_sigma,
                    ..p
                })
                .collect()
        }
    };
    profiles.sort_by(|a, b| a.id.cmp(&b.id));
    let mut trials = Vec::new();
    for p in &profiles {
        trials.extend(synth_subject(p, cfg.seed).map_err(data_err)?);
    }
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            reports::ensure_outdir(dir)?;
        }
    }
    export_csv(&trials, out).map_err(data_err)?;
    // record the resolved profiles next to the dataset
    #[derive(Serialize)]
    struct Resolved<'a> {
        profile: &'a [SubjectProfile],
    }
    let toml_text = toml::to_string_pretty(&Resolved { profile: &profiles })
        .expect("profiles serialize");
    reports::write_atomic(&out.with_extension("profiles.toml"), &toml_text)?;
    Ok(())
}

// ---- train / evaluate ----

#[derive(Serialize)]
struct ResolvedRun<'a> {
    mode: &'a str,
    dataset: String,
    subject: &'a str,
    family: &'a str,
    condition: &'a str,
    model_config: &'a ModelConfig,
    experiment: &'a ExperimentConfig,
}

pub fn cmd_train(
    cfg: &ExperimentConfig,
    dataset: &Path,
    subject: &str,
    family: Family,
    pooled: bool,
    outdir: &Path,
) -> Result<(), CliError> {
    let trials = load_trials(dataset)?;
    let model_config = cfg.model_config(family)?;
    let subject_data = prepare_subject(cfg, &trials, subject, model_config.window_size)?;
    let train_windows = if pooled {
        let mut all = Vec::new();
        for id in subject_ids(&trials) {
            all.extend(
                prepare_subject(cfg, &trials, &id, model_config.window_size)?.train_windows,
            );
        }
        all
    } else {
        subject_data.train_windows.clone()
    };
    let fitted = fit(cfg, &model_config, &train_windows)?;
    let condition = if pooled { "pooled" } else { "specific" };
    let entry = entry_for(cfg, &subject_data, &fitted, family, condition)?;

    reports::ensure_outdir(outdir)?;
    reports::emit_resolved_config(
        outdir,
        &ResolvedRun {
            mode: "train",
            dataset: dataset.display().to_string(),
            subject,
            family: family.name(),
            condition,
            model_config: &model_config,
            experiment: cfg,
        },
    )?;
    reports::write_atomic(&outdir.join("model.json"), &fitted.model.to_json())?;
    reports::emit_metrics(outdir, std::slice::from_ref(&entry))?;
    reports::emit_confusion(outdir, std::slice::from_ref(&entry))?;
    reports::emit_divisions(outdir, std::slice::from_ref(&entry))?;
    reports::emit_timing(outdir, std::slice::from_ref(&entry))?;
    Ok(())
}

pub fn cmd_evaluate(
    cfg: &ExperimentConfig,
    dataset: &Path,
    model_path: &Path,
    subject: &str,
    outdir: &Path,
) -> Result<(), CliError> {
    let trials = load_trials(dataset)?;
    let text = std::fs::read_to_string(model_path).map_err(|e| {
        CliError::Io(format!("cannot read model `{}`: {e}", model_path.display()))
    })?;
    let model = TrainedModel::from_json(&text).map_err(model_err)?;
    let family = model.config.family();
    let subject_data = prepare_subject(cfg, &trials, subject, model.config.window_size)?;
    let fitted = FittedModel {
        model,
        train_seconds: 0.0,
    };
    let entry = entry_for(cfg, &subject_data, &fitted, family, "specific")?;
    reports::ensure_outdir(outdir)?;
    reports::emit_resolved_config(
        outdir,
        &ResolvedRun {
            mode: "evaluate",
            dataset: dataset.display().to_string(),
            subject,
            family: family.name(),
            condition: "specific",
            model_config: &fitted.model.config,
            experiment: cfg,
        },
    )?;
    reports::emit_metrics(outdir, std::slice::from_ref(&entry))?;
    reports::emit_confusion(outdir, std::slice::from_ref(&entry))?;
    reports::emit_divisions(outdir, std::slice::from_ref(&entry))?;
    reports::emit_timing(outdir, std::slice::from_ref(&entry))?;
    Ok(())
}

// ---- hyperopt ----

#[derive(Serialize)]
struct HyperoptSummary<'a> {
    subject: &'a str,
    family: &'a str,
    budget: usize,
    seed: u64,
    best_objective: f64,
    best_config: &'a ModelConfig,
}

pub fn cmd_hyperopt(
    cfg: &ExperimentConfig,
    dataset: &Path,
    subject: &str,
    family: Family,
    outdir: &Path,
    resume: bool,
) -> Result<(), CliError> {
    if cfg.budget == 0 {
        return Err(CliError::Config(
            "invalid config field `budget`: must be >= 1".into(),
        ));
    }
    let trials = load_trials(dataset)?;
    let subject_data = prepare_subject(cfg, &trials, subject, cfg.window)?;
    let (train_idx, val_idx) = validation_split(
        &subject_data.train_windows,
        cfg.validation_fraction,
        cfg.seed,
    )
    .map_err(data_err)?;
    let train_part: Vec<Window> = train_idx
        .iter()
        .map(|&i| subject_data.train_windows[i].clone())
        .collect();
    let val_part: Vec<Window> = val_idx
        .iter()
        .map(|&i| subject_data.train_windows[i].clone())
        .collect();

    let space = space_for(family, cfg.window);
    reports::ensure_outdir(outdir)?;
    let history_path = outdir.join("history.jsonl");
    let mut history: Vec<TrialRecord> = Vec::new();
    if resume && history_path.exists() {
        let text = std::fs::read_to_string(&history_path)
            .map_err(|e| CliError::Io(format!("cannot read history: {e}")))?;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: TrialRecord = serde_json::from_str(line).map_err(|e| {
                CliError::Io(format!("history line {}: {e}", i + 1))
            })?;
            history.push(rec);
        }
    }

    let objective = |mc: &ModelConfig| -> Result<f64, String> {
        mc.validate().map_err(|e| e.to_string())?;
        let mut model = build_model(mc, cfg.seed).map_err(|e| e.to_string())?;
        let weights =
            ClassWeights::from_counts(class_counts(&train_part)).map_err(|e| e.to_string())?;
        train(
            &mut model,
            &train_part,
            &weights,
            &TrainOptions {
                epochs: cfg.epochs,
                seed: cfg.seed,
                lr_override: None,
            },
        )
        .map_err(|e| e.to_string())?;
        let report =
            gaitkan::models::evaluate(&model, &val_part).map_err(|e| e.to_string())?;
        Ok(report.macro_f1)
    };

    while history.len() < cfg.budget {
        let point = suggest(&history, &space, cfg.seed);
        let mc = space.decode(&point);
        let t0 = Instant::now();
        let objective_value = objective(&mc).unwrap_or(0.0);
        history.push(TrialRecord {
            config: mc,
            point,
            objective: objective_value,
            seed: cfg.seed,
            duration_secs: t0.elapsed().as_secs_f64(),
        });
        let lines: String = history
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes"))
            .collect::<Vec<_>>()
            .join("\n");
        reports::write_atomic(&history_path, &(lines + "\n"))?;
    }

    let best = history
        .iter()
        .max_by(|a, b| a.objective.total_cmp(&b.objective))
        .expect("budget >= 1");
    let summary = HyperoptSummary {
        subject,
        family: family.name(),
        budget: cfg.budget,
        seed: cfg.seed,
        best_objective: best.objective,
        best_config: &best.config,
    };
    reports::write_atomic(
        &outdir.join("best.json"),
        &serde_json::to_string_pretty(&summary).expect("serializable"),
    )?;
    Ok(())
}

// ---- compare modes ----

fn comparison_for(
    runs: &[RunEntry],
    subjects: &[String],
    label_a: (&str, &str),
    label_b: (&str, &str),
) -> Result<Vec<SubjectComparison>, CliError> {
    let pick = |subject: &str, (model, condition): (&str, &str)| {
        runs.iter()
            .find(|r| r.subject == subject && r.model == model && r.condition == condition)
            .ok_or_else(|| {
                CliError::Config(format!(
                    "missing run for subject {subject}, model {model}, condition {condition}"
                ))
            })
    };
    subjects
        .iter()
        .map(|s| {
            let a = pick(s, label_a)?;
            let b = pick(s, label_b)?;
            let scores = PairedScores::new(
                format!("{}-{}", label_a.1, label_a.0),
                format!("{}-{}", label_b.1, label_b.0),
                a.report.as_ref().expect("report kept").division_f1.clone(),
                b.report.as_ref().expect("report kept").division_f1.clone(),
            )
            .map_err(|e| CliError::Config(e.to_string()))?;
            Ok(SubjectComparison {
                subject: s.clone(),
                scores,
                checksum_a: u64::from_str_radix(&a.fold_checksum, 16).expect("hex checksum"),
                checksum_b: u64::from_str_radix(&b.fold_checksum, 16).expect("hex checksum"),
            })
        })
        .collect()
}

fn run_harness(
    comparison: &str,
    comparisons: &[SubjectComparison],
) -> Result<HarnessReport, CliError> {
    hypothesis_harness(comparison, comparisons, true)
        .map_err(|e| CliError::Numerical(e.to_string()))
}

#[derive(Serialize)]
struct ResolvedCompare<'a> {
    mode: &'a str,
    dataset: String,
    subjects: &'a [String],
    families: Vec<&'static str>,
    experiment: &'a ExperimentConfig,
}

/// Hypothesis 1 protocol: subject-specific KAN vs MLP and FKAN vs CNN over
/// the ten paired test divisions.
pub fn cmd_compare_hp1(
    cfg: &ExperimentConfig,
    dataset: &Path,
    outdir: &Path,
) -> Result<(), CliError> {
    let families = cfg.parse_families()?;
    let trials = load_trials(dataset)?;
    let subjects = subject_ids(&trials);

    let jobs: Vec<(String, Family)> = subjects
        .iter()
        .flat_map(|s| families.iter().map(move |f| (s.clone(), *f)))
        .collect();
    let runs: Vec<RunEntry> = jobs
        .par_iter()
        .map(|(subject, family)| -> Result<RunEntry, CliError> {
            let model_config = cfg.model_config(*family)?;
            let subject_data =
                prepare_subject(cfg, &trials, subject, model_config.window_size)?;
            let fitted = fit(cfg, &model_config, &subject_data.train_windows)?;
            entry_for(cfg, &subject_data, &fitted, *family, "specific")
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut harnesses = Vec::new();
    if families.contains(&Family::Kan) && families.contains(&Family::Mlp) {
        let cmps = comparison_for(&runs, &subjects, ("kan", "specific"), ("mlp", "specific"))?;
        harnesses.push(run_harness("hp1: kan > mlp", &cmps)?);
    }
    if families.contains(&Family::Fkan) && families.contains(&Family::Cnn) {
        let cmps = comparison_for(&runs, &subjects, ("fkan", "specific"), ("cnn", "specific"))?;
        harnesses.push(run_harness("hp1: fkan > cnn", &cmps)?);
    }
    if harnesses.is_empty() {
        return Err(CliError::Config(
            "invalid config field `families`: compare-hp1 needs kan+mlp and/or fkan+cnn".into(),
        ));
    }

    reports::ensure_outdir(outdir)?;
    reports::emit_resolved_config(
        outdir,
        &ResolvedCompare {
            mode: "compare-hp1",
            dataset: dataset.display().to_string(),
            subjects: &subjects,
            families: families.iter().map(|f| f.name()).collect(),
            experiment: cfg,
        },
    )?;
    let checksums: Vec<(String, String)> = subjects
        .iter()
        .map(|s| {
            let r = runs.iter().find(|r| &r.subject == s).expect("run exists");
            (s.clone(), r.fold_checksum.clone())
        })
        .collect();
    reports::emit_metrics(outdir, &runs)?;
    reports::emit_confusion(outdir, &runs)?;
    reports::emit_divisions(outdir, &runs)?;
    reports::emit_stats(outdir, checksums, &harnesses)?;
    reports::emit_timing(outdir, &runs)?;
    Ok(())
}

/// Hypothesis 2 protocol: per family, subject-specific training vs one
/// pooled model, evaluated on each subject's identical test folds.
pub fn cmd_compare_hp2(
    cfg: &ExperimentConfig,
    dataset: &Path,
    outdir: &Path,
) -> Result<(), CliError> {
    let families = cfg.parse_families()?;
    let trials = load_trials(dataset)?;
    let subjects = subject_ids(&trials);

    let subject_data: Vec<SubjectData> = subjects
        .iter()
        .map(|s| prepare_subject(cfg, &trials, s, cfg.window))
        .collect::<Result<Vec<_>, _>>()?;
    let pooled_windows: Vec<Window> = subject_data
        .iter()
        .flat_map(|d| d.train_windows.iter().cloned())
        .collect();

    enum Job {
        Specific(usize, Family),
        Pooled(Family),
    }
    let mut jobs = Vec::new();
    for f in &families {
        jobs.push(Job::Pooled(*f));
        for i in 0..subjects.len() {
            jobs.push(Job::Specific(i, *f));
        }
    }
    enum Outcome {
        Specific(Box<RunEntry>),
        Pooled(Family, Box<FittedModel>),
    }
    let outcomes: Vec<Outcome> = jobs
        .par_iter()
        .map(|job| -> Result<Outcome, CliError> {
            match job {
                Job::Specific(i, family) => {
                    let model_config = cfg.model_config(*family)?;
                    let fitted = fit(cfg, &model_config, &subject_data[*i].train_windows)?;
                    let entry =
                        entry_for(cfg, &subject_data[*i], &fitted, *family, "specific")?;
                    Ok(Outcome::Specific(Box::new(entry)))
                }
                Job::Pooled(family) => {
                    let model_config = cfg.model_config(*family)?;
                    let fitted = fit(cfg, &model_config, &pooled_windows)?;
                    Ok(Outcome::Pooled(*family, Box::new(fitted)))
                }
            }
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut runs: Vec<RunEntry> = Vec::new();
    for outcome in &outcomes {
        match outcome {
            Outcome::Specific(entry) => runs.push((**entry).clone()),
            Outcome::Pooled(family, fitted) => {
                for d in &subject_data {
                    runs.push(entry_for(cfg, d, fitted, *family, "pooled")?);
                }
            }
        }
    }
    runs.sort_by(|a, b| {
        (&a.subject, &a.model, &a.condition).cmp(&(&b.subject, &b.model, &b.condition))
    });

    let mut harnesses = Vec::new();
    for f in &families {
        let cmps = comparison_for(
            &runs,
            &subjects,
            (f.name(), "specific"),
            (f.name(), "pooled"),
        )?;
        harnesses.push(run_harness(
            &format!("hp2: specific {0} > pooled {0}", f.name()),
            &cmps,
        )?);
    }

    reports::ensure_outdir(outdir)?;
    reports::emit_resolved_config(
        outdir,
        &ResolvedCompare {
            mode: "compare-hp2",
            dataset: dataset.display().to_string(),
            subjects: &subjects,
            families: families.iter().map(|f| f.name()).collect(),
            experiment: cfg,
        },
    )?;
    let checksums: Vec<(String, String)> = subject_data
        .iter()
        .map(|d| (d.subject.clone(), format!("{:016x}", d.checksum)))
        .collect();
    reports::emit_metrics(outdir, &runs)?;
    reports::emit_confusion(outdir, &runs)?;
    reports::emit_divisions(outdir, &runs)?;
    reports::emit_stats(outdir, checksums, &harnesses)?;
    reports::emit_timing(outdir, &runs)?;
    Ok(())
}

// ---- bench ----

/// The timing-table shapes: KAN [80] with grid 9, k 1 against
/// MLP [80, 35, 80, 45] with tanh.
pub fn a01_shaped_configs(window: usize) -> (ModelConfig, ModelConfig) {
    let kan = ModelConfig {
        window_size: window,
        spec: ModelSpec::Kan(KanConfig {
            hidden: vec![80],
            grid_size: 9,
            spline_order: 1,
            l1_penalty: 1e-4,
        }),
    };
    let mlp = ModelConfig {
        window_size: window,
        spec: ModelSpec::Mlp(MlpConfig {
            hidden: vec![80, 35, 80, 45],
            activation: Activation::Tanh,
            weight_decay: 1e-4,
        }),
    };
    (kan, mlp)
}

pub fn cmd_bench(
    cfg: &ExperimentConfig,
    dataset: Option<&Path>,
    outdir: &Path,
) -> Result<(), CliError> {
    // benchmark windows: from the dataset when given, else synthesized
    let windows: Vec<Window> = match dataset {
        Some(path) => {
            let trials = load_trials(path)?;
            windows_for_trials(&trials, cfg.window).map_err(data_err)?
        }
        None => {
            let profile = default_profiles().remove(0);
            let trials = synth_subject(&profile, cfg.seed).map_err(data_err)?;
            windows_for_trials(&trials, cfg.window).map_err(data_err)?
        }
    };
    let sample: Vec<Window> = windows.into_iter().take(32).collect();
    if sample.is_empty() {
        return Err(CliError::Io("no windows available to benchmark".into()));
    }

    let (kan_cfg, mlp_cfg) = a01_shaped_configs(cfg.window);
    let mut entries = Vec::new();
    for (name, mc) in [("kan-a01", &kan_cfg), ("mlp-a01", &mlp_cfg)] {
        let model = build_model(mc, cfg.seed).map_err(model_err)?;
        let median =
            benchmark_inference(&model, &sample, cfg.repetitions.max(30)).map_err(model_err)?;
        entries.push(RunEntry {
            subject: "-".into(),
            model: name.into(),
            condition: "untrained".into(),
            window: cfg.window,
            seed: cfg.seed,
            n_test_windows: sample.len(),
            fold_checksum: "-".into(),
            scores: ScoreBlock {
                macro_f1_pct: 0.0,
                f1_pct: [0.0; 3],
                precision_pct: [0.0; 3],
                recall_pct: [0.0; 3],
            },
            report: None,
            train_seconds: 0.0,
            inference_seconds: median,
        });
    }
    for family in [Family::Mlp, Family::Kan, Family::Cnn, Family::Fkan] {
        let mc = cfg.model_config(family)?;
        let model = build_model(&mc, cfg.seed).map_err(model_err)?;
        let median =
            benchmark_inference(&model, &sample, cfg.repetitions.max(30)).map_err(model_err)?;
        entries.push(RunEntry {
            subject: "-".into(),
            model: format!("{}-desk", family.name()),
            condition: "untrained".into(),
            window: cfg.window,
            seed: cfg.seed,
            n_test_windows: sample.len(),
            fold_checksum: "-".into(),
            scores: ScoreBlock {
                macro_f1_pct: 0.0,
                f1_pct: [0.0; 3],
                precision_pct: [0.0; 3],
                recall_pct: [0.0; 3],
            },
            report: None,
            train_seconds: 0.0,
            inference_seconds: median,
        });
    }
    reports::ensure_outdir(outdir)?;
    reports::emit_resolved_config(outdir, cfg)?;
    reports::emit_timing(outdir, &entries)?;
    Ok(())
}
