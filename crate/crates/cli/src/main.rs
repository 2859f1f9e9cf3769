mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{ArgAction, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use robustag::corpus::{
    AudioMode, CorpusError, EvalCondition, ExperimentSetting, SettingName, SyntheticCorpus,
    EXTRA_FILE, TRACKS_FILE,
};
use robustag::evalkit::{evaluate, render_table, EvalError, EvalReport};
use robustag::netlab::{Collection, Model, Real};
use robustag::trainer::{
    read_checkpoint, resume, run_stage1, run_stage2, run_stage3, Checkpoint, Precision, StageKind,
    StageOptions, StageOutcome, TrainError, TrainingData,
};

use config::ExperimentConfig;

/// Bad flags, config or output-directory state. Exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// A required input file or checkpoint is absent. Exit code 3.
#[derive(Debug)]
struct MissingInput(String);

impl std::fmt::Display for MissingInput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for MissingInput {}

#[derive(Parser, Debug)]
#[command(
    name = "robustag",
    version,
    about = "Noise-robust music auto-tagging experiments"
)]
struct Cli {
    /// TOML experiment config; unspecified keys take the preset's defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the training and corpus seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment directory.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    /// Replace existing outputs instead of refusing.
    #[arg(long, global = true)]
    force: bool,
    #[arg(long, global = true, value_parser = ["32", "64"])]
    precision: Option<String>,
    /// Print per-epoch metrics.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the synthetic corpus (manifests and audio) into the output directory.
    Synth {
        /// Store synthesis parameters in the manifests instead of WAV files.
        #[arg(long)]
        inline: bool,
    },
    /// Stage 1: contrastive pretraining of the feature extractor.
    PretrainFe {
        #[arg(long)]
        data: PathBuf,
        /// Continue from the stage's latest checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Stage 2: domain classifier on the frozen feature extractor.
    PretrainDc {
        #[arg(long)]
        data: PathBuf,
        /// Stage-1 checkpoint [default: <out>/stage1/final.ckpt]
        #[arg(long)]
        fe: Option<PathBuf>,
        #[arg(long)]
        resume: bool,
    },
    /// Stage 3: finetune the feature extractor and train the label predictor.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        fe: Option<PathBuf>,
        /// Stage-2 checkpoint [default: <out>/stage2/final.ckpt]
        #[arg(long)]
        dc: Option<PathBuf>,
        /// baseline, oracle, proposed_a or proposed_b.
        #[arg(long)]
        setting: Option<SettingName>,
        /// Extra unlabeled manifest for proposed_b.
        #[arg(long)]
        extra: Option<PathBuf>,
        #[arg(long)]
        resume: bool,
    },
    /// Score a checkpoint on the test split under each condition.
    Eval {
        #[arg(long)]
        data: PathBuf,
        /// [default: <out>/stage3/final.ckpt]
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated, e.g. "clean,-5,0,5,10".
        #[arg(long)]
        conditions: Option<String>,
        /// Row label in tables [default: the output directory name]
        #[arg(long)]
        label: Option<String>,
    },
    /// Combine eval reports from several experiment directories into one table.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if cause.is::<MissingInput>() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<TrainError>() {
            return match e {
                TrainError::Config(_) | TrainError::ConfigMismatch(_) => 2,
                TrainError::MissingCheckpoint(_)
                | TrainError::MissingArtifact(_)
                | TrainError::CorruptCheckpoint(_) => 3,
                TrainError::DivergenceDetected { .. } => 4,
                _ => continue,
            };
        }
        if let Some(e) = cause.downcast_ref::<CorpusError>() {
            match e {
                CorpusError::Setting(_) => return 2,
                CorpusError::MissingTags(_) => return 3,
                CorpusError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                    return 3
                }
                _ => {}
            }
        }
        if let Some(EvalError::AllTagsDegenerate) = cause.downcast_ref::<EvalError>() {
            return 3;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
        cfg.corpus.seed = seed;
    }
    if let Some(p) = &cli.precision {
        cfg.run.precision = if p == "64" {
            Precision::F64
        } else {
            Precision::F32
        };
    }
    if let Command::Train {
        setting,
        extra,
        data,
        ..
    } = &cli.command
    {
        if let Some(name) = setting {
            let extra = match (name, extra) {
                (SettingName::ProposedB, None) => Some(data.join(EXTRA_FILE)),
                (_, e) => e.clone(),
            };
            cfg.run.setting = ExperimentSetting::named(*name, extra)?;
        } else if let Some(extra) = extra {
            cfg.run.setting.extra_unlabeled_pool = Some(extra.clone());
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Prepares `dir` for fresh output: refuses if it already holds results
/// unless `force`, in which case they are removed.
fn claim(dir: &Path, force: bool) -> Result<()> {
    let occupied = dir.exists()
        && fs::read_dir(dir)
            .map(|mut d| d.next().is_some())
            .unwrap_or(false);
    if occupied {
        if !force {
            return Err(UsageError(format!(
                "{} already holds results; pass --force to replace them",
                dir.display()
            ))
            .into());
        }
        fs::remove_dir_all(dir).with_context(|| format!("removing {}", dir.display()))?;
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn snapshot(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    let path = dir.join("config.resolved.toml");
    fs::write(&path, cfg.to_toml()).with_context(|| format!("writing {}", path.display()))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(MissingInput(format!("checkpoint {} not found", path.display())).into());
    }
    Ok(read_checkpoint(path)?)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli)?;
    match &cli.command {
        Command::Synth { inline } => {
            if cli.out.join(TRACKS_FILE).exists() {
                claim(&cli.out, cli.force)?;
            }
            fs::create_dir_all(&cli.out)
                .with_context(|| format!("creating {}", cli.out.display()))?;
            let corpus = SyntheticCorpus::generate(&cfg.corpus)?;
            let mode = if *inline {
                AudioMode::Inline
            } else {
                AudioMode::Wav
            };
            let written = corpus.write(&cli.out, mode)?;
            snapshot(&cli.out, &cfg)?;
            println!(
                "wrote {} tracks, {} extra, {} pretraining, {} noises ({} files) to {}",
                corpus.tracks.len(),
                corpus.extra.len(),
                corpus.pretrain.len(),
                corpus.noise_train.len() + corpus.noise_valid.len() + corpus.noise_test.len(),
                written.len(),
                cli.out.display()
            );
            Ok(())
        }
        Command::PretrainFe { data, resume } => stage(
            &cli,
            &cfg,
            StageKind::FePretrain,
            data,
            *resume,
            None,
            None,
            None,
        ),
        Command::PretrainDc { data, fe, resume } => {
            let fe = fe
                .clone()
                .unwrap_or_else(|| cli.out.join("stage1/final.ckpt"));
            stage(
                &cli,
                &cfg,
                StageKind::DcPretrain,
                data,
                *resume,
                Some(fe),
                None,
                None,
            )
        }
        Command::Train {
            data,
            fe,
            dc,
            resume,
            ..
        } => {
            let fe = fe
                .clone()
                .unwrap_or_else(|| cli.out.join("stage1/final.ckpt"));
            let dc = cfg.run.setting.uses_dc.then(|| {
                dc.clone()
                    .unwrap_or_else(|| cli.out.join("stage2/final.ckpt"))
            });
            let extra = cfg.run.setting.extra_unlabeled_pool.clone();
            stage(
                &cli,
                &cfg,
                StageKind::AdversarialFinetune,
                data,
                *resume,
                Some(fe),
                dc,
                extra,
            )
        }
        Command::Eval {
            data,
            checkpoint,
            conditions,
            label,
        } => {
            let mut cfg = cfg.clone();
            if let Some(list) = conditions {
                cfg.eval.conditions =
                    EvalCondition::parse_list(list).map_err(|e| UsageError(e.to_string()))?;
            }
            let ckpt_path = checkpoint
                .clone()
                .unwrap_or_else(|| cli.out.join("stage3/final.ckpt"));
            let label = label.clone().unwrap_or_else(|| dir_label(&cli.out));
            eval(&cli, &cfg, data, &ckpt_path, &label)
        }
        Command::Report { runs } => report(&cli, runs),
    }
}

fn dir_label(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

#[allow(clippy::too_many_arguments)]
fn stage(
    cli: &Cli,
    cfg: &ExperimentConfig,
    kind: StageKind,
    data_dir: &Path,
    resume_run: bool,
    fe: Option<PathBuf>,
    dc: Option<PathBuf>,
    extra: Option<PathBuf>,
) -> Result<()> {
    match cfg.run.precision {
        Precision::F32 => stage_as::<f32>(cli, cfg, kind, data_dir, resume_run, fe, dc, extra),
        Precision::F64 => stage_as::<f64>(cli, cfg, kind, data_dir, resume_run, fe, dc, extra),
    }
}

#[allow(clippy::too_many_arguments)]
fn stage_as<T: Real>(
    cli: &Cli,
    cfg: &ExperimentConfig,
    kind: StageKind,
    data_dir: &Path,
    resume_run: bool,
    fe: Option<PathBuf>,
    dc: Option<PathBuf>,
    extra: Option<PathBuf>,
) -> Result<()> {
    let run = &cfg.run;
    if run.plan(kind).is_none() {
        return Err(UsageError(format!(
            "setting {} has no {} stage",
            run.setting.name,
            kind.dir_name()
        ))
        .into());
    }
    // Upstream checkpoints are checked before anything is written.
    let fe = fe.as_deref().map(load_checkpoint).transpose()?;
    let dc = dc.as_deref().map(load_checkpoint).transpose()?;
    let data = TrainingData::load_dir(data_dir, extra.as_deref())?;

    let dir = cli.out.join(kind.dir_name());
    let opts = StageOptions {
        out_dir: Some(dir.clone()),
        stop_after_epochs: None,
    };
    let outcome: StageOutcome<T> = if resume_run {
        let latest = dir.join("latest.ckpt");
        if !latest.exists() {
            return Err(
                MissingInput(format!("nothing to resume: {} not found", latest.display())).into(),
            );
        }
        resume(&latest, run, &data, &opts)?
    } else {
        claim(&dir, cli.force)?;
        snapshot(&dir, cfg)?;
        match kind {
            StageKind::FePretrain => run_stage1(run, &data, &opts)?,
            StageKind::DcPretrain => run_stage2(run, &data, fe.as_ref(), &opts)?,
            StageKind::AdversarialFinetune => {
                run_stage3(run, &data, fe.as_ref(), dc.as_ref(), &opts)?
            }
        }
    };
    if cli.verbose > 0 {
        for rec in &outcome.log {
            eprintln!("{}", serde_json::to_string(rec)?);
        }
    }
    let last = outcome.last();
    let losses = last
        .map(|r| {
            r.losses
                .iter()
                .map(|(k, v)| format!("{k} {v:.4}"))
                .collect::<Vec<_>>()
                .join(", ")
        })
        .unwrap_or_default();
    println!(
        "{} finished after {} epochs ({losses}){}{} -> {}",
        kind.dir_name(),
        outcome.checkpoint.epochs_done,
        last.and_then(|r| r.dc_accuracy)
            .map(|a| format!(", DC accuracy {a:.3}"))
            .unwrap_or_default(),
        last.and_then(|r| r.mean_noisy_auc)
            .map(|a| format!(", noisy validation AUC {a:.4}"))
            .unwrap_or_default(),
        dir.join("final.ckpt").display()
    );
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct LabeledReport {
    label: String,
    report: EvalReport,
}

fn eval(
    cli: &Cli,
    cfg: &ExperimentConfig,
    data_dir: &Path,
    ckpt_path: &Path,
    label: &str,
) -> Result<()> {
    let ckpt = load_checkpoint(ckpt_path)?;
    let report = match ckpt.precision {
        Precision::F32 => eval_as::<f32>(cfg, data_dir, &ckpt)?,
        Precision::F64 => eval_as::<f64>(cfg, data_dir, &ckpt)?,
    };
    let dir = cli.out.join("eval");
    claim(&dir, cli.force)?;
    snapshot(&dir, cfg)?;
    let table = render_table(&[(label.to_string(), report.clone())]);
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
    };
    write("report.jsonl", report.to_jsonl(label))?;
    write(
        "report.json",
        serde_json::to_string_pretty(&LabeledReport {
            label: label.to_string(),
            report: report.clone(),
        })?,
    )?;
    write("table.txt", table.clone())?;
    print!("{table}");
    if let Some(acc) = report.dc_probe_accuracy {
        println!("DC probe accuracy: {acc:.4}");
    }
    Ok(())
}

fn eval_as<T: Real>(
    cfg: &ExperimentConfig,
    data_dir: &Path,
    ckpt: &Checkpoint,
) -> Result<EvalReport> {
    if ckpt.stage != StageKind::AdversarialFinetune {
        return Err(UsageError(format!(
            "evaluation needs a stage-3 checkpoint, got {}",
            ckpt.stage.dir_name()
        ))
        .into());
    }
    let model: Model<T> = Model::from_state(&ckpt.model)?;
    let data = TrainingData::load_dir(data_dir, None)?;
    data.check_tags(model.config.n_tags)?;
    let set = data.test_set(
        &cfg.eval.conditions,
        cfg.eval.seed,
        cfg.eval.noise_count,
        model.config.encoder.input_length,
    )?;
    // Only a DC that went through stage 2 says anything about the embeddings.
    let untouched = Model::<T>::init(model.config.clone(), ckpt.seed)?;
    let trained_dc = untouched.digest(Collection::Dc) != model.digest(Collection::Dc);
    Ok(evaluate(
        &model,
        &set,
        trained_dc && cfg.eval.conditions.iter().any(|c| c.is_noisy()),
    )?)
}

fn report(cli: &Cli, runs: &[PathBuf]) -> Result<()> {
    let mut rows = Vec::new();
    for run in runs {
        let candidates = [
            run.join("eval/report.json"),
            run.join("report.json"),
            run.clone(),
        ];
        let path = candidates
            .iter()
            .find(|p| p.is_file())
            .ok_or_else(|| MissingInput(format!("no eval report under {}", run.display())))?;
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let r: LabeledReport =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        rows.push((r.label, r.report));
    }
    let first = &rows[0].1;
    let grid: Vec<EvalCondition> = first.conditions.iter().map(|c| c.condition).collect();
    for (label, r) in &rows {
        let g: Vec<EvalCondition> = r.conditions.iter().map(|c| c.condition).collect();
        if g != grid {
            return Err(UsageError(format!(
                "{label} was evaluated on a different condition grid"
            ))
            .into());
        }
    }
    let table = render_table(&rows);
    let jsonl: String = rows.iter().map(|(l, r)| r.to_jsonl(l)).collect();
    claim(&cli.out, cli.force)?;
    fs::write(cli.out.join("report.txt"), &table)?;
    fs::write(cli.out.join("report.jsonl"), jsonl)?;
    print!("{table}");
    Ok(())
}
