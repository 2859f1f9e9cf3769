use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{assemble_stage23_batch, stage1_views, SettingName, TrainingPools};
use crate::evalkit::{evaluate, probe_accuracy, ConditionScore};
use crate::netlab::{
    contrastive_objective, domain_objective, finetune_objective, Adam, AdamConfig, Collection,
    FinetuneBatch, FinetuneMode, Grads, Model, Real, Tensor3,
};
use crate::seeding::stream;

use super::checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, EarlyStopState};
use super::{Result, RunConfig, StageKind, TrainError, TrainingData, TrainingStagePlan};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Precision {
    #[serde(rename = "32")]
    F32,
    #[serde(rename = "64")]
    F64,
}

impl Precision {
    pub fn of<T: Real>() -> Self {
        if std::mem::size_of::<T>() == 8 {
            Precision::F64
        } else {
            Precision::F32
        }
    }

    pub fn bits(self) -> u32 {
        match self {
            Precision::F32 => 32,
            Precision::F64 => 64,
        }
    }
}

/// One line of a stage's metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: StageKind,
    /// 1-based.
    pub epoch: usize,
    pub steps: usize,
    /// Mean training losses over the epoch's steps.
    pub losses: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_dc_accuracy: Option<f64>,
    /// Frozen or current DC on the held-out balanced probe.
    pub dc_accuracy: Option<f64>,
    pub validation: Option<Vec<ConditionScore>>,
    pub mean_noisy_auc: Option<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct StageOptions {
    /// Stage directory for `metrics.jsonl`, `latest.ckpt` and `final.ckpt`.
    pub out_dir: Option<PathBuf>,
    /// Stop (as if interrupted) once this many epochs are done in total.
    pub stop_after_epochs: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct StageOutcome<T> {
    pub model: Model<T>,
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochRecord>,
    /// False when the run stopped early because of `stop_after_epochs`.
    pub completed: bool,
    pub frozen_before: BTreeMap<Collection, String>,
    pub frozen_after: BTreeMap<Collection, String>,
}

impl<T> StageOutcome<T> {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.log.last()
    }
}

struct StageState<T> {
    plan: TrainingStagePlan,
    model: Model<T>,
    adam: Adam<T>,
    epochs_done: usize,
    finished: bool,
    early: Option<EarlyStopState>,
    frozen: BTreeMap<Collection, String>,
    log: Vec<EpochRecord>,
}

fn trainable_params<T: Real>(model: &mut Model<T>, stage: StageKind) -> Vec<&mut Vec<T>> {
    let mut p = Vec::new();
    match stage {
        StageKind::FePretrain => {
            p.extend(model.encoder.params_mut());
            p.extend(model.projector.params_mut());
        }
        StageKind::DcPretrain => p.extend(model.dc.params_mut()),
        StageKind::AdversarialFinetune => {
            p.extend(model.encoder.params_mut());
            p.extend(model.lp.params_mut());
        }
    }
    p
}

fn digests<T: Real>(model: &Model<T>, collections: &[Collection]) -> BTreeMap<Collection, String> {
    collections.iter().map(|&c| (c, model.digest(c))).collect()
}

impl<T: Real> StageState<T> {
    fn fresh(cfg: &RunConfig, stage: StageKind, mut model: Model<T>) -> Result<Self> {
        let plan = cfg.plan(stage).ok_or_else(|| {
            TrainError::Config(format!(
                "setting {} has no {stage:?} stage",
                cfg.setting.name
            ))
        })?;
        let params: Vec<&Vec<T>> = trainable_params(&mut model, stage)
            .into_iter()
            .map(|p| &*p)
            .collect();
        let adam = Adam::for_params(AdamConfig::with_lr(plan.learning_rate), &params);
        let early = plan.early_stop.map(|_| EarlyStopState {
            best_metric: None,
            best_epoch: 0,
            epochs_since_best: 0,
            best_model: None,
        });
        Ok(Self {
            frozen: digests(&model, &plan.frozen),
            plan,
            model,
            adam,
            epochs_done: 0,
            finished: false,
            early,
            log: Vec::new(),
        })
    }

    fn restore(cfg: &RunConfig, ckpt: Checkpoint) -> Result<Self> {
        let plan = cfg.plan(ckpt.stage).ok_or_else(|| {
            TrainError::ConfigMismatch(format!("setting has no {:?} stage", ckpt.stage))
        })?;
        let mut model = Model::from_state(&ckpt.model)?;
        let params: Vec<&Vec<T>> = trainable_params(&mut model, ckpt.stage)
            .into_iter()
            .map(|p| &*p)
            .collect();
        let adam = Adam::from_state(&ckpt.optimizer, &params)?;
        Ok(Self {
            plan,
            model,
            adam,
            epochs_done: ckpt.epochs_done,
            finished: ckpt.finished,
            early: ckpt.early_stop,
            frozen: ckpt.frozen_digests,
            log: ckpt.log,
        })
    }

    fn checkpoint(&self, cfg: &RunConfig) -> Checkpoint {
        Checkpoint {
            stage: self.plan.stage,
            epochs_done: self.epochs_done,
            finished: self.finished,
            config_fingerprint: cfg.fingerprint(),
            precision: Precision::of::<T>(),
            seed: cfg.seed,
            model: self.model.to_state(),
            optimizer: self.adam.to_state(),
            early_stop: self.early.clone(),
            frozen_digests: self.frozen.clone(),
            log: self.log.clone(),
        }
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_log(path: &Path, log: &[EpochRecord]) -> Result<()> {
    let mut text = String::new();
    for r in log {
        text.push_str(&serde_json::to_string(r).expect("records serialize"));
        text.push('\n');
    }
    fs::write(path, text).map_err(io(path))
}

fn append_log(path: &Path, rec: &EpochRecord) -> Result<()> {
    let mut f = fs::OpenOptions::new()
        .append(true)
        .create(true)
        .open(path)
        .map_err(io(path))?;
    writeln!(
        f,
        "{}",
        serde_json::to_string(rec).expect("records serialize")
    )
    .map_err(io(path))
}

/// Runs epochs until the plan, early stopping or `opts` says stop.
fn drive<T: Real>(
    cfg: &RunConfig,
    mut st: StageState<T>,
    opts: &StageOptions,
    mut epoch_fn: impl FnMut(&mut Model<T>, &mut Adam<T>, usize) -> Result<EpochRecord>,
) -> Result<StageOutcome<T>> {
    let metrics = opts.out_dir.as_ref().map(|d| d.join("metrics.jsonl"));
    if let Some(dir) = &opts.out_dir {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    if let Some(m) = &metrics {
        write_log(m, &st.log)?;
    }
    let save = |st: &StageState<T>, name: &str| -> Result<Checkpoint> {
        let ckpt = st.checkpoint(cfg);
        if let Some(dir) = &opts.out_dir {
            write_checkpoint(&dir.join(name), &ckpt)?;
        }
        Ok(ckpt)
    };

    let mut completed = true;
    while !st.finished {
        let epoch = st.epochs_done;
        let rec = epoch_fn(&mut st.model, &mut st.adam, epoch)?;
        if let Some(m) = &metrics {
            append_log(m, &rec)?;
        }
        st.epochs_done += 1;
        let mut stop = st.epochs_done >= st.plan.max_epochs;
        if let (Some(early), Some(rule)) = (st.early.as_mut(), st.plan.early_stop) {
            let metric = rec.mean_noisy_auc.unwrap_or(f64::NEG_INFINITY);
            if early.best_metric.is_none_or(|b| metric > b) {
                early.best_metric = Some(metric);
                early.best_epoch = st.epochs_done;
                early.epochs_since_best = 0;
                early.best_model = Some(st.model.to_state());
            } else {
                early.epochs_since_best += 1;
            }
            stop |= early.epochs_since_best >= rule.patience;
        }
        st.log.push(rec);
        if stop {
            if let Some(best) = st.early.as_ref().and_then(|e| e.best_model.as_ref()) {
                st.model = Model::from_state(best)?;
            }
            st.finished = true;
            break;
        }
        save(&st, "latest.ckpt")?;
        if opts.stop_after_epochs.is_some_and(|k| st.epochs_done >= k) {
            completed = false;
            break;
        }
    }
    let checkpoint = if st.finished {
        let c = save(&st, "latest.ckpt")?;
        save(&st, "final.ckpt")?;
        c
    } else {
        st.checkpoint(cfg)
    };
    let frozen_after = digests(&st.model, &st.plan.frozen);
    for (c, d) in &st.frozen {
        if frozen_after.get(c) != Some(d) {
            return Err(TrainError::FreezeViolation(*c));
        }
    }
    Ok(StageOutcome {
        model: st.model,
        checkpoint,
        log: st.log,
        completed,
        frozen_before: st.frozen,
        frozen_after,
    })
}

fn concat_grads<T>(mut a: Grads<T>, b: Grads<T>) -> Grads<T> {
    a.extend(b);
    a
}

fn diverged(stage: StageKind, epoch: usize, step: usize, detail: impl Into<String>) -> TrainError {
    TrainError::DivergenceDetected {
        stage,
        epoch: epoch + 1,
        step,
        detail: detail.into(),
    }
}

fn check_step<T: Real>(
    stage: StageKind,
    epoch: usize,
    step: usize,
    loss: T,
    grads: &Grads<T>,
) -> Result<()> {
    if !loss.is_finite() {
        return Err(diverged(stage, epoch, step, format!("loss is {loss}")));
    }
    if grads.iter().flatten().any(|g| !g.is_finite()) {
        return Err(diverged(stage, epoch, step, "non-finite gradient"));
    }
    Ok(())
}

fn stream_tag(stage: StageKind, what: &str) -> String {
    format!("{}-{what}", stage.dir_name())
}

fn check_precision<T: Real>(cfg: &RunConfig) -> Result<()> {
    if Precision::of::<T>() != cfg.precision {
        return Err(TrainError::Config(format!(
            "configured for {}-bit but running {}-bit",
            cfg.precision.bits(),
            Precision::of::<T>().bits()
        )));
    }
    Ok(())
}

fn check_upstream(
    cfg: &RunConfig,
    ckpt: Option<&Checkpoint>,
    stage: StageKind,
) -> Result<Checkpoint> {
    let ckpt = ckpt.ok_or_else(|| {
        TrainError::MissingCheckpoint(format!("{} checkpoint required", stage.dir_name()))
    })?;
    if ckpt.stage != stage || !ckpt.finished {
        return Err(TrainError::MissingCheckpoint(format!(
            "expected a finished {} checkpoint, got {:?} after {} epochs",
            stage.dir_name(),
            ckpt.stage,
            ckpt.epochs_done
        )));
    }
    if ckpt.model.config != cfg.model {
        return Err(TrainError::ConfigMismatch(format!(
            "{} checkpoint has a different model",
            stage.dir_name()
        )));
    }
    if ckpt.precision != cfg.precision {
        return Err(TrainError::ConfigMismatch(format!(
            "{} checkpoint is {}-bit, run is {}-bit",
            stage.dir_name(),
            ckpt.precision.bits(),
            cfg.precision.bits()
        )));
    }
    Ok(ckpt.clone())
}

/// Stage 1: NT-Xent on two augmented views per pretraining track.
pub fn run_stage1<T: Real>(
    cfg: &RunConfig,
    data: &TrainingData,
    opts: &StageOptions,
) -> Result<StageOutcome<T>> {
    cfg.validate()?;
    check_precision::<T>(cfg)?;
    let model = Model::init(cfg.model.clone(), cfg.seed)?;
    stage1_from(
        cfg,
        data,
        StageState::fresh(cfg, StageKind::FePretrain, model)?,
        opts,
    )
}

fn stage1_from<T: Real>(
    cfg: &RunConfig,
    data: &TrainingData,
    st: StageState<T>,
    opts: &StageOptions,
) -> Result<StageOutcome<T>> {
    const STAGE: StageKind = StageKind::FePretrain;
    if data.pretrain.len() < 2 {
        return Err(crate::corpus::CorpusError::EmptyPool("pretraining tracks".into()).into());
    }
    let tau = T::of(cfg.temperature);
    drive(cfg, st, opts, |model, adam, epoch| {
        let mut order: Vec<usize> = (0..data.pretrain.len()).collect();
        order.shuffle(&mut stream(
            cfg.seed,
            &stream_tag(STAGE, "order"),
            epoch as u64,
        ));
        let mut aug = stream(cfg.seed, &stream_tag(STAGE, "augment"), epoch as u64);
        let (mut sum, mut steps) = (0.0, 0);
        for chunk in order.chunks(cfg.batch.stage1).filter(|c| c.len() >= 2) {
            let ids: Vec<String> = chunk.iter().map(|&i| data.pretrain[i].id.clone()).collect();
            let b = stage1_views(&ids, &data.noise_train, &data.bank, &cfg.augment, &mut aug)?;
            let vi = Tensor3::<T>::from_waveforms(&b.view_i)?;
            let vj = Tensor3::<T>::from_waveforms(&b.view_j)?;
            let out = contrastive_objective(model, &vi, &vj, tau)?;
            let grads = concat_grads(out.encoder_grads, out.projector_grads);
            check_step(STAGE, epoch, steps, out.loss, &grads)?;
            adam.step(trainable_params(model, STAGE), &grads);
            model.encoder.commit_running_stats(&out.encoder_tape);
            model.projector.commit_running_stats(&out.projector_tape);
            sum += out.loss.as_f64();
            steps += 1;
        }
        Ok(EpochRecord {
            stage: STAGE,
            epoch: epoch + 1,
            steps,
            losses: BTreeMap::from([("ntxent".to_string(), sum / steps.max(1) as f64)]),
            train_dc_accuracy: None,
            dc_accuracy: None,
            validation: None,
            mean_noisy_auc: None,
        })
    })
}

/// Stage 2: the domain classifier learns clean (0) against noisy (1) on
/// embeddings of the frozen stage-1 encoder.
pub fn run_stage2<T: Real>(
    cfg: &RunConfig,
    data: &TrainingData,
    fe_ckpt: Option<&Checkpoint>,
    opts: &StageOptions,
) -> Result<StageOutcome<T>> {
    cfg.validate()?;
    check_precision::<T>(cfg)?;
    if !cfg.setting.uses_dc {
        return Err(TrainError::Config(format!(
            "setting {} does not train a DC",
            cfg.setting.name
        )));
    }
    let fe = check_upstream(cfg, fe_ckpt, StageKind::FePretrain)?;
    let mut model = Model::init(cfg.model.clone(), cfg.seed)?;
    model.copy_collection_from(&Model::from_state(&fe.model)?, Collection::Fe)?;
    stage2_from(
        cfg,
        data,
        StageState::fresh(cfg, StageKind::DcPretrain, model)?,
        opts,
    )
}

fn stage2_from<T: Real>(
    cfg: &RunConfig,
    data: &TrainingData,
    st: StageState<T>,
    opts: &StageOptions,
) -> Result<StageOutcome<T>> {
    const STAGE: StageKind = StageKind::DcPretrain;
    let pools = TrainingPools::new(
        &cfg.setting,
        &data.tracks,
        &data.extra,
        data.noise_train.clone(),
    )?;
    let probe = data.probe_set(cfg, cfg.validation.seed)?;
    drive(cfg, st, opts, |model, adam, epoch| {
        let mut order: Vec<usize> = (0..pools.source().len()).collect();
        order.shuffle(&mut stream(
            cfg.seed,
            &stream_tag(STAGE, "order"),
            epoch as u64,
        ));
        let mut src_rng = stream(cfg.seed, &stream_tag(STAGE, "source"), epoch as u64);
        let mut trg_rng = stream(cfg.seed, &stream_tag(STAGE, "target"), epoch as u64);
        let (mut loss_sum, mut acc_sum, mut steps) = (0.0, 0.0, 0);
        for chunk in order.chunks(cfg.batch.source) {
            let b = assemble_stage23_batch(
                &pools,
                &data.bank,
                &cfg.augment,
                chunk,
                cfg.batch.target,
                &mut src_rng,
                &mut trg_rng,
            )?;
            let src: Vec<&[f32]> = b.src.iter().map(|s| s.waveform.as_slice()).collect();
            let trg: Vec<&[f32]> = b.trg.iter().map(|t| t.waveform.as_slice()).collect();
            let e_src = model.embed(&Tensor3::<T>::from_waveforms(&src)?)?;
            let e_trg = model.embed(&Tensor3::<T>::from_waveforms(&trg)?)?;
            let out = domain_objective(model, &e_src, &e_trg)?;
            check_step(STAGE, epoch, steps, out.loss, &out.dc_grads)?;
            adam.step(trainable_params(model, STAGE), &out.dc_grads);
            model.dc.commit_running_stats(&out.dc_tape);
            loss_sum += out.loss.as_f64();
            acc_sum += out.accuracy;
            steps += 1;
        }
        let n = steps.max(1) as f64;
        Ok(EpochRecord {
            stage: STAGE,
            epoch: epoch + 1,
            steps,
            losses: BTreeMap::from([("dc_bce".to_string(), loss_sum / n)]),
            train_dc_accuracy: Some(acc_sum / n),
            dc_accuracy: Some(probe_accuracy(model, &probe)?),
            validation: None,
            mean_noisy_auc: None,
        })
    })
}

/// Stage 3: encoder and label predictor finetuned; the frozen DC feeds a
/// reversed gradient under the proposed settings.
pub fn run_stage3<T: Real>(
    cfg: &RunConfig,
    data: &TrainingData,
    fe_ckpt: Option<&Checkpoint>,
    dc_ckpt: Option<&Checkpoint>,
    opts: &StageOptions,
) -> Result<StageOutcome<T>> {
    cfg.validate()?;
    check_precision::<T>(cfg)?;
    let fe = check_upstream(cfg, fe_ckpt, StageKind::FePretrain)?;
    let fe_model: Model<T> = Model::from_state(&fe.model)?;
    let mut model = Model::init(cfg.model.clone(), cfg.seed)?;
    model.copy_collection_from(&fe_model, Collection::Fe)?;
    if cfg.setting.uses_dc {
        let dc = check_upstream(cfg, dc_ckpt, StageKind::DcPretrain)?;
        let dc_model: Model<T> = Model::from_state(&dc.model)?;
        if dc_model.digest(Collection::Fe) != fe_model.digest(Collection::Fe) {
            return Err(TrainError::ConfigMismatch(
                "stage-2 checkpoint was trained on a different stage-1 encoder".into(),
            ));
        }
        model.copy_collection_from(&dc_model, Collection::Dc)?;
    }
    stage3_from(
        cfg,
        data,
        StageState::fresh(cfg, StageKind::AdversarialFinetune, model)?,
        opts,
    )
}

fn stage3_from<T: Real>(
    cfg: &RunConfig,
    data: &TrainingData,
    st: StageState<T>,
    opts: &StageOptions,
) -> Result<StageOutcome<T>> {
    const STAGE: StageKind = StageKind::AdversarialFinetune;
    data.check_tags(cfg.model.n_tags)?;
    let pools = TrainingPools::new(
        &cfg.setting,
        &data.tracks,
        &data.extra,
        data.noise_train.clone(),
    )?;
    let valid = data.validation_set(cfg)?;
    let probe = if cfg.setting.uses_dc {
        Some(data.probe_set(cfg, cfg.validation.seed)?)
    } else {
        None
    };
    let n_tags = cfg.model.n_tags;
    let steps_per_epoch = pools.source().len().div_ceil(cfg.batch.source);
    let total_steps = (steps_per_epoch * st.plan.max_epochs).max(1);
    let flat_tags = |rows: &mut dyn Iterator<Item = &Vec<u8>>| -> Vec<T> {
        rows.flat_map(|r| r.iter().map(|&t| T::of(t as f64)))
            .collect()
    };

    drive(cfg, st, opts, |model, adam, epoch| {
        let mut order: Vec<usize> = (0..pools.source().len()).collect();
        order.shuffle(&mut stream(
            cfg.seed,
            &stream_tag(STAGE, "order"),
            epoch as u64,
        ));
        let mut src_rng = stream(cfg.seed, &stream_tag(STAGE, "source"), epoch as u64);
        let mut trg_rng = stream(cfg.seed, &stream_tag(STAGE, "target"), epoch as u64);
        let mut sums: BTreeMap<String, f64> = BTreeMap::new();
        let mut steps = 0;
        for chunk in order.chunks(cfg.batch.source) {
            let n_target = if cfg.setting.uses_target() {
                cfg.batch.target
            } else {
                0
            };
            let b = assemble_stage23_batch(
                &pools,
                &data.bank,
                &cfg.augment,
                chunk,
                n_target,
                &mut src_rng,
                &mut trg_rng,
            )?;
            let src_w: Vec<&[f32]> = b.src.iter().map(|s| s.waveform.as_slice()).collect();
            let src = Tensor3::<T>::from_waveforms(&src_w)?;
            let src_tags = flat_tags(&mut b.src.iter().map(|s| &s.tags));
            let trg = if b.trg.is_empty() {
                None
            } else {
                let w: Vec<&[f32]> = b.trg.iter().map(|t| t.waveform.as_slice()).collect();
                Some(Tensor3::<T>::from_waveforms(&w)?)
            };
            let trg_tags = b.trg_tags.as_ref().map(|rows| flat_tags(&mut rows.iter()));
            debug_assert!(trg_tags
                .as_ref()
                .is_none_or(|t| t.len() == b.trg.len() * n_tags));
            let mode = match cfg.setting.name {
                SettingName::Baseline => FinetuneMode::Supervised,
                SettingName::Oracle => FinetuneMode::Oracle,
                SettingName::ProposedA | SettingName::ProposedB => {
                    let progress = (epoch * steps_per_epoch + steps) as f64 / total_steps as f64;
                    FinetuneMode::Adversarial {
                        lambda: cfg.grl.lambda_at(progress),
                    }
                }
            };
            let batch = FinetuneBatch {
                src: &src,
                src_tags: &src_tags,
                trg: trg.as_ref(),
                trg_tags: trg_tags.as_deref(),
            };
            let out = finetune_objective(model, &batch, mode)?;
            let grads = concat_grads(out.encoder_grads, out.lp_grads);
            check_step(STAGE, epoch, steps, out.total, &grads)?;
            adam.step(trainable_params(model, STAGE), &grads);
            model.encoder.commit_running_stats(&out.src_encoder_tape);
            let mut add = |k: &str, v: Option<T>| {
                if let Some(v) = v {
                    *sums.entry(k.to_string()).or_default() += v.as_f64();
                }
            };
            add("lp_src", Some(out.lp_loss_src));
            add("lp_trg", out.lp_loss_trg);
            add("dc_src", out.dc_loss_src);
            add("dc_trg", out.dc_loss_trg);
            add("total", Some(out.total));
            steps += 1;
        }
        let n = steps.max(1) as f64;
        let report = evaluate(model, &valid, false)?;
        let dc_accuracy = match &probe {
            Some(p) => Some(probe_accuracy(model, p)?),
            None => None,
        };
        Ok(EpochRecord {
            stage: STAGE,
            epoch: epoch + 1,
            steps,
            losses: sums.into_iter().map(|(k, v)| (k, v / n)).collect(),
            train_dc_accuracy: None,
            dc_accuracy,
            mean_noisy_auc: report.mean_noisy_auc(),
            validation: Some(report.conditions),
        })
    })
}

/// Continues the stage recorded in the checkpoint at `path`. The run
/// configuration must be the one the checkpoint was written under.
pub fn resume<T: Real>(
    path: &Path,
    cfg: &RunConfig,
    data: &TrainingData,
    opts: &StageOptions,
) -> Result<StageOutcome<T>> {
    let ckpt = read_checkpoint(path)?;
    resume_from(ckpt, cfg, data, opts)
}

pub(crate) fn resume_from<T: Real>(
    ckpt: Checkpoint,
    cfg: &RunConfig,
    data: &TrainingData,
    opts: &StageOptions,
) -> Result<StageOutcome<T>> {
    cfg.validate()?;
    check_precision::<T>(cfg)?;
    if ckpt.config_fingerprint != cfg.fingerprint() {
        return Err(TrainError::ConfigMismatch(
            "configuration differs from the one the checkpoint was written with".into(),
        ));
    }
    if ckpt.precision != cfg.precision {
        return Err(TrainError::ConfigMismatch(
            "checkpoint precision differs".into(),
        ));
    }
    let stage = ckpt.stage;
    let st = StageState::restore(cfg, ckpt)?;
    match stage {
        StageKind::FePretrain => stage1_from(cfg, data, st, opts),
        StageKind::DcPretrain => stage2_from(cfg, data, st, opts),
        StageKind::AdversarialFinetune => stage3_from(cfg, data, st, opts),
    }
}
