use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::data::training_sample;
use super::loss::total_loss;
use super::optim::{AdamW, AdamWConfig};
use super::schedule::{onecycle_lr, OneCycleConfig};
use crate::augment::{AugmentConfig, TtaConfig};
use crate::autodiff::Tensor;
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::eval::{fast_eval, precise_test, ConfusionMatrix};
use crate::labelspace::LabelSpace;
use crate::model::{Checkpoint, Geometry, Model};
use crate::rng::derive;

const STREAM_SHUFFLE: u64 = 0x7368_7566;
const STREAM_SAMPLE: u64 = 0x7361_6d70;
const STREAM_VAL: u64 = 0x7661_6c;
const STREAM_HEAD: u64 = 0x6865_6164;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    /// Epochs without improvement before stopping.
    pub patience: usize,
    /// Minimum decrease of the epoch-mean loss that counts as improvement.
    pub min_delta: f64,
    pub batch_size: usize,
    pub max_lr: f64,
    pub onecycle: OneCycleConfig,
    pub adamw: AdamWConfig,
    pub seed: u64,
    pub voxel_size: f64,
    pub crop_points: usize,
    pub augment: AugmentConfig,
    /// Voxel size of the per-epoch validation subsample; `voxel_size` when unset.
    pub eval_voxel_size: Option<f64>,
    /// Where to write the last finite model if the loss diverges.
    pub dump_path: Option<PathBuf>,
    /// Stop once validation mIoU reaches this value.
    pub target_miou: Option<f64>,
    pub validation: Validation,
}

/// How the per-epoch validation score is computed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Validation {
    /// One voxel subsample per scene.
    #[default]
    Fast,
    /// Every fragment under every augmentation instance, merged by voting.
    Precise(TtaConfig),
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 100,
            patience: 10,
            min_delta: 1e-4,
            batch_size: 2,
            max_lr: 0.006,
            onecycle: OneCycleConfig::default(),
            adamw: AdamWConfig::default(),
            seed: 0,
            voxel_size: 0.025,
            crop_points: 100_000,
            augment: AugmentConfig::default(),
            eval_voxel_size: None,
            dump_path: None,
            target_miou: None,
            validation: Validation::Fast,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        let oc = &self.onecycle;
        if !(oc.warmup_fraction > 0.0 && oc.warmup_fraction < 1.0) {
            return bad("warmup_fraction must lie in (0, 1)");
        }
        if !(oc.initial_divisor > 1.0 && oc.final_divisor > 1.0) {
            return bad("one-cycle divisors must exceed 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.max_lr >= 0.0 && self.max_lr.is_finite()) {
            return bad("max_lr must be finite and non-negative");
        }
        if !(self.voxel_size > 0.0) || self.eval_voxel_size.is_some_and(|v| !(v > 0.0)) {
            return bad("voxel sizes must be positive");
        }
        if self.crop_points == 0 {
            return bad("crop_points must be positive");
        }
        if !(self.min_delta >= 0.0) {
            return bad("min_delta must be non-negative");
        }
        let a = &self.adamw;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
            return bad("AdamW betas must lie in [0, 1)");
        }
        if !(a.epsilon > 0.0 && a.weight_decay >= 0.0) {
            return bad("AdamW epsilon must be positive and weight decay non-negative");
        }
        self.augment.validate()
    }

    fn eval_voxel(&self) -> f64 {
        self.eval_voxel_size.unwrap_or(self.voxel_size)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStop,
    TargetReached,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopReason::MaxEpochs => "max_epochs",
            StopReason::EarlyStop => "early_stop",
            StopReason::TargetReached => "target_reached",
        })
    }
}

/// Tracks the best epoch loss and signals when it stops improving.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_delta: f64,
    best: f64,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    /// Records an epoch loss; returns true when training should stop.
    pub fn update(&mut self, loss: f64) -> bool {
        if self.best.is_infinite() || loss < self.best - self.min_delta {
            self.best = loss;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.patience > 0 && self.stale >= self.patience
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

/// Validation scores; absent when there are no validation scenes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValScores {
    pub miou: f64,
    pub macc: f64,
    pub all_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    pub val: Option<ValScores>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Learning rate of every optimizer step.
    pub lr_trace: Vec<f64>,
    pub stop_reason: StopReason,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    /// First epoch whose validation mIoU reaches `threshold`.
    pub fn epochs_to_reach(&self, threshold: f64) -> Option<usize> {
        self.epochs
            .iter()
            .find(|e| e.val.is_some_and(|v| v.miou >= threshold))
            .map(|e| e.epoch)
    }

    /// Tab-separated table: epoch, loss, lr, mIoU, mAcc, allAcc.
    pub fn to_table(&self) -> String {
        let mut out = String::from("epoch\tloss\tlr\tmIoU\tmAcc\tallAcc\n");
        for e in &self.epochs {
            let (m, a, all) = match e.val {
                Some(v) => (
                    v.miou.to_string(),
                    v.macc.to_string(),
                    v.all_acc.to_string(),
                ),
                None => ("-".into(), "-".into(), "-".into()),
            };
            let _ = writeln!(out, "{}\t{}\t{}\t{m}\t{a}\t{all}", e.epoch, e.loss, e.lr);
        }
        let _ = writeln!(out, "# stop_reason\t{}", self.stop_reason);
        out
    }
}

struct StepResult {
    loss: f64,
    grads: Vec<Tensor>,
}

fn sample_gradient(
    model: &Model,
    pc: &PointCloud,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Option<StepResult>> {
    let sample = training_sample(pc, &cfg.augment, cfg.voxel_size, cfg.crop_points, seed)?;
    if sample.len() < model.config().k_neighbors {
        return Ok(None);
    }
    let geometry = Geometry::build(&sample.positions, model.config())?;
    let fwd = model.record(&geometry, &sample.features)?;
    if !fwd.logits().is_finite() {
        let grads = model
            .params()
            .iter()
            .map(|p| Tensor::zeros(p.tensor.rows, p.tensor.cols))
            .collect();
        return Ok(Some(StepResult {
            loss: f64::NAN,
            grads,
        }));
    }
    let loss = match total_loss(fwd.logits(), &sample.labels) {
        Ok(l) => l,
        Err(Error::AllIgnored) => return Ok(None),
        Err(e) => return Err(e),
    };
    let grads = model.backward_recorded(&fwd, &loss.grad)?;
    Ok(Some(StepResult {
        loss: loss.loss,
        grads,
    }))
}

/// Validation scores on a single voxel subsample per scene.
pub fn validate_fast(
    model: &Model,
    scenes: &[PointCloud],
    voxel: f64,
    seed: u64,
) -> Result<Option<ValScores>> {
    validation_scores(model, scenes, voxel, &Validation::Fast, seed)
}

/// Validation scores under `protocol`; `None` without scenes.
pub fn validation_scores(
    model: &Model,
    scenes: &[PointCloud],
    voxel: f64,
    protocol: &Validation,
    seed: u64,
) -> Result<Option<ValScores>> {
    if scenes.is_empty() {
        return Ok(None);
    }
    let preds = crate::exec::map_range(scenes.len(), |i| {
        let scene_seed = derive(seed, &[STREAM_VAL, i as u64]);
        match protocol {
            Validation::Fast => fast_eval(model, &scenes[i], voxel, scene_seed),
            Validation::Precise(tta) => {
                precise_test(model, &scenes[i], voxel, tta, scene_seed).map(|o| o.labels)
            }
        }
    });
    let mut conf = ConfusionMatrix::new(model.num_classes());
    for (pc, pred) in scenes.iter().zip(preds) {
        let truth = pc
            .labels
            .as_ref()
            .ok_or_else(|| Error::MissingLabels(pc.scene_id.clone()))?;
        conf.accumulate(&pred?, truth)?;
    }
    let report = conf.metrics()?;
    Ok(Some(ValScores {
        miou: report.miou,
        macc: report.macc,
        all_acc: report.all_acc,
    }))
}

fn check_scenes(scenes: &[PointCloud], num_classes: usize) -> Result<()> {
    for pc in scenes {
        if pc.labels.is_none() {
            return Err(Error::MissingLabels(pc.scene_id.clone()));
        }
        pc.validate(Some(num_classes))?;
    }
    Ok(())
}

fn dump(model: &Model, space: &LabelSpace, step: usize, cfg: &TrainConfig) {
    if let Some(path) = &cfg.dump_path {
        let ckpt = Checkpoint {
            model: model.clone(),
            label_space: space.name.clone(),
            step: step as u64,
        };
        // The divergence error is what the caller needs; a failed dump is secondary.
        let _ = ckpt.save(path);
    }
}

/// Supervised training with CE + Lovász-Softmax, AdamW and a one-cycle schedule.
///
/// Scene labels must already be expressed in `space`, whose size must match
/// the model's class count.
pub fn train(
    mut model: Model,
    train_scenes: &[PointCloud],
    val_scenes: &[PointCloud],
    space: &LabelSpace,
    cfg: &TrainConfig,
) -> Result<(Model, TrainHistory)> {
    cfg.validate()?;
    if space.len() != model.num_classes() {
        return Err(Error::LabelSpace(format!(
            "label space `{}` has {} classes but the model predicts {}",
            space.name,
            space.len(),
            model.num_classes()
        )));
    }
    if train_scenes.is_empty() {
        return Err(Error::InvalidArgument("no training scenes".into()));
    }
    check_scenes(train_scenes, model.num_classes())?;
    check_scenes(val_scenes, model.num_classes())?;

    let steps_per_epoch = train_scenes.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.max_epochs;
    let mut opt = AdamW::new(cfg.adamw);
    let mut stopper = EarlyStopping::new(cfg.patience, cfg.min_delta);
    let mut history = TrainHistory {
        epochs: Vec::new(),
        lr_trace: Vec::with_capacity(total_steps),
        stop_reason: StopReason::MaxEpochs,
    };
    let mut step = 0;

    for epoch in 0..cfg.max_epochs {
        let mut order: Vec<usize> = (0..train_scenes.len()).collect();
        {
            use rand::seq::SliceRandom;
            order.shuffle(&mut crate::rng::stream(
                cfg.seed,
                &[STREAM_SHUFFLE, epoch as u64],
            ));
        }
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        let mut lr = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            lr = onecycle_lr(step, total_steps, cfg.max_lr, &cfg.onecycle);
            history.lr_trace.push(lr);
            let results = crate::exec::map(batch, |&i| {
                let seed = derive(cfg.seed, &[STREAM_SAMPLE, epoch as u64, i as u64]);
                sample_gradient(&model, &train_scenes[i], cfg, seed)
            });
            let mut grads: Option<Vec<Tensor>> = None;
            let mut batch_loss = 0.0;
            let mut used = 0usize;
            for r in results {
                let Some(r) = r? else { continue };
                batch_loss += r.loss;
                used += 1;
                match &mut grads {
                    None => grads = Some(r.grads),
                    Some(acc) => acc
                        .iter_mut()
                        .zip(&r.grads)
                        .for_each(|(a, g)| a.add_assign(g)),
                }
            }
            if let Some(mut grads) = grads {
                let loss = batch_loss / used as f64;
                if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                    dump(&model, space, step, cfg);
                    return Err(Error::Diverged {
                        epoch: epoch + 1,
                        step,
                        loss,
                    });
                }
                let inv = 1.0 / used as f64;
                grads.iter_mut().for_each(|g| g.scale(inv));
                opt.step(
                    model.params_mut().iter_mut().map(|p| &mut p.tensor),
                    &grads,
                    lr,
                )?;
                if !model.is_finite() {
                    dump(&model, space, step, cfg);
                    return Err(Error::Diverged {
                        epoch: epoch + 1,
                        step,
                        loss,
                    });
                }
                loss_sum += loss;
                loss_count += 1;
            }
            step += 1;
        }
        let loss = if loss_count > 0 {
            loss_sum / loss_count as f64
        } else {
            f64::NAN
        };
        let val = validation_scores(
            &model,
            val_scenes,
            cfg.eval_voxel(),
            &cfg.validation,
            cfg.seed,
        )?;
        history.epochs.push(EpochRecord {
            epoch: epoch + 1,
            loss,
            lr,
            val,
        });
        if let (Some(target), Some(v)) = (cfg.target_miou, val) {
            if v.miou >= target {
                history.stop_reason = StopReason::TargetReached;
                break;
            }
        }
        if loss_count > 0 && stopper.update(loss) {
            history.stop_reason = StopReason::EarlyStop;
            break;
        }
    }
    Ok((model, history))
}

/// Transfer learning: swap in a fresh head for `target` and train the whole
/// network with a reduced peak learning rate.
pub fn finetune(
    checkpoint: &Checkpoint,
    target: &LabelSpace,
    train_scenes: &[PointCloud],
    val_scenes: &[PointCloud],
    cfg: &TrainConfig,
    baseline_max_lr: f64,
) -> Result<(Model, TrainHistory)> {
    target.validate()?;
    if cfg.max_lr > baseline_max_lr {
        return Err(Error::InvalidArgument(format!(
            "fine-tuning max_lr {} exceeds the baseline {}",
            cfg.max_lr, baseline_max_lr
        )));
    }
    if checkpoint.label_space == target.name && checkpoint.model.num_classes() != target.len() {
        return Err(Error::LabelSpace(format!(
            "checkpoint claims label space `{}` but predicts {} classes instead of {}",
            target.name,
            checkpoint.model.num_classes(),
            target.len()
        )));
    }
    let model = checkpoint
        .model
        .reinit_head(target.len(), derive(cfg.seed, &[STREAM_HEAD]))?;
    if cfg.max_epochs == 0 {
        return Ok((
            model,
            TrainHistory {
                epochs: Vec::new(),
                lr_trace: Vec::new(),
                stop_reason: StopReason::MaxEpochs,
            },
        ));
    }
    train(model, train_scenes, val_scenes, target, cfg)
}
