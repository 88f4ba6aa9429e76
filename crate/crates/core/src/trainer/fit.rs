use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{concatenate, s, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::{compose_batch, omni_streams, pk_sample, ClassMap, SequenceStore, Sgd, TrainConfig, TrainError};
use crate::losses::{omni_objective, two_stream_objective, LossReport, StreamView, CE, CROSS_TRIPLET, TRIPLET};
use crate::model::{Checkpoint, OmniGait, Stream, TrainBatch, Variant};
use crate::nn::Module;
use crate::synthgen::mix_seed;

pub const LOG_FILE: &str = "train.log";
pub const LOG_HEADER: &str = "step\tlr\ttotal\tce\ttriplet\tcross_triplet\tgrad_norm";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
const CHECKPOINT_DIR: &str = "checkpoints";

/// Model, optimizer and the number of completed steps.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: OmniGait<f32>,
    pub optimizer: Sgd,
    pub step: u64,
}

impl TrainState {
    pub fn new(model: OmniGait<f32>, cfg: &TrainConfig) -> Self {
        TrainState {
            model,
            optimizer: Sgd::new(cfg.lr as f32, cfg.momentum as f32, cfg.weight_decay as f32),
            step: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub loss: LossReport,
    pub grad_norm: f64,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One joint forward of every stream, the variant's objective, backward
/// and one optimizer update.
pub fn train_step(state: &mut TrainState, batch: &TrainBatch<f32>, labels: &[usize], margin: f32) -> Result<StepReport, TrainError> {
    let model = &mut state.model;
    model.zero_grad();
    let (out, cache) = model.forward_train(batch)?;
    let views: Vec<StreamView<'_, f32>> = out
        .streams
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let rows = out.rows(i);
            StreamView {
                name: s.name(),
                features: out.head.pre.slice(s![rows.clone(), .., ..]),
                logits: out.head.logits.slice(s![rows, .., ..]),
            }
        })
        .collect();
    let objective = match model.config().variant {
        Variant::Omni => omni_objective(&views, labels, margin)?,
        Variant::TwoStream => {
            if views.len() != 2 || out.streams.iter().any(|s| matches!(s, Stream::Pair(..))) {
                return Err(TrainError::InvalidConfig("two-stream training needs exactly two single-modality streams".into()));
            }
            two_stream_objective(&views[0], &views[1], labels, margin)?
        }
    };
    drop(views);
    if let Some((stream, component)) = objective.report.first_non_finite() {
        return Err(TrainError::NonFiniteLoss {
            step: state.step + 1,
            stream,
            component,
        });
    }
    let d_pre = concatenate(Axis(0), &objective.d_features.iter().map(|a| a.view()).collect::<Vec<_>>()).expect("aligned");
    let d_logits = concatenate(Axis(0), &objective.d_logits.iter().map(|a| a.view()).collect::<Vec<_>>()).expect("aligned");
    model.backward(cache, &d_pre, &d_logits);

    let mut sq = 0.0f64;
    model.visit("", &mut |_, p| {
        if p.trainable {
            sq += p.grads().iter().map(|&g| f64::from(g) * f64::from(g)).sum::<f64>();
        }
    });
    let grad_norm = sq.sqrt();
    if !grad_norm.is_finite() {
        return Err(TrainError::NonFiniteLoss {
            step: state.step + 1,
            stream: "all".into(),
            component: "grad_norm".into(),
        });
    }
    state.optimizer.step(model);
    state.step += 1;
    Ok(StepReport {
        loss: objective.report,
        grad_norm,
    })
}

/// Learning rate for 1-based `step`: the base rate times 0.1 for every
/// milestone already passed.
pub fn lr_at(cfg: &TrainConfig, step: u64) -> f64 {
    let passed = cfg.milestones.iter().filter(|&&m| step > m).count();
    cfg.lr * 0.1f64.powi(passed as i32)
}

pub fn save_checkpoint(state: &TrainState, classes: &ClassMap, cfg: &TrainConfig, path: &Path) -> Result<(), TrainError> {
    let mut tensors = state.model.state_tensors();
    tensors.extend(state.optimizer.state_tensors());
    let ckpt = Checkpoint {
        config: state.model.config().clone(),
        meta: json!({ "classes": classes, "train": cfg }),
        step: state.step,
        tensors,
    };
    ckpt.write(path)?;
    Ok(())
}

/// Restores model, optimizer and step; also returns the class map stored
/// with the checkpoint.
pub fn load_checkpoint(path: &Path) -> Result<(TrainState, ClassMap), TrainError> {
    let ckpt = Checkpoint::read(path)?;
    let model = OmniGait::from_checkpoint(&ckpt)?;
    let classes: ClassMap = serde_json::from_value(ckpt.meta["classes"].clone())
        .map_err(|e| TrainError::InvalidConfig(format!("checkpoint class map: {e}")))?;
    let train: TrainConfig = serde_json::from_value(ckpt.meta["train"].clone()).unwrap_or_default();
    let mut optimizer = Sgd::new(train.lr as f32, train.momentum as f32, train.weight_decay as f32);
    optimizer.load_state(&ckpt, &model)?;
    Ok((
        TrainState {
            model,
            optimizer,
            step: ckpt.step,
        },
        classes,
    ))
}

/// One parsed line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub lr: f64,
    pub total: f64,
    pub ce: f64,
    pub triplet: f64,
    pub cross_triplet: f64,
    pub grad_norm: f64,
}

impl LogRow {
    fn line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            self.step, self.lr, self.total, self.ce, self.triplet, self.cross_triplet, self.grad_norm
        )
    }

    fn parse(line: &str) -> Option<LogRow> {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 7 {
            return None;
        }
        let v = |i: usize| f[i].parse::<f64>().ok();
        Some(LogRow {
            step: f[0].parse().ok()?,
            lr: v(1)?,
            total: v(2)?,
            ce: v(3)?,
            triplet: v(4)?,
            cross_triplet: v(5)?,
            grad_norm: v(6)?,
        })
    }
}

pub fn read_log(path: &Path) -> Result<Vec<LogRow>, TrainError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(text.lines().skip(1).filter_map(LogRow::parse).collect())
}

/// Opens the log for appending after `step`, dropping any rows beyond it.
fn open_log(path: &Path, step: u64) -> Result<fs::File, TrainError> {
    let mut text = format!("{LOG_HEADER}\n");
    if step > 0 && path.exists() {
        for row in read_log(path)?.into_iter().filter(|r| r.step <= step) {
            text.push_str(&row.line());
        }
    }
    fs::write(path, text).map_err(io_err(path))?;
    fs::OpenOptions::new().append(true).open(path).map_err(io_err(path))
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub final_checkpoint: PathBuf,
    /// Steps run by this call.
    pub steps: u64,
    pub last: Option<StepReport>,
}

/// Trains from `state.step + 1` to `cfg.total_iterations`. The batch of
/// step `s` depends only on `(cfg.seed, s)`, so a resumed run replays the
/// same batches as an unbroken one.
pub fn fit(
    state: &mut TrainState,
    store: &mut SequenceStore,
    classes: &ClassMap,
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<FitOutcome, TrainError> {
    cfg.validate()?;
    let mc = state.model.config().clone();
    if mc.num_classes != classes.len() {
        return Err(TrainError::InvalidConfig(format!(
            "model has {} classes, training set has {} subjects",
            mc.num_classes,
            classes.len()
        )));
    }
    if state.step > cfg.total_iterations {
        return Err(TrainError::InvalidConfig(format!(
            "checkpoint is at step {}, past total_iterations {}",
            state.step, cfg.total_iterations
        )));
    }
    let streams = match mc.variant {
        Variant::Omni => omni_streams(&mc.modalities, cfg.anchor),
        Variant::TwoStream => mc.modalities.iter().map(|&m| Stream::Single(m)).collect(),
    };
    if mc.variant == Variant::Omni && mc.modalities.len() > 1 && !mc.modalities.contains(&cfg.anchor) {
        return Err(TrainError::AnchorNotTrained(cfg.anchor));
    }
    let ckpt_dir = out_dir.join(CHECKPOINT_DIR);
    fs::create_dir_all(&ckpt_dir).map_err(io_err(&ckpt_dir))?;
    let log_path = out_dir.join(LOG_FILE);
    let mut log = open_log(&log_path, state.step)?;

    let first = state.step + 1;
    let started = Instant::now();
    let mut last = None;
    state.optimizer.momentum = cfg.momentum as f32;
    state.optimizer.weight_decay = cfg.weight_decay as f32;
    for step in first..=cfg.total_iterations {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, step]));
        let clips = pk_sample(store.manifest(), &cfg.batch, &mut rng)?;
        let (batch, labels) = compose_batch(store, &clips, streams.clone(), classes)?;
        let lr = lr_at(cfg, step);
        state.optimizer.lr = lr as f32;
        let report = train_step(state, &batch, &labels, cfg.margin as f32)?;
        let row = LogRow {
            step,
            lr,
            total: report.loss.total,
            ce: report.loss.component(CE),
            triplet: report.loss.component(TRIPLET),
            cross_triplet: report.loss.component(CROSS_TRIPLET),
            grad_norm: report.grad_norm,
        };
        log.write_all(row.line().as_bytes()).map_err(io_err(&log_path))?;
        if step == first || step % 25 == 0 || step == cfg.total_iterations {
            let per_step = started.elapsed().as_secs_f64() / (step - first + 1) as f64;
            log::info!(
                "step {step}/{} lr {lr:.4} loss {:.4} (ce {:.4}, triplet {:.4}, active {:.2}) |g| {:.3} {per_step:.2}s/step",
                cfg.total_iterations,
                row.total,
                row.ce,
                row.triplet.max(row.cross_triplet),
                report.loss.nonzero_triplet_fraction,
                row.grad_norm
            );
        }
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step != cfg.total_iterations {
            save_checkpoint(state, classes, cfg, &ckpt_dir.join(format!("step-{step:06}.ckpt")))?;
        }
        last = Some(report);
    }
    let final_checkpoint = out_dir.join(FINAL_CHECKPOINT);
    save_checkpoint(state, classes, cfg, &final_checkpoint)?;
    Ok(FitOutcome {
        final_checkpoint,
        steps: cfg.total_iterations + 1 - first,
        last,
    })
}
