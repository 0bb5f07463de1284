//! Training loop: AdamW on teacher-forced cross-entropy, learning-rate
//! reduction on validation-loss plateaus, per-epoch checkpoints and metrics.

mod metrics;
mod optim;

use std::fs::File;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{
    evaluate_rows, full_permutation_error, read_metrics, single_token_error, write_metrics,
    ErrorCounts, MetricsRecord, OraclePredictor, Predictor, RowOutcome,
};
pub use optim::{AdamW, PlateauScheduler};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::model::{BatchStats, Checkpoint, Params, TrainBatch, Transformer};
use crate::rng;
use crate::tokenizer::Token;

const SHUFFLE_PURPOSE: u16 = 16;
/// Rows per shuffle block when the training file is streamed from disk.
const STREAM_BLOCK: usize = 1 << 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    /// Relative improvement in validation loss that resets the patience.
    pub plateau_threshold: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Stop once the validation full-permutation error has been zero for
    /// this many consecutive epochs. Zero disables the rule.
    pub early_stop_epochs: usize,
    /// Wall-clock budget in seconds, checked after every epoch.
    pub max_seconds: Option<f64>,
    /// Validation rows decoded greedily each epoch (all if unset).
    pub val_limit: Option<usize>,
    /// Rows per gradient work unit. Results do not depend on the thread
    /// count, only on this value.
    pub micro_batch: usize,
    /// Also keep `epoch-NNNN.ckpt` files, not only `last.ckpt`.
    pub keep_epoch_checkpoints: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            weight_decay: 0.05,
            batch_size: 1024,
            plateau_factor: 0.1,
            plateau_patience: 10,
            plateau_threshold: 1e-4,
            max_epochs: 100,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            early_stop_epochs: 3,
            max_seconds: None,
            val_limit: None,
            micro_batch: 64,
            keep_epoch_checkpoints: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("plateau_factor", self.plateau_factor),
            ("adam_eps", self.adam_eps),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if self.plateau_factor >= 1.0 {
            return Err(Error::Config("plateau_factor must be below 1".into()));
        }
        if self.plateau_patience == 0 {
            return Err(Error::Config("plateau_patience must be at least 1".into()));
        }
        if self.batch_size == 0 || self.micro_batch == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStop,
    TimeBudget,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<MetricsRecord>,
    pub stop: StopReason,
    pub best_val_loss: f64,
}

/// State carried in a checkpoint's free-form training section.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct TrainingState {
    config: TrainConfig,
    lr: f64,
    scheduler: PlateauScheduler,
    zero_streak: usize,
    best_val_loss: f64,
}

pub struct Trainer {
    config: TrainConfig,
    model: Transformer<f32>,
    optimizer: AdamW,
    scheduler: PlateauScheduler,
    epoch: usize,
    zero_streak: usize,
    best_val_loss: f64,
    history: Vec<MetricsRecord>,
}

impl Trainer {
    pub fn new(model: Transformer<f32>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut optimizer = AdamW::new(model.parameter_count(), config.learning_rate, config.weight_decay);
        optimizer.beta1 = config.beta1;
        optimizer.beta2 = config.beta2;
        optimizer.eps = config.adam_eps;
        let scheduler = PlateauScheduler::new(
            config.plateau_factor,
            config.plateau_patience,
            config.plateau_threshold,
        );
        Ok(Self {
            config,
            model,
            optimizer,
            scheduler,
            epoch: 0,
            zero_streak: 0,
            best_val_loss: f64::INFINITY,
            history: Vec::new(),
        })
    }

    /// Continues from a checkpoint written by [`Trainer::checkpoint`]. The
    /// stored learning rate and scheduler state win over `config`, while the
    /// budget fields (`max_epochs`, `max_seconds`) come from `config`.
    pub fn resume(checkpoint: &Checkpoint, config: TrainConfig) -> Result<Self> {
        let mut t = Self::new(checkpoint.model()?, config)?;
        t.epoch = checkpoint.epoch;
        if let Some(opt) = &checkpoint.optimizer {
            t.optimizer.restore(opt.clone())?;
        }
        if let Ok(state) = serde_json::from_value::<TrainingState>(checkpoint.training.clone()) {
            t.optimizer.lr = state.lr;
            t.scheduler = state.scheduler;
            t.zero_streak = state.zero_streak;
            t.best_val_loss = state.best_val_loss;
        }
        Ok(t)
    }

    pub fn model(&self) -> &Transformer<f32> {
        &self.model
    }

    pub fn into_model(self) -> Transformer<f32> {
        self.model
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn learning_rate(&self) -> f64 {
        self.optimizer.lr
    }

    pub fn history(&self) -> &[MetricsRecord] {
        &self.history
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_model(&self.model, self.epoch);
        ck.optimizer = Some(self.optimizer.state());
        let state = TrainingState {
            config: self.config.clone(),
            lr: self.optimizer.lr,
            scheduler: self.scheduler.clone(),
            zero_streak: self.zero_streak,
            best_val_loss: self.best_val_loss,
        };
        let mut training = serde_json::to_value(state).expect("training state serializes");
        training["adam"] = serde_json::json!({
            "beta1": self.optimizer.beta1,
            "beta2": self.optimizer.beta2,
            "eps": self.optimizer.eps,
            "weight_decay": self.optimizer.weight_decay,
        });
        ck.training = training;
        ck
    }

    /// Row visiting order for one epoch.
    fn epoch_order(&self, data: &Dataset) -> Vec<usize> {
        let mut rng = rng::stream(self.config.seed, SHUFFLE_PURPOSE, self.epoch as u64);
        let len = data.len();
        if data.is_in_memory() {
            let mut order: Vec<usize> = (0..len).collect();
            order.shuffle(&mut rng);
            order
        } else {
            let mut blocks: Vec<usize> = (0..len.div_ceil(STREAM_BLOCK)).collect();
            blocks.shuffle(&mut rng);
            let mut order = Vec::with_capacity(len);
            for b in blocks {
                let start = order.len();
                order.extend(b * STREAM_BLOCK..((b + 1) * STREAM_BLOCK).min(len));
                order[start..].shuffle(&mut rng);
            }
            order
        }
    }

    fn gather(data: &Dataset, rows: &[usize], out: &mut Vec<Token>) -> Result<()> {
        out.clear();
        if data.is_in_memory() {
            for &r in rows {
                data.read_rows(r, 1, out)?;
            }
            return Ok(());
        }
        // Streamed files: rows of a batch come from one block, so read the
        // covering range once and pick from it.
        let lo = *rows.iter().min().expect("non-empty batch");
        let hi = *rows.iter().max().expect("non-empty batch");
        let mut span = Vec::new();
        data.read_rows(lo, hi - lo + 1, &mut span)?;
        let w = data.row_width();
        for &r in rows {
            out.extend_from_slice(&span[(r - lo) * w..(r - lo + 1) * w]);
        }
        Ok(())
    }

    /// Gradient of the mean loss over a batch, computed in fixed-size work
    /// units that are summed in order.
    fn batch_gradient(&self, batch: &TrainBatch) -> Result<(BatchStats, Params<f32>)> {
        let mb = self.config.micro_batch;
        let per_row_in = batch.seq;
        let per_row_out = batch.targets_per_row();
        let units: Vec<TrainBatch> = (0..batch.rows)
            .step_by(mb)
            .map(|start| {
                let end = (start + mb).min(batch.rows);
                TrainBatch {
                    rows: end - start,
                    seq: batch.seq,
                    inputs: batch.inputs[start * per_row_in..end * per_row_in].to_vec(),
                    targets: batch.targets[start * per_row_out..end * per_row_out].to_vec(),
                    target_offset: batch.target_offset,
                }
            })
            .collect();
        let total_tokens = batch.targets.len() as f32;
        let mut grads = Params::zeros(self.model.params().layout().clone());
        let mut stats = BatchStats::default();
        let wave = rayon::current_num_threads().max(1);
        for group in units.chunks(wave) {
            let parts = group
                .par_iter()
                .map(|u| self.model.loss_and_grad(u))
                .collect::<Result<Vec<_>>>()?;
            for (s, g) in parts {
                let w = s.tokens as f32 / total_tokens;
                for (acc, &v) in grads.as_mut_slice().iter_mut().zip(g.as_slice()) {
                    *acc += w * v;
                }
                stats.merge(&s);
            }
        }
        Ok((stats, grads))
    }

    /// One optimizer step on `batch`. Returns the batch statistics from
    /// before the update.
    pub fn step(&mut self, batch: &TrainBatch) -> Result<BatchStats> {
        let (stats, grads) = self.batch_gradient(batch)?;
        let loss = stats.mean_loss();
        if !loss.is_finite() || !grads.as_slice().iter().all(|g| g.is_finite()) {
            return Err(Error::NonFiniteLoss {
                loss,
                epoch: self.epoch + 1,
                step: self.optimizer.steps_taken() as usize + 1,
            });
        }
        let grads = grads.as_slice().to_vec();
        self.optimizer.step(self.model.params_mut().as_mut_slice(), &grads)?;
        Ok(stats)
    }

    /// One pass over `data` in shuffled order.
    pub fn train_epoch(&mut self, data: &Dataset) -> Result<BatchStats> {
        self.check_scheme(data)?;
        let order = self.epoch_order(data);
        let mut raw = Vec::new();
        let mut total = BatchStats::default();
        for rows in order.chunks(self.config.batch_size) {
            Self::gather(data, rows, &mut raw)?;
            let batch = TrainBatch::from_raw_rows(data.scheme(), &raw)?;
            let stats = self.step(&batch)?;
            total.merge(&stats);
        }
        Ok(total)
    }

    fn check_scheme(&self, data: &Dataset) -> Result<()> {
        if data.scheme() != self.model.scheme() {
            return Err(Error::Config(format!(
                "dataset is {} n={}, model is {} n={}",
                data.scheme().kind,
                data.scheme().n,
                self.model.scheme().kind,
                self.model.scheme().n
            )));
        }
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(())
    }

    /// Teacher-forced loss over all of `data` and greedy errors over the
    /// first `val_limit` rows.
    pub fn validate(&self, data: &Dataset) -> Result<(BatchStats, ErrorCounts)> {
        self.check_scheme(data)?;
        let stats = teacher_forced_stats(&self.model, data)?;
        let outcomes = evaluate_rows(&self.model, data, self.config.val_limit)?;
        let counts = ErrorCounts::from_outcomes(&outcomes, data.scheme().n);
        Ok((stats, counts))
    }

    /// Trains until the epoch limit, the early-stop rule, or the time budget
    /// ends the run. With `out_dir`, writes `metrics.csv`, `last.ckpt` and
    /// `best.ckpt` there after every epoch (and `diverged.ckpt` on a
    /// non-finite loss). `on_epoch` sees each record as it is produced.
    pub fn run(
        &mut self,
        train: &Dataset,
        val: &Dataset,
        out_dir: Option<&Path>,
        mut on_epoch: impl FnMut(&MetricsRecord),
    ) -> Result<TrainOutcome> {
        self.check_scheme(train)?;
        self.check_scheme(val)?;
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir)?;
        }
        let start = Instant::now();
        let stop = loop {
            if self.epoch >= self.config.max_epochs {
                break StopReason::MaxEpochs;
            }
            let lr = self.optimizer.lr;
            let train_stats = match self.train_epoch(train) {
                Ok(s) => s,
                Err(e @ Error::NonFiniteLoss { .. }) => {
                    if let Some(dir) = out_dir {
                        self.checkpoint().save(&dir.join("diverged.ckpt"))?;
                    }
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            self.epoch += 1;
            let (val_stats, val_counts) = self.validate(val)?;
            let val_loss = val_stats.mean_loss();
            if !val_loss.is_finite() {
                if let Some(dir) = out_dir {
                    self.checkpoint().save(&dir.join("diverged.ckpt"))?;
                }
                return Err(Error::NonFiniteLoss {
                    loss: val_loss,
                    epoch: self.epoch,
                    step: self.optimizer.steps_taken() as usize,
                });
            }
            self.optimizer.lr = self.scheduler.step(val_loss, lr);
            let record = MetricsRecord {
                epoch: self.epoch,
                train_loss: train_stats.mean_loss(),
                val_loss,
                train_error: train_stats.row_error(),
                val_error: val_counts.full_error(),
                lr,
                train_token_error: train_stats.token_error(),
                val_token_error: val_counts.token_error(),
                seconds: start.elapsed().as_secs_f64(),
            };
            let improved = val_loss < self.best_val_loss;
            if improved {
                self.best_val_loss = val_loss;
            }
            self.zero_streak = if val_counts.rows_wrong == 0 {
                self.zero_streak + 1
            } else {
                0
            };
            self.history.push(record.clone());
            if let Some(dir) = out_dir {
                self.save_epoch_outputs(dir, improved)?;
            }
            on_epoch(&record);
            if self.config.early_stop_epochs > 0 && self.zero_streak >= self.config.early_stop_epochs {
                break StopReason::EarlyStop;
            }
            if let Some(limit) = self.config.max_seconds {
                if start.elapsed().as_secs_f64() >= limit {
                    break StopReason::TimeBudget;
                }
            }
        };
        Ok(TrainOutcome {
            history: self.history.clone(),
            stop,
            best_val_loss: self.best_val_loss,
        })
    }

    fn save_epoch_outputs(&self, dir: &Path, improved: bool) -> Result<()> {
        let ck = self.checkpoint();
        ck.save(&dir.join("last.ckpt"))?;
        if improved {
            ck.save(&dir.join("best.ckpt"))?;
        }
        if self.config.keep_epoch_checkpoints {
            ck.save(&epoch_checkpoint_path(dir, self.epoch))?;
        }
        write_metrics(&self.history, File::create(dir.join("metrics.csv"))?)
    }
}

pub fn epoch_checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch-{epoch:04}.ckpt"))
}

/// Teacher-forced loss and token/row accuracy over a whole dataset.
pub fn teacher_forced_stats(model: &Transformer<f32>, data: &Dataset) -> Result<BatchStats> {
    const CHUNK: usize = 512;
    let starts: Vec<usize> = (0..data.len()).step_by(CHUNK).collect();
    let parts = starts
        .par_iter()
        .map(|&s| {
            let mut raw = Vec::new();
            data.read_rows(s, CHUNK.min(data.len() - s), &mut raw)?;
            model.evaluate_batch(&TrainBatch::from_raw_rows(data.scheme(), &raw)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = BatchStats::default();
    for p in &parts {
        total.merge(p);
    }
    Ok(total)
}

/// Convenience wrapper: trains `model` and returns it with its history.
pub fn train(
    model: Transformer<f32>,
    train_set: &Dataset,
    val_set: &Dataset,
    config: TrainConfig,
    out_dir: Option<&Path>,
) -> Result<(Transformer<f32>, TrainOutcome)> {
    let mut trainer = Trainer::new(model, config)?;
    let outcome = trainer.run(train_set, val_set, out_dir, |_| {})?;
    Ok((trainer.into_model(), outcome))
}
