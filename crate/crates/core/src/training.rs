//! Epoch loop with patience-based early stopping and best-checkpoint restore.

use std::time::Instant;

use crate::dataset::epoch_batches;
use crate::error::{Error, Result};
use crate::nn::{mse_loss, Adam, PopularityNet, Sample};

/// Popularity is trained on `[0, 1]` and reported on `[0, 100]`.
pub const TARGET_SCALE: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub min_delta: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_epochs: 25,
            learning_rate: 0.001,
            patience: 7,
            min_delta: 0.0,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be positive".into()));
        }
        if !(self.min_delta >= 0.0 && self.min_delta.is_finite()) {
            return Err(Error::Config("min_delta must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Continue,
    Stop,
}

/// Stops once `patience` consecutive epochs fail to beat the best loss by
/// more than `min_delta`. A loss equal to the best does not count as an
/// improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopper {
    patience: usize,
    min_delta: f64,
    best_loss: f64,
    epochs_since_improvement: usize,
    history: Vec<f64>,
}

impl EarlyStopper {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            best_loss: f64::INFINITY,
            epochs_since_improvement: 0,
            history: Vec::new(),
        }
    }

    pub fn observe(&mut self, val_loss: f64) -> Result<Decision> {
        if !val_loss.is_finite() {
            return Err(Error::Numeric(format!(
                "validation loss {val_loss} at epoch {}",
                self.history.len() + 1
            )));
        }
        self.history.push(val_loss);
        if val_loss < self.best_loss - self.min_delta {
            self.best_loss = val_loss;
            self.epochs_since_improvement = 0;
        } else {
            self.epochs_since_improvement += 1;
        }
        Ok(if self.epochs_since_improvement >= self.patience {
            Decision::Stop
        } else {
            Decision::Continue
        })
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }

    pub fn epochs_since_improvement(&self) -> usize {
        self.epochs_since_improvement
    }

    /// True when the most recent observation set a new best.
    pub fn just_improved(&self) -> bool {
        !self.history.is_empty() && self.epochs_since_improvement == 0
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }

    /// Index (1-based) of the current epoch.
    pub fn epoch(&self) -> usize {
        self.history.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// In popularity points.
    pub val_mae: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub net: PopularityNet,
    pub logs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// Validation loss (normalized units) and MAE (popularity points).
pub fn validate(net: &PopularityNet, samples: &[Sample]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("validation set is empty".into()));
    }
    let refs: Vec<&Sample> = samples.iter().collect();
    let preds = net.predict_batch(&refs)?;
    let targets: Vec<f64> = samples.iter().map(|s| s.target).collect();
    let loss = mse_loss(&preds, &targets)?;
    let mae = preds
        .iter()
        .zip(&targets)
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / preds.len() as f64
        * TARGET_SCALE;
    Ok((loss, mae))
}

/// Train until `max_epochs` or early stop. `on_improve` runs after every
/// epoch that sets a new best validation loss, with that epoch's index.
pub fn train(
    mut net: PopularityNet,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainingConfig,
    mut on_improve: impl FnMut(&PopularityNet, usize) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Config(format!(
            "training needs non-empty train and validation sets (got {} / {})",
            train_set.len(),
            val_set.len()
        )));
    }
    let mut opt = Adam::new(cfg.learning_rate);
    let mut stopper = EarlyStopper::new(cfg.patience, cfg.min_delta);
    let mut best = net.clone();
    let mut best_epoch = 0;
    let mut logs = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let mut weighted = 0.0;
        for batch in epoch_batches(train_set.len(), cfg.batch_size, cfg.seed, epoch as u64, true)? {
            let refs: Vec<&Sample> = batch.iter().map(|&i| &train_set[i]).collect();
            let (loss, _) = net.accumulate_gradients(&refs)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("training loss {loss} at epoch {epoch}")));
            }
            opt.step(&mut net)?;
            weighted += loss * refs.len() as f64;
        }
        let train_loss = weighted / train_set.len() as f64;
        let (val_loss, val_mae) = validate(&net, val_set)?;
        let decision = stopper.observe(val_loss)?;
        logs.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
            val_mae,
            seconds: started.elapsed().as_secs_f64(),
        });
        if stopper.just_improved() {
            best = net.clone();
            best_epoch = epoch;
            on_improve(&best, epoch)?;
        }
        if decision == Decision::Stop {
            stopped_early = true;
            break;
        }
    }
    Ok(TrainOutcome {
        net: best,
        logs,
        best_epoch,
        best_val_loss: stopper.best_loss(),
        stopped_early,
    })
}

/// Render epoch logs as CSV. Wall time is written only when requested so
/// that seeded runs produce identical files.
pub fn epoch_log_csv(logs: &[EpochLog], include_wall_time: bool) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,val_mae,seconds\n");
    for l in logs {
        let secs = if include_wall_time {
            format!("{:.3}", l.seconds)
        } else {
            "NA".to_string()
        };
        out.push_str(&format!(
            "{},{:?},{:?},{:?},{secs}\n",
            l.epoch, l.train_loss, l.val_loss, l.val_mae
        ));
    }
    out
}
