//! Epoch loop shared by both networks: learning-rate schedule, early
//! stopping on validation loss and best-weight restoration.

use post_nn::{Adam, Optimizer, ParamStore, Sgd};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifact::{ModelKind, Provenance, TrainedModel};
use crate::config::{DetectorConfig, LandmarkNetConfig};
use crate::detector::{DetectionSample, Detector};
use crate::hrnet::{LandmarkNet, LandmarkSample};
use crate::ModelError;

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// A model the epoch loop can drive.
pub trait Fit {
    /// Runs one epoch at `lr` and returns the mean training loss.
    fn train_epoch(&mut self, epoch: usize, lr: f64) -> Result<f64, ModelError>;
    fn validate(&mut self) -> Result<f64, ModelError>;
    /// Remembers the current weights as the best so far.
    fn keep_best(&mut self);
    fn restore_best(&mut self);
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// Trains for up to `epochs` (numbered from 1). Stops once `patience`
/// consecutive epochs fail to lower the best validation loss, then restores
/// the best weights.
pub fn fit<F: Fit + ?Sized>(
    model: &mut F,
    epochs: usize,
    lr_at: impl Fn(usize) -> f64,
    patience: Option<usize>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitOutcome, ModelError> {
    let mut history = Vec::new();
    let mut best = f64::INFINITY;
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut stopped_early = false;
    for epoch in 1..=epochs {
        let lr = lr_at(epoch);
        let train_loss = model.train_epoch(epoch, lr)?;
        let val_loss = model.validate()?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(ModelError::NonFiniteLoss {
                epoch,
                train_loss,
                val_loss,
            });
        }
        let record = EpochRecord {
            epoch,
            lr,
            train_loss,
            val_loss,
        };
        on_epoch(&record);
        history.push(record);
        if val_loss < best {
            best = val_loss;
            best_epoch = epoch;
            stale = 0;
            model.keep_best();
        } else {
            stale += 1;
            if patience.is_some_and(|p| stale >= p) {
                stopped_early = true;
                break;
            }
        }
    }
    model.restore_best();
    Ok(FitOutcome {
        history,
        best_epoch,
        best_val_loss: best,
        stopped_early,
    })
}

fn shuffled_batches(len: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(rng);
    idx.chunks(batch).map(|c| c.to_vec()).collect()
}

struct DetectorFit<'a, P> {
    det: Detector,
    opt: Sgd,
    provider: P,
    val: &'a [DetectionSample],
    rng: ChaCha8Rng,
    best: Option<ParamStore>,
}

impl<P: FnMut(usize) -> Vec<DetectionSample>> Fit for DetectorFit<'_, P> {
    fn train_epoch(&mut self, epoch: usize, lr: f64) -> Result<f64, ModelError> {
        let data = (self.provider)(epoch);
        if data.is_empty() {
            return Err(ModelError::DataEmpty("detector training epoch".into()));
        }
        self.opt.set_learning_rate(lr as f32);
        let mut total = 0.0;
        for batch in shuffled_batches(data.len(), self.det.config.batch_size, &mut self.rng) {
            let items: Vec<&DetectionSample> = batch.iter().map(|&i| &data[i]).collect();
            let (loss, grads) = self.det.train_step(&items);
            if !loss.is_finite() || !grads.all_finite() {
                return Err(ModelError::NonFiniteLoss {
                    epoch,
                    train_loss: loss,
                    val_loss: f64::NAN,
                });
            }
            self.opt.step(&mut self.det.store, &grads);
            total += loss * items.len() as f64;
        }
        Ok(total / data.len() as f64)
    }

    fn validate(&mut self) -> Result<f64, ModelError> {
        Ok(self.det.eval_loss(self.val))
    }

    fn keep_best(&mut self) {
        self.best = Some(self.det.store.clone());
    }

    fn restore_best(&mut self) {
        if let Some(b) = self.best.take() {
            self.det.store = b;
        }
    }
}

struct LandmarkFit<'a, P> {
    net: LandmarkNet,
    opt: Adam,
    provider: P,
    val: &'a [LandmarkSample],
    rng: ChaCha8Rng,
    best: Option<ParamStore>,
}

impl<P: FnMut(usize) -> Vec<LandmarkSample>> Fit for LandmarkFit<'_, P> {
    fn train_epoch(&mut self, epoch: usize, lr: f64) -> Result<f64, ModelError> {
        let data = (self.provider)(epoch);
        if data.is_empty() {
            return Err(ModelError::DataEmpty("landmark training epoch".into()));
        }
        self.opt.set_learning_rate(lr as f32);
        let mut total = 0.0;
        for batch in shuffled_batches(data.len(), self.net.config.batch_size, &mut self.rng) {
            let items: Vec<&LandmarkSample> = batch.iter().map(|&i| &data[i]).collect();
            let (loss, grads) = self.net.train_step(&items);
            if !loss.is_finite() || !grads.all_finite() {
                return Err(ModelError::NonFiniteLoss {
                    epoch,
                    train_loss: loss,
                    val_loss: f64::NAN,
                });
            }
            self.opt.step(&mut self.net.store, &grads);
            total += loss * items.len() as f64;
        }
        Ok(total / data.len() as f64)
    }

    fn validate(&mut self) -> Result<f64, ModelError> {
        Ok(self.net.eval_loss(self.val))
    }

    fn keep_best(&mut self) {
        self.best = Some(self.net.store.clone());
    }

    fn restore_best(&mut self) {
        if let Some(b) = self.best.take() {
            self.net.store = b;
        }
    }
}

/// Inputs shared by both training entry points. `provider(epoch)` returns
/// that epoch's (possibly freshly augmented) training samples.
pub struct TrainRequest<'a, S, P> {
    pub seed: u64,
    pub data_hash: String,
    pub provider: P,
    pub val: &'a [S],
}

/// SGD with momentum and weight decay at a constant learning rate.
pub fn train_detector<P>(
    config: &DetectorConfig,
    req: TrainRequest<'_, DetectionSample, P>,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainedModel, ModelError>
where
    P: FnMut(usize) -> Vec<DetectionSample>,
{
    if req.val.is_empty() {
        return Err(ModelError::DataEmpty("detector validation split".into()));
    }
    let det = Detector::new(config, req.seed)?;
    let mut f = DetectorFit {
        det,
        opt: Sgd::new(config.learning_rate as f32, config.momentum as f32, config.weight_decay as f32),
        provider: req.provider,
        val: req.val,
        rng: ChaCha8Rng::seed_from_u64(req.seed.wrapping_add(1)),
        best: None,
    };
    let lr = config.learning_rate;
    let out = fit(&mut f, config.epochs, |_| lr, config.early_stop_patience, on_epoch)?;
    Ok(TrainedModel {
        kind: ModelKind::Detector,
        config: serde_json::to_value(config).expect("config serialises"),
        store: f.det.store,
        history: out.history,
        provenance: Provenance::new(req.seed, req.data_hash, out.best_val_loss),
    })
}

/// Adam with step drops and early stopping on validation MSE.
pub fn train_landmarks<P>(
    config: &LandmarkNetConfig,
    req: TrainRequest<'_, LandmarkSample, P>,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainedModel, ModelError>
where
    P: FnMut(usize) -> Vec<LandmarkSample>,
{
    if req.val.is_empty() {
        return Err(ModelError::DataEmpty("landmark validation split".into()));
    }
    let net = LandmarkNet::new(config, req.seed)?;
    let mut f = LandmarkFit {
        net,
        opt: Adam::new(config.learning_rate as f32, config.beta1 as f32, config.beta2 as f32),
        provider: req.provider,
        val: req.val,
        rng: ChaCha8Rng::seed_from_u64(req.seed.wrapping_add(1)),
        best: None,
    };
    let out = fit(
        &mut f,
        config.epochs,
        |e| config.lr_at(e),
        Some(config.early_stop_patience),
        on_epoch,
    )?;
    Ok(TrainedModel {
        kind: ModelKind::Landmarks,
        config: serde_json::to_value(config).expect("config serialises"),
        store: f.net.store,
        history: out.history,
        provenance: Provenance::new(req.seed, req.data_hash, out.best_val_loss),
    })
}
