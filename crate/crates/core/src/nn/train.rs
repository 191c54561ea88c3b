use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::ModelState;
use super::real::Real;
use crate::error::{Error, Result};
use crate::pair_gen::{PairDataset, PatchPair};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            batch_size: 8,
            patience: 7,
            max_epochs: 100,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("patience, batch size and max epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Index into `epochs` of the best validation accuracy.
    pub best: usize,
}

impl TrainLog {
    pub fn best_record(&self) -> Option<&EpochRecord> {
        self.epochs.get(self.best)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,val_acc\n");
        for r in &self.epochs {
            out.push_str(&format!("{},{:.6},{:.6},{:.6}\n", r.epoch, r.train_loss, r.train_acc, r.val_acc));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Indexed access to labeled pairs.
pub trait PairSource {
    fn len(&self) -> usize;
    fn pair(&self, i: usize) -> PatchPair;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl PairSource for [PatchPair] {
    fn len(&self) -> usize {
        <[PatchPair]>::len(self)
    }
    fn pair(&self, i: usize) -> PatchPair {
        self[i].clone()
    }
}

impl PairSource for Vec<PatchPair> {
    fn len(&self) -> usize {
        Vec::len(self)
    }
    fn pair(&self, i: usize) -> PatchPair {
        self[i].clone()
    }
}

/// A subset of a [`PairDataset`], e.g. its train or validation split.
pub struct DatasetView<'a> {
    pub dataset: &'a PairDataset,
    pub indices: Vec<usize>,
}

impl PairSource for DatasetView<'_> {
    fn len(&self) -> usize {
        self.indices.len()
    }
    fn pair(&self, i: usize) -> PatchPair {
        self.dataset.pair(self.indices[i])
    }
}

/// Patience-based stopping on validation accuracy.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    best_index: usize,
    since_best: usize,
    seen: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            best_index: 0,
            since_best: 0,
            seen: 0,
        }
    }

    /// Record one epoch. Returns `(improved, stop)`.
    pub fn update(&mut self, val_acc: f64) -> (bool, bool) {
        let idx = self.seen;
        self.seen += 1;
        if self.best.map_or(true, |b| val_acc > b) {
            self.best = Some(val_acc);
            self.best_index = idx;
            self.since_best = 0;
            (true, false)
        } else {
            self.since_best += 1;
            (false, self.since_best >= self.patience)
        }
    }

    pub fn best_index(&self) -> usize {
        self.best_index
    }
}

struct Adam<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: i32,
}

impl<T: Real> Adam<T> {
    fn new(model: &ModelState<T>) -> Self {
        Adam {
            m: model.zero_grads(),
            v: model.zero_grads(),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut ModelState<T>, grads: &[Vec<T>], cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let lr_t = cfg.learning_rate * (1.0 - b2.powi(self.t)).sqrt() / (1.0 - b1.powi(self.t));
        let (b1, b2, lr_t, eps) = (T::of(b1), T::of(b2), T::of(lr_t), T::of(cfg.epsilon));
        let one = T::one();
        for (((p, g), m), v) in model.params_mut().iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.data.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                p.data[i] = p.data[i] - lr_t * m[i] / (v[i].sqrt() + eps);
            }
        }
    }
}

/// Fraction of pairs classified correctly at threshold 0.5.
pub fn accuracy<T: Real>(model: &ModelState<T>, pairs: &dyn PairSource) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let correct = (0..pairs.len())
        .filter(|&i| {
            let pair = pairs.pair(i);
            let logit = model.pair_logit(&pair.a.pixels, &pair.b.pixels).to_f64().unwrap();
            (logit > 0.0) == (pair.label.as_f64() > 0.5)
        })
        .count();
    correct as f64 / pairs.len() as f64
}

/// Mean similarity probability over a set of pairs.
pub fn mean_probability<T: Real>(model: &ModelState<T>, pairs: &dyn PairSource) -> f64 {
    let n = pairs.len().max(1) as f64;
    (0..pairs.len())
        .map(|i| {
            let pair = pairs.pair(i);
            super::model::sigmoid(model.pair_logit(&pair.a.pixels, &pair.b.pixels).to_f64().unwrap())
        })
        .sum::<f64>()
        / n
}

/// Train with BCE + Adam until validation accuracy stops improving for
/// `patience` epochs. Returns the parameters of the best epoch.
///
/// Epoch numbers continue from `model.meta.epoch`, so a resumed model keeps counting.
pub fn train<T: Real>(
    mut model: ModelState<T>,
    train_set: &dyn PairSource,
    val_set: &dyn PairSource,
    cfg: &TrainConfig,
) -> Result<(ModelState<T>, TrainLog)> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::invalid("training and validation sets must be non-empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut log = TrainLog::default();
    let mut best_model = model.clone();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let first_epoch = model.meta.epoch + 1;

    for epoch in first_epoch..first_epoch + cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads = model.zero_grads();
            let mut batch_loss = 0.0;
            for &i in batch {
                let pair = train_set.pair(i);
                let label = pair.label.as_f64();
                let (loss, prob) = model.loss_and_grad(&pair.a.pixels, &pair.b.pixels, label, &mut grads);
                batch_loss += loss;
                if (prob > 0.5) == (label > 0.5) {
                    correct += 1;
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::NanLoss { epoch, batch: bi });
            }
            loss_sum += batch_loss;
            let scale = T::of(1.0 / batch.len() as f64);
            for g in grads.iter_mut() {
                g.iter_mut().for_each(|v| *v = *v * scale);
            }
            adam.step(&mut model, &grads, cfg);
        }
        let n = train_set.len() as f64;
        let val_acc = accuracy(&model, val_set);
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            val_acc,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} train_acc {:.4} val_acc {:.4}",
            rec.train_loss,
            rec.train_acc,
            rec.val_acc
        );
        log.epochs.push(rec);
        model.meta.epoch = epoch;
        let (improved, stop) = stopper.update(val_acc);
        if improved {
            best_model = model.clone();
            best_model.meta.best_epoch = epoch;
            best_model.meta.best_val_acc = val_acc;
        }
        if stop {
            break;
        }
    }
    log.best = stopper.best_index();
    best_model.meta.epoch = model.meta.epoch;
    Ok((best_model, log))
}
