use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lstm::{backward, forward, LstmShape};
use super::model::{LstmModel, ModelKind, TrainingMeta};
use super::optim::{argmax, softmax_cross_entropy, squared_error, Adam, AdamConfig};
use super::scaler::MinMaxScaler;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Stop once validation loss has not improved for `patience` epochs.
    pub early_stop: bool,
    pub patience: usize,
    pub hidden: usize,
    pub layers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 64,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            early_stop: false,
            patience: 20,
            hidden: 32,
            layers: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("train: learning_rate > 0, epochs >= 1, batch_size >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Config("train: Adam betas in [0, 1) and eps > 0".into()));
        }
        if self.hidden == 0 || self.layers == 0 {
            return Err(Error::Config("train: hidden and layers must be positive".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// Fixed-length windows with final-tick targets. CTE targets hold the class
/// index as a float.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SequenceDataset {
    pub seq_len: usize,
    pub dim: usize,
    /// Row-major `n × seq_len × dim`.
    pub windows: Vec<f64>,
    pub targets: Vec<f64>,
    pub trial_ids: Vec<u64>,
    /// Tick index of each window's final step within its trial.
    pub ticks: Vec<usize>,
}

impl SequenceDataset {
    pub fn new(seq_len: usize, dim: usize) -> Self {
        Self {
            seq_len,
            dim,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn window_len(&self) -> usize {
        self.seq_len * self.dim
    }

    pub fn window(&self, i: usize) -> &[f64] {
        let w = self.window_len();
        &self.windows[i * w..(i + 1) * w]
    }

    pub fn push(&mut self, window: &[f64], target: f64, trial_id: u64, tick: usize) -> Result<()> {
        if window.len() != self.window_len() {
            return Err(Error::invalid(format!(
                "window has {} values, dataset expects {}",
                window.len(),
                self.window_len()
            )));
        }
        self.windows.extend_from_slice(window);
        self.targets.push(target);
        self.trial_ids.push(trial_id);
        self.ticks.push(tick);
        Ok(())
    }

    pub fn trials(&self) -> HashSet<u64> {
        self.trial_ids.iter().copied().collect()
    }

    fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.windows.chunks(self.dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: LstmModel,
    pub curve: Vec<EpochStats>,
}

fn check_targets(ds: &SequenceDataset, kind: ModelKind) -> Result<()> {
    for &t in &ds.targets {
        let ok = match kind {
            ModelKind::Cle => t.is_finite(),
            ModelKind::Cte => t.fract() == 0.0 && (0.0..3.0).contains(&t),
        };
        if !ok {
            return Err(Error::invalid(format!("target {t} is not valid for a {kind} model")));
        }
    }
    Ok(())
}

/// Scaled copy of a dataset's windows and targets.
struct Prepared {
    windows: Vec<f64>,
    targets: Vec<f64>,
    wlen: usize,
}

impl Prepared {
    fn new(ds: &SequenceDataset, input: &MinMaxScaler, output: Option<&MinMaxScaler>) -> Self {
        let mut windows = ds.windows.clone();
        input.apply_in_place(&mut windows);
        let targets = match output {
            Some(s) => ds.targets.iter().map(|&t| s.apply_one(0, t)).collect(),
            None => ds.targets.clone(),
        };
        Self {
            windows,
            targets,
            wlen: ds.window_len(),
        }
    }

    fn window(&self, i: usize) -> &[f64] {
        &self.windows[i * self.wlen..(i + 1) * self.wlen]
    }
}

/// Loss of one sample and, if `grad` is given, its gradient added in.
fn sample_loss(
    shape: &LstmShape,
    params: &[f64],
    kind: ModelKind,
    window: &[f64],
    target: f64,
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    let trace = forward(shape, params, window)?;
    let (loss, d_out) = match kind {
        ModelKind::Cle => {
            let (l, d) = squared_error(trace.output[0], target);
            (l, vec![d])
        }
        ModelKind::Cte => softmax_cross_entropy(&trace.output, target as usize),
    };
    if let Some(g) = grad {
        backward(shape, params, window, &trace, &d_out, g);
    }
    Ok(loss)
}

/// Mean loss and mean gradient over a batch of `(window, target)` samples.
pub fn batch_gradient<'a>(
    shape: &LstmShape,
    params: &[f64],
    kind: ModelKind,
    batch: impl IntoIterator<Item = (&'a [f64], f64)>,
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; params.len()];
    let mut total = 0.0;
    let mut n = 0usize;
    for (w, t) in batch {
        total += sample_loss(shape, params, kind, w, t, Some(&mut grad))?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let inv = 1.0 / n as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    Ok((total * inv, grad))
}

fn mean_loss(shape: &LstmShape, params: &[f64], kind: ModelKind, data: &Prepared) -> Result<f64> {
    let mut total = 0.0;
    for (i, &t) in data.targets.iter().enumerate() {
        total += sample_loss(shape, params, kind, data.window(i), t, None)?;
    }
    Ok(total / data.targets.len() as f64)
}

/// Trains with Adam and returns the checkpoint with the lowest validation loss.
pub fn train(
    train_set: &SequenceDataset,
    val_set: &SequenceDataset,
    kind: ModelKind,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::invalid("training and validation splits must be non-empty"));
    }
    if train_set.seq_len != val_set.seq_len || train_set.dim != val_set.dim || train_set.dim == 0 {
        return Err(Error::invalid("training and validation windows differ in shape"));
    }
    if !train_set.trials().is_disjoint(&val_set.trials()) {
        return Err(Error::invalid("a trial appears in both training and validation splits"));
    }
    check_targets(train_set, kind)?;
    check_targets(val_set, kind)?;

    let input_scaler = MinMaxScaler::fit(train_set.rows(), train_set.dim)?;
    let output_scaler = match kind {
        ModelKind::Cle => Some(MinMaxScaler::fit(train_set.targets.chunks(1), 1)?),
        ModelKind::Cte => None,
    };
    let tr = Prepared::new(train_set, &input_scaler, output_scaler.as_ref());
    let va = Prepared::new(val_set, &input_scaler, output_scaler.as_ref());

    let shape = LstmShape {
        input: train_set.dim,
        hidden: cfg.hidden,
        layers: cfg.layers,
        outputs: kind.outputs(),
    };
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let mut params = shape.init(&mut init_rng);
    let mut adam = Adam::new(cfg.adam(), params.len());

    let mut order: Vec<usize> = (0..tr.targets.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut best = (f64::INFINITY, 0usize, params.clone());
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = chunk.iter().map(|&i| (tr.window(i), tr.targets[i]));
            let (loss, grad) = batch_gradient(&shape, &params, kind, batch)?;
            total += loss * chunk.len() as f64;
            adam.step(&mut params, &grad);
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid(format!("training diverged in epoch {epoch}")));
        }
        let val_loss = mean_loss(&shape, &params, kind, &va)?;
        curve.push(EpochStats {
            epoch,
            train_loss: total / order.len() as f64,
            val_loss,
        });
        if val_loss < best.0 {
            best = (val_loss, epoch, params.clone());
        } else if cfg.early_stop && epoch - best.1 >= cfg.patience {
            break;
        }
    }

    let model = LstmModel {
        kind,
        seq_len: train_set.seq_len,
        shape,
        params: best.2,
        input_scaler,
        output_scaler,
        meta: TrainingMeta {
            seed: cfg.seed,
            epochs_run: curve.len() as u32,
            best_epoch: best.1 as u32,
            best_val_loss: best.0,
        },
    };
    model.validate()?;
    Ok(TrainOutcome { model, curve })
}

/// Accuracy of a CTE model over a dataset.
pub fn classification_accuracy(model: &LstmModel, ds: &SequenceDataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    let mut hits = 0usize;
    for i in 0..ds.len() {
        if argmax(&model.output(ds.window(i))?) == ds.targets[i] as usize {
            hits += 1;
        }
    }
    Ok(hits as f64 / ds.len() as f64)
}

/// RMSE in physical units of a CLE model over a dataset.
pub fn location_rmse(model: &LstmModel, ds: &SequenceDataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    let mut sse = 0.0;
    for i in 0..ds.len() {
        let e = model.output(ds.window(i))?[0] - ds.targets[i];
        sse += e * e;
    }
    Ok((sse / ds.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn synthetic(kind: ModelKind, n: usize, trial_base: u64, seed: u64) -> SequenceDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (t_len, d) = (5, 3);
        let mut ds = SequenceDataset::new(t_len, d);
        for i in 0..n {
            let w: Vec<f64> = (0..t_len * d).map(|_| rng.random_range(0.0..1.0)).collect();
            let last = &w[(t_len - 1) * d..];
            let target = match kind {
                ModelKind::Cle => 0.2 * last[0] - 0.1 * last[1] + 0.05,
                ModelKind::Cte => {
                    if last[0] < 0.33 {
                        0.0
                    } else if last[0] < 0.66 {
                        1.0
                    } else {
                        2.0
                    }
                }
            };
            ds.push(&w, target, trial_base + (i / 10) as u64, i % 10).unwrap();
        }
        ds
    }

    fn small_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            learning_rate: 0.01,
            epochs,
            batch_size: 16,
            hidden: 8,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn learns_affine_location() {
        let tr = synthetic(ModelKind::Cle, 400, 0, 1);
        let va = synthetic(ModelKind::Cle, 100, 1000, 2);
        let out = train(&tr, &va, ModelKind::Cle, &small_cfg(50)).unwrap();
        // validation loss is MSE in scaled units
        assert!(out.model.meta.best_val_loss.sqrt() < 0.01, "{:?}", out.model.meta);
    }

    #[test]
    fn separates_classes() {
        let tr = synthetic(ModelKind::Cte, 600, 0, 3);
        let va = synthetic(ModelKind::Cte, 150, 1000, 4);
        let out = train(&tr, &va, ModelKind::Cte, &small_cfg(60)).unwrap();
        let acc = classification_accuracy(&out.model, &va).unwrap();
        assert!(acc >= 0.97, "accuracy {acc}");
    }

    #[test]
    fn training_is_deterministic() {
        let tr = synthetic(ModelKind::Cte, 100, 0, 5);
        let va = synthetic(ModelKind::Cte, 30, 1000, 6);
        let a = train(&tr, &va, ModelKind::Cte, &small_cfg(3)).unwrap();
        let b = train(&tr, &va, ModelKind::Cte, &small_cfg(3)).unwrap();
        assert_eq!(a.model.params, b.model.params);
        assert_eq!(a.curve, b.curve);
    }

    #[test]
    fn rejects_bad_splits() {
        let tr = synthetic(ModelKind::Cle, 20, 0, 5);
        let empty = SequenceDataset::new(5, 3);
        assert!(train(&tr, &empty, ModelKind::Cle, &small_cfg(1)).is_err());
        assert!(train(&tr, &tr, ModelKind::Cle, &small_cfg(1)).is_err());
        let va = synthetic(ModelKind::Cle, 20, 1000, 6);
        assert!(train(&tr, &va, ModelKind::Cte, &small_cfg(1)).is_err());
    }

    #[test]
    fn early_stop_truncates_curve() {
        let tr = synthetic(ModelKind::Cle, 50, 0, 7);
        let va = synthetic(ModelKind::Cle, 20, 1000, 8);
        let cfg = TrainConfig {
            early_stop: true,
            patience: 2,
            learning_rate: 0.5,
            ..small_cfg(100)
        };
        let out = train(&tr, &va, ModelKind::Cle, &cfg).unwrap();
        assert!(out.curve.len() < 100);
        let best = out.curve.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(best, out.model.meta.best_val_loss);
    }
}
