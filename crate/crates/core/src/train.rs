//! Supervised training: BCE loss, Adam, class-balanced batches, early
//! stopping on validation loss with best-weight restoration.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, DEFAULT_THRESHOLD};
use crate::model::Model;
use crate::nn::{Mode, ParamStore};
use crate::tensor::{Scalar, Tape, Tensor};

/// One model input `(T, H, W, Cin)` with its binary label.
#[derive(Clone, Debug)]
pub struct Example {
    pub x: Tensor<f32>,
    pub label: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Minimum validation-loss decrease that counts as an improvement.
    pub min_delta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 16,
            max_epochs: 75,
            patience: 5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            min_delta: 1e-5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("train config: {m}")));
        if !(self.learning_rate > 0.0 && self.epsilon > 0.0 && self.min_delta >= 0.0) {
            return bad("learning_rate and epsilon must be positive, min_delta non-negative");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2 to hold both classes");
        }
        if self.max_epochs == 0 || self.patience == 0 {
            return bad("max_epochs and patience must be >= 1");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("adam betas must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn to_config(&self) -> String {
        format!(
            "train.learning_rate={}\ntrain.batch_size={}\ntrain.max_epochs={}\ntrain.patience={}\n\
             train.beta1={}\ntrain.beta2={}\ntrain.epsilon={}\ntrain.min_delta={}\ntrain.seed={}\n",
            self.learning_rate,
            self.batch_size,
            self.max_epochs,
            self.patience,
            self.beta1,
            self.beta2,
            self.epsilon,
            self.min_delta,
            self.seed
        )
    }

    /// Defaults overridden by any `train.*` keys present.
    pub fn from_config(kv: &KeyValues) -> Result<Self> {
        let mut c = Self::default();
        for (key, value) in kv.iter() {
            let Some(field) = key.strip_prefix("train.") else {
                continue;
            };
            let bad = || Error::InvalidArgument(format!("{key}: cannot parse {value:?}"));
            let real = || value.parse::<f64>().map_err(|_| bad());
            let int = || value.parse::<usize>().map_err(|_| bad());
            match field {
                "learning_rate" => c.learning_rate = real()?,
                "batch_size" => c.batch_size = int()?,
                "max_epochs" => c.max_epochs = int()?,
                "patience" => c.patience = int()?,
                "beta1" => c.beta1 = real()?,
                "beta2" => c.beta2 = real()?,
                "epsilon" => c.epsilon = real()?,
                "min_delta" => c.min_delta = real()?,
                "seed" => c.seed = value.parse().map_err(|_| bad())?,
                _ => return Err(Error::InvalidArgument(format!("unknown key {key}"))),
            }
        }
        c.validate()?;
        Ok(c)
    }
}

/// Mean binary cross-entropy with predictions clamped to `[1e-7, 1 − 1e-7]`.
pub fn bce_loss<F: Scalar>(pred: &Tensor<F>, labels: &Tensor<F>) -> Result<f64> {
    let mut tape = Tape::inference();
    let p = tape.leaf(pred.clone());
    let l = tape.bce(p, labels)?;
    Ok(tape.value(l).data()[0].f64())
}

/// Bias-corrected Adam moments, one pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub first: Vec<Tensor<f64>>,
    pub second: Vec<Tensor<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new<F: Scalar>(params: &ParamStore<F>) -> Self {
        let zeros = || params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Self {
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    /// Apply one update to every parameter. Gradients are validated before
    /// any parameter changes, so a failed step leaves the model untouched.
    pub fn step<F: Scalar>(&mut self, params: &mut ParamStore<F>, grads: &[Tensor<F>], cfg: &TrainConfig) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "adam: {} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (id, g) in params.ids().zip(grads) {
            if g.shape() != params.get(id).shape() {
                return Err(Error::shape("adam_step", g.shape(), params.get(id).shape()));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter {}", params.name(id))));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let ids: Vec<_> = params.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let g = &grads[k];
            let m = self.first[k].data_mut();
            let v = self.second[k].data_mut();
            let p: Vec<F> = params
                .get(id)
                .data()
                .iter()
                .zip(g.data())
                .enumerate()
                .map(|(i, (&p, &g))| {
                    let g = g.f64();
                    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
                    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
                    let mh = m[i] / c1;
                    let vh = v[i] / c2;
                    F::of(p.f64() - cfg.learning_rate * mh / (vh.sqrt() + cfg.epsilon))
                })
                .collect();
            let shape = params.get(id).shape().to_vec();
            params.set(id, Tensor::new(&shape, p)?);
        }
        Ok(())
    }
}

/// Index batches with `⌈B/2⌉` positives and `⌊B/2⌋` negatives each. The
/// epoch runs until the larger class (relative to its per-batch quota) is
/// exhausted; the other class is reshuffled and reused as needed.
pub fn balanced_batches<R: Rng + ?Sized>(labels: &[bool], batch_size: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(Error::InvalidArgument("balanced batches need batch_size >= 2".into()));
    }
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "balanced batches need both classes ({} falls, {} non-falls)",
            pos.len(),
            neg.len()
        )));
    }
    let (qp, qn) = (batch_size.div_ceil(2), batch_size / 2);
    let n_batches = pos.len().div_ceil(qp).max(neg.len().div_ceil(qn));
    let draw = |pool: &[usize], count: usize, rng: &mut R| -> Vec<usize> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let mut cycle = pool.to_vec();
            cycle.shuffle(rng);
            out.extend(cycle.into_iter().take(count - out.len()));
        }
        out
    };
    let p = draw(&pos, n_batches * qp, rng);
    let n = draw(&neg, n_batches * qn, rng);
    Ok((0..n_batches)
        .map(|b| {
            let mut batch = p[b * qp..(b + 1) * qp].to_vec();
            batch.extend_from_slice(&n[b * qn..(b + 1) * qn]);
            batch
        })
        .collect())
}

/// Stack examples into `(B, T, H, W, Cin)` inputs and `(B, 1)` labels.
pub fn collate(examples: &[Example], indices: &[usize]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let first = examples
        .get(*indices.first().ok_or_else(|| Error::InvalidArgument("empty batch".into()))?)
        .ok_or_else(|| Error::InvalidArgument("batch index out of range".into()))?;
    let item = first.x.shape().to_vec();
    let mut data = Vec::with_capacity(indices.len() * first.x.len());
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        let e = &examples[i];
        if e.x.shape() != item.as_slice() {
            return Err(Error::shape("collate", e.x.shape(), &item));
        }
        data.extend_from_slice(e.x.data());
        labels.push(if e.label { 1.0 } else { 0.0 });
    }
    let mut shape = vec![indices.len()];
    shape.extend(item);
    Ok((Tensor::new(&shape, data)?, Tensor::new(&[indices.len(), 1], labels)?))
}

/// Early-stopping bookkeeping on a loss to minimize.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_delta: f64,
    pub best_loss: f64,
    pub best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            best_loss: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Record `loss` for `epoch`; returns `(improved, stop)`.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> (bool, bool) {
        if loss < self.best_loss - self.min_delta {
            self.best_loss = loss;
            self.best_epoch = epoch;
            self.stale = 0;
            (true, false)
        } else {
            self.stale += 1;
            (false, self.stale >= self.patience)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_auc: f64,
    pub val_acc: f64,
    pub val_f1: f64,
    pub val_mcc: f64,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl FitResult {
    pub fn best(&self) -> &EpochRecord {
        &self.history[self.best_epoch - 1]
    }
}

pub const HISTORY_HEADER: [&str; 7] = ["epoch", "train_loss", "val_loss", "val_auc", "val_acc", "val_f1", "val_mcc"];

pub fn write_history<W: Write>(history: &[EpochRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HISTORY_HEADER)?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.val_loss.to_string(),
            r.val_auc.to_string(),
            r.val_acc.to_string(),
            r.val_f1.to_string(),
            r.val_mcc.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("history", e))
}

pub fn save_history(history: &[EpochRecord], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_history(history, std::io::BufWriter::new(file))
}

/// Scores for `examples` in inference mode, batched by `batch`.
pub fn predict_examples(model: &Model<f32>, examples: &[Example], batch: usize) -> Result<Vec<f64>> {
    let idx: Vec<usize> = (0..examples.len()).collect();
    let mut scores = Vec::with_capacity(examples.len());
    for chunk in idx.chunks(batch.max(1)) {
        let (x, _) = collate(examples, chunk)?;
        scores.extend(model.predict(&x)?.data().iter().map(|&p| p as f64));
    }
    Ok(scores)
}

/// Validation loss and metrics of `model` on `examples`.
pub fn validate(model: &Model<f32>, examples: &[Example], batch: usize) -> Result<(f64, crate::metrics::EvalReport)> {
    let scores = predict_examples(model, examples, batch)?;
    let labels: Vec<bool> = examples.iter().map(|e| e.label).collect();
    let pred = Tensor::new(&[scores.len(), 1], scores.clone())?;
    let target = Tensor::new(&[labels.len(), 1], labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect())?;
    let loss = bce_loss(&pred, &target)?;
    Ok((loss, evaluate(&scores, &labels, DEFAULT_THRESHOLD)?))
}

/// One optimization pass over balanced batches; returns the mean batch loss.
pub fn train_epoch(
    model: &mut Model<f32>,
    adam: &mut AdamState,
    train: &[Example],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let labels: Vec<bool> = train.iter().map(|e| e.label).collect();
    let batches = balanced_batches(&labels, cfg.batch_size, rng)?;
    let mut total = 0.0;
    for batch in &batches {
        let (x, y) = collate(train, batch)?;
        let mut tape = Tape::new();
        let p = model.params().bind(&mut tape);
        let xv = tape.leaf(x);
        let loss = model.loss_on(&mut tape, &p, xv, &y, Mode::Train, rng)?;
        total += tape.value(loss).data()[0] as f64;
        let grads = tape.backward(loss)?;
        let g: Vec<Tensor<f32>> = p
            .vars()
            .iter()
            .zip(model.params().iter())
            .map(|(&v, (_, t))| grads.get_or_zeros(v, t.shape()))
            .collect();
        drop(tape);
        adam.step(model.params_mut(), &g, cfg)?;
    }
    Ok(total / batches.len() as f64)
}

/// Train with early stopping; on return `model` holds the weights of the
/// best validation-loss epoch. `on_epoch` sees each record as it is made.
pub fn fit(
    model: &mut Model<f32>,
    train: &[Example],
    val: &[Example],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitResult> {
    cfg.validate()?;
    if val.is_empty() || train.is_empty() {
        return Err(Error::InvalidArgument("fit needs non-empty train and validation sets".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(model.params());
    let mut stopper = EarlyStopping::new(cfg.patience, cfg.min_delta);
    let mut best = model.params().clone();
    let mut history = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        let train_loss = train_epoch(model, &mut adam, train, cfg, &mut rng)?;
        let (val_loss, report) = validate(model, val, cfg.batch_size)?;
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_auc: report.auc,
            val_acc: report.accuracy,
            val_f1: report.f1,
            val_mcc: report.mcc,
        };
        on_epoch(&record);
        history.push(record);
        let (improved, stop) = stopper.observe(epoch, val_loss);
        if improved {
            best = model.params().clone();
        }
        if stop {
            break;
        }
    }
    *model.params_mut() = best;
    Ok(FitResult {
        history,
        best_epoch: stopper.best_epoch.max(1),
    })
}
