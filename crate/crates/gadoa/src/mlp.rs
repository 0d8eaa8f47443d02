//! From-scratch fully connected classifier.
//!
//! The production architecture is four hidden layers of 1024 ReLU units, each
//! followed by 20% inverted dropout during training, and a 72-class output
//! layer read through a softmax. Training uses mini-batch Adam on the mean
//! cross-entropy, with the best-validation snapshot returned after early
//! stopping. All arithmetic is f64; matrix products go through ndarray.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureKind;
use crate::{derive_seed, estimate::NUM_CLASSES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    pub input_size: usize,
    pub hidden: Vec<usize>,
    pub output_size: usize,
    pub dropout_rate: f64,
}

impl MlpArchitecture {
    /// The DoA classifier: input of feature-dependent size, four hidden
    /// layers of 1024, 72 output classes, 20% dropout.
    pub fn classifier(input_size: usize) -> Self {
        MlpArchitecture {
            input_size,
            hidden: vec![1024; 4],
            output_size: NUM_CLASSES,
            dropout_rate: 0.2,
        }
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_size;
        for &h in &self.hidden {
            dims.push((h, prev));
            prev = h;
        }
        dims.push((self.output_size, prev));
        dims
    }

    fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.output_size == 0 || self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Stop when the validation loss has not improved for more than this
    /// many epochs.
    pub patience: usize,
    pub val_fraction: f64,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            patience: 10,
            val_fraction: 0.1,
            max_epochs: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainMeta {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub final_train_loss: f64,
    pub best_val_loss: f64,
    pub seed: u64,
    pub train_curve: Vec<f64>,
    pub val_curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub arch: MlpArchitecture,
    /// Per layer, weights are (out x in) row-major; biases are (out).
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    /// Per-feature standardization applied before the first layer. Raw
    /// features mix sample lags and meter coordinates at very different
    /// scales; training records the training-split statistics here so
    /// inference normalizes identically.
    input_mean: Array1<f64>,
    input_std: Array1<f64>,
    pub meta: TrainMeta,
    /// Which feature pipeline the model was trained for, if any.
    pub feature_kind: Option<FeatureKind>,
}

impl MlpModel {
    /// He-uniform hidden layers, zero output layer. Zeroing the output layer
    /// makes the initial posterior exactly uniform regardless of the input
    /// scale, which keeps the initial loss at ln C.
    pub fn new<R: Rng>(arch: MlpArchitecture, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let dims = arch.layer_dims();
        let n_layers = dims.len();
        let mut weights = Vec::with_capacity(n_layers);
        let mut biases = Vec::with_capacity(n_layers);
        for (li, &(out, inp)) in dims.iter().enumerate() {
            let w = if li + 1 == n_layers {
                Array2::zeros((out, inp))
            } else {
                let limit = (6.0 / inp as f64).sqrt();
                Array2::from_shape_fn((out, inp), |_| rng.random_range(-limit..=limit))
            };
            weights.push(w);
            biases.push(Array1::zeros(out));
        }
        Ok(MlpModel {
            input_mean: Array1::zeros(arch.input_size),
            input_std: Array1::ones(arch.input_size),
            arch,
            weights,
            biases,
            meta: TrainMeta::default(),
            feature_kind: None,
        })
    }

    /// Record input standardization statistics (identity by default).
    pub fn set_input_stats(&mut self, mean: Vec<f64>, std: Vec<f64>) -> Result<()> {
        if mean.len() != self.arch.input_size || std.len() != self.arch.input_size {
            return Err(Error::FeatureShape {
                expected: self.arch.input_size,
                got: mean.len().max(std.len()),
            });
        }
        if std.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Numeric("input std must be positive and finite".into()));
        }
        self.input_mean = Array1::from_vec(mean);
        self.input_std = Array1::from_vec(std);
        Ok(())
    }

    fn normalize(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        out -= &self.input_mean;
        out /= &self.input_std;
        out
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn params_to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            v.extend(w.iter());
            v.extend(b.iter());
        }
        v
    }

    pub fn set_params_from_vec(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::FeatureShape {
                expected: self.num_params(),
                got: params.len(),
            });
        }
        let mut off = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for v in w.iter_mut() {
                *v = params[off];
                off += 1;
            }
            for v in b.iter_mut() {
                *v = params[off];
                off += 1;
            }
        }
        Ok(())
    }

    /// Inference forward pass: no dropout, deterministic.
    pub fn forward(&self, x: &[f64]) -> Result<ForwardOutput> {
        if x.len() != self.arch.input_size {
            return Err(Error::FeatureShape {
                expected: self.arch.input_size,
                got: x.len(),
            });
        }
        let xb = ArrayView2::from_shape((1, x.len()), x).expect("row view of contiguous slice");
        let logits_b = self.forward_batch(&xb.to_owned(), None)?.logits;
        let logits: Vec<f64> = logits_b.row(0).to_vec();
        let probs = softmax_row(&logits);
        Ok(ForwardOutput { logits, probs })
    }

    /// Training-mode forward pass with fresh inverted-dropout masks.
    pub fn forward_dropout<R: Rng>(&self, x: &[f64], rng: &mut R) -> Result<ForwardOutput> {
        if x.len() != self.arch.input_size {
            return Err(Error::FeatureShape {
                expected: self.arch.input_size,
                got: x.len(),
            });
        }
        let xb = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        let masks = self.draw_masks(1, rng);
        let logits_b = self.forward_batch(&xb.to_owned(), Some(&masks))?.logits;
        let logits: Vec<f64> = logits_b.row(0).to_vec();
        let probs = softmax_row(&logits);
        Ok(ForwardOutput { logits, probs })
    }

    fn draw_masks<R: Rng>(&self, batch: usize, rng: &mut R) -> Vec<Array2<f64>> {
        let keep = 1.0 - self.arch.dropout_rate;
        self.arch
            .hidden
            .iter()
            .map(|&h| {
                Array2::from_shape_fn((batch, h), |_| {
                    if rng.random_bool(keep) {
                        1.0 / keep
                    } else {
                        0.0
                    }
                })
            })
            .collect()
    }

    fn forward_batch(&self, x: &Array2<f64>, masks: Option<&[Array2<f64>]>) -> Result<BatchCache> {
        let n_hidden = self.arch.hidden.len();
        let mut activations: Vec<Array2<f64>> = Vec::with_capacity(n_hidden + 1);
        let mut pre_relu: Vec<Array2<f64>> = Vec::with_capacity(n_hidden);
        activations.push(self.normalize(&x.view()));
        for li in 0..n_hidden {
            let a = activations.last().unwrap();
            let mut z = a.dot(&self.weights[li].t());
            z += &self.biases[li];
            let mut h = z.mapv(|v| v.max(0.0));
            if let Some(masks) = masks {
                h *= &masks[li];
            }
            pre_relu.push(z);
            activations.push(h);
        }
        let a = activations.last().unwrap();
        let mut logits = a.dot(&self.weights[n_hidden].t());
        logits += &self.biases[n_hidden];
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite activation in forward pass".into()));
        }
        Ok(BatchCache {
            activations,
            pre_relu,
            logits,
        })
    }

    /// Mean cross-entropy over a batch and the gradient of every parameter.
    /// When `dropout_rng` is supplied, fresh masks are drawn and shared
    /// between the forward and backward pass.
    pub fn loss_and_grad(
        &self,
        x: ArrayView2<f64>,
        labels: &[usize],
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Gradients)> {
        let batch = x.nrows();
        if batch == 0 || labels.len() != batch {
            return Err(Error::InvalidBatch(format!(
                "batch of {batch} features and {} labels",
                labels.len()
            )));
        }
        let c = self.arch.output_size;
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::InvalidBatch(format!("label {bad} out of range [0, {c})")));
        }
        if x.ncols() != self.arch.input_size {
            return Err(Error::FeatureShape {
                expected: self.arch.input_size,
                got: x.ncols(),
            });
        }
        let masks = dropout_rng.map(|rng| self.draw_masks(batch, rng));
        let cache = self.forward_batch(&x.to_owned(), masks.as_deref())?;

        // Stable softmax + cross-entropy; dlogits = (P - onehot) / batch.
        let mut dlogits = Array2::zeros(cache.logits.raw_dim());
        let mut loss = 0.0;
        for (r, row) in cache.logits.rows().into_iter().enumerate() {
            let m = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - row[labels[r]];
            for (j, &v) in row.iter().enumerate() {
                dlogits[(r, j)] = (v - lse).exp() / batch as f64;
            }
            dlogits[(r, labels[r])] -= 1.0 / batch as f64;
        }
        loss /= batch as f64;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {loss}")));
        }

        let n_hidden = self.arch.hidden.len();
        let mut dw = vec![Array2::zeros((0, 0)); n_hidden + 1];
        let mut db = vec![Array1::zeros(0); n_hidden + 1];

        let mut delta = dlogits;
        dw[n_hidden] = delta.t().dot(&cache.activations[n_hidden]);
        db[n_hidden] = delta.sum_axis(Axis(0));
        for li in (0..n_hidden).rev() {
            let mut da = delta.dot(&self.weights[li + 1]);
            if let Some(masks) = &masks {
                da *= &masks[li];
            }
            let dz = da * cache.pre_relu[li].mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            dw[li] = dz.t().dot(&cache.activations[li]);
            db[li] = dz.sum_axis(Axis(0));
            delta = dz;
        }
        Ok((loss, Gradients { dw, db }))
    }

    pub fn feature_kind_tag(&self) -> u8 {
        match self.feature_kind {
            None => 0,
            Some(FeatureKind::Full) => 1,
            Some(FeatureKind::Max) => 2,
            Some(FeatureKind::GeometryAware) => 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Vec<f64>,
    /// Softmax posterior; sums to one.
    pub probs: Vec<f64>,
}

struct BatchCache {
    activations: Vec<Array2<f64>>,
    pre_relu: Vec<Array2<f64>>,
    logits: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub dw: Vec<Array2<f64>>,
    pub db: Vec<Array1<f64>>,
}

fn softmax_row(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
    let exps: Vec<f64> = logits.iter().map(|&v| (v - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Adam optimizer state: first/second moments per parameter and the step
/// counter used for bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(model: &MlpModel) -> Self {
        AdamState {
            m_w: model.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            v_w: model.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            m_b: model.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
            v_b: model.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One Adam update with bias correction:
/// p -= lr * m_hat / (sqrt(v_hat) + eps).
pub fn adam_step(model: &mut MlpModel, state: &mut AdamState, grads: &Gradients, cfg: &TrainConfig) {
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for li in 0..model.weights.len() {
        adam_update(
            model.weights[li].as_slice_mut().unwrap(),
            state.m_w[li].as_slice_mut().unwrap(),
            state.v_w[li].as_slice_mut().unwrap(),
            grads.dw[li].as_slice().unwrap(),
            cfg,
            bc1,
            bc2,
        );
        adam_update(
            model.biases[li].as_slice_mut().unwrap(),
            state.m_b[li].as_slice_mut().unwrap(),
            state.v_b[li].as_slice_mut().unwrap(),
            grads.db[li].as_slice().unwrap(),
            cfg,
            bc1,
            bc2,
        );
    }
}

fn adam_update(
    params: &mut [f64],
    m: &mut [f64],
    v: &mut [f64],
    g: &[f64],
    cfg: &TrainConfig,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..params.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

/// Early-stopping bookkeeping: stop once the validation loss has gone
/// `patience + 1` consecutive epochs without a strict improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    pub best_epoch: usize,
    since_best: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }

    /// Record one epoch's validation loss; returns (improved, stop).
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> (bool, bool) {
        let improved = val_loss < self.best;
        if improved {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        (improved, self.since_best > self.patience)
    }
}

/// Train a classifier on labeled feature rows. A deterministic 10% split is
/// held out for validation; the returned model carries the parameters of the
/// best validation epoch.
pub fn train(
    arch: MlpArchitecture,
    features: ArrayView2<f64>,
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<MlpModel> {
    let n = features.nrows();
    if n != labels.len() {
        return Err(Error::InvalidBatch(format!(
            "{n} feature rows but {} labels",
            labels.len()
        )));
    }
    if n < 2 {
        return Err(Error::InvalidBatch(
            "training needs at least two samples for a validation split".into(),
        ));
    }
    if features.ncols() != arch.input_size {
        return Err(Error::FeatureShape {
            expected: arch.input_size,
            got: features.ncols(),
        });
    }

    // Disjoint seed streams for the split, the initialization, and the
    // training loop (shuffles + dropout masks).
    let mut split_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[1]));
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[2]));
    let mut loop_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[3]));

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut split_rng);
    let n_val = ((n as f64 * cfg.val_fraction).round() as usize).clamp(1, n - 1);
    let (val_idx, train_idx) = order.split_at(n_val);

    let gather = |idx: &[usize]| -> (Array2<f64>, Vec<usize>) {
        let mut x = Array2::zeros((idx.len(), arch.input_size));
        let mut y = Vec::with_capacity(idx.len());
        for (r, &i) in idx.iter().enumerate() {
            x.row_mut(r).assign(&features.row(i));
            y.push(labels[i]);
        }
        (x, y)
    };
    let (x_val, y_val) = gather(val_idx);
    let (x_train, y_train) = gather(train_idx);
    let n_train = x_train.nrows();

    let mut model = MlpModel::new(arch, &mut init_rng)?;
    {
        // Standardize inputs with training-split statistics; keeps the
        // sample-lag and meter-coordinate columns on comparable scales.
        let n = n_train as f64;
        let mean: Vec<f64> = (0..model.arch.input_size)
            .map(|c| x_train.column(c).sum() / n)
            .collect();
        let std: Vec<f64> = (0..model.arch.input_size)
            .map(|c| {
                let var = x_train
                    .column(c)
                    .iter()
                    .map(|&v| (v - mean[c]) * (v - mean[c]))
                    .sum::<f64>()
                    / n;
                var.sqrt().max(1e-6)
            })
            .collect();
        model.set_input_stats(mean, std)?;
    }
    let mut state = AdamState::new(&model);
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut best_params: Option<Vec<f64>> = None;
    let mut meta = TrainMeta {
        seed: cfg.seed,
        ..TrainMeta::default()
    };
    let use_dropout = model.arch.dropout_rate > 0.0;

    let mut batch_order: Vec<usize> = (0..n_train).collect();
    for epoch in 1..=cfg.max_epochs {
        batch_order.shuffle(&mut loop_rng);
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for chunk in batch_order.chunks(cfg.batch_size.max(1)) {
            let mut xb = Array2::zeros((chunk.len(), model.arch.input_size));
            let mut yb = Vec::with_capacity(chunk.len());
            for (r, &i) in chunk.iter().enumerate() {
                xb.row_mut(r).assign(&x_train.row(i));
                yb.push(y_train[i]);
            }
            let rng = if use_dropout { Some(&mut loop_rng) } else { None };
            let (loss, grads) = model
                .loss_and_grad(xb.view(), &yb, rng)
                .map_err(|e| Error::TrainingFailure(format!("epoch {epoch}: {e}")))?;
            adam_step(&mut model, &mut state, &grads, cfg);
            epoch_loss += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let train_loss = epoch_loss / seen as f64;
        let val_loss = mean_loss(&model, x_val.view(), &y_val)
            .map_err(|e| Error::TrainingFailure(format!("epoch {epoch} validation: {e}")))?;
        meta.train_curve.push(train_loss);
        meta.val_curve.push(val_loss);
        meta.epochs_run = epoch;
        meta.final_train_loss = train_loss;
        eprintln!("epoch {epoch}: train loss {train_loss:.4}, val loss {val_loss:.4}");

        let (improved, stop) = stopper.observe(epoch, val_loss);
        if improved {
            best_params = Some(model.params_to_vec());
        }
        if stop {
            break;
        }
    }

    if let Some(params) = best_params {
        model.set_params_from_vec(&params)?;
    }
    meta.best_epoch = stopper.best_epoch;
    meta.best_val_loss = stopper.best_loss();
    model.meta = meta;
    Ok(model)
}

/// Mean cross-entropy in inference mode, evaluated in bounded-size chunks.
pub fn mean_loss(model: &MlpModel, x: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    let mut seen = 0usize;
    let chunk = 1024;
    let n = x.nrows();
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let xs = x.slice(ndarray::s![start..end, ..]);
        let (loss, _) = model.loss_and_grad(xs, &labels[start..end], None)?;
        total += loss * (end - start) as f64;
        seen += end - start;
        start = end;
    }
    Ok(total / seen as f64)
}

const MODEL_MAGIC: &[u8; 8] = b"GADOAML1";
const MODEL_VERSION: u32 = 1;

pub fn save_model(model: &MlpModel, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    buf.push(model.feature_kind_tag());
    buf.extend_from_slice(&(model.arch.input_size as u32).to_le_bytes());
    buf.extend_from_slice(&(model.arch.hidden.len() as u32).to_le_bytes());
    for &h in &model.arch.hidden {
        buf.extend_from_slice(&(h as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(model.arch.output_size as u32).to_le_bytes());
    buf.extend_from_slice(&model.arch.dropout_rate.to_le_bytes());
    for v in model.input_mean.iter().chain(model.input_std.iter()) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&(model.meta.epochs_run as u32).to_le_bytes());
    buf.extend_from_slice(&(model.meta.best_epoch as u32).to_le_bytes());
    buf.extend_from_slice(&model.meta.final_train_loss.to_le_bytes());
    buf.extend_from_slice(&model.meta.best_val_loss.to_le_bytes());
    buf.extend_from_slice(&model.meta.seed.to_le_bytes());
    buf.extend_from_slice(&(model.meta.train_curve.len() as u32).to_le_bytes());
    for v in &model.meta.train_curve {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&(model.meta.val_curve.len() as u32).to_le_bytes());
    for v in &model.meta.val_curve {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for (w, b) in model.weights.iter().zip(&model.biases) {
        for v in w.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in b.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

struct ByteCursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::ModelFormat("truncated model file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n * 8)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn load_model(path: &Path) -> Result<MlpModel> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cur = ByteCursor { buf: &bytes, pos: 0 };

    if cur.take(8)? != MODEL_MAGIC {
        return Err(Error::ModelFormat("bad magic bytes".into()));
    }
    let version = cur.u32()?;
    if version != MODEL_VERSION {
        return Err(Error::ModelFormat(format!(
            "unsupported model format version {version} (expected {MODEL_VERSION})"
        )));
    }
    let feature_kind = match cur.u8()? {
        0 => None,
        1 => Some(FeatureKind::Full),
        2 => Some(FeatureKind::Max),
        3 => Some(FeatureKind::GeometryAware),
        t => return Err(Error::ModelFormat(format!("unknown feature tag {t}"))),
    };
    let sane = |v: u32| -> Result<usize> {
        if v == 0 || v > 1 << 24 {
            Err(Error::ModelFormat(format!("implausible layer size {v}")))
        } else {
            Ok(v as usize)
        }
    };
    let input_size = sane(cur.u32()?)?;
    let n_hidden = cur.u32()? as usize;
    if n_hidden > 64 {
        return Err(Error::ModelFormat(format!("implausible hidden count {n_hidden}")));
    }
    let mut hidden = Vec::with_capacity(n_hidden);
    for _ in 0..n_hidden {
        hidden.push(sane(cur.u32()?)?);
    }
    let output_size = sane(cur.u32()?)?;
    let dropout_rate = cur.f64()?;
    let arch = MlpArchitecture {
        input_size,
        hidden,
        output_size,
        dropout_rate,
    };
    arch.validate().map_err(|e| Error::ModelFormat(e.to_string()))?;
    let input_mean = Array1::from_vec(cur.f64_vec(input_size)?);
    let input_std = Array1::from_vec(cur.f64_vec(input_size)?);
    if input_std.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::ModelFormat("non-positive input std".into()));
    }

    let meta = TrainMeta {
        epochs_run: cur.u32()? as usize,
        best_epoch: cur.u32()? as usize,
        final_train_loss: cur.f64()?,
        best_val_loss: cur.f64()?,
        seed: cur.u64()?,
        train_curve: {
            let n = cur.u32()? as usize;
            cur.f64_vec(n)?
        },
        val_curve: {
            let n = cur.u32()? as usize;
            cur.f64_vec(n)?
        },
    };

    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for (out, inp) in arch.layer_dims() {
        let w = cur.f64_vec(out * inp)?;
        weights.push(Array2::from_shape_vec((out, inp), w).expect("shape from sizes"));
        biases.push(Array1::from_vec(cur.f64_vec(out)?));
    }
    if cur.pos != bytes.len() {
        return Err(Error::ModelFormat(format!(
            "{} trailing bytes after parameters",
            bytes.len() - cur.pos
        )));
    }
    if weights.iter().flatten().any(|v| !v.is_finite())
        || biases.iter().flatten().any(|v| !v.is_finite())
    {
        return Err(Error::ModelFormat("non-finite parameter".into()));
    }
    Ok(MlpModel {
        arch,
        weights,
        biases,
        input_mean,
        input_std,
        meta,
        feature_kind,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny_arch(input: usize, hidden: Vec<usize>, output: usize, dropout: f64) -> MlpArchitecture {
        MlpArchitecture {
            input_size: input,
            hidden,
            output_size: output,
            dropout_rate: dropout,
        }
    }

    fn randomize(model: &mut MlpModel, rng: &mut ChaCha8Rng) {
        let params: Vec<f64> = (0..model.num_params())
            .map(|_| rng.random_range(-0.8..0.8))
            .collect();
        model.set_params_from_vec(&params).unwrap();
    }

    #[test]
    fn fresh_classifier_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = MlpModel::new(MlpArchitecture::classifier(10), &mut rng).unwrap();
        let out = model.forward(&vec![3.0; 10]).unwrap();
        for p in &out.probs {
            assert!((p - 1.0 / 72.0).abs() < 1e-12);
        }
    }

    #[test]
    fn probabilities_sum_to_one_on_random_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let mut model = MlpModel::new(tiny_arch(4, vec![6, 5], 7, 0.0), &mut rng).unwrap();
            randomize(&mut model, &mut rng);
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let out = model.forward(&x).unwrap();
            let sum: f64 = out.probs.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn relu_zeroes_negative_preactivations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut model = MlpModel::new(tiny_arch(1, vec![1], 1, 0.0), &mut rng).unwrap();
        // w0 = 1, b0 = -1: pre-activation is x - 1, so x = 0 gives ReLU(-1) = 0;
        // the output layer passes the hidden unit through.
        model.set_params_from_vec(&[1.0, -1.0, 1.0, 0.0]).unwrap();
        let out = model.forward(&[0.0]).unwrap();
        assert_eq!(out.logits[0], 0.0);
        let out = model.forward(&[3.0]).unwrap();
        assert_eq!(out.logits[0], 2.0);
    }

    #[test]
    fn loss_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = MlpModel::new(MlpArchitecture::classifier(10), &mut rng).unwrap();
        // Uniform posterior: loss = ln 72 for any label.
        let x = Array2::zeros((1, 10));
        let (loss, _) = model.loss_and_grad(x.view(), &[5], None).unwrap();
        assert!((loss - 72f64.ln()).abs() < 1e-12);
        assert!((loss - 4.2767).abs() < 1e-4);

        // Probability ~1 on the true class: loss ~ 0.
        let mut model = MlpModel::new(tiny_arch(1, vec![], 3, 0.0), &mut rng).unwrap();
        model
            .set_params_from_vec(&[0.0, 0.0, 0.0, 50.0, 0.0, 0.0])
            .unwrap();
        let x = array![[1.0]];
        let (loss, _) = model.loss_and_grad(x.view(), &[0], None).unwrap();
        assert!(loss.abs() < 1e-9);
    }

    #[test]
    fn empty_batch_and_bad_labels_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = MlpModel::new(tiny_arch(2, vec![3], 4, 0.0), &mut rng).unwrap();
        let x = Array2::<f64>::zeros((0, 2));
        assert!(matches!(
            model.loss_and_grad(x.view(), &[], None),
            Err(Error::InvalidBatch(_))
        ));
        let x = Array2::<f64>::zeros((1, 2));
        assert!(matches!(
            model.loss_and_grad(x.view(), &[4], None),
            Err(Error::InvalidBatch(_))
        ));
        assert!(matches!(
            model.forward(&[1.0, 2.0, 3.0]),
            Err(Error::FeatureShape { .. })
        ));
    }

    /// Central finite differences of the loss against the analytic gradient.
    fn fd_max_rel_error(model: &mut MlpModel, x: &Array2<f64>, labels: &[usize]) -> f64 {
        let (_, grads) = model.loss_and_grad(x.view(), labels, None).unwrap();
        let analytic: Vec<f64> = grads
            .dw
            .iter()
            .zip(&grads.db)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied().collect::<Vec<_>>())
            .collect();
        let base = model.params_to_vec();
        let step = 1e-5;
        let mut worst = 0.0f64;
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] = base[i] + step;
            model.set_params_from_vec(&p).unwrap();
            let (lp, _) = model.loss_and_grad(x.view(), labels, None).unwrap();
            p[i] = base[i] - step;
            model.set_params_from_vec(&p).unwrap();
            let (lm, _) = model.loss_and_grad(x.view(), labels, None).unwrap();
            let fd = (lp - lm) / (2.0 * step);
            let denom = analytic[i].abs().max(fd.abs()).max(1e-3);
            worst = worst.max((analytic[i] - fd).abs() / denom);
        }
        model.set_params_from_vec(&base).unwrap();
        worst
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut model = MlpModel::new(tiny_arch(2, vec![4], 3, 0.0), &mut rng).unwrap();
        randomize(&mut model, &mut rng);
        let x = Array2::from_shape_fn((5, 2), |_| rng.random_range(-1.0..1.0));
        let labels = vec![0, 1, 2, 1, 0];
        let err = fd_max_rel_error(&mut model, &x, &labels);
        assert!(err < 1e-4, "max relative gradient error {err}");
    }

    #[test]
    fn softmax_ce_gradient_identity_on_logits() {
        // With no hidden layers the output-bias gradient is exactly the mean
        // of (P - onehot) over the batch.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut model = MlpModel::new(tiny_arch(3, vec![], 4, 0.0), &mut rng).unwrap();
        randomize(&mut model, &mut rng);
        let x = Array2::from_shape_fn((6, 3), |_| rng.random_range(-1.0..1.0));
        let labels = vec![0, 3, 2, 1, 3, 0];
        let (_, grads) = model.loss_and_grad(x.view(), &labels, None).unwrap();
        let mut expect = vec![0.0; 4];
        for r in 0..6 {
            let out = model.forward(&x.row(r).to_vec()).unwrap();
            for j in 0..4 {
                expect[j] += out.probs[j] / 6.0;
            }
            expect[labels[r]] -= 1.0 / 6.0;
        }
        for j in 0..4 {
            assert!((grads.db[0][j] - expect[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn adam_first_step_magnitude() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut model = MlpModel::new(tiny_arch(1, vec![], 1, 0.0), &mut rng).unwrap();
        model.set_params_from_vec(&[0.5, 0.0]).unwrap();
        let mut state = AdamState::new(&model);
        let cfg = TrainConfig::default();
        let grads = Gradients {
            dw: vec![array![[1.0]]],
            db: vec![array![0.0]],
        };
        adam_step(&mut model, &mut state, &grads, &cfg);
        let p = model.params_to_vec();
        // Bias-corrected m_hat = v_hat = 1 on the first step.
        let expect = 0.5 - 1e-4 / (1.0 + 1e-8);
        assert!((p[0] - expect).abs() < 1e-15);
        assert_eq!(p[1], 0.0);

        // Zero gradients throughout leave parameters untouched.
        let mut fresh = MlpModel::new(tiny_arch(1, vec![], 1, 0.0), &mut rng).unwrap();
        fresh.set_params_from_vec(&[0.5, -0.25]).unwrap();
        let mut state = AdamState::new(&fresh);
        let zero = Gradients {
            dw: vec![array![[0.0]]],
            db: vec![array![0.0]],
        };
        for _ in 0..5 {
            adam_step(&mut fresh, &mut state, &zero, &cfg);
        }
        assert_eq!(fresh.params_to_vec(), vec![0.5, -0.25]);
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut model = MlpModel::new(tiny_arch(3, vec![5], 4, 0.0), &mut rng).unwrap();
            randomize(&mut model, &mut rng);
            let mut state = AdamState::new(&model);
            let cfg = TrainConfig {
                learning_rate: 1e-2,
                ..TrainConfig::default()
            };
            let x = Array2::from_shape_fn((8, 3), |_| rng.random_range(-1.0..1.0));
            let labels = vec![0, 1, 2, 3, 0, 1, 2, 3];
            for _ in 0..10 {
                let (_, grads) = model.loss_and_grad(x.view(), &labels, None).unwrap();
                adam_step(&mut model, &mut state, &grads, &cfg);
            }
            model.params_to_vec()
        };
        let a = run();
        let b = run();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn early_stopper_patience_mechanics() {
        // Losses: 1.0 then eleven more 1.0 epochs. Equal is not an
        // improvement, so epoch 12 is the eleventh stale epoch and stops;
        // the best epoch stays the first.
        let mut stopper = EarlyStopper::new(10);
        let mut stopped_at = 0;
        for epoch in 1..=12 {
            let (_, stop) = stopper.observe(epoch, 1.0);
            if stop {
                stopped_at = epoch;
                break;
            }
        }
        assert_eq!(stopped_at, 12);
        assert_eq!(stopper.best_epoch, 1);
    }

    #[test]
    fn trains_linearly_separable_toy() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 240;
        let mut x = Array2::zeros((n, 2));
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let a = rng.random_range(-1.0..1.0f64);
            let b = rng.random_range(-1.0..1.0f64);
            let cls = usize::from(a + b > 0.0);
            // Margin keeps the toy set cleanly separable.
            let shift = if cls == 1 { 0.25 } else { -0.25 };
            x[(i, 0)] = a + shift;
            x[(i, 1)] = b + shift;
            labels.push(cls);
        }
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            max_epochs: 50,
            seed: 4,
            ..TrainConfig::default()
        };
        let model = train(tiny_arch(2, vec![16], 2, 0.0), x.view(), &labels, &cfg).unwrap();
        let mut correct = 0;
        for i in 0..n {
            let out = model.forward(&x.row(i).to_vec()).unwrap();
            let pred = usize::from(out.probs[1] > out.probs[0]);
            correct += usize::from(pred == labels[i]);
        }
        let acc = correct as f64 / n as f64;
        assert!(acc >= 0.99, "toy accuracy {acc}");
    }

    #[test]
    fn training_is_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Array2::from_shape_fn((64, 3), |_| rng.random_range(-1.0..1.0));
        let labels: Vec<usize> = (0..64).map(|i| i % 3).collect();
        let cfg = TrainConfig {
            max_epochs: 5,
            seed: 21,
            ..TrainConfig::default()
        };
        let a = train(tiny_arch(3, vec![8], 3, 0.2), x.view(), &labels, &cfg).unwrap();
        let b = train(tiny_arch(3, vec![8], 3, 0.2), x.view(), &labels, &cfg).unwrap();
        assert_eq!(a.meta.best_val_loss, b.meta.best_val_loss);
        assert_eq!(a.params_to_vec(), b.params_to_vec());
    }

    #[test]
    fn initial_loss_near_ln_c_on_random_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let model = MlpModel::new(MlpArchitecture::classifier(20), &mut rng).unwrap();
        let x = Array2::from_shape_fn((64, 20), |_| rng.random_range(-14.0..14.0));
        let labels: Vec<usize> = (0..64).map(|_| rng.random_range(0..72)).collect();
        let (loss, _) = model.loss_and_grad(x.view(), &labels, None).unwrap();
        let target = 72f64.ln();
        assert!((loss - target).abs() / target < 0.05, "initial loss {loss}");
    }

    #[test]
    fn inference_is_dropout_free_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut model = MlpModel::new(tiny_arch(4, vec![8, 8], 5, 0.2), &mut rng).unwrap();
        randomize(&mut model, &mut rng);
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = model.forward(&x).unwrap();
        let b = model.forward(&x).unwrap();
        assert!(a
            .logits
            .iter()
            .zip(&b.logits)
            .all(|(p, q)| p.to_bits() == q.to_bits()));

        // Dropout forward differs between draws with high probability.
        let mut d1 = ChaCha8Rng::seed_from_u64(1);
        let mut d2 = ChaCha8Rng::seed_from_u64(2);
        let da = model.forward_dropout(&x, &mut d1).unwrap();
        let db = model.forward_dropout(&x, &mut d2).unwrap();
        assert_ne!(da.logits, db.logits);
    }

    #[test]
    fn save_load_roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.gmlp");
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut model = MlpModel::new(tiny_arch(6, vec![9, 7], 5, 0.2), &mut rng).unwrap();
        randomize(&mut model, &mut rng);
        model.feature_kind = Some(FeatureKind::Max);
        model.meta.epochs_run = 3;
        model.meta.train_curve = vec![1.0, 0.5, 0.25];
        save_model(&model, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, model);

        let x: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = model.forward(&x).unwrap();
        let b = back.forward(&x).unwrap();
        assert!(a
            .logits
            .iter()
            .zip(&b.logits)
            .all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn load_rejects_corruption_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.gmlp");
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let model = MlpModel::new(tiny_arch(2, vec![3], 2, 0.0), &mut rng).unwrap();
        save_model(&model, &path).unwrap();

        let bytes = std::fs::read(&path).unwrap();
        let mut corrupted = bytes.clone();
        corrupted[0] = b'X';
        std::fs::write(&path, &corrupted).unwrap();
        assert!(matches!(load_model(&path), Err(Error::ModelFormat(_))));

        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(load_model(&path), Err(Error::ModelFormat(_))));

        let mut extended = bytes.clone();
        extended.extend_from_slice(&[0u8; 4]);
        std::fs::write(&path, &extended).unwrap();
        assert!(matches!(load_model(&path), Err(Error::ModelFormat(_))));
    }

    #[test]
    fn model_rejects_wrong_feature_width() {
        // A model trained on 10-wide features cannot consume 20-wide input.
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let model = MlpModel::new(MlpArchitecture::classifier(10), &mut rng).unwrap();
        assert!(matches!(
            model.forward(&vec![0.0; 20]),
            Err(Error::FeatureShape {
                expected: 10,
                got: 20
            })
        ));
    }
}
