//! Optimization loop: cross-entropy loss, Adam, metrics, and experiment
//! bookkeeping.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{fisher_yates, Dataset};
use crate::error::{CoreError, Result};
use crate::graph::{BackwardArgs, Graph, Var};
use crate::network::{Mode, Model};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Stop after the first epoch whose eval accuracy reaches this value.
    pub target_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 16,
            epochs: 10,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            target_accuracy: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(CoreError::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(CoreError::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

impl Graph {
    /// Mean over the batch of `-log softmax(logits)[label]`, stabilized by
    /// per-row max subtraction.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 {
            return Err(CoreError::RankMismatch {
                op: "cross_entropy",
                expected: 2,
                shape,
            });
        }
        let (b, k) = (shape[0], shape[1]);
        if labels.len() != b {
            return Err(CoreError::ShapeMismatch {
                op: "cross_entropy labels",
                left: vec![b],
                right: vec![labels.len()],
            });
        }
        for (sample, &label) in labels.iter().enumerate() {
            if label >= k {
                return Err(CoreError::LabelOutOfRange {
                    label,
                    classes: k,
                    sample,
                });
            }
        }
        let ld = self.value(logits).data();
        let mut softmax = vec![0.0; b * k];
        let mut total = 0.0;
        for bi in 0..b {
            let row = &ld[bi * k..(bi + 1) * k];
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let mut denom = 0.0;
            for (j, &v) in row.iter().enumerate() {
                let e = (v - max).exp();
                softmax[bi * k + j] = e;
                denom += e;
            }
            for v in &mut softmax[bi * k..(bi + 1) * k] {
                *v /= denom;
            }
            total += denom.ln() - (row[labels[bi]] - max);
        }
        let loss = Tensor::scalar(total / b as f64);

        let track = self.any_requires_grad(&[logits]);
        let labels_owned = labels.to_vec();
        let backward = track.then(|| {
            Box::new(move |args: BackwardArgs<'_>| {
                let u = args.upstream[0];
                let mut g = softmax.clone();
                let inv_b = 1.0 / b as f64;
                for (bi, &label) in labels_owned.iter().enumerate() {
                    g[bi * k + label] -= 1.0;
                }
                for v in &mut g {
                    *v *= u * inv_b;
                }
                vec![Some(Tensor::new(args.parents[0].shape(), g).expect("shape"))]
            }) as Box<dyn Fn(BackwardArgs<'_>) -> Vec<Option<Tensor>>>
        });
        Ok(self.push(loss, vec![logits], track, backward))
    }
}

/// First/second-moment state for Adam, one slot per registered parameter.
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    /// Completed step count; bias correction uses t+1 on the next step.
    pub t: u64,
}

impl AdamState {
    pub fn new(model: &Model) -> Self {
        let zeros: Vec<Tensor> = model
            .params
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// One bias-corrected Adam update, in place. `grads` is indexed like the
    /// parameter registry; missing entries leave that parameter untouched.
    pub fn step(&mut self, model: &mut Model, grads: &[Option<Tensor>], cfg: &TrainConfig) {
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (slot, id) in model.params.ids().enumerate().collect::<Vec<_>>() {
            let Some(grad) = grads.get(slot).and_then(|g| g.as_ref()) else {
                continue;
            };
            let p = model.params.get_mut(id);
            let m = self.m[slot].data_mut();
            let v = self.v[slot].data_mut();
            for ((pv, &g), (mv, vv)) in p
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * g;
                *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * g * g;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        }
    }
}

/// Classification metrics. `confusion[true][pred]` counts samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub confusion: Vec<Vec<usize>>,
    pub per_class: Vec<f64>,
    pub total: usize,
}

impl Metrics {
    pub fn from_predictions(truths: &[usize], preds: &[usize], classes: usize) -> Metrics {
        assert_eq!(truths.len(), preds.len());
        let mut confusion = vec![vec![0usize; classes]; classes];
        for (&t, &p) in truths.iter().zip(preds) {
            confusion[t][p] += 1;
        }
        let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
        let per_class: Vec<f64> = (0..classes)
            .map(|c| {
                let n: usize = confusion[c].iter().sum();
                if n == 0 {
                    0.0
                } else {
                    confusion[c][c] as f64 / n as f64
                }
            })
            .collect();
        Metrics {
            accuracy: if truths.is_empty() {
                0.0
            } else {
                correct as f64 / truths.len() as f64
            },
            confusion,
            per_class,
            total: truths.len(),
        }
    }

    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("true\\pred");
        for c in 0..self.confusion.len() {
            out.push_str(&format!(",{c}"));
        }
        out.push('\n');
        for (t, row) in self.confusion.iter().enumerate() {
            out.push_str(&t.to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub eval_accuracy: Option<f64>,
}

#[derive(Debug, Default)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: Option<usize>,
    pub best_accuracy: Option<f64>,
    /// Parameter/buffer snapshot at the best eval epoch.
    pub best_state: Option<Vec<(String, Tensor)>>,
}

impl TrainingHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,eval_accuracy\n");
        for e in &self.epochs {
            match e.eval_accuracy {
                Some(acc) => {
                    out.push_str(&format!("{},{:.17e},{:.17e}\n", e.epoch, e.train_loss, acc))
                }
                None => out.push_str(&format!("{},{:.17e},\n", e.epoch, e.train_loss)),
            }
        }
        out
    }
}

fn snapshot(model: &Model) -> Vec<(String, Tensor)> {
    let mut state: Vec<(String, Tensor)> = model
        .params
        .iter()
        .map(|(n, t)| (n.to_string(), t.clone()))
        .collect();
    state.extend(model.named_buffers());
    state
}

/// Epoch loop with seeded shuffling: forward, cross-entropy, backward, Adam.
/// A non-finite loss aborts immediately. When `eval` is given, per-epoch
/// accuracy is recorded and the best parameter snapshot retained.
pub fn train(
    model: &mut Model,
    train_data: &Dataset,
    eval: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainingHistory> {
    cfg.validate()?;
    if train_data.is_empty() {
        return Err(CoreError::EmptyDataset);
    }
    let mut history = TrainingHistory::default();
    let mut adam = AdamState::new(model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = train_data.len();

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        fisher_yates(&mut order, &mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (batch, labels) = train_data.batch(chunk)?;
            let mut pass = model.forward(&batch, Mode::Train)?;
            let loss = pass.graph.cross_entropy(pass.logits, &labels)?;
            let loss_value = pass.graph.value(loss).item();
            if !loss_value.is_finite() {
                return Err(CoreError::NanLoss {
                    epoch,
                    step,
                    loss: loss_value,
                });
            }
            loss_sum += loss_value;
            batches += 1;
            pass.graph.backward_and_release(loss)?;
            let grads: Vec<Option<Tensor>> = model
                .params
                .ids()
                .map(|id| pass.param_grad(id))
                .collect();
            adam.step(model, &grads, cfg);
        }
        let train_loss = loss_sum / batches.max(1) as f64;

        let eval_accuracy = match eval {
            Some(data) => Some(evaluate(model, data)?.accuracy),
            None => None,
        };
        history.epochs.push(EpochStats {
            epoch,
            train_loss,
            eval_accuracy,
        });
        if let Some(acc) = eval_accuracy {
            if history.best_accuracy.map_or(true, |best| acc > best) {
                history.best_accuracy = Some(acc);
                history.best_epoch = Some(epoch);
                history.best_state = Some(snapshot(model));
            }
            if cfg.target_accuracy.is_some_and(|target| acc >= target) {
                break;
            }
        }
    }
    Ok(history)
}

/// Eval-mode forward over the dataset; argmax predictions with ties broken
/// toward the lowest class index.
pub fn evaluate(model: &mut Model, data: &Dataset) -> Result<Metrics> {
    if data.is_empty() {
        return Err(CoreError::EmptyDataset);
    }
    let classes = model.cfg.class_count;
    let mut truths = Vec::with_capacity(data.len());
    let mut preds = Vec::with_capacity(data.len());
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(32) {
        let (batch, labels) = data.batch(chunk)?;
        let pass = model.forward(&batch, Mode::Eval)?;
        let logits = pass.logits_tensor();
        for (bi, &label) in labels.iter().enumerate() {
            let row = &logits.data()[bi * classes..(bi + 1) * classes];
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            truths.push(label);
            preds.push(best);
        }
    }
    Ok(Metrics::from_predictions(&truths, &preds, classes))
}
