//! Source-graph training and accuracy evaluation.

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, TRAIN_MASK, VAL_MASK};
use crate::error::{Error, Result};
use crate::graph::PropagationOperator;
use crate::model::{backward_ce, classify, featurize_hops, GprModel, Gradients, HopCache, SoftPrediction};

/// Step sizes below this end training early: no further descent is possible.
const MIN_STEP: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub weight_decay: f64,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 500,
            weight_decay: 0.1,
            patience: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be at least 1".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "weight decay {} must be non-negative",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Cross-entropy plus the weight-decay penalty.
    pub train_loss: f64,
    pub val_acc: f64,
    pub step_size: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
}

impl TrainHistory {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "train_loss", "val_acc"])?;
        for r in &self.records {
            w.write_record([r.epoch.to_string(), r.train_loss.to_string(), r.val_acc.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Point {
    cache: HopCache,
    loss: f64,
    grads: Gradients,
}

fn penalty(model: &GprModel, weight_decay: f64) -> f64 {
    let sq = model.w1.iter().chain(&model.w_cls).map(|x| x * x).sum::<f64>();
    0.5 * weight_decay * sq
}

fn evaluate_point(
    model: &GprModel,
    dataset: &Dataset,
    op: &PropagationOperator<'_>,
    train: &[bool],
    weight_decay: f64,
) -> Result<Point> {
    let cache = featurize_hops(model, dataset, op)?;
    let (ce, mut grads) = backward_ce(model, dataset, op, &cache, train)?;
    grads.w1.scaled_add(weight_decay, &model.w1);
    grads.w_cls.scaled_add(weight_decay, &model.w_cls);
    let loss = ce + penalty(model, weight_decay);
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::Numerical(format!("training loss became non-finite ({loss})")));
    }
    Ok(Point { cache, loss, grads })
}

/// Full-batch gradient descent on the masked cross-entropy. A step that
/// would raise the objective is rejected and retried at half the step size,
/// so the recorded loss never increases. Returns the parameters with the
/// best validation accuracy (earliest on ties) with their normalization
/// statistics stored.
pub fn train_source(
    model: GprModel,
    dataset: &Dataset,
    op: &PropagationOperator<'_>,
    config: &TrainConfig,
) -> Result<(GprModel, TrainHistory)> {
    config.validate()?;
    let train = dataset
        .mask(TRAIN_MASK)
        .ok_or_else(|| Error::InvalidParameter("dataset has no train mask".into()))?;
    let val = dataset
        .mask(VAL_MASK)
        .ok_or_else(|| Error::InvalidParameter("dataset has no val mask".into()))?;

    let mut model = model;
    let mut point = evaluate_point(&model, dataset, op, train, config.weight_decay)?;
    let mut best_val = accuracy_from_cache(&model, &point.cache, dataset.labels(), Some(val))?;
    let mut best = (model.clone(), point.cache.clone());
    let mut history = TrainHistory {
        records: Vec::with_capacity(config.epochs),
        best_epoch: 0,
        best_val_acc: best_val,
    };
    let mut step = config.learning_rate;
    let mut stale = 0;

    for epoch in 1..=config.epochs {
        let accepted = loop {
            let mut candidate = model.clone();
            candidate.apply_gradients(&point.grads, step);
            let next = evaluate_point(&candidate, dataset, op, train, config.weight_decay)?;
            if next.loss <= point.loss {
                break Some((candidate, next));
            }
            step *= 0.5;
            if step < MIN_STEP {
                break None;
            }
        };
        let Some((candidate, next)) = accepted else { break };
        model = candidate;
        point = next;

        let val_acc = accuracy_from_cache(&model, &point.cache, dataset.labels(), Some(val))?;
        history.records.push(EpochRecord {
            epoch,
            train_loss: point.loss,
            val_acc,
            step_size: step,
        });
        if val_acc > best_val {
            best_val = val_acc;
            best = (model.clone(), point.cache.clone());
            history.best_epoch = epoch;
            history.best_val_acc = val_acc;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }

    let (mut best_model, best_cache) = best;
    best_model.store_norm_stats(&best_cache);
    Ok((best_model, history))
}

/// Fraction of masked nodes (all nodes when `mask` is `None`) whose argmax
/// prediction matches the label; ties go to the lowest class index.
pub fn evaluate(
    model: &GprModel,
    dataset: &Dataset,
    op: &PropagationOperator<'_>,
    mask: Option<&[bool]>,
) -> Result<f64> {
    let cache = featurize_hops(model, dataset, op)?;
    accuracy_from_cache(model, &cache, dataset.labels(), mask)
}

pub fn accuracy_from_cache(
    model: &GprModel,
    cache: &HopCache,
    labels: &[usize],
    mask: Option<&[bool]>,
) -> Result<f64> {
    let z = cache.aggregate(&model.gamma)?;
    let (_, pred) = classify(z.view(), model);
    prediction_accuracy(&pred, labels, mask)
}

pub fn prediction_accuracy(pred: &SoftPrediction, labels: &[usize], mask: Option<&[bool]>) -> Result<f64> {
    accuracy(&pred.argmax(), labels, mask)
}

pub fn accuracy(predicted: &[usize], labels: &[usize], mask: Option<&[bool]>) -> Result<f64> {
    if predicted.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "accuracy predictions/labels",
            expected: labels.len(),
            actual: predicted.len(),
        });
    }
    if let Some(m) = mask {
        if m.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                context: "accuracy mask",
                expected: labels.len(),
                actual: m.len(),
            });
        }
    }
    let selected = |i: usize| mask.map_or(true, |m| m[i]);
    let (mut hit, mut total) = (0usize, 0usize);
    for i in (0..labels.len()).filter(|&i| selected(i)) {
        total += 1;
        hit += (predicted[i] == labels[i]) as usize;
    }
    if total == 0 {
        return Err(Error::InvalidParameter("accuracy over an empty mask".into()));
    }
    Ok(hit as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Graph, Normalization};
    use crate::model::ModelDims;
    use ndarray::{array, Array2};
    use std::collections::BTreeMap;

    fn separable_toy() -> Dataset {
        let n = 40;
        let features = Array2::from_shape_fn((n, 2), |(i, j)| {
            let side = if i % 2 == 0 { 1.0 } else { -1.0 };
            let jitter = ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.5;
            if j == 0 {
                side * (1.0 + 0.3 * jitter)
            } else {
                jitter
            }
        });
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let mut masks = BTreeMap::new();
        masks.insert(TRAIN_MASK.to_string(), (0..n).map(|i| i < 30).collect());
        masks.insert(VAL_MASK.to_string(), (0..n).map(|i| i >= 30).collect());
        Dataset::new(Graph::empty(n), features, labels, 2, masks).unwrap()
    }

    fn toy_dims() -> ModelDims {
        ModelDims {
            input: 2,
            hidden: 4,
            classes: 2,
            hops: 0,
        }
    }

    #[test]
    fn separable_toy_fits() {
        let ds = separable_toy();
        let op = PropagationOperator::new(ds.graph(), Normalization::Symmetric);
        let config = TrainConfig {
            learning_rate: 0.5,
            epochs: 200,
            patience: 200,
            ..TrainConfig::default()
        };
        let (model, history) = train_source(GprModel::init(toy_dims(), 3), &ds, &op, &config).unwrap();
        let acc = evaluate(&model, &ds, &op, ds.mask(TRAIN_MASK)).unwrap();
        assert_eq!(acc, 1.0);
        for pair in history.records.windows(2) {
            assert!(pair[1].train_loss <= pair[0].train_loss);
        }
    }

    #[test]
    fn zero_rate_keeps_parameters() {
        let ds = separable_toy();
        let op = PropagationOperator::new(ds.graph(), Normalization::Symmetric);
        let init = GprModel::init(toy_dims(), 5);
        let config = TrainConfig {
            learning_rate: 0.0,
            epochs: 5,
            ..TrainConfig::default()
        };
        let (model, _) = train_source(init.clone(), &ds, &op, &config).unwrap();
        assert_eq!(model.w1, init.w1);
        assert_eq!(model.w_cls, init.w_cls);
        assert_eq!(model.gamma, init.gamma);
        assert_eq!(model.norm_scale, init.norm_scale);
    }

    #[test]
    fn rejects_bad_config() {
        let bad = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            learning_rate: f64::NAN,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn accuracy_counts() {
        assert_eq!(accuracy(&[0, 1, 1, 0], &[0, 1, 0, 0], None).unwrap(), 0.75);
        assert_eq!(accuracy(&[0, 1], &[0, 0], Some(&[true, false])).unwrap(), 1.0);
        assert!(accuracy(&[0], &[0], Some(&[false])).is_err());
    }

    #[test]
    fn uniform_logits_pick_class_zero() {
        let pred = SoftPrediction::new(array![[0.5, 0.5], [0.5, 0.5]]).unwrap();
        assert_eq!(prediction_accuracy(&pred, &[0, 1], None).unwrap(), 0.5);
    }
}
