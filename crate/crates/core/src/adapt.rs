//! Test-time adaptation of the hop weights: each epoch asks the base routine
//! for a soft prediction, then takes one gradient step on `γ` alone.

use std::fmt;
use std::time::{Duration, Instant};

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::PropagationOperator;
use crate::losses::{grad_gamma_from_z, surrogate_loss_and_grad_z, LossKind};
use crate::model::{classify, featurize_hops, GprModel, HopCache, SoftPrediction};
use crate::pretrain::prediction_accuracy;
use crate::tta::{base_predict, BaseTta};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub loss: LossKind,
    pub base: BaseTta,
    /// Keep the entropy-tuned normalization between epochs and in the output.
    pub persist_base_tta: bool,
    /// Record per-epoch accuracy against the dataset labels. Labels never
    /// enter the update.
    pub track_accuracy: bool,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 50,
            loss: LossKind::Pic,
            base: BaseTta::Erm,
            persist_base_tta: false,
            track_accuracy: false,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "adaptation learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("adaptation epochs must be at least 1".into()));
        }
        self.base.validate()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimes {
    pub forward: Duration,
    pub loss: Duration,
    pub backward: Duration,
    pub update: Duration,
}

impl StageTimes {
    pub fn total(&self) -> Duration {
        self.forward + self.loss + self.backward + self.update
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochTrace {
    pub epoch: usize,
    pub loss: f64,
    pub grad_norm_sq: f64,
    /// `γ` at which the loss and gradient were evaluated.
    pub gamma: Array1<f64>,
    pub accuracy: Option<f64>,
    pub times: StageTimes,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdaptTrace {
    pub epochs: Vec<EpochTrace>,
    /// Featurization, aggregation and classification from scratch.
    pub initial_inference: Duration,
    pub final_accuracy: Option<f64>,
}

impl AdaptTrace {
    /// Per-epoch CSV without timings, so equal runs give equal files.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let hops = self.epochs.first().map_or(0, |e| e.gamma.len());
        let mut header = vec!["epoch".to_string(), "loss".into(), "grad_norm_sq".into(), "accuracy".into()];
        header.extend((0..hops).map(|k| format!("gamma_{k}")));
        w.write_record(&header)?;
        for e in &self.epochs {
            let mut row = vec![
                e.epoch.to_string(),
                e.loss.to_string(),
                e.grad_norm_sq.to_string(),
                e.accuracy.map(|a| a.to_string()).unwrap_or_default(),
            ];
            row.extend(e.gamma.iter().map(|g| g.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Adaptation stopped early; carries the epochs completed so far.
#[derive(Debug)]
pub struct AdaptFailure {
    pub error: Error,
    pub trace: AdaptTrace,
}

impl fmt::Display for AdaptFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (after {} epochs)", self.error, self.trace.epochs.len())
    }
}

impl std::error::Error for AdaptFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<AdaptFailure> for Error {
    fn from(f: AdaptFailure) -> Self {
        f.error
    }
}

#[derive(Debug, Clone)]
pub struct AdaptOutcome {
    pub model: GprModel,
    pub prediction: SoftPrediction,
    pub trace: AdaptTrace,
}

/// Runs the adaptation loop. The hop stack is computed once up front, so the
/// whole run makes exactly `K` forward propagations.
pub fn adapt(
    model: &GprModel,
    dataset: &Dataset,
    op: &PropagationOperator<'_>,
    config: &AdaptConfig,
) -> std::result::Result<AdaptOutcome, AdaptFailure> {
    let mut trace = AdaptTrace::default();
    let fail = |error: Error, trace: AdaptTrace| AdaptFailure { error, trace };
    if let Err(e) = config.validate() {
        return Err(fail(e, trace));
    }

    let start = Instant::now();
    let mut cache = match featurize_hops(model, dataset, op) {
        Ok(c) => c,
        Err(e) => return Err(fail(e, trace)),
    };
    let initial = cache
        .aggregate(&model.gamma)
        .map(|z| classify(z.view(), model).1);
    trace.initial_inference = start.elapsed();
    if let Err(e) = initial {
        return Err(fail(e, trace));
    }

    let mut model = model.clone();
    for epoch in 0..config.epochs {
        match step(&mut model, &mut cache, dataset, op, config, epoch) {
            Ok(record) => trace.epochs.push(record),
            Err(e) => return Err(fail(e, trace)),
        }
    }

    let prediction = match predict(&mut model, &mut cache, dataset, op, config) {
        Ok(p) => p,
        Err(e) => return Err(fail(e, trace)),
    };
    if config.track_accuracy {
        trace.final_accuracy = prediction_accuracy(&prediction, dataset.labels(), None).ok();
    }
    Ok(AdaptOutcome {
        model,
        prediction,
        trace,
    })
}

fn predict(
    model: &mut GprModel,
    cache: &mut HopCache,
    dataset: &Dataset,
    op: &PropagationOperator<'_>,
    config: &AdaptConfig,
) -> Result<SoftPrediction> {
    let out = base_predict(&config.base, model, cache)?;
    if config.persist_base_tta {
        if let Some((scale, shift)) = out.adapted_norm {
            model.norm_scale = scale;
            model.norm_shift = shift;
            cache.reaffine(model, dataset, op);
        }
    }
    Ok(out.prediction)
}

fn step(
    model: &mut GprModel,
    cache: &mut HopCache,
    dataset: &Dataset,
    op: &PropagationOperator<'_>,
    config: &AdaptConfig,
    epoch: usize,
) -> Result<EpochTrace> {
    let mut times = StageTimes::default();

    let t = Instant::now();
    let prediction = predict(model, cache, dataset, op, config)?;
    let z = cache.aggregate(&model.gamma)?;
    times.forward = t.elapsed();

    let t = Instant::now();
    let (loss, dz) = surrogate_loss_and_grad_z(config.loss, z.view(), model, &prediction)?;
    times.loss = t.elapsed();

    let t = Instant::now();
    let grad = grad_gamma_from_z(cache, &dz);
    times.backward = t.elapsed();
    let grad_norm_sq = grad.dot(&grad);
    if !loss.is_finite() || !grad_norm_sq.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite adaptation loss or gradient at epoch {epoch} (loss {loss})"
        )));
    }

    let gamma = model.gamma.clone();
    let t = Instant::now();
    model.gamma.scaled_add(-config.learning_rate, &grad);
    times.update = t.elapsed();

    let accuracy = if config.track_accuracy {
        Some(prediction_accuracy(&prediction, dataset.labels(), None)?)
    } else {
        None
    };
    Ok(EpochTrace {
        epoch,
        loss,
        grad_norm_sq,
        gamma,
        accuracy,
        times,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    /// `(1/T) Σₜ ‖∇γ L(γ⁽ᵗ⁾)‖²`.
    pub mean_grad_norm_sq: f64,
    pub losses: Vec<f64>,
    /// Whether the running mean of squared gradient norms at the last epoch
    /// is no larger than at the midpoint of the run.
    pub running_mean_decreasing: bool,
}

pub fn convergence_report(trace: &AdaptTrace) -> Result<ConvergenceReport> {
    let norms: Vec<f64> = trace.epochs.iter().map(|e| e.grad_norm_sq).collect();
    if norms.is_empty() {
        return Err(Error::InvalidParameter("convergence report of an empty trace".into()));
    }
    let mut running = Vec::with_capacity(norms.len());
    let mut sum = 0.0;
    for (t, g) in norms.iter().enumerate() {
        sum += g;
        running.push(sum / (t + 1) as f64);
    }
    let mid = (running.len() - 1) / 2;
    let last = running[running.len() - 1];
    Ok(ConvergenceReport {
        mean_grad_norm_sq: last,
        losses: trace.epochs.iter().map(|e| e.loss).collect(),
        running_mean_decreasing: last <= running[mid],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(epoch: usize, loss: f64, grad_norm_sq: f64) -> EpochTrace {
        EpochTrace {
            epoch,
            loss,
            grad_norm_sq,
            gamma: Array1::zeros(2),
            accuracy: None,
            times: StageTimes::default(),
        }
    }

    #[test]
    fn constant_trace_has_zero_mean_norm() {
        let trace = AdaptTrace {
            epochs: (0..6).map(|t| record(t, 0.3, 0.0)).collect(),
            ..AdaptTrace::default()
        };
        let r = convergence_report(&trace).unwrap();
        assert_eq!(r.mean_grad_norm_sq, 0.0);
        assert!(r.running_mean_decreasing);
        assert_eq!(r.losses, vec![0.3; 6]);
    }

    #[test]
    fn growing_norms_flagged() {
        let trace = AdaptTrace {
            epochs: (0..8).map(|t| record(t, 1.0, 10f64.powi(t as i32))).collect(),
            ..AdaptTrace::default()
        };
        assert!(!convergence_report(&trace).unwrap().running_mean_decreasing);
    }

    #[test]
    fn empty_trace_rejected() {
        assert!(convergence_report(&AdaptTrace::default()).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(AdaptConfig::default().validate().is_ok());
        let bad = AdaptConfig {
            epochs: 0,
            ..AdaptConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
