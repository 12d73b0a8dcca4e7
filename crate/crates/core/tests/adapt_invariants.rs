mod common;

use adarc::adapt::{adapt, convergence_report, AdaptConfig};
use adarc::graph::{Normalization, PropagationOperator};
use adarc::losses::{surrogate_loss_and_grad_gamma, LossKind};
use adarc::model::{classify, featurize_hops, GprModel};
use adarc::pretrain::{train_source, TrainConfig};
use adarc::tta::BaseTta;
use adarc::Dataset;
use common::*;

/// A model trained on a homophilic graph, and a heterophilic target.
fn shifted_pair() -> (GprModel, Dataset) {
    let source = small_dataset(21, 120, 0.9);
    let target = small_dataset(22, 120, 0.1);
    let op = PropagationOperator::new(source.graph(), Normalization::Symmetric);
    let config = TrainConfig {
        learning_rate: 0.2,
        epochs: 150,
        ..TrainConfig::default()
    };
    let (model, _) = train_source(small_model(&source, 4, 3), &source, &op, &config).unwrap();
    (model, target)
}

fn config(lr: f64, epochs: usize) -> AdaptConfig {
    AdaptConfig {
        learning_rate: lr,
        epochs,
        ..AdaptConfig::default()
    }
}

#[test]
fn whole_run_propagates_exactly_k_times() {
    let (model, target) = shifted_pair();
    for (base, persist) in [
        (BaseTta::Erm, false),
        (BaseTta::Tent { steps: 3, lr: 0.1 }, true),
        (BaseTta::T3a { keep_per_class: 5 }, false),
    ] {
        let op = PropagationOperator::new(target.graph(), Normalization::Symmetric);
        let cfg = AdaptConfig {
            base,
            persist_base_tta: persist,
            ..config(0.5, 20)
        };
        adapt(&model, &target, &op, &cfg).unwrap();
        assert_eq!(op.forward_calls(), model.hops(), "{base}");
        assert_eq!(op.adjoint_calls(), 0);
    }
}

#[test]
fn only_hop_weights_change() {
    let (model, target) = shifted_pair();
    let op = PropagationOperator::new(target.graph(), Normalization::Symmetric);
    let out = adapt(&model, &target, &op, &config(0.5, 10)).unwrap();
    let mut expected = model.clone();
    expected.gamma = out.model.gamma.clone();
    assert_eq!(out.model, expected);
    assert_ne!(out.model.gamma, model.gamma);
}

#[test]
fn persisted_tent_touches_only_normalization_and_gamma() {
    let (model, target) = shifted_pair();
    let op = PropagationOperator::new(target.graph(), Normalization::Symmetric);
    let cfg = AdaptConfig {
        base: BaseTta::Tent { steps: 3, lr: 0.5 },
        persist_base_tta: true,
        ..config(0.5, 5)
    };
    let out = adapt(&model, &target, &op, &cfg).unwrap();
    assert_eq!(out.model.w1, model.w1);
    assert_eq!(out.model.w_cls, model.w_cls);
    assert_eq!(out.model.b_cls, model.b_cls);
    assert_ne!(out.model.norm_scale, model.norm_scale);
}

#[test]
fn zero_rate_is_the_source_prediction() {
    let (model, target) = shifted_pair();
    let op = PropagationOperator::new(target.graph(), Normalization::Symmetric);
    let out = adapt(&model, &target, &op, &config(0.0, 5)).unwrap();
    assert_eq!(out.model.gamma, model.gamma);
    let cache = featurize_hops(&model, &target, &op).unwrap();
    let z = cache.aggregate(&model.gamma).unwrap();
    assert_eq!(out.prediction, classify(z.view(), &model).1);
}

#[test]
fn single_epoch_is_one_gradient_step() {
    let (model, target) = shifted_pair();
    let op = PropagationOperator::new(target.graph(), Normalization::Symmetric);
    let cache = featurize_hops(&model, &target, &op).unwrap();
    let z = cache.aggregate(&model.gamma).unwrap();
    let (_, pred) = classify(z.view(), &model);
    for kind in LossKind::ALL {
        let (loss, grad) = surrogate_loss_and_grad_gamma(kind, &model, &cache, &pred).unwrap();
        let eta = 0.3;
        let out = adapt(&model, &target, &op, &AdaptConfig { loss: kind, ..config(eta, 1) }).unwrap();
        let expected = &model.gamma - &(&grad * eta);
        for (a, b) in out.model.gamma.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12, "{kind:?}");
        }
        let record = &out.trace.epochs[0];
        assert_eq!(record.loss, loss);
        assert_eq!(record.gamma, model.gamma);
        assert!((record.grad_norm_sq - grad.dot(&grad)).abs() <= 1e-12 * record.grad_norm_sq.max(1.0));
    }
}

#[test]
fn pic_loss_decreases_over_a_run() {
    let (model, target) = shifted_pair();
    let op = PropagationOperator::new(target.graph(), Normalization::Symmetric);
    // Long enough to leave the flat start, where gradient norms first grow.
    let cfg = AdaptConfig {
        track_accuracy: true,
        ..config(0.5, 200)
    };
    let out = adapt(&model, &target, &op, &cfg).unwrap();
    let report = convergence_report(&out.trace).unwrap();
    assert!(report.losses.last().unwrap() < report.losses.first().unwrap());
    assert!(report.running_mean_decreasing);
    assert!(out.trace.epochs.iter().all(|e| e.accuracy.is_some()));
    assert!(out.trace.final_accuracy.is_some());
}

#[test]
fn runs_are_reproducible() {
    let (model, target) = shifted_pair();
    let op = PropagationOperator::new(target.graph(), Normalization::Symmetric);
    let csv = |cfg: &AdaptConfig| {
        let out = adapt(&model, &target, &op, cfg).unwrap();
        let mut buf = Vec::new();
        out.trace.write_csv(&mut buf).unwrap();
        (buf, out.prediction)
    };
    let cfg = AdaptConfig {
        base: BaseTta::Tent { steps: 2, lr: 0.1 },
        track_accuracy: true,
        ..config(0.5, 8)
    };
    assert_eq!(csv(&cfg), csv(&cfg));
}

#[test]
fn divergence_returns_partial_trace() {
    let (model, target) = shifted_pair();
    let op = PropagationOperator::new(target.graph(), Normalization::Symmetric);
    let cfg = AdaptConfig {
        loss: LossKind::Diff,
        ..config(1e6, 500)
    };
    let failure = adapt(&model, &target, &op, &cfg).unwrap_err();
    assert!(failure.error.is_numerical(), "{failure}");
    assert!(failure.trace.epochs.len() < 500);
}

#[test]
fn invalid_config_rejected_before_work() {
    let (model, target) = shifted_pair();
    let op = PropagationOperator::new(target.graph(), Normalization::Symmetric);
    let failure = adapt(&model, &target, &op, &config(-1.0, 5)).unwrap_err();
    assert!(!failure.error.is_numerical());
    assert_eq!(op.forward_calls(), 0);
}

