mod common;

use adarc::graph::{Normalization, PropagationOperator};
use adarc::losses::{pic_grad_logits, pic_loss, LossKind};
use adarc::model::{backward_ce, backward_from_logits, featurize_hops, Gradients, GprModel};
use adarc::util::softmax_rows;
use adarc::SoftPrediction;
use common::*;
use ndarray::{Array1, Array2};

const TOL: f64 = 1e-4;
/// Batch statistics make the pre-normalization bias gradient exactly zero;
/// finite differences then return round-off, so norms are floored here.
const PARAM_FLOOR: f64 = 1e-6;

#[test]
fn surrogate_gradients_match_finite_differences() {
    for kind in LossKind::ALL {
        for seed in 0..15 {
            let (ez, eg) = gradient_check(kind, 1000 + seed);
            assert!(ez < TOL, "{kind:?} seed {seed}: dZ relative error {ez:e}");
            assert!(eg < TOL, "{kind:?} seed {seed}: dgamma relative error {eg:e}");
        }
    }
}

#[test]
fn pic_logit_gradient_matches_finite_differences() {
    let mut r = rng(7);
    for _ in 0..20 {
        let (z, pred) = random_instance(&mut r, false);
        let a = random_matrix(&mut r, z.nrows(), pred.num_classes(), 2.0);
        let (_, grad) = pic_grad_logits(z.view(), a.view()).unwrap();
        let fd = fd_gradient(&a, 1e-5, |aa| {
            let p = SoftPrediction::new(softmax_rows(aa.view())).unwrap();
            pic_loss(z.view(), &p).unwrap().loss
        });
        let err = relative_error(&grad, &fd, 1e-8);
        assert!(err < TOL, "relative error {err:e}");
    }
}

fn perturbed_loss(model: &GprModel, ds: &adarc::Dataset, op: &PropagationOperator<'_>, mask: &[bool]) -> f64 {
    let cache = featurize_hops(model, ds, op).unwrap();
    backward_ce(model, ds, op, &cache, mask).unwrap().0
}

fn check_param(
    name: &str,
    analytic: &Array2<f64>,
    model: &GprModel,
    set: impl Fn(&mut GprModel, &Array2<f64>),
    get: impl Fn(&GprModel) -> Array2<f64>,
    loss: impl Fn(&GprModel) -> f64,
) {
    let mut probe = model.clone();
    let fd = fd_gradient(&get(model), 1e-5, |x| {
        set(&mut probe, x);
        loss(&probe)
    });
    let err = relative_error(analytic, &fd, PARAM_FLOOR);
    assert!(err < TOL, "{name}: relative error {err:e}");
}

fn col(v: &Array1<f64>) -> Array2<f64> {
    v.clone().insert_axis(ndarray::Axis(1))
}

fn check_all(model: &GprModel, grads: &Gradients, loss: impl Fn(&GprModel) -> f64) {
    check_param("w1", &grads.w1, model, |m, x| m.w1.assign(x), |m| m.w1.clone(), &loss);
    check_param("w_cls", &grads.w_cls, model, |m, x| m.w_cls.assign(x), |m| m.w_cls.clone(), &loss);
    let vectors: [(&str, &Array1<f64>, fn(&mut GprModel) -> &mut Array1<f64>); 5] = [
        ("b1", &grads.b1, |m| &mut m.b1),
        ("norm_scale", &grads.norm_scale, |m| &mut m.norm_scale),
        ("norm_shift", &grads.norm_shift, |m| &mut m.norm_shift),
        ("gamma", &grads.gamma, |m| &mut m.gamma),
        ("b_cls", &grads.b_cls, |m| &mut m.b_cls),
    ];
    for (name, analytic, field) in vectors {
        let mut probe = model.clone();
        let fd = fd_gradient(&col(field(&mut model.clone())), 1e-5, |x| {
            field(&mut probe).assign(&x.column(0));
            loss(&probe)
        });
        let err = relative_error(analytic, &fd, PARAM_FLOOR);
        assert!(err < TOL, "{name}: relative error {err:e}");
    }
}

#[test]
fn cross_entropy_backward_matches_finite_differences() {
    for (seed, frozen) in [(1, false), (2, true), (3, false)] {
        let ds = small_dataset(seed, 30, 0.7);
        let mut model = small_model(&ds, 3, seed);
        model.norm_shift.fill(0.1);
        model.norm_scale.fill(1.3);
        model.norm_mean.fill(0.2);
        model.norm_var.fill(0.7);
        model.freeze_norm_stats = frozen;
        let op = PropagationOperator::new(ds.graph(), Normalization::Symmetric);
        let mask = ds.mask("train").unwrap().to_vec();
        let cache = featurize_hops(&model, &ds, &op).unwrap();
        let (_, grads) = backward_ce(&model, &ds, &op, &cache, &mask).unwrap();
        check_all(&model, &grads, |m| perturbed_loss(m, &ds, &op, &mask));
    }
}

#[test]
fn arbitrary_logit_gradient_backpropagates() {
    // Linear functional ⟨G, logits⟩ has logit gradient G.
    let ds = small_dataset(11, 26, 0.3);
    let model = small_model(&ds, 2, 4);
    let op = PropagationOperator::new(ds.graph(), Normalization::Row);
    let g = random_matrix(&mut rng(5), ds.num_nodes(), ds.num_classes(), 1.0);
    let cache = featurize_hops(&model, &ds, &op).unwrap();
    let grads = backward_from_logits(&model, &ds, &op, &cache, g.view()).unwrap();
    let loss = |m: &GprModel| {
        let cache = featurize_hops(m, &ds, &op).unwrap();
        let z = cache.aggregate(&m.gamma).unwrap();
        (adarc::model::logits(z.view(), m) * &g).sum()
    };
    check_all(&model, &grads, loss);
}
