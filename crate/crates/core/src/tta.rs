//! Base test-time adaptation routines that produce the soft prediction the
//! hop-weight update clusters around.

use std::fmt;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::entropy_and_logit_grad;
use crate::model::{aggregate_stack, classify, logits, GprModel, HopCache, SoftPrediction};
use crate::util::{argmax_rows, row_entropy, softmax_rows};

/// Backtracking halvings tried before an entropy step is abandoned.
const TENT_MAX_HALVINGS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BaseTta {
    /// The source model's own prediction.
    Erm,
    /// Entropy minimization over the normalization scale and shift.
    Tent { steps: usize, lr: f64 },
    /// Nearest-prototype classification with prototypes built from the
    /// most confident nodes of each class.
    T3a { keep_per_class: usize },
}

impl Default for BaseTta {
    fn default() -> Self {
        BaseTta::Erm
    }
}

impl fmt::Display for BaseTta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaseTta::Erm => f.write_str("erm"),
            BaseTta::Tent { steps, lr } => write!(f, "tent(steps={steps},lr={lr})"),
            BaseTta::T3a { keep_per_class } => write!(f, "t3a(keep={keep_per_class})"),
        }
    }
}

impl BaseTta {
    pub fn name(&self) -> &'static str {
        match self {
            BaseTta::Erm => "erm",
            BaseTta::Tent { .. } => "tent",
            BaseTta::T3a { .. } => "t3a",
        }
    }

    /// Parses `erm`, `tent` or `t3a` with the given variant options.
    pub fn parse(name: &str, tent_steps: usize, tent_lr: f64, t3a_keep: usize) -> Result<Self> {
        let kind = match name {
            "erm" => BaseTta::Erm,
            "tent" => BaseTta::Tent {
                steps: tent_steps,
                lr: tent_lr,
            },
            "t3a" => BaseTta::T3a {
                keep_per_class: t3a_keep,
            },
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown base TTA `{other}` (expected erm|tent|t3a)"
                )))
            }
        };
        kind.validate()?;
        Ok(kind)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            BaseTta::Erm => Ok(()),
            BaseTta::Tent { lr, .. } if !(lr > 0.0) => {
                Err(Error::InvalidParameter(format!("tent learning rate {lr} must be positive")))
            }
            BaseTta::T3a { keep_per_class: 0 } => {
                Err(Error::InvalidParameter("t3a keep_per_class must be at least 1".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TtaOutput {
    pub prediction: SoftPrediction,
    /// Normalization `(scale, shift)` found by entropy minimization.
    pub adapted_norm: Option<(Array1<f64>, Array1<f64>)>,
    /// Mean prediction entropy after each accepted entropy step.
    pub entropy_trace: Vec<f64>,
}

/// Runs the base routine on a fresh cache. Never modifies the model.
pub fn base_predict(kind: &BaseTta, model: &GprModel, cache: &HopCache) -> Result<TtaOutput> {
    match *kind {
        BaseTta::Erm => {
            let z = cache.aggregate(&model.gamma)?;
            Ok(TtaOutput {
                prediction: classify(z.view(), model).1,
                adapted_norm: None,
                entropy_trace: Vec::new(),
            })
        }
        BaseTta::Tent { steps, lr } => tent(model, cache, steps, lr),
        BaseTta::T3a { keep_per_class } => {
            let z = cache.aggregate(&model.gamma)?;
            Ok(TtaOutput {
                prediction: t3a(model, &z, keep_per_class)?,
                adapted_norm: None,
                entropy_trace: Vec::new(),
            })
        }
    }
}

/// Entropy minimization over the normalization affine parameters.
///
/// With `X̂ₖ = Ãᵏ·X̂` and `oₖ = Ãᵏ·1` cached, the representation under a
/// candidate `(s, t)` is `Z = (Σₖ γₖ X̂ₖ)·diag(s) + (Σₖ γₖ oₖ)·tᵀ`, so each
/// step costs one dense pass and no propagation.
fn tent(model: &GprModel, cache: &HopCache, steps: usize, lr: f64) -> Result<TtaOutput> {
    let z_base = aggregate_stack(&cache.base_hops, &model.gamma)?;
    let ones: Array1<f64> = cache
        .ones_hops
        .iter()
        .zip(&model.gamma)
        .fold(Array1::zeros(cache.num_nodes()), |acc, (o, &g)| acc + o * g);

    let compose = |scale: &Array1<f64>, shift: &Array1<f64>| -> Array2<f64> {
        let mut z = &z_base * &scale.view().insert_axis(Axis(0));
        for (mut row, &o) in z.rows_mut().into_iter().zip(&ones) {
            row.scaled_add(o, shift);
        }
        z
    };

    let mut scale = model.norm_scale.clone();
    let mut shift = model.norm_shift.clone();
    let mut z = compose(&scale, &shift);
    let (mut entropy, mut dlogits) = entropy_and_logit_grad(logits(z.view(), model).view());
    let mut trace = Vec::with_capacity(steps);

    for _ in 0..steps {
        let dz = dlogits.dot(&model.w_cls.t());
        let g_scale = (&dz * &z_base).sum_axis(Axis(0));
        let g_shift = dz.t().dot(&ones);

        let mut step = lr;
        let mut accepted = None;
        for _ in 0..=TENT_MAX_HALVINGS {
            let cand_scale = &scale - &(&g_scale * step);
            let cand_shift = &shift - &(&g_shift * step);
            let cand_z = compose(&cand_scale, &cand_shift);
            let (e, d) = entropy_and_logit_grad(logits(cand_z.view(), model).view());
            if e < entropy {
                accepted = Some((cand_scale, cand_shift, cand_z, e, d));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((s, t, zz, e, d)) => {
                scale = s;
                shift = t;
                z = zz;
                entropy = e;
                dlogits = d;
                trace.push(e);
            }
            None => break,
        }
    }

    Ok(TtaOutput {
        prediction: classify(z.view(), model).1,
        adapted_norm: Some((scale, shift)),
        entropy_trace: trace,
    })
}

/// Per-class prototypes from the `keep` lowest-entropy nodes predicted as
/// that class; a class with no such nodes falls back to its classifier
/// weight column. Scores are negative squared distances to each prototype.
fn t3a(model: &GprModel, z: &Array2<f64>, keep: usize) -> Result<SoftPrediction> {
    let (_, pred) = classify(z.view(), model);
    let entropy = row_entropy(pred.probs().view());
    let assigned = argmax_rows(pred.probs().view());
    let c = model.dims().classes;
    let prototypes = prototypes_from_support(z, &assigned, &entropy, c, keep, &model.w_cls);

    let mut scores = Array2::zeros((z.nrows(), c));
    for (i, zi) in z.rows().into_iter().enumerate() {
        for (k, proto) in prototypes.rows().into_iter().enumerate() {
            scores[[i, k]] = -zi.iter().zip(&proto).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
    }
    SoftPrediction::new(softmax_rows(scores.view()))
}

pub(crate) fn prototypes_from_support(
    z: &Array2<f64>,
    assigned: &[usize],
    entropy: &Array1<f64>,
    classes: usize,
    keep: usize,
    w_cls: &Array2<f64>,
) -> Array2<f64> {
    let mut prototypes = Array2::zeros((classes, z.ncols()));
    for c in 0..classes {
        let mut members: Vec<usize> = (0..z.nrows()).filter(|&i| assigned[i] == c).collect();
        members.sort_by(|&a, &b| entropy[a].total_cmp(&entropy[b]).then(a.cmp(&b)));
        members.truncate(keep);
        let mut row = prototypes.row_mut(c);
        if members.is_empty() {
            row.assign(&w_cls.column(c));
        } else {
            for &i in &members {
                row += &z.row(i);
            }
            row /= members.len() as f64;
        }
    }
    prototypes
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn parse_variants() {
        assert_eq!(BaseTta::parse("erm", 1, 0.1, 5).unwrap(), BaseTta::Erm);
        assert!(matches!(BaseTta::parse("tent", 3, 0.1, 5).unwrap(), BaseTta::Tent { steps: 3, .. }));
        assert!(BaseTta::parse("t3a", 1, 0.1, 0).is_err());
        assert!(BaseTta::parse("tent", 1, 0.0, 1).is_err());
        assert!(BaseTta::parse("soga", 1, 0.1, 1).is_err());
    }

    #[test]
    fn empty_class_uses_classifier_column() {
        let z = array![[1.0, 0.0], [2.0, 0.0]];
        let w = array![[0.3, -0.7], [0.1, 0.9]];
        let protos = prototypes_from_support(&z, &[0, 0], &array![0.1, 0.2], 2, 5, &w);
        assert_eq!(protos.row(0), array![1.5, 0.0]);
        assert_eq!(protos.row(1), w.column(1));
    }

    #[test]
    fn support_keeps_lowest_entropy() {
        let z = array![[0.0], [10.0], [20.0]];
        let protos = prototypes_from_support(&z, &[0, 0, 0], &array![0.5, 0.1, 0.2], 1, 2, &array![[0.0]]);
        assert_eq!(protos[[0, 0]], 15.0);
    }
}
