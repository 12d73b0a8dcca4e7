//! Unsupervised surrogate losses over representations `Z` (N×H) and a soft
//! prediction `Ŷ` (N×C).
//!
//! The prediction-informed clustering (PIC) loss is `σ²_intra / σ²` with
//!
//! ```text
//! μ_c       = Σᵢ Ŷᵢc zᵢ / Σᵢ Ŷᵢc          μ_* = mean(zᵢ)
//! σ²_intra  = Σᵢ Σ_c Ŷᵢc ‖zᵢ − μ_c‖²
//! σ²_inter  = Σ_c (Σᵢ Ŷᵢc) ‖μ_c − μ_*‖²
//! σ²        = Σᵢ ‖zᵢ − μ_*‖² = σ²_intra + σ²_inter
//! ```
//!
//! `Ŷ` is a constant in every gradient here. The derivative of `σ²_intra`
//! with respect to each weighted centroid `μ_c` is zero, so the analytic
//! gradients hold centroids fixed and still equal the full derivative.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{classify, GprModel, HopCache, SoftPrediction};
use crate::util::{argmax_rows, softmax_rows};

/// Relative variance floor: `σ² < DEGENERATE_EPS · N · H` is rejected.
pub const DEGENERATE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PicBreakdown {
    pub loss: f64,
    pub sigma_intra_sq: f64,
    pub sigma_inter_sq: f64,
    /// `Σᵢ ‖zᵢ − μ_*‖²`, computed directly.
    pub sigma_sq: f64,
    /// One row per class; rows of classes with zero mass are zero.
    pub centroids: Array2<f64>,
    pub class_mass: Array1<f64>,
    pub global_centroid: Array1<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Pic,
    Entropy,
    Pseudo,
    /// `σ²_intra − σ²_inter`
    Diff,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::Pic, LossKind::Entropy, LossKind::Pseudo, LossKind::Diff];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Pic => "pic",
            LossKind::Entropy => "entropy",
            LossKind::Pseudo => "pseudo",
            LossKind::Diff => "diff",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown loss `{s}` (expected pic|entropy|pseudo|diff)")))
    }
}

fn check_shapes(z: &ArrayView2<'_, f64>, probs: &Array2<f64>) -> Result<()> {
    if z.nrows() != probs.nrows() {
        return Err(Error::DimensionMismatch {
            context: "representation rows vs prediction rows",
            expected: z.nrows(),
            actual: probs.nrows(),
        });
    }
    if z.nrows() == 0 {
        return Err(Error::InvalidParameter("empty representation matrix".into()));
    }
    Ok(())
}

/// Weighted centroids, per-class mass and the global centroid.
fn centroids(z: &ArrayView2<'_, f64>, probs: &Array2<f64>) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let mass = probs.sum_axis(Axis(0));
    let mut cent = probs.t().dot(z);
    for (mut row, &m) in cent.rows_mut().into_iter().zip(&mass) {
        if m > 0.0 {
            row /= m;
        } else {
            row.fill(0.0);
        }
    }
    let global = z.mean_axis(Axis(0)).expect("nonempty");
    (cent, mass, global)
}

pub fn pic_loss(z: ArrayView2<'_, f64>, prediction: &SoftPrediction) -> Result<PicBreakdown> {
    let probs = prediction.probs();
    check_shapes(&z, probs)?;
    let (n, h) = z.dim();
    let (cent, mass, global) = centroids(&z, probs);

    let mut intra = 0.0;
    let mut total = 0.0;
    for (i, zi) in z.rows().into_iter().enumerate() {
        total += zi.iter().zip(&global).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        for (c, mu) in cent.rows().into_iter().enumerate() {
            let w = probs[[i, c]];
            if w == 0.0 || mass[c] <= 0.0 {
                continue;
            }
            intra += w * zi.iter().zip(&mu).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
    }
    let inter: f64 = cent
        .rows()
        .into_iter()
        .zip(&mass)
        .filter(|(_, &m)| m > 0.0)
        .map(|(mu, &m)| m * mu.iter().zip(&global).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .sum();

    let threshold = DEGENERATE_EPS * (n * h) as f64;
    if !(total >= threshold) {
        return Err(Error::DegenerateRepresentation {
            variance: total,
            threshold,
        });
    }
    Ok(PicBreakdown {
        loss: intra / (intra + inter),
        sigma_intra_sq: intra,
        sigma_inter_sq: inter,
        sigma_sq: total,
        centroids: cent,
        class_mass: mass,
        global_centroid: global,
    })
}

/// `mᵢ = Σ_c Ŷᵢc μ_c`: each node's prediction-weighted centroid.
fn weighted_centroid_rows(probs: &Array2<f64>, breakdown: &PicBreakdown) -> Array2<f64> {
    probs.dot(&breakdown.centroids)
}

/// `∂σ²_intra/∂zᵢ = 2(zᵢ − mᵢ)` and `∂σ²_inter/∂zᵢ = 2(mᵢ − μ_*)`.
fn variance_grads(
    z: &ArrayView2<'_, f64>,
    probs: &Array2<f64>,
    breakdown: &PicBreakdown,
) -> (Array2<f64>, Array2<f64>) {
    let m = weighted_centroid_rows(probs, breakdown);
    let d_intra = (z - &m) * 2.0;
    let d_inter = (m - &breakdown.global_centroid.view().insert_axis(Axis(0))) * 2.0;
    (d_intra, d_inter)
}

/// `∂L_PIC/∂Z` with `Ŷ` held fixed.
pub fn pic_grad_z(z: ArrayView2<'_, f64>, prediction: &SoftPrediction) -> Result<Array2<f64>> {
    let b = pic_loss(z, prediction)?;
    Ok(pic_grad_from_breakdown(&z, prediction.probs(), &b))
}

fn pic_grad_from_breakdown(z: &ArrayView2<'_, f64>, probs: &Array2<f64>, b: &PicBreakdown) -> Array2<f64> {
    let (d_intra, d_inter) = variance_grads(z, probs, b);
    let denom = b.sigma_intra_sq + b.sigma_inter_sq;
    (d_intra * (1.0 - b.loss) - d_inter * b.loss) / denom
}

/// `σ²_intra − σ²_inter` and its gradient in `Z`.
pub fn diff_loss_and_grad_z(z: ArrayView2<'_, f64>, prediction: &SoftPrediction) -> Result<(f64, Array2<f64>)> {
    let b = pic_loss(z, prediction)?;
    let (d_intra, d_inter) = variance_grads(&z, prediction.probs(), &b);
    Ok((b.sigma_intra_sq - b.sigma_inter_sq, d_intra - d_inter))
}

/// Gradient of the PIC loss with respect to the logits `a` of a
/// softmax-linear base predictor, `Ŷ = softmax(a)`, holding the
/// representations `z` fed to the loss fixed:
///
/// `∂ℓ/∂aᵢc = Ŷᵢc (‖zᵢ − μ_c‖² − Σ_c' Ŷᵢc' ‖zᵢ − μ_c'‖²) / σ²`.
///
/// Its Euclidean norm never exceeds `2·σ²_intra/σ² ≤ 2`.
pub fn pic_grad_logits(z: ArrayView2<'_, f64>, logits: ArrayView2<'_, f64>) -> Result<(PicBreakdown, Array2<f64>)> {
    let probs = softmax_rows(logits);
    let prediction = SoftPrediction::new(probs.clone())?;
    let b = pic_loss(z, &prediction)?;
    let denom = b.sigma_intra_sq + b.sigma_inter_sq;
    let c = probs.ncols();
    let mut grad = Array2::zeros(probs.raw_dim());
    for (i, zi) in z.rows().into_iter().enumerate() {
        let dist: Vec<f64> = b
            .centroids
            .rows()
            .into_iter()
            .map(|mu| zi.iter().zip(&mu).map(|(a, m)| (a - m).powi(2)).sum())
            .collect();
        let expected: f64 = (0..c).map(|k| probs[[i, k]] * dist[k]).sum();
        for k in 0..c {
            grad[[i, k]] = probs[[i, k]] * (dist[k] - expected) / denom;
        }
    }
    Ok((b, grad))
}

/// Mean prediction entropy of `softmax(logits)` and its logit gradient.
pub fn entropy_and_logit_grad(logits: ArrayView2<'_, f64>) -> (f64, Array2<f64>) {
    let probs = softmax_rows(logits);
    let n = probs.nrows() as f64;
    let mut total = 0.0;
    let mut grad = Array2::zeros(probs.raw_dim());
    for (i, row) in probs.rows().into_iter().enumerate() {
        let logs: Vec<f64> = row.iter().map(|&p| if p > 0.0 { p.ln() } else { 0.0 }).collect();
        let h: f64 = -row.iter().zip(&logs).map(|(p, l)| p * l).sum::<f64>();
        total += h;
        for (c, (&p, &l)) in row.iter().zip(&logs).enumerate() {
            grad[[i, c]] = -p * (l + h) / n;
        }
    }
    (total / n, grad)
}

/// Mean cross-entropy of `softmax(logits)` against the argmax of `targets`.
pub fn pseudo_label_and_logit_grad(logits: ArrayView2<'_, f64>, targets: &SoftPrediction) -> (f64, Array2<f64>) {
    let labels = argmax_rows(targets.probs().view());
    let mut grad = softmax_rows(logits);
    let n = grad.nrows() as f64;
    let mut loss = 0.0;
    for (i, mut row) in grad.rows_mut().into_iter().enumerate() {
        let y = labels[i];
        loss -= row[y].max(f64::MIN_POSITIVE).ln();
        row[y] -= 1.0;
        row /= n;
    }
    (loss / n, grad)
}

/// Surrogate loss and its gradient with respect to the aggregated
/// representation `Z`.
pub fn surrogate_loss_and_grad_z(
    kind: LossKind,
    z: ArrayView2<'_, f64>,
    model: &GprModel,
    prediction: &SoftPrediction,
) -> Result<(f64, Array2<f64>)> {
    match kind {
        LossKind::Pic => {
            let b = pic_loss(z, prediction)?;
            let g = pic_grad_from_breakdown(&z, prediction.probs(), &b);
            Ok((b.loss, g))
        }
        LossKind::Diff => diff_loss_and_grad_z(z, prediction),
        LossKind::Entropy => {
            let (a, _) = classify(z, model);
            let (loss, da) = entropy_and_logit_grad(a.view());
            Ok((loss, da.dot(&model.w_cls.t())))
        }
        LossKind::Pseudo => {
            let (a, _) = classify(z, model);
            let (loss, da) = pseudo_label_and_logit_grad(a.view(), prediction);
            Ok((loss, da.dot(&model.w_cls.t())))
        }
    }
}

/// Projects a representation gradient onto the hop weights:
/// `∂L/∂γₖ = ⟨H⁽ᵏ⁾, ∂L/∂Z⟩`.
pub fn grad_gamma_from_z(cache: &HopCache, dz: &Array2<f64>) -> Array1<f64> {
    cache.hops.iter().map(|h| (h * dz).sum()).collect()
}

/// Surrogate loss at `Z = Σₖ γₖ H⁽ᵏ⁾` (with the model's current `γ`) and
/// its gradient in `γ`.
pub fn surrogate_loss_and_grad_gamma(
    kind: LossKind,
    model: &GprModel,
    cache: &HopCache,
    prediction: &SoftPrediction,
) -> Result<(f64, Array1<f64>)> {
    let z = cache.aggregate(&model.gamma)?;
    let (loss, dz) = surrogate_loss_and_grad_z(kind, z.view(), model, prediction)?;
    Ok((loss, grad_gamma_from_z(cache, &dz)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn hard(labels: &[usize], c: usize) -> SoftPrediction {
        SoftPrediction::one_hot(labels, c)
    }

    #[test]
    fn hand_example() {
        let z = array![[0.0], [1.0], [3.0], [4.0]];
        let b = pic_loss(z.view(), &hard(&[0, 0, 1, 1], 2)).unwrap();
        assert!((b.sigma_intra_sq - 1.0).abs() < 1e-15);
        assert!((b.sigma_inter_sq - 9.0).abs() < 1e-15);
        assert!((b.sigma_sq - 10.0).abs() < 1e-15);
        assert!((b.loss - 0.1).abs() < 1e-15);
    }

    #[test]
    fn nodes_on_centroids_zero_loss() {
        let z = array![[1.0, 2.0], [1.0, 2.0], [-3.0, 0.5]];
        let b = pic_loss(z.view(), &hard(&[0, 0, 1], 2)).unwrap();
        assert_eq!(b.loss, 0.0);
    }

    #[test]
    fn single_cluster_loss_one() {
        let z = array![[1.0, 2.0], [0.0, 2.0], [-3.0, 0.5]];
        let b = pic_loss(z.view(), &hard(&[1, 1, 1], 3)).unwrap();
        assert_eq!(b.loss, 1.0);
        assert!(b.sigma_inter_sq.abs() < 1e-12);
        // empty classes contribute nothing
        assert_eq!(b.class_mass[0], 0.0);
    }

    #[test]
    fn degenerate_rejected() {
        let z = Array2::from_elem((4, 2), 3.0);
        let err = pic_loss(z.view(), &hard(&[0, 1, 0, 1], 2)).unwrap_err();
        assert!(matches!(err, Error::DegenerateRepresentation { .. }));
    }

    #[test]
    fn mirror_symmetry_of_gradient() {
        let z = array![[1.0, 0.5], [2.0, -0.5], [-1.0, -0.5], [-2.0, 0.5]];
        let g = pic_grad_z(z.view(), &hard(&[0, 0, 1, 1], 2)).unwrap();
        for (i, j) in [(0, 2), (1, 3)] {
            for col in 0..2 {
                assert!((g[[i, col]] + g[[j, col]]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn entropy_of_uniform_is_ln_c() {
        let (e, _) = entropy_and_logit_grad(Array2::zeros((3, 4)).view());
        assert!((e - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn pseudo_label_self_consistent() {
        let logits = array![[40.0, 0.0], [0.0, 40.0]];
        let target = hard(&[0, 1], 2);
        let (loss, _) = pseudo_label_and_logit_grad(logits.view(), &target);
        assert!(loss < 1e-15);
    }

    #[test]
    fn loss_kind_parse() {
        for k in LossKind::ALL {
            assert_eq!(k.name().parse::<LossKind>().unwrap(), k);
        }
        assert!("fisher".parse::<LossKind>().is_err());
    }
}
