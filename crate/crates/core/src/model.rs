//! GPR-style graph network.
//!
//! ```text
//! H⁽⁰⁾ = norm(X·W1 + b1)          (linear layer + full-batch normalization)
//! H⁽ᵏ⁾ = Ã·H⁽ᵏ⁻¹⁾,  k = 1..K
//! Z    = Σₖ γₖ·H⁽ᵏ⁾
//! Ŷ    = softmax(Z·W_cls + b_cls)
//! ```
//!
//! The hop stack is held in a [`HopCache`] so that anything which only
//! changes `γ` never touches the sparse operator again.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::PropagationOperator;
use crate::util::{rng_for, softmax_rows, Fnv64};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"ADRCM";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Variance floor inside the normalization layer.
pub const NORM_EPS: f64 = 1e-5;

/// Teleport probability of the personalized-PageRank initialization of γ.
pub const GAMMA_INIT_ALPHA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
    pub hops: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GprModel {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub norm_scale: Array1<f64>,
    pub norm_shift: Array1<f64>,
    /// Statistics of the graph the model was trained on.
    pub norm_mean: Array1<f64>,
    pub norm_var: Array1<f64>,
    pub gamma: Array1<f64>,
    pub w_cls: Array2<f64>,
    pub b_cls: Array1<f64>,
    /// Normalize with the stored statistics instead of the current graph's.
    /// Runtime switch, not part of the checkpoint.
    pub freeze_norm_stats: bool,
}

impl GprModel {
    /// Glorot-uniform linear layers, identity normalization and
    /// `γₖ = α(1−α)ᵏ`.
    pub fn init(dims: ModelDims, seed: u64) -> Self {
        let mut rng = rng_for(seed, 0x30de1);
        let mut glorot = |rows: usize, cols: usize| {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
        };
        let w1 = glorot(dims.input, dims.hidden);
        let w_cls = glorot(dims.hidden, dims.classes);
        let gamma = (0..=dims.hops)
            .map(|k| GAMMA_INIT_ALPHA * (1.0 - GAMMA_INIT_ALPHA).powi(k as i32))
            .collect();
        Self {
            w1,
            b1: Array1::zeros(dims.hidden),
            norm_scale: Array1::ones(dims.hidden),
            norm_shift: Array1::zeros(dims.hidden),
            norm_mean: Array1::zeros(dims.hidden),
            norm_var: Array1::ones(dims.hidden),
            gamma,
            w_cls,
            b_cls: Array1::zeros(dims.classes),
            freeze_norm_stats: false,
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            input: self.w1.nrows(),
            hidden: self.w1.ncols(),
            classes: self.w_cls.ncols(),
            hops: self.gamma.len() - 1,
        }
    }

    pub fn hops(&self) -> usize {
        self.gamma.len() - 1
    }

    fn check_consistent(&self) -> Result<()> {
        let d = self.dims();
        let checks = [
            ("b1", self.b1.len(), d.hidden),
            ("norm_scale", self.norm_scale.len(), d.hidden),
            ("norm_shift", self.norm_shift.len(), d.hidden),
            ("norm_mean", self.norm_mean.len(), d.hidden),
            ("norm_var", self.norm_var.len(), d.hidden),
            ("w_cls rows", self.w_cls.nrows(), d.hidden),
            ("b_cls", self.b_cls.len(), d.classes),
        ];
        for (context, actual, expected) in checks {
            if actual != expected {
                return Err(Error::DimensionMismatch {
                    context,
                    expected,
                    actual,
                });
            }
        }
        Ok(())
    }

    /// Hash of everything the hop stack depends on besides the graph.
    pub fn featurizer_fingerprint(&self) -> u64 {
        let mut h = Fnv64::new();
        for a in [&self.b1, &self.norm_scale, &self.norm_shift] {
            a.iter().for_each(|&x| h.write_f64(x));
        }
        self.w1.iter().for_each(|&x| h.write_f64(x));
        h.write_u8(self.freeze_norm_stats as u8);
        if self.freeze_norm_stats {
            for a in [&self.norm_mean, &self.norm_var] {
                a.iter().for_each(|&x| h.write_f64(x));
            }
        }
        h.finish()
    }

    /// Records the current graph's normalization statistics as the stored ones.
    pub fn store_norm_stats(&mut self, cache: &HopCache) {
        self.norm_mean.assign(&cache.norm_mean);
        self.norm_var.assign(&cache.norm_var);
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let d = self.dims();
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CHECKPOINT_MAGIC)?;
        for v in [CHECKPOINT_VERSION, d.input as u32, d.hidden as u32, d.classes as u32, d.hops as u32] {
            w.write_all(&v.to_le_bytes())?;
        }
        for x in self.param_arrays() {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::format("checkpoint", "bad magic"));
        }
        let mut header = [0u32; 5];
        for v in header.iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *v = u32::from_le_bytes(b);
        }
        let [version, input, hidden, classes, hops] = header.map(|v| v as usize);
        if version != CHECKPOINT_VERSION as usize {
            return Err(Error::format("checkpoint", format!("unsupported version {version}")));
        }
        let dims = ModelDims {
            input,
            hidden,
            classes,
            hops,
        };
        let expected = Self::param_count(dims);
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != expected * 4 {
            return Err(Error::format(
                "checkpoint",
                format!("expected {} payload bytes, found {}", expected * 4, bytes.len()),
            ));
        }
        let mut values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
        let mut take = |n: usize| -> Vec<f64> { values.by_ref().take(n).collect() };
        let w1 = Array2::from_shape_vec((input, hidden), take(input * hidden)).expect("shape");
        let b1 = Array1::from(take(hidden));
        let norm_scale = Array1::from(take(hidden));
        let norm_shift = Array1::from(take(hidden));
        let norm_mean = Array1::from(take(hidden));
        let norm_var = Array1::from(take(hidden));
        let gamma = Array1::from(take(hops + 1));
        let w_cls = Array2::from_shape_vec((hidden, classes), take(hidden * classes)).expect("shape");
        let b_cls = Array1::from(take(classes));
        Ok(Self {
            w1,
            b1,
            norm_scale,
            norm_shift,
            norm_mean,
            norm_var,
            gamma,
            w_cls,
            b_cls,
            freeze_norm_stats: false,
        })
    }

    fn param_count(d: ModelDims) -> usize {
        d.input * d.hidden + 5 * d.hidden + d.hops + 1 + d.hidden * d.classes + d.classes
    }

    /// Parameters in checkpoint order.
    fn param_arrays(&self) -> impl Iterator<Item = f64> + '_ {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.norm_scale)
            .chain(&self.norm_shift)
            .chain(&self.norm_mean)
            .chain(&self.norm_var)
            .chain(&self.gamma)
            .chain(&self.w_cls)
            .chain(&self.b_cls)
            .copied()
    }

    /// `self -= lr * grads` on every trainable array.
    pub fn apply_gradients(&mut self, grads: &Gradients, lr: f64) {
        self.w1.scaled_add(-lr, &grads.w1);
        self.b1.scaled_add(-lr, &grads.b1);
        self.norm_scale.scaled_add(-lr, &grads.norm_scale);
        self.norm_shift.scaled_add(-lr, &grads.norm_shift);
        self.gamma.scaled_add(-lr, &grads.gamma);
        self.w_cls.scaled_add(-lr, &grads.w_cls);
        self.b_cls.scaled_add(-lr, &grads.b_cls);
    }
}

/// The per-hop representations of one graph under one featurizer.
#[derive(Debug, Clone)]
pub struct HopCache {
    /// `H⁽ᵏ⁾` for `k = 0..=K`.
    pub hops: Vec<Array2<f64>>,
    /// `Ãᵏ·X̂`, the hop stack before the normalization affine.
    pub base_hops: Vec<Array2<f64>>,
    /// `Ãᵏ·1`, needed to re-apply a changed normalization shift.
    pub ones_hops: Vec<Array1<f64>>,
    pub norm_mean: Array1<f64>,
    pub norm_var: Array1<f64>,
    pub batch_stats: bool,
    fingerprint: u64,
}

impl HopCache {
    pub fn num_hops(&self) -> usize {
        self.hops.len() - 1
    }

    pub fn num_nodes(&self) -> usize {
        self.hops[0].nrows()
    }

    pub fn hidden(&self) -> usize {
        self.hops[0].ncols()
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Errors unless the cache was built from this model's featurizer on `dataset`.
    pub fn check_fresh(&self, model: &GprModel, dataset: &Dataset, op: &PropagationOperator<'_>) -> Result<()> {
        let current = cache_fingerprint(model, dataset, op);
        if current != self.fingerprint {
            return Err(Error::StaleCache {
                cached: self.fingerprint,
                current,
            });
        }
        Ok(())
    }

    /// `Σₖ γₖ H⁽ᵏ⁾`.
    pub fn aggregate(&self, gamma: &Array1<f64>) -> Result<Array2<f64>> {
        aggregate_stack(&self.hops, gamma)
    }

    /// Rebuilds `hops` for new normalization affine parameters without any
    /// propagation, and re-keys the cache to `model` (which must carry them).
    pub fn reaffine(&mut self, model: &GprModel, dataset: &Dataset, op: &PropagationOperator<'_>) {
        for ((hop, base), ones) in self.hops.iter_mut().zip(&self.base_hops).zip(&self.ones_hops) {
            *hop = affine(base, ones, &model.norm_scale, &model.norm_shift);
        }
        self.fingerprint = cache_fingerprint(model, dataset, op);
    }
}

fn affine(base: &Array2<f64>, ones: &Array1<f64>, scale: &Array1<f64>, shift: &Array1<f64>) -> Array2<f64> {
    let mut out = base * &scale.view().insert_axis(Axis(0));
    Zip::from(out.rows_mut()).and(ones).for_each(|mut row, &o| {
        row.scaled_add(o, shift);
    });
    out
}

pub fn aggregate_stack(hops: &[Array2<f64>], gamma: &Array1<f64>) -> Result<Array2<f64>> {
    if gamma.len() != hops.len() {
        return Err(Error::DimensionMismatch {
            context: "gamma length vs hop count",
            expected: hops.len(),
            actual: gamma.len(),
        });
    }
    let mut z = Array2::zeros(hops[0].raw_dim());
    for (h, &g) in hops.iter().zip(gamma) {
        z.scaled_add(g, h);
    }
    Ok(z)
}

fn cache_fingerprint(model: &GprModel, dataset: &Dataset, op: &PropagationOperator<'_>) -> u64 {
    let mut h = Fnv64::new();
    h.write_bytes(&model.featurizer_fingerprint().to_le_bytes());
    h.write_bytes(&dataset.fingerprint().to_le_bytes());
    h.write_u8(op.mode() as u8);
    h.write_usize(model.hops());
    h.finish()
}

/// Computes `H⁽⁰⁾..H⁽ᴷ⁾` with exactly `K` calls to `op.propagate`.
pub fn featurize_hops(model: &GprModel, dataset: &Dataset, op: &PropagationOperator<'_>) -> Result<HopCache> {
    model.check_consistent()?;
    let dims = model.dims();
    if dataset.feature_dim() != dims.input {
        return Err(Error::DimensionMismatch {
            context: "feature dimension vs W1 rows",
            expected: dims.input,
            actual: dataset.feature_dim(),
        });
    }
    if op.graph().num_nodes() != dataset.num_nodes() {
        return Err(Error::DimensionMismatch {
            context: "operator graph vs dataset",
            expected: dataset.num_nodes(),
            actual: op.graph().num_nodes(),
        });
    }
    let n = dataset.num_nodes();
    let hidden = dims.hidden;

    let mut pre = dataset.features().dot(&model.w1);
    pre += &model.b1.view().insert_axis(Axis(0));

    let (mean, var, batch_stats) = if model.freeze_norm_stats {
        (model.norm_mean.clone(), model.norm_var.clone(), false)
    } else {
        let mean = pre.mean_axis(Axis(0)).expect("nonempty graph");
        let var = pre.var_axis(Axis(0), 0.0);
        (mean, var, true)
    };
    let inv_std = var.mapv(|v| 1.0 / (v + NORM_EPS).sqrt());

    // Propagate the normalized block and a ones column together so the
    // shift can be re-applied later without more sparse products.
    let mut block = Array2::<f64>::ones((n, hidden + 1));
    {
        let mut xhat = block.slice_mut(s![.., ..hidden]);
        xhat.assign(&pre);
        xhat -= &mean.view().insert_axis(Axis(0));
        xhat *= &inv_std.view().insert_axis(Axis(0));
    }

    let mut base_hops = Vec::with_capacity(dims.hops + 1);
    let mut ones_hops = Vec::with_capacity(dims.hops + 1);
    let mut hops = Vec::with_capacity(dims.hops + 1);
    for k in 0..=dims.hops {
        if k > 0 {
            block = op.propagate(block.view())?;
        }
        let base = block.slice(s![.., ..hidden]).to_owned();
        let ones = block.column(hidden).to_owned();
        hops.push(affine(&base, &ones, &model.norm_scale, &model.norm_shift));
        base_hops.push(base);
        ones_hops.push(ones);
    }

    Ok(HopCache {
        hops,
        base_hops,
        ones_hops,
        norm_mean: mean,
        norm_var: var,
        batch_stats,
        fingerprint: cache_fingerprint(model, dataset, op),
    })
}

/// Row-stochastic class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftPrediction {
    probs: Array2<f64>,
}

impl SoftPrediction {
    pub fn from_logits(logits: ArrayView2<'_, f64>) -> Self {
        Self {
            probs: softmax_rows(logits),
        }
    }

    /// Validates nonnegativity and unit row sums (to 1e-6).
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        for (i, row) in probs.axis_iter(Axis(0)).enumerate() {
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::Numerical(format!("prediction row {i} has entries outside [0, 1]")));
            }
            let sum = row.sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::Numerical(format!("prediction row {i} sums to {sum}")));
            }
        }
        Ok(Self { probs })
    }

    /// One-hot rows for the given labels.
    pub fn one_hot(labels: &[usize], num_classes: usize) -> Self {
        let mut probs = Array2::zeros((labels.len(), num_classes));
        for (i, &y) in labels.iter().enumerate() {
            probs[[i, y]] = 1.0;
        }
        Self { probs }
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.probs
    }

    pub fn num_classes(&self) -> usize {
        self.probs.ncols()
    }

    pub fn argmax(&self) -> Vec<usize> {
        crate::util::argmax_rows(self.probs.view())
    }
}

pub fn logits(z: ArrayView2<'_, f64>, model: &GprModel) -> Array2<f64> {
    let mut a = z.dot(&model.w_cls);
    a += &model.b_cls.view().insert_axis(Axis(0));
    a
}

/// Logits and softmax prediction for representations `z`.
pub fn classify(z: ArrayView2<'_, f64>, model: &GprModel) -> (Array2<f64>, SoftPrediction) {
    let a = logits(z, model);
    let p = SoftPrediction::from_logits(a.view());
    (a, p)
}

/// Gradients with the same layout as the model's trainable arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub norm_scale: Array1<f64>,
    pub norm_shift: Array1<f64>,
    pub gamma: Array1<f64>,
    pub w_cls: Array2<f64>,
    pub b_cls: Array1<f64>,
}

impl Gradients {
    pub fn squared_norm(&self) -> f64 {
        let sq = |it: &mut dyn Iterator<Item = &f64>| it.map(|x| x * x).sum::<f64>();
        sq(&mut self.w1.iter())
            + sq(&mut self.b1.iter())
            + sq(&mut self.norm_scale.iter())
            + sq(&mut self.norm_shift.iter())
            + sq(&mut self.gamma.iter())
            + sq(&mut self.w_cls.iter())
            + sq(&mut self.b_cls.iter())
    }

    pub fn is_finite(&self) -> bool {
        self.squared_norm().is_finite()
    }
}

/// Back-propagates an arbitrary logit gradient `dlogits` (N×C) through the
/// classifier, the hop aggregation, the propagation stack and the
/// normalization into every parameter.
pub fn backward_from_logits(
    model: &GprModel,
    dataset: &Dataset,
    op: &PropagationOperator<'_>,
    cache: &HopCache,
    dlogits: ArrayView2<'_, f64>,
) -> Result<Gradients> {
    cache.check_fresh(model, dataset, op)?;
    let z = cache.aggregate(&model.gamma)?;

    let w_cls = z.t().dot(&dlogits);
    let b_cls = dlogits.sum_axis(Axis(0));
    let dz = dlogits.dot(&model.w_cls.t());

    let gamma: Array1<f64> = cache.hops.iter().map(|h| (h * &dz).sum()).collect();

    // dH0 = Σₖ γₖ (Ãᵀ)ᵏ dZ, by Horner's rule
    let k_max = model.hops();
    let mut dh0 = &dz * model.gamma[k_max];
    for k in (0..k_max).rev() {
        dh0 = op.propagate_adjoint(dh0.view())?;
        dh0.scaled_add(model.gamma[k], &dz);
    }

    let xhat = &cache.base_hops[0];
    let norm_scale = (&dh0 * xhat).sum_axis(Axis(0));
    let norm_shift = dh0.sum_axis(Axis(0));
    let dxhat = &dh0 * &model.norm_scale.view().insert_axis(Axis(0));
    let inv_std = cache.norm_var.mapv(|v| 1.0 / (v + NORM_EPS).sqrt());
    let dpre = if cache.batch_stats {
        let n = dxhat.nrows() as f64;
        let mean_d = dxhat.sum_axis(Axis(0)) / n;
        let mean_dx = (&dxhat * xhat).sum_axis(Axis(0)) / n;
        let mut d = dxhat - &mean_d.view().insert_axis(Axis(0));
        d -= &(xhat * &mean_dx.view().insert_axis(Axis(0)));
        d * &inv_std.view().insert_axis(Axis(0))
    } else {
        dxhat * &inv_std.view().insert_axis(Axis(0))
    };
    let w1 = dataset.features().t().dot(&dpre);
    let b1 = dpre.sum_axis(Axis(0));

    Ok(Gradients {
        w1,
        b1,
        norm_scale,
        norm_shift,
        gamma,
        w_cls,
        b_cls,
    })
}

/// Mean cross-entropy over the masked nodes and its gradient with respect
/// to every parameter.
pub fn backward_ce(
    model: &GprModel,
    dataset: &Dataset,
    op: &PropagationOperator<'_>,
    cache: &HopCache,
    mask: &[bool],
) -> Result<(f64, Gradients)> {
    cache.check_fresh(model, dataset, op)?;
    let (loss, dlogits) = cross_entropy_logit_grad(model, cache, dataset.labels(), mask)?;
    let grads = backward_from_logits(model, dataset, op, cache, dlogits.view())?;
    Ok((loss, grads))
}

/// Mean masked cross-entropy and `∂loss/∂logits`.
pub fn cross_entropy_logit_grad(
    model: &GprModel,
    cache: &HopCache,
    labels: &[usize],
    mask: &[bool],
) -> Result<(f64, Array2<f64>)> {
    if mask.len() != labels.len() || labels.len() != cache.num_nodes() {
        return Err(Error::DimensionMismatch {
            context: "cross-entropy mask/labels",
            expected: cache.num_nodes(),
            actual: mask.len().min(labels.len()),
        });
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::InvalidParameter("cross-entropy over an empty mask".into()));
    }
    let z = cache.aggregate(&model.gamma)?;
    let (_, pred) = classify(z.view(), model);
    let mut probs = pred.into_inner();
    let scale = 1.0 / count as f64;
    let mut loss = 0.0;
    for (i, mut row) in probs.axis_iter_mut(Axis(0)).enumerate() {
        if !mask[i] {
            row.fill(0.0);
            continue;
        }
        let y = labels[i];
        loss -= row[y].max(f64::MIN_POSITIVE).ln();
        row[y] -= 1.0;
        row *= scale;
    }
    Ok((loss * scale, probs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Graph, Normalization};
    use ndarray::array;
    use std::collections::BTreeMap;

    fn path_dataset(features: Array2<f64>) -> Dataset {
        let n = features.nrows();
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        let g = Graph::from_edges(n, &edges).unwrap();
        Dataset::new(g, features, vec![0; n], 2, BTreeMap::new()).unwrap()
    }

    fn dims(input: usize, hidden: usize, classes: usize, hops: usize) -> ModelDims {
        ModelDims {
            input,
            hidden,
            classes,
            hops,
        }
    }

    #[test]
    fn k_zero_has_single_hop() {
        let ds = path_dataset(array![[1.0], [2.0], [4.0]]);
        let model = GprModel::init(dims(1, 2, 2, 0), 1);
        let op = PropagationOperator::new(ds.graph(), Normalization::Row);
        let cache = featurize_hops(&model, &ds, &op).unwrap();
        assert_eq!(cache.hops.len(), 1);
        assert_eq!(op.forward_calls(), 0);
    }

    #[test]
    fn isolated_nodes_vanish_after_one_hop() {
        let g = Graph::empty(3);
        let ds = Dataset::new(g, array![[1.0], [2.0], [4.0]], vec![0, 1, 0], 2, BTreeMap::new()).unwrap();
        let model = GprModel::init(dims(1, 2, 2, 3), 1);
        let op = PropagationOperator::new(ds.graph(), Normalization::Row);
        let cache = featurize_hops(&model, &ds, &op).unwrap();
        for k in 1..=3 {
            assert!(cache.hops[k].iter().all(|&x| x == 0.0));
        }
        assert_eq!(op.forward_calls(), 3);
    }

    #[test]
    fn two_hops_on_path_by_hand() {
        // W1 = [1], b1 = 0, identity affine; x = [1, 2, 4] -> mean 7/3, var 14/9
        let ds = path_dataset(array![[1.0], [2.0], [4.0]]);
        let mut model = GprModel::init(dims(1, 1, 2, 2), 1);
        model.w1 = array![[1.0]];
        let op = PropagationOperator::new(ds.graph(), Normalization::Row);
        let cache = featurize_hops(&model, &ds, &op).unwrap();
        let s = 1.0 / (14.0f64 / 9.0 + NORM_EPS).sqrt();
        let h0 = [(1.0 - 7.0 / 3.0) * s, (2.0 - 7.0 / 3.0) * s, (4.0 - 7.0 / 3.0) * s];
        // row-normalized path: node0 <- node1, node1 <- mean(0, 2), node2 <- node1
        let h1 = [h0[1], 0.5 * (h0[0] + h0[2]), h0[1]];
        let h2 = [h1[1], 0.5 * (h1[0] + h1[2]), h1[1]];
        for i in 0..3 {
            assert!((cache.hops[0][[i, 0]] - h0[i]).abs() < 1e-12);
            assert!((cache.hops[1][[i, 0]] - h1[i]).abs() < 1e-12);
            assert!((cache.hops[2][[i, 0]] - h2[i]).abs() < 1e-12);
        }
        assert_eq!(op.forward_calls(), 2);
    }

    #[test]
    fn aggregate_selection_and_zero() {
        let ds = path_dataset(array![[1.0, 0.0], [2.0, 1.0], [4.0, -1.0]]);
        let model = GprModel::init(dims(2, 3, 2, 2), 5);
        let op = PropagationOperator::new(ds.graph(), Normalization::Symmetric);
        let cache = featurize_hops(&model, &ds, &op).unwrap();
        assert_eq!(cache.aggregate(&array![1.0, 0.0, 0.0]).unwrap(), cache.hops[0]);
        assert!(cache.aggregate(&array![0.0, 0.0, 0.0]).unwrap().iter().all(|&x| x == 0.0));
        assert!(cache.aggregate(&array![1.0, 0.0]).is_err());
    }

    #[test]
    fn classify_zero_weights_uniform() {
        let mut model = GprModel::init(dims(2, 3, 4, 1), 0);
        model.w_cls.fill(0.0);
        let (_, p) = classify(Array2::from_elem((5, 3), 0.7).view(), &model);
        assert!(p.probs().iter().all(|&x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn stale_cache_rejected() {
        let ds = path_dataset(array![[1.0], [2.0], [4.0]]);
        let mut model = GprModel::init(dims(1, 2, 2, 1), 1);
        let op = PropagationOperator::new(ds.graph(), Normalization::Row);
        let cache = featurize_hops(&model, &ds, &op).unwrap();
        model.w1[[0, 0]] += 1.0;
        let err = backward_ce(&model, &ds, &op, &cache, &[true; 3]).unwrap_err();
        assert!(matches!(err, Error::StaleCache { .. }));
    }

    #[test]
    fn checkpoint_round_trip_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.ckpt");
        let b = dir.path().join("b.ckpt");
        let model = GprModel::init(dims(4, 3, 2, 2), 9);
        model.save(&a).unwrap();
        let loaded = GprModel::load(&a).unwrap();
        loaded.save(&b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(loaded.dims(), model.dims());
        let bytes = std::fs::read(&a).unwrap();
        assert_eq!(&bytes[..5], b"ADRCM");
        assert_eq!(bytes.len(), 5 + 20 + 4 * GprModel::param_count(model.dims()));
    }

    #[test]
    fn gamma_init_is_ppr() {
        let model = GprModel::init(dims(1, 1, 2, 3), 0);
        let expected = [0.1, 0.09, 0.081, 0.0729];
        for (g, e) in model.gamma.iter().zip(expected) {
            assert!((g - e).abs() < 1e-15);
        }
    }
}
