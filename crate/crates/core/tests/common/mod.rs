#![allow(dead_code)]

use adarc::csbm::{generate, CsbmParams};
use adarc::model::{GprModel, ModelDims};
use adarc::{Dataset, SoftPrediction};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
}

/// Rows are either one-hot or a random point of the simplex. Every class
/// keeps some mass so that no centroid is undefined.
pub fn random_prediction(rng: &mut ChaCha8Rng, n: usize, c: usize, hard: bool) -> SoftPrediction {
    if hard {
        let labels: Vec<usize> = (0..n).map(|i| if i < c { i } else { rng.random_range(0..c) }).collect();
        return SoftPrediction::one_hot(&labels, c);
    }
    let mut p = Array2::from_shape_fn((n, c), |_| rng.random_range(0.05..1.0));
    for mut row in p.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    SoftPrediction::new(p).unwrap()
}

/// `(Z, Ŷ)` with `N ≤ 50`, `H ≤ 8`, `C ≤ 5`.
pub fn random_instance(rng: &mut ChaCha8Rng, hard: bool) -> (Array2<f64>, SoftPrediction) {
    let c = rng.random_range(2..=5);
    let n = rng.random_range(c.max(3)..=50);
    let h = rng.random_range(1..=8);
    let scale = 10f64.powf(rng.random_range(-1.0..1.0));
    let z = random_matrix(rng, n, h, scale);
    (z, random_prediction(rng, n, c, hard))
}

/// Soft-prediction-weighted variances computed straight from the
/// definitions: `(σ²_intra, σ²_inter, σ²)`.
pub fn naive_variances(z: &Array2<f64>, p: &Array2<f64>) -> (f64, f64, f64) {
    let (n, h) = z.dim();
    let c = p.ncols();
    let mut global = vec![0.0; h];
    for i in 0..n {
        for j in 0..h {
            global[j] += z[[i, j]] / n as f64;
        }
    }
    let mut intra = 0.0;
    let mut inter = 0.0;
    for k in 0..c {
        let mass: f64 = (0..n).map(|i| p[[i, k]]).sum();
        if mass == 0.0 {
            continue;
        }
        let centroid: Vec<f64> = (0..h).map(|j| (0..n).map(|i| p[[i, k]] * z[[i, j]]).sum::<f64>() / mass).collect();
        for i in 0..n {
            let d: f64 = (0..h).map(|j| (z[[i, j]] - centroid[j]).powi(2)).sum();
            intra += p[[i, k]] * d;
        }
        inter += mass * (0..h).map(|j| (centroid[j] - global[j]).powi(2)).sum::<f64>();
    }
    let total = (0..n)
        .map(|i| (0..h).map(|j| (z[[i, j]] - global[j]).powi(2)).sum::<f64>())
        .sum();
    (intra, inter, total)
}

/// Central differences of `f` at `x` with step `h` on every coordinate.
pub fn fd_gradient(x: &Array2<f64>, h: f64, mut f: impl FnMut(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut g = Array2::zeros(x.raw_dim());
    let mut xp = x.clone();
    for idx in ndarray::indices(x.raw_dim()) {
        let orig = xp[idx];
        xp[idx] = orig + h;
        let up = f(&xp);
        xp[idx] = orig - h;
        let down = f(&xp);
        xp[idx] = orig;
        g[idx] = (up - down) / (2.0 * h);
    }
    g
}

pub fn fd_gradient_vec(x: &Array1<f64>, h: f64, mut f: impl FnMut(&Array1<f64>) -> f64) -> Array1<f64> {
    let mut g = Array1::zeros(x.len());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let orig = xp[i];
        xp[i] = orig + h;
        let up = f(&xp);
        xp[i] = orig - h;
        let down = f(&xp);
        xp[i] = orig;
        g[i] = (up - down) / (2.0 * h);
    }
    g
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn relative_error<'a>(
    a: impl IntoIterator<Item = &'a f64>,
    b: impl IntoIterator<Item = &'a f64>,
    floor: f64,
) -> f64 {
    let (mut diff, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.into_iter().zip(b) {
        diff += (x - y).powi(2);
        na += x * x;
        nb += y * y;
    }
    diff.sqrt() / na.sqrt().max(nb.sqrt()).max(floor)
}

/// A small two-class CSBM graph with strong features.
pub fn small_dataset(seed: u64, nodes: usize, homophily: f64) -> Dataset {
    generate(&CsbmParams::uniform(nodes / 2 * 2, 6, 0.6, 0.0, 4.0, homophily, seed)).unwrap()
}

pub fn small_model(ds: &Dataset, hops: usize, seed: u64) -> GprModel {
    GprModel::init(
        ModelDims {
            input: ds.feature_dim(),
            hidden: 5,
            classes: ds.num_classes(),
            hops,
        },
        seed,
    )
}

/// Relative errors of the analytic `∂L/∂Z` and `∇γ L` against central
/// differences (step `1e-4`) on one random small graph instance.
pub fn gradient_check(kind: adarc::losses::LossKind, seed: u64) -> (f64, f64) {
    use adarc::graph::{Normalization, PropagationOperator};
    use adarc::losses::{surrogate_loss_and_grad_gamma, surrogate_loss_and_grad_z};
    use adarc::model::featurize_hops;

    let mut r = rng(seed);
    let nodes = 2 * r.random_range(10..=25);
    let hops = r.random_range(1..=4);
    let ds = small_dataset(seed, nodes, r.random_range(0.1..0.9));
    let mut model = small_model(&ds, hops, seed);
    model.gamma = Array1::from_shape_fn(hops + 1, |_| r.random_range(-1.0..1.0));
    let op = PropagationOperator::new(ds.graph(), Normalization::Symmetric);
    let cache = featurize_hops(&model, &ds, &op).unwrap();
    let hard = r.random_bool(0.5);
    let pred = random_prediction(&mut r, nodes, ds.num_classes(), hard);
    let step = 1e-4;

    let z = cache.aggregate(&model.gamma).unwrap();
    let (_, dz) = surrogate_loss_and_grad_z(kind, z.view(), &model, &pred).unwrap();
    let fd_z = fd_gradient(&z, step, |zz| surrogate_loss_and_grad_z(kind, zz.view(), &model, &pred).unwrap().0);

    let (_, dgamma) = surrogate_loss_and_grad_gamma(kind, &model, &cache, &pred).unwrap();
    let mut probe = model.clone();
    let fd_gamma = fd_gradient_vec(&model.gamma, step, |g| {
        probe.gamma.assign(g);
        surrogate_loss_and_grad_gamma(kind, &probe, &cache, &pred).unwrap().0
    });
    (
        relative_error(&dz, &fd_z, 1e-8),
        relative_error(&dgamma, &fd_gamma, 1e-8),
    )
}
