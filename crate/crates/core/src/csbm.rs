//! Two-class contextual stochastic block model (CSBM) graphs.
//!
//! Nodes are split exactly in half between class `0` (centre `+mu`) and
//! class `1` (centre `-mu`). Same-class pairs are linked with probability
//! `p = 2dh/N`, cross-class pairs with `q = 2d(1-h)/N`, so the expected
//! degree is `d` and the expected homophily is `h`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, TEST_MASK, TRAIN_MASK, VAL_MASK};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::util::rng_for;

pub const TRAIN_FRACTION: f64 = 0.6;
pub const VAL_FRACTION: f64 = 0.2;

/// Node count used by the experiment presets.
pub const PRESET_NODES: usize = 5000;
/// Feature dimension used by the experiment presets.
pub const PRESET_DIM: usize = 2000;
/// Per-entry class-centre magnitude is `PRESET_MU / sqrt(D)`.
pub const PRESET_MU: f64 = 0.03;
/// Per-entry attribute shift is `PRESET_DELTA_MU / sqrt(D)`.
pub const PRESET_DELTA_MU: f64 = 0.02;

// RNG stream tags
const STREAM_PERMUTATION: u64 = 1;
const STREAM_FEATURES: u64 = 2;
const STREAM_EDGES: u64 = 3;
const STREAM_SPLIT: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsbmParams {
    pub num_nodes: usize,
    /// Centre of class 0; class 1 uses `-mu`.
    pub mu: Vec<f64>,
    /// Added to both class centres.
    pub delta_mu: Vec<f64>,
    pub avg_degree: f64,
    pub homophily: f64,
    /// Per-coordinate standard deviation of the feature noise.
    pub noise_std: f64,
    pub seed: u64,
}

impl CsbmParams {
    /// Centres with every entry equal to `mu_entry` (and `delta_entry` for the shift).
    pub fn uniform(
        num_nodes: usize,
        dim: usize,
        mu_entry: f64,
        delta_entry: f64,
        avg_degree: f64,
        homophily: f64,
        seed: u64,
    ) -> Self {
        Self {
            num_nodes,
            mu: vec![mu_entry; dim],
            delta_mu: vec![delta_entry; dim],
            avg_degree,
            homophily,
            noise_std: 1.0,
            seed,
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_nodes < 2 || self.num_nodes % 2 != 0 {
            return Err(Error::InvalidParameter(format!(
                "CSBM node count must be even and at least 2, got {}",
                self.num_nodes
            )));
        }
        if self.delta_mu.len() != self.mu.len() {
            return Err(Error::DimensionMismatch {
                context: "CSBM delta_mu",
                expected: self.mu.len(),
                actual: self.delta_mu.len(),
            });
        }
        if !(0.0..=1.0).contains(&self.homophily) {
            return Err(Error::InvalidParameter(format!(
                "homophily {} outside [0, 1]",
                self.homophily
            )));
        }
        if !(self.avg_degree >= 0.0) || !self.avg_degree.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "average degree {} must be finite and non-negative",
                self.avg_degree
            )));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "noise std {} must be non-negative",
                self.noise_std
            )));
        }
        edge_probs(self).map(|_| ())
    }
}

/// `(p, q)` for the requested degree and homophily.
pub fn edge_probs(params: &CsbmParams) -> Result<(f64, f64)> {
    let n = params.num_nodes as f64;
    let d = params.avg_degree;
    let h = params.homophily;
    let p = 2.0 * d * h / n;
    let q = 2.0 * d * (1.0 - h) / n;
    if !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&q) {
        return Err(Error::InfeasibleProbabilities { p, q });
    }
    Ok((p, q))
}

/// Draws a CSBM dataset with train/val/test masks. Feature values are
/// rounded to `f32` so the dataset survives a save/load cycle unchanged.
pub fn generate(params: &CsbmParams) -> Result<Dataset> {
    params.validate()?;
    let (p, q) = edge_probs(params)?;
    let n = params.num_nodes;
    let half = n / 2;
    let dim = params.dim();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(params.seed, STREAM_PERMUTATION));
    let (members_pos, members_neg) = order.split_at(half);
    let mut labels = vec![0usize; n];
    for &v in members_neg {
        labels[v] = 1;
    }

    let mut features = Array2::<f64>::zeros((n, dim));
    let mut rng = rng_for(params.seed, STREAM_FEATURES);
    for (i, mut row) in features.rows_mut().into_iter().enumerate() {
        let sign = if labels[i] == 0 { 1.0 } else { -1.0 };
        for ((x, &m), &dm) in row.iter_mut().zip(&params.mu).zip(&params.delta_mu) {
            let noise: f64 = rng.sample(StandardNormal);
            *x = (sign * m + dm + params.noise_std * noise) as f32 as f64;
        }
    }

    let mut rng = rng_for(params.seed, STREAM_EDGES);
    let mut edges = Vec::new();
    sample_within(&mut rng, members_pos, p, &mut edges)?;
    sample_within(&mut rng, members_neg, p, &mut edges)?;
    sample_between(&mut rng, members_pos, members_neg, q, &mut edges)?;
    let graph = Graph::from_edges(n, &edges)?;

    let masks = random_split(n, params.seed);
    Dataset::new(graph, features, labels, 2, masks)
}

fn binomial_count(rng: &mut impl Rng, trials: usize, prob: f64) -> Result<usize> {
    if trials == 0 || prob == 0.0 {
        return Ok(0);
    }
    let dist = Binomial::new(trials as u64, prob)
        .map_err(|e| Error::InvalidParameter(format!("binomial({trials}, {prob}): {e}")))?;
    Ok(dist.sample(rng) as usize)
}

fn sample_within(
    rng: &mut impl Rng,
    members: &[usize],
    prob: f64,
    edges: &mut Vec<(usize, usize)>,
) -> Result<()> {
    let m = members.len();
    let pairs = m * m.saturating_sub(1) / 2;
    let count = binomial_count(rng, pairs, prob)?;
    for idx in index::sample(rng, pairs, count).into_iter() {
        let (a, b) = unrank_pair(idx);
        edges.push((members[a], members[b]));
    }
    Ok(())
}

fn sample_between(
    rng: &mut impl Rng,
    left: &[usize],
    right: &[usize],
    prob: f64,
    edges: &mut Vec<(usize, usize)>,
) -> Result<()> {
    let pairs = left.len() * right.len();
    let count = binomial_count(rng, pairs, prob)?;
    for idx in index::sample(rng, pairs, count).into_iter() {
        edges.push((left[idx / right.len()], right[idx % right.len()]));
    }
    Ok(())
}

/// Maps `idx` in `0..k(k-1)/2` to the pair `(a, b)` with `a < b`, enumerating
/// pairs in the order (0,1), (0,2), (1,2), (0,3), ...
fn unrank_pair(idx: usize) -> (usize, usize) {
    let mut b = ((((8 * idx + 1) as f64).sqrt() + 1.0) / 2.0) as usize;
    while b * (b - 1) / 2 > idx {
        b -= 1;
    }
    while (b + 1) * b / 2 <= idx {
        b += 1;
    }
    (idx - b * (b - 1) / 2, b)
}

fn random_split(n: usize, seed: u64) -> BTreeMap<String, Vec<bool>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, STREAM_SPLIT));
    let n_train = (TRAIN_FRACTION * n as f64).round() as usize;
    let n_val = (VAL_FRACTION * n as f64).round() as usize;
    let mut train = vec![false; n];
    let mut val = vec![false; n];
    let mut test = vec![false; n];
    for (rank, &v) in order.iter().enumerate() {
        if rank < n_train {
            train[v] = true;
        } else if rank < n_train + n_val {
            val[v] = true;
        } else {
            test[v] = true;
        }
    }
    BTreeMap::from([
        (TRAIN_MASK.to_owned(), train),
        (VAL_MASK.to_owned(), val),
        (TEST_MASK.to_owned(), test),
    ])
}

/// Removes `floor(fraction * #same-label edges)` same-label edges chosen
/// uniformly at random. Cross-label edges are kept.
pub fn drop_homophilic_edges(dataset: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidParameter(format!(
            "drop fraction {fraction} outside [0, 1]"
        )));
    }
    let labels = dataset.labels();
    let (same, cross): (Vec<_>, Vec<_>) = dataset
        .graph()
        .edges()
        .partition(|&(u, v)| labels[u] == labels[v]);
    let drop = (fraction * same.len() as f64).floor() as usize;
    if drop == 0 {
        return Ok(dataset.clone());
    }
    let mut rng = rng_for(seed, 0xd40f);
    let mut removed = vec![false; same.len()];
    for i in index::sample(&mut rng, same.len(), drop).into_iter() {
        removed[i] = true;
    }
    let mut kept: Vec<(usize, usize)> = same
        .into_iter()
        .zip(removed)
        .filter_map(|(e, r)| (!r).then_some(e))
        .collect();
    kept.extend(cross);
    let graph = Graph::from_edges(dataset.num_nodes(), &kept)?;
    dataset.with_graph(graph)
}

/// The four structure-shift settings used in the CSBM experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Homo2Hetero,
    Hetero2Homo,
    High2Low,
    Low2High,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::Homo2Hetero,
        Scenario::Hetero2Homo,
        Scenario::High2Low,
        Scenario::Low2High,
    ];

    /// `(degree, homophily)` of the source graph.
    pub fn source_structure(self) -> (f64, f64) {
        match self {
            Scenario::Homo2Hetero => (5.0, 0.8),
            Scenario::Hetero2Homo => (5.0, 0.2),
            Scenario::High2Low => (10.0, 0.8),
            Scenario::Low2High => (2.0, 0.8),
        }
    }

    /// `(degree, homophily)` of the target graph.
    pub fn target_structure(self) -> (f64, f64) {
        match self {
            Scenario::Homo2Hetero => (5.0, 0.2),
            Scenario::Hetero2Homo => (5.0, 0.8),
            Scenario::High2Low => (2.0, 0.8),
            Scenario::Low2High => (10.0, 0.8),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Homo2Hetero => "homo2hetero",
            Scenario::Hetero2Homo => "hetero2homo",
            Scenario::High2Low => "high2low",
            Scenario::Low2High => "low2high",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "unknown preset `{s}` (expected homo2hetero|hetero2homo|high2low|low2high)"
                ))
            })
    }
}

/// A scenario bound to concrete sizes, optionally with an attribute shift
/// on the target graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub scenario: Scenario,
    pub attribute_shift: bool,
    pub num_nodes: usize,
    pub dim: usize,
    /// Overrides the source `(degree, homophily)`; used by shift-level sweeps.
    pub source_override: Option<(f64, f64)>,
}

impl Preset {
    pub fn new(scenario: Scenario, attribute_shift: bool) -> Self {
        Self {
            scenario,
            attribute_shift,
            num_nodes: PRESET_NODES,
            dim: PRESET_DIM,
            source_override: None,
        }
    }

    pub fn with_size(mut self, num_nodes: usize, dim: usize) -> Self {
        self.num_nodes = num_nodes;
        self.dim = dim;
        self
    }

    pub fn id(&self) -> String {
        let mut id = self.scenario.name().to_owned();
        if self.attribute_shift {
            id.push_str("+attr");
        }
        if let Some((d, h)) = self.source_override {
            id.push_str(&format!("[src d={d} h={h}]"));
        }
        id
    }

    fn base(&self, (d, h): (f64, f64), delta: f64, seed: u64) -> CsbmParams {
        let scale = (self.dim as f64).sqrt();
        let mut params = CsbmParams::uniform(
            self.num_nodes,
            self.dim,
            PRESET_MU / scale,
            delta / scale,
            d,
            h,
            seed,
        );
        params.noise_std = 1.0 / scale;
        params
    }

    pub fn source_params(&self, seed: u64) -> CsbmParams {
        let structure = self
            .source_override
            .unwrap_or_else(|| self.scenario.source_structure());
        self.base(structure, 0.0, crate::util::derive_seed(seed, 0x5_0c3))
    }

    pub fn target_params(&self, seed: u64) -> CsbmParams {
        let delta = if self.attribute_shift { PRESET_DELTA_MU } else { 0.0 };
        self.base(
            self.scenario.target_structure(),
            delta,
            crate::util::derive_seed(seed, 0x7a6),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{edge_homophily, node_homophily};

    #[test]
    fn probs_by_hand() {
        let p = CsbmParams::uniform(5000, 1, 0.0, 0.0, 5.0, 0.8, 0);
        let (pp, qq) = edge_probs(&p).unwrap();
        assert!((pp - 0.0016).abs() < 1e-15);
        assert!((qq - 0.0004).abs() < 1e-15);
        // inverting recovers d and h
        let n = 5000.0;
        assert!((n * (pp + qq) / 2.0 - 5.0).abs() < 1e-12);
        assert!((pp / (pp + qq) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn probs_symmetric_at_half() {
        let p = CsbmParams::uniform(100, 1, 0.0, 0.0, 3.0, 0.5, 0);
        let (pp, qq) = edge_probs(&p).unwrap();
        assert_eq!(pp, qq);
        assert!((pp - 3.0 / 100.0).abs() < 1e-15);
    }

    #[test]
    fn probs_infeasible() {
        let p = CsbmParams::uniform(10, 1, 0.0, 0.0, 20.0, 0.5, 0);
        assert!(matches!(edge_probs(&p), Err(Error::InfeasibleProbabilities { .. })));
        assert!(generate(&p).is_err());
    }

    #[test]
    fn unrank_enumerates_all_pairs() {
        let k = 7;
        let pairs: Vec<_> = (0..k * (k - 1) / 2).map(unrank_pair).collect();
        let mut expected = Vec::new();
        for b in 1..k {
            for a in 0..b {
                expected.push((a, b));
            }
        }
        assert_eq!(pairs, expected);
    }

    #[test]
    fn pure_homophily_graph() {
        let p = CsbmParams::uniform(400, 3, 1.0, 0.0, 4.0, 1.0, 3);
        let ds = generate(&p).unwrap();
        assert_eq!(node_homophily(ds.graph(), ds.labels()).unwrap().mean, Some(1.0));
    }

    #[test]
    fn zero_degree_has_no_edges() {
        let p = CsbmParams::uniform(100, 2, 1.0, 0.0, 0.0, 0.7, 3);
        assert_eq!(generate(&p).unwrap().graph().num_edges(), 0);
    }

    #[test]
    fn exact_balance_and_determinism() {
        let p = CsbmParams::uniform(200, 4, 0.5, 0.1, 3.0, 0.6, 11);
        let a = generate(&p).unwrap();
        let b = generate(&p).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.labels().iter().filter(|&&y| y == 0).count(), 100);
        let mut other = p.clone();
        other.seed = 12;
        assert_ne!(generate(&other).unwrap(), a);
    }

    #[test]
    fn masks_partition_nodes() {
        let ds = generate(&CsbmParams::uniform(100, 2, 1.0, 0.0, 3.0, 0.5, 1)).unwrap();
        for i in 0..100 {
            let hits = [TRAIN_MASK, VAL_MASK, TEST_MASK]
                .iter()
                .filter(|m| ds.mask(m).unwrap()[i])
                .count();
            assert_eq!(hits, 1);
        }
        assert_eq!(ds.mask(TRAIN_MASK).unwrap().iter().filter(|&&m| m).count(), 60);
    }

    #[test]
    fn drop_identity_and_full() {
        let ds = generate(&CsbmParams::uniform(200, 2, 1.0, 0.0, 4.0, 1.0, 5)).unwrap();
        assert_eq!(drop_homophilic_edges(&ds, 0.0, 1).unwrap(), ds);
        assert_eq!(drop_homophilic_edges(&ds, 1.0, 1).unwrap().graph().num_edges(), 0);
    }

    #[test]
    fn drop_half_of_homophilic_edges() {
        // 100 same-label edges inside each of two cliques' worth of pairs, 100 cross edges
        let n = 60;
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let mut same = Vec::new();
        let mut cross = Vec::new();
        'outer: for u in 0..n {
            for v in u + 1..n {
                if labels[u] == labels[v] && same.len() < 100 {
                    same.push((u, v));
                } else if labels[u] != labels[v] && cross.len() < 100 {
                    cross.push((u, v));
                }
                if same.len() == 100 && cross.len() == 100 {
                    break 'outer;
                }
            }
        }
        let edges: Vec<_> = same.iter().chain(&cross).copied().collect();
        let g = Graph::from_edges(n, &edges).unwrap();
        let ds = Dataset::new(g, Array2::zeros((n, 1)), labels, 2, BTreeMap::new()).unwrap();
        let dropped = drop_homophilic_edges(&ds, 0.5, 9).unwrap();
        let kept_same = dropped
            .graph()
            .edges()
            .filter(|&(u, v)| dropped.labels()[u] == dropped.labels()[v])
            .count();
        assert_eq!(kept_same, 50);
        assert_eq!(dropped.graph().num_edges(), 150);
        let h = edge_homophily(dropped.graph(), dropped.labels()).unwrap();
        assert!((h - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn preset_constants() {
        let preset = Preset::new(Scenario::Homo2Hetero, true);
        let src = preset.source_params(0);
        let tgt = preset.target_params(0);
        assert_eq!(src.dim(), 2000);
        assert!((src.mu[0] - 0.03 / 2000f64.sqrt()).abs() < 1e-18);
        assert!(src.delta_mu.iter().all(|&x| x == 0.0));
        assert!((tgt.delta_mu[0] - 0.02 / 2000f64.sqrt()).abs() < 1e-18);
        assert_eq!((src.avg_degree, src.homophily), (5.0, 0.8));
        assert_eq!((tgt.avg_degree, tgt.homophily), (5.0, 0.2));
        assert_ne!(src.seed, tgt.seed);
    }
}
