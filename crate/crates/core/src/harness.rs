//! Experiment runner: scenario presets, sweeps, the empirical accuracy-gap
//! decomposition and stage timings.
//!
//! Reports hold only seeded, deterministic quantities so that rerunning a
//! configuration reproduces its JSON byte for byte. Wall-clock numbers live
//! in [`BenchReport`] alone.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::adapt::{adapt, AdaptConfig};
use crate::csbm::{generate, Preset, Scenario, PRESET_DIM, PRESET_NODES};
use crate::dataset::{Dataset, TEST_MASK};
use crate::error::{Error, Result};
use crate::graph::{Normalization, PropagationOperator};
use crate::losses::{grad_gamma_from_z, surrogate_loss_and_grad_z};
use crate::model::{classify, featurize_hops, GprModel, ModelDims};
use crate::pretrain::{accuracy, evaluate, prediction_accuracy, train_source, TrainConfig};
use crate::tta::{base_predict, BaseTta};
use crate::util::{derive_seed, mean, sample_std, softmax_rows};

/// Gradient-norm tolerance for the linear probe in [`decompose_gap`].
pub const PROBE_TOLERANCE: f64 = 1e-6;
pub const PROBE_MAX_ITERATIONS: usize = 5000;
/// Minimum repetitions for each timed stage in [`bench`].
pub const BENCH_MIN_REPS: usize = 20;

const STREAM_MODEL_INIT: u64 = 0x1417;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub hidden: usize,
    pub hops: usize,
    pub normalization: Normalization,
    pub num_nodes: usize,
    pub dim: usize,
    pub train: TrainConfig,
    pub adapt: AdaptConfig,
    pub tent_steps: usize,
    pub tent_lr: f64,
    pub t3a_keep: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            hops: 9,
            normalization: Normalization::Symmetric,
            num_nodes: PRESET_NODES,
            dim: PRESET_DIM,
            train: TrainConfig::default(),
            adapt: AdaptConfig::default(),
            tent_steps: 10,
            tent_lr: 0.05,
            t3a_keep: 100,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::InvalidParameter("hidden width must be at least 1".into()));
        }
        if self.num_nodes < 2 || self.dim == 0 {
            return Err(Error::InvalidParameter(format!(
                "preset needs at least 2 nodes and 1 feature (got {} x {})",
                self.num_nodes, self.dim
            )));
        }
        self.train.validate()?;
        self.adapt.validate()?;
        self.base_tta(BaseKind::Tent).validate()?;
        self.base_tta(BaseKind::T3a).validate()
    }

    pub fn preset(&self, scenario: Scenario, attribute_shift: bool) -> Preset {
        Preset::new(scenario, attribute_shift).with_size(self.num_nodes, self.dim)
    }

    pub fn base_tta(&self, kind: BaseKind) -> BaseTta {
        match kind {
            BaseKind::Erm => BaseTta::Erm,
            BaseKind::Tent => BaseTta::Tent {
                steps: self.tent_steps,
                lr: self.tent_lr,
            },
            BaseKind::T3a => BaseTta::T3a {
                keep_per_class: self.t3a_keep,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseKind {
    Erm,
    Tent,
    T3a,
}

/// A base routine, optionally followed by hop-weight adaptation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Method {
    pub base: BaseKind,
    pub adarc: bool,
}

impl Method {
    pub const ERM: Method = Method {
        base: BaseKind::Erm,
        adarc: false,
    };
    pub const ERM_ADARC: Method = Method {
        base: BaseKind::Erm,
        adarc: true,
    };
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let base = match self.base {
            BaseKind::Erm => "erm",
            BaseKind::Tent => "tent",
            BaseKind::T3a => "t3a",
        };
        f.write_str(base)?;
        if self.adarc {
            f.write_str("+adarc")?;
        }
        Ok(())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (base, adarc) = match s.strip_suffix("+adarc") {
            Some(b) => (b, true),
            None => (s, false),
        };
        let base = match base {
            "erm" => BaseKind::Erm,
            "tent" => BaseKind::Tent,
            "t3a" => BaseKind::T3a,
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "unknown method `{s}` (expected erm|tent|t3a, optionally with +adarc)"
                )))
            }
        };
        Ok(Method { base, adarc })
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// One seed's source/target pair and the model pretrained on the source.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub source: Dataset,
    pub target: Dataset,
    pub model: GprModel,
    /// Accuracy on the source test split.
    pub source_accuracy: f64,
}

pub fn prepare_seed(preset: &Preset, seed: u64, config: &ExperimentConfig) -> Result<SeedRun> {
    let source = generate(&preset.source_params(seed))?;
    let target = generate(&preset.target_params(seed))?;
    let dims = ModelDims {
        input: source.feature_dim(),
        hidden: config.hidden,
        classes: source.num_classes(),
        hops: config.hops,
    };
    let op = PropagationOperator::new(source.graph(), config.normalization);
    let train = TrainConfig {
        seed,
        ..config.train
    };
    let init = GprModel::init(dims, derive_seed(seed, STREAM_MODEL_INIT));
    let (model, _) = train_source(init, &source, &op, &train)?;
    let source_accuracy = evaluate(&model, &source, &op, source.mask(TEST_MASK))?;
    Ok(SeedRun {
        seed,
        source,
        target,
        model,
        source_accuracy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MethodOutcome {
    /// Accuracy over every target node; `None` when adaptation diverged.
    pub accuracy: Option<f64>,
}

/// Applies `method` to the run's target graph. Target labels are read only
/// to score the final prediction.
pub fn run_method(run: &SeedRun, method: Method, config: &ExperimentConfig) -> Result<MethodOutcome> {
    let op = PropagationOperator::new(run.target.graph(), config.normalization);
    let base = config.base_tta(method.base);
    let labels = run.target.labels();
    if !method.adarc {
        let cache = featurize_hops(&run.model, &run.target, &op)?;
        let out = base_predict(&base, &run.model, &cache)?;
        return Ok(MethodOutcome {
            accuracy: Some(prediction_accuracy(&out.prediction, labels, None)?),
        });
    }
    let adapt_config = AdaptConfig {
        base,
        track_accuracy: false,
        ..config.adapt
    };
    match adapt(&run.model, &run.target, &op, &adapt_config) {
        Ok(out) => Ok(MethodOutcome {
            accuracy: Some(prediction_accuracy(&out.prediction, labels, None)?),
        }),
        Err(failure) if failure.error.is_numerical() => Ok(MethodOutcome { accuracy: None }),
        Err(failure) => Err(failure.error),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodReport {
    pub method: Method,
    pub per_seed: Vec<Option<f64>>,
    /// Over all seeds; `None` if any seed diverged.
    pub mean: Option<f64>,
    /// Sample standard deviation over seeds; `None` if any seed diverged.
    pub sd: Option<f64>,
}

impl MethodReport {
    fn from_outcomes(method: Method, per_seed: Vec<Option<f64>>) -> Self {
        let values: Option<Vec<f64>> = per_seed.iter().copied().collect();
        Self {
            method,
            mean: values.as_deref().map(mean),
            sd: values.as_deref().map(sample_std),
            per_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub scenario: String,
    pub preset: Preset,
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub source_accuracy: Vec<f64>,
    pub methods: Vec<MethodReport>,
}

impl ExperimentReport {
    pub fn method(&self, method: Method) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.method == method)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Scores every method on already prepared runs.
pub fn report_from_runs(
    preset: &Preset,
    runs: &[SeedRun],
    methods: &[Method],
    config: &ExperimentConfig,
) -> Result<ExperimentReport> {
    let mut reports = Vec::with_capacity(methods.len());
    for &method in methods {
        let per_seed = runs
            .iter()
            .map(|run| run_method(run, method, config).map(|o| o.accuracy))
            .collect::<Result<Vec<_>>>()?;
        reports.push(MethodReport::from_outcomes(method, per_seed));
    }
    Ok(ExperimentReport {
        scenario: preset.id(),
        preset: preset.clone(),
        config: config.clone(),
        seeds: runs.iter().map(|r| r.seed).collect(),
        source_accuracy: runs.iter().map(|r| r.source_accuracy).collect(),
        methods: reports,
    })
}

pub fn prepare_runs(preset: &Preset, seeds: &[u64], config: &ExperimentConfig) -> Result<Vec<SeedRun>> {
    if seeds.is_empty() {
        return Err(Error::InvalidParameter("at least one seed is required".into()));
    }
    config.validate()?;
    seeds.iter().map(|&s| prepare_seed(preset, s, config)).collect()
}

/// Generates source and target graphs per seed, pretrains on the source and
/// scores each method on the target.
pub fn run_scenario(
    preset: &Preset,
    methods: &[Method],
    seeds: &[u64],
    config: &ExperimentConfig,
) -> Result<ExperimentReport> {
    let runs = prepare_runs(preset, seeds, config)?;
    report_from_runs(preset, &runs, methods, config)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Source homophily (homophily scenarios) or source degree (degree
    /// scenarios), target fixed.
    ShiftLevel,
    /// `lr:epochs` pairs for the adaptation loop.
    LrEpochs,
    /// Number of propagation hops `K`.
    HopsK,
    LossKind,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::ShiftLevel => "shift_level",
            SweepAxis::LrEpochs => "lr_epochs",
            SweepAxis::HopsK => "hops_k",
            SweepAxis::LossKind => "loss_kind",
        })
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shift_level" => Ok(SweepAxis::ShiftLevel),
            "lr_epochs" => Ok(SweepAxis::LrEpochs),
            "hops_k" | "hops_K" => Ok(SweepAxis::HopsK),
            "loss_kind" => Ok(SweepAxis::LossKind),
            other => Err(Error::InvalidParameter(format!(
                "unknown sweep axis `{other}` (expected shift_level|lr_epochs|hops_k|loss_kind)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub value: String,
    pub report: ExperimentReport,
}

fn parse_grid_value<T: FromStr>(axis: SweepAxis, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("bad {axis} grid value `{value}`")))
}

fn shift_preset(base: &Preset, value: f64) -> Preset {
    let (d, h) = base.scenario.source_structure();
    let structure = match base.scenario {
        Scenario::Homo2Hetero | Scenario::Hetero2Homo => (d, value),
        Scenario::High2Low | Scenario::Low2High => (value, h),
    };
    Preset {
        source_override: Some(structure),
        ..base.clone()
    }
}

/// One report per grid value. Axes that leave the source model untouched
/// (`lr_epochs`, `loss_kind`) reuse one set of pretrained runs.
pub fn sweep(
    axis: SweepAxis,
    grid: &[String],
    preset: &Preset,
    methods: &[Method],
    seeds: &[u64],
    config: &ExperimentConfig,
) -> Result<Vec<SweepPoint>> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("sweep grid is empty".into()));
    }
    let mut points = Vec::with_capacity(grid.len());
    match axis {
        SweepAxis::ShiftLevel => {
            for value in grid {
                let p = shift_preset(preset, parse_grid_value(axis, value)?);
                points.push((value.clone(), run_scenario(&p, methods, seeds, config)?));
            }
        }
        SweepAxis::HopsK => {
            for value in grid {
                let c = ExperimentConfig {
                    hops: parse_grid_value(axis, value)?,
                    ..config.clone()
                };
                points.push((value.clone(), run_scenario(preset, methods, seeds, &c)?));
            }
        }
        SweepAxis::LrEpochs | SweepAxis::LossKind => {
            let configs = grid
                .iter()
                .map(|value| {
                    let mut c = config.clone();
                    if axis == SweepAxis::LossKind {
                        c.adapt.loss = parse_grid_value(axis, value)?;
                    } else {
                        let (lr, epochs) = value.split_once(':').ok_or_else(|| {
                            Error::InvalidParameter(format!("lr_epochs grid value `{value}` is not lr:epochs"))
                        })?;
                        c.adapt.learning_rate = parse_grid_value(axis, lr)?;
                        c.adapt.epochs = parse_grid_value(axis, epochs)?;
                    }
                    c.validate()?;
                    Ok(c)
                })
                .collect::<Result<Vec<_>>>()?;
            let runs = prepare_runs(preset, seeds, config)?;
            for (value, c) in grid.iter().zip(&configs) {
                points.push((value.clone(), report_from_runs(preset, &runs, methods, c)?));
            }
        }
    }
    Ok(points
        .into_iter()
        .map(|(value, report)| SweepPoint { value, report })
        .collect())
}

/// `value,method,mean,sd` rows, one per grid value and method.
pub fn write_sweep_csv<W: std::io::Write>(axis: SweepAxis, points: &[SweepPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([axis.to_string().as_str(), "method", "mean", "sd"])?;
    let fmt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_else(|| "diverged".into());
    for p in points {
        for m in &p.report.methods {
            w.write_record([p.value.clone(), m.method.to_string(), fmt(m.mean), fmt(m.sd)])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeFit {
    pub accuracy: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
}

/// Multinomial logistic regression on `z` by full-batch gradient descent
/// from zero weights, stopped when the gradient norm falls below
/// [`PROBE_TOLERANCE`] or after [`PROBE_MAX_ITERATIONS`] steps. Columns are
/// standardized first, which leaves the set of linear decision rules
/// unchanged. Accuracy is scored over `eval_mask` (every node when `None`).
pub fn fit_linear_probe(
    z: &Array2<f64>,
    labels: &[usize],
    classes: usize,
    eval_mask: Option<&[bool]>,
) -> Result<ProbeFit> {
    let n = z.nrows();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            context: "probe labels",
            expected: n,
            actual: labels.len(),
        });
    }
    let means = z.mean_axis(Axis(0)).ok_or_else(|| Error::InvalidParameter("probe on an empty graph".into()))?;
    let var = z.var_axis(Axis(0), 0.0);
    let total = var.sum();
    if !(total > crate::losses::DEGENERATE_EPS) {
        return Err(Error::DegenerateRepresentation {
            variance: total,
            threshold: crate::losses::DEGENERATE_EPS,
        });
    }
    let h = z.ncols();
    // Constant columns carry no information; zero them instead of dividing by 0.
    let inv_std = var.mapv(|v| if v > crate::losses::DEGENERATE_EPS { 1.0 / v.sqrt() } else { 0.0 });
    let mut x = Array2::<f64>::ones((n, h + 1));
    {
        let mut body = x.slice_mut(ndarray::s![.., ..h]);
        body.assign(z);
        body -= &means.view().insert_axis(Axis(0));
        body *= &inv_std.view().insert_axis(Axis(0));
    }

    // Softmax cross-entropy has Hessian ⪯ ½·XᵀX/N ⊗ I.
    let gram = x.t().dot(&x) / n as f64;
    let smoothness = 0.5 * largest_eigenvalue(&gram);
    let step = 1.0 / smoothness.max(f64::MIN_POSITIVE);

    let mut onehot = Array2::<f64>::zeros((n, classes));
    for (i, &y) in labels.iter().enumerate() {
        onehot[[i, y]] = 1.0;
    }
    let mut w = Array2::<f64>::zeros((h + 1, classes));
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;
    while iterations < PROBE_MAX_ITERATIONS {
        let probs = softmax_rows(x.dot(&w).view());
        let grad = x.t().dot(&(probs - &onehot)) / n as f64;
        grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if grad_norm < PROBE_TOLERANCE {
            break;
        }
        w.scaled_add(-step, &grad);
        iterations += 1;
    }
    let predicted = crate::util::argmax_rows(x.dot(&w).view());
    Ok(ProbeFit {
        accuracy: accuracy(&predicted, labels, eval_mask)?,
        iterations,
        grad_norm,
        converged: grad_norm < PROBE_TOLERANCE,
    })
}

fn largest_eigenvalue(sym: &Array2<f64>) -> f64 {
    let mut v = Array1::<f64>::from_elem(sym.nrows(), 1.0 / (sym.nrows() as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..200 {
        let next = sym.dot(&v);
        let norm = next.dot(&next).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = v.dot(&next);
        v = next / norm;
    }
    // Rayleigh quotients approach from below; pad so the step stays stable.
    lambda * 1.01
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapReport {
    /// Source classifier on the source test split.
    pub source_accuracy: f64,
    /// Source classifier on the target test split.
    pub target_accuracy: f64,
    /// Best linear classifier fitted on all target representations, scored
    /// on the target test split.
    pub best_target_accuracy: f64,
    /// `source_accuracy − best_target_accuracy`: representation degradation.
    pub delta_f: f64,
    /// `best_target_accuracy − target_accuracy`: classifier bias.
    pub delta_g: f64,
    pub probe: ProbeFit,
}

/// Splits the source-to-target accuracy drop into representation
/// degradation and classifier bias. Reads target labels, so it is a
/// diagnostic only. Accuracies are taken over each graph's test split (all
/// nodes when it has none) so that nodes seen in pretraining never count.
pub fn decompose_gap(
    model: &GprModel,
    source: &Dataset,
    target: &Dataset,
    normalization: Normalization,
) -> Result<GapReport> {
    let op_s = PropagationOperator::new(source.graph(), normalization);
    let source_accuracy = evaluate(model, source, &op_s, source.mask(TEST_MASK))?;
    let op_t = PropagationOperator::new(target.graph(), normalization);
    let cache = featurize_hops(model, target, &op_t)?;
    let z = cache.aggregate(&model.gamma)?;
    let (_, pred) = classify(z.view(), model);
    let eval_mask = target.mask(TEST_MASK);
    let target_accuracy = prediction_accuracy(&pred, target.labels(), eval_mask)?;
    let probe = fit_linear_probe(&z, target.labels(), target.num_classes(), eval_mask)?;
    Ok(GapReport {
        source_accuracy,
        target_accuracy,
        best_target_accuracy: probe.accuracy,
        delta_f: source_accuracy - probe.accuracy,
        delta_g: probe.accuracy - target_accuracy,
        probe,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageMedians {
    pub forward_ms: f64,
    pub loss_ms: f64,
    pub backward_ms: f64,
    pub update_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub scenario: String,
    pub repetitions: usize,
    pub initial_inference_ms: f64,
    pub stages: StageMedians,
    pub per_epoch_ms: f64,
    /// `per_epoch_ms / initial_inference_ms`.
    pub epoch_to_inference: f64,
    /// Aggregation and classification from the cached hop stack.
    pub cached_forward_ms: f64,
    /// The same forward pass recomputing every hop.
    pub cold_forward_ms: f64,
}

fn median_ms(mut samples: Vec<Duration>) -> f64 {
    samples.sort();
    let n = samples.len();
    let mid = if n % 2 == 1 {
        samples[n / 2]
    } else {
        (samples[n / 2 - 1] + samples[n / 2]) / 2
    };
    mid.as_secs_f64() * 1e3
}

fn time<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, Duration)> {
    let start = Instant::now();
    let out = f()?;
    Ok((out, start.elapsed()))
}

/// Median wall-clock of initial inference and of each adaptation stage on
/// `target`, over at least [`BENCH_MIN_REPS`] repetitions.
pub fn bench(
    scenario: &str,
    model: &GprModel,
    target: &Dataset,
    config: &ExperimentConfig,
    repetitions: usize,
) -> Result<BenchReport> {
    let reps = repetitions.max(BENCH_MIN_REPS);
    let op = PropagationOperator::new(target.graph(), config.normalization);
    let base = config.adapt.base;
    let mut initial = Vec::with_capacity(reps);
    let mut cold = Vec::with_capacity(reps);
    for _ in 0..reps {
        let (_, t) = time(|| {
            let cache = featurize_hops(model, target, &op)?;
            let z = cache.aggregate(&model.gamma)?;
            Ok(classify(z.view(), model))
        })?;
        initial.push(t);
        let (_, t) = time(|| {
            let cache = featurize_hops(model, target, &op)?;
            base_predict(&base, model, &cache)
        })?;
        cold.push(t);
    }

    let cache = featurize_hops(model, target, &op)?;
    let mut gamma = model.gamma.clone();
    let mut work = model.clone();
    let mut stages = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    let mut cached = Vec::with_capacity(reps);
    for _ in 0..reps {
        work.gamma.assign(&gamma);
        let ((pred, z), t) = time(|| {
            let out = base_predict(&base, &work, &cache)?;
            Ok((out.prediction, cache.aggregate(&work.gamma)?))
        })?;
        stages[0].push(t);
        cached.push(t);
        let ((_, dz), t) = time(|| surrogate_loss_and_grad_z(config.adapt.loss, z.view(), &work, &pred))?;
        stages[1].push(t);
        let (grad, t) = time(|| Ok(grad_gamma_from_z(&cache, &dz)))?;
        stages[2].push(t);
        let (_, t) = time(|| {
            gamma.scaled_add(-config.adapt.learning_rate, &grad);
            Ok(())
        })?;
        stages[3].push(t);
    }

    let [forward, loss, backward, update] = stages.map(median_ms);
    let initial_inference_ms = median_ms(initial);
    let per_epoch_ms = forward + loss + backward + update;
    Ok(BenchReport {
        scenario: scenario.to_owned(),
        repetitions: reps,
        initial_inference_ms,
        stages: StageMedians {
            forward_ms: forward,
            loss_ms: loss,
            backward_ms: backward,
            update_ms: update,
        },
        per_epoch_ms,
        epoch_to_inference: per_epoch_ms / initial_inference_ms,
        cached_forward_ms: median_ms(cached),
        cold_forward_ms: median_ms(cold),
    })
}

/// The source-classifier prediction on a dataset.
pub fn predict_erm(model: &GprModel, dataset: &Dataset, normalization: Normalization) -> Result<Array2<f64>> {
    let op = PropagationOperator::new(dataset.graph(), normalization);
    let cache = featurize_hops(model, dataset, &op)?;
    let z = cache.aggregate(&model.gamma)?;
    Ok(classify(z.view(), model).1.into_inner())
}
