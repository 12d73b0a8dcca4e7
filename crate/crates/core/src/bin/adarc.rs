use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use adarc::adapt::{adapt, convergence_report, AdaptConfig};
use adarc::config::{FileConfig, KEYS_HELP};
use adarc::csbm::{drop_homophilic_edges, generate, CsbmParams, Preset, Scenario};
use adarc::harness::{
    bench, decompose_gap, prepare_seed, run_scenario, sweep, write_sweep_csv, ExperimentConfig, Method, SweepAxis,
};
use adarc::losses::LossKind;
use adarc::model::{GprModel, ModelDims};
use adarc::pretrain::{evaluate, prediction_accuracy, train_source};
use adarc::theory::theory_grid;
use adarc::{Dataset, Error, PropagationOperator};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "adarc", version, about = "Hop-weight test-time adaptation on CSBM graphs", after_help = KEYS_HELP)]
struct Cli {
    /// Base seed (default 0, or `seed` from --config); per-run seeds are derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory, depending on the subcommand.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// key = value configuration file (keys listed below).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a CSBM dataset directory (presets write `source/` and `target/`).
    Generate(GenerateArgs),
    /// Train a model on a dataset and write a checkpoint to --out.
    Pretrain(PretrainArgs),
    /// Adapt hop weights on a dataset; predictions CSV goes to --out.
    Adapt(AdaptArgs),
    /// Accuracy of a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Generate, pretrain and score methods for one preset; JSON report.
    Run(RunArgs),
    /// One report per grid value along an axis.
    Sweep(SweepArgs),
    /// Split the accuracy gap into representation and classifier parts.
    Decompose(DecomposeArgs),
    /// Median stage timings (wall-clock, not reproducible).
    Bench(BenchArgs),
    /// Closed-form and Monte-Carlo accuracy over a (d, h, gamma) grid as CSV.
    Theory(TheoryArgs),
}

#[derive(Args)]
struct PresetArgs {
    /// homo2hetero | hetero2homo | high2low | low2high
    #[arg(long)]
    preset: Scenario,
    /// Shift the target class centres.
    #[arg(long)]
    attribute_shift: bool,
}

#[derive(Args)]
struct SeedsArgs {
    /// Number of seeds, counted up from --seed.
    #[arg(long, default_value_t = 5)]
    num_seeds: u64,
}

impl SeedsArgs {
    fn seeds(&self, base: u64) -> Vec<u64> {
        (0..self.num_seeds).map(|i| base + i).collect()
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, conflicts_with_all = ["from", "degree"])]
    preset: Option<Scenario>,
    #[arg(long, requires = "preset")]
    attribute_shift: bool,
    /// Existing dataset directory to derive from.
    #[arg(long, requires = "drop_homophilic")]
    from: Option<PathBuf>,
    /// Fraction of same-class edges to remove from --from.
    #[arg(long)]
    drop_homophilic: Option<f64>,
    #[arg(long)]
    degree: Option<f64>,
    #[arg(long, requires = "degree")]
    homophily: Option<f64>,
    #[arg(long, default_value_t = adarc::csbm::PRESET_NODES)]
    nodes: usize,
    #[arg(long, default_value_t = adarc::csbm::PRESET_DIM)]
    dim: usize,
    /// Per-entry class-centre value.
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    /// Per-entry shift added to both centres.
    #[arg(long, default_value_t = 0.0)]
    delta_mu: f64,
    #[arg(long, default_value_t = 1.0)]
    noise_std: f64,
}

#[derive(Args)]
struct PretrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Per-epoch CSV (epoch, train_loss, val_acc).
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct AdaptArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// erm | tent | t3a
    #[arg(long)]
    base_tta: Option<String>,
    #[arg(long)]
    loss: Option<LossKind>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Per-epoch CSV (loss, squared gradient norm, accuracy, gamma).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Also write the adapted checkpoint here.
    #[arg(long)]
    save_ckpt: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Mask name; every node when omitted.
    #[arg(long)]
    mask: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    preset: PresetArgs,
    /// Comma-separated methods, e.g. erm,erm+adarc,tent+adarc.
    #[arg(long, value_delimiter = ',', default_value = "erm,erm+adarc")]
    methods: Vec<Method>,
    #[command(flatten)]
    seeds: SeedsArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    preset: PresetArgs,
    /// shift_level | lr_epochs | hops_k | loss_kind
    #[arg(long)]
    axis: SweepAxis,
    /// Comma-separated grid; lr_epochs values are lr:epochs.
    #[arg(long, value_delimiter = ',', required = true)]
    grid: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "erm,erm+adarc")]
    methods: Vec<Method>,
    #[command(flatten)]
    seeds: SeedsArgs,
    /// Summary CSV (grid value, method, mean, sd).
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct DecomposeArgs {
    /// Pretrain on the preset source instead of loading --ckpt.
    #[arg(long, conflicts_with_all = ["ckpt", "source", "target"])]
    preset: Option<Scenario>,
    #[arg(long, requires = "preset")]
    attribute_shift: bool,
    /// Replace the preset source structure with the target's.
    #[arg(long, requires = "preset")]
    no_structure_shift: bool,
    #[arg(long, requires_all = ["source", "target"])]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    source: Option<PathBuf>,
    #[arg(long)]
    target: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    preset: PresetArgs,
    /// Pretrained checkpoint; a freshly initialized model otherwise.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long, default_value_t = adarc::harness::BENCH_MIN_REPS)]
    reps: usize,
}

#[derive(Args)]
struct TheoryArgs {
    #[arg(long, value_delimiter = ',', default_value = "2,5,10")]
    degrees: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.5,0.8")]
    homophilies: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "-1,-0.5,0,0.5,1")]
    gammas: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    mu_norm: f64,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_CONFIG };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<adarc::adapt::AdaptFailure> for Failure {
    fn from(f: adarc::adapt::AdaptFailure) -> Self {
        let message = f.to_string();
        Failure {
            message,
            ..Failure::from(f.error)
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        message: message.into(),
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> CliResult {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    let out = cli.out.as_deref();
    match cli.command {
        Command::Generate(a) => cmd_generate(a, seed, &file.experiment, out),
        Command::Pretrain(a) => cmd_pretrain(a, seed, &file.experiment, out),
        Command::Adapt(a) => cmd_adapt(a, file, out),
        Command::Eval(a) => cmd_eval(a, &file.experiment, out),
        Command::Run(a) => {
            let preset = preset_from(&a.preset, &file.experiment);
            let report = run_scenario(&preset, &a.methods, &a.seeds.seeds(seed), &file.experiment)?;
            emit(out, &report.to_json()?)
        }
        Command::Sweep(a) => {
            let preset = preset_from(&a.preset, &file.experiment);
            let points = sweep(a.axis, &a.grid, &preset, &a.methods, &a.seeds.seeds(seed), &file.experiment)?;
            if let Some(path) = &a.csv {
                write_sweep_csv(a.axis, &points, BufWriter::new(File::create(path)?))?;
            }
            emit(out, &serde_json::to_string_pretty(&points).map_err(Error::from)?)
        }
        Command::Decompose(a) => cmd_decompose(a, seed, &file.experiment, out),
        Command::Bench(a) => cmd_bench(a, seed, &file.experiment, out),
        Command::Theory(a) => {
            let rows = theory_grid(&a.degrees, &a.homophilies, &a.gammas, a.mu_norm, a.dim, a.trials, seed)?;
            let mut buf = Vec::new();
            {
                let mut w = csv::Writer::from_writer(&mut buf);
                for row in &rows {
                    w.serialize(row).map_err(Error::from)?;
                }
                w.flush()?;
            }
            emit(out, &String::from_utf8_lossy(&buf))
        }
    }
}

fn preset_from(args: &PresetArgs, config: &ExperimentConfig) -> Preset {
    config.preset(args.preset, args.attribute_shift)
}

/// Writes `text` to `out`, or to stdout when no path is given.
fn emit(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(path) => {
            let mut f = File::create(path)?;
            f.write_all(text.as_bytes())?;
            if !text.ends_with('\n') {
                f.write_all(b"\n")?;
            }
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            let written = writeln!(stdout, "{}", text.trim_end());
            // A closed pipe (e.g. `| head`) is not a failure of the run.
            match written {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(e.into()),
                _ => {}
            }
        }
    }
    Ok(())
}

fn require_out(out: Option<&Path>, what: &str) -> CliResult<PathBuf> {
    out.map(Path::to_path_buf)
        .ok_or_else(|| usage(format!("--out is required for {what}")))
}

fn cmd_generate(a: GenerateArgs, seed: u64, config: &ExperimentConfig, out: Option<&Path>) -> CliResult {
    let dir = require_out(out, "generate")?;
    if let Some(scenario) = a.preset {
        let preset = config.preset(scenario, a.attribute_shift);
        generate(&preset.source_params(seed))?.save(&dir.join("source"))?;
        generate(&preset.target_params(seed))?.save(&dir.join("target"))?;
        println!("wrote {} source and target to {}", preset.id(), dir.display());
        return Ok(());
    }
    if let Some(from) = &a.from {
        let fraction = a.drop_homophilic.unwrap_or(0.0);
        let ds = drop_homophilic_edges(&Dataset::load(from)?, fraction, seed)?;
        ds.save(&dir)?;
        println!("wrote {} nodes, {} edges to {}", ds.num_nodes(), ds.graph().num_edges(), dir.display());
        return Ok(());
    }
    let (Some(degree), Some(homophily)) = (a.degree, a.homophily) else {
        return Err(usage("generate needs --preset, --from, or --degree with --homophily"));
    };
    let mut params = CsbmParams::uniform(a.nodes, a.dim, a.mu, a.delta_mu, degree, homophily, seed);
    params.noise_std = a.noise_std;
    let ds = generate(&params)?;
    ds.save(&dir)?;
    println!("wrote {} nodes, {} edges to {}", ds.num_nodes(), ds.graph().num_edges(), dir.display());
    Ok(())
}

fn cmd_pretrain(a: PretrainArgs, seed: u64, config: &ExperimentConfig, out: Option<&Path>) -> CliResult {
    let ckpt = require_out(out, "pretrain")?;
    let ds = Dataset::load(&a.data)?;
    let dims = ModelDims {
        input: ds.feature_dim(),
        hidden: config.hidden,
        classes: ds.num_classes(),
        hops: config.hops,
    };
    let op = PropagationOperator::new(ds.graph(), config.normalization);
    let train = adarc::pretrain::TrainConfig { seed, ..config.train };
    let (model, history) = train_source(GprModel::init(dims, seed), &ds, &op, &train)?;
    model.save(&ckpt)?;
    if let Some(path) = &a.history {
        history.write_csv(BufWriter::new(File::create(path)?))?;
    }
    println!(
        "best val accuracy {:.4} at epoch {} of {}",
        history.best_val_acc,
        history.best_epoch,
        history.records.len()
    );
    Ok(())
}

fn cmd_adapt(a: AdaptArgs, mut file: FileConfig, out: Option<&Path>) -> CliResult {
    if let Some(base) = &a.base_tta {
        file.set_base(base)?;
    }
    let config = &file.experiment;
    let adapt_config = AdaptConfig {
        learning_rate: a.lr.unwrap_or(config.adapt.learning_rate),
        epochs: a.epochs.unwrap_or(config.adapt.epochs),
        loss: a.loss.unwrap_or(config.adapt.loss),
        track_accuracy: true,
        ..config.adapt
    };
    let model = GprModel::load(&a.ckpt)?;
    let ds = Dataset::load(&a.data)?;
    let op = PropagationOperator::new(ds.graph(), config.normalization);
    let before = evaluate(&model, &ds, &op, None)?;
    let outcome = adapt(&model, &ds, &op, &adapt_config)?;
    if let Some(path) = &a.trace {
        outcome.trace.write_csv(BufWriter::new(File::create(path)?))?;
    }
    if let Some(path) = &a.save_ckpt {
        outcome.model.save(path)?;
    }
    if let Some(path) = out {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        let classes = outcome.prediction.num_classes();
        let mut header = vec!["node".to_string(), "predicted".into()];
        header.extend((0..classes).map(|c| format!("p{c}")));
        w.write_record(&header).map_err(Error::from)?;
        let predicted = outcome.prediction.argmax();
        for (i, row) in outcome.prediction.probs().rows().into_iter().enumerate() {
            let mut rec = vec![i.to_string(), predicted[i].to_string()];
            rec.extend(row.iter().map(|p| p.to_string()));
            w.write_record(&rec).map_err(Error::from)?;
        }
        w.flush()?;
    }
    let after = prediction_accuracy(&outcome.prediction, ds.labels(), None)?;
    let report = convergence_report(&outcome.trace)?;
    println!(
        "accuracy {before:.4} -> {after:.4}; mean squared gradient norm {:.3e}; loss {:.4} -> {:.4}",
        report.mean_grad_norm_sq,
        report.losses.first().copied().unwrap_or(f64::NAN),
        report.losses.last().copied().unwrap_or(f64::NAN),
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs, config: &ExperimentConfig, out: Option<&Path>) -> CliResult {
    let model = GprModel::load(&a.ckpt)?;
    let ds = Dataset::load(&a.data)?;
    let mask = match &a.mask {
        Some(name) => Some(ds.mask(name).ok_or_else(|| usage(format!("dataset has no `{name}` mask")))?),
        None => None,
    };
    let op = PropagationOperator::new(ds.graph(), config.normalization);
    let acc = evaluate(&model, &ds, &op, mask)?;
    let json = serde_json::json!({
        "mask": a.mask.as_deref().unwrap_or("all"),
        "accuracy": acc,
    });
    emit(out, &serde_json::to_string_pretty(&json).map_err(Error::from)?)
}

fn cmd_decompose(a: DecomposeArgs, seed: u64, config: &ExperimentConfig, out: Option<&Path>) -> CliResult {
    let report = if let Some(scenario) = a.preset {
        let mut preset = config.preset(scenario, a.attribute_shift);
        if a.no_structure_shift {
            preset.source_override = Some(scenario.target_structure());
        }
        let run = prepare_seed(&preset, seed, config)?;
        decompose_gap(&run.model, &run.source, &run.target, config.normalization)?
    } else {
        let (Some(ckpt), Some(source), Some(target)) = (&a.ckpt, &a.source, &a.target) else {
            return Err(usage("decompose needs --preset or all of --ckpt, --source, --target"));
        };
        let model = GprModel::load(ckpt)?;
        decompose_gap(&model, &Dataset::load(source)?, &Dataset::load(target)?, config.normalization)?
    };
    emit(out, &serde_json::to_string_pretty(&report).map_err(Error::from)?)
}

fn cmd_bench(a: BenchArgs, seed: u64, config: &ExperimentConfig, out: Option<&Path>) -> CliResult {
    let preset = preset_from(&a.preset, config);
    let target = generate(&preset.target_params(seed))?;
    let model = match &a.ckpt {
        Some(path) => GprModel::load(path)?,
        None => GprModel::init(
            ModelDims {
                input: target.feature_dim(),
                hidden: config.hidden,
                classes: target.num_classes(),
                hops: config.hops,
            },
            seed,
        ),
    };
    let report = bench(&preset.id(), &model, &target, config, a.reps)?;
    emit(out, &serde_json::to_string_pretty(&report).map_err(Error::from)?)
}
