//! `hfbrt`: dataset generation, training, evaluation, sweeps and benchmarks
//! for hybrid near/far-field channel estimation.
//!
//! Every command writes its effective configuration (`config.toml`) and a
//! `manifest.json` beside its outputs.

mod plot;
mod settings;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use hfbrt::brt::BrtModel;
use hfbrt::config::{PathCount, ScenarioConfig};
use hfbrt::data::{self, SampleGenerator};
use hfbrt::eval::{self, BrtEstimator, Estimator, HyperAxis, LsEstimator, VariantAxis};
use hfbrt::rng::{self, Purpose};
use hfbrt::training::{self, TrainOutputs};
use serde_json::json;
use sha2::{Digest, Sha256};

use plot::Series;
use settings::Settings;

#[derive(Parser)]
#[command(name = "hfbrt", version, about = "Hybrid near/far-field THz channel estimation with block-recurrent transformers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML file with optional [scenario], [model], [train] and [eval] sections.
    /// Keys it sets override the preset; flags override the file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Start from the desk-scale preset (S=1, S̄=16, N_p=8, L=2, hidden 32, N_t=2).
    #[arg(long)]
    toy: bool,
    /// Seed for training and evaluation streams.
    #[arg(long)]
    seed: Option<u64>,
    /// Sample-producer threads.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory [default: runs/<command>].
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a dataset of (y, h) pairs with a JSON sidecar.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Number of samples.
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        /// Fixed SNR in dB instead of the scenario's range.
        #[arg(long, value_name = "DB")]
        snr: Option<f64>,
    },
    /// Train a model from scratch on freshly generated samples.
    Train {
        #[command(flatten)]
        common: Common,
        /// Overrides train.epochs.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Continue training a checkpoint on the configured scenario.
    Finetune {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to start from.
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        /// Overrides train.epochs.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// NMSE versus SNR of a checkpoint and the linear initializer, plus the
    /// per-iteration trace.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate. Without --config its scenario is used.
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        /// Reference curve CSV (`snr_db,nmse_db,label`) to overlay on the plot.
        #[arg(long, value_name = "FILE")]
        baseline: Option<PathBuf>,
    },
    /// Sweep one axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: AxisArg,
        /// Checkpoint to evaluate; the linear initializer alone when absent.
        /// Not used by the iters, heads and depth axes, which train models.
        #[arg(long, value_name = "FILE")]
        model: Option<PathBuf>,
        /// Axis values: SNRs in dB, path counts, bandwidths in GHz, or
        /// hyperparameter values. Defaults depend on the axis.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        /// Evaluation SNR in dB for non-SNR axes [default: drawn from the scenario range].
        #[arg(long, value_name = "DB")]
        snr: Option<f64>,
        /// Bandwidth axis only: also fine-tune the model on every variant.
        #[arg(long)]
        finetune: bool,
    },
    /// Distribution of the number of near-field paths.
    Pmf {
        #[command(flatten)]
        common: Common,
        /// Also estimate it from this many sampled path sets.
        #[arg(long, value_name = "N")]
        mc: Option<usize>,
    },
    /// Float32 inference timing.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to time; a freshly initialized model when absent.
        #[arg(long, value_name = "FILE")]
        model: Option<PathBuf>,
        /// Batch sizes (samples per forward pass).
        #[arg(long, value_delimiter = ',')]
        batch_sizes: Option<Vec<usize>>,
        /// Subcarrier counts (tokens per sample).
        #[arg(long, value_delimiter = ',')]
        subcarriers: Option<Vec<usize>>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Snr,
    Distance,
    Paths,
    Bandwidth,
    Iters,
    Heads,
    Depth,
}

impl AxisArg {
    fn name(self) -> &'static str {
        match self {
            AxisArg::Snr => "snr",
            AxisArg::Distance => "distance",
            AxisArg::Paths => "paths",
            AxisArg::Bandwidth => "bandwidth",
            AxisArg::Iters => "iters",
            AxisArg::Heads => "heads",
            AxisArg::Depth => "depth",
        }
    }
}

/// Errors in arguments or configuration exit with 2, everything else with 1.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<hfbrt::Error> for Failure {
    fn from(e: hfbrt::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type Outcome = Result<(), Failure>;

struct Run {
    command: &'static str,
    out: PathBuf,
    settings: Settings,
    outputs: Vec<String>,
}

impl Run {
    fn start(command: &'static str, common: &Common, base_scenario: Option<ScenarioConfig>, tweak: impl FnOnce(&mut Settings)) -> Result<Self, Failure> {
        let base = if common.config.is_some() { None } else { base_scenario };
        let mut settings = Settings::load(common.config.as_deref(), common.toy, base).map_err(Failure::Usage)?;
        if let Some(seed) = common.seed {
            settings.train.seed = seed;
            settings.eval.seed = seed;
        }
        if let Some(w) = common.workers {
            settings.train.workers = w;
        }
        tweak(&mut settings);
        settings.validate().map_err(Failure::Usage)?;
        let out = common.out.clone().unwrap_or_else(|| Path::new("runs").join(command));
        std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        std::fs::write(out.join("config.toml"), settings.to_toml()).context("writing config.toml")?;
        Ok(Self { command, out, settings, outputs: vec!["config.toml".into()] })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&mut self, name: &str, contents: &str) -> anyhow::Result<()> {
        std::fs::write(self.path(name), contents).with_context(|| format!("writing {name}"))?;
        self.outputs.push(name.into());
        Ok(())
    }

    fn record(&mut self, name: &str) {
        self.outputs.push(name.into());
    }

    fn finish(self) -> Outcome {
        let mut files = BTreeMap::new();
        for name in &self.outputs {
            let bytes = std::fs::read(self.path(name)).with_context(|| format!("reading {name}"))?;
            files.insert(name.clone(), hex(&Sha256::digest(&bytes)));
        }
        let manifest = json!({
            "tool": "hfbrt",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "argv": std::env::args().collect::<Vec<_>>(),
            "config_hash": self.settings.hash_hex(),
            "scenario_hash": self.settings.scenario.hash_hex(),
            "seeds": {
                "train": self.settings.train.seed,
                "eval": self.settings.eval.seed,
                "combiner": self.settings.scenario.combiner_seed,
            },
            "outputs": files,
        });
        std::fs::write(self.path("manifest.json"), serde_json::to_string_pretty(&manifest).map_err(anyhow::Error::from)? + "\n").map_err(anyhow::Error::from)?;
        println!("wrote {}", self.out.display());
        Ok(())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn load_model(path: &Path) -> Result<(BrtModel<f64>, hfbrt::training::CheckpointHeader), Failure> {
    training::load_model(path).with_context(|| format!("loading {}", path.display())).map_err(Failure::Runtime)
}

fn generate(common: Common, samples: usize, snr: Option<f64>) -> Outcome {
    let mut run = Run::start("generate", &common, None, |_| {})?;
    let gen = SampleGenerator::new(&run.settings.scenario)?;
    let seed = run.settings.eval.seed;
    let mut r = rng::stream(seed, Purpose::Dataset, 0, 0);
    let batch = match snr {
        Some(s) => gen.batch_at(samples, s, &mut r)?,
        None => gen.batch(samples, &mut r)?,
    };
    data::write_dataset(&run.path("dataset.bin"), &gen, &batch, seed)?;
    run.record("dataset.bin");
    run.record("dataset.bin.json");
    run.finish()
}

fn train_curve(run: &Run, report: &training::TrainReport) -> anyhow::Result<()> {
    let series = |label: &str, f: fn(&training::EpochRecord) -> f64| Series {
        label: label.into(),
        points: report.epochs.iter().map(|e| (e.epoch as f64, f(e))).collect(),
    };
    plot::line_chart(
        &run.path("train_curve.svg"),
        "Training",
        "epoch",
        "NMSE [dB]",
        &[series("train", |e| e.train_nmse_db), series("validation", |e| e.val_nmse_db), series("linear init (val)", |e| e.val_ls_nmse_db)],
    )
}

fn finish_training(mut run: Run, report: &training::TrainReport) -> Outcome {
    run.record("model.ckpt");
    run.record("train_log.csv");
    run.write("report.json", &(serde_json::to_string_pretty(&report.epochs).map_err(anyhow::Error::from)? + "\n"))?;
    train_curve(&run, report)?;
    run.record("train_curve.svg");
    if let Some(last) = report.last() {
        println!("epoch {}: val NMSE {:.3} dB (linear init {:.3} dB)", last.epoch, last.val_nmse_db, last.val_ls_nmse_db);
    }
    run.finish()
}

fn outputs(run: &Run) -> TrainOutputs {
    TrainOutputs { checkpoint: Some(run.path("model.ckpt")), log_csv: Some(run.path("train_log.csv")) }
}

fn train(common: Common, epochs: Option<usize>) -> Outcome {
    let run = Run::start("train", &common, None, |s| {
        if let Some(e) = epochs {
            s.train.epochs = e;
        }
    })?;
    let gen = SampleGenerator::new(&run.settings.scenario)?;
    let mut model = BrtModel::new(run.settings.model.clone(), run.settings.train.seed)?;
    let report = training::train(&mut model, &gen, &run.settings.train, &outputs(&run))?;
    finish_training(run, &report)
}

fn finetune(common: Common, model_path: PathBuf, epochs: Option<usize>) -> Outcome {
    let (model, header) = load_model(&model_path)?;
    let run = Run::start("finetune", &common, Some(header.scenario), |s| {
        if let Some(e) = epochs {
            s.train.epochs = e;
        }
    })?;
    let gen = SampleGenerator::new(&run.settings.scenario)?;
    let (_, report) = training::fine_tune(&model, &gen, &run.settings.train, &outputs(&run))?;
    finish_training(run, &report)
}

fn sweep_plot(run: &Run, name: &str, table: &eval::SweepTable, extra: Vec<Series>) -> anyhow::Result<()> {
    let mut labels: Vec<String> = table.rows.iter().map(|r| r.label.clone()).collect();
    labels.dedup();
    let mut series: Vec<Series> = labels.iter().map(|l| Series { label: l.clone(), points: table.curve(l) }).collect();
    series.extend(extra);
    plot::line_chart(&run.path(name), "NMSE versus SNR", "SNR [dB]", "NMSE [dB]", &series)
}

fn evaluate(common: Common, model_path: PathBuf, baseline: Option<PathBuf>) -> Outcome {
    let (model, header) = load_model(&model_path)?;
    let mut run = Run::start("evaluate", &common, Some(header.scenario), |_| {})?;
    let gen = SampleGenerator::new(&run.settings.scenario)?;
    let ev = run.settings.eval.clone();
    let brt = BrtEstimator::new(&model);
    let table = eval::nmse_sweep(&[&LsEstimator, &brt], &gen, &ev.snr_grid_db, ev.samples, ev.seed, run.settings.train.workers)?;
    run.write("sweep.csv", &table.to_csv())?;
    let trace = eval::iteration_trace(&model, &gen, None, ev.samples, ev.seed)?;
    run.write("iterations.csv", &trace.to_csv())?;
    let mut extra = Vec::new();
    if let Some(b) = baseline {
        let points = eval::read_baseline_csv(&b)?;
        let mut labels: Vec<String> = points.iter().map(|p| p.label.clone()).collect();
        labels.sort();
        labels.dedup();
        for l in labels {
            let pts = points.iter().filter(|p| p.label == l).map(|p| (p.snr_db, p.nmse_db)).collect();
            extra.push(Series { label: l, points: pts });
        }
    }
    sweep_plot(&run, "nmse_vs_snr.svg", &table, extra)?;
    run.record("nmse_vs_snr.svg");
    print!("{}", table.to_csv());
    run.finish()
}

fn usage(msg: String) -> Failure {
    Failure::Usage(anyhow::anyhow!(msg))
}

fn as_counts(values: &[f64], what: &str) -> Result<Vec<usize>, Failure> {
    values
        .iter()
        .map(|&v| if v >= 1.0 && v.fract() == 0.0 { Ok(v as usize) } else { Err(usage(format!("{what} values must be positive integers, got {v}"))) })
        .collect()
}

fn sweep(common: Common, axis: AxisArg, model_path: Option<PathBuf>, values: Option<Vec<f64>>, snr: Option<f64>, finetune: bool) -> Outcome {
    let loaded = match &model_path {
        Some(p) if !matches!(axis, AxisArg::Iters | AxisArg::Heads | AxisArg::Depth) => Some(load_model(p)?),
        _ => None,
    };
    if finetune && !matches!(axis, AxisArg::Bandwidth) {
        return Err(usage("--finetune applies to the bandwidth axis only".into()));
    }
    if finetune && loaded.is_none() {
        return Err(usage("--finetune needs --model".into()));
    }
    let mut run = Run::start("sweep", &common, loaded.as_ref().map(|(_, h)| h.scenario.clone()), |_| {})?;
    let ev = run.settings.eval.clone();
    let workers = run.settings.train.workers;
    let brt = loaded.as_ref().map(|(m, _)| BrtEstimator::new(m));
    let estimator: &dyn Estimator = match &brt {
        Some(b) => b,
        None => &LsEstimator,
    };
    let name = axis.name();
    match axis {
        AxisArg::Snr => {
            let grid = values.unwrap_or(ev.snr_grid_db.clone());
            let gen = SampleGenerator::new(&run.settings.scenario)?;
            let mut ests: Vec<&dyn Estimator> = vec![&LsEstimator];
            if let Some(b) = &brt {
                ests.push(b);
            }
            let table = eval::nmse_sweep(&ests, &gen, &grid, ev.samples, ev.seed, workers)?;
            run.write("sweep_snr.csv", &table.to_csv())?;
            sweep_plot(&run, "sweep_snr.svg", &table, Vec::new())?;
            run.record("sweep_snr.svg");
        }
        AxisArg::Distance | AxisArg::Paths | AxisArg::Bandwidth => {
            let sc = run.settings.scenario.clone();
            let variants = match (axis, &values) {
                (AxisArg::Paths, Some(v)) => {
                    as_counts(v, "path")?.into_iter().map(|l| (format!("L{l}"), ScenarioConfig { paths: PathCount::Fixed(l), ..sc.clone() })).collect()
                }
                (AxisArg::Bandwidth, Some(v)) => v.iter().map(|&b| (format!("B{b}GHz"), ScenarioConfig { bandwidth_hz: b * 1e9, ..sc.clone() })).collect(),
                (AxisArg::Distance, Some(_)) => return Err(usage("the distance axis uses its standard ranges; drop --values".into())),
                (AxisArg::Distance, None) => eval::standard_variants(&sc, VariantAxis::Distance),
                (AxisArg::Paths, None) => eval::standard_variants(&sc, VariantAxis::Paths),
                _ => eval::standard_variants(&sc, VariantAxis::Bandwidth),
            };
            let table = eval::generalization_sweep(estimator, &sc, &variants, snr, ev.samples, ev.seed, workers)?;
            run.write(&format!("sweep_{name}.csv"), &table.to_csv())?;
            if finetune {
                let (model, _) = loaded.as_ref().expect("checked above");
                let mut csv = String::from("variant,nmse_db,stderr_db,delta_nmse_db,samples\n");
                for (i, (label, variant)) in variants.iter().enumerate() {
                    let gen = SampleGenerator::new(variant)?;
                    let (tuned, _) = training::fine_tune(model, &gen, &run.settings.train, &TrainOutputs::default())?;
                    let per = eval::evaluate_point(&[&BrtEstimator::new(&tuned)], &gen, snr, ev.samples, ev.seed, i as u64 + 1)?;
                    let stats = eval::NmseStats::from_samples(&per[0]);
                    let delta = eval::delta_nmse_db(&stats, &table.reference);
                    csv.push_str(&format!("{label},{:.6},{:.6},{delta:.6},{}\n", stats.nmse_db(), stats.stderr_db(), stats.samples));
                }
                run.write(&format!("sweep_{name}_finetuned.csv"), &csv)?;
            }
            print!("{}", table.to_csv());
        }
        AxisArg::Iters | AxisArg::Heads | AxisArg::Depth => {
            let hyper_axis = match axis {
                AxisArg::Iters => HyperAxis::Iters,
                AxisArg::Heads => HyperAxis::Heads,
                _ => HyperAxis::Depth,
            };
            let defaults: &[f64] = match axis {
                AxisArg::Iters => &[1.0, 2.0, 3.0, 4.0, 5.0],
                AxisArg::Heads => &[1.0, 2.0, 4.0],
                _ => &[1.0, 2.0, 3.0],
            };
            let vals = as_counts(values.as_deref().unwrap_or(defaults), name)?;
            let s = &run.settings;
            let result = eval::hyper_sweep(hyper_axis, &vals, &s.scenario, &s.model, &s.train, snr.unwrap_or(10.0), ev.samples, ev.seed)?;
            run.write(&format!("sweep_{name}.csv"), &result.to_csv())?;
            if let Some(trace) = &result.trace {
                run.write("iteration_trace.csv", &trace.to_csv())?;
                let pts = trace.means_db().into_iter().enumerate().map(|(t, v)| (t as f64, v)).collect();
                plot::line_chart(&run.path("iteration_trace.svg"), "Refinement trace", "iteration", "NMSE [dB]", &[Series { label: "brt".into(), points: pts }])?;
                run.record("iteration_trace.svg");
            }
            print!("{}", result.to_csv());
        }
    }
    run.finish()
}

fn pmf(common: Common, mc: Option<usize>) -> Outcome {
    let mut run = Run::start("pmf", &common, None, |_| {})?;
    let exact = eval::near_field_pmf(&run.settings.scenario)?;
    let empirical = match mc {
        Some(n) => Some(eval::monte_carlo_pmf(&run.settings.scenario, n, run.settings.eval.seed, run.settings.train.workers)?),
        None => None,
    };
    let csv = eval::pmf_csv(&exact, empirical.as_deref());
    print!("{csv}");
    run.write("pmf.csv", &csv)?;
    run.finish()
}

fn bench(common: Common, model_path: Option<PathBuf>, batch_sizes: Option<Vec<usize>>, subcarriers: Option<Vec<usize>>) -> Outcome {
    let loaded = match &model_path {
        Some(p) => Some(load_model(p)?),
        None => None,
    };
    let mut run = Run::start("bench", &common, loaded.as_ref().map(|(_, h)| h.scenario.clone()), |_| {})?;
    let model = match loaded {
        Some((m, _)) => m,
        None => BrtModel::new(run.settings.model.clone(), run.settings.train.seed)?,
    };
    let ev = &run.settings.eval;
    let rows = eval::bench_inference(
        &model,
        batch_sizes.as_deref().unwrap_or(&ev.bench_batch_sizes),
        subcarriers.as_deref().unwrap_or(&ev.bench_subcarriers),
        ev.bench_warmup,
        ev.bench_reps,
        ev.seed,
    )?;
    let csv = eval::bench_csv(&rows);
    print!("{csv}");
    run.write("bench.csv", &csv)?;
    run.finish()
}

fn dispatch(command: Command) -> Outcome {
    match command {
        Command::Generate { common, samples, snr } => generate(common, samples, snr),
        Command::Train { common, epochs } => train(common, epochs),
        Command::Finetune { common, model, epochs } => finetune(common, model, epochs),
        Command::Evaluate { common, model, baseline } => evaluate(common, model, baseline),
        Command::Sweep { common, axis, model, values, snr, finetune } => sweep(common, axis, model, values, snr, finetune),
        Command::Pmf { common, mc } => pmf(common, mc),
        Command::Bench { common, model, batch_sizes, subcarriers } => bench(common, model, batch_sizes, subcarriers),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
