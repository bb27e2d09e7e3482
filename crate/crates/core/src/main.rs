use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use stochastic_gaze::checkpoint::{self, Checkpoint};
use stochastic_gaze::config::{ExperimentConfig, PriorMode};
use stochastic_gaze::dataset_io::{self, DatasetFile};
use stochastic_gaze::error::{Error, Result};
use stochastic_gaze::learning::{
    backward, gradcheck_suite, sgd_step, train, FixedAttention, Objective, OptimState, TrainMode,
};
use stochastic_gaze::metrics::MetricsReport;
use stochastic_gaze::model::{forward_train, ClipSample, ModelDims, ModelParams};
use stochastic_gaze::synthetic::{
    evaluate, generate, oracle_accuracy, run_baseline, Baseline, SynthDataset, ALL_BASELINES,
};

#[derive(Parser)]
#[command(
    name = "stochastic-gaze",
    version,
    about = "Stochastic gaze attention: training, evaluation, gradient checks and baselines"
)]
struct Cli {
    /// Suppress progress output on stdout.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint plus a JSONL training log.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Checkpoint output path (default checkpoint.ckpt).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Dataset manifest; generated from [synth] when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset and write a metrics report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Report output path (JSON); default report.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify analytic gradients against central finite differences.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate a synthetic dataset and write it to disk.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train and evaluate all six variants under identical budgets.
    Baselines {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Comparison output path (JSON); default baselines.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure wall-clock per forward / backward / optimizer step.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let quiet = cli.quiet;
    match cli.command {
        Command::Train { config, seed, out, data } => cmd_train(&config, seed, out, data, quiet),
        Command::Eval { checkpoint, data, out } => cmd_eval(&checkpoint, &data, out, quiet),
        Command::Gradcheck { config, seed } => cmd_gradcheck(config.as_deref(), seed, quiet),
        Command::Synth { config, out, seed } => cmd_synth(&config, &out, seed, quiet),
        Command::Baselines { config, seed, out } => cmd_baselines(&config, seed, out, quiet),
        Command::Bench { config, out } => cmd_bench(config.as_deref(), out, quiet),
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = seed {
        cfg.override_seed(seed);
    }
    Ok(cfg)
}

fn train_mode_for(cfg: &ExperimentConfig) -> TrainMode {
    match cfg.prior_mode {
        PriorMode::Gaze => TrainMode::StochasticGaze(cfg.prior),
        PriorMode::Uniform => TrainMode::StochasticUniform,
        PriorMode::Mle => TrainMode::GazeMle {
            bce_weight: cfg.mle_bce_weight,
            window_frames: cfg.prior.window_frames,
        },
        PriorMode::None => TrainMode::FixedAttention(FixedAttention::Uniform),
    }
}

fn eval_baseline_for(mode: PriorMode) -> Baseline {
    match mode {
        PriorMode::Gaze => Baseline::StochasticWithGaze,
        PriorMode::Uniform => Baseline::StochasticNoGaze,
        PriorMode::Mle => Baseline::GazeMle,
        PriorMode::None => Baseline::UniformPool,
    }
}

fn load_or_generate(cfg: &ExperimentConfig, data: Option<&Path>) -> Result<DatasetFile> {
    match data {
        Some(path) => dataset_io::read_dataset(path),
        None => {
            let ds = generate(&cfg.synth)?;
            Ok(DatasetFile {
                shape: cfg.synth.shape,
                d: cfg.synth.d,
                k: cfg.synth.k,
                n_train: cfg.synth.n_train,
                samples: ds.samples,
            })
        }
    }
}

fn cmd_train(
    config_path: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
    data: Option<PathBuf>,
    quiet: bool,
) -> Result<()> {
    let cfg = load_config(config_path, seed)?;
    let dataset = load_or_generate(&cfg, data.as_deref())?;
    if dataset.n_train == 0 {
        return Err(Error::Validation("dataset has no training split".into()));
    }
    let dims = ModelDims {
        d: dataset.d,
        h: cfg.model.h,
        c: cfg.model.c,
        k: dataset.k,
    };
    let mode = train_mode_for(&cfg);
    let (params, log) = train(dataset.train_samples(), dims, &cfg.train, &mode)?;

    let out_path = out.unwrap_or_else(|| PathBuf::from("checkpoint.ckpt"));
    let final_metrics = log
        .last()
        .map(|e| serde_json::to_string(e).expect("log serializes"))
        .unwrap_or_default();
    checkpoint::save(
        &out_path,
        &Checkpoint {
            epoch: cfg.train.total_epochs,
            params,
            config_snapshot: cfg.to_toml(),
            final_metrics,
        },
    )?;

    let mut log_os = out_path.as_os_str().to_owned();
    log_os.push(".log.jsonl");
    let log_lines: String = log
        .iter()
        .map(|e| serde_json::to_string(e).expect("log serializes") + "\n")
        .collect();
    std::fs::write(PathBuf::from(log_os), &log_lines)?;

    if !quiet {
        for entry in &log {
            println!(
                "epoch {:>3}  lr {:.5}  nll {:.4}  kl {:.4}  total {:.4}  acc {:.4}",
                entry.epoch, entry.lr, entry.nll, entry.kl, entry.total, entry.accuracy
            );
        }
        println!("wrote checkpoint to {}", out_path.display());
    }
    Ok(())
}

fn cmd_eval(
    checkpoint_path: &Path,
    data_path: &Path,
    out: Option<PathBuf>,
    quiet: bool,
) -> Result<()> {
    let ckpt = checkpoint::load(checkpoint_path)?;
    let cfg = ExperimentConfig::from_toml(&ckpt.config_snapshot)?;
    let dataset = dataset_io::read_dataset(data_path)?;
    let dims = ckpt.params.dims;
    if dims.d != dataset.d || dims.k != dataset.k {
        return Err(Error::Validation(format!(
            "checkpoint dims (d={}, k={}) do not match dataset (d={}, k={})",
            dims.d, dims.k, dataset.d, dataset.k
        )));
    }
    let test = if dataset.n_train < dataset.samples.len() {
        dataset.test_samples()
    } else {
        &dataset.samples
    };
    let baseline = eval_baseline_for(cfg.prior_mode);
    let report = evaluate(baseline, &ckpt.params, test, &cfg.run_config(), dims.k, None)?;

    if !quiet {
        print_report(baseline.name(), &report);
    }
    let out_path = out.unwrap_or_else(|| PathBuf::from("report.json"));
    std::fs::write(&out_path, serde_json::to_string_pretty(&report).unwrap())?;
    if !quiet {
        println!("wrote report to {}", out_path.display());
    }
    Ok(())
}

fn cmd_gradcheck(config_path: Option<&Path>, seed: Option<u64>, quiet: bool) -> Result<()> {
    let cfg = match config_path {
        Some(p) => load_config(p, seed)?,
        None => {
            let mut c = ExperimentConfig::default();
            if let Some(s) = seed {
                c.override_seed(s);
            }
            c
        }
    };
    let reports = gradcheck_suite(20, 1e-5, cfg.train.seed)?;
    let mut worst = 0.0f64;
    for (i, r) in reports.iter().enumerate() {
        if !quiet {
            println!("config {i:>2}: max rel error {:.3e}", r.max_rel_error);
            for (group, err) in &r.group_errors {
                println!("    {group:<22} {err:.3e}");
            }
        }
        worst = worst.max(r.max_rel_error);
    }
    if !quiet {
        println!("worst relative error: {worst:.3e}");
    }
    if worst >= 1e-4 {
        return Err(Error::Numeric(format!(
            "gradient check failed: max relative error {worst:.3e} >= 1e-4"
        )));
    }
    Ok(())
}

fn cmd_synth(config_path: &Path, out: &Path, seed: Option<u64>, quiet: bool) -> Result<()> {
    let cfg = load_config(config_path, seed)?;
    let ds = generate(&cfg.synth)?;
    let file = DatasetFile {
        shape: cfg.synth.shape,
        d: cfg.synth.d,
        k: cfg.synth.k,
        n_train: cfg.synth.n_train,
        samples: ds.samples,
    };
    dataset_io::write_dataset(out, &file)?;
    if !quiet {
        println!(
            "wrote {} samples ({} train / {} test) to {}",
            file.samples.len(),
            file.n_train,
            file.samples.len() - file.n_train,
            out.display()
        );
    }
    Ok(())
}

fn cmd_baselines(
    config_path: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
    quiet: bool,
) -> Result<()> {
    let cfg = load_config(config_path, seed)?;
    let ds = generate(&cfg.synth)?;
    let run_cfg = cfg.run_config();
    let oracle = oracle_accuracy(&ds);

    let mut rows = Vec::new();
    for baseline in ALL_BASELINES {
        let outcome = run_baseline(baseline, &ds, &run_cfg)?;
        if !quiet {
            print_comparison_row(baseline.name(), &outcome.report);
        }
        rows.push(outcome);
    }
    if !quiet {
        println!("{:<22} oracle accuracy {oracle:.4}", "(reference)");
    }

    #[derive(serde::Serialize)]
    struct Comparison<'a> {
        oracle_accuracy: f64,
        baselines: Vec<&'a stochastic_gaze::synthetic::BaselineOutcome>,
    }
    let out_path = out.unwrap_or_else(|| PathBuf::from("baselines.json"));
    let payload = Comparison {
        oracle_accuracy: oracle,
        baselines: rows.iter().collect(),
    };
    std::fs::write(&out_path, serde_json::to_string_pretty(&payload).unwrap())?;
    if !quiet {
        println!("wrote comparison to {}", out_path.display());
    }
    Ok(())
}

fn cmd_bench(config_path: Option<&Path>, out: Option<PathBuf>, quiet: bool) -> Result<()> {
    let cfg = match config_path {
        Some(p) => load_config(p, None)?,
        None => ExperimentConfig::default(),
    };
    let synth = stochastic_gaze::synthetic::SynthConfig {
        n_train: 64,
        n_test: 0,
        ..cfg.synth
    };
    let ds: SynthDataset = generate(&synth)?;
    let dims = ModelDims {
        d: synth.d,
        h: cfg.model.h,
        c: cfg.model.c,
        k: synth.k,
    };
    let params = ModelParams::init(dims, cfg.train.seed)?;

    let time_per = |f: &mut dyn FnMut()| -> f64 {
        let iters = 200;
        let start = Instant::now();
        for _ in 0..iters {
            f();
        }
        start.elapsed().as_secs_f64() * 1e3 / iters as f64
    };

    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let sample: &ClipSample = &ds.samples[0];
    let forward_ms = time_per(&mut || {
        forward_train(sample, &params, cfg.train.tau, &mut rng, 0.0, false).unwrap();
    });
    let output =
        forward_train(sample, &params, cfg.train.tau, &mut rng, 0.0, false)?;
    let backward_ms = time_per(&mut || {
        backward(sample, &params, &output, &Objective::default()).unwrap();
    });
    let grads = backward(sample, &params, &output, &Objective::default())?;
    let mut step_params = params.clone();
    let mut state = OptimState::new(&step_params, cfg.train.lr0);
    let step_ms = time_per(&mut || {
        sgd_step(
            &mut step_params,
            &grads,
            &mut state,
            cfg.train.lr0,
            cfg.train.momentum,
            cfg.train.weight_decay,
        );
    });

    if !quiet {
        println!("forward_train  {forward_ms:.4} ms");
        println!("backward       {backward_ms:.4} ms");
        println!("sgd_step       {step_ms:.4} ms");
    }
    if let Some(out_path) = out {
        let payload = serde_json::json!({
            "forward_train_ms": forward_ms,
            "backward_ms": backward_ms,
            "sgd_step_ms": step_ms,
        });
        std::fs::write(&out_path, serde_json::to_string_pretty(&payload).unwrap())?;
    }
    Ok(())
}

fn print_report(name: &str, report: &MetricsReport) {
    println!("variant: {name}");
    match &report.best_f1 {
        Some(b) => println!(
            "  gaze best F1 {:.4}  (P {:.4}, R {:.4}, threshold {:.6})",
            b.f1, b.precision, b.recall, b.threshold
        ),
        None => println!("  gaze: no valid evaluation windows"),
    }
    println!("  mean class accuracy {:.4}", report.mean_class_accuracy);
    println!("  instance accuracy   {:.4}", report.instance_accuracy);
    for (k, acc) in &report.topk {
        println!("  top-{k} accuracy      {acc:.4}");
    }
}

fn print_comparison_row(name: &str, report: &MetricsReport) {
    let f1 = report
        .best_f1
        .as_ref()
        .map(|b| format!("{:.4}", b.f1))
        .unwrap_or_else(|| "  n/a".into());
    println!(
        "{name:<22} gaze F1 {f1}  mca {:.4}  top1 {:.4}",
        report.mean_class_accuracy,
        report.topk.get(&1).copied().unwrap_or(f64::NAN)
    );
}
