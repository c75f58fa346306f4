//! `armot` command-line harness.
//!
//! Exit codes: 0 success, 1 verification failure, 2 input error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use armot::harness::{
    generate_scene, sample_expression, train_toy, write_scene, ExpressionSpec, SceneSpec, StepLoss, ToyEval,
    TrainConfig,
};
use armot::metrics::{aggregate_report, evaluate_all, load_eval_dir, write_mot};
use armot::params::Parameters;
use armot::tensor::OpKind;
use armot::verify::{gradient_suite, spectral_suite, GRAD_SEEDS};
use armot::Error;

#[derive(Parser)]
#[command(name = "armot", version, about = "Auditory referring MOT core: self-checks, toy training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Finite-difference check of every differentiable op and pipeline.
    Gradcheck {
        #[arg(long, default_value_t = GRAD_SEEDS)]
        seeds: u64,
        /// Corrupt the backward rule of this op (e.g. `matmul`); the run
        /// must then fail.
        #[arg(long, value_name = "OP")]
        inject_fault: Option<String>,
        /// Write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// FFT oracle, inverse round trip and convolution theorem.
    SpectraTest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a scene and write its ground truth as MOT files.
    Simulate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = SceneSpec::default().n_objects)]
        objects: usize,
        #[arg(long, default_value_t = SceneSpec::default().n_frames)]
        frames: u32,
        /// Number of sampled expressions (duplicates are merged).
        #[arg(long, default_value_t = 3)]
        expressions: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the toy referring tracker from a JSON config.
    TrainToy {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score `<dir>/<expression>/{gt,pred}.txt` and write metrics.
    Eval {
        dir: PathBuf,
        /// Report directory; defaults to `<dir>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Verification(String),
    Input(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFinite(_) => Failure::Verification(e.to_string()),
            other => Failure::Input(other.to_string()),
        }
    }
}

type CliResult = Result<(), Failure>;

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn gradcheck(seeds: u64, fault: Option<String>, out: Option<PathBuf>) -> CliResult {
    let fault = match fault {
        None => None,
        Some(name) => match OpKind::from_name(&name) {
            Some(k) => Some(k),
            None => {
                let known: Vec<_> = OpKind::differentiable().map(OpKind::name).collect();
                return Err(Failure::Input(format!("unknown op `{name}`; expected one of {}", known.join(", "))));
            }
        },
    };
    let report = gradient_suite(seeds, fault)?;
    if let Some(path) = out {
        write_json(&path, &report)?;
    }
    let n = report.cases.len();
    let failed: Vec<_> = report.failures().collect();
    for c in &failed {
        println!(
            "FAIL {} seed {}: max rel err {:.3e} (worst `{}`)",
            c.name, c.seed, c.max_rel_err, c.worst_param
        );
    }
    for op in &report.uncovered {
        println!("FAIL no case exercises `{op}`");
    }
    println!(
        "gradcheck: {}/{} cases within {:.0e}, max rel err {:.3e}, {:.2}s",
        n - failed.len(),
        n,
        report.tolerance,
        report.max_rel_err,
        report.seconds
    );
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Verification("gradient check failed".into()))
    }
}

fn spectra_test(seed: u64, out: Option<PathBuf>) -> CliResult {
    let report = spectral_suite(seed)?;
    if let Some(path) = out {
        write_json(&path, &report)?;
    }
    for c in &report.checks {
        println!(
            "{} {} n={} trials={} max abs err {:.3e}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.length,
            c.trials,
            c.max_abs_err
        );
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Verification("spectral suite failed".into()))
    }
}

fn simulate(layout: SceneSpec, expressions: usize, out: &Path) -> CliResult {
    if expressions == 0 {
        return Err(Failure::Input("need at least one expression".into()));
    }
    let scene = generate_scene(&layout)?;
    let exprs: Vec<ExpressionSpec> = (0..expressions as u64)
        .map(|i| sample_expression(&scene, layout.seed.wrapping_mul(1000).wrapping_add(i)))
        .collect();
    let names = write_scene(out, &scene, &exprs)?;
    log::info!("wrote {} expression(s) to {}", names.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainReport<'a> {
    config: &'a TrainConfig,
    expression: String,
    first_loss: f64,
    final_loss: f64,
    eval: ToyEval,
    predictions: usize,
}

fn loss_csv(trace: &[StepLoss]) -> String {
    let mut s = String::from("step,total,cls,l1,iou,act\n");
    for l in trace {
        let t = &l.terms;
        let _ = writeln!(s, "{},{},{},{},{},{}", l.step, l.total, t.cls, t.l1, t.iou, t.act);
    }
    s
}

fn train(config: &Path, out: &Path) -> CliResult {
    let text = std::fs::read_to_string(config).map_err(|e| Failure::Input(format!("{}: {e}", config.display())))?;
    let cfg = TrainConfig::from_json(&text)?;
    let scene = generate_scene(&cfg.scene_spec())?;
    let expression = sample_expression(&scene, cfg.seed);
    let result = train_toy(&cfg, &scene, &expression)?;
    write_scene(out, &scene, &[expression])?;
    write_mot(&out.join(expression.name()).join("pred.txt"), &result.predictions)?;
    result.model.to_param_file().write(&out.join("params.json"))?;
    std::fs::write(out.join("loss.csv"), loss_csv(&result.loss_trace)).map_err(Error::from)?;
    let first = result.loss_trace.first().map(|l| l.total).unwrap_or(f64::NAN);
    let last = result.loss_trace.last().map(|l| l.total).unwrap_or(f64::NAN);
    let report = TrainReport {
        config: &cfg,
        expression: expression.name(),
        first_loss: first,
        final_loss: last,
        eval: result.eval,
        predictions: result.predictions.len(),
    };
    write_json(&out.join("train_report.json"), &report)?;
    println!(
        "train-toy `{}`: loss {first:.6} -> {last:.6}, referring accuracy {:.4}, mean chi +{:.4} / -{:.4}",
        report.expression, result.eval.referring_accuracy, result.eval.mean_chi_positive, result.eval.mean_chi_negative
    );
    Ok(())
}

fn eval(dir: &Path, out: Option<PathBuf>) -> CliResult {
    let evals = load_eval_dir(dir)?;
    let report = aggregate_report(evaluate_all(&evals)?)?;
    let out = out.unwrap_or_else(|| dir.to_path_buf());
    std::fs::create_dir_all(&out).map_err(Error::from)?;
    std::fs::write(out.join("metrics.json"), report.to_json()?).map_err(Error::from)?;
    std::fs::write(out.join("metrics.csv"), report.to_csv()).map_err(Error::from)?;
    let opt = |v: Option<f64>| v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "undefined".into());
    println!(
        "eval: {} expression(s) HOTA {:.4} DetA {:.4} AssA {:.4} MOTA {} IDF1 {}",
        report.expressions.len(),
        report.hota,
        report.det_a,
        report.ass_a,
        opt(report.mota),
        opt(report.idf1)
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Gradcheck {
            seeds,
            inject_fault,
            out,
        } => gradcheck(seeds, inject_fault, out),
        Command::SpectraTest { seed, out } => spectra_test(seed, out),
        Command::Simulate {
            seed,
            objects,
            frames,
            expressions,
            out,
        } => simulate(
            SceneSpec {
                n_objects: objects,
                n_frames: frames,
                seed,
            },
            expressions,
            &out,
        ),
        Command::TrainToy { config, out } => train(&config, &out),
        Command::Eval { dir, out } => eval(&dir, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
