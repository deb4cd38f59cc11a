//! `lcsac` command implementations.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 runtime abort.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use lcsac::codec::{decode_checkpoint, encode_checkpoint};
use lcsac::config::RunConfig;
use lcsac::envs::Environment;
use lcsac::metrics::write_atomic;
use lcsac::plot::{read_curve_csv, render_svg};
use lcsac::trainer::{ab_experiment, evaluate, load_policy, stream, streams, RunOptions, Trainer};
use lcsac::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "lcsac", version, about = "Latent-context soft actor-critic")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train one run and write metrics, summary, checkpoints and the resolved config.
    Train(TrainArgs),
    /// Evaluate a checkpoint with the deterministic policy.
    Eval(EvalArgs),
    /// Run two configs over several seeds and compare final returns.
    Compare(CompareArgs),
    /// Plot eval curves from metrics or curve CSVs as SVG.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// JSON config; omitted fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (default: config out_dir, else $LCSAC_OUT or ./runs).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dotted overrides such as `--sac.alpha 0.1` or `--seed 7`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
    pub overrides: Vec<String>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub episodes: usize,
    /// Write the result as JSON here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
    pub overrides: Vec<String>,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[arg(long = "a")]
    pub config_a: PathBuf,
    #[arg(long = "b")]
    pub config_b: PathBuf,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2, 3, 4])]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "A")]
    pub label_a: String,
    #[arg(long, default_value = "B")]
    pub label_b: String,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Overrides applied to both arms.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
    pub overrides: Vec<String>,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(required = true)]
    pub csv: Vec<PathBuf>,
}

/// Failure carrying the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

impl Failure {
    fn config(e: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: EXIT_CONFIG,
            error: e.into(),
        }
    }

    fn runtime(e: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: EXIT_RUNTIME,
            error: e.into(),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Turns `--a.b v`, `--a.b=v` and `a.b=v` into `(key, value)` pairs.
pub fn parse_overrides(raw: &[String]) -> anyhow::Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = raw.iter();
    while let Some(tok) = it.next() {
        let body = tok.strip_prefix("--").unwrap_or(tok);
        if let Some((k, v)) = body.split_once('=') {
            out.push((k.to_string(), v.to_string()));
        } else if tok.starts_with("--") {
            let v = it.next().ok_or_else(|| anyhow!("override {tok} is missing a value"))?;
            out.push((body.to_string(), v.clone()));
        } else {
            return Err(anyhow!("unexpected argument {tok:?}; overrides look like --key value"));
        }
    }
    Ok(out)
}

fn read_config(path: Option<&Path>, overrides: &[String]) -> std::result::Result<RunConfig, Failure> {
    let text = match path {
        Some(p) => fs::read_to_string(p)
            .with_context(|| format!("cannot read config {}", p.display()))
            .map_err(Failure::config)?,
        None => String::new(),
    };
    let ov = parse_overrides(overrides).map_err(Failure::config)?;
    RunConfig::load(&text, &ov)
        .map_err(|e| {
            let origin = path.map_or("defaults".to_string(), |p| p.display().to_string());
            anyhow!("{e} ({origin})")
        })
        .map_err(Failure::config)
}

fn output_root() -> PathBuf {
    std::env::var_os("LCSAC_OUT").map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

fn write(path: &Path, bytes: &[u8]) -> CmdResult {
    write_atomic(path, bytes)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::runtime)
}

fn json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serialisable");
    s.push('\n');
    s
}

pub fn cmd_train(args: &TrainArgs) -> CmdResult {
    let cfg = read_config(args.config.as_deref(), &args.overrides)?;
    let out = args
        .out
        .clone()
        .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| output_root().join(format!("train-{}", &cfg.hash_hex()[..8])));
    write(&out.join("resolved-config.json"), cfg.to_json_pretty().as_bytes())?;
    let opts = RunOptions {
        record_updates: false,
        checkpoint_dir: Some(out.join("checkpoints")),
    };
    let mut trainer = Trainer::from_config(cfg, opts).map_err(Failure::config)?;
    log::info!("training into {}", out.display());
    if let Err(e) = trainer.run() {
        let diag = out.join("abort.txt");
        let text = format!("aborted at step {}: {e}\n", trainer.step_count());
        write(&diag, text.as_bytes())?;
        write(&out.join("metrics.csv"), trainer.metrics().to_csv().as_bytes())?;
        return Err(Failure::runtime(anyhow!("{e}; diagnostics in {}", diag.display())));
    }
    write(&out.join("metrics.csv"), trainer.metrics().to_csv().as_bytes())?;
    write(&out.join("summary.json"), json(&trainer.summary()).as_bytes())?;
    write(&out.join("checkpoint.bin"), &encode_checkpoint(&trainer.checkpoint()))?;
    println!("{}", out.display());
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> CmdResult {
    let cfg = read_config(args.config.as_deref(), &args.overrides)?;
    let bytes = fs::read(&args.checkpoint)
        .with_context(|| format!("cannot read checkpoint {}", args.checkpoint.display()))
        .map_err(Failure::config)?;
    let ckpt = decode_checkpoint(&bytes)
        .with_context(|| format!("checkpoint {}", args.checkpoint.display()))
        .map_err(Failure::config)?;
    let (agent, encoder) = load_policy(&cfg, &ckpt)
        .with_context(|| format!("checkpoint {} does not match the config", args.checkpoint.display()))
        .map_err(Failure::config)?;
    let mut env = cfg.env.build().map_err(Failure::config)?;
    let mut rng = stream(cfg.train.seed, streams::EVAL);
    let enc = encoder.as_ref().map(|(m, p)| (m, p));
    let res = evaluate(&agent, enc, &mut env, args.episodes, &mut rng).map_err(Failure::runtime)?;
    let text = json(&serde_json::json!({
        "env": env.spec().name,
        "episodes": args.episodes,
        "mean": res.mean,
        "std": res.std,
        "returns": res.returns,
    }));
    if let Some(p) = &args.out {
        write(p, text.as_bytes())?;
    }
    print!("{text}");
    Ok(())
}

pub fn cmd_compare(args: &CompareArgs) -> CmdResult {
    let a = read_config(Some(&args.config_a), &args.overrides)?;
    let b = read_config(Some(&args.config_b), &args.overrides)?;
    if a.env != b.env {
        return Err(Failure::config(anyhow!(
            "arms must use the same environment: {} vs {}",
            a.env.name,
            b.env.name
        )));
    }
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| output_root().join(format!("compare-{}-{}", &a.hash_hex()[..8], &b.hash_hex()[..8])));
    let (cmp, runs) = ab_experiment((&args.label_a, &a), (&args.label_b, &b), &args.seeds, args.threads)
        .map_err(|e| match e {
            Error::Config(_) => Failure::config(e),
            other => Failure::runtime(other),
        })?;
    for (arm, (report, outputs)) in cmp.arms.iter().zip(&runs).enumerate() {
        let tag = if arm == 0 { "a" } else { "b" };
        write(&out.join(format!("curve_{tag}.csv")), report.curve_csv().as_bytes())?;
        for (seed, o) in args.seeds.iter().zip(outputs) {
            let dir = out.join(format!("runs/{tag}/seed_{seed}"));
            write(&dir.join("metrics.csv"), o.metrics.to_csv().as_bytes())?;
            write(&dir.join("summary.json"), json(&o.summary).as_bytes())?;
        }
    }
    write(&out.join("config_a.json"), a.to_json_pretty().as_bytes())?;
    write(&out.join("config_b.json"), b.to_json_pretty().as_bytes())?;
    write(&out.join("comparison.json"), json(&cmp).as_bytes())?;
    println!(
        "{}: {} {:.4} vs {} {:.4}, welch p = {:.4}",
        cmp.env, cmp.arms[0].label, cmp.arms[0].final_mean, cmp.arms[1].label, cmp.arms[1].final_mean, cmp.welch.p_value
    );
    println!("{}", out.display());
    Ok(())
}

pub fn cmd_plot(args: &PlotArgs) -> CmdResult {
    let mut series = Vec::new();
    for p in &args.csv {
        let text = fs::read_to_string(p)
            .with_context(|| format!("cannot read {}", p.display()))
            .map_err(Failure::config)?;
        let label = p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
        series.push(
            read_curve_csv(&label, &text)
                .with_context(|| p.display().to_string())
                .map_err(Failure::config)?,
        );
    }
    let svg = render_svg(&series).map_err(Failure::config)?;
    write(&args.out, svg.as_bytes())
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let res = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Plot(a) => cmd_plot(a),
    };
    match res {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            f.code
        }
    }
}
