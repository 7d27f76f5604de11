//! `dccrn`: synthesize data, train, enhance, evaluate and verify gradients.

mod gradcheck;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dccrn::datasynth::generate_dataset;
use dccrn::metrics::{evaluate, MetricReport};
use dccrn::model::{train, Config, TrainOutputs, TrainedModel};
use dccrn::signal::{read_wav, write_wav};
use dccrn::Error;
use serde_json::{json, Value};

#[derive(Parser, Debug)]
#[command(name = "dccrn", version, about = "Complex-valued DCCRN dereverberation with time-frequency self-attention")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct ConfigArgs {
    /// TOML configuration file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate clean/reverberant WAV pairs and a manifest.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train on a manifest, writing loss.csv and checkpoints.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Replaces `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Enhance one WAV file with a trained checkpoint.
    Enhance {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score every WAV in a test directory against the same-named reference.
    Eval {
        #[arg(long)]
        ref_dir: PathBuf,
        #[arg(long)]
        test_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every layer and attention variant.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for run.json; nothing is written when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Failure with its process exit code.
struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Numerical(_) => 3,
            _ => 2,
        };
        Failure { code, msg: e.to_string() }
    }
}

type CliResult<T> = Result<T, Failure>;

fn resolve(args: &ConfigArgs) -> CliResult<Config> {
    let cfg = match &args.config {
        Some(path) => Config::load(path, &args.overrides)?,
        None => Config::from_toml_with_overrides("", &args.overrides)?,
    };
    log::info!("resolved configuration:\n{}", cfg.to_toml());
    Ok(cfg)
}

fn config_json(cfg: &Config) -> Value {
    serde_json::to_value(cfg).expect("config serializes")
}

fn write_record(path: &Path, record: &Value) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })?;
    }
    let text = serde_json::to_string_pretty(record).expect("json serializes") + "\n";
    fs::write(path, text).map_err(|e| Error::Io { path: path.into(), source: e })?;
    Ok(())
}

/// `out.wav` → `out.run.json`.
fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("run.json")
}

fn synth(n: usize, seed: u64, out: &Path, args: &ConfigArgs) -> CliResult<()> {
    let cfg = resolve(args)?;
    let manifest = generate_dataset(&cfg.data, n, seed, out)?;
    log::info!("wrote {n} pairs to {}", out.display());
    write_record(
        &out.join("run.json"),
        &json!({ "command": "synth", "n": n, "seed": seed, "manifest": manifest, "data": config_json(&cfg)["data"] }),
    )
}

fn train_cmd(data: &Path, out: &Path, seed: Option<u64>, args: &ConfigArgs) -> CliResult<()> {
    let mut cfg = resolve(args)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    let outcome = train(&cfg, data, &TrainOutputs { dir: Some(out.to_path_buf()) })?;
    let means = outcome.epoch_means();
    let last = outcome.losses.last().map(|l| l.loss);
    println!("trained {} steps; final epoch mean loss {:.6e}", outcome.losses.len(), means.last().copied().unwrap_or(f64::NAN));
    write_record(
        &out.join("run.json"),
        &json!({
            "command": "train",
            "data": data,
            "config": config_json(&cfg),
            "steps": outcome.losses.len(),
            "skipped_pairs": outcome.skipped,
            "epoch_mean_loss": means,
            "final_step_loss": last,
        }),
    )
}

fn enhance(ckpt: &Path, input: &Path, out: &Path) -> CliResult<()> {
    let model = TrainedModel::load(ckpt)?;
    let wave = read_wav(input, Some(model.config.stft.sample_rate))?;
    let enhanced = model.enhance(&wave)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })?;
    }
    write_wav(out, &enhanced)?;
    write_record(
        &sidecar(out),
        &json!({ "command": "enhance", "checkpoint": ckpt, "input": input, "output": out, "config": config_json(&model.config) }),
    )
}

fn wav_names(dir: &Path) -> CliResult<Vec<String>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::Io { path: dir.into(), source: e })?;
    let mut names = Vec::new();
    for e in entries {
        let e = e.map_err(|err| Error::Io { path: dir.into(), source: err })?;
        let name = e.file_name().to_string_lossy().into_owned();
        if name.to_ascii_lowercase().ends_with(".wav") {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

fn eval(ref_dir: &Path, test_dir: &Path, out: &Path) -> CliResult<()> {
    let names = wav_names(ref_dir)?;
    if names.is_empty() {
        return Err(Error::Data { path: ref_dir.into(), msg: "no .wav files".into() }.into());
    }
    let mut report = MetricReport::default();
    for name in &names {
        let reference = read_wav(&ref_dir.join(name), None)?;
        let test = read_wav(&test_dir.join(name), Some(reference.sample_rate))?;
        let id = Path::new(name).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        report.push(id, evaluate(&reference, &test)?);
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })?;
    }
    report.write_csv(out)?;
    let (cd, llr, fw) = report.means();
    println!("{} utterances: CD {cd:.4} dB, LLR {llr:.4}, FWSegSNR {fw:.4} dB", names.len());
    write_record(
        &sidecar(out),
        &json!({
            "command": "eval",
            "ref_dir": ref_dir,
            "test_dir": test_dir,
            "output": out,
            "utterances": names.len(),
            "mean": { "cd": cd, "llr": llr, "fwsegsnr": fw },
        }),
    )
}

fn gradcheck_cmd(seed: u64, out: Option<&Path>) -> CliResult<()> {
    let rows = gradcheck::run(seed)?;
    println!("{:<24} {:>9} {:>8} {:>13}  result", "check", "instances", "elements", "max rel err");
    for r in &rows {
        println!(
            "{:<24} {:>9} {:>8} {:>13.3e}  {}",
            r.name,
            r.instances,
            r.checked,
            r.max_rel_error,
            if r.passed { "pass" } else { "FAIL" }
        );
    }
    if let Some(dir) = out {
        write_record(
            &dir.join("run.json"),
            &json!({ "command": "gradcheck", "seed": seed, "tolerance": gradcheck::TOLERANCE, "checks": rows }),
        )?;
    }
    match rows.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect::<Vec<_>>() {
        failed if failed.is_empty() => Ok(()),
        failed => Err(Failure { code: 3, msg: format!("gradient check failed for: {}", failed.join(", ")) }),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth { n, seed, out, cfg } => synth(n, seed, &out, &cfg),
        Command::Train { data, out, seed, cfg } => train_cmd(&data, &out, seed, &cfg),
        Command::Enhance { ckpt, input, out } => enhance(&ckpt, &input, &out),
        Command::Eval { ref_dir, test_dir, out } => eval(&ref_dir, &test_dir, &out),
        Command::Gradcheck { seed, out } => gradcheck_cmd(seed, out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
