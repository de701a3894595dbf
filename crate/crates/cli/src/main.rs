use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use amm_align::data_io::{
    read_qc_records, synth_generate, validate_caption, write_atomic, Checkpoint, Dataset, QcVerdict, SeenTranscripts,
    Split, SyntheticSpec,
};
use amm_align::retrieval::eval_protocol;
use amm_align::trainer::{ablate, eval_rng, run_two_phase, AblationAxis, TrainConfig};
use amm_align::{Error, LossKind, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

const THREADS_ENV: &str = "AMM_ALIGN_THREADS";
const CHECKPOINT_FILE: &str = "checkpoint.ckp";
const REPORT_FILE: &str = "report.json";
const TRACE_FILE: &str = "trace.jsonl";
const VERDICTS_FILE: &str = "verdicts.jsonl";
const ABLATION_FILE: &str = "ablation.jsonl";

/// Contrastive alignment of paired feature vectors.
#[derive(Parser, Debug)]
#[command(name = "amm-align", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic paired dataset (x.emb, y.emb, manifest.json).
    Synth(SynthArgs),
    /// Train both heads; writes checkpoint.ckp, report.json and trace.jsonl.
    Train(TrainArgs),
    /// Re-run the test-split evaluation of a checkpoint.
    Eval(EvalArgs),
    /// Check caption records (JSON lines) and write verdicts.jsonl.
    Qc(QcArgs),
    /// Train one model per value of a config axis; writes ablation.jsonl.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// JSON file with SyntheticSpec fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "n")]
    n_pairs: Option<usize>,
    #[arg(long)]
    d_latent: Option<usize>,
    #[arg(long)]
    d_x: Option<usize>,
    #[arg(long)]
    d_y: Option<usize>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    words_per_caption: Option<usize>,
}

#[derive(Args, Debug)]
struct ConfigOverrides {
    /// JSON file with TrainConfig fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    loss: Option<LossKind>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    proj_dim: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    phase2_epochs: Option<usize>,
    #[arg(long)]
    lr1: Option<f64>,
    #[arg(long)]
    lr2: Option<f64>,
    #[arg(long)]
    no_word_sampling: bool,
    /// L2-normalize embeddings before the similarity.
    #[arg(long)]
    normalize: bool,
    #[arg(long)]
    n_samples: Option<usize>,
    #[arg(long)]
    sample_size: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Directory holding x.emb, y.emb and manifest.json.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory for report.json; the report is always printed to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_samples: Option<usize>,
    #[arg(long)]
    sample_size: Option<usize>,
}

#[derive(Args, Debug)]
struct QcArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    axis: AblationAxis,
    /// Comma-separated values for the axis.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn pretty<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn json_lines<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<String> {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(&row)?);
        out.push('\n');
    }
    Ok(out)
}

fn eval_threads() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::Argument(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
    }
}

impl ConfigOverrides {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg: TrainConfig = match &self.config {
            Some(path) => read_json(path)?,
            None => TrainConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = self.$flag.clone() { cfg.$field = v; })*
            };
        }
        set!(seed => seed, loss => loss_kind, alpha => alpha, batch_size => batch_size, proj_dim => proj_dim,
             hidden => hidden, epochs => epochs, lr1 => lr_phase1, lr2 => lr_phase2, n_samples => n_samples,
             sample_size => sample_size);
        if let Some(p) = self.phase2_epochs {
            cfg.phase2_epochs = Some(p);
        }
        if self.no_word_sampling {
            cfg.word_sampling = false;
        }
        if self.normalize {
            cfg.normalize = true;
        }
        cfg.eval_threads = eval_threads()?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn synth(args: SynthArgs) -> Result<()> {
    let mut spec: SyntheticSpec = match &args.config {
        Some(path) => read_json(path)?,
        None => SyntheticSpec::default(),
    };
    if let Some(v) = args.seed {
        spec.seed = v;
    }
    if let Some(v) = args.n_pairs {
        spec.n_pairs = v;
    }
    if let Some(v) = args.d_latent {
        spec.d_latent = v;
    }
    if let Some(v) = args.d_x {
        spec.d_x = v;
    }
    if let Some(v) = args.d_y {
        spec.d_y = v;
    }
    if let Some(v) = args.noise_sigma {
        spec.noise_sigma = v;
    }
    if let Some(v) = args.words_per_caption {
        spec.words_per_caption = v;
    }
    synth_generate(&spec)?.save_dir(&args.out)
}

fn train(args: TrainArgs) -> Result<()> {
    let cfg = args.overrides.resolve()?;
    let data = Dataset::load_dir(&args.data)?;
    let outcome = run_two_phase(&cfg, &data)?;
    fs::create_dir_all(&args.out)?;
    let ckpt = Checkpoint { x_head: outcome.state.best_x, y_head: outcome.state.best_y, config: cfg };
    ckpt.save(args.out.join(CHECKPOINT_FILE))?;
    write_atomic(args.out.join(TRACE_FILE), json_lines(&outcome.traces)?.as_bytes())?;
    let report = pretty(&outcome.report)?;
    write_atomic(args.out.join(REPORT_FILE), report.as_bytes())?;
    print!("{report}");
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let mut cfg = ckpt.config;
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.n_samples {
        cfg.n_samples = v;
    }
    if let Some(v) = args.sample_size {
        cfg.sample_size = v;
    }
    cfg.eval_threads = eval_threads()?;
    cfg.validate()?;
    let data = Dataset::load_dir(&args.data)?;
    let report =
        eval_protocol(&data, Split::Test, &ckpt.x_head, &ckpt.y_head, &cfg.eval_options(), &eval_rng(cfg.seed))?;
    let report = pretty(&report)?;
    if let Some(out) = &args.out {
        fs::create_dir_all(out)?;
        write_atomic(out.join(REPORT_FILE), report.as_bytes())?;
    }
    print!("{report}");
    Ok(())
}

#[derive(Serialize)]
struct VerdictLine<'a> {
    id: &'a str,
    verdict: &'static str,
    reason: Option<String>,
}

fn qc(args: QcArgs) -> Result<()> {
    let records = read_qc_records(BufReader::new(fs::File::open(&args.input)?))?;
    let mut seen = SeenTranscripts::new();
    let mut failed = 0;
    let lines = records.iter().map(|rec| match validate_caption(&rec.to_caption(), &mut seen) {
        QcVerdict::Pass => VerdictLine { id: &rec.id, verdict: "pass", reason: None },
        QcVerdict::Fail(why) => {
            failed += 1;
            VerdictLine { id: &rec.id, verdict: "fail", reason: Some(why.to_string()) }
        }
    });
    let text = json_lines(lines.collect::<Vec<_>>())?;
    fs::create_dir_all(&args.out)?;
    write_atomic(args.out.join(VERDICTS_FILE), text.as_bytes())?;
    eprintln!("{} records, {} passed, {failed} failed", records.len(), records.len() - failed);
    Ok(())
}

fn run_ablation(args: AblateArgs) -> Result<()> {
    let cfg = args.overrides.resolve()?;
    // Reject bad values before loading anything large.
    for v in &args.values {
        args.axis.apply(&cfg, v)?;
    }
    let data = Dataset::load_dir(&args.data)?;
    let rows = ablate(&cfg, args.axis, &args.values, &data)?;
    let text = json_lines(&rows)?;
    fs::create_dir_all(&args.out)?;
    write_atomic(args.out.join(ABLATION_FILE), text.as_bytes())?;
    print!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Qc(a) => qc(a),
        Command::Ablate(a) => run_ablation(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io_or_format() { 2 } else { 1 })
        }
    }
}
