//! `tlinformer` command line.
//!
//! Settings resolve as: command-line flag, then the `--config` JSON file,
//! then the built-in default. Every file is written atomically.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use tlinformer::bench::{emit_outputs, run_sweep, SweepConfig};
use tlinformer::cache::{events_to_csv, generate, Sampling};
use tlinformer::cost::{cost_sweep, sweep_to_csv, write_sweep_csv, CostParams};
use tlinformer::model::checkpoint::{self, write_atomic};
use tlinformer::train::{evaluate_ppl, log_to_csv, train, TrainConfig, Vocab, BUNDLED_CORPUS};
use tlinformer::verify::{run_verify, VerifyOptions};
use tlinformer::{Architecture, Error};

const PRECEDENCE: &str = "Settings resolve as: command-line flag > --config JSON file > built-in default.\n\
Exit codes: 0 ok, 1 verification or run failure, 2 usage or config error, 3 I/O error.";

#[derive(Parser)]
#[command(name = "tlinformer", version, about = "TLinFormer training, inference, benchmarking and cost accounting", after_help = PRECEDENCE)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint plus a loss log CSV.
    #[command(after_help = PRECEDENCE)]
    Train(TrainArgs),
    /// Perplexity of a checkpoint on a corpus tail.
    #[command(after_help = PRECEDENCE)]
    Eval(EvalArgs),
    /// Generate text from a checkpoint and write the cache event stream.
    #[command(after_help = PRECEDENCE)]
    Generate(GenerateArgs),
    /// Sequence-length latency sweep with ledger checks; writes CSV and SVG charts.
    #[command(after_help = PRECEDENCE)]
    Bench(BenchArgs),
    /// Analytic cost and memory table as CSV.
    #[command(after_help = PRECEDENCE)]
    Cost(CostArgs),
    /// Run the invariant suites and print a JSON report.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// JSON training config; any field may be omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// UTF-8 text corpus [default: bundled synthetic corpus]
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// tlinformer or baseline [default: tlinformer]
    #[arg(long)]
    arch: Option<Architecture>,
    /// [default: one epoch's worth]
    #[arg(long)]
    steps: Option<usize>,
    /// [default: 1]
    #[arg(long)]
    epochs: Option<usize>,
    /// [default: 3e-4]
    #[arg(long)]
    lr: Option<f64>,
    /// [default: 64]
    #[arg(long)]
    seq_len: Option<usize>,
    /// [default: 4]
    #[arg(long)]
    batch_size: Option<usize>,
    /// [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint path.
    #[arg(long, default_value = "model.ckpt")]
    out: PathBuf,
    /// Loss log CSV [default: <out>.log.csv]
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// UTF-8 text corpus [default: bundled synthetic corpus]
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Fraction of the corpus tail to score [default: 0.1]
    #[arg(long)]
    eval_fraction: Option<f64>,
    /// Predictions per scored sequence [default: the checkpoint's sequence length]
    #[arg(long)]
    seq_len: Option<usize>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    prompt: String,
    #[arg(long, default_value_t = 32)]
    n_tokens: usize,
    /// Sample at this temperature instead of greedy decoding.
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cache event CSV [default: not written]
    #[arg(long)]
    events: Option<PathBuf>,
    /// Text output [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Fields shared by the bench flags and its config file.
#[derive(Args, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct BenchSettings {
    /// [default: 128]
    #[arg(long)]
    n_start: Option<usize>,
    /// [default: 128]
    #[arg(long)]
    n_step: Option<usize>,
    /// [default: 2048]
    #[arg(long)]
    n_max: Option<usize>,
    /// Timed runs per point; the median is reported [default: 5]
    #[arg(long)]
    repeats: Option<usize>,
    /// Untimed runs per point [default: 2]
    #[arg(long)]
    warmup: Option<usize>,
    /// Comma-separated models [default: tlinformer,baseline]
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<Architecture>>,
    /// [default: bench_out]
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Per-point memory estimate at which a model's sweep stops [default: 4 GiB]
    #[arg(long)]
    memory_budget_bytes: Option<u64>,
}

#[derive(Args)]
struct BenchArgs {
    /// JSON file with any of the flag names (snake_case) as keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    settings: BenchSettings,
}

#[derive(Args, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct CostSettings {
    /// [default: 1024]
    #[arg(long)]
    n_start: Option<u64>,
    /// [default: 1024]
    #[arg(long)]
    n_step: Option<u64>,
    /// [default: 16384]
    #[arg(long)]
    n_max: Option<u64>,
    /// Model width [default: 432]
    #[arg(long)]
    d: Option<u64>,
    /// [default: 512]
    #[arg(long)]
    woh: Option<u64>,
    /// [default: 512]
    #[arg(long)]
    wog: Option<u64>,
    /// Intermediate self-attention layers per block [default: 2]
    #[arg(long)]
    h: Option<u64>,
    /// [default: 2]
    #[arg(long)]
    n_blocks: Option<u64>,
    /// Bytes per cached element [default: 2]
    #[arg(long)]
    p_bytes: Option<u64>,
    /// CSV path [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CostArgs {
    /// JSON file with any of the flag names (snake_case) as keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    settings: CostSettings,
}

#[derive(Args)]
struct VerifyArgs {
    /// Corrupt a cached key after each rebuild; the report must fail.
    #[arg(long)]
    inject_cache_bug: bool,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failed command and its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Usage(_)
            | Error::Config(_)
            | Error::Layout(_)
            | Error::Domain(_)
            | Error::CorpusNotFound(_)
            | Error::Corpus(_)
            | Error::Checkpoint(_) => 2,
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => 3,
            _ => 1,
        };
        Failure { code, message: e.to_string() }
    }
}

type Outcome = Result<(), Failure>;

fn read_config<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T, Error> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
    }
}

fn read_text(path: Option<&Path>) -> Result<String, Error> {
    match path {
        None => Ok(BUNDLED_CORPUS.to_string()),
        Some(p) => std::fs::read_to_string(p).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::CorpusNotFound(p.display().to_string()),
            _ => e.into(),
        }),
    }
}

fn cmd_train(a: TrainArgs) -> Outcome {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::from_json_file(p)?,
        None => TrainConfig::default(),
    };
    if a.corpus.is_some() {
        cfg.corpus_path = a.corpus;
    }
    cfg.arch = a.arch.unwrap_or(cfg.arch);
    cfg.steps = a.steps.or(cfg.steps);
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.lr = a.lr.unwrap_or(cfg.lr);
    cfg.seq_len = a.seq_len.unwrap_or(cfg.seq_len);
    cfg.batch_size = a.batch_size.unwrap_or(cfg.batch_size);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.validate()?;

    let corpus = cfg.load_corpus()?;
    let out = train(&cfg, &corpus, |r| {
        if r.step % 10 == 0 {
            eprintln!("step {:>5}  loss {:.4}", r.step, r.loss);
        }
    })?;
    checkpoint::save(&a.out, &out.model, Some(out.vocab.chars()))?;
    let log_path = a.log.unwrap_or_else(|| suffixed(&a.out, ".log.csv"));
    write_atomic(&log_path, &log_to_csv(&out.log)?)?;
    let summary = serde_json::json!({
        "checkpoint": a.out,
        "log": log_path,
        "steps": out.log.len(),
        "final_loss": out.final_loss(),
        "eval_ppl": out.eval_ppl,
    });
    println!("{summary}");
    Ok(())
}

fn suffixed(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn load_vocab(ck: &checkpoint::Checkpoint) -> Result<Vocab, Error> {
    ck.vocab
        .clone()
        .map(Vocab::from_chars)
        .ok_or_else(|| Error::Checkpoint("checkpoint has no vocabulary".into()))
}

fn cmd_eval(a: EvalArgs) -> Outcome {
    let ck = checkpoint::load(&a.checkpoint)?;
    let vocab = load_vocab(&ck)?;
    let text = read_text(a.corpus.as_deref())?;
    let frac = a.eval_fraction.unwrap_or(0.1);
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(Error::Config(format!("eval_fraction must be in (0, 1], got {frac}")).into());
    }
    let ids = vocab.encode(&text)?;
    let tail = &ids[ids.len() - ((ids.len() as f64 * frac).round() as usize).max(2).min(ids.len())..];
    let seq_len = a.seq_len.unwrap_or(ck.model.config().max_seq);
    let ppl = evaluate_ppl(&ck.model, tail, seq_len)?;
    println!("{}", serde_json::json!({ "arch": ck.model.arch(), "tokens": tail.len(), "seq_len": seq_len, "ppl": ppl }));
    Ok(())
}

fn cmd_generate(a: GenerateArgs) -> Outcome {
    let ck = checkpoint::load(&a.checkpoint)?;
    let vocab = load_vocab(&ck)?;
    let prompt = vocab.encode(&a.prompt)?;
    let sampling = match a.temperature {
        Some(temperature) => Sampling::Temperature { temperature, seed: a.seed },
        None => Sampling::Greedy,
    };
    let mut model = ck.model;
    let need = prompt.len() + a.n_tokens;
    if need > model.config().max_seq {
        model.set_max_seq(need);
    }
    let g = generate(&model, &prompt, a.n_tokens, sampling)?;
    let text = format!("{}{}", a.prompt, vocab.decode(&g.tokens));
    match &a.out {
        Some(p) => write_atomic(p, text.as_bytes())?,
        None => println!("{text}"),
    }
    if let Some(p) = &a.events {
        write_atomic(p, &events_to_csv(&g.events)?)?;
    }
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Outcome {
    let file: BenchSettings = read_config(a.config.as_deref())?;
    let s = a.settings;
    let grid = SweepConfig::grid(
        s.n_start.or(file.n_start).unwrap_or(128),
        s.n_step.or(file.n_step).unwrap_or(128),
        s.n_max.or(file.n_max).unwrap_or(2048),
    )?;
    let models = s.models.or(file.models).unwrap_or_else(|| vec![Architecture::Tlinformer, Architecture::Baseline]);
    let mut cfg = SweepConfig::desk(grid, models);
    cfg.repeats = s.repeats.or(file.repeats).unwrap_or(cfg.repeats);
    cfg.warmup_runs = s.warmup.or(file.warmup).unwrap_or(cfg.warmup_runs);
    cfg.seed = s.seed.or(file.seed).unwrap_or(cfg.seed);
    cfg.memory_budget_bytes = s.memory_budget_bytes.or(file.memory_budget_bytes).unwrap_or(cfg.memory_budget_bytes);
    let out_dir = s.out_dir.or(file.out_dir).unwrap_or_else(|| PathBuf::from("bench_out"));

    let outcome = run_sweep(&cfg, |r| {
        eprintln!(
            "{:<10} N={:<6} first {:>10} ns  third {:>10} ns",
            r.model, r.n, r.t_first_nanos, r.t_third_nanos
        )
    })?;
    for stop in &outcome.stops {
        eprintln!("{} stopped after N = {:?}: {}", stop.model, stop.last_ok_n, stop.reason);
    }
    emit_outputs(&outcome.rows, &out_dir)?;
    println!("{}", serde_json::json!({ "out_dir": out_dir, "rows": outcome.rows.len(), "stops": outcome.stops.len() }));
    Ok(())
}

fn cmd_cost(a: CostArgs) -> Outcome {
    let file: CostSettings = read_config(a.config.as_deref())?;
    let s = a.settings;
    let p = CostParams {
        d: s.d.or(file.d).unwrap_or(432),
        woh: s.woh.or(file.woh).unwrap_or(512),
        wog: s.wog.or(file.wog).unwrap_or(512),
        h: s.h.or(file.h).unwrap_or(2),
        n_blocks: s.n_blocks.or(file.n_blocks).unwrap_or(2),
        p_bytes: s.p_bytes.or(file.p_bytes).unwrap_or(2),
    };
    let start = s.n_start.or(file.n_start).unwrap_or(1024);
    let step = s.n_step.or(file.n_step).unwrap_or(1024);
    let max = s.n_max.or(file.n_max).unwrap_or(16384);
    if start == 0 || step == 0 || max < start {
        return Err(Error::Config(format!("bad grid start={start} step={step} max={max}")).into());
    }
    let rows = cost_sweep(p, (start..=max).step_by(step as usize))?;
    match s.out.or(file.out) {
        Some(path) => write_sweep_csv(&path, &rows)?,
        None => print!("{}", String::from_utf8_lossy(&sweep_to_csv(&rows)?)),
    }
    Ok(())
}

fn cmd_verify(a: VerifyArgs) -> Outcome {
    let report = run_verify(VerifyOptions { inject_cache_bug: a.inject_cache_bug });
    let json = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    if let Some(p) = &a.out {
        write_atomic(p, json.as_bytes())?;
    }
    println!("{json}");
    if report.passed {
        Ok(())
    } else {
        let failed: Vec<_> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        Err(Failure { code: 1, message: format!("verification failed: {}", failed.join(", ")) })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.cmd {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Cost(a) => cmd_cost(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
