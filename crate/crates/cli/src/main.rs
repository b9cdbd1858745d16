//! `multirate` command-line tool.
//!
//! Exit codes: 0 ok, 1 check failure, 2 usage, 3 I/O, 4 format/integrity.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};

use multirate_core::benchmark::{emit_report, run_bench, BenchOptions};
use multirate_core::decoder::SinkError;
use multirate_core::features::{serialize_context_tree, CorpusSpec, UtteranceLength};
use multirate_core::validate::{run_suite, Check, SuiteOptions};
use multirate_core::{
    parse_context_tree, synth_corpus, weights_init, Error, Model, ModelConfig, ModelKind, ModelWeights,
    SpectrumFrame,
};

#[derive(Parser)]
#[command(name = "multirate", version, about = "Streaming multi-rate attention spectrum model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decode context trees to spectrum frames.
    Synth(SynthArgs),
    /// Measure RTF, first-frame latency and MACs; writes bench.csv and rtf.svg.
    Bench(BenchArgs),
    /// Run the oracle suite against the fast kernels.
    Validate(ValidateArgs),
    /// Write a seeded random weight file.
    InitWeights(InitArgs),
    /// Write a synthetic corpus of context-tree JSON files.
    GenCorpus(CorpusArgs),
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Pooled context cap for every level.
    #[arg(long)]
    lmax: Option<usize>,
    /// Attend over the full, unpooled context.
    #[arg(long)]
    no_pooling: bool,
    /// Feed zeros instead of the previous output frame.
    #[arg(long)]
    no_feedback: bool,
}

impl ConfigArgs {
    fn apply(&self, config: &mut ModelConfig) {
        if let Some(l) = self.lmax {
            config.l_max = [l; 3];
        }
        if self.no_pooling {
            config.pooling = false;
        }
        if self.no_feedback {
            config.feedback = false;
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Context-tree JSON files.
    #[arg(required = true)]
    trees: Vec<PathBuf>,
    /// Weight file; seeded random weights when omitted.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Output file, or directory when several trees are given.
    #[arg(long)]
    out: PathBuf,
    /// multirate, multirate-nopool, lstm or selfattn.
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write CSV text frames instead of binary.
    #[arg(long)]
    text: bool,
    /// Trees decoded concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated model names.
    #[arg(long, value_delimiter = ',', default_values_t = ModelKind::ALL.to_vec())]
    models: Vec<ModelKind>,
    /// Comma-separated target audio lengths in seconds.
    #[arg(long, value_delimiter = ',', default_values_t = vec![10.0, 20.0, 40.0, 60.0])]
    lengths: Vec<f64>,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    /// Each repeat keeps the fastest of this many interleaved runs.
    #[arg(long, default_value_t = 3)]
    best_of: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report directory.
    #[arg(long, default_value = "bench-out")]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random cases per kernel check.
    #[arg(long, default_value_t = 1000)]
    cases: usize,
    /// Utterances for the streaming-decode check.
    #[arg(long, default_value_t = 8)]
    decode_cases: usize,
    /// Test hook: perturb one check's fast path.
    #[arg(long, hide = true)]
    perturb: Option<Check>,
}

#[derive(Args)]
struct InitArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct CorpusArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of utterances.
    #[arg(long, default_value_t = 10)]
    count: usize,
    /// Target audio seconds per utterance; random word counts when omitted.
    #[arg(long)]
    seconds: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

/// An error with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    fn usage(message: impl Into<String>) -> Self {
        Self::new(2, message)
    }

    fn in_file(path: &Path, err: Error) -> Self {
        let f = Failure::from(err);
        Self::new(f.code, format!("{}: {}", path.display(), f.message))
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        let code = match &err {
            Error::Config(_) => 2,
            Error::Io { .. } | Error::SinkAborted { .. } => 3,
            Error::Parse { .. }
            | Error::Format(_)
            | Error::Integrity(_)
            | Error::Validation { .. }
            | Error::Shape { .. } => 4,
            Error::Bench(_) => 1,
        };
        Self::new(code, err.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::new(3, format!("{}: {e}", path.display()))
}

fn load_weights(path: Option<&Path>, seed: u64, config: &ConfigArgs) -> Result<ModelWeights, Failure> {
    let mut weights = match path {
        Some(p) => ModelWeights::load(p).map_err(|e| Failure::in_file(p, e))?,
        None => weights_init(seed, &ModelConfig::default())?,
    };
    config.apply(&mut weights.config);
    weights.config.validate()?;
    Ok(weights)
}

fn default_kind(config: &ModelConfig) -> ModelKind {
    if config.pooling {
        ModelKind::MultiRate
    } else {
        ModelKind::MultiRateNoPool
    }
}

fn write_header(out: &mut impl Write, frames: usize, text: bool) -> std::io::Result<()> {
    if text {
        let mut cols: Vec<String> = (0..13).map(|i| format!("mfcc{i}")).collect();
        cols.push("f0".into());
        cols.extend((0..5).map(|i| format!("periodicity{i}")));
        writeln!(out, "{}", cols.join(","))
    } else {
        out.write_all(&(frames as u64).to_le_bytes())
    }
}

fn write_frame(out: &mut impl Write, frame: &SpectrumFrame, text: bool) -> std::io::Result<()> {
    if text {
        let row: Vec<String> = frame.0.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", row.join(","))
    } else {
        for v in frame.0 {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

/// Decodes one tree file straight to `out`, frame by frame.
fn synth_one(model: &Model, tree_path: &Path, out_path: &Path, text: bool) -> Result<usize, Failure> {
    let doc = fs::read_to_string(tree_path).map_err(|e| io_failure(tree_path, e))?;
    let tree = parse_context_tree(&doc).map_err(|e| Failure::in_file(tree_path, e))?;
    let file = fs::File::create(out_path).map_err(|e| io_failure(out_path, e))?;
    let mut out = BufWriter::new(file);
    write_header(&mut out, tree.frame_count(), text).map_err(|e| io_failure(out_path, e))?;
    let mut sink = |_: usize, f: &SpectrumFrame| -> Result<(), SinkError> {
        write_frame(&mut out, f, text).map_err(|e| Box::new(e) as SinkError)
    };
    let n = model
        .synthesize(&tree, &mut sink, None)
        .map_err(|e| Failure::in_file(tree_path, e))?;
    out.flush().map_err(|e| io_failure(out_path, e))?;
    Ok(n)
}

fn cmd_synth(args: SynthArgs) -> CmdResult {
    if args.jobs == 0 {
        return Err(Failure::usage("--jobs must be at least 1"));
    }
    let weights = load_weights(args.weights.as_deref(), args.seed, &args.config)?;
    let kind = match args.model {
        Some(ModelKind::MultiRate) if args.config.no_pooling => ModelKind::MultiRateNoPool,
        Some(k) => k,
        None => default_kind(&weights.config),
    };
    let model = Model::build(kind, &weights)?;

    let targets: Vec<(PathBuf, PathBuf)> = if args.trees.len() == 1 {
        vec![(args.trees[0].clone(), args.out.clone())]
    } else {
        fs::create_dir_all(&args.out).map_err(|e| io_failure(&args.out, e))?;
        let ext = if args.text { "csv" } else { "frames" };
        args.trees
            .iter()
            .map(|t| {
                let stem = t.file_stem().unwrap_or_default().to_string_lossy();
                (t.clone(), args.out.join(format!("{stem}.{ext}")))
            })
            .collect()
    };

    let next = AtomicUsize::new(0);
    let failures = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..args.jobs.min(targets.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((tree, out)) = targets.get(i) else { break };
                match synth_one(&model, tree, out, args.text) {
                    Ok(n) => println!("{} -> {} ({n} frames)", tree.display(), out.display()),
                    Err(f) => failures.lock().unwrap().push((i, f)),
                }
            });
        }
    });
    let mut failures = failures.into_inner().unwrap();
    failures.sort_by_key(|(i, _)| *i);
    match failures.into_iter().next() {
        Some((_, f)) => Err(f),
        None => Ok(()),
    }
}

fn cmd_bench(args: BenchArgs) -> CmdResult {
    let mut config = ModelConfig::default();
    args.config.apply(&mut config);
    config.validate()?;
    if args.repeats < 3 {
        return Err(Failure::usage("--repeats must be at least 3"));
    }
    if let Some(l) = args.lengths.iter().find(|&&l| !(l >= 1.0)) {
        return Err(Failure::usage(format!("length {l} s is below the 1 s minimum")));
    }
    let opts = BenchOptions {
        seed: args.seed,
        repeats: args.repeats,
        best_of: args.best_of,
        config,
    };
    let records = run_bench(&args.models, &args.lengths, &opts)?;
    println!(
        "{:<18} {:>8} {:>10} {:>9} {:>12} {:>14} {:>14}",
        "model", "audio_s", "synth_s", "rtf", "first_ms", "frame_macs", "encoder_macs"
    );
    for r in &records {
        println!(
            "{:<18} {:>8.2} {:>10.4} {:>9.5} {:>12.3} {:>14} {:>14}",
            r.model.name(),
            r.audio_seconds,
            r.synth_seconds,
            r.rtf,
            r.first_frame_latency_ms,
            r.per_frame_macs,
            r.encoder_macs
        );
    }
    let paths = emit_report(&records, &args.out)?;
    println!("wrote {} and {}", paths.csv.display(), paths.svg.display());
    Ok(())
}

fn cmd_validate(args: ValidateArgs) -> CmdResult {
    if args.cases == 0 || args.decode_cases == 0 {
        return Err(Failure::usage("case counts must be positive"));
    }
    let opts = SuiteOptions {
        seed: args.seed,
        cases: args.cases,
        decode_cases: args.decode_cases,
        perturb: args.perturb,
        ..SuiteOptions::default()
    };
    let outcomes = run_suite(&opts)?;
    for o in &outcomes {
        println!("{o}");
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    if failed > 0 {
        return Err(Failure::new(1, format!("{failed} of {} checks failed", outcomes.len())));
    }
    println!("all {} checks passed", outcomes.len());
    Ok(())
}

fn cmd_init_weights(args: InitArgs) -> CmdResult {
    let mut config = ModelConfig::default();
    args.config.apply(&mut config);
    let weights = weights_init(args.seed, &config)?;
    weights.save(&args.out).map_err(|e| Failure::in_file(&args.out, e))?;
    println!("{} ({} tensors)", args.out.display(), weights.tensors().len());
    Ok(())
}

fn cmd_gen_corpus(args: CorpusArgs) -> CmdResult {
    if args.count == 0 {
        return Err(Failure::usage("--count must be positive"));
    }
    let length = match args.seconds {
        Some(s) if s > 0.0 && s.is_finite() => UtteranceLength::seconds(s),
        Some(s) => return Err(Failure::usage(format!("--seconds {s} must be positive"))),
        None => CorpusSpec::default().length,
    };
    let spec = CorpusSpec {
        utterances: args.count,
        ..CorpusSpec::with_length(length)
    };
    let trees = synth_corpus(args.seed, &spec)?;
    fs::create_dir_all(&args.out).map_err(|e| io_failure(&args.out, e))?;
    for (i, tree) in trees.iter().enumerate() {
        let path = args.out.join(format!("utt_{i:04}.json"));
        fs::write(&path, serialize_context_tree(tree)).map_err(|e| io_failure(&path, e))?;
    }
    println!("wrote {} trees to {}", trees.len(), args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Validate(a) => cmd_validate(a),
        Command::InitWeights(a) => cmd_init_weights(a),
        Command::GenCorpus(a) => cmd_gen_corpus(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
