//! `cedo`: training, ablation, sweeps and corpus tooling.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numeric divergence.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cedo::datagen::{
    cluster_examples, cp_split, export_vqa_json, generate_synthetic, load_vqa_json, select, split_histograms, CPSplit,
    SynthSpec, Vocabulary, DEFAULT_QTYPE_PREFIX_LEN,
};
use cedo::gms::{CombineMode, OrthoMode};
use cedo::harness::{
    ablate, ablation_csv, evaluate_params, export_metrics, run, sweep_csv, sweep_rates, write_diagnostics, DataSource,
    ExportFormat, RateGrid, SweepMode, TrainConfig,
};
use cedo::model::{load_checkpoint, save_checkpoint, GradScope};
use cedo::numeric::RngStream;
use cedo::{CedoError, Result};

#[derive(Parser)]
#[command(
    name = "cedo",
    version,
    about = "Gradient-coordinated debiasing for multimodal classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write metrics, weights table and checkpoint.
    Train(TrainArgs),
    /// Run baseline, each mechanism alone, and all mechanisms together.
    Ablate(TrainArgs),
    /// Sweep the per-group learning rates.
    Sweep(SweepArgs),
    /// Generate a synthetic corpus.
    GenSynth(SynthArgs),
    /// Build the changing-priors split of a corpus.
    CpSplit(SplitArgs),
    /// Print per-qtype answer histograms for the train and test halves of a split.
    Inspect(InspectArgs),
    /// Evaluate a checkpoint on the test half of a split.
    Eval(EvalArgs),
}

#[derive(Args, Clone)]
struct TrainArgs {
    /// JSON file mirroring the training config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "runs/latest")]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    eta_q: Option<f64>,
    #[arg(long)]
    eta_v: Option<f64>,
    #[arg(long)]
    eta_c: Option<f64>,
    /// Shared rate used when MHO is off.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    mho: Option<bool>,
    #[arg(long)]
    gms: Option<bool>,
    #[arg(long)]
    dlr: Option<bool>,
    /// classifier | all
    #[arg(long)]
    scope: Option<String>,
    /// orthogonal | literal
    #[arg(long)]
    ortho_mode: Option<String>,
    /// plain_sum | pareto_weighted
    #[arg(long)]
    combine_mode: Option<String>,
    #[arg(long)]
    conflict_only: Option<bool>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    normalize_features: Option<bool>,
    /// Train on a JSON corpus instead of synthetic data.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Split file for --corpus; built on the fly when absent.
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long)]
    qtype_prefix_len: Option<usize>,
    /// Write per-step GMS diagnostics to gms_diag.jsonl.
    #[arg(long)]
    diag: bool,
}

impl TrainArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::load(p)?,
            None => TrainConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg = cfg.with_seed(seed);
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.eta_q {
            cfg.rates.eta_q = v;
        }
        if let Some(v) = self.eta_v {
            cfg.rates.eta_v = v;
        }
        if let Some(v) = self.eta_c {
            cfg.rates.eta_c = v;
        }
        if let Some(v) = self.lr {
            cfg.single_rate = v;
        }
        if let Some(v) = self.mho {
            cfg.mechanisms.mho = v;
        }
        if let Some(v) = self.gms {
            cfg.mechanisms.gms = v;
        }
        if let Some(v) = self.dlr {
            cfg.mechanisms.dlr = v;
        }
        if let Some(s) = &self.scope {
            cfg.scope = s.parse::<GradScope>().map_err(|e| CedoError::Config(e.to_string()))?;
        }
        if let Some(s) = &self.ortho_mode {
            cfg.gms.ortho_mode = s.parse::<OrthoMode>()?;
        }
        if let Some(s) = &self.combine_mode {
            cfg.gms.combine_mode = s.parse::<CombineMode>()?;
        }
        if let Some(v) = self.conflict_only {
            cfg.gms.conflict_only = v;
        }
        if let Some(v) = self.temperature {
            cfg.loss.temperature = v;
        }
        if let Some(v) = self.normalize_features {
            cfg.loss.normalize_features = v;
        }
        if let Some(corpus) = &self.corpus {
            cfg.data = DataSource::Corpus {
                corpus: corpus.clone(),
                split: self.split.clone(),
                qtype_prefix_len: self.qtype_prefix_len.unwrap_or(DEFAULT_QTYPE_PREFIX_LEN),
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// Comma-separated η_q values.
    #[arg(long, value_delimiter = ',')]
    grid_eta_q: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    grid_eta_v: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    grid_eta_c: Vec<f64>,
    /// Sweep every combination instead of one axis at a time.
    #[arg(long)]
    cartesian: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    num_qtypes: Option<usize>,
    #[arg(long)]
    answers_per_qtype: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    question_dim: Option<usize>,
    #[arg(long)]
    image_dim: Option<usize>,
    #[arg(long)]
    signal_strength: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_QTYPE_PREFIX_LEN)]
    qtype_prefix_len: usize,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    split: PathBuf,
    #[arg(long, default_value_t = DEFAULT_QTYPE_PREFIX_LEN)]
    qtype_prefix_len: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    split: PathBuf,
    /// Vocabulary written by `train`; defaults to vocab.json beside the checkpoint.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_QTYPE_PREFIX_LEN)]
    qtype_prefix_len: usize,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CedoError::io(dir, e))
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CedoError::Parse(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| CedoError::io(path, e))
}

fn write_text(text: &str, path: &Path) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CedoError::io(path, e))
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = args.resolve()?;
    ensure_dir(&args.out)?;
    let outcome = run(&cfg)?;
    let m = &outcome.metrics;
    export_metrics(m, &args.out.join("metrics.json"), ExportFormat::Json)?;
    export_metrics(m, &args.out.join("metrics.csv"), ExportFormat::Csv)?;
    save_checkpoint(&outcome.params, &args.out.join("model.ckpt.json"))?;
    write_json(&outcome.vocabulary, &args.out.join("vocab.json"))?;
    if let Some(table) = &outcome.weight_table {
        table.export_json(
            &args.out.join("weights.table.json"),
            &outcome.vocabulary.qtypes,
            &outcome.vocabulary.answers,
        )?;
    }
    if args.diag && cfg.mechanisms.gms {
        write_diagnostics(&outcome.diagnostics, &args.out.join("gms_diag.jsonl"))?;
    }
    println!(
        "test  all {:.2}  open {:.2}  closed {:.2}   (train all {:.2}; {} steps, {:.1}s)",
        m.accuracy.all, m.accuracy.open, m.accuracy.closed, m.train_accuracy.all, m.steps, m.wall_clock_secs
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_ablate(args: &TrainArgs) -> Result<()> {
    let cfg = args.resolve()?;
    ensure_dir(&args.out)?;
    let rows = ablate(&cfg)?;
    write_json(&rows, &args.out.join("ablation.json"))?;
    let csv = ablation_csv(&rows);
    write_text(&csv, &args.out.join("ablation.csv"))?;
    println!(
        "{:<10} {:>4} {:>4} {:>4} {:>7} {:>7} {:>7}",
        "Methods", "MHO", "GMS", "DLR", "All", "Open", "Closed"
    );
    let mark = |b: bool| if b { "✓" } else { "-" };
    for r in &rows {
        let a = r.metrics.accuracy;
        println!(
            "{:<10} {:>4} {:>4} {:>4} {:>7.2} {:>7.2} {:>7.2}",
            r.method,
            mark(r.mechanisms.mho),
            mark(r.mechanisms.gms),
            mark(r.mechanisms.dlr),
            a.all,
            a.open,
            a.closed
        );
    }
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let cfg = args.train.resolve()?;
    ensure_dir(&args.train.out)?;
    let grid = RateGrid {
        eta_q: args.grid_eta_q.clone(),
        eta_v: args.grid_eta_v.clone(),
        eta_c: args.grid_eta_c.clone(),
        mode: if args.cartesian {
            SweepMode::Cartesian
        } else {
            SweepMode::PerAxis
        },
    };
    let rows = sweep_rates(&cfg, &grid)?;
    let csv = sweep_csv(&rows);
    write_text(&csv, &args.train.out.join("sweep.csv"))?;
    print!("{csv}");
    Ok(())
}

fn cmd_gen_synth(args: &SynthArgs) -> Result<()> {
    let d = SynthSpec::default();
    let spec = SynthSpec {
        num_qtypes: args.num_qtypes.unwrap_or(d.num_qtypes),
        answers_per_qtype: args.answers_per_qtype.unwrap_or(d.answers_per_qtype),
        samples: args.samples.unwrap_or(d.samples),
        question_dim: args.question_dim.unwrap_or(d.question_dim),
        image_dim: args.image_dim.unwrap_or(d.image_dim),
        signal_strength: args.signal_strength.unwrap_or(d.signal_strength),
        noise: args.noise.unwrap_or(d.noise),
        seed: args.seed,
        ..d
    };
    let corpus = generate_synthetic(&spec)?;
    export_vqa_json(&corpus, &args.out)?;
    println!("wrote {} examples to {}", corpus.len(), args.out.display());
    Ok(())
}

fn cmd_cp_split(args: &SplitArgs) -> Result<()> {
    let pool = load_vqa_json(&args.corpus, args.qtype_prefix_len)?;
    // every partition of the source corpus is pooled before re-splitting
    let split = cp_split(&cluster_examples(&pool), &mut RngStream::new(args.seed))?;
    split.save(&args.out)?;
    println!(
        "train {} / test {} (train:test = {:.3}:1)",
        split.train.len(),
        split.test.len(),
        split.global_ratio()
    );
    Ok(())
}

fn cmd_inspect(args: &InspectArgs) -> Result<()> {
    let pool = load_vqa_json(&args.corpus, args.qtype_prefix_len)?;
    let split = CPSplit::load(&args.split)?;
    for (qtype, rows) in split_histograms(&pool, &split) {
        println!("{qtype}");
        let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
        for (answer, tr, te) in rows {
            println!("  {answer:<width$}  train {tr:>6}  test {te:>6}");
        }
    }
    println!(
        "total train {} / test {} (train:test = {:.3}:1)",
        split.train.len(),
        split.test.len(),
        split.global_ratio()
    );
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let params = load_checkpoint(&args.checkpoint)?;
    let vocab_path = args.vocab.clone().unwrap_or_else(|| {
        args.checkpoint
            .parent()
            .map(|p| p.join("vocab.json"))
            .unwrap_or_else(|| PathBuf::from("vocab.json"))
    });
    let text = std::fs::read_to_string(&vocab_path).map_err(|e| CedoError::io(&vocab_path, e))?;
    let vocab: Vocabulary =
        serde_json::from_str(&text).map_err(|e| CedoError::Parse(format!("{}: {e}", vocab_path.display())))?;
    let pool = load_vqa_json(&args.corpus, args.qtype_prefix_len)?;
    let split = CPSplit::load(&args.split)?;
    let test = select(&pool, &split.test)?;
    let acc = evaluate_params(&params, &test, &vocab)?;
    println!(
        "all {:.2}  open {:.2}  closed {:.2}  (n={})",
        acc.all, acc.open, acc.closed, acc.n_all
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::GenSynth(a) => cmd_gen_synth(a),
        Command::CpSplit(a) => cmd_cp_split(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::Eval(a) => cmd_eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
