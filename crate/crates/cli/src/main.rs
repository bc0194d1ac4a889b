use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gcflow::datasets::{generate_sbm, load_dataset, read_features_bin, save_dataset, write_features_bin, SbmConfig};
use gcflow::evalkit::{ari, kmeans, nmi, silhouette, KMEANS_MAX_ITERS};
use gcflow::trainer::{evaluate, train_into, Checkpoint, TrainConfig};
use gcflow::verify::standard_checks;
use gcflow::{Error, Result};

#[derive(Parser)]
#[command(name = "gcflow", version, about = "Graph-convolutional normalizing flows for node classification and clustering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write metrics, per-epoch log and checkpoint.
    Train(TrainArgs),
    /// Recompute metrics of a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Export a checkpoint's node representations in the feature binary format.
    Embed(EmbedArgs),
    /// k-means on an embedding file, with optional label-based scores.
    Cluster(ClusterArgs),
    /// Write a seeded stochastic block model dataset.
    GenSynth(SynthArgs),
    /// Run the determinant, gradient, inverse and density self-checks.
    Verify,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset manifest.
    #[arg(long)]
    data: PathBuf,
    /// Flat key=value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Extra overrides, e.g. `--set lambda=0.3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory for metrics.json, epochs.csv and checkpoint.json.
    #[arg(long)]
    out: PathBuf,
    /// Include wall-clock seconds in metrics.json.
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Write the metrics JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClusterArgs {
    /// Embedding in the feature binary format.
    #[arg(long)]
    embedding: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Labels file (one per line, -1 unknown) for NMI and ARI.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Write one cluster index per line here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    blocks: usize,
    #[arg(long, default_value_t = 100)]
    nodes_per_block: usize,
    #[arg(long, default_value_t = 0.1)]
    p: f64,
    #[arg(long, default_value_t = 0.01)]
    q: f64,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 3.0)]
    delta: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 20)]
    train_per_class: usize,
    #[arg(long, default_value_t = 30)]
    val_per_class: usize,
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => TrainConfig::parse(&fs::read_to_string(p).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        })?)?,
        None => TrainConfig::default(),
    };
    let seed = args.seed.map(|s| s.to_string());
    let mut pairs: Vec<(&str, &str)> = Vec::new();
    if let Some(m) = &args.model {
        pairs.push(("model", m));
    }
    if let Some(s) = &seed {
        pairs.push(("seed", s));
    }
    for o in &args.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
        pairs.push((k.trim(), v.trim()));
    }
    cfg.apply(pairs)?;
    let ds = load_dataset(&args.data)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::Io {
        path: args.out.clone(),
        source: e,
    })?;
    let ckpt_path = args.out.join("checkpoint.json");
    let mut last_good = None;
    let outcome = match train_into(&cfg, &ds, &mut last_good) {
        Ok(o) => o,
        Err(e) => {
            if let (Error::Diverged { .. }, Some(c)) = (&e, &last_good) {
                c.save(&ckpt_path)?;
                eprintln!("last good checkpoint kept at {}", ckpt_path.display());
            }
            return Err(e);
        }
    };
    outcome.checkpoint.save(&ckpt_path)?;
    write(&args.out.join("metrics.json"), &outcome.record.metrics_json(args.timing))?;
    write(&args.out.join("epochs.csv"), &outcome.record.epochs_csv())?;
    let m = &outcome.record.metrics;
    println!(
        "{} on {}: epochs={} test_micro_f1={:.4} silhouette_kmeans={:.4} nmi={:.4} ari={:.4}",
        cfg.model,
        ds.name,
        outcome.record.epochs_run(),
        m.test_micro_f1,
        m.silhouette_kmeans,
        m.nmi,
        m.ari
    );
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let ds = load_dataset(&args.data)?;
    let text = json(&evaluate(&ckpt, &ds)?.metrics);
    match args.out {
        Some(p) => write(&p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn embed(args: EmbedArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let ds = load_dataset(&args.data)?;
    write_features_bin(&args.out, &evaluate(&ckpt, &ds)?.representation)
}

fn read_labels(path: &Path) -> Result<Vec<Option<usize>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| match l.trim().parse::<i64>() {
            Ok(-1) => Ok(None),
            Ok(v) if v >= 0 => Ok(Some(v as usize)),
            _ => Err(Error::Format(format!("{}: bad label {l:?}", path.display()))),
        })
        .collect()
}

#[derive(serde::Serialize)]
struct ClusterReport {
    k: usize,
    inertia: f64,
    silhouette: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    nmi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ari: Option<f64>,
}

fn cluster(args: ClusterArgs) -> Result<()> {
    let x = read_features_bin(&args.embedding)?;
    let km = kmeans(&x, args.k, KMEANS_MAX_ITERS, args.seed)?;
    let mut report = ClusterReport {
        k: args.k,
        inertia: km.inertia(),
        silhouette: silhouette(&x, &km.labels)?,
        nmi: None,
        ari: None,
    };
    if let Some(p) = &args.labels {
        let labels = read_labels(p)?;
        if labels.len() != x.rows() {
            return Err(Error::Format(format!("{} labels for {} rows", labels.len(), x.rows())));
        }
        let (pred, truth): (Vec<usize>, Vec<usize>) = labels
            .iter()
            .zip(&km.labels)
            .filter_map(|(t, &a)| t.map(|t| (a, t)))
            .unzip();
        report.nmi = Some(nmi(&pred, &truth)?);
        report.ari = Some(ari(&pred, &truth)?);
    }
    if let Some(p) = &args.out {
        let lines: String = km.labels.iter().map(|l| format!("{l}\n")).collect();
        write(p, &lines)?;
    }
    print!("{}", json(&report));
    Ok(())
}

fn gen_synth(a: SynthArgs) -> Result<()> {
    let cfg = SbmConfig {
        blocks: a.blocks,
        nodes_per_block: a.nodes_per_block,
        p: a.p,
        q: a.q,
        dim: a.dim,
        delta: a.delta,
        sigma: a.sigma,
        train_per_class: a.train_per_class,
        val_per_class: a.val_per_class,
        seed: a.seed,
    };
    let path = save_dataset(&generate_sbm(&cfg)?, &a.out)?;
    println!("{}", path.display());
    Ok(())
}

fn verify() -> Result<bool> {
    let checks = standard_checks()?;
    for c in &checks {
        println!("{}", c.line());
    }
    Ok(checks.iter().all(|c| c.passed))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a).map(|_| true),
        Command::Eval(a) => eval(a).map(|_| true),
        Command::Embed(a) => embed(a).map(|_| true),
        Command::Cluster(a) => cluster(a).map(|_| true),
        Command::GenSynth(a) => gen_synth(a).map(|_| true),
        Command::Verify => verify(),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::FAILURE
        }
    }
}
