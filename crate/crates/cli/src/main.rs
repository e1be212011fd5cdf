use std::path::PathBuf;

use anyhow::Context;
use avitopics::avijst::PiSampling;
use avitopics_cli::commands::{
    cmd_eval, cmd_gen_synthetic, cmd_summarize, cmd_topwords, cmd_train, EvalArgs, GenArgs,
    SyntheticKind,
};
use avitopics_cli::config::{ModelKind, TrainConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "avitopics",
    about = "Autoencoding variational topic models: train, inspect, evaluate"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model and write per-epoch checkpoints plus a metrics log
    Train(TrainArgs),
    /// Print top words per topic (and per sentiment for avijst)
    Topwords {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long)]
        json: bool,
    },
    /// Score a checkpoint: coherence, classification, optional alignment
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Cross-check this vocabulary's hash against the checkpoint
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Synthetic ground-truth manifest for alignment scores
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        top_n: usize,
        #[arg(long)]
        json: bool,
    },
    /// Per-document sentiment/topic digest with a corpus rollup (avijst)
    Summarize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        docs: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Sample a synthetic corpus with known ground truth
    GenSynthetic {
        #[arg(long, value_enum)]
        kind: SyntheticKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        label_fraction: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        num_docs: Option<usize>,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// JSON file with a TrainConfig; flags below override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    model: Option<ModelKind>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    s: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    lambda_seed: Option<f64>,
    #[arg(long)]
    lambda_nu: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    classifier_lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated hidden layer sizes, e.g. 100,100
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long, value_parser = parse_pi_sampling)]
    pi_sampling: Option<PiSampling>,
    #[arg(long)]
    npmi_every: Option<usize>,
    #[arg(long)]
    npmi_top_n: Option<usize>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    seeds: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn parse_pi_sampling(s: &str) -> Result<PiSampling, String> {
    match s {
        "deterministic" => Ok(PiSampling::Deterministic),
        "reparameterized" => Ok(PiSampling::Reparameterized),
        other => Err(format!(
            "unknown pi_sampling `{other}` (expected deterministic|reparameterized)"
        )),
    }
}

impl TrainArgs {
    fn into_config(self) -> anyhow::Result<TrainConfig> {
        let mut config = match &self.config {
            Some(path) => TrainConfig::from_json_file(path)
                .with_context(|| format!("loading config {}", path.display()))?,
            None => TrainConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { config.$field = v; })*
            };
        }
        set!(
            model, k, s, alpha, gamma, lambda_seed, lambda_nu, lr, classifier_lr, batch_size,
            epochs, seed, hidden, pi_sampling, npmi_every, npmi_top_n, corpus, vocab, output
        );
        if let Some(v) = self.labels {
            config.labels = Some(v);
        }
        if let Some(v) = self.seeds {
            config.seeds = Some(v);
        }
        config.apply_env();
        Ok(config)
    }
}

fn emit<T: serde::Serialize>(value: &T, text: String, json: bool) -> anyhow::Result<()> {
    if json {
        println!("{}", serde_json::to_string_pretty(value)?);
    } else {
        print!("{text}");
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    // die quietly when the downstream pipe closes (e.g. `topwords | head`)
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    env_logger::init();
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Train(args) => {
            let config = args.into_config()?;
            let result = cmd_train(&config)?;
            let last = result.records.last().expect("at least one epoch");
            println!(
                "trained {} for {} epochs ({} steps); final loss {:.4}",
                config.model,
                result.records.len(),
                result.steps,
                last.loss
            );
            println!("checkpoint: {}", result.checkpoint.display());
            println!("metrics:    {}", result.metrics.display());
        }
        Cmd::Topwords { checkpoint, n, json } => {
            let report = cmd_topwords(&checkpoint, n)?;
            emit(&report, report.text(), json)?;
        }
        Cmd::Eval {
            checkpoint,
            corpus,
            labels,
            vocab,
            manifest,
            top_n,
            json,
        } => {
            let report = cmd_eval(&EvalArgs {
                checkpoint: &checkpoint,
                corpus: &corpus,
                labels: labels.as_deref(),
                vocab: vocab.as_deref(),
                synthetic_manifest: manifest.as_deref(),
                top_n,
            })?;
            emit(&report, report.text(), json)?;
        }
        Cmd::Summarize {
            checkpoint,
            docs,
            json,
        } => {
            let report = cmd_summarize(&checkpoint, &docs)?;
            emit(&report, report.text(), json)?;
        }
        Cmd::GenSynthetic {
            kind,
            out,
            seed,
            label_fraction,
            gamma,
            num_docs,
        } => {
            let spec = cmd_gen_synthetic(&GenArgs {
                kind,
                out: out.clone(),
                seed,
                label_fraction,
                gamma,
                num_docs,
            })?;
            println!(
                "wrote synthetic corpus (K={} S={} V={} docs={}) to {}",
                spec.k,
                spec.s,
                spec.v,
                spec.num_docs,
                out.display()
            );
        }
    }
    Ok(())
}
