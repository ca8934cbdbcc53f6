use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use quantground::pipeline::{self, Layout};
use quantground::{Execution, QuantKind, RunConfig};

#[derive(Parser)]
#[command(name = "quantground", version, about = "Quantifier and cardinal grounding pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// key = value config file; flags override it
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Scene composition: summed | concat
    #[arg(long, global = true)]
    mode: Option<String>,
    /// Word vectors: correlated | independent
    #[arg(long = "word-mode", global = true)]
    word_mode: Option<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Synthesize or ingest the concept inventory
    Gen,
    /// Build and validate the quantifier and cardinal datasets
    Build,
    /// Similarity profiles and SVM comparison
    Analyze,
    /// Train every mapping model
    Train,
    /// Retrieval evaluation
    Eval,
    /// Full pipeline
    All,
}

fn resolve(cli: &Cli) -> Result<RunConfig, String> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path).map_err(|e| e.to_string())?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(mode) = &cli.mode {
        cfg.set("mode", mode)?;
    }
    if let Some(word_mode) = &cli.word_mode {
        cfg.set("word_mode", word_mode)?;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), String> {
    let cfg = resolve(cli)?;
    let exec = Execution::default();
    let out = Layout::new(&cfg.out);
    let e = |err: quantground::Error| err.to_string();
    match cli.command {
        Command::Gen => {
            let inv = pipeline::cmd_gen(&cfg).map_err(e)?;
            println!(
                "gen: {} concepts, dim {} -> {}, {}",
                inv.len(),
                inv.dim(),
                out.visual().display(),
                out.words().display()
            );
        }
        Command::Build => {
            let [q, c] = pipeline::cmd_build(&cfg, exec).map_err(e)?;
            for ds in [&q, &c] {
                println!(
                    "build: {} {} scenarios ({} train, {} test) -> {}",
                    ds.kind,
                    ds.scenarios.len(),
                    ds.count(quantground::Split::Train),
                    ds.count(quantground::Split::Test),
                    out.manifest(ds.kind).display()
                );
            }
        }
        Command::Analyze => {
            let report = pipeline::cmd_analyze(&cfg, exec).map_err(e)?;
            for c in &report.svm.cells {
                println!("analyze: {} / {}: cv accuracy {:.1}%", c.kind, c.measure, 100.0 * c.cv_accuracy);
            }
            println!("analyze: reports -> {}", out.analysis().display());
        }
        Command::Train => {
            let summary = pipeline::cmd_train(&cfg, exec).map_err(e)?;
            println!("train: {} models -> {}", summary.models.len(), out.models().display());
        }
        Command::Eval => {
            let report = pipeline::cmd_eval(&cfg, exec).map_err(e)?;
            print_eval(&report);
            println!("eval: reports -> {}", out.eval().display());
        }
        Command::All => {
            let outcome = pipeline::cmd_all(&cfg, exec).map_err(e)?;
            println!(
                "all: {} concepts, {} + {} scenarios, {} models",
                outcome.concept_count, outcome.scenarios[0], outcome.scenarios[1], outcome.models
            );
            print_eval(&outcome.retrieval);
            println!("all: outputs in {}", cfg.out.display());
        }
    }
    Ok(())
}

fn print_eval(report: &quantground::RetrievalReport) {
    for kind in QuantKind::ALL {
        let parts: Vec<String> = report
            .variants()
            .into_iter()
            .filter_map(|v| report.mean_map(v, kind).map(|m| format!("{v} {m:.3}")))
            .collect();
        println!("eval: mean mAP over {kind}s: {}", parts.join(", "));
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) if !err.use_stderr() => {
            // --help / --version
            let _ = err.print();
            return ExitCode::SUCCESS;
        }
        Err(err) => {
            let text = err.render().to_string();
            eprintln!("{}", text.lines().next().unwrap_or("invalid arguments"));
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {}", msg.replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
