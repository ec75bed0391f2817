//! Command-line entry point.
//!
//! Exit codes: 0 success, 2 validation/config failure, 3 backend failure,
//! 4 partial run interrupted mid-generation.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ragre::corpus::DatasetKind;
use ragre::evalkit::{render_comparison_report, render_run_report, ReportFormat, ScoringMode};
use ragre::pipeline::{
    cmd_compare, cmd_index, cmd_run, cmd_score, CorpusFormat, DatasetConfig, RunConfig, RunVariant,
    ScoreArgs,
};
use ragre::promptgen::TemplateVariant;
use ragre::refine::refinement_table;
use ragre::{Error, Result};

#[derive(Parser)]
#[command(
    name = "ragre",
    version,
    about = "Retrieval-augmented relation extraction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the embedding db from the configured training corpus.
    Index {
        #[arg(long)]
        config: PathBuf,
    },
    /// Execute a full run (retrieve, prompt, generate, refine, score).
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's variant.
        #[arg(long)]
        variant: Option<RunVariant>,
    },
    /// Score a prediction interchange file against a gold corpus.
    Score(ScoreCommand),
    /// Compare two completed run directories.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Which variant's score file to read when a directory holds both.
        #[arg(long)]
        variant: Option<CliVariant>,
        /// Directory for comparison.{json,csv,md}; stdout gets JSON either way.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit the prefix-restoration audit table for an inventory.
    RefineAudit {
        /// Dataset kind (tacred, tacrev, retacred, semeval, custom).
        #[arg(long)]
        inventory: String,
        /// Inventory JSON file; required when --inventory is custom.
        #[arg(long)]
        inventory_file: Option<PathBuf>,
        #[arg(long, default_value = "json")]
        format: String,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum CliVariant {
    Simple,
    Rag,
}

impl From<CliVariant> for TemplateVariant {
    fn from(value: CliVariant) -> Self {
        match value {
            CliVariant::Simple => TemplateVariant::Simple,
            CliVariant::Rag => TemplateVariant::Rag,
        }
    }
}

#[derive(Args)]
struct ScoreCommand {
    /// Prediction interchange file ({query_id, gold, predicted, ...} lines).
    #[arg(long)]
    pred: PathBuf,
    /// Gold corpus file.
    #[arg(long)]
    gold: PathBuf,
    /// Dataset kind for labels and the negative-label convention.
    #[arg(long, default_value = "tacred")]
    kind: String,
    /// Gold file format: tacred-json, semeval-txt, or jsonl (default by kind).
    #[arg(long)]
    gold_format: Option<String>,
    /// Inventory JSON file (required for --kind custom).
    #[arg(long)]
    inventory_file: Option<PathBuf>,
    #[arg(long, default_value = "positive-micro")]
    mode: String,
    #[arg(long)]
    variant: Option<CliVariant>,
    #[arg(long)]
    run_id: Option<String>,
    /// Directory for score_*.{json,csv,md}; stdout gets JSON either way.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_corpus_format(value: &str) -> Result<CorpusFormat> {
    match value {
        "tacred-json" => Ok(CorpusFormat::TacredJson),
        "semeval-txt" => Ok(CorpusFormat::SemevalTxt),
        "jsonl" => Ok(CorpusFormat::Jsonl),
        other => Err(Error::config(format!("unknown gold format '{other}'"))),
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Index { config } => {
            let config = RunConfig::from_path(&config)?;
            let summary = cmd_index(&config)?;
            println!(
                "{}",
                serde_json::json!({
                    "db_path": summary.db_path,
                    "entries": summary.entries,
                    "checksum": summary.checksum,
                })
            );
            Ok(())
        }
        Command::Run { config, variant } => {
            let mut config = RunConfig::from_path(&config)?;
            if let Some(variant) = variant {
                config.variant = variant;
                config.validate()?;
            }
            let summary = cmd_run(&config)?;
            for run in &summary.scored {
                println!(
                    "{}",
                    serde_json::json!({
                        "run_id": run.run_id,
                        "variant": run.variant,
                        "mode": run.mode,
                        "micro": run.micro,
                        "fp_count": run.fp_count,
                        "fn_count": run.fn_count,
                        "unparseable_count": run.unparseable_count,
                    })
                );
            }
            if let Some(comparison) = &summary.comparison {
                println!(
                    "{}",
                    serde_json::json!({
                        "comparison": {
                            "precision": comparison.precision,
                            "recall": comparison.recall,
                            "f1": comparison.f1,
                            "fp": comparison.fp,
                            "fn": comparison.fn_counts,
                        }
                    })
                );
            }
            eprintln!(
                "run {} complete; artifacts in {}",
                summary.run_id,
                summary.output_dir.display()
            );
            Ok(())
        }
        Command::Score(score) => {
            let kind: DatasetKind = score.kind.parse()?;
            let format = match &score.gold_format {
                Some(value) => Some(parse_corpus_format(value)?),
                None => None,
            };
            let mode: ScoringMode = score.mode.parse()?;
            let args = ScoreArgs {
                predictions_path: score.pred,
                gold_path: score.gold,
                dataset: DatasetConfig {
                    kind,
                    format,
                    train_path: None,
                    test_path: None,
                    inventory_path: score.inventory_file,
                },
                mode,
                run_id: score.run_id,
                variant: score.variant.map(TemplateVariant::from),
                out_dir: score.out,
            };
            let run = cmd_score(&args)?;
            println!("{}", render_run_report(&run, ReportFormat::Json).trim_end());
            Ok(())
        }
        Command::Compare { a, b, variant, out } => {
            let report = cmd_compare(&a, &b, variant.map(TemplateVariant::from), out.as_deref())?;
            println!(
                "{}",
                render_comparison_report(&report, ReportFormat::Json).trim_end()
            );
            Ok(())
        }
        Command::RefineAudit {
            inventory,
            inventory_file,
            format,
        } => {
            let kind: DatasetKind = inventory.parse()?;
            let inventory = DatasetConfig {
                kind,
                format: None,
                train_path: None,
                test_path: None,
                inventory_path: inventory_file,
            }
            .inventory()?;
            let table = refinement_table(&inventory);
            match format.as_str() {
                "json" => println!(
                    "{}",
                    serde_json::to_string_pretty(&table).expect("table serializes")
                ),
                "markdown" | "md" => {
                    println!("# Prefix restoration for {}\n", table.dataset_kind);
                    println!("| form | label |\n|---|---|");
                    for (form, label) in &table.unique {
                        println!("| {form} | {label} |");
                    }
                    println!("\n| ambiguous form | labels |\n|---|---|");
                    for (form, labels) in &table.ambiguous {
                        println!("| {form} | {} |", labels.join(", "));
                    }
                }
                other => return Err(Error::config(format!("unknown format '{other}'"))),
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
