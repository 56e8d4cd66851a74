//! Command-line entry point wiring the pipeline end to end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure
//! (non-finite loss during training).

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use nsim_core::augment::{
    back_translate, build_default_plan, translate_train, AugmentPlan, IdentityTranslator,
    TaggingTranslator, TranslatorPort,
};
use nsim_core::config::{sub_seed, RunConfig, RunManifest};
use nsim_core::corpus::{
    clean_text, load_dataset, read_jsonl, split_kfold, write_jsonl, FoldAssignment, Lang,
    Provenance, OVERALL_INDEX,
};
use nsim_core::eval::{clip, format_pearson, per_pair_report, predictions_to_csv_string};
use nsim_core::model::ModelParameters;
use nsim_core::tokenize::{Tokenizer, TruncationPolicy};
use nsim_core::train::{cross_validate, prepare_examples, EnsembleModel, TrainError};

#[derive(Parser)]
#[command(
    name = "nsim",
    version,
    about = "Multilingual news-article similarity: ingest, augment, train, evaluate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration file (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Global seed; overrides the config value.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Fold-level parallelism for training.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Truncation preset (h256t0, h200t56, h128t128, h56t200, h0t256);
    /// overrides the config value.
    #[arg(long, global = true)]
    policy: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Load the CSV pair index plus article JSON files, clean the texts and
    /// dump a JSON-lines dataset.
    Ingest {
        /// CSV pair index.
        #[arg(long)]
        index: PathBuf,
        /// Directory holding <article_id>.json files.
        #[arg(long)]
        articles: PathBuf,
    },
    /// Back-translate eligible records and run the translate-train plan.
    Augment {
        /// JSON-lines dataset produced by ingest.
        #[arg(long)]
        dataset: PathBuf,
        /// Plan file (JSON-lines); the built-in arrangement when omitted.
        #[arg(long)]
        plan: Option<PathBuf>,
        /// Translator stub: identity or tagging.
        #[arg(long, default_value = "identity")]
        translator: String,
    },
    /// Write a deterministic k-fold assignment for a dataset.
    Split {
        #[arg(long)]
        dataset: PathBuf,
        /// Fold count; the config value when omitted.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Cross-validate: train every fold, write checkpoints and metrics.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Existing fold assignment; computed from the config when omitted.
        #[arg(long)]
        folds: Option<PathBuf>,
    },
    /// Ensemble-predict a dataset, clip, and write predictions + report.
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        /// Directory containing fold_*.ckpt checkpoints.
        #[arg(long)]
        ensemble: PathBuf,
    },
    /// Summarize a metrics log into per-fold bests and their mean.
    Report {
        /// metrics.jsonl written by train.
        #[arg(long)]
        metrics: PathBuf,
    },
}

/// Usage problems detected after argument parsing.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            std::process::exit(1);
        }
    };
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(exit_code(&err));
    }
}

fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(TrainError::NonFiniteLoss { .. }) = cause.downcast_ref::<TrainError>() {
            return 3;
        }
        if cause.downcast_ref::<UsageError>().is_some() {
            return 1;
        }
    }
    2
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read config {}", path.display()))?;
            RunConfig::from_json(&text)
                .with_context(|| format!("cannot parse config {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(policy) = &cli.policy {
        config.policy = policy.clone();
    }
    let policy = TruncationPolicy::preset(&config.policy).ok_or_else(|| {
        UsageError(format!(
            "unknown truncation preset {:?} (expected one of {})",
            config.policy,
            TruncationPolicy::preset_names().join(", ")
        ))
    })?;

    match &cli.command {
        Command::Ingest { index, articles } => cmd_ingest(&cli, index, articles),
        Command::Augment {
            dataset,
            plan,
            translator,
        } => cmd_augment(&cli, &config, dataset, plan.as_deref(), translator),
        Command::Split { dataset, k } => cmd_split(&cli, &config, dataset, *k),
        Command::Train { dataset, folds } => {
            cmd_train(&cli, &config, policy, dataset, folds.as_deref())
        }
        Command::Evaluate { dataset, ensemble } => cmd_evaluate(&cli, policy, dataset, ensemble),
        Command::Report { metrics } => cmd_report(metrics),
    }
}

fn ensure_out_dir(cli: &Cli) -> Result<()> {
    fs::create_dir_all(&cli.out)
        .with_context(|| format!("cannot create output directory {}", cli.out.display()))
}

fn cmd_ingest(cli: &Cli, index: &Path, articles: &Path) -> Result<()> {
    let mut outcome = load_dataset(index, articles)?;
    for record in &mut outcome.records {
        record.title1 = clean_text(&record.title1);
        record.text1 = clean_text(&record.text1);
        record.title2 = clean_text(&record.title2);
        record.text2 = clean_text(&record.text2);
    }
    ensure_out_dir(cli)?;
    let out_path = cli.out.join("dataset.jsonl");
    write_jsonl(&outcome.records, &out_path)?;
    println!(
        "loaded {} records, skipped {} ({} missing, {} malformed) -> {}",
        outcome.records.len(),
        outcome.skipped(),
        outcome.skipped_missing,
        outcome.skipped_malformed,
        out_path.display()
    );
    Ok(())
}

fn cmd_augment(
    cli: &Cli,
    config: &RunConfig,
    dataset: &Path,
    plan_path: Option<&Path>,
    translator_name: &str,
) -> Result<()> {
    let records = read_jsonl(dataset)?;
    let plan = match plan_path {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read plan {}", path.display()))?;
            AugmentPlan::from_jsonl(&text)?
        }
        None => build_default_plan(),
    };
    let translator: Box<dyn TranslatorPort> = match translator_name {
        "identity" => Box::new(IdentityTranslator),
        "tagging" => Box::new(TaggingTranslator),
        other => {
            return Err(UsageError(format!(
                "unknown translator {other:?} (expected identity or tagging)"
            ))
            .into())
        }
    };

    let mut back_translated = Vec::new();
    for record in &records {
        if record.provenance != Provenance::Original {
            continue;
        }
        let eligible = (record.is_monolingual() && record.lang1 != Lang::En)
            || matches!(
                (record.lang1, record.lang2),
                (Lang::De, Lang::En) | (Lang::En, Lang::De)
            );
        if !eligible {
            continue;
        }
        back_translated.push(back_translate(record, Lang::En, translator.as_ref())?);
    }

    let sampling_seed = sub_seed(config.seed, "sampling");
    let translated = translate_train(&records, &plan, translator.as_ref(), sampling_seed)?;

    ensure_out_dir(cli)?;
    let mut combined = records;
    let originals = combined.len();
    combined.extend(back_translated.iter().cloned());
    combined.extend(translated.iter().cloned());
    let out_path = cli.out.join("augmented.jsonl");
    write_jsonl(&combined, &out_path)?;
    println!(
        "kept {originals} originals, back-translated {}, translate-train {} -> {} ({} total)",
        back_translated.len(),
        translated.len(),
        out_path.display(),
        combined.len()
    );
    Ok(())
}

fn cmd_split(cli: &Cli, config: &RunConfig, dataset: &Path, k: Option<usize>) -> Result<()> {
    let records = read_jsonl(dataset)?;
    let k = k.unwrap_or(config.k);
    let folds = split_kfold(&records, k, sub_seed(config.seed, "split"))?;
    ensure_out_dir(cli)?;
    let out_path = cli.out.join("folds.json");
    fs::write(&out_path, serde_json::to_string_pretty(&folds)?)
        .with_context(|| format!("cannot write {}", out_path.display()))?;
    println!(
        "assigned {} records to {k} folds -> {}",
        folds.fold_of.len(),
        out_path.display()
    );
    Ok(())
}

fn read_folds(path: &Path) -> Result<FoldAssignment> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read folds {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("cannot parse folds {}", path.display()))
}

fn cmd_train(
    cli: &Cli,
    config: &RunConfig,
    policy: TruncationPolicy,
    dataset: &Path,
    folds_path: Option<&Path>,
) -> Result<()> {
    let records = read_jsonl(dataset)?;
    let folds = match folds_path {
        Some(path) => read_folds(path)?,
        None => split_kfold(&records, config.k, sub_seed(config.seed, "split"))?,
    };
    let tokenizer = Tokenizer::new(config.model.vocab_size as u32);
    let examples = prepare_examples(&records, &tokenizer, policy);

    let mut input_paths = vec![dataset.display().to_string()];
    if let Some(path) = folds_path {
        input_paths.push(path.display().to_string());
    }
    let mut manifest = RunManifest::new(config.clone(), input_paths, cli.out.display().to_string());

    let results = cross_validate(
        &examples,
        &folds,
        &config.model,
        &config.loss,
        &config.optimizer,
        config.seed,
        cli.jobs,
    )?;

    ensure_out_dir(cli)?;
    let mut metrics = String::new();
    for result in &results {
        for stats in &result.training_curve {
            let line = serde_json::json!({
                "fold": result.fold_index,
                "epoch": stats.epoch,
                "train_loss": stats.train_loss,
                "val_pearson": stats.val_pearson,
            });
            metrics.push_str(&line.to_string());
            metrics.push('\n');
        }
    }
    fs::write(cli.out.join("metrics.jsonl"), metrics)?;
    let mut best_sum = 0.0;
    let mut best_count = 0usize;
    for result in &results {
        let path = cli.out.join(format!("fold_{}.ckpt", result.fold_index));
        result.best_checkpoint.save(&path)?;
        println!(
            "fold {}: best epoch {} val_pearson {}",
            result.fold_index,
            result.best_epoch,
            format_pearson(result.best_val_pearson)
        );
        if let Some(v) = result.best_val_pearson {
            best_sum += v;
            best_count += 1;
        }
    }
    if best_count > 0 {
        println!(
            "mean best val_pearson {:.2} over {best_count} folds",
            100.0 * best_sum / best_count as f64
        );
    }
    manifest.finish();
    manifest.save(&cli.out.join("manifest.json"))?;
    Ok(())
}

fn cmd_evaluate(cli: &Cli, policy: TruncationPolicy, dataset: &Path, ensemble_dir: &Path) -> Result<()> {
    let records = read_jsonl(dataset)?;
    let mut checkpoint_paths: Vec<PathBuf> = fs::read_dir(ensemble_dir)
        .with_context(|| format!("cannot read ensemble dir {}", ensemble_dir.display()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("fold_") && n.ends_with(".ckpt"))
        })
        .collect();
    checkpoint_paths.sort();
    if checkpoint_paths.is_empty() {
        bail!("no fold_*.ckpt checkpoints in {}", ensemble_dir.display());
    }
    let members = checkpoint_paths
        .iter()
        .map(|p| ModelParameters::load(p))
        .collect::<Result<Vec<_>, _>>()?;
    let vocab_size = members[0].config.vocab_size as u32;
    let ensemble = EnsembleModel { members };

    let tokenizer = Tokenizer::new(vocab_size);
    let examples = prepare_examples(&records, &tokenizer, policy);
    let mut predictions = Vec::with_capacity(examples.len());
    for example in &examples {
        let mean = ensemble
            .predict(&example.ids)
            .map_err(|e| anyhow!("prediction failed for {}: {e}", example.pair_id))?;
        // average first, clip once at the end
        predictions.push((example.pair_id.clone(), clip(mean[OVERALL_INDEX], 1.0, 4.0)));
    }

    let report = per_pair_report(&records, &predictions)?;
    ensure_out_dir(cli)?;
    fs::write(
        cli.out.join("predictions.csv"),
        predictions_to_csv_string(&predictions),
    )?;
    fs::write(cli.out.join("report.csv"), report.to_csv_string())?;
    fs::write(
        cli.out.join("report.json"),
        serde_json::to_string_pretty(&report.to_json_summary())?,
    )?;
    println!(
        "evaluated {} pairs with {} members: overall pearson {}",
        predictions.len(),
        checkpoint_paths.len(),
        format_pearson(report.overall_pearson)
    );
    Ok(())
}

fn cmd_report(metrics_path: &Path) -> Result<()> {
    let text = fs::read_to_string(metrics_path)
        .with_context(|| format!("cannot read metrics {}", metrics_path.display()))?;
    #[derive(serde::Deserialize)]
    struct MetricLine {
        fold: usize,
        epoch: usize,
        #[allow(dead_code)]
        train_loss: f64,
        val_pearson: Option<f64>,
    }
    let mut best: std::collections::BTreeMap<usize, (usize, Option<f64>)> =
        std::collections::BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: MetricLine = serde_json::from_str(line)
            .with_context(|| format!("malformed metrics line {}", i + 1))?;
        let entry = best.entry(parsed.fold).or_insert((parsed.epoch, None));
        match (entry.1, parsed.val_pearson) {
            (None, Some(_)) => *entry = (parsed.epoch, parsed.val_pearson),
            (Some(current), Some(candidate)) if candidate > current => {
                *entry = (parsed.epoch, parsed.val_pearson)
            }
            _ => {}
        }
    }
    if best.is_empty() {
        bail!("metrics log {} holds no entries", metrics_path.display());
    }
    println!("fold  best_epoch  pearson");
    let mut sum = 0.0;
    let mut count = 0usize;
    for (fold, (epoch, pearson)) in &best {
        println!("{fold:>4}  {epoch:>10}  {:>7}", format_pearson(*pearson));
        if let Some(v) = pearson {
            sum += v;
            count += 1;
        }
    }
    if count > 0 {
        println!("mean  {:>10}  {:>7.2}", "", 100.0 * sum / count as f64);
    } else {
        println!("mean  {:>10}  {:>7}", "", "NA");
    }
    Ok(())
}
