use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use riskaudit::config::Config;
use riskaudit::dataset::{
    chronological_split, filter_population, load_cohort, save_cohort, Population,
};
use riskaudit::metrics::{load_predictions, save_predictions};
use riskaudit::model::{smote, train_reference, FeatureEncoder, ModelArtifact, ScorerParams};
use riskaudit::report::{
    amplification_table, histogram_table, pairwise_tables, render_markdown, run_audit,
    run_audit_with_tiers, table_one, tier_accuracy_table, AuditReport, Table,
};
use riskaudit::synth::{generate_cohort, SynthSpec};
use riskaudit::tiering::{assign_tiers, load_tiers, save_tiers};
use riskaudit::{Error, Result};

#[derive(Parser)]
#[command(
    name = "riskaudit",
    version,
    about = "Stage-by-stage fairness audits for risk-scoring pipelines"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Overrides the seed from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON config (schema, split, model, audit settings).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort (cohort.csv, schema.json).
    Synth {
        /// Population sizes of the calibrated preset are divided by this.
        #[arg(long, default_value_t = 10)]
        divisor: u64,
        /// Generator spec JSON; overrides the preset and the config.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Chronological train/validation/test split (train.csv, validation.csv, test.csv).
    Split {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        population: Option<Population>,
        #[command(flatten)]
        common: Common,
    },
    /// Fit the reference logistic scorer, with SMOTE on the training rows (model.json).
    Train {
        #[arg(long)]
        train: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Score a cohort with a fitted model (predictions.csv).
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        cohort: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Assign percentile risk tiers to predictions (tiers.csv).
    Tier {
        #[arg(long)]
        predictions: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the full audit (audit.json).
    Audit {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        /// Precomputed tiers; computed from the predictions when absent.
        #[arg(long)]
        tiers: Option<PathBuf>,
        #[arg(long)]
        population: Option<Population>,
        /// Record the current time in the report metadata.
        #[arg(long)]
        stamp: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Render tables from one or more audit.json files (report.md and CSVs).
    Report {
        #[arg(long = "audit", required = true)]
        audits: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

impl Common {
    fn config(&self) -> Result<Config> {
        let mut config = match &self.config {
            Some(path) => Config::load(path)?,
            None => Config::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        Ok(config)
    }

    fn out(&self, name: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out_dir).map_err(|e| Error::Io {
            path: self.out_dir.clone(),
            source: e,
        })?;
        Ok(self.out_dir.join(name))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            divisor,
            spec,
            common,
        } => {
            let config = common.config()?;
            let mut spec = match (spec, config.synth.clone()) {
                (Some(path), _) => serde_json::from_str::<SynthSpec>(&read_text(&path)?)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
                (None, Some(s)) => s,
                (None, None) => SynthSpec::calibrated(divisor, config.seed),
            };
            if let Some(seed) = common.seed {
                spec.seed = seed;
            }
            let cohort = generate_cohort(&spec)?;
            save_cohort(&cohort, &common.out("cohort.csv")?)?;
            let schema = serde_json::to_string_pretty(cohort.schema())? + "\n";
            write_text(&common.out("schema.json")?, &schema)?;
            eprintln!("wrote {} records", cohort.len());
        }
        Command::Split {
            cohort,
            population,
            common,
        } => {
            let config = common.config()?;
            let mut cohort = load_cohort(&cohort, &config.schema)?;
            if let Some(p) = population {
                cohort = filter_population(&cohort, p);
            }
            let (train, validation, test) = chronological_split(&cohort, &config.split)?;
            save_cohort(&train, &common.out("train.csv")?)?;
            save_cohort(&validation, &common.out("validation.csv")?)?;
            save_cohort(&test, &common.out("test.csv")?)?;
            eprintln!(
                "train {} / validation {} / test {}",
                train.len(),
                validation.len(),
                test.len()
            );
        }
        Command::Train { train, common } => {
            let config = common.config()?;
            let cohort = load_cohort(&train, &config.schema)?;
            let m = &config.model;
            let encoder = FeatureEncoder::fit(&cohort, m.standardize);
            let mut matrix = encoder.encode(&cohort)?;
            if m.smote_k > 0 {
                matrix = smote(&matrix, m.smote_k, config.seed)?;
            }
            let params = train_reference(
                &matrix,
                &ScorerParams {
                    l2: m.l2,
                    learning_rate: m.learning_rate,
                    max_epochs: m.max_epochs,
                    tolerance: m.tolerance,
                    seed: config.seed,
                    ..ScorerParams::default()
                },
            )?;
            ModelArtifact {
                encoder,
                smote_k: m.smote_k,
                params,
            }
            .save(&common.out("model.json")?)?;
        }
        Command::Score {
            model,
            cohort,
            common,
        } => {
            let config = common.config()?;
            let cohort = load_cohort(&cohort, &config.schema)?;
            let preds = ModelArtifact::load(&model)?.score(&cohort, config.audit.threshold)?;
            save_predictions(&preds, &common.out("predictions.csv")?)?;
        }
        Command::Tier {
            predictions,
            common,
        } => {
            let config = common.config()?;
            let preds = load_predictions(&predictions, config.audit.threshold)?;
            let assign = assign_tiers(&preds, &config.audit.quotas)?;
            save_tiers(&assign, &common.out("tiers.csv")?)?;
        }
        Command::Audit {
            cohort,
            predictions,
            tiers,
            population,
            stamp,
            common,
        } => {
            let config = common.config()?;
            let mut cohort = load_cohort(&cohort, &config.schema)?;
            if let Some(p) = population {
                cohort = filter_population(&cohort, p);
            }
            let preds =
                load_predictions(&predictions, config.audit.threshold)?.align_to(&cohort)?;
            let mut report = match tiers {
                Some(path) => {
                    let mut assign = load_tiers(&path)?;
                    let keep: std::collections::HashSet<&str> = cohort.ids().collect();
                    assign.entries.retain(|e| keep.contains(e.id.as_str()));
                    run_audit_with_tiers(&cohort, &preds, &assign, &config)?
                }
                None => run_audit(&cohort, &preds, &config)?,
            };
            if stamp {
                let secs = SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map_or(0, |d| d.as_secs());
                report.metadata.timestamp = Some(format!("{secs}"));
            }
            write_text(&common.out("audit.json")?, &report.to_json()?)?;
        }
        Command::Report { audits, common } => {
            let reports = audits
                .iter()
                .map(|p| AuditReport::from_json(&read_text(p)?))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&AuditReport> = reports.iter().collect();
            write_text(&common.out("report.md")?, &render_markdown(&refs))?;
            write_csv(&common, "table_one.csv", &table_one(&refs))?;
            for r in &reports {
                let scope = &r.metadata.scope;
                for (t, attr) in pairwise_tables(r).iter().zip(
                    r.prediction
                        .attributes
                        .iter()
                        .filter(|a| a.pairwise.is_some()),
                ) {
                    write_csv(
                        &common,
                        &format!("pairwise_{scope}_{}.csv", attr.attribute),
                        t,
                    )?;
                }
                write_csv(
                    &common,
                    &format!("tier_accuracy_{scope}.csv"),
                    &tier_accuracy_table(r),
                )?;
                write_csv(
                    &common,
                    &format!("amplification_{scope}.csv"),
                    &amplification_table(r),
                )?;
                write_csv(
                    &common,
                    &format!("histogram_{scope}.csv"),
                    &histogram_table(r),
                )?;
            }
        }
    }
    Ok(())
}

fn write_csv(common: &Common, name: &str, table: &Table) -> Result<()> {
    write_text(&common.out(name)?, &table.to_csv()?)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
