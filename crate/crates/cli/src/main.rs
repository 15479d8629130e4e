use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use clap::{Parser, Subcommand};

use stockmem::backends::mock::Fallback;
use stockmem::backends::Backends;
use stockmem::harness::io::{load_news, load_prices, write_jsonl, write_prices};
use stockmem::harness::pipeline::{run_pipeline, BacktestRecord};
use stockmem::harness::synthetic::{generate, SyntheticSpec};
use stockmem::harness::{ablate, report_explainability, standard_variants, BacktestConfig, Inputs, Pipeline};
use stockmem::prompts::PromptSet;
use stockmem::store::{RecordKind, Store};

#[derive(Parser)]
#[command(name = "stockmem", version, about = "Event-reflection memory for stock movement prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a deterministic synthetic corpus with a ready-to-run config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        companies: usize,
        #[arg(long, default_value_t = 40)]
        train_days: usize,
        #[arg(long, default_value_t = 20)]
        test_days: usize,
        #[arg(long, default_value_t = 5)]
        window: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Validate the inputs and load them into the store.
    Ingest {
        #[arg(long)]
        config: PathBuf,
    },
    /// Process the training range and write reflections to the store.
    BuildMemory {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train, then run the online test loop and score it.
    Backtest {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run ablation variants, each on a fresh in-memory store.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Comma-separated variant names; all when absent.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
    },
    /// Explain one prediction from a records file.
    Report {
        #[arg(long)]
        records: PathBuf,
        /// Record id, `COMPANY@YYYY-MM-DD`.
        #[arg(long)]
        id: String,
    },
}

struct Loaded {
    cfg: BacktestConfig,
    inputs: Inputs,
    prompts: PromptSet,
}

fn load(config: &Path) -> Result<Loaded> {
    let cfg = BacktestConfig::load(config)?;
    let inputs = Inputs { news: load_news(&cfg.data.news)?, prices: load_prices(&cfg.data.prices)? };
    let prompts = match &cfg.data.prompts {
        Some(dir) => PromptSet::with_overrides(dir)?,
        None => PromptSet::default(),
    };
    Ok(Loaded { cfg, inputs, prompts })
}

fn backends(cfg: &BacktestConfig) -> Result<Backends> {
    Ok(Backends::from_config(&cfg.backend, Path::new("."))?)
}

fn pipeline(l: Loaded, require_store: bool) -> Result<Pipeline> {
    let store = match &l.cfg.data.store {
        Some(dir) => Store::open(dir)?,
        None if require_store => bail!("this command needs data.store in the config"),
        None => Store::in_memory(),
    };
    let b = backends(&l.cfg)?;
    Ok(Pipeline::new(l.cfg, store, b, l.prompts, &l.inputs)?)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Synth { out, companies, train_days, test_days, window, seed } => {
            if train_days == 0 || test_days == 0 || companies == 0 {
                bail!("companies, train-days and test-days must be positive");
            }
            let spec = SyntheticSpec { companies, train_days, test_days, window, seed, ..SyntheticSpec::default() };
            let data = generate(&spec);
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let mut cfg = data.config.clone();
            cfg.data.news = "news.jsonl".into();
            cfg.data.prices = "prices.csv".into();
            cfg.data.store = Some("store".into());
            cfg.backend.fixture = Some("fixture.json".into());
            cfg.backend.fallback = Fallback::Synthetic;
            write(&out.join("news.jsonl"), &write_jsonl(&data.inputs.news))?;
            write(&out.join("prices.csv"), &write_prices(&data.inputs.prices))?;
            write(&out.join("fixture.json"), &serde_json::to_string_pretty(&data.fixture)?)?;
            write(&out.join("config.toml"), &cfg.to_toml())?;
            println!("wrote {} documents, {} price bars to {}", data.inputs.news.len(), data.inputs.prices.len(), out.display());
        }
        Command::Ingest { config } => {
            let p = pipeline(load(&config)?, true)?;
            for kind in [RecordKind::News, RecordKind::Prices] {
                println!("{kind}: {}", p.store.count(kind));
            }
        }
        Command::BuildMemory { config } => {
            let p = pipeline(load(&config)?, true)?;
            let stats = p.train()?;
            println!(
                "processed {} company-days, wrote {} reflections ({} anchors skipped)",
                stats.days_processed, stats.reflections, stats.skipped_anchors
            );
        }
        Command::Backtest { config, out } => {
            let p = pipeline(load(&config)?, false)?;
            let outcome = run_pipeline(&p)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write(&out.join("metrics.json"), &outcome.report.to_json())?;
            write(&out.join("records.jsonl"), &outcome.records_jsonl())?;
            write(&out.join("generation_log.jsonl"), &write_jsonl(&outcome.generation_log))?;
            let summary = format!(
                "{}\nprompt digest: {}\naudited queries: {}, as-of violations: {}\n",
                outcome.report.render_table(),
                outcome.prompt_digest,
                outcome.audit.audited_queries,
                outcome.audit.violations
            );
            write(&out.join("report.txt"), &summary)?;
            print!("{summary}");
            if outcome.audit.violations > 0 {
                bail!("{} as-of violations; see {}", outcome.audit.violations, out.join("report.txt").display());
            }
        }
        Command::Ablate { config, out, variants } => {
            let l = load(&config)?;
            let all = standard_variants();
            let chosen: Vec<_> = if variants.is_empty() {
                all
            } else {
                let names: Vec<&str> = all.iter().map(|(n, _)| n.as_str()).collect();
                for v in &variants {
                    if !names.contains(&v.as_str()) {
                        bail!("unknown variant {v}; known: {}", names.join(", "));
                    }
                }
                all.into_iter().filter(|(n, _)| variants.contains(n)).collect()
            };
            let results = ablate(&l.cfg, &l.inputs, &chosen, || Backends::from_config(&l.cfg.backend, Path::new(".")).map_err(Into::into), &l.prompts)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write(&out.join("ablation.json"), &serde_json::to_string_pretty(&results)?)?;
            println!("{:<16} {:>7} {:>8}  prompt digest", "variant", "ACC", "MCC");
            for r in &results {
                println!("{:<16} {:>7.4} {:>8.4}  {}", r.name, r.report.average_acc, r.report.average_mcc, &r.prompt_digest[..16]);
            }
        }
        Command::Report { records, id } => {
            let text = fs::read_to_string(&records).with_context(|| format!("reading {}", records.display()))?;
            let rows = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(serde_json::from_str::<BacktestRecord>)
                .collect::<Result<Vec<_>, _>>()
                .with_context(|| format!("parsing {}", records.display()))?;
            print!("{}", report_explainability(&rows, &id)?);
        }
    }
    Ok(())
}
