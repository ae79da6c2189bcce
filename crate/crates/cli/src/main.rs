use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use clap::{Args, Parser, Subcommand};
use ooc_core::agents::{ablation_rows, PipelineConfig, Verdict};
use ooc_core::corpus::{load_corpus, NewsItem};
use ooc_core::engine::{load_indices, save_indices, Detection, Encoders, Engine};
use ooc_core::evaluation::{
    accuracy_report, average_ranks, error_distribution, predictions, render_ablation_table, AblationResult, RankMatrix,
};
use ooc_core::llm_gateway::ProviderConfig;
use ooc_core::retrieval::IndexSet;
use ooc_core::transport::HttpTransport;
use ooc_core::vector_index::Granularity;
use ooc_core::{EngineConfig, Error, Result};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "ooc", version, about = "Out-of-context image/caption detection")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for evaluate/ablate.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Response cache directory for the chat gateway.
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Alignment threshold.
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Evidence items per granularity.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Chat provider: `rule-mock`, `script:<path>`, or `remote` (endpoint from the config file).
    #[arg(long, global = true)]
    provider: Option<String>,
    /// Output file or directory, depending on the subcommand.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Log more (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a corpus and print its manifest.
    Ingest { corpus: PathBuf },
    /// Build the visual, textual and event indices (written to --out).
    BuildIndex { corpus: PathBuf },
    /// Detect one item, from a corpus by id or from a caption and image.
    Detect {
        #[arg(long)]
        index: PathBuf,
        #[arg(long, requires = "id", conflicts_with_all = ["caption", "image"])]
        corpus: Option<PathBuf>,
        #[arg(long)]
        id: Option<String>,
        #[arg(long, requires = "image")]
        caption: Option<String>,
        #[arg(long)]
        image: Option<String>,
    },
    /// Detect every labeled item and write accuracy and error reports to --out.
    Evaluate {
        corpus: PathBuf,
        /// Required unless the configured pipeline uses no evidence.
        #[arg(long)]
        index: Option<PathBuf>,
    },
    /// Run the six ablation configurations and write sweep reports to --out.
    Ablate {
        corpus: PathBuf,
        #[arg(long)]
        index: PathBuf,
    },
    /// Mean ranks from a rank matrix file.
    RankReport { matrix: PathBuf },
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        #[arg(long)]
        index: Option<PathBuf>,
        /// Rank-study definition (methods and samples).
        #[arg(long)]
        study: PathBuf,
        /// Append-only event log.
        #[arg(long, default_value = "ooc-events.jsonl")]
        log: PathBuf,
    },
}

fn load_config(c: &Common) -> Result<EngineConfig> {
    let mut cfg = match &c.config {
        Some(p) => EngineConfig::load(p)?,
        None => EngineConfig::default(),
    };
    if let Some(tau) = c.tau {
        cfg.alignment.tau = tau;
    }
    if let Some(k) = c.k {
        cfg.retrieval.k = k;
    }
    if let Some(dir) = &c.cache_dir {
        cfg.gateway.cache_dir = Some(dir.clone());
    }
    if let Some(p) = &c.provider {
        cfg.gateway.provider = match p.as_str() {
            "rule-mock" => ProviderConfig::RuleMock,
            "remote" if matches!(cfg.gateway.provider, ProviderConfig::Remote { .. }) => cfg.gateway.provider.clone(),
            "remote" => return Err(Error::Config("--provider remote needs a [gateway.provider] remote section".into())),
            other => match other.strip_prefix("script:") {
                Some(path) => ProviderConfig::ScriptedMock { script_path: path.into() },
                None => return Err(Error::Config(format!("unknown provider {other:?}"))),
            },
        };
    }
    if c.jobs == 0 {
        return Err(Error::Config("--jobs must be at least 1".into()));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn engine(cfg: EngineConfig, indices: IndexSet) -> Result<Engine> {
    Engine::new(cfg, indices)
}

fn empty_indices(cfg: &EngineConfig) -> Result<IndexSet> {
    use ooc_core::VectorIndex;
    Ok(IndexSet {
        visual: VectorIndex::build(Granularity::Visual, cfg.embedding.visual.dim, Vec::new())?,
        textual: VectorIndex::build(Granularity::Textual, cfg.embedding.textual.dim, Vec::new())?,
        event: VectorIndex::build(Granularity::Event, cfg.embedding.textual.dim, Vec::new())?,
    })
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_file(path, &bytes)
}

fn write_jsonl<T: Serialize>(path: &Path, values: &[T]) -> Result<()> {
    let mut bytes = Vec::new();
    for v in values {
        bytes.extend(serde_json::to_vec(v)?);
        bytes.push(b'\n');
    }
    write_file(path, &bytes)
}

/// Runs `f` over items with at most `jobs` threads; output order matches input.
fn run_parallel<F>(items: &[NewsItem], jobs: usize, f: F) -> Result<Vec<Verdict>>
where
    F: Fn(&NewsItem) -> Result<Verdict> + Sync,
{
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<Verdict>>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.min(items.len()).max(1) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = items.get(i) else { break };
                let r = f(item);
                slots.lock().expect("slots")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("slots")
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

fn print_detection(d: &Detection) {
    if let Some(ev) = &d.evidence {
        for g in Granularity::ALL {
            for h in ev.hits(g) {
                println!("evidence [{}] {} dist={:.4} {}", g.as_str(), h.source_news_id, h.distance, h.payload);
            }
        }
    }
    for rec in &d.verdict.trace {
        println!("stage {} ({} call{})", rec.stage.tag(), rec.calls.len(), if rec.calls.len() == 1 { "" } else { "s" });
    }
    println!("{}", d.verdict.explanation);
    println!("{}", d.verdict.verdict_line());
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    match cli.command {
        Command::Ingest { corpus } => {
            let corpus = load_corpus(&corpus)?;
            let m = &corpus.manifest;
            println!("split={} items={}", m.split_name, m.items);
            for (cat, n) in &m.categories {
                println!("category {}={n}", cat.display_name());
            }
            if let Some(out) = &c.out {
                write_json(out, m)?;
            }
        }
        Command::BuildIndex { corpus } => {
            let cfg = load_config(c)?;
            let out = c.out.clone().ok_or_else(|| Error::Config("build-index needs --out <dir>".into()))?;
            let items = load_corpus(&corpus)?.items;
            let enc = Encoders::from_config(&cfg, Arc::new(HttpTransport::default()))?;
            let (set, report) = enc.build_database(&items)?;
            let bytes = save_indices(&set, &out)?;
            write_json(&out.join("build_report.json"), &report)?;
            println!(
                "items={} aligned_entities={} visual={} textual={} event={} bytes={bytes}",
                report.items, report.aligned_entities, report.visual_records, report.textual_records, report.event_records
            );
        }
        Command::Detect { index, corpus, id, caption, image } => {
            let cfg = load_config(c)?;
            let item = match (corpus, id, caption, image) {
                (Some(corpus), Some(id), _, _) => load_corpus(&corpus)?
                    .items
                    .into_iter()
                    .find(|i| i.id == id)
                    .ok_or_else(|| Error::InvalidInput(format!("no item {id:?} in corpus")))?,
                (None, id, Some(caption), Some(image)) => NewsItem::new(id.unwrap_or_else(|| "query".into()), image, caption),
                _ => return Err(Error::InvalidInput("detect needs --corpus with --id, or --caption with --image".into())),
            };
            let eng = engine(cfg, load_indices(&index)?)?;
            let det = eng.detect(&item)?;
            print_detection(&det);
            if let Some(out) = &c.out {
                write_json(out, &det)?;
            }
        }
        Command::Evaluate { corpus, index } => {
            let cfg = load_config(c)?;
            let items = load_corpus(&corpus)?.items;
            let indices = match index {
                Some(dir) => load_indices(dir)?,
                None if !cfg.pipeline.uses_evidence() => empty_indices(&cfg)?,
                None => return Err(Error::Config("evaluate needs --index when the pipeline uses evidence".into())),
            };
            let eng = engine(cfg, indices)?;
            let verdicts = run_parallel(&items, c.jobs, |item| eng.detect(item).map(|d| d.verdict))?;
            let preds = predictions(&items, &verdicts)?;
            let report = accuracy_report(&preds)?;
            let dist = error_distribution(&preds)?;
            let table = report.render_table(&eng.config.pipeline.label());
            let dist_table = dist.render_table();
            print!("{table}\n{dist_table}");
            if let Some(out) = &c.out {
                write_json(&out.join("eval_report.json"), &report)?;
                write_file(&out.join("eval_report.txt"), table.as_bytes())?;
                write_json(&out.join("error_distribution.json"), &dist)?;
                write_file(&out.join("error_distribution.txt"), dist_table.as_bytes())?;
                write_jsonl(&out.join("predictions.jsonl"), &preds)?;
                write_jsonl(&out.join("verdicts.jsonl"), &verdicts)?;
            }
        }
        Command::Ablate { corpus, index } => {
            let cfg = load_config(c)?;
            let items = load_corpus(&corpus)?.items;
            let eng = engine(cfg, load_indices(&index)?)?;
            let mut results = Vec::new();
            for row in ablation_rows() {
                let verdicts = run_parallel(&items, c.jobs, |item| eng.detect_with(item, &row).map(|d| d.verdict))?;
                let report = accuracy_report(&predictions(&items, &verdicts)?)?;
                results.push(AblationResult { config: PipelineConfig { send_image: eng.config.pipeline.send_image, ..row }, report, verdicts });
            }
            let table = render_ablation_table(&results);
            print!("{table}");
            if let Some(out) = &c.out {
                let summary: Vec<_> = results.iter().map(|r| serde_json::json!({ "config": r.config, "report": r.report })).collect();
                write_json(&out.join("ablation.json"), &summary)?;
                write_file(&out.join("ablation.txt"), table.as_bytes())?;
            }
        }
        Command::RankReport { matrix } => {
            let text = std::fs::read_to_string(&matrix).map_err(|e| Error::io(&matrix, e))?;
            let m: RankMatrix = serde_json::from_str(&text)?;
            let r = average_ranks(&m)?;
            let table = if r.cells == 0 { "no rankings\n".to_string() } else { r.render_table() };
            print!("{table}");
            if let Some(out) = &c.out {
                write_json(out, &r)?;
            }
        }
        Command::Serve { bind, index, study, log } => {
            let cfg = load_config(c)?;
            let eng = index.map(|dir| load_indices(dir).and_then(|ix| engine(cfg, ix))).transpose()?.map(Arc::new);
            let spec = ooc_service::StudySpec::load(&study)?;
            let (log, entries) = ooc_service::EventLog::open(&log).map_err(|e| Error::io(&log, e))?;
            let state = ooc_service::AppState::new(eng, spec, log, entries);
            let rt = tokio::runtime::Runtime::new().map_err(|e| Error::io("tokio runtime", e))?;
            rt.block_on(ooc_service::serve(&bind, state)).map_err(|e| Error::io(&bind, e))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.common.verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    tracing_subscriber::fmt().with_max_level(level).with_writer(std::io::stderr).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: kind={} msg={msg}", e.kind());
            ExitCode::from(1)
        }
    }
}
