use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use acurai_core::fff::{FactExtractor, FffConfig};
use acurai_core::harness::{evaluate, load_dataset, wilson_interval, EvalOptions, HarnessError, UNSPECIFIED_MODEL};
use acurai_core::llm::{HttpChatClient, LlmClient, LlmError, RecordingClient, ReplayClient};
use acurai_core::nlp::{expand_coordination, extract_noun_phrases, NounPhrase};
use acurai_core::pipeline::{Pipeline, PipelineConfig, PipelineError, PipelineTrace};
use acurai_core::query_split::{split_query_capped, AtomicQuery};
use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

use crate::config::AppConfig;
use crate::gateway::{self, AppState};

#[derive(Debug, Parser)]
#[command(name = "acurai", version, about = "Noun-phrase collision aware RAG middleware")]
pub struct Cli {
    /// JSON config file (default: $ACURAI_CONFIG)
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Answer LLM calls from this cassette; no network
    #[arg(long, global = true, conflicts_with = "record")]
    pub replay: Option<PathBuf>,
    /// Call the backend and record responses into this cassette
    #[arg(long, global = true)]
    pub record: Option<PathBuf>,
    /// Overwrite keys already in the --record cassette
    #[arg(long, global = true, requires = "record")]
    pub force: bool,
    /// Write one trace JSON per run into this directory
    #[arg(long, global = true)]
    pub trace_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split a query on its noun-phrase collisions
    SplitQuery { query: String },
    /// Extract fully-formatted facts about an entity from a JSON list of passages
    Fff {
        passages: PathBuf,
        #[arg(long)]
        entity: String,
        /// Deterministic pass only
        #[arg(long)]
        no_llm: bool,
    },
    /// Run the full pipeline on one record ({"query", "passages"})
    Run {
        #[arg(value_name = "RECORD")]
        input: PathBuf,
    },
    /// Evaluate a JSONL dataset
    Eval {
        dataset: PathBuf,
        /// Also write per-record verdicts as CSV
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        workers: usize,
        #[arg(long, default_value_t = 1.96)]
        z: f64,
    },
    /// Start the HTTP gateway
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Convert RAGTruth source_info.jsonl + response.jsonl into eval JSONL on stdout
    Ragtruth { source_info: PathBuf, responses: PathBuf },
    /// Wilson score interval for X successes out of n
    Wilson {
        successes: u64,
        n: u64,
        #[arg(long, default_value_t = 1.96)]
        z: f64,
    },
}

/// An input file that does not exist.
#[derive(Debug, thiserror::Error)]
#[error("file not found: {0}")]
pub struct NotFound(pub PathBuf);

fn read(path: &Path) -> anyhow::Result<String> {
    if !path.exists() {
        return Err(NotFound(path.to_path_buf()).into());
    }
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    if e.is::<NotFound>() {
        return "file-not-found";
    }
    if let Some(p) = e.downcast_ref::<PipelineError>() {
        return match p {
            PipelineError::InvalidInput(_) => "invalid-input",
            PipelineError::InvalidConfig(_) => "invalid-config",
            PipelineError::Llm { .. } => "llm",
            PipelineError::Collision(_) => "embedding",
            PipelineError::Placeholder(_) => "placeholder",
        };
    }
    if let Some(h) = e.downcast_ref::<HarnessError>() {
        return match h {
            HarnessError::NoRecords { .. } => "no-records",
            HarnessError::InvalidCounts { .. } | HarnessError::InvalidZ(_) => "invalid-input",
            _ => "harness",
        };
    }
    if e.is::<LlmError>() {
        return "llm";
    }
    "error"
}

/// The LLM client selected by the global flags.
struct Llm {
    client: Arc<dyn LlmClient>,
    recorder: Option<Arc<RecordingClient<HttpChatClient>>>,
}

impl Llm {
    fn open(cli: &Cli, config: &AppConfig) -> anyhow::Result<Self> {
        if let Some(path) = &cli.replay {
            if !path.exists() {
                return Err(NotFound(path.clone()).into());
            }
            return Ok(Self {
                client: Arc::new(ReplayClient::from_path(path)?),
                recorder: None,
            });
        }
        let live = HttpChatClient::new(config.backend.clone())?;
        if let Some(path) = &cli.record {
            let rec = Arc::new(RecordingClient::to_path(live, path, cli.force)?);
            return Ok(Self {
                client: rec.clone(),
                recorder: Some(rec),
            });
        }
        Ok(Self {
            client: Arc::new(live),
            recorder: None,
        })
    }

    fn flush(&self) -> anyhow::Result<()> {
        if let Some(r) = &self.recorder {
            r.flush()?;
        }
        Ok(())
    }
}

fn print_json(v: &impl serde::Serialize) -> anyhow::Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{}", serde_json::to_string_pretty(v)?) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn write_trace(dir: Option<&Path>, name: &str, trace: &PipelineTrace) -> anyhow::Result<Option<PathBuf>> {
    let Some(dir) = dir else { return Ok(None) };
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let safe: String = name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect();
    let path = dir.join(format!("{safe}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(trace)?).with_context(|| format!("writing {}", path.display()))?;
    Ok(Some(path))
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

fn split_query_cmd(config: &AppConfig, query: &str) -> anyhow::Result<()> {
    let detector = config.pipeline.detector()?;
    let nps: Vec<NounPhrase> = extract_noun_phrases(query).iter().flat_map(expand_coordination).collect();
    let pairs = detector.detect(&nps)?;
    let split = split_query_capped(query, &pairs, config.pipeline.split_cap);
    print_json(&json!({"queries": split.queries, "flags": split.flags, "collision_pairs": pairs}))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PassagesFile {
    List(Vec<String>),
    Object { passages: Vec<String> },
}

fn fff_cmd(cli: &Cli, config: &AppConfig, path: &Path, entity: &str, no_llm: bool) -> anyhow::Result<()> {
    let passages = match serde_json::from_str::<PassagesFile>(&read(path)?).with_context(|| format!("parsing {}", path.display()))? {
        PassagesFile::List(p) | PassagesFile::Object { passages: p } => p,
    };
    if passages.is_empty() {
        bail!("{} holds no passages", path.display());
    }
    let np = extract_noun_phrases(entity)
        .into_iter()
        .next()
        .ok_or_else(|| anyhow!("no noun phrase in entity {entity:?}"))?;
    let llm = if no_llm { None } else { Some(Llm::open(cli, config)?) };
    let extractor = FactExtractor::new(
        config.pipeline.detector()?,
        llm.as_ref().map(|l| l.client.clone()),
        FffConfig {
            model: config.pipeline.llm.model.clone(),
            temperature: 0.0,
            use_llm: !no_llm,
        },
    );
    let query = AtomicQuery {
        text: entity.to_string(),
        focal_nps: vec![np],
        parent_query: entity.to_string(),
        index: 0,
    };
    let packets = extractor.build_fact_sets(&passages, &[query], "cli")?;
    if let Some(l) = &llm {
        l.flush()?;
    }
    print_json(&packets[0].fact_set)
}

#[derive(Deserialize)]
struct RunRecord {
    #[serde(default)]
    response_id: Option<String>,
    query: String,
    passages: Vec<String>,
    #[serde(default)]
    model: Option<String>,
    #[serde(default)]
    temperature: Option<f64>,
}

fn run_cmd(cli: &Cli, config: &AppConfig, path: &Path) -> anyhow::Result<()> {
    let record: RunRecord = serde_json::from_str(&read(path)?).with_context(|| format!("parsing {}", path.display()))?;
    let mut pipeline_config: PipelineConfig = config.pipeline.clone();
    if let Some(m) = record.model.as_deref().filter(|m| !m.is_empty() && *m != UNSPECIFIED_MODEL) {
        pipeline_config.llm.model = m.to_string();
    }
    if let Some(t) = record.temperature {
        pipeline_config.llm.temperature = t;
    }
    let llm = Llm::open(cli, config)?;
    let result = Pipeline::from_config(pipeline_config, llm.client.clone())?.run(&record.query, &record.passages);
    llm.flush()?;
    let name = record.response_id.unwrap_or_else(|| uuid::Uuid::new_v4().to_string());
    let out = match result {
        Ok(out) => out,
        Err(PipelineError::Llm { source, partial }) => {
            write_trace(cli.trace_dir.as_deref(), &name, &partial)?;
            return Err(PipelineError::Llm { source, partial }.into());
        }
        Err(e) => return Err(e.into()),
    };
    let trace_path = write_trace(cli.trace_dir.as_deref(), &name, &out.trace)?;
    print_json(&json!({
        "answer": out.response,
        "verdict": out.trace.verdict,
        "trace_path": trace_path,
        "timings": out.timings,
    }))
}

fn eval_cmd(cli: &Cli, config: &AppConfig, dataset: &Path, csv: Option<&Path>, workers: usize, z: f64) -> anyhow::Result<i32> {
    if !dataset.exists() {
        return Err(NotFound(dataset.to_path_buf()).into());
    }
    let load = load_dataset(dataset)?;
    for e in &load.errors {
        eprintln!("{}", json!({"warning": "malformed record", "line": e.line, "message": e.message}));
    }
    let llm = Llm::open(cli, config)?;
    let summary = evaluate(
        &load.records,
        &config.pipeline,
        llm.client.clone(),
        config.pipeline.detector()?,
        &EvalOptions { workers, z },
    )?;
    llm.flush()?;
    for r in &summary.records {
        if let Some(t) = &r.trace {
            write_trace(cli.trace_dir.as_deref(), &format!("{}-{}", r.dataset.as_str(), r.response_id), t)?;
        }
    }
    if let Some(path) = csv {
        let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        acurai_core::harness::write_csv(&summary, file)?;
    }
    eprintln!("{}/{} faithful, 95% CI {}", summary.successes, summary.n, summary.interval);
    print_json(&summary)?;
    Ok(if summary.all_faithful() { 0 } else { 1 })
}

fn serve_cmd(cli: &Cli, config: &AppConfig, host: &str, port: u16) -> anyhow::Result<()> {
    let addr: std::net::SocketAddr = format!("{host}:{port}").parse().with_context(|| format!("bad address {host}:{port}"))?;
    // Blocking clients must be built outside the async runtime.
    let llm = Llm::open(cli, config)?;
    let detector = config.pipeline.detector()?;
    let mut state = AppState::new(config.pipeline.clone(), llm.client.clone(), detector).with_trace_dir(cli.trace_dir.clone());
    if let Some(rec) = llm.recorder.clone() {
        state = state.with_after_run(move || {
            if let Err(e) = rec.flush() {
                tracing::warn!("failed to write cassette: {e}");
            }
        });
    }
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(gateway::serve(Arc::new(state), addr))
}

fn ragtruth_cmd(source_info: &Path, responses: &Path) -> anyhow::Result<i32> {
    for p in [source_info, responses] {
        if !p.exists() {
            return Err(NotFound(p.to_path_buf()).into());
        }
    }
    let (records, errors) = acurai_core::harness::ragtruth::convert(source_info, responses)?;
    for e in &errors {
        eprintln!("{}", json!({"warning": "skipped line", "line": e.line, "message": e.message}));
    }
    let mut out = std::io::stdout().lock();
    for r in &records {
        let mut line = serde_json::to_vec(r)?;
        line.push(b'\n');
        match std::io::Write::write_all(&mut out, &line) {
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => return Ok(0),
            r => r?,
        }
    }
    eprintln!("{} records", records.len());
    Ok(0)
}

fn dispatch(cli: &Cli) -> anyhow::Result<i32> {
    if let Command::Wilson { successes, n, z } = &cli.command {
        let (low, high) = wilson_interval(*successes, *n, *z)?;
        print_json(&json!({"low": round4(low), "high": round4(high)}))?;
        return Ok(0);
    }
    if let Command::Ragtruth { source_info, responses } = &cli.command {
        return ragtruth_cmd(source_info, responses);
    }
    let config = AppConfig::load(cli.config.as_deref())?;
    match &cli.command {
        Command::SplitQuery { query } => split_query_cmd(&config, query)?,
        Command::Fff { passages, entity, no_llm } => fff_cmd(cli, &config, passages, entity, *no_llm)?,
        Command::Run { input } => run_cmd(cli, &config, input)?,
        Command::Eval { dataset, csv, workers, z } => return eval_cmd(cli, &config, dataset, csv.as_deref(), *workers, *z),
        Command::Serve { port, host } => serve_cmd(cli, &config, host, *port)?,
        Command::Wilson { .. } | Command::Ragtruth { .. } => unreachable!(),
    }
    Ok(0)
}

/// Exit code: 0 success, 1 failure (JSON error on stderr), 2 usage.
pub fn main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            let message = format!("{e:#}");
            eprintln!("{}", json!({"error": {"kind": error_kind(&e), "message": message}}));
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(main(["acurai", "frobnicate"]), 2);
        assert_eq!(main(["acurai", "wilson", "3"]), 2);
        assert_eq!(main(["acurai", "wilson", "1", "2", "--force"]), 2);
    }

    #[test]
    fn error_kinds() {
        assert_eq!(error_kind(&NotFound("x".into()).into()), "file-not-found");
        assert_eq!(error_kind(&anyhow::Error::from(PipelineError::InvalidInput("q".into()))), "invalid-input");
        assert_eq!(error_kind(&anyhow!("other")), "error");
    }

    #[test]
    fn rounding() {
        assert_eq!(round4(0.905_908), 0.9059);
        assert_eq!(round4(1.0), 1.0);
    }
}
