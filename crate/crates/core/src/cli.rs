//! Command-line interface. [`run_from`] is the whole program; the binary
//! only forwards `std::env::args`.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use crate::corpus::Corpus;
use crate::eval::{load_dataset, run_benchmark, AblationConfig, BenchmarkConfig};
use crate::index::{BuildOptions, IndexStore};
use crate::llm::config::Backends;
use crate::llm::BackendConfig;
use crate::normalize::normalize_value;
use crate::reasoning::{Engine, LoopConfig, StopReason};
use crate::retriever::{MatchMode, RetrievalConfig, DEFAULT_K, DEFAULT_TAU};
use crate::schema::CubeRegistry;

#[derive(Parser)]
#[command(name = "cuberag", version, about = "Cube-indexed retrieval and multi-hop question answering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tag a corpus and write an index directory.
    Build(BuildArgs),
    /// Answer one question against an index.
    Query(QueryArgs),
    /// Score a question set and write a report.
    Eval(EvalArgs),
    /// List the documents in one cube cell.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct BackendArgs {
    /// Backend config file. Without it, an OpenAI-compatible endpoint is
    /// configured from CUBERAG_* environment variables.
    #[arg(long)]
    backend: Option<PathBuf>,
}

impl BackendArgs {
    fn build(&self) -> anyhow::Result<Backends> {
        let cfg = match &self.backend {
            Some(path) => BackendConfig::load(path)?,
            None => BackendConfig::from_env(),
        };
        Ok(cfg.build()?)
    }
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Args)]
struct LoopArgs {
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    /// exact_only, semantic_only or hybrid.
    #[arg(long, default_value = "hybrid")]
    mode: MatchMode,
    #[arg(long = "max-iters", default_value_t = crate::reasoning::DEFAULT_MAX_ITERATIONS)]
    max_iters: usize,
    #[arg(long, default_value_t = 1)]
    router_retry: u32,
    /// Remove a cube before routing. Repeatable.
    #[arg(long = "disable-cube")]
    disable_cube: Vec<String>,
}

impl LoopArgs {
    fn config(&self) -> LoopConfig {
        LoopConfig {
            max_iterations: self.max_iters,
            retrieval: RetrievalConfig {
                k: self.k,
                tau: self.tau,
                mode: self.mode,
            },
            router_retry: self.router_retry,
        }
    }

    fn registry(&self, full: &CubeRegistry) -> anyhow::Result<CubeRegistry> {
        Ok(full.without(self.disable_cube.iter().map(String::as_str))?)
    }
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    index: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    loop_args: LoopArgs,
    /// Write the full reasoning trace as JSON.
    #[arg(long)]
    trace: Option<PathBuf>,
    question: String,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    report: PathBuf,
    #[arg(long = "batch-size", default_value_t = 1)]
    batch_size: usize,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    loop_args: LoopArgs,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    index: PathBuf,
    /// Limit the lookup to one cube.
    #[arg(long)]
    cube: Option<String>,
    #[arg(long)]
    dimension: String,
    #[arg(long)]
    value: String,
}

/// Runs the CLI on `args` (including the program name). Returns the exit
/// status; diagnostics go to `err` as one line.
pub fn run_from<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {}", format!("{e:#}").replace('\n', " "));
            1
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> anyhow::Result<()> {
    match command {
        Command::Build(a) => build(a, out),
        Command::Query(a) => query(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Inspect(a) => inspect(a, out),
    }
}

fn load_store(dir: &PathBuf) -> anyhow::Result<IndexStore> {
    IndexStore::load(dir).with_context(|| format!("loading index {}", dir.display()))
}

fn build(a: BuildArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let corpus = Corpus::load(&a.corpus)?;
    let registry = CubeRegistry::load(&a.schema)?;
    let backends = a.backend.build()?;
    let (store, report) = IndexStore::build(
        corpus,
        registry,
        backends.chat.as_ref(),
        backends.embed.as_deref(),
        &BuildOptions { workers: a.workers },
    )?;
    store.save(&a.out)?;
    for spec in store.registry.iter() {
        let index = &store.indexes[&spec.name];
        writeln!(
            out,
            "{}: {} documents, {} postings",
            spec.name,
            index.document_count(),
            index.assignment_count()
        )?;
        for (dim, n) in index.posting_counts() {
            writeln!(out, "  {dim}: {n}")?;
        }
    }
    writeln!(
        out,
        "tagged {}/{} documents, {} failed",
        report.tagged,
        report.documents,
        report.failures.len()
    )?;
    for f in &report.failures {
        writeln!(out, "  failed {}: {}", f.doc_id, f.error)?;
    }
    Ok(())
}

fn query(a: QueryArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let store = load_store(&a.index)?;
    let registry = a.loop_args.registry(&store.registry)?;
    let cfg = a.loop_args.config();
    let backends = a.backend.build()?;
    let engine = Engine::new(&store, backends.chat.as_ref(), backends.embed.as_deref())
        .with_registry(&registry);
    let trace = engine.run(&a.question, &cfg)?;
    if let Some(path) = &a.trace {
        std::fs::write(path, trace.to_json() + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if trace.stop_reason == StopReason::Error {
        bail!(
            "reasoning failed after {} iterations: {}",
            trace.iterations.len(),
            trace.error.unwrap_or_default()
        );
    }
    writeln!(out, "{}", trace.final_answer)?;
    Ok(())
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let store = load_store(&a.index)?;
    // Check the ablation before doing any work.
    a.loop_args.registry(&store.registry)?;
    let examples = load_dataset(&a.dataset)?;
    let backends = a.backend.build()?;
    let engine = Engine::new(&store, backends.chat.as_ref(), backends.embed.as_deref());
    let cfg = BenchmarkConfig {
        loop_config: a.loop_args.config(),
        batch_size: a.batch_size,
        ablation: AblationConfig {
            disabled_cubes: a.loop_args.disable_cube.iter().cloned().collect::<BTreeSet<_>>(),
            mode: None,
        },
    };
    let report = run_benchmark(&examples, &engine, &cfg)?;
    report.save(&a.report)?;
    writeln!(out, "{}", report.summary_line())?;
    Ok(())
}

fn inspect(a: InspectArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let store = load_store(&a.index)?;
    let value = normalize_value(&a.value);
    let cubes: Vec<&str> = match &a.cube {
        Some(c) if store.registry.contains(c) => vec![c.as_str()],
        Some(c) => bail!("unknown cube {c}"),
        None => store.registry.names().collect(),
    };
    let mut found_axis = false;
    let mut ids = BTreeSet::new();
    for cube in cubes {
        let index = &store.indexes[cube];
        if let Some(axis) = index.spec().resolve_axis(&a.dimension) {
            found_axis = true;
            if let Some(cell) = index.cell(&axis.name, &value) {
                ids.extend(cell.iter().cloned());
            }
        }
    }
    if !found_axis {
        bail!("no cube has a dimension named {:?}", a.dimension);
    }
    for id in ids {
        writeln!(out, "{id}")?;
    }
    Ok(())
}
