//! The `a2rd` command line. Exit codes: 0 success, 1 validation or domain
//! error, 2 usage error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::iirr::{resolve_human_task, Decision, HumanTaskQueue};
use crate::interdomain::{load_scenario, run_scenario_with_tasks, validate, ScenarioConfig};
use crate::ledger::{import_ledger_str, merge, verify_chain, Ledger, VerifyResult};
use crate::rpsl::{parse_object, parse_objects};
use crate::skau::{
    build_index, distill, query_knowledge, rebuild_kb, Corpus, DomainDataset, KnowledgeBase, DEFAULT_TOP_K,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser)]
#[command(name = "a2rd", version, about = "Layered multi-domain agent simulator and IRR automation tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its output directory.
    Run(RunArgs),
    /// Summarise a scenario file or a run output directory.
    Inspect { path: PathBuf },
    /// RPSL flat files.
    #[command(subcommand)]
    Rpsl(RpslCmd),
    /// iIRR state of a run output directory.
    Irr(IrrArgs),
    /// Corpus pipeline and knowledge base.
    Skau(SkauArgs),
    /// Ledger files.
    #[command(subcommand)]
    Ledger(LedgerCmd),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Overrides the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the scenario's max_ticks.
    #[arg(long)]
    ticks: Option<u64>,
    #[arg(long, default_value = "a2rd-out")]
    out: PathBuf,
    /// Task file from an earlier run; approved drafts are applied.
    #[arg(long)]
    tasks: Option<PathBuf>,
}

#[derive(Subcommand)]
enum RpslCmd {
    /// Parse and validate every object of a file.
    Check { file: PathBuf },
}

#[derive(Args)]
struct IrrArgs {
    /// Run output directory.
    #[arg(long, default_value = "a2rd-out", global = true)]
    dir: PathBuf,
    #[command(subcommand)]
    command: IrrCmd,
}

#[derive(Subcommand)]
enum IrrCmd {
    /// Print the IRR flat file.
    Dump,
    /// List human tasks.
    Tasks,
    /// Approve or reject a pending task.
    Resolve {
        id: u64,
        /// RPSL file holding the approved object.
        #[arg(long, conflicts_with = "reject", required_unless_present = "reject")]
        approve: Option<PathBuf>,
        #[arg(long)]
        reject: bool,
    },
}

#[derive(Args)]
struct SkauArgs {
    /// Pipeline state directory.
    #[arg(long, default_value = "a2rd-state", global = true)]
    state: PathBuf,
    #[command(subcommand)]
    command: SkauCmd,
}

#[derive(Subcommand)]
enum SkauCmd {
    /// Add every file of a directory to the corpus.
    Ingest { dir: PathBuf },
    /// Build a dataset from the corpus and rebuild the knowledge base.
    Distill {
        #[arg(long)]
        name: String,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<String>,
        #[arg(long, default_value_t = DEFAULT_TOP_K)]
        top_k: usize,
    },
    /// Look a term up in the knowledge base.
    Query { term: String },
}

#[derive(Subcommand)]
enum LedgerCmd {
    /// Check a ledger file's chain.
    Verify { file: PathBuf },
    /// Print the merged view of several ledger files.
    Merge {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, content: &str) -> CmdResult {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Failure(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, content).map_err(|e| Failure(format!("{}: {e}", path.display())))
}

/// Parse `args` (including the program name) and run the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a, out),
        Command::Inspect { path } => cmd_inspect(&path, out),
        Command::Rpsl(RpslCmd::Check { file }) => cmd_rpsl_check(&file, out),
        Command::Irr(a) => cmd_irr(a, out),
        Command::Skau(a) => cmd_skau(a, out),
        Command::Ledger(LedgerCmd::Verify { file }) => cmd_ledger_verify(&file, out),
        Command::Ledger(LedgerCmd::Merge { files }) => cmd_ledger_merge(&files, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure(message)) => {
            let _ = writeln!(err, "error: {message}");
            EXIT_FAILURE
        }
    }
}

fn cmd_run(a: RunArgs, out: &mut dyn Write) -> CmdResult {
    let mut config = load_scenario(&a.scenario)?;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    if let Some(ticks) = a.ticks {
        config.max_ticks = ticks;
    }
    validate(&config)?;
    absolutize(&mut config)?;
    let tasks = match &a.tasks {
        Some(p) => HumanTaskQueue::from_jsonl(&read(p)?)?,
        None => HumanTaskQueue::new(),
    };
    let report = run_scenario_with_tasks(config, tasks);
    report.write_dir(&a.out)?;
    writeln!(
        out,
        "ran {} ticks: {} events, {} IRR objects, {} pending tasks -> {}",
        report.config.max_ticks,
        report.events.len(),
        report.irr.len(),
        report.tasks.pending().count(),
        a.out.display()
    )?;
    Ok(())
}

/// Recorded scenarios name their inputs by absolute path so they can be
/// rerun from the output directory.
fn absolutize(config: &mut ScenarioConfig) -> CmdResult {
    for p in [&mut config.corpus, &mut config.irr_seed].into_iter().flatten() {
        *p = fs::canonicalize(&*p).map_err(|e| Failure(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}

fn cmd_inspect(path: &Path, out: &mut dyn Write) -> CmdResult {
    if path.is_dir() {
        return inspect_run(path, out);
    }
    let config = load_scenario(path)?;
    writeln!(out, "scenario {}", path.display())?;
    writeln!(out, "seed\t{}", config.seed)?;
    writeln!(out, "max_ticks\t{}", config.max_ticks)?;
    writeln!(out, "links\t{}", config.links.len())?;
    writeln!(out, "schedule\t{}", config.schedule.len())?;
    for d in &config.domains {
        let agents: u32 = d.agents.iter().map(|a| a.count).sum();
        let prefixes = d.policy.as_ref().map_or(0, |p| p.prefixes.len());
        writeln!(out, "AS{}\t{}\t{agents} agents\t{prefixes} prefixes", d.asn, d.block)?;
    }
    Ok(())
}

fn inspect_run(dir: &Path, out: &mut dyn Write) -> CmdResult {
    let trace = read(&dir.join("trace.tsv"))?;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut last_tick = 0;
    for line in trace.lines() {
        let mut fields = line.split('\t');
        last_tick = fields.next().and_then(|t| t.parse().ok()).unwrap_or(last_tick);
        *counts.entry(fields.next().unwrap_or("?")).or_default() += 1;
    }
    writeln!(out, "run {} (last tick {last_tick})", dir.display())?;
    for (kind, n) in &counts {
        writeln!(out, "event\t{kind}\t{n}")?;
    }
    let mut registries: Vec<PathBuf> = list_dir(&dir.join("registry"))?;
    registries.sort();
    for path in registries {
        let text = read(&path)?;
        let active = text.lines().filter(|l| l.split('\t').nth(3) == Some("Active")).count();
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("?");
        writeln!(out, "registry\t{name}\t{active} active\t{} total", text.lines().count())?;
    }
    let mut ledgers: Vec<PathBuf> = list_dir(&dir.join("ledger"))?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "ilog"))
        .collect();
    ledgers.sort();
    for path in ledgers {
        let ledger = Ledger::parse_file_string(&read(&path)?)?;
        writeln!(out, "ledger\tAS{}\t{} blocks\t{}", ledger.origin_asn(), ledger.len(), verify_chain(&ledger))?;
    }
    let irr = parse_objects(&read(&dir.join("irr.db"))?);
    writeln!(out, "irr\t{} objects", irr.len())?;
    let tasks = HumanTaskQueue::from_jsonl(&read(&dir.join("tasks.jsonl"))?)?;
    writeln!(out, "tasks\t{} pending\t{} total", tasks.pending().count(), tasks.len())?;
    Ok(())
}

fn list_dir(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let entries = fs::read_dir(dir).map_err(|e| Failure(format!("{}: {e}", dir.display())))?;
    Ok(entries.filter_map(Result::ok).map(|e| e.path()).filter(|p| p.is_file()).collect())
}

fn cmd_rpsl_check(file: &Path, out: &mut dyn Write) -> CmdResult {
    let results = parse_objects(&read(file)?);
    let mut bad = 0;
    for r in &results {
        if let Err(e) = r {
            bad += 1;
            writeln!(out, "{e}")?;
        }
    }
    writeln!(out, "{} objects, {} valid, {bad} invalid", results.len(), results.len() - bad)?;
    if bad > 0 {
        return Err(Failure(format!("{bad} invalid objects in {}", file.display())));
    }
    Ok(())
}

fn cmd_irr(a: IrrArgs, out: &mut dyn Write) -> CmdResult {
    let tasks_path = a.dir.join("tasks.jsonl");
    match a.command {
        IrrCmd::Dump => out.write_all(read(&a.dir.join("irr.db"))?.as_bytes())?,
        IrrCmd::Tasks => {
            let tasks = HumanTaskQueue::from_jsonl(&read(&tasks_path)?)?;
            for t in tasks.tasks() {
                writeln!(out, "{}\t{:?}\t{}\t{}", t.id, t.status, t.key, t.description)?;
            }
        }
        IrrCmd::Resolve { id, approve, reject } => {
            let mut tasks = HumanTaskQueue::from_jsonl(&read(&tasks_path)?)?;
            let decision = match (approve, reject) {
                (Some(p), false) => Decision::Approve(parse_object(&read(&p)?)?),
                _ => Decision::Reject,
            };
            let task = resolve_human_task(&mut tasks, id, decision)?;
            write_file(&tasks_path, &tasks.to_jsonl())?;
            writeln!(out, "task {id} {:?}", task.status)?;
        }
    }
    Ok(())
}

struct SkauState {
    dir: PathBuf,
}

impl SkauState {
    fn corpus_dir(&self) -> PathBuf {
        self.dir.join("corpus")
    }

    fn datasets_dir(&self) -> PathBuf {
        self.dir.join("datasets")
    }

    fn kb_path(&self) -> PathBuf {
        self.dir.join("kb.txt")
    }

    fn corpus(&self) -> Result<Corpus, Failure> {
        let mut corpus = Corpus::new();
        if self.corpus_dir().is_dir() {
            corpus.ingest_dir(&self.corpus_dir(), 0)?;
        }
        Ok(corpus)
    }

    fn kb(&self) -> Result<Option<KnowledgeBase>, Failure> {
        let path = self.kb_path();
        if !path.is_file() {
            return Ok(None);
        }
        Ok(Some(KnowledgeBase::from_text(&read(&path)?)?))
    }
}

fn cmd_skau(a: SkauArgs, out: &mut dyn Write) -> CmdResult {
    let state = SkauState { dir: a.state };
    match a.command {
        SkauCmd::Ingest { dir } => {
            let mut incoming = Corpus::new();
            let ids = incoming.ingest_dir(&dir, 0)?;
            for doc in incoming.docs() {
                write_file(&state.corpus_dir().join(&doc.doc_id), &doc.text)?;
            }
            let corpus = state.corpus()?;
            let index = build_index(&corpus)?;
            write_file(&state.dir.join("index.txt"), &index.to_text())?;
            writeln!(out, "ingested {} documents, corpus holds {}", ids.len(), corpus.len())?;
        }
        SkauCmd::Distill { name, seeds, top_k } => {
            if name.is_empty() || name.contains(['/', '\\']) || name.starts_with('.') {
                return Err(Failure(format!("bad dataset name `{name}`")));
            }
            let index = build_index(&state.corpus()?)?;
            let dataset = distill(&index, &name, &seeds, top_k);
            let tsv = dataset.to_tsv();
            write_file(&state.datasets_dir().join(format!("{name}.tsv")), &tsv)?;
            let mut paths = list_dir(&state.datasets_dir())?;
            paths.sort();
            let mut datasets = Vec::new();
            for p in paths {
                let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
                datasets.push(DomainDataset::from_tsv(&stem, &read(&p)?)?);
            }
            let previous = state.kb()?.unwrap_or_else(KnowledgeBase::empty);
            let kb = rebuild_kb(&previous, &datasets);
            write_file(&state.kb_path(), &kb.to_text())?;
            out.write_all(tsv.as_bytes())?;
        }
        SkauCmd::Query { term } => {
            let kb = state.kb()?.ok_or_else(|| Failure("no knowledge base".into()))?;
            for (weight, docs) in query_knowledge(&kb, &term.to_lowercase()) {
                writeln!(out, "{term}\t{weight:.6}\t{}", docs.join(","))?;
            }
        }
    }
    Ok(())
}

fn cmd_ledger_verify(file: &Path, out: &mut dyn Write) -> CmdResult {
    let ledger = Ledger::parse_file_string(&read(file)?)?;
    let result = verify_chain(&ledger);
    writeln!(out, "{result}")?;
    match result {
        VerifyResult::Ok => Ok(()),
        VerifyResult::FirstBadIndex(i) => Err(Failure(format!("{}: chain broken at block {i}", file.display()))),
    }
}

fn cmd_ledger_merge(files: &[PathBuf], out: &mut dyn Write) -> CmdResult {
    let mut ledgers = Vec::new();
    for f in files {
        let ledger = import_ledger_str(&read(f)?).map_err(|e| Failure(format!("{}: {e}", f.display())))?;
        ledgers.push(ledger);
    }
    out.write_all(merge(&ledgers)?.to_text().as_bytes())?;
    Ok(())
}
