use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use gramnas::analysis::analyze;
use gramnas::assembly::{to_dot, to_json};
use gramnas::grammar::{
    count_space, default_max_depth, enumerate_terms, fixtures, validate_grammar, Sampler, SpaceSize,
};
use gramnas::kernel::{gram_matrix, HwlConfig};
use gramnas::objective::{ObjectiveKind, ObjectiveSpec};
use gramnas::search::{read_log, run_search, Record, SearchConfig, Strategy, SurrogateKind};
use gramnas::{assemble, parse_grammar, parse_term, Grammar, Term};

const GRAMMAR_HELP: &str = "Grammar file. If the path does not exist, its file name is looked up in \
$GRAMNAS_FIXTURES and then among the bundled grammars (nb201_cell, nb201_hierarchical, darts, \
hier_cell, mobilenet).";

const ANALYZE_SCHEMAS: &str = "\
Output files (CSV with a header row):

  density.csv               bin_start,bin_end,count,density
      Histogram of objective values; density integrates to 1.
  production_cohorts.csv    production,worst,middle,top,worst_fraction,middle_fraction,top_fraction
      Uses of each production in the worst 10%, middle and top 10% of records
      (lower values are better; ties broken by evaluation order).
  production_marginals.csv  production,records,mean_value
      Records that use a production at least once and their mean value.
  depth_vs_value.csv        record,depth,size,value
      Derivation depth and node count of each record's term.

Productions are written as `LHS ::= alternative`; productions of bound
sub-grammars carry a `<grammar>.` prefix.";

#[derive(Parser)]
#[command(name = "gramnas", version, about = "Grammar-defined architecture search spaces and Bayesian optimization over them")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect a grammar.
    Grammar {
        #[command(subcommand)]
        action: GrammarCmd,
    },
    /// Print random terms, one per line (bindings joined with `;`).
    Sample(SampleArgs),
    /// Assemble a term and print its graph.
    Export(ExportArgs),
    /// Print the Gram matrix of terms read from a file as CSV.
    ///
    /// Row i, column j holds k(term i, term j); no header row.
    Kernel(KernelArgs),
    /// Run a search and write a JSON-lines log.
    Search(SearchArgs),
    /// Summarize run logs as CSV files.
    #[command(after_help = ANALYZE_SCHEMAS)]
    Analyze(AnalyzeArgs),
}

#[derive(Subcommand)]
enum GrammarCmd {
    /// Report unreachable or unproductive nonterminals and infinite languages; exit 0 iff none.
    Check {
        #[arg(help = GRAMMAR_HELP)]
        path: String,
    },
    /// Print the exact number of derivations and its log10.
    Size {
        #[arg(help = GRAMMAR_HELP)]
        path: String,
    },
    /// Print derivations in lexicographic order, one per line.
    Enumerate {
        #[arg(help = GRAMMAR_HELP)]
        path: String,
        #[arg(long, default_value_t = 1000)]
        limit: usize,
    },
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long, help = GRAMMAR_HELP)]
    grammar: String,
    #[arg(long, default_value_t = 1)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    max_depth: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    /// archgraph/1 JSON
    Json,
    /// Graphviz
    Dot,
    /// Derivation tree as JSON
    Tree,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long, help = GRAMMAR_HELP)]
    grammar: String,
    /// Term string; read from stdin when omitted.
    #[arg(long)]
    term: Option<String>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Fold level; subterms below it collapse into single edges.
    #[arg(long)]
    fold: Option<usize>,
}

#[derive(Args)]
struct KernelArgs {
    #[arg(long, help = GRAMMAR_HELP)]
    grammar: String,
    /// File with one term per line; blank lines and lines starting with `#` are skipped.
    #[arg(long)]
    terms: PathBuf,
    /// hwl sums all fold levels, wl uses the unfolded graph only.
    #[arg(long, default_value = "hwl")]
    surrogate: SurrogateKind,
    /// WL iterations per level.
    #[arg(long)]
    wl_iterations: Option<usize>,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long, help = GRAMMAR_HELP)]
    grammar: String,
    #[arg(long, default_value_t = 100)]
    budget: usize,
    /// Random initial design size [default: 10, or the budget if smaller]
    #[arg(long)]
    init: Option<usize>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Terms proposed per Kriging-Believer round.
    #[arg(long, default_value_t = 1)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// synthetic, noisy:<sigma> or external:<command line>
    #[arg(long, default_value = "synthetic")]
    objective: ObjectiveKind,
    #[arg(long, default_value = "hwl")]
    surrogate: SurrogateKind,
    /// banat, rs or re
    #[arg(long, default_value = "banat")]
    strategy: Strategy,
    #[arg(long)]
    max_depth: Option<usize>,
    /// Value recorded for failed evaluations.
    #[arg(long, default_value_t = 1.0)]
    penalty: f64,
    /// Log file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue from an earlier log written with the same settings.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Record wall-clock times in the log.
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Run logs; records are concatenated in the given order.
    #[arg(required = true)]
    logs: Vec<PathBuf>,
    #[arg(long, help = GRAMMAR_HELP)]
    grammar: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    bins: usize,
}

fn load_grammar(spec: &str) -> Result<Grammar> {
    let path = Path::new(spec);
    let text = if path.exists() {
        fs::read_to_string(path).with_context(|| format!("reading {spec}"))?
    } else {
        let base = path.file_name().and_then(|s| s.to_str()).unwrap_or(spec);
        let base = if base.ends_with(".cfg") { base.to_string() } else { format!("{base}.cfg") };
        let over = std::env::var_os("GRAMNAS_FIXTURES").map(|d| PathBuf::from(d).join(&base));
        match over.filter(|p| p.exists()) {
            Some(p) => fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?,
            None => match fixtures::source(&base) {
                Some(s) => s.to_string(),
                None => bail!("grammar `{spec}` not found"),
            },
        }
    };
    parse_grammar(&text).with_context(|| format!("parsing {spec}"))
}

fn read_term(g: &Grammar, s: &str) -> Result<Term> {
    parse_term(s.trim(), g).with_context(|| format!("parsing term `{}`", s.trim()))
}

fn cmd_grammar(action: GrammarCmd) -> Result<ExitCode> {
    let mut out = io::stdout().lock();
    match action {
        GrammarCmd::Check { path } => {
            let g = load_grammar(&path)?;
            let diags = validate_grammar(&g);
            for d in &diags {
                writeln!(out, "{d}")?;
            }
            if diags.is_empty() {
                writeln!(out, "ok")?;
                return Ok(ExitCode::SUCCESS);
            }
            Ok(ExitCode::FAILURE)
        }
        GrammarCmd::Size { path } => {
            let g = load_grammar(&path)?;
            match count_space(&g) {
                SpaceSize::Finite(n) => {
                    writeln!(out, "{n}")?;
                    writeln!(out, "log10 {:.3}", count_space(&g).log10().unwrap())?;
                }
                SpaceSize::Infinite => writeln!(out, "infinite")?,
            }
            Ok(ExitCode::SUCCESS)
        }
        GrammarCmd::Enumerate { path, limit } => {
            let g = load_grammar(&path)?;
            let e = enumerate_terms(&g, limit);
            for t in &e.terms {
                writeln!(out, "{}", t.canonical())?;
            }
            if e.truncated {
                eprintln!("stopped after {limit} terms");
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn cmd_sample(a: SampleArgs) -> Result<()> {
    use rand::SeedableRng;
    let g = load_grammar(&a.grammar)?;
    let sampler = Sampler::new(&g, a.max_depth.unwrap_or_else(|| default_max_depth(&g)));
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(a.seed);
    let mut out = BufWriter::new(io::stdout().lock());
    for _ in 0..a.n {
        writeln!(out, "{}", sampler.sample(&mut rng)?.canonical())?;
    }
    out.flush()?;
    Ok(())
}

fn cmd_export(a: ExportArgs) -> Result<()> {
    let g = load_grammar(&a.grammar)?;
    let text = match a.term {
        Some(t) => t,
        None => io::read_to_string(io::stdin())?,
    };
    let mut t = read_term(&g, &text)?;
    if let Some(l) = a.fold {
        t = t.fold(l);
    }
    let s = match a.format {
        Format::Tree => serde_json::to_string_pretty(&t.to_json())?,
        Format::Json => {
            let graph = assemble(&t, &g)?;
            serde_json::to_string_pretty(&to_json(&graph, Some(&t.canonical())))?
        }
        Format::Dot => to_dot(&assemble(&t, &g)?),
    };
    let mut out = io::stdout().lock();
    write!(out, "{s}")?;
    if !s.ends_with('\n') {
        writeln!(out)?;
    }
    Ok(())
}

fn cmd_kernel(a: KernelArgs) -> Result<()> {
    let g = load_grammar(&a.grammar)?;
    let reader = BufReader::new(File::open(&a.terms).with_context(|| format!("opening {}", a.terms.display()))?);
    let mut terms = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        terms.push(read_term(&g, line)?);
    }
    let depth = terms.iter().map(Term::depth).max().unwrap_or(1).max(default_max_depth(&g));
    let mut cfg = match a.surrogate {
        SurrogateKind::Hwl => HwlConfig::uniform(depth),
        SurrogateKind::Wl => HwlConfig::top_only(depth),
    };
    if let Some(h) = a.wl_iterations {
        cfg.h = h;
    }
    let k = gram_matrix(&terms, &g, &cfg)?;
    let mut out = BufWriter::new(io::stdout().lock());
    for i in 0..k.nrows() {
        let row: Vec<String> = (0..k.ncols()).map(|j| k[(i, j)].to_string()).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}

fn read_records(path: &Path) -> Result<Vec<Record>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_log(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn cmd_search(a: SearchArgs) -> Result<()> {
    let g = load_grammar(&a.grammar)?;
    let cfg = SearchConfig {
        budget: a.budget,
        initial: a.init.unwrap_or(a.budget.min(10)),
        workers: a.workers,
        batch: a.batch,
        seed: a.seed,
        objective: ObjectiveSpec { kind: a.objective, seed: a.seed, ..ObjectiveSpec::synthetic() },
        strategy: a.strategy,
        surrogate: a.surrogate,
        max_depth: a.max_depth,
        penalty: a.penalty,
        timing: a.timing,
        ..Default::default()
    };
    cfg.validate()?;
    let resume = match &a.resume {
        Some(p) => read_records(p)?,
        None => Vec::new(),
    };
    let mut sink: Box<dyn Write> = match &a.out {
        // appending keeps the earlier records in place
        Some(p) if a.resume.as_ref().is_some_and(|r| same_file(r, p)) => {
            Box::new(OpenOptions::new().append(true).open(p)?)
        }
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    };
    if a.resume.as_ref().zip(a.out.as_ref()).is_none_or(|(r, o)| !same_file(r, o)) {
        for r in &resume {
            writeln!(sink, "{}", serde_json::to_string(r)?)?;
        }
    }
    let h = run_search(&g, &cfg, &resume, Some(&mut sink))?;
    sink.flush()?;
    if let Some(best) = h.best() {
        eprintln!("best {} after {} evaluations: {}", best.value, h.records.len(), best.term);
    }
    Ok(())
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (fs::canonicalize(a), fs::canonicalize(b)) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<()> {
    let g = load_grammar(&a.grammar)?;
    let mut records = Vec::new();
    for p in &a.logs {
        records.extend(read_records(p)?);
    }
    let report = analyze(&g, &records, a.bins)?;
    report.write_dir(&a.out)?;
    eprintln!("{} records, cohorts of {}, written to {}", records.len(), report.cohort_size, a.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Grammar { action } => cmd_grammar(action),
        Command::Sample(a) => cmd_sample(a).map(|_| ExitCode::SUCCESS),
        Command::Export(a) => cmd_export(a).map(|_| ExitCode::SUCCESS),
        Command::Kernel(a) => cmd_kernel(a).map(|_| ExitCode::SUCCESS),
        Command::Search(a) => cmd_search(a).map(|_| ExitCode::SUCCESS),
        Command::Analyze(a) => cmd_analyze(a).map(|_| ExitCode::SUCCESS),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
