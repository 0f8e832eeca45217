use std::collections::HashMap;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use chisearch::bench::{self, BenchMode, BenchSetup};
use chisearch::exec::ExecMode;
use chisearch::query::compile;
use chisearch::store::{read_f32_file, read_roi_table};
use chisearch::synth::{CorpusSpec, Distribution, ROI_TABLE_FILE};
use chisearch::workload::{QueryKind, WorkloadSpec};
use chisearch::{
    ChiConfig, ChiError, IndexStore, Mask, MaskId, MaskMeta, MaskStore, PlanContext, Roi, RoiSpec, Session,
    StoreError, StoreWriter,
};

#[derive(Parser)]
#[command(name = "chisearch", version, about = "Query dense image masks through cumulative histogram indexes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus and its rois.tsv.
    Gen(GenArgs),
    /// Add headerless little-endian f32 files to a store.
    Ingest(IngestArgs),
    /// Build the index of every mask in a store.
    Index(IndexArgs),
    /// Run one query.
    Query(QueryArgs),
    /// Read queries from standard input, one per line.
    Repl(ReplArgs),
    /// Run a generated workload under several modes.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    count: usize,
    #[arg(long, default_value_t = 224)]
    width: u32,
    #[arg(long, default_value_t = 224)]
    height: u32,
    /// uniform, blob or edge-hot
    #[arg(long, default_value = "blob")]
    distribution: Distribution,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct IngestArgs {
    /// Store directory; created if missing.
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    width: u32,
    #[arg(long)]
    height: u32,
    #[arg(long, default_value_t = 1)]
    image_id: i64,
    #[arg(long, default_value_t = 1)]
    model_id: i64,
    #[arg(long, default_value_t = 1)]
    mask_type: i64,
    /// Give each file its own image_id, counting up from --image-id.
    #[arg(long)]
    image_per_file: bool,
    /// Map values at or above 1 just below 1 instead of rejecting them.
    #[arg(long)]
    clamp: bool,
    #[arg(required = true)]
    files: Vec<PathBuf>,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Value bins.
    #[arg(long, default_value_t = 16)]
    bins: u32,
    /// Cell width in pixels.
    #[arg(long, default_value_t = 28)]
    cell: u32,
    /// Cell height, if different from the width.
    #[arg(long)]
    cell_height: Option<u32>,
}

impl ConfigArgs {
    fn config(&self) -> Result<ChiConfig, ChiError> {
        ChiConfig::new(self.cell, self.cell_height.unwrap_or(self.cell), self.bins)
    }
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long)]
    store: PathBuf,
    /// Defaults to <store>/index.chi.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct SourceArgs {
    #[arg(long)]
    store: PathBuf,
    /// Index file; defaults to <store>/index.chi.
    #[arg(long)]
    index: Option<PathBuf>,
    /// Per-mask roi table; defaults to <store>/rois.tsv when present.
    #[arg(long)]
    rois: Option<PathBuf>,
    /// Bind a roi name: NAME=full, NAME=object or NAME=((x1,y1),(x2,y2)).
    #[arg(long = "bind", value_name = "NAME=ROI")]
    bindings: Vec<String>,
    #[arg(long)]
    threads: Option<usize>,
    /// Config for indexes built during the session.
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct QueryArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Load every targeted mask and skip the index.
    #[arg(long, conflicts_with = "incremental")]
    oracle: bool,
    /// Build indexes for masks as the query touches them.
    #[arg(long)]
    incremental: bool,
    /// With --incremental, write the grown index here afterwards.
    #[arg(long)]
    persist: Option<PathBuf>,
    /// Write execution statistics as JSON to this path.
    #[arg(long)]
    stats_json: Option<PathBuf>,
    /// Build aggregated-mask indexes before running the query.
    #[arg(long)]
    prebuild_mask_agg: bool,
    /// Read the query from a file.
    #[arg(long, conflicts_with = "query")]
    file: Option<PathBuf>,
    query: Option<String>,
}

#[derive(Args)]
struct ReplArgs {
    #[command(flatten)]
    source: SourceArgs,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    store: PathBuf,
    /// Prebuilt index for `ms`; built and timed when absent.
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    rois: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    queries: usize,
    /// Probability of retargeting seen masks; every query targets the
    /// whole store when absent.
    #[arg(long)]
    p_seen: Option<f64>,
    /// Comma-separated query kinds, cycled.
    #[arg(long, value_delimiter = ',', default_value = "filter")]
    kinds: Vec<QueryKind>,
    #[arg(long, value_delimiter = ',', default_value = "ms,ms-ii,oracle")]
    modes: Vec<BenchMode>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-query TSV report; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON summary.
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    #[command(flatten)]
    config: ConfigArgs,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Ingest(a) => ingest(a),
        Command::Index(a) => index(a),
        Command::Query(a) => query(a),
        Command::Repl(a) => repl(a),
        Command::Bench(a) => run_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for errors in the query, 3 for I/O and bad input data, 4 for the rest.
fn exit_code(e: &anyhow::Error) -> u8 {
    use chisearch::exec::ExecError;
    use chisearch::Error as E;
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<E>() {
            return match err {
                E::Parse(_) | E::Plan(_) => 2,
                E::Exec(ExecError::Eval(_) | ExecError::MissingRoiBinding(_)) => 2,
                E::Store(_) | E::Chi(_) | E::Exec(_) => 3,
            };
        }
        if cause.is::<io::Error>() || cause.is::<StoreError>() || cause.is::<ChiError>() {
            return 3;
        }
    }
    4
}

fn gen(a: GenArgs) -> Result<()> {
    let spec = CorpusSpec {
        count: a.count,
        width: a.width,
        height: a.height,
        distribution: a.distribution,
        seed: a.seed,
    };
    let t = Instant::now();
    spec.write(&a.out)?;
    let store = MaskStore::open(&a.out)?;
    eprintln!(
        "wrote {} {} masks of {}x{} to {} ({} bytes) in {:.1}s",
        a.count,
        a.distribution,
        a.width,
        a.height,
        a.out.display(),
        store.data_bytes()?,
        t.elapsed().as_secs_f64()
    );
    Ok(())
}

fn ingest(a: IngestArgs) -> Result<()> {
    let existing = a.store.join("manifest.tsv").exists();
    let first_id: MaskId = if existing {
        MaskStore::open(&a.store)?.entries().iter().map(|e| e.meta.mask_id).max().unwrap_or(0) + 1
    } else {
        1
    };
    let mut w = if existing {
        StoreWriter::append(&a.store)?
    } else {
        StoreWriter::create(&a.store)?
    };
    for (i, path) in a.files.iter().enumerate() {
        let pixels = read_f32_file(path, a.width, a.height).with_context(|| path.display().to_string())?;
        let mask = if a.clamp {
            Mask::new_clamped(a.width, a.height, pixels)
        } else {
            Mask::new(a.width, a.height, pixels)
        }
        .with_context(|| path.display().to_string())?;
        let image = if a.image_per_file { a.image_id + i as i64 } else { a.image_id };
        w.ingest(MaskMeta::new(first_id + i as MaskId, image, a.model_id, a.mask_type), &mask)?;
    }
    w.finish()?;
    eprintln!("ingested {} masks into {}", a.files.len(), a.store.display());
    Ok(())
}

fn default_index(store: &Path) -> PathBuf {
    store.join("index.chi")
}

fn index(a: IndexArgs) -> Result<()> {
    let config = a.config.config()?;
    let store = MaskStore::open(&a.store)?;
    let t = Instant::now();
    let ix = IndexStore::build_all(&store, config)?;
    let out = a.out.unwrap_or_else(|| default_index(&a.store));
    ix.persist(&out)?;
    let index_bytes = fs::metadata(&out)?.len();
    let data_bytes = store.data_bytes()?;
    let payload = ix.payload_bytes()?;
    println!("masks\t{}", ix.len());
    println!("config\t{config}");
    println!("payload_bytes_per_mask\t{}", payload / ix.len().max(1) as u64);
    println!("index_bytes\t{index_bytes}");
    println!("data_bytes\t{data_bytes}");
    println!("index_to_data_ratio\t{:.4}", index_bytes as f64 / data_bytes as f64);
    println!("build_seconds\t{:.3}", t.elapsed().as_secs_f64());
    eprintln!("wrote {}", out.display());
    Ok(())
}

/// Parses `NAME=full`, `NAME=object` or `NAME=((x1,y1),(x2,y2))`, the
/// literal being 1-based and inclusive as in queries.
fn parse_binding(s: &str) -> Result<(String, RoiSpec)> {
    let (name, value) = s.split_once('=').ok_or_else(|| anyhow!("binding `{s}` is not NAME=ROI"))?;
    let value = value.trim();
    let spec = match value.to_ascii_lowercase().as_str() {
        "full" => RoiSpec::Full,
        "object" => RoiSpec::Object,
        _ => {
            let nums: Vec<u32> = value
                .split(|c: char| !c.is_ascii_digit())
                .filter(|p| !p.is_empty())
                .map(|p| p.parse())
                .collect::<Result<_, _>>()?;
            let [x1, y1, x2, y2] = nums[..] else {
                bail!("roi `{value}` needs four coordinates");
            };
            if x1 == 0 || y1 == 0 {
                bail!("roi `{value}` coordinates are 1-based");
            }
            RoiSpec::Literal(Roi::new(x1 - 1, y1 - 1, x2, y2)?)
        }
    };
    Ok((name.trim().to_string(), spec))
}

struct Loaded {
    session: Session,
    rois: Option<Arc<HashMap<MaskId, Roi>>>,
    bindings: Vec<(String, RoiSpec)>,
    index_path: PathBuf,
}

impl Loaded {
    fn open(src: &SourceArgs, mode: ExecMode) -> Result<Loaded> {
        let store = Arc::new(MaskStore::open(&src.store)?);
        let index_path = src.index.clone().unwrap_or_else(|| default_index(&src.store));
        let index = match mode {
            ExecMode::Oracle => IndexStore::new(src.config.config()?),
            ExecMode::Indexed => IndexStore::open_lazy(&index_path)
                .with_context(|| format!("opening index {}", index_path.display()))?,
            ExecMode::Incremental if index_path.exists() => IndexStore::open_lazy(&index_path)
                .with_context(|| format!("opening index {}", index_path.display()))?,
            ExecMode::Incremental => IndexStore::new(src.config.config()?),
        };
        let rois_path = src.rois.clone().or_else(|| {
            let p = src.store.join(ROI_TABLE_FILE);
            p.exists().then_some(p)
        });
        let rois = match rois_path {
            Some(p) => Some(Arc::new(read_roi_table(&p).with_context(|| p.display().to_string())?)),
            None => None,
        };
        let bindings = src.bindings.iter().map(|b| parse_binding(b)).collect::<Result<_>>()?;
        let mut session = Session::new(store, Arc::new(index)).with_mode(mode);
        if let Some(n) = src.threads {
            session = session.with_threads(n);
        }
        Ok(Loaded {
            session,
            rois,
            bindings,
            index_path,
        })
    }

    fn ctx(&self) -> PlanContext<'_> {
        let mut ctx = self.session.plan_context();
        if let Some(r) = &self.rois {
            ctx = ctx.with_roi_table(r.clone());
        }
        for (name, spec) in &self.bindings {
            ctx = ctx.bind(name, spec.clone());
        }
        ctx
    }
}

fn query(a: QueryArgs) -> Result<()> {
    let text = match (&a.query, &a.file) {
        (Some(q), _) => q.clone(),
        (None, Some(f)) => fs::read_to_string(f).with_context(|| f.display().to_string())?,
        (None, None) => bail!("give a query or --file"),
    };
    let mode = if a.oracle {
        ExecMode::Oracle
    } else if a.incremental {
        ExecMode::Incremental
    } else {
        ExecMode::Indexed
    };
    let l = Loaded::open(&a.source, mode)?;
    let plan = compile(&text, &l.ctx())?;
    for w in &plan.warnings {
        eprintln!("warning: {w}");
    }
    if a.prebuild_mask_agg && mode != ExecMode::Oracle {
        let n = l.session.warm_mask_aggs(&plan)?;
        eprintln!("built {n} aggregated-mask indexes");
    }
    let out = l.session.execute(&plan)?;
    io::stdout().write_all(out.to_tsv().as_bytes())?;
    eprintln!("{}", out.stats);
    if let Some(p) = &a.stats_json {
        fs::write(p, serde_json::to_string_pretty(&out.stats)?)?;
    }
    if let Some(p) = &a.persist {
        l.session.index().persist(p)?;
        eprintln!("persisted {} indexes to {}", l.session.index().len(), p.display());
    }
    Ok(())
}

fn repl(a: ReplArgs) -> Result<()> {
    let l = Loaded::open(&a.source, ExecMode::Incremental)?;
    let stdin = io::stdin();
    let mut stdout = io::stdout();
    let mut last = None;
    let mut queries = 0u64;
    let mut loaded = 0u64;
    eprintln!(
        "{} masks, {} indexed; :stats, :persist [path], :quit",
        l.session.store().len(),
        l.session.index().len()
    );
    for line in stdin.lock().lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(cmd) = line.strip_prefix(':') {
            let mut parts = cmd.split_whitespace();
            match parts.next().unwrap_or("") {
                "quit" | "q" | "exit" => break,
                "stats" => {
                    match &last {
                        Some(s) => eprintln!("last: {s}"),
                        None => eprintln!("no query yet"),
                    }
                    eprintln!(
                        "session: {queries} queries, {loaded} masks loaded, {} of {} masks indexed",
                        l.session.index().len(),
                        l.session.store().len()
                    );
                }
                "persist" => {
                    let p = parts.next().map(PathBuf::from).unwrap_or_else(|| l.index_path.clone());
                    match l.session.index().persist(&p) {
                        Ok(()) => eprintln!("persisted {} indexes to {}", l.session.index().len(), p.display()),
                        Err(e) => eprintln!("error: {e}"),
                    }
                }
                other => eprintln!("unknown command :{other}"),
            }
            continue;
        }
        let res = compile(line, &l.ctx()).and_then(|plan| l.session.execute(&plan));
        match res {
            Ok(out) => {
                stdout.write_all(out.to_tsv().as_bytes())?;
                stdout.flush()?;
                eprintln!("{}", out.stats);
                queries += 1;
                loaded += out.stats.masks_loaded;
                last = Some(out.stats);
            }
            Err(e) => eprintln!("error: {e}"),
        }
    }
    Ok(())
}

fn run_bench(a: BenchArgs) -> Result<()> {
    if let Some(p) = a.p_seen {
        if !(0.0..=1.0).contains(&p) {
            bail!("--p-seen must lie in [0, 1]");
        }
    }
    if a.kinds.is_empty() {
        bail!("--kinds is empty");
    }
    let store = MaskStore::open(&a.store)?;
    let first = store.entries().first().ok_or_else(|| anyhow!("store is empty"))?;
    let (w, h) = (first.width, first.height);
    let ids: Vec<MaskId> = store.entries().iter().map(|e| e.meta.mask_id).collect();
    let rois_path = a.rois.clone().unwrap_or_else(|| a.store.join(ROI_TABLE_FILE));
    let rois = if rois_path.exists() {
        Some(Arc::new(read_roi_table(&rois_path)?))
    } else {
        None
    };
    let prebuilt = match &a.index {
        Some(p) => {
            let t = Instant::now();
            let ix = IndexStore::load(p)?;
            Some((Arc::new(ix), t.elapsed().as_secs_f64() * 1e3))
        }
        None => None,
    };
    let config = match &prebuilt {
        Some((ix, _)) => *ix.config(),
        None => a.config.config()?,
    };
    let spec = WorkloadSpec {
        n_queries: a.queries,
        p_seen: a.p_seen,
        kinds: a.kinds.clone(),
        seed: a.seed,
    };
    let queries = spec.generate(&ids, w, h);
    let setup = BenchSetup {
        store_dir: &a.store,
        rois,
        config,
        prebuilt,
        threads: a.threads,
    };
    let mut report = bench::run(&setup, &queries, &a.modes)?;
    report.notes.push(format!(
        "workload: {} queries, kinds {:?}, p_seen {}, seed {}, target size drawn per query",
        a.queries,
        a.kinds.iter().map(|k| k.name()).collect::<Vec<_>>(),
        a.p_seen.map_or("none".into(), |p| p.to_string()),
        a.seed
    ));
    if a.index.is_some() {
        report.notes.push("ms index loaded from file; its build time is the load time".into());
    }
    let tsv = report.to_tsv();
    match &a.out {
        Some(p) => fs::write(p, tsv)?,
        None => io::stdout().write_all(tsv.as_bytes())?,
    }
    let summary = serde_json::json!({
        "notes": report.notes,
        "config": report.config,
        "workload": spec,
        "modes": report.summaries,
    });
    if let Some(p) = &a.json {
        fs::write(p, serde_json::to_string_pretty(&summary)?)?;
    }
    for s in &report.summaries {
        eprintln!(
            "{}: total {:.1} ms (index {:.1}), median {:.2} ms, loaded {}/{}, mean fml {:.4}",
            s.mode, s.total_ms, s.index_build_ms, s.median_ms, s.masks_loaded, s.masks_targeted, s.mean_fml
        );
    }
    Ok(())
}
