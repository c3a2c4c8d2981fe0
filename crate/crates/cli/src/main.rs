use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use recur_nas_core::analytics::{self, GraphFeatures};
use recur_nas_core::bench_table::BenchTable;
use recur_nas_core::cell_graph::{build_gru, build_lstm, build_rnn, CellSpec};
use recur_nas_core::corpus::{Corpus, Tokenization};
use recur_nas_core::generator::{population, GenParams};
use recur_nas_core::lm_trainer::{self, Model, SavedModel, Status, TrainConfig};
use recur_nas_core::optimizers::{self, Method, OptimizerParams, OptimizerRun, TableFeatures};

mod config;

use config::ConfigFile;

#[derive(Parser, Debug)]
#[command(name = "recur-nas", version, about = "Recurrent-cell architecture search toolkit")]
struct Cli {
    /// Key-value config file (`key = value` per line); flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample random valid cells into a directory of JSON files.
    Generate {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        max_nodes: Option<usize>,
        /// Hidden slots per cell; 0 cycles through 1..=3.
        #[arg(long)]
        hidden_slots: Option<usize>,
        /// Also write the RNN, LSTM and GRU baselines.
        #[arg(long)]
        baselines: bool,
    },
    /// Train one cell and write its record.
    Train {
        #[arg(long)]
        arch: PathBuf,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Also save the trained parameters as JSON.
        #[arg(long)]
        save_model: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Train every cell in a directory and store the records as a table.
    BuildTable {
        #[arg(long)]
        archs: PathBuf,
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Number of seeds per architecture (seeds 0..N).
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Run search methods against a table.
    RunNas {
        #[arg(long)]
        table: PathBuf,
        /// Method id, repeatable; `all` runs every method.
        #[arg(long, required = true)]
        method: Vec<String>,
        #[arg(long)]
        budget_s: f64,
        #[arg(long, default_value_t = 30)]
        trials: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Aggregate run-nas output into CSV reports.
    Report {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Table for locating the baseline cells' ranks.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Upper bound on the edit distance between two cells.
    Ged {
        a: PathBuf,
        b: PathBuf,
    },
    /// Export WL graph features as CSV.
    Embed {
        /// A cell JSON file or a directory of them.
        #[arg(long)]
        archs: PathBuf,
        #[arg(long, default_value_t = 10)]
        dim: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Correlate embedding cosines with word-pair judgments.
    Wordsim {
        #[arg(long)]
        model: PathBuf,
        /// TSV `word1<TAB>word2<TAB>score`; defaults to the bundled pairs.
        #[arg(long)]
        pairs: Option<PathBuf>,
    },
    /// Spearman correlation between two rankings of table architectures.
    Rankcorr {
        #[arg(long)]
        table: PathBuf,
        /// Second table; defaults to the first.
        #[arg(long)]
        other: Option<PathBuf>,
        /// Epoch of the first ranking (final when omitted).
        #[arg(long)]
        epoch: Option<usize>,
        /// Epoch of the second ranking (final when omitted).
        #[arg(long)]
        other_epoch: Option<usize>,
    },
}

#[derive(Args, Debug, Clone)]
struct CorpusArgs {
    /// Directory with train.txt/valid.txt/test.txt, or `bundled`.
    #[arg(long, default_value = "bundled")]
    corpus: String,
    #[arg(long)]
    level: Option<Tokenization>,
    /// Keep only the first TRAIN,VALID,TEST tokens of each split.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    truncate: Option<Vec<usize>>,
}

#[derive(Args, Debug, Clone, Default)]
struct TrainArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    emb_dim: Option<usize>,
    #[arg(long)]
    nhid: Option<usize>,
    #[arg(long)]
    n_layers: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    eval_batch_size: Option<usize>,
    #[arg(long)]
    bptt_len: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    grad_clip: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    dropouth: Option<f64>,
    #[arg(long)]
    dropouti: Option<f64>,
    #[arg(long)]
    dropoute: Option<f64>,
    #[arg(long)]
    wdrop: Option<f64>,
    #[arg(long)]
    tie_weights: bool,
    /// Replace measured epoch times with a deterministic cost model.
    #[arg(long)]
    synthetic_time: bool,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn usage(msg: impl Into<String>) -> Failure {
        Failure { code: 2, msg: msg.into() }
    }
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Failure {
        Failure {
            code: 1,
            msg: e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

#[derive(Serialize)]
struct RunManifest {
    command: String,
    config: Value,
    seeds: Vec<u64>,
    tool_version: &'static str,
    inputs: Vec<String>,
    outputs: Vec<String>,
    started_at: f64,
    finished_at: f64,
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

struct Ctx {
    config: ConfigFile,
    started_at: f64,
}

impl Ctx {
    /// Seed precedence: flag, config file, `RECUR_NAS_SEED`, then 0.
    fn seed(&self, flag: Option<u64>) -> CliResult<u64> {
        if let Some(s) = flag {
            return Ok(s);
        }
        if let Some(s) = self.config.get_parsed::<u64>("seed")? {
            return Ok(s);
        }
        match std::env::var("RECUR_NAS_SEED") {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Failure::usage(format!("RECUR_NAS_SEED must be an integer, got `{v}`"))),
            Err(_) => Ok(0),
        }
    }

    fn jobs(&self, flag: Option<usize>) -> CliResult<usize> {
        let default = std::thread::available_parallelism().map_or(1, |n| n.get());
        Ok(flag.or(self.config.get_parsed("jobs")?).unwrap_or(default).max(1))
    }

    fn train_config(&self, args: &TrainArgs) -> CliResult<TrainConfig> {
        let mut cfg = self.config.apply_to(TrainConfig::default())?;
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = args.$f { cfg.$f = v; } )* };
        }
        set!(epochs, emb_dim, nhid, n_layers, batch_size, eval_batch_size, bptt_len, lr, grad_clip);
        set!(dropout, dropouth, dropouti, dropoute, wdrop);
        cfg.tie_weights |= args.tie_weights;
        cfg.synthetic_time |= args.synthetic_time;
        cfg.check()?;
        Ok(cfg)
    }

    fn corpus(&self, args: &CorpusArgs) -> CliResult<Corpus> {
        let level = match args.level {
            Some(l) => l,
            None => self.config.get_parsed("level")?.unwrap_or_default(),
        };
        let base = if args.corpus == "bundled" {
            if level != Tokenization::Char {
                return Err(Failure::usage("the bundled corpus is character-level only"));
            }
            Corpus::bundled()
        } else {
            Corpus::load(Path::new(&args.corpus), level)?
        };
        Ok(match args.truncate.as_deref() {
            Some(&[a, b, c]) => base.truncated(a, b, c),
            Some(_) => return Err(Failure::usage("--truncate takes three counts: train,valid,test")),
            None => base,
        })
    }

    fn manifest(&self, command: &str, config: Value, seeds: Vec<u64>, inputs: &[&Path], outputs: &[&Path]) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            config,
            seeds,
            tool_version: env!("CARGO_PKG_VERSION"),
            inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
            started_at: self.started_at,
            finished_at: now(),
        }
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    fs::write(path, text + "\n").map_err(|e| Failure::from(format!("{}: {e}", path.display())))
}

/// `out.json` → `out.manifest.json`; directories get `manifest.json` inside.
fn manifest_path(out: &Path) -> PathBuf {
    if out.is_dir() {
        return out.join("manifest.json");
    }
    let stem = out.file_stem().map_or("out".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.manifest.json"))
}

fn read_spec(path: &Path) -> CliResult<CellSpec> {
    let text = fs::read_to_string(path).map_err(|e| Failure::from(format!("{}: {e}", path.display())))?;
    CellSpec::from_json(&text).map_err(|e| Failure::from(format!("{}: {e}", path.display())))
}

/// Cell files in `dir` (or `dir` itself when it is a file), sorted by name.
fn read_specs(path: &Path) -> CliResult<Vec<(PathBuf, CellSpec)>> {
    if path.is_file() {
        return Ok(vec![(path.to_path_buf(), read_spec(path)?)]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| Failure::from(format!("{}: {e}", path.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json") && !p.ends_with("manifest.json"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Failure::from(format!("no cell files in {}", path.display())));
    }
    files.into_iter().map(|p| read_spec(&p).map(|s| (p, s))).collect()
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| Failure::from(format!("{}: {e}", path.display())))
}

fn cmd_generate(
    ctx: &Ctx,
    count: usize,
    seed: Option<u64>,
    out: &Path,
    max_nodes: Option<usize>,
    hidden_slots: Option<usize>,
    baselines: bool,
) -> CliResult<()> {
    let seed = ctx.seed(seed)?;
    let max_nodes = max_nodes.or(ctx.config.get_parsed("max_nodes")?).unwrap_or(24);
    let hidden_slots = hidden_slots.or(ctx.config.get_parsed("hidden_slots")?).unwrap_or(0);
    let base = GenParams {
        n_hidden_slots: hidden_slots,
        ..GenParams::new(max_nodes, 1, seed)
    };
    if hidden_slots != 0 {
        base.check()?;
    }
    let specs = population(count, &base)?;
    create_dir(out)?;
    for (i, spec) in specs.iter().enumerate() {
        fs::write(out.join(format!("arch_{i:05}.json")), spec.to_json() + "\n")?;
    }
    if baselines {
        for (name, spec) in [("rnn", build_rnn()), ("lstm", build_lstm()), ("gru", build_gru())] {
            fs::write(out.join(format!("baseline_{name}.json")), spec.to_json() + "\n")?;
        }
    }
    let cfg = json!({ "count": count, "max_nodes": max_nodes, "hidden_slots": hidden_slots, "baselines": baselines });
    write_json(&out.join("manifest.json"), &ctx.manifest("generate", cfg, vec![seed], &[], &[out]))?;
    eprintln!("wrote {} cells to {}", specs.len(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    ctx: &Ctx,
    arch: &Path,
    corpus_args: &CorpusArgs,
    seed: Option<u64>,
    out: &Path,
    save_model: Option<&Path>,
    train: &TrainArgs,
) -> CliResult<()> {
    let spec = read_spec(arch)?;
    let corpus = ctx.corpus(corpus_args)?;
    let cfg = TrainConfig {
        seed: ctx.seed(seed)?,
        ..ctx.train_config(train)?
    };
    let outcome = lm_trainer::train_model(&spec, &corpus, &cfg)?;
    write_json(out, &outcome.record)?;
    let mut outputs = vec![out];
    if let Some(p) = save_model {
        write_json(p, &outcome.model.save(&corpus.vocab))?;
        outputs.push(p);
    }
    let manifest = ctx.manifest(
        "train",
        json!({ "train": cfg, "corpus": corpus_args.corpus, "corpus_id": corpus.id }),
        vec![cfg.seed],
        &[arch],
        &outputs,
    );
    write_json(&manifest_path(out), &manifest)?;
    match outcome.record.status {
        Status::Ok => eprintln!("trained {} epochs", outcome.record.epochs.len()),
        Status::Diverged => eprintln!(
            "run diverged: {}",
            outcome.record.diverged.as_ref().map_or("", |d| d.reason.as_str())
        ),
    }
    Ok(())
}

fn cmd_build_table(
    ctx: &Ctx,
    archs: &Path,
    corpus_args: &CorpusArgs,
    n_seeds: u64,
    out: &Path,
    jobs: Option<usize>,
    train: &TrainArgs,
) -> CliResult<()> {
    if n_seeds == 0 {
        return Err(Failure::usage("--seeds must be at least 1"));
    }
    let specs: Vec<CellSpec> = read_specs(archs)?.into_iter().map(|(_, s)| s).collect();
    let corpus = ctx.corpus(corpus_args)?;
    let cfg = ctx.train_config(train)?;
    let seeds: Vec<u64> = (0..n_seeds).collect();
    let (table, report) = BenchTable::build(&specs, &corpus, &cfg, &seeds, out, ctx.jobs(jobs)?)?;
    for (hash, seed, msg) in &report.failures {
        eprintln!("failed {hash} seed {seed}: {msg}");
    }
    let manifest = ctx.manifest(
        "build-table",
        json!({ "train": cfg, "corpus": corpus_args.corpus, "corpus_id": corpus.id }),
        seeds,
        &[archs],
        &[out],
    );
    write_json(&manifest_path(out), &manifest)?;
    eprintln!(
        "table has {} architectures ({} trained, {} already present, diverged fraction {:.3})",
        table.len(),
        report.trained,
        report.skipped,
        table.diverged_fraction()
    );
    if report.failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::from(format!("{} training runs failed", report.failures.len())))
    }
}

fn parse_methods(raw: &[String]) -> CliResult<Vec<Method>> {
    let mut out = Vec::new();
    for m in raw {
        if m == "all" {
            out.extend(Method::ALL);
        } else {
            out.push(m.parse().map_err(Failure::usage)?);
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn cmd_run_nas(
    ctx: &Ctx,
    table_path: &Path,
    methods: &[String],
    budget_s: f64,
    trials: usize,
    seed: Option<u64>,
    out: &Path,
    jobs: Option<usize>,
) -> CliResult<()> {
    let methods = parse_methods(methods)?;
    if budget_s.is_nan() || budget_s <= 0.0 || trials == 0 {
        return Err(Failure::usage("--budget-s must be positive and --trials at least 1"));
    }
    let table = Arc::new(BenchTable::load(table_path)?);
    let params = ctx.config.apply_to(OptimizerParams::default())?;
    let features = TableFeatures::standard(&table, &params);
    let base_seed = ctx.seed(seed)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.jobs(jobs)?)
        .build()
        .map_err(|e| Failure::from(e.to_string()))?;
    let (report, runs) = pool.install(|| {
        optimizers::compare(&methods, Arc::clone(&table), &features, budget_s, trials, base_seed, &params)
    })?;
    create_dir(out)?;
    for run in &runs {
        let dir = out.join(run.method.id());
        create_dir(&dir)?;
        run.trace.save_csv(&dir.join(format!("trial_{}.csv", run.seed)))?;
        write_json(&dir.join(format!("trial_{}.json", run.seed)), run)?;
        for w in &run.warnings {
            eprintln!("{} seed {}: {w}", run.method, run.seed);
        }
    }
    let manifest = ctx.manifest(
        "run-nas",
        json!({ "methods": methods, "budget_s": budget_s, "trials": trials, "params": params }),
        (0..trials as u64).map(|k| base_seed + k).collect(),
        &[table_path],
        &[out],
    );
    write_json(&out.join("manifest.json"), &manifest)?;
    for s in &report.summaries {
        eprintln!(
            "{:>5}: mean final regret {:.4}, zero-regret fraction {:.2}",
            s.method, s.mean_final_regret, s.zero_regret_fraction
        );
    }
    Ok(())
}

fn load_runs(dir: &Path) -> CliResult<BTreeMap<Method, Vec<OptimizerRun>>> {
    let mut runs: BTreeMap<Method, Vec<OptimizerRun>> = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| Failure::from(format!("{}: {e}", dir.display())))?;
    let mut files = Vec::new();
    for sub in entries.filter_map(Result::ok).map(|e| e.path()).filter(|p| p.is_dir()) {
        for f in fs::read_dir(&sub)?.filter_map(Result::ok).map(|e| e.path()) {
            if f.extension().is_some_and(|x| x == "json") {
                files.push(f);
            }
        }
    }
    files.sort();
    for f in files {
        let text = fs::read_to_string(&f)?;
        let run: OptimizerRun =
            serde_json::from_str(&text).map_err(|e| Failure::from(format!("{}: {e}", f.display())))?;
        runs.entry(run.method).or_default().push(run);
    }
    Ok(runs)
}

fn cmd_report(ctx: &Ctx, runs_dir: &Path, out: &Path, table: Option<&Path>) -> CliResult<()> {
    let runs = load_runs(runs_dir)?;
    if runs.is_empty() {
        return Err(Failure::from(format!("no runs found in {}", runs_dir.display())));
    }
    let budget = runs.values().flatten().map(|r| r.budget_s).fold(0.0, f64::max);
    let report = optimizers::CompareReport {
        budget_s: budget,
        summaries: runs.iter().map(|(m, r)| optimizers::summarize(*m, r, budget)).collect(),
    };
    create_dir(out)?;
    let mut buf = Vec::new();
    report.write_mean_regret_csv(&mut buf)?;
    fs::write(out.join("mean_regret.csv"), &buf)?;
    buf.clear();
    report.write_final_cdf_csv(&mut buf)?;
    fs::write(out.join("final_regret_cdf.csv"), &buf)?;
    buf.clear();
    report.write_summary_csv(&mut buf)?;
    fs::write(out.join("summary.csv"), &buf)?;
    let mut inputs = vec![runs_dir];
    if let Some(tp) = table {
        let t = BenchTable::load(tp)?;
        fs::write(out.join("baselines.csv"), baseline_ranks(&t))?;
        inputs.push(tp);
    }
    let manifest = ctx.manifest("report", json!({ "budget_s": budget }), vec![], &inputs, &[out]);
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(())
}

/// Rank of each baseline cell by final test log-perplexity among completed runs.
fn baseline_ranks(table: &BenchTable) -> String {
    let mut finals: Vec<f64> = table
        .records()
        .filter(|r| r.status == Status::Ok)
        .filter_map(|r| r.final_epoch().map(|e| e.test_log_ppl))
        .collect();
    finals.sort_by(f64::total_cmp);
    let mut csv = String::from("cell,hash,final_test_log_ppl,rank,completed\n");
    for (name, spec) in [("rnn", build_rnn()), ("lstm", build_lstm()), ("gru", build_gru())] {
        let hash = spec.canonical_hash().expect("baselines are valid");
        let best = table.entry(&hash).and_then(|e| {
            e.records
                .values()
                .filter(|r| r.status == Status::Ok)
                .filter_map(|r| r.final_epoch().map(|m| m.test_log_ppl))
                .min_by(f64::total_cmp)
        });
        match best {
            Some(v) => {
                let rank = finals.partition_point(|&x| x < v) + 1;
                csv += &format!("{name},{hash},{v},{rank},{}\n", finals.len());
            }
            None => csv += &format!("{name},{hash},,,{}\n", finals.len()),
        }
    }
    csv
}

fn cmd_ged(a: &Path, b: &Path) -> CliResult<()> {
    let (sa, sb) = (read_spec(a)?, read_spec(b)?);
    sa.ensure_valid()?;
    sb.ensure_valid()?;
    println!("{}", serde_json::to_string(&analytics::ged_upper_bound(&sa, &sb)).expect("serializes"));
    Ok(())
}

fn cmd_embed(ctx: &Ctx, archs: &Path, dim: usize, out: Option<&Path>) -> CliResult<()> {
    let feats: Vec<GraphFeatures> = read_specs(archs)?
        .iter()
        .map(|(_, s)| analytics::embed(s, dim))
        .collect::<Result<_, _>>()?;
    let mut buf = Vec::new();
    analytics::write_features_csv(&mut buf, &feats)?;
    match out {
        Some(p) => {
            fs::write(p, &buf)?;
            let manifest = ctx.manifest("embed", json!({ "dim": dim }), vec![], &[archs], &[p]);
            write_json(&manifest_path(p), &manifest)?;
        }
        None => print!("{}", String::from_utf8_lossy(&buf)),
    }
    Ok(())
}

fn cmd_wordsim(model: &Path, pairs: Option<&Path>) -> CliResult<()> {
    let text = fs::read_to_string(model).map_err(|e| Failure::from(format!("{}: {e}", model.display())))?;
    let saved: SavedModel =
        serde_json::from_str(&text).map_err(|e| Failure::from(format!("{}: {e}", model.display())))?;
    let m = Model::restore(&saved)?;
    let pairs = match pairs {
        Some(p) => analytics::load_pairs(p)?,
        None => analytics::bundled_pairs(),
    };
    let r = analytics::wordsim_eval(m.embedding(), &saved.vocab, &pairs);
    if r.spearman.is_none() {
        eprintln!("correlations undefined (no covered pairs or constant similarities)");
    }
    println!("{}", serde_json::to_string(&r).expect("serializes"));
    Ok(())
}

fn cmd_rankcorr(table: &Path, other: Option<&Path>, epoch: Option<usize>, other_epoch: Option<usize>) -> CliResult<()> {
    let a = BenchTable::load(table)?;
    let b = match other {
        Some(p) => BenchTable::load(p)?,
        None => a.clone(),
    };
    let rho = analytics::rank_correlation(
        &analytics::table_scores(&a, epoch),
        &analytics::table_scores(&b, other_epoch),
    )?;
    println!("{}", json!({ "spearman": rho }));
    Ok(())
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let config = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let ctx = Ctx {
        config,
        started_at: now(),
    };
    match &cli.cmd {
        Command::Generate {
            count,
            seed,
            out,
            max_nodes,
            hidden_slots,
            baselines,
        } => cmd_generate(&ctx, *count, *seed, out, *max_nodes, *hidden_slots, *baselines),
        Command::Train {
            arch,
            corpus,
            seed,
            out,
            save_model,
            train,
        } => cmd_train(&ctx, arch, corpus, *seed, out, save_model.as_deref(), train),
        Command::BuildTable {
            archs,
            corpus,
            seeds,
            out,
            jobs,
            train,
        } => cmd_build_table(&ctx, archs, corpus, *seeds, out, *jobs, train),
        Command::RunNas {
            table,
            method,
            budget_s,
            trials,
            seed,
            out,
            jobs,
        } => cmd_run_nas(&ctx, table, method, *budget_s, *trials, *seed, out, *jobs),
        Command::Report { runs, out, table } => cmd_report(&ctx, runs, out, table.as_deref()),
        Command::Ged { a, b } => cmd_ged(a, b),
        Command::Embed { archs, dim, out } => cmd_embed(&ctx, archs, *dim, out.as_deref()),
        Command::Wordsim { model, pairs } => cmd_wordsim(model, pairs.as_deref()),
        Command::Rankcorr {
            table,
            other,
            epoch,
            other_epoch,
        } => cmd_rankcorr(table, other.as_deref(), *epoch, *other_epoch),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
