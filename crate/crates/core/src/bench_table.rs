//! Tabular benchmark: training records keyed by canonical architecture hash,
//! persisted as JSON lines (one metadata line, then one line per record).

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::mpsc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell_graph::CellSpec;
use crate::corpus::Corpus;
use crate::lm_trainer::{self, EpochMetrics, Status, TrainConfig, TrainRecord};

pub const TABLE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableMeta {
    pub format_version: u32,
    pub corpus_id: String,
    pub vocab_size: usize,
    /// Training configuration; its `seed` field is replaced per record.
    pub config: TrainConfig,
    pub seeds: Vec<u64>,
    pub tool_version: String,
}

impl TableMeta {
    pub fn new(corpus: &Corpus, config: &TrainConfig, seeds: &[u64]) -> TableMeta {
        TableMeta {
            format_version: TABLE_FORMAT_VERSION,
            corpus_id: corpus.id.clone(),
            vocab_size: corpus.vocab_size(),
            config: TrainConfig {
                seed: 0,
                ..config.clone()
            },
            seeds: seeds.to_vec(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    /// Whether records built under `other` may be mixed with ours.
    fn compatible(&self, other: &TableMeta) -> bool {
        self.format_version == other.format_version
            && self.corpus_id == other.corpus_id
            && self.config == other.config
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub spec: CellSpec,
    pub records: BTreeMap<u64, TrainRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordLine {
    arch_hash: String,
    spec: CellSpec,
    record: TrainRecord,
}

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("epoch {requested} is beyond the trained frontier (max available epoch {max})")]
    Frontier { requested: usize, max: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Format { path: String, line: usize, msg: String },
    #[error("table metadata does not match the requested build ({0})")]
    MetaMismatch(String),
    #[error("invalid architecture: {0}")]
    Invalid(String),
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> TableError + '_ {
    move |source| TableError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchTable {
    pub meta: TableMeta,
    entries: BTreeMap<String, TableEntry>,
}

/// Summary of a build or resume.
#[derive(Debug, Clone, Default)]
pub struct BuildReport {
    pub trained: usize,
    pub skipped: usize,
    /// `(arch_hash, seed, message)` for pairs that could not be trained or stored.
    pub failures: Vec<(String, u64, String)>,
    /// Truncated trailing lines dropped when resuming.
    pub dropped_lines: usize,
}

impl BenchTable {
    pub fn new(meta: TableMeta) -> BenchTable {
        BenchTable {
            meta,
            entries: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.meta.config.epochs
    }

    pub fn hashes(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &TableEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn entry(&self, hash: &str) -> Option<&TableEntry> {
        self.entries.get(hash)
    }

    pub fn spec(&self, hash: &str) -> Option<&CellSpec> {
        self.entries.get(hash).map(|e| &e.spec)
    }

    pub fn record(&self, hash: &str, seed: u64) -> Result<&TrainRecord, TableError> {
        let entry = self
            .entries
            .get(hash)
            .ok_or_else(|| TableError::NotFound(format!("architecture {hash}")))?;
        entry
            .records
            .get(&seed)
            .ok_or_else(|| TableError::NotFound(format!("seed {seed} for architecture {hash}")))
    }

    /// Stored metrics for `(hash, epoch, seed)`; epochs start at 1.
    pub fn query(&self, hash: &str, epoch: usize, seed: u64) -> Result<&EpochMetrics, TableError> {
        let rec = self.record(hash, seed)?;
        if epoch == 0 {
            return Err(TableError::NotFound("epoch 0 (epochs start at 1)".into()));
        }
        rec.epochs.get(epoch - 1).ok_or(TableError::Frontier {
            requested: epoch,
            max: rec.epochs.len(),
        })
    }

    /// Adds a record, checking that it belongs to `spec`.
    pub fn insert(&mut self, spec: CellSpec, record: TrainRecord) -> Result<(), TableError> {
        let hash = spec.canonical_hash().map_err(|e| TableError::Invalid(e.to_string()))?;
        if hash != record.arch_hash {
            return Err(TableError::Invalid(format!(
                "record hash {} does not match spec hash {hash}",
                record.arch_hash
            )));
        }
        record.check().map_err(TableError::Invalid)?;
        let entry = self.entries.entry(hash).or_insert_with(|| TableEntry {
            spec,
            records: BTreeMap::new(),
        });
        entry.records.insert(record.seed, record);
        Ok(())
    }

    /// All stored records, in key order.
    pub fn records(&self) -> impl Iterator<Item = &TrainRecord> {
        self.entries.values().flat_map(|e| e.records.values())
    }

    pub fn diverged_fraction(&self) -> f64 {
        let (mut div, mut total) = (0usize, 0usize);
        for r in self.records() {
            total += 1;
            div += (r.status == Status::Diverged) as usize;
        }
        if total == 0 { 0.0 } else { div as f64 / total as f64 }
    }

    /// Minimum final-epoch test log-perplexity over completed records.
    pub fn best_final_test(&self) -> Option<f64> {
        self.records()
            .filter(|r| r.status == Status::Ok)
            .filter_map(|r| r.final_epoch().map(|e| e.test_log_ppl))
            .min_by(f64::total_cmp)
    }

    pub fn save(&self, path: &Path) -> Result<(), TableError> {
        let file = File::create(path).map_err(io_err(path))?;
        let mut w = BufWriter::new(file);
        let meta = serde_json::to_string(&self.meta).expect("metadata serializes");
        writeln!(w, "{meta}").map_err(io_err(path))?;
        for (hash, entry) in &self.entries {
            for record in entry.records.values() {
                write_record(&mut w, hash, &entry.spec, record).map_err(io_err(path))?;
            }
        }
        w.flush().map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<BenchTable, TableError> {
        let (table, dropped) = BenchTable::load_lenient(path)?;
        if dropped > 0 {
            return Err(TableError::Format {
                path: path.display().to_string(),
                line: 0,
                msg: format!("{dropped} truncated trailing line(s)"),
            });
        }
        Ok(table)
    }

    /// Loads a table, tolerating one truncated final line left by an
    /// interrupted build.
    fn load_lenient(path: &Path) -> Result<(BenchTable, usize), TableError> {
        let file = File::open(path).map_err(io_err(path))?;
        let lines: Vec<String> = BufReader::new(file)
            .lines()
            .collect::<Result<_, _>>()
            .map_err(io_err(path))?;
        let fmt = |line: usize, msg: String| TableError::Format {
            path: path.display().to_string(),
            line,
            msg,
        };
        let first = lines.first().ok_or_else(|| fmt(1, "empty file".into()))?;
        let meta: TableMeta = serde_json::from_str(first).map_err(|e| fmt(1, format!("metadata: {e}")))?;
        if meta.format_version != TABLE_FORMAT_VERSION {
            return Err(fmt(1, format!("unsupported format version {}", meta.format_version)));
        }
        let mut table = BenchTable::new(meta);
        let mut dropped = 0;
        let last = lines.len() - 1;
        for (i, line) in lines.iter().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<RecordLine>(line) {
                Ok(rec) => {
                    if rec.arch_hash != rec.record.arch_hash {
                        return Err(fmt(i + 1, "arch_hash disagrees with record".into()));
                    }
                    table.insert(rec.spec, rec.record).map_err(|e| fmt(i + 1, e.to_string()))?;
                }
                Err(e) if i == last && e.is_eof() => dropped += 1,
                Err(e) => return Err(fmt(i + 1, e.to_string())),
            }
        }
        Ok((table, dropped))
    }

    /// Trains every missing `(spec, seed)` pair and appends it to `path`.
    /// An existing file at `path` is resumed when its metadata matches.
    pub fn build(
        specs: &[CellSpec],
        corpus: &Corpus,
        cfg: &TrainConfig,
        seeds: &[u64],
        path: &Path,
        jobs: usize,
    ) -> Result<(BenchTable, BuildReport), TableError> {
        let meta = TableMeta::new(corpus, cfg, seeds);
        let mut report = BuildReport::default();
        let mut table = if path.exists() {
            let (mut t, dropped) = BenchTable::load_lenient(path)?;
            if !t.meta.compatible(&meta) {
                return Err(TableError::MetaMismatch(format!(
                    "existing table at {} was built with a different corpus or config",
                    path.display()
                )));
            }
            report.dropped_lines = dropped;
            let known: BTreeSet<u64> = t.meta.seeds.iter().chain(seeds).copied().collect();
            t.meta.seeds = known.into_iter().collect();
            t
        } else {
            BenchTable::new(meta)
        };

        let mut todo: Vec<(String, &CellSpec, u64)> = Vec::new();
        let mut planned = BTreeSet::new();
        for spec in specs {
            let hash = spec.canonical_hash().map_err(|e| TableError::Invalid(e.to_string()))?;
            for &seed in seeds {
                if table.record(&hash, seed).is_ok() {
                    report.skipped += 1;
                } else if planned.insert((hash.clone(), seed)) {
                    todo.push((hash.clone(), spec, seed));
                }
            }
        }

        // Rewrite the file so that a dropped partial line or merged seed list
        // is reflected before appending.
        table.save(path)?;
        if todo.is_empty() {
            return Ok((table, report));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .map_err(|e| TableError::Io {
                path: "thread pool".into(),
                source: std::io::Error::other(e),
            })?;
        let (tx, rx) = mpsc::channel::<(String, CellSpec, u64, Result<TrainRecord, String>)>();
        let file = OpenOptions::new().append(true).open(path).map_err(io_err(path))?;
        let mut writer = BufWriter::new(file);
        std::thread::scope(|scope| {
            scope.spawn(|| {
                pool.install(|| {
                    todo.par_iter().for_each_with(tx, |tx, (hash, spec, seed)| {
                        let cfg = TrainConfig {
                            seed: *seed,
                            ..cfg.clone()
                        };
                        let result = lm_trainer::train(spec, corpus, &cfg).map_err(|e| e.to_string());
                        let _ = tx.send((hash.clone(), (*spec).clone(), *seed, result));
                    });
                });
            });
            for (hash, spec, seed, result) in rx {
                let stored = result.and_then(|record| {
                    write_record(&mut writer, &hash, &spec, &record)
                        .and_then(|_| writer.flush())
                        .map_err(|e| format!("{}: {e}", path.display()))?;
                    table.insert(spec, record).map_err(|e| e.to_string())
                });
                match stored {
                    Ok(()) => report.trained += 1,
                    Err(msg) => report.failures.push((hash, seed, msg)),
                }
            }
        });
        Ok((table, report))
    }
}

fn write_record(w: &mut impl Write, hash: &str, spec: &CellSpec, record: &TrainRecord) -> std::io::Result<()> {
    let line = RecordLine {
        arch_hash: hash.to_string(),
        spec: spec.clone(),
        record: record.clone(),
    };
    writeln!(w, "{}", serde_json::to_string(&line).expect("record serializes"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell_graph::{build_gru, build_lstm, build_rnn};
    use crate::lm_trainer::Divergence;

    fn corpus() -> Corpus {
        Corpus::from_texts("abcd", "ab", "cd", crate::corpus::Tokenization::Char).unwrap()
    }

    fn fake_record(spec: &CellSpec, seed: u64, vals: &[f64], diverged: bool) -> TrainRecord {
        TrainRecord {
            arch_hash: spec.canonical_hash().unwrap(),
            seed,
            status: if diverged { Status::Diverged } else { Status::Ok },
            num_params: 10,
            epochs: vals
                .iter()
                .enumerate()
                .map(|(i, &v)| EpochMetrics {
                    epoch: i + 1,
                    wall_time_s: 1.0,
                    train_log_ppl: v,
                    val_log_ppl: v,
                    test_log_ppl: v + 0.1,
                })
                .collect(),
            diverged: diverged.then(|| Divergence {
                epoch: vals.len() + 1,
                wall_time_s: 0.5,
                reason: "test".into(),
            }),
        }
    }

    fn small_table() -> BenchTable {
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let mut t = BenchTable::new(TableMeta::new(&corpus(), &cfg, &[0]));
        t.insert(build_rnn(), fake_record(&build_rnn(), 0, &[3.0, 2.5, 2.4], false)).unwrap();
        t.insert(build_lstm(), fake_record(&build_lstm(), 0, &[2.9, 2.2, 2.0], false)).unwrap();
        t.insert(build_gru(), fake_record(&build_gru(), 0, &[3.1], true)).unwrap();
        t
    }

    #[test]
    fn query_semantics() {
        let t = small_table();
        let lstm = build_lstm().canonical_hash().unwrap();
        assert_eq!(t.query(&lstm, 2, 0).unwrap().val_log_ppl, 2.2);
        assert!(matches!(t.query(&lstm, 0, 0), Err(TableError::NotFound(_))));
        assert!(matches!(t.query(&lstm, 4, 0), Err(TableError::Frontier { max: 3, .. })));
        assert!(matches!(t.query(&lstm, 1, 7), Err(TableError::NotFound(_))));
        assert!(matches!(t.query("nope", 1, 0), Err(TableError::NotFound(_))));
        let gru = build_gru().canonical_hash().unwrap();
        assert!(matches!(t.query(&gru, 2, 0), Err(TableError::Frontier { max: 1, .. })));
        assert!((t.diverged_fraction() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(t.best_final_test(), Some(2.1));
    }

    #[test]
    fn mismatched_hash_rejected() {
        let mut t = small_table();
        let rec = fake_record(&build_rnn(), 1, &[1.0], false);
        assert!(matches!(t.insert(build_lstm(), rec), Err(TableError::Invalid(_))));
    }

    #[test]
    fn persistence_round_trip() {
        let t = small_table();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        t.save(&path).unwrap();
        let back = BenchTable::load(&path).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.best_final_test(), t.best_final_test());
    }

    #[test]
    fn truncated_tail_tolerated_on_resume_only() {
        let t = small_table();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        t.save(&path).unwrap();
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("{\"arch_hash\":\"ab");
        std::fs::write(&path, text).unwrap();
        assert!(BenchTable::load(&path).is_err());
        let (lenient, dropped) = BenchTable::load_lenient(&path).unwrap();
        assert_eq!(dropped, 1);
        assert_eq!(lenient, t);
    }
}
