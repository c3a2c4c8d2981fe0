//! Simulated NAS session over a [`BenchTable`]: replays training with
//! checkpoint continuation, charges simulated time and tracks the incumbent
//! and its regret.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bench_table::{BenchTable, TableError};
use crate::lm_trainer::{EpochMetrics, Status};

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("architecture {hash} must be trained to epoch {epoch} first (trained: {frontier})")]
    MustTrainFirst { hash: String, epoch: usize, frontier: usize },
    #[error("simulated budget of {budget} s is exhausted")]
    BudgetExhausted { budget: f64 },
    #[error("{0}")]
    Contract(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Incumbent {
    pub arch_hash: String,
    pub epoch: usize,
    pub val_log_ppl: f64,
    pub test_log_ppl: f64,
}

impl Incumbent {
    fn better_than(&self, other: &Incumbent) -> bool {
        let key = |i: &Incumbent| (i.val_log_ppl, i.epoch, i.arch_hash.clone());
        let (a, b) = (key(self), key(other));
        match a.0.total_cmp(&b.0) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => (a.1, a.2) < (b.1, b.2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub time_s: f64,
    pub regret: f64,
}

/// Piecewise-constant regret curve; each point holds from its time onward.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegretTrace {
    pub points: Vec<TracePoint>,
}

impl RegretTrace {
    /// Regret in effect at `t`, `None` before the first point.
    pub fn at(&self, t: f64) -> Option<f64> {
        let idx = self.points.partition_point(|p| p.time_s <= t);
        idx.checked_sub(1).map(|i| self.points[i].regret)
    }

    pub fn last(&self) -> Option<f64> {
        self.points.last().map(|p| p.regret)
    }

    pub fn is_non_increasing(&self) -> bool {
        self.points
            .windows(2)
            .all(|w| w[1].regret <= w[0].regret && w[1].time_s >= w[0].time_s)
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "time_s,regret")?;
        for p in &self.points {
            writeln!(w, "{},{}", p.time_s, p.regret)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        std::fs::write(path, buf)
    }

    fn push(&mut self, p: TracePoint) {
        match self.points.last_mut() {
            Some(last) if last.time_s == p.time_s => *last = p,
            _ => self.points.push(p),
        }
    }
}

/// Outcome of one `train_arch` call.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub status: Status,
    /// Metrics for every epoch up to the one reached.
    pub epochs: Vec<EpochMetrics>,
    /// Simulated seconds charged by this call.
    pub charged_s: f64,
    pub finished_at: f64,
}

impl TrainResult {
    pub fn last(&self) -> Option<&EpochMetrics> {
        self.epochs.last()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub arch_hash: String,
    pub epochs: usize,
    pub status: Status,
    pub val: Option<f64>,
    pub test: Option<f64>,
    pub finished_at: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct ArchState {
    frontier: usize,
    diverged_charged: bool,
}

/// One simulated NAS session.
#[derive(Debug, Clone)]
pub struct NasEnv {
    table: Arc<BenchTable>,
    seeds: BTreeMap<String, u64>,
    budget: f64,
    clock: f64,
    state: BTreeMap<String, ArchState>,
    incumbent: Option<Incumbent>,
    best_test_so_far: f64,
    l_star: f64,
    trace: RegretTrace,
    raw_trace: RegretTrace,
    evaluations: Vec<Evaluation>,
    warnings: Vec<String>,
}

impl NasEnv {
    /// Opens a session; one stored seed per architecture is drawn from `seed`.
    pub fn new(table: Arc<BenchTable>, budget_s: f64, seed: u64) -> Result<NasEnv, EnvError> {
        if table.is_empty() {
            return Err(EnvError::Contract("table is empty".into()));
        }
        if budget_s.is_nan() || budget_s < 0.0 {
            return Err(EnvError::Contract(format!("budget must be non-negative, got {budget_s}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seeds = BTreeMap::new();
        let mut l_star = f64::INFINITY;
        for (hash, entry) in table.entries() {
            let stored: Vec<u64> = entry.records.keys().copied().collect();
            let s = stored[rng.gen_range(0..stored.len())];
            for e in &entry.records[&s].epochs {
                l_star = l_star.min(e.test_log_ppl);
            }
            seeds.insert(hash.to_string(), s);
        }
        if !l_star.is_finite() {
            return Err(EnvError::Contract("table has no completed epoch".into()));
        }
        Ok(NasEnv {
            table,
            seeds,
            budget: budget_s,
            clock: 0.0,
            state: BTreeMap::new(),
            incumbent: None,
            best_test_so_far: f64::INFINITY,
            l_star,
            trace: RegretTrace::default(),
            raw_trace: RegretTrace::default(),
            evaluations: Vec::new(),
            warnings: Vec::new(),
        })
    }

    pub fn table(&self) -> &BenchTable {
        &self.table
    }

    pub fn horizon(&self) -> usize {
        self.table.horizon()
    }

    pub fn hashes(&self) -> impl Iterator<Item = &str> {
        self.seeds.keys().map(String::as_str)
    }

    pub fn session_seed(&self, hash: &str) -> Option<u64> {
        self.seeds.get(hash).copied()
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    /// True once no new evaluation may start.
    pub fn exhausted(&self) -> bool {
        self.clock >= self.budget
    }

    pub fn l_star(&self) -> f64 {
        self.l_star
    }

    pub fn incumbent(&self) -> Option<&Incumbent> {
        self.incumbent.as_ref()
    }

    pub fn evaluations(&self) -> &[Evaluation] {
        &self.evaluations
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        self.warnings.push(msg.into());
    }

    /// Monotone (best-so-far) regret trace.
    pub fn trace(&self) -> &RegretTrace {
        &self.trace
    }

    /// Regret of the current incumbent at every change.
    pub fn raw_trace(&self) -> &RegretTrace {
        &self.raw_trace
    }

    pub fn frontier(&self, hash: &str) -> usize {
        self.state.get(hash).map_or(0, |s| s.frontier)
    }

    /// Whether `hash` has been trained at all in this session.
    pub fn is_evaluated(&self, hash: &str) -> bool {
        self.state.contains_key(hash)
    }

    pub fn best_test(&self) -> Result<f64, EnvError> {
        self.incumbent
            .as_ref()
            .map(|i| i.test_log_ppl)
            .ok_or_else(|| EnvError::Contract("no epoch trained yet".into()))
    }

    pub fn regret(&self) -> Result<f64, EnvError> {
        self.trace
            .last()
            .ok_or_else(|| EnvError::Contract("no epoch trained yet".into()))
    }

    /// Simulated cost of training `hash` from scratch to `epochs`.
    pub fn cost_of(&self, hash: &str, epochs: usize) -> Result<f64, EnvError> {
        let rec = self.table.record(hash, self.seed_for(hash)?)?;
        let mut cost: f64 = rec.epochs.iter().take(epochs).map(|e| e.wall_time_s).sum();
        if epochs > rec.epochs.len() {
            if let Some(d) = &rec.diverged {
                cost += d.wall_time_s;
            }
        }
        Ok(cost)
    }

    fn seed_for(&self, hash: &str) -> Result<u64, EnvError> {
        self.seeds
            .get(hash)
            .copied()
            .ok_or_else(|| EnvError::Table(TableError::NotFound(format!("architecture {hash}"))))
    }

    /// Trains `hash` up to `epochs`, charging only epochs beyond what this
    /// session already paid for.
    pub fn train_arch(&mut self, hash: &str, epochs: usize) -> Result<TrainResult, EnvError> {
        let seed = self.seed_for(hash)?;
        let table = Arc::clone(&self.table);
        let rec = table.record(hash, seed)?;
        let horizon = table.horizon();
        if epochs == 0 {
            return Err(EnvError::Table(TableError::NotFound("epoch 0 (epochs start at 1)".into())));
        }
        if epochs > horizon {
            return Err(EnvError::Table(TableError::Frontier {
                requested: epochs,
                max: horizon,
            }));
        }
        let prev = self.state.get(hash).cloned().unwrap_or_default();
        let completed = rec.epochs.len();
        let diverges = rec.status == Status::Diverged && epochs > completed;
        let reach = epochs.min(completed);
        let needs_charge = reach > prev.frontier || (diverges && !prev.diverged_charged);
        if needs_charge && self.exhausted() {
            return Err(EnvError::BudgetExhausted { budget: self.budget });
        }

        let start = self.clock;
        for e in &rec.epochs[prev.frontier.min(reach)..reach] {
            self.clock += e.wall_time_s;
        }
        let mut state = ArchState {
            frontier: prev.frontier.max(reach),
            diverged_charged: prev.diverged_charged,
        };
        if diverges && !state.diverged_charged {
            self.clock += rec.diverged.as_ref().map_or(0.0, |d| d.wall_time_s);
            state.diverged_charged = true;
        }
        self.state.insert(hash.to_string(), state);
        let charged = self.clock - start;

        let status = if diverges { Status::Diverged } else { Status::Ok };
        let observed = rec.epochs[..reach].to_vec();
        let fresh = charged > 0.0 || !self.evaluations.iter().any(|e| e.arch_hash == hash && e.epochs == epochs);
        if fresh && self.clock <= self.budget {
            let point = observed.last().filter(|_| status == Status::Ok);
            self.evaluations.push(Evaluation {
                arch_hash: hash.to_string(),
                epochs,
                status,
                val: point.map(|m| m.val_log_ppl),
                test: point.map(|m| m.test_log_ppl),
                finished_at: self.clock,
            });
            if let Some(m) = point {
                self.observe(hash, m);
            }
        }
        Ok(TrainResult {
            status,
            epochs: observed,
            charged_s: charged,
            finished_at: self.clock,
        })
    }

    fn observe(&mut self, hash: &str, m: &EpochMetrics) {
        let cand = Incumbent {
            arch_hash: hash.to_string(),
            epoch: m.epoch,
            val_log_ppl: m.val_log_ppl,
            test_log_ppl: m.test_log_ppl,
        };
        let improved = self.incumbent.as_ref().is_none_or(|inc| cand.better_than(inc));
        if !improved {
            return;
        }
        self.raw_trace.push(TracePoint {
            time_s: self.clock,
            regret: cand.test_log_ppl - self.l_star,
        });
        if cand.test_log_ppl < self.best_test_so_far || self.trace.points.is_empty() {
            self.best_test_so_far = self.best_test_so_far.min(cand.test_log_ppl);
            self.trace.push(TracePoint {
                time_s: self.clock,
                regret: self.best_test_so_far - self.l_star,
            });
        }
        self.incumbent = Some(cand);
    }

    /// Metrics already paid for in this session.
    pub fn get_metrics(&self, hash: &str, epoch: usize) -> Result<EpochMetrics, EnvError> {
        let seed = self.seed_for(hash)?;
        let frontier = self.frontier(hash);
        if epoch == 0 || epoch > frontier {
            return Err(EnvError::MustTrainFirst {
                hash: hash.to_string(),
                epoch,
                frontier,
            });
        }
        Ok(self.table.query(hash, epoch, seed)?.clone())
    }

    /// Architectures not yet trained in this session.
    pub fn unevaluated(&self) -> Vec<&str> {
        let seen: BTreeSet<&str> = self.state.keys().map(String::as_str).collect();
        self.hashes().filter(|h| !seen.contains(h)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench_table::TableMeta;
    use crate::cell_graph::{build_gru, build_lstm, build_rnn};
    use crate::corpus::{Corpus, Tokenization};
    use crate::lm_trainer::{Divergence, TrainConfig, TrainRecord};

    fn record(spec: &crate::cell_graph::CellSpec, vals: &[(f64, f64)], times: &[f64], diverged: Option<f64>) -> TrainRecord {
        TrainRecord {
            arch_hash: spec.canonical_hash().unwrap(),
            seed: 0,
            status: if diverged.is_some() { Status::Diverged } else { Status::Ok },
            num_params: 1,
            epochs: vals
                .iter()
                .zip(times)
                .enumerate()
                .map(|(i, (&(v, t), &w))| EpochMetrics {
                    epoch: i + 1,
                    wall_time_s: w,
                    train_log_ppl: v,
                    val_log_ppl: v,
                    test_log_ppl: t,
                })
                .collect(),
            diverged: diverged.map(|w| Divergence {
                epoch: vals.len() + 1,
                wall_time_s: w,
                reason: "x".into(),
            }),
        }
    }

    fn table() -> Arc<BenchTable> {
        let corpus = Corpus::from_texts("ab", "ab", "ab", Tokenization::Char).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let mut t = BenchTable::new(TableMeta::new(&corpus, &cfg, &[0]));
        let rnn = build_rnn();
        let lstm = build_lstm();
        let gru = build_gru();
        t.insert(rnn.clone(), record(&rnn, &[(3.0, 3.1), (2.8, 2.9), (2.7, 2.8)], &[1.0, 2.0, 3.0], None))
            .unwrap();
        t.insert(lstm.clone(), record(&lstm, &[(2.9, 3.0), (2.5, 2.6), (2.0, 2.1)], &[1.5, 1.5, 1.5], None))
            .unwrap();
        t.insert(gru.clone(), record(&gru, &[(3.5, 3.5)], &[1.0], Some(0.25))).unwrap();
        Arc::new(t)
    }

    fn h(s: crate::cell_graph::CellSpec) -> String {
        s.canonical_hash().unwrap()
    }

    #[test]
    fn checkpoint_continuation_charges_new_epochs_only() {
        let mut env = NasEnv::new(table(), 100.0, 0).unwrap();
        let rnn = h(build_rnn());
        assert_eq!(env.train_arch(&rnn, 1).unwrap().charged_s, 1.0);
        assert_eq!(env.train_arch(&rnn, 3).unwrap().charged_s, 5.0);
        assert_eq!(env.train_arch(&rnn, 3).unwrap().charged_s, 0.0);
        assert_eq!(env.train_arch(&rnn, 2).unwrap().charged_s, 0.0);
        assert_eq!(env.clock(), 6.0);
    }

    #[test]
    fn no_peeking() {
        let mut env = NasEnv::new(table(), 100.0, 0).unwrap();
        let lstm = h(build_lstm());
        assert!(matches!(env.get_metrics(&lstm, 1), Err(EnvError::MustTrainFirst { .. })));
        env.train_arch(&lstm, 2).unwrap();
        let m = env.get_metrics(&lstm, 2).unwrap();
        assert_eq!(&m, env.table().query(&lstm, 2, 0).unwrap());
        assert!(matches!(env.get_metrics(&lstm, 3), Err(EnvError::MustTrainFirst { .. })));
    }

    #[test]
    fn regret_reaches_zero_at_optimum() {
        let mut env = NasEnv::new(table(), 100.0, 0).unwrap();
        assert!((env.l_star() - 2.1).abs() < 1e-12);
        assert!(env.regret().is_err());
        env.train_arch(&h(build_rnn()), 3).unwrap();
        assert!((env.regret().unwrap() - 0.7).abs() < 1e-12);
        env.train_arch(&h(build_lstm()), 3).unwrap();
        assert_eq!(env.regret().unwrap(), 0.0);
        assert!(env.trace().is_non_increasing());
        let mut buf = Vec::new();
        env.trace().write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("time_s,regret\n"));
    }

    #[test]
    fn diverged_charged_once() {
        let mut env = NasEnv::new(table(), 100.0, 0).unwrap();
        let gru = h(build_gru());
        let r = env.train_arch(&gru, 3).unwrap();
        assert_eq!(r.status, Status::Diverged);
        assert_eq!(r.charged_s, 1.25);
        assert_eq!(env.train_arch(&gru, 3).unwrap().charged_s, 0.0);
        assert_eq!(env.train_arch(&gru, 1).unwrap().status, Status::Ok);
        assert!(env.incumbent().is_some_and(|i| i.arch_hash == gru && i.epoch == 1));
    }

    #[test]
    fn tie_break_prefers_earlier_epoch_then_hash() {
        let a = Incumbent {
            arch_hash: "b".into(),
            epoch: 2,
            val_log_ppl: 1.0,
            test_log_ppl: 1.0,
        };
        let earlier = Incumbent { epoch: 1, ..a.clone() };
        let lex = Incumbent {
            arch_hash: "a".into(),
            ..a.clone()
        };
        assert!(earlier.better_than(&a));
        assert!(lex.better_than(&a));
        assert!(!a.better_than(&a));
    }

    #[test]
    fn budget_blocks_new_work() {
        let mut env = NasEnv::new(table(), 1.0, 0).unwrap();
        let rnn = h(build_rnn());
        env.train_arch(&rnn, 1).unwrap();
        assert!(env.exhausted());
        assert!(matches!(env.train_arch(&rnn, 2), Err(EnvError::BudgetExhausted { .. })));
        // Replays of paid-for epochs stay free.
        assert_eq!(env.train_arch(&rnn, 1).unwrap().charged_s, 0.0);
    }

    #[test]
    fn overshooting_evaluation_is_dropped() {
        let mut env = NasEnv::new(table(), 2.0, 0).unwrap();
        let r = env.train_arch(&h(build_rnn()), 3).unwrap();
        assert_eq!(r.charged_s, 6.0);
        assert!(env.evaluations().is_empty());
        assert!(env.trace().points.is_empty());
    }
}
