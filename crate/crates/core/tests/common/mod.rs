//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use recur_nas_core::bench_table::{BenchTable, TableMeta};
use recur_nas_core::cell_graph::{CellSpec, Node};
use recur_nas_core::corpus::Corpus;
use recur_nas_core::generator::{population, GenParams};
use recur_nas_core::lm_trainer::{Divergence, EpochMetrics, Model, Status, TrainConfig, TrainRecord};

/// Same graph with shuffled node order and fresh ids.
pub fn relabel(spec: &CellSpec, seed: u64) -> CellSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..spec.nodes.len()).collect();
    perm.shuffle(&mut rng);
    let salt: u32 = rng.gen();
    let rename = |id: &str| {
        let i = spec.nodes.iter().position(|n| n.id == id).expect("known id");
        format!("v{salt:x}_{}", perm[i])
    };
    let mut nodes: Vec<(usize, Node)> = spec
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let node = Node {
                id: rename(&n.id),
                op: n.op,
                inputs: n.inputs.iter().map(|s| rename(s)).collect(),
            };
            (perm[i], node)
        })
        .collect();
    nodes.sort_by_key(|(k, _)| *k);
    CellSpec {
        nodes: nodes.into_iter().map(|(_, n)| n).collect(),
        new_hidden: spec.new_hidden.iter().map(|(s, id)| (*s, rename(id))).collect(),
    }
}

/// Fast training setup for tests that need real runs.
pub fn tiny_config() -> TrainConfig {
    TrainConfig {
        emb_dim: 8,
        nhid: 8,
        n_layers: 1,
        batch_size: 4,
        eval_batch_size: 4,
        bptt_len: 8,
        epochs: 3,
        synthetic_time: true,
        ..TrainConfig::default()
    }
}

pub fn tiny_corpus() -> Corpus {
    Corpus::bundled().truncated(600, 200, 200)
}

/// A table with hand-written learning curves, no training involved.
/// `curve(arch, epoch)` gives `(val, test)`; `None` marks divergence at
/// that epoch. Every epoch costs `epoch_cost(arch)` seconds.
pub fn synthetic_table(
    n_archs: usize,
    horizon: usize,
    curve: impl Fn(usize, usize) -> Option<(f64, f64)>,
    epoch_cost: impl Fn(usize) -> f64,
) -> BenchTable {
    let cfg = TrainConfig {
        epochs: horizon,
        ..TrainConfig::default()
    };
    let corpus = tiny_corpus();
    let mut table = BenchTable::new(TableMeta::new(&corpus, &cfg, &[0]));
    let specs = population(n_archs, &GenParams::new(12, 1, 7)).expect("population");
    for (a, spec) in specs.into_iter().enumerate() {
        let hash = spec.canonical_hash().unwrap();
        let mut epochs = Vec::new();
        let mut diverged = None;
        for e in 1..=horizon {
            match curve(a, e) {
                Some((val, test)) => epochs.push(EpochMetrics {
                    epoch: e,
                    wall_time_s: epoch_cost(a),
                    train_log_ppl: val,
                    val_log_ppl: val,
                    test_log_ppl: test,
                }),
                None => {
                    diverged = Some(Divergence {
                        epoch: e,
                        wall_time_s: epoch_cost(a) / 2.0,
                        reason: "synthetic".into(),
                    });
                    break;
                }
            }
        }
        let record = TrainRecord {
            arch_hash: hash,
            seed: 0,
            status: if diverged.is_some() { Status::Diverged } else { Status::Ok },
            num_params: 1,
            epochs,
            diverged,
        };
        table.insert(spec, record).expect("insert");
    }
    table
}

/// Decreasing curves with per-architecture level; every fifth one diverges at epoch 3.
pub fn standard_synthetic(n_archs: usize, horizon: usize) -> BenchTable {
    synthetic_table(
        n_archs,
        horizon,
        |a, e| {
            if a % 5 == 4 && e >= 3 {
                return None;
            }
            let level = 2.0 + ((a * 37) % 101) as f64 / 50.0;
            let v = level + 1.0 / e as f64;
            Some((v, v + 0.01 * ((a * 13) % 7) as f64))
        },
        |a| 1.0 + (a % 3) as f64,
    )
}

pub fn write_then_load(table: &BenchTable, dir: &Path) -> BenchTable {
    let p = dir.join("t.jsonl");
    table.save(&p).unwrap();
    BenchTable::load(&p).unwrap()
}

/// Gradients below this magnitude are compared absolutely.
const REL_FLOOR: f64 = 1e-4;

/// Worst relative error between analytic and central-difference gradients
/// over up to `coords` random parameter coordinates.
pub fn worst_error(model: &mut Model, tokens: &[usize], coords: usize, rng: &mut ChaCha8Rng) -> f64 {
    let (_, grads) = model.loss_and_grads(tokens).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..coords {
        let p = rng.gen_range(0..grads.len());
        let k = rng.gen_range(0..grads[p].numel());
        let orig = model.params()[p].data()[k];
        model.params_mut()[p].data_mut()[k] = orig + h;
        let up = model.loss_and_grads(tokens).unwrap().0;
        model.params_mut()[p].data_mut()[k] = orig - h;
        let down = model.loss_and_grads(tokens).unwrap().0;
        model.params_mut()[p].data_mut()[k] = orig;
        let numeric = (up - down) / (2.0 * h);
        let analytic = grads[p].data()[k];
        let scale = numeric.abs().max(analytic.abs()).max(REL_FLOOR);
        worst = worst.max((numeric - analytic).abs() / scale);
    }
    worst
}

