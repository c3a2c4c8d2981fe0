//! Graph features, edit-distance bounds, flaw classification and rank statistics.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::bench_table::BenchTable;
use crate::cell_graph::CellSpec;
use crate::corpus::Vocab;
use crate::lm_trainer::Status;
use crate::surrogate::{Forest, ForestParams};

pub const WL_ITERATIONS: usize = 3;
pub const MIN_PER_CLASS: usize = 20;

const BUNDLED_PAIRS: &str = include_str!("../data/wordsim_chars.tsv");

#[derive(Debug, thiserror::Error)]
pub enum AnalyticsError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Contract(String),
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFeatures {
    pub arch_hash: String,
    pub vector: Vec<f64>,
}

/// Weisfeiler-Lehman rooted-subtree features hashed into `dim` signed buckets, L2-normalized.
pub fn embed(spec: &CellSpec, dim: usize) -> Result<GraphFeatures, AnalyticsError> {
    if dim < 2 {
        return Err(AnalyticsError::Config(format!("embedding dimension must be at least 2, got {dim}")));
    }
    let arch_hash = spec
        .canonical_hash()
        .map_err(|e| AnalyticsError::Contract(e.to_string()))?;
    let mut v = vec![0.0; dim];
    for round in 0..=WL_ITERATIONS {
        for c in spec.subtree_colors(round) {
            // Mix in the round so equal colors at different depths land apart.
            let h = c ^ (round as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
            let h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[(h % dim as u64) as usize] += sign;
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    Ok(GraphFeatures { arch_hash, vector: v })
}

pub fn write_features_csv(mut w: impl Write, feats: &[GraphFeatures]) -> std::io::Result<()> {
    let dim = feats.first().map_or(0, |f| f.vector.len());
    let header: Vec<String> = std::iter::once("hash".to_string())
        .chain((0..dim).map(|i| format!("f{i}")))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for f in feats {
        let row: Vec<String> = f.vector.iter().map(|x| x.to_string()).collect();
        writeln!(w, "{},{}", f.arch_hash, row.join(","))?;
    }
    Ok(())
}

/// Node-labeled directed graph used for edit distances.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledGraph {
    pub labels: Vec<String>,
    pub edges: HashSet<(usize, usize)>,
}

impl LabeledGraph {
    pub fn from_spec(spec: &CellSpec) -> LabeledGraph {
        let index = spec.index_of();
        let mut targets: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (slot, id) in &spec.new_hidden {
            targets.entry(id.as_str()).or_default().push(*slot);
        }
        let labels = spec
            .nodes
            .iter()
            .map(|n| match targets.get(n.id.as_str()) {
                Some(t) => format!("{}>{t:?}", n.op),
                None => n.op.to_string(),
            })
            .collect();
        let mut edges = HashSet::new();
        for (i, n) in spec.nodes.iter().enumerate() {
            for id in &n.inputs {
                if let Some(&j) = index.get(id.as_str()) {
                    edges.insert((j, i));
                }
            }
        }
        LabeledGraph { labels, edges }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Edit cost induced by mapping node `i` of `a` to `map[i]` of `b`
/// (`None` deletes it); unmapped nodes of `b` are inserted. Unit costs.
pub fn mapping_cost(a: &LabeledGraph, b: &LabeledGraph, map: &[Option<usize>]) -> usize {
    let mut used = vec![false; b.len()];
    let mut cost = 0;
    for (i, m) in map.iter().enumerate() {
        match m {
            Some(j) => {
                used[*j] = true;
                cost += (a.labels[i] != b.labels[*j]) as usize;
            }
            None => cost += 1,
        }
    }
    cost += used.iter().filter(|u| !**u).count();
    let mut covered = 0;
    for &(u, v) in &a.edges {
        match (map[u], map[v]) {
            (Some(x), Some(y)) if b.edges.contains(&(x, y)) => covered += 1,
            _ => cost += 1,
        }
    }
    cost + b.edges.len() - covered
}

fn greedy_bound(a: &LabeledGraph, b: &LabeledGraph, wa: &[Vec<u64>], wb: &[Vec<u64>]) -> usize {
    // Pair cost: label mismatch dominates, then disagreement in WL colors.
    let mut pairs: Vec<(usize, usize, usize)> = Vec::new();
    for i in 0..a.len() {
        for (j, lb) in b.labels.iter().enumerate() {
            let label = (a.labels[i] != *lb) as usize * 10;
            let wl = (1..wa.len()).filter(|&r| wa[r][i] != wb[r][j]).count();
            pairs.push((label + wl, i, j));
        }
    }
    pairs.sort_unstable();
    let mut map = vec![None; a.len()];
    let mut used = vec![false; b.len()];
    for (_, i, j) in pairs {
        if map[i].is_none() && !used[j] {
            map[i] = Some(j);
            used[j] = true;
        }
    }
    let mut best = mapping_cost(a, b, &map);
    // Local search: swap targets, retarget to a free node, or delete.
    loop {
        let mut improved = false;
        for i in 0..a.len() {
            for k in i + 1..a.len() {
                map.swap(i, k);
                let c = mapping_cost(a, b, &map);
                if c < best {
                    best = c;
                    improved = true;
                } else {
                    map.swap(i, k);
                }
            }
            let free: Vec<usize> = (0..b.len()).filter(|j| !map.contains(&Some(*j))).collect();
            for cand in free.into_iter().map(Some).chain(std::iter::once(None)) {
                let old = map[i];
                if old == cand {
                    continue;
                }
                map[i] = cand;
                let c = mapping_cost(a, b, &map);
                if c < best {
                    best = c;
                    improved = true;
                } else {
                    map[i] = old;
                }
            }
        }
        if !improved {
            return best;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GedBound {
    pub hash_a: String,
    pub hash_b: String,
    pub upper_bound: usize,
}

fn wl_table(spec: &CellSpec) -> Vec<Vec<u64>> {
    (0..=WL_ITERATIONS).map(|r| spec.wl_colors(r)).collect()
}

/// Upper bound on the graph edit distance between two cells, computed from
/// a greedy node assignment in both directions.
pub fn ged_upper_bound(a: &CellSpec, b: &CellSpec) -> GedBound {
    let (ga, gb) = (LabeledGraph::from_spec(a), LabeledGraph::from_spec(b));
    let (wa, wb) = (wl_table(a), wl_table(b));
    let forward = greedy_bound(&ga, &gb, &wa, &wb);
    let backward = greedy_bound(&gb, &ga, &wb, &wa);
    let hash = |s: &CellSpec| s.canonical_hash().unwrap_or_else(|_| s.structural_hash());
    GedBound {
        hash_a: hash(a),
        hash_b: hash(b),
        upper_bound: forward.min(backward),
    }
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "pearson needs equal-length inputs");
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson(&average_ranks(x), &average_ranks(y))
}

/// ROC AUC of `scores` for the positive class via the Mann-Whitney statistic.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let ranks = average_ranks(scores);
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Some(u / (pos * neg) as f64)
}

pub fn r2_score(pred: &[f64], truth: &[f64]) -> f64 {
    let n = truth.len() as f64;
    let m = truth.iter().sum::<f64>() / n;
    let ss_tot: f64 = truth.iter().map(|t| (t - m) * (t - m)).sum();
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    if ss_tot == 0.0 {
        if ss_res == 0.0 { 1.0 } else { f64::NEG_INFINITY }
    } else {
        1.0 - ss_res / ss_tot
    }
}

fn forest_params(seed: u64) -> ForestParams {
    ForestParams {
        n_trees: 64,
        max_depth: 6,
        min_leaf: 2,
        bootstrap: true,
        max_features: None,
        seed,
    }
}

/// Trains the tree ensemble on a stratified half and returns the held-out
/// ROC AUC for predicting `labels` (true = flawed).
pub fn classify_flawed(features: &[Vec<f64>], labels: &[bool], seed: u64) -> Result<f64, AnalyticsError> {
    if features.len() != labels.len() {
        return Err(AnalyticsError::Contract("features and labels differ in length".into()));
    }
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(AnalyticsError::Contract("labels contain a single class".into()));
    }
    if pos.len() < MIN_PER_CLASS || neg.len() < MIN_PER_CLASS {
        return Err(AnalyticsError::Contract(format!(
            "need at least {MIN_PER_CLASS} samples per class, got {} flawed and {} ok",
            pos.len(),
            neg.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for mut class in [pos, neg] {
        class.shuffle(&mut rng);
        let half = class.len() / 2;
        train.extend_from_slice(&class[..half]);
        test.extend_from_slice(&class[half..]);
    }
    let x: Vec<Vec<f64>> = train.iter().map(|&i| features[i].clone()).collect();
    let y: Vec<f64> = train.iter().map(|&i| labels[i] as u8 as f64).collect();
    let forest = Forest::fit(&x, &y, &forest_params(seed));
    let scores: Vec<f64> = test.iter().map(|&i| forest.predict(&features[i])).collect();
    let truth: Vec<bool> = test.iter().map(|&i| labels[i]).collect();
    Ok(roc_auc(&scores, &truth).expect("both classes are in the held-out half"))
}

/// Held-out R² of the tree ensemble regressing `targets` on a random half.
pub fn regress_logppl(features: &[Vec<f64>], targets: &[f64], seed: u64) -> Result<f64, AnalyticsError> {
    if features.len() != targets.len() || targets.len() < 4 {
        return Err(AnalyticsError::Contract("need at least 4 matching samples".into()));
    }
    let mut idx: Vec<usize> = (0..targets.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train, test) = idx.split_at(idx.len() / 2);
    let x: Vec<Vec<f64>> = train.iter().map(|&i| features[i].clone()).collect();
    let y: Vec<f64> = train.iter().map(|&i| targets[i]).collect();
    let forest = Forest::fit(&x, &y, &forest_params(seed));
    let pred: Vec<f64> = test.iter().map(|&i| forest.predict(&features[i])).collect();
    let truth: Vec<f64> = test.iter().map(|&i| targets[i]).collect();
    Ok(r2_score(&pred, &truth))
}

/// Validation log-perplexity per architecture at `epoch` (final epoch when
/// `None`), using the smallest stored seed; diverged runs are skipped.
pub fn table_scores(table: &BenchTable, epoch: Option<usize>) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for (hash, entry) in table.entries() {
        let Some(rec) = entry.records.values().next() else { continue };
        if rec.status != Status::Ok {
            continue;
        }
        let m = match epoch {
            Some(e) => rec.epochs.get(e.wrapping_sub(1)),
            None => rec.epochs.last(),
        };
        if let Some(m) = m {
            out.insert(hash.to_string(), m.val_log_ppl);
        }
    }
    out
}

/// Spearman correlation over the architectures both score maps share.
pub fn rank_correlation(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> Result<f64, AnalyticsError> {
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (k, v) in a {
        if let Some(w) = b.get(k) {
            xs.push(*v);
            ys.push(*w);
        }
    }
    if xs.len() < 3 {
        return Err(AnalyticsError::Contract(format!(
            "rank correlation needs at least 3 shared architectures, got {}",
            xs.len()
        )));
    }
    spearman(&xs, &ys).ok_or_else(|| AnalyticsError::Contract("one ranking is constant".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordPair {
    pub a: String,
    pub b: String,
    pub score: f64,
}

pub fn parse_pairs(text: &str, origin: &str) -> Result<Vec<WordPair>, AnalyticsError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let err = |msg: String| AnalyticsError::Parse {
            path: origin.to_string(),
            line: i + 1,
            msg,
        };
        if cols.len() != 3 {
            return Err(err(format!("expected 3 tab-separated columns, got {}", cols.len())));
        }
        let score = cols[2]
            .trim()
            .parse()
            .map_err(|e| err(format!("bad score `{}`: {e}", cols[2])))?;
        out.push(WordPair {
            a: cols[0].to_string(),
            b: cols[1].to_string(),
            score,
        });
    }
    Ok(out)
}

pub fn load_pairs(path: &Path) -> Result<Vec<WordPair>, AnalyticsError> {
    let text = std::fs::read_to_string(path)?;
    parse_pairs(&text, &path.display().to_string())
}

/// Character pairs with synthetic similarity judgments over the bundled vocabulary.
pub fn bundled_pairs() -> Vec<WordPair> {
    parse_pairs(BUNDLED_PAIRS, "bundled").expect("bundled pairs parse")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordSimResult {
    pub spearman: Option<f64>,
    pub pearson: Option<f64>,
    pub coverage: f64,
    pub n_pairs: usize,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 { 0.0 } else { dot / (na * nb) }
}

/// Correlates embedding-row cosines with human (or synthetic) judgments.
pub fn wordsim_eval(embedding: &Tensor, vocab: &Vocab, pairs: &[WordPair]) -> WordSimResult {
    let (mut sims, mut judged) = (Vec::new(), Vec::new());
    for p in pairs {
        if let (Some(i), Some(j)) = (vocab.id(&p.a), vocab.id(&p.b)) {
            sims.push(cosine(embedding.row(i), embedding.row(j)));
            judged.push(p.score);
        }
    }
    let coverage = if pairs.is_empty() { 0.0 } else { sims.len() as f64 / pairs.len() as f64 };
    WordSimResult {
        spearman: spearman(&sims, &judged),
        pearson: pearson(&sims, &judged),
        coverage,
        n_pairs: sims.len(),
    }
}
