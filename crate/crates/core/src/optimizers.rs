//! Search strategies run against a [`NasEnv`]: random search at two
//! fidelities, Hyperband, regularized evolution, tree-ensemble BO and TPE.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::embed;
use crate::bench_table::BenchTable;
use crate::generator::mutate;
use crate::lm_trainer::Status;
use crate::nas_env::{EnvError, Evaluation, NasEnv, RegretTrace};
use crate::surrogate::{Forest, ForestParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rs10,
    Rs50,
    Hb,
    Re,
    Bo10,
    Bo50,
    Tpe,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Rs10,
        Method::Rs50,
        Method::Hb,
        Method::Re,
        Method::Bo10,
        Method::Bo50,
        Method::Tpe,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Method::Rs10 => "rs10",
            Method::Rs50 => "rs50",
            Method::Hb => "hb",
            Method::Re => "re",
            Method::Bo10 => "bo10",
            Method::Bo50 => "bo50",
            Method::Tpe => "tpe",
        }
    }

    pub fn is_adaptive(self) -> bool {
        !matches!(self, Method::Rs10 | Method::Rs50)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.id() == s)
            .ok_or_else(|| format!("unknown method `{s}` (expected one of rs10, rs50, hb, re, bo10, bo50, tpe)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerParams {
    pub eta: usize,
    pub pop_size: usize,
    pub sample_size: usize,
    pub kappa: f64,
    pub init_points: usize,
    pub bo_trees: usize,
    pub gamma: f64,
    pub candidate_pool: usize,
    pub tpe_dim: usize,
    pub re_dim: usize,
}

impl Default for OptimizerParams {
    fn default() -> Self {
        OptimizerParams {
            eta: 3,
            pop_size: 20,
            sample_size: 5,
            kappa: 1.0,
            init_points: 10,
            bo_trees: 16,
            gamma: 0.25,
            candidate_pool: 64,
            tpe_dim: 10,
            re_dim: 50,
        }
    }
}

/// WL feature vectors of every table member, per dimension.
#[derive(Debug, Clone, Default)]
pub struct TableFeatures {
    by_dim: BTreeMap<usize, BTreeMap<String, Vec<f64>>>,
}

impl TableFeatures {
    pub fn new(table: &BenchTable, dims: &[usize]) -> TableFeatures {
        let mut by_dim = BTreeMap::new();
        for &d in dims {
            let feats = table
                .entries()
                .map(|(h, e)| (h.to_string(), embed(&e.spec, d).expect("table specs are valid").vector))
                .collect();
            by_dim.insert(d, feats);
        }
        TableFeatures { by_dim }
    }

    /// Features for all methods with default parameters.
    pub fn standard(table: &BenchTable, params: &OptimizerParams) -> TableFeatures {
        let mut dims = vec![10, 50, params.tpe_dim, params.re_dim];
        dims.sort_unstable();
        dims.dedup();
        TableFeatures::new(table, &dims)
    }

    pub fn get(&self, dim: usize) -> Option<&BTreeMap<String, Vec<f64>>> {
        self.by_dim.get(&dim)
    }

    /// Replaces every vector of dimension `dim` (used for ablations).
    pub fn set(&mut self, dim: usize, feats: BTreeMap<String, Vec<f64>>) {
        self.by_dim.insert(dim, feats);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerRun {
    pub method: Method,
    pub budget_s: f64,
    pub seed: u64,
    pub trace: RegretTrace,
    pub raw_trace: RegretTrace,
    pub evaluations: Vec<Evaluation>,
    pub charged_s: f64,
    pub l_star: f64,
    /// RE children replaced by a uniform sample.
    pub fallbacks: usize,
    pub warnings: Vec<String>,
}

impl OptimizerRun {
    /// Regret at the end of the run; infinite when nothing finished in budget.
    pub fn final_regret(&self) -> f64 {
        self.trace.last().unwrap_or(f64::INFINITY)
    }
}

/// Low-fidelity epoch count: one fifth of the horizon (10 of 50).
pub fn low_fidelity(horizon: usize) -> usize {
    ((horizon as f64 / 5.0).round() as usize).max(1)
}

/// Runs `method` for one trial; the session and the optimizer share `seed`.
pub fn run(
    method: Method,
    table: Arc<BenchTable>,
    features: &TableFeatures,
    budget_s: f64,
    seed: u64,
    params: &OptimizerParams,
) -> Result<OptimizerRun, EnvError> {
    let mut env = NasEnv::new(table, budget_s, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0b7e_5ea2_c4a1_1d00);
    let feats = |d: usize| {
        features
            .get(d)
            .ok_or_else(|| EnvError::Contract(format!("no {d}-dimensional features available")))
    };
    let horizon = env.horizon();
    let mut fallbacks = 0;
    match method {
        Method::Rs10 => random_search(&mut env, low_fidelity(horizon), &mut rng)?,
        Method::Rs50 => random_search(&mut env, horizon, &mut rng)?,
        Method::Hb => hyperband(&mut env, params.eta, &mut rng)?,
        Method::Re => {
            fallbacks = regularized_evolution(&mut env, params, feats(params.re_dim)?, params.re_dim, &mut rng)?
        }
        Method::Bo10 => bayes_opt(&mut env, params, feats(10)?, &mut rng)?,
        Method::Bo50 => bayes_opt(&mut env, params, feats(50)?, &mut rng)?,
        Method::Tpe => tpe(&mut env, params, feats(params.tpe_dim)?, &mut rng)?,
    }
    if env.evaluations().is_empty() {
        env.warn(format!("budget of {budget_s} s is smaller than one evaluation"));
    }
    Ok(OptimizerRun {
        method,
        budget_s,
        seed,
        trace: env.trace().clone(),
        raw_trace: env.raw_trace().clone(),
        evaluations: env.evaluations().to_vec(),
        charged_s: env.clock(),
        l_star: env.l_star(),
        fallbacks,
        warnings: env.warnings().to_vec(),
    })
}

/// Trains unless the budget is gone; `Ok(None)` means stop.
fn evaluate(env: &mut NasEnv, hash: &str, epochs: usize) -> Result<Option<f64>, EnvError> {
    if env.exhausted() {
        return Ok(None);
    }
    let r = env.train_arch(hash, epochs)?;
    Ok(Some(match (r.status, r.last()) {
        (Status::Ok, Some(m)) => m.val_log_ppl,
        _ => f64::INFINITY,
    }))
}

fn random_search(env: &mut NasEnv, epochs: usize, rng: &mut ChaCha8Rng) -> Result<(), EnvError> {
    let mut pool: Vec<String> = env.hashes().map(str::to_string).collect();
    pool.shuffle(rng);
    for h in pool {
        if evaluate(env, &h, epochs)?.is_none() {
            break;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bracket {
    pub s: usize,
    /// `(configs, epochs)` per rung.
    pub rungs: Vec<(usize, usize)>,
}

/// Hyperband brackets for maximum resource `r_max`; empty when `r_max < eta`.
pub fn hyperband_schedule(r_max: usize, eta: usize) -> Vec<Bracket> {
    assert!(eta >= 2, "eta must be at least 2");
    if r_max < eta {
        return Vec::new();
    }
    let mut s_max = 0;
    while eta.pow(s_max as u32 + 1) <= r_max {
        s_max += 1;
    }
    (0..=s_max)
        .rev()
        .map(|s| {
            let es = eta.pow(s as u32);
            let n = ((s_max + 1) * es).div_ceil(s + 1);
            let rungs = (0..=s)
                .map(|i| {
                    let n_i = (n / eta.pow(i as u32)).max(1);
                    let r_i = (r_max as f64 / eta.pow((s - i) as u32) as f64).round() as usize;
                    (n_i, r_i.max(1))
                })
                .collect();
            Bracket { s, rungs }
        })
        .collect()
}

const HB_IDLE_PASSES: usize = 100;

fn hyperband(env: &mut NasEnv, eta: usize, rng: &mut ChaCha8Rng) -> Result<(), EnvError> {
    if eta < 2 {
        return Err(EnvError::Contract(format!("eta must be at least 2, got {eta}")));
    }
    let horizon = env.horizon();
    let schedule = hyperband_schedule(horizon, eta);
    if schedule.is_empty() {
        env.warn(format!("horizon {horizon} < eta {eta}: running full-fidelity random search"));
        return random_search(env, horizon, rng);
    }
    let all: Vec<String> = env.hashes().map(str::to_string).collect();
    // Revisits cost nothing, so a table smaller than the budget would spin forever.
    let mut idle_passes = 0;
    while idle_passes < HB_IDLE_PASSES {
        let clock = env.clock();
        for bracket in &schedule {
            let mut configs = all.clone();
            configs.shuffle(rng);
            configs.truncate(bracket.rungs[0].0);
            for (i, &(n_i, r_i)) in bracket.rungs.iter().enumerate() {
                let mut scored = Vec::with_capacity(configs.len());
                for h in &configs {
                    match evaluate(env, h, r_i)? {
                        Some(v) => scored.push((v, h.clone())),
                        None => return Ok(()),
                    }
                }
                if i + 1 == bracket.rungs.len() {
                    break;
                }
                scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
                let keep = (n_i / eta).max(1);
                configs = scored.into_iter().take(keep).map(|(_, h)| h).collect();
            }
        }
        idle_passes = if env.clock() > clock { 0 } else { idle_passes + 1 };
    }
    Ok(())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn random_unevaluated(env: &NasEnv, rng: &mut ChaCha8Rng) -> Option<String> {
    env.unevaluated().choose(rng).map(|h| h.to_string())
}

fn regularized_evolution(
    env: &mut NasEnv,
    p: &OptimizerParams,
    feats: &BTreeMap<String, Vec<f64>>,
    dim: usize,
    rng: &mut ChaCha8Rng,
) -> Result<usize, EnvError> {
    if p.pop_size == 0 || p.sample_size == 0 || p.sample_size > p.pop_size {
        return Err(EnvError::Contract(format!(
            "need pop_size >= sample_size >= 1, got {} and {}",
            p.pop_size, p.sample_size
        )));
    }
    let horizon = env.horizon();
    let mut population: VecDeque<(String, f64)> = VecDeque::new();
    while population.len() < p.pop_size {
        let Some(h) = random_unevaluated(env, rng) else { return Ok(0) };
        match evaluate(env, &h, horizon)? {
            Some(v) => population.push_back((h, v)),
            None => return Ok(0),
        }
    }
    let mut fallbacks = 0;
    loop {
        let k = p.sample_size.min(population.len());
        let idx = rand::seq::index::sample(rng, population.len(), k);
        let parent = idx
            .iter()
            .map(|i| &population[i])
            .min_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)))
            .expect("sample is non-empty")
            .0
            .clone();
        let unevaluated = env.unevaluated();
        if unevaluated.is_empty() {
            return Ok(fallbacks);
        }
        let spec = env.table().spec(&parent).expect("population members are table entries");
        let child = mutate(spec, rng);
        let target = if child.changed {
            let cf = embed(&child.spec, dim).expect("mutated specs are valid").vector;
            unevaluated
                .iter()
                .min_by(|a, b| sq_dist(&feats[**a], &cf).total_cmp(&sq_dist(&feats[**b], &cf)))
                .map(|h| h.to_string())
        } else {
            None
        };
        let target = match target {
            Some(t) => t,
            None => {
                fallbacks += 1;
                unevaluated.choose(rng).expect("non-empty").to_string()
            }
        };
        match evaluate(env, &target, horizon)? {
            Some(v) => {
                population.push_back((target, v));
                population.pop_front();
            }
            None => return Ok(fallbacks),
        }
    }
}

/// Final validation values of evaluated architectures; diverged ones get
/// the worst finite value seen.
fn observations(
    history: &[(String, f64)],
    feats: &BTreeMap<String, Vec<f64>>,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let worst = history
        .iter()
        .map(|(_, v)| *v)
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    let fill = if worst.is_finite() { worst } else { 0.0 };
    history
        .iter()
        .map(|(h, v)| (feats[h].clone(), if v.is_finite() { *v } else { fill }))
        .unzip()
}

fn bayes_opt(
    env: &mut NasEnv,
    p: &OptimizerParams,
    feats: &BTreeMap<String, Vec<f64>>,
    rng: &mut ChaCha8Rng,
) -> Result<(), EnvError> {
    let horizon = env.horizon();
    let mut history: Vec<(String, f64)> = Vec::new();
    loop {
        let unevaluated = env.unevaluated();
        if unevaluated.is_empty() {
            return Ok(());
        }
        let next = if history.len() < p.init_points {
            unevaluated.choose(rng).expect("non-empty").to_string()
        } else {
            let (x, y) = observations(&history, feats);
            let forest = Forest::fit(
                &x,
                &y,
                &ForestParams {
                    n_trees: p.bo_trees,
                    seed: rng.gen(),
                    ..ForestParams::default()
                },
            );
            let lcb = |h: &str| {
                let (mu, sd) = forest.predict_dist(&feats[h]);
                mu - p.kappa * sd
            };
            unevaluated
                .iter()
                .map(|h| (lcb(h), *h))
                .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)))
                .expect("non-empty")
                .1
                .to_string()
        };
        match evaluate(env, &next, horizon)? {
            Some(v) => history.push((next, v)),
            None => return Ok(()),
        }
    }
}

/// Per-dimension Gaussian KDE with Scott bandwidth.
struct Kde {
    points: Vec<Vec<f64>>,
    bandwidth: Vec<f64>,
}

impl Kde {
    fn new(points: Vec<Vec<f64>>, floor: &[f64]) -> Kde {
        let n = points.len() as f64;
        let d = points[0].len();
        let bandwidth = (0..d)
            .map(|j| {
                let m = points.iter().map(|p| p[j]).sum::<f64>() / n;
                let var = points.iter().map(|p| (p[j] - m) * (p[j] - m)).sum::<f64>() / (n - 1.0).max(1.0);
                (var.sqrt() * n.powf(-0.2)).max(floor[j])
            })
            .collect();
        Kde { points, bandwidth }
    }

    /// Sum over dimensions of the log marginal density.
    fn log_density(&self, x: &[f64]) -> f64 {
        let n = self.points.len() as f64;
        (0..x.len())
            .map(|j| {
                let h = self.bandwidth[j];
                let logs: Vec<f64> = self
                    .points
                    .iter()
                    .map(|p| {
                        let z = (x[j] - p[j]) / h;
                        -0.5 * z * z - h.ln()
                    })
                    .collect();
                let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln() - n.ln()
            })
            .sum()
    }
}

/// TPE acquisition `log l(x) - log g(x)` for candidates, given history
/// sorted into good and bad sets at the `gamma` quantile. `None` when either
/// set has fewer than two points.
pub fn tpe_scores(
    history: &[(Vec<f64>, f64)],
    candidates: &[Vec<f64>],
    gamma: f64,
    floor: &[f64],
) -> Option<Vec<f64>> {
    let mut sorted: Vec<&(Vec<f64>, f64)> = history.iter().collect();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1));
    let n_good = ((gamma * sorted.len() as f64).ceil() as usize).min(sorted.len());
    let (good, bad) = sorted.split_at(n_good);
    if good.len() < 2 || bad.len() < 2 {
        return None;
    }
    let l = Kde::new(good.iter().map(|o| o.0.clone()).collect(), floor);
    let g = Kde::new(bad.iter().map(|o| o.0.clone()).collect(), floor);
    Some(candidates.iter().map(|c| l.log_density(c) - g.log_density(c)).collect())
}

fn tpe(
    env: &mut NasEnv,
    p: &OptimizerParams,
    feats: &BTreeMap<String, Vec<f64>>,
    rng: &mut ChaCha8Rng,
) -> Result<(), EnvError> {
    let horizon = env.horizon();
    let d = feats.values().next().map_or(0, Vec::len);
    // Bandwidth floor relative to each dimension's range over the table.
    let floor: Vec<f64> = (0..d)
        .map(|j| {
            let (lo, hi) = feats
                .values()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v[j]), hi.max(v[j])));
            ((hi - lo) * 1e-2).max(1e-9)
        })
        .collect();
    let mut history: Vec<(Vec<f64>, f64)> = Vec::new();
    loop {
        let mut pool: Vec<&str> = env.unevaluated();
        if pool.is_empty() {
            return Ok(());
        }
        pool.shuffle(rng);
        pool.truncate(p.candidate_pool.max(1));
        let cands: Vec<Vec<f64>> = pool.iter().map(|h| feats[*h].clone()).collect();
        let pick = match tpe_scores(&history, &cands, p.gamma, &floor) {
            Some(scores) => {
                let mut best = 0;
                for (i, s) in scores.iter().enumerate() {
                    if *s > scores[best] {
                        best = i;
                    }
                }
                best
            }
            None => 0,
        };
        let next = pool[pick].to_string();
        match evaluate(env, &next, horizon)? {
            Some(v) => history.push((feats[&next].clone(), v)),
            None => return Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub time_s: f64,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub trials: usize,
    pub mean_final_regret: f64,
    pub zero_regret_fraction: f64,
    pub final_regrets: Vec<f64>,
    pub curve: Vec<CurvePoint>,
    pub fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub budget_s: f64,
    pub summaries: Vec<MethodSummary>,
}

pub const CURVE_POINTS: usize = 100;

/// Mean regret over trials on an even grid in `(0, budget]`, restricted to
/// times at which every trial already has an incumbent.
pub fn mean_curve(runs: &[OptimizerRun], budget_s: f64) -> Vec<CurvePoint> {
    let mut out = Vec::new();
    for k in 1..=CURVE_POINTS {
        let t = budget_s * k as f64 / CURVE_POINTS as f64;
        let vals: Option<Vec<f64>> = runs.iter().map(|r| r.trace.at(t)).collect();
        let Some(vals) = vals else { continue };
        if vals.is_empty() {
            continue;
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = if vals.len() > 1 {
            vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        out.push(CurvePoint {
            time_s: t,
            mean,
            stderr: (var / n).sqrt(),
        });
    }
    out
}

pub fn summarize(method: Method, runs: &[OptimizerRun], budget_s: f64) -> MethodSummary {
    let finals: Vec<f64> = runs.iter().map(OptimizerRun::final_regret).collect();
    let n = finals.len().max(1) as f64;
    MethodSummary {
        method,
        trials: runs.len(),
        mean_final_regret: finals.iter().sum::<f64>() / n,
        zero_regret_fraction: finals.iter().filter(|&&r| r == 0.0).count() as f64 / n,
        final_regrets: finals,
        curve: mean_curve(runs, budget_s),
        fallbacks: runs.iter().map(|r| r.fallbacks).sum(),
    }
}

/// Runs every method for `trials` seeds (`base_seed + k`) in parallel.
pub fn compare(
    methods: &[Method],
    table: Arc<BenchTable>,
    features: &TableFeatures,
    budget_s: f64,
    trials: usize,
    base_seed: u64,
    params: &OptimizerParams,
) -> Result<(CompareReport, Vec<OptimizerRun>), EnvError> {
    let jobs: Vec<(Method, u64)> = methods
        .iter()
        .flat_map(|&m| (0..trials as u64).map(move |k| (m, base_seed + k)))
        .collect();
    let runs: Vec<OptimizerRun> = jobs
        .par_iter()
        .map(|&(m, s)| run(m, Arc::clone(&table), features, budget_s, s, params))
        .collect::<Result<_, _>>()?;
    let summaries = methods
        .iter()
        .map(|&m| {
            let mine: Vec<OptimizerRun> = runs.iter().filter(|r| r.method == m).cloned().collect();
            summarize(m, &mine, budget_s)
        })
        .collect();
    Ok((CompareReport { budget_s, summaries }, runs))
}

impl CompareReport {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    pub fn write_mean_regret_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "time,method,mean,stderr")?;
        for s in &self.summaries {
            for p in &s.curve {
                writeln!(w, "{},{},{},{}", p.time_s, s.method, p.mean, p.stderr)?;
            }
        }
        Ok(())
    }

    pub fn write_final_cdf_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "method,final_regret,cdf")?;
        for s in &self.summaries {
            let mut f = s.final_regrets.clone();
            f.sort_by(f64::total_cmp);
            let n = f.len() as f64;
            for (i, r) in f.iter().enumerate() {
                writeln!(w, "{},{},{}", s.method, r, (i + 1) as f64 / n)?;
            }
        }
        Ok(())
    }

    pub fn write_summary_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "method,trials,mean_final_regret,zero_regret_fraction,fallbacks")?;
        for s in &self.summaries {
            writeln!(
                w,
                "{},{},{},{},{}",
                s.method, s.trials, s.mean_final_regret, s.zero_regret_fraction, s.fallbacks
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_matches_published_formula() {
        let sch = hyperband_schedule(27, 3);
        assert_eq!(sch.len(), 4);
        assert_eq!(sch[0].s, 3);
        assert_eq!(sch[0].rungs, vec![(27, 1), (9, 3), (3, 9), (1, 27)]);
        assert_eq!(sch[1].rungs, vec![(12, 3), (4, 9), (1, 27)]);
        assert_eq!(sch[2].rungs, vec![(6, 9), (2, 27)]);
        assert_eq!(sch[3].rungs, vec![(4, 27)]);
        assert!(hyperband_schedule(2, 3).is_empty());
    }

    #[test]
    fn schedule_on_desk_horizon() {
        let sch = hyperband_schedule(20, 3);
        assert_eq!(sch[0].s, 2);
        assert_eq!(sch[0].rungs, vec![(9, 2), (3, 7), (1, 20)]);
        assert!(sch.iter().all(|b| b.rungs.last().unwrap().1 == 20));
    }

    #[test]
    fn low_fidelity_is_one_fifth() {
        assert_eq!(low_fidelity(50), 10);
        assert_eq!(low_fidelity(20), 4);
        assert_eq!(low_fidelity(3), 1);
    }

    #[test]
    fn method_ids_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.id().parse::<Method>().unwrap(), m);
        }
        assert!("smac".parse::<Method>().is_err());
    }

    #[test]
    fn tpe_scores_translation_invariant() {
        let hist: Vec<(Vec<f64>, f64)> = (0..12)
            .map(|i| (vec![i as f64 * 0.3, ((i * 7) % 5) as f64], i as f64))
            .collect();
        let cands = vec![vec![0.5, 1.0], vec![2.0, 3.0], vec![3.3, 0.0]];
        let floor = [0.03, 0.04];
        let a = tpe_scores(&hist, &cands, 0.25, &floor).unwrap();
        let shift = |v: &Vec<f64>| vec![v[0] + 100.0, v[1] - 7.0];
        let hist2: Vec<_> = hist.iter().map(|(x, y)| (shift(x), *y)).collect();
        let cands2: Vec<_> = cands.iter().map(shift).collect();
        let b = tpe_scores(&hist2, &cands2, 0.25, &floor).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9);
        }
        assert!(tpe_scores(&hist, &cands, 1.0, &floor).is_none());
    }
}
