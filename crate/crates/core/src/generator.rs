//! Random cell generation, redundancy pruning and structural mutation.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cell_graph::{CellError, CellSpec, Node, OpKind, COMPUTE_OPS, MAX_HIDDEN, MAX_NODES};

/// Attempts per `generate` call before giving up.
pub const GENERATE_RETRY_CAP: usize = 100;
/// Attempts per `mutate` call before returning the parent unchanged.
pub const MUTATE_RETRY_CAP: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct GenParams {
    pub max_nodes: usize,
    pub n_hidden_slots: usize,
    /// Sampling weight per computation op; must sum to 1.
    pub op_weights: Vec<(OpKind, f64)>,
    pub seed: u64,
}

impl GenParams {
    pub fn new(max_nodes: usize, n_hidden_slots: usize, seed: u64) -> Self {
        GenParams {
            max_nodes,
            n_hidden_slots,
            op_weights: uniform_op_weights(),
            seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        GenParams { seed, ..self.clone() }
    }

    pub fn check(&self) -> Result<(), GenerateError> {
        let bad = |msg: String| Err(GenerateError::Params(msg));
        if !(1..=MAX_HIDDEN).contains(&self.n_hidden_slots) {
            return bad(format!("n_hidden_slots must be in 1..={MAX_HIDDEN}"));
        }
        if self.max_nodes > MAX_NODES {
            return bad(format!("max_nodes must be <= {MAX_NODES}"));
        }
        // One input, k hidden sources and k distinct targets.
        if self.max_nodes < 1 + 2 * self.n_hidden_slots {
            return bad(format!(
                "max_nodes {} too small for {} hidden slots",
                self.max_nodes, self.n_hidden_slots
            ));
        }
        let mut total = 0.0;
        for (op, w) in &self.op_weights {
            if op.is_source() {
                return bad(format!("op_weights may not include source op `{op}`"));
            }
            if !(w.is_finite() && *w >= 0.0) {
                return bad(format!("weight for `{op}` must be finite and >= 0"));
            }
            total += w;
        }
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("op_weights sum to {total}, expected 1"));
        }
        Ok(())
    }
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams::new(MAX_NODES, 2, 0)
    }
}

pub fn uniform_op_weights() -> Vec<(OpKind, f64)> {
    let w = 1.0 / COMPUTE_OPS.len() as f64;
    COMPUTE_OPS.iter().map(|&op| (op, w)).collect()
}

#[derive(Debug, thiserror::Error)]
pub enum GenerateError {
    #[error("invalid generator parameters: {0}")]
    Params(String),
    #[error("no acceptable architecture after {attempts} attempts")]
    Exhausted { attempts: usize },
}

/// Draws one random cell; a pure function of `params` (seed included).
pub fn generate(params: &GenParams) -> Result<CellSpec, GenerateError> {
    params.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    for _ in 0..GENERATE_RETRY_CAP {
        if let Some(spec) = attempt(params, &mut rng) {
            return Ok(spec);
        }
    }
    Err(GenerateError::Exhausted {
        attempts: GENERATE_RETRY_CAP,
    })
}

fn attempt(params: &GenParams, rng: &mut impl Rng) -> Option<CellSpec> {
    let k = params.n_hidden_slots;
    let mut nodes = vec![Node::new("x", OpKind::InputToken, &[])];
    for slot in 0..k {
        nodes.push(Node::new(format!("h{slot}"), OpKind::HiddenIn { slot }, &[]));
    }
    let n_sources = nodes.len();
    let n_compute = rng.gen_range(k..=params.max_nodes - n_sources);

    let ops: Vec<OpKind> = params.op_weights.iter().map(|(op, _)| *op).collect();
    let dist = WeightedIndex::new(params.op_weights.iter().map(|(_, w)| *w)).ok()?;
    for i in 0..n_compute {
        let existing = nodes.len();
        let (op, arity) = sample_op(&ops, &dist, existing, rng)?;
        let inputs = pick_inputs(&nodes, arity, rng);
        nodes.push(Node {
            id: format!("n{}", i + 1),
            op,
            inputs,
        });
    }

    let hidden_ids: HashSet<&str> = nodes[1..n_sources].iter().map(|n| n.id.as_str()).collect();
    let mut candidates: Vec<usize> = (n_sources..nodes.len())
        .filter(|&i| !nodes[i].inputs.iter().any(|id| hidden_ids.contains(id.as_str())))
        .collect();
    if candidates.len() < k {
        return None;
    }
    candidates.shuffle(rng);
    let new_hidden: BTreeMap<usize, String> = (0..k)
        .map(|slot| (slot, nodes[candidates[slot]].id.clone()))
        .collect();

    let spec = prune_redundant(&CellSpec { nodes, new_hidden }).ok()?;
    let has_sources = spec.nodes.iter().filter(|n| n.op.is_source()).count() == n_sources;
    (has_sources && spec.is_valid()).then_some(spec)
}

fn sample_op(
    ops: &[OpKind],
    dist: &WeightedIndex<f64>,
    existing: usize,
    rng: &mut impl Rng,
) -> Option<(OpKind, usize)> {
    for _ in 0..64 {
        let op = ops[dist.sample(rng)];
        let arity = op.arity();
        if *arity.start() > existing {
            continue;
        }
        let hi = (*arity.end()).min(existing);
        return Some((op, rng.gen_range(*arity.start()..=hi)));
    }
    None
}

/// Distinct inputs drawn uniformly from `nodes`, in sampled order.
fn pick_inputs(nodes: &[Node], arity: usize, rng: &mut impl Rng) -> Vec<String> {
    index::sample(rng, nodes.len(), arity)
        .into_iter()
        .map(|j| nodes[j].id.clone())
        .collect()
}

/// Keeps only nodes that lead to some new hidden state.
pub fn prune_redundant(spec: &CellSpec) -> Result<CellSpec, CellError> {
    for target in spec.new_hidden.values() {
        if spec.node(target).is_none() {
            return Err(CellError::MissingTarget(target.clone()));
        }
    }
    let keep = spec.backward_reachable();
    Ok(CellSpec {
        nodes: spec
            .nodes
            .iter()
            .enumerate()
            .filter(|(i, _)| keep.contains(i))
            .map(|(_, n)| n.clone())
            .collect(),
        new_hidden: spec.new_hidden.clone(),
    })
}

/// Result of [`mutate`]; `changed` is false when the retry cap was hit.
#[derive(Debug, Clone)]
pub struct Mutation {
    pub spec: CellSpec,
    pub changed: bool,
    pub attempts: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Edit {
    Rewire,
    ReplaceOp,
    AddNode,
    DeleteNode,
}

impl Edit {
    pub const ALL: [Edit; 4] = [Edit::Rewire, Edit::ReplaceOp, Edit::AddNode, Edit::DeleteNode];
}

/// Applies one random structural edit, retrying until the child is valid and
/// structurally different from the parent.
pub fn mutate(spec: &CellSpec, rng: &mut impl Rng) -> Mutation {
    let parent_hash = spec.structural_hash();
    for attempt in 1..=MUTATE_RETRY_CAP {
        let edit = *Edit::ALL.choose(rng).unwrap();
        let Some(child) = apply_edit(spec, edit, rng) else {
            continue;
        };
        let Ok(child) = prune_redundant(&child) else {
            continue;
        };
        if child.is_valid() && child.structural_hash() != parent_hash {
            return Mutation {
                spec: child,
                changed: true,
                attempts: attempt,
            };
        }
    }
    Mutation {
        spec: spec.clone(),
        changed: false,
        attempts: MUTATE_RETRY_CAP,
    }
}

/// Applies `edit` without validating the result.
pub fn apply_edit(spec: &CellSpec, edit: Edit, rng: &mut impl Rng) -> Option<CellSpec> {
    let compute: Vec<usize> = (0..spec.nodes.len())
        .filter(|&i| !spec.nodes[i].op.is_source())
        .collect();
    let mut child = spec.clone();
    match edit {
        Edit::Rewire => {
            let &v = compute.choose(rng)?;
            let pos = rng.gen_range(0..child.nodes[v].inputs.len());
            let banned = descendants(spec, v);
            let current: HashSet<&str> = spec.nodes[v].inputs.iter().map(String::as_str).collect();
            let options: Vec<&Node> = spec
                .nodes
                .iter()
                .enumerate()
                .filter(|(i, n)| !banned.contains(i) && !current.contains(n.id.as_str()))
                .map(|(_, n)| n)
                .collect();
            let new_input = options.choose(rng)?.id.clone();
            child.nodes[v].inputs[pos] = new_input;
        }
        Edit::ReplaceOp => {
            let &v = compute.choose(rng)?;
            let fan_in = spec.nodes[v].inputs.len();
            let options: Vec<OpKind> = COMPUTE_OPS
                .iter()
                .copied()
                .filter(|op| *op != spec.nodes[v].op && op.arity().contains(&fan_in))
                .collect();
            child.nodes[v].op = *options.choose(rng)?;
        }
        Edit::AddNode => {
            let op = *COMPUTE_OPS.choose(rng).unwrap();
            let arity = op.arity();
            if *arity.start() > spec.nodes.len() {
                return None;
            }
            let fan_in = rng.gen_range(*arity.start()..=(*arity.end()).min(spec.nodes.len()));
            let inputs = pick_inputs(&spec.nodes, fan_in, rng);
            let index = spec.index_of();
            // The consumer must not feed any of the new node's inputs.
            let mut blocked = BTreeSet::new();
            for id in &inputs {
                blocked.extend(upstream_of(spec, index[id.as_str()]));
            }
            let consumers: Vec<usize> = compute
                .iter()
                .copied()
                .filter(|c| !blocked.contains(c))
                .collect();
            let &c = consumers.choose(rng)?;
            let id = fresh_id(spec);
            let pos = rng.gen_range(0..child.nodes[c].inputs.len());
            child.nodes[c].inputs[pos] = id.clone();
            child.nodes.push(Node { id, op, inputs });
        }
        Edit::DeleteNode => {
            let &v = compute.choose(rng)?;
            let victim = spec.nodes[v].clone();
            for node in child.nodes.iter_mut() {
                for inp in node.inputs.iter_mut() {
                    if *inp == victim.id {
                        *inp = victim.inputs.choose(rng)?.clone();
                    }
                }
            }
            for target in child.new_hidden.values_mut() {
                if *target == victim.id {
                    *target = victim.inputs.choose(rng)?.clone();
                }
            }
            child.nodes.retain(|n| n.id != victim.id);
        }
    }
    Some(child)
}

/// Nodes that are `v` itself or (transitively) consume `v`.
fn descendants(spec: &CellSpec, v: usize) -> BTreeSet<usize> {
    let mut seen = BTreeSet::from([v]);
    let mut frontier = vec![v];
    while let Some(i) = frontier.pop() {
        let id = &spec.nodes[i].id;
        for (j, n) in spec.nodes.iter().enumerate() {
            if n.inputs.contains(id) && seen.insert(j) {
                frontier.push(j);
            }
        }
    }
    seen
}

/// `v` and every node it transitively reads.
fn upstream_of(spec: &CellSpec, v: usize) -> BTreeSet<usize> {
    let index = spec.index_of();
    let mut seen = BTreeSet::from([v]);
    let mut frontier = vec![v];
    while let Some(i) = frontier.pop() {
        for inp in &spec.nodes[i].inputs {
            if let Some(&j) = index.get(inp.as_str()) {
                if seen.insert(j) {
                    frontier.push(j);
                }
            }
        }
    }
    seen
}

fn fresh_id(spec: &CellSpec) -> String {
    (0..)
        .map(|k| format!("m{k}"))
        .find(|id| spec.node(id).is_none())
        .unwrap()
}

/// `count` structurally distinct cells from consecutive seeds starting at
/// `base.seed`; a `base.n_hidden_slots` of 0 cycles the slot count through
/// `1..=MAX_HIDDEN`.
pub fn population(count: usize, base: &GenParams) -> Result<Vec<CellSpec>, GenerateError> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    let mut k = 0u64;
    while out.len() < count {
        if k as usize >= count.saturating_mul(GENERATE_RETRY_CAP).max(GENERATE_RETRY_CAP) {
            return Err(GenerateError::Exhausted { attempts: k as usize });
        }
        let slots = if base.n_hidden_slots == 0 {
            1 + (k as usize % MAX_HIDDEN)
        } else {
            base.n_hidden_slots
        };
        let params = GenParams {
            n_hidden_slots: slots,
            seed: base.seed.wrapping_add(k),
            ..base.clone()
        };
        k += 1;
        // Tight node caps can make a slot count infeasible for some seeds.
        let spec = match generate(&params) {
            Ok(spec) => spec,
            Err(GenerateError::Exhausted { .. }) => continue,
            Err(e) => return Err(e),
        };
        if seen.insert(spec.structural_hash()) {
            out.push(spec);
        }
    }
    Ok(out)
}
