//! Attributed-DAG representation of recurrent cells.
//!
//! A [`CellSpec`] lists nodes in any order; each node carries an [`OpKind`]
//! and an ordered list of input node ids. Source nodes are the single input
//! token embedding and up to [`MAX_HIDDEN`] previous hidden states. The
//! `new_hidden` map names, for every hidden slot, the node whose value becomes
//! that slot's next state.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Maximum number of nodes in a cell, sources included.
pub const MAX_NODES: usize = 24;
/// Maximum number of hidden-state slots.
pub const MAX_HIDDEN: usize = 3;
/// Maximum fan-in of a linear node.
pub const MAX_LINEAR_FAN_IN: usize = 3;
/// Negative slope used by every leaky-ReLU node.
pub const LEAKY_RELU_SLOPE: f64 = 0.01;

/// Operation attached to a cell node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    InputToken,
    HiddenIn { slot: usize },
    /// `W_1 x_1 + .. + W_n x_n + b`, fan-in given by the input count.
    Linear,
    /// `z * x + (1 - z) * y`, inputs ordered `(z, x, y)`.
    Blend,
    ElemProd,
    ElemSum,
    Tanh,
    Sigmoid,
    LeakyReLU,
}

/// The computation ops, in the order used for sampling and reporting.
pub const COMPUTE_OPS: [OpKind; 7] = [
    OpKind::Linear,
    OpKind::Blend,
    OpKind::ElemProd,
    OpKind::ElemSum,
    OpKind::Tanh,
    OpKind::Sigmoid,
    OpKind::LeakyReLU,
];

impl OpKind {
    /// Allowed number of inputs.
    pub fn arity(&self) -> RangeInclusive<usize> {
        match self {
            OpKind::InputToken | OpKind::HiddenIn { .. } => 0..=0,
            OpKind::Linear => 1..=MAX_LINEAR_FAN_IN,
            OpKind::Blend => 3..=3,
            OpKind::ElemProd | OpKind::ElemSum => 2..=2,
            OpKind::Tanh | OpKind::Sigmoid | OpKind::LeakyReLU => 1..=1,
        }
    }

    pub fn is_source(&self) -> bool {
        matches!(self, OpKind::InputToken | OpKind::HiddenIn { .. })
    }

    pub fn is_activation(&self) -> bool {
        matches!(self, OpKind::Tanh | OpKind::Sigmoid | OpKind::LeakyReLU)
    }

    /// Tag used in the architecture file format.
    pub fn tag(&self) -> &'static str {
        match self {
            OpKind::InputToken => "input",
            OpKind::HiddenIn { .. } => "hidden",
            OpKind::Linear => "linear",
            OpKind::Blend => "blend",
            OpKind::ElemProd => "prod",
            OpKind::ElemSum => "sum",
            OpKind::Tanh => "tanh",
            OpKind::Sigmoid => "sigmoid",
            OpKind::LeakyReLU => "leaky_relu",
        }
    }

    /// Parses a non-hidden tag; `hidden` needs a slot and goes through [`OpKind::HiddenIn`].
    pub fn from_tag(tag: &str, slot: Option<usize>) -> Option<OpKind> {
        Some(match tag {
            "input" => OpKind::InputToken,
            "hidden" => OpKind::HiddenIn { slot: slot? },
            "linear" => OpKind::Linear,
            "blend" => OpKind::Blend,
            "prod" => OpKind::ElemProd,
            "sum" => OpKind::ElemSum,
            "tanh" => OpKind::Tanh,
            "sigmoid" => OpKind::Sigmoid,
            "leaky_relu" => OpKind::LeakyReLU,
            _ => return None,
        })
    }

    /// Whether input order matters for the op's semantics.
    pub fn ordered_inputs(&self) -> bool {
        matches!(self, OpKind::Blend)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpKind::HiddenIn { slot } => write!(f, "hidden[{slot}]"),
            op => f.write_str(op.tag()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub id: String,
    pub op: OpKind,
    pub inputs: Vec<String>,
}

impl Node {
    pub fn new(id: impl Into<String>, op: OpKind, inputs: &[&str]) -> Self {
        Node {
            id: id.into(),
            op,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// A recurrent cell as an attributed DAG.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CellSpecRepr", into = "CellSpecRepr")]
pub struct CellSpec {
    pub nodes: Vec<Node>,
    pub new_hidden: BTreeMap<usize, String>,
}

/// Stable identifiers for validity rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Rule {
    DuplicateId,
    UnknownInput,
    SelfLoop,
    Arity,
    MaxNodes,
    InputCount,
    HiddenSlotRange,
    DuplicateHiddenSlot,
    HiddenSlotsContiguous,
    Cycle,
    NewHiddenCount,
    NewHiddenSlots,
    NewHiddenUnknown,
    NewHiddenSource,
    NewHiddenCollision,
    HiddenDirectEdge,
    InputUnreachable,
    HiddenUnreachable,
    RedundantNode,
}

impl Rule {
    pub fn as_str(&self) -> &'static str {
        match self {
            Rule::DuplicateId => "duplicate_id",
            Rule::UnknownInput => "unknown_input",
            Rule::SelfLoop => "self_loop",
            Rule::Arity => "arity",
            Rule::MaxNodes => "max_nodes",
            Rule::InputCount => "input_count",
            Rule::HiddenSlotRange => "hidden_slot_range",
            Rule::DuplicateHiddenSlot => "duplicate_hidden_slot",
            Rule::HiddenSlotsContiguous => "hidden_slots_contiguous",
            Rule::Cycle => "cycle",
            Rule::NewHiddenCount => "new_hidden_count",
            Rule::NewHiddenSlots => "new_hidden_slots",
            Rule::NewHiddenUnknown => "new_hidden_unknown",
            Rule::NewHiddenSource => "new_hidden_source",
            Rule::NewHiddenCollision => "new_hidden_collision",
            Rule::HiddenDirectEdge => "hidden_direct_edge",
            Rule::InputUnreachable => "input_unreachable",
            Rule::HiddenUnreachable => "hidden_unreachable",
            Rule::RedundantNode => "redundant_node",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub rule: Rule,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidityReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

impl ValidityReport {
    pub fn has(&self, rule: Rule) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }

    fn push(&mut self, rule: Rule, message: String) {
        self.violations.push(Violation { rule, message });
    }
}

impl fmt::Display for ValidityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ok {
            return f.write_str("valid");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{}: {}", v.rule, v.message)?;
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CellError {
    #[error("invalid cell: {0}")]
    Invalid(ValidityReport),
    #[error("new_hidden target `{0}` is not a node of the cell")]
    MissingTarget(String),
    #[error("cell graph contains a cycle")]
    Cyclic,
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

impl CellSpec {
    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn index_of(&self) -> HashMap<&str, usize> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.as_str(), i))
            .collect()
    }

    /// Number of hidden slots the cell reads.
    pub fn hidden_slots(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, OpKind::HiddenIn { .. }))
            .count()
    }

    pub fn num_compute_nodes(&self) -> usize {
        self.nodes.iter().filter(|n| !n.op.is_source()).count()
    }

    /// Indices in topological order, ties broken by list position.
    /// `None` when an input is unknown or the graph has a cycle.
    pub fn topo_order(&self) -> Option<Vec<usize>> {
        let index = self.index_of();
        let n = self.nodes.len();
        let mut indeg = vec![0usize; n];
        let mut consumers: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, node) in self.nodes.iter().enumerate() {
            for inp in &node.inputs {
                let j = *index.get(inp.as_str())?;
                indeg[i] += 1;
                consumers[j].push(i);
            }
        }
        let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = ready.pop_first() {
            order.push(i);
            for &c in &consumers[i] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    /// Indices of nodes from which some new_hidden target is reachable (targets included).
    pub fn backward_reachable(&self) -> BTreeSet<usize> {
        let index = self.index_of();
        let mut seen = BTreeSet::new();
        let mut stack: Vec<usize> = self
            .new_hidden
            .values()
            .filter_map(|id| index.get(id.as_str()).copied())
            .collect();
        while let Some(i) = stack.pop() {
            if !seen.insert(i) {
                continue;
            }
            for inp in &self.nodes[i].inputs {
                if let Some(&j) = index.get(inp.as_str()) {
                    stack.push(j);
                }
            }
        }
        seen
    }

    /// Checks every structural invariant and lists all violations found.
    pub fn validate(&self) -> ValidityReport {
        let mut rep = ValidityReport::default();
        let mut ids = HashMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if ids.insert(node.id.as_str(), i).is_some() {
                rep.push(Rule::DuplicateId, format!("node id `{}` used twice", node.id));
            }
        }
        if self.nodes.len() > MAX_NODES {
            rep.push(
                Rule::MaxNodes,
                format!("{} nodes exceed the limit of {MAX_NODES}", self.nodes.len()),
            );
        }

        let mut hidden_slots = BTreeMap::new();
        let mut inputs = 0;
        for node in &self.nodes {
            if !node.op.arity().contains(&node.inputs.len()) {
                rep.push(
                    Rule::Arity,
                    format!(
                        "node `{}` ({}) has {} inputs, expected {:?}",
                        node.id,
                        node.op,
                        node.inputs.len(),
                        node.op.arity()
                    ),
                );
            }
            for inp in &node.inputs {
                if inp == &node.id {
                    rep.push(Rule::SelfLoop, format!("node `{}` references itself", node.id));
                } else if !ids.contains_key(inp.as_str()) {
                    rep.push(
                        Rule::UnknownInput,
                        format!("node `{}` references unknown node `{inp}`", node.id),
                    );
                }
            }
            match node.op {
                OpKind::InputToken => inputs += 1,
                OpKind::HiddenIn { slot } => {
                    if slot >= MAX_HIDDEN {
                        rep.push(
                            Rule::HiddenSlotRange,
                            format!("hidden node `{}` uses slot {slot} >= {MAX_HIDDEN}", node.id),
                        );
                    }
                    if hidden_slots.insert(slot, node.id.as_str()).is_some() {
                        rep.push(
                            Rule::DuplicateHiddenSlot,
                            format!("hidden slot {slot} declared more than once"),
                        );
                    }
                }
                _ => {}
            }
        }
        if inputs != 1 {
            rep.push(
                Rule::InputCount,
                format!("expected exactly one input node, found {inputs}"),
            );
        }
        if hidden_slots.keys().copied().ne(0..hidden_slots.len()) {
            rep.push(
                Rule::HiddenSlotsContiguous,
                format!(
                    "hidden slots {:?} are not 0..{}",
                    hidden_slots.keys().collect::<Vec<_>>(),
                    hidden_slots.len()
                ),
            );
        }

        let structural_ok = !rep.has(Rule::UnknownInput) && !rep.has(Rule::SelfLoop);
        if structural_ok && !rep.has(Rule::DuplicateId) && self.topo_order().is_none() {
            rep.push(Rule::Cycle, "graph is not acyclic".into());
        }

        let n_new = self.new_hidden.len();
        if !(1..=MAX_HIDDEN).contains(&n_new) {
            rep.push(
                Rule::NewHiddenCount,
                format!("{n_new} new hidden states, expected 1..={MAX_HIDDEN}"),
            );
        }
        if self.new_hidden.keys().ne(hidden_slots.keys()) {
            rep.push(
                Rule::NewHiddenSlots,
                format!(
                    "new_hidden slots {:?} differ from hidden input slots {:?}",
                    self.new_hidden.keys().collect::<Vec<_>>(),
                    hidden_slots.keys().collect::<Vec<_>>()
                ),
            );
        }
        let mut targets_seen = BTreeMap::new();
        for (slot, target) in &self.new_hidden {
            if let Some(prev) = targets_seen.insert(target.as_str(), *slot) {
                rep.push(
                    Rule::NewHiddenCollision,
                    format!("slots {prev} and {slot} share target `{target}`"),
                );
            }
            let Some(&ti) = ids.get(target.as_str()) else {
                rep.push(
                    Rule::NewHiddenUnknown,
                    format!("slot {slot} targets unknown node `{target}`"),
                );
                continue;
            };
            let tnode = &self.nodes[ti];
            if tnode.op.is_source() {
                rep.push(
                    Rule::NewHiddenSource,
                    format!("slot {slot} targets source node `{target}`"),
                );
            }
            for inp in &tnode.inputs {
                let is_hidden = ids
                    .get(inp.as_str())
                    .map(|&j| matches!(self.nodes[j].op, OpKind::HiddenIn { .. }))
                    .unwrap_or(false);
                if is_hidden {
                    rep.push(
                        Rule::HiddenDirectEdge,
                        format!("new hidden target `{target}` reads hidden node `{inp}` directly"),
                    );
                }
            }
        }

        let reachable = self.backward_reachable();
        for (i, node) in self.nodes.iter().enumerate() {
            if reachable.contains(&i) {
                continue;
            }
            match node.op {
                OpKind::InputToken => rep.push(
                    Rule::InputUnreachable,
                    format!("input node `{}` does not reach any new hidden state", node.id),
                ),
                OpKind::HiddenIn { slot } => rep.push(
                    Rule::HiddenUnreachable,
                    format!("hidden slot {slot} (`{}`) does not reach any new hidden state", node.id),
                ),
                _ => rep.push(
                    Rule::RedundantNode,
                    format!("node `{}` does not lead to a new hidden state", node.id),
                ),
            }
        }

        rep.ok = rep.violations.is_empty();
        rep
    }

    pub fn is_valid(&self) -> bool {
        self.validate().ok
    }

    pub fn ensure_valid(&self) -> Result<(), CellError> {
        let rep = self.validate();
        if rep.ok {
            Ok(())
        } else {
            Err(CellError::Invalid(rep))
        }
    }

    /// Weisfeiler-Lehman colors per node (list order), refined over both edge directions.
    ///
    /// The initial color carries the op tag, the hidden slot of sources and the
    /// slots a node is the new-hidden target for. Blend inputs keep their
    /// position; all other inputs are treated as a multiset.
    pub(crate) fn wl_colors(&self, rounds: usize) -> Vec<u64> {
        self.wl_refine(rounds, true)
    }

    /// Rooted-subtree colors: like [`CellSpec::wl_colors`] but each node only
    /// sees its inputs, so round `r` encodes the depth-`r` computation feeding it.
    pub(crate) fn subtree_colors(&self, rounds: usize) -> Vec<u64> {
        self.wl_refine(rounds, false)
    }

    fn wl_refine(&self, rounds: usize, with_consumers: bool) -> Vec<u64> {
        let index = self.index_of();
        let n = self.nodes.len();
        let mut targets: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (slot, id) in &self.new_hidden {
            if let Some(&i) = index.get(id.as_str()) {
                targets[i].push(*slot);
            }
        }
        let inputs: Vec<Vec<usize>> = self
            .nodes
            .iter()
            .map(|node| {
                node.inputs
                    .iter()
                    .filter_map(|id| index.get(id.as_str()).copied())
                    .collect()
            })
            .collect();
        let mut consumers: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for (i, ins) in inputs.iter().enumerate() {
            for (pos, &j) in ins.iter().enumerate() {
                consumers[j].push((i, pos));
            }
        }

        let mut colors: Vec<u64> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, node)| digest64(format!("{}|t{:?}", node.op, targets[i]).as_bytes()))
            .collect();
        for _ in 0..rounds {
            let next: Vec<u64> = (0..n)
                .map(|i| {
                    let mut ins: Vec<u64> = inputs[i].iter().map(|&j| colors[j]).collect();
                    if !self.nodes[i].op.ordered_inputs() {
                        ins.sort_unstable();
                    }
                    let mut outs: Vec<(u64, usize)> = consumers[i]
                        .iter()
                        .map(|&(c, pos)| {
                            let p = if self.nodes[c].op.ordered_inputs() { pos + 1 } else { 0 };
                            (colors[c], p)
                        })
                        .collect();
                    outs.sort_unstable();
                    if with_consumers {
                        digest64(format!("{}|{:?}|{:?}", colors[i], ins, outs).as_bytes())
                    } else {
                        digest64(format!("{}|{:?}", colors[i], ins).as_bytes())
                    }
                })
                .collect();
            colors = next;
        }
        colors
    }

    /// Hex digest identifying the cell up to node order and node naming.
    pub fn canonical_hash(&self) -> Result<String, CellError> {
        self.ensure_valid()?;
        Ok(self.structural_hash())
    }

    /// Same digest as [`CellSpec::canonical_hash`] without the validity check.
    pub(crate) fn structural_hash(&self) -> String {
        let index = self.index_of();
        let colors = self.wl_colors(self.nodes.len().max(1));
        let mut lines: Vec<String> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, node)| {
                let mut ins: Vec<u64> = node
                    .inputs
                    .iter()
                    .filter_map(|id| index.get(id.as_str()).map(|&j| colors[j]))
                    .collect();
                if !node.op.ordered_inputs() {
                    ins.sort_unstable();
                }
                let ins: Vec<String> = ins.iter().map(|c| format!("{c:016x}")).collect();
                format!("{:016x} {} <- {}", colors[i], node.op, ins.join(","))
            })
            .collect();
        lines.sort();
        for (slot, id) in &self.new_hidden {
            let c = index.get(id.as_str()).map(|&i| colors[i]).unwrap_or(0);
            lines.push(format!("new_hidden {slot} = {c:016x}"));
        }
        let digest = Sha256::digest(lines.join("\n").as_bytes());
        digest[..16].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Compact JSON text in the architecture file format.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("cell serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<CellSpec, CellError> {
        Ok(serde_json::from_str(text)?)
    }
}

pub(crate) fn digest64(bytes: &[u8]) -> u64 {
    let d = Sha256::digest(bytes);
    u64::from_be_bytes(d[..8].try_into().unwrap())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRepr {
    id: String,
    op: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    slot: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    inputs: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CellSpecRepr {
    nodes: Vec<NodeRepr>,
    new_hidden: BTreeMap<String, String>,
}

impl From<CellSpec> for CellSpecRepr {
    fn from(spec: CellSpec) -> Self {
        CellSpecRepr {
            nodes: spec
                .nodes
                .into_iter()
                .map(|n| NodeRepr {
                    id: n.id,
                    op: n.op.tag().to_string(),
                    slot: match n.op {
                        OpKind::HiddenIn { slot } => Some(slot),
                        _ => None,
                    },
                    inputs: n.inputs,
                })
                .collect(),
            new_hidden: spec
                .new_hidden
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
        }
    }
}

impl TryFrom<CellSpecRepr> for CellSpec {
    type Error = String;

    fn try_from(repr: CellSpecRepr) -> Result<Self, Self::Error> {
        let mut nodes = Vec::with_capacity(repr.nodes.len());
        for (i, n) in repr.nodes.into_iter().enumerate() {
            let ctx = format!("nodes[{i}] (id `{}`)", n.id);
            let op = OpKind::from_tag(&n.op, n.slot).ok_or_else(|| {
                if n.op == "hidden" {
                    format!("{ctx}: field `slot` is required for op `hidden`")
                } else {
                    format!("{ctx}: unknown op `{}`", n.op)
                }
            })?;
            if n.slot.is_some() && !matches!(op, OpKind::HiddenIn { .. }) {
                return Err(format!("{ctx}: field `slot` is only allowed for op `hidden`"));
            }
            if op.is_source() && !n.inputs.is_empty() {
                return Err(format!("{ctx}: field `inputs` is not allowed for op `{}`", n.op));
            }
            nodes.push(Node {
                id: n.id,
                op,
                inputs: n.inputs,
            });
        }
        let mut new_hidden = BTreeMap::new();
        for (k, v) in repr.new_hidden {
            let slot: usize = k
                .parse()
                .map_err(|_| format!("new_hidden: key `{k}` is not a slot index"))?;
            new_hidden.insert(slot, v);
        }
        Ok(CellSpec { nodes, new_hidden })
    }
}

/// Simple RNN cell: `h' = tanh(W_x x + W_h h + b)`.
pub fn build_rnn() -> CellSpec {
    CellSpec {
        nodes: vec![
            Node::new("x", OpKind::InputToken, &[]),
            Node::new("h0", OpKind::HiddenIn { slot: 0 }, &[]),
            Node::new("lin", OpKind::Linear, &["x", "h0"]),
            Node::new("h_new", OpKind::Tanh, &["lin"]),
        ],
        new_hidden: BTreeMap::from([(0, "h_new".to_string())]),
    }
}

/// LSTM cell; slot 0 is the output state `h`, slot 1 the memory cell `c`.
pub fn build_lstm() -> CellSpec {
    CellSpec {
        nodes: vec![
            Node::new("x", OpKind::InputToken, &[]),
            Node::new("h0", OpKind::HiddenIn { slot: 0 }, &[]),
            Node::new("c0", OpKind::HiddenIn { slot: 1 }, &[]),
            Node::new("i_lin", OpKind::Linear, &["x", "h0"]),
            Node::new("i", OpKind::Sigmoid, &["i_lin"]),
            Node::new("f_lin", OpKind::Linear, &["x", "h0"]),
            Node::new("f", OpKind::Sigmoid, &["f_lin"]),
            Node::new("o_lin", OpKind::Linear, &["x", "h0"]),
            Node::new("o", OpKind::Sigmoid, &["o_lin"]),
            Node::new("g_lin", OpKind::Linear, &["x", "h0"]),
            Node::new("g", OpKind::Tanh, &["g_lin"]),
            Node::new("fc", OpKind::ElemProd, &["f", "c0"]),
            Node::new("ig", OpKind::ElemProd, &["i", "g"]),
            Node::new("c_new", OpKind::ElemSum, &["fc", "ig"]),
            Node::new("c_act", OpKind::Tanh, &["c_new"]),
            Node::new("h_new", OpKind::ElemProd, &["o", "c_act"]),
        ],
        new_hidden: BTreeMap::from([(0, "h_new".to_string()), (1, "c_new".to_string())]),
    }
}

/// GRU cell: update gate `z`, reset gate `r`, candidate `n`, and a single
/// blend `h' = z * tanh(h) + (1 - z) * n`. The carried state passes through
/// `tanh` because a new hidden state may not read a hidden input directly.
pub fn build_gru() -> CellSpec {
    CellSpec {
        nodes: vec![
            Node::new("x", OpKind::InputToken, &[]),
            Node::new("h0", OpKind::HiddenIn { slot: 0 }, &[]),
            Node::new("z_lin", OpKind::Linear, &["x", "h0"]),
            Node::new("z", OpKind::Sigmoid, &["z_lin"]),
            Node::new("r_lin", OpKind::Linear, &["x", "h0"]),
            Node::new("r", OpKind::Sigmoid, &["r_lin"]),
            Node::new("rh", OpKind::ElemProd, &["r", "h0"]),
            Node::new("n_lin", OpKind::Linear, &["x", "rh"]),
            Node::new("n", OpKind::Tanh, &["n_lin"]),
            Node::new("h_carry", OpKind::Tanh, &["h0"]),
            Node::new("h_new", OpKind::Blend, &["z", "h_carry", "n"]),
        ],
        new_hidden: BTreeMap::from([(0, "h_new".to_string())]),
    }
}
