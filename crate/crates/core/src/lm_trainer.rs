//! Stacked-cell language model: compilation of a [`CellSpec`] into
//! embedding → `n_layers` cells → decoder, truncated-BPTT training with the
//! AWD-LSTM dropout family, and per-epoch log-perplexity logging.

use std::collections::HashMap;
use std::rc::Rc;
use std::time::Instant;

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdError, Tape, Tensor, Var};
use crate::cell_graph::{CellError, CellSpec, OpKind};
use crate::corpus::{Corpus, Vocab};

/// Synthetic wall-time cost per (parameter × training token).
pub const SYNTHETIC_SECONDS_PER_PARAM_TOKEN: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub emb_dim: usize,
    pub nhid: usize,
    pub n_layers: usize,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub bptt_len: usize,
    pub epochs: usize,
    pub lr: f64,
    pub grad_clip: f64,
    /// Locked dropout on the last layer's output.
    pub dropout: f64,
    /// Locked dropout between stacked layers.
    pub dropouth: f64,
    /// Locked dropout on the embedded input.
    pub dropouti: f64,
    /// Whole-row dropout on the embedding matrix.
    pub dropoute: f64,
    /// DropConnect on recurrent linear weights.
    pub wdrop: f64,
    pub tie_weights: bool,
    pub seed: u64,
    /// A segment loss above `explosion_factor * ln(V)` counts as divergence.
    pub explosion_factor: f64,
    /// Replace measured epoch time with a deterministic cost model.
    pub synthetic_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            emb_dim: 64,
            nhid: 64,
            n_layers: 2,
            batch_size: 16,
            eval_batch_size: 10,
            bptt_len: 32,
            epochs: 20,
            lr: 2.0,
            grad_clip: 0.25,
            dropout: 0.1,
            dropouth: 0.25,
            dropouti: 0.4,
            dropoute: 0.0,
            wdrop: 0.1,
            tie_weights: false,
            seed: 0,
            explosion_factor: 3.0,
            synthetic_time: false,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        for (name, v) in [
            ("emb_dim", self.emb_dim),
            ("nhid", self.nhid),
            ("n_layers", self.n_layers),
            ("batch_size", self.batch_size),
            ("eval_batch_size", self.eval_batch_size),
            ("bptt_len", self.bptt_len),
            ("epochs", self.epochs),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        for (name, p) in [
            ("dropout", self.dropout),
            ("dropouth", self.dropouth),
            ("dropouti", self.dropouti),
            ("dropoute", self.dropoute),
            ("wdrop", self.wdrop),
        ] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{name} must be in [0, 1), got {p}"));
            }
        }
        if !(self.lr > 0.0 && self.grad_clip > 0.0 && self.explosion_factor > 0.0) {
            return bad("lr, grad_clip and explosion_factor must be positive".into());
        }
        if self.tie_weights && self.emb_dim != self.nhid {
            return bad(format!(
                "tie_weights needs emb_dim == nhid ({} != {})",
                self.emb_dim, self.nhid
            ));
        }
        Ok(())
    }

    /// Same configuration with every dropout disabled.
    pub fn without_dropout(&self) -> TrainConfig {
        TrainConfig {
            dropout: 0.0,
            dropouth: 0.0,
            dropouti: 0.0,
            dropoute: 0.0,
            wdrop: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Cell(#[from] CellError),
    #[error("numeric error: {0}")]
    Numeric(#[from] AdError),
    #[error("{0}")]
    Contract(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    #[serde(rename = "OK")]
    Ok,
    #[serde(rename = "DIVERGED")]
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub wall_time_s: f64,
    pub train_log_ppl: f64,
    pub val_log_ppl: f64,
    pub test_log_ppl: f64,
}

/// Where and why a run diverged; `wall_time_s` covers the partial failing epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub epoch: usize,
    pub wall_time_s: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub arch_hash: String,
    pub seed: u64,
    pub status: Status,
    pub num_params: usize,
    /// Completed epochs, contiguous from 1.
    pub epochs: Vec<EpochMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diverged: Option<Divergence>,
}

impl TrainRecord {
    pub fn final_epoch(&self) -> Option<&EpochMetrics> {
        self.epochs.last()
    }

    /// Epochs whose metrics exist.
    pub fn trained_epochs(&self) -> usize {
        self.epochs.len()
    }

    pub fn check(&self) -> Result<(), String> {
        for (i, e) in self.epochs.iter().enumerate() {
            if e.epoch != i + 1 {
                return Err(format!("epoch list not contiguous at position {i}"));
            }
            let finite = [e.wall_time_s, e.train_log_ppl, e.val_log_ppl, e.test_log_ppl]
                .iter()
                .all(|v| v.is_finite());
            if !finite {
                return Err(format!("epoch {} has non-finite metrics", e.epoch));
            }
        }
        match (self.status, &self.diverged) {
            (Status::Ok, None) => Ok(()),
            (Status::Diverged, Some(d)) if d.epoch == self.epochs.len() + 1 => Ok(()),
            _ => Err("status and divergence info disagree".into()),
        }
    }
}

#[derive(Debug, Clone)]
struct PlanNode {
    op: OpKind,
    inputs: Vec<usize>,
}

/// Cell nodes in topological order with resolved input indices.
#[derive(Debug, Clone)]
struct CellPlan {
    nodes: Vec<PlanNode>,
    targets: Vec<usize>,
    /// Whether a node's value depends on any previous hidden state.
    recurrent: Vec<bool>,
}

impl CellPlan {
    fn new(spec: &CellSpec) -> Result<CellPlan, TrainError> {
        spec.ensure_valid()?;
        let order = spec.topo_order().ok_or(CellError::Cyclic)?;
        let mut pos = HashMap::new();
        for (p, &i) in order.iter().enumerate() {
            pos.insert(spec.nodes[i].id.as_str(), p);
        }
        let nodes: Vec<PlanNode> = order
            .iter()
            .map(|&i| PlanNode {
                op: spec.nodes[i].op,
                inputs: spec.nodes[i].inputs.iter().map(|id| pos[id.as_str()]).collect(),
            })
            .collect();
        let mut recurrent = vec![false; nodes.len()];
        for (i, n) in nodes.iter().enumerate() {
            recurrent[i] = matches!(n.op, OpKind::HiddenIn { .. }) || n.inputs.iter().any(|&j| recurrent[j]);
        }
        let targets = spec.new_hidden.values().map(|id| pos[id.as_str()]).collect();
        Ok(CellPlan {
            nodes,
            targets,
            recurrent,
        })
    }

    /// Output width of every node for a layer whose input has width `in_dim`.
    fn dims(&self, in_dim: usize, nhid: usize) -> Result<Vec<usize>, TrainError> {
        let mut dims = vec![0; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            dims[i] = match n.op {
                OpKind::InputToken => in_dim,
                OpKind::HiddenIn { .. } | OpKind::Linear => nhid,
                _ => {
                    let d = dims[n.inputs[0]];
                    if n.inputs.iter().any(|&j| dims[j] != d) {
                        return Err(TrainError::Config(format!(
                            "element-wise {} mixes widths {:?}; use emb_dim == nhid",
                            n.op,
                            n.inputs.iter().map(|&j| dims[j]).collect::<Vec<_>>()
                        )));
                    }
                    d
                }
            };
        }
        for &t in &self.targets {
            if dims[t] != nhid {
                return Err(TrainError::Config(format!(
                    "new hidden state has width {} instead of nhid {nhid}; use emb_dim == nhid",
                    dims[t]
                )));
            }
        }
        Ok(dims)
    }
}

#[derive(Debug, Clone)]
struct LayerParams {
    /// Per plan node: one weight per input (linear nodes only).
    weights: Vec<Vec<usize>>,
    biases: Vec<Option<usize>>,
}

/// A compiled, trainable language model.
#[derive(Debug, Clone)]
pub struct Model {
    spec: CellSpec,
    cfg: TrainConfig,
    vocab_size: usize,
    plan: CellPlan,
    params: Vec<Tensor>,
    names: Vec<String>,
    embedding: usize,
    layers: Vec<LayerParams>,
    decoder_w: Option<usize>,
    decoder_b: usize,
    /// Parameters that receive DropConnect.
    recurrent_weights: Vec<usize>,
}

struct Masks {
    emb_rows: Option<Rc<Tensor>>,
    input: Option<Rc<Tensor>>,
    between: Option<Rc<Tensor>>,
    output: Option<Rc<Tensor>>,
    weights: HashMap<usize, Rc<Tensor>>,
}

struct Segment {
    loss: Var,
    param_vars: Vec<Var>,
    hidden: Vec<Vec<Tensor>>,
    n_targets: usize,
}

/// Per-layer, per-slot hidden states, each `[B, nhid]`.
pub type HiddenState = Vec<Vec<Tensor>>;

fn bernoulli_mask(rng: &mut impl Rng, shape: &[usize], p: f64) -> Option<Rc<Tensor>> {
    if p <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    Some(Rc::new(Tensor::from_fn(shape, |_| {
        if rng.gen::<f64>() < p { 0.0 } else { keep }
    })))
}

impl Model {
    /// Builds the stacked model and initializes its parameters from `cfg.seed`.
    pub fn compile(spec: &CellSpec, vocab_size: usize, cfg: &TrainConfig) -> Result<Model, TrainError> {
        cfg.check()?;
        if vocab_size == 0 {
            return Err(TrainError::Config("empty vocabulary".into()));
        }
        let plan = CellPlan::new(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = Vec::new();
        let mut names = Vec::new();
        let mut add = |name: String, t: Tensor| {
            params.push(t);
            names.push(name);
            params.len() - 1
        };

        let unit = Uniform::new_inclusive(-0.1, 0.1);
        let emb = Tensor::from_fn(&[vocab_size, cfg.emb_dim], |_| unit.sample(&mut rng));
        let embedding = add("embedding".into(), emb);

        let mut layers = Vec::with_capacity(cfg.n_layers);
        let mut recurrent_weights = Vec::new();
        for l in 0..cfg.n_layers {
            let in_dim = if l == 0 { cfg.emb_dim } else { cfg.nhid };
            let dims = plan.dims(in_dim, cfg.nhid)?;
            let mut weights = vec![Vec::new(); plan.nodes.len()];
            let mut biases = vec![None; plan.nodes.len()];
            for (i, node) in plan.nodes.iter().enumerate() {
                if node.op != OpKind::Linear {
                    continue;
                }
                let fan_in: usize = node.inputs.iter().map(|&j| dims[j]).sum();
                let bound = 1.0 / (fan_in as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound);
                for (k, &j) in node.inputs.iter().enumerate() {
                    let w = Tensor::from_fn(&[cfg.nhid, dims[j]], |_| dist.sample(&mut rng));
                    let id = add(format!("layer{l}.node{i}.w{k}"), w);
                    if plan.recurrent[j] {
                        recurrent_weights.push(id);
                    }
                    weights[i].push(id);
                }
                let b = Tensor::from_fn(&[cfg.nhid], |_| dist.sample(&mut rng));
                biases[i] = Some(add(format!("layer{l}.node{i}.b"), b));
            }
            layers.push(LayerParams { weights, biases });
        }

        let decoder_w = if cfg.tie_weights {
            None
        } else {
            let w = Tensor::from_fn(&[vocab_size, cfg.nhid], |_| unit.sample(&mut rng));
            Some(add("decoder.w".into(), w))
        };
        let decoder_b = add("decoder.b".into(), Tensor::zeros(&[vocab_size]));

        Ok(Model {
            spec: spec.clone(),
            cfg: cfg.clone(),
            vocab_size,
            plan,
            params,
            names,
            embedding,
            layers,
            decoder_w,
            decoder_b,
            recurrent_weights,
        })
    }

    pub fn spec(&self) -> &CellSpec {
        &self.spec
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// Number of hidden-state slots carried per layer.
    pub fn hidden_slots(&self) -> usize {
        self.plan.targets.len()
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    /// Embedding matrix, `[V, emb_dim]`.
    pub fn embedding(&self) -> &Tensor {
        &self.params[self.embedding]
    }

    /// Zeroes the decoder so the model predicts the uniform distribution.
    pub fn zero_decoder(&mut self) {
        if let Some(w) = self.decoder_w {
            self.params[w] = Tensor::zeros(self.params[w].shape());
        }
        let b = self.decoder_b;
        self.params[b] = Tensor::zeros(self.params[b].shape());
    }

    pub fn zero_hidden(&self, batch: usize) -> HiddenState {
        (0..self.cfg.n_layers)
            .map(|_| {
                (0..self.hidden_slots())
                    .map(|_| Tensor::zeros(&[batch, self.cfg.nhid]))
                    .collect()
            })
            .collect()
    }

    fn sample_masks(&self, rng: &mut impl Rng, batch: usize) -> Masks {
        let cfg = &self.cfg;
        let mut weights = HashMap::new();
        for &w in &self.recurrent_weights {
            if let Some(m) = bernoulli_mask(rng, self.params[w].shape(), cfg.wdrop) {
                weights.insert(w, m);
            }
        }
        let emb_rows = if cfg.dropoute > 0.0 {
            let keep = 1.0 / (1.0 - cfg.dropoute);
            let rows: Vec<f64> = (0..self.vocab_size)
                .map(|_| if rng.gen::<f64>() < cfg.dropoute { 0.0 } else { keep })
                .collect();
            Some(Rc::new(Tensor::from_fn(&[self.vocab_size, cfg.emb_dim], |k| {
                rows[k / cfg.emb_dim]
            })))
        } else {
            None
        };
        Masks {
            emb_rows,
            input: bernoulli_mask(rng, &[batch, cfg.emb_dim], cfg.dropouti),
            between: bernoulli_mask(rng, &[batch, cfg.nhid], cfg.dropouth),
            output: bernoulli_mask(rng, &[batch, cfg.nhid], cfg.dropout),
            weights,
        }
    }

    fn cell_step(
        &self,
        tape: &mut Tape,
        layer: &(Vec<Vec<Var>>, Vec<Option<Var>>),
        x: Var,
        hidden: &[Var],
    ) -> Result<Vec<Var>, AdError> {
        let mut vals: Vec<Var> = Vec::with_capacity(self.plan.nodes.len());
        for (i, node) in self.plan.nodes.iter().enumerate() {
            let ins = |k: usize| vals[node.inputs[k]];
            let v = match node.op {
                OpKind::InputToken => x,
                OpKind::HiddenIn { slot } => hidden[slot],
                OpKind::Linear => {
                    let xs: Vec<Var> = node.inputs.iter().map(|&j| vals[j]).collect();
                    tape.linear(&layer.0[i], &xs, layer.1[i])?
                }
                OpKind::Blend => tape.blend(ins(0), ins(1), ins(2))?,
                OpKind::ElemProd => tape.prod(ins(0), ins(1))?,
                OpKind::ElemSum => tape.sum(ins(0), ins(1))?,
                OpKind::Tanh => tape.tanh(ins(0))?,
                OpKind::Sigmoid => tape.sigmoid(ins(0))?,
                OpKind::LeakyReLU => tape.leaky_relu(ins(0))?,
            };
            vals.push(v);
        }
        Ok(self.plan.targets.iter().map(|&t| vals[t]).collect())
    }

    /// Runs one segment. `inputs[t]` holds the batch of token ids at step
    /// `t`; `targets` is flattened step-major.
    fn run_segment(
        &self,
        tape: &mut Tape,
        inputs: &[Vec<usize>],
        targets: &[usize],
        hidden: &HiddenState,
        masks: Option<&Masks>,
    ) -> Result<Segment, AdError> {
        let param_vars: Vec<Var> = self
            .params
            .iter()
            .map(|p| tape.leaf(p.clone()))
            .collect::<Result<_, _>>()?;
        let mut emb = param_vars[self.embedding];
        if let Some(m) = masks.and_then(|m| m.emb_rows.clone()) {
            emb = tape.mul_const(emb, m)?;
        }
        let mut layer_vars = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mut ws = Vec::with_capacity(layer.weights.len());
            for node_ws in &layer.weights {
                let mut vs = Vec::with_capacity(node_ws.len());
                for &w in node_ws {
                    let mut v = param_vars[w];
                    if let Some(m) = masks.and_then(|m| m.weights.get(&w)) {
                        v = tape.mul_const(v, m.clone())?;
                    }
                    vs.push(v);
                }
                ws.push(vs);
            }
            let bs: Vec<Option<Var>> = layer.biases.iter().map(|b| b.map(|b| param_vars[b])).collect();
            layer_vars.push((ws, bs));
        }
        let mut state: Vec<Vec<Var>> = hidden
            .iter()
            .map(|l| l.iter().map(|h| tape.leaf(h.clone())).collect::<Result<_, _>>())
            .collect::<Result<_, _>>()?;

        let n_layers = self.layers.len();
        let mut outputs = Vec::with_capacity(inputs.len());
        for step in inputs {
            let mut x = tape.embed(emb, step)?;
            if let Some(m) = masks.and_then(|m| m.input.clone()) {
                x = tape.mul_const(x, m)?;
            }
            for (l, lv) in layer_vars.iter().enumerate() {
                let new = self.cell_step(tape, lv, x, &state[l])?;
                x = new[0];
                state[l] = new;
                let mask = if l + 1 < n_layers {
                    masks.and_then(|m| m.between.clone())
                } else {
                    masks.and_then(|m| m.output.clone())
                };
                if let Some(m) = mask {
                    x = tape.mul_const(x, m)?;
                }
            }
            outputs.push(x);
        }
        let top = tape.concat_rows(&outputs)?;
        let dec_w = match self.decoder_w {
            Some(w) => param_vars[w],
            None => param_vars[self.embedding],
        };
        let logits = tape.linear(&[dec_w], &[top], Some(param_vars[self.decoder_b]))?;
        let loss = tape.softmax_xent(logits, targets)?;
        let hidden = state
            .iter()
            .map(|l| l.iter().map(|&v| tape.value(v).clone()).collect())
            .collect();
        Ok(Segment {
            loss,
            param_vars,
            hidden,
            n_targets: targets.len(),
        })
    }

    /// Mean per-token negative log-likelihood (nats) of `tokens` in
    /// evaluation mode, using `eval_batch_size` parallel streams.
    pub fn log_ppl(&self, tokens: &[usize]) -> Result<f64, TrainError> {
        let streams = batchify(tokens, self.cfg.eval_batch_size);
        let len = streams.first().map_or(0, Vec::len);
        if len < 2 {
            return Err(TrainError::Contract(format!(
                "split of {} tokens is too short for {} evaluation streams",
                tokens.len(),
                self.cfg.eval_batch_size
            )));
        }
        let mut hidden = self.zero_hidden(streams.len());
        let mut total = 0.0;
        let mut count = 0usize;
        for (inputs, targets) in segments(&streams, self.cfg.bptt_len) {
            let mut tape = Tape::new();
            let seg = self.run_segment(&mut tape, &inputs, &targets, &hidden, None)?;
            total += tape.value(seg.loss).item() * seg.n_targets as f64;
            count += seg.n_targets;
            hidden = seg.hidden;
        }
        Ok(total / count as f64)
    }

    /// Evaluation-mode mean loss of one stream (`tokens[t]` predicts
    /// `tokens[t + 1]`, zero initial state, no truncation) and its gradient
    /// with respect to every parameter, in `params()` order.
    pub fn loss_and_grads(&self, tokens: &[usize]) -> Result<(f64, Vec<Tensor>), TrainError> {
        if tokens.len() < 2 {
            return Err(TrainError::Contract("need at least two tokens".into()));
        }
        let inputs: Vec<Vec<usize>> = tokens[..tokens.len() - 1].iter().map(|&t| vec![t]).collect();
        let mut tape = Tape::new();
        let seg = self.run_segment(&mut tape, &inputs, &tokens[1..], &self.zero_hidden(1), None)?;
        let loss = tape.value(seg.loss).item();
        let grads = tape.backward(seg.loss)?;
        let gs = seg.param_vars.iter().map(|&v| grads.get_or_zeros(&tape, v)).collect();
        Ok((loss, gs))
    }

    /// Evaluation-mode logits for a single stream starting from zero state;
    /// row `t` predicts `tokens[t + 1]`.
    pub fn stream_logits(&self, tokens: &[usize]) -> Result<Vec<Vec<f64>>, TrainError> {
        let mut hidden = self.zero_hidden(1);
        let mut rows = Vec::new();
        for chunk in tokens.chunks(self.cfg.bptt_len) {
            let inputs: Vec<Vec<usize>> = chunk.iter().map(|&t| vec![t]).collect();
            let targets = vec![0; chunk.len()];
            let mut tape = Tape::new();
            let seg = self.run_segment(&mut tape, &inputs, &targets, &hidden, None)?;
            // The logits are the input of the loss node's softmax.
            let probs = tape.probs(seg.loss).expect("loss is a softmax node");
            for r in 0..probs.rows() {
                rows.push(probs.row(r).iter().map(|p| p.ln()).collect());
            }
            hidden = seg.hidden;
        }
        Ok(rows)
    }

    /// One SGD step on a segment; returns the segment loss and the
    /// pre-clipping gradient norm.
    fn train_segment(
        &mut self,
        inputs: &[Vec<usize>],
        targets: &[usize],
        hidden: &HiddenState,
        masks: &Masks,
    ) -> Result<(f64, f64, HiddenState), AdError> {
        let mut tape = Tape::new();
        let seg = self.run_segment(&mut tape, inputs, targets, hidden, Some(masks))?;
        let loss = tape.value(seg.loss).item();
        let grads = tape.backward(seg.loss)?;
        let mut gs: Vec<Tensor> = seg
            .param_vars
            .iter()
            .map(|&v| grads.get_or_zeros(&tape, v))
            .collect();
        let norm = clip_grad_norm(&mut gs, self.cfg.grad_clip);
        if !norm.is_finite() {
            return Err(AdError::NonFinite { op: "gradient" });
        }
        let lr = self.cfg.lr;
        for (p, g) in self.params.iter_mut().zip(&gs) {
            for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                *pv -= lr * gv;
            }
        }
        Ok((loss, norm, seg.hidden))
    }

    pub fn save(&self, vocab: &Vocab) -> SavedModel {
        SavedModel {
            spec: self.spec.clone(),
            config: self.cfg.clone(),
            vocab: vocab.clone(),
            params: self
                .names
                .iter()
                .zip(&self.params)
                .map(|(name, t)| SavedParam {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn restore(saved: &SavedModel) -> Result<Model, TrainError> {
        let mut model = Model::compile(&saved.spec, saved.vocab.len(), &saved.config)?;
        if saved.params.len() != model.params.len() {
            return Err(TrainError::Contract("saved parameter count does not match".into()));
        }
        for (slot, p) in model.params.iter_mut().zip(&saved.params) {
            if slot.shape() != p.shape.as_slice() {
                return Err(TrainError::Contract(format!("parameter `{}` has wrong shape", p.name)));
            }
            *slot = Tensor::new(p.shape.clone(), p.data.clone())?;
        }
        Ok(model)
    }
}

/// Serializable parameter snapshot of a trained model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SavedModel {
    pub spec: CellSpec,
    pub config: TrainConfig,
    pub vocab: Vocab,
    pub params: Vec<SavedParam>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SavedParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Scales gradients in place so their global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt();
    if norm.is_finite() && norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

/// Splits `tokens` into `batch` contiguous streams of equal length, dropping the tail.
pub fn batchify(tokens: &[usize], batch: usize) -> Vec<Vec<usize>> {
    let len = tokens.len() / batch;
    (0..batch)
        .map(|b| tokens[b * len..(b + 1) * len].to_vec())
        .collect()
}

/// BPTT segments over parallel streams: `(inputs per step, step-major targets)`.
pub fn segments(streams: &[Vec<usize>], bptt: usize) -> Vec<(Vec<Vec<usize>>, Vec<usize>)> {
    let len = streams.first().map_or(0, Vec::len);
    let mut out = Vec::new();
    let mut start = 0;
    while start + 1 < len {
        let steps = bptt.min(len - 1 - start);
        let inputs: Vec<Vec<usize>> = (0..steps)
            .map(|t| streams.iter().map(|s| s[start + t]).collect())
            .collect();
        let targets: Vec<usize> = (0..steps)
            .flat_map(|t| streams.iter().map(move |s| s[start + t + 1]))
            .collect();
        out.push((inputs, targets));
        start += steps;
    }
    out
}

/// A finished training run together with its final parameters.
#[derive(Debug)]
pub struct TrainOutcome {
    pub record: TrainRecord,
    pub model: Model,
}

/// Trains `spec` on `corpus`, evaluating all splits after each epoch.
pub fn train(spec: &CellSpec, corpus: &Corpus, cfg: &TrainConfig) -> Result<TrainRecord, TrainError> {
    Ok(train_model(spec, corpus, cfg)?.record)
}

pub fn train_model(spec: &CellSpec, corpus: &Corpus, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    let arch_hash = spec.canonical_hash()?;
    let mut model = Model::compile(spec, corpus.vocab_size(), cfg)?;
    let streams = batchify(&corpus.train, cfg.batch_size);
    let stream_len = streams[0].len();
    if stream_len < cfg.bptt_len + 1 {
        return Err(TrainError::Config(format!(
            "training split of {} tokens is smaller than one BPTT segment ({} streams x {} steps)",
            corpus.train.len(),
            cfg.batch_size,
            cfg.bptt_len + 1
        )));
    }
    let segs = segments(&streams, cfg.bptt_len);
    let threshold = cfg.explosion_factor * (corpus.vocab_size().max(2) as f64).ln();
    let num_params = model.num_params();
    let synthetic_epoch = num_params as f64 * corpus.train.len() as f64 * SYNTHETIC_SECONDS_PER_PARAM_TOKEN;
    // Masks and init come from separate streams so the dropout draw does not
    // depend on how many parameters the cell has.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_d20b);

    let mut record = TrainRecord {
        arch_hash,
        seed: cfg.seed,
        status: Status::Ok,
        num_params,
        epochs: Vec::with_capacity(cfg.epochs),
        diverged: None,
    };

    for epoch in 1..=cfg.epochs {
        let clock = Instant::now();
        let mut hidden = model.zero_hidden(cfg.batch_size);
        let mut failure = None;
        for (k, (inputs, targets)) in segs.iter().enumerate() {
            let masks = model.sample_masks(&mut rng, cfg.batch_size);
            match model.train_segment(inputs, targets, &hidden, &masks) {
                Ok((loss, _, next)) if loss <= threshold => hidden = next,
                Ok((loss, _, _)) => {
                    failure = Some((k, format!("segment loss {loss:.3} above {threshold:.3}")));
                    break;
                }
                Err(e) => {
                    failure = Some((k, e.to_string()));
                    break;
                }
            }
        }
        let metrics = match failure {
            None => evaluate(&model, corpus),
            Some((k, reason)) => Err((k, reason)),
        };
        match metrics {
            Ok((tr, va, te)) => {
                let wall = if cfg.synthetic_time {
                    synthetic_epoch
                } else {
                    clock.elapsed().as_secs_f64()
                };
                record.epochs.push(EpochMetrics {
                    epoch,
                    wall_time_s: wall,
                    train_log_ppl: tr,
                    val_log_ppl: va,
                    test_log_ppl: te,
                });
            }
            Err((k, reason)) => {
                let wall = if cfg.synthetic_time {
                    synthetic_epoch * k.saturating_add(1).min(segs.len()) as f64 / segs.len() as f64
                } else {
                    clock.elapsed().as_secs_f64()
                };
                record.status = Status::Diverged;
                record.diverged = Some(Divergence {
                    epoch,
                    wall_time_s: wall,
                    reason,
                });
                break;
            }
        }
    }
    Ok(TrainOutcome { record, model })
}

type EvalResult = Result<(f64, f64, f64), (usize, String)>;

fn evaluate(model: &Model, corpus: &Corpus) -> EvalResult {
    let n_segs = usize::MAX;
    let eval = |split: &[usize]| -> Result<f64, (usize, String)> {
        match model.log_ppl(split) {
            Ok(v) if v.is_finite() => Ok(v),
            Ok(v) => Err((n_segs, format!("evaluation loss {v}"))),
            Err(e) => Err((n_segs, format!("evaluation failed: {e}"))),
        }
    };
    Ok((eval(&corpus.train)?, eval(&corpus.valid)?, eval(&corpus.test)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell_graph::{build_gru, build_lstm, build_rnn, Node};
    use crate::corpus::Tokenization;
    use std::collections::BTreeMap;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            emb_dim: 8,
            nhid: 8,
            n_layers: 2,
            batch_size: 4,
            eval_batch_size: 2,
            bptt_len: 8,
            epochs: 3,
            lr: 1.0,
            synthetic_time: true,
            ..TrainConfig::default()
        }
    }

    fn tiny_corpus() -> Corpus {
        let text = "abcabcabdabcabcabdabcabcabd".repeat(12);
        Corpus::from_texts(&text, &text[..120], &text[3..123], Tokenization::Char).unwrap()
    }

    #[test]
    fn lstm_param_count_closed_form() {
        let cfg = TrainConfig::default();
        let v = 50;
        let model = Model::compile(&build_lstm(), v, &cfg).unwrap();
        let (e, h) = (cfg.emb_dim, cfg.nhid);
        let layer0 = 4 * (h * (e + h) + h);
        let layer1 = 4 * (h * (h + h) + h);
        let expected = v * e + layer0 + layer1 + v * h + v;
        assert_eq!(model.num_params(), expected);
        assert_eq!(model.hidden_slots(), 2);
        assert_eq!(Model::compile(&build_gru(), v, &cfg).unwrap().hidden_slots(), 1);
    }

    #[test]
    fn tied_weights_need_matching_dims() {
        let cfg = TrainConfig {
            tie_weights: true,
            emb_dim: 32,
            ..TrainConfig::default()
        };
        assert!(matches!(Model::compile(&build_rnn(), 10, &cfg), Err(TrainError::Config(_))));
        let cfg = TrainConfig {
            tie_weights: true,
            ..TrainConfig::default()
        };
        let tied = Model::compile(&build_rnn(), 10, &cfg).unwrap();
        let untied = Model::compile(&build_rnn(), 10, &TrainConfig::default()).unwrap();
        assert_eq!(untied.num_params() - tied.num_params(), 10 * 64);
    }

    #[test]
    fn zero_dropout_masks_are_identity() {
        let cfg = tiny_cfg().without_dropout();
        let model = Model::compile(&build_lstm(), 5, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = model.sample_masks(&mut rng, 4);
        assert!(m.input.is_none() && m.between.is_none() && m.output.is_none());
        assert!(m.emb_rows.is_none() && m.weights.is_empty());
    }

    #[test]
    fn wdrop_targets_recurrent_weights_only() {
        let model = Model::compile(&build_rnn(), 5, &tiny_cfg()).unwrap();
        // One linear (x, h) per layer: only the hidden-side weight is recurrent.
        let names: Vec<&str> = model.recurrent_weights.iter().map(|&i| model.names[i].as_str()).collect();
        assert_eq!(names.len(), 2);
        assert!(names.iter().all(|n| n.ends_with(".w1")), "{names:?}");
    }

    #[test]
    fn uniform_predictor() {
        let mut model = Model::compile(&build_gru(), 10, &tiny_cfg()).unwrap();
        model.zero_decoder();
        let tokens: Vec<usize> = (0..41).map(|i| (i * 7) % 10).collect();
        let lp = model.log_ppl(&tokens).unwrap();
        assert!((lp - 10f64.ln()).abs() < 1e-12);
        assert!((lp.exp() - 10.0).abs() < 1e-10);
    }

    #[test]
    fn eval_is_deterministic_and_dropout_free() {
        let model = Model::compile(&build_lstm(), 6, &tiny_cfg()).unwrap();
        let tokens: Vec<usize> = (0..60).map(|i| (i * i) % 6).collect();
        assert_eq!(model.log_ppl(&tokens).unwrap(), model.log_ppl(&tokens).unwrap());
    }

    #[test]
    fn log_ppl_rejects_short_split() {
        let model = Model::compile(&build_rnn(), 6, &tiny_cfg()).unwrap();
        assert!(matches!(model.log_ppl(&[1, 2, 3]), Err(TrainError::Contract(_))));
    }

    #[test]
    fn gradient_clipping_bounds_norm() {
        let mut gs = vec![Tensor::full(&[3, 3], 2.0), Tensor::full(&[4], -1.0)];
        let before = clip_grad_norm(&mut gs, 0.25);
        assert!((before - 40f64.sqrt()).abs() < 1e-12);
        let after = gs.iter().map(Tensor::sq_norm).sum::<f64>().sqrt();
        assert!(after <= 0.25 + 1e-12);
        let mut small = vec![Tensor::full(&[2], 0.01)];
        clip_grad_norm(&mut small, 0.25);
        assert_eq!(small[0].data(), &[0.01, 0.01]);
    }

    #[test]
    fn batchify_and_segments() {
        let tokens: Vec<usize> = (0..23).collect();
        let streams = batchify(&tokens, 3);
        assert_eq!(streams, vec![(0..7).collect::<Vec<_>>(), (7..14).collect(), (14..21).collect()]);
        let segs = segments(&streams, 4);
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[0].0[0], vec![0, 7, 14]);
        assert_eq!(&segs[0].1[..3], &[1, 8, 15]);
        assert_eq!(segs[1].0.len(), 2);
        let predicted: usize = segs.iter().map(|s| s.1.len()).sum();
        assert_eq!(predicted, 3 * 6);
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let corpus = tiny_corpus();
        let cfg = TrainConfig {
            epochs: 4,
            ..tiny_cfg()
        };
        let a = train(&build_lstm(), &corpus, &cfg).unwrap();
        let b = train(&build_lstm(), &corpus, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.status, Status::Ok);
        a.check().unwrap();
        assert_eq!(a.epochs.len(), 4);
        assert!(a.epochs[3].val_log_ppl < a.epochs[0].val_log_ppl);
    }

    #[test]
    fn corpus_too_small() {
        let corpus = Corpus::from_texts("abcdefgh", "ab", "ba", Tokenization::Char).unwrap();
        assert!(matches!(
            train(&build_rnn(), &corpus, &tiny_cfg()),
            Err(TrainError::Config(_))
        ));
    }

    /// `h' = (h + h + Wx) + Wx`: the carried state doubles every step.
    fn doubling_cell() -> CellSpec {
        CellSpec {
            nodes: vec![
                Node::new("x", OpKind::InputToken, &[]),
                Node::new("h0", OpKind::HiddenIn { slot: 0 }, &[]),
                Node::new("wx", OpKind::Linear, &["x"]),
                Node::new("a", OpKind::ElemSum, &["h0", "wx"]),
                Node::new("b", OpKind::ElemSum, &["a", "h0"]),
                Node::new("h_new", OpKind::ElemSum, &["b", "wx"]),
            ],
            new_hidden: BTreeMap::from([(0, "h_new".to_string())]),
        }
    }

    #[test]
    fn linear_recurrence_diverges() {
        let spec = doubling_cell();
        assert!(spec.is_valid(), "{}", spec.validate());
        let corpus = tiny_corpus();
        let rec = train(&spec, &corpus, &tiny_cfg()).unwrap();
        assert_eq!(rec.status, Status::Diverged);
        rec.check().unwrap();
        let again = train(&spec, &corpus, &tiny_cfg()).unwrap();
        assert_eq!(rec, again);
    }

    #[test]
    fn save_and_restore() {
        let corpus = tiny_corpus();
        let out = train_model(&build_rnn(), &corpus, &tiny_cfg()).unwrap();
        let saved = out.model.save(&corpus.vocab);
        let json = serde_json::to_string(&saved).unwrap();
        let back: SavedModel = serde_json::from_str(&json).unwrap();
        let restored = Model::restore(&back).unwrap();
        assert_eq!(restored.params(), out.model.params());
        assert_eq!(back.vocab, corpus.vocab);
    }
}
