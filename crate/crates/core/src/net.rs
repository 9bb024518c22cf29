//! Relational message passing over atoms, with the four model variants.
//!
//! Every variant reduces to the same engine: a node set, atoms grouped by
//! predicate, and a set of readout nodes. Plain R-GNN uses objects as nodes;
//! R-GNN[t] and R-GNN₂ use pair-objects; the 2-GNN uses all `n²` pairs with
//! the two fixed relations `p1`, `p2` and learned initial embeddings.
//!
//! Per layer, each atom `p(n_1..n_m)` feeds the concatenation of its
//! argument embeddings to `MLP_p` (`m·k → k → m·k`); the output is split into
//! `m` messages, one for each argument position. Nodes aggregate incoming
//! messages with a componentwise log-sum-exp and update residually through
//! `MLP_U` on `(f(n), agg)`.
//!
//! Several states are evaluated as one disjoint union. Rows never interact
//! across graphs, so a state's value does not depend on its batch.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{add_mlp, DiffError, Gradients, Mlp, ParameterSet, Segments, Tape, Tensor, Var};
use crate::baselines::{
    build_2gnn_input, build_rgnn2_input, pair_embedding_terms, pair_embedding_vocab, BaselineError,
    DEFAULT_SIZE_CAP, P1_PREDICATE, P2_PREDICATE,
};
use crate::state::{RelationalState, Vocabulary, OBJ_PREDICATE};
use crate::transform::{
    at_transform, prepare, PairObject, TransformError, TransformOptions, TransformedState,
    TRIANGLE_PREDICATE,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("predicate `{0}` has no message network in this model")]
    UnknownPredicate(String),
    #[error("atom argument {node} is outside the universe of {universe} nodes")]
    UniverseMismatch { node: u32, universe: usize },
    #[error("diagonal pair of object {0} is missing from the universe")]
    MissingDiagonal(u32),
    #[error("nullary atom `{0}` cannot be routed to any node")]
    NullaryAtom(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Rgnn,
    RgnnT { t: usize, cumulative: bool },
    Rgnn2,
    TwoGnn,
}

impl ModelKind {
    pub fn tag(&self) -> &'static str {
        match self {
            ModelKind::Rgnn => "rgnn",
            ModelKind::RgnnT { .. } => "rgnn-t",
            ModelKind::Rgnn2 => "rgnn2",
            ModelKind::TwoGnn => "2gnn",
        }
    }

    pub fn from_tag(tag: &str, t: usize, cumulative: bool) -> Option<Self> {
        Some(match tag {
            "rgnn" => ModelKind::Rgnn,
            "rgnn-t" => ModelKind::RgnnT { t, cumulative },
            "rgnn2" => ModelKind::Rgnn2,
            "2gnn" => ModelKind::TwoGnn,
            _ => return None,
        })
    }

    pub fn readout(&self) -> Readout {
        match self {
            ModelKind::Rgnn => Readout::SumAll,
            _ => Readout::Diagonal,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::Rgnn => write!(f, "R-GNN"),
            ModelKind::RgnnT { t, cumulative: false } => write!(f, "R-GNN[{t}]"),
            ModelKind::RgnnT { t, cumulative: true } => write!(f, "R-GNN[{t}, cumulative]"),
            ModelKind::Rgnn2 => write!(f, "R-GNN2"),
            ModelKind::TwoGnn => write!(f, "2-GNN"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Readout {
    /// Sum over every object node.
    SumAll,
    /// Sum over the diagonal pairs `⟨o,o⟩`.
    Diagonal,
}

impl Readout {
    pub fn tag(&self) -> &'static str {
        match self {
            Readout::SumAll => "sum-all",
            Readout::Diagonal => "diagonal",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "sum-all" => Some(Readout::SumAll),
            "diagonal" => Some(Readout::Diagonal),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RgnnConfig {
    pub embed_dim: usize,
    pub layers: usize,
    pub shared_weights: bool,
    pub readout: Readout,
}

impl RgnnConfig {
    pub fn new(kind: ModelKind, embed_dim: usize, layers: usize) -> Self {
        Self {
            embed_dim,
            layers,
            shared_weights: true,
            readout: kind.readout(),
        }
    }
}

/// Atoms of one predicate, arguments flattened atom by atom.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AtomGroup {
    pub slot: usize,
    pub arity: usize,
    pub args: Vec<u32>,
}

impl AtomGroup {
    pub fn num_atoms(&self) -> usize {
        self.args.len() / self.arity
    }
}

/// A graph ready for message passing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetInput {
    pub num_nodes: usize,
    /// Sorted by slot.
    pub groups: Vec<AtomGroup>,
    pub readout: Vec<u32>,
    /// `(node, embedding row)` terms of the initial embeddings; empty means
    /// zero initialization.
    pub init: Vec<(u32, u32)>,
}

impl NetInput {
    /// Messages sent per layer: one per atom argument position.
    pub fn num_messages(&self) -> usize {
        self.groups.iter().map(|g| g.args.len()).sum()
    }

    pub fn num_atoms(&self) -> usize {
        self.groups.iter().map(AtomGroup::num_atoms).sum()
    }

    fn validate(&self) -> Result<(), NetError> {
        let check = |&n: &u32| {
            if (n as usize) < self.num_nodes {
                Ok(())
            } else {
                Err(NetError::UniverseMismatch {
                    node: n,
                    universe: self.num_nodes,
                })
            }
        };
        self.groups.iter().flat_map(|g| &g.args).try_for_each(check)?;
        self.readout.iter().try_for_each(check)?;
        self.init.iter().map(|(n, _)| n).try_for_each(check)
    }
}

/// Node indices of `⟨o,o⟩` for every object, in object order.
pub fn diagonal_nodes(pairs: &[PairObject], num_objects: usize) -> Result<Vec<u32>, NetError> {
    (0..num_objects as u32)
        .map(|o| {
            pairs
                .binary_search(&PairObject::diagonal(o))
                .map(|i| i as u32)
                .map_err(|_| NetError::MissingDiagonal(o))
        })
        .collect()
}

fn groups_from(
    atoms: impl Iterator<Item = (String, Vec<u32>)>,
    slots: &HashMap<String, usize>,
    preds: &[(String, usize)],
) -> Result<Vec<AtomGroup>, NetError> {
    let mut by_slot: BTreeMap<usize, Vec<u32>> = BTreeMap::new();
    for (name, args) in atoms {
        if args.is_empty() {
            return Err(NetError::NullaryAtom(name));
        }
        let slot = *slots
            .get(&name)
            .ok_or_else(|| NetError::UnknownPredicate(name.clone()))?;
        if preds[slot].1 != args.len() {
            return Err(NetError::InvalidConfig(format!(
                "`{name}` has arity {} in the model but {} in the input",
                preds[slot].1,
                args.len()
            )));
        }
        by_slot.entry(slot).or_default().extend(args);
    }
    Ok(by_slot
        .into_iter()
        .map(|(slot, args)| AtomGroup {
            slot,
            arity: preds[slot].1,
            args,
        })
        .collect())
}

/// Message-network predicates (name, arity) of a model kind, sorted by name,
/// and the rows of the 2-GNN embedding table.
pub fn network_vocabulary(
    kind: ModelKind,
    domain: &Vocabulary,
) -> Result<(Vec<(String, usize)>, Vec<String>), NetError> {
    let base: Vec<(String, usize)> = domain
        .domain_predicates()
        .filter(|(_, p)| p.arity > 0)
        .flat_map(|(_, p)| {
            [
                (p.name.clone(), p.arity),
                (Vocabulary::goal_name(&p.name), p.arity),
            ]
        })
        .collect();
    let (mut preds, rows) = match kind {
        ModelKind::Rgnn => (base, Vec::new()),
        ModelKind::RgnnT { .. } | ModelKind::Rgnn2 => {
            let mut lifted: Vec<(String, usize)> =
                base.into_iter().map(|(n, a)| (n, a * a)).collect();
            lifted.push((OBJ_PREDICATE.to_string(), 1));
            lifted.push((TRIANGLE_PREDICATE.to_string(), 3));
            (lifted, Vec::new())
        }
        ModelKind::TwoGnn => (
            vec![(P1_PREDICATE.to_string(), 2), (P2_PREDICATE.to_string(), 2)],
            pair_embedding_vocab(domain)?,
        ),
    };
    preds.sort();
    preds.dedup();
    Ok((preds, rows))
}

fn msg_prefix(layer: Option<usize>, pred: &str) -> String {
    match layer {
        None => format!("msg/{pred}"),
        Some(l) => format!("layer{l}/msg/{pred}"),
    }
}

fn update_prefix(layer: Option<usize>) -> String {
    match layer {
        None => "update".to_string(),
        Some(l) => format!("layer{l}/update"),
    }
}

pub const READOUT_PREFIX: &str = "readout";
pub const EMBED_TABLE: &str = "embed";

/// A value function `V(S)` of one architecture, with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    kind: ModelKind,
    config: RgnnConfig,
    preds: Vec<(String, usize)>,
    slots: HashMap<String, usize>,
    embed_rows: Vec<String>,
    embed_index: BTreeMap<String, u32>,
    params: ParameterSet,
    size_cap: usize,
}

struct LayerMlps {
    msg: Vec<Mlp>,
    update: Mlp,
}

impl Model {
    /// Fresh model for a domain with parameters drawn from `seed`.
    pub fn new(
        kind: ModelKind,
        config: RgnnConfig,
        domain: &Vocabulary,
        seed: u64,
    ) -> Result<Self, NetError> {
        let (preds, embed_rows) = network_vocabulary(kind, domain)?;
        let mut params = ParameterSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = config.embed_dim;
        let layer_keys: Vec<Option<usize>> = if config.shared_weights {
            vec![None]
        } else {
            (0..config.layers).map(Some).collect()
        };
        for &l in &layer_keys {
            for (name, arity) in &preds {
                add_mlp(&mut params, &msg_prefix(l, name), arity * k, k, arity * k, &mut rng)?;
            }
            add_mlp(&mut params, &update_prefix(l), 2 * k, k, k, &mut rng)?;
        }
        add_mlp(&mut params, READOUT_PREFIX, k, k, 1, &mut rng)?;
        if kind == ModelKind::TwoGnn {
            params.add(EMBED_TABLE, Tensor::glorot(embed_rows.len(), k, &mut rng))?;
        }
        Self::from_parts(kind, config, preds, embed_rows, params)
    }

    /// Assembles a model from stored parts, checking every parameter shape.
    pub fn from_parts(
        kind: ModelKind,
        config: RgnnConfig,
        preds: Vec<(String, usize)>,
        embed_rows: Vec<String>,
        params: ParameterSet,
    ) -> Result<Self, NetError> {
        if config.embed_dim == 0 || config.layers == 0 {
            return Err(NetError::InvalidConfig("embed_dim and layers must be at least 1".into()));
        }
        if config.readout != kind.readout() {
            return Err(NetError::InvalidConfig(format!(
                "{kind} uses the {} readout",
                kind.readout().tag()
            )));
        }
        if let ModelKind::RgnnT { t, .. } = kind {
            if t > 8 {
                return Err(NetError::InvalidConfig(format!("t = {t} is out of range")));
            }
        }
        let slots = preds
            .iter()
            .enumerate()
            .map(|(i, (n, _))| (n.clone(), i))
            .collect();
        let embed_index = embed_rows
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i as u32))
            .collect();
        let model = Self {
            kind,
            config,
            preds,
            slots,
            embed_rows,
            embed_index,
            params,
            size_cap: DEFAULT_SIZE_CAP,
        };
        model.check_shapes()?;
        Ok(model)
    }

    fn check_shapes(&self) -> Result<(), NetError> {
        let k = self.config.embed_dim;
        let expect = |name: String, shape: (usize, usize)| -> Result<(), NetError> {
            let id = self.params.id(&name)?;
            let got = self.params.value(id).shape();
            if got != shape {
                return Err(DiffError::ShapeMismatch {
                    op: "parameter",
                    left: got,
                    right: shape,
                }
                .into());
            }
            Ok(())
        };
        let mlp = |prefix: String, i: usize, h: usize, o: usize| -> Result<(), NetError> {
            expect(format!("{prefix}.w1"), (i, h))?;
            expect(format!("{prefix}.b1"), (1, h))?;
            expect(format!("{prefix}.w2"), (h, o))?;
            expect(format!("{prefix}.b2"), (1, o))
        };
        for l in self.layer_keys() {
            for (name, arity) in &self.preds {
                mlp(msg_prefix(l, name), arity * k, k, arity * k)?;
            }
            mlp(update_prefix(l), 2 * k, k, k)?;
        }
        mlp(READOUT_PREFIX.to_string(), k, k, 1)?;
        if self.kind == ModelKind::TwoGnn {
            expect(EMBED_TABLE.to_string(), (self.embed_rows.len(), k))?;
        }
        Ok(())
    }

    fn layer_keys(&self) -> Vec<Option<usize>> {
        if self.config.shared_weights {
            vec![None]
        } else {
            (0..self.config.layers).map(Some).collect()
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn config(&self) -> &RgnnConfig {
        &self.config
    }

    pub fn preds(&self) -> &[(String, usize)] {
        &self.preds
    }

    pub fn embed_rows(&self) -> &[String] {
        &self.embed_rows
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParameterSet) -> Result<(), NetError> {
        let old = std::mem::replace(&mut self.params, params);
        if let Err(e) = self.check_shapes() {
            self.params = old;
            return Err(e);
        }
        Ok(())
    }

    pub fn set_size_cap(&mut self, cap: usize) {
        self.size_cap = cap;
    }

    /// Lifted input of R-GNN[t] / R-GNN₂, or `None` for the object-level kinds.
    pub fn transformed(&self, state: &RelationalState) -> Result<Option<TransformedState>, NetError> {
        Ok(match self.kind {
            ModelKind::RgnnT { t, cumulative } => {
                Some(at_transform(&prepare(state), TransformOptions { t, cumulative })?)
            }
            ModelKind::Rgnn2 => Some(build_rgnn2_input(&prepare(state), self.size_cap)?),
            _ => None,
        })
    }

    /// Builds the message-passing graph of a state. Goal atoms and `Obj`
    /// markers are added as the model kind requires.
    pub fn input(&self, state: &RelationalState) -> Result<NetInput, NetError> {
        let input = match self.kind {
            ModelKind::Rgnn => {
                let s = state.augment_goal();
                let vocab = s.vocab();
                let groups = groups_from(
                    s.atoms()
                        .iter()
                        .map(|a| (vocab.name(a.pred).to_string(), a.args.clone())),
                    &self.slots,
                    &self.preds,
                )?;
                NetInput {
                    num_nodes: s.num_objects(),
                    groups,
                    readout: (0..s.num_objects() as u32).collect(),
                    init: Vec::new(),
                }
            }
            ModelKind::RgnnT { .. } | ModelKind::Rgnn2 => {
                let ts = self.transformed(state)?.expect("pair kinds transform");
                self.input_from_transformed(&ts)?
            }
            ModelKind::TwoGnn => {
                let n = state.num_objects();
                let g = build_2gnn_input(n, self.size_cap)?;
                let flat = |atoms: &[[PairObject; 2]]| -> Vec<(String, Vec<u32>)> {
                    atoms
                        .iter()
                        .map(|[a, b]| (String::new(), vec![g.node(*a), g.node(*b)]))
                        .collect()
                };
                let mut atoms = Vec::with_capacity(g.num_atoms());
                for (name, list) in [(P1_PREDICATE, &g.p1), (P2_PREDICATE, &g.p2)] {
                    atoms.extend(flat(list).into_iter().map(|(_, a)| (name.to_string(), a)));
                }
                NetInput {
                    num_nodes: n * n,
                    groups: groups_from(atoms.into_iter(), &self.slots, &self.preds)?,
                    readout: (0..n as u32).map(|o| o * n as u32 + o).collect(),
                    init: pair_embedding_terms(state, &self.embed_index)?,
                }
            }
        };
        input.validate()?;
        Ok(input)
    }

    pub fn input_from_transformed(&self, ts: &TransformedState) -> Result<NetInput, NetError> {
        let vocab = &ts.vocab;
        let node = |p: &PairObject| ts.pair_index(*p).expect("pairs cover atom arguments") as u32;
        let groups = groups_from(
            ts.atoms
                .iter()
                .map(|a| (vocab.name(a.pred).to_string(), a.args.iter().map(node).collect())),
            &self.slots,
            &self.preds,
        )?;
        Ok(NetInput {
            num_nodes: ts.pairs.len(),
            groups,
            readout: diagonal_nodes(&ts.pairs, ts.num_objects)?,
            init: Vec::new(),
        })
    }

    fn layer_mlps(&self, params: &ParameterSet) -> Result<Vec<LayerMlps>, NetError> {
        self.layer_keys()
            .into_iter()
            .map(|l| {
                Ok(LayerMlps {
                    msg: self
                        .preds
                        .iter()
                        .map(|(n, _)| Mlp::lookup(params, &msg_prefix(l, n)))
                        .collect::<Result<_, _>>()?,
                    update: Mlp::lookup(params, &update_prefix(l))?,
                })
            })
            .collect()
    }

    /// Runs all layers on the union of `inputs`; returns the embedding table
    /// after every layer (index 0 is the initialization) and the readout
    /// segments, one per input.
    fn forward(
        &self,
        params: &ParameterSet,
        tape: &mut Tape,
        inputs: &[&NetInput],
    ) -> Result<(Vec<Var>, Segments), NetError> {
        let k = self.config.embed_dim;
        let mut offsets = Vec::with_capacity(inputs.len());
        let mut total = 0usize;
        for inp in inputs {
            offsets.push(total as u32);
            total += inp.num_nodes;
        }

        let mut merged: BTreeMap<usize, Vec<u32>> = BTreeMap::new();
        for (inp, &off) in inputs.iter().zip(&offsets) {
            for g in &inp.groups {
                merged
                    .entry(g.slot)
                    .or_default()
                    .extend(g.args.iter().map(|&a| a + off));
            }
        }
        let dest: Vec<u32> = merged.values().flatten().copied().collect();
        let inbox = Segments::from_assignment(total, &dest);
        let readout = Segments::from_lists(
            &inputs
                .iter()
                .zip(&offsets)
                .map(|(inp, &off)| inp.readout.iter().map(|&r| r + off).collect())
                .collect::<Vec<Vec<u32>>>(),
        );

        let mut f = if self.kind == ModelKind::TwoGnn {
            let table = tape.param(params.id(EMBED_TABLE)?);
            let mut rows = Vec::new();
            let mut nodes = Vec::new();
            for (inp, &off) in inputs.iter().zip(&offsets) {
                for &(n, r) in &inp.init {
                    nodes.push(n + off);
                    rows.push(r);
                }
            }
            let terms = tape.gather(table, rows)?;
            tape.segment_sum(terms, Segments::from_assignment(total, &nodes))?
        } else {
            tape.constant(Tensor::zeros(total, k))
        };

        let mlps = self.layer_mlps(params)?;
        let mut trace = vec![f];
        for layer in 0..self.config.layers {
            let m = &mlps[if self.config.shared_weights { 0 } else { layer }];
            let agg = if dest.is_empty() {
                tape.constant(Tensor::zeros(total, k))
            } else {
                let mut parts = Vec::with_capacity(merged.len());
                for (&slot, args) in &merged {
                    let arity = self.preds[slot].1;
                    let atoms = args.len() / arity;
                    let x = tape.gather(f, args.clone())?;
                    let x = tape.reshape(x, atoms, arity * k)?;
                    let y = m.msg[slot].apply(tape, x)?;
                    parts.push(tape.reshape(y, atoms * arity, k)?);
                }
                let msgs = tape.concat_rows(parts, k)?;
                tape.segment_lse(msgs, inbox.clone())?
            };
            let u = tape.concat_cols(f, agg)?;
            let delta = m.update.apply(tape, u)?;
            f = tape.add(f, delta)?;
            trace.push(f);
        }
        Ok((trace, readout))
    }

    fn batch_values(
        &self,
        params: &ParameterSet,
        tape: &mut Tape,
        inputs: &[&NetInput],
    ) -> Result<Var, NetError> {
        let (trace, readout) = self.forward(params, tape, inputs)?;
        let pooled = tape.segment_sum(*trace.last().expect("layers ≥ 1"), readout)?;
        Ok(Mlp::lookup(params, READOUT_PREFIX)?.apply(tape, pooled)?)
    }

    /// Values of several graphs under `params` (which must match the model).
    pub fn values_with(&self, params: &ParameterSet, inputs: &[&NetInput]) -> Result<Vec<f64>, NetError> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new(params);
        let v = self.batch_values(params, &mut tape, inputs)?;
        Ok(tape.value(v).data.clone())
    }

    pub fn values_of_inputs(&self, inputs: &[&NetInput]) -> Result<Vec<f64>, NetError> {
        self.values_with(&self.params, inputs)
    }

    pub fn value(&self, state: &RelationalState) -> Result<f64, NetError> {
        let input = self.input(state)?;
        Ok(self.values_of_inputs(&[&input])?[0])
    }

    pub fn values(&self, states: &[RelationalState]) -> Result<Vec<f64>, NetError> {
        let inputs = states
            .iter()
            .map(|s| self.input(s))
            .collect::<Result<Vec<_>, _>>()?;
        self.values_of_inputs(&inputs.iter().collect::<Vec<_>>())
    }

    /// Mean `|V(S) − V*(S)|` over the batch and its gradient.
    pub fn loss_and_grad(
        &self,
        params: &ParameterSet,
        inputs: &[&NetInput],
        targets: &[f64],
    ) -> Result<(f64, Gradients), NetError> {
        let mut tape = Tape::new(params);
        let v = self.batch_values(params, &mut tape, inputs)?;
        let loss = tape.mean_abs_error(v, targets.to_vec())?;
        let value = tape.value(loss).data[0];
        Ok((value, tape.backward(loss)))
    }

    /// Embedding tables of one graph after every layer; index 0 is the
    /// initialization.
    pub fn embeddings(&self, input: &NetInput) -> Result<Vec<Tensor>, NetError> {
        let mut tape = Tape::new(&self.params);
        let (trace, _) = self.forward(&self.params, &mut tape, &[input])?;
        Ok(trace.into_iter().map(|v| tape.value(v).clone()).collect())
    }

    /// `MLP(Σ_{n ∈ nodes} table[n])`.
    pub fn readout_value(&self, table: &Tensor, nodes: &[u32]) -> Result<f64, NetError> {
        let mut tape = Tape::new(&self.params);
        let t = tape.constant(table.clone());
        let pooled = tape.segment_sum(t, Segments::from_lists(&[nodes.to_vec()]))?;
        let v = Mlp::lookup(&self.params, READOUT_PREFIX)?.apply(&mut tape, pooled)?;
        Ok(tape.value(v).data[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pddl::tests::{GRIPPER_DOMAIN, GRIPPER_PROBLEM};
    use crate::pddl::{parse_domain, parse_problem};
    use crate::state::{Atom, PredicateOrigin};
    use crate::transform::delta_atoms;
    use crate::transform::compute_rt;
    use std::sync::Arc;

    const CHAIN: &str = "(define (domain chain) (:predicates (at ?x) (e ?x ?y))
        (:action go :parameters (?x ?y) :precondition (and (at ?x) (e ?x ?y))
           :effect (and (at ?y) (not (at ?x)))))";

    fn chain_state(n: usize) -> RelationalState {
        let d = Arc::new(parse_domain(CHAIN).unwrap());
        let objs: Vec<String> = (0..n).map(|i| format!("c{i}")).collect();
        let mut init = "(at c0)".to_string();
        for i in 0..n - 1 {
            init += &format!(" (e c{i} c{})", i + 1);
        }
        let text = format!(
            "(define (problem p) (:domain chain) (:objects {}) (:init {init}) (:goal (at c{})))",
            objs.join(" "),
            n - 1
        );
        parse_problem(&text, &d).unwrap().state
    }

    fn kinds() -> [ModelKind; 5] {
        [
            ModelKind::Rgnn,
            ModelKind::RgnnT { t: 0, cumulative: false },
            ModelKind::RgnnT { t: 1, cumulative: false },
            ModelKind::Rgnn2,
            ModelKind::TwoGnn,
        ]
    }

    fn model(kind: ModelKind, s: &RelationalState, k: usize, l: usize) -> Model {
        Model::new(kind, RgnnConfig::new(kind, k, l), s.vocab(), 11).unwrap()
    }

    #[test]
    fn empty_state_keeps_zero_embeddings() {
        let mut v = Vocabulary::new();
        v.add("p", 2, PredicateOrigin::Domain).unwrap();
        let s = RelationalState::new(Arc::new(v), vec!["a".into(), "b".into()], vec![], vec![]).unwrap();
        let m = model(ModelKind::Rgnn, &s, 4, 3);
        let input = m.input(&s).unwrap();
        assert_eq!(input.num_messages(), 0);
        let tables = m.embeddings(&input).unwrap();
        assert_eq!(tables.len(), 4);
        assert!(tables.iter().all(|t| t.data.iter().all(|&x| x == 0.0)));
        let zero = Tensor::zeros(2, 4);
        assert_eq!(m.value(&s).unwrap(), m.readout_value(&zero, &[0, 1]).unwrap());
    }

    #[test]
    fn values_are_finite_and_deterministic() {
        let s = chain_state(4);
        for kind in kinds() {
            let m = model(kind, &s, 6, 3);
            let a = m.value(&s).unwrap();
            assert!(a.is_finite(), "{kind}");
            assert_eq!(a.to_bits(), m.value(&s).unwrap().to_bits());
            assert_eq!(m, model(kind, &s, 6, 3));
        }
    }

    #[test]
    fn batch_values_match_single_values() {
        let s = chain_state(4);
        let moved = s.with_atoms(
            s.atoms()
                .iter()
                .map(|a| {
                    if s.vocab().name(a.pred) == "at" {
                        Atom::new(a.pred, vec![2])
                    } else {
                        a.clone()
                    }
                })
                .collect(),
        );
        for kind in kinds() {
            let m = model(kind, &s, 5, 2);
            let batch = m.values(&[s.clone(), moved.clone(), s.clone()]).unwrap();
            assert_eq!(batch[0].to_bits(), m.value(&s).unwrap().to_bits(), "{kind}");
            assert_eq!(batch[1].to_bits(), m.value(&moved).unwrap().to_bits(), "{kind}");
            assert_eq!(batch[0].to_bits(), batch[2].to_bits());
        }
    }

    #[test]
    fn message_count_matches_brute_force_for_t1() {
        let s = chain_state(5);
        let m = model(ModelKind::RgnnT { t: 1, cumulative: false }, &s, 4, 1);
        let input = m.input(&s).unwrap();
        let p = prepare(&s);
        let lifted: usize = p.atoms().iter().map(|a| a.args.len() * a.args.len()).sum();
        let tri = delta_atoms(&compute_rt(&p, 1, false)).len();
        assert_eq!(input.num_messages(), lifted + 3 * tri);
    }

    #[test]
    fn rgnn_omits_obj_and_pair_kinds_include_it() {
        let s = chain_state(3);
        let (plain, _) = network_vocabulary(ModelKind::Rgnn, s.vocab()).unwrap();
        assert!(plain.iter().all(|(n, _)| n != OBJ_PREDICATE));
        assert!(plain.iter().any(|(n, _)| n == "at_g"));
        let (lifted, _) = network_vocabulary(ModelKind::Rgnn2, s.vocab()).unwrap();
        assert!(lifted.contains(&("e".to_string(), 4)));
        assert!(lifted.contains(&(TRIANGLE_PREDICATE.to_string(), 3)));
        assert!(lifted.contains(&(OBJ_PREDICATE.to_string(), 1)));
    }

    #[test]
    fn shared_weights_parameter_count_is_layer_independent() {
        let s = chain_state(3);
        let kind = ModelKind::RgnnT { t: 1, cumulative: false };
        let count = |l: usize, shared: bool| {
            let mut c = RgnnConfig::new(kind, 4, l);
            c.shared_weights = shared;
            Model::new(kind, c, s.vocab(), 0).unwrap().params().num_scalars()
        };
        assert_eq!(count(2, true), count(9, true));
        assert!(count(3, false) > count(2, false));
    }

    #[test]
    fn automorphic_balls_share_embeddings() {
        let d = Arc::new(parse_domain(GRIPPER_DOMAIN).unwrap());
        let p = parse_problem(GRIPPER_PROBLEM, &d).unwrap();
        let s = &p.state;
        let m = model(ModelKind::Rgnn, s, 6, 4);
        let input = m.input(s).unwrap();
        let (b1, b2) = (s.object_id("ball1").unwrap(), s.object_id("ball2").unwrap());
        for table in m.embeddings(&input).unwrap() {
            assert_eq!(table.row(b1 as usize), table.row(b2 as usize));
        }
    }

    #[test]
    fn readout_paths_agree_on_single_object() {
        let mut v = Vocabulary::new();
        v.add("p", 1, PredicateOrigin::Domain).unwrap();
        let v = Arc::new(v);
        let s = RelationalState::new(Arc::clone(&v), vec!["a".into()], vec![Atom::new(v.get("p").unwrap(), vec![0])], vec![]).unwrap();
        let m = model(ModelKind::RgnnT { t: 0, cumulative: false }, &s, 4, 2);
        let input = m.input(&s).unwrap();
        let table = m.embeddings(&input).unwrap().pop().unwrap();
        let all: Vec<u32> = (0..input.num_nodes as u32).collect();
        assert_eq!(input.num_nodes, 1);
        assert_eq!(
            m.readout_value(&table, &input.readout).unwrap(),
            m.readout_value(&table, &all).unwrap()
        );
        assert_eq!(m.value(&s).unwrap(), m.readout_value(&table, &all).unwrap());
    }

    #[test]
    fn missing_diagonal_is_reported() {
        let pairs = vec![PairObject::new(0, 0), PairObject::new(0, 1)];
        assert_eq!(diagonal_nodes(&pairs, 2), Err(NetError::MissingDiagonal(1)));
        assert_eq!(diagonal_nodes(&pairs, 1), Ok(vec![0]));
    }

    #[test]
    fn nullary_atoms_and_ternary_two_gnn_fail_loudly() {
        let mut v = Vocabulary::new();
        v.add("handempty", 0, PredicateOrigin::Domain).unwrap();
        v.add("adj", 3, PredicateOrigin::Domain).unwrap();
        let v = Arc::new(v);
        let s = RelationalState::new(
            Arc::clone(&v),
            vec!["a".into()],
            vec![Atom::new(v.get("handempty").unwrap(), vec![])],
            vec![],
        )
        .unwrap();
        let m = model(ModelKind::Rgnn, &s, 3, 1);
        assert_eq!(m.input(&s), Err(NetError::NullaryAtom("handempty".into())));
        let m = model(ModelKind::RgnnT { t: 1, cumulative: false }, &s, 3, 1);
        assert!(matches!(m.input(&s), Err(NetError::Transform(_))));
        assert!(matches!(
            Model::new(ModelKind::TwoGnn, RgnnConfig::new(ModelKind::TwoGnn, 3, 1), &v, 0),
            Err(NetError::Baseline(BaselineError::ArityTooHigh { .. }))
        ));
    }

    #[test]
    fn wrong_readout_is_rejected() {
        let s = chain_state(2);
        let mut c = RgnnConfig::new(ModelKind::Rgnn, 4, 2);
        c.readout = Readout::Diagonal;
        assert!(matches!(
            Model::new(ModelKind::Rgnn, c, s.vocab(), 0),
            Err(NetError::InvalidConfig(_))
        ));
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let s = chain_state(3);
        for kind in kinds() {
            let m = model(kind, &s, 4, 2);
            let input = m.input(&s).unwrap();
            let f = |p: &ParameterSet| m.loss_and_grad(p, &[&input], &[5.0]).unwrap();
            let r = crate::autodiff::grad_check(f, m.params(), crate::autodiff::GRAD_CHECK_STEP, 60, 1);
            assert!(r.max_rel_error <= 1e-5, "{kind}: {r:?}");
        }
    }
}
