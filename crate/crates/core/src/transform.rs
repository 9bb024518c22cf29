//! Lifting of relational states to object pairs.
//!
//! An atom `p(o_1..o_m)` becomes `p(⟨w⟩²)` over the `m²` pairs of its
//! arguments in row-major order. For composition depth `t ≥ 1` the lifted
//! state also receives ternary triangle atoms `Tri(⟨o,o'⟩, ⟨o',o''⟩, ⟨o,o''⟩)`
//! for every composable pair of pairs in the relation `R_t`.

use std::sync::Arc;

use thiserror::Error;

use crate::state::{ObjectId, PredId, PredicateOrigin, RelationalState, Vocabulary};

/// Name of the ternary composition predicate.
pub const TRIANGLE_PREDICATE: &str = "Tri";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransformError {
    #[error("cannot lift a nullary atom over `{0}`: propositional atoms carry no object to receive messages")]
    EmptyTuple(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PairObject {
    pub first: ObjectId,
    pub second: ObjectId,
}

impl PairObject {
    pub fn new(first: ObjectId, second: ObjectId) -> Self {
        Self { first, second }
    }

    pub fn diagonal(o: ObjectId) -> Self {
        Self::new(o, o)
    }

    pub fn is_diagonal(&self) -> bool {
        self.first == self.second
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PairAtom {
    pub pred: PredId,
    pub args: Vec<PairObject>,
}

/// Atoms over pair-objects. `pairs` is the message-passing universe: every
/// pair mentioned by an atom plus all diagonals, sorted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransformedState {
    pub vocab: Arc<Vocabulary>,
    pub num_objects: usize,
    pub pairs: Vec<PairObject>,
    pub atoms: Vec<PairAtom>,
    /// Composition depth; `None` when every triangle over `O³` is present.
    pub t: Option<usize>,
}

impl TransformedState {
    pub fn pair_index(&self, p: PairObject) -> Option<usize> {
        self.pairs.binary_search(&p).ok()
    }

    pub fn triangle_count(&self) -> usize {
        match self.vocab.get(TRIANGLE_PREDICATE) {
            Some(id) => self.atoms.iter().filter(|a| a.pred == id).count(),
            None => 0,
        }
    }

    pub fn display_atom(&self, atom: &PairAtom, names: &[String]) -> String {
        let args: Vec<String> = atom
            .args
            .iter()
            .map(|p| format!("<{},{}>", names[p.first as usize], names[p.second as usize]))
            .collect();
        format!("{}({})", self.vocab.name(atom.pred), args.join(","))
    }

    pub fn atom_strings(&self, names: &[String]) -> Vec<String> {
        self.atoms.iter().map(|a| self.display_atom(a, names)).collect()
    }
}

/// `⟨w⟩² = ⟨(o_1,o_1), …, (o_1,o_m), …, (o_m,o_1), …, (o_m,o_m)⟩`.
pub fn square_tuple(w: &[ObjectId]) -> Vec<PairObject> {
    w.iter()
        .flat_map(|&a| w.iter().map(move |&b| PairObject::new(a, b)))
        .collect()
}

/// Vocabulary of the lifted language: every source predicate keeps its name
/// with arity squared; the triangle predicate is appended. Ids of source
/// predicates are preserved.
pub fn lift_vocabulary(src: &Vocabulary) -> Vocabulary {
    let mut v = Vocabulary::new();
    for (_, p) in src.iter() {
        v.add(&p.name, p.arity * p.arity, PredicateOrigin::PairLift)
            .expect("source names are unique");
    }
    v.add(TRIANGLE_PREDICATE, 3, PredicateOrigin::Triangle)
        .expect("triangle predicate name is reserved");
    v
}

/// Goal atoms as `p_g` atoms plus one `Obj(o)` per object.
pub fn prepare(state: &RelationalState) -> RelationalState {
    state.augment_goal().add_obj_atoms()
}

/// `A_0(S)`: one lifted atom per source atom. The state is expected to be
/// prepared (goal-augmented, `Obj` atoms added).
pub fn a0_transform(state: &RelationalState) -> Result<TransformedState, TransformError> {
    let vocab = Arc::new(lift_vocabulary(state.vocab()));
    let atoms = lift_atoms(state)?;
    Ok(finish(vocab, state.num_objects(), atoms, Some(0)))
}

fn lift_atoms(state: &RelationalState) -> Result<Vec<PairAtom>, TransformError> {
    state
        .atoms()
        .iter()
        .map(|a| {
            if a.args.is_empty() {
                Err(TransformError::EmptyTuple(state.vocab().name(a.pred).to_string()))
            } else {
                Ok(PairAtom {
                    pred: a.pred,
                    args: square_tuple(&a.args),
                })
            }
        })
        .collect()
}

pub(crate) fn finish(
    vocab: Arc<Vocabulary>,
    num_objects: usize,
    mut atoms: Vec<PairAtom>,
    t: Option<usize>,
) -> TransformedState {
    atoms.sort_unstable();
    atoms.dedup();
    let mut pairs: Vec<PairObject> = atoms
        .iter()
        .flat_map(|a| a.args.iter().copied())
        .chain((0..num_objects as ObjectId).map(PairObject::diagonal))
        .collect();
    pairs.sort_unstable();
    pairs.dedup();
    TransformedState {
        vocab,
        num_objects,
        pairs,
        atoms,
        t,
    }
}

/// Dense boolean relation over `O × O`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairRelation {
    n: usize,
    bits: Vec<bool>,
}

impl PairRelation {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            bits: vec![false; n * n],
        }
    }

    pub fn contains(&self, a: ObjectId, b: ObjectId) -> bool {
        self.bits[a as usize * self.n + b as usize]
    }

    pub fn insert(&mut self, a: ObjectId, b: ObjectId) {
        self.bits[a as usize * self.n + b as usize] = true;
    }

    pub fn len(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Pairs in row-major order.
    pub fn pairs(&self) -> Vec<PairObject> {
        (0..self.n)
            .flat_map(|a| (0..self.n).map(move |b| (a, b)))
            .filter(|&(a, b)| self.bits[a * self.n + b])
            .map(|(a, b)| PairObject::new(a as ObjectId, b as ObjectId))
            .collect()
    }

    /// `{(a,c) | ∃b. (a,b) ∈ self ∧ (b,c) ∈ other}`.
    pub fn compose(&self, other: &PairRelation) -> PairRelation {
        let n = self.n;
        let mut out = PairRelation::empty(n);
        for a in 0..n {
            for b in 0..n {
                if self.bits[a * n + b] {
                    for c in 0..n {
                        if other.bits[b * n + c] {
                            out.bits[a * n + c] = true;
                        }
                    }
                }
            }
        }
        out
    }

    pub fn union_with(&mut self, other: &PairRelation) {
        for (x, y) in self.bits.iter_mut().zip(&other.bits) {
            *x |= *y;
        }
    }
}

/// `R_1` holds `(o,o')` when both occur in a common atom (including `o = o'`);
/// `R_t = R_{t-1} ∘ R_{t-1}`. With `cumulative`, lower levels are unioned in.
pub fn compute_rt(state: &RelationalState, t: usize, cumulative: bool) -> PairRelation {
    assert!(t >= 1, "R_t is defined for t >= 1");
    let n = state.num_objects();
    let mut r = PairRelation::empty(n);
    for atom in state.atoms() {
        for &a in &atom.args {
            for &b in &atom.args {
                r.insert(a, b);
            }
        }
    }
    for _ in 1..t {
        let mut next = r.compose(&r);
        if cumulative {
            next.union_with(&r);
        }
        r = next;
    }
    r
}

/// `Tri(⟨o,o'⟩, ⟨o',o''⟩, ⟨o,o''⟩)` for every `⟨o,o'⟩, ⟨o',o''⟩ ∈ R`,
/// degenerate triangles included.
pub fn delta_atoms(r: &PairRelation) -> Vec<[PairObject; 3]> {
    let n = r.n;
    let mut out = Vec::new();
    for o in 0..n as ObjectId {
        for mid in 0..n as ObjectId {
            if !r.contains(o, mid) {
                continue;
            }
            for end in 0..n as ObjectId {
                if r.contains(mid, end) {
                    out.push([
                        PairObject::new(o, mid),
                        PairObject::new(mid, end),
                        PairObject::new(o, end),
                    ]);
                }
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TransformOptions {
    pub t: usize,
    pub cumulative: bool,
}

/// `A_t(S)`: `A_0(S)` for `t = 0`, otherwise `A_0(S) ∪ Δ_t(S)`. The state is
/// expected to be prepared (see [`prepare`]).
pub fn at_transform(
    state: &RelationalState,
    opts: TransformOptions,
) -> Result<TransformedState, TransformError> {
    let vocab = Arc::new(lift_vocabulary(state.vocab()));
    let mut atoms = lift_atoms(state)?;
    if opts.t >= 1 {
        let tri = vocab.get(TRIANGLE_PREDICATE).unwrap();
        let r = compute_rt(state, opts.t, opts.cumulative);
        atoms.extend(delta_atoms(&r).into_iter().map(|args| PairAtom {
            pred: tri,
            args: args.to_vec(),
        }));
    }
    Ok(finish(vocab, state.num_objects(), atoms, Some(opts.t)))
}

/// Checks the join shape `(⟨o,o'⟩, ⟨o',o''⟩, ⟨o,o''⟩)`.
pub fn is_triangle_shaped(args: &[PairObject]) -> bool {
    matches!(args, [p, q, r] if p.second == q.first && r.first == p.first && r.second == q.second)
}
