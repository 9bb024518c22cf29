//! Inputs of the two pair-based baselines.
//!
//! The 2-GNN runs message passing over all `n²` pairs with two fixed binary
//! relations that connect pairs sharing a component, and starts from learned
//! pair embeddings instead of zeros. R-GNN₂ is the lifted state with every
//! triangle over `O³`.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::autodiff::Tensor;
use crate::state::{ObjectId, RelationalState, Vocabulary};
use crate::transform::{
    a0_transform, finish, lift_vocabulary, PairAtom, PairObject, TransformError, TransformedState,
    TRIANGLE_PREDICATE,
};

/// Largest object count accepted by the cubic builders.
pub const DEFAULT_SIZE_CAP: usize = 64;

pub const P1_PREDICATE: &str = "p1";
pub const P2_PREDICATE: &str = "p2";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BaselineError {
    #[error("unsuitable domain: ternary predicates (`{pred}` has arity {arity})")]
    ArityTooHigh { pred: String, arity: usize },
    #[error("nullary predicate `{0}` has no pair to encode")]
    Nullary(String),
    #[error("{n} objects exceed the cubic input cap of {cap}")]
    SizeCap { n: usize, cap: usize },
    #[error(transparent)]
    Transform(#[from] TransformError),
}

/// Row names of the pair-embedding table: `p` and `p_g` for every domain
/// predicate, sorted by name.
pub fn pair_embedding_vocab(vocab: &Vocabulary) -> Result<Vec<String>, BaselineError> {
    let mut names: Vec<(&str, usize)> = vocab
        .domain_predicates()
        .map(|(_, p)| (p.name.as_str(), p.arity))
        .collect();
    names.sort_unstable();
    let mut rows = Vec::with_capacity(names.len() * 2);
    for (name, arity) in names {
        if arity > 2 {
            return Err(BaselineError::ArityTooHigh {
                pred: name.to_string(),
                arity,
            });
        }
        rows.push(name.to_string());
        rows.push(Vocabulary::goal_name(name));
    }
    Ok(rows)
}

/// `(pair node u·n+v, table row)` for every term of
/// `e_{u,v} = Σ_p e_p·[p(u,v) ∈ S] + e_{p_g}·[p(u,v) ∈ G]`, with unary
/// `p(u)` read as `p(u,u)`. Sorted, so each node's terms are in row order.
pub fn pair_embedding_terms(
    state: &RelationalState,
    rows: &BTreeMap<String, u32>,
) -> Result<Vec<(u32, u32)>, BaselineError> {
    let n = state.num_objects() as u32;
    let vocab = state.vocab();
    let mut terms = Vec::new();
    let mut push = |atom: &crate::state::Atom, goal: bool| -> Result<(), BaselineError> {
        let p = vocab.pred(atom.pred);
        let (u, v) = match atom.args.as_slice() {
            [] => return Err(BaselineError::Nullary(p.name.clone())),
            [u] => (*u, *u),
            [u, v] => (*u, *v),
            _ => {
                return Err(BaselineError::ArityTooHigh {
                    pred: p.name.clone(),
                    arity: p.arity,
                })
            }
        };
        let key = if goal {
            Vocabulary::goal_name(&p.name)
        } else {
            p.name.clone()
        };
        if let Some(&row) = rows.get(&key) {
            terms.push((u * n + v, row));
        }
        Ok(())
    };
    for atom in state.atoms() {
        if vocab.pred(atom.pred).origin == crate::state::PredicateOrigin::Domain {
            push(atom, false)?;
        }
    }
    for atom in state.goal() {
        push(atom, true)?;
    }
    terms.sort_unstable();
    Ok(terms)
}

/// Dense `n² × k` initial pair embeddings from a table whose rows follow
/// [`pair_embedding_vocab`].
pub fn initial_pair_embeddings(
    state: &RelationalState,
    table: &Tensor,
) -> Result<Tensor, BaselineError> {
    let names = pair_embedding_vocab(state.vocab())?;
    let rows: BTreeMap<String, u32> = names
        .into_iter()
        .enumerate()
        .map(|(i, n)| (n, i as u32))
        .collect();
    let n = state.num_objects();
    let mut out = Tensor::zeros(n * n, table.cols);
    for (node, row) in pair_embedding_terms(state, &rows)? {
        let k = table.cols;
        for c in 0..k {
            out.data[node as usize * k + c] += table.data[row as usize * k + c];
        }
    }
    Ok(out)
}

/// Binary atoms of the 2-GNN over pair nodes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TwoGnnInput {
    pub num_objects: usize,
    /// `p1(⟨w,v⟩, ⟨u,v⟩)`: same second component.
    pub p1: Vec<[PairObject; 2]>,
    /// `p2(⟨u,w⟩, ⟨u,v⟩)`: same first component.
    pub p2: Vec<[PairObject; 2]>,
}

impl TwoGnnInput {
    pub fn num_atoms(&self) -> usize {
        self.p1.len() + self.p2.len()
    }

    /// Row-major index of a pair among all `n²` pairs.
    pub fn node(&self, p: PairObject) -> u32 {
        p.first * self.num_objects as u32 + p.second
    }
}

pub fn build_2gnn_input(n: usize, cap: usize) -> Result<TwoGnnInput, BaselineError> {
    if n > cap {
        return Err(BaselineError::SizeCap { n, cap });
    }
    let n32 = n as ObjectId;
    let mut p1 = Vec::with_capacity(n * n * n);
    let mut p2 = Vec::with_capacity(n * n * n);
    for u in 0..n32 {
        for v in 0..n32 {
            for w in 0..n32 {
                p1.push([PairObject::new(w, v), PairObject::new(u, v)]);
                p2.push([PairObject::new(u, w), PairObject::new(u, v)]);
            }
        }
    }
    Ok(TwoGnnInput {
        num_objects: n,
        p1,
        p2,
    })
}

/// `A_0(S)` plus `Tri(⟨o,o'⟩, ⟨o',o''⟩, ⟨o,o''⟩)` for all `o, o', o'' ∈ O`.
/// The state is expected to be prepared (goal-augmented, `Obj` atoms added).
pub fn build_rgnn2_input(
    state: &RelationalState,
    cap: usize,
) -> Result<TransformedState, BaselineError> {
    let n = state.num_objects();
    if n > cap {
        return Err(BaselineError::SizeCap { n, cap });
    }
    let a0 = a0_transform(state)?;
    let vocab = Arc::new(lift_vocabulary(state.vocab()));
    let tri = vocab.get(TRIANGLE_PREDICATE).expect("lifted vocabularies carry Tri");
    let mut atoms = a0.atoms;
    let n32 = n as ObjectId;
    for o in 0..n32 {
        for mid in 0..n32 {
            for end in 0..n32 {
                atoms.push(PairAtom {
                    pred: tri,
                    args: vec![
                        PairObject::new(o, mid),
                        PairObject::new(mid, end),
                        PairObject::new(o, end),
                    ],
                });
            }
        }
    }
    Ok(finish(vocab, n, atoms, None))
}
