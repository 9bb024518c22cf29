use std::collections::HashSet;

use super::{AtomTemplate, Problem, Term};
use crate::state::{Atom, ObjectId, PredId, RelationalState};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroundAction {
    pub schema: String,
    pub args: Vec<ObjectId>,
    pub precond: Vec<Atom>,
    pub add: Vec<Atom>,
    pub del: Vec<Atom>,
}

impl GroundAction {
    pub fn applicable(&self, state: &RelationalState) -> bool {
        self.precond.iter().all(|a| state.contains(a))
    }

    /// `(s \ del) ∪ add`.
    pub fn apply(&self, state: &RelationalState) -> RelationalState {
        let mut atoms: Vec<Atom> = state
            .atoms()
            .iter()
            .filter(|a| self.del.binary_search(a).is_err())
            .cloned()
            .collect();
        atoms.extend(self.add.iter().cloned());
        state.with_atoms(atoms)
    }

    pub fn display(&self, state: &RelationalState) -> String {
        let args: Vec<&str> = self
            .args
            .iter()
            .map(|&o| state.objects()[o as usize].as_str())
            .collect();
        format!("({} {})", self.schema, args.join(" "))
    }
}

fn instantiate(t: &AtomTemplate, binding: &[ObjectId], consts: &dyn Fn(&str) -> ObjectId) -> Atom {
    let args = t
        .args
        .iter()
        .map(|term| match term {
            Term::Var(i) => binding[*i],
            Term::Const(c) => consts(c),
        })
        .collect();
    Atom::new(t.pred, args)
}

/// Every type-respecting binding of every schema, in schema order and then
/// lexicographic order of object ids. Delete effects that are also added are
/// dropped so that `add ∩ del = ∅`.
pub fn ground(problem: &Problem) -> Vec<GroundAction> {
    let domain = &problem.domain;
    let state = &problem.state;
    let consts = |c: &str| state.object_id(c).expect("constants are part of every problem");
    let mut out = Vec::new();
    for schema in &domain.schemas {
        let candidates: Vec<Vec<ObjectId>> = schema
            .params
            .iter()
            .map(|(_, ty)| {
                problem
                    .object_types
                    .iter()
                    .enumerate()
                    .filter(|(_, ot)| domain.is_subtype(ot, ty))
                    .map(|(i, _)| i as ObjectId)
                    .collect()
            })
            .collect();
        if candidates.iter().any(Vec::is_empty) {
            continue;
        }
        let mut cursor = vec![0usize; candidates.len()];
        loop {
            let binding: Vec<ObjectId> = cursor
                .iter()
                .zip(&candidates)
                .map(|(&i, c)| c[i])
                .collect();
            let mk = |ts: &[AtomTemplate]| {
                let mut v: Vec<Atom> = ts.iter().map(|t| instantiate(t, &binding, &consts)).collect();
                v.sort_unstable();
                v.dedup();
                v
            };
            let precond = mk(&schema.precond);
            let add = mk(&schema.add);
            let del: Vec<Atom> = mk(&schema.del)
                .into_iter()
                .filter(|a| add.binary_search(a).is_err())
                .collect();
            out.push(GroundAction {
                schema: schema.name.clone(),
                args: binding,
                precond,
                add,
                del,
            });
            if !advance(&mut cursor, &candidates) {
                break;
            }
        }
    }
    out
}

/// Odometer increment, last position fastest. Returns false on wrap-around.
fn advance(cursor: &mut [usize], candidates: &[Vec<ObjectId>]) -> bool {
    for pos in (0..cursor.len()).rev() {
        cursor[pos] += 1;
        if cursor[pos] < candidates[pos].len() {
            return true;
        }
        cursor[pos] = 0;
    }
    false
}

/// Successor function over the ground actions of one problem.
///
/// Actions whose static preconditions (predicates no schema ever adds or
/// deletes) fail in the initial state can never apply and are dropped up
/// front; this is not reachability pruning.
#[derive(Clone, Debug)]
pub struct SuccessorGenerator {
    actions: Vec<GroundAction>,
}

impl SuccessorGenerator {
    pub fn new(problem: &Problem) -> Self {
        let fluent: HashSet<PredId> = problem
            .domain
            .schemas
            .iter()
            .flat_map(|s| s.add.iter().chain(&s.del).map(|t| t.pred))
            .collect();
        let init = &problem.state;
        let actions = ground(problem)
            .into_iter()
            .filter(|a| {
                a.precond
                    .iter()
                    .all(|p| fluent.contains(&p.pred) || init.contains(p))
            })
            .collect();
        Self { actions }
    }

    pub fn actions(&self) -> &[GroundAction] {
        &self.actions
    }

    /// Indices of applicable actions with their successor states.
    pub fn successors(&self, state: &RelationalState) -> Vec<(usize, RelationalState)> {
        successors(state, &self.actions)
    }
}

/// Applicable actions (by index) with their successor states. Successors are
/// deduplicated (first action wins) and ordered by action order.
pub fn successors(state: &RelationalState, actions: &[GroundAction]) -> Vec<(usize, RelationalState)> {
    let mut seen: HashSet<Vec<Atom>> = HashSet::new();
    let mut out = Vec::new();
    for (i, a) in actions.iter().enumerate() {
        if a.applicable(state) {
            let next = a.apply(state);
            if seen.insert(next.atoms().to_vec()) {
                out.push((i, next));
            }
        }
    }
    out
}
