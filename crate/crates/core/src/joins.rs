//! Relational joins over binary relations: formulas with free variables
//! among `{x, y}` closed under atoms, negated atoms, `∧`, `∨` and the
//! composition quantifier `∃z[φ(·,·) ∧ ψ(·,·)]`, evaluated bottom-up to
//! their denotation `A^φ ⊆ U²`. Also the distance-to-goal family `φ_k` of
//! Navig-xy.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::state::{ObjectId, RelationalState};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum JoinError {
    #[error("unknown relation `{0}` (must be unary or binary in the vocabulary)")]
    UnknownRelation(String),
}

/// Free variable of a join.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    X,
    Y,
}

/// Variable inside a composition: the two free ones or the bound `z`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slot {
    X,
    Y,
    Z,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum JoinFormula {
    Rel { name: String, args: [Var; 2] },
    NotRel { name: String, args: [Var; 2] },
    And(Arc<JoinFormula>, Arc<JoinFormula>),
    Or(Arc<JoinFormula>, Arc<JoinFormula>),
    /// `∃z[left(l₀, l₁) ∧ right(r₀, r₁)]`: each operand is a join in
    /// `(x, y)` instantiated with the given slots.
    Exists {
        left: Arc<JoinFormula>,
        left_args: [Slot; 2],
        right: Arc<JoinFormula>,
        right_args: [Slot; 2],
    },
}

pub type Formula = Arc<JoinFormula>;

impl JoinFormula {
    /// `R(x, y)`.
    pub fn rel(name: &str) -> Formula {
        Self::rel_args(name, [Var::X, Var::Y])
    }

    /// `R(y, x)`.
    pub fn rel_inv(name: &str) -> Formula {
        Self::rel_args(name, [Var::Y, Var::X])
    }

    pub fn rel_args(name: &str, args: [Var; 2]) -> Formula {
        Arc::new(JoinFormula::Rel {
            name: name.to_string(),
            args,
        })
    }

    /// `¬R(x, y)`.
    pub fn not_rel(name: &str) -> Formula {
        Self::not_rel_args(name, [Var::X, Var::Y])
    }

    pub fn not_rel_args(name: &str, args: [Var; 2]) -> Formula {
        Arc::new(JoinFormula::NotRel {
            name: name.to_string(),
            args,
        })
    }

    pub fn and(a: Formula, b: Formula) -> Formula {
        Arc::new(JoinFormula::And(a, b))
    }

    pub fn or(a: Formula, b: Formula) -> Formula {
        Arc::new(JoinFormula::Or(a, b))
    }

    pub fn exists(left: Formula, left_args: [Slot; 2], right: Formula, right_args: [Slot; 2]) -> Formula {
        Arc::new(JoinFormula::Exists {
            left,
            left_args,
            right,
            right_args,
        })
    }

    /// Relational composition `∃z[φ(x, z) ∧ ψ(z, y)]`.
    pub fn compose(phi: Formula, psi: Formula) -> Formula {
        Self::exists(phi, [Slot::X, Slot::Z], psi, [Slot::Z, Slot::Y])
    }

    /// Nesting depth of `∃`.
    pub fn quantifier_depth(&self) -> usize {
        let mut memo = HashMap::new();
        self.depth_memo(&mut memo)
    }

    fn depth_memo(&self, memo: &mut HashMap<*const JoinFormula, usize>) -> usize {
        let key = self as *const _;
        if let Some(&d) = memo.get(&key) {
            return d;
        }
        let d = match self {
            JoinFormula::Rel { .. } | JoinFormula::NotRel { .. } => 0,
            JoinFormula::And(a, b) | JoinFormula::Or(a, b) => a.depth_memo(memo).max(b.depth_memo(memo)),
            JoinFormula::Exists { left, right, .. } => 1 + left.depth_memo(memo).max(right.depth_memo(memo)),
        };
        memo.insert(key, d);
        d
    }

    /// Number of structurally distinct subformulas (including itself).
    pub fn num_subformulas(&self) -> usize {
        let mut intern = Interner::default();
        intern.id(self);
        intern.table.len()
    }

    /// Relation names mentioned, sorted and deduplicated.
    pub fn relations(&self) -> Vec<String> {
        fn walk(f: &JoinFormula, seen: &mut std::collections::HashSet<*const JoinFormula>, out: &mut Vec<String>) {
            if !seen.insert(f as *const _) {
                return;
            }
            match f {
                JoinFormula::Rel { name, .. } | JoinFormula::NotRel { name, .. } => out.push(name.clone()),
                JoinFormula::And(a, b) | JoinFormula::Or(a, b) => {
                    walk(a, seen, out);
                    walk(b, seen, out);
                }
                JoinFormula::Exists { left, right, .. } => {
                    walk(left, seen, out);
                    walk(right, seen, out);
                }
            }
        }
        let mut out = Vec::new();
        walk(self, &mut Default::default(), &mut out);
        out.sort();
        out.dedup();
        out
    }

    fn fmt_in(&self, f: &mut fmt::Formatter<'_>, vars: [&str; 2], depth: usize) -> fmt::Result {
        let var = |v: Var| match v {
            Var::X => vars[0],
            Var::Y => vars[1],
        };
        match self {
            JoinFormula::Rel { name, args } => write!(f, "{name}({},{})", var(args[0]), var(args[1])),
            JoinFormula::NotRel { name, args } => write!(f, "¬{name}({},{})", var(args[0]), var(args[1])),
            JoinFormula::And(a, b) | JoinFormula::Or(a, b) => {
                let op = if matches!(self, JoinFormula::And(..)) { "∧" } else { "∨" };
                f.write_str("(")?;
                a.fmt_in(f, vars, depth)?;
                write!(f, " {op} ")?;
                b.fmt_in(f, vars, depth)?;
                f.write_str(")")
            }
            JoinFormula::Exists {
                left,
                left_args,
                right,
                right_args,
            } => {
                let z = format!("z{depth}");
                let slot = |s: Slot| match s {
                    Slot::X => vars[0].to_string(),
                    Slot::Y => vars[1].to_string(),
                    Slot::Z => z.clone(),
                };
                let (l0, l1, r0, r1) = (slot(left_args[0]), slot(left_args[1]), slot(right_args[0]), slot(right_args[1]));
                write!(f, "∃{z}[")?;
                left.fmt_in(f, [&l0, &l1], depth + 1)?;
                f.write_str(" ∧ ")?;
                right.fmt_in(f, [&r0, &r1], depth + 1)?;
                f.write_str("]")
            }
        }
    }
}

impl fmt::Display for JoinFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_in(f, ["x", "y"], 0)
    }
}

#[derive(Default)]
struct Interner {
    table: HashMap<(u8, String, [u32; 4]), usize>,
    by_ptr: HashMap<*const JoinFormula, usize>,
}

impl Interner {
    fn id(&mut self, f: &JoinFormula) -> usize {
        if let Some(&id) = self.by_ptr.get(&(f as *const _)) {
            return id;
        }
        let slot = |s: Slot| s as u32;
        let key = match f {
            JoinFormula::Rel { name, args } => (0, name.clone(), [args[0] as u32, args[1] as u32, 0, 0]),
            JoinFormula::NotRel { name, args } => (1, name.clone(), [args[0] as u32, args[1] as u32, 0, 0]),
            JoinFormula::And(a, b) => (2, String::new(), [self.id(a) as u32, self.id(b) as u32, 0, 0]),
            JoinFormula::Or(a, b) => (3, String::new(), [self.id(a) as u32, self.id(b) as u32, 0, 0]),
            JoinFormula::Exists {
                left,
                left_args,
                right,
                right_args,
            } => (
                4,
                format!("{}{}{}{}", slot(left_args[0]), slot(left_args[1]), slot(right_args[0]), slot(right_args[1])),
                [self.id(left) as u32, self.id(right) as u32, 0, 0],
            ),
        };
        let next = self.table.len();
        let id = *self.table.entry(key).or_insert(next);
        self.by_ptr.insert(f as *const _, id);
        id
    }
}

/// A binary relation over `n` objects as a row-major boolean matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Relation {
    pub n: usize,
    pub bits: Vec<bool>,
}

impl Relation {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            bits: vec![false; n * n],
        }
    }

    pub fn contains(&self, u: usize, v: usize) -> bool {
        self.bits[u * self.n + v]
    }

    pub fn insert(&mut self, u: usize, v: usize) {
        self.bits[u * self.n + v] = true;
    }

    /// Pairs in row-major order.
    pub fn pairs(&self) -> Vec<(ObjectId, ObjectId)> {
        (0..self.n * self.n)
            .filter(|&i| self.bits[i])
            .map(|i| ((i / self.n) as ObjectId, (i % self.n) as ObjectId))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn with_args(&self, args: [Var; 2]) -> Relation {
        let mut out = Relation::empty(self.n);
        for u in 0..self.n {
            for v in 0..self.n {
                let pick = |a: Var| if a == Var::X { u } else { v };
                out.bits[u * self.n + v] = self.contains(pick(args[0]), pick(args[1]));
            }
        }
        out
    }
}

/// Binary (and diagonally lifted unary) relations of one state, with goal
/// atoms available as `p_g`. Memoizes subformula denotations by node.
pub struct JoinEvaluator {
    n: usize,
    relations: HashMap<String, Relation>,
    memo: HashMap<*const JoinFormula, Relation>,
    // keeps memoized nodes alive so their addresses are not reused
    pinned: Vec<Formula>,
}

impl JoinEvaluator {
    pub fn new(state: &RelationalState) -> Self {
        let state = state.augment_goal();
        let vocab = state.vocab();
        let n = state.num_objects();
        let mut relations: HashMap<String, Relation> = vocab
            .iter()
            .filter(|(_, p)| p.arity == 1 || p.arity == 2)
            .map(|(_, p)| (p.name.clone(), Relation::empty(n)))
            .collect();
        for atom in state.atoms() {
            let name = vocab.name(atom.pred);
            if let Some(rel) = relations.get_mut(name) {
                let (u, v) = match atom.args[..] {
                    [u] => (u, u),
                    [u, v] => (u, v),
                    _ => unreachable!(),
                };
                rel.insert(u as usize, v as usize);
            }
        }
        Self {
            n,
            relations,
            memo: HashMap::new(),
            pinned: Vec::new(),
        }
    }

    pub fn num_objects(&self) -> usize {
        self.n
    }

    pub fn relation(&self, name: &str) -> Result<&Relation, JoinError> {
        self.relations
            .get(name)
            .ok_or_else(|| JoinError::UnknownRelation(name.to_string()))
    }

    pub fn evaluate(&mut self, f: &Formula) -> Result<Relation, JoinError> {
        let key = Arc::as_ptr(f);
        if let Some(r) = self.memo.get(&key) {
            return Ok(r.clone());
        }
        let n = self.n;
        let out = match f.as_ref() {
            JoinFormula::Rel { name, args } => self.relation(name)?.with_args(*args),
            JoinFormula::NotRel { name, args } => {
                let mut r = self.relation(name)?.with_args(*args);
                r.bits.iter_mut().for_each(|b| *b = !*b);
                r
            }
            JoinFormula::And(a, b) | JoinFormula::Or(a, b) => {
                let (ra, rb) = (self.evaluate(a)?, self.evaluate(b)?);
                let and = matches!(f.as_ref(), JoinFormula::And(..));
                Relation {
                    n,
                    bits: ra
                        .bits
                        .iter()
                        .zip(&rb.bits)
                        .map(|(&p, &q)| if and { p && q } else { p || q })
                        .collect(),
                }
            }
            JoinFormula::Exists {
                left,
                left_args,
                right,
                right_args,
            } => {
                let (rl, rr) = (self.evaluate(left)?, self.evaluate(right)?);
                let mut out = Relation::empty(n);
                for u in 0..n {
                    for v in 0..n {
                        out.bits[u * n + v] = (0..n).any(|w| {
                            let pick = |s: Slot| match s {
                                Slot::X => u,
                                Slot::Y => v,
                                Slot::Z => w,
                            };
                            rl.contains(pick(left_args[0]), pick(left_args[1]))
                                && rr.contains(pick(right_args[0]), pick(right_args[1]))
                        });
                    }
                }
                out
            }
        };
        self.memo.insert(key, out.clone());
        self.pinned.push(Arc::clone(f));
        Ok(out)
    }
}

/// `A^φ` for the state viewed as a structure over its objects.
pub fn evaluate_join(formula: &Formula, state: &RelationalState) -> Result<Relation, JoinError> {
    JoinEvaluator::new(state).evaluate(formula)
}

/// `Adj-x(x, x') = Succ-x(x, x') ∨ Succ-x(x', x)`, likewise for `y`.
pub fn navig_adjacency(succ: &str) -> Formula {
    JoinFormula::or(JoinFormula::rel(succ), JoinFormula::rel_inv(succ))
}

/// `φ_0, ..., φ_kmax` for Navig-xy, with shared subformulas:
/// `φ_0 = at_g(x, y)` and
/// `φ_{k+1} = ¬blocked(x, y) ∧ (∃z[φ_k(z, y) ∧ Adj-x(x, z)] ∨ ∃z[φ_k(x, z) ∧ Adj-y(y, z)])`.
pub fn navig_phi(kmax: usize) -> Vec<Formula> {
    let adj_x = navig_adjacency("succ-x");
    let adj_y = navig_adjacency("succ-y");
    let mut phis = vec![JoinFormula::rel("at_g")];
    for k in 0..kmax {
        let prev = Arc::clone(&phis[k]);
        let step_x = JoinFormula::exists(Arc::clone(&prev), [Slot::Z, Slot::Y], Arc::clone(&adj_x), [Slot::X, Slot::Z]);
        let step_y = JoinFormula::exists(prev, [Slot::X, Slot::Z], Arc::clone(&adj_y), [Slot::Y, Slot::Z]);
        phis.push(JoinFormula::and(JoinFormula::not_rel("blocked"), JoinFormula::or(step_x, step_y)));
    }
    phis
}

/// `Dist_k(S) = ∃xy[at(x, y) ∧ φ_k(x, y)]` for `k = 0..=kmax`.
pub fn navig_dist(state: &RelationalState, kmax: usize) -> Result<Vec<bool>, JoinError> {
    let mut ev = JoinEvaluator::new(state);
    let at = ev.relation("at")?.clone();
    navig_phi(kmax)
        .iter()
        .map(|phi| {
            let r = ev.evaluate(phi)?;
            Ok(at.bits.iter().zip(&r.bits).any(|(&a, &b)| a && b))
        })
        .collect()
}

/// Smallest `k ≤ kmax` with `S ⊨ Dist_k`.
pub fn min_dist_k(state: &RelationalState, kmax: usize) -> Result<Option<usize>, JoinError> {
    Ok(navig_dist(state, kmax)?.iter().position(|&b| b))
}

/// Architecture parameters read off a collection of joins: `t` is the
/// largest quantifier depth, `k` the total and `L` the largest number of
/// subformulas. Reported for guidance only.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SuggestedParameters {
    pub t: usize,
    pub k: usize,
    pub layers: usize,
}

pub fn suggested_parameters(joins: &[Formula]) -> SuggestedParameters {
    let sizes: Vec<usize> = joins.iter().map(|f| f.num_subformulas()).collect();
    SuggestedParameters {
        t: joins.iter().map(|f| f.quantifier_depth()).max().unwrap_or(0),
        k: sizes.iter().sum(),
        layers: sizes.iter().copied().max().unwrap_or(0),
    }
}
