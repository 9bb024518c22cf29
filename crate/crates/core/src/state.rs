//! Relational planning states: predicates, ground atoms, and goal/`Obj`
//! augmentation.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index into the object table of an instance.
pub type ObjectId = u32;

/// Name of the static unary predicate marking every object.
pub const OBJ_PREDICATE: &str = "Obj";
/// Suffix appended to a domain predicate to form its goal copy.
pub const GOAL_SUFFIX: &str = "_g";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StateError {
    #[error("predicate `{name}` redeclared with arity {found} (was {expected})")]
    ArityConflict {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("atom over `{pred}` has {found} arguments, predicate arity is {expected}")]
    ArityMismatch {
        pred: String,
        expected: usize,
        found: usize,
    },
    #[error("object id {0} is outside the object table")]
    UnknownObject(ObjectId),
    #[error("goal atom over non-domain predicate `{0}`")]
    NonDomainGoal(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PredId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredicateOrigin {
    Domain,
    GoalCopy,
    StaticObj,
    Triangle,
    PairLift,
    BaselineAux,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Predicate {
    pub name: String,
    pub arity: usize,
    pub origin: PredicateOrigin,
}

/// Predicate symbols of a language, with ids assigned in insertion order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocabulary {
    preds: Vec<Predicate>,
    by_name: HashMap<String, PredId>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a predicate, returning the existing id when the same name
    /// and arity is already present.
    pub fn add(
        &mut self,
        name: &str,
        arity: usize,
        origin: PredicateOrigin,
    ) -> Result<PredId, StateError> {
        if let Some(&id) = self.by_name.get(name) {
            let existing = &self.preds[id.0 as usize];
            if existing.arity != arity {
                return Err(StateError::ArityConflict {
                    name: name.to_string(),
                    expected: existing.arity,
                    found: arity,
                });
            }
            return Ok(id);
        }
        let id = PredId(self.preds.len() as u32);
        self.preds.push(Predicate {
            name: name.to_string(),
            arity,
            origin,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn get(&self, name: &str) -> Option<PredId> {
        self.by_name.get(name).copied()
    }

    pub fn pred(&self, id: PredId) -> &Predicate {
        &self.preds[id.0 as usize]
    }

    pub fn name(&self, id: PredId) -> &str {
        &self.preds[id.0 as usize].name
    }

    pub fn arity(&self, id: PredId) -> usize {
        self.preds[id.0 as usize].arity
    }

    pub fn len(&self) -> usize {
        self.preds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.preds.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (PredId, &Predicate)> {
        self.preds
            .iter()
            .enumerate()
            .map(|(i, p)| (PredId(i as u32), p))
    }

    pub fn domain_predicates(&self) -> impl Iterator<Item = (PredId, &Predicate)> {
        self.iter()
            .filter(|(_, p)| p.origin == PredicateOrigin::Domain)
    }

    pub fn goal_name(name: &str) -> String {
        format!("{name}{GOAL_SUFFIX}")
    }

    /// Adds the goal copy of every domain predicate and the `Obj` marker.
    pub fn with_extensions(mut self) -> Result<Self, StateError> {
        let domain: Vec<(String, usize)> = self
            .domain_predicates()
            .map(|(_, p)| (p.name.clone(), p.arity))
            .collect();
        for (name, arity) in domain {
            self.add(&Self::goal_name(&name), arity, PredicateOrigin::GoalCopy)?;
        }
        self.add(OBJ_PREDICATE, 1, PredicateOrigin::StaticObj)?;
        Ok(self)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Atom {
    pub pred: PredId,
    pub args: Vec<ObjectId>,
}

impl Atom {
    pub fn new(pred: PredId, args: Vec<ObjectId>) -> Self {
        Self { pred, args }
    }
}

/// A set of ground atoms over an object universe together with its goal.
///
/// Atoms and goal are kept sorted and deduplicated, so two states with the
/// same set content are equal field by field.
#[derive(Clone, Debug)]
pub struct RelationalState {
    vocab: Arc<Vocabulary>,
    objects: Arc<Vec<String>>,
    atoms: Vec<Atom>,
    goal: Arc<Vec<Atom>>,
}

impl PartialEq for RelationalState {
    fn eq(&self, other: &Self) -> bool {
        self.atoms == other.atoms
            && self.goal == other.goal
            && self.objects == other.objects
            && (Arc::ptr_eq(&self.vocab, &other.vocab) || self.vocab == other.vocab)
    }
}

impl Eq for RelationalState {}

fn sort_dedup(atoms: &mut Vec<Atom>) {
    atoms.sort_unstable();
    atoms.dedup();
}

impl RelationalState {
    pub fn new(
        vocab: Arc<Vocabulary>,
        objects: Vec<String>,
        atoms: Vec<Atom>,
        goal: Vec<Atom>,
    ) -> Result<Self, StateError> {
        let objects = Arc::new(objects);
        let state = Self::from_parts(vocab, objects, atoms, Arc::new(goal))?;
        for atom in state.goal.iter() {
            if state.vocab.pred(atom.pred).origin != PredicateOrigin::Domain {
                return Err(StateError::NonDomainGoal(
                    state.vocab.name(atom.pred).to_string(),
                ));
            }
        }
        Ok(state)
    }

    fn from_parts(
        vocab: Arc<Vocabulary>,
        objects: Arc<Vec<String>>,
        mut atoms: Vec<Atom>,
        goal: Arc<Vec<Atom>>,
    ) -> Result<Self, StateError> {
        let n = objects.len() as u32;
        for atom in atoms.iter().chain(goal.iter()) {
            let arity = vocab.arity(atom.pred);
            if arity != atom.args.len() {
                return Err(StateError::ArityMismatch {
                    pred: vocab.name(atom.pred).to_string(),
                    expected: arity,
                    found: atom.args.len(),
                });
            }
            if let Some(&bad) = atom.args.iter().find(|&&o| o >= n) {
                return Err(StateError::UnknownObject(bad));
            }
        }
        sort_dedup(&mut atoms);
        let goal = if goal.windows(2).all(|w| w[0] < w[1]) {
            goal
        } else {
            let mut g = goal.as_ref().clone();
            sort_dedup(&mut g);
            Arc::new(g)
        };
        Ok(Self {
            vocab,
            objects,
            atoms,
            goal,
        })
    }

    /// Same objects and goal, different atom set. Arguments are trusted to be
    /// in range (used by successor generation).
    pub fn with_atoms(&self, mut atoms: Vec<Atom>) -> Self {
        sort_dedup(&mut atoms);
        Self {
            vocab: Arc::clone(&self.vocab),
            objects: Arc::clone(&self.objects),
            atoms,
            goal: Arc::clone(&self.goal),
        }
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn objects(&self) -> &[String] {
        &self.objects
    }

    pub fn shared_objects(&self) -> &Arc<Vec<String>> {
        &self.objects
    }

    pub fn num_objects(&self) -> usize {
        self.objects.len()
    }

    pub fn object_ids(&self) -> impl Iterator<Item = ObjectId> {
        0..self.objects.len() as ObjectId
    }

    pub fn object_id(&self, name: &str) -> Option<ObjectId> {
        self.objects
            .iter()
            .position(|o| o == name)
            .map(|i| i as ObjectId)
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn goal(&self) -> &[Atom] {
        &self.goal
    }

    pub fn contains(&self, atom: &Atom) -> bool {
        self.atoms.binary_search(atom).is_ok()
    }

    pub fn is_goal(&self) -> bool {
        self.goal.iter().all(|g| self.contains(g))
    }

    /// Sorted, deduplicated form. States are always stored canonically, so
    /// this is the identity on any state built through the public API.
    pub fn canonicalize(&self) -> Self {
        let mut out = self.clone();
        sort_dedup(&mut out.atoms);
        out
    }

    /// Adds `p_g(o...)` for every goal atom `p(o...)`. Idempotent.
    pub fn augment_goal(&self) -> Self {
        let mut vocab = self.vocab.as_ref().clone();
        let mut extended = false;
        let mut atoms = self.atoms.clone();
        for g in self.goal.iter() {
            let src = self.vocab.pred(g.pred);
            let name = Vocabulary::goal_name(&src.name);
            let id = match vocab.get(&name) {
                Some(id) => id,
                None => {
                    extended = true;
                    vocab
                        .add(&name, src.arity, PredicateOrigin::GoalCopy)
                        .expect("fresh goal predicate")
                }
            };
            atoms.push(Atom::new(id, g.args.clone()));
        }
        sort_dedup(&mut atoms);
        Self {
            vocab: if extended {
                Arc::new(vocab)
            } else {
                Arc::clone(&self.vocab)
            },
            objects: Arc::clone(&self.objects),
            atoms,
            goal: Arc::clone(&self.goal),
        }
    }

    /// Adds one static `Obj(o)` atom per object. Idempotent.
    pub fn add_obj_atoms(&self) -> Self {
        let (vocab, obj) = match self.vocab.get(OBJ_PREDICATE) {
            Some(id) => (Arc::clone(&self.vocab), id),
            None => {
                let mut v = self.vocab.as_ref().clone();
                let id = v
                    .add(OBJ_PREDICATE, 1, PredicateOrigin::StaticObj)
                    .expect("fresh Obj predicate");
                (Arc::new(v), id)
            }
        };
        let mut atoms = self.atoms.clone();
        atoms.extend(self.object_ids().map(|o| Atom::new(obj, vec![o])));
        sort_dedup(&mut atoms);
        Self {
            vocab,
            objects: Arc::clone(&self.objects),
            atoms,
            goal: Arc::clone(&self.goal),
        }
    }

    /// Renames objects by the bijection `perm` (old id `i` becomes `perm[i]`).
    pub fn rename_objects(&self, perm: &[ObjectId]) -> Self {
        assert_eq!(perm.len(), self.objects.len(), "permutation size");
        let mut names = vec![String::new(); perm.len()];
        for (old, &new) in perm.iter().enumerate() {
            names[new as usize] = self.objects[old].clone();
        }
        let map = |a: &Atom| Atom::new(a.pred, a.args.iter().map(|&o| perm[o as usize]).collect());
        let mut atoms: Vec<Atom> = self.atoms.iter().map(map).collect();
        let mut goal: Vec<Atom> = self.goal.iter().map(map).collect();
        sort_dedup(&mut atoms);
        sort_dedup(&mut goal);
        Self {
            vocab: Arc::clone(&self.vocab),
            objects: Arc::new(names),
            atoms,
            goal: Arc::new(goal),
        }
    }

    pub fn display_atom(&self, atom: &Atom) -> String {
        let args: Vec<&str> = atom
            .args
            .iter()
            .map(|&o| self.objects[o as usize].as_str())
            .collect();
        format!("{}({})", self.vocab.name(atom.pred), args.join(","))
    }

    pub fn atom_strings(&self) -> Vec<String> {
        self.atoms.iter().map(|a| self.display_atom(a)).collect()
    }
}

impl fmt::Display for RelationalState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.atom_strings().join(", "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    fn vocab(preds: &[(&str, usize)]) -> Arc<Vocabulary> {
        let mut v = Vocabulary::new();
        for (n, a) in preds {
            v.add(n, *a, PredicateOrigin::Domain).unwrap();
        }
        Arc::new(v)
    }

    #[test]
    fn augment_goal_adds_goal_copies() {
        let v = vocab(&[("At", 1)]);
        let at = v.get("At").unwrap();
        let s = RelationalState::new(
            v,
            vec!["a".into(), "b".into()],
            vec![Atom::new(at, vec![0])],
            vec![Atom::new(at, vec![1])],
        )
        .unwrap();
        let aug = s.augment_goal();
        assert_eq!(aug.atom_strings(), vec!["At(a)", "At_g(b)"]);
        assert_eq!(aug.goal(), s.goal());
    }

    #[test]
    fn augment_goal_empty_goal_is_noop() {
        let v = vocab(&[("At", 1)]);
        let at = v.get("At").unwrap();
        let s = RelationalState::new(v, vec!["a".into()], vec![Atom::new(at, vec![0])], vec![])
            .unwrap();
        assert_eq!(s.augment_goal().atoms(), s.atoms());
    }

    #[test]
    fn augment_goal_two_binary_goals() {
        let v = vocab(&[("On", 2), ("Clear", 1)]);
        let on = v.get("On").unwrap();
        let clear = v.get("Clear").unwrap();
        let s = RelationalState::new(
            v,
            vec!["a".into(), "b".into(), "c".into()],
            vec![Atom::new(clear, vec![0]), Atom::new(on, vec![1, 0])],
            vec![Atom::new(on, vec![0, 1]), Atom::new(on, vec![1, 2])],
        )
        .unwrap();
        let aug = s.augment_goal();
        assert_eq!(aug.atoms().len(), s.atoms().len() + 2);
        let expected: Vec<String> = vec!["On_g(a,b)".into(), "On_g(b,c)".into()];
        let got: Vec<String> = aug
            .atom_strings()
            .into_iter()
            .filter(|a| a.starts_with("On_g"))
            .collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn obj_atoms_one_per_object() {
        let v = vocab(&[("P", 1)]);
        let s = RelationalState::new(v.clone(), vec!["a".into(), "b".into()], vec![], vec![])
            .unwrap();
        let with = s.add_obj_atoms();
        assert_eq!(with.atom_strings(), vec!["Obj(a)", "Obj(b)"]);
        let empty = RelationalState::new(v, vec![], vec![], vec![]).unwrap();
        assert!(empty.add_obj_atoms().atoms().is_empty());
    }

    #[test]
    fn canonical_order_is_lexicographic_by_predicate_then_args() {
        let v = vocab(&[("A", 1), ("B", 1)]);
        let (a, b) = (v.get("A").unwrap(), v.get("B").unwrap());
        let s = RelationalState::new(
            v,
            vec!["x".into()],
            vec![Atom::new(b, vec![0]), Atom::new(a, vec![0])],
            vec![],
        )
        .unwrap();
        assert_eq!(s.atom_strings(), vec!["A(x)", "B(x)"]);
        assert_eq!(s.canonicalize(), s);
    }

    #[test]
    fn rejects_bad_atoms() {
        let v = vocab(&[("P", 2)]);
        let p = v.get("P").unwrap();
        let err = RelationalState::new(v.clone(), vec!["a".into()], vec![Atom::new(p, vec![0])], vec![])
            .unwrap_err();
        assert!(matches!(err, StateError::ArityMismatch { .. }));
        let err = RelationalState::new(v, vec!["a".into()], vec![Atom::new(p, vec![0, 3])], vec![])
            .unwrap_err();
        assert_eq!(err, StateError::UnknownObject(3));
    }

    #[test]
    fn zero_arity_atoms_are_accepted() {
        let v = vocab(&[("HandEmpty", 0)]);
        let h = v.get("HandEmpty").unwrap();
        let s = RelationalState::new(v, vec![], vec![Atom::new(h, vec![])], vec![]).unwrap();
        assert_eq!(s.atom_strings(), vec!["HandEmpty()"]);
    }

    fn random_state(seed: u64) -> (Arc<Vocabulary>, Vec<Atom>, Vec<Atom>) {
        use rand::Rng;
        let v = vocab(&[("P", 1), ("Q", 2), ("R", 3)]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut atoms = Vec::new();
        while atoms.len() < 50 {
            let p = PredId(rng.gen_range(0..3));
            let args = (0..v.arity(p)).map(|_| rng.gen_range(0..6)).collect();
            atoms.push(Atom::new(p, args));
        }
        let goal = vec![Atom::new(PredId(1), vec![0, 1])];
        (v, atoms, goal)
    }

    proptest! {
        #[test]
        fn canonical_form_ignores_insertion_order(seed in any::<u64>(), shuffle in any::<u64>()) {
            let (v, atoms, goal) = random_state(seed);
            let objects: Vec<String> = (0..6).map(|i| format!("o{i}")).collect();
            let a = RelationalState::new(v.clone(), objects.clone(), atoms.clone(), goal.clone()).unwrap();
            let mut shuffled = atoms;
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(shuffle));
            let b = RelationalState::new(v, objects, shuffled, goal).unwrap();
            prop_assert_eq!(a.atoms(), b.atoms());
            prop_assert_eq!(&a, &b);
        }

        #[test]
        fn augmentations_idempotent_and_commute(seed in any::<u64>()) {
            let (v, atoms, goal) = random_state(seed);
            let objects: Vec<String> = (0..6).map(|i| format!("o{i}")).collect();
            let s = RelationalState::new(v, objects, atoms, goal).unwrap();
            let ga = s.augment_goal();
            prop_assert_eq!(ga.augment_goal().atom_strings(), ga.atom_strings());
            let ob = s.add_obj_atoms();
            prop_assert_eq!(ob.add_obj_atoms().atom_strings(), ob.atom_strings());
            let mut x = ga.add_obj_atoms().atom_strings();
            let mut y = ob.augment_goal().atom_strings();
            x.sort();
            y.sort();
            prop_assert_eq!(x, y);
            prop_assert_eq!(ga.goal(), s.goal());
            prop_assert_eq!(ob.goal(), s.goal());
        }
    }
}
