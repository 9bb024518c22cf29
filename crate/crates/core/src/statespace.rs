//! Exhaustive breadth-first expansion of small instances, optimal values
//! `V*` by backward search, and stratified extraction of labeled states.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pddl::{Problem, SuccessorGenerator};
use crate::state::{Atom, RelationalState};

pub const DEFAULT_STATE_CAP: usize = 200_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("state space exceeds the cap of {0} states")]
    CapExceeded(usize),
    #[error("no labeled states to sample from")]
    EmptySpace,
}

/// Reachable transition graph of one instance. Index 0 is the initial state.
#[derive(Clone, Debug)]
pub struct StateSpace {
    pub states: Vec<RelationalState>,
    /// Outgoing edges as `(ground action index, target state index)`.
    pub edges: Vec<Vec<(usize, usize)>>,
    pub goal: Vec<bool>,
}

impl StateSpace {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn index_of(&self) -> HashMap<Vec<Atom>, usize> {
        self.states
            .iter()
            .enumerate()
            .map(|(i, s)| (s.atoms().to_vec(), i))
            .collect()
    }
}

pub fn expand(problem: &Problem, cap: usize) -> Result<StateSpace, OracleError> {
    let gen = SuccessorGenerator::new(problem);
    expand_with(&gen, &problem.state, cap)
}

pub fn expand_with(
    gen: &SuccessorGenerator,
    init: &RelationalState,
    cap: usize,
) -> Result<StateSpace, OracleError> {
    let mut index: HashMap<Vec<Atom>, usize> = HashMap::new();
    let mut states = vec![init.clone()];
    let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new()];
    index.insert(init.atoms().to_vec(), 0);
    if cap == 0 {
        return Err(OracleError::CapExceeded(cap));
    }
    let mut queue = VecDeque::from([0usize]);
    while let Some(i) = queue.pop_front() {
        let current = states[i].clone();
        for (action, next) in gen.successors(&current) {
            let target = match index.get(next.atoms()) {
                Some(&j) => j,
                None => {
                    if states.len() >= cap {
                        return Err(OracleError::CapExceeded(cap));
                    }
                    let j = states.len();
                    index.insert(next.atoms().to_vec(), j);
                    states.push(next);
                    edges.push(Vec::new());
                    queue.push_back(j);
                    j
                }
            };
            edges[i].push((action, target));
        }
    }
    let goal = states.iter().map(RelationalState::is_goal).collect();
    Ok(StateSpace { states, edges, goal })
}

/// Multi-source backward BFS from all goal states under unit costs.
/// `None` marks states from which no goal is reachable.
pub fn optimal_values(space: &StateSpace) -> Vec<Option<u32>> {
    let n = space.len();
    let mut reverse: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (from, out) in space.edges.iter().enumerate() {
        for &(_, to) in out {
            reverse[to].push(from);
        }
    }
    let mut value = vec![None; n];
    let mut queue = VecDeque::new();
    for (i, &g) in space.goal.iter().enumerate() {
        if g {
            value[i] = Some(0);
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let v = value[i].unwrap() + 1;
        for &p in &reverse[i] {
            if value[p].is_none() {
                value[p] = Some(v);
                queue.push_back(p);
            }
        }
    }
    value
}

#[derive(Clone, Debug)]
pub struct LabeledState {
    pub instance: String,
    pub state: RelationalState,
    /// `None` is a dead end (infinite value).
    pub vstar: Option<u32>,
}

/// One expanded, labeled instance.
#[derive(Clone, Debug)]
pub struct LabeledSpace {
    pub instance: String,
    pub space: StateSpace,
    pub values: Vec<Option<u32>>,
}

impl LabeledSpace {
    pub fn new(instance: impl Into<String>, space: StateSpace) -> Self {
        let values = optimal_values(&space);
        Self {
            instance: instance.into(),
            space,
            values,
        }
    }

    pub fn labeled_states(&self) -> impl Iterator<Item = LabeledState> + '_ {
        self.space
            .states
            .iter()
            .zip(&self.values)
            .map(|(s, v)| LabeledState {
                instance: self.instance.clone(),
                state: s.clone(),
                vstar: *v,
            })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SampleOptions {
    pub per_value_cap: usize,
    pub seed: u64,
    /// When set, dead ends are kept and labeled with this finite value.
    pub dead_end_surrogate: Option<u32>,
}

impl SampleOptions {
    pub fn new(per_value_cap: usize, seed: u64) -> Self {
        Self {
            per_value_cap,
            seed,
            dead_end_surrogate: None,
        }
    }
}

/// Stratified sample: states are grouped by `V*`, each group is shuffled
/// under the seed and truncated to the cap, and the result interleaves the
/// groups round-robin in increasing value order.
pub fn sample_training_set(
    spaces: &[LabeledSpace],
    opts: SampleOptions,
) -> Result<Vec<LabeledState>, OracleError> {
    if spaces.iter().all(|s| s.space.is_empty()) {
        return Err(OracleError::EmptySpace);
    }
    let mut strata: BTreeMap<u32, Vec<LabeledState>> = BTreeMap::new();
    for space in spaces {
        for mut ls in space.labeled_states() {
            let v = match (ls.vstar, opts.dead_end_surrogate) {
                (Some(v), _) => v,
                (None, Some(s)) => s,
                (None, None) => continue,
            };
            ls.vstar = Some(v);
            strata.entry(v).or_default().push(ls);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut groups: Vec<std::vec::IntoIter<LabeledState>> = strata
        .into_values()
        .map(|mut g| {
            g.shuffle(&mut rng);
            g.truncate(opts.per_value_cap);
            g.into_iter()
        })
        .collect();
    let mut out = Vec::new();
    loop {
        let before = out.len();
        for g in groups.iter_mut() {
            if let Some(s) = g.next() {
                out.push(s);
            }
        }
        if out.len() == before {
            break;
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize, Debug, PartialEq, Eq)]
pub struct DatasetRecord {
    pub instance: String,
    pub vstar: Option<u32>,
    pub atoms: Vec<String>,
}

impl From<&LabeledState> for DatasetRecord {
    fn from(ls: &LabeledState) -> Self {
        Self {
            instance: ls.instance.clone(),
            vstar: ls.vstar,
            atoms: ls.state.atom_strings(),
        }
    }
}

/// One JSON object per line, fields in fixed order, atoms in canonical order.
pub fn write_dataset<W: Write>(mut out: W, states: &[LabeledState]) -> std::io::Result<()> {
    for ls in states {
        serde_json::to_writer(&mut out, &DatasetRecord::from(ls))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
