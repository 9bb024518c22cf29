//! Greedy value-based policy execution and coverage statistics.

use std::collections::{HashMap, HashSet};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::net::{Model, NetError};
use crate::pddl::{Problem, SuccessorGenerator};
use crate::state::{Atom, RelationalState};
use crate::statespace::{expand_with, optimal_values, StateSpace};

pub const DEFAULT_STEP_CAP: usize = 1000;

/// Anything that scores states; lower is closer to the goal.
pub trait ValueFunction: Sync {
    fn values(&self, states: &[RelationalState]) -> Result<Vec<f64>, NetError>;
}

impl ValueFunction for Model {
    fn values(&self, states: &[RelationalState]) -> Result<Vec<f64>, NetError> {
        Model::values(self, states)
    }
}

/// Exact `V*` read from expanded state spaces; states not in any of them, and
/// dead ends, score `+∞`.
#[derive(Clone, Debug, Default)]
pub struct OracleValues {
    table: HashMap<(Vec<Atom>, Vec<Atom>), u32>,
}

impl OracleValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_space(space: &StateSpace) -> Self {
        let mut o = Self::new();
        o.add_space(space);
        o
    }

    pub fn add_space(&mut self, space: &StateSpace) {
        for (s, v) in space.states.iter().zip(optimal_values(space)) {
            if let Some(v) = v {
                self.table.insert(Self::key(s), v);
            }
        }
    }

    fn key(state: &RelationalState) -> (Vec<Atom>, Vec<Atom>) {
        (state.goal().to_vec(), state.atoms().to_vec())
    }

    pub fn get(&self, state: &RelationalState) -> Option<u32> {
        self.table.get(&Self::key(state)).copied()
    }
}

impl ValueFunction for OracleValues {
    fn values(&self, states: &[RelationalState]) -> Result<Vec<f64>, NetError> {
        Ok(states
            .iter()
            .map(|s| self.get(s).map_or(f64::INFINITY, f64::from))
            .collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Goal,
    StepCap,
    DeadEnd,
    /// The value function failed on a successor.
    Error,
}

impl Termination {
    pub fn tag(self) -> &'static str {
        match self {
            Termination::Goal => "goal",
            Termination::StepCap => "step-cap",
            Termination::DeadEnd => "dead-end",
            Termination::Error => "error",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalRecord {
    pub instance: String,
    pub solved: bool,
    pub steps: usize,
    pub vstar_initial: Option<u32>,
    pub termination: Termination,
    /// Ground actions taken, in order.
    pub plan: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PolicyOptions {
    pub step_cap: usize,
    /// Break ties uniformly at random under this seed instead of by
    /// canonical state order.
    pub tie_seed: Option<u64>,
    /// Expand each instance up to this many states to record `V*(init)`.
    pub oracle_cap: Option<usize>,
}

impl Default for PolicyOptions {
    fn default() -> Self {
        Self {
            step_cap: DEFAULT_STEP_CAP,
            tie_seed: None,
            oracle_cap: None,
        }
    }
}

/// Moves greedily to the unvisited successor of lowest value until the goal,
/// a state without unvisited successors, or the step cap.
pub fn run_policy(
    instance: &str,
    problem: &Problem,
    vf: &dyn ValueFunction,
    opts: PolicyOptions,
) -> EvalRecord {
    let gen = SuccessorGenerator::new(problem);
    let vstar_initial = opts.oracle_cap.and_then(|cap| {
        expand_with(&gen, &problem.state, cap)
            .ok()
            .and_then(|space| optimal_values(&space)[0])
    });
    let mut rng = opts.tie_seed.map(ChaCha8Rng::seed_from_u64);
    let mut current = problem.state.clone();
    let mut visited: HashSet<Vec<Atom>> = HashSet::from([current.atoms().to_vec()]);
    let mut plan = Vec::new();
    let termination = loop {
        if current.is_goal() {
            break Termination::Goal;
        }
        if plan.len() >= opts.step_cap {
            break Termination::StepCap;
        }
        let (actions, succs): (Vec<usize>, Vec<RelationalState>) = gen
            .successors(&current)
            .into_iter()
            .filter(|(_, s)| !visited.contains(s.atoms()))
            .unzip();
        if succs.is_empty() {
            break Termination::DeadEnd;
        }
        let values = match vf.values(&succs) {
            Ok(v) => v,
            Err(_) => break Termination::Error,
        };
        let best = values.iter().copied().fold(f64::INFINITY, f64::min);
        let mut tied: Vec<usize> = (0..succs.len())
            .filter(|&i| values[i] == best)
            .collect();
        if tied.is_empty() {
            // all NaN
            tied = (0..succs.len()).collect();
        }
        let pick = match rng.as_mut() {
            Some(rng) => *tied.choose(rng).unwrap(),
            None => *tied.iter().min_by(|&&a, &&b| succs[a].atoms().cmp(succs[b].atoms())).unwrap(),
        };
        plan.push(gen.actions()[actions[pick]].display(&current));
        current = succs.into_iter().nth(pick).unwrap();
        visited.insert(current.atoms().to_vec());
    };
    EvalRecord {
        instance: instance.to_string(),
        solved: termination == Termination::Goal,
        steps: plan.len(),
        vstar_initial,
        termination,
        plan,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteSummary {
    pub solved: usize,
    pub total: usize,
    /// Plan-length statistics over solved instances only.
    pub total_length: usize,
    pub median_length: Option<f64>,
    pub mean_length: Option<f64>,
}

impl SuiteSummary {
    pub fn from_records(records: &[EvalRecord]) -> Self {
        let mut lengths: Vec<usize> = records.iter().filter(|r| r.solved).map(|r| r.steps).collect();
        lengths.sort_unstable();
        let n = lengths.len();
        let total_length = lengths.iter().sum();
        let median_length = match n {
            0 => None,
            _ if n % 2 == 1 => Some(lengths[n / 2] as f64),
            _ => Some((lengths[n / 2 - 1] + lengths[n / 2]) as f64 / 2.0),
        };
        Self {
            solved: n,
            total: records.len(),
            total_length,
            median_length,
            mean_length: (n > 0).then(|| total_length as f64 / n as f64),
        }
    }

    /// Fraction solved; `None` on an empty suite.
    pub fn coverage(&self) -> Option<f64> {
        (self.total > 0).then(|| self.solved as f64 / self.total as f64)
    }
}

impl std::fmt::Display for SuiteSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "coverage {}/{}", self.solved, self.total)?;
        if let Some(c) = self.coverage() {
            write!(f, " ({:.2}%)", 100.0 * c)?;
        }
        match (self.median_length, self.mean_length) {
            (Some(med), Some(mean)) => write!(
                f,
                ", plan length total {} median {med} mean {mean:.2}",
                self.total_length
            ),
            _ => Ok(()),
        }
    }
}

/// Runs the policy on every instance, in parallel, keeping input order.
pub fn evaluate_suite(
    instances: &[(String, Problem)],
    vf: &dyn ValueFunction,
    opts: PolicyOptions,
) -> (SuiteSummary, Vec<EvalRecord>) {
    let records: Vec<EvalRecord> = instances
        .par_iter()
        .map(|(name, p)| run_policy(name, p, vf, opts))
        .collect();
    (SuiteSummary::from_records(&records), records)
}

pub fn write_records_csv<W: Write>(mut out: W, records: &[EvalRecord]) -> std::io::Result<()> {
    writeln!(out, "instance,solved,steps,vstar_initial,termination")?;
    for r in records {
        let vstar = r.vstar_initial.map_or(String::new(), |v| v.to_string());
        writeln!(out, "{},{},{},{},{}", r.instance, r.solved, r.steps, vstar, r.termination.tag())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::{gen_navig_xy, DomainKind, NavigLayout};
    use crate::pddl::{parse_domain, parse_problem};
    use crate::statespace::{expand, DEFAULT_STATE_CAP};
    use std::collections::BTreeSet;
    use std::sync::Arc;

    struct Constant;
    impl ValueFunction for Constant {
        fn values(&self, states: &[RelationalState]) -> Result<Vec<f64>, NetError> {
            Ok(vec![1.0; states.len()])
        }
    }

    fn navig(layout: &NavigLayout) -> Problem {
        let d = Arc::new(parse_domain(DomainKind::NavigXy.domain_pddl()).unwrap());
        parse_problem(&layout.to_pddl("p"), &d).unwrap()
    }

    fn corridor(len: usize, robot: usize, goal: usize) -> NavigLayout {
        NavigLayout {
            width: len,
            height: 1,
            blocked: BTreeSet::new(),
            robot: (robot, 0),
            goal: (goal, 0),
        }
    }

    #[test]
    fn goal_initial_state_takes_zero_steps() {
        let p = navig(&corridor(3, 1, 1));
        let r = run_policy("p", &p, &Constant, PolicyOptions::default());
        assert!(r.solved);
        assert_eq!(r.steps, 0);
        assert_eq!(r.termination, Termination::Goal);
    }

    #[test]
    fn constant_value_solves_corridor() {
        let p = navig(&corridor(6, 0, 5));
        let r = run_policy("c", &p, &Constant, PolicyOptions::default());
        assert!(r.solved);
        assert_eq!(r.steps, 5);
        // from the middle, the tie goes to the lower coordinate and the robot
        // walks into the dead end at x1
        let p = navig(&corridor(6, 2, 5));
        let r = run_policy("c", &p, &Constant, PolicyOptions::default());
        assert_eq!(r.termination, Termination::DeadEnd);
        assert_eq!(r.steps, 2);
    }

    #[test]
    fn oracle_values_give_optimal_plans() {
        for seed in 0..10 {
            let layout = gen_navig_xy(4, 4, 0.25, seed).unwrap();
            let p = navig(&layout);
            let oracle = OracleValues::from_space(&expand(&p, DEFAULT_STATE_CAP).unwrap());
            let opts = PolicyOptions {
                oracle_cap: Some(DEFAULT_STATE_CAP),
                ..Default::default()
            };
            let r = run_policy("p", &p, &oracle, opts);
            assert!(r.solved);
            assert_eq!(Some(r.steps as u32), r.vstar_initial);
            assert_eq!(r.vstar_initial, layout.distance());
        }
    }

    #[test]
    fn step_cap_is_respected() {
        let p = navig(&corridor(8, 0, 7));
        let opts = PolicyOptions {
            step_cap: 3,
            ..Default::default()
        };
        let r = run_policy("p", &p, &Constant, opts);
        assert_eq!(r.termination, Termination::StepCap);
        assert_eq!(r.steps, 3);
        assert!(!r.solved);
    }

    #[test]
    fn tie_seed_is_deterministic() {
        let layout = gen_navig_xy(4, 4, 0.0, 2).unwrap();
        let p = navig(&layout);
        let opts = PolicyOptions {
            tie_seed: Some(9),
            ..Default::default()
        };
        let a = run_policy("p", &p, &Constant, opts);
        let b = run_policy("p", &p, &Constant, opts);
        assert_eq!(a, b);
    }

    #[test]
    fn suite_summary_statistics() {
        let empty = SuiteSummary::from_records(&[]);
        assert_eq!((empty.solved, empty.total), (0, 0));
        assert_eq!(empty.coverage(), None);
        let rec = |solved, steps| EvalRecord {
            instance: "i".into(),
            solved,
            steps,
            vstar_initial: None,
            termination: if solved { Termination::Goal } else { Termination::StepCap },
            plan: vec![],
        };
        let s = SuiteSummary::from_records(&[rec(true, 4), rec(false, 1000), rec(true, 7), rec(true, 5)]);
        assert_eq!(s.coverage(), Some(0.75));
        assert_eq!(s.total_length, 16);
        assert_eq!(s.median_length, Some(5.0));
        assert!((s.mean_length.unwrap() - 16.0 / 3.0).abs() < 1e-12);
        let mut buf = Vec::new();
        write_records_csv(&mut buf, &[rec(true, 4)]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "instance,solved,steps,vstar_initial,termination\ni,true,4,,goal\n"
        );
    }

    #[test]
    fn suite_with_oracle_has_full_coverage() {
        let instances: Vec<(String, Problem)> = (0..5)
            .map(|s| (format!("p{s}"), navig(&gen_navig_xy(3, 3, 0.2, s).unwrap())))
            .collect();
        let mut oracle = OracleValues::new();
        for (_, p) in &instances {
            oracle.add_space(&expand(p, DEFAULT_STATE_CAP).unwrap());
        }
        let opts = PolicyOptions {
            oracle_cap: Some(DEFAULT_STATE_CAP),
            ..Default::default()
        };
        let (summary, records) = evaluate_suite(&instances, &oracle, opts);
        assert_eq!(summary.coverage(), Some(1.0));
        for r in &records {
            assert_eq!(Some(r.steps as u32), r.vstar_initial);
        }
    }
}
