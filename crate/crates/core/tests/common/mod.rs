//! Helpers shared by the integration tests: instance sampling and oracles
//! written independently of the library's own search and join code.

#![allow(dead_code)]

use std::collections::{BTreeSet, VecDeque};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rgnn::domains::{DomainKind, GeneratorSpec, NavigLayout};
use rgnn::pddl::{parse_domain, parse_problem, Problem, SuccessorGenerator};
use rgnn::state::RelationalState;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A small generator setting for every built-in domain.
pub fn small_spec(kind: DomainKind, rng: &mut ChaCha8Rng) -> GeneratorSpec {
    let mut spec = match kind {
        DomainKind::NavigXy => GeneratorSpec::new(kind, rng.gen_range(2..=4), rng.gen_range(2..=4), rng.gen()),
        DomainKind::VisitallXy | DomainKind::Visitall => {
            GeneratorSpec::new(kind, rng.gen_range(2..=3), rng.gen_range(2..=3), rng.gen())
        }
        DomainKind::Gripper => GeneratorSpec::new(kind, rng.gen_range(1..=3), 1, rng.gen()),
        DomainKind::BlocksS | DomainKind::BlocksM => GeneratorSpec::new(kind, rng.gen_range(2..=4), 1, rng.gen()),
        DomainKind::Vacuum => GeneratorSpec::new(kind, rng.gen_range(3..=5), rng.gen_range(1..=2), rng.gen()),
    };
    if kind == DomainKind::NavigXy {
        spec.density = 0.2;
    }
    spec
}

pub fn problem_of(spec: &GeneratorSpec, name: &str) -> Problem {
    let domain = Arc::new(parse_domain(spec.domain.domain_pddl()).unwrap());
    parse_problem(&spec.instance(0, name).unwrap(), &domain).unwrap()
}

/// State reached by a random walk of up to `steps` actions.
pub fn random_walk(problem: &Problem, steps: usize, rng: &mut ChaCha8Rng) -> RelationalState {
    let gen = SuccessorGenerator::new(problem);
    let mut s = problem.state.clone();
    for _ in 0..rng.gen_range(0..=steps) {
        let succ = gen.successors(&s);
        match succ.choose(rng) {
            Some((_, next)) => s = next.clone(),
            None => break,
        }
    }
    s
}

/// `count` random reachable states spread over all built-in domains.
pub fn states_across_domains(count: usize, seed: u64) -> Vec<(DomainKind, RelationalState)> {
    let mut rng = rng(seed);
    (0..count)
        .map(|i| {
            let kind = DomainKind::ALL[i % DomainKind::ALL.len()];
            let spec = small_spec(kind, &mut rng);
            let p = problem_of(&spec, &format!("s{i}"));
            (kind, random_walk(&p, 6, &mut rng))
        })
        .collect()
}

/// Optimal plan lengths by forward BFS to goal states, using only the
/// successor function: maps canonical atoms to `V*`.
pub fn bfs_values(problem: &Problem) -> Vec<(RelationalState, Option<u32>)> {
    let gen = SuccessorGenerator::new(problem);
    let mut order = vec![problem.state.clone()];
    let mut i = 0;
    let mut succ: Vec<Vec<usize>> = Vec::new();
    let mut index = std::collections::HashMap::new();
    index.insert(problem.state.atoms().to_vec(), 0usize);
    while i < order.len() {
        let mut out = Vec::new();
        for (_, next) in gen.successors(&order[i]) {
            let key = next.atoms().to_vec();
            let j = *index.entry(key).or_insert_with(|| {
                order.push(next.clone());
                order.len() - 1
            });
            out.push(j);
        }
        succ.push(out);
        i += 1;
    }
    // Value iteration to a fixpoint: V(s) = 0 at goals, else 1 + min V(succ).
    let mut v: Vec<Option<u32>> = order.iter().map(|s| s.is_goal().then_some(0)).collect();
    loop {
        let mut changed = false;
        for s in 0..order.len() {
            if v[s] == Some(0) {
                continue;
            }
            let best = succ[s].iter().filter_map(|&t| v[t]).min().map(|m| m + 1);
            if best.is_some() && (v[s].is_none() || best < v[s]) {
                v[s] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    order.into_iter().zip(v).collect()
}

/// Grid BFS distance from `from` to the goal cell of a Navig-xy layout.
pub fn grid_distance(l: &NavigLayout, from: (usize, usize)) -> Option<u32> {
    let free = |(x, y): (usize, usize)| x < l.width && y < l.height && !l.blocked.contains(&(x, y));
    let mut dist = std::collections::HashMap::new();
    let mut q = VecDeque::from([from]);
    dist.insert(from, 0u32);
    while let Some(c) = q.pop_front() {
        if c == l.goal {
            return Some(dist[&c]);
        }
        let d = dist[&c];
        let (x, y) = c;
        for n in [(x + 1, y), (x.wrapping_sub(1), y), (x, y + 1), (x, y.wrapping_sub(1))] {
            if free(n) && !dist.contains_key(&n) {
                dist.insert(n, d + 1);
                q.push_back(n);
            }
        }
    }
    None
}

/// Zero-based robot cell `(x, y)` of a Navig-xy state, read from its `at`
/// atom (objects are named `x1`, `y1`, ...).
pub fn navig_robot(s: &RelationalState) -> (usize, usize) {
    let at = s.vocab().get("at").unwrap();
    let a = s.atoms().iter().find(|a| a.pred == at).unwrap();
    let num = |o: u32| s.objects()[o as usize][1..].parse::<usize>().unwrap() - 1;
    (num(a.args[0]), num(a.args[1]))
}

/// Uniformly random permutation of `0..n`.
pub fn permutation(n: usize, rng: &mut ChaCha8Rng) -> Vec<u32> {
    let mut p: Vec<u32> = (0..n as u32).collect();
    p.shuffle(rng);
    p
}

/// Pairs `(a, b)` of objects co-occurring in some atom, `a = b` included.
pub fn cooccurrence(s: &RelationalState) -> BTreeSet<(u32, u32)> {
    let mut r = BTreeSet::new();
    for atom in s.atoms() {
        for &a in &atom.args {
            for &b in &atom.args {
                r.insert((a, b));
            }
        }
    }
    r
}
