//! Built-in instance generators for the desk-scale domains, emitted as PDDL
//! text, plus analytic oracles used to cross-check the state-space search.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pddl::{parse_domain, parse_problem, DomainModel, PddlError, Problem};
use crate::state::RelationalState;

pub const DEFAULT_RETRIES: usize = 100;
pub const MAX_GRID_CELLS: usize = 1024;
pub const MAX_OBJECTS: usize = 256;

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("{domain}: no valid instance after {retries} attempts")]
    UnsatisfiableAfterRetries { domain: &'static str, retries: usize },
    #[error("invalid size: {0}")]
    InvalidSize(String),
    #[error("unknown domain `{0}`")]
    UnknownDomain(String),
    #[error("state lacks `{0}`")]
    Vocabulary(String),
    #[error("invalid layout: {0}")]
    Layout(String),
    #[error(transparent)]
    Pddl(#[from] PddlError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

type Result<T> = std::result::Result<T, DomainError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DomainKind {
    NavigXy,
    VisitallXy,
    Visitall,
    Gripper,
    BlocksS,
    BlocksM,
    Vacuum,
}

impl DomainKind {
    pub const ALL: [DomainKind; 7] = [
        DomainKind::NavigXy,
        DomainKind::VisitallXy,
        DomainKind::Visitall,
        DomainKind::Gripper,
        DomainKind::BlocksS,
        DomainKind::BlocksM,
        DomainKind::Vacuum,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            DomainKind::NavigXy => "navig-xy",
            DomainKind::VisitallXy => "visitall-xy",
            DomainKind::Visitall => "visitall",
            DomainKind::Gripper => "gripper",
            DomainKind::BlocksS => "blocks-s",
            DomainKind::BlocksM => "blocks-m",
            DomainKind::Vacuum => "vacuum",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|d| d.tag() == tag)
            .ok_or_else(|| DomainError::UnknownDomain(tag.to_string()))
    }

    pub fn domain_pddl(self) -> &'static str {
        match self {
            DomainKind::NavigXy => NAVIG_XY_DOMAIN,
            DomainKind::VisitallXy => VISITALL_XY_DOMAIN,
            DomainKind::Visitall => VISITALL_DOMAIN,
            DomainKind::Gripper => GRIPPER_DOMAIN,
            DomainKind::BlocksS | DomainKind::BlocksM => BLOCKS_DOMAIN,
            DomainKind::Vacuum => VACUUM_DOMAIN,
        }
    }
}

impl std::fmt::Display for DomainKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

// `cell` marks the free cells only: preconditions must be positive, so
// moves test `cell` on the target instead of the absence of `blocked`.
pub const NAVIG_XY_DOMAIN: &str = "(define (domain navig-xy)
  (:requirements :strips :typing)
  (:types xcoord ycoord)
  (:predicates (succ-x ?a ?b - xcoord) (succ-y ?a ?b - ycoord)
               (at ?x - xcoord ?y - ycoord) (blocked ?x - xcoord ?y - ycoord)
               (cell ?x - xcoord ?y - ycoord))
  (:action move-right
    :parameters (?x ?to - xcoord ?y - ycoord)
    :precondition (and (at ?x ?y) (succ-x ?x ?to) (cell ?to ?y))
    :effect (and (at ?to ?y) (not (at ?x ?y))))
  (:action move-left
    :parameters (?x ?to - xcoord ?y - ycoord)
    :precondition (and (at ?x ?y) (succ-x ?to ?x) (cell ?to ?y))
    :effect (and (at ?to ?y) (not (at ?x ?y))))
  (:action move-up
    :parameters (?x - xcoord ?y ?to - ycoord)
    :precondition (and (at ?x ?y) (succ-y ?y ?to) (cell ?x ?to))
    :effect (and (at ?x ?to) (not (at ?x ?y))))
  (:action move-down
    :parameters (?x - xcoord ?y ?to - ycoord)
    :precondition (and (at ?x ?y) (succ-y ?to ?y) (cell ?x ?to))
    :effect (and (at ?x ?to) (not (at ?x ?y)))))
";

pub const VISITALL_XY_DOMAIN: &str = "(define (domain visitall-xy)
  (:requirements :strips :typing)
  (:types xcoord ycoord)
  (:predicates (succ-x ?a ?b - xcoord) (succ-y ?a ?b - ycoord)
               (at ?x - xcoord ?y - ycoord) (visited ?x - xcoord ?y - ycoord)
               (cell ?x - xcoord ?y - ycoord))
  (:action move-right
    :parameters (?x ?to - xcoord ?y - ycoord)
    :precondition (and (at ?x ?y) (succ-x ?x ?to) (cell ?to ?y))
    :effect (and (at ?to ?y) (visited ?to ?y) (not (at ?x ?y))))
  (:action move-left
    :parameters (?x ?to - xcoord ?y - ycoord)
    :precondition (and (at ?x ?y) (succ-x ?to ?x) (cell ?to ?y))
    :effect (and (at ?to ?y) (visited ?to ?y) (not (at ?x ?y))))
  (:action move-up
    :parameters (?x - xcoord ?y ?to - ycoord)
    :precondition (and (at ?x ?y) (succ-y ?y ?to) (cell ?x ?to))
    :effect (and (at ?x ?to) (visited ?x ?to) (not (at ?x ?y))))
  (:action move-down
    :parameters (?x - xcoord ?y ?to - ycoord)
    :precondition (and (at ?x ?y) (succ-y ?to ?y) (cell ?x ?to))
    :effect (and (at ?x ?to) (visited ?x ?to) (not (at ?x ?y)))))
";

pub const VISITALL_DOMAIN: &str = "(define (domain visitall)
  (:requirements :strips :typing)
  (:types place)
  (:predicates (connected ?a ?b - place) (at-robot ?a - place) (visited ?a - place))
  (:action move
    :parameters (?from ?to - place)
    :precondition (and (at-robot ?from) (connected ?from ?to))
    :effect (and (at-robot ?to) (visited ?to) (not (at-robot ?from)))))
";

pub const GRIPPER_DOMAIN: &str = "(define (domain gripper)
  (:requirements :strips)
  (:predicates (room ?r) (ball ?b) (gripper ?g) (at-robby ?r)
               (at ?b ?r) (free ?g) (carry ?o ?g))
  (:action move
    :parameters (?from ?to)
    :precondition (and (room ?from) (room ?to) (at-robby ?from))
    :effect (and (at-robby ?to) (not (at-robby ?from))))
  (:action pick
    :parameters (?obj ?room ?gripper)
    :precondition (and (ball ?obj) (room ?room) (gripper ?gripper)
                       (at ?obj ?room) (at-robby ?room) (free ?gripper))
    :effect (and (carry ?obj ?gripper) (not (at ?obj ?room)) (not (free ?gripper))))
  (:action drop
    :parameters (?obj ?room ?gripper)
    :precondition (and (ball ?obj) (room ?room) (gripper ?gripper)
                       (carry ?obj ?gripper) (at-robby ?room))
    :effect (and (at ?obj ?room) (free ?gripper) (not (carry ?obj ?gripper)))))
";

// Four-operator encoding with an explicit hand object, so that no predicate
// is nullary and `stack(x, x)` can never apply.
pub const BLOCKS_DOMAIN: &str = "(define (domain blocks)
  (:requirements :strips :typing)
  (:types block hand)
  (:predicates (on ?x ?y - block) (ontable ?x - block) (clear ?x - block)
               (holding ?h - hand ?x - block) (handempty ?h - hand))
  (:action pick-up
    :parameters (?h - hand ?x - block)
    :precondition (and (clear ?x) (ontable ?x) (handempty ?h))
    :effect (and (holding ?h ?x) (not (ontable ?x)) (not (clear ?x)) (not (handempty ?h))))
  (:action put-down
    :parameters (?h - hand ?x - block)
    :precondition (holding ?h ?x)
    :effect (and (ontable ?x) (clear ?x) (handempty ?h) (not (holding ?h ?x))))
  (:action stack
    :parameters (?h - hand ?x ?y - block)
    :precondition (and (holding ?h ?x) (clear ?y))
    :effect (and (on ?x ?y) (clear ?x) (handempty ?h) (not (holding ?h ?x)) (not (clear ?y))))
  (:action unstack
    :parameters (?h - hand ?x ?y - block)
    :precondition (and (on ?x ?y) (clear ?x) (handempty ?h))
    :effect (and (holding ?h ?x) (clear ?y) (not (on ?x ?y)) (not (clear ?x)) (not (handempty ?h)))))
";

pub const VACUUM_DOMAIN: &str = "(define (domain vacuum)
  (:requirements :strips :typing)
  (:types robot location)
  (:predicates (adjacent ?r - robot ?x ?y - location) (at ?r - robot ?x - location)
               (dirty ?x - location) (clean ?x - location))
  (:action move
    :parameters (?r - robot ?from ?to - location)
    :precondition (and (at ?r ?from) (adjacent ?r ?from ?to))
    :effect (and (at ?r ?to) (not (at ?r ?from))))
  (:action clean-up
    :parameters (?r - robot ?x - location)
    :precondition (and (at ?r ?x) (dirty ?x))
    :effect (and (clean ?x) (not (dirty ?x)))))
";

fn grid_objects(out: &mut String, n: usize, m: usize) {
    out.push_str("  (:objects");
    for i in 1..=n {
        let _ = write!(out, " x{i}");
    }
    out.push_str(" - xcoord");
    for j in 1..=m {
        let _ = write!(out, " y{j}");
    }
    out.push_str(" - ycoord)\n");
}

fn grid_succ(out: &mut String, n: usize, m: usize) {
    for i in 1..n {
        let _ = write!(out, " (succ-x x{} x{})", i, i + 1);
    }
    for j in 1..m {
        let _ = write!(out, " (succ-y y{} y{})", j, j + 1);
    }
}

fn grid_bfs(n: usize, m: usize, free: impl Fn(usize, usize) -> bool, from: (usize, usize)) -> Vec<Option<u32>> {
    let mut dist = vec![None; n * m];
    if !free(from.0, from.1) {
        return dist;
    }
    dist[from.1 * n + from.0] = Some(0);
    let mut queue = VecDeque::from([from]);
    while let Some((x, y)) = queue.pop_front() {
        let d = dist[y * n + x].unwrap();
        let mut nbrs = Vec::with_capacity(4);
        if x > 0 {
            nbrs.push((x - 1, y));
        }
        if x + 1 < n {
            nbrs.push((x + 1, y));
        }
        if y > 0 {
            nbrs.push((x, y - 1));
        }
        if y + 1 < m {
            nbrs.push((x, y + 1));
        }
        for (a, b) in nbrs {
            if free(a, b) && dist[b * n + a].is_none() {
                dist[b * n + a] = Some(d + 1);
                queue.push_back((a, b));
            }
        }
    }
    dist
}

/// A Navig-xy grid. Cell `(x, y)` is column `x` (object `x{x+1}`) and row `y`
/// counted from the bottom (object `y{y+1}`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NavigLayout {
    pub width: usize,
    pub height: usize,
    pub blocked: BTreeSet<(usize, usize)>,
    pub robot: (usize, usize),
    pub goal: (usize, usize),
}

impl NavigLayout {
    /// Parses rows drawn top to bottom: `#` blocked, `R` robot, `G` goal,
    /// `.` free.
    pub fn from_rows(rows: &[&str]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        if width == 0 || rows.iter().any(|r| r.len() != width) {
            return Err(DomainError::Layout("rows must be non-empty and equally long".into()));
        }
        let (mut robot, mut goal) = (None, None);
        let mut blocked = BTreeSet::new();
        for (r, row) in rows.iter().enumerate() {
            let y = height - 1 - r;
            for (x, c) in row.chars().enumerate() {
                match c {
                    '#' => {
                        blocked.insert((x, y));
                    }
                    'R' => robot = Some((x, y)),
                    'G' => goal = Some((x, y)),
                    '.' => {}
                    other => return Err(DomainError::Layout(format!("unexpected `{other}`"))),
                }
            }
        }
        match (robot, goal) {
            (Some(robot), Some(goal)) => Ok(Self {
                width,
                height,
                blocked,
                robot,
                goal,
            }),
            _ => Err(DomainError::Layout("needs one `R` and one `G`".into())),
        }
    }

    pub fn is_free(&self, x: usize, y: usize) -> bool {
        x < self.width && y < self.height && !self.blocked.contains(&(x, y))
    }

    /// BFS distance from every cell to the goal (`None` if blocked or cut off).
    pub fn distances_to_goal(&self) -> Vec<Option<u32>> {
        grid_bfs(self.width, self.height, |x, y| self.is_free(x, y), self.goal)
    }

    pub fn distance(&self) -> Option<u32> {
        if !self.is_free(self.robot.0, self.robot.1) {
            return None;
        }
        self.distances_to_goal()[self.robot.1 * self.width + self.robot.0]
    }

    pub fn to_pddl(&self, name: &str) -> String {
        let (n, m) = (self.width, self.height);
        let mut out = format!("(define (problem {name})\n  (:domain navig-xy)\n");
        grid_objects(&mut out, n, m);
        out.push_str("  (:init");
        grid_succ(&mut out, n, m);
        for y in 0..m {
            for x in 0..n {
                let kind = if self.is_free(x, y) { "cell" } else { "blocked" };
                let _ = write!(out, " ({kind} x{} y{})", x + 1, y + 1);
            }
        }
        let _ = writeln!(out, " (at x{} y{}))", self.robot.0 + 1, self.robot.1 + 1);
        let _ = writeln!(out, "  (:goal (at x{} y{})))", self.goal.0 + 1, self.goal.1 + 1);
        out
    }
}

/// The two 8×4 obstacle layouts of the Navig-xy illustration.
pub fn navig_fixtures() -> [NavigLayout; 2] {
    [
        NavigLayout::from_rows(&["##..##.#", "#R##.###", "..##.#..", "G#..#..."]).unwrap(),
        NavigLayout::from_rows(&["##.....#", "R..###.#", "###G.#.#", ".###...#"]).unwrap(),
    ]
}

fn check_grid(n: usize, m: usize) -> Result<()> {
    if n == 0 || m == 0 || n * m > MAX_GRID_CELLS {
        return Err(DomainError::InvalidSize(format!(
            "grid {n}×{m} must be non-empty with at most {MAX_GRID_CELLS} cells"
        )));
    }
    Ok(())
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Random obstacles with independent probability `density`; robot and goal on
/// distinct free cells joined by a free path.
pub fn gen_navig_xy(n: usize, m: usize, density: f64, seed: u64) -> Result<NavigLayout> {
    check_grid(n, m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..DEFAULT_RETRIES {
        let mut blocked = BTreeSet::new();
        for y in 0..m {
            for x in 0..n {
                if rng.gen::<f64>() < density {
                    blocked.insert((x, y));
                }
            }
        }
        let free: Vec<(usize, usize)> = (0..m)
            .flat_map(|y| (0..n).map(move |x| (x, y)))
            .filter(|c| !blocked.contains(c))
            .collect();
        if free.len() < 2 {
            continue;
        }
        let picked: Vec<_> = free.choose_multiple(&mut rng, 2).copied().collect();
        let layout = NavigLayout {
            width: n,
            height: m,
            blocked,
            robot: picked[0],
            goal: picked[1],
        };
        if layout.distance().is_some() {
            return Ok(layout);
        }
    }
    Err(DomainError::UnsatisfiableAfterRetries {
        domain: "navig-xy",
        retries: DEFAULT_RETRIES,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VisitallVariant {
    /// Cells as coordinate pairs, as in Navig-xy.
    Xy,
    /// One object per cell.
    Cells,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VisitallLayout {
    pub variant: VisitallVariant,
    pub width: usize,
    pub height: usize,
    pub robot: (usize, usize),
    pub targets: BTreeSet<(usize, usize)>,
}

impl VisitallLayout {
    pub fn to_pddl(&self, name: &str) -> String {
        let (n, m) = (self.width, self.height);
        let (rx, ry) = self.robot;
        match self.variant {
            VisitallVariant::Xy => {
                let mut out = format!("(define (problem {name})\n  (:domain visitall-xy)\n");
                grid_objects(&mut out, n, m);
                out.push_str("  (:init");
                grid_succ(&mut out, n, m);
                for y in 1..=m {
                    for x in 1..=n {
                        let _ = write!(out, " (cell x{x} y{y})");
                    }
                }
                let _ = writeln!(out, " (at x{0} y{1}) (visited x{0} y{1}))", rx + 1, ry + 1);
                out.push_str("  (:goal (and");
                for (x, y) in &self.targets {
                    let _ = write!(out, " (visited x{} y{})", x + 1, y + 1);
                }
                out.push_str(")))\n");
                out
            }
            VisitallVariant::Cells => {
                let cell = |x: usize, y: usize| format!("c{}-{}", x + 1, y + 1);
                let mut out = format!("(define (problem {name})\n  (:domain visitall)\n  (:objects");
                for y in 0..m {
                    for x in 0..n {
                        let _ = write!(out, " {}", cell(x, y));
                    }
                }
                out.push_str(" - place)\n  (:init");
                for y in 0..m {
                    for x in 0..n {
                        let mut nbrs = Vec::new();
                        if x > 0 {
                            nbrs.push((x - 1, y));
                        }
                        if x + 1 < n {
                            nbrs.push((x + 1, y));
                        }
                        if y > 0 {
                            nbrs.push((x, y - 1));
                        }
                        if y + 1 < m {
                            nbrs.push((x, y + 1));
                        }
                        for (a, b) in nbrs {
                            let _ = write!(out, " (connected {} {})", cell(x, y), cell(a, b));
                        }
                    }
                }
                let c = cell(rx, ry);
                let _ = writeln!(out, " (at-robot {c}) (visited {c}))");
                out.push_str("  (:goal (and");
                for &(x, y) in &self.targets {
                    let _ = write!(out, " (visited {})", cell(x, y));
                }
                out.push_str(")))\n");
                out
            }
        }
    }
}

/// Robot on a random cell; `targets` random cells to visit (all cells when
/// `None`). Grids without obstacles are always solvable.
pub fn gen_visitall(
    variant: VisitallVariant,
    n: usize,
    m: usize,
    targets: Option<usize>,
    seed: u64,
) -> Result<VisitallLayout> {
    check_grid(n, m)?;
    let cells: Vec<(usize, usize)> = (0..m).flat_map(|y| (0..n).map(move |x| (x, y))).collect();
    let count = targets.unwrap_or(cells.len());
    if count == 0 || count > cells.len() {
        return Err(DomainError::InvalidSize(format!(
            "{count} targets on a grid of {} cells",
            cells.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let robot = *cells.choose(&mut rng).unwrap();
    let targets = cells.choose_multiple(&mut rng, count).copied().collect();
    Ok(VisitallLayout {
        variant,
        width: n,
        height: m,
        robot,
        targets,
    })
}

/// Two rooms, two grippers; every ball starts in `rooma` and must reach
/// `roomb`; the seed picks the robot's starting room.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GripperLayout {
    pub balls: usize,
    pub robby_in_b: bool,
}

impl GripperLayout {
    pub fn to_pddl(&self, name: &str) -> String {
        let mut out = format!("(define (problem {name})\n  (:domain gripper)\n  (:objects rooma roomb left right");
        for b in 1..=self.balls {
            let _ = write!(out, " ball{b}");
        }
        out.push_str(")\n  (:init (room rooma) (room roomb) (gripper left) (gripper right) (free left) (free right)");
        let _ = write!(out, " (at-robby {})", if self.robby_in_b { "roomb" } else { "rooma" });
        for b in 1..=self.balls {
            let _ = write!(out, " (ball ball{b}) (at ball{b} rooma)");
        }
        out.push_str(")\n  (:goal (and");
        for b in 1..=self.balls {
            let _ = write!(out, " (at ball{b} roomb)");
        }
        out.push_str(")))\n");
        out
    }
}

pub fn gen_gripper(balls: usize, seed: u64) -> Result<GripperLayout> {
    if balls == 0 || balls > MAX_OBJECTS {
        return Err(DomainError::InvalidSize(format!("{balls} balls")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(GripperLayout {
        balls,
        robby_in_b: rng.gen(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlocksVariant {
    /// The goal is a single tower.
    Single,
    /// The goal is a random set of towers.
    Multiple,
}

/// Towers listed bottom to top, blocks numbered from 0 (object `b{i+1}`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlocksLayout {
    pub blocks: usize,
    pub init: Vec<Vec<usize>>,
    pub goal: Vec<Vec<usize>>,
}

impl BlocksLayout {
    pub fn to_pddl(&self, name: &str) -> String {
        let mut out = format!("(define (problem {name})\n  (:domain blocks)\n  (:objects");
        for b in 1..=self.blocks {
            let _ = write!(out, " b{b}");
        }
        out.push_str(" - block hand - hand)\n  (:init (handempty hand)");
        for tower in &self.init {
            let _ = write!(out, " (ontable b{})", tower[0] + 1);
            for w in tower.windows(2) {
                let _ = write!(out, " (on b{} b{})", w[1] + 1, w[0] + 1);
            }
            let _ = write!(out, " (clear b{})", tower[tower.len() - 1] + 1);
        }
        out.push_str(")\n  (:goal (and");
        for tower in &self.goal {
            for w in tower.windows(2) {
                let _ = write!(out, " (on b{} b{})", w[1] + 1, w[0] + 1);
            }
            if tower.len() == 1 {
                let _ = write!(out, " (ontable b{})", tower[0] + 1);
            }
        }
        out.push_str(")))\n");
        out
    }
}

/// Splits a random permutation of `0..n` into towers at random cut points.
fn random_towers(n: usize, rng: &mut ChaCha8Rng, min_towers: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut cuts: Vec<usize> = (1..n).filter(|_| rng.gen_bool(0.3)).collect();
    while cuts.len() + 1 < min_towers.min(n) {
        let c = rng.gen_range(1..n);
        if !cuts.contains(&c) {
            cuts.push(c);
        }
    }
    cuts.sort_unstable();
    let mut towers = Vec::new();
    let mut start = 0;
    for c in cuts.into_iter().chain([n]) {
        towers.push(order[start..c].to_vec());
        start = c;
    }
    towers
}

pub fn gen_blocks(variant: BlocksVariant, blocks: usize, seed: u64) -> Result<BlocksLayout> {
    if blocks == 0 || blocks > MAX_OBJECTS {
        return Err(DomainError::InvalidSize(format!("{blocks} blocks")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = random_towers(blocks, &mut rng, 1);
    let goal = match variant {
        BlocksVariant::Single => {
            let mut order: Vec<usize> = (0..blocks).collect();
            order.shuffle(&mut rng);
            vec![order]
        }
        BlocksVariant::Multiple => random_towers(blocks, &mut rng, 2),
    };
    Ok(BlocksLayout { blocks, init, goal })
}

/// Each robot moves on its own symmetric map over the shared locations;
/// one location is dirty.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VacuumLayout {
    pub locations: usize,
    pub dirty: usize,
    /// Per robot: start location and undirected edges of its map.
    pub robots: Vec<(usize, BTreeSet<(usize, usize)>)>,
}

impl VacuumLayout {
    fn robot_distance(&self, r: usize) -> Option<u32> {
        let (start, edges) = &self.robots[r];
        let mut dist = vec![None; self.locations];
        dist[*start] = Some(0u32);
        let mut queue = VecDeque::from([*start]);
        while let Some(u) = queue.pop_front() {
            let d = dist[u].unwrap();
            for &(a, b) in edges {
                let v = if a == u {
                    b
                } else if b == u {
                    a
                } else {
                    continue;
                };
                if dist[v].is_none() {
                    dist[v] = Some(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist[self.dirty]
    }

    /// Optimal plan length: the closest robot walks to the dirt and cleans it.
    pub fn optimal_length(&self) -> Option<u32> {
        (0..self.robots.len())
            .filter_map(|r| self.robot_distance(r))
            .min()
            .map(|d| d + 1)
    }

    pub fn to_pddl(&self, name: &str) -> String {
        let mut out = format!("(define (problem {name})\n  (:domain vacuum)\n  (:objects");
        for r in 1..=self.robots.len() {
            let _ = write!(out, " r{r}");
        }
        out.push_str(" - robot");
        for l in 1..=self.locations {
            let _ = write!(out, " l{l}");
        }
        out.push_str(" - location)\n  (:init");
        for (r, (start, edges)) in self.robots.iter().enumerate() {
            let _ = write!(out, " (at r{} l{})", r + 1, start + 1);
            for &(a, b) in edges {
                let _ = write!(out, " (adjacent r{0} l{1} l{2}) (adjacent r{0} l{2} l{1})", r + 1, a + 1, b + 1);
            }
        }
        let _ = writeln!(out, " (dirty l{}))", self.dirty + 1);
        let _ = writeln!(out, "  (:goal (clean l{})))", self.dirty + 1);
        out
    }
}

/// A random tree plus a few chords as the shared map; the dirty location is a
/// centre of that map (minimum eccentricity, lowest index). Every robot keeps
/// each edge with probability `1 - drop`.
pub fn gen_vacuum(locations: usize, robots: usize, drop: f64, seed: u64) -> Result<VacuumLayout> {
    if locations == 0 || robots == 0 || locations + robots > MAX_OBJECTS {
        return Err(DomainError::InvalidSize(format!("{locations} locations, {robots} robots")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..DEFAULT_RETRIES {
        let mut base = BTreeSet::new();
        for v in 1..locations {
            let u = rng.gen_range(0..v);
            base.insert((u, v));
        }
        for _ in 0..locations / 3 {
            let (a, b) = (rng.gen_range(0..locations), rng.gen_range(0..locations));
            if a != b {
                base.insert((a.min(b), a.max(b)));
            }
        }
        let shared = VacuumLayout {
            locations,
            dirty: 0,
            robots: (0..locations).map(|l| (l, base.clone())).collect(),
        };
        let dirty = (0..locations)
            .min_by_key(|&c| {
                let probe = VacuumLayout { dirty: c, ..shared.clone() };
                (0..locations).filter_map(|r| probe.robot_distance(r)).max().unwrap_or(0)
            })
            .unwrap();
        let layout = VacuumLayout {
            locations,
            dirty,
            robots: (0..robots)
                .map(|_| {
                    let start = rng.gen_range(0..locations);
                    let edges = base.iter().copied().filter(|_| !rng.gen_bool(drop.clamp(0.0, 1.0))).collect();
                    (start, edges)
                })
                .collect(),
        };
        if layout.optimal_length().is_some() {
            return Ok(layout);
        }
    }
    Err(DomainError::UnsatisfiableAfterRetries {
        domain: "vacuum",
        retries: DEFAULT_RETRIES,
    })
}

/// `P_k(r, x)`: robot `r` can walk from `x` to a dirty location in exactly
/// `k` moves along its own map, evaluated by iterating the recurrence
/// `P_0(r, x) = dirty(x)`, `P_k(r, x) = ∃y adjacent(r, x, y) ∧ P_{k-1}(r, y)`.
pub fn vacuum_reach(state: &RelationalState, robot: &str, location: &str, k: usize) -> Result<bool> {
    let vocab = state.vocab();
    let pred = |name: &str| vocab.get(name).ok_or_else(|| DomainError::Vocabulary(name.to_string()));
    let (adjacent, dirty) = (pred("adjacent")?, pred("dirty")?);
    let obj = |name: &str| state.object_id(name).ok_or_else(|| DomainError::Vocabulary(name.to_string()));
    let (r, x) = (obj(robot)?, obj(location)?);
    let n = state.num_objects();
    let mut holds = vec![false; n];
    let mut edges = Vec::new();
    for atom in state.atoms() {
        if atom.pred == dirty {
            holds[atom.args[0] as usize] = true;
        } else if atom.pred == adjacent && atom.args[0] == r {
            edges.push((atom.args[1] as usize, atom.args[2] as usize));
        }
    }
    for _ in 0..k {
        let mut next = vec![false; n];
        for &(a, b) in &edges {
            next[a] |= holds[b];
        }
        holds = next;
    }
    Ok(holds[x as usize])
}

/// `P_k(robot, x)` at the robot's current location `x`.
pub fn vacuum_reach_oracle(state: &RelationalState, robot: &str, k: usize) -> Result<bool> {
    let at = state.vocab().get("at").ok_or_else(|| DomainError::Vocabulary("at".into()))?;
    let r = state.object_id(robot).ok_or_else(|| DomainError::Vocabulary(robot.to_string()))?;
    let loc = state
        .atoms()
        .iter()
        .find(|a| a.pred == at && a.args[0] == r)
        .map(|a| state.objects()[a.args[1] as usize].clone())
        .ok_or_else(|| DomainError::Vocabulary(format!("at({robot}, _)")))?;
    vacuum_reach(state, robot, &loc, k)
}

/// Generator parameters. `n`/`m` are the grid width/height for the grid
/// domains, the number of balls or blocks in `n` for gripper and blocks, and
/// locations/robots for vacuum. `density` is the obstacle probability for
/// Navig-xy and the per-robot edge drop probability for vacuum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub domain: DomainKind,
    pub n: usize,
    pub m: usize,
    pub targets: Option<usize>,
    pub density: f64,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn new(domain: DomainKind, n: usize, m: usize, seed: u64) -> Self {
        Self {
            domain,
            n,
            m,
            targets: None,
            density: 0.0,
            seed,
        }
    }

    /// Seed for the `index`-th instance of a dataset.
    pub fn instance_seed(&self, index: usize) -> u64 {
        rng_for(self.seed, index as u64).gen()
    }

    /// PDDL problem text of the `index`-th instance.
    pub fn instance(&self, index: usize, name: &str) -> Result<String> {
        let seed = self.instance_seed(index);
        Ok(match self.domain {
            DomainKind::NavigXy => gen_navig_xy(self.n, self.m, self.density, seed)?.to_pddl(name),
            DomainKind::VisitallXy => gen_visitall(VisitallVariant::Xy, self.n, self.m, self.targets, seed)?.to_pddl(name),
            DomainKind::Visitall => gen_visitall(VisitallVariant::Cells, self.n, self.m, self.targets, seed)?.to_pddl(name),
            DomainKind::Gripper => gen_gripper(self.n, seed)?.to_pddl(name),
            DomainKind::BlocksS => gen_blocks(BlocksVariant::Single, self.n, seed)?.to_pddl(name),
            DomainKind::BlocksM => gen_blocks(BlocksVariant::Multiple, self.n, seed)?.to_pddl(name),
            DomainKind::Vacuum => gen_vacuum(self.n, self.m, self.density, seed)?.to_pddl(name),
        })
    }
}

/// A generated dataset held in memory: domain text plus named problem texts.
#[derive(Clone, Debug)]
pub struct GeneratedSet {
    pub spec: GeneratorSpec,
    pub domain_text: String,
    pub problems: Vec<(String, String)>,
}

impl GeneratedSet {
    pub fn generate(spec: &GeneratorSpec, count: usize) -> Result<Self> {
        let problems = (0..count)
            .map(|i| {
                let name = format!("p{:02}", i + 1);
                spec.instance(i, &name).map(|text| (name, text))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            spec: spec.clone(),
            domain_text: spec.domain.domain_pddl().to_string(),
            problems,
        })
    }

    /// Parses every problem through the PDDL front end.
    pub fn parse(&self) -> Result<(Arc<DomainModel>, Vec<Problem>)> {
        let domain = Arc::new(parse_domain(&self.domain_text)?);
        let problems = self
            .problems
            .iter()
            .map(|(_, text)| parse_problem(text, &domain))
            .collect::<std::result::Result<_, _>>()?;
        Ok((domain, problems))
    }

    /// Writes `domain.pddl`, `pNN.pddl` and `manifest.json` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| DomainError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let mut written = Vec::new();
        let domain_path = dir.join("domain.pddl");
        std::fs::write(&domain_path, &self.domain_text).map_err(io(&domain_path))?;
        written.push(domain_path);
        for (name, text) in &self.problems {
            let path = dir.join(format!("{name}.pddl"));
            std::fs::write(&path, text).map_err(io(&path))?;
            written.push(path);
        }
        let manifest = DatasetManifest {
            generator: self.spec.clone(),
            count: self.problems.len(),
            instance_seeds: (0..self.problems.len()).map(|i| self.spec.instance_seed(i)).collect(),
            files: written
                .iter()
                .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
                .collect(),
        };
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, text).map_err(io(&path))?;
        written.push(path);
        Ok(written)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub generator: GeneratorSpec,
    pub count: usize,
    pub instance_seeds: Vec<u64>,
    pub files: Vec<String>,
}

/// Loads `domain.pddl` and every other `*.pddl` file of a directory, in file
/// name order. Returns `(file stem, problem)` pairs.
pub fn load_dir(dir: &Path) -> Result<(Arc<DomainModel>, Vec<(String, Problem)>)> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| DomainError::Io { path, source }
    };
    let domain_path = dir.join("domain.pddl");
    let text = std::fs::read_to_string(&domain_path).map_err(io(&domain_path))?;
    let domain = Arc::new(parse_domain(&text)?);
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "pddl") && p.file_name() != Some("domain.pddl".as_ref()))
        .collect();
    paths.sort();
    let mut problems = Vec::new();
    for path in paths {
        let text = std::fs::read_to_string(&path).map_err(io(&path))?;
        let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
        problems.push((stem, parse_problem(&text, &domain)?));
    }
    Ok((domain, problems))
}
