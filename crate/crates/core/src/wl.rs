//! Weisfeiler-Leman color refinement: 1-WL on vertices, folklore 2-WL and
//! oblivious 2-/3-WL on vertex tuples, and pairwise distinguishability.
//!
//! Relabeling is a sorted-key dictionary: at every round the distinct keys
//! are sorted and numbered densely, so colors never depend on hashing or on
//! the order in which elements are visited. When two graphs are compared the
//! dictionary is shared between them.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

pub const OWL3_MAX_VERTICES: usize = 12;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WlError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{algo} is limited to {cap} vertices, got {n}")]
    TooLarge { algo: Algo, n: usize, cap: usize },
    #[error("unknown algorithm `{0}` (expected wl1, fwl2, owl2 or owl3)")]
    UnknownAlgo(String),
    #[error("{0} initial colors for {1} vertices")]
    ColorCount(usize, usize),
}

/// Simple undirected graph without self-loops.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    adj: Vec<bool>,
}

impl Graph {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            adj: vec![false; n * n],
        }
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut g = Self::new(n);
        for &(u, v) in edges {
            g.add_edge(u, v);
        }
        g
    }

    pub fn add_edge(&mut self, u: usize, v: usize) {
        assert!(u < self.n && v < self.n, "edge ({u}, {v}) out of range");
        if u != v {
            self.adj[u * self.n + v] = true;
            self.adj[v * self.n + u] = true;
        }
    }

    pub fn cycle(n: usize) -> Self {
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Self::from_edges(n, &edges)
    }

    pub fn disjoint_union(&self, other: &Graph) -> Graph {
        let mut g = Graph::new(self.n + other.n);
        for (u, v) in self.edges() {
            g.add_edge(u, v);
        }
        for (u, v) in other.edges() {
            g.add_edge(u + self.n, v + self.n);
        }
        g
    }

    /// Edge-list text: the first non-comment line is the vertex count, then
    /// one `u v` pair per line with 0-based vertices. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, WlError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap().trim()))
            .filter(|(_, l)| !l.is_empty());
        let err = |line, msg: &str| WlError::Parse {
            line,
            msg: msg.to_string(),
        };
        let (line, first) = lines.next().ok_or_else(|| err(1, "missing vertex count"))?;
        let n: usize = first.parse().map_err(|_| err(line, "vertex count must be a non-negative integer"))?;
        let mut g = Graph::new(n);
        for (line, l) in lines {
            let mut it = l.split_whitespace().map(str::parse::<usize>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(u)), Some(Ok(v)), None) if u < n && v < n => g.add_edge(u, v),
                (Some(Ok(_)), Some(Ok(_)), None) => return Err(err(line, "vertex out of range")),
                _ => return Err(err(line, "expected `u v`")),
            }
        }
        Ok(g)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{}\n", self.n);
        for (u, v) in self.edges() {
            out.push_str(&format!("{u} {v}\n"));
        }
        out
    }

    pub fn num_vertices(&self) -> usize {
        self.n
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adj[u * self.n + v]
    }

    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&u| self.has_edge(v, u))
    }

    /// Edges `(u, v)` with `u < v`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.n)
            .flat_map(|u| (u + 1..self.n).map(move |v| (u, v)))
            .filter(|&(u, v)| self.has_edge(u, v))
            .collect()
    }

    /// Vertex `v` becomes `perm[v]`.
    pub fn relabel(&self, perm: &[usize]) -> Graph {
        let edges: Vec<_> = self.edges().into_iter().map(|(u, v)| (perm[u], perm[v])).collect();
        Graph::from_edges(self.n, &edges)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Algo {
    Wl1,
    Fwl2,
    Owl2,
    Owl3,
}

impl Algo {
    pub const ALL: [Algo; 4] = [Algo::Wl1, Algo::Fwl2, Algo::Owl2, Algo::Owl3];

    pub fn tag(self) -> &'static str {
        match self {
            Algo::Wl1 => "wl1",
            Algo::Fwl2 => "fwl2",
            Algo::Owl2 => "owl2",
            Algo::Owl3 => "owl3",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self, WlError> {
        Self::ALL
            .into_iter()
            .find(|a| a.tag() == tag)
            .ok_or_else(|| WlError::UnknownAlgo(tag.to_string()))
    }

    /// Tuple length the algorithm colors.
    pub fn arity(self) -> usize {
        match self {
            Algo::Wl1 => 1,
            Algo::Fwl2 | Algo::Owl2 => 2,
            Algo::Owl3 => 3,
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Stable coloring of vertices or vertex tuples. Tuples are indexed in
/// row-major order: `(v_1, ..., v_k) ↦ Σ v_i · n^(k-i)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Coloring {
    pub colors: Vec<u32>,
    /// Rounds that strictly refined the partition.
    pub rounds: usize,
}

impl Coloring {
    pub fn num_classes(&self) -> usize {
        let mut c = self.colors.clone();
        c.sort_unstable();
        c.dedup();
        c.len()
    }

    /// Color multiset as `(color, count)` in color order.
    pub fn histogram(&self) -> Vec<(u32, usize)> {
        let mut h = BTreeMap::new();
        for &c in &self.colors {
            *h.entry(c).or_insert(0) += 1;
        }
        h.into_iter().collect()
    }

    /// True if every class of `self` lies inside one class of `coarser`.
    pub fn refines(&self, coarser: &Coloring) -> bool {
        let mut map = BTreeMap::new();
        self.colors
            .iter()
            .zip(&coarser.colors)
            .all(|(a, b)| *map.entry(*a).or_insert(*b) == *b)
    }
}

/// Replaces every key by its rank among the sorted distinct keys.
fn relabel(keys: &[Vec<Vec<u32>>]) -> Vec<Vec<u32>> {
    let dict: BTreeMap<&Vec<u32>, u32> = {
        let mut all: Vec<&Vec<u32>> = keys.iter().flatten().collect();
        all.sort_unstable();
        all.dedup();
        all.into_iter().enumerate().map(|(i, k)| (k, i as u32)).collect()
    };
    keys.iter().map(|ks| ks.iter().map(|k| dict[k]).collect()).collect()
}

fn count_classes(colors: &[Vec<u32>]) -> usize {
    let mut all: Vec<u32> = colors.iter().flatten().copied().collect();
    all.sort_unstable();
    all.dedup();
    all.len()
}

/// Joint refinement of several structures to a common fixpoint. `key(g, c, e)`
/// must start with the element's current color `c[e]`.
fn refine<F>(init: Vec<Vec<Vec<u32>>>, key: F) -> (Vec<Vec<u32>>, usize)
where
    F: Fn(usize, &[u32], usize) -> Vec<u32>,
{
    let mut colors = relabel(&init);
    let mut classes = count_classes(&colors);
    let mut rounds = 0;
    loop {
        let keys: Vec<Vec<Vec<u32>>> = colors
            .iter()
            .enumerate()
            .map(|(g, c)| (0..c.len()).map(|e| key(g, c, e)).collect())
            .collect();
        let next = relabel(&keys);
        let next_classes = count_classes(&next);
        if next_classes == classes {
            return (colors, rounds);
        }
        colors = next;
        classes = next_classes;
        rounds += 1;
    }
}

fn sorted_multiset(mut items: Vec<u32>) -> Vec<u32> {
    items.sort_unstable();
    items
}

/// Isomorphism type of a vertex tuple: equalities and edges between every
/// pair of positions.
fn atomic_type(g: &Graph, tuple: &[usize]) -> Vec<u32> {
    let mut t = Vec::new();
    for i in 0..tuple.len() {
        for j in i + 1..tuple.len() {
            let (a, b) = (tuple[i], tuple[j]);
            t.push(if a == b {
                0
            } else if g.has_edge(a, b) {
                1
            } else {
                2
            });
        }
    }
    t
}

fn decode(mut idx: usize, n: usize, k: usize) -> Vec<usize> {
    let mut t = vec![0; k];
    for slot in t.iter_mut().rev() {
        *slot = idx % n;
        idx /= n;
    }
    t
}

fn encode(tuple: &[usize], n: usize) -> usize {
    tuple.iter().fold(0, |acc, &v| acc * n + v)
}

fn tuple_init(g: &Graph, k: usize) -> Vec<Vec<u32>> {
    let n = g.num_vertices();
    (0..n.pow(k as u32)).map(|i| atomic_type(g, &decode(i, n, k))).collect()
}

fn check_cap(algo: Algo, g: &Graph) -> Result<(), WlError> {
    if algo == Algo::Owl3 && g.num_vertices() > OWL3_MAX_VERTICES {
        return Err(WlError::TooLarge {
            algo,
            n: g.num_vertices(),
            cap: OWL3_MAX_VERTICES,
        });
    }
    Ok(())
}

fn run_joint(algo: Algo, graphs: &[&Graph], init1: Option<Vec<Vec<u32>>>) -> Result<(Vec<Vec<u32>>, usize), WlError> {
    for g in graphs {
        check_cap(algo, g)?;
    }
    let k = algo.arity();
    let init: Vec<Vec<Vec<u32>>> = match (algo, init1) {
        (Algo::Wl1, Some(init)) => init.into_iter().map(|c| c.into_iter().map(|x| vec![x]).collect()).collect(),
        (Algo::Wl1, None) => graphs.iter().map(|g| vec![vec![]; g.num_vertices()]).collect(),
        _ => graphs.iter().map(|g| tuple_init(g, k)).collect(),
    };
    let key = |gi: usize, c: &[u32], e: usize| -> Vec<u32> {
        let g = graphs[gi];
        let n = g.num_vertices();
        let mut key = vec![c[e]];
        match algo {
            Algo::Wl1 => key.extend(sorted_multiset(g.neighbors(e).map(|u| c[u]).collect())),
            Algo::Fwl2 => {
                let (u, v) = (e / n, e % n);
                let mut pairs: Vec<(u32, u32)> = (0..n).map(|w| (c[w * n + v], c[u * n + w])).collect();
                pairs.sort_unstable();
                key.extend(pairs.into_iter().flat_map(|(a, b)| [a, b]));
            }
            Algo::Owl2 | Algo::Owl3 => {
                let tuple = decode(e, n, k);
                for j in 0..k {
                    let mut t = tuple.clone();
                    let ms = (0..n)
                        .map(|w| {
                            t[j] = w;
                            c[encode(&t, n)]
                        })
                        .collect();
                    key.push(u32::MAX);
                    key.extend(sorted_multiset(ms));
                }
            }
        }
        key
    };
    Ok(refine(init, key))
}

/// 1-WL with optional initial vertex colors (uniform when `None`).
pub fn wl1(g: &Graph, init: Option<&[u32]>) -> Result<Coloring, WlError> {
    if let Some(c) = init {
        if c.len() != g.num_vertices() {
            return Err(WlError::ColorCount(c.len(), g.num_vertices()));
        }
    }
    let (colors, rounds) = run_joint(Algo::Wl1, &[g], init.map(|c| vec![c.to_vec()]))?;
    Ok(Coloring {
        colors: colors.into_iter().next().unwrap(),
        rounds,
    })
}

fn tuple_coloring(algo: Algo, g: &Graph) -> Result<Coloring, WlError> {
    let (colors, rounds) = run_joint(algo, &[g], None)?;
    Ok(Coloring {
        colors: colors.into_iter().next().unwrap(),
        rounds,
    })
}

/// Folklore 2-WL over ordered vertex pairs.
pub fn fwl2(g: &Graph) -> Coloring {
    tuple_coloring(Algo::Fwl2, g).expect("fwl2 has no size cap")
}

/// Oblivious 2-WL over ordered vertex pairs.
pub fn owl2(g: &Graph) -> Coloring {
    tuple_coloring(Algo::Owl2, g).expect("owl2 has no size cap")
}

/// Oblivious 3-WL over vertex triples, for at most [`OWL3_MAX_VERTICES`].
pub fn owl3(g: &Graph) -> Result<Coloring, WlError> {
    tuple_coloring(Algo::Owl3, g)
}

pub fn coloring(algo: Algo, g: &Graph) -> Result<Coloring, WlError> {
    match algo {
        Algo::Wl1 => wl1(g, None),
        _ => tuple_coloring(algo, g),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Comparison {
    pub distinguished: bool,
    pub rounds: usize,
}

/// Refines both graphs with a shared dictionary and compares the stable
/// color histograms.
pub fn distinguishes(a: &Graph, b: &Graph, algo: Algo) -> Result<Comparison, WlError> {
    let (colors, rounds) = run_joint(algo, &[a, b], None)?;
    let hist = |c: &[u32]| {
        let mut c = c.to_vec();
        c.sort_unstable();
        c
    };
    Ok(Comparison {
        distinguished: hist(&colors[0]) != hist(&colors[1]),
        rounds,
    })
}

/// Canonical form under vertex permutation: the lexicographically smallest
/// upper-triangle adjacency bit string. Exponential; for tiny graphs.
pub fn canonical_code(g: &Graph) -> u64 {
    let n = g.num_vertices();
    assert!(n <= 8, "canonical_code enumerates n! permutations");
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = u64::MAX;
    loop {
        let mut code = 0u64;
        for i in 0..n {
            for j in i + 1..n {
                code = (code << 1) | g.has_edge(perm[i], perm[j]) as u64;
            }
        }
        best = best.min(code);
        if !next_permutation(&mut perm) {
            return best;
        }
    }
}

fn next_permutation(p: &mut [usize]) -> bool {
    let Some(i) = (1..p.len()).rev().find(|&i| p[i - 1] < p[i]) else {
        return false;
    };
    let j = (i..p.len()).rev().find(|&j| p[j] > p[i - 1]).unwrap();
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// One representative per isomorphism class of graphs on `n` vertices.
pub fn all_graphs(n: usize) -> Vec<Graph> {
    let slots: Vec<(usize, usize)> = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for mask in 0u64..(1 << slots.len()) {
        let edges: Vec<_> = slots
            .iter()
            .enumerate()
            .filter(|(i, _)| mask >> i & 1 == 1)
            .map(|(_, &e)| e)
            .collect();
        let g = Graph::from_edges(n, &edges);
        if seen.insert(canonical_code(&g)) {
            out.push(g);
        }
    }
    out
}
