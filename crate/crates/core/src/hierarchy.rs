//! Tree-likeness diagnostics of relation subgraphs: the Krackhardt hierarchy
//! score and a sampled triangle curvature estimate.

use std::collections::{BTreeSet, VecDeque};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::TripleStore;
use crate::error::{Error, Result};

pub const DEFAULT_XI_SAMPLES: usize = 10_000;

const UNSEEN: u32 = u32::MAX;

/// Directed subgraph of one relation plus its undirected view.
#[derive(Debug, Clone)]
pub struct RelationGraph {
    relation: String,
    /// Entity id of each local node, ascending.
    nodes: Vec<usize>,
    /// Deduplicated directed edges over local ids, sorted.
    edges: Vec<(u32, u32)>,
    /// Undirected adjacency without self-loops, each list sorted.
    adj: Vec<Vec<u32>>,
    /// Members of each component.
    components: Vec<Vec<u32>>,
}

impl RelationGraph {
    /// Graph on the endpoints of `edges` (entity ids, `head → tail`).
    pub fn from_edges(relation: impl Into<String>, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let raw: BTreeSet<(usize, usize)> = edges.into_iter().collect();
        let nodes: Vec<usize> = raw
            .iter()
            .flat_map(|&(a, b)| [a, b])
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let local = |e: usize| nodes.binary_search(&e).expect("endpoint is a node") as u32;
        let edges: Vec<(u32, u32)> = raw.iter().map(|&(a, b)| (local(a), local(b))).collect();
        let mut adj = vec![Vec::new(); nodes.len()];
        for &(a, b) in &edges {
            if a != b {
                adj[a as usize].push(b);
                adj[b as usize].push(a);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        let mut component = vec![UNSEEN; nodes.len()];
        let mut components = Vec::new();
        for start in 0..nodes.len() {
            if component[start] != UNSEEN {
                continue;
            }
            let id = components.len() as u32;
            let mut members = vec![start as u32];
            component[start] = id;
            let mut i = 0;
            while i < members.len() {
                for &n in &adj[members[i] as usize] {
                    if component[n as usize] == UNSEEN {
                        component[n as usize] = id;
                        members.push(n);
                    }
                }
                i += 1;
            }
            components.push(members);
        }
        RelationGraph {
            relation: relation.into(),
            nodes,
            edges,
            adj,
            components,
        }
    }

    /// Train-split subgraph of the base relation `name`.
    pub fn relation_subgraph(store: &TripleStore, name: &str) -> Result<Self> {
        let r = store.relations.get(name).ok_or_else(|| Error::UnknownSymbol {
            kind: "relation",
            name: name.to_owned(),
        })?;
        Ok(Self::from_edges(
            name,
            store.train.iter().filter(|t| t.relation == r).map(|t| (t.head, t.tail)),
        ))
    }

    pub fn relation(&self) -> &str {
        &self.relation
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Entity ids, ascending; local node `i` is `nodes()[i]`.
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn neighbors(&self, node: usize) -> &[u32] {
        &self.adj[node]
    }

    /// Hop distances from `src` in the undirected view; `None` when unreachable.
    pub fn distances_from(&self, src: usize) -> Vec<Option<u32>> {
        let mut bfs = Bfs::new(self.n_nodes());
        bfs.run(self, src, |_| false);
        (0..self.n_nodes()).map(|v| bfs.dist(v)).collect()
    }

    /// Share of directed edges whose reverse is absent.
    pub fn khs(&self) -> Result<f64> {
        if self.edges.is_empty() {
            return Err(Error::domain(format!("relation `{}` has no edges", self.relation)));
        }
        let asymmetric = self
            .edges
            .iter()
            .filter(|&&(a, b)| self.edges.binary_search(&(b, a)).is_err())
            .count();
        Ok(asymmetric as f64 / self.edges.len() as f64)
    }

    /// Curvature estimate of the triangle `(a, b, c)` over local ids. The
    /// midpoint of `b → c` is taken on the BFS parent chain from `b`, where
    /// neighbours are visited in ascending order and the first discoverer
    /// becomes the parent.
    pub fn xi_triangle(&self, a: usize, b: usize, c: usize) -> Triangle {
        let mut scratch = Bfs::new(self.n_nodes());
        self.xi_triangle_with(&mut scratch, a, b, c)
    }

    fn xi_triangle_with(&self, bfs: &mut Bfs, a: usize, b: usize, c: usize) -> Triangle {
        bfs.run(self, b, |v| v == c);
        let Some(d_bc) = bfs.dist(c) else {
            return Triangle::Disconnected;
        };
        if d_bc % 2 == 1 {
            return Triangle::OddPath;
        }
        let mut m = c;
        for _ in 0..d_bc / 2 {
            m = bfs.parent[m] as usize;
        }
        let (mut left, mut found) = (3, [false; 3]);
        let targets = [m, b, c];
        bfs.run(self, a, |v| {
            for (i, &t) in targets.iter().enumerate() {
                if v == t && !found[i] {
                    found[i] = true;
                    left -= 1;
                }
            }
            left == 0
        });
        let (Some(d_am), Some(d_ab), Some(d_ac)) = (bfs.dist(m), bfs.dist(b), bfs.dist(c)) else {
            return Triangle::Disconnected;
        };
        if d_am == 0 {
            return Triangle::Degenerate;
        }
        let sq = |x: u32| (x as f64) * (x as f64);
        let xi = (sq(d_am) + sq(d_bc) / 4.0 - (sq(d_ab) + sq(d_ac)) / 2.0) / (2.0 * d_am as f64);
        Triangle::Value(xi)
    }

    /// Mean and standard error of the triangle estimate over `n_samples`
    /// accepted triangles.
    ///
    /// Distinct nodes `(a, b, c)` are drawn uniformly among triples lying in a
    /// common connected component, which equals uniform sampling with
    /// disconnected triples rejected. Triangles with an odd `b`–`c` distance
    /// or with `a` on the midpoint are rejected and counted.
    pub fn xi_estimate<R: Rng + ?Sized>(&self, n_samples: usize, rng: &mut R) -> Result<XiEstimate> {
        let eligible: Vec<(usize, f64)> = self
            .components
            .iter()
            .enumerate()
            .filter(|(_, m)| m.len() >= 3)
            .map(|(i, m)| {
                let n = m.len() as f64;
                (i, n * (n - 1.0) * (n - 2.0))
            })
            .collect();
        if eligible.is_empty() {
            return Err(Error::domain(format!(
                "relation `{}` has no connected component with 3 or more nodes",
                self.relation
            )));
        }
        let total: f64 = eligible.iter().map(|e| e.1).sum();
        let max_attempts = n_samples.saturating_mul(100).max(1_000);
        let mut bfs = Bfs::new(self.n_nodes());
        let (mut values, mut rejected) = (Vec::with_capacity(n_samples), 0usize);
        let mut attempts = 0;
        while values.len() < n_samples && attempts < max_attempts {
            attempts += 1;
            let mut pick = rng.random_range(0.0..total);
            let mut comp = eligible[eligible.len() - 1].0;
            for &(i, w) in &eligible {
                if pick < w {
                    comp = i;
                    break;
                }
                pick -= w;
            }
            let members = &self.components[comp];
            let n = members.len();
            let ia = rng.random_range(0..n);
            let mut ib = rng.random_range(0..n - 1);
            if ib >= ia {
                ib += 1;
            }
            let mut ic = rng.random_range(0..n - 2);
            for lo in [ia.min(ib), ia.max(ib)] {
                if ic >= lo {
                    ic += 1;
                }
            }
            let (a, b, c) = (members[ia] as usize, members[ib] as usize, members[ic] as usize);
            match self.xi_triangle_with(&mut bfs, a, b, c) {
                Triangle::Value(x) => values.push(x),
                _ => rejected += 1,
            }
        }
        if values.is_empty() {
            return Err(Error::domain(format!(
                "no valid triangle for relation `{}` after {attempts} attempts",
                self.relation
            )));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let stderr = if values.len() > 1 {
            let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            f64::NAN
        };
        Ok(XiEstimate {
            mean,
            stderr,
            accepted: values.len(),
            rejected,
        })
    }
}

/// Outcome of one sampled triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Triangle {
    Value(f64),
    Disconnected,
    /// `d(b, c)` is odd, so the path has no vertex midpoint.
    OddPath,
    /// `a` is the midpoint.
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XiEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub accepted: usize,
    pub rejected: usize,
}

/// Reusable BFS state; a generation stamp avoids clearing between runs.
struct Bfs {
    dist: Vec<u32>,
    parent: Vec<u32>,
    stamp: Vec<u32>,
    generation: u32,
    queue: VecDeque<u32>,
}

impl Bfs {
    fn new(n: usize) -> Self {
        Bfs {
            dist: vec![0; n],
            parent: vec![UNSEEN; n],
            stamp: vec![0; n],
            generation: 0,
            queue: VecDeque::new(),
        }
    }

    fn dist(&self, v: usize) -> Option<u32> {
        (self.stamp[v] == self.generation).then_some(self.dist[v])
    }

    /// Breadth-first search from `src`, stopping once `stop` returns true for
    /// a settled node.
    fn run(&mut self, g: &RelationGraph, src: usize, mut stop: impl FnMut(usize) -> bool) {
        self.generation += 1;
        let gen = self.generation;
        self.queue.clear();
        self.stamp[src] = gen;
        self.dist[src] = 0;
        self.parent[src] = UNSEEN;
        if stop(src) {
            return;
        }
        self.queue.push_back(src as u32);
        while let Some(u) = self.queue.pop_front() {
            let du = self.dist[u as usize];
            for &v in &g.adj[u as usize] {
                let vi = v as usize;
                if self.stamp[vi] != gen {
                    self.stamp[vi] = gen;
                    self.dist[vi] = du + 1;
                    self.parent[vi] = u;
                    if stop(vi) {
                        return;
                    }
                    self.queue.push_back(v);
                }
            }
        }
    }
}

/// One line of the hierarchy report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HierarchyRow {
    pub relation: String,
    pub nodes: usize,
    pub edges: usize,
    pub khs: f64,
    pub xi_mean: f64,
    pub xi_stderr: f64,
    pub samples_accepted: usize,
    pub samples_rejected: usize,
}

/// Both diagnostics for one relation. When no triangle can be sampled the
/// curvature columns are NaN and the counts zero.
pub fn analyze_relation(store: &TripleStore, name: &str, n_samples: usize, seed: u64) -> Result<HierarchyRow> {
    let g = RelationGraph::relation_subgraph(store, name)?;
    let khs = g.khs()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xi = g.xi_estimate(n_samples, &mut rng).unwrap_or(XiEstimate {
        mean: f64::NAN,
        stderr: f64::NAN,
        accepted: 0,
        rejected: 0,
    });
    Ok(HierarchyRow {
        relation: name.to_owned(),
        nodes: g.n_nodes(),
        edges: g.n_edges(),
        khs,
        xi_mean: xi.mean,
        xi_stderr: xi.stderr,
        samples_accepted: xi.accepted,
        samples_rejected: xi.rejected,
    })
}

pub fn write_hierarchy_csv(path: impl AsRef<Path>, rows: &[HierarchyRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record([
        "relation",
        "nodes",
        "edges",
        "khs",
        "xi_mean",
        "xi_stderr",
        "samples_accepted",
        "samples_rejected",
    ])?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
