//! Finite graphs whose edges carry positive generator labels.
//!
//! Every edge is stored once, oriented, with a positive label. Crossing an edge
//! against its orientation reads the inverse letter. Vertex ids are `0..n`.

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::word::{letter_key, Basis, Letter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub label: Letter,
}

/// An oriented edge: `edge` traversed forwards or backwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Dir {
    pub edge: usize,
    pub fwd: bool,
}

impl Dir {
    pub fn fwd(edge: usize) -> Self {
        Dir { edge, fwd: true }
    }

    pub fn bwd(edge: usize) -> Self {
        Dir { edge, fwd: false }
    }

    pub fn rev(self) -> Self {
        Dir { edge: self.edge, fwd: !self.fwd }
    }
}

pub type Path = Vec<Dir>;

pub fn reverse_path(p: &[Dir]) -> Path {
    p.iter().rev().map(|d| d.rev()).collect()
}

/// Cancel adjacent `d · d⁻¹` pairs.
pub fn tighten(p: &[Dir]) -> Path {
    let mut out: Path = Vec::with_capacity(p.len());
    for &d in p {
        if out.last() == Some(&d.rev()) {
            out.pop();
        } else {
            out.push(d);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct LabeledGraph {
    pub num_vertices: usize,
    pub edges: Vec<Edge>,
    pub basepoint: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NaturalEdge {
    pub path: Path,
    /// A closed natural edge is a whole circle component.
    pub closed: bool,
}

impl NaturalEdge {
    pub fn len(&self) -> usize {
        self.path.len()
    }

    pub fn is_empty(&self) -> bool {
        self.path.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NaturalStructure {
    pub branch_points: Vec<usize>,
    pub natural_edges: Vec<NaturalEdge>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Dot,
    Json,
}

impl LabeledGraph {
    pub fn new(num_vertices: usize, edges: Vec<Edge>, basepoint: Option<usize>) -> Self {
        LabeledGraph { num_vertices, edges, basepoint }
    }

    /// Single vertex, no edges.
    pub fn point(basepoint: bool) -> Self {
        LabeledGraph { num_vertices: 1, edges: Vec::new(), basepoint: basepoint.then_some(0) }
    }

    /// Rose with one petal per generator.
    pub fn rose(rank: usize) -> Self {
        let edges = (1..=rank as Letter).map(|l| Edge { from: 0, to: 0, label: l }).collect();
        LabeledGraph { num_vertices: 1, edges, basepoint: Some(0) }
    }

    pub fn is_degenerate(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn origin(&self, d: Dir) -> usize {
        let e = &self.edges[d.edge];
        if d.fwd {
            e.from
        } else {
            e.to
        }
    }

    pub fn terminus(&self, d: Dir) -> usize {
        self.origin(d.rev())
    }

    pub fn dir_label(&self, d: Dir) -> Letter {
        let l = self.edges[d.edge].label;
        if d.fwd {
            l
        } else {
            -l
        }
    }

    pub fn path_label(&self, p: &[Dir]) -> Vec<Letter> {
        p.iter().map(|&d| self.dir_label(d)).collect()
    }

    /// Directions leaving each vertex. A loop contributes two.
    pub fn directions(&self) -> Vec<Vec<Dir>> {
        let mut out = vec![Vec::new(); self.num_vertices];
        for (i, e) in self.edges.iter().enumerate() {
            out[e.from].push(Dir::fwd(i));
            out[e.to].push(Dir::bwd(i));
        }
        out
    }

    pub fn valences(&self) -> Vec<usize> {
        let mut v = vec![0; self.num_vertices];
        for e in &self.edges {
            v[e.from] += 1;
            v[e.to] += 1;
        }
        v
    }

    /// Outgoing direction with the given signed label at each vertex, if the
    /// graph is folded there.
    pub fn label_index(&self) -> Vec<HashMap<Letter, Dir>> {
        let mut out = vec![HashMap::new(); self.num_vertices];
        for (i, e) in self.edges.iter().enumerate() {
            out[e.from].insert(e.label, Dir::fwd(i));
            out[e.to].insert(-e.label, Dir::bwd(i));
        }
        out
    }

    /// No two edges with the same label share an origin or a terminus.
    pub fn is_folded(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        for e in &self.edges {
            if !seen.insert((e.from, e.label)) || !seen.insert((e.to, -e.label)) {
                return false;
            }
        }
        true
    }

    /// Follow `word` from `v`; `None` if some letter is not readable.
    pub fn read(&self, index: &[HashMap<Letter, Dir>], v: usize, word: &[Letter]) -> Option<(usize, Path)> {
        let mut cur = v;
        let mut path = Vec::with_capacity(word.len());
        for l in word {
            let d = *index[cur].get(l)?;
            path.push(d);
            cur = self.terminus(d);
        }
        Some((cur, path))
    }

    /// Vertex sets of connected components, each sorted, ordered by least id.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut uf = UnionFind::new(self.num_vertices);
        for e in &self.edges {
            uf.union(e.from, e.to);
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for v in 0..self.num_vertices {
            groups.entry(uf.find(v)).or_default().push(v);
        }
        let mut comps: Vec<Vec<usize>> = groups.into_values().collect();
        comps.sort_by_key(|c| c[0]);
        comps
    }

    pub fn is_connected(&self) -> bool {
        self.num_vertices <= 1 || self.components().len() == 1
    }

    /// First Betti number of a connected graph.
    pub fn rank(&self) -> Result<usize> {
        if !self.is_connected() {
            return Err(Error::Precondition("rank of a disconnected graph".into()));
        }
        Ok(self.edges.len() + 1 - self.num_vertices.max(1))
    }

    /// Subgraph on the given vertices (edges with both ends inside), ids
    /// renumbered in increasing order. Returns the graph and old→new map.
    pub fn induced(&self, vertices: &[usize]) -> (LabeledGraph, Vec<Option<usize>>) {
        let mut map = vec![None; self.num_vertices];
        let mut sorted = vertices.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        for (i, &v) in sorted.iter().enumerate() {
            map[v] = Some(i);
        }
        let edges = self
            .edges
            .iter()
            .filter_map(|e| Some(Edge { from: map[e.from]?, to: map[e.to]?, label: e.label }))
            .collect();
        let basepoint = self.basepoint.and_then(|b| map[b]);
        (LabeledGraph { num_vertices: sorted.len(), edges, basepoint }, map)
    }

    /// Subgraph spanned by the given edges (and their endpoints).
    pub fn edge_subgraph(&self, edge_ids: &[usize]) -> (LabeledGraph, Vec<Option<usize>>) {
        let mut keep = vec![false; self.num_vertices];
        for &i in edge_ids {
            keep[self.edges[i].from] = true;
            keep[self.edges[i].to] = true;
        }
        let mut map = vec![None; self.num_vertices];
        let mut n = 0;
        for v in 0..self.num_vertices {
            if keep[v] {
                map[v] = Some(n);
                n += 1;
            }
        }
        let mut ids = edge_ids.to_vec();
        ids.sort_unstable();
        ids.dedup();
        let edges = ids
            .iter()
            .map(|&i| {
                let e = self.edges[i];
                Edge { from: map[e.from].unwrap(), to: map[e.to].unwrap(), label: e.label }
            })
            .collect();
        let basepoint = self.basepoint.and_then(|b| map[b]);
        (LabeledGraph { num_vertices: n, edges, basepoint }, map)
    }

    /// Edge ids surviving in the core, plus the vertex set of the core.
    pub fn core_parts(&self, keep_basepoint: bool) -> (Vec<usize>, Vec<bool>) {
        let mut alive_v = vec![true; self.num_vertices];
        let mut alive_e = vec![true; self.edges.len()];
        let mut val = self.valences();
        let dirs = self.directions();
        let protect = if keep_basepoint { self.basepoint } else { None };
        let mut stack: Vec<usize> = (0..self.num_vertices).filter(|&v| val[v] <= 1).collect();
        while let Some(v) = stack.pop() {
            if !alive_v[v] || val[v] > 1 || Some(v) == protect {
                continue;
            }
            alive_v[v] = false;
            for &d in &dirs[v] {
                if alive_e[d.edge] {
                    alive_e[d.edge] = false;
                    let w = self.terminus(d);
                    val[v] -= 1;
                    if w != v {
                        val[w] -= 1;
                        if val[w] <= 1 {
                            stack.push(w);
                        }
                    }
                }
            }
        }
        let edges: Vec<usize> = (0..self.edges.len()).filter(|&i| alive_e[i]).collect();
        (edges, alive_v)
    }

    /// Iteratively remove valence ≤ 1 vertices (sparing the basepoint when
    /// `keep_basepoint`). A fully contractible graph becomes a single vertex.
    pub fn core(&self, keep_basepoint: bool) -> LabeledGraph {
        let (_, alive) = self.core_parts(keep_basepoint);
        let verts: Vec<usize> = (0..self.num_vertices).filter(|&v| alive[v]).collect();
        if verts.is_empty() {
            let keep = if keep_basepoint { self.basepoint } else { None };
            return LabeledGraph::point(keep.is_some());
        }
        let (mut g, _) = self.induced(&verts);
        if !keep_basepoint {
            g.basepoint = None;
        }
        g
    }

    pub fn is_core(&self) -> bool {
        self.num_vertices == 1 && self.edges.is_empty() || self.valences().iter().all(|&v| v >= 2)
    }

    /// Branch points and natural edges of a core graph.
    pub fn natural_structure(&self) -> Result<NaturalStructure> {
        if self.edges.is_empty() {
            return Ok(NaturalStructure { branch_points: Vec::new(), natural_edges: Vec::new() });
        }
        let val = self.valences();
        if let Some(v) = (0..self.num_vertices).find(|&v| val[v] < 2) {
            return Err(Error::Precondition(format!("vertex {v} has valence {} in a non-core graph", val[v])));
        }
        let dirs = self.directions();
        let branch: Vec<usize> = (0..self.num_vertices).filter(|&v| val[v] >= 3).collect();
        let mut used = vec![false; self.edges.len()];
        let mut nat = Vec::new();
        // `next` at a bivalent vertex: the other direction.
        let other = |v: usize, arrived: Dir| -> Dir {
            let ds = &dirs[v];
            if ds[0] == arrived {
                ds[1]
            } else {
                ds[0]
            }
        };
        for &b in &branch {
            for &d0 in &dirs[b] {
                if used[d0.edge] {
                    continue;
                }
                let mut path = vec![d0];
                used[d0.edge] = true;
                let mut v = self.terminus(d0);
                let mut last = d0;
                while val[v] == 2 {
                    let d = other(v, last.rev());
                    used[d.edge] = true;
                    path.push(d);
                    last = d;
                    v = self.terminus(d);
                }
                nat.push(NaturalEdge { path, closed: false });
            }
        }
        for v0 in 0..self.num_vertices {
            let Some(&d0) = dirs[v0].iter().find(|d| !used[d.edge]) else { continue };
            // remaining edges form circles
            let mut path = vec![d0];
            used[d0.edge] = true;
            let mut v = self.terminus(d0);
            let mut last = d0;
            while v != v0 {
                let d = other(v, last.rev());
                used[d.edge] = true;
                path.push(d);
                last = d;
                v = self.terminus(d);
            }
            nat.push(NaturalEdge { path, closed: true });
        }
        Ok(NaturalStructure { branch_points: branch, natural_edges: nat })
    }

    /// Canonical code of a folded connected graph read from `seed`: a BFS that
    /// visits outgoing directions in letter order.
    fn code_from(&self, index: &[HashMap<Letter, Dir>], seed: usize) -> Vec<u64> {
        let n = self.num_vertices;
        let mut num = vec![u64::MAX; n];
        let mut order = VecDeque::new();
        num[seed] = 0;
        order.push_back(seed);
        let mut next = 1u64;
        let mut code = Vec::with_capacity(2 * self.edges.len() + 2);
        while let Some(v) = order.pop_front() {
            let mut ls: Vec<(u32, Dir)> = index[v].iter().map(|(&l, &d)| (letter_key(l), d)).collect();
            ls.sort_unstable();
            code.push(u64::MAX - ls.len() as u64);
            for (k, d) in ls {
                let w = self.terminus(d);
                if num[w] == u64::MAX {
                    num[w] = next;
                    next += 1;
                    order.push_back(w);
                }
                code.push(((k as u64) << 32) | num[w]);
            }
        }
        code
    }

    fn seed_invariant(&self, index: &[HashMap<Letter, Dir>], v: usize) -> Vec<u32> {
        let mut ks: Vec<u32> = index[v].keys().map(|&l| letter_key(l)).collect();
        ks.sort_unstable();
        ks
    }

    /// Canonical code of one connected folded component (vertices `comp`).
    fn component_code(&self, index: &[HashMap<Letter, Dir>], comp: &[usize], seeds: Option<&[usize]>) -> Vec<u64> {
        let candidates: Vec<usize> = match seeds {
            Some(s) => s.to_vec(),
            None => {
                let best = comp.iter().map(|&v| (index[v].len(), self.seed_invariant(index, v))).min().unwrap();
                comp.iter().copied().filter(|&v| (index[v].len(), self.seed_invariant(index, v)) == best).collect()
            }
        };
        candidates.iter().map(|&s| self.code_from(index, s)).min().unwrap_or_default()
    }

    /// Canonical form of a folded graph, as a sorted list of component codes.
    pub fn canonical_code(&self, respect_basepoint: bool) -> Result<Vec<Vec<u64>>> {
        if !self.is_folded() {
            return Err(Error::Precondition("isomorphism test needs folded graphs".into()));
        }
        let index = self.label_index();
        let mut codes = Vec::new();
        for comp in self.components() {
            let seeds: Option<Vec<usize>> = match (respect_basepoint, self.basepoint) {
                (true, Some(b)) if comp.contains(&b) => Some(vec![b]),
                _ => None,
            };
            let mut c = self.component_code(&index, &comp, seeds.as_deref());
            if seeds.is_some() {
                c.insert(0, u64::MAX);
            }
            codes.push(c);
        }
        codes.sort();
        Ok(codes)
    }

    /// Label-preserving isomorphism test for folded graphs.
    pub fn isomorphic(&self, other: &LabeledGraph, respect_basepoint: bool) -> Result<bool> {
        if self.num_vertices != other.num_vertices || self.edges.len() != other.edges.len() {
            if !self.is_folded() || !other.is_folded() {
                return Err(Error::Precondition("isomorphism test needs folded graphs".into()));
            }
            return Ok(false);
        }
        if respect_basepoint && self.basepoint.is_some() != other.basepoint.is_some() {
            return Ok(false);
        }
        Ok(self.canonical_code(respect_basepoint)? == other.canonical_code(respect_basepoint)?)
    }

    /// Label-preserving graph morphism sending `v` to `w`, when `target` is
    /// folded. Returns the vertex map and the image of each edge.
    pub fn map_into(
        &self,
        target: &LabeledGraph,
        target_index: &[HashMap<Letter, Dir>],
        v: usize,
        w: usize,
    ) -> Option<(Vec<usize>, Vec<Dir>)> {
        let mut vmap = vec![usize::MAX; self.num_vertices];
        let mut emap = vec![Dir::fwd(usize::MAX); self.edges.len()];
        let dirs = self.directions();
        let mut stack = vec![v];
        vmap[v] = w;
        while let Some(x) = stack.pop() {
            for &d in &dirs[x] {
                let l = self.dir_label(d);
                let td = *target_index[vmap[x]].get(&l)?;
                let y = self.terminus(d);
                let ty = target.terminus(td);
                if vmap[y] == usize::MAX {
                    vmap[y] = ty;
                    stack.push(y);
                } else if vmap[y] != ty {
                    return None;
                }
                emap[d.edge] = if d.fwd { td } else { td.rev() };
            }
        }
        // vertices in other components stay unmapped
        Some((vmap, emap))
    }

    /// BFS spanning tree of the component of `root` (directions tried in
    /// edge order): visiting order, parent direction of each vertex and the
    /// set of tree edges.
    pub fn bfs_tree(&self, root: usize) -> (Vec<usize>, Vec<Option<Dir>>, Vec<bool>) {
        let dirs = self.directions();
        let mut parent: Vec<Option<Dir>> = vec![None; self.num_vertices];
        let mut seen = vec![false; self.num_vertices];
        let mut tree = vec![false; self.edges.len()];
        let mut order = vec![root];
        seen[root] = true;
        let mut i = 0;
        while i < order.len() {
            let v = order[i];
            i += 1;
            let mut ds = dirs[v].clone();
            ds.sort();
            for d in ds {
                let w = self.terminus(d);
                if !seen[w] {
                    seen[w] = true;
                    parent[w] = Some(d);
                    tree[d.edge] = true;
                    order.push(w);
                }
            }
        }
        (order, parent, tree)
    }

    /// Tree paths from `root` to each vertex of its component (see
    /// [`LabeledGraph::bfs_tree`]) and the set of tree edges.
    pub fn spanning_tree(&self, root: usize) -> (Vec<Option<Path>>, Vec<bool>) {
        let (order, parent, tree) = self.bfs_tree(root);
        let mut paths: Vec<Option<Path>> = vec![None; self.num_vertices];
        paths[root] = Some(Vec::new());
        for &v in order.iter().skip(1) {
            let d = parent[v].unwrap();
            let mut p = paths[self.origin(d)].clone().unwrap();
            p.push(d);
            paths[v] = Some(p);
        }
        (paths, tree)
    }

    pub fn to_json(&self, basis: &Basis) -> String {
        let edges: Vec<serde_json::Value> = self
            .edges
            .iter()
            .map(|e| serde_json::json!({"from": e.from, "to": e.to, "label": basis.name(e.label).to_string()}))
            .collect();
        serde_json::json!({
            "vertices": (0..self.num_vertices).collect::<Vec<_>>(),
            "basepoint": self.basepoint,
            "edges": edges,
        })
        .to_string()
    }

    pub fn from_json(text: &str, basis: &Basis) -> Result<Self> {
        #[derive(Deserialize)]
        struct E {
            from: usize,
            to: usize,
            label: String,
        }
        #[derive(Deserialize)]
        struct G {
            vertices: Vec<usize>,
            basepoint: Option<usize>,
            edges: Vec<E>,
        }
        let g: G = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        let n = g.vertices.len();
        let mut sorted = g.vertices.clone();
        sorted.sort_unstable();
        if sorted != (0..n).collect::<Vec<_>>() {
            return Err(Error::Format("vertex ids must be exactly 0..n".into()));
        }
        let mut edges = Vec::with_capacity(g.edges.len());
        for e in g.edges {
            let mut cs = e.label.chars();
            let l = match (cs.next(), cs.next()) {
                (Some(c), None) => basis.letter(c).map_err(|e| Error::Format(e.to_string()))?,
                _ => return Err(Error::Format(format!("bad label {:?}", e.label))),
            };
            if l < 0 {
                return Err(Error::Format("edge labels must be generators, not inverses".into()));
            }
            if e.from >= n || e.to >= n {
                return Err(Error::Format("edge endpoint out of range".into()));
            }
            edges.push(Edge { from: e.from, to: e.to, label: l });
        }
        if let Some(b) = g.basepoint {
            if b >= n {
                return Err(Error::Format("basepoint out of range".into()));
            }
        }
        Ok(LabeledGraph { num_vertices: n, edges, basepoint: g.basepoint })
    }

    pub fn to_dot(&self, basis: &Basis) -> String {
        let mut s = String::from("digraph G {\n");
        for v in 0..self.num_vertices {
            if Some(v) == self.basepoint {
                s.push_str(&format!("  {v} [shape=doublecircle];\n"));
            } else {
                s.push_str(&format!("  {v} [shape=point];\n"));
            }
        }
        for e in &self.edges {
            s.push_str(&format!("  {} -> {} [label=\"{}\"];\n", e.from, e.to, basis.name(e.label)));
        }
        s.push_str("}\n");
        s
    }

    pub fn serialize(&self, basis: &Basis, format: Format) -> String {
        match format {
            Format::Dot => self.to_dot(basis),
            Format::Json => self.to_json(basis),
        }
    }
}

pub(crate) struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Union keeping the smaller root. Returns false if already joined.
    pub(crate) fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi] = lo;
        true
    }
}
