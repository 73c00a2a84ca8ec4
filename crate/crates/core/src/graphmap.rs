//! Graph self-maps representing endomorphisms, their iterates, lifts to
//! Stallings graphs, stratifications and collapses.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{reverse_path, tighten, Dir, Edge, LabeledGraph, Path, UnionFind};
use crate::stallings::{cancellation_constant, subgroup_graph_opts, SubgroupGraph};
use crate::word::{apply_endo, Basis, EndoSpec, Letter, Word};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphMap {
    pub domain: LabeledGraph,
    pub codomain: LabeledGraph,
    pub vertex_map: Vec<usize>,
    pub edge_images: Vec<Path>,
    /// K: longest edge image.
    pub lipschitz: usize,
    /// C: fold count of the Stallings decomposition; `None` when the map is
    /// not π₁-injective or the constant was not computed.
    pub cancellation: Option<usize>,
}

fn letter_dir(l: Letter) -> Dir {
    Dir { edge: (l.unsigned_abs() - 1) as usize, fwd: l > 0 }
}

pub(crate) fn word_to_rose_path(w: &Word) -> Path {
    w.letters().iter().map(|&l| letter_dir(l)).collect()
}

impl GraphMap {
    /// Assemble a map, tightening images and computing K. C is left unset.
    pub fn new(
        domain: LabeledGraph,
        codomain: LabeledGraph,
        vertex_map: Vec<usize>,
        edge_images: Vec<Path>,
    ) -> Result<Self> {
        let edge_images: Vec<Path> = edge_images.iter().map(|p| tighten(p)).collect();
        let lipschitz = edge_images.iter().map(Vec::len).max().unwrap_or(0);
        let f = GraphMap { domain, codomain, vertex_map, edge_images, lipschitz, cancellation: None };
        f.check()?;
        Ok(f)
    }

    /// Assemble without tightening images.
    pub fn new_untightened(
        domain: LabeledGraph,
        codomain: LabeledGraph,
        vertex_map: Vec<usize>,
        edge_images: Vec<Path>,
    ) -> Result<Self> {
        let lipschitz = edge_images.iter().map(Vec::len).max().unwrap_or(0);
        let f = GraphMap { domain, codomain, vertex_map, edge_images, lipschitz, cancellation: None };
        f.check()?;
        Ok(f)
    }

    /// Same as [`GraphMap::new`] and also computes C when the map is π₁-injective.
    pub fn with_constants(
        domain: LabeledGraph,
        codomain: LabeledGraph,
        vertex_map: Vec<usize>,
        edge_images: Vec<Path>,
    ) -> Result<Self> {
        let mut f = GraphMap::new(domain, codomain, vertex_map, edge_images)?;
        f.cancellation = cancellation_constant(&f).ok();
        Ok(f)
    }

    /// Rose self-map realizing `φ`.
    pub fn from_endo(phi: &EndoSpec) -> Result<Self> {
        if let Some(i) = phi.images.iter().position(Word::is_empty) {
            return Err(Error::Input(format!(
                "generator {:?} has trivial image; not a topological representative",
                phi.basis.names()[i]
            )));
        }
        let rose = LabeledGraph::rose(phi.rank());
        let images = phi.images.iter().map(word_to_rose_path).collect();
        GraphMap::with_constants(rose.clone(), rose, vec![0], images)
    }

    /// Endpoint compatibility of every edge image.
    pub fn check(&self) -> Result<()> {
        if self.vertex_map.len() != self.domain.num_vertices || self.edge_images.len() != self.domain.edges.len() {
            return Err(Error::Precondition("map size does not match its domain".into()));
        }
        for (i, p) in self.edge_images.iter().enumerate() {
            let e = self.domain.edges[i];
            let (s, t) = (self.vertex_map[e.from], self.vertex_map[e.to]);
            let mut cur = s;
            for &d in p {
                if d.edge >= self.codomain.edges.len() || self.codomain.origin(d) != cur {
                    return Err(Error::Precondition(format!("image of edge {i} is not a path")));
                }
                cur = self.codomain.terminus(d);
            }
            if cur != t {
                return Err(Error::Precondition(format!("image of edge {i} ends at the wrong vertex")));
            }
        }
        Ok(())
    }

    pub fn is_self_map(&self) -> bool {
        self.domain == self.codomain
    }

    /// Image of one oriented edge.
    pub fn dir_image(&self, d: Dir) -> Path {
        if d.fwd {
            self.edge_images[d.edge].clone()
        } else {
            reverse_path(&self.edge_images[d.edge])
        }
    }

    /// Concatenated images, not tightened.
    pub fn image_raw(&self, p: &[Dir]) -> Path {
        let mut out = Vec::new();
        for &d in p {
            if d.fwd {
                out.extend_from_slice(&self.edge_images[d.edge]);
            } else {
                out.extend(self.edge_images[d.edge].iter().rev().map(|x| x.rev()));
            }
        }
        out
    }

    pub fn image(&self, p: &[Dir]) -> Path {
        tighten(&self.image_raw(p))
    }

    /// `self ∘ g`.
    pub fn compose(&self, g: &GraphMap) -> Result<GraphMap> {
        if g.codomain != self.domain {
            return Err(Error::Precondition("composition of maps between different graphs".into()));
        }
        let vertex_map = g.vertex_map.iter().map(|&v| self.vertex_map[v]).collect();
        let images = g.edge_images.iter().map(|p| self.image(p)).collect();
        GraphMap::new(g.domain.clone(), self.codomain.clone(), vertex_map, images)
    }

    pub fn iterate(&self, k: usize) -> Result<GraphMap> {
        if !self.is_self_map() {
            return Err(Error::Precondition("iterating a map that is not a self-map".into()));
        }
        let mut out = self.clone();
        for _ in 1..k.max(1) {
            out = self.compose(&out)?;
        }
        if k == 0 {
            let n = self.domain.edges.len();
            return GraphMap::new(
                self.domain.clone(),
                self.domain.clone(),
                (0..self.domain.num_vertices).collect(),
                (0..n).map(|i| vec![Dir::fwd(i)]).collect(),
            );
        }
        out.cancellation = None;
        Ok(out)
    }

    /// Read back an endomorphism when this is a self-map of the standard rose.
    pub fn rose_endo(&self, basis: &Basis) -> Option<EndoSpec> {
        let rose = LabeledGraph::rose(basis.rank());
        if self.domain.edges.len() != rose.edges.len()
            || self.domain.num_vertices != 1
            || self.codomain.num_vertices != 1
        {
            return None;
        }
        if self.domain.edges.iter().zip(&rose.edges).any(|(a, b)| a.label != b.label) {
            return None;
        }
        let images = self.edge_images.iter().map(|p| Word::reduce(&self.codomain.path_label(p))).collect();
        EndoSpec::new(basis.clone(), images).ok()
    }

    /// Edges whose image is eventually trivial.
    pub fn pretrivial_edges(&self) -> Vec<bool> {
        let m = self.domain.edges.len();
        let mut pre = vec![false; m];
        if !self.is_self_map() {
            for i in 0..m {
                pre[i] = self.edge_images[i].is_empty();
            }
            return pre;
        }
        loop {
            let mut changed = false;
            for i in 0..m {
                if !pre[i] && self.edge_images[i].iter().all(|d| pre[d.edge]) {
                    pre[i] = true;
                    changed = true;
                }
            }
            if !changed {
                return pre;
            }
        }
    }

    /// Measured cancellation: the largest number of edges cancelled when
    /// tightening `f(e₁)·f(e₂)` over all turns (e₁, e₂) of immersed
    /// length-two paths.
    pub fn measured_turn_cancellation(&self) -> usize {
        let dirs = self.domain.directions();
        let mut worst = 0;
        for v in 0..self.domain.num_vertices {
            for &a in &dirs[v] {
                for &b in &dirs[v] {
                    if a == b {
                        continue;
                    }
                    let left = self.dir_image(a.rev());
                    let right = self.dir_image(b);
                    let mut k = 0;
                    while k < left.len() && k < right.len() && left[left.len() - 1 - k] == right[k].rev() {
                        k += 1;
                    }
                    worst = worst.max(k);
                }
            }
        }
        worst
    }

    /// Restrict a self-map to the free core of its domain, composing with the
    /// retraction that collapses hanging trees.
    pub fn restrict_to_core(&self) -> Result<GraphMap> {
        if !self.is_self_map() {
            return Err(Error::Precondition("core restriction needs a self-map".into()));
        }
        let g = &self.domain;
        let (core_edges, alive) = g.core_parts(false);
        if core_edges.len() == g.edges.len() {
            let mut out = self.clone();
            out.domain.basepoint = None;
            out.codomain.basepoint = None;
            return Ok(out);
        }
        if core_edges.is_empty() {
            return Err(Error::Precondition("graph has trivial fundamental group".into()));
        }
        // retraction of each vertex onto the core: walk up hanging trees
        let n = g.num_vertices;
        let mut retract: Vec<usize> = (0..n).collect();
        let mut to_core: Vec<Path> = vec![Vec::new(); n];
        let dirs = g.directions();
        let mut in_core_edge = vec![false; g.edges.len()];
        for &e in &core_edges {
            in_core_edge[e] = true;
        }
        let mut q: VecDeque<usize> = (0..n).filter(|&v| alive[v]).collect();
        let mut seen = alive.clone();
        while let Some(v) = q.pop_front() {
            for &d in &dirs[v] {
                if in_core_edge[d.edge] {
                    continue;
                }
                let w = g.terminus(d);
                if !seen[w] {
                    seen[w] = true;
                    retract[w] = retract[v];
                    let mut p = vec![d.rev()];
                    p.extend_from_slice(&to_core[v]);
                    to_core[w] = p;
                    q.push_back(w);
                }
            }
        }
        let (sub, vmap) = g.edge_subgraph(&core_edges);
        let mut emap = vec![usize::MAX; g.edges.len()];
        for (newi, &old) in core_edges.iter().enumerate() {
            emap[old] = newi;
        }
        let mut images = Vec::with_capacity(core_edges.len());
        for &old in &core_edges {
            let e = g.edges[old];
            let mut p = reverse_path(&to_core[self.vertex_map[e.from]]);
            p.extend_from_slice(&self.edge_images[old]);
            p.extend_from_slice(&to_core[self.vertex_map[e.to]]);
            let p = tighten(&p);
            let mut np = Vec::with_capacity(p.len());
            for d in p {
                if emap[d.edge] == usize::MAX {
                    return Err(Error::Internal("tight core path left the core".into()));
                }
                np.push(Dir { edge: emap[d.edge], fwd: d.fwd });
            }
            images.push(np);
        }
        let mut vm = vec![0; sub.num_vertices];
        for v in 0..n {
            if let Some(nv) = vmap[v] {
                vm[nv] = vmap[retract[self.vertex_map[v]]].unwrap();
            }
        }
        let mut sub = sub;
        sub.basepoint = None;
        GraphMap::new(sub.clone(), sub, vm, images)
    }
}

/// `S[φ^k(F)]`, with generator tracking so members can be pulled back along
/// `F ≅ φ^k(F)`.
pub fn iterated_stallings(phi: &EndoSpec, k: usize) -> Result<SubgroupGraph> {
    iterated_stallings_opts(phi, k, true)
}

pub fn iterated_stallings_opts(phi: &EndoSpec, k: usize, track: bool) -> Result<SubgroupGraph> {
    let pk = phi.power(k);
    let (s, trace) = subgroup_graph_opts(&phi.basis, &pk.images, track)?;
    if trace.collapse_occurred || s.rank() != phi.rank() {
        return Err(Error::NotInjective {
            witness: format!(
                "folding the images of the {k}-th iterate dropped rank from {} to {}",
                phi.rank(),
                s.rank()
            ),
        });
    }
    Ok(s)
}

/// A point of the covering space of a subgroup graph: a core vertex plus the
/// reduced word hanging off it.
#[derive(Debug, Clone, PartialEq, Eq)]
struct CoverPos {
    core: usize,
    hang: Vec<Letter>,
}

fn cover_step(s: &SubgroupGraph, pos: &mut CoverPos, l: Letter, trail: &mut Path) {
    if let Some(&last) = pos.hang.last() {
        if last == -l {
            pos.hang.pop();
        } else {
            pos.hang.push(l);
        }
        return;
    }
    match s.index()[pos.core].get(&l) {
        Some(&d) => {
            trail.push(d);
            pos.core = s.graph.terminus(d);
        }
        None => pos.hang.push(l),
    }
}

/// Lift of the rose map `f` to the subgroup graph `s` (which must be
/// invariant: `φ(π₁ s) ≤ π₁ s`), before naturalization: edge images are the
/// retractions onto `s` of the lifted image paths.
pub fn homotopy_lift_raw(f: &GraphMap, s: &SubgroupGraph) -> Result<GraphMap> {
    let phi = f
        .rose_endo(&s.basis)
        .ok_or_else(|| Error::Precondition("lifting is implemented for self-maps of the ambient rose".into()))?;
    let g = &s.graph;
    let n = g.num_vertices;
    let root = s.basepoint();
    let mut pos: Vec<Option<CoverPos>> = vec![None; n];
    pos[root] = Some(CoverPos { core: root, hang: Vec::new() });
    let (order, parent, tree) = g.bfs_tree(root);
    let mut images: Vec<Option<Path>> = vec![None; g.edges.len()];
    for &v in order.iter().skip(1) {
        let d = parent[v].unwrap();
        let u = g.origin(d);
        let mut p = pos[u].clone().unwrap();
        let mut trail = Vec::new();
        for &l in apply_endo(&phi, &Word::letter(g.dir_label(d))).letters() {
            cover_step(s, &mut p, l, &mut trail);
        }
        let img = tighten(&trail);
        images[d.edge] = Some(if d.fwd { img } else { reverse_path(&img) });
        pos[v] = Some(p);
    }
    if order.len() != n {
        return Err(Error::Precondition("subgroup graph is not connected".into()));
    }
    for (i, e) in g.edges.iter().enumerate() {
        if tree[i] {
            continue;
        }
        let mut p = pos[e.from].clone().unwrap();
        let mut trail = Vec::new();
        for &l in phi.images[(e.label - 1) as usize].letters() {
            cover_step(s, &mut p, l, &mut trail);
        }
        if Some(&p) != pos[e.to].as_ref() {
            return Err(Error::Invariance(format!(
                "image of a loop through edge {i} does not lift: the subgraph is not invariant"
            )));
        }
        images[i] = Some(tighten(&trail));
    }
    let vertex_map = pos.iter().map(|p| p.as_ref().unwrap().core).collect();
    let images = images.into_iter().map(Option::unwrap).collect();
    GraphMap::with_constants(g.clone(), g.clone(), vertex_map, images)
}

/// Natural representative on `s`: the raw lift with branch-point images
/// moved to branch points and natural-edge images tightened.
pub fn homotopy_lift(f: &GraphMap, s: &SubgroupGraph) -> Result<GraphMap> {
    let raw = homotopy_lift_raw(f, s)?;
    let core = raw.restrict_to_core()?;
    naturalize(&core)
}

/// Move images of branch points to the nearest branch point along the
/// natural edge they land in (ties to the smaller vertex id), then tighten
/// each natural edge image and spread it evenly over the edges of that
/// natural edge.
pub fn naturalize(f: &GraphMap) -> Result<GraphMap> {
    if !f.is_self_map() {
        return Err(Error::Precondition("naturalization needs a self-map".into()));
    }
    let g = &f.domain;
    let ns = g.natural_structure()?;
    if ns.branch_points.is_empty() {
        return Ok(f.clone());
    }
    let val = g.valences();
    let is_branch: Vec<bool> = val.iter().map(|&v| v >= 3).collect();
    // for every bivalent vertex: the natural edge and position it sits at
    let mut place: HashMap<usize, (usize, usize)> = HashMap::new();
    for (ni, ne) in ns.natural_edges.iter().enumerate() {
        for (pi, &d) in ne.path.iter().enumerate().skip(1) {
            place.insert(g.origin(d), (ni, pi));
        }
    }
    let mut vmap = f.vertex_map.clone();
    // path from old image to new image, per domain vertex
    let mut shift: Vec<Path> = vec![Vec::new(); g.num_vertices];
    for &b in &ns.branch_points {
        let img = vmap[b];
        if is_branch[img] {
            continue;
        }
        let (ni, pi) = place[&img];
        let ne = &ns.natural_edges[ni];
        let back: Path = reverse_path(&ne.path[..pi]);
        let fwd: Path = ne.path[pi..].to_vec();
        let start = g.origin(ne.path[0]);
        let end = g.terminus(*ne.path.last().unwrap());
        let go_back = back.len() < fwd.len() || (back.len() == fwd.len() && start <= end);
        if go_back {
            vmap[b] = start;
            shift[b] = back;
        } else {
            vmap[b] = end;
            shift[b] = fwd;
        }
    }
    let mut images: Vec<Path> = f.edge_images.clone();
    for (i, e) in g.edges.iter().enumerate() {
        let mut p = reverse_path(&shift[e.from]);
        p.extend_from_slice(&f.edge_images[i]);
        p.extend_from_slice(&shift[e.to]);
        images[i] = tighten(&p);
    }
    // tighten whole natural edges and redistribute
    for ne in &ns.natural_edges {
        if ne.closed {
            continue;
        }
        let mut whole = Vec::new();
        for &d in &ne.path {
            let img = if d.fwd { images[d.edge].clone() } else { reverse_path(&images[d.edge]) };
            whole.extend(img);
        }
        let whole = tighten(&whole);
        let m = ne.path.len();
        let len = whole.len();
        let mut cur = vmap[g.origin(ne.path[0])];
        for (j, &d) in ne.path.iter().enumerate() {
            let (a, b) = (j * len / m, (j + 1) * len / m);
            let seg = whole[a..b].to_vec();
            let mut end = cur;
            for &x in &seg {
                end = g.terminus(x);
            }
            if j + 1 < m {
                vmap[g.terminus(d)] = end;
            }
            if d.fwd {
                images[d.edge] = seg;
            } else {
                images[d.edge] = reverse_path(&seg);
            }
            cur = end;
        }
    }
    GraphMap::with_constants(g.clone(), g.clone(), vmap, images)
}

/// A self-map with a nested list of invariant subgraphs (edge id sets).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilteredGraphMap {
    pub map: GraphMap,
    pub strata: Vec<Vec<usize>>,
}

impl FilteredGraphMap {
    pub fn new(map: GraphMap, strata: Vec<Vec<usize>>) -> Result<Self> {
        if !map.is_self_map() {
            return Err(Error::Precondition("filtered maps are self-maps".into()));
        }
        let m = map.domain.edges.len();
        let mut prev: Vec<bool> = vec![false; m];
        for (si, s) in strata.iter().enumerate() {
            let mut inside = vec![false; m];
            for &e in s {
                if e >= m {
                    return Err(Error::Input(format!("stratum {si} names missing edge {e}")));
                }
                inside[e] = true;
            }
            if (0..m).any(|e| prev[e] && !inside[e]) {
                return Err(Error::Input(format!("stratum {si} does not contain the previous one")));
            }
            for &e in s {
                if map.edge_images[e].iter().any(|d| !inside[d.edge]) {
                    return Err(Error::Invariance(format!("stratum {si} is not invariant (edge {e})")));
                }
            }
            prev = inside;
        }
        Ok(FilteredGraphMap { map, strata })
    }

    /// Edges outside the largest stratum.
    pub fn top_stratum(&self) -> Vec<usize> {
        let m = self.map.domain.edges.len();
        let mut inside = vec![false; m];
        if let Some(s) = self.strata.last() {
            for &e in s {
                inside[e] = true;
            }
        }
        (0..m).filter(|&e| !inside[e]).collect()
    }

    pub fn to_json(&self, basis: &Basis) -> String {
        let g: serde_json::Value = serde_json::from_str(&self.map.domain.to_json(basis)).unwrap();
        let images: Vec<Vec<i64>> = self
            .map
            .edge_images
            .iter()
            .map(|p| p.iter().map(|d| if d.fwd { d.edge as i64 + 1 } else { -(d.edge as i64 + 1) }).collect())
            .collect();
        serde_json::json!({
            "graph": g,
            "vertex_map": self.map.vertex_map,
            "edge_images": images,
            "strata": self.strata,
        })
        .to_string()
    }
}

/// One step of a relative image path: a quotient edge, or a nontrivial
/// element of a vertex group given as the label word of a stratum path.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RelStep {
    Edge(Dir),
    Group(Word),
}

/// Quotient of a filtered map by a collapsed invariant subgraph.
#[derive(Debug, Clone)]
pub struct QuotientMap {
    pub source: FilteredGraphMap,
    /// Edges of the source that were collapsed.
    pub collapsed: Vec<bool>,
    pub graph: LabeledGraph,
    /// Source vertices making up each quotient vertex.
    pub members: Vec<Vec<usize>>,
    /// Core of the collapsed component at each quotient vertex, `None` when
    /// the vertex group is trivial.
    pub vertex_groups: Vec<Option<LabeledGraph>>,
    /// Source path behind each quotient edge.
    pub edge_paths: Vec<Path>,
    pub vertex_map: Vec<usize>,
    pub images: Vec<Vec<RelStep>>,
}

impl QuotientMap {
    /// Collapse the components of `collapsed` (closed under adding edges
    /// whose image already lies in it). When `forget_bivalent`, quotient
    /// vertices that are single source vertices of valence two are erased.
    pub fn build(source: &FilteredGraphMap, collapsed: &[bool], forget_bivalent: bool) -> Result<QuotientMap> {
        let f = &source.map;
        let g = &f.domain;
        let m = g.edges.len();
        let mut col = collapsed.to_vec();
        loop {
            let mut changed = false;
            for e in 0..m {
                if !col[e] && f.edge_images[e].iter().all(|d| col[d.edge]) {
                    col[e] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        for e in 0..m {
            if col[e] && f.edge_images[e].iter().any(|d| !col[d.edge]) {
                return Err(Error::Invariance(format!("collapsed subgraph is not invariant at edge {e}")));
            }
        }
        let mut uf = UnionFind::new(g.num_vertices);
        for e in 0..m {
            if col[e] {
                uf.union(g.edges[e].from, g.edges[e].to);
            }
        }
        let mut qid = vec![usize::MAX; g.num_vertices];
        let mut members: Vec<Vec<usize>> = Vec::new();
        for v in 0..g.num_vertices {
            let r = uf.find(v);
            if qid[r] == usize::MAX {
                qid[r] = members.len();
                members.push(Vec::new());
            }
            qid[v] = qid[r];
            members[qid[v]].push(v);
        }
        let top: Vec<usize> = (0..m).filter(|&e| !col[e]).collect();
        // quotient valence and triviality for bivalent forgetting
        let mut qval = vec![0usize; members.len()];
        for &e in &top {
            qval[qid[g.edges[e].from]] += 1;
            qval[qid[g.edges[e].to]] += 1;
        }
        let erasable: Vec<bool> =
            (0..members.len()).map(|q| forget_bivalent && qval[q] == 2 && members[q].len() == 1).collect();
        // chain top edges through erasable vertices
        let dirs = g.directions();
        let mut used = vec![false; m];
        let mut edge_paths: Vec<Path> = Vec::new();
        let chain = |start: Dir, used: &mut Vec<bool>| -> Path {
            let mut path = vec![start];
            used[start.edge] = true;
            let mut cur = start;
            loop {
                let v = g.terminus(cur);
                if !erasable[qid[v]] {
                    break;
                }
                let next = dirs[v].iter().copied().find(|d| *d != cur.rev() && !col[d.edge]).unwrap();
                if used[next.edge] {
                    break;
                }
                used[next.edge] = true;
                path.push(next);
                cur = next;
            }
            path
        };
        for &e in &top {
            if used[e] {
                continue;
            }
            // start from a non-erasable end if possible
            let from_q = qid[g.edges[e].from];
            let to_q = qid[g.edges[e].to];
            if !erasable[from_q] {
                edge_paths.push(chain(Dir::fwd(e), &mut used));
            } else if !erasable[to_q] {
                edge_paths.push(chain(Dir::bwd(e), &mut used));
            }
        }
        for &e in &top {
            if !used[e] {
                // a circle made only of erasable vertices: keep one vertex
                edge_paths.push(chain(Dir::fwd(e), &mut used));
            }
        }
        // vertices that survive
        let mut keep: Vec<bool> = erasable.iter().map(|x| !x).collect();
        for p in &edge_paths {
            let v = g.origin(p[0]);
            keep[qid[v]] = true;
        }
        let mut new_id = vec![usize::MAX; members.len()];
        let mut kept_members = Vec::new();
        for q in 0..members.len() {
            if keep[q] {
                new_id[q] = kept_members.len();
                kept_members.push(members[q].clone());
            }
        }
        let qedges: Vec<Edge> = edge_paths
            .iter()
            .map(|p| Edge {
                from: new_id[qid[g.origin(p[0])]],
                to: new_id[qid[g.terminus(*p.last().unwrap())]],
                label: g.edges[p[0].edge].label,
            })
            .collect();
        let qgraph = LabeledGraph { num_vertices: kept_members.len(), edges: qedges, basepoint: None };
        let vertex_groups = kept_members
            .iter()
            .map(|mem| {
                let es: Vec<usize> = (0..m).filter(|&e| col[e] && mem.contains(&g.edges[e].from)).collect();
                if es.is_empty() {
                    return None;
                }
                let (sub, _) = g.edge_subgraph(&es);
                let c = sub.core(false);
                (!c.is_degenerate()).then_some(c)
            })
            .collect();
        // source dir -> (quotient edge, index in path, same orientation)
        let mut locate: HashMap<Dir, (usize, usize)> = HashMap::new();
        for (qi, p) in edge_paths.iter().enumerate() {
            for (j, &d) in p.iter().enumerate() {
                locate.insert(d, (qi, j));
            }
        }
        let mut images = Vec::with_capacity(edge_paths.len());
        for p in &edge_paths {
            let img = f.image(p);
            images.push(Self::parse_image(g, &img, &col, &edge_paths, &locate)?);
        }
        let vertex_map = kept_members.iter().map(|mem| new_id[qid[f.vertex_map[mem[0]]]]).collect::<Vec<_>>();
        if vertex_map.iter().any(|&v| v == usize::MAX) {
            return Err(Error::Precondition("a vertex maps to an erased bivalent vertex; map is not natural".into()));
        }
        Ok(QuotientMap {
            source: source.clone(),
            collapsed: col,
            graph: qgraph,
            members: kept_members,
            vertex_groups,
            edge_paths,
            vertex_map,
            images,
        })
    }

    fn parse_image(
        g: &LabeledGraph,
        img: &[Dir],
        col: &[bool],
        edge_paths: &[Path],
        locate: &HashMap<Dir, (usize, usize)>,
    ) -> Result<Vec<RelStep>> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < img.len() {
            let d = img[i];
            if col[d.edge] {
                let mut w = Vec::new();
                while i < img.len() && col[img[i].edge] {
                    w.push(g.dir_label(img[i]));
                    i += 1;
                }
                out.push(RelStep::Group(Word::reduce(&w)));
                continue;
            }
            let (qi, fwd) = if let Some(&(qi, 0)) = locate.get(&d) {
                (qi, true)
            } else if let Some(&(qi, j)) = locate.get(&d.rev()) {
                if j + 1 != edge_paths[qi].len() {
                    return Err(Error::Precondition("image enters a quotient edge in its interior".into()));
                }
                (qi, false)
            } else {
                return Err(Error::Precondition("image enters a quotient edge in its interior".into()));
            };
            let want: Path = if fwd { edge_paths[qi].clone() } else { reverse_path(&edge_paths[qi]) };
            if img.len() < i + want.len() || img[i..i + want.len()] != want[..] {
                return Err(Error::Precondition("image stops inside a quotient edge".into()));
            }
            out.push(RelStep::Edge(Dir { edge: qi, fwd }));
            i += want.len();
        }
        Ok(out)
    }

    /// The quotient map with vertex-group elements forgotten. Images are
    /// kept as they are: dropping a group element may leave a backtrack that
    /// is not one in the tree.
    pub fn to_graph_map(&self) -> Result<GraphMap> {
        let images = self
            .images
            .iter()
            .map(|steps| {
                steps
                    .iter()
                    .filter_map(|s| match s {
                        RelStep::Edge(d) => Some(*d),
                        RelStep::Group(_) => None,
                    })
                    .collect()
            })
            .collect();
        GraphMap::new_untightened(self.graph.clone(), self.graph.clone(), self.vertex_map.clone(), images)
    }

    fn dir_steps(&self, d: Dir) -> Vec<RelStep> {
        if d.fwd {
            self.images[d.edge].clone()
        } else {
            self.images[d.edge]
                .iter()
                .rev()
                .map(|s| match s {
                    RelStep::Edge(x) => RelStep::Edge(x.rev()),
                    RelStep::Group(w) => RelStep::Group(w.inverse()),
                })
                .collect()
        }
    }

    /// Source vertex where a quotient direction is attached.
    fn anchor(&self, d: Dir) -> usize {
        let p = &self.edge_paths[d.edge];
        let g = &self.source.map.domain;
        if d.fwd {
            g.origin(p[0])
        } else {
            g.terminus(*p.last().unwrap())
        }
    }

    /// Local injectivity of the induced map on the tree obtained by
    /// collapsing lifts of the collapsed subgraph. Interior turns of images
    /// are legal because source images are tight; the check is on
    /// derivatives at each quotient vertex, including the vertex-group
    /// translates of each direction. Returns the first offending pair.
    pub fn immersion_defect(&self) -> Option<(Dir, Dir)> {
        let src = &self.source.map;
        let g = &src.domain;
        let qdirs = self.graph.directions();
        for (qv, ds) in qdirs.iter().enumerate() {
            let info: Vec<(Dir, usize, Word, Option<Dir>)> = ds
                .iter()
                .map(|&d| {
                    let steps = self.dir_steps(d);
                    let (gamma, first) = match steps.first() {
                        Some(RelStep::Group(w)) => (
                            w.clone(),
                            steps.get(1).map(|s| match s {
                                RelStep::Edge(x) => *x,
                                RelStep::Group(_) => unreachable!(),
                            }),
                        ),
                        Some(RelStep::Edge(x)) => (Word::empty(), Some(*x)),
                        None => (Word::empty(), None),
                    };
                    (d, self.anchor(d), gamma, first)
                })
                .collect();
            for i in 0..info.len() {
                if info[i].3.is_none() {
                    return Some((info[i].0, info[i].0));
                }
                for j in (i + 1)..info.len() {
                    if info[i].3 != info[j].3 {
                        continue;
                    }
                    let (xi, xj) = (info[i].1, info[j].1);
                    let sigma0 = self.collapsed_path(qv, xi, xj);
                    let fsig = Word::reduce(&g.path_label(&src.image(&sigma0)));
                    let rho = fsig.inverse().mul(&info[i].2).mul(&info[j].2.inverse());
                    let group = self.image_loop_group(qv, xj);
                    let member = match &group {
                        None => rho.is_empty(),
                        Some(s) => s.contains(&rho),
                    };
                    if member {
                        return Some((info[i].0, info[j].0));
                    }
                }
            }
        }
        None
    }

    pub fn is_immersion(&self) -> bool {
        self.immersion_defect().is_none()
    }

    /// Path inside the collapsed component of quotient vertex `qv`.
    fn collapsed_path(&self, qv: usize, from: usize, to: usize) -> Path {
        if from == to {
            return Vec::new();
        }
        let g = &self.source.map.domain;
        let dirs = g.directions();
        let mut prev: HashMap<usize, Dir> = HashMap::new();
        let mut q = VecDeque::from([from]);
        let mut seen = std::collections::HashSet::from([from]);
        while let Some(v) = q.pop_front() {
            if v == to {
                break;
            }
            for &d in &dirs[v] {
                if !self.collapsed[d.edge] {
                    continue;
                }
                let w = g.terminus(d);
                if seen.insert(w) {
                    prev.insert(w, d);
                    q.push_back(w);
                }
            }
        }
        debug_assert!(self.members[qv].contains(&to));
        let mut path = Vec::new();
        let mut cur = to;
        while cur != from {
            let d = prev[&cur];
            path.push(d);
            cur = g.origin(d);
        }
        path.reverse();
        path
    }

    /// Subgroup of label words read by images of loops at `x` inside the
    /// collapsed component; `None` when that component has no loops.
    fn image_loop_group(&self, qv: usize, x: usize) -> Option<SubgroupGraph> {
        let src = &self.source.map;
        let g = &src.domain;
        let es: Vec<usize> =
            (0..g.edges.len()).filter(|&e| self.collapsed[e] && self.members[qv].contains(&g.edges[e].from)).collect();
        if es.is_empty() {
            return None;
        }
        let (sub, vmap) = g.edge_subgraph(&es);
        let local_x = vmap[x]?;
        let mut sub = sub;
        sub.basepoint = Some(local_x);
        let (paths, tree) = sub.spanning_tree(local_x);
        let mut gens = Vec::new();
        for (i, is_tree) in tree.iter().enumerate() {
            if *is_tree {
                continue;
            }
            let e = sub.edges[i];
            let mut loop_path: Path = paths[e.from].clone().unwrap();
            loop_path.push(Dir::fwd(i));
            loop_path.extend(reverse_path(paths[e.to].as_ref().unwrap()));
            let back: Path = loop_path.iter().map(|d| Dir { edge: es[d.edge], fwd: d.fwd }).collect();
            gens.push(Word::reduce(&g.path_label(&src.image(&back))));
        }
        if gens.is_empty() {
            return None;
        }
        let basis = Basis::standard(max_label(g).max(2) as usize).ok()?;
        subgroup_graph_opts(&basis, &gens, false).ok().map(|(s, _)| s)
    }

    /// Lengths (in quotient edges) of `f̄^k(e)` for each quotient edge.
    pub fn iterate_lengths(&self, k: usize) -> Result<Vec<usize>> {
        let src = &self.source.map;
        let g = &src.domain;
        let fk = src.iterate(k)?;
        let mut locate: HashMap<Dir, (usize, usize)> = HashMap::new();
        for (qi, p) in self.edge_paths.iter().enumerate() {
            for (j, &d) in p.iter().enumerate() {
                locate.insert(d, (qi, j));
            }
        }
        self.edge_paths
            .iter()
            .map(|p| {
                let steps = Self::parse_image(g, &fk.image(p), &self.collapsed, &self.edge_paths, &locate)?;
                Ok(steps.iter().filter(|s| matches!(s, RelStep::Edge(_))).count())
            })
            .collect()
    }
}

fn max_label(g: &LabeledGraph) -> i32 {
    g.edges.iter().map(|e| e.label).max().unwrap_or(1)
}

/// Collapse stratum `idx` of a filtered map.
pub fn collapse_stratum(f: &FilteredGraphMap, idx: usize) -> Result<QuotientMap> {
    let m = f.map.domain.edges.len();
    let mut col = vec![false; m];
    if let Some(s) = f.strata.get(idx) {
        for &e in s {
            col[e] = true;
        }
    } else if !f.strata.is_empty() || idx != 0 {
        return Err(Error::Input(format!("no stratum {idx}")));
    }
    QuotientMap::build(f, &col, false)
}

/// Rebuild a filtered map from a quotient by gluing in filler graphs.
///
/// `fillers[v]` replaces quotient vertex `v`; `attach[q] = (a, b)` names the
/// filler vertices where quotient edge `q` starts and ends; `filler_maps[v]`
/// maps filler `v` into filler `vertex_map[v]`. Group steps of edge images
/// are read as label words inside the fillers.
pub fn vertex_blowup(
    q: &QuotientMap,
    fillers: &[LabeledGraph],
    attach: &[(usize, usize)],
    filler_maps: &[GraphMap],
) -> Result<FilteredGraphMap> {
    let nq = q.graph.num_vertices;
    if fillers.len() != nq || filler_maps.len() != nq || attach.len() != q.graph.edges.len() {
        return Err(Error::Input("blow-up data does not match the quotient".into()));
    }
    let mut offset_v = vec![0; nq + 1];
    let mut offset_e = vec![0; nq + 1];
    for v in 0..nq {
        offset_v[v + 1] = offset_v[v] + fillers[v].num_vertices;
        offset_e[v + 1] = offset_e[v] + fillers[v].edges.len();
    }
    let mut edges = Vec::new();
    for (v, fl) in fillers.iter().enumerate() {
        for e in &fl.edges {
            edges.push(Edge { from: e.from + offset_v[v], to: e.to + offset_v[v], label: e.label });
        }
    }
    let lower: Vec<usize> = (0..edges.len()).collect();
    for (qi, e) in q.graph.edges.iter().enumerate() {
        let (a, b) = attach[qi];
        if a >= fillers[e.from].num_vertices || b >= fillers[e.to].num_vertices {
            return Err(Error::Input(format!("attachment of quotient edge {qi} out of range")));
        }
        edges.push(Edge { from: offset_v[e.from] + a, to: offset_v[e.to] + b, label: e.label });
    }
    let n = offset_v[nq];
    let graph = LabeledGraph { num_vertices: n, edges, basepoint: None };
    let mut vertex_map = vec![0; n];
    let mut images: Vec<Path> = Vec::new();
    for v in 0..nq {
        let fm = &filler_maps[v];
        let target = q.vertex_map[v];
        if fm.domain != fillers[v] || fm.codomain != fillers[target] {
            return Err(Error::Input(format!("filler map {v} has the wrong domain or codomain")));
        }
        for (x, &y) in fm.vertex_map.iter().enumerate() {
            vertex_map[offset_v[v] + x] = offset_v[target] + y;
        }
        for p in &fm.edge_images {
            images.push(p.iter().map(|d| Dir { edge: d.edge + offset_e[target], fwd: d.fwd }).collect());
        }
    }
    let top_base = offset_e[nq];
    let indices: Vec<Vec<HashMap<Letter, Dir>>> = fillers.iter().map(|f| f.label_index()).collect();
    for (qi, steps) in q.images.iter().enumerate() {
        let e = q.graph.edges[qi];
        let start_v = e.from;
        let mut cur_q = q.vertex_map[start_v];
        let mut cur = filler_maps[start_v].vertex_map[attach[qi].0];
        let mut path = Vec::new();
        for s in steps {
            match s {
                RelStep::Group(w) => {
                    let (end, p) = fillers[cur_q].read(&indices[cur_q], cur, w.letters()).ok_or_else(|| {
                        Error::Input(format!("group element of edge {qi} is not readable in filler {cur_q}"))
                    })?;
                    path.extend(p.iter().map(|d| Dir { edge: d.edge + offset_e[cur_q], fwd: d.fwd }));
                    cur = end;
                }
                RelStep::Edge(d) => {
                    let qe = q.graph.edges[d.edge];
                    let (from_q, from_v, to_q, to_v) = if d.fwd {
                        (qe.from, attach[d.edge].0, qe.to, attach[d.edge].1)
                    } else {
                        (qe.to, attach[d.edge].1, qe.from, attach[d.edge].0)
                    };
                    if from_q != cur_q || from_v != cur {
                        return Err(Error::Input(format!("image of edge {qi} is not attached consistently")));
                    }
                    path.push(Dir { edge: top_base + d.edge, fwd: d.fwd });
                    cur_q = to_q;
                    cur = to_v;
                }
            }
        }
        let end_q = q.vertex_map[e.to];
        let want = filler_maps[e.to].vertex_map[attach[qi].1];
        if cur_q != end_q || cur != want {
            return Err(Error::Input(format!("image of edge {qi} ends at the wrong point")));
        }
        images.push(path);
    }
    let map = GraphMap::new(graph.clone(), graph, vertex_map, images)?;
    FilteredGraphMap::new(map, vec![lower])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stallings::subgroup_graph;

    fn endo(imgs: &[&str]) -> EndoSpec {
        EndoSpec::from_strs(imgs).unwrap()
    }

    #[test]
    fn from_endo_constants() {
        let f = GraphMap::from_endo(&endo(&["ab", "ba"])).unwrap();
        assert_eq!((f.lipschitz, f.cancellation), (2, Some(0)));
        let f = GraphMap::from_endo(&endo(&["a", "abab"])).unwrap();
        assert_eq!((f.lipschitz, f.cancellation), (4, Some(1)));
        let f = GraphMap::from_endo(&endo(&["a", "b"])).unwrap();
        assert_eq!((f.lipschitz, f.cancellation), (1, Some(0)));
        assert!(GraphMap::from_endo(&endo(&["a", ""])).is_err());
        let f = GraphMap::from_endo(&endo(&["a", "a"])).unwrap();
        assert_eq!(f.cancellation, None);
    }

    #[test]
    fn iterate_substitutes() {
        let phi = endo(&["ab", "ba"]);
        let f = GraphMap::from_endo(&phi).unwrap();
        let f2 = f.iterate(2).unwrap();
        assert_eq!(f2.rose_endo(&phi.basis).unwrap().images[0].to_text(&phi.basis), "abba");
        assert_eq!(f.iterate(1).unwrap().edge_images, f.edge_images);
        for k in 1..5 {
            assert!(f.iterate(k).unwrap().lipschitz <= f.lipschitz.pow(k as u32));
        }
    }

    #[test]
    fn iterated_stallings_roses() {
        let phi = endo(&["ab", "ba"]);
        for k in 1..=3 {
            let s = iterated_stallings(&phi, k).unwrap();
            let ns = s.graph.natural_structure().unwrap();
            assert_eq!(ns.branch_points.len(), 1);
            assert!(ns.natural_edges.iter().all(|n| n.len() == 1 << k));
        }
        assert!(iterated_stallings(&endo(&["a", "a"]), 1).is_err());
    }

    #[test]
    fn lift_of_ab_ba() {
        let phi = endo(&["ab", "ba"]);
        let f = GraphMap::from_endo(&phi).unwrap();
        let s = iterated_stallings(&phi, 1).unwrap();
        let lift = homotopy_lift(&f, &s).unwrap();
        assert!(lift.lipschitz <= 2);
        let ns = s.graph.natural_structure().unwrap();
        for ne in &ns.natural_edges {
            let img = lift.image(&ne.path);
            assert_eq!(img.len(), 4);
            // crosses both petals
            let mut seen: Vec<usize> = img.iter().map(|d| d.edge).collect();
            seen.sort();
            seen.dedup();
            assert_eq!(seen.len(), 4);
        }
    }

    #[test]
    fn lift_of_identity_is_identity() {
        let phi = EndoSpec::identity(Basis::standard(2).unwrap());
        let f = GraphMap::from_endo(&phi).unwrap();
        let b = &phi.basis;
        let (s, _) = subgroup_graph(b, &[b.parse("ab").unwrap(), b.parse("bba").unwrap()]).unwrap();
        let lift = homotopy_lift_raw(&f, &s).unwrap();
        for (i, img) in lift.edge_images.iter().enumerate() {
            assert_eq!(img, &vec![Dir::fwd(i)]);
        }
    }

    #[test]
    fn lift_fixes_a_petal() {
        let psi = endo(&["a", "abab"]);
        let f = GraphMap::from_endo(&psi).unwrap();
        let s = iterated_stallings(&psi, 1).unwrap();
        let lift = homotopy_lift(&f, &s).unwrap();
        let a_loop = lift.domain.edges.iter().position(|e| e.from == e.to && e.label == 1).unwrap();
        assert_eq!(lift.edge_images[a_loop], vec![Dir::fwd(a_loop)]);
    }

    #[test]
    fn lift_rejects_non_invariant() {
        let phi = endo(&["ab", "ba"]);
        let f = GraphMap::from_endo(&phi).unwrap();
        let b = &phi.basis;
        let (s, _) = subgroup_graph(b, &[b.parse("a").unwrap()]).unwrap();
        assert!(matches!(homotopy_lift_raw(&f, &s), Err(Error::Invariance(_))));
    }

    fn barbell_map() -> FilteredGraphMap {
        let phi = endo(&["a", "baB"]);
        let f = GraphMap::from_endo(&phi).unwrap();
        let s = iterated_stallings(&phi, 1).unwrap();
        let lift = homotopy_lift_raw(&f, &s).unwrap();
        let plates: Vec<usize> = (0..s.graph.edges.len()).filter(|&e| s.graph.edges[e].label == 1).collect();
        FilteredGraphMap::new(lift, vec![plates]).unwrap()
    }

    #[test]
    fn collapse_barbell_plates() {
        let fm = barbell_map();
        let q = collapse_stratum(&fm, 0).unwrap();
        assert_eq!(q.graph.num_vertices, 2);
        assert_eq!(q.graph.edges.len(), 1);
        assert!(q.vertex_groups.iter().all(Option::is_some));
        assert_eq!(q.iterate_lengths(1).unwrap(), vec![2]);
        assert_eq!(q.iterate_lengths(2).unwrap(), vec![4]);
        assert!(q.is_immersion());
    }

    #[test]
    fn collapse_empty_and_everything() {
        let fm = barbell_map();
        let none = FilteredGraphMap::new(fm.map.clone(), vec![vec![]]).unwrap();
        let q = collapse_stratum(&none, 0).unwrap();
        assert_eq!(q.graph.edges.len(), fm.map.domain.edges.len());
        let all = FilteredGraphMap::new(fm.map.clone(), vec![(0..fm.map.domain.edges.len()).collect()]).unwrap();
        let q = collapse_stratum(&all, 0).unwrap();
        assert_eq!(q.graph.num_vertices, 1);
        assert!(q.graph.edges.is_empty());
    }

    #[test]
    fn blowup_round_trip() {
        let fm = barbell_map();
        let q = collapse_stratum(&fm, 0).unwrap();
        // two a-circles, identity-like filler maps into the image vertex
        let circle = LabeledGraph::new(1, vec![Edge { from: 0, to: 0, label: 1 }], None);
        let fillers = vec![circle.clone(), circle.clone()];
        let fmaps: Vec<GraphMap> = (0..2)
            .map(|_| GraphMap::new(circle.clone(), circle.clone(), vec![0], vec![vec![Dir::fwd(0)]]).unwrap())
            .collect();
        let blown = vertex_blowup(&q, &fillers, &[(0, 0)], &fmaps).unwrap();
        // the bar maps to bar · plate · bar⁻¹
        let bar = blown.top_stratum()[0];
        let img = &blown.map.edge_images[bar];
        assert_eq!(img.len(), 3);
        assert_eq!(blown.map.domain.path_label(img), vec![2, 1, -2]);
        let again = collapse_stratum(&blown, 0).unwrap();
        assert_eq!(again.graph.edges.len(), q.graph.edges.len());
        assert_eq!(again.images, q.images);
    }

    #[test]
    fn restrict_to_core_drops_hair() {
        let phi = endo(&["baB", "b"]);
        let f = GraphMap::from_endo(&phi).unwrap();
        let b = &phi.basis;
        let (s, _) = subgroup_graph(b, &[b.parse("baB").unwrap(), b.parse("b").unwrap()]).unwrap();
        let lift = homotopy_lift_raw(&f, &s).unwrap();
        let core = lift.restrict_to_core().unwrap();
        assert!(core.domain.is_core());
        core.check().unwrap();
    }
}
