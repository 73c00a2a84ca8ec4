//! Stallings folding, subgroup graphs and their markings.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Dir, Edge, LabeledGraph, Path, UnionFind};
use crate::graphmap::GraphMap;
use crate::word::{cyclic_normal_form, letter_key, Basis, CyclicWord, Letter, Word};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FoldTrace {
    pub fold_count: usize,
    /// Some fold identified two edges that already had the same endpoints.
    pub collapse_occurred: bool,
    /// How many such rank-dropping folds happened.
    pub rank_drop: usize,
}

/// Folded core with basepoint, a marking and the words it was built from.
#[derive(Debug, Clone)]
pub struct SubgroupGraph {
    pub basis: Basis,
    /// Folded, cored rel. basepoint; basepoint is vertex 0.
    pub graph: LabeledGraph,
    pub generators: Vec<Word>,
    /// One loop word per non-tree edge of the BFS spanning tree.
    pub marking: Vec<Word>,
    marking_edges: Vec<usize>,
    parent: Vec<Option<Dir>>,
    index: Vec<HashMap<Letter, Dir>>,
    /// Per edge, a word in the generator indices (1-based); present when the
    /// graph was built with generator tracking.
    weights: Option<Vec<Word>>,
}

/// Core folding loop. Labels are arbitrary positive integers. `weights`, if
/// given, are kept consistent so that the product along any closed path at
/// the basepoint is invariant.
pub(crate) fn fold(g: &LabeledGraph, mut weights: Option<Vec<Word>>) -> (LabeledGraph, Option<Vec<Word>>, FoldTrace) {
    let n = g.num_vertices;
    let m = g.edges.len();
    let mut uf = UnionFind::new(n);
    let mut alive = vec![true; m];
    // adjacency: (signed label at this vertex, edge, is_from_side)
    let mut adj: Vec<Vec<(Letter, usize, bool)>> = vec![Vec::new(); n];
    for (i, e) in g.edges.iter().enumerate() {
        adj[e.from].push((e.label, i, true));
        adj[e.to].push((-e.label, i, false));
    }
    let mut trace = FoldTrace::default();
    let mut queue: VecDeque<(usize, Letter)> = VecDeque::new();
    let conflicts = |adj: &Vec<(Letter, usize, bool)>, alive: &[bool]| -> Vec<Letter> {
        let mut ls: Vec<Letter> = adj.iter().filter(|t| alive[t.1]).map(|t| t.0).collect();
        ls.sort_unstable_by_key(|&l| letter_key(l));
        let mut out: Vec<Letter> = ls.windows(2).filter(|w| w[0] == w[1]).map(|w| w[0]).collect();
        out.dedup();
        out
    };
    for v in 0..n {
        for l in conflicts(&adj[v], &alive) {
            queue.push_back((v, l));
        }
    }
    let base_root = |uf: &mut UnionFind| g.basepoint.map(|b| uf.find(b));
    while let Some((v0, l)) = queue.pop_front() {
        let v = uf.find(v0);
        let mut hits: Vec<(usize, bool)> =
            adj[v].iter().filter(|t| alive[t.1] && t.0 == l).map(|t| (t.1, t.2)).collect();
        if hits.len() < 2 {
            continue;
        }
        hits.sort_unstable();
        hits.dedup_by_key(|h| h.0);
        if hits.len() < 2 {
            continue;
        }
        let (e1, s1) = hits[0];
        let (e2, s2) = hits[1];
        let other = |uf: &mut UnionFind, e: usize, from_side: bool| {
            let ed = g.edges[e];
            uf.find(if from_side { ed.to } else { ed.from })
        };
        let w1 = other(&mut uf, e1, s1);
        let w2 = other(&mut uf, e2, s2);
        trace.fold_count += 1;
        alive[e2] = false;
        if w1 == w2 {
            trace.collapse_occurred = true;
            trace.rank_drop += 1;
        } else {
            if let Some(ws) = weights.as_mut() {
                let dw = |ws: &Vec<Word>, e: usize, from_side: bool| {
                    if from_side {
                        ws[e].clone()
                    } else {
                        ws[e].inverse()
                    }
                };
                let om1 = dw(ws, e1, s1);
                let om2 = dw(ws, e2, s2);
                let base = base_root(&mut uf);
                let (y, delta) =
                    if Some(w2) != base { (w2, om1.inverse().mul(&om2)) } else { (w1, om2.inverse().mul(&om1)) };
                if !delta.is_empty() {
                    let dinv = delta.inverse();
                    let mut touched: Vec<(usize, bool)> =
                        adj[y].iter().filter(|t| alive[t.1]).map(|t| (t.1, t.2)).collect();
                    touched.sort_unstable();
                    touched.dedup();
                    for (e, from_side) in touched {
                        if from_side {
                            ws[e] = delta.mul(&ws[e]);
                        } else {
                            ws[e] = ws[e].mul(&dinv);
                        }
                    }
                }
            }
            uf.union(w1, w2);
            let r = uf.find(w1);
            let lost = if r == w1 { w2 } else { w1 };
            let moved = std::mem::take(&mut adj[lost]);
            adj[r].extend(moved);
            adj[r].retain(|t| alive[t.1]);
            for c in conflicts(&adj[r], &alive) {
                queue.push_back((r, c));
            }
        }
        let v = uf.find(v);
        adj[v].retain(|t| alive[t.1]);
        if adj[v].iter().filter(|t| t.0 == l).count() >= 2 {
            queue.push_back((v, l));
        }
    }
    // compact
    let mut roots: Vec<usize> = (0..n).filter(|&v| uf.find(v) == v).collect();
    roots.sort_unstable();
    let mut id = vec![usize::MAX; n];
    for (i, &r) in roots.iter().enumerate() {
        id[r] = i;
    }
    let mut edges = Vec::new();
    let mut new_w = Vec::new();
    for (i, e) in g.edges.iter().enumerate() {
        if alive[i] {
            edges.push(Edge { from: id[uf.find(e.from)], to: id[uf.find(e.to)], label: e.label });
            if let Some(ws) = &weights {
                new_w.push(ws[i].clone());
            }
        }
    }
    let basepoint = g.basepoint.map(|b| id[uf.find(b)]);
    let out = LabeledGraph { num_vertices: roots.len(), edges, basepoint };
    (out, weights.map(|_| new_w), trace)
}

/// Fold `g1 ⊔ g2` joined by a path reading `g` from `b1` to `b2`. Returns the
/// folded graph and the images of `b1`, `b2`; path labels from the first to
/// the second are exactly the double coset `π₁(g1,b1)·g·π₁(g2,b2)`.
pub fn fold_paths(
    g1: &LabeledGraph,
    b1: usize,
    g2: &LabeledGraph,
    b2: usize,
    g: &Word,
) -> (LabeledGraph, (usize, usize)) {
    let off = g1.num_vertices;
    let mut n = off + g2.num_vertices;
    let mut edges = g1.edges.clone();
    edges.extend(g2.edges.iter().map(|e| Edge { from: e.from + off, to: e.to + off, label: e.label }));
    let mut prev = b1;
    let len = g.len();
    if len == 0 {
        // identify the two points with a throwaway letter pair: read nothing
        edges.push(Edge { from: b1, to: n, label: 1 });
        edges.push(Edge { from: b2 + off, to: n, label: 1 });
        n += 1;
    }
    for (j, &l) in g.letters().iter().enumerate() {
        let next = if j + 1 == len {
            b2 + off
        } else {
            n += 1;
            n - 1
        };
        if l > 0 {
            edges.push(Edge { from: prev, to: next, label: l });
        } else {
            edges.push(Edge { from: next, to: prev, label: -l });
        }
        prev = next;
    }
    let joined = LabeledGraph { num_vertices: n, edges, basepoint: Some(b1) };
    let (folded, _, _) = fold(&joined, None);
    let s = folded.basepoint.unwrap();
    let t = if len == 0 {
        s
    } else {
        let idx = folded.label_index();
        folded.read(&idx, s, g.letters()).map(|(v, _)| v).unwrap_or(s)
    };
    (folded, (s, t))
}

/// Renumber a folded graph so that vertices appear in BFS order from the
/// basepoint (letters in canonical order) and edges are sorted by
/// `(from, label)`. Returns the graph and old→new edge ids.
fn canonical_layout(g: &LabeledGraph) -> (LabeledGraph, Vec<usize>) {
    let index = g.label_index();
    let root = g.basepoint.unwrap_or(0);
    let mut num = vec![usize::MAX; g.num_vertices];
    let mut next = 0;
    let mut order = VecDeque::new();
    for start in std::iter::once(root).chain(0..g.num_vertices) {
        if num[start] != usize::MAX {
            continue;
        }
        num[start] = next;
        next += 1;
        order.push_back(start);
        while let Some(v) = order.pop_front() {
            let mut ls: Vec<(u32, Dir)> = index[v].iter().map(|(&l, &d)| (letter_key(l), d)).collect();
            ls.sort_unstable();
            for (_, d) in ls {
                let w = g.terminus(d);
                if num[w] == usize::MAX {
                    num[w] = next;
                    next += 1;
                    order.push_back(w);
                }
            }
        }
    }
    let mut es: Vec<(Edge, usize)> = g
        .edges
        .iter()
        .enumerate()
        .map(|(i, e)| (Edge { from: num[e.from], to: num[e.to], label: e.label }, i))
        .collect();
    es.sort_unstable_by_key(|(e, _)| (e.from, e.label, e.to));
    let mut old_to_new = vec![0; g.edges.len()];
    for (newi, (_, old)) in es.iter().enumerate() {
        old_to_new[*old] = newi;
    }
    let out = LabeledGraph {
        num_vertices: g.num_vertices,
        edges: es.into_iter().map(|(e, _)| e).collect(),
        basepoint: g.basepoint.map(|b| num[b]),
    };
    (out, old_to_new)
}

/// Wedge of labelled loops at vertex 0, one per nonempty word.
fn wedge(gens: &[Word]) -> (LabeledGraph, Vec<Word>) {
    let mut n = 1;
    let mut edges = Vec::new();
    let mut weights = Vec::new();
    for (gi, w) in gens.iter().enumerate() {
        let len = w.len();
        if len == 0 {
            continue;
        }
        let mut prev = 0;
        for (j, &l) in w.letters().iter().enumerate() {
            let next = if j + 1 == len {
                0
            } else {
                n += 1;
                n - 1
            };
            let tag = if j == 0 { Word::letter(gi as Letter + 1) } else { Word::empty() };
            if l > 0 {
                edges.push(Edge { from: prev, to: next, label: l });
                weights.push(tag);
            } else {
                edges.push(Edge { from: next, to: prev, label: -l });
                weights.push(tag.inverse());
            }
            prev = next;
        }
    }
    (LabeledGraph { num_vertices: n, edges, basepoint: Some(0) }, weights)
}

/// Fold the wedge of the generators; the result's marking tracks the
/// generators so that members can be rewritten in them.
pub fn subgroup_graph(basis: &Basis, gens: &[Word]) -> Result<(SubgroupGraph, FoldTrace)> {
    subgroup_graph_opts(basis, gens, true)
}

/// As [`subgroup_graph`]; `track = false` skips generator bookkeeping, which
/// is cheaper for very large graphs.
pub fn subgroup_graph_opts(basis: &Basis, gens: &[Word], track: bool) -> Result<(SubgroupGraph, FoldTrace)> {
    for w in gens {
        basis.check(w.letters())?;
    }
    let (w, weights) = wedge(gens);
    let (folded, weights, trace) = fold(&w, track.then_some(weights));
    let (core_edges, alive) = folded.core_parts(true);
    let verts: Vec<usize> = (0..folded.num_vertices).filter(|&v| alive[v]).collect();
    let (cored, _) = folded.edge_subgraph(&core_edges);
    let cored = if core_edges.is_empty() {
        LabeledGraph::point(true)
    } else if cored.basepoint.is_none() {
        // basepoint alone, kept by core_parts but not touched by an edge
        debug_assert!(verts.len() == 1);
        LabeledGraph::point(true)
    } else {
        cored
    };
    let core_weights = weights.map(|ws| core_edges.iter().map(|&i| ws[i].clone()).collect::<Vec<_>>());
    let (laid, old_to_new) = canonical_layout(&cored);
    let weights = core_weights.map(|cw| {
        let mut out = vec![Word::empty(); cw.len()];
        for (old, w) in cw.into_iter().enumerate() {
            out[old_to_new[old]] = w;
        }
        out
    });
    let sg = SubgroupGraph::assemble(basis.clone(), laid, gens.to_vec(), weights);
    Ok((sg, trace))
}

impl SubgroupGraph {
    /// Wrap an already folded graph. The marking becomes the generator list.
    pub fn from_folded(basis: &Basis, graph: &LabeledGraph) -> Result<Self> {
        if !graph.is_folded() {
            return Err(Error::Precondition("graph is not folded".into()));
        }
        let mut g = graph.clone();
        if g.basepoint.is_none() {
            g.basepoint = Some(0);
        }
        let (laid, _) = canonical_layout(&g);
        let mut sg = SubgroupGraph::assemble(basis.clone(), laid, Vec::new(), None);
        sg.generators = sg.marking.clone();
        let m = sg.marking.len();
        let mut ws = vec![Word::empty(); sg.graph.edges.len()];
        for (i, &e) in sg.marking_edges.iter().enumerate() {
            ws[e] = Word::letter(i as Letter + 1);
        }
        debug_assert_eq!(m, sg.marking_edges.len());
        sg.weights = Some(ws);
        Ok(sg)
    }

    fn assemble(basis: Basis, graph: LabeledGraph, generators: Vec<Word>, weights: Option<Vec<Word>>) -> Self {
        let root = graph.basepoint.unwrap_or(0);
        let (_, parent, tree) = graph.bfs_tree(root);
        let index = graph.label_index();
        let mut sg = SubgroupGraph {
            basis,
            graph,
            generators,
            marking: Vec::new(),
            marking_edges: Vec::new(),
            parent,
            index,
            weights,
        };
        for (i, is_tree) in tree.iter().enumerate() {
            if !is_tree {
                let e = sg.graph.edges[i];
                let w = sg.tree_word(e.from).mul(&Word::letter(e.label)).mul(&sg.tree_word(e.to).inverse());
                sg.marking.push(w);
                sg.marking_edges.push(i);
            }
        }
        sg
    }

    pub fn basepoint(&self) -> usize {
        self.graph.basepoint.unwrap_or(0)
    }

    pub fn rank(&self) -> usize {
        self.marking.len()
    }

    pub fn is_degenerate(&self) -> bool {
        self.graph.is_degenerate()
    }

    pub fn index(&self) -> &[HashMap<Letter, Dir>] {
        &self.index
    }

    /// Label of the spanning-tree path from the basepoint to `v`.
    pub fn tree_word(&self, v: usize) -> Word {
        Word::from_reduced(self.graph.path_label(&self.tree_path(v)))
    }

    pub fn tree_path(&self, mut v: usize) -> Path {
        let mut rev = Vec::new();
        while let Some(d) = self.parent[v] {
            rev.push(d);
            v = self.graph.origin(d);
        }
        rev.reverse();
        rev
    }

    /// Follow a word from `v`.
    pub fn read_from(&self, v: usize, w: &[Letter]) -> Option<(usize, Path)> {
        self.graph.read(&self.index, v, w)
    }

    /// True iff `w` reads a closed loop at the basepoint.
    pub fn contains(&self, w: &Word) -> bool {
        matches!(self.read_from(self.basepoint(), w.letters()), Some((end, _)) if end == self.basepoint())
    }

    /// A vertex where `c` reads a closed loop, with the loop's label.
    pub fn conjugate_into(&self, c: &CyclicWord) -> Option<(usize, Word)> {
        if c.is_empty() {
            return Some((self.basepoint(), Word::empty()));
        }
        for v in 0..self.graph.num_vertices {
            if let Some((end, _)) = self.read_from(v, c.letters()) {
                if end == v {
                    return Some((v, c.to_word()));
                }
            }
        }
        None
    }

    /// Rewrite a member in the marking basis (letters index `marking`).
    pub fn express_in_generators(&self, w: &Word) -> Result<Word> {
        let (end, path) = self
            .read_from(self.basepoint(), w.letters())
            .ok_or_else(|| Error::Precondition("word is not in the subgroup".into()))?;
        if end != self.basepoint() {
            return Err(Error::Precondition("word is not in the subgroup".into()));
        }
        let mut pos = HashMap::new();
        for (i, &e) in self.marking_edges.iter().enumerate() {
            pos.insert(e, i as Letter + 1);
        }
        let mut out = Vec::new();
        for d in path {
            if let Some(&x) = pos.get(&d.edge) {
                out.push(if d.fwd { x } else { -x });
            }
        }
        Ok(Word::reduce(&out))
    }

    /// Rewrite a member in the defining generators (letters index
    /// `generators`). Meaningful when the generators freely generate.
    pub fn express_in_defining(&self, w: &Word) -> Result<Word> {
        let ws = self
            .weights
            .as_ref()
            .ok_or_else(|| Error::Precondition("graph built without generator tracking".into()))?;
        let (end, path) = self
            .read_from(self.basepoint(), w.letters())
            .ok_or_else(|| Error::Precondition("word is not in the subgroup".into()))?;
        if end != self.basepoint() {
            return Err(Error::Precondition("word is not in the subgroup".into()));
        }
        let mut out: Vec<Letter> = Vec::new();
        for d in path {
            if d.fwd {
                out.extend_from_slice(ws[d.edge].letters());
            } else {
                out.extend(ws[d.edge].letters().iter().rev().map(|l| -l));
            }
        }
        Ok(Word::reduce(&out))
    }

    /// Substitute marking loops into a marking-basis word.
    pub fn expand_marking(&self, x: &Word) -> Word {
        let mut out = Word::empty();
        for &l in x.letters() {
            let m = &self.marking[(l.unsigned_abs() - 1) as usize];
            out = out.mul(&if l > 0 { m.clone() } else { m.inverse() });
        }
        out
    }

    /// Core without basepoint, as used for conjugacy-class comparisons.
    pub fn free_core(&self) -> LabeledGraph {
        self.graph.core(false)
    }

    /// Same conjugacy class of subgroup.
    pub fn conjugate_to(&self, other: &SubgroupGraph) -> bool {
        self.free_core().isomorphic(&other.free_core(), false).unwrap_or(false)
    }

    /// Cyclic word read by the unique immersed loop of a rank-one graph.
    pub fn cyclic_generator(&self) -> Option<CyclicWord> {
        if self.rank() != 1 {
            return None;
        }
        Some(cyclic_normal_form(&self.marking[0]))
    }

    pub fn to_json(&self) -> String {
        let mut v: serde_json::Value = serde_json::from_str(&self.graph.to_json(&self.basis)).unwrap();
        v["marking"] = self.marking.iter().map(|w| w.to_text(&self.basis)).collect::<Vec<_>>().into();
        v.to_string()
    }
}

/// Number of folds in the Stallings decomposition of a π₁-injective map
/// (after collapsing edges with trivial image and subdividing).
pub fn cancellation_constant(f: &GraphMap) -> Result<usize> {
    let dom = &f.domain;
    let mut uf = UnionFind::new(dom.num_vertices);
    for (i, img) in f.edge_images.iter().enumerate() {
        if img.is_empty() {
            let e = dom.edges[i];
            if !uf.union(e.from, e.to) {
                return Err(Error::NotInjective { witness: format!("edge {i} closes a loop with trivial image") });
            }
        }
    }
    let mut id = vec![usize::MAX; dom.num_vertices];
    let mut n = 0;
    for v in 0..dom.num_vertices {
        let r = uf.find(v);
        if id[r] == usize::MAX {
            id[r] = n;
            n += 1;
        }
        id[v] = id[r];
    }
    let mut edges = Vec::new();
    for (i, img) in f.edge_images.iter().enumerate() {
        if img.is_empty() {
            continue;
        }
        let e = dom.edges[i];
        let mut prev = id[e.from];
        for (j, d) in img.iter().enumerate() {
            let next = if j + 1 == img.len() {
                id[e.to]
            } else {
                n += 1;
                n - 1
            };
            let lab = d.edge as Letter + 1;
            if d.fwd {
                edges.push(Edge { from: prev, to: next, label: lab });
            } else {
                edges.push(Edge { from: next, to: prev, label: lab });
            }
            prev = next;
        }
    }
    let sub = LabeledGraph { num_vertices: n, edges, basepoint: None };
    let (_, _, trace) = fold(&sub, None);
    if trace.collapse_occurred {
        return Err(Error::NotInjective { witness: format!("folding the map dropped rank by {}", trace.rank_drop) });
    }
    Ok(trace.fold_count)
}
