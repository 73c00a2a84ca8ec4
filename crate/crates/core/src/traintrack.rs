//! Transition matrices, Perron–Frobenius eigenvalues, gates, train track
//! moves and the expanding (relative) immersion driver.

use std::collections::{HashMap, HashSet};

use serde::Serialize;

use crate::dynamics::FreeFactorSystem;
use crate::error::{Error, Result};
use crate::graph::{tighten, Dir, Edge, LabeledGraph, Path, UnionFind};
use crate::graphmap::{homotopy_lift, homotopy_lift_raw, iterated_stallings, FilteredGraphMap, GraphMap, QuotientMap};
use crate::stallings::subgroup_graph;
use crate::word::{EndoSpec, Word};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionMatrix {
    pub size: usize,
    /// `entries[i][j]`: occurrences of edge i in the image of edge j.
    pub entries: Vec<Vec<u64>>,
}

impl TransitionMatrix {
    pub fn from_rows(rows: Vec<Vec<u64>>) -> Self {
        TransitionMatrix { size: rows.len(), entries: rows }
    }

    pub fn is_permutation(&self) -> bool {
        let n = self.size;
        (0..n).all(|i| self.entries[i].iter().sum::<u64>() == 1 && self.entries[i].iter().all(|&x| x <= 1))
            && (0..n).all(|j| (0..n).map(|i| self.entries[i][j]).sum::<u64>() == 1)
    }

    /// Strongly connected components of the maps-over digraph.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.size;
        let adj: Vec<Vec<usize>> = (0..n).map(|j| (0..n).filter(|&i| self.entries[i][j] > 0).collect()).collect();
        tarjan(&adj)
    }

    /// Principal submatrix on `idx`.
    pub fn restrict(&self, idx: &[usize]) -> TransitionMatrix {
        TransitionMatrix::from_rows(idx.iter().map(|&i| idx.iter().map(|&j| self.entries[i][j]).collect()).collect())
    }
}

fn tarjan(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let n = adj.len();
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0; n];
    let mut on = vec![false; n];
    let mut stack = Vec::new();
    let mut out = Vec::new();
    let mut counter = 0;
    // iterative DFS
    for root in 0..n {
        if index[root] != usize::MAX {
            continue;
        }
        let mut call: Vec<(usize, usize)> = vec![(root, 0)];
        index[root] = counter;
        low[root] = counter;
        counter += 1;
        stack.push(root);
        on[root] = true;
        while let Some(&mut (v, ref mut i)) = call.last_mut() {
            if *i < adj[v].len() {
                let w = adj[v][*i];
                *i += 1;
                if index[w] == usize::MAX {
                    index[w] = counter;
                    low[w] = counter;
                    counter += 1;
                    stack.push(w);
                    on[w] = true;
                    call.push((w, 0));
                } else if on[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some(&(u, _)) = call.last() {
                    low[u] = low[u].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().unwrap();
                        on[w] = false;
                        comp.push(w);
                        if w == v {
                            break;
                        }
                    }
                    comp.sort_unstable();
                    out.push(comp);
                }
            }
        }
    }
    out.sort();
    out
}

/// Transition matrix of a self-map. Errors on pretrivial edges.
pub fn transition_matrix(f: &GraphMap) -> Result<TransitionMatrix> {
    let pre = f.pretrivial_edges();
    if let Some(e) = pre.iter().position(|&p| p) {
        return Err(Error::Precondition(format!("edge {e} is pretrivial; not a representative")));
    }
    Ok(count_matrix(f, &(0..f.domain.edges.len()).collect::<Vec<_>>()))
}

/// Transition matrix on the given edges, ignoring letters outside them.
pub fn stratum_matrix(f: &FilteredGraphMap, edges: &[usize]) -> TransitionMatrix {
    count_matrix(&f.map, edges)
}

fn count_matrix(f: &GraphMap, edges: &[usize]) -> TransitionMatrix {
    let pos: HashMap<usize, usize> = edges.iter().enumerate().map(|(i, &e)| (e, i)).collect();
    let n = edges.len();
    let mut a = vec![vec![0u64; n]; n];
    for (j, &e) in edges.iter().enumerate() {
        for d in &f.edge_images[e] {
            if let Some(&i) = pos.get(&d.edge) {
                a[i][j] += 1;
            }
        }
    }
    TransitionMatrix { size: n, entries: a }
}

pub fn is_irreducible(a: &TransitionMatrix) -> bool {
    if a.size == 0 {
        return false;
    }
    let comps = a.components();
    comps.len() == 1 && (a.size > 1 || a.entries[0][0] > 0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralResult {
    pub lambda: f64,
    pub tolerance: f64,
    pub is_one_exact: bool,
    pub eigenvector: Vec<f64>,
    pub residual: f64,
}

pub const DEFAULT_TOL: f64 = 1e-12;

/// Perron–Frobenius eigenvalue of an irreducible matrix.
pub fn pf_eigenvalue(a: &TransitionMatrix, tol: f64) -> Result<SpectralResult> {
    if !is_irreducible(a) {
        return Err(Error::Precondition("Perron–Frobenius eigenvalue of a reducible matrix".into()));
    }
    let n = a.size;
    if n == 1 {
        let l = a.entries[0][0] as f64;
        return Ok(SpectralResult {
            lambda: l,
            tolerance: tol,
            is_one_exact: l == 1.0,
            eigenvector: vec![1.0],
            residual: 0.0,
        });
    }
    if a.is_permutation() {
        return Ok(SpectralResult {
            lambda: 1.0,
            tolerance: tol,
            is_one_exact: true,
            eigenvector: vec![1.0; n],
            residual: 0.0,
        });
    }
    let af: Vec<Vec<f64>> = a.entries.iter().map(|r| r.iter().map(|&x| x as f64).collect()).collect();
    let mul = |v: &[f64]| -> Vec<f64> { af.iter().map(|r| r.iter().zip(v).map(|(x, y)| x * y).sum()).collect() };
    let norm = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let residual_of = |v: &[f64], l: f64| {
        let av = mul(v);
        av.iter().zip(v).fold(0.0f64, |m, (x, y)| m.max((x - l * y).abs())) / norm(v)
    };
    // power iteration on A + I, which is primitive
    let mut v = vec![1.0; n];
    let mut lambda = 0.0;
    let mut res = f64::INFINITY;
    for it in 0..1_000_000 {
        let mut w = mul(&v);
        for (x, y) in w.iter_mut().zip(&v) {
            *x += y;
        }
        let m = norm(&w);
        for x in w.iter_mut() {
            *x /= m;
        }
        v = w;
        if it % 16 == 15 || it < 8 {
            let av = mul(&v);
            // Collatz–Wielandt bracket
            let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
            for i in 0..n {
                if v[i] > 0.0 {
                    lo = lo.min(av[i] / v[i]);
                    hi = hi.max(av[i] / v[i]);
                }
            }
            lambda = (lo + hi) / 2.0;
            res = residual_of(&v, lambda);
            if res <= tol {
                break;
            }
            if hi - lo < 1e-6 {
                // finish with inverse iteration
                if let Some((l2, v2)) = inverse_iteration(&af, lambda, &v) {
                    let r2 = residual_of(&v2, l2);
                    if r2 < res {
                        lambda = l2;
                        v = v2;
                        res = r2;
                    }
                    if res <= tol {
                        break;
                    }
                }
            }
        }
    }
    if res > tol {
        return Err(Error::Numeric { message: "power iteration did not converge".into(), residual: res });
    }
    Ok(SpectralResult { lambda, tolerance: tol, is_one_exact: false, eigenvector: v, residual: res })
}

fn inverse_iteration(a: &[Vec<f64>], shift: f64, v0: &[f64]) -> Option<(f64, Vec<f64>)> {
    let n = a.len();
    let sigma = shift + 1e-10 * shift.abs().max(1.0);
    let mut v = v0.to_vec();
    let mut lambda = shift;
    for _ in 0..6 {
        let mut m: Vec<Vec<f64>> = a.to_vec();
        for (i, row) in m.iter_mut().enumerate() {
            row[i] -= sigma;
        }
        let x = solve(m, v.clone())?;
        let s = x.iter().fold(0.0f64, |acc, y| if y.abs() > acc.abs() { *y } else { acc });
        if s == 0.0 || !s.is_finite() {
            return None;
        }
        v = x.iter().map(|y| y / s).collect();
        let av: Vec<f64> = a.iter().map(|r| r.iter().zip(&v).map(|(p, q)| p * q).sum()).collect();
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            num += av[i] * v[i];
            den += v[i] * v[i];
        }
        lambda = num / den;
    }
    if v.iter().any(|x| *x < -1e-9) {
        return None;
    }
    Some((lambda, v))
}

fn solve(mut m: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))?;
        if m[p][c].abs() < 1e-300 {
            return None;
        }
        m.swap(c, p);
        b.swap(c, p);
        for r in (c + 1)..n {
            let f = m[r][c] / m[c][c];
            if f != 0.0 {
                for k in c..n {
                    m[r][k] -= f * m[c][k];
                }
                b[r] -= f * b[c];
            }
        }
    }
    let mut x = vec![0.0; n];
    for c in (0..n).rev() {
        let s: f64 = ((c + 1)..n).map(|k| m[c][k] * x[k]).sum();
        x[c] = (b[c] - s) / m[c][c];
    }
    Some(x)
}

/// Largest PF eigenvalue over the irreducible blocks; 0 when there are none.
pub fn max_eigenvalue(a: &TransitionMatrix, tol: f64) -> Result<f64> {
    let mut best = 0.0f64;
    for comp in a.components() {
        let sub = a.restrict(&comp);
        if is_irreducible(&sub) {
            best = best.max(pf_eigenvalue(&sub, tol)?.lambda);
        }
    }
    Ok(best)
}

/// Growth rate of a self-map: largest PF eigenvalue of its transition matrix
/// (pretrivial edges allowed; they contribute nothing).
pub fn stretch_factor(f: &GraphMap) -> Result<f64> {
    max_eigenvalue(&count_matrix(f, &(0..f.domain.edges.len()).collect::<Vec<_>>()), DEFAULT_TOL)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TurnStructure {
    /// Per vertex, its directions grouped into gates.
    pub gates: Vec<Vec<Vec<Dir>>>,
    /// Per direction, the gate id at its vertex.
    gate_of: HashMap<Dir, usize>,
}

impl TurnStructure {
    pub fn is_legal(&self, a: Dir, b: Dir) -> bool {
        a != b && self.gate_of.get(&a) != self.gate_of.get(&b)
    }

    pub fn illegal_turns(&self) -> Vec<(Dir, Dir)> {
        let mut out = Vec::new();
        for gs in &self.gates {
            for g in gs {
                for i in 0..g.len() {
                    for j in (i + 1)..g.len() {
                        out.push((g[i], g[j]));
                    }
                }
            }
        }
        out
    }
}

/// Derivative: first direction of the image of a direction.
fn derivative(f: &GraphMap, d: Dir) -> Option<Dir> {
    let img = &f.edge_images[d.edge];
    if img.is_empty() {
        return None;
    }
    Some(if d.fwd { img[0] } else { img[img.len() - 1].rev() })
}

/// Gates: directions at a vertex are equivalent when some iterate of the
/// derivative identifies them.
pub fn turn_structure(f: &GraphMap) -> Result<TurnStructure> {
    let g = &f.domain;
    let dirs = g.directions();
    let all: Vec<Dir> = dirs.iter().flatten().copied().collect();
    let n = all.len();
    let mut cur: HashMap<Dir, Dir> = HashMap::with_capacity(n);
    for &d in &all {
        cur.insert(d, d);
    }
    let mut gate_key: HashMap<Dir, Dir> = cur.clone();
    // Df^n for n = number of directions; equality persists once reached
    let df: HashMap<Dir, Dir> = all
        .iter()
        .map(|&d| {
            derivative(f, d)
                .map(|x| (d, x))
                .ok_or_else(|| Error::Precondition(format!("edge {} has trivial image", d.edge)))
        })
        .collect::<Result<_>>()?;
    for _ in 0..n.max(1) {
        let mut changed = false;
        for d in &all {
            let next = df[&cur[d]];
            if next != cur[d] {
                changed = true;
            }
            cur.insert(*d, next);
        }
        if !changed {
            break;
        }
    }
    for d in &all {
        gate_key.insert(*d, cur[d]);
    }
    let mut gates = Vec::with_capacity(g.num_vertices);
    let mut gate_of = HashMap::new();
    for ds in &dirs {
        let mut groups: Vec<(Dir, Vec<Dir>)> = Vec::new();
        let mut sorted = ds.clone();
        sorted.sort();
        for &d in &sorted {
            let k = gate_key[&d];
            match groups.iter_mut().find(|(key, _)| *key == k) {
                Some((_, v)) => v.push(d),
                None => groups.push((k, vec![d])),
            }
        }
        for (i, (_, v)) in groups.iter().enumerate() {
            for d in v {
                gate_of.insert(*d, i);
            }
        }
        gates.push(groups.into_iter().map(|(_, v)| v).collect());
    }
    Ok(TurnStructure { gates, gate_of })
}

/// Turns crossed by a path: (incoming reversed, outgoing) at each interior vertex.
fn turns_of(p: &[Dir]) -> impl Iterator<Item = (usize, Dir, Dir)> + '_ {
    p.windows(2).enumerate().map(|(i, w)| (i, w[0].rev(), w[1]))
}

pub fn is_train_track(f: &GraphMap) -> bool {
    let Ok(ts) = turn_structure(f) else { return false };
    f.edge_images.iter().all(|p| turns_of(p).all(|(_, a, b)| ts.is_legal(a, b)))
}

/// Derivative injective at each vertex and all images nonempty.
pub fn is_immersion(f: &GraphMap) -> bool {
    let dirs = f.domain.directions();
    for ds in &dirs {
        let mut seen = HashSet::new();
        for &d in ds {
            match derivative(f, d) {
                None => return false,
                Some(x) => {
                    if !seen.insert(x) {
                        return false;
                    }
                }
            }
        }
    }
    true
}

/// Direct check that `f^n(e)` is immersed for n ≤ `max_n` and all edges.
/// Stops once total image length passes `length_cap`; returns the largest n
/// fully checked, or the first failing (edge, n).
pub fn iterates_immersed(f: &GraphMap, max_n: usize, length_cap: usize) -> std::result::Result<usize, (usize, usize)> {
    let m = f.domain.edges.len();
    let mut paths: Vec<Path> = (0..m).map(|e| vec![Dir::fwd(e)]).collect();
    for n in 1..=max_n {
        let mut total = 0;
        for (e, p) in paths.iter_mut().enumerate() {
            let next = f.image_raw(p);
            if next.windows(2).any(|w| w[1] == w[0].rev()) {
                return Err((e, n));
            }
            total += next.len();
            *p = next;
        }
        if total > length_cap {
            return Ok(n);
        }
    }
    Ok(max_n)
}

/// Edge e is non-expanding iff every edge it eventually maps over has image
/// of length one.
pub fn expansion_profile(f: &GraphMap) -> Vec<bool> {
    let m = f.domain.edges.len();
    let mut out = vec![true; m];
    for (e, flag) in out.iter_mut().enumerate() {
        let mut stack = vec![e];
        let mut seen = vec![false; m];
        seen[e] = true;
        let mut all_one = true;
        while let Some(x) = stack.pop() {
            if f.edge_images[x].len() != 1 {
                all_one = false;
                break;
            }
            for d in &f.edge_images[x] {
                if !seen[d.edge] {
                    seen[d.edge] = true;
                    stack.push(d.edge);
                }
            }
        }
        *flag = !all_one;
    }
    out
}

pub fn is_expanding(f: &GraphMap) -> bool {
    expansion_profile(f).iter().all(|&x| x)
}

// ---------------------------------------------------------------------------
// moves

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Move {
    /// Subdivide `edge` at the vertex after `position` letters of its image.
    Subdivide {
        edge: usize,
        position: usize,
    },
    BivalentHomotopy {
        vertex: usize,
    },
    /// Fold the maximal common initial segment of two directions' images.
    Fold {
        a: Dir,
        b: Dir,
    },
    /// Collapse an invariant forest.
    CollapseBoundedInvariant {
        edges: Vec<usize>,
    },
    /// Move the image of `vertex` across the first edge of `dir`.
    Slide {
        vertex: usize,
        dir: Dir,
    },
    /// Subdivide at an illegal turn of an edge image and fold it away.
    FoldCascade {
        edge: usize,
        position: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MoveRecord {
    #[serde(rename = "move")]
    pub kind: String,
    pub location: String,
    pub lambda_before: f64,
    pub lambda_after: f64,
    /// Tightening cancelled something after the move.
    pub tightened: bool,
}

fn build(num_vertices: usize, edges: Vec<Edge>, vmap: Vec<usize>, images: Vec<Path>) -> Result<GraphMap> {
    let g = LabeledGraph { num_vertices, edges, basepoint: None };
    GraphMap::new_untightened(g.clone(), g, vmap, images)
}

/// Drop dead vertices and edges, renumbering the rest.
fn compact(f: &GraphMap, vertex_alive: &[bool], edge_alive: &[bool]) -> Result<GraphMap> {
    let mut vid = vec![usize::MAX; vertex_alive.len()];
    let mut nv = 0;
    for v in 0..vertex_alive.len() {
        if vertex_alive[v] {
            vid[v] = nv;
            nv += 1;
        }
    }
    let mut eid = vec![usize::MAX; edge_alive.len()];
    let mut ne = 0;
    for e in 0..edge_alive.len() {
        if edge_alive[e] {
            eid[e] = ne;
            ne += 1;
        }
    }
    let g = &f.domain;
    let edges = (0..g.edges.len())
        .filter(|&e| edge_alive[e])
        .map(|e| Edge { from: vid[g.edges[e].from], to: vid[g.edges[e].to], label: g.edges[e].label })
        .collect();
    let vmap = (0..g.num_vertices).filter(|&v| vertex_alive[v]).map(|v| vid[f.vertex_map[v]]).collect();
    let mut images = Vec::with_capacity(ne);
    for e in 0..g.edges.len() {
        if !edge_alive[e] {
            continue;
        }
        let mut p = Vec::with_capacity(f.edge_images[e].len());
        for d in &f.edge_images[e] {
            if eid[d.edge] == usize::MAX {
                return Err(Error::Internal("image crosses a removed edge".into()));
            }
            p.push(Dir { edge: eid[d.edge], fwd: d.fwd });
        }
        images.push(p);
    }
    build(nv, edges, vmap, images)
}

fn retighten(f: &GraphMap) -> (GraphMap, bool) {
    let mut changed = false;
    let images: Vec<Path> = f
        .edge_images
        .iter()
        .map(|p| {
            let t = tighten(p);
            changed |= t.len() != p.len();
            t
        })
        .collect();
    let mut g = f.clone();
    g.edge_images = images;
    g.lipschitz = g.edge_images.iter().map(Vec::len).max().unwrap_or(0);
    (g, changed)
}

/// Subdivide `edge` so that the new vertex maps to the point after
/// `position` letters of its image.
pub fn subdivide(f: &GraphMap, edge: usize, position: usize) -> Result<(GraphMap, usize)> {
    let img = &f.edge_images[edge];
    if position == 0 || position >= img.len() {
        return Err(Error::Move(format!("subdivision point {position} is not interior to the image of edge {edge}")));
    }
    let g = &f.domain;
    let e = g.edges[edge];
    let w = g.num_vertices;
    let new_e = g.edges.len();
    let mut edges = g.edges.clone();
    edges[edge] = Edge { from: e.from, to: w, label: e.label };
    edges.push(Edge { from: w, to: e.to, label: e.label });
    let mut vmap = f.vertex_map.clone();
    vmap.push(f.codomain.terminus(img[position - 1]));
    let split = |p: &Path| -> Path {
        let mut out = Vec::with_capacity(p.len() + 1);
        for &d in p {
            if d.edge == edge {
                if d.fwd {
                    out.push(Dir::fwd(edge));
                    out.push(Dir::fwd(new_e));
                } else {
                    out.push(Dir::bwd(new_e));
                    out.push(Dir::bwd(edge));
                }
            } else {
                out.push(d);
            }
        }
        out
    };
    let mut images: Vec<Path> = f.edge_images.iter().map(split).collect();
    let full = images[edge].clone();
    // position counts letters of the old image; the split image is longer
    // by one letter for each crossing of `edge` before that point
    let cut = split(&img[..position].to_vec()).len();
    images[edge] = full[..cut].to_vec();
    images.push(full[cut..].to_vec());
    Ok((build(w + 1, edges, vmap, images)?, new_e))
}

/// Collapse an invariant forest.
pub fn collapse_forest(f: &GraphMap, forest: &[usize]) -> Result<GraphMap> {
    let g = &f.domain;
    let mut in_f = vec![false; g.edges.len()];
    for &e in forest {
        in_f[e] = true;
    }
    for &e in forest {
        if f.edge_images[e].iter().any(|d| !in_f[d.edge]) {
            return Err(Error::Move(format!("forest is not invariant at edge {e}")));
        }
    }
    let mut uf = UnionFind::new(g.num_vertices);
    for &e in forest {
        if !uf.union(g.edges[e].from, g.edges[e].to) {
            return Err(Error::Move("collapse target contains a loop".into()));
        }
    }
    let mut rep = vec![0; g.num_vertices];
    let mut alive = vec![false; g.num_vertices];
    for v in 0..g.num_vertices {
        rep[v] = uf.find(v);
        alive[rep[v]] = true;
    }
    let mut h = f.clone();
    for e in h.domain.edges.iter_mut() {
        e.from = rep[e.from];
        e.to = rep[e.to];
    }
    h.codomain = h.domain.clone();
    h.vertex_map = (0..g.num_vertices).map(|v| rep[f.vertex_map[v]]).collect();
    for p in h.edge_images.iter_mut() {
        p.retain(|d| !in_f[d.edge]);
    }
    let edge_alive: Vec<bool> = in_f.iter().map(|x| !x).collect();
    compact(&h, &alive, &edge_alive)
}

/// Identify two directions at a vertex whose images agree on a nonempty
/// initial segment, subdividing first so the folded edges have equal images.
pub fn fold(f: &GraphMap, a: Dir, b: Dir) -> Result<GraphMap> {
    Ok(fold_tracked(f, a, b, &[], None)?.0)
}

/// `fold`, also returning where each vertex of `f` ends up.
///
/// With `limit`, only the part of the common segment covered by its first
/// `limit` letters is folded.
fn fold_tracked(f: &GraphMap, a: Dir, b: Dir, tracked: &[Dir], limit: Option<usize>) -> Result<(GraphMap, Vec<Dir>)> {
    let mut limit = limit;
    let mut tracked = tracked.to_vec();
    let g = &f.domain;
    if a == b || g.origin(a) != g.origin(b) {
        return Err(Error::Move("fold needs two distinct directions at one vertex".into()));
    }
    let (ia, ib) = (f.dir_image(a), f.dir_image(b));
    let c = ia.iter().zip(&ib).take_while(|(x, y)| x == y).count();
    if c == 0 {
        return Err(Error::Move("fold turn is not degenerate".into()));
    }
    let mut f = f.clone();
    let (mut a, mut b) = (a, b);
    // make both images exactly the common segment; subdividing one edge
    // refines every image, so the segment is recomputed each round
    for _ in 0..4 {
        let (ia, ib) = (f.dir_image(a), f.dir_image(b));
        let mut c = ia.iter().zip(&ib).take_while(|(x, y)| x == y).count();
        if let Some(l) = limit {
            c = c.min(l);
        }
        let d = if ia.len() > c {
            a
        } else if ib.len() > c {
            b
        } else {
            break;
        };
        let len = f.edge_images[d.edge].len();
        let pos = if d.fwd { c } else { len - c };
        let (h, new_e) = subdivide(&f, d.edge, pos)?;
        if let Some(l) = limit.as_mut() {
            *l += ia[..c].iter().filter(|x| x.edge == d.edge).count();
        }
        f = h;
        let fix = |x: Dir| if x.edge == d.edge && !x.fwd { Dir::bwd(new_e) } else { x };
        a = fix(a);
        b = fix(b);
        for t in tracked.iter_mut() {
            *t = fix(*t);
        }
    }
    let g = &f.domain;
    if f.dir_image(a) != f.dir_image(b) {
        return Err(Error::Internal("fold could not equalize the images".into()));
    }
    let (ta, tb) = (g.terminus(a), g.terminus(b));
    if a.edge == b.edge || ta == tb {
        return Err(Error::NotInjective { witness: format!("folding edges {} and {} kills a loop", a.edge, b.edge) });
    }
    let (keep_v, lose_v) = (ta.min(tb), ta.max(tb));
    let lose_e = b.edge;
    let mut h = f.clone();
    for e in h.domain.edges.iter_mut() {
        if e.from == lose_v {
            e.from = keep_v;
        }
        if e.to == lose_v {
            e.to = keep_v;
        }
    }
    for v in h.vertex_map.iter_mut() {
        if *v == lose_v {
            *v = keep_v;
        }
    }
    let swap = |d: Dir| {
        if d.edge == lose_e {
            if d.fwd == b.fwd {
                a
            } else {
                a.rev()
            }
        } else {
            d
        }
    };
    for p in h.edge_images.iter_mut() {
        for d in p.iter_mut() {
            *d = swap(*d);
        }
    }
    h.codomain = h.domain.clone();
    let mut va = vec![true; g.num_vertices];
    va[lose_v] = false;
    let mut ea = vec![true; g.edges.len()];
    ea[lose_e] = false;
    let tracked = tracked
        .into_iter()
        .map(|t| {
            let t = swap(t);
            Dir { edge: if t.edge > lose_e { t.edge - 1 } else { t.edge }, fwd: t.fwd }
        })
        .collect();
    Ok((compact(&h, &va, &ea)?, tracked))
}

/// Subdivide at an illegal turn of an edge image and fold along its
/// derivative orbit, last turn first, until the turn at the new vertex is
/// degenerate; that turn is then removed, which tightens the image.
pub fn fold_cascade(f: &GraphMap, edge: usize, position: usize) -> Result<GraphMap> {
    let (mut f, new_e) = subdivide(f, edge, position)?;
    let (mut d1, mut d2) = (Dir::bwd(edge), Dir::fwd(new_e));
    let limit = 4 * f.domain.edges.len() * f.domain.edges.len() + 8;
    for _ in 0..limit {
        let (mut p, mut q) = (d1, d2);
        let mut at_turn = true;
        for _ in 0..limit {
            let (Some(np), Some(nq)) = (derivative(&f, p), derivative(&f, q)) else { break };
            if np == nq {
                break;
            }
            at_turn = false;
            p = np;
            q = nq;
        }
        match (derivative(&f, p), derivative(&f, q)) {
            (Some(dp), Some(dq)) if dp == dq => {}
            _ => return Err(Error::Move("cascade turn never degenerates".into())),
        }
        if at_turn {
            let x = f.domain.origin(d1);
            if f.domain.valences()[x] == 2 {
                return bivalent_homotopy(&f, x);
            }
            return fold_tracked(&f, d1, d2, &[], Some(1))
                .map(|r| r.0)
                .map_err(|e| Error::Move(format!("cascade fold failed: {e}")));
        }
        let (h, t) =
            fold_tracked(&f, p, q, &[d1, d2], Some(1)).map_err(|e| Error::Move(format!("cascade fold failed: {e}")))?;
        f = h;
        d1 = t[0];
        d2 = t[1];
        if d1 == d2 {
            return Err(Error::Move("cascade turn was folded shut".into()));
        }
    }
    Err(Error::Move("cascade did not finish".into()))
}

/// Remove a vertex of valence two, first pushing any vertex images off it.
pub fn bivalent_homotopy(f: &GraphMap, v: usize) -> Result<GraphMap> {
    let g = &f.domain;
    let dirs = g.directions();
    if dirs[v].len() != 2 || dirs[v][0].edge == dirs[v][1].edge {
        return Err(Error::Move(format!("vertex {v} is not bivalent")));
    }
    let p = dirs[v][0].rev(); // into v
    let q = dirs[v][1]; // out of v
    let y = g.terminus(q);
    let mut h = f.clone();
    for x in 0..g.num_vertices {
        if x != v && f.vertex_map[x] == v {
            h.vertex_map[x] = y;
        }
    }
    for (i, e) in g.edges.iter().enumerate() {
        let mut path = Vec::new();
        if e.from != v && f.vertex_map[e.from] == v {
            path.push(q.rev());
        }
        path.extend_from_slice(&f.edge_images[i]);
        if e.to != v && f.vertex_map[e.to] == v {
            path.push(q);
        }
        h.edge_images[i] = tighten(&path);
    }
    // merged edge reuses p's edge id
    let merged = p.edge;
    let gone = q.edge;
    let (from, to) = (g.origin(p), g.terminus(q));
    let mut merged_img = h.dir_image(p);
    merged_img.extend(h.dir_image(q));
    let merged_img = tighten(&merged_img);
    let rewrite = |path: &Path| -> Result<Path> {
        let mut out = Vec::with_capacity(path.len());
        let mut i = 0;
        while i < path.len() {
            let d = path[i];
            if d == p && path.get(i + 1) == Some(&q) {
                out.push(Dir::fwd(merged));
                i += 2;
            } else if d == q.rev() && path.get(i + 1) == Some(&p.rev()) {
                out.push(Dir::bwd(merged));
                i += 2;
            } else if d.edge == p.edge || d.edge == q.edge {
                return Err(Error::Internal("tight image stops at a bivalent vertex".into()));
            } else {
                out.push(d);
                i += 1;
            }
        }
        Ok(out)
    };
    let mut images = Vec::with_capacity(g.edges.len());
    for (i, img) in h.edge_images.iter().enumerate() {
        if i == merged {
            images.push(rewrite(&merged_img)?);
        } else if i == gone {
            images.push(Vec::new());
        } else {
            images.push(rewrite(img)?);
        }
    }
    let mut edges = g.edges.clone();
    edges[merged] = Edge { from, to, label: g.edges[merged].label };
    let mut vmap = h.vertex_map.clone();
    vmap[v] = y;
    // the dropped edge has no consistent image yet; compact checks the rest
    let dom = LabeledGraph { num_vertices: g.num_vertices, edges, basepoint: None };
    let tmp = GraphMap {
        domain: dom.clone(),
        codomain: dom,
        vertex_map: vmap,
        edge_images: images,
        lipschitz: 0,
        cancellation: None,
    };
    let mut va = vec![true; g.num_vertices];
    va[v] = false;
    let mut ea = vec![true; g.edges.len()];
    ea[gone] = false;
    compact(&tmp, &va, &ea)
}

/// Remove a vertex of valence one and its edge.
fn prune_hair(f: &GraphMap, v: usize) -> Result<GraphMap> {
    let g = &f.domain;
    let dirs = g.directions();
    if dirs[v].len() != 1 {
        return Err(Error::Move(format!("vertex {v} is not a hair tip")));
    }
    let out = dirs[v][0];
    let u = g.terminus(out);
    let mut h = f.clone();
    for (i, e) in g.edges.iter().enumerate() {
        let mut path = Vec::new();
        if f.vertex_map[e.from] == v {
            path.push(out.rev());
        }
        path.extend_from_slice(&f.edge_images[i]);
        if f.vertex_map[e.to] == v {
            path.push(out);
        }
        h.edge_images[i] = tighten(&path);
    }
    for x in 0..g.num_vertices {
        if f.vertex_map[x] == v {
            h.vertex_map[x] = u;
        }
    }
    h.edge_images[out.edge] = Vec::new();
    let mut va = vec![true; g.num_vertices];
    va[v] = false;
    let mut ea = vec![true; g.edges.len()];
    ea[out.edge] = false;
    compact(&h, &va, &ea)
}

/// Homotope `f` near `v` so that `v` maps to the far end of `dir`, which
/// must start at f(v). Images are left untightened.
pub fn slide(f: &GraphMap, v: usize, dir: Dir) -> Result<GraphMap> {
    let g = &f.domain;
    if v >= g.num_vertices || dir.edge >= g.edges.len() || g.origin(dir) != f.vertex_map[v] {
        return Err(Error::Move(format!("cannot slide vertex {v} along {dir:?}")));
    }
    let mut h = f.clone();
    h.vertex_map[v] = g.terminus(dir);
    for (e, edge) in g.edges.iter().enumerate() {
        if edge.from == v {
            h.edge_images[e].insert(0, dir.rev());
        }
        if edge.to == v {
            h.edge_images[e].push(dir);
        }
    }
    Ok(h)
}

/// Tighten and collapse pretrivial edges.
pub fn clean(f: &GraphMap) -> Result<(GraphMap, bool)> {
    let (mut f, tightened) = retighten(f);
    loop {
        let pre: Vec<usize> = f.pretrivial_edges().iter().enumerate().filter(|(_, &p)| p).map(|(e, _)| e).collect();
        if pre.is_empty() {
            return Ok((f, tightened));
        }
        f = collapse_forest(&f, &pre).map_err(|e| match e {
            Error::Move(_) => Error::NotInjective { witness: "pretrivial edges contain a loop".into() },
            other => other,
        })?;
        f = retighten(&f).0;
    }
}

/// Tighten, collapse pretrivial edges, prune hairs and remove bivalent vertices.
pub fn normalize(f: &GraphMap) -> Result<GraphMap> {
    let (mut f, _) = clean(f)?;
    loop {
        let val = f.domain.valences();
        if f.domain.edges.len() <= 1 {
            return Ok(f);
        }
        if let Some(v) = (0..val.len()).find(|&v| val[v] == 1) {
            f = clean(&prune_hair(&f, v)?)?.0;
            continue;
        }
        let dirs = f.domain.directions();
        if let Some(v) = (0..val.len()).find(|&v| val[v] == 2 && dirs[v][0].edge != dirs[v][1].edge) {
            f = clean(&bivalent_homotopy(&f, v)?)?.0;
            continue;
        }
        return Ok(f);
    }
}

/// Apply a move, tighten and collapse pretrivial edges.
pub fn apply_move(f: &GraphMap, mv: &Move) -> Result<(GraphMap, MoveRecord)> {
    let before = stretch_factor(f)?;
    let (raw, kind, location) = match mv {
        Move::Subdivide { edge, position } => {
            (subdivide(f, *edge, *position)?.0, "subdivide", format!("edge {edge} at {position}"))
        }
        Move::BivalentHomotopy { vertex } => {
            (bivalent_homotopy(f, *vertex)?, "bivalent_homotopy", format!("vertex {vertex}"))
        }
        Move::Fold { a, b } => (fold(f, *a, *b)?, "fold", format!("{a:?} {b:?}")),
        Move::CollapseBoundedInvariant { edges } => {
            (collapse_forest(f, edges)?, "collapse", format!("edges {edges:?}"))
        }
        Move::FoldCascade { edge, position } => {
            (fold_cascade(f, *edge, *position)?, "fold_cascade", format!("edge {edge} at {position}"))
        }
        Move::Slide { vertex, dir } => (slide(f, *vertex, *dir)?, "slide", format!("vertex {vertex} along {dir:?}")),
    };
    let (out, tightened) = clean(&raw)?;
    let after = stretch_factor(&out)?;
    Ok((out, MoveRecord { kind: kind.into(), location, lambda_before: before, lambda_after: after, tightened }))
}

#[derive(Debug, Clone)]
pub enum TrackOutcome {
    Track {
        map: GraphMap,
        trace: Vec<MoveRecord>,
    },
    BudgetExceeded {
        map: GraphMap,
        trace: Vec<MoveRecord>,
    },
    /// A state repeated; the loop was aborted.
    Revisited {
        map: GraphMap,
        trace: Vec<MoveRecord>,
    },
}

impl TrackOutcome {
    pub fn map(&self) -> &GraphMap {
        match self {
            TrackOutcome::Track { map, .. }
            | TrackOutcome::BudgetExceeded { map, .. }
            | TrackOutcome::Revisited { map, .. } => map,
        }
    }

    pub fn trace(&self) -> &[MoveRecord] {
        match self {
            TrackOutcome::Track { trace, .. }
            | TrackOutcome::BudgetExceeded { trace, .. }
            | TrackOutcome::Revisited { trace, .. } => trace,
        }
    }

    pub fn is_track(&self) -> bool {
        matches!(self, TrackOutcome::Track { .. })
    }
}

pub const DEFAULT_MOVE_BUDGET: usize = 10_000;

/// Foldable pairs reached by following each illegal turn of an edge image
/// under Df to its last nondegenerate iterate, in edge order.
pub fn foldable_turns(f: &GraphMap, ts: &TurnStructure) -> Vec<(Dir, Dir)> {
    let mut out: Vec<(Dir, Dir)> = Vec::new();
    for p in &f.edge_images {
        for (_, a, b) in turns_of(p) {
            if ts.is_legal(a, b) {
                continue;
            }
            let (mut x, mut y) = (a, b);
            for _ in 0..=4 * f.domain.edges.len() * f.domain.edges.len() + 4 {
                let (Some(nx), Some(ny)) = (derivative(f, x), derivative(f, y)) else { break };
                if nx == ny {
                    let key = if (x.edge, x.fwd) <= (y.edge, y.fwd) { (x, y) } else { (y, x) };
                    if !out.contains(&key) {
                        out.push(key);
                    }
                    break;
                }
                x = nx;
                y = ny;
            }
        }
    }
    out
}

pub fn candidate_moves(f: &GraphMap) -> Result<Vec<Move>> {
    let ts = turn_structure(f)?;
    let mut out: Vec<Move> = Vec::new();
    for (edge, p) in f.edge_images.iter().enumerate() {
        for (i, a, b) in turns_of(p) {
            if !ts.is_legal(a, b) {
                out.push(Move::FoldCascade { edge, position: i + 1 });
            }
        }
    }
    out.extend(foldable_turns(f, &ts).into_iter().map(|(a, b)| Move::Fold { a, b }));
    let dirs = f.domain.directions();
    for v in 0..f.domain.num_vertices {
        for &dir in &dirs[f.vertex_map[v]] {
            out.push(Move::Slide { vertex: v, dir });
        }
    }
    Ok(out)
}

/// Exact map state, hashed; only the hash is kept in the seen-set.
fn state_of(f: &GraphMap) -> u64 {
    use std::hash::{Hash, Hasher};
    let mut h = std::collections::hash_map::DefaultHasher::new();
    (&f.domain.edges, &f.vertex_map, &f.edge_images).hash(&mut h);
    h.finish()
}

/// States whose longest edge image passes this multiple of the input's
/// (or 64 letters, if larger) are not explored.
pub const IMAGE_GROWTH_CAP: usize = 16;

/// Fold illegal turns until the map is a train track.
///
/// The first foldable turn is tried first; when a fold leads back to a
/// state already seen (or raises λ) the next candidate is tried, backing up
/// when a state has none left. Vertex slides are tried after the folds,
/// which gets past vertices whose directions all end up in one gate.
/// `budget` bounds the number of moves tried.
pub fn make_train_track(f: &GraphMap, budget: usize) -> Result<TrackOutcome> {
    let start = normalize(f)?;
    let mut seen: HashSet<u64> = HashSet::new();
    seen.insert(state_of(&start));
    let longest = |g: &GraphMap| g.edge_images.iter().map(Vec::len).max().unwrap_or(0);
    let length_cap = (IMAGE_GROWTH_CAP * longest(&start)).max(64);
    // (map, λ, candidate moves, next candidate)
    let mut stack: Vec<(GraphMap, f64, Vec<Move>, usize)> = Vec::new();
    let mut trace: Vec<MoveRecord> = Vec::new();
    let lambda0 = stretch_factor(&start)?;
    if is_train_track(&start) {
        return Ok(TrackOutcome::Track { map: start, trace });
    }
    let c0 = candidate_moves(&start)?;
    stack.push((start, lambda0, c0, 0));
    let mut used = 0;
    while let Some(top) = stack.last_mut() {
        if top.3 >= top.2.len() {
            let (map, ..) = stack.pop().unwrap();
            if stack.is_empty() {
                return Ok(TrackOutcome::Revisited { map, trace });
            }
            trace.pop();
            continue;
        }
        if used >= budget {
            let map = top.0.clone();
            return Ok(TrackOutcome::BudgetExceeded { map, trace });
        }
        let mv = top.2[top.3].clone();
        top.3 += 1;
        used += 1;
        let cur = top.0.clone();
        let (next, mut rec) = match apply_move(&cur, &mv) {
            Ok(x) => x,
            Err(Error::Move(_)) => continue,
            Err(e) => return Err(e),
        };
        let next = normalize(&next)?;
        if next.domain.edges.is_empty() {
            continue;
        }
        rec.lambda_after = stretch_factor(&next)?;
        if rec.lambda_after > rec.lambda_before + 1e-9 || longest(&next) > length_cap || !seen.insert(state_of(&next)) {
            continue;
        }
        let after = rec.lambda_after;
        trace.push(rec);
        if is_train_track(&next) {
            return Ok(TrackOutcome::Track { map: next, trace });
        }
        let cands = candidate_moves(&next)?;
        stack.push((next, after, cands, 0));
    }
    unreachable!("the search stack starts nonempty")
}

// ---------------------------------------------------------------------------
// relative immersions

#[derive(Debug, Clone)]
pub enum RelImmersionOutcome {
    Immersion { k: usize, filtered: FilteredGraphMap, quotient: QuotientMap },
    BudgetExceeded { tried: usize },
}

/// Levels whose `φ^k` images total more letters than this are not tried.
pub const LEVEL_IMAGE_CAP: usize = 4096;

/// Look for a level k where the realization of `A*` inside `S[φ^k(F)]` is
/// an invariant subgraph whose collapse leaves an expanding immersion.
pub fn relative_immersion(phi: &EndoSpec, a_star: &FreeFactorSystem, budget: usize) -> Result<RelImmersionOutcome> {
    let s0 = iterated_stallings(phi, 1)?;
    if s0.graph.isomorphic(&LabeledGraph::rose(phi.rank()), true)? {
        return Err(Error::Precondition("relative immersions are for nonsurjective endomorphisms".into()));
    }
    let f = GraphMap::from_endo(phi)?;
    let mut pk = EndoSpec::identity(phi.basis.clone());
    for k in 0..=budget {
        if pk.images.iter().map(Word::len).sum::<usize>() > LEVEL_IMAGE_CAP {
            return Ok(RelImmersionOutcome::BudgetExceeded { tried: k });
        }
        if let Some(found) = relative_immersion_at(phi, &f, a_star, k)? {
            return Ok(found);
        }
        pk = phi.compose(&pk);
    }
    Ok(RelImmersionOutcome::BudgetExceeded { tried: budget + 1 })
}

/// Start from an arbitrary representative on a subdivided rose: bivalent
/// vertices are removed first, which must return the rose map of `φ`.
pub fn relative_immersion_from(
    phi: &EndoSpec,
    start: &GraphMap,
    a_star: &FreeFactorSystem,
    budget: usize,
) -> Result<RelImmersionOutcome> {
    let f = normalize(start)?;
    let rose = GraphMap::from_endo(phi)?;
    if f.domain.num_vertices != 1 || f.rose_endo(&phi.basis).map(|e| e.images) != Some(phi.images.clone()) {
        return Err(Error::Precondition("start map does not reduce to the rose representative".into()));
    }
    let _ = rose;
    relative_immersion(phi, a_star, budget)
}

/// Whether level `k` alone gives an expanding relative immersion.
pub fn relative_immersion_level(phi: &EndoSpec, a_star: &FreeFactorSystem, k: usize) -> Result<bool> {
    let f = GraphMap::from_endo(phi)?;
    Ok(relative_immersion_at(phi, &f, a_star, k)?.is_some())
}

fn relative_immersion_at(
    phi: &EndoSpec,
    f: &GraphMap,
    a_star: &FreeFactorSystem,
    k: usize,
) -> Result<Option<RelImmersionOutcome>> {
    let s = if k == 0 {
        let gens: Vec<Word> = (1..=phi.rank() as i32).map(Word::letter).collect();
        subgroup_graph(&phi.basis, &gens)?.0
    } else {
        iterated_stallings(phi, k)?
    };
    if s.graph.edges.len() > 50_000 {
        return Ok(None);
    }
    let raw = if k == 0 { f.clone() } else { homotopy_lift_raw(f, &s)? };
    let lifted = match homotopy_lift(f, &s) {
        Ok(x) => x,
        Err(_) => raw.restrict_to_core()?,
    };
    let _ = raw;
    // realize each component of A* in the full graph, then restrict to core
    let (core_edges, _) = s.graph.core_parts(false);
    let mut core_id = vec![usize::MAX; s.graph.edges.len()];
    for (i, &e) in core_edges.iter().enumerate() {
        core_id[e] = i;
    }
    let pk = phi.power(k);
    let idx = s.index();
    let mut used_v = HashSet::new();
    let mut stratum = Vec::new();
    for comp in &a_star.components {
        let gens: Vec<Word> = comp.marking.iter().map(|w| crate::word::apply_endo(&pk, w)).collect();
        let (h, _) = subgroup_graph(&phi.basis, &gens)?;
        let Some((vmap, emap)) = h.graph.map_into(&s.graph, idx, h.basepoint(), s.basepoint()) else {
            return Ok(None);
        };
        let (hc_edges, hc_alive) = h.graph.core_parts(false);
        let mut vs = HashSet::new();
        for v in 0..h.graph.num_vertices {
            if hc_alive[v] && !vs.insert(vmap[v]) {
                return Ok(None);
            }
        }
        let mut es = HashSet::new();
        for &e in &hc_edges {
            if !es.insert(emap[e].edge) {
                return Ok(None);
            }
        }
        for v in &vs {
            if !used_v.insert(*v) {
                return Ok(None);
            }
        }
        for e in es {
            if core_id[e] == usize::MAX {
                return Ok(None);
            }
            stratum.push(core_id[e]);
        }
    }
    stratum.sort_unstable();
    let filtered = match FilteredGraphMap::new(lifted, vec![stratum.clone()]) {
        Ok(x) => x,
        Err(Error::Invariance(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let mut col = vec![false; filtered.map.domain.edges.len()];
    for &e in &stratum {
        col[e] = true;
    }
    let q = match QuotientMap::build(&filtered, &col, true) {
        Ok(q) => q,
        Err(Error::Precondition(_)) | Err(Error::Invariance(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    if q.graph.edges.is_empty() || !q.is_immersion() {
        return Ok(None);
    }
    let qm = q.to_graph_map()?;
    if !is_expanding(&qm) {
        return Ok(None);
    }
    Ok(Some(RelImmersionOutcome::Immersion { k, filtered, quotient: q }))
}

/// Label-preserving isomorphism of small unfolded graphs, by search.
pub fn small_graphs_isomorphic(a: &LabeledGraph, b: &LabeledGraph) -> bool {
    if a.num_vertices != b.num_vertices || a.edges.len() != b.edges.len() {
        return false;
    }
    let n = a.num_vertices;
    let key = |g: &LabeledGraph| {
        let mut ks: Vec<(i32, usize, usize)> = Vec::new();
        for e in &g.edges {
            ks.push((e.label, 0, 0));
        }
        ks.sort();
        ks
    };
    if key(a) != key(b) {
        return false;
    }
    let mut count_b: HashMap<(usize, usize, i32), usize> = HashMap::new();
    for e in &b.edges {
        *count_b.entry((e.from, e.to, e.label)).or_default() += 1;
    }
    let mut perm = vec![usize::MAX; n];
    let mut used = vec![false; n];
    fn go(
        i: usize,
        n: usize,
        a: &LabeledGraph,
        perm: &mut Vec<usize>,
        used: &mut Vec<bool>,
        count_b: &HashMap<(usize, usize, i32), usize>,
    ) -> bool {
        if i == n {
            let mut c: HashMap<(usize, usize, i32), usize> = HashMap::new();
            for e in &a.edges {
                *c.entry((perm[e.from], perm[e.to], e.label)).or_default() += 1;
            }
            return &c == count_b;
        }
        for t in 0..n {
            if !used[t] {
                used[t] = true;
                perm[i] = t;
                if go(i + 1, n, a, perm, used, count_b) {
                    return true;
                }
                used[t] = false;
            }
        }
        false
    }
    if n > 8 {
        return false;
    }
    go(0, n, a, &mut perm, &mut used, &count_b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rose_map(imgs: &[&str]) -> GraphMap {
        GraphMap::from_endo(&EndoSpec::from_strs(imgs).unwrap()).unwrap()
    }

    #[test]
    fn matrices() {
        let a = transition_matrix(&rose_map(&["ab", "ba"])).unwrap();
        assert_eq!(a.entries, vec![vec![1, 1], vec![1, 1]]);
        let id = transition_matrix(&rose_map(&["a", "b"])).unwrap();
        assert_eq!(id.entries, vec![vec![1, 0], vec![0, 1]]);
        let p = transition_matrix(&rose_map(&["a", "abab"])).unwrap();
        assert_eq!((p.entries[0][1], p.entries[1][1]), (2, 2));
    }

    #[test]
    fn irreducibility() {
        assert!(is_irreducible(&TransitionMatrix::from_rows(vec![vec![1, 1], vec![1, 1]])));
        assert!(!is_irreducible(&TransitionMatrix::from_rows(vec![vec![1, 0], vec![1, 1]])));
        let cyc = TransitionMatrix::from_rows(vec![vec![0, 0, 1], vec![1, 0, 0], vec![0, 1, 0]]);
        assert!(is_irreducible(&cyc));
    }

    #[test]
    fn eigenvalues() {
        let r = pf_eigenvalue(&TransitionMatrix::from_rows(vec![vec![1, 1], vec![1, 1]]), DEFAULT_TOL).unwrap();
        assert!((r.lambda - 2.0).abs() < 1e-12);
        let cyc = TransitionMatrix::from_rows(vec![vec![0, 0, 1], vec![1, 0, 0], vec![0, 1, 0]]);
        let r = pf_eigenvalue(&cyc, DEFAULT_TOL).unwrap();
        assert!(r.is_one_exact && r.lambda == 1.0);
        let r = pf_eigenvalue(&TransitionMatrix::from_rows(vec![vec![2]]), DEFAULT_TOL).unwrap();
        assert_eq!(r.lambda, 2.0);
        let fib = TransitionMatrix::from_rows(vec![vec![1, 1], vec![1, 0]]);
        let r = pf_eigenvalue(&fib, DEFAULT_TOL).unwrap();
        assert!((r.lambda - (1.0 + 5f64.sqrt()) / 2.0).abs() < 1e-12);
        assert!(pf_eigenvalue(&TransitionMatrix::from_rows(vec![vec![1, 0], vec![1, 1]]), DEFAULT_TOL).is_err());
    }

    #[test]
    fn gates_and_immersions() {
        let f = rose_map(&["ab", "ba"]);
        assert!(is_immersion(&f) && is_train_track(&f));
        let g = rose_map(&["a", "abab"]);
        assert!(!is_immersion(&g));
        assert!(is_immersion(&rose_map(&["a", "b"])));
    }

    #[test]
    fn expansion() {
        assert_eq!(expansion_profile(&rose_map(&["ab", "ba"])), vec![true, true]);
        assert_eq!(expansion_profile(&rose_map(&["a", "b"])), vec![false, false]);
        assert_eq!(expansion_profile(&rose_map(&["a", "abab"])), vec![false, true]);
    }

    #[test]
    fn subdivision_keeps_lambda() {
        let f = rose_map(&["ab", "ba"]);
        let (g, _) = subdivide(&f, 0, 1).unwrap();
        g.check().unwrap();
        assert!((stretch_factor(&g).unwrap() - 2.0).abs() < 1e-12);
        let back = normalize(&g).unwrap();
        assert_eq!(back.domain.edges.len(), 2);
        assert!((stretch_factor(&back).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn fold_on_psi() {
        let f = rose_map(&["a", "abab"]);
        let before = stretch_factor(&f).unwrap();
        let (g, rec) = apply_move(&f, &Move::Fold { a: Dir::fwd(0), b: Dir::fwd(1) }).unwrap();
        g.check().unwrap();
        assert!(rec.lambda_after <= before + 1e-9);
    }

    #[test]
    fn track_driver() {
        let f = rose_map(&["ab", "ba"]);
        let out = make_train_track(&f, 100).unwrap();
        assert!(out.is_track());
        assert_eq!(out.map(), &f);
        let g = rose_map(&["a", "abab"]);
        let out = make_train_track(&g, 1000).unwrap();
        assert!(out.is_track(), "{:?}", out.trace());
        assert!(stretch_factor(out.map()).unwrap() <= stretch_factor(&g).unwrap() + 1e-9);
        assert!(iterates_immersed(out.map(), 8, 1 << 20).is_ok());
    }

    #[test]
    fn tarjan_components() {
        let a = TransitionMatrix::from_rows(vec![vec![1, 0, 0], vec![1, 1, 1], vec![0, 1, 1]]);
        assert_eq!(a.components(), vec![vec![0], vec![1, 2]]);
    }
}
