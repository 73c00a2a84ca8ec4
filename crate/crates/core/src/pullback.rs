//! Fibered products of Stallings graphs and iterated pullbacks of an
//! endomorphism's image with itself.

use std::collections::{HashMap, VecDeque};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{Edge, LabeledGraph};
use crate::graphmap::iterated_stallings_opts;
use crate::stallings::{fold_paths, SubgroupGraph};
use crate::word::{apply_endo, cyclic_normal_form, root_and_exponent, CyclicWord, EndoSpec, Word};

/// Stop scanning once `S[φ^k(F)]` would have more edges than this.
pub const DEFAULT_SIZE_CAP: usize = 1 << 21;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PullbackComponent {
    /// Core of the component, based at its anchor.
    pub graph: LabeledGraph,
    /// Anchor vertex pair in the two factors.
    pub anchor: (usize, usize),
    pub coset_rep: Word,
    pub rank: usize,
    pub cyclic_generator: Option<CyclicWord>,
}

#[derive(Debug, Clone)]
pub struct IteratedPullback {
    pub k: usize,
    pub components: Vec<PullbackComponent>,
    /// Indices into `components` with coset representative outside φ(F).
    pub hat: Vec<usize>,
    pub rr: usize,
}

impl IteratedPullback {
    pub fn hat_components(&self) -> impl Iterator<Item = &PullbackComponent> {
        self.hat.iter().map(|&i| &self.components[i])
    }

    pub fn to_json(&self, basis: &crate::word::Basis) -> serde_json::Value {
        #[derive(Serialize)]
        struct C {
            rank: usize,
            coset_rep: String,
            cyclic: Option<String>,
            hat: bool,
        }
        let comps: Vec<C> = self
            .components
            .iter()
            .enumerate()
            .map(|(i, c)| C {
                rank: c.rank,
                coset_rep: c.coset_rep.to_text(basis),
                cyclic: c.cyclic_generator.as_ref().map(|g| g.to_text(basis)),
                hat: self.hat.contains(&i),
            })
            .collect();
        serde_json::json!({ "k": self.k, "components": comps, "rr": self.rr })
    }
}

/// Reduced rank Σ(rank − 1).
pub fn reduced_rank(comps: &[PullbackComponent]) -> usize {
    comps.iter().map(|c| c.rank - 1).sum()
}

/// Give up on a fibered product after exploring this many states.
pub const DEFAULT_STATE_CAP: usize = 1 << 22;

/// All non-contractible components of the fibered product `s1 × s2`.
pub fn fibered_product(s1: &SubgroupGraph, s2: &SubgroupGraph) -> Result<Vec<PullbackComponent>> {
    fibered_product_capped(s1, s2, usize::MAX)?
        .ok_or_else(|| Error::Internal("unbounded fibered product hit its cap".into()))
}

/// As [`fibered_product`], returning `None` once more than `cap` states
/// have been explored.
pub fn fibered_product_capped(
    s1: &SubgroupGraph,
    s2: &SubgroupGraph,
    cap: usize,
) -> Result<Option<Vec<PullbackComponent>>> {
    if s1.basis != s2.basis {
        return Err(Error::Input("fibered product of graphs over different bases".into()));
    }
    let (g1, g2) = (&s1.graph, &s2.graph);
    let (i1, i2) = (s1.index(), s2.index());
    // every immersed loop in a graph of rank ≥ 2 passes a vertex of valence ≥ 3
    let val = g1.valences();
    let mut starts: Vec<usize> = (0..g1.num_vertices).filter(|&v| val[v] >= 3).collect();
    if starts.is_empty() {
        starts = (0..g1.num_vertices).collect();
    }
    let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
    let mut out = Vec::new();
    for &p in &starts {
        for q in 0..g2.num_vertices {
            if seen.contains_key(&(p, q)) {
                continue;
            }
            // explore one component
            let mut states: Vec<(usize, usize)> = vec![(p, q)];
            let mut local: HashMap<(usize, usize), usize> = HashMap::from([((p, q), 0)]);
            seen.insert((p, q), 0);
            let mut edges = Vec::new();
            let mut queue = VecDeque::from([0usize]);
            while let Some(s) = queue.pop_front() {
                let (a, b) = states[s];
                for (&l, &d1) in &i1[a] {
                    let Some(&d2) = i2[b].get(&l) else { continue };
                    let next = (g1.terminus(d1), g2.terminus(d2));
                    let t = match local.get(&next) {
                        Some(&t) => t,
                        None => {
                            if seen.len() >= cap {
                                return Ok(None);
                            }
                            let t = states.len();
                            states.push(next);
                            local.insert(next, t);
                            seen.insert(next, 0);
                            queue.push_back(t);
                            t
                        }
                    };
                    if l > 0 {
                        edges.push(Edge { from: s, to: t, label: l });
                    }
                }
            }
            let g = LabeledGraph::new(states.len(), edges, None);
            if g.edges.len() < g.num_vertices {
                continue;
            }
            let (core_edges, alive) = g.core_parts(false);
            if core_edges.is_empty() {
                continue;
            }
            let anchor_local = (0..states.len()).filter(|&v| alive[v]).min_by_key(|&v| states[v]).unwrap();
            let (mut core, vmap) = g.edge_subgraph(&core_edges);
            core.basepoint = vmap[anchor_local];
            let rank = core.edges.len() + 1 - core.num_vertices;
            let anchor = states[anchor_local];
            let coset_rep = s1.tree_word(anchor.0).mul(&s2.tree_word(anchor.1).inverse());
            let cyclic_generator = (rank == 1).then(|| circle_word(&core));
            out.push(PullbackComponent { graph: core, anchor, coset_rep, rank, cyclic_generator });
        }
    }
    out.sort_by_key(|c| c.anchor);
    Ok(Some(out))
}

fn circle_word(c: &LabeledGraph) -> CyclicWord {
    let start = c.basepoint.unwrap_or(0);
    let dirs = c.directions();
    let mut cur = dirs[start][0];
    let mut letters = vec![c.dir_label(cur)];
    loop {
        let v = c.terminus(cur);
        if v == start {
            break;
        }
        cur = dirs[v].iter().copied().find(|d| *d != cur.rev()).unwrap();
        letters.push(c.dir_label(cur));
    }
    cyclic_normal_form(&Word::reduce(&letters))
}

/// Whether `g` and `h` lie in the same double coset `H₁ g H₂`.
pub fn same_double_coset(s1: &SubgroupGraph, s2: &SubgroupGraph, g: &Word, h: &Word) -> bool {
    let (folded, ends) = fold_paths(&s1.graph, s1.basepoint(), &s2.graph, s2.basepoint(), g);
    let idx = folded.label_index();
    matches!(folded.read(&idx, ends.0, h.letters()), Some((v, _)) if v == ends.1)
}

/// `Λ_k`: the fibered product of `S[φ^k(F)]` with itself.
pub fn iterated_pullback(phi: &EndoSpec, k: usize) -> Result<IteratedPullback> {
    if k == 0 {
        return Err(Error::Precondition("iterated pullbacks start at k = 1".into()));
    }
    let s = iterated_stallings_opts(phi, k, false)?;
    let image = if k == 1 { s.clone() } else { iterated_stallings_opts(phi, 1, false)? };
    pullback_of(&s, &image, k, usize::MAX)?
        .ok_or_else(|| Error::Internal("unbounded fibered product hit its cap".into()))
}

fn pullback_of(s: &SubgroupGraph, image: &SubgroupGraph, k: usize, cap: usize) -> Result<Option<IteratedPullback>> {
    let Some(components) = fibered_product_capped(s, s, cap)? else { return Ok(None) };
    let hat = (0..components.len()).filter(|&i| !image.contains(&components[i].coset_rep)).collect();
    let rr = reduced_rank(&components);
    Ok(Some(IteratedPullback { k, components, hat, rr }))
}

#[derive(Debug, Clone)]
pub enum ScanOutcome {
    EmptyAt(usize),
    PersistentCyclic { k: usize, components: Vec<PullbackComponent> },
    HorizonReached { k: usize, hat_ranks: Vec<usize>, size_capped: bool },
}

/// Default pullback horizon for rank `n`.
pub fn default_horizon(rank: usize) -> usize {
    let rr = rank - 1;
    (2 * rr * rr + 2).max(16)
}

pub fn stabilization_scan(phi: &EndoSpec, horizon: usize) -> Result<ScanOutcome> {
    stabilization_scan_capped(phi, horizon, DEFAULT_SIZE_CAP)
}

/// Compute `Λ̂_k` for k = 1, 2, … until it is empty or the horizon is hit.
/// Stops early (flagged) when the Stallings graph would exceed `size_cap`
/// edges.
pub fn stabilization_scan_capped(phi: &EndoSpec, horizon: usize, size_cap: usize) -> Result<ScanOutcome> {
    let rr = phi.rank() - 1;
    let k0 = 2 * rr * rr;
    if horizon < k0 {
        return Err(Error::Config(format!("pullback horizon {horizon} is below the cyclicity threshold {k0}")));
    }
    let image = iterated_stallings_opts(phi, 1, false)?;
    let mut images = phi.images.clone();
    let mut last: Option<IteratedPullback> = None;
    for k in 1..=horizon {
        if k > 1 {
            images = images.iter().map(|w| apply_endo(phi, w)).collect();
        }
        let total: usize = images.iter().map(Word::len).sum();
        if total > size_cap {
            let hat_ranks = last.map(|p| p.hat_components().map(|c| c.rank).collect()).unwrap_or_default();
            return Ok(ScanOutcome::HorizonReached { k: k - 1, hat_ranks, size_capped: true });
        }
        let pk = EndoSpec::new(phi.basis.clone(), images.clone())?;
        let s = iterated_stallings_opts(&pk, 1, false)?;
        let Some(p) = pullback_of(&s, &image, k, DEFAULT_STATE_CAP)? else {
            let hat_ranks = last.map(|p| p.hat_components().map(|c| c.rank).collect()).unwrap_or_default();
            return Ok(ScanOutcome::HorizonReached { k: k - 1, hat_ranks, size_capped: true });
        };
        if p.hat.is_empty() {
            return Ok(ScanOutcome::EmptyAt(k));
        }
        if k >= k0 && p.hat_components().any(|c| c.rank != 1) {
            return Err(Error::Internal(format!("non-cyclic hat component at k = {k} ≥ {k0}")));
        }
        last = Some(p);
    }
    let p = last.unwrap();
    if p.hat_components().all(|c| c.rank == 1) {
        let components = p.hat_components().cloned().collect();
        Ok(ScanOutcome::PersistentCyclic { k: horizon, components })
    } else {
        let hat_ranks = p.hat_components().map(|c| c.rank).collect();
        Ok(ScanOutcome::HorizonReached { k: horizon, hat_ranks, size_capped: false })
    }
}

/// A class with `[φ^j(c)] = [c^d]`, d ≥ 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CyclicWitness {
    pub c: CyclicWord,
    pub j: usize,
    pub d: usize,
}

/// Test `[φ^j(r)] = [r^d]` for j ≤ max_j with d read off the length ratio.
pub fn witness_for_root(phi: &EndoSpec, r: &CyclicWord, max_j: usize, min_d: usize) -> Option<CyclicWitness> {
    if r.is_empty() {
        return None;
    }
    let rw = r.to_word();
    let mut w = rw.clone();
    for j in 1..=max_j {
        w = apply_endo(phi, &w);
        let c = cyclic_normal_form(&w);
        if c.len() % r.len() == 0 {
            let d = c.len() / r.len();
            if d >= min_d && cyclic_normal_form(&rw.pow(d)) == c {
                return Some(CyclicWitness { c: r.clone(), j, d });
            }
        }
        if c.len() > 1 << 20 {
            return None;
        }
    }
    None
}

/// Search the cyclic generators of `Λ̂_k` (k ≤ max_k) and their roots.
pub fn cyclic_witness_search(phi: &EndoSpec, max_k: usize, max_j: usize) -> Result<Option<CyclicWitness>> {
    let image = iterated_stallings_opts(phi, 1, false)?;
    let mut images = phi.images.clone();
    for k in 1..=max_k {
        if k > 1 {
            images = images.iter().map(|w| apply_endo(phi, w)).collect();
        }
        if images.iter().map(Word::len).sum::<usize>() > DEFAULT_SIZE_CAP {
            break;
        }
        let pk = EndoSpec::new(phi.basis.clone(), images.clone())?;
        let s = iterated_stallings_opts(&pk, 1, false)?;
        let Some(p) = pullback_of(&s, &image, k, DEFAULT_STATE_CAP)? else { break };
        for c in p.hat_components() {
            if let Some(g) = &c.cyclic_generator {
                let (r, _) = root_and_exponent(g)?;
                if let Some(w) = witness_for_root(phi, &r, max_j, 2) {
                    return Ok(Some(w));
                }
            }
        }
        if p.hat.is_empty() {
            break;
        }
    }
    Ok(None)
}
