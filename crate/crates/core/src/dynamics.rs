//! Injectivity, backward iteration, fixed and elliptic free factor systems.

use std::collections::HashSet;

use serde_json::json;

use crate::error::{Error, Result};
use crate::graph::{reverse_path, LabeledGraph};
use crate::graphmap::{homotopy_lift, iterated_stallings, GraphMap};
use crate::pullback::fibered_product;
use crate::stallings::{subgroup_graph, subgroup_graph_opts, FoldTrace, SubgroupGraph};
use crate::word::{apply_endo, cyclic_normal_form, Basis, CyclicWord, EndoFragment, EndoSpec, Letter, Word};

/// Give up descending once a Stallings graph has more edges than this.
pub const DESCENT_GRAPH_CAP: usize = 400_000;

/// Subgraphs of `S[φ^k(F)]` realizing a system.
#[derive(Debug, Clone)]
pub struct Realization {
    pub k: usize,
    pub graph: LabeledGraph,
    /// Edge ids of each component's subgraph.
    pub subgraphs: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct FreeFactorSystem {
    pub basis: Basis,
    /// One based subgroup per conjugacy class.
    pub components: Vec<SubgroupGraph>,
    pub realization: Option<Realization>,
    /// The computation ran out of budget; the system may be too small.
    pub partial: bool,
}

impl FreeFactorSystem {
    pub fn trivial(basis: &Basis) -> Self {
        FreeFactorSystem { basis: basis.clone(), components: Vec::new(), realization: None, partial: false }
    }

    pub fn full(basis: &Basis) -> Result<Self> {
        let gens: Vec<Word> = (1..=basis.rank() as Letter).map(Word::letter).collect();
        Self::from_generators(basis, &[gens])
    }

    /// Components generated by the given words, one list per component.
    pub fn from_generators(basis: &Basis, gens: &[Vec<Word>]) -> Result<Self> {
        let mut comps = Vec::new();
        for g in gens {
            let (s, _) = subgroup_graph(basis, g)?;
            if s.rank() > 0 {
                comps.push(s);
            }
        }
        let mut out =
            FreeFactorSystem { basis: basis.clone(), components: Vec::new(), realization: None, partial: false };
        for c in comps {
            out.push_unique(c);
        }
        Ok(out)
    }

    fn push_unique(&mut self, c: SubgroupGraph) {
        if c.rank() == 0 {
            return;
        }
        if !self.components.iter().any(|d| same_class(d, &c)) {
            self.components.push(c);
        }
    }

    pub fn is_trivial(&self) -> bool {
        self.components.is_empty()
    }

    /// Same components up to conjugacy.
    pub fn equivalent(&self, other: &FreeFactorSystem) -> bool {
        self.components.len() == other.components.len()
            && self.components.iter().all(|c| other.components.iter().any(|d| same_class(c, d)))
    }

    /// Some component contains a conjugate of `c`.
    pub fn carries(&self, c: &CyclicWord) -> bool {
        c.is_empty() || self.components.iter().any(|s| s.conjugate_into(c).is_some())
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.components.iter().map(SubgroupGraph::rank).collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let comps: Vec<serde_json::Value> = self
            .components
            .iter()
            .map(|c| {
                json!({
                    "rank": c.rank(),
                    "generators": c.marking.iter().map(|w| w.to_text(&self.basis)).collect::<Vec<_>>(),
                    "core": serde_json::from_str::<serde_json::Value>(&c.free_core().to_json(&self.basis)).unwrap(),
                })
            })
            .collect();
        let real = self.realization.as_ref().map(|r| {
            json!({
                "k": r.k,
                "graph": serde_json::from_str::<serde_json::Value>(&r.graph.to_json(&self.basis)).unwrap(),
                "subgraphs": r.subgraphs,
            })
        });
        json!({ "components": comps, "realization": real, "partial": self.partial })
    }

    pub fn describe(&self) -> String {
        if self.components.is_empty() {
            return "{}".into();
        }
        let parts: Vec<String> = self
            .components
            .iter()
            .map(|c| format!("<{}>", c.marking.iter().map(|w| w.to_text(&self.basis)).collect::<Vec<_>>().join(",")))
            .collect();
        format!("{{{}}}", parts.join(", "))
    }
}

/// Conjugacy of subgroups: isomorphic free cores.
pub fn same_class(a: &SubgroupGraph, b: &SubgroupGraph) -> bool {
    let (ca, cb) = (a.free_core(), b.free_core());
    ca.isomorphic(&cb, false).unwrap_or(false)
}

/// A word `y` with `y·small·y⁻¹ ≤ big`, if one exists.
pub fn subgroup_conjugator(small: &SubgroupGraph, big: &SubgroupGraph) -> Option<Word> {
    let g = &small.graph;
    let (core_edges, alive) = g.core_parts(false);
    if core_edges.is_empty() {
        return Some(Word::empty());
    }
    let c = (0..g.num_vertices).find(|&v| alive[v])?;
    let (core, vmap) = g.edge_subgraph(&core_edges);
    let u = small.tree_word(c);
    for t in 0..big.graph.num_vertices {
        if core.map_into(&big.graph, big.index(), vmap[c].unwrap(), t).is_some() {
            return Some(big.tree_word(t).mul(&u.inverse()));
        }
    }
    None
}

/// Loops generating π₁ of a connected graph at `base`, as label words.
pub(crate) fn loop_words(g: &LabeledGraph, base: usize) -> Vec<Word> {
    let (paths, tree) = g.spanning_tree(base);
    let mut out = Vec::new();
    for (i, is_tree) in tree.iter().enumerate() {
        if *is_tree {
            continue;
        }
        let e = g.edges[i];
        let (Some(p), Some(q)) = (&paths[e.from], &paths[e.to]) else { continue };
        let mut w = g.path_label(p);
        w.push(e.label);
        w.extend(g.path_label(&reverse_path(q)));
        out.push(Word::reduce(&w));
    }
    out
}

pub fn is_injective(phi: &EndoSpec) -> Result<(bool, FoldTrace)> {
    let (s, trace) = subgroup_graph_opts(&phi.basis, &phi.images, false)?;
    Ok((!trace.collapse_occurred && s.rank() == phi.rank(), trace))
}

pub fn is_surjective(phi: &EndoSpec) -> Result<bool> {
    let (s, _) = subgroup_graph_opts(&phi.basis, &phi.images, false)?;
    Ok(s.graph.num_vertices == 1 && s.graph.edges.len() == phi.rank())
}

fn require_injective(phi: &EndoSpec) -> Result<()> {
    let (ok, trace) = is_injective(phi)?;
    if !ok {
        return Err(Error::NotInjective {
            witness: format!(
                "folding the images dropped rank by {} ({} folds)",
                trace.rank_drop.max(1),
                trace.fold_count
            ),
        });
    }
    Ok(())
}

/// `[g]` with `[φ(g)] = [c]`, when it exists.
pub fn preimage_class(phi: &EndoSpec, c: &CyclicWord) -> Result<Option<CyclicWord>> {
    let s = iterated_stallings(phi, 1)?;
    preimage_class_in(&s, c)
}

fn preimage_class_in(s: &SubgroupGraph, c: &CyclicWord) -> Result<Option<CyclicWord>> {
    let Some((v, w)) = s.conjugate_into(c) else { return Ok(None) };
    let u = s.tree_word(v);
    let g = u.mul(&w).mul(&u.inverse());
    let pre = s.express_in_defining(&g)?;
    Ok(Some(cyclic_normal_form(&pre)))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TailProbe {
    pub class: CyclicWord,
    pub depth_survived: usize,
    /// `chain[n+1]` maps to a conjugate of `chain[n]`.
    pub preimage_chain: Vec<CyclicWord>,
}

pub fn infinite_tail_probe(phi: &EndoSpec, c: &CyclicWord, depth: usize) -> Result<TailProbe> {
    let s = iterated_stallings(phi, 1)?;
    let mut chain = vec![c.clone()];
    if c.is_empty() {
        return Ok(TailProbe { class: c.clone(), depth_survived: depth, preimage_chain: chain });
    }
    let mut survived = 0;
    for n in 1..=depth {
        match preimage_class_in(&s, chain.last().unwrap())? {
            None => break,
            Some(p) => {
                if chain.contains(&p) {
                    survived = depth;
                    chain.push(p);
                    break;
                }
                chain.push(p);
                survived = n;
            }
        }
    }
    Ok(TailProbe { class: c.clone(), depth_survived: survived, preimage_chain: chain })
}

/// First `(m, n)`, m > n ≥ 1, with `[φ^m(H)] = [φ^n(H)]`.
pub fn eventually_periodic(phi: &EndoSpec, h: &SubgroupGraph, budget: usize) -> Result<Option<(usize, usize)>> {
    let mut gens = h.marking.clone();
    let mut cores: Vec<LabeledGraph> = Vec::new();
    for k in 1..=budget {
        gens = gens.iter().map(|w| apply_endo(phi, w)).collect();
        if gens.iter().map(Word::len).sum::<usize>() > DESCENT_GRAPH_CAP {
            return Ok(None);
        }
        let (s, _) = subgroup_graph_opts(&phi.basis, &gens, false)?;
        let core = s.free_core();
        for (i, c) in cores.iter().enumerate() {
            if c.isomorphic(&core, false)? {
                return Ok(Some((k, i + 1)));
            }
        }
        cores.push(core);
    }
    Ok(None)
}

/// The subgroup carried by a connected subgraph of `s`, pulled back through
/// the marking `F ≅ π₁(s)`.
fn pulled_back_component(s: &SubgroupGraph, edges: &[usize]) -> Result<Vec<Word>> {
    let (sub, vmap) = s.graph.edge_subgraph(edges);
    let old_of: Vec<usize> = {
        let mut o = vec![0; sub.num_vertices];
        for (old, nv) in vmap.iter().enumerate() {
            if let Some(nv) = nv {
                o[*nv] = old;
            }
        }
        o
    };
    let base_local = (0..sub.num_vertices).min_by_key(|&v| old_of[v]).unwrap();
    let u = s.tree_word(old_of[base_local]);
    loop_words(&sub, base_local).iter().map(|l| s.express_in_defining(&u.mul(l).mul(&u.inverse()))).collect()
}

/// Largest fixed free factor system: descent on the long/short natural
/// edge decomposition of `S[φ^k(F)]`, recursing into components that are
/// periodic as conjugacy classes but not fixed.
pub fn max_fixed_ffs(phi: &EndoSpec, budget: usize) -> Result<FreeFactorSystem> {
    require_injective(phi)?;
    let (gens, partial) = descend(phi, budget, 0)?;
    let mut out = FreeFactorSystem::from_generators(&phi.basis, &gens)?;
    out.partial = partial;
    Ok(out)
}

type Gens = Vec<Vec<Word>>;

fn descend(phi: &EndoSpec, budget: usize, depth: usize) -> Result<(Gens, bool)> {
    let basis = &phi.basis;
    if is_surjective(phi)? {
        return Ok((vec![(1..=phi.rank() as Letter).map(Word::letter).collect()], false));
    }
    if depth > 6 {
        return Ok((Vec::new(), true));
    }
    let f = GraphMap::from_endo(phi)?;
    let c = f.cancellation.unwrap_or(0);
    let kbar = f.lipschitz + c;
    let l = (2 * c).max(1);
    let n = 3 * phi.rank() - 3;
    let cutoff = (0..n - 1).fold(l, |acc, _| acc.saturating_mul(kbar));
    for k in 1..=budget {
        let s = iterated_stallings(phi, k)?;
        if s.graph.edges.len() > DESCENT_GRAPH_CAP {
            return Ok((Vec::new(), true));
        }
        let lift = homotopy_lift(&f, &s)?;
        let g = &lift.domain;
        let ns = g.natural_structure()?;
        if !ns.natural_edges.iter().any(|ne| ne.len() > cutoff) {
            continue;
        }
        let mut ne_of = vec![usize::MAX; g.edges.len()];
        for (i, ne) in ns.natural_edges.iter().enumerate() {
            for d in &ne.path {
                ne_of[d.edge] = i;
            }
        }
        let m = ns.natural_edges.len();
        let over: Vec<HashSet<usize>> =
            ns.natural_edges.iter().map(|ne| lift.image(&ne.path).iter().map(|d| ne_of[d.edge]).collect()).collect();
        let mut long: Vec<bool> = ns.natural_edges.iter().map(|ne| ne.len() > cutoff).collect();
        loop {
            let mut changed = false;
            for i in 0..m {
                if !long[i] && over[i].iter().any(|&j| long[j]) {
                    long[i] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        let short_edges: Vec<usize> = (0..g.edges.len()).filter(|&e| !long[ne_of[e]]).collect();
        if short_edges.is_empty() {
            return Ok((Vec::new(), false));
        }
        // edge ids of the lift's domain are those of the core of s
        let (core_edges, _) = s.graph.core_parts(false);
        let to_s = |e: usize| if core_edges.len() == s.graph.edges.len() { e } else { core_edges[e] };
        let (sub, _) = g.edge_subgraph(&short_edges);
        let (sub_core, _) = sub.core_parts(false);
        if sub_core.is_empty() {
            return Ok((Vec::new(), false));
        }
        // group core edges of the short subgraph into components
        let core_set: HashSet<usize> = sub_core.iter().map(|&i| short_edges[i]).collect();
        let mut comps: Vec<Vec<usize>> = Vec::new();
        let mut uf = crate::graph::UnionFind::new(g.num_vertices);
        for &e in &core_set {
            uf.union(g.edges[e].from, g.edges[e].to);
        }
        let mut by_root: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for &e in &core_set {
            by_root.entry(uf.find(g.edges[e].from)).or_default().push(to_s(e));
        }
        for (_, mut es) in by_root {
            es.sort_unstable();
            comps.push(es);
        }
        let mut cand = Vec::new();
        for es in &comps {
            let gens = pulled_back_component(&s, es)?;
            cand.push(subgroup_graph(basis, &gens)?.0);
        }
        return process_candidates(phi, &cand, budget, depth);
    }
    Ok((Vec::new(), true))
}

fn image_subgroup(phi: &EndoSpec, h: &SubgroupGraph, times: usize) -> Result<SubgroupGraph> {
    let mut gens = h.marking.clone();
    for _ in 0..times {
        gens = gens.iter().map(|w| apply_endo(phi, w)).collect();
    }
    Ok(subgroup_graph(&phi.basis, &gens)?.0)
}

fn process_candidates(phi: &EndoSpec, cand: &[SubgroupGraph], budget: usize, depth: usize) -> Result<(Gens, bool)> {
    let n = cand.len();
    let mut partial = false;
    let mut sigma: Vec<Option<usize>> = Vec::with_capacity(n);
    for b in cand {
        let img = image_subgroup(phi, b, 1)?;
        sigma.push((0..n).find(|&i| subgroup_conjugator(&img, &cand[i]).is_some()));
    }
    if sigma.iter().any(Option::is_none) {
        partial = true;
    }
    // cycles of sigma
    let mut on_cycle_done = vec![false; n];
    let mut out: Gens = Vec::new();
    for start in 0..n {
        // walk until a repeat
        let mut seen = Vec::new();
        let mut cur = Some(start);
        while let Some(c) = cur {
            if seen.contains(&c) {
                break;
            }
            seen.push(c);
            cur = sigma[c];
        }
        let Some(c) = cur else { continue };
        let pos = seen.iter().position(|&x| x == c).unwrap();
        let cycle: Vec<usize> = seen[pos..].to_vec();
        if cycle.iter().any(|&j| on_cycle_done[j]) {
            continue;
        }
        for &j in &cycle {
            on_cycle_done[j] = true;
        }
        let s = cycle.len();
        let rep = cycle[0];
        let h = &cand[rep];
        let hs = image_subgroup(phi, h, s)?;
        if same_class(&hs, h) {
            for &j in &cycle {
                out.push(cand[j].marking.clone());
            }
            continue;
        }
        if h.rank() < 2 {
            continue;
        }
        let Some(y) = subgroup_conjugator(&hs, h) else {
            partial = true;
            continue;
        };
        let yi = y.inverse();
        let imgs: Result<Vec<Word>> = h
            .marking
            .iter()
            .map(|m| {
                let mut w = m.clone();
                for _ in 0..s {
                    w = apply_endo(phi, &w);
                }
                h.express_in_generators(&y.mul(&w).mul(&yi))
            })
            .collect();
        let psi = EndoSpec::new(Basis::standard(h.rank())?, imgs?)?;
        let (sub, p) = descend(&psi, budget, depth + 1)?;
        partial |= p;
        for d in sub {
            let in_f: Vec<Word> = d.iter().map(|w| h.expand_marking(w)).collect();
            let mut cur = in_f;
            for _ in 0..s {
                out.push(cur.clone());
                cur = cur.iter().map(|w| apply_endo(phi, w)).collect();
            }
        }
    }
    Ok((out, partial))
}

/// Components of `φ⁻¹·𝒜` for `φ` given by its image graph (tracked) and a
/// rewrite of generator-index words back into the source.
fn preimage_components(
    basis: &Basis,
    image: &SubgroupGraph,
    back: &dyn Fn(&Word) -> Word,
    comps: &[SubgroupGraph],
) -> Result<Vec<Vec<Word>>> {
    let mut out = Vec::new();
    for c in comps {
        for k in fibered_product(image, c)? {
            let base = k.graph.basepoint.unwrap_or(0);
            let u = image.tree_word(k.anchor.0);
            let mut gens = Vec::new();
            for l in loop_words(&k.graph, base) {
                let x = u.mul(&l).mul(&u.inverse());
                gens.push(back(&image.express_in_defining(&x)?));
            }
            let _ = basis;
            out.push(gens);
        }
    }
    Ok(out)
}

/// `φ⁻¹·𝒜`, pulled back through `F ≅ φ(F)`.
pub fn preimage_ffs(phi: &EndoSpec, a: &FreeFactorSystem) -> Result<FreeFactorSystem> {
    require_injective(phi)?;
    let image = iterated_stallings(phi, 1)?;
    let gens = preimage_components(&phi.basis, &image, &|w: &Word| w.clone(), &a.components)?;
    FreeFactorSystem::from_generators(&phi.basis, &gens)
}

/// Backward iteration of the fixed system until it stabilizes.
pub fn elliptic_ffs(phi: &EndoSpec, budget: usize) -> Result<FreeFactorSystem> {
    require_injective(phi)?;
    if is_surjective(phi)? {
        return Err(Error::Precondition("elliptic systems are defined for nonsurjective endomorphisms".into()));
    }
    let mut a = max_fixed_ffs(phi, budget)?;
    let partial = a.partial;
    for _ in 0..budget.max(1) {
        let b = preimage_ffs(phi, &a)?;
        if b.equivalent(&a) {
            a.partial = partial;
            return Ok(a);
        }
        a = b;
    }
    a.partial = true;
    Ok(a)
}

/// Whether every component's image is conjugate into a component.
fn is_invariant(comps: &[SubgroupGraph], image_of: &dyn Fn(&SubgroupGraph) -> Result<SubgroupGraph>) -> Result<bool> {
    for c in comps {
        let img = image_of(c)?;
        if !comps.iter().any(|d| subgroup_conjugator(&img, d).is_some()) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Maximal invariant system of a coordinate free factor `A` (basis indices
/// `a_incl`) under `φ: A → F`.
pub fn canonical_invariant_ffs(a_incl: &[usize], phi: &EndoFragment) -> Result<FreeFactorSystem> {
    let basis = &phi.basis;
    let mut idx = a_incl.to_vec();
    idx.sort_unstable();
    idx.dedup();
    if idx.is_empty() || idx.len() != a_incl.len() || idx.iter().any(|&i| i >= basis.rank()) {
        return Err(Error::Input("factor must be a nonempty set of distinct basis letters".into()));
    }
    let mut images = Vec::new();
    for &i in &idx {
        let w =
            phi.images[i].clone().ok_or_else(|| Error::Input(format!("no image given for {}", basis.names()[i])))?;
        if w.is_empty() {
            return Err(Error::NotInjective { witness: format!("{} maps to the identity", basis.names()[i]) });
        }
        images.push(w);
    }
    let r = idx.len();
    let (image, trace) = subgroup_graph(basis, &images)?;
    if trace.collapse_occurred || image.rank() != r {
        return Err(Error::NotInjective { witness: "folding the images of the factor dropped rank".into() });
    }
    let letters: Vec<Letter> = idx.iter().map(|&i| i as Letter + 1).collect();
    let back = |w: &Word| -> Word {
        Word::reduce(
            &w.letters()
                .iter()
                .map(|&l| if l > 0 { letters[(l - 1) as usize] } else { -letters[(-l - 1) as usize] })
                .collect::<Vec<_>>(),
        )
    };
    let apply = |w: &Word| -> Word {
        let mut out = Vec::new();
        for &l in w.letters() {
            let i = idx.iter().position(|&j| j as Letter + 1 == l.abs()).expect("word outside the factor");
            let img = &images[i];
            if l > 0 {
                out.extend_from_slice(img.letters());
            } else {
                out.extend(img.inverse().letters());
            }
        }
        Word::reduce(&out)
    };
    let image_of = |c: &SubgroupGraph| -> Result<SubgroupGraph> {
        let gens: Vec<Word> = c.marking.iter().map(&apply).collect();
        Ok(subgroup_graph(basis, &gens)?.0)
    };
    let a_gens: Vec<Word> = letters.iter().map(|&l| Word::letter(l)).collect();
    let mut cur = FreeFactorSystem::from_generators(basis, &[a_gens])?;
    for _ in 0..=2 * r {
        if cur.is_trivial() || is_invariant(&cur.components, &image_of)? {
            return Ok(cur);
        }
        let gens = preimage_components(basis, &image, &back, &cur.components)?;
        cur = FreeFactorSystem::from_generators(basis, &gens)?;
    }
    Ok(cur)
}

/// Cyclically reduced words of length `len` in canonical rotation.
pub fn canonical_cyclic_words(rank: usize, len: usize) -> Vec<CyclicWord> {
    let letters: Vec<Letter> = (1..=rank as Letter).flat_map(|l| [l, -l]).collect();
    let mut out = Vec::new();
    let mut w: Vec<Letter> = Vec::with_capacity(len);
    fn go(w: &mut Vec<Letter>, len: usize, letters: &[Letter], out: &mut Vec<CyclicWord>) {
        if w.len() == len {
            if len > 1 && w[0] == -w[len - 1] {
                return;
            }
            let word = Word::from_reduced(w.clone());
            let c = cyclic_normal_form(&word);
            if c.letters() == &w[..] {
                out.push(c);
            }
            return;
        }
        for &l in letters {
            if w.last() == Some(&-l) {
                continue;
            }
            w.push(l);
            go(w, len, letters, out);
            w.pop();
        }
    }
    if len > 0 {
        go(&mut w, len, &letters, &mut out);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeriodicSearch {
    pub witness: Option<(CyclicWord, usize)>,
    /// Every candidate was followed for all periods without hitting the
    /// length cap.
    pub exhaustive: bool,
    pub candidates: usize,
}

/// Orbits are abandoned once their cyclic length passes this.
pub const ORBIT_LENGTH_CAP: usize = 4096;

/// Classes with `[φ^j(c)] = [c]`, j ≤ max_period, among cyclic words up to
/// `max_len` and the generators of `extra` systems.
pub fn periodic_class_search(
    phi: &EndoSpec,
    max_len: usize,
    max_period: usize,
    extra: &[&FreeFactorSystem],
) -> PeriodicSearch {
    let mut cands: Vec<CyclicWord> = Vec::new();
    for sys in extra {
        for c in &sys.components {
            for w in &c.marking {
                let cw = cyclic_normal_form(w);
                if !cw.is_empty() {
                    cands.push(cw);
                }
            }
        }
    }
    for len in 1..=max_len {
        cands.extend(canonical_cyclic_words(phi.rank(), len));
    }
    let mut exhaustive = true;
    for c in &cands {
        let mut w = c.to_word();
        for j in 1..=max_period {
            w = cyclic_normal_form(&apply_endo(phi, &w)).to_word();
            if w.letters() == c.letters() {
                return PeriodicSearch { witness: Some((c.clone(), j)), exhaustive, candidates: cands.len() };
            }
            if w.len() > ORBIT_LENGTH_CAP {
                exhaustive = false;
                break;
            }
        }
    }
    PeriodicSearch { witness: None, exhaustive, candidates: cands.len() }
}
