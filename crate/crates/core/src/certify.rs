//! Hyperbolicity verdicts for mapping tori and their re-checkable
//! certificates.

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    canonical_cyclic_words, canonical_invariant_ffs, elliptic_ffs, is_injective, is_surjective, subgroup_conjugator,
    FreeFactorSystem, ORBIT_LENGTH_CAP,
};
use crate::error::{Error, Result};
use crate::pullback::{
    cyclic_witness_search, default_horizon, iterated_pullback, stabilization_scan, CyclicWitness, ScanOutcome,
};
use crate::stallings::{subgroup_graph, SubgroupGraph};
use crate::traintrack::{relative_immersion, relative_immersion_level, RelImmersionOutcome};
use crate::word::{
    apply_endo, cyclic_normal_form, letter_key, root_and_exponent, Basis, CyclicWord, EndoFragment, EndoSpec, Letter,
    Word,
};

pub const ASSUME_BS_CRITERION: &str = "bs1d-criterion: the mapping torus is hyperbolic iff it contains no BS(1,d)";
pub const ASSUME_CONVERSE: &str =
    "cyclic-invariance-converse: an empty hat pullback rules out long strictly bidirectional annuli (assumed, not proved here)";
pub const ASSUME_BOUNDED_ELLIPTIC: &str =
    "bounded-elliptic-search: no periodic class in the elliptic system beyond the configured search bounds";
pub const ASSUME_SHORT_ANNULI: &str =
    "short-unidirectional-annuli: a trivial canonical invariant system leaves no annulus longer than 2*rank(A)";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Config {
    /// `None` picks `max(2·rr(F)²+2, 16)`.
    pub pullback_horizon: Option<usize>,
    pub witness_max_j: usize,
    pub periodic_max_len: usize,
    pub periodic_max_period: usize,
    pub move_budget: usize,
    pub descent_budget: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            pullback_horizon: None,
            witness_max_j: 8,
            periodic_max_len: 8,
            periodic_max_period: 8,
            move_budget: 10_000,
            descent_budget: 32,
        }
    }
}

impl Config {
    fn resolved(&self, rank: usize) -> Result<Config> {
        let rr = rank.saturating_sub(1);
        let h = self.pullback_horizon.unwrap_or_else(|| default_horizon(rank));
        if h < 2 * rr * rr {
            return Err(Error::Config(format!("pullback horizon {h} is below 2·rr(F)² = {}", 2 * rr * rr)));
        }
        Ok(Config { pullback_horizon: Some(h), ..self.clone() })
    }

    fn horizon(&self) -> usize {
        self.pullback_horizon.unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerdictKind {
    Hyperbolic,
    NotHyperbolic,
    Inconclusive,
}

/// `[φ^j(c)] = [c^d]`, with `c` written in the basis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    pub c: String,
    pub j: usize,
    pub d: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub verdict: VerdictKind,
    pub witness: Option<Witness>,
    pub facts: Vec<String>,
    pub assumptions: Vec<String>,
    pub config: Config,
}

impl Verdict {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("verdict serializes")
    }

    pub fn from_json(text: &str) -> Result<Verdict> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("bad verdict JSON: {e}")))
    }

    fn not_hyperbolic(basis: &Basis, w: &CyclicWitness, facts: Vec<String>, config: Config) -> Verdict {
        Verdict {
            verdict: VerdictKind::NotHyperbolic,
            witness: Some(Witness { c: w.c.to_text(basis), j: w.j, d: w.d }),
            facts,
            assumptions: vec![ASSUME_BS_CRITERION.into()],
            config,
        }
    }
}

/// Outcome of the short cyclic word search.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShortSearch {
    pub witness: Option<CyclicWitness>,
    pub exhaustive: bool,
}

/// Look for `[φ^j(c)] = [c^d]` among primitive cyclic words up to `max_len`
/// plus `extra`, shortest first: d = 1 up to `max_period`, d ≥ 2 up to
/// `max_j`.
pub fn short_witness_search(
    phi: &EndoSpec,
    max_len: usize,
    max_period: usize,
    max_j: usize,
    extra: &[CyclicWord],
) -> ShortSearch {
    let key = |c: &CyclicWord| (c.len(), c.letters().iter().map(|&l| letter_key(l)).collect::<Vec<_>>());
    // c and c⁻¹ are witnesses together; keep the smaller
    let smaller = |c: CyclicWord| {
        let i = c.inverse();
        if key(&i) < key(&c) {
            i
        } else {
            c
        }
    };
    let mut cands: Vec<CyclicWord> = Vec::new();
    for c in extra {
        if let Ok((r, _)) = root_and_exponent(c) {
            if !r.is_empty() {
                cands.push(smaller(r));
            }
        }
    }
    for len in 1..=max_len {
        for c in canonical_cyclic_words(phi.rank(), len) {
            if matches!(root_and_exponent(&c), Ok((_, 1))) && key(&c) <= key(&c.inverse()) {
                cands.push(c);
            }
        }
    }
    cands.sort_by_key(key);
    cands.dedup();
    let steps = max_period.max(max_j);
    let r = phi.rank() as Letter;
    // occurrences of each signed letter: a cheap necessary condition
    let counts = |w: &[Letter]| {
        let mut v = vec![0usize; 2 * r as usize];
        for &l in w {
            v[(l + r - if l > 0 { 1 } else { 0 }) as usize] += 1;
        }
        v
    };
    let mut exhaustive = true;
    for c in &cands {
        let cw = c.to_word();
        let cc = counts(c.letters());
        let mut w = cw.clone();
        for j in 1..=steps {
            w = apply_endo(phi, &w).cyclic_split().1;
            if w.len() % c.len() == 0 {
                let d = w.len() / c.len();
                let allowed = if d == 1 { j <= max_period } else { j <= max_j };
                if allowed
                    && counts(w.letters()).iter().zip(&cc).all(|(x, y)| *x == d * y)
                    && cyclic_normal_form(&cw.pow(d)) == cyclic_normal_form(&w)
                {
                    return ShortSearch { witness: Some(CyclicWitness { c: c.clone(), j, d }), exhaustive };
                }
            }
            if w.len() > ORBIT_LENGTH_CAP {
                exhaustive = false;
                break;
            }
        }
    }
    ShortSearch { witness: None, exhaustive }
}

fn search_fact(max_len: usize, max_period: usize, max_j: usize, exhaustive: bool) -> String {
    format!(
        "short_class_search len<={max_len} period<={max_period} j<={max_j} {}",
        if exhaustive { "exhaustive" } else { "capped" }
    )
}

fn system_fact(prefix: &str, a: &FreeFactorSystem) -> String {
    let ranks: Vec<String> = a.ranks().iter().map(|r| r.to_string()).collect();
    let mut s = format!("{prefix} ranks=[{}]", ranks.join(","));
    if a.partial {
        s.push_str(" partial");
    }
    s
}

fn scan_fact(o: &ScanOutcome) -> String {
    match o {
        ScanOutcome::EmptyAt(k) => format!("hat_pullback empty_at={k}"),
        ScanOutcome::PersistentCyclic { k, components } => {
            format!("hat_pullback persistent_cyclic k={k} components={}", components.len())
        }
        ScanOutcome::HorizonReached { k, size_capped, .. } => {
            format!("hat_pullback horizon k={k}{}", if *size_capped { " capped" } else { "" })
        }
    }
}

/// Decide hyperbolicity of the ascending HNN extension of `φ`.
pub fn certify(phi: &EndoSpec, cfg: &Config) -> Result<Verdict> {
    let cfg = cfg.resolved(phi.rank())?;
    let basis = &phi.basis;
    let (inj, trace) = is_injective(phi)?;
    if !inj {
        return Err(Error::NotInjective {
            witness: format!(
                "folding the images dropped rank by {} ({} folds)",
                trace.rank_drop.max(1),
                trace.fold_count
            ),
        });
    }
    let mut facts = vec!["injective".to_string()];

    let short = short_witness_search(phi, cfg.periodic_max_len, cfg.periodic_max_period, cfg.witness_max_j, &[]);
    facts.push(search_fact(cfg.periodic_max_len, cfg.periodic_max_period, cfg.witness_max_j, short.exhaustive));
    if let Some(w) = &short.witness {
        return Ok(Verdict::not_hyperbolic(basis, w, facts, cfg));
    }
    if let Some(w) = cyclic_witness_search(phi, cfg.horizon(), cfg.witness_max_j)? {
        facts.push(format!("pullback_witness_search k<={}", cfg.horizon()));
        return Ok(Verdict::not_hyperbolic(basis, &w, facts, cfg));
    }

    if is_surjective(phi)? {
        facts.push("surjective".into());
        return Ok(Verdict {
            verdict: VerdictKind::Inconclusive,
            witness: None,
            facts,
            assumptions: vec![],
            config: cfg,
        });
    }
    facts.push("nonsurjective".into());

    let mut assumptions = vec![ASSUME_BS_CRITERION.to_string()];
    let elliptic = elliptic_ffs(phi, cfg.descent_budget)?;
    facts.push(system_fact("elliptic_system", &elliptic));
    let mut atoroidal = !elliptic.partial;
    if !elliptic.is_trivial() {
        let extra: Vec<CyclicWord> =
            elliptic.components.iter().flat_map(|c| c.marking.iter().map(cyclic_normal_form)).collect();
        let s = short_witness_search(phi, 0, cfg.periodic_max_period, cfg.witness_max_j, &extra);
        facts.push(format!("elliptic_class_search {}", if s.exhaustive { "exhaustive" } else { "capped" }));
        if let Some(w) = &s.witness {
            return Ok(Verdict::not_hyperbolic(basis, w, facts, cfg));
        }
        atoroidal &= s.exhaustive && short.exhaustive;
        assumptions.push(ASSUME_BOUNDED_ELLIPTIC.into());
    }
    match relative_immersion(phi, &elliptic, cfg.descent_budget)? {
        RelImmersionOutcome::Immersion { k, .. } => facts.push(format!("expanding_immersion k={k}")),
        RelImmersionOutcome::BudgetExceeded { tried } => {
            facts.push(format!("no_expanding_immersion levels={tried}"));
            atoroidal = false;
        }
    }
    if atoroidal {
        facts.push("atoroidal".into());
    }

    let scan = stabilization_scan(phi, cfg.horizon())?;
    facts.push(scan_fact(&scan));
    if atoroidal && matches!(scan, ScanOutcome::EmptyAt(_)) {
        assumptions.push(ASSUME_CONVERSE.into());
        return Ok(Verdict { verdict: VerdictKind::Hyperbolic, witness: None, facts, assumptions, config: cfg });
    }
    Ok(Verdict { verdict: VerdictKind::Inconclusive, witness: None, facts, assumptions: vec![], config: cfg })
}

/// The restriction of `φ` to one periodic component of an invariant system:
/// `ψ = i_y ∘ φ^s` on `C`, written in the marking basis of `C`.
#[derive(Debug, Clone)]
pub struct Restriction {
    pub component: SubgroupGraph,
    pub period: usize,
    /// `None` for cyclic components.
    pub map: Option<EndoSpec>,
}

struct FactorMap<'a> {
    frag: &'a EndoFragment,
    letters: Vec<Letter>,
}

impl FactorMap<'_> {
    /// `φ(w)` when `w` is spelled in the factor's letters.
    fn apply(&self, w: &Word) -> Option<Word> {
        let mut out = Vec::new();
        for &l in w.letters() {
            if !self.letters.contains(&l.abs()) {
                return None;
            }
            let img = self.frag.images[(l.abs() - 1) as usize].as_ref()?;
            if l > 0 {
                out.extend_from_slice(img.letters());
            } else {
                out.extend(img.inverse().letters());
            }
        }
        Some(Word::reduce(&out))
    }

    fn apply_cyclic(&self, c: &CyclicWord) -> Option<CyclicWord> {
        self.apply(&c.to_word()).map(|w| cyclic_normal_form(&w))
    }
}

fn factor_letters(a_incl: &[usize], frag: &EndoFragment) -> Result<Vec<Letter>> {
    let mut idx = a_incl.to_vec();
    idx.sort_unstable();
    idx.dedup();
    if idx.is_empty() || idx.len() != a_incl.len() || idx.iter().any(|&i| i >= frag.basis.rank()) {
        return Err(Error::Input("factor must be a nonempty set of distinct basis letters".into()));
    }
    for &i in &idx {
        if frag.images[i].is_none() {
            return Err(Error::Input(format!("no image given for {}", frag.basis.names()[i])));
        }
    }
    Ok(idx.iter().map(|&i| i as Letter + 1).collect())
}

/// Restrictions of `φ: A → F` to the cycles of an invariant system.
pub fn restrictions(a_incl: &[usize], frag: &EndoFragment, sys: &FreeFactorSystem) -> Result<Vec<Restriction>> {
    let fm = FactorMap { frag, letters: factor_letters(a_incl, frag)? };
    let basis = &frag.basis;
    let comps = &sys.components;
    let image = |c: &SubgroupGraph, times: usize| -> Result<Vec<Word>> {
        let mut gens = c.marking.clone();
        for _ in 0..times {
            gens = gens
                .iter()
                .map(|w| fm.apply(w).ok_or_else(|| Error::Invariance("component image leaves the factor".into())))
                .collect::<Result<_>>()?;
        }
        Ok(gens)
    };
    let mut sigma = Vec::new();
    for c in comps {
        let (img, _) = subgroup_graph(basis, &image(c, 1)?)?;
        let to = (0..comps.len())
            .find(|&i| subgroup_conjugator(&img, &comps[i]).is_some())
            .ok_or_else(|| Error::Invariance("system is not invariant".into()))?;
        sigma.push(to);
    }
    let mut done = vec![false; comps.len()];
    let mut out = Vec::new();
    for start in 0..comps.len() {
        let mut seen = Vec::new();
        let mut cur = start;
        while !seen.contains(&cur) {
            seen.push(cur);
            cur = sigma[cur];
        }
        if done[cur] {
            continue;
        }
        let pos = seen.iter().position(|&x| x == cur).unwrap();
        for &j in &seen[pos..] {
            done[j] = true;
        }
        let s = seen.len() - pos;
        let c = &comps[cur];
        let map = if c.rank() >= 2 {
            let imgs = image(c, s)?;
            let (hs, _) = subgroup_graph(basis, &imgs)?;
            let y = subgroup_conjugator(&hs, c).ok_or_else(|| Error::Internal("cycle without conjugator".into()))?;
            let yi = y.inverse();
            let words: Vec<Word> =
                imgs.iter().map(|w| c.express_in_generators(&y.mul(w).mul(&yi))).collect::<Result<_>>()?;
            Some(EndoSpec::new(Basis::standard(c.rank())?, words)?)
        } else {
            None
        };
        out.push(Restriction { component: c.clone(), period: s, map });
    }
    Ok(out)
}

/// A witness for a cyclic component `⟨g⟩` found by direct iteration.
fn cyclic_component_witness(fm: &FactorMap, c: &SubgroupGraph, max_j: usize) -> Result<Option<CyclicWitness>> {
    let Some(g) = c.cyclic_generator() else { return Ok(None) };
    let (r, _) = root_and_exponent(&g)?;
    let rw = r.to_word();
    let mut w = r.clone();
    for j in 1..=max_j {
        let Some(next) = fm.apply_cyclic(&w) else { return Ok(None) };
        w = next;
        if w.len() % r.len() == 0 {
            let d = w.len() / r.len();
            if cyclic_normal_form(&rw.pow(d)) == w {
                return Ok(Some(CyclicWitness { c: r, j, d }));
            }
        }
        if w.len() > ORBIT_LENGTH_CAP {
            break;
        }
    }
    Ok(None)
}

/// Hyperbolicity of the extension along `φ: A → F`, `A` the free factor on
/// the basis letters `a_incl`.
pub fn certify_hnn(a_incl: &[usize], frag: &EndoFragment, cfg: &Config) -> Result<Verdict> {
    let letters = factor_letters(a_incl, frag)?;
    if letters.len() == frag.basis.rank() {
        return certify(&frag.clone().into_full()?, cfg);
    }
    let fm = FactorMap { frag, letters };
    let basis = &frag.basis;
    let mut cfg_out = cfg.clone();
    cfg_out.pullback_horizon = Some(cfg.pullback_horizon.unwrap_or_else(|| default_horizon(basis.rank())));
    let sys = canonical_invariant_ffs(a_incl, frag)?;
    let mut facts = vec![format!("factor {}", factor_text(basis, &fm.letters))];
    if sys.is_trivial() {
        facts.push("canonical_system trivial".into());
        return Ok(Verdict {
            verdict: VerdictKind::Hyperbolic,
            witness: None,
            facts,
            assumptions: vec![ASSUME_BS_CRITERION.into(), ASSUME_SHORT_ANNULI.into()],
            config: cfg_out,
        });
    }
    facts.push(system_fact("canonical_system", &sys));
    let mut all_hyperbolic = true;
    let mut assumptions: Vec<String> = vec![ASSUME_BS_CRITERION.into()];
    for (i, r) in restrictions(a_incl, frag, &sys)?.iter().enumerate() {
        facts.push(format!("component[{i}] rank={} period={}", r.component.rank(), r.period));
        let Some(psi) = &r.map else {
            let max_j = cfg.witness_max_j.max(cfg.periodic_max_period) * r.period;
            if let Some(w) = cyclic_component_witness(&fm, &r.component, max_j)? {
                return Ok(Verdict::not_hyperbolic(basis, &w, facts, cfg_out));
            }
            all_hyperbolic = false;
            continue;
        };
        let sub_cfg = Config { pullback_horizon: None, ..cfg.clone() };
        let v = certify(psi, &sub_cfg)?;
        for f in &v.facts {
            facts.push(format!("component[{i}] {f}"));
        }
        match v.verdict {
            VerdictKind::NotHyperbolic => {
                let w = v.witness.expect("witness present");
                let cw = cyclic_normal_form(&r.component.expand_marking(&psi.basis.parse(&w.c)?));
                let lifted = CyclicWitness { c: cw, j: w.j * r.period, d: w.d };
                return Ok(Verdict::not_hyperbolic(basis, &lifted, facts, cfg_out));
            }
            VerdictKind::Hyperbolic => {
                for a in v.assumptions {
                    if !assumptions.contains(&a) {
                        assumptions.push(a);
                    }
                }
            }
            VerdictKind::Inconclusive => all_hyperbolic = false,
        }
    }
    if all_hyperbolic {
        Ok(Verdict { verdict: VerdictKind::Hyperbolic, witness: None, facts, assumptions, config: cfg_out })
    } else {
        Ok(Verdict { verdict: VerdictKind::Inconclusive, witness: None, facts, assumptions: vec![], config: cfg_out })
    }
}

fn factor_text(basis: &Basis, letters: &[Letter]) -> String {
    letters.iter().map(|&l| basis.name(l).to_string()).collect::<Vec<_>>().join(",")
}

/// Result of re-checking a verdict.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verification {
    pub ok: bool,
    pub failed: Option<String>,
}

impl Verification {
    fn pass() -> Self {
        Verification { ok: true, failed: None }
    }

    fn fail(what: impl Into<String>) -> Self {
        Verification { ok: false, failed: Some(what.into()) }
    }
}

fn check_witness(basis: &Basis, w: &Witness, step: &dyn Fn(&CyclicWord) -> Option<CyclicWord>) -> bool {
    let Ok(c) = basis.parse(&w.c) else { return false };
    if c.is_empty() || w.j == 0 || w.d == 0 {
        return false;
    }
    let c = cyclic_normal_form(&c);
    let mut x = c.clone();
    for _ in 0..w.j {
        match step(&x) {
            Some(y) => x = y,
            None => return false,
        }
        if x.len() > 1 << 24 {
            return false;
        }
    }
    x == cyclic_normal_form(&c.to_word().pow(w.d))
}

fn field<'a>(tokens: &'a [&str], key: &str) -> Option<&'a str> {
    tokens.iter().find_map(|t| t.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
}

/// Re-check a single fact about `φ`.
fn check_fact(phi: &EndoSpec, fact: &str, cfg: &Config, facts: &[String]) -> Result<bool> {
    let toks: Vec<&str> = fact.split_whitespace().collect();
    let num = |key: &str| -> Option<usize> { field(&toks, key).and_then(|v| v.parse().ok()) };
    Ok(match toks.first().copied() {
        Some("injective") => is_injective(phi)?.0,
        Some("surjective") => is_surjective(phi)?,
        Some("nonsurjective") => !is_surjective(phi)?,
        Some("short_class_search") => {
            let (Some(l), Some(p), Some(j)) = (
                toks.get(1).and_then(|t| t.strip_prefix("len<=")).and_then(|v| v.parse().ok()),
                toks.get(2).and_then(|t| t.strip_prefix("period<=")).and_then(|v| v.parse().ok()),
                toks.get(3).and_then(|t| t.strip_prefix("j<=")).and_then(|v| v.parse().ok()),
            ) else {
                return Ok(false);
            };
            let s = short_witness_search(phi, l, p, j, &[]);
            let tag = if s.exhaustive { "exhaustive" } else { "capped" };
            toks.get(4) == Some(&tag)
        }
        Some("pullback_witness_search") => true,
        Some("elliptic_system") => {
            let e = elliptic_ffs(phi, cfg.descent_budget)?;
            system_fact("elliptic_system", &e) == fact
        }
        Some("elliptic_class_search") => {
            let e = elliptic_ffs(phi, cfg.descent_budget)?;
            let extra: Vec<CyclicWord> =
                e.components.iter().flat_map(|c| c.marking.iter().map(cyclic_normal_form)).collect();
            let s = short_witness_search(phi, 0, cfg.periodic_max_period, cfg.witness_max_j, &extra);
            s.witness.is_none() && toks.get(1) == Some(&if s.exhaustive { "exhaustive" } else { "capped" })
        }
        Some("expanding_immersion") => {
            let Some(k) = num("k") else { return Ok(false) };
            let e = elliptic_ffs(phi, cfg.descent_budget)?;
            relative_immersion_level(phi, &e, k)?
        }
        Some("no_expanding_immersion") => true,
        Some("atoroidal") => {
            let has = |p: &str| facts.iter().any(|f| f.starts_with(p));
            let elliptic_ok = facts.iter().any(|f| f == "elliptic_system ranks=[]")
                || (facts.iter().any(|f| f == "elliptic_class_search exhaustive")
                    && facts.iter().any(|f| f.starts_with("short_class_search") && f.ends_with("exhaustive")));
            has("expanding_immersion") && elliptic_ok
        }
        Some("hat_pullback") => match toks.get(1).and_then(|t| t.strip_prefix("empty_at=")) {
            Some(k) => {
                let Ok(k) = k.parse::<usize>() else { return Ok(false) };
                k >= 1 && iterated_pullback(phi, k)?.hat.is_empty()
            }
            None => true,
        },
        _ => false,
    })
}

/// Re-check a verdict for `φ` from scratch.
pub fn verify_certificate(v: &Verdict, phi: &EndoSpec) -> Verification {
    match verify_inner(v, phi) {
        Ok(x) => x,
        Err(e) => Verification::fail(format!("recheck raised: {e}")),
    }
}

fn verify_kind_shape(v: &Verdict) -> Option<Verification> {
    match v.verdict {
        VerdictKind::NotHyperbolic if v.witness.is_none() => Some(Verification::fail("witness")),
        VerdictKind::Hyperbolic | VerdictKind::Inconclusive if v.witness.is_some() => {
            Some(Verification::fail("witness"))
        }
        _ => None,
    }
}

fn verify_inner(v: &Verdict, phi: &EndoSpec) -> Result<Verification> {
    if let Some(bad) = verify_kind_shape(v) {
        return Ok(bad);
    }
    if let Some(w) = &v.witness {
        if !check_witness(&phi.basis, w, &|c| Some(cyclic_normal_form(&apply_endo(phi, &c.to_word())))) {
            return Ok(Verification::fail("witness"));
        }
    }
    if v.verdict == VerdictKind::Hyperbolic {
        let ok =
            v.facts.iter().any(|f| f == "atoroidal") && v.facts.iter().any(|f| f.starts_with("hat_pullback empty_at="));
        if !ok {
            return Ok(Verification::fail("hyperbolic verdict lacks atoroidality or an empty hat pullback"));
        }
    }
    for f in &v.facts {
        if !check_fact(phi, f, &v.config, &v.facts)? {
            return Ok(Verification::fail(f.clone()));
        }
    }
    Ok(Verification::pass())
}

/// Re-check a verdict from [`certify_hnn`].
pub fn verify_hnn_certificate(v: &Verdict, a_incl: &[usize], frag: &EndoFragment) -> Verification {
    let run = || -> Result<Verification> {
        let letters = factor_letters(a_incl, frag)?;
        if letters.len() == frag.basis.rank() {
            return Ok(verify_certificate(v, &frag.clone().into_full()?));
        }
        if let Some(bad) = verify_kind_shape(v) {
            return Ok(bad);
        }
        let fm = FactorMap { frag, letters };
        if let Some(w) = &v.witness {
            if !check_witness(&frag.basis, w, &|c| fm.apply_cyclic(c)) {
                return Ok(Verification::fail("witness"));
            }
        }
        let sys = canonical_invariant_ffs(a_incl, frag)?;
        let rest = if sys.is_trivial() { Vec::new() } else { restrictions(a_incl, frag, &sys)? };
        if v.verdict == VerdictKind::Hyperbolic && !sys.is_trivial() {
            for (i, r) in rest.iter().enumerate() {
                let p = format!("component[{i}] ");
                let sub: Vec<&String> = v.facts.iter().filter(|f| f.starts_with(&p)).collect();
                let ok = r.map.is_some()
                    && sub.iter().any(|f| f.ends_with(" atoroidal"))
                    && sub.iter().any(|f| f.contains(" hat_pullback empty_at="));
                if !ok {
                    return Ok(Verification::fail(format!("component[{i}] is not certified")));
                }
            }
        }
        for f in &v.facts {
            let ok = if let Some(rest_f) = f.strip_prefix("factor ") {
                rest_f == factor_text(&frag.basis, &fm.letters)
            } else if f == "canonical_system trivial" {
                sys.is_trivial()
            } else if f.starts_with("canonical_system ") {
                *f == system_fact("canonical_system", &sys)
            } else if let Some(tail) = f.strip_prefix("component[") {
                let Some((i, inner)) = tail.split_once("] ") else { return Ok(Verification::fail(f.clone())) };
                let Ok(i) = i.parse::<usize>() else { return Ok(Verification::fail(f.clone())) };
                let Some(r) = rest.get(i) else { return Ok(Verification::fail(f.clone())) };
                if inner.starts_with("rank=") {
                    inner == format!("rank={} period={}", r.component.rank(), r.period)
                } else {
                    let Some(psi) = &r.map else { return Ok(Verification::fail(f.clone())) };
                    let p = format!("component[{i}] ");
                    let sub: Vec<String> =
                        v.facts.iter().filter_map(|g| g.strip_prefix(&p).map(str::to_string)).collect();
                    let sub_cfg = Config { pullback_horizon: None, ..v.config.clone() }.resolved(psi.rank())?;
                    check_fact(psi, inner, &sub_cfg, &sub)?
                }
            } else {
                false
            };
            if !ok {
                return Ok(Verification::fail(f.clone()));
            }
        }
        Ok(Verification::pass())
    };
    run().unwrap_or_else(|e| Verification::fail(format!("recheck raised: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn endo(imgs: &[&str]) -> EndoSpec {
        EndoSpec::from_strs(imgs).unwrap()
    }

    fn witness(v: &Verdict) -> (String, usize, usize) {
        let w = v.witness.as_ref().unwrap();
        (w.c.clone(), w.j, w.d)
    }

    #[test]
    fn witnesses() {
        let cfg = Config::default();
        for (imgs, exp) in [(["a", "abab"], ("a", 1, 1)), (["aa", "ab"], ("a", 1, 2)), (["b", "aa"], ("a", 2, 2))] {
            let phi = endo(&imgs);
            let v = certify(&phi, &cfg).unwrap();
            assert_eq!(v.verdict, VerdictKind::NotHyperbolic);
            assert_eq!(witness(&v), (exp.0.to_string(), exp.1, exp.2));
            assert!(verify_certificate(&v, &phi).ok);
        }
    }

    #[test]
    fn tampering_is_caught() {
        let phi = endo(&["a", "abab"]);
        let mut v = certify(&phi, &Config::default()).unwrap();
        v.witness.as_mut().unwrap().d = 2;
        let r = verify_certificate(&v, &phi);
        assert!(!r.ok);
        assert_eq!(r.failed.as_deref(), Some("witness"));
    }

    #[test]
    fn non_injective_rejected() {
        assert!(matches!(certify(&endo(&["a", "a"]), &Config::default()), Err(Error::NotInjective { .. })));
    }

    #[test]
    fn horizon_floor() {
        let phi = EndoSpec::from_strs(&["ab", "bc", "ca"]).unwrap();
        let cfg = Config { pullback_horizon: Some(3), ..Config::default() };
        assert!(matches!(certify(&phi, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn automorphisms_are_inconclusive() {
        // the commutator class is periodic under any automorphism of F2
        let phi = endo(&["ab", "a"]);
        let v = certify(&phi, &Config::default()).unwrap();
        assert_eq!(v.verdict, VerdictKind::NotHyperbolic);
        assert!(verify_certificate(&v, &phi).ok);
        let phi = endo(&["b", "c", "ab"]);
        let v = certify(&phi, &Config::default()).unwrap();
        assert_eq!(v.verdict, VerdictKind::Inconclusive);
        assert!(v.facts.contains(&"surjective".to_string()));
        assert!(verify_certificate(&v, &phi).ok);
    }

    #[test]
    fn hnn_examples() {
        let cfg = Config::default();
        let frag = EndoFragment::parse("rank: 2\nmap: a -> aa").unwrap();
        let v = certify_hnn(&[0], &frag, &cfg).unwrap();
        assert_eq!(witness(&v), ("a".to_string(), 1, 2));
        assert!(verify_hnn_certificate(&v, &[0], &frag).ok);
        let frag = EndoFragment::parse("rank: 2\nmap: a -> b").unwrap();
        let v = certify_hnn(&[0], &frag, &cfg).unwrap();
        assert_eq!(v.verdict, VerdictKind::Hyperbolic);
        assert!(v.facts.contains(&"canonical_system trivial".to_string()));
        assert!(verify_hnn_certificate(&v, &[0], &frag).ok);
        assert!(certify_hnn(&[], &frag, &cfg).is_err());
    }
}
