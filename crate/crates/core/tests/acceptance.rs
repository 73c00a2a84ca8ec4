//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! The report goes straight to stdout, so it shows up in a plain
//! `cargo test` run. The test fails on any FAIL not listed in `KNOWN_GAPS`.

mod common;

use common::*;
use fgend_core::certify::*;
use fgend_core::dynamics::*;
use fgend_core::graphmap::iterated_stallings;
use fgend_core::pullback::*;
use fgend_core::stallings::cancellation_constant;
use fgend_core::traintrack::*;
use fgend_core::word::{apply_endo, cyclic_normal_form};
use fgend_core::*;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria expected to print FAIL, with the reason kept next to the id.
///
/// 3: ψ's growing petal has exact lengths 3·2^k − k − 2, so the successive
/// ratios are 2.375, 2.21, 2.12 for k = 2, 3, 4. The first two fall outside
/// the [1.8, 2.2] band; the exact lengths themselves are checked and pass.
const KNOWN_GAPS: &[u32] = &[3];

/// Frozen petal lengths of S[ψ^k(F)], k = 1..5.
const PSI_PETALS: [usize; 5] = [3, 8, 19, 42, 89];

/// Frozen bar lengths of the barbell S[φ^k(F)] for φ = (a, baB), k = 1..4.
const BARBELL_BARS: [usize; 4] = [1, 3, 7, 15];

/// Frozen verdict for (ab, ba) at the default config.
const AB_BA_FACTS: [&str; 7] = [
    "injective",
    "short_class_search len<=8 period<=8 j<=8 exhaustive",
    "nonsurjective",
    "elliptic_system ranks=[]",
    "expanding_immersion k=0",
    "atoroidal",
    "hat_pullback empty_at=2",
];

struct Outcome {
    ok: bool,
    detail: String,
}

fn pass(detail: impl Into<String>) -> Outcome {
    Outcome { ok: true, detail: detail.into() }
}

fn check(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome { ok, detail: detail.into() }
}

fn endo(imgs: &[&str]) -> EndoSpec {
    EndoSpec::from_strs(imgs).unwrap()
}

fn cw(phi: &EndoSpec, w: &str) -> CyclicWord {
    cyclic_normal_form(&phi.basis.parse(w).unwrap())
}

/// (branch points, natural edge lengths with their labels) of the free core.
fn shape(s: &SubgroupGraph) -> (usize, Vec<(usize, Vec<Letter>, bool)>) {
    let g = s.free_core();
    let ns = g.natural_structure().unwrap();
    let edges = ns
        .natural_edges
        .iter()
        .map(|n| {
            let from = g.origin(n.path[0]);
            let to = g.terminus(*n.path.last().unwrap());
            (n.len(), g.path_label(&n.path), from == to)
        })
        .collect();
    (ns.branch_points.len(), edges)
}

fn c1_ab_ba_roses() -> Outcome {
    let phi = endo(&["ab", "ba"]);
    for k in 1..=5 {
        let (bp, edges) = shape(&iterated_stallings(&phi, k).unwrap());
        if bp != 1 || edges.len() != 2 || edges.iter().any(|e| e.0 != 1 << k) {
            return check(
                false,
                format!("k={k}: {bp} branch points, lengths {:?}", edges.iter().map(|e| e.0).collect::<Vec<_>>()),
            );
        }
    }
    pass("2-petal rose with petals 2^k for k=1..5")
}

fn c2_barbells() -> Outcome {
    let phi = endo(&["a", "baB"]);
    for (i, &bar) in BARBELL_BARS.iter().enumerate() {
        let k = i + 1;
        let (bp, edges) = shape(&iterated_stallings(&phi, k).unwrap());
        let plates: Vec<_> = edges.iter().filter(|e| e.2).collect();
        let bars: Vec<_> = edges.iter().filter(|e| !e.2).collect();
        let plates_ok = plates.len() == 2 && plates.iter().all(|p| p.0 == 1 && p.1[0].abs() == 1);
        let bar_ok = bars.len() == 1 && bars[0].0 == bar && bar == (1 << k) - 1;
        if bp != 2 || !plates_ok || !bar_ok {
            return check(false, format!("k={k}: {edges:?}"));
        }
    }
    pass(format!("barbell with a-plates, bars {BARBELL_BARS:?}"))
}

fn c3_psi_roses() -> Outcome {
    let psi = endo(&["a", "abab"]);
    let mut lens = Vec::new();
    for k in 1..=5 {
        let (bp, edges) = shape(&iterated_stallings(&psi, k).unwrap());
        let a_petal = edges.iter().filter(|e| e.0 == 1 && e.1[0].abs() == 1).count();
        if bp != 1 || edges.len() != 2 || a_petal != 1 {
            return check(false, format!("k={k}: not a rose with an a-petal: {edges:?}"));
        }
        lens.push(edges.iter().map(|e| e.0).max().unwrap());
    }
    assert_eq!(lens, PSI_PETALS, "frozen petal lengths changed");
    let ratios: Vec<f64> = (1..4).map(|i| lens[i + 1] as f64 / lens[i] as f64).collect();
    let increasing = lens.windows(2).all(|w| w[1] > w[0]);
    let band = ratios.iter().all(|r| (1.8..=2.2).contains(r));
    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.3}")).collect();
    check(
        increasing && band,
        format!("l_k = {lens:?} (frozen, match); ratios k=2..4 = [{}] vs band [1.8, 2.2]", shown.join(", ")),
    )
}

fn c4_pullback() -> Outcome {
    let phi = endo(&["ab", "ba"]);
    let p = iterated_pullback(&phi, 1).unwrap();
    let image = iterated_stallings(&phi, 1).unwrap();
    let hats: Vec<_> = p.hat_components().collect();
    let diag = p.components.iter().enumerate().filter(|(i, c)| !p.hat.contains(i) && c.rank == 2).count();
    let ab = cw(&phi, "ab");
    let ba = cw(&phi, "ba");
    let gens_ok = hats.len() == 2
        && hats.iter().all(|c| c.rank == 1)
        && hats.iter().all(|c| c.cyclic_generator.as_ref() == Some(&ab) && c.cyclic_generator.as_ref() == Some(&ba));
    let reps = [phi.basis.parse("b").unwrap(), phi.basis.parse("B").unwrap()];
    let reps_ok =
        reps.iter().all(|r| hats.iter().filter(|c| same_double_coset(&image, &image, &c.coset_rep, r)).count() == 1);
    let ok = p.components.len() == 3 && diag == 1 && gens_ok && reps_ok && p.rr == 1;
    check(ok, format!("{} components, {} diagonal rank 2, {} hat, rr = {}", p.components.len(), diag, hats.len(), p.rr))
}

fn rr_of(rank: usize) -> usize {
    rank.saturating_sub(1)
}

fn c5_neumann() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for rank in [2usize, 3] {
        let basis = Basis::standard(rank).unwrap();
        let mut n = 0;
        while n < 200 {
            let mut gens = || -> Vec<Word> {
                let count = rng.gen_range(1..=3);
                (0..count).map(|_| random_word(&mut rng, rank, 5)).filter(|w| !w.is_empty()).collect()
            };
            let (g1, g2) = (gens(), gens());
            if g1.is_empty() || g2.is_empty() {
                continue;
            }
            n += 1;
            let (h1, _) = subgroup_graph(&basis, &g1).unwrap();
            let (h2, _) = subgroup_graph(&basis, &g2).unwrap();
            let lhs = reduced_rank(&fibered_product(&h1, &h2).unwrap());
            let rhs = 2 * rr_of(h1.rank()) * rr_of(h2.rank());
            if lhs > rhs {
                return check(false, format!("rank {rank}: {g1:?} vs {g2:?} gives {lhs} > {rhs}"));
            }
            if rhs > 0 {
                worst = worst.max(lhs as f64 / rhs as f64);
            }
            checked += 1;
        }
    }
    pass(format!("{checked} pairs, 0 violations, max ratio {worst:.2}"))
}

fn c6_bounded_cancellation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut slack = usize::MAX;
    for _ in 0..100 {
        let rank = rng.gen_range(2..=3);
        let phi = random_injective(&mut rng, rank, 4);
        let f = GraphMap::from_endo(&phi).unwrap();
        let c = cancellation_constant(&f).unwrap();
        let mut n = 0;
        while n < 100 {
            let w = random_word(&mut rng, rank, 12);
            if w.len() < 2 {
                continue;
            }
            n += 1;
            let cut = rng.gen_range(1..w.len());
            let p1 = Word::from_reduced(w.letters()[..cut].to_vec());
            let p2 = Word::from_reduced(w.letters()[cut..].to_vec());
            let whole = apply_endo(&phi, &w).len();
            let parts = apply_endo(&phi, &p1).len() + apply_endo(&phi, &p2).len();
            if whole + 2 * c < parts {
                return check(false, format!("{} on {w:?} at {cut}: {whole} < {parts} - 2*{c}", phi.to_text()));
            }
            slack = slack.min(whole + 2 * c - parts);
        }
    }
    pass(format!("100 maps x 100 splits, 0 violations, min slack {slack}"))
}

fn c7_train_tracks() -> Outcome {
    let fixtures = irreducible_fixtures(7, 100, false);
    let mut tracks = 0;
    for phi in &fixtures {
        let f = GraphMap::from_endo(phi).unwrap();
        let lambda_in = stretch_factor(&f).unwrap();
        let out = make_train_track(&f, DEFAULT_MOVE_BUDGET).unwrap();
        let g = out.map();
        let immersed = iterates_immersed(g, 2 * g.domain.edges.len(), 1 << 22).is_ok();
        let lambda_ok = stretch_factor(g).unwrap() <= lambda_in + 1e-9;
        if !(out.is_track() && is_train_track(g) && immersed && lambda_ok) {
            return check(
                false,
                format!("{}: track={} immersed={immersed} lambda_ok={lambda_ok}", phi.to_text(), out.is_track()),
            );
        }
        tracks += 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut subdivided = 0;
    let mut worst = 0.0f64;
    while subdivided < 50 {
        let f = GraphMap::from_endo(&irreducible_fixture(&mut rng, false)).unwrap();
        let long: Vec<usize> = (0..f.edge_images.len()).filter(|&e| f.edge_images[e].len() >= 2).collect();
        if long.is_empty() {
            continue;
        }
        let e = long[rng.gen_range(0..long.len())];
        let pos = rng.gen_range(1..f.edge_images[e].len());
        let (g, _) = subdivide(&f, e, pos).unwrap();
        let d = (stretch_factor(&f).unwrap() - stretch_factor(&g).unwrap()).abs();
        if d > 2e-12 {
            return check(false, format!("subdivision moved lambda by {d:e}"));
        }
        worst = worst.max(d);
        subdivided += 1;
    }
    pass(format!("{tracks}/100 train tracks; 50 subdivisions, max |dlambda| = {worst:e}"))
}

fn c8_spectral() -> Outcome {
    let r = pf_eigenvalue(&TransitionMatrix::from_rows(vec![vec![1, 1], vec![1, 1]]), DEFAULT_TOL).unwrap();
    let perms = [
        vec![vec![0, 1], vec![1, 0]],
        vec![vec![0, 0, 1], vec![1, 0, 0], vec![0, 1, 0]],
        vec![vec![0, 0, 0, 1], vec![1, 0, 0, 0], vec![0, 1, 0, 0], vec![0, 0, 1, 0]],
    ];
    let exact = perms.into_iter().all(|m| {
        let r = pf_eigenvalue(&TransitionMatrix::from_rows(m), DEFAULT_TOL).unwrap();
        r.is_one_exact && r.lambda == 1.0
    });
    let err = (r.lambda - 2.0).abs();
    check(err <= 1e-12 && exact, format!("|lambda - 2| = {err:e}; permutation matrices exact 1: {exact}"))
}

fn c9_systems() -> Outcome {
    let psi = endo(&["a", "abab"]);
    let bar = endo(&["a", "baB"]);
    let fixed_ok = [&psi, &bar].iter().all(|phi| {
        let a = max_fixed_ffs(phi, 32).unwrap();
        a.ranks() == vec![1] && a.carries(&cw(phi, "a"))
    });
    let e = elliptic_ffs(&bar, 32).unwrap();
    let elliptic_ok = e.ranks() == vec![1, 1] && e.carries(&cw(&bar, "a")) && e.carries(&cw(&bar, "b"));
    let fixed_point_ok = WORKED_MAPS.iter().all(|imgs| {
        let phi = endo(imgs);
        let e = elliptic_ffs(&phi, 32).unwrap();
        preimage_ffs(&phi, &e).unwrap().equivalent(&e)
    });
    check(
        fixed_ok && elliptic_ok && fixed_point_ok,
        format!("fixed <a> for psi and barbell: {fixed_ok}; elliptic {{<a>,<b>}}: {elliptic_ok}; preimage fixes elliptic: {fixed_point_ok}"),
    )
}

fn quotient_of(phi: &EndoSpec) -> Option<(usize, QuotientMap)> {
    let e = elliptic_ffs(phi, 32).unwrap();
    match relative_immersion(phi, &e, 32).unwrap() {
        RelImmersionOutcome::Immersion { k, quotient, .. } => Some((k, quotient)),
        RelImmersionOutcome::BudgetExceeded { .. } => None,
    }
}

fn doubles_within(q: &QuotientMap, max_k: usize) -> bool {
    let start: Vec<usize> = vec![1; q.graph.edges.len()];
    (0..q.graph.edges.len()).all(|e| (1..=max_k).any(|k| q.iterate_lengths(k).unwrap()[e] >= 2 * start[e]))
}

fn c10_immersions() -> Outcome {
    let phi = endo(&["ab", "ba"]);
    let f = GraphMap::from_endo(&phi).unwrap();
    let direct = is_immersion(&f) && is_expanding(&f) && elliptic_ffs(&phi, 32).unwrap().is_trivial();
    let mut notes = Vec::new();
    let mut ok = direct;
    for imgs in [["a", "abab"], ["a", "baB"]] {
        let phi = endo(&imgs);
        match quotient_of(&phi) {
            Some((k, q)) => {
                let expanding = q.is_immersion() && is_expanding(&q.to_graph_map().unwrap());
                let doubling = doubles_within(&q, 2);
                ok &= expanding && doubling;
                notes.push(format!(
                    "({}) level {k}, {} edge(s), doubling {doubling}",
                    imgs.join(","),
                    q.graph.edges.len()
                ));
            }
            None => {
                ok = false;
                notes.push(format!("({}) none found", imgs.join(",")));
            }
        }
    }
    check(ok, format!("(ab,ba) rose map expanding immersion: {direct}; {}", notes.join("; ")))
}

fn c11_uniqueness() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for (imgs, edge, pos) in [(["ab", "ba"], 0, 1), (["a", "baB"], 1, 1), (["a", "abab"], 1, 2)] {
        let phi = endo(&imgs);
        let e = elliptic_ffs(&phi, 32).unwrap();
        let rose = GraphMap::from_endo(&phi).unwrap();
        let (sub, _) = subdivide(&rose, edge, pos).unwrap();
        let a = relative_immersion(&phi, &e, 32).unwrap();
        let b = relative_immersion_from(&phi, &sub, &e, 32).unwrap();
        let (RelImmersionOutcome::Immersion { quotient: qa, .. }, RelImmersionOutcome::Immersion { quotient: qb, .. }) =
            (a, b)
        else {
            ok = false;
            notes.push(format!("({}) missing immersion", imgs.join(",")));
            continue;
        };
        let iso = small_graphs_isomorphic(&qa.graph, &qb.graph);
        let la = stretch_factor(&qa.to_graph_map().unwrap()).unwrap();
        let lb = stretch_factor(&qb.to_graph_map().unwrap()).unwrap();
        ok &= iso && (la - lb).abs() <= 1e-9;
        notes.push(format!("({}) iso {iso}, lambda {la} vs {lb}", imgs.join(",")));
    }
    check(ok, notes.join("; "))
}

fn tamper(v: &Verdict, f: impl FnOnce(&mut Verdict)) -> Verdict {
    let mut t = v.clone();
    f(&mut t);
    t
}

fn c12_witnesses(emitted: &mut Vec<(EndoSpec, Verdict)>) -> Outcome {
    let cfg = Config::default();
    let cases = [(["a", "abab"], ("a", 1, 1)), (["aa", "ab"], ("a", 1, 2)), (["b", "aa"], ("a", 2, 2))];
    let mut ok = true;
    let mut verdicts = Vec::new();
    for (imgs, (c, j, d)) in cases {
        let phi = endo(&imgs);
        let v = certify(&phi, &cfg).unwrap();
        let w = v.witness.as_ref();
        ok &= v.verdict == VerdictKind::NotHyperbolic
            && w.map(|w| (w.c.as_str(), w.j, w.d)) == Some((c, j, d))
            && verify_certificate(&v, &phi).ok;
        verdicts.push((phi.clone(), v.clone()));
        emitted.push((phi, v));
    }
    let abba = endo(&["ab", "ba"]);
    let hyp = certify(&abba, &cfg).unwrap();
    let frozen = hyp.verdict == VerdictKind::Hyperbolic && hyp.facts == AB_BA_FACTS;
    ok &= frozen;
    emitted.push((abba.clone(), hyp.clone()));

    let mut corpus: Vec<(EndoSpec, Verdict)> = Vec::new();
    for (phi, v) in &verdicts {
        corpus.push((phi.clone(), tamper(v, |t| t.witness.as_mut().unwrap().d += 1)));
        corpus.push((phi.clone(), tamper(v, |t| t.witness.as_mut().unwrap().c.push('b'))));
    }
    corpus.push((verdicts[1].0.clone(), tamper(&verdicts[1].1, |t| t.witness.as_mut().unwrap().j = 2)));
    corpus.push((verdicts[2].0.clone(), tamper(&verdicts[2].1, |t| t.witness.as_mut().unwrap().j = 3)));
    corpus.push((abba.clone(), tamper(&hyp, |t| t.witness = Some(Witness { c: "a".into(), j: 1, d: 1 }))));
    corpus.push((
        abba.clone(),
        tamper(&hyp, |t| {
            for f in t.facts.iter_mut() {
                if f.starts_with("hat_pullback") {
                    *f = "hat_pullback empty_at=1".into();
                }
            }
        }),
    ));
    let caught = corpus.iter().filter(|(phi, v)| !verify_certificate(v, phi).ok).count();
    ok &= caught == corpus.len() && corpus.len() == 10;
    check(
        ok,
        format!(
            "three witnesses verified; (ab,ba) verdict frozen: {frozen}; tampered caught {caught}/{}",
            corpus.len()
        ),
    )
}

fn c13_monotone_emptiness() -> Outcome {
    let mut fixtures: Vec<EndoSpec> = WORKED_MAPS.iter().map(|i| endo(i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    fixtures.extend((0..30).map(|_| random_injective(&mut rng, 2, 3)));
    let mut empties = 0;
    for phi in &fixtures {
        if let ScanOutcome::EmptyAt(k) = stabilization_scan(phi, 8).unwrap() {
            empties += 1;
            for extra in [1, 2] {
                if !iterated_pullback(phi, k + extra).unwrap().hat.is_empty() {
                    return check(false, format!("{}: empty at {k} but not at {}", phi.to_text(), k + extra));
                }
            }
        }
    }
    check(empties > 0, format!("{} fixtures, {empties} empty_at(k), all still empty at k+1 and k+2", fixtures.len()))
}

fn full_fragment(phi: &EndoSpec) -> EndoFragment {
    EndoFragment { basis: phi.basis.clone(), images: phi.images.iter().cloned().map(Some).collect() }
}

fn c14_hnn(emitted: &mut Vec<(EndoSpec, Verdict)>) -> Outcome {
    let cfg = Config::default();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut same = 0;
    for _ in 0..20 {
        let phi = random_injective(&mut rng, 2, 3);
        let all: Vec<usize> = (0..phi.rank()).collect();
        let a = certify(&phi, &cfg).unwrap();
        let b = certify_hnn(&all, &full_fragment(&phi), &cfg).unwrap();
        if a.to_json() == b.to_json() {
            same += 1;
        }
        emitted.push((phi, a));
    }
    let sq = EndoFragment::parse("rank: 2\nmap: a -> aa").unwrap();
    let v = certify_hnn(&[0], &sq, &cfg).unwrap();
    let sq_ok = v.verdict == VerdictKind::NotHyperbolic
        && v.witness == Some(Witness { c: "a".into(), j: 1, d: 2 })
        && verify_hnn_certificate(&v, &[0], &sq).ok;
    let shift = EndoFragment::parse("rank: 2\nmap: a -> b").unwrap();
    let v = certify_hnn(&[0], &shift, &cfg).unwrap();
    let shift_ok = v.verdict == VerdictKind::Hyperbolic
        && v.facts.iter().any(|f| f == "canonical_system trivial")
        && verify_hnn_certificate(&v, &[0], &shift).ok;
    check(
        same == 20 && sq_ok && shift_ok,
        format!("A = F byte-identical {same}/20; a -> aa witness (a,1,2): {sq_ok}; a -> b trivial system: {shift_ok}"),
    )
}

#[test]
fn acceptance() {
    let mut emitted = Vec::new();
    let mut results: Vec<(u32, &str, Outcome)> = vec![
        (1, "(ab,ba) iterated Stallings roses", c1_ab_ba_roses()),
        (2, "(a,baB) iterated Stallings barbells", c2_barbells()),
        (3, "(a,abab) iterated Stallings roses", c3_psi_roses()),
        (4, "first pullback of (ab,ba)", c4_pullback()),
        (5, "reduced rank bound for pullbacks", c5_neumann()),
        (6, "bounded cancellation", c6_bounded_cancellation()),
        (7, "train track driver and subdivision", c7_train_tracks()),
        (8, "Perron-Frobenius eigenvalues", c8_spectral()),
        (9, "fixed and elliptic systems", c9_systems()),
        (10, "expanding immersions", c10_immersions()),
        (11, "uniqueness of the relative immersion", c11_uniqueness()),
        (12, "certifier witnesses and tampering", c12_witnesses(&mut emitted)),
        (13, "monotone hat emptiness", c13_monotone_emptiness()),
        (14, "HNN reduction", c14_hnn(&mut emitted)),
    ];
    let failed_verify: Vec<String> =
        emitted.iter().filter(|(phi, v)| !verify_certificate(v, phi).ok).map(|(phi, _)| phi.to_text()).collect();
    if !failed_verify.is_empty() {
        let c12 = &mut results[11].2;
        c12.ok = false;
        c12.detail.push_str(&format!("; re-verification failed for {failed_verify:?}"));
    }
    // write through the handle so the report shows without --nocapture
    let mut report = std::io::stdout().lock();
    let mut unexpected = Vec::new();
    for (id, name, out) in &results {
        let status = if out.ok { "PASS" } else { "FAIL" };
        writeln!(report, "{status} criterion {id:>2}: {name}: {}", out.detail).unwrap();
        if !out.ok && !KNOWN_GAPS.contains(id) {
            unexpected.push(*id);
        }
    }
    writeln!(report, "re-verified {} emitted verdicts", emitted.len()).unwrap();
    assert!(unexpected.is_empty(), "unexpected failures: {unexpected:?}");
}
