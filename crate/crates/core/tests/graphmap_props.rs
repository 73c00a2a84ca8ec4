mod common;

use std::collections::VecDeque;

use common::*;
use fgend_core::dynamics::elliptic_ffs;
use fgend_core::graph::{tighten, Dir, Path};
use fgend_core::graphmap::{homotopy_lift, homotopy_lift_raw, iterated_stallings};
use fgend_core::traintrack::{relative_immersion, RelImmersionOutcome};
use fgend_core::word::{apply_endo, cyclic_normal_form};
use fgend_core::{GraphMap, LabeledGraph, QuotientMap};
use proptest::prelude::*;

fn distance(g: &LabeledGraph, a: usize, b: usize) -> usize {
    let dirs = g.directions();
    let mut dist = vec![usize::MAX; g.num_vertices];
    dist[a] = 0;
    let mut q = VecDeque::from([a]);
    while let Some(v) = q.pop_front() {
        for &d in &dirs[v] {
            let w = g.terminus(d);
            if dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                q.push_back(w);
            }
        }
    }
    dist[b]
}

fn cyclically_tighten(p: &[Dir]) -> Path {
    let mut t = tighten(p);
    while t.len() >= 2 && t[0] == t[t.len() - 1].rev() {
        t.remove(0);
        t.pop();
    }
    t
}

/// A closed walk from vertex 0 steered by `choices`, cyclically tightened.
fn loop_from(g: &LabeledGraph, choices: &[usize]) -> Path {
    let dirs = g.directions();
    let (paths, _) = g.spanning_tree(0);
    let mut v = 0;
    let mut p = Vec::new();
    for &c in choices {
        let d = dirs[v][c % dirs[v].len()];
        p.push(d);
        v = g.terminus(d);
    }
    let back = paths[v].clone().unwrap();
    p.extend(fgend_core::graph::reverse_path(&back));
    cyclically_tighten(&p)
}

fn quotients() -> Vec<QuotientMap> {
    let mut out = Vec::new();
    for imgs in [["a", "baB"], ["a", "abab"]] {
        let phi = parse_endo(&imgs);
        let e = elliptic_ffs(&phi, 32).unwrap();
        match relative_immersion(&phi, &e, 8).unwrap() {
            RelImmersionOutcome::Immersion { quotient, .. } => out.push(quotient),
            other => panic!("{imgs:?}: {other:?}"),
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn loop_lengths_agree_with_rose(phi in injective_endo(2, 3), g in nonempty_word(2, 8), k in 1usize..=3) {
        let s = iterated_stallings(&phi, k).unwrap();
        let mut x = g.clone();
        for _ in 0..k {
            x = apply_endo(&phi, &x);
        }
        let c = cyclic_normal_form(&x);
        let (v, _) = s.conjugate_into(&c).unwrap();
        let (end, path) = s.read_from(v, c.letters()).unwrap();
        prop_assert_eq!(end, v);
        prop_assert_eq!(path.len(), c.len());
    }

    #[test]
    fn lift_constants(phi in injective_endo(2, 3), k in 1usize..=3) {
        let f = GraphMap::from_endo(&phi).unwrap();
        let c = f.cancellation.unwrap();
        let s = iterated_stallings(&phi, k).unwrap();
        let raw = homotopy_lift_raw(&f, &s).unwrap();
        prop_assert!(raw.lipschitz <= f.lipschitz);
        let lift = homotopy_lift(&f, &s).unwrap();
        prop_assert!(lift.measured_turn_cancellation() <= 2 * c);
        prop_assert!(lift.lipschitz <= f.lipschitz + c, "K {} vs {} + {}", lift.lipschitz, f.lipschitz, c);
        // naturalization moves branch points at most C
        let core = raw.restrict_to_core().unwrap();
        let ns = lift.domain.natural_structure().unwrap();
        for &v in &ns.branch_points {
            prop_assert!(distance(&lift.codomain, core.vertex_map[v], lift.vertex_map[v]) <= c);
        }
    }

    #[test]
    fn collapse_keeps_loxodromic_loops(choices in prop::collection::vec(0usize..8, 1..16), which in 0usize..2) {
        let q = &quotients()[which];
        let f = &q.source.map;
        let l = loop_from(&f.domain, &choices);
        prop_assume!(l.iter().any(|d| !q.collapsed[d.edge]));
        let img = cyclically_tighten(&f.image(&l));
        prop_assert!(img.iter().any(|d| !q.collapsed[d.edge]));
    }
}
