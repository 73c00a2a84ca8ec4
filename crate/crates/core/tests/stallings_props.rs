mod common;

use std::collections::HashSet;

use common::*;
use fgend_core::stallings::cancellation_constant;
use fgend_core::word::{apply_endo, cyclic_normal_form};
use fgend_core::{subgroup_graph, Basis, GraphMap, Letter, Word};
use proptest::prelude::*;

fn basis(rank: usize) -> Basis {
    Basis::standard(rank).unwrap()
}

/// Every reduced product of at most `len` generators.
fn products(gens: &[Word], len: usize) -> HashSet<Word> {
    let mut out = HashSet::new();
    let mut frontier: Vec<(Word, Letter)> = vec![(Word::empty(), 0)];
    out.insert(Word::empty());
    for _ in 0..len {
        let mut next = Vec::new();
        for (w, last) in &frontier {
            for i in 1..=gens.len() as Letter {
                for x in [i, -i] {
                    if x == -last {
                        continue;
                    }
                    let g = if x > 0 { gens[(x - 1) as usize].clone() } else { gens[(-x - 1) as usize].inverse() };
                    let p = w.mul(&g);
                    out.insert(p.clone());
                    next.push((p, x));
                }
            }
        }
        frontier = next;
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn core_is_idempotent(g in gens(3, 4, 8)) {
        let (s, _) = subgroup_graph(&basis(3), &g).unwrap();
        let c = s.graph.core(false);
        prop_assert_eq!(c.core(false), c.clone());
        prop_assert!(c.is_core());
    }

    #[test]
    fn natural_edge_bound(g in gens(3, 4, 8)) {
        let (s, _) = subgroup_graph(&basis(3), &g).unwrap();
        prop_assume!(s.rank() >= 2);
        let ns = s.free_core().natural_structure().unwrap();
        prop_assert!(ns.natural_edges.len() <= 3 * s.rank() - 3);
    }

    #[test]
    fn isomorphism_is_an_equivalence(g in gens(2, 3, 6), u in word(2, 4), v in word(2, 4), h in gens(2, 3, 6)) {
        let b = basis(2);
        let conj = |x: &Word| -> Vec<Word> { g.iter().map(|w| x.mul(w).mul(&x.inverse())).collect() };
        let c0 = subgroup_graph(&b, &g).unwrap().0.free_core();
        let c1 = subgroup_graph(&b, &conj(&u)).unwrap().0.free_core();
        let c2 = subgroup_graph(&b, &conj(&v)).unwrap().0.free_core();
        let other = subgroup_graph(&b, &h).unwrap().0.free_core();
        prop_assert!(c0.isomorphic(&c0, false).unwrap());
        prop_assert!(c0.isomorphic(&c1, false).unwrap() && c1.isomorphic(&c2, false).unwrap());
        prop_assert!(c0.isomorphic(&c2, false).unwrap());
        prop_assert_eq!(c0.isomorphic(&other, false).unwrap(), other.isomorphic(&c0, false).unwrap());
    }

    #[test]
    fn fold_order_does_not_matter(g in gens(3, 4, 8)) {
        let b = basis(3);
        let mut rev = g.clone();
        rev.reverse();
        let (s1, _) = subgroup_graph(&b, &g).unwrap();
        let (s2, _) = subgroup_graph(&b, &rev).unwrap();
        prop_assert!(s1.graph.isomorphic(&s2.graph, true).unwrap());
        for w in &g {
            prop_assert!(s2.contains(w));
        }
    }

    #[test]
    fn membership(g in gens(2, 2, 4), w in word(2, 10)) {
        let (s, _) = subgroup_graph(&basis(2), &g).unwrap();
        let prods = products(&g, 4);
        for p in &prods {
            prop_assert!(s.contains(p));
        }
        if !s.contains(&w) {
            prop_assert!(!prods.contains(&w));
        }
    }

    #[test]
    fn marking_rewrites_members(g in gens(2, 3, 5), idx in prop::collection::vec(0usize..3, 0..6)) {
        let (s, _) = subgroup_graph(&basis(2), &g).unwrap();
        let mut w = Word::empty();
        for i in idx {
            w = w.mul(&g[i % g.len()]);
        }
        let x = s.express_in_generators(&w).unwrap();
        prop_assert_eq!(s.expand_marking(&x), w);
    }

    #[test]
    fn loop_length_matches_rose(g in gens(2, 3, 6), idx in prop::collection::vec(0usize..3, 1..5)) {
        let (s, _) = subgroup_graph(&basis(2), &g).unwrap();
        let mut w = Word::empty();
        for i in idx {
            w = w.mul(&g[i % g.len()]);
        }
        let c = cyclic_normal_form(&w);
        let (v, _) = s.conjugate_into(&c).unwrap();
        let (end, path) = s.read_from(v, c.letters()).unwrap();
        prop_assert_eq!(end, v);
        prop_assert_eq!(path.len(), c.len());
    }

    #[test]
    fn bounded_cancellation(phi in injective_endo(2, 4), p1 in nonempty_word(2, 10), p2 in nonempty_word(2, 10)) {
        prop_assume!(p1.letters().last() != p2.letters().first().map(|l| -l).as_ref());
        let c = cancellation_constant(&GraphMap::from_endo(&phi).unwrap()).unwrap();
        let whole = apply_endo(&phi, &p1.mul(&p2)).len();
        let parts = apply_endo(&phi, &p1).len() + apply_endo(&phi, &p2).len();
        prop_assert!(whole + 2 * c >= parts);
    }
}
