mod common;

use common::*;
use fgend_core::dynamics::*;
use fgend_core::graphmap::iterated_stallings;
use fgend_core::word::{apply_endo, cyclic_normal_form};
use fgend_core::{subgroup_graph, EndoSpec, Word};
use proptest::prelude::*;

fn image_class(phi: &EndoSpec, c: &fgend_core::SubgroupGraph) -> fgend_core::SubgroupGraph {
    let gens: Vec<Word> = c.marking.iter().map(|w| apply_endo(phi, w)).collect();
    subgroup_graph(&phi.basis, &gens).unwrap().0
}

fn nonsurjective(rank: usize, max_len: usize) -> impl Strategy<Value = EndoSpec> {
    injective_endo(rank, max_len).prop_filter("nonsurjective", |phi| !is_surjective(phi).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn injective_keeps_rank(phi in injective_endo(2, 3)) {
        for k in 1..=4 {
            let s = iterated_stallings(&phi, k).unwrap();
            prop_assert_eq!(s.rank(), phi.rank(), "k = {}", k);
        }
    }

    #[test]
    fn injective_keeps_rank_f3(phi in injective_endo(3, 2)) {
        for k in 1..=3 {
            prop_assert_eq!(iterated_stallings(&phi, k).unwrap().rank(), 3);
        }
    }

    #[test]
    fn fixed_system_is_permuted(phi in injective_endo(2, 3)) {
        let fixed = max_fixed_ffs(&phi, 32).unwrap();
        prop_assume!(!fixed.partial);
        for c in &fixed.components {
            let img = image_class(&phi, c);
            prop_assert!(
                fixed.components.iter().any(|d| same_class(&img, d)),
                "image of a fixed component is not a component"
            );
            prop_assert!(eventually_periodic(&phi, c, 8).unwrap().is_some());
        }
    }

    #[test]
    fn elliptic_system_is_backward_fixed(phi in nonsurjective(2, 3)) {
        let e = elliptic_ffs(&phi, 32).unwrap();
        prop_assume!(!e.partial);
        let back = preimage_ffs(&phi, &e).unwrap();
        prop_assert!(back.equivalent(&e), "{} vs {}", back.describe(), e.describe());
    }

    #[test]
    fn surviving_tails_are_carried(phi in injective_endo(2, 3)) {
        let fixed = max_fixed_ffs(&phi, 32).unwrap();
        prop_assume!(!fixed.partial);
        for len in 1..=4 {
            for c in canonical_cyclic_words(2, len) {
                let probe = infinite_tail_probe(&phi, &c, 8).unwrap();
                for w in probe.preimage_chain.windows(2) {
                    prop_assert_eq!(&cyclic_normal_form(&apply_endo(&phi, &w[1].to_word())), &w[0]);
                }
                if probe.depth_survived >= 8 {
                    prop_assert!(fixed.carries(&c), "{} survives but is not carried", c.to_text(&phi.basis));
                }
            }
        }
    }

    #[test]
    fn periodic_witnesses_recheck(phi in injective_endo(2, 3)) {
        let s = periodic_class_search(&phi, 4, 6, &[]);
        if let Some((c, j)) = s.witness {
            prop_assert!(j >= 1 && j <= 6);
            let img = apply_endo(&phi.power(j), &c.to_word());
            prop_assert_eq!(cyclic_normal_form(&img), c);
        }
    }
}

#[test]
fn worked_maps_elliptic_fixed_points() {
    for imgs in WORKED_MAPS {
        let phi = parse_endo(&imgs);
        let e = elliptic_ffs(&phi, 32).unwrap();
        assert!(preimage_ffs(&phi, &e).unwrap().equivalent(&e), "{imgs:?}");
    }
}
