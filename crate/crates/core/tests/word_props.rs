mod common;

use common::*;
use fgend_core::word::{apply_endo, cyclic_normal_form, root_and_exponent};
use fgend_core::Word;
use proptest::prelude::*;

proptest! {
    #[test]
    fn reduce_is_idempotent(v in letters(3, 30)) {
        let once = Word::reduce(&v);
        prop_assert_eq!(Word::reduce(once.letters()), once);
    }

    #[test]
    fn normal_form_ignores_rotation(w in nonempty_word(3, 20), shift in 0usize..20) {
        let core = w.cyclic_split().1;
        prop_assume!(!core.is_empty());
        let mut rot = core.letters().to_vec();
        let n = rot.len();
        rot.rotate_left(shift % n);
        prop_assert_eq!(cyclic_normal_form(&Word::from_reduced(rot)), cyclic_normal_form(&w));
    }

    #[test]
    fn conjugation_preserves_class(w in word(2, 12), u in word(2, 6)) {
        let conj = u.mul(&w).mul(&u.inverse());
        prop_assert_eq!(cyclic_normal_form(&conj), cyclic_normal_form(&w));
    }

    #[test]
    fn endo_action(phi in endo(2, 4), w in word(2, 10)) {
        let twice = apply_endo(&phi, &apply_endo(&phi, &w));
        prop_assert_eq!(twice, apply_endo(&phi.compose(&phi), &w));
    }

    #[test]
    fn roots_reassemble(r in nonempty_word(2, 6), e in 1usize..5) {
        let c = cyclic_normal_form(&r.pow(e));
        prop_assume!(!c.is_empty());
        let (root, exp) = root_and_exponent(&c).unwrap();
        prop_assert_eq!(cyclic_normal_form(&root.to_word().pow(exp)), c);
        prop_assert_eq!(root_and_exponent(&root).unwrap().1, 1);
    }
}
