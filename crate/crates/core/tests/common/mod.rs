#![allow(dead_code)]

use fgend_core::dynamics::is_injective;
use fgend_core::{Basis, EndoSpec, Letter, Word};
use proptest::prelude::*;

pub fn letters(rank: usize, max_len: usize) -> impl Strategy<Value = Vec<Letter>> {
    let r = rank as Letter;
    prop::collection::vec((1..=r, any::<bool>()).prop_map(|(l, s)| if s { l } else { -l }), 0..=max_len)
}

pub fn word(rank: usize, max_len: usize) -> impl Strategy<Value = Word> {
    letters(rank, max_len).prop_map(|v| Word::reduce(&v))
}

pub fn nonempty_word(rank: usize, max_len: usize) -> impl Strategy<Value = Word> {
    word(rank, max_len).prop_filter("nonempty", |w| !w.is_empty())
}

pub fn endo(rank: usize, max_len: usize) -> impl Strategy<Value = EndoSpec> {
    prop::collection::vec(nonempty_word(rank, max_len), rank)
        .prop_map(move |imgs| EndoSpec::new(Basis::standard(rank).unwrap(), imgs).unwrap())
}

pub fn injective_endo(rank: usize, max_len: usize) -> impl Strategy<Value = EndoSpec> {
    endo(rank, max_len).prop_filter("injective", |phi| is_injective(phi).unwrap().0)
}

pub fn gens(rank: usize, count: usize, max_len: usize) -> impl Strategy<Value = Vec<Word>> {
    prop::collection::vec(nonempty_word(rank, max_len), 1..=count)
}

pub fn parse_endo(imgs: &[&str]) -> EndoSpec {
    EndoSpec::from_strs(imgs).unwrap()
}

/// Fixtures shared by several suites.
pub const WORKED_MAPS: [[&str; 2]; 3] = [["ab", "ba"], ["a", "baB"], ["a", "abab"]];

/// Random injective rose map with an irreducible transition matrix and no
/// short periodic conjugacy class (a cheap screen against reducible and
/// finite-order outer classes). Ranks 2 and 3, images of length at most 5.
pub fn irreducible_fixture(rng: &mut impl rand::Rng, positive: bool) -> EndoSpec {
    use fgend_core::dynamics::periodic_class_search;
    use fgend_core::traintrack::{is_irreducible, transition_matrix};
    use fgend_core::GraphMap;
    loop {
        let rank = rng.gen_range(2..=3usize);
        let imgs: Vec<Word> = (0..rank)
            .map(|_| {
                let len = rng.gen_range(1..=5);
                let v: Vec<Letter> = (0..len)
                    .map(|_| {
                        let l = rng.gen_range(1..=rank as Letter);
                        if positive || rng.gen_bool(0.5) {
                            l
                        } else {
                            -l
                        }
                    })
                    .collect();
                Word::reduce(&v)
            })
            .collect();
        if imgs.iter().any(|w| w.is_empty()) {
            continue;
        }
        let phi = EndoSpec::new(Basis::standard(rank).unwrap(), imgs).unwrap();
        if !is_injective(&phi).unwrap().0 {
            continue;
        }
        let f = GraphMap::from_endo(&phi).unwrap();
        if !is_irreducible(&transition_matrix(&f).unwrap()) {
            continue;
        }
        // the commutator class is periodic under every automorphism of F2
        let max_len = if rank == 2 { 3 } else { 4 };
        if periodic_class_search(&phi, max_len, 12, &[]).witness.is_some() {
            continue;
        }
        return phi;
    }
}

pub fn irreducible_fixtures(seed: u64, n: usize, positive: bool) -> Vec<EndoSpec> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| irreducible_fixture(&mut rng, positive)).collect()
}

/// Reduced word of length at most `max_len` (possibly empty).
pub fn random_word(rng: &mut impl rand::Rng, rank: usize, max_len: usize) -> Word {
    let len = rng.gen_range(0..=max_len);
    let v: Vec<Letter> = (0..len)
        .map(|_| {
            let l = rng.gen_range(1..=rank as Letter);
            if rng.gen_bool(0.5) {
                l
            } else {
                -l
            }
        })
        .collect();
    Word::reduce(&v)
}

/// Random injective endomorphism with nonempty images of length at most `max_len`.
pub fn random_injective(rng: &mut impl rand::Rng, rank: usize, max_len: usize) -> EndoSpec {
    loop {
        let imgs: Vec<Word> = (0..rank).map(|_| random_word(rng, rank, max_len)).collect();
        if imgs.iter().any(|w| w.is_empty()) {
            continue;
        }
        let phi = EndoSpec::new(Basis::standard(rank).unwrap(), imgs).unwrap();
        if is_injective(&phi).unwrap().0 {
            return phi;
        }
    }
}
