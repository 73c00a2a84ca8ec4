//! Free group words over a fixed basis.
//!
//! A letter is a nonzero `i32`: `i` stands for the i-th generator (1-based) and
//! `-i` for its inverse. In text, lowercase is a generator and uppercase its
//! inverse, so `"abA"` is a·b·a⁻¹. The empty word is written `""` or `"1"`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Letter = i32;

/// Position of a letter in the order a < A < b < B < …
#[inline]
pub fn letter_key(l: Letter) -> u32 {
    2 * (l.unsigned_abs() - 1) + u32::from(l < 0)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Basis {
    names: Vec<char>,
}

impl Basis {
    pub fn new(names: Vec<char>) -> Result<Self> {
        if names.len() < 2 {
            return Err(Error::Input(format!("rank must be at least 2, got {}", names.len())));
        }
        for (i, c) in names.iter().enumerate() {
            if !c.is_ascii_lowercase() {
                return Err(Error::Input(format!("generator name {c:?} is not a lowercase letter")));
            }
            if names[..i].contains(c) {
                return Err(Error::Input(format!("duplicate generator name {c:?}")));
            }
        }
        Ok(Basis { names })
    }

    /// Basis `a, b, c, …` of the given rank.
    pub fn standard(rank: usize) -> Result<Self> {
        if rank > 26 {
            return Err(Error::Input(format!("rank {rank} exceeds the 26 available symbols")));
        }
        Basis::new((0..rank).map(|i| (b'a' + i as u8) as char).collect())
    }

    pub fn rank(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[char] {
        &self.names
    }

    pub fn name(&self, l: Letter) -> char {
        let c = self.names[(l.unsigned_abs() - 1) as usize];
        if l < 0 {
            c.to_ascii_uppercase()
        } else {
            c
        }
    }

    pub fn letter(&self, c: char) -> Result<Letter> {
        let lower = c.to_ascii_lowercase();
        match self.names.iter().position(|&n| n == lower) {
            Some(i) if c.is_ascii_lowercase() => Ok(i as Letter + 1),
            Some(i) => Ok(-(i as Letter + 1)),
            None => Err(Error::Input(format!("unknown symbol {c:?}"))),
        }
    }

    /// Parse a word in text syntax and freely reduce it. Whitespace and `1`
    /// (the identity) are ignored.
    pub fn parse(&self, s: &str) -> Result<Word> {
        let mut letters = Vec::with_capacity(s.len());
        for c in s.chars() {
            if c.is_whitespace() || c == '1' || c == '.' || c == '*' {
                continue;
            }
            letters.push(self.letter(c)?);
        }
        Ok(Word::reduce(&letters))
    }

    pub fn format(&self, letters: &[Letter]) -> String {
        letters.iter().map(|&l| self.name(l)).collect()
    }

    pub fn check(&self, letters: &[Letter]) -> Result<()> {
        let r = self.rank() as u32;
        match letters.iter().find(|l| **l == 0 || l.unsigned_abs() > r) {
            Some(l) => Err(Error::Input(format!("letter {l} outside basis of rank {r}"))),
            None => Ok(()),
        }
    }
}

/// A freely reduced word.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct Word(Vec<Letter>);

impl Word {
    pub fn empty() -> Self {
        Word(Vec::new())
    }

    pub fn letter(l: Letter) -> Self {
        Word(vec![l])
    }

    /// Free reduction of an arbitrary letter sequence.
    pub fn reduce(letters: &[Letter]) -> Self {
        let mut out: Vec<Letter> = Vec::with_capacity(letters.len());
        for &l in letters {
            debug_assert!(l != 0);
            if out.last() == Some(&-l) {
                out.pop();
            } else {
                out.push(l);
            }
        }
        Word(out)
    }

    /// Wraps letters that the caller knows to be reduced.
    pub fn from_reduced(letters: Vec<Letter>) -> Self {
        debug_assert!(letters.windows(2).all(|p| p[0] != -p[1]));
        Word(letters)
    }

    pub fn letters(&self) -> &[Letter] {
        &self.0
    }

    pub fn into_letters(self) -> Vec<Letter> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn inverse(&self) -> Self {
        Word(self.0.iter().rev().map(|l| -l).collect())
    }

    pub fn mul(&self, other: &Word) -> Self {
        let mut out = self.0.clone();
        for &l in &other.0 {
            if out.last() == Some(&-l) {
                out.pop();
            } else {
                out.push(l);
            }
        }
        Word(out)
    }

    pub fn pow(&self, n: usize) -> Self {
        let mut out = Word::empty();
        for _ in 0..n {
            out = out.mul(self);
        }
        out
    }

    /// Split into `(u, core)` with `self = u · core · u⁻¹` and `core`
    /// cyclically reduced.
    pub fn cyclic_split(&self) -> (Word, Word) {
        let w = &self.0;
        let n = w.len();
        let mut i = 0;
        while 2 * i + 1 < n && w[i] == -w[n - 1 - i] {
            i += 1;
        }
        (Word(w[..i].to_vec()), Word(w[i..n - i].to_vec()))
    }

    pub fn is_cyclically_reduced(&self) -> bool {
        self.0.len() < 2 || self.0[0] != -self.0[self.0.len() - 1]
    }

    /// Length of the cyclically reduced core.
    pub fn cyclic_len(&self) -> usize {
        self.cyclic_split().1.len()
    }

    pub fn to_text(&self, basis: &Basis) -> String {
        basis.format(&self.0)
    }
}

/// Canonical representative of a conjugacy class: cyclically reduced and
/// rotated to the least rotation under a < A < b < B < …
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct CyclicWord(Vec<Letter>);

impl CyclicWord {
    pub fn letters(&self) -> &[Letter] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_word(&self) -> Word {
        Word(self.0.clone())
    }

    pub fn to_text(&self, basis: &Basis) -> String {
        basis.format(&self.0)
    }

    /// Class of the inverse element.
    pub fn inverse(&self) -> CyclicWord {
        cyclic_normal_form(&self.to_word().inverse())
    }
}

/// Cyclically reduce then rotate to the canonical rotation.
pub fn cyclic_normal_form(w: &Word) -> CyclicWord {
    let (_, core) = w.cyclic_split();
    let s = least_rotation(&core.0);
    let mut v = core.0;
    v.rotate_left(s);
    CyclicWord(v)
}

/// Booth's algorithm: start index of the lexicographically least rotation.
fn least_rotation(s: &[Letter]) -> usize {
    let n = s.len();
    if n == 0 {
        return 0;
    }
    let key = |i: usize| letter_key(s[i % n]);
    let mut f: Vec<isize> = vec![-1; 2 * n];
    let mut k: usize = 0;
    for j in 1..2 * n {
        let sj = key(j);
        let mut i = f[j - k - 1];
        while i != -1 && sj != key(k + i as usize + 1) {
            if sj < key(k + i as usize + 1) {
                k = j - i as usize - 1;
            }
            i = f[i as usize];
        }
        if i == -1 && sj != key(k) {
            if sj < key(k) {
                k = j;
            }
            f[j - k] = -1;
        } else {
            f[j - k] = i + 1;
        }
    }
    k
}

/// `(r, e)` with `c = r^e` as cyclic words, `r` primitive, `e` maximal.
pub fn root_and_exponent(c: &CyclicWord) -> Result<(CyclicWord, usize)> {
    let s = &c.0;
    let n = s.len();
    if n == 0 {
        return Err(Error::Input("root of the trivial class is undefined".into()));
    }
    // KMP failure function gives the smallest period.
    let mut fail = vec![0usize; n + 1];
    let mut k = 0;
    for i in 1..n {
        while k > 0 && s[i] != s[k] {
            k = fail[k];
        }
        if s[i] == s[k] {
            k += 1;
        }
        fail[i + 1] = k;
    }
    let p = n - fail[n];
    let p = if n % p == 0 { p } else { n };
    Ok((CyclicWord(s[..p].to_vec()), n / p))
}

/// An endomorphism given by the images of the basis elements.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EndoSpec {
    pub basis: Basis,
    pub images: Vec<Word>,
}

impl EndoSpec {
    pub fn new(basis: Basis, images: Vec<Word>) -> Result<Self> {
        if images.len() != basis.rank() {
            return Err(Error::Input(format!("expected {} images, got {}", basis.rank(), images.len())));
        }
        for w in &images {
            basis.check(w.letters())?;
        }
        Ok(EndoSpec { basis, images })
    }

    /// Build from image strings over the standard basis of matching rank.
    pub fn from_strs(images: &[&str]) -> Result<Self> {
        let basis = Basis::standard(images.len())?;
        let imgs = images.iter().map(|s| basis.parse(s)).collect::<Result<Vec<_>>>()?;
        EndoSpec::new(basis, imgs)
    }

    pub fn identity(basis: Basis) -> Self {
        let images = (1..=basis.rank() as Letter).map(Word::letter).collect();
        EndoSpec { basis, images }
    }

    pub fn rank(&self) -> usize {
        self.basis.rank()
    }

    pub fn image(&self, l: Letter) -> Word {
        let w = &self.images[(l.unsigned_abs() - 1) as usize];
        if l > 0 {
            w.clone()
        } else {
            w.inverse()
        }
    }

    /// Lipschitz constant of the rose map: longest image.
    pub fn max_image_len(&self) -> usize {
        self.images.iter().map(Word::len).max().unwrap_or(0)
    }

    /// `self ∘ other`: first `other`, then `self`.
    pub fn compose(&self, other: &EndoSpec) -> EndoSpec {
        let images = other.images.iter().map(|w| apply_endo(self, w)).collect();
        EndoSpec { basis: self.basis.clone(), images }
    }

    pub fn power(&self, k: usize) -> EndoSpec {
        let mut out = EndoSpec::identity(self.basis.clone());
        for _ in 0..k {
            out = self.compose(&out);
        }
        out
    }

    /// Parse the text format
    ///
    /// ```text
    /// rank: 2
    /// basis: a b
    /// map: a -> ab ; b -> ba
    /// ```
    ///
    /// `rank` and `basis` are optional when the map names every generator of
    /// the standard basis. Lines starting with `#` are comments.
    pub fn parse(text: &str) -> Result<Self> {
        let frag = EndoFragment::parse(text)?;
        frag.into_full()
    }

    pub fn to_text(&self) -> String {
        let names: Vec<String> = self.basis.names().iter().map(|c| c.to_string()).collect();
        let map: Vec<String> = self
            .images
            .iter()
            .enumerate()
            .map(|(i, w)| format!("{} -> {}", self.basis.names()[i], text_or_one(&w.to_text(&self.basis))))
            .collect();
        format!("rank: {}\nbasis: {}\nmap: {}\n", self.rank(), names.join(" "), map.join(" ; "))
    }
}

fn text_or_one(s: &str) -> &str {
    if s.is_empty() {
        "1"
    } else {
        s
    }
}

/// Substitute each letter by its image and reduce.
pub fn apply_endo(phi: &EndoSpec, w: &Word) -> Word {
    let mut out: Vec<Letter> = Vec::with_capacity(w.len() * phi.max_image_len().max(1));
    for &l in w.letters() {
        let img = &phi.images[(l.unsigned_abs() - 1) as usize];
        let push = |out: &mut Vec<Letter>, x: Letter| {
            if out.last() == Some(&-x) {
                out.pop();
            } else {
                out.push(x);
            }
        };
        if l > 0 {
            for &x in img.letters() {
                push(&mut out, x);
            }
        } else {
            for &x in img.letters().iter().rev() {
                push(&mut out, -x);
            }
        }
    }
    Word(out)
}

/// Images for a subset of the generators, as used for maps `A → F` defined
/// on a free factor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EndoFragment {
    pub basis: Basis,
    pub images: Vec<Option<Word>>,
}

impl EndoFragment {
    pub fn parse(text: &str) -> Result<Self> {
        let mut rank: Option<usize> = None;
        let mut names: Option<Vec<char>> = None;
        let mut map: Option<String> = None;
        for raw in text.lines() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, val) =
                line.split_once(':').ok_or_else(|| Error::Input(format!("expected `key: value`, got {line:?}")))?;
            let val = val.trim();
            match key.trim() {
                "rank" => rank = Some(val.parse().map_err(|_| Error::Input(format!("bad rank {val:?}")))?),
                "basis" => {
                    let mut v = Vec::new();
                    for tok in val.split_whitespace() {
                        let mut cs = tok.chars();
                        match (cs.next(), cs.next()) {
                            (Some(c), None) => v.push(c),
                            _ => return Err(Error::Input(format!("bad generator name {tok:?}"))),
                        }
                    }
                    names = Some(v);
                }
                "map" => match &mut map {
                    Some(m) => {
                        m.push(';');
                        m.push_str(val);
                    }
                    None => map = Some(val.to_string()),
                },
                other => return Err(Error::Input(format!("unknown key {other:?}"))),
            }
        }
        let map = map.ok_or_else(|| Error::Input("missing `map:` line".into()))?;
        let mut pairs = Vec::new();
        for clause in map.split(';') {
            let clause = clause.trim();
            if clause.is_empty() {
                continue;
            }
            let (lhs, rhs) =
                clause.split_once("->").ok_or_else(|| Error::Input(format!("expected `x -> word`, got {clause:?}")))?;
            let lhs = lhs.trim();
            let mut cs = lhs.chars();
            let c = match (cs.next(), cs.next()) {
                (Some(c), None) if c.is_ascii_lowercase() => c,
                _ => return Err(Error::Input(format!("bad map source {lhs:?}"))),
            };
            pairs.push((c, rhs.trim().to_string()));
        }
        let names = match names {
            Some(n) => n,
            None => {
                let r = match rank {
                    Some(r) => r,
                    None => pairs.iter().map(|(c, _)| (*c as u8 - b'a') as usize + 1).max().unwrap_or(0),
                };
                Basis::standard(r)?.names().to_vec()
            }
        };
        let basis = Basis::new(names)?;
        if let Some(r) = rank {
            if r != basis.rank() {
                return Err(Error::Input(format!("rank {r} disagrees with basis of {} generators", basis.rank())));
            }
        }
        let mut images: Vec<Option<Word>> = vec![None; basis.rank()];
        for (c, rhs) in pairs {
            let l = basis.letter(c)?;
            let slot = &mut images[(l - 1) as usize];
            if slot.is_some() {
                return Err(Error::Input(format!("generator {c:?} mapped twice")));
            }
            *slot = Some(basis.parse(&rhs)?);
        }
        Ok(EndoFragment { basis, images })
    }

    pub fn into_full(self) -> Result<EndoSpec> {
        let mut imgs = Vec::with_capacity(self.images.len());
        for (i, w) in self.images.into_iter().enumerate() {
            match w {
                Some(w) => imgs.push(w),
                None => return Err(Error::Input(format!("no image given for generator {:?}", self.basis.names()[i]))),
            }
        }
        EndoSpec::new(self.basis, imgs)
    }
}

/// `Display` helper that prints a word with a basis.
pub struct Show<'a>(pub &'a Basis, pub &'a [Letter]);

impl fmt::Display for Show<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.1.is_empty() {
            return f.write_str("1");
        }
        f.write_str(&self.0.format(self.1))
    }
}
