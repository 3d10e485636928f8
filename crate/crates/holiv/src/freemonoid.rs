//! Words in the free monoid on homoclinic generators, the product sets used
//! to compare characters, and character tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::matalg::C64;

/// Opaque generator symbol. In dynamical runs it is the index of a
/// homoclinic orbit; in abstract benchmarks it is just a label.
pub type GenId = u32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WordParseError {
    #[error("bad factor {0:?}: expected g<id> or g<id>^<exp>")]
    BadFactor(String),
    #[error("exponent must be at least 1 in {0:?}")]
    ZeroExponent(String),
}

/// Normalized word: adjacent factors have distinct generators, exponents
/// are positive. The empty word is the identity.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct FreeWord {
    factors: Vec<(GenId, u32)>,
}

impl FreeWord {
    pub fn identity() -> Self {
        FreeWord { factors: Vec::new() }
    }

    pub fn generator(g: GenId) -> Self {
        FreeWord { factors: vec![(g, 1)] }
    }

    pub fn power(g: GenId, k: u32) -> Self {
        if k == 0 {
            Self::identity()
        } else {
            FreeWord { factors: vec![(g, k)] }
        }
    }

    /// Normalizes an arbitrary factor list.
    pub fn from_factors(raw: impl IntoIterator<Item = (GenId, u32)>) -> Self {
        let mut w = Self::identity();
        for (g, k) in raw {
            w.push(g, k);
        }
        w
    }

    pub fn from_letters(letters: &[GenId]) -> Self {
        Self::from_factors(letters.iter().map(|&g| (g, 1)))
    }

    fn push(&mut self, g: GenId, k: u32) {
        if k == 0 {
            return;
        }
        match self.factors.last_mut() {
            Some((h, e)) if *h == g => *e += k,
            _ => self.factors.push((g, k)),
        }
    }

    pub fn factors(&self) -> &[(GenId, u32)] {
        &self.factors
    }

    pub fn is_identity(&self) -> bool {
        self.factors.is_empty()
    }

    /// Total number of letters (sum of exponents).
    pub fn letter_len(&self) -> u32 {
        self.factors.iter().map(|f| f.1).sum()
    }

    pub fn letters(&self) -> Vec<GenId> {
        self.factors.iter().flat_map(|&(g, k)| std::iter::repeat_n(g, k as usize)).collect()
    }

    pub fn max_exponent(&self) -> u32 {
        self.factors.iter().map(|f| f.1).max().unwrap_or(0)
    }

    /// Cyclic rotation by `shift` letters.
    pub fn rotate(&self, shift: usize) -> Self {
        let l = self.letters();
        if l.is_empty() {
            return self.clone();
        }
        let s = shift % l.len();
        let rotated: Vec<GenId> = l[s..].iter().chain(&l[..s]).copied().collect();
        Self::from_letters(&rotated)
    }
}

/// Monoid product with normalization at the seam.
pub fn concat(a: &FreeWord, b: &FreeWord) -> FreeWord {
    let mut w = a.clone();
    for &(g, k) in &b.factors {
        w.push(g, k);
    }
    w
}

impl fmt::Display for FreeWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.factors.is_empty() {
            return write!(f, "1");
        }
        for (i, (g, k)) in self.factors.iter().enumerate() {
            if i > 0 {
                write!(f, ".")?;
            }
            if *k == 1 {
                write!(f, "g{g}")?;
            } else {
                write!(f, "g{g}^{k}")?;
            }
        }
        Ok(())
    }
}

impl FromStr for FreeWord {
    type Err = WordParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() || s == "1" {
            return Ok(Self::identity());
        }
        let mut raw = Vec::new();
        for part in s.split('.') {
            let body = part.strip_prefix('g').ok_or_else(|| WordParseError::BadFactor(part.into()))?;
            let (id, exp) = match body.split_once('^') {
                Some((id, e)) => (id, e.parse::<u32>().map_err(|_| WordParseError::BadFactor(part.into()))?),
                None => (body, 1),
            };
            let id = id.parse::<GenId>().map_err(|_| WordParseError::BadFactor(part.into()))?;
            if exp == 0 {
                return Err(WordParseError::ZeroExponent(part.into()));
            }
            raw.push((id, exp));
        }
        Ok(Self::from_factors(raw))
    }
}

impl Serialize for FreeWord {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for FreeWord {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Words `g_1, ..., g_N` whose images are meant to span the image algebra.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratingSet {
    pub words: Vec<FreeWord>,
}

impl GeneratingSet {
    pub fn new(words: Vec<FreeWord>) -> Self {
        GeneratingSet { words }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// All `g_i`, `g_i g_j` and `g_i g_j g_k`, deduplicated.
#[allow(non_snake_case)]
pub fn build_G0(gens: &GeneratingSet) -> BTreeSet<FreeWord> {
    let mut out = BTreeSet::new();
    for a in &gens.words {
        out.insert(a.clone());
        for b in &gens.words {
            let ab = concat(a, b);
            for c in &gens.words {
                out.insert(concat(&ab, c));
            }
            out.insert(ab);
        }
    }
    out
}

/// The words `g` of `G0` with `g_i g` still in `G0` for every generator.
#[allow(non_snake_case)]
pub fn build_G0_prime(g0: &BTreeSet<FreeWord>, gens: &GeneratingSet) -> BTreeSet<FreeWord> {
    g0.iter().filter(|g| gens.words.iter().all(|gi| g0.contains(&concat(gi, g)))).cloned().collect()
}

/// Word → trace.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CharTable {
    pub values: BTreeMap<FreeWord, C64>,
}

impl CharTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, w: FreeWord, chi: C64) {
        self.values.insert(w, chi);
    }

    pub fn get(&self, w: &FreeWord) -> Option<C64> {
        self.values.get(w).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Every letter sequence of exactly `len` letters over `alphabet`, in
/// lexicographic order of the sequence.
pub fn words_of_length(alphabet: &[GenId], len: usize) -> Vec<FreeWord> {
    let mut sorted = alphabet.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let k = sorted.len();
    if k == 0 {
        return Vec::new();
    }
    let total = k.pow(len as u32);
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; len];
    for _ in 0..total {
        let letters: Vec<GenId> = idx.iter().map(|&i| sorted[i]).collect();
        out.push(FreeWord::from_letters(&letters));
        for pos in (0..len).rev() {
            idx[pos] += 1;
            if idx[pos] < k {
                break;
            }
            idx[pos] = 0;
        }
    }
    out
}
