//! Near-conjugacy of unitary representations from nearly equal characters.
//!
//! Given `rho0` (irreducible) and `rho` whose traces agree to `eps` on the
//! product set `G0` of a spanning word basis, build a unitary `P` with
//! `rho0(g) ≈ P rho(g) P*`:
//!
//! 1. express `u` in the span of `rho0`'s basis images and map it to the
//!    same combination of `rho`'s images (the map `A`);
//! 2. pick `z`, the top right singular vector of `A(e1 e1*)`;
//! 3. `Q x = A(x e1*) z`, rescaled by `|<z, A(e1 e1*) z>|^{-1/2}`;
//! 4. `P` is the inverse of the unitary factor of `Q`.
//!
//! `Q` intertwines `rho0` and `rho` up to `O(eps)`, so the residual of `P`
//! is linear in `eps`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::freemonoid::{build_G0, build_G0_prime, words_of_length, CharTable, FreeWord, GenId, GeneratingSet};
use crate::matalg::{
    condition_number, gram_matrix, gram_solve_with, nullity, operator_norm, polar_unitary, svd, synthesize, top_singular_vector, CMatrix, ChainProduct,
    MatError, UnitaryMatrix, C64, ONE, ZERO,
};
use crate::tol::Tolerances;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RepError {
    #[error("span rank still growing at max word length {max_len} (rank {rank})")]
    SpanNotSaturated { max_len: usize, rank: usize },
    #[error("reference representation is not irreducible (commutant dimension {commutant_dim})")]
    NotIrreducible { commutant_dim: usize },
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("|A(w w*) z|^2 = {value:e} <= 1/(2r) = {threshold:e}; character discrepancy too large")]
    DegenerateZ { value: f64, threshold: f64 },
    #[error("word {0} missing from character table")]
    MissingWord(String),
    #[error("generator {0} has no image")]
    UnknownGenerator(GenId),
    #[error(transparent)]
    Matrix(#[from] MatError),
}

/// Unitary images of generators; evaluated multiplicatively on words.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UnitaryRep {
    dim: usize,
    images: BTreeMap<GenId, UnitaryMatrix>,
}

impl UnitaryRep {
    pub fn new(dim: usize, images: BTreeMap<GenId, UnitaryMatrix>) -> Result<Self, RepError> {
        for u in images.values() {
            if u.dim() != dim {
                return Err(RepError::DimensionMismatch(dim, u.dim()));
            }
        }
        Ok(UnitaryRep { dim, images })
    }

    pub fn from_list(images: Vec<UnitaryMatrix>) -> Result<Self, RepError> {
        let dim = images.first().map_or(0, |u| u.dim());
        Self::new(dim, images.into_iter().enumerate().map(|(i, u)| (i as GenId, u)).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn generators(&self) -> Vec<GenId> {
        self.images.keys().copied().collect()
    }

    pub fn image(&self, g: GenId) -> Option<&UnitaryMatrix> {
        self.images.get(&g)
    }

    pub fn images(&self) -> &BTreeMap<GenId, UnitaryMatrix> {
        &self.images
    }

    /// `rho(w) = rho(g_1)^{k_1} ... rho(g_n)^{k_n}`.
    pub fn eval(&self, w: &FreeWord) -> Result<UnitaryMatrix, RepError> {
        let mut chain = ChainProduct::new(self.dim);
        for &(g, k) in w.factors() {
            let u = self.images.get(&g).ok_or(RepError::UnknownGenerator(g))?;
            for _ in 0..k {
                chain.push_right(u.matrix());
            }
        }
        Ok(chain.finish())
    }

    pub fn character(&self, w: &FreeWord) -> Result<C64, RepError> {
        Ok(self.eval(w)?.matrix().trace())
    }

    pub fn char_table<'a>(&self, words: impl IntoIterator<Item = &'a FreeWord>) -> Result<CharTable, RepError> {
        let mut t = CharTable::new();
        for w in words {
            t.insert(w.clone(), self.character(w)?);
        }
        Ok(t)
    }

    /// `U rho U*`.
    pub fn conjugated(&self, u: &UnitaryMatrix) -> Self {
        let images = self.images.iter().map(|(&g, m)| (g, UnitaryMatrix::trusted(&(u.matrix() * m.matrix()) * &u.matrix().adjoint()))).collect();
        UnitaryRep { dim: self.dim, images }
    }

    /// Direct sum with another representation on the same generators.
    pub fn direct_sum(&self, other: &UnitaryRep) -> Result<Self, RepError> {
        let n = self.dim + other.dim;
        let mut images = BTreeMap::new();
        for (&g, a) in &self.images {
            let b = other.images.get(&g).ok_or(RepError::UnknownGenerator(g))?;
            let m = CMatrix::from_fn(n, n, |i, j| match (i < self.dim, j < self.dim) {
                (true, true) => a.matrix()[(i, j)],
                (false, false) => b.matrix()[(i - self.dim, j - self.dim)],
                _ => ZERO,
            });
            images.insert(g, UnitaryMatrix::trusted(m));
        }
        Ok(UnitaryRep { dim: n, images })
    }
}

/// Words whose images span the image algebra, with their Gram matrix.
#[derive(Clone, Debug)]
pub struct SpanBasis {
    pub words: GeneratingSet,
    pub images: Vec<CMatrix>,
    pub gram: CMatrix,
    pub n0: usize,
}

/// Smallest singular value of the Gram matrix of unit-normalized images,
/// relative to the largest. Zero means rank-deficient.
fn normalized_gram_floor(images: &[CMatrix]) -> f64 {
    let normalized: Vec<CMatrix> = images.iter().map(|m| m.scale_re(1.0 / m.frob_norm().max(1e-300))).collect();
    let s = svd(&gram_matrix(&normalized)).s;
    s.last().copied().unwrap_or(0.0) / s[0].max(1e-300)
}

/// Greedy length-then-lexicographic scan keeping every word whose image
/// raises the rank of the span.
pub fn select_spanning_words(rep: &UnitaryRep, max_len: usize) -> Result<SpanBasis, RepError> {
    select_spanning_words_with(rep, max_len, &Tolerances::DEFAULT)
}

pub fn select_spanning_words_with(rep: &UnitaryRep, max_len: usize, tol: &Tolerances) -> Result<SpanBasis, RepError> {
    let alphabet = rep.generators();
    let full = rep.dim * rep.dim;
    let mut words = Vec::new();
    let mut images: Vec<CMatrix> = Vec::new();
    let mut grew_last = true;
    for len in 1..=max_len.max(1) {
        let mut grew = false;
        for w in words_of_length(&alphabet, len) {
            if images.len() == full {
                break;
            }
            let img = rep.eval(&w)?.into_matrix();
            images.push(img);
            if normalized_gram_floor(&images) > tol.rank {
                words.push(w);
                grew = true;
            } else {
                images.pop();
            }
        }
        grew_last = grew;
        if images.len() == full || !grew {
            break;
        }
    }
    if grew_last && images.len() < full {
        // Rank grew on the final level scanned, so saturation is unproven.
        return Err(RepError::SpanNotSaturated { max_len, rank: images.len() });
    }
    let gram = gram_matrix(&images);
    let n0 = images.len();
    Ok(SpanBasis { words: GeneratingSet::new(words), images, gram, n0 })
}

/// `M_ij = chi(g_i g_j)`.
pub fn char_matrix(rep: &UnitaryRep, basis_words: &GeneratingSet) -> Result<CMatrix, RepError> {
    let n = basis_words.len();
    let mut m = CMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let w = crate::freemonoid::concat(&basis_words.words[i], &basis_words.words[j]);
            m[(i, j)] = rep.character(&w)?;
        }
    }
    Ok(m)
}

/// Coordinates of `rho(g)` in the basis images.
pub fn coeffs(basis: &SpanBasis, g: &FreeWord, rep: &UnitaryRep) -> Result<Vec<C64>, RepError> {
    let target = rep.eval(g)?.into_matrix();
    Ok(gram_solve_with(&basis.images, &target, &Tolerances::DEFAULT)?)
}

/// `A(u) = sum_j c_j rho(g_j)` where `u = sum_j c_j rho0(g_j)`.
#[allow(non_snake_case)]
pub fn apply_A(basis0: &SpanBasis, rep: &UnitaryRep, u: &CMatrix) -> Result<CMatrix, RepError> {
    let images: Vec<CMatrix> = basis0.words.words.iter().map(|w| rep.eval(w).map(UnitaryMatrix::into_matrix)).collect::<Result<_, _>>()?;
    apply_A_with_images(basis0, &images, u)
}

#[allow(non_snake_case)]
fn apply_A_with_images(basis0: &SpanBasis, images: &[CMatrix], u: &CMatrix) -> Result<CMatrix, RepError> {
    let c = gram_solve_with(&basis0.images, u, &Tolerances::DEFAULT)?;
    Ok(synthesize(images, &c))
}

/// True iff the commutant of the basis images is `C·I`.
pub fn check_irreducible(rep: &UnitaryRep, basis: &SpanBasis) -> bool {
    commutant_dimension(rep.dim, &basis.images, Tolerances::DEFAULT.rank) == 1
}

/// Dimension of `{X : X M = M X for all M}`, by stacking the linear maps
/// `vec(X) -> vec(XM - MX)` and counting small singular values.
pub fn commutant_dimension(r: usize, mats: &[CMatrix], rank_tol: f64) -> usize {
    if r == 0 {
        return 0;
    }
    if mats.is_empty() {
        return r * r;
    }
    let n = r * r;
    let mut big = CMatrix::zeros(mats.len() * n, n);
    for (b, m) in mats.iter().enumerate() {
        // column (p*r + q) is X = E_pq
        for p in 0..r {
            for q in 0..r {
                let col = p * r + q;
                // (E_pq M)_{ij} = delta_ip M_qj ; (M E_pq)_{ij} = M_ip delta_qj
                for i in 0..r {
                    for j in 0..r {
                        let mut v = ZERO;
                        if i == p {
                            v += m[(q, j)];
                        }
                        if j == q {
                            v -= m[(i, p)];
                        }
                        big[(b * n + i * r + j, col)] = v;
                    }
                }
            }
        }
    }
    nullity(&big, rank_tol)
}

/// `max_w |chi0(w) - chi(w)|`.
pub fn char_discrepancy<'a>(t0: &CharTable, t: &CharTable, words: impl IntoIterator<Item = &'a FreeWord>) -> Result<f64, RepError> {
    let mut worst = 0.0f64;
    for w in words {
        let a = t0.get(w).ok_or_else(|| RepError::MissingWord(w.to_string()))?;
        let b = t.get(w).ok_or_else(|| RepError::MissingWord(w.to_string()))?;
        worst = worst.max((a - b).norm());
    }
    Ok(worst)
}

/// Result of [`near_conjugacy`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConjugacyReport {
    /// `rho0(g) ≈ P rho(g) P*`, phase-fixed so `tr P` is real and nonnegative.
    pub p: UnitaryMatrix,
    /// `max_{g in G0'} ||rho0(g) - P rho(g) P*||_op`.
    pub residual: f64,
    /// Same maximum in Frobenius norm, kept for diagnostics.
    pub residual_frobenius: f64,
    /// Measured character discrepancy on the supplied words.
    pub epsilon: f64,
    pub m0_condition: f64,
    pub gram_condition: f64,
    pub omega_index: usize,
    pub a_omega_z_norm: f64,
    pub n0: usize,
}

impl ConjugacyReport {
    /// Flat JSON record with sorted keys; `P` row-major as `[re, im]` pairs.
    pub fn to_json(&self) -> serde_json::Value {
        let m = self.p.matrix();
        let entries: Vec<[f64; 2]> = m.data().iter().map(|z| [z.re, z.im]).collect();
        serde_json::json!({
            "residual": self.residual,
            "residual_frobenius": self.residual_frobenius,
            "epsilon": self.epsilon,
            "m0_condition": self.m0_condition,
            "gram_condition": self.gram_condition,
            "omega_index": self.omega_index,
            "a_omega_z_norm": self.a_omega_z_norm,
            "n0": self.n0,
            "dim": m.rows(),
            "p_row_major": entries,
        })
    }
}

/// Word length searched for a spanning basis inside [`near_conjugacy`].
pub const DEFAULT_SPAN_LEN: usize = 6;

pub fn near_conjugacy<'a>(rep0: &UnitaryRep, rep: &UnitaryRep, words_for_eps: impl IntoIterator<Item = &'a FreeWord>) -> Result<ConjugacyReport, RepError> {
    let words: Vec<FreeWord> = words_for_eps.into_iter().cloned().collect();
    if rep0.dim() != rep.dim() {
        return Err(RepError::DimensionMismatch(rep0.dim(), rep.dim()));
    }
    let basis0 = select_spanning_words(rep0, DEFAULT_SPAN_LEN)?;
    near_conjugacy_with_basis(rep0, rep, &basis0, &words)
}

/// [`near_conjugacy`] with a precomputed basis for `rep0`. An empty word
/// list measures the discrepancy over `G0` of the basis.
pub fn near_conjugacy_with_basis(rep0: &UnitaryRep, rep: &UnitaryRep, basis0: &SpanBasis, words_for_eps: &[FreeWord]) -> Result<ConjugacyReport, RepError> {
    let r = rep0.dim();
    if r != rep.dim() {
        return Err(RepError::DimensionMismatch(r, rep.dim()));
    }
    let commutant_dim = commutant_dimension(r, &basis0.images, Tolerances::DEFAULT.rank);
    if commutant_dim != 1 {
        return Err(RepError::NotIrreducible { commutant_dim });
    }
    let g0 = build_G0(&basis0.words);
    let eps_words: Vec<FreeWord> = if words_for_eps.is_empty() { g0.iter().cloned().collect() } else { words_for_eps.to_vec() };
    let t0 = rep0.char_table(&eps_words)?;
    let t1 = rep.char_table(&eps_words)?;
    let epsilon = char_discrepancy(&t0, &t1, &eps_words)?;

    let images: Vec<CMatrix> = basis0.words.words.iter().map(|w| rep.eval(w).map(UnitaryMatrix::into_matrix)).collect::<Result<_, _>>()?;

    let omega_index = 0usize;
    let mut omega = vec![ZERO; r];
    omega[omega_index] = ONE;
    let a_ww = apply_A_with_images(basis0, &images, &CMatrix::outer(&omega, &omega))?;
    let (z, sigma) = top_singular_vector(&a_ww)?;
    let threshold = 1.0 / (2.0 * r as f64);
    if sigma * sigma <= threshold {
        return Err(RepError::DegenerateZ { value: sigma * sigma, threshold });
    }
    let az = a_ww.matvec(&z);
    let zaz: C64 = z.iter().zip(&az).map(|(a, b)| a.conj() * b).sum();
    let scale = zaz.norm().powf(-0.5);

    let mut q = CMatrix::zeros(r, r);
    for k in 0..r {
        let mut ek = vec![ZERO; r];
        ek[k] = ONE;
        let col = apply_A_with_images(basis0, &images, &CMatrix::outer(&ek, &omega))?.matvec(&z);
        q.set_column(k, &col.iter().map(|c| c * scale).collect::<Vec<_>>());
    }
    let w = polar_unitary(&q, 1e-12)?;
    let mut p = w.adjoint().into_matrix();
    let tr = p.trace();
    if tr.norm() > 1e-14 {
        p = p.scale(tr.conj() / tr.norm());
    }
    let p = UnitaryMatrix::trusted(p);

    let g0_prime: BTreeSet<FreeWord> = build_G0_prime(&g0, &basis0.words);
    let (residual, residual_frobenius) = conjugacy_residual(rep0, rep, &p, g0_prime.iter())?;
    let m0 = char_matrix(rep0, &basis0.words)?;
    Ok(ConjugacyReport {
        p,
        residual,
        residual_frobenius,
        epsilon,
        m0_condition: condition_number(&m0),
        gram_condition: condition_number(&basis0.gram),
        omega_index,
        a_omega_z_norm: sigma,
        n0: basis0.n0,
    })
}

/// `(max ||rho0(g) - P rho(g) P*||_op, same in Frobenius)` over `words`.
pub fn conjugacy_residual<'a>(
    rep0: &UnitaryRep,
    rep: &UnitaryRep,
    p: &UnitaryMatrix,
    words: impl IntoIterator<Item = &'a FreeWord>,
) -> Result<(f64, f64), RepError> {
    let pm = p.matrix();
    let ph = pm.adjoint();
    let mut op = 0.0f64;
    let mut fr = 0.0f64;
    for w in words {
        let a = rep0.eval(w)?.into_matrix();
        let b = &(pm * rep.eval(w)?.matrix()) * &ph;
        let d = &a - &b;
        op = op.max(operator_norm(&d));
        fr = fr.max(d.frob_norm());
    }
    Ok((op, fr))
}
