//! Wilson-loop inversion on a closed genus-2 surface: the regular-octagon
//! Fuchsian group, closed geodesics by word, flat unitary connections,
//! line-bundle recovery with winding integers, and sampled moduli distances.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matalg::{expm, operator_norm, svd, CMatrix, MatError, UnitaryMatrix, C64, ONE};
use crate::repstab::{check_irreducible, select_spanning_words, RepError, UnitaryRep};
use crate::rng::{random_skew, random_unitary, stage_rng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurfaceError {
    #[error("basis classes do not form a unimodular homology basis")]
    DegenerateBasis,
    #[error("no Wilson data for class {0}")]
    MissingClass(String),
    #[error("connection has {have} generator images, the surface needs {need}")]
    GeneratorCount { have: usize, need: usize },
    #[error("reference connection is not irreducible")]
    NotIrreducible,
    #[error("flatness projection stalled at relator defect {0:e}")]
    NotFlat(f64),
    #[error("bad word {0:?}")]
    BadWord(String),
    #[error(transparent)]
    Rep(#[from] RepError),
    #[error(transparent)]
    Matrix(#[from] MatError),
}

/// Reduced word in `a_1, b_1, ..., a_g, b_g`: letter `2i+1` is `a_{i+1}`,
/// `2i+2` is `b_{i+1}`, negatives are inverses.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct SurfaceWord(pub Vec<i8>);

impl SurfaceWord {
    /// Free reduction of an arbitrary letter list.
    pub fn reduced(letters: &[i8]) -> Self {
        let mut out: Vec<i8> = Vec::with_capacity(letters.len());
        for &l in letters {
            if out.last() == Some(&-l) {
                out.pop();
            } else {
                out.push(l);
            }
        }
        SurfaceWord(out)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn inverse(&self) -> Self {
        SurfaceWord(self.0.iter().rev().map(|l| -l).collect())
    }

    pub fn rotate(&self, k: usize) -> Self {
        if self.0.is_empty() {
            return self.clone();
        }
        let k = k % self.0.len();
        SurfaceWord(self.0[k..].iter().chain(&self.0[..k]).copied().collect())
    }

    pub fn is_cyclically_reduced(&self) -> bool {
        let w = &self.0;
        w.windows(2).all(|p| p[0] != -p[1]) && (w.len() < 2 || w[0] != -w[w.len() - 1])
    }

    /// Not a proper power of a shorter word.
    pub fn is_primitive(&self) -> bool {
        let n = self.0.len();
        (1..n).filter(|d| n.is_multiple_of(*d)).all(|d| self.0[..n - d] != self.0[d..])
    }

    pub fn min_rotation(&self) -> Self {
        (0..self.0.len().max(1)).map(|k| self.rotate(k)).min().unwrap_or_default()
    }

    /// The surface relator `[a_1, b_1] ... [a_g, b_g]`.
    pub fn relator(genus: usize) -> Self {
        let mut w = Vec::with_capacity(4 * genus);
        for i in 0..genus as i8 {
            let (a, b) = (2 * i + 1, 2 * i + 2);
            w.extend_from_slice(&[a, b, -a, -b]);
        }
        SurfaceWord(w)
    }
}

fn letter_name(l: i8) -> String {
    let g = l.unsigned_abs() - 1;
    let base = format!("{}{}", if g.is_multiple_of(2) { 'a' } else { 'b' }, g / 2 + 1);
    if l < 0 {
        format!("{base}^-1")
    } else {
        base
    }
}

impl fmt::Display for SurfaceWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "1");
        }
        let names: Vec<String> = self.0.iter().map(|&l| letter_name(l)).collect();
        write!(f, "{}", names.join("."))
    }
}

impl FromStr for SurfaceWord {
    type Err = SurfaceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() || s == "1" {
            return Ok(SurfaceWord::default());
        }
        let mut letters = Vec::new();
        for part in s.split('.') {
            let bad = || SurfaceError::BadWord(part.to_string());
            let (body, inv) = match part.strip_suffix("^-1") {
                Some(b) => (b, true),
                None => (part, false),
            };
            let kind = match body.chars().next() {
                Some('a') => 0,
                Some('b') => 1,
                _ => return Err(bad()),
            };
            let idx: i8 = body[1..].parse().map_err(|_| bad())?;
            if idx < 1 {
                return Err(bad());
            }
            let l = 2 * (idx - 1) + kind + 1;
            letters.push(if inv { -l } else { l });
        }
        Ok(SurfaceWord::reduced(&letters))
    }
}

impl Serialize for SurfaceWord {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for SurfaceWord {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Signed exponent sums in the basis `(a_1, b_1, ..., a_g, b_g)`.
pub fn homology_vector(word: &SurfaceWord, genus: usize) -> Vec<i64> {
    let mut v = vec![0i64; 2 * genus];
    for &l in &word.0 {
        v[(l.unsigned_abs() - 1) as usize] += l.signum() as i64;
    }
    v
}

pub type Real2 = [[f64; 2]; 2];

fn mul2(a: &Real2, b: &Real2) -> Real2 {
    [
        [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
        [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
    ]
}

fn inv2(a: &Real2) -> Real2 {
    // determinant one
    [[a[1][1], -a[0][1]], [-a[1][0], a[0][0]]]
}

/// The genus-2 surface group acting on the upper half plane by the
/// regular-octagon (Bolza) generators.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FuchsianModel {
    pub genus: usize,
    /// `SL(2, R)` images of `a_1, b_1, a_2, b_2`.
    pub generators: Vec<Real2>,
    /// Longest word scanned by [`enumerate_geodesics`].
    pub max_letters: usize,
}

impl FuchsianModel {
    pub fn bolza() -> Self {
        let alpha = 1.0 + SQRT_2;
        let beta = (2.0 + 2.0 * SQRT_2).sqrt();
        // disc-model translations across opposite octagon sides
        let t = |k: i32| {
            let ph = C64::from_polar(1.0, k as f64 * PI / 4.0);
            CMatrix::from_rows(&[vec![C64::new(alpha, 0.0), ph * beta], vec![ph.conj() * beta, C64::new(alpha, 0.0)]])
        };
        let inv = |m: &CMatrix| CMatrix::from_rows(&[vec![m[(1, 1)], -m[(0, 1)]], vec![-m[(1, 0)], m[(0, 0)]]]);
        let (t0, t1, t2, t3) = (t(0), t(1), t(2), t(3));
        let disc = [&inv(&t2) * &t3, &(&t0 * &inv(&t1)) * &t2, t0.clone(), inv(&t1)];
        // disc to half plane
        let s = 1.0 / SQRT_2;
        let c = CMatrix::from_rows(&[vec![C64::new(s, 0.0), C64::new(0.0, s)], vec![C64::new(0.0, s), C64::new(s, 0.0)]]);
        let generators = disc
            .iter()
            .map(|m| {
                let h = &(&c.adjoint() * m) * &c;
                [[h[(0, 0)].re, h[(0, 1)].re], [h[(1, 0)].re, h[(1, 1)].re]]
            })
            .collect();
        FuchsianModel { genus: 2, generators, max_letters: 6 }
    }

    pub fn eval(&self, w: &SurfaceWord) -> Real2 {
        let mut acc = [[1.0, 0.0], [0.0, 1.0]];
        for &l in &w.0 {
            let g = &self.generators[(l.unsigned_abs() - 1) as usize];
            acc = mul2(&acc, &if l > 0 { *g } else { inv2(g) });
        }
        acc
    }

    /// `2 arccosh(|tr| / 2)`; zero for non-hyperbolic words.
    pub fn length(&self, w: &SurfaceWord) -> f64 {
        let m = self.eval(w);
        let t = (m[0][0] + m[1][1]).abs() / 2.0;
        if t <= 1.0 {
            0.0
        } else {
            2.0 * t.acosh()
        }
    }

    pub fn relator_defect(&self) -> f64 {
        let m = self.eval(&SurfaceWord::relator(self.genus));
        let s = if m[0][0] > 0.0 { 1.0 } else { -1.0 };
        let d = [[m[0][0] - s, m[0][1]], [m[1][0], m[1][1] - s]];
        d.iter().flatten().fold(0.0f64, |a, x| a.max(x.abs()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeodesicClass {
    pub word: SurfaceWord,
    pub length: f64,
}

fn reduced_words(n: usize, letters: i8, out: &mut Vec<SurfaceWord>, prefix: &mut Vec<i8>) {
    if prefix.len() == n {
        let w = SurfaceWord(prefix.clone());
        if w.is_cyclically_reduced() && w.is_primitive() && w.min_rotation() == w {
            out.push(w);
        }
        return;
    }
    for l in (-letters..=letters).filter(|&l| l != 0) {
        if prefix.last() == Some(&-l) {
            continue;
        }
        // the first letter must be the smallest letter of a minimal rotation
        if let Some(&first) = prefix.first() {
            if l < first {
                continue;
            }
        }
        prefix.push(l);
        reduced_words(n, letters, out, prefix);
        prefix.pop();
    }
}

/// Primitive closed geodesics of length at most `l_max`, one word per class,
/// scanning words up to `model.max_letters` letters.
///
/// Cyclic rotation only identifies conjugates in the free group. Words that
/// the surface relator makes conjugate are merged by a fingerprint that every
/// class function shares: the geodesic length and the trace under a fixed
/// generic flat `U(3)` connection. The fewest-letter, then lexicographically
/// smallest, word represents each class.
pub fn enumerate_geodesics(model: &FuchsianModel, l_max: f64) -> Vec<GeodesicClass> {
    let letters = 2 * model.genus as i8;
    let mut found: Vec<GeodesicClass> = (1..=model.max_letters)
        .into_par_iter()
        .flat_map_iter(|n| {
            let mut words = Vec::new();
            reduced_words(n, letters, &mut words, &mut Vec::with_capacity(n));
            words
                .into_iter()
                .filter_map(|w| {
                    let length = model.length(&w);
                    (length > 1e-6 && length <= l_max).then_some(GeodesicClass { word: w, length })
                })
                .collect::<Vec<_>>()
        })
        .collect();
    found.sort_by(class_order);
    let probe = fingerprint_connection(model.genus);
    let mut out: Vec<GeodesicClass> = Vec::new();
    let mut cluster: Vec<(usize, C64)> = Vec::new();
    for class in found {
        let trace = probe.eval(&class.word).trace();
        if cluster.first().is_some_and(|&(i, _)| length_key(&out[i]) != length_key(&class)) {
            cluster.clear();
        }
        if cluster.iter().any(|&(_, t)| (t - trace).norm() < 1e-8) {
            continue;
        }
        cluster.push((out.len(), trace));
        out.push(class);
    }
    out
}

/// Lengths agree to about `1e-7` across words of one class.
fn length_key(c: &GeodesicClass) -> i64 {
    (c.length * 1e7).round() as i64
}

fn class_order(a: &GeodesicClass, b: &GeodesicClass) -> std::cmp::Ordering {
    length_key(a).cmp(&length_key(b)).then_with(|| a.word.len().cmp(&b.word.len())).then_with(|| a.word.cmp(&b.word))
}

fn fingerprint_connection(genus: usize) -> FlatConnection {
    let mut rng = stage_rng(0x5eed, "geodesic_fingerprint");
    random_flat(&mut rng, 3, genus).expect("generic flat U(3) connection exists")
}

/// Unitary images of `a_1, b_1, ..., a_g, b_g` with trivial relator image.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlatConnection {
    pub rank: usize,
    pub images: Vec<UnitaryMatrix>,
}

impl FlatConnection {
    pub fn trivial(rank: usize, genus: usize) -> Self {
        FlatConnection { rank, images: vec![UnitaryMatrix::identity(rank); 2 * genus] }
    }

    /// Rank-one connection with holonomy `e^{i theta_j}` on generator `j`.
    pub fn abelian(angles: &[f64]) -> Self {
        let images = angles.iter().map(|&t| UnitaryMatrix::trusted(CMatrix::from_vec(1, 1, vec![C64::from_polar(1.0, t)]))).collect();
        FlatConnection { rank: 1, images }
    }

    pub fn genus(&self) -> usize {
        self.images.len() / 2
    }

    pub fn eval(&self, w: &SurfaceWord) -> CMatrix {
        let mut acc = CMatrix::identity(self.rank);
        for &l in &w.0 {
            let g = self.images[(l.unsigned_abs() - 1) as usize].matrix();
            acc = if l > 0 { &acc * g } else { &acc * &g.adjoint() };
        }
        acc
    }

    pub fn relator_defect(&self) -> f64 {
        operator_norm(&(&self.eval(&SurfaceWord::relator(self.genus())) - &CMatrix::identity(self.rank)))
    }

    pub fn conjugated(&self, p: &UnitaryMatrix) -> Self {
        let images = self.images.iter().map(|g| UnitaryMatrix::trusted(&(p.matrix() * g.matrix()) * &p.matrix().adjoint())).collect();
        FlatConnection { rank: self.rank, images }
    }

    pub fn to_rep(&self) -> Result<UnitaryRep, RepError> {
        UnitaryRep::from_list(self.images.clone())
    }

    pub fn is_irreducible(&self) -> Result<bool, RepError> {
        if self.rank == 1 {
            return Ok(true);
        }
        let rep = self.to_rep()?;
        let basis = select_spanning_words(&rep, 4)?;
        Ok(check_irreducible(&rep, &basis))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeodesicWilson {
    pub word: SurfaceWord,
    pub length: f64,
    pub trace: C64,
}

pub fn wilson_flat(conn: &FlatConnection, class: &GeodesicClass) -> GeodesicWilson {
    GeodesicWilson { word: class.word.clone(), length: class.length, trace: conn.eval(&class.word).trace() }
}

pub fn wilson_table(conn: &FlatConnection, classes: &[GeodesicClass]) -> Vec<GeodesicWilson> {
    classes.iter().map(|c| wilson_flat(conn, c)).collect()
}

/// `sup |W_1 - W_2| / length` over shared classes.
pub fn wilson_discrepancy(w1: &[GeodesicWilson], w2: &[GeodesicWilson]) -> f64 {
    w1.iter().zip(w2).map(|(a, b)| (a.trace - b.trace).norm() / a.length).fold(0.0, f64::max)
}

fn int_det(m: &[Vec<i64>]) -> i64 {
    let n = m.len();
    if n == 0 {
        return 1;
    }
    if n == 1 {
        return m[0][0];
    }
    (0..n)
        .map(|j| {
            let minor: Vec<Vec<i64>> = m[1..].iter().map(|row| row.iter().enumerate().filter(|&(k, _)| k != j).map(|(_, &x)| x).collect()).collect();
            let sign = if j % 2 == 0 { 1 } else { -1 };
            sign * m[0][j] * int_det(&minor)
        })
        .sum()
}

/// Inverse of a unimodular integer matrix.
fn unimodular_inverse(m: &[Vec<i64>]) -> Option<Vec<Vec<i64>>> {
    let n = m.len();
    let det = int_det(m);
    if det.abs() != 1 {
        return None;
    }
    let cof = |i: usize, j: usize| {
        let minor: Vec<Vec<i64>> =
            m.iter().enumerate().filter(|&(r, _)| r != i).map(|(_, row)| row.iter().enumerate().filter(|&(c, _)| c != j).map(|(_, &x)| x).collect()).collect();
        if (i + j).is_multiple_of(2) {
            int_det(&minor)
        } else {
            -int_det(&minor)
        }
    };
    Some((0..n).map(|i| (0..n).map(|j| cof(j, i) * det).collect()).collect())
}

/// First `2g` classes (in combination order over the shortest ones) whose
/// homology vectors form a unimodular basis.
pub fn select_unimodular_basis(classes: &[GeodesicClass], genus: usize) -> Result<Vec<SurfaceWord>, SurfaceError> {
    let pool: Vec<&GeodesicClass> = classes.iter().take(24).collect();
    let k = 2 * genus;
    let mut idx: Vec<usize> = (0..k).collect();
    if pool.len() < k {
        return Err(SurfaceError::DegenerateBasis);
    }
    loop {
        let rows: Vec<Vec<i64>> = idx.iter().map(|&i| homology_vector(&pool[i].word, genus)).collect();
        if int_det(&rows).abs() == 1 {
            return Ok(idx.iter().map(|&i| pool[i].word.clone()).collect());
        }
        // next combination
        let mut i = k;
        loop {
            if i == 0 {
                return Err(SurfaceError::DegenerateBasis);
            }
            i -= 1;
            if idx[i] < pool.len() - k + i {
                break;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbelianRecovery {
    /// Holonomy angles of the generators, in `[0, 2 pi)`.
    pub angles: Vec<f64>,
    /// `k_i` with `<theta, v_i> = arg W_i + 2 pi k_i` on the basis classes.
    pub windings: Vec<i64>,
    /// `max |W - e^{i <theta, v>}| / length` over the other classes.
    pub residual: f64,
}

fn wrap_angle(t: f64) -> f64 {
    t.rem_euclid(2.0 * PI)
}

/// Rank-one Wilson inversion. Because the basis is unimodular, the angles
/// mod `2 pi` do not depend on the winding integers; these are read off
/// afterwards.
pub fn abelian_recover(data: &[GeodesicWilson], basis: &[SurfaceWord], genus: usize) -> Result<AbelianRecovery, SurfaceError> {
    if basis.len() != 2 * genus {
        return Err(SurfaceError::DegenerateBasis);
    }
    let lookup = |w: &SurfaceWord| data.iter().find(|d| &d.word == w).ok_or_else(|| SurfaceError::MissingClass(w.to_string()));
    let rows: Vec<Vec<i64>> = basis.iter().map(|w| homology_vector(w, genus)).collect();
    let inv = unimodular_inverse(&rows).ok_or(SurfaceError::DegenerateBasis)?;
    let phases: Vec<f64> = basis.iter().map(|w| lookup(w).map(|d| d.trace.arg())).collect::<Result<_, _>>()?;
    let angles: Vec<f64> = inv.iter().map(|row| wrap_angle(row.iter().zip(&phases).map(|(&a, &p)| a as f64 * p).sum())).collect();
    let pairing = |v: &[i64]| v.iter().zip(&angles).map(|(&a, &t)| a as f64 * t).sum::<f64>();
    let windings = rows.iter().zip(&phases).map(|(v, p)| ((pairing(v) - p) / (2.0 * PI)).round() as i64).collect();
    let residual = data
        .iter()
        .filter(|d| !basis.contains(&d.word))
        .map(|d| (d.trace - C64::from_polar(1.0, pairing(&homology_vector(&d.word, genus)))).norm() / d.length)
        .fold(0.0, f64::max);
    Ok(AbelianRecovery { angles, windings, residual })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModuliDistance {
    pub value: f64,
    pub converged: bool,
}

fn conj_cost(u: &CMatrix, a: &[CMatrix], b: &[CMatrix]) -> (f64, CMatrix) {
    let mut f = 0.0;
    let mut m = CMatrix::zeros(u.rows(), u.rows());
    for (ai, bi) in a.iter().zip(b) {
        let c = &(u * ai) * &u.adjoint();
        let d = &c - bi;
        f += d.frob_norm().powi(2);
        m = &m + &(&(&c * &d.adjoint()) - &(&d.adjoint() * &c));
    }
    (f, m)
}

fn max_gap(u: &CMatrix, a: &[CMatrix], b: &[CMatrix]) -> f64 {
    a.iter().zip(b).map(|(ai, bi)| operator_norm(&(&(&(u * ai) * &u.adjoint()) - bi))).fold(0.0, f64::max)
}

/// Sampled estimate of `inf_U max_i ||U g_i U* - h_i||` by Riemannian descent
/// on the summed squared Frobenius gap from several starts.
pub fn moduli_distance(c1: &FlatConnection, c2: &FlatConnection, restarts: usize, seed: u64) -> ModuliDistance {
    let a: Vec<CMatrix> = c1.images.iter().map(|g| g.matrix().clone()).collect();
    let b: Vec<CMatrix> = c2.images.iter().map(|g| g.matrix().clone()).collect();
    let r = c1.rank;
    let mut rng = stage_rng(seed, "moduli_distance");
    let mut starts = vec![CMatrix::identity(r)];
    starts.extend((0..restarts).map(|_| random_unitary(&mut rng, r).into_matrix()));
    let runs: Vec<ModuliDistance> = starts
        .into_par_iter()
        .map(|mut u| {
            let mut converged = false;
            let (mut f, mut m) = conj_cost(&u, &a, &b);
            for _ in 0..2000 {
                let dir = &m - &m.adjoint();
                let g2 = dir.frob_norm().powi(2);
                if g2 < 1e-28 || f < 1e-26 {
                    converged = true;
                    break;
                }
                let mut step = 0.5;
                let mut moved = false;
                while step > 1e-12 {
                    let cand = &expm(&dir.scale_re(step)) * &u;
                    let (fc, mc) = conj_cost(&cand, &a, &b);
                    if fc <= f - 1e-4 * step * g2 {
                        u = cand;
                        f = fc;
                        m = mc;
                        moved = true;
                        break;
                    }
                    step *= 0.5;
                }
                if !moved {
                    converged = true;
                    break;
                }
            }
            ModuliDistance { value: max_gap(&u, &a, &b), converged }
        })
        .collect();
    runs.into_iter().min_by(|x, y| x.value.total_cmp(&y.value)).expect("at least one start")
}

fn skew_basis(r: usize) -> Vec<CMatrix> {
    let mut out = Vec::with_capacity(r * r);
    let i = C64::new(0.0, 1.0);
    for j in 0..r {
        let mut m = CMatrix::zeros(r, r);
        m[(j, j)] = i;
        out.push(m);
        for k in j + 1..r {
            let mut re = CMatrix::zeros(r, r);
            re[(j, k)] = ONE;
            re[(k, j)] = -ONE;
            out.push(re);
            let mut im = CMatrix::zeros(r, r);
            im[(j, k)] = i;
            im[(k, j)] = i;
            out.push(im);
        }
    }
    out
}

/// Gauss-Newton projection onto the flat connections: each step moves
/// generator `i` by `exp(X_i)` with the minimum-norm skew-Hermitian `X`
/// solving the linearized relator equation.
pub fn project_flat(conn: &FlatConnection, steps: usize) -> FlatConnection {
    let r = conn.rank;
    let relator = SurfaceWord::relator(conn.genus());
    let basis = skew_basis(r);
    let mut g: Vec<CMatrix> = conn.images.iter().map(|u| u.matrix().clone()).collect();
    let letter = |g: &[CMatrix], l: i8| {
        let m = &g[(l.unsigned_abs() - 1) as usize];
        if l > 0 {
            m.clone()
        } else {
            m.adjoint()
        }
    };
    for _ in 0..steps {
        let factors: Vec<CMatrix> = relator.0.iter().map(|&l| letter(&g, l)).collect();
        let mut prefix = vec![CMatrix::identity(r)];
        for f in &factors {
            let next = prefix.last().expect("nonempty") * f;
            prefix.push(next);
        }
        let mut suffix = vec![CMatrix::identity(r); factors.len() + 1];
        for k in (0..factors.len()).rev() {
            suffix[k] = &factors[k] * &suffix[k + 1];
        }
        let residual = &prefix[factors.len()] - &CMatrix::identity(r);
        if residual.max_abs() < 1e-15 {
            break;
        }
        let ncols = g.len() * basis.len();
        let mut jac = CMatrix::zeros(2 * r * r, ncols);
        for (gi, _) in g.iter().enumerate() {
            for (bi, x) in basis.iter().enumerate() {
                let mut d = CMatrix::zeros(r, r);
                for (k, &l) in relator.0.iter().enumerate() {
                    if (l.unsigned_abs() - 1) as usize != gi {
                        continue;
                    }
                    let dl = if l > 0 { x * &factors[k] } else { (&factors[k] * x).scale_re(-1.0) };
                    d = &d + &(&(&prefix[k] * &dl) * &suffix[k + 1]);
                }
                let col = gi * basis.len() + bi;
                for (e, z) in d.data().iter().enumerate() {
                    jac[(2 * e, col)] = C64::new(z.re, 0.0);
                    jac[(2 * e + 1, col)] = C64::new(z.im, 0.0);
                }
            }
        }
        let rhs: Vec<f64> = residual.data().iter().flat_map(|z| [z.re, z.im]).collect();
        let dec = svd(&jac);
        let cutoff = dec.s.first().copied().unwrap_or(0.0) * 1e-10;
        let mut step = vec![0.0; ncols];
        for (k, &s) in dec.s.iter().enumerate() {
            if s <= cutoff {
                continue;
            }
            let proj: f64 = (0..rhs.len()).map(|i| dec.u[(i, k)].re * rhs[i]).sum::<f64>() / s;
            for (j, st) in step.iter_mut().enumerate() {
                *st -= dec.v[(j, k)].re * proj;
            }
        }
        for (gi, gm) in g.iter_mut().enumerate() {
            let mut x = CMatrix::zeros(r, r);
            for (bi, b) in basis.iter().enumerate() {
                x = &x + &b.scale_re(step[gi * basis.len() + bi]);
            }
            *gm = &expm(&x) * gm;
        }
    }
    FlatConnection { rank: r, images: g.into_iter().map(UnitaryMatrix::trusted).collect() }
}

/// Random flat connection of the given rank.
pub fn random_flat<R: Rng + ?Sized>(rng: &mut R, rank: usize, genus: usize) -> Result<FlatConnection, SurfaceError> {
    if rank == 1 {
        let angles: Vec<f64> = (0..2 * genus).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        return Ok(FlatConnection::abelian(&angles));
    }
    for _ in 0..8 {
        let raw = FlatConnection { rank, images: (0..2 * genus).map(|_| random_unitary(rng, rank)).collect() };
        let flat = project_flat(&raw, 100);
        if flat.relator_defect() < 1e-12 {
            return Ok(flat);
        }
    }
    Err(SurfaceError::NotFlat(f64::NAN))
}

/// Moves each generator by `exp(delta S_i)` with unit random skew `S_i`,
/// then restores flatness.
pub fn perturb_flat<R: Rng + ?Sized>(rng: &mut R, conn: &FlatConnection, delta: f64) -> Result<FlatConnection, SurfaceError> {
    let images = conn
        .images
        .iter()
        .map(|g| {
            let s = random_skew(rng, conn.rank);
            let s = s.scale_re(delta / s.frob_norm());
            UnitaryMatrix::trusted(&expm(&s) * g.matrix())
        })
        .collect();
    let moved = FlatConnection { rank: conn.rank, images };
    if conn.rank == 1 {
        return Ok(moved);
    }
    let flat = project_flat(&moved, 20);
    let defect = flat.relator_defect();
    if defect >= 1e-8 {
        return Err(SurfaceError::NotFlat(defect));
    }
    Ok(flat)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub delta: f64,
    pub epsilon: f64,
    pub distance: f64,
    /// Slope of `ln distance` against `ln epsilon` from the previous row.
    pub tau_local: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// Least-squares slope over rows with `0 < epsilon < 0.1`.
    pub tau_hat: Option<f64>,
    pub classes: usize,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("delta,epsilon,distance,tau_local\n");
        for r in &self.rows {
            let tau = r.tau_local.map(|t| format!("{t:e}")).unwrap_or_default();
            out.push_str(&format!("{:e},{:e},{:e},{}\n", r.delta, r.epsilon, r.distance, tau));
        }
        out
    }
}

/// Perturbs `conn0` by each size, measures the length-weighted Wilson
/// discrepancy and the moduli distance, and fits the exponent.
pub fn stability_sweep(conn0: &FlatConnection, model: &FuchsianModel, deltas: &[f64], l_max: f64, seed: u64) -> Result<SweepTable, SurfaceError> {
    if !conn0.is_irreducible()? {
        return Err(SurfaceError::NotIrreducible);
    }
    let classes = enumerate_geodesics(model, l_max);
    let reference = wilson_table(conn0, &classes);
    let rows: Vec<(f64, f64, f64)> = deltas
        .par_iter()
        .enumerate()
        .map(|(k, &delta)| {
            // one direction for every size, so rows differ only by scale
            let mut rng = stage_rng(seed, "sweep");
            let moved = if delta == 0.0 { conn0.clone() } else { perturb_flat(&mut rng, conn0, delta)? };
            let eps = wilson_discrepancy(&reference, &wilson_table(&moved, &classes));
            let dist = moduli_distance(conn0, &moved, 4, seed ^ k as u64).value;
            Ok((delta, eps, dist))
        })
        .collect::<Result<_, SurfaceError>>()?;
    let mut out = Vec::with_capacity(rows.len());
    for (i, &(delta, epsilon, distance)) in rows.iter().enumerate() {
        let tau_local = (i > 0)
            .then(|| {
                let (_, e0, d0) = rows[i - 1];
                let (de, dd) = (epsilon.ln() - e0.ln(), distance.ln() - d0.ln());
                (de.is_finite() && dd.is_finite() && de != 0.0).then_some(dd / de)
            })
            .flatten();
        out.push(SweepRow { delta, epsilon, distance, tau_local });
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = out.iter().filter(|r| r.epsilon > 0.0 && r.epsilon < 0.1).map(|r| (r.epsilon, r.distance)).unzip();
    let tau_hat = crate::livsic::fit_loglog(&xs, &ys);
    Ok(SweepTable { rows: out, tau_hat, classes: classes.len() })
}
