//! Unitary cocycles over the toral automorphism.
//!
//! A cocycle is a field `A: torus -> U(r)` and acts on fibers by
//! `T(x, n) = A(M^{n-1} x) ... A(M x) A(x)`. Stable and unstable
//! holonomies are the limits `T(y, n)^{-1} B T(x, n)` with a short bridge
//! `B` between `M^n x` and `M^n y`; Parry representations compose them
//! around homoclinic excursions of the fixed point 0.

use std::f64::consts::TAU;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{HomoclinicOrbit, HyperbolicMap, PeriodicOrbit, TorusPoint, Vec2, BRACKET_RADIUS};
use crate::freemonoid::{FreeWord, GenId};
use crate::matalg::{expm, expm_frechet, operator_norm, rows_serde, CMatrix, ChainProduct, UnitaryMatrix, C64};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CocycleError {
    #[error("invalid field: {0}")]
    InvalidField(String),
    #[error("ranks differ: {0} vs {1}")]
    RankMismatch(usize, usize),
    #[error("points are not on one local {leaf} leaf (transverse offset {offset:e})")]
    NotOnLeaf { leaf: &'static str, offset: f64 },
    #[error("tolerance {tol:e} unreachable: certified error at depth {depth} is {bound:e}")]
    TolUnreachable { tol: f64, depth: u32, bound: f64 },
    #[error("orbit list is empty")]
    EmptyOrbitList,
    #[error("generator {0} is not among the homoclinic orbits")]
    UnknownGenerator(GenId),
}

/// `sum_k S_k phi_k(x)`: `phi_k = cos(2 pi k.x)` for lexicographically
/// nonnegative `k`, `sin(2 pi |k|.x)` for negative `k`. Each `S_k` is
/// skew-Hermitian, so `exp` of the sum is unitary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigField {
    pub rank: usize,
    pub terms: Vec<TrigTerm>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigTerm(pub i64, pub i64, #[serde(with = "rows_serde")] pub CMatrix);

fn lex_nonnegative(k1: i64, k2: i64) -> bool {
    k1 > 0 || (k1 == 0 && k2 >= 0)
}

impl TrigField {
    pub fn zero(rank: usize) -> Self {
        TrigField { rank, terms: Vec::new() }
    }

    /// Random skew coefficients of Frobenius norm `amplitude` on the modes `(1,0), (0,1), (1,1), (-1,0), (0,-1)`.
    pub fn random<R: rand::Rng + ?Sized>(rng: &mut R, rank: usize, amplitude: f64) -> Self {
        let terms = [(1, 0), (0, 1), (1, 1), (-1, 0), (0, -1)]
            .into_iter()
            .map(|(k1, k2)| TrigTerm(k1, k2, crate::rng::random_skew(rng, rank).scale_re(amplitude)))
            .collect();
        TrigField { rank, terms }
    }

    pub fn validate(&self) -> Result<(), CocycleError> {
        for TrigTerm(k1, k2, s) in &self.terms {
            if s.rows() != self.rank || s.cols() != self.rank {
                return Err(CocycleError::InvalidField(format!("term ({k1}, {k2}) is {}x{}, rank is {}", s.rows(), s.cols(), self.rank)));
            }
            if (s + &s.adjoint()).max_abs() > 1e-12 * (1.0 + s.max_abs()) {
                return Err(CocycleError::InvalidField(format!("term ({k1}, {k2}) is not skew-Hermitian")));
            }
        }
        Ok(())
    }

    /// Logarithm `L(x)` and its derivative along `dir`.
    pub fn log_and_derivative(&self, x: &TorusPoint, dir: Vec2) -> (CMatrix, CMatrix) {
        let mut l = CMatrix::zeros(self.rank, self.rank);
        let mut dl = CMatrix::zeros(self.rank, self.rank);
        for TrigTerm(k1, k2, s) in &self.terms {
            let (phi, dphi) = basis_fn(*k1, *k2, x, dir);
            l = &l + &s.scale_re(phi);
            dl = &dl + &s.scale_re(dphi);
        }
        (l, dl)
    }

    pub fn log(&self, x: &TorusPoint) -> CMatrix {
        let mut l = CMatrix::zeros(self.rank, self.rank);
        for TrigTerm(k1, k2, s) in &self.terms {
            l = &l + &s.scale_re(basis_fn(*k1, *k2, x, [0.0, 0.0]).0);
        }
        l
    }

    /// Sum of `|k| ||S_k||_F`, a Lipschitz bound for the logarithm.
    pub fn gradient_bound(&self) -> f64 {
        self.terms.iter().map(|TrigTerm(k1, k2, s)| TAU * (*k1 as f64).hypot(*k2 as f64) * s.frob_norm()).sum()
    }
}

fn basis_fn(k1: i64, k2: i64, x: &TorusPoint, dir: Vec2) -> (f64, f64) {
    let (q1, q2) = if lex_nonnegative(k1, k2) { (k1, k2) } else { (-k1, -k2) };
    let phase = TAU * (q1 as f64 * x.x + q2 as f64 * x.y);
    let rate = TAU * (q1 as f64 * dir[0] + q2 as f64 * dir[1]);
    if lex_nonnegative(k1, k2) {
        (phase.cos(), -rate * phase.sin())
    } else {
        (phase.sin(), rate * phase.cos())
    }
}

/// How a cocycle field is built. Serialized with a `kind` tag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldSpec {
    /// `exp(L(x))`.
    Trig(TrigField),
    /// `p(Mx) A(x) p(x)*`, cohomologous to `base`.
    Gauge { base: Box<FieldSpec>, gauge: Box<FieldSpec> },
    /// `A(x) exp(sigma F(x))`.
    Twist { base: Box<FieldSpec>, generator: TrigField, sigma: f64 },
    /// `H -> A_target H A_source*` acting on row-major `vec(H)`.
    Hom { source: Box<FieldSpec>, target: Box<FieldSpec> },
}

impl FieldSpec {
    pub fn rank(&self) -> usize {
        match self {
            FieldSpec::Trig(t) => t.rank,
            FieldSpec::Gauge { base, .. } | FieldSpec::Twist { base, .. } => base.rank(),
            FieldSpec::Hom { source, target } => source.rank() * target.rank(),
        }
    }

    pub fn validate(&self) -> Result<(), CocycleError> {
        match self {
            FieldSpec::Trig(t) => t.validate(),
            FieldSpec::Gauge { base, gauge } => {
                base.validate()?;
                gauge.validate()?;
                if base.rank() != gauge.rank() {
                    return Err(CocycleError::RankMismatch(base.rank(), gauge.rank()));
                }
                Ok(())
            }
            FieldSpec::Twist { base, generator, .. } => {
                base.validate()?;
                generator.validate()?;
                if base.rank() != generator.rank {
                    return Err(CocycleError::RankMismatch(base.rank(), generator.rank));
                }
                Ok(())
            }
            FieldSpec::Hom { source, target } => {
                source.validate()?;
                target.validate()
            }
        }
    }

    pub fn eval(&self, map: &HyperbolicMap, x: &TorusPoint) -> CMatrix {
        match self {
            FieldSpec::Trig(t) => expm(&t.log(x)),
            FieldSpec::Gauge { base, gauge } => {
                let p_next = gauge.eval(map, &map.apply(x));
                &(&p_next * &base.eval(map, x)) * &gauge.eval(map, x).adjoint()
            }
            FieldSpec::Twist { base, generator, sigma } => &base.eval(map, x) * &expm(&generator.log(x).scale_re(*sigma)),
            FieldSpec::Hom { source, target } => target.eval(map, x).kron(&source.eval(map, x).conj()),
        }
    }

    /// `(A(x), D_dir A(x))`.
    pub fn eval_with_derivative(&self, map: &HyperbolicMap, x: &TorusPoint, dir: Vec2) -> (CMatrix, CMatrix) {
        match self {
            FieldSpec::Trig(t) => {
                let (l, dl) = t.log_and_derivative(x, dir);
                expm_frechet(&l, &dl)
            }
            FieldSpec::Gauge { base, gauge } => {
                let (pn, dpn) = gauge.eval_with_derivative(map, &map.apply(x), map.apply_vec(dir));
                let (a, da) = base.eval_with_derivative(map, x, dir);
                let (p, dp) = gauge.eval_with_derivative(map, x, dir);
                let (ph, dph) = (p.adjoint(), dp.adjoint());
                let value = &(&pn * &a) * &ph;
                let d = &(&(&(&dpn * &a) * &ph) + &(&(&pn * &da) * &ph)) + &(&(&pn * &a) * &dph);
                (value, d)
            }
            FieldSpec::Twist { base, generator, sigma } => {
                let (a, da) = base.eval_with_derivative(map, x, dir);
                let (l, dl) = generator.log_and_derivative(x, dir);
                let (e, de) = expm_frechet(&l.scale_re(*sigma), &dl.scale_re(*sigma));
                (&a * &e, &(&da * &e) + &(&a * &de))
            }
            FieldSpec::Hom { source, target } => {
                let (a1, da1) = source.eval_with_derivative(map, x, dir);
                let (a2, da2) = target.eval_with_derivative(map, x, dir);
                let (c1, dc1) = (a1.conj(), da1.conj());
                (a2.kron(&c1), &da2.kron(&c1) + &a2.kron(&dc1))
            }
        }
    }
}

/// Hölder data `||A(x) - A(y)|| <= constant * d(x, y)^exponent`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderData {
    pub exponent: f64,
    pub constant: f64,
}

/// Side length of the grid used to estimate `K_F`.
pub const CURVATURE_GRID: usize = 64;
const CURVATURE_SAFETY: f64 = 1.5;
const CURVATURE_STEP: f64 = 1e-6;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CocycleField {
    pub map: HyperbolicMap,
    pub spec: FieldSpec,
    pub rank: usize,
    pub holder: HolderData,
    /// Error constant of the holonomy bounds.
    pub k_f: f64,
}

impl CocycleField {
    /// Builds the field and estimates `K_F` on a grid.
    pub fn new(map: HyperbolicMap, spec: FieldSpec) -> Result<Self, CocycleError> {
        spec.validate()?;
        let k = estimate_curvature(&map, &spec, CURVATURE_GRID);
        Ok(CocycleField { rank: spec.rank(), holder: HolderData { exponent: 1.0, constant: k / CURVATURE_SAFETY }, k_f: k, map, spec })
    }

    /// Builds the field with a caller-supplied `K_F` and Lipschitz constant.
    pub fn with_constants(map: HyperbolicMap, spec: FieldSpec, k_f: f64, holder: HolderData) -> Result<Self, CocycleError> {
        spec.validate()?;
        Ok(CocycleField { rank: spec.rank(), holder, k_f, map, spec })
    }

    pub fn trivial(map: HyperbolicMap, rank: usize) -> Self {
        CocycleField { map, spec: FieldSpec::Trig(TrigField::zero(rank)), rank, holder: HolderData { exponent: 1.0, constant: 0.0 }, k_f: 0.0 }
    }

    pub fn at(&self, x: &TorusPoint) -> CMatrix {
        self.spec.eval(&self.map, x)
    }

    pub fn derivative(&self, x: &TorusPoint, dir: Vec2) -> (CMatrix, CMatrix) {
        self.spec.eval_with_derivative(&self.map, x, dir)
    }

    /// Growth rate used in the error bounds, `lambda^exponent`.
    fn rate(&self) -> f64 {
        self.map.lambda.powf(self.holder.exponent)
    }
}

/// `1.5 * max ||A(x + h e) A(x)^{-1} - I|| / h` over the grid and the
/// directions `e1, e2, v_u, v_s`: the discrete curvature of the
/// connection whose parallel transport along the map direction is `A`.
pub fn estimate_curvature(map: &HyperbolicMap, spec: &FieldSpec, side: usize) -> f64 {
    let dirs = [[1.0, 0.0], [0.0, 1.0], map.v_u, map.v_s];
    let worst = (0..side * side)
        .into_par_iter()
        .map(|i| {
            let x = TorusPoint::new((i / side) as f64 / side as f64, (i % side) as f64 / side as f64);
            let a = spec.eval(map, &x);
            let ah = a.adjoint();
            let id = CMatrix::identity(a.rows());
            dirs.iter()
                .map(|d| {
                    let b = spec.eval(map, &x.translate([d[0] * CURVATURE_STEP, d[1] * CURVATURE_STEP]));
                    operator_norm(&(&(&b * &ah) - &id)) / CURVATURE_STEP
                })
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    CURVATURE_SAFETY * worst
}

/// `T(x, n)`; negative `n` maps the fiber at `x` to the fiber at `M^n x`.
pub fn transport(c: &CocycleField, x: &TorusPoint, n: i64) -> UnitaryMatrix {
    let mut chain = ChainProduct::new(c.rank);
    let mut p = *x;
    if n >= 0 {
        for _ in 0..n {
            chain.push(&c.at(&p));
            p = c.map.apply(&p);
        }
    } else {
        for _ in 0..-n {
            p = c.map.apply_inverse(&p);
            chain.push(&c.at(&p).adjoint());
        }
    }
    chain.finish()
}

/// Ordered product `A(p_{k-1}) ... A(p_0)` along given points.
pub fn transport_along(c: &CocycleField, pts: &[TorusPoint]) -> UnitaryMatrix {
    let mut chain = ChainProduct::new(c.rank);
    for p in pts {
        chain.push(&c.at(p));
    }
    chain.finish()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Leaf {
    Stable,
    Unstable,
}

impl Leaf {
    fn name(self) -> &'static str {
        match self {
            Leaf::Stable => "stable",
            Leaf::Unstable => "unstable",
        }
    }

    fn direction(self, map: &HyperbolicMap) -> Vec2 {
        match self {
            Leaf::Stable => map.v_s,
            Leaf::Unstable => map.v_u,
        }
    }

    /// Signed factor by which one step scales the leaf coordinate.
    fn contraction(self, map: &HyperbolicMap) -> f64 {
        match self {
            Leaf::Stable => map.mu_s,
            Leaf::Unstable => 1.0 / map.mu_u,
        }
    }

    fn step(self, map: &HyperbolicMap, p: &TorusPoint) -> TorusPoint {
        match self {
            Leaf::Stable => map.apply(p),
            Leaf::Unstable => map.apply_inverse(p),
        }
    }
}

/// Comparison transport between two close points of one leaf.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BridgeKind {
    /// Identity.
    Flat,
    /// Midpoint rule on the local logarithmic derivative of the field.
    Local,
    /// Midpoint rule on the logarithmic derivative transported along the
    /// contracting orbit, the infinitesimal generator of the holonomy.
    Transported,
}

const BRIDGE_POINTS: usize = 16;
const TRANSPORTED_TERMS: usize = 30;

/// Fiber map of one step along `leaf` at `p` and its derivative when `p`
/// moves with unit speed along the leaf direction.
fn leaf_step(c: &CocycleField, leaf: Leaf, p: &TorusPoint) -> (CMatrix, CMatrix, TorusPoint) {
    let dir = leaf.direction(&c.map);
    match leaf {
        Leaf::Stable => {
            let (a, da) = c.derivative(p, dir);
            (a, da, c.map.apply(p))
        }
        Leaf::Unstable => {
            let q = c.map.apply_inverse(p);
            let (a, da) = c.derivative(&q, dir);
            // q moves at speed 1/mu_u when p moves at speed 1
            (a.adjoint(), da.adjoint().scale_re(1.0 / c.map.mu_u), q)
        }
    }
}

/// `-sum_k c^k S_k^{-1} F_k^{-1} F_k' S_k`, the derivative of the holonomy
/// from `z` along the leaf, truncated to `terms` steps.
fn holonomy_generator(c: &CocycleField, leaf: Leaf, z: &TorusPoint, terms: usize) -> CMatrix {
    let r = c.rank;
    let contraction = leaf.contraction(&c.map);
    let mut s = CMatrix::identity(r);
    let mut out = CMatrix::zeros(r, r);
    let mut p = *z;
    let mut scale = 1.0;
    for _ in 0..terms {
        let (f, df, next) = leaf_step(c, leaf, &p);
        let term = &(&s.adjoint() * &(&f.adjoint() * &df)) * &s;
        out = &out - &term.scale_re(scale);
        s = &f * &s;
        scale *= contraction;
        p = next;
    }
    out
}

/// Transport from `p` to `p + t v_leaf`.
pub fn bridge(c: &CocycleField, leaf: Leaf, p: &TorusPoint, t: f64, kind: BridgeKind) -> CMatrix {
    let r = c.rank;
    if kind == BridgeKind::Flat || t == 0.0 {
        return CMatrix::identity(r);
    }
    let terms = if kind == BridgeKind::Local { 1 } else { TRANSPORTED_TERMS };
    let dir = leaf.direction(&c.map);
    let h = t / BRIDGE_POINTS as f64;
    let mut acc = CMatrix::identity(r);
    for i in 0..BRIDGE_POINTS {
        let s = (i as f64 + 0.5) * h;
        let m = p.translate([s * dir[0], s * dir[1]]);
        let g = holonomy_generator(c, leaf, &m, terms);
        acc = &expm(&g.scale_re(h)) * &acc;
    }
    acc
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HolonomyResult {
    pub u: UnitaryMatrix,
    pub depth: u32,
    pub certified_error: f64,
    /// `K_F * C` with `C = 2 d(x, y) lambda / (lambda - 1)`.
    pub constant: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolonomyOptions {
    pub bridge: BridgeKind,
    /// Fixed depth instead of the certified choice.
    pub depth: Option<u32>,
}

impl Default for HolonomyOptions {
    fn default() -> Self {
        HolonomyOptions { bridge: BridgeKind::Transported, depth: None }
    }
}

pub const MIN_DEPTH: u32 = 4;
pub const MAX_DEPTH: u32 = 200;

/// `K_F * 2 d lambda / (lambda - 1)`.
pub fn error_constant(c: &CocycleField, dist: f64) -> f64 {
    let l = c.map.lambda;
    c.k_f * 2.0 * dist * l / (l - 1.0)
}

/// Smallest depth in `[4, 200]` with `constant * rate^{-n} <= tol`.
pub fn certified_depth(c: &CocycleField, constant: f64, tol: f64) -> Result<u32, CocycleError> {
    let rate = c.rate();
    if constant <= tol {
        return Ok(MIN_DEPTH);
    }
    let n = ((constant / tol).ln() / rate.ln()).ceil();
    if n > MAX_DEPTH as f64 {
        return Err(CocycleError::TolUnreachable { tol, depth: MAX_DEPTH, bound: constant * rate.powi(-(MAX_DEPTH as i32)) });
    }
    Ok((n as u32).clamp(MIN_DEPTH, MAX_DEPTH))
}

/// Leaf coordinate of `y - x` along `leaf`, or an error if `y` is off the leaf.
pub fn leaf_offset(c: &CocycleField, leaf: Leaf, x: &TorusPoint, y: &TorusPoint) -> Result<f64, CocycleError> {
    let d = x.delta_to(y);
    let (u, s) = c.map.leaf_coords(d);
    let (along, across) = match leaf {
        Leaf::Stable => (s, u),
        Leaf::Unstable => (u, s),
    };
    if across.abs() > 1e-9 || along.abs() > BRACKET_RADIUS {
        return Err(CocycleError::NotOnLeaf { leaf: leaf.name(), offset: across });
    }
    Ok(along)
}

/// `T(y, n)^{-1} B(x_n -> y_n) T(x, n)` along `leaf`, with
/// `y_k = x_k + c^k t v_leaf` relative to the iterates of `x`.
pub fn holonomy_at_depth(c: &CocycleField, leaf: Leaf, x: &TorusPoint, t: f64, n: u32, kind: BridgeKind) -> CMatrix {
    let dir = leaf.direction(&c.map);
    let contraction = leaf.contraction(&c.map);
    let mut tx = ChainProduct::new(c.rank);
    let mut ty = ChainProduct::new(c.rank);
    let mut p = *x;
    let mut offset = t;
    for _ in 0..n {
        let q = p.translate([offset * dir[0], offset * dir[1]]);
        let (fx, fy) = match leaf {
            Leaf::Stable => (c.at(&p), c.at(&q)),
            Leaf::Unstable => {
                let (pp, qq) = (c.map.apply_inverse(&p), c.map.apply_inverse(&q));
                (c.at(&pp).adjoint(), c.at(&qq).adjoint())
            }
        };
        tx.push(&fx);
        ty.push(&fy);
        p = leaf.step(&c.map, &p);
        offset *= contraction;
    }
    let b = bridge(c, leaf, &p, offset, kind);
    let tyh = ty.finish().into_matrix().adjoint();
    &(&tyh * &b) * tx.current()
}

fn holonomy(c: &CocycleField, leaf: Leaf, x: &TorusPoint, y: &TorusPoint, tol: f64, opts: &HolonomyOptions) -> Result<HolonomyResult, CocycleError> {
    let t = leaf_offset(c, leaf, x, y)?;
    let constant = error_constant(c, t.abs());
    let depth = match opts.depth {
        Some(d) => d,
        None => certified_depth(c, constant, tol)?,
    };
    let u = UnitaryMatrix::trusted(holonomy_at_depth(c, leaf, x, t, depth, opts.bridge)).refreshed();
    Ok(HolonomyResult { u, depth, certified_error: constant * c.rate().powi(-(depth as i32)), constant })
}

pub fn stable_holonomy(c: &CocycleField, x: &TorusPoint, y: &TorusPoint, tol: f64) -> Result<HolonomyResult, CocycleError> {
    holonomy(c, Leaf::Stable, x, y, tol, &HolonomyOptions::default())
}

pub fn unstable_holonomy(c: &CocycleField, x: &TorusPoint, y: &TorusPoint, tol: f64) -> Result<HolonomyResult, CocycleError> {
    holonomy(c, Leaf::Unstable, x, y, tol, &HolonomyOptions::default())
}

pub fn stable_holonomy_with(c: &CocycleField, x: &TorusPoint, y: &TorusPoint, tol: f64, opts: &HolonomyOptions) -> Result<HolonomyResult, CocycleError> {
    holonomy(c, Leaf::Stable, x, y, tol, opts)
}

pub fn unstable_holonomy_with(c: &CocycleField, x: &TorusPoint, y: &TorusPoint, tol: f64, opts: &HolonomyOptions) -> Result<HolonomyResult, CocycleError> {
    holonomy(c, Leaf::Unstable, x, y, tol, opts)
}

/// `A(0)^{-n} B_s T(x_u(m), m + T + n) B_u A(0)^{-m}`, the Parry element
/// read through the translates `x_u(gamma; m)` and `x_s(gamma; n)`, with
/// its error bound `K_F C lambda^{-min(m, n)}`.
pub fn parry_approx(c: &CocycleField, g: &HomoclinicOrbit, m: u32, n: u32, kind: BridgeKind) -> (UnitaryMatrix, f64) {
    let map = &c.map;
    let (m_i, n_i, len) = (m as i64, n as i64, g.length as i64);
    let origin = TorusPoint::ORIGIN;
    let b_u = bridge(c, Leaf::Unstable, &origin, g.unstable_coord(map, -m_i), kind);
    let exit = g.point(map, len + n_i);
    let b_s = bridge(c, Leaf::Stable, &exit, -g.stable_coord(map, len + n_i), kind);
    let mut chain = ChainProduct::new(c.rank);
    let a0h = c.at(&origin).adjoint();
    for _ in 0..m {
        chain.push(&a0h);
    }
    chain.push(&b_u);
    for k in -m_i..len + n_i {
        chain.push(&c.at(&g.point(map, k)));
    }
    chain.push(&b_s);
    for _ in 0..n {
        chain.push(&a0h);
    }
    let dist = g.a_u.abs() + g.stable_coord(map, len).abs();
    let bound = error_constant(c, dist) * c.rate().powi(-(m.min(n) as i32));
    (chain.finish(), bound)
}

/// Parry element of one homoclinic orbit, at the depth certified for `tol`.
pub fn parry_eval(c: &CocycleField, g: &HomoclinicOrbit, tol: f64) -> Result<UnitaryMatrix, CocycleError> {
    parry_eval_with(c, g, tol, BridgeKind::Transported).map(|(u, _)| u)
}

/// Returns the element and its certified error.
pub fn parry_eval_with(c: &CocycleField, g: &HomoclinicOrbit, tol: f64, kind: BridgeKind) -> Result<(UnitaryMatrix, f64), CocycleError> {
    let dist = g.a_u.abs() + g.stable_coord(&c.map, g.length as i64).abs();
    let depth = certified_depth(c, error_constant(c, dist), tol)?;
    Ok(parry_approx(c, g, depth, depth, kind))
}

/// Multiplicative extension to words; generators are looked up by id.
pub fn parry_word(c: &CocycleField, gens: &[HomoclinicOrbit], w: &FreeWord, tol: f64, kind: BridgeKind) -> Result<(UnitaryMatrix, f64), CocycleError> {
    let mut acc = UnitaryMatrix::identity(c.rank);
    let mut err = 0.0;
    for &(id, k) in w.factors() {
        let g = gens.iter().find(|g| g.id == id).ok_or(CocycleError::UnknownGenerator(id))?;
        let (u, e) = parry_eval_with(c, g, tol, kind)?;
        for _ in 0..k {
            acc = acc.mul(&u);
            err += e;
        }
    }
    Ok((acc, err))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WilsonRecord {
    pub orbit_id: String,
    pub length: u32,
    pub trace: C64,
}

/// Trace of the transport once around a periodic orbit.
pub fn wilson(c: &CocycleField, orbit: &PeriodicOrbit) -> WilsonRecord {
    let pts: Vec<TorusPoint> = orbit.points.iter().map(|p| p.to_torus()).collect();
    WilsonRecord { orbit_id: orbit.id(), length: orbit.period, trace: transport_along(c, &pts).matrix().trace() }
}

/// Same trace from the `k`-th point of the orbit.
pub fn wilson_from(c: &CocycleField, orbit: &PeriodicOrbit, k: usize) -> C64 {
    let n = orbit.points.len();
    let pts: Vec<TorusPoint> = (0..n).map(|i| orbit.points[(i + k) % n].to_torus()).collect();
    transport_along(c, &pts).matrix().trace()
}

/// `sup_gamma |W_1(gamma) - W_2(gamma)| / length(gamma)`.
pub fn wilson_discrepancy(c1: &CocycleField, c2: &CocycleField, orbits: &[PeriodicOrbit]) -> Result<f64, CocycleError> {
    if orbits.is_empty() {
        return Err(CocycleError::EmptyOrbitList);
    }
    if c1.rank != c2.rank {
        return Err(CocycleError::RankMismatch(c1.rank, c2.rank));
    }
    let worst = orbits.par_iter().map(|o| (wilson(c1, o).trace - wilson(c2, o).trace).norm() / o.period as f64).reduce(|| 0.0, f64::max);
    Ok(worst)
}

/// Field `H -> A_2 H A_1*` on `r x r` matrices, as a cocycle of rank `r^2`.
pub fn hom_cocycle(c1: &CocycleField, c2: &CocycleField) -> Result<CocycleField, CocycleError> {
    if c1.rank != c2.rank {
        return Err(CocycleError::RankMismatch(c1.rank, c2.rank));
    }
    let spec = FieldSpec::Hom { source: Box::new(c1.spec.clone()), target: Box::new(c2.spec.clone()) };
    // The hom field's derivative is bounded by the sum of the two.
    let k_f = c1.k_f + c2.k_f;
    let holder = HolderData { exponent: 1.0, constant: c1.holder.constant + c2.holder.constant };
    CocycleField::with_constants(c1.map.clone(), spec, k_f, holder)
}

/// Reshapes a row-major vector of length `r^2` into an `r x r` matrix.
pub fn unvec(v: &[C64], r: usize) -> CMatrix {
    CMatrix::from_vec(r, r, v.to_vec())
}
