//! Hyperbolic toral automorphism `x -> Mx mod 1` as the base system.
//!
//! The fixed point 0 is the reference periodic point. Periodic orbits are
//! exact rationals; homoclinic orbits of 0 are floats, parametrized by
//! their leaf coordinates so every point can be evaluated without
//! iterating (iteration loses a factor `lambda` of precision per step).

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::freemonoid::GenId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynError {
    #[error("matrix {0:?} is not hyperbolic (need det = ±1 and |trace| > 2)")]
    NotHyperbolic([[i64; 2]; 2]),
    #[error("points are {dist:e} apart, bracket needs less than {limit:e}")]
    TooFar { dist: f64, limit: f64 },
    #[error("pseudo-orbit jump {jump:e} at step {step} exceeds {limit:e}")]
    JumpTooLarge { step: usize, jump: f64, limit: f64 },
    #[error("no homoclinic orbit fits a length budget of {budget}")]
    BudgetExceeded { budget: u32 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Vec2 = [f64; 2];

fn cross(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn norm(a: Vec2) -> f64 {
    a[0].hypot(a[1])
}

fn wrap(t: f64) -> f64 {
    let r = t - t.floor();
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Shortest representative of `t` mod 1, in `[-1/2, 1/2)`.
fn centered(t: f64) -> f64 {
    t - (t + 0.5).floor()
}

/// Point of the torus `R^2 / Z^2`, coordinates in `[0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorusPoint {
    pub x: f64,
    pub y: f64,
}

impl TorusPoint {
    pub const ORIGIN: TorusPoint = TorusPoint { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        TorusPoint { x: wrap(x), y: wrap(y) }
    }

    pub fn from_lift(v: Vec2) -> Self {
        Self::new(v[0], v[1])
    }

    pub fn coords(&self) -> Vec2 {
        [self.x, self.y]
    }

    pub fn translate(&self, v: Vec2) -> Self {
        Self::new(self.x + v[0], self.y + v[1])
    }

    /// Shortest lift of `other - self`.
    pub fn delta_to(&self, other: &TorusPoint) -> Vec2 {
        [centered(other.x - self.x), centered(other.y - self.y)]
    }

    pub fn dist(&self, other: &TorusPoint) -> f64 {
        norm(self.delta_to(other))
    }
}

/// Exact rational point `num / den` with `0 <= num < den` and
/// `gcd(num0, num1, den) = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RationalPoint {
    pub num: [i64; 2],
    pub den: i64,
}

fn gcd(a: i128, b: i128) -> i128 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl RationalPoint {
    pub fn new(num: [i128; 2], den: i128) -> Self {
        assert!(den > 0);
        let n0 = num[0].rem_euclid(den);
        let n1 = num[1].rem_euclid(den);
        let g = gcd(gcd(n0, n1), den).max(1);
        RationalPoint { num: [(n0 / g) as i64, (n1 / g) as i64], den: (den / g) as i64 }
    }

    pub fn to_torus(&self) -> TorusPoint {
        TorusPoint::new(self.num[0] as f64 / self.den as f64, self.num[1] as f64 / self.den as f64)
    }
}

impl std::fmt::Display for RationalPoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{} {}/{}", self.num[0], self.den, self.num[1], self.den)
    }
}

type IMat = [[i128; 2]; 2];

fn imul(a: &IMat, b: &IMat) -> IMat {
    let mut c = [[0i128; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

fn ipow(m: &IMat, n: u32) -> IMat {
    let mut acc = [[1, 0], [0, 1]];
    for _ in 0..n {
        acc = imul(&acc, m);
    }
    acc
}

/// Smith form of a nonsingular 2x2 integer matrix: returns `(d1, d2, V)`
/// with `U B V = diag(d1, d2)` for some unimodular `U`, `d1 | d2`, both
/// positive. Only `V` is tracked since the solution set of `Bx ∈ Z^2` is
/// `V (Z/d1 × Z/d2)`.
pub(crate) fn smith_2x2(b: IMat) -> (i128, i128, IMat) {
    let mut a = b;
    let mut v: IMat = [[1, 0], [0, 1]];
    loop {
        // pivot: smallest nonzero entry to (0, 0)
        let mut best = None;
        for i in 0..2 {
            for j in 0..2 {
                if a[i][j] != 0 && best.is_none_or(|(bi, bj): (usize, usize)| a[i][j].abs() < a[bi][bj].abs()) {
                    best = Some((i, j));
                }
            }
        }
        let (pi, pj) = best.expect("singular matrix has no Smith form here");
        if pi == 1 {
            a.swap(0, 1);
        }
        if pj == 1 {
            for row in a.iter_mut() {
                row.swap(0, 1);
            }
            for row in v.iter_mut() {
                row.swap(0, 1);
            }
        }
        let p = a[0][0];
        let q = a[1][0] / p;
        for j in 0..2 {
            a[1][j] -= q * a[0][j];
        }
        let q = a[0][1] / p;
        for i in 0..2 {
            a[i][1] -= q * a[i][0];
            v[i][1] -= q * v[i][0];
        }
        if a[1][0] != 0 || a[0][1] != 0 {
            continue;
        }
        if a[1][1] % a[0][0] != 0 {
            for j in 0..2 {
                a[0][j] += a[1][j];
            }
            continue;
        }
        return (a[0][0].abs(), a[1][1].abs(), v);
    }
}

/// Integer matrix with determinant ±1 and |trace| > 2, plus its
/// eigen-data. `mu_u`, `mu_s` are the signed eigenvalues.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperbolicMap {
    pub m: [[i64; 2]; 2],
    pub lambda: f64,
    pub mu_u: f64,
    pub mu_s: f64,
    pub v_u: Vec2,
    pub v_s: Vec2,
}

fn eigenvector(m: &[[i64; 2]; 2], mu: f64) -> Vec2 {
    let (a, b, c, d) = (m[0][0] as f64, m[0][1] as f64, m[1][0] as f64, m[1][1] as f64);
    let v = if b.abs() >= c.abs() { [b, mu - a] } else { [mu - d, c] };
    let n = norm(v);
    let mut v = [v[0] / n, v[1] / n];
    if v[0] < 0.0 || (v[0] == 0.0 && v[1] < 0.0) {
        v = [-v[0], -v[1]];
    }
    v
}

impl HyperbolicMap {
    pub fn new(m: [[i64; 2]; 2]) -> Result<Self, DynError> {
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let tr = m[0][0] + m[1][1];
        // no eigenvalue on the unit circle
        let hyperbolic = match det {
            1 => tr.abs() > 2,
            -1 => tr != 0,
            _ => false,
        };
        if !hyperbolic {
            return Err(DynError::NotHyperbolic(m));
        }
        let (t, d) = (tr as f64, det as f64);
        let disc = (t * t - 4.0 * d).sqrt();
        // larger-modulus root without cancellation, the other from the product
        let mu_u = if t >= 0.0 { (t + disc) / 2.0 } else { (t - disc) / 2.0 };
        let mu_s = d / mu_u;
        Ok(HyperbolicMap { m, lambda: mu_u.abs(), mu_u, mu_s, v_u: eigenvector(&m, mu_u), v_s: eigenvector(&m, mu_s) })
    }

    /// `[[2, 1], [1, 1]]`.
    pub fn cat() -> Self {
        Self::new([[2, 1], [1, 1]]).expect("cat map is hyperbolic")
    }

    pub fn from_entries(e: [i64; 4]) -> Result<Self, DynError> {
        Self::new([[e[0], e[1]], [e[2], e[3]]])
    }

    pub fn det(&self) -> i64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn trace(&self) -> i64 {
        self.m[0][0] + self.m[1][1]
    }

    pub fn inverse(&self) -> Self {
        let d = self.det();
        let m = self.m;
        Self::new([[d * m[1][1], -d * m[0][1]], [-d * m[1][0], d * m[0][0]]]).expect("inverse of hyperbolic")
    }

    pub fn power(&self, n: u32) -> Self {
        let p = ipow(&self.imat(), n.max(1));
        Self::new([[p[0][0] as i64, p[0][1] as i64], [p[1][0] as i64, p[1][1] as i64]]).expect("power of hyperbolic")
    }

    /// `M T M^{-1}` for unimodular `T`.
    pub fn conjugated_by(&self, t: [[i64; 2]; 2]) -> Result<Self, DynError> {
        let dt = t[0][0] * t[1][1] - t[0][1] * t[1][0];
        if dt.abs() != 1 {
            return Err(DynError::InvalidParameter("conjugating matrix must be unimodular".into()));
        }
        let ti = [[dt * t[1][1], -dt * t[0][1]], [-dt * t[1][0], dt * t[0][0]]];
        let to = |m: [[i64; 2]; 2]| -> IMat { [[m[0][0] as i128, m[0][1] as i128], [m[1][0] as i128, m[1][1] as i128]] };
        let p = imul(&imul(&to(t), &self.imat()), &to(ti));
        Self::new([[p[0][0] as i64, p[0][1] as i64], [p[1][0] as i64, p[1][1] as i64]])
    }

    fn imat(&self) -> IMat {
        [[self.m[0][0] as i128, self.m[0][1] as i128], [self.m[1][0] as i128, self.m[1][1] as i128]]
    }

    pub fn apply_vec(&self, v: Vec2) -> Vec2 {
        let m = &self.m;
        [m[0][0] as f64 * v[0] + m[0][1] as f64 * v[1], m[1][0] as f64 * v[0] + m[1][1] as f64 * v[1]]
    }

    pub fn apply(&self, p: &TorusPoint) -> TorusPoint {
        TorusPoint::from_lift(self.apply_vec(p.coords()))
    }

    pub fn apply_inverse(&self, p: &TorusPoint) -> TorusPoint {
        let d = self.det() as f64;
        let m = &self.m;
        let (x, y) = (p.x, p.y);
        TorusPoint::new(d * (m[1][1] as f64 * x - m[0][1] as f64 * y), d * (-(m[1][0] as f64) * x + m[0][0] as f64 * y))
    }

    /// `map^n(p)`, negative `n` iterating the inverse.
    pub fn iterate(&self, p: &TorusPoint, n: i64) -> TorusPoint {
        let mut q = *p;
        for _ in 0..n.unsigned_abs() {
            q = if n > 0 { self.apply(&q) } else { self.apply_inverse(&q) };
        }
        q
    }

    pub fn apply_rational(&self, p: &RationalPoint) -> RationalPoint {
        let m = self.imat();
        let (x, y) = (p.num[0] as i128, p.num[1] as i128);
        RationalPoint::new([m[0][0] * x + m[0][1] * y, m[1][0] * x + m[1][1] * y], p.den as i128)
    }

    /// `(u, s)` with `v = u v_u + s v_s`.
    pub fn leaf_coords(&self, v: Vec2) -> (f64, f64) {
        let d = cross(self.v_u, self.v_s);
        (cross(v, self.v_s) / d, cross(self.v_u, v) / d)
    }

    pub fn from_leaf_coords(&self, u: f64, s: f64) -> Vec2 {
        [u * self.v_u[0] + s * self.v_s[0], u * self.v_u[1] + s * self.v_s[1]]
    }

    /// `|det(M^n - I)|`, the number of points fixed by `M^n`.
    pub fn fixed_point_count(&self, n: u32) -> i128 {
        let b = self.shifted_power(n);
        (b[0][0] * b[1][1] - b[0][1] * b[1][0]).abs()
    }

    fn shifted_power(&self, n: u32) -> IMat {
        let mut b = ipow(&self.imat(), n);
        b[0][0] -= 1;
        b[1][1] -= 1;
        b
    }

    /// Every point fixed by `M^n`, exactly, from the Smith form of `M^n - I`.
    pub fn fixed_points(&self, n: u32) -> Vec<RationalPoint> {
        let (d1, d2, v) = smith_2x2(self.shifted_power(n));
        let q = d1 * d2;
        let mut out = Vec::with_capacity(q as usize);
        for i in 0..d1 {
            for j in 0..d2 {
                let (y0, y1) = (i * d2, j * d1);
                out.push(RationalPoint::new([v[0][0] * y0 + v[0][1] * y1, v[1][0] * y0 + v[1][1] * y1], q));
            }
        }
        out
    }
}

/// `(v_u, v_s, lambda)`.
pub fn stable_unstable_lines(map: &HyperbolicMap) -> (Vec2, Vec2, f64) {
    (map.v_u, map.v_s, map.lambda)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodicOrbit {
    pub period: u32,
    pub points: Vec<RationalPoint>,
    pub primitive: bool,
}

impl PeriodicOrbit {
    pub fn id(&self) -> String {
        format!("p{}:{}", self.period, self.points[0])
    }
}

/// All primitive orbits of period `<= n_max`, grouped by period, each
/// starting from its smallest point.
pub fn enumerate_periodic_orbits(map: &HyperbolicMap, n_max: u32) -> Vec<PeriodicOrbit> {
    let per_level: Vec<Vec<PeriodicOrbit>> = (1..=n_max).into_par_iter().map(|n| primitive_orbits_of_period(map, n)).collect();
    per_level.into_iter().flatten().collect()
}

fn primitive_orbits_of_period(map: &HyperbolicMap, n: u32) -> Vec<PeriodicOrbit> {
    let mut pts = map.fixed_points(n);
    pts.sort();
    let mut seen: HashSet<RationalPoint> = HashSet::with_capacity(pts.len());
    let mut out = Vec::new();
    for p in pts {
        if seen.contains(&p) {
            continue;
        }
        let mut orbit = vec![p];
        let mut q = map.apply_rational(&p);
        while q != p {
            orbit.push(q);
            q = map.apply_rational(&q);
        }
        seen.extend(orbit.iter().copied());
        if orbit.len() == n as usize {
            out.push(PeriodicOrbit { period: n, points: orbit, primitive: true });
        }
    }
    out
}

/// `z` on the local unstable leaf of `x` and the local stable leaf of `y`.
/// The second component is the time shift, always 0 for a map.
pub fn bowen_bracket(map: &HyperbolicMap, x: &TorusPoint, y: &TorusPoint, eps_box: f64) -> Result<(TorusPoint, i64), DynError> {
    let limit = eps_box.min(BRACKET_RADIUS);
    let d = x.delta_to(y);
    let dist = norm(d);
    if dist >= limit {
        return Err(DynError::TooFar { dist, limit });
    }
    let (u, _) = map.leaf_coords(d);
    Ok((x.translate([u * map.v_u[0], u * map.v_u[1]]), 0))
}

/// Largest box on which the linear bracket is used.
pub const BRACKET_RADIUS: f64 = 0.25;

/// `{s : delta/lambda < |s| <= delta}` along each leaf of 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FundamentalDomains {
    pub delta: f64,
    pub lambda: f64,
}

pub const DEFAULT_DOMAIN_DELTA: f64 = 0.05;

impl FundamentalDomains {
    pub fn contains_stable(&self, s: f64) -> bool {
        self.delta / self.lambda < s.abs() && s.abs() <= self.delta
    }

    pub fn contains_unstable(&self, u: f64) -> bool {
        self.contains_stable(u)
    }

    /// Exponent `k` with `lambda^k |coord|` inside the domain.
    pub fn shift_into(&self, coord: f64) -> i64 {
        ((self.delta / coord.abs()).ln() / self.lambda.ln()).floor() as i64
    }
}

pub fn fundamental_domains(map: &HyperbolicMap) -> FundamentalDomains {
    fundamental_domains_with(map, DEFAULT_DOMAIN_DELTA)
}

/// `delta` is shrunk until the shortest homoclinic orbit has length `>= 1`.
pub fn fundamental_domains_with(map: &HyperbolicMap, delta: f64) -> FundamentalDomains {
    let mut fd = FundamentalDomains { delta, lambda: map.lambda };
    // The shortest |b| over nonzero lattice vectors with |a| <= delta is at
    // least dist(Z^2 \ 0, stable line) - delta; length >= 1 needs |b| > delta.
    while fd.delta > 1e-6 && !lattice_in_box(map, fd.delta, fd.delta).is_empty() {
        fd.delta /= map.lambda;
    }
    fd
}

/// Nonzero integer vectors `n = a v_u - b v_s` with `|a| <= a_max`, `|b| <= b_max`.
fn lattice_in_box(map: &HyperbolicMap, a_max: f64, b_max: f64) -> Vec<([i64; 2], f64, f64)> {
    let r = (a_max + b_max).ceil() as i64 + 1;
    let d = cross(map.v_u, map.v_s);
    let mut out = Vec::new();
    for n1 in -r..=r {
        // a = (n1 vs_y - n2 vs_x) / d  is linear in n2
        let (c0, c1) = (n1 as f64 * map.v_s[1] / d, -map.v_s[0] / d);
        let range = if c1.abs() < 1e-15 {
            if c0.abs() <= a_max {
                (-r, r)
            } else {
                continue;
            }
        } else {
            let lo = (-a_max - c0) / c1;
            let hi = (a_max - c0) / c1;
            let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
            ((lo.ceil() as i64).max(-r), (hi.floor() as i64).min(r))
        };
        for n2 in range.0..=range.1 {
            if n1 == 0 && n2 == 0 {
                continue;
            }
            let (a, b) = homoclinic_coords(map, [n1, n2]);
            if a.abs() <= a_max && b.abs() <= b_max {
                out.push(([n1, n2], a, b));
            }
        }
    }
    out
}

/// `(a, b)` with `n = a v_u - b v_s`.
///
/// Evaluated without cancellation: with `w(mu)` the unnormalized
/// eigenvector, `n x w(mu) = A + B mu` and the two conjugates multiply to
/// the integer `A^2 + AB tr + B^2 det`, so the small one is that integer
/// divided by the large one.
fn homoclinic_coords(map: &HyperbolicMap, n: [i64; 2]) -> (f64, f64) {
    let m = &map.m;
    let (n1, n2) = (n[0] as i128, n[1] as i128);
    let first_branch = m[0][1].abs() >= m[1][0].abs();
    let (a_int, b_int) = if first_branch { (-n1 * m[0][0] as i128 - n2 * m[0][1] as i128, n1) } else { (n1 * m[1][0] as i128 + n2 * m[1][1] as i128, -n2) };
    let product = a_int * a_int + a_int * b_int * map.trace() as i128 + b_int * b_int * map.det() as i128;
    let (af, bf) = (a_int as f64, b_int as f64);
    let mut cross_s = af + bf * map.mu_s;
    let mut cross_u = af + bf * map.mu_u;
    if cross_s.abs() < cross_u.abs() {
        cross_s = product as f64 / cross_u;
    } else if cross_u.abs() < cross_s.abs() {
        cross_u = product as f64 / cross_s;
    }
    let w = |mu: f64| -> Vec2 {
        if first_branch {
            [m[0][1] as f64, mu - m[0][0] as f64]
        } else {
            [mu - m[1][1] as f64, m[1][0] as f64]
        }
    };
    let (wu, ws) = (w(map.mu_u), w(map.mu_s));
    let sign = |v: Vec2, w: Vec2| if v[0] * w[0] + v[1] * w[1] >= 0.0 { 1.0 } else { -1.0 };
    let wedge = if first_branch { m[0][1] as f64 * (map.mu_s - map.mu_u) } else { m[1][0] as f64 * (map.mu_u - map.mu_s) };
    let a = sign(map.v_u, wu) * norm(wu) * cross_s / wedge;
    let b = sign(map.v_s, ws) * norm(ws) * cross_u / wedge;
    (a, b)
}

/// One term of a homoclinic point `a v_u ≡ b v_s (mod Z^2)` whose orbit is
/// read with an index offset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeafComponent {
    pub a: f64,
    pub b: f64,
    pub offset: i64,
}

impl LeafComponent {
    /// Lift of `M^k` applied to this component: `mu_u^k a v_u` on the
    /// unstable side, `mu_s^k b v_s` on the stable side, whichever is
    /// smaller. Both are valid lifts of the same torus point.
    fn lift(&self, map: &HyperbolicMap, k: i64) -> Vec2 {
        let j = (k - self.offset) as i32;
        let u = map.mu_u.powi(j) * self.a;
        let s = map.mu_s.powi(j) * self.b;
        if u.abs() <= s.abs() {
            map.from_leaf_coords(u, 0.0)
        } else {
            map.from_leaf_coords(0.0, s)
        }
    }
}

/// Orbit homoclinic to 0, entering at `x_u` (index 0, unstable coordinate
/// in `D_u`) and leaving at `x_s` (index `length`, stable coordinate in
/// `D_s`). Points are the sum of the component lifts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomoclinicOrbit {
    pub id: GenId,
    /// Integer vector `a v_u - b v_s` when the orbit came from the lattice.
    pub key: Option<[i64; 2]>,
    pub components: Vec<LeafComponent>,
    /// Unstable coordinate of `x_u`.
    pub a_u: f64,
    /// Stable coordinate of `x_u`.
    pub b_s: f64,
    pub length: u32,
    pub x_u: TorusPoint,
    pub x_s: TorusPoint,
    /// Points `0..=length`.
    pub trunk: Vec<TorusPoint>,
}

impl HomoclinicOrbit {
    fn from_components(map: &HyperbolicMap, fd: &FundamentalDomains, id: GenId, key: Option<[i64; 2]>, mut comps: Vec<LeafComponent>) -> Self {
        let total = |comps: &[LeafComponent], f: &dyn Fn(&LeafComponent) -> f64| comps.iter().map(f).sum::<f64>();
        let a0 = total(&comps, &|c| map.mu_u.powi(-c.offset as i32) * c.a);
        let shift = fd.shift_into(a0);
        for c in &mut comps {
            c.offset -= shift;
        }
        let a_u = total(&comps, &|c| map.mu_u.powi(-c.offset as i32) * c.a);
        let b_s = total(&comps, &|c| map.mu_s.powi(-c.offset as i32) * c.b);
        // first k >= 0 with |mu_s^k b| <= delta
        let length = (((b_s.abs() / fd.delta).ln() / map.lambda.ln()).ceil().max(0.0)) as u32;
        let mut orbit = HomoclinicOrbit { id, key, components: comps, a_u, b_s, length, x_u: TorusPoint::ORIGIN, x_s: TorusPoint::ORIGIN, trunk: Vec::new() };
        orbit.trunk = (0..=length as i64).map(|k| orbit.point(map, k)).collect();
        orbit.x_u = orbit.trunk[0];
        orbit.x_s = orbit.trunk[length as usize];
        orbit
    }

    /// `map^k(x_u)` for any integer `k`.
    pub fn point(&self, map: &HyperbolicMap, k: i64) -> TorusPoint {
        let mut v = [0.0, 0.0];
        for c in &self.components {
            let l = c.lift(map, k);
            v[0] += l[0];
            v[1] += l[1];
        }
        TorusPoint::from_lift(v)
    }

    /// Shortest lift of `map^k(x_u)` seen from 0; small away from the trunk.
    pub fn lift_from_origin(&self, map: &HyperbolicMap, k: i64) -> Vec2 {
        TorusPoint::ORIGIN.delta_to(&self.point(map, k))
    }

    /// Unstable leaf coordinate of `map^k(x_u)`, valid for `k <= 0`.
    pub fn unstable_coord(&self, map: &HyperbolicMap, k: i64) -> f64 {
        map.mu_u.powi(k as i32) * self.a_u
    }

    /// Stable leaf coordinate of `map^k(x_u)`, valid for `k >= length`.
    pub fn stable_coord(&self, map: &HyperbolicMap, k: i64) -> f64 {
        map.mu_s.powi(k as i32) * self.b_s
    }

    /// `x_s(gamma; n) = map^n(x_s)`.
    pub fn x_s_translate(&self, map: &HyperbolicMap, n: i64) -> TorusPoint {
        self.point(map, self.length as i64 + n)
    }

    /// `x_u(gamma; n) = map^{-n}(x_u)`.
    pub fn x_u_translate(&self, map: &HyperbolicMap, n: i64) -> TorusPoint {
        self.point(map, -n)
    }

    /// Indices `k` in `[-pad, length + pad]` whose stable coordinate lies in `D_s`.
    pub fn stable_crossings(&self, map: &HyperbolicMap, fd: &FundamentalDomains, pad: i64) -> Vec<i64> {
        (-pad..=self.length as i64 + pad).filter(|&k| fd.contains_stable(self.stable_coord(map, k))).collect()
    }
}

/// Homoclinic orbits of 0 from integer vectors `|n_i| <= bound`, one per
/// orbit, sorted by length then key, with ids `0, 1, ...`.
pub fn homoclinic_points(map: &HyperbolicMap, fd: &FundamentalDomains, complexity_bound: i64) -> Vec<HomoclinicOrbit> {
    let mut keys = BTreeMap::new();
    for n1 in -complexity_bound..=complexity_bound {
        for n2 in -complexity_bound..=complexity_bound {
            if n1 == 0 && n2 == 0 {
                continue;
            }
            let (a, b) = homoclinic_coords(map, [n1, n2]);
            let k = fd.shift_into(a);
            let key = normalize_key(map, [n1, n2], k);
            keys.entry(key).or_insert((map.mu_u.powi(k as i32) * a, map.mu_s.powi(k as i32) * b));
        }
    }
    finish_orbits(map, fd, keys)
}

/// Every homoclinic orbit of 0 with length `<= t_max`.
pub fn homoclinic_by_length(map: &HyperbolicMap, fd: &FundamentalDomains, t_max: u32) -> Vec<HomoclinicOrbit> {
    let b_max = fd.delta * map.lambda.powi(t_max as i32);
    let mut keys = BTreeMap::new();
    for (n, a, b) in lattice_in_box(map, fd.delta, b_max) {
        if fd.contains_unstable(a) {
            keys.insert(n, (a, b));
        }
    }
    let mut out = finish_orbits(map, fd, keys);
    out.retain(|o| o.length <= t_max);
    for (i, o) in out.iter_mut().enumerate() {
        o.id = i as GenId;
    }
    out
}

/// `M^k n`, computed exactly.
fn normalize_key(map: &HyperbolicMap, n: [i64; 2], k: i64) -> [i64; 2] {
    let step = if k >= 0 { map.imat() } else { map.inverse().imat() };
    let p = ipow(&step, k.unsigned_abs() as u32);
    let (x, y) = (n[0] as i128, n[1] as i128);
    [(p[0][0] * x + p[0][1] * y) as i64, (p[1][0] * x + p[1][1] * y) as i64]
}

fn finish_orbits(map: &HyperbolicMap, fd: &FundamentalDomains, keys: BTreeMap<[i64; 2], (f64, f64)>) -> Vec<HomoclinicOrbit> {
    let mut out: Vec<HomoclinicOrbit> =
        keys.into_iter().map(|(key, (a, b))| HomoclinicOrbit::from_components(map, fd, 0, Some(key), vec![LeafComponent { a, b, offset: 0 }])).collect();
    out.sort_by(|p, q| p.length.cmp(&q.length).then(p.key.cmp(&q.key)));
    for (i, o) in out.iter_mut().enumerate() {
        o.id = i as GenId;
    }
    out
}

/// Exact orbit within `lambda/(lambda-1) + 1` times the largest jump of
/// a finite pseudo-orbit: unstable errors are summed backward from the
/// end, stable errors forward from the start.
pub fn shadow(map: &HyperbolicMap, pseudo: &[TorusPoint], jump_tolerance: f64) -> Result<Vec<TorusPoint>, DynError> {
    let jumps = jumps_of(map, pseudo, jump_tolerance, false)?;
    let n = pseudo.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut cu = vec![0.0; n];
    let mut cs = vec![0.0; n];
    // c_{k+1} = M c_k - e_k, split along the eigenlines
    for k in (0..n - 1).rev() {
        cu[k] = (cu[k + 1] + jumps[k].0) / map.mu_u;
    }
    for k in 0..n - 1 {
        cs[k + 1] = map.mu_s * cs[k] - jumps[k].1;
    }
    Ok(pseudo.iter().enumerate().map(|(k, p)| p.translate(map.from_leaf_coords(cu[k], cs[k]))).collect())
}

/// Periodic orbit shadowing a cyclic pseudo-orbit (the last point jumps
/// back to the first).
pub fn shadow_periodic(map: &HyperbolicMap, pseudo: &[TorusPoint], jump_tolerance: f64) -> Result<Vec<TorusPoint>, DynError> {
    let jumps = jumps_of(map, pseudo, jump_tolerance, true)?;
    let n = pseudo.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    // (mu^n - 1) c_0 = sum_k mu^{n-1-k} e_k on each eigenline
    let solve = |mu: f64, pick: &dyn Fn(&(f64, f64)) -> f64| {
        let s: f64 = jumps.iter().enumerate().map(|(k, e)| mu.powi((n - 1 - k) as i32) * pick(e)).sum();
        s / (mu.powi(n as i32) - 1.0)
    };
    let mut cu = solve(map.mu_u, &|e| e.0);
    let mut cs = solve(map.mu_s, &|e| e.1);
    let mut out = Vec::with_capacity(n);
    for (k, p) in pseudo.iter().enumerate() {
        out.push(p.translate(map.from_leaf_coords(cu, cs)));
        cu = map.mu_u * cu - jumps[k].0;
        cs = map.mu_s * cs - jumps[k].1;
    }
    Ok(out)
}

/// Radius inside which the linear-model correction is trusted.
pub const SHADOW_RADIUS: f64 = 0.1;

fn jumps_of(map: &HyperbolicMap, pseudo: &[TorusPoint], limit: f64, cyclic: bool) -> Result<Vec<(f64, f64)>, DynError> {
    let n = pseudo.len();
    let count = if cyclic { n } else { n.saturating_sub(1) };
    let limit_eff = limit.min(SHADOW_RADIUS);
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let next = &pseudo[(k + 1) % n];
        let e = map.apply(&pseudo[k]).delta_to(next);
        let jump = norm(e);
        if jump > limit_eff {
            return Err(DynError::JumpTooLarge { step: k, jump, limit: limit_eff });
        }
        out.push(map.leaf_coords(e));
    }
    Ok(out)
}

/// Largest defect `|map(y_k) - y_{k+1}|` along a sequence.
pub fn orbit_defect(map: &HyperbolicMap, pts: &[TorusPoint]) -> f64 {
    pts.windows(2).map(|w| map.apply(&w[0]).dist(&w[1])).fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoodOrbit {
    pub orbit: HomoclinicOrbit,
    /// Largest distance from a net point to the trunk.
    pub density_radius: f64,
    /// Smallest distance between two trunk points.
    pub separation_radius: f64,
    pub epsilon: f64,
    pub budget: u32,
}

/// Net used to measure density: a shifted `side x side` lattice.
pub const DENSITY_NET_SIDE: usize = 16;

pub fn density_net(side: usize) -> Vec<TorusPoint> {
    let h = 1.0 / side as f64;
    (0..side * side).map(|i| TorusPoint::new((i / side) as f64 * h + h / 2.0, (i % side) as f64 * h + h / 2.0)).collect()
}

pub fn density_radius(trunk: &[TorusPoint], net: &[TorusPoint]) -> f64 {
    net.iter().map(|p| trunk.iter().map(|t| p.dist(t)).fold(f64::INFINITY, f64::min)).fold(0.0, f64::max)
}

pub fn separation_radius(trunk: &[TorusPoint]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..trunk.len() {
        for j in i + 1..trunk.len() {
            best = best.min(trunk[i].dist(&trunk[j]));
        }
    }
    best
}

/// Longest length searched exhaustively; longer budgets add glued orbits.
pub const EXHAUSTIVE_LENGTH: u32 = 12;
/// Length of the pieces used for gluing.
const GLUE_PIECE_LENGTH: u32 = 8;
/// Steps spent near 0 between glued pieces.
const GLUE_PADDING: i64 = 2;

/// Homoclinic orbit with `length <= eps^{-1/2}` whose trunk is as dense as
/// possible on the net.
///
/// Short budgets are searched exhaustively. Longer budgets also try a
/// greedy concatenation of short excursions separated by a few steps at 0;
/// for a linear map the shadowing orbit of such a chain is the sum of the
/// shifted leaf components, so it is formed in closed form.
pub fn good_orbit(map: &HyperbolicMap, fd: &FundamentalDomains, eps: f64) -> Result<GoodOrbit, DynError> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(DynError::InvalidParameter(format!("good-orbit epsilon {eps} must lie in (0, 1)")));
    }
    let budget = eps.powf(-0.5).floor() as u32;
    let net = density_net(DENSITY_NET_SIDE);
    let mut candidates = homoclinic_by_length(map, fd, budget.min(EXHAUSTIVE_LENGTH));
    if budget > EXHAUSTIVE_LENGTH {
        let pieces = homoclinic_by_length(map, fd, GLUE_PIECE_LENGTH);
        if let Some(g) = glue_greedy(map, fd, &pieces, budget, &net) {
            candidates.push(g);
        }
    }
    let best = candidates
        .into_iter()
        .filter(|o| o.length <= budget)
        .map(|o| (density_radius(&o.trunk, &net), o))
        .min_by(|(d1, o1), (d2, o2)| d1.total_cmp(d2).then(o1.length.cmp(&o2.length)).then(o1.id.cmp(&o2.id)));
    let (density, orbit) = best.ok_or(DynError::BudgetExceeded { budget })?;
    let separation = separation_radius(&orbit.trunk);
    Ok(GoodOrbit { orbit, density_radius: density, separation_radius: separation, epsilon: eps, budget })
}

fn mean_net_distance(trunk: &[TorusPoint], net: &[TorusPoint]) -> f64 {
    net.iter().map(|p| trunk.iter().map(|t| p.dist(t)).fold(f64::INFINITY, f64::min)).sum::<f64>() / net.len() as f64
}

/// Greedy chain: each step appends the piece that most lowers the mean
/// net distance (the max rarely moves one piece at a time).
fn glue_greedy(map: &HyperbolicMap, fd: &FundamentalDomains, pieces: &[HomoclinicOrbit], budget: u32, net: &[TorusPoint]) -> Option<HomoclinicOrbit> {
    let mut chain: Vec<LeafComponent> = Vec::new();
    let mut trunk: Vec<TorusPoint> = Vec::new();
    let mut end: i64 = 0;
    let mut current = f64::INFINITY;
    loop {
        let start = if chain.is_empty() { 0 } else { end + GLUE_PADDING };
        let mut best: Option<(f64, &HomoclinicOrbit)> = None;
        for p in pieces {
            // renormalizing the sum can shift the entry by one step
            if start + p.length as i64 > budget as i64 - 1 {
                continue;
            }
            let mut t = trunk.clone();
            t.extend(p.trunk.iter().copied());
            let d = mean_net_distance(&t, net);
            if best.is_none_or(|(bd, _)| d < bd - 1e-12) {
                best = Some((d, p));
            }
        }
        let Some((d, p)) = best else { break };
        if d >= current - 1e-12 {
            break;
        }
        current = d;
        for c in &p.components {
            chain.push(LeafComponent { a: c.a, b: c.b, offset: c.offset + start });
        }
        trunk.extend(p.trunk.iter().copied());
        end = start + p.length as i64;
    }
    if chain.len() < 2 {
        return None;
    }
    Some(HomoclinicOrbit::from_components(map, fd, GenId::MAX, None, chain))
}
