//! Approximate Livšic solver: from two cocycles with nearly equal Wilson
//! loops, build a unitary section `p` with small defect
//! `p(Mx) - A_2(x) p(x) A_1(x)*`.
//!
//! Pipeline: good orbit, Parry representations on short homoclinic
//! generators, near-conjugacy `P` at the fixed point, `p_-` along the
//! trunk, chartwise Hölder extension, blend by a partition of unity,
//! nodewise polar projection. Sections are stored as `r x r` matrices
//! `E_1 -> E_2`; every transport acts by `M_2 q M_1*`.

use std::collections::VecDeque;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cocycle::{
    parry_eval_with, stable_holonomy_with, transport_along, unstable_holonomy_with, wilson_discrepancy, BridgeKind, CocycleError, CocycleField, HolonomyOptions,
};
use crate::dynamics::{
    bowen_bracket, enumerate_periodic_orbits, fundamental_domains_with, good_orbit, homoclinic_by_length, DynError, GoodOrbit, HomoclinicOrbit, TorusPoint,
    BRACKET_RADIUS,
};
use crate::freemonoid::{CharTable, FreeWord};
use crate::matalg::{operator_norm, polar_unitary, radial_distance, svd, CMatrix, MatError, UnitaryMatrix, C64};
use crate::repstab::{near_conjugacy_with_basis, select_spanning_words, RepError, UnitaryRep};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LivsicError {
    #[error("Parry representation of the reference cocycle is not irreducible")]
    NotIrreducible,
    #[error("rank test failed: reference rank {r0}, witnessed rank {witness}")]
    RankMismatch { r0: usize, witness: usize },
    #[error("power table has {have} exponents, the rank test needs {need}")]
    InsufficientPowers { have: usize, need: usize },
    #[error("Wilson discrepancy {measured:e} exceeds budget {budget:e}")]
    OverBudget { measured: f64, budget: f64 },
    #[error("node {node} has smallest singular value {sigma_min:e} <= 0.1")]
    NearSingularNode { node: usize, sigma_min: f64 },
    #[error("point ({x}, {y}) has zero total chart weight")]
    CoverGap { x: f64, y: f64 },
    #[error("no chart holds trunk data")]
    EmptyCover,
    #[error(transparent)]
    Dynamics(#[from] DynError),
    #[error(transparent)]
    Cocycle(#[from] CocycleError),
    #[error(transparent)]
    Rep(#[from] RepError),
    #[error(transparent)]
    Matrix(#[from] MatError),
}

/// A pipeline failure and the stage it happened in.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("stage {stage}: {error}")]
pub struct StageError {
    pub stage: &'static str,
    pub error: LivsicError,
}

trait AtStage<T> {
    fn at(self, stage: &'static str) -> Result<T, StageError>;
}

impl<T, E: Into<LivsicError>> AtStage<T> for Result<T, E> {
    fn at(self, stage: &'static str) -> Result<T, StageError> {
        self.map_err(|e| StageError { stage, error: e.into() })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LivsicConfig {
    /// Target of the good-orbit construction, independent of the budget.
    pub good_orbit_eps: f64,
    /// Half-width of the fundamental domains.
    pub domain_delta: f64,
    /// Number of short homoclinic orbits used as Parry generators.
    #[serde(rename = "parry_generators")]
    pub generators: usize,
    /// Longest word scanned for a spanning basis.
    pub span_len: usize,
    /// Output grid side.
    pub grid: usize,
    /// Charts per side.
    pub chart_side: usize,
    /// Certified tolerance of every holonomy.
    pub holonomy_tol: f64,
    /// Periodic orbits up to this period enter the Wilson check.
    pub wilson_period: u32,
    /// Largest rank the pigeonhole test considers.
    pub r_max: usize,
    /// Powers of the first generator scanned by the rank test.
    pub power_budget: u32,
}

impl Default for LivsicConfig {
    fn default() -> Self {
        LivsicConfig {
            good_orbit_eps: 0.01,
            domain_delta: 0.15,
            generators: 4,
            span_len: 4,
            grid: 32,
            chart_side: 8,
            holonomy_tol: 1e-9,
            wilson_period: 8,
            r_max: 4,
            power_budget: 4096,
        }
    }
}

/// Longest segment bridged by a single bracket.
const BRIDGE_STEP: f64 = 0.2;

/// The two cocycles of the equation, source `A_1` and target `A_2`.
#[derive(Clone, Copy)]
pub struct Pair<'a> {
    pub source: &'a CocycleField,
    pub target: &'a CocycleField,
    pub tol: f64,
}

/// Fiber maps of the same path for both cocycles.
#[derive(Clone, Debug)]
pub struct PairMap {
    pub m1: CMatrix,
    pub m2: CMatrix,
}

impl PairMap {
    pub fn identity(r: usize) -> Self {
        PairMap { m1: CMatrix::identity(r), m2: CMatrix::identity(r) }
    }

    /// `M_2 q M_1*`.
    pub fn apply(&self, q: &CMatrix) -> CMatrix {
        &(&self.m2 * q) * &self.m1.adjoint()
    }

    pub fn then(&self, next: &PairMap) -> PairMap {
        PairMap { m1: &next.m1 * &self.m1, m2: &next.m2 * &self.m2 }
    }

    pub fn inverse(&self) -> PairMap {
        PairMap { m1: self.m1.adjoint(), m2: self.m2.adjoint() }
    }
}

impl Pair<'_> {
    fn rank(&self) -> usize {
        self.source.rank
    }

    fn opts() -> HolonomyOptions {
        HolonomyOptions { bridge: BridgeKind::Flat, depth: None }
    }

    /// `H^u_{z -> x} H^s_{y -> z}` with `z` the bracket of `x` and `y`.
    pub fn su_bridge(&self, y: &TorusPoint, x: &TorusPoint) -> Result<PairMap, LivsicError> {
        if x == y {
            return Ok(PairMap::identity(self.rank()));
        }
        // far pairs: chain short brackets along the straight segment
        let d = y.delta_to(x);
        let dist = d[0].hypot(d[1]);
        if dist > BRIDGE_STEP {
            let steps = (dist / BRIDGE_STEP).ceil() as usize;
            let mut acc = PairMap::identity(self.rank());
            let mut from = *y;
            for k in 1..=steps {
                let f = k as f64 / steps as f64;
                let to = if k == steps { *x } else { y.translate([f * d[0], f * d[1]]) };
                acc = acc.then(&self.su_bridge(&from, &to)?);
                from = to;
            }
            return Ok(acc);
        }
        let (z, _) = bowen_bracket(&self.source.map, x, y, BRACKET_RADIUS)?;
        let one = |c: &CocycleField| -> Result<CMatrix, CocycleError> {
            let hs = stable_holonomy_with(c, y, &z, self.tol, &Self::opts())?;
            let hu = unstable_holonomy_with(c, &z, x, self.tol, &Self::opts())?;
            Ok(hu.u.matrix() * hs.u.matrix())
        };
        Ok(PairMap { m1: one(self.source)?, m2: one(self.target)? })
    }

    fn transport_along(&self, pts: &[TorusPoint]) -> PairMap {
        PairMap { m1: transport_along(self.source, pts).into_matrix(), m2: transport_along(self.target, pts).into_matrix() }
    }

    fn unstable(&self, x: &TorusPoint, y: &TorusPoint) -> Result<PairMap, LivsicError> {
        Ok(PairMap {
            m1: unstable_holonomy_with(self.source, x, y, self.tol, &Self::opts())?.u.into_matrix(),
            m2: unstable_holonomy_with(self.target, x, y, self.tol, &Self::opts())?.u.into_matrix(),
        })
    }

    fn stable(&self, x: &TorusPoint, y: &TorusPoint) -> Result<PairMap, LivsicError> {
        Ok(PairMap {
            m1: stable_holonomy_with(self.source, x, y, self.tol, &Self::opts())?.u.into_matrix(),
            m2: stable_holonomy_with(self.target, x, y, self.tol, &Self::opts())?.u.into_matrix(),
        })
    }

    /// `p(Mx) - A_2(x) p(x) A_1(x)*` given `p(Mx)` and `p(x)`.
    fn defect(&self, x: &TorusPoint, p_next: &CMatrix, p_here: &CMatrix) -> CMatrix {
        let step = PairMap { m1: self.source.at(x), m2: self.target.at(x) };
        p_next - &step.apply(p_here)
    }
}

/// Character of the Parry representation on each word, with certified errors.
pub fn harvest_characters(c: &CocycleField, gens: &[HomoclinicOrbit], words: &[FreeWord], tol: f64) -> Result<(CharTable, Vec<f64>), CocycleError> {
    let mut table = CharTable::new();
    let mut errors = Vec::with_capacity(words.len());
    for w in words {
        let (u, e) = crate::cocycle::parry_word(c, gens, w, tol, BridgeKind::Flat)?;
        table.insert(w.clone(), u.matrix().trace());
        // |tr X - tr Y| <= r ||X - Y||
        errors.push(e * c.rank as f64);
    }
    Ok((table, errors))
}

/// Fewest powers the rank test accepts for ranks up to `r_max`.
pub fn pigeonhole_powers(r_max: usize) -> usize {
    (3.0 * PI * (r_max as f64 + 1.0)).ceil() as usize
}

/// Relative trace gap below which a power counts as near the identity.
pub const NEAR_IDENTITY: f64 = 0.2;

/// Pigeonhole rank test on characters of powers `gamma^j`, `j = 1, 2, ...`.
///
/// Scans for a `j` where the reference character sits within
/// `NEAR_IDENTITY * r0` of `r0` and the other character within
/// `NEAR_IDENTITY * r` of some `r <= r_max`; the closest such pair witnesses
/// the rank. Returns whether the witness equals `r0`.
pub fn check_rank_agreement(t0: &CharTable, t: &CharTable, gamma: &FreeWord, r0: usize, r_max: usize) -> Result<bool, LivsicError> {
    let need = pigeonhole_powers(r_max);
    let mut rows = Vec::new();
    for j in 1.. {
        let w = power_word(gamma, j);
        match (t0.get(&w), t.get(&w)) {
            (Some(a), Some(b)) => rows.push((a, b)),
            _ => break,
        }
    }
    if rows.len() < need {
        return Err(LivsicError::InsufficientPowers { have: rows.len(), need });
    }
    let mut best: Option<(f64, usize)> = None;
    for (a, b) in &rows {
        let ref_gap = (a - C64::new(r0 as f64, 0.0)).norm() / r0 as f64;
        for r in 1..=r_max {
            let gap = ref_gap.max((b - C64::new(r as f64, 0.0)).norm() / r as f64);
            if gap <= NEAR_IDENTITY && best.is_none_or(|(g, _)| gap < g) {
                best = Some((gap, r));
            }
        }
    }
    match best {
        Some((_, r)) => Ok(r == r0),
        None => Err(LivsicError::InsufficientPowers { have: rows.len(), need: rows.len() + 1 }),
    }
}

pub fn power_word(gamma: &FreeWord, j: u32) -> FreeWord {
    let mut w = FreeWord::identity();
    for _ in 0..j {
        w = crate::freemonoid::concat(&w, gamma);
    }
    w
}

/// Characters of `gamma^j` for `j = 1..=count`, by repeated multiplication.
pub fn power_table(rep: &UnitaryRep, gamma: &FreeWord, count: u32) -> Result<CharTable, RepError> {
    let base = rep.eval(gamma)?;
    let mut acc = base.matrix().clone();
    let mut table = CharTable::new();
    for j in 1..=count {
        table.insert(power_word(gamma, j), acc.trace());
        acc = &acc * base.matrix();
    }
    Ok(table)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrunkSample {
    pub index: i64,
    pub point: TorusPoint,
    pub p_minus: UnitaryMatrix,
    pub p_plus: UnitaryMatrix,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrunkSection {
    pub samples: Vec<TrunkSample>,
    /// `max ||p_-(x) - p_+(x)||` over the samples.
    pub mismatch: f64,
}

/// `p_-` along the trunk from the unstable side of 0, `p_+` from the
/// stable side, both starting from `P_star` at 0.
pub fn trunk_sections(pair: Pair<'_>, p_star: &UnitaryMatrix, good: &GoodOrbit) -> Result<TrunkSection, LivsicError> {
    let orbit = &good.orbit;
    let origin = TorusPoint::ORIGIN;
    let len = orbit.length as usize;
    let into_entry = pair.unstable(&origin, &orbit.x_u)?;
    let out_of_exit = pair.stable(&orbit.x_s, &origin)?;
    let mut samples = Vec::with_capacity(len + 1);
    let mut mismatch = 0.0f64;
    for k in 0..=len {
        let before = pair.transport_along(&orbit.trunk[..k]);
        let after = pair.transport_along(&orbit.trunk[k..len]);
        let minus = into_entry.then(&before).apply(p_star.matrix());
        // 0 <- x_s <- x_k, inverted
        let plus = after.then(&out_of_exit).inverse().apply(p_star.matrix());
        mismatch = mismatch.max(operator_norm(&(&minus - &plus)));
        samples.push(TrunkSample { index: k as i64, point: orbit.trunk[k], p_minus: UnitaryMatrix::trusted(minus), p_plus: UnitaryMatrix::trusted(plus) });
    }
    Ok(TrunkSection { samples, mismatch })
}

/// Boxes centered on an `n x n` lattice, sides along `v_u` and `v_s`,
/// with normalized cosine-squared weights.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChartCover {
    pub side: usize,
    pub half_width: f64,
    pub centers: Vec<TorusPoint>,
    v_u: [f64; 2],
    v_s: [f64; 2],
}

impl ChartCover {
    pub fn new(pair: Pair<'_>, side: usize) -> Self {
        let h = 1.0 / side as f64;
        let centers = (0..side * side).map(|i| TorusPoint::new((i / side) as f64 * h + h / 2.0, (i % side) as f64 * h + h / 2.0)).collect();
        ChartCover { side, half_width: h, centers, v_u: pair.source.map.v_u, v_s: pair.source.map.v_s }
    }

    /// One chart covering the whole torus with constant weight.
    pub fn single(pair: Pair<'_>, center: TorusPoint) -> Self {
        ChartCover { side: 1, half_width: f64::INFINITY, centers: vec![center], v_u: pair.source.map.v_u, v_s: pair.source.map.v_s }
    }

    fn box_coords(&self, j: usize, x: &TorusPoint) -> (f64, f64) {
        let d = self.centers[j].delta_to(x);
        let det = self.v_u[0] * self.v_s[1] - self.v_u[1] * self.v_s[0];
        let u = (d[0] * self.v_s[1] - d[1] * self.v_s[0]) / det;
        let s = (self.v_u[0] * d[1] - self.v_u[1] * d[0]) / det;
        (u, s)
    }

    fn raw_weight(&self, j: usize, x: &TorusPoint) -> f64 {
        if self.half_width.is_infinite() {
            return 1.0;
        }
        let (u, s) = self.box_coords(j, x);
        let w = self.half_width;
        if u.abs() >= w || s.abs() >= w {
            return 0.0;
        }
        (PI * u / (2.0 * w)).cos().powi(2) * (PI * s / (2.0 * w)).cos().powi(2)
    }

    pub fn contains(&self, j: usize, x: &TorusPoint) -> bool {
        self.raw_weight(j, x) > 0.0
    }

    /// `(chart, chi_j(x))` for charts whose support contains `x`.
    pub fn weights(&self, x: &TorusPoint) -> Result<Vec<(usize, f64)>, LivsicError> {
        let raw: Vec<(usize, f64)> = (0..self.centers.len()).map(|j| (j, self.raw_weight(j, x))).filter(|(_, w)| *w > 0.0).collect();
        let total: f64 = raw.iter().map(|(_, w)| w).sum();
        if total <= 0.0 {
            return Err(LivsicError::CoverGap { x: x.x, y: x.y });
        }
        Ok(raw.into_iter().map(|(j, w)| (j, w / total)).collect())
    }

    fn neighbours(&self, j: usize) -> Vec<usize> {
        let n = self.side;
        if n == 1 {
            return Vec::new();
        }
        let (a, b) = ((j / n) as i64, (j % n) as i64);
        let mut out = Vec::new();
        for da in -1..=1i64 {
            for db in -1..=1i64 {
                if da == 0 && db == 0 {
                    continue;
                }
                let (p, q) = ((a + da).rem_euclid(n as i64) as usize, (b + db).rem_euclid(n as i64) as usize);
                out.push(p * n + q);
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Trunk data of one chart, moved to the chart center.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChartData {
    pub points: Vec<TorusPoint>,
    /// Section values `q(y)` in the fiber at the center (frame coefficients).
    pub coefficients: Vec<CMatrix>,
    /// Hölder seminorm of the coefficients over the points.
    pub seminorm: f64,
    /// True when the data was inherited from a neighbouring chart.
    pub inherited: bool,
}

impl ChartData {
    /// McShane-type extension `min_y (a(y) + 2 S d(x, y)^alpha)`, real and
    /// imaginary parts separately.
    pub fn extend(&self, x: &TorusPoint, alpha: f64) -> CMatrix {
        let r = self.coefficients[0].rows();
        let lift = 2.0 * self.seminorm;
        let dists: Vec<f64> = self.points.iter().map(|y| lift * x.dist(y).powf(alpha)).collect();
        CMatrix::from_fn(r, r, |i, j| {
            let re = self.coefficients.iter().zip(&dists).map(|(a, d)| a[(i, j)].re + d).fold(f64::INFINITY, f64::min);
            let im = self.coefficients.iter().zip(&dists).map(|(a, d)| a[(i, j)].im + d).fold(f64::INFINITY, f64::min);
            C64::new(re, im)
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChartCoefficients {
    pub charts: Vec<ChartData>,
    pub alpha: f64,
    pub empty_charts: usize,
}

fn entry_seminorm(points: &[TorusPoint], values: &[CMatrix], alpha: f64) -> f64 {
    let mut s = 0.0f64;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d = points[i].dist(&points[j]);
            if d > 0.0 {
                s = s.max((&values[i] - &values[j]).max_abs() / d.powf(alpha));
            }
        }
    }
    s
}

/// Frame coefficients of `p_-` in every chart; empty charts inherit the
/// center value of an already-filled neighbour, nearest first.
pub fn holder_extend(pair: Pair<'_>, trunk: &TrunkSection, cover: &ChartCover, alpha: f64) -> Result<ChartCoefficients, LivsicError> {
    let n = cover.centers.len();
    let mut charts: Vec<Option<ChartData>> = (0..n)
        .into_par_iter()
        .map(|j| -> Result<Option<ChartData>, LivsicError> {
            let center = cover.centers[j];
            let mut points = Vec::new();
            let mut coefficients = Vec::new();
            for s in &trunk.samples {
                if cover.contains(j, &s.point) {
                    let bridge = pair.su_bridge(&s.point, &center)?;
                    points.push(s.point);
                    coefficients.push(bridge.apply(s.p_minus.matrix()));
                }
            }
            if points.is_empty() {
                return Ok(None);
            }
            let seminorm = entry_seminorm(&points, &coefficients, alpha);
            Ok(Some(ChartData { points, coefficients, seminorm, inherited: false }))
        })
        .collect::<Result<_, _>>()?;
    let empty_charts = charts.iter().filter(|c| c.is_none()).count();
    if empty_charts == n {
        return Err(LivsicError::EmptyCover);
    }
    // breadth-first from the charts holding data
    let mut queue: VecDeque<usize> = (0..n).filter(|&j| charts[j].is_some()).collect();
    while let Some(k) = queue.pop_front() {
        for j in cover.neighbours(k) {
            if charts[j].is_some() {
                continue;
            }
            let src = charts[k].as_ref().expect("queued charts are filled");
            let (from, to) = (cover.centers[k], cover.centers[j]);
            let value = src.extend(&from, alpha);
            let moved = pair.su_bridge(&from, &to)?.apply(&value);
            charts[j] = Some(ChartData { points: vec![to], coefficients: vec![moved], seminorm: 0.0, inherited: true });
            queue.push_back(j);
        }
    }
    let charts = charts.into_iter().map(|c| c.expect("cover graph is connected")).collect();
    Ok(ChartCoefficients { charts, alpha, empty_charts })
}

/// Regular `side x side` grid of the torus; node `i * side + j` sits at `(i/side, j/side)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub side: usize,
}

impl Grid {
    pub fn len(&self) -> usize {
        self.side * self.side
    }

    pub fn is_empty(&self) -> bool {
        self.side == 0
    }

    pub fn node(&self, k: usize) -> TorusPoint {
        let h = 1.0 / self.side as f64;
        TorusPoint::new((k / self.side) as f64 * h, (k % self.side) as f64 * h)
    }

    pub fn nearest(&self, x: &TorusPoint) -> usize {
        let n = self.side;
        let i = ((x.x * n as f64).round() as usize) % n;
        let j = ((x.y * n as f64).round() as usize) % n;
        i * n + j
    }

    /// Corner nodes of the cell holding `x`, with bilinear weights.
    pub fn cell(&self, x: &TorusPoint) -> [(usize, f64); 4] {
        let n = self.side;
        let (fx, fy) = (x.x * n as f64, x.y * n as f64);
        let (i0, j0) = (fx.floor() as usize % n, fy.floor() as usize % n);
        let (tx, ty) = (fx - fx.floor(), fy - fy.floor());
        let (i1, j1) = ((i0 + 1) % n, (j0 + 1) % n);
        [(i0 * n + j0, (1.0 - tx) * (1.0 - ty)), (i1 * n + j0, tx * (1.0 - ty)), (i0 * n + j1, (1.0 - tx) * ty), (i1 * n + j1, tx * ty)]
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExtendedSection {
    pub grid: Grid,
    pub values: Vec<CMatrix>,
    pub alpha: f64,
    pub seminorm: f64,
    /// `max ||p~(y) - p_-(y)||` over trunk points.
    pub trunk_agreement: f64,
    /// Sup of the defect of `p~` on the grid.
    pub defect_sup: f64,
}

/// `sum_j chi_j(x) B_{x_j -> x} b_j(x)` at one point.
pub fn blended_value(pair: Pair<'_>, coeffs: &ChartCoefficients, cover: &ChartCover, x: &TorusPoint) -> Result<CMatrix, LivsicError> {
    let r = pair.rank();
    let mut acc = CMatrix::zeros(r, r);
    for (j, w) in cover.weights(x)? {
        let local = coeffs.charts[j].extend(x, coeffs.alpha);
        let moved = pair.su_bridge(&cover.centers[j], x)?.apply(&local);
        acc = &acc + &moved.scale_re(w);
    }
    Ok(acc)
}

/// Blends the chart sections onto the grid and measures the result.
pub fn blend(pair: Pair<'_>, coeffs: &ChartCoefficients, cover: &ChartCover, trunk: &TrunkSection, grid: Grid) -> Result<ExtendedSection, LivsicError> {
    let values: Vec<CMatrix> = (0..grid.len()).into_par_iter().map(|k| blended_value(pair, coeffs, cover, &grid.node(k))).collect::<Result<_, _>>()?;
    let mut trunk_agreement = 0.0f64;
    for s in &trunk.samples {
        let v = blended_value(pair, coeffs, cover, &s.point)?;
        trunk_agreement = trunk_agreement.max(operator_norm(&(&v - s.p_minus.matrix())));
    }
    let defect_sup = grid_defect(pair, grid, &values)?.iter().map(operator_norm).fold(0.0, f64::max);
    let seminorm = holder_seminorm(&values, grid, coeffs.alpha);
    Ok(ExtendedSection { grid, values, alpha: coeffs.alpha, seminorm, trunk_agreement, defect_sup })
}

/// `p(Mx)` by bilinear interpolation of bridged corner values.
pub fn interpolate(pair: Pair<'_>, grid: Grid, values: &[CMatrix], x: &TorusPoint) -> Result<CMatrix, LivsicError> {
    let r = pair.rank();
    let mut acc = CMatrix::zeros(r, r);
    for (k, w) in grid.cell(x) {
        if w == 0.0 {
            continue;
        }
        let moved = pair.su_bridge(&grid.node(k), x)?.apply(&values[k]);
        acc = &acc + &moved.scale_re(w);
    }
    Ok(acc)
}

/// Defect `p(Mx) - A_2(x) p(x) A_1(x)*` at every node.
pub fn grid_defect(pair: Pair<'_>, grid: Grid, values: &[CMatrix]) -> Result<Vec<CMatrix>, LivsicError> {
    (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let x = grid.node(k);
            let next = interpolate(pair, grid, values, &pair.source.map.apply(&x))?;
            Ok(pair.defect(&x, &next, &values[k]))
        })
        .collect()
}

/// `max ||s(x) - s(y)||_F / d(x, y)^alpha` over node pairs closer than 0.25.
pub fn holder_seminorm(values: &[CMatrix], grid: Grid, alpha: f64) -> f64 {
    let n = grid.side as i64;
    let reach = (0.25 * n as f64).floor() as i64;
    (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let (i, j) = ((k / grid.side) as i64, (k % grid.side) as i64);
            let x = grid.node(k);
            let mut best = 0.0f64;
            for di in -reach..=reach {
                for dj in -reach..=reach {
                    if (di, dj) <= (0, 0) {
                        continue;
                    }
                    let m = ((i + di).rem_euclid(n) * n + (j + dj).rem_euclid(n)) as usize;
                    let d = x.dist(&grid.node(m));
                    if d > 0.25 || d == 0.0 {
                        continue;
                    }
                    best = best.max((&values[k] - &values[m]).frob_norm() / d.powf(alpha));
                }
            }
            best
        })
        .reduce(|| 0.0, f64::max)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UnitarizedSection {
    pub values: Vec<UnitaryMatrix>,
    /// Largest distance of a radial factor from the identity.
    pub radial_max: f64,
}

/// Nodewise polar projection; every node needs `sigma_min > 0.1`.
pub fn unitarize_section(section: &ExtendedSection) -> Result<UnitarizedSection, LivsicError> {
    let mut values = Vec::with_capacity(section.values.len());
    let mut radial_max = 0.0f64;
    for (node, v) in section.values.iter().enumerate() {
        let sigma_min = svd(v).s.last().copied().unwrap_or(0.0);
        if sigma_min <= 0.1 {
            return Err(LivsicError::NearSingularNode { node, sigma_min });
        }
        radial_max = radial_max.max(radial_distance(v));
        values.push(polar_unitary(v, 0.1)?);
    }
    Ok(UnitarizedSection { values, radial_max })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LivsicReport {
    pub grid: Grid,
    pub p: Vec<UnitaryMatrix>,
    /// `sup ||p(Mx) - A_2 p A_1*||_op` over the grid.
    pub sup_defect: f64,
    pub defect_holder: f64,
    /// Measured Wilson discrepancy of the input pair.
    pub epsilon: f64,
    pub alpha: f64,
    pub tau_hat: Option<f64>,
    pub conjugacy_residual: f64,
    pub trunk_mismatch: f64,
    pub trunk_agreement: f64,
    pub blend_defect: f64,
    pub radial_max: f64,
    pub section_holder: f64,
    pub empty_charts: usize,
    pub good_orbit_length: u32,
    pub density_radius: f64,
    pub separation_radius: f64,
    pub generator_count: usize,
    pub longest_word: u32,
}

impl LivsicReport {
    /// Scalar fields as a flat JSON object with sorted keys.
    pub fn scalars_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("report serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("p");
        }
        sort_keys(v)
    }

    /// Row-major nodes, `r^2` complex entries each, little-endian `f64` pairs.
    pub fn grid_bytes(&self) -> Vec<u8> {
        section_bytes(self.p.iter().map(UnitaryMatrix::matrix))
    }
}

pub fn section_bytes<'a>(values: impl IntoIterator<Item = &'a CMatrix>) -> Vec<u8> {
    let mut out = Vec::new();
    for m in values {
        for z in m.data() {
            out.extend_from_slice(&z.re.to_le_bytes());
            out.extend_from_slice(&z.im.to_le_bytes());
        }
    }
    out
}

pub(crate) fn sort_keys(v: serde_json::Value) -> serde_json::Value {
    match v {
        serde_json::Value::Object(m) => {
            let sorted: std::collections::BTreeMap<String, serde_json::Value> = m.into_iter().map(|(k, v)| (k, sort_keys(v))).collect();
            serde_json::to_value(sorted).expect("map serializes")
        }
        serde_json::Value::Array(a) => serde_json::Value::Array(a.into_iter().map(sort_keys).collect()),
        other => other,
    }
}

/// Every intermediate artifact, for inspection.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LivsicStages {
    pub good: GoodOrbit,
    pub p_star: UnitaryMatrix,
    pub trunk: TrunkSection,
    pub coefficients: ChartCoefficients,
    pub extended: ExtendedSection,
}

pub fn livsic_solve(c0: &CocycleField, c: &CocycleField, eps_budget: f64, config: &LivsicConfig) -> Result<LivsicReport, StageError> {
    livsic_solve_staged(c0, c, eps_budget, config).map(|(r, _)| r)
}

pub fn livsic_solve_staged(c0: &CocycleField, c: &CocycleField, eps_budget: f64, config: &LivsicConfig) -> Result<(LivsicReport, LivsicStages), StageError> {
    if c0.rank != c.rank {
        return Err(StageError { stage: "input", error: LivsicError::Cocycle(CocycleError::RankMismatch(c0.rank, c.rank)) });
    }
    let map = &c0.map;
    let pair = Pair { source: c0, target: c, tol: config.holonomy_tol };

    let orbits = enumerate_periodic_orbits(map, config.wilson_period);
    let epsilon = wilson_discrepancy(c0, c, &orbits).at("wilson")?;
    if epsilon > eps_budget {
        return Err(StageError { stage: "wilson", error: LivsicError::OverBudget { measured: epsilon, budget: eps_budget } });
    }

    let fd = fundamental_domains_with(map, config.domain_delta);
    let good = good_orbit(map, &fd, config.good_orbit_eps).at("good_orbit")?;

    // Parry representations on the shortest homoclinic generators.
    let budget = config.good_orbit_eps.powf(-0.5).floor() as u32;
    let mut gens = homoclinic_by_length(map, &fd, budget);
    gens.truncate(config.generators);
    let parry = |cf: &CocycleField| -> Result<UnitaryRep, LivsicError> {
        let imgs = gens.iter().map(|g| parry_eval_with(cf, g, config.holonomy_tol, BridgeKind::Flat).map(|(u, _)| (g.id, u))).collect::<Result<_, _>>()?;
        Ok(UnitaryRep::new(cf.rank, imgs)?)
    };
    let rep0 = parry(c0).at("harvest")?;
    let rep = parry(c).at("harvest")?;
    let basis = select_spanning_words(&rep0, config.span_len).at("harvest")?;
    let longest_word = crate::freemonoid::build_G0(&basis.words).iter().map(FreeWord::letter_len).max().unwrap_or(0);

    let gamma = FreeWord::generator(gens[0].id);
    let t0 = power_table(&rep0, &gamma, config.power_budget).at("rank")?;
    let t1 = power_table(&rep, &gamma, config.power_budget).at("rank")?;
    if !check_rank_agreement(&t0, &t1, &gamma, c0.rank, config.r_max.max(c0.rank)).at("rank")? {
        return Err(StageError { stage: "rank", error: LivsicError::RankMismatch { r0: c0.rank, witness: c.rank } });
    }

    let report = near_conjugacy_with_basis(&rep0, &rep, &basis, &[]).map_err(|e| match e {
        RepError::NotIrreducible { .. } => StageError { stage: "near_conjugacy", error: LivsicError::NotIrreducible },
        other => StageError { stage: "near_conjugacy", error: other.into() },
    })?;
    // rho0 ≈ P rho P*, so P* carries E_1(0) to E_2(0).
    let p_star = report.p.adjoint();

    let trunk = trunk_sections(pair, &p_star, &good).at("trunk")?;
    let beta_s = (good.separation_radius.ln() / config.good_orbit_eps.ln()).max(1e-3);
    let alpha = (c0.holder.exponent / beta_s).clamp(0.05, 1.0);
    let cover = ChartCover::new(pair, config.chart_side);
    let coefficients = holder_extend(pair, &trunk, &cover, alpha).at("extend")?;
    let grid = Grid { side: config.grid };
    let extended = blend(pair, &coefficients, &cover, &trunk, grid).at("blend")?;
    let unitary = unitarize_section(&extended).at("unitarize")?;
    let mats: Vec<CMatrix> = unitary.values.iter().map(|u| u.matrix().clone()).collect();
    let defect = grid_defect(pair, grid, &mats).at("defect")?;
    let sup_defect = defect.iter().map(operator_norm).fold(0.0, f64::max);
    let defect_holder = holder_seminorm(&defect, grid, alpha);

    let out = LivsicReport {
        grid,
        p: unitary.values,
        sup_defect,
        defect_holder,
        epsilon,
        alpha,
        tau_hat: None,
        conjugacy_residual: report.residual,
        trunk_mismatch: trunk.mismatch,
        trunk_agreement: extended.trunk_agreement,
        blend_defect: extended.defect_sup,
        radial_max: unitary.radial_max,
        section_holder: extended.seminorm,
        empty_charts: coefficients.empty_charts,
        good_orbit_length: good.orbit.length,
        density_radius: good.density_radius,
        separation_radius: good.separation_radius,
        generator_count: gens.len(),
        longest_word,
    };
    let stages = LivsicStages { good, p_star, trunk, coefficients, extended };
    Ok((out, stages))
}

/// Least-squares slope of `ln y` against `ln x` over positive pairs.
pub fn fit_loglog(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs.iter().zip(ys).filter(|(x, y)| **x > 0.0 && **y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

/// Aligns `recovered` to `truth` by the unitary that best matches them at
/// one node, then returns the largest nodewise distance.
pub fn aligned_distance(recovered: &[UnitaryMatrix], truth: &[CMatrix], anchor: usize) -> Result<f64, MatError> {
    let w = polar_unitary(&(&recovered[anchor].matrix().adjoint() * &truth[anchor]), 1e-12)?;
    Ok(recovered.iter().zip(truth).map(|(p, t)| operator_norm(&(&(p.matrix() * w.matrix()) - t))).fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loglog_slope_of_power_law() {
        let xs = [1e-1, 1e-2, 1e-3];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(0.7)).collect();
        assert!((fit_loglog(&xs, &ys).unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn grid_cell_weights_sum_to_one() {
        let g = Grid { side: 8 };
        let w: f64 = g.cell(&TorusPoint::new(0.93, 0.41)).iter().map(|c| c.1).sum();
        assert!((w - 1.0).abs() < 1e-14);
    }
}
