use holiv::cocycle::*;
use holiv::dynamics::*;
use holiv::freemonoid::FreeWord;
use holiv::matalg::*;
use holiv::rng::{random_skew, random_unitary, stage_rng};
use proptest::prelude::*;

fn cat() -> HyperbolicMap {
    HyperbolicMap::cat()
}

fn random_field(seed: u64, rank: usize, amplitude: f64) -> CocycleField {
    let mut rng = stage_rng(seed, "field");
    CocycleField::new(cat(), FieldSpec::Trig(TrigField::random(&mut rng, rank, amplitude))).unwrap()
}

/// Field equal to `exp(s)` everywhere.
fn constant_field(s: CMatrix) -> CocycleField {
    let rank = s.rows();
    CocycleField::new(cat(), FieldSpec::Trig(TrigField { rank, terms: vec![TrigTerm(0, 0, s)] })).unwrap()
}

fn gauge_of(base: &CocycleField, seed: u64) -> CocycleField {
    let mut rng = stage_rng(seed, "gauge");
    let gauge = FieldSpec::Trig(TrigField::random(&mut rng, base.rank, 0.5));
    CocycleField::new(cat(), FieldSpec::Gauge { base: Box::new(base.spec.clone()), gauge: Box::new(gauge) }).unwrap()
}

fn dist(a: &CMatrix, b: &CMatrix) -> f64 {
    (a - b).frob_norm()
}

fn along(p: &TorusPoint, v: Vec2, t: f64) -> TorusPoint {
    p.translate([t * v[0], t * v[1]])
}

#[test]
fn transport_examples() {
    let c = random_field(1, 2, 0.4);
    let x = TorusPoint::new(0.2, 0.9);
    assert!(dist(transport(&c, &x, 0).matrix(), &CMatrix::identity(2)) < 1e-15);

    let mut rng = stage_rng(2, "const");
    let s = random_skew(&mut rng, 3);
    let k = constant_field(s.clone());
    let u = expm(&s);
    assert!(dist(transport(&k, &x, 5).matrix(), &u.powi(5)) < 1e-12);
    assert!(dist(transport(&k, &x, -2).matrix(), &u.adjoint().powi(2)) < 1e-12);

    let fwd = transport(&c, &x, 7);
    let back = transport(&c, &cat().iterate(&x, 7), -7);
    assert!(dist(&(back.matrix() * fwd.matrix()), &CMatrix::identity(2)) < 1e-12);
}

#[test]
fn holonomy_trivial_cases() {
    let mut rng = stage_rng(3, "hol-const");
    let k = constant_field(random_skew(&mut rng, 2));
    let x = TorusPoint::new(0.4, 0.1);
    let y = along(&x, cat().v_s, 0.03);
    let h = stable_holonomy(&k, &x, &y, 1e-12).unwrap();
    assert!(dist(h.u.matrix(), &CMatrix::identity(2)) < 1e-10);
    let z = along(&x, cat().v_u, 0.03);
    let h = unstable_holonomy(&k, &x, &z, 1e-12).unwrap();
    assert!(dist(h.u.matrix(), &CMatrix::identity(2)) < 1e-10);

    let c = random_field(4, 2, 0.4);
    for h in [stable_holonomy(&c, &x, &x, 1e-10).unwrap(), unstable_holonomy(&c, &x, &x, 1e-10).unwrap()] {
        assert!(dist(h.u.matrix(), &CMatrix::identity(2)) < 1e-12);
    }
}

#[test]
fn holonomy_errors() {
    let c = random_field(5, 2, 0.4);
    let x = TorusPoint::new(0.4, 0.1);
    let off = along(&x, cat().v_u, 0.03);
    assert!(matches!(stable_holonomy(&c, &x, &off, 1e-8), Err(CocycleError::NotOnLeaf { .. })));
    let y = along(&x, cat().v_s, 0.03);
    assert!(matches!(stable_holonomy(&c, &x, &y, 1e-300), Err(CocycleError::TolUnreachable { .. })));
}

/// With the identity bridge the truncation error is the leaf distance at
/// depth n, so successive 5-step differences shrink by lambda^-5.
#[test]
fn truncation_converges_geometrically() {
    let c = random_field(6, 2, 0.4);
    let map = cat();
    let rate5 = map.lambda.powf(-5.0 * c.holder.exponent);
    for leaf in [Leaf::Stable, Leaf::Unstable] {
        let x = TorusPoint::new(0.31, 0.77);
        let h = |n| holonomy_at_depth(&c, leaf, &x, 0.04, n, BridgeKind::Flat);
        let d1 = dist(&h(2), &h(7));
        let d2 = dist(&h(7), &h(12));
        assert!(d2 / d1 <= rate5 * 1.2, "{leaf:?}: {} vs {}", d2 / d1, rate5);
    }
}

#[test]
fn certified_error_is_honored() {
    let c = random_field(7, 2, 0.4);
    let x = TorusPoint::new(0.6, 0.25);
    for (leaf, v) in [(Leaf::Stable, cat().v_s), (Leaf::Unstable, cat().v_u)] {
        let y = along(&x, v, 0.05);
        let opts = HolonomyOptions { bridge: BridgeKind::Flat, depth: None };
        let h = match leaf {
            Leaf::Stable => stable_holonomy_with(&c, &x, &y, 1e-6, &opts).unwrap(),
            Leaf::Unstable => unstable_holonomy_with(&c, &x, &y, 1e-6, &opts).unwrap(),
        };
        assert!(h.certified_error <= 1e-6);
        let reference = holonomy_at_depth(&c, leaf, &x, 0.05, 60, BridgeKind::Flat);
        assert!(dist(h.u.matrix(), &reference) <= h.certified_error);
        assert!(h.u.defect() < 1e-10);
    }
}

#[test]
fn parry_of_constant_field_is_power() {
    let mut rng = stage_rng(8, "parry-const");
    let s = random_skew(&mut rng, 2);
    let k = constant_field(s.clone());
    let fd = fundamental_domains(&cat());
    for g in homoclinic_points(&cat(), &fd, 2) {
        let want = expm(&s).powi(g.length);
        let p = parry_eval(&k, &g, 1e-10).unwrap();
        assert!(dist(p.matrix(), &want) < 1e-10);
        for (m, n) in [(0, 0), (3, 1), (7, 9)] {
            let (q, _) = parry_approx(&k, &g, m, n, BridgeKind::Transported);
            assert!(dist(q.matrix(), &want) < 1e-10);
        }
    }
}

/// Rank one: the Parry phase is the sum of `theta(x_k) - theta(0)` over the
/// whole homoclinic orbit, which converges since `x_k -> 0` geometrically,
/// plus `length * theta(0)` for the steps spent on the trunk.
#[test]
fn parry_rank_one_phase_sum() {
    let c = random_field(9, 1, 0.5);
    let map = cat();
    let fd = fundamental_domains(&map);
    let theta = |p: &TorusPoint| c.at(p)[(0, 0)].arg();
    for g in homoclinic_points(&map, &fd, 2).iter().take(4) {
        let mut phase = g.length as f64 * theta(&TorusPoint::ORIGIN);
        for k in -60..(g.length as i64 + 60) {
            phase += theta(&g.point(&map, k)) - theta(&TorusPoint::ORIGIN);
        }
        let p = parry_eval(&c, g, 1e-12).unwrap();
        let (q, _) = parry_approx(&c, g, 40, 40, BridgeKind::Transported);
        assert!((p.matrix()[(0, 0)] - C64::from_polar(1.0, phase)).norm() < 1e-9);
        assert!(dist(p.matrix(), q.matrix()) < 1e-9);
    }
}

#[test]
fn parry_extends_multiplicatively() {
    let c = random_field(10, 2, 0.4);
    let fd = fundamental_domains(&cat());
    let gens = homoclinic_points(&cat(), &fd, 2);
    let tol = 1e-9;
    let (a, _) = parry_word(&c, &gens, &FreeWord::generator(gens[0].id), tol, BridgeKind::Transported).unwrap();
    let (b, _) = parry_word(&c, &gens, &FreeWord::generator(gens[1].id), tol, BridgeKind::Transported).unwrap();
    let (ab, err) = parry_word(&c, &gens, &FreeWord::from_letters(&[gens[0].id, gens[1].id]), tol, BridgeKind::Transported).unwrap();
    assert!(dist(ab.matrix(), &(a.matrix() * b.matrix())) <= 2.0 * tol);
    assert!(err <= 2.0 * tol);
    assert!(matches!(parry_word(&c, &gens, &FreeWord::generator(9999), tol, BridgeKind::Transported), Err(CocycleError::UnknownGenerator(9999))));
}

#[test]
fn parry_approx_bound_is_honored_and_decays() {
    let map = cat();
    let fd = fundamental_domains(&map);
    let gens = homoclinic_points(&map, &fd, 2);
    for seed in 0..5 {
        let c = random_field(100 + seed, 2, 0.4);
        for g in gens.iter().take(3) {
            let (reference, _) = parry_approx(&c, g, 50, 50, BridgeKind::Flat);
            let mut prev = f64::INFINITY;
            for m in 0..12 {
                let (q, bound) = parry_approx(&c, g, m, m + 1, BridgeKind::Flat);
                assert!(dist(q.matrix(), reference.matrix()) <= bound, "seed {seed} m {m}");
                if m > 0 {
                    let ratio = bound / prev;
                    assert!((ratio * map.lambda.powf(c.holder.exponent) - 1.0).abs() < 1e-9);
                }
                prev = bound;
            }
        }
    }
}

#[test]
fn wilson_examples() {
    let map = cat();
    let orbits = enumerate_periodic_orbits(&map, 5);
    let triv = CocycleField::trivial(map.clone(), 3);
    for o in &orbits {
        assert!((wilson(&triv, o).trace - C64::new(3.0, 0.0)).norm() < 1e-14);
    }
    let c = random_field(11, 2, 0.5);
    let g = gauge_of(&c, 12);
    for o in &orbits {
        let w = wilson(&c, o);
        assert_eq!(w.length, o.period);
        assert!(w.trace.norm() <= 2.0 + 1e-12);
        for k in 0..o.points.len() {
            assert!((wilson_from(&c, o, k) - w.trace).norm() < 1e-12);
        }
        assert!((wilson(&g, o).trace - w.trace).norm() < 1e-10);
    }
}

#[test]
fn hom_cocycle_examples() {
    let map = cat();
    let x = TorusPoint::new(0.15, 0.45);
    let t1 = CocycleField::trivial(map.clone(), 2);
    let h = hom_cocycle(&t1, &t1).unwrap();
    assert_eq!(h.rank, 4);
    assert!(dist(transport(&h, &x, 3).matrix(), &CMatrix::identity(4)) < 1e-14);

    let c1 = random_field(13, 2, 0.4);
    let c2 = random_field(14, 2, 0.4);
    let hom = hom_cocycle(&c1, &c2).unwrap();
    let mut rng = stage_rng(15, "hom");
    let hmat = random_unitary(&mut rng, 2).into_matrix().scale_re(1.7);
    let moved = unvec(&transport(&hom, &x, 6).matrix().matvec(&hmat.vectorize()), 2);
    let want = &(transport(&c2, &x, 6).matrix() * &hmat) * &transport(&c1, &x, 6).matrix().adjoint();
    assert!(dist(&moved, &want) < 1e-10);
    assert!((moved.frob_norm() - hmat.frob_norm()).abs() < 1e-10);

    // a gauge p intertwines the base and the gauged field
    let gauge = FieldSpec::Trig(TrigField::random(&mut rng, 2, 0.5));
    let g = CocycleField::new(map.clone(), FieldSpec::Gauge { base: Box::new(c1.spec.clone()), gauge: Box::new(gauge.clone()) }).unwrap();
    for p in [x, TorusPoint::new(0.9, 0.05)] {
        let pn = gauge.eval(&map, &map.apply(&p));
        let defect = &pn - &(&(&g.at(&p) * &gauge.eval(&map, &p)) * &c1.at(&p).adjoint());
        assert!(defect.frob_norm() < 1e-10);
    }

    let c3 = random_field(16, 3, 0.4);
    assert!(matches!(hom_cocycle(&c1, &c3), Err(CocycleError::RankMismatch(2, 3))));
}

#[test]
fn wilson_discrepancy_examples() {
    let map = cat();
    let orbits = enumerate_periodic_orbits(&map, 12);
    let c = random_field(17, 1, 0.5);
    assert_eq!(wilson_discrepancy(&c, &c, &orbits).unwrap(), 0.0);
    assert!(wilson_discrepancy(&c, &gauge_of(&c, 18), &orbits).unwrap() < 1e-10);
    assert!(matches!(wilson_discrepancy(&c, &c, &[]), Err(CocycleError::EmptyOrbitList)));

    // twist by exp(i sigma cos(2 pi x)): mean zero, not a coboundary
    let gen = TrigField { rank: 1, terms: vec![TrigTerm(1, 0, CMatrix::diag(&[C64::new(0.0, 1.0)]))] };
    let mut prev = 0.0;
    for sigma in [1e-3, 1e-2, 1e-1, 0.5] {
        let twisted = CocycleField::new(map.clone(), FieldSpec::Twist { base: Box::new(c.spec.clone()), generator: gen.clone(), sigma }).unwrap();
        let eps = wilson_discrepancy(&c, &twisted, &orbits).unwrap();
        assert!(eps > prev, "sigma {sigma}: {eps} <= {prev}");
        prev = eps;
    }
}

#[test]
fn field_json_round_trip() {
    let c = random_field(19, 2, 0.3);
    let json = serde_json::to_string(&c.spec).unwrap();
    assert!(json.contains("\"kind\":\"trig\""));
    let back: FieldSpec = serde_json::from_str(&json).unwrap();
    assert_eq!(back, c.spec);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn cocycle_identity(seed in 0u64..1000, x in 0.0f64..1.0, y in 0.0f64..1.0, m in 0i64..30, n in 0i64..30) {
        let c = random_field(seed, 2, 0.5);
        let p = TorusPoint::new(x, y);
        let lhs = transport(&c, &p, m + n);
        let rhs = transport(&c, &cat().iterate(&p, m), n).matrix() * transport(&c, &p, m).matrix();
        prop_assert!(dist(lhs.matrix(), &rhs) < 1e-10);
        prop_assert!(lhs.defect() < 1e-10);
    }

    #[test]
    fn holonomies_compose_along_a_leaf(seed in 0u64..1000, x in 0.0f64..1.0, y in 0.0f64..1.0, s in -0.05f64..0.05, t in -0.05f64..0.05) {
        let c = random_field(seed, 2, 0.4);
        let tol = 1e-8;
        for v in [cat().v_s, cat().v_u] {
            let a = TorusPoint::new(x, y);
            let b = along(&a, v, s);
            let d = along(&b, v, t);
            let hol = |p: &TorusPoint, q: &TorusPoint| {
                if v == cat().v_s { stable_holonomy(&c, p, q, tol) } else { unstable_holonomy(&c, p, q, tol) }.unwrap()
            };
            let ab = hol(&a, &b);
            let bd = hol(&b, &d);
            let ad = hol(&a, &d);
            prop_assert!(ab.u.defect() < 1e-10 && ad.u.defect() < 1e-10);
            prop_assert!(dist(&(bd.u.matrix() * ab.u.matrix()), ad.u.matrix()) <= 3.0 * tol);
        }
    }
}

#[test]
fn holonomy_on_orientation_reversing_map() {
    let map = HyperbolicMap::new([[1, 1], [1, 0]]).unwrap();
    let mut rng = stage_rng(40, "reversing");
    let c = CocycleField::new(map.clone(), FieldSpec::Trig(TrigField::random(&mut rng, 2, 0.3))).unwrap();
    let x = TorusPoint::new(0.2, 0.7);
    for (leaf, v) in [(Leaf::Stable, map.v_s), (Leaf::Unstable, map.v_u)] {
        let y = x.translate([0.03 * v[0], 0.03 * v[1]]);
        let h = match leaf {
            Leaf::Stable => stable_holonomy(&c, &x, &y, 1e-8).unwrap(),
            Leaf::Unstable => unstable_holonomy(&c, &x, &y, 1e-8).unwrap(),
        };
        let reference = holonomy_at_depth(&c, leaf, &x, 0.03, 80, BridgeKind::Transported);
        assert!(dist(h.u.matrix(), &reference) <= h.certified_error.max(1e-12), "{leaf:?}");
    }
}
