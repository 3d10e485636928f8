use std::f64::consts::{PI, SQRT_2};

use holiv::livsic::fit_loglog;
use holiv::matalg::{CMatrix, C64};
use holiv::rng::{random_unitary, stage_rng};
use holiv::surface::*;
use proptest::prelude::*;
use rand::Rng;

fn word(s: &str) -> SurfaceWord {
    s.parse().unwrap()
}

fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

// Disc-model side pairings built directly, independent of the model code.
fn disc_pairing(k: i32) -> [[C64; 2]; 2] {
    let alpha = 1.0 + SQRT_2;
    let beta = (2.0 + 2.0 * SQRT_2).sqrt();
    let ph = C64::from_polar(1.0, k as f64 * PI / 4.0);
    [[C64::new(alpha, 0.0), ph * beta], [ph.conj() * beta, C64::new(alpha, 0.0)]]
}

fn mul(a: [[C64; 2]; 2], b: [[C64; 2]; 2]) -> [[C64; 2]; 2] {
    let mut out = [[C64::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

fn inv(a: [[C64; 2]; 2]) -> [[C64; 2]; 2] {
    [[a[1][1], -a[0][1]], [-a[1][0], a[0][0]]]
}

#[test]
fn fuchsian_model_is_a_surface_group() {
    let m = FuchsianModel::bolza();
    assert!(m.relator_defect() < 1e-8);
    for g in &m.generators {
        let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
        assert!((det - 1.0).abs() < 1e-12);
    }
    // every short nontrivial reduced word is hyperbolic
    for c in enumerate_geodesics(&m, 7.0) {
        let e = m.eval(&c.word);
        assert!((e[0][0] + e[1][1]).abs() > 2.0, "{}", c.word);
    }
}

#[test]
fn systole_and_generator_length() {
    let m = FuchsianModel::bolza();
    assert!(enumerate_geodesics(&m, 3.0).is_empty());
    let systole = 2.0 * (1.0 + SQRT_2).acosh();
    let classes = enumerate_geodesics(&m, 3.1);
    assert!(!classes.is_empty());
    for c in &classes {
        assert!((c.length - systole).abs() < 1e-9, "{} {}", c.word, c.length);
    }
    // a1 is the product of the inverse third and the fourth side pairing
    let a1 = mul(inv(disc_pairing(2)), disc_pairing(3));
    let tr = (a1[0][0] + a1[1][1]).norm();
    let expect = 2.0 * (tr / 2.0).acosh();
    let entry = classes.iter().find(|c| c.word == word("a1")).expect("a1 listed");
    assert!((entry.length - expect).abs() < 1e-9);
}

#[test]
fn enumeration_is_one_entry_per_class() {
    let m = FuchsianModel::bolza();
    let classes = enumerate_geodesics(&m, 6.0);
    let mut words: Vec<&SurfaceWord> = classes.iter().map(|c| &c.word).collect();
    words.sort();
    words.dedup();
    assert_eq!(words.len(), classes.len());
    for c in &classes {
        assert!(c.word.is_cyclically_reduced() && c.word.is_primitive());
        assert!(c.length <= 6.0);
        assert!((m.length(&c.word) - c.length).abs() < 1e-9);
        for k in 1..c.word.len() {
            let rot = c.word.rotate(k);
            let hit: Vec<_> = classes.iter().filter(|d| d.word == rot).collect();
            assert!(hit.is_empty() || rot == c.word, "rotation {} of {} listed separately", rot, c.word);
        }
    }
}

#[test]
fn wilson_flat_examples() {
    let m = FuchsianModel::bolza();
    let classes = enumerate_geodesics(&m, 6.0);
    for r in 1..=3 {
        for w in wilson_table(&FlatConnection::trivial(r, 2), &classes) {
            assert!((w.trace - C64::new(r as f64, 0.0)).norm() < 1e-12);
        }
    }
    let mut rng = stage_rng(1, "wilson-flat");
    let conn = random_flat(&mut rng, 2, 2).unwrap();
    let p = random_unitary(&mut rng, 2);
    let a = wilson_table(&conn, &classes);
    let b = wilson_table(&conn.conjugated(&p), &classes);
    assert!(wilson_discrepancy(&a, &b) < 1e-12);

    let theta: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let line = FlatConnection::abelian(&theta);
    for w in wilson_table(&line, &classes) {
        let v = homology_vector(&w.word, 2);
        let phase: f64 = v.iter().zip(&theta).map(|(&k, t)| k as f64 * t).sum();
        assert!((w.trace - C64::from_polar(1.0, phase)).norm() < 1e-12);
    }
}

#[test]
fn homology_vector_examples() {
    assert_eq!(homology_vector(&word("a1.b1.a1^-1.b1^-1"), 2), vec![0, 0, 0, 0]);
    assert_eq!(homology_vector(&word("a1.a1.b2^-1"), 2), vec![2, 0, 0, -1]);
    assert_eq!(homology_vector(&SurfaceWord::relator(2), 2), vec![0, 0, 0, 0]);
}

#[test]
fn abelian_recovery_trivial_and_random() {
    let m = FuchsianModel::bolza();
    let classes = enumerate_geodesics(&m, 6.0);
    let basis = select_unimodular_basis(&classes, 2).unwrap();

    let rec = abelian_recover(&wilson_table(&FlatConnection::abelian(&[0.0; 4]), &classes), &basis, 2).unwrap();
    assert!(rec.angles.iter().all(|&t| angle_gap(t, 0.0) < 1e-12));
    assert!(rec.windings.iter().all(|&k| k == 0));
    assert!(rec.residual < 1e-12);

    let mut rng = stage_rng(2, "abelian");
    for _ in 0..20 {
        let theta: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        let rec = abelian_recover(&wilson_table(&FlatConnection::abelian(&theta), &classes), &basis, 2).unwrap();
        for (a, b) in rec.angles.iter().zip(&theta) {
            assert!(angle_gap(*a, *b) < 1e-9);
            assert!((0.0..2.0 * PI).contains(a));
        }
        assert!(rec.residual < 1e-10);
        // windings reproduce the unwrapped basis pairings
        for (w, k) in basis.iter().zip(&rec.windings) {
            let v = homology_vector(w, 2);
            let pairing: f64 = v.iter().zip(&rec.angles).map(|(&c, t)| c as f64 * t).sum();
            let arg = FlatConnection::abelian(&theta).eval(w)[(0, 0)].arg();
            assert!((pairing - arg - 2.0 * PI * *k as f64).abs() < 1e-9);
        }
    }
}

#[test]
fn abelian_recovery_is_lipschitz_in_trace_noise() {
    let m = FuchsianModel::bolza();
    let classes = enumerate_geodesics(&m, 6.0);
    let basis = select_unimodular_basis(&classes, 2).unwrap();
    let mut rng = stage_rng(3, "abelian-noise");
    let theta: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let exact = wilson_table(&FlatConnection::abelian(&theta), &classes);
    let phases: Vec<f64> = exact.iter().map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for eps in [1e-2, 1e-3, 1e-4, 1e-5, 1e-6] {
        let noisy: Vec<GeodesicWilson> =
            exact.iter().zip(&phases).map(|(w, &ph)| GeodesicWilson { trace: w.trace + C64::from_polar(eps, ph), ..w.clone() }).collect();
        let rec = abelian_recover(&noisy, &basis, 2).unwrap();
        let err = rec.angles.iter().zip(&theta).map(|(a, b)| angle_gap(*a, *b)).fold(0.0, f64::max);
        assert!(err <= 20.0 * eps, "eps {eps} err {err}");
        xs.push(eps);
        ys.push(err);
    }
    let slope = fit_loglog(&xs, &ys).unwrap();
    assert!((0.8..=1.2).contains(&slope), "{slope}");
}

#[test]
fn degenerate_basis_from_short_list() {
    let m = FuchsianModel::bolza();
    // only the four generators and their inverses are shorter than 3.1, which do span
    assert!(select_unimodular_basis(&enumerate_geodesics(&m, 3.1), 2).is_ok());
    assert_eq!(select_unimodular_basis(&enumerate_geodesics(&m, 3.0), 2), Err(SurfaceError::DegenerateBasis));
    let rank_short = vec![
        GeodesicClass { word: word("a1"), length: 1.0 },
        GeodesicClass { word: word("a1.a1.b1"), length: 1.0 },
        GeodesicClass { word: word("b1"), length: 1.0 },
        GeodesicClass { word: word("a2.a2"), length: 1.0 },
    ];
    assert_eq!(select_unimodular_basis(&rank_short, 2), Err(SurfaceError::DegenerateBasis));
    let data = wilson_table(&FlatConnection::abelian(&[0.0; 4]), &rank_short);
    let basis: Vec<SurfaceWord> = rank_short.iter().map(|c| c.word.clone()).collect();
    assert_eq!(abelian_recover(&data, &basis, 2).unwrap_err(), SurfaceError::DegenerateBasis);
}

#[test]
fn moduli_distance_examples() {
    let mut rng = stage_rng(4, "moduli");
    let c1 = random_flat(&mut rng, 2, 2).unwrap();
    assert!(moduli_distance(&c1, &c1, 2, 1).value < 1e-6);
    let p = random_unitary(&mut rng, 2);
    assert!(moduli_distance(&c1, &c1.conjugated(&p), 4, 2).value < 1e-5);

    let c2 = random_flat(&mut rng, 2, 2).unwrap();
    let d12 = moduli_distance(&c1, &c2, 4, 3).value;
    let d21 = moduli_distance(&c2, &c1, 4, 3).value;
    assert!(d12 > 0.0 && d12 <= 2.0 * d21 && d21 <= 2.0 * d12, "{d12} {d21}");

    let theta = [0.3, 1.1, 2.0, 4.0];
    for phi in [1e-3, 1e-2, 0.1, 0.5] {
        let mut shifted = theta;
        shifted[0] += phi;
        let d = moduli_distance(&FlatConnection::abelian(&theta), &FlatConnection::abelian(&shifted), 2, 5).value;
        // |e^{i phi} - 1| = 2 sin(phi/2) >= (2/pi) phi for phi <= pi
        assert!(d >= 2.0 / PI * phi, "phi {phi} d {d}");
    }
}

#[test]
fn flatness_survives_perturbation() {
    let mut rng = stage_rng(5, "perturb");
    for rank in 1..=3 {
        let conn = random_flat(&mut rng, rank, 2).unwrap();
        assert!(conn.relator_defect() < 1e-8);
        for delta in [1e-1, 1e-2, 1e-4] {
            let moved = perturb_flat(&mut rng, &conn, delta).unwrap();
            assert!(moved.relator_defect() < 1e-8, "rank {rank} delta {delta}");
            for g in &moved.images {
                assert!(g.defect() < 1e-10);
            }
        }
    }
}

#[test]
fn stability_sweep_rank_one() {
    let m = FuchsianModel::bolza();
    let conn = FlatConnection::abelian(&[0.4, 2.2, 5.1, 1.7]);
    let table = stability_sweep(&conn, &m, &[0.0, 1e-2, 1e-3, 1e-4, 1e-5], 6.0, 7).unwrap();
    let first = &table.rows[0];
    assert_eq!(first.epsilon, 0.0);
    assert!(first.distance < 1e-6);
    let tau = table.tau_hat.unwrap();
    assert!((0.8..=1.2).contains(&tau), "{tau}");
    assert!(table.to_csv().starts_with("delta,epsilon,distance,tau_local\n"));
}

#[test]
fn stability_sweep_rank_two_runs_and_rejects_reducible() {
    let m = FuchsianModel::bolza();
    let mut rng = stage_rng(6, "sweep2");
    let conn = random_flat(&mut rng, 2, 2).unwrap();
    let table = stability_sweep(&conn, &m, &[0.0, 1e-2, 1e-3], 5.0, 8).unwrap();
    assert_eq!(table.rows.len(), 3);
    assert!(table.rows[1].epsilon > table.rows[2].epsilon);
    assert!(table.rows[1].distance > table.rows[2].distance);

    let diag = FlatConnection::trivial(2, 2);
    assert_eq!(stability_sweep(&diag, &m, &[0.0], 5.0, 1).unwrap_err(), SurfaceError::NotIrreducible);
}

#[test]
fn rank_one_discrepancy_bounded_by_homology_pairing() {
    let m = FuchsianModel::bolza();
    let classes = enumerate_geodesics(&m, 6.0);
    let mut rng = stage_rng(9, "dw-bound");
    for _ in 0..20 {
        let t1: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        let dt: Vec<f64> = (0..4).map(|_| rng.random_range(-0.1..0.1)).collect();
        let t2: Vec<f64> = t1.iter().zip(&dt).map(|(a, b)| a + b).collect();
        let w1 = wilson_table(&FlatConnection::abelian(&t1), &classes);
        let w2 = wilson_table(&FlatConnection::abelian(&t2), &classes);
        for (a, b) in w1.iter().zip(&w2) {
            let v = homology_vector(&a.word, 2);
            let pairing: f64 = v.iter().zip(&dt).map(|(&k, d)| k as f64 * d).sum();
            assert!((a.trace - b.trace).norm() / a.length <= pairing.abs() / a.length + 1e-14);
        }
    }
}

#[test]
fn connection_json_round_trip() {
    let mut rng = stage_rng(10, "json");
    let conn = random_flat(&mut rng, 2, 2).unwrap();
    let back: FlatConnection = serde_json::from_str(&serde_json::to_string(&conn).unwrap()).unwrap();
    assert!(back.images.iter().zip(&conn.images).all(|(a, b)| (a.matrix() - b.matrix()).max_abs() < 1e-15));
    let w: SurfaceWord = serde_json::from_str("\"a1.b2^-1\"").unwrap();
    assert_eq!(w.0, vec![1, -4]);
}

fn surface_word() -> impl Strategy<Value = SurfaceWord> {
    prop::collection::vec(prop_oneof![1i8..=4, -4i8..=-1], 1..8).prop_map(|l| SurfaceWord::reduced(&l))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn traces_are_class_functions(w in surface_word(), h in surface_word(), seed in 0u64..1000) {
        let mut rng = stage_rng(seed, "class-fn");
        let conn = random_flat(&mut rng, 2, 2).unwrap();
        let p = random_unitary(&mut rng, 2);
        let t = conn.eval(&w).trace();
        for k in 0..w.len() {
            prop_assert!((conn.eval(&w.rotate(k)).trace() - t).norm() < 1e-12);
        }
        let conj = SurfaceWord::reduced(&[h.0.clone(), w.0.clone(), h.inverse().0].concat());
        prop_assert!((conn.eval(&conj).trace() - t).norm() < 1e-12);
        prop_assert!((conn.conjugated(&p).eval(&w).trace() - t).norm() < 1e-12);
    }

    #[test]
    fn homology_is_additive(a in surface_word(), b in surface_word()) {
        let ab = SurfaceWord::reduced(&[a.0.clone(), b.0.clone()].concat());
        let sum: Vec<i64> = homology_vector(&a, 2).iter().zip(homology_vector(&b, 2)).map(|(x, y)| x + y).collect();
        prop_assert_eq!(homology_vector(&ab, 2), sum);
    }
}

#[test]
fn cmatrix_eval_matches_manual_product() {
    let mut rng = stage_rng(11, "eval");
    let conn = random_flat(&mut rng, 2, 2).unwrap();
    let w = word("a1.b2^-1.a2");
    let manual: CMatrix = &(conn.images[0].matrix() * &conn.images[3].matrix().adjoint()) * conn.images[2].matrix();
    assert!((&conn.eval(&w) - &manual).max_abs() < 1e-14);
}
