use holiv::matalg::*;
use holiv::rng::{gaussian_matrix, random_skew, random_unit_vector, random_unitary, stage_rng};
use proptest::prelude::*;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn dist(a: &CMatrix, b: &CMatrix) -> f64 {
    (a - b).frob_norm()
}

/// Minimizes `||Q - W||_F` over unitary `W` by Riemannian gradient steps
/// `W <- exp(t (W*Q - Q*W)/2) ...` with backtracking; shares no code with
/// the SVD route.
fn projected_gradient_polar(q: &CMatrix) -> CMatrix {
    let n = q.rows();
    let mut w = CMatrix::identity(n);
    let cost = |w: &CMatrix| dist(q, w).powi(2);
    for _ in 0..20000 {
        // d/dt ||Q - W e^{tX}||^2 = -2 Re tr(Q* W X); steepest skew direction
        let m = &w.adjoint() * q;
        let dir = (&m - &m.adjoint()).scale_re(0.5);
        if dir.frob_norm() < 1e-14 {
            break;
        }
        let f0 = cost(&w);
        let mut t = 1.0;
        loop {
            let cand = &w * &expm(&dir.scale_re(t));
            if cost(&cand) < f0 || t < 1e-12 {
                w = cand;
                break;
            }
            t *= 0.5;
        }
    }
    w
}

#[test]
fn polar_of_identity_and_scaled_unitary() {
    let i3 = CMatrix::identity(3);
    assert!(dist(polar_unitary(&i3, 1e-12).unwrap().matrix(), &i3) < 1e-14);
    let mut rng = stage_rng(1, "polar-scaled");
    let u = random_unitary(&mut rng, 3);
    let p = polar_unitary(&u.matrix().scale_re(2.0), 1e-12).unwrap();
    assert!(dist(p.matrix(), u.matrix()) < 1e-12);
}

#[test]
fn polar_matches_projected_gradient_oracle() {
    let mut rng = stage_rng(2, "polar-oracle");
    for _ in 0..5 {
        let q = &gaussian_matrix(&mut rng, 3, 3) + &CMatrix::identity(3).scale_re(1.5);
        let p = polar_unitary(&q, 1e-10).unwrap();
        let oracle = projected_gradient_polar(&q);
        assert!(dist(p.matrix(), &oracle) < 1e-7, "{}", dist(p.matrix(), &oracle));
        assert!(p.defect() < 1e-12);
    }
}

#[test]
fn polar_rejects_singular_input() {
    let q = CMatrix::from_real(2, 2, &[1.0, 2.0, 2.0, 4.0]);
    assert!(matches!(polar_unitary(&q, 1e-10), Err(MatError::SingularInput { .. })));
}

#[test]
fn operator_norm_small_cases() {
    assert_eq!(operator_norm(&CMatrix::zeros(3, 3)), 0.0);
    let d = CMatrix::diag(&[c(3.0, 0.0), c(0.0, 4.0)]);
    assert!((operator_norm(&d) - 4.0).abs() < 1e-14);
}

#[test]
fn operator_norm_matches_power_iteration() {
    let mut rng = stage_rng(3, "opnorm");
    for _ in 0..10 {
        let m = gaussian_matrix(&mut rng, 4, 4);
        let mtm = &m.adjoint() * &m;
        let mut v = random_unit_vector(&mut rng, 4);
        let mut lambda = 0.0;
        for _ in 0..5000 {
            let w = mtm.matvec(&v);
            let nrm = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            lambda = nrm;
            v = w.iter().map(|z| z / nrm).collect();
        }
        let sigma = operator_norm(&m);
        assert!((sigma - lambda.sqrt()).abs() <= 1e-10 * sigma, "{sigma} vs {}", lambda.sqrt());
    }
}

#[test]
fn top_singular_vector_cases() {
    let d = CMatrix::diag(&[c(2.0, 0.0), c(1.0, 0.0)]);
    let (z, s) = top_singular_vector(&d).unwrap();
    assert!((s - 2.0).abs() < 1e-14);
    assert!((z[0].norm() - 1.0).abs() < 1e-14 && z[1].norm() < 1e-14);

    let mut rng = stage_rng(4, "tsv");
    let w = random_unit_vector(&mut rng, 3);
    let proj = CMatrix::outer(&w, &w);
    let (z, s) = top_singular_vector(&proj).unwrap();
    assert!((s - 1.0).abs() < 1e-12);
    let overlap: C64 = w.iter().zip(&z).map(|(a, b)| a.conj() * b).sum();
    assert!((overlap.norm() - 1.0).abs() < 1e-12);

    assert!(matches!(top_singular_vector(&CMatrix::zeros(2, 2)), Err(MatError::ZeroMatrix)));
}

#[test]
fn top_singular_vector_beats_random_directions() {
    let mut rng = stage_rng(5, "tsv-sampling");
    let m = gaussian_matrix(&mut rng, 3, 3);
    let (z, s) = top_singular_vector(&m).unwrap();
    let norm = |v: &[C64]| m.matvec(v).iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    assert!((norm(&z) - s).abs() < 1e-12);
    for _ in 0..10_000 {
        let w = random_unit_vector(&mut rng, 3);
        assert!(norm(&w) <= s + 1e-12);
    }
}

#[test]
fn gram_solve_cases() {
    let i2 = CMatrix::identity(2);
    let coef = gram_solve(std::slice::from_ref(&i2), &i2.scale_re(3.0)).unwrap();
    assert!((coef[0] - c(3.0, 0.0)).norm() < 1e-14);

    // Pauli basis, orthogonal under the Frobenius product
    let paulis = [
        CMatrix::identity(2),
        CMatrix::from_real(2, 2, &[0.0, 1.0, 1.0, 0.0]),
        CMatrix::from_rows(&[vec![c(0.0, 0.0), c(0.0, -1.0)], vec![c(0.0, 1.0), c(0.0, 0.0)]]),
        CMatrix::from_real(2, 2, &[1.0, 0.0, 0.0, -1.0]),
    ];
    let want = [c(0.5, 0.0), c(-1.0, 2.0), c(0.0, 0.25), c(3.0, -1.0)];
    let target = synthesize(&paulis, &want);
    let got = gram_solve(&paulis, &target).unwrap();
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).norm() < 1e-13);
    }

    let mut rng = stage_rng(6, "gram");
    let basis = vec![gaussian_matrix(&mut rng, 3, 3), gaussian_matrix(&mut rng, 3, 3)];
    let target = synthesize(&basis, &[c(0.3, -0.7), c(1.1, 0.2)]);
    let coef = gram_solve(&basis, &target).unwrap();
    assert!(dist(&synthesize(&basis, &coef), &target) < 1e-9);

    let dup = vec![i2.clone(), i2.clone()];
    assert!(matches!(gram_solve(&dup, &i2), Err(MatError::IllConditioned { .. })));
}

#[test]
fn gram_projection_is_idempotent() {
    let mut rng = stage_rng(7, "gram-idem");
    let basis: Vec<CMatrix> = (0..3).map(|_| gaussian_matrix(&mut rng, 3, 3)).collect();
    let target = gaussian_matrix(&mut rng, 3, 3);
    let c1 = gram_solve(&basis, &target).unwrap();
    let c2 = gram_solve(&basis, &synthesize(&basis, &c1)).unwrap();
    for (a, b) in c1.iter().zip(&c2) {
        assert!((a - b).norm() < 1e-12);
    }
}

#[test]
fn expm_of_skew_is_unitary_and_inverts() {
    let mut rng = stage_rng(8, "expm");
    for n in 1..5 {
        let s = random_skew(&mut rng, n).scale_re(3.0);
        let e = expm(&s);
        assert!(e.unitarity_defect() < 1e-12);
        assert!(dist(&(&e * &expm(&s.scale_re(-1.0))), &CMatrix::identity(n)) < 1e-12);
    }
    // diagonal: entrywise exponential
    let d = CMatrix::diag(&[c(0.5, 1.0), c(-2.0, 0.0)]);
    let e = expm(&d);
    assert!((e[(0, 0)] - c(0.5, 1.0).exp()).norm() < 1e-14);
    assert!((e[(1, 1)] - (-2.0f64).exp()).norm() < 1e-14);
}

#[test]
fn expm_frechet_matches_central_difference() {
    let mut rng = stage_rng(9, "frechet");
    let a = random_skew(&mut rng, 3);
    let e = gaussian_matrix(&mut rng, 3, 3);
    let (val, d) = expm_frechet(&a, &e);
    assert!(dist(&val, &expm(&a)) < 1e-13);
    let h = 1e-5;
    let fd = (&expm(&(&a + &e.scale_re(h))) - &expm(&(&a - &e.scale_re(h)))).scale_re(0.5 / h);
    assert!(dist(&d, &fd) < 1e-8);
}

#[test]
fn kron_vectorizes_sandwich() {
    let mut rng = stage_rng(10, "kron");
    let a = gaussian_matrix(&mut rng, 2, 2);
    let b = gaussian_matrix(&mut rng, 3, 3);
    let h = gaussian_matrix(&mut rng, 2, 3);
    let lhs = a.kron(&b).matvec(&h.vectorize());
    let rhs = (&(&a * &h) * &b.transpose()).vectorize();
    for (x, y) in lhs.iter().zip(&rhs) {
        assert!((x - y).norm() < 1e-12);
    }
}

#[test]
fn chain_product_stays_unitary_over_long_chains() {
    let mut rng = stage_rng(11, "chain");
    let mut chain = ChainProduct::new(3);
    let mut naive = CMatrix::identity(3);
    for _ in 0..500 {
        let u = random_unitary(&mut rng, 3).into_matrix();
        chain.push(&u);
        naive = &u * &naive;
    }
    let out = chain.finish();
    assert!(out.defect() < 1e-12);
    assert!(dist(out.matrix(), &naive) < 1e-9);
}

fn seeds() -> impl Strategy<Value = u64> {
    any::<u64>()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn polar_strips_positive_factor(seed in seeds(), n in 1usize..5) {
        let mut rng = stage_rng(seed, "prop-polar");
        let u = random_unitary(&mut rng, n);
        let g = gaussian_matrix(&mut rng, n, n);
        let r = &(&g.adjoint() * &g) + &CMatrix::identity(n).scale_re(0.1);
        let p = polar_unitary(&(u.matrix() * &r), 1e-12).unwrap();
        prop_assert!(dist(p.matrix(), u.matrix()) < 1e-9);
    }

    #[test]
    fn operator_norm_is_submultiplicative(seed in seeds(), n in 1usize..5) {
        let mut rng = stage_rng(seed, "prop-norm");
        let a = gaussian_matrix(&mut rng, n, n);
        let b = gaussian_matrix(&mut rng, n, n);
        prop_assert!(operator_norm(&(&a * &b)) <= operator_norm(&a) * operator_norm(&b) * (1.0 + 1e-12));
        let u = random_unitary(&mut rng, n);
        prop_assert!((operator_norm(u.matrix()) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn svd_reconstructs(seed in seeds(), r in 1usize..5, k in 1usize..5) {
        let mut rng = stage_rng(seed, "prop-svd");
        let a = gaussian_matrix(&mut rng, r, k);
        let d = svd(&a);
        let sig = CMatrix::diag(&d.s.iter().map(|&s| c(s, 0.0)).collect::<Vec<_>>());
        let back = &(&d.u * &sig) * &d.v.adjoint();
        prop_assert!(dist(&back, &a) < 1e-11 * (1.0 + a.frob_norm()));
        prop_assert!(d.s.windows(2).all(|w| w[0] >= w[1]));
    }
}
