use proptest::prelude::*;
use proptest::test_runner::RngSeed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssa_core::linalg::{self, build_dup, kron, svec, vec_row, Matrix, PencilDegree};
use ssa_core::random;

fn rel(residual: f64, scale: f64) -> f64 {
    residual / scale.max(1e-300)
}

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        rng_seed: RngSeed::Fixed(0x5eed),
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(config(1000))]

    #[test]
    fn duplication_reproduces_vec(seed in any::<u64>(), n in 1usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random::symmetric(&mut rng, n);
        let h = build_dup(n, 1).h;
        prop_assert_eq!(&h * svec(&x).unwrap(), vec_row(&x));
    }
}

proptest! {
    #![proptest_config(config(200))]

    #[test]
    fn vec_of_triple_product(seed in any::<u64>(), p in 1usize..=4, q in 1usize..=4, r in 1usize..=4, s in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random::matrix(&mut rng, p, q);
        let b = random::matrix(&mut rng, q, r);
        let c = random::matrix(&mut rng, r, s);
        let lhs = vec_row(&(&a * &b * &c));
        let rhs = kron(&a, &c.transpose()) * vec_row(&b);
        let scale = a.norm() * b.norm() * c.norm();
        prop_assert!(rel((lhs - rhs).norm(), scale) <= 1e-12);
    }

    #[test]
    fn pinv_satisfies_penrose(seed in any::<u64>(), m in 1usize..=5, n in 1usize..=5, k in 0usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = k.min(m.min(n));
        let a = random::of_rank(&mut rng, m, n, k);
        let p = linalg::pinv(&a).unwrap();
        let an = a.norm().max(1.0);
        let pn = p.norm().max(1.0);
        prop_assert!(rel((&a * &p * &a - &a).norm(), an) <= 1e-10, "sv {} res {:e}", a.singular_values(), (&a * &p * &a - &a).norm());
        prop_assert!(rel((&p * &a * &p - &p).norm(), pn) <= 1e-10);
        let ap = &a * &p;
        let pa = &p * &a;
        prop_assert!((&ap - ap.transpose()).norm() <= 1e-10);
        prop_assert!((&pa - pa.transpose()).norm() <= 1e-10);
    }

    #[test]
    fn null_basis_is_orthonormal_and_annihilated(seed in any::<u64>(), m in 1usize..=5, n in 1usize..=5, k in 0usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = k.min(m.min(n));
        let a = random::of_rank(&mut rng, m, n, k);
        let b = linalg::null_basis(&a, None).unwrap();
        prop_assert_eq!(b.ncols(), n - k);
        prop_assert!((&a * &b).norm() <= 1e-10 * a.norm().max(1.0));
        let gram = b.transpose() * &b;
        prop_assert!((gram - Matrix::identity(n - k, n - k)).amax() <= 1e-10);
    }

    #[test]
    fn symmetric_eigenvalues_sum_to_trace(seed in any::<u64>(), n in 1usize..=6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random::symmetric(&mut rng, n);
        let eig = linalg::eig_sym(&s).unwrap();
        prop_assert!(eig.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!((eig.iter().sum::<f64>() - s.trace()).abs() <= 1e-10 * s.norm().max(1.0));
    }

    #[test]
    fn pencil_degree_is_equivalence_invariant(seed in any::<u64>(), n in 1usize..=4, r in 0usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = r.min(n);
        let e = random::descriptor(&mut rng, n, r);
        let a = random::matrix(&mut rng, n, n);
        let u = random::well_conditioned(&mut rng, n, 5.0);
        let v = random::well_conditioned(&mut rng, n, 5.0);
        let before = linalg::pencil_degree(&e, &a).unwrap();
        let after = linalg::pencil_degree(&(&u * &e * &v), &(&u * &a * &v)).unwrap();
        prop_assert_eq!(before, after);
        prop_assert_eq!(before, PencilDegree::Degree(r));
    }
}

#[test]
fn duplication_gram_is_diagonal_with_ones_and_twos() {
    for n in 1..=5 {
        for blocks in 1..=2 {
            let h = build_dup(n, blocks).h;
            let g = h.transpose() * &h;
            for i in 0..g.nrows() {
                for j in 0..g.ncols() {
                    let v = g[(i, j)];
                    if i == j {
                        assert!(v == 1.0 || v == 2.0, "diagonal entry {v}");
                    } else {
                        assert_eq!(v, 0.0);
                    }
                }
            }
            let ones = (0..g.nrows()).filter(|&i| g[(i, i)] == 1.0).count();
            assert_eq!(ones, n * blocks);
        }
    }
}

#[test]
fn kron_matches_entrywise_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = random::matrix(&mut rng, 2, 2);
    let b = random::matrix(&mut rng, 2, 2);
    let k = kron(&a, &b);
    for i in 0..2 {
        for j in 0..2 {
            for p in 0..2 {
                for q in 0..2 {
                    assert_eq!(k[(2 * i + p, 2 * j + q)], a[(i, j)] * b[(p, q)]);
                }
            }
        }
    }
}

#[test]
fn non_regular_pencil_is_flagged() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let n = rng.random_range(2..=4);
        // A shared null vector makes det(sE - A) vanish identically.
        let v = random::matrix(&mut rng, n, 1);
        let proj = Matrix::identity(n, n) - &v * v.transpose() / v.norm_squared();
        let e = random::matrix(&mut rng, n, n) * &proj;
        let a = random::matrix(&mut rng, n, n) * &proj;
        assert_eq!(linalg::pencil_degree(&e, &a).unwrap(), PencilDegree::NonRegular);
    }
}
