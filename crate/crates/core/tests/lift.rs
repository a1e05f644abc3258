use proptest::prelude::*;
use proptest::test_runner::RngSeed;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ssa_core::lift::{lift, lift_continuous, lift_discrete, Coupling};
use ssa_core::linalg::{self, build_dup, svec, svec_len, vec_row, Matrix, Vector};
use ssa_core::random::{self, ModelSpec};
use ssa_core::{Kind, Model};

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        rng_seed: RngSeed::Fixed(0x11f7),
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn stack_psi(xs: &[Matrix]) -> Vector {
    let parts: Vec<f64> = xs.iter().flat_map(|x| svec(x).unwrap().iter().copied().collect::<Vec<_>>()).collect();
    Vector::from_vec(parts)
}

/// `H^T phi(Y)` computed blockwise from the matrices themselves.
fn h_t_phi(ys: &[Matrix]) -> Vector {
    let n = ys[0].nrows();
    let h = build_dup(n, 1).h;
    let parts: Vec<f64> = ys.iter().flat_map(|y| (h.transpose() * vec_row(y)).iter().copied().collect::<Vec<_>>()).collect();
    Vector::from_vec(parts)
}

fn random_instance(seed: u64, kind: Kind, n: usize, r: usize, modes: usize) -> (Model, Vec<Matrix>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = random::model(&mut rng, &ModelSpec::new(kind, n, r, modes)).unwrap().model;
    let xs = (0..modes).map(|_| random::symmetric(&mut rng, n)).collect();
    (model, xs)
}

fn rel(a: &Vector, b: &Vector) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(1e-300)
}

proptest! {
    #![proptest_config(config(100))]

    #[test]
    fn continuous_lift_reproduces_the_moment_equations(seed in any::<u64>(), n in 1usize..=3, r in 1usize..=3, modes in 1usize..=3) {
        let r = r.min(n);
        let (m, xs) = random_instance(seed, Kind::Continuous, n, r, modes);
        let psi = stack_psi(&xs);
        for coupling in [Coupling::Adjoint, Coupling::Direct] {
            let ls = lift_continuous(&m, coupling).unwrap();
            let rhs: Vec<Matrix> = (0..modes)
                .map(|i| {
                    let (a, c, e) = (&m.a[i], &m.c[i], &m.e);
                    let mut y = a * &xs[i] * e.transpose() + e * &xs[i] * a.transpose() + c * &xs[i] * c.transpose();
                    for j in 0..modes {
                        let rate = match coupling {
                            Coupling::Adjoint => m.transition[(j, i)],
                            Coupling::Direct => m.transition[(i, j)],
                        };
                        y += e * &xs[j] * e.transpose() * rate;
                    }
                    y
                })
                .collect();
            prop_assert!(rel(&(&ls.a * &psi), &h_t_phi(&rhs)) <= 1e-10);
            let lhs: Vec<Matrix> = xs.iter().map(|x| &m.e * x * m.e.transpose()).collect();
            prop_assert!(rel(&(&ls.e * &psi), &h_t_phi(&lhs)) <= 1e-10);
        }
    }

    #[test]
    fn discrete_lift_reproduces_the_moment_recursion(seed in any::<u64>(), n in 1usize..=3, r in 1usize..=3, modes in 1usize..=3) {
        let r = r.min(n);
        let (m, xs) = random_instance(seed, Kind::Discrete, n, r, modes);
        let psi = stack_psi(&xs);
        let ls = lift_discrete(&m).unwrap();
        let next: Vec<Matrix> = (0..modes)
            .map(|j| {
                let mut y = Matrix::zeros(n, n);
                for i in 0..modes {
                    let (a, c) = (&m.a[i], &m.c[i]);
                    y += (a * &xs[i] * a.transpose() + c * &xs[i] * c.transpose()) * m.transition[(i, j)];
                }
                y
            })
            .collect();
        prop_assert!(rel(&(&ls.a * &psi), &h_t_phi(&next)) <= 1e-10);
    }

    #[test]
    fn lifted_descriptor_has_the_moment_rank(seed in any::<u64>(), n in 1usize..=3, r in 1usize..=3, modes in 1usize..=3, discrete in any::<bool>()) {
        let r = r.min(n);
        let kind = if discrete { Kind::Discrete } else { Kind::Continuous };
        let (m, _) = random_instance(seed, kind, n, r, modes);
        let ls = lift(&m, Coupling::Adjoint).unwrap();
        prop_assert_eq!(ls.dim(), modes * svec_len(n));
        prop_assert_eq!(linalg::rank(&ls.e, Some(1e-10)).unwrap(), modes * svec_len(r));
    }

    #[test]
    fn duplication_transpose_separates_symmetric_tuples(seed in any::<u64>(), n in 1usize..=4, modes in 1usize..=3) {
        // H^T H is diagonal and nonsingular, so psi is recovered from H^T phi:
        // equal images force equal tuples.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = build_dup(n, modes).h;
        let gram = h.transpose() * &h;
        let z1: Vec<Matrix> = (0..modes).map(|_| random::symmetric(&mut rng, n)).collect();
        let z2: Vec<Matrix> = (0..modes).map(|_| random::symmetric(&mut rng, n)).collect();
        let (p1, p2) = (stack_psi(&z1), stack_psi(&z2));
        let (i1, i2) = (h.transpose() * h.clone() * &p1, h.transpose() * h.clone() * &p2);
        let back = gram.clone().lu().solve(&i1).unwrap();
        prop_assert!(rel(&back, &p1) <= 1e-14);
        prop_assert!((i1 - i2).norm() > 0.0);
        prop_assert!(gram.determinant() != 0.0);
    }
}

#[test]
fn lifted_descriptor_is_symmetric_for_symmetric_e() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for n in 1..=4 {
        let s = random::symmetric(&mut rng, n);
        let e = &s * &s;
        let m = Model::new(
            Kind::Continuous,
            e,
            vec![Matrix::identity(n, n) * -1.0; 2],
            vec![Matrix::zeros(n, n); 2],
            random::generator(&mut rng, 2, 1.0),
        )
        .unwrap();
        let ls = lift_continuous(&m, Coupling::Adjoint).unwrap();
        assert!((&ls.e - ls.e.transpose()).amax() <= 1e-10 * ls.e.amax().max(1.0));
        assert!(linalg::eig_sym(&ls.e).unwrap()[0] >= -1e-10);
    }
}

#[test]
fn lifted_descriptor_symmetry_needs_symmetric_e() {
    // E = [[0.2, 0.3], [0, 0]]: <S_p, E S_q E^T> is not symmetric in (p, q).
    let e = Matrix::from_row_slice(2, 2, &[0.2, 0.3, 0.0, 0.0]);
    let m = Model::new(
        Kind::Discrete,
        e,
        vec![Matrix::identity(2, 2)],
        vec![Matrix::zeros(2, 2)],
        Matrix::identity(1, 1),
    )
    .unwrap();
    let ls = lift_discrete(&m).unwrap();
    assert!((&ls.e - ls.e.transpose()).amax() > 1e-3);
}
