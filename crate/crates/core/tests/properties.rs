use std::sync::Arc;

use nalgebra::DMatrix;
use proptest::prelude::*;

use saddle_core::control::{check_hypotheses, ClosedLoopSystem, FeedbackLaw};
use saddle_core::hamsys::{poisson_bracket, symplectic_j, Hamiltonian, Monomial, PolynomialHamiltonian, Quadratic};
use saddle_core::normal_form::{build_transform, symplectic_defect};
use saddle_core::spectral::{classify, linearize, EquilibriumKind};
use saddle_core::CanonicalState;

/// Symplectic map built from a block-diagonal part and a symmetric shear.
fn symplectic(n: usize, a: &[f64], b: &[f64]) -> DMatrix<f64> {
    let mut blk = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        for j in 0..n {
            blk[(i, j)] += 0.4 * a[i * n + j];
        }
    }
    let blk_inv_t = blk.clone().try_inverse().unwrap().transpose();
    let mut diag = DMatrix::zeros(2 * n, 2 * n);
    diag.view_mut((0, 0), (n, n)).copy_from(&blk);
    diag.view_mut((n, n), (n, n)).copy_from(&blk_inv_t);
    let mut shear = DMatrix::<f64>::identity(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let s = 0.3 * (b[i * n + j] + b[j * n + i]);
            shear[(i, n + j)] = s;
        }
    }
    diag * shear
}

/// Saddle-center quadratic Hamiltonian `H(T z)` with `H` in normal form.
fn scrambled(lambda: f64, omegas: &[f64], a: &[f64], b: &[f64]) -> (Quadratic, DMatrix<f64>) {
    let n = omegas.len() + 1;
    let base = Quadratic::normal_form(Some(lambda), omegas).unwrap();
    let t = symplectic(n, a, b);
    let hess = t.transpose() * base.matrix() * &t;
    (Quadratic::new(hess).unwrap(), t)
}

fn params() -> impl Strategy<Value = (f64, Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..=3).prop_flat_map(|n| {
        (
            0.2f64..3.0,
            // distinct frequencies, ascending after the cumulative sum
            prop::collection::vec(0.15f64..1.5, n - 1).prop_map(|gaps| {
                let mut acc = 0.2;
                gaps.iter()
                    .map(|g| {
                        acc += g;
                        acc
                    })
                    .collect::<Vec<_>>()
            }),
            prop::collection::vec(-1.0f64..1.0, n * n),
            prop::collection::vec(-1.0f64..1.0, n * n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spectrum_is_coordinate_invariant((lambda, omegas, a, b) in params()) {
        let (h, _) = scrambled(lambda, &omegas, &a, &b);
        let n = h.dof();
        let cls = classify(&linearize(&h, &CanonicalState::origin(n)).unwrap(), None).unwrap();
        prop_assert_eq!(cls.kind, EquilibriumKind::SaddleCenter);
        prop_assert!((cls.lambda.unwrap() - lambda).abs() < 1e-8 * lambda.max(1.0));
        for (w, e) in cls.omegas.iter().zip(&omegas) {
            prop_assert!((w - e).abs() < 1e-8 * e.max(1.0));
        }
    }

    #[test]
    fn transform_is_symplectic_and_normalizing((lambda, omegas, a, b) in params()) {
        let (h, _) = scrambled(lambda, &omegas, &a, &b);
        let n = h.dof();
        let cls = classify(&linearize(&h, &CanonicalState::origin(n)).unwrap(), None).unwrap();
        let t = build_transform(&cls).unwrap();
        let scale = t.hessian.amax().max(1.0);
        prop_assert!(symplectic_defect(&t.m) < 1e-8 * scale);
        prop_assert!(symplectic_defect(&t.s) < 1e-8 * scale);
        prop_assert!((t.conjugated_hessian() - t.normal_form_hessian()).amax() < 1e-6 * scale);
        prop_assert!((&t.s * &t.s_inv - DMatrix::identity(2 * n, 2 * n)).amax() < 1e-9 * scale);
        for i in 0..n {
            let row = t.s.row(i);
            let (k, _) = row.iter().enumerate().fold((0, 0.0), |best, (k, v)| if v.abs() > best.1 { (k, v.abs()) } else { best });
            prop_assert!(row[k] > 0.0);
        }
    }

    #[test]
    fn normal_form_round_trip((lambda, omegas, a, b) in params(), seed in prop::collection::vec(-1.0f64..1.0, 6)) {
        let (h, _) = scrambled(lambda, &omegas, &a, &b);
        let n = h.dof();
        let cls = classify(&linearize(&h, &CanonicalState::origin(n)).unwrap(), None).unwrap();
        let t = build_transform(&cls).unwrap();
        let z: Vec<f64> = seed[..2 * n].to_vec();
        let back = t.from_normal_form(&t.to_normal_form(&z).unwrap()).unwrap();
        for (x, y) in back.iter().zip(&z) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        // quadratic energy is the normal-form energy
        let qp = t.to_normal_form(&z).unwrap();
        let nf = Quadratic::new(t.normal_form_hessian()).unwrap();
        prop_assert!((h.energy(&z).unwrap() - nf.energy(&qp).unwrap()).abs() < 1e-7 * (1.0 + h.energy(&z).unwrap().abs()));
    }

    #[test]
    fn closed_loop_dissipates(
        (lambda, omegas, a, b) in params(),
        excess in 0.01f64..3.0,
        d in prop::collection::vec(0.05f64..3.0, 3),
        z in prop::collection::vec(-1.0f64..1.0, 6),
    ) {
        let (h, _) = scrambled(lambda, &omegas, &a, &b);
        let n = h.dof();
        let cls = classify(&linearize(&h, &CanonicalState::origin(n)).unwrap(), None).unwrap();
        let t = build_transform(&cls).unwrap();
        let law = FeedbackLaw::new(&t, lambda + excess, d[..n].to_vec()).unwrap();
        let cl = ClosedLoopSystem::new(Arc::new(h), law).unwrap();
        let z = &z[..2 * n];
        let rate = cl.h_mod.gradient(z).unwrap().dot(&cl.field(z).unwrap());
        let diss = cl.dissipation(z).unwrap();
        prop_assert!(diss >= 0.0);
        prop_assert!((rate + diss).abs() < 1e-9 * (1.0 + diss));
        let rep = check_hypotheses(&cl).unwrap();
        prop_assert!(rep.passed(), "{:?}", rep);
    }

    #[test]
    fn bracket_antisymmetry(
        coeffs in prop::collection::vec(-2.0f64..2.0, 4),
        exps in prop::collection::vec(prop::collection::vec(0u32..3, 4), 4),
        z in prop::collection::vec(-1.0f64..1.0, 4),
    ) {
        let terms: Vec<Monomial> = coeffs.iter().zip(&exps).map(|(&c, e)| Monomial { coeff: c, exps: e.clone() }).collect();
        let f = PolynomialHamiltonian::new(2, terms[..2].to_vec()).unwrap();
        let g = PolynomialHamiltonian::new(2, terms[2..].to_vec()).unwrap();
        let fg = poisson_bracket(&f, &g, &z).unwrap();
        let gf = poisson_bracket(&g, &f, &z).unwrap();
        prop_assert!((fg + gf).abs() < 1e-12 * (1.0 + fg.abs()));
        prop_assert!(poisson_bracket(&f, &f, &z).unwrap().abs() < 1e-12);
    }

    #[test]
    fn random_map_is_symplectic(a in prop::collection::vec(-1.0f64..1.0, 9), b in prop::collection::vec(-1.0f64..1.0, 9)) {
        let t = symplectic(3, &a, &b);
        let j = symplectic_j(3);
        prop_assert!((t.transpose() * &j * &t - j).amax() < 1e-10 * t.amax().powi(2).max(1.0));
    }
}
