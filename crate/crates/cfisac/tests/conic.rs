use cfisac::channel::{CVec, C64};
use cfisac::conic::*;
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_herm(rng: &mut ChaCha8Rng, n: usize) -> CMat {
    let a = CMat::from_fn(n, n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    (&a + a.adjoint()) * C64::from(0.5)
}

fn eig(h: &CMat) -> Vec<f64> {
    let mut v: Vec<f64> = SymmetricEigen::new(h.clone()).eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

fn inv_sqrt(b: &CMat) -> CMat {
    let e = SymmetricEigen::new(b.clone());
    let d = CMat::from_diagonal(&e.eigenvalues.map(|x| C64::from(1.0 / x.sqrt())));
    &e.eigenvectors * d * e.eigenvectors.adjoint()
}

fn re_tr(a: &CMat, b: &CMat) -> f64 {
    (a * b).trace().re
}

fn entry(n: usize, i: usize, j: usize) -> CMat {
    let mut e = CMat::zeros(n, n);
    e[(i, j)] = C64::from(if i == j { 1.0 } else { 0.5 });
    e[(j, i)] = e[(i, j)];
    e
}

/// `X − b I ⪰ 0` as an LMI on variable `x`.
fn floor_lmi(x: usize, n: usize, b: f64) -> Lmi {
    let mut l = Lmi::new(n);
    for i in 0..n {
        for j in i..n {
            l.set(i, j, LinExpr::herm(x, entry(n, i, j)).with_const(if i == j { -b } else { 0.0 }));
        }
    }
    l
}

/// min Re tr(C X) s.t. Re tr(B X) = 1, X ⪰ 0. The optimum is the smallest
/// eigenvalue of B^{-1/2} C B^{-1/2}.
#[test]
fn eigenvalue_oracle_and_kkt() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..50 {
        let n = rng.random_range(1..=6);
        let c = random_herm(&mut rng, n);
        let b = if case % 2 == 0 {
            CMat::identity(n, n)
        } else {
            let g = random_herm(&mut rng, n);
            &g * &g + CMat::identity(n, n) * C64::from(0.5)
        };
        let bi = inv_sqrt(&b);
        let lam = eig(&(&bi * &c * &bi))[0];

        let mut m = Model::new();
        let x = m.add_herm(n);
        m.minimize(LinExpr::herm(x, c.clone()));
        m.add_eq(LinExpr::herm(x, b.clone()), 1.0);
        let s = m.solve(&SolveOptions::default()).unwrap();
        assert_eq!(s.status, Status::Optimal, "case {case}: {}", s.note);
        assert!(s.residuals.max() <= 1e-6, "case {case}: {:?}", s.residuals);
        // same relative scale as the solver's duality gap
        assert!((s.objective - lam).abs() <= 1e-6 * lam.abs().max(1.0), "case {case}: {} vs {lam}", s.objective);

        // independent KKT check with dual y = λ, Z = C − λB
        let xs = &s.herm[0];
        assert!((re_tr(&b, xs) - 1.0).abs() <= 1e-6);
        assert!(eig(xs)[0] >= -1e-6);
        let z = &c - &b * C64::from(lam);
        assert!(eig(&z)[0] >= -1e-9);
        assert!(re_tr(&z, xs).abs() <= 1e-6 * lam.abs().max(1.0));
    }
}

#[test]
fn constructed_infeasible_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..10 {
        let n = rng.random_range(1..=5);
        let mut m = Model::new();
        let x = m.add_herm(n);
        match case % 3 {
            // negative trace
            0 => m.add_le(LinExpr::herm(x, CMat::identity(n, n)), -rng.random_range(0.1..2.0)),
            // unit trace against an eigenvalue floor above 1/n
            1 => {
                m.add_eq(LinExpr::herm(x, CMat::identity(n, n)), 1.0);
                m.add_lmi(floor_lmi(x, n, (1.0 + rng.random_range(0.1..1.0)) / n as f64));
            }
            // Re tr(C X) above λ_max(C) on the unit-trace set
            _ => {
                let c = random_herm(&mut rng, n);
                let top = *eig(&c).last().unwrap();
                m.add_eq(LinExpr::herm(x, CMat::identity(n, n)), 1.0);
                m.add_ge(LinExpr::herm(x, c), top + rng.random_range(0.1..1.0));
            }
        }
        let s = m.solve(&SolveOptions::default()).unwrap();
        assert_eq!(s.status, Status::Infeasible, "case {case}");
    }
}

#[test]
fn trace_floor_example() {
    let mut m = Model::new();
    let x = m.add_herm(3);
    m.minimize(LinExpr::herm(x, CMat::identity(3, 3)));
    m.add_lmi(floor_lmi(x, 3, 1.0));
    let s = m.solve(&SolveOptions::default()).unwrap();
    assert_eq!(s.status, Status::Optimal);
    assert!((s.objective - 3.0).abs() < 1e-6);
    assert!((&s.herm[0] - CMat::identity(3, 3)).norm() < 1e-5);
}

#[test]
fn solves_are_bitwise_repeatable() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let c = random_herm(&mut rng, 4);
    let build = || {
        let mut m = Model::new();
        let x = m.add_herm(4);
        m.minimize(LinExpr::herm(x, c.clone()));
        m.add_eq(LinExpr::herm(x, CMat::identity(4, 4)), 1.0);
        m
    };
    let (a, b) = (build().solve(&SolveOptions::default()).unwrap(), build().solve(&SolveOptions::default()).unwrap());
    assert_eq!(a.herm, b.herm);
    assert_eq!(a.objective.to_bits(), b.objective.to_bits());
}

fn beams() -> impl Strategy<Value = Vec<CVec>> {
    prop::collection::vec(prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 4), 1..4)
        .prop_map(|v| v.into_iter().map(|w| CVec::from_iterator(4, w.into_iter().map(|(a, b)| C64::new(a, b)))).collect())
}

fn dist(a: &[CVec], b: &[CVec]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum::<f64>().sqrt()
}

proptest! {
    #[test]
    fn power_projection_is_idempotent_and_feasible(w in beams(), p in 0.1f64..10.0) {
        let once = project_power_ball(&w, p);
        prop_assert!(once.iter().map(|v| v.norm_squared()).sum::<f64>() <= p * (1.0 + 1e-12));
        prop_assert_eq!(project_power_ball(&once, p), once);
    }

    #[test]
    fn power_projection_is_nonexpansive(w in beams(), p in 0.1f64..10.0, s in 0.0f64..2.0) {
        let v: Vec<CVec> = w.iter().map(|x| x.map(|e| e * C64::new(s, 0.3))).collect();
        prop_assert!(dist(&project_power_ball(&w, p), &project_power_ball(&v, p)) <= dist(&w, &v) * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn box_projection_properties(
        d in prop::collection::vec(-2.0f64..2.0, 6),
        e in prop::collection::vec(-2.0f64..2.0, 6),
        xi in prop::collection::vec(prop::bool::ANY, 6),
    ) {
        let xi: Vec<f64> = xi.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect();
        let a = box_project(&d, &xi);
        prop_assert_eq!(box_project(&a, &xi), a.clone());
        let b = box_project(&e, &xi);
        let lhs: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
        let rhs: f64 = d.iter().zip(&e).map(|(x, y)| (x - y).powi(2)).sum();
        prop_assert!(lhs <= rhs + 1e-12);
        for (v, x) in a.iter().zip(&xi) {
            prop_assert!(*v >= 0.0 && v <= x);
        }
    }
}

#[test]
fn real_embedding_of_lmi_matches_complex_eigenvalues() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let h = random_herm(&mut rng, 3);
    let mut l = Lmi::new(3);
    for i in 0..3 {
        for j in i..3 {
            l.set(i, j, LinExpr::herm(0, entry(3, i, j)));
        }
    }
    let v: DMatrix<f64> = l.eval(&[h.clone()], &[]);
    let want = h.map(|z| z.re);
    assert!((v - want).norm() < 1e-12);
}
