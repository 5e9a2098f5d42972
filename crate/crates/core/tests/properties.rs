//! Property tests over randomized inputs.

use std::f64::consts::PI;
use std::sync::Arc;

use confspec::config::RunConfig;
use confspec::domains::{inner_product, make_domain, make_factor, DomainKind, FactorSpec, Section, Term};
use confspec::eigensolve::{cluster, solve_symmetric, solve_symmetric_jacobi};
use confspec::linalg::Matrix;
use confspec::operators::{conformal_laplacian_torus, dirac_circle, ConjugatedFamily, CovariantOperator, Spin};
use confspec::splitter::rigidity_score;
use proptest::prelude::*;

fn torus(n: usize) -> Arc<CovariantOperator> {
    Arc::new(conformal_laplacian_torus(make_domain(DomainKind::Torus2, n).unwrap()).unwrap())
}

fn dirac(n: usize) -> Arc<CovariantOperator> {
    Arc::new(dirac_circle(make_domain(DomainKind::Circle, n).unwrap(), Spin::Antiperiodic).unwrap())
}

/// Orthogonal `n × n` matrix as a product of Givens rotations.
fn rotation(n: usize, angles: &[f64]) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    let mut a = angles.iter().cycle();
    for i in 0..n {
        for j in i + 1..n {
            let t = *a.next().unwrap();
            let (c, s) = (t.cos(), t.sin());
            for row in q.iter_mut() {
                let (x, y) = (row[i], row[j]);
                row[i] = c * x - s * y;
                row[j] = s * x + c * y;
            }
        }
    }
    q
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn trapezoid_rule_is_exact_below_nyquist(n in 4usize..40, k in 0i64..40, l in 0i64..40) {
        let n = 2 * n;
        prop_assume!(k + l < n as i64);
        let d = make_domain(DomainKind::Circle, n).unwrap();
        let vals: Vec<f64> = d.nodes().iter().map(|p| (k as f64 * p[0]).cos() * (l as f64 * p[0]).cos()).collect();
        let exact = match (k, l) {
            (0, 0) => 2.0 * PI,
            (k, l) if k == l => PI,
            _ => 0.0,
        };
        prop_assert!((d.integrate(&vals) - exact).abs() < 1e-12);
    }

    #[test]
    fn inner_product_is_positive_and_symmetric(seed in any::<u64>(), rank in 1usize..3) {
        let d = make_domain(DomainKind::Torus2, 8).unwrap();
        let s = seed as f64 * 1e-19;
        let u = Section::from_fn(d.clone(), rank, |c, x| (x[0] + s).sin() + (c as f64 + 1.0) * (2.0 * x[1]).cos() + 0.3);
        let v = Section::from_fn(d.clone(), rank, |c, x| (x[1] - s).cos() * (c as f64 + 0.5));
        prop_assert!(inner_product(&u, &u, &d).unwrap() > 0.0);
        let (uv, vu) = (inner_product(&u, &v, &d).unwrap(), inner_product(&v, &u, &d).unwrap());
        prop_assert!((uv - vu).abs() <= 1e-12 * uv.abs().max(1.0));
    }

    #[test]
    fn rigidity_score_is_basis_invariant(angles in prop::collection::vec(-PI..PI, 6), which in 0usize..3) {
        let t = torus(12);
        let sp = solve_symmetric(&t.background, &t.weights()).unwrap();
        let mut space = cluster(&sp, 1e-8).unwrap().into_iter().filter(|c| c.multiplicity > 1).nth(which).unwrap();
        let before = rigidity_score(&space).score;
        space.rotate(&rotation(space.multiplicity, &angles));
        let after = rigidity_score(&space).score;
        prop_assert!((before - after).abs() < 1e-10, "{before} vs {after}");
    }

    #[test]
    fn config_round_trips(
        lo in -10.0f64..0.0,
        width in 0.1f64..20.0,
        gamma in 1e-6f64..1e-1,
        grid in prop::collection::vec(-0.5f64..0.5, 0..8),
        seed in any::<u64>(),
        steps in 0usize..50,
    ) {
        let mut cfg = RunConfig::default();
        cfg.window.lo = lo;
        cfg.window.hi = lo + width;
        cfg.tolerances.gamma = gamma;
        cfg.eps_grid = grid;
        cfg.eps_grid.push(0.0);
        cfg.seed = seed;
        cfg.max_steps = steps;
        let back = RunConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, cfg);
    }

    #[test]
    fn conjugation_composes_additively(e1 in -0.3f64..0.3, e2 in -0.3f64..0.3, kx in 1i64..3, use_dirac in any::<bool>()) {
        let op = if use_dirac { dirac(16) } else { torus(8) };
        let f = make_factor(&op.domain, &FactorSpec::single(Term::cos(kx, 0, 1.0))).unwrap();
        let exponent: Vec<f64> = f.values().iter().map(|v| op.eta() * e1 * v).collect();
        let rebased = Arc::new(op.rebased(&exponent, "e1"));
        let direct = ConjugatedFamily::new(op.clone(), f.clone()).unwrap().family_matrix(e1 + e2);
        let composed = ConjugatedFamily::new(rebased, f).unwrap().family_matrix(e2);
        prop_assert!(direct.max_abs_diff(&composed) <= 1e-12 * direct.max_abs());
    }

    #[test]
    fn eigensolvers_agree_on_random_symmetric_matrices(entries in prop::collection::vec(-1.0f64..1.0, 36)) {
        let a = Matrix::from_fn(8, |i, j| entries[(i.min(j) * 7 + i.max(j)) % 36]);
        let w = vec![1.0; 8];
        let ql = solve_symmetric(&a, &w).unwrap();
        let jacobi = solve_symmetric_jacobi(&a, &w).unwrap();
        for (x, y) in ql.eigenvalues.iter().zip(&jacobi.eigenvalues) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        prop_assert_eq!(ql.eigenvalues.windows(2).filter(|p| p[0] > p[1]).count(), 0);
    }
}
