// The conjugated family A_f(ε) = e^{ηεf} P e^{ηεf} is isospectral to the
// conformally deformed operator, i.e. to the weighted problem
// P u = λ e^{εf} u for the torus Laplacian (η = -1/2).

use std::sync::Arc;

use confspec::domains::{make_domain, make_factor, DomainKind, FactorSpec, Term};
use confspec::eigensolve::{solve_generalized, solve_symmetric};
use confspec::operators::{conformal_laplacian_torus, ConjugatedFamily};

pub fn main() -> confspec::Result<()> {
    let op = Arc::new(conformal_laplacian_torus(make_domain(DomainKind::Torus2, 16)?)?);
    let factor = make_factor(&op.domain, &FactorSpec::single(Term::cos(2, 0, 1.0)))?;
    let family = ConjugatedFamily::new(op.clone(), factor)?;
    let w = op.weights();

    for eps in [0.05, 0.1, 0.3] {
        let conjugated = solve_symmetric(&family.family_matrix(eps), &w)?;
        let mass: Vec<f64> = family.lifted_factor().iter().map(|f| (eps * f).exp()).collect();
        let direct = solve_generalized(&op.background, &mass, &w)?;
        let diff = conjugated
            .eigenvalues
            .iter()
            .zip(&direct.eigenvalues)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs() / a.abs().max(1.0)));
        println!(
            "ε = {eps:<4}: lowest nonzero {:.10} vs {:.10}; max relative difference {diff:.1e}",
            conjugated.eigenvalues[1], direct.eigenvalues[1]
        );
    }
    Ok(())
}
