// On the circle the deformed Dirac spectrum is known in closed form: the
// metric e^{εf}dθ² has length L = ∫ e^{εf/2} dθ and eigenvalues
// (2π/L)(k + 1/2). For f = cos θ, L = 2π I₀(ε/2).

use std::f64::consts::PI;
use std::sync::Arc;

use confspec::domains::{make_domain, make_factor, DomainKind, FactorSpec, Term};
use confspec::eigensolve::solve_symmetric;
use confspec::operators::{dirac_circle, ConjugatedFamily, Spin};
use confspec::verify::bessel_i0;

pub fn main() -> confspec::Result<()> {
    let op = Arc::new(dirac_circle(make_domain(DomainKind::Circle, 256)?, Spin::Antiperiodic)?);
    let factor = make_factor(&op.domain, &FactorSpec::single(Term::cos(1, 0, 1.0)))?;
    let family = ConjugatedFamily::new(op.clone(), factor)?;
    // The Dirac operator has bidegree (0, 1): η = -1/4, so the conjugator is
    // e^{-εf/4}.
    for eps in [0.2, 0.4, 0.8] {
        let length = 2.0 * PI * bessel_i0(0.5 * eps);
        let sp = solve_symmetric(&family.family_matrix(eps), &family.weights())?;
        let lowest = sp.eigenvalues.iter().copied().filter(|v| *v > 0.0).fold(f64::INFINITY, f64::min);
        let exact = PI / length;
        println!(
            "ε = {eps}: L = {length:.12}, lowest positive {lowest:.12} vs π/L = {exact:.12} (relative {:.1e})",
            (lowest - exact).abs() / exact
        );
    }
    Ok(())
}
