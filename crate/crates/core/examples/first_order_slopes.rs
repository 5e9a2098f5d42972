// The four-fold eigenvalue λ = 1 of the torus Laplacian splits under
// f = cos 2x with slopes given by the first-order matrix 2ηλ⟨f uᵢ, uⱼ⟩;
// central differences of the tracked branches agree.

use std::sync::Arc;

use confspec::domains::{make_domain, make_factor, DomainKind, FactorSpec, Term};
use confspec::eigensolve::{cluster, solve_symmetric};
use confspec::operators::{conformal_laplacian_torus, ConjugatedFamily};
use confspec::perturb::{first_order_matrix, slope_comparison, track_branches, TrackOptions};

pub fn main() -> confspec::Result<()> {
    let op = Arc::new(conformal_laplacian_torus(make_domain(DomainKind::Torus2, 16)?)?);
    let factor = make_factor(&op.domain, &FactorSpec::single(Term::cos(2, 0, 1.0)))?;
    let sp = solve_symmetric(&op.background, &op.weights())?;
    let clusters = cluster(&sp, 1e-8)?;
    let one = clusters.iter().find(|c| (c.value - 1.0).abs() < 1e-6).expect("λ = 1 is present");

    let m = first_order_matrix(one, &factor, &op)?;
    println!("λ = 1 × {}: predicted slopes {:?}", one.multiplicity, m.predicted_slopes);

    let family = ConjugatedFamily::new(op.clone(), factor)?;
    for h in [1e-3, 5e-4] {
        let branches = track_branches(&family, &[-h, 0.0, h], (0.5, 1.5), &TrackOptions::default())?;
        let cmp = slope_comparison(&branches, h).expect("grid holds ±h");
        println!("h = {h:e}: measured {:?}, max error {:.2e}", cmp[0].measured, cmp[0].max_error);
    }
    Ok(())
}
