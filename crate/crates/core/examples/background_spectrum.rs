// Background spectra of the two geometric instances: the conformal Laplacian
// on the flat torus (eigenvalues j² + k²) and the Dirac operator on the circle
// with antiperiodic spin structure (eigenvalues ±(k + 1/2), each twice).

use confspec::domains::{make_domain, DomainKind};
use confspec::eigensolve::{cluster, solve_symmetric};
use confspec::operators::{conformal_laplacian_torus, dirac_circle, CovariantOperator, Spin};
use confspec::perturb::{default_zero_tol, kernel_dimension};

fn show(op: &CovariantOperator, clusters_shown: usize) -> confspec::Result<()> {
    let sp = solve_symmetric(&op.background, &op.weights())?.with_rank(op.rank);
    println!("{} (dimension {}, η = {})", op.name, sp.len(), op.eta());
    for c in cluster(&sp, 1e-8)?.iter().take(clusters_shown) {
        println!("  {:>10.6} × {}", c.value, c.multiplicity);
    }
    println!("  kernel dimension {}", kernel_dimension(&sp, default_zero_tol(&sp)));
    Ok(())
}

pub fn main() -> confspec::Result<()> {
    let torus = conformal_laplacian_torus(make_domain(DomainKind::Torus2, 16)?)?;
    show(&torus, 6)?;

    let circle = make_domain(DomainKind::Circle, 64)?;
    // Sorted ascending, so the clusters nearest zero sit in the middle.
    let dirac = dirac_circle(circle.clone(), Spin::Antiperiodic)?;
    let sp = solve_symmetric(&dirac.background, &dirac.weights())?;
    let near_zero: Vec<String> = cluster(&sp, 1e-8)?
        .iter()
        .filter(|c| c.value.abs() < 3.0)
        .map(|c| format!("{:.6}×{}", c.value, c.multiplicity))
        .collect();
    println!("{}: |λ| < 3 → {}", dirac.name, near_zero.join(", "));

    show(&dirac_circle(circle, Spin::Periodic)?, 0)?;
    Ok(())
}
