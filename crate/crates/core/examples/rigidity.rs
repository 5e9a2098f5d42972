// Rigid versus splittable eigenspaces. Dirac eigenspaces on the circle have a
// constant pointwise Gram function, so no conformal factor splits them at
// first order; the torus λ = 1 eigenspace is split by cos 2y.

use confspec::domains::{make_domain, DomainKind};
use confspec::eigensolve::{cluster, solve_symmetric};
use confspec::operators::{conformal_laplacian_torus, dirac_circle, CovariantOperator, Spin};
use confspec::splitter::{default_candidates, find_splitting_factor, rigidity_score, SplitOutcome};

fn report(op: &CovariantOperator, max_value: f64) -> confspec::Result<()> {
    let sp = solve_symmetric(&op.background, &op.weights())?.with_rank(op.rank);
    let candidates = default_candidates(op.domain.kind(), op.domain.resolution(), 4);
    for c in cluster(&sp, 1e-8)? {
        if c.multiplicity < 2 || c.value.abs() < 1e-6 || c.value.abs() > max_value {
            continue;
        }
        let r = rigidity_score(&c);
        let split = match find_splitting_factor(&c, op, &candidates, 1e-9 * c.value.abs())? {
            SplitOutcome::Split { first_order, .. } => {
                format!("split by {} with slopes {:?}", first_order.factor, first_order.predicted_slopes)
            }
            SplitOutcome::Rigid { .. } => "rigid: every candidate acts as a multiple of the identity".into(),
            SplitOutcome::Unsplit { max_identity_defect, .. } => {
                format!("no candidate splits it (identity defect {max_identity_defect:.1e})")
            }
        };
        println!("{} λ = {:+.4} × {}: score {:.2e}; {split}", op.name, c.value, c.multiplicity, r.score);
    }
    Ok(())
}

pub fn main() -> confspec::Result<()> {
    report(&dirac_circle(make_domain(DomainKind::Circle, 64)?, Spin::Antiperiodic)?, 2.0)?;
    report(&conformal_laplacian_torus(make_domain(DomainKind::Torus2, 16)?)?, 2.5)?;
    Ok(())
}
