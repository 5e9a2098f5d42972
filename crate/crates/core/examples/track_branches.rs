// Tracks every eigenvalue branch in [0.5, 4.5] across the default ε grid and
// checks the growth envelope |λ(ε) - λ| ≤ |λ|(e^{2|η|‖f‖∞|ε|} - 1); also
// writes the branches as CSV and an SVG diagram.

use std::sync::Arc;

use confspec::domains::{make_domain, make_factor, DomainKind, FactorSpec, Term};
use confspec::io::{branches_svg, write_atomic};
use confspec::operators::{conformal_laplacian_torus, ConjugatedFamily};
use confspec::perturb::{branches_csv, default_eps_grid, growth_bound_check, track_branches, TrackOptions};

pub fn main() -> confspec::Result<()> {
    let op = Arc::new(conformal_laplacian_torus(make_domain(DomainKind::Torus2, 16)?)?);
    let factor = make_factor(&op.domain, &FactorSpec::single(Term::cos(2, 0, 1.0)))?;
    let family = ConjugatedFamily::new(op.clone(), factor.clone())?;
    let grid = default_eps_grid();
    let branches = track_branches(&family, &grid, (0.5, 4.5), &TrackOptions::default())?;

    for b in &branches {
        let report = growth_bound_check(b, &op, &factor);
        println!(
            "branch {:>2} from {:.3}: λ(±0.5) = {:.4} / {:.4}, growth bound {}",
            b.id,
            b.origin_value,
            b.values[0],
            b.values[b.values.len() - 1],
            if report.pass { "holds" } else { "VIOLATED" }
        );
    }

    let dir = std::env::temp_dir().join("confspec-track-example");
    write_atomic(&dir.join("branches.csv"), branches_csv(&branches).as_bytes())?;
    write_atomic(&dir.join("branches.svg"), branches_svg(&branches, "torus, f = cos 2x").as_bytes())?;
    println!("wrote {}", dir.display());
    Ok(())
}
