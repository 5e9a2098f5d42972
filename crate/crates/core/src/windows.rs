//! Counting eigenvalues in real intervals, local constancy of those counts
//! under conformal deformation, and continuity of the eigenvalues above a
//! threshold.

use rayon::prelude::*;
use serde::Serialize;

use crate::eigensolve::{cluster, solve_symmetric, Eigenspace, Spectrum};
use crate::error::{Error, Result};
use crate::operators::{ConjugatedFamily, CovariantOperator};
use crate::perturb::{default_zero_tol, growth_envelope};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectralWindow {
    pub lo: f64,
    pub hi: f64,
    /// Minimal distance from either endpoint to any eigenvalue for the
    /// window to count as clean.
    pub guard: f64,
}

impl SpectralWindow {
    pub fn new(lo: f64, hi: f64, guard: f64) -> Result<Self> {
        if !(lo < hi) || !(guard >= 0.0) || !guard.is_finite() {
            return Err(Error::InvalidWindow(lo, hi));
        }
        Ok(Self { lo, hi, guard })
    }

    /// Guard of `1e-3` times the width.
    pub fn with_default_guard(lo: f64, hi: f64) -> Result<Self> {
        Self::new(lo, hi, 1e-3 * (hi - lo))
    }

    pub fn contains(&self, value: f64) -> bool {
        self.lo <= value && value <= self.hi
    }

    /// Distance from `value` to the nearer endpoint.
    pub fn endpoint_distance(&self, value: f64) -> f64 {
        (value - self.lo).abs().min((value - self.hi).abs())
    }

    pub fn is_clean(&self, values: &[f64]) -> bool {
        values.iter().all(|v| self.endpoint_distance(*v) > self.guard)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct WindowCount {
    pub count: usize,
    pub clean: bool,
}

/// Eigenvalues in `[lo, hi]`, counted with multiplicity.
pub fn count_in_window(spectrum: &Spectrum, window: &SpectralWindow) -> WindowCount {
    count_values(&spectrum.eigenvalues, window)
}

fn count_values(values: &[f64], window: &SpectralWindow) -> WindowCount {
    WindowCount { count: values.iter().filter(|v| window.contains(**v)).count(), clean: window.is_clean(values) }
}

/// Sum of multiplicities of the clusters whose value lies in the window.
/// Equals the raw count whenever the window is clean and the cluster
/// tolerance is below the guard.
pub fn count_from_clusters(clusters: &[Eigenspace], window: &SpectralWindow) -> usize {
    clusters.iter().filter(|c| window.contains(c.value)).map(|c| c.multiplicity).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub eps: f64,
    pub count: usize,
    pub clean: bool,
    /// `|ε|` is inside the certified radius.
    pub certified: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Crossing {
    pub eps_from: f64,
    pub eps_to: f64,
    pub count_from: usize,
    pub count_to: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct WindowStability {
    pub window: SpectralWindow,
    pub reference_count: usize,
    /// Largest `|ε|` for which the growth bound keeps every eigenvalue at
    /// least `guard` away from both endpoints.
    pub certified_radius: f64,
    pub points: Vec<SweepPoint>,
    /// Consecutive grid points (ascending in ε) where the count changes.
    pub crossings: Vec<Crossing>,
    /// Count constant over the certified part of the grid.
    pub pass: bool,
}

impl WindowStability {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("eps,count,clean\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", crate::io::fmt_f64(p.eps), p.count, p.clean));
        }
        out
    }
}

/// `ln(1 + (dist - guard)/|λ|) / (2|η|‖f‖∞)` minimized over the spectrum;
/// zero eigenvalues do not move and never limit the radius.
pub fn certified_radius(values: &[f64], window: &SpectralWindow, eta: f64, sup_norm: f64) -> f64 {
    let rate = 2.0 * eta.abs() * sup_norm;
    values
        .iter()
        .filter(|v| **v != 0.0)
        .map(|v| (1.0 + (window.endpoint_distance(*v) - window.guard) / v.abs()).ln() / rate)
        .fold(f64::INFINITY, f64::min)
}

fn sweep_values(family: &ConjugatedFamily, eps_grid: &[f64]) -> Result<Vec<Vec<f64>>> {
    let w = family.weights();
    eps_grid
        .par_iter()
        .map(|&eps| Ok(solve_symmetric(&family.family_matrix(eps), &w)?.eigenvalues))
        .collect()
}

pub fn window_stability(family: &ConjugatedFamily, window: &SpectralWindow, eps_grid: &[f64]) -> Result<WindowStability> {
    let w = family.weights();
    let base = solve_symmetric(&family.family_matrix(0.0), &w)?.eigenvalues;
    if !window.is_clean(&base) {
        return Err(Error::DirtyWindow { lo: window.lo, hi: window.hi });
    }
    let reference = count_values(&base, window).count;
    let radius = certified_radius(&base, window, family.eta(), family.factor.sup_norm());

    let mut grid: Vec<f64> = eps_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let values = sweep_values(family, &grid)?;
    let points: Vec<SweepPoint> = grid
        .iter()
        .zip(&values)
        .map(|(&eps, v)| {
            let c = count_values(v, window);
            SweepPoint { eps, count: c.count, clean: c.clean, certified: eps.abs() <= radius }
        })
        .collect();
    let crossings = points
        .windows(2)
        .filter(|p| p[0].count != p[1].count)
        .map(|p| Crossing { eps_from: p[0].eps, eps_to: p[1].eps, count_from: p[0].count, count_to: p[1].count })
        .collect();
    let pass = points.iter().filter(|p| p.certified).all(|p| p.count == reference && p.clean);
    Ok(WindowStability { window: *window, reference_count: reference, certified_radius: radius, points, crossings, pass })
}

#[derive(Debug, Clone, Serialize)]
pub struct ContinuityRow {
    /// 1-based index among eigenvalues above `c`.
    pub index: usize,
    pub mu0: f64,
    pub max_deviation: f64,
    pub worst_eps: f64,
    /// `max_deviation` minus the envelope at the worst point (negative when
    /// the envelope holds).
    pub envelope_margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContinuityReport {
    pub threshold: f64,
    pub rows: Vec<ContinuityRow>,
    pub pass: bool,
}

/// Tracks the first `index_count` eigenvalues above `c` (with multiplicity)
/// over the grid and checks
/// `|μᵢ(ε) − μᵢ(0)| ≤ |μᵢ(0)|(e^{2|η|‖f‖∞|ε|} − 1) + 1e-8`.
/// `c` must be at least `guard` away from the spectrum at `ε = 0`.
pub fn continuity_check(
    family: &ConjugatedFamily,
    c: f64,
    index_count: usize,
    eps_grid: &[f64],
    guard: f64,
) -> Result<ContinuityReport> {
    let w = family.weights();
    let base = solve_symmetric(&family.family_matrix(0.0), &w)?.eigenvalues;
    if let Some(nearest) = base.iter().copied().min_by(|a, b| (a - c).abs().total_cmp(&(b - c).abs())) {
        if (nearest - c).abs() <= guard {
            return Err(Error::ThresholdOnSpectrum { c, guard, nearest });
        }
    }
    let above = |v: &[f64]| -> Vec<f64> { v.iter().copied().filter(|x| *x > c).take(index_count).collect() };
    let mu0 = above(&base);
    if mu0.len() < index_count {
        return Err(Error::Dimension { expected: index_count, got: mu0.len() });
    }
    let values = sweep_values(family, eps_grid)?;
    let (eta, s) = (family.eta(), family.factor.sup_norm());
    let mut rows: Vec<ContinuityRow> = mu0
        .iter()
        .enumerate()
        .map(|(i, &m)| ContinuityRow {
            index: i + 1,
            mu0: m,
            max_deviation: 0.0,
            worst_eps: 0.0,
            envelope_margin: f64::NEG_INFINITY,
            pass: true,
        })
        .collect();
    for (&eps, v) in eps_grid.iter().zip(&values) {
        let mu = above(v);
        for row in rows.iter_mut() {
            let Some(&m) = mu.get(row.index - 1) else {
                row.pass = false;
                continue;
            };
            let dev = (m - row.mu0).abs();
            let margin = dev - (growth_envelope(row.mu0, eta, s, eps) + 1e-8);
            if dev > row.max_deviation {
                row.max_deviation = dev;
                row.worst_eps = eps;
            }
            row.envelope_margin = row.envelope_margin.max(margin);
            if margin > 0.0 {
                row.pass = false;
            }
        }
    }
    let pass = rows.iter().all(|r| r.pass);
    Ok(ContinuityReport { threshold: c, rows, pass })
}

#[derive(Debug, Clone, Serialize)]
pub struct MultiplicityRow {
    pub value: f64,
    pub multiplicity: usize,
    pub within_rank: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MultiplicityReport {
    pub rank: usize,
    pub rows: Vec<MultiplicityRow>,
    pub all_within_rank: bool,
}

/// Flags every nonzero cluster whose multiplicity exceeds the fiber rank.
pub fn multiplicity_report(spectrum: &Spectrum, operator: &CovariantOperator, cluster_tol: f64) -> Result<MultiplicityReport> {
    let zero_tol = default_zero_tol(spectrum);
    let rows: Vec<MultiplicityRow> = cluster(spectrum, cluster_tol)?
        .into_iter()
        .filter(|c| c.value.abs() > zero_tol)
        .map(|c| MultiplicityRow { value: c.value, multiplicity: c.multiplicity, within_rank: c.multiplicity <= operator.rank })
        .collect();
    let all_within_rank = rows.iter().all(|r| r.within_rank);
    Ok(MultiplicityReport { rank: operator.rank, rows, all_within_rank })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::{make_domain, make_factor, DomainKind, FactorSpec, Term};
    use crate::eigensolve::DEFAULT_CLUSTER_TOL;
    use crate::operators::{conformal_laplacian_torus, dirac_circle, Spin};
    use std::sync::Arc;

    fn torus(res: usize) -> Arc<CovariantOperator> {
        Arc::new(conformal_laplacian_torus(make_domain(DomainKind::Torus2, res).unwrap()).unwrap())
    }

    fn spectrum(op: &CovariantOperator) -> Spectrum {
        solve_symmetric(&op.background, &op.weights()).unwrap().with_rank(op.rank)
    }

    fn family(op: &Arc<CovariantOperator>, spec: FactorSpec) -> ConjugatedFamily {
        let f = make_factor(&op.domain, &spec).unwrap();
        ConjugatedFamily::new(op.clone(), f).unwrap()
    }

    #[test]
    fn counts_on_known_spectra() {
        let op = torus(16);
        let sp = spectrum(&op);
        let c = count_in_window(&sp, &SpectralWindow::new(0.5, 4.5, 0.1).unwrap());
        assert_eq!(c, WindowCount { count: 12, clean: true });
        let c = count_in_window(&sp, &SpectralWindow::new(0.5, 4.0, 0.1).unwrap());
        assert!(!c.clean);

        let d = dirac_circle(make_domain(DomainKind::Circle, 64).unwrap(), Spin::Antiperiodic).unwrap();
        let c = count_in_window(&spectrum(&d), &SpectralWindow::new(0.0, 2.0, 0.1).unwrap());
        assert_eq!(c, WindowCount { count: 4, clean: true });
    }

    #[test]
    fn counts_are_additive_and_match_clusters() {
        let sp = spectrum(&torus(16));
        let (a, b, whole) = (
            SpectralWindow::new(0.5, 1.5, 0.1).unwrap(),
            SpectralWindow::new(1.5, 4.5, 0.1).unwrap(),
            SpectralWindow::new(0.5, 4.5, 0.1).unwrap(),
        );
        assert_eq!(count_in_window(&sp, &a).count + count_in_window(&sp, &b).count, count_in_window(&sp, &whole).count);
        let cl = cluster(&sp, DEFAULT_CLUSTER_TOL).unwrap();
        for w in [a, b, whole] {
            assert_eq!(count_from_clusters(&cl, &w), count_in_window(&sp, &w).count);
        }
    }

    #[test]
    fn invalid_window() {
        assert!(SpectralWindow::new(1.0, 1.0, 0.1).is_err());
        assert!(SpectralWindow::new(0.0, 1.0, -0.1).is_err());
        assert!((SpectralWindow::with_default_guard(0.0, 2.0).unwrap().guard - 2e-3).abs() < 1e-15);
    }

    #[test]
    fn stable_under_small_deformation() {
        let op = torus(16);
        let fam = family(&op, FactorSpec::single(Term::cos(2, 0, 1.0)));
        let grid: Vec<f64> = (-10..=10).map(|i| i as f64 * 0.005).collect();
        let r = window_stability(&fam, &SpectralWindow::new(0.5, 4.5, 0.1).unwrap(), &grid).unwrap();
        assert!(r.pass);
        assert!(r.points.iter().all(|p| p.count == 12));
        assert!(r.crossings.is_empty());
    }

    #[test]
    fn constant_factor_crossing() {
        let op = torus(16);
        let fam = family(&op, FactorSpec::constant(1.0));
        let grid: Vec<f64> = (0..=60).map(|i| i as f64 * 0.005).collect();
        let w = SpectralWindow::new(0.5, 4.5, 1e-3).unwrap();
        let r = window_stability(&fam, &w, &grid).unwrap();
        assert!(r.pass);
        let exact = (5.0f64 / 4.5).ln();
        assert!(r.certified_radius < exact);
        let first = r.crossings.first().unwrap();
        assert!(first.eps_from < exact && exact <= first.eps_to, "{first:?}");
        // λ = 5 has multiplicity 8 on the square torus
        assert_eq!(first.count_to, first.count_from + 8);
    }

    #[test]
    fn empty_window_stays_empty() {
        let op = torus(16);
        let fam = family(&op, FactorSpec::single(Term::cos(2, 0, 1.0)));
        let w = SpectralWindow::new(10.5, 10.6, 1e-4).unwrap();
        let r = window_stability(&fam, &w, &[-0.002, 0.0, 0.002]).unwrap();
        assert_eq!(r.reference_count, 0);
        assert!(r.pass);
    }

    #[test]
    fn dirty_window_rejected() {
        let op = torus(16);
        let fam = family(&op, FactorSpec::single(Term::cos(2, 0, 1.0)));
        let w = SpectralWindow::new(0.5, 4.0, 0.1).unwrap();
        assert!(matches!(window_stability(&fam, &w, &[0.0]), Err(Error::DirtyWindow { .. })));
    }

    #[test]
    fn continuity_envelope() {
        let op = torus(16);
        let grid: Vec<f64> = (-4..=4).map(|i| i as f64 * 0.05).collect();
        let fam = family(&op, FactorSpec::single(Term::cos(2, 0, 1.0)));
        let r = continuity_check(&fam, 0.5, 12, &grid, 1e-3).unwrap();
        assert!(r.pass);
        assert_eq!(r.rows.len(), 12);

        // constant factor: μ(ε) = e^{-ε} μ(0), the envelope is attained for ε < 0
        let fam = family(&op, FactorSpec::constant(1.0));
        let r = continuity_check(&fam, 0.5, 12, &grid, 1e-3).unwrap();
        assert!(r.pass);
        for row in &r.rows {
            let expected = row.mu0 * ((0.2f64).exp() - 1.0);
            assert!((row.max_deviation - expected).abs() < 1e-9 * row.mu0);
            assert!(row.envelope_margin.abs() < 1e-8 + 1e-9 * row.mu0);
        }

        assert!(matches!(continuity_check(&fam, 1.0, 4, &grid, 1e-3), Err(Error::ThresholdOnSpectrum { .. })));
    }

    #[test]
    fn multiplicity_flags() {
        let d = dirac_circle(make_domain(DomainKind::Circle, 64).unwrap(), Spin::Antiperiodic).unwrap();
        let r = multiplicity_report(&spectrum(&d), &d, DEFAULT_CLUSTER_TOL).unwrap();
        assert!(r.all_within_rank);
        assert!(r.rows.iter().all(|row| row.multiplicity == 2));

        let t = torus(16);
        let r = multiplicity_report(&spectrum(&t), &t, DEFAULT_CLUSTER_TOL).unwrap();
        assert!(!r.all_within_rank);
        assert_eq!(r.rows[0].multiplicity, 4);
    }
}
