//! The acceptance battery: exact oracles, bound checks, kernel invariance,
//! rigidity, the genericity loop, window stability and an independent check
//! of the eigensolver. Each criterion is a plain function so that the CLI,
//! the examples and the integration tests run the same code.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::domains::{make_domain, make_factor, DomainKind, FactorSpec, Term};
use crate::eigensolve::{cluster, solve_generalized, solve_symmetric, solve_symmetric_jacobi, Eigenspace, Spectrum};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::operators::{
    conformal_laplacian_torus, dirac_circle, synthetic_power, Bidegree, ConjugatedFamily, CovariantOperator, Spin,
};
use crate::perturb::{
    default_eps_grid, first_order_matrix, growth_envelope, kernel_dimension, slope_comparison, track_branches, Branch,
    TrackOptions,
};
use crate::splitter::{
    default_candidates, find_splitting_factor, genericity_loop, replay_plan, rigidity_score, LoopOptions, SplitOutcome,
    SplitPlan,
};
use crate::windows::{continuity_check, window_stability, SpectralWindow};

/// Knobs the battery takes from the run configuration. Everything else is
/// fixed by the criteria themselves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VerifySettings {
    /// Used for every multiplicity check.
    pub cluster_tol: f64,
    /// Relative kernel threshold.
    pub zero_tol: f64,
    /// Seed of the random eigensolver test matrices.
    pub seed: u64,
}

impl Default for VerifySettings {
    fn default() -> Self {
        Self { cluster_tol: 1e-8, zero_tol: 1e-9, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Criterion {
    pub id: u8,
    pub title: &'static str,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
}

impl Criterion {
    /// `[PASS] 3 title (1.23 s): detail`
    pub fn line(&self) -> String {
        format!(
            "[{}] {:>2} {} ({:.2} s): {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            self.seconds,
            self.detail
        )
    }
}

/// Tracked branches produced along the way, kept for CSV/SVG output.
#[derive(Debug, Clone)]
pub struct BranchSet {
    pub name: String,
    pub branches: Vec<Branch>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub settings: VerifySettings,
    pub criteria: Vec<Criterion>,
    pub pass: bool,
    #[serde(skip)]
    pub branch_sets: Vec<BranchSet>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split_plan: Option<SplitPlan>,
}

impl VerifyReport {
    pub fn failing(&self) -> impl Iterator<Item = &Criterion> {
        self.criteria.iter().filter(|c| !c.pass)
    }
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome { pass, detail: detail.into() })
}

fn timed(id: u8, title: &'static str, f: impl FnOnce() -> Result<Outcome>) -> Criterion {
    let start = Instant::now();
    let (pass, detail) = match f() {
        Ok(o) => (o.pass, o.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    Criterion { id, title, pass, detail, seconds: start.elapsed().as_secs_f64() }
}

pub fn run_battery(settings: &VerifySettings) -> VerifyReport {
    let mut branch_sets = Vec::new();
    let mut split_plan = None;
    let criteria = vec![
        timed(1, "exact background spectra", || exact_spectra(settings)),
        timed(2, "isospectral conjugation", isospectrality),
        timed(3, "Dirac deformation oracle", || dirac_oracle(settings)),
        timed(4, "first-order slopes", first_order_slopes),
        timed(5, "growth bound", || {
            let (o, sets) = growth_bound()?;
            branch_sets = sets;
            Ok(o)
        }),
        timed(6, "kernel invariance", || kernel_invariance(settings)),
        timed(7, "rigidity dichotomy", rigidity_dichotomy),
        timed(8, "genericity loop", || {
            let (o, plan) = genericity()?;
            split_plan = Some(plan);
            Ok(o)
        }),
        timed(9, "window count stability", window_counts),
        timed(10, "continuity envelope", continuity),
        timed(11, "eigensolver oracle", || eigensolver_oracle(settings.seed)),
    ];
    let pass = criteria.iter().all(|c| c.pass);
    VerifyReport { settings: *settings, criteria, pass, branch_sets, split_plan }
}

fn torus(resolution: usize) -> Result<Arc<CovariantOperator>> {
    Ok(Arc::new(conformal_laplacian_torus(make_domain(DomainKind::Torus2, resolution)?)?))
}

fn dirac(resolution: usize, spin: Spin) -> Result<Arc<CovariantOperator>> {
    Ok(Arc::new(dirac_circle(make_domain(DomainKind::Circle, resolution)?, spin)?))
}

fn spectrum_of(op: &CovariantOperator) -> Result<Spectrum> {
    Ok(solve_symmetric(&op.background, &op.weights())?.with_rank(op.rank))
}

fn family(op: &Arc<CovariantOperator>, spec: &FactorSpec) -> Result<ConjugatedFamily> {
    let f = make_factor(&op.domain, spec)?;
    ConjugatedFamily::new(op.clone(), f)
}

fn cos(kx: i64, ky: i64) -> FactorSpec {
    FactorSpec::single(Term::cos(kx, ky, 1.0))
}

/// Multiplicities of runs of equal values in a sorted list.
fn exact_multiplicities(sorted: &[f64]) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    for (i, v) in sorted.iter().enumerate() {
        if i > 0 && sorted[i - 1] == *v {
            *out.last_mut().unwrap() += 1;
        } else {
            out.push(1);
        }
    }
    out
}

fn compare_exact(computed: &Spectrum, exact: &[f64], cluster_tol: f64) -> Result<(f64, bool)> {
    if computed.len() != exact.len() {
        return Err(Error::Dimension { expected: exact.len(), got: computed.len() });
    }
    let err = computed.eigenvalues.iter().zip(exact).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    let mults: Vec<usize> = cluster(computed, cluster_tol)?.iter().map(|c| c.multiplicity).collect();
    Ok((err, mults == exact_multiplicities(exact)))
}

/// Torus(16) eigenvalues are `j² + k²` over `j, k ∈ (-8, 8]`; antiperiodic
/// Dirac(64) eigenvalues are `m + 1/2`, `m ∈ [-32, 31]`, each twice.
fn exact_spectra(s: &VerifySettings) -> Result<Outcome> {
    let start = Instant::now();
    let t = torus(16)?;
    let mut exact_t: Vec<f64> = (-7..=8_i64).flat_map(|j| (-7..=8_i64).map(move |k| (j * j + k * k) as f64)).collect();
    exact_t.sort_by(f64::total_cmp);
    let (err_t, mult_t) = compare_exact(&spectrum_of(&t)?, &exact_t, s.cluster_tol)?;

    let d = dirac(64, Spin::Antiperiodic)?;
    let exact_d: Vec<f64> = (-32..=31).flat_map(|m| [m as f64 + 0.5; 2]).collect();
    let (err_d, mult_d) = compare_exact(&spectrum_of(&d)?, &exact_d, s.cluster_tol)?;
    let secs = start.elapsed().as_secs_f64();

    let pass = err_t <= 1e-10 && err_d <= 1e-10 && mult_t && mult_d && secs < 5.0;
    outcome(
        pass,
        format!(
            "torus max err {err_t:.1e}, multiplicities {}; Dirac max err {err_d:.1e}, multiplicities {}",
            ok(mult_t),
            ok(mult_d)
        ),
    )
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "WRONG"
    }
}

/// `A_f(ε) = E P E` against `P u = λ e^{εf} u` solved directly.
fn isospectrality() -> Result<Outcome> {
    let t = torus(16)?;
    let fam = family(&t, &cos(2, 0))?;
    let eps = 0.1;
    let w = t.weights();
    let conj = solve_symmetric(&fam.family_matrix(eps), &w)?;
    let mass: Vec<f64> = fam.lifted_factor().iter().map(|f| (eps * f).exp()).collect();
    let direct = solve_generalized(&t.background, &mass, &w)?;
    let err = conj
        .eigenvalues
        .iter()
        .zip(&direct.eigenvalues)
        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs() / a.abs().max(1.0)));
    outcome(err <= 1e-10, format!("max relative difference {err:.1e} over {} eigenvalues", conj.len()))
}

/// Modified Bessel function `I₀` by its power series.
pub fn bessel_i0(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / (k as f64 * k as f64);
        sum += term;
        if term < 1e-18 * sum {
            break;
        }
    }
    sum
}

/// Circle(256), `f = cos θ`, `ε = 0.4`: the deformed circle has length
/// `L = ∫ e^{0.2 cos θ} dθ = 2π I₀(0.2)` and spectrum `(2π/L)(ℤ + 1/2)`.
fn dirac_oracle(s: &VerifySettings) -> Result<Outcome> {
    let d = dirac(256, Spin::Antiperiodic)?;
    let fam = family(&d, &cos(1, 0))?;
    let eps = 0.4;
    let length = 2.0 * PI * bessel_i0(0.5 * eps);
    let quad = d.exact_oracle.expect("Dirac carries its oracle").length(&d.domain, &fam.factor, eps);
    let unit = 2.0 * PI / length;
    let bound = 20.0 * unit;
    let exact: Vec<f64> = (-20..20).flat_map(|k| [unit * (k as f64 + 0.5); 2]).collect();

    let sp = solve_symmetric(&fam.family_matrix(eps), &fam.weights())?.with_rank(2);
    let low: Vec<f64> = sp.eigenvalues.iter().copied().filter(|v| v.abs() < bound).collect();
    if low.len() != exact.len() {
        return outcome(false, format!("{} eigenvalues below mode 20, expected {}", low.len(), exact.len()));
    }
    let rel = low.iter().zip(&exact).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs() / b.abs()));
    let doubled = cluster(&sp, s.cluster_tol)?.iter().filter(|c| c.value.abs() < bound).all(|c| c.multiplicity == 2);
    let lowest = low.iter().copied().filter(|v| *v > 0.0).fold(f64::INFINITY, f64::min);
    outcome(
        rel <= 1e-8 && doubled && (quad - length).abs() <= 1e-12 * length,
        format!(
            "max relative error {rel:.1e} over {} eigenvalues, multiplicity 2 {}; lowest {lowest:.10} vs {:.10}; L by series vs nodes differ {:.1e}",
            low.len(),
            ok(doubled),
            0.5 * unit,
            (quad - length).abs()
        ),
    )
}

/// Slopes of the torus λ = 1 cluster under `cos 2x`: the first-order matrix
/// against the analytic basis `{cos x, sin x, cos y, sin y}/(√2 π)` integrated
/// on an independent 64×64 grid, and against central differences.
fn first_order_slopes() -> Result<Outcome> {
    let t = torus(16)?;
    let spec = cos(2, 0);
    let fam = family(&t, &spec)?;
    let sp = spectrum_of(&t)?;
    let cl = cluster(&sp, 1e-8)?;
    let one = cl.iter().find(|c| (c.value - 1.0).abs() < 1e-6).ok_or(Error::Config("no λ = 1 cluster".into()))?;
    let m = first_order_matrix(one, &fam.factor, &t)?;

    let oracle = analytic_slopes(t.eta())?;
    let expected = [-0.5, 0.0, 0.0, 0.5];
    let err_oracle = m.predicted_slopes.iter().zip(&oracle).fold(0.0_f64, |a, (p, q)| a.max((p - q).abs()));
    let err_closed = oracle.iter().zip(&expected).fold(0.0_f64, |a, (p, q)| a.max((p - q).abs()));

    let h = 1e-3;
    let grid = [-h, -h / 2.0, 0.0, h / 2.0, h];
    let branches = track_branches(&fam, &grid, (0.5, 1.5), &TrackOptions::default())?;
    let fd = |step: f64| -> Result<f64> {
        let cmp = slope_comparison(&branches, step).ok_or(Error::GridMissingZero)?;
        Ok(cmp.iter().fold(0.0_f64, |a, c| a.max(c.max_error)))
    };
    let (e1, e2) = (fd(h)?, fd(h / 2.0)?);
    let pass = err_oracle <= 1e-10 && err_closed <= 1e-12 && e1 <= 1e-4 && e2 <= 0.5 * e1;
    outcome(
        pass,
        format!(
            "slopes {:?}; vs quadrature {err_oracle:.1e}; central difference error {e1:.2e} (h=1e-3), {e2:.2e} (h=5e-4), ratio {:.3}",
            m.predicted_slopes.iter().map(|v| (v * 1e12).round() / 1e12).collect::<Vec<_>>(),
            e2 / e1
        ),
    )
}

fn analytic_slopes(eta: f64) -> Result<Vec<f64>> {
    let n = 64;
    let h = 2.0 * PI / n as f64;
    let norm = 1.0 / (2.0f64.sqrt() * PI);
    let basis: [fn(f64, f64) -> f64; 4] = [|x, _| x.cos(), |x, _| x.sin(), |_, y| y.cos(), |_, y| y.sin()];
    let mut m = Matrix::zeros(4);
    for i in 0..4 {
        for j in 0..4 {
            let mut s = 0.0;
            for a in 0..n {
                for b in 0..n {
                    let (x, y) = (a as f64 * h, b as f64 * h);
                    s += (2.0 * x).cos() * basis[i](x, y) * basis[j](x, y);
                }
            }
            m[(i, j)] = 2.0 * eta * s * h * h * norm * norm;
        }
    }
    Ok(solve_symmetric_jacobi(&m, &[1.0; 4])?.eigenvalues)
}

/// Every tracked branch of the torus, the Dirac operator and the squared
/// torus Laplacian stays inside `|λ|(e^{2|η|‖f‖∞|ε|} - 1) + 1e-8`.
/// Name, operator, factor and tracking window of one growth-bound sweep.
type GrowthCase = (&'static str, Arc<CovariantOperator>, FactorSpec, (f64, f64));

fn growth_bound() -> Result<(Outcome, Vec<BranchSet>)> {
    let grid = default_eps_grid();
    let sq = {
        let base = torus(12)?;
        Arc::new(synthetic_power(&base, 2, Bidegree::new(0.0, 4.0)?)?)
    };
    let cases: [GrowthCase; 3] = [
        ("torus16_cos2x", torus(16)?, cos(2, 0), (0.5, 4.5)),
        ("dirac64_cos", dirac(64, Spin::Antiperiodic)?, cos(1, 0), (-3.0, 3.0)),
        ("torus12_squared_cos2x", sq, cos(2, 0), (0.5, 20.0)),
    ];
    let mut sets = Vec::new();
    let mut worst = f64::NEG_INFINITY;
    let mut count = 0;
    let mut parts = Vec::new();
    for (name, op, spec, window) in cases {
        let fam = family(&op, &spec)?;
        let branches = track_branches(&fam, &grid, window, &TrackOptions::default())?;
        let s = fam.factor.sup_norm();
        let mut case_worst = f64::NEG_INFINITY;
        for b in &branches {
            let l0 = b.value_at_zero();
            for (&e, &v) in b.eps_grid.iter().zip(&b.values) {
                case_worst = case_worst.max((v - l0).abs() - growth_envelope(l0, op.eta(), s, e) - 1e-8);
            }
        }
        count += branches.len();
        worst = worst.max(case_worst);
        parts.push(format!("{name}: {} branches", branches.len()));
        sets.push(BranchSet { name: name.to_string(), branches });
    }
    let o = Outcome {
        pass: worst <= 0.0 && count > 0,
        detail: format!("{}; worst excess over envelope {worst:.2e}", parts.join(", ")),
    };
    Ok((o, sets))
}

fn kernel_invariance(s: &VerifySettings) -> Result<Outcome> {
    let grid = default_eps_grid();
    let cases: [(&str, Arc<CovariantOperator>, FactorSpec, usize); 4] = [
        ("torus cos2x", torus(16)?, cos(2, 0), 1),
        ("torus cos(x+y)", torus(16)?, cos(1, 1), 1),
        ("periodic Dirac cos", dirac(64, Spin::Periodic)?, cos(1, 0), 2),
        ("periodic Dirac sin2", dirac(64, Spin::Periodic)?, FactorSpec::single(Term::sin(2, 0, 1.0)), 2),
    ];
    let mut failures = Vec::new();
    let mut checked = 0;
    for (name, op, spec, expected) in cases {
        let fam = family(&op, &spec)?;
        for &eps in &grid {
            let sp = solve_symmetric(&fam.family_matrix(eps), &fam.weights())?;
            let dim = kernel_dimension(&sp, s.zero_tol * sp.scale());
            checked += 1;
            if dim != expected {
                failures.push(format!("{name} at ε={eps}: {dim}"));
            }
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("torus 1, periodic Dirac 2 at all {checked} sweep points")
        } else {
            failures.join("; ")
        },
    )
}

fn rigidity_dichotomy() -> Result<Outcome> {
    let d = dirac(64, Spin::Antiperiodic)?;
    let dsp = spectrum_of(&d)?;
    let dclusters: Vec<Eigenspace> = cluster(&dsp, 1e-8)?.into_iter().filter(|c| c.value.abs() < 5.0).collect();
    let candidates = default_candidates(DomainKind::Circle, 64, 4);
    let mut max_score = 0.0_f64;
    let mut max_defect = 0.0_f64;
    for c in &dclusters {
        max_score = max_score.max(rigidity_score(c).score);
        for spec in &candidates {
            let f = make_factor(&d.domain, spec)?;
            max_defect = max_defect.max(first_order_matrix(c, &f, &d)?.identity_defect());
        }
    }

    let t = torus(16)?;
    let tsp = spectrum_of(&t)?;
    let tcl = cluster(&tsp, 1e-8)?;
    let one = tcl.iter().find(|c| (c.value - 1.0).abs() < 1e-6).ok_or(Error::Config("no λ = 1 cluster".into()))?;
    let score = rigidity_score(one).score;
    let spread = match find_splitting_factor(one, &t, &default_candidates(DomainKind::Torus2, 16, 4), 1e-9)? {
        SplitOutcome::Split { first_order, .. } => first_order.spread(),
        _ => 0.0,
    };
    let pass = !dclusters.is_empty() && max_score <= 1e-10 && max_defect <= 1e-10 && score >= 0.01 && spread >= 0.99;
    outcome(
        pass,
        format!(
            "Dirac: {} clusters, max score {max_score:.1e}, max identity defect {max_defect:.1e}; torus λ=1: score {score:.4}, best spread {spread:.6}",
            dclusters.len()
        ),
    )
}

fn genericity() -> Result<(Outcome, SplitPlan)> {
    let start = Instant::now();
    let t = torus(24)?;
    let (alpha, gamma) = (4.5, 1e-3);
    let plan = genericity_loop(&t, alpha, gamma, &LoopOptions::default())?;
    let secs_loop = start.elapsed().as_secs_f64();

    // Independent re-check from the replayed plan and every prefix of it.
    let window_of = |sp: &Spectrum| -> Vec<f64> {
        sp.eigenvalues.iter().copied().filter(|v| v.abs() <= alpha && v.abs() > 1e-9 * sp.scale()).collect()
    };
    let simple_indices = |sp: &Spectrum| -> Result<Vec<usize>> {
        let zero = 1e-9 * sp.scale();
        Ok(cluster(sp, gamma)?
            .iter()
            .filter(|c| c.multiplicity == 1 && c.value.abs() <= alpha && c.value.abs() > zero)
            .map(|c| c.indices.start)
            .collect())
    };
    let mut prev = simple_indices(&spectrum_of(&t)?)?;
    let mut never_remerged = true;
    let mut kernel_ok = true;
    let mut final_window = Vec::new();
    for k in 1..=plan.steps.len() {
        let prefix = SplitPlan { steps: plan.steps[..k].to_vec(), ..plan.clone() };
        let (_, sp) = replay_plan(&t, &prefix)?;
        let now = simple_indices(&sp)?;
        never_remerged &= prev.iter().all(|i| now.contains(i));
        kernel_ok &= kernel_dimension(&sp, 1e-9 * sp.scale()) == 1;
        prev = now;
        final_window = window_of(&sp);
    }
    let min_gap = final_window
        .windows(2)
        .map(|p| (p[1] - p[0]) / p[0].abs().max(p[1].abs()).max(1.0))
        .fold(f64::INFINITY, f64::min);
    let secs = start.elapsed().as_secs_f64();
    let pass = plan.complete
        && !plan.steps.is_empty()
        && plan.steps.len() <= 10
        && final_window.len() == 12
        && min_gap >= gamma
        && kernel_ok
        && never_remerged
        && final_window == plan.final_spectrum.window_eigenvalues
        && secs < 60.0;
    let o = Outcome {
        pass,
        detail: format!(
            "{} step(s), {} simple window eigenvalues, min relative gap {min_gap:.2e}, kernel {}, re-merge {}, loop {secs_loop:.2} s",
            plan.steps.len(),
            final_window.len(),
            ok(kernel_ok),
            if never_remerged { "none" } else { "DETECTED" }
        ),
    };
    Ok((o, plan))
}

fn window_counts() -> Result<Outcome> {
    let t = torus(16)?;
    let w = SpectralWindow::new(0.5, 4.5, 0.1)?;
    let small: Vec<f64> = (-10..=10).map(|i| i as f64 * 0.005).collect();
    let r = window_stability(&family(&t, &cos(2, 0))?, &w, &small)?;
    let all12 = r.points.iter().all(|p| p.count == 12);

    let coarse: Vec<f64> = (0..=60).map(|i| i as f64 * 0.005).collect();
    let wc = SpectralWindow::new(0.5, 4.5, 1e-3)?;
    let rc = window_stability(&family(&t, &FactorSpec::constant(1.0))?, &wc, &coarse)?;
    let exact = (5.0f64 / 4.5).ln();
    let hit = rc.crossings.first().filter(|c| c.eps_from < exact && exact <= c.eps_to);
    let pass = r.pass && all12 && rc.pass && hit.is_some() && rc.certified_radius < exact;
    outcome(
        pass,
        format!(
            "cos2x: count 12 at all {} points {}; f≡1: certified |ε| ≤ {:.4}, first crossing {}, predicted {exact:.5}",
            small.len(),
            ok(all12),
            rc.certified_radius,
            rc.crossings.first().map_or("none".to_string(), |c| format!("in ({:.3}, {:.3}]", c.eps_from, c.eps_to))
        ),
    )
}

fn continuity() -> Result<Outcome> {
    let t = torus(16)?;
    let grid = default_eps_grid();
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, spec) in [("cos2x", cos(2, 0)), ("f≡1", FactorSpec::constant(1.0))] {
        let r = continuity_check(&family(&t, &spec)?, 0.5, 12, &grid, 1e-3)?;
        let margin = r.rows.iter().fold(f64::NEG_INFINITY, |m, row| m.max(row.envelope_margin));
        pass &= r.pass && r.rows.len() == 12;
        parts.push(format!("{name}: worst excess {margin:.2e}"));
    }
    outcome(pass, format!("c = 0.5, i ≤ 12; {}", parts.join(", ")))
}

/// Coefficients `c₀..c_n` (ascending powers) of `det(x I - A)`, by the
/// Faddeev–LeVerrier recursion.
pub fn characteristic_polynomial(a: &Matrix) -> Vec<f64> {
    let n = a.dim();
    let mut coeffs = vec![0.0; n + 1];
    coeffs[n] = 1.0;
    let mut m = Matrix::zeros(n);
    for k in 1..=n {
        // M_k = A M_{k-1} + c_{n-k+1} I,  c_{n-k} = -tr(A M_k) / k
        let mut next = a.matmul(&m);
        for i in 0..n {
            next[(i, i)] += coeffs[n - k + 1];
        }
        m = next;
        let am = a.matmul(&m);
        let tr: f64 = (0..n).map(|i| am[(i, i)]).sum();
        coeffs[n - k] = -tr / k as f64;
    }
    coeffs
}

fn horner(c: &[f64], x: f64) -> (f64, f64) {
    let mut p = 0.0;
    let mut dp = 0.0;
    for &ck in c.iter().rev() {
        dp = dp * x + p;
        p = p * x + ck;
    }
    (p, dp)
}

/// Real roots, ascending, of a polynomial known to have only real roots.
/// Newton from above the largest root converges monotonically; each root is
/// deflated and finally polished against the original polynomial.
pub fn real_roots(coeffs: &[f64]) -> Vec<f64> {
    let n = coeffs.len() - 1;
    let lead = coeffs[n];
    let mut c: Vec<f64> = coeffs.iter().map(|v| v / lead).collect();
    let mut roots = Vec::with_capacity(n);
    for _ in 0..n {
        let deg = c.len() - 1;
        let bound = 1.0 + c[..deg].iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let mut x = bound;
        for _ in 0..10_000 {
            let (p, dp) = horner(&c, x);
            if dp == 0.0 {
                break;
            }
            let step = p / dp;
            x -= step;
            if step.abs() <= 1e-15 * x.abs().max(1.0) {
                break;
            }
        }
        roots.push(x);
        // synthetic division by (t - x)
        let mut q = vec![0.0; deg];
        let mut carry = 0.0;
        for k in (0..deg).rev() {
            carry = c[k + 1] + carry * x;
            q[k] = carry;
        }
        c = q;
    }
    for r in roots.iter_mut() {
        for _ in 0..5 {
            let (p, dp) = horner(coeffs, *r);
            if dp == 0.0 {
                break;
            }
            *r -= p / dp;
        }
    }
    roots.sort_by(f64::total_cmp);
    roots
}

fn eigensolver_oracle(seed: u64) -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 6;
    let mut max_err = 0.0_f64;
    let mut max_res = 0.0_f64;
    for _ in 0..50 {
        let b: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let a = Matrix::from_fn(n, |i, j| 0.5 * (b[i * n + j] + b[j * n + i]));
        let sp = solve_symmetric(&a, &[1.0; 6])?;
        let roots = real_roots(&characteristic_polynomial(&a));
        for (x, y) in sp.eigenvalues.iter().zip(&roots) {
            max_err = max_err.max((x - y).abs());
        }
        for (lambda, v) in sp.eigenvalues.iter().zip(&sp.eigenvectors) {
            let av = a.matvec(v);
            let r = av.iter().zip(v).fold(0.0_f64, |m, (p, q)| m.max((p - lambda * q).abs()));
            max_res = max_res.max(r);
        }
    }
    outcome(
        max_err <= 1e-9 && max_res <= 1e-8,
        format!("50 matrices: max |λ - root| {max_err:.1e}, max residual {max_res:.1e}"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bessel_series() {
        assert_eq!(bessel_i0(0.0), 1.0);
        // I0(1) = 1.2660658777520082
        assert!((bessel_i0(1.0) - 1.2660658777520082).abs() < 1e-15);
    }

    #[test]
    fn polynomial_roots() {
        let a = Matrix::from_diag(&[3.0, -1.0, 2.0]);
        let c = characteristic_polynomial(&a);
        // (x-3)(x+1)(x-2) = x^3 - 4x^2 + x + 6
        for (x, y) in c.iter().zip([6.0, 1.0, -4.0, 1.0]) {
            assert!((x - y).abs() < 1e-12);
        }
        let r = real_roots(&c);
        for (x, y) in r.iter().zip([-1.0, 2.0, 3.0]) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn criterion_line_format() {
        let c = Criterion { id: 3, title: "x", pass: false, detail: "d".into(), seconds: 0.5 };
        assert_eq!(c.line(), "[FAIL]  3 x (0.50 s): d");
    }
}
