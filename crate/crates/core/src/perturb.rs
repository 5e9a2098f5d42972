//! First-order splitting predictions, ε-continuation of eigenvalue branches
//! and the exponential growth envelope.

use rayon::prelude::*;
use serde::Serialize;

use crate::domains::ConformalFactor;
use crate::eigensolve::{cluster, solve_symmetric, Eigenspace, Spectrum, DEFAULT_CLUSTER_TOL};
use crate::error::{Error, Result};
use crate::linalg::{wdot, Matrix};
use crate::operators::{ConjugatedFamily, CovariantOperator};

/// `{0, ±1e-3, ±1e-2, ±0.05, ±0.1, ±0.2, ±0.35, ±0.5}`, ascending.
pub fn default_eps_grid() -> Vec<f64> {
    let pos = [1e-3, 1e-2, 0.05, 0.1, 0.2, 0.35, 0.5];
    let mut g: Vec<f64> = pos.iter().rev().map(|x| -x).collect();
    g.push(0.0);
    g.extend_from_slice(&pos);
    g
}

/// The projected perturbation `Π A_f^(1)|_{V_λ}` on an orthonormal basis of
/// `V_λ`: entries `2ηλ <f u_i, u_j>`. Its eigenvalues are the slopes of the
/// analytic branches leaving `λ`.
#[derive(Debug, Clone, Serialize)]
pub struct FirstOrderMatrix {
    pub value: f64,
    pub eta: f64,
    pub factor: String,
    pub entries: Matrix,
    /// Ascending.
    pub predicted_slopes: Vec<f64>,
    /// Eigenvectors of `entries` in basis coordinates, matching
    /// `predicted_slopes`.
    #[serde(skip)]
    pub directions: Vec<Vec<f64>>,
}

impl FirstOrderMatrix {
    pub fn spread(&self) -> f64 {
        match (self.predicted_slopes.first(), self.predicted_slopes.last()) {
            (Some(lo), Some(hi)) => hi - lo,
            _ => 0.0,
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.entries.dim()).map(|i| self.entries[(i, i)]).sum()
    }

    /// Distance to the nearest multiple of the identity (max entry norm).
    pub fn identity_defect(&self) -> f64 {
        let l = self.entries.dim();
        let mean = self.trace() / l as f64;
        self.entries.max_abs_diff(&Matrix::identity(l).scaled(mean))
    }
}

/// Threshold below which an eigenspace value is treated as the kernel.
pub fn zero_value_tol(operator: &CovariantOperator) -> f64 {
    1e-9 * operator.background.max_abs().max(1.0)
}

pub fn first_order_matrix(
    space: &Eigenspace,
    factor: &ConformalFactor,
    operator: &CovariantOperator,
) -> Result<FirstOrderMatrix> {
    if space.value.abs() <= zero_value_tol(operator) {
        return Err(Error::ZeroEigenvalue(space.value));
    }
    let lifted = factor.lifted(space.rank);
    if lifted.len() != space.weights.len() {
        return Err(Error::Mismatch);
    }
    let eta = operator.eta();
    let entries = space.observable_matrix(&lifted).scaled(2.0 * eta * space.value);
    let l = space.multiplicity;
    let diag = solve_symmetric(&entries, &vec![1.0; l])?;
    Ok(FirstOrderMatrix {
        value: space.value,
        eta,
        factor: factor.description().to_string(),
        entries,
        predicted_slopes: diag.eigenvalues,
        directions: diag.eigenvectors,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct TrackOptions {
    pub cluster_tol: f64,
    /// Continuation substeps never exceed this ε increment.
    pub max_internal_step: f64,
    pub quality_floor: f64,
    pub include_kernel: bool,
}

impl Default for TrackOptions {
    fn default() -> Self {
        Self { cluster_tol: DEFAULT_CLUSTER_TOL, max_internal_step: 0.05, quality_floor: 0.7, include_kernel: false }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Branch {
    pub id: usize,
    pub eps_grid: Vec<f64>,
    pub values: Vec<f64>,
    #[serde(skip)]
    pub vectors: Vec<Vec<f64>>,
    /// Overlap with the previous grid point's vector (minimum over internal
    /// substeps); 1 at ε = 0.
    pub overlap_quality: Vec<f64>,
    /// Index of the originating cluster among the ε = 0 clusters.
    pub origin: usize,
    pub origin_value: f64,
    pub predicted_slope: f64,
    pub uncertain: bool,
}

impl Branch {
    pub fn value_at(&self, eps: f64) -> Option<f64> {
        self.eps_grid.iter().position(|&e| e == eps).map(|i| self.values[i])
    }

    fn zero_index(&self) -> usize {
        self.eps_grid.iter().position(|&e| e == 0.0).expect("grid contains 0")
    }

    pub fn value_at_zero(&self) -> f64 {
        self.values[self.zero_index()]
    }
}

fn internal_points(targets: &[f64], max_step: f64) -> Vec<(f64, bool)> {
    // (eps, is_grid_point), walking outward from 0
    let mut out = Vec::new();
    let mut prev = 0.0_f64;
    for &t in targets {
        let steps = ((t - prev).abs() / max_step).ceil().max(1.0) as usize;
        for s in 1..=steps {
            let e = if s == steps { t } else { prev + (t - prev) * s as f64 / steps as f64 };
            out.push((e, s == steps));
        }
        prev = t;
    }
    out
}

/// Recorded `(ε, vector, overlap quality)` samples of one branch on one side of ε = 0.
type SideTrack = Vec<(f64, Vec<f64>, f64)>;

/// Tracks every eigenvalue (with multiplicity) in `window` at ε = 0 along
/// `eps_grid`. Degenerate clusters are seeded with the eigenvectors of their
/// first-order matrix; subsequent points are matched by weighted eigenvector
/// overlap, largest first, treating numerically degenerate target clusters as
/// subspaces.
pub fn track_branches(
    family: &ConjugatedFamily,
    eps_grid: &[f64],
    window: (f64, f64),
    opts: &TrackOptions,
) -> Result<Vec<Branch>> {
    if !eps_grid.contains(&0.0) {
        return Err(Error::GridMissingZero);
    }
    if !(window.0 < window.1) {
        return Err(Error::InvalidWindow(window.0, window.1));
    }
    let mut grid: Vec<f64> = eps_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let op = &family.operator;
    let w = family.weights();
    let zero_tol = zero_value_tol(op);

    let base = solve_symmetric(&op.background, &w)?.with_rank(op.rank);
    let clusters = cluster(&base, opts.cluster_tol)?;

    let mut seeds: Vec<(usize, f64, f64, Vec<f64>)> = Vec::new(); // (origin, λ0, slope, vector)
    for (cid, c) in clusters.iter().enumerate() {
        if c.value < window.0 || c.value > window.1 {
            continue;
        }
        let is_zero = c.value.abs() <= zero_tol;
        if is_zero && !opts.include_kernel {
            continue;
        }
        if is_zero {
            for (k, v) in c.basis.iter().enumerate() {
                seeds.push((cid, base.eigenvalues[c.indices.start + k], 0.0, v.clone()));
            }
            continue;
        }
        let fom = first_order_matrix(c, &family.factor, op)?;
        let mut rotated = c.clone();
        rotated.rotate(&fom.directions);
        for (k, v) in rotated.basis.into_iter().enumerate() {
            seeds.push((cid, base.eigenvalues[c.indices.start + k], fom.predicted_slopes[k], v));
        }
    }

    let positive: Vec<f64> = grid.iter().copied().filter(|&e| e > 0.0).collect();
    let negative: Vec<f64> = grid.iter().rev().copied().filter(|&e| e < 0.0).collect();
    let walk_pos = internal_points(&positive, opts.max_internal_step);
    let walk_neg = internal_points(&negative, opts.max_internal_step);

    let solve_all = |walk: &[(f64, bool)]| -> Result<Vec<(Matrix, Spectrum)>> {
        walk.par_iter()
            .map(|&(e, _)| {
                let m = family.family_matrix(e);
                let s = solve_symmetric(&m, &w)?.with_rank(op.rank);
                Ok((m, s))
            })
            .collect()
    };
    let pos_spectra = solve_all(&walk_pos)?;
    let neg_spectra = solve_all(&walk_neg)?;

    let nb = seeds.len();
    let zero_vectors: Vec<Vec<f64>> = seeds.iter().map(|s| s.3.clone()).collect();

    // per-side results at grid points, in walk order
    let run_side = |walk: &[(f64, bool)], spectra: &[(Matrix, Spectrum)]| -> Result<Vec<SideTrack>> {
        let mut prev = zero_vectors.clone();
        let mut min_q = vec![1.0_f64; nb];
        let mut recorded = vec![Vec::new(); nb];
        for ((_, is_grid), (m, s)) in walk.iter().zip(spectra) {
            let step = match_step(&prev, m, s, opts.cluster_tol)?;
            for (b, (val, vec, q)) in step.into_iter().enumerate() {
                min_q[b] = min_q[b].min(q);
                if *is_grid {
                    recorded[b].push((val, vec.clone(), min_q[b]));
                    min_q[b] = 1.0;
                }
                prev[b] = vec;
            }
        }
        Ok(recorded)
    };
    let pos = run_side(&walk_pos, &pos_spectra)?;
    let neg = run_side(&walk_neg, &neg_spectra)?;

    let mut branches = Vec::with_capacity(nb);
    for (b, (origin, lam0, slope, v0)) in seeds.into_iter().enumerate() {
        let mut values = Vec::with_capacity(grid.len());
        let mut vectors = Vec::with_capacity(grid.len());
        let mut quality = Vec::with_capacity(grid.len());
        for (val, vec, q) in neg[b].iter().rev() {
            values.push(*val);
            vectors.push(vec.clone());
            quality.push(*q);
        }
        values.push(lam0);
        vectors.push(v0);
        quality.push(1.0);
        for (val, vec, q) in &pos[b] {
            values.push(*val);
            vectors.push(vec.clone());
            quality.push(*q);
        }
        let uncertain = quality.iter().any(|&q| q < opts.quality_floor);
        branches.push(Branch {
            id: b,
            eps_grid: grid.clone(),
            values,
            vectors,
            overlap_quality: quality,
            origin,
            origin_value: clusters[origin].value,
            predicted_slope: slope,
            uncertain,
        });
    }
    Ok(branches)
}

/// One continuation step. Returns `(value, vector, overlap)` per tracked
/// vector.
fn match_step(
    prev: &[Vec<f64>],
    matrix: &Matrix,
    spectrum: &Spectrum,
    cluster_tol: f64,
) -> Result<Vec<(f64, Vec<f64>, f64)>> {
    let w = &spectrum.weights;
    let clusters = cluster(spectrum, cluster_tol)?;
    let coeffs: Vec<Vec<f64>> = prev
        .iter()
        .map(|p| spectrum.eigenvectors.iter().map(|y| wdot(w, p, y)).collect())
        .collect();

    let mut cand: Vec<(f64, usize, usize)> = Vec::new();
    for (i, c) in coeffs.iter().enumerate() {
        for (k, cl) in clusters.iter().enumerate() {
            let q2: f64 = c[cl.indices.clone()].iter().map(|x| x * x).sum();
            if q2 > 0.0 {
                cand.push((q2.sqrt(), i, k));
            }
        }
    }
    cand.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut slots: Vec<usize> = clusters.iter().map(|c| c.multiplicity).collect();
    let mut assigned: Vec<Option<usize>> = vec![None; prev.len()];
    for (_, i, k) in cand {
        if assigned[i].is_none() && slots[k] > 0 {
            assigned[i] = Some(k);
            slots[k] -= 1;
        }
    }
    // leftovers (zero overlap everywhere) take any free slot
    for a in assigned.iter_mut() {
        if a.is_none() {
            if let Some(k) = slots.iter().position(|&s| s > 0) {
                *a = Some(k);
                slots[k] -= 1;
            }
        }
    }

    let n = w.len();
    let mut out: Vec<Option<(f64, Vec<f64>, f64)>> = vec![None; prev.len()];
    for (k, cl) in clusters.iter().enumerate() {
        let members: Vec<usize> = (0..prev.len()).filter(|&i| assigned[i] == Some(k)).collect();
        if members.is_empty() {
            continue;
        }
        let mut chosen: Vec<Vec<f64>> = Vec::new();
        for &i in &members {
            // projection onto the cluster, orthogonalized against earlier picks
            let mut v = vec![0.0; n];
            for j in cl.indices.clone() {
                let c = coeffs[i][j];
                for (x, y) in v.iter_mut().zip(&spectrum.eigenvectors[j]) {
                    *x += c * y;
                }
            }
            let mut v = orthonormalize_against(v, &chosen, w);
            if v.is_none() {
                // fall back to the first cluster vector independent of the picks
                v = cl.basis.iter().find_map(|b| orthonormalize_against(b.clone(), &chosen, w));
            }
            let mut v = v.expect("cluster has a free direction");
            let overlap = wdot(w, &prev[i], &v);
            if overlap < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            let value = if cl.multiplicity == 1 {
                spectrum.eigenvalues[cl.indices.start]
            } else {
                wdot(w, &v, &matrix.matvec(&v))
            };
            out[i] = Some((value, v.clone(), overlap.abs()));
            chosen.push(v);
        }
    }
    Ok(out.into_iter().map(|o| o.expect("every branch assigned")).collect())
}

fn orthonormalize_against(mut v: Vec<f64>, basis: &[Vec<f64>], w: &[f64]) -> Option<Vec<f64>> {
    let start = wdot(w, &v, &v).sqrt();
    for _ in 0..2 {
        for b in basis {
            let c = wdot(w, &v, b);
            for (x, y) in v.iter_mut().zip(b) {
                *x -= c * y;
            }
        }
    }
    let norm = wdot(w, &v, &v).sqrt();
    if norm <= 1e-8 * start.max(1e-300) || norm == 0.0 {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Some(v)
}

/// `|λ|(e^{2|η|‖f‖∞|ε|} - 1)`
pub fn growth_envelope(lambda: f64, eta: f64, sup_norm: f64, eps: f64) -> f64 {
    lambda.abs() * ((2.0 * eta.abs() * sup_norm * eps.abs()).exp() - 1.0)
}

#[derive(Debug, Clone, Serialize)]
pub struct GrowthEntry {
    pub eps: f64,
    pub deviation: f64,
    pub bound: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GrowthReport {
    pub branch: usize,
    pub lambda: f64,
    pub entries: Vec<GrowthEntry>,
    pub pass: bool,
}

/// Checks `|λ(ε) - λ| ≤ |λ|(e^{2|η|‖f‖∞|ε|} - 1)` on every grid point, with
/// slack `1e-8 (1 + |λ|)`.
pub fn growth_bound_check(branch: &Branch, operator: &CovariantOperator, factor: &ConformalFactor) -> GrowthReport {
    let lambda = branch.value_at_zero();
    let slack = 1e-8 * (1.0 + lambda.abs());
    let entries: Vec<GrowthEntry> = branch
        .eps_grid
        .iter()
        .zip(&branch.values)
        .map(|(&eps, &v)| {
            let deviation = (v - lambda).abs();
            let bound = growth_envelope(lambda, operator.eta(), factor.sup_norm(), eps);
            GrowthEntry { eps, deviation, bound, margin: bound + slack - deviation }
        })
        .collect();
    let pass = entries.iter().all(|e| e.margin >= 0.0);
    GrowthReport { branch: branch.id, lambda, entries, pass }
}

/// Largest `|ε|` for which the growth envelopes of `a` and `b` cannot touch.
/// Infinite when they have opposite signs (no eigenvalue crosses 0).
pub fn separation_radius(a: f64, b: f64, eta: f64, sup_norm: f64) -> f64 {
    let rate = 2.0 * eta.abs() * sup_norm;
    if a * b <= 0.0 || rate == 0.0 {
        return f64::INFINITY;
    }
    let (lo, hi) = if a.abs() < b.abs() { (a.abs(), b.abs()) } else { (b.abs(), a.abs()) };
    if lo == hi {
        return 0.0;
    }
    (hi / lo).ln() / (2.0 * rate)
}

/// Every branch from the cluster at `lower` stays below every branch from
/// `upper` wherever `|ε| <= radius`.
pub fn ordering_holds(branches: &[Branch], lower: f64, upper: f64, radius: f64, tol: f64) -> bool {
    let lo: Vec<&Branch> = branches.iter().filter(|b| (b.origin_value - lower).abs() <= tol).collect();
    let hi: Vec<&Branch> = branches.iter().filter(|b| (b.origin_value - upper).abs() <= tol).collect();
    for a in &lo {
        for b in &hi {
            for (k, &e) in a.eps_grid.iter().enumerate() {
                if e.abs() <= radius && a.values[k] >= b.values[k] {
                    return false;
                }
            }
        }
    }
    true
}

/// Eigenvalues within `zero_tol` of 0.
pub fn kernel_dimension(spectrum: &Spectrum, zero_tol: f64) -> usize {
    spectrum.eigenvalues.iter().filter(|v| v.abs() <= zero_tol).count()
}

pub fn default_zero_tol(spectrum: &Spectrum) -> f64 {
    1e-9 * spectrum.scale()
}

#[derive(Debug, Clone, Serialize)]
pub struct SlopeComparison {
    pub value: f64,
    pub step: f64,
    pub predicted: Vec<f64>,
    pub measured: Vec<f64>,
    pub max_error: f64,
}

/// Central-difference slopes `(λ(h) - λ(-h)) / 2h` of the tracked branches,
/// grouped by origin cluster and compared sorted against the first-order
/// predictions.
pub fn slope_comparison(branches: &[Branch], step: f64) -> Option<Vec<SlopeComparison>> {
    let mut origins: Vec<usize> = branches.iter().map(|b| b.origin).collect();
    origins.dedup();
    let mut out = Vec::new();
    for o in origins {
        let group: Vec<&Branch> = branches.iter().filter(|b| b.origin == o).collect();
        let mut predicted: Vec<f64> = group.iter().map(|b| b.predicted_slope).collect();
        let mut measured = Vec::new();
        for b in &group {
            let plus = b.value_at(step)?;
            let minus = b.value_at(-step)?;
            measured.push((plus - minus) / (2.0 * step));
        }
        predicted.sort_by(f64::total_cmp);
        measured.sort_by(f64::total_cmp);
        let max_error = predicted.iter().zip(&measured).fold(0.0_f64, |m, (p, q)| m.max((p - q).abs()));
        out.push(SlopeComparison { value: group[0].origin_value, step, predicted, measured, max_error });
    }
    Some(out)
}

/// Branch CSV: `eps,branch_id,value,overlap_quality`.
pub fn branches_csv(branches: &[Branch]) -> String {
    use std::fmt::Write as _;
    let mut out = String::from("eps,branch_id,value,overlap_quality\n");
    for b in branches {
        for k in 0..b.eps_grid.len() {
            writeln!(out, "{:.16e},{},{:.16e},{:.16e}", b.eps_grid[k], b.id, b.values[k], b.overlap_quality[k]).unwrap();
        }
    }
    out
}
