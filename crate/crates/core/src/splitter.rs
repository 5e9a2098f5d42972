//! Rigidity detection, the search for degeneracy-breaking conformal factors,
//! and the finite-step loop that makes every nonzero eigenvalue in a window
//! simple.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domains::{make_factor, ConformalFactor, DomainKind, FactorSpec, Term};
use crate::eigensolve::{cluster, solve_symmetric, Eigenspace, Spectrum};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::operators::CovariantOperator;
use crate::perturb::{default_zero_tol, first_order_matrix, kernel_dimension, FirstOrderMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RigidityVerdict {
    Rigid,
    Splittable,
    /// Multiplicity one: nothing to split.
    TriviallySimple,
}

#[derive(Debug, Clone, Serialize)]
pub struct RigidityReport {
    pub value: f64,
    pub multiplicity: usize,
    /// `max_x ‖G(x) - tr G(x)/ℓ · I‖_F`; infinite for simple eigenvalues.
    pub score: f64,
    /// `score` divided by the mean of `tr G / ℓ`.
    pub normalized_score: f64,
    pub mean_trace: f64,
    pub threshold: f64,
    pub argmax_node: usize,
    pub verdict: RigidityVerdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gram_samples: Option<Vec<Matrix>>,
}

fn gram_at(space: &Eigenspace, nodes: usize, x: usize) -> Matrix {
    let l = space.multiplicity;
    let mut g = Matrix::zeros(l);
    for i in 0..l {
        for j in i..l {
            let v: f64 = (0..space.rank).map(|c| space.basis[i][c * nodes + x] * space.basis[j][c * nodes + x]).sum();
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// Pointwise Gram deviation from a scalar matrix. Zero exactly when every
/// unit eigensection has the same pointwise norm.
pub fn rigidity_score(space: &Eigenspace) -> RigidityReport {
    rigidity_score_with(space, 1e-6, None)
}

/// `keep_every`: store every k-th node's Gram matrix.
pub fn rigidity_score_with(space: &Eigenspace, rel_threshold: f64, keep_every: Option<usize>) -> RigidityReport {
    let l = space.multiplicity;
    let nodes = space.weights.len() / space.rank;
    let mut score = 0.0_f64;
    let mut argmax = 0;
    let mut trace_sum = 0.0;
    let mut samples = keep_every.map(|_| Vec::new());
    for x in 0..nodes {
        let g = gram_at(space, nodes, x);
        let tr: f64 = (0..l).map(|i| g[(i, i)]).sum();
        trace_sum += tr;
        let dev = g.sub(&Matrix::identity(l).scaled(tr / l as f64));
        let fro = dev.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
        if fro > score {
            score = fro;
            argmax = x;
        }
        if let (Some(s), Some(k)) = (samples.as_mut(), keep_every) {
            if x % k.max(1) == 0 {
                s.push(g);
            }
        }
    }
    let mean_trace = trace_sum / nodes as f64;
    let threshold = rel_threshold * mean_trace;
    if l < 2 {
        return RigidityReport {
            value: space.value,
            multiplicity: l,
            score: f64::INFINITY,
            normalized_score: f64::INFINITY,
            mean_trace,
            threshold,
            argmax_node: 0,
            verdict: RigidityVerdict::TriviallySimple,
            gram_samples: samples,
        };
    }
    RigidityReport {
        value: space.value,
        multiplicity: l,
        score,
        normalized_score: score / (mean_trace / l as f64),
        mean_trace,
        threshold,
        argmax_node: argmax,
        verdict: if score <= threshold { RigidityVerdict::Rigid } else { RigidityVerdict::Splittable },
        gram_samples: samples,
    }
}

/// All `cos`/`sin` modes with `|kx|, |ky| <= max_mode` (one representative of
/// each `±k` pair, no constant), ordered by `(kx, ky, cos < sin)`. Modes at or
/// above Nyquist are skipped.
pub fn default_candidates(kind: DomainKind, resolution: usize, max_mode: i64) -> Vec<FactorSpec> {
    let limit = max_mode.min(resolution as i64 / 2 - 1);
    let mut out = Vec::new();
    for kx in 0..=limit {
        let ky_range: Vec<i64> = match kind {
            DomainKind::Circle => vec![0],
            DomainKind::Torus2 if kx == 0 => (1..=limit).collect(),
            DomainKind::Torus2 => (-limit..=limit).collect(),
        };
        for ky in ky_range {
            if kx == 0 && ky == 0 {
                continue;
            }
            out.push(FactorSpec::single(Term::cos(kx, ky, 1.0)));
            out.push(FactorSpec::single(Term::sin(kx, ky, 1.0)));
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct CandidateSpread {
    pub factor: String,
    pub spread: f64,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum SplitOutcome {
    Split {
        spec: FactorSpec,
        #[serde(skip)]
        factor: ConformalFactor,
        first_order: FirstOrderMatrix,
        spreads: Vec<CandidateSpread>,
    },
    /// Rigid eigenspace: no conformal factor splits it at first order.
    Rigid { report: RigidityReport, spreads: Vec<CandidateSpread> },
    /// Not rigid, but no candidate in the set splits it at first order.
    Unsplit { report: RigidityReport, spreads: Vec<CandidateSpread>, max_identity_defect: f64 },
}

impl SplitOutcome {
    pub fn is_split(&self) -> bool {
        matches!(self, SplitOutcome::Split { .. })
    }
}

/// Picks the candidate with the largest first-order slope spread. Ties keep
/// the earlier candidate. When every spread is at most
/// `spread_tol` the eigenspace is reported as rigid or unsplit instead.
pub fn find_splitting_factor(
    space: &Eigenspace,
    operator: &CovariantOperator,
    candidates: &[FactorSpec],
    spread_tol: f64,
) -> Result<SplitOutcome> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let evaluated: Vec<(ConformalFactor, FirstOrderMatrix)> = candidates
        .par_iter()
        .map(|spec| {
            let f = make_factor(&operator.domain, spec)?;
            let m = first_order_matrix(space, &f, operator)?;
            Ok((f, m))
        })
        .collect::<Result<_>>()?;
    let spreads: Vec<CandidateSpread> = evaluated
        .iter()
        .map(|(f, m)| CandidateSpread { factor: f.description().to_string(), spread: m.spread() })
        .collect();
    let tie = 1e-12 * space.value.abs().max(1.0);
    let mut best = 0;
    for (i, (_, m)) in evaluated.iter().enumerate() {
        if m.spread() > evaluated[best].1.spread() + tie {
            best = i;
        }
    }
    if evaluated[best].1.spread() > spread_tol {
        let (factor, first_order) = evaluated.into_iter().nth(best).unwrap();
        return Ok(SplitOutcome::Split { spec: candidates[best].clone(), factor, first_order, spreads });
    }
    let report = rigidity_score(space);
    if report.verdict == RigidityVerdict::Rigid {
        Ok(SplitOutcome::Rigid { report, spreads })
    } else {
        let max_identity_defect = evaluated.iter().fold(0.0_f64, |m, (_, f)| m.max(f.identity_defect()));
        Ok(SplitOutcome::Unsplit { report, spreads, max_identity_defect })
    }
}

/// A value that must not move further than `radius` (growth-bound sense).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SafetyInterval {
    pub value: f64,
    pub radius: f64,
}

/// Largest `ε` with `|λ|(e^{2|η|‖f‖∞ε} - 1) <= d` for every constraint:
/// `min log(1 + d/|λ|) / (2|η|‖f‖∞)`. Zero values never move and impose
/// nothing.
pub fn epsilon_budget(layout: &[SafetyInterval], factor_sup_norm: f64, eta: f64) -> Result<f64> {
    let rate = 2.0 * eta.abs() * factor_sup_norm;
    let mut eps = f64::INFINITY;
    for s in layout {
        if s.value == 0.0 {
            continue;
        }
        if !(s.radius > 0.0) {
            return Err(Error::ZeroGap(s.value, s.value + s.radius));
        }
        eps = eps.min((1.0 + s.radius / s.value.abs()).ln() / rate);
    }
    Ok(eps)
}

/// A cluster as seen by [`window_layout`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayoutCluster {
    pub value: f64,
    pub multiplicity: usize,
    /// Part of the group currently being split.
    pub attacked: bool,
}

impl From<(f64, usize)> for LayoutCluster {
    fn from((value, multiplicity): (f64, usize)) -> Self {
        Self { value, multiplicity, attacked: false }
    }
}

/// Safety intervals for a window `[-α, α]`. Each nonzero cluster inside must
/// stay in the window and keep relative gap `γ` to its neighbours (including
/// the kernel and the nearest outside eigenvalues); the nearest eigenvalue
/// outside on each side must not enter the window.
///
/// Neighbours that are both degenerate, or both in the attacked group, impose
/// nothing on each other: their relative motion is what the step is for, and
/// the loop re-checks simplicity after every step.
pub fn window_layout(clusters: &[LayoutCluster], alpha: f64, gamma: f64, zero_tol: f64) -> Result<Vec<SafetyInterval>> {
    let mut cl: Vec<LayoutCluster> = clusters.to_vec();
    cl.sort_by(|a, b| a.value.total_cmp(&b.value));
    let inside = |v: f64| v.abs() <= alpha && v.abs() > zero_tol;
    let req = |a: f64, b: f64| gamma * a.abs().max(b.abs()).max(1.0);
    let mut out = Vec::new();
    for i in 0..cl.len() {
        let c = cl[i];
        let v = c.value;
        if !inside(v) {
            continue;
        }
        let mut d = alpha - v.abs();
        for nb in [i.checked_sub(1), Some(i + 1)].into_iter().flatten() {
            let Some(&n) = cl.get(nb) else { continue };
            let free = (c.multiplicity > 1 && n.multiplicity > 1) || (c.attacked && n.attacked);
            if free && inside(n.value) {
                continue;
            }
            let u = if n.value.abs() <= zero_tol { 0.0 } else { n.value };
            let half = ((v - u).abs() - req(v, u)) / 2.0;
            if !(half > 0.0) {
                return Err(Error::ZeroGap(u.min(v), u.max(v)));
            }
            d = d.min(half);
        }
        out.push(SafetyInterval { value: v, radius: d });
    }
    if let Some(c) = cl.iter().find(|c| c.value > alpha) {
        out.push(SafetyInterval { value: c.value, radius: c.value - alpha });
    }
    if let Some(c) = cl.iter().rev().find(|c| c.value < -alpha) {
        out.push(SafetyInterval { value: c.value, radius: -alpha - c.value });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub struct LoopOptions {
    pub max_steps: usize,
    pub max_mode: i64,
    /// Used once per cluster when `max_mode` candidates fail.
    pub escalated_mode: i64,
    /// Relative to `|λ|`.
    pub spread_tol: f64,
    /// Fraction of the epsilon budget actually used.
    pub safety: f64,
    /// Window clusters closer than `group_factor·γ` (relative) to the target
    /// are split together with it.
    pub group_factor: f64,
    /// Best-ranked candidates tried per target before giving up on it.
    pub attempts: usize,
    /// Maximum number of modes in a composite step factor; 1 disables
    /// composites.
    pub max_terms: usize,
    /// First-order slopes closer than `resolve_tol·|λ|` count as unresolved
    /// when building a composite factor.
    pub resolve_tol: f64,
}

impl Default for LoopOptions {
    fn default() -> Self {
        Self {
            max_steps: 10,
            max_mode: 4,
            escalated_mode: 8,
            spread_tol: 1e-9,
            safety: 0.5,
            group_factor: 10.0,
            attempts: 3,
            max_terms: 6,
            resolve_tol: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub factor: FactorSpec,
    pub epsilon: f64,
    pub target_value: f64,
    pub target_multiplicity: usize,
    pub budget: f64,
    pub degeneracy_before: usize,
    pub degeneracy_after: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterVerdict {
    pub value: f64,
    pub multiplicity: usize,
    pub verdict: String,
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub window_eigenvalues: Vec<f64>,
    pub kernel_dimension: usize,
    pub degeneracy: usize,
    pub min_relative_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub schema: u32,
    pub alpha: f64,
    pub gamma: f64,
    pub steps: Vec<PlanStep>,
    pub final_spectrum: SpectrumSummary,
    pub verdicts: Vec<ClusterVerdict>,
    /// All nonzero window eigenvalues simple.
    pub complete: bool,
    /// Stopped because `max_steps` ran out.
    pub exhausted: bool,
}

/// `Σ (multiplicity - 1)` over nonzero clusters (at relative tolerance `γ`)
/// inside `[-α, α]`.
pub fn degeneracy(clusters: &[Eigenspace], alpha: f64, zero_tol: f64) -> usize {
    window_clusters(clusters, alpha, zero_tol).map(|c| c.multiplicity - 1).sum()
}

fn window_clusters(clusters: &[Eigenspace], alpha: f64, zero_tol: f64) -> impl Iterator<Item = &Eigenspace> {
    clusters.iter().filter(move |c| c.value.abs() <= alpha && c.value.abs() > zero_tol)
}

fn summarize(sp: &Spectrum, alpha: f64, gamma: f64, zero_tol: f64) -> Result<SpectrumSummary> {
    let clusters = cluster(sp, gamma)?;
    let window: Vec<f64> = sp.eigenvalues.iter().copied().filter(|v| v.abs() <= alpha && v.abs() > zero_tol).collect();
    let min_relative_gap = window
        .windows(2)
        .map(|p| (p[1] - p[0]) / p[0].abs().max(p[1].abs()).max(1.0))
        .fold(None, |m: Option<f64>, g| Some(m.map_or(g, |m| m.min(g))));
    Ok(SpectrumSummary {
        window_eigenvalues: window,
        kernel_dimension: kernel_dimension(sp, zero_tol),
        degeneracy: degeneracy(&clusters, alpha, zero_tol),
        min_relative_gap,
    })
}

/// Node-space sum `Σ ε_i f_i` over recorded steps, accumulated in order.
pub fn accumulated_factor(operator: &CovariantOperator, steps: &[PlanStep]) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; operator.domain.len()];
    for s in steps {
        let f = make_factor(&operator.domain, &s.factor)?;
        accumulate(&mut acc, s.epsilon, &f);
    }
    Ok(acc)
}

fn accumulate(acc: &mut [f64], eps: f64, f: &ConformalFactor) {
    for (a, v) in acc.iter_mut().zip(f.values()) {
        *a += eps * v;
    }
}

fn deformed(operator: &CovariantOperator, acc: &[f64]) -> CovariantOperator {
    let exponent: Vec<f64> = acc.iter().map(|f| operator.eta() * f).collect();
    operator.rebased(&exponent, "plan")
}

/// Operator after applying every step of `plan`, i.e. `A_F(1)` for
/// `F = Σ ε_i f_i`.
pub fn replay_plan(operator: &CovariantOperator, plan: &SplitPlan) -> Result<(CovariantOperator, Spectrum)> {
    let acc = accumulated_factor(operator, &plan.steps)?;
    let op = deformed(operator, &acc);
    let sp = solve_symmetric(&op.background, &op.weights())?.with_rank(op.rank);
    Ok((op, sp))
}

pub fn genericity_loop(operator: &CovariantOperator, alpha: f64, gamma: f64, opts: &LoopOptions) -> Result<SplitPlan> {
    if !(alpha > 0.0) {
        return Err(Error::NonPositiveTolerance("alpha"));
    }
    if !(gamma > 0.0) {
        return Err(Error::NonPositiveTolerance("gamma"));
    }
    let kind = operator.domain.kind();
    let res = operator.domain.resolution();
    let base_candidates = default_candidates(kind, res, opts.max_mode);
    let wide_candidates = default_candidates(kind, res, opts.escalated_mode);
    let w = operator.weights();

    let mut acc = vec![0.0; operator.domain.len()];
    let mut current = operator.clone();
    let mut sp = solve_symmetric(&current.background, &w)?.with_rank(current.rank);
    let zero_tol = default_zero_tol(&sp);
    let kernel0 = kernel_dimension(&sp, zero_tol);

    let mut steps = Vec::new();
    // irreducible clusters keyed by their first eigenvalue index
    let mut stuck: Vec<(usize, ClusterVerdict)> = Vec::new();
    let mut exhausted = false;

    loop {
        let clusters = cluster(&sp, gamma)?;
        let before = degeneracy(&clusters, alpha, zero_tol);
        let target = attack_order(&clusters, alpha, zero_tol)
            .into_iter()
            .find(|c| !stuck.iter().any(|(i, _)| *i == c.indices.start))
            .cloned();
        let Some(target) = target else { break };
        if steps.len() >= opts.max_steps {
            exhausted = true;
            break;
        }

        let tol = opts.spread_tol * target.value.abs();
        let mut pool = &base_candidates;
        let mut outcome = find_splitting_factor(&target, &current, pool, tol)?;
        if matches!(outcome, SplitOutcome::Unsplit { .. }) && wide_candidates.len() > base_candidates.len() {
            pool = &wide_candidates;
            outcome = find_splitting_factor(&target, &current, pool, tol)?;
        }
        let ranked = match outcome {
            SplitOutcome::Split { spreads, .. } => rank_candidates(&spreads, tol, opts.attempts),
            SplitOutcome::Rigid { report, .. } => {
                stuck.push((target.indices.start, verdict_of(&target, "rigid", Some(report.score))));
                continue;
            }
            SplitOutcome::Unsplit { report, .. } => {
                stuck.push((target.indices.start, verdict_of(&target, "unsplit_at_first_order", Some(report.score))));
                continue;
            }
        };

        let state = LoopState { operator, acc: &acc, sp: &sp, clusters: &clusters, before, kernel0, zero_tol, alpha, gamma };
        let mut tries: Vec<FactorSpec> = Vec::new();
        if opts.max_terms > 1 {
            let open: Vec<&Eigenspace> = attack_order(&clusters, alpha, zero_tol)
                .into_iter()
                .filter(|c| !stuck.iter().any(|(i, _)| *i == c.indices.start))
                .collect();
            let composite = composite_factor(&current, &open, pool, ranked[0], opts)?;
            if composite.terms.len() > 1 {
                tries.push(composite);
            }
        }
        tries.extend(ranked.iter().map(|&i| pool[i].clone()));
        let mut accepted = None;
        'search: for spec in &tries {
            for grouped in [true, false] {
                let group = if grouped {
                    attack_group(&clusters, &target, alpha, gamma * opts.group_factor, zero_tol)
                } else {
                    let t = clusters.iter().position(|c| c.indices == target.indices).unwrap_or(0);
                    t..t + 1
                };
                if let Some(found) = state.try_step(&target, spec, &group, opts)? {
                    accepted = Some(found);
                    break 'search;
                }
                if group.len() == 1 {
                    break;
                }
            }
        }
        match accepted {
            Some((step, next_acc, next, next_sp)) => {
                steps.push(step);
                acc = next_acc;
                current = next;
                sp = next_sp;
            }
            None => stuck.push((target.indices.start, verdict_of(&target, "budget_too_small", None))),
        }
    }

    let summary = summarize(&sp, alpha, gamma, zero_tol)?;
    let complete = summary.degeneracy == 0;
    Ok(SplitPlan {
        schema: 1,
        alpha,
        gamma,
        steps,
        final_spectrum: summary,
        verdicts: stuck.into_iter().map(|(_, v)| v).collect(),
        complete,
        exhausted,
    })
}

/// Degenerate nonzero window clusters, largest multiplicity first, then
/// smallest `|λ|`.
fn attack_order(clusters: &[Eigenspace], alpha: f64, zero_tol: f64) -> Vec<&Eigenspace> {
    let mut v: Vec<&Eigenspace> = window_clusters(clusters, alpha, zero_tol).filter(|c| c.multiplicity > 1).collect();
    v.sort_by(|a, b| {
        b.multiplicity
            .cmp(&a.multiplicity)
            .then(a.value.abs().total_cmp(&b.value.abs()))
            .then(a.value.total_cmp(&b.value))
    });
    v
}

/// `(number of slope gaps at least need, smallest slope gap)`, compared
/// lexicographically.
fn slope_resolution(m: &Matrix, need: f64) -> Result<(usize, f64)> {
    let slopes = solve_symmetric(m, &vec![1.0; m.dim()])?.eigenvalues;
    let gaps = slopes.windows(2).map(|p| p[1] - p[0]);
    Ok((gaps.clone().filter(|g| *g >= need).count(), gaps.fold(f64::INFINITY, f64::min)))
}

fn better(a: (usize, f64), b: (usize, f64)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 > b.1 * (1.0 + 1e-6) + 1e-12)
}

/// Starts from `pool[first]` and adds candidate modes, with weights
/// `1/2, 1/3, …`, until every cluster in `open` has pairwise distinct
/// first-order slopes (gap at least `resolve_tol·|λ|`) or `max_terms` is
/// reached. Each added mode is the one that best resolves the first cluster
/// still unresolved: most resolved slope gaps, then widest smallest gap. First-order matrices are linear
/// in the factor, so this needs no eigensolves of the full operator.
pub fn composite_factor(
    operator: &CovariantOperator,
    open: &[&Eigenspace],
    pool: &[FactorSpec],
    first: usize,
    opts: &LoopOptions,
) -> Result<FactorSpec> {
    let per_cluster: Vec<Vec<Matrix>> = open
        .par_iter()
        .map(|c| {
            pool.iter()
                .map(|spec| {
                    let f = make_factor(&operator.domain, spec)?;
                    Ok(first_order_matrix(c, &f, operator)?.entries)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut spec = pool[first].clone();
    let mut current: Vec<Matrix> = per_cluster.iter().map(|m| m[first].clone()).collect();
    let mut used = vec![first];
    for (ci, c) in open.iter().enumerate() {
        let need = opts.resolve_tol * c.value.abs();
        while used.len() < opts.max_terms {
            let now = slope_resolution(&current[ci], need)?;
            if now.0 + 1 == c.multiplicity {
                break;
            }
            let w = 1.0 / (used.len() + 1) as f64;
            let mut best: Option<(usize, (usize, f64))> = None;
            for (gi, mg) in per_cluster[ci].iter().enumerate() {
                if used.contains(&gi) {
                    continue;
                }
                let r = slope_resolution(&current[ci].add(&mg.scaled(w)), need)?;
                if best.is_none_or(|(_, b)| better(r, b)) {
                    best = Some((gi, r));
                }
            }
            match best {
                Some((gi, r)) if better(r, now) => {
                    spec = spec.plus(&pool[gi].scaled(w));
                    for (k, cur) in current.iter_mut().enumerate() {
                        *cur = cur.add(&per_cluster[k][gi].scaled(w));
                    }
                    used.push(gi);
                }
                _ => break,
            }
        }
    }
    Ok(spec)
}

/// Candidate positions with spread above `tol`, best first (stable, so ties
/// keep candidate order), at most `count` of them.
fn rank_candidates(spreads: &[CandidateSpread], tol: f64, count: usize) -> Vec<usize> {
    let mut left: Vec<usize> = (0..spreads.len()).filter(|&i| spreads[i].spread > tol).collect();
    let mut out = Vec::new();
    while !left.is_empty() && out.len() < count.max(1) {
        let mut best = 0;
        for k in 1..left.len() {
            let (a, b) = (spreads[left[k]].spread, spreads[left[best]].spread);
            if a > b + 1e-12 * b.abs().max(1.0) {
                best = k;
            }
        }
        out.push(left.remove(best));
    }
    out
}

struct LoopState<'a> {
    operator: &'a CovariantOperator,
    acc: &'a [f64],
    sp: &'a Spectrum,
    clusters: &'a [Eigenspace],
    before: usize,
    kernel0: usize,
    zero_tol: f64,
    alpha: f64,
    gamma: f64,
}

type Accepted = (PlanStep, Vec<f64>, CovariantOperator, Spectrum);

impl LoopState<'_> {
    /// Applies `spec` at the safety fraction of its budget and keeps the
    /// result if the degeneracy count dropped while the kernel, window
    /// membership and every simple eigenvalue survived.
    fn try_step(&self, target: &Eigenspace, spec: &FactorSpec, group: &std::ops::Range<usize>, opts: &LoopOptions) -> Result<Option<Accepted>> {
        let (alpha, gamma, zero_tol) = (self.alpha, self.gamma, self.zero_tol);
        let factor = make_factor(&self.operator.domain, spec)?;
        let values: Vec<LayoutCluster> = self
            .clusters
            .iter()
            .enumerate()
            .map(|(i, c)| LayoutCluster { value: c.value, multiplicity: c.multiplicity, attacked: group.contains(&i) })
            .collect();
        let layout = window_layout(&values, alpha, gamma, zero_tol)?;
        let budget = epsilon_budget(&layout, factor.sup_norm(), self.operator.eta())?;
        let eps = opts.safety * budget;

        let mut next_acc = self.acc.to_vec();
        accumulate(&mut next_acc, eps, &factor);
        let next = deformed(self.operator, &next_acc);
        let next_sp = solve_symmetric(&next.background, &self.operator.weights())?.with_rank(next.rank);
        let next_clusters = cluster(&next_sp, gamma)?;
        let after = degeneracy(&next_clusters, alpha, zero_tol);

        let in_window = |s: &Spectrum| s.eigenvalues.iter().filter(|v| v.abs() <= alpha).count();
        let kernel_ok = kernel_dimension(&next_sp, zero_tol) == self.kernel0;
        let window_ok = in_window(&next_sp) == in_window(self.sp);
        let simple_after = simple_indices(&next_clusters, alpha, zero_tol);
        let simple_ok = simple_indices(self.clusters, alpha, zero_tol).iter().all(|i| simple_after.contains(i));
        if !(after < self.before && kernel_ok && window_ok && simple_ok) {
            return Ok(None);
        }
        let step = PlanStep {
            factor: spec.clone(),
            epsilon: eps,
            target_value: target.value,
            target_multiplicity: target.multiplicity,
            budget,
            degeneracy_before: self.before,
            degeneracy_after: after,
        };
        Ok(Some((step, next_acc, next, next_sp)))
    }
}

/// Positions (in `clusters`) of the target and of window clusters chained to
/// it by relative gaps below `coarse_tol`.
fn attack_group(clusters: &[Eigenspace], target: &Eigenspace, alpha: f64, coarse_tol: f64, zero_tol: f64) -> std::ops::Range<usize> {
    let t = clusters.iter().position(|c| c.indices == target.indices).expect("target comes from clusters");
    let in_window = |c: &Eigenspace| c.value.abs() <= alpha && c.value.abs() > zero_tol;
    let close = |a: &Eigenspace, b: &Eigenspace| (b.value - a.value).abs() <= coarse_tol * a.value.abs().max(b.value.abs()).max(1.0);
    let mut lo = t;
    while lo > 0 && in_window(&clusters[lo - 1]) && close(&clusters[lo - 1], &clusters[lo]) {
        lo -= 1;
    }
    let mut hi = t + 1;
    while hi < clusters.len() && in_window(&clusters[hi]) && close(&clusters[hi - 1], &clusters[hi]) {
        hi += 1;
    }
    lo..hi
}

/// Eigenvalue indices that form singleton clusters inside the window.
fn simple_indices(clusters: &[Eigenspace], alpha: f64, zero_tol: f64) -> Vec<usize> {
    window_clusters(clusters, alpha, zero_tol).filter(|c| c.multiplicity == 1).map(|c| c.indices.start).collect()
}

fn verdict_of(space: &Eigenspace, verdict: &str, score: Option<f64>) -> ClusterVerdict {
    ClusterVerdict { value: space.value, multiplicity: space.multiplicity, verdict: verdict.to_string(), score }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::make_domain;
    use crate::operators::{conformal_laplacian_torus, dirac_circle, Spin};
    use std::f64::consts::PI;

    fn clusters_of(op: &CovariantOperator) -> Vec<Eigenspace> {
        let sp = solve_symmetric(&op.background, &op.weights()).unwrap().with_rank(op.rank);
        cluster(&sp, 1e-8).unwrap()
    }

    #[test]
    fn torus_cluster_is_not_rigid() {
        let op = conformal_laplacian_torus(make_domain(DomainKind::Torus2, 16).unwrap()).unwrap();
        let c = clusters_of(&op);
        let r = rigidity_score(&c[1]);
        assert_eq!(r.verdict, RigidityVerdict::Splittable);
        // G(x) = u uᵀ with |u|² = 1/π², so ‖G - tr G/4 I‖_F = (√3/2)/π² everywhere
        assert!((r.score - 3f64.sqrt() / 2.0 / (PI * PI)).abs() < 1e-10, "{}", r.score);
        assert!(r.score >= 0.01);
    }

    #[test]
    fn dirac_cluster_is_rigid() {
        let op = dirac_circle(make_domain(DomainKind::Circle, 64).unwrap(), Spin::Antiperiodic).unwrap();
        let c = clusters_of(&op);
        let half = c.iter().find(|c| (c.value - 0.5).abs() < 1e-8).unwrap();
        let r = rigidity_score(half);
        assert_eq!(r.verdict, RigidityVerdict::Rigid);
        assert!(r.score <= 1e-10);
    }

    #[test]
    fn simple_eigenvalue_sentinel() {
        let op = conformal_laplacian_torus(make_domain(DomainKind::Torus2, 8).unwrap()).unwrap();
        let r = rigidity_score(&clusters_of(&op)[0]);
        assert_eq!(r.verdict, RigidityVerdict::TriviallySimple);
        assert!(r.score.is_infinite());
    }

    #[test]
    fn score_is_basis_independent() {
        let op = conformal_laplacian_torus(make_domain(DomainKind::Torus2, 16).unwrap()).unwrap();
        let mut c = clusters_of(&op)[2].clone();
        let s0 = rigidity_score(&c).score;
        let (a, b) = (0.3_f64, 1.1_f64);
        let rot = vec![
            vec![a.cos(), a.sin(), 0.0, 0.0],
            vec![-a.sin(), a.cos(), 0.0, 0.0],
            vec![0.0, 0.0, b.cos(), b.sin()],
            vec![0.0, 0.0, -b.sin(), b.cos()],
        ];
        c.rotate(&rot);
        assert!((rigidity_score(&c).score - s0).abs() < 1e-10);
    }

    #[test]
    fn candidates_ordering() {
        let c = default_candidates(DomainKind::Torus2, 16, 4);
        assert_eq!(c.len(), 80);
        assert_eq!(c[0], FactorSpec::single(Term::cos(0, 1, 1.0)));
        assert_eq!(c[1], FactorSpec::single(Term::sin(0, 1, 1.0)));
        let circ = default_candidates(DomainKind::Circle, 16, 4);
        assert_eq!(circ.len(), 8);
        // Nyquist clamp
        assert_eq!(default_candidates(DomainKind::Circle, 8, 4).len(), 6);
    }

    #[test]
    fn torus_split_search() {
        let op = conformal_laplacian_torus(make_domain(DomainKind::Torus2, 16).unwrap()).unwrap();
        let c = clusters_of(&op);
        let cands = default_candidates(DomainKind::Torus2, 16, 4);
        match find_splitting_factor(&c[1], &op, &cands, 1e-9).unwrap() {
            SplitOutcome::Split { spec, first_order, .. } => {
                assert!((first_order.spread() - 1.0).abs() < 1e-10);
                // cos 2y comes before cos 2x in (kx, ky) order
                assert_eq!(spec, FactorSpec::single(Term::cos(0, 2, 1.0)));
            }
            other => panic!("{other:?}"),
        }

        let odd = vec![FactorSpec::single(Term::cos(1, 0, 1.0)), FactorSpec::single(Term::sin(1, 0, 1.0))];
        match find_splitting_factor(&c[1], &op, &odd, 1e-9).unwrap() {
            SplitOutcome::Unsplit { report, max_identity_defect, .. } => {
                assert!(report.score > 0.01);
                assert!(max_identity_defect < 1e-12);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(find_splitting_factor(&c[1], &op, &[], 1e-9), Err(Error::EmptyCandidates)));
    }

    #[test]
    fn dirac_split_search_is_rigid() {
        let op = dirac_circle(make_domain(DomainKind::Circle, 64).unwrap(), Spin::Antiperiodic).unwrap();
        let c = clusters_of(&op);
        let half = c.iter().find(|c| (c.value - 0.5).abs() < 1e-8).unwrap();
        let cands = default_candidates(DomainKind::Circle, 64, 4);
        assert!(matches!(find_splitting_factor(half, &op, &cands, 1e-9).unwrap(), SplitOutcome::Rigid { .. }));
    }

    #[test]
    fn budget_closed_forms() {
        let one = [SafetyInterval { value: 1.0, radius: 0.4 }];
        assert!((epsilon_budget(&one, 1.0, -0.5).unwrap() - 1.4f64.ln()).abs() < 1e-15);
        let guard = [SafetyInterval { value: 5.0, radius: 0.5 }];
        assert!((epsilon_budget(&guard, 1.0, -0.5).unwrap() - 1.1f64.ln()).abs() < 1e-15);
        let a = epsilon_budget(&one, 1.0, -0.5).unwrap();
        let b = epsilon_budget(&one, 2.0, -0.5).unwrap();
        assert!((b - a / 2.0).abs() < 1e-15);
        assert!(epsilon_budget(&[SafetyInterval { value: 1.0, radius: 0.0 }], 1.0, -0.5).is_err());
    }

    fn layout_of(v: &[(f64, usize)]) -> Vec<LayoutCluster> {
        v.iter().map(|&c| c.into()).collect()
    }

    #[test]
    fn layout_guards_outside_neighbours() {
        let l = window_layout(&layout_of(&[(0.0, 1), (1.0, 1), (2.0, 1), (4.0, 1), (5.0, 1)]), 4.5, 1e-3, 1e-9).unwrap();
        assert_eq!(l.len(), 4);
        assert_eq!(l[3], SafetyInterval { value: 5.0, radius: 0.5 });
        // 4 is limited by the γ-gap to 5
        assert!((l[2].radius - (1.0 - 5e-3) / 2.0).abs() < 1e-12);
        // 1 is limited by its neighbour 2 (γ·max(|1|,|2|))
        assert!((l[0].radius - (1.0 - 2e-3) / 2.0).abs() < 1e-12);

        // adjacent degenerate clusters do not constrain each other
        let l = window_layout(&layout_of(&[(1.0, 2), (1.01, 2), (3.0, 1)]), 4.5, 1e-3, 1e-9).unwrap();
        assert!((l[0].radius - 3.5).abs() < 1e-12);
        assert!((l[1].radius - (3.0 - 1.01 - 3e-3) / 2.0).abs() < 1e-12);

        // so do members of the attacked group
        let mut g = layout_of(&[(1.0, 1), (1.004, 2)]);
        g[0].attacked = true;
        g[1].attacked = true;
        assert!((window_layout(&g, 4.5, 1e-3, 1e-9).unwrap()[0].radius - 3.5).abs() < 1e-12);
        assert!(window_layout(&layout_of(&[(1.0, 1), (1.0005, 2)]), 4.5, 1e-3, 1e-9).is_err());
    }

    #[test]
    fn loop_splits_torus_window() {
        let op = conformal_laplacian_torus(make_domain(DomainKind::Torus2, 16).unwrap()).unwrap();
        let plan = genericity_loop(&op, 4.5, 1e-3, &LoopOptions::default()).unwrap();
        assert!(plan.complete, "{plan:?}");
        assert!(!plan.steps.is_empty() && plan.steps.len() <= 10);
        assert_eq!(plan.final_spectrum.window_eigenvalues.len(), 12);
        assert_eq!(plan.final_spectrum.kernel_dimension, 1);
        assert!(plan.final_spectrum.min_relative_gap.unwrap() >= 1e-3);
        for s in &plan.steps {
            assert!(s.degeneracy_after < s.degeneracy_before);
            assert!(s.epsilon <= 0.5 * s.budget * (1.0 + 1e-15));
        }

        let json = serde_json::to_string(&plan).unwrap();
        let back: SplitPlan = serde_json::from_str(&json).unwrap();
        assert_eq!(back, plan);
        let (_, sp) = replay_plan(&op, &back).unwrap();
        let window: Vec<f64> = sp.eigenvalues.iter().copied().filter(|v| v.abs() <= 4.5 && v.abs() > 1e-9).collect();
        assert_eq!(window, plan.final_spectrum.window_eigenvalues);
    }

    #[test]
    fn loop_step_limit_gives_partial_plan() {
        let op = conformal_laplacian_torus(make_domain(DomainKind::Torus2, 16).unwrap()).unwrap();
        let opts = LoopOptions { max_steps: 0, ..LoopOptions::default() };
        let plan = genericity_loop(&op, 4.5, 1e-3, &opts).unwrap();
        assert!(plan.exhausted && !plan.complete);
        assert_eq!(plan.final_spectrum.degeneracy, 9);
    }

    #[test]
    fn loop_reports_rigid_dirac_clusters() {
        let op = dirac_circle(make_domain(DomainKind::Circle, 64).unwrap(), Spin::Antiperiodic).unwrap();
        let plan = genericity_loop(&op, 2.5, 1e-3, &LoopOptions::default()).unwrap();
        assert!(plan.steps.is_empty());
        assert_eq!(plan.verdicts.len(), 4);
        assert!(plan.verdicts.iter().all(|v| v.verdict == "rigid" && v.multiplicity == 2));
        assert!(!plan.complete);
    }

    #[test]
    fn loop_rejects_bad_parameters() {
        let op = conformal_laplacian_torus(make_domain(DomainKind::Torus2, 8).unwrap()).unwrap();
        assert!(genericity_loop(&op, 0.0, 1e-3, &LoopOptions::default()).is_err());
        assert!(genericity_loop(&op, 1.0, 0.0, &LoopOptions::default()).is_err());
    }

    #[test]
    fn empty_window_plan() {
        let op = conformal_laplacian_torus(make_domain(DomainKind::Torus2, 8).unwrap()).unwrap();
        let plan = genericity_loop(&op, 0.5, 1e-3, &LoopOptions::default()).unwrap();
        assert!(plan.steps.is_empty());
        assert!(plan.complete);
        assert!(plan.final_spectrum.window_eigenvalues.is_empty());
    }
}
