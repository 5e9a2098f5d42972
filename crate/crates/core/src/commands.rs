//! The six analyses behind the command-line front end. Each command reads a
//! [`RunConfig`], writes its artifacts atomically under the output directory
//! and returns a short report; the binary only parses arguments and maps the
//! status to an exit code.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

use crate::config::RunConfig;
use crate::domains::make_factor;
use crate::eigensolve::{cluster, solve_symmetric, Spectrum};
use crate::error::{Error, Result};
use crate::io::{branches_svg, fmt_f64, write_atomic, write_json};
use crate::operators::{ConjugatedFamily, CovariantOperator, OperatorDescriptor};
use crate::perturb::{
    branches_csv, growth_bound_check, kernel_dimension, slope_comparison, track_branches, GrowthReport, SlopeComparison,
    TrackOptions,
};
use crate::splitter::{
    default_candidates, find_splitting_factor, genericity_loop, replay_plan, rigidity_score, LoopOptions, SplitOutcome,
    SplitPlan,
};
use crate::verify::{run_battery, VerifySettings};
use crate::windows::{
    continuity_check, count_in_window, multiplicity_report, window_stability, ContinuityReport, SpectralWindow,
    WindowStability,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Spectrum,
    Track,
    Split,
    Rigidity,
    Windows,
    Verify,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Success,
    VerificationFailed,
    StepsExhausted,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Success => 0,
            Status::VerificationFailed => 1,
            Status::StepsExhausted => 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    pub emit_plots: bool,
}

impl RunOptions {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self { out: cfg.output_dir.clone(), emit_plots: false }
    }
}

#[derive(Debug, Clone)]
pub struct CommandReport {
    pub status: Status,
    pub files: Vec<PathBuf>,
    /// Human-readable lines for the terminal.
    pub summary: Vec<String>,
}

pub fn run(command: Command, cfg: &RunConfig, opts: &RunOptions) -> Result<CommandReport> {
    cfg.validate()?;
    let mut out = Output { dir: opts.out.clone(), files: Vec::new() };
    let (status, summary) = match command {
        Command::Spectrum => cmd_spectrum(cfg, &mut out)?,
        Command::Track => cmd_track(cfg, opts.emit_plots, &mut out)?,
        Command::Split => cmd_split(cfg, &mut out)?,
        Command::Rigidity => cmd_rigidity(cfg, &mut out)?,
        Command::Windows => cmd_windows(cfg, &mut out)?,
        Command::Verify => cmd_verify(cfg, opts.emit_plots, &mut out)?,
    };
    Ok(CommandReport { status, files: out.files, summary })
}

/// Collects the artifacts written by one command.
pub struct Output {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Output {
    fn text(&mut self, name: &str, contents: &str) -> Result<()> {
        let p = self.dir.join(name);
        write_atomic(&p, contents.as_bytes())?;
        self.files.push(p);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, body: &T) -> Result<()> {
        let p = self.dir.join(name);
        write_json(&p, body)?;
        self.files.push(p);
        Ok(())
    }
}

type Outcome = (Status, Vec<String>);

fn build(cfg: &RunConfig) -> Result<Arc<CovariantOperator>> {
    Ok(Arc::new(cfg.operator.build()?))
}

fn solve(op: &CovariantOperator) -> Result<Spectrum> {
    Ok(solve_symmetric(&op.background, &op.weights())?.with_rank(op.rank))
}

fn families(cfg: &RunConfig, op: &Arc<CovariantOperator>) -> Result<Vec<ConjugatedFamily>> {
    cfg.factors
        .iter()
        .map(|spec| ConjugatedFamily::new(op.clone(), make_factor(&op.domain, spec)?))
        .collect()
}

fn zero_tol(cfg: &RunConfig, sp: &Spectrum) -> f64 {
    cfg.tolerances.zero_tol * sp.scale()
}

#[derive(Serialize)]
struct ClusterRow {
    value: f64,
    multiplicity: usize,
    first_index: usize,
}

#[derive(Serialize)]
struct SpectrumSummary<'a> {
    operator: &'a str,
    descriptor: &'a OperatorDescriptor,
    dimension: usize,
    cluster_tol: f64,
    kernel_dimension: usize,
    clusters: Vec<ClusterRow>,
}

pub fn cmd_spectrum(cfg: &RunConfig, out: &mut Output) -> Result<Outcome> {
    let op = build(cfg)?;
    let sp = solve(&op)?;
    let tol = cfg.tolerances.cluster_tol;
    out.text("spectrum.csv", &sp.to_csv(tol)?)?;
    let clusters: Vec<ClusterRow> = cluster(&sp, tol)?
        .iter()
        .map(|c| ClusterRow { value: c.value, multiplicity: c.multiplicity, first_index: c.indices.start })
        .collect();
    let kernel = kernel_dimension(&sp, zero_tol(cfg, &sp));
    let summary = vec![format!(
        "{}: {} eigenvalues in {} clusters, kernel dimension {kernel}, lowest |λ| {}",
        op.name,
        sp.len(),
        clusters.len(),
        sp.eigenvalues.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min)
    )];
    out.json(
        "clusters.json",
        &SpectrumSummary {
            operator: &op.name,
            descriptor: &cfg.operator,
            dimension: sp.len(),
            cluster_tol: tol,
            kernel_dimension: kernel,
            clusters,
        },
    )?;
    Ok((Status::Success, summary))
}

#[derive(Serialize)]
struct SlopeFile<'a> {
    factor: &'a str,
    comparisons: Vec<SlopeComparison>,
}

#[derive(Serialize)]
struct GrowthFile<'a> {
    factor: &'a str,
    pass: bool,
    reports: Vec<GrowthReport>,
}

#[derive(Serialize)]
struct OracleRow {
    eps: f64,
    length: f64,
    compared: usize,
    max_relative_error: f64,
    lowest_positive: f64,
    lowest_positive_exact: f64,
}

#[derive(Serialize)]
struct OracleFile<'a> {
    factor: &'a str,
    rows: Vec<OracleRow>,
}

pub fn cmd_track(cfg: &RunConfig, emit_plots: bool, out: &mut Output) -> Result<Outcome> {
    let op = build(cfg)?;
    let grid = cfg.tracking_grid();
    let opts = TrackOptions { cluster_tol: cfg.tolerances.cluster_tol, ..TrackOptions::default() };
    let mut summary = Vec::new();
    for (k, fam) in families(cfg, &op)?.iter().enumerate() {
        let name = fam.factor.description().to_string();
        let branches = track_branches(fam, &grid, (cfg.window.lo, cfg.window.hi), &opts)?;
        out.text(&format!("branches_{k}.csv"), &branches_csv(&branches))?;

        let comparisons = slope_comparison(&branches, cfg.slope_step).unwrap_or_default();
        let worst_slope = comparisons.iter().fold(0.0_f64, |m, c| m.max(c.max_error));
        out.json(&format!("slopes_{k}.json"), &SlopeFile { factor: &name, comparisons })?;

        let reports: Vec<GrowthReport> = branches.iter().map(|b| growth_bound_check(b, &op, &fam.factor)).collect();
        let growth_ok = reports.iter().all(|r| r.pass);
        out.json(&format!("growth_{k}.json"), &GrowthFile { factor: &name, pass: growth_ok, reports })?;

        if let Some(oracle) = op.exact_oracle {
            let rows = grid
                .iter()
                .map(|&eps| {
                    let length = oracle.length(&op.domain, &fam.factor, eps);
                    let sp = solve_symmetric(&fam.family_matrix(eps), &fam.weights())?;
                    let bound = 0.5 * sp.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                    let exact = oracle.deformed_spectrum(length, bound);
                    let computed: Vec<f64> = sp.eigenvalues.iter().copied().filter(|v| v.abs() <= bound).collect();
                    let compared = computed.len().min(exact.len());
                    let max_relative_error = computed
                        .iter()
                        .zip(&exact)
                        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs() / b.abs().max(1e-300)));
                    let pos = |v: &[f64]| v.iter().copied().filter(|x| *x > 0.0).fold(f64::INFINITY, f64::min);
                    Ok(OracleRow {
                        eps,
                        length,
                        compared,
                        max_relative_error,
                        lowest_positive: pos(&computed),
                        lowest_positive_exact: pos(&exact),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            out.json(&format!("oracle_{k}.json"), &OracleFile { factor: &name, rows })?;
        }
        if emit_plots {
            out.text(&format!("branches_{k}.svg"), &branches_svg(&branches, &format!("{} under {name}", op.name)))?;
        }
        let uncertain = branches.iter().filter(|b| b.uncertain).count();
        summary.push(format!(
            "{name}: {} branches ({uncertain} uncertain), growth bound {}, max slope error {worst_slope:.2e} at step {}",
            branches.len(),
            if growth_ok { "holds" } else { "VIOLATED" },
            cfg.slope_step
        ));
    }
    Ok((Status::Success, summary))
}

fn final_spectrum_csv(sp: &Spectrum, cluster_tol: f64) -> Result<String> {
    sp.to_csv(cluster_tol)
}

pub fn cmd_split(cfg: &RunConfig, out: &mut Output) -> Result<Outcome> {
    let op = build(cfg)?;
    let gamma = cfg.tolerances.gamma;
    if let Some(path) = &cfg.replay_plan {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read plan {}: {e}", path.display())))?;
        let plan: SplitPlan = serde_json::from_str(&text).map_err(|e| Error::Config(format!("bad plan: {e}")))?;
        let (_, sp) = replay_plan(&op, &plan)?;
        out.text("final_spectrum.csv", &final_spectrum_csv(&sp, gamma)?)?;
        let zero = zero_tol(cfg, &sp);
        let window: Vec<f64> =
            sp.eigenvalues.iter().copied().filter(|v| v.abs() <= plan.alpha && v.abs() > zero).collect();
        let identical = window == plan.final_spectrum.window_eigenvalues;
        return Ok((
            Status::Success,
            vec![format!(
                "replayed {} step(s); window spectrum {} the recorded one",
                plan.steps.len(),
                if identical { "reproduces" } else { "DIFFERS FROM" }
            )],
        ));
    }

    let opts = LoopOptions { max_steps: cfg.max_steps, spread_tol: cfg.tolerances.spread_tol, ..LoopOptions::default() };
    let plan = genericity_loop(&op, cfg.alpha, gamma, &opts)?;
    let plan_json = serde_json::to_string_pretty(&plan)? + "\n";
    out.text("plan.json", &plan_json)?;
    let (_, sp) = replay_plan(&op, &plan)?;
    out.text("final_spectrum.csv", &final_spectrum_csv(&sp, gamma)?)?;

    let mut log = String::new();
    for (i, s) in plan.steps.iter().enumerate() {
        log.push_str(&format!(
            "step {}: target {} (multiplicity {}), factor {}, epsilon {} of budget {}, degeneracy {} -> {}\n",
            i + 1,
            fmt_f64(s.target_value),
            s.target_multiplicity,
            s.factor.description(),
            fmt_f64(s.epsilon),
            fmt_f64(s.budget),
            s.degeneracy_before,
            s.degeneracy_after
        ));
    }
    for v in &plan.verdicts {
        log.push_str(&format!("irreducible: {} (multiplicity {}): {}\n", fmt_f64(v.value), v.multiplicity, v.verdict));
    }
    log.push_str(&format!(
        "final: {} window eigenvalues, degeneracy {}, kernel dimension {}, complete {}, exhausted {}\n",
        plan.final_spectrum.window_eigenvalues.len(),
        plan.final_spectrum.degeneracy,
        plan.final_spectrum.kernel_dimension,
        plan.complete,
        plan.exhausted
    ));
    out.text("steps.log", &log)?;

    let summary = vec![format!(
        "{} step(s); {} window eigenvalues; remaining degeneracy {}; {} irreducible cluster(s){}",
        plan.steps.len(),
        plan.final_spectrum.window_eigenvalues.len(),
        plan.final_spectrum.degeneracy,
        plan.verdicts.len(),
        if plan.exhausted { "; step limit reached" } else { "" }
    )];
    let status = if plan.exhausted { Status::StepsExhausted } else { Status::Success };
    Ok((status, summary))
}

#[derive(Serialize)]
struct RigidityRow {
    value: f64,
    multiplicity: usize,
    score: f64,
    normalized_score: f64,
    verdict: crate::splitter::RigidityVerdict,
    best_factor: Option<String>,
    best_spread: f64,
}

#[derive(Serialize)]
struct RigidityFile {
    window: [f64; 2],
    clusters: Vec<RigidityRow>,
}

pub fn cmd_rigidity(cfg: &RunConfig, out: &mut Output) -> Result<Outcome> {
    let op = build(cfg)?;
    let sp = solve(&op)?;
    let zero = zero_tol(cfg, &sp);
    let candidates = default_candidates(op.domain.kind(), op.domain.resolution(), 4);
    let mut rows = Vec::new();
    for c in cluster(&sp, cfg.tolerances.cluster_tol)? {
        if c.multiplicity < 2 || c.value.abs() <= zero || c.value < cfg.window.lo || c.value > cfg.window.hi {
            continue;
        }
        let report = rigidity_score(&c);
        let tol = cfg.tolerances.spread_tol * c.value.abs();
        let (best_factor, best_spread) = match find_splitting_factor(&c, &op, &candidates, tol)? {
            SplitOutcome::Split { first_order, .. } => (Some(first_order.factor.clone()), first_order.spread()),
            _ => (None, 0.0),
        };
        rows.push(RigidityRow {
            value: c.value,
            multiplicity: c.multiplicity,
            score: report.score,
            normalized_score: report.normalized_score,
            verdict: report.verdict,
            best_factor,
            best_spread,
        });
    }
    let summary = rows
        .iter()
        .map(|r| {
            format!(
                "λ = {:.6} ×{}: score {:.3e}, {:?}{}",
                r.value,
                r.multiplicity,
                r.score,
                r.verdict,
                r.best_factor.as_ref().map_or(String::new(), |f| format!(", split by {f} (spread {:.4})", r.best_spread))
            )
        })
        .collect();
    out.json("rigidity.json", &RigidityFile { window: [cfg.window.lo, cfg.window.hi], clusters: rows })?;
    Ok((Status::Success, summary))
}

#[derive(Serialize)]
struct FactorWindows {
    factor: String,
    stability: WindowStability,
    continuity: ContinuityReport,
}

#[derive(Serialize)]
struct WindowsFile {
    window: SpectralWindow,
    count: usize,
    clean: bool,
    multiplicity: crate::windows::MultiplicityReport,
    factors: Vec<FactorWindows>,
}

pub fn cmd_windows(cfg: &RunConfig, out: &mut Output) -> Result<Outcome> {
    let op = build(cfg)?;
    let sp = solve(&op)?;
    let window = SpectralWindow::new(cfg.window.lo, cfg.window.hi, cfg.guard())?;
    let count = count_in_window(&sp, &window);
    let multiplicity = multiplicity_report(&sp, &op, cfg.tolerances.cluster_tol)?;
    let mut summary = vec![format!(
        "[{}, {}]: {} eigenvalues, {}; multiplicities {} rank {}",
        window.lo,
        window.hi,
        count.count,
        if count.clean { "clean" } else { "not clean" },
        if multiplicity.all_within_rank { "within" } else { "exceed" },
        multiplicity.rank
    )];
    let mut factors = Vec::new();
    for (k, fam) in families(cfg, &op)?.iter().enumerate() {
        let stability = window_stability(fam, &window, &cfg.eps_grid)?;
        let continuity = continuity_check(
            fam,
            cfg.continuity.threshold,
            cfg.continuity.index_count,
            &cfg.eps_grid,
            cfg.guard(),
        )?;
        out.text(&format!("window_sweep_{k}.csv"), &stability.to_csv())?;
        summary.push(format!(
            "{}: count stable on certified |ε| ≤ {:.4}: {}; {} crossing(s); continuity envelope {}",
            fam.factor.description(),
            stability.certified_radius,
            stability.pass,
            stability.crossings.len(),
            if continuity.pass { "holds" } else { "VIOLATED" }
        ));
        factors.push(FactorWindows { factor: fam.factor.description().to_string(), stability, continuity });
    }
    out.json(
        "windows.json",
        &WindowsFile { window, count: count.count, clean: count.clean, multiplicity, factors },
    )?;
    Ok((Status::Success, summary))
}

pub fn cmd_verify(cfg: &RunConfig, emit_plots: bool, out: &mut Output) -> Result<Outcome> {
    let settings = VerifySettings {
        cluster_tol: cfg.tolerances.cluster_tol,
        zero_tol: cfg.tolerances.zero_tol,
        seed: cfg.seed,
    };
    let report = run_battery(&settings);
    out.json("verify.json", &report)?;
    for set in &report.branch_sets {
        out.text(&format!("branches_{}.csv", set.name), &branches_csv(&set.branches))?;
        if emit_plots {
            out.text(&format!("branches_{}.svg", set.name), &branches_svg(&set.branches, &set.name))?;
        }
    }
    let mut summary: Vec<String> = report.criteria.iter().map(|c| c.line()).collect();
    let failing: Vec<String> = report.failing().map(|c| format!("{} ({})", c.id, c.title)).collect();
    summary.push(if failing.is_empty() {
        format!("all {} criteria passed", report.criteria.len())
    } else {
        format!("failed: {}", failing.join(", "))
    });
    let status = if report.pass { Status::Success } else { Status::VerificationFailed };
    Ok((status, summary))
}

/// Writes `cfg` next to the outputs so a run can be reproduced.
pub fn write_config(cfg: &RunConfig, dir: &Path) -> Result<PathBuf> {
    let p = dir.join("config.json");
    write_atomic(&p, (cfg.to_json()? + "\n").as_bytes())?;
    Ok(p)
}
