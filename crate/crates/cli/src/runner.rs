//! Executes a scenario: picks a pipeline, runs it, evaluates the checks and
//! writes the exports.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use diffalloc_core::layered::{layer_of, run_layered, LayeredOutcome, LayeredParams};
use diffalloc_core::mixed::{dispatch, product_allocation, MixedParams, Pipeline};
use diffalloc_core::palm::{
    balance_check, equivariance_check, null_calibration, random_boxes, reference_sample,
    report as palm_report, shifted_sample, CalibrationReport, EquivarianceReport, ExperimentReport,
    ExtraPointParams, Statistic,
};
use diffalloc_core::quantile::{QuantileOutcome, QuantileParams};
use diffalloc_core::sampling::{derive_seed, rng_from_seed};
use diffalloc_core::stable_alloc::{
    run_stable_allocation, verify_appetite, StableParams, StageDiagnostics,
};
use diffalloc_core::{Allocation, AtomMeasure, Component, Provenance, Window, MAX_DIM};
use serde::Serialize;

use crate::export;
use crate::plot;
use crate::scenario::{CheckKind, Params, PipelineChoice, Resolved, Scenario, StatisticName};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PipelineKind {
    Stable,
    Layered,
    Mixed,
    Quantile,
    Product,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    #[serde(rename = "PASS")]
    Pass,
    #[serde(rename = "FAIL")]
    Fail,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
        }
    }

    fn of(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub verdict: Verdict,
    pub value: Option<f64>,
    pub tolerance: Option<f64>,
    pub detail: String,
}

impl CheckResult {
    fn new(
        name: &str,
        ok: bool,
        value: Option<f64>,
        tolerance: Option<f64>,
        detail: String,
    ) -> Self {
        CheckResult {
            name: name.into(),
            verdict: Verdict::of(ok),
            value,
            tolerance,
            detail,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Convergence {
    pub stages: usize,
    pub tie_breaks: usize,
    pub exhausted_atoms: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MassSummary {
    pub source: f64,
    pub destination: f64,
    pub allocated: f64,
    pub unallocated: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub elapsed_ms: u128,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub pipeline: PipelineKind,
    pub status: Verdict,
    pub elements: usize,
    pub atoms: usize,
    pub convergence: Convergence,
    pub mass: MassSummary,
    pub checks: Vec<CheckResult>,
    pub warnings: Vec<String>,
    pub timing: Timing,
}

/// Output of one pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub kind: PipelineKind,
    pub allocation: Allocation,
    pub atoms: AtomMeasure,
    pub stages: Vec<StageDiagnostics>,
    pub layered: Option<LayeredOutcome>,
    pub quantile: Option<QuantileOutcome>,
    pub partition_exact: Option<bool>,
    pub diffuse_discrepancy: f64,
    pub convergence: Convergence,
    pub warnings: Vec<String>,
    /// Drawn extent of one element.
    pub cell: [f64; 2],
}

fn stable_params(p: &Params) -> StableParams {
    StableParams {
        max_stages: p.max_stages,
        tie_tolerance: p.tie_tolerance,
        check_invariants: p.check_invariants,
    }
}

fn mixed_params(p: &Params) -> MixedParams {
    MixedParams {
        layered: LayeredParams {
            n_max: p.n_max,
            stable: stable_params(p),
        },
        quantile: QuantileParams {
            phi_bits: p.phi_bits,
            stable: stable_params(p),
        },
    }
}

fn grid_cell(w: &Window, resolution: f64) -> [f64; 2] {
    let mut c = [resolution; 2];
    for (k, ck) in c.iter_mut().enumerate().take(w.dim()) {
        let n = (w.side(k) / resolution - 1e-9).ceil().max(1.0);
        *ck = w.side(k) / n;
    }
    c
}

/// The pipeline for a scenario. Automatic choice: one mass layer of atoms is
/// a plain stable allocation, several layers go through the layered
/// pipeline, anything with a diffuse part is routed by type.
pub fn choose_pipeline(s: &Scenario, r: &Resolved) -> Result<PipelineKind, CliError> {
    let disc = r.eta.discrete_part();
    let diffuse = r.eta.diffuse_part().total_mass() > 0.0;
    Ok(match s.pipeline {
        PipelineChoice::Stable => PipelineKind::Stable,
        PipelineChoice::Layered => PipelineKind::Layered,
        PipelineChoice::Mixed => PipelineKind::Mixed,
        PipelineChoice::Quantile => PipelineKind::Quantile,
        PipelineChoice::Product => PipelineKind::Product,
        PipelineChoice::Auto if diffuse && disc.is_empty() => PipelineKind::Quantile,
        PipelineChoice::Auto if diffuse => PipelineKind::Mixed,
        PipelineChoice::Auto => {
            let n_max = s.params.n_max;
            let first = disc.atoms().first().and_then(|a| layer_of(a.mass, n_max));
            let one_layer = disc
                .atoms()
                .iter()
                .all(|a| layer_of(a.mass, n_max) == first);
            if one_layer || s.params.alpha != 1.0 {
                PipelineKind::Stable
            } else {
                PipelineKind::Layered
            }
        }
    })
}

pub fn execute(kind: PipelineKind, r: &Resolved, p: &Params) -> Result<PipelineRun, CliError> {
    let w = r.window;
    let cell = grid_cell(&w, p.resolution);
    let disc = r.eta.discrete_part();
    match kind {
        PipelineKind::Stable => {
            if r.eta.diffuse_part().total_mass() > 0.0 {
                return Err(CliError::Parse(
                    "the stable pipeline needs a purely discrete destination".into(),
                ));
            }
            let out =
                run_stable_allocation(&r.xi, &disc, p.alpha, p.resolution, &stable_params(p))?;
            Ok(PipelineRun {
                kind,
                convergence: Convergence {
                    stages: out.converged_stage(),
                    tie_breaks: out.tie_breaks,
                    exhausted_atoms: out.exhausted.clone(),
                },
                allocation: out.allocation,
                atoms: disc,
                stages: out.stages,
                layered: None,
                quantile: None,
                partition_exact: None,
                diffuse_discrepancy: 0.0,
                warnings: Vec::new(),
                cell,
            })
        }
        PipelineKind::Layered => {
            if p.alpha != 1.0 {
                return Err(CliError::Parse(
                    "the layered pipeline runs with alpha = 1".into(),
                ));
            }
            if r.eta.diffuse_part().total_mass() > 0.0 {
                return Err(CliError::Parse(
                    "the layered pipeline needs a purely discrete destination".into(),
                ));
            }
            let lp = LayeredParams {
                n_max: p.n_max,
                stable: stable_params(p),
            };
            let out = run_layered(&r.xi, &disc, p.resolution, &lp)?;
            Ok(PipelineRun {
                kind,
                convergence: Convergence {
                    stages: out.trace.iter().map(|t| t.stages).sum(),
                    tie_breaks: out.trace.iter().map(|t| t.tie_breaks).sum(),
                    exhausted_atoms: Vec::new(),
                },
                allocation: out.allocation.clone(),
                atoms: disc,
                stages: Vec::new(),
                warnings: out.warnings.clone(),
                layered: Some(out),
                quantile: None,
                partition_exact: None,
                diffuse_discrepancy: 0.0,
                cell,
            })
        }
        PipelineKind::Mixed | PipelineKind::Quantile => {
            if p.alpha != 1.0 {
                return Err(CliError::Parse(format!(
                    "the {} pipeline runs with alpha = 1",
                    if kind == PipelineKind::Mixed {
                        "mixed"
                    } else {
                        "quantile"
                    }
                )));
            }
            let out = dispatch(&r.xi, &r.eta, &r.chi, p.resolution, &mixed_params(p))?;
            let got = match out.pipeline {
                Pipeline::Layered => PipelineKind::Layered,
                Pipeline::Mixed => PipelineKind::Mixed,
                Pipeline::Quantile => PipelineKind::Quantile,
            };
            if got != kind {
                return Err(CliError::Parse(format!(
                    "the destination calls for the {} pipeline",
                    out.pipeline.as_str()
                )));
            }
            let layered_stages: usize = out
                .layered
                .as_ref()
                .map_or(0, |l| l.trace.iter().map(|t| t.stages).sum());
            let layered_ties: usize = out
                .layered
                .as_ref()
                .map_or(0, |l| l.trace.iter().map(|t| t.tie_breaks).sum());
            let (q_stages, q_ties) = out.quantile.as_ref().map_or((0, 0), |q| {
                (
                    q.pairing.source_stages + q.pairing.destination_stages,
                    q.pairing.tie_breaks,
                )
            });
            let partition = out.partition_is_exact();
            Ok(PipelineRun {
                kind,
                convergence: Convergence {
                    stages: layered_stages + q_stages,
                    tie_breaks: layered_ties + q_ties,
                    exhausted_atoms: Vec::new(),
                },
                allocation: out.allocation,
                atoms: disc,
                stages: Vec::new(),
                layered: out.layered,
                quantile: out.quantile,
                partition_exact: (kind == PipelineKind::Mixed).then_some(partition),
                diffuse_discrepancy: out.diffuse_discrepancy,
                warnings: out.warnings,
                cell,
            })
        }
        PipelineKind::Product => {
            let heights = match r.eta.components() {
                [Component::Curve(c)] => c
                    .pieces()
                    .iter()
                    .map(|piece| piece.at(0.0)[1])
                    .collect::<Vec<_>>(),
                _ => {
                    return Err(CliError::Parse(
                        "the product pipeline needs a single lines component as destination".into(),
                    ))
                }
            };
            if w.dim() != 2 {
                return Err(CliError::Parse(
                    "the product pipeline needs a 2D window".into(),
                ));
            }
            let axis = Window::line(w.side(1))?;
            let points = heights
                .iter()
                .map(|&y| axis.point(&[y]))
                .collect::<Result<Vec<_>, _>>()?;
            let n = AtomMeasure::unit(&points)?;
            let prod = product_allocation(&n, &w, p.resolution, &stable_params(p))?;
            let density = r.xi.total_mass() / w.volume();
            let allocation = prod.allocation(density)?;
            let cell = [
                w.side(0) / (w.side(0) / p.resolution - 1e-9).ceil(),
                w.side(1) / prod.elements.len() as f64,
            ];
            Ok(PipelineRun {
                kind,
                convergence: Convergence {
                    stages: prod.tau1.converged_stage(),
                    tie_breaks: prod.tau1.tie_breaks,
                    exhausted_atoms: prod.tau1.exhausted.clone(),
                },
                allocation,
                atoms: AtomMeasure::empty(),
                stages: prod.tau1.stages.clone(),
                layered: None,
                quantile: None,
                partition_exact: None,
                diffuse_discrepancy: 0.0,
                warnings: Vec::new(),
                cell,
            })
        }
    }
}

/// Checks that need only the allocation; shared by `run` and `verify`.
pub fn allocation_checks(
    kind: PipelineKind,
    s: &Scenario,
    r: &Resolved,
    a: &Allocation,
    balance: bool,
) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let xi_total = r.xi.total_mass();
    let offered = a.offered_mass();
    let overfull = a
        .entries
        .iter()
        .filter(|e| e.allocated() > e.offered * (1.0 + 1e-9) + 1e-15)
        .count();
    let rel = (offered - xi_total).abs() / xi_total;
    out.push(CheckResult::new(
        "mass_accounting",
        overfull == 0 && rel <= 1e-9,
        Some(rel),
        Some(1e-9),
        format!(
            "{overfull} elements hand out more than they hold; offered {offered} of {xi_total}"
        ),
    ));

    let disc = r.eta.discrete_part();
    let n_atoms = disc.len();
    let bad_provenance = a
        .entries
        .iter()
        .flat_map(|e| &e.pieces)
        .filter(|p| match kind {
            PipelineKind::Quantile => p.provenance != Provenance::Diff,
            PipelineKind::Mixed => (p.provenance == Provenance::Disc) != (p.dest < n_atoms),
            _ => p.provenance != Provenance::Disc,
        })
        .count();
    out.push(CheckResult::new(
        "provenance",
        bad_provenance == 0,
        Some(bad_provenance as f64),
        Some(0.0),
        "pieces whose provenance disagrees with their destination".into(),
    ));

    let alpha = if kind == PipelineKind::Stable {
        s.params.alpha
    } else {
        1.0
    };
    if kind == PipelineKind::Stable {
        let tol = s.checks.balance.cell_tolerance;
        let (ok, detail) = match verify_appetite(a, &disc, alpha, tol) {
            Ok(rep) => (
                true,
                format!(
                    "{} saturated atoms, max overfill {}",
                    rep.saturated_atoms, rep.max_overfill
                ),
            ),
            Err(e) => (false, e.to_string()),
        };
        out.push(CheckResult::new("appetite", ok, None, Some(tol), detail));
    }
    if !balance {
        return out;
    }

    let cells = a.cell_masses(n_atoms);
    if n_atoms > 0 && kind != PipelineKind::Product {
        let tol = s.checks.balance.cell_tolerance;
        let saturating = xi_total >= alpha * disc.total_mass() * (1.0 - 1e-9);
        if saturating {
            let worst = disc
                .atoms()
                .iter()
                .zip(&cells)
                .map(|(x, c)| (c - alpha * x.mass).abs() / (alpha * x.mass))
                .fold(0.0, f64::max);
            out.push(CheckResult::new(
                "atom_cells",
                worst <= tol,
                Some(worst),
                Some(tol),
                format!("cell mass against {alpha} times the atom mass, relative"),
            ));
        } else {
            let left = a.unallocated_mass() / xi_total;
            out.push(CheckResult::new(
                "atom_cells",
                left <= tol,
                Some(left),
                Some(tol),
                "source too small to saturate the atoms: unallocated fraction".into(),
            ));
        }
    }
    let expected_left = (xi_total - alpha * r.eta.total_mass()).max(0.0) / xi_total;
    let left = a.unallocated_mass() / xi_total;
    let tol = s.checks.balance.cell_tolerance;
    out.push(CheckResult::new(
        "unallocated_fraction",
        (left - expected_left).abs() <= tol,
        Some(left),
        Some(tol),
        format!("expected {expected_left}"),
    ));

    if r.eta.diffuse_part().total_mass() > 0.0 {
        let res = s.params.resolution;
        let tol = s.checks.balance.tolerance.unwrap_or(3.0 * res);
        let min_side = s.checks.balance.min_side.unwrap_or(4.0 * res);
        let mut rng = rng_from_seed(derive_seed(r.seed, 2_000_000));
        let boxes = random_boxes(&r.window, s.checks.balance.regions, min_side, &mut rng);
        let rep = balance_check(a, &r.eta, &boxes);
        out.push(CheckResult::new(
            "balance_regions",
            rep.max_relative <= tol,
            Some(rep.max_relative),
            Some(tol),
            format!(
                "{} random boxes, image against destination mass",
                boxes.len()
            ),
        ));
    }
    if kind == PipelineKind::Product {
        let moved = a
            .entries
            .iter()
            .flat_map(|e| e.pieces.iter().map(move |p| (e, p)))
            .filter(|(e, p)| p.location.x() != e.element.location.x())
            .count();
        out.push(CheckResult::new(
            "first_coordinate_kept",
            moved == 0,
            Some(moved as f64),
            Some(0.0),
            "pieces whose first coordinate moved".into(),
        ));
    }
    out
}

fn run_checks(p: &PipelineRun) -> Vec<CheckResult> {
    let mut out = vec![CheckResult::new(
        "invariants",
        true,
        None,
        None,
        format!(
            "per-stage monotonicity held over {} stages",
            p.convergence.stages
        ),
    )];
    if let Some(l) = &p.layered {
        out.push(CheckResult::new(
            "layer_restrictions_disjoint",
            l.restrictions_disjoint(),
            None,
            None,
            format!("{} layers", l.trace.len()),
        ));
    }
    if let Some(ok) = p.partition_exact {
        out.push(CheckResult::new(
            "disc_diff_partition",
            ok,
            Some(p.diffuse_discrepancy),
            None,
            "leftover source minus diffuse destination mass".into(),
        ));
    }
    out
}

/// Atom cells by atom; mass moved through the auxiliary cells by the cell
/// that carried most of it.
fn plot_labels(p: &PipelineRun) -> Vec<Option<usize>> {
    let mut labels = plot::dominant_labels(&p.allocation);
    let Some(q) = &p.quantile else {
        return labels;
    };
    let n_atoms = p.atoms.len();
    let mut carried: BTreeMap<usize, BTreeMap<usize, f64>> = BTreeMap::new();
    for r in &q.rows {
        *carried
            .entry(r.element)
            .or_default()
            .entry(r.chi)
            .or_default() += r.mass;
    }
    for (e, label) in p.allocation.entries.iter().zip(labels.iter_mut()) {
        if label.is_some_and(|d| d < n_atoms) {
            continue;
        }
        *label = carried.get(&e.element.id).and_then(|m| {
            m.iter()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .filter(|(_, &mass)| mass * 2.0 > e.offered)
                .map(|(&chi, _)| n_atoms + chi)
        });
    }
    labels
}

/// Options of `run` beyond the scenario file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub checks: Option<Vec<CheckKind>>,
    pub plot: bool,
}

#[derive(Debug)]
pub struct RunResult {
    pub report: RunReport,
    pub out_dir: PathBuf,
    pub palm: Option<(ExperimentReport, CalibrationReport)>,
    pub equivariance: Option<EquivarianceReport>,
}

pub const OUT_ENV: &str = "DIFFALLOC_OUT";

pub fn output_dir(s: &Scenario, opts: &RunOptions) -> PathBuf {
    if let Some(o) = &opts.out {
        return o.clone();
    }
    if let Some(d) = &s.output.dir {
        return d.clone();
    }
    let base = std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("out"), PathBuf::from);
    base.join(s.display_name())
}

fn write(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    fs::write(dir.join(name), text)
        .map_err(|e| CliError::Io(format!("{}: {e}", dir.join(name).display())))
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable report");
    s.push('\n');
    s
}

#[derive(Serialize)]
struct LayerRow {
    n: usize,
    atoms: usize,
    allocated_mass: f64,
    remaining_pool_mass: f64,
    stages: usize,
    tie_breaks: usize,
    restricted_elements: usize,
}

#[derive(Serialize)]
struct LayersExport<'a> {
    layers: Vec<LayerRow>,
    residual_mass: f64,
    residual_atoms: &'a [usize],
    restrictions_disjoint: bool,
}

#[derive(Serialize)]
struct StageRow {
    stage: usize,
    rejected_mass: f64,
    unsaturated_atoms: usize,
    tie_breaks: usize,
    changed_atoms: usize,
}

#[derive(Serialize)]
struct PalmExport<'a> {
    statistic: &'a str,
    samples: usize,
    excluded: usize,
    mean_shifted: f64,
    mean_reference: f64,
    ks_distance: f64,
    p_value: f64,
    threshold: f64,
    pass: bool,
    calibration: CalibrationExport,
}

#[derive(Serialize)]
struct CalibrationExport {
    repetitions: usize,
    rejections: usize,
    rate: f64,
    band: [f64; 2],
    pass: bool,
}

fn palm_params(s: &Scenario, seed: u64) -> Result<ExtraPointParams, CliError> {
    let c = &s.checks.palm;
    let w = Window::new(&c.sides)?;
    let mut p = ExtraPointParams::new(
        w,
        c.intensity,
        c.samples,
        c.seed.unwrap_or(derive_seed(seed, 3_000_000)),
    );
    p.resolution = c.resolution;
    p.threshold = c.threshold;
    p.statistic = match c.statistic {
        StatisticName::Count => Statistic::CountInBall { radius: c.radius },
        StatisticName::Nearest => Statistic::NearestDistance,
    };
    p.stable = stable_params(&s.params);
    Ok(p)
}

/// Runs `f(i)` for `i < n` on all cores; results come back in index order.
fn parallel_map<T: Send, F: Fn(usize) -> T + Sync>(n: usize, f: F) -> Vec<T> {
    let threads = std::thread::available_parallelism()
        .map_or(1, |t| t.get())
        .min(n.max(1));
    let mut slots: Vec<Option<T>> = (0..n).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunks: Vec<_> = slots.chunks_mut(n.div_ceil(threads).max(1)).collect();
        let mut start = 0;
        for chunk in chunks {
            let f = &f;
            let offset = start;
            start += chunk.len();
            scope.spawn(move || {
                for (k, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(f(offset + k));
                }
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.expect("every slot filled"))
        .collect()
}

/// The extra-point experiment and its null calibration, samples in parallel.
/// The experiment matches the sequential `extra_point_experiment` exactly.
pub fn run_palm(
    p: &ExtraPointParams,
    repetitions: usize,
) -> Result<(ExperimentReport, CalibrationReport), CliError> {
    if p.samples < 100 {
        return Err(CliError::Parse(
            "the extra-point experiment needs at least 100 samples".into(),
        ));
    }
    let shifted = parallel_map(p.samples, |i| {
        shifted_sample(p, derive_seed(p.seed, 2 * i as u64))
    });
    let reference = parallel_map(p.samples, |i| {
        reference_sample(p, derive_seed(p.seed, 2 * i as u64 + 1))
    });
    let mut sv = Vec::with_capacity(p.samples);
    let mut excluded = 0;
    for s in shifted {
        match s? {
            Some(v) => sv.push(v),
            None => excluded += 1,
        }
    }
    let rv = reference.into_iter().collect::<Result<Vec<_>, _>>()?;
    let rep = palm_report(p, sv, rv, excluded)?;
    let per_rep = parallel_map(repetitions, |r| {
        let mut one = p.clone();
        one.seed = derive_seed(p.seed, u64::MAX - r as u64);
        null_calibration(&one, 1)
    });
    let mut rejections = 0;
    for c in per_rep {
        rejections += c?.rejections;
    }
    let n = repetitions.max(1) as f64;
    let sigma = (p.threshold * (1.0 - p.threshold) / n).sqrt();
    let band = (
        (p.threshold - 3.0 * sigma).max(0.0),
        p.threshold + 3.0 * sigma,
    );
    let rate = rejections as f64 / n;
    let cal = CalibrationReport {
        repetitions,
        rejections,
        rate,
        band,
        pass: rate >= band.0 && rate <= band.1,
    };
    Ok((rep, cal))
}

pub fn run_equivariance(
    kind: PipelineKind,
    s: &Scenario,
    r: &Resolved,
) -> Result<EquivarianceReport, CliError> {
    let mut v = [0.0; MAX_DIM];
    for (k, x) in s.checks.equivariance.shift.iter().enumerate().take(MAX_DIM) {
        v[k] = *x;
    }
    let base = r.explicit_chi()?;
    let run = |shift: &[f64; MAX_DIM]| {
        let moved = base
            .shifted(shift)
            .map_err(|e| diffalloc_core::Error::Config(e.to_string()))?;
        let out = execute(kind, &moved, &s.params).map_err(|e| match e {
            CliError::Core(c) => c,
            other => diffalloc_core::Error::Config(other.to_string()),
        })?;
        Ok((out.allocation, out.convergence.tie_breaks))
    };
    Ok(equivariance_check(
        run,
        &v,
        s.checks.equivariance.mass_tolerance,
    )?)
}

/// Runs the scenario and writes every export into the output directory.
pub fn run(s: &Scenario, warnings: Vec<String>, opts: &RunOptions) -> Result<RunResult, CliError> {
    let start = Instant::now();
    let r = s.resolve(opts.seed)?;
    let kind = choose_pipeline(s, &r)?;
    let p = execute(kind, &r, &s.params)?;
    let checks_to_run = opts.checks.clone().unwrap_or_else(|| s.checks.run.clone());

    let mut checks = run_checks(&p);
    checks.extend(allocation_checks(
        kind,
        s,
        &r,
        &p.allocation,
        checks_to_run.contains(&CheckKind::Balance),
    ));

    let dir = output_dir(s, opts);
    fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    write(
        &dir,
        "allocation.tsv",
        &export::allocation_tsv(&p.allocation),
    )?;
    if !p.stages.is_empty() {
        let rows: Vec<StageRow> = p
            .stages
            .iter()
            .map(|d| StageRow {
                stage: d.stage,
                rejected_mass: d.rejected_mass,
                unsaturated_atoms: d.unsaturated_atoms,
                tie_breaks: d.tie_breaks,
                changed_atoms: d.changed_atoms,
            })
            .collect();
        write(&dir, "stages.json", &json(&rows))?;
    }
    if let Some(l) = &p.layered {
        let layers = l
            .trace
            .iter()
            .map(|t| LayerRow {
                n: t.n,
                atoms: t.atoms,
                allocated_mass: t.allocated_mass,
                remaining_pool_mass: t.remaining_pool_mass,
                stages: t.stages,
                tie_breaks: t.tie_breaks,
                restricted_elements: t.restriction.len(),
            })
            .collect();
        let e = LayersExport {
            layers,
            residual_mass: l.decomposition.residual_mass,
            residual_atoms: &l.decomposition.residual_atoms,
            restrictions_disjoint: l.restrictions_disjoint(),
        };
        write(&dir, "layers.json", &json(&e))?;
    }
    if let Some(q) = &p.quantile {
        write(&dir, "chi.tsv", &export::chi_tsv(q))?;
        write(
            &dir,
            "transport.tsv",
            &export::transport_tsv(&q.rows, r.window.dim()),
        )?;
    }

    let mut palm = None;
    if checks_to_run.contains(&CheckKind::Palm) {
        let pp = palm_params(s, r.seed)?;
        let (rep, cal) = run_palm(&pp, s.checks.palm.calibration_repetitions)?;
        checks.push(CheckResult::new(
            "palm_extra_point",
            rep.pass,
            Some(rep.p_value),
            Some(rep.threshold),
            format!(
                "{} shifted vs {} reference samples, {} excluded, means {} / {}",
                rep.shifted.len(),
                rep.reference.len(),
                rep.excluded,
                rep.mean_shifted(),
                rep.mean_reference()
            ),
        ));
        checks.push(CheckResult::new(
            "palm_null_calibration",
            cal.pass,
            Some(cal.rate),
            Some(cal.band.1),
            format!(
                "{} of {} repetitions rejected",
                cal.rejections, cal.repetitions
            ),
        ));
        let e = PalmExport {
            statistic: &rep.statistic,
            samples: rep.samples,
            excluded: rep.excluded,
            mean_shifted: rep.mean_shifted(),
            mean_reference: rep.mean_reference(),
            ks_distance: rep.ks_distance,
            p_value: rep.p_value,
            threshold: rep.threshold,
            pass: rep.pass,
            calibration: CalibrationExport {
                repetitions: cal.repetitions,
                rejections: cal.rejections,
                rate: cal.rate,
                band: [cal.band.0, cal.band.1],
                pass: cal.pass,
            },
        };
        write(&dir, "palm.json", &json(&e))?;
        write(
            &dir,
            "palm_samples.tsv",
            &export::samples_tsv(&rep.shifted, &rep.reference),
        )?;
        palm = Some((rep, cal));
    }

    let mut equivariance = None;
    if checks_to_run.contains(&CheckKind::Equivariance) {
        if s.checks.equivariance.shift.len() != r.window.dim() {
            return Err(CliError::Parse(
                "checks.equivariance.shift needs one entry per window axis".into(),
            ));
        }
        let rep = run_equivariance(kind, s, &r)?;
        checks.push(CheckResult::new(
            "equivariance",
            rep.pass,
            Some((rep.unmatched + rep.mismatches) as f64),
            Some(0.0),
            format!(
                "{} elements, exact: {}, tie-breaks {} / {}",
                rep.elements, rep.exact, rep.tie_breaks_base, rep.tie_breaks_shifted
            ),
        ));
        equivariance = Some(rep);
    }

    if opts.plot || s.output.plot {
        write(
            &dir,
            "cells.svg",
            &plot::cell_svg(&p.allocation, &plot_labels(&p), &p.atoms, p.cell),
        )?;
    }

    let mut all_warnings = warnings;
    all_warnings.extend(p.warnings.iter().cloned());
    let status = Verdict::of(checks.iter().all(|c| c.verdict == Verdict::Pass));
    let report = RunReport {
        scenario: s.display_name(),
        seed: r.seed,
        pipeline: kind,
        status,
        elements: p.allocation.entries.len(),
        atoms: p.atoms.len(),
        convergence: p.convergence.clone(),
        mass: MassSummary {
            source: r.xi.total_mass(),
            destination: r.eta.total_mass(),
            allocated: p.allocation.allocated_mass(),
            unallocated: p.allocation.unallocated_mass(),
        },
        checks,
        warnings: all_warnings,
        timing: Timing {
            elapsed_ms: start.elapsed().as_millis(),
        },
    };
    write(&dir, "report.json", &json(&report))?;
    Ok(RunResult {
        report,
        out_dir: dir,
        palm,
        equivariance,
    })
}

/// Re-checks a saved allocation export against its scenario.
pub fn verify(
    export_text: &str,
    s: &Scenario,
    seed: Option<u64>,
) -> Result<Vec<CheckResult>, CliError> {
    let r = s.resolve(seed)?;
    let kind = choose_pipeline(s, &r)?;
    let a = export::read_allocation_tsv(export_text, &r.window)?;
    Ok(allocation_checks(kind, s, &r, &a, true))
}
