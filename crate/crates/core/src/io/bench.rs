//! Benchmark driver: dataset → optional chordal initialization → solvers at
//! several iteration budgets → CSV traces, a JSON report and a text table.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::PathBuf;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::chordal::ChordalConfig;
use crate::error::{PgoError, Result};
use crate::graph::{PartitionStrategy, PoseEstimate, PoseGraph};
use crate::io::cube::{generate_cube, CubeConfig};
use crate::io::g2o::parse_g2o;
use crate::io::metrics::{save_json, save_records};
use crate::manifold::{project_to_rotation, rotation_angle};
use crate::runtime::{run_distributed, DistributedParams, RuntimeAlgorithm};
use crate::solvers::{run_shared, Algorithm, RunRecord, SolverConfig, SolverRun};
use crate::sparse::Mat;

/// Iterations of the centralized AMM run used when no reference is given.
pub const AUTO_REFERENCE_ITERS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DatasetSource {
    G2o(PathBuf),
    Cube(CubeConfig),
}

impl DatasetSource {
    pub fn name(&self) -> String {
        match self {
            DatasetSource::G2o(p) => p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "g2o".into()),
            DatasetSource::Cube(c) => format!("cube-{}", c.grid),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchAlgorithm {
    Mm,
    Amm,
    ChordalOnly,
}

impl BenchAlgorithm {
    pub fn label(self) -> &'static str {
        match self {
            BenchAlgorithm::Mm => "MM-PGO",
            BenchAlgorithm::Amm => "AMM-PGO",
            BenchAlgorithm::ChordalOnly => "chordal",
        }
    }

    fn slug(self) -> &'static str {
        match self {
            BenchAlgorithm::Mm => "mm",
            BenchAlgorithm::Amm => "amm",
            BenchAlgorithm::ChordalOnly => "chordal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceSpec {
    None,
    /// An externally certified optimum.
    Value(f64),
    /// A long centralized AMM run with this many iterations.
    Centralized(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceSource {
    Supplied,
    Centralized,
}

impl ReferenceSource {
    pub fn label(self) -> &'static str {
        match self {
            ReferenceSource::Supplied => "reference (supplied)",
            ReferenceSource::Centralized => "reference (upper bound)",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub value: f64,
    pub source: ReferenceSource,
}

/// Where solver iterations run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    #[default]
    Distributed,
    Shared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub dataset: DatasetSource,
    pub robots: usize,
    pub algorithms: Vec<BenchAlgorithm>,
    pub iters: Vec<usize>,
    pub xi: f64,
    pub reference: ReferenceSpec,
    pub relative_gap: bool,
    pub chordal: bool,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub mode: RunMode,
}

impl BenchmarkSpec {
    pub fn new(dataset: DatasetSource) -> Self {
        BenchmarkSpec {
            dataset,
            robots: 1,
            algorithms: vec![BenchAlgorithm::Mm, BenchAlgorithm::Amm],
            iters: vec![100, 250, 1000],
            xi: crate::solvers::DEFAULT_XI,
            reference: ReferenceSpec::None,
            relative_gap: false,
            chordal: false,
            out: None,
            threads: None,
            mode: RunMode::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkEntry {
    pub dataset: String,
    pub algorithm: BenchAlgorithm,
    pub robots: usize,
    pub iters: usize,
    pub f: f64,
    pub reference: Option<f64>,
    pub gap: Option<f64>,
    pub relative_gap: Option<f64>,
    /// 1 is the lowest `F` among algorithms at the same budget.
    pub rank: usize,
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub dataset: String,
    pub num_poses: usize,
    pub num_edges: usize,
    pub robots: usize,
    pub reference: Option<Reference>,
    pub initial_f: f64,
    pub entries: Vec<BenchmarkEntry>,
    /// Gauge-aligned `(rotation rad, translation m)` RMSE against ground
    /// truth, per algorithm, when the dataset has one.
    pub rmse: Vec<(BenchAlgorithm, f64, f64)>,
}

impl BenchmarkReport {
    pub fn entry(&self, algorithm: BenchAlgorithm, iters: usize) -> Option<&BenchmarkEntry> {
        self.entries
            .iter()
            .find(|e| e.algorithm == algorithm && e.iters == iters)
    }

    /// Plain-text table: one row per algorithm, one column per budget.
    pub fn table(&self) -> String {
        let mut budgets: Vec<usize> = self.entries.iter().map(|e| e.iters).collect();
        budgets.sort_unstable();
        budgets.dedup();
        let mut out = String::new();
        let _ = writeln!(
            out,
            "dataset {}  poses {}  edges {}  robots {}  F(X0) {:.6e}",
            self.dataset, self.num_poses, self.num_edges, self.robots, self.initial_f
        );
        if let Some(r) = self.reference {
            let _ = writeln!(out, "{} F* = {:.6e}", r.source.label(), r.value);
        }
        let _ = write!(out, "{:<10}", "method");
        for b in &budgets {
            let _ = write!(out, " {:>26}", format!("{b} iters F (rank)"));
        }
        out.push('\n');
        let mut algos: Vec<BenchAlgorithm> = self.entries.iter().map(|e| e.algorithm).collect();
        algos.dedup();
        for a in algos {
            let _ = write!(out, "{:<10}", a.label());
            for &b in &budgets {
                let cell = match self.entry(a, b) {
                    Some(e) => format!("{:.6e} ({})", e.f, e.rank),
                    None => "-".into(),
                };
                let _ = write!(out, " {cell:>26}");
            }
            out.push('\n');
            if self.reference.is_some() {
                let _ = write!(out, "{:<10}", "  rel.gap");
                for &b in &budgets {
                    let cell = self
                        .entry(a, b)
                        .and_then(|e| e.relative_gap)
                        .map(|g| format!("{g:.3e}"))
                        .unwrap_or_else(|| "-".into());
                    let _ = write!(out, " {cell:>26}");
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Initial estimate by composing measurements along a breadth-first
/// spanning tree rooted at the first pose.
pub fn spanning_tree_initialization(g: &PoseGraph) -> Result<PoseEstimate> {
    let d = g.d();
    let layout = g.layout();
    let n = g.num_poses();
    let mut adj: Vec<Vec<(usize, usize, bool)>> = vec![Vec::new(); n];
    for (e, m) in g.edges().iter().enumerate() {
        let (i, j) = (layout.global_index(m.src), layout.global_index(m.dst));
        adj[i].push((j, e, true));
        adj[j].push((i, e, false));
    }
    let mut poses: Vec<Option<(DVector<f64>, Mat)>> = vec![None; n];
    poses[0] = Some((DVector::zeros(d), Mat::identity(d, d)));
    let mut queue = VecDeque::from([0usize]);
    while let Some(i) = queue.pop_front() {
        let (ti, ri) = poses[i].clone().expect("queued poses are set");
        for &(j, e, forward) in &adj[i] {
            if poses[j].is_some() {
                continue;
            }
            let m = &g.edges()[e];
            let pose = if forward {
                (&ti + &ri * &m.trans, project_to_rotation(&(&ri * &m.rot))?)
            } else {
                let r = project_to_rotation(&(&ri * m.rot.transpose()))?;
                (&ti - &r * &m.trans, r)
            };
            poses[j] = Some(pose);
            queue.push_back(j);
        }
    }
    let poses: Vec<(DVector<f64>, Mat)> = poses
        .into_iter()
        .map(|p| p.ok_or_else(|| PgoError::InvalidGraph("graph is not connected".into())))
        .collect::<Result<_>>()?;
    PoseEstimate::from_poses(layout.clone(), &poses)
}

/// Aligns `est` to `truth` with the SE(d) transform that minimizes the
/// translation RMSE and returns `(rotation RMSE in rad, translation RMSE)`.
///
/// The rotation comes from orthogonal Procrustes on the centred positions;
/// when the positions do not determine it (fewer than `d` independent
/// directions) the chordal mean of `R_true_i R_est_iᵀ` is used instead.
pub fn align_and_rmse(est: &PoseEstimate, truth: &PoseEstimate) -> Result<(f64, f64)> {
    if est.layout() != truth.layout() {
        return Err(PgoError::DimensionMismatch("estimate and truth layouts differ".into()));
    }
    let d = est.d();
    let pe = est.poses();
    let pt = truth.poses();
    let n = pe.len() as f64;
    let ce = pe.iter().fold(DVector::zeros(d), |acc, p| acc + &p.0) / n;
    let ct = pt.iter().fold(DVector::zeros(d), |acc, p| acc + &p.0) / n;
    let mut h = Mat::zeros(d, d);
    for (a, b) in pe.iter().zip(&pt) {
        h += (&b.0 - &ct) * (&a.0 - &ce).transpose();
    }
    let sv = h.clone().svd(false, false).singular_values;
    let mut sorted: Vec<f64> = sv.iter().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let determined = sorted[0] > 0.0 && sorted[d.saturating_sub(2)] > 1e-9 * sorted[0];
    let r = if determined {
        project_to_rotation(&h)?
    } else {
        let mut m = Mat::zeros(d, d);
        for (a, b) in pe.iter().zip(&pt) {
            m += &b.1 * a.1.transpose();
        }
        project_to_rotation(&m)?
    };
    let t = &ct - &r * &ce;
    let mut rot_sq = 0.0;
    let mut trans_sq = 0.0;
    for (a, b) in pe.iter().zip(&pt) {
        trans_sq += (&r * &a.0 + &t - &b.0).norm_squared();
        rot_sq += rotation_angle(&(b.1.transpose() * &r * &a.1)).powi(2);
    }
    Ok(((rot_sq / n).sqrt(), (trans_sq / n).sqrt()))
}

/// A loaded dataset in single-robot form.
pub struct LoadedDataset {
    pub graph: PoseGraph,
    pub initial: PoseEstimate,
    pub truth: Option<PoseEstimate>,
}

pub fn load_dataset(source: &DatasetSource) -> Result<LoadedDataset> {
    match source {
        DatasetSource::G2o(path) => {
            let ds = parse_g2o(path)?;
            Ok(LoadedDataset {
                graph: ds.graph,
                initial: ds.initial,
                truth: None,
            })
        }
        DatasetSource::Cube(cfg) => {
            let (graph, truth) = generate_cube(cfg)?;
            let initial = spanning_tree_initialization(&graph)?;
            Ok(LoadedDataset {
                graph,
                initial,
                truth: Some(truth),
            })
        }
    }
}

fn solve(
    g: &PoseGraph,
    x0: &PoseEstimate,
    algorithm: Algorithm,
    cfg: &SolverConfig,
    mode: RunMode,
) -> Result<SolverRun> {
    match mode {
        RunMode::Shared => run_shared(g, x0, algorithm, cfg),
        RunMode::Distributed => {
            let algo = match algorithm {
                Algorithm::Mm => RuntimeAlgorithm::Mm,
                Algorithm::Amm => RuntimeAlgorithm::Amm,
            };
            let params = DistributedParams {
                solver: *cfg,
                chordal: ChordalConfig::default(),
            };
            Ok(run_distributed(g, x0, algo, &params)?.run)
        }
    }
}

fn resolve_reference(
    spec: &BenchmarkSpec,
    single: &PoseGraph,
    x0: &PoseEstimate,
) -> Result<Option<Reference>> {
    match spec.reference {
        ReferenceSpec::None => {
            if spec.relative_gap {
                Err(PgoError::MissingReference)
            } else {
                Ok(None)
            }
        }
        ReferenceSpec::Value(value) => {
            if !(value.is_finite() && value > 0.0) {
                return Err(PgoError::InvalidParameter(format!("reference objective {value}")));
            }
            Ok(Some(Reference {
                value,
                source: ReferenceSource::Supplied,
            }))
        }
        ReferenceSpec::Centralized(iters) => {
            let cfg = SolverConfig {
                xi: spec.xi,
                iters,
                threads: spec.threads,
                ..Default::default()
            };
            let x0 = x0.relayout(single.layout().clone())?;
            let run = run_shared(single, &x0, Algorithm::Amm, &cfg)?;
            let value = run
                .records
                .iter()
                .map(|r| r.f)
                .fold(f64::INFINITY, f64::min);
            Ok(Some(Reference {
                value,
                source: ReferenceSource::Centralized,
            }))
        }
    }
}

/// Runs the benchmark described by `spec`, writing traces and the report
/// to `spec.out` when set.
pub fn run_benchmark(spec: &BenchmarkSpec) -> Result<BenchmarkReport> {
    if spec.robots == 0 {
        return Err(PgoError::InvalidParameter("at least one robot is required".into()));
    }
    if spec.iters.is_empty() || spec.algorithms.is_empty() {
        return Err(PgoError::InvalidParameter("no algorithms or iteration budgets".into()));
    }
    let data = load_dataset(&spec.dataset)?;
    let g = data
        .graph
        .partition(spec.robots, &PartitionStrategy::Contiguous)?;
    let chordal_cfg = ChordalConfig {
        threads: spec.threads,
        ..Default::default()
    };
    let params = DistributedParams {
        solver: SolverConfig::default(),
        chordal: chordal_cfg,
    };
    let mut chordal_trace: Option<Vec<RunRecord>> = None;
    let x0 = if spec.chordal || spec.algorithms.contains(&BenchAlgorithm::ChordalOnly) {
        let ident = PoseEstimate::identity(g.layout().clone());
        let run = match spec.mode {
            RunMode::Distributed => run_distributed(&g, &ident, RuntimeAlgorithm::Chordal, &params)?.run,
            RunMode::Shared => {
                let res = crate::chordal::chordal_initialization(&g, &chordal_cfg)?;
                let mut trace = res.rotation_trace;
                let offset = trace.len();
                trace.extend(res.translation_trace.into_iter().map(|mut r| {
                    r.k += offset;
                    r
                }));
                SolverRun {
                    x: res.estimate,
                    iterations: 0,
                    records: trace,
                    termination: crate::solvers::Termination::IterationBudget,
                    step_norms: Vec::new(),
                    restarts: 0,
                    capped_local_solves: 0,
                }
            }
        };
        chordal_trace = Some(run.records);
        let x = run.x;
        PoseEstimate::new(x.layout().clone(), x.matrix().clone())?
    } else {
        data.initial.relayout(g.layout().clone())?
    };
    let reference = resolve_reference(spec, &data.graph, &x0)?;
    let initial_f = crate::quadratic::objective_by_robot(&g, x0.matrix());

    if let Some(dir) = &spec.out {
        std::fs::create_dir_all(dir)?;
    }
    let trace_path = |slug: &str| spec.out.as_ref().map(|d| d.join(format!("trace_{slug}.csv")));

    let max_iters = *spec.iters.iter().max().expect("non-empty budgets");
    let mut entries = Vec::new();
    let mut rmse = Vec::new();
    for &algo in &spec.algorithms {
        let (records, estimate) = match algo {
            BenchAlgorithm::ChordalOnly => (
                chordal_trace.clone().unwrap_or_default(),
                x0.clone(),
            ),
            BenchAlgorithm::Mm | BenchAlgorithm::Amm => {
                let cfg = SolverConfig {
                    xi: spec.xi,
                    iters: max_iters,
                    threads: spec.threads,
                    ..Default::default()
                };
                let a = if algo == BenchAlgorithm::Mm { Algorithm::Mm } else { Algorithm::Amm };
                let run = solve(&g, &x0, a, &cfg, spec.mode)?;
                (run.records, run.x)
            }
        };
        let trace = trace_path(algo.slug());
        if let Some(p) = &trace {
            save_records(p, &records)?;
        }
        if let Some(truth) = &data.truth {
            let truth = truth.relayout(g.layout().clone())?;
            let (r, t) = align_and_rmse(&estimate, &truth)?;
            rmse.push((algo, r, t));
        }
        let budgets: Vec<usize> = if algo == BenchAlgorithm::ChordalOnly {
            vec![0]
        } else {
            spec.iters.clone()
        };
        for iters in budgets {
            let f = match algo {
                BenchAlgorithm::ChordalOnly => initial_f,
                _ => records
                    .iter()
                    .rev()
                    .find(|r| r.k <= iters)
                    .map(|r| r.f)
                    .unwrap_or(initial_f),
            };
            let gap = reference.map(|r| f - r.value);
            entries.push(BenchmarkEntry {
                dataset: spec.dataset.name(),
                algorithm: algo,
                robots: spec.robots,
                iters,
                f,
                reference: reference.map(|r| r.value),
                gap,
                relative_gap: reference.map(|r| (f - r.value) / r.value),
                rank: 0,
                trace: trace.clone(),
            });
        }
    }
    let snapshot = entries.clone();
    for e in &mut entries {
        e.rank = 1 + snapshot
            .iter()
            .filter(|o| o.iters == e.iters && o.f < e.f)
            .count();
    }

    let report = BenchmarkReport {
        dataset: spec.dataset.name(),
        num_poses: g.num_poses(),
        num_edges: g.edges().len(),
        robots: spec.robots,
        reference,
        initial_f,
        entries,
        rmse,
    };
    if let Some(dir) = &spec.out {
        save_json(dir.join("summary.json"), &report)?;
        std::fs::write(dir.join("summary.txt"), report.table())?;
    }
    Ok(report)
}
