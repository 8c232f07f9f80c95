//! MM-PGO and AMM-PGO outer loops on shared memory.
//!
//! Each robot's update only touches its own block, its `Γ̃^α`, and the
//! robot's columns of `∇F`; [`NodeState`] holds exactly that, so the
//! message-passing runtime reuses it unchanged.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{PgoError, Result};
use crate::graph::{PoseEstimate, PoseGraph};
use crate::local_solver::{minimize_node_surrogate, LocalSolveConfig, NodeMetric, NodeProblem};
use crate::manifold::{is_rotation, project_rotations_in_place, tangent_project, RotationBlock};
use crate::par::{with_threads, Execution};
use crate::quadratic::{
    anchor_value, build_data_matrix, build_majorant, surrogate_increment, DataMatrix,
};
use crate::sparse::Mat;

/// Default proximal weight `ξ`.
pub const DEFAULT_XI: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Mm,
    Amm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub xi: f64,
    pub iters: usize,
    pub local: LocalSolveConfig,
    /// Stop early once the Riemannian gradient norm drops below this (0 disables).
    pub grad_tol: f64,
    pub execution: Execution,
    /// Worker threads for the parallel policy (`None`: rayon's default).
    pub threads: Option<usize>,
    /// AMM only: keep `s = 1` for every robot, which reduces AMM to MM.
    pub freeze_momentum: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            xi: DEFAULT_XI,
            iters: 100,
            local: LocalSolveConfig::default(),
            grad_tol: 0.0,
            execution: Execution::default(),
            threads: None,
            freeze_momentum: false,
        }
    }
}

impl SolverConfig {
    pub fn with_iters(mut self, iters: usize) -> Self {
        self.iters = iters;
        self
    }

    pub fn with_xi(mut self, xi: f64) -> Self {
        self.xi = xi;
        self
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }
}

/// One row of a convergence trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub k: usize,
    #[serde(rename = "F")]
    pub f: f64,
    pub grad_norm: f64,
    pub wall_ms: f64,
    /// Bytes of separator messages exchanged in this round.
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    IterationBudget,
    GradientTolerance,
}

#[derive(Debug, Clone)]
pub struct SolverRun {
    pub x: PoseEstimate,
    pub iterations: usize,
    pub records: Vec<RunRecord>,
    pub termination: Termination,
    /// `‖X^{(k+1)} − X^{(k)}‖` per iteration.
    pub step_norms: Vec<f64>,
    /// AMM restarts summed over robots and iterations.
    pub restarts: usize,
    /// Local solves that stopped on their iteration cap.
    pub capped_local_solves: usize,
}

impl SolverRun {
    pub fn final_objective(&self) -> f64 {
        self.records.last().map(|r| r.f).unwrap_or(f64::NAN)
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.f).collect()
    }

    /// Bytes exchanged per round, starting with round 1.
    pub fn communication_volume(&self) -> Vec<u64> {
        self.records.iter().skip(1).map(|r| r.bytes).collect()
    }
}

/// Outcome of one robot's update.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct StepInfo {
    pub restarted: bool,
    pub capped: usize,
}

/// Everything robot `α` keeps between rounds.
#[derive(Debug)]
pub(crate) struct NodeState {
    pub robot: usize,
    pub d: usize,
    pub metric: NodeMetric,
    pub x: Mat,
    pub grad: Mat,
    x_prev: Mat,
    grad_prev: Mat,
    s: f64,
}

impl NodeState {
    pub fn new(robot: usize, d: usize, metric: NodeMetric, x: Mat, grad: Mat) -> Self {
        NodeState {
            robot,
            d,
            metric,
            x_prev: x.clone(),
            grad_prev: grad.clone(),
            x,
            grad,
            s: 1.0,
        }
    }

    fn solve(&self, anchor: &Mat, grad: &Mat, start: &Mat, cfg: &LocalSolveConfig) -> Result<(Mat, usize)> {
        let problem = NodeProblem {
            d: self.d,
            metric: &self.metric,
            anchor,
            grad,
        };
        let res = minimize_node_surrogate(self.robot, start, &problem, cfg)?;
        Ok((res.x, usize::from(res.hit_cap)))
    }

    /// Computes `X^{α(k+1)}` from the current block and gradient.
    pub fn step(&mut self, algorithm: Algorithm, cfg: &SolverConfig) -> Result<StepInfo> {
        let next = match algorithm {
            Algorithm::Mm => {
                let (x, capped) = self.solve(&self.x, &self.grad, &self.x, &cfg.local)?;
                (x, StepInfo { restarted: false, capped })
            }
            Algorithm::Amm => self.accelerated(cfg)?,
        };
        self.x_prev = std::mem::replace(&mut self.x, next.0);
        Ok(next.1)
    }

    fn accelerated(&mut self, cfg: &SolverConfig) -> Result<(Mat, StepInfo)> {
        let s = self.s;
        let mut s_next = if cfg.freeze_momentum {
            1.0
        } else {
            ((4.0 * s * s + 1.0).sqrt() + 1.0) / 2.0
        };
        let gamma = (s - 1.0) / s_next;
        let mut info = StepInfo::default();

        let z = if gamma == 0.0 {
            let (z, c) = self.solve(&self.x, &self.grad, &self.x, &cfg.local)?;
            info.capped += c;
            z
        } else {
            let y = &self.x + (&self.x - &self.x_prev) * gamma;
            let gy = &self.grad + (&self.grad - &self.grad_prev) * gamma;
            let mut start = y.clone();
            let n = start.ncols() / (self.d + 1);
            if project_rotations_in_place(&mut start, n, self.d).is_err() {
                start = self.x.clone();
            }
            let (z, c) = self.solve(&y, &gy, &start, &cfg.local)?;
            info.capped += c;
            z
        };

        // Restart when G^α(Z|X^{(k)}) exceeds Ḡ^{α(k)}.
        let excess = surrogate_increment(&self.metric.gamma, &self.x, &self.grad, &z);
        let z = if excess > 0.0 {
            info.restarted = true;
            s_next = (0.5 * s_next).max(1.0);
            let (x, c) = self.solve(&self.x, &self.grad, &self.x, &cfg.local)?;
            info.capped += c;
            x
        } else {
            z
        };
        self.s = s_next;
        Ok((z, info))
    }

    /// Installs `∇_α F(X^{(k+1)})` after the gradient refresh.
    pub fn set_gradient(&mut self, grad: Mat) {
        self.grad_prev = std::mem::replace(&mut self.grad, grad);
    }

    /// `‖grad_α F‖²` at the current block.
    pub fn riemannian_gradient_sq(&self) -> Result<f64> {
        Ok(tangent_project(&self.x, &self.grad, self.d)?.norm_squared())
    }

    pub fn step_sq(&self) -> f64 {
        (&self.x - &self.x_prev).norm_squared()
    }
}

/// Checks that `x0` fits the graph and lies on the manifold.
pub(crate) fn check_initial(g: &PoseGraph, x0: &PoseEstimate) -> Result<()> {
    if x0.layout() != g.layout() {
        return Err(PgoError::DimensionMismatch(
            "initial estimate layout does not match the graph".into(),
        ));
    }
    let layout = g.layout();
    let d = g.d();
    for a in 0..layout.robots() {
        let n = layout.count(a);
        let blk = x0.block_matrix(a);
        for i in 0..n {
            let r = blk.columns(n + d * i, d).into_owned();
            if !is_rotation(&r, RotationBlock::TOLERANCE) {
                return Err(PgoError::InvalidParameter(format!(
                    "initial rotation of pose ({a}, {i}) is not in SO({d})"
                )));
            }
        }
    }
    if !x0.matrix().iter().all(|v| v.is_finite()) {
        return Err(PgoError::InvalidParameter("initial estimate is not finite".into()));
    }
    Ok(())
}

/// Builds every robot's state at `X^{(0)}`.
pub(crate) fn init_nodes(
    g: &PoseGraph,
    dm: &DataMatrix,
    x0: &Mat,
    xi: f64,
    execution: Execution,
) -> Result<Vec<NodeState>> {
    let maj = build_majorant(g, xi)?;
    let layout = g.layout();
    let d = g.d();
    let gammas = maj.gamma;
    let nodes: Vec<Result<NodeState>> = execution.map_indices(layout.robots(), |a| {
        let metric = NodeMetric::new(gammas[a].clone())?;
        let x = x0
            .columns(layout.block_offset(a), layout.block_width(a))
            .into_owned();
        let grad = dm.robot_gradient(x0, a);
        Ok(NodeState::new(a, d, metric, x, grad))
    });
    nodes.into_iter().collect()
}

/// `(F, ‖grad F‖)` from per-robot contributions, summed in robot order.
pub(crate) fn assemble_metrics(parts: &[(f64, f64)]) -> (f64, f64) {
    let f = parts.iter().map(|p| p.0).sum();
    let g: f64 = parts.iter().map(|p| p.1).sum();
    (f, g.sqrt())
}

fn write_blocks(g: &PoseGraph, nodes: &[NodeState], x: &mut Mat) {
    let layout = g.layout();
    for n in nodes {
        x.columns_mut(layout.block_offset(n.robot), layout.block_width(n.robot))
            .copy_from(&n.x);
    }
}

/// Runs MM-PGO or AMM-PGO from `x0` in shared memory.
pub fn run_shared(
    g: &PoseGraph,
    x0: &PoseEstimate,
    algorithm: Algorithm,
    cfg: &SolverConfig,
) -> Result<SolverRun> {
    cfg.local.validate()?;
    check_initial(g, x0)?;
    with_threads(cfg.threads, || run_shared_inner(g, x0, algorithm, cfg))
}

fn run_shared_inner(
    g: &PoseGraph,
    x0: &PoseEstimate,
    algorithm: Algorithm,
    cfg: &SolverConfig,
) -> Result<SolverRun> {
    let exec = cfg.execution;
    let clock = Instant::now();
    let dm = build_data_matrix(g);
    let mut x = x0.matrix().clone();
    let mut nodes = init_nodes(g, &dm, &x, cfg.xi, exec)?;

    let metrics = |nodes: &[NodeState], x: &Mat| -> Result<(f64, f64)> {
        let parts: Vec<Result<(f64, f64)>> = exec.map_indices(nodes.len(), |a| {
            Ok((anchor_value(g, x, a), nodes[a].riemannian_gradient_sq()?))
        });
        let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
        Ok(assemble_metrics(&parts))
    };

    let (f0, g0) = metrics(&nodes, &x)?;
    let mut records = vec![RunRecord {
        k: 0,
        f: f0,
        grad_norm: g0,
        wall_ms: clock.elapsed().as_secs_f64() * 1e3,
        bytes: 0,
    }];
    let mut run = SolverRun {
        x: x0.clone(),
        iterations: 0,
        records: Vec::new(),
        termination: Termination::IterationBudget,
        step_norms: Vec::new(),
        restarts: 0,
        capped_local_solves: 0,
    };
    if cfg.grad_tol > 0.0 && g0 < cfg.grad_tol {
        run.termination = Termination::GradientTolerance;
    }

    let mut k = 0;
    while k < cfg.iters && run.termination == Termination::IterationBudget {
        let infos = exec.map_mut(&mut nodes, |_, node| node.step(algorithm, cfg));
        for info in infos {
            let info = info.map_err(|e| e.at_iteration(k))?;
            run.restarts += usize::from(info.restarted);
            run.capped_local_solves += info.capped;
        }
        write_blocks(g, &nodes, &mut x);
        let grads = exec.map_indices(nodes.len(), |a| dm.robot_gradient(&x, a));
        for (node, grad) in nodes.iter_mut().zip(grads) {
            node.set_gradient(grad);
        }
        k += 1;
        let (f, gn) = metrics(&nodes, &x).map_err(|e| e.at_iteration(k))?;
        if !f.is_finite() {
            return Err(PgoError::numerical("objective became non-finite").at_iteration(k));
        }
        run.step_norms
            .push(nodes.iter().map(NodeState::step_sq).sum::<f64>().sqrt());
        records.push(RunRecord {
            k,
            f,
            grad_norm: gn,
            wall_ms: clock.elapsed().as_secs_f64() * 1e3,
            bytes: 0,
        });
        if cfg.grad_tol > 0.0 && gn < cfg.grad_tol {
            run.termination = Termination::GradientTolerance;
        }
    }
    run.iterations = k;
    run.records = records;
    run.x = PoseEstimate::new_unchecked(g.layout().clone(), x)?;
    Ok(run)
}

/// MM-PGO.
pub fn mm_pgo(g: &PoseGraph, x0: &PoseEstimate, cfg: &SolverConfig) -> Result<SolverRun> {
    run_shared(g, x0, Algorithm::Mm, cfg)
}

/// AMM-PGO (Nesterov momentum with adaptive restart).
pub fn amm_pgo(g: &PoseGraph, x0: &PoseEstimate, cfg: &SolverConfig) -> Result<SolverRun> {
    run_shared(g, x0, Algorithm::Amm, cfg)
}

/// `‖grad F(X)‖`, the Frobenius norm of the Riemannian gradient of `F` at `X`.
pub fn gradient_norm(g: &PoseGraph, x: &PoseEstimate) -> Result<f64> {
    let dm = build_data_matrix(g);
    gradient_norm_with(&dm, x.matrix(), g.d())
}

pub fn gradient_norm_with(dm: &DataMatrix, x: &Mat, d: usize) -> Result<f64> {
    let egrad = dm.gradient(x);
    let layout = &dm.layout;
    let mut total = 0.0;
    for a in 0..layout.robots() {
        let (off, w) = (layout.block_offset(a), layout.block_width(a));
        let xa = x.columns(off, w).into_owned();
        let ga = egrad.columns(off, w).into_owned();
        total += tangent_project(&xa, &ga, d)?.norm_squared();
    }
    Ok(total.sqrt())
}
