//! Distributed chordal initialization.
//!
//! Rotations are first estimated on the convex relaxation `ℝ^{d×dn}` with
//! pose `(0, 0)` fixed to the identity, then projected blockwise onto SO(d).
//! Translations follow from the convex least-squares problem with the
//! projected rotations held fixed and `t_(0,0) = 0`. Both convex problems are
//! solved by the same accelerated MM loop: each robot minimizes its separable
//! quadratic surrogate exactly with one sparse solve.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{PgoError, Result};
use crate::graph::{Layout, PoseEstimate, PoseGraph, PoseId};
use crate::manifold::project_to_rotation;
use crate::par::{with_threads, Execution};
use crate::quadratic::{
    anchor_value_terms, build_data_matrix_terms, build_majorant_terms, DataMatrix, Terms,
};
use crate::solvers::RunRecord;
use crate::sparse::{Mat, SpdFactor, SymSparse};

/// Proximal shift applied when a robot's subproblem turns out singular.
pub const SINGULAR_XI_BUMP: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChordalConfig {
    pub xi: f64,
    pub rotation_iters: usize,
    pub translation_iters: usize,
    pub execution: Execution,
    pub threads: Option<usize>,
}

impl Default for ChordalConfig {
    fn default() -> Self {
        ChordalConfig {
            xi: 0.0,
            rotation_iters: 200,
            translation_iters: 200,
            execution: Execution::default(),
            threads: None,
        }
    }
}

/// Which convex problem a stage solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Stage {
    Rotation,
    Translation,
}

impl Stage {
    pub fn terms(self) -> Terms {
        match self {
            Stage::Rotation => Terms::Rotation,
            Stage::Translation => Terms::Translation,
        }
    }

    /// Local columns robot `α` optimizes in this stage (anchor excluded).
    pub fn free_columns(self, layout: &Layout, robot: usize) -> Vec<usize> {
        let n = layout.count(robot);
        let d = layout.d();
        let skip = usize::from(robot == 0);
        match self {
            Stage::Rotation => (skip..n)
                .flat_map(|i| (0..d).map(move |c| n + d * i + c))
                .collect(),
            Stage::Translation => (skip..n).collect(),
        }
    }
}

/// One robot of the accelerated convex MM loop.
#[derive(Debug)]
pub(crate) struct ConvexNode {
    pub robot: usize,
    free: Vec<usize>,
    factor: SpdFactor,
    pub x: Mat,
    pub grad: Mat,
    x_prev: Mat,
    grad_prev: Mat,
    s: f64,
}

impl ConvexNode {
    pub fn new(robot: usize, gamma: &SymSparse, free: Vec<usize>, x: Mat, grad: Mat) -> Result<Self> {
        let sub = gamma.submatrix(&free);
        let factor = match SpdFactor::new(&sub) {
            Ok(f) => f,
            Err(_) => SpdFactor::new(&sub.shifted(SINGULAR_XI_BUMP))
                .map_err(|_| PgoError::SingularSubproblem { robot })?,
        };
        Ok(ConvexNode {
            robot,
            free,
            factor,
            x_prev: x.clone(),
            grad_prev: grad.clone(),
            x,
            grad,
            s: 1.0,
        })
    }

    fn gather(&self, m: &Mat) -> Mat {
        m.select_columns(&self.free)
    }

    /// One accelerated step; the new block differs from the old one only on
    /// free columns.
    pub fn step(&mut self) {
        let s_next = ((4.0 * self.s * self.s + 1.0).sqrt() + 1.0) / 2.0;
        let gamma = (self.s - 1.0) / s_next;
        let x = self.gather(&self.x);
        let xp = self.gather(&self.x_prev);
        let g = self.gather(&self.grad);
        let gp = self.gather(&self.grad_prev);
        let y = &x + (&x - &xp) * gamma;
        let gy = &g + (&g - &gp) * gamma;
        let z = &y - self.factor.solve_rows(&gy);
        let mut next = self.x.clone();
        for (k, &c) in self.free.iter().enumerate() {
            next.column_mut(c).copy_from(&z.column(k));
        }
        self.x_prev = std::mem::replace(&mut self.x, next);
        self.s = s_next;
    }

    pub fn set_gradient(&mut self, grad: Mat) {
        self.grad_prev = std::mem::replace(&mut self.grad, grad);
    }

    /// Squared norm of the gradient restricted to free columns.
    pub fn grad_sq(&self) -> f64 {
        self.free
            .iter()
            .map(|&c| self.grad.column(c).norm_squared())
            .sum()
    }
}

pub(crate) struct ConvexSetup {
    pub dm: DataMatrix,
    pub nodes: Vec<ConvexNode>,
}

pub(crate) fn setup_stage(
    g: &PoseGraph,
    stage: Stage,
    x0: &Mat,
    xi: f64,
    exec: Execution,
) -> Result<ConvexSetup> {
    let terms = stage.terms();
    let dm = build_data_matrix_terms(g, terms);
    let maj = build_majorant_terms(g, xi, terms)?;
    let layout = g.layout();
    let nodes: Vec<Result<ConvexNode>> = exec.map_indices(layout.robots(), |a| {
        let x = x0
            .columns(layout.block_offset(a), layout.block_width(a))
            .into_owned();
        let grad = dm.robot_gradient(x0, a);
        ConvexNode::new(a, &maj.gamma[a], stage.free_columns(layout, a), x, grad)
    });
    Ok(ConvexSetup {
        nodes: nodes.into_iter().collect::<Result<_>>()?,
        dm,
    })
}

/// Per-robot `(objective share, squared gradient)`.
pub(crate) fn convex_metrics(g: &PoseGraph, stage: Stage, x: &Mat, node: &ConvexNode) -> (f64, f64) {
    (anchor_value_terms(g, x, node.robot, stage.terms()), node.grad_sq())
}

fn run_stage(
    g: &PoseGraph,
    stage: Stage,
    x0: Mat,
    xi: f64,
    iters: usize,
    exec: Execution,
) -> Result<(Vec<RunRecord>, Mat)> {
    let clock = Instant::now();
    let layout = g.layout();
    let ConvexSetup { dm, mut nodes } = setup_stage(g, stage, &x0, xi, exec)?;
    let mut x = x0;
    let record = |k: usize, nodes: &[ConvexNode], x: &Mat| {
        let parts = exec.map_indices(nodes.len(), |a| convex_metrics(g, stage, x, &nodes[a]));
        let (f, gn) = crate::solvers::assemble_metrics(&parts);
        RunRecord {
            k,
            f,
            grad_norm: gn,
            wall_ms: clock.elapsed().as_secs_f64() * 1e3,
            bytes: 0,
        }
    };
    let mut records = vec![record(0, &nodes, &x)];
    for k in 1..=iters {
        exec.for_each_mut(&mut nodes, |_, n| n.step());
        for n in &nodes {
            x.columns_mut(layout.block_offset(n.robot), layout.block_width(n.robot))
                .copy_from(&n.x);
        }
        let grads = exec.map_indices(nodes.len(), |a| dm.robot_gradient(&x, a));
        for (n, gr) in nodes.iter_mut().zip(grads) {
            n.set_gradient(gr);
        }
        let rec = record(k, &nodes, &x);
        if !rec.f.is_finite() {
            return Err(PgoError::numerical("chordal objective became non-finite").at_iteration(k));
        }
        records.push(rec);
    }
    Ok((records, x))
}

/// Embeds relaxed rotations (`d × dn`, robot-major pose order) and optional
/// translations (`d × n`) into the stacked layout.
pub fn embed(layout: &Layout, r: &Mat, t: Option<&Mat>) -> Result<Mat> {
    let d = layout.d();
    let n = layout.total_poses();
    if r.shape() != (d, d * n) || t.is_some_and(|t| t.shape() != (d, n)) {
        return Err(PgoError::DimensionMismatch(format!(
            "relaxed rotations {:?} for {n} poses in dimension {d}",
            r.shape()
        )));
    }
    let mut x = Mat::zeros(d, layout.dim());
    for k in 0..n {
        let p = layout.pose_at(k);
        x.columns_mut(layout.r_col(p), d)
            .copy_from(&r.columns(d * k, d));
        if let Some(t) = t {
            x.column_mut(layout.t_col(p)).copy_from(&t.column(k));
        }
    }
    Ok(x)
}

/// Inverse of [`embed`]: `(R, t)` in robot-major pose order.
pub fn split(layout: &Layout, x: &Mat) -> (Mat, Mat) {
    let d = layout.d();
    let n = layout.total_poses();
    let mut r = Mat::zeros(d, d * n);
    let mut t = Mat::zeros(d, n);
    for k in 0..n {
        let p = layout.pose_at(k);
        r.columns_mut(d * k, d)
            .copy_from(&x.columns(layout.r_col(p), d));
        t.column_mut(k).copy_from(&x.column(layout.t_col(p)));
    }
    (r, t)
}

/// Identity rotation blocks for every pose.
pub fn identity_rotations(d: usize, n: usize) -> Mat {
    let mut r = Mat::zeros(d, d * n);
    for k in 0..n {
        r.columns_mut(d * k, d).fill_with_identity();
    }
    r
}

/// `F_R(R) = Σ ½κ‖R_i R̃ − R_j‖²` over all measurements.
pub fn rotation_objective(g: &PoseGraph, r: &Mat) -> Result<f64> {
    let x = embed(g.layout(), r, None)?;
    Ok(crate::quadratic::objective_edge_sum_terms(g, &x, Terms::Rotation))
}

/// `F_t(t) = Σ ½τ‖R_i t̃ + t_i − t_j‖²` with rotations `r` held fixed.
pub fn translation_objective(g: &PoseGraph, r: &Mat, t: &Mat) -> Result<f64> {
    let x = embed(g.layout(), r, Some(t))?;
    Ok(crate::quadratic::objective_edge_sum_terms(g, &x, Terms::Translation))
}

fn check_anchor_rotation(r: &Mat, d: usize) -> Result<()> {
    if r.columns(0, d) != Mat::identity(d, d) {
        return Err(PgoError::InvalidParameter(
            "the anchor rotation block must be the identity".into(),
        ));
    }
    Ok(())
}

/// Accelerated MM on the rotation relaxation from `r0`.
/// Returns the trace of `F_R` and the relaxed minimizer estimate.
pub fn amm_chordal(g: &PoseGraph, r0: &Mat, cfg: &ChordalConfig) -> Result<(Vec<RunRecord>, Mat)> {
    check_anchor_rotation(r0, g.d())?;
    let x0 = embed(g.layout(), r0, None)?;
    let (trace, x) = with_threads(cfg.threads, || {
        run_stage(g, Stage::Rotation, x0, cfg.xi, cfg.rotation_iters, cfg.execution)
    })?;
    Ok((trace, split(g.layout(), &x).0))
}

/// Blockwise closest rotations.
pub fn project_rotations(r: &Mat, d: usize) -> Result<Mat> {
    let mut out = r.clone();
    for k in 0..r.ncols() / d {
        let blk = project_to_rotation(&r.columns(d * k, d).into_owned()).map_err(|e| match e {
            PgoError::DegenerateProjection { .. } => PgoError::DegenerateProjection { pose: Some(k) },
            other => other,
        })?;
        out.columns_mut(d * k, d).copy_from(&blk);
    }
    Ok(out)
}

/// Projects robot `α`'s rotation blocks (local layout) onto SO(d). The
/// anchor block is reset to the exact identity.
pub(crate) fn project_block(layout: &Layout, robot: usize, block: &mut Mat) -> Result<()> {
    let d = layout.d();
    let n = layout.count(robot);
    for i in 0..n {
        let c = n + d * i;
        let r = project_to_rotation(&block.columns(c, d).into_owned()).map_err(|e| match e {
            PgoError::DegenerateProjection { .. } => PgoError::DegenerateProjection {
                pose: Some(layout.global_index(PoseId::new(robot, i))),
            },
            other => other,
        })?;
        block.columns_mut(c, d).copy_from(&r);
    }
    if robot == 0 {
        block.columns_mut(n, d).fill_with_identity();
    }
    Ok(())
}

/// Accelerated MM for the translations given feasible rotations `r`
/// (`t` starts at zero, `t_(0,0) = 0` stays fixed).
pub fn translation_init(g: &PoseGraph, r: &Mat, cfg: &ChordalConfig) -> Result<(Vec<RunRecord>, Mat)> {
    let x0 = embed(g.layout(), r, None)?;
    let (trace, x) = with_threads(cfg.threads, || {
        run_stage(g, Stage::Translation, x0, cfg.xi, cfg.translation_iters, cfg.execution)
    })?;
    Ok((trace, split(g.layout(), &x).1))
}

#[derive(Debug, Clone)]
pub struct ChordalResult {
    pub estimate: PoseEstimate,
    pub rotation_trace: Vec<RunRecord>,
    pub translation_trace: Vec<RunRecord>,
}

/// Relaxed rotations → projection → translations, starting from identity
/// rotation blocks.
pub fn chordal_initialization(g: &PoseGraph, cfg: &ChordalConfig) -> Result<ChordalResult> {
    let d = g.d();
    let r0 = identity_rotations(d, g.num_poses());
    let (rotation_trace, relaxed) = amm_chordal(g, &r0, cfg)?;
    let mut r = project_rotations(&relaxed, d)?;
    // The anchor is exactly the identity already; keep it bit-exact.
    r.columns_mut(0, d).fill_with_identity();
    let (translation_trace, t) = translation_init(g, &r, cfg)?;
    let x = embed(g.layout(), &r, Some(&t))?;
    Ok(ChordalResult {
        estimate: PoseEstimate::new(g.layout().clone(), x)?,
        rotation_trace,
        translation_trace,
    })
}

/// The anchored pose.
pub const ANCHOR: PoseId = PoseId { robot: 0, index: 0 };

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Measurement;
    use crate::manifold::rotation_2d;
    use nalgebra::DVector;

    fn two_pose() -> PoseGraph {
        let m = Measurement::new(
            PoseId::new(0, 0),
            PoseId::new(0, 1),
            rotation_2d(0.5),
            DVector::from_row_slice(&[1.0, 0.0]),
            1.0,
            1.0,
        )
        .unwrap();
        PoseGraph::new(2, vec![2], vec![m]).unwrap()
    }

    #[test]
    fn single_edge_translation_is_fit_exactly() {
        let g = two_pose();
        let r = identity_rotations(2, 2);
        let cfg = ChordalConfig {
            translation_iters: 1,
            ..Default::default()
        };
        let (_, t) = translation_init(&g, &r, &cfg).unwrap();
        assert_eq!(t.column(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0]);
        assert!((t.column(1) - DVector::from_row_slice(&[1.0, 0.0])).norm() < 1e-12);
    }

    #[test]
    fn single_robot_rotation_solve_is_exact_in_one_step() {
        let g = two_pose();
        let cfg = ChordalConfig {
            rotation_iters: 1,
            ..Default::default()
        };
        let (trace, r) = amm_chordal(&g, &identity_rotations(2, 2), &cfg).unwrap();
        assert!(trace[1].f < 1e-24);
        assert!((r.columns(2, 2) - rotation_2d(0.5)).norm() < 1e-12);
    }

    #[test]
    fn anchor_must_be_identity() {
        let g = two_pose();
        let mut r0 = identity_rotations(2, 2);
        r0[(0, 0)] = 2.0;
        assert!(amm_chordal(&g, &r0, &ChordalConfig::default()).is_err());
    }

    #[test]
    fn free_columns_skip_the_anchor() {
        let l = Layout::new(2, vec![2, 1]);
        assert_eq!(Stage::Rotation.free_columns(&l, 0), vec![4, 5]);
        assert_eq!(Stage::Translation.free_columns(&l, 0), vec![1]);
        assert_eq!(Stage::Translation.free_columns(&l, 1), vec![0]);
    }
}
