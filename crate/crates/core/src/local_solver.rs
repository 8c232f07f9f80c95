//! Per-robot surrogate minimization
//!
//! ```text
//! min_{Z ∈ ℝ^{d×n_α} × SO(d)^{n_α}}  ⟨∇, Z − A⟩ + ½⟨(Z − A)Γ̃^α, Z − A⟩
//! ```
//!
//! where `A` is the anchor block and `∇` the robot's columns of `∇F(A)`.
//! The default method is a Riemannian trust-region solver whose truncated CG
//! is preconditioned by a factorization of `Γ̃^α`; a preconditioned Riemannian
//! gradient descent with Armijo backtracking is kept as a simpler alternative.
//! Both accept only steps that strictly decrease the surrogate, so the result
//! is never worse than the starting point.

use serde::{Deserialize, Serialize};

use crate::error::{PgoError, Result};
use crate::manifold::{retract, tangent_project};
use crate::sparse::{Mat, SpdFactor, SymSparse};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LocalMethod {
    #[default]
    TrustRegion,
    GradientDescent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Armijo {
    pub initial_step: f64,
    pub shrink: f64,
    pub sufficient_decrease: f64,
}

impl Default for Armijo {
    fn default() -> Self {
        Armijo {
            initial_step: 1.0,
            shrink: 0.5,
            sufficient_decrease: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalSolveConfig {
    pub method: LocalMethod,
    /// Stop once `‖grad‖ ≤ max(grad_tol_abs, grad_tol_rel · ‖grad(start)‖)`
    /// or the gradient reaches the rounding floor of the subproblem.
    pub grad_tol_abs: f64,
    pub grad_tol_rel: f64,
    pub max_inner_iters: usize,
    /// Cap on truncated-CG iterations per trust-region step.
    pub max_cg_iters: usize,
    pub armijo: Armijo,
}

impl Default for LocalSolveConfig {
    fn default() -> Self {
        LocalSolveConfig {
            method: LocalMethod::TrustRegion,
            grad_tol_abs: 1e-10,
            grad_tol_rel: 1e-6,
            max_inner_iters: 50,
            max_cg_iters: 200,
            armijo: Armijo::default(),
        }
    }
}

impl LocalSolveConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.armijo;
        let ok = self.grad_tol_abs >= 0.0
            && self.grad_tol_rel >= 0.0
            && self.max_inner_iters > 0
            && self.max_cg_iters > 0
            && a.initial_step > 0.0
            && a.shrink > 0.0
            && a.shrink < 1.0
            && a.sufficient_decrease > 0.0
            && a.sufficient_decrease <= 0.5;
        if ok {
            Ok(())
        } else {
            Err(PgoError::InvalidParameter(format!("local solver config {self:?}")))
        }
    }
}

/// `Γ̃^α` with its factorization, built once per robot per run.
#[derive(Debug)]
pub struct NodeMetric {
    pub gamma: SymSparse,
    factor: SpdFactor,
}

impl NodeMetric {
    /// Factors `Γ̃^α`, adding a tiny diagonal shift to the preconditioner
    /// only when `Γ̃^α` is singular (possible when `ξ = 0`).
    pub fn new(gamma: SymSparse) -> Result<Self> {
        let factor = match SpdFactor::new(&gamma) {
            Ok(f) => f,
            Err(_) => {
                let shift = 1e-10 * gamma.max_diag().max(1.0);
                SpdFactor::new(&gamma.shifted(shift))?
            }
        };
        Ok(NodeMetric { gamma, factor })
    }

    pub fn dim(&self) -> usize {
        self.gamma.dim()
    }

    /// Gradient norm below which rounding in `ZΓ̃` dominates, for iterates
    /// of the size of `z`.
    pub fn noise_floor(&self, z: &Mat) -> f64 {
        let scale = z.amax().max(1.0);
        64.0 * f64::EPSILON * self.gamma.max_diag() * scale * (z.len() as f64).sqrt()
    }

    /// `V Γ̃⁻¹` (row-wise solves).
    pub fn solve_rows(&self, v: &Mat) -> Mat {
        self.factor.solve_rows(v)
    }
}

/// One robot's subproblem: anchor `A` and the gradient `∇` at it.
#[derive(Debug, Clone, Copy)]
pub struct NodeProblem<'a> {
    pub d: usize,
    pub metric: &'a NodeMetric,
    pub anchor: &'a Mat,
    pub grad: &'a Mat,
}

impl NodeProblem<'_> {
    /// Surrogate value minus its value at the anchor.
    pub fn value(&self, z: &Mat) -> f64 {
        let diff = z - self.anchor;
        self.grad.dot(&diff) + 0.5 * self.metric.gamma.quadratic(&diff)
    }

    /// Euclidean gradient `∇ + (Z − A)Γ̃`.
    pub fn euclidean_gradient(&self, z: &Mat) -> Mat {
        let diff = z - self.anchor;
        self.grad + self.metric.gamma.right_mul(&diff)
    }

    /// `G(Z + S) − G(Z)` evaluated without cancellation against the anchor.
    fn change(&self, egrad: &Mat, step: &Mat) -> f64 {
        egrad.dot(step) + 0.5 * self.metric.gamma.quadratic(step)
    }

    pub fn riemannian_gradient_norm(&self, z: &Mat) -> Result<f64> {
        Ok(tangent_project(z, &self.euclidean_gradient(z), self.d)?.norm())
    }
}

#[derive(Debug, Clone)]
pub struct LocalSolveResult {
    pub x: Mat,
    /// `G(x) − G(start)`; positive only by rounding.
    pub change: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    /// The gradient tolerance was met.
    pub converged: bool,
    /// Stopped on the iteration cap without meeting the tolerance.
    pub hit_cap: bool,
}

fn check_finite(m: &Mat, robot: usize, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        return Ok(());
    }
    let dump: Vec<f64> = m.iter().copied().take(48).collect();
    Err(PgoError::NumericalFailure {
        iteration: None,
        robot: Some(robot),
        message: format!(
            "non-finite {what} ({}x{}); leading entries {dump:?}",
            m.nrows(),
            m.ncols()
        ),
    })
}

/// Minimizes the robot's surrogate starting from `start` (which must lie on
/// the manifold).
pub fn minimize_node_surrogate(
    robot: usize,
    start: &Mat,
    problem: &NodeProblem<'_>,
    cfg: &LocalSolveConfig,
) -> Result<LocalSolveResult> {
    if start.shape() != problem.anchor.shape() || start.ncols() != problem.metric.dim() {
        return Err(PgoError::DimensionMismatch(format!(
            "robot {robot}: start {:?}, anchor {:?}, metric {}",
            start.shape(),
            problem.anchor.shape(),
            problem.metric.dim()
        )));
    }
    check_finite(start, robot, "start iterate")?;
    check_finite(problem.grad, robot, "anchor gradient")?;
    match cfg.method {
        LocalMethod::TrustRegion => trust_region(robot, start, problem, cfg),
        LocalMethod::GradientDescent => gradient_descent(robot, start, problem, cfg),
    }
}

struct Point {
    z: Mat,
    egrad: Mat,
    rgrad: Mat,
    norm: f64,
}

fn point(robot: usize, z: Mat, p: &NodeProblem<'_>) -> Result<Point> {
    let egrad = p.euclidean_gradient(&z);
    check_finite(&egrad, robot, "surrogate gradient")?;
    let rgrad = tangent_project(&z, &egrad, p.d)?;
    let norm = rgrad.norm();
    Ok(Point {
        z,
        egrad,
        rgrad,
        norm,
    })
}

fn precondition(p: &NodeProblem<'_>, z: &Mat, r: &Mat) -> Result<Mat> {
    tangent_project(z, &p.metric.solve_rows(r), p.d)
}

/// Per-pose `sym(Z_iᵀ G_i)` of the rotation blocks.
fn curvature_terms(z: &Mat, egrad: &Mat, d: usize) -> Vec<Mat> {
    let n = z.ncols() / (d + 1);
    (0..n)
        .map(|i| {
            let c = n + d * i;
            let s = z.columns(c, d).transpose() * egrad.columns(c, d);
            (&s + s.transpose()) * 0.5
        })
        .collect()
}

/// Riemannian Hessian of the surrogate applied to a tangent vector.
fn hessian(p: &NodeProblem<'_>, z: &Mat, sym: &[Mat], v: &Mat) -> Result<Mat> {
    let d = p.d;
    let n = z.ncols() / (d + 1);
    let mut h = p.metric.gamma.right_mul(v);
    for (i, s) in sym.iter().enumerate() {
        let c = n + d * i;
        let w = v.columns(c, d) * s;
        let mut dst = h.columns_mut(c, d);
        dst -= w;
    }
    tangent_project(z, &h, d)
}

struct CgOutcome {
    eta: Mat,
    h_eta: Mat,
    on_boundary: bool,
}

/// Steihaug–Toint truncated CG in the preconditioned metric.
fn truncated_cg(
    p: &NodeProblem<'_>,
    pt: &Point,
    sym: &[Mat],
    radius: f64,
    max_iters: usize,
    reference: f64,
) -> Result<CgOutcome> {
    let z = &pt.z;
    let mut eta = Mat::zeros(z.nrows(), z.ncols());
    let mut h_eta = eta.clone();
    let mut r = pt.rgrad.clone();
    let r0 = pt.norm;
    let target = r0 * (r0 / reference.max(f64::MIN_POSITIVE)).sqrt().min(0.1);
    let mut zr = precondition(p, z, &r)?;
    let mut z_r = zr.dot(&r);
    let mut delta = -&zr;
    let mut d_pd = z_r;
    let mut e_pd = 0.0;
    let mut e_pe = 0.0;
    let r2 = radius * radius;

    for _ in 0..max_iters {
        let hd = hessian(p, z, sym, &delta)?;
        let d_hd = delta.dot(&hd);
        let alpha = z_r / d_hd;
        let e_pe_new = e_pe + 2.0 * alpha * e_pd + alpha * alpha * d_pd;
        if d_hd <= 0.0 || !alpha.is_finite() || e_pe_new >= r2 {
            let disc = (e_pd * e_pd + d_pd * (r2 - e_pe)).max(0.0);
            let tau = (-e_pd + disc.sqrt()) / d_pd;
            eta += &delta * tau;
            h_eta += &hd * tau;
            return Ok(CgOutcome {
                eta,
                h_eta,
                on_boundary: true,
            });
        }
        e_pe = e_pe_new;
        eta += &delta * alpha;
        h_eta += &hd * alpha;
        r += &hd * alpha;
        r = tangent_project(z, &r, p.d)?;
        if r.norm() <= target {
            break;
        }
        zr = precondition(p, z, &r)?;
        let z_r_old = z_r;
        z_r = zr.dot(&r);
        let beta = z_r / z_r_old;
        delta = &delta * beta - &zr;
        e_pd = beta * (e_pd + alpha * d_pd);
        d_pd = z_r + beta * beta * d_pd;
    }
    Ok(CgOutcome {
        eta,
        h_eta,
        on_boundary: false,
    })
}

/// Rounding bound for `G(Z + S) − G(Z)` computed by `NodeProblem::change`.
fn change_noise(egrad: &Mat, z: &Mat, step: &Mat) -> f64 {
    let mag: f64 = egrad
        .iter()
        .zip(z.iter().zip(step.iter()))
        .map(|(g, (z, s))| g.abs() * (z.abs() + s.abs()))
        .sum();
    8.0 * f64::EPSILON * mag
}

fn trust_region(
    robot: usize,
    start: &Mat,
    p: &NodeProblem<'_>,
    cfg: &LocalSolveConfig,
) -> Result<LocalSolveResult> {
    let mut pt = point(robot, start.clone(), p)?;
    let tol = cfg
        .grad_tol_abs
        .max(cfg.grad_tol_rel * pt.norm)
        .max(p.metric.noise_floor(start));
    let reference = pt.norm;
    let mut change = 0.0;
    let mut radius = {
        let pg = precondition(p, &pt.z, &pt.rgrad)?;
        2.0 * pg.dot(&pt.rgrad).max(0.0).sqrt()
    };
    let radius_max = 1e3 * radius.max(f64::MIN_POSITIVE);
    let tangent_dim = pt.z.nrows() * pt.z.ncols();
    let mut iterations = 0;
    let mut stalled = 0;

    while pt.norm > tol && iterations < cfg.max_inner_iters && radius > 0.0 {
        iterations += 1;
        let sym = curvature_terms(&pt.z, &pt.egrad, p.d);
        let cg = truncated_cg(
            p,
            &pt,
            &sym,
            radius,
            cfg.max_cg_iters.min(tangent_dim),
            reference,
        )?;
        let model = -(pt.rgrad.dot(&cg.eta) + 0.5 * cg.eta.dot(&cg.h_eta));
        let candidate = retract(&pt.z, &cg.eta, p.d)?;
        check_finite(&candidate, robot, "candidate iterate")?;
        let step = &candidate - &pt.z;
        let actual = -p.change(&pt.egrad, &step);
        // Near a critical point both decreases sink below the rounding
        // error of `actual`; regularizing the ratio keeps the model steps,
        // which still shrink the gradient.
        let noise = change_noise(&pt.egrad, &pt.z, &step);
        let rho = if model > 0.0 {
            (actual + noise) / (model + noise)
        } else {
            -1.0
        };

        if rho < 0.25 {
            radius *= 0.25;
        } else if rho > 0.75 && cg.on_boundary {
            radius = (2.0 * radius).min(radius_max);
        }
        if rho > 0.1 && actual > -noise {
            change -= actual;
            pt = point(robot, candidate, p)?;
            stalled = 0;
        } else {
            // Rejections of steps whose predicted gain is lost in rounding
            // mean nothing representable is left to gain.
            if model <= 100.0 * noise {
                stalled += 1;
            }
            if stalled >= 5 || radius < 1e-14 * reference.max(1e-300) {
                break;
            }
        }
    }
    let converged = pt.norm <= tol;
    Ok(LocalSolveResult {
        hit_cap: !converged && iterations >= cfg.max_inner_iters,
        grad_norm: pt.norm,
        x: pt.z,
        change,
        iterations,
        converged,
    })
}

fn gradient_descent(
    robot: usize,
    start: &Mat,
    p: &NodeProblem<'_>,
    cfg: &LocalSolveConfig,
) -> Result<LocalSolveResult> {
    let mut pt = point(robot, start.clone(), p)?;
    let tol = cfg
        .grad_tol_abs
        .max(cfg.grad_tol_rel * pt.norm)
        .max(p.metric.noise_floor(start));
    let mut change = 0.0;
    let mut iterations = 0;
    let a = cfg.armijo;

    'outer: while pt.norm > tol && iterations < cfg.max_inner_iters {
        iterations += 1;
        let dir = -precondition(p, &pt.z, &pt.rgrad)?;
        let slope = pt.rgrad.dot(&dir);
        if slope >= 0.0 {
            break;
        }
        let mut t = a.initial_step;
        for _ in 0..60 {
            let candidate = retract(&pt.z, &(&dir * t), p.d)?;
            check_finite(&candidate, robot, "candidate iterate")?;
            let step = &candidate - &pt.z;
            let delta = p.change(&pt.egrad, &step);
            if delta < 0.0 && delta <= a.sufficient_decrease * t * slope {
                change += delta;
                pt = point(robot, candidate, p)?;
                continue 'outer;
            }
            t *= a.shrink;
        }
        break;
    }
    let converged = pt.norm <= tol;
    Ok(LocalSolveResult {
        hit_cap: !converged && iterations >= cfg.max_inner_iters,
        grad_norm: pt.norm,
        x: pt.z,
        change,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{is_rotation, project_to_rotation, rotation_3d};
    use crate::sparse::Triplets;
    use nalgebra::Vector3;

    /// Single pose, `Γ = c·I`: the minimizer is `t = A_t − ∇_t/c` and
    /// `R = proj(A_R − ∇_R/c)`.
    fn isotropic(c: f64) -> NodeMetric {
        let mut t = Triplets::new(4);
        t.add_identity(0, 4, c);
        NodeMetric::new(t.build()).unwrap()
    }

    fn closed_form_case(method: LocalMethod) {
        let metric = isotropic(2.5);
        let anchor = {
            let mut a = Mat::zeros(3, 4);
            a.column_mut(0).copy_from_slice(&[0.3, -1.0, 2.0]);
            a.columns_mut(1, 3)
                .copy_from(&rotation_3d(&Vector3::new(1.0, 2.0, -0.5), 0.7));
            a
        };
        let grad = Mat::from_fn(3, 4, |r, c| ((r * 5 + c * 3) % 7) as f64 - 3.0);
        let p = NodeProblem {
            d: 3,
            metric: &metric,
            anchor: &anchor,
            grad: &grad,
        };
        let target = &anchor - &grad / 2.5;
        let r_star = project_to_rotation(&target.columns(1, 3).into_owned()).unwrap();
        let mut start = Mat::zeros(3, 4);
        start.columns_mut(1, 3).fill_with_identity();
        let cfg = LocalSolveConfig {
            method,
            grad_tol_rel: 1e-8,
            max_inner_iters: 2000,
            ..Default::default()
        };
        let res = minimize_node_surrogate(0, &start, &p, &cfg).unwrap();
        assert!(res.converged, "{method:?}: {res:?}");
        assert!((res.x.column(0) - target.column(0)).norm() < 1e-6);
        assert!(
            (res.x.columns(1, 3) - &r_star).norm() < 1e-6,
            "{method:?}: {} vs {r_star}",
            res.x
        );
        assert!(is_rotation(&res.x.columns(1, 3).into_owned(), 1e-12));
        assert!(res.change <= 0.0);
        assert!((res.change - (p.value(&res.x) - p.value(&start))).abs() < 1e-9);
    }

    #[test]
    fn trust_region_reaches_closed_form() {
        closed_form_case(LocalMethod::TrustRegion);
    }

    #[test]
    fn gradient_descent_reaches_closed_form() {
        closed_form_case(LocalMethod::GradientDescent);
    }

    #[test]
    fn critical_start_is_returned_unchanged() {
        let metric = isotropic(1.0);
        let mut anchor = Mat::zeros(3, 4);
        anchor.columns_mut(1, 3).fill_with_identity();
        let grad = Mat::zeros(3, 4);
        let p = NodeProblem {
            d: 3,
            metric: &metric,
            anchor: &anchor,
            grad: &grad,
        };
        let res = minimize_node_surrogate(0, &anchor, &p, &LocalSolveConfig::default()).unwrap();
        assert_eq!(res.x, anchor);
        assert_eq!(res.iterations, 0);
        assert!(res.converged);
    }

    #[test]
    fn non_finite_input_is_reported() {
        let metric = isotropic(1.0);
        let mut anchor = Mat::zeros(3, 4);
        anchor.columns_mut(1, 3).fill_with_identity();
        let mut grad = Mat::zeros(3, 4);
        grad[(0, 0)] = f64::NAN;
        let p = NodeProblem {
            d: 3,
            metric: &metric,
            anchor: &anchor,
            grad: &grad,
        };
        let err = minimize_node_surrogate(4, &anchor, &p, &LocalSolveConfig::default()).unwrap_err();
        assert!(matches!(err, PgoError::NumericalFailure { robot: Some(4), .. }));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut cfg = LocalSolveConfig::default();
        cfg.armijo.shrink = 1.0;
        assert!(cfg.validate().is_err());
        assert!(LocalSolveConfig::default().validate().is_ok());
    }
}
