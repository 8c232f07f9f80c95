//! Objective, data matrix, the separable majorant and the per-robot
//! surrogates built from it.
//!
//! Every function takes the stacked variable `X` as a `d × (d+1)n` matrix in
//! the graph's [`Layout`](crate::graph::Layout).

use crate::error::{PgoError, Result};
use crate::graph::{Layout, Measurement, PoseGraph, PoseId};
use crate::sparse::{Mat, SymSparse, Triplets};

/// Which residual families enter a quadratic form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Terms {
    /// Rotation and translation residuals (the PGO objective).
    #[default]
    All,
    /// `½κ‖R_i R̃ − R_j‖²` only (chordal rotation relaxation).
    Rotation,
    /// `½τ‖R_i t̃ + t_i − t_j‖²` only (translation recovery).
    Translation,
}

impl Terms {
    fn weights(self, m: &Measurement) -> (f64, f64) {
        match self {
            Terms::All => (m.kappa, m.tau),
            Terms::Rotation => (m.kappa, 0.0),
            Terms::Translation => (0.0, m.tau),
        }
    }
}

/// `M̃` with `F(X) = ½ trace(X M̃ Xᵀ)`.
#[derive(Debug, Clone)]
pub struct DataMatrix {
    pub layout: Layout,
    pub m: SymSparse,
}

impl DataMatrix {
    pub fn dim(&self) -> usize {
        self.m.dim()
    }

    /// `½ trace(X M̃ Xᵀ)`.
    pub fn objective(&self, x: &Mat) -> f64 {
        0.5 * self.m.quadratic(x)
    }

    /// `∇F(X) = X M̃`.
    pub fn gradient(&self, x: &Mat) -> Mat {
        self.m.right_mul(x)
    }

    /// Columns of `X M̃` belonging to robot `α`. Reads only robot `α`'s own
    /// columns and those of its neighbors' separator poses.
    pub fn robot_gradient(&self, x: &Mat, robot: usize) -> Mat {
        self.m.right_mul_cols(
            x,
            self.layout.block_offset(robot),
            self.layout.block_width(robot),
        )
    }
}

struct Cols {
    ti: usize,
    ri: usize,
    tj: usize,
    rj: usize,
}

fn cols(layout: &Layout, m: &Measurement) -> Cols {
    Cols {
        ti: layout.t_col(m.src),
        ri: layout.r_col(m.src),
        tj: layout.t_col(m.dst),
        rj: layout.r_col(m.dst),
    }
}

/// Adds `w · c cᵀ` where `c` has `t̃` on the `R_i` rows, `+1` at `t_i` and
/// `sign_j` at `t_j` (or nothing when `tj` is `None`).
fn add_translation_outer(
    t: &mut Triplets,
    trans: &nalgebra::DVector<f64>,
    ti: usize,
    ri: usize,
    tj: Option<(usize, f64)>,
    w: f64,
) {
    let d = trans.len();
    let mut entries: Vec<(usize, f64)> = Vec::with_capacity(d + 2);
    entries.extend((0..d).map(|a| (ri + a, trans[a])));
    entries.push((ti, 1.0));
    if let Some((tj, s)) = tj {
        entries.push((tj, s));
    }
    for &(r, vr) in &entries {
        for &(c, vc) in &entries {
            t.add(r, c, w * vr * vc);
        }
    }
}

/// `R̃R̃ᵀ`, symmetrized so the assembled matrix is exactly symmetric.
fn gram(r: &Mat) -> Mat {
    let p = r * r.transpose();
    (&p + p.transpose()) * 0.5
}

/// Adds one edge's full-weight Hessian contribution (rows/cols in `layout`).
fn add_edge_hessian(t: &mut Triplets, layout: &Layout, m: &Measurement, kappa: f64, tau: f64) {
    let d = m.d();
    let c = cols(layout, m);
    if kappa != 0.0 {
        let rrt = gram(&m.rot);
        t.add_block(c.ri, c.ri, &rrt, kappa);
        t.add_identity(c.rj, d, kappa);
        t.add_block(c.ri, c.rj, &m.rot, -kappa);
        t.add_block(c.rj, c.ri, &m.rot.transpose(), -kappa);
    }
    if tau != 0.0 {
        add_translation_outer(t, &m.trans, c.ti, c.ri, Some((c.tj, -1.0)), tau);
    }
}

/// Assembles `M̃`.
pub fn build_data_matrix(g: &PoseGraph) -> DataMatrix {
    build_data_matrix_terms(g, Terms::All)
}

/// Assembles `M̃` restricted to the chosen residual family.
pub fn build_data_matrix_terms(g: &PoseGraph, terms: Terms) -> DataMatrix {
    let layout = g.layout().clone();
    let mut t = Triplets::new(layout.dim());
    for m in g.edges() {
        let (k, w) = terms.weights(m);
        add_edge_hessian(&mut t, &layout, m, k, w);
    }
    DataMatrix {
        m: t.build(),
        layout,
    }
}

fn edge_residuals(layout: &Layout, m: &Measurement, x: &Mat) -> (Mat, nalgebra::DVector<f64>) {
    let d = m.d();
    let c = cols(layout, m);
    let ri = x.columns(c.ri, d);
    let rj = x.columns(c.rj, d);
    let rr = ri * &m.rot - rj;
    let rt = ri * &m.trans + x.column(c.ti) - x.column(c.tj);
    (rr, rt)
}

/// One edge's term `½κ‖R_i R̃ − R_j‖² + ½τ‖R_i t̃ + t_i − t_j‖²`.
pub fn edge_cost(layout: &Layout, m: &Measurement, x: &Mat, terms: Terms) -> f64 {
    let (k, w) = terms.weights(m);
    let (rr, rt) = edge_residuals(layout, m, x);
    0.5 * k * rr.norm_squared() + 0.5 * w * rt.norm_squared()
}

/// `F(X)` as the explicit sum over measurements.
pub fn objective_edge_sum(g: &PoseGraph, x: &Mat) -> f64 {
    objective_edge_sum_terms(g, x, Terms::All)
}

pub fn objective_edge_sum_terms(g: &PoseGraph, x: &Mat, terms: Terms) -> f64 {
    g.edges()
        .iter()
        .map(|m| edge_cost(g.layout(), m, x, terms))
        .sum()
}

/// `∇F(X)` accumulated edge by edge from the residuals.
pub fn gradient_edge_sum(g: &PoseGraph, x: &Mat) -> Mat {
    let layout = g.layout();
    let d = g.d();
    let mut out = Mat::zeros(d, layout.dim());
    for m in g.edges() {
        let c = cols(layout, m);
        let (rr, rt) = edge_residuals(layout, m, x);
        // ∂/∂R_i: κ(R_i R̃ − R_j)R̃ᵀ + τ r_t t̃ᵀ;  ∂/∂R_j: −κ(R_i R̃ − R_j)
        let gri = &rr * m.rot.transpose() * m.kappa + &rt * m.trans.transpose() * m.tau;
        let mut dst = out.columns_mut(c.ri, d);
        dst += gri;
        let mut dst = out.columns_mut(c.rj, d);
        dst -= &rr * m.kappa;
        let mut dst = out.column_mut(c.ti);
        dst += &rt * m.tau;
        let mut dst = out.column_mut(c.tj);
        dst -= &rt * m.tau;
    }
    out
}

/// Per-robot `Ω̃^α` and `Γ̃^α = Ω̃^α + ξI`, in each robot's local column order.
#[derive(Debug, Clone)]
pub struct MajorantBlocks {
    pub layout: Layout,
    pub xi: f64,
    pub omega: Vec<SymSparse>,
    pub gamma: Vec<SymSparse>,
}

impl MajorantBlocks {
    /// `Ω̃ = diag(Ω̃¹, …, Ω̃^A)` in the global layout.
    pub fn global_omega(&self) -> SymSparse {
        self.assemble(&self.omega)
    }

    /// `Γ̃ = Ω̃ + ξI` in the global layout.
    pub fn global_gamma(&self) -> SymSparse {
        self.assemble(&self.gamma)
    }

    fn assemble(&self, blocks: &[SymSparse]) -> SymSparse {
        let mut t = Triplets::new(self.layout.dim());
        for (a, b) in blocks.iter().enumerate() {
            let off = self.layout.block_offset(a);
            for r in 0..b.dim() {
                for (c, v) in b.row(r) {
                    t.add(off + r, off + c, v);
                }
            }
        }
        t.build()
    }
}

/// Builds the separable majorant of `F`. Intra-robot edges contribute their
/// exact Hessian; each inter-robot edge contributes twice its weight to the
/// diagonal blocks of both endpoints.
pub fn build_majorant(g: &PoseGraph, xi: f64) -> Result<MajorantBlocks> {
    build_majorant_terms(g, xi, Terms::All)
}

pub fn build_majorant_terms(g: &PoseGraph, xi: f64, terms: Terms) -> Result<MajorantBlocks> {
    if !(xi >= 0.0 && xi.is_finite()) {
        return Err(PgoError::InvalidParameter(format!("xi must be >= 0, got {xi}")));
    }
    let layout = g.layout();
    let d = g.d();
    let mut omega = Vec::with_capacity(layout.robots());
    let mut gamma = Vec::with_capacity(layout.robots());
    for a in 0..layout.robots() {
        let local = Layout::new(d, vec![layout.count(a)]);
        let mut t = Triplets::new(local.dim());
        let to_local = |m: &Measurement| {
            let mut m = m.clone();
            m.src.robot = 0;
            m.dst.robot = 0;
            m
        };
        for &e in g.intra_edges(a) {
            let m = &g.edges()[e];
            let (k, w) = terms.weights(m);
            add_edge_hessian(&mut t, &local, &to_local(m), k, w);
        }
        for &e in g.outgoing_edges(a) {
            let m = &g.edges()[e];
            let (k, w) = terms.weights(m);
            let ti = local.t_col(PoseId::new(0, m.src.index));
            let ri = local.r_col(PoseId::new(0, m.src.index));
            if k != 0.0 {
                let rrt = gram(&m.rot);
                t.add_block(ri, ri, &rrt, 2.0 * k);
            }
            if w != 0.0 {
                add_translation_outer(&mut t, &m.trans, ti, ri, None, 2.0 * w);
            }
        }
        for &e in g.incoming_edges(a) {
            let m = &g.edges()[e];
            let (k, w) = terms.weights(m);
            let j = PoseId::new(0, m.dst.index);
            if k != 0.0 {
                t.add_identity(local.r_col(j), d, 2.0 * k);
            }
            if w != 0.0 {
                t.add(local.t_col(j), local.t_col(j), 2.0 * w);
            }
        }
        let om = t.build();
        gamma.push(om.shifted(xi));
        omega.push(om);
    }
    Ok(MajorantBlocks {
        layout: layout.clone(),
        xi,
        omega,
        gamma,
    })
}

/// Splitting anchors `(P, p)` of an inter-robot edge at `Xk`.
pub fn separator_anchor(layout: &Layout, m: &Measurement, xk: &Mat) -> (Mat, nalgebra::DVector<f64>) {
    let d = m.d();
    let c = cols(layout, m);
    let ri = xk.columns(c.ri, d);
    let rj = xk.columns(c.rj, d);
    let p_rot = (ri * &m.rot + rj) * 0.5;
    let p_t = (ri * &m.trans + xk.column(c.ti) + xk.column(c.tj)) * 0.5;
    (p_rot, p_t)
}

/// `E(X|Xk)` as a sum over edges: intra edges exactly, inter edges split
/// around their anchors.
pub fn surrogate_e_edge_sum(g: &PoseGraph, x: &Mat, xk: &Mat) -> f64 {
    let layout = g.layout();
    let d = g.d();
    let mut total = 0.0;
    for m in g.edges() {
        if !m.is_inter() {
            total += edge_cost(layout, m, x, Terms::All);
            continue;
        }
        let (p_rot, p_t) = separator_anchor(layout, m, xk);
        let c = cols(layout, m);
        let ri = x.columns(c.ri, d);
        let rj = x.columns(c.rj, d);
        let a = ri * &m.rot - &p_rot;
        let b = rj - &p_rot;
        let u = ri * &m.trans + x.column(c.ti) - &p_t;
        let v = x.column(c.tj) - &p_t;
        total += m.kappa * (a.norm_squared() + b.norm_squared())
            + m.tau * (u.norm_squared() + v.norm_squared());
    }
    total
}

/// `E(X|Xk) = F(Xk) + ⟨∇F(Xk), X − Xk⟩ + ½⟨(X − Xk)Ω̃, X − Xk⟩`.
pub fn surrogate_e_quadratic(
    dm: &DataMatrix,
    omega: &SymSparse,
    x: &Mat,
    xk: &Mat,
) -> f64 {
    let diff = x - xk;
    dm.objective(xk) + dm.gradient(xk).dot(&diff) + 0.5 * omega.quadratic(&diff)
}

/// `G(X|Xk)`: `E` plus the proximal term `½ξ‖X − Xk‖²`.
pub fn surrogate_g(dm: &DataMatrix, maj: &MajorantBlocks, x: &Mat, xk: &Mat) -> f64 {
    let diff = x - xk;
    surrogate_e_quadratic(dm, &maj.global_omega(), x, xk) + 0.5 * maj.xi * diff.norm_squared()
}

/// `Ḡ^{α}` at `X`: robot `α`'s intra terms at full weight plus a quarter of
/// every inter-robot term it takes part in. These sum to `F(X)` over robots.
pub fn anchor_value(g: &PoseGraph, x: &Mat, robot: usize) -> f64 {
    anchor_value_terms(g, x, robot, Terms::All)
}

pub fn anchor_value_terms(g: &PoseGraph, x: &Mat, robot: usize, terms: Terms) -> f64 {
    let layout = g.layout();
    let mut intra = 0.0;
    for &e in g.intra_edges(robot) {
        intra += edge_cost(layout, &g.edges()[e], x, terms);
    }
    let mut inter = 0.0;
    for &e in g.outgoing_edges(robot).iter().chain(g.incoming_edges(robot)) {
        inter += edge_cost(layout, &g.edges()[e], x, terms);
    }
    intra + 0.5 * inter
}

/// `[Ḡ¹, …, Ḡ^A]` at `X`.
pub fn anchor_values(g: &PoseGraph, x: &Mat) -> Vec<f64> {
    (0..g.robots()).map(|a| anchor_value(g, x, a)).collect()
}

/// `F(X)` as `Σ_α Ḡ^α(X)` summed in robot order. Solvers record this value
/// so that shared-memory and message-passing runs agree bit for bit.
pub fn objective_by_robot(g: &PoseGraph, x: &Mat) -> f64 {
    anchor_values(g, x).into_iter().sum()
}

/// `G^α(Z|A) − Ḡ^α = ⟨∇, Z − A⟩ + ½⟨(Z − A)Γ̃^α, Z − A⟩` for a robot block
/// anchored at `A` with gradient `∇` (the robot's columns of `∇F(A)`).
pub fn surrogate_increment(gamma: &SymSparse, anchor: &Mat, grad: &Mat, z: &Mat) -> f64 {
    let diff = z - anchor;
    grad.dot(&diff) + 0.5 * gamma.quadratic(&diff)
}

/// `G^α(X^α|Xk)` with `X^α` given as robot `α`'s block.
pub fn surrogate_g_node(
    g: &PoseGraph,
    dm: &DataMatrix,
    maj: &MajorantBlocks,
    robot: usize,
    x_alpha: &Mat,
    xk: &Mat,
) -> f64 {
    let layout = g.layout();
    let anchor = xk
        .columns(layout.block_offset(robot), layout.block_width(robot))
        .into_owned();
    let grad = dm.robot_gradient(xk, robot);
    anchor_value(g, xk, robot) + surrogate_increment(&maj.gamma[robot], &anchor, &grad, x_alpha)
}
