//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use mmpgo::graph::{Layout, Measurement, PartitionStrategy, PoseEstimate, PoseGraph, PoseId};
use mmpgo::io::cube::{generate_cube, CubeConfig};
use mmpgo::manifold::{random_rotation, random_small_rotation};
use mmpgo::Mat;
use nalgebra::{DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A connected random graph: a chain through all poses plus `extra` random
/// loop closures, split over `robots` robots by a random assignment that
/// gives every robot at least one pose.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, robots: usize, d: usize, extra: usize) -> PoseGraph {
    let truth: Vec<(DVector<f64>, Mat)> = (0..n)
        .map(|_| (DVector::from_fn(d, |_, _| rng.random_range(-3.0..3.0)), random_rotation(rng, d)))
        .collect();
    let mut pairs: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
    while pairs.len() < n - 1 + extra {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i != j {
            pairs.push((i, j));
        }
    }
    let edges = pairs
        .into_iter()
        .map(|(i, j)| {
            let (ti, ri) = &truth[i];
            let (tj, rj) = &truth[j];
            let rot = ri.transpose() * rj * random_small_rotation(rng, d, 0.2);
            let trans = ri.transpose() * (tj - ti) + DVector::from_fn(d, |_, _| rng.random_range(-0.2..0.2));
            Measurement::new(
                PoseId::new(0, i),
                PoseId::new(0, j),
                rot,
                trans,
                rng.random_range(0.5..5.0),
                rng.random_range(0.5..5.0),
            )
            .unwrap()
        })
        .collect();
    let single = PoseGraph::new(d, vec![n], edges).unwrap();
    if robots == 1 {
        return single;
    }
    let mut assignment: Vec<usize> = (0..n).map(|k| k % robots).collect();
    for k in robots..n {
        assignment[k] = rng.random_range(0..robots);
    }
    single
        .partition(robots, &PartitionStrategy::Explicit(assignment))
        .unwrap()
}

/// Uniformly random rotations and translations in `[-3, 3]`.
pub fn random_estimate(rng: &mut ChaCha8Rng, layout: &Layout) -> PoseEstimate {
    let d = layout.d();
    let poses: Vec<(DVector<f64>, Mat)> = (0..layout.total_poses())
        .map(|_| (DVector::from_fn(d, |_, _| rng.random_range(-3.0..3.0)), random_rotation(rng, d)))
        .collect();
    PoseEstimate::from_poses(layout.clone(), &poses).unwrap()
}

/// Poses of `x` by id.
pub fn pose(layout: &Layout, x: &Mat, p: PoseId) -> (DVector<f64>, Mat) {
    let d = layout.d();
    (
        x.column(layout.t_col(p)).into_owned(),
        x.columns(layout.r_col(p), d).into_owned(),
    )
}

/// `F(X)` straight from its definition, with rotation blocks taken as-is.
pub fn objective_oracle(g: &PoseGraph, x: &Mat) -> f64 {
    let l = g.layout();
    g.edges()
        .iter()
        .map(|m| {
            let (ti, ri) = pose(l, x, m.src);
            let (tj, rj) = pose(l, x, m.dst);
            0.5 * m.kappa * (&ri * &m.rot - &rj).norm_squared()
                + 0.5 * m.tau * (&ri * &m.trans + &ti - &tj).norm_squared()
        })
        .sum()
}

/// Dense `M̃` assembled entry by entry from the edge residuals: each edge
/// contributes `½κ‖X Aₑ‖² + ½τ‖X bₑ‖²` with selector matrices `Aₑ`, `bₑ`.
pub fn dense_data_matrix(g: &PoseGraph) -> Mat {
    let l = g.layout();
    let d = l.d();
    let dim = l.dim();
    let mut m = Mat::zeros(dim, dim);
    for e in g.edges() {
        // Rotation residual R_i R̃ − R_j = X A with A of shape dim × d.
        let mut a = Mat::zeros(dim, d);
        a.rows_mut(l.r_col(e.src), d).copy_from(&e.rot);
        let mut rows_j = a.rows_mut(l.r_col(e.dst), d);
        rows_j -= Mat::identity(d, d);
        m += &a * a.transpose() * e.kappa;
        // Translation residual R_i t̃ + t_i − t_j = X b.
        let mut b = Mat::zeros(dim, 1);
        for k in 0..d {
            b[(l.r_col(e.src) + k, 0)] = e.trans[k];
        }
        b[(l.t_col(e.src), 0)] += 1.0;
        b[(l.t_col(e.dst), 0)] -= 1.0;
        m += &b * b.transpose() * e.tau;
    }
    m
}

pub fn min_eigenvalue(m: &Mat) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Cube-mini partitioned into `robots` contiguous robots, with the spanning
/// tree initialization as `X⁽⁰⁾`.
pub fn cube_mini(robots: usize) -> (PoseGraph, PoseEstimate, PoseEstimate) {
    let (g, truth) = generate_cube(&CubeConfig::mini(1)).unwrap();
    let init = mmpgo::io::bench::spanning_tree_initialization(&g).unwrap();
    let gp = g.partition(robots, &PartitionStrategy::Contiguous).unwrap();
    let x0 = init.relayout(gp.layout().clone()).unwrap();
    let truth = truth.relayout(gp.layout().clone()).unwrap();
    (gp, x0, truth)
}

/// Two robots of `per` poses each in a chain, with the single inter-robot
/// edge between the last pose of robot 0 and the first of robot 1.
pub fn two_robot_chain(d: usize, per: usize, seed: u64) -> PoseGraph {
    let mut r = rng(seed);
    let n = 2 * per;
    let g = random_graph(&mut r, n, 1, d, 0);
    let assignment: Vec<usize> = (0..n).map(|k| usize::from(k >= per)).collect();
    g.partition(2, &PartitionStrategy::Explicit(assignment)).unwrap()
}
