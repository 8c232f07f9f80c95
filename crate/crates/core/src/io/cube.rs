//! Synthetic "Cube" datasets: a rectilinear path through a 3D grid with
//! noisy odometry and randomly kept loop closures between nearby poses.

use nalgebra::{DVector, Vector3};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PgoError, Result};
use crate::graph::{Layout, Measurement, PoseEstimate, PoseGraph, PoseId};
use crate::manifold::{gaussian_vector, random_small_rotation};
use crate::sparse::Mat;

/// Poses per grid point of the reference dataset (3600 poses on 12³ points).
const POSES_PER_POINT: f64 = 3600.0 / 1728.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CubeConfig {
    pub grid: usize,
    pub side_length: f64,
    pub loop_probability: f64,
    pub sigma_t: f64,
    pub sigma_r: f64,
    pub seed: u64,
}

impl CubeConfig {
    /// The 12×12×12, 3600-pose configuration.
    pub fn full(seed: u64) -> Self {
        CubeConfig {
            grid: 12,
            side_length: 1.0,
            loop_probability: 0.1,
            sigma_t: 0.02,
            sigma_r: 0.02 * std::f64::consts::PI,
            seed,
        }
    }

    /// 6×6×6 grid, 450 poses; same noise as [`CubeConfig::full`].
    pub fn mini(seed: u64) -> Self {
        CubeConfig {
            grid: 6,
            ..Self::full(seed)
        }
    }

    /// Number of poses on the path.
    pub fn num_poses(&self) -> usize {
        ((self.grid.pow(3) as f64) * POSES_PER_POINT).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.grid >= 2
            && self.side_length > 0.0
            && self.side_length.is_finite()
            && (0.0..=1.0).contains(&self.loop_probability)
            && self.sigma_t >= 0.0
            && self.sigma_r >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(PgoError::InvalidParameter(format!("cube config {self:?}")))
        }
    }
}

const DIRECTIONS: [[i64; 3]; 6] = [
    [1, 0, 0],
    [-1, 0, 0],
    [0, 1, 0],
    [0, -1, 0],
    [0, 0, 1],
    [0, 0, -1],
];

/// Random walk over grid points that prefers unvisited neighbours.
fn walk(grid: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<[i64; 3]> {
    let g = grid as i64;
    let idx = |p: [i64; 3]| ((p[0] * g + p[1]) * g + p[2]) as usize;
    let mut visited = vec![false; grid.pow(3)];
    let mut p = [0i64; 3];
    visited[idx(p)] = true;
    let mut path = Vec::with_capacity(n);
    path.push(p);
    while path.len() < n {
        let moves: Vec<[i64; 3]> = DIRECTIONS
            .iter()
            .map(|d| [p[0] + d[0], p[1] + d[1], p[2] + d[2]])
            .filter(|q| q.iter().all(|&c| (0..g).contains(&c)))
            .collect();
        let fresh: Vec<[i64; 3]> = moves.iter().copied().filter(|q| !visited[idx(*q)]).collect();
        let pool = if fresh.is_empty() { &moves } else { &fresh };
        p = *pool.choose(rng).expect("every grid point has a neighbour");
        visited[idx(p)] = true;
        path.push(p);
    }
    path
}

fn axis(v: [i64; 3]) -> Vector3<f64> {
    Vector3::new(v[0] as f64, v[1] as f64, v[2] as f64)
}

/// Heading along the direction of travel with a random axis-aligned roll.
fn orientation(heading: Vector3<f64>, rng: &mut ChaCha8Rng) -> Mat {
    let candidates: Vec<Vector3<f64>> = DIRECTIONS
        .iter()
        .map(|&d| axis(d))
        .filter(|u| u.dot(&heading).abs() < 0.5)
        .collect();
    let up = *candidates.choose(rng).expect("four perpendicular axes");
    let third = heading.cross(&up);
    let mut r = Mat::zeros(3, 3);
    r.column_mut(0).copy_from(&heading);
    r.column_mut(1).copy_from(&up);
    r.column_mut(2).copy_from(&third);
    r
}

fn weight(sigma: f64) -> f64 {
    if sigma > 0.0 {
        1.0 / (sigma * sigma)
    } else {
        1.0
    }
}

/// Generates a single-robot Cube graph and its ground truth.
pub fn generate_cube(cfg: &CubeConfig) -> Result<(PoseGraph, PoseEstimate)> {
    cfg.validate()?;
    let n = cfg.num_poses();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let path = walk(cfg.grid, n, &mut rng);

    let positions: Vec<DVector<f64>> = path
        .iter()
        .map(|&p| DVector::from_iterator(3, axis(p).iter().map(|c| c * cfg.side_length)))
        .collect();
    let mut rotations = Vec::with_capacity(n);
    let mut heading = Vector3::x();
    for k in 0..n {
        if k + 1 < n {
            let step = axis(path[k + 1]) - axis(path[k]);
            heading = step;
        }
        rotations.push(orientation(heading, &mut rng));
    }

    let kappa = weight(cfg.sigma_r);
    let tau = weight(cfg.sigma_t);
    let measure = |i: usize, j: usize, rng: &mut ChaCha8Rng| -> Result<Measurement> {
        let ri = &rotations[i];
        let r_ij = ri.transpose() * &rotations[j];
        let t_ij = ri.transpose() * (&positions[j] - &positions[i]);
        let rot = r_ij * random_small_rotation(rng, 3, cfg.sigma_r);
        let trans = t_ij + gaussian_vector(rng, 3, cfg.sigma_t);
        Measurement::new(PoseId::new(0, i), PoseId::new(0, j), rot, trans, kappa, tau)
    };

    let mut edges = Vec::new();
    for k in 0..n - 1 {
        edges.push(measure(k, k + 1, &mut rng)?);
    }
    let reach = cfg.side_length * (1.0 + 1e-9);
    for i in 0..n {
        for j in i + 2..n {
            if (&positions[i] - &positions[j]).norm() <= reach
                && rng.random::<f64>() < cfg.loop_probability
            {
                edges.push(measure(i, j, &mut rng)?);
            }
        }
    }

    let graph = PoseGraph::new(3, vec![n], edges)?;
    let poses: Vec<(DVector<f64>, Mat)> = positions.into_iter().zip(rotations).collect();
    let truth = PoseEstimate::from_poses(Layout::new(3, vec![n]), &poses)?;
    Ok((graph, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadratic::objective_edge_sum;

    #[test]
    fn pose_counts_follow_grid() {
        assert_eq!(CubeConfig::full(0).num_poses(), 3600);
        assert_eq!(CubeConfig::mini(0).num_poses(), 450);
    }

    #[test]
    fn noiseless_truth_has_zero_cost() {
        let cfg = CubeConfig {
            grid: 3,
            sigma_t: 0.0,
            sigma_r: 0.0,
            loop_probability: 0.5,
            ..CubeConfig::mini(7)
        };
        let (g, truth) = generate_cube(&cfg).unwrap();
        assert!(objective_edge_sum(&g, truth.matrix()) < 1e-20);
        assert!(g.edges().len() > g.num_poses() - 1);
    }

    #[test]
    fn seeded_generation_is_deterministic() {
        let a = generate_cube(&CubeConfig { grid: 3, ..CubeConfig::mini(11) }).unwrap();
        let b = generate_cube(&CubeConfig { grid: 3, ..CubeConfig::mini(11) }).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn consecutive_poses_are_one_side_apart() {
        let (_, truth) = generate_cube(&CubeConfig { side_length: 2.0, ..CubeConfig::mini(3) }).unwrap();
        let poses = truth.poses();
        for w in poses.windows(2) {
            assert!(((&w[1].0 - &w[0].0).norm() - 2.0).abs() < 1e-12);
        }
    }
}
