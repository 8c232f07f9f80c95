mod common;

use common::*;
use mmpgo::chordal::{
    amm_chordal, chordal_initialization, embed, identity_rotations, project_rotations, split, translation_init,
    translation_objective, ChordalConfig,
};
use mmpgo::graph::PartitionStrategy;
use mmpgo::io::bench::align_and_rmse;
use mmpgo::io::cube::{generate_cube, CubeConfig};
use mmpgo::manifold::is_rotation;
use mmpgo::{Execution, Mat, PgoError};

fn noiseless_cube(robots: usize) -> (mmpgo::PoseGraph, mmpgo::PoseEstimate) {
    let cfg = CubeConfig {
        grid: 3,
        sigma_t: 0.0,
        sigma_r: 0.0,
        ..CubeConfig::mini(5)
    };
    let (g, truth) = generate_cube(&cfg).unwrap();
    let gp = g.partition(robots, &PartitionStrategy::Contiguous).unwrap();
    let truth = truth.relayout(gp.layout().clone()).unwrap();
    (gp, truth)
}

#[test]
fn noiseless_graph_is_recovered_up_to_gauge() {
    for robots in [1, 3] {
        let (g, truth) = noiseless_cube(robots);
        let cfg = ChordalConfig {
            rotation_iters: 3000,
            translation_iters: 3000,
            ..Default::default()
        };
        let res = chordal_initialization(&g, &cfg).unwrap();
        let f = objective_oracle(&g, res.estimate.matrix());
        let (rot, trans) = align_and_rmse(&res.estimate, &truth).unwrap();
        assert!(f <= 1e-9, "A={robots}: F = {f:e}");
        assert!(rot < 1e-6 && trans < 1e-6, "A={robots}: rotation {rot}, translation {trans}");
    }
}

#[test]
fn output_is_feasible_and_anchored() {
    let mut r = rng(51);
    let g = random_graph(&mut r, 30, 3, 3, 20);
    let res = chordal_initialization(&g, &ChordalConfig::default()).unwrap();
    let x = res.estimate.matrix();
    let l = g.layout();
    let anchor = mmpgo::PoseId::new(0, 0);
    assert_eq!(x.columns(l.r_col(anchor), 3).into_owned(), Mat::identity(3, 3));
    assert_eq!(x.column(l.t_col(anchor)).norm(), 0.0);
    for p in 0..l.total_poses() {
        let id = l.pose_at(p);
        assert!(is_rotation(&x.columns(l.r_col(id), 3).into_owned(), 1e-9));
    }
    assert_eq!(res.rotation_trace.len(), 201);
    assert_eq!(res.translation_trace.len(), 201);
}

#[test]
fn translation_stage_reaches_the_least_squares_solution() {
    let mut r = rng(52);
    let g = random_graph(&mut r, 20, 2, 2, 15);
    let n = g.num_poses();
    let d = 2;
    let (_, rot) = amm_chordal(&g, &identity_rotations(d, n), &ChordalConfig::default()).unwrap();
    let rot = project_rotations(&rot, d).unwrap();
    let mut rot = rot;
    rot.columns_mut(0, d).fill_with_identity();

    // Dense normal equations over t_1..t_{n-1} (t_0 = 0) in pose-major order.
    let l = g.layout();
    let mut h = Mat::zeros(d * n, d * n);
    let mut b = nalgebra::DVector::zeros(d * n);
    for m in g.edges() {
        let (i, j) = (l.global_index(m.src), l.global_index(m.dst));
        let ri = rot.columns(d * i, d);
        let rhs = ri * &m.trans;
        for k in 0..d {
            let (a, c) = (d * i + k, d * j + k);
            h[(a, a)] += m.tau;
            h[(c, c)] += m.tau;
            h[(a, c)] -= m.tau;
            h[(c, a)] -= m.tau;
            b[a] += m.tau * rhs[k];
            b[c] -= m.tau * rhs[k];
        }
    }
    let free = d * (n - 1);
    let sol = h
        .view((d, d), (free, free))
        .into_owned()
        .cholesky()
        .unwrap()
        .solve(&b.rows(d, free).into_owned());
    let mut t_star = Mat::zeros(d, n);
    for p in 1..n {
        t_star.column_mut(p).copy_from(&sol.rows(d * (p - 1), d));
    }
    let f_star = translation_objective(&g, &rot, &t_star).unwrap();

    let cfg = ChordalConfig {
        translation_iters: 3000,
        ..Default::default()
    };
    let (trace, t) = translation_init(&g, &rot, &cfg).unwrap();
    let f = translation_objective(&g, &rot, &t).unwrap();
    assert!((f - f_star) <= 1e-8 * f_star.max(1.0), "{f} vs {f_star}");
    assert!((trace.last().unwrap().f - f).abs() <= 1e-9 * f.max(1.0));
}

#[test]
fn sequential_and_parallel_chordal_agree() {
    let mut r = rng(53);
    let g = random_graph(&mut r, 25, 4, 3, 15);
    let seq = chordal_initialization(
        &g,
        &ChordalConfig {
            execution: Execution::Sequential,
            ..Default::default()
        },
    )
    .unwrap();
    let par = chordal_initialization(&g, &ChordalConfig::default()).unwrap();
    assert_eq!(seq.estimate.matrix(), par.estimate.matrix());
}

#[test]
fn embed_and_split_are_inverse() {
    let mut r = rng(54);
    let g = random_graph(&mut r, 10, 3, 2, 5);
    let x = random_estimate(&mut r, g.layout()).into_matrix();
    let (rot, t) = split(g.layout(), &x);
    assert_eq!(embed(g.layout(), &rot, Some(&t)).unwrap(), x);
}

#[test]
fn rotation_start_must_fix_the_anchor() {
    let mut r = rng(55);
    let g = random_graph(&mut r, 8, 2, 2, 4);
    let mut r0 = identity_rotations(2, 8);
    r0[(0, 1)] = 0.3;
    assert!(matches!(
        amm_chordal(&g, &r0, &ChordalConfig::default()),
        Err(PgoError::InvalidParameter(_))
    ));
}
