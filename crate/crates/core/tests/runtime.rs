mod common;

use common::*;
use mmpgo::graph::{Measurement, PoseId};
use mmpgo::runtime::{apply_message, SeparatorMessage};
use mmpgo::{
    amm_pgo, mm_pgo, run_distributed, ChordalConfig, DistributedParams, Mat, PgoError, PoseEstimate, PoseGraph,
    RuntimeAlgorithm, SolverConfig,
};
use nalgebra::DVector;

fn params(iters: usize) -> DistributedParams {
    DistributedParams {
        solver: SolverConfig::default().with_iters(iters),
        chordal: ChordalConfig {
            rotation_iters: iters,
            translation_iters: iters,
            ..Default::default()
        },
    }
}

#[test]
fn single_robot_sends_nothing_and_matches_shared_memory() {
    let mut r = rng(81);
    let g = random_graph(&mut r, 20, 1, 3, 10);
    let x0 = random_estimate(&mut r, g.layout());
    let dist = run_distributed(&g, &x0, RuntimeAlgorithm::Amm, &params(15)).unwrap();
    assert!(dist.messages.is_empty());
    assert!(dist.run.communication_volume().iter().all(|&b| b == 0));
    let shared = amm_pgo(&g, &x0, &SolverConfig::default().with_iters(15)).unwrap();
    assert_eq!(dist.run.objectives(), shared.objectives());
    assert_eq!(dist.run.x.matrix(), shared.x.matrix());
}

#[test]
fn two_robot_chain_exchanges_one_message_each_way_per_round() {
    for d in [2, 3] {
        let g = two_robot_chain(d, 6, 82);
        let x0 = random_estimate(&mut rng(83), g.layout());
        let rounds = 8;
        let dist = run_distributed(&g, &x0, RuntimeAlgorithm::Mm, &params(rounds)).unwrap();
        dist.verify_separator_payloads(&g).unwrap();
        let size = 16 + (4 + 8 * (d + d * d));
        assert_eq!(SeparatorMessage::encoded_len(d, 1), size);
        for round in 1..=rounds as u64 {
            let sent: Vec<_> = dist.messages.iter().filter(|m| m.round == round).collect();
            assert_eq!(sent.len(), 2, "round {round}");
            assert!(sent.iter().all(|m| m.poses.len() == 1 && m.bytes == size));
        }
        assert!(dist.run.communication_volume().iter().all(|&b| b == 2 * size as u64));
        let shared = mm_pgo(&g, &x0, &SolverConfig::default().with_iters(rounds)).unwrap();
        for (a, b) in dist.run.objectives().iter().zip(shared.objectives()) {
            assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        }
    }
}

/// Adds an edge between the second-to-last pose of robot 0 and the second
/// pose of robot 1, doubling the separator set of the chain.
fn doubled_separators(g: &PoseGraph) -> PoseGraph {
    let per = g.layout().count(0);
    let mut edges = g.edges().to_vec();
    let link = edges.iter().find(|m| m.is_inter()).unwrap().clone();
    edges.push(
        Measurement::new(
            PoseId::new(0, per - 2),
            PoseId::new(1, 1),
            link.rot.clone(),
            link.trans.clone(),
            link.kappa,
            link.tau,
        )
        .unwrap(),
    );
    PoseGraph::new(g.d(), g.layout().counts().to_vec(), edges).unwrap()
}

#[test]
fn payload_bytes_scale_with_separator_count() {
    let d = 3;
    let g1 = two_robot_chain(d, 6, 84);
    let g2 = doubled_separators(&g1);
    assert_eq!(g2.separator_poses(0, 1).len(), 2);
    let x0 = random_estimate(&mut rng(85), g1.layout());
    let one = run_distributed(&g1, &x0, RuntimeAlgorithm::Amm, &params(3)).unwrap();
    let two = run_distributed(&g2, &x0, RuntimeAlgorithm::Amm, &params(3)).unwrap();
    let payload = |run: &mmpgo::DistributedRun| run.messages[0].bytes - SeparatorMessage::HEADER_BYTES;
    assert_eq!(payload(&two), 2 * payload(&one));
    two.verify_separator_payloads(&g2).unwrap();
}

#[test]
fn distributed_chordal_matches_shared_memory() {
    let mut r = rng(86);
    let g = random_graph(&mut r, 30, 4, 3, 20);
    let ident = PoseEstimate::identity(g.layout().clone());
    let p = params(40);
    let dist = run_distributed(&g, &ident, RuntimeAlgorithm::Chordal, &p).unwrap();
    dist.verify_separator_payloads(&g).unwrap();
    let shared = mmpgo::chordal_initialization(&g, &p.chordal).unwrap();
    let trace: Vec<f64> = shared
        .rotation_trace
        .iter()
        .chain(&shared.translation_trace)
        .map(|r| r.f)
        .collect();
    assert_eq!(dist.run.objectives(), trace);
    assert!((dist.run.x.matrix() - shared.estimate.matrix()).norm() <= 1e-9);
}

#[test]
fn repeated_distributed_runs_are_identical() {
    let mut r = rng(87);
    let g = random_graph(&mut r, 24, 3, 2, 12);
    let x0 = random_estimate(&mut r, g.layout());
    let a = run_distributed(&g, &x0, RuntimeAlgorithm::Amm, &params(10)).unwrap();
    let b = run_distributed(&g, &x0, RuntimeAlgorithm::Amm, &params(10)).unwrap();
    assert_eq!(a.run.objectives(), b.run.objectives());
    assert_eq!(a.messages, b.messages);
}

fn sample_message(d: usize) -> SeparatorMessage {
    SeparatorMessage {
        sender: 1,
        round: 7,
        poses: vec![(
            0,
            DVector::from_fn(d, |i, _| i as f64 + 0.25),
            Mat::from_fn(d, d, |i, j| (i * d + j) as f64 - 1.5),
        )],
    }
}

#[test]
fn wire_format_round_trips() {
    for d in [2, 3] {
        let msg = sample_message(d);
        let bytes = msg.encode();
        assert_eq!(bytes.len(), SeparatorMessage::encoded_len(d, 1));
        assert_eq!(&bytes[0..4], &1u32.to_le_bytes());
        assert_eq!(&bytes[4..12], &7u64.to_le_bytes());
        assert_eq!(&bytes[12..16], &1u32.to_le_bytes());
        assert_eq!(SeparatorMessage::decode(&bytes, d).unwrap(), msg);
        assert!(matches!(
            SeparatorMessage::decode(&bytes[..bytes.len() - 1], d),
            Err(PgoError::ProtocolViolation(_))
        ));
    }
}

#[test]
fn messages_outside_the_separator_set_are_rejected() {
    let g = two_robot_chain(2, 4, 88);
    let mut view = Mat::from_element(2, g.layout().dim(), f64::NAN);
    // Robot 1's separator toward robot 0 is its first pose.
    let mut msg = sample_message(2);
    msg.round = 3;
    apply_message(&g, 0, 3, &msg, &mut view).unwrap();
    assert!(view.column(g.layout().t_col(PoseId::new(1, 0))).iter().all(|v| v.is_finite()));

    let mut interior = msg.clone();
    interior.poses[0].0 = 2;
    assert!(matches!(
        apply_message(&g, 0, 3, &interior, &mut view),
        Err(PgoError::ProtocolViolation(_))
    ));
    assert!(matches!(
        apply_message(&g, 0, 4, &msg, &mut view),
        Err(PgoError::ProtocolViolation(_))
    ));
    let mut stranger = msg.clone();
    stranger.sender = 0;
    assert!(matches!(
        apply_message(&g, 0, 3, &stranger, &mut view),
        Err(PgoError::ProtocolViolation(_))
    ));
}
