//! Message-passing execution: one thread per robot, synchronous rounds.
//!
//! Every robot keeps a private *view* of the stacked variable in which only
//! its own columns and the separator poses received from neighbours are
//! populated; everything else is NaN, so any read outside that set poisons
//! the run and is reported as a protocol violation. Per round a robot
//! updates its block, sends each neighbour the poses that neighbour's edges
//! touch, drains exactly one message per neighbour, waits at a barrier and
//! refreshes its gradient. A coordinator thread only aggregates per-robot
//! scalars and says whether to continue.
//!
//! Wire format (little endian): header `sender: u32, round: u64, count: u32`,
//! then `count` entries of `pose: u32, t: d × f64, R: d² × f64` (column-major).

use std::collections::BTreeSet;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Barrier;
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::chordal::{embed, identity_rotations, ChordalConfig, ConvexNode, Stage};
use crate::error::{PgoError, Result};
use crate::graph::{PoseEstimate, PoseGraph, PoseId};
use crate::local_solver::NodeMetric;
use crate::quadratic::{
    anchor_value, build_data_matrix, build_data_matrix_terms, build_majorant, build_majorant_terms, DataMatrix,
};
use crate::solvers::{
    assemble_metrics, check_initial, Algorithm, NodeState, RunRecord, SolverConfig, SolverRun, StepInfo,
    Termination,
};
use crate::sparse::Mat;

/// A batch of separator poses sent from one robot to one neighbour.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparatorMessage {
    pub sender: u32,
    pub round: u64,
    pub poses: Vec<(u32, DVector<f64>, Mat)>,
}

impl SeparatorMessage {
    pub const HEADER_BYTES: usize = 4 + 8 + 4;

    pub fn entry_bytes(d: usize) -> usize {
        4 + 8 * (d + d * d)
    }

    pub fn encoded_len(d: usize, count: usize) -> usize {
        Self::HEADER_BYTES + count * Self::entry_bytes(d)
    }

    pub fn encode(&self) -> Vec<u8> {
        let d = self.poses.first().map(|p| p.1.len()).unwrap_or(0);
        let mut out = Vec::with_capacity(Self::encoded_len(d, self.poses.len()));
        out.extend_from_slice(&self.sender.to_le_bytes());
        out.extend_from_slice(&self.round.to_le_bytes());
        out.extend_from_slice(&(self.poses.len() as u32).to_le_bytes());
        for (id, t, r) in &self.poses {
            out.extend_from_slice(&id.to_le_bytes());
            for v in t.iter().chain(r.iter()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8], d: usize) -> Result<Self> {
        let bad = |why: &str| PgoError::ProtocolViolation(format!("malformed message: {why}"));
        if bytes.len() < Self::HEADER_BYTES {
            return Err(bad("short header"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
        let sender = u32_at(0);
        let round = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes"));
        let count = u32_at(12) as usize;
        if bytes.len() != Self::encoded_len(d, count) {
            return Err(bad("length does not match pose count"));
        }
        let mut poses = Vec::with_capacity(count);
        let mut o = Self::HEADER_BYTES;
        for _ in 0..count {
            let id = u32_at(o);
            o += 4;
            let t = DVector::from_fn(d, |i, _| f64_at(o + 8 * i));
            o += 8 * d;
            let r = Mat::from_fn(d, d, |i, j| f64_at(o + 8 * (i + d * j)));
            o += 8 * d * d;
            poses.push((id, t, r));
        }
        Ok(SeparatorMessage {
            sender,
            round,
            poses,
        })
    }
}

/// One sent message as seen by the instrumentation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageLogEntry {
    pub round: u64,
    pub sender: usize,
    pub receiver: usize,
    pub poses: Vec<usize>,
    pub bytes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuntimeAlgorithm {
    Mm,
    Amm,
    Chordal,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DistributedParams {
    pub solver: SolverConfig,
    pub chordal: ChordalConfig,
}

#[derive(Debug, Clone)]
pub struct DistributedRun {
    pub run: SolverRun,
    pub messages: Vec<MessageLogEntry>,
}

impl DistributedRun {
    /// Checks that every payload carried exactly the separator poses of its
    /// (sender, receiver) pair.
    pub fn verify_separator_payloads(&self, g: &PoseGraph) -> Result<()> {
        for m in &self.messages {
            let allowed = g.separator_poses(m.sender, m.receiver);
            if m.poses != allowed {
                return Err(PgoError::ProtocolViolation(format!(
                    "round {}: robot {} sent poses {:?} to robot {}, separator set is {:?}",
                    m.round, m.sender, m.poses, m.receiver, allowed
                )));
            }
        }
        Ok(())
    }
}

/// Writes a decoded message into `view`, checking sender and pose ids.
pub fn apply_message(
    g: &PoseGraph,
    receiver: usize,
    expected_round: u64,
    msg: &SeparatorMessage,
    view: &mut Mat,
) -> Result<()> {
    let sender = msg.sender as usize;
    if sender >= g.robots() || !g.neighbors(receiver).contains(&sender) {
        return Err(PgoError::ProtocolViolation(format!(
            "robot {receiver} received a message from non-neighbour {sender}"
        )));
    }
    if msg.round != expected_round {
        return Err(PgoError::ProtocolViolation(format!(
            "robot {receiver} expected round {expected_round}, got {} from {sender}",
            msg.round
        )));
    }
    let allowed = g.separator_poses(sender, receiver);
    let layout = g.layout();
    let d = g.d();
    for (id, t, r) in &msg.poses {
        let id = *id as usize;
        if allowed.binary_search(&id).is_err() {
            return Err(PgoError::ProtocolViolation(format!(
                "robot {receiver} received unknown pose id {id} from robot {sender}"
            )));
        }
        if t.len() != d || r.shape() != (d, d) {
            return Err(PgoError::ProtocolViolation("pose of wrong dimension".into()));
        }
        let p = PoseId::new(sender, id);
        view.column_mut(layout.t_col(p)).copy_from(t);
        view.columns_mut(layout.r_col(p), d).copy_from(r);
    }
    Ok(())
}

struct Link {
    peer: usize,
    out: Sender<Vec<u8>>,
    owned: Vec<usize>,
}

#[derive(Debug, Clone, Copy, Default)]
struct RoundStats {
    gbar: f64,
    grad_sq: f64,
    step_sq: f64,
    restarted: bool,
    capped: usize,
    bytes: u64,
}

struct Report {
    robot: usize,
    stats: Result<RoundStats>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Control {
    Continue,
    /// The current stage is over; start the next one.
    NextStage,
    Stop,
}

struct Agent<'a> {
    robot: usize,
    g: &'a PoseGraph,
    view: Mat,
    links: Vec<Link>,
    inbox: Receiver<Vec<u8>>,
    barrier: &'a Barrier,
    to_coord: Sender<Report>,
    control: Receiver<Control>,
    log: Vec<MessageLogEntry>,
    fault: Option<PgoError>,
}

impl Agent<'_> {
    fn block(&self) -> Mat {
        let l = self.g.layout();
        self.view
            .columns(l.block_offset(self.robot), l.block_width(self.robot))
            .into_owned()
    }

    fn publish(&mut self, block: &Mat) {
        let l = self.g.layout();
        self.view
            .columns_mut(l.block_offset(self.robot), l.block_width(self.robot))
            .copy_from(block);
    }

    fn fail(&mut self, e: PgoError) {
        if self.fault.is_none() {
            self.fault = Some(e);
        }
    }

    /// Sends separator poses, drains one message per neighbour, then waits
    /// for every robot. Returns the bytes sent.
    fn exchange(&mut self, round: u64) -> u64 {
        let layout = self.g.layout();
        let d = self.g.d();
        let mut sent = 0u64;
        for link in &self.links {
            let poses = link
                .owned
                .iter()
                .map(|&i| {
                    let p = PoseId::new(self.robot, i);
                    (
                        i as u32,
                        self.view.column(layout.t_col(p)).into_owned(),
                        self.view.columns(layout.r_col(p), d).into_owned(),
                    )
                })
                .collect();
            let bytes = SeparatorMessage {
                sender: self.robot as u32,
                round,
                poses,
            }
            .encode();
            sent += bytes.len() as u64;
            self.log.push(MessageLogEntry {
                round,
                sender: self.robot,
                receiver: link.peer,
                poses: link.owned.clone(),
                bytes: bytes.len(),
            });
            // A closed inbox means the peer already stopped on an error.
            let _ = link.out.send(bytes);
        }
        for _ in 0..self.links.len() {
            let outcome = match self.inbox.recv() {
                Ok(bytes) => SeparatorMessage::decode(&bytes, d)
                    .and_then(|m| apply_message(self.g, self.robot, round, &m, &mut self.view)),
                Err(_) => Err(PgoError::ProtocolViolation("inbox closed".into())),
            };
            if let Err(e) = outcome {
                self.fail(e);
            }
        }
        self.barrier.wait();
        sent
    }

    fn report(&mut self, stats: Result<RoundStats>) {
        let stats = match self.fault.take() {
            Some(e) => Err(e),
            None => stats.and_then(|s| {
                if s.gbar.is_finite() && s.grad_sq.is_finite() {
                    Ok(s)
                } else {
                    Err(PgoError::ProtocolViolation(format!(
                        "robot {} computed a non-finite value (read outside its view?)",
                        self.robot
                    )))
                }
            }),
        };
        let _ = self.to_coord.send(Report {
            robot: self.robot,
            stats,
        });
    }

    fn wait(&self) -> Control {
        self.control.recv().unwrap_or(Control::Stop)
    }
}

fn pgo_agent(agent: &mut Agent<'_>, dm: &DataMatrix, algorithm: Algorithm, cfg: &SolverConfig) {
    let a = agent.robot;
    let g = agent.g;
    let bytes = agent.exchange(0);
    let setup = build_majorant(g, cfg.xi).and_then(|maj| {
        let metric = NodeMetric::new(maj.gamma[a].clone())?;
        Ok(NodeState::new(a, g.d(), metric, agent.block(), dm.robot_gradient(&agent.view, a)))
    });
    let mut node = match setup {
        Ok(n) => n,
        Err(e) => {
            agent.report(Err(e));
            return;
        }
    };
    let stats = |node: &NodeState, agent: &Agent<'_>, bytes: u64| -> Result<RoundStats> {
        Ok(RoundStats {
            gbar: anchor_value(g, &agent.view, a),
            grad_sq: node.riemannian_gradient_sq()?,
            bytes,
            ..Default::default()
        })
    };
    let s = stats(&node, agent, bytes);
    agent.report(s);
    let mut round = 0u64;
    while agent.wait() == Control::Continue {
        round += 1;
        let info = match node.step(algorithm, cfg) {
            Ok(info) => info,
            Err(e) => {
                agent.fail(e);
                StepInfo::default()
            }
        };
        agent.publish(&node.x.clone());
        let bytes = agent.exchange(round);
        node.set_gradient(dm.robot_gradient(&agent.view, a));
        let s = stats(&node, agent, bytes).map(|mut s| {
            s.step_sq = node.step_sq();
            s.restarted = info.restarted;
            s.capped = info.capped;
            s
        });
        agent.report(s);
    }
}

fn convex_stage(agent: &mut Agent<'_>, stage: Stage, xi: f64, round: &mut u64) -> bool {
    let a = agent.robot;
    let g = agent.g;
    let terms = stage.terms();
    let dm = build_data_matrix_terms(g, terms);
    let bytes = agent.exchange(*round);
    let setup = build_majorant_terms(g, xi, terms).and_then(|maj| {
        ConvexNode::new(
            a,
            &maj.gamma[a],
            stage.free_columns(g.layout(), a),
            agent.block(),
            dm.robot_gradient(&agent.view, a),
        )
    });
    let mut node = match setup {
        Ok(n) => n,
        Err(e) => {
            agent.report(Err(e));
            return false;
        }
    };
    let stats = |node: &ConvexNode, agent: &Agent<'_>, bytes: u64| {
        let (gbar, grad_sq) = crate::chordal::convex_metrics(g, stage, &agent.view, node);
        Ok(RoundStats {
            gbar,
            grad_sq,
            bytes,
            ..Default::default()
        })
    };
    let s = stats(&node, agent, bytes);
    agent.report(s);
    loop {
        match agent.wait() {
            Control::Continue => {}
            Control::NextStage => return true,
            Control::Stop => return false,
        }
        *round += 1;
        node.step();
        agent.publish(&node.x.clone());
        let bytes = agent.exchange(*round);
        node.set_gradient(dm.robot_gradient(&agent.view, a));
        let s = stats(&node, agent, bytes);
        agent.report(s);
    }
}

fn chordal_agent(agent: &mut Agent<'_>, cfg: &ChordalConfig) {
    let mut round = 0u64;
    if !convex_stage(agent, Stage::Rotation, cfg.xi, &mut round) {
        return;
    }
    let mut block = agent.block();
    match crate::chordal::project_block(agent.g.layout(), agent.robot, &mut block) {
        Ok(()) => agent.publish(&block),
        Err(e) => agent.fail(e),
    }
    round += 1;
    convex_stage(agent, Stage::Translation, cfg.xi, &mut round);
}

struct Coordinated {
    records: Vec<RunRecord>,
    step_norms: Vec<f64>,
    restarts: usize,
    capped: usize,
    iterations: usize,
    termination: Termination,
}

/// Per-round aggregation at the coordinator.
struct Collected {
    parts: Vec<(f64, f64)>,
    step_sq: f64,
    restarts: usize,
    capped: usize,
    bytes: u64,
}

fn collect(reports: &Receiver<Report>, robots: usize, round: usize) -> Result<Collected> {
    let mut slots: Vec<Option<RoundStats>> = vec![None; robots];
    let mut first_err = None;
    for _ in 0..robots {
        let r = reports
            .recv()
            .map_err(|_| PgoError::ProtocolViolation("robot thread exited early".into()))?;
        match r.stats {
            Ok(s) => slots[r.robot] = Some(s),
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(e.at_iteration(round));
                }
            }
        }
    }
    if let Some(e) = first_err {
        return Err(e);
    }
    let stats: Vec<RoundStats> = slots.into_iter().map(|s| s.expect("one report per robot")).collect();
    Ok(Collected {
        parts: stats.iter().map(|s| (s.gbar, s.grad_sq)).collect(),
        step_sq: stats.iter().map(|s| s.step_sq).sum(),
        restarts: stats.iter().filter(|s| s.restarted).count(),
        capped: stats.iter().map(|s| s.capped).sum(),
        bytes: stats.iter().map(|s| s.bytes).sum(),
    })
}

/// Runs MM-PGO, AMM-PGO or the chordal initializer with one thread per robot.
///
/// For `Chordal`, `x0` is ignored (rotations start at the identity) and the
/// records hold the rotation stage followed by the translation stage.
pub fn run_distributed(
    g: &PoseGraph,
    x0: &PoseEstimate,
    algorithm: RuntimeAlgorithm,
    params: &DistributedParams,
) -> Result<DistributedRun> {
    let robots = g.robots();
    let d = g.d();
    let layout = g.layout();
    let start = match algorithm {
        RuntimeAlgorithm::Chordal => embed(layout, &identity_rotations(d, g.num_poses()), None)?,
        _ => {
            params.solver.local.validate()?;
            check_initial(g, x0)?;
            x0.matrix().clone()
        }
    };
    let dm = build_data_matrix(g);
    let barrier = Barrier::new(robots);
    let clock = Instant::now();

    let (report_tx, report_rx) = channel::<Report>();
    let mut inbox_tx = Vec::with_capacity(robots);
    let mut inbox_rx = Vec::with_capacity(robots);
    let mut control_tx = Vec::with_capacity(robots);
    let mut control_rx = Vec::with_capacity(robots);
    for _ in 0..robots {
        let (t, r) = channel::<Vec<u8>>();
        inbox_tx.push(t);
        inbox_rx.push(r);
        let (t, r) = channel::<Control>();
        control_tx.push(t);
        control_rx.push(r);
    }

    let mut agents: Vec<Agent<'_>> = inbox_rx
        .into_iter()
        .zip(control_rx)
        .enumerate()
        .map(|(a, (inbox, control))| {
            let mut view = Mat::from_element(d, layout.dim(), f64::NAN);
            let (off, w) = (layout.block_offset(a), layout.block_width(a));
            view.columns_mut(off, w).copy_from(&start.columns(off, w));
            let neighbors: BTreeSet<usize> = g.neighbors(a);
            let links = neighbors
                .into_iter()
                .map(|b| Link {
                    peer: b,
                    out: inbox_tx[b].clone(),
                    owned: g.separator_poses(a, b).to_vec(),
                })
                .collect();
            Agent {
                robot: a,
                g,
                view,
                links,
                inbox,
                barrier: &barrier,
                to_coord: report_tx.clone(),
                control,
                log: Vec::new(),
                fault: None,
            }
        })
        .collect();
    drop(inbox_tx);
    drop(report_tx);

    let stages: Vec<usize> = match algorithm {
        RuntimeAlgorithm::Chordal => vec![params.chordal.rotation_iters, params.chordal.translation_iters],
        _ => vec![params.solver.iters],
    };
    let grad_tol = match algorithm {
        RuntimeAlgorithm::Chordal => 0.0,
        _ => params.solver.grad_tol,
    };

    let outcome = std::thread::scope(|scope| {
        let handles: Vec<_> = agents
            .drain(..)
            .map(|mut agent| {
                let dm = &dm;
                scope.spawn(move || {
                    match algorithm {
                        RuntimeAlgorithm::Mm => pgo_agent(&mut agent, dm, Algorithm::Mm, &params.solver),
                        RuntimeAlgorithm::Amm => pgo_agent(&mut agent, dm, Algorithm::Amm, &params.solver),
                        RuntimeAlgorithm::Chordal => chordal_agent(&mut agent, &params.chordal),
                    }
                    (agent.robot, agent.view, agent.log)
                })
            })
            .collect();

        let broadcast = |c: Control| {
            for tx in &control_tx {
                let _ = tx.send(c);
            }
        };
        let result = (|| -> Result<Coordinated> {
            let mut out = Coordinated {
                records: Vec::new(),
                step_norms: Vec::new(),
                restarts: 0,
                capped: 0,
                iterations: 0,
                termination: Termination::IterationBudget,
            };
            for (si, &iters) in stages.iter().enumerate() {
                let mut k = 0;
                loop {
                    let c = collect(&report_rx, robots, k)?;
                    let (f, gn) = assemble_metrics(&c.parts);
                    if !f.is_finite() {
                        return Err(PgoError::numerical("objective became non-finite").at_iteration(k));
                    }
                    out.records.push(RunRecord {
                        k: out.records.len(),
                        f,
                        grad_norm: gn,
                        wall_ms: clock.elapsed().as_secs_f64() * 1e3,
                        bytes: c.bytes,
                    });
                    if k > 0 {
                        out.step_norms.push(c.step_sq.sqrt());
                        out.restarts += c.restarts;
                        out.capped += c.capped;
                    }
                    if grad_tol > 0.0 && gn < grad_tol {
                        out.termination = Termination::GradientTolerance;
                    }
                    if k >= iters || out.termination == Termination::GradientTolerance {
                        out.iterations = k;
                        break;
                    }
                    broadcast(Control::Continue);
                    k += 1;
                }
                if si + 1 < stages.len() {
                    broadcast(Control::NextStage);
                }
            }
            Ok(out)
        })();
        broadcast(Control::Stop);
        let mut views = Vec::with_capacity(robots);
        let mut log = Vec::new();
        for h in handles {
            let (a, view, entries) = h.join().expect("robot thread panicked");
            views.push((a, view));
            log.extend(entries);
        }
        result.map(|r| (r, views, log))
    });

    let (out, views, mut messages) = outcome?;
    messages.sort_by_key(|m| (m.round, m.sender, m.receiver));
    let mut x = Mat::zeros(d, layout.dim());
    for (a, view) in views {
        let (off, w) = (layout.block_offset(a), layout.block_width(a));
        x.columns_mut(off, w).copy_from(&view.columns(off, w));
    }
    let x = PoseEstimate::new_unchecked(layout.clone(), x)?;
    Ok(DistributedRun {
        run: SolverRun {
            x,
            iterations: out.iterations,
            records: out.records,
            termination: out.termination,
            step_norms: out.step_norms,
            restarts: out.restarts,
            capped_local_solves: out.capped,
        },
        messages,
    })
}
