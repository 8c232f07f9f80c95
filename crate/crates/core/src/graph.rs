//! Multi-robot pose graph: robots, poses, intra-/inter-robot measurements and
//! the neighbor/separator structure derived from them.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{PgoError, Result};
use crate::manifold::{is_rotation, RotationBlock};
use crate::sparse::Mat;

/// A pose addressed by its owning robot and its index within that robot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PoseId {
    pub robot: usize,
    pub index: usize,
}

impl PoseId {
    pub fn new(robot: usize, index: usize) -> Self {
        PoseId { robot, index }
    }
}

/// Noisy relative pose `g̃ = (t̃, R̃)` from `src` to `dst` with isotropic
/// rotation weight `kappa` and translation weight `tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub src: PoseId,
    pub dst: PoseId,
    pub rot: Mat,
    pub trans: DVector<f64>,
    pub kappa: f64,
    pub tau: f64,
}

impl Measurement {
    pub fn new(
        src: PoseId,
        dst: PoseId,
        rot: Mat,
        trans: DVector<f64>,
        kappa: f64,
        tau: f64,
    ) -> Result<Self> {
        let d = rot.nrows();
        if rot.ncols() != d || trans.len() != d {
            return Err(PgoError::DimensionMismatch(format!(
                "measurement {src:?}->{dst:?}: rotation {}x{}, translation {}",
                rot.nrows(),
                rot.ncols(),
                trans.len()
            )));
        }
        if src == dst {
            return Err(PgoError::InvalidGraph(format!("self-measurement on {src:?}")));
        }
        if !is_rotation(&rot, RotationBlock::TOLERANCE) {
            return Err(PgoError::InvalidGraph(format!(
                "measurement {src:?}->{dst:?}: rotation is not in SO({d})"
            )));
        }
        if !(kappa > 0.0 && kappa.is_finite() && tau > 0.0 && tau.is_finite()) {
            return Err(PgoError::InvalidGraph(format!(
                "measurement {src:?}->{dst:?}: weights must be positive (kappa = {kappa}, tau = {tau})"
            )));
        }
        if !trans.iter().all(|v| v.is_finite()) {
            return Err(PgoError::InvalidGraph(format!(
                "measurement {src:?}->{dst:?}: non-finite translation"
            )));
        }
        Ok(Measurement {
            src,
            dst,
            rot,
            trans,
            kappa,
            tau,
        })
    }

    pub fn is_inter(&self) -> bool {
        self.src.robot != self.dst.robot
    }

    pub fn d(&self) -> usize {
        self.rot.nrows()
    }
}

/// Column layout of the stacked variable `X = [X¹ ⋯ X^A]`, with
/// `X^α = [t^α R^α]` (translations first, then rotations).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    d: usize,
    counts: Vec<usize>,
    offsets: Vec<usize>,
    first_pose: Vec<usize>,
}

impl Layout {
    pub fn new(d: usize, counts: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(counts.len());
        let mut first_pose = Vec::with_capacity(counts.len());
        let mut acc = 0;
        let mut poses = 0;
        for &n in &counts {
            offsets.push(acc);
            first_pose.push(poses);
            acc += (d + 1) * n;
            poses += n;
        }
        Layout {
            d,
            counts,
            offsets,
            first_pose,
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn robots(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, robot: usize) -> usize {
        self.counts[robot]
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn total_poses(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Number of columns of `X`, `(d+1)n`.
    pub fn dim(&self) -> usize {
        (self.d + 1) * self.total_poses()
    }

    pub fn block_offset(&self, robot: usize) -> usize {
        self.offsets[robot]
    }

    pub fn block_width(&self, robot: usize) -> usize {
        (self.d + 1) * self.counts[robot]
    }

    pub fn t_col(&self, p: PoseId) -> usize {
        self.offsets[p.robot] + p.index
    }

    pub fn r_col(&self, p: PoseId) -> usize {
        self.offsets[p.robot] + self.counts[p.robot] + self.d * p.index
    }

    /// Robot-major global pose index.
    pub fn global_index(&self, p: PoseId) -> usize {
        self.first_pose[p.robot] + p.index
    }

    pub fn pose_at(&self, global: usize) -> PoseId {
        let robot = match self.first_pose.binary_search(&global) {
            Ok(mut r) => {
                // skip robots that own no poses
                while self.counts[r] == 0 {
                    r += 1;
                }
                r
            }
            Err(r) => r - 1,
        };
        PoseId::new(robot, global - self.first_pose[robot])
    }

    pub fn contains(&self, p: PoseId) -> bool {
        p.robot < self.counts.len() && p.index < self.counts[p.robot]
    }

    /// The global columns `(t, R…)` owned by pose `p`.
    pub fn pose_columns(&self, p: PoseId) -> impl Iterator<Item = usize> {
        let t = self.t_col(p);
        let r = self.r_col(p);
        std::iter::once(t).chain(r..r + self.d)
    }
}

/// How poses of a single-robot graph are assigned to robots.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum PartitionStrategy {
    /// Pose `k` goes to robot `⌊k·A/n⌋`.
    #[default]
    Contiguous,
    /// Explicit robot id per pose; poses keep their relative order inside a robot.
    Explicit(Vec<usize>),
}

/// Immutable multi-robot pose graph.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseGraph {
    layout: Layout,
    edges: Vec<Measurement>,
    intra: Vec<Vec<usize>>,
    outgoing: Vec<Vec<usize>>,
    incoming: Vec<Vec<usize>>,
    n_minus: Vec<BTreeSet<usize>>,
    n_plus: Vec<BTreeSet<usize>>,
    separators: BTreeMap<(usize, usize), Vec<usize>>,
}

impl PoseGraph {
    /// Builds and validates a graph with `counts[α]` poses in robot `α`.
    pub fn new(d: usize, counts: Vec<usize>, edges: Vec<Measurement>) -> Result<Self> {
        if d != 2 && d != 3 {
            return Err(PgoError::InvalidParameter(format!("unsupported dimension d = {d}")));
        }
        if counts.is_empty() || counts.iter().sum::<usize>() == 0 {
            return Err(PgoError::InvalidGraph("graph has no poses".into()));
        }
        let layout = Layout::new(d, counts);
        let a = layout.robots();
        let mut intra = vec![Vec::new(); a];
        let mut outgoing = vec![Vec::new(); a];
        let mut incoming = vec![Vec::new(); a];
        let mut n_minus = vec![BTreeSet::new(); a];
        let mut n_plus = vec![BTreeSet::new(); a];
        let mut sep_sets: BTreeMap<(usize, usize), BTreeSet<usize>> = BTreeMap::new();

        for (e, m) in edges.iter().enumerate() {
            if m.d() != d {
                return Err(PgoError::DimensionMismatch(format!(
                    "edge {e} has dimension {} in a {d}-dimensional graph",
                    m.d()
                )));
            }
            if !layout.contains(m.src) || !layout.contains(m.dst) {
                return Err(PgoError::InvalidGraph(format!(
                    "edge {e} references a missing pose ({:?} -> {:?})",
                    m.src, m.dst
                )));
            }
            let (alpha, beta) = (m.src.robot, m.dst.robot);
            if alpha == beta {
                intra[alpha].push(e);
            } else {
                outgoing[alpha].push(e);
                incoming[beta].push(e);
                n_minus[alpha].insert(beta);
                n_plus[beta].insert(alpha);
                sep_sets.entry((beta, alpha)).or_default().insert(m.dst.index);
                sep_sets.entry((alpha, beta)).or_default().insert(m.src.index);
            }
        }

        let g = PoseGraph {
            layout,
            edges,
            intra,
            outgoing,
            incoming,
            n_minus,
            n_plus,
            separators: sep_sets
                .into_iter()
                .map(|(k, v)| (k, v.into_iter().collect()))
                .collect(),
        };
        g.check_connected()?;
        Ok(g)
    }

    fn check_connected(&self) -> Result<()> {
        let n = self.layout.total_poses();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        let mut components = n;
        for m in &self.edges {
            let a = find(&mut parent, self.layout.global_index(m.src));
            let b = find(&mut parent, self.layout.global_index(m.dst));
            if a != b {
                parent[a] = b;
                components -= 1;
            }
        }
        if components != 1 {
            return Err(PgoError::InvalidGraph(format!(
                "pose graph is not connected ({components} components)"
            )));
        }
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.layout.d()
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn robots(&self) -> usize {
        self.layout.robots()
    }

    pub fn num_poses(&self) -> usize {
        self.layout.total_poses()
    }

    pub fn edges(&self) -> &[Measurement] {
        &self.edges
    }

    /// Intra-robot edge indices of robot `α`.
    pub fn intra_edges(&self, robot: usize) -> &[usize] {
        &self.intra[robot]
    }

    /// Inter-robot edges with `α` as source.
    pub fn outgoing_edges(&self, robot: usize) -> &[usize] {
        &self.outgoing[robot]
    }

    /// Inter-robot edges with `α` as destination.
    pub fn incoming_edges(&self, robot: usize) -> &[usize] {
        &self.incoming[robot]
    }

    /// All edges touching robot `α` (intra, outgoing, incoming).
    pub fn incident_edges(&self, robot: usize) -> impl Iterator<Item = usize> + '_ {
        self.intra[robot]
            .iter()
            .chain(&self.outgoing[robot])
            .chain(&self.incoming[robot])
            .copied()
    }

    /// `(𝒩₋^α, 𝒩₊^α)`: robots that `α` measures, and robots that measure `α`.
    pub fn neighbor_sets(&self, robot: usize) -> (&BTreeSet<usize>, &BTreeSet<usize>) {
        (&self.n_minus[robot], &self.n_plus[robot])
    }

    /// `𝒩₋^α ∪ 𝒩₊^α`.
    pub fn neighbors(&self, robot: usize) -> BTreeSet<usize> {
        self.n_minus[robot].union(&self.n_plus[robot]).copied().collect()
    }

    /// Sorted pose indices of robot `owner` that share an edge with robot `peer`.
    pub fn separator_poses(&self, owner: usize, peer: usize) -> &[usize] {
        self.separators
            .get(&(owner, peer))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn num_inter_edges(&self) -> usize {
        self.outgoing.iter().map(Vec::len).sum()
    }

    /// Returns a copy with every weight multiplied by `c`.
    pub fn scaled_weights(&self, c: f64) -> Result<PoseGraph> {
        let edges = self
            .edges
            .iter()
            .map(|m| {
                let mut m = m.clone();
                m.kappa *= c;
                m.tau *= c;
                m
            })
            .collect();
        PoseGraph::new(self.d(), self.layout.counts().to_vec(), edges)
    }

    /// Splits a single-robot graph into `parts` robots.
    pub fn partition(&self, parts: usize, strategy: &PartitionStrategy) -> Result<PoseGraph> {
        let n = self.num_poses();
        if parts == 0 || parts > n {
            return Err(PgoError::InvalidPartition(format!(
                "cannot split {n} poses into {parts} robots"
            )));
        }
        let assignment: Vec<usize> = match strategy {
            PartitionStrategy::Contiguous => (0..n).map(|k| k * parts / n).collect(),
            PartitionStrategy::Explicit(a) => {
                if a.len() != n || a.iter().any(|&r| r >= parts) {
                    return Err(PgoError::InvalidPartition(
                        "explicit assignment must name a robot < parts for every pose".into(),
                    ));
                }
                a.clone()
            }
        };
        let mut counts = vec![0usize; parts];
        let mut new_id = Vec::with_capacity(n);
        for &r in &assignment {
            new_id.push(PoseId::new(r, counts[r]));
            counts[r] += 1;
        }
        if counts.iter().any(|&c| c == 0) {
            return Err(PgoError::InvalidPartition("a robot would own no poses".into()));
        }
        let edges = self
            .edges
            .iter()
            .map(|m| {
                let mut m = m.clone();
                m.src = new_id[self.layout.global_index(m.src)];
                m.dst = new_id[self.layout.global_index(m.dst)];
                m
            })
            .collect();
        PoseGraph::new(self.d(), counts, edges)
    }

    /// Relabels every pose by its robot-major global index into a single robot.
    pub fn merge(&self) -> PoseGraph {
        let edges = self
            .edges
            .iter()
            .map(|m| {
                let mut m = m.clone();
                m.src = PoseId::new(0, self.layout.global_index(m.src));
                m.dst = PoseId::new(0, self.layout.global_index(m.dst));
                m
            })
            .collect();
        PoseGraph::new(self.d(), vec![self.num_poses()], edges)
            .expect("merging a valid graph keeps it valid")
    }
}

/// One robot's variable `X^α = [t^α R^α]`, `d × (d+1)n_α`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseBlock {
    pub robot: usize,
    d: usize,
    data: Mat,
}

impl PoseBlock {
    pub fn new(robot: usize, d: usize, data: Mat) -> Result<Self> {
        if data.nrows() != d || data.ncols() % (d + 1) != 0 {
            return Err(PgoError::DimensionMismatch(format!(
                "pose block {}x{} for d = {d}",
                data.nrows(),
                data.ncols()
            )));
        }
        let n = data.ncols() / (d + 1);
        RotationBlock::new(data.columns(n, d * n).into_owned(), d)?;
        Ok(PoseBlock { robot, d, data })
    }

    pub(crate) fn new_unchecked(robot: usize, d: usize, data: Mat) -> Self {
        PoseBlock { robot, d, data }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.data.ncols() / (self.d + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }

    pub fn t(&self, i: usize) -> DVector<f64> {
        self.data.column(i).into_owned()
    }

    pub fn r(&self, i: usize) -> Mat {
        let n = self.len();
        self.data.columns(n + self.d * i, self.d).into_owned()
    }

    pub fn matrix(&self) -> &Mat {
        &self.data
    }

    pub fn into_matrix(self) -> Mat {
        self.data
    }
}

/// Full estimate `X = [X¹ ⋯ X^A]` laid out as in the owning graph.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseEstimate {
    layout: Layout,
    x: Mat,
}

impl PoseEstimate {
    /// Wraps a `d × (d+1)n` matrix, checking that every rotation block is in SO(d).
    pub fn new(layout: Layout, x: Mat) -> Result<Self> {
        let est = Self::new_unchecked(layout, x)?;
        for a in 0..est.layout.robots() {
            PoseBlock::new(a, est.layout.d(), est.block_matrix(a))?;
        }
        Ok(est)
    }

    /// Shape-checked only; rotation blocks may be arbitrary.
    pub fn new_unchecked(layout: Layout, x: Mat) -> Result<Self> {
        if x.nrows() != layout.d() || x.ncols() != layout.dim() {
            return Err(PgoError::DimensionMismatch(format!(
                "estimate {}x{} does not match layout {}x{}",
                x.nrows(),
                x.ncols(),
                layout.d(),
                layout.dim()
            )));
        }
        Ok(PoseEstimate { layout, x })
    }

    /// All translations zero, all rotations identity.
    pub fn identity(layout: Layout) -> Self {
        let mut x = Mat::zeros(layout.d(), layout.dim());
        for a in 0..layout.robots() {
            for i in 0..layout.count(a) {
                let c = layout.r_col(PoseId::new(a, i));
                x.columns_mut(c, layout.d()).fill_with_identity();
            }
        }
        PoseEstimate { layout, x }
    }

    /// Builds from per-pose `(t, R)` in robot-major global order.
    pub fn from_poses(layout: Layout, poses: &[(DVector<f64>, Mat)]) -> Result<Self> {
        if poses.len() != layout.total_poses() {
            return Err(PgoError::DimensionMismatch(format!(
                "{} poses for a layout of {}",
                poses.len(),
                layout.total_poses()
            )));
        }
        let d = layout.d();
        let mut x = Mat::zeros(d, layout.dim());
        for (k, (t, r)) in poses.iter().enumerate() {
            let p = layout.pose_at(k);
            x.column_mut(layout.t_col(p)).copy_from(t);
            x.columns_mut(layout.r_col(p), d).copy_from(r);
        }
        PoseEstimate::new(layout, x)
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn d(&self) -> usize {
        self.layout.d()
    }

    pub fn matrix(&self) -> &Mat {
        &self.x
    }

    pub fn matrix_mut(&mut self) -> &mut Mat {
        &mut self.x
    }

    pub fn into_matrix(self) -> Mat {
        self.x
    }

    pub fn t(&self, p: PoseId) -> DVector<f64> {
        self.x.column(self.layout.t_col(p)).into_owned()
    }

    pub fn r(&self, p: PoseId) -> Mat {
        self.x.columns(self.layout.r_col(p), self.d()).into_owned()
    }

    pub fn block_matrix(&self, robot: usize) -> Mat {
        self.x
            .columns(self.layout.block_offset(robot), self.layout.block_width(robot))
            .into_owned()
    }

    pub fn block(&self, robot: usize) -> PoseBlock {
        PoseBlock::new_unchecked(robot, self.d(), self.block_matrix(robot))
    }

    pub fn set_block(&mut self, robot: usize, data: &Mat) {
        let off = self.layout.block_offset(robot);
        let w = self.layout.block_width(robot);
        assert_eq!(data.shape(), (self.d(), w), "set_block: shape");
        self.x.columns_mut(off, w).copy_from(data);
    }

    /// Poses in robot-major global order.
    pub fn poses(&self) -> Vec<(DVector<f64>, Mat)> {
        (0..self.layout.total_poses())
            .map(|k| {
                let p = self.layout.pose_at(k);
                (self.t(p), self.r(p))
            })
            .collect()
    }

    /// Same poses in a different layout with the same global pose order.
    pub fn relayout(&self, layout: Layout) -> Result<PoseEstimate> {
        if layout.total_poses() != self.layout.total_poses() || layout.d() != self.d() {
            return Err(PgoError::DimensionMismatch(
                "relayout requires the same pose count and dimension".into(),
            ));
        }
        let d = self.d();
        let mut x = Mat::zeros(d, layout.dim());
        for k in 0..layout.total_poses() {
            let from = self.layout.pose_at(k);
            let to = layout.pose_at(k);
            x.column_mut(layout.t_col(to))
                .copy_from(&self.x.column(self.layout.t_col(from)));
            x.columns_mut(layout.r_col(to), d)
                .copy_from(&self.x.columns(self.layout.r_col(from), d));
        }
        Ok(PoseEstimate { layout, x })
    }

    /// Left-multiplies every pose by the rigid transform `(t, R)`.
    pub fn transformed(&self, t: &DVector<f64>, r: &Mat) -> PoseEstimate {
        let mut out = self.clone();
        for k in 0..self.layout.total_poses() {
            let p = self.layout.pose_at(k);
            let tp = r * self.t(p) + t;
            let rp = r * self.r(p);
            out.x.column_mut(self.layout.t_col(p)).copy_from(&tp);
            out.x
                .columns_mut(self.layout.r_col(p), self.d())
                .copy_from(&rp);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edge(src: PoseId, dst: PoseId, d: usize) -> Measurement {
        Measurement::new(src, dst, Mat::identity(d, d), DVector::zeros(d), 1.0, 1.0).unwrap()
    }

    fn chain(n: usize) -> PoseGraph {
        let edges = (0..n - 1)
            .map(|i| edge(PoseId::new(0, i), PoseId::new(0, i + 1), 2))
            .collect();
        PoseGraph::new(2, vec![n], edges).unwrap()
    }

    #[test]
    fn measurement_validation() {
        let p = PoseId::new(0, 0);
        let q = PoseId::new(0, 1);
        let i = Mat::identity(2, 2);
        let z = DVector::zeros(2);
        assert!(Measurement::new(p, p, i.clone(), z.clone(), 1.0, 1.0).is_err());
        assert!(Measurement::new(p, q, i.clone(), z.clone(), 0.0, 1.0).is_err());
        assert!(Measurement::new(p, q, i.clone(), z.clone(), 1.0, -1.0).is_err());
        let refl = Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(Measurement::new(p, q, refl, z.clone(), 1.0, 1.0).is_err());
        assert!(Measurement::new(p, q, i, DVector::zeros(3), 1.0, 1.0).is_err());
    }

    #[test]
    fn disconnected_graph_is_rejected() {
        let e = edge(PoseId::new(0, 0), PoseId::new(0, 1), 2);
        assert!(matches!(
            PoseGraph::new(2, vec![3], vec![e]),
            Err(PgoError::InvalidGraph(_))
        ));
    }

    #[test]
    fn single_pose_graph_is_valid() {
        let g = PoseGraph::new(3, vec![1], vec![]).unwrap();
        assert_eq!(g.num_poses(), 1);
        assert_eq!(g.layout().dim(), 4);
    }

    #[test]
    fn trivial_partition_is_identity() {
        let g = chain(5);
        assert_eq!(g.partition(1, &PartitionStrategy::Contiguous).unwrap(), g);
    }

    #[test]
    fn chain_partition_reclassifies_middle_edge() {
        let g = chain(4).partition(2, &PartitionStrategy::Contiguous).unwrap();
        assert_eq!(g.layout().counts(), &[2, 2]);
        let inter: Vec<_> = g.edges().iter().filter(|m| m.is_inter()).collect();
        assert_eq!(inter.len(), 1);
        assert_eq!(inter[0].src, PoseId::new(0, 1));
        assert_eq!(inter[0].dst, PoseId::new(1, 0));
        assert_eq!(g.separator_poses(0, 1), &[1]);
        assert_eq!(g.separator_poses(1, 0), &[0]);
    }

    #[test]
    fn partition_rejects_too_many_parts() {
        assert!(matches!(
            chain(3).partition(4, &PartitionStrategy::Contiguous),
            Err(PgoError::InvalidPartition(_))
        ));
        assert!(chain(3).partition(0, &PartitionStrategy::Contiguous).is_err());
    }

    #[test]
    fn neighbor_sets_by_definition() {
        let g = chain(4);
        let (minus, plus) = g.neighbor_sets(0);
        assert!(minus.is_empty() && plus.is_empty());

        let g = chain(4).partition(2, &PartitionStrategy::Contiguous).unwrap();
        assert_eq!(g.neighbor_sets(0).0.iter().copied().collect::<Vec<_>>(), vec![1]);
        assert!(g.neighbor_sets(0).1.is_empty());
        assert_eq!(g.neighbor_sets(1).1.iter().copied().collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn layout_indexing() {
        let l = Layout::new(3, vec![2, 0, 3]);
        assert_eq!(l.dim(), 20);
        assert_eq!(l.t_col(PoseId::new(2, 1)), 9);
        assert_eq!(l.r_col(PoseId::new(2, 1)), 8 + 3 + 3);
        assert_eq!(l.pose_at(2), PoseId::new(2, 0));
        assert_eq!(l.pose_at(1), PoseId::new(0, 1));
        assert_eq!(l.global_index(PoseId::new(2, 2)), 4);
    }

    #[test]
    fn relayout_round_trip() {
        let g = chain(5);
        let split = g.partition(2, &PartitionStrategy::Contiguous).unwrap();
        let mut x = PoseEstimate::identity(g.layout().clone());
        for k in 0..5 {
            x.matrix_mut()[(0, k)] = k as f64;
        }
        let y = x.relayout(split.layout().clone()).unwrap();
        assert_eq!(y.t(PoseId::new(1, 0))[0], 3.0);
        assert_eq!(y.relayout(g.layout().clone()).unwrap(), x);
    }
}
