//! Reader and writer for the g2o text format (`VERTEX_SE2`/`EDGE_SE2` and
//! `VERTEX_SE3:QUAT`/`EDGE_SE3:QUAT`).
//!
//! Information matrices are reduced to isotropic weights: `τ` is the mean of
//! the translational diagonal and `κ` the mean of the rotational diagonal.
//! Vertex ids are remapped to `0..n` in increasing id order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DVector, Matrix3, Quaternion, Rotation3, UnitQuaternion};

use crate::error::{PgoError, Result};
use crate::graph::{Layout, Measurement, PoseEstimate, PoseGraph, PoseId};
use crate::manifold::rotation_2d;
use crate::sparse::Mat;

/// A parsed g2o file.
#[derive(Debug, Clone)]
pub struct G2oDataset {
    /// Single-robot graph.
    pub graph: PoseGraph,
    /// Vertex estimates stored in the file.
    pub initial: PoseEstimate,
    /// Original vertex id of each pose, in pose order.
    pub vertex_ids: Vec<i64>,
}

impl G2oDataset {
    pub fn num_poses(&self) -> usize {
        self.graph.num_poses()
    }

    pub fn num_edges(&self) -> usize {
        self.graph.edges().len()
    }
}

struct RawEdge {
    line: usize,
    from: i64,
    to: i64,
    rot: Mat,
    trans: DVector<f64>,
    kappa: f64,
    tau: f64,
}

struct Line<'a> {
    no: usize,
    fields: std::str::SplitWhitespace<'a>,
}

impl Line<'_> {
    fn err(&self, message: impl Into<String>) -> PgoError {
        PgoError::ParseError {
            line: self.no,
            message: message.into(),
        }
    }

    fn id(&mut self) -> Result<i64> {
        let tok = self.fields.next().ok_or_else(|| self.err("missing vertex id"))?;
        tok.parse().map_err(|_| self.err(format!("invalid vertex id {tok:?}")))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        for k in 0..n {
            let tok = self
                .fields
                .next()
                .ok_or_else(|| self.err(format!("expected {n} numbers, found {k}")))?;
            let v: f64 = tok.parse().map_err(|_| self.err(format!("invalid number {tok:?}")))?;
            if !v.is_finite() {
                return Err(self.err(format!("non-finite number {tok:?}")));
            }
            out.push(v);
        }
        Ok(out)
    }

    fn finish(mut self) -> Result<()> {
        match self.fields.next() {
            Some(tok) => Err(self.err(format!("unexpected trailing field {tok:?}"))),
            None => Ok(()),
        }
    }
}

fn quaternion_to_rotation(line: &Line<'_>, q: &[f64]) -> Result<Mat> {
    let quat = Quaternion::new(q[3], q[0], q[1], q[2]);
    if quat.norm() < 1e-12 {
        return Err(line.err("zero quaternion"));
    }
    let r = UnitQuaternion::from_quaternion(quat).to_rotation_matrix();
    Ok(Mat::from_column_slice(3, 3, r.matrix().as_slice()))
}

/// Equal entries are returned as-is so written weights read back exactly.
fn mean(v: &[f64]) -> f64 {
    if v.iter().all(|&x| x == v[0]) {
        return v[0];
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Parses g2o text. Blank lines, `#` comments and `FIX` lines are skipped.
pub fn parse_g2o_str(text: &str) -> Result<G2oDataset> {
    let mut dim: Option<(usize, usize)> = None;
    let mut vertices: BTreeMap<i64, (DVector<f64>, Mat)> = BTreeMap::new();
    let mut edges = Vec::new();

    for (k, raw) in text.lines().enumerate() {
        let mut fields = raw.split_whitespace();
        let Some(tag) = fields.next() else { continue };
        if tag.starts_with('#') || tag == "FIX" {
            continue;
        }
        let mut line = Line { no: k + 1, fields };
        let d = match tag {
            "VERTEX_SE2" | "EDGE_SE2" => 2,
            "VERTEX_SE3:QUAT" | "EDGE_SE3:QUAT" => 3,
            other => return Err(line.err(format!("unsupported record {other:?}"))),
        };
        match dim {
            None => dim = Some((d, line.no)),
            Some((d0, first)) if d0 != d => {
                return Err(PgoError::DimensionMismatch(format!(
                    "line {}: {tag} in a file whose line {first} is {d0}-dimensional",
                    line.no
                )))
            }
            Some(_) => {}
        }
        match tag {
            "VERTEX_SE2" => {
                let id = line.id()?;
                let v = line.floats(3)?;
                let pose = (DVector::from_row_slice(&v[..2]), rotation_2d(v[2]));
                if vertices.insert(id, pose).is_some() {
                    return Err(line.err(format!("duplicate vertex {id}")));
                }
                line.finish()?;
            }
            "VERTEX_SE3:QUAT" => {
                let id = line.id()?;
                let v = line.floats(7)?;
                let pose = (DVector::from_row_slice(&v[..3]), quaternion_to_rotation(&line, &v[3..])?);
                if vertices.insert(id, pose).is_some() {
                    return Err(line.err(format!("duplicate vertex {id}")));
                }
                line.finish()?;
            }
            "EDGE_SE2" => {
                let (from, to) = (line.id()?, line.id()?);
                let v = line.floats(3)?;
                // Upper triangle of the 3×3 information in (x, y, θ) order.
                let info = line.floats(6)?;
                edges.push(RawEdge {
                    line: line.no,
                    from,
                    to,
                    rot: rotation_2d(v[2]),
                    trans: DVector::from_row_slice(&v[..2]),
                    kappa: info[5],
                    tau: mean(&[info[0], info[3]]),
                });
                line.finish()?;
            }
            _ => {
                let (from, to) = (line.id()?, line.id()?);
                let v = line.floats(7)?;
                // Upper triangle of the 6×6 information in (x, y, z, rx, ry, rz) order.
                let info = line.floats(21)?;
                edges.push(RawEdge {
                    line: line.no,
                    from,
                    to,
                    rot: quaternion_to_rotation(&line, &v[3..])?,
                    trans: DVector::from_row_slice(&v[..3]),
                    kappa: mean(&[info[15], info[18], info[20]]),
                    tau: mean(&[info[0], info[6], info[11]]),
                });
                line.finish()?;
            }
        }
    }

    let Some((d, _)) = dim else {
        return Err(PgoError::ParseError {
            line: text.lines().count().max(1),
            message: "no vertices".into(),
        });
    };
    if vertices.is_empty() {
        return Err(PgoError::ParseError {
            line: 1,
            message: "no vertices".into(),
        });
    }
    let index: BTreeMap<i64, usize> = vertices.keys().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut measurements = Vec::with_capacity(edges.len());
    for e in edges {
        let lookup = |id: i64| {
            index.get(&id).copied().ok_or_else(|| PgoError::ParseError {
                line: e.line,
                message: format!("edge references unknown vertex {id}"),
            })
        };
        let (i, j) = (lookup(e.from)?, lookup(e.to)?);
        let m = Measurement::new(PoseId::new(0, i), PoseId::new(0, j), e.rot, e.trans, e.kappa, e.tau)
            .map_err(|err| PgoError::ParseError {
                line: e.line,
                message: err.to_string(),
            })?;
        measurements.push(m);
    }
    let n = vertices.len();
    let graph = PoseGraph::new(d, vec![n], measurements)?;
    let vertex_ids: Vec<i64> = vertices.keys().copied().collect();
    let poses: Vec<(DVector<f64>, Mat)> = vertices.into_values().collect();
    let initial = PoseEstimate::from_poses(Layout::new(d, vec![n]), &poses)?;
    Ok(G2oDataset {
        graph,
        initial,
        vertex_ids,
    })
}

pub fn parse_g2o(path: impl AsRef<Path>) -> Result<G2oDataset> {
    parse_g2o_str(&std::fs::read_to_string(path)?)
}

fn quaternion_of(r: &Mat) -> [f64; 4] {
    let m = Matrix3::from_iterator(r.iter().copied());
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m));
    [q.i, q.j, q.k, q.w]
}

fn angle_of(r: &Mat) -> f64 {
    r[(1, 0)].atan2(r[(0, 0)])
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

/// Writes a graph (any partition; poses are numbered in global order) and
/// its vertex estimates as g2o text. Weights become diagonal information.
pub fn write_g2o_string(g: &PoseGraph, estimate: &PoseEstimate) -> Result<String> {
    let d = g.d();
    if d != 2 && d != 3 {
        return Err(PgoError::DimensionMismatch(format!("g2o supports d = 2 or 3, got {d}")));
    }
    if estimate.layout() != g.layout() {
        return Err(PgoError::DimensionMismatch("estimate layout differs from the graph".into()));
    }
    let layout = g.layout();
    let mut out = String::new();
    for (k, (t, r)) in estimate.poses().iter().enumerate() {
        let fields = if d == 2 {
            join([t[0], t[1], angle_of(r)])
        } else {
            join(t.iter().copied().chain(quaternion_of(r)))
        };
        let tag = if d == 2 { "VERTEX_SE2" } else { "VERTEX_SE3:QUAT" };
        writeln!(out, "{tag} {k} {fields}").expect("writing to a String");
    }
    for m in g.edges() {
        let (i, j) = (layout.global_index(m.src), layout.global_index(m.dst));
        let (tag, pose, info) = if d == 2 {
            let info = [m.tau, 0.0, 0.0, m.tau, 0.0, m.kappa];
            ("EDGE_SE2", join([m.trans[0], m.trans[1], angle_of(&m.rot)]), join(info))
        } else {
            let mut info = [0.0; 21];
            for idx in [0, 6, 11] {
                info[idx] = m.tau;
            }
            for idx in [15, 18, 20] {
                info[idx] = m.kappa;
            }
            (
                "EDGE_SE3:QUAT",
                join(m.trans.iter().copied().chain(quaternion_of(&m.rot))),
                join(info),
            )
        };
        writeln!(out, "{tag} {i} {j} {pose} {info}").expect("writing to a String");
    }
    Ok(out)
}

pub fn write_g2o(path: impl AsRef<Path>, g: &PoseGraph, estimate: &PoseEstimate) -> Result<()> {
    std::fs::write(path, write_g2o_string(g, estimate)?)?;
    Ok(())
}
