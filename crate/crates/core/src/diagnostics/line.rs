use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::VelocityField;
use crate::flow::{flow_snapshots, BrownianPath};
use crate::geometry::Vec3;

/// Initial material segment and refinement controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSpec {
    pub from: Vec3,
    pub to: Vec3,
    pub initial_vertices: usize,
    /// Bisect any segment whose image is longer than this.
    pub refine_len: f64,
    /// Bisect both segments at a vertex where the polyline turns by more than
    /// this many radians. Chord length alone never resolves a spiral wound
    /// inside one `refine_len`.
    pub max_turn: f64,
    /// Segments shorter than this are never bisected for turning.
    pub min_len: f64,
    pub vertex_budget: usize,
}

impl Default for LineSpec {
    fn default() -> Self {
        Self {
            from: Vec3::new(-1.0, 0.0, 0.0),
            to: Vec3::new(1.0, 0.0, 0.0),
            initial_vertices: 9,
            refine_len: 0.05,
            max_turn: 0.5,
            min_len: 1e-9,
            vertex_budget: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    pub t: f64,
    pub vertices: Vec<Vec3>,
    pub arc_length: f64,
}

impl Polyline {
    pub fn new(t: f64, vertices: Vec<Vec3>) -> Self {
        let arc_length = vertices.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
        Self { t, vertices, arc_length }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineEvolution {
    /// One polyline per snapshot, in snapshot order.
    pub polylines: Vec<Polyline>,
    /// First snapshot time at which refinement wanted more vertices than the
    /// budget allowed. Later snapshots reuse the capped vertex set.
    pub exhausted_at: Option<f64>,
}

struct Vertex {
    s: f64,
    /// Position at each snapshot.
    pos: Vec<Vec3>,
}

fn turn_angle(a: Vec3, b: Vec3) -> f64 {
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (a.dot(b) / (na * nb)).clamp(-1.0, 1.0).acos()
}

/// Segment indices needing bisection at snapshot `j`, ascending.
fn marked_segments(vs: &[Vertex], j: usize, spec: &LineSpec) -> Vec<usize> {
    let segs: Vec<Vec3> = vs.windows(2).map(|w| w[1].pos[j] - w[0].pos[j]).collect();
    let mut mark: Vec<bool> = segs.iter().map(|d| d.norm() > spec.refine_len).collect();
    for i in 1..segs.len() {
        if turn_angle(segs[i - 1], segs[i]) > spec.max_turn {
            for k in [i - 1, i] {
                if segs[k].norm() > spec.min_len {
                    mark[k] = true;
                }
            }
        }
    }
    mark.iter().enumerate().filter_map(|(i, &m)| m.then_some(i)).collect()
}

/// Advect a material line and refine it adaptively, stopping refinement (but
/// not reporting) once the vertex budget is spent.
///
/// New vertices are bisection points in the Lagrangian label and are advected
/// from `t = 0` on the same Brownian path. Refinement at a given snapshot runs
/// in passes over the whole line; when the budget cannot take a full pass the
/// leading marked segments are split first, so the vertex set for a smaller
/// budget is always a subset of the one for a larger budget.
pub fn evolve_line_partial(
    field: &dyn VelocityField,
    path: &BrownianPath,
    sigma: f64,
    snapshots: &[f64],
    spec: &LineSpec,
) -> Result<LineEvolution> {
    if (spec.to - spec.from).norm() == 0.0 || !spec.from.is_finite() || !spec.to.is_finite() {
        return Err(Error::InvalidParameter("initial segment is degenerate".into()));
    }
    if !(spec.refine_len > 0.0 && spec.max_turn > 0.0 && spec.min_len >= 0.0) {
        return Err(Error::InvalidParameter("refine_len and max_turn must be positive".into()));
    }
    if spec.initial_vertices < 2 || spec.vertex_budget < spec.initial_vertices {
        return Err(Error::InvalidParameter(format!(
            "need 2 <= initial_vertices ({}) <= vertex_budget ({})",
            spec.initial_vertices, spec.vertex_budget
        )));
    }
    if snapshots.is_empty() {
        return Err(Error::InvalidParameter("no snapshot times".into()));
    }
    let indices = snapshots.iter().map(|&t| path.step_index(t)).collect::<Result<Vec<_>>>()?;
    if indices.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("snapshot times must be ascending".into()));
    }

    let advect = |s: f64| -> Result<Vertex> {
        let x0 = spec.from + (spec.to - spec.from) * s;
        Ok(Vertex {
            s,
            pos: flow_snapshots(field, x0, path, sigma, &indices)?,
        })
    };
    let n0 = spec.initial_vertices;
    let mut vs: Vec<Vertex> = (0..n0)
        .into_par_iter()
        .map(|i| advect(i as f64 / (n0 - 1) as f64))
        .collect::<Result<_>>()?;

    let mut exhausted_at = None;
    let mut polylines = Vec::with_capacity(snapshots.len());
    for (j, &t) in snapshots.iter().enumerate() {
        while exhausted_at.is_none() {
            let marked = marked_segments(&vs, j, spec);
            if marked.is_empty() {
                break;
            }
            let room = spec.vertex_budget - vs.len();
            let take = room.min(marked.len());
            if take < marked.len() {
                exhausted_at = Some(t);
            }
            if take == 0 {
                break;
            }
            let fresh: Vec<Vertex> = marked[..take]
                .par_iter()
                .map(|&i| advect(0.5 * (vs[i].s + vs[i + 1].s)))
                .collect::<Result<_>>()?;
            let mut merged = Vec::with_capacity(vs.len() + take);
            let mut fresh = fresh.into_iter().zip(&marked[..take]).peekable();
            for (i, v) in vs.into_iter().enumerate() {
                merged.push(v);
                if let Some((_, &seg)) = fresh.peek() {
                    if seg == i {
                        merged.push(fresh.next().expect("peeked").0);
                    }
                }
            }
            vs = merged;
        }
        polylines.push(Polyline::new(t, vs.iter().map(|v| v.pos[j]).collect()));
    }
    Ok(LineEvolution { polylines, exhausted_at })
}

/// As [`evolve_line_partial`], failing with `VertexBudgetExceeded` when the
/// budget runs out.
pub fn evolve_line(
    field: &dyn VelocityField,
    path: &BrownianPath,
    sigma: f64,
    snapshots: &[f64],
    spec: &LineSpec,
) -> Result<Vec<Polyline>> {
    let evo = evolve_line_partial(field, path, sigma, snapshots, spec)?;
    match evo.exhausted_at {
        Some(t) => Err(Error::VertexBudgetExceeded {
            budget: spec.vertex_budget,
            t,
        }),
        None => Ok(evo.polylines),
    }
}
