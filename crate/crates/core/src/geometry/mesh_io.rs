//! Plain-text mesh exchange format.
//!
//! ```text
//! DGNN-MESH v1
//! vertices <n>
//! <x> <y>
//! triangles <m>
//! <i> <j> <k>
//! boundary <b>
//! <i> <j> <kind>
//! ```
//!
//! Indices are 0-based and triangles counterclockwise. `kind` is
//! `dirichlet` or `periodic`; periodic edges are re-paired on import by
//! matching translated edges.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{DgnnError, Result};

use super::{BoundaryKind, EdgeKind, Mesh2D};

pub const MESH_HEADER: &str = "DGNN-MESH v1";

pub fn write_mesh(mesh: &Mesh2D) -> String {
    let mut s = String::new();
    writeln!(s, "{MESH_HEADER}").unwrap();
    writeln!(s, "vertices {}", mesh.vertices.len()).unwrap();
    for v in &mesh.vertices {
        writeln!(s, "{:?} {:?}", v[0], v[1]).unwrap();
    }
    writeln!(s, "triangles {}", mesh.triangles.len()).unwrap();
    for t in &mesh.triangles {
        writeln!(s, "{} {} {}", t[0], t[1], t[2]).unwrap();
    }
    let mut lines = Vec::new();
    for e in &mesh.edges {
        match e.kind {
            EdgeKind::Interior => {}
            EdgeKind::Dirichlet => lines.push(format!("{} {} dirichlet", e.vertices[0], e.vertices[1])),
            EdgeKind::Periodic => {
                lines.push(format!("{} {} periodic", e.vertices[0], e.vertices[1]));
                let p = e.partner_vertices.expect("periodic edge without partner");
                lines.push(format!("{} {} periodic", p[1], p[0]));
            }
        }
    }
    writeln!(s, "boundary {}", lines.len()).unwrap();
    for l in lines {
        writeln!(s, "{l}").unwrap();
    }
    s
}

fn parse_count<'a>(it: &mut impl Iterator<Item = (usize, &'a str)>, name: &str) -> Result<usize> {
    let (ln, line) = it.next().ok_or_else(|| DgnnError::Parse(format!("missing `{name}` section")))?;
    let mut parts = line.split_whitespace();
    if parts.next() != Some(name) {
        return Err(DgnnError::Parse(format!("line {}: expected `{name} <count>`", ln + 1)));
    }
    parts
        .next()
        .and_then(|c| c.parse().ok())
        .ok_or_else(|| DgnnError::Parse(format!("line {}: bad count", ln + 1)))
}

pub fn read_mesh(text: &str) -> Result<Mesh2D> {
    let mut it = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match it.next() {
        Some((_, l)) if l.trim() == MESH_HEADER => {}
        _ => return Err(DgnnError::Parse(format!("missing `{MESH_HEADER}` header"))),
    }
    let nv = parse_count(&mut it, "vertices")?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = it.next().ok_or_else(|| DgnnError::Parse("truncated vertex list".into()))?;
        let v: Vec<f64> = l.split_whitespace().map(|x| x.parse::<f64>()).collect::<std::result::Result<_, _>>()
            .map_err(|e| DgnnError::Parse(format!("line {}: {e}", ln + 1)))?;
        if v.len() != 2 {
            return Err(DgnnError::Parse(format!("line {}: expected `x y`", ln + 1)));
        }
        vertices.push([v[0], v[1]]);
    }
    let nt = parse_count(&mut it, "triangles")?;
    let mut triangles = Vec::with_capacity(nt);
    for _ in 0..nt {
        let (ln, l) = it.next().ok_or_else(|| DgnnError::Parse("truncated triangle list".into()))?;
        let v: Vec<usize> = l.split_whitespace().map(|x| x.parse::<usize>()).collect::<std::result::Result<_, _>>()
            .map_err(|e| DgnnError::Parse(format!("line {}: {e}", ln + 1)))?;
        if v.len() != 3 {
            return Err(DgnnError::Parse(format!("line {}: expected `i j k`", ln + 1)));
        }
        triangles.push([v[0], v[1], v[2]]);
    }
    let nb = parse_count(&mut it, "boundary")?;
    let mut kinds: HashMap<(usize, usize), EdgeKind> = HashMap::new();
    for _ in 0..nb {
        let (ln, l) = it.next().ok_or_else(|| DgnnError::Parse("truncated boundary list".into()))?;
        let p: Vec<&str> = l.split_whitespace().collect();
        if p.len() != 3 {
            return Err(DgnnError::Parse(format!("line {}: expected `i j kind`", ln + 1)));
        }
        let (i, j): (usize, usize) = (
            p[0].parse().map_err(|_| DgnnError::Parse(format!("line {}: bad index", ln + 1)))?,
            p[1].parse().map_err(|_| DgnnError::Parse(format!("line {}: bad index", ln + 1)))?,
        );
        let kind = match p[2] {
            "dirichlet" => EdgeKind::Dirichlet,
            "periodic" => EdgeKind::Periodic,
            other => return Err(DgnnError::Parse(format!("line {}: unknown boundary kind `{other}`", ln + 1))),
        };
        kinds.insert((i.min(j), i.max(j)), kind);
    }
    // Each boundary edge becomes its own side; periodic sides are then
    // paired with the farthest translated copy of equal length.
    let mut side_ids: HashMap<(usize, usize), usize> = HashMap::new();
    let mut keys: Vec<(usize, usize)> = kinds.keys().copied().collect();
    keys.sort_unstable();
    for (s, k) in keys.iter().enumerate() {
        side_ids.insert(*k, s);
    }
    let mesh = Mesh2D::from_triangles(vertices, triangles, |a, b| side_ids.get(&(a.min(b), a.max(b))).copied())?;
    if let Some(e) = mesh.edges.iter().find(|e| e.kind == EdgeKind::Dirichlet && e.side.is_none()) {
        return Err(DgnnError::Parse(format!("boundary edge {:?} missing from boundary list", e.vertices)));
    }
    let mut spec = vec![BoundaryKind::Dirichlet; keys.len()];
    let periodic: Vec<usize> = keys.iter().enumerate().filter(|(_, k)| kinds[k] == EdgeKind::Periodic).map(|(s, _)| s).collect();
    let edge_of_side: HashMap<usize, usize> =
        mesh.edges.iter().enumerate().filter_map(|(i, e)| e.side.map(|s| (s, i))).collect();
    let mut taken = vec![false; keys.len()];
    for &s in &periodic {
        if taken[s] {
            continue;
        }
        let e = &mesh.edges[edge_of_side[&s]];
        let [a, b] = e.vertices;
        let (pa, pb) = (mesh.vertices[a], mesh.vertices[b]);
        let mid = [(pa[0] + pb[0]) / 2.0, (pa[1] + pb[1]) / 2.0];
        let dir = [pb[0] - pa[0], pb[1] - pa[1]];
        let mut best: Option<(usize, f64)> = None;
        for &o in &periodic {
            if o == s || taken[o] {
                continue;
            }
            let f = &mesh.edges[edge_of_side[&o]];
            let [c, d] = f.vertices;
            let (pc, pd) = (mesh.vertices[c], mesh.vertices[d]);
            let odir = [pd[0] - pc[0], pd[1] - pc[1]];
            let cross = dir[0] * odir[1] - dir[1] * odir[0];
            if (f.length - e.length).abs() > 1e-9 * e.length || cross.abs() > 1e-9 * e.length * f.length {
                continue;
            }
            let omid = [(pc[0] + pd[0]) / 2.0, (pc[1] + pd[1]) / 2.0];
            let dist = (omid[0] - mid[0]).hypot(omid[1] - mid[1]);
            if best.map_or(true, |(_, bd)| dist > bd) {
                best = Some((o, dist));
            }
        }
        let (o, _) = best.ok_or_else(|| DgnnError::Parse("periodic edge without a partner".into()))?;
        spec[s] = BoundaryKind::Periodic { partner: o };
        spec[o] = BoundaryKind::Periodic { partner: s };
        taken[s] = true;
        taken[o] = true;
    }
    mesh.classify_edges(&spec)
}

/// Summary printed next to an exported mesh.
#[derive(Debug, Clone, Serialize)]
pub struct MeshSummary {
    pub elements: usize,
    pub vertices: usize,
    pub edges: usize,
    pub interior_edges: usize,
    pub boundary_edges: usize,
    pub periodic_edges: usize,
    pub min_area: f64,
    pub max_area: f64,
    pub total_area: f64,
    pub min_angle_degrees: f64,
}

impl MeshSummary {
    pub fn of(mesh: &Mesh2D) -> Self {
        let areas: Vec<f64> = (0..mesh.num_elements()).map(|e| mesh.area(e)).collect();
        Self {
            elements: mesh.num_elements(),
            vertices: mesh.vertices.len(),
            edges: mesh.edges.len(),
            interior_edges: mesh.count_edges(EdgeKind::Interior),
            boundary_edges: mesh.count_edges(EdgeKind::Dirichlet),
            periodic_edges: mesh.count_edges(EdgeKind::Periodic),
            min_area: areas.iter().copied().fold(f64::INFINITY, f64::min),
            max_area: areas.iter().copied().fold(0.0, f64::max),
            total_area: areas.iter().sum(),
            min_angle_degrees: (0..mesh.num_elements()).map(|e| mesh.min_angle_degrees(e)).fold(f64::INFINITY, f64::min),
        }
    }
}
