//! Uniform conforming triangulations of axis-aligned rectangles.
//!
//! Every grid cell is split along the same lower-left to upper-right diagonal,
//! so vertex/triangle/edge counts are forced by the subdivision count. The
//! four boundary sides carry tags following the convention: side 1 is the
//! right edge (x = x_max), side 2 the bottom, side 3 the left, side 4 the top.

use crate::error::{Error, Result};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rectangle {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rectangle {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        if !(x1 > x0 && y1 > y0) {
            return Err(Error::InvalidArgument(format!(
                "degenerate rectangle [{x0},{x1}]x[{y0},{y1}]"
            )));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    pub fn unit_square() -> Self {
        Self { x0: 0.0, y0: 0.0, x1: 1.0, y1: 1.0 }
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }
}

/// Boundary side tags. `Gamma1` = right (x = x_max), `Gamma2` = bottom,
/// `Gamma3` = left, `Gamma4` = top.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BoundaryTag {
    Gamma1,
    Gamma2,
    Gamma3,
    Gamma4,
}

impl BoundaryTag {
    pub const ALL: [BoundaryTag; 4] =
        [BoundaryTag::Gamma1, BoundaryTag::Gamma2, BoundaryTag::Gamma3, BoundaryTag::Gamma4];
}

/// Undirected edge with sorted endpoints and adjacent triangles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    /// Endpoint vertex indices, `v[0] < v[1]`.
    pub v: [usize; 2],
    /// Adjacent triangles; boundary edges have exactly one.
    pub tri: [Option<usize>; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryFacet {
    pub edge: usize,
    pub tag: BoundaryTag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f64; 2]>,
    /// Vertex index triples, counterclockwise.
    pub triangles: Vec<[usize; 3]>,
    pub edges: Vec<Edge>,
    /// Per triangle, the edge index opposite each local vertex.
    pub tri_edges: Vec<[usize; 3]>,
    pub boundary: Vec<BoundaryFacet>,
    pub domain: Rectangle,
    /// Subdivisions per side used in construction.
    pub subdivisions: usize,
}

impl Mesh {
    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn triangle_vertices(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [p0, p1, p2] = self.triangle_vertices(t);
        0.5 * ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]))
    }

    /// Maximum edge length.
    pub fn h_max(&self) -> f64 {
        self.edges
            .iter()
            .map(|e| {
                let a = self.vertices[e.v[0]];
                let b = self.vertices[e.v[1]];
                ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
            })
            .fold(0.0, f64::max)
    }

    pub fn edge_length(&self, e: usize) -> f64 {
        let a = self.vertices[self.edges[e].v[0]];
        let b = self.vertices[self.edges[e].v[1]];
        ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
    }

    pub fn edge_midpoint(&self, e: usize) -> [f64; 2] {
        let a = self.vertices[self.edges[e].v[0]];
        let b = self.vertices[self.edges[e].v[1]];
        [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
    }

    /// Boundary facets with their outward unit normals.
    pub fn boundary_facets(&self) -> Vec<(usize, BoundaryTag, [f64; 2])> {
        self.boundary
            .iter()
            .map(|bf| (bf.edge, bf.tag, self.outward_normal(bf.edge)))
            .collect()
    }

    /// Outward unit normal of a boundary edge (perpendicular to the edge,
    /// pointing away from the adjacent triangle's opposite vertex).
    pub fn outward_normal(&self, e: usize) -> [f64; 2] {
        let edge = &self.edges[e];
        let t = edge.tri[0].expect("edge has an adjacent triangle");
        let [a, b] = edge.v;
        let opposite = self.triangles[t]
            .iter()
            .copied()
            .find(|&v| v != a && v != b)
            .expect("triangle has a third vertex");
        let pa = self.vertices[a];
        let pb = self.vertices[b];
        let po = self.vertices[opposite];
        let tx = pb[0] - pa[0];
        let ty = pb[1] - pa[1];
        let len = (tx * tx + ty * ty).sqrt();
        let mut n = [ty / len, -tx / len];
        // flip if it points toward the opposite vertex
        let dot = n[0] * (po[0] - pa[0]) + n[1] * (po[1] - pa[1]);
        if dot > 0.0 {
            n = [-n[0], -n[1]];
        }
        n
    }
}

/// Build the uniform triangulation with `n` subdivisions per side.
///
/// Vertices are numbered row-major (x fastest), each cell is split along its
/// lower-left to upper-right diagonal, and edges are numbered in lexicographic
/// order of their sorted endpoint pairs, so identical inputs give bit-identical
/// meshes.
pub fn build_uniform_mesh(n: usize, domain: Rectangle) -> Result<Mesh> {
    if n == 0 {
        return Err(Error::InvalidArgument("mesh subdivisions must be >= 1".into()));
    }
    let np = n + 1;
    let hx = (domain.x1 - domain.x0) / n as f64;
    let hy = (domain.y1 - domain.y0) / n as f64;

    let mut vertices = Vec::with_capacity(np * np);
    for j in 0..np {
        for i in 0..np {
            // Endpoints exactly on the rectangle sides so boundary tagging is exact.
            let x = if i == n { domain.x1 } else { domain.x0 + i as f64 * hx };
            let y = if j == n { domain.y1 } else { domain.y0 + j as f64 * hy };
            vertices.push([x, y]);
        }
    }

    let vid = |i: usize, j: usize| j * np + i;
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let v00 = vid(i, j);
            let v10 = vid(i + 1, j);
            let v11 = vid(i + 1, j + 1);
            let v01 = vid(i, j + 1);
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }

    finish_mesh(vertices, triangles, domain, n)
}

/// Assemble edge tables and boundary tags for an existing triangle list.
/// Used by `build_uniform_mesh` and by tests that permute vertex numbering.
pub fn finish_mesh(
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    domain: Rectangle,
    subdivisions: usize,
) -> Result<Mesh> {
    let mut edge_map: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (t, tri) in triangles.iter().enumerate() {
        for k in 0..3 {
            let a = tri[(k + 1) % 3];
            let b = tri[(k + 2) % 3];
            let key = (a.min(b), a.max(b));
            edge_map.entry(key).or_default().push(t);
        }
    }

    let mut edges = Vec::with_capacity(edge_map.len());
    let mut edge_index: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (key, tris) in &edge_map {
        if tris.len() > 2 {
            return Err(Error::Mesh(format!("edge {key:?} shared by {} triangles", tris.len())));
        }
        edge_index.insert(*key, edges.len());
        edges.push(Edge {
            v: [key.0, key.1],
            tri: [Some(tris[0]), tris.get(1).copied()],
        });
    }

    let mut tri_edges = Vec::with_capacity(triangles.len());
    for tri in &triangles {
        let mut te = [0usize; 3];
        for (k, slot) in te.iter_mut().enumerate() {
            let a = tri[(k + 1) % 3];
            let b = tri[(k + 2) % 3];
            *slot = edge_index[&(a.min(b), a.max(b))];
        }
        tri_edges.push(te);
    }

    let tol = 1e-12 * (domain.x1 - domain.x0).max(domain.y1 - domain.y0);
    let mut boundary = Vec::new();
    for (e, edge) in edges.iter().enumerate() {
        if edge.tri[1].is_some() {
            continue;
        }
        let a = vertices[edge.v[0]];
        let b = vertices[edge.v[1]];
        let tag = if (a[0] - domain.x1).abs() < tol && (b[0] - domain.x1).abs() < tol {
            BoundaryTag::Gamma1
        } else if (a[1] - domain.y0).abs() < tol && (b[1] - domain.y0).abs() < tol {
            BoundaryTag::Gamma2
        } else if (a[0] - domain.x0).abs() < tol && (b[0] - domain.x0).abs() < tol {
            BoundaryTag::Gamma3
        } else if (a[1] - domain.y1).abs() < tol && (b[1] - domain.y1).abs() < tol {
            BoundaryTag::Gamma4
        } else {
            return Err(Error::Mesh(format!("boundary edge {e} lies on no rectangle side")));
        };
        boundary.push(BoundaryFacet { edge: e, tag });
    }

    let mesh = Mesh { vertices, triangles, edges, tri_edges, boundary, domain, subdivisions };
    for t in 0..mesh.triangle_count() {
        if mesh.signed_area(t) <= 0.0 {
            return Err(Error::Mesh(format!("triangle {t} has non-positive area")));
        }
    }
    Ok(mesh)
}
