//! Global degree-of-freedom maps for the scalar P1/P2 and vector P2 spaces,
//! Dirichlet constraint sets, nodal interpolation, and the rigid-motion basis.
//!
//! Numbering is deterministic: scalar nodes are the mesh vertices first, then
//! the edge midpoints; vector dofs interleave the two components per node
//! (dof = 2*node + component).

use crate::element::ElementKind;
use crate::mesh::{BoundaryTag, Mesh};
use std::sync::Arc;

pub type ScalarFn = Arc<dyn Fn([f64; 2], f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceKind {
    ScalarP1,
    ScalarP2,
    VectorP2,
}

impl SpaceKind {
    pub fn element(&self) -> ElementKind {
        match self {
            SpaceKind::ScalarP1 => ElementKind::P1,
            SpaceKind::ScalarP2 | SpaceKind::VectorP2 => ElementKind::P2,
        }
    }

    pub fn components(&self) -> usize {
        match self {
            SpaceKind::VectorP2 => 2,
            _ => 1,
        }
    }
}

/// Vector component selector for constraint construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Scalar,
    X,
    Y,
}

#[derive(Debug, Clone)]
pub struct DofMap {
    pub kind: SpaceKind,
    pub dof_count: usize,
    /// Scalar nodes per element (stride = element node count).
    cell_nodes: Vec<usize>,
    stride: usize,
    /// Geometric location of each scalar node.
    pub node_location: Vec<[f64; 2]>,
    pub triangle_count: usize,
}

impl DofMap {
    pub fn node_count(&self) -> usize {
        self.node_location.len()
    }

    /// Scalar node indices of element `t`.
    pub fn nodes_of(&self, t: usize) -> &[usize] {
        &self.cell_nodes[t * self.stride..(t + 1) * self.stride]
    }

    /// Global dofs of element `t` in local order; vector spaces interleave
    /// components per node.
    pub fn dofs_of(&self, t: usize) -> Vec<usize> {
        let nodes = self.nodes_of(t);
        match self.kind.components() {
            1 => nodes.to_vec(),
            _ => {
                let mut dofs = Vec::with_capacity(2 * nodes.len());
                for &n in nodes {
                    dofs.push(2 * n);
                    dofs.push(2 * n + 1);
                }
                dofs
            }
        }
    }

    /// Location of a dof (vector dofs share their node's location).
    pub fn dof_location(&self, dof: usize) -> [f64; 2] {
        match self.kind.components() {
            1 => self.node_location[dof],
            _ => self.node_location[dof / 2],
        }
    }
}

pub fn build_dof_map(mesh: &Mesh, kind: SpaceKind) -> DofMap {
    let nv = mesh.vertex_count();
    let element = kind.element();
    let stride = element.node_count();
    let mut cell_nodes = Vec::with_capacity(stride * mesh.triangle_count());
    for t in 0..mesh.triangle_count() {
        let tri = mesh.triangles[t];
        cell_nodes.extend_from_slice(&tri);
        if element == ElementKind::P2 {
            for e in mesh.tri_edges[t] {
                cell_nodes.push(nv + e);
            }
        }
    }
    let mut node_location: Vec<[f64; 2]> = mesh.vertices.clone();
    if element == ElementKind::P2 {
        for e in 0..mesh.edge_count() {
            node_location.push(mesh.edge_midpoint(e));
        }
    }
    let dof_count = node_location.len() * kind.components();
    DofMap {
        kind,
        dof_count,
        cell_nodes,
        stride,
        node_location,
        triangle_count: mesh.triangle_count(),
    }
}

/// Prescribed values on a set of dofs; values are sampled from one function
/// of (x, t) at the dof locations.
#[derive(Clone)]
pub struct ConstraintSet {
    pub dofs: Vec<usize>,
    pub locations: Vec<[f64; 2]>,
    pub value: ScalarFn,
}

impl ConstraintSet {
    pub fn values_at(&self, t: f64) -> Vec<f64> {
        self.locations.iter().map(|&x| (self.value)(x, t)).collect()
    }

    pub fn len(&self) -> usize {
        self.dofs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dofs.is_empty()
    }
}

impl std::fmt::Debug for ConstraintSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConstraintSet").field("dofs", &self.dofs.len()).finish()
    }
}

/// Collect the dofs of the selected component whose node lies on an edge
/// carrying one of `tags` (endpoints included). A node shared by two tagged
/// sides is claimed by the lower-numbered tag, so each dof appears once.
pub fn dirichlet_set(
    map: &DofMap,
    mesh: &Mesh,
    tags: &[BoundaryTag],
    component: Component,
    value: ScalarFn,
) -> ConstraintSet {
    let comp_offset = match (map.kind, component) {
        (SpaceKind::VectorP2, Component::X) => 0usize,
        (SpaceKind::VectorP2, Component::Y) => 1,
        (SpaceKind::VectorP2, Component::Scalar) => {
            panic!("vector space needs an X or Y component selector")
        }
        (_, Component::Scalar) => 0,
        _ => panic!("component selector on a scalar space"),
    };
    let nv = mesh.vertex_count();
    let p2 = map.kind.element() == ElementKind::P2;
    let mut claimed = vec![false; map.node_count()];
    let mut nodes = Vec::new();
    for tag in BoundaryTag::ALL {
        if !tags.contains(&tag) {
            continue;
        }
        for facet in &mesh.boundary {
            if facet.tag != tag {
                continue;
            }
            let edge = &mesh.edges[facet.edge];
            let mut claim = |node: usize| {
                if !claimed[node] {
                    claimed[node] = true;
                    nodes.push(node);
                }
            };
            claim(edge.v[0]);
            claim(edge.v[1]);
            if p2 {
                claim(nv + facet.edge);
            }
        }
    }
    nodes.sort_unstable();
    let components = map.kind.components();
    let dofs: Vec<usize> = nodes.iter().map(|&n| components * n + comp_offset).collect();
    let locations: Vec<[f64; 2]> = nodes.iter().map(|&n| map.node_location[n]).collect();
    ConstraintSet { dofs, locations, value }
}

/// Nodal interpolation of a scalar function at a fixed time.
pub fn interpolate_scalar(map: &DofMap, f: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
    assert_eq!(map.kind.components(), 1);
    map.node_location.iter().map(|&x| f(x)).collect()
}

/// Nodal interpolation of a vector function at a fixed time.
pub fn interpolate_vector(map: &DofMap, f: impl Fn([f64; 2]) -> [f64; 2]) -> Vec<f64> {
    assert_eq!(map.kind, SpaceKind::VectorP2);
    let mut coeffs = Vec::with_capacity(map.dof_count);
    for &x in &map.node_location {
        let v = f(x);
        coeffs.push(v[0]);
        coeffs.push(v[1]);
    }
    coeffs
}

/// The three infinitesimal rigid motions (1,0), (0,1), (-y,x) interpolated
/// into the vector P2 space. P2 represents them exactly.
#[derive(Debug, Clone)]
pub struct RigidMotionBasis {
    pub fields: [Vec<f64>; 3],
}

pub fn rigid_motion_basis(map: &DofMap) -> RigidMotionBasis {
    assert_eq!(map.kind, SpaceKind::VectorP2);
    RigidMotionBasis {
        fields: [
            interpolate_vector(map, |_| [1.0, 0.0]),
            interpolate_vector(map, |_| [0.0, 1.0]),
            interpolate_vector(map, |x| [-x[1], x[0]]),
        ],
    }
}
