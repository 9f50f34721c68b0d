//! Reference-element machinery: P1/P2 Lagrange bases on the unit triangle,
//! positive quadrature rules, and per-triangle affine maps.
//!
//! The reference triangle has vertices (0,0), (1,0), (0,1). P2 nodes are
//! ordered: the 3 vertices first, then the 3 edge midpoints opposite local
//! vertices 0, 1, 2 (i.e. node 3 sits at (1/2,1/2), node 4 at (0,1/2),
//! node 5 at (1/2,0)). This matches the mesh's per-triangle edge table.

use crate::error::{Error, Result};
use crate::mesh::Mesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementKind {
    P1,
    P2,
}

impl ElementKind {
    pub fn node_count(&self) -> usize {
        match self {
            ElementKind::P1 => 3,
            ElementKind::P2 => 6,
        }
    }

    /// Reference coordinates of the element nodes.
    pub fn nodes(&self) -> &'static [[f64; 2]] {
        match self {
            ElementKind::P1 => &[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            ElementKind::P2 => &[
                [0.0, 0.0],
                [1.0, 0.0],
                [0.0, 1.0],
                [0.5, 0.5],
                [0.0, 0.5],
                [0.5, 0.0],
            ],
        }
    }

    /// Shape function values and reference gradients at a point.
    pub fn shape_eval(&self, p: [f64; 2]) -> (Vec<f64>, Vec<[f64; 2]>) {
        let (x, y) = (p[0], p[1]);
        let l0 = 1.0 - x - y;
        let l1 = x;
        let l2 = y;
        match self {
            ElementKind::P1 => {
                (vec![l0, l1, l2], vec![[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
            }
            ElementKind::P2 => {
                let values = vec![
                    l0 * (2.0 * l0 - 1.0),
                    l1 * (2.0 * l1 - 1.0),
                    l2 * (2.0 * l2 - 1.0),
                    4.0 * l1 * l2,
                    4.0 * l2 * l0,
                    4.0 * l0 * l1,
                ];
                let g0 = [-1.0, -1.0];
                let g1 = [1.0, 0.0];
                let g2 = [0.0, 1.0];
                let dl = |a: f64, ga: [f64; 2]| [(4.0 * a - 1.0) * ga[0], (4.0 * a - 1.0) * ga[1]];
                let prod =
                    |a: f64, ga: [f64; 2], b: f64, gb: [f64; 2]| {
                        [4.0 * (ga[0] * b + a * gb[0]), 4.0 * (ga[1] * b + a * gb[1])]
                    };
                let grads = vec![
                    dl(l0, g0),
                    dl(l1, g1),
                    dl(l2, g2),
                    prod(l1, g1, l2, g2),
                    prod(l2, g2, l0, g0),
                    prod(l0, g0, l1, g1),
                ];
                (values, grads)
            }
        }
    }
}

/// Quadrature rule on the reference triangle; weights sum to its area 1/2.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

/// Positive rule exact for polynomials of total degree >= `degree`.
pub fn quadrature_rule(degree: usize) -> Result<QuadratureRule> {
    match degree {
        1 => Ok(QuadratureRule {
            points: vec![[1.0 / 3.0, 1.0 / 3.0]],
            weights: vec![0.5],
            degree: 1,
        }),
        2 => Ok(QuadratureRule {
            points: vec![
                [1.0 / 6.0, 1.0 / 6.0],
                [2.0 / 3.0, 1.0 / 6.0],
                [1.0 / 6.0, 2.0 / 3.0],
            ],
            weights: vec![1.0 / 6.0; 3],
            degree: 2,
        }),
        // 7-point rule, exact through degree 5, used for degrees 3..=5.
        3..=5 => {
            let s15 = 15f64.sqrt();
            let a1 = (6.0 - s15) / 21.0;
            let a2 = (6.0 + s15) / 21.0;
            let w1 = (155.0 - s15) / 2400.0;
            let w2 = (155.0 + s15) / 2400.0;
            Ok(QuadratureRule {
                points: vec![
                    [1.0 / 3.0, 1.0 / 3.0],
                    [a1, a1],
                    [1.0 - 2.0 * a1, a1],
                    [a1, 1.0 - 2.0 * a1],
                    [a2, a2],
                    [1.0 - 2.0 * a2, a2],
                    [a2, 1.0 - 2.0 * a2],
                ],
                weights: vec![9.0 / 80.0, w1, w1, w1, w2, w2, w2],
                degree: 5,
            })
        }
        // 12-point rule, exact through degree 6, all weights positive.
        6 => {
            let a1 = 0.063089014491502;
            let a2 = 0.249286745170910;
            let b = 0.053145049844817;
            let c = 0.310352451033784;
            let d = 1.0 - b - c;
            let w1 = 0.050844906370207 / 2.0;
            let w2 = 0.116786275726379 / 2.0;
            let w3 = 0.082851075618374 / 2.0;
            let mut points = vec![
                [a1, a1],
                [1.0 - 2.0 * a1, a1],
                [a1, 1.0 - 2.0 * a1],
                [a2, a2],
                [1.0 - 2.0 * a2, a2],
                [a2, 1.0 - 2.0 * a2],
            ];
            // all six permutations of the asymmetric triple (b, c, d)
            points.extend_from_slice(&[[b, c], [c, b], [b, d], [d, b], [c, d], [d, c]]);
            Ok(QuadratureRule {
                points,
                weights: vec![w1, w1, w1, w2, w2, w2, w3, w3, w3, w3, w3, w3],
                degree: 6,
            })
        }
        _ => Err(Error::InvalidArgument(format!("unsupported quadrature degree {degree}"))),
    }
}

/// Gauss rule on [0,1] for boundary-edge integrals, exact through degree 5.
pub fn edge_quadrature() -> (Vec<f64>, Vec<f64>) {
    let s = (3.0f64 / 5.0).sqrt() / 2.0;
    (vec![0.5 - s, 0.5, 0.5 + s], vec![5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0])
}

/// Affine map from the reference triangle to a physical triangle.
#[derive(Debug, Clone, Copy)]
pub struct AffineMap {
    /// Jacobian columns: physical edge vectors.
    pub jac: [[f64; 2]; 2],
    pub det: f64,
    /// Inverse-transpose Jacobian; maps reference gradients to physical ones.
    pub inv_t: [[f64; 2]; 2],
    pub origin: [f64; 2],
}

impl AffineMap {
    pub fn from_vertices(p0: [f64; 2], p1: [f64; 2], p2: [f64; 2]) -> Result<Self> {
        let jac = [[p1[0] - p0[0], p2[0] - p0[0]], [p1[1] - p0[1], p2[1] - p0[1]]];
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        if det <= 0.0 {
            return Err(Error::Mesh(format!("degenerate triangle, jacobian det {det}")));
        }
        let inv_t = [
            [jac[1][1] / det, -jac[1][0] / det],
            [-jac[0][1] / det, jac[0][0] / det],
        ];
        Ok(Self { jac, det, inv_t, origin: p0 })
    }

    pub fn to_physical(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.origin[0] + self.jac[0][0] * p[0] + self.jac[0][1] * p[1],
            self.origin[1] + self.jac[1][0] * p[0] + self.jac[1][1] * p[1],
        ]
    }

    pub fn gradient_to_physical(&self, g: [f64; 2]) -> [f64; 2] {
        [
            self.inv_t[0][0] * g[0] + self.inv_t[0][1] * g[1],
            self.inv_t[1][0] * g[0] + self.inv_t[1][1] * g[1],
        ]
    }
}

pub fn affine_map(mesh: &Mesh, t: usize) -> Result<AffineMap> {
    if t >= mesh.triangle_count() {
        return Err(Error::Mesh(format!("triangle index {t} out of range")));
    }
    let [p0, p1, p2] = mesh.triangle_vertices(t);
    AffineMap::from_vertices(p0, p1, p2)
}
