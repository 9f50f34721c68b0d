//! Physical parameters and assembly of all bilinear forms, the nonlinear
//! stress residual, its Newton linearization, and load/boundary functionals.
//!
//! An `Assembler` caches per-triangle quadrature data (physical gradients,
//! shape values, weights) for one mesh, so repeated assemblies inside the
//! Newton loop only do arithmetic. Gradient contractions use the convention
//! `(grad u)_{ij} = d u_i / d x_j` and `A : B = sum_ij A_ij B_ij`.

use crate::element::{affine_map, edge_quadrature, quadrature_rule, ElementKind};
use crate::error::{Error, Result};
use crate::linalg::{CooBuilder, CsrMatrix};
use crate::mesh::Mesh;
use crate::spaces::{build_dof_map, DofMap, SpaceKind};

/// Physical constants of the poroelastic model and the derived coefficients
/// of the three-field reformulation.
#[derive(Debug, Clone, Copy)]
pub struct ModelParams {
    /// Lame constant (volumetric).
    pub lambda: f64,
    /// Lame constant (shear).
    pub mu: f64,
    /// Biot-Willis coupling constant.
    pub alpha: f64,
    /// Constrained specific storage coefficient.
    pub c0: f64,
    /// Permeability: the scalar k of the tensor K = k I.
    pub permeability: f64,
    /// Solvent viscosity.
    pub mu_f: f64,
    /// Fluid density (enters only through the gravity term).
    pub rho_f: f64,
    /// Gravity vector.
    pub gravity: [f64; 2],
}

impl ModelParams {
    pub fn new(lambda: f64, mu: f64, alpha: f64, c0: f64, permeability: f64) -> Result<Self> {
        let p = Self {
            lambda,
            mu,
            alpha,
            c0,
            permeability,
            mu_f: 1.0,
            rho_f: 0.0,
            gravity: [0.0, 0.0],
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.mu > 0.0 && self.c0 > 0.0 && self.mu_f > 0.0) {
            return Err(Error::InvalidArgument(
                "lambda, mu, c0 and mu_f must be positive".into(),
            ));
        }
        if self.alpha < 0.0 || self.permeability < 0.0 {
            return Err(Error::InvalidArgument("alpha and permeability must be >= 0".into()));
        }
        Ok(())
    }

    /// (kappa1, kappa2, kappa3) = (alpha, lambda, c0) / (alpha^2 + lambda c0).
    pub fn kappa(&self) -> (f64, f64, f64) {
        let d = self.alpha * self.alpha + self.lambda * self.c0;
        (self.alpha / d, self.lambda / d, self.c0 / d)
    }
}

/// N(grad u) = mu*eps(u) + mu*(grad u)^T (grad u) + lambda*|grad u|_F^2 I,
/// the nonlinear stress left after extracting lambda div(u) I.
pub fn nonlinear_stress(g: [[f64; 2]; 2], mu: f64, lambda: f64) -> [[f64; 2]; 2] {
    let frob = g[0][0] * g[0][0] + g[0][1] * g[0][1] + g[1][0] * g[1][0] + g[1][1] * g[1][1];
    let mut n = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let eps = 0.5 * (g[i][j] + g[j][i]);
            let gtg = g[0][i] * g[0][j] + g[1][i] * g[1][j];
            n[i][j] = mu * eps + mu * gtg + if i == j { lambda * frob } else { 0.0 };
        }
    }
    n
}

/// Directional derivative of `nonlinear_stress` at `g` in direction `w`:
/// mu*eps(w) + mu*(w^T g + g^T w) + 2 lambda (g : w) I.
pub fn nonlinear_stress_derivative(
    g: [[f64; 2]; 2],
    w: [[f64; 2]; 2],
    mu: f64,
    lambda: f64,
) -> [[f64; 2]; 2] {
    let gw = g[0][0] * w[0][0] + g[0][1] * w[0][1] + g[1][0] * w[1][0] + g[1][1] * w[1][1];
    let mut d = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let eps = 0.5 * (w[i][j] + w[j][i]);
            let cross = w[0][i] * g[0][j] + w[1][i] * g[1][j] + g[0][i] * w[0][j] + g[1][i] * w[1][j];
            d[i][j] = mu * eps + mu * cross + if i == j { 2.0 * lambda * gw } else { 0.0 };
        }
    }
    d
}

/// Per-mesh assembly context with cached quadrature data.
pub struct Assembler {
    pub mesh: Mesh,
    pub p1: DofMap,
    pub p2_scalar: DofMap,
    pub p2_vector: DofMap,
    nq: usize,
    /// quadrature weight times jacobian determinant, per (triangle, point)
    wdet: Vec<f64>,
    /// physical quadrature point coordinates
    xq: Vec<[f64; 2]>,
    p2_vals: Vec<[f64; 6]>,
    p2_grads: Vec<[[f64; 2]; 6]>,
    p1_vals: Vec<[f64; 3]>,
    p1_grads: Vec<[[f64; 2]; 3]>,
}

impl Assembler {
    pub fn new(mesh: &Mesh, quad_degree: usize) -> Result<Self> {
        let quad = quadrature_rule(quad_degree)?;
        let nq = quad.points.len();
        let nt = mesh.triangle_count();
        let mut wdet = Vec::with_capacity(nt * nq);
        let mut xq = Vec::with_capacity(nt * nq);
        let mut p2_vals = Vec::with_capacity(nt * nq);
        let mut p2_grads = Vec::with_capacity(nt * nq);
        let mut p1_vals = Vec::with_capacity(nt * nq);
        let mut p1_grads = Vec::with_capacity(nt * nq);
        for t in 0..nt {
            let map = affine_map(mesh, t)?;
            for (p, w) in quad.points.iter().zip(&quad.weights) {
                wdet.push(w * map.det);
                xq.push(map.to_physical(*p));
                let (v2, g2) = ElementKind::P2.shape_eval(*p);
                let (v1, g1) = ElementKind::P1.shape_eval(*p);
                let mut a2 = [0.0; 6];
                let mut ga2 = [[0.0; 2]; 6];
                for i in 0..6 {
                    a2[i] = v2[i];
                    ga2[i] = map.gradient_to_physical(g2[i]);
                }
                let mut a1 = [0.0; 3];
                let mut ga1 = [[0.0; 2]; 3];
                for i in 0..3 {
                    a1[i] = v1[i];
                    ga1[i] = map.gradient_to_physical(g1[i]);
                }
                p2_vals.push(a2);
                p2_grads.push(ga2);
                p1_vals.push(a1);
                p1_grads.push(ga1);
            }
        }
        Ok(Self {
            mesh: mesh.clone(),
            p1: build_dof_map(mesh, SpaceKind::ScalarP1),
            p2_scalar: build_dof_map(mesh, SpaceKind::ScalarP2),
            p2_vector: build_dof_map(mesh, SpaceKind::VectorP2),
            nq,
            wdet,
            xq,
            p2_vals,
            p2_grads,
            p1_vals,
            p1_grads,
        })
    }

    pub fn quadrature_points_per_cell(&self) -> usize {
        self.nq
    }

    /// Quadrature weight times jacobian determinant at point (t, q).
    pub fn weight_at(&self, t: usize, q: usize) -> f64 {
        self.wdet[self.qindex(t, q)]
    }

    /// Physical coordinates of quadrature point (t, q).
    pub fn point_at(&self, t: usize, q: usize) -> [f64; 2] {
        self.xq[self.qindex(t, q)]
    }

    fn qindex(&self, t: usize, q: usize) -> usize {
        t * self.nq + q
    }

    /// Value and gradient of a vector P2 field at quadrature point (t, q).
    pub fn p2_vector_at(&self, t: usize, q: usize, coeffs: &[f64]) -> ([f64; 2], [[f64; 2]; 2]) {
        let idx = self.qindex(t, q);
        let nodes = self.p2_scalar.nodes_of(t);
        let vals = &self.p2_vals[idx];
        let grads = &self.p2_grads[idx];
        let mut v = [0.0; 2];
        let mut g = [[0.0; 2]; 2];
        for (a, &node) in nodes.iter().enumerate() {
            for i in 0..2 {
                let c = coeffs[2 * node + i];
                v[i] += vals[a] * c;
                g[i][0] += c * grads[a][0];
                g[i][1] += c * grads[a][1];
            }
        }
        (v, g)
    }

    /// Value and gradient of a scalar P1 field at quadrature point (t, q).
    pub fn p1_scalar_at(&self, t: usize, q: usize, coeffs: &[f64]) -> (f64, [f64; 2]) {
        let idx = self.qindex(t, q);
        let nodes = self.p1.nodes_of(t);
        let vals = &self.p1_vals[idx];
        let grads = &self.p1_grads[idx];
        let mut v = 0.0;
        let mut g = [0.0; 2];
        for (a, &node) in nodes.iter().enumerate() {
            let c = coeffs[node];
            v += vals[a] * c;
            g[0] += c * grads[a][0];
            g[1] += c * grads[a][1];
        }
        (v, g)
    }

    /// Residual of the nonlinear stress term: r_i = (N(grad u), grad phi_i).
    /// N is symmetric, so this equals the contraction against eps(phi_i).
    pub fn nonlinear_residual(&self, params: &ModelParams, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.p2_vector.dof_count);
        let mut r = vec![0.0; self.p2_vector.dof_count];
        for t in 0..self.mesh.triangle_count() {
            let nodes = self.p2_scalar.nodes_of(t);
            for q in 0..self.nq {
                let idx = self.qindex(t, q);
                let (_, g) = self.p2_vector_at(t, q, u);
                let n = nonlinear_stress(g, params.mu, params.lambda);
                let w = self.wdet[idx];
                let grads = &self.p2_grads[idx];
                for (a, &node) in nodes.iter().enumerate() {
                    let ga = grads[a];
                    for i in 0..2 {
                        r[2 * node + i] += w * (n[i][0] * ga[0] + n[i][1] * ga[1]);
                    }
                }
            }
        }
        r
    }

    /// Emit the Newton Jacobian of the nonlinear stress term as triplets.
    ///
    /// The entries are the Gateaux derivative of `nonlinear_residual`:
    /// J_ij = (mu eps(phi_j) + mu (grad phi_j^T grad u + grad u^T grad phi_j)
    ///         + 2 lambda (grad u : grad phi_j) I, grad phi_i).
    pub fn newton_jacobian_push(
        &self,
        params: &ModelParams,
        u: &[f64],
        push: &mut impl FnMut(usize, usize, f64),
    ) {
        assert_eq!(u.len(), self.p2_vector.dof_count);
        let (mu, lambda) = (params.mu, params.lambda);
        let mut local = [[0.0f64; 12]; 12];
        for t in 0..self.mesh.triangle_count() {
            let nodes = self.p2_scalar.nodes_of(t);
            for row in local.iter_mut() {
                row.fill(0.0);
            }
            for q in 0..self.nq {
                let idx = self.qindex(t, q);
                let (_, gu) = self.p2_vector_at(t, q, u);
                let w = self.wdet[idx];
                let grads = &self.p2_grads[idx];
                for b in 0..6 {
                    let gb = grads[b];
                    for k in 0..2 {
                        // row_k(grad u) . gb, appears in the lambda term
                        let gu_k_gb = gu[k][0] * gb[0] + gu[k][1] * gb[1];
                        for a in 0..6 {
                            let ga = grads[a];
                            let gagb = ga[0] * gb[0] + ga[1] * gb[1];
                            for i in 0..2 {
                                let mut v = 0.0;
                                // mu * eps(phi_bk) : (e_i x ga)
                                v += 0.5 * mu * (if i == k { gagb } else { 0.0 } + gb[i] * ga[k]);
                                // mu * (grad^T w grad u + grad^T u grad w) : (e_i x ga)
                                let gu_k_ga = gu[k][0] * ga[0] + gu[k][1] * ga[1];
                                v += mu * (gb[i] * gu_k_ga + gu[k][i] * gagb);
                                // 2 lambda (grad u : grad w) (I : (e_i x ga))
                                v += 2.0 * lambda * gu_k_gb * ga[i];
                                local[2 * a + i][2 * b + k] += w * v;
                            }
                        }
                    }
                }
            }
            for (a, &na) in nodes.iter().enumerate() {
                for i in 0..2 {
                    for (b, &nb) in nodes.iter().enumerate() {
                        for k in 0..2 {
                            push(2 * na + i, 2 * nb + k, local[2 * a + i][2 * b + k]);
                        }
                    }
                }
            }
        }
    }

    /// Standalone Newton Jacobian as a CSR matrix.
    pub fn newton_jacobian(&self, params: &ModelParams, u: &[f64]) -> CsrMatrix {
        let n = self.p2_vector.dof_count;
        let mut coo = CooBuilder::new(n, n);
        self.newton_jacobian_push(params, u, &mut |i, j, v| coo.push(i, j, v));
        coo.to_csr()
    }

    /// B with B_ij = (div phi_j^{P2 vector}, phi_i^{P1}).
    pub fn div_matrix(&self) -> CsrMatrix {
        let mut coo = CooBuilder::new(self.p1.dof_count, self.p2_vector.dof_count);
        for t in 0..self.mesh.triangle_count() {
            let pnodes = self.p1.nodes_of(t);
            let vnodes = self.p2_scalar.nodes_of(t);
            for q in 0..self.nq {
                let idx = self.qindex(t, q);
                let w = self.wdet[idx];
                let p1v = &self.p1_vals[idx];
                let grads = &self.p2_grads[idx];
                for (a, &pa) in pnodes.iter().enumerate() {
                    for (b, &nb) in vnodes.iter().enumerate() {
                        for k in 0..2 {
                            coo.push(pa, 2 * nb + k, w * p1v[a] * grads[b][k]);
                        }
                    }
                }
            }
        }
        coo.to_csr()
    }

    /// Scalar mass matrix `coeff * (phi_j, phi_i)`.
    pub fn mass_matrix(&self, kind: SpaceKind, coeff: f64) -> CsrMatrix {
        let (map, is_p2) = match kind {
            SpaceKind::ScalarP1 => (&self.p1, false),
            SpaceKind::ScalarP2 => (&self.p2_scalar, true),
            SpaceKind::VectorP2 => panic!("scalar mass only"),
        };
        let mut coo = CooBuilder::new(map.dof_count, map.dof_count);
        for t in 0..self.mesh.triangle_count() {
            let nodes = map.nodes_of(t);
            for q in 0..self.nq {
                let idx = self.qindex(t, q);
                let w = self.wdet[idx] * coeff;
                if is_p2 {
                    let vals = &self.p2_vals[idx];
                    for (a, &na) in nodes.iter().enumerate() {
                        for (b, &nb) in nodes.iter().enumerate() {
                            coo.push(na, nb, w * vals[a] * vals[b]);
                        }
                    }
                } else {
                    let vals = &self.p1_vals[idx];
                    for (a, &na) in nodes.iter().enumerate() {
                        for (b, &nb) in nodes.iter().enumerate() {
                            coo.push(na, nb, w * vals[a] * vals[b]);
                        }
                    }
                }
            }
        }
        coo.to_csr()
    }

    /// Vector P2 mass matrix (phi_j, phi_i); used for the rigid-motion rows.
    pub fn vector_mass_matrix(&self) -> CsrMatrix {
        let n = self.p2_vector.dof_count;
        let mut coo = CooBuilder::new(n, n);
        for t in 0..self.mesh.triangle_count() {
            let nodes = self.p2_scalar.nodes_of(t);
            for q in 0..self.nq {
                let idx = self.qindex(t, q);
                let w = self.wdet[idx];
                let vals = &self.p2_vals[idx];
                for (a, &na) in nodes.iter().enumerate() {
                    for (b, &nb) in nodes.iter().enumerate() {
                        let m = w * vals[a] * vals[b];
                        coo.push(2 * na, 2 * nb, m);
                        coo.push(2 * na + 1, 2 * nb + 1, m);
                    }
                }
            }
        }
        coo.to_csr()
    }

    /// Diffusion matrix S_ij = (1/mu_f) (K grad phi_j, grad phi_i) on P1.
    pub fn diffusion_matrix(&self, params: &ModelParams) -> Result<CsrMatrix> {
        if params.permeability < 0.0 {
            return Err(Error::InvalidArgument("permeability tensor must be SPD".into()));
        }
        Ok(self.scaled_stiffness_p1(params.permeability / params.mu_f))
    }

    fn scaled_stiffness_p1(&self, coeff: f64) -> CsrMatrix {
        let mut coo = CooBuilder::new(self.p1.dof_count, self.p1.dof_count);
        for t in 0..self.mesh.triangle_count() {
            let nodes = self.p1.nodes_of(t);
            for q in 0..self.nq {
                let idx = self.qindex(t, q);
                let w = self.wdet[idx] * coeff;
                let grads = &self.p1_grads[idx];
                for (a, &na) in nodes.iter().enumerate() {
                    for (b, &nb) in nodes.iter().enumerate() {
                        coo.push(na, nb, w * (grads[a][0] * grads[b][0] + grads[a][1] * grads[b][1]));
                    }
                }
            }
        }
        coo.to_csr()
    }

    /// Symmetric-gradient stiffness (eps(phi_j), eps(phi_i)) on vector P2.
    /// The Newton Jacobian at u = 0 equals mu times this matrix; it also
    /// backs the energy-norm evaluations of the monitors.
    pub fn eps_stiffness(&self) -> CsrMatrix {
        let n = self.p2_vector.dof_count;
        let mut coo = CooBuilder::new(n, n);
        for t in 0..self.mesh.triangle_count() {
            let nodes = self.p2_scalar.nodes_of(t);
            for q in 0..self.nq {
                let idx = self.qindex(t, q);
                let w = self.wdet[idx];
                let grads = &self.p2_grads[idx];
                for (a, &na) in nodes.iter().enumerate() {
                    let ga = grads[a];
                    for (b, &nb) in nodes.iter().enumerate() {
                        let gb = grads[b];
                        let gagb = ga[0] * gb[0] + ga[1] * gb[1];
                        for i in 0..2 {
                            for k in 0..2 {
                                // eps(phi_bk) : eps(phi_ai)
                                let v = 0.5 * (if i == k { gagb } else { 0.0 } + gb[i] * ga[k]);
                                coo.push(2 * na + i, 2 * nb + k, w * v);
                            }
                        }
                    }
                }
            }
        }
        coo.to_csr()
    }

    /// Volume load (f, phi_i) on vector P2.
    pub fn load_p2v(&self, f: impl Fn([f64; 2]) -> [f64; 2]) -> Vec<f64> {
        let mut rhs = vec![0.0; self.p2_vector.dof_count];
        for t in 0..self.mesh.triangle_count() {
            let nodes = self.p2_scalar.nodes_of(t);
            for q in 0..self.nq {
                let idx = self.qindex(t, q);
                let w = self.wdet[idx];
                let fv = f(self.xq[idx]);
                let vals = &self.p2_vals[idx];
                for (a, &node) in nodes.iter().enumerate() {
                    rhs[2 * node] += w * vals[a] * fv[0];
                    rhs[2 * node + 1] += w * vals[a] * fv[1];
                }
            }
        }
        rhs
    }

    /// Volume load (phi, psi_i) on P1.
    pub fn load_p1(&self, phi: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
        let mut rhs = vec![0.0; self.p1.dof_count];
        for t in 0..self.mesh.triangle_count() {
            let nodes = self.p1.nodes_of(t);
            for q in 0..self.nq {
                let idx = self.qindex(t, q);
                let w = self.wdet[idx];
                let pv = phi(self.xq[idx]);
                let vals = &self.p1_vals[idx];
                for (a, &node) in nodes.iter().enumerate() {
                    rhs[node] += w * vals[a] * pv;
                }
            }
        }
        rhs
    }

    /// Boundary traction load <f1, v> over all boundary edges, 3-point Gauss.
    /// `f1` receives the physical point and the outward unit normal. Rows of
    /// Dirichlet-constrained components are eliminated later, which restricts
    /// the traction to exactly the non-Dirichlet boundary parts.
    pub fn traction_load(&self, f1: impl Fn([f64; 2], [f64; 2]) -> [f64; 2]) -> Vec<f64> {
        let (spts, swts) = edge_quadrature();
        let nv = self.mesh.vertex_count();
        let mut rhs = vec![0.0; self.p2_vector.dof_count];
        for facet in &self.mesh.boundary {
            let edge = &self.mesh.edges[facet.edge];
            let a = self.mesh.vertices[edge.v[0]];
            let b = self.mesh.vertices[edge.v[1]];
            let len = self.mesh.edge_length(facet.edge);
            let normal = self.mesh.outward_normal(facet.edge);
            let nodes = [edge.v[0], edge.v[1], nv + facet.edge];
            for (s, w) in spts.iter().zip(&swts) {
                let x = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
                let shape = [(1.0 - s) * (1.0 - 2.0 * s), s * (2.0 * s - 1.0), 4.0 * s * (1.0 - s)];
                let fv = f1(x, normal);
                for (sh, &node) in shape.iter().zip(&nodes) {
                    rhs[2 * node] += w * len * sh * fv[0];
                    rhs[2 * node + 1] += w * len * sh * fv[1];
                }
            }
        }
        rhs
    }

    /// Boundary flux load <phi1, psi> over all boundary edges on P1.
    pub fn flux_load(&self, phi1: impl Fn([f64; 2], [f64; 2]) -> f64) -> Vec<f64> {
        let (spts, swts) = edge_quadrature();
        let mut rhs = vec![0.0; self.p1.dof_count];
        for facet in &self.mesh.boundary {
            let edge = &self.mesh.edges[facet.edge];
            let a = self.mesh.vertices[edge.v[0]];
            let b = self.mesh.vertices[edge.v[1]];
            let len = self.mesh.edge_length(facet.edge);
            let normal = self.mesh.outward_normal(facet.edge);
            for (s, w) in spts.iter().zip(&swts) {
                let x = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
                let pv = phi1(x, normal);
                rhs[edge.v[0]] += w * len * (1.0 - s) * pv;
                rhs[edge.v[1]] += w * len * s * pv;
            }
        }
        rhs
    }

    /// Gravity contribution (1/mu_f)(K rho_f g, grad psi_i) to the flow side.
    pub fn gravity_load(&self, params: &ModelParams) -> Vec<f64> {
        let mut rhs = vec![0.0; self.p1.dof_count];
        let scale = params.permeability * params.rho_f / params.mu_f;
        if scale == 0.0 {
            return rhs;
        }
        let g = params.gravity;
        for t in 0..self.mesh.triangle_count() {
            let nodes = self.p1.nodes_of(t);
            for q in 0..self.nq {
                let idx = self.qindex(t, q);
                let w = self.wdet[idx] * scale;
                let grads = &self.p1_grads[idx];
                for (a, &node) in nodes.iter().enumerate() {
                    rhs[node] += w * (g[0] * grads[a][0] + g[1] * grads[a][1]);
                }
            }
        }
        rhs
    }

    /// Integral of tr(N(grad u)) over the domain.
    pub fn stress_trace_integral(&self, params: &ModelParams, u: &[f64]) -> f64 {
        let mut total = 0.0;
        for t in 0..self.mesh.triangle_count() {
            for q in 0..self.nq {
                let idx = self.qindex(t, q);
                let (_, g) = self.p2_vector_at(t, q, u);
                let n = nonlinear_stress(g, params.mu, params.lambda);
                total += self.wdet[idx] * (n[0][0] + n[1][1]);
            }
        }
        total
    }

    /// L2 norm of N(grad u) - N(grad v) over the domain.
    pub fn stress_difference_l2(&self, params: &ModelParams, u: &[f64], v: &[f64]) -> f64 {
        let mut total = 0.0;
        for t in 0..self.mesh.triangle_count() {
            for q in 0..self.nq {
                let idx = self.qindex(t, q);
                let (_, gu) = self.p2_vector_at(t, q, u);
                let (_, gv) = self.p2_vector_at(t, q, v);
                let nu = nonlinear_stress(gu, params.mu, params.lambda);
                let nv = nonlinear_stress(gv, params.mu, params.lambda);
                let mut frob = 0.0;
                for i in 0..2 {
                    for j in 0..2 {
                        frob += (nu[i][j] - nv[i][j]).powi(2);
                    }
                }
                total += self.wdet[idx] * frob;
            }
        }
        total.sqrt()
    }

    /// Largest pointwise Frobenius norm of grad u over the quadrature points.
    pub fn max_gradient_norm(&self, u: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for t in 0..self.mesh.triangle_count() {
            for q in 0..self.nq {
                let (_, g) = self.p2_vector_at(t, q, u);
                let frob =
                    (g[0][0] * g[0][0] + g[0][1] * g[0][1] + g[1][0] * g[1][0] + g[1][1] * g[1][1])
                        .sqrt();
                worst = worst.max(frob);
            }
        }
        worst
    }

    /// Boundary integral of (u_h . n) over the whole boundary, 3-point Gauss.
    pub fn boundary_normal_flux(&self, u: &[f64]) -> f64 {
        let (spts, swts) = edge_quadrature();
        let nv = self.mesh.vertex_count();
        let mut total = 0.0;
        for facet in &self.mesh.boundary {
            let edge = &self.mesh.edges[facet.edge];
            let len = self.mesh.edge_length(facet.edge);
            let normal = self.mesh.outward_normal(facet.edge);
            let nodes = [edge.v[0], edge.v[1], nv + facet.edge];
            for (s, w) in spts.iter().zip(&swts) {
                let shape = [(1.0 - s) * (1.0 - 2.0 * s), s * (2.0 * s - 1.0), 4.0 * s * (1.0 - s)];
                let mut un = 0.0;
                for (sh, &node) in shape.iter().zip(&nodes) {
                    un += sh * (u[2 * node] * normal[0] + u[2 * node + 1] * normal[1]);
                }
                total += w * len * un;
            }
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use crate::mesh::{build_uniform_mesh, Rectangle};
    use crate::rng::SplitMix64;
    use crate::spaces::interpolate_vector;

    fn unit(n: usize) -> Mesh {
        build_uniform_mesh(n, Rectangle::unit_square()).unwrap()
    }

    /// A mesh consisting of just the reference triangle.
    fn reference_triangle() -> Mesh {
        use crate::mesh::{BoundaryFacet, BoundaryTag, Edge};
        Mesh {
            vertices: vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            triangles: vec![[0, 1, 2]],
            edges: vec![
                Edge { v: [0, 1], tri: [Some(0), None] },
                Edge { v: [0, 2], tri: [Some(0), None] },
                Edge { v: [1, 2], tri: [Some(0), None] },
            ],
            tri_edges: vec![[2, 1, 0]],
            boundary: vec![
                BoundaryFacet { edge: 0, tag: BoundaryTag::Gamma2 },
                BoundaryFacet { edge: 1, tag: BoundaryTag::Gamma3 },
            ],
            domain: Rectangle::unit_square(),
            subdivisions: 1,
        }
    }

    fn params_simple(mu: f64, lambda: f64) -> ModelParams {
        ModelParams::new(lambda, mu, 1e-5, 2.0, 1e-3).unwrap()
    }

    #[test]
    fn kappa_identities() {
        for (l, m, a, c0) in [(0.1, 0.1, 1e-5, 2.0), (1e3, 1e3, 1e-5, 1.0), (0.1, 10.0, 1e-4, 20.0)] {
            let p = ModelParams::new(l, m, a, c0, 1e-3).unwrap();
            let (k1, k2, k3) = p.kappa();
            assert!((a * k1 + c0 * k2 - 1.0).abs() < 1e-15);
            assert!((l * k1 - a * k2).abs() < 1e-15 * (l * k1).abs().max(1.0));
            assert!((a * k3 - c0 * k1).abs() < 1e-15 * (a * k3).abs().max(1.0));
        }
    }

    #[test]
    fn stress_at_zero_and_identity() {
        let z = nonlinear_stress([[0.0; 2]; 2], 1.0, 1.0);
        assert_eq!(z, [[0.0; 2]; 2]);
        // grad u = I: eps = I, g^T g = I, |g|_F^2 = 2 -> N = I + I + 2I = 4I
        let n = nonlinear_stress([[1.0, 0.0], [0.0, 1.0]], 1.0, 1.0);
        assert_eq!(n, [[4.0, 0.0], [0.0, 4.0]]);
    }

    #[test]
    fn stress_matches_total_stress_route() {
        // oracle: sigma~(u) = mu*eps~ + lambda*tr(eps~) I with
        // eps~ = (grad u + grad u^T + 2 grad u^T grad u)/2, then subtract
        // lambda div(u) I
        let mut rng = SplitMix64::new(23);
        let (mu, lambda) = (0.1, 0.1);
        for _ in 0..100 {
            let g = [[rng.next_sym(), rng.next_sym()], [rng.next_sym(), rng.next_sym()]];
            let mut eps_t = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    let gtg = g[0][i] * g[0][j] + g[1][i] * g[1][j];
                    eps_t[i][j] = 0.5 * (g[i][j] + g[j][i]) + gtg;
                }
            }
            let tr = eps_t[0][0] + eps_t[1][1];
            let div = g[0][0] + g[1][1];
            let n = nonlinear_stress(g, mu, lambda);
            for i in 0..2 {
                for j in 0..2 {
                    let sigma = mu * eps_t[i][j] + if i == j { lambda * tr } else { 0.0 };
                    let oracle = sigma - if i == j { lambda * div } else { 0.0 };
                    assert!(
                        (n[i][j] - oracle).abs() < 1e-13,
                        "entry ({i},{j}): {} vs {}",
                        n[i][j],
                        oracle
                    );
                }
            }
        }
    }

    #[test]
    fn residual_zero_at_zero() {
        let asm = Assembler::new(&unit(2), 5).unwrap();
        let p = params_simple(0.1, 0.1);
        let r = asm.nonlinear_residual(&p, &vec![0.0; asm.p2_vector.dof_count]);
        assert!(r.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn residual_of_rotation_equals_divergence_functional() {
        // for r = (-y, x): eps(r) = 0, grad^T r grad r = I, |grad r|^2 = 2,
        // so N = (mu + 2 lambda) I and the residual is (mu + 2 lambda) *
        // integral of div(phi_i). The oracle path goes through the div matrix
        // against the P1 partition of unity.
        let asm = Assembler::new(&unit(3), 5).unwrap();
        let p = params_simple(0.3, 0.7);
        let u = interpolate_vector(&asm.p2_vector, |x| [-x[1], x[0]]);
        let r = asm.nonlinear_residual(&p, &u);
        let b = asm.div_matrix();
        let ones = vec![1.0; asm.p1.dof_count];
        // column sums of B = integral of div phi_j
        let mut div_int = vec![0.0; asm.p2_vector.dof_count];
        for i in 0..b.nrows {
            for k in b.row_ptr[i]..b.row_ptr[i + 1] {
                div_int[b.col_idx[k]] += b.vals[k] * ones[i];
            }
        }
        let scale = p.mu + 2.0 * p.lambda;
        for (ri, di) in r.iter().zip(&div_int) {
            assert!((ri - scale * di).abs() < 1e-12, "{ri} vs {}", scale * di);
        }
    }

    #[test]
    fn residual_single_triangle_exact() {
        // grad u = [[1,0],[0,0]], mu = 1, lambda = 0 -> N = [[2,0],[0,0]],
        // so r_(a,x) = 2 * int dN_a/dx and r_(a,y) = 0. The integrals of the
        // P2 basis x-derivatives over the reference triangle are
        // (-1/6, 1/6, 0, 2/3, -2/3, 0).
        let mesh = reference_triangle();
        let asm = Assembler::new(&mesh, 5).unwrap();
        let p = ModelParams::new(1e-15, 1.0, 0.0, 1.0, 0.0).unwrap(); // lambda ~ 0
        let u = interpolate_vector(&asm.p2_vector, |x| [x[0], 0.0]);
        let r = asm.nonlinear_residual(&p, &u);
        let expect_x = [-1.0 / 6.0, 1.0 / 6.0, 0.0, 2.0 / 3.0, -2.0 / 3.0, 0.0];
        // local node order: vertices 0,1,2 then midpoints of edges 2,1,0
        // (opposite local vertices 0,1,2); global edge numbering maps
        // edge 0=(0,1) -> local 5, edge 1=(0,2) -> local 4, edge 2=(1,2) -> local 3.
        let global_of_local = [0usize, 1, 2, 3 + 2, 3 + 1, 3 + 0];
        for (a, &gn) in global_of_local.iter().enumerate() {
            assert!(
                (r[2 * gn] - 2.0 * expect_x[a]).abs() < 1e-13,
                "x-dof {a}: {} vs {}",
                r[2 * gn],
                2.0 * expect_x[a]
            );
            assert!(r[2 * gn + 1].abs() < 1e-13);
        }
    }

    #[test]
    fn jacobian_at_zero_is_mu_eps_stiffness() {
        let asm = Assembler::new(&unit(2), 5).unwrap();
        let p = params_simple(0.7, 0.3);
        let j = asm.newton_jacobian(&p, &vec![0.0; asm.p2_vector.dof_count]);
        let e = asm.eps_stiffness();
        assert_eq!(j.col_idx, e.col_idx);
        for (jv, ev) in j.vals.iter().zip(&e.vals) {
            assert!((jv - p.mu * ev).abs() < 1e-13);
        }
        // symmetric at u = 0
        for i in 0..j.nrows {
            for k in j.row_ptr[i]..j.row_ptr[i + 1] {
                let jj = j.col_idx[k];
                assert!((j.vals[k] - j.get(jj, i)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let mesh = unit(2);
        let asm = Assembler::new(&mesh, 5).unwrap();
        let p = params_simple(0.1, 0.1);
        let n = asm.p2_vector.dof_count;
        let mut rng = SplitMix64::new(31);
        let delta = 1e-5;
        for _ in 0..3 {
            // random state with moderate gradients
            let u: Vec<f64> = (0..n).map(|_| 0.2 * rng.next_sym()).collect();
            let v: Vec<f64> = (0..n).map(|_| rng.next_sym()).collect();
            let j = asm.newton_jacobian(&p, &u);
            let jv = j.spmv(&v).unwrap();
            let up: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + delta * b).collect();
            let um: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - delta * b).collect();
            let rp = asm.nonlinear_residual(&p, &up);
            let rm = asm.nonlinear_residual(&p, &um);
            let fd: Vec<f64> = rp.iter().zip(&rm).map(|(a, b)| (a - b) / (2.0 * delta)).collect();
            let scale = linalg::norm2(&jv).max(1e-30);
            let diff = linalg::norm2(
                &jv.iter().zip(&fd).map(|(a, b)| a - b).collect::<Vec<_>>(),
            );
            assert!(diff / scale < 1e-6, "relative FD mismatch {}", diff / scale);
        }
    }

    #[test]
    fn jacobian_not_symmetric_away_from_zero() {
        let asm = Assembler::new(&unit(2), 5).unwrap();
        let p = params_simple(0.1, 0.1);
        let u = interpolate_vector(&asm.p2_vector, |x| [0.3 * x[0] * x[0], 0.1 * x[1]]);
        let j = asm.newton_jacobian(&p, &u);
        let mut max_asym: f64 = 0.0;
        for i in 0..j.nrows {
            for k in j.row_ptr[i]..j.row_ptr[i + 1] {
                max_asym = max_asym.max((j.vals[k] - j.get(j.col_idx[k], i)).abs());
            }
        }
        assert!(max_asym > 1e-6, "expected asymmetry, got {max_asym}");
    }

    #[test]
    fn div_matrix_examples() {
        let asm = Assembler::new(&unit(4), 5).unwrap();
        let ones = vec![1.0; asm.p1.dof_count];
        let b = asm.div_matrix();
        // constant field: div = 0
        let c = interpolate_vector(&asm.p2_vector, |_| [0.7, -0.3]);
        let bc = b.spmv(&c).unwrap();
        assert!(linalg::norm2(&bc) < 1e-13);
        // u = (x, 0): (div u, 1) = |Omega| = 1
        let ux = interpolate_vector(&asm.p2_vector, |x| [x[0], 0.0]);
        let total: f64 = linalg::dot(&b.spmv(&ux).unwrap(), &ones);
        assert!((total - 1.0).abs() < 1e-13);
        // u = (x^2, y^2)/2: (div u, 1) = int (x + y) = 1, P2-exact
        let uq = interpolate_vector(&asm.p2_vector, |x| [0.5 * x[0] * x[0], 0.5 * x[1] * x[1]]);
        let total_q: f64 = linalg::dot(&b.spmv(&uq).unwrap(), &ones);
        assert!((total_q - 1.0).abs() < 1e-13);
    }

    #[test]
    fn p1_mass_on_reference_triangle() {
        let asm = Assembler::new(&reference_triangle(), 5).unwrap();
        let m = asm.mass_matrix(SpaceKind::ScalarP1, 1.0);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 / 12.0 } else { 1.0 / 24.0 };
                assert!((m.get(i, j) - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn mass_row_sums_are_areas() {
        let asm = Assembler::new(&unit(3), 5).unwrap();
        for kind in [SpaceKind::ScalarP1, SpaceKind::ScalarP2] {
            let m = asm.mass_matrix(kind, 1.0);
            let total: f64 = m.vals.iter().sum();
            assert!((total - 1.0).abs() < 1e-14, "{kind:?} mass total {total}");
        }
    }

    #[test]
    fn p1_stiffness_on_reference_triangle() {
        let asm = Assembler::new(&reference_triangle(), 5).unwrap();
        let p = ModelParams { permeability: 1.0, mu_f: 1.0, ..params_simple(1.0, 1.0) };
        let s = asm.diffusion_matrix(&p).unwrap();
        let expect = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((s.get(i, j) - expect[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn diffusion_kernel_and_scaling() {
        let asm = Assembler::new(&unit(3), 5).unwrap();
        let p1 = ModelParams { permeability: 1.0, ..params_simple(1.0, 1.0) };
        let p2 = ModelParams { permeability: 1e-3, ..params_simple(1.0, 1.0) };
        let s1 = asm.diffusion_matrix(&p1).unwrap();
        let s2 = asm.diffusion_matrix(&p2).unwrap();
        let ones = vec![1.0; asm.p1.dof_count];
        assert!(linalg::norm2(&s1.spmv(&ones).unwrap()) < 1e-14);
        for (a, b) in s1.vals.iter().zip(&s2.vals) {
            assert!((b - 1e-3 * a).abs() < 1e-18 * a.abs().max(1.0));
        }
        let bad = ModelParams { permeability: -1.0, ..params_simple(1.0, 1.0) };
        assert!(asm.diffusion_matrix(&bad).is_err());
    }

    #[test]
    fn loads_zero_and_partition() {
        let asm = Assembler::new(&unit(3), 5).unwrap();
        let z2 = asm.load_p2v(|_| [0.0, 0.0]);
        let z1 = asm.load_p1(|_| 0.0);
        assert!(z2.iter().all(|&v| v == 0.0) && z1.iter().all(|&v| v == 0.0));
        // phi = 1: entries integrate the P1 basis and sum to the area
        let l = asm.load_p1(|_| 1.0);
        let total: f64 = l.iter().sum();
        assert!((total - 1.0).abs() < 1e-14);
    }

    #[test]
    fn contraction_against_full_and_symmetric_gradient_agree() {
        // (N(grad u), grad v) = (N(grad u), eps(v)): assemble the residual
        // contracted against eps(phi_i) explicitly and compare.
        let asm = Assembler::new(&unit(3), 5).unwrap();
        let p = params_simple(0.4, 0.9);
        let mut rng = SplitMix64::new(77);
        let u: Vec<f64> = (0..asm.p2_vector.dof_count).map(|_| 0.3 * rng.next_sym()).collect();
        let r_full = asm.nonlinear_residual(&p, &u);
        // eps-contraction route
        let mut r_sym = vec![0.0; asm.p2_vector.dof_count];
        for t in 0..asm.mesh.triangle_count() {
            let nodes = asm.p2_scalar.nodes_of(t);
            for q in 0..asm.nq {
                let idx = asm.qindex(t, q);
                let (_, g) = asm.p2_vector_at(t, q, &u);
                let n = nonlinear_stress(g, p.mu, p.lambda);
                let w = asm.wdet[idx];
                let grads = &asm.p2_grads[idx];
                for (a, &node) in nodes.iter().enumerate() {
                    let ga = grads[a];
                    for i in 0..2 {
                        // eps(phi_ai)_{pq} = (delta_pi ga_q + delta_qi ga_p)/2
                        let mut acc = 0.0;
                        for pdim in 0..2 {
                            for qdim in 0..2 {
                                let e = 0.5
                                    * ((if pdim == i { ga[qdim] } else { 0.0 })
                                        + (if qdim == i { ga[pdim] } else { 0.0 }));
                                acc += n[pdim][qdim] * e;
                            }
                        }
                        r_sym[2 * node + i] += w * acc;
                    }
                }
            }
        }
        let diff: f64 = r_full.iter().zip(&r_sym).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-12, "contraction mismatch {diff}");
    }

    #[test]
    fn body_force_load_against_dense_quadrature() {
        // integral of f . (1,1) over the square, with the first
        // manufactured problem's force at t = 1 and its soft parameters
        let (lambda, mu, alpha, t) = (0.1, 0.1, 1e-5, 1.0);
        let f = |x: [f64; 2]| -> [f64; 2] {
            let e = (x[0] + x[1]).exp();
            [
                -(lambda + mu) * t - 2.0 * (mu + lambda) * t * t * x[0] + alpha * t * e,
                -(lambda + mu) * t - 2.0 * (mu + lambda) * t * t * x[1] + alpha * t * e,
            ]
        };
        // dense composite Simpson oracle on a 64x64 grid
        let m = 64usize;
        let h = 1.0 / m as f64;
        let simpson_w = |i: usize| -> f64 {
            if i == 0 || i == 2 * m {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            }
        };
        let mut oracle = 0.0;
        for i in 0..=2 * m {
            for j in 0..=2 * m {
                let x = [i as f64 * h / 2.0, j as f64 * h / 2.0];
                let fv = f(x);
                oracle += simpson_w(i) * simpson_w(j) * (fv[0] + fv[1]);
            }
        }
        // panel width h/2, Simpson factor (h/2)/3 per dimension
        oracle *= (h / 6.0) * (h / 6.0);

        let asm = Assembler::new(&unit(6), 5).unwrap();
        let load = asm.load_p2v(f);
        let ones = interpolate_vector(&asm.p2_vector, |_| [1.0, 1.0]);
        let assembled = linalg::dot(&load, &ones);
        assert!(
            (assembled - oracle).abs() < 1e-9 * oracle.abs().max(1.0),
            "assembled {assembled} vs dense quadrature {oracle}"
        );
    }

    #[test]
    fn traction_load_on_constant_force() {
        // f1 = (1, 0) on the whole boundary: total x-load = perimeter = 4
        let asm = Assembler::new(&unit(2), 5).unwrap();
        let l = asm.traction_load(|_, _| [1.0, 0.0]);
        let sum_x: f64 = l.iter().step_by(2).sum();
        let sum_y: f64 = l.iter().skip(1).step_by(2).sum();
        assert!((sum_x - 4.0).abs() < 1e-13);
        assert!(sum_y.abs() < 1e-14);
    }

    #[test]
    fn elasticity_kernel_is_rigid_motions() {
        // pure-traction elasticity block at u = 0: A r = 0 for rigid motions
        let asm = Assembler::new(&unit(3), 5).unwrap();
        let p = params_simple(1.0, 1.0);
        let a = asm.newton_jacobian(&p, &vec![0.0; asm.p2_vector.dof_count]);
        let rm = crate::spaces::rigid_motion_basis(&asm.p2_vector);
        let scale = a.vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for field in &rm.fields {
            let ar = a.spmv(field).unwrap();
            let rel = linalg::norm2(&ar) / (scale * linalg::norm2(field));
            assert!(rel < 1e-10, "rigid motion not in kernel: {rel}");
        }
    }

    #[test]
    fn boundary_normal_flux_matches_divergence() {
        let asm = Assembler::new(&unit(4), 5).unwrap();
        // u = (x^2, xy)/1: div u = 3x, integral over square = 3/2; Gauss
        let u = interpolate_vector(&asm.p2_vector, |x| [x[0] * x[0], x[0] * x[1]]);
        let flux = asm.boundary_normal_flux(&u);
        assert!((flux - 1.5).abs() < 1e-13, "flux {flux}");
    }
}
