//! Backward-Euler time stepping for the three-field system, with a Newton
//! iteration for the nonlinear stress block.
//!
//! Each step solves
//!   (N(grad u), eps(v)) - (xi, div v)            = (f, v) + <f1, v>
//!   kappa3 (xi, phi) + (div u, phi)              = kappa1 (eta_used, phi)
//!   (d_t eta, psi) + (1/mu_f)(K grad(kappa1 xi + kappa2 eta), grad psi)
//!                                                = (phi, psi) + <phi1, psi> + gravity
//! where `eta_used` is the previous eta in the decoupled variant and the new
//! unknown in the monolithic one, then updates p = kappa1 xi + kappa2 eta_used
//! and q = kappa1 eta - kappa3 xi.
//!
//! Pressure Dirichlet data is imposed strongly: the monolithic solve replaces
//! the flow rows of boundary nodes by kappa1 xi + kappa2 eta = p_D, and the
//! decoupled flow step changes variables to chi = kappa1 xi + kappa2 eta,
//! constrains chi = p_D, and recovers eta nodally. When no displacement
//! Dirichlet data is active, three Lagrange multiplier rows keep the
//! displacement orthogonal to the rigid motions.

use crate::assembly::{Assembler, ModelParams};
use crate::error::{Error, Result};
use crate::linalg::{
    self, min_degree_order, ConstrainedPattern, ConstraintSpec, CooBuilder, CsrMatrix,
    ReusableSolver, SparseLu,
};
use crate::mesh::Mesh;
use crate::scenario::Scenario;
use crate::spaces::{dirichlet_set, interpolate_scalar, interpolate_vector, rigid_motion_basis};

/// Coupling variant of the scheme: theta = 0 solves the elastic block with
/// the previous fluid content and then the diffusion step; theta = 1 solves
/// the three fields monolithically.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Theta {
    Decoupled,
    Monolithic,
}

impl Theta {
    pub fn as_index(self) -> usize {
        match self {
            Theta::Decoupled => 0,
            Theta::Monolithic => 1,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SchemeConfig {
    pub theta: Theta,
    pub dt: f64,
    pub final_time: f64,
    /// Newton stop: residual <= tol * first residual, with floor 1e-14.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub linear_tol: f64,
    /// Warn when theta = 0 and dt > c * h^2.
    pub dt_h2_constant: f64,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self {
            theta: Theta::Monolithic,
            dt: 0.01,
            final_time: 1.0,
            newton_tol: 1e-10,
            newton_max_iter: 25,
            linear_tol: 1e-12,
            dt_h2_constant: 1.0,
        }
    }
}

/// Coefficient vectors of all fields at one time level.
#[derive(Debug, Clone)]
pub struct SystemState {
    pub time: f64,
    pub u: Vec<f64>,
    pub xi: Vec<f64>,
    pub eta: Vec<f64>,
    /// p = kappa1 xi + kappa2 eta^{n-1+theta}, per the update formula.
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct StepReport {
    pub time: f64,
    /// Number of linear solves performed by Newton.
    pub newton_iterations: usize,
    /// Residual norms, starting with the initial iterate's.
    pub newton_residuals: Vec<f64>,
}

const NEWTON_FLOOR: f64 = 1e-14;

struct NewtonCache {
    coo: CooBuilder,
    pattern: ConstrainedPattern,
    order: Vec<usize>,
    solver: ReusableSolver,
}

struct FlowCache {
    raw_vals: Vec<f64>,
    pattern: ConstrainedPattern,
    lu: SparseLu,
}

/// Solver context bound to one mesh, scenario and scheme configuration.
pub struct Stepper {
    pub asm: Assembler,
    pub scenario: Scenario,
    pub config: SchemeConfig,
    pub warnings: Vec<String>,
    params: ModelParams,
    div: CsrMatrix,
    mass: CsrMatrix,
    diff: CsrMatrix,
    /// (phi_i, r_k) rows when the rigid-motion constraint is active.
    rm_rows: Option<[Vec<f64>; 3]>,
    /// Displacement Dirichlet dofs: (dof, location, data group).
    u_fixed: Vec<(usize, [f64; 2], usize)>,
    /// P1 nodes carrying pressure Dirichlet data.
    p_nodes: Vec<usize>,
    p_locs: Vec<[f64; 2]>,
    gravity_rhs: Vec<f64>,
    newton_cache: Option<NewtonCache>,
    flow_cache: Option<FlowCache>,
}

impl Stepper {
    pub fn new(mesh: &Mesh, scenario: Scenario, config: SchemeConfig) -> Result<Self> {
        let asm = Assembler::new(mesh, 5)?;
        let params = scenario.params;
        params.validate()?;
        let div = asm.div_matrix();
        let mass = asm.mass_matrix(crate::spaces::SpaceKind::ScalarP1, 1.0);
        let diff = asm.diffusion_matrix(&params)?;

        let mut u_fixed: Vec<(usize, [f64; 2], usize)> = Vec::new();
        for (g, (comp, tags, value)) in scenario.u_dirichlet.iter().enumerate() {
            let set = dirichlet_set(&asm.p2_vector, mesh, tags, *comp, value.clone());
            for (&dof, &loc) in set.dofs.iter().zip(&set.locations) {
                u_fixed.push((dof, loc, g));
            }
        }
        u_fixed.sort_by_key(|e| e.0);
        for w in u_fixed.windows(2) {
            assert!(w[0].0 != w[1].0, "displacement dof constrained twice");
        }

        let (p_nodes, p_locs) = match &scenario.p_dirichlet {
            Some((tags, value)) => {
                let set = dirichlet_set(&asm.p1, mesh, tags, crate::spaces::Component::Scalar, value.clone());
                (set.dofs.clone(), set.locations.clone())
            }
            None => (Vec::new(), Vec::new()),
        };

        // rigid-motion multipliers are needed exactly when nothing pins u
        let rm_rows = if u_fixed.is_empty() {
            let basis = rigid_motion_basis(&asm.p2_vector);
            let mv = asm.vector_mass_matrix();
            let rows = [
                mv.spmv(&basis.fields[0])?,
                mv.spmv(&basis.fields[1])?,
                mv.spmv(&basis.fields[2])?,
            ];
            Some(rows)
        } else {
            None
        };

        let mut warnings = Vec::new();
        if config.theta == Theta::Decoupled {
            let h = 1.0 / mesh.subdivisions as f64;
            let limit = config.dt_h2_constant * h * h;
            if config.dt > limit * (1.0 + 1e-12) {
                warnings.push(format!(
                    "decoupled scheme used with dt = {} > {limit:.3e} = c*h^2; stability is not covered",
                    config.dt
                ));
            }
        }

        let gravity_rhs = asm.gravity_load(&params);
        Ok(Self {
            asm,
            scenario,
            config,
            warnings,
            params,
            div,
            mass,
            diff,
            rm_rows,
            u_fixed,
            p_nodes,
            p_locs,
            gravity_rhs,
            newton_cache: None,
            flow_cache: None,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn mass_p1(&self) -> &CsrMatrix {
        &self.mass
    }

    pub fn diffusion(&self) -> &CsrMatrix {
        &self.diff
    }

    pub fn div_coupling(&self) -> &CsrMatrix {
        &self.div
    }

    fn nu(&self) -> usize {
        self.asm.p2_vector.dof_count
    }

    fn np(&self) -> usize {
        self.asm.p1.dof_count
    }

    fn nrm(&self) -> usize {
        if self.rm_rows.is_some() {
            3
        } else {
            0
        }
    }

    /// Initial state from the scenario data: nodal interpolants of u0 and p0,
    /// q0 the L2 projection of div u0 into P1, then eta0 = c0 p0 + alpha q0
    /// and xi0 = alpha p0 - lambda q0.
    pub fn initialize(&self) -> Result<SystemState> {
        let u0f = self.scenario.initial_u.clone();
        let p0f = self.scenario.initial_p.clone();
        let u = interpolate_vector(&self.asm.p2_vector, |x| u0f(x, 0.0));
        let p = interpolate_scalar(&self.asm.p1, |x| p0f(x, 0.0));
        self.state_from_u_p(u, p)
    }

    /// Build a consistent state from given displacement and pressure vectors.
    pub fn state_from_u_p(&self, u: Vec<f64>, p: Vec<f64>) -> Result<SystemState> {
        assert_eq!(u.len(), self.nu());
        assert_eq!(p.len(), self.np());
        let bu = self.div.spmv(&u)?;
        let q = linalg::solve(&self.mass, &bu, self.config.linear_tol, 4)?;
        let (c0, alpha, lambda) = (self.params.c0, self.params.alpha, self.params.lambda);
        let eta: Vec<f64> = p.iter().zip(&q).map(|(pi, qi)| c0 * pi + alpha * qi).collect();
        let xi: Vec<f64> = p.iter().zip(&q).map(|(pi, qi)| alpha * pi - lambda * qi).collect();
        Ok(SystemState { time: 0.0, u, xi, eta, p, q })
    }

    /// Remove the rigid-motion component of a displacement vector (L2-orthogonal).
    pub fn project_rm_orthogonal(&self, u: &mut [f64]) -> Result<()> {
        let basis = rigid_motion_basis(&self.asm.p2_vector);
        let mv = self.asm.vector_mass_matrix();
        // Gram solve in the 3-dimensional basis
        let rows: Vec<Vec<f64>> = basis.fields.iter().map(|f| mv.spmv(f).unwrap()).collect();
        let mut gram = [[0.0f64; 3]; 3];
        let mut rhs = [0.0f64; 3];
        for i in 0..3 {
            for j in 0..3 {
                gram[i][j] = linalg::dot(&rows[i], &basis.fields[j]);
            }
            rhs[i] = linalg::dot(&rows[i], u);
        }
        // 3x3 Cramer solve
        let det = |m: &[[f64; 3]; 3]| {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let d = det(&gram);
        if d.abs() < 1e-300 {
            return Err(Error::Solver { message: "singular rigid-motion Gram".into(), residual: f64::INFINITY });
        }
        let mut coef = [0.0f64; 3];
        for k in 0..3 {
            let mut m = gram;
            for r in 0..3 {
                m[r][k] = rhs[r];
            }
            coef[k] = det(&m) / d;
        }
        for (k, field) in basis.fields.iter().enumerate() {
            for (ui, fi) in u.iter_mut().zip(field) {
                *ui -= coef[k] * fi;
            }
        }
        Ok(())
    }

    /// (f, v) + <f1, v> at time t against the vector P2 basis.
    pub fn momentum_load(&self, t: f64) -> Vec<f64> {
        let f = self.scenario.body_force.clone();
        let f1 = self.scenario.traction.clone();
        let mut rhs = self.asm.load_p2v(|x| f(x, t));
        let tr = self.asm.traction_load(|x, n| f1(x, t, n));
        for (r, v) in rhs.iter_mut().zip(&tr) {
            *r += v;
        }
        rhs
    }

    /// (phi, psi) + <phi1, psi> + gravity term at time t against P1.
    pub fn flow_load(&self, t: f64) -> Vec<f64> {
        let phi = self.scenario.flow_source.clone();
        let phi1 = self.scenario.boundary_flux.clone();
        let mut rhs = self.asm.load_p1(|x| phi(x, t));
        let fl = self.asm.flux_load(|x, n| phi1(x, t, n));
        for ((r, v), g) in rhs.iter_mut().zip(&fl).zip(&self.gravity_rhs) {
            *r += v + g;
        }
        rhs
    }

    /// The assembled gravity functional (1/mu_f)(K rho_f g, grad psi_i).
    pub fn gravity_vector(&self) -> &[f64] {
        &self.gravity_rhs
    }

    /// Constrained system matrix and column ordering of the last Newton solve
    /// (diagnostics; populated after the first step).
    pub fn debug_monolithic(&self) -> Option<(CsrMatrix, Vec<usize>)> {
        self.newton_cache.as_ref().map(|c| (c.pattern.csr.clone(), c.order.clone()))
    }

    fn u_fixed_values(&self, t: f64) -> Vec<f64> {
        self.u_fixed
            .iter()
            .map(|&(_, loc, g)| (self.scenario.u_dirichlet[g].2)(loc, t))
            .collect()
    }

    fn p_fixed_values(&self, t: f64) -> Vec<f64> {
        match &self.scenario.p_dirichlet {
            Some((_, value)) => self.p_locs.iter().map(|&x| value(x, t)).collect(),
            None => Vec::new(),
        }
    }

    /// Raw Jacobian triplets in the canonical emission order. The pattern of
    /// this stream is independent of the iterate, so it is frozen once.
    fn emit_jacobian(&self, coo: &mut CooBuilder, u: &[f64], include_eta: bool) {
        let (k1, k2, k3) = self.params.kappa();
        let dt = self.config.dt;
        let nu = self.nu();
        let np = self.np();
        let off_xi = nu;
        let off_eta = nu + np;
        let off_rm = if include_eta { nu + 2 * np } else { nu + np };

        coo.clear();
        // elastic Newton block
        self.asm.newton_jacobian_push(&self.params, u, &mut |i, j, v| coo.push(i, j, v));
        // -B^T: -(xi, div v)
        for i in 0..self.div.nrows {
            for k in self.div.row_ptr[i]..self.div.row_ptr[i + 1] {
                coo.push(self.div.col_idx[k], off_xi + i, -self.div.vals[k]);
            }
        }
        // B and kappa3 M
        for i in 0..self.div.nrows {
            for k in self.div.row_ptr[i]..self.div.row_ptr[i + 1] {
                coo.push(off_xi + i, self.div.col_idx[k], self.div.vals[k]);
            }
        }
        for i in 0..self.mass.nrows {
            for k in self.mass.row_ptr[i]..self.mass.row_ptr[i + 1] {
                coo.push(off_xi + i, off_xi + self.mass.col_idx[k], k3 * self.mass.vals[k]);
            }
        }
        if include_eta {
            // -kappa1 M in the xi rows
            for i in 0..self.mass.nrows {
                for k in self.mass.row_ptr[i]..self.mass.row_ptr[i + 1] {
                    coo.push(off_xi + i, off_eta + self.mass.col_idx[k], -k1 * self.mass.vals[k]);
                }
            }
            // flow row: dt*kappa1*S xi + (M + dt*kappa2*S) eta
            for i in 0..self.diff.nrows {
                for k in self.diff.row_ptr[i]..self.diff.row_ptr[i + 1] {
                    let s = self.diff.vals[k];
                    coo.push(off_eta + i, off_xi + self.diff.col_idx[k], dt * k1 * s);
                    coo.push(off_eta + i, off_eta + self.diff.col_idx[k], dt * k2 * s);
                }
            }
            for i in 0..self.mass.nrows {
                for k in self.mass.row_ptr[i]..self.mass.row_ptr[i + 1] {
                    coo.push(off_eta + i, off_eta + self.mass.col_idx[k], self.mass.vals[k]);
                }
            }
        }
        if let Some(rows) = &self.rm_rows {
            for (k, row) in rows.iter().enumerate() {
                for (i, &v) in row.iter().enumerate() {
                    coo.push(i, off_rm + k, v);
                    coo.push(off_rm + k, i, v);
                }
            }
        }
    }

    /// Full residual of the coupled system at the given iterate.
    #[allow(clippy::too_many_arguments)]
    fn residual(
        &self,
        u: &[f64],
        xi: &[f64],
        eta_used: &[f64],
        eta_new: Option<&[f64]>,
        eta_old: &[f64],
        lm: &[f64],
        rhs_u: &[f64],
        rhs_flow: &[f64],
        p_vals: &[f64],
    ) -> Result<Vec<f64>> {
        let (k1, k2, k3) = self.params.kappa();
        let dt = self.config.dt;
        let nu = self.nu();
        let np = self.np();
        let include_eta = eta_new.is_some();
        let off_xi = nu;
        let off_eta = nu + np;
        let off_rm = if include_eta { nu + 2 * np } else { nu + np };
        let dim = off_rm + self.nrm();
        let mut r = vec![0.0; dim];

        // momentum rows
        let rn = self.asm.nonlinear_residual(&self.params, u);
        let mut ru = rn;
        // -B^T xi
        for i in 0..self.div.nrows {
            let xv = xi[i];
            for k in self.div.row_ptr[i]..self.div.row_ptr[i + 1] {
                ru[self.div.col_idx[k]] -= self.div.vals[k] * xv;
            }
        }
        for (i, (rv, load)) in ru.iter().zip(rhs_u).enumerate() {
            r[i] = rv - load;
        }
        if let Some(rows) = &self.rm_rows {
            for (k, row) in rows.iter().enumerate() {
                let l = lm[k];
                for (i, &v) in row.iter().enumerate() {
                    r[i] += l * v;
                }
                r[off_rm + k] = linalg::dot(row, u);
            }
        }
        for &(dof, _, _) in &self.u_fixed {
            r[dof] = 0.0;
        }

        // mass-coupling rows
        let bu = self.div.spmv(u)?;
        let mxi = self.mass.spmv(xi)?;
        let meta = self.mass.spmv(eta_used)?;
        for i in 0..np {
            r[off_xi + i] = bu[i] + k3 * mxi[i] - k1 * meta[i];
        }

        // flow rows
        if let Some(eta) = eta_new {
            let d_eta: Vec<f64> = eta.iter().zip(eta_old).map(|(a, b)| a - b).collect();
            let md = self.mass.spmv(&d_eta)?;
            let chi: Vec<f64> =
                xi.iter().zip(eta).map(|(x, e)| k1 * x + k2 * e).collect();
            let schi = self.diff.spmv(&chi)?;
            for i in 0..np {
                r[off_eta + i] = md[i] + dt * schi[i] - dt * rhs_flow[i];
            }
            for (node, pv) in self.p_nodes.iter().zip(p_vals) {
                r[off_eta + node] = k1 * xi[*node] + k2 * eta[*node] - pv;
            }
        }
        Ok(r)
    }

    /// Newton iteration on the coupled block. With `include_eta` the flow
    /// equation is part of the unknown; otherwise the previous eta is frozen
    /// and only (u, xi) are solved.
    fn newton(
        &mut self,
        state: &SystemState,
        t_next: f64,
        include_eta: bool,
    ) -> Result<(Vec<f64>, Vec<f64>, Option<Vec<f64>>, StepReport)> {
        let nu = self.nu();
        let np = self.np();
        let nrm = self.nrm();
        let (k1, k2, _) = self.params.kappa();
        let dim = nu + np + if include_eta { np } else { 0 } + nrm;
        let off_xi = nu;
        let off_eta = nu + np;

        let rhs_u = self.momentum_load(t_next);
        let rhs_flow = if include_eta { self.flow_load(t_next) } else { Vec::new() };
        let u_vals = self.u_fixed_values(t_next);
        let p_vals = if include_eta { self.p_fixed_values(t_next) } else { Vec::new() };

        let mut u = state.u.clone();
        let mut xi = state.xi.clone();
        let mut eta = state.eta.clone();
        let mut lm = vec![0.0; nrm];
        for (&(dof, _, _), &v) in self.u_fixed.iter().zip(&u_vals) {
            u[dof] = v;
        }

        if self.newton_cache.is_none() {
            let mut coo = CooBuilder::new(dim, dim);
            self.emit_jacobian(&mut coo, &u, include_eta);
            let mut spec = ConstraintSpec {
                fixed: self.u_fixed.iter().map(|e| e.0).collect(),
                replaced: Vec::new(),
            };
            if include_eta {
                for &node in &self.p_nodes {
                    spec.replaced.push((
                        off_eta + node,
                        vec![(off_xi + node, k1), (off_eta + node, k2)],
                    ));
                }
            }
            let pattern = ConstrainedPattern::build(&coo, &spec);
            let order = min_degree_order(&pattern.csr);
            self.newton_cache =
                Some(NewtonCache { coo, pattern, order, solver: ReusableSolver::new() });
        }

        let zeros_fixed = vec![0.0; self.u_fixed.len()];
        let mut residuals = Vec::new();
        let mut iterations = 0usize;
        loop {
            let r = self.residual(
                &u,
                &xi,
                if include_eta { &eta } else { &state.eta },
                if include_eta { Some(&eta) } else { None },
                &state.eta,
                &lm,
                &rhs_u,
                &rhs_flow,
                &p_vals,
            )?;
            let rnorm = linalg::norm2(&r);
            residuals.push(rnorm);
            let r0 = residuals[0];
            if rnorm <= (self.config.newton_tol * r0).max(NEWTON_FLOOR) {
                break;
            }
            if iterations >= self.config.newton_max_iter {
                return Err(Error::Step {
                    time: t_next,
                    message: format!(
                        "Newton did not converge in {} iterations (residual {rnorm:.3e})",
                        self.config.newton_max_iter
                    ),
                });
            }

            let cache = self.newton_cache.take().unwrap();
            let NewtonCache { mut coo, mut pattern, order, mut solver } = cache;
            self.emit_jacobian(&mut coo, &u, include_eta);
            let mut rhs: Vec<f64> = r.iter().map(|v| -v).collect();
            let replaced_rhs: Vec<f64> = if include_eta {
                self.p_nodes.iter().map(|&node| -r[off_eta + node]).collect()
            } else {
                Vec::new()
            };
            pattern.refill(&coo.vals, &zeros_fixed, &replaced_rhs, &mut rhs);
            // singular / broken-down factorizations propagate as solver errors
            let solved = solver.solve(&pattern.csr, &rhs, &order, self.config.linear_tol);
            self.newton_cache = Some(NewtonCache { coo, pattern, order, solver });
            let delta = solved?;

            for (i, ui) in u.iter_mut().enumerate() {
                *ui += delta[i];
            }
            for (i, xv) in xi.iter_mut().enumerate() {
                *xv += delta[off_xi + i];
            }
            if include_eta {
                for (i, ev) in eta.iter_mut().enumerate() {
                    *ev += delta[off_eta + i];
                }
            }
            let off_rm = dim - nrm;
            for (k, lv) in lm.iter_mut().enumerate() {
                *lv += delta[off_rm + k];
            }
            iterations += 1;
        }

        let report = StepReport { time: t_next, newton_iterations: iterations, newton_residuals: residuals };
        Ok((u, xi, if include_eta { Some(eta) } else { None }, report))
    }

    /// Decoupled diffusion step: backward Euler in the auxiliary unknown
    /// chi = kappa1 xi + kappa2 eta, with chi = p_D on constrained nodes.
    fn flow_step(&mut self, eta_old: &[f64], xi_new: &[f64], t_next: f64) -> Result<Vec<f64>> {
        let (k1, k2, _) = self.params.kappa();
        let dt = self.config.dt;
        let np = self.np();

        if self.flow_cache.is_none() {
            let mut coo = CooBuilder::new(np, np);
            for i in 0..np {
                for k in self.mass.row_ptr[i]..self.mass.row_ptr[i + 1] {
                    coo.push(i, self.mass.col_idx[k], self.mass.vals[k] / k2);
                }
                for k in self.diff.row_ptr[i]..self.diff.row_ptr[i + 1] {
                    coo.push(i, self.diff.col_idx[k], dt * self.diff.vals[k]);
                }
            }
            let spec = ConstraintSpec { fixed: self.p_nodes.clone(), replaced: Vec::new() };
            let mut pattern = ConstrainedPattern::build(&coo, &spec);
            // the matrix is time-independent; factor once
            let mut probe_rhs = vec![0.0; np];
            let probe_vals = vec![0.0; self.p_nodes.len()];
            pattern.refill(&coo.vals, &probe_vals, &[], &mut probe_rhs);
            let order = min_degree_order(&pattern.csr);
            let lu = SparseLu::factor(&pattern.csr, &order)
                .map_err(|e| Error::Step { time: t_next, message: e.to_string() })?;
            self.flow_cache = Some(FlowCache { raw_vals: coo.vals.clone(), pattern, lu });
        }

        let meta = self.mass.spmv(eta_old)?;
        let mxi = self.mass.spmv(xi_new)?;
        let load = self.flow_load(t_next);
        let mut rhs: Vec<f64> = (0..np)
            .map(|i| meta[i] + (k1 / k2) * mxi[i] + dt * load[i])
            .collect();
        let p_vals = self.p_fixed_values(t_next);

        let cache = self.flow_cache.as_mut().unwrap();
        cache.pattern.refill(&cache.raw_vals, &p_vals, &[], &mut rhs);
        let chi = cache.lu.solve(&rhs);
        // verify the direct solve before trusting it
        let res = {
            let ax = cache.pattern.csr.spmv(&chi)?;
            let diff: Vec<f64> = ax.iter().zip(&rhs).map(|(a, b)| a - b).collect();
            linalg::norm2(&diff) / linalg::norm2(&rhs).max(1e-300)
        };
        if res > self.config.linear_tol.max(1e-10) {
            return Err(Error::Step {
                time: t_next,
                message: format!("diffusion solve residual {res:.3e}"),
            });
        }
        Ok(chi.iter().zip(xi_new).map(|(c, x)| (c - k1 * x) / k2).collect())
    }

    /// Advance one time step.
    pub fn step(&mut self, state: &SystemState) -> Result<(SystemState, StepReport)> {
        self.step_to(state, state.time + self.config.dt)
    }

    /// Advance one step to an explicit target time (the run drivers pass the
    /// exact uniform grid point, avoiding accumulated rounding in `time`).
    /// The interval length used in the scheme is always `config.dt`.
    pub fn step_to(&mut self, state: &SystemState, t_next: f64) -> Result<(SystemState, StepReport)> {
        let (k1, k2, k3) = self.params.kappa();
        match self.config.theta {
            Theta::Monolithic => {
                let (u, xi, eta, report) = self.newton(state, t_next, true)?;
                let eta = eta.unwrap();
                let p: Vec<f64> =
                    xi.iter().zip(&eta).map(|(x, e)| k1 * x + k2 * e).collect();
                let q: Vec<f64> =
                    xi.iter().zip(&eta).map(|(x, e)| k1 * e - k3 * x).collect();
                Ok((SystemState { time: t_next, u, xi, eta, p, q }, report))
            }
            Theta::Decoupled => {
                let (u, xi, _, report) = self.newton(state, t_next, false)?;
                let eta = self.flow_step(&state.eta, &xi, t_next)?;
                // the update formula pairs xi^{n+1} with eta^{n+theta} = eta^n
                let p: Vec<f64> =
                    xi.iter().zip(&state.eta).map(|(x, e)| k1 * x + k2 * e).collect();
                let q: Vec<f64> =
                    xi.iter().zip(&eta).map(|(x, e)| k1 * e - k3 * x).collect();
                Ok((SystemState { time: t_next, u, xi, eta, p, q }, report))
            }
        }
    }

    /// Number of steps implied by dt and T; errors when they do not divide.
    pub fn step_count(&self) -> Result<usize> {
        let n = (self.config.final_time / self.config.dt).round();
        if (n * self.config.dt - self.config.final_time).abs() > 1e-12 * self.config.final_time.max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "dt = {} does not divide T = {}",
                self.config.dt, self.config.final_time
            )));
        }
        Ok(n as usize)
    }

    /// Run from the scenario's initial data to T, invoking the observer after
    /// every accepted step.
    pub fn run(
        &mut self,
        mut observe: impl FnMut(&SystemState, &StepReport),
    ) -> Result<SystemState> {
        let n = self.step_count()?;
        let t_final = self.config.final_time;
        let mut state = self.initialize()?;
        for i in 0..n {
            let t_next = t_final * ((i + 1) as f64 / n as f64);
            let (next, report) = self.step_to(&state, t_next)?;
            observe(&next, &report);
            state = next;
        }
        Ok(state)
    }

    /// Run and collect the whole trajectory (including the initial state).
    pub fn run_trajectory(&mut self) -> Result<(Vec<SystemState>, Vec<StepReport>)> {
        let n = self.step_count()?;
        let t_final = self.config.final_time;
        let mut states = Vec::with_capacity(n + 1);
        let mut reports = Vec::with_capacity(n);
        let mut state = self.initialize()?;
        states.push(state.clone());
        for i in 0..n {
            let t_next = t_final * ((i + 1) as f64 / n as f64);
            let (next, report) = self.step_to(&state, t_next)?;
            states.push(next.clone());
            reports.push(report);
            state = next;
        }
        Ok((states, reports))
    }

    /// Run starting from a caller-supplied state.
    pub fn run_from(
        &mut self,
        initial: SystemState,
        steps: usize,
        mut observe: impl FnMut(&SystemState, &StepReport),
    ) -> Result<SystemState> {
        let mut state = initial;
        for _ in 0..steps {
            let (next, report) = self.step(&state)?;
            observe(&next, &report);
            state = next;
        }
        Ok(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_uniform_mesh, Rectangle};
    use crate::scenario::{param_set, pure_flux_source, test1, test2, zero_data};

    fn unit(n: usize) -> Mesh {
        build_uniform_mesh(n, Rectangle::unit_square()).unwrap()
    }

    fn config(theta: Theta, dt: f64, t_end: f64) -> SchemeConfig {
        SchemeConfig { theta, dt, final_time: t_end, ..Default::default() }
    }

    #[test]
    fn zero_data_stays_zero() {
        let mesh = unit(2);
        let s = zero_data(param_set("test1-soft").unwrap());
        let mut stepper = Stepper::new(&mesh, s, config(Theta::Monolithic, 0.1, 0.3)).unwrap();
        let (states, reports) = stepper.run_trajectory().unwrap();
        for st in &states {
            assert!(st.u.iter().all(|&v| v == 0.0));
            assert!(st.eta.iter().all(|&v| v == 0.0));
        }
        for r in &reports {
            assert!(r.newton_iterations <= 1, "zero step took {}", r.newton_iterations);
        }
    }

    #[test]
    fn initialize_consistency() {
        // kappa1 xi0 + kappa2 eta0 = p0 holds coefficient-wise
        let mesh = unit(3);
        for s in [test1(param_set("test1-soft").unwrap()), test2(param_set("test2-soft").unwrap())] {
            let stepper = Stepper::new(&mesh, s, config(Theta::Monolithic, 0.125, 1.0)).unwrap();
            let st = stepper.initialize().unwrap();
            let (k1, k2, _) = stepper.params.kappa();
            for i in 0..st.p.len() {
                let recon = k1 * st.xi[i] + k2 * st.eta[i];
                assert!(
                    (recon - st.p[i]).abs() <= 1e-14 * (1.0 + st.p[i].abs()),
                    "node {i}: {recon} vs {}",
                    st.p[i]
                );
            }
        }
    }

    #[test]
    fn test2_initialize_values() {
        let mesh = unit(2);
        let params = param_set("test2-soft").unwrap();
        let s = test2(params);
        let stepper = Stepper::new(&mesh, s, config(Theta::Monolithic, 0.125, 1.0)).unwrap();
        let st = stepper.initialize().unwrap();
        // u0 = 0 -> q0 = 0, eta0 = c0 p0, xi0 = alpha p0
        for (i, &x) in stepper.asm.p1.node_location.iter().enumerate() {
            let p0 = (x[0] + x[1]).sin();
            assert!((st.eta[i] - params.c0 * p0).abs() < 1e-13);
            assert!((st.xi[i] - params.alpha * p0).abs() < 1e-13);
            assert!(st.q[i].abs() < 1e-12);
        }
    }

    #[test]
    fn update_formula_invariants_hold_exactly() {
        let mesh = unit(3);
        let s = test1(param_set("test1-soft").unwrap());
        for theta in [Theta::Monolithic, Theta::Decoupled] {
            let dt = 1.0 / 18.0;
            let mut stepper = Stepper::new(&mesh, s.clone(), config(theta, dt, 3.0 * dt)).unwrap();
            let (k1, k2, k3) = stepper.params.kappa();
            let mut prev = stepper.initialize().unwrap();
            for _ in 0..3 {
                let (next, _) = stepper.step(&prev).unwrap();
                let eta_used = match theta {
                    Theta::Monolithic => &next.eta,
                    Theta::Decoupled => &prev.eta,
                };
                for i in 0..next.p.len() {
                    let p = k1 * next.xi[i] + k2 * eta_used[i];
                    let q = k1 * next.eta[i] - k3 * next.xi[i];
                    assert_eq!(next.p[i], p);
                    assert_eq!(next.q[i], q);
                }
                prev = next;
            }
        }
    }

    #[test]
    fn newton_converges_quickly_on_test1() {
        let mesh = unit(6);
        let s = test1(param_set("test1-soft").unwrap());
        let dt = 1.0 / 36.0;
        let mut stepper = Stepper::new(&mesh, s, config(Theta::Monolithic, dt, 6.0 * dt)).unwrap();
        let (_, reports) = stepper.run_trajectory().unwrap();
        for r in &reports {
            assert!(r.newton_iterations <= 5, "Newton took {} iterations", r.newton_iterations);
        }
    }

    #[test]
    fn conservation_of_fluid_content() {
        // pure-flux configuration, phi = 1: (eta^n, 1) grows by dt each step
        let mesh = unit(4);
        let s = pure_flux_source(param_set("test1-soft").unwrap(), 1.0);
        let dt = 0.05;
        let mut stepper = Stepper::new(&mesh, s, config(Theta::Monolithic, dt, 10.0 * dt)).unwrap();
        let mass = stepper.mass_p1().clone();
        let ones = vec![1.0; mass.nrows];
        let mut step_idx = 0usize;
        stepper
            .run(|state, _| {
                step_idx += 1;
                let total = linalg::dot(&mass.spmv(&state.eta).unwrap(), &ones);
                let expect = step_idx as f64 * dt; // |Omega| = 1, (phi,1) = 1
                assert!(
                    (total - expect).abs() < 1e-10,
                    "step {step_idx}: (eta,1) = {total}, expected {expect}"
                );
            })
            .unwrap();
    }

    #[test]
    fn no_diffusion_reduces_to_mass_ode() {
        // K = 0: eta^{n+1} = eta^n + dt M^{-1} load
        let mesh = unit(3);
        let mut params = param_set("test1-soft").unwrap();
        params.permeability = 0.0;
        let s = pure_flux_source(params, 2.0);
        let dt = 0.1;
        let mut stepper = Stepper::new(&mesh, s, config(Theta::Decoupled, dt, dt)).unwrap();
        let st0 = stepper.initialize().unwrap();
        let (st1, _) = stepper.step(&st0).unwrap();
        // load = 2 * integral of basis; M^{-1} load = 2 everywhere (constant)
        for &e in &st1.eta {
            assert!((e - 2.0 * dt).abs() < 1e-11, "eta entry {e}");
        }
    }

    #[test]
    fn dt_warning_for_decoupled_scheme() {
        let mesh = unit(4);
        let s = test1(param_set("test1-soft").unwrap());
        let bad = Stepper::new(&mesh, s.clone(), config(Theta::Decoupled, 0.25, 1.0)).unwrap();
        assert!(!bad.warnings.is_empty());
        let good = Stepper::new(&mesh, s, config(Theta::Decoupled, 1.0 / 16.0, 1.0)).unwrap();
        assert!(good.warnings.is_empty());
    }

    #[test]
    fn dt_must_divide_final_time() {
        let mesh = unit(2);
        let s = test1(param_set("test1-soft").unwrap());
        let stepper = Stepper::new(&mesh, s, config(Theta::Monolithic, 0.3, 1.0)).unwrap();
        assert!(stepper.step_count().is_err());
    }

    #[test]
    fn zero_steps_returns_initial_state_only() {
        let mesh = unit(2);
        let s = test2(param_set("test2-soft").unwrap());
        let mut stepper = Stepper::new(&mesh, s, config(Theta::Monolithic, 0.1, 0.0)).unwrap();
        let (states, reports) = stepper.run_trajectory().unwrap();
        assert_eq!(states.len(), 1);
        assert!(reports.is_empty());
        assert_eq!(states[0].time, 0.0);
    }

    #[test]
    fn theta_variants_differ_by_order_dt() {
        // terminal p fields differ by O(dt): halving dt roughly halves the gap
        let mesh = unit(6);
        let s = test1(param_set("test1-soft").unwrap());
        let mass = {
            let asm = Assembler::new(&mesh, 5).unwrap();
            asm.mass_matrix(crate::spaces::SpaceKind::ScalarP1, 1.0)
        };
        let l2 = |a: &[f64], b: &[f64]| {
            let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
            linalg::dot(&mass.spmv(&d).unwrap(), &d).sqrt()
        };
        let run = |theta: Theta, dt: f64| {
            let mut st = Stepper::new(&mesh, s.clone(), config(theta, dt, 0.25)).unwrap();
            st.run(|_, _| {}).unwrap()
        };
        let dt0 = 1.0 / 72.0;
        let gap1 = l2(&run(Theta::Decoupled, dt0).p, &run(Theta::Monolithic, dt0).p);
        let gap2 = l2(&run(Theta::Decoupled, dt0 / 2.0).p, &run(Theta::Monolithic, dt0 / 2.0).p);
        let ratio = gap1 / gap2;
        assert!(
            (1.6..=2.4).contains(&ratio),
            "theta gap ratio {ratio} (gaps {gap1:.3e}, {gap2:.3e})"
        );
    }
}
