//! Error norms against exact solutions, convergence-rate tables,
//! conservation and discrete-energy monitors, and stress diagnostics.
//!
//! Error norms integrate with a degree-6 rule (element degree + 3 or more);
//! the reported H1 norm is the full norm (L2^2 + seminorm^2)^{1/2}. Rates are
//! computed from the nominal mesh label h = 1/n.

use crate::assembly::Assembler;
use crate::error::{Error, Result};
use crate::linalg::{self, CsrMatrix};
use crate::mesh::{build_uniform_mesh, Mesh, Rectangle};
use crate::rng::SplitMix64;
use crate::scenario::Scenario;
use crate::spaces::interpolate_vector;
use crate::stepper::{SchemeConfig, StepReport, Stepper, SystemState, Theta};

/// Terminal-time error norms of one run.
#[derive(Debug, Clone, Copy)]
pub struct ErrorReport {
    pub subdivisions: usize,
    pub dt: f64,
    pub theta: Theta,
    pub l2_u: f64,
    pub h1_u: f64,
    pub l2_p: f64,
    pub h1_p: f64,
}

impl ErrorReport {
    pub fn errors(&self) -> [f64; 4] {
        [self.l2_u, self.h1_u, self.l2_p, self.h1_p]
    }
}

/// Degree-6 quadrature context for error evaluation.
pub struct ErrorComputer {
    asm: Assembler,
}

impl ErrorComputer {
    pub fn new(mesh: &Mesh) -> Result<Self> {
        Ok(Self { asm: Assembler::new(mesh, 6)? })
    }

    /// L2 and full H1 errors of (u_h, p_h) against the scenario's exact
    /// fields at the state's time.
    pub fn norms(&self, scenario: &Scenario, state: &SystemState) -> Result<ErrorReport> {
        let (Some(eu), Some(egu), Some(ep), Some(egp)) = (
            scenario.exact_u.as_ref(),
            scenario.exact_grad_u.as_ref(),
            scenario.exact_p.as_ref(),
            scenario.exact_grad_p.as_ref(),
        ) else {
            return Err(Error::InvalidArgument(format!(
                "scenario '{}' has no exact solution",
                scenario.name
            )));
        };
        let t = state.time;
        let nq = self.asm.quadrature_points_per_cell();
        let mut l2u = 0.0;
        let mut h1u = 0.0;
        let mut l2p = 0.0;
        let mut h1p = 0.0;
        for cell in 0..self.asm.mesh.triangle_count() {
            for q in 0..nq {
                let w = self.asm.weight_at(cell, q);
                let x = self.asm.point_at(cell, q);
                let (uv, ug) = self.asm.p2_vector_at(cell, q, &state.u);
                let (pv, pg) = self.asm.p1_scalar_at(cell, q, &state.p);
                let ue = eu(x, t);
                let uge = egu(x, t);
                let pe = ep(x, t);
                let pge = egp(x, t);
                l2u += w * ((uv[0] - ue[0]).powi(2) + (uv[1] - ue[1]).powi(2));
                let mut gsq = 0.0;
                for i in 0..2 {
                    for j in 0..2 {
                        gsq += (ug[i][j] - uge[i][j]).powi(2);
                    }
                }
                h1u += w * gsq;
                l2p += w * (pv - pe).powi(2);
                h1p += w * ((pg[0] - pge[0]).powi(2) + (pg[1] - pge[1]).powi(2));
            }
        }
        Ok(ErrorReport {
            subdivisions: self.asm.mesh.subdivisions,
            dt: 0.0,
            theta: Theta::Monolithic,
            l2_u: l2u.sqrt(),
            h1_u: (l2u + h1u).sqrt(),
            l2_p: l2p.sqrt(),
            h1_p: (l2p + h1p).sqrt(),
        })
    }
}

/// One line of a convergence table: errors at a mesh level and the observed
/// rates against the previous level.
#[derive(Debug, Clone)]
pub struct RateRow {
    pub subdivisions: usize,
    /// [L2(u), H1(u), L2(p), H1(p)]
    pub errors: [f64; 4],
    pub rates: [Option<f64>; 4],
}

#[derive(Debug, Clone, Default)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
}

impl RateTable {
    pub fn from_errors(levels: &[(usize, [f64; 4])]) -> Self {
        let mut rows: Vec<RateRow> = Vec::with_capacity(levels.len());
        for (i, &(n, errors)) in levels.iter().enumerate() {
            let rates = if i == 0 {
                [None; 4]
            } else {
                let (pn, perr) = (levels[i - 1].0, levels[i - 1].1);
                let mut r = [None; 4];
                for k in 0..4 {
                    r[k] = Some(observed_rate(perr[k], errors[k], pn, n));
                }
                r
            };
            rows.push(RateRow { subdivisions: n, errors, rates });
        }
        Self { rows }
    }

    /// Recompute rates from the stored error column (self-consistency).
    pub fn recomputed_rates(&self) -> Vec<[Option<f64>; 4]> {
        let levels: Vec<(usize, [f64; 4])> =
            self.rows.iter().map(|r| (r.subdivisions, r.errors)).collect();
        Self::from_errors(&levels).rows.into_iter().map(|r| r.rates).collect()
    }
}

/// rate = log(e_prev / e_cur) / log(h_prev / h_cur) with h = 1/n.
pub fn observed_rate(e_prev: f64, e_cur: f64, n_prev: usize, n_cur: usize) -> f64 {
    (e_prev / e_cur).ln() / (n_cur as f64 / n_prev as f64).ln()
}

/// Time-step selection policy for studies.
#[derive(Debug, Clone, Copy)]
pub enum DtPolicy {
    Fixed(f64),
    /// dt = scale * h^2 with h = 1/n.
    HSquared(f64),
}

impl DtPolicy {
    pub fn dt_for(&self, n: usize) -> f64 {
        match *self {
            DtPolicy::Fixed(dt) => dt,
            DtPolicy::HSquared(scale) => scale / (n * n) as f64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StudyResult {
    pub table: RateTable,
    /// Populated when a level failed; the table holds the finished levels.
    pub aborted: Option<String>,
    /// Largest Newton iteration count seen per level.
    pub max_newton_iterations: Vec<usize>,
}

/// Run the solver on each mesh level and compute terminal error rates.
pub fn convergence_study(
    scenario: &Scenario,
    domain: Rectangle,
    levels: &[usize],
    theta: Theta,
    dt_policy: DtPolicy,
) -> Result<StudyResult> {
    convergence_study_jobs(scenario, domain, levels, theta, dt_policy, 1)
}

/// Convergence study with up to `jobs` levels solved concurrently. Levels
/// are independent solves; results merge in level order, so the outcome is
/// identical for any job count. On the first failed level the table keeps
/// the finished coarser levels and the failure is flagged.
pub fn convergence_study_jobs(
    scenario: &Scenario,
    domain: Rectangle,
    levels: &[usize],
    theta: Theta,
    dt_policy: DtPolicy,
    jobs: usize,
) -> Result<StudyResult> {
    if levels.len() < 2 {
        return Err(Error::InvalidArgument("a study needs at least 2 mesh levels".into()));
    }
    let results: Vec<Result<(ErrorReport, usize)>> = if jobs <= 1 {
        levels.iter().map(|&n| run_level(scenario, domain, n, theta, dt_policy)).collect()
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slots: Vec<std::sync::Mutex<Option<Result<(ErrorReport, usize)>>>> =
            levels.iter().map(|_| std::sync::Mutex::new(None)).collect();
        // schedule the finest (slowest) levels first
        let mut order: Vec<usize> = (0..levels.len()).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(levels[i]));
        std::thread::scope(|scope| {
            for _ in 0..jobs.min(levels.len()) {
                scope.spawn(|| loop {
                    let w = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if w >= order.len() {
                        break;
                    }
                    let i = order[w];
                    let r = run_level(scenario, domain, levels[i], theta, dt_policy);
                    *slots[i].lock().unwrap() = Some(r);
                });
            }
        });
        slots.into_iter().map(|s| s.into_inner().unwrap().unwrap()).collect()
    };

    let mut done: Vec<(usize, [f64; 4])> = Vec::new();
    let mut max_newton = Vec::new();
    for (i, outcome) in results.into_iter().enumerate() {
        match outcome {
            Ok((report, newton_max)) => {
                done.push((levels[i], report.errors()));
                max_newton.push(newton_max);
            }
            Err(e) => {
                return Ok(StudyResult {
                    table: RateTable::from_errors(&done),
                    aborted: Some(format!("level n = {}: {e}", levels[i])),
                    max_newton_iterations: max_newton,
                });
            }
        }
    }
    Ok(StudyResult {
        table: RateTable::from_errors(&done),
        aborted: None,
        max_newton_iterations: max_newton,
    })
}

/// Solve one level and return its terminal error report.
pub fn run_level(
    scenario: &Scenario,
    domain: Rectangle,
    n: usize,
    theta: Theta,
    dt_policy: DtPolicy,
) -> Result<(ErrorReport, usize)> {
    let mesh = build_uniform_mesh(n, domain)?;
    let dt = dt_policy.dt_for(n);
    let config = SchemeConfig {
        theta,
        dt,
        final_time: scenario.final_time,
        ..Default::default()
    };
    let mut stepper = Stepper::new(&mesh, scenario.clone(), config)?;
    let mut newton_max = 0usize;
    let final_state = stepper.run(|_, report| {
        newton_max = newton_max.max(report.newton_iterations);
    })?;
    let computer = ErrorComputer::new(&mesh)?;
    let mut report = computer.norms(scenario, &final_state)?;
    report.dt = dt;
    report.theta = theta;
    Ok((report, newton_max))
}

/// Residuals of the discrete conservation identities along a trajectory.
#[derive(Debug, Clone, Copy)]
pub struct ConservationRow {
    pub time: f64,
    /// (eta^n, 1) - (eta^0, 1) - sum_m dt [(phi(t_m),1) + <phi1(t_m),1>]
    pub eta_residual: f64,
    /// 2 (xi^n, 1) - [(N(grad u^n), I) - (f(t_n), x) - <f1(t_n), x>]
    pub xi_residual: f64,
    /// <u^n . n, 1> - [kappa1 C_eta(t_{n-1+theta}) - kappa3 (xi^n, 1)]
    pub flux_residual: f64,
}

/// Check the conservation identities (valid under pure traction/flux
/// boundary conditions). `states[0]` must be the initial state.
pub fn conservation_check(stepper: &Stepper, states: &[SystemState]) -> Result<Vec<ConservationRow>> {
    let params = *stepper.params();
    let (k1, _, k3) = params.kappa();
    let mass = stepper.mass_p1();
    let ones = vec![1.0; mass.nrows];
    let x_field = interpolate_vector(&stepper.asm.p2_vector, |x| x);
    let dt = stepper.config.dt;
    let theta = stepper.config.theta.as_index();

    let int1 = |v: &[f64]| -> Result<f64> { Ok(linalg::dot(&mass.spmv(v)?, &ones)) };
    let eta0 = int1(&states[0].eta)?;

    // running source integral: C_eta(t_m) = (eta^0,1) + dt * sum (phi,1)+<phi1,1>
    let mut source_sum = 0.0;
    let mut c_eta = vec![eta0];
    for m in 1..states.len() {
        let load = stepper.flow_load(states[m].time);
        source_sum += dt * linalg::dot(&load, &ones);
        c_eta.push(eta0 + source_sum);
    }

    let mut rows = Vec::new();
    for m in 1..states.len() {
        let st = &states[m];
        let eta_residual = int1(&st.eta)? - c_eta[m];
        let trace = stepper.asm.stress_trace_integral(&params, &st.u);
        let load_u = stepper.momentum_load(st.time);
        let fx = linalg::dot(&load_u, &x_field);
        let xi_int = int1(&st.xi)?;
        let xi_residual = 2.0 * xi_int - (trace - fx);
        let flux = stepper.asm.boundary_normal_flux(&st.u);
        // add_2 at state m: kappa3 (xi^m,1) + <u^m.n,1> = kappa1 C_eta(t_{m-1+theta})
        let rhs = k1 * c_eta[m - 1 + theta] - k3 * xi_int;
        let flux_residual = flux - rhs;
        rows.push(ConservationRow { time: st.time, eta_residual, xi_residual, flux_residual });
    }
    Ok(rows)
}

/// User-supplied constants of the printed energy functionals (they are not
/// derivable from the model data, so the J/S columns are diagnostics only).
#[derive(Debug, Clone, Copy)]
pub struct EnergyConstants {
    pub c1: f64,
    pub c2: f64,
    pub c4: f64,
}

impl Default for EnergyConstants {
    fn default() -> Self {
        Self { c1: 1.0, c2: 1.0, c4: 1.0 }
    }
}

#[derive(Debug, Clone)]
pub struct MonitorRow {
    pub step: usize,
    pub time: f64,
    pub newton_iterations: usize,
    pub conservation_eta: f64,
    pub conservation_xi: f64,
    pub conservation_flux: f64,
    /// Residual of the exact discrete energy combination (monolithic form).
    pub energy_residual: f64,
    /// Largest |term| in that combination; report residual/scale.
    pub energy_scale: f64,
    pub j_value: f64,
    pub s_value: f64,
    /// Decoupled-scheme variant of the dissipation sum, when theta = 0.
    pub s_hat: Option<f64>,
    /// S recomputed with d_t eta^{n+1} (the alternative reading), theta = 0.
    pub s_alt: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct MonitorLog {
    pub rows: Vec<MonitorRow>,
}

/// Full monitor pass over a trajectory: conservation residuals, the exact
/// energy identity residual, and the printed J/S functionals for the given
/// constants.
pub fn monitor_log(
    stepper: &Stepper,
    states: &[SystemState],
    reports: &[StepReport],
    constants: EnergyConstants,
) -> Result<MonitorLog> {
    assert_eq!(states.len(), reports.len() + 1, "states must include the initial state");
    let params = *stepper.params();
    let (k1, k2, k3) = params.kappa();
    let dt = stepper.config.dt;
    let theta = stepper.config.theta.as_index();
    let mass = stepper.mass_p1();
    let diff = stepper.diffusion();
    let eps = stepper.asm.eps_stiffness();
    let gravity = stepper.gravity_vector();
    let conservation = conservation_check(stepper, states)?;

    let m_norm2 = |v: &[f64], m: &CsrMatrix| -> Result<f64> { Ok(linalg::dot(&m.spmv(v)?, v)) };

    let mut rows = Vec::new();
    let mut s_running = 0.0;
    let mut s_alt_running = 0.0;
    let mut s_hat_running = 0.0;
    for nstep in 0..reports.len() {
        let prev = &states[nstep];
        let cur = &states[nstep + 1];
        let t_next = cur.time;
        let d_t = |a: &[f64], b: &[f64]| -> Vec<f64> {
            a.iter().zip(b).map(|(x, y)| (x - y) / dt).collect()
        };
        let du = d_t(&cur.u, &prev.u);
        let dxi = d_t(&cur.xi, &prev.xi);
        let deta = d_t(&cur.eta, &prev.eta);

        // exact energy combination (monolithic pairing)
        let p_mono: Vec<f64> =
            cur.xi.iter().zip(&cur.eta).map(|(x, e)| k1 * x + k2 * e).collect();
        let load_u = stepper.momentum_load(t_next);
        let load_p = stepper.flow_load(t_next);
        let term_stress = linalg::dot(&stepper.asm.nonlinear_residual(&params, &cur.u), &du);
        let term_load_u = linalg::dot(&load_u, &du);
        let term_xi = k3 * linalg::dot(&mass.spmv(&dxi)?, &cur.xi);
        let term_eta = k2 * linalg::dot(&mass.spmv(&deta)?, &cur.eta);
        let term_diff = linalg::dot(&diff.spmv(&p_mono)?, &p_mono);
        let term_load_p = linalg::dot(&load_p, &p_mono);
        let energy_residual =
            term_stress - term_load_u + term_xi + term_eta + term_diff - term_load_p;
        let energy_scale = [term_stress, term_load_u, term_xi, term_eta, term_diff, term_load_p]
            .iter()
            .fold(0.0f64, |m, t| m.max(t.abs()));

        // printed J at l = nstep (i.e. u^{l+1} = cur)
        let eta_j = if theta == 1 { &cur.eta } else { &prev.eta };
        let j_value = 0.5
            * (constants.c2 * m_norm2(&cur.u, &eps)?
                + k2 * m_norm2(eta_j, mass)?
                + k3 * m_norm2(&cur.xi, mass)?
                - 2.0 * linalg::dot(&load_u, &cur.u));

        // printed S summand at n = nstep (first summand enters at n = 1)
        if nstep >= 1 {
            let eps_du = m_norm2(&du, &eps)?;
            let p_used = &cur.p;
            let pd = linalg::dot(&diff.spmv(p_used)?, p_used);
            let p_grav = linalg::dot(gravity, p_used);
            let p_load = linalg::dot(&stepper.flow_load(t_next), p_used);
            let deta_theta = if theta == 1 {
                deta.clone()
            } else {
                d_t(&prev.eta, &states[nstep - 1].eta)
            };
            let eps_un = m_norm2(&prev.u, &eps)?.sqrt();
            let eps_un1 = m_norm2(&cur.u, &eps)?.sqrt();
            let cross = if theta == 0 {
                (k1 * dt) * linalg::dot(&diff.spmv(&dxi)?, p_used)
            } else {
                0.0
            };
            let common = (0.5 * dt) * constants.c4 * eps_du
                + (0.5 * k2 * dt) * m_norm2(&deta_theta, mass)?
                + (0.5 * k3 * dt) * m_norm2(&dxi, mass)?
                - p_load;
            s_running += dt * (common + pd - cross - (constants.c1 / dt) * eps_un * eps_un1);
            if theta == 0 {
                let alt_common = (0.5 * dt) * constants.c4 * eps_du
                    + (0.5 * k2 * dt) * m_norm2(&deta, mass)?
                    + (0.5 * k3 * dt) * m_norm2(&dxi, mass)?
                    - p_load;
                s_alt_running +=
                    dt * (alt_common + pd - cross - (constants.c1 / dt) * eps_un * eps_un1);
                s_hat_running += dt
                    * ((0.25 * dt) * constants.c4 * eps_du + 0.5 * pd - p_grav
                        + (0.5 * k2 * dt) * m_norm2(&deta_theta, mass)?
                        + (0.5 * k3 * dt) * m_norm2(&dxi, mass)?
                        - (p_load - p_grav)
                        - (constants.c1 / dt) * eps_un1 * eps_un1);
            }
        }

        let cons = &conservation[nstep];
        rows.push(MonitorRow {
            step: nstep + 1,
            time: t_next,
            newton_iterations: reports[nstep].newton_iterations,
            conservation_eta: cons.eta_residual,
            conservation_xi: cons.xi_residual,
            conservation_flux: cons.flux_residual,
            energy_residual,
            energy_scale,
            j_value,
            s_value: s_running,
            s_hat: (theta == 0).then_some(s_hat_running),
            s_alt: (theta == 0).then_some(s_alt_running),
        });
    }
    Ok(MonitorLog { rows })
}

/// Empirical monotonicity and Lipschitz ratios of the nonlinear stress over
/// random coefficient pairs with bounded gradients.
#[derive(Debug, Clone, Copy)]
pub struct PairingDiagnostics {
    pub samples: usize,
    /// min over samples of (N(u)-N(v), eps(u)-eps(v)) / |eps(u)-eps(v)|^2
    pub min_monotonicity_ratio: f64,
    /// max over samples of |N(u)-N(v)| / |eps(u)-eps(v)|
    pub max_lipschitz_ratio: f64,
}

pub fn stress_pairing_diagnostics(
    asm: &Assembler,
    params: &crate::assembly::ModelParams,
    samples: usize,
    max_gradient: f64,
    seed: u64,
) -> PairingDiagnostics {
    let eps = asm.eps_stiffness();
    let n = asm.p2_vector.dof_count;
    let mut rng = SplitMix64::new(seed);
    let mut min_mono = f64::INFINITY;
    let mut max_lip = 0.0f64;
    for _ in 0..samples {
        let mut draw = || -> Vec<f64> {
            let mut v: Vec<f64> = (0..n).map(|_| rng.next_sym()).collect();
            let g = asm.max_gradient_norm(&v);
            if g > max_gradient {
                let s = max_gradient / g;
                for x in v.iter_mut() {
                    *x *= s;
                }
            }
            v
        };
        let u = draw();
        let v = draw();
        let ru = asm.nonlinear_residual(params, &u);
        let rv = asm.nonlinear_residual(params, &v);
        let d: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - b).collect();
        let pairing: f64 =
            ru.iter().zip(&rv).zip(&d).map(|((a, b), x)| (a - b) * x).sum();
        let eps_norm2 = linalg::dot(&eps.spmv(&d).unwrap(), &d);
        if eps_norm2 > 1e-28 {
            min_mono = min_mono.min(pairing / eps_norm2);
            let nd = asm.stress_difference_l2(params, &u, &v);
            max_lip = max_lip.max(nd / eps_norm2.sqrt());
        }
    }
    PairingDiagnostics { samples, min_monotonicity_ratio: min_mono, max_lipschitz_ratio: max_lip }
}
