//! Manufactured-solution scenarios: exact fields, matching sources and
//! boundary data, and the published parameter sets used for the convergence
//! and locking studies.
//!
//! Source terms are implemented exactly as printed; `residual_audit` checks
//! them numerically against an independent evaluation of the strong form
//! (total stress route plus high-order finite differences), so any printed
//! inconsistency would surface as a large audit residual instead of being
//! silently patched.

use crate::assembly::ModelParams;
use crate::error::{Error, Result};
use crate::mesh::{BoundaryTag, Mesh};
use crate::rng::SplitMix64;
use crate::spaces::{Component, ScalarFn};
use std::sync::Arc;

pub type VectorFn = Arc<dyn Fn([f64; 2], f64) -> [f64; 2] + Send + Sync>;
pub type GradFn = Arc<dyn Fn([f64; 2], f64) -> [[f64; 2]; 2] + Send + Sync>;
pub type TractionFn = Arc<dyn Fn([f64; 2], f64, [f64; 2]) -> [f64; 2] + Send + Sync>;
pub type FluxFn = Arc<dyn Fn([f64; 2], f64, [f64; 2]) -> f64 + Send + Sync>;

/// A complete problem definition: exact fields (when known), source terms,
/// boundary data and initial data.
#[derive(Clone)]
pub struct Scenario {
    pub name: String,
    pub params: ModelParams,
    pub final_time: f64,
    /// Exact solution fields; `None` for monitor-only configurations.
    pub exact_u: Option<VectorFn>,
    pub exact_grad_u: Option<GradFn>,
    pub exact_p: Option<ScalarFn>,
    pub exact_grad_p: Option<VectorFn>,
    pub body_force: VectorFn,
    pub flow_source: ScalarFn,
    /// Traction sigma~ n - alpha p n applied on non-Dirichlet boundary parts.
    pub traction: TractionFn,
    /// Prescribed boundary flux (enters only where p is not prescribed).
    pub boundary_flux: FluxFn,
    /// Component-wise displacement Dirichlet data: (component, sides, value).
    pub u_dirichlet: Vec<(Component, Vec<BoundaryTag>, ScalarFn)>,
    /// Pressure Dirichlet data and the sides carrying it.
    pub p_dirichlet: Option<(Vec<BoundaryTag>, ScalarFn)>,
    pub initial_u: VectorFn,
    pub initial_p: ScalarFn,
}

impl std::fmt::Debug for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scenario").field("name", &self.name).finish()
    }
}

/// Named parameter bundles from the published study tables.
pub fn param_set(name: &str) -> Result<ModelParams> {
    match name {
        // soft set: E = 0.25, nu = 0.25
        "test1-soft" => ModelParams::new(0.1, 0.1, 1e-5, 2.0, 1e-3),
        // stiff set: E = 2500, nu = 0.25 (locking study)
        "test1-stiff" => ModelParams::new(1e3, 1e3, 1e-5, 1.0, 1e-3),
        // soft set: E = 20.099, nu = 0.00495
        "test2-soft" => ModelParams::new(0.1, 10.0, 1e-4, 20.0, 0.1),
        // stiff set: E = 2500, nu = 0.25
        "test2-stiff" => ModelParams::new(1e3, 1e3, 1e-4, 0.01, 0.1),
        _ => Err(Error::InvalidArgument(format!(
            "unknown parameter set '{name}' (expected test1-soft, test1-stiff, test2-soft, test2-stiff)"
        ))),
    }
}

/// First manufactured problem: u = t/2 (x1^2, x2^2), p = t e^{x1+x2}.
pub fn test1(params: ModelParams) -> Scenario {
    let (lambda, mu, alpha) = (params.lambda, params.mu, params.alpha);
    let k_over_muf = params.permeability / params.mu_f;
    let c0 = params.c0;
    Scenario {
        name: "test1".into(),
        params,
        final_time: 1.0,
        exact_u: Some(Arc::new(|x, t| [0.5 * t * x[0] * x[0], 0.5 * t * x[1] * x[1]])),
        exact_grad_u: Some(Arc::new(|x, t| [[t * x[0], 0.0], [0.0, t * x[1]]])),
        exact_p: Some(Arc::new(|x, t| t * (x[0] + x[1]).exp())),
        exact_grad_p: Some(Arc::new(|x, t| {
            let e = t * (x[0] + x[1]).exp();
            [e, e]
        })),
        body_force: Arc::new(move |x, t| {
            let e = (x[0] + x[1]).exp();
            [
                -(lambda + mu) * t - 2.0 * (mu + lambda) * t * t * x[0] + alpha * t * e,
                -(lambda + mu) * t - 2.0 * (mu + lambda) * t * t * x[1] + alpha * t * e,
            ]
        }),
        flow_source: Arc::new(move |x, t| {
            let e = (x[0] + x[1]).exp();
            c0 * e - 2.0 * k_over_muf * t * e + alpha * (x[0] + x[1])
        }),
        traction: Arc::new(move |x, t, n| {
            let e = (x[0] + x[1]).exp();
            let s = x[0] + x[1];
            let s2 = x[0] * x[0] + x[1] * x[1];
            [
                lambda * s * n[0] * t
                    + mu * t * x[0] * n[0]
                    + mu * t * t * x[0] * x[0] * n[0]
                    + lambda * t * t * s2 * n[0]
                    - alpha * n[0] * t * e,
                lambda * s * n[1] * t
                    + mu * t * x[1] * n[1]
                    + mu * t * t * x[1] * x[1] * n[1]
                    + lambda * t * t * s2 * n[1]
                    - alpha * n[1] * t * e,
            ]
        }),
        boundary_flux: Arc::new(|_, _, _| 0.0),
        u_dirichlet: vec![
            (
                Component::X,
                vec![BoundaryTag::Gamma1, BoundaryTag::Gamma3],
                Arc::new(|x: [f64; 2], t: f64| 0.5 * x[0] * x[0] * t),
            ),
            (
                Component::Y,
                vec![BoundaryTag::Gamma2, BoundaryTag::Gamma4],
                Arc::new(|x: [f64; 2], t: f64| 0.5 * x[1] * x[1] * t),
            ),
        ],
        p_dirichlet: Some((
            BoundaryTag::ALL.to_vec(),
            Arc::new(|x: [f64; 2], t: f64| t * (x[0] + x[1]).exp()),
        )),
        initial_u: Arc::new(|_, _| [0.0, 0.0]),
        initial_p: Arc::new(|_, _| 0.0),
    }
}

/// Second manufactured problem: u = t^2/2 (x1^2, x2^2), p = sin(x1+x2) e^t.
pub fn test2(params: ModelParams) -> Scenario {
    let (lambda, mu, alpha) = (params.lambda, params.mu, params.alpha);
    let k_over_muf = params.permeability / params.mu_f;
    let c0 = params.c0;
    Scenario {
        name: "test2".into(),
        params,
        final_time: 1.0,
        exact_u: Some(Arc::new(|x, t| {
            let t2 = t * t;
            [0.5 * t2 * x[0] * x[0], 0.5 * t2 * x[1] * x[1]]
        })),
        exact_grad_u: Some(Arc::new(|x, t| {
            let t2 = t * t;
            [[t2 * x[0], 0.0], [0.0, t2 * x[1]]]
        })),
        exact_p: Some(Arc::new(|x, t| (x[0] + x[1]).sin() * t.exp())),
        exact_grad_p: Some(Arc::new(|x, t| {
            let c = (x[0] + x[1]).cos() * t.exp();
            [c, c]
        })),
        body_force: Arc::new(move |x, t| {
            let t2 = t * t;
            let t4 = t2 * t2;
            let c = (x[0] + x[1]).cos() * t.exp();
            [
                -(lambda + mu) * t2 - 2.0 * (mu + lambda) * t4 * x[0] + alpha * c,
                -(lambda + mu) * t2 - 2.0 * (mu + lambda) * t4 * x[1] + alpha * c,
            ]
        }),
        flow_source: Arc::new(move |x, t| {
            (c0 + 2.0 * k_over_muf) * (x[0] + x[1]).sin() * t.exp()
                + 2.0 * t * alpha * (x[0] + x[1])
        }),
        traction: Arc::new(move |x, t, n| {
            let t2 = t * t;
            let t4 = t2 * t2;
            let s = x[0] + x[1];
            let s2 = x[0] * x[0] + x[1] * x[1];
            let pe = s.sin() * t.exp();
            [
                lambda * s * n[0] * t2
                    + mu * t2 * x[0] * n[0]
                    + mu * t4 * x[0] * x[0] * n[0]
                    + lambda * t4 * s2 * n[0]
                    - alpha * pe * n[0],
                lambda * s * n[1] * t2
                    + mu * t2 * x[1] * n[1]
                    + mu * t4 * x[1] * x[1] * n[1]
                    + lambda * t4 * s2 * n[1]
                    - alpha * pe * n[1],
            ]
        }),
        boundary_flux: Arc::new(|_, _, _| 0.0),
        u_dirichlet: vec![
            (
                Component::X,
                vec![BoundaryTag::Gamma1, BoundaryTag::Gamma3],
                Arc::new(|x: [f64; 2], t: f64| 0.5 * x[0] * x[0] * t * t),
            ),
            (
                Component::Y,
                vec![BoundaryTag::Gamma2, BoundaryTag::Gamma4],
                Arc::new(|x: [f64; 2], t: f64| 0.5 * x[1] * x[1] * t * t),
            ),
        ],
        p_dirichlet: Some((
            BoundaryTag::ALL.to_vec(),
            Arc::new(|x: [f64; 2], t: f64| (x[0] + x[1]).sin() * t.exp()),
        )),
        initial_u: Arc::new(|_, _| [0.0, 0.0]),
        initial_p: Arc::new(|x, _| (x[0] + x[1]).sin()),
    }
}

/// Scenario by name, with the parameter set belonging to it.
pub fn by_name(scenario: &str, params: ModelParams) -> Result<Scenario> {
    match scenario {
        "test1" => Ok(test1(params)),
        "test2" => Ok(test2(params)),
        "pure-flux-source" => Ok(pure_flux_source(params, 1.0)),
        "zero-data" => Ok(zero_data(params)),
        _ => Err(Error::InvalidArgument(format!(
            "unknown scenario '{scenario}' (expected test1, test2, pure-flux-source, zero-data)"
        ))),
    }
}

/// Pure traction/flux configuration with a constant fluid source; no exact
/// solution, used by the conservation monitors.
pub fn pure_flux_source(params: ModelParams, source: f64) -> Scenario {
    Scenario {
        name: "pure-flux-source".into(),
        params,
        final_time: 1.0,
        exact_u: None,
        exact_grad_u: None,
        exact_p: None,
        exact_grad_p: None,
        body_force: Arc::new(|_, _| [0.0, 0.0]),
        flow_source: Arc::new(move |_, _| source),
        traction: Arc::new(|_, _, _| [0.0, 0.0]),
        boundary_flux: Arc::new(|_, _, _| 0.0),
        u_dirichlet: vec![],
        p_dirichlet: None,
        initial_u: Arc::new(|_, _| [0.0, 0.0]),
        initial_p: Arc::new(|_, _| 0.0),
    }
}

/// All data and boundary loads zero, pure traction/flux; used by the energy
/// monitors, which inject a nonzero initial state directly.
pub fn zero_data(params: ModelParams) -> Scenario {
    let mut s = pure_flux_source(params, 0.0);
    s.name = "zero-data".into();
    s
}

/// Maximum discrepancies between the printed source terms and an independent
/// evaluation of the strong form from the exact fields.
#[derive(Debug, Clone, Copy)]
pub struct AuditReport {
    /// |f - (-div sigma~(u) + alpha grad p)| over sampled interior points.
    pub momentum_max: f64,
    /// |phi - ((c0 p + alpha div u)_t + div v_f)| over sampled points.
    pub flow_max: f64,
    /// |f1 - (sigma~(u) n - alpha p n)| over boundary edge midpoints.
    pub traction_max: f64,
}

fn total_stress(g: [[f64; 2]; 2], mu: f64, lambda: f64) -> [[f64; 2]; 2] {
    // sigma~ = mu eps~ + lambda tr(eps~) I, eps~ = (g + g^T)/2 + g^T g
    let mut eps_t = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let gtg = g[0][i] * g[0][j] + g[1][i] * g[1][j];
            eps_t[i][j] = 0.5 * (g[i][j] + g[j][i]) + gtg;
        }
    }
    let tr = eps_t[0][0] + eps_t[1][1];
    [
        [mu * eps_t[0][0] + lambda * tr, mu * eps_t[0][1]],
        [mu * eps_t[1][0], mu * eps_t[1][1] + lambda * tr],
    ]
}

/// Fourth-order central difference of a scalar function.
fn diff5(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
}

/// Numerically audit the printed sources against the strong form.
pub fn residual_audit(s: &Scenario, mesh: &Mesh, n_points: usize, seed: u64) -> Result<AuditReport> {
    let (Some(grad_u), Some(p), Some(grad_p)) =
        (s.exact_grad_u.clone(), s.exact_p.clone(), s.exact_grad_p.clone())
    else {
        return Err(Error::InvalidArgument(format!(
            "scenario '{}' has no exact solution to audit",
            s.name
        )));
    };
    let (mu, lambda, alpha, c0) = (s.params.mu, s.params.lambda, s.params.alpha, s.params.c0);
    let k_over_muf = s.params.permeability / s.params.mu_f;
    let dom = mesh.domain;
    let h = 1e-3 * (dom.x1 - dom.x0);
    let margin = 2.5 * h;
    let mut rng = SplitMix64::new(seed);

    let mut momentum_max = 0.0f64;
    let mut flow_max = 0.0f64;
    for _ in 0..n_points {
        let x = [
            dom.x0 + margin + (dom.x1 - dom.x0 - 2.0 * margin) * rng.next_f64(),
            dom.y0 + margin + (dom.y1 - dom.y0 - 2.0 * margin) * rng.next_f64(),
        ];
        let t = 0.05 + 0.95 * rng.next_f64();
        // momentum: -div sigma~ + alpha grad p vs printed f
        let sigma_at = |y: [f64; 2]| total_stress(grad_u(y, t), mu, lambda);
        for i in 0..2 {
            let div_i = diff5(|a| sigma_at([a, x[1]])[i][0], x[0], h)
                + diff5(|b| sigma_at([x[0], b])[i][1], x[1], h);
            let lhs = -div_i + alpha * grad_p(x, t)[i];
            let f = (s.body_force)(x, t)[i];
            momentum_max = momentum_max.max((lhs - f).abs());
        }
        // flow: (c0 p + alpha div u)_t + div v_f vs printed phi
        let content = |tau: f64| {
            let g = grad_u(x, tau);
            c0 * p(x, tau) + alpha * (g[0][0] + g[1][1])
        };
        let content_t = diff5(content, t, h);
        let lap_p = diff5(|a| grad_p([a, x[1]], t)[0], x[0], h)
            + diff5(|b| grad_p([x[0], b], t)[1], x[1], h);
        // v_f = -(K/mu_f)(grad p - rho_f g); constant gravity drops out of div
        let lhs = content_t - k_over_muf * lap_p;
        let phi = (s.flow_source)(x, t);
        flow_max = flow_max.max((lhs - phi).abs());
    }

    // traction at boundary edge midpoints, exact derivatives
    let mut traction_max = 0.0f64;
    for (e, _, n) in mesh.boundary_facets() {
        let x = mesh.edge_midpoint(e);
        for k in 1..=4 {
            let t = 0.25 * k as f64;
            let sig = total_stress(grad_u(x, t), mu, lambda);
            let pv = p(x, t);
            for i in 0..2 {
                let lhs = sig[i][0] * n[0] + sig[i][1] * n[1] - alpha * pv * n[i];
                let f1 = (s.traction)(x, t, n)[i];
                traction_max = traction_max.max((lhs - f1).abs());
            }
        }
    }
    Ok(AuditReport { momentum_max, flow_max, traction_max })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_uniform_mesh, Rectangle};

    #[test]
    fn printed_values_of_the_parameter_tables() {
        let p = param_set("test1-soft").unwrap();
        assert_eq!((p.lambda, p.mu, p.alpha, p.c0, p.permeability), (0.1, 0.1, 1e-5, 2.0, 1e-3));
        let p = param_set("test1-stiff").unwrap();
        assert_eq!((p.lambda, p.mu, p.c0), (1e3, 1e3, 1.0));
        let p = param_set("test2-soft").unwrap();
        assert_eq!((p.lambda, p.mu, p.alpha, p.c0, p.permeability), (0.1, 10.0, 1e-4, 20.0, 0.1));
        let p = param_set("test2-stiff").unwrap();
        assert_eq!((p.lambda, p.mu, p.alpha, p.c0, p.permeability), (1e3, 1e3, 1e-4, 0.01, 0.1));
        assert!(param_set("nope").is_err());
    }

    #[test]
    fn lame_constants_consistent_with_young_poisson() {
        // the tables also list (E, nu); lambda and mu must match them
        for (name, e, nu) in [
            ("test1-soft", 0.25, 0.25),
            ("test1-stiff", 2500.0, 0.25),
            ("test2-soft", 20.099, 0.00495),
            ("test2-stiff", 2500.0, 0.25),
        ] {
            let p = param_set(name).unwrap();
            let lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
            let mu = e / (2.0 * (1.0 + nu));
            assert!(
                (p.lambda - lambda).abs() / lambda < 2e-3,
                "{name}: lambda {} vs E-nu value {lambda}",
                p.lambda
            );
            assert!((p.mu - mu).abs() / mu < 2e-3, "{name}: mu {} vs {mu}", p.mu);
        }
    }

    #[test]
    fn pointwise_examples() {
        let s1 = test1(param_set("test1-soft").unwrap());
        let p = s1.exact_p.as_ref().unwrap();
        assert!((p([0.0, 0.0], 1.0) - 1.0).abs() < 1e-15);
        let u = s1.exact_u.as_ref().unwrap();
        let uv = u([1.0, 1.0], 1.0);
        assert!((uv[0] - 0.5).abs() < 1e-15 && (uv[1] - 0.5).abs() < 1e-15);
        let f = (s1.body_force)([0.0, 0.0], 1.0);
        assert!((f[0] - (-0.2 + 1e-5)).abs() < 1e-15);
        assert!((f[1] - (-0.2 + 1e-5)).abs() < 1e-15);

        let s2 = test2(param_set("test2-soft").unwrap());
        let u2 = s2.exact_u.as_ref().unwrap();
        let uv = u2([1.0, 0.0], 1.0);
        assert!((uv[0] - 0.5).abs() < 1e-15 && uv[1].abs() < 1e-15);
        let p2 = s2.exact_p.as_ref().unwrap();
        assert!(p2([0.0, 0.0], 0.0).abs() < 1e-15);
    }

    #[test]
    fn initial_data_matches_exact_fields_at_t0() {
        let mut rng = SplitMix64::new(4);
        for s in [
            test1(param_set("test1-soft").unwrap()),
            test2(param_set("test2-soft").unwrap()),
        ] {
            let u = s.exact_u.as_ref().unwrap();
            let p = s.exact_p.as_ref().unwrap();
            for _ in 0..1000 {
                let x = [rng.next_f64(), rng.next_f64()];
                let ue = u(x, 0.0);
                let u0 = (s.initial_u)(x, 0.0);
                assert!((ue[0] - u0[0]).abs() < 1e-14 && (ue[1] - u0[1]).abs() < 1e-14);
                assert!((p(x, 0.0) - (s.initial_p)(x, 0.0)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn sources_are_consistent_with_the_strong_form() {
        let mesh = build_uniform_mesh(4, Rectangle::unit_square()).unwrap();
        for (name, s) in [
            ("test1", test1(param_set("test1-soft").unwrap())),
            ("test1-stiff", test1(param_set("test1-stiff").unwrap())),
            ("test2", test2(param_set("test2-soft").unwrap())),
            ("test2-stiff", test2(param_set("test2-stiff").unwrap())),
        ] {
            let report = residual_audit(&s, &mesh, 20, 2024).unwrap();
            // FD differentiation leaves ~1e-9 noise for O(1000) coefficients
            let scale = s.params.lambda.max(1.0);
            assert!(
                report.momentum_max < 1e-7 * scale,
                "{name}: momentum audit {}",
                report.momentum_max
            );
            assert!(report.flow_max < 1e-7, "{name}: flow audit {}", report.flow_max);
            assert!(
                report.traction_max < 1e-12 * scale,
                "{name}: traction audit {}",
                report.traction_max
            );
        }
    }

    #[test]
    fn dirichlet_boundary_values_evaluate() {
        let s = test2(param_set("test2-soft").unwrap());
        let (_, pfun) = s.p_dirichlet.as_ref().unwrap();
        assert!(pfun([0.0, 0.0], 0.0).abs() < 1e-15); // sin(0) e^0 = 0
        let (_, _, u1) = &s.u_dirichlet[0];
        assert!((u1([1.0, 0.3], 2.0) - 2.0).abs() < 1e-15); // x1^2 t^2 / 2 = 2
    }
}
