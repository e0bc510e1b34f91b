//! Error functionals and physical field reconstruction: σ- and μ-weighted
//! norms, relative percentage errors of the space-time discrete norms, the
//! magnetic/electric fields recovered from the scalar unknown, and log-log
//! slope fitting for convergence tables.
//!
//! Norms are evaluated without Dirichlet elimination: trajectories store
//! interior DOFs, and the functionals expand them with zero boundary values
//! before integrating, so conductor elements touching ∂Ω are still counted.

use thiserror::Error;

use crate::assembly::{edge_midpoints, local_mass, p1_gradients, Coefficients, DofMap};
use crate::mesh::{signed_area, Region, TriMesh};
use crate::stepper::Trajectory;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("relative error undefined: denominator norm is zero")]
    ZeroDenominator,
    #[error("slope fit needs at least two points")]
    NotEnoughPoints,
    #[error("slope fit needs strictly positive coordinates, got ({h}, {e})")]
    NonPositivePoint { h: f64, e: f64 },
    #[error("slope fit needs at least two distinct h values")]
    DegenerateFit,
}

type Scalar = Box<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
type Gradient = Box<dyn Fn(f64, f64, f64) -> [f64; 2] + Send + Sync>;

/// A closed-form solution u(x, y, t) with the derivatives the error
/// functionals need. Must vanish on ∂Ω for all t.
pub struct ExactSolution {
    u: Scalar,
    du_dt: Scalar,
    grad_u: Gradient,
    description: String,
}

impl ExactSolution {
    pub fn new(
        u: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        du_dt: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        grad_u: impl Fn(f64, f64, f64) -> [f64; 2] + Send + Sync + 'static,
        description: impl Into<String>,
    ) -> ExactSolution {
        ExactSolution {
            u: Box::new(u),
            du_dt: Box::new(du_dt),
            grad_u: Box::new(grad_u),
            description: description.into(),
        }
    }

    /// The manufactured solution of the eddy-current experiment:
    /// u = e^{−5πt}·sin(πx₁)·sin(πx₂).
    pub fn decaying_sine() -> ExactSolution {
        use std::f64::consts::PI;
        ExactSolution::new(
            |x, y, t| (-5.0 * PI * t).exp() * (PI * x).sin() * (PI * y).sin(),
            |x, y, t| -5.0 * PI * (-5.0 * PI * t).exp() * (PI * x).sin() * (PI * y).sin(),
            |x, y, t| {
                let decay = (-5.0 * PI * t).exp();
                [
                    decay * PI * (PI * x).cos() * (PI * y).sin(),
                    decay * PI * (PI * x).sin() * (PI * y).cos(),
                ]
            },
            "u(x1, x2, t) = exp(-5*pi*t) * sin(pi*x1) * sin(pi*x2)",
        )
    }

    pub fn u(&self, x: f64, y: f64, t: f64) -> f64 {
        (self.u)(x, y, t)
    }

    pub fn du_dt(&self, x: f64, y: f64, t: f64) -> f64 {
        (self.du_dt)(x, y, t)
    }

    pub fn grad_u(&self, x: f64, y: f64, t: f64) -> [f64; 2] {
        (self.grad_u)(x, y, t)
    }

    pub fn description(&self) -> &str {
        &self.description
    }
}

/// Magnetic field from a full nodal vector: on each triangle the constant
/// H_K = (1/μ)·(∂u_h/∂x₂, −∂u_h/∂x₁) from the P1 gradient.
pub fn reconstruct_h_full(mesh: &TriMesh, coeffs: &Coefficients, u_full: &[f64]) -> Vec<[f64; 2]> {
    assert_eq!(u_full.len(), mesh.n_nodes(), "nodal vector dimension mismatch");
    let mut field = Vec::with_capacity(mesh.n_triangles());
    for k in 0..mesh.n_triangles() {
        let coords = mesh.triangle_coords(k);
        let (_, grads) = p1_gradients(&coords).expect("mesh guarantees positive areas");
        let tri = mesh.triangle(k);
        let mut du = [0.0; 2];
        for i in 0..3 {
            du[0] += u_full[tri[i]] * grads[i][0];
            du[1] += u_full[tri[i]] * grads[i][1];
        }
        let inv_mu = 1.0 / coeffs.mu(mesh.region(k));
        field.push([inv_mu * du[1], -inv_mu * du[0]]);
    }
    field
}

/// Magnetic field from an interior DOF vector (boundary values zero).
pub fn reconstruct_h(
    mesh: &TriMesh,
    dofmap: &DofMap,
    coeffs: &Coefficients,
    u_interior: &[f64],
) -> Vec<[f64; 2]> {
    reconstruct_h_full(mesh, coeffs, &dofmap.expand(u_interior))
}

/// Electric field (out-of-plane component) from the backward difference:
/// nodal values −(uⁿ − uⁿ⁻¹)/Δt.
pub fn reconstruct_e(u_n: &[f64], u_prev: &[f64], dt: f64) -> Vec<f64> {
    assert!(dt > 0.0, "dt must be positive");
    assert_eq!(u_n.len(), u_prev.len(), "state dimension mismatch");
    u_n.iter().zip(u_prev).map(|(a, b)| -(a - b) / dt).collect()
}

/// ‖w‖²_{σ,Ω_c} = ∫_{Ω_c} σ·|w|² for a full nodal field: the exact P1 mass
/// quadratic form summed over conductor elements.
pub fn sigma_norm_sq(mesh: &TriMesh, coeffs: &Coefficients, w_full: &[f64]) -> f64 {
    assert_eq!(w_full.len(), mesh.n_nodes(), "nodal vector dimension mismatch");
    let sigma = coeffs.sigma(Region::Conductor);
    let mut total = 0.0;
    for k in 0..mesh.n_triangles() {
        if mesh.region(k) != Region::Conductor {
            continue;
        }
        let m = local_mass(&mesh.triangle_coords(k), sigma).expect("mesh guarantees positive areas");
        let tri = mesh.triangle(k);
        let w = [w_full[tri[0]], w_full[tri[1]], w_full[tri[2]]];
        for i in 0..3 {
            for j in 0..3 {
                total += w[i] * m[i][j] * w[j];
            }
        }
    }
    total
}

/// ‖v‖²_{μ,Ω} = Σ_K area·(1/μ)·|v_K|² for a per-element constant field.
pub fn mu_field_norm_sq(mesh: &TriMesh, coeffs: &Coefficients, field: &[[f64; 2]]) -> f64 {
    assert_eq!(field.len(), mesh.n_triangles(), "element field dimension mismatch");
    let mut total = 0.0;
    for (k, v) in field.iter().enumerate() {
        let area = signed_area(&mesh.triangle_coords(k));
        let inv_mu = 1.0 / coeffs.mu(mesh.region(k));
        total += area * inv_mu * (v[0] * v[0] + v[1] * v[1]);
    }
    total
}

/// Numerator and denominator of a relative space-time error, kept separate so
/// both percentage conventions stay available.
#[derive(Debug, Clone, Copy)]
pub struct RelativeError {
    pub numerator: f64,
    pub denominator: f64,
}

impl RelativeError {
    /// 100·sqrt(numerator/denominator): the square-rooted convention reported
    /// in the CSV output (error ratios halve when the underlying norm error
    /// halves).
    pub fn percent(&self) -> f64 {
        100.0 * (self.numerator / self.denominator).sqrt()
    }

    /// 100·numerator/denominator: the plain ratio of summed squared norms.
    pub fn percent_squared(&self) -> f64 {
        100.0 * self.numerator / self.denominator
    }
}

/// Relative H error over the trajectory:
/// numerator Δt·Σₙ ‖H(tₙ)−H_hⁿ‖²_{μ,Ω}, denominator Δt·Σₙ ‖H(tₙ)‖²_{μ,Ω},
/// n = 1..N. The exact field enters through the same 3-edge-midpoint rule as
/// every other integral in the pipeline.
pub fn error_h_relative(
    mesh: &TriMesh,
    dofmap: &DofMap,
    coeffs: &Coefficients,
    traj: &Trajectory,
    exact: &ExactSolution,
) -> Result<RelativeError, AnalysisError> {
    let dt = traj.dt();
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    // Per-element geometry is time-independent; precompute it once.
    let mut geometry = Vec::with_capacity(mesh.n_triangles());
    for k in 0..mesh.n_triangles() {
        let coords = mesh.triangle_coords(k);
        let area = signed_area(&coords);
        let mids = edge_midpoints(&coords);
        let inv_mu = 1.0 / coeffs.mu(mesh.region(k));
        geometry.push((area, mids, inv_mu));
    }
    for n in 1..=traj.n_steps() {
        let t = traj.time(n);
        let h_h = reconstruct_h(mesh, dofmap, coeffs, traj.state(n));
        for (k, &(area, mids, inv_mu)) in geometry.iter().enumerate() {
            let w = area / 3.0;
            for &[x, y] in &mids {
                let g = exact.grad_u(x, y, t);
                let h_ex = [inv_mu * g[1], -inv_mu * g[0]];
                let dx = h_ex[0] - h_h[k][0];
                let dy = h_ex[1] - h_h[k][1];
                numerator += dt * w * inv_mu * (dx * dx + dy * dy);
                denominator += dt * w * inv_mu * (h_ex[0] * h_ex[0] + h_ex[1] * h_ex[1]);
            }
        }
    }
    if denominator == 0.0 {
        return Err(AnalysisError::ZeroDenominator);
    }
    Ok(RelativeError { numerator, denominator })
}

/// Relative E error over the trajectory:
/// numerator Δt·Σₙ ‖E(tₙ)−E_hⁿ‖²_{σ,Ω_c}, denominator Δt·Σₙ ‖E(tₙ)‖²_{σ,Ω_c},
/// n = 1..N, with E(tₙ) = −∂_t u(tₙ) sampled at nodes and E_hⁿ the backward
/// difference quotient.
pub fn error_e_relative(
    mesh: &TriMesh,
    dofmap: &DofMap,
    coeffs: &Coefficients,
    traj: &Trajectory,
    exact: &ExactSolution,
) -> Result<RelativeError, AnalysisError> {
    let dt = traj.dt();
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    let mut prev_full = dofmap.expand(traj.state(0));
    for n in 1..=traj.n_steps() {
        let t = traj.time(n);
        let curr_full = dofmap.expand(traj.state(n));
        let e_h = reconstruct_e(&curr_full, &prev_full, dt);
        let mut e_err = Vec::with_capacity(mesh.n_nodes());
        let mut e_ex = Vec::with_capacity(mesh.n_nodes());
        for (node, &[x, y]) in mesh.nodes().iter().enumerate() {
            let exact_e = -exact.du_dt(x, y, t);
            e_ex.push(exact_e);
            e_err.push(exact_e - e_h[node]);
        }
        numerator += dt * sigma_norm_sq(mesh, coeffs, &e_err);
        denominator += dt * sigma_norm_sq(mesh, coeffs, &e_ex);
        prev_full = curr_full;
    }
    if denominator == 0.0 {
        return Err(AnalysisError::ZeroDenominator);
    }
    Ok(RelativeError { numerator, denominator })
}

/// max over n = 1..N of ‖u(tₙ) − u_hⁿ‖²_{σ,Ω_c} with u(tₙ) sampled at nodes.
pub fn error_max_sigma(
    mesh: &TriMesh,
    dofmap: &DofMap,
    coeffs: &Coefficients,
    traj: &Trajectory,
    exact: &ExactSolution,
) -> f64 {
    let mut max = 0.0f64;
    for n in 1..=traj.n_steps() {
        let t = traj.time(n);
        let u_full = dofmap.expand(traj.state(n));
        let diff: Vec<f64> = mesh
            .nodes()
            .iter()
            .zip(&u_full)
            .map(|(&[x, y], &uh)| exact.u(x, y, t) - uh)
            .collect();
        max = max.max(sigma_norm_sq(mesh, coeffs, &diff));
    }
    max
}

/// One convergence-study level: mesh size, time step, and the three measured
/// errors (percentages in the square-rooted convention).
#[derive(Debug, Clone, Copy)]
pub struct LevelRow {
    pub level: usize,
    pub h: f64,
    pub dt: f64,
    pub err_h_pct: f64,
    pub err_e_pct: f64,
    pub err_max_sigma: f64,
}

/// Rows sorted by decreasing h plus fitted log-log slopes (absent when fewer
/// than two levels were run).
#[derive(Debug, Clone)]
pub struct ErrorReport {
    pub rows: Vec<LevelRow>,
    pub slope_h: Option<f64>,
    pub slope_e: Option<f64>,
}

/// Least-squares slope of log(error) against log(h).
pub fn fit_slope(points: &[(f64, f64)]) -> Result<f64, AnalysisError> {
    if points.len() < 2 {
        return Err(AnalysisError::NotEnoughPoints);
    }
    for &(h, e) in points {
        if h <= 0.0 || e <= 0.0 {
            return Err(AnalysisError::NonPositivePoint { h, e });
        }
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(h, e)| (h.ln(), e.ln())).collect();
    let n = logs.len() as f64;
    let mean_x = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mean_x) * (p.0 - mean_x)).sum();
    if sxx == 0.0 {
        return Err(AnalysisError::DegenerateFit);
    }
    let sxy: f64 = logs.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    Ok(sxy / sxx)
}
