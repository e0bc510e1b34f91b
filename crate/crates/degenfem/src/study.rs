//! The manufactured eddy-current experiment end to end: configuration,
//! discrete system assembly, the refinement-level driver in its three
//! time-step scalings, and deterministic CSV output.
//!
//! The model problem is σ·∂_t u − div((1/μ)∇u) = J_d on the unit square with
//! u = 0 on the boundary, σ > 0 only on the conductor rectangle. The source
//! is manufactured from u = e^{−5πt}·sin(πx₁)·sin(πx₂), so every computed
//! error has a closed-form reference.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{
    error_e_relative, error_h_relative, error_max_sigma, fit_slope, reconstruct_e, reconstruct_h,
    AnalysisError, ErrorReport, ExactSolution, LevelRow,
};
use crate::assembly::{
    assemble_load, assemble_mass_conductor, assemble_stiffness, interpolate, AssemblyError,
    Coefficients, DofMap,
};
use crate::mesh::{generate_unit_square, MeshError, Rect, Region, TriMesh};
use crate::stepper::{run, DegenerateSystem, GardingConstants, StepError};

/// Vacuum permeability, the experiment's μ.
pub const DEFAULT_MU: f64 = 4.0e-7 * PI;

/// Conductor conductivity of the experiment.
pub const DEFAULT_SIGMA: f64 = 1.0e6;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Step(#[from] StepError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl StudyError {
    /// Process exit code: 2 config, 3 solver, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            StudyError::Config(_) => 2,
            StudyError::Mesh(MeshError::Io { .. }) => 4,
            StudyError::Mesh(_) => 2,
            StudyError::Assembly(_) => 3,
            StudyError::Step(_) => 3,
            StudyError::Analysis(_) => 3,
            StudyError::Io { .. } => 4,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StudyError + '_ {
    move |source| StudyError::Io { path: path.to_path_buf(), source }
}

/// How the time step shrinks across refinement levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DtScaling {
    /// Δt ∝ h: dt0/2ᵏ at level k.
    Linear,
    /// Δt ∝ h²: dt0/4ᵏ at level k.
    Quadratic,
    /// Δt = dt0 at every level.
    Fixed,
}

impl DtScaling {
    pub fn dt_at_level(self, dt0: f64, level: usize) -> f64 {
        match self {
            DtScaling::Linear => dt0 / 2f64.powi(level as i32),
            DtScaling::Quadratic => dt0 / 4f64.powi(level as i32),
            DtScaling::Fixed => dt0,
        }
    }
}

impl std::str::FromStr for DtScaling {
    type Err = String;

    fn from_str(s: &str) -> Result<DtScaling, String> {
        match s {
            "linear" => Ok(DtScaling::Linear),
            "quadratic" => Ok(DtScaling::Quadratic),
            "fixed" => Ok(DtScaling::Fixed),
            other => Err(format!("unknown dt scaling `{other}` (expected linear, quadratic or fixed)")),
        }
    }
}

/// Study parameters; the JSON config file carries exactly these fields and
/// unknown keys are rejected. Defaults reproduce the reference experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    /// Number of refinement levels.
    pub levels: usize,
    /// Base grid resolution (level k uses n = n0·2ᵏ).
    pub n0: usize,
    /// Base time step.
    pub dt0: f64,
    /// Final time.
    #[serde(rename = "T")]
    pub t_final: f64,
    pub dt_scaling: DtScaling,
    pub mu: f64,
    pub sigma_c: f64,
    /// Conductor rectangle [x0, y0, x1, y1]; null for all-dielectric.
    pub conductor: Option<[f64; 4]>,
    /// CSV output path of the convergence study.
    pub output: PathBuf,
}

impl Default for StudyConfig {
    fn default() -> StudyConfig {
        StudyConfig {
            levels: 5,
            n0: 4,
            dt0: 0.025,
            t_final: 1.0,
            dt_scaling: DtScaling::Linear,
            mu: DEFAULT_MU,
            sigma_c: DEFAULT_SIGMA,
            conductor: Some([0.25, 0.25, 0.75, 0.75]),
            output: PathBuf::from("convergence.csv"),
        }
    }
}

impl StudyConfig {
    pub fn from_json_file(path: &Path) -> Result<StudyConfig, StudyError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let cfg: StudyConfig = serde_json::from_str(&text)
            .map_err(|e| StudyError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), StudyError> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(StudyError::Config(msg.to_string()))
            }
        };
        check(self.levels >= 1, "levels must be at least 1")?;
        check(self.n0 >= 1, "n0 must be at least 1")?;
        check(self.dt0 > 0.0 && self.dt0.is_finite(), "dt0 must be positive")?;
        check(self.t_final > 0.0 && self.t_final.is_finite(), "T must be positive")?;
        check(self.mu > 0.0 && self.mu.is_finite(), "mu must be positive")?;
        check(self.sigma_c > 0.0 && self.sigma_c.is_finite(), "sigma_c must be positive")?;
        check(self.dt0 <= self.t_final, "dt0 must not exceed T")?;
        if let Some([x0, y0, x1, y1]) = self.conductor {
            check(
                (0.0..1.0).contains(&x0) && (0.0..1.0).contains(&y0) && x0 < x1 && y0 < y1
                    && x1 <= 1.0 && y1 <= 1.0,
                "conductor must satisfy 0 <= x0 < x1 <= 1 and 0 <= y0 < y1 <= 1",
            )?;
        }
        Ok(())
    }

    pub fn conductor_rect(&self) -> Option<Rect> {
        self.conductor.map(|[x0, y0, x1, y1]| Rect::new(x0, y0, x1, y1))
    }

    pub fn coefficients(&self) -> Coefficients {
        Coefficients::new(self.mu, self.sigma_c)
    }

    /// Steps per run: the nearest integer count whose uniform grid covers
    /// [0, T]; the effective Δt is T/N.
    pub fn steps_for(&self, dt: f64) -> usize {
        ((self.t_final / dt).round() as usize).max(1)
    }
}

/// The source J_d = σ(x)·∂_t u − div((1/μ)∇u) manufactured from the decaying
/// sine solution: [−5π·σ(x) + 2π²/μ]·e^{−5πt}·sin(πx₁)·sin(πx₂). The region
/// argument selects σ (and μ) on a per-element basis, so the jump of σ at the
/// conductor boundary never leaks into neighboring elements through
/// quadrature points that happen to lie on the interface.
pub fn manufactured_source(coeffs: Coefficients) -> impl Fn(f64, f64, Region, f64) -> f64 {
    move |x, y, region, t| {
        let amplitude = -5.0 * PI * coeffs.sigma(region) + 2.0 * PI * PI / coeffs.mu(region);
        amplitude * (-5.0 * PI * t).exp() * (PI * x).sin() * (PI * y).sin()
    }
}

/// Assembles the discrete eddy-current system on a mesh: R the σ-mass over
/// the conductor, A the (1/μ)-stiffness (time-independent), f the manufactured
/// load, u₀ the Lagrange interpolant of the exact initial datum. The Gårding
/// constants are λ = 0 and α = 1/μ_max with the μ≡1 stiffness as X-norm Gram
/// matrix: A alone is coercive, so no step-size restriction applies.
pub fn build_eddy_system(mesh: &TriMesh, coeffs: Coefficients, dofmap: &DofMap) -> DegenerateSystem {
    let r = assemble_mass_conductor(mesh, &coeffs, dofmap);
    let a = assemble_stiffness(mesh, &coeffs, dofmap);
    let x_gram = assemble_stiffness(mesh, &Coefficients::new(1.0, 1.0), dofmap);
    let exact = ExactSolution::decaying_sine();
    let u0 = interpolate(mesh, dofmap, |x, y| exact.u(x, y, 0.0));
    let garding = GardingConstants::new(0.0, 1.0 / coeffs.mu_max());

    let source = manufactured_source(coeffs);
    let mesh_for_load = Arc::new(mesh.clone());
    let map_for_load = Arc::new(dofmap.clone());
    let f_of_t = move |t: f64| {
        assemble_load(&mesh_for_load, &map_for_load, &source, t)
            .expect("manufactured source is finite everywhere")
    };
    DegenerateSystem::new(r, move |_| a.clone(), f_of_t, u0, garding, x_gram)
}

/// Zero problem on the same operators: f ≡ 0 and u₀ = 0.
pub fn build_zero_system(mesh: &TriMesh, coeffs: Coefficients, dofmap: &DofMap) -> DegenerateSystem {
    let r = assemble_mass_conductor(mesh, &coeffs, dofmap);
    let a = assemble_stiffness(mesh, &coeffs, dofmap);
    let x_gram = assemble_stiffness(mesh, &Coefficients::new(1.0, 1.0), dofmap);
    let n = dofmap.n_dofs();
    let garding = GardingConstants::new(0.0, 1.0 / coeffs.mu_max());
    DegenerateSystem::new(r, move |_| a.clone(), move |_| vec![0.0; n], vec![0.0; n], garding, x_gram)
}

/// Fixed-width scientific notation with 6 significant digits: deterministic
/// and locale-independent.
pub fn fmt_sig6(v: f64) -> String {
    format!("{v:.5e}")
}

/// Runs the full convergence study: level k refines the level k−1 mesh (so
/// n = n0·2ᵏ), scales Δt per the configured regime, solves, measures the
/// three error functionals, and appends one CSV row per level. Rows are
/// flushed as they complete, so an aborted study leaves its finished levels
/// on disk. Slopes are fitted over the last max(2, levels−1) levels and
/// appended as comment lines.
pub fn run_convergence(cfg: &StudyConfig) -> Result<ErrorReport, StudyError> {
    cfg.validate()?;
    let coeffs = cfg.coefficients();
    let exact = ExactSolution::decaying_sine();

    let file = File::create(&cfg.output).map_err(io_err(&cfg.output))?;
    let mut out = BufWriter::new(file);
    let emit = |out: &mut BufWriter<File>, line: &str| -> Result<(), StudyError> {
        writeln!(out, "{line}").map_err(io_err(&cfg.output))?;
        out.flush().map_err(io_err(&cfg.output))
    };
    emit(&mut out, "level,h,dt,err_H_pct,err_E_pct,err_max_sigma")?;

    let mut mesh = generate_unit_square(cfg.n0, cfg.conductor_rect())?;
    let mut rows: Vec<LevelRow> = Vec::with_capacity(cfg.levels);
    for level in 0..cfg.levels {
        if level > 0 {
            mesh = mesh.refine_uniform();
        }
        let dofmap = DofMap::new(&mesh);
        let sys = build_eddy_system(&mesh, coeffs, &dofmap);
        let n_steps = cfg.steps_for(cfg.dt_scaling.dt_at_level(cfg.dt0, level));
        let traj = run(&sys, cfg.t_final, n_steps)?;

        let err_h = error_h_relative(&mesh, &dofmap, &coeffs, &traj, &exact)?;
        let err_e = error_e_relative(&mesh, &dofmap, &coeffs, &traj, &exact)?;
        let err_max = error_max_sigma(&mesh, &dofmap, &coeffs, &traj, &exact);
        let row = LevelRow {
            level,
            h: mesh.mesh_size(),
            dt: traj.dt(),
            err_h_pct: err_h.percent(),
            err_e_pct: err_e.percent(),
            err_max_sigma: err_max,
        };
        emit(
            &mut out,
            &format!(
                "{},{},{},{},{},{}",
                row.level,
                fmt_sig6(row.h),
                fmt_sig6(row.dt),
                fmt_sig6(row.err_h_pct),
                fmt_sig6(row.err_e_pct),
                fmt_sig6(row.err_max_sigma)
            ),
        )?;
        rows.push(row);
    }

    let (slope_h, slope_e) = if rows.len() >= 2 {
        let take = rows.len().saturating_sub(1).max(2).min(rows.len());
        let tail = &rows[rows.len() - take..];
        let pts_h: Vec<(f64, f64)> = tail.iter().map(|r| (r.h, r.err_h_pct)).collect();
        let pts_e: Vec<(f64, f64)> = tail.iter().map(|r| (r.h, r.err_e_pct)).collect();
        (Some(fit_slope(&pts_h)?), Some(fit_slope(&pts_e)?))
    } else {
        (None, None)
    };
    if let (Some(sh), Some(se)) = (slope_h, slope_e) {
        emit(&mut out, &format!("# slope_H={}", fmt_sig6(sh)))?;
        emit(&mut out, &format!("# slope_E={}", fmt_sig6(se)))?;
    }

    Ok(ErrorReport { rows, slope_h, slope_e })
}

/// Paths written by [`run_solve`].
#[derive(Debug, Clone)]
pub struct SolveOutputs {
    pub final_state: PathBuf,
    pub field_h: PathBuf,
    pub field_e: PathBuf,
    /// Present when per-step states were requested.
    pub states: Option<PathBuf>,
}

/// One solve on one mesh: either the manufactured problem or (with
/// `zero_problem`) the trivial one. Writes the final nodal state, the
/// reconstructed fields at the final step, and optionally every state.
pub fn run_solve(
    cfg: &StudyConfig,
    mesh_path: Option<&Path>,
    zero_problem: bool,
    dump_steps: bool,
    out_dir: &Path,
) -> Result<SolveOutputs, StudyError> {
    cfg.validate()?;
    let mesh = match mesh_path {
        Some(path) => TriMesh::load(path)?,
        None => generate_unit_square(cfg.n0, cfg.conductor_rect())?,
    };
    let coeffs = cfg.coefficients();
    let dofmap = DofMap::new(&mesh);
    let sys = if zero_problem {
        build_zero_system(&mesh, coeffs, &dofmap)
    } else {
        build_eddy_system(&mesh, coeffs, &dofmap)
    };
    let traj = run(&sys, cfg.t_final, cfg.steps_for(cfg.dt0))?;

    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let final_state = out_dir.join("final_state.csv");
    let field_h = out_dir.join("field_H.csv");
    let field_e = out_dir.join("field_E.csv");

    let write_file = |path: &Path, content: String| -> Result<(), StudyError> {
        std::fs::write(path, content).map_err(io_err(path))
    };

    let u_full = dofmap.expand(traj.final_state());
    let mut text = String::from("node,x,y,u\n");
    for (node, &[x, y]) in mesh.nodes().iter().enumerate() {
        text.push_str(&format!("{node},{},{},{}\n", fmt_sig6(x), fmt_sig6(y), fmt_sig6(u_full[node])));
    }
    write_file(&final_state, text)?;

    let h_field = reconstruct_h(&mesh, &dofmap, &coeffs, traj.final_state());
    let mut text = String::from("triangle,xc,yc,Hx,Hy\n");
    for (k, v) in h_field.iter().enumerate() {
        let c = mesh.triangle_coords(k);
        let xc = (c[0][0] + c[1][0] + c[2][0]) / 3.0;
        let yc = (c[0][1] + c[1][1] + c[2][1]) / 3.0;
        text.push_str(&format!(
            "{k},{},{},{},{}\n",
            fmt_sig6(xc),
            fmt_sig6(yc),
            fmt_sig6(v[0]),
            fmt_sig6(v[1])
        ));
    }
    write_file(&field_h, text)?;

    let n = traj.n_steps();
    let e_field = reconstruct_e(
        &dofmap.expand(traj.state(n)),
        &dofmap.expand(traj.state(n - 1)),
        traj.dt(),
    );
    let mut text = String::from("node,x,y,E\n");
    for (node, &[x, y]) in mesh.nodes().iter().enumerate() {
        text.push_str(&format!(
            "{node},{},{},{}\n",
            fmt_sig6(x),
            fmt_sig6(y),
            fmt_sig6(e_field[node])
        ));
    }
    write_file(&field_e, text)?;

    let states = if dump_steps {
        let path = out_dir.join("states.csv");
        let mut header = String::from("step,t");
        for node in 0..mesh.n_nodes() {
            header.push_str(&format!(",u{node}"));
        }
        header.push('\n');
        let mut text = header;
        for step in 0..=traj.n_steps() {
            let full = dofmap.expand(traj.state(step));
            text.push_str(&format!("{step},{}", fmt_sig6(traj.time(step))));
            for v in full {
                text.push_str(&format!(",{}", fmt_sig6(v)));
            }
            text.push('\n');
        }
        write_file(&path, text)?;
        Some(path)
    } else {
        None
    };

    Ok(SolveOutputs { final_state, field_h, field_e, states })
}

/// Four comma-separated reals, the CLI form of the conductor rectangle.
pub fn parse_rect(s: &str) -> Result<Rect, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 4 {
        return Err(format!("expected x0,y0,x1,y1 but got {} values", parts.len()));
    }
    let mut vals = [0.0f64; 4];
    for (slot, part) in vals.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse::<f64>()
            .map_err(|_| format!("invalid coordinate `{part}`"))?;
    }
    Ok(Rect::new(vals[0], vals[1], vals[2], vals[3]))
}
