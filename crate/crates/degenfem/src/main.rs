use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use degenfem::mesh::{generate_unit_square, Rect};
use degenfem::study::{
    fmt_sig6, parse_rect, run_convergence, run_solve, DtScaling, StudyConfig, StudyError,
};

#[derive(Parser)]
#[command(
    name = "degenfem",
    version,
    about = "P1 finite elements with backward Euler for the degenerate eddy-current problem"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a structured unit-square mesh with an optional conductor rectangle
    MeshGen {
        /// Grid resolution: n×n cells, 2n² triangles
        #[arg(long)]
        n: usize,
        /// Conductor rectangle x0,y0,x1,y1 with corners on the grid; omit for all-dielectric
        #[arg(long, value_parser = parse_rect)]
        conductor: Option<Rect>,
        /// Output mesh file
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve the eddy-current problem once and dump the final state and fields
    Solve {
        /// JSON config file; built-in defaults apply when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// Mesh file to solve on (defaults to the freshly generated base mesh)
        #[arg(long)]
        mesh: Option<PathBuf>,
        /// Solve the zero problem (zero source, zero initial datum)
        #[arg(long)]
        zero: bool,
        /// Also dump every intermediate state to states.csv
        #[arg(long)]
        dump_steps: bool,
        /// Output directory
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run the refinement study and write the convergence CSV
    Convergence {
        /// JSON config file; built-in defaults apply when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the number of refinement levels
        #[arg(long)]
        levels: Option<usize>,
        /// Override the time-step scaling: linear, quadratic or fixed
        #[arg(long, value_parser = parse_dt_scaling)]
        dt_scaling: Option<DtScaling>,
        /// Override the CSV output path
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_dt_scaling(s: &str) -> Result<DtScaling, String> {
    s.parse()
}

fn load_config(path: Option<&PathBuf>) -> Result<StudyConfig, StudyError> {
    match path {
        Some(p) => StudyConfig::from_json_file(p),
        None => Ok(StudyConfig::default()),
    }
}

fn run_command(cmd: Command) -> Result<(), StudyError> {
    match cmd {
        Command::MeshGen { n, conductor, out } => {
            let mesh = generate_unit_square(n, conductor)?;
            mesh.save(&out)?;
            println!(
                "wrote {} ({} nodes, {} triangles, h = {})",
                out.display(),
                mesh.n_nodes(),
                mesh.n_triangles(),
                fmt_sig6(mesh.mesh_size())
            );
            Ok(())
        }
        Command::Solve { config, mesh, zero, dump_steps, out } => {
            let cfg = load_config(config.as_ref())?;
            let outputs = run_solve(&cfg, mesh.as_deref(), zero, dump_steps, &out)?;
            println!("wrote {}", outputs.final_state.display());
            println!("wrote {}", outputs.field_h.display());
            println!("wrote {}", outputs.field_e.display());
            if let Some(states) = &outputs.states {
                println!("wrote {}", states.display());
            }
            Ok(())
        }
        Command::Convergence { config, levels, dt_scaling, out } => {
            let mut cfg = load_config(config.as_ref())?;
            if let Some(levels) = levels {
                cfg.levels = levels;
            }
            if let Some(scaling) = dt_scaling {
                cfg.dt_scaling = scaling;
            }
            if let Some(out) = out {
                cfg.output = out;
            }
            let report = run_convergence(&cfg)?;
            for row in &report.rows {
                println!(
                    "level {}: h = {}, dt = {}, err_H = {}%, err_E = {}%, err_max_sigma = {}",
                    row.level,
                    fmt_sig6(row.h),
                    fmt_sig6(row.dt),
                    fmt_sig6(row.err_h_pct),
                    fmt_sig6(row.err_e_pct),
                    fmt_sig6(row.err_max_sigma)
                );
            }
            if let (Some(sh), Some(se)) = (report.slope_h, report.slope_e) {
                println!("slope_H = {}, slope_E = {}", fmt_sig6(sh), fmt_sig6(se));
            }
            println!("wrote {}", cfg.output.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run_command(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
