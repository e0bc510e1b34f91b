//! Backward Euler P1 finite elements for degenerate parabolic evolutions
//! d/dt(Ru) + A(t)u = f, where R is only positive semidefinite, instantiated
//! on the 2D eddy-current model: a conducting rectangle (σ > 0) inside a
//! dielectric (σ = 0) on the unit square.
//!
//! Module layout:
//! - [`mesh`]: structured, conforming triangulations with conductor tags.
//! - [`sparse`]: CSR matrices and the Jacobi-preconditioned CG solver.
//! - [`assembly`]: P1 operators (stiffness, degenerate mass, loads) with
//!   Dirichlet elimination.
//! - [`stepper`]: the abstract backward Euler scheme and its Gårding-based
//!   solvability certificate.
//! - [`analysis`]: weighted norms, field reconstruction, error functionals,
//!   slope fitting.
//! - [`study`]: the manufactured eddy-current experiment and the convergence
//!   study driver behind the `degenfem` binary.

pub mod analysis;
pub mod assembly;
pub mod mesh;
pub mod sparse;
pub mod stepper;
pub mod study;
