//! P1 finite element operators on a [`TriMesh`]: stiffness with weight 1/μ,
//! the degenerate conductor mass with weight σ, quadrature-based load vectors,
//! Dirichlet elimination, Lagrange interpolation, and the H¹₀-orthogonal
//! projection.
//!
//! Homogeneous Dirichlet conditions are imposed by elimination: global
//! operators are indexed by interior degrees of freedom only, which keeps the
//! assembled matrices exactly symmetric and (semi)definite. Full-node variants
//! exist for the norm evaluations in [`crate::analysis`].
//!
//! Assembly is bitwise deterministic: local matrices are mirrored so
//! `local[i][j]` and `local[j][i]` are the same float, and duplicate triplet
//! accumulation follows element order, so transposed global entries sum the
//! same sequence of addends.

use thiserror::Error;

use crate::mesh::{signed_area, Region, TriMesh};
use crate::sparse::{solve_spd, CsrMatrix, SolveError, DEFAULT_MAX_ITER_PER_DOF, DEFAULT_RTOL};

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("triangle with non-positive area {area:e}")]
    DegenerateTriangle { area: f64 },
    #[error("source evaluated to a non-finite value at ({x}, {y})")]
    NonFiniteSource { x: f64, y: f64 },
}

/// Map between mesh nodes and interior degrees of freedom. Boundary nodes
/// carry no DOF (their value is pinned to zero); interior nodes are numbered
/// consecutively in node order.
#[derive(Debug, Clone)]
pub struct DofMap {
    interior_of_node: Vec<Option<usize>>,
    node_of_dof: Vec<usize>,
}

impl DofMap {
    pub fn new(mesh: &TriMesh) -> DofMap {
        let mut interior_of_node = Vec::with_capacity(mesh.n_nodes());
        let mut node_of_dof = Vec::new();
        for node in 0..mesh.n_nodes() {
            if mesh.is_boundary(node) {
                interior_of_node.push(None);
            } else {
                interior_of_node.push(Some(node_of_dof.len()));
                node_of_dof.push(node);
            }
        }
        DofMap { interior_of_node, node_of_dof }
    }

    pub fn n_dofs(&self) -> usize {
        self.node_of_dof.len()
    }

    pub fn interior_of(&self, node: usize) -> Option<usize> {
        self.interior_of_node[node]
    }

    pub fn node_of(&self, dof: usize) -> usize {
        self.node_of_dof[dof]
    }

    /// Interior vector → full nodal vector with zeros on the boundary.
    pub fn expand(&self, interior: &[f64]) -> Vec<f64> {
        assert_eq!(interior.len(), self.n_dofs(), "expand dimension mismatch");
        let mut full = vec![0.0; self.interior_of_node.len()];
        for (dof, &node) in self.node_of_dof.iter().enumerate() {
            full[node] = interior[dof];
        }
        full
    }

    /// Full nodal vector → interior vector (boundary values dropped).
    pub fn restrict(&self, nodal: &[f64]) -> Vec<f64> {
        assert_eq!(nodal.len(), self.interior_of_node.len(), "restrict dimension mismatch");
        self.node_of_dof.iter().map(|&node| nodal[node]).collect()
    }
}

/// Per-region material constants. σ is strictly positive on the conductor and
/// exactly zero on the dielectric; that vanishing is the degeneracy the whole
/// scheme is built around.
#[derive(Debug, Clone, Copy)]
pub struct Coefficients {
    mu_conductor: f64,
    mu_dielectric: f64,
    sigma_conductor: f64,
}

impl Coefficients {
    /// Single permeability for both regions, as in the eddy-current
    /// experiment (μ = μ₀ everywhere).
    pub fn new(mu: f64, sigma_conductor: f64) -> Coefficients {
        Coefficients::per_region(mu, mu, sigma_conductor)
    }

    pub fn per_region(mu_conductor: f64, mu_dielectric: f64, sigma_conductor: f64) -> Coefficients {
        assert!(mu_conductor > 0.0 && mu_dielectric > 0.0, "mu must be positive");
        assert!(sigma_conductor > 0.0, "conductor sigma must be positive");
        Coefficients { mu_conductor, mu_dielectric, sigma_conductor }
    }

    pub fn mu(&self, region: Region) -> f64 {
        match region {
            Region::Conductor => self.mu_conductor,
            Region::Dielectric => self.mu_dielectric,
        }
    }

    pub fn sigma(&self, region: Region) -> f64 {
        match region {
            Region::Conductor => self.sigma_conductor,
            Region::Dielectric => 0.0,
        }
    }

    pub fn mu_max(&self) -> f64 {
        self.mu_conductor.max(self.mu_dielectric)
    }
}

/// Area and the constant barycentric gradients ∇φ₀, ∇φ₁, ∇φ₂ of a triangle.
pub(crate) fn p1_gradients(
    coords: &[[f64; 2]; 3],
) -> Result<(f64, [[f64; 2]; 3]), AssemblyError> {
    let area = signed_area(coords);
    if area <= 0.0 || !area.is_finite() {
        return Err(AssemblyError::DegenerateTriangle { area });
    }
    let [[x0, y0], [x1, y1], [x2, y2]] = *coords;
    let inv = 1.0 / (2.0 * area);
    let grads = [
        [(y1 - y2) * inv, (x2 - x1) * inv],
        [(y2 - y0) * inv, (x0 - x2) * inv],
        [(y0 - y1) * inv, (x1 - x0) * inv],
    ];
    Ok((area, grads))
}

/// Midpoints of edges (0,1), (1,2), (2,0): the degree-2 exact quadrature
/// points with equal weights area/3.
pub(crate) fn edge_midpoints(coords: &[[f64; 2]; 3]) -> [[f64; 2]; 3] {
    let [[x0, y0], [x1, y1], [x2, y2]] = *coords;
    [
        [0.5 * (x0 + x1), 0.5 * (y0 + y1)],
        [0.5 * (x1 + x2), 0.5 * (y1 + y2)],
        [0.5 * (x2 + x0), 0.5 * (y2 + y0)],
    ]
}

/// `PHI_AT_MIDPOINTS[m][i]` is φ_i evaluated at the m-th edge midpoint.
pub(crate) const PHI_AT_MIDPOINTS: [[f64; 3]; 3] =
    [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]];

/// Element stiffness K_ij = (area/μ)·∇φ_i·∇φ_j. Symmetric with zero row sums
/// (the barycentric gradients sum to zero).
pub fn local_stiffness(
    coords: &[[f64; 2]; 3],
    mu_value: f64,
) -> Result<[[f64; 3]; 3], AssemblyError> {
    assert!(mu_value > 0.0, "mu must be positive");
    let (area, grads) = p1_gradients(coords)?;
    let scale = area / mu_value;
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in i..3 {
            let v = scale * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]);
            k[i][j] = v;
            k[j][i] = v;
        }
    }
    Ok(k)
}

/// Element mass M = (σ·area/12)·[[2,1,1],[1,2,1],[1,1,2]], the exact P1×P1
/// integral. σ = 0 yields the zero matrix.
pub fn local_mass(
    coords: &[[f64; 2]; 3],
    sigma_value: f64,
) -> Result<[[f64; 3]; 3], AssemblyError> {
    assert!(sigma_value >= 0.0, "sigma must be nonnegative");
    let area = signed_area(coords);
    if area <= 0.0 || !area.is_finite() {
        return Err(AssemblyError::DegenerateTriangle { area });
    }
    let off = sigma_value * area / 12.0;
    let diag = 2.0 * off;
    Ok([[diag, off, off], [off, diag, off], [off, off, diag]])
}

/// Element load bᵢ = (area/3)·Σ_m J(m)·φ_i(m) over the three edge midpoints.
/// Exact whenever J·φ_i is a polynomial of total degree ≤ 2, hence for J of
/// degree ≤ 1.
pub fn local_load(
    coords: &[[f64; 2]; 3],
    j_at_midpoints: [f64; 3],
) -> Result<[f64; 3], AssemblyError> {
    let area = signed_area(coords);
    if area <= 0.0 || !area.is_finite() {
        return Err(AssemblyError::DegenerateTriangle { area });
    }
    let w = area / 3.0;
    let mut b = [0.0; 3];
    for (m, &jm) in j_at_midpoints.iter().enumerate() {
        for i in 0..3 {
            b[i] += w * jm * PHI_AT_MIDPOINTS[m][i];
        }
    }
    Ok(b)
}

/// Scatters per-element 3×3 blocks into a global matrix. `dofmap = None`
/// assembles over all nodes (no boundary elimination).
fn assemble_matrix(
    mesh: &TriMesh,
    dofmap: Option<&DofMap>,
    mut local_of: impl FnMut(usize) -> Option<[[f64; 3]; 3]>,
) -> CsrMatrix {
    let n = dofmap.map_or(mesh.n_nodes(), DofMap::n_dofs);
    let index_of = |node: usize| match dofmap {
        Some(map) => map.interior_of(node),
        None => Some(node),
    };
    let mut triplets = Vec::new();
    for k in 0..mesh.n_triangles() {
        let Some(local) = local_of(k) else { continue };
        let tri = mesh.triangle(k);
        for i in 0..3 {
            let Some(p) = index_of(tri[i]) else { continue };
            for j in 0..3 {
                let Some(q) = index_of(tri[j]) else { continue };
                triplets.push((p, q, local[i][j]));
            }
        }
    }
    CsrMatrix::from_triplets(n, &triplets)
}

/// Stiffness over interior DOFs: entry (p,q) = ∫_Ω (1/μ)∇φ_p·∇φ_q. Symmetric
/// positive definite.
pub fn assemble_stiffness(mesh: &TriMesh, coeffs: &Coefficients, dofmap: &DofMap) -> CsrMatrix {
    assemble_matrix(mesh, Some(dofmap), |k| {
        Some(
            local_stiffness(&mesh.triangle_coords(k), coeffs.mu(mesh.region(k)))
                .expect("mesh guarantees positive areas"),
        )
    })
}

/// Stiffness over all nodes, used by the energy-norm evaluations.
pub fn assemble_stiffness_full(mesh: &TriMesh, coeffs: &Coefficients) -> CsrMatrix {
    assemble_matrix(mesh, None, |k| {
        Some(
            local_stiffness(&mesh.triangle_coords(k), coeffs.mu(mesh.region(k)))
                .expect("mesh guarantees positive areas"),
        )
    })
}

/// Conductor mass over interior DOFs: entry (p,q) = ∫_{Ω_c} σ φ_p φ_q.
/// Symmetric positive SEMIdefinite; rows of DOFs whose support misses the
/// conductor are identically zero. This matrix is the degenerate operator R.
pub fn assemble_mass_conductor(mesh: &TriMesh, coeffs: &Coefficients, dofmap: &DofMap) -> CsrMatrix {
    assemble_matrix(mesh, Some(dofmap), |k| match mesh.region(k) {
        Region::Conductor => Some(
            local_mass(&mesh.triangle_coords(k), coeffs.sigma(Region::Conductor))
                .expect("mesh guarantees positive areas"),
        ),
        Region::Dielectric => None,
    })
}

/// Conductor mass over all nodes, the Gram matrix of the σ-weighted norm.
pub fn assemble_mass_conductor_full(mesh: &TriMesh, coeffs: &Coefficients) -> CsrMatrix {
    assemble_matrix(mesh, None, |k| match mesh.region(k) {
        Region::Conductor => Some(
            local_mass(&mesh.triangle_coords(k), coeffs.sigma(Region::Conductor))
                .expect("mesh guarantees positive areas"),
        ),
        Region::Dielectric => None,
    })
}

/// Load vector b_p = ∫_Ω J(·,t)·φ_p by the edge-midpoint rule. The source is
/// told which region the evaluation point belongs to, so discontinuous
/// sources (σ jumps at the conductor boundary) are integrated with the value
/// that is correct for the element at hand rather than a pointwise guess.
pub fn assemble_load(
    mesh: &TriMesh,
    dofmap: &DofMap,
    source: impl Fn(f64, f64, Region, f64) -> f64,
    t: f64,
) -> Result<Vec<f64>, AssemblyError> {
    let mut b = vec![0.0; dofmap.n_dofs()];
    for k in 0..mesh.n_triangles() {
        let coords = mesh.triangle_coords(k);
        let region = mesh.region(k);
        let mids = edge_midpoints(&coords);
        let mut j_vals = [0.0; 3];
        for (m, &[x, y]) in mids.iter().enumerate() {
            let v = source(x, y, region, t);
            if !v.is_finite() {
                return Err(AssemblyError::NonFiniteSource { x, y });
            }
            j_vals[m] = v;
        }
        let local = local_load(&coords, j_vals).expect("mesh guarantees positive areas");
        let tri = mesh.triangle(k);
        for i in 0..3 {
            if let Some(p) = dofmap.interior_of(tri[i]) {
                b[p] += local[i];
            }
        }
    }
    Ok(b)
}

/// Lagrange interpolant coefficients: g evaluated at interior nodes. Boundary
/// values are dropped, so g should (approximately) vanish on ∂Ω.
pub fn interpolate(mesh: &TriMesh, dofmap: &DofMap, g: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    (0..dofmap.n_dofs())
        .map(|dof| {
            let [x, y] = mesh.node(dofmap.node_of(dof));
            g(x, y)
        })
        .collect()
}

/// Right-hand side of the H¹₀ projection: b_p = ∫_Ω ∇g·∇φ_p by the
/// edge-midpoint rule (∇φ_p is constant per element).
pub fn h1_gradient_load(
    mesh: &TriMesh,
    dofmap: &DofMap,
    grad_g: impl Fn(f64, f64) -> [f64; 2],
) -> Vec<f64> {
    let mut b = vec![0.0; dofmap.n_dofs()];
    for k in 0..mesh.n_triangles() {
        let coords = mesh.triangle_coords(k);
        let (area, grads) = p1_gradients(&coords).expect("mesh guarantees positive areas");
        let mids = edge_midpoints(&coords);
        let mut gsum = [0.0; 2];
        for &[x, y] in &mids {
            let g = grad_g(x, y);
            gsum[0] += g[0];
            gsum[1] += g[1];
        }
        let w = area / 3.0;
        let tri = mesh.triangle(k);
        for i in 0..3 {
            if let Some(p) = dofmap.interior_of(tri[i]) {
                b[p] += w * (gsum[0] * grads[i][0] + gsum[1] * grads[i][1]);
            }
        }
    }
    b
}

/// Coefficients of Π_h g, the (∇·,∇·)-orthogonal projection of g onto the
/// interior P1 space: one SPD solve of S·x = (∇g, ∇φ) with S the μ≡1
/// stiffness.
pub fn h1_projection(
    mesh: &TriMesh,
    dofmap: &DofMap,
    stiffness_unit: &CsrMatrix,
    grad_g: impl Fn(f64, f64) -> [f64; 2],
) -> Result<Vec<f64>, SolveError> {
    let rhs = h1_gradient_load(mesh, dofmap, grad_g);
    solve_spd(stiffness_unit, &rhs, DEFAULT_RTOL, DEFAULT_MAX_ITER_PER_DOF * stiffness_unit.n())
}
