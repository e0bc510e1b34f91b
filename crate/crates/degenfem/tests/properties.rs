//! Randomized structural invariants: mesh generation and refinement, the
//! mesh file round trip, CG residual guarantees, and slope fitting.

use degenfem::analysis::fit_slope;
use degenfem::mesh::{generate_unit_square, signed_area, Rect, Region, TriMesh};
use degenfem::sparse::{solve_spd, CsrMatrix, DEFAULT_MAX_ITER_PER_DOF, DEFAULT_RTOL};
use proptest::prelude::*;

/// Grid cell ranges i0 < i1, j0 < j1 in {0, ..., n}, so the resulting
/// rectangle always lands on grid lines and `generate_unit_square` accepts it.
fn mesh_params() -> impl Strategy<Value = (usize, Option<(usize, usize, usize, usize)>)> {
    (2usize..=9).prop_flat_map(|n| {
        let cell = (0..n, 0..n).prop_flat_map(move |(i0, j0)| {
            ((i0 + 1)..=n, (j0 + 1)..=n).prop_map(move |(i1, j1)| (i0, j0, i1, j1))
        });
        (Just(n), proptest::option::of(cell))
    })
}

/// Builds the mesh for `mesh_params` output and returns it with the exact
/// conductor area implied by the chosen cell range.
fn build_mesh(n: usize, cell: Option<(usize, usize, usize, usize)>) -> (TriMesh, f64) {
    let s = n as f64;
    let rect = cell.map(|(i0, j0, i1, j1)| {
        Rect::new(i0 as f64 / s, j0 as f64 / s, i1 as f64 / s, j1 as f64 / s)
    });
    let conductor_area = rect.map_or(0.0, |r| (r.x1 - r.x0) * (r.y1 - r.y0));
    let mesh = generate_unit_square(n, rect).expect("grid-aligned rectangle");
    (mesh, conductor_area)
}

fn region_area(mesh: &TriMesh, region: Region) -> f64 {
    (0..mesh.n_triangles())
        .filter(|&k| mesh.region(k) == region)
        .map(|k| signed_area(&mesh.triangle_coords(k)))
        .sum()
}

proptest! {
    /// Triangle areas partition the unit square, and the conductor triangles
    /// cover exactly the requested rectangle.
    #[test]
    fn mesh_areas_partition_unit_square((n, cell) in mesh_params()) {
        let (mesh, conductor_area) = build_mesh(n, cell);
        let total = region_area(&mesh, Region::Conductor) + region_area(&mesh, Region::Dielectric);
        prop_assert!((total - 1.0).abs() <= 1e-12, "total area {total}");
        let got = region_area(&mesh, Region::Conductor);
        prop_assert!(
            (got - conductor_area).abs() <= 1e-12,
            "conductor area {got}, expected {conductor_area}"
        );
    }

    /// Refinement splits every triangle into four children with the parent's
    /// region tag: counts quadruple, per-region areas are conserved, and all
    /// children stay counterclockwise (positive signed area).
    #[test]
    fn refinement_conserves_regions_and_orientation((n, cell) in mesh_params()) {
        let (coarse, _) = build_mesh(n, cell);
        let fine = coarse.refine_uniform();

        prop_assert_eq!(fine.n_triangles(), 4 * coarse.n_triangles());
        for region in [Region::Conductor, Region::Dielectric] {
            let before = region_area(&coarse, region);
            let after = region_area(&fine, region);
            prop_assert!((before - after).abs() <= 1e-12, "area changed: {before} -> {after}");
        }
        for k in 0..fine.n_triangles() {
            prop_assert!(signed_area(&fine.triangle_coords(k)) > 0.0);
        }
        let ratio = fine.mesh_size() / coarse.mesh_size();
        prop_assert!((ratio - 0.5).abs() <= 1e-12, "mesh size ratio {ratio}");
    }

    /// Save followed by load reproduces the mesh exactly; coordinates are
    /// written with enough digits to round-trip every f64.
    #[test]
    fn mesh_file_round_trip_is_identity((n, cell) in mesh_params()) {
        let (mesh, _) = build_mesh(n, cell);
        let file = tempfile::NamedTempFile::new().expect("temp file");
        mesh.save(file.path()).expect("save");
        let loaded = TriMesh::load(file.path()).expect("load");
        prop_assert_eq!(mesh, loaded);
    }

    /// CG leaves a true residual within the advertised tolerance on random
    /// diagonally dominant SPD systems. The stopping test uses the recurrence
    /// residual, so allow a small drift factor over `DEFAULT_RTOL`.
    #[test]
    fn cg_meets_residual_tolerance(
        dim in 1usize..20,
        raw in proptest::collection::vec(-1.0f64..1.0, 400),
        b_raw in proptest::collection::vec(-1.0f64..1.0, 20),
    ) {
        let mut triplets = Vec::new();
        let mut row_sums = vec![0.0f64; dim];
        for i in 0..dim {
            for j in (i + 1)..dim {
                let v = raw[i * dim + j];
                triplets.push((i, j, v));
                triplets.push((j, i, v));
                row_sums[i] += v.abs();
                row_sums[j] += v.abs();
            }
        }
        for (i, s) in row_sums.iter().enumerate() {
            triplets.push((i, i, s + 1.0));
        }
        let m = CsrMatrix::from_triplets(dim, &triplets);
        let b = &b_raw[..dim];

        let x = solve_spd(&m, b, DEFAULT_RTOL, DEFAULT_MAX_ITER_PER_DOF * dim).expect("solve");
        let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let residual = m
            .spmv(&x)
            .iter()
            .zip(b)
            .map(|(mx, bi)| (mx - bi) * (mx - bi))
            .sum::<f64>()
            .sqrt();
        prop_assert!(
            residual <= 10.0 * DEFAULT_RTOL * b_norm.max(f64::MIN_POSITIVE),
            "residual {residual:e} vs ||b|| {b_norm:e}"
        );
    }

    /// The quadratic form agrees with a dense double loop on random
    /// symmetric matrices (up to accumulation order).
    #[test]
    fn quadratic_form_matches_dense_loop(
        dim in 1usize..12,
        raw in proptest::collection::vec(-1.0f64..1.0, 144),
        v_raw in proptest::collection::vec(-1.0f64..1.0, 12),
    ) {
        let mut triplets = Vec::new();
        for i in 0..dim {
            for j in 0..dim {
                let v = raw[i.min(j) * dim + i.max(j)];
                triplets.push((i, j, v));
            }
        }
        let m = CsrMatrix::from_triplets(dim, &triplets);
        let v = &v_raw[..dim];
        let mut direct = 0.0;
        for i in 0..dim {
            for j in 0..dim {
                direct += v[i] * m.get(i, j) * v[j];
            }
        }
        let form = m.quadratic_form(v);
        prop_assert!((form - direct).abs() <= 1e-12 * (1.0 + direct.abs()));
    }

    /// Fitting log e against log h on exact power-law data recovers the
    /// exponent, independent of the amplitude.
    #[test]
    fn fit_slope_recovers_power_law(
        slope in -2.5f64..2.5,
        amplitude in 0.01f64..100.0,
        n_points in 2usize..7,
    ) {
        let points: Vec<(f64, f64)> = (0..n_points)
            .map(|k| {
                let h = 0.5f64.powi(k as i32);
                (h, amplitude * h.powf(slope))
            })
            .collect();
        let fitted = fit_slope(&points).expect("well-posed fit");
        prop_assert!((fitted - slope).abs() <= 1e-8, "fitted {fitted}, expected {slope}");

        let rescaled: Vec<(f64, f64)> = points.iter().map(|&(h, e)| (h, 10.0 * e)).collect();
        let refitted = fit_slope(&rescaled).expect("well-posed fit");
        prop_assert!((refitted - fitted).abs() <= 1e-9);
    }
}
