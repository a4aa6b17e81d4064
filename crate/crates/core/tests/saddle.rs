use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use std::f64::consts::PI;
use std::sync::Arc;
use vvda::assembly::*;
use vvda::diagnostics::{fit_rates, l2_error};
use vvda::femspace::{BcMode, Field, FunctionSpace};
use vvda::linsolve::{solve_saddle, solve_scalar, solve_spd, SaddleSystem};
use vvda::mesh::{coarse_partition, generate_structured, Coarse, Rect};
use vvda::sparse::SparseMatrix;

const NU: f64 = 1.0;

fn exact_u(x: f64, y: f64) -> [f64; 2] {
    [(PI * y).cos(), (PI * x).sin()]
}

/// Steady Stokes-plus-reaction system `(M + nu K + mu N) v - B^T p = f`, `B v = 0`,
/// with strong boundary values eliminated from A and B.
fn stokes_system(n: usize, mu: f64) -> (SaddleSystem, Arc<FunctionSpace>) {
    let mesh = Arc::new(generate_structured(n, Rect::unit_square(), false).unwrap());
    let vel = Arc::new(FunctionSpace::new(mesh.clone(), 2, 2, BcMode::Dirichlet, false).unwrap());
    let pres = Arc::new(FunctionSpace::new(mesh.clone(), 1, 1, BcMode::None, true).unwrap());
    let mut a = sum(&assemble_mass(&vel), &assemble_stiffness(&vel), NU);
    let mut f = assemble_forcing(
        &vel,
        &|x, y, _| {
            let u = exact_u(x, y);
            let g = (x + y).cos();
            [(1.0 + NU * PI * PI) * u[0] + g, (1.0 + NU * PI * PI) * u[1] + g]
        },
        0.0,
    );
    if mu > 0.0 {
        let part = coarse_partition(&mesh, Coarse::Same).unwrap();
        let op = build_nudge(&part, vel.clone()).unwrap();
        let truth = Field::interpolate(vel.clone(), exact_u);
        // observe the interpolant's coarse means
        let obs = op.cell_means(&truth);
        let nm = assemble_nudge_matrix(&op, mu).unwrap();
        a = sum(&a, &nm, 1.0);
        for (x, r) in f.iter_mut().zip(assemble_nudge_rhs(&op, mu, &obs).unwrap()) {
            *x += r;
        }
    }
    let g = Field::interpolate(vel.clone(), exact_u).coeffs;
    let mut b = assemble_divergence(&vel, &pres).unwrap();
    let bd = vel.boundary_dofs();
    let mut is_bd = vec![false; vel.dof_count()];
    bd.iter().for_each(|&d| is_bd[d] = true);
    let mut rhs_p = vec![0.0; pres.dof_count()];
    let dense_b = b.to_dense();
    for q in 0..pres.dof_count() {
        for &j in &bd {
            let v = dense_b[(q, j)];
            if v != 0.0 {
                rhs_p[q] -= v * g[j];
                b.add(q, j, -v);
            }
        }
    }
    let dense_a = a.to_dense();
    let mut trip = Vec::new();
    for i in 0..vel.dof_count() {
        if is_bd[i] {
            trip.push((i, i, dense_a[(i, i)]));
            f[i] = dense_a[(i, i)] * g[i];
            continue;
        }
        for j in 0..vel.dof_count() {
            let v = dense_a[(i, j)];
            if v == 0.0 {
                continue;
            }
            if is_bd[j] {
                f[i] -= v * g[j];
            } else {
                trip.push((i, j, v));
            }
        }
    }
    let a = SparseMatrix::from_triplets(vel.dof_count(), vel.dof_count(), &trip).unwrap();
    let m = assemble_forcing(&pres, &|_, _, _| [1.0, 0.0], 0.0);
    (SaddleSystem { a, b, mean_weights: m, rhs_v: f, rhs_p }, vel)
}

/// `a + s b` for matrices with different sparsity patterns.
fn sum(a: &SparseMatrix, b: &SparseMatrix, s: f64) -> SparseMatrix {
    let mut t = Vec::new();
    for (m, s) in [(a, 1.0), (b, s)] {
        let d = m.to_dense();
        for i in 0..d.nrows() {
            for j in 0..d.ncols() {
                if d[(i, j)] != 0.0 {
                    t.push((i, j, s * d[(i, j)]));
                }
            }
        }
    }
    SparseMatrix::from_triplets(a.nrows(), a.ncols(), &t).unwrap()
}

/// Dense solve of the bordered system, the reference for the sparse path.
fn dense_bordered(sys: &SaddleSystem) -> DVector<f64> {
    let (nv, np) = (sys.a.nrows(), sys.b.nrows());
    let n = nv + np + 1;
    let mut k = DMatrix::zeros(n, n);
    let (a, b) = (sys.a.to_dense(), sys.b.to_dense());
    k.view_mut((0, 0), (nv, nv)).copy_from(&a);
    k.view_mut((nv, 0), (np, nv)).copy_from(&(-&b));
    k.view_mut((0, nv), (nv, np)).copy_from(&(-b.transpose()));
    for q in 0..np {
        k[(nv + q, n - 1)] = sys.mean_weights[q];
        k[(n - 1, nv + q)] = sys.mean_weights[q];
    }
    let mut rhs = DVector::zeros(n);
    rhs.rows_mut(0, nv).copy_from_slice(&sys.rhs_v);
    for q in 0..np {
        rhs[nv + q] = -sys.rhs_p[q];
    }
    k.lu().solve(&rhs).unwrap()
}

#[test]
fn stokes_rates_are_third_order() {
    let mut rows = Vec::new();
    for n in [4, 8, 16] {
        let (sys, vel) = stokes_system(n, 0.0);
        let sol = solve_saddle(&sys).unwrap();
        assert!(sol.divergence_residual <= 1e-10 * sys.b.max_abs());
        let v = Field::from_coeffs(vel, sol.velocity).unwrap();
        let e = l2_error(&v, &exact_u);
        rows.push((1.0 / n as f64, e, e));
    }
    let table = fit_rates(&rows).unwrap();
    for r in &table.rows[1..] {
        let rate = r.rate_v.unwrap();
        assert!((2.7..=3.3).contains(&rate), "{rows:?}");
    }
}

#[test]
fn nudged_solve_keeps_divergence_free() {
    let (sys, _) = stokes_system(8, 1e3);
    let sol = solve_saddle(&sys).unwrap();
    assert!(sol.divergence_residual <= 1e-10, "{}", sol.divergence_residual);
}

#[test]
fn sparse_saddle_matches_dense_bordered_solve() {
    let (sys, _) = stokes_system(4, 10.0);
    let sol = solve_saddle(&sys).unwrap();
    let x = dense_bordered(&sys);
    let nv = sys.a.nrows();
    let dv = (0..nv).map(|i| (sol.velocity[i] - x[i]).abs()).fold(0.0, f64::max);
    let dp = sol.pressure.iter().enumerate().map(|(q, p)| (p - x[nv + q]).abs()).fold(0.0, f64::max);
    assert!(dv < 1e-10 && dp < 1e-9, "{dv:e} {dp:e}");
    assert!((sol.multiplier - x[x.len() - 1]).abs() < 1e-9);
}

#[test]
fn saddle_with_net_flux_and_free_boundary_matches_dense() {
    // no boundary elimination: B^T 1 != 0, so the bordered path is taken
    let mesh = Arc::new(generate_structured(3, Rect::unit_square(), false).unwrap());
    let vel = FunctionSpace::new(mesh.clone(), 2, 2, BcMode::None, false).unwrap();
    let pres = FunctionSpace::new(mesh.clone(), 1, 1, BcMode::None, true).unwrap();
    let a = sum(&assemble_mass(&vel), &assemble_stiffness(&vel), 1.0);
    let rhs_v = assemble_forcing(&vel, &|x, y, _| [y.sin(), x * x], 0.0);
    let b = assemble_divergence(&vel, &pres).unwrap();
    let rhs_p: Vec<f64> = (0..pres.dof_count()).map(|q| 0.01 * q as f64).collect();
    let m = assemble_forcing(&pres, &|_, _, _| [1.0, 0.0], 0.0);
    let sys = SaddleSystem { a, b, mean_weights: m, rhs_v, rhs_p };
    let sol = solve_saddle(&sys).unwrap();
    let x = dense_bordered(&sys);
    let nv = sys.a.nrows();
    let dv = (0..nv).map(|i| (sol.velocity[i] - x[i]).abs()).fold(0.0, f64::max);
    assert!(dv < 1e-10, "{dv:e}");
    assert!((sol.multiplier - x[x.len() - 1]).abs() < 1e-9);
}

fn spd(n: usize, seed: Vec<f64>) -> (SparseMatrix, DMatrix<f64>) {
    let g = DMatrix::from_vec(n, n, seed);
    let d = &g * g.transpose() + DMatrix::identity(n, n) * n as f64;
    let mut t = Vec::new();
    for i in 0..n {
        for j in 0..n {
            t.push((i, j, d[(i, j)]));
        }
    }
    (SparseMatrix::from_triplets(n, n, &t).unwrap().with_symmetry_flag(true), d)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn random_spd_matches_dense_oracle(seed in prop::collection::vec(-1.0..1.0f64, 2500), rhs in prop::collection::vec(-1.0..1.0f64, 50)) {
        let (a, d) = spd(50, seed);
        let x_ref = d.clone().cholesky().unwrap().solve(&DVector::from_vec(rhs.clone()));
        for x in [solve_spd(&a, &rhs).unwrap(), solve_scalar(&a, &rhs).unwrap()] {
            let err = (DVector::from_vec(x) - &x_ref).amax() / x_ref.amax();
            prop_assert!(err < 1e-12);
        }
    }
}
