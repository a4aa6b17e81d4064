//! Dense brute-force assembly used as an oracle for the sparse assemblers.
//!
//! Basis functions come from a Vandermonde solve on the physical element
//! nodes and integrals from collapsed Gauss-Legendre quadrature, so nothing
//! here shares code with the library's reference-element machinery.
#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};
use std::sync::Arc;
use vvda::femspace::{BcMode, Field, FunctionSpace};
use vvda::mesh::{generate_structured, Mesh, Rect};

/// Gauss-Legendre nodes and weights on [0, 1] (Golub-Welsch).
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut j = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = k as f64 / ((4 * k * k - 1) as f64).sqrt();
        j[(k, k - 1)] = b;
        j[(k - 1, k)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut out: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v = eig.eigenvectors[(0, i)];
            (0.5 * (eig.eigenvalues[i] + 1.0), v * v)
        })
        .collect();
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    out
}

/// Collapsed (Duffy) rule on the physical triangle: (point, weight).
pub fn triangle_rule(p: [[f64; 2]; 3], n: usize) -> Vec<([f64; 2], f64)> {
    let g = gauss_legendre(n);
    let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    let mut out = Vec::new();
    for &(u, wu) in &g {
        for &(v, wv) in &g {
            let (xi, eta) = (u, v * (1.0 - u));
            let x = p[0][0] + xi * (p[1][0] - p[0][0]) + eta * (p[2][0] - p[0][0]);
            let y = p[0][1] + xi * (p[1][1] - p[0][1]) + eta * (p[2][1] - p[0][1]);
            out.push(([x, y], wu * wv * (1.0 - u) * det.abs()));
        }
    }
    out
}

fn monomials(degree: usize, x: f64, y: f64) -> (Vec<f64>, Vec<[f64; 2]>) {
    if degree == 1 {
        (vec![1.0, x, y], vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    } else {
        (
            vec![1.0, x, y, x * x, x * y, y * y],
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [2.0 * x, 0.0], [y, x], [0.0, 2.0 * y]],
        )
    }
}

/// Physical positions of an element's Lagrange nodes: vertices, then the
/// midpoints of edges (1,2), (2,0), (0,1). Taken from the triangle itself so
/// periodic images keep their true coordinates.
pub fn local_nodes(space: &FunctionSpace, t: usize) -> Vec<[f64; 2]> {
    let p = space.mesh().triangle_coords(t);
    let mut out = p.to_vec();
    if space.degree() == 2 {
        for [a, b] in [[1, 2], [2, 0], [0, 1]] {
            out.push([0.5 * (p[a][0] + p[b][0]), 0.5 * (p[a][1] + p[b][1])]);
        }
    }
    out
}

/// Nodal basis of one element: coefficient matrix mapping monomials to shape functions.
pub struct LocalBasis {
    degree: usize,
    coef: DMatrix<f64>,
}

impl LocalBasis {
    pub fn new(space: &FunctionSpace, t: usize) -> Self {
        let pts = local_nodes(space, t);
        let n = pts.len();
        let mut v = DMatrix::zeros(n, n);
        for (a, pt) in pts.iter().enumerate() {
            let (m, _) = monomials(space.degree(), pt[0], pt[1]);
            for k in 0..n {
                v[(a, k)] = m[k];
            }
        }
        Self { degree: space.degree(), coef: v.try_inverse().expect("unisolvent nodes") }
    }

    pub fn eval(&self, x: f64, y: f64) -> (Vec<f64>, Vec<[f64; 2]>) {
        let (m, dm) = monomials(self.degree, x, y);
        let n = m.len();
        let mut val = vec![0.0; n];
        let mut grad = vec![[0.0; 2]; n];
        for a in 0..n {
            for k in 0..n {
                val[a] += m[k] * self.coef[(k, a)];
                grad[a][0] += dm[k][0] * self.coef[(k, a)];
                grad[a][1] += dm[k][1] * self.coef[(k, a)];
            }
        }
        (val, grad)
    }
}

const N_GAUSS: usize = 7;

fn for_points(space: &FunctionSpace, mut f: impl FnMut(usize, &[usize], [f64; 2], f64, &[f64], &[[f64; 2]])) {
    let mesh = space.mesh();
    for t in 0..mesh.num_triangles() {
        let basis = LocalBasis::new(space, t);
        let nodes = space.cell_nodes(t).to_vec();
        for (p, w) in triangle_rule(mesh.triangle_coords(t), N_GAUSS) {
            let (val, grad) = basis.eval(p[0], p[1]);
            f(t, &nodes, p, w, &val, &grad);
        }
    }
}

/// Field value at a physical point of triangle `t` (through the oracle basis).
pub fn field_value(field: &Field, t: usize, p: [f64; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
    let space = field.space();
    let c = space.components();
    let (val, grad) = LocalBasis::new(space, t).eval(p[0], p[1]);
    let mut v = [0.0; 2];
    let mut g = [[0.0; 2]; 2];
    for (a, &n) in space.cell_nodes(t).iter().enumerate() {
        for k in 0..c {
            let x = field.coeffs[n * c + k];
            v[k] += x * val[a];
            g[k][0] += x * grad[a][0];
            g[k][1] += x * grad[a][1];
        }
    }
    (v, g)
}

pub fn dense_mass(space: &FunctionSpace) -> DMatrix<f64> {
    let c = space.components();
    let mut m = DMatrix::zeros(space.dof_count(), space.dof_count());
    for_points(space, |_, nodes, _, w, val, _| {
        for (a, &i) in nodes.iter().enumerate() {
            for (b, &j) in nodes.iter().enumerate() {
                for k in 0..c {
                    m[(i * c + k, j * c + k)] += w * val[a] * val[b];
                }
            }
        }
    });
    m
}

pub fn dense_stiffness(space: &FunctionSpace) -> DMatrix<f64> {
    let c = space.components();
    let mut m = DMatrix::zeros(space.dof_count(), space.dof_count());
    for_points(space, |_, nodes, _, w, _, grad| {
        for (a, &i) in nodes.iter().enumerate() {
            for (b, &j) in nodes.iter().enumerate() {
                let d = grad[a][0] * grad[b][0] + grad[a][1] * grad[b][1];
                for k in 0..c {
                    m[(i * c + k, j * c + k)] += w * d;
                }
            }
        }
    });
    m
}

/// `B[q][j] = (div phi_j, psi_q)`.
pub fn dense_divergence(vel: &FunctionSpace, pres: &FunctionSpace) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(pres.dof_count(), vel.dof_count());
    for_points(vel, |t, nodes, p, w, _, grad| {
        let (psi, _) = LocalBasis::new(pres, t).eval(p[0], p[1]);
        for (a, &q) in pres.cell_nodes(t).iter().enumerate() {
            for (b, &j) in nodes.iter().enumerate() {
                m[(q, 2 * j)] += w * psi[a] * grad[b][0];
                m[(q, 2 * j + 1)] += w * psi[a] * grad[b][1];
            }
        }
    });
    m
}

/// `C[i][j] = (w x phi_j, phi_i)` with `w x v = w (v_2, -v_1)`.
pub fn dense_cross(w_field: &Field, vel: &FunctionSpace) -> DMatrix<f64> {
    let n = vel.dof_count();
    let mut m = DMatrix::zeros(n, n);
    for_points(vel, |t, nodes, p, w, val, _| {
        let (wv, _) = field_value(w_field, t, p);
        for (a, &i) in nodes.iter().enumerate() {
            for (b, &j) in nodes.iter().enumerate() {
                // trial phi_j e_2 contributes w phi_j e_1; trial phi_j e_1 contributes -w phi_j e_2
                m[(2 * i, 2 * j + 1)] += w * wv[0] * val[a] * val[b];
                m[(2 * i + 1, 2 * j)] -= w * wv[0] * val[a] * val[b];
            }
        }
    });
    m
}

/// Plain convection `(v . grad phi_j, phi_i)`.
pub fn dense_convection(v: &Field, scalar: &FunctionSpace) -> DMatrix<f64> {
    let n = scalar.dof_count();
    let mut m = DMatrix::zeros(n, n);
    for_points(scalar, |t, nodes, p, w, val, grad| {
        let (vv, _) = field_value(v, t, p);
        for (a, &i) in nodes.iter().enumerate() {
            for (b, &j) in nodes.iter().enumerate() {
                m[(i, j)] += w * (vv[0] * grad[b][0] + vv[1] * grad[b][1]) * val[a];
            }
        }
    });
    m
}

pub fn dense_skew_convection(v: &Field, scalar: &FunctionSpace) -> DMatrix<f64> {
    let c = dense_convection(v, scalar);
    (&c - c.transpose()) * 0.5
}

/// `mu sum_K |K|^{-1} (int_K phi_i)(int_K phi_j)` per component.
pub fn dense_nudge(space: &FunctionSpace, cell_of: &[usize], mu: f64) -> DMatrix<f64> {
    let c = space.components();
    let ncell = cell_of.iter().max().unwrap() + 1;
    let nn = space.num_nodes();
    let mut ints = DMatrix::<f64>::zeros(ncell, nn);
    let mut area = vec![0.0; ncell];
    for_points(space, |t, nodes, _, w, val, _| {
        area[cell_of[t]] += w;
        for (a, &i) in nodes.iter().enumerate() {
            ints[(cell_of[t], i)] += w * val[a];
        }
    });
    let mut m = DMatrix::zeros(space.dof_count(), space.dof_count());
    for k in 0..ncell {
        for i in 0..nn {
            for j in 0..nn {
                for comp in 0..c {
                    m[(i * c + comp, j * c + comp)] += mu * ints[(k, i)] * ints[(k, j)] / area[k];
                }
            }
        }
    }
    m
}

pub fn dense_forcing(space: &FunctionSpace, f: impl Fn(f64, f64) -> [f64; 2]) -> Vec<f64> {
    let c = space.components();
    let mut out = vec![0.0; space.dof_count()];
    for_points(space, |_, nodes, p, w, val, _| {
        let fv = f(p[0], p[1]);
        for (a, &i) in nodes.iter().enumerate() {
            for k in 0..c {
                out[i * c + k] += w * val[a] * fv[k];
            }
        }
    });
    out
}

pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let d = (a - b).norm();
    let s = a.norm().max(b.norm());
    if s == 0.0 {
        d
    } else {
        d / s
    }
}

/// Small test meshes: a structured 2x2 square (8 triangles) and a skewed
/// 5-triangle polygon.
pub fn small_meshes() -> Vec<Arc<Mesh>> {
    let square = generate_structured(2, Rect::unit_square(), false).unwrap();
    let skew = Mesh::new(
        vec![[0.0, 0.0], [1.3, 0.1], [2.0, 1.1], [0.9, 1.7], [-0.2, 0.9], [0.8, 0.7]],
        vec![[0, 1, 5], [1, 2, 5], [2, 3, 5], [3, 4, 5], [4, 0, 5]],
        Rect::new(-0.2, 0.0, 2.0, 1.7).unwrap(),
        None,
    )
    .unwrap();
    vec![Arc::new(square), Arc::new(skew)]
}

pub fn space(mesh: &Arc<Mesh>, degree: usize, components: usize) -> Arc<FunctionSpace> {
    Arc::new(FunctionSpace::new(mesh.clone(), degree, components, BcMode::None, false).unwrap())
}
