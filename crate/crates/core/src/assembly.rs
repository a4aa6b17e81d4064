//! Element loops for every matrix and load vector of the schemes.
//!
//! Each operator has an `*_into` form that accumulates into any [`Sink`]
//! (a preallocated [`SparseMatrix`] or a triplet list) and a convenience form
//! returning a finalized matrix without stored zeros.

use std::sync::Arc;

use crate::error::{invalid, Result};
use crate::femspace::{ElementGeometry, ElementValues, Field, FunctionSpace, Tabulation};
use crate::mesh::CoarsePartition;
use crate::quadrature::quadrature_rule;
use crate::sparse::SparseMatrix;

/// Exactness of the rule used for all assembly.
pub const ASSEMBLY_QUAD_DEGREE: usize = 6;

/// Anything that can receive matrix contributions.
pub trait Sink {
    fn add(&mut self, i: usize, j: usize, v: f64);
}

impl Sink for SparseMatrix {
    #[inline]
    fn add(&mut self, i: usize, j: usize, v: f64) {
        SparseMatrix::add(self, i, j, v);
    }
}

impl Sink for Vec<(usize, usize, f64)> {
    #[inline]
    fn add(&mut self, i: usize, j: usize, v: f64) {
        self.push((i, j, v));
    }
}

fn assembly_tab(degree: usize) -> Tabulation {
    Tabulation::new(degree, quadrature_rule(ASSEMBLY_QUAD_DEGREE).expect("degree 6 rule exists"))
}

/// Calls `f(t, values)` for every triangle of `space`'s mesh.
fn for_each_element(space: &FunctionSpace, tab: &Tabulation, mut f: impl FnMut(usize, &ElementValues)) {
    let mesh = space.mesh();
    let mut ev = ElementValues::default();
    for t in 0..mesh.num_triangles() {
        let geo = ElementGeometry::new(mesh, t).expect("mesh triangles have positive area");
        ev.reinit(&geo, tab);
        f(t, &ev);
    }
}

fn scatter_scalar_block(space: &FunctionSpace, t: usize, local: &[[f64; 6]; 6], sink: &mut impl Sink) {
    let nodes = space.cell_nodes(t);
    let c = space.components();
    for (a, &na) in nodes.iter().enumerate() {
        for (b, &nb) in nodes.iter().enumerate() {
            let v = local[a][b];
            for k in 0..c {
                sink.add(na * c + k, nb * c + k, v);
            }
        }
    }
}

fn finalize(n: usize, m: usize, trip: Vec<(usize, usize, f64)>) -> SparseMatrix {
    SparseMatrix::from_triplets(n, m, &trip).expect("assembly indices are in range")
}

fn same_mesh(a: &FunctionSpace, b: &FunctionSpace) -> Result<()> {
    if Arc::ptr_eq(a.mesh(), b.mesh()) {
        Ok(())
    } else {
        Err(invalid("spaces live on different meshes"))
    }
}

pub fn assemble_mass_into(space: &FunctionSpace, scale: f64, sink: &mut impl Sink) {
    let tab = assembly_tab(space.degree());
    let nl = space.local_size();
    for_each_element(space, &tab, |t, ev| {
        let mut local = [[0.0; 6]; 6];
        for q in 0..ev.num_points() {
            let phi = &ev.values[q];
            for a in 0..nl {
                for b in 0..nl {
                    local[a][b] += scale * ev.jxw[q] * phi[a] * phi[b];
                }
            }
        }
        scatter_scalar_block(space, t, &local, sink);
    });
}

/// Gram matrix of the basis, component-wise for vector spaces.
pub fn assemble_mass(space: &FunctionSpace) -> SparseMatrix {
    let mut trip = Vec::new();
    assemble_mass_into(space, 1.0, &mut trip);
    finalize(space.dof_count(), space.dof_count(), trip).with_symmetry_flag(true)
}

pub fn assemble_stiffness_into(space: &FunctionSpace, scale: f64, sink: &mut impl Sink) {
    let tab = assembly_tab(space.degree());
    let nl = space.local_size();
    for_each_element(space, &tab, |t, ev| {
        let mut local = [[0.0; 6]; 6];
        for q in 0..ev.num_points() {
            let g = &ev.grads[q];
            for a in 0..nl {
                for b in 0..nl {
                    local[a][b] += scale * ev.jxw[q] * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
                }
            }
        }
        scatter_scalar_block(space, t, &local, sink);
    });
}

/// `(grad u, grad v)`, component-wise for vector spaces.
pub fn assemble_stiffness(space: &FunctionSpace) -> SparseMatrix {
    let mut trip = Vec::new();
    assemble_stiffness_into(space, 1.0, &mut trip);
    finalize(space.dof_count(), space.dof_count(), trip).with_symmetry_flag(true)
}

/// `B[q][j] = (div phi_j, psi_q)`: rows are pressure DOFs, columns velocity DOFs.
pub fn assemble_divergence_into(vel: &FunctionSpace, pres: &FunctionSpace, sink: &mut impl Sink) -> Result<()> {
    same_mesh(vel, pres)?;
    if vel.components() != 2 || pres.components() != 1 {
        return Err(invalid("divergence needs a vector velocity space and a scalar pressure space"));
    }
    let tab = assembly_tab(vel.degree());
    let ptab = assembly_tab(pres.degree());
    let (nv, np) = (vel.local_size(), pres.local_size());
    for_each_element(vel, &tab, |t, ev| {
        let vnodes = vel.cell_nodes(t);
        let pnodes = pres.cell_nodes(t);
        let mut local = [[[0.0; 2]; 6]; 6];
        for q in 0..ev.num_points() {
            for a in 0..np {
                let psi = ptab.values[q][a] * ev.jxw[q];
                for b in 0..nv {
                    local[a][b][0] += psi * ev.grads[q][b][0];
                    local[a][b][1] += psi * ev.grads[q][b][1];
                }
            }
        }
        for a in 0..np {
            for b in 0..nv {
                for c in 0..2 {
                    sink.add(pnodes[a], 2 * vnodes[b] + c, local[a][b][c]);
                }
            }
        }
    });
    Ok(())
}

pub fn assemble_divergence(vel: &FunctionSpace, pres: &FunctionSpace) -> Result<SparseMatrix> {
    let mut trip = Vec::new();
    assemble_divergence_into(vel, pres, &mut trip)?;
    Ok(finalize(pres.dof_count(), vel.dof_count(), trip))
}

/// Values of a scalar field at the quadrature points of triangle `t`.
fn field_at_points(field: &Field, t: usize, tab: &Tabulation, out: &mut Vec<[f64; 2]>) {
    let space = field.space();
    let c = space.components();
    let nodes = space.cell_nodes(t);
    out.clear();
    for q in 0..tab.num_points() {
        let mut v = [0.0; 2];
        for (a, &n) in nodes.iter().enumerate() {
            for k in 0..c {
                v[k] += tab.values[q][a] * field.coeffs[n * c + k];
            }
        }
        out.push(v);
    }
}

/// Bilinear form `(v, chi) -> (w x v, chi)` with `w x v = w (v_2, -v_1)`.
pub fn assemble_cross_into(w: &Field, vel: &FunctionSpace, scale: f64, sink: &mut impl Sink) -> Result<()> {
    same_mesh(w.space(), vel)?;
    if w.space().components() != 1 || vel.components() != 2 {
        return Err(invalid("cross term needs a scalar vorticity field and a vector velocity space"));
    }
    let tab = assembly_tab(vel.degree());
    let wtab = assembly_tab(w.space().degree());
    let nl = vel.local_size();
    let mut wq = Vec::new();
    for_each_element(vel, &tab, |t, ev| {
        field_at_points(w, t, &wtab, &mut wq);
        let mut local = [[0.0; 6]; 6];
        for q in 0..ev.num_points() {
            let s = scale * ev.jxw[q] * wq[q][0];
            let phi = &ev.values[q];
            for a in 0..nl {
                for b in 0..nl {
                    local[a][b] += s * phi[a] * phi[b];
                }
            }
        }
        let nodes = vel.cell_nodes(t);
        for a in 0..nl {
            for b in 0..nl {
                // row: test chi_a, column: trial v_b
                sink.add(2 * nodes[a], 2 * nodes[b] + 1, local[a][b]);
                sink.add(2 * nodes[a] + 1, 2 * nodes[b], -local[a][b]);
            }
        }
    });
    Ok(())
}

pub fn assemble_cross(w: &Field, vel: &FunctionSpace) -> Result<SparseMatrix> {
    let mut trip = Vec::new();
    assemble_cross_into(w, vel, 1.0, &mut trip)?;
    Ok(finalize(vel.dof_count(), vel.dof_count(), trip))
}

/// Skew-symmetric convection `N[i][j] = b*(v, phi_j, phi_i)
/// = ((v . grad phi_j) phi_i - (v . grad phi_i) phi_j) / 2`.
pub fn assemble_convection_skew_into(v: &Field, scalar: &FunctionSpace, scale: f64, sink: &mut impl Sink) -> Result<()> {
    same_mesh(v.space(), scalar)?;
    if v.space().components() != 2 || scalar.components() != 1 {
        return Err(invalid("convection needs a vector velocity field and a scalar space"));
    }
    let tab = assembly_tab(scalar.degree());
    let vtab = assembly_tab(v.space().degree());
    let nl = scalar.local_size();
    let mut vq = Vec::new();
    for_each_element(scalar, &tab, |t, ev| {
        field_at_points(v, t, &vtab, &mut vq);
        let mut local = [[0.0; 6]; 6];
        for q in 0..ev.num_points() {
            let s = 0.5 * scale * ev.jxw[q];
            let phi = &ev.values[q];
            let mut adv = [0.0; 6];
            for a in 0..nl {
                adv[a] = vq[q][0] * ev.grads[q][a][0] + vq[q][1] * ev.grads[q][a][1];
            }
            for a in 0..nl {
                for b in 0..nl {
                    local[a][b] += s * (adv[b] * phi[a] - adv[a] * phi[b]);
                }
            }
        }
        scatter_scalar_block(scalar, t, &local, sink);
    });
    Ok(())
}

pub fn assemble_convection_skew(v: &Field, scalar: &FunctionSpace) -> Result<SparseMatrix> {
    let mut trip = Vec::new();
    assemble_convection_skew_into(v, scalar, 1.0, &mut trip)?;
    Ok(finalize(scalar.dof_count(), scalar.dof_count(), trip))
}

/// Load vector `(f(., t), phi_i)`, component-wise.
pub fn assemble_forcing(space: &FunctionSpace, f: &dyn Fn(f64, f64, f64) -> [f64; 2], t: f64) -> Vec<f64> {
    let tab = assembly_tab(space.degree());
    let c = space.components();
    let mut out = vec![0.0; space.dof_count()];
    for_each_element(space, &tab, |tri, ev| {
        let nodes = space.cell_nodes(tri);
        for q in 0..ev.num_points() {
            let p = ev.points[q];
            let fv = f(p[0], p[1], t);
            for (a, &n) in nodes.iter().enumerate() {
                let s = ev.jxw[q] * ev.values[q][a];
                for k in 0..c {
                    out[n * c + k] += s * fv[k];
                }
            }
        }
    });
    out
}

/// Piecewise-constant L2 projection onto coarse cells, expressed through
/// the basis integrals `int_K phi_i` of each coarse cell `K`.
#[derive(Clone, Debug)]
pub struct NudgeOperator {
    partition: CoarsePartition,
    space: Arc<FunctionSpace>,
    /// Per coarse cell: `(scalar node, int_K phi_node)` pairs.
    cell_integrals: Vec<Vec<(usize, f64)>>,
}

pub fn build_nudge(partition: &CoarsePartition, space: Arc<FunctionSpace>) -> Result<NudgeOperator> {
    NudgeOperator::new(partition.clone(), space)
}

impl NudgeOperator {
    pub fn new(partition: CoarsePartition, space: Arc<FunctionSpace>) -> Result<Self> {
        let nt = space.mesh().num_triangles();
        if partition.cell_of().len() != nt {
            return Err(invalid(format!(
                "partition covers {} triangles, mesh has {nt}",
                partition.cell_of().len()
            )));
        }
        let tab = assembly_tab(space.degree());
        let mut dense: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); partition.num_cells()];
        for_each_element(&space, &tab, |t, ev| {
            let cell = &mut dense[partition.cell_of()[t]];
            for (a, &n) in space.cell_nodes(t).iter().enumerate() {
                let s: f64 = (0..ev.num_points()).map(|q| ev.jxw[q] * ev.values[q][a]).sum();
                *cell.entry(n).or_insert(0.0) += s;
            }
        });
        let cell_integrals = dense.into_iter().map(|m| m.into_iter().collect()).collect();
        Ok(Self { partition, space, cell_integrals })
    }

    pub fn partition(&self) -> &CoarsePartition {
        &self.partition
    }

    pub fn space(&self) -> &Arc<FunctionSpace> {
        &self.space
    }

    pub fn cell_integrals(&self) -> &[Vec<(usize, f64)>] {
        &self.cell_integrals
    }

    /// DOF sets coupled by the nudging matrix (one per coarse cell and component).
    pub fn cliques(&self) -> Vec<Vec<usize>> {
        let c = self.space.components();
        self.cell_integrals
            .iter()
            .flat_map(|cell| (0..c).map(move |k| cell.iter().map(|&(n, _)| n * c + k).collect()))
            .collect()
    }

    /// Coarse-cell means of a field, per component.
    pub fn cell_means(&self, field: &Field) -> Vec<[f64; 2]> {
        let c = self.space.components();
        self.cell_integrals
            .iter()
            .zip(self.partition.cell_area())
            .map(|(cell, &area)| {
                let mut m = [0.0; 2];
                for &(n, s) in cell {
                    for k in 0..c {
                        m[k] += s * field.coeffs[n * c + k];
                    }
                }
                m.map(|x| x / area)
            })
            .collect()
    }

    /// Coarse means of a function that is constant on each fine triangle.
    pub fn project_piecewise(&self, fine_values: &[f64]) -> Vec<f64> {
        let mesh = self.space.mesh();
        let mut acc = vec![0.0; self.partition.num_cells()];
        for (t, &v) in fine_values.iter().enumerate() {
            acc[self.partition.cell_of()[t]] += v * mesh.triangle_area(t);
        }
        acc.iter().zip(self.partition.cell_area()).map(|(s, a)| s / a).collect()
    }

    /// `||I_H g||` for a finite element field `g`.
    pub fn projection_norm(&self, field: &Field) -> f64 {
        let c = self.space.components();
        self.cell_means(field)
            .iter()
            .zip(self.partition.cell_area())
            .map(|(m, a)| a * (0..c).map(|k| m[k] * m[k]).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn assemble_matrix_into(&self, mu: f64, sink: &mut impl Sink) {
        let c = self.space.components();
        for (cell, &area) in self.cell_integrals.iter().zip(self.partition.cell_area()) {
            for &(i, si) in cell {
                for &(j, sj) in cell {
                    let v = mu * si * sj / area;
                    for k in 0..c {
                        sink.add(i * c + k, j * c + k, v);
                    }
                }
            }
        }
    }

    /// Right-hand side `mu sum_K mean_K(obs) int_K phi_i`; `observed` holds
    /// per-cell means (first `components` entries used).
    pub fn rhs_into(&self, mu: f64, observed: &[[f64; 2]], out: &mut [f64]) -> Result<()> {
        if observed.len() != self.partition.num_cells() {
            return Err(invalid(format!(
                "{} observed values for {} coarse cells",
                observed.len(),
                self.partition.num_cells()
            )));
        }
        let c = self.space.components();
        for (cell, obs) in self.cell_integrals.iter().zip(observed) {
            for &(i, si) in cell {
                for k in 0..c {
                    out[i * c + k] += mu * obs[k] * si;
                }
            }
        }
        Ok(())
    }
}

/// `mu (I_H u, I_H chi)`; `mu = 0` yields an empty matrix.
pub fn assemble_nudge_matrix(op: &NudgeOperator, mu: f64) -> Result<SparseMatrix> {
    if !(mu >= 0.0) {
        return Err(invalid(format!("nudging parameter must be non-negative, got {mu}")));
    }
    let n = op.space.dof_count();
    let mut trip = Vec::new();
    if mu > 0.0 {
        op.assemble_matrix_into(mu, &mut trip);
    }
    Ok(finalize(n, n, trip).with_symmetry_flag(true))
}

pub fn assemble_nudge_rhs(op: &NudgeOperator, mu: f64, observed: &[[f64; 2]]) -> Result<Vec<f64>> {
    if !(mu >= 0.0) {
        return Err(invalid(format!("nudging parameter must be non-negative, got {mu}")));
    }
    let mut out = vec![0.0; op.space.dof_count()];
    if mu > 0.0 {
        op.rhs_into(mu, observed, &mut out)?;
    }
    Ok(out)
}
