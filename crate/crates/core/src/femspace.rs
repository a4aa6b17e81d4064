//! Continuous Lagrange P1/P2 spaces on a [`Mesh`], scalar or 2-vector valued.
//!
//! Scalar DOFs ("nodes") are numbered vertices first, then edges. Vector
//! spaces interleave components: DOF `2 * node + c`.

use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::mesh::{Mesh, LOCAL_EDGES};
use crate::quadrature::QuadratureRule;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BcMode {
    Periodic,
    Dirichlet,
    None,
}

impl std::str::FromStr for BcMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "periodic" => Ok(BcMode::Periodic),
            "dirichlet" | "manufactured" => Ok(BcMode::Dirichlet),
            "none" => Ok(BcMode::None),
            _ => Err(invalid(format!("unknown boundary mode '{s}'"))),
        }
    }
}

#[derive(Debug)]
pub struct FunctionSpace {
    mesh: Arc<Mesh>,
    degree: usize,
    components: usize,
    bc: BcMode,
    zero_mean: bool,
    num_nodes: usize,
    node_coords: Vec<[f64; 2]>,
    /// Flat `num_triangles * local_size` table of scalar node indices.
    cell_nodes: Vec<usize>,
    boundary_nodes: Vec<usize>,
}

pub fn build_space(
    mesh: Arc<Mesh>,
    degree: usize,
    components: usize,
    bc: BcMode,
    zero_mean: bool,
) -> Result<Arc<FunctionSpace>> {
    FunctionSpace::new(mesh, degree, components, bc, zero_mean).map(Arc::new)
}

impl FunctionSpace {
    pub fn new(mesh: Arc<Mesh>, degree: usize, components: usize, bc: BcMode, zero_mean: bool) -> Result<Self> {
        if !(1..=2).contains(&degree) {
            return Err(invalid(format!("unsupported polynomial degree {degree}")));
        }
        if !(1..=2).contains(&components) {
            return Err(invalid(format!("unsupported component count {components}")));
        }
        if (bc == BcMode::Periodic) != mesh.is_periodic() {
            return Err(invalid("periodic boundary mode requires a periodic mesh (and vice versa)"));
        }
        // compact numbering of master vertices
        let mut vertex_node = vec![usize::MAX; mesh.vertices().len()];
        let mut node_coords = Vec::new();
        for v in 0..mesh.vertices().len() {
            let m = mesh.master(v);
            if vertex_node[m] == usize::MAX {
                vertex_node[m] = node_coords.len();
                node_coords.push(mesh.vertices()[m]);
            }
        }
        for v in 0..mesh.vertices().len() {
            vertex_node[v] = vertex_node[mesh.master(v)];
        }
        let nvert = node_coords.len();
        let edges = mesh.edges();
        if degree == 2 {
            node_coords.extend_from_slice(&edges.midpoints);
        }
        let local = if degree == 1 { 3 } else { 6 };
        let mut cell_nodes = Vec::with_capacity(local * mesh.num_triangles());
        for (t, tri) in mesh.triangles().iter().enumerate() {
            cell_nodes.extend(tri.iter().map(|&v| vertex_node[v]));
            if degree == 2 {
                cell_nodes.extend(edges.triangle_edges[t].iter().map(|&e| nvert + e));
            }
        }
        let mut boundary_nodes = Vec::new();
        if bc == BcMode::Dirichlet {
            let mut flag = vec![false; node_coords.len()];
            for &(t, e) in mesh.boundary_edges() {
                let tri = mesh.triangles()[t];
                for &i in &LOCAL_EDGES[e as usize] {
                    flag[vertex_node[tri[i]]] = true;
                }
                if degree == 2 {
                    flag[nvert + edges.triangle_edges[t][e as usize]] = true;
                }
            }
            boundary_nodes = flag.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect();
        }
        Ok(Self {
            num_nodes: node_coords.len(),
            mesh,
            degree,
            components,
            bc,
            zero_mean,
            node_coords,
            cell_nodes,
            boundary_nodes,
        })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn bc_mode(&self) -> BcMode {
        self.bc
    }

    pub fn zero_mean_constraint(&self) -> bool {
        self.zero_mean
    }

    /// Number of scalar nodes (DOFs per component).
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn dof_count(&self) -> usize {
        self.num_nodes * self.components
    }

    pub fn local_size(&self) -> usize {
        if self.degree == 1 { 3 } else { 6 }
    }

    pub fn node_coords(&self) -> &[[f64; 2]] {
        &self.node_coords
    }

    /// Scalar node indices of the local basis functions of triangle `t`.
    pub fn cell_nodes(&self, t: usize) -> &[usize] {
        let n = self.local_size();
        &self.cell_nodes[t * n..(t + 1) * n]
    }

    /// Global DOF indices of triangle `t`, component-interleaved for vector spaces.
    pub fn cell_dofs(&self, t: usize) -> Vec<usize> {
        let c = self.components;
        self.cell_nodes(t).iter().flat_map(|&n| (0..c).map(move |k| n * c + k)).collect()
    }

    pub fn dof(&self, node: usize, component: usize) -> usize {
        node * self.components + component
    }

    pub fn boundary_nodes(&self) -> &[usize] {
        &self.boundary_nodes
    }

    pub fn boundary_dofs(&self) -> Vec<usize> {
        let c = self.components;
        self.boundary_nodes.iter().flat_map(|&n| (0..c).map(move |k| n * c + k)).collect()
    }

    /// The coefficient vector of the constant 1 (in every component): the
    /// known nullspace direction of a zero-mean pressure space.
    pub fn nullspace_direction(&self) -> Option<Vec<f64>> {
        self.zero_mean.then(|| vec![1.0; self.dof_count()])
    }

    pub fn same_layout(&self, other: &FunctionSpace) -> bool {
        Arc::ptr_eq(&self.mesh, &other.mesh) && self.degree == other.degree && self.bc == other.bc
    }
}

/// Reference-element shape functions of degree 1 or 2.
pub fn reference_basis(degree: usize, x: f64, y: f64) -> (Vec<f64>, Vec<[f64; 2]>) {
    let l = [1.0 - x - y, x, y];
    let dl = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];
    if degree == 1 {
        return (l.to_vec(), dl.to_vec());
    }
    let mut vals = Vec::with_capacity(6);
    let mut grads = Vec::with_capacity(6);
    for i in 0..3 {
        vals.push(l[i] * (2.0 * l[i] - 1.0));
        let s = 4.0 * l[i] - 1.0;
        grads.push([s * dl[i][0], s * dl[i][1]]);
    }
    for [a, b] in LOCAL_EDGES {
        vals.push(4.0 * l[a] * l[b]);
        grads.push([
            4.0 * (l[a] * dl[b][0] + l[b] * dl[a][0]),
            4.0 * (l[a] * dl[b][1] + l[b] * dl[a][1]),
        ]);
    }
    (vals, grads)
}

/// Affine map data of one triangle.
#[derive(Clone, Copy, Debug)]
pub struct ElementGeometry {
    pub origin: [f64; 2],
    /// Columns are `v1 - v0` and `v2 - v0`.
    pub jacobian: [[f64; 2]; 2],
    pub det: f64,
    /// `J^{-T}` for mapping reference gradients.
    pub inv_jt: [[f64; 2]; 2],
}

impl ElementGeometry {
    pub fn new(mesh: &Mesh, t: usize) -> Result<Self> {
        let [a, b, c] = mesh.triangle_coords(t);
        let j = [[b[0] - a[0], c[0] - a[0]], [b[1] - a[1], c[1] - a[1]]];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        let scale = (j[0][0].abs() + j[0][1].abs() + j[1][0].abs() + j[1][1].abs()).powi(2);
        if det.abs() <= 1e-14 * scale || !det.is_finite() {
            return Err(Error::Geometry(format!("triangle {t} has zero Jacobian determinant")));
        }
        let inv_jt = [[j[1][1] / det, -j[1][0] / det], [-j[0][1] / det, j[0][0] / det]];
        Ok(Self { origin: a, jacobian: j, det, inv_jt })
    }

    pub fn map(&self, x: f64, y: f64) -> [f64; 2] {
        [
            self.origin[0] + self.jacobian[0][0] * x + self.jacobian[0][1] * y,
            self.origin[1] + self.jacobian[1][0] * x + self.jacobian[1][1] * y,
        ]
    }

    pub fn grad(&self, g: [f64; 2]) -> [f64; 2] {
        [
            self.inv_jt[0][0] * g[0] + self.inv_jt[0][1] * g[1],
            self.inv_jt[1][0] * g[0] + self.inv_jt[1][1] * g[1],
        ]
    }
}

/// Reference shape functions tabulated at the points of a quadrature rule.
#[derive(Clone, Debug)]
pub struct Tabulation {
    pub degree: usize,
    pub weights: Vec<f64>,
    pub ref_points: Vec<[f64; 2]>,
    /// `values[q][i]`.
    pub values: Vec<Vec<f64>>,
    pub ref_grads: Vec<Vec<[f64; 2]>>,
}

impl Tabulation {
    pub fn new(degree: usize, quad: &QuadratureRule) -> Self {
        let ref_points: Vec<[f64; 2]> = quad.reference_points().collect();
        let (values, ref_grads) = ref_points.iter().map(|p| reference_basis(degree, p[0], p[1])).unzip();
        Self { degree, weights: quad.weights.clone(), ref_points, values, ref_grads }
    }

    pub fn num_points(&self) -> usize {
        self.weights.len()
    }

    pub fn local_size(&self) -> usize {
        if self.degree == 1 { 3 } else { 6 }
    }
}

/// Shape function values and physical gradients on one triangle.
#[derive(Clone, Debug, Default)]
pub struct ElementValues {
    pub points: Vec<[f64; 2]>,
    /// Quadrature weights times `|det J|`.
    pub jxw: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub grads: Vec<Vec<[f64; 2]>>,
}

impl ElementValues {
    /// Refills the buffers for triangle with geometry `geo`.
    pub fn reinit(&mut self, geo: &ElementGeometry, tab: &Tabulation) {
        let nq = tab.num_points();
        let nl = tab.local_size();
        self.points.clear();
        self.jxw.clear();
        self.values.resize(nq, Vec::new());
        self.grads.resize(nq, Vec::new());
        for q in 0..nq {
            let p = tab.ref_points[q];
            self.points.push(geo.map(p[0], p[1]));
            self.jxw.push(tab.weights[q] * geo.det.abs());
            self.values[q].clear();
            self.values[q].extend_from_slice(&tab.values[q]);
            self.grads[q].clear();
            self.grads[q].extend((0..nl).map(|i| geo.grad(tab.ref_grads[q][i])));
        }
    }

    pub fn num_points(&self) -> usize {
        self.jxw.len()
    }
}

/// Values and physical gradients of the local shape functions of `space` on
/// triangle `t` at the mapped points of `quad`.
pub fn eval_basis(space: &FunctionSpace, t: usize, quad: &QuadratureRule) -> Result<ElementValues> {
    if t >= space.mesh().num_triangles() {
        return Err(invalid(format!("triangle index {t} out of range")));
    }
    let geo = ElementGeometry::new(space.mesh(), t)?;
    let mut ev = ElementValues::default();
    ev.reinit(&geo, &Tabulation::new(space.degree(), quad));
    Ok(ev)
}

/// Finite element coefficient vector bound to a space.
#[derive(Clone, Debug)]
pub struct Field {
    space: Arc<FunctionSpace>,
    pub coeffs: Vec<f64>,
}

impl Field {
    pub fn zeros(space: Arc<FunctionSpace>) -> Self {
        let n = space.dof_count();
        Self { space, coeffs: vec![0.0; n] }
    }

    pub fn from_coeffs(space: Arc<FunctionSpace>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != space.dof_count() {
            return Err(invalid(format!(
                "coefficient vector has length {}, space has {} DOFs",
                coeffs.len(),
                space.dof_count()
            )));
        }
        Ok(Self { space, coeffs })
    }

    /// Nodal interpolant of `f`, which returns one value per component.
    pub fn interpolate(space: Arc<FunctionSpace>, f: impl Fn(f64, f64) -> [f64; 2]) -> Self {
        let c = space.components();
        let mut coeffs = vec![0.0; space.dof_count()];
        for (n, p) in space.node_coords().iter().enumerate() {
            let v = f(p[0], p[1]);
            for k in 0..c {
                coeffs[n * c + k] = v[k];
            }
        }
        Self { space, coeffs }
    }

    pub fn interpolate_scalar(space: Arc<FunctionSpace>, f: impl Fn(f64, f64) -> f64) -> Self {
        Self::interpolate(space, |x, y| [f(x, y), 0.0])
    }

    pub fn space(&self) -> &Arc<FunctionSpace> {
        &self.space
    }

    /// Value (per component) inside triangle `t` at barycentric coordinates `l`.
    pub fn eval_in(&self, t: usize, l: [f64; 3]) -> [f64; 2] {
        let (vals, _) = reference_basis(self.space.degree(), l[1], l[2]);
        let c = self.space.components();
        let mut out = [0.0; 2];
        for (i, &node) in self.space.cell_nodes(t).iter().enumerate() {
            for k in 0..c {
                out[k] += vals[i] * self.coeffs[node * c + k];
            }
        }
        out
    }

    /// Point evaluation; `None` outside the mesh.
    pub fn eval(&self, p: [f64; 2]) -> Option<[f64; 2]> {
        self.space.mesh().locate(p).map(|(t, l)| self.eval_in(t, l))
    }

    /// Integral of each component over the domain.
    pub fn integral(&self, quad: &QuadratureRule) -> [f64; 2] {
        let tab = Tabulation::new(self.space.degree(), quad);
        let mut ev = ElementValues::default();
        let c = self.space.components();
        let mut acc = [0.0; 2];
        for t in 0..self.space.mesh().num_triangles() {
            let geo = ElementGeometry::new(self.space.mesh(), t).expect("mesh validated at construction");
            ev.reinit(&geo, &tab);
            let nodes = self.space.cell_nodes(t);
            for q in 0..ev.num_points() {
                for (i, &node) in nodes.iter().enumerate() {
                    for k in 0..c {
                        acc[k] += ev.jxw[q] * ev.values[q][i] * self.coeffs[node * c + k];
                    }
                }
            }
        }
        acc
    }
}
