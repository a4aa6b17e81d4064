//! Sparse direct solves for the two systems of each time step.
//!
//! Factorizations go through faer's supernodal LU. The symbolic analysis is
//! cached per sparsity pattern, so repeated solves with the same pattern (one
//! per time step) only redo the numeric factorization.

use std::sync::Arc;

use dyn_stack::{MemBuffer, MemStack};
use faer::linalg::solvers::Solve;
use faer::sparse::linalg::lu::{factorize_symbolic_lu, LuSymbolicParams, NumericLu, SymbolicLu};
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{Conj, Mat, MatMut, Par, Side};

use crate::error::{invalid, Error, Result};
use crate::sparse::{Pattern, SparseMatrix};

/// Relative residual every solve must meet.
pub const DEFAULT_TOLERANCE: f64 = 1e-10;

const REFINEMENT_STEPS: usize = 4;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// The CSR arrays of `a` read as CSC describe `a^T`.
fn transposed_view(a: &SparseMatrix) -> SparseColMatRef<'_, usize, f64> {
    let p = a.pattern();
    let sym = SymbolicSparseColMatRef::new_checked(p.ncols, p.nrows, &p.row_ptr, None, &p.col_idx);
    SparseColMatRef::new(sym, &a.values)
}

struct Factorization {
    pattern: Arc<Pattern>,
    symbolic: SymbolicLu<usize>,
    numeric: NumericLu<usize, f64>,
    factor_buf: MemBuffer,
    solve_buf: MemBuffer,
}

/// LU solver that reuses its symbolic factorization, numeric storage and
/// workspace while the pattern is unchanged.
pub struct SparseLu {
    tolerance: f64,
    cached: Option<Factorization>,
}

impl SparseLu {
    pub fn new(tolerance: f64) -> Self {
        Self { tolerance, cached: None }
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    fn prepare(&mut self, a: &SparseMatrix) -> Result<()> {
        let reuse = matches!(&self.cached, Some(f) if Arc::ptr_eq(&f.pattern, a.pattern()) || *f.pattern == **a.pattern());
        if reuse {
            return Ok(());
        }
        let view = transposed_view(a);
        let symbolic = factorize_symbolic_lu(view.symbolic(), LuSymbolicParams::default()).map_err(|e| Error::Solver {
            reason: format!("symbolic factorization failed: {e:?}"),
            residual: f64::NAN,
        })?;
        let oom = |_| Error::Solver { reason: "out of memory".into(), residual: f64::NAN };
        let factor_buf = MemBuffer::try_new(symbolic.factorize_numeric_lu_scratch::<f64>(Par::Seq, Default::default())).map_err(oom)?;
        let solve_buf = MemBuffer::try_new(symbolic.solve_transpose_in_place_scratch::<f64>(1, Par::Seq)).map_err(oom)?;
        self.cached = Some(Factorization { pattern: a.pattern().clone(), symbolic, numeric: NumericLu::new(), factor_buf, solve_buf });
        Ok(())
    }

    /// Solves `a x = rhs`, refining until the relative residual meets the tolerance.
    /// Returns the solution and its relative residual.
    pub fn solve(&mut self, a: &SparseMatrix, rhs: &[f64]) -> Result<(Vec<f64>, f64)> {
        if a.nrows() != a.ncols() || rhs.len() != a.nrows() {
            return Err(invalid(format!(
                "system is {}x{} with rhs of length {}",
                a.nrows(),
                a.ncols(),
                rhs.len()
            )));
        }
        let bnorm = norm(rhs);
        if bnorm == 0.0 {
            return Ok((vec![0.0; rhs.len()], 0.0));
        }
        self.prepare(a)?;
        let f = self.cached.as_mut().expect("prepared above");
        let lu = f
            .symbolic
            .factorize_numeric_lu(&mut f.numeric, transposed_view(a), Par::Seq, MemStack::new(&mut f.factor_buf), Default::default())
            .map_err(|e| Error::Solver { reason: format!("numeric factorization failed: {e:?}"), residual: f64::NAN })?;
        let solve_buf = &mut f.solve_buf;
        let mut solve = |b: &[f64]| {
            let mut x = b.to_vec();
            lu.solve_transpose_in_place_with_conj(Conj::No, MatMut::from_column_major_slice_mut(&mut x, b.len(), 1), Par::Seq, MemStack::new(solve_buf));
            x
        };
        let mut x = solve(rhs);
        let mut rel = f64::INFINITY;
        for _ in 0..=REFINEMENT_STEPS {
            let ax = a.matvec(&x);
            let r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, y)| b - y).collect();
            rel = norm(&r) / bnorm;
            if !rel.is_finite() {
                break;
            }
            if rel <= self.tolerance {
                return Ok((x, rel));
            }
            let dx = solve(&r);
            x.iter_mut().zip(&dx).for_each(|(xi, d)| *xi += d);
        }
        Err(Error::Solver { reason: "residual above tolerance after refinement".into(), residual: rel })
    }
}

/// One-shot LU solve of a general square system.
pub fn solve_scalar(matrix: &SparseMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    SparseLu::new(DEFAULT_TOLERANCE).solve(matrix, rhs).map(|(x, _)| x)
}

/// Sparse Cholesky solve for symmetric positive definite systems.
pub fn solve_spd(matrix: &SparseMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    if matrix.nrows() != matrix.ncols() || rhs.len() != matrix.nrows() {
        return Err(invalid("dimension mismatch in SPD solve"));
    }
    faer::set_global_parallelism(faer::Par::Seq);
    let view = transposed_view(matrix);
    let fail = |what: String| Error::Solver { reason: what, residual: f64::NAN };
    let sym = SymbolicLlt::try_new(view.symbolic(), Side::Lower).map_err(|e| fail(format!("{e:?}")))?;
    let llt = Llt::try_new_with_symbolic(sym, view, Side::Lower).map_err(|e| fail(format!("not SPD: {e:?}")))?;
    let mut x = Mat::from_fn(rhs.len(), 1, |i, _| rhs[i]);
    llt.solve_in_place(&mut x);
    let x: Vec<f64> = (0..rhs.len()).map(|i| x[(i, 0)]).collect();
    let r: Vec<f64> = matrix.matvec(&x).iter().zip(rhs).map(|(a, b)| a - b).collect();
    let bn = norm(rhs);
    let rel = if bn == 0.0 { norm(&r) } else { norm(&r) / bn };
    if rel > DEFAULT_TOLERANCE {
        return Err(Error::Solver { reason: "Cholesky residual above tolerance".into(), residual: rel });
    }
    Ok(x)
}

/// Velocity-pressure system
///
/// ```text
/// [ A  -B^T ] [v]   [rhs_v]
/// [ B   0   ] [p] = [rhs_p]     (modulo constants, see below)
/// ```
///
/// with the pressure normalized by `mean_weights . p = 0`. A scalar Lagrange
/// multiplier enforces the divergence rows against every pressure test
/// function orthogonal to the constants. It borders the matrix in general;
/// when `B^T 1 = 0` it is found in closed form and one pressure row is pinned.
#[derive(Clone, Debug)]
pub struct SaddleSystem {
    pub a: SparseMatrix,
    pub b: SparseMatrix,
    /// `int psi_q` for each pressure basis function.
    pub mean_weights: Vec<f64>,
    pub rhs_v: Vec<f64>,
    pub rhs_p: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SaddleSolution {
    pub velocity: Vec<f64>,
    pub pressure: Vec<f64>,
    /// Multiplier of the mean constraint; nonzero only when the boundary
    /// data carry net flux.
    pub multiplier: f64,
    /// Relative residual of the bordered system.
    pub residual: f64,
    /// `|| B v - rhs_p ||` after removing its component along `mean_weights`.
    pub divergence_residual: f64,
}

/// Assembled layout of the square system handed to the LU.
///
/// `Bordered` appends the multiplier row and column. `Pinned` is used when
/// `B^T 1 = 0`: the multiplier is then known in closed form, the first
/// pressure unknown is fixed and its (redundant) divergence row dropped.
struct Layout {
    pinned: bool,
    a_pattern: Arc<Pattern>,
    b_pattern: Arc<Pattern>,
    pattern: Arc<Pattern>,
    a_slots: Vec<usize>,
    /// For each B slot: (slot of -B in the pressure row, slot of -B^T in the velocity row).
    b_slots: Vec<Option<(usize, usize)>>,
    /// Bordered: multiplier slots per pressure row. Pinned: the single pin slot.
    extra_slots: Vec<(usize, usize)>,
}

impl Layout {
    fn new(a: &SparseMatrix, b: &SparseMatrix, pinned: bool) -> Self {
        let (nv, np) = (a.nrows(), b.nrows());
        let n = if pinned { nv + np } else { nv + np + 1 };
        let (ap, bp) = (a.pattern(), b.pattern());
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for i in 0..nv {
            rows[i].extend(ap.row(i).map(|k| ap.col_idx[k]));
        }
        for q in 0..np {
            if pinned && q == 0 {
                rows[nv].push(nv);
                continue;
            }
            for k in bp.row(q) {
                let j = bp.col_idx[k];
                rows[nv + q].push(j);
                rows[j].push(nv + q);
            }
            if !pinned {
                rows[nv + q].push(n - 1);
                rows[n - 1].push(nv + q);
            }
        }
        let pattern = Arc::new(Pattern::from_rows(n, rows));
        let a_slots = (0..nv)
            .flat_map(|i| ap.row(i).map(move |k| (i, ap.col_idx[k])))
            .map(|(i, j)| pattern.slot(i, j).expect("A entries are in the saddle pattern"))
            .collect();
        let b_slots = (0..np)
            .flat_map(|q| bp.row(q).map(move |k| (q, bp.col_idx[k])))
            .map(|(q, j)| {
                (!(pinned && q == 0)).then(|| (pattern.slot(nv + q, j).unwrap(), pattern.slot(j, nv + q).unwrap()))
            })
            .collect();
        let extra_slots = if pinned {
            vec![(pattern.slot(nv, nv).unwrap(), usize::MAX)]
        } else {
            (0..np).map(|q| (pattern.slot(nv + q, n - 1).unwrap(), pattern.slot(n - 1, nv + q).unwrap())).collect()
        };
        Self { pinned, a_pattern: ap.clone(), b_pattern: bp.clone(), pattern, a_slots, b_slots, extra_slots }
    }

    fn matches(&self, a: &SparseMatrix, b: &SparseMatrix, pinned: bool) -> bool {
        self.pinned == pinned
            && (Arc::ptr_eq(&self.a_pattern, a.pattern()) || *self.a_pattern == **a.pattern())
            && (Arc::ptr_eq(&self.b_pattern, b.pattern()) || *self.b_pattern == **b.pattern())
    }
}

/// Saddle-point solver caching the system layout and symbolic factorization.
pub struct SaddleSolver {
    lu: SparseLu,
    layout: Option<Layout>,
}

impl SaddleSolver {
    pub fn new(tolerance: f64) -> Self {
        Self { lu: SparseLu::new(tolerance), layout: None }
    }

    pub fn solve(&mut self, sys: &SaddleSystem) -> Result<SaddleSolution> {
        let (nv, np) = (sys.a.nrows(), sys.b.nrows());
        if sys.a.ncols() != nv || sys.b.ncols() != nv || sys.rhs_v.len() != nv || sys.rhs_p.len() != np || sys.mean_weights.len() != np {
            return Err(invalid("inconsistent saddle system dimensions"));
        }
        let total: f64 = sys.mean_weights.iter().sum();
        let bscale = sys.b.max_abs();
        let col_sums = sys.b.transpose_matvec(&vec![1.0; np]);
        let pinned = np > 0 && total != 0.0 && col_sums.iter().all(|c| c.abs() <= 1e-10 * bscale);
        if !self.layout.as_ref().is_some_and(|l| l.matches(&sys.a, &sys.b, pinned)) {
            self.layout = Some(Layout::new(&sys.a, &sys.b, pinned));
        }
        let layout = self.layout.as_ref().unwrap();
        let mut m = SparseMatrix::zeros(layout.pattern.clone());
        for (k, &s) in layout.a_slots.iter().enumerate() {
            m.values[s] = sys.a.values[k];
        }
        for (k, slots) in layout.b_slots.iter().enumerate() {
            if let Some((s1, s2)) = *slots {
                m.values[s1] = -sys.b.values[k];
                m.values[s2] = -sys.b.values[k];
            }
        }
        let mut rhs = Vec::with_capacity(nv + np + 1);
        rhs.extend_from_slice(&sys.rhs_v);
        let multiplier;
        if pinned {
            // summing the constraint rows isolates the multiplier
            multiplier = -sys.rhs_p.iter().sum::<f64>() / total;
            m.values[layout.extra_slots[0].0] = if bscale > 0.0 { bscale } else { 1.0 };
            rhs.extend(sys.rhs_p.iter().zip(&sys.mean_weights).map(|(g, w)| -(g + w * multiplier)));
            rhs[nv] = 0.0;
        } else {
            multiplier = f64::NAN;
            for (q, &(s1, s2)) in layout.extra_slots.iter().enumerate() {
                m.values[s1] = sys.mean_weights[q];
                m.values[s2] = sys.mean_weights[q];
            }
            rhs.extend(sys.rhs_p.iter().map(|x| -x));
            rhs.push(0.0);
        }
        let (x, residual) = self.lu.solve(&m, &rhs)?;
        let velocity = x[..nv].to_vec();
        let mut pressure = x[nv..nv + np].to_vec();
        let multiplier = if pinned {
            let shift = pressure.iter().zip(&sys.mean_weights).map(|(p, w)| p * w).sum::<f64>() / total;
            pressure.iter_mut().for_each(|p| *p -= shift);
            multiplier
        } else {
            x[nv + np]
        };
        let divergence_residual = constraint_residual(&sys.b, &velocity, &sys.rhs_p, &sys.mean_weights);
        Ok(SaddleSolution { velocity, pressure, multiplier, residual, divergence_residual })
    }
}

/// `|| (B v - g) - m (m . (B v - g)) / (m . m) ||`.
pub fn constraint_residual(b: &SparseMatrix, v: &[f64], g: &[f64], m: &[f64]) -> f64 {
    let mut r = b.matvec(v);
    r.iter_mut().zip(g).for_each(|(x, y)| *x -= y);
    let mm: f64 = m.iter().map(|x| x * x).sum();
    if mm > 0.0 {
        let c = r.iter().zip(m).map(|(x, y)| x * y).sum::<f64>() / mm;
        r.iter_mut().zip(m).for_each(|(x, y)| *x -= c * y);
    }
    norm(&r)
}

/// One-shot saddle solve.
pub fn solve_saddle(sys: &SaddleSystem) -> Result<SaddleSolution> {
    SaddleSolver::new(DEFAULT_TOLERANCE).solve(sys)
}
