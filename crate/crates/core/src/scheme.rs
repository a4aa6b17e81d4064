//! Linearized backward-Euler and BDF2 steppers for the nudged
//! velocity-vorticity system.
//!
//! Each step does two solves: a Taylor-Hood saddle system for `(v, P)` with
//! the rotational term built from the previous (or extrapolated) vorticity,
//! then a scalar transport solve for `w` driven by the new velocity.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use crate::assembly::{
    assemble_convection_skew_into, assemble_cross_into, assemble_divergence, assemble_forcing, assemble_mass_into,
    assemble_stiffness_into, NudgeOperator,
};
use crate::diagnostics::{measure, Reference, RunReport, StepRecord};
use crate::error::{invalid, Error, Result};
use crate::femspace::{build_space, BcMode, Field, FunctionSpace};
use crate::linsolve::{constraint_residual, SaddleSolver, SaddleSystem, SparseLu, DEFAULT_TOLERANCE};
use crate::mesh::{coarse_partition, Coarse, CoarsePartition, Mesh};
use crate::sparse::{Pattern, SparseMatrix};
use crate::truth::{ClosedFormObserver, ObservationFrame, ObservationSource, Truth};

/// Any recorded norm above this counts as blow-up.
pub const BLOWUP_LIMIT: f64 = 1e10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SchemeKind {
    BackwardEuler,
    Bdf2,
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "be" | "euler" => Ok(SchemeKind::BackwardEuler),
            "bdf2" => Ok(SchemeKind::Bdf2),
            _ => Err(Error::Config(format!("unknown scheme '{s}' (expected be or bdf2)"))),
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchemeKind::BackwardEuler => "be",
            SchemeKind::Bdf2 => "bdf2",
        })
    }
}

#[derive(Clone, Default)]
pub struct NudgeConfig {
    pub mu1: f64,
    pub mu2: f64,
    /// Observation cells; `None` uses the computational triangles.
    pub partition: Option<CoarsePartition>,
    /// Where observations come from; `None` samples the simulation's truth.
    pub observations: Option<Arc<dyn ObservationSource>>,
}

impl fmt::Debug for NudgeConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NudgeConfig")
            .field("mu1", &self.mu1)
            .field("mu2", &self.mu2)
            .field("cells", &self.partition.as_ref().map(|p| p.num_cells()))
            .field("external_observations", &self.observations.is_some())
            .finish()
    }
}

#[derive(Clone, Debug)]
pub struct SchemeConfig {
    pub scheme: SchemeKind,
    pub dt: f64,
    pub nu: f64,
    pub final_time: f64,
    pub bc: BcMode,
    pub nudge: NudgeConfig,
    pub tolerance: f64,
}

impl SchemeConfig {
    pub fn new(scheme: SchemeKind, dt: f64, nu: f64, final_time: f64, bc: BcMode) -> Self {
        Self { scheme, dt, nu, final_time, bc, nudge: NudgeConfig::default(), tolerance: DEFAULT_TOLERANCE }
    }

    pub fn with_nudging(mut self, mu1: f64, mu2: f64) -> Self {
        self.nudge.mu1 = mu1;
        self.nudge.mu2 = mu2;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive and finite, got {x}")))
            }
        };
        pos("dt", self.dt)?;
        pos("nu", self.nu)?;
        pos("T", self.final_time)?;
        pos("tolerance", self.tolerance)?;
        for (name, mu) in [("mu1", self.nudge.mu1), ("mu2", self.nudge.mu2)] {
            if !(mu >= 0.0 && mu.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {mu}")));
            }
        }
        if self.bc == BcMode::None {
            return Err(Error::Config("boundary mode must be periodic or manufactured".into()));
        }
        Ok(())
    }

    /// Number of steps to reach `final_time`.
    pub fn num_steps(&self) -> usize {
        (self.final_time / self.dt - 1e-9).ceil().max(0.0) as usize
    }

    /// `key=value` echo used in reports and sidecar files.
    pub fn echo(&self) -> Vec<(String, String)> {
        vec![
            ("scheme".into(), self.scheme.to_string()),
            ("dt".into(), self.dt.to_string()),
            ("nu".into(), self.nu.to_string()),
            ("T".into(), self.final_time.to_string()),
            ("bc".into(), if self.bc == BcMode::Periodic { "periodic" } else { "manufactured" }.into()),
            ("mu1".into(), self.nudge.mu1.to_string()),
            ("mu2".into(), self.nudge.mu2.to_string()),
            ("tolerance".into(), self.tolerance.to_string()),
        ]
    }
}

/// Discrete state at `t = n dt`.
#[derive(Clone, Debug)]
pub struct SchemeState {
    pub t: f64,
    pub n: usize,
    pub v_now: Field,
    pub v_prev: Option<Field>,
    pub w_now: Field,
    pub w_prev: Option<Field>,
    pub p_now: Field,
}

#[derive(Clone, Debug)]
pub enum InitialCondition {
    Zero,
    /// Nodal interpolant of the truth at `t = 0`.
    Truth,
    Coefficients { velocity: Vec<f64>, vorticity: Vec<f64> },
}

/// Boundary DOFs of a space with their matrix slots, for strong Dirichlet elimination.
struct Dirichlet {
    dofs: Vec<usize>,
    is_bd: Vec<bool>,
}

impl Dirichlet {
    fn new(space: &FunctionSpace) -> Self {
        let dofs = space.boundary_dofs();
        let mut is_bd = vec![false; space.dof_count()];
        dofs.iter().for_each(|&d| is_bd[d] = true);
        Self { dofs, is_bd }
    }

    /// Replaces boundary rows by `a_ii x_i = a_ii g_i` and moves boundary columns to the right.
    fn apply(&self, a: &mut SparseMatrix, rhs: &mut [f64], g: &[f64]) {
        if self.dofs.is_empty() {
            return;
        }
        let p = a.pattern().clone();
        for i in 0..p.nrows {
            if self.is_bd[i] {
                continue;
            }
            for k in p.row(i) {
                let j = p.col_idx[k];
                if self.is_bd[j] {
                    rhs[i] -= a.values[k] * g[j];
                    a.values[k] = 0.0;
                }
            }
        }
        for &i in &self.dofs {
            let mut diag = 0.0;
            for k in p.row(i) {
                if p.col_idx[k] == i {
                    diag = a.values[k];
                } else {
                    a.values[k] = 0.0;
                }
            }
            if diag == 0.0 {
                diag = 1.0;
                a.add(i, i, 1.0);
            }
            rhs[i] = diag * g[i];
        }
    }
}

/// A configured problem: spaces, time-independent matrices and solver caches.
pub struct Simulation {
    config: SchemeConfig,
    problem: Arc<dyn Truth>,
    vel: Arc<FunctionSpace>,
    pres: Arc<FunctionSpace>,
    vort: Arc<FunctionSpace>,
    pattern_v: Arc<Pattern>,
    pattern_w: Arc<Pattern>,
    mass_v: SparseMatrix,
    stiff_v: SparseMatrix,
    mass_w: SparseMatrix,
    stiff_w: SparseMatrix,
    nudge_v: Option<(NudgeOperator, SparseMatrix)>,
    nudge_w: Option<(NudgeOperator, SparseMatrix)>,
    div: SparseMatrix,
    /// `div` with boundary velocity columns removed.
    div_interior: SparseMatrix,
    mean_weights: Vec<f64>,
    /// `(1, phi_j)` per velocity dof; used to fix the mean flow on periodic meshes.
    vel_weights: Option<Vec<f64>>,
    bc_v: Dirichlet,
    bc_w: Dirichlet,
    observer: Option<Arc<dyn ObservationSource>>,
    saddle: SaddleSolver,
    scalar: SparseLu,
    last_div_residual: f64,
}

impl Simulation {
    pub fn new(mesh: Arc<Mesh>, config: SchemeConfig, problem: Arc<dyn Truth>) -> Result<Self> {
        config.validate()?;
        if (config.bc == BcMode::Periodic) != mesh.is_periodic() {
            return Err(Error::Config("periodic boundary mode requires a periodic mesh and vice versa".into()));
        }
        let pbc = if config.bc == BcMode::Periodic { BcMode::Periodic } else { BcMode::None };
        let vel = build_space(mesh.clone(), 2, 2, config.bc, false)?;
        let pres = build_space(mesh.clone(), 1, 1, pbc, true)?;
        let vort = build_space(mesh.clone(), 2, 1, config.bc, false)?;

        let partition = match &config.nudge.partition {
            Some(p) => p.clone(),
            None => coarse_partition(&mesh, Coarse::Same)?,
        };
        let (mu1, mu2) = (config.nudge.mu1, config.nudge.mu2);
        let op_v = (mu1 > 0.0).then(|| NudgeOperator::new(partition.clone(), vel.clone())).transpose()?;
        let op_w = (mu2 > 0.0).then(|| NudgeOperator::new(partition.clone(), vort.clone())).transpose()?;

        let pattern_for = |space: &FunctionSpace, op: &Option<NudgeOperator>| {
            let mut cliques: Vec<Vec<usize>> = (0..mesh.num_triangles()).map(|t| space.cell_dofs(t)).collect();
            if let Some(op) = op {
                cliques.extend(op.cliques());
            }
            Arc::new(Pattern::from_cliques(space.dof_count(), cliques.iter().map(Vec::as_slice)))
        };
        let pattern_v = pattern_for(&vel, &op_v);
        let pattern_w = pattern_for(&vort, &op_w);

        let build = |pattern: &Arc<Pattern>, f: &dyn Fn(&mut SparseMatrix)| {
            let mut m = SparseMatrix::zeros(pattern.clone());
            f(&mut m);
            m
        };
        let mass_v = build(&pattern_v, &|m| assemble_mass_into(&vel, 1.0, m));
        let stiff_v = build(&pattern_v, &|m| assemble_stiffness_into(&vel, 1.0, m));
        let mass_w = build(&pattern_w, &|m| assemble_mass_into(&vort, 1.0, m));
        let stiff_w = build(&pattern_w, &|m| assemble_stiffness_into(&vort, 1.0, m));
        let nudge_v = op_v.map(|op| {
            let m = build(&pattern_v, &|m| op.assemble_matrix_into(mu1, m));
            (op, m)
        });
        let nudge_w = op_w.map(|op| {
            let m = build(&pattern_w, &|m| op.assemble_matrix_into(mu2, m));
            (op, m)
        });

        let div = assemble_divergence(&vel, &pres)?;
        let bc_v = Dirichlet::new(&vel);
        let bc_w = Dirichlet::new(&vort);
        let mut div_interior = div.clone();
        {
            let p = div.pattern();
            for k in 0..p.nnz() {
                if bc_v.is_bd[p.col_idx[k]] {
                    div_interior.values[k] = 0.0;
                }
            }
        }
        let mean_weights = assemble_forcing(&pres, &|_, _, _| [1.0, 0.0], 0.0);
        let vel_weights = (config.bc == BcMode::Periodic).then(|| assemble_forcing(&vel, &|_, _, _| [1.0, 1.0], 0.0));

        let observer = match (&config.nudge.observations, mu1 > 0.0 || mu2 > 0.0) {
            (Some(o), _) => Some(o.clone()),
            (None, true) => Some(Arc::new(ClosedFormObserver::new(problem.clone(), &mesh, &partition)?) as Arc<dyn ObservationSource>),
            (None, false) => None,
        };
        if let Some(o) = &observer {
            if o.num_cells() != partition.num_cells() {
                return Err(Error::Config("observation source and coarse partition disagree on cell count".into()));
            }
        }

        let tol = config.tolerance;
        Ok(Self {
            config,
            problem,
            vel,
            pres,
            vort,
            pattern_v,
            pattern_w,
            mass_v,
            stiff_v,
            mass_w,
            stiff_w,
            nudge_v,
            nudge_w,
            div,
            div_interior,
            mean_weights,
            vel_weights,
            bc_v,
            bc_w,
            observer,
            saddle: SaddleSolver::new(tol),
            scalar: SparseLu::new(tol),
            last_div_residual: 0.0,
        })
    }

    pub fn config(&self) -> &SchemeConfig {
        &self.config
    }

    pub fn velocity_space(&self) -> &Arc<FunctionSpace> {
        &self.vel
    }

    pub fn pressure_space(&self) -> &Arc<FunctionSpace> {
        &self.pres
    }

    pub fn vorticity_space(&self) -> &Arc<FunctionSpace> {
        &self.vort
    }

    pub fn problem(&self) -> &Arc<dyn Truth> {
        &self.problem
    }

    pub fn num_steps(&self) -> usize {
        self.config.num_steps()
    }

    /// Scaled divergence residual of the last velocity solve.
    pub fn last_divergence_residual(&self) -> f64 {
        self.last_div_residual
    }

    /// Discrete divergence matrix `B[q][j] = (psi_q, div phi_j)`.
    pub fn divergence_matrix(&self) -> &SparseMatrix {
        &self.div
    }

    /// `||B v||` with the constant-pressure direction removed, relative to `max|B| ||v||`.
    pub fn divergence_residual(&self, v: &Field) -> f64 {
        let scale = self.div.max_abs() * v.coeffs.iter().map(|x| x * x).sum::<f64>().sqrt();
        if scale == 0.0 {
            return 0.0;
        }
        constraint_residual(&self.div, &v.coeffs, &vec![0.0; self.pres.dof_count()], &self.mean_weights) / scale
    }

    pub fn initial_state(&self, ic: &InitialCondition) -> Result<SchemeState> {
        let (v, w, p) = match ic {
            InitialCondition::Zero => {
                (Field::zeros(self.vel.clone()), Field::zeros(self.vort.clone()), Field::zeros(self.pres.clone()))
            }
            InitialCondition::Truth => {
                let tr = &self.problem;
                let v = Field::interpolate(self.vel.clone(), |x, y| tr.velocity(x, y, 0.0));
                let w = Field::interpolate_scalar(self.vort.clone(), |x, y| tr.vorticity(x, y, 0.0));
                let mut p = Field::interpolate_scalar(self.pres.clone(), |x, y| tr.pressure(x, y, 0.0));
                let total: f64 = self.mean_weights.iter().sum();
                let mean = p.coeffs.iter().zip(&self.mean_weights).map(|(a, b)| a * b).sum::<f64>() / total;
                p.coeffs.iter_mut().for_each(|c| *c -= mean);
                (v, w, p)
            }
            InitialCondition::Coefficients { velocity, vorticity } => (
                Field::from_coeffs(self.vel.clone(), velocity.clone())?,
                Field::from_coeffs(self.vort.clone(), vorticity.clone())?,
                Field::zeros(self.pres.clone()),
            ),
        };
        Ok(SchemeState { t: 0.0, n: 0, v_now: v, v_prev: None, w_now: w, w_prev: None, p_now: p })
    }

    fn observations(&self, t: f64) -> Result<Option<ObservationFrame>> {
        let Some(obs) = &self.observer else { return Ok(None) };
        if self.nudge_v.is_none() && self.nudge_w.is_none() {
            return Ok(None);
        }
        let frame = obs.observe(t, self.nudge_w.is_some())?;
        if self.nudge_w.is_some() && frame.vorticity_means.is_none() {
            return Err(Error::Config("vorticity nudging requires vorticity observations".into()));
        }
        Ok(Some(frame))
    }

    /// Advances one step with whichever scheme is configured; BDF2 takes a
    /// backward-Euler step to produce its first level.
    pub fn step(&mut self, state: &SchemeState) -> Result<SchemeState> {
        match self.config.scheme {
            SchemeKind::BackwardEuler => self.step_be(state),
            SchemeKind::Bdf2 if state.v_prev.is_none() => self.step_be(state),
            SchemeKind::Bdf2 => self.step_bdf2(state),
        }
    }

    pub fn step_be(&mut self, state: &SchemeState) -> Result<SchemeState> {
        self.check_state(state)?;
        let dt = self.config.dt;
        let hist_v = self.mass_v.matvec(&state.v_now.coeffs);
        let hist_w = self.mass_w.matvec(&state.w_now.coeffs);
        let scale = |mut x: Vec<f64>| {
            x.iter_mut().for_each(|a| *a /= dt);
            x
        };
        self.advance(state, 1.0, state.w_now.clone(), scale(hist_v), scale(hist_w))
    }

    pub fn step_bdf2(&mut self, state: &SchemeState) -> Result<SchemeState> {
        self.check_state(state)?;
        let (Some(v_prev), Some(w_prev)) = (&state.v_prev, &state.w_prev) else {
            return Err(Error::State("BDF2 step needs two time levels; take a startup step first".into()));
        };
        let dt = self.config.dt;
        let combo = |now: &[f64], prev: &[f64], a: f64, b: f64| -> Vec<f64> {
            now.iter().zip(prev).map(|(x, y)| a * x + b * y).collect()
        };
        let hv = self.mass_v.matvec(&combo(&state.v_now.coeffs, &v_prev.coeffs, 2.0 / dt, -0.5 / dt));
        let hw = self.mass_w.matvec(&combo(&state.w_now.coeffs, &w_prev.coeffs, 2.0 / dt, -0.5 / dt));
        let w_star = Field::from_coeffs(self.vort.clone(), combo(&state.w_now.coeffs, &w_prev.coeffs, 2.0, -1.0))?;
        self.advance(state, 1.5, w_star, hv, hw)
    }

    fn check_state(&self, state: &SchemeState) -> Result<()> {
        let ok = state.v_now.space().same_layout(&self.vel)
            && state.w_now.space().same_layout(&self.vort)
            && state.v_prev.as_ref().is_none_or(|f| f.space().same_layout(&self.vel))
            && state.w_prev.as_ref().is_none_or(|f| f.space().same_layout(&self.vort));
        if ok {
            Ok(())
        } else {
            Err(Error::State("state fields do not belong to this simulation's spaces".into()))
        }
    }

    /// Shared two-solve structure. `alpha` is the leading coefficient of the
    /// time difference, `hist_*` the mass-weighted history terms already divided by `dt`.
    fn advance(
        &mut self,
        state: &SchemeState,
        alpha: f64,
        w_star: Field,
        hist_v: Vec<f64>,
        hist_w: Vec<f64>,
    ) -> Result<SchemeState> {
        let dt = self.config.dt;
        let nu = self.config.nu;
        let n1 = state.n + 1;
        let t1 = n1 as f64 * dt;
        let obs = self.observations(t1)?;
        let problem = self.problem.clone();

        // velocity-pressure
        let mut a = SparseMatrix::zeros(self.pattern_v.clone());
        a.add_scaled(alpha / dt, &self.mass_v);
        a.add_scaled(nu, &self.stiff_v);
        if let Some((_, m)) = &self.nudge_v {
            a.add_scaled(1.0, m);
        }
        assemble_cross_into(&w_star, &self.vel, 1.0, &mut a)?;
        let mut rhs_v = assemble_forcing(&self.vel, &|x, y, t| problem.forcing(x, y, t), t1);
        rhs_v.iter_mut().zip(&hist_v).for_each(|(r, h)| *r += h);
        if let (Some((op, _)), Some(frame)) = (&self.nudge_v, &obs) {
            op.rhs_into(self.config.nudge.mu1, &frame.velocity_means, &mut rhs_v)?;
        }
        let mut g_v = vec![0.0; self.vel.dof_count()];
        for &d in &self.bc_v.dofs {
            let p = self.vel.node_coords()[d / 2];
            g_v[d] = problem.velocity(p[0], p[1], t1)[d % 2];
        }
        self.bc_v.apply(&mut a, &mut rhs_v, &g_v);
        let rhs_p = if self.bc_v.dofs.is_empty() {
            vec![0.0; self.pres.dof_count()]
        } else {
            let bg = self.div.matvec(&g_v);
            bg.iter().map(|x| -x).collect()
        };
        let sys = SaddleSystem {
            a,
            b: self.div_interior.clone(),
            mean_weights: self.mean_weights.clone(),
            rhs_v,
            rhs_p,
        };
        let sol = self.saddle.solve(&sys)?;
        let mut v_coeffs = sol.velocity;
        if let Some(wts) = &self.vel_weights {
            // Constants lie in the kernel of the viscous and divergence terms, so on a periodic box
            // the mean flow is set from the data, as boundary values are on the square.
            let target = assemble_forcing(&self.vel, &|x, y, t| problem.velocity(x, y, t), t1);
            let area: f64 = wts.iter().step_by(2).sum();
            for c in 0..2 {
                let have: f64 = v_coeffs.iter().zip(wts).skip(c).step_by(2).map(|(v, w)| v * w).sum();
                let want: f64 = target.iter().skip(c).step_by(2).sum();
                let shift = (have - want) / area;
                v_coeffs.iter_mut().skip(c).step_by(2).for_each(|v| *v -= shift);
            }
        }
        let v_new = Field::from_coeffs(self.vel.clone(), v_coeffs)?;
        let p_new = Field::from_coeffs(self.pres.clone(), sol.pressure)?;
        self.last_div_residual = self.divergence_residual(&v_new);

        // vorticity
        let mut aw = SparseMatrix::zeros(self.pattern_w.clone());
        aw.add_scaled(alpha / dt, &self.mass_w);
        aw.add_scaled(nu, &self.stiff_w);
        if let Some((_, m)) = &self.nudge_w {
            aw.add_scaled(1.0, m);
        }
        assemble_convection_skew_into(&v_new, &self.vort, 1.0, &mut aw)?;
        let mut rhs_w = assemble_forcing(&self.vort, &|x, y, t| [problem.rot_forcing(x, y, t), 0.0], t1);
        rhs_w.iter_mut().zip(&hist_w).for_each(|(r, h)| *r += h);
        if let (Some((op, _)), Some(frame)) = (&self.nudge_w, &obs) {
            let means: Vec<[f64; 2]> = frame
                .vorticity_means
                .as_ref()
                .expect("checked when observing")
                .iter()
                .map(|&m| [m, 0.0])
                .collect();
            op.rhs_into(self.config.nudge.mu2, &means, &mut rhs_w)?;
        }
        let mut g_w = vec![0.0; self.vort.dof_count()];
        for &d in &self.bc_w.dofs {
            let p = self.vort.node_coords()[d];
            g_w[d] = problem.vorticity(p[0], p[1], t1);
        }
        self.bc_w.apply(&mut aw, &mut rhs_w, &g_w);
        let (w_coeffs, _) = self.scalar.solve(&aw, &rhs_w)?;
        let w_new = Field::from_coeffs(self.vort.clone(), w_coeffs)?;

        let keep = self.config.scheme == SchemeKind::Bdf2;
        Ok(SchemeState {
            t: t1,
            n: n1,
            v_prev: keep.then(|| state.v_now.clone()),
            w_prev: keep.then(|| state.w_now.clone()),
            v_now: v_new,
            w_now: w_new,
            p_now: p_new,
        })
    }

    /// Steps from `initial` to the final time, recording every `record_stride`-th
    /// step (and always the first and last). `callback` sees every state.
    pub fn run(
        &mut self,
        initial: SchemeState,
        reference: &Reference,
        record_stride: usize,
        mut callback: impl FnMut(&SchemeState, Option<&StepRecord>) -> Result<()>,
    ) -> Result<(RunReport, SchemeState)> {
        if record_stride == 0 {
            return Err(invalid("record stride must be at least 1"));
        }
        let start = Instant::now();
        let steps = self.num_steps();
        let mut report = RunReport {
            label: String::new(),
            rows: Vec::with_capacity(steps / record_stride + 2),
            config: self.config.echo(),
            wall_clock_s: 0.0,
            solver_tolerance: self.config.tolerance,
        };
        let first = measure(&initial, reference, self.divergence_residual(&initial.v_now))?;
        callback(&initial, Some(&first))?;
        report.rows.push(first);
        let mut state = initial;
        for k in 1..=steps {
            state = self.step(&state)?;
            if state.v_now.coeffs.iter().chain(&state.w_now.coeffs).any(|x| !x.is_finite() || x.abs() > BLOWUP_LIMIT) {
                return Err(Error::BlowUp(format!("state exceeds {BLOWUP_LIMIT:e} at t = {}", state.t)));
            }
            if k % record_stride == 0 || k == steps {
                let row = measure(&state, reference, self.last_div_residual)?;
                if !(row.max_norm() <= BLOWUP_LIMIT) {
                    return Err(Error::BlowUp(format!("norm {:e} at t = {}", row.max_norm(), state.t)));
                }
                callback(&state, Some(&row))?;
                report.rows.push(row);
            } else {
                callback(&state, None)?;
            }
        }
        report.wall_clock_s = start.elapsed().as_secs_f64();
        Ok((report, state))
    }
}
