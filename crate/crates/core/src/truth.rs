//! Ground truth for the experiments: closed-form manufactured flows and
//! solver-generated twin trajectories, plus the coarse observations drawn
//! from either.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::assembly::{NudgeOperator, ASSEMBLY_QUAD_DEGREE};
use crate::error::{invalid, Error, Result};
use crate::femspace::{Field, FunctionSpace};
use crate::mesh::{CoarsePartition, Mesh};
use crate::quadrature::quadrature_rule;
use crate::scheme::{InitialCondition, SchemeConfig, Simulation};

/// A space-time flow `(u, p)` with its vorticity and the forcing that drives it.
///
/// Vorticity uses `rot u = du1/dy - du2/dx`. Gradients are `[[du1/dx, du1/dy], [du2/dx, du2/dy]]`.
pub trait Truth: Send + Sync {
    fn velocity(&self, x: f64, y: f64, t: f64) -> [f64; 2];
    fn pressure(&self, x: f64, y: f64, t: f64) -> f64;
    fn vorticity(&self, x: f64, y: f64, t: f64) -> f64;
    fn velocity_gradient(&self, x: f64, y: f64, t: f64) -> [[f64; 2]; 2];
    fn vorticity_gradient(&self, x: f64, y: f64, t: f64) -> [f64; 2];
    fn forcing(&self, x: f64, y: f64, t: f64) -> [f64; 2];
    fn rot_forcing(&self, x: f64, y: f64, t: f64) -> f64;
}

/// Fluid at rest with no forcing.
#[derive(Clone, Copy, Debug, Default)]
pub struct Quiescent;

impl Truth for Quiescent {
    fn velocity(&self, _: f64, _: f64, _: f64) -> [f64; 2] {
        [0.0; 2]
    }
    fn pressure(&self, _: f64, _: f64, _: f64) -> f64 {
        0.0
    }
    fn vorticity(&self, _: f64, _: f64, _: f64) -> f64 {
        0.0
    }
    fn velocity_gradient(&self, _: f64, _: f64, _: f64) -> [[f64; 2]; 2] {
        [[0.0; 2]; 2]
    }
    fn vorticity_gradient(&self, _: f64, _: f64, _: f64) -> [f64; 2] {
        [0.0; 2]
    }
    fn forcing(&self, _: f64, _: f64, _: f64) -> [f64; 2] {
        [0.0; 2]
    }
    fn rot_forcing(&self, _: f64, _: f64, _: f64) -> f64 {
        0.0
    }
}

/// `u = (cos k(y-t), sin k(x+t))`, `p = a(t) sin(x+y)`.
///
/// With `pressure_growth`, `a(t) = 1 + t^2`; otherwise `a = 1`, which keeps
/// the forcing bounded for arbitrarily long runs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ManufacturedCase {
    pub nu: f64,
    pub k: f64,
    pub pressure_growth: bool,
}

impl ManufacturedCase {
    /// The unit-square benchmark: `k = pi`, growing pressure.
    pub fn unit_square(nu: f64) -> Self {
        Self { nu, k: std::f64::consts::PI, pressure_growth: true }
    }

    /// A `2 pi`-periodic variant with bounded forcing.
    pub fn periodic(nu: f64) -> Self {
        Self { nu, k: 1.0, pressure_growth: false }
    }

    fn amplitude(&self, t: f64) -> f64 {
        if self.pressure_growth {
            1.0 + t * t
        } else {
            1.0
        }
    }
}

impl Truth for ManufacturedCase {
    fn velocity(&self, x: f64, y: f64, t: f64) -> [f64; 2] {
        let k = self.k;
        [(k * (y - t)).cos(), (k * (x + t)).sin()]
    }

    fn pressure(&self, x: f64, y: f64, t: f64) -> f64 {
        self.amplitude(t) * (x + y).sin()
    }

    fn vorticity(&self, x: f64, y: f64, t: f64) -> f64 {
        let k = self.k;
        -k * (k * (y - t)).sin() - k * (k * (x + t)).cos()
    }

    fn velocity_gradient(&self, x: f64, y: f64, t: f64) -> [[f64; 2]; 2] {
        let k = self.k;
        [[0.0, -k * (k * (y - t)).sin()], [k * (k * (x + t)).cos(), 0.0]]
    }

    fn vorticity_gradient(&self, x: f64, y: f64, t: f64) -> [f64; 2] {
        let k = self.k;
        [k * k * (k * (x + t)).sin(), -k * k * (k * (y - t)).cos()]
    }

    fn forcing(&self, x: f64, y: f64, t: f64) -> [f64; 2] {
        let (k, nu) = (self.k, self.nu);
        let (sa, ca) = (k * (y - t)).sin_cos();
        let (sb, cb) = (k * (x + t)).sin_cos();
        let gp = self.amplitude(t) * (x + y).cos();
        [k * sa + nu * k * k * ca - k * sb * sa + gp, k * cb + nu * k * k * sb + k * ca * cb + gp]
    }

    fn rot_forcing(&self, x: f64, y: f64, t: f64) -> f64 {
        let (k, nu) = (self.k, self.nu);
        let (sa, ca) = (k * (y - t)).sin_cos();
        let (sb, cb) = (k * (x + t)).sin_cos();
        k * k * (ca + sb) - nu * k * k * k * (sa + cb)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quantity {
    Velocity,
    Pressure,
    Vorticity,
    Forcing,
    RotForcing,
}

/// Evaluates one quantity of a truth; scalars are returned as `vec![value]`.
pub fn eval_truth(truth: &dyn Truth, what: Quantity, x: f64, y: f64, t: f64) -> Vec<f64> {
    match what {
        Quantity::Velocity => truth.velocity(x, y, t).to_vec(),
        Quantity::Pressure => vec![truth.pressure(x, y, t)],
        Quantity::Vorticity => vec![truth.vorticity(x, y, t)],
        Quantity::Forcing => truth.forcing(x, y, t).to_vec(),
        Quantity::RotForcing => vec![truth.rot_forcing(x, y, t)],
    }
}

/// Coarse-cell means of the truth at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationFrame {
    pub t: f64,
    pub velocity_means: Vec<[f64; 2]>,
    pub vorticity_means: Option<Vec<f64>>,
}

/// Anything that can produce observation frames on demand.
pub trait ObservationSource: Send + Sync {
    fn observe(&self, t: f64, include_vorticity: bool) -> Result<ObservationFrame>;
    fn num_cells(&self) -> usize;
}

/// Cell means of a closed-form truth by quadrature over the member triangles.
pub struct ClosedFormObserver {
    truth: Arc<dyn Truth>,
    /// Per coarse cell: physical quadrature points with weights.
    points: Vec<Vec<([f64; 2], f64)>>,
    areas: Vec<f64>,
}

impl ClosedFormObserver {
    pub fn new(truth: Arc<dyn Truth>, mesh: &Mesh, partition: &CoarsePartition) -> Result<Self> {
        if partition.cell_of().len() != mesh.num_triangles() {
            return Err(invalid("partition does not match mesh"));
        }
        let rule = quadrature_rule(ASSEMBLY_QUAD_DEGREE)?;
        let mut points = vec![Vec::new(); partition.num_cells()];
        for (t, &c) in partition.cell_of().iter().enumerate() {
            let [a, b, d] = mesh.triangle_coords(t);
            let jac = 2.0 * mesh.triangle_area(t);
            for (l, &w) in rule.points.iter().zip(&rule.weights) {
                let p = [
                    l[0] * a[0] + l[1] * b[0] + l[2] * d[0],
                    l[0] * a[1] + l[1] * b[1] + l[2] * d[1],
                ];
                points[c].push((p, w * jac));
            }
        }
        Ok(Self { truth, points, areas: partition.cell_area().to_vec() })
    }
}

impl ObservationSource for ClosedFormObserver {
    fn observe(&self, t: f64, include_vorticity: bool) -> Result<ObservationFrame> {
        let mut velocity_means = Vec::with_capacity(self.points.len());
        let mut vort = Vec::with_capacity(if include_vorticity { self.points.len() } else { 0 });
        for (pts, &area) in self.points.iter().zip(&self.areas) {
            let mut m = [0.0; 2];
            let mut mw = 0.0;
            for &(p, w) in pts {
                let u = self.truth.velocity(p[0], p[1], t);
                m[0] += w * u[0];
                m[1] += w * u[1];
                if include_vorticity {
                    mw += w * self.truth.vorticity(p[0], p[1], t);
                }
            }
            velocity_means.push([m[0] / area, m[1] / area]);
            if include_vorticity {
                vort.push(mw / area);
            }
        }
        Ok(ObservationFrame { t, velocity_means, vorticity_means: include_vorticity.then_some(vort) })
    }

    fn num_cells(&self) -> usize {
        self.areas.len()
    }
}

/// One stored snapshot of a twin run.
#[derive(Clone, Debug, PartialEq)]
pub struct TwinFrame {
    pub t: f64,
    pub velocity: Vec<f64>,
    pub vorticity: Vec<f64>,
}

/// Snapshots `(t, v, w)` of a reference run.
#[derive(Clone, Debug, PartialEq)]
pub struct TwinTrajectory {
    pub dt: f64,
    pub stride: usize,
    pub frames: Vec<TwinFrame>,
}

const TWIN_MAGIC: &[u8; 5] = b"VVDA1";

impl TwinTrajectory {
    /// Frame stored at time `t` (matched to a small fraction of `dt`).
    pub fn frame_at(&self, t: f64) -> Result<&TwinFrame> {
        let tol = 1e-6 * self.dt;
        let i = self.frames.partition_point(|f| f.t < t - tol);
        match self.frames.get(i) {
            Some(f) if (f.t - t).abs() <= tol => Ok(f),
            _ => Err(Error::OutOfRange { t }),
        }
    }

    pub fn velocity_dofs(&self) -> usize {
        self.frames.first().map_or(0, |f| f.velocity.len())
    }

    pub fn vorticity_dofs(&self) -> usize {
        self.frames.first().map_or(0, |f| f.vorticity.len())
    }

    /// Binary layout (all little-endian): magic `VVDA1`; `u64` frame count,
    /// velocity DOFs, vorticity DOFs, stride; `f64` dt; per frame an index
    /// entry `(f64 t, u64 byte offset)`; then the raw `f64` fields
    /// (velocity then vorticity) of each frame.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let (nv, nw) = (self.velocity_dofs(), self.vorticity_dofs());
        let nf = self.frames.len();
        let mut out = BufWriter::new(fs::File::create(path)?);
        out.write_all(TWIN_MAGIC)?;
        for v in [nf as u64, nv as u64, nw as u64, self.stride as u64] {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&self.dt.to_le_bytes())?;
        let header = TWIN_MAGIC.len() + 5 * 8 + nf * 16;
        let frame_bytes = 8 * (nv + nw);
        for (i, f) in self.frames.iter().enumerate() {
            if f.velocity.len() != nv || f.vorticity.len() != nw {
                return Err(invalid("twin frames have inconsistent sizes"));
            }
            out.write_all(&f.t.to_le_bytes())?;
            out.write_all(&((header + i * frame_bytes) as u64).to_le_bytes())?;
        }
        for f in &self.frames {
            for x in f.velocity.iter().chain(&f.vorticity) {
                out.write_all(&x.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        let bad = |m: &str| Error::Parse(format!("twin file: {m}"));
        if bytes.len() < 45 || &bytes[..5] != TWIN_MAGIC {
            return Err(bad("missing VVDA1 header"));
        }
        let word = |at: usize| -> Result<[u8; 8]> {
            bytes.get(at..at + 8).map(|s| s.try_into().unwrap()).ok_or_else(|| bad("truncated"))
        };
        let u = |at: usize| word(at).map(u64::from_le_bytes);
        let f = |at: usize| word(at).map(f64::from_le_bytes);
        let (nf, nv, nw, stride) = (u(5)? as usize, u(13)? as usize, u(21)? as usize, u(29)? as usize);
        let dt = f(37)?;
        let mut frames = Vec::with_capacity(nf);
        for i in 0..nf {
            let t = f(45 + 16 * i)?;
            let off = u(53 + 16 * i)? as usize;
            let read = |start: usize, n: usize| -> Result<Vec<f64>> { (0..n).map(|j| f(start + 8 * j)).collect() };
            frames.push(TwinFrame { t, velocity: read(off, nv)?, vorticity: read(off + 8 * nv, nw)? });
        }
        Ok(Self { dt, stride, frames })
    }
}

/// Runs the unnudged scheme from `initial` and keeps every `stride`-th state,
/// including `t = 0`.
pub fn twin_generate(
    mesh: Arc<Mesh>,
    mut config: SchemeConfig,
    problem: Arc<dyn Truth>,
    initial: InitialCondition,
    stride: usize,
) -> Result<TwinTrajectory> {
    if stride == 0 {
        return Err(invalid("twin stride must be at least 1"));
    }
    config.nudge.mu1 = 0.0;
    config.nudge.mu2 = 0.0;
    config.nudge.observations = None;
    let dt = config.dt;
    let mut sim = Simulation::new(mesh, config, problem)?;
    let mut state = sim.initial_state(&initial)?;
    let snap = |s: &crate::scheme::SchemeState| TwinFrame {
        t: s.t,
        velocity: s.v_now.coeffs.clone(),
        vorticity: s.w_now.coeffs.clone(),
    };
    let mut frames = vec![snap(&state)];
    for n in 1..=sim.num_steps() {
        state = sim.step(&state)?;
        if n % stride == 0 {
            frames.push(snap(&state));
        }
    }
    Ok(TwinTrajectory { dt, stride, frames })
}

/// Exact cell means of stored twin fields.
pub struct TwinObserver {
    twin: Arc<TwinTrajectory>,
    velocity: NudgeOperator,
    vorticity: NudgeOperator,
}

impl TwinObserver {
    pub fn new(
        twin: Arc<TwinTrajectory>,
        velocity_space: Arc<FunctionSpace>,
        vorticity_space: Arc<FunctionSpace>,
        partition: &CoarsePartition,
    ) -> Result<Self> {
        if twin.velocity_dofs() != velocity_space.dof_count() || twin.vorticity_dofs() != vorticity_space.dof_count() {
            return Err(invalid("twin trajectory was generated on different spaces"));
        }
        Ok(Self {
            twin,
            velocity: NudgeOperator::new(partition.clone(), velocity_space)?,
            vorticity: NudgeOperator::new(partition.clone(), vorticity_space)?,
        })
    }

    pub fn twin(&self) -> &Arc<TwinTrajectory> {
        &self.twin
    }
}

impl ObservationSource for TwinObserver {
    fn observe(&self, t: f64, include_vorticity: bool) -> Result<ObservationFrame> {
        let frame = self.twin.frame_at(t)?;
        let v = Field::from_coeffs(self.velocity.space().clone(), frame.velocity.clone())?;
        let vorticity_means = if include_vorticity {
            let w = Field::from_coeffs(self.vorticity.space().clone(), frame.vorticity.clone())?;
            Some(self.vorticity.cell_means(&w).into_iter().map(|m| m[0]).collect())
        } else {
            None
        };
        Ok(ObservationFrame { t, velocity_means: self.velocity.cell_means(&v), vorticity_means })
    }

    fn num_cells(&self) -> usize {
        self.velocity.partition().num_cells()
    }
}

/// Samples observations from either kind of truth.
pub fn sample_observation(source: &dyn ObservationSource, t: f64, include_vorticity: bool) -> Result<ObservationFrame> {
    source.observe(t, include_vorticity)
}
