//! Batch drivers behind the `vvda` command line.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;

use crate::diagnostics::{fit_rates, write_csv, write_plot, PlotMetric, RateTable, Reference, RunReport};
use crate::error::{Error, Result};
use crate::femspace::BcMode;
use crate::mesh::{generate_structured, Mesh, Rect};
use crate::scheme::{InitialCondition, SchemeConfig, SchemeKind, Simulation};
use crate::truth::{twin_generate, ManufacturedCase, Quiescent, TwinObserver, TwinTrajectory, Truth};

/// Minimum run length accepted by the stability driver.
pub const STABILITY_MIN_STEPS: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Convergence,
    Decay,
    Stability,
    Twin,
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "convergence" => Ok(Command::Convergence),
            "decay" => Ok(Command::Decay),
            "stability" => Ok(Command::Stability),
            "twin" => Ok(Command::Twin),
            _ => Err(Error::Config(format!("unknown command '{s}'"))),
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Command::Convergence => "convergence",
            Command::Decay => "decay",
            Command::Stability => "stability",
            Command::Twin => "twin",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForcingKind {
    Manufactured,
    Zero,
}

/// Fully validated parameters of one command.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub command: Command,
    pub scheme: SchemeKind,
    pub dt: f64,
    pub final_time: f64,
    pub nu: f64,
    pub mu1: f64,
    /// `None`: follow `mu1`.
    pub mu2: Option<f64>,
    /// Number of meshes in the ladder `n = 4, 8, 16, ...`.
    pub levels: Option<usize>,
    /// Cell side length of a single mesh.
    pub h: Option<f64>,
    pub bc: BcMode,
    pub mu_list: Option<Vec<f64>>,
    pub out: PathBuf,
    pub record_stride: usize,
    pub forcing: ForcingKind,
    pub twin_file: Option<PathBuf>,
}

const KEYS: &[&str] = &[
    "scheme", "dt", "T", "nu", "mu1", "mu2", "levels", "h", "bc", "mu-list", "out", "stride", "forcing", "twin-file",
];

/// Reads `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!("config line {}: expected key=value", i + 1)));
        };
        let k = k.trim().trim_start_matches("--");
        if !KEYS.contains(&k) {
            return Err(Error::Config(format!("config line {}: unknown key '{k}'", i + 1)));
        }
        map.insert(k.to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn num<T: FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
    map.get(key)
        .map(|s| s.parse::<T>().map_err(|_| Error::Config(format!("cannot parse {key} = '{s}'"))))
        .transpose()
}

impl ExperimentSpec {
    /// Builds and validates a spec from merged `key -> value` settings.
    pub fn from_map(command: Command, map: &BTreeMap<String, String>) -> Result<Self> {
        let scheme = map.get("scheme").map(|s| s.parse()).transpose()?.unwrap_or(SchemeKind::Bdf2);
        let bc = match map.get("bc").map(String::as_str) {
            None | Some("manufactured") => BcMode::Dirichlet,
            Some("periodic") => BcMode::Periodic,
            Some(other) => return Err(Error::Config(format!("unknown bc '{other}' (expected periodic or manufactured)"))),
        };
        let forcing = match map.get("forcing").map(String::as_str) {
            None | Some("manufactured") => ForcingKind::Manufactured,
            Some("zero") => ForcingKind::Zero,
            Some(other) => return Err(Error::Config(format!("unknown forcing '{other}'"))),
        };
        let mu_list = map
            .get("mu-list")
            .map(|s| {
                s.split(',')
                    .map(|x| x.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad mu-list entry '{x}'"))))
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()?;
        let out = map.get("out").map(PathBuf::from).ok_or_else(|| Error::Config("--out is required".into()))?;
        let spec = Self {
            command,
            scheme,
            dt: num(map, "dt")?.unwrap_or(0.001),
            final_time: num(map, "T")?.unwrap_or(1.0),
            nu: num(map, "nu")?.unwrap_or(1.0),
            mu1: num(map, "mu1")?.unwrap_or(100.0),
            mu2: num(map, "mu2")?,
            levels: num(map, "levels")?,
            h: num(map, "h")?,
            bc,
            mu_list,
            out,
            record_stride: num(map, "stride")?.unwrap_or(1),
            forcing,
            twin_file: map.get("twin-file").map(PathBuf::from),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        for (name, x) in [("dt", self.dt), ("T", self.final_time), ("nu", self.nu)] {
            if !(x > 0.0 && x.is_finite()) {
                return cfg(format!("{name} must be positive, got {x}"));
            }
        }
        let mus = self.mu_list.clone().unwrap_or_default();
        for mu in mus.iter().chain([self.mu1].iter()).chain(self.mu2.iter()) {
            if !(*mu >= 0.0 && mu.is_finite()) {
                return cfg(format!("nudging parameters must be non-negative, got {mu}"));
            }
        }
        if self.mu_list.as_ref().is_some_and(|l| l.is_empty()) {
            return cfg("mu-list is empty".into());
        }
        if self.levels.is_some() && self.h.is_some() {
            return cfg("--levels and --h are mutually exclusive".into());
        }
        if self.levels == Some(0) {
            return cfg("levels must be at least 1".into());
        }
        if let Some(h) = self.h {
            if !(h > 0.0 && h.is_finite()) || self.mesh_subdivisions(h) == 0 {
                return cfg(format!("invalid mesh size h = {h}"));
            }
        }
        if self.record_stride == 0 {
            return cfg("stride must be at least 1".into());
        }
        match self.command {
            Command::Stability => {
                if self.bc != BcMode::Periodic {
                    return cfg("stability runs need --bc periodic".into());
                }
                if self.config(self.mu1, self.mu2()).num_steps() < STABILITY_MIN_STEPS {
                    return cfg(format!("stability runs need at least {STABILITY_MIN_STEPS} steps (T/dt)"));
                }
            }
            Command::Convergence if self.h.is_some() => {
                return cfg("convergence takes --levels, not --h".into());
            }
            _ => {}
        }
        Ok(())
    }

    pub fn mu2(&self) -> f64 {
        self.mu2.unwrap_or(self.mu1)
    }

    pub fn domain(&self) -> Rect {
        match self.bc {
            BcMode::Periodic => Rect::periodic_box(),
            _ => Rect::unit_square(),
        }
    }

    fn mesh_subdivisions(&self, h: f64) -> usize {
        (self.domain().width() / h).round() as usize
    }

    /// Subdivisions per side of every mesh the command uses.
    pub fn mesh_ladder(&self) -> Vec<usize> {
        match (self.levels, self.h) {
            (_, Some(h)) => vec![self.mesh_subdivisions(h)],
            (Some(k), None) => (0..k).map(|i| 4usize << i).collect(),
            (None, None) if self.command == Command::Convergence => (0..4).map(|i| 4usize << i).collect(),
            (None, None) if self.bc == BcMode::Periodic => vec![16],
            (None, None) => vec![32],
        }
    }

    pub fn problem(&self) -> Arc<dyn Truth> {
        match (self.forcing, self.bc) {
            (ForcingKind::Zero, _) => Arc::new(Quiescent),
            (_, BcMode::Periodic) => Arc::new(ManufacturedCase::periodic(self.nu)),
            _ => Arc::new(ManufacturedCase::unit_square(self.nu)),
        }
    }

    pub fn config(&self, mu1: f64, mu2: f64) -> SchemeConfig {
        SchemeConfig::new(self.scheme, self.dt, self.nu, self.final_time, self.bc).with_nudging(mu1, mu2)
    }

    /// `(mu1, mu2)` pairs of a sweep; each list entry sets `mu1`, and `mu2` follows it unless given.
    pub fn mu_pairs(&self) -> Vec<(f64, f64)> {
        match &self.mu_list {
            Some(l) => l.iter().map(|&m| (m, self.mu2.unwrap_or(m))).collect(),
            None => vec![(self.mu1, self.mu2())],
        }
    }

    pub fn mesh(&self, n: usize) -> Result<Arc<Mesh>> {
        generate_structured(n, self.domain(), self.bc == BcMode::Periodic).map(Arc::new)
    }

    /// `key=value` echo written to `run.cfg`.
    pub fn echo(&self) -> String {
        let mut s = format!("command={}\nscheme={}\ndt={}\nT={}\nnu={}\nmu1={}\nmu2={}\n", self.command, self.scheme, self.dt, self.final_time, self.nu, self.mu1, self.mu2());
        s += &format!("meshes={}\n", self.mesh_ladder().iter().map(|n| n.to_string()).collect::<Vec<_>>().join(","));
        s += &format!("bc={}\n", if self.bc == BcMode::Periodic { "periodic" } else { "manufactured" });
        if let Some(l) = &self.mu_list {
            s += &format!("mu-list={}\n", l.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(","));
        }
        s += &format!("stride={}\nforcing={}\n", self.record_stride, if self.forcing == ForcingKind::Zero { "zero" } else { "manufactured" });
        if let Some(p) = &self.twin_file {
            s += &format!("twin-file={}\n", p.display());
        }
        s
    }

    fn prepare_out(&self) -> Result<()> {
        fs::create_dir_all(&self.out)?;
        fs::write(self.out.join("run.cfg"), self.echo())?;
        Ok(())
    }
}

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Parse(_) | Error::Unsupported(_) => 2,
        Error::Solver { .. } | Error::State(_) | Error::Geometry(_) => 3,
        Error::BlowUp(_) => 4,
        Error::Io(_) | Error::OutOfRange { .. } => 5,
    }
}

/// Thread pool honouring `VVDA_THREADS`.
pub fn sweep_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(s) = std::env::var("VVDA_THREADS") {
        let n: usize = s.trim().parse().map_err(|_| Error::Config(format!("VVDA_THREADS must be a positive integer, got '{s}'")))?;
        if n == 0 {
            return Err(Error::Config("VVDA_THREADS must be positive".into()));
        }
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn label(mu1: f64, mu2: f64) -> String {
    format!("mu1={mu1}, mu2={mu2}")
}

fn tag(mu1: f64, mu2: f64) -> String {
    format!("mu1_{mu1}_mu2_{mu2}")
}

/// One zero-initial-condition run against the closed-form truth.
pub fn run_manufactured(spec: &ExperimentSpec, n: usize, mu1: f64, mu2: f64) -> Result<RunReport> {
    let problem = spec.problem();
    let mut sim = Simulation::new(spec.mesh(n)?, spec.config(mu1, mu2), problem.clone())?;
    let s0 = sim.initial_state(&InitialCondition::Zero)?;
    let (mut report, _) = sim.run(s0, &Reference::Analytic(problem), spec.record_stride, |_, _| Ok(()))?;
    report.label = label(mu1, mu2);
    report.config.push(("n".into(), n.to_string()));
    Ok(report)
}

/// Mesh-refinement study at fixed `dt`; writes one CSV per level and `rates.csv`.
pub fn cmd_convergence(spec: &ExperimentSpec) -> Result<RateTable> {
    spec.prepare_out()?;
    let ladder = spec.mesh_ladder();
    let pool = sweep_pool()?;
    let (mu1, mu2) = (spec.mu1, spec.mu2());
    let results: Vec<Result<RunReport>> = pool.install(|| {
        ladder
            .par_iter()
            .map(|&n| {
                let r = run_manufactured(spec, n, mu1, mu2)?;
                write_csv(&r, spec.out.join(format!("level_n{n}.csv")))?;
                Ok(r)
            })
            .collect()
    });
    let reports = results.into_iter().collect::<Result<Vec<_>>>()?;
    let width = spec.domain().width();
    let levels: Vec<(f64, f64, f64)> = ladder
        .iter()
        .zip(&reports)
        .map(|(&n, r)| {
            let last = r.last().expect("reports contain the initial row");
            (width / n as f64, last.err_v_l2, last.err_w_l2)
        })
        .collect();
    let table = fit_rates(&levels)?;
    fs::write(spec.out.join("rates.csv"), table.to_csv())?;
    Ok(table)
}

/// Runs every nudging pair of the sweep in parallel.
fn sweep(spec: &ExperimentSpec, prefix: &str) -> Result<Vec<RunReport>> {
    spec.prepare_out()?;
    let n = spec.mesh_ladder()[0];
    let pool = sweep_pool()?;
    let results: Vec<Result<RunReport>> = pool.install(|| {
        spec.mu_pairs()
            .par_iter()
            .map(|&(m1, m2)| {
                let r = run_manufactured(spec, n, m1, m2)?;
                write_csv(&r, spec.out.join(format!("{prefix}_{}.csv", tag(m1, m2))))?;
                Ok(r)
            })
            .collect()
    });
    results.into_iter().collect()
}

/// Error-versus-time curves for each nudging strength, plus plots.
pub fn cmd_decay(spec: &ExperimentSpec) -> Result<Vec<RunReport>> {
    let reports = sweep(spec, "decay")?;
    write_plot(&reports, PlotMetric::VelocityError, spec.out.join("decay_velocity.svg"))?;
    write_plot(&reports, PlotMetric::VorticityError, spec.out.join("decay_vorticity.svg"))?;
    Ok(reports)
}

/// Long periodic runs; blow-up surfaces as [`Error::BlowUp`].
pub fn cmd_stability(spec: &ExperimentSpec) -> Result<Vec<RunReport>> {
    sweep(spec, "stability")
}

/// Twin experiment: a reference run from the interpolated truth, then
/// assimilation of its observations from a zero state for each nudging pair.
/// Errors in the reports are gaps to the twin.
pub fn cmd_twin(spec: &ExperimentSpec) -> Result<Vec<RunReport>> {
    spec.prepare_out()?;
    let n = spec.mesh_ladder()[0];
    let mesh = spec.mesh(n)?;
    let problem = spec.problem();
    let twin = match &spec.twin_file {
        Some(p) => TwinTrajectory::load(p)?,
        None => {
            let t = twin_generate(mesh.clone(), spec.config(0.0, 0.0), problem.clone(), InitialCondition::Truth, 1)?;
            t.save(spec.out.join("twin.bin"))?;
            t
        }
    };
    if (twin.dt - spec.dt).abs() > 1e-12 * spec.dt || twin.stride != 1 {
        return Err(Error::Config("twin trajectory must be stored every step with the run's dt".into()));
    }
    let twin = Arc::new(twin);
    let pool = sweep_pool()?;
    let results: Vec<Result<RunReport>> = pool.install(|| {
        spec.mu_pairs()
            .par_iter()
            .map(|&(m1, m2)| {
                let r = assimilate_twin(spec, mesh.clone(), problem.clone(), twin.clone(), m1, m2, &InitialCondition::Zero)?;
                write_csv(&r, spec.out.join(format!("twin_{}.csv", tag(m1, m2))))?;
                Ok(r)
            })
            .collect()
    });
    let reports = results.into_iter().collect::<Result<Vec<_>>>()?;
    write_plot(&reports, PlotMetric::VelocityError, spec.out.join("twin_velocity.svg"))?;
    write_plot(&reports, PlotMetric::VorticityError, spec.out.join("twin_vorticity.svg"))?;
    Ok(reports)
}

/// Nudges toward `twin` from `initial`; report errors are gaps to the twin.
pub fn assimilate_twin(
    spec: &ExperimentSpec,
    mesh: Arc<Mesh>,
    problem: Arc<dyn Truth>,
    twin: Arc<TwinTrajectory>,
    mu1: f64,
    mu2: f64,
    initial: &InitialCondition,
) -> Result<RunReport> {
    let mut cfg = spec.config(mu1, mu2);
    let probe = Simulation::new(mesh.clone(), spec.config(0.0, 0.0), problem.clone())?;
    let partition = crate::mesh::coarse_partition(&mesh, crate::mesh::Coarse::Same)?;
    let observer = TwinObserver::new(twin.clone(), probe.velocity_space().clone(), probe.vorticity_space().clone(), &partition)?;
    cfg.nudge.observations = Some(Arc::new(observer));
    let mut sim = Simulation::new(mesh, cfg, problem)?;
    let s0 = sim.initial_state(initial)?;
    let (mut report, _) = sim.run(s0, &Reference::Twin(twin), spec.record_stride, |_, _| Ok(()))?;
    report.label = label(mu1, mu2);
    Ok(report)
}

/// Dispatches a command; returns a one-line summary for the terminal.
pub fn execute(spec: &ExperimentSpec) -> Result<String> {
    match spec.command {
        Command::Convergence => {
            let t = cmd_convergence(spec)?;
            Ok(t.to_csv())
        }
        Command::Decay | Command::Stability | Command::Twin => {
            let reports = match spec.command {
                Command::Decay => cmd_decay(spec)?,
                Command::Stability => cmd_stability(spec)?,
                _ => cmd_twin(spec)?,
            };
            let mut s = String::new();
            for r in &reports {
                let l = r.last().expect("initial row present");
                s += &format!("{}: t={} err_v={:.3e} err_w={:.3e} max_norm={:.3e}\n", r.label, l.t, l.err_v_l2, l.err_w_l2, l.max_norm());
            }
            Ok(s)
        }
    }
}

/// Loads an optional config file and overlays explicit settings on it.
pub fn merge_settings(file: Option<&Path>, flags: BTreeMap<String, String>) -> Result<BTreeMap<String, String>> {
    let mut map = match file {
        Some(p) => parse_config_text(&fs::read_to_string(p)?)?,
        None => BTreeMap::new(),
    };
    map.extend(flags);
    Ok(map)
}
