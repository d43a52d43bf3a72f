//! Run configuration in a flat `key = value` format, and the run driver.
//!
//! ```text
//! # Landau damping with the discrete gradient integrator
//! experiment = landau
//! scheme = dg
//! n_particles = 10000
//! snapshot_times = 0, 20, 40
//! ```
//!
//! With `experiment` set, every other key overrides the canned value.
//! Without it, `vt`, `length`, `n_cells`, `dt`, `t_final` and `n_particles`
//! are required.

use std::path::{Path, PathBuf};

use crate::diagnostics::DiagnosticsRecord;
use crate::dynamics::{FieldBackend, Scheme, Simulation, StepperConfig};
use crate::error::{Error, Result};
use crate::experiments::{canned_config, sample_initial, ExperimentKind, InitialCondition, Sampler};
use crate::field::{SolveMethod, SolverConfig};
use crate::output::{write_series, write_snapshot};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldBackendKind {
    /// Finite differences with B-spline particles.
    Fd,
    /// Finite elements with point particles.
    Fem,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: Option<String>,
    pub initial: InitialCondition,
    pub stepper: StepperConfig,
    pub solver: SolverConfig,
    pub field_backend: FieldBackendKind,
    pub fem_degree: usize,
    pub output_dir: PathBuf,
    pub record_every: usize,
    pub snapshot_times: Vec<f64>,
}

impl RunConfig {
    pub fn from_canned(name: &str) -> Result<Self> {
        let c = canned_config(name)?;
        Ok(RunConfig {
            experiment: Some(name.to_string()),
            initial: c.initial,
            stepper: c.stepper,
            solver: c.solver,
            field_backend: FieldBackendKind::Fd,
            fem_degree: 1,
            output_dir: PathBuf::from("output"),
            record_every: 10,
            snapshot_times: Vec::new(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.initial.validate()?;
        self.stepper.validate()?;
        self.solver.validate()?;
        if self.stepper.dt != self.initial.dt {
            return Err(Error::InvalidConfig("stepper and initial condition disagree on dt".into()));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidConfig("record_every must be at least 1".into()));
        }
        if !(1..=4).contains(&self.fem_degree) {
            return Err(Error::InvalidConfig(format!("fem_degree must be in 1..=4, got {}", self.fem_degree)));
        }
        if let Some(t) = self.snapshot_times.iter().find(|t| !(**t >= 0.0 && **t <= self.initial.t_final)) {
            return Err(Error::InvalidConfig(format!(
                "snapshot time {t} outside [0, {}]",
                self.initial.t_final
            )));
        }
        Ok(())
    }
}

const REQUIRED_WITHOUT_EXPERIMENT: [&str; 6] = ["vt", "length", "n_cells", "dt", "t_final", "n_particles"];

fn custom_base() -> RunConfig {
    let mut base = RunConfig::from_canned("finite_grid").expect("canned config exists");
    base.experiment = None;
    base.initial.kind = ExperimentKind::Custom;
    base.initial.v0 = 0.0;
    base
}

/// Parses and validates a configuration.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut entries: Vec<(usize, String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(Error::Parse {
                line,
                key: content.to_string(),
                message: "expected `key = value`".into(),
            });
        };
        let key = key.trim().to_string();
        if let Some((first, _, _)) = entries.iter().find(|(_, k, _)| *k == key) {
            return Err(Error::Parse {
                line,
                key,
                message: format!("duplicate key, first set on line {first}"),
            });
        }
        entries.push((line, key, value.trim().to_string()));
    }

    let mut cfg = match entries.iter().find(|(_, k, _)| k == "experiment") {
        Some((line, key, value)) => RunConfig::from_canned(value).map_err(|e| Error::Parse {
            line: *line,
            key: key.clone(),
            message: e.to_string(),
        })?,
        None => {
            if let Some(missing) = REQUIRED_WITHOUT_EXPERIMENT
                .iter()
                .find(|r| !entries.iter().any(|(_, k, _)| k == *r))
            {
                return Err(Error::InvalidConfig(format!(
                    "key '{missing}' is required when no experiment is set"
                )));
            }
            custom_base()
        }
    };

    for (line, key, value) in &entries {
        apply(&mut cfg, key, value).map_err(|message| Error::Parse {
            line: *line,
            key: key.clone(),
            message,
        })?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

fn num<T: std::str::FromStr>(value: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| format!("cannot parse '{value}': {e}"))
}

fn apply(cfg: &mut RunConfig, key: &str, value: &str) -> std::result::Result<(), String> {
    let ic = &mut cfg.initial;
    match key {
        "experiment" => {}
        "kind" => ic.kind = ExperimentKind::parse(value).ok_or_else(|| format!("unknown kind '{value}'"))?,
        "vt" => ic.vt = num(value)?,
        "v0" => ic.v0 = num(value)?,
        "alpha" => ic.alpha = num(value)?,
        "k_pert" => ic.k_pert = num(value)?,
        "te" => ic.te = num(value)?,
        "n0" => ic.n0 = num(value)?,
        "phi0" => ic.phi0 = num(value)?,
        "charge" => ic.charge = num(value)?,
        "degree" => ic.degree = num(value)?,
        "length" => ic.length = num(value)?,
        "n_cells" => ic.n_cells = num(value)?,
        "dt" => {
            ic.dt = num(value)?;
            cfg.stepper.dt = ic.dt;
        }
        "t_final" => ic.t_final = num(value)?,
        "n_particles" => ic.n_particles = num(value)?,
        "seed" => ic.seed = num(value)?,
        "sampler" => ic.sampler = Sampler::parse(value).ok_or_else(|| format!("unknown sampler '{value}'"))?,
        "scheme" => cfg.stepper.scheme = Scheme::parse(value).ok_or_else(|| format!("unknown scheme '{value}'"))?,
        "dg_tol" => cfg.stepper.dg_tol = num(value)?,
        "dg_max_iters" => cfg.stepper.dg_max_iters = num(value)?,
        "dc_guard" => cfg.stepper.dc_guard = num(value)?,
        "lambda" => cfg.solver.lambda = num(value)?,
        "tol" => cfg.solver.tol = num(value)?,
        "max_iters" => cfg.solver.max_iters = num(value)?,
        "method" => {
            cfg.solver.method = match value {
                "newton" => SolveMethod::Newton,
                "picard" => SolveMethod::Picard,
                _ => return Err(format!("unknown method '{value}'")),
            }
        }
        "field_backend" => {
            cfg.field_backend = match value {
                "fd" => FieldBackendKind::Fd,
                "fem" => FieldBackendKind::Fem,
                _ => return Err(format!("unknown field backend '{value}'")),
            }
        }
        "fem_degree" => cfg.fem_degree = num(value)?,
        "output_dir" => cfg.output_dir = PathBuf::from(value),
        "record_every" => cfg.record_every = num(value)?,
        "snapshot_times" => {
            cfg.snapshot_times = value
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(num)
                .collect::<std::result::Result<_, _>>()?;
        }
        _ => return Err("unknown key".into()),
    }
    Ok(())
}

/// What a finished run left behind.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub steps: usize,
    pub series: PathBuf,
    pub snapshots: Vec<PathBuf>,
    pub final_record: DiagnosticsRecord,
}

/// Samples the initial ensemble, integrates to `t_final` and writes
/// `series.csv` plus one `snapshot_<step>.csv` per requested time into the
/// output directory.
pub fn run(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let particles = sample_initial(&cfg.initial)?;
    match cfg.field_backend {
        FieldBackendKind::Fd => run_with(cfg, cfg.initial.fd_backend(cfg.solver)?, particles),
        FieldBackendKind::Fem => run_with(cfg, cfg.initial.fem_backend(cfg.solver, cfg.fem_degree)?, particles),
    }
}

fn run_with<B: FieldBackend>(
    cfg: &RunConfig,
    backend: B,
    particles: crate::mesh::ParticleEnsemble,
) -> Result<RunSummary> {
    let mut sim = Simulation::new(backend, particles, cfg.stepper)?;
    let dt = cfg.stepper.dt;
    let mut pending: Vec<f64> = cfg.snapshot_times.clone();
    pending.sort_by(f64::total_cmp);
    pending.dedup();
    let mut snapshots = Vec::new();

    let mut take_snapshots = |sim: &Simulation<B>, pending: &mut Vec<f64>| -> Result<()> {
        while pending.first().is_some_and(|&t| sim.time >= t - 0.5 * dt) {
            pending.remove(0);
            let path = cfg.output_dir.join(format!("snapshot_{:06}.csv", sim.steps));
            write_snapshot(&sim.particles, sim.time, &path)?;
            snapshots.push(path);
        }
        Ok(())
    };

    let mut records = vec![sim.record(None)];
    take_snapshots(&sim, &mut pending)?;
    let steps = cfg.initial.n_steps();
    records.extend(sim.run_n_steps(steps, cfg.record_every, |s, _| take_snapshots(s, &mut pending))?);
    // t_final may not fall on a recording step
    if sim.steps % cfg.record_every != 0 {
        records.push(sim.record(None));
    }
    let series = cfg.output_dir.join("series.csv");
    write_series(&records, &series)?;
    Ok(RunSummary {
        steps,
        series,
        final_record: *records.last().expect("initial record is always present"),
        snapshots,
    })
}
