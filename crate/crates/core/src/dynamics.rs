//! Finite-dimensional Hamiltonian dynamics of the particle system.
//!
//! With the field eliminated through the Poisson–Boltzmann equation, the
//! particles obey
//!
//! ```text
//! ẋ_k = (1/w_k) ∂H/∂v_k = v_k,     v̇_k = -(1/w_k) ∂H/∂x_k = Z E(x_k)
//! ```
//!
//! The steppers here only talk to the field through [`FieldBackend`], so the
//! finite-difference/B-spline discretization ([`HamiltonianContext`]) and the
//! finite-element one ([`crate::fem::FemContext`]) share every integrator.

use crate::diagnostics::{self, Baseline, DiagnosticsRecord, EnergyBreakdown};
use crate::error::{Error, Result};
use crate::field::{self, ElectronModel, FieldState, SolverConfig, StiffnessOperator};
use crate::mesh::{self, wrap, BSplineShape, DensityDeposit, Grid1D, ParticleEnsemble};

/// Everything a time integrator needs from a field discretization.
pub trait FieldBackend {
    fn grid(&self) -> &Grid1D;

    fn solver(&self) -> &SolverConfig;

    /// Solves the field equation for the current particle positions.
    fn solve_field(&self, particles: &ParticleEnsemble, warm: Option<&[f64]>) -> Result<FieldState>;

    /// Sup norm of the field-equation residual of `phi` at the current positions.
    fn field_residual_norm(&self, particles: &ParticleEnsemble, phi: &[f64]) -> f64;

    /// `a_k = -(1/w_k) ∂H/∂x_k`, valid when `phi` solves the field equation.
    fn accelerations_into(&self, positions: &[f64], phi: &[f64], out: &mut [f64]);

    fn energy(&self, particles: &ParticleEnsemble, phi: &[f64]) -> EnergyBreakdown;

    /// Integrated electron density minus total ion charge.
    fn neutrality_error(&self, particles: &ParticleEnsemble, phi: &[f64]) -> f64;

    /// Potential sampled at the grid nodes, for mode diagnostics.
    fn nodal_potential(&self, phi: &[f64]) -> Vec<f64>;

    fn hamiltonian(&self, particles: &ParticleEnsemble, phi: &[f64]) -> f64 {
        self.energy(particles, phi).total
    }

    fn accelerations(&self, particles: &ParticleEnsemble, phi: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; particles.len()];
        self.accelerations_into(&particles.positions, phi, &mut out);
        out
    }
}

/// Finite differences for the potential, B-spline smoothed particles.
#[derive(Debug, Clone)]
pub struct HamiltonianContext {
    pub grid: Grid1D,
    pub shape: BSplineShape,
    pub stiffness: StiffnessOperator,
    pub model: ElectronModel,
    pub solver: SolverConfig,
}

impl HamiltonianContext {
    pub fn new(grid: Grid1D, degree: usize, model: ElectronModel, solver: SolverConfig) -> Result<Self> {
        if model.n0.len() != grid.n_cells() {
            return Err(Error::InvalidConfig(format!(
                "electron model has {} nodes, grid has {}",
                model.n0.len(),
                grid.n_cells()
            )));
        }
        model.validate()?;
        solver.validate()?;
        Ok(HamiltonianContext {
            shape: BSplineShape::new(degree, &grid),
            stiffness: StiffnessOperator::new(&grid),
            grid,
            model,
            solver,
        })
    }

    pub fn deposit(&self, particles: &ParticleEnsemble) -> DensityDeposit {
        mesh::deposit(&self.grid, &self.shape, particles)
    }
}

impl FieldBackend for HamiltonianContext {
    fn grid(&self) -> &Grid1D {
        &self.grid
    }

    fn solver(&self) -> &SolverConfig {
        &self.solver
    }

    fn solve_field(&self, particles: &ParticleEnsemble, warm: Option<&[f64]>) -> Result<FieldState> {
        let rho = self.deposit(particles);
        if self.solver.lambda == 0.0 {
            return Ok(field::solve_anvp(&self.model, &rho));
        }
        field::solve_pb(&self.stiffness, &self.model, &self.solver, &rho, warm)
    }

    fn field_residual_norm(&self, particles: &ParticleEnsemble, phi: &[f64]) -> f64 {
        let rho = self.deposit(particles);
        field::pb_residual(&self.stiffness, &self.model, &self.solver, &rho, phi)
            .iter()
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    fn accelerations_into(&self, positions: &[f64], phi: &[f64], out: &mut [f64]) {
        mesh::gather_into(&self.grid, &self.shape, positions, phi, self.model.charge, out);
    }

    fn energy(&self, particles: &ParticleEnsemble, phi: &[f64]) -> EnergyBreakdown {
        diagnostics::energy_breakdown(self, particles, phi)
    }

    fn neutrality_error(&self, particles: &ParticleEnsemble, phi: &[f64]) -> f64 {
        diagnostics::neutrality_residual(self, &self.deposit(particles), phi)
    }

    fn nodal_potential(&self, phi: &[f64]) -> Vec<f64> {
        phi.to_vec()
    }
}

/// Discrete Hamiltonian `H(X, V, φ)` evaluated as written; `phi` need not
/// solve the field equation.
pub fn hamiltonian(ctx: &HamiltonianContext, particles: &ParticleEnsemble, phi: &[f64]) -> f64 {
    ctx.hamiltonian(particles, phi)
}

/// `∂H/∂x_k = -Z w_k Σ_j Δx S'(x_j - x_k) φ_j`.
///
/// The closed form only holds on the solution manifold of the field
/// equation, so a potential whose residual exceeds `100·tol` is rejected.
pub fn grad_x_hamiltonian<B: FieldBackend>(
    backend: &B,
    particles: &ParticleEnsemble,
    phi_solved: &FieldState,
) -> Result<Vec<f64>> {
    let threshold = 100.0 * backend.solver().tol;
    let residual = backend.field_residual_norm(particles, &phi_solved.phi);
    if residual > threshold {
        return Err(Error::StalePotential { residual, threshold });
    }
    let a = backend.accelerations(particles, &phi_solved.phi);
    Ok(a.iter().zip(&particles.weights).map(|(a, w)| -w * a).collect())
}

/// Exact flow of `ẋ = v, v̇ = 0`.
pub fn drift_exact(grid: &Grid1D, particles: &mut ParticleEnsemble, dt: f64) {
    for (x, v) in particles.positions.iter_mut().zip(&particles.velocities) {
        *x = grid.reduce(*x + dt * v);
    }
}

/// Exact flow of `ẋ = 0, v̇ = a(X)` given a potential already solved at the
/// current positions.
fn kick_with(backend: &impl FieldBackend, particles: &mut ParticleEnsemble, dt: f64, phi: &[f64]) {
    let a = backend.accelerations(particles, phi);
    for (v, a) in particles.velocities.iter_mut().zip(a) {
        *v += dt * a;
    }
}

/// Solves the field once at the frozen positions and applies the kick.
pub fn kick_exact<B: FieldBackend>(
    backend: &B,
    particles: &mut ParticleEnsemble,
    dt: f64,
    warm: Option<&[f64]>,
) -> Result<StepReport> {
    let field = backend.solve_field(particles, warm)?;
    kick_with(backend, particles, dt, &field.phi);
    Ok(StepReport {
        pb_iters: field.iters,
        dg_iters: 0,
        dc_value: 0.0,
        phi_after: field,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Lie,
    Strang,
    /// Triple-jump composition of Strang steps (fourth order).
    Comp4,
    DiscreteGradient,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Lie => "lie",
            Scheme::Strang => "strang",
            Scheme::Comp4 => "comp4",
            Scheme::DiscreteGradient => "discrete_gradient",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "lie" => Some(Scheme::Lie),
            "strang" => Some(Scheme::Strang),
            "comp4" => Some(Scheme::Comp4),
            "discrete_gradient" | "dg" => Some(Scheme::DiscreteGradient),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepperConfig {
    pub scheme: Scheme,
    pub dt: f64,
    pub dg_tol: f64,
    pub dg_max_iters: usize,
    /// Relative floor for the `d_c` denominator; the absolute guard is
    /// `dc_guard · (|X|² + |V|² + 1)`.
    pub dc_guard: f64,
}

impl StepperConfig {
    pub fn new(scheme: Scheme, dt: f64) -> Self {
        StepperConfig {
            scheme,
            dt,
            dg_tol: 1e-12,
            dg_max_iters: 100,
            dc_guard: 1e-14,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.dg_tol > 0.0) {
            return Err(Error::InvalidConfig("dg_tol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// Field solved at the positions after the step.
    pub phi_after: FieldState,
    pub pb_iters: usize,
    pub dg_iters: usize,
    pub dc_value: f64,
}

/// Triple-jump weights `γ1 = γ3 = 1/(2 - 2^(1/3))`, `γ2 = 1 - 2γ1`.
fn triple_jump() -> [f64; 3] {
    let g1 = 1.0 / (2.0 - 2f64.cbrt());
    [g1, 1.0 - 2.0 * g1, g1]
}

/// One Lie, Strang or comp4 step. `field` must hold the potential solved at
/// the current positions; on return it holds the potential at the new ones.
pub fn splitting_step<B: FieldBackend>(
    backend: &B,
    particles: &mut ParticleEnsemble,
    cfg: &StepperConfig,
    field: &mut FieldState,
) -> Result<StepReport> {
    let mut pb_iters = 0;
    match cfg.scheme {
        Scheme::Lie => {
            kick_with(backend, particles, cfg.dt, &field.phi);
            drift_exact(backend.grid(), particles, cfg.dt);
            *field = backend.solve_field(particles, Some(&field.phi))?;
            pb_iters += field.iters;
        }
        Scheme::Strang => {
            pb_iters += strang(backend, particles, cfg.dt, field)?;
        }
        Scheme::Comp4 => {
            for gamma in triple_jump() {
                pb_iters += strang(backend, particles, gamma * cfg.dt, field)?;
            }
        }
        Scheme::DiscreteGradient => {
            return Err(Error::InvalidConfig(
                "discrete_gradient is not a splitting scheme".into(),
            ))
        }
    }
    Ok(StepReport {
        phi_after: field.clone(),
        pb_iters,
        dg_iters: 0,
        dc_value: 0.0,
    })
}

fn strang<B: FieldBackend>(
    backend: &B,
    particles: &mut ParticleEnsemble,
    dt: f64,
    field: &mut FieldState,
) -> Result<usize> {
    kick_with(backend, particles, 0.5 * dt, &field.phi);
    drift_exact(backend.grid(), particles, dt);
    *field = backend.solve_field(particles, Some(&field.phi))?;
    kick_with(backend, particles, 0.5 * dt, &field.phi);
    Ok(field.iters)
}

/// Energy-conserving discrete-gradient step, solved by fixed-point iteration.
///
/// The averaged gradient is `∇H(z_mid) + d_c Δz` with
/// `d_c = (H(z⁺) - H(z) - ∇H(z_mid)·Δz) / |Δz|²`, which makes
/// `H(z⁺) - H(z) = ∇̄H·Δz = 0` exactly at the fixed point. Every iterate
/// re-solves the field at the midpoint and at the end positions.
pub fn discrete_gradient_step<B: FieldBackend>(
    backend: &B,
    particles: &mut ParticleEnsemble,
    cfg: &StepperConfig,
    field: &mut FieldState,
) -> Result<StepReport> {
    if particles.weights.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::InvalidConfig(
            "discrete gradient step needs strictly positive weights".into(),
        ));
    }
    let length = backend.grid().length();
    let dt = cfg.dt;
    let n = particles.len();
    let w = particles.weights.clone();
    let x0 = particles.positions.clone();
    let v0 = particles.velocities.clone();
    let h0 = backend.hamiltonian(particles, &field.phi);

    let guard = cfg.dc_guard
        * (x0.iter().map(|x| x * x).sum::<f64>() + v0.iter().map(|v| v * v).sum::<f64>() + 1.0);

    // explicit predictor; positions stay unwrapped until the step is done
    let mut acc = backend.accelerations(particles, &field.phi);
    let mut x1: Vec<f64> = (0..n).map(|k| x0[k] + dt * v0[k] + 0.5 * dt * dt * acc[k]).collect();
    let mut v1: Vec<f64> = (0..n).map(|k| v0[k] + dt * acc[k]).collect();

    let mut mid = particles.clone();
    let mut plus = particles.clone();
    let mut warm_mid = field.phi.clone();
    let mut warm_plus = field.phi.clone();
    let mut pb_iters = 0;
    let mut history = Vec::new();
    let mut relax = 1.0;
    let mut growth_streak = 0;

    for iter in 1..=cfg.dg_max_iters {
        for k in 0..n {
            mid.positions[k] = wrap(0.5 * (x0[k] + x1[k]), length);
            mid.velocities[k] = 0.5 * (v0[k] + v1[k]);
            plus.positions[k] = wrap(x1[k], length);
            plus.velocities[k] = v1[k];
        }
        let f_mid = backend.solve_field(&mid, Some(&warm_mid))?;
        let f_plus = backend.solve_field(&plus, Some(&warm_plus))?;
        pb_iters += f_mid.iters + f_plus.iters;
        backend.accelerations_into(&mid.positions, &f_mid.phi, &mut acc);
        let h1 = backend.hamiltonian(&plus, &f_plus.phi);
        warm_mid = f_mid.phi;
        warm_plus = f_plus.phi;

        // ∇_X H = -W a, ∇_V H = W v
        let mut grad_dot = 0.0;
        let mut denom = 0.0;
        for k in 0..n {
            let dx = x1[k] - x0[k];
            let dv = v1[k] - v0[k];
            grad_dot += -w[k] * acc[k] * dx + w[k] * mid.velocities[k] * dv;
            denom += dx * dx + dv * dv;
        }
        let dc = if denom > guard { (h1 - h0 - grad_dot) / denom } else { 0.0 };

        let mut update = 0.0f64;
        for k in 0..n {
            let dx = x1[k] - x0[k];
            let dv = v1[k] - v0[k];
            let xn = x0[k] + dt * (mid.velocities[k] + dc * dv / w[k]);
            let vn = v0[k] + dt * (acc[k] - dc * dx / w[k]);
            update = update.max((xn - x1[k]).abs()).max((vn - v1[k]).abs());
            x1[k] += relax * (xn - x1[k]);
            v1[k] += relax * (vn - v1[k]);
        }
        if history.last().is_some_and(|&last| update > last) {
            growth_streak += 1;
            if growth_streak >= 2 {
                relax = 0.5;
            }
        } else {
            growth_streak = 0;
        }
        history.push(update);

        if update <= cfg.dg_tol {
            for k in 0..n {
                particles.positions[k] = wrap(x1[k], length);
                particles.velocities[k] = v1[k];
            }
            *field = backend.solve_field(particles, Some(&warm_plus))?;
            pb_iters += field.iters;
            return Ok(StepReport {
                phi_after: field.clone(),
                pb_iters,
                dg_iters: iter,
                dc_value: dc,
            });
        }
    }
    let last = history.last().copied().unwrap_or(f64::NAN);
    Err(Error::NonConvergence {
        solver: "discrete gradient",
        iters: cfg.dg_max_iters,
        last,
        history,
    })
}

/// Particles, their field and the integrator, advanced together.
#[derive(Debug, Clone)]
pub struct Simulation<B: FieldBackend> {
    pub backend: B,
    pub particles: ParticleEnsemble,
    /// Potential solved at the current positions.
    pub field: FieldState,
    pub config: StepperConfig,
    pub time: f64,
    pub steps: usize,
    pub baseline: Baseline,
}

impl<B: FieldBackend> Simulation<B> {
    /// Solves the initial field from the quasi-neutral guess.
    pub fn new(backend: B, mut particles: ParticleEnsemble, config: StepperConfig) -> Result<Self> {
        config.validate()?;
        particles.wrap_positions(backend.grid());
        let field = backend.solve_field(&particles, None)?;
        let baseline = Baseline::new(&backend, &particles, &field.phi);
        Ok(Simulation {
            backend,
            particles,
            field,
            config,
            time: 0.0,
            steps: 0,
            baseline,
        })
    }

    pub fn step(&mut self) -> Result<StepReport> {
        let report = match self.config.scheme {
            Scheme::DiscreteGradient => discrete_gradient_step(
                &self.backend,
                &mut self.particles,
                &self.config,
                &mut self.field,
            )?,
            _ => splitting_step(&self.backend, &mut self.particles, &self.config, &mut self.field)?,
        };
        self.steps += 1;
        self.time = self.steps as f64 * self.config.dt;
        Ok(report)
    }

    /// Diagnostics of the current state.
    pub fn record(&self, report: Option<&StepReport>) -> DiagnosticsRecord {
        diagnostics::record(
            &self.backend,
            &self.particles,
            &self.field,
            self.time,
            &self.baseline,
            report,
        )
    }

    /// Advances `n` steps, recording diagnostics every `record_every` steps.
    /// `hook` sees the state after every step, together with the record when
    /// one was taken.
    pub fn run_n_steps<F>(&mut self, n: usize, record_every: usize, mut hook: F) -> Result<Vec<DiagnosticsRecord>>
    where
        F: FnMut(&Self, Option<&DiagnosticsRecord>) -> Result<()>,
    {
        let every = record_every.max(1);
        let mut out = Vec::new();
        for _ in 0..n {
            let report = self.step()?;
            if self.steps.is_multiple_of(every) {
                let rec = self.record(Some(&report));
                hook(self, Some(&rec))?;
                out.push(rec);
            } else {
                hook(self, None)?;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn context(n: usize, length: f64, te: f64, degree: usize) -> HamiltonianContext {
        let grid = Grid1D::new(n, length).unwrap();
        let model = ElectronModel::uniform(n, 1.0, te, 0.0, 1.0).unwrap();
        HamiltonianContext::new(grid, degree, model, SolverConfig::default()).unwrap()
    }

    fn random_ensemble(ctx: &HamiltonianContext, np: usize, seed: u64) -> ParticleEnsemble {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = ctx.grid.length();
        ParticleEnsemble::new(
            vec![l / np as f64; np],
            (0..np).map(|_| rng.random_range(0.0..l)).collect(),
            (0..np).map(|_| rng.random_range(-1.0..1.0)).collect(),
            &ctx.grid,
        )
        .unwrap()
    }

    /// Evenly spaced particles: uniform deposit, zero field.
    fn uniform_ensemble(ctx: &HamiltonianContext, per_cell: usize, v: f64) -> ParticleEnsemble {
        let np = per_cell * ctx.grid.n_cells();
        let l = ctx.grid.length();
        ParticleEnsemble::new(
            vec![l / np as f64; np],
            (0..np).map(|k| (k as f64 + 0.5) * l / np as f64).collect(),
            (0..np).map(|k| if k % 2 == 0 { v } else { -0.5 * v }).collect(),
            &ctx.grid,
        )
        .unwrap()
    }

    #[test]
    fn hamiltonian_of_cold_empty_field() {
        let ctx = context(8, 3.0, 1.0, 2);
        let p = uniform_ensemble(&ctx, 2, 0.0);
        let h = hamiltonian(&ctx, &p, &[0.0; 8]);
        // coupling vanishes at φ = 0; only -Δx Σ Te n0 survives
        assert!((h + 3.0).abs() < 1e-14);
    }

    #[test]
    fn hamiltonian_single_particle() {
        let ctx = context(4, 1.0, 1.0, 2);
        let p = ParticleEnsemble::new(vec![1.0], vec![0.3], vec![2.0], &ctx.grid).unwrap();
        assert!((hamiltonian(&ctx, &p, &[0.0; 4]) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn hamiltonian_matches_naive_terms() {
        let ctx = context(4, 2.0, 1.5, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let p = random_ensemble(&ctx, 3, 32);
        let phi: Vec<f64> = (0..4).map(|_| rng.random_range(-0.5..0.5)).collect();
        let dx = ctx.grid.dx();
        let mut h = 0.0;
        for k in 0..3 {
            h += 0.5 * p.weights[k] * p.velocities[k] * p.velocities[k];
        }
        for j in 0..4 {
            let left = phi[(j + 3) % 4];
            let right = phi[(j + 1) % 4];
            h -= 0.5 * dx * phi[j] * (2.0 * phi[j] - left - right) / (dx * dx);
            for k in 0..3 {
                for image in [-1.0, 0.0, 1.0] {
                    let xi = ctx.grid.node(j) + image * 2.0 - p.positions[k];
                    h += dx * p.weights[k] * ctx.shape.eval(xi).0 * phi[j];
                }
            }
            h -= dx * 1.5 * (phi[j] / 1.5).exp();
        }
        assert!((hamiltonian(&ctx, &p, &phi) - h).abs() <= 1e-14 * h.abs().max(1.0));
    }

    #[test]
    fn gradient_matches_finite_differences_with_resolved_field() {
        let ctx = context(8, 2.0 * PI, 1.0, 2);
        let p = random_ensemble(&ctx, 2, 33);
        let f = ctx.solve_field(&p, None).unwrap();
        let g = grad_x_hamiltonian(&ctx, &p, &f).unwrap();
        let h = 1e-5;
        for k in 0..2 {
            let eval = |shift: f64| {
                let mut q = p.clone();
                q.positions[k] = ctx.grid.reduce(q.positions[k] + shift);
                let fq = ctx.solve_field(&q, Some(&f.phi)).unwrap();
                hamiltonian(&ctx, &q, &fq.phi)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-5 * g[k].abs().max(1e-8), "k={k} fd={fd} g={}", g[k]);
        }
    }

    #[test]
    fn gradient_rejects_stale_potential() {
        let ctx = context(8, 2.0 * PI, 1.0, 2);
        let p = random_ensemble(&ctx, 5, 34);
        let stale = FieldState { phi: vec![0.3; 8], iters: 0, residual_norm: 0.0 };
        assert!(matches!(grad_x_hamiltonian(&ctx, &p, &stale), Err(Error::StalePotential { .. })));
    }

    #[test]
    fn drift_examples() {
        let g = Grid1D::new(8, 5.0 * PI).unwrap();
        let mut p = ParticleEnsemble::new(vec![1.0], vec![0.1], vec![1.0], &g).unwrap();
        drift_exact(&g, &mut p, 0.2);
        assert!((p.positions[0] - 0.3).abs() < 1e-15);
        let mut q = ParticleEnsemble::new(vec![1.0; 3], vec![0.1, 7.0, 15.0], vec![0.0; 3], &g).unwrap();
        let before = q.clone();
        drift_exact(&g, &mut q, 3.0);
        assert_eq!(q, before);
        let mut r = ParticleEnsemble::new(vec![1.0; 2], vec![0.05, 15.0], vec![1.3, -2.1], &g).unwrap();
        let start = r.clone();
        drift_exact(&g, &mut r, 0.7);
        drift_exact(&g, &mut r, -0.7);
        for k in 0..2 {
            assert!((r.positions[k] - start.positions[k]).abs() <= 1e-14);
        }
    }

    #[test]
    fn kick_is_reversible_at_frozen_positions() {
        let ctx = context(16, 4.0 * PI, 1.0, 2);
        let mut p = random_ensemble(&ctx, 40, 35);
        let start = p.clone();
        let r1 = kick_exact(&ctx, &mut p, 0.3, None).unwrap();
        kick_exact(&ctx, &mut p, -0.3, Some(&r1.phi_after.phi)).unwrap();
        for k in 0..40 {
            assert!((p.velocities[k] - start.velocities[k]).abs() <= 1e-12);
        }
        assert_eq!(p.positions, start.positions);
    }

    #[test]
    fn uniform_plasma_feels_no_kick() {
        let ctx = context(10, 5.0, 1.0, 2);
        let mut p = uniform_ensemble(&ctx, 4, 0.3);
        let before = p.velocities.clone();
        kick_exact(&ctx, &mut p, 1.0, None).unwrap();
        for (a, b) in p.velocities.iter().zip(&before) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_pair_has_opposite_accelerations() {
        let ctx = context(16, 8.0, 1.0, 2);
        let c = 4.0;
        let d = 0.37;
        let p = ParticleEnsemble::new(vec![4.0, 4.0], vec![c - d, c + d], vec![0.0, 0.0], &ctx.grid).unwrap();
        let f = ctx.solve_field(&p, None).unwrap();
        let a = ctx.accelerations(&p, &f.phi);
        assert!(a[0].abs() > 1e-6);
        assert!((a[0] + a[1]).abs() <= 1e-12 * a[0].abs());
        // direct evaluation of the gathered field
        let direct: f64 = (0..16)
            .map(|j| {
                let xi = ctx.grid.node(j) - p.positions[1];
                ctx.grid.dx() * ctx.shape.eval(xi).1 * f.phi[j]
            })
            .sum();
        assert!((a[1] - direct).abs() <= 1e-13);
    }

    #[test]
    fn neutral_plasma_splitting_is_pure_drift() {
        let ctx = context(8, 4.0, 1.0, 2);
        for scheme in [Scheme::Lie, Scheme::Strang, Scheme::Comp4, Scheme::DiscreteGradient] {
            let p = uniform_ensemble(&ctx, 1, 0.0);
            // all particles drift together, so the deposit stays uniform
            let p = ParticleEnsemble { velocities: vec![0.7; p.len()], ..p };
            let mut sim = Simulation::new(ctx.clone(), p.clone(), StepperConfig::new(scheme, 0.1)).unwrap();
            sim.step().unwrap();
            for k in 0..p.len() {
                let expect = ctx.grid.reduce(p.positions[k] + 0.07);
                assert!((sim.particles.positions[k] - expect).abs() <= 1e-12, "{scheme:?}");
                assert!((sim.particles.velocities[k] - 0.7).abs() <= 1e-12, "{scheme:?}");
            }
        }
    }

    #[test]
    fn strang_is_time_symmetric() {
        let ctx = context(16, 4.0 * PI, 1.0, 2);
        let p = random_ensemble(&ctx, 30, 36);
        let mut sim = Simulation::new(ctx, p.clone(), StepperConfig::new(Scheme::Strang, 0.1)).unwrap();
        sim.step().unwrap();
        sim.particles.velocities.iter_mut().for_each(|v| *v = -*v);
        sim.step().unwrap();
        for k in 0..30 {
            let dx = (sim.particles.positions[k] - p.positions[k]).abs();
            let dx = dx.min(sim.backend.grid.length() - dx);
            assert!(dx <= 1e-10);
            assert!((sim.particles.velocities[k] + p.velocities[k]).abs() <= 1e-10);
        }
    }

    #[test]
    fn discrete_gradient_conserves_energy() {
        let ctx = context(16, 4.0 * PI, 1.0, 2);
        let p = random_ensemble(&ctx, 50, 37);
        let mut sim = Simulation::new(ctx, p, StepperConfig::new(Scheme::DiscreteGradient, 0.1)).unwrap();
        let h0 = sim.backend.hamiltonian(&sim.particles, &sim.field.phi);
        for _ in 0..20 {
            let r = sim.step().unwrap();
            assert!(r.dg_iters > 0);
        }
        let h1 = sim.backend.hamiltonian(&sim.particles, &sim.field.phi);
        assert!((h1 - h0).abs() <= 10.0 * 1e-12 * h0.abs() * 20.0, "dH={}", h1 - h0);
    }

    #[test]
    fn discrete_gradient_reports_non_convergence() {
        let ctx = context(16, 4.0 * PI, 1.0, 2);
        let p = random_ensemble(&ctx, 20, 38);
        let mut cfg = StepperConfig::new(Scheme::DiscreteGradient, 0.1);
        cfg.dg_max_iters = 1;
        let mut sim = Simulation::new(ctx, p, cfg).unwrap();
        assert!(matches!(sim.step(), Err(Error::NonConvergence { .. })));
    }

    #[test]
    fn run_zero_and_one_step() {
        let ctx = context(16, 4.0 * PI, 1.0, 2);
        let p = random_ensemble(&ctx, 30, 39);
        let cfg = StepperConfig::new(Scheme::Strang, 0.05);
        let mut a = Simulation::new(ctx.clone(), p.clone(), cfg).unwrap();
        let recs = a.run_n_steps(0, 1, |_, _| Ok(())).unwrap();
        assert!(recs.is_empty());
        assert_eq!(a.particles, p);
        let recs = a.run_n_steps(1, 1, |_, _| Ok(())).unwrap();
        assert_eq!(recs.len(), 1);
        let mut b = Simulation::new(ctx, p, cfg).unwrap();
        b.step().unwrap();
        assert_eq!(a.particles, b.particles);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn strang_is_reversible(seed in any::<u64>(), np in 1usize..30, dt in 0.01f64..0.3) {
                let ctx = context(16, 4.0 * PI, 1.0, 2);
                let p = random_ensemble(&ctx, np, seed);
                let mut sim = Simulation::new(ctx, p.clone(), StepperConfig::new(Scheme::Strang, dt)).unwrap();
                sim.step().unwrap();
                sim.particles.velocities.iter_mut().for_each(|v| *v = -*v);
                sim.step().unwrap();
                for k in 0..np {
                    let dx = (sim.particles.positions[k] - p.positions[k]).abs();
                    prop_assert!(dx.min(sim.backend.grid.length() - dx) <= 1e-10);
                    prop_assert!((sim.particles.velocities[k] + p.velocities[k]).abs() <= 1e-10);
                }
            }

            #[test]
            fn discrete_gradient_step_energy(seed in any::<u64>(), np in 2usize..40, dt in 0.01f64..0.2) {
                let ctx = context(16, 4.0 * PI, 1.0, 2);
                let p = random_ensemble(&ctx, np, seed);
                let cfg = StepperConfig::new(Scheme::DiscreteGradient, dt);
                let tol = cfg.dg_tol;
                let mut sim = Simulation::new(ctx, p, cfg).unwrap();
                let h0 = sim.backend.hamiltonian(&sim.particles, &sim.field.phi);
                sim.step().unwrap();
                let h1 = sim.backend.hamiltonian(&sim.particles, &sim.field.phi);
                prop_assert!((h1 - h0).abs() <= 10.0 * tol * h0.abs(), "dH={}", h1 - h0);
            }

            #[test]
            fn every_scheme_keeps_neutrality(seed in any::<u64>(), scheme_ix in 0usize..4) {
                let scheme = [Scheme::Lie, Scheme::Strang, Scheme::Comp4, Scheme::DiscreteGradient][scheme_ix];
                let ctx = context(16, 4.0 * PI, 1.0, 2);
                let p = random_ensemble(&ctx, 25, seed);
                let mut sim = Simulation::new(ctx, p, StepperConfig::new(scheme, 0.05)).unwrap();
                for _ in 0..3 {
                    sim.step().unwrap();
                    let err = sim.backend.neutrality_error(&sim.particles, &sim.field.phi);
                    prop_assert!(err.abs() <= 1e-12 * sim.backend.grid.length());
                }
            }
        }
    }
}
