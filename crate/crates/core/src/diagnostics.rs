//! Conserved quantities and observables.

use crate::dynamics::{FieldBackend, HamiltonianContext, StepReport};
use crate::error::{Error, Result};
use crate::field::FieldState;
use crate::mesh::{DensityDeposit, Grid1D, ParticleEnsemble};

/// Term-by-term split of the discrete Hamiltonian,
/// `total = kinetic - electric + coupling - boltzmann`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBreakdown {
    pub kinetic: f64,
    /// `½ λ² Δx φᵀKφ`, the discrete `½∫|∇φ|²`.
    pub electric: f64,
    /// `Z Δx Σ rho_j φ_j`.
    pub coupling: f64,
    /// `Δx Σ Te n0 exp((φ-φ0)/Te)`.
    pub boltzmann: f64,
    pub total: f64,
}

pub fn energy_breakdown(ctx: &HamiltonianContext, particles: &ParticleEnsemble, phi: &[f64]) -> EnergyBreakdown {
    let dx = ctx.grid.dx();
    let lambda2 = ctx.solver.lambda * ctx.solver.lambda;
    let rho = ctx.deposit(particles);
    let kinetic = particles.kinetic_energy();
    let electric = 0.5 * lambda2 * dx * ctx.stiffness.quadratic_form(phi);
    let coupling = ctx.model.charge * dx * rho.rho.iter().zip(phi).map(|(r, p)| r * p).sum::<f64>();
    let boltzmann = dx
        * phi
            .iter()
            .enumerate()
            .map(|(j, &p)| ctx.model.te[j] * ctx.model.density(j, p))
            .sum::<f64>();
    EnergyBreakdown {
        kinetic,
        electric,
        coupling,
        boltzmann,
        total: kinetic - electric + coupling - boltzmann,
    }
}

/// `-Z Σ Δx rho_j + Σ Δx n0_j exp((φ_j-φ0)/Te_j)`; zero up to the solver
/// tolerance whenever `phi` solves the field equation, because the rows of
/// the stiffness operator sum to zero.
pub fn neutrality_residual(ctx: &HamiltonianContext, rho: &DensityDeposit, phi: &[f64]) -> f64 {
    let dx = ctx.grid.dx();
    let electrons: f64 = phi.iter().enumerate().map(|(j, &p)| ctx.model.density(j, p)).sum();
    dx * electrons - ctx.model.charge * rho.total(dx)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub momentum: f64,
    pub mean_velocity: f64,
    /// Weighted velocity variance `Σ w (v - ū)² / Σ w`.
    pub temperature: f64,
}

pub fn particle_moments(particles: &ParticleEnsemble) -> Result<Moments> {
    let mass = particles.total_weight();
    if !(mass > 0.0) {
        return Err(Error::EmptyEnsemble);
    }
    let momentum: f64 = particles.weights.iter().zip(&particles.velocities).map(|(w, v)| w * v).sum();
    let mean = momentum / mass;
    let var: f64 = particles
        .weights
        .iter()
        .zip(&particles.velocities)
        .map(|(w, v)| w * (v - mean) * (v - mean))
        .sum::<f64>()
        / mass;
    Ok(Moments {
        momentum,
        mean_velocity: mean,
        temperature: var,
    })
}

/// `Δx |Σ_j φ_j exp(-2πi m j / N)|`, by direct summation.
pub fn field_mode_amplitude(grid: &Grid1D, phi: &[f64], m: usize) -> f64 {
    let n = phi.len();
    let (mut re, mut im) = (0.0, 0.0);
    for (j, &p) in phi.iter().enumerate() {
        let arg = -2.0 * std::f64::consts::PI * ((m * j) % n) as f64 / n as f64;
        re += p * arg.cos();
        im += p * arg.sin();
    }
    grid.dx() * re.hypot(im)
}

/// Weighted `x`-`v` histogram, row major in `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpaceHistogram {
    pub x_bins: usize,
    pub v_bins: usize,
    pub length: f64,
    pub v_range: (f64, f64),
    pub counts: Vec<f64>,
}

impl PhaseSpaceHistogram {
    pub fn get(&self, ix: usize, iv: usize) -> f64 {
        self.counts[ix * self.v_bins + iv]
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }
}

/// Bins particle weight on `[0, L) × [v_min, v_max)`; particles outside the
/// velocity range are dropped.
pub fn phase_space_histogram(
    particles: &ParticleEnsemble,
    grid: &Grid1D,
    x_bins: usize,
    v_bins: usize,
    v_range: (f64, f64),
) -> Result<PhaseSpaceHistogram> {
    if x_bins == 0 || v_bins == 0 || !(v_range.1 > v_range.0) {
        return Err(Error::InvalidConfig("histogram needs >= 1 bin and a non-empty range".into()));
    }
    let length = grid.length();
    let mut counts = vec![0.0; x_bins * v_bins];
    for k in 0..particles.len() {
        let v = particles.velocities[k];
        if v < v_range.0 || v >= v_range.1 {
            continue;
        }
        let x = grid.reduce(particles.positions[k]);
        let ix = ((x / length * x_bins as f64) as usize).min(x_bins - 1);
        let iv = (((v - v_range.0) / (v_range.1 - v_range.0) * v_bins as f64) as usize).min(v_bins - 1);
        counts[ix * v_bins + iv] += particles.weights[k];
    }
    Ok(PhaseSpaceHistogram {
        x_bins,
        v_bins,
        length,
        v_range,
        counts,
    })
}

/// Initial energy and momentum that errors are measured against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Baseline {
    pub h0: f64,
    pub p0: f64,
}

impl Baseline {
    pub fn new<B: FieldBackend>(backend: &B, particles: &ParticleEnsemble, phi: &[f64]) -> Self {
        Baseline {
            h0: backend.hamiltonian(particles, phi),
            p0: particles.weights.iter().zip(&particles.velocities).map(|(w, v)| w * v).sum(),
        }
    }
}

/// One row of the diagnostics time series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub h_total: f64,
    pub h_err_rel: f64,
    pub kinetic: f64,
    pub electric: f64,
    pub coupling: f64,
    pub boltzmann: f64,
    pub momentum: f64,
    pub momentum_err: f64,
    pub neutrality_err: f64,
    pub temperature: f64,
    pub mode_amp: [f64; 4],
    pub pb_iters: usize,
    pub dg_iters: usize,
}

pub fn record<B: FieldBackend>(
    backend: &B,
    particles: &ParticleEnsemble,
    field: &FieldState,
    t: f64,
    baseline: &Baseline,
    report: Option<&StepReport>,
) -> DiagnosticsRecord {
    let e = backend.energy(particles, &field.phi);
    let moments = particle_moments(particles).unwrap_or(Moments {
        momentum: 0.0,
        mean_velocity: 0.0,
        temperature: 0.0,
    });
    let nodal = backend.nodal_potential(&field.phi);
    let grid = backend.grid();
    let mut mode_amp = [0.0; 4];
    for (m, amp) in mode_amp.iter_mut().enumerate() {
        *amp = field_mode_amplitude(grid, &nodal, m + 1);
    }
    DiagnosticsRecord {
        t,
        h_total: e.total,
        h_err_rel: (e.total - baseline.h0) / baseline.h0.abs().max(f64::MIN_POSITIVE),
        kinetic: e.kinetic,
        electric: e.electric,
        coupling: e.coupling,
        boltzmann: e.boltzmann,
        momentum: moments.momentum,
        momentum_err: moments.momentum - baseline.p0,
        neutrality_err: backend.neutrality_error(particles, &field.phi),
        temperature: moments.temperature,
        mode_amp,
        pb_iters: report.map_or(field.iters, |r| r.pb_iters),
        dg_iters: report.map_or(0, |r| r.dg_iters),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{ElectronModel, SolverConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn ctx(n: usize, l: f64) -> HamiltonianContext {
        let grid = Grid1D::new(n, l).unwrap();
        let model = ElectronModel::uniform(n, 1.0, 1.0, 0.0, 1.0).unwrap();
        HamiltonianContext::new(grid, 2, model, SolverConfig::default()).unwrap()
    }

    #[test]
    fn breakdown_of_cold_state() {
        let c = ctx(8, 2.5);
        let p = ParticleEnsemble::new(vec![0.5; 5], vec![0.1, 0.7, 1.1, 1.9, 2.2], vec![0.0; 5], &c.grid).unwrap();
        let e = energy_breakdown(&c, &p, &[0.0; 8]);
        assert_eq!((e.kinetic, e.electric, e.coupling), (0.0, 0.0, 0.0));
        assert!((e.boltzmann - 2.5).abs() < 1e-14);
        assert!((e.total + 2.5).abs() < 1e-14);
    }

    #[test]
    fn breakdown_identity_and_sign() {
        let c = ctx(12, 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..20 {
            let p = ParticleEnsemble::new(
                vec![0.3; 10],
                (0..10).map(|_| rng.random_range(0.0..3.0)).collect(),
                (0..10).map(|_| rng.random_range(-1.0..1.0)).collect(),
                &c.grid,
            )
            .unwrap();
            let phi: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
            let e = energy_breakdown(&c, &p, &phi);
            assert!(e.electric >= 0.0);
            let recombined = e.kinetic - e.electric + e.coupling - e.boltzmann;
            assert!((recombined - e.total).abs() <= 1e-13 * e.total.abs());
            assert_eq!(e.total, c.hamiltonian(&p, &phi));
        }
    }

    #[test]
    fn moments_examples() {
        let g = Grid1D::new(4, 1.0).unwrap();
        let one = ParticleEnsemble::new(vec![1.0], vec![0.0], vec![3.0], &g).unwrap();
        let m = particle_moments(&one).unwrap();
        assert_eq!((m.momentum, m.temperature), (3.0, 0.0));
        let two = ParticleEnsemble::new(vec![1.0; 2], vec![0.0; 2], vec![1.0, -1.0], &g).unwrap();
        let m = particle_moments(&two).unwrap();
        assert_eq!((m.momentum, m.mean_velocity, m.temperature), (0.0, 0.0, 1.0));
        assert!(matches!(particle_moments(&ParticleEnsemble::empty()), Err(Error::EmptyEnsemble)));
    }

    #[test]
    fn neutrality_examples() {
        let c = ctx(6, 3.0);
        let rho = DensityDeposit { rho: vec![1.0; 6] };
        assert_eq!(neutrality_residual(&c, &rho, &[0.0; 6]), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let p = ParticleEnsemble::new(
            vec![3.0 / 40.0; 40],
            (0..40).map(|_| rng.random_range(0.0..3.0)).collect(),
            vec![0.0; 40],
            &c.grid,
        )
        .unwrap();
        let f = c.solve_field(&p, None).unwrap();
        let rho = c.deposit(&p);
        assert!(neutrality_residual(&c, &rho, &f.phi).abs() <= 10.0 * c.solver.tol * 3.0);

        // doubling the weights without re-solving leaves one copy of the charge unbalanced
        let doubled = DensityDeposit { rho: rho.rho.iter().map(|r| 2.0 * r).collect() };
        let r = neutrality_residual(&c, &doubled, &f.phi);
        assert!((r + rho.total(c.grid.dx())).abs() <= 1e-11);
    }

    #[test]
    fn mode_amplitudes() {
        let g = Grid1D::new(16, 4.0).unwrap();
        let c = vec![0.7; 16];
        assert!((field_mode_amplitude(&g, &c, 0) - 4.0 * 0.7).abs() < 1e-13);
        for m in 1..=8 {
            assert!(field_mode_amplitude(&g, &c, m) < 1e-13);
        }
        let phi: Vec<f64> = (0..16).map(|j| (2.0 * PI * 2.0 * j as f64 / 16.0).cos()).collect();
        for m in 0..=8 {
            let a = field_mode_amplitude(&g, &phi, m);
            if m == 2 {
                assert!((a - 2.0).abs() < 1e-13);
            } else {
                assert!(a <= 1e-13, "m={m} a={a}");
            }
        }
    }

    #[test]
    fn parseval_against_direct_dft() {
        let n = 13;
        let g = Grid1D::new(n, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let phi: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let energy: f64 = phi.iter().map(|p| p * p).sum();
        // Σ_m |φ̂_m|² over all N modes equals N Σ φ_j², with φ̂ = Δx·DFT
        let spectrum: f64 = (0..n)
            .map(|m| {
                let a = field_mode_amplitude(&g, &phi, m) / g.dx();
                a * a
            })
            .sum();
        assert!((spectrum - n as f64 * energy).abs() <= 1e-12 * spectrum);
    }

    #[test]
    fn histogram_single_particle_and_mass() {
        let g = Grid1D::new(4, 2.0).unwrap();
        let p = ParticleEnsemble::new(vec![0.25], vec![1.3], vec![0.1], &g).unwrap();
        let h = phase_space_histogram(&p, &g, 4, 5, (-1.0, 1.0)).unwrap();
        assert_eq!(h.counts.iter().filter(|c| **c != 0.0).count(), 1);
        assert_eq!(h.get(2, 2), 0.25);

        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let q = ParticleEnsemble::new(
            vec![0.01; 500],
            (0..500).map(|_| rng.random_range(0.0..2.0)).collect(),
            (0..500).map(|_| rng.random_range(-0.9..0.9)).collect(),
            &g,
        )
        .unwrap();
        let h = phase_space_histogram(&q, &g, 7, 3, (-1.0, 1.0)).unwrap();
        assert!((h.total() - q.total_weight()).abs() < 1e-12);
        assert!(phase_space_histogram(&q, &g, 0, 3, (-1.0, 1.0)).is_err());
    }

    #[test]
    fn histogram_of_uniform_particles_is_flat() {
        let g = Grid1D::new(4, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let n = 100_000;
        let q = ParticleEnsemble::new(
            vec![1.0; n],
            (0..n).map(|_| rng.random_range(0.0..1.0)).collect(),
            (0..n).map(|_| rng.random_range(0.0..1.0)).collect(),
            &g,
        )
        .unwrap();
        let bins = 10 * 10;
        let h = phase_space_histogram(&q, &g, 10, 10, (0.0, 1.0)).unwrap();
        let p = 1.0 / bins as f64;
        let mean = n as f64 * p;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for c in &h.counts {
            assert!((c - mean).abs() <= 5.0 * sd);
        }
    }
}
