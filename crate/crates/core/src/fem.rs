//! Finite-element potential with point particles.
//!
//! The potential is `φ_h = Σ_i φ_i Λ_i` with `Λ_i` periodic cardinal
//! B-splines of degree `p` centred on the grid nodes (hats for `p = 1`), and
//! the field equation is taken in weak form:
//!
//! ```text
//! λ² Mφ + Σ_q w_q n0 exp((φ_h(x_q) - φ0)/Te) Λ(x_q) = Z Σ_k w_k Λ(x_k)
//! ```
//!
//! with `M_ij = ∫ Λ_i' Λ_j'` and a per-cell Gauss–Legendre rule. Summing the
//! rows gives the weak neutrality identity, since `Σ_i Λ_i = 1` and `M·1 = 0`.
//!
//! Point particles tested against `Λ_i` couple to the grid exactly like
//! B-spline shaped particles do in the finite-difference backend, so the
//! deposition and force loops are shared with [`crate::mesh`].

use nalgebra::{DMatrix, DVector};

use crate::diagnostics::EnergyBreakdown;
use crate::dynamics::FieldBackend;
use crate::error::{Error, Result};
use crate::field::{ElectronModel, FieldState, SolverConfig};
use crate::mesh::{self, cardinal_bspline, cardinal_bspline_deriv, BSplineShape, Grid1D, ParticleEnsemble};

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
fn gauss_legendre(n: usize) -> (&'static [f64], &'static [f64]) {
    match n {
        1 => (&[0.0], &[2.0]),
        2 => (&[-0.577_350_269_189_625_8, 0.577_350_269_189_625_8], &[1.0, 1.0]),
        3 => (
            &[-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4],
            &[5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0],
        ),
        4 => (
            &[-0.861_136_311_594_052_6, -0.339_981_043_584_856_3, 0.339_981_043_584_856_3, 0.861_136_311_594_052_6],
            &[0.347_854_845_137_453_9, 0.652_145_154_862_546_1, 0.652_145_154_862_546_1, 0.347_854_845_137_453_9],
        ),
        _ => (
            &[-0.906_179_845_938_664, -0.538_469_310_105_683_1, 0.0, 0.538_469_310_105_683_1, 0.906_179_845_938_664],
            &[0.236_926_885_056_189_1, 0.478_628_670_499_366_5, 0.568_888_888_888_888_9, 0.478_628_670_499_366_5, 0.236_926_885_056_189_1],
        ),
    }
}

#[derive(Debug, Clone)]
struct QuadPoint {
    x: f64,
    weight: f64,
    /// `(i, Λ_i(x), Λ_i'(x))` for every basis function alive at `x`.
    basis: Vec<(usize, f64, f64)>,
}

/// Periodic spline space with its quadrature.
#[derive(Debug, Clone)]
pub struct FemSpace {
    grid: Grid1D,
    degree: usize,
    quad: Vec<QuadPoint>,
}

impl FemSpace {
    /// Degree `p >= 1` basis with `p + 1` Gauss points per knot interval.
    pub fn new(grid: Grid1D, degree: usize) -> Result<Self> {
        Self::with_quadrature(grid, degree, degree + 1)
    }

    pub fn with_quadrature(grid: Grid1D, degree: usize, points: usize) -> Result<Self> {
        if degree == 0 || degree > 4 {
            return Err(Error::InvalidConfig(format!("FEM degree must be in 1..=4, got {degree}")));
        }
        if points == 0 || points > 5 || points < degree + 1 {
            return Err(Error::InvalidConfig(format!(
                "need between degree+1 and 5 quadrature points, got {points}"
            )));
        }
        let h = grid.dx();
        // knot intervals start at nodes for odd degree, at midpoints for even
        let offset = if degree % 2 == 1 { 0.0 } else { 0.5 * h };
        let (nodes, weights) = gauss_legendre(points);
        let mut quad = Vec::with_capacity(grid.n_cells() * points);
        for c in 0..grid.n_cells() {
            let center = offset + (c as f64 + 0.5) * h;
            for (xi, wi) in nodes.iter().zip(weights) {
                let x = grid.reduce(center + 0.5 * h * xi);
                quad.push(QuadPoint {
                    x,
                    weight: 0.5 * h * wi,
                    basis: basis_at(&grid, degree, x),
                });
            }
        }
        Ok(FemSpace { grid, degree, quad })
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_basis(&self) -> usize {
        self.grid.n_cells()
    }

    /// Quadrature points and weights.
    pub fn quadrature(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.quad.iter().map(|q| (q.x, q.weight))
    }

    /// `φ_h(x)`.
    pub fn evaluate(&self, coeffs: &[f64], x: f64) -> f64 {
        basis_at(&self.grid, self.degree, x)
            .iter()
            .map(|(i, v, _)| v * coeffs[*i])
            .sum()
    }

    fn shape(&self) -> BSplineShape {
        BSplineShape::new(self.degree, &self.grid)
    }
}

fn basis_at(grid: &Grid1D, degree: usize, x: f64) -> Vec<(usize, f64, f64)> {
    let n = grid.n_cells() as i64;
    let h = grid.dx();
    let s = x / h;
    let half = 0.5 * (degree as f64 + 1.0);
    ((s - half).ceil() as i64..=(s + half).floor() as i64)
        .map(|i| {
            let u = s - i as f64;
            (
                i.rem_euclid(n) as usize,
                cardinal_bspline(degree, u),
                cardinal_bspline_deriv(degree, u) / h,
            )
        })
        .filter(|(_, v, d)| *v != 0.0 || *d != 0.0)
        .collect()
}

/// `M_ij = ∫ Λ_i' Λ_j' dx`, exact for the polynomial basis.
pub fn assemble_stiffness(space: &FemSpace) -> DMatrix<f64> {
    let n = space.n_basis();
    let mut m = DMatrix::zeros(n, n);
    for q in &space.quad {
        for &(i, _, di) in &q.basis {
            for &(j, _, dj) in &q.basis {
                m[(i, j)] += q.weight * di * dj;
            }
        }
    }
    m
}

/// Finite-element field backend.
#[derive(Debug, Clone)]
pub struct FemContext {
    pub space: FemSpace,
    pub stiffness: DMatrix<f64>,
    pub model: ElectronModel,
    pub solver: SolverConfig,
    n0_q: Vec<f64>,
    te_q: Vec<f64>,
}

impl FemContext {
    /// `model` holds nodal values; they are interpolated linearly to the
    /// quadrature points.
    pub fn new(space: FemSpace, model: ElectronModel, solver: SolverConfig) -> Result<Self> {
        model.validate()?;
        solver.validate()?;
        if model.n0.len() != space.n_basis() {
            return Err(Error::InvalidConfig("electron model size does not match FEM space".into()));
        }
        let hats = FemSpace::new(*space.grid(), 1)?;
        let interp = |nodal: &[f64]| -> Vec<f64> { space.quad.iter().map(|q| hats.evaluate(nodal, q.x)).collect() };
        let n0_q = interp(&model.n0);
        let te_q = interp(&model.te);
        Ok(FemContext {
            stiffness: assemble_stiffness(&space),
            space,
            model,
            solver,
            n0_q,
            te_q,
        })
    }

    /// Load vector `b_i = Z Σ_k w_k Λ_i(x_k)`.
    pub fn load_vector(&self, particles: &ParticleEnsemble) -> Vec<f64> {
        let grid = self.space.grid();
        let d = mesh::deposit_positions(grid, &self.space.shape(), &particles.weights, &particles.positions);
        // the deposit carries a 1/h from the shape normalization
        d.rho.iter().map(|r| self.model.charge * grid.dx() * r).collect()
    }

    /// Electron density `n0 exp((φ_h - φ0)/Te)` at each quadrature point.
    fn electron_density_q(&self, phi: &[f64]) -> Vec<f64> {
        self.space
            .quad
            .iter()
            .enumerate()
            .map(|(q, qp)| {
                let phi_h: f64 = qp.basis.iter().map(|(i, v, _)| v * phi[*i]).sum();
                self.n0_q[q] * ((phi_h - self.model.phi0) / self.te_q[q]).exp()
            })
            .collect()
    }

    fn residual(&self, load: &[f64], phi: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let lambda2 = self.solver.lambda * self.solver.lambda;
        let mphi = &self.stiffness * DVector::from_column_slice(phi);
        let mut r: Vec<f64> = (0..phi.len()).map(|i| lambda2 * mphi[i] - load[i]).collect();
        let ne = self.electron_density_q(phi);
        for (qp, n) in self.space.quad.iter().zip(&ne) {
            for &(i, v, _) in &qp.basis {
                r[i] += qp.weight * n * v;
            }
        }
        (r, ne)
    }

    fn merit(&self, load: &[f64], phi: &[f64]) -> f64 {
        let lambda2 = self.solver.lambda * self.solver.lambda;
        let v = DVector::from_column_slice(phi);
        let ne = self.electron_density_q(phi);
        let boltz: f64 = self.space.quad.iter().zip(&ne).enumerate().map(|(q, (qp, n))| qp.weight * self.te_q[q] * n).sum();
        0.5 * lambda2 * v.dot(&(&self.stiffness * &v)) + boltz - load.iter().zip(phi).map(|(b, p)| b * p).sum::<f64>()
    }

    fn quasineutral_guess(&self, load: &[f64]) -> Vec<f64> {
        let h = self.space.grid().dx();
        let max = load.iter().cloned().fold(0.0, f64::max);
        let floor = (1e-14 * max).max(f64::MIN_POSITIVE);
        load.iter()
            .enumerate()
            .map(|(i, b)| self.model.phi0 + self.model.te[i] * (b.max(floor) / (h * self.model.n0[i])).ln())
            .collect()
    }

    fn newton_step(&self, r: &[f64], ne: &[f64]) -> Option<DVector<f64>> {
        let lambda2 = self.solver.lambda * self.solver.lambda;
        let mut jac = &self.stiffness * lambda2;
        for (q, (qp, nq)) in self.space.quad.iter().zip(ne).enumerate() {
            let g = qp.weight * nq / self.te_q[q];
            for &(i, vi, _) in &qp.basis {
                for &(j, vj, _) in &qp.basis {
                    jac[(i, j)] += g * vi * vj;
                }
            }
        }
        let rhs = -DVector::from_column_slice(r);
        match jac.clone().cholesky() {
            Some(ch) => Some(ch.solve(&rhs)),
            None => jac.lu().solve(&rhs),
        }
    }

    /// Damped Newton on the weak system, dense Cholesky solves.
    pub fn solve_pb_weak(&self, particles: &ParticleEnsemble, warm: Option<&[f64]>) -> Result<FieldState> {
        let load = self.load_vector(particles);
        let total: f64 = load.iter().sum();
        if !(total > 0.0) {
            return Err(Error::NonPositiveCharge { total });
        }
        let n = self.space.n_basis();
        let mut phi = match warm {
            Some(w) if w.len() == n => w.to_vec(),
            _ => self.quasineutral_guess(&load),
        };
        let (mut r, mut ne) = self.residual(&load, &phi);
        let mut norm = sup_norm(&r);
        let mut history = vec![norm];
        let mut iters = 0;
        while norm > self.solver.tol {
            if iters == self.solver.max_iters {
                return Err(Error::NonConvergence {
                    solver: "weak Poisson-Boltzmann",
                    iters,
                    last: norm,
                    history,
                });
            }
            iters += 1;
            let step = self.newton_step(&r, &ne).ok_or_else(|| Error::NonConvergence {
                solver: "weak Poisson-Boltzmann (singular Jacobian)",
                iters,
                last: norm,
                history: history.clone(),
            })?;
            let g0 = self.merit(&load, &phi);
            let slope: f64 = r.iter().zip(step.iter()).map(|(a, b)| a * b).sum();
            let mut t = 1.0;
            loop {
                let trial: Vec<f64> = phi.iter().zip(step.iter()).map(|(p, s)| p + t * s).collect();
                let (r_t, ne_t) = self.residual(&load, &trial);
                let n_t = sup_norm(&r_t);
                if n_t.is_finite() && (self.merit(&load, &trial) <= g0 + 1e-4 * t * slope || n_t < norm || t < 1e-10) {
                    phi = trial;
                    r = r_t;
                    ne = ne_t;
                    norm = n_t;
                    break;
                }
                t *= 0.5;
            }
            history.push(norm);
        }
        // Rows may each sit just under tol, and their sum is the weak
        // neutrality error; one more full step takes it to round-off.
        if iters > 0 {
            if let Some(step) = self.newton_step(&r, &ne) {
                let trial: Vec<f64> = phi.iter().zip(step.iter()).map(|(p, s)| p + s).collect();
                let n_t = sup_norm(&self.residual(&load, &trial).0);
                if n_t < norm {
                    phi = trial;
                    norm = n_t;
                }
            }
        }
        Ok(FieldState {
            phi,
            iters,
            residual_norm: norm,
        })
    }

    /// `Σ_q w_q n0 exp(φ_h/Te) - Z Σ_k w_k`.
    pub fn weak_neutrality_error(&self, particles: &ParticleEnsemble, phi: &[f64]) -> f64 {
        let ne = self.electron_density_q(phi);
        let electrons: f64 = self.space.quad.iter().zip(&ne).map(|(q, n)| q.weight * n).sum();
        electrons - self.model.charge * particles.total_weight()
    }

    pub fn fem_hamiltonian(&self, particles: &ParticleEnsemble, phi: &[f64]) -> f64 {
        self.energy(particles, phi).total
    }
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `a_k = -Z φ_h'(x_k)`; rejects a potential that does not solve the weak
/// field equation at the current positions.
pub fn fem_force(ctx: &FemContext, particles: &ParticleEnsemble, phi: &FieldState) -> Result<Vec<f64>> {
    let threshold = 100.0 * ctx.solver.tol;
    let residual = ctx.field_residual_norm(particles, &phi.phi);
    if residual > threshold {
        return Err(Error::StalePotential { residual, threshold });
    }
    Ok(ctx.accelerations(particles, &phi.phi))
}

impl FieldBackend for FemContext {
    fn grid(&self) -> &Grid1D {
        self.space.grid()
    }

    fn solver(&self) -> &SolverConfig {
        &self.solver
    }

    fn solve_field(&self, particles: &ParticleEnsemble, warm: Option<&[f64]>) -> Result<FieldState> {
        self.solve_pb_weak(particles, warm)
    }

    fn field_residual_norm(&self, particles: &ParticleEnsemble, phi: &[f64]) -> f64 {
        sup_norm(&self.residual(&self.load_vector(particles), phi).0)
    }

    fn accelerations_into(&self, positions: &[f64], phi: &[f64], out: &mut [f64]) {
        // -Z Σ_i Λ_i'(x) φ_i, which equals the B-spline gather
        mesh::gather_into(self.space.grid(), &self.space.shape(), positions, phi, self.model.charge, out);
    }

    fn energy(&self, particles: &ParticleEnsemble, phi: &[f64]) -> EnergyBreakdown {
        let lambda2 = self.solver.lambda * self.solver.lambda;
        let v = DVector::from_column_slice(phi);
        let kinetic = particles.kinetic_energy();
        let electric = 0.5 * lambda2 * v.dot(&(&self.stiffness * &v));
        let coupling: f64 = self.load_vector(particles).iter().zip(phi).map(|(b, p)| b * p).sum();
        let ne = self.electron_density_q(phi);
        let boltzmann: f64 = self.space.quad.iter().zip(&ne).enumerate().map(|(q, (qp, n))| qp.weight * self.te_q[q] * n).sum();
        EnergyBreakdown {
            kinetic,
            electric,
            coupling,
            boltzmann,
            total: kinetic - electric + coupling - boltzmann,
        }
    }

    fn neutrality_error(&self, particles: &ParticleEnsemble, phi: &[f64]) -> f64 {
        self.weak_neutrality_error(particles, phi)
    }

    fn nodal_potential(&self, phi: &[f64]) -> Vec<f64> {
        let g = self.space.grid();
        (0..g.n_cells()).map(|j| self.space.evaluate(phi, g.node(j))).collect()
    }
}
