//! Nonlinear Poisson–Boltzmann solve on the periodic grid.
//!
//! The discrete field equation is
//!
//! ```text
//! F(φ)_j = λ² (Kφ)_j + n0_j exp((φ_j - φ0)/Te_j) - Z rho_j = 0
//! ```
//!
//! with `K` the periodic second-difference operator
//! `(Kφ)_j = (2φ_j - φ_{j-1} - φ_{j+1})/Δx²`, which is symmetric positive
//! semidefinite with the constants as its null space. `F` is the gradient of
//! the strictly convex functional
//! `G(φ) = ½λ² φᵀKφ + Σ n0 Te exp((φ-φ0)/Te) - Z Σ rho φ`, so the solution is
//! unique and damped Newton on `G` converges globally.
//!
//! `λ = 0` gives the quasi-neutral limit, whose solution is the closed form in
//! [`solve_anvp`].

use crate::error::{Error, Result};
use crate::linalg::solve_cyclic_tridiagonal;
use crate::mesh::{DensityDeposit, Grid1D};

/// Periodic second-difference operator `K`, stored matrix free.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StiffnessOperator {
    n: usize,
    dx: f64,
}

impl StiffnessOperator {
    pub fn new(grid: &Grid1D) -> Self {
        StiffnessOperator {
            n: grid.n_cells(),
            dx: grid.dx(),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn apply(&self, phi: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.apply_into(phi, &mut out);
        out
    }

    pub fn apply_into(&self, phi: &[f64], out: &mut [f64]) {
        let n = self.n;
        assert_eq!(phi.len(), n);
        let inv = 1.0 / (self.dx * self.dx);
        for j in 0..n {
            let left = phi[(j + n - 1) % n];
            let right = phi[(j + 1) % n];
            out[j] = (2.0 * phi[j] - left - right) * inv;
        }
    }

    /// `φᵀKφ`, evaluated as a sum of squared differences so it is never
    /// negative.
    pub fn quadratic_form(&self, phi: &[f64]) -> f64 {
        let n = self.n;
        let s: f64 = (0..n)
            .map(|j| {
                let d = phi[(j + 1) % n] - phi[j];
                d * d
            })
            .sum();
        s / (self.dx * self.dx)
    }
}

/// Boltzmann electron response `n_e = n0 exp((φ - φ0)/Te)` and the ion
/// charge number.
#[derive(Debug, Clone, PartialEq)]
pub struct ElectronModel {
    pub n0: Vec<f64>,
    pub te: Vec<f64>,
    pub phi0: f64,
    pub charge: f64,
}

impl ElectronModel {
    /// Spatially constant reference density and temperature.
    pub fn uniform(n: usize, n0: f64, te: f64, phi0: f64, charge: f64) -> Result<Self> {
        let model = ElectronModel {
            n0: vec![n0; n],
            te: vec![te; n],
            phi0,
            charge,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n0.len() != self.te.len() {
            return Err(Error::InvalidConfig("n0 and Te lengths differ".into()));
        }
        if self.n0.iter().chain(&self.te).any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidConfig("n0 and Te must be positive".into()));
        }
        if !(self.charge > 0.0) {
            return Err(Error::InvalidConfig("charge number must be positive".into()));
        }
        Ok(())
    }

    /// Electron density at node `j`.
    #[inline]
    pub fn density(&self, j: usize, phi: f64) -> f64 {
        self.n0[j] * ((phi - self.phi0) / self.te[j]).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    Newton,
    Picard,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Quasi-neutrality scale; the Laplacian enters as `λ² K`.
    pub lambda: f64,
    /// Sup-norm residual tolerance.
    pub tol: f64,
    pub max_iters: usize,
    pub method: SolveMethod,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            lambda: 1.0,
            tol: 1e-12,
            max_iters: 200,
            method: SolveMethod::Newton,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig("solver tolerance must be positive".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidConfig("lambda must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub phi: Vec<f64>,
    pub iters: usize,
    pub residual_norm: f64,
}

/// `F(φ) = λ²Kφ + n0 exp((φ-φ0)/Te) - Z rho`.
pub fn pb_residual(
    k: &StiffnessOperator,
    model: &ElectronModel,
    cfg: &SolverConfig,
    rho: &DensityDeposit,
    phi: &[f64],
) -> Vec<f64> {
    let mut out = vec![0.0; k.len()];
    residual_into(k, model, cfg.lambda * cfg.lambda, rho, phi, &mut out);
    out
}

fn residual_into(
    k: &StiffnessOperator,
    model: &ElectronModel,
    lambda2: f64,
    rho: &DensityDeposit,
    phi: &[f64],
    out: &mut [f64],
) {
    k.apply_into(phi, out);
    for (j, f) in out.iter_mut().enumerate() {
        *f = lambda2 * *f + model.density(j, phi[j]) - model.charge * rho.rho[j];
    }
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Convex functional whose gradient is the residual (without the `Δx` factor).
fn merit(k: &StiffnessOperator, model: &ElectronModel, lambda2: f64, rho: &DensityDeposit, phi: &[f64]) -> f64 {
    let mut g = 0.5 * lambda2 * k.quadratic_form(phi);
    for (j, (&p, &r)) in phi.iter().zip(&rho.rho).enumerate() {
        g += model.te[j] * model.density(j, p) - model.charge * r * p;
    }
    g
}

/// Quasi-neutral potential `φ_j = φ0 + Te_j ln(Z rho_j / n0_j)`, the
/// standard first guess for the nonlinear solve.
///
/// Densities are clamped below at `1e-14 max(rho)` (and at the smallest
/// positive double when nothing is positive) so empty cells stay finite.
pub fn quasineutral_guess(model: &ElectronModel, rho: &DensityDeposit) -> Vec<f64> {
    let max_rho = rho.rho.iter().cloned().fold(0.0, f64::max);
    let floor = (1e-14 * max_rho).max(f64::MIN_POSITIVE);
    rho.rho
        .iter()
        .enumerate()
        .map(|(j, &r)| {
            let r = r.max(floor);
            model.phi0 + model.te[j] * (model.charge * r / model.n0[j]).ln()
        })
        .collect()
}

/// Quasi-neutral (λ = 0) field: the Boltzmann relation inverted node by node.
pub fn solve_anvp(model: &ElectronModel, rho: &DensityDeposit) -> FieldState {
    FieldState {
        phi: quasineutral_guess(model, rho),
        iters: 0,
        residual_norm: 0.0,
    }
}

/// Solves `F(φ) = 0`, warm started from `warm` when given, otherwise from
/// [`quasineutral_guess`].
pub fn solve_pb(
    k: &StiffnessOperator,
    model: &ElectronModel,
    cfg: &SolverConfig,
    rho: &DensityDeposit,
    warm: Option<&[f64]>,
) -> Result<FieldState> {
    let total = model.charge * rho.total(k.dx());
    if !(total > 0.0) {
        return Err(Error::NonPositiveCharge { total });
    }
    let n = k.len();
    let lambda2 = cfg.lambda * cfg.lambda;
    let mut phi = match warm {
        Some(w) if w.len() == n => w.to_vec(),
        _ => quasineutral_guess(model, rho),
    };
    let mut f = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut f_trial = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let off = vec![-lambda2 / (k.dx() * k.dx()); n];
    let mut history = Vec::new();

    residual_into(k, model, lambda2, rho, &phi, &mut f);
    let mut norm = sup_norm(&f);
    history.push(norm);
    let mut iters = 0;
    while norm > cfg.tol {
        if iters == cfg.max_iters {
            return Err(Error::NonConvergence {
                solver: "Poisson-Boltzmann",
                iters,
                last: norm,
                history,
            });
        }
        iters += 1;

        let base = 2.0 * lambda2 / (k.dx() * k.dx());
        let slopes = phi.iter().enumerate().map(|(j, &p)| model.density(j, p) / model.te[j]);
        match cfg.method {
            SolveMethod::Newton => {
                for (d, s) in diag.iter_mut().zip(slopes) {
                    *d = base + s;
                }
            }
            SolveMethod::Picard => {
                // lagged exponential, shifted by its largest slope so the
                // linear operator is invertible
                let shift = slopes.fold(0.0, f64::max);
                diag.iter_mut().for_each(|d| *d = base + shift);
            }
        }
        let rhs: Vec<f64> = f.iter().map(|v| -v).collect();
        let step = solve_cyclic_tridiagonal(&off, &diag, &off, &rhs);

        // Armijo backtracking on the convex merit functional; a step that
        // lowers the residual norm is also accepted, since near the root
        // the merit decrease drowns in roundoff.
        let g0 = merit(k, model, lambda2, rho, &phi);
        let slope: f64 = f.iter().zip(&step).map(|(a, b)| a * b).sum();
        let mut t = 1.0;
        loop {
            for j in 0..n {
                trial[j] = phi[j] + t * step[j];
            }
            residual_into(k, model, lambda2, rho, &trial, &mut f_trial);
            let trial_norm = sup_norm(&f_trial);
            let g1 = merit(k, model, lambda2, rho, &trial);
            if trial_norm.is_finite()
                && (g1 <= g0 + 1e-4 * t * slope || trial_norm < norm || t < 1e-10)
            {
                norm = trial_norm;
                break;
            }
            t *= 0.5;
        }
        std::mem::swap(&mut phi, &mut trial);
        std::mem::swap(&mut f, &mut f_trial);
        history.push(norm);
    }

    Ok(FieldState {
        phi,
        iters,
        residual_norm: norm,
    })
}
