//! Periodic grid, centered B-spline shape functions, charge deposition and
//! force interpolation.
//!
//! The shape function is `S(ξ) = B_p(ξ/Δx)/Δx` with `B_p` the centered
//! cardinal B-spline of degree `p`, so that `Σ_j Δx S(x_j - x) = 1` for every
//! `x`. Deposition and gather use the same `S`, which is what makes the
//! semi-discrete system Hamiltonian.
//!
//! All routines are single threaded; results are bit-reproducible.

use crate::error::{Error, Result};

/// Uniform periodic grid on `[0, L)` with nodes `x_j = j Δx`, `j = 0..N-1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D {
    n_cells: usize,
    length: f64,
    dx: f64,
}

impl Grid1D {
    pub fn new(n_cells: usize, length: f64) -> Result<Self> {
        if n_cells < 3 {
            return Err(Error::InvalidConfig(format!(
                "grid needs at least 3 cells, got {n_cells}"
            )));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "domain length must be positive, got {length}"
            )));
        }
        Ok(Grid1D {
            n_cells,
            length,
            dx: length / n_cells as f64,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn node(&self, j: usize) -> f64 {
        j as f64 * self.dx
    }

    /// Reduces `x` into `[0, L)`.
    pub fn reduce(&self, x: f64) -> f64 {
        wrap(x, self.length)
    }
}

pub(crate) fn wrap(x: f64, length: f64) -> f64 {
    let r = x.rem_euclid(length);
    // rem_euclid rounds tiny negative inputs up to exactly `length`
    if r >= length {
        r - length
    } else {
        r
    }
}

/// Centered cardinal B-spline of degree `degree`, evaluated at `u`.
///
/// Support is `[-(p+1)/2, (p+1)/2)`; `B_0` is the half-open box on
/// `[-1/2, 1/2)`.
pub fn cardinal_bspline(degree: usize, u: f64) -> f64 {
    let a = u.abs();
    match degree {
        0 => {
            if (-0.5..0.5).contains(&u) {
                1.0
            } else {
                0.0
            }
        }
        1 => {
            if a < 1.0 {
                1.0 - a
            } else {
                0.0
            }
        }
        2 => {
            if a < 0.5 {
                0.75 - a * a
            } else if a < 1.5 {
                let t = 1.5 - a;
                0.5 * t * t
            } else {
                0.0
            }
        }
        3 => {
            if a < 1.0 {
                2.0 / 3.0 - a * a + 0.5 * a * a * a
            } else if a < 2.0 {
                let t = 2.0 - a;
                t * t * t / 6.0
            } else {
                0.0
            }
        }
        p => {
            let half = 0.5 * (p as f64 + 1.0);
            if a >= half {
                return 0.0;
            }
            ((u + half) * cardinal_bspline(p - 1, u + 0.5)
                + (half - u) * cardinal_bspline(p - 1, u - 0.5))
                / p as f64
        }
    }
}

/// Derivative of [`cardinal_bspline`], `B_p'(u) = B_{p-1}(u + 1/2) - B_{p-1}(u - 1/2)`.
pub fn cardinal_bspline_deriv(degree: usize, u: f64) -> f64 {
    if degree == 0 {
        return 0.0;
    }
    cardinal_bspline(degree - 1, u + 0.5) - cardinal_bspline(degree - 1, u - 0.5)
}

/// The particle shape `S(ξ) = B_p(ξ/Δx)/Δx`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BSplineShape {
    degree: usize,
    dx: f64,
}

impl BSplineShape {
    pub fn new(degree: usize, grid: &Grid1D) -> Self {
        BSplineShape {
            degree,
            dx: grid.dx(),
        }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    /// Half-width of the support in cells, `(p+1)/2`.
    pub fn half_support(&self) -> f64 {
        0.5 * (self.degree as f64 + 1.0)
    }

    /// Returns `(S(xi), S'(xi))`.
    pub fn eval(&self, xi: f64) -> (f64, f64) {
        let u = xi / self.dx;
        (
            cardinal_bspline(self.degree, u) / self.dx,
            cardinal_bspline_deriv(self.degree, u) / (self.dx * self.dx),
        )
    }

    /// Unwrapped node indices `j` whose shape `S(x_j - x)` can be nonzero
    /// for a particle at `x`.
    fn node_range(&self, x: f64) -> std::ops::RangeInclusive<i64> {
        let s = x / self.dx;
        let h = self.half_support();
        ((s - h).ceil() as i64)..=((s + h).floor() as i64)
    }
}

/// Weights, positions and velocities of the marker particles.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub weights: Vec<f64>,
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
}

impl ParticleEnsemble {
    /// Builds an ensemble, reducing positions into `[0, L)`.
    pub fn new(
        weights: Vec<f64>,
        positions: Vec<f64>,
        velocities: Vec<f64>,
        grid: &Grid1D,
    ) -> Result<Self> {
        if weights.len() != positions.len() || weights.len() != velocities.len() {
            return Err(Error::InvalidConfig(format!(
                "particle arrays differ in length: {} weights, {} positions, {} velocities",
                weights.len(),
                positions.len(),
                velocities.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidConfig("particle weights must be >= 0".into()));
        }
        let positions = positions.into_iter().map(|x| grid.reduce(x)).collect();
        Ok(ParticleEnsemble {
            weights,
            positions,
            velocities,
        })
    }

    pub fn empty() -> Self {
        ParticleEnsemble {
            weights: Vec::new(),
            positions: Vec::new(),
            velocities: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn kinetic_energy(&self) -> f64 {
        0.5 * self
            .weights
            .iter()
            .zip(&self.velocities)
            .map(|(w, v)| w * v * v)
            .sum::<f64>()
    }

    pub fn wrap_positions(&mut self, grid: &Grid1D) {
        for x in &mut self.positions {
            *x = grid.reduce(*x);
        }
    }
}

/// Nodal ion density `rho_j = Σ_k w_k S(x_j - x_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityDeposit {
    pub rho: Vec<f64>,
}

impl DensityDeposit {
    /// `Σ_j Δx rho_j`.
    pub fn total(&self, dx: f64) -> f64 {
        dx * self.rho.iter().sum::<f64>()
    }
}

/// Deposits particle weight onto the grid with periodic wrapping.
///
/// Positions need not be reduced into `[0, L)`.
pub fn deposit(grid: &Grid1D, shape: &BSplineShape, particles: &ParticleEnsemble) -> DensityDeposit {
    deposit_positions(grid, shape, &particles.weights, &particles.positions)
}

pub(crate) fn deposit_positions(
    grid: &Grid1D,
    shape: &BSplineShape,
    weights: &[f64],
    positions: &[f64],
) -> DensityDeposit {
    let n = grid.n_cells() as i64;
    let p = shape.degree;
    let inv_dx = 1.0 / grid.dx();
    let mut rho = vec![0.0; grid.n_cells()];
    for (&w, &x) in weights.iter().zip(positions) {
        let s = x * inv_dx;
        for j in shape.node_range(x) {
            let b = cardinal_bspline(p, j as f64 - s);
            rho[j.rem_euclid(n) as usize] += w * b * inv_dx;
        }
    }
    DensityDeposit { rho }
}

/// Particle accelerations `a_k = Z Σ_j Δx S'(x_j - x_k) φ_j`, i.e. `Z E(x_k)`
/// with `E` the smoothed field seen by the particle.
pub fn gather_acceleration(
    grid: &Grid1D,
    shape: &BSplineShape,
    particles: &ParticleEnsemble,
    phi: &[f64],
    charge: f64,
) -> Vec<f64> {
    let mut out = vec![0.0; particles.len()];
    gather_into(grid, shape, &particles.positions, phi, charge, &mut out);
    out
}

pub(crate) fn gather_into(
    grid: &Grid1D,
    shape: &BSplineShape,
    positions: &[f64],
    phi: &[f64],
    charge: f64,
    out: &mut [f64],
) {
    debug_assert_eq!(phi.len(), grid.n_cells());
    let n = grid.n_cells() as i64;
    let p = shape.degree;
    let inv_dx = 1.0 / grid.dx();
    for (a, &x) in out.iter_mut().zip(positions) {
        let s = x * inv_dx;
        let mut acc = 0.0;
        for j in shape.node_range(x) {
            acc += cardinal_bspline_deriv(p, j as f64 - s) * phi[j.rem_euclid(n) as usize];
        }
        // Δx · S'(ξ) = B'(ξ/Δx) / Δx
        *a = charge * acc * inv_dx;
    }
}

/// Smoothed grid function seen by a particle, `Σ_j Δx S(x_j - x) g_j`.
pub fn interpolate(grid: &Grid1D, shape: &BSplineShape, x: f64, values: &[f64]) -> f64 {
    let n = grid.n_cells() as i64;
    let s = x / grid.dx();
    shape
        .node_range(x)
        .map(|j| cardinal_bspline(shape.degree, j as f64 - s) * values[j.rem_euclid(n) as usize])
        .sum()
}
