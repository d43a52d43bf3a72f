//! Linear two-stream theory: the plasma dispersion function and a complex
//! root finder for the beam–beam dispersion relation with Boltzmann electrons.
//!
//! Each beam is `f_± ∝ exp(-(v ∓ v0)²/vT²)` and carries `beam_density` of the
//! ion density, so the relation solved is
//!
//! ```text
//! 1 + 1/(k²λe²) = n_b/(2k²λi²) · (Z'(ζ+) + Z'(ζ-)),   ζ± = (ω ∓ k v0)/(k vT)
//! ```

use std::f64::consts::PI;
use std::sync::OnceLock;

use num_complex::Complex64;

use crate::error::{Error, Result};

const WEIDEMAN_N: usize = 40;
const CF_TERMS: usize = 40;
const CF_RADIUS: f64 = 8.0;

struct Weideman {
    l: f64,
    coeffs: Vec<f64>,
}

fn weideman() -> &'static Weideman {
    static TABLE: OnceLock<Weideman> = OnceLock::new();
    TABLE.get_or_init(|| {
        let n = WEIDEMAN_N;
        let m = 2 * n;
        let l = (n as f64 / 2f64.sqrt()).sqrt();
        let samples: Vec<(f64, f64)> = (1 - m as i64..m as i64)
            .map(|k| {
                let t = l * (k as f64 * PI / (2 * m) as f64).tan();
                (k as f64, (-t * t).exp() * (l * l + t * t))
            })
            .collect();
        // the sampled function is even, so its DFT reduces to a cosine sum
        let coeffs = (1..=n)
            .map(|j| {
                samples
                    .iter()
                    .map(|(k, f)| f * (PI * k * j as f64 / m as f64).cos())
                    .sum::<f64>()
                    / (2 * m) as f64
            })
            .collect();
        Weideman { l, coeffs }
    })
}

/// Faddeeva function `w(z) = exp(-z²) erfc(-iz)`.
///
/// Weideman's rational approximation near the origin, the Laplace continued
/// fraction far from it, both in the upper half-plane; the lower half-plane
/// follows from `w(z) = 2 exp(-z²) - w(-z)`.
pub fn faddeeva(z: Complex64) -> Complex64 {
    if z.im < 0.0 {
        return 2.0 * (-z * z).exp() - faddeeva_upper(-z);
    }
    faddeeva_upper(z)
}

fn faddeeva_upper(z: Complex64) -> Complex64 {
    let i = Complex64::i();
    let inv_sqrt_pi = 1.0 / PI.sqrt();
    if z.norm() > CF_RADIUS {
        let mut r = Complex64::new(0.0, 0.0);
        for m in (1..=CF_TERMS).rev() {
            r = (0.5 * m as f64) / (z - r);
        }
        return i * inv_sqrt_pi / (z - r);
    }
    let wd = weideman();
    let denom = wd.l - i * z;
    let zz = (wd.l + i * z) / denom;
    let p = wd.coeffs.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, c| acc * zz + c);
    2.0 * p / (denom * denom) + inv_sqrt_pi / denom
}

/// Fried–Conte plasma dispersion function, continued analytically below the
/// real axis.
pub fn plasma_z(zeta: Complex64) -> Complex64 {
    Complex64::i() * PI.sqrt() * faddeeva(zeta)
}

/// `Z'(ζ) = -2(1 + ζZ(ζ))`.
pub fn plasma_z_prime(zeta: Complex64) -> Complex64 {
    -2.0 * (1.0 + zeta * plasma_z(zeta))
}

fn z_and_derivs(zeta: Complex64) -> (Complex64, Complex64, Complex64) {
    let z = plasma_z(zeta);
    let z1 = -2.0 * (1.0 + zeta * z);
    let z2 = -2.0 * (z + zeta * z1);
    (z, z1, z2)
}

/// Parameters of the symmetric two-beam relation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispersionParams {
    pub k: f64,
    pub v0: f64,
    pub vt: f64,
    pub lambda_e: f64,
    pub lambda_i: f64,
    /// Fraction of the ion density in each beam.
    pub beam_density: f64,
}

impl DispersionParams {
    /// `λe = √Te`, `λi = √Ti`, two equal beams.
    pub fn new(k: f64, v0: f64, vt: f64, te: f64, ti: f64) -> Result<Self> {
        let p = DispersionParams {
            k,
            v0,
            vt,
            lambda_e: te.sqrt(),
            lambda_i: ti.sqrt(),
            beam_density: 0.5,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.k != 0.0
            && self.k.is_finite()
            && self.v0.is_finite()
            && self.vt > 0.0
            && self.lambda_e > 0.0
            && self.lambda_i > 0.0
            && self.beam_density > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid dispersion parameters {self:?}")))
        }
    }

    fn zetas(&self, omega: Complex64) -> (Complex64, Complex64) {
        let kv = self.k * self.vt;
        ((omega - self.k * self.v0) / kv, (omega + self.k * self.v0) / kv)
    }

    fn lhs(&self) -> f64 {
        1.0 + 1.0 / (self.k * self.lambda_e).powi(2)
    }

    fn beam_factor(&self) -> f64 {
        self.beam_density / (2.0 * (self.k * self.lambda_i).powi(2))
    }
}

/// Left minus right side of the relation.
pub fn two_stream_residual(params: &DispersionParams, omega: Complex64) -> Complex64 {
    let (zp, zm) = params.zetas(omega);
    params.lhs() - params.beam_factor() * (plasma_z_prime(zp) + plasma_z_prime(zm))
}

fn residual_and_derivative(params: &DispersionParams, omega: Complex64) -> (Complex64, Complex64) {
    let (zp, zm) = params.zetas(omega);
    let (_, p1, p2) = z_and_derivs(zp);
    let (_, m1, m2) = z_and_derivs(zm);
    let c = params.beam_factor();
    let r = params.lhs() - c * (p1 + m1);
    let dr = -c * (p2 + m2) / (params.k * params.vt);
    (r, dr)
}

/// Newton from a single starting point; `None` if it does not reach
/// `|residual| <= 1e-10`.
pub fn find_root(params: &DispersionParams, guess: Complex64) -> Option<Complex64> {
    let mut omega = guess;
    let scale = params.k * params.v0.abs().max(params.vt);
    for _ in 0..100 {
        let (r, dr) = residual_and_derivative(params, omega);
        if !r.is_finite() || !dr.is_finite() || dr.norm() == 0.0 {
            return None;
        }
        let step = r / dr;
        // keep steps within a few beam scales so the iterate stays out of
        // the region where exp(-ζ²) overflows
        let step = if step.norm() > 4.0 * scale { step * (4.0 * scale / step.norm()) } else { step };
        omega -= step;
        if step.norm() <= 1e-14 * omega.norm().max(scale) {
            break;
        }
    }
    let r = two_stream_residual(params, omega);
    (r.is_finite() && r.norm() <= 1e-10).then_some(omega)
}

/// Root with the largest imaginary part among Newton runs from `guess` and
/// from a grid over `Re ω ∈ [-2kv0, 2kv0]`, `Im ω ∈ [0, 2kv0]`.
pub fn solve_growth_rate(params: &DispersionParams, guess: Complex64) -> Result<Complex64> {
    params.validate()?;
    let span = 2.0 * params.k * params.v0.abs().max(params.vt);
    let grid = 12;
    let starts = std::iter::once(guess).chain((0..=grid).flat_map(|a| {
        (0..=grid).map(move |b| {
            Complex64::new(
                -span + 2.0 * span * a as f64 / grid as f64,
                span * (b as f64 + 0.5) / (grid as f64 + 0.5),
            )
        })
    }));
    starts
        .filter_map(|s| find_root(params, s))
        // the relation is symmetric under ω -> -conj(ω)
        .map(|w| if w.re < 0.0 { Complex64::new(-w.re, w.im) } else { w })
        .max_by(|a, b| a.im.total_cmp(&b.im))
        .ok_or(Error::NoRoot)
}
