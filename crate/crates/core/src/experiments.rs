//! Initial conditions, the canned benchmark configurations and rate fitting.

use std::f64::consts::PI;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dynamics::{HamiltonianContext, Scheme, StepperConfig};
use crate::error::{Error, Result};
use crate::fem::{FemContext, FemSpace};
use crate::field::{ElectronModel, SolverConfig};
use crate::mesh::{Grid1D, ParticleEnsemble};

/// Names accepted by [`canned_config`].
pub const EXPERIMENTS: [&str; 3] = ["finite_grid", "landau", "two_stream"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    FiniteGrid,
    Landau,
    TwoStream,
    Custom,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::FiniteGrid => "finite_grid",
            ExperimentKind::Landau => "landau",
            ExperimentKind::TwoStream => "two_stream",
            ExperimentKind::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "finite_grid" => Some(ExperimentKind::FiniteGrid),
            "landau" => Some(ExperimentKind::Landau),
            "two_stream" => Some(ExperimentKind::TwoStream),
            "custom" => Some(ExperimentKind::Custom),
            _ => None,
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How particles are placed in phase space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampler {
    /// Independent draws from a seeded ChaCha8 stream.
    Prng,
    /// Quiet start: evenly spaced position quantiles, bit-reversed velocity
    /// quantiles. The seed is not used.
    Stratified,
}

impl Sampler {
    pub fn name(&self) -> &'static str {
        match self {
            Sampler::Prng => "prng",
            Sampler::Stratified => "stratified",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "prng" => Some(Sampler::Prng),
            "stratified" => Some(Sampler::Stratified),
            _ => None,
        }
    }
}

/// Ion distribution `(1 + α cos(k x)) · M(v)` on `[0, L)`, where `M` is a
/// unit-density Maxwellian `exp(-(v - v0)²/vT²)/(√π vT)` or, for two-stream,
/// the half-and-half mixture drifting at `±v0`.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialCondition {
    pub kind: ExperimentKind,
    pub vt: f64,
    pub v0: f64,
    pub alpha: f64,
    pub k_pert: f64,
    pub te: f64,
    pub n0: f64,
    pub phi0: f64,
    pub charge: f64,
    /// B-spline degree of the particle shape.
    pub degree: usize,
    pub length: f64,
    pub n_cells: usize,
    pub dt: f64,
    pub t_final: f64,
    pub n_particles: usize,
    pub seed: u64,
    pub sampler: Sampler,
}

impl InitialCondition {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.vt > 0.0 && self.vt.is_finite()) {
            return bad(format!("vt must be positive, got {}", self.vt));
        }
        if !self.v0.is_finite() {
            return bad(format!("v0 must be finite, got {}", self.v0));
        }
        if !(self.alpha.abs() < 1.0) {
            return bad(format!("perturbation amplitude must satisfy |alpha| < 1, got {}", self.alpha));
        }
        if self.alpha != 0.0 {
            let modes = self.k_pert * self.length / (2.0 * PI);
            if !(self.k_pert > 0.0) || (modes - modes.round()).abs() > 1e-6 || modes.round() < 1.0 {
                return bad(format!(
                    "k_pert = {} is not a multiple of 2π/L for L = {}",
                    self.k_pert, self.length
                ));
            }
        }
        if !(self.te > 0.0 && self.n0 > 0.0 && self.charge > 0.0) {
            return bad("te, n0 and charge must be positive".into());
        }
        if !self.phi0.is_finite() {
            return bad("phi0 must be finite".into());
        }
        if self.degree > 5 {
            return bad(format!("shape degree must be at most 5, got {}", self.degree));
        }
        if !(self.length > 0.0 && self.length.is_finite()) || self.n_cells < 3 {
            return bad("need length > 0 and at least 3 cells".into());
        }
        if !(self.dt > 0.0) || !(self.t_final >= 0.0) {
            return bad(format!("need dt > 0 and t_final >= 0, got dt = {}, t_final = {}", self.dt, self.t_final));
        }
        if self.n_particles == 0 {
            return bad("n_particles must be at least 1".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid1D> {
        Grid1D::new(self.n_cells, self.length)
    }

    /// Number of steps to reach `t_final`, rounded to the nearest integer.
    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    pub fn electron_model(&self) -> Result<ElectronModel> {
        ElectronModel::uniform(self.n_cells, self.n0, self.te, self.phi0, self.charge)
    }

    /// Finite-difference backend with smoothed particles.
    pub fn fd_backend(&self, solver: SolverConfig) -> Result<HamiltonianContext> {
        HamiltonianContext::new(self.grid()?, self.degree, self.electron_model()?, solver)
    }

    /// Finite-element backend with point particles and a degree-`fem_degree`
    /// spline potential.
    pub fn fem_backend(&self, solver: SolverConfig, fem_degree: usize) -> Result<FemContext> {
        FemContext::new(FemSpace::new(self.grid()?, fem_degree)?, self.electron_model()?, solver)
    }

    /// Cumulative spatial distribution `F(x) = (x + α sin(kx)/k)/L`.
    fn position_cdf(&self, x: f64) -> f64 {
        let pert = if self.alpha == 0.0 { 0.0 } else { self.alpha * (self.k_pert * x).sin() / self.k_pert };
        (x + pert) / self.length
    }

    fn position_quantile(&self, u: f64) -> f64 {
        if self.alpha == 0.0 {
            return u * self.length;
        }
        let (mut lo, mut hi) = (0.0, self.length);
        while hi - lo > 1e-12 * self.length {
            let mid = 0.5 * (lo + hi);
            if self.position_cdf(mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn drift_of(&self, k: usize) -> f64 {
        match self.kind {
            ExperimentKind::TwoStream if k % 2 == 1 => -self.v0,
            _ => self.v0,
        }
    }
}

/// Draws the ion ensemble. All weights are `L/N_p`; positions follow
/// `1 + α cos(kx)`, velocities are normal with standard deviation `vT/√2`.
pub fn sample_initial(ic: &InitialCondition) -> Result<ParticleEnsemble> {
    ic.validate()?;
    let np = ic.n_particles;
    let sigma = ic.vt / 2f64.sqrt();
    let (positions, normals): (Vec<f64>, Vec<f64>) = match ic.sampler {
        Sampler::Prng => {
            let mut rng = ChaCha8Rng::seed_from_u64(ic.seed);
            (0..np)
                .map(|_| {
                    let u: f64 = rng.random();
                    let g: f64 = rng.sample(StandardNormal);
                    (ic.position_quantile(u), g)
                })
                .unzip()
        }
        Sampler::Stratified => {
            let normal = Normal::standard();
            (0..np)
                .map(|k| {
                    let u = (k as f64 + 0.5) / np as f64;
                    // two-stream beams alternate, so each beam gets its own
                    // bit-reversed sequence
                    let idx = if ic.kind == ExperimentKind::TwoStream { k / 2 } else { k };
                    (ic.position_quantile(u), normal.inverse_cdf(van_der_corput(idx)))
                })
                .unzip()
        }
    };
    let velocities = normals
        .iter()
        .enumerate()
        .map(|(k, g)| ic.drift_of(k) + sigma * g)
        .collect();
    ParticleEnsemble::new(vec![ic.length / np as f64; np], positions, velocities, &ic.grid()?)
}

/// Base-2 radical inverse of `n + 1`, in `(0, 1)`.
fn van_der_corput(n: usize) -> f64 {
    let mut n = n + 1;
    let mut x = 0.0;
    let mut f = 0.5;
    while n > 0 {
        if n & 1 == 1 {
            x += f;
        }
        n >>= 1;
        f *= 0.5;
    }
    x
}

/// Full parameter set of a benchmark run.
#[derive(Debug, Clone, PartialEq)]
pub struct CannedConfig {
    pub initial: InitialCondition,
    pub stepper: StepperConfig,
    pub solver: SolverConfig,
}

/// The three benchmark setups with `N_p = 10⁵`, Strang splitting.
pub fn canned_config(name: &str) -> Result<CannedConfig> {
    let kind = match ExperimentKind::parse(name) {
        Some(k) if k != ExperimentKind::Custom => k,
        _ => return Err(Error::UnknownExperiment(name.to_string())),
    };
    let base = InitialCondition {
        kind,
        vt: 0.1,
        v0: 0.0,
        alpha: 0.0,
        k_pert: 0.0,
        te: 1.0,
        n0: 1.0,
        phi0: 0.0,
        charge: 1.0,
        degree: 2,
        length: 5.0 * PI,
        n_cells: 33,
        dt: 0.005,
        t_final: 100.0,
        n_particles: 100_000,
        seed: 0,
        sampler: Sampler::Prng,
    };
    let initial = match kind {
        ExperimentKind::FiniteGrid => InitialCondition { v0: 0.1, ..base },
        #[allow(clippy::approx_constant)] // four digits on purpose, not √2
        ExperimentKind::Landau => InitialCondition {
            vt: 1.4142,
            alpha: 0.5,
            k_pert: 0.5,
            te: 100.0,
            length: 4.0 * PI,
            n_cells: 65,
            dt: 0.05,
            t_final: 40.0,
            ..base
        },
        ExperimentKind::TwoStream => InitialCondition {
            v0: 0.4,
            te: 10.0,
            n_cells: 32,
            dt: 0.01,
            t_final: 40.0,
            ..base
        },
        ExperimentKind::Custom => unreachable!(),
    };
    Ok(CannedConfig {
        stepper: StepperConfig::new(Scheme::Strang, initial.dt),
        solver: SolverConfig::default(),
        initial,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateMode {
    /// Fit through the local maxima of an oscillating, decaying signal.
    Decay,
    /// Fit through every sample.
    Growth,
}

/// Ordinary least-squares line with the standard error of its slope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    let n = x.len().min(y.len());
    if n < 2 {
        return Err(Error::InsufficientData { found: n, needed: 2 });
    }
    let nf = n as f64;
    let mx = x[..n].iter().sum::<f64>() / nf;
    let my = y[..n].iter().sum::<f64>() / nf;
    let sxx: f64 = x[..n].iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x[..n].iter().zip(&y[..n]).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData { found: 1, needed: 2 });
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_stderr = if n > 2 {
        let sse: f64 = x[..n].iter().zip(&y[..n]).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
        (sse / (nf - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(LinearFit {
        slope,
        intercept,
        slope_stderr,
    })
}

/// Exponential rate of `amplitude(t)` over `window`: the slope of
/// `ln(amplitude)` against `t`. In decay mode the fit uses the local maxima
/// inside the window and falls back to all samples when there are fewer than
/// two of them.
pub fn measure_rate(series: &[(f64, f64)], window: (f64, f64), mode: RateMode) -> Result<f64> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .copied()
        .filter(|(t, _)| *t >= window.0 && *t <= window.1)
        .collect();
    if let Some((t, a)) = pts.iter().find(|(_, a)| !(*a > 0.0)) {
        return Err(Error::InvalidConfig(format!("amplitude {a} at t = {t} is not positive")));
    }
    let fit = |p: &[(f64, f64)]| -> Result<f64> {
        let (t, y): (Vec<f64>, Vec<f64>) = p.iter().map(|(t, a)| (*t, a.ln())).unzip();
        Ok(linear_fit(&t, &y)?.slope)
    };
    if pts.len() < 2 {
        return Err(Error::InsufficientData { found: pts.len(), needed: 2 });
    }
    match mode {
        RateMode::Growth => fit(&pts),
        RateMode::Decay => {
            let peaks: Vec<(f64, f64)> = (1..pts.len() - 1)
                .filter(|&i| pts[i].1 >= pts[i - 1].1 && pts[i].1 >= pts[i + 1].1)
                .map(|i| pts[i])
                .collect();
            if peaks.len() >= 2 {
                fit(&peaks)
            } else {
                fit(&pts)
            }
        }
    }
}

/// Linear phase of an instability: the interval that ends when the amplitude
/// first reaches `e^-1` of its maximum and starts at the last earlier sample
/// below `e^-3` of that maximum. `None` if the signal never spans that range.
pub fn linear_phase_window(series: &[(f64, f64)]) -> Option<(f64, f64)> {
    let peak = series.iter().map(|(_, a)| *a).fold(0.0, f64::max);
    let end = series.iter().position(|(_, a)| *a >= peak * (-1.0f64).exp())?;
    let start = series[..end].iter().rposition(|(_, a)| *a <= peak * (-3.0f64).exp())?;
    Some((series[start].0, series[end].0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::ChiSquared;

    fn small(name: &str, np: usize) -> InitialCondition {
        InitialCondition {
            n_particles: np,
            seed: 7,
            ..canned_config(name).unwrap().initial
        }
    }

    #[test]
    fn canned_parameters() {
        let l = canned_config("landau").unwrap();
        assert_eq!((l.initial.n_cells, l.initial.length, l.initial.dt), (65, 4.0 * PI, 0.05));
        assert_eq!((l.initial.alpha, l.initial.k_pert, l.initial.te, l.initial.vt), (0.5, 0.5, 100.0, 1.4142));
        let f = canned_config("finite_grid").unwrap();
        assert_eq!((f.initial.n_cells, f.initial.length, f.initial.dt), (33, 5.0 * PI, 0.005));
        assert_eq!((f.initial.v0, f.initial.vt, f.initial.te), (0.1, 0.1, 1.0));
        let t = canned_config("two_stream").unwrap();
        assert_eq!((t.initial.v0, t.initial.te, t.initial.n_cells, t.initial.t_final), (0.4, 10.0, 32, 40.0));
        for name in EXPERIMENTS {
            let c = canned_config(name).unwrap();
            assert_eq!((c.initial.charge, c.initial.n0, c.initial.degree), (1.0, 1.0, 2));
            assert_eq!((c.solver.tol, c.initial.n_particles), (1e-12, 100_000));
            assert_eq!(c.stepper.dt, c.initial.dt);
            c.initial.validate().unwrap();
        }
        assert!(matches!(canned_config("bump_on_tail"), Err(Error::UnknownExperiment(_))));
        assert!(matches!(canned_config("custom"), Err(Error::UnknownExperiment(_))));
    }

    #[test]
    fn weights_and_mean_velocity() {
        let ic = canned_config("finite_grid").unwrap().initial;
        let p = sample_initial(&ic).unwrap();
        assert!(p.weights.iter().all(|&w| w == ic.length / 1e5));
        let mean = p.velocities.iter().sum::<f64>() / 1e5;
        let bound = 3.0 * (0.1 / 2f64.sqrt()) / 1e5f64.sqrt();
        assert!((mean - 0.1).abs() <= bound, "{mean}");
    }

    #[test]
    fn landau_positions_fit_the_perturbed_density() {
        let ic = small("landau", 100_000);
        let p = sample_initial(&ic).unwrap();
        let bins = 32;
        let mut counts = vec![0.0; bins];
        for x in &p.positions {
            counts[((x / ic.length * bins as f64) as usize).min(bins - 1)] += 1.0;
        }
        let h = ic.length / bins as f64;
        let chi2: f64 = (0..bins)
            .map(|b| {
                let a = b as f64 * h;
                let mass = (ic.position_cdf(a + h) - ic.position_cdf(a)) * 1e5;
                (counts[b] - mass).powi(2) / mass
            })
            .sum();
        let p_value = 1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(chi2);
        assert!(p_value > 1e-3, "chi2 = {chi2}");
    }

    #[test]
    fn velocity_spread() {
        for sampler in [Sampler::Prng, Sampler::Stratified] {
            let ic = InitialCondition { sampler, ..small("landau", 50_000) };
            let p = sample_initial(&ic).unwrap();
            let var = p.velocities.iter().map(|v| v * v).sum::<f64>() / 5e4;
            assert!((var - 1.0).abs() < 0.03, "{sampler:?}: {var}");
        }
    }

    #[test]
    fn quantile_inverts_cdf() {
        let ic = small("landau", 10);
        for u in [0.0, 0.1, 0.37, 0.5, 0.93, 1.0] {
            let x = ic.position_quantile(u);
            assert!((ic.position_cdf(x) - u).abs() <= 1e-11);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        for sampler in [Sampler::Prng, Sampler::Stratified] {
            let ic = InitialCondition { sampler, ..small("two_stream", 1000) };
            let a = sample_initial(&ic).unwrap();
            let b = sample_initial(&ic).unwrap();
            assert_eq!(a, b);
        }
        let a = sample_initial(&small("landau", 100)).unwrap();
        let b = sample_initial(&InitialCondition { seed: 8, ..small("landau", 100) }).unwrap();
        assert_ne!(a.positions, b.positions);
    }

    #[test]
    fn two_stream_is_symmetric() {
        let ic = small("two_stream", 100_000);
        let p = sample_initial(&ic).unwrap();
        let n = p.len() as f64;
        let mean = p.velocities.iter().sum::<f64>() / n;
        let var = p.velocities.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let skew = p.velocities.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n / var.powf(1.5);
        assert!(skew.abs() <= 3.0 * (6.0 / n).sqrt(), "{skew}");
        // beams alternate
        assert!(p.velocities[0] > 0.0 && p.velocities[1] < 0.0);
    }

    #[test]
    fn van_der_corput_sequence() {
        let got: Vec<f64> = (0..6).map(van_der_corput).collect();
        assert_eq!(got, vec![0.5, 0.25, 0.75, 0.125, 0.625, 0.375]);
    }

    #[test]
    fn validation() {
        let ok = small("landau", 10);
        assert!(InitialCondition { k_pert: 0.3, ..ok.clone() }.validate().is_err());
        assert!(InitialCondition { alpha: 1.0, ..ok.clone() }.validate().is_err());
        assert!(InitialCondition { dt: -1.0, ..ok.clone() }.validate().is_err());
        assert!(InitialCondition { n_particles: 0, ..ok.clone() }.validate().is_err());
        assert!(InitialCondition { vt: 0.0, ..ok }.validate().is_err());
    }

    #[test]
    fn exact_exponential_rate() {
        let s: Vec<(f64, f64)> = (0..200).map(|i| (0.05 * i as f64, 2.0 * (-0.2854 * 0.05 * i as f64).exp())).collect();
        for mode in [RateMode::Decay, RateMode::Growth] {
            assert!((measure_rate(&s, (0.0, 10.0), mode).unwrap() + 0.2854).abs() <= 1e-10);
        }
        let c: Vec<(f64, f64)> = (0..50).map(|i| (i as f64, 3.0)).collect();
        assert!(measure_rate(&c, (0.0, 50.0), RateMode::Decay).unwrap().abs() < 1e-14);
        assert!(measure_rate(&c, (0.0, 50.0), RateMode::Growth).unwrap().abs() < 1e-14);
    }

    #[test]
    fn damped_oscillation_peak_fit() {
        let s: Vec<(f64, f64)> = (0..2000)
            .map(|i| {
                let t = 0.01 * i as f64;
                (t, (1.4 * t).cos().abs() * (-0.3 * t).exp())
            })
            .collect();
        let r = measure_rate(&s, (0.0, 20.0), RateMode::Decay).unwrap();
        assert!((r + 0.3).abs() <= 0.01, "{r}");
    }

    #[test]
    fn linear_phase_of_saturating_growth() {
        // e^{0.25 t} saturating at 1 from 1e-3, with an early transient
        let s: Vec<(f64, f64)> = (0..400)
            .map(|i| {
                let t = 0.1 * i as f64;
                let a = (1e-3 * (0.25 * t).exp()).min(1.0) + if t < 2.0 { 0.05 * (2.0 - t) } else { 0.0 };
                (t, a)
            })
            .collect();
        let (t0, t1) = linear_phase_window(&s).unwrap();
        assert!((t0 - (-3.0 - 1e-3f64.ln()) / 0.25).abs() < 0.11, "{t0}");
        assert!((t1 - (-1.0 - 1e-3f64.ln()) / 0.25).abs() < 0.11, "{t1}");
        let r = measure_rate(&s, (t0, t1), RateMode::Growth).unwrap();
        assert!((r - 0.25).abs() < 1e-10);
        assert!(linear_phase_window(&[(0.0, 1.0), (1.0, 1.1)]).is_none());
    }

    #[test]
    fn rate_errors() {
        let s = vec![(0.0, 1.0), (1.0, 0.5)];
        assert!(matches!(measure_rate(&s, (5.0, 6.0), RateMode::Growth), Err(Error::InsufficientData { .. })));
        assert!(measure_rate(&[(0.0, 1.0), (1.0, 0.0)], (0.0, 1.0), RateMode::Growth).is_err());
    }

    #[test]
    fn linear_fit_recovers_line_and_zero_error() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let f = linear_fit(&x, &y).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-14 && (f.intercept - 2.0).abs() < 1e-13);
        assert!(f.slope_stderr < 1e-14);
    }

    #[test]
    fn initial_neutrality_for_canned_configs() {
        for name in EXPERIMENTS {
            let ic = small(name, 2000);
            let ctx = ic.fd_backend(SolverConfig::default()).unwrap();
            let p = sample_initial(&ic).unwrap();
            let f = crate::dynamics::FieldBackend::solve_field(&ctx, &p, None).unwrap();
            let err = crate::dynamics::FieldBackend::neutrality_error(&ctx, &p, &f.phi);
            assert!(err.abs() <= 1e-12 * ic.length, "{name}: {err}");
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn sampler_is_bit_deterministic(seed in any::<u64>(), ix in 0usize..3, stratified in any::<bool>()) {
                let name = ["finite_grid", "landau", "two_stream"][ix];
                let ic = InitialCondition {
                    n_particles: 500,
                    seed,
                    sampler: if stratified { Sampler::Stratified } else { Sampler::Prng },
                    ..canned_config(name).unwrap().initial
                };
                let a = sample_initial(&ic).unwrap();
                let b = sample_initial(&ic).unwrap();
                prop_assert_eq!(&a, &b);
                prop_assert!(a.positions.iter().all(|x| (0.0..ic.length).contains(x)));
                prop_assert!((a.total_weight() - ic.length).abs() <= 1e-12 * ic.length);
            }
        }
    }
}
