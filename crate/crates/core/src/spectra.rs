//! Fermi-Dirac emission spectra and the complete Fermi integrals.

use crate::error::{Error, Result};
use crate::flavor::Species;

/// Upper quadrature limit is `eta + FERMI_CUTOFF`; beyond it the
/// integrand is replaced by its Boltzmann tail, which is exact to ~e^-40.
const FERMI_CUTOFF: f64 = 40.0;
const FERMI_ABS_TOL: f64 = 1e-10;
const MAX_DEPTH: u32 = 48;

/// `x^k / (exp(x - eta) + 1)` evaluated without overflow.
fn fermi_integrand(k: u32, eta: f64, x: f64) -> f64 {
    let xk = x.powi(k as i32);
    let z = x - eta;
    if z > 0.0 {
        let e = (-z).exp();
        xk * e / (1.0 + e)
    } else {
        xk / (z.exp() + 1.0)
    }
}

/// `e^eta * Gamma(k+1, a)`: the integral of `x^k exp(eta - x)` over `[a, inf)`.
fn boltzmann_tail(k: u32, eta: f64, a: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    for j in 1..=k {
        term *= a / j as f64;
        sum += term;
    }
    let kfact: f64 = (1..=k).map(|j| j as f64).product();
    kfact * sum * (eta - a).exp()
}

struct Simpson<F: Fn(f64) -> f64> {
    f: F,
    failed: bool,
}

impl<F: Fn(f64) -> f64> Simpson<F> {
    #[allow(clippy::too_many_arguments)]
    fn step(
        &mut self,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = (self.f)(lm);
        let frm = (self.f)(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        if depth == 0 {
            self.failed = true;
            return left + right + delta / 15.0;
        }
        self.step(a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + self.step(m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
///
/// The interval is first cut into `pieces` panels so that smooth but
/// sharply varying integrands are not mistaken for converged on the
/// coarsest level.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, pieces: usize) -> Result<f64> {
    let mut s = Simpson { f, failed: false };
    let h = (b - a) / pieces as f64;
    let panel_tol = tol / pieces as f64;
    let mut total = 0.0;
    for p in 0..pieces {
        let x0 = a + p as f64 * h;
        let x1 = if p + 1 == pieces { b } else { x0 + h };
        let (f0, fm, f1) = ((s.f)(x0), (s.f)(0.5 * (x0 + x1)), (s.f)(x1));
        let whole = (x1 - x0) / 6.0 * (f0 + 4.0 * fm + f1);
        total += s.step(x0, x1, f0, fm, f1, whole, panel_tol, MAX_DEPTH);
    }
    if s.failed || !total.is_finite() {
        return Err(Error::Numeric(format!(
            "quadrature on [{a}, {b}] did not converge to {tol:e} (estimate {total})"
        )));
    }
    Ok(total)
}

/// Complete Fermi integral `F_k(eta) = int_0^inf x^k / (exp(x - eta) + 1) dx`.
pub fn fermi_integral(k: u32, eta: f64) -> Result<f64> {
    if !eta.is_finite() {
        return Err(Error::Numeric(format!(
            "Fermi integral F_{k} at non-finite eta {eta}"
        )));
    }
    let upper = (eta + FERMI_CUTOFF).max(FERMI_CUTOFF);
    let pieces = (upper / 2.0).ceil() as usize;
    let body = integrate(
        |x| fermi_integrand(k, eta, x),
        0.0,
        upper,
        FERMI_ABS_TOL,
        pieces,
    )?;
    Ok(body + boltzmann_tail(k, eta, upper))
}

/// Temperature of a Fermi-Dirac spectrum with the given mean energy:
/// `T = <E> F_2(eta) / F_3(eta)`.
pub fn temperature_from_mean_energy(mean_energy: f64, eta: f64) -> Result<f64> {
    if !(mean_energy > 0.0) {
        return Err(Error::Config(format!(
            "mean energy must be positive, got {mean_energy}"
        )));
    }
    Ok(mean_energy * fermi_integral(2, eta)? / fermi_integral(3, eta)?)
}

/// Mean energy `T F_3(eta) / F_2(eta)` of a spectrum with temperature `T`.
pub fn mean_energy_from_temperature(temperature: f64, eta: f64) -> Result<f64> {
    Ok(temperature * fermi_integral(3, eta)? / fermi_integral(2, eta)?)
}

/// Emission parameters of one species.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumParams {
    /// Temperature, MeV.
    pub temperature: f64,
    /// Degeneracy parameter.
    pub eta: f64,
    /// Energy luminosity, erg/s.
    pub luminosity: f64,
    /// Mean energy, MeV.
    pub mean_energy: f64,
}

impl SpectrumParams {
    pub fn from_temperature(temperature: f64, eta: f64, luminosity: f64) -> Result<Self> {
        if !(temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        let mean_energy = mean_energy_from_temperature(temperature, eta)?;
        Self::checked(SpectrumParams {
            temperature,
            eta,
            luminosity,
            mean_energy,
        })
    }

    pub fn from_mean_energy(mean_energy: f64, eta: f64, luminosity: f64) -> Result<Self> {
        let temperature = temperature_from_mean_energy(mean_energy, eta)?;
        Self::checked(SpectrumParams {
            temperature,
            eta,
            luminosity,
            mean_energy,
        })
    }

    fn checked(p: SpectrumParams) -> Result<Self> {
        if !(p.luminosity >= 0.0) || !p.luminosity.is_finite() {
            return Err(Error::Config(format!(
                "luminosity must be finite and >= 0, got {}",
                p.luminosity
            )));
        }
        Ok(p)
    }

    /// Number emission rate `L / <E>` in 1/s.
    pub fn number_rate(&self) -> f64 {
        self.luminosity / (self.mean_energy * crate::units::MEV_IN_ERG)
    }
}

/// Energy bin layout: `ebins` uniform bins on `[e0, e1]` sampled at centers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyGrid {
    pub e0: f64,
    pub e1: f64,
    pub ebins: usize,
}

impl EnergyGrid {
    pub fn new(e0: f64, e1: f64, ebins: usize) -> Result<Self> {
        if !(e0 >= 0.0 && e1 > e0) {
            return Err(Error::Config(format!(
                "energy range needs 0 <= E0 < E1, got [{e0}, {e1}]"
            )));
        }
        if ebins == 0 {
            return Err(Error::Config("Ebins must be at least 1".into()));
        }
        Ok(EnergyGrid { e0, e1, ebins })
    }

    pub fn width(&self) -> f64 {
        (self.e1 - self.e0) / self.ebins as f64
    }

    pub fn center(&self, e: usize) -> f64 {
        self.e0 + (e as f64 + 0.5) * self.width()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.ebins).map(|e| self.center(e)).collect()
    }
}

/// Sampled spectrum of one species.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumTable {
    pub species: Species,
    pub params: SpectrumParams,
    pub grid: EnergyGrid,
    /// Bin-center energies, MeV.
    pub energies: Vec<f64>,
    /// Spectral density f(E), 1/MeV.
    pub f: Vec<f64>,
    /// Quadrature weights f(E) dE.
    pub weights: Vec<f64>,
}

/// Normalized Fermi-Dirac density `E^2 / (F_2(eta) T^3 (exp(E/T - eta) + 1))`.
pub fn fermi_dirac_density(energy: f64, temperature: f64, eta: f64, f2: f64) -> f64 {
    let x = energy / temperature;
    fermi_integrand(2, eta, x) / (f2 * temperature)
}

pub fn build_spectrum(
    species: Species,
    params: SpectrumParams,
    grid: EnergyGrid,
) -> Result<SpectrumTable> {
    if !(params.temperature > 0.0) {
        return Err(Error::Config(format!(
            "{} temperature must be positive, got {}",
            species.name(),
            params.temperature
        )));
    }
    let f2 = fermi_integral(2, params.eta)?;
    let energies = grid.centers();
    let f: Vec<f64> = energies
        .iter()
        .map(|&e| fermi_dirac_density(e, params.temperature, params.eta, f2))
        .collect();
    let de = grid.width();
    let weights = f.iter().map(|v| v * de).collect();
    Ok(SpectrumTable {
        species,
        params,
        grid,
        energies,
        f,
        weights,
    })
}

impl SpectrumTable {
    pub fn ebins(&self) -> usize {
        self.grid.ebins
    }

    /// Discrete normalization `sum f dE`.
    pub fn grid_norm(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Probability mass lost to the finite energy window and the midpoint rule.
    pub fn truncation_deficit(&self) -> f64 {
        1.0 - self.grid_norm()
    }

    /// Mean energy over the grid, `sum E f dE / sum f dE`.
    pub fn grid_mean_energy(&self) -> f64 {
        let num: f64 = self
            .energies
            .iter()
            .zip(&self.weights)
            .map(|(e, w)| e * w)
            .sum();
        num / self.grid_norm()
    }

    /// Index of the largest sample.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.f.iter().enumerate() {
            if *v > self.f[best] {
                best = i;
            }
        }
        best
    }
}
