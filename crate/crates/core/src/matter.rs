//! Baryon density profiles and the charged-current matter potential.

use crate::error::{Error, Result};
use crate::units;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// Radiation-dominated envelope `n_b ~ r^-3`.
    PowerLaw,
    /// Exponential atmosphere above the neutrino sphere.
    Exponential,
    /// Sum of the power law and the exponential atmosphere.
    Sum,
    /// No matter: `A = 0`.
    Off,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::PowerLaw => "powerlaw",
            Profile::Exponential => "exponential",
            Profile::Sum => "sum",
            Profile::Off => "off",
        }
    }

    pub fn from_name(s: &str) -> Option<Profile> {
        [
            Profile::PowerLaw,
            Profile::Exponential,
            Profile::Sum,
            Profile::Off,
        ]
        .into_iter()
        .find(|p| p.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatterParams {
    /// Electron fraction.
    pub ye: f64,
    /// Baryon density at the neutrino sphere, cm^-3.
    pub nb0: f64,
    /// Neutrino sphere radius, km.
    pub rnu: f64,
    /// Atmosphere scale height, km.
    pub h_ns: f64,
    /// Proto-neutron star mass, solar masses.
    pub mns: f64,
    /// Statistical weight of relativistic particles.
    pub gs: f64,
    /// Entropy per baryon.
    pub entropy: f64,
    pub profile: Profile,
}

impl MatterParams {
    pub fn off(rnu: f64) -> Self {
        MatterParams {
            ye: 0.0,
            nb0: 0.0,
            rnu,
            h_ns: 1.0,
            mns: 1.4,
            gs: 11.0 / 2.0,
            entropy: 100.0,
            profile: Profile::Off,
        }
    }
}

fn check_radius(r: f64, p: &MatterParams) -> Result<()> {
    if !(r >= p.rnu) {
        return Err(Error::Domain(format!(
            "radius {r} km is inside the neutrino sphere ({} km)",
            p.rnu
        )));
    }
    Ok(())
}

/// Power-law envelope `4.2e30 gs (M/1.4)^3 (100/S)^4 (10 km / r)^3` in cm^-3.
pub fn power_law_density(r: f64, p: &MatterParams) -> f64 {
    units::POWER_LAW_NB_ANCHOR
        * p.gs
        * (p.mns / 1.4).powi(3)
        * (100.0 / p.entropy).powi(4)
        * (10.0 / r).powi(3)
}

/// Exponential atmosphere `nb0 exp(-(r - R) / hNS)` in cm^-3.
pub fn exponential_density(r: f64, p: &MatterParams) -> f64 {
    p.nb0 * (-(r - p.rnu) / p.h_ns).exp()
}

/// Baryon number density at radius `r` km, in cm^-3.
pub fn baryon_density(r: f64, p: &MatterParams) -> Result<f64> {
    check_radius(r, p)?;
    Ok(match p.profile {
        Profile::PowerLaw => power_law_density(r, p),
        Profile::Exponential => exponential_density(r, p),
        Profile::Sum => power_law_density(r, p) + exponential_density(r, p),
        Profile::Off => 0.0,
    })
}

/// Matter potential `sqrt(2) G_F Ye n_b(r)` in 1/km (neutrino sign).
pub fn matter_potential(r: f64, p: &MatterParams) -> Result<f64> {
    let nb = baryon_density(r, p)?;
    Ok(units::sqrt2_gf_per_cm3_in_inv_km() * p.ye * nb)
}
