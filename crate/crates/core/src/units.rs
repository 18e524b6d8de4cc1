//! Physical constants and the conversions into the simulator's working
//! units: lengths in km, energies in MeV, Hamiltonian entries in 1/km.

/// Fermi coupling constant, MeV^-2 (CODATA 2018: 1.1663787e-5 GeV^-2).
pub const G_FERMI: f64 = 1.1663787e-11;

/// Reduced Planck constant times c, MeV fm (CODATA 2018).
pub const HBAR_C_MEV_FM: f64 = 197.3269804;

/// hbar*c in MeV cm.
pub const HBAR_C_MEV_CM: f64 = HBAR_C_MEV_FM * 1e-13;

/// hbar*c in MeV km.
pub const HBAR_C_MEV_KM: f64 = HBAR_C_MEV_FM * 1e-18;

/// 1 MeV in erg (exact SI definition of the electronvolt).
pub const MEV_IN_ERG: f64 = 1.602176634e-6;

/// Speed of light, cm/s (exact).
pub const C_CM_PER_S: f64 = 2.99792458e10;

/// Planck mass, MeV (value used by the power-law baryon profile).
pub const PLANCK_MASS_MEV: f64 = 1.221e22;

/// Nucleon mass, MeV (mean of proton and neutron).
pub const NUCLEON_MASS_MEV: f64 = 938.918;

/// Solar mass, MeV (1.98847e30 kg).
pub const SOLAR_MASS_MEV: f64 = 1.115_420e60;

/// Power-law baryon density anchor at 10 km, gs = 1, M = 1.4 Msun, S = 100, in cm^-3.
pub const POWER_LAW_NB_ANCHOR: f64 = 4.2e30;

pub const KM_IN_CM: f64 = 1e5;

/// sqrt(2) G_F n converted to 1/km, per unit number density in cm^-3.
///
/// sqrt(2) G_F (hbar c)^3 n gives an energy in MeV; dividing by hbar c in
/// MeV km yields the inverse length used by the evolution operator.
pub fn sqrt2_gf_per_cm3_in_inv_km() -> f64 {
    std::f64::consts::SQRT_2 * G_FERMI * HBAR_C_MEV_CM.powi(3) / HBAR_C_MEV_KM
}

/// Vacuum oscillation frequency dm2/(2E) in 1/km, for dm2 in eV^2 and E in MeV.
pub fn vacuum_frequency(dm2_ev2: f64, energy_mev: f64) -> f64 {
    let delta_mev = dm2_ev2 * 1e-12 / (2.0 * energy_mev);
    delta_mev / HBAR_C_MEV_KM
}

/// Number density (cm^-3) of a free-streaming flux `rate` (1/s) crossing a
/// sphere of radius `radius_km`, divided by 2 pi R^2 c.
pub fn flux_number_density(rate_per_s: f64, radius_km: f64) -> f64 {
    let r_cm = radius_km * KM_IN_CM;
    rate_per_s / (2.0 * std::f64::consts::PI * r_cm * r_cm * C_CM_PER_S)
}

/// Coupling strength sqrt(2) G_F (L/<E>) / (2 pi R^2 c) in 1/km.
pub fn self_coupling(luminosity_erg_s: f64, mean_energy_mev: f64, radius_km: f64) -> f64 {
    if luminosity_erg_s == 0.0 {
        return 0.0;
    }
    let rate = luminosity_erg_s / (mean_energy_mev * MEV_IN_ERG);
    sqrt2_gf_per_cm3_in_inv_km() * flux_number_density(rate, radius_km)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vacuum_frequency_magnitude() {
        // 3e-3 eV^2 at 10 MeV: 1.5e-10 eV / 1.9733e-10 eV km
        let d = vacuum_frequency(3e-3, 10.0);
        assert!((d - 0.760_159).abs() < 1e-5, "{d}");
        assert!(vacuum_frequency(-3e-3, 10.0) < 0.0);
    }

    #[test]
    fn coupling_magnitude() {
        let mu = self_coupling(1e51, 11.0, 10.0);
        assert!((mu / 1.9348e5 - 1.0).abs() < 1e-3, "{mu}");
        assert_eq!(self_coupling(0.0, 11.0, 10.0), 0.0);
    }

    #[test]
    fn power_law_anchor_from_first_principles() {
        // (2 pi^2/45) (M m_N / m_Pl^2)^3 S^-4 r^-3 with gs=1, 1.4 Msun, S=100, r=10 km
        let m = 1.4 * SOLAR_MASS_MEV * NUCLEON_MASS_MEV / (PLANCK_MASS_MEV * PLANCK_MASS_MEV);
        let r_inv_mev = 10.0 * KM_IN_CM / HBAR_C_MEV_CM;
        let nb_mev3 = 2.0 * std::f64::consts::PI.powi(2) / 45.0 * m.powi(3)
            / 100f64.powi(4)
            / r_inv_mev.powi(3);
        let nb = nb_mev3 / HBAR_C_MEV_CM.powi(3);
        assert!((nb / POWER_LAW_NB_ANCHOR - 1.0).abs() < 0.05, "{nb:e}");
    }
}
