//! Emission-angle grids and assembly of the neutrino-neutrino Hamiltonian
//! for the single-angle, bulb and extended-bulb models.
//!
//! Trajectories are indexed `t = j * pbins + k` with `j` the emission
//! angle bin and `k` the azimuth bin. The factorized reduction works on
//! per-trajectory integrands `R(t)`; partial sums over any subset of
//! trajectories are kept as exact floating-point expansions, so the
//! reduced total is the correctly rounded sum regardless of how the
//! trajectories were split between lanes.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::flavor::{Ham2, ReductionRow, Species};
use crate::units;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    SingleAngle,
    Bulb,
    ExtendedBulb,
}

impl Model {
    pub fn name(self) -> &'static str {
        match self {
            Model::SingleAngle => "single",
            Model::Bulb => "bulb",
            Model::ExtendedBulb => "extended",
        }
    }

    pub fn from_name(s: &str) -> Option<Model> {
        [Model::SingleAngle, Model::Bulb, Model::ExtendedBulb]
            .into_iter()
            .find(|m| m.name() == s)
    }

    /// Number of reduction rows exchanged per Hamiltonian evaluation.
    pub fn slots(self) -> usize {
        match self {
            Model::SingleAngle => 1,
            Model::Bulb => 2,
            Model::ExtendedBulb => 4,
        }
    }
}

/// `sqrt(1 - (R/r)^2 (1 - cos^2 theta0))`, the local angle to the radial
/// direction of a trajectory emitted at `theta0`.
pub fn cos_theta_prime(r: f64, cos2_theta0: f64, rnu: f64) -> Result<f64> {
    if !(r >= rnu) {
        return Err(Error::Domain(format!(
            "radius {r} km is inside the neutrino sphere ({rnu} km)"
        )));
    }
    if !(0.0..=1.0).contains(&cos2_theta0) {
        return Err(Error::Domain(format!(
            "cos^2 theta0 = {cos2_theta0} outside [0, 1]"
        )));
    }
    let q = rnu / r;
    Ok((1.0 - q * q * (1.0 - cos2_theta0)).sqrt())
}

/// Single-angle geometric factor `[1 - sqrt(1 - (R/r)^2)]^2 / 2`.
pub fn geometric_factor_d(r: f64, rnu: f64) -> Result<f64> {
    if !(r >= rnu) {
        return Err(Error::Domain(format!(
            "radius {r} km is inside the neutrino sphere ({rnu} km)"
        )));
    }
    let q = rnu / r;
    let s = 1.0 - (1.0 - q * q).sqrt();
    Ok(0.5 * s * s)
}

/// Per-species self-interaction strengths in 1/km, in [`Species::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Couplings(pub [f64; 4]);

impl Couplings {
    /// `sqrt(2) G_F (L/<E>) / (2 pi R^2 c)` per species, times `scale`.
    pub fn from_emission(
        luminosity: [f64; 4],
        mean_energy: [f64; 4],
        rnu: f64,
        scale: f64,
    ) -> Self {
        let mut mu = [0.0; 4];
        for s in 0..4 {
            mu[s] = scale * units::self_coupling(luminosity[s], mean_energy[s], rnu);
        }
        Couplings(mu)
    }

    pub fn get(&self, s: Species) -> f64 {
        self.0[s.index()]
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|m| *m == 0.0)
    }
}

/// Flavor-summed integrand `sum_f [mu_f S_f - mu_fbar conj(S_fbar)]` of
/// one trajectory, given its four spectrum-weighted density rows.
pub fn trajectory_integrand(rows: &[ReductionRow; 4], mu: &Couplings) -> ReductionRow {
    let mut acc = ReductionRow::ZERO;
    for s in Species::ALL {
        let row = rows[s.index()] * mu.get(s);
        if s.is_anti() {
            acc += -row.conj();
        } else {
            acc += row;
        }
    }
    acc
}

/// Angular grid of the emitted trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleGrid {
    pub model: Model,
    pub abins: usize,
    pub pbins: usize,
    pub rnu: f64,
    pub cos2_theta0: Vec<f64>,
    pub phi: Vec<f64>,
    pub cos_phi: Vec<f64>,
    pub sin_phi: Vec<f64>,
}

impl AngleGrid {
    pub fn new(model: Model, abins: usize, pbins: usize, rnu: f64) -> Result<Self> {
        if abins == 0 || pbins == 0 {
            return Err(Error::Config(format!(
                "angle bins must be >= 1 (Abins={abins}, Pbins={pbins})"
            )));
        }
        if !(rnu > 0.0) {
            return Err(Error::Config(format!(
                "neutrino sphere radius must be positive, got {rnu}"
            )));
        }
        match model {
            Model::SingleAngle if abins != 1 || pbins != 1 => {
                return Err(Error::Config(
                    "the single-angle model needs Abins = Pbins = 1".into(),
                ))
            }
            Model::Bulb if pbins != 1 => {
                return Err(Error::Config("the bulb model needs Pbins = 1".into()))
            }
            _ => {}
        }
        let cos2_theta0 = match model {
            Model::SingleAngle => vec![1.0],
            _ => (0..abins)
                .map(|j| (j as f64 + 0.5) / abins as f64)
                .collect(),
        };
        let phi: Vec<f64> = (0..pbins)
            .map(|k| (k as f64 + 0.5) * 2.0 * PI / pbins as f64)
            .collect();
        let cos_phi = phi.iter().map(|p| p.cos()).collect();
        let sin_phi = phi.iter().map(|p| p.sin()).collect();
        Ok(AngleGrid {
            model,
            abins,
            pbins,
            rnu,
            cos2_theta0,
            phi,
            cos_phi,
            sin_phi,
        })
    }

    pub fn trajectories(&self) -> usize {
        self.abins * self.pbins
    }

    /// Angle cache at radius `r`.
    pub fn cache(&self, r: f64) -> Result<RadiusCache> {
        let n = self.abins;
        let mut cos = Vec::with_capacity(n);
        let mut sin = Vec::with_capacity(n);
        let mut vers = Vec::with_capacity(n);
        let mut w = Vec::with_capacity(n);
        match self.model {
            Model::SingleAngle => {
                cos.push(1.0);
                sin.push(0.0);
                vers.push(0.0);
                w.push(geometric_factor_d(r, self.rnu)?);
            }
            Model::Bulb | Model::ExtendedBulb => {
                let q = self.rnu / r;
                let measure = 0.5 * q * q / (self.abins * self.pbins) as f64;
                for &c2 in &self.cos2_theta0 {
                    let c = cos_theta_prime(r, c2, self.rnu)?;
                    let s2 = q * q * (1.0 - c2);
                    cos.push(c);
                    sin.push(s2.sqrt());
                    vers.push(s2 / (1.0 + c));
                    w.push(measure / c);
                }
            }
        }
        Ok(RadiusCache {
            r,
            cos,
            sin,
            vers,
            w,
        })
    }

    /// Path length along trajectory `j` between the radii of two caches.
    ///
    /// Uses the exact chord `r_b cos_b - r_a cos_a` written in a form that
    /// does not cancel for short steps.
    pub fn path_length(&self, a: &RadiusCache, b: &RadiusCache, j: usize) -> f64 {
        match self.model {
            Model::SingleAngle => b.r - a.r,
            _ => (b.r - a.r) * (b.r + a.r) / (a.r * a.cos[j] + b.r * b.cos[j]),
        }
    }
}

/// Per-radius angular data, indexed by emission angle bin `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiusCache {
    pub r: f64,
    pub cos: Vec<f64>,
    pub sin: Vec<f64>,
    /// `1 - cos`, computed without cancellation.
    pub vers: Vec<f64>,
    /// Integration weight of one trajectory of angle bin `j`, including the
    /// azimuth bin fraction; for the single-angle model the geometric factor.
    pub w: Vec<f64>,
}

/// Exact floating-point sum kept as non-overlapping partials.
///
/// Adding terms in any order and merging partial accumulators in any
/// grouping yields the same correctly rounded [`ExactSum::value`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExactSum {
    partials: Vec<f64>,
}

impl ExactSum {
    pub fn add(&mut self, mut x: f64) {
        let mut i = 0;
        for k in 0..self.partials.len() {
            let mut y = self.partials[k];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        self.partials.truncate(i);
        self.partials.push(x);
    }

    pub fn merge(&mut self, other: &ExactSum) {
        for &p in &other.partials {
            self.add(p);
        }
    }

    pub fn partials(&self) -> &[f64] {
        &self.partials
    }

    pub fn from_partials(p: &[f64]) -> Self {
        let mut s = ExactSum::default();
        for &x in p {
            s.add(x);
        }
        s
    }

    /// Correctly rounded value of the exact sum.
    pub fn value(&self) -> f64 {
        let p = &self.partials;
        let mut n = p.len();
        if n == 0 {
            return 0.0;
        }
        if p.iter().any(|v| !v.is_finite()) {
            return p.iter().sum();
        }
        n -= 1;
        let mut hi = p[n];
        let mut lo = 0.0;
        while n > 0 {
            let x = hi;
            n -= 1;
            let y = p[n];
            hi = x + y;
            let yr = hi - x;
            lo = y - yr;
            if lo != 0.0 {
                break;
            }
        }
        if n > 0 && ((lo < 0.0 && p[n - 1] < 0.0) || (lo > 0.0 && p[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            let yr = x - hi;
            if y == yr {
                hi = x;
            }
        }
        hi
    }
}

/// Partial reduction of one lane: `slots` reduction rows as exact sums.
///
/// Slot 0 is `sum R w`, slot 1 `sum R w (1 - cos)`, slots 2 and 3 the azimuthal
/// moments `sum R w sin cos(phi)` and `sum R w sin sin(phi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialSums {
    sums: Vec<ExactSum>,
}

impl PartialSums {
    pub fn new(slots: usize) -> Self {
        PartialSums {
            sums: vec![ExactSum::default(); 3 * slots],
        }
    }

    pub fn slots(&self) -> usize {
        self.sums.len() / 3
    }

    pub fn add(&mut self, slot: usize, row: ReductionRow) {
        let base = 3 * slot;
        self.sums[base].add(row.d);
        self.sums[base + 1].add(row.o_re);
        self.sums[base + 2].add(row.o_im);
    }

    pub fn merge(&mut self, other: &PartialSums) {
        assert_eq!(
            self.sums.len(),
            other.sums.len(),
            "partial sums with different slot counts"
        );
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            a.merge(b);
        }
    }

    /// Concatenate several partial sums (e.g. two fused evaluations) so
    /// they travel in one message.
    pub fn concat(parts: &[PartialSums]) -> Self {
        PartialSums {
            sums: parts.iter().flat_map(|p| p.sums.iter().cloned()).collect(),
        }
    }

    pub fn split(&self, slots_each: usize) -> Vec<PartialSums> {
        self.sums
            .chunks(3 * slots_each)
            .map(|c| PartialSums { sums: c.to_vec() })
            .collect()
    }

    pub fn row(&self, slot: usize) -> ReductionRow {
        let base = 3 * slot;
        ReductionRow::new(
            self.sums[base].value(),
            self.sums[base + 1].value(),
            self.sums[base + 2].value(),
        )
    }

    pub fn totals(&self) -> Vec<ReductionRow> {
        (0..self.slots()).map(|s| self.row(s)).collect()
    }

    /// Flattened message: for each entry its partial count, then the partials.
    pub fn to_payload(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for s in &self.sums {
            out.push(s.partials().len() as f64);
            out.extend_from_slice(s.partials());
        }
        out
    }

    pub fn from_payload(payload: &[f64], slots: usize) -> Result<Self> {
        let mut sums = Vec::with_capacity(3 * slots);
        let mut i = 0;
        while sums.len() < 3 * slots {
            let n = *payload
                .get(i)
                .ok_or_else(|| Error::Collective("truncated partial-sum payload".into()))?;
            let n = n as usize;
            let end = i + 1 + n;
            if end > payload.len() {
                return Err(Error::Collective("truncated partial-sum payload".into()));
            }
            sums.push(ExactSum {
                partials: payload[i + 1..end].to_vec(),
            });
            i = end;
        }
        Ok(PartialSums { sums })
    }
}

/// Partial sums over the trajectories with angle bins `theta_start..` whose
/// integrands are given by `integrand(local_trajectory_index)`; the local
/// index runs over `count` consecutive trajectories `theta * pbins + k`.
pub fn partial_hvv(
    grid: &AngleGrid,
    cache: &RadiusCache,
    theta_start: usize,
    count: usize,
    mut integrand: impl FnMut(usize) -> ReductionRow,
) -> PartialSums {
    let mut sums = PartialSums::new(grid.model.slots());
    for local in 0..count {
        let t = theta_start * grid.pbins + local;
        let (j, k) = (t / grid.pbins, t % grid.pbins);
        let rw = integrand(local) * cache.w[j];
        sums.add(0, rw);
        match grid.model {
            Model::SingleAngle => {}
            Model::Bulb => sums.add(1, rw * cache.vers[j]),
            Model::ExtendedBulb => {
                sums.add(1, rw * cache.vers[j]);
                let rs = rw * cache.sin[j];
                sums.add(2, rs * grid.cos_phi[k]);
                sums.add(3, rs * grid.sin_phi[k]);
            }
        }
    }
    sums
}

/// Neutrino-neutrino Hamiltonian of trajectory `(j, k)` from the reduced totals.
pub fn assemble_hvv(
    grid: &AngleGrid,
    totals: &[ReductionRow],
    cache: &RadiusCache,
    j: usize,
    k: usize,
) -> Ham2 {
    let row = match grid.model {
        Model::SingleAngle => totals[0],
        // 1 - cos cos' = u + (1 - u) u' with u = 1 - cos
        Model::Bulb => totals[0] * cache.vers[j] + totals[1] * (1.0 - cache.vers[j]),
        Model::ExtendedBulb => {
            let (s, u) = (cache.sin[j], cache.vers[j]);
            totals[0] * u + totals[1] * (1.0 - u)
                - totals[2] * (s * grid.cos_phi[k])
                - totals[3] * (s * grid.sin_phi[k])
        }
    };
    Ham2::from_row(row)
}

/// Vacuum part of the Hamiltonian per energy bin:
/// `h11 = -Delta cos(2 theta) / 2`, `h12 = Delta sin(2 theta) / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct VacuumTable {
    pub h11: Vec<f64>,
    pub h12: Vec<f64>,
}

impl VacuumTable {
    pub fn new(energies: &[f64], dm2_ev2: f64, theta: f64) -> Self {
        let (s2, c2) = (2.0 * theta).sin_cos();
        let mut h11 = Vec::with_capacity(energies.len());
        let mut h12 = Vec::with_capacity(energies.len());
        for &e in energies {
            let delta = units::vacuum_frequency(dm2_ev2, e);
            h11.push(-0.5 * delta * c2);
            h12.push(0.5 * delta * s2);
        }
        VacuumTable { h11, h12 }
    }
}

/// Bin-independent part of a beam's Hamiltonian: matter `A/2` on the
/// diagonal plus the self-interaction term, with the antiparticle map
/// `A -> -A`, `H_vv -> -conj(H_vv)` applied for antineutrinos.
pub fn beam_shift(species: Species, matter: f64, hvv: Ham2) -> Ham2 {
    let h = Ham2::new(0.5 * matter, 0.0, 0.0) + hvv;
    if species.is_anti() {
        Ham2::new(-h.h11, -h.h12_re, h.h12_im)
    } else {
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cos_theta_prime_examples() {
        assert!((cos_theta_prime(10.0, 0.36, 10.0).unwrap() - 0.6).abs() < 1e-15);
        assert!((cos_theta_prime(20.0, 0.0, 10.0).unwrap() - 3f64.sqrt() / 2.0).abs() < 1e-15);
        assert!((cos_theta_prime(1e12, 0.2, 10.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(
            cos_theta_prime(9.0, 0.2, 10.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn geometric_factor_examples() {
        assert_eq!(geometric_factor_d(10.0, 10.0).unwrap(), 0.5);
        let d = geometric_factor_d(2f64.sqrt() * 10.0, 10.0).unwrap();
        assert!((d - 0.042_893).abs() < 1e-6, "{d}");
        let r: f64 = 200.0;
        let approx = 10f64.powi(4) / (8.0 * r.powi(4));
        assert!((geometric_factor_d(r, 10.0).unwrap() / approx - 1.0).abs() < 0.01);
        assert!(geometric_factor_d(5.0, 10.0).is_err());
    }

    #[test]
    fn exact_sum_is_order_independent() {
        let xs = [1e16, 1.0, -1e16, 3.0, 1e-3, -2.5e-20, 7.0e15, 0.1];
        let mut a = ExactSum::default();
        for x in xs {
            a.add(x);
        }
        let mut b = ExactSum::default();
        for x in xs.iter().rev() {
            b.add(*x);
        }
        let mut c = ExactSum::default();
        let mut d = ExactSum::default();
        for (i, x) in xs.iter().enumerate() {
            if i % 2 == 0 {
                c.add(*x)
            } else {
                d.add(*x)
            }
        }
        d.merge(&c);
        assert_eq!(a.value(), b.value());
        assert_eq!(a.value(), d.value());
        assert_eq!(a.value(), 7.0e15 + 4.101);
    }

    #[test]
    fn payload_round_trip() {
        let mut p = PartialSums::new(2);
        p.add(0, ReductionRow::new(1.0, 1e-20, -3.0));
        p.add(0, ReductionRow::new(1e20, 2.0, 0.0));
        p.add(1, ReductionRow::new(0.5, 0.25, 0.125));
        let q = PartialSums::from_payload(&p.to_payload(), 2).unwrap();
        assert_eq!(p, q);
        assert!(PartialSums::from_payload(&[3.0, 1.0], 1).is_err());
    }

    #[test]
    fn initial_flavor_states_have_no_off_diagonal() {
        let mu = Couplings([2.0, 2.0, 1.0, 1.0]);
        let rows = [
            ReductionRow::new(1.0, 0.0, 0.0),
            ReductionRow::new(1.0, 0.0, 0.0),
            ReductionRow::new(-1.0, 0.0, 0.0),
            ReductionRow::new(-1.0, 0.0, 0.0),
        ];
        let r = trajectory_integrand(&rows, &mu);
        assert_eq!(r, ReductionRow::ZERO);
    }

    #[test]
    fn bulb_radial_decoupling() {
        let grid = AngleGrid::new(Model::Bulb, 3, 1, 10.0).unwrap();
        let mut cache = grid.cache(30.0).unwrap();
        cache.cos[1] = 0.0;
        cache.vers[1] = 1.0;
        let totals = [
            ReductionRow::new(2.0, 4.0, -6.0),
            ReductionRow::new(1.0, 1.0, 1.0),
        ];
        assert_eq!(
            assemble_hvv(&grid, &totals, &cache, 1, 0),
            Ham2::new(1.0, 2.0, -3.0)
        );
        let zero = [ReductionRow::ZERO; 2];
        assert_eq!(assemble_hvv(&grid, &zero, &cache, 0, 0), Ham2::ZERO);
    }

    #[test]
    fn single_trajectory_hand_calculation() {
        let grid = AngleGrid::new(Model::SingleAngle, 1, 1, 10.0).unwrap();
        let cache = grid.cache(20.0).unwrap();
        let row = ReductionRow::new(0.3, 0.4, -0.1);
        let p = partial_hvv(&grid, &cache, 0, 1, |_| row);
        let d = geometric_factor_d(20.0, 10.0).unwrap();
        assert_eq!(p.row(0), row * d);
    }

    #[test]
    fn chord_matches_direct_difference() {
        let grid = AngleGrid::new(Model::Bulb, 4, 1, 10.0).unwrap();
        let (a, b) = (grid.cache(12.0).unwrap(), grid.cache(37.0).unwrap());
        for j in 0..4 {
            let direct = b.r * b.cos[j] - a.r * a.cos[j];
            assert!((grid.path_length(&a, &b, j) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_integrate_angular_measure() {
        // sum_j w_j = int_{cmax}^1 dc = 1 - sqrt(1 - (R/r)^2)
        let grid = AngleGrid::new(Model::Bulb, 4000, 1, 10.0).unwrap();
        let c = grid.cache(25.0).unwrap();
        let total: f64 = c.w.iter().sum();
        let exact = 1.0 - (1.0 - 0.16f64).sqrt();
        assert!((total / exact - 1.0).abs() < 1e-6, "{total} {exact}");
    }

    #[test]
    fn grid_validation() {
        assert!(AngleGrid::new(Model::SingleAngle, 2, 1, 10.0).is_err());
        assert!(AngleGrid::new(Model::Bulb, 4, 2, 10.0).is_err());
        assert!(AngleGrid::new(Model::ExtendedBulb, 0, 2, 10.0).is_err());
        assert!(AngleGrid::new(Model::ExtendedBulb, 4, 2, 0.0).is_err());
    }

    #[test]
    fn antineutrino_shift() {
        let hvv = Ham2::new(0.1, 0.2, 0.3);
        let nu = beam_shift(Species::NuE, 4.0, hvv);
        let nubar = beam_shift(Species::NuEBar, 4.0, hvv);
        assert_eq!(nu, Ham2::new(2.1, 0.2, 0.3));
        assert_eq!(nubar, Ham2::new(-2.1, -0.2, 0.3));
        assert_eq!(
            beam_shift(Species::NuEBar, 4.0, Ham2::ZERO).h11
                - beam_shift(Species::NuE, 4.0, Ham2::ZERO).h11,
            -4.0
        );
    }

    #[test]
    fn no_mixing_without_angle() {
        let v = VacuumTable::new(&[5.0, 10.0], -3e-3, 0.0);
        assert!(v.h12.iter().all(|x| *x == 0.0));
        assert!(v.h11[0] > 0.0);
    }
}
