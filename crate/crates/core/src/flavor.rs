//! Per-beam wavefunction storage and the per-energy-bin kernels.
//!
//! A [`BeamState`] holds the two complex flavor amplitudes `a` (electron
//! flavor) and `b` (x flavor) of one trajectory and one species over all
//! energy bins, as four separate 64-byte aligned component arrays. Every
//! kernel in this module loops over bins in index order with no
//! cross-bin dependence other than the ordered accumulations in
//! [`e_sum`] and the fused `*_sum` variants.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Number of f64 lanes in one 64-byte line.
pub const SIMD_LANES: usize = 8;

/// Below this value of `lambda * dl` the evolution operator is the identity
/// in the `sin(lambda dl)/lambda -> dl` limit.
const SMALL_PHASE: f64 = 1e-12;

#[derive(Clone, Copy)]
#[repr(C, align(64))]
struct Line([f64; SIMD_LANES]);

/// A 64-byte aligned, lane-padded array of f64.
///
/// The logical length is `len`; the backing storage is rounded up to a
/// multiple of [`SIMD_LANES`]. Padding entries are never read by kernels.
#[derive(Clone)]
pub struct AlignedVec {
    lines: Vec<Line>,
    len: usize,
}

impl AlignedVec {
    pub fn filled(len: usize, value: f64) -> Self {
        let n = len.div_ceil(SIMD_LANES);
        AlignedVec {
            lines: vec![Line([value; SIMD_LANES]); n],
            len,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Padded capacity in elements.
    pub fn capacity(&self) -> usize {
        self.lines.len() * SIMD_LANES
    }

    pub fn as_slice(&self) -> &[f64] {
        // SAFETY: `Line` is repr(C) over [f64; 8] with size 64 and no
        // padding, so the lines form one contiguous run of f64 values.
        unsafe { std::slice::from_raw_parts(self.lines.as_ptr().cast::<f64>(), self.len) }
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        // SAFETY: see `as_slice`; the borrow is unique through `&mut self`.
        unsafe { std::slice::from_raw_parts_mut(self.lines.as_mut_ptr().cast::<f64>(), self.len) }
    }
}

impl fmt::Debug for AlignedVec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.as_slice()).finish()
    }
}

impl PartialEq for AlignedVec {
    fn eq(&self, other: &Self) -> bool {
        self.as_slice() == other.as_slice()
    }
}

/// Particle species carried by a beam.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Species {
    NuE,
    NuEBar,
    NuX,
    NuXBar,
}

impl Species {
    /// Storage order used by beam sets and snapshot files.
    pub const ALL: [Species; 4] = [Species::NuE, Species::NuEBar, Species::NuX, Species::NuXBar];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_anti(self) -> bool {
        matches!(self, Species::NuEBar | Species::NuXBar)
    }

    pub fn is_electron(self) -> bool {
        matches!(self, Species::NuE | Species::NuEBar)
    }

    /// The antiparticle partner of a neutrino species, or the neutrino
    /// partner of an antineutrino.
    pub fn partner(self) -> Species {
        match self {
            Species::NuE => Species::NuEBar,
            Species::NuEBar => Species::NuE,
            Species::NuX => Species::NuXBar,
            Species::NuXBar => Species::NuX,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Species::NuE => "nue",
            Species::NuEBar => "nuebar",
            Species::NuX => "nux",
            Species::NuXBar => "nuxbar",
        }
    }

    /// Key suffix used in configuration files.
    pub fn config_suffix(self) -> &'static str {
        match self {
            Species::NuE => "ve",
            Species::NuEBar => "vbe",
            Species::NuX => "vx",
            Species::NuXBar => "vbx",
        }
    }

    pub fn from_name(name: &str) -> Option<Species> {
        Species::ALL.into_iter().find(|s| s.name() == name)
    }
}

/// Amplitudes of one energy bin: `a = ar + i ai`, `b = br + i bi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Amplitudes {
    pub ar: f64,
    pub ai: f64,
    pub br: f64,
    pub bi: f64,
}

impl Amplitudes {
    pub const ELECTRON: Amplitudes = Amplitudes {
        ar: 1.0,
        ai: 0.0,
        br: 0.0,
        bi: 0.0,
    };
    pub const X: Amplitudes = Amplitudes {
        ar: 0.0,
        ai: 0.0,
        br: 1.0,
        bi: 0.0,
    };

    pub fn norm_sqr(&self) -> f64 {
        self.ar * self.ar + self.ai * self.ai + self.br * self.br + self.bi * self.bi
    }

    /// |a|^2, the electron-flavor probability.
    pub fn prob_a(&self) -> f64 {
        self.ar * self.ar + self.ai * self.ai
    }

    /// |b|^2, the x-flavor probability.
    pub fn prob_b(&self) -> f64 {
        self.br * self.br + self.bi * self.bi
    }
}

/// Traceless Hermitian 2x2 Hamiltonian `[[h11, h12], [conj(h12), -h11]]` in 1/km.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Ham2 {
    pub h11: f64,
    pub h12_re: f64,
    pub h12_im: f64,
}

impl Ham2 {
    pub const ZERO: Ham2 = Ham2 {
        h11: 0.0,
        h12_re: 0.0,
        h12_im: 0.0,
    };

    pub fn new(h11: f64, h12_re: f64, h12_im: f64) -> Self {
        Ham2 {
            h11,
            h12_re,
            h12_im,
        }
    }

    /// Eigenvalue magnitude `sqrt(h11^2 + |h12|^2)`.
    pub fn lambda(&self) -> f64 {
        (self.h11 * self.h11 + self.h12_re * self.h12_re + self.h12_im * self.h12_im).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.h11.is_finite() && self.h12_re.is_finite() && self.h12_im.is_finite()
    }

    /// Half the density row: the Hamiltonian whose 2x2 matrix is `row / 2`.
    pub fn from_row(row: ReductionRow) -> Self {
        Ham2 {
            h11: 0.5 * row.d,
            h12_re: 0.5 * row.o_re,
            h12_im: 0.5 * row.o_im,
        }
    }

    /// Image under the antineutrino map `h11 -> -h11`, `h12 -> -conj(h12)`.
    pub fn anti(self) -> Self {
        Ham2 {
            h11: -self.h11,
            h12_re: -self.h12_re,
            h12_im: self.h12_im,
        }
    }
}

impl Add for Ham2 {
    type Output = Ham2;
    fn add(self, o: Ham2) -> Ham2 {
        Ham2 {
            h11: self.h11 + o.h11,
            h12_re: self.h12_re + o.h12_re,
            h12_im: self.h12_im + o.h12_im,
        }
    }
}

/// First row `(d, o_re + i o_im)` of a Hermitian traceless 2x2; the
/// second row is `(o_re - i o_im, -d)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReductionRow {
    pub d: f64,
    pub o_re: f64,
    pub o_im: f64,
}

impl ReductionRow {
    pub const ZERO: ReductionRow = ReductionRow {
        d: 0.0,
        o_re: 0.0,
        o_im: 0.0,
    };

    pub fn new(d: f64, o_re: f64, o_im: f64) -> Self {
        ReductionRow { d, o_re, o_im }
    }

    /// Complex conjugate of the matrix (negates the imaginary off-diagonal).
    pub fn conj(self) -> Self {
        ReductionRow {
            d: self.d,
            o_re: self.o_re,
            o_im: -self.o_im,
        }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.d, self.o_re, self.o_im]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        ReductionRow {
            d: a[0],
            o_re: a[1],
            o_im: a[2],
        }
    }

    pub fn bloch_norm_sqr(&self) -> f64 {
        self.d * self.d + self.o_re * self.o_re + self.o_im * self.o_im
    }
}

impl Add for ReductionRow {
    type Output = ReductionRow;
    fn add(self, o: Self) -> Self {
        ReductionRow {
            d: self.d + o.d,
            o_re: self.o_re + o.o_re,
            o_im: self.o_im + o.o_im,
        }
    }
}

impl AddAssign for ReductionRow {
    fn add_assign(&mut self, o: Self) {
        self.d += o.d;
        self.o_re += o.o_re;
        self.o_im += o.o_im;
    }
}

impl Sub for ReductionRow {
    type Output = ReductionRow;
    fn sub(self, o: Self) -> Self {
        ReductionRow {
            d: self.d - o.d,
            o_re: self.o_re - o.o_re,
            o_im: self.o_im - o.o_im,
        }
    }
}

impl Neg for ReductionRow {
    type Output = ReductionRow;
    fn neg(self) -> Self {
        ReductionRow {
            d: -self.d,
            o_re: -self.o_re,
            o_im: -self.o_im,
        }
    }
}

impl Mul<f64> for ReductionRow {
    type Output = ReductionRow;
    fn mul(self, s: f64) -> Self {
        ReductionRow {
            d: self.d * s,
            o_re: self.o_re * s,
            o_im: self.o_im * s,
        }
    }
}

/// Density-matrix first row `(|a|^2 - |b|^2, 2 Re(a b*), 2 Im(a b*))`.
#[inline(always)]
pub fn density(ar: f64, ai: f64, br: f64, bi: f64) -> ReductionRow {
    ReductionRow {
        d: ar * ar + ai * ai - br * br - bi * bi,
        o_re: 2.0 * (ar * br + ai * bi),
        o_im: 2.0 * (ai * br - ar * bi),
    }
}

/// One bin of `exp(-i H dl) psi` in closed form.
#[inline(always)]
pub fn evolve_bin(h: Ham2, dl: f64, psi: Amplitudes) -> Amplitudes {
    let lambda = h.lambda();
    let phase = lambda * dl;
    let (s, c) = if phase < SMALL_PHASE {
        (dl, 1.0)
    } else {
        let (sn, cs) = phase.sin_cos();
        (sn / lambda, cs)
    };
    let Amplitudes { ar, ai, br, bi } = psi;
    let (h11, hr, hi) = (h.h11 * s, h.h12_re * s, h.h12_im * s);
    Amplitudes {
        ar: c * ar + h11 * ai + hi * br + hr * bi,
        ai: c * ai - h11 * ar + hi * bi - hr * br,
        br: c * br - h11 * bi - hi * ar + hr * ai,
        bi: c * bi + h11 * br - hi * ai - hr * ar,
    }
}

/// Per-bin Hamiltonian of one beam: a bin-dependent vacuum part plus a
/// bin-independent shift (matter and self-interaction).
#[derive(Debug, Clone, Copy)]
pub struct BeamHamiltonian<'a> {
    pub vac_h11: &'a [f64],
    pub vac_h12: &'a [f64],
    pub shift: Ham2,
}

impl BeamHamiltonian<'_> {
    #[inline(always)]
    pub fn bin(&self, e: usize) -> Ham2 {
        Ham2 {
            h11: self.vac_h11[e] + self.shift.h11,
            h12_re: self.vac_h12[e] + self.shift.h12_re,
            h12_im: self.shift.h12_im,
        }
    }

    pub fn len(&self) -> usize {
        self.vac_h11.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vac_h11.is_empty()
    }
}

/// Flavor state of one trajectory and one species over all energy bins.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamState {
    species: Species,
    ar: AlignedVec,
    ai: AlignedVec,
    br: AlignedVec,
    bi: AlignedVec,
}

impl BeamState {
    /// A beam in the pure flavor state it is emitted in: `(1, 0)` for
    /// electron species, `(0, 1)` for x species.
    pub fn new(species: Species, ebins: usize) -> Self {
        let psi = if species.is_electron() {
            Amplitudes::ELECTRON
        } else {
            Amplitudes::X
        };
        Self::uniform(species, ebins, psi)
    }

    pub fn uniform(species: Species, ebins: usize, psi: Amplitudes) -> Self {
        assert!(ebins >= 1, "a beam needs at least one energy bin");
        let mut beam = BeamState {
            species,
            ar: AlignedVec::filled(ebins, 1.0),
            ai: AlignedVec::filled(ebins, 0.0),
            br: AlignedVec::filled(ebins, 0.0),
            bi: AlignedVec::filled(ebins, 0.0),
        };
        beam.fill(psi);
        beam
    }

    pub fn fill(&mut self, psi: Amplitudes) {
        self.ar.as_mut_slice().fill(psi.ar);
        self.ai.as_mut_slice().fill(psi.ai);
        self.br.as_mut_slice().fill(psi.br);
        self.bi.as_mut_slice().fill(psi.bi);
    }

    pub fn species(&self) -> Species {
        self.species
    }

    pub fn ebins(&self) -> usize {
        self.ar.len()
    }

    pub fn ar(&self) -> &[f64] {
        self.ar.as_slice()
    }
    pub fn ai(&self) -> &[f64] {
        self.ai.as_slice()
    }
    pub fn br(&self) -> &[f64] {
        self.br.as_slice()
    }
    pub fn bi(&self) -> &[f64] {
        self.bi.as_slice()
    }

    /// Component array by index: 0 ar, 1 ai, 2 br, 3 bi.
    pub fn component(&self, comp: usize) -> &[f64] {
        match comp {
            0 => self.ar(),
            1 => self.ai(),
            2 => self.br(),
            3 => self.bi(),
            _ => panic!("component index {comp} out of range"),
        }
    }

    pub fn component_mut(&mut self, comp: usize) -> &mut [f64] {
        match comp {
            0 => self.ar.as_mut_slice(),
            1 => self.ai.as_mut_slice(),
            2 => self.br.as_mut_slice(),
            3 => self.bi.as_mut_slice(),
            _ => panic!("component index {comp} out of range"),
        }
    }

    pub fn get(&self, e: usize) -> Amplitudes {
        Amplitudes {
            ar: self.ar()[e],
            ai: self.ai()[e],
            br: self.br()[e],
            bi: self.bi()[e],
        }
    }

    pub fn set(&mut self, e: usize, psi: Amplitudes) {
        self.ar.as_mut_slice()[e] = psi.ar;
        self.ai.as_mut_slice()[e] = psi.ai;
        self.br.as_mut_slice()[e] = psi.br;
        self.bi.as_mut_slice()[e] = psi.bi;
    }

    fn parts_mut(&mut self) -> (&mut [f64], &mut [f64], &mut [f64], &mut [f64]) {
        (
            self.ar.as_mut_slice(),
            self.ai.as_mut_slice(),
            self.br.as_mut_slice(),
            self.bi.as_mut_slice(),
        )
    }

    /// Largest deviation of `|a|^2 + |b|^2` from one over all bins.
    pub fn max_norm_deviation(&self) -> f64 {
        (0..self.ebins())
            .map(|e| (self.get(e).norm_sqr() - 1.0).abs())
            .fold(0.0, nan_max)
    }

    /// Rescale every bin to unit norm.
    pub fn normalize(&mut self) {
        let (ar, ai, br, bi) = self.parts_mut();
        for e in 0..ar.len() {
            let n = (ar[e] * ar[e] + ai[e] * ai[e] + br[e] * br[e] + bi[e] * bi[e]).sqrt();
            let inv = 1.0 / n;
            ar[e] *= inv;
            ai[e] *= inv;
            br[e] *= inv;
            bi[e] *= inv;
        }
    }

    pub fn all_finite(&self) -> bool {
        (0..4).all(|c| self.component(c).iter().all(|v| v.is_finite()))
    }

    /// Copy amplitudes (not species) from `src`.
    pub fn copy_from(&mut self, src: &BeamState) {
        for c in 0..4 {
            self.component_mut(c).copy_from_slice(src.component(c));
        }
    }
}

/// Max that propagates NaN instead of discarding it.
#[inline(always)]
pub(crate) fn nan_max(m: f64, v: f64) -> f64 {
    if v > m || v.is_nan() {
        v
    } else {
        m
    }
}

fn check_shape(a: &BeamState, b: &BeamState, what: &str) -> Result<()> {
    if a.ebins() != b.ebins() {
        return Err(Error::Config(format!(
            "{what}: energy bin count mismatch ({} vs {})",
            a.ebins(),
            b.ebins()
        )));
    }
    Ok(())
}

fn check_species(a: &BeamState, b: &BeamState, what: &str) -> Result<()> {
    check_shape(a, b, what)?;
    if a.species != b.species {
        return Err(Error::Config(format!(
            "{what}: species mismatch ({} vs {})",
            a.species.name(),
            b.species.name()
        )));
    }
    Ok(())
}

fn check_weights(beam: &BeamState, weights: &[f64]) -> Result<()> {
    if weights.len() != beam.ebins() {
        return Err(Error::Config(format!(
            "spectrum has {} bins but beam has {}",
            weights.len(),
            beam.ebins()
        )));
    }
    Ok(())
}

fn check_ham(beam: &BeamState, ham: &BeamHamiltonian<'_>) -> Result<()> {
    if ham.len() != beam.ebins() || ham.vac_h12.len() != beam.ebins() {
        return Err(Error::Config(format!(
            "Hamiltonian table has {} bins but beam has {}",
            ham.len(),
            beam.ebins()
        )));
    }
    Ok(())
}

/// Spectrum-weighted density row `sum_e density(psi_e) * weights[e]`,
/// accumulated from low to high bin index. `weights[e]` is `f(E_e) dE`.
pub fn e_sum(beam: &BeamState, weights: &[f64]) -> Result<ReductionRow> {
    check_weights(beam, weights)?;
    let (ar, ai, br, bi) = (beam.ar(), beam.ai(), beam.br(), beam.bi());
    let mut acc = ReductionRow::ZERO;
    for e in 0..weights.len() {
        acc += density(ar[e], ai[e], br[e], bi[e]) * weights[e];
    }
    Ok(acc)
}

/// Replace `dst` by the bin-wise average `(dst + src) / 2`.
pub fn add_avg(dst: &mut BeamState, src: &BeamState) -> Result<()> {
    check_species(dst, src, "add_avg")?;
    for c in 0..4 {
        let s = src.component(c);
        for (d, s) in dst.component_mut(c).iter_mut().zip(s) {
            *d = 0.5 * (*d + *s);
        }
    }
    Ok(())
}

/// Largest absolute component difference over all bins.
pub fn calc_err(a: &BeamState, b: &BeamState) -> Result<f64> {
    check_shape(a, b, "calc_err")?;
    let mut m = 0.0f64;
    for c in 0..4 {
        for (x, y) in a.component(c).iter().zip(b.component(c)) {
            m = nan_max(m, (x - y).abs());
        }
    }
    Ok(m)
}

/// `out <- U(H, dl) input` for every bin.
pub fn evolve(
    ham: &BeamHamiltonian<'_>,
    dl: f64,
    input: &BeamState,
    out: &mut BeamState,
) -> Result<()> {
    check_species(input, out, "evolve")?;
    check_ham(input, ham)?;
    let (ar, ai, br, bi) = out.parts_mut();
    for e in 0..ar.len() {
        let n = evolve_bin(ham.bin(e), dl, input.get(e));
        ar[e] = n.ar;
        ai[e] = n.ai;
        br[e] = n.br;
        bi[e] = n.bi;
    }
    Ok(())
}

/// Fused `evolve` + `e_sum` over the evolved state, in one pass.
pub fn evolve_sum(
    ham: &BeamHamiltonian<'_>,
    dl: f64,
    input: &BeamState,
    out: &mut BeamState,
    weights: &[f64],
) -> Result<ReductionRow> {
    check_species(input, out, "evolve_sum")?;
    check_ham(input, ham)?;
    check_weights(input, weights)?;
    let (ar, ai, br, bi) = out.parts_mut();
    let mut acc = ReductionRow::ZERO;
    for e in 0..ar.len() {
        let n = evolve_bin(ham.bin(e), dl, input.get(e));
        ar[e] = n.ar;
        ai[e] = n.ai;
        br[e] = n.br;
        bi[e] = n.bi;
        acc += density(n.ar, n.ai, n.br, n.bi) * weights[e];
    }
    Ok(acc)
}

/// Fused `out <- (U(H, dl) input + avg_with) / 2`.
pub fn evolve_avg(
    ham: &BeamHamiltonian<'_>,
    dl: f64,
    input: &BeamState,
    avg_with: &BeamState,
    out: &mut BeamState,
) -> Result<()> {
    check_species(input, out, "evolve_avg")?;
    check_species(input, avg_with, "evolve_avg")?;
    check_ham(input, ham)?;
    let (ar, ai, br, bi) = out.parts_mut();
    for e in 0..ar.len() {
        let n = evolve_bin(ham.bin(e), dl, input.get(e));
        let w = avg_with.get(e);
        ar[e] = 0.5 * (w.ar + n.ar);
        ai[e] = 0.5 * (w.ai + n.ai);
        br[e] = 0.5 * (w.br + n.br);
        bi[e] = 0.5 * (w.bi + n.bi);
    }
    Ok(())
}

/// Fused `out <- (U(H, dl) input + avg_with) / 2`, returning
/// `calc_err(out, err_against)`.
pub fn evolve_avg_err(
    ham: &BeamHamiltonian<'_>,
    dl: f64,
    input: &BeamState,
    avg_with: &BeamState,
    err_against: &BeamState,
    out: &mut BeamState,
) -> Result<f64> {
    check_species(input, out, "evolve_avg_err")?;
    check_species(input, avg_with, "evolve_avg_err")?;
    check_shape(input, err_against, "evolve_avg_err")?;
    check_ham(input, ham)?;
    let (ar, ai, br, bi) = out.parts_mut();
    let mut m = 0.0f64;
    for e in 0..ar.len() {
        let n = evolve_bin(ham.bin(e), dl, input.get(e));
        let w = avg_with.get(e);
        let x = err_against.get(e);
        ar[e] = 0.5 * (w.ar + n.ar);
        ai[e] = 0.5 * (w.ai + n.ai);
        br[e] = 0.5 * (w.br + n.br);
        bi[e] = 0.5 * (w.bi + n.bi);
        m = nan_max(m, (ar[e] - x.ar).abs());
        m = nan_max(m, (ai[e] - x.ai).abs());
        m = nan_max(m, (br[e] - x.br).abs());
        m = nan_max(m, (bi[e] - x.bi).abs());
    }
    Ok(m)
}
