//! Adaptive-step evolution of all beams from `R0` to `Rn`.
//!
//! One iteration of the loop is four stages separated by collectives:
//!
//! 1. `H0` from the committed state `psi0` at the step start `s`.
//! 2. `psi_mid = U(H0, s->m) psi0`, `psi_f1 = U(H0, s->e) psi0`; `H1` from
//!    `psi_f1` at the end point `e` and `H2` from `psi_mid` at the midpoint
//!    `m`, reduced together in one message.
//! 3. `psi_A = (psi_f1 + U(H1) psi0) / 2`, the trapezoid estimate with a
//!    predicted endpoint; `psi_h2 = U(H2) psi0`, the midpoint estimate;
//!    `H3` from `psi_h2` at `e`.
//! 4. `psi_B = (psi_f1 + U(H3) psi0) / 2`, the trapezoid estimate with the
//!    corrected endpoint. The step error is the largest component
//!    difference of `psi_B` from `psi_A` and from `psi_h2`, maximized over
//!    all lanes.
//!
//! All three estimates are second order, so the error scales as `dr^3`
//! per step. Accepted steps commit `psi_B`, rescaled to unit norm per bin.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::flavor::{
    self, nan_max, Amplitudes, BeamHamiltonian, BeamState, Ham2, ReductionRow, Species,
};
use crate::geometry::{self, AngleGrid, Couplings, PartialSums, RadiusCache, VacuumTable};
use crate::io::config::RunConfig;
use crate::io::dump::{should_dump, DesignatedWriter, DumpMarks, DumpPlan, Sink};
use crate::io::snapshot::{RecordMark, ResumePoint, MODE_AVERAGE, MODE_FULL};
use crate::matter::{self, MatterParams};
use crate::parallel::{self, Collective, CollectiveCounts, Comm, Partition};
use crate::spectra::{build_spectrum, EnergyGrid, SpectrumTable};

/// Everything about a run that does not change while it evolves.
#[derive(Debug, Clone)]
pub struct Problem {
    pub config: RunConfig,
    pub grid: AngleGrid,
    pub energy: EnergyGrid,
    /// Per species in [`Species::ALL`] order.
    pub spectra: Vec<SpectrumTable>,
    pub vacuum: VacuumTable,
    pub matter: MatterParams,
    pub mu: Couplings,
    pub limits: StepLimits,
}

impl Problem {
    pub fn from_config(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let grid = AngleGrid::new(config.model, config.abins, config.pbins, config.rv)?;
        let energy = EnergyGrid::new(config.e0, config.e1, config.ebins)?;
        let mut spectra = Vec::with_capacity(4);
        for s in Species::ALL {
            spectra.push(build_spectrum(s, config.spectrum_params(s)?, energy)?);
        }
        let lum = [0, 1, 2, 3].map(|i| spectra[i].params.luminosity);
        let emean = [0, 1, 2, 3].map(|i| spectra[i].params.mean_energy);
        let mu = Couplings::from_emission(lum, emean, config.rv, config.coupling_scale);
        let vacuum = VacuumTable::new(&spectra[0].energies, config.dm2, config.theta);
        Ok(Problem {
            config: config.clone(),
            grid,
            energy,
            spectra,
            vacuum,
            matter: config.matter_params(),
            mu,
            limits: StepLimits {
                eps0: config.eps0,
                kappa: config.kappa,
                dr_min: config.min_dr,
                dr_max: config.max_dr,
            },
        })
    }

    pub fn ebins(&self) -> usize {
        self.energy.ebins
    }

    /// Matter potential at `r` in 1/km (zero when matter is off).
    pub fn matter_at(&self, r: f64) -> Result<f64> {
        matter::matter_potential(r, &self.matter)
    }

    fn beam_ham(&self, shift: Ham2) -> BeamHamiltonian<'_> {
        BeamHamiltonian {
            vac_h11: &self.vacuum.h11,
            vac_h12: &self.vacuum.h12,
            shift,
        }
    }

    /// Initial amplitudes of trajectory `(j, k)` for species `s`, including
    /// the optional azimuthal perturbation.
    pub fn initial_amplitudes(&self, k: usize, s: Species) -> Amplitudes {
        let eps = self.config.azimuth_perturb * self.grid.cos_phi[k];
        let (sn, cs) = eps.sin_cos();
        if s.is_electron() {
            Amplitudes {
                ar: cs,
                ai: 0.0,
                br: sn,
                bi: 0.0,
            }
        } else {
            Amplitudes {
                ar: sn,
                ai: 0.0,
                br: cs,
                bi: 0.0,
            }
        }
    }
}

/// Step-size controller settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLimits {
    pub eps0: f64,
    pub kappa: f64,
    pub dr_min: f64,
    pub dr_max: f64,
}

/// Solver position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    pub r: f64,
    pub dr: f64,
    pub iter: u64,
}

const ERR_FLOOR: f64 = 1e-300;

/// Next step size `clamp(kappa dr sqrt(eps0 / err), dr_min, dr_max)`.
///
/// A rejected step whose unclamped proposal falls below `dr_min` cannot be
/// retried and is reported as a step collapse.
pub fn step_size_update(
    ctl: &StepControl,
    limits: &StepLimits,
    err: f64,
    accepted: bool,
) -> Result<f64> {
    let raw = limits.kappa * ctl.dr * (limits.eps0 / err.max(ERR_FLOOR)).sqrt();
    if !accepted && raw < limits.dr_min {
        return Err(Error::StepCollapse {
            r: ctl.r,
            iter: ctl.iter,
            dr: raw,
            dr_min: limits.dr_min,
        });
    }
    Ok(raw.clamp(limits.dr_min, limits.dr_max))
}

/// Beams of a contiguous range of trajectories, indexed `local * 4 + species`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamSet {
    pub beams: Vec<BeamState>,
}

impl BeamSet {
    fn fresh(problem: &Problem, part: &Partition) -> Self {
        let pbins = problem.grid.pbins;
        let mut beams = Vec::with_capacity(part.len() * pbins * 4);
        for _j in part.start_beam..part.end_beam {
            for k in 0..pbins {
                for s in Species::ALL {
                    beams.push(BeamState::uniform(
                        s,
                        problem.ebins(),
                        problem.initial_amplitudes(k, s),
                    ));
                }
            }
        }
        BeamSet { beams }
    }

    fn from_record(problem: &Problem, part: &Partition, record: &[f64]) -> Self {
        let ebins = problem.ebins();
        let per_traj = 4 * 4 * ebins;
        let first = part.start_beam * problem.grid.pbins;
        let ntraj = part.len() * problem.grid.pbins;
        let mut beams = Vec::with_capacity(ntraj * 4);
        for t in 0..ntraj {
            let base = (first + t) * per_traj;
            for s in Species::ALL {
                let mut b = BeamState::new(s, ebins);
                for c in 0..4 {
                    let off = base + (s.index() * 4 + c) * ebins;
                    b.component_mut(c)
                        .copy_from_slice(&record[off..off + ebins]);
                }
                beams.push(b);
            }
        }
        BeamSet { beams }
    }

    pub fn trajectories(&self) -> usize {
        self.beams.len() / 4
    }

    pub fn get(&self, t: usize, s: Species) -> &BeamState {
        &self.beams[t * 4 + s.index()]
    }

    /// Record data `[traj, prtcl, comp, ebin]` for a full snapshot.
    pub fn full_record(&self) -> Vec<f64> {
        let mut out =
            Vec::with_capacity(self.beams.len() * 4 * self.beams.first().map_or(0, |b| b.ebins()));
        for b in &self.beams {
            for c in 0..4 {
                out.extend_from_slice(b.component(c));
            }
        }
        out
    }

    /// `sum_e |a_e|^2 f_e dE` per `[traj, prtcl]`.
    pub fn average_record(&self, spectra: &[SpectrumTable]) -> Vec<f64> {
        self.beams
            .iter()
            .map(|b| {
                let w = &spectra[b.species().index()].weights;
                (0..b.ebins()).map(|e| b.get(e).prob_a() * w[e]).sum()
            })
            .collect()
    }
}

/// State of every beam of the problem.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalState {
    pub abins: usize,
    pub pbins: usize,
    pub ebins: usize,
    pub set: BeamSet,
}

impl GlobalState {
    pub fn beam(&self, j: usize, k: usize, s: Species) -> &BeamState {
        self.set.get(j * self.pbins + k, s)
    }

    pub fn max_norm_deviation(&self) -> f64 {
        self.set
            .beams
            .iter()
            .map(|b| b.max_norm_deviation())
            .fold(0.0, nan_max)
    }

    /// Largest component difference from another state of the same shape.
    pub fn max_abs_diff(&self, other: &GlobalState) -> Result<f64> {
        if self.set.beams.len() != other.set.beams.len() {
            return Err(Error::Config(
                "states have different trajectory counts".into(),
            ));
        }
        let mut m = 0.0f64;
        for (a, b) in self.set.beams.iter().zip(&other.set.beams) {
            m = nan_max(m, flavor::calc_err(a, b)?);
        }
        Ok(m)
    }

    /// `|a|^2` per `(theta, phi, ebin)` for `species`.
    pub fn survival(&self, s: Species) -> Vec<Vec<Vec<f64>>> {
        (0..self.abins)
            .map(|j| {
                (0..self.pbins)
                    .map(|k| {
                        let b = self.beam(j, k, s);
                        (0..self.ebins).map(|e| b.get(e).prob_a()).collect()
                    })
                    .collect()
            })
            .collect()
    }

    /// Azimuth-averaged `|a|^2` per `(theta, ebin)`.
    pub fn survival_grid(&self, s: Species) -> Vec<Vec<f64>> {
        self.survival(s)
            .into_iter()
            .map(|per_phi| {
                (0..self.ebins)
                    .map(|e| per_phi.iter().map(|v| v[e]).sum::<f64>() / self.pbins as f64)
                    .collect()
            })
            .collect()
    }
}

/// Why the loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    ReachedEnd,
    IterationLimit,
    WallTime,
}

impl Termination {
    pub fn name(self) -> &'static str {
        match self {
            Termination::ReachedEnd => "reached_rn",
            Termination::IterationLimit => "iteration_limit",
            Termination::WallTime => "wall_time",
        }
    }
}

/// Wall seconds spent per stage, plus dumping.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhaseTimes {
    pub stage: [f64; 4],
    pub io: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub lanes: usize,
    pub partitions: Vec<Partition>,
    pub start_r: f64,
    pub final_r: f64,
    pub final_dr: f64,
    /// Iteration counter at the end, counted from the fresh start.
    pub final_iter: u64,
    pub iterations: u64,
    pub accepted: u64,
    pub rejected: u64,
    pub termination: Termination,
    pub wall_time: f64,
    /// Timings of lane 0.
    pub phases: PhaseTimes,
    /// Seconds each lane spent inside collectives.
    pub wait_time: Vec<f64>,
    pub collectives: CollectiveCounts,
    /// Largest per-bin norm deviation of the final state.
    pub max_norm_deviation: f64,
    /// Largest norm deviation removed by renormalizing an accepted step.
    pub max_norm_correction: f64,
    pub max_step_error: f64,
    pub files: Vec<PathBuf>,
}

impl RunSummary {
    /// Line-oriented `key= value` report.
    pub fn render(&self) -> String {
        let mut o = String::new();
        let mut kv = |k: &str, v: String| o.push_str(&format!("{k}= {v}\n"));
        kv("lanes", self.lanes.to_string());
        kv(
            "partitions",
            self.partitions
                .iter()
                .map(|p| format!("{}:{}", p.start_beam, p.end_beam))
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("start_r", self.start_r.to_string());
        kv("final_r", self.final_r.to_string());
        kv("final_dr", self.final_dr.to_string());
        kv("final_iter", self.final_iter.to_string());
        kv("iterations", self.iterations.to_string());
        kv("accepted", self.accepted.to_string());
        kv("rejected", self.rejected.to_string());
        kv("termination", self.termination.name().to_string());
        kv("wall_time", format!("{:.6}", self.wall_time));
        for (i, t) in self.phases.stage.iter().enumerate() {
            kv(&format!("stage{}_time", i + 1), format!("{t:.6}"));
        }
        kv("io_time", format!("{:.6}", self.phases.io));
        kv(
            "max_wait_time",
            format!("{:.6}", self.wait_time.iter().cloned().fold(0.0, f64::max)),
        );
        kv(
            "wait_time",
            self.wait_time
                .iter()
                .map(|t| format!("{t:.6}"))
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("broadcasts", self.collectives.broadcasts.to_string());
        kv("sum_reduces", self.collectives.sum_reduces.to_string());
        kv("max_reduces", self.collectives.max_reduces.to_string());
        kv(
            "max_norm_deviation",
            format!("{:e}", self.max_norm_deviation),
        );
        kv(
            "max_norm_correction",
            format!("{:e}", self.max_norm_correction),
        );
        kv("max_step_error", format!("{:e}", self.max_step_error));
        kv(
            "files",
            self.files
                .iter()
                .map(|p| p.display().to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        o
    }
}

/// Angle caches and matter potentials of one step.
struct StepPoints {
    s: RadiusCache,
    m: RadiusCache,
    e: RadiusCache,
    a_s: f64,
    a_m: f64,
    a_e: f64,
}

/// Scratch sets of one lane.
struct Scratch {
    mid: BeamSet,
    f1: BeamSet,
    a: BeamSet,
    h2: BeamSet,
    b: BeamSet,
}

/// Result of one evolution step before accept/reject.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub err: f64,
    pub accepted: bool,
}

/// One lane of a run: its partition, committed beams and scratch.
pub struct Lane<'p> {
    problem: &'p Problem,
    part: Partition,
    psi: BeamSet,
    scratch: Scratch,
    comm: Comm,
    phases: PhaseTimes,
}

impl<'p> Lane<'p> {
    pub fn new(problem: &'p Problem, part: Partition, comm: Comm, start: &Start) -> Self {
        let psi = match start {
            Start::Fresh => BeamSet::fresh(problem, &part),
            Start::Resume(rp) => BeamSet::from_record(problem, &part, &rp.record),
        };
        let scratch = Scratch {
            mid: psi.clone(),
            f1: psi.clone(),
            a: psi.clone(),
            h2: psi.clone(),
            b: psi.clone(),
        };
        Lane {
            problem,
            part,
            psi,
            scratch,
            comm,
            phases: PhaseTimes::default(),
        }
    }

    pub fn state(&self) -> &BeamSet {
        &self.psi
    }

    fn ntraj(&self) -> usize {
        self.psi.trajectories()
    }

    fn traj_angles(&self, local: usize) -> (usize, usize) {
        let t = self.part.start_beam * self.problem.grid.pbins + local;
        (t / self.problem.grid.pbins, t % self.problem.grid.pbins)
    }

    fn weights(&self, s: Species) -> &'p [f64] {
        &self.problem.spectra[s.index()].weights
    }

    fn lane_sums(&self, cache: &RadiusCache, integrands: &[ReductionRow]) -> PartialSums {
        geometry::partial_hvv(
            &self.problem.grid,
            cache,
            self.part.start_beam,
            integrands.len(),
            |l| integrands[l],
        )
    }

    fn integrand(&self, rows: &[ReductionRow; 4]) -> ReductionRow {
        geometry::trajectory_integrand(rows, &self.problem.mu)
    }

    fn h_at(&self, totals: &[ReductionRow], cache: &RadiusCache, local: usize) -> Ham2 {
        let (j, k) = self.traj_angles(local);
        geometry::assemble_hvv(&self.problem.grid, totals, cache, j, k)
    }

    fn reduce_state(&mut self, cache: &RadiusCache) -> Result<Vec<ReductionRow>> {
        let mut integrands = Vec::new();
        if !self.problem.mu.is_zero() {
            integrands.reserve(self.ntraj());
            for t in 0..self.ntraj() {
                let mut rows = [ReductionRow::ZERO; 4];
                for s in Species::ALL {
                    rows[s.index()] = flavor::e_sum(self.psi.get(t, s), self.weights(s))?;
                }
                integrands.push(self.integrand(&rows));
            }
        }
        let sums = self.lane_sums(cache, &integrands);
        Ok(self.comm.reduce_sum(&sums)?.totals())
    }

    /// One four-stage step from `ctl.r` to `r_end`; the committed state is
    /// replaced only when the global error is within tolerance.
    pub fn step(&mut self, ctl: &StepControl, r_end: f64) -> Result<StepOutcome> {
        let p = self.problem;
        let grid = &p.grid;
        let rm = 0.5 * (ctl.r + r_end);
        let pts = StepPoints {
            s: grid.cache(ctl.r)?,
            m: grid.cache(rm)?,
            e: grid.cache(r_end)?,
            a_s: p.matter_at(ctl.r)?,
            a_m: p.matter_at(rm)?,
            a_e: p.matter_at(r_end)?,
        };
        let slots = grid.model.slots();
        let self_int = !p.mu.is_zero();

        let t0 = Instant::now();
        let tot0 = self.reduce_state(&pts.s)?;
        self.phases.stage[0] += t0.elapsed().as_secs_f64();

        let t1 = Instant::now();
        let mut int_e = Vec::with_capacity(if self_int { self.ntraj() } else { 0 });
        let mut int_m = Vec::with_capacity(int_e.capacity());
        for t in 0..self.ntraj() {
            let (j, _) = self.traj_angles(t);
            let hvv = self.h_at(&tot0, &pts.s, t);
            let dl_sm = grid.path_length(&pts.s, &pts.m, j);
            let dl_se = grid.path_length(&pts.s, &pts.e, j);
            let mut rows_m = [ReductionRow::ZERO; 4];
            let mut rows_e = [ReductionRow::ZERO; 4];
            for s in Species::ALL {
                let i = t * 4 + s.index();
                let ham = p.beam_ham(geometry::beam_shift(s, pts.a_s, hvv));
                let w = self.weights(s);
                rows_m[s.index()] = flavor::evolve_sum(
                    &ham,
                    dl_sm,
                    &self.psi.beams[i],
                    &mut self.scratch.mid.beams[i],
                    w,
                )?;
                rows_e[s.index()] = flavor::evolve_sum(
                    &ham,
                    dl_se,
                    &self.psi.beams[i],
                    &mut self.scratch.f1.beams[i],
                    w,
                )?;
            }
            if self_int {
                int_e.push(self.integrand(&rows_e));
                int_m.push(self.integrand(&rows_m));
            }
        }
        let sums = PartialSums::concat(&[
            self.lane_sums(&pts.e, &int_e),
            self.lane_sums(&pts.m, &int_m),
        ]);
        let fused = self.comm.reduce_sum(&sums)?;
        let halves = fused.split(slots);
        let (tot1, tot2) = (halves[0].totals(), halves[1].totals());
        self.phases.stage[1] += t1.elapsed().as_secs_f64();

        let t2 = Instant::now();
        let mut int3 = Vec::with_capacity(if self_int { self.ntraj() } else { 0 });
        for t in 0..self.ntraj() {
            let (j, _) = self.traj_angles(t);
            let hvv1 = self.h_at(&tot1, &pts.e, t);
            let hvv2 = self.h_at(&tot2, &pts.m, t);
            let dl_se = grid.path_length(&pts.s, &pts.e, j);
            let mut rows = [ReductionRow::ZERO; 4];
            for s in Species::ALL {
                let i = t * 4 + s.index();
                let ham1 = p.beam_ham(geometry::beam_shift(s, pts.a_e, hvv1));
                flavor::evolve_avg(
                    &ham1,
                    dl_se,
                    &self.psi.beams[i],
                    &self.scratch.f1.beams[i],
                    &mut self.scratch.a.beams[i],
                )?;
                let ham2 = p.beam_ham(geometry::beam_shift(s, pts.a_m, hvv2));
                let w = self.weights(s);
                rows[s.index()] = flavor::evolve_sum(
                    &ham2,
                    dl_se,
                    &self.psi.beams[i],
                    &mut self.scratch.h2.beams[i],
                    w,
                )?;
            }
            if self_int {
                int3.push(self.integrand(&rows));
            }
        }
        let sums3 = self.lane_sums(&pts.e, &int3);
        let tot3 = self.comm.reduce_sum(&sums3)?.totals();
        self.phases.stage[2] += t2.elapsed().as_secs_f64();

        let t3 = Instant::now();
        let mut local_err = 0.0f64;
        for t in 0..self.ntraj() {
            let (j, _) = self.traj_angles(t);
            let hvv3 = self.h_at(&tot3, &pts.e, t);
            let dl_se = grid.path_length(&pts.s, &pts.e, j);
            for s in Species::ALL {
                let i = t * 4 + s.index();
                let ham3 = p.beam_ham(geometry::beam_shift(s, pts.a_e, hvv3));
                let e1 = flavor::evolve_avg_err(
                    &ham3,
                    dl_se,
                    &self.psi.beams[i],
                    &self.scratch.f1.beams[i],
                    &self.scratch.a.beams[i],
                    &mut self.scratch.b.beams[i],
                )?;
                let e2 = flavor::calc_err(&self.scratch.h2.beams[i], &self.scratch.b.beams[i])?;
                local_err = nan_max(nan_max(local_err, e1), e2);
            }
        }
        let err = self.comm.reduce_max(local_err)?;
        self.phases.stage[3] += t3.elapsed().as_secs_f64();
        if !err.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite amplitudes or step error ({err}) at r = {} km, iteration {}, dr = {} km",
                ctl.r, ctl.iter, ctl.dr
            )));
        }
        Ok(StepOutcome {
            err,
            accepted: err <= p.limits.eps0,
        })
    }

    /// Commit the last step's `psi_B`; returns the largest norm deviation
    /// removed by renormalization.
    fn commit(&mut self) -> f64 {
        std::mem::swap(&mut self.psi, &mut self.scratch.b);
        let mut dev = 0.0f64;
        for b in &mut self.psi.beams {
            dev = nan_max(dev, b.max_norm_deviation());
            b.normalize();
        }
        dev
    }
}

/// Embedded error estimate of a single step from `r` to `r + dr` starting
/// from `start`, without committing it.
pub fn step_error(problem: &Problem, start: &Start, r: f64, dr: f64) -> Result<f64> {
    let part = Partition {
        worker_id: 0,
        start_beam: 0,
        end_beam: problem.grid.abins,
    };
    let mut lane = Lane::new(problem, part, Comm::solo(), start);
    Ok(lane.step(&StepControl { r, dr, iter: 0 }, r + dr)?.err)
}

/// How the run starts.
#[derive(Debug, Clone)]
pub enum Start {
    Fresh,
    Resume(Arc<ResumePoint>),
}

/// How trajectories are split over lanes.
#[derive(Debug, Clone, PartialEq)]
pub enum SplitMode {
    Even,
    Explicit(Vec<(usize, usize)>),
    Capability,
}

impl SplitMode {
    /// Split requested by the configuration's beam bounds for `lanes` lanes.
    ///
    /// Non-negative bounds give lane 0 the range `[start_beam, end_beam)`,
    /// which must start at 0; the remaining angle bins are split evenly over
    /// the other lanes. Negative bounds ask for a capability benchmark.
    pub fn from_config(config: &RunConfig, lanes: usize) -> Result<SplitMode> {
        if config.wants_capability_split() {
            return Ok(SplitMode::Capability);
        }
        let Some((start, end)) = config.beam_bounds() else {
            return Ok(SplitMode::Even);
        };
        let abins = config.abins;
        if start != 0 || end > abins || end <= start {
            return Err(Error::Config(format!(
                "start_beam/end_beam = {start}/{end} must describe a non-empty range [0, end) within Abins = {abins}"
            )));
        }
        if lanes <= 1 {
            if end != abins {
                return Err(Error::Config(format!(
                    "a single lane must cover all {abins} angle bins, got end_beam = {end}"
                )));
            }
            return Ok(SplitMode::Even);
        }
        let mut bounds = vec![(0, end)];
        bounds.extend(
            parallel::even_split(abins - end, lanes - 1)
                .into_iter()
                .map(|p| (end + p.start_beam, end + p.end_beam)),
        );
        Ok(SplitMode::Explicit(bounds))
    }
}

/// Dump settings from the configuration, writing below `dir`.
pub fn dump_plan(config: &RunConfig, dir: &std::path::Path) -> DumpPlan {
    use crate::io::dump::DumpGates;
    let gates = [0, 1].map(|m| DumpGates {
        r_step: config.r_step[m],
        t_step: config.t_step[m],
        itr_step: config.itr_step[m],
    });
    DumpPlan {
        dir: dir.to_path_buf(),
        prefix: config.file_prefix.clone(),
        mode_bits: config.dump_mode,
        gates,
        new_file_step: config.new_file_step,
        sync_step: config.sync_step,
        designated_writer: config.designated_writer,
        config_hash: config.hash(),
        attrs: config.render(),
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub lanes: usize,
    pub split: SplitMode,
    pub dump: Option<DumpPlan>,
    pub collective_timeout: Duration,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            lanes: 1,
            split: SplitMode::Even,
            dump: None,
            collective_timeout: Duration::from_secs(300),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub state: GlobalState,
}

struct LaneResult {
    set: BeamSet,
    phases: PhaseTimes,
    waited: Duration,
    counts: CollectiveCounts,
    ctl: StepControl,
    accepted: u64,
    rejected: u64,
    termination: Termination,
    wall: f64,
    norm_correction: f64,
    max_err: f64,
    files: Vec<PathBuf>,
}

fn partitions(problem: &Problem, opts: &RunOptions) -> Result<Vec<Partition>> {
    let abins = problem.grid.abins;
    let lanes = opts.lanes.max(1);
    match &opts.split {
        SplitMode::Even => Ok(parallel::even_split(abins, lanes)),
        SplitMode::Explicit(b) => {
            if b.len() != lanes {
                return Err(Error::Config(format!(
                    "{} explicit partitions for {lanes} lanes",
                    b.len()
                )));
            }
            parallel::explicit_split(b, abins)
        }
        SplitMode::Capability => {
            let ebins = problem.ebins().max(64);
            Ok(parallel::capability_split(abins, lanes, |_| {
                let mut a = BeamState::new(Species::NuE, ebins);
                let mut b = a.clone();
                let v = vec![0.1; ebins];
                let ham = BeamHamiltonian {
                    vac_h11: &v,
                    vac_h12: &v,
                    shift: Ham2::new(0.3, 0.2, 0.1),
                };
                for _ in 0..2000 {
                    let _ = flavor::evolve(&ham, 0.01, &a, &mut b);
                    std::mem::swap(&mut a, &mut b);
                }
                std::hint::black_box(&a);
            }))
        }
    }
}

/// Run the evolution loop on `opts.lanes` lanes.
pub fn run(problem: &Problem, opts: &RunOptions, start: Start) -> Result<RunOutcome> {
    let parts = partitions(problem, opts)?;
    let lanes = parts.len();
    let (r_start, iter_start, dr_start) = match &start {
        Start::Fresh => (
            problem.config.r0,
            0,
            problem.config.dr.min(problem.limits.dr_max),
        ),
        Start::Resume(rp) => {
            if rp.abins != problem.grid.abins
                || rp.pbins != problem.grid.pbins
                || rp.ebins != problem.ebins()
            {
                return Err(Error::Config(format!(
                    "snapshot dimensions {}x{}x{} do not match the configured {}x{}x{}",
                    rp.abins,
                    rp.pbins,
                    rp.ebins,
                    problem.grid.abins,
                    problem.grid.pbins,
                    problem.ebins()
                )));
            }
            if rp.config_hash != problem.config.hash() {
                log::warn!("snapshot was written with a different configuration");
            }
            (rp.mark.r, rp.mark.iter, rp.mark.dr)
        }
    };
    let writer = match &opts.dump {
        Some(plan) if plan.any() => {
            crate::io::dump::ensure_dir(&plan.dir)?;
            if plan.designated_writer {
                Some(DesignatedWriter::spawn(
                    plan,
                    lanes,
                    problem.grid.abins,
                    problem.grid.pbins,
                    problem.ebins(),
                )?)
            } else {
                None
            }
        }
        _ => None,
    };
    let shared = Collective::new(lanes, opts.collective_timeout);
    let ctl0 = StepControl {
        r: r_start,
        dr: dr_start,
        iter: iter_start,
    };
    let results: Vec<Result<LaneResult>> = std::thread::scope(|scope| {
        let handles: Vec<_> = parts
            .iter()
            .map(|&part| {
                let shared = shared.clone();
                let start = start.clone();
                let sink = opts
                    .dump
                    .as_ref()
                    .filter(|p| p.any())
                    .map(|plan| match &writer {
                        Some(w) => Sink::Forward(w.sender()),
                        None => Sink::own(
                            plan,
                            part.worker_id,
                            part.len(),
                            part.start_beam,
                            problem.grid.abins,
                            problem.grid.pbins,
                            problem.ebins(),
                        ),
                    });
                std::thread::Builder::new()
                    .name(format!("lane-{}", part.worker_id))
                    .spawn_scoped(scope, move || {
                        let comm = Comm::new(part.worker_id, shared.clone());
                        let res = lane_main(problem, opts, part, comm, &start, ctl0, sink);
                        if let Err(e) = &res {
                            shared.abort(&format!("lane {} failed: {e}", part.worker_id));
                        }
                        res
                    })
                    .expect("spawning a lane thread")
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::Collective("lane thread panicked".into())))
            })
            .collect()
    });
    let mut files = match writer {
        Some(w) => w.finish()?,
        None => Vec::new(),
    };
    if let Some(e) = results.iter().find_map(|r| {
        r.as_ref()
            .err()
            .filter(|e| !matches!(e, Error::Collective(_)))
    }) {
        return Err(clone_error(e));
    }
    let mut ok = Vec::with_capacity(lanes);
    for r in results {
        ok.push(r?);
    }
    let first = &ok[0];
    let mut beams = Vec::new();
    for r in &ok {
        files.extend(r.files.iter().cloned());
    }
    let summary_base = (
        first.ctl,
        first.accepted,
        first.rejected,
        first.termination,
        first.wall,
        first.phases,
        first.counts,
    );
    let norm_correction = ok.iter().map(|r| r.norm_correction).fold(0.0, nan_max);
    let max_err = ok.iter().map(|r| r.max_err).fold(0.0, nan_max);
    let wait_time = ok.iter().map(|r| r.waited.as_secs_f64()).collect();
    for r in ok {
        beams.extend(r.set.beams);
    }
    let state = GlobalState {
        abins: problem.grid.abins,
        pbins: problem.grid.pbins,
        ebins: problem.ebins(),
        set: BeamSet { beams },
    };
    let (ctl, accepted, rejected, termination, wall, phases, counts) = summary_base;
    let summary = RunSummary {
        lanes,
        partitions: parts,
        start_r: r_start,
        final_r: ctl.r,
        final_dr: ctl.dr,
        final_iter: ctl.iter,
        iterations: ctl.iter - iter_start,
        accepted,
        rejected,
        termination,
        wall_time: wall,
        phases,
        wait_time,
        collectives: counts,
        max_norm_deviation: state.max_norm_deviation(),
        max_norm_correction: norm_correction,
        max_step_error: max_err,
        files,
    };
    Ok(RunOutcome { summary, state })
}

fn clone_error(e: &Error) -> Error {
    match e {
        Error::Parse { line, msg } => Error::Parse {
            line: *line,
            msg: msg.clone(),
        },
        Error::Uninitialized(v) => Error::Uninitialized(v.clone()),
        Error::Config(m) => Error::Config(m.clone()),
        Error::Domain(m) => Error::Domain(m.clone()),
        Error::Numeric(m) => Error::Numeric(m.clone()),
        Error::StepCollapse {
            r,
            iter,
            dr,
            dr_min,
        } => Error::StepCollapse {
            r: *r,
            iter: *iter,
            dr: *dr,
            dr_min: *dr_min,
        },
        Error::Collective(m) => Error::Collective(m.clone()),
        Error::Io { path, source } => Error::Io {
            path: path.clone(),
            source: std::io::Error::new(source.kind(), source.to_string()),
        },
        Error::Snapshot { path, msg } => Error::Snapshot {
            path: path.clone(),
            msg: msg.clone(),
        },
    }
}

fn dump(lane: &Lane<'_>, sink: &mut Sink, mode: u32, mark: RecordMark) -> Result<()> {
    let data = if mode == MODE_FULL {
        lane.psi.full_record()
    } else {
        lane.psi.average_record(&lane.problem.spectra)
    };
    sink.write(mode, lane.part.worker_id, mark, data)
}

fn lane_main(
    problem: &Problem,
    opts: &RunOptions,
    part: Partition,
    comm: Comm,
    start: &Start,
    ctl0: StepControl,
    mut sink: Option<Sink>,
) -> Result<LaneResult> {
    let mut lane = Lane::new(problem, part, comm, start);
    let cfg = &problem.config;
    let plan = opts.dump.as_ref();
    let mut ctl = ctl0;
    let mut marks = [DumpMarks {
        r: ctl.r,
        t: 0.0,
        iter: ctl.iter,
    }; 2];
    let (mut accepted, mut rejected) = (0u64, 0u64);
    let mut norm_correction = 0.0f64;
    let mut max_err = 0.0f64;

    if let (Some(plan), Some(sink), Start::Fresh) = (plan, sink.as_mut(), start) {
        let t = Instant::now();
        for mode in [MODE_FULL, MODE_AVERAGE] {
            if plan.enabled(mode) {
                dump(
                    &lane,
                    sink,
                    mode,
                    RecordMark {
                        r: ctl.r,
                        iter: ctl.iter,
                        dr: ctl.dr,
                    },
                )?;
            }
        }
        lane.phases.io += t.elapsed().as_secs_f64();
    }

    let clock = Instant::now();
    let termination;
    loop {
        let mut proposal = [
            ctl.r,
            ctl.dr,
            ctl.iter as f64,
            0.0,
            clock.elapsed().as_secs_f64(),
        ];
        if lane.comm.lane() == 0 {
            let done = if ctl.r >= cfg.rn {
                1.0
            } else if cfg.ts > 0 && ctl.iter - ctl0.iter >= cfg.ts {
                2.0
            } else if cfg.tn > 0.0 && proposal[4] >= cfg.tn {
                3.0
            } else {
                0.0
            };
            proposal[3] = done;
        }
        let b = lane.comm.broadcast(&proposal)?;
        ctl = StepControl {
            r: b[0],
            dr: b[1],
            iter: b[2] as u64,
        };
        let now = b[4];
        match b[3] as u8 {
            1 => {
                termination = Termination::ReachedEnd;
                break;
            }
            2 => {
                termination = Termination::IterationLimit;
                break;
            }
            3 => {
                termination = Termination::WallTime;
                break;
            }
            _ => {}
        }
        let last = ctl.r + ctl.dr >= cfg.rn;
        let r_end = if last { cfg.rn } else { ctl.r + ctl.dr };
        let step_ctl = StepControl {
            dr: r_end - ctl.r,
            ..ctl
        };
        let out = lane.step(&step_ctl, r_end)?;
        let new_dr = step_size_update(&step_ctl, &problem.limits, out.err, out.accepted)?;
        ctl.iter += 1;
        if out.accepted {
            accepted += 1;
            max_err = max_err.max(out.err);
            norm_correction = nan_max(norm_correction, lane.commit());
            ctl.r = r_end;
            ctl.dr = new_dr;
            if let (Some(plan), Some(sink)) = (plan, sink.as_mut()) {
                let t = Instant::now();
                for mode in [MODE_FULL, MODE_AVERAGE] {
                    let m = mode as usize - 1;
                    if plan.enabled(mode)
                        && should_dump(&plan.gates[m], &marks[m], ctl.r, now, ctl.iter)
                    {
                        dump(
                            &lane,
                            sink,
                            mode,
                            RecordMark {
                                r: ctl.r,
                                iter: ctl.iter,
                                dr: ctl.dr,
                            },
                        )?;
                        marks[m] = DumpMarks {
                            r: ctl.r,
                            t: now,
                            iter: ctl.iter,
                        };
                    }
                }
                lane.phases.io += t.elapsed().as_secs_f64();
            }
        } else {
            rejected += 1;
            ctl.dr = new_dr;
        }
    }
    let wall = clock.elapsed().as_secs_f64();
    let files = match sink.as_mut() {
        Some(s) => s.finish()?,
        None => Vec::new(),
    };
    Ok(LaneResult {
        set: lane.psi,
        phases: lane.phases,
        waited: lane.comm.waited,
        counts: lane.comm.counts,
        ctl,
        accepted,
        rejected,
        termination,
        wall,
        norm_correction,
        max_err,
        files,
    })
}
