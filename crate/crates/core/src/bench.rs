//! Kernel microbenchmarks with median-of-repetitions timing.
//!
//! Every kernel folds its results into a checksum that is compared with a
//! plain scalar reference, so the optimizer cannot drop the measured work
//! and a fast but wrong variant is reported as such.

use std::fs::File;
use std::hint::black_box;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Barrier;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::flavor::{self, Amplitudes, BeamHamiltonian, BeamState, Ham2, Species, SIMD_LANES};

/// Minimum total measured time of one kernel.
pub const MIN_RUN: Duration = Duration::from_millis(50);

const MAX_REPETITIONS: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Transcendental,
    FlopMadd,
    SoAvsAoS,
    FusedVsUnfused,
    LoopShape,
    IoBuffering,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Transcendental,
        Family::FlopMadd,
        Family::SoAvsAoS,
        Family::FusedVsUnfused,
        Family::LoopShape,
        Family::IoBuffering,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Transcendental => "transcendental",
            Family::FlopMadd => "flop_madd",
            Family::SoAvsAoS => "soa_vs_aos",
            Family::FusedVsUnfused => "fused_vs_unfused",
            Family::LoopShape => "loop_shape",
            Family::IoBuffering => "io_buffering",
        }
    }

    pub fn from_name(s: &str) -> Option<Family> {
        Family::ALL.into_iter().find(|f| f.name() == s)
    }
}

/// Variant within a family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    SinCos,
    Exp,
    Madd,
    Soa,
    Aos,
    Fused,
    Unfused,
    /// Threads spawned for every outer iteration.
    SpawnPerIteration,
    /// Persistent threads synchronized by a barrier per iteration.
    BarrierPerIteration,
    /// Persistent threads, contiguous static chunks, one join at the end.
    StaticChunks,
    /// Persistent threads taking chunks from a shared counter.
    DynamicChunks,
    Buffered,
    PerElement,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::SinCos => "sincos",
            Variant::Exp => "exp",
            Variant::Madd => "madd",
            Variant::Soa => "soa",
            Variant::Aos => "aos",
            Variant::Fused => "fused",
            Variant::Unfused => "unfused",
            Variant::SpawnPerIteration => "spawn_per_iter",
            Variant::BarrierPerIteration => "barrier_per_iter",
            Variant::StaticChunks => "static_chunks",
            Variant::DynamicChunks => "dynamic_chunks",
            Variant::Buffered => "buffered",
            Variant::PerElement => "per_element",
        }
    }

    pub fn family(self) -> Family {
        match self {
            Variant::SinCos | Variant::Exp => Family::Transcendental,
            Variant::Madd => Family::FlopMadd,
            Variant::Soa | Variant::Aos => Family::SoAvsAoS,
            Variant::Fused | Variant::Unfused => Family::FusedVsUnfused,
            Variant::SpawnPerIteration
            | Variant::BarrierPerIteration
            | Variant::StaticChunks
            | Variant::DynamicChunks => Family::LoopShape,
            Variant::Buffered | Variant::PerElement => Family::IoBuffering,
        }
    }

    pub fn of(family: Family) -> &'static [Variant] {
        match family {
            Family::Transcendental => &[Variant::SinCos, Variant::Exp],
            Family::FlopMadd => &[Variant::Madd],
            Family::SoAvsAoS => &[Variant::Soa, Variant::Aos],
            Family::FusedVsUnfused => &[Variant::Fused, Variant::Unfused],
            Family::LoopShape => &[
                Variant::SpawnPerIteration,
                Variant::BarrierPerIteration,
                Variant::StaticChunks,
                Variant::DynamicChunks,
            ],
            Family::IoBuffering => &[Variant::Buffered, Variant::PerElement],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    /// Elements processed together; a multiple of [`SIMD_LANES`].
    pub vector_width: usize,
    pub outer_iters: usize,
    pub array_len: usize,
    pub repetitions: usize,
    /// Threads for the loop-shape kernels.
    pub threads: usize,
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams {
            vector_width: 64,
            outer_iters: 64,
            array_len: 4096,
            repetitions: 5,
            threads: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub name: String,
    pub variant: Variant,
    pub params: KernelParams,
}

impl KernelSpec {
    pub fn new(variant: Variant, params: KernelParams) -> Self {
        KernelSpec {
            name: format!("{}/{}", variant.family().name(), variant.name()),
            variant,
            params,
        }
    }

    pub fn family(&self) -> Family {
        self.variant.family()
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.params;
        if p.repetitions < 5 {
            return Err(Error::Config(format!(
                "{}: repetitions = {} (need >= 5)",
                self.name, p.repetitions
            )));
        }
        if p.vector_width == 0 || !p.vector_width.is_multiple_of(SIMD_LANES) {
            return Err(Error::Config(format!(
                "{}: vector width {} is not a multiple of {SIMD_LANES}",
                self.name, p.vector_width
            )));
        }
        if p.outer_iters == 0 || p.array_len == 0 || p.threads == 0 {
            return Err(Error::Config(format!(
                "{}: sizes must be positive",
                self.name
            )));
        }
        Ok(())
    }

    /// Work units per repetition and their unit name.
    pub fn work(&self) -> (f64, &'static str) {
        let p = &self.params;
        let n = (p.vector_width * p.outer_iters) as f64;
        match self.variant {
            Variant::SinCos | Variant::Exp => (2.0 * n, "evals/s"),
            Variant::Madd => (2.0 * n, "flop/s"),
            Variant::Soa | Variant::Aos => ((p.array_len * p.outer_iters) as f64, "elements/s"),
            Variant::Fused | Variant::Unfused => ((p.array_len * p.outer_iters) as f64, "bins/s"),
            Variant::SpawnPerIteration
            | Variant::BarrierPerIteration
            | Variant::StaticChunks
            | Variant::DynamicChunks => ((p.array_len * p.outer_iters) as f64, "elements/s"),
            Variant::Buffered | Variant::PerElement => ((p.array_len * 8) as f64, "bytes/s"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelReport {
    pub spec: KernelSpec,
    pub repetitions: usize,
    pub median_ns: f64,
    pub min_ns: f64,
    pub max_ns: f64,
    /// Work units per second at the median.
    pub throughput: f64,
    pub unit: &'static str,
    pub checksum: f64,
    pub reference: f64,
    pub checksum_ok: bool,
}

impl KernelReport {
    pub const CSV_HEADER: &'static str =
        "kernel,vector_width,outer_iters,array_len,repetitions,median_ns,min_ns,max_ns,throughput,unit,checksum_ok";

    pub fn csv_row(&self) -> String {
        let p = &self.spec.params;
        format!(
            "{},{},{},{},{},{:.0},{:.0},{:.0},{:.6e},{},{}",
            self.spec.name,
            p.vector_width,
            p.outer_iters,
            p.array_len,
            self.repetitions,
            self.median_ns,
            self.min_ns,
            self.max_ns,
            self.throughput,
            self.unit,
            self.checksum_ok
        )
    }
}

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Checksums agree to a relative `1e-12`, exactly for integers and I/O.
fn checksums_match(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

/// Inputs built once per kernel outside the timed region.
struct Prepared {
    spec: KernelSpec,
    input: Vec<f64>,
    soa: [Vec<f64>; 4],
    aos: Vec<[f64; 4]>,
    beam: BeamState,
    scratch: BeamState,
    vac: (Vec<f64>, Vec<f64>),
    weights: Vec<f64>,
    path: PathBuf,
}

fn input_values(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.25 + 0.5 * ((i * 7919) % 1000) as f64 / 1000.0)
        .collect()
}

impl Prepared {
    fn new(spec: &KernelSpec, scratch_dir: &Path) -> Self {
        let p = spec.params;
        let n = match spec.family() {
            Family::Transcendental | Family::FlopMadd => p.vector_width,
            _ => p.array_len,
        };
        let input = input_values(n);
        let soa: [Vec<f64>; 4] = [0, 1, 2, 3].map(|c| {
            input
                .iter()
                .map(|x| if c % 2 == 0 { x.sqrt() } else { 0.1 * x })
                .collect()
        });
        let aos = (0..n)
            .map(|i| [soa[0][i], soa[1][i], soa[2][i], soa[3][i]])
            .collect();
        let mut beam = BeamState::new(Species::NuE, p.array_len);
        for (e, x) in input.iter().enumerate().take(p.array_len) {
            let (s, c) = x.sin_cos();
            beam.set(
                e,
                Amplitudes {
                    ar: c,
                    ai: 0.0,
                    br: s,
                    bi: 0.0,
                },
            );
        }
        let scratch = beam.clone();
        let vac = (
            input.iter().map(|x| -0.3 * x).collect(),
            input.iter().map(|x| 0.1 * x).collect(),
        );
        let weights = input.iter().map(|x| x / n as f64).collect();
        let path = scratch_dir.join(format!(
            "bench_{}_{}.bin",
            spec.variant.name(),
            std::process::id()
        ));
        Prepared {
            spec: spec.clone(),
            input,
            soa,
            aos,
            beam,
            scratch,
            vac,
            weights,
            path,
        }
    }

    fn ham(&self) -> BeamHamiltonian<'_> {
        BeamHamiltonian {
            vac_h11: &self.vac.0,
            vac_h12: &self.vac.1,
            shift: Ham2::new(0.05, 0.02, -0.01),
        }
    }

    /// One repetition; returns the checksum.
    fn run(&mut self) -> Result<f64> {
        let p = self.spec.params;
        match self.spec.variant {
            Variant::SinCos => {
                let mut acc = vec![0.0; p.vector_width];
                for it in 0..p.outer_iters {
                    let shift = it as f64 * 1e-3;
                    for (a, &x) in acc.iter_mut().zip(&self.input) {
                        let (s, c) = (x + shift).sin_cos();
                        *a += s * c;
                    }
                }
                Ok(acc.iter().sum())
            }
            Variant::Exp => {
                let mut acc = vec![0.0; p.vector_width];
                for it in 0..p.outer_iters {
                    let shift = it as f64 * 1e-3;
                    for (a, &x) in acc.iter_mut().zip(&self.input) {
                        *a += (x - shift).exp() - (shift - x).exp();
                    }
                }
                Ok(acc.iter().sum())
            }
            Variant::Madd => {
                let mut a = self.input.clone();
                let b = 0.999_999;
                for _ in 0..p.outer_iters {
                    for (x, &c) in a.iter_mut().zip(&self.input) {
                        *x = *x * b + c * 1e-6;
                    }
                }
                Ok(a.iter().sum())
            }
            Variant::Soa => {
                let [ar, ai, br, bi] = &mut self.soa;
                for it in 0..p.outer_iters {
                    let (s, c) = (1e-3 * (it + 1) as f64).sin_cos();
                    for i in 0..ar.len() {
                        let (a0, a1, b0, b1) = (ar[i], ai[i], br[i], bi[i]);
                        ar[i] = c * a0 + s * b1;
                        ai[i] = c * a1 - s * b0;
                        br[i] = c * b0 + s * a1;
                        bi[i] = c * b1 - s * a0;
                    }
                }
                Ok(self.soa.iter().flatten().map(|x| x * x).sum::<f64>()
                    + self.soa[0].iter().sum::<f64>())
            }
            Variant::Aos => {
                for it in 0..p.outer_iters {
                    let (s, c) = (1e-3 * (it + 1) as f64).sin_cos();
                    for v in self.aos.iter_mut() {
                        let [a0, a1, b0, b1] = *v;
                        *v = [
                            c * a0 + s * b1,
                            c * a1 - s * b0,
                            c * b0 + s * a1,
                            c * b1 - s * a0,
                        ];
                    }
                }
                let sq: f64 = (0..4)
                    .map(|c| self.aos.iter().map(|v| v[c] * v[c]).sum::<f64>())
                    .sum();
                Ok(sq + self.aos.iter().map(|v| v[0]).sum::<f64>())
            }
            Variant::Fused | Variant::Unfused => {
                let ham = BeamHamiltonian {
                    vac_h11: &self.vac.0,
                    vac_h12: &self.vac.1,
                    shift: Ham2::new(0.05, 0.02, -0.01),
                };
                let mut acc = 0.0;
                let mut a = self.beam.clone();
                for _ in 0..p.outer_iters {
                    let row = if self.spec.variant == Variant::Fused {
                        flavor::evolve_sum(&ham, 0.01, &a, &mut self.scratch, &self.weights)?
                    } else {
                        flavor::evolve(&ham, 0.01, &a, &mut self.scratch)?;
                        flavor::e_sum(&self.scratch, &self.weights)?
                    };
                    acc += row.d + row.o_re + row.o_im;
                    std::mem::swap(&mut a, &mut self.scratch);
                }
                Ok(acc)
            }
            Variant::SpawnPerIteration
            | Variant::BarrierPerIteration
            | Variant::StaticChunks
            | Variant::DynamicChunks => Ok(loop_shape(self.spec.variant, &p, &self.input)),
            Variant::Buffered | Variant::PerElement => {
                let file = File::create(&self.path).map_err(|e| Error::io(&self.path, e))?;
                if self.spec.variant == Variant::Buffered {
                    let mut w = BufWriter::with_capacity(1 << 16, file);
                    for x in &self.input {
                        w.write_all(&x.to_le_bytes())
                            .map_err(|e| Error::io(&self.path, e))?;
                    }
                    w.flush().map_err(|e| Error::io(&self.path, e))?;
                } else {
                    let mut f = file;
                    for x in &self.input {
                        f.write_all(&x.to_le_bytes())
                            .map_err(|e| Error::io(&self.path, e))?;
                    }
                }
                read_back_sum(&self.path)
            }
        }
    }

    /// Scalar reference checksum for one repetition from the initial inputs.
    fn reference(&self) -> Result<f64> {
        let p = self.spec.params;
        let n = self.input.len();
        Ok(match self.spec.variant {
            Variant::SinCos => (0..n)
                .map(|i| {
                    (0..p.outer_iters)
                        .map(|it| {
                            (self.input[i] + it as f64 * 1e-3).sin()
                                * (self.input[i] + it as f64 * 1e-3).cos()
                        })
                        .sum::<f64>()
                })
                .sum(),
            Variant::Exp => (0..n)
                .map(|i| {
                    (0..p.outer_iters)
                        .map(|it| {
                            let d = self.input[i] - it as f64 * 1e-3;
                            2.0 * d.sinh()
                        })
                        .sum::<f64>()
                })
                .sum(),
            Variant::Madd => {
                let b = 0.999_999f64;
                let bn = b.powi(p.outer_iters as i32);
                let geo = (1.0 - bn) / (1.0 - b);
                self.input.iter().map(|&x| x * bn + x * 1e-6 * geo).sum()
            }
            Variant::Soa | Variant::Aos => {
                // the rotation is unitary on (a, b) with a real angle, so only the
                // first component needs a separate closed form
                let total_angle: f64 = (0..p.outer_iters).map(|it| 1e-3 * (it + 1) as f64).sum();
                let (s, c) = total_angle.sin_cos();
                let sq: f64 = self.soa.iter().flatten().map(|x| x * x).sum();
                let first: f64 = (0..n)
                    .map(|i| c * self.soa[0][i] + s * self.soa[3][i])
                    .sum();
                sq + first
            }
            Variant::Fused | Variant::Unfused => {
                let ham = self.ham();
                let mut acc = 0.0;
                let mut a: Vec<Amplitudes> =
                    (0..self.beam.ebins()).map(|e| self.beam.get(e)).collect();
                for _ in 0..p.outer_iters {
                    let mut row = crate::flavor::ReductionRow::ZERO;
                    for (e, psi) in a.iter_mut().enumerate() {
                        let h = ham.bin(e);
                        *psi = scalar_evolve(h, 0.01, *psi);
                        let w = self.weights[e];
                        row.d += w
                            * (psi.ar * psi.ar + psi.ai * psi.ai
                                - psi.br * psi.br
                                - psi.bi * psi.bi);
                        row.o_re += w * 2.0 * (psi.ar * psi.br + psi.ai * psi.bi);
                        row.o_im += w * 2.0 * (psi.ai * psi.br - psi.ar * psi.bi);
                    }
                    acc += row.d + row.o_re + row.o_im;
                }
                acc
            }
            Variant::SpawnPerIteration
            | Variant::BarrierPerIteration
            | Variant::StaticChunks
            | Variant::DynamicChunks => {
                let per: f64 = self.input.iter().map(|x| x * x).sum();
                per * p.outer_iters as f64
            }
            Variant::Buffered | Variant::PerElement => self.input.iter().sum(),
        })
    }

    /// Whether the reference is exact or only agrees to rounding.
    fn exact_reference(&self) -> bool {
        matches!(self.spec.variant, Variant::Buffered | Variant::PerElement)
    }
}

impl Drop for Prepared {
    fn drop(&mut self) {
        if self.spec.family() == Family::IoBuffering {
            let _ = std::fs::remove_file(&self.path);
        }
    }
}

/// Textbook matrix exponential of `-i H dl` applied to `psi`.
fn scalar_evolve(h: Ham2, dl: f64, psi: Amplitudes) -> Amplitudes {
    let lam = (h.h11 * h.h11 + h.h12_re * h.h12_re + h.h12_im * h.h12_im).sqrt();
    let (s, c) = (lam * dl).sin_cos();
    let k = if lam > 0.0 { s / lam } else { dl };
    // U = c I - i k H with H = [[h11, h12], [conj h12, -h11]]
    let (a, b) = ((psi.ar, psi.ai), (psi.br, psi.bi));
    let mul = |x: (f64, f64), y: (f64, f64)| (x.0 * y.0 - x.1 * y.1, x.0 * y.1 + x.1 * y.0);
    let h12 = (h.h12_re, h.h12_im);
    let h21 = (h.h12_re, -h.h12_im);
    let ha = (h.h11 * a.0 + mul(h12, b).0, h.h11 * a.1 + mul(h12, b).1);
    let hb = (mul(h21, a).0 - h.h11 * b.0, mul(h21, a).1 - h.h11 * b.1);
    Amplitudes {
        ar: c * a.0 + k * ha.1,
        ai: c * a.1 - k * ha.0,
        br: c * b.0 + k * hb.1,
        bi: c * b.1 - k * hb.0,
    }
}

fn read_back_sum(path: &Path) -> Result<f64> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .sum())
}

/// Sum of `x^2` over the array per outer iteration, split across threads.
fn loop_shape(variant: Variant, p: &KernelParams, input: &[f64]) -> f64 {
    let threads = p.threads;
    let n = input.len();
    let chunk = n.div_ceil(threads);
    let part =
        |lo: usize, hi: usize| -> f64 { input[lo.min(n)..hi.min(n)].iter().map(|x| x * x).sum() };
    match variant {
        Variant::SpawnPerIteration => {
            let mut total = 0.0;
            for _ in 0..p.outer_iters {
                let sums: Vec<f64> = std::thread::scope(|s| {
                    let hs: Vec<_> = (0..threads)
                        .map(|t| s.spawn(move || part(t * chunk, (t + 1) * chunk)))
                        .collect();
                    hs.into_iter().map(|h| h.join().unwrap()).collect()
                });
                total += sums.iter().sum::<f64>();
            }
            total
        }
        Variant::BarrierPerIteration => {
            let barrier = Barrier::new(threads);
            let sums: Vec<Vec<f64>> = std::thread::scope(|s| {
                let hs: Vec<_> = (0..threads)
                    .map(|t| {
                        let barrier = &barrier;
                        s.spawn(move || {
                            (0..p.outer_iters)
                                .map(|_| {
                                    let v = part(t * chunk, (t + 1) * chunk);
                                    barrier.wait();
                                    v
                                })
                                .collect()
                        })
                    })
                    .collect();
                hs.into_iter().map(|h| h.join().unwrap()).collect()
            });
            (0..p.outer_iters)
                .map(|it| sums.iter().map(|v| v[it]).sum::<f64>())
                .sum()
        }
        Variant::StaticChunks => {
            let sums: Vec<Vec<f64>> = std::thread::scope(|s| {
                let hs: Vec<_> = (0..threads)
                    .map(|t| {
                        s.spawn(move || {
                            (0..p.outer_iters)
                                .map(|_| part(t * chunk, (t + 1) * chunk))
                                .collect()
                        })
                    })
                    .collect();
                hs.into_iter().map(|h| h.join().unwrap()).collect()
            });
            (0..p.outer_iters)
                .map(|it| sums.iter().map(|v| v[it]).sum::<f64>())
                .sum()
        }
        _ => {
            let grain = SIMD_LANES * 32;
            let blocks = n.div_ceil(grain);
            let mut total = 0.0;
            for _ in 0..p.outer_iters {
                let next = AtomicUsize::new(0);
                let mut sums = vec![0.0; blocks];
                let parts: Vec<Vec<(usize, f64)>> = std::thread::scope(|s| {
                    let hs: Vec<_> = (0..threads)
                        .map(|_| {
                            let next = &next;
                            s.spawn(move || {
                                let mut mine = Vec::new();
                                loop {
                                    let b = next.fetch_add(1, Ordering::Relaxed);
                                    if b >= blocks {
                                        break mine;
                                    }
                                    mine.push((b, part(b * grain, (b + 1) * grain)));
                                }
                            })
                        })
                        .collect();
                    hs.into_iter().map(|h| h.join().unwrap()).collect()
                });
                for (b, v) in parts.into_iter().flatten() {
                    sums[b] = v;
                }
                total += sums.iter().sum::<f64>();
            }
            total
        }
    }
}

/// Time `spec`, doubling the repetitions until the measured total reaches
/// [`MIN_RUN`].
pub fn run_kernel(spec: &KernelSpec, scratch_dir: &Path) -> Result<KernelReport> {
    spec.validate()?;
    let mut reps = spec.params.repetitions;
    let mut times = Vec::new();
    let mut checksum = f64::NAN;
    let (reference, exact) = {
        let prep = Prepared::new(spec, scratch_dir);
        (prep.reference()?, prep.exact_reference())
    };
    let mut ok = true;
    loop {
        times.clear();
        let mut total = Duration::ZERO;
        for _ in 0..reps {
            let mut prep = Prepared::new(spec, scratch_dir);
            let t = Instant::now();
            let c = black_box(prep.run()?);
            let dt = t.elapsed();
            total += dt;
            times.push(dt.as_nanos() as f64);
            ok &= if exact {
                c == reference
            } else {
                checksums_match(c, reference)
            };
            checksum = c;
        }
        if total >= MIN_RUN || reps >= MAX_REPETITIONS {
            break;
        }
        reps *= 2;
    }
    let min = times.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = times.iter().cloned().fold(0.0, f64::max);
    let med = median(&mut times);
    let (work, unit) = spec.work();
    Ok(KernelReport {
        spec: spec.clone(),
        repetitions: reps,
        median_ns: med,
        min_ns: min,
        max_ns: max,
        throughput: work / (med.max(1.0) * 1e-9),
        unit,
        checksum,
        reference,
        checksum_ok: ok,
    })
}

/// Default suite: every variant of the given families.
pub fn suite(families: &[Family], params: KernelParams) -> Vec<KernelSpec> {
    families
        .iter()
        .flat_map(|&f| {
            Variant::of(f)
                .iter()
                .map(move |&v| KernelSpec::new(v, params))
        })
        .collect()
}

pub fn run_suite(specs: &[KernelSpec], scratch_dir: &Path) -> Result<Vec<KernelReport>> {
    specs.iter().map(|s| run_kernel(s, scratch_dir)).collect()
}

pub fn to_csv(reports: &[KernelReport]) -> String {
    let mut out = String::from(KernelReport::CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Median-time ratio `slow / fast` of two kernels in a report list.
pub fn ratio(reports: &[KernelReport], slow: Variant, fast: Variant) -> Option<f64> {
    let t = |v: Variant| {
        reports
            .iter()
            .find(|r| r.spec.variant == v)
            .map(|r| r.median_ns)
    };
    Some(t(slow)? / t(fast)?)
}

/// Coefficient of variation of each kernel's median across repeated suite
/// runs; kernels at or above `limit` are noisy.
pub fn noisy_kernels(runs: &[Vec<KernelReport>], limit: f64) -> Vec<(String, f64)> {
    let Some(first) = runs.first() else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for (i, r) in first.iter().enumerate() {
        let v: Vec<f64> = runs
            .iter()
            .filter_map(|run| run.get(i))
            .map(|x| x.median_ns)
            .collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
        let cov = var.sqrt() / mean;
        if !(cov < limit) {
            out.push((r.spec.name.clone(), cov));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> KernelParams {
        KernelParams {
            vector_width: 16,
            outer_iters: 4,
            array_len: 256,
            repetitions: 5,
            threads: 2,
        }
    }

    #[test]
    fn rejects_bad_specs() {
        let mut p = small();
        p.repetitions = 4;
        assert!(KernelSpec::new(Variant::Madd, p).validate().is_err());
        let mut p = small();
        p.vector_width = 12;
        assert!(KernelSpec::new(Variant::Madd, p).validate().is_err());
    }

    #[test]
    fn every_variant_matches_its_reference() {
        let dir = std::env::temp_dir();
        for spec in suite(&Family::ALL, small()) {
            let mut prep = Prepared::new(&spec, &dir);
            let reference = prep.reference().unwrap();
            let c = prep.run().unwrap();
            assert!(
                checksums_match(c, reference),
                "{}: {c} vs {reference}",
                spec.name
            );
        }
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn family_names_round_trip() {
        for f in Family::ALL {
            assert_eq!(Family::from_name(f.name()), Some(f));
        }
    }
}
