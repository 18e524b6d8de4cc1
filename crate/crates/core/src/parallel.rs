//! Trajectory partitioning, in-process collectives, and the load model
//! used to pick heterogeneous work splits.

use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::flavor::nan_max;
use crate::geometry::PartialSums;

/// Half-open range of emission-angle bins owned by one lane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Partition {
    pub worker_id: usize,
    pub start_beam: usize,
    pub end_beam: usize,
}

impl Partition {
    pub fn len(&self) -> usize {
        self.end_beam - self.start_beam
    }

    pub fn is_empty(&self) -> bool {
        self.end_beam == self.start_beam
    }
}

/// Contiguous near-even split of `total` beams over `lanes` lanes; the
/// first `total % lanes` lanes get one extra beam.
pub fn even_split(total: usize, lanes: usize) -> Vec<Partition> {
    weighted_split(total, &vec![1.0; lanes.max(1)])
}

/// Largest-remainder split of `total` beams proportional to `weights`;
/// leftover beams go to the largest remainders, ties to the lowest id.
pub fn weighted_split(total: usize, weights: &[f64]) -> Vec<Partition> {
    let counts = largest_remainder(total, weights);
    let mut start = 0;
    counts
        .into_iter()
        .enumerate()
        .map(|(worker_id, n)| {
            let p = Partition {
                worker_id,
                start_beam: start,
                end_beam: start + n,
            };
            start += n;
            p
        })
        .collect()
}

fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let wsum: f64 = weights.iter().sum();
    let mut counts = Vec::with_capacity(weights.len());
    let mut rema = Vec::with_capacity(weights.len());
    for (i, w) in weights.iter().enumerate() {
        let exact = total as f64 * w / wsum;
        let n = exact.floor() as usize;
        counts.push(n);
        rema.push((exact - n as f64, i));
    }
    let assigned: usize = counts.iter().sum();
    rema.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in rema.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Check that `parts` are ordered, disjoint and cover `[0, total)`.
pub fn validate_partitions(parts: &[Partition], total: usize) -> Result<()> {
    let mut next = 0;
    for (i, p) in parts.iter().enumerate() {
        if p.worker_id != i {
            return Err(Error::Config(format!(
                "partition {i} carries worker id {}",
                p.worker_id
            )));
        }
        if p.start_beam != next || p.end_beam < p.start_beam {
            return Err(Error::Config(format!(
                "partition of worker {i} is [{}, {}) but must start at {next}",
                p.start_beam, p.end_beam
            )));
        }
        next = p.end_beam;
    }
    if next != total {
        return Err(Error::Config(format!(
            "partitions cover [0, {next}) but there are {total} beams"
        )));
    }
    Ok(())
}

/// Partitions from explicit `(start, end)` bounds.
pub fn explicit_split(bounds: &[(usize, usize)], total: usize) -> Result<Vec<Partition>> {
    let parts: Vec<Partition> = bounds
        .iter()
        .enumerate()
        .map(|(worker_id, &(s, e))| Partition {
            worker_id,
            start_beam: s,
            end_beam: e,
        })
        .collect();
    validate_partitions(&parts, total)?;
    Ok(parts)
}

/// Time each lane on `probe` and split proportionally to measured speed.
pub fn capability_split(
    total: usize,
    lanes: usize,
    probe: impl Fn(usize) + Sync,
) -> Vec<Partition> {
    let times: Vec<f64> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..lanes)
            .map(|lane| {
                let probe = &probe;
                s.spawn(move || {
                    let t = Instant::now();
                    probe(lane);
                    t.elapsed().as_secs_f64().max(1e-9)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("probe lane panicked"))
            .collect()
    });
    let weights: Vec<f64> = times.iter().map(|t| 1.0 / t).collect();
    log::info!("capability probe times per lane: {times:?}");
    weighted_split(total, &weights)
}

#[derive(Default)]
struct Round {
    generation: u64,
    arrived: usize,
    slots: Vec<Option<Vec<f64>>>,
    result: Arc<Vec<Vec<f64>>>,
    failure: Option<String>,
}

/// Rendezvous point shared by all lanes of one run.
///
/// Every collective is a gather of one `Vec<f64>` per lane; reductions are
/// computed identically by every lane from the gathered contributions in
/// lane order, so all lanes see bitwise equal results.
pub struct Collective {
    lanes: usize,
    timeout: Duration,
    round: Mutex<Round>,
    cv: Condvar,
}

impl Collective {
    pub fn new(lanes: usize, timeout: Duration) -> Arc<Self> {
        assert!(lanes >= 1);
        Arc::new(Collective {
            lanes,
            timeout,
            round: Mutex::new(Round {
                slots: vec![None; lanes],
                ..Default::default()
            }),
            cv: Condvar::new(),
        })
    }

    pub fn lanes(&self) -> usize {
        self.lanes
    }

    /// Mark the collective failed; every waiting and future call errors.
    pub fn abort(&self, why: &str) {
        let mut r = self.round.lock().unwrap_or_else(|e| e.into_inner());
        if r.failure.is_none() {
            r.failure = Some(why.to_string());
        }
        self.cv.notify_all();
    }

    pub fn gather(&self, lane: usize, data: Vec<f64>) -> Result<Arc<Vec<Vec<f64>>>> {
        let mut r = self.round.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(f) = &r.failure {
            return Err(Error::Collective(f.clone()));
        }
        if r.slots[lane].is_some() {
            return Err(Error::Collective(format!(
                "lane {lane} entered a collective twice"
            )));
        }
        let gen = r.generation;
        r.slots[lane] = Some(data);
        r.arrived += 1;
        if r.arrived == self.lanes {
            let all: Vec<Vec<f64>> = r
                .slots
                .iter_mut()
                .map(|s| s.take().unwrap_or_default())
                .collect();
            r.result = Arc::new(all);
            r.arrived = 0;
            r.generation += 1;
            self.cv.notify_all();
            return Ok(r.result.clone());
        }
        let deadline = Instant::now() + self.timeout;
        while r.generation == gen {
            if let Some(f) = &r.failure {
                return Err(Error::Collective(f.clone()));
            }
            let now = Instant::now();
            if now >= deadline {
                let msg = format!(
                    "lane {lane} waited {:?} at collective {gen}: {} of {} lanes arrived",
                    self.timeout, r.arrived, self.lanes
                );
                r.failure = Some(msg.clone());
                self.cv.notify_all();
                return Err(Error::Collective(msg));
            }
            r = self
                .cv
                .wait_timeout(r, deadline - now)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
        Ok(r.result.clone())
    }
}

/// Counts of collectives issued by one lane.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CollectiveCounts {
    pub broadcasts: u64,
    pub sum_reduces: u64,
    pub max_reduces: u64,
    pub gathers: u64,
}

/// One lane's handle on a [`Collective`], accumulating its wait time.
pub struct Comm {
    lane: usize,
    shared: Arc<Collective>,
    pub waited: Duration,
    pub counts: CollectiveCounts,
}

impl Comm {
    pub fn new(lane: usize, shared: Arc<Collective>) -> Self {
        Comm {
            lane,
            shared,
            waited: Duration::ZERO,
            counts: CollectiveCounts::default(),
        }
    }

    /// A single-lane communicator.
    pub fn solo() -> Self {
        Comm::new(0, Collective::new(1, Duration::from_secs(1)))
    }

    pub fn lane(&self) -> usize {
        self.lane
    }

    pub fn lanes(&self) -> usize {
        self.shared.lanes()
    }

    pub fn abort(&self, why: &str) {
        self.shared.abort(why);
    }

    fn timed(&mut self, data: Vec<f64>) -> Result<Arc<Vec<Vec<f64>>>> {
        let t = Instant::now();
        let r = self.shared.gather(self.lane, data);
        self.waited += t.elapsed();
        r
    }

    pub fn gather(&mut self, data: Vec<f64>) -> Result<Arc<Vec<Vec<f64>>>> {
        self.counts.gathers += 1;
        self.timed(data)
    }

    /// Sum of all lanes' partial sums, merged in lane order.
    pub fn reduce_sum(&mut self, local: &PartialSums) -> Result<PartialSums> {
        self.counts.sum_reduces += 1;
        let slots = local.slots();
        let all = self.timed(local.to_payload())?;
        let mut total = PartialSums::new(slots);
        for payload in all.iter() {
            total.merge(&PartialSums::from_payload(payload, slots)?);
        }
        Ok(total)
    }

    /// Maximum over lanes; NaN in any lane yields NaN.
    pub fn reduce_max(&mut self, local: f64) -> Result<f64> {
        self.counts.max_reduces += 1;
        let all = self.timed(vec![local])?;
        Ok(all.iter().map(|v| v[0]).fold(f64::NEG_INFINITY, nan_max))
    }

    /// Lane 0's values, delivered to every lane.
    pub fn broadcast(&mut self, values: &[f64]) -> Result<Vec<f64>> {
        self.counts.broadcasts += 1;
        let all = self.timed(values.to_vec())?;
        Ok(all[0].clone())
    }
}

/// Quantized iteration time of a worker with `threads` hardware threads
/// processing `beams` beams: `ceil(beams / threads) * per_beam_time`.
pub fn makespan(beams: usize, threads: usize, per_beam_time: f64) -> f64 {
    assert!(threads >= 1, "a worker needs at least one thread");
    beams.div_ceil(threads) as f64 * per_beam_time
}

/// `t_old / t_new`.
pub fn speedup(t_old: f64, t_new: f64) -> f64 {
    t_old / t_new
}

/// Parallel efficiency `S / p`; undefined (None) on heterogeneous systems
/// where processor counts are not comparable.
pub fn efficiency(speedup: f64, processors: usize, homogeneous: bool) -> Option<f64> {
    homogeneous.then(|| speedup / processors as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerProfile {
    pub class: String,
    pub threads: usize,
    /// Seconds per beam per iteration on one thread.
    pub per_beam_time: f64,
}

/// Search space and model of one autotune run.
#[derive(Debug, Clone, PartialEq)]
pub struct AutotuneRequest {
    pub total_beams: usize,
    /// Workers present on every node.
    pub node: Vec<WorkerProfile>,
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub ratio_min: f64,
    pub ratio_max: f64,
    pub ratio_step: f64,
    /// Worker class whose load is scaled by the ratio.
    pub accel_class: String,
    /// Relative throughput gain below which adding nodes stops paying off.
    pub knee_threshold: f64,
}

impl AutotuneRequest {
    pub fn ratios(&self) -> Vec<f64> {
        let n = ((self.ratio_max - self.ratio_min) / self.ratio_step + 1e-9).floor() as usize;
        (0..=n)
            .map(|i| ((self.ratio_min + i as f64 * self.ratio_step) * 1e9).round() / 1e9)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutotuneCell {
    pub nodes: usize,
    pub ratio: f64,
    /// Beams per worker, node-major.
    pub loads: Vec<usize>,
    /// None when some worker would receive no beams.
    pub iteration_time: Option<f64>,
    pub best: bool,
}

impl AutotuneCell {
    pub fn steps_per_sec(&self) -> Option<f64> {
        self.iteration_time.map(|t| 1.0 / t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutotuneReport {
    pub cells: Vec<AutotuneCell>,
    /// `(nodes, best ratio, steps/s)` for every node count with a feasible cell.
    pub best_per_nodes: Vec<(usize, f64, f64)>,
    /// First node count after which one more node gains less than the threshold.
    pub knee: Option<usize>,
}

/// Loads and iteration time of one `(nodes, ratio)` cell.
pub fn evaluate_cell(req: &AutotuneRequest, nodes: usize, ratio: f64) -> AutotuneCell {
    let workers: Vec<&WorkerProfile> = (0..nodes).flat_map(|_| req.node.iter()).collect();
    let weights: Vec<f64> = workers
        .iter()
        .map(|w| {
            if w.class == req.accel_class {
                ratio
            } else {
                1.0
            }
        })
        .collect();
    let loads = largest_remainder(req.total_beams, &weights);
    let feasible = loads.iter().all(|&n| n > 0);
    let iteration_time = feasible.then(|| {
        workers
            .iter()
            .zip(&loads)
            .map(|(w, &n)| makespan(n, w.threads, w.per_beam_time))
            .fold(0.0, f64::max)
    });
    AutotuneCell {
        nodes,
        ratio,
        loads,
        iteration_time,
        best: false,
    }
}

/// Exhaustive search of the `(nodes, ratio)` grid.
pub fn autotune(req: &AutotuneRequest) -> Result<AutotuneReport> {
    if req.min_nodes == 0 || req.max_nodes < req.min_nodes {
        return Err(Error::Config(format!(
            "node range [{}, {}] is empty",
            req.min_nodes, req.max_nodes
        )));
    }
    if req.node.is_empty()
        || req
            .node
            .iter()
            .any(|w| w.threads == 0 || !(w.per_beam_time > 0.0))
    {
        return Err(Error::Config(
            "every worker needs threads >= 1 and a positive per-beam time".into(),
        ));
    }
    if !(req.ratio_step > 0.0) || req.ratio_max < req.ratio_min || !(req.ratio_min > 0.0) {
        return Err(Error::Config(
            "ratio range must be positive with a positive step".into(),
        ));
    }
    let ratios = req.ratios();
    let mut cells = Vec::new();
    let mut best_per_nodes = Vec::new();
    for nodes in req.min_nodes..=req.max_nodes {
        let first = cells.len();
        let mut best: Option<(usize, f64)> = None;
        for &ratio in &ratios {
            let cell = evaluate_cell(req, nodes, ratio);
            if let Some(t) = cell.iteration_time {
                if best.is_none_or(|(_, bt)| t < bt) {
                    best = Some((cells.len(), t));
                }
            }
            cells.push(cell);
        }
        if let Some((i, t)) = best {
            cells[i].best = true;
            best_per_nodes.push((nodes, cells[i].ratio, 1.0 / t));
        }
        debug_assert!(cells.len() - first == ratios.len());
    }
    let knee = best_per_nodes
        .windows(2)
        .find(|w| w[1].0 == w[0].0 + 1 && (w[1].2 - w[0].2) / w[0].2 < req.knee_threshold)
        .map(|w| w[0].0);
    Ok(AutotuneReport {
        cells,
        best_per_nodes,
        knee,
    })
}

impl AutotuneReport {
    /// CSV grid: `nodes,ratio,predicted_steps_per_sec,best`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("nodes,ratio,predicted_steps_per_sec,best\n");
        for c in &self.cells {
            let sps = c
                .steps_per_sec()
                .map(|v| format!("{v:.6e}"))
                .unwrap_or_else(|| "infeasible".into());
            out.push_str(&format!(
                "{},{:.2},{},{}\n",
                c.nodes, c.ratio, sps, c.best as u8
            ));
        }
        out
    }
}
