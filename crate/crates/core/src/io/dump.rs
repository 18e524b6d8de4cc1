//! Dump scheduling and the snapshot sinks used by solver lanes.

use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::thread::JoinHandle;

use super::snapshot::{RecordMark, SnapshotHeader, SnapshotWriter, MODE_AVERAGE, MODE_FULL};
use crate::error::{Error, Result};

/// Dump frequency limits of one mode; a zero gate is disabled.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DumpGates {
    /// km of radial progress.
    pub r_step: f64,
    /// seconds of wall time.
    pub t_step: f64,
    /// loop iterations.
    pub itr_step: u64,
}

/// Position of the last dump of one mode.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DumpMarks {
    pub r: f64,
    pub t: f64,
    pub iter: u64,
}

/// True when any enabled gate has been reached since the last dump.
pub fn should_dump(gates: &DumpGates, last: &DumpMarks, r: f64, t: f64, iter: u64) -> bool {
    (gates.r_step > 0.0 && r - last.r >= gates.r_step)
        || (gates.t_step > 0.0 && t - last.t >= gates.t_step)
        || (gates.itr_step > 0 && iter - last.iter >= gates.itr_step)
}

/// Dump settings shared by all lanes of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct DumpPlan {
    pub dir: PathBuf,
    pub prefix: String,
    /// Bit 0: full snapshots, bit 1: energy averages.
    pub mode_bits: u32,
    pub gates: [DumpGates; 2],
    pub new_file_step: u64,
    pub sync_step: u64,
    pub designated_writer: bool,
    pub config_hash: String,
    pub attrs: String,
}

impl DumpPlan {
    pub fn enabled(&self, mode: u32) -> bool {
        self.mode_bits & (1 << (mode - 1)) != 0
    }

    pub fn any(&self) -> bool {
        self.enabled(MODE_FULL) || self.enabled(MODE_AVERAGE)
    }

    /// Header for a file covering `theta` angle bins starting at `offset`.
    pub fn header(
        &self,
        mode: u32,
        theta: usize,
        offset: usize,
        theta_total: usize,
        pbins: usize,
        ebins: usize,
    ) -> SnapshotHeader {
        let mut h = if mode == MODE_FULL {
            SnapshotHeader::full(theta as u64, pbins as u64, ebins as u64)
        } else {
            SnapshotHeader::average(theta as u64, pbins as u64)
        };
        h.config_hash = self.config_hash.clone();
        h.attrs = self.attrs.clone();
        h.theta_offset = offset as u64;
        h.theta_total = theta_total as u64;
        h
    }
}

/// One lane's contribution to a snapshot.
#[derive(Debug)]
pub struct Chunk {
    pub mode: u32,
    pub lane: usize,
    pub mark: RecordMark,
    pub data: Vec<f64>,
}

/// Writer thread owning the files of a designated-writer run. It collects
/// one chunk per lane for every snapshot and writes the assembled record.
pub struct DesignatedWriter {
    tx: Option<SyncSender<Chunk>>,
    handle: Option<JoinHandle<Result<Vec<PathBuf>>>>,
}

impl DesignatedWriter {
    pub fn spawn(
        plan: &DumpPlan,
        lanes: usize,
        abins: usize,
        pbins: usize,
        ebins: usize,
    ) -> Result<Self> {
        let (tx, rx) = sync_channel::<Chunk>(4 * lanes.max(1));
        let plan = plan.clone();
        let handle = std::thread::Builder::new()
            .name("snapshot-writer".into())
            .spawn(move || writer_loop(rx, &plan, lanes, abins, pbins, ebins))
            .map_err(|e| Error::io(PathBuf::from("<writer thread>"), e))?;
        Ok(DesignatedWriter {
            tx: Some(tx),
            handle: Some(handle),
        })
    }

    pub fn sender(&self) -> SyncSender<Chunk> {
        self.tx.as_ref().expect("writer still open").clone()
    }

    /// Close the queue and wait for all pending writes.
    pub fn finish(mut self) -> Result<Vec<PathBuf>> {
        self.tx.take();
        match self.handle.take().map(|h| h.join()) {
            Some(Ok(r)) => r,
            Some(Err(_)) => Err(Error::Collective("snapshot writer thread panicked".into())),
            None => Ok(Vec::new()),
        }
    }
}

impl Drop for DesignatedWriter {
    fn drop(&mut self) {
        self.tx.take();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn writer_loop(
    rx: Receiver<Chunk>,
    plan: &DumpPlan,
    lanes: usize,
    abins: usize,
    pbins: usize,
    ebins: usize,
) -> Result<Vec<PathBuf>> {
    let mut writers: [Option<SnapshotWriter>; 2] = [None, None];
    let mut pending: [Vec<Option<Chunk>>; 2] = [
        (0..lanes).map(|_| None).collect(),
        (0..lanes).map(|_| None).collect(),
    ];
    for chunk in rx {
        let m = chunk.mode as usize - 1;
        let lane = chunk.lane;
        if pending[m][lane].is_some() {
            return Err(Error::Collective(format!(
                "lane {lane} sent two chunks for one snapshot"
            )));
        }
        pending[m][lane] = Some(chunk);
        if pending[m].iter().all(Option::is_some) {
            let parts: Vec<Chunk> = pending[m].iter_mut().map(|c| c.take().unwrap()).collect();
            let mark = parts[0].mark;
            let record: Vec<f64> = parts.into_iter().flat_map(|c| c.data).collect();
            let w = writers[m].get_or_insert_with(|| {
                SnapshotWriter::new(
                    &plan.dir,
                    &plan.prefix,
                    0,
                    plan.header(m as u32 + 1, abins, 0, abins, pbins, ebins),
                    plan.new_file_step,
                    plan.sync_step,
                )
            });
            w.append(&record, mark)?;
        }
    }
    let mut files = Vec::new();
    for w in writers.iter_mut().flatten() {
        w.finish()?;
        files.extend_from_slice(w.files());
    }
    Ok(files)
}

/// Where a lane sends its snapshot data.
pub enum Sink {
    /// The lane writes its own files for its angle range.
    Own([Option<SnapshotWriter>; 2]),
    /// The lane forwards chunks to the designated writer.
    Forward(SyncSender<Chunk>),
}

impl Sink {
    pub fn own(
        plan: &DumpPlan,
        lane: usize,
        theta: usize,
        offset: usize,
        abins: usize,
        pbins: usize,
        ebins: usize,
    ) -> Self {
        let mk = |mode: u32| {
            plan.enabled(mode).then(|| {
                SnapshotWriter::new(
                    &plan.dir,
                    &plan.prefix,
                    lane,
                    plan.header(mode, theta, offset, abins, pbins, ebins),
                    plan.new_file_step,
                    plan.sync_step,
                )
            })
        };
        Sink::Own([mk(MODE_FULL), mk(MODE_AVERAGE)])
    }

    pub fn write(
        &mut self,
        mode: u32,
        lane: usize,
        mark: RecordMark,
        data: Vec<f64>,
    ) -> Result<()> {
        match self {
            Sink::Own(w) => match w[mode as usize - 1].as_mut() {
                Some(w) => w.append(&data, mark),
                None => Ok(()),
            },
            Sink::Forward(tx) => tx
                .send(Chunk {
                    mode,
                    lane,
                    mark,
                    data,
                })
                .map_err(|_| Error::Collective("snapshot writer stopped accepting data".into())),
        }
    }

    pub fn finish(&mut self) -> Result<Vec<PathBuf>> {
        let mut files = Vec::new();
        if let Sink::Own(ws) = self {
            for w in ws.iter_mut().flatten() {
                w.finish()?;
                files.extend_from_slice(w.files());
            }
        }
        Ok(files)
    }
}

/// Convenience: directory check before a run starts writing.
pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}
