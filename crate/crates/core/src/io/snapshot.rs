//! Self-describing little-endian snapshot container.
//!
//! Layout:
//!
//! ```text
//! header  magic "OSCFLAT\0", version u32, mode u32,
//!         ndims u32, ndims x (name: u16 len + bytes, length: u64),
//!         nspecies u32, nspecies x (u16 len + name),
//!         config hash (u16 len + hex), theta_offset u64, theta_total u64,
//!         attrs (u32 len + canonical config text)
//! payload records x record_len f64, row-major in dimension order
//! footer  records x (r f64, iter u64, dr f64), checksum [u8; 32],
//!         record count u64, magic "OSCFEND\0"
//! ```
//!
//! The length of the leading `r` dimension equals the record count and is
//! patched in place on every append. The checksum is
//! `sha256(sha256(header) | sha256(payload) | sha256(record table))`.

use std::fs::{File, OpenOptions};
use std::io::{Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::flavor::Species;

pub const MAGIC: &[u8; 8] = b"OSCFLAT\0";
pub const FOOTER_MAGIC: &[u8; 8] = b"OSCFEND\0";
pub const VERSION: u32 = 1;

/// Full wavefunction dump: `[r, theta, phi, prtcl, comp, ebin]`.
pub const MODE_FULL: u32 = 1;
/// Energy-averaged electron-flavor content: `[r, theta, phi, prtcl]`.
pub const MODE_AVERAGE: u32 = 2;

pub fn mode_tag(mode: u32) -> &'static str {
    match mode {
        MODE_FULL => "Snapshot",
        MODE_AVERAGE => "Average",
        _ => "Mode",
    }
}

/// Bytes of one full-mode record for the given trajectory and bin counts.
pub fn full_record_bytes(abins: u64, pbins: u64, ebins: u64) -> u64 {
    abins * pbins * Species::ALL.len() as u64 * 4 * ebins * 8
}

/// Dimensions and metadata of a snapshot file.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotHeader {
    pub mode: u32,
    /// Names and lengths; the first entry is `r` (the record count).
    pub dims: Vec<(String, u64)>,
    pub species: Vec<String>,
    pub config_hash: String,
    pub theta_offset: u64,
    pub theta_total: u64,
    pub attrs: String,
}

impl SnapshotHeader {
    pub fn full(theta: u64, phi: u64, ebins: u64) -> Self {
        Self::with_dims(
            MODE_FULL,
            vec![
                ("r".into(), 0),
                ("theta".into(), theta),
                ("phi".into(), phi),
                ("prtcl".into(), Species::ALL.len() as u64),
                ("comp".into(), 4),
                ("ebin".into(), ebins),
            ],
        )
    }

    pub fn average(theta: u64, phi: u64) -> Self {
        Self::with_dims(
            MODE_AVERAGE,
            vec![
                ("r".into(), 0),
                ("theta".into(), theta),
                ("phi".into(), phi),
                ("prtcl".into(), Species::ALL.len() as u64),
            ],
        )
    }

    fn with_dims(mode: u32, dims: Vec<(String, u64)>) -> Self {
        let theta = dims[1].1;
        SnapshotHeader {
            mode,
            dims,
            species: Species::ALL.iter().map(|s| s.name().to_string()).collect(),
            config_hash: String::new(),
            theta_offset: 0,
            theta_total: theta,
            attrs: String::new(),
        }
    }

    /// f64 values per record (product of all dims but `r`).
    pub fn record_len(&self) -> usize {
        self.dims[1..].iter().map(|d| d.1 as usize).product()
    }

    pub fn records(&self) -> u64 {
        self.dims[0].1
    }

    pub fn dim(&self, name: &str) -> Option<u64> {
        self.dims.iter().find(|d| d.0 == name).map(|d| d.1)
    }

    fn encode(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.extend_from_slice(&self.mode.to_le_bytes());
        b.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for (name, len) in &self.dims {
            put_str16(&mut b, name);
            b.extend_from_slice(&len.to_le_bytes());
        }
        b.extend_from_slice(&(self.species.len() as u32).to_le_bytes());
        for s in &self.species {
            put_str16(&mut b, s);
        }
        put_str16(&mut b, &self.config_hash);
        b.extend_from_slice(&self.theta_offset.to_le_bytes());
        b.extend_from_slice(&self.theta_total.to_le_bytes());
        b.extend_from_slice(&(self.attrs.len() as u32).to_le_bytes());
        b.extend_from_slice(self.attrs.as_bytes());
        b
    }

    /// Byte offset of the `r` dimension length inside the encoded header.
    fn r_len_offset(&self) -> u64 {
        8 + 4 + 4 + 4 + 2 + self.dims[0].0.len() as u64
    }
}

fn put_str16(b: &mut Vec<u8>, s: &str) {
    b.extend_from_slice(&(s.len() as u16).to_le_bytes());
    b.extend_from_slice(s.as_bytes());
}

/// Per-record solver position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordMark {
    pub r: f64,
    pub iter: u64,
    /// Step size the solver will attempt next.
    pub dr: f64,
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::snapshot(self.path, "file is truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str_n(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::snapshot(self.path, "invalid UTF-8 in header"))
    }
    fn str16(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        self.str_n(n)
    }
}

/// A fully read and verified snapshot file.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotData {
    pub header: SnapshotHeader,
    pub marks: Vec<RecordMark>,
    /// All records back to back.
    pub payload: Vec<f64>,
}

impl SnapshotData {
    pub fn record(&self, i: usize) -> &[f64] {
        let n = self.header.record_len();
        &self.payload[i * n..(i + 1) * n]
    }

    pub fn last(&self) -> Option<(RecordMark, &[f64])> {
        let n = self.marks.len();
        (n > 0).then(|| (self.marks[n - 1], self.record(n - 1)))
    }
}

fn checksum(header: &[u8], payload_hash: &[u8], table: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(Sha256::digest(header));
    h.update(payload_hash);
    h.update(Sha256::digest(table));
    h.finalize().into()
}

fn encode_table(marks: &[RecordMark]) -> Vec<u8> {
    let mut t = Vec::with_capacity(marks.len() * 24);
    for m in marks {
        t.extend_from_slice(&m.r.to_le_bytes());
        t.extend_from_slice(&m.iter.to_le_bytes());
        t.extend_from_slice(&m.dr.to_le_bytes());
    }
    t
}

pub fn read_snapshot(path: &Path) -> Result<SnapshotData> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_snapshot(&bytes, path)
}

pub fn decode_snapshot(bytes: &[u8], path: &Path) -> Result<SnapshotData> {
    let mut c = Cursor {
        buf: bytes,
        pos: 0,
        path,
    };
    if c.take(8)? != MAGIC {
        return Err(Error::snapshot(path, "not a snapshot file (bad magic)"));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::snapshot(
            path,
            format!("unsupported format version {version}"),
        ));
    }
    let mode = c.u32()?;
    let ndims = c.u32()? as usize;
    if ndims == 0 || ndims > 16 {
        return Err(Error::snapshot(
            path,
            format!("implausible dimension count {ndims}"),
        ));
    }
    let mut dims = Vec::with_capacity(ndims);
    for _ in 0..ndims {
        let name = c.str16()?;
        dims.push((name, c.u64()?));
    }
    if dims[0].0 != "r" {
        return Err(Error::snapshot(path, "first dimension must be r"));
    }
    let nspecies = c.u32()? as usize;
    let mut species = Vec::with_capacity(nspecies.min(16));
    for _ in 0..nspecies {
        species.push(c.str16()?);
    }
    let config_hash = c.str16()?;
    let theta_offset = c.u64()?;
    let theta_total = c.u64()?;
    let alen = c.u32()? as usize;
    let attrs = c.str_n(alen)?;
    let header = SnapshotHeader {
        mode,
        dims,
        species,
        config_hash,
        theta_offset,
        theta_total,
        attrs,
    };
    let header_end = c.pos;

    let records = header.records() as usize;
    let rec = header.record_len();
    let payload_bytes = records
        .checked_mul(rec)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::snapshot(path, "dimension product overflows"))?;
    let expected = header_end + payload_bytes + records * 24 + 32 + 8 + 8;
    if bytes.len() != expected {
        return Err(Error::snapshot(
            path,
            format!(
                "size {} does not match dimensions (expected {expected} bytes)",
                bytes.len()
            ),
        ));
    }
    let payload_raw = c.take(payload_bytes)?;
    let table_raw = c.take(records * 24)?;
    let stored: [u8; 32] = c.take(32)?.try_into().unwrap();
    let count = c.u64()?;
    if c.take(8)? != FOOTER_MAGIC {
        return Err(Error::snapshot(path, "bad footer magic"));
    }
    if count as usize != records {
        return Err(Error::snapshot(
            path,
            format!("footer lists {count} records, header {records}"),
        ));
    }
    let sum = checksum(
        &bytes[..header_end],
        &Sha256::digest(payload_raw),
        table_raw,
    );
    if sum != stored {
        return Err(Error::snapshot(path, "checksum mismatch: file is corrupt"));
    }
    let payload = payload_raw
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let mut tc = Cursor {
        buf: table_raw,
        pos: 0,
        path,
    };
    let mut marks = Vec::with_capacity(records);
    for _ in 0..records {
        marks.push(RecordMark {
            r: tc.f64()?,
            iter: tc.u64()?,
            dr: tc.f64()?,
        });
    }
    Ok(SnapshotData {
        header,
        marks,
        payload,
    })
}

/// One open snapshot file being appended to.
pub struct SnapshotFile {
    path: PathBuf,
    file: File,
    header: SnapshotHeader,
    header_bytes: Vec<u8>,
    payload_hasher: Sha256,
    payload_end: u64,
    marks: Vec<RecordMark>,
}

impl SnapshotFile {
    pub fn create(path: &Path, header: SnapshotHeader) -> Result<Self> {
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut header = header;
        header.dims[0].1 = 0;
        let header_bytes = header.encode();
        file.write_all(&header_bytes)
            .map_err(|e| Error::io(path, e))?;
        let mut f = SnapshotFile {
            path: path.to_path_buf(),
            file,
            payload_end: header_bytes.len() as u64,
            header,
            header_bytes,
            payload_hasher: Sha256::new(),
            marks: Vec::new(),
        };
        f.write_footer()?;
        Ok(f)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn records(&self) -> usize {
        self.marks.len()
    }

    fn write_footer(&mut self) -> Result<()> {
        let table = encode_table(&self.marks);
        let sum = checksum(
            &self.header_bytes,
            &self.payload_hasher.clone().finalize(),
            &table,
        );
        let mut tail = table;
        tail.extend_from_slice(&sum);
        tail.extend_from_slice(&(self.marks.len() as u64).to_le_bytes());
        tail.extend_from_slice(FOOTER_MAGIC);
        let io = |e| Error::io(&self.path, e);
        self.file
            .seek(SeekFrom::Start(self.payload_end))
            .map_err(io)?;
        self.file.write_all(&tail).map_err(io)?;
        self.file
            .set_len(self.payload_end + tail.len() as u64)
            .map_err(io)?;
        Ok(())
    }

    /// Append one record (`header.record_len()` values) in a single write.
    pub fn append(&mut self, record: &[f64], mark: RecordMark) -> Result<()> {
        if record.len() != self.header.record_len() {
            return Err(Error::snapshot(
                &self.path,
                format!(
                    "record has {} values, dimensions need {}",
                    record.len(),
                    self.header.record_len()
                ),
            ));
        }
        if let Some(last) = self.marks.last() {
            if mark.iter < last.iter || (mark.iter == last.iter && mark.r <= last.r) {
                return Err(Error::snapshot(
                    &self.path,
                    "snapshots must be appended in increasing (iter, r)",
                ));
            }
        }
        let mut buf = Vec::with_capacity(record.len() * 8);
        for v in record {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let io = |e| Error::io(&self.path, e);
        self.file
            .seek(SeekFrom::Start(self.payload_end))
            .map_err(io)?;
        self.file.write_all(&buf).map_err(io)?;
        self.payload_hasher.update(&buf);
        self.payload_end += buf.len() as u64;
        self.marks.push(mark);

        self.header.dims[0].1 = self.marks.len() as u64;
        let off = self.header.r_len_offset() as usize;
        self.header_bytes[off..off + 8].copy_from_slice(&(self.marks.len() as u64).to_le_bytes());
        self.file.seek(SeekFrom::Start(off as u64)).map_err(io)?;
        self.file
            .write_all(&(self.marks.len() as u64).to_le_bytes())
            .map_err(io)?;
        self.write_footer()
    }

    pub fn sync(&mut self) -> Result<()> {
        self.file.sync_all().map_err(|e| Error::io(&self.path, e))
    }
}

/// Rotating writer for one dump mode of one worker.
///
/// File names are `{prefix}{tag}{counter}_{worker}` inside `dir`; the
/// counter skips names that already exist so earlier output is kept.
pub struct SnapshotWriter {
    dir: PathBuf,
    prefix: String,
    worker: usize,
    template: SnapshotHeader,
    new_file_step: u64,
    sync_step: u64,
    counter: u64,
    total: u64,
    current: Option<SnapshotFile>,
    written: Vec<PathBuf>,
}

impl SnapshotWriter {
    pub fn new(
        dir: &Path,
        prefix: &str,
        worker: usize,
        template: SnapshotHeader,
        new_file_step: u64,
        sync_step: u64,
    ) -> Self {
        SnapshotWriter {
            dir: dir.to_path_buf(),
            prefix: prefix.to_string(),
            worker,
            template,
            new_file_step,
            sync_step,
            counter: 0,
            total: 0,
            current: None,
            written: Vec::new(),
        }
    }

    pub fn file_name(prefix: &str, mode: u32, counter: u64, worker: usize) -> String {
        format!("{prefix}{}{counter}_{worker}", mode_tag(mode))
    }

    /// Paths of every file opened so far, oldest first.
    pub fn files(&self) -> &[PathBuf] {
        &self.written
    }

    pub fn append(&mut self, record: &[f64], mark: RecordMark) -> Result<()> {
        let rotate = match &self.current {
            None => true,
            Some(f) => self.new_file_step > 0 && f.records() as u64 >= self.new_file_step,
        };
        if rotate {
            if let Some(mut old) = self.current.take() {
                old.sync()?;
                self.counter += 1;
            }
            let mut path;
            loop {
                path = self.dir.join(Self::file_name(
                    &self.prefix,
                    self.template.mode,
                    self.counter,
                    self.worker,
                ));
                if !path.exists() {
                    break;
                }
                self.counter += 1;
            }
            self.current = Some(SnapshotFile::create(&path, self.template.clone())?);
            self.written.push(path);
        }
        let file = self.current.as_mut().expect("file opened above");
        file.append(record, mark)?;
        self.total += 1;
        if self.sync_step > 0 && self.total.is_multiple_of(self.sync_step) {
            file.sync()?;
        }
        Ok(())
    }

    pub fn finish(&mut self) -> Result<()> {
        if let Some(f) = self.current.as_mut() {
            f.sync()?;
        }
        Ok(())
    }
}

/// Solver state restored from full-mode snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct ResumePoint {
    pub mark: RecordMark,
    pub abins: usize,
    pub pbins: usize,
    pub ebins: usize,
    pub config_hash: String,
    /// Full record `[theta, phi, prtcl, comp, ebin]` over all angle bins.
    pub record: Vec<f64>,
}

/// Load the last record of one or more full-mode files that together
/// cover every angle bin.
pub fn load_resume(paths: &[PathBuf]) -> Result<ResumePoint> {
    if paths.is_empty() {
        return Err(Error::Config(
            "resume needs at least one snapshot file".into(),
        ));
    }
    let mut parts = Vec::new();
    for p in paths {
        let d = read_snapshot(p)?;
        if d.header.mode != MODE_FULL {
            return Err(Error::snapshot(
                p,
                format!(
                    "mode {} file cannot seed a resume (need mode 1)",
                    d.header.mode
                ),
            ));
        }
        let expect = ["r", "theta", "phi", "prtcl", "comp", "ebin"];
        if d.header.dims.len() != 6 || d.header.dims.iter().zip(expect).any(|(a, b)| a.0 != b) {
            return Err(Error::snapshot(p, "unexpected dimension layout"));
        }
        if d.header.dim("prtcl") != Some(4) || d.header.dim("comp") != Some(4) {
            return Err(Error::snapshot(p, "expected 4 species and 4 components"));
        }
        if d.marks.is_empty() {
            return Err(Error::snapshot(p, "file holds no snapshot"));
        }
        parts.push((p.clone(), d));
    }
    parts.sort_by_key(|(_, d)| d.header.theta_offset);
    let first = &parts[0].1.header;
    let (pbins, ebins, total) = (
        first.dim("phi").unwrap(),
        first.dim("ebin").unwrap(),
        first.theta_total,
    );
    let mark = parts[0].1.last().unwrap().0;
    let mut record = Vec::new();
    let mut next = 0;
    for (p, d) in &parts {
        let h = &d.header;
        if h.dim("phi") != Some(pbins) || h.dim("ebin") != Some(ebins) || h.theta_total != total {
            return Err(Error::snapshot(p, "dimensions differ between resume files"));
        }
        if h.theta_offset != next {
            return Err(Error::snapshot(
                p,
                format!(
                    "angle bins start at {} but {next} was expected",
                    h.theta_offset
                ),
            ));
        }
        let (m, rec) = d.last().unwrap();
        if m != mark {
            return Err(Error::snapshot(
                p,
                "last snapshots of the resume files are from different steps",
            ));
        }
        if h.config_hash != first.config_hash {
            log::warn!(
                "{}: config hash differs from the other resume files",
                p.display()
            );
        }
        record.extend_from_slice(rec);
        next += h.dim("theta").unwrap();
    }
    if next != total {
        return Err(Error::Config(format!(
            "resume files cover {next} of {total} angle bins"
        )));
    }
    Ok(ResumePoint {
        mark,
        abins: total as usize,
        pbins: pbins as usize,
        ebins: ebins as usize,
        config_hash: first.config_hash.clone(),
        record,
    })
}
