//! Configuration files, snapshot files and dump scheduling.

pub mod analyze;
pub mod config;
pub mod dump;
pub mod snapshot;

pub use config::{load_config, parse_config, ParsedConfig, RunConfig};
pub use dump::{should_dump, DumpGates, DumpMarks, DumpPlan};
pub use snapshot::{
    load_resume, read_snapshot, RecordMark, ResumePoint, SnapshotData, SnapshotHeader,
};
