//! Standard-library companion to `mpf-core`: dataset directory IO, checkpoint
//! and CSV formats, the allocation accountant, and the benchmark harness.

pub mod alloc_track;
pub mod bench;
pub mod checkpoint;
pub mod dataset;
pub mod manifest;
pub mod report;
pub mod verify;
