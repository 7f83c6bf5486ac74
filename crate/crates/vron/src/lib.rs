//! Runtime for the video provenance pipeline: files, links between stage
//! workers, the decoder pool, the scheduler, benchmarks and attack runs.

pub mod attack;
pub mod bench;
pub mod camera;
pub mod cli;
pub mod io;
pub mod pool;
pub mod scheduler;
pub mod transport;
pub mod workers;

pub use vron_core as core;
