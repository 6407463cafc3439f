//! Deterministic simulator of a virtualized cloud datacenter with a
//! double-honeypot worm-collection pipeline.
//!
//! The pieces fit together like this: [`cloud`] models physical servers,
//! distributed switches, and port groups, and enforces that traffic never
//! crosses a port-group boundary. [`worm`] drives self-replicating worm
//! families (polymorphic payload mutation, existence checks, memory
//! dormancy) through that topology. [`guest`] holds per-VM state: process
//! and module tables, a sparse sector-addressed disk with a redo log of
//! changed sectors, and restorable snapshots. [`introspect`] is the
//! out-of-band checker that diffs memory snapshots against clean template
//! baselines and extracts payload bytes from anomalous processes.
//! [`orchestrate`] runs the controller/inspector state machines: probe a
//! network with one honeypot, pair it with a second on a private link,
//! snapshot-check-collect every period, rotate-restore to defeat existence
//! checks, then tear down and move to the next network. [`collection`] is
//! the append-only record store the harvested payloads land in, and
//! [`scenario`]/[`sim`]/[`report`] load a scenario file, run the event
//! loop, and emit a metrics report.
//!
//! Everything is deterministic: a scenario config plus a seed fully
//! determines the run log, the collection database, and the report,
//! byte for byte.

pub mod cloud;
pub mod collection;
pub mod error;
pub mod guest;
pub mod ids;
pub mod introspect;
pub mod orchestrate;
pub mod report;
pub mod scenario;
pub mod sim;
pub mod world;
pub mod worm;

pub use error::{Error, Result};
