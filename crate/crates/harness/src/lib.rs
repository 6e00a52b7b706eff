//! Scenario runner for `homspace-core`.
//!
//! The crate has three layers:
//!
//! * [`gen`] builds model spaces (grids, snowflaked grids, Cantor dust,
//!   random doubling clouds) from a declarative [`gen::SpaceKind`];
//! * [`scenario`] describes a named bundle of checks over one space, one
//!   weight, and optionally one point map, and runs it;
//! * [`report`] renders a finished run as CSV (one row per check) and as
//!   a JSON payload that is byte-stable across reruns once the runtime
//!   stamp is stripped.
//!
//! The `homspace` binary wraps these in a small CLI.

pub mod gen;
pub mod report;
pub mod scenario;
