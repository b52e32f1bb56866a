//! Library surface of the workbench binary: configuration, the end-to-end
//! run harness, and bundle/report serialization. Exposed as a library so
//! integration tests drive the exact code paths the CLI does.

pub mod config;
pub mod harness;
pub mod report;
