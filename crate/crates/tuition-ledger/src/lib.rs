//! Durable shell around the tuition core: write-ahead log and snapshot
//! persistence, ingestion file formats, the socket service, and the
//! operator CLI.

pub mod cli;
pub mod durable;
pub mod ingest;
pub mod serve;
