//! Deterministic tuition billing and exact-payment core.
//!
//! This crate holds everything that can be computed without touching the
//! outside world: billing arithmetic and eligibility rules, the pipe-delimited
//! wire codec spoken between the bank's virtual-account system (VAS) and the
//! university payment system (UPS), the UPS transaction engine with its
//! idempotent payment/reversal handling, the in-memory table set behind it,
//! a deterministic simulated bank with fault injection, and the
//! reconciliation reports.
//!
//! The crate is `no_std` (alloc required). Durability, file formats, sockets
//! and the operator CLI live in the companion `tuition-ledger` crate. All
//! clocks are injected: nothing in here reads environment time, so every
//! computation is replayable from its inputs.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod engine;
pub mod journal;
pub mod ledger;
pub mod money;
pub mod protocol;
pub mod report;
pub mod sim;
pub mod tables;
pub mod time;

pub use engine::{BillComputeCommand, EngineError, EngineState, UpsEngine};
pub use ledger::{AcademicPeriod, Bill, Paycode, Semester};
pub use money::Money;
pub use time::Timestamp;
