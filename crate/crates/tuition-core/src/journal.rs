//! Write-ahead journal abstraction.
//!
//! The engine records one line per committed mutation before applying it.
//! What a "line" durably means is up to the sink: the std companion crate
//! appends to a write-ahead log file; tests capture lines in memory; pure
//! in-memory engines drop them.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// The sink refused a record; the mutation must not be applied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JournalError(pub String);

impl fmt::Display for JournalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "journal write failed: {}", self.0)
    }
}

impl core::error::Error for JournalError {}

pub trait Journal {
    fn record(&mut self, line: &str) -> Result<(), JournalError>;
}

/// Discards every record. For engines whose state is allowed to be volatile.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullJournal;

impl Journal for NullJournal {
    fn record(&mut self, _line: &str) -> Result<(), JournalError> {
        Ok(())
    }
}

/// Captures records in order. Used by tests and by replay-equivalence checks.
#[derive(Debug, Default, Clone)]
pub struct MemoryJournal {
    pub lines: Vec<String>,
}

impl Journal for MemoryJournal {
    fn record(&mut self, line: &str) -> Result<(), JournalError> {
        self.lines.push(String::from(line));
        Ok(())
    }
}

/// Fails after a fixed number of records. Lets tests prove that a refused
/// journal write leaves engine state untouched.
#[derive(Debug, Default, Clone)]
pub struct FailingJournal {
    pub accepted: Vec<String>,
    pub fail_after: usize,
}

impl Journal for FailingJournal {
    fn record(&mut self, line: &str) -> Result<(), JournalError> {
        if self.accepted.len() >= self.fail_after {
            return Err(JournalError(String::from("injected journal failure")));
        }
        self.accepted.push(String::from(line));
        Ok(())
    }
}
