//! The UPS transaction engine.
//!
//! Owns the table set and funnels every mutation through one serialization
//! point: ingest of academic data, tariff replacement, bill computation,
//! fine assessment, exact-payment matching and reversal. Each committed
//! mutation is journaled as one line before it is applied, and the same
//! lines replay through [`UpsEngine::apply_wal_record`] to rebuild identical
//! state after a restart or crash.
//!
//! Statechart: INITIALIZING -> READY, READY <-> COMPUTING_BILLS,
//! READY <-> GENERATING_REPORTS. Bill requests, payments and reversals are
//! accepted in READY and GENERATING_REPORTS only; report generation never
//! blocks the payment path.
//!
//! Payment processing is retry-safe. The dedup identity is
//! (bank_code, transaction_no): the first decision for a given identity is
//! memoized and every resubmission returns it without a second ledger
//! effect. Reversals match on the full identity (bank, transaction number,
//! student, paycode, amount) and fail rather than cancel the wrong payment.
//!
//! Logical time: the engine has no clock. A payment or reversal is recorded
//! at its own `trans_datetime`; bill computations carry their generation and
//! due timestamps in the command. Identical inputs therefore produce
//! byte-identical journals and states.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::journal::{Journal, JournalError, NullJournal};
use crate::ledger::{
    self, AcademicPeriod, Bill, BillingError, CourseRegistration, DegreeLevel, Eligibility,
    FinePolicy, GatedAction, Paycode, Scholarship, Semester, StudentEnrollment, StudentId,
    TariffBook,
};
use crate::money::Money;
use crate::protocol::{
    self, BillRequest, BillResponse, PaymentMessage, PaymentStatus, ProtocolError, ReversalStatus,
    TransactionType, TxId, WireMessage,
};
use crate::tables::{BillInstall, BillKey, StoreError, TableSet};
use crate::time::Timestamp;

// ---------------------------------------------------------------------------
// Statechart
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EngineState {
    Initializing,
    Ready,
    ComputingBills,
    GeneratingReports,
}

impl EngineState {
    pub fn as_str(self) -> &'static str {
        match self {
            EngineState::Initializing => "INITIALIZING",
            EngineState::Ready => "READY",
            EngineState::ComputingBills => "COMPUTING_BILLS",
            EngineState::GeneratingReports => "GENERATING_REPORTS",
        }
    }
}

impl fmt::Display for EngineState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

// ---------------------------------------------------------------------------
// Commands and summaries
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StudentScope {
    All,
    One(StudentId),
}

impl fmt::Display for StudentScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StudentScope::All => f.write_str("ALL"),
            StudentScope::One(id) => write!(f, "{id}"),
        }
    }
}

/// The four paycodes a compute command may generate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComputeTarget {
    Bill1,
    Bill2,
    BillSs,
    DueBill,
}

impl ComputeTarget {
    pub fn paycode(self) -> Paycode {
        match self {
            ComputeTarget::Bill1 => Paycode::Bill1,
            ComputeTarget::Bill2 => Paycode::Bill2,
            ComputeTarget::BillSs => Paycode::BillSs,
            ComputeTarget::DueBill => Paycode::DueBill,
        }
    }

    pub fn from_paycode(paycode: Paycode) -> Option<ComputeTarget> {
        match paycode {
            Paycode::Bill1 => Some(ComputeTarget::Bill1),
            Paycode::Bill2 => Some(ComputeTarget::Bill2),
            Paycode::BillSs => Some(ComputeTarget::BillSs),
            Paycode::DueBill => Some(ComputeTarget::DueBill),
            _ => None,
        }
    }
}

/// One `compute bill` command: generate the target paycode for one student
/// or for every active student of the period.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BillComputeCommand {
    pub target: ComputeTarget,
    pub scope: StudentScope,
    pub period: AcademicPeriod,
    pub generated_at: Timestamp,
    pub due_date: Timestamp,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ComputeSummary {
    pub created: u64,
    pub replaced: u64,
    pub skipped_paid: u64,
    pub skipped_no_source: u64,
}

impl ComputeSummary {
    pub fn generated(&self) -> u64 {
        self.created + self.replaced
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ChangeCounts {
    pub inserted: u64,
    pub updated: u64,
    pub unchanged: u64,
}

impl ChangeCounts {
    fn tally(&mut self, outcome: crate::tables::Upsert) {
        match outcome {
            crate::tables::Upsert::Inserted => self.inserted += 1,
            crate::tables::Upsert::Updated => self.updated += 1,
            crate::tables::Upsert::Unchanged => self.unchanged += 1,
        }
    }

    pub fn changed(&self) -> u64 {
        self.inserted + self.updated
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestSummary {
    pub students: ChangeCounts,
    pub registrations: ChangeCounts,
    pub scholarships: ChangeCounts,
}

impl IngestSummary {
    pub fn changed(&self) -> u64 {
        self.students.changed() + self.registrations.changed() + self.scholarships.changed()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestBatch {
    pub students: Vec<StudentEnrollment>,
    pub registrations: Vec<CourseRegistration>,
    pub scholarships: Vec<Scholarship>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TariffSummary {
    pub general_entries: u64,
    pub course_entries: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FineSummary {
    pub fines_created: u64,
}

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    Student,
    Registration,
    Scholarship,
    Tariff,
}

impl RecordKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RecordKind::Student => "student",
            RecordKind::Registration => "registration",
            RecordKind::Scholarship => "scholarship",
            RecordKind::Tariff => "tariff",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationIssue {
    pub record: RecordKind,
    pub index: usize,
    pub reason: String,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} record {}: {}",
            self.record.as_str(),
            self.index,
            self.reason
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EngineError {
    /// Transactions are accepted in READY and GENERATING_REPORTS only.
    NotReady(EngineState),
    InvalidTransition {
        from: EngineState,
        to: EngineState,
    },
    WrongTransactionType {
        expected: TransactionType,
    },
    MissingAcademicData(StudentId, AcademicPeriod),
    MissingTariffBook(AcademicPeriod),
    Billing(BillingError),
    Validation(Vec<ValidationIssue>),
    Journal(JournalError),
    Protocol(ProtocolError),
    Store(StoreError),
}

impl fmt::Display for EngineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EngineError::NotReady(state) => write!(f, "engine not ready (state {state})"),
            EngineError::InvalidTransition { from, to } => {
                write!(f, "invalid state transition {from} -> {to}")
            }
            EngineError::WrongTransactionType { expected } => {
                write!(f, "wrong transaction type, expected {}", expected.as_str())
            }
            EngineError::MissingAcademicData(student, period) => {
                write!(f, "no academic data for {student} in {period}")
            }
            EngineError::MissingTariffBook(period) => {
                write!(f, "no tariff book loaded for {period}")
            }
            EngineError::Billing(e) => write!(f, "billing: {e}"),
            EngineError::Validation(issues) => {
                write!(f, "{} validation issue(s)", issues.len())?;
                for issue in issues {
                    write!(f, "; {issue}")?;
                }
                Ok(())
            }
            EngineError::Journal(e) => write!(f, "{e}"),
            EngineError::Protocol(e) => write!(f, "protocol: {e}"),
            EngineError::Store(e) => write!(f, "store: {e}"),
        }
    }
}

impl core::error::Error for EngineError {}

impl From<BillingError> for EngineError {
    fn from(e: BillingError) -> EngineError {
        EngineError::Billing(e)
    }
}

impl From<JournalError> for EngineError {
    fn from(e: JournalError) -> EngineError {
        EngineError::Journal(e)
    }
}

impl From<ProtocolError> for EngineError {
    fn from(e: ProtocolError) -> EngineError {
        EngineError::Protocol(e)
    }
}

impl From<StoreError> for EngineError {
    fn from(e: StoreError) -> EngineError {
        EngineError::Store(e)
    }
}

/// A write-ahead record could not be replayed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RecoveryError {
    Malformed {
        line: String,
        reason: String,
    },
    /// The record replays to a different outcome than the one journaled.
    Inconsistent {
        line: String,
        reason: String,
    },
}

impl fmt::Display for RecoveryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecoveryError::Malformed { line, reason } => {
                write!(f, "malformed journal record ({reason}): {line}")
            }
            RecoveryError::Inconsistent { line, reason } => {
                write!(f, "inconsistent journal record ({reason}): {line}")
            }
        }
    }
}

impl core::error::Error for RecoveryError {}

// ---------------------------------------------------------------------------
// Engine
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    Live,
    Replay,
}

pub struct UpsEngine {
    state: EngineState,
    tables: TableSet,
    /// Memoized payment decisions by (bank_code, transaction_no). SUCCESS
    /// entries are durable (they mirror ledger rows); refusals live only for
    /// the process lifetime, which is enough for the triple-send window.
    memo: BTreeMap<TxId, PaymentStatus>,
    journal: Box<dyn Journal>,
}

impl fmt::Debug for UpsEngine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UpsEngine")
            .field("state", &self.state)
            .field("payments", &self.tables.payment_count())
            .finish()
    }
}

impl Default for UpsEngine {
    fn default() -> UpsEngine {
        UpsEngine::new()
    }
}

impl UpsEngine {
    /// A volatile engine: journal lines are dropped.
    pub fn new() -> UpsEngine {
        UpsEngine::with_journal(Box::new(NullJournal))
    }

    pub fn with_journal(journal: Box<dyn Journal>) -> UpsEngine {
        UpsEngine {
            state: EngineState::Initializing,
            tables: TableSet::new(),
            memo: BTreeMap::new(),
            journal,
        }
    }

    /// Rebuild an engine around restored tables (snapshot load). Payment
    /// memoization is reconstructed from the payment table; the engine
    /// starts INITIALIZING so the caller can replay the journal tail.
    pub fn from_tables(tables: TableSet) -> UpsEngine {
        let memo = tables
            .payments_iter()
            .map(|tx| (tx.message.tx_id(), PaymentStatus::Success))
            .collect();
        UpsEngine {
            state: EngineState::Initializing,
            tables,
            memo,
            journal: Box::new(NullJournal),
        }
    }

    /// Swap the journal sink (attach the real write-ahead log after replay).
    pub fn set_journal(&mut self, journal: Box<dyn Journal>) {
        self.journal = journal;
    }

    /// Detached copy with the same tables and memo but a null journal.
    pub fn fork_in_memory(&self) -> UpsEngine {
        UpsEngine {
            state: self.state,
            tables: self.tables.clone(),
            memo: self.memo.clone(),
            journal: Box::new(NullJournal),
        }
    }

    pub fn state(&self) -> EngineState {
        self.state
    }

    pub fn tables(&self) -> &TableSet {
        &self.tables
    }

    // -- statechart ---------------------------------------------------------

    pub fn ready(&mut self) -> Result<(), EngineError> {
        match self.state {
            EngineState::Initializing => {
                self.state = EngineState::Ready;
                Ok(())
            }
            from => Err(EngineError::InvalidTransition {
                from,
                to: EngineState::Ready,
            }),
        }
    }

    pub fn enter_reporting(&mut self) -> Result<(), EngineError> {
        match self.state {
            EngineState::Ready => {
                self.state = EngineState::GeneratingReports;
                Ok(())
            }
            from => Err(EngineError::InvalidTransition {
                from,
                to: EngineState::GeneratingReports,
            }),
        }
    }

    pub fn exit_reporting(&mut self) -> Result<(), EngineError> {
        match self.state {
            EngineState::GeneratingReports => {
                self.state = EngineState::Ready;
                Ok(())
            }
            from => Err(EngineError::InvalidTransition {
                from,
                to: EngineState::Ready,
            }),
        }
    }

    fn require_accepting(&self) -> Result<(), EngineError> {
        match self.state {
            EngineState::Ready | EngineState::GeneratingReports => Ok(()),
            state => Err(EngineError::NotReady(state)),
        }
    }

    fn require_writable(&self) -> Result<(), EngineError> {
        match self.state {
            EngineState::Initializing | EngineState::Ready => Ok(()),
            state => Err(EngineError::NotReady(state)),
        }
    }

    fn journal_line(&mut self, line: &str) -> Result<(), EngineError> {
        self.journal.record(line).map_err(EngineError::Journal)
    }

    // -- get bill -------------------------------------------------------------

    /// Answer a bill request with the student's current unpaid bills.
    /// Read-only: identical consecutive requests produce identical responses.
    pub fn handle_bill_request(&self, req: &BillRequest) -> Result<BillResponse, EngineError> {
        self.require_accepting()?;
        let known = self.tables.is_known_student(&req.student_id);
        let unpaid = if known {
            self.tables.get_unpaid_bills(&req.student_id, None)
        } else {
            Vec::new()
        };
        let bills: Vec<&Bill> = unpaid.iter().map(|r| &r.bill).collect();
        Ok(protocol::build_bill_response(
            &req.student_id,
            &bills,
            known,
        ))
    }

    // -- pay bill -------------------------------------------------------------

    /// Exact-payment matching with at-most-once ledger effect per
    /// (bank_code, transaction_no).
    pub fn handle_payment(&mut self, p: &PaymentMessage) -> Result<PaymentStatus, EngineError> {
        self.payment_inner(p, Mode::Live)
    }

    fn payment_inner(
        &mut self,
        p: &PaymentMessage,
        mode: Mode,
    ) -> Result<PaymentStatus, EngineError> {
        if mode == Mode::Live {
            self.require_accepting()?;
        }
        if p.transaction_type != TransactionType::Payment {
            return Err(EngineError::WrongTransactionType {
                expected: TransactionType::Payment,
            });
        }
        let tx_id = p.tx_id();
        if let Some(&status) = self.memo.get(&tx_id) {
            return Ok(status);
        }

        let matched: Option<BillKey> = if !self.tables.is_known_student(&p.student_id) {
            None
        } else {
            self.tables
                .get_unpaid_bills(&p.student_id, None)
                .iter()
                .find(|r| r.bill.paycode == p.paycode && r.bill.amount == p.amount)
                .map(|r| r.key())
        };

        let status = if let Some(bill_key) = matched {
            if mode == Mode::Live {
                let line = protocol::encode(&WireMessage::Payment(p.clone()))?;
                self.journal_line(&line)?;
            }
            // The payment is recorded at its own transaction datetime, which
            // keeps journal replay byte-exact.
            self.tables
                .commit_payment(p, &bill_key, p.trans_datetime)
                .expect("commit validated against live state");
            PaymentStatus::Success
        } else if !self.tables.is_known_student(&p.student_id) {
            PaymentStatus::WrongAccount
        } else if self.tables.get_unpaid_bills(&p.student_id, None).is_empty() {
            PaymentStatus::BillIsZero
        } else {
            PaymentStatus::WrongAmount
        };

        self.memo.insert(tx_id, status);
        Ok(status)
    }

    // -- reverse bill ----------------------------------------------------------

    /// Cancel the exact payment identified by (bank, transaction number,
    /// student, paycode, amount). Anything less than a full match fails, and
    /// a second identical reversal fails without touching state.
    pub fn handle_reversal(&mut self, r: &PaymentMessage) -> Result<ReversalStatus, EngineError> {
        self.reversal_inner(r, Mode::Live)
    }

    fn reversal_inner(
        &mut self,
        r: &PaymentMessage,
        mode: Mode,
    ) -> Result<ReversalStatus, EngineError> {
        if mode == Mode::Live {
            self.require_accepting()?;
        }
        if r.transaction_type != TransactionType::Reversal {
            return Err(EngineError::WrongTransactionType {
                expected: TransactionType::Reversal,
            });
        }
        let tx_id = r.tx_id();
        let matched = self.tables.payment(&tx_id).is_some_and(|tx| {
            !tx.reversed
                && tx.message.student_id == r.student_id
                && tx.message.paycode == r.paycode
                && tx.message.amount == r.amount
        });
        if !matched {
            return Ok(ReversalStatus::Fail);
        }
        if mode == Mode::Live {
            let line = protocol::encode(&WireMessage::Reversal(r.clone()))?;
            self.journal_line(&line)?;
        }
        self.tables
            .reverse_payment(&tx_id, r.trans_datetime)
            .expect("reversal validated against live state");
        Ok(ReversalStatus::Success)
    }

    // -- update bill-data -------------------------------------------------------

    /// Upsert academic records. The whole batch is validated first; any issue
    /// rejects the batch with nothing applied. Re-ingesting identical data
    /// changes nothing and journals nothing.
    pub fn ingest_academic_data(
        &mut self,
        batch: &IngestBatch,
    ) -> Result<IngestSummary, EngineError> {
        self.require_writable()?;
        let issues = self.validate_batch(batch);
        if !issues.is_empty() {
            return Err(EngineError::Validation(issues));
        }

        let mut summary = IngestSummary::default();
        for student in &batch.students {
            if self.tables.student(student.period, &student.student_id) == Some(student) {
                summary.students.tally(crate::tables::Upsert::Unchanged);
                continue;
            }
            self.journal_line(&wal::student_line(student))?;
            summary
                .students
                .tally(self.tables.upsert_student(student.clone()));
        }
        for reg in &batch.registrations {
            let current = self
                .tables
                .registrations_for(reg.period, &reg.student_id)
                .into_iter()
                .find(|r| r.course_code == reg.course_code);
            if current.as_ref() == Some(reg) {
                summary
                    .registrations
                    .tally(crate::tables::Upsert::Unchanged);
                continue;
            }
            self.journal_line(&wal::registration_line(reg))?;
            summary
                .registrations
                .tally(self.tables.upsert_registration(reg.clone()));
        }
        for scholarship in &batch.scholarships {
            let current = self
                .tables
                .scholarships_for(scholarship.period, &scholarship.student_id)
                .into_iter()
                .find(|s| s.scholarship_code == scholarship.scholarship_code)
                .cloned();
            if current.as_ref() == Some(scholarship) {
                summary.scholarships.tally(crate::tables::Upsert::Unchanged);
                continue;
            }
            self.journal_line(&wal::scholarship_line(scholarship))?;
            summary
                .scholarships
                .tally(self.tables.upsert_scholarship(scholarship.clone()));
        }
        Ok(summary)
    }

    fn validate_batch(&self, batch: &IngestBatch) -> Vec<ValidationIssue> {
        let mut issues = Vec::new();
        let mut batch_students: alloc::collections::BTreeSet<(AcademicPeriod, StudentId)> =
            alloc::collections::BTreeSet::new();

        for (index, student) in batch.students.iter().enumerate() {
            let mut fail = |reason: String| {
                issues.push(ValidationIssue {
                    record: RecordKind::Student,
                    index,
                    reason,
                })
            };
            if !student.period.year_in_range() {
                fail(format!("year {} out of range", student.period.year));
            }
            if !wal::clean_text(&student.student_id.0) {
                fail(format!("bad student_id {:?}", student.student_id.0));
            }
            if !wal::clean_text(&student.name) {
                fail(format!("bad name {:?}", student.name));
            }
            if !batch_students.insert((student.period, student.student_id.clone())) {
                fail(format!(
                    "duplicate student {} in {}",
                    student.student_id, student.period
                ));
            }
        }

        let known = |period: AcademicPeriod, id: &StudentId| {
            batch_students.contains(&(period, id.clone()))
                || self.tables.student(period, id).is_some()
        };

        let mut batch_regs = alloc::collections::BTreeSet::new();
        for (index, reg) in batch.registrations.iter().enumerate() {
            let mut fail = |reason: String| {
                issues.push(ValidationIssue {
                    record: RecordKind::Registration,
                    index,
                    reason,
                })
            };
            if !(ledger::MIN_COURSE_CREDITS..=ledger::MAX_COURSE_CREDITS).contains(&reg.credits) {
                fail(format!("credits {} out of 1..=6", reg.credits));
            }
            if !wal::clean_text(&reg.course_code.0) {
                fail(format!("bad course code {:?}", reg.course_code.0));
            }
            if !known(reg.period, &reg.student_id) {
                fail(format!(
                    "unknown student {} in {}",
                    reg.student_id, reg.period
                ));
            }
            if !batch_regs.insert((reg.period, reg.student_id.clone(), reg.course_code.clone())) {
                fail(format!(
                    "duplicate registration {}/{}",
                    reg.student_id, reg.course_code
                ));
            }
        }

        let mut batch_scholarships = alloc::collections::BTreeSet::new();
        for (index, s) in batch.scholarships.iter().enumerate() {
            let mut fail = |reason: String| {
                issues.push(ValidationIssue {
                    record: RecordKind::Scholarship,
                    index,
                    reason,
                })
            };
            if s.amount.is_negative() {
                fail(format!("negative amount {}", s.amount));
            }
            if !wal::clean_text(&s.scholarship_code) {
                fail(format!("bad scholarship code {:?}", s.scholarship_code));
            }
            if !known(s.period, &s.student_id) {
                fail(format!("unknown student {} in {}", s.student_id, s.period));
            }
            if !batch_scholarships.insert((
                s.period,
                s.student_id.clone(),
                s.scholarship_code.clone(),
            )) {
                fail(format!(
                    "duplicate scholarship {}/{}",
                    s.student_id, s.scholarship_code
                ));
            }
        }
        issues
    }

    // -- update tariff ------------------------------------------------------------

    /// Replace the period's tariff book atomically.
    pub fn update_tariff(
        &mut self,
        period: AcademicPeriod,
        book: TariffBook,
    ) -> Result<TariffSummary, EngineError> {
        self.require_writable()?;
        let mut issues = Vec::new();
        if !period.year_in_range() {
            issues.push(ValidationIssue {
                record: RecordKind::Tariff,
                index: 0,
                reason: format!("year {} out of range", period.year),
            });
        }
        for (id, amount) in &book.general {
            if amount.is_negative() {
                issues.push(ValidationIssue {
                    record: RecordKind::Tariff,
                    index: 0,
                    reason: format!("negative amount {amount} for {id}"),
                });
            }
        }
        for (code, course) in &book.course {
            if !wal::clean_text(&code.0) {
                issues.push(ValidationIssue {
                    record: RecordKind::Tariff,
                    index: 0,
                    reason: format!("bad course code {:?}", code.0),
                });
            }
            for kind in crate::ledger::FeeKind::ALL {
                if let Some(component) = course.component(kind) {
                    if component.amount.is_negative() {
                        issues.push(ValidationIssue {
                            record: RecordKind::Tariff,
                            index: 0,
                            reason: format!("negative {kind} fee for {code}"),
                        });
                    }
                    if !wal::clean_text(&component.code) {
                        issues.push(ValidationIssue {
                            record: RecordKind::Tariff,
                            index: 0,
                            reason: format!("bad {kind} fee code for {code}"),
                        });
                    }
                }
            }
        }
        if !issues.is_empty() {
            return Err(EngineError::Validation(issues));
        }
        let summary = TariffSummary {
            general_entries: book.general.len() as u64,
            course_entries: book.course.len() as u64,
        };
        self.journal_line(&wal::tariffbook_line(period, &book))?;
        self.tables.set_tariffs(period, book);
        Ok(summary)
    }

    // -- compute student bill --------------------------------------------------------

    /// Run one bill-generation command. The plan is computed first (pure,
    /// nothing touched), journaled as a single record, then applied: each
    /// student's unpaid bill of the target paycode is replaced wholesale, so
    /// a reader sees the old bill or the new one, never a half-written mix.
    pub fn run_bill_computation(
        &mut self,
        cmd: &BillComputeCommand,
    ) -> Result<ComputeSummary, EngineError> {
        match self.state {
            EngineState::Ready => {}
            state => return Err(EngineError::NotReady(state)),
        }
        self.state = EngineState::ComputingBills;
        let result = self.compute_inner(cmd, Mode::Live);
        self.state = EngineState::Ready;
        result
    }

    fn compute_inner(
        &mut self,
        cmd: &BillComputeCommand,
        mode: Mode,
    ) -> Result<ComputeSummary, EngineError> {
        let mut summary = ComputeSummary::default();
        let plans = self.plan_computation(cmd, &mut summary)?;
        if mode == Mode::Live {
            self.journal_line(&wal::billcmd_line(cmd))?;
        }
        for plan in plans {
            for key in &plan.supersede_first {
                self.tables.supersede_bill(key)?;
            }
            match self.tables.install_bill(plan.bill)? {
                BillInstall::Created(_) => summary.created += 1,
                BillInstall::Replaced(_) => summary.replaced += 1,
                BillInstall::SkippedPaid => summary.skipped_paid += 1,
            }
        }
        Ok(summary)
    }

    fn plan_computation(
        &self,
        cmd: &BillComputeCommand,
        summary: &mut ComputeSummary,
    ) -> Result<Vec<PlannedInstall>, EngineError> {
        let students: Vec<StudentId> = match (&cmd.scope, cmd.target) {
            (StudentScope::One(id), _) => alloc::vec![id.clone()],
            (StudentScope::All, ComputeTarget::DueBill) => {
                self.tables.students_with_unpaid_before(cmd.period)
            }
            (StudentScope::All, _) => self
                .tables
                .students_in_period(cmd.period)
                .into_iter()
                .map(|e| e.student_id.clone())
                .collect(),
        };

        let mut plans = Vec::new();
        for student_id in students {
            match cmd.target {
                ComputeTarget::Bill1 | ComputeTarget::Bill2 | ComputeTarget::BillSs => {
                    if let Some(plan) = self.plan_regular_bill(cmd, &student_id, summary)? {
                        plans.push(plan);
                    }
                }
                ComputeTarget::DueBill => {
                    if let Some(plan) = self.plan_due_bill(cmd, &student_id, summary)? {
                        plans.push(plan);
                    }
                }
            }
        }
        Ok(plans)
    }

    fn plan_regular_bill(
        &self,
        cmd: &BillComputeCommand,
        student_id: &StudentId,
        summary: &mut ComputeSummary,
    ) -> Result<Option<PlannedInstall>, EngineError> {
        let paycode = cmd.target.paycode();
        if let Some(live) = self.tables.live_bill(cmd.period, student_id, paycode) {
            if live.bill.paid_status() {
                summary.skipped_paid += 1;
                return Ok(None);
            }
        }
        let enrollment = self
            .tables
            .student(cmd.period, student_id)
            .ok_or_else(|| EngineError::MissingAcademicData(student_id.clone(), cmd.period))?;
        let tariffs = self
            .tables
            .tariffs(cmd.period)
            .ok_or(EngineError::MissingTariffBook(cmd.period))?;
        let bill = match cmd.target {
            ComputeTarget::Bill1 => {
                ledger::compute_bill1(enrollment, tariffs, cmd.generated_at, cmd.due_date)?
            }
            ComputeTarget::Bill2 => {
                let registrations = self.tables.registrations_for(cmd.period, student_id);
                let total =
                    ledger::compute_total_semester_bill(enrollment, &registrations, tariffs)?;
                let bill1_amount = self
                    .tables
                    .live_bill(cmd.period, student_id, Paycode::Bill1)
                    .map(|r| r.bill.amount)
                    .unwrap_or(Money::ZERO);
                let scholarship_total = Money::checked_sum(
                    self.tables
                        .scholarships_for(cmd.period, student_id)
                        .iter()
                        .map(|s| s.amount),
                )
                .map_err(BillingError::from)?;
                ledger::compute_bill2(
                    enrollment,
                    total,
                    bill1_amount,
                    scholarship_total,
                    cmd.generated_at,
                    cmd.due_date,
                )?
            }
            ComputeTarget::BillSs => {
                let registrations = self.tables.registrations_for(cmd.period, student_id);
                ledger::compute_bill3(
                    enrollment,
                    &registrations,
                    tariffs,
                    cmd.generated_at,
                    cmd.due_date,
                )?
            }
            ComputeTarget::DueBill => unreachable!("handled by plan_due_bill"),
        };
        Ok(Some(PlannedInstall {
            bill,
            supersede_first: Vec::new(),
        }))
    }

    /// Roll every live unpaid bill from periods before the target (plus a
    /// standing due-bill in the target period, when re-rolling) into one
    /// due-bill; the sources are tombstoned so nothing is double-counted.
    fn plan_due_bill(
        &self,
        cmd: &BillComputeCommand,
        student_id: &StudentId,
        summary: &mut ComputeSummary,
    ) -> Result<Option<PlannedInstall>, EngineError> {
        if let Some(live) = self
            .tables
            .live_bill(cmd.period, student_id, Paycode::DueBill)
        {
            if live.bill.paid_status() {
                summary.skipped_paid += 1;
                return Ok(None);
            }
        }
        let unpaid = self.tables.get_unpaid_bills(student_id, None);
        let sources: Vec<_> = unpaid
            .iter()
            .filter(|r| {
                r.bill.period < cmd.period
                    || (r.bill.period == cmd.period && r.bill.paycode == Paycode::DueBill)
            })
            .collect();
        if sources.is_empty() {
            summary.skipped_no_source += 1;
            return Ok(None);
        }
        let bills: Vec<&Bill> = sources.iter().map(|r| &r.bill).collect();
        let bill = ledger::roll_due_bill(&bills, cmd.period, cmd.generated_at, cmd.due_date)?;
        Ok(Some(PlannedInstall {
            bill,
            supersede_first: sources.iter().map(|r| r.key()).collect(),
        }))
    }

    // -- fines ---------------------------------------------------------------------

    /// Assess fines for every overdue unpaid bill of the period under the
    /// given policy. Idempotent at a fixed `now`.
    pub fn apply_fines(
        &mut self,
        period: AcademicPeriod,
        policy: FinePolicy,
        now: Timestamp,
    ) -> Result<FineSummary, EngineError> {
        self.require_writable()?;
        self.fines_inner(period, policy, now, Mode::Live)
    }

    fn fines_inner(
        &mut self,
        period: AcademicPeriod,
        policy: FinePolicy,
        now: Timestamp,
        mode: Mode,
    ) -> Result<FineSummary, EngineError> {
        let mut planned: Vec<Bill> = Vec::new();
        for student_id in self.tables.students_with_unpaid_in(period) {
            let bills: Vec<Bill> = self
                .tables
                .live_bills_for(period, &student_id)
                .into_iter()
                .map(|r| r.bill.clone())
                .collect();
            planned.extend(ledger::apply_fines(&bills, &policy, now)?);
        }
        if mode == Mode::Live {
            self.journal_line(&wal::finecmd_line(period, policy, now))?;
        }
        let mut summary = FineSummary::default();
        for fine in planned {
            self.tables.install_bill(fine)?;
            summary.fines_created += 1;
        }
        Ok(summary)
    }

    // -- eligibility -----------------------------------------------------------------

    /// Gate check against the student's live bills of the period.
    pub fn check_eligibility(
        &self,
        student_id: &StudentId,
        period: AcademicPeriod,
        action: GatedAction,
    ) -> Result<Eligibility, EngineError> {
        let enrollment = self
            .tables
            .student(period, student_id)
            .ok_or_else(|| EngineError::MissingAcademicData(student_id.clone(), period))?;
        let bills: Vec<Bill> = self
            .tables
            .live_bills_for(period, student_id)
            .into_iter()
            .map(|r| r.bill.clone())
            .collect();
        Ok(ledger::check_eligibility(
            action,
            period,
            &bills,
            enrollment.dispensation,
        ))
    }

    // -- recovery ----------------------------------------------------------------------

    /// Re-apply one journal record. Records replay in journal order against
    /// an INITIALIZING engine; the outcome must match what was journaled.
    pub fn apply_wal_record(&mut self, line: &str) -> Result<(), RecoveryError> {
        let malformed = |reason: &str| RecoveryError::Malformed {
            line: line.to_string(),
            reason: reason.to_string(),
        };
        let kind = line.split('|').next().unwrap_or("");
        match kind {
            protocol::KIND_PAYMENT => {
                let WireMessage::Payment(p) =
                    protocol::decode(line).map_err(|e| malformed(&format!("{e}")))?
                else {
                    return Err(malformed("not a payment"));
                };
                match self.payment_inner(&p, Mode::Replay) {
                    Ok(PaymentStatus::Success) => Ok(()),
                    Ok(status) => Err(RecoveryError::Inconsistent {
                        line: line.to_string(),
                        reason: format!("journaled payment replays to {status}"),
                    }),
                    Err(e) => Err(RecoveryError::Inconsistent {
                        line: line.to_string(),
                        reason: format!("{e}"),
                    }),
                }
            }
            protocol::KIND_REVERSAL => {
                let WireMessage::Reversal(r) =
                    protocol::decode(line).map_err(|e| malformed(&format!("{e}")))?
                else {
                    return Err(malformed("not a reversal"));
                };
                match self.reversal_inner(&r, Mode::Replay) {
                    Ok(ReversalStatus::Success) => Ok(()),
                    Ok(ReversalStatus::Fail) => Err(RecoveryError::Inconsistent {
                        line: line.to_string(),
                        reason: "journaled reversal replays to FAIL".to_string(),
                    }),
                    Err(e) => Err(RecoveryError::Inconsistent {
                        line: line.to_string(),
                        reason: format!("{e}"),
                    }),
                }
            }
            wal::KIND_STUDENT => {
                let student = wal::parse_student_line(line).map_err(|r| malformed(&r))?;
                self.tables.upsert_student(student);
                Ok(())
            }
            wal::KIND_REGISTRATION => {
                let reg = wal::parse_registration_line(line).map_err(|r| malformed(&r))?;
                self.tables.upsert_registration(reg);
                Ok(())
            }
            wal::KIND_SCHOLARSHIP => {
                let s = wal::parse_scholarship_line(line).map_err(|r| malformed(&r))?;
                self.tables.upsert_scholarship(s);
                Ok(())
            }
            wal::KIND_TARIFFBOOK => {
                let (period, book) = wal::parse_tariffbook_line(line).map_err(|r| malformed(&r))?;
                self.tables.set_tariffs(period, book);
                Ok(())
            }
            wal::KIND_BILLCMD => {
                let cmd = wal::parse_billcmd_line(line).map_err(|r| malformed(&r))?;
                self.compute_inner(&cmd, Mode::Replay)
                    .map(|_| ())
                    .map_err(|e| RecoveryError::Inconsistent {
                        line: line.to_string(),
                        reason: format!("{e}"),
                    })
            }
            wal::KIND_FINECMD => {
                let (period, policy, now) =
                    wal::parse_finecmd_line(line).map_err(|r| malformed(&r))?;
                self.fines_inner(period, policy, now, Mode::Replay)
                    .map(|_| ())
                    .map_err(|e| RecoveryError::Inconsistent {
                        line: line.to_string(),
                        reason: format!("{e}"),
                    })
            }
            other => Err(malformed(&format!("unknown record kind {other:?}"))),
        }
    }
}

struct PlannedInstall {
    bill: Bill,
    supersede_first: Vec<BillKey>,
}

// ---------------------------------------------------------------------------
// Wire dispatch
// ---------------------------------------------------------------------------

/// Serve one inbound wire line: bill requests, payments and reversals get
/// their protocol responses; anything else gets an `ERR|<token>` line. This
/// is the single dispatch path shared by the in-process transport and the
/// socket server.
pub fn dispatch_line(engine: &mut UpsEngine, line: &str) -> String {
    let reply =
        |msg: WireMessage| protocol::encode(&msg).unwrap_or_else(|_| String::from("ERR|ENCODE"));
    match protocol::decode(line) {
        Ok(WireMessage::BillRequest(req)) => match engine.handle_bill_request(&req) {
            Ok(resp) => reply(WireMessage::BillResponse(resp)),
            Err(e) => err_line(&e),
        },
        Ok(WireMessage::Payment(p)) => match engine.handle_payment(&p) {
            Ok(status) => reply(WireMessage::PaymentStatus(status)),
            Err(e) => err_line(&e),
        },
        Ok(WireMessage::Reversal(r)) => match engine.handle_reversal(&r) {
            Ok(status) => reply(WireMessage::ReversalStatus(status)),
            Err(e) => err_line(&e),
        },
        Ok(_) => String::from("ERR|UNEXPECTED_KIND"),
        Err(e) => format!("ERR|{}", protocol_token(&e)),
    }
}

fn err_line(e: &EngineError) -> String {
    let token = match e {
        EngineError::NotReady(_) => "NOT_READY",
        EngineError::WrongTransactionType { .. } => "WRONG_TYPE",
        EngineError::Journal(_) => "JOURNAL",
        _ => "INTERNAL",
    };
    format!("ERR|{token}")
}

fn protocol_token(e: &ProtocolError) -> &'static str {
    match e {
        ProtocolError::MalformedLine => "MALFORMED",
        ProtocolError::UnknownKind(_) => "UNKNOWN_KIND",
        ProtocolError::InvalidEnum { .. } => "INVALID_ENUM",
        ProtocolError::NonNumericAmount(_) => "BAD_AMOUNT",
        ProtocolError::InvalidAmount(_) => "BAD_AMOUNT",
        ProtocolError::InvalidTimestamp(_) => "BAD_TIMESTAMP",
        ProtocolError::InvalidField { .. } => "BAD_FIELD",
        ProtocolError::InvalidUtf8 => "BAD_UTF8",
    }
}

// ---------------------------------------------------------------------------
// Journal record formats
// ---------------------------------------------------------------------------

/// Line formats for the non-protocol journal records. Payments and
/// reversals are journaled as their wire lines verbatim; the records here
/// cover academic data, tariff books, and the two replayable commands.
pub mod wal {
    use super::*;

    pub const KIND_STUDENT: &str = "STUDENT";
    pub const KIND_REGISTRATION: &str = "COURSEREG";
    pub const KIND_SCHOLARSHIP: &str = "SCHOLARSHIP";
    pub const KIND_TARIFFBOOK: &str = "TARIFFBOOK";
    pub const KIND_BILLCMD: &str = "BILLCMD";
    pub const KIND_FINECMD: &str = "FINECMD";

    /// Free-text fields must be non-empty and delimiter-free, the same rule
    /// the wire codec enforces.
    pub fn clean_text(s: &str) -> bool {
        !s.is_empty()
            && !s
                .chars()
                .any(|c| matches!(c, '|' | ',' | ':' | '\n' | '\r'))
    }

    pub fn yn(b: bool) -> &'static str {
        if b {
            "YES"
        } else {
            "NO"
        }
    }

    pub fn parse_yn(s: &str) -> Option<bool> {
        match s {
            "YES" => Some(true),
            "NO" => Some(false),
            _ => None,
        }
    }

    pub fn student_line(e: &StudentEnrollment) -> String {
        format!(
            "{KIND_STUDENT}|{}|{}|{}|{}|{}|{}|{}|{}",
            e.period.year,
            e.period.semester.code(),
            e.student_id,
            e.name,
            e.degree_level,
            yn(e.pay_credits),
            e.bill1_credits,
            yn(e.dispensation),
        )
    }

    pub fn parse_student_line(line: &str) -> Result<StudentEnrollment, String> {
        let f: Vec<&str> = line.split('|').collect();
        if f.len() != 9 {
            return Err(format!("want 9 fields, got {}", f.len()));
        }
        Ok(StudentEnrollment {
            period: parse_period(f[1], f[2])?,
            student_id: StudentId(f[3].to_string()),
            name: f[4].to_string(),
            degree_level: DegreeLevel::parse(f[5]).ok_or_else(|| format!("bad degree {}", f[5]))?,
            pay_credits: parse_yn(f[6]).ok_or_else(|| format!("bad pay_credits {}", f[6]))?,
            bill1_credits: f[7].parse().map_err(|_| format!("bad credits {}", f[7]))?,
            dispensation: parse_yn(f[8]).ok_or_else(|| format!("bad dispensation {}", f[8]))?,
        })
    }

    pub fn registration_line(r: &CourseRegistration) -> String {
        format!(
            "{KIND_REGISTRATION}|{}|{}|{}|{}|{}|{}|{}|{}|{}|{}",
            r.period.year,
            r.period.semester.code(),
            r.student_id,
            r.course_code,
            r.credits,
            yn(r.status_lab),
            yn(r.status_studio),
            yn(r.status_assist),
            yn(r.status_tutor),
            r.trans_datetime.wire(),
        )
    }

    pub fn parse_registration_line(line: &str) -> Result<CourseRegistration, String> {
        let f: Vec<&str> = line.split('|').collect();
        if f.len() != 11 {
            return Err(format!("want 11 fields, got {}", f.len()));
        }
        Ok(CourseRegistration {
            period: parse_period(f[1], f[2])?,
            student_id: StudentId(f[3].to_string()),
            course_code: crate::ledger::CourseCode(f[4].to_string()),
            credits: f[5].parse().map_err(|_| format!("bad credits {}", f[5]))?,
            status_lab: parse_yn(f[6]).ok_or("bad status_lab")?,
            status_studio: parse_yn(f[7]).ok_or("bad status_studio")?,
            status_assist: parse_yn(f[8]).ok_or("bad status_assist")?,
            status_tutor: parse_yn(f[9]).ok_or("bad status_tutor")?,
            trans_datetime: Timestamp::parse_wire(f[10]).map_err(|e| format!("{e}"))?,
        })
    }

    pub fn scholarship_line(s: &Scholarship) -> String {
        format!(
            "{KIND_SCHOLARSHIP}|{}|{}|{}|{}|{}",
            s.period.year,
            s.period.semester.code(),
            s.student_id,
            s.scholarship_code,
            s.amount,
        )
    }

    pub fn parse_scholarship_line(line: &str) -> Result<Scholarship, String> {
        let f: Vec<&str> = line.split('|').collect();
        if f.len() != 6 {
            return Err(format!("want 6 fields, got {}", f.len()));
        }
        Ok(Scholarship {
            period: parse_period(f[1], f[2])?,
            student_id: StudentId(f[3].to_string()),
            scholarship_code: f[4].to_string(),
            amount: Money::new(f[5].parse().map_err(|_| format!("bad amount {}", f[5]))?),
        })
    }

    pub fn tariffbook_line(period: AcademicPeriod, book: &TariffBook) -> String {
        let general: Vec<String> = book
            .general
            .iter()
            .map(|(id, amount)| format!("{id}:{amount}"))
            .collect();
        let component = |c: Option<&crate::ledger::FeeComponent>| match c {
            Some(f) => format!("{}:{}", f.code, f.amount),
            None => String::from(":"),
        };
        let courses: Vec<String> = book
            .course
            .iter()
            .map(|(code, course)| {
                format!(
                    "{code}:{}:{}:{}:{}",
                    component(course.lab.as_ref()),
                    component(course.studio.as_ref()),
                    component(course.assist.as_ref()),
                    component(course.tutor.as_ref()),
                )
            })
            .collect();
        format!(
            "{KIND_TARIFFBOOK}|{}|{}|{}|{}",
            period.year,
            period.semester.code(),
            general.join(","),
            courses.join(","),
        )
    }

    pub fn parse_tariffbook_line(line: &str) -> Result<(AcademicPeriod, TariffBook), String> {
        let f: Vec<&str> = line.split('|').collect();
        if f.len() != 5 {
            return Err(format!("want 5 fields, got {}", f.len()));
        }
        let period = parse_period(f[1], f[2])?;
        let mut book = TariffBook::default();
        if !f[3].is_empty() {
            for pair in f[3].split(',') {
                let (id, amount) = pair.split_once(':').ok_or("bad general tariff pair")?;
                let id = crate::ledger::TariffId::parse(id)
                    .ok_or_else(|| format!("bad tariff id {id}"))?;
                let amount =
                    Money::new(amount.parse().map_err(|_| format!("bad amount {amount}"))?);
                book.general.insert(id, amount);
            }
        }
        if !f[4].is_empty() {
            for entry in f[4].split(',') {
                let parts: Vec<&str> = entry.split(':').collect();
                if parts.len() != 9 {
                    return Err(format!(
                        "course entry wants 9 segments, got {}",
                        parts.len()
                    ));
                }
                let slot = |code: &str,
                            amount: &str|
                 -> Result<Option<crate::ledger::FeeComponent>, String> {
                    match (code.is_empty(), amount.is_empty()) {
                        (true, true) => Ok(None),
                        (false, false) => Ok(Some(crate::ledger::FeeComponent {
                            code: code.to_string(),
                            amount: Money::new(
                                amount
                                    .parse()
                                    .map_err(|_| format!("bad fee amount {amount}"))?,
                            ),
                        })),
                        _ => Err(String::from("half-empty fee component")),
                    }
                };
                book.course.insert(
                    crate::ledger::CourseCode(parts[0].to_string()),
                    crate::ledger::CourseTariff {
                        lab: slot(parts[1], parts[2])?,
                        studio: slot(parts[3], parts[4])?,
                        assist: slot(parts[5], parts[6])?,
                        tutor: slot(parts[7], parts[8])?,
                    },
                );
            }
        }
        Ok((period, book))
    }

    pub fn billcmd_line(cmd: &BillComputeCommand) -> String {
        format!(
            "{KIND_BILLCMD}|{}|{}|{}|{}|{}|{}",
            cmd.target.paycode(),
            cmd.scope,
            cmd.period.year,
            cmd.period.semester.code(),
            cmd.generated_at.wire(),
            cmd.due_date.wire(),
        )
    }

    pub fn parse_billcmd_line(line: &str) -> Result<BillComputeCommand, String> {
        let f: Vec<&str> = line.split('|').collect();
        if f.len() != 7 {
            return Err(format!("want 7 fields, got {}", f.len()));
        }
        let paycode = Paycode::parse(f[1]).ok_or_else(|| format!("bad paycode {}", f[1]))?;
        let target = ComputeTarget::from_paycode(paycode)
            .ok_or_else(|| format!("paycode {paycode} is not a compute target"))?;
        Ok(BillComputeCommand {
            target,
            scope: if f[2] == "ALL" {
                StudentScope::All
            } else {
                StudentScope::One(StudentId(f[2].to_string()))
            },
            period: parse_period(f[3], f[4])?,
            generated_at: Timestamp::parse_wire(f[5]).map_err(|e| format!("{e}"))?,
            due_date: Timestamp::parse_wire(f[6]).map_err(|e| format!("{e}"))?,
        })
    }

    pub fn finecmd_line(period: AcademicPeriod, policy: FinePolicy, now: Timestamp) -> String {
        let policy = match policy {
            FinePolicy::Flat(amount) => format!("FLAT:{amount}"),
            FinePolicy::PercentBp(bp) => format!("PERCENT:{bp}"),
        };
        format!(
            "{KIND_FINECMD}|{}|{}|{}|{}",
            period.year,
            period.semester.code(),
            policy,
            now.wire(),
        )
    }

    pub fn parse_finecmd_line(
        line: &str,
    ) -> Result<(AcademicPeriod, FinePolicy, Timestamp), String> {
        let f: Vec<&str> = line.split('|').collect();
        if f.len() != 5 {
            return Err(format!("want 5 fields, got {}", f.len()));
        }
        let period = parse_period(f[1], f[2])?;
        let (mode, param) = f[3].split_once(':').ok_or("bad policy")?;
        let policy = match mode {
            "FLAT" => FinePolicy::Flat(Money::new(
                param
                    .parse()
                    .map_err(|_| format!("bad flat amount {param}"))?,
            )),
            "PERCENT" => {
                FinePolicy::PercentBp(param.parse().map_err(|_| format!("bad percent {param}"))?)
            }
            other => return Err(format!("bad fine mode {other}")),
        };
        let now = Timestamp::parse_wire(f[4]).map_err(|e| format!("{e}"))?;
        Ok((period, policy, now))
    }

    fn parse_period(year: &str, sem: &str) -> Result<AcademicPeriod, String> {
        let year: u16 = year.parse().map_err(|_| format!("bad year {year}"))?;
        let semester = Semester::parse(sem).ok_or_else(|| format!("bad semester {sem}"))?;
        Ok(AcademicPeriod::new(year, semester))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::journal::FailingJournal;
    use crate::ledger::testutil::{period, ts};
    use crate::ledger::CourseCode;
    use crate::protocol::Channel;
    use alloc::vec;

    fn p2010_1() -> AcademicPeriod {
        period(2010, Semester::Regular1)
    }

    fn student(id: &str, level: DegreeLevel) -> StudentEnrollment {
        StudentEnrollment {
            period: p2010_1(),
            student_id: StudentId::from(id),
            name: format!("Student {id}"),
            degree_level: level,
            pay_credits: true,
            bill1_credits: level.default_bill1_credits(),
            dispensation: false,
        }
    }

    fn base_tariffs() -> TariffBook {
        crate::ledger::testutil::tariffs(1_000_000, 150_000)
    }

    /// Engine with one S1 student and tariffs loaded, READY.
    fn engine_with_student() -> UpsEngine {
        let mut engine = UpsEngine::new();
        engine
            .ingest_academic_data(&IngestBatch {
                students: vec![student("2016730001", DegreeLevel::S1)],
                ..IngestBatch::default()
            })
            .unwrap();
        engine.update_tariff(p2010_1(), base_tariffs()).unwrap();
        engine.ready().unwrap();
        engine
    }

    fn compute_bill1_cmd() -> BillComputeCommand {
        BillComputeCommand {
            target: ComputeTarget::Bill1,
            scope: StudentScope::All,
            period: p2010_1(),
            generated_at: ts("20100101000000"),
            due_date: ts("20100201000000"),
        }
    }

    fn payment(student: &str, paycode: Paycode, amount: i64, txno: &str) -> PaymentMessage {
        PaymentMessage {
            transaction_type: TransactionType::Payment,
            student_id: StudentId::from(student),
            paycode,
            amount: Money::new(amount),
            ccy_code: String::from("IDR"),
            bank_code: String::from("014"),
            transaction_no: String::from(txno),
            trans_datetime: ts("20100216100000"),
            del_channel: Channel::Atm,
            institution_code: String::from("UNPAR"),
        }
    }

    fn reversal_of(p: &PaymentMessage) -> PaymentMessage {
        PaymentMessage {
            transaction_type: TransactionType::Reversal,
            trans_datetime: p.trans_datetime.add_millis(60_000),
            ..p.clone()
        }
    }

    fn bill_request(student: &str, txno: &str) -> BillRequest {
        BillRequest {
            student_id: StudentId::from(student),
            transaction_no: String::from(txno),
            bank_code: String::from("014"),
            trans_datetime: ts("20100215093000"),
            del_channel: Channel::Atm,
            institution_code: String::from("UNPAR"),
        }
    }

    #[test]
    fn statechart_transitions() {
        let mut engine = UpsEngine::new();
        assert_eq!(engine.state(), EngineState::Initializing);
        assert!(matches!(
            engine.enter_reporting(),
            Err(EngineError::InvalidTransition { .. })
        ));
        engine.ready().unwrap();
        assert_eq!(engine.state(), EngineState::Ready);
        assert!(matches!(
            engine.ready(),
            Err(EngineError::InvalidTransition { .. })
        ));
        engine.enter_reporting().unwrap();
        assert_eq!(engine.state(), EngineState::GeneratingReports);
        engine.exit_reporting().unwrap();
        assert_eq!(engine.state(), EngineState::Ready);
    }

    #[test]
    fn requests_rejected_while_initializing() {
        let mut engine = UpsEngine::new();
        assert!(matches!(
            engine.handle_bill_request(&bill_request("x", "TX1")),
            Err(EngineError::NotReady(EngineState::Initializing))
        ));
        assert!(matches!(
            engine.handle_payment(&payment("x", Paycode::Bill1, 100, "TX1")),
            Err(EngineError::NotReady(EngineState::Initializing))
        ));
    }

    #[test]
    fn payments_accepted_while_reporting() {
        let mut engine = engine_with_student();
        engine.run_bill_computation(&compute_bill1_cmd()).unwrap();
        engine.enter_reporting().unwrap();
        let status = engine
            .handle_payment(&payment("2016730001", Paycode::Bill1, 2_500_000, "TX1"))
            .unwrap();
        assert_eq!(status, PaymentStatus::Success);
        engine.exit_reporting().unwrap();
    }

    #[test]
    fn bill_request_projects_unpaid_bills() {
        let mut engine = engine_with_student();
        engine.run_bill_computation(&compute_bill1_cmd()).unwrap();
        let resp = engine
            .handle_bill_request(&bill_request("2016730001", "TX1"))
            .unwrap();
        assert_eq!(resp.items.len(), 1);
        assert_eq!(resp.items[0].amount, Money::new(2_500_000));
    }

    #[test]
    fn triple_bill_request_is_byte_identical() {
        let mut engine = engine_with_student();
        engine.run_bill_computation(&compute_bill1_cmd()).unwrap();
        let req = bill_request("2016730001", "TX1");
        let lines: Vec<String> = (0..3)
            .map(|_| {
                let resp = engine.handle_bill_request(&req).unwrap();
                protocol::encode(&WireMessage::BillResponse(resp)).unwrap()
            })
            .collect();
        assert_eq!(lines[0], lines[1]);
        assert_eq!(lines[1], lines[2]);
    }

    #[test]
    fn unknown_student_gets_code_01_and_wrong_account() {
        let mut engine = engine_with_student();
        let resp = engine
            .handle_bill_request(&bill_request("ghost", "TX1"))
            .unwrap();
        assert_eq!(resp.response_code, protocol::ResponseCode::UnknownStudent);
        assert!(resp.items.is_empty());
        let status = engine
            .handle_payment(&payment("ghost", Paycode::Bill1, 100, "TX2"))
            .unwrap();
        assert_eq!(status, PaymentStatus::WrongAccount);
    }

    #[test]
    fn exact_payment_matrix() {
        let mut engine = engine_with_student();
        engine.run_bill_computation(&compute_bill1_cmd()).unwrap();

        // Wrong amount refused, nothing recorded.
        let status = engine
            .handle_payment(&payment("2016730001", Paycode::Bill1, 2_000_000, "TX1"))
            .unwrap();
        assert_eq!(status, PaymentStatus::WrongAmount);
        assert_eq!(engine.tables().payment_count(), 0);

        // Exact amount accepted.
        let status = engine
            .handle_payment(&payment("2016730001", Paycode::Bill1, 2_500_000, "TX2"))
            .unwrap();
        assert_eq!(status, PaymentStatus::Success);
        assert_eq!(engine.tables().payment_count(), 1);

        // Everything paid: BILL_IS_ZERO.
        let status = engine
            .handle_payment(&payment("2016730001", Paycode::Bill1, 2_500_000, "TX3"))
            .unwrap();
        assert_eq!(status, PaymentStatus::BillIsZero);
    }

    #[test]
    fn duplicate_payment_returns_memoized_status_once_recorded() {
        let mut engine = engine_with_student();
        engine.run_bill_computation(&compute_bill1_cmd()).unwrap();

        // Refusals are memoized while the bill is still open.
        let bad = payment("2016730001", Paycode::Bill1, 1, "TX9");
        assert_eq!(
            engine.handle_payment(&bad).unwrap(),
            PaymentStatus::WrongAmount
        );
        assert_eq!(
            engine.handle_payment(&bad).unwrap(),
            PaymentStatus::WrongAmount
        );

        let pay = payment("2016730001", Paycode::Bill1, 2_500_000, "TX1");
        for _ in 0..3 {
            assert_eq!(engine.handle_payment(&pay).unwrap(), PaymentStatus::Success);
        }
        assert_eq!(engine.tables().payment_count(), 1);

        // The memoized refusal survives the bill being paid off.
        assert_eq!(
            engine.handle_payment(&bad).unwrap(),
            PaymentStatus::WrongAmount
        );
    }

    #[test]
    fn reversal_restores_bill_and_is_single_shot() {
        let mut engine = engine_with_student();
        engine.run_bill_computation(&compute_bill1_cmd()).unwrap();
        let pay = payment("2016730001", Paycode::Bill1, 2_500_000, "TX1");
        engine.handle_payment(&pay).unwrap();

        let rev = reversal_of(&pay);
        assert_eq!(
            engine.handle_reversal(&rev).unwrap(),
            ReversalStatus::Success
        );
        let unpaid = engine
            .tables()
            .get_unpaid_bills(&StudentId::from("2016730001"), None);
        assert_eq!(unpaid.len(), 1);
        assert!(engine.tables().payment(&pay.tx_id()).unwrap().reversed);

        // Second identical reversal: FAIL, state unchanged.
        assert_eq!(engine.handle_reversal(&rev).unwrap(), ReversalStatus::Fail);
        assert_eq!(
            engine
                .tables()
                .get_unpaid_bills(&StudentId::from("2016730001"), None)
                .len(),
            1
        );
    }

    #[test]
    fn reversal_requires_full_identity_match() {
        let mut engine = engine_with_student();
        engine.run_bill_computation(&compute_bill1_cmd()).unwrap();
        let pay = payment("2016730001", Paycode::Bill1, 2_500_000, "TX1");
        engine.handle_payment(&pay).unwrap();

        let mut wrong_amount = reversal_of(&pay);
        wrong_amount.amount = Money::new(2_000_000);
        assert_eq!(
            engine.handle_reversal(&wrong_amount).unwrap(),
            ReversalStatus::Fail
        );

        let mut wrong_tx = reversal_of(&pay);
        wrong_tx.transaction_no = String::from("TX2");
        assert_eq!(
            engine.handle_reversal(&wrong_tx).unwrap(),
            ReversalStatus::Fail
        );

        assert!(!engine.tables().payment(&pay.tx_id()).unwrap().reversed);
    }

    #[test]
    fn reversal_with_no_payment_fails() {
        let mut engine = engine_with_student();
        let rev = reversal_of(&payment("2016730001", Paycode::Bill1, 100, "TXNONE"));
        assert_eq!(engine.handle_reversal(&rev).unwrap(), ReversalStatus::Fail);
    }

    #[test]
    fn ingest_is_idempotent_and_validated() {
        let mut engine = UpsEngine::new();
        let batch = IngestBatch {
            students: vec![
                student("a", DegreeLevel::S1),
                student("b", DegreeLevel::S2),
                student("c", DegreeLevel::S3),
            ],
            ..IngestBatch::default()
        };
        let summary = engine.ingest_academic_data(&batch).unwrap();
        assert_eq!(summary.students.inserted, 3);

        let again = engine.ingest_academic_data(&batch).unwrap();
        assert_eq!(again.changed(), 0);
        assert_eq!(again.students.unchanged, 3);

        // Registration for a student nobody knows.
        let bad = IngestBatch {
            registrations: vec![CourseRegistration {
                period: p2010_1(),
                student_id: StudentId::from("ghost"),
                course_code: CourseCode::from("IF101"),
                credits: 3,
                status_lab: false,
                status_studio: false,
                status_assist: false,
                status_tutor: false,
                trans_datetime: ts("20100210120000"),
            }],
            ..IngestBatch::default()
        };
        let err = engine.ingest_academic_data(&bad).unwrap_err();
        match err {
            EngineError::Validation(issues) => {
                assert_eq!(issues.len(), 1);
                assert_eq!(issues[0].record, RecordKind::Registration);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn compute_all_generates_per_student_bills() {
        let mut engine = UpsEngine::new();
        engine
            .ingest_academic_data(&IngestBatch {
                students: vec![student("a", DegreeLevel::S1), student("b", DegreeLevel::S2)],
                ..IngestBatch::default()
            })
            .unwrap();
        engine.update_tariff(p2010_1(), base_tariffs()).unwrap();
        engine.ready().unwrap();
        let summary = engine.run_bill_computation(&compute_bill1_cmd()).unwrap();
        assert_eq!(summary.created, 2);
        assert_eq!(
            engine
                .tables()
                .get_unpaid_bills(&StudentId::from("a"), None)[0]
                .bill
                .amount,
            Money::new(2_500_000)
        );
        assert_eq!(
            engine
                .tables()
                .get_unpaid_bills(&StudentId::from("b"), None)[0]
                .bill
                .amount,
            Money::new(1_750_000)
        );
    }

    #[test]
    fn recompute_after_added_course_grows_bill2() {
        let mut engine = engine_with_student();
        engine.run_bill_computation(&compute_bill1_cmd()).unwrap();
        // Enough registered credits that Bill-2 starts out nonzero (unpaid):
        // total = 1,000,000 + 12 x 150,000 = 2,800,000; bill2 = 300,000.
        for (course, credits) in [("IF201", 6u8), ("IF202", 6u8)] {
            engine
                .ingest_academic_data(&IngestBatch {
                    registrations: vec![CourseRegistration {
                        period: p2010_1(),
                        student_id: StudentId::from("2016730001"),
                        course_code: CourseCode::from(course),
                        credits,
                        status_lab: false,
                        status_studio: false,
                        status_assist: false,
                        status_tutor: false,
                        trans_datetime: ts("20100210120000"),
                    }],
                    ..IngestBatch::default()
                })
                .unwrap();
        }

        let bill2_cmd = BillComputeCommand {
            target: ComputeTarget::Bill2,
            ..compute_bill1_cmd()
        };
        engine.run_bill_computation(&bill2_cmd).unwrap();
        let before = engine
            .tables()
            .live_bill(p2010_1(), &StudentId::from("2016730001"), Paycode::Bill2)
            .unwrap()
            .bill
            .amount;

        engine
            .ingest_academic_data(&IngestBatch {
                registrations: vec![CourseRegistration {
                    period: p2010_1(),
                    student_id: StudentId::from("2016730001"),
                    course_code: CourseCode::from("IF999"),
                    credits: 3,
                    status_lab: false,
                    status_studio: false,
                    status_assist: false,
                    status_tutor: false,
                    trans_datetime: ts("20100210120000"),
                }],
                ..IngestBatch::default()
            })
            .unwrap();
        engine.run_bill_computation(&bill2_cmd).unwrap();
        let after = engine
            .tables()
            .live_bill(p2010_1(), &StudentId::from("2016730001"), Paycode::Bill2)
            .unwrap()
            .bill
            .amount;
        assert_eq!(after, before.checked_add(Money::new(3 * 150_000)).unwrap());
    }

    #[test]
    fn paid_bill_is_never_replaced() {
        let mut engine = engine_with_student();
        engine.run_bill_computation(&compute_bill1_cmd()).unwrap();
        engine
            .handle_payment(&payment("2016730001", Paycode::Bill1, 2_500_000, "TX1"))
            .unwrap();
        let summary = engine.run_bill_computation(&compute_bill1_cmd()).unwrap();
        assert_eq!(summary.skipped_paid, 1);
        assert_eq!(summary.generated(), 0);
        let record = engine
            .tables()
            .live_bill(p2010_1(), &StudentId::from("2016730001"), Paycode::Bill1)
            .unwrap();
        assert!(record.bill.paid_status());
    }

    #[test]
    fn bill2_deducts_bill1_and_scholarship() {
        let mut engine = engine_with_student();
        engine
            .ingest_academic_data(&IngestBatch {
                registrations: vec![CourseRegistration {
                    period: p2010_1(),
                    student_id: StudentId::from("2016730001"),
                    course_code: CourseCode::from("IF101"),
                    credits: 6,
                    status_lab: false,
                    status_studio: false,
                    status_assist: false,
                    status_tutor: false,
                    trans_datetime: ts("20100210120000"),
                }],
                scholarships: vec![Scholarship {
                    period: p2010_1(),
                    student_id: StudentId::from("2016730001"),
                    scholarship_code: String::from("MERIT"),
                    amount: Money::new(400_000),
                }],
                ..IngestBatch::default()
            })
            .unwrap();
        engine.run_bill_computation(&compute_bill1_cmd()).unwrap();
        engine
            .run_bill_computation(&BillComputeCommand {
                target: ComputeTarget::Bill2,
                ..compute_bill1_cmd()
            })
            .unwrap();
        // total = 1,000,000 + 16*150,000? No: 10 base credits are part of
        // Bill-1; the semester total counts registered credits: 6 courses
        // credits -> 1,000,000 + 900,000 = 1,900,000.
        // bill2 = max(0, 1,900,000 - 2,500,000 - 400,000) = 0, born paid.
        let record = engine
            .tables()
            .live_bill(p2010_1(), &StudentId::from("2016730001"), Paycode::Bill2)
            .unwrap();
        assert_eq!(record.bill.amount, Money::ZERO);
        assert!(record.bill.paid_status());
    }

    #[test]
    fn due_bill_roll_supersedes_sources() {
        let mut engine = engine_with_student();
        engine.run_bill_computation(&compute_bill1_cmd()).unwrap();
        engine
            .apply_fines(p2010_1(), FinePolicy::default(), ts("20100301000000"))
            .unwrap();

        let next = period(2010, Semester::Regular2);
        let summary = engine
            .run_bill_computation(&BillComputeCommand {
                target: ComputeTarget::DueBill,
                scope: StudentScope::All,
                period: next,
                generated_at: ts("20100601000000"),
                due_date: ts("20100701000000"),
            })
            .unwrap();
        assert_eq!(summary.created, 1);

        let unpaid = engine
            .tables()
            .get_unpaid_bills(&StudentId::from("2016730001"), None);
        assert_eq!(unpaid.len(), 1);
        assert_eq!(unpaid[0].bill.paycode, Paycode::DueBill);
        assert_eq!(unpaid[0].bill.period, next);
        assert_eq!(unpaid[0].bill.amount, Money::new(2_600_000));
    }

    #[test]
    fn fines_engine_level_idempotent() {
        let mut engine = engine_with_student();
        engine.run_bill_computation(&compute_bill1_cmd()).unwrap();
        let now = ts("20100301000000");
        let first = engine
            .apply_fines(p2010_1(), FinePolicy::default(), now)
            .unwrap();
        assert_eq!(first.fines_created, 1);
        let second = engine
            .apply_fines(p2010_1(), FinePolicy::default(), now)
            .unwrap();
        assert_eq!(second.fines_created, 0);
    }

    #[test]
    fn eligibility_through_engine() {
        let mut engine = engine_with_student();
        engine.run_bill_computation(&compute_bill1_cmd()).unwrap();
        let sid = StudentId::from("2016730001");
        assert!(!engine
            .check_eligibility(&sid, p2010_1(), GatedAction::CourseRegistration)
            .unwrap()
            .is_allowed());
        engine
            .handle_payment(&payment("2016730001", Paycode::Bill1, 2_500_000, "TX1"))
            .unwrap();
        assert!(engine
            .check_eligibility(&sid, p2010_1(), GatedAction::CourseRegistration)
            .unwrap()
            .is_allowed());
    }

    #[test]
    fn negative_tariff_amount_is_rejected() {
        let mut engine = UpsEngine::new();
        let mut book = base_tariffs();
        book.general
            .insert(crate::ledger::TariffId::CreditS1, Money::new(-1));
        let err = engine.update_tariff(p2010_1(), book).unwrap_err();
        assert!(matches!(err, EngineError::Validation(_)));
        assert!(engine.tables().tariffs(p2010_1()).is_none());
    }

    #[test]
    fn tariff_reload_then_recompute_reflects_new_amounts() {
        let mut engine = engine_with_student();
        engine.run_bill_computation(&compute_bill1_cmd()).unwrap();
        // Reload with doubled tariffs; the outstanding bill still shows the
        // old amounts until a compute command runs.
        engine
            .update_tariff(
                p2010_1(),
                crate::ledger::testutil::tariffs(2_000_000, 300_000),
            )
            .unwrap();
        let before = engine
            .tables()
            .live_bill(p2010_1(), &StudentId::from("2016730001"), Paycode::Bill1)
            .unwrap()
            .bill
            .amount;
        assert_eq!(before, Money::new(2_500_000));

        let summary = engine.run_bill_computation(&compute_bill1_cmd()).unwrap();
        assert_eq!(summary.replaced, 1);
        let after = engine
            .tables()
            .live_bill(p2010_1(), &StudentId::from("2016730001"), Paycode::Bill1)
            .unwrap()
            .bill
            .amount;
        assert_eq!(after, Money::new(2_000_000 + 10 * 300_000));
    }

    #[test]
    fn failed_journal_write_leaves_state_untouched() {
        let mut engine = UpsEngine::with_journal(Box::new(FailingJournal {
            accepted: Vec::new(),
            fail_after: 0,
        }));
        let err = engine
            .ingest_academic_data(&IngestBatch {
                students: vec![student("a", DegreeLevel::S1)],
                ..IngestBatch::default()
            })
            .unwrap_err();
        assert!(matches!(err, EngineError::Journal(_)));
        assert!(!engine.tables().is_known_student(&StudentId::from("a")));
    }

    /// Test journal that keeps a shared handle to the captured lines.
    #[derive(Clone, Default)]
    struct SharedJournal(alloc::rc::Rc<core::cell::RefCell<Vec<String>>>);

    impl SharedJournal {
        fn lines(&self) -> Vec<String> {
            self.0.borrow().clone()
        }
    }

    impl Journal for SharedJournal {
        fn record(&mut self, line: &str) -> Result<(), JournalError> {
            self.0.borrow_mut().push(String::from(line));
            Ok(())
        }
    }

    #[test]
    fn journal_replay_reproduces_state() {
        let journal = SharedJournal::default();
        let mut engine = UpsEngine::with_journal(Box::new(journal.clone()));
        engine
            .ingest_academic_data(&IngestBatch {
                students: vec![student("a", DegreeLevel::S1), student("b", DegreeLevel::S2)],
                registrations: vec![CourseRegistration {
                    period: p2010_1(),
                    student_id: StudentId::from("a"),
                    course_code: CourseCode::from("IF101"),
                    credits: 3,
                    status_lab: false,
                    status_studio: false,
                    status_assist: false,
                    status_tutor: false,
                    trans_datetime: ts("20100210120000"),
                }],
                scholarships: vec![Scholarship {
                    period: p2010_1(),
                    student_id: StudentId::from("b"),
                    scholarship_code: String::from("MERIT"),
                    amount: Money::new(250_000),
                }],
            })
            .unwrap();
        engine.update_tariff(p2010_1(), base_tariffs()).unwrap();
        engine.ready().unwrap();
        engine.run_bill_computation(&compute_bill1_cmd()).unwrap();
        let pay = payment("a", Paycode::Bill1, 2_500_000, "TX1");
        engine.handle_payment(&pay).unwrap();
        let pay_b = payment("b", Paycode::Bill1, 1_750_000, "TX2");
        engine.handle_payment(&pay_b).unwrap();
        engine.handle_reversal(&reversal_of(&pay_b)).unwrap();
        engine
            .apply_fines(p2010_1(), FinePolicy::default(), ts("20100301000000"))
            .unwrap();

        // Replay the captured journal from scratch.
        let mut replayed = UpsEngine::new();
        for line in journal.lines() {
            replayed.apply_wal_record(&line).unwrap();
        }
        replayed.ready().unwrap();
        assert_eq!(replayed.tables(), engine.tables());
    }

    #[test]
    fn wal_lines_round_trip() {
        let e = student("a", DegreeLevel::S1);
        let line = wal::student_line(&e);
        assert_eq!(wal::parse_student_line(&line).unwrap(), e);

        let cmd = compute_bill1_cmd();
        let line = wal::billcmd_line(&cmd);
        assert_eq!(wal::parse_billcmd_line(&line).unwrap(), cmd);

        let book = {
            let mut book = base_tariffs();
            book.course.insert(
                CourseCode::from("IF101"),
                crate::ledger::CourseTariff {
                    lab: Some(crate::ledger::FeeComponent {
                        code: String::from("LAB1"),
                        amount: Money::new(200_000),
                    }),
                    ..Default::default()
                },
            );
            book
        };
        let line = wal::tariffbook_line(p2010_1(), &book);
        let (p, parsed) = wal::parse_tariffbook_line(&line).unwrap();
        assert_eq!(p, p2010_1());
        assert_eq!(parsed, book);

        let line = wal::finecmd_line(p2010_1(), FinePolicy::PercentBp(500), ts("20100301000000"));
        let (p, policy, now) = wal::parse_finecmd_line(&line).unwrap();
        assert_eq!(p, p2010_1());
        assert_eq!(policy, FinePolicy::PercentBp(500));
        assert_eq!(now, ts("20100301000000"));
    }

    #[test]
    fn dispatch_line_speaks_the_protocol() {
        let mut engine = engine_with_student();
        engine.run_bill_computation(&compute_bill1_cmd()).unwrap();
        let req =
            protocol::encode(&WireMessage::BillRequest(bill_request("2016730001", "TX1"))).unwrap();
        let resp = dispatch_line(&mut engine, &req);
        assert_eq!(resp, "BILLRESP|00|360|2016730001|BILL-1:2500000");

        let pay = protocol::encode(&WireMessage::Payment(payment(
            "2016730001",
            Paycode::Bill1,
            2_500_000,
            "TX2",
        )))
        .unwrap();
        assert_eq!(dispatch_line(&mut engine, &pay), "PAYSTATUS|SUCCESS");

        assert_eq!(dispatch_line(&mut engine, "garbage"), "ERR|UNKNOWN_KIND");
        assert_eq!(
            dispatch_line(&mut engine, "PAYSTATUS|SUCCESS"),
            "ERR|UNEXPECTED_KIND"
        );
    }
}
