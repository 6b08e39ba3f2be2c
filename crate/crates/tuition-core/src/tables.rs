//! The seven UPS tables, in memory.
//!
//! Keyed `BTreeMap`s stand in for the database: deterministic iteration,
//! exact-key and range access only. The hot transaction paths (unpaid-bill
//! lookup, payment commit, reversal) run on keyed access exclusively and the
//! table set counts its own accesses so tests can pin that down; full scans
//! exist only on the report paths.
//!
//! Bills are versioned: replacing an unpaid bill tombstones the old
//! generation instead of deleting it, and the payment table is append-only
//! except for the one-way `reversed` flag. Nothing financial is ever erased.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::cell::Cell;
use core::fmt;

use crate::ledger::{
    AcademicPeriod, Bill, CourseCode, CourseRegistration, Paycode, Scholarship, StudentEnrollment,
    StudentId, TariffBook,
};
use crate::protocol::{PaymentMessage, TxId};
use crate::time::Timestamp;

// ---------------------------------------------------------------------------
// Keys and records
// ---------------------------------------------------------------------------

/// Primary key of Tstd_bill: (period, student, paycode, generation).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BillKey {
    pub period: AcademicPeriod,
    pub student_id: StudentId,
    pub paycode: Paycode,
    pub generation: u32,
}

impl fmt::Display for BillKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}#{}",
            self.period, self.student_id, self.paycode, self.generation
        )
    }
}

/// A stored bill plus its versioning state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BillRecord {
    pub bill: Bill,
    pub generation: u32,
    /// Tombstoned by a recompute or a due-bill roll; kept for audit.
    pub superseded: bool,
    /// The transaction that paid this bill, while the payment stands.
    pub paid_by: Option<TxId>,
}

impl BillRecord {
    pub fn key(&self) -> BillKey {
        BillKey {
            period: self.bill.period,
            student_id: self.bill.student_id.clone(),
            paycode: self.bill.paycode,
            generation: self.generation,
        }
    }

    /// Live means visible to billing, payment and reports: not superseded.
    pub fn is_live(&self) -> bool {
        !self.superseded
    }
}

/// One accepted payment: the wire message plus recording metadata.
/// Append-only; `reversed` flips false -> true at most once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaymentTransaction {
    pub message: PaymentMessage,
    pub recorded_at: Timestamp,
    pub bill_key: BillKey,
    pub reversed: bool,
    pub reversed_at: Option<Timestamp>,
}

/// Result of an upsert into an academic table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Upsert {
    Inserted,
    Updated,
    Unchanged,
}

/// Result of installing a computed bill.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BillInstall {
    Created(u32),
    Replaced(u32),
    /// A paid bill of this paycode already stands; paid bills are history.
    SkippedPaid,
}

// ---------------------------------------------------------------------------
// Access accounting
// ---------------------------------------------------------------------------

/// Counts keyed seeks versus full-table scans, so the no-join/no-scan rule
/// on the payment hot path is testable rather than aspirational.
#[derive(Debug, Default, Clone)]
pub struct AccessStats {
    index_lookups: Cell<u64>,
    table_scans: Cell<u64>,
}

impl AccessStats {
    fn seek(&self) {
        self.index_lookups.set(self.index_lookups.get() + 1);
    }

    fn scan(&self) {
        self.table_scans.set(self.table_scans.get() + 1);
    }

    pub fn index_lookups(&self) -> u64 {
        self.index_lookups.get()
    }

    pub fn table_scans(&self) -> u64 {
        self.table_scans.get()
    }
}

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StoreError {
    DuplicateTransaction(TxId),
    BillNotFound(BillKey),
    BillAlreadyPaid(BillKey),
    PaymentNotFound(TxId),
    AlreadyReversed(TxId),
    /// Paycode/semester combination the dictionary forbids.
    PaycodeSemesterMismatch(Paycode, AcademicPeriod),
    NegativeAmount(i64),
}

impl fmt::Display for StoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StoreError::DuplicateTransaction(tx) => write!(f, "duplicate transaction {tx}"),
            StoreError::BillNotFound(key) => write!(f, "bill {key} not found"),
            StoreError::BillAlreadyPaid(key) => write!(f, "bill {key} already paid"),
            StoreError::PaymentNotFound(tx) => write!(f, "payment {tx} not found"),
            StoreError::AlreadyReversed(tx) => write!(f, "payment {tx} already reversed"),
            StoreError::PaycodeSemesterMismatch(code, period) => {
                write!(f, "paycode {code} not allowed in period {period}")
            }
            StoreError::NegativeAmount(v) => write!(f, "negative amount {v}"),
        }
    }
}

impl core::error::Error for StoreError {}

// ---------------------------------------------------------------------------
// TableSet
// ---------------------------------------------------------------------------

/// Tstd_scholarship, Tgeneral_tariff + Tcourse_tariff (one book per period),
/// Tstudent_active, Tcourse_regis, Tstd_bill, Tpayment_trans.
#[derive(Debug, Default, Clone)]
pub struct TableSet {
    students: BTreeMap<(AcademicPeriod, StudentId), StudentEnrollment>,
    /// Membership index for the WRONG_ACCOUNT check: one keyed probe.
    known_students: BTreeSet<StudentId>,
    registrations: BTreeMap<(AcademicPeriod, StudentId, CourseCode), CourseRegistration>,
    scholarships: BTreeMap<(AcademicPeriod, StudentId, String), Scholarship>,
    tariffs: BTreeMap<AcademicPeriod, TariffBook>,
    bills: BTreeMap<BillKey, BillRecord>,
    /// Unpaid live bills per student: the single keyed structure behind
    /// both the bill-request and the payment-matching hot paths.
    unpaid_index: BTreeMap<StudentId, BTreeSet<BillKey>>,
    payments: BTreeMap<TxId, PaymentTransaction>,
    stats: AccessStats,
}

/// State identity ignores the access counters.
impl PartialEq for TableSet {
    fn eq(&self, other: &TableSet) -> bool {
        self.students == other.students
            && self.registrations == other.registrations
            && self.scholarships == other.scholarships
            && self.tariffs == other.tariffs
            && self.bills == other.bills
            && self.unpaid_index == other.unpaid_index
            && self.payments == other.payments
    }
}

impl Eq for TableSet {}

impl TableSet {
    pub fn new() -> TableSet {
        TableSet::default()
    }

    pub fn stats(&self) -> &AccessStats {
        &self.stats
    }

    // -- Tstudent_active ----------------------------------------------------

    pub fn upsert_student(&mut self, enrollment: StudentEnrollment) -> Upsert {
        let key = (enrollment.period, enrollment.student_id.clone());
        self.known_students.insert(enrollment.student_id.clone());
        match self.students.get(&key) {
            Some(existing) if *existing == enrollment => Upsert::Unchanged,
            Some(_) => {
                self.students.insert(key, enrollment);
                Upsert::Updated
            }
            None => {
                self.students.insert(key, enrollment);
                Upsert::Inserted
            }
        }
    }

    pub fn student(
        &self,
        period: AcademicPeriod,
        student_id: &StudentId,
    ) -> Option<&StudentEnrollment> {
        self.stats.seek();
        self.students.get(&(period, student_id.clone()))
    }

    pub fn is_known_student(&self, student_id: &StudentId) -> bool {
        self.stats.seek();
        self.known_students.contains(student_id)
    }

    /// Students enrolled in a period, ascending id. Range seek, no scan.
    pub fn students_in_period(&self, period: AcademicPeriod) -> Vec<&StudentEnrollment> {
        self.stats.seek();
        self.students
            .range((period, StudentId(String::new()))..)
            .take_while(|((p, _), _)| *p == period)
            .map(|(_, e)| e)
            .collect()
    }

    pub fn students_iter(&self) -> impl Iterator<Item = &StudentEnrollment> {
        self.stats.scan();
        self.students.values()
    }

    // -- Tcourse_regis ------------------------------------------------------

    pub fn upsert_registration(&mut self, reg: CourseRegistration) -> Upsert {
        let key = (reg.period, reg.student_id.clone(), reg.course_code.clone());
        match self.registrations.get(&key) {
            Some(existing) if *existing == reg => Upsert::Unchanged,
            Some(_) => {
                self.registrations.insert(key, reg);
                Upsert::Updated
            }
            None => {
                self.registrations.insert(key, reg);
                Upsert::Inserted
            }
        }
    }

    pub fn registrations_iter(&self) -> impl Iterator<Item = &CourseRegistration> {
        self.stats.scan();
        self.registrations.values()
    }

    pub fn registrations_for(
        &self,
        period: AcademicPeriod,
        student_id: &StudentId,
    ) -> Vec<CourseRegistration> {
        self.stats.seek();
        self.registrations
            .range((period, student_id.clone(), CourseCode(String::new()))..)
            .take_while(|((p, s, _), _)| *p == period && s == student_id)
            .map(|(_, r)| r.clone())
            .collect()
    }

    // -- Tstd_scholarship ---------------------------------------------------

    pub fn upsert_scholarship(&mut self, scholarship: Scholarship) -> Upsert {
        let key = (
            scholarship.period,
            scholarship.student_id.clone(),
            scholarship.scholarship_code.clone(),
        );
        match self.scholarships.get(&key) {
            Some(existing) if *existing == scholarship => Upsert::Unchanged,
            Some(_) => {
                self.scholarships.insert(key, scholarship);
                Upsert::Updated
            }
            None => {
                self.scholarships.insert(key, scholarship);
                Upsert::Inserted
            }
        }
    }

    pub fn scholarships_iter(&self) -> impl Iterator<Item = &Scholarship> {
        self.stats.scan();
        self.scholarships.values()
    }

    pub fn scholarships_for(
        &self,
        period: AcademicPeriod,
        student_id: &StudentId,
    ) -> Vec<&Scholarship> {
        self.stats.seek();
        self.scholarships
            .range((period, student_id.clone(), String::new())..)
            .take_while(|((p, s, _), _)| *p == period && s == student_id)
            .map(|(_, s)| s)
            .collect()
    }

    // -- Tgeneral_tariff / Tcourse_tariff ------------------------------------

    /// Replace the period's tariff book wholesale.
    pub fn set_tariffs(&mut self, period: AcademicPeriod, book: TariffBook) {
        self.tariffs.insert(period, book);
    }

    pub fn tariffs(&self, period: AcademicPeriod) -> Option<&TariffBook> {
        self.stats.seek();
        self.tariffs.get(&period)
    }

    pub fn tariff_periods(&self) -> Vec<AcademicPeriod> {
        self.tariffs.keys().copied().collect()
    }

    // -- Tstd_bill ------------------------------------------------------------

    /// All unpaid live bills of a student, optionally period-filtered,
    /// ascending (period, paycode). One keyed index lookup; the per-key row
    /// reads ride on the index hit.
    pub fn get_unpaid_bills(
        &self,
        student_id: &StudentId,
        period: Option<AcademicPeriod>,
    ) -> Vec<&BillRecord> {
        self.stats.seek();
        let Some(keys) = self.unpaid_index.get(student_id) else {
            return Vec::new();
        };
        keys.iter()
            .filter(|k| period.is_none_or(|p| k.period == p))
            .map(|k| self.bills.get(k).expect("unpaid index points at a bill"))
            .collect()
    }

    /// The live (non-superseded) record of a (period, student, paycode), if
    /// any. Range seek over generations.
    pub fn live_bill(
        &self,
        period: AcademicPeriod,
        student_id: &StudentId,
        paycode: Paycode,
    ) -> Option<&BillRecord> {
        self.stats.seek();
        let from = BillKey {
            period,
            student_id: student_id.clone(),
            paycode,
            generation: 0,
        };
        self.bills
            .range(from..)
            .take_while(|(k, _)| {
                k.period == period && k.student_id == *student_id && k.paycode == paycode
            })
            .map(|(_, r)| r)
            .find(|r| r.is_live())
    }

    /// Install a freshly computed bill: supersede the live unpaid bill of the
    /// same paycode if present, leave paid history untouched.
    pub fn install_bill(&mut self, bill: Bill) -> Result<BillInstall, StoreError> {
        if !bill.paycode.allowed_in(bill.period.semester) {
            return Err(StoreError::PaycodeSemesterMismatch(
                bill.paycode,
                bill.period,
            ));
        }
        if bill.amount.is_negative() {
            return Err(StoreError::NegativeAmount(bill.amount.idr()));
        }
        let mut last_generation = 0;
        let mut live: Option<BillKey> = None;
        {
            let from = BillKey {
                period: bill.period,
                student_id: bill.student_id.clone(),
                paycode: bill.paycode,
                generation: 0,
            };
            for (key, record) in self.bills.range(from..).take_while(|(k, _)| {
                k.period == bill.period
                    && k.student_id == bill.student_id
                    && k.paycode == bill.paycode
            }) {
                last_generation = key.generation;
                if record.is_live() {
                    if record.bill.paid_status() {
                        return Ok(BillInstall::SkippedPaid);
                    }
                    live = Some(key.clone());
                }
            }
        }
        let replaced = live.is_some();
        if let Some(key) = live {
            self.tombstone(&key);
        }
        let generation = last_generation + 1;
        let key = BillKey {
            period: bill.period,
            student_id: bill.student_id.clone(),
            paycode: bill.paycode,
            generation,
        };
        if bill.is_unpaid() {
            self.unpaid_index
                .entry(bill.student_id.clone())
                .or_default()
                .insert(key.clone());
        }
        self.bills.insert(
            key,
            BillRecord {
                bill,
                generation,
                superseded: false,
                paid_by: None,
            },
        );
        Ok(if replaced {
            BillInstall::Replaced(generation)
        } else {
            BillInstall::Created(generation)
        })
    }

    /// Tombstone an unpaid live bill (due-bill roll source).
    pub fn supersede_bill(&mut self, key: &BillKey) -> Result<(), StoreError> {
        let record = self
            .bills
            .get(key)
            .ok_or_else(|| StoreError::BillNotFound(key.clone()))?;
        if record.bill.paid_status() {
            return Err(StoreError::BillAlreadyPaid(key.clone()));
        }
        self.tombstone(key);
        Ok(())
    }

    fn tombstone(&mut self, key: &BillKey) {
        if let Some(record) = self.bills.get_mut(key) {
            record.superseded = true;
            if let Some(set) = self.unpaid_index.get_mut(&key.student_id) {
                set.remove(key);
                if set.is_empty() {
                    self.unpaid_index.remove(&key.student_id);
                }
            }
        }
    }

    pub fn bill(&self, key: &BillKey) -> Option<&BillRecord> {
        self.stats.seek();
        self.bills.get(key)
    }

    /// Live bills (paid or unpaid) of one student in one period. Range seek.
    pub fn live_bills_for(
        &self,
        period: AcademicPeriod,
        student_id: &StudentId,
    ) -> Vec<&BillRecord> {
        self.stats.seek();
        let from = BillKey {
            period,
            student_id: student_id.clone(),
            paycode: Paycode::DueBill,
            generation: 0,
        };
        self.bills
            .range(from..)
            .take_while(|(k, _)| k.period == period && k.student_id == *student_id)
            .map(|(_, r)| r)
            .filter(|r| r.is_live())
            .collect()
    }

    /// Students owing anything in the given period. Index walk.
    pub fn students_with_unpaid_in(&self, period: AcademicPeriod) -> Vec<StudentId> {
        self.stats.scan();
        self.unpaid_index
            .iter()
            .filter(|(_, keys)| keys.iter().any(|k| k.period == period))
            .map(|(id, _)| id.clone())
            .collect()
    }

    /// Students with unpaid leftovers eligible for a due-bill roll into
    /// `target`: anything unpaid before it, or a standing due-bill in it.
    pub fn students_with_unpaid_before(&self, target: AcademicPeriod) -> Vec<StudentId> {
        self.stats.scan();
        self.unpaid_index
            .iter()
            .filter(|(_, keys)| {
                keys.iter().any(|k| {
                    k.period < target || (k.period == target && k.paycode == Paycode::DueBill)
                })
            })
            .map(|(id, _)| id.clone())
            .collect()
    }

    pub fn bills_iter(&self) -> impl Iterator<Item = &BillRecord> {
        self.stats.scan();
        self.bills.values()
    }

    // -- Tpayment_trans -----------------------------------------------------

    pub fn payment(&self, tx_id: &TxId) -> Option<&PaymentTransaction> {
        self.stats.seek();
        self.payments.get(tx_id)
    }

    pub fn payments_iter(&self) -> impl Iterator<Item = &PaymentTransaction> {
        self.stats.scan();
        self.payments.values()
    }

    pub fn payment_count(&self) -> usize {
        self.payments.len()
    }

    /// Snapshot-restore constructor: install a bill record exactly as
    /// serialized, preserving its generation and flags.
    pub fn restore_bill(&mut self, record: BillRecord) -> Result<(), StoreError> {
        if !record.bill.paycode.allowed_in(record.bill.period.semester) {
            return Err(StoreError::PaycodeSemesterMismatch(
                record.bill.paycode,
                record.bill.period,
            ));
        }
        let key = record.key();
        if record.is_live() && record.bill.is_unpaid() {
            self.unpaid_index
                .entry(key.student_id.clone())
                .or_default()
                .insert(key.clone());
        }
        self.bills.insert(key, record);
        Ok(())
    }

    /// Snapshot-restore constructor for payment rows.
    pub fn restore_payment(&mut self, tx: PaymentTransaction) -> Result<(), StoreError> {
        let tx_id = tx.message.tx_id();
        if self.payments.contains_key(&tx_id) {
            return Err(StoreError::DuplicateTransaction(tx_id));
        }
        self.payments.insert(tx_id, tx);
        Ok(())
    }

    /// The atomic exact-payment commit: append the payment row and mark its
    /// bill paid, together or not at all. Three keyed accesses, no scan.
    pub fn commit_payment(
        &mut self,
        message: &PaymentMessage,
        bill_key: &BillKey,
        recorded_at: Timestamp,
    ) -> Result<(), StoreError> {
        let tx_id = message.tx_id();
        self.stats.seek();
        if self.payments.contains_key(&tx_id) {
            return Err(StoreError::DuplicateTransaction(tx_id));
        }
        self.stats.seek();
        let record = self
            .bills
            .get(bill_key)
            .ok_or_else(|| StoreError::BillNotFound(bill_key.clone()))?;
        if record.bill.paid_status() {
            return Err(StoreError::BillAlreadyPaid(bill_key.clone()));
        }
        // Checks done; the two writes below always land together.
        let record = self.bills.get_mut(bill_key).expect("checked above");
        record.bill.datetime_paid = Some(recorded_at);
        record.paid_by = Some(tx_id.clone());
        self.stats.seek();
        if let Some(set) = self.unpaid_index.get_mut(&bill_key.student_id) {
            set.remove(bill_key);
            if set.is_empty() {
                self.unpaid_index.remove(&bill_key.student_id);
            }
        }
        self.payments.insert(
            tx_id,
            PaymentTransaction {
                message: message.clone(),
                recorded_at,
                bill_key: bill_key.clone(),
                reversed: false,
                reversed_at: None,
            },
        );
        Ok(())
    }

    /// Cancel a standing payment: flip its `reversed` flag and reopen the
    /// bill it paid.
    pub fn reverse_payment(
        &mut self,
        tx_id: &TxId,
        reversed_at: Timestamp,
    ) -> Result<BillKey, StoreError> {
        self.stats.seek();
        let tx = self
            .payments
            .get_mut(tx_id)
            .ok_or_else(|| StoreError::PaymentNotFound(tx_id.clone()))?;
        if tx.reversed {
            return Err(StoreError::AlreadyReversed(tx_id.clone()));
        }
        tx.reversed = true;
        tx.reversed_at = Some(reversed_at);
        let bill_key = tx.bill_key.clone();
        self.stats.seek();
        let record = self
            .bills
            .get_mut(&bill_key)
            .expect("payment points at a bill");
        debug_assert_eq!(record.paid_by.as_ref(), Some(tx_id));
        record.bill.datetime_paid = None;
        record.paid_by = None;
        self.stats.seek();
        self.unpaid_index
            .entry(bill_key.student_id.clone())
            .or_default()
            .insert(bill_key.clone());
        Ok(bill_key)
    }
}
