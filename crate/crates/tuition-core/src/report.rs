//! Real-time reports and bill/payment balancing.
//!
//! Every report is a pure projection of a table-set snapshot (plus the
//! bank-side ledger for reconciliation): no cached aggregates, so a report
//! taken right after a commit already contains it. Row shapes follow the
//! report dictionaries field for field; rendering is delimiter-separated
//! text with a header row.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::engine::StudentScope;
use crate::ledger::{AcademicPeriod, StudentId};
use crate::money::Money;
use crate::sim::VasLedger;
use crate::tables::TableSet;
use crate::time::Timestamp;

// ---------------------------------------------------------------------------
// Row types
// ---------------------------------------------------------------------------

/// bill_report: year + semester + student_ID + name + paycode + amount +
/// generate_datetime + paid_status + datetime_paid
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BillReportRow {
    pub period: AcademicPeriod,
    pub student_id: StudentId,
    pub name: String,
    pub paycode: crate::ledger::Paycode,
    pub amount: Money,
    pub generate_datetime: Timestamp,
    pub paid_status: bool,
    pub datetime_paid: Option<Timestamp>,
}

/// transaction_report: the full payment dictionary; reversals appear as
/// their own rows with transaction_type REVERSAL.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransactionReportRow {
    pub transaction_type: crate::protocol::TransactionType,
    pub student_id: StudentId,
    pub paycode: crate::ledger::Paycode,
    pub amount: Money,
    pub ccy_code: String,
    pub bank_code: String,
    pub transaction_no: String,
    pub trans_datetime: Timestamp,
    pub del_channel: crate::protocol::Channel,
    pub institution_code: String,
}

/// payment_report: student_ID + name + paycode + amount + trans_datetime,
/// standing (non-reversed) payments only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaymentReportRow {
    pub student_id: StudentId,
    pub name: String,
    pub paycode: crate::ledger::Paycode,
    pub amount: Money,
    pub trans_datetime: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFilter {
    pub scope: StudentScope,
    pub period: Option<AcademicPeriod>,
}

impl Default for ReportFilter {
    fn default() -> ReportFilter {
        ReportFilter {
            scope: StudentScope::All,
            period: None,
        }
    }
}

impl ReportFilter {
    fn matches(&self, student_id: &StudentId, period: AcademicPeriod) -> bool {
        let scope_ok = match &self.scope {
            StudentScope::All => true,
            StudentScope::One(id) => id == student_id,
        };
        scope_ok && self.period.is_none_or(|p| p == period)
    }
}

// ---------------------------------------------------------------------------
// Balance report
// ---------------------------------------------------------------------------

/// One side of a reconciliation discrepancy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Discrepancy {
    pub tx_id: crate::protocol::TxId,
    pub student_id: StudentId,
    pub amount: Money,
}

/// KSF-9 balancing: bank money received versus university bills marked
/// paid. `delta = total_payments - total_billed_paid`; both are zero-delta
/// with empty discrepancy lists on a fault-free run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BalanceReport {
    pub period: Option<AcademicPeriod>,
    /// Sum of live bills with paid_status = YES.
    pub total_billed_paid: Money,
    /// Bank side when a VAS ledger is supplied, otherwise the UPS payment
    /// table (internal self-check).
    pub total_payments: Money,
    pub delta: i64,
    /// Bank-recorded entries with no standing UPS payment.
    pub orphan_list: Vec<Discrepancy>,
    /// Standing UPS payments the bank never recorded.
    pub ghost_list: Vec<Discrepancy>,
}

impl BalanceReport {
    pub fn is_balanced(&self) -> bool {
        self.delta == 0 && self.orphan_list.is_empty() && self.ghost_list.is_empty()
    }

    /// Human-readable summary block, `key=value` per line.
    pub fn render_summary(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "period={}\n",
            self.period
                .map_or_else(|| String::from("ALL"), |p| format!("{p}")),
        ));
        out.push_str(&format!("total_billed_paid={}\n", self.total_billed_paid));
        out.push_str(&format!("total_payments={}\n", self.total_payments));
        out.push_str(&format!("delta={}\n", self.delta));
        out.push_str(&format!("orphans={}\n", self.orphan_list.len()));
        out.push_str(&format!("ghosts={}\n", self.ghost_list.len()));
        for d in &self.orphan_list {
            out.push_str(&format!(
                "orphan={}|{}|{}|{}\n",
                d.tx_id.bank_code, d.tx_id.transaction_no, d.student_id, d.amount
            ));
        }
        for d in &self.ghost_list {
            out.push_str(&format!(
                "ghost={}|{}|{}|{}\n",
                d.tx_id.bank_code, d.tx_id.transaction_no, d.student_id, d.amount
            ));
        }
        out
    }
}

/// Balance bills against payments by full scan, and reconcile the two
/// ledgers by keyed comparison on (bank_code, transaction_no).
///
/// Reversed payments are excluded from both sides. The period filter applies
/// to the UPS side; the bank ledger carries no period and is compared whole.
pub fn balance_check(
    tables: &TableSet,
    vas: Option<&VasLedger>,
    period: Option<AcademicPeriod>,
) -> BalanceReport {
    let total_billed_paid = Money::checked_sum(
        tables
            .bills_iter()
            .filter(|r| r.is_live() && r.bill.paid_status())
            .filter(|r| period.is_none_or(|p| r.bill.period == p))
            .map(|r| r.bill.amount),
    )
    .expect("paid bill total fits in i64");

    let ups_standing: Vec<&crate::tables::PaymentTransaction> = tables
        .payments_iter()
        .filter(|tx| !tx.reversed)
        .filter(|tx| period.is_none_or(|p| tx.bill_key.period == p))
        .collect();

    let mut orphan_list = Vec::new();
    let mut ghost_list = Vec::new();
    let total_payments = match vas {
        Some(ledger) => {
            for entry in ledger.iter().filter(|e| e.outcome.bank_recorded()) {
                let standing = tables.payment(&entry.tx_id).is_some_and(|tx| !tx.reversed);
                if !standing {
                    orphan_list.push(Discrepancy {
                        tx_id: entry.tx_id.clone(),
                        student_id: entry.student_id.clone(),
                        amount: entry.amount,
                    });
                }
            }
            for tx in &ups_standing {
                let recorded = ledger
                    .get(&tx.message.tx_id())
                    .is_some_and(|e| e.outcome.bank_recorded());
                if !recorded {
                    ghost_list.push(Discrepancy {
                        tx_id: tx.message.tx_id(),
                        student_id: tx.message.student_id.clone(),
                        amount: tx.message.amount,
                    });
                }
            }
            Money::checked_sum(
                ledger
                    .iter()
                    .filter(|e| e.outcome.bank_recorded())
                    .map(|e| e.amount),
            )
            .expect("bank total fits in i64")
        }
        None => Money::checked_sum(ups_standing.iter().map(|tx| tx.message.amount))
            .expect("payment total fits in i64"),
    };

    BalanceReport {
        period,
        total_billed_paid,
        total_payments,
        delta: total_payments.idr() - total_billed_paid.idr(),
        orphan_list,
        ghost_list,
    }
}

// ---------------------------------------------------------------------------
// Row projections
// ---------------------------------------------------------------------------

fn student_name(tables: &TableSet, period: AcademicPeriod, student_id: &StudentId) -> String {
    tables
        .student(period, student_id)
        .map(|e| e.name.clone())
        .unwrap_or_default()
}

/// One row per live bill matching the filter, (period, student, paycode)
/// order.
pub fn bill_report(tables: &TableSet, filter: &ReportFilter) -> Vec<BillReportRow> {
    tables
        .bills_iter()
        .filter(|r| r.is_live())
        .filter(|r| filter.matches(&r.bill.student_id, r.bill.period))
        .map(|r| BillReportRow {
            period: r.bill.period,
            student_id: r.bill.student_id.clone(),
            name: student_name(tables, r.bill.period, &r.bill.student_id),
            paycode: r.bill.paycode,
            amount: r.bill.amount,
            generate_datetime: r.bill.generate_datetime,
            paid_status: r.bill.paid_status(),
            datetime_paid: r.bill.datetime_paid,
        })
        .collect()
}

/// One row per payment plus one extra row per reversal, in transaction
/// identity order.
pub fn transaction_report(tables: &TableSet, filter: &ReportFilter) -> Vec<TransactionReportRow> {
    let mut rows = Vec::new();
    for tx in tables.payments_iter() {
        if !filter.matches(&tx.message.student_id, tx.bill_key.period) {
            continue;
        }
        let base = TransactionReportRow {
            transaction_type: crate::protocol::TransactionType::Payment,
            student_id: tx.message.student_id.clone(),
            paycode: tx.message.paycode,
            amount: tx.message.amount,
            ccy_code: tx.message.ccy_code.clone(),
            bank_code: tx.message.bank_code.clone(),
            transaction_no: tx.message.transaction_no.clone(),
            trans_datetime: tx.message.trans_datetime,
            del_channel: tx.message.del_channel,
            institution_code: tx.message.institution_code.clone(),
        };
        rows.push(base.clone());
        if tx.reversed {
            rows.push(TransactionReportRow {
                transaction_type: crate::protocol::TransactionType::Reversal,
                trans_datetime: tx.reversed_at.unwrap_or(tx.message.trans_datetime),
                ..base
            });
        }
    }
    rows
}

/// Standing payments only, with the payer's name.
pub fn payment_report(tables: &TableSet, filter: &ReportFilter) -> Vec<PaymentReportRow> {
    tables
        .payments_iter()
        .filter(|tx| !tx.reversed)
        .filter(|tx| filter.matches(&tx.message.student_id, tx.bill_key.period))
        .map(|tx| PaymentReportRow {
            student_id: tx.message.student_id.clone(),
            name: student_name(tables, tx.bill_key.period, &tx.message.student_id),
            paycode: tx.message.paycode,
            amount: tx.message.amount,
            trans_datetime: tx.message.trans_datetime,
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

pub const BILL_REPORT_HEADER: [&str; 9] = [
    "year",
    "semester",
    "student_id",
    "name",
    "paycode",
    "amount",
    "generate_datetime",
    "paid_status",
    "datetime_paid",
];

pub const TRANSACTION_REPORT_HEADER: [&str; 10] = [
    "transaction_type",
    "student_id",
    "paycode",
    "amount",
    "ccy_code",
    "bank_code",
    "transaction_no",
    "trans_datetime",
    "del_channel",
    "institution_code",
];

pub const PAYMENT_REPORT_HEADER: [&str; 5] =
    ["student_id", "name", "paycode", "amount", "trans_datetime"];

impl BillReportRow {
    pub fn fields(&self) -> Vec<String> {
        alloc::vec![
            self.period.year.to_string(),
            self.period.semester.code().to_string(),
            self.student_id.to_string(),
            self.name.clone(),
            self.paycode.to_string(),
            self.amount.to_string(),
            self.generate_datetime.wire(),
            if self.paid_status { "YES" } else { "NO" }.to_string(),
            self.datetime_paid.map(|t| t.wire()).unwrap_or_default(),
        ]
    }
}

impl TransactionReportRow {
    pub fn fields(&self) -> Vec<String> {
        alloc::vec![
            self.transaction_type.as_str().to_string(),
            self.student_id.to_string(),
            self.paycode.to_string(),
            self.amount.to_string(),
            self.ccy_code.clone(),
            self.bank_code.clone(),
            self.transaction_no.clone(),
            self.trans_datetime.wire(),
            self.del_channel.to_string(),
            self.institution_code.clone(),
        ]
    }
}

impl PaymentReportRow {
    pub fn fields(&self) -> Vec<String> {
        alloc::vec![
            self.student_id.to_string(),
            self.name.clone(),
            self.paycode.to_string(),
            self.amount.to_string(),
            self.trans_datetime.wire(),
        ]
    }
}

/// Delimiter-separated text with a header row and a trailing newline.
pub fn render_rows(header: &[&str], rows: &[Vec<String>], delimiter: char) -> String {
    let mut out = String::new();
    out.push_str(&header.join(&delimiter.to_string()));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(&delimiter.to_string()));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{BillComputeCommand, ComputeTarget, IngestBatch, StudentScope, UpsEngine};
    use crate::ledger::testutil::ts;
    use crate::ledger::{DegreeLevel, Paycode, Semester, StudentEnrollment};
    use crate::protocol::{Channel, PaymentMessage, TransactionType};
    use crate::sim::{VasEntry, VasOutcome};
    use alloc::vec;

    fn p2010_1() -> AcademicPeriod {
        AcademicPeriod::new(2010, Semester::Regular1)
    }

    fn engine_with_bills() -> UpsEngine {
        let mut engine = UpsEngine::new();
        engine
            .ingest_academic_data(&IngestBatch {
                students: vec![StudentEnrollment {
                    period: p2010_1(),
                    student_id: StudentId::from("a"),
                    name: String::from("Ami"),
                    degree_level: DegreeLevel::S1,
                    pay_credits: true,
                    bill1_credits: 10,
                    dispensation: false,
                }],
                ..IngestBatch::default()
            })
            .unwrap();
        engine
            .update_tariff(
                p2010_1(),
                crate::ledger::testutil::tariffs(1_000_000, 150_000),
            )
            .unwrap();
        engine.ready().unwrap();
        engine
            .run_bill_computation(&BillComputeCommand {
                target: ComputeTarget::Bill1,
                scope: StudentScope::All,
                period: p2010_1(),
                generated_at: ts("20100901000000"),
                due_date: ts("20101001000000"),
            })
            .unwrap();
        engine
    }

    fn payment(txno: &str, amount: i64) -> PaymentMessage {
        PaymentMessage {
            transaction_type: TransactionType::Payment,
            student_id: StudentId::from("a"),
            paycode: Paycode::Bill1,
            amount: Money::new(amount),
            ccy_code: String::from("IDR"),
            bank_code: String::from("014"),
            transaction_no: String::from(txno),
            trans_datetime: ts("20100902100000"),
            del_channel: Channel::Atm,
            institution_code: String::from("UNPAR"),
        }
    }

    #[test]
    fn bill_report_rows_reflect_paid_status() {
        let mut engine = engine_with_bills();
        engine
            .apply_fines(
                p2010_1(),
                crate::ledger::FinePolicy::default(),
                ts("20101015000000"),
            )
            .unwrap();
        let rows = bill_report(engine.tables(), &ReportFilter::default());
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| !r.paid_status));
        assert!(rows.iter().all(|r| r.name == "Ami"));

        engine.handle_payment(&payment("TX1", 2_500_000)).unwrap();
        let rows = bill_report(engine.tables(), &ReportFilter::default());
        let paid: Vec<_> = rows.iter().filter(|r| r.paid_status).collect();
        assert_eq!(paid.len(), 1);
        assert_eq!(paid[0].paycode, Paycode::Bill1);
        assert_eq!(paid[0].datetime_paid, Some(ts("20100902100000")));
    }

    #[test]
    fn payment_and_its_reversal_project_correctly() {
        let mut engine = engine_with_bills();
        let pay = payment("TX1", 2_500_000);
        engine.handle_payment(&pay).unwrap();
        engine
            .handle_reversal(&PaymentMessage {
                transaction_type: TransactionType::Reversal,
                trans_datetime: ts("20100902100500"),
                ..pay.clone()
            })
            .unwrap();

        let txs = transaction_report(engine.tables(), &ReportFilter::default());
        assert_eq!(txs.len(), 2);
        assert_eq!(txs[0].transaction_type, TransactionType::Payment);
        assert_eq!(txs[1].transaction_type, TransactionType::Reversal);
        assert_eq!(txs[1].trans_datetime, ts("20100902100500"));

        let pays = payment_report(engine.tables(), &ReportFilter::default());
        assert!(pays.is_empty());
    }

    #[test]
    fn empty_store_empty_reports() {
        let tables = TableSet::new();
        assert!(bill_report(&tables, &ReportFilter::default()).is_empty());
        assert!(transaction_report(&tables, &ReportFilter::default()).is_empty());
        assert!(payment_report(&tables, &ReportFilter::default()).is_empty());
        let report = balance_check(&tables, None, None);
        assert!(report.is_balanced());
    }

    #[test]
    fn internal_balance_after_payment() {
        let mut engine = engine_with_bills();
        engine.handle_payment(&payment("TX1", 2_500_000)).unwrap();
        let report = balance_check(engine.tables(), None, None);
        assert_eq!(report.total_billed_paid, Money::new(2_500_000));
        assert_eq!(report.total_payments, Money::new(2_500_000));
        assert!(report.is_balanced());
    }

    #[test]
    fn orphan_and_ghost_detection() {
        let mut engine = engine_with_bills();
        let pay = payment("TX1", 2_500_000);
        engine.handle_payment(&pay).unwrap();

        let mut vas = VasLedger::default();
        // The real payment, recorded by the bank.
        vas.record(VasEntry {
            tx_id: pay.tx_id(),
            student_id: pay.student_id.clone(),
            channel: Channel::Atm,
            paycode: Paycode::Bill1,
            amount: pay.amount,
            outcome: VasOutcome::Accepted,
            at: ts("20100902100000"),
        });
        // An orphan: clearing money the UPS refused.
        vas.record(VasEntry {
            tx_id: crate::protocol::TxId {
                bank_code: String::from("002"),
                transaction_no: String::from("TX9"),
            },
            student_id: StudentId::from("a"),
            channel: Channel::Clearing,
            paycode: Paycode::Bill1,
            amount: Money::new(2_499_999),
            outcome: VasOutcome::Orphan,
            at: ts("20100902110000"),
        });
        let report = balance_check(engine.tables(), Some(&vas), None);
        assert_eq!(report.orphan_list.len(), 1);
        assert_eq!(report.ghost_list.len(), 0);
        assert_eq!(report.delta, 2_499_999);
        assert!(report.render_summary().contains("delta=2499999"));

        // Ghost: drop the real entry from the bank ledger.
        let mut vas_missing = VasLedger::default();
        vas_missing.record(VasEntry {
            tx_id: crate::protocol::TxId {
                bank_code: String::from("002"),
                transaction_no: String::from("TX9"),
            },
            student_id: StudentId::from("a"),
            channel: Channel::Clearing,
            paycode: Paycode::Bill1,
            amount: Money::new(2_499_999),
            outcome: VasOutcome::Orphan,
            at: ts("20100902110000"),
        });
        let report = balance_check(engine.tables(), Some(&vas_missing), None);
        assert_eq!(report.ghost_list.len(), 1);
    }

    #[test]
    fn reversed_payments_excluded_from_both_sides() {
        let mut engine = engine_with_bills();
        let pay = payment("TX1", 2_500_000);
        engine.handle_payment(&pay).unwrap();
        engine
            .handle_reversal(&PaymentMessage {
                transaction_type: TransactionType::Reversal,
                trans_datetime: ts("20100902100500"),
                ..pay.clone()
            })
            .unwrap();

        let mut vas = VasLedger::default();
        vas.record(VasEntry {
            tx_id: pay.tx_id(),
            student_id: pay.student_id.clone(),
            channel: Channel::Atm,
            paycode: Paycode::Bill1,
            amount: pay.amount,
            outcome: VasOutcome::Reversed,
            at: ts("20100902100000"),
        });
        let report = balance_check(engine.tables(), Some(&vas), None);
        assert!(report.is_balanced());
        assert_eq!(report.total_payments, Money::ZERO);
    }

    #[test]
    fn render_rows_with_custom_delimiter() {
        let rows = vec![vec![String::from("a"), String::from("b")]];
        let text = render_rows(&["x", "y"], &rows, ';');
        assert_eq!(text, "x;y\na;b\n");
    }

    #[test]
    fn payment_report_total_matches_balance() {
        let mut engine = engine_with_bills();
        engine.handle_payment(&payment("TX1", 2_500_000)).unwrap();
        let rows = payment_report(engine.tables(), &ReportFilter::default());
        let total = Money::checked_sum(rows.iter().map(|r| r.amount)).unwrap();
        let report = balance_check(engine.tables(), None, None);
        assert_eq!(total, report.total_payments);
    }
}
