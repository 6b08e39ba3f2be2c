//! Scenario-level oracles: reconstruct expectations from the replay log and
//! check them against the reports and the store, independent of the
//! simulator's own counters.

use tuition_core::engine::{
    BillComputeCommand, ComputeTarget, IngestBatch, StudentScope, UpsEngine,
};
use tuition_core::ledger::{
    AcademicPeriod, DegreeLevel, Semester, StudentEnrollment, StudentId, TariffBook, TariffId,
};
use tuition_core::money::Money;
use tuition_core::protocol::{self, Channel, WireMessage};
use tuition_core::report::{self, ReportFilter};
use tuition_core::sim::{
    run_scenario, EngineTransport, ScenarioConfig, Schedule, SweepTarget, VasSim,
};
use tuition_core::time::Timestamp;

fn p2010_1() -> AcademicPeriod {
    AcademicPeriod::new(2010, Semester::Regular1)
}

fn ts(s: &str) -> Timestamp {
    Timestamp::parse_wire(s).unwrap()
}

fn tariffs() -> TariffBook {
    let mut book = TariffBook::default();
    for level in [DegreeLevel::S1, DegreeLevel::S2, DegreeLevel::S3] {
        book.general
            .insert(TariffId::registration_for(level), Money::new(1_000_000));
        book.general
            .insert(TariffId::credit_for(level), Money::new(150_000));
    }
    book
}

fn engine_with_students(n: usize) -> (UpsEngine, Vec<StudentId>) {
    let mut engine = UpsEngine::new();
    let students: Vec<StudentEnrollment> = (0..n)
        .map(|i| StudentEnrollment {
            period: p2010_1(),
            student_id: StudentId(format!("S{i:05}")),
            name: format!("Student {i}"),
            degree_level: DegreeLevel::S1,
            pay_credits: true,
            bill1_credits: 10,
            dispensation: false,
        })
        .collect();
    let ids = students.iter().map(|s| s.student_id.clone()).collect();
    engine
        .ingest_academic_data(&IngestBatch {
            students,
            ..IngestBatch::default()
        })
        .unwrap();
    engine.update_tariff(p2010_1(), tariffs()).unwrap();
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
    (engine, ids)
}

fn sweep_targets(ids: &[StudentId]) -> Vec<SweepTarget> {
    ids.iter().map(|id| (id.clone(), None)).collect()
}

/// What the wire traffic says actually happened: delivered payments whose
/// ack was SUCCESS, minus delivered reversals answered SUCCESS.
#[derive(Default)]
struct LogReconstruction {
    committed: std::collections::BTreeMap<(String, String), i64>,
}

fn reconstruct(replay_log: &[String]) -> LogReconstruction {
    let mut state = LogReconstruction::default();
    let mut pending: Option<(String, String, i64, bool)> = None; // (bank, txno, amount, is_reversal)
    for line in replay_log {
        let mut parts = line.splitn(3, '|');
        let (dir, fate, wire) = (
            parts.next().unwrap_or(""),
            parts.next().unwrap_or(""),
            parts.next().unwrap_or(""),
        );
        if dir == "V>U" && fate == "ok" {
            match protocol::decode(wire) {
                Ok(WireMessage::Payment(p)) => {
                    pending = Some((p.bank_code, p.transaction_no, p.amount.idr(), false));
                }
                Ok(WireMessage::Reversal(r)) => {
                    pending = Some((r.bank_code, r.transaction_no, r.amount.idr(), true));
                }
                _ => pending = None,
            }
        } else if dir == "U>V" {
            // The UPS answered (even if the bank never saw it, the state
            // change happened on the UPS side).
            if let Some((bank, txno, amount, is_reversal)) = pending.take() {
                match protocol::decode(wire) {
                    Ok(WireMessage::PaymentStatus(protocol::PaymentStatus::Success)) => {
                        state.committed.insert((bank, txno), amount);
                    }
                    Ok(WireMessage::ReversalStatus(protocol::ReversalStatus::Success))
                        if is_reversal =>
                    {
                        state.committed.remove(&(bank, txno));
                    }
                    _ => {}
                }
            }
        }
    }
    state
}

#[test]
fn replay_log_reconstruction_matches_balance_and_reports() {
    let (mut engine, ids) = engine_with_students(200);
    let mut config = ScenarioConfig::new(p2010_1(), Schedule::Sweep);
    config.faults.seed = 31;
    config.faults.drop_request_rate = 0.08;
    config.faults.drop_response_rate = 0.05;
    config.faults.drop_ack_rate = 0.10;
    config.faults.duplicate_rate = 0.05;
    config.faults.clearing_anomaly_rate = 0.03;
    let output = run_scenario(
        &config,
        &sweep_targets(&ids),
        EngineTransport {
            engine: &mut engine,
        },
    )
    .unwrap();

    let oracle = reconstruct(&output.replay_log);

    // Standing payments in the store match the log reconstruction exactly.
    let standing: std::collections::BTreeMap<(String, String), i64> = engine
        .tables()
        .payments_iter()
        .filter(|tx| !tx.reversed)
        .map(|tx| {
            (
                (
                    tx.message.bank_code.clone(),
                    tx.message.transaction_no.clone(),
                ),
                tx.message.amount.idr(),
            )
        })
        .collect();
    assert_eq!(standing, oracle.committed);

    // Balance totals equal the oracle sums on both sides.
    let balance = report::balance_check(engine.tables(), Some(&output.vas_ledger), None);
    let oracle_paid: i64 = oracle.committed.values().sum();
    assert_eq!(balance.total_billed_paid.idr(), oracle_paid);

    // Reversed-only discrepancy check: with every reversal excluded from
    // both sides, the delta is exactly the orphaned clearing money.
    let orphan_total: i64 = balance.orphan_list.iter().map(|d| d.amount.idr()).sum();
    assert_eq!(balance.delta, orphan_total);
    assert_eq!(balance.orphan_list.len() as u64, output.result.orphans);
    assert!(balance.ghost_list.is_empty());

    // The payment report projects the same standing set.
    let rows = report::payment_report(engine.tables(), &ReportFilter::default());
    assert_eq!(rows.len(), oracle.committed.len());
    let report_total: i64 = rows.iter().map(|r| r.amount.idr()).sum();
    assert_eq!(report_total, oracle_paid);
}

#[test]
fn reversals_only_scenario_balances_to_zero() {
    let (mut engine, ids) = engine_with_students(50);
    let mut config = ScenarioConfig::new(p2010_1(), Schedule::Sweep);
    config.faults.seed = 77;
    config.faults.drop_ack_rate = 1.0; // every payment ack lost -> reversed
    let output = run_scenario(
        &config,
        &sweep_targets(&ids),
        EngineTransport {
            engine: &mut engine,
        },
    )
    .unwrap();
    assert_eq!(output.result.reversed, 50);
    assert_eq!(output.result.success, 0);

    let balance = report::balance_check(engine.tables(), Some(&output.vas_ledger), None);
    assert_eq!(balance.delta, 0);
    assert!(balance.is_balanced());
    // Cross-check against the log: nothing stands.
    assert!(reconstruct(&output.replay_log).committed.is_empty());
}

/// The exact-payment invariant: every standing payment row points at exactly
/// one bill whose paid instant equals the payment's recording instant and
/// whose amount matches.
#[test]
fn exact_payment_invariant_after_faulty_run() {
    let (mut engine, ids) = engine_with_students(150);
    let mut config = ScenarioConfig::new(p2010_1(), Schedule::Sweep);
    config.faults.seed = 5150;
    config.faults.drop_request_rate = 0.1;
    config.faults.drop_ack_rate = 0.15;
    config.faults.duplicate_rate = 0.1;
    config.faults.clearing_anomaly_rate = 0.05;
    run_scenario(
        &config,
        &sweep_targets(&ids),
        EngineTransport {
            engine: &mut engine,
        },
    )
    .unwrap();

    for tx in engine.tables().payments_iter().filter(|tx| !tx.reversed) {
        let record = engine.tables().bill(&tx.bill_key).expect("bill exists");
        assert_eq!(record.bill.amount, tx.message.amount);
        assert_eq!(record.bill.datetime_paid, Some(tx.recorded_at));
        assert_eq!(record.paid_by.as_ref(), Some(&tx.message.tx_id()));
        // Exactly one: no other bill claims this payment.
        let claimants = engine
            .tables()
            .bills_iter()
            .filter(|r| r.paid_by.as_ref() == Some(&tx.message.tx_id()))
            .count();
        assert_eq!(claimants, 1);
    }
}

#[test]
fn mid_scenario_report_is_a_prefix_of_the_final_state() {
    let (mut engine, ids) = engine_with_students(40);
    let config = ScenarioConfig::new(p2010_1(), Schedule::Sweep);
    let mut sim = VasSim::new(
        &config,
        EngineTransport {
            engine: &mut engine,
        },
    );
    for id in &ids[..20] {
        sim.submit_client_payment(Channel::Atm, id, None, None)
            .unwrap();
    }
    let output_half = sim.finish();
    let mid_rows = report::payment_report(engine.tables(), &ReportFilter::default());
    assert_eq!(mid_rows.len(), 20);
    // A report taken immediately after a commit includes that commit.
    let half_oracle = reconstruct(&output_half.replay_log);
    assert_eq!(mid_rows.len(), half_oracle.committed.len());

    // A fresh simulator restarts its transaction numbering, so it must
    // present itself as a different bank to keep (bank, txno) unique.
    let mut config2 = config.clone();
    config2.home_bank = String::from("015");
    let mut sim = VasSim::new(
        &config2,
        EngineTransport {
            engine: &mut engine,
        },
    );
    for id in &ids[20..] {
        sim.submit_client_payment(Channel::Atm, id, None, None)
            .unwrap();
    }
    sim.finish();
    let end_rows = report::payment_report(engine.tables(), &ReportFilter::default());
    assert_eq!(end_rows.len(), 40);
    // Every mid-scenario row is still present at the end.
    for row in &mid_rows {
        assert!(end_rows.contains(row));
    }
}
