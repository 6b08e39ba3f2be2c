//! Durable engine: write-ahead log plus snapshot, both plain files.
//!
//! Layout inside the data directory:
//!   wal.log       one UTF-8 record per line, append-only
//!   snapshot.bin  length-prefixed state rows with a SHA-256 trailer
//!
//! Opening recovers state as snapshot + journal tail: the snapshot carries a
//! watermark (how many journal records it already contains), the remaining
//! records replay through the engine, and only then does the live journal
//! attach. A torn trailing line (crash mid-write) is discarded and the file
//! truncated back to the last complete record, so the log stays appendable.
//!
//! Every record is flushed to the OS before the mutation applies, and the
//! engine acknowledges only after both; a crash can lose an unacknowledged
//! suffix, never an acknowledged record.

use std::cell::Cell;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::rc::Rc;

use sha2::{Digest, Sha256};
use thiserror::Error;

use tuition_core::engine::{wal, EngineError, RecoveryError, UpsEngine};
use tuition_core::journal::{Journal, JournalError};
use tuition_core::ledger::{AcademicPeriod, Bill, Paycode, Semester, StudentId};
use tuition_core::money::Money;
use tuition_core::protocol;
use tuition_core::tables::{BillKey, BillRecord, PaymentTransaction, TableSet};
use tuition_core::time::Timestamp;

pub const WAL_FILE: &str = "wal.log";
pub const SNAPSHOT_FILE: &str = "snapshot.bin";

const SNAPSHOT_MAGIC: &[u8; 8] = b"TLSNAP01";

#[derive(Debug, Error)]
pub enum DurableError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
    #[error("corrupt journal: {0}")]
    CorruptJournal(String),
    #[error("recovery: {0}")]
    Recovery(#[from] RecoveryError),
    #[error("engine: {0}")]
    Engine(#[from] EngineError),
}

// ---------------------------------------------------------------------------
// File journal
// ---------------------------------------------------------------------------

/// Journal sink appending one line per record, flushed before the engine
/// applies the mutation. The record counter is shared with the store so
/// snapshots know their watermark.
pub struct FileJournal {
    writer: BufWriter<File>,
    counter: Rc<Cell<u64>>,
}

impl FileJournal {
    fn open_append(path: &Path, counter: Rc<Cell<u64>>) -> Result<FileJournal, std::io::Error> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(FileJournal {
            writer: BufWriter::new(file),
            counter,
        })
    }
}

impl Journal for FileJournal {
    fn record(&mut self, line: &str) -> Result<(), JournalError> {
        let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
            w.write_all(line.as_bytes())?;
            w.write_all(b"\n")?;
            w.flush()
        };
        write(&mut self.writer).map_err(|e| JournalError(e.to_string()))?;
        self.counter.set(self.counter.get() + 1);
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Durable store
// ---------------------------------------------------------------------------

pub struct DurableStore {
    engine: UpsEngine,
    dir: PathBuf,
    wal_records: Rc<Cell<u64>>,
}

impl DurableStore {
    /// Open (or create) the data directory and recover: snapshot first, then
    /// the journal tail, then attach the live journal and go READY.
    pub fn open(dir: &Path) -> Result<DurableStore, DurableError> {
        fs::create_dir_all(dir)?;
        let snap_path = dir.join(SNAPSHOT_FILE);
        let (mut engine, watermark) = if snap_path.exists() {
            let (tables, watermark) = read_snapshot(&snap_path)?;
            (UpsEngine::from_tables(tables), watermark)
        } else {
            (UpsEngine::new(), 0)
        };

        let wal_path = dir.join(WAL_FILE);
        let lines = load_wal_lines(&wal_path)?;
        if (lines.len() as u64) < watermark {
            return Err(DurableError::CorruptJournal(format!(
                "journal has {} records but the snapshot claims {watermark}",
                lines.len()
            )));
        }
        for line in lines.iter().skip(watermark as usize) {
            engine.apply_wal_record(line)?;
        }

        let wal_records = Rc::new(Cell::new(lines.len() as u64));
        engine.set_journal(Box::new(FileJournal::open_append(
            &wal_path,
            Rc::clone(&wal_records),
        )?));
        engine.ready()?;
        Ok(DurableStore {
            engine,
            dir: dir.to_path_buf(),
            wal_records,
        })
    }

    pub fn engine(&self) -> &UpsEngine {
        &self.engine
    }

    pub fn engine_mut(&mut self) -> &mut UpsEngine {
        &mut self.engine
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn wal_record_count(&self) -> u64 {
        self.wal_records.get()
    }

    /// Write a snapshot of the current state (quiescent point). The journal
    /// is kept whole for audit; the snapshot's watermark tells recovery how
    /// much of it is already folded in.
    pub fn snapshot(&self) -> Result<PathBuf, DurableError> {
        let path = self.dir.join(SNAPSHOT_FILE);
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        let bytes = encode_snapshot(self.engine.tables(), self.wal_records.get());
        fs::write(&tmp, &bytes)?;
        File::open(&tmp)?.sync_all()?;
        fs::rename(&tmp, &path)?;
        Ok(path)
    }
}

/// Read the journal as complete lines. A torn tail (no trailing newline) is
/// dropped and truncated away so appends start on a record boundary.
fn load_wal_lines(path: &Path) -> Result<Vec<String>, DurableError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let complete_len = match bytes.iter().rposition(|&b| b == b'\n') {
        Some(last_newline) => last_newline + 1,
        None => 0,
    };
    if complete_len < bytes.len() {
        // Crash mid-record: discard the partial tail.
        let file = OpenOptions::new().write(true).open(path)?;
        file.set_len(complete_len as u64)?;
        file.sync_all()?;
        bytes.truncate(complete_len);
    }
    let text = String::from_utf8(bytes)
        .map_err(|_| DurableError::CorruptJournal(String::from("journal is not UTF-8")))?;
    Ok(text.lines().map(String::from).collect())
}

// ---------------------------------------------------------------------------
// Snapshot codec
// ---------------------------------------------------------------------------

fn encode_snapshot(tables: &TableSet, watermark: u64) -> Vec<u8> {
    let mut rows: Vec<String> = Vec::new();
    for student in tables.students_iter() {
        rows.push(wal::student_line(student));
    }
    for reg in tables.registrations_iter() {
        rows.push(wal::registration_line(reg));
    }
    for scholarship in tables.scholarships_iter() {
        rows.push(wal::scholarship_line(scholarship));
    }
    for period in tables.tariff_periods() {
        let book = tables.tariffs(period).expect("period listed");
        rows.push(wal::tariffbook_line(period, book));
    }
    for record in tables.bills_iter() {
        rows.push(snapbill_line(record));
    }
    for tx in tables.payments_iter() {
        rows.push(snappay_line(tx));
    }

    let mut out = Vec::new();
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&watermark.to_le_bytes());
    out.extend_from_slice(&(rows.len() as u32).to_le_bytes());
    for row in &rows {
        out.extend_from_slice(&(row.len() as u32).to_le_bytes());
        out.extend_from_slice(row.as_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

fn read_snapshot(path: &Path) -> Result<(TableSet, u64), DurableError> {
    let corrupt = |reason: &str| DurableError::CorruptSnapshot(reason.to_string());
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < SNAPSHOT_MAGIC.len() + 8 + 4 + 32 {
        return Err(corrupt("too short"));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 32);
    let digest = Sha256::digest(body);
    if digest.as_slice() != trailer {
        return Err(corrupt("checksum mismatch"));
    }
    if &body[..8] != SNAPSHOT_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let watermark = u64::from_le_bytes(body[8..16].try_into().unwrap());
    let n_rows = u32::from_le_bytes(body[16..20].try_into().unwrap()) as usize;

    let mut tables = TableSet::new();
    let mut offset = 20;
    for _ in 0..n_rows {
        if offset + 4 > body.len() {
            return Err(corrupt("truncated row header"));
        }
        let len = u32::from_le_bytes(body[offset..offset + 4].try_into().unwrap()) as usize;
        offset += 4;
        if offset + len > body.len() {
            return Err(corrupt("truncated row"));
        }
        let row = std::str::from_utf8(&body[offset..offset + len])
            .map_err(|_| corrupt("row is not UTF-8"))?;
        offset += len;
        restore_row(&mut tables, row).map_err(|e| corrupt(&e))?;
    }
    if offset != body.len() {
        return Err(corrupt("trailing bytes after rows"));
    }
    Ok((tables, watermark))
}

fn restore_row(tables: &mut TableSet, row: &str) -> Result<(), String> {
    let kind = row.split('|').next().unwrap_or("");
    match kind {
        wal::KIND_STUDENT => {
            tables.upsert_student(wal::parse_student_line(row)?);
        }
        wal::KIND_REGISTRATION => {
            tables.upsert_registration(wal::parse_registration_line(row)?);
        }
        wal::KIND_SCHOLARSHIP => {
            tables.upsert_scholarship(wal::parse_scholarship_line(row)?);
        }
        wal::KIND_TARIFFBOOK => {
            let (period, book) = wal::parse_tariffbook_line(row)?;
            tables.set_tariffs(period, book);
        }
        "SNAPBILL" => {
            tables
                .restore_bill(parse_snapbill_line(row)?)
                .map_err(|e| e.to_string())?;
        }
        "SNAPPAY" => {
            tables
                .restore_payment(parse_snappay_line(row)?)
                .map_err(|e| e.to_string())?;
        }
        other => return Err(format!("unknown snapshot row kind {other:?}")),
    }
    Ok(())
}

fn opt_ts(t: Option<Timestamp>) -> String {
    t.map(|t| t.wire()).unwrap_or_default()
}

fn parse_opt_ts(s: &str) -> Result<Option<Timestamp>, String> {
    if s.is_empty() {
        Ok(None)
    } else {
        Timestamp::parse_wire(s)
            .map(Some)
            .map_err(|e| e.to_string())
    }
}

fn snapbill_line(record: &BillRecord) -> String {
    let b = &record.bill;
    let (paid_bank, paid_txno) = match &record.paid_by {
        Some(tx) => (tx.bank_code.as_str(), tx.transaction_no.as_str()),
        None => ("", ""),
    };
    format!(
        "SNAPBILL|{}|{}|{}|{}|{}|{}|{}|{}|{}|{}|{}|{}",
        b.period.year,
        b.period.semester.code(),
        b.student_id,
        b.paycode,
        record.generation,
        b.amount,
        b.generate_datetime.wire(),
        b.due_date.wire(),
        opt_ts(b.datetime_paid),
        wal::yn(record.superseded),
        paid_bank,
        paid_txno,
    )
}

fn parse_snapbill_line(row: &str) -> Result<BillRecord, String> {
    let f: Vec<&str> = row.split('|').collect();
    if f.len() != 13 {
        return Err(format!("SNAPBILL wants 13 fields, got {}", f.len()));
    }
    let period = AcademicPeriod::new(
        f[1].parse().map_err(|_| "bad year")?,
        Semester::parse(f[2]).ok_or("bad semester")?,
    );
    let paid_by = match (f[11], f[12]) {
        ("", "") => None,
        (bank, txno) => Some(protocol::TxId {
            bank_code: bank.to_string(),
            transaction_no: txno.to_string(),
        }),
    };
    Ok(BillRecord {
        bill: Bill {
            period,
            student_id: StudentId(f[3].to_string()),
            paycode: Paycode::parse(f[4]).ok_or("bad paycode")?,
            amount: Money::new(f[6].parse().map_err(|_| "bad amount")?),
            generate_datetime: Timestamp::parse_wire(f[7]).map_err(|e| e.to_string())?,
            due_date: Timestamp::parse_wire(f[8]).map_err(|e| e.to_string())?,
            datetime_paid: parse_opt_ts(f[9])?,
        },
        generation: f[5].parse().map_err(|_| "bad generation")?,
        superseded: wal::parse_yn(f[10]).ok_or("bad superseded flag")?,
        paid_by,
    })
}

fn snappay_line(tx: &PaymentTransaction) -> String {
    let m = &tx.message;
    format!(
        "SNAPPAY|{}|{}|{}|{}|{}|{}|{}|{}|{}|{}|{}|{}|{}|{}|{}|{}|{}",
        tx.recorded_at.wire(),
        wal::yn(tx.reversed),
        opt_ts(tx.reversed_at),
        tx.bill_key.period.year,
        tx.bill_key.period.semester.code(),
        tx.bill_key.paycode,
        tx.bill_key.generation,
        m.student_id,
        m.paycode,
        m.amount,
        m.ccy_code,
        m.bank_code,
        m.transaction_no,
        m.trans_datetime.wire(),
        m.del_channel,
        m.institution_code,
        wal::yn(m.transaction_type == protocol::TransactionType::Payment),
    )
}

fn parse_snappay_line(row: &str) -> Result<PaymentTransaction, String> {
    let f: Vec<&str> = row.split('|').collect();
    if f.len() != 18 {
        return Err(format!("SNAPPAY wants 18 fields, got {}", f.len()));
    }
    let period = AcademicPeriod::new(
        f[4].parse().map_err(|_| "bad year")?,
        Semester::parse(f[5]).ok_or("bad semester")?,
    );
    let student_id = StudentId(f[8].to_string());
    let message = protocol::PaymentMessage {
        transaction_type: if wal::parse_yn(f[17]).ok_or("bad type flag")? {
            protocol::TransactionType::Payment
        } else {
            protocol::TransactionType::Reversal
        },
        student_id: student_id.clone(),
        paycode: Paycode::parse(f[9]).ok_or("bad paycode")?,
        amount: Money::new(f[10].parse().map_err(|_| "bad amount")?),
        ccy_code: f[11].to_string(),
        bank_code: f[12].to_string(),
        transaction_no: f[13].to_string(),
        trans_datetime: Timestamp::parse_wire(f[14]).map_err(|e| e.to_string())?,
        del_channel: protocol::Channel::parse(f[15]).ok_or("bad channel")?,
        institution_code: f[16].to_string(),
    };
    Ok(PaymentTransaction {
        message,
        recorded_at: Timestamp::parse_wire(f[1]).map_err(|e| e.to_string())?,
        bill_key: BillKey {
            period,
            student_id,
            paycode: Paycode::parse(f[6]).ok_or("bad bill paycode")?,
            generation: f[7].parse().map_err(|_| "bad generation")?,
        },
        reversed: wal::parse_yn(f[2]).ok_or("bad reversed flag")?,
        reversed_at: parse_opt_ts(f[3])?,
    })
}

/// Referenced by tests and the acceptance suite: rebuild state from a WAL
/// prefix alone (no snapshot), without touching any files.
pub fn replay_wal_lines(lines: &[String]) -> Result<UpsEngine, DurableError> {
    let mut engine = UpsEngine::new();
    for line in lines {
        engine.apply_wal_record(line)?;
    }
    engine.ready()?;
    Ok(engine)
}
