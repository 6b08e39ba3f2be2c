//! Deterministic simulated bank (the VAS side).
//!
//! Drives the client protocol against a UPS: request the bill (up to 3
//! sends), pick an unpaid item, pay it (up to 3 sends), and reverse the
//! payment when the acknowledgment is lost. Every fault is sampled from a
//! splitmix64 generator seeded per transaction index, so adding an attempt
//! never perturbs the faults of earlier ones, and a (config, targets) pair
//! always replays to the byte.
//!
//! Fault kinds: request drops, response drops, ack drops (which trigger the
//! reversal path), message duplication, and the clearing anomaly, where an
//! inter-bank payment with the wrong amount settles on the bank side while
//! the UPS refuses it, leaving an orphan in the bank ledger.
//!
//! Simulated time: the UPS spends a fixed latency (default one second)
//! processing each delivered message, and a dropped send costs the same in
//! timeout waiting. The bank-side ledger, the wire log and all counters are
//! part of the deterministic output.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::engine::{dispatch_line, UpsEngine};
use crate::ledger::{AcademicPeriod, Paycode, StudentId};
use crate::money::Money;
use crate::protocol::{
    self, BillRequest, BillResponse, Channel, PaymentMessage, PaymentStatus, ResponseCode,
    ReversalStatus, TransactionType, TxId, WireMessage,
};
use crate::time::Timestamp;

pub const MAX_SENDS: u32 = 3;
pub const DEFAULT_LATENCY_MS: u64 = 1_000;
pub const DEFAULT_HOME_BANK: &str = "014";
pub const DEFAULT_INSTITUTION: &str = "UNPAR";

// ---------------------------------------------------------------------------
// Deterministic generator
// ---------------------------------------------------------------------------

/// splitmix64: tiny, well-known, and stable across platforms and releases,
/// which is exactly what replayable fault schedules need.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> SplitMix64 {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn chance(&mut self, p: f64) -> bool {
        p > 0.0 && self.next_f64() < p
    }

    pub fn pick(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }
}

// ---------------------------------------------------------------------------
// Fault plan
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum FaultKind {
    /// Request leg lost before reaching the UPS; the bank retries.
    DropRequest,
    /// Bill response lost; the bank retries the request.
    DropResponse,
    /// Payment acknowledgment lost; the bank reverses the payment.
    DropAck,
    /// A delivered message arrives twice.
    Duplicate,
    /// Inter-bank clearing settles a wrong amount the UPS refuses.
    ClearingAnomaly,
}

impl FaultKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FaultKind::DropRequest => "drop_request",
            FaultKind::DropResponse => "drop_response",
            FaultKind::DropAck => "drop_ack",
            FaultKind::Duplicate => "duplicate",
            FaultKind::ClearingAnomaly => "clearing_anomaly",
        }
    }

    pub fn parse(s: &str) -> Option<FaultKind> {
        match s {
            "drop_request" => Some(FaultKind::DropRequest),
            "drop_response" => Some(FaultKind::DropResponse),
            "drop_ack" => Some(FaultKind::DropAck),
            "duplicate" => Some(FaultKind::Duplicate),
            "clearing_anomaly" => Some(FaultKind::ClearingAnomaly),
            _ => None,
        }
    }
}

/// Seeded fault schedule. Deterministic overrides pin a fault kind to a
/// transaction index and suppress sampling for that attempt entirely.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultPlan {
    pub seed: u64,
    pub drop_request_rate: f64,
    pub drop_response_rate: f64,
    pub drop_ack_rate: f64,
    pub duplicate_rate: f64,
    pub clearing_anomaly_rate: f64,
    pub overrides: BTreeMap<u64, FaultKind>,
}

impl Default for FaultPlan {
    fn default() -> FaultPlan {
        FaultPlan {
            seed: 0,
            drop_request_rate: 0.0,
            drop_response_rate: 0.0,
            drop_ack_rate: 0.0,
            duplicate_rate: 0.0,
            clearing_anomaly_rate: 0.0,
            overrides: BTreeMap::new(),
        }
    }
}

impl FaultPlan {
    pub fn is_fault_free(&self) -> bool {
        self.drop_request_rate == 0.0
            && self.drop_response_rate == 0.0
            && self.drop_ack_rate == 0.0
            && self.duplicate_rate == 0.0
            && self.clearing_anomaly_rate == 0.0
            && self.overrides.is_empty()
    }

    fn validate(&self) -> Result<(), ConfigError> {
        for (key, rate) in [
            ("drop_request_rate", self.drop_request_rate),
            ("drop_response_rate", self.drop_response_rate),
            ("drop_ack_rate", self.drop_ack_rate),
            ("duplicate_rate", self.duplicate_rate),
            ("clearing_anomaly_rate", self.clearing_anomaly_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(ConfigError::BadValue {
                    key: key.to_string(),
                    value: format!("{rate}"),
                });
            }
        }
        Ok(())
    }

    /// Per-attempt generator: forked from the plan seed by transaction
    /// index, never shared between attempts.
    fn fault_rng(&self, index: u64) -> SplitMix64 {
        SplitMix64::new(self.seed ^ (index.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }
}

// ---------------------------------------------------------------------------
// Scenario configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Schedule {
    /// One attempt per sweep target, in order.
    Sweep,
    /// N attempts against targets picked uniformly by the schedule seed.
    Random { transactions: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub period: AcademicPeriod,
    pub schedule: Schedule,
    pub latency_ms: u64,
    pub faults: FaultPlan,
    pub home_bank: String,
    pub clearing_banks: Vec<String>,
    pub institution: String,
}

impl ScenarioConfig {
    pub fn new(period: AcademicPeriod, schedule: Schedule) -> ScenarioConfig {
        ScenarioConfig {
            period,
            schedule,
            latency_ms: DEFAULT_LATENCY_MS,
            faults: FaultPlan::default(),
            home_bank: String::from(DEFAULT_HOME_BANK),
            clearing_banks: alloc::vec![
                String::from("002"),
                String::from("008"),
                String::from("009"),
            ],
            institution: String::from(DEFAULT_INSTITUTION),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConfigError {
    MissingSection(&'static str),
    MissingKey(&'static str),
    UnknownSection(String),
    UnknownKey(String),
    BadValue { key: String, value: String },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::MissingSection(s) => write!(f, "missing [{s}] section"),
            ConfigError::MissingKey(k) => write!(f, "missing key {k}"),
            ConfigError::UnknownSection(s) => write!(f, "unknown section [{s}]"),
            ConfigError::UnknownKey(k) => write!(f, "unknown key {k}"),
            ConfigError::BadValue { key, value } => write!(f, "bad value {value:?} for {key}"),
        }
    }
}

impl core::error::Error for ConfigError {}

/// Parse the `key = value` scenario file: a `[scenario]` section plus
/// optional `[faults]` and `[overrides]` sections. `#` starts a comment.
pub fn parse_scenario_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    enum Section {
        None,
        Scenario,
        Faults,
        Overrides,
    }
    let mut section = Section::None;
    let mut period: Option<AcademicPeriod> = None;
    let mut schedule_kind: Option<String> = None;
    let mut transactions: Option<u64> = None;
    let mut seed: u64 = 0;
    let mut latency_ms: u64 = DEFAULT_LATENCY_MS;
    let mut home_bank = String::from(DEFAULT_HOME_BANK);
    let mut institution = String::from(DEFAULT_INSTITUTION);
    let mut clearing_banks: Option<Vec<String>> = None;
    let mut faults = FaultPlan::default();
    let mut saw_scenario = false;

    for raw in text.lines() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = match name {
                "scenario" => {
                    saw_scenario = true;
                    Section::Scenario
                }
                "faults" => Section::Faults,
                "overrides" => Section::Overrides,
                other => return Err(ConfigError::UnknownSection(other.to_string())),
            };
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::BadValue {
            key: line.to_string(),
            value: String::new(),
        })?;
        let key = key.trim();
        let value = value.trim();
        let bad = || ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
        };
        match section {
            Section::None => return Err(ConfigError::MissingSection("scenario")),
            Section::Scenario => match key {
                "period" => period = Some(AcademicPeriod::parse(value).ok_or_else(bad)?),
                "schedule" => schedule_kind = Some(value.to_string()),
                "transactions" => transactions = Some(value.parse().map_err(|_| bad())?),
                "seed" => seed = value.parse().map_err(|_| bad())?,
                "latency_ms" => latency_ms = value.parse().map_err(|_| bad())?,
                "home_bank" => home_bank = value.to_string(),
                "institution" => institution = value.to_string(),
                "clearing_banks" => {
                    clearing_banks = Some(
                        value
                            .split(',')
                            .map(|s| s.trim().to_string())
                            .filter(|s| !s.is_empty())
                            .collect(),
                    )
                }
                other => return Err(ConfigError::UnknownKey(other.to_string())),
            },
            Section::Faults => {
                let rate: f64 = value.parse().map_err(|_| bad())?;
                match key {
                    "drop_request_rate" => faults.drop_request_rate = rate,
                    "drop_response_rate" => faults.drop_response_rate = rate,
                    "drop_ack_rate" => faults.drop_ack_rate = rate,
                    "duplicate_rate" => faults.duplicate_rate = rate,
                    "clearing_anomaly_rate" => faults.clearing_anomaly_rate = rate,
                    other => return Err(ConfigError::UnknownKey(other.to_string())),
                }
            }
            Section::Overrides => {
                let index: u64 = key.parse().map_err(|_| bad())?;
                let kind = FaultKind::parse(value).ok_or_else(bad)?;
                faults.overrides.insert(index, kind);
            }
        }
    }

    if !saw_scenario {
        return Err(ConfigError::MissingSection("scenario"));
    }
    let period = period.ok_or(ConfigError::MissingKey("period"))?;
    let schedule = match schedule_kind.as_deref() {
        Some("sweep") | None => Schedule::Sweep,
        Some("random") => Schedule::Random {
            transactions: transactions.ok_or(ConfigError::MissingKey("transactions"))?,
        },
        Some(other) => {
            return Err(ConfigError::BadValue {
                key: String::from("schedule"),
                value: other.to_string(),
            })
        }
    };
    faults.seed = seed;
    faults.validate()?;
    let mut config = ScenarioConfig::new(period, schedule);
    config.latency_ms = latency_ms;
    config.faults = faults;
    config.home_bank = home_bank;
    config.institution = institution;
    if let Some(banks) = clearing_banks {
        if banks.is_empty() {
            return Err(ConfigError::BadValue {
                key: String::from("clearing_banks"),
                value: String::new(),
            });
        }
        config.clearing_banks = banks;
    }
    Ok(config)
}

// ---------------------------------------------------------------------------
// Transport
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportError(pub String);

impl fmt::Display for TransportError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "transport failed: {}", self.0)
    }
}

impl core::error::Error for TransportError {}

/// One request line in, one response line out. The simulator is oblivious
/// to whether the UPS lives in-process or behind a socket.
pub trait UpsTransport {
    fn exchange(&mut self, line: &str) -> Result<String, TransportError>;
}

/// In-process transport over a borrowed engine.
pub struct EngineTransport<'a> {
    pub engine: &'a mut UpsEngine,
}

impl UpsTransport for EngineTransport<'_> {
    fn exchange(&mut self, line: &str) -> Result<String, TransportError> {
        Ok(dispatch_line(self.engine, line))
    }
}

// ---------------------------------------------------------------------------
// Bank-side ledger
// ---------------------------------------------------------------------------

/// What the bank's books say about one attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VasOutcome {
    /// Money accepted and, as far as the bank knows, settled.
    Accepted,
    /// Accepted, then cancelled by the reversal path.
    Reversed,
    /// Accepted by inter-bank clearing but refused by the UPS: the bank
    /// cannot undo the settlement, so the entry stands. The KSF-9 orphan.
    Orphan,
    /// The bank refused the payment at the counter (nothing settled).
    Refused,
    /// Delivery failed entirely; the client was refunded on the spot.
    TimedOut,
}

impl VasOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            VasOutcome::Accepted => "ACCEPTED",
            VasOutcome::Reversed => "REVERSED",
            VasOutcome::Orphan => "ORPHAN",
            VasOutcome::Refused => "REFUSED",
            VasOutcome::TimedOut => "TIMED_OUT",
        }
    }

    pub fn parse(s: &str) -> Option<VasOutcome> {
        match s {
            "ACCEPTED" => Some(VasOutcome::Accepted),
            "REVERSED" => Some(VasOutcome::Reversed),
            "ORPHAN" => Some(VasOutcome::Orphan),
            "REFUSED" => Some(VasOutcome::Refused),
            "TIMED_OUT" => Some(VasOutcome::TimedOut),
            _ => None,
        }
    }

    /// Entries the bank counts as money received.
    pub fn bank_recorded(self) -> bool {
        matches!(self, VasOutcome::Accepted | VasOutcome::Orphan)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VasEntry {
    pub tx_id: TxId,
    pub student_id: StudentId,
    pub channel: Channel,
    pub paycode: Paycode,
    pub amount: Money,
    pub outcome: VasOutcome,
    pub at: Timestamp,
}

/// Per-student virtual-account entries, keyed by transaction identity.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VasLedger {
    entries: BTreeMap<TxId, VasEntry>,
}

impl VasLedger {
    pub fn record(&mut self, entry: VasEntry) {
        self.entries.insert(entry.tx_id.clone(), entry);
    }

    pub fn set_outcome(&mut self, tx_id: &TxId, outcome: VasOutcome) {
        if let Some(entry) = self.entries.get_mut(tx_id) {
            entry.outcome = outcome;
        }
    }

    pub fn get(&self, tx_id: &TxId) -> Option<&VasEntry> {
        self.entries.get(tx_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &VasEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Serialize as pipe-delimited lines (one per entry).
    pub fn to_lines(&self) -> Vec<String> {
        self.entries
            .values()
            .map(|e| {
                format!(
                    "VAS|{}|{}|{}|{}|{}|{}|{}|{}",
                    e.tx_id.bank_code,
                    e.tx_id.transaction_no,
                    e.student_id,
                    e.channel,
                    e.paycode,
                    e.amount,
                    e.outcome.as_str(),
                    e.at.wire(),
                )
            })
            .collect()
    }

    pub fn from_lines<'a, I: IntoIterator<Item = &'a str>>(lines: I) -> Result<VasLedger, String> {
        let mut ledger = VasLedger::default();
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('|').collect();
            if f.len() != 9 || f[0] != "VAS" {
                return Err(format!("bad VAS ledger line: {line}"));
            }
            ledger.record(VasEntry {
                tx_id: TxId {
                    bank_code: f[1].to_string(),
                    transaction_no: f[2].to_string(),
                },
                student_id: StudentId(f[3].to_string()),
                channel: Channel::parse(f[4]).ok_or_else(|| format!("bad channel {}", f[4]))?,
                paycode: Paycode::parse(f[5]).ok_or_else(|| format!("bad paycode {}", f[5]))?,
                amount: Money::new(f[6].parse().map_err(|_| format!("bad amount {}", f[6]))?),
                outcome: VasOutcome::parse(f[7]).ok_or_else(|| format!("bad outcome {}", f[7]))?,
                at: Timestamp::parse_wire(f[8]).map_err(|e| format!("{e}"))?,
            });
        }
        Ok(ledger)
    }
}

// ---------------------------------------------------------------------------
// Attempt outcomes and scenario results
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttemptOutcome {
    Success,
    Reversed,
    Orphan,
    /// Empty bill response: nothing to pay.
    NoBill,
    /// Unknown account at the bill-request stage.
    WrongAccount,
    /// All sends of a message were lost.
    Timeout,
    WrongAmount,
    BillIsZero,
}

impl AttemptOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            AttemptOutcome::Success => "SUCCESS",
            AttemptOutcome::Reversed => "REVERSED",
            AttemptOutcome::Orphan => "ORPHAN",
            AttemptOutcome::NoBill => "NO_BILL",
            AttemptOutcome::WrongAccount => "WRONG_ACCOUNT",
            AttemptOutcome::Timeout => "TIMEOUT",
            AttemptOutcome::WrongAmount => "WRONG_AMOUNT",
            AttemptOutcome::BillIsZero => "BILL_IS_ZERO",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScenarioResult {
    pub attempted: u64,
    pub success: u64,
    pub reversed: u64,
    pub orphans: u64,
    pub no_bill: u64,
    pub wrong_account: u64,
    pub timeouts: u64,
    pub wrong_amount: u64,
    pub bill_is_zero: u64,
    /// Resends beyond the first send of a message.
    pub retries: u64,
    pub duplicates: u64,
    pub messages_processed: u64,
    pub max_latency_ms: u64,
}

impl ScenarioResult {
    fn tally(&mut self, outcome: AttemptOutcome) {
        self.attempted += 1;
        match outcome {
            AttemptOutcome::Success => self.success += 1,
            AttemptOutcome::Reversed => self.reversed += 1,
            AttemptOutcome::Orphan => self.orphans += 1,
            AttemptOutcome::NoBill => self.no_bill += 1,
            AttemptOutcome::WrongAccount => self.wrong_account += 1,
            AttemptOutcome::Timeout => self.timeouts += 1,
            AttemptOutcome::WrongAmount => self.wrong_amount += 1,
            AttemptOutcome::BillIsZero => self.bill_is_zero += 1,
        }
    }

    pub fn failures(&self) -> u64 {
        self.attempted - self.success
    }

    /// `key=value` lines, fixed order; byte-identical for identical runs.
    pub fn render_kv(&self) -> String {
        format!(
            "attempted={}\nsuccess={}\nreversed={}\norphans={}\nno_bill={}\nwrong_account={}\ntimeouts={}\nwrong_amount={}\nbill_is_zero={}\nretries={}\nduplicates={}\nmessages_processed={}\nmax_latency_ms={}\n",
            self.attempted,
            self.success,
            self.reversed,
            self.orphans,
            self.no_bill,
            self.wrong_account,
            self.timeouts,
            self.wrong_amount,
            self.bill_is_zero,
            self.retries,
            self.duplicates,
            self.messages_processed,
            self.max_latency_ms,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScenarioError {
    Transport(TransportError),
    /// The UPS answered something the protocol does not allow here.
    UnexpectedReply {
        sent: String,
        got: String,
    },
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioError::Transport(e) => write!(f, "{e}"),
            ScenarioError::UnexpectedReply { sent, got } => {
                write!(f, "unexpected reply {got:?} to {sent:?}")
            }
        }
    }
}

impl core::error::Error for ScenarioError {}

impl From<TransportError> for ScenarioError {
    fn from(e: TransportError) -> ScenarioError {
        ScenarioError::Transport(e)
    }
}

// ---------------------------------------------------------------------------
// The simulator
// ---------------------------------------------------------------------------

/// A sweep target: one client payment attempt against a student, optionally
/// pinned to a paycode (otherwise the first unpaid item is paid).
pub type SweepTarget = (StudentId, Option<Paycode>);

pub struct ScenarioOutput {
    pub result: ScenarioResult,
    pub vas_ledger: VasLedger,
    /// Wire log: ATTEMPT/OUTCOME markers plus every send with its fate.
    pub replay_log: Vec<String>,
}

pub struct VasSim<T: UpsTransport> {
    transport: T,
    plan: FaultPlan,
    latency_ms: u64,
    home_bank: String,
    clearing_banks: Vec<String>,
    institution: String,
    clock: Timestamp,
    next_index: u64,
    ledger: VasLedger,
    log: Vec<String>,
    result: ScenarioResult,
}

/// Per-attempt fault switches, either sampled or pinned by an override.
struct AttemptFaults {
    rng: SplitMix64,
    overridden: Option<FaultKind>,
}

impl AttemptFaults {
    fn sample(&mut self, kind: FaultKind, rate: f64) -> bool {
        match self.overridden {
            Some(k) => k == kind && self.take_once(kind),
            None => self.rng.chance(rate),
        }
    }

    /// An override fires exactly once, at its first natural point.
    fn take_once(&mut self, kind: FaultKind) -> bool {
        if self.overridden == Some(kind) {
            self.overridden = None;
            true
        } else {
            false
        }
    }
}

impl<T: UpsTransport> VasSim<T> {
    pub fn new(config: &ScenarioConfig, transport: T) -> VasSim<T> {
        VasSim {
            transport,
            plan: config.faults.clone(),
            latency_ms: config.latency_ms,
            home_bank: config.home_bank.clone(),
            clearing_banks: config.clearing_banks.clone(),
            institution: config.institution.clone(),
            clock: config.period.start(),
            next_index: 0,
            ledger: VasLedger::default(),
            log: Vec::new(),
            result: ScenarioResult::default(),
        }
    }

    pub fn result(&self) -> &ScenarioResult {
        &self.result
    }

    pub fn ledger(&self) -> &VasLedger {
        &self.ledger
    }

    pub fn finish(self) -> ScenarioOutput {
        ScenarioOutput {
            result: self.result,
            vas_ledger: self.ledger,
            replay_log: self.log,
        }
    }

    /// One client payment attempt, end to end. `chosen_paycode` pins the
    /// bill item; `clearing_override` forces the clearing-anomaly amount
    /// (testing hook; scenario runs derive it from the fault plan).
    pub fn submit_client_payment(
        &mut self,
        channel: Channel,
        student_id: &StudentId,
        chosen_paycode: Option<Paycode>,
        clearing_override: Option<Money>,
    ) -> Result<AttemptOutcome, ScenarioError> {
        let index = self.next_index;
        self.next_index += 1;
        let mut faults = AttemptFaults {
            rng: self.plan.fault_rng(index),
            overridden: self.plan.overrides.get(&index).copied(),
        };

        let anomaly = clearing_override.is_some()
            || faults.sample(FaultKind::ClearingAnomaly, self.plan.clearing_anomaly_rate);
        let channel = if anomaly { Channel::Clearing } else { channel };
        let bank_code = if channel == Channel::Clearing {
            self.clearing_banks[faults.rng.pick(self.clearing_banks.len())].clone()
        } else {
            self.home_bank.clone()
        };
        let transaction_no = format!("TX{index:08}");

        let attempt_start = self.clock;
        self.log.push(format!(
            "ATTEMPT|{index}|{}|{}|{student_id}",
            attempt_start.wire(),
            channel
        ));

        let outcome = self.run_attempt(
            &mut faults,
            anomaly,
            channel,
            student_id,
            &bank_code,
            &transaction_no,
            chosen_paycode,
            clearing_override,
        )?;

        let latency = (self.clock.millis() - attempt_start.millis()).max(0) as u64;
        self.result.max_latency_ms = self.result.max_latency_ms.max(latency);
        self.result.tally(outcome);
        self.log
            .push(format!("OUTCOME|{index}|{}|{latency}", outcome.as_str()));
        Ok(outcome)
    }

    #[allow(clippy::too_many_arguments)]
    fn run_attempt(
        &mut self,
        faults: &mut AttemptFaults,
        anomaly: bool,
        channel: Channel,
        student_id: &StudentId,
        bank_code: &str,
        transaction_no: &str,
        chosen_paycode: Option<Paycode>,
        clearing_override: Option<Money>,
    ) -> Result<AttemptOutcome, ScenarioError> {
        // Phase 1: bill request, sent up to 3 times.
        let Some(response) =
            self.exchange_bill_request(faults, channel, student_id, bank_code, transaction_no)?
        else {
            return Ok(AttemptOutcome::Timeout);
        };
        if response.response_code == ResponseCode::UnknownStudent {
            return Ok(AttemptOutcome::WrongAccount);
        }
        let item = match chosen_paycode {
            Some(code) => response.items.iter().find(|i| i.paycode == code),
            None => response.items.first(),
        };
        let Some(item) = item else {
            return Ok(AttemptOutcome::NoBill);
        };

        // The bank accepts the client's money here; everything after this
        // point must end in settled, reversed, refused or refunded.
        let amount = if anomaly {
            clearing_override.unwrap_or(if item.amount.idr() <= 1 {
                Money::new(item.amount.idr() + 1)
            } else {
                Money::new(item.amount.idr() - 1)
            })
        } else {
            item.amount
        };
        let payment = PaymentMessage {
            transaction_type: TransactionType::Payment,
            student_id: student_id.clone(),
            paycode: item.paycode,
            amount,
            ccy_code: String::from(protocol::CURRENCY),
            bank_code: bank_code.to_string(),
            transaction_no: transaction_no.to_string(),
            trans_datetime: self.clock,
            del_channel: channel,
            institution_code: self.institution.clone(),
        };
        self.ledger.record(VasEntry {
            tx_id: payment.tx_id(),
            student_id: student_id.clone(),
            channel,
            paycode: item.paycode,
            amount,
            outcome: VasOutcome::Accepted,
            at: self.clock,
        });

        // Phase 2: payment, sent up to 3 times.
        let tx_id = payment.tx_id();
        match self.exchange_payment(faults, &payment, anomaly)? {
            PaymentPhase::Delivered(PaymentStatus::Success) => Ok(AttemptOutcome::Success),
            PaymentPhase::Delivered(PaymentStatus::WrongAmount) => {
                if anomaly {
                    // Clearing already settled the funds; the bank keeps the
                    // entry even though the UPS refused it.
                    self.ledger.set_outcome(&tx_id, VasOutcome::Orphan);
                    Ok(AttemptOutcome::Orphan)
                } else {
                    self.ledger.set_outcome(&tx_id, VasOutcome::Refused);
                    Ok(AttemptOutcome::WrongAmount)
                }
            }
            PaymentPhase::Delivered(PaymentStatus::BillIsZero) => {
                self.ledger.set_outcome(&tx_id, VasOutcome::Refused);
                Ok(AttemptOutcome::BillIsZero)
            }
            PaymentPhase::Delivered(PaymentStatus::WrongAccount) => {
                self.ledger.set_outcome(&tx_id, VasOutcome::Refused);
                Ok(AttemptOutcome::WrongAccount)
            }
            PaymentPhase::AckLost => {
                // Fig. 3(b): no acknowledgment, so cancel the payment.
                match self.send_reversal(&payment)? {
                    ReversalStatus::Success => {
                        self.ledger.set_outcome(&tx_id, VasOutcome::Reversed);
                        Ok(AttemptOutcome::Reversed)
                    }
                    ReversalStatus::Fail => {
                        // Nothing was committed on the UPS side either.
                        self.ledger.set_outcome(&tx_id, VasOutcome::TimedOut);
                        Ok(AttemptOutcome::Timeout)
                    }
                }
            }
            PaymentPhase::Undelivered => {
                self.ledger.set_outcome(&tx_id, VasOutcome::TimedOut);
                Ok(AttemptOutcome::Timeout)
            }
        }
    }

    fn exchange_bill_request(
        &mut self,
        faults: &mut AttemptFaults,
        channel: Channel,
        student_id: &StudentId,
        bank_code: &str,
        transaction_no: &str,
    ) -> Result<Option<BillResponse>, ScenarioError> {
        for send in 0..MAX_SENDS {
            if send > 0 {
                self.result.retries += 1;
            }
            let request = BillRequest {
                student_id: student_id.clone(),
                transaction_no: transaction_no.to_string(),
                bank_code: bank_code.to_string(),
                trans_datetime: self.clock,
                del_channel: channel,
                institution_code: self.institution.clone(),
            };
            let line = protocol::encode(&WireMessage::BillRequest(request))
                .expect("bill request fields are clean");
            if faults.sample(FaultKind::DropRequest, self.plan.drop_request_rate) {
                self.drop_send("V>U", &line);
                continue;
            }
            let mut reply = self.deliver(&line)?;
            if faults.sample(FaultKind::Duplicate, self.plan.duplicate_rate) {
                self.result.duplicates += 1;
                reply = self.deliver(&line)?;
            }
            if faults.sample(FaultKind::DropResponse, self.plan.drop_response_rate) {
                self.log.push(format!("U>V|drop|{reply}"));
                continue;
            }
            self.log.push(format!("U>V|ok|{reply}"));
            match protocol::decode(&reply) {
                Ok(WireMessage::BillResponse(resp)) => return Ok(Some(resp)),
                _ => {
                    return Err(ScenarioError::UnexpectedReply {
                        sent: line,
                        got: reply,
                    })
                }
            }
        }
        Ok(None)
    }

    fn exchange_payment(
        &mut self,
        faults: &mut AttemptFaults,
        payment: &PaymentMessage,
        anomaly: bool,
    ) -> Result<PaymentPhase, ScenarioError> {
        for send in 0..MAX_SENDS {
            if send > 0 {
                self.result.retries += 1;
            }
            let message = PaymentMessage {
                trans_datetime: self.clock,
                ..payment.clone()
            };
            let line =
                protocol::encode(&WireMessage::Payment(message)).expect("payment fields are clean");
            // The anomaly models a settlement that did reach the UPS, so the
            // delivery legs are exempt from sampled drops.
            if !anomaly && faults.sample(FaultKind::DropRequest, self.plan.drop_request_rate) {
                self.drop_send("V>U", &line);
                continue;
            }
            let mut reply = self.deliver(&line)?;
            if !anomaly && faults.sample(FaultKind::Duplicate, self.plan.duplicate_rate) {
                self.result.duplicates += 1;
                reply = self.deliver(&line)?;
            }
            if !anomaly && faults.sample(FaultKind::DropAck, self.plan.drop_ack_rate) {
                self.log.push(format!("U>V|drop|{reply}"));
                return Ok(PaymentPhase::AckLost);
            }
            self.log.push(format!("U>V|ok|{reply}"));
            match protocol::decode(&reply) {
                Ok(WireMessage::PaymentStatus(status)) => {
                    return Ok(PaymentPhase::Delivered(status))
                }
                _ => {
                    return Err(ScenarioError::UnexpectedReply {
                        sent: line,
                        got: reply,
                    })
                }
            }
        }
        Ok(PaymentPhase::Undelivered)
    }

    /// Reversal delivery is the bank's own consistency guarantee; it is
    /// retried out-of-band until it lands, so the simulator delivers it
    /// reliably.
    fn send_reversal(&mut self, payment: &PaymentMessage) -> Result<ReversalStatus, ScenarioError> {
        let reversal = PaymentMessage {
            transaction_type: TransactionType::Reversal,
            trans_datetime: self.clock,
            ..payment.clone()
        };
        let line =
            protocol::encode(&WireMessage::Reversal(reversal)).expect("reversal fields are clean");
        let reply = self.deliver(&line)?;
        self.log.push(format!("U>V|ok|{reply}"));
        match protocol::decode(&reply) {
            Ok(WireMessage::ReversalStatus(status)) => Ok(status),
            _ => Err(ScenarioError::UnexpectedReply {
                sent: line,
                got: reply,
            }),
        }
    }

    /// Deliver one line to the UPS: the UPS spends one latency unit
    /// processing it.
    fn deliver(&mut self, line: &str) -> Result<String, ScenarioError> {
        self.log.push(format!("V>U|ok|{line}"));
        self.clock = self.clock.add_millis(self.latency_ms as i64);
        self.result.messages_processed += 1;
        Ok(self.transport.exchange(line)?)
    }

    /// A lost send costs the same latency in timeout waiting.
    fn drop_send(&mut self, dir: &str, line: &str) {
        self.log.push(format!("{dir}|drop|{line}"));
        self.clock = self.clock.add_millis(self.latency_ms as i64);
    }
}

enum PaymentPhase {
    Delivered(PaymentStatus),
    AckLost,
    Undelivered,
}

/// Replay a whole scenario: the schedule picks targets and channels, every
/// attempt runs the full client protocol, and the output is a pure function
/// of (config, targets).
pub fn run_scenario<T: UpsTransport>(
    config: &ScenarioConfig,
    targets: &[SweepTarget],
    transport: T,
) -> Result<ScenarioOutput, ScenarioError> {
    let mut sim = VasSim::new(config, transport);
    let mut schedule_rng = SplitMix64::new(config.faults.seed ^ 0x5DEE_CE66_D1CE_B00C);
    match config.schedule {
        Schedule::Sweep => {
            for (student_id, paycode) in targets {
                let channel = Channel::ALL[schedule_rng.pick(Channel::ALL.len())];
                sim.submit_client_payment(channel, student_id, *paycode, None)?;
            }
        }
        Schedule::Random { transactions } => {
            for _ in 0..transactions {
                if targets.is_empty() {
                    break;
                }
                let (student_id, paycode) = &targets[schedule_rng.pick(targets.len())];
                let channel = Channel::ALL[schedule_rng.pick(Channel::ALL.len())];
                sim.submit_client_payment(channel, student_id, *paycode, None)?;
            }
        }
    }
    Ok(sim.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{BillComputeCommand, ComputeTarget, IngestBatch, StudentScope, UpsEngine};
    use crate::ledger::testutil::ts;
    use crate::ledger::{DegreeLevel, Semester, StudentEnrollment};

    fn p2010_1() -> AcademicPeriod {
        AcademicPeriod::new(2010, Semester::Regular1)
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
        let ids: Vec<StudentId> = students.iter().map(|s| s.student_id.clone()).collect();
        engine
            .ingest_academic_data(&IngestBatch {
                students,
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
        (engine, ids)
    }

    fn sweep_targets(ids: &[StudentId]) -> Vec<SweepTarget> {
        ids.iter().map(|id| (id.clone(), None)).collect()
    }

    #[test]
    fn fault_free_sweep_pays_everyone() {
        let (mut engine, ids) = engine_with_students(100);
        let config = ScenarioConfig::new(p2010_1(), Schedule::Sweep);
        let output = run_scenario(
            &config,
            &sweep_targets(&ids),
            EngineTransport {
                engine: &mut engine,
            },
        )
        .unwrap();
        assert_eq!(output.result.attempted, 100);
        assert_eq!(output.result.success, 100);
        assert_eq!(output.result.reversed, 0);
        assert_eq!(output.result.orphans, 0);
        assert_eq!(output.result.retries, 0);
        assert_eq!(output.result.max_latency_ms, 2_000);
        assert_eq!(engine.tables().payment_count(), 100);
        for id in &ids {
            assert!(engine.tables().get_unpaid_bills(id, None).is_empty());
        }
    }

    #[test]
    fn drop_ack_override_reverses_payment() {
        let (mut engine, ids) = engine_with_students(3);
        let mut config = ScenarioConfig::new(p2010_1(), Schedule::Sweep);
        config.faults.overrides.insert(1, FaultKind::DropAck);
        let output = run_scenario(
            &config,
            &sweep_targets(&ids),
            EngineTransport {
                engine: &mut engine,
            },
        )
        .unwrap();
        assert_eq!(output.result.success, 2);
        assert_eq!(output.result.reversed, 1);

        // The reversed student's bill is unpaid again; the bank entry says
        // REVERSED; the UPS row is flagged reversed.
        let reversed_entry = output
            .vas_ledger
            .iter()
            .find(|e| e.outcome == VasOutcome::Reversed)
            .unwrap();
        assert_eq!(
            engine
                .tables()
                .get_unpaid_bills(&reversed_entry.student_id, None)
                .len(),
            1
        );
        let tx = engine.tables().payment(&reversed_entry.tx_id).unwrap();
        assert!(tx.reversed);
    }

    #[test]
    fn clearing_anomaly_makes_orphan() {
        let (mut engine, ids) = engine_with_students(2);
        let mut config = ScenarioConfig::new(p2010_1(), Schedule::Sweep);
        config
            .faults
            .overrides
            .insert(0, FaultKind::ClearingAnomaly);
        let output = run_scenario(
            &config,
            &sweep_targets(&ids),
            EngineTransport {
                engine: &mut engine,
            },
        )
        .unwrap();
        assert_eq!(output.result.orphans, 1);
        assert_eq!(output.result.success, 1);

        let orphan = output
            .vas_ledger
            .iter()
            .find(|e| e.outcome == VasOutcome::Orphan)
            .unwrap();
        assert_eq!(orphan.channel, Channel::Clearing);
        // Bank holds the money; UPS never recorded the transaction.
        assert!(engine.tables().payment(&orphan.tx_id).is_none());
        // The student's bill is still unpaid.
        assert_eq!(
            engine
                .tables()
                .get_unpaid_bills(&orphan.student_id, None)
                .len(),
            1
        );
    }

    #[test]
    fn drop_request_retries_within_bound() {
        let (mut engine, ids) = engine_with_students(1);
        let mut config = ScenarioConfig::new(p2010_1(), Schedule::Sweep);
        config.faults.overrides.insert(0, FaultKind::DropRequest);
        let output = run_scenario(
            &config,
            &sweep_targets(&ids),
            EngineTransport {
                engine: &mut engine,
            },
        )
        .unwrap();
        assert_eq!(output.result.success, 1);
        assert_eq!(output.result.retries, 1);
        // One dropped bill request send appears in the log.
        assert!(output
            .replay_log
            .iter()
            .any(|l| l.starts_with("V>U|drop|BILLREQ")));
    }

    #[test]
    fn duplicate_delivery_keeps_single_ledger_row() {
        let (mut engine, ids) = engine_with_students(1);
        let mut config = ScenarioConfig::new(p2010_1(), Schedule::Sweep);
        config.faults.overrides.insert(0, FaultKind::Duplicate);
        let output = run_scenario(
            &config,
            &sweep_targets(&ids),
            EngineTransport {
                engine: &mut engine,
            },
        )
        .unwrap();
        assert_eq!(output.result.success, 1);
        assert_eq!(output.result.duplicates, 1);
        assert_eq!(engine.tables().payment_count(), 1);
    }

    #[test]
    fn unknown_student_is_wrong_account() {
        let (mut engine, _) = engine_with_students(1);
        let config = ScenarioConfig::new(p2010_1(), Schedule::Sweep);
        let mut sim = VasSim::new(
            &config,
            EngineTransport {
                engine: &mut engine,
            },
        );
        let outcome = sim
            .submit_client_payment(Channel::Atm, &StudentId::from("ghost"), None, None)
            .unwrap();
        assert_eq!(outcome, AttemptOutcome::WrongAccount);
        assert!(sim.ledger().is_empty());
    }

    #[test]
    fn fully_paid_student_yields_no_bill() {
        let (mut engine, ids) = engine_with_students(1);
        let config = ScenarioConfig::new(p2010_1(), Schedule::Sweep);
        let mut sim = VasSim::new(
            &config,
            EngineTransport {
                engine: &mut engine,
            },
        );
        assert_eq!(
            sim.submit_client_payment(Channel::Atm, &ids[0], None, None)
                .unwrap(),
            AttemptOutcome::Success
        );
        assert_eq!(
            sim.submit_client_payment(Channel::Atm, &ids[0], None, None)
                .unwrap(),
            AttemptOutcome::NoBill
        );
    }

    #[test]
    fn same_seed_same_everything() {
        let run = || {
            let (mut engine, ids) = engine_with_students(50);
            let mut config = ScenarioConfig::new(p2010_1(), Schedule::Sweep);
            config.faults.seed = 42;
            config.faults.drop_request_rate = 0.1;
            config.faults.drop_ack_rate = 0.05;
            config.faults.duplicate_rate = 0.05;
            config.faults.clearing_anomaly_rate = 0.02;
            let output = run_scenario(
                &config,
                &sweep_targets(&ids),
                EngineTransport {
                    engine: &mut engine,
                },
            )
            .unwrap();
            (output.result, output.replay_log, output.vas_ledger, engine)
        };
        let (r1, log1, vas1, e1) = run();
        let (r2, log2, vas2, e2) = run();
        assert_eq!(r1, r2);
        assert_eq!(log1, log2);
        assert_eq!(vas1, vas2);
        assert_eq!(e1.tables(), e2.tables());
    }

    #[test]
    fn adding_attempts_never_perturbs_earlier_faults() {
        let outcomes = |n: usize| {
            let (mut engine, ids) = engine_with_students(n);
            let mut config = ScenarioConfig::new(p2010_1(), Schedule::Sweep);
            config.faults.seed = 7;
            config.faults.drop_ack_rate = 0.2;
            let output = run_scenario(
                &config,
                &sweep_targets(&ids),
                EngineTransport {
                    engine: &mut engine,
                },
            )
            .unwrap();
            output
                .replay_log
                .iter()
                .filter(|l| l.starts_with("OUTCOME|"))
                .cloned()
                .collect::<Vec<_>>()
        };
        let short = outcomes(20);
        let long = outcomes(40);
        assert_eq!(short[..], long[..20]);
    }

    #[test]
    fn retry_bound_is_never_exceeded() {
        // With drop_request_rate = 1.0 every send is lost: exactly 3 sends,
        // then ChannelTimeout.
        let (mut engine, ids) = engine_with_students(1);
        let mut config = ScenarioConfig::new(p2010_1(), Schedule::Sweep);
        config.faults.drop_request_rate = 1.0;
        let output = run_scenario(
            &config,
            &sweep_targets(&ids),
            EngineTransport {
                engine: &mut engine,
            },
        )
        .unwrap();
        assert_eq!(output.result.timeouts, 1);
        let sends = output
            .replay_log
            .iter()
            .filter(|l| l.contains("|BILLREQ|"))
            .count();
        assert_eq!(sends, 3);
        assert_eq!(output.result.retries, 2);
    }

    #[test]
    fn vas_ledger_lines_round_trip() {
        let (mut engine, ids) = engine_with_students(5);
        let mut config = ScenarioConfig::new(p2010_1(), Schedule::Sweep);
        config
            .faults
            .overrides
            .insert(2, FaultKind::ClearingAnomaly);
        let output = run_scenario(
            &config,
            &sweep_targets(&ids),
            EngineTransport {
                engine: &mut engine,
            },
        )
        .unwrap();
        let lines = output.vas_ledger.to_lines();
        let parsed = VasLedger::from_lines(lines.iter().map(|s| s.as_str())).unwrap();
        assert_eq!(parsed, output.vas_ledger);
    }

    #[test]
    fn config_parsing() {
        let text = "\
# scenario file
[scenario]
period = 2010-1
schedule = random
transactions = 500
seed = 99
latency_ms = 500

[faults]
drop_ack_rate = 0.01
clearing_anomaly_rate = 0.002

[overrides]
10 = drop_ack
20 = clearing_anomaly
";
        let config = parse_scenario_config(text).unwrap();
        assert_eq!(config.period, p2010_1());
        assert_eq!(config.schedule, Schedule::Random { transactions: 500 });
        assert_eq!(config.faults.seed, 99);
        assert_eq!(config.latency_ms, 500);
        assert_eq!(config.faults.drop_ack_rate, 0.01);
        assert_eq!(config.faults.overrides.len(), 2);
        assert_eq!(config.faults.overrides[&10], FaultKind::DropAck);

        assert!(parse_scenario_config("[scenario]\nschedule = sweep\n").is_err());
        assert!(parse_scenario_config("[scenario]\nperiod = 2010-1\nbogus = 1\n").is_err());
        assert!(parse_scenario_config("[faults]\ndrop_ack_rate = 2.0\n").is_err());
        assert!(matches!(
            parse_scenario_config("[scenario]\nperiod = 2010-1\n[faults]\ndrop_ack_rate = 2.0\n"),
            Err(ConfigError::BadValue { .. })
        ));
    }

    #[test]
    fn random_schedule_is_deterministic() {
        let run = |seed: u64| {
            let (mut engine, ids) = engine_with_students(20);
            let mut config = ScenarioConfig::new(p2010_1(), Schedule::Random { transactions: 100 });
            config.faults.seed = seed;
            let output = run_scenario(
                &config,
                &sweep_targets(&ids),
                EngineTransport {
                    engine: &mut engine,
                },
            )
            .unwrap();
            output.result
        };
        assert_eq!(run(5), run(5));
        // 100 attempts against 20 single-bill students: 20 successes, the
        // rest bounce off empty bill responses.
        let result = run(5);
        assert_eq!(result.attempted, 100);
        assert_eq!(result.success, 20);
        assert_eq!(result.no_bill, 80);
    }
}
