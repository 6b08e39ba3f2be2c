//! Pipe-delimited wire codec for the VAS <-> UPS exchange.
//!
//! Six message kinds travel as single UTF-8 lines, `KIND|field|...|field`,
//! fields in dictionary order. Repeated bill items are `paycode:amount`
//! pairs joined by commas; timestamps are 14-digit `YYYYMMDDHHMMSS`. The
//! delimiter characters `|`, `,` and `:` are banned from field values, so no
//! escaping exists anywhere. Decoding is total: any byte input produces
//! either a message or a typed error, never a panic.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::ledger::{Bill, Paycode, StudentId};
use crate::money::Money;
use crate::time::Timestamp;

/// Fixed product/biller code carried verbatim in every bill response.
pub const PRODUCT_CODE: &str = "360";
/// The only currency on this wire.
pub const CURRENCY: &str = "IDR";

pub const KIND_BILL_REQUEST: &str = "BILLREQ";
pub const KIND_BILL_RESPONSE: &str = "BILLRESP";
pub const KIND_PAYMENT: &str = "PAYMENT";
pub const KIND_REVERSAL: &str = "REVERSAL";
pub const KIND_PAYMENT_STATUS: &str = "PAYSTATUS";
pub const KIND_REVERSAL_STATUS: &str = "REVSTATUS";

// ---------------------------------------------------------------------------
// Field vocabularies
// ---------------------------------------------------------------------------

/// Delivery channel the bank accepted the transaction on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Channel {
    Teller,
    Atm,
    Sms,
    Ebank,
    Clearing,
}

impl Channel {
    pub const ALL: [Channel; 5] = [
        Channel::Teller,
        Channel::Atm,
        Channel::Sms,
        Channel::Ebank,
        Channel::Clearing,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Teller => "TELLER",
            Channel::Atm => "ATM",
            Channel::Sms => "SMS",
            Channel::Ebank => "EBANK",
            Channel::Clearing => "CLEARING",
        }
    }

    pub fn parse(s: &str) -> Option<Channel> {
        Channel::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TransactionType {
    Payment,
    Reversal,
}

impl TransactionType {
    pub fn as_str(self) -> &'static str {
        match self {
            TransactionType::Payment => "PAYMENT",
            TransactionType::Reversal => "REVERSAL",
        }
    }

    pub fn parse(s: &str) -> Option<TransactionType> {
        match s {
            "PAYMENT" => Some(TransactionType::Payment),
            "REVERSAL" => Some(TransactionType::Reversal),
            _ => None,
        }
    }
}

/// Outcome of a payment attempt, as answered by the UPS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PaymentStatus {
    Success,
    WrongAmount,
    BillIsZero,
    WrongAccount,
}

impl PaymentStatus {
    pub const ALL: [PaymentStatus; 4] = [
        PaymentStatus::Success,
        PaymentStatus::WrongAmount,
        PaymentStatus::BillIsZero,
        PaymentStatus::WrongAccount,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PaymentStatus::Success => "SUCCESS",
            PaymentStatus::WrongAmount => "WRONG_AMOUNT",
            PaymentStatus::BillIsZero => "BILL_IS_ZERO",
            PaymentStatus::WrongAccount => "WRONG_ACCOUNT",
        }
    }

    pub fn parse(s: &str) -> Option<PaymentStatus> {
        PaymentStatus::ALL.into_iter().find(|v| v.as_str() == s)
    }
}

impl fmt::Display for PaymentStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ReversalStatus {
    Success,
    Fail,
}

impl ReversalStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ReversalStatus::Success => "SUCCESS",
            ReversalStatus::Fail => "FAIL",
        }
    }

    pub fn parse(s: &str) -> Option<ReversalStatus> {
        match s {
            "SUCCESS" => Some(ReversalStatus::Success),
            "FAIL" => Some(ReversalStatus::Fail),
            _ => None,
        }
    }
}

impl fmt::Display for ReversalStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Bill-response result code. `00` answers a known student, `01` an unknown
/// one; nothing else is on this wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ResponseCode {
    Success,
    UnknownStudent,
}

impl ResponseCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ResponseCode::Success => "00",
            ResponseCode::UnknownStudent => "01",
        }
    }

    pub fn parse(s: &str) -> Option<ResponseCode> {
        match s {
            "00" => Some(ResponseCode::Success),
            "01" => Some(ResponseCode::UnknownStudent),
            _ => None,
        }
    }
}

// ---------------------------------------------------------------------------
// Messages
// ---------------------------------------------------------------------------

/// Bank-side dedup identity of a transaction attempt.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TxId {
    pub bank_code: String,
    pub transaction_no: String,
}

impl fmt::Display for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.bank_code, self.transaction_no)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BillRequest {
    pub student_id: StudentId,
    pub transaction_no: String,
    pub bank_code: String,
    pub trans_datetime: Timestamp,
    pub del_channel: Channel,
    pub institution_code: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BillItem {
    pub paycode: Paycode,
    pub amount: Money,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BillResponse {
    pub response_code: ResponseCode,
    pub product_code: String,
    pub student_id: StudentId,
    pub items: Vec<BillItem>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaymentMessage {
    pub transaction_type: TransactionType,
    pub student_id: StudentId,
    pub paycode: Paycode,
    pub amount: Money,
    pub ccy_code: String,
    pub bank_code: String,
    pub transaction_no: String,
    pub trans_datetime: Timestamp,
    pub del_channel: Channel,
    pub institution_code: String,
}

impl PaymentMessage {
    pub fn tx_id(&self) -> TxId {
        TxId {
            bank_code: self.bank_code.clone(),
            transaction_no: self.transaction_no.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WireMessage {
    BillRequest(BillRequest),
    BillResponse(BillResponse),
    Payment(PaymentMessage),
    Reversal(PaymentMessage),
    PaymentStatus(PaymentStatus),
    ReversalStatus(ReversalStatus),
}

impl WireMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            WireMessage::BillRequest(_) => KIND_BILL_REQUEST,
            WireMessage::BillResponse(_) => KIND_BILL_RESPONSE,
            WireMessage::Payment(_) => KIND_PAYMENT,
            WireMessage::Reversal(_) => KIND_REVERSAL,
            WireMessage::PaymentStatus(_) => KIND_PAYMENT_STATUS,
            WireMessage::ReversalStatus(_) => KIND_REVERSAL_STATUS,
        }
    }
}

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    /// Wrong field count for the tagged kind, or an empty line.
    MalformedLine,
    UnknownKind(String),
    /// A field failed its vocabulary (enum) check.
    InvalidEnum {
        field: &'static str,
        value: String,
    },
    NonNumericAmount(String),
    /// Amounts on the wire are strictly positive.
    InvalidAmount(i64),
    InvalidTimestamp(String),
    /// A free-text field is empty or contains a delimiter character.
    InvalidField {
        field: &'static str,
        value: String,
    },
    InvalidUtf8,
}

impl fmt::Display for ProtocolError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProtocolError::MalformedLine => write!(f, "malformed line"),
            ProtocolError::UnknownKind(kind) => write!(f, "unknown message kind {kind:?}"),
            ProtocolError::InvalidEnum { field, value } => {
                write!(f, "invalid {field} value {value:?}")
            }
            ProtocolError::NonNumericAmount(v) => write!(f, "non-numeric amount {v:?}"),
            ProtocolError::InvalidAmount(v) => write!(f, "amount {v} out of range"),
            ProtocolError::InvalidTimestamp(v) => write!(f, "invalid timestamp {v:?}"),
            ProtocolError::InvalidField { field, value } => {
                write!(f, "invalid {field} field {value:?}")
            }
            ProtocolError::InvalidUtf8 => write!(f, "input is not UTF-8"),
        }
    }
}

impl core::error::Error for ProtocolError {}

// ---------------------------------------------------------------------------
// Encoding
// ---------------------------------------------------------------------------

fn check_field(field: &'static str, value: &str) -> Result<(), ProtocolError> {
    let clean = !value.is_empty()
        && !value
            .chars()
            .any(|c| matches!(c, '|' | ',' | ':' | '\n' | '\r'));
    if clean {
        Ok(())
    } else {
        Err(ProtocolError::InvalidField {
            field,
            value: value.to_string(),
        })
    }
}

fn push_field(out: &mut String, value: &str) {
    out.push('|');
    out.push_str(value);
}

/// Encode a message as one wire line (no trailing newline). Equal messages
/// encode to byte-identical lines.
pub fn encode(message: &WireMessage) -> Result<String, ProtocolError> {
    let mut line = String::from(message.kind());
    match message {
        WireMessage::BillRequest(req) => {
            check_field("student_id", &req.student_id.0)?;
            check_field("transaction_no", &req.transaction_no)?;
            check_field("bank_code", &req.bank_code)?;
            check_field("institution_code", &req.institution_code)?;
            push_field(&mut line, &req.student_id.0);
            push_field(&mut line, &req.transaction_no);
            push_field(&mut line, &req.bank_code);
            push_field(&mut line, &req.trans_datetime.wire());
            push_field(&mut line, req.del_channel.as_str());
            push_field(&mut line, &req.institution_code);
        }
        WireMessage::BillResponse(resp) => {
            check_field("student_id", &resp.student_id.0)?;
            if resp.product_code != PRODUCT_CODE {
                return Err(ProtocolError::InvalidField {
                    field: "product_code",
                    value: resp.product_code.clone(),
                });
            }
            push_field(&mut line, resp.response_code.as_str());
            push_field(&mut line, &resp.product_code);
            push_field(&mut line, &resp.student_id.0);
            let mut items = String::new();
            for (i, item) in resp.items.iter().enumerate() {
                if item.amount.idr() <= 0 {
                    return Err(ProtocolError::InvalidAmount(item.amount.idr()));
                }
                if i > 0 {
                    items.push(',');
                }
                items.push_str(item.paycode.as_str());
                items.push(':');
                items.push_str(&format!("{}", item.amount));
            }
            push_field(&mut line, &items);
        }
        WireMessage::Payment(msg) | WireMessage::Reversal(msg) => {
            let expected = match message {
                WireMessage::Payment(_) => TransactionType::Payment,
                _ => TransactionType::Reversal,
            };
            if msg.transaction_type != expected {
                return Err(ProtocolError::InvalidEnum {
                    field: "transaction_type",
                    value: msg.transaction_type.as_str().to_string(),
                });
            }
            if msg.amount.idr() <= 0 {
                return Err(ProtocolError::InvalidAmount(msg.amount.idr()));
            }
            if msg.ccy_code != CURRENCY {
                return Err(ProtocolError::InvalidEnum {
                    field: "ccy_code",
                    value: msg.ccy_code.clone(),
                });
            }
            check_field("student_id", &msg.student_id.0)?;
            check_field("bank_code", &msg.bank_code)?;
            check_field("transaction_no", &msg.transaction_no)?;
            check_field("institution_code", &msg.institution_code)?;
            push_field(&mut line, msg.transaction_type.as_str());
            push_field(&mut line, &msg.student_id.0);
            push_field(&mut line, msg.paycode.as_str());
            push_field(&mut line, &format!("{}", msg.amount));
            push_field(&mut line, &msg.ccy_code);
            push_field(&mut line, &msg.bank_code);
            push_field(&mut line, &msg.transaction_no);
            push_field(&mut line, &msg.trans_datetime.wire());
            push_field(&mut line, msg.del_channel.as_str());
            push_field(&mut line, &msg.institution_code);
        }
        WireMessage::PaymentStatus(status) => push_field(&mut line, status.as_str()),
        WireMessage::ReversalStatus(status) => push_field(&mut line, status.as_str()),
    }
    Ok(line)
}

// ---------------------------------------------------------------------------
// Decoding
// ---------------------------------------------------------------------------

fn expect_len(fields: &[&str], n: usize) -> Result<(), ProtocolError> {
    if fields.len() == n {
        Ok(())
    } else {
        Err(ProtocolError::MalformedLine)
    }
}

fn parse_free(field: &'static str, value: &str) -> Result<String, ProtocolError> {
    check_field(field, value)?;
    Ok(value.to_string())
}

fn parse_amount(value: &str) -> Result<Money, ProtocolError> {
    let n: i64 = value
        .parse()
        .map_err(|_| ProtocolError::NonNumericAmount(value.to_string()))?;
    if n <= 0 {
        return Err(ProtocolError::InvalidAmount(n));
    }
    Ok(Money::new(n))
}

fn parse_timestamp(value: &str) -> Result<Timestamp, ProtocolError> {
    Timestamp::parse_wire(value).map_err(|e| ProtocolError::InvalidTimestamp(e.0))
}

fn parse_channel(value: &str) -> Result<Channel, ProtocolError> {
    Channel::parse(value).ok_or_else(|| ProtocolError::InvalidEnum {
        field: "del_channel",
        value: value.to_string(),
    })
}

fn parse_paycode(value: &str) -> Result<Paycode, ProtocolError> {
    Paycode::parse(value).ok_or_else(|| ProtocolError::InvalidEnum {
        field: "paycode",
        value: value.to_string(),
    })
}

fn decode_payment_fields(fields: &[&str]) -> Result<PaymentMessage, ProtocolError> {
    expect_len(fields, 10)?;
    let transaction_type =
        TransactionType::parse(fields[0]).ok_or_else(|| ProtocolError::InvalidEnum {
            field: "transaction_type",
            value: fields[0].to_string(),
        })?;
    let ccy_code = fields[4];
    if ccy_code != CURRENCY {
        return Err(ProtocolError::InvalidEnum {
            field: "ccy_code",
            value: ccy_code.to_string(),
        });
    }
    Ok(PaymentMessage {
        transaction_type,
        student_id: StudentId(parse_free("student_id", fields[1])?),
        paycode: parse_paycode(fields[2])?,
        amount: parse_amount(fields[3])?,
        ccy_code: ccy_code.to_string(),
        bank_code: parse_free("bank_code", fields[5])?,
        transaction_no: parse_free("transaction_no", fields[6])?,
        trans_datetime: parse_timestamp(fields[7])?,
        del_channel: parse_channel(fields[8])?,
        institution_code: parse_free("institution_code", fields[9])?,
    })
}

/// Decode one wire line. Total over arbitrary input.
pub fn decode(line: &str) -> Result<WireMessage, ProtocolError> {
    let mut parts = line.split('|');
    let kind = parts.next().ok_or(ProtocolError::MalformedLine)?;
    let fields: Vec<&str> = parts.collect();
    match kind {
        KIND_BILL_REQUEST => {
            expect_len(&fields, 6)?;
            Ok(WireMessage::BillRequest(BillRequest {
                student_id: StudentId(parse_free("student_id", fields[0])?),
                transaction_no: parse_free("transaction_no", fields[1])?,
                bank_code: parse_free("bank_code", fields[2])?,
                trans_datetime: parse_timestamp(fields[3])?,
                del_channel: parse_channel(fields[4])?,
                institution_code: parse_free("institution_code", fields[5])?,
            }))
        }
        KIND_BILL_RESPONSE => {
            expect_len(&fields, 4)?;
            let response_code =
                ResponseCode::parse(fields[0]).ok_or_else(|| ProtocolError::InvalidEnum {
                    field: "response_code",
                    value: fields[0].to_string(),
                })?;
            if fields[1] != PRODUCT_CODE {
                return Err(ProtocolError::InvalidEnum {
                    field: "product_code",
                    value: fields[1].to_string(),
                });
            }
            let mut items = Vec::new();
            if !fields[3].is_empty() {
                for pair in fields[3].split(',') {
                    let (code, amount) =
                        pair.split_once(':').ok_or(ProtocolError::MalformedLine)?;
                    items.push(BillItem {
                        paycode: parse_paycode(code)?,
                        amount: parse_amount(amount)?,
                    });
                }
            }
            Ok(WireMessage::BillResponse(BillResponse {
                response_code,
                product_code: fields[1].to_string(),
                student_id: StudentId(parse_free("student_id", fields[2])?),
                items,
            }))
        }
        KIND_PAYMENT => {
            let msg = decode_payment_fields(&fields)?;
            if msg.transaction_type != TransactionType::Payment {
                return Err(ProtocolError::InvalidEnum {
                    field: "transaction_type",
                    value: msg.transaction_type.as_str().to_string(),
                });
            }
            Ok(WireMessage::Payment(msg))
        }
        KIND_REVERSAL => {
            let msg = decode_payment_fields(&fields)?;
            if msg.transaction_type != TransactionType::Reversal {
                return Err(ProtocolError::InvalidEnum {
                    field: "transaction_type",
                    value: msg.transaction_type.as_str().to_string(),
                });
            }
            Ok(WireMessage::Reversal(msg))
        }
        KIND_PAYMENT_STATUS => {
            expect_len(&fields, 1)?;
            let status =
                PaymentStatus::parse(fields[0]).ok_or_else(|| ProtocolError::InvalidEnum {
                    field: "payment_status",
                    value: fields[0].to_string(),
                })?;
            Ok(WireMessage::PaymentStatus(status))
        }
        KIND_REVERSAL_STATUS => {
            expect_len(&fields, 1)?;
            let status =
                ReversalStatus::parse(fields[0]).ok_or_else(|| ProtocolError::InvalidEnum {
                    field: "reversal_status",
                    value: fields[0].to_string(),
                })?;
            Ok(WireMessage::ReversalStatus(status))
        }
        other => Err(ProtocolError::UnknownKind(other.to_string())),
    }
}

/// Decode raw bytes: UTF-8 validation first, then the line grammar.
pub fn decode_bytes(bytes: &[u8]) -> Result<WireMessage, ProtocolError> {
    let line = core::str::from_utf8(bytes).map_err(|_| ProtocolError::InvalidUtf8)?;
    decode(line)
}

// ---------------------------------------------------------------------------
// Bill response construction
// ---------------------------------------------------------------------------

/// Project a student's unpaid bills into the composite response: one
/// `paycode:amount` item per unpaid bill in (period, paycode) order, under
/// code `00`; an unknown student answers `01` with no items.
pub fn build_bill_response(
    student_id: &StudentId,
    unpaid_bills: &[&Bill],
    known: bool,
) -> BillResponse {
    let mut items: Vec<(crate::ledger::AcademicPeriod, BillItem)> = Vec::new();
    if known {
        for bill in unpaid_bills {
            debug_assert!(bill.is_unpaid());
            debug_assert_eq!(bill.student_id, *student_id);
            items.push((
                bill.period,
                BillItem {
                    paycode: bill.paycode,
                    amount: bill.amount,
                },
            ));
        }
        items.sort_by(|(pa, a), (pb, b)| (pa, a.paycode).cmp(&(pb, b.paycode)));
    }
    BillResponse {
        response_code: if known {
            ResponseCode::Success
        } else {
            ResponseCode::UnknownStudent
        },
        product_code: String::from(PRODUCT_CODE),
        student_id: student_id.clone(),
        items: items.into_iter().map(|(_, item)| item).collect(),
    }
}
