//! Billing mathematics and academic eligibility rules.
//!
//! Everything in this module is a pure function of its arguments plus the
//! injected timestamps. Bills are computed from enrollment, course
//! registration and tariff data; fines from a configured policy; unpaid
//! leftovers roll into a Due-bill; and the three academic gates (course
//! registration, mid-term exams, grade viewing) are answered from the bill
//! set alone.
//!
//! Amount rules, in short:
//!   Bill-1   = registration fee + base credits x credit tariff
//!   total    = registration fee + sum(credits x credit tariff)
//!              + sum(flagged lab/studio/assistant/tutor fees)
//!   Bill-2   = max(0, total - Bill-1 - scholarships), zero bills born paid
//!   Bill-SS  = total, short semesters only
//!   Due-bill = sum of the unpaid remainder of the ending period

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::money::{Money, MoneyOverflow};
use crate::time::Timestamp;

pub const MIN_YEAR: u16 = 1990;
pub const MAX_YEAR: u16 = 2100;

pub const MIN_COURSE_CREDITS: u8 = 1;
pub const MAX_COURSE_CREDITS: u8 = 6;

// ---------------------------------------------------------------------------
// Identifiers and periods
// ---------------------------------------------------------------------------

/// Opaque student account identifier (the virtual-account key on the bank
/// side and the primary key on the university side).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StudentId(pub String);

impl fmt::Display for StudentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for StudentId {
    fn from(s: &str) -> StudentId {
        StudentId(String::from(s))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CourseCode(pub String);

impl fmt::Display for CourseCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for CourseCode {
    fn from(s: &str) -> CourseCode {
        CourseCode(String::from(s))
    }
}

/// Semester within an academic calendar year. Ordering is chronological
/// within the year: regular 1, regular 2, then the short semester.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Semester {
    Regular1,
    Regular2,
    Short,
}

impl Semester {
    pub fn code(self) -> &'static str {
        match self {
            Semester::Regular1 => "1",
            Semester::Regular2 => "2",
            Semester::Short => "S",
        }
    }

    pub fn parse(s: &str) -> Option<Semester> {
        match s {
            "1" => Some(Semester::Regular1),
            "2" => Some(Semester::Regular2),
            "S" => Some(Semester::Short),
            _ => None,
        }
    }

    pub fn is_short(self) -> bool {
        matches!(self, Semester::Short)
    }
}

/// `acad_time`: a calendar year plus semester, e.g. `2010-1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AcademicPeriod {
    pub year: u16,
    pub semester: Semester,
}

impl AcademicPeriod {
    pub fn new(year: u16, semester: Semester) -> AcademicPeriod {
        AcademicPeriod { year, semester }
    }

    pub fn year_in_range(self) -> bool {
        (MIN_YEAR..=MAX_YEAR).contains(&self.year)
    }

    /// Parse the `YYYY-S` textual form used by the CLI and config files.
    pub fn parse(s: &str) -> Option<AcademicPeriod> {
        let (year, sem) = s.split_once('-')?;
        if year.len() != 4 {
            return None;
        }
        let year: u16 = year.parse().ok()?;
        Some(AcademicPeriod::new(year, Semester::parse(sem)?))
    }

    /// Nominal first instant of the semester; scenario clocks start here.
    pub fn start(self) -> Timestamp {
        let (month, day) = match self.semester {
            Semester::Regular1 => (9, 1),
            Semester::Regular2 => (2, 1),
            Semester::Short => (7, 1),
        };
        Timestamp::from_ymd_hms(i32::from(self.year), month, day, 0, 0, 0)
            .expect("period start in calendar range")
    }
}

impl fmt::Display for AcademicPeriod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.year, self.semester.code())
    }
}

// ---------------------------------------------------------------------------
// Paycodes
// ---------------------------------------------------------------------------

/// The bill-line category: the unit of exact payment. Declaration order is
/// the dictionary order used when rendering repeated groups on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Paycode {
    DueBill,
    Bill1,
    Fine1,
    Bill2,
    Fine2,
    BillSs,
    FineSs,
    BillNs,
    TotalBill,
}

impl Paycode {
    pub const ALL: [Paycode; 9] = [
        Paycode::DueBill,
        Paycode::Bill1,
        Paycode::Fine1,
        Paycode::Bill2,
        Paycode::Fine2,
        Paycode::BillSs,
        Paycode::FineSs,
        Paycode::BillNs,
        Paycode::TotalBill,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Paycode::DueBill => "DUE-BILL",
            Paycode::Bill1 => "BILL-1",
            Paycode::Fine1 => "FINE-1",
            Paycode::Bill2 => "BILL-2",
            Paycode::Fine2 => "FINE-2",
            Paycode::BillSs => "BILL-SS",
            Paycode::FineSs => "FINE-SS",
            Paycode::BillNs => "BILL-NS",
            Paycode::TotalBill => "TOTAL-BILL",
        }
    }

    pub fn parse(s: &str) -> Option<Paycode> {
        Paycode::ALL.into_iter().find(|p| p.as_str() == s)
    }

    /// The fine paycode levied when a bill of this paycode goes overdue.
    /// Due-bills and the never-generated BILL-NS/TOTAL-BILL carry no fine.
    pub fn fine_counterpart(self) -> Option<Paycode> {
        match self {
            Paycode::Bill1 => Some(Paycode::Fine1),
            Paycode::Bill2 => Some(Paycode::Fine2),
            Paycode::BillSs => Some(Paycode::FineSs),
            _ => None,
        }
    }

    /// Short semesters never carry Bill-1/Bill-2 family paycodes; regular
    /// semesters never carry the short-semester ones.
    pub fn allowed_in(self, semester: Semester) -> bool {
        match self {
            Paycode::Bill1 | Paycode::Fine1 | Paycode::Bill2 | Paycode::Fine2 => {
                !semester.is_short()
            }
            Paycode::BillSs | Paycode::FineSs => semester.is_short(),
            Paycode::DueBill | Paycode::BillNs | Paycode::TotalBill => true,
        }
    }
}

impl fmt::Display for Paycode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

// ---------------------------------------------------------------------------
// Academic records
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DegreeLevel {
    S1,
    S2,
    S3,
}

impl DegreeLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            DegreeLevel::S1 => "S1",
            DegreeLevel::S2 => "S2",
            DegreeLevel::S3 => "S3",
        }
    }

    pub fn parse(s: &str) -> Option<DegreeLevel> {
        match s {
            "S1" => Some(DegreeLevel::S1),
            "S2" => Some(DegreeLevel::S2),
            "S3" => Some(DegreeLevel::S3),
            _ => None,
        }
    }

    /// Base credit count billed up front: 10 for undergraduates, 5 for
    /// graduate students, unless the ingested record overrides it.
    pub fn default_bill1_credits(self) -> u32 {
        match self {
            DegreeLevel::S1 => 10,
            DegreeLevel::S2 | DegreeLevel::S3 => 5,
        }
    }
}

impl fmt::Display for DegreeLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One active-student record for a period.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StudentEnrollment {
    pub period: AcademicPeriod,
    pub student_id: StudentId,
    pub name: String,
    pub degree_level: DegreeLevel,
    pub pay_credits: bool,
    pub bill1_credits: u32,
    /// Payment-delay approval: overrides every gate to ALLOWED.
    pub dispensation: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CourseRegistration {
    pub period: AcademicPeriod,
    pub student_id: StudentId,
    pub course_code: CourseCode,
    pub credits: u8,
    pub status_lab: bool,
    pub status_studio: bool,
    pub status_assist: bool,
    pub status_tutor: bool,
    pub trans_datetime: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scholarship {
    pub period: AcademicPeriod,
    pub student_id: StudentId,
    pub scholarship_code: String,
    pub amount: Money,
}

// ---------------------------------------------------------------------------
// Tariffs
// ---------------------------------------------------------------------------

/// The nine general tariff constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TariffId {
    RegistrationS1,
    RegistrationS2,
    RegistrationS3,
    DevelopmentS1,
    DevelopmentS2,
    DevelopmentS3,
    CreditS1,
    CreditS2,
    CreditS3,
}

impl TariffId {
    pub const ALL: [TariffId; 9] = [
        TariffId::RegistrationS1,
        TariffId::RegistrationS2,
        TariffId::RegistrationS3,
        TariffId::DevelopmentS1,
        TariffId::DevelopmentS2,
        TariffId::DevelopmentS3,
        TariffId::CreditS1,
        TariffId::CreditS2,
        TariffId::CreditS3,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TariffId::RegistrationS1 => "REGISTRATION_S1",
            TariffId::RegistrationS2 => "REGISTRATION_S2",
            TariffId::RegistrationS3 => "REGISTRATION_S3",
            TariffId::DevelopmentS1 => "DEVELOPMENT_S1",
            TariffId::DevelopmentS2 => "DEVELOPMENT_S2",
            TariffId::DevelopmentS3 => "DEVELOPMENT_S3",
            TariffId::CreditS1 => "CREDIT_S1",
            TariffId::CreditS2 => "CREDIT_S2",
            TariffId::CreditS3 => "CREDIT_S3",
        }
    }

    pub fn parse(s: &str) -> Option<TariffId> {
        TariffId::ALL.into_iter().find(|t| t.as_str() == s)
    }

    pub fn registration_for(level: DegreeLevel) -> TariffId {
        match level {
            DegreeLevel::S1 => TariffId::RegistrationS1,
            DegreeLevel::S2 => TariffId::RegistrationS2,
            DegreeLevel::S3 => TariffId::RegistrationS3,
        }
    }

    pub fn credit_for(level: DegreeLevel) -> TariffId {
        match level {
            DegreeLevel::S1 => TariffId::CreditS1,
            DegreeLevel::S2 => TariffId::CreditS2,
            DegreeLevel::S3 => TariffId::CreditS3,
        }
    }
}

impl fmt::Display for TariffId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The four per-course fee slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FeeKind {
    Lab,
    Studio,
    Assist,
    Tutor,
}

impl FeeKind {
    pub const ALL: [FeeKind; 4] = [
        FeeKind::Lab,
        FeeKind::Studio,
        FeeKind::Assist,
        FeeKind::Tutor,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeeKind::Lab => "lab",
            FeeKind::Studio => "studio",
            FeeKind::Assist => "assist",
            FeeKind::Tutor => "tutor",
        }
    }
}

impl fmt::Display for FeeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A priced per-course fee slot with its catalog code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeeComponent {
    pub code: String,
    pub amount: Money,
}

/// Per-course fee record: any subset of the four slots may be priced.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CourseTariff {
    pub lab: Option<FeeComponent>,
    pub studio: Option<FeeComponent>,
    pub assist: Option<FeeComponent>,
    pub tutor: Option<FeeComponent>,
}

impl CourseTariff {
    pub fn component(&self, kind: FeeKind) -> Option<&FeeComponent> {
        match kind {
            FeeKind::Lab => self.lab.as_ref(),
            FeeKind::Studio => self.studio.as_ref(),
            FeeKind::Assist => self.assist.as_ref(),
            FeeKind::Tutor => self.tutor.as_ref(),
        }
    }
}

/// General and per-course tariffs for one period.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TariffBook {
    pub general: BTreeMap<TariffId, Money>,
    pub course: BTreeMap<CourseCode, CourseTariff>,
}

impl TariffBook {
    pub fn general_amount(&self, id: TariffId) -> Result<Money, BillingError> {
        self.general
            .get(&id)
            .copied()
            .ok_or(BillingError::MissingTariff(id))
    }
}

// ---------------------------------------------------------------------------
// Bills
// ---------------------------------------------------------------------------

/// One payable line item. `datetime_paid` doubles as the paid flag so the
/// two can never disagree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bill {
    pub period: AcademicPeriod,
    pub student_id: StudentId,
    pub paycode: Paycode,
    pub amount: Money,
    pub generate_datetime: Timestamp,
    pub due_date: Timestamp,
    pub datetime_paid: Option<Timestamp>,
}

impl Bill {
    pub fn paid_status(&self) -> bool {
        self.datetime_paid.is_some()
    }

    pub fn is_unpaid(&self) -> bool {
        self.datetime_paid.is_none()
    }

    pub fn is_overdue(&self, now: Timestamp) -> bool {
        self.is_unpaid() && now > self.due_date
    }
}

// ---------------------------------------------------------------------------
// Fines
// ---------------------------------------------------------------------------

/// How overdue-bill fines are priced. The flat default of 100,000 IDR is
/// configuration, not policy handed down from finance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FinePolicy {
    Flat(Money),
    /// Percentage of the overdue amount in basis points, rounded half-up.
    PercentBp(u32),
}

impl Default for FinePolicy {
    fn default() -> FinePolicy {
        FinePolicy::Flat(Money::new(100_000))
    }
}

impl FinePolicy {
    pub fn fine_amount(&self, overdue: Money) -> Result<Money, MoneyOverflow> {
        match *self {
            FinePolicy::Flat(amount) => Ok(amount),
            FinePolicy::PercentBp(bp) => overdue.percent_of_bp(bp),
        }
    }
}

// ---------------------------------------------------------------------------
// Eligibility
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GatedAction {
    CourseRegistration,
    MidtermExam,
    ViewGrades,
}

impl GatedAction {
    pub fn as_str(self) -> &'static str {
        match self {
            GatedAction::CourseRegistration => "COURSE_REGISTRATION",
            GatedAction::MidtermExam => "MIDTERM_EXAM",
            GatedAction::ViewGrades => "VIEW_GRADES",
        }
    }

    pub fn parse(s: &str) -> Option<GatedAction> {
        match s {
            "COURSE_REGISTRATION" => Some(GatedAction::CourseRegistration),
            "MIDTERM_EXAM" => Some(GatedAction::MidtermExam),
            "VIEW_GRADES" => Some(GatedAction::ViewGrades),
            _ => None,
        }
    }
}

impl fmt::Display for GatedAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Eligibility {
    Allowed,
    /// Blocked by the listed unpaid paycodes, dictionary order.
    Blocked(Vec<Paycode>),
}

impl Eligibility {
    pub fn is_allowed(&self) -> bool {
        matches!(self, Eligibility::Allowed)
    }
}

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BillingError {
    MissingTariff(TariffId),
    MissingCourseTariff(CourseCode),
    MissingFeeComponent(CourseCode, FeeKind),
    ForeignRegistration {
        expected: StudentId,
        found: StudentId,
    },
    WrongSemester(Semester),
    EmptyInput,
    AmountOverflow,
}

impl fmt::Display for BillingError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BillingError::MissingTariff(id) => write!(f, "missing general tariff {id}"),
            BillingError::MissingCourseTariff(code) => {
                write!(f, "missing course tariff for {code}")
            }
            BillingError::MissingFeeComponent(code, kind) => {
                write!(f, "course {code} has no {kind} fee but the flag is set")
            }
            BillingError::ForeignRegistration { expected, found } => {
                write!(f, "registration belongs to {found}, expected {expected}")
            }
            BillingError::WrongSemester(sem) => {
                write!(f, "operation not valid in semester {}", sem.code())
            }
            BillingError::EmptyInput => write!(f, "empty input"),
            BillingError::AmountOverflow => write!(f, "amount arithmetic overflowed"),
        }
    }
}

impl core::error::Error for BillingError {}

impl From<MoneyOverflow> for BillingError {
    fn from(_: MoneyOverflow) -> BillingError {
        BillingError::AmountOverflow
    }
}

// ---------------------------------------------------------------------------
// Billing operations
// ---------------------------------------------------------------------------

/// Bill-1: registration fee plus the base credit block (10 credits for S1,
/// 5 otherwise). When `pay_credits` is off only the registration fee is
/// charged.
pub fn compute_bill1(
    enrollment: &StudentEnrollment,
    tariffs: &TariffBook,
    generated_at: Timestamp,
    due_date: Timestamp,
) -> Result<Bill, BillingError> {
    if enrollment.period.semester.is_short() {
        // Short semesters bill through Bill-SS; see compute_bill3.
        return Err(BillingError::WrongSemester(enrollment.period.semester));
    }
    let registration =
        tariffs.general_amount(TariffId::registration_for(enrollment.degree_level))?;
    let amount = if enrollment.pay_credits {
        let credit = tariffs.general_amount(TariffId::credit_for(enrollment.degree_level))?;
        registration.checked_add(credit.checked_mul(enrollment.bill1_credits)?)?
    } else {
        registration
    };
    Ok(Bill {
        period: enrollment.period,
        student_id: enrollment.student_id.clone(),
        paycode: Paycode::Bill1,
        amount,
        generate_datetime: generated_at,
        due_date,
        datetime_paid: None,
    })
}

/// Total semester charge: registration fee, every registered credit, and
/// every flagged lab/studio/assistant/tutor fee, summed item by item.
pub fn compute_total_semester_bill(
    enrollment: &StudentEnrollment,
    registrations: &[CourseRegistration],
    tariffs: &TariffBook,
) -> Result<Money, BillingError> {
    let registration =
        tariffs.general_amount(TariffId::registration_for(enrollment.degree_level))?;
    let credit = tariffs.general_amount(TariffId::credit_for(enrollment.degree_level))?;

    let mut total = registration;
    for reg in registrations {
        if reg.student_id != enrollment.student_id || reg.period != enrollment.period {
            return Err(BillingError::ForeignRegistration {
                expected: enrollment.student_id.clone(),
                found: reg.student_id.clone(),
            });
        }
        total = total.checked_add(credit.checked_mul(u32::from(reg.credits))?)?;
        for (kind, flagged) in [
            (FeeKind::Lab, reg.status_lab),
            (FeeKind::Studio, reg.status_studio),
            (FeeKind::Assist, reg.status_assist),
            (FeeKind::Tutor, reg.status_tutor),
        ] {
            if !flagged {
                continue;
            }
            let course = tariffs
                .course
                .get(&reg.course_code)
                .ok_or_else(|| BillingError::MissingCourseTariff(reg.course_code.clone()))?;
            let component = course
                .component(kind)
                .ok_or_else(|| BillingError::MissingFeeComponent(reg.course_code.clone(), kind))?;
            total = total.checked_add(component.amount)?;
        }
    }
    Ok(total)
}

/// Bill-2: the semester total less Bill-1 and scholarships, clamped at zero.
/// A zero Bill-2 is born paid: no zero-amount payment exists on the wire, so
/// it must never hold a gate closed.
pub fn compute_bill2(
    enrollment: &StudentEnrollment,
    total: Money,
    bill1_amount: Money,
    scholarship_total: Money,
    generated_at: Timestamp,
    due_date: Timestamp,
) -> Result<Bill, BillingError> {
    let deductions = bill1_amount.checked_add(scholarship_total)?;
    let amount = total.saturating_deduct(deductions);
    Ok(Bill {
        period: enrollment.period,
        student_id: enrollment.student_id.clone(),
        paycode: Paycode::Bill2,
        amount,
        generate_datetime: generated_at,
        due_date,
        datetime_paid: if amount.is_zero() {
            Some(generated_at)
        } else {
            None
        },
    })
}

/// Bill-SS: the whole short-semester total in one bill, generated once.
pub fn compute_bill3(
    enrollment: &StudentEnrollment,
    registrations: &[CourseRegistration],
    tariffs: &TariffBook,
    generated_at: Timestamp,
    due_date: Timestamp,
) -> Result<Bill, BillingError> {
    if !enrollment.period.semester.is_short() {
        return Err(BillingError::WrongSemester(enrollment.period.semester));
    }
    let amount = compute_total_semester_bill(enrollment, registrations, tariffs)?;
    Ok(Bill {
        period: enrollment.period,
        student_id: enrollment.student_id.clone(),
        paycode: Paycode::BillSs,
        amount,
        generate_datetime: generated_at,
        due_date,
        datetime_paid: None,
    })
}

/// Emit one fine per overdue bill that has a fine paycode and no fine yet.
/// Re-running at the same instant adds nothing: the fines returned by the
/// first run are part of `bills` on the second.
pub fn apply_fines(
    bills: &[Bill],
    policy: &FinePolicy,
    now: Timestamp,
) -> Result<Vec<Bill>, BillingError> {
    let mut fines: Vec<Bill> = Vec::new();
    for bill in bills {
        let Some(fine_code) = bill.paycode.fine_counterpart() else {
            continue;
        };
        if !bill.is_overdue(now) {
            continue;
        }
        let already_fined = bills
            .iter()
            .chain(fines.iter())
            .any(|b| b.paycode == fine_code && b.period == bill.period);
        if already_fined {
            continue;
        }
        fines.push(Bill {
            period: bill.period,
            student_id: bill.student_id.clone(),
            paycode: fine_code,
            amount: policy.fine_amount(bill.amount)?,
            generate_datetime: now,
            due_date: bill.due_date,
            datetime_paid: None,
        });
    }
    Ok(fines)
}

/// Roll the unpaid remainder of an ending period into one Due-bill in the
/// next period. The caller tombstones the source bills so nothing is counted
/// twice.
pub fn roll_due_bill(
    unpaid: &[&Bill],
    next_period: AcademicPeriod,
    generated_at: Timestamp,
    due_date: Timestamp,
) -> Result<Bill, BillingError> {
    let Some(first) = unpaid.first() else {
        return Err(BillingError::EmptyInput);
    };
    debug_assert!(unpaid.iter().all(|b| b.is_unpaid()));
    let amount = Money::checked_sum(unpaid.iter().map(|b| b.amount))?;
    Ok(Bill {
        period: next_period,
        student_id: first.student_id.clone(),
        paycode: Paycode::DueBill,
        amount,
        generate_datetime: generated_at,
        due_date,
        datetime_paid: None,
    })
}

/// Answer one academic gate from the student's bills for the period.
///
/// - course registration: blocked by unpaid DUE-BILL or BILL-1
/// - mid-term exam: blocked by unpaid BILL-1, BILL-2, or BILL-SS
/// - grade viewing: blocked by any unpaid bill of the period
///
/// A dispensation (approved payment delay) overrides every gate.
pub fn check_eligibility(
    action: GatedAction,
    period: AcademicPeriod,
    bills: &[Bill],
    dispensation: bool,
) -> Eligibility {
    if dispensation {
        return Eligibility::Allowed;
    }
    let mut blocking: Vec<Paycode> = bills
        .iter()
        .filter(|b| b.period == period && b.is_unpaid())
        .filter(|b| match action {
            GatedAction::CourseRegistration => {
                matches!(b.paycode, Paycode::DueBill | Paycode::Bill1)
            }
            GatedAction::MidtermExam => {
                matches!(b.paycode, Paycode::Bill1 | Paycode::Bill2 | Paycode::BillSs)
            }
            GatedAction::ViewGrades => true,
        })
        .map(|b| b.paycode)
        .collect();
    blocking.sort();
    blocking.dedup();
    if blocking.is_empty() {
        Eligibility::Allowed
    } else {
        Eligibility::Blocked(blocking)
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    pub fn period(year: u16, sem: Semester) -> AcademicPeriod {
        AcademicPeriod::new(year, sem)
    }

    pub fn ts(s: &str) -> Timestamp {
        Timestamp::parse_wire(s).unwrap()
    }

    pub fn enrollment(level: DegreeLevel, pay_credits: bool) -> StudentEnrollment {
        StudentEnrollment {
            period: period(2010, Semester::Regular1),
            student_id: StudentId::from("2016730001"),
            name: String::from("Siti Rahma"),
            degree_level: level,
            pay_credits,
            bill1_credits: level.default_bill1_credits(),
            dispensation: false,
        }
    }

    pub fn tariffs(registration: i64, credit: i64) -> TariffBook {
        let mut book = TariffBook::default();
        for level in [DegreeLevel::S1, DegreeLevel::S2, DegreeLevel::S3] {
            book.general
                .insert(TariffId::registration_for(level), Money::new(registration));
            book.general
                .insert(TariffId::credit_for(level), Money::new(credit));
        }
        book
    }

    pub fn registration(
        student: &StudentEnrollment,
        course: &str,
        credits: u8,
        lab: bool,
    ) -> CourseRegistration {
        CourseRegistration {
            period: student.period,
            student_id: student.student_id.clone(),
            course_code: CourseCode::from(course),
            credits,
            status_lab: lab,
            status_studio: false,
            status_assist: false,
            status_tutor: false,
            trans_datetime: ts("20100210120000"),
        }
    }
}
