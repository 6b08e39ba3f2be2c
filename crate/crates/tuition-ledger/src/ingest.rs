//! Delimiter-separated ingestion files.
//!
//! Column layout follows the data dictionaries, one record per line, header
//! row required. Because `|`, `,` and `:` are banned from field values there
//! is no quoting or escaping. Parsers validate everything up front and
//! report row-numbered diagnostics; nothing reaches the engine unless the
//! whole file is well-formed.

use thiserror::Error;

use tuition_core::engine::IngestBatch;
use tuition_core::ledger::{
    AcademicPeriod, CourseCode, CourseRegistration, CourseTariff, DegreeLevel, FeeComponent,
    Scholarship, Semester, StudentEnrollment, StudentId, TariffBook, TariffId,
};
use tuition_core::money::Money;
use tuition_core::time::Timestamp;

pub const STUDENTS_HEADER: [&str; 8] = [
    "year",
    "semester",
    "student_id",
    "name",
    "degree_level",
    "pay_credits",
    "bill1_credits",
    "dispensation",
];

pub const REGISTRATIONS_HEADER: [&str; 11] = [
    "year",
    "semester",
    "student_id",
    "name",
    "course_code",
    "credits",
    "status_lab",
    "status_studio",
    "status_assist",
    "status_tutor",
    "trans_datetime",
];

pub const SCHOLARSHIPS_HEADER: [&str; 6] = [
    "year",
    "semester",
    "student_id",
    "name",
    "scholarship_code",
    "amount",
];

pub const GENERAL_TARIFF_HEADER: [&str; 5] = [
    "year",
    "semester",
    "tariff_id",
    "tariff_description",
    "amount",
];

pub const COURSE_TARIFF_HEADER: [&str; 11] = [
    "year",
    "semester",
    "course_code",
    "code_lab",
    "amount_lab",
    "code_studio",
    "amount_studio",
    "code_assist",
    "amount_assist",
    "code_tutor",
    "amount_tutor",
];

/// A diagnostic tied to a 1-based file row (the header is row 1).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    pub row: usize,
    pub reason: String,
}

impl std::fmt::Display for RowError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "row {}: {}", self.row, self.reason)
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("bad header: expected {expected:?}")]
    BadHeader { expected: String },
    #[error("{}", render_rows(.0))]
    Rows(Vec<RowError>),
}

fn render_rows(errors: &[RowError]) -> String {
    errors
        .iter()
        .map(|e| e.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

struct Rows<'a> {
    delimiter: char,
    lines: Vec<(usize, &'a str)>,
}

/// Split the file into header + data rows; header must match exactly.
fn open_rows<'a>(text: &'a str, header: &[&str], delimiter: char) -> Result<Rows<'a>, IngestError> {
    let expected = header.join(&delimiter.to_string());
    let mut lines = text.lines().enumerate();
    let Some((_, first)) = lines.next() else {
        return Err(IngestError::BadHeader { expected });
    };
    if first.trim_end() != expected {
        return Err(IngestError::BadHeader { expected });
    }
    Ok(Rows {
        delimiter,
        lines: lines
            .map(|(i, line)| (i + 1, line))
            .filter(|(_, line)| !line.trim().is_empty())
            .collect(),
    })
}

fn parse_period(year: &str, sem: &str) -> Result<AcademicPeriod, String> {
    let year: u16 = year.parse().map_err(|_| format!("bad year {year:?}"))?;
    let semester = Semester::parse(sem).ok_or_else(|| format!("bad semester {sem:?}"))?;
    Ok(AcademicPeriod::new(year, semester))
}

fn parse_yes_no(s: &str) -> Result<bool, String> {
    match s {
        "YES" => Ok(true),
        "NO" => Ok(false),
        other => Err(format!("expected YES or NO, got {other:?}")),
    }
}

fn parse_amount(s: &str) -> Result<Money, String> {
    s.parse::<i64>()
        .map(Money::new)
        .map_err(|_| format!("bad amount {s:?}"))
}

fn collect<T>(
    rows: Rows<'_>,
    n_fields: usize,
    mut parse: impl FnMut(&[&str]) -> Result<T, String>,
) -> Result<Vec<T>, IngestError> {
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (row, line) in rows.lines {
        let fields: Vec<&str> = line.split(rows.delimiter).collect();
        if fields.len() != n_fields {
            errors.push(RowError {
                row,
                reason: format!("expected {n_fields} columns, got {}", fields.len()),
            });
            continue;
        }
        match parse(&fields) {
            Ok(record) => records.push(record),
            Err(reason) => errors.push(RowError { row, reason }),
        }
    }
    if errors.is_empty() {
        Ok(records)
    } else {
        Err(IngestError::Rows(errors))
    }
}

pub fn parse_students(text: &str, delimiter: char) -> Result<Vec<StudentEnrollment>, IngestError> {
    let rows = open_rows(text, &STUDENTS_HEADER, delimiter)?;
    collect(rows, STUDENTS_HEADER.len(), |f| {
        let period = parse_period(f[0], f[1])?;
        let degree_level =
            DegreeLevel::parse(f[4]).ok_or_else(|| format!("bad degree_level {:?}", f[4]))?;
        let bill1_credits = if f[6].is_empty() {
            degree_level.default_bill1_credits()
        } else {
            f[6].parse()
                .map_err(|_| format!("bad bill1_credits {:?}", f[6]))?
        };
        Ok(StudentEnrollment {
            period,
            student_id: StudentId(f[2].to_string()),
            name: f[3].to_string(),
            degree_level,
            pay_credits: parse_yes_no(f[5])?,
            bill1_credits,
            dispensation: if f[7].is_empty() {
                false
            } else {
                parse_yes_no(f[7])?
            },
        })
    })
}

pub fn parse_registrations(
    text: &str,
    delimiter: char,
) -> Result<Vec<CourseRegistration>, IngestError> {
    let rows = open_rows(text, &REGISTRATIONS_HEADER, delimiter)?;
    collect(rows, REGISTRATIONS_HEADER.len(), |f| {
        Ok(CourseRegistration {
            period: parse_period(f[0], f[1])?,
            student_id: StudentId(f[2].to_string()),
            // f[3] is the display name; enrollment owns it.
            course_code: CourseCode(f[4].to_string()),
            credits: f[5]
                .parse()
                .map_err(|_| format!("bad credits {:?}", f[5]))?,
            status_lab: parse_yes_no(f[6])?,
            status_studio: parse_yes_no(f[7])?,
            status_assist: parse_yes_no(f[8])?,
            status_tutor: parse_yes_no(f[9])?,
            trans_datetime: Timestamp::parse_wire(f[10]).map_err(|e| e.to_string())?,
        })
    })
}

pub fn parse_scholarships(text: &str, delimiter: char) -> Result<Vec<Scholarship>, IngestError> {
    let rows = open_rows(text, &SCHOLARSHIPS_HEADER, delimiter)?;
    collect(rows, SCHOLARSHIPS_HEADER.len(), |f| {
        Ok(Scholarship {
            period: parse_period(f[0], f[1])?,
            student_id: StudentId(f[2].to_string()),
            scholarship_code: f[4].to_string(),
            amount: parse_amount(f[5])?,
        })
    })
}

pub fn parse_batch(
    students: Option<&str>,
    registrations: Option<&str>,
    scholarships: Option<&str>,
    delimiter: char,
) -> Result<IngestBatch, IngestError> {
    Ok(IngestBatch {
        students: students
            .map(|t| parse_students(t, delimiter))
            .transpose()?
            .unwrap_or_default(),
        registrations: registrations
            .map(|t| parse_registrations(t, delimiter))
            .transpose()?
            .unwrap_or_default(),
        scholarships: scholarships
            .map(|t| parse_scholarships(t, delimiter))
            .transpose()?
            .unwrap_or_default(),
    })
}

/// Tariff books grouped by period, merged from the general and per-course
/// files. `expect_period` pins every row to one period when given.
pub fn parse_tariff_books(
    general: Option<&str>,
    course: Option<&str>,
    delimiter: char,
    expect_period: Option<AcademicPeriod>,
) -> Result<Vec<(AcademicPeriod, TariffBook)>, IngestError> {
    let mut books: std::collections::BTreeMap<AcademicPeriod, TariffBook> =
        std::collections::BTreeMap::new();
    let check_period = |period: AcademicPeriod| -> Result<AcademicPeriod, String> {
        match expect_period {
            Some(p) if p != period => Err(format!("row period {period} does not match {p}")),
            _ => Ok(period),
        }
    };

    if let Some(text) = general {
        let rows = open_rows(text, &GENERAL_TARIFF_HEADER, delimiter)?;
        let entries = collect(rows, GENERAL_TARIFF_HEADER.len(), |f| {
            let period = check_period(parse_period(f[0], f[1])?)?;
            let id = TariffId::parse(f[2]).ok_or_else(|| format!("bad tariff_id {:?}", f[2]))?;
            let amount = parse_amount(f[4])?;
            Ok((period, id, amount))
        })?;
        for (period, id, amount) in entries {
            books.entry(period).or_default().general.insert(id, amount);
        }
    }

    if let Some(text) = course {
        let rows = open_rows(text, &COURSE_TARIFF_HEADER, delimiter)?;
        let entries = collect(rows, COURSE_TARIFF_HEADER.len(), |f| {
            let period = check_period(parse_period(f[0], f[1])?)?;
            let slot = |code: &str, amount: &str| -> Result<Option<FeeComponent>, String> {
                match (code.is_empty(), amount.is_empty()) {
                    (true, true) => Ok(None),
                    (false, false) => Ok(Some(FeeComponent {
                        code: code.to_string(),
                        amount: parse_amount(amount)?,
                    })),
                    _ => Err(format!("half-empty fee pair {code:?}/{amount:?}")),
                }
            };
            Ok((
                period,
                CourseCode(f[2].to_string()),
                CourseTariff {
                    lab: slot(f[3], f[4])?,
                    studio: slot(f[5], f[6])?,
                    assist: slot(f[7], f[8])?,
                    tutor: slot(f[9], f[10])?,
                },
            ))
        })?;
        for (period, code, tariff) in entries {
            books.entry(period).or_default().course.insert(code, tariff);
        }
    }

    Ok(books.into_iter().collect())
}
