//! Operator command surface.
//!
//! Every invocation opens the data directory (recovering from snapshot plus
//! journal), runs one command, and exits. Mutating commands validate their
//! whole input before anything is journaled, so a failing command leaves the
//! store byte-identical. All output is line-oriented and machine-parseable;
//! there are no prompts.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use tuition_core::engine::{BillComputeCommand, ComputeTarget, StudentScope, UpsEngine};
use tuition_core::ledger::{AcademicPeriod, FinePolicy, GatedAction, Paycode, StudentId};
use tuition_core::money::Money;
use tuition_core::report::{self, ReportFilter};
use tuition_core::sim::{self, EngineTransport, SweepTarget, VasLedger};
use tuition_core::time::Timestamp;

use crate::durable::DurableStore;
use crate::ingest;
use crate::serve;

#[derive(Parser)]
#[command(
    name = "tuition-ledger",
    version,
    about = "Deterministic tuition billing and exact-payment engine"
)]
pub struct Cli {
    /// Data directory holding the journal and snapshot.
    #[arg(long, global = true, env = "TUITION_LEDGER_DATA")]
    data_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load academic data files (students, registrations, scholarships).
    Ingest(IngestArgs),
    /// Tariff book maintenance.
    Tariff {
        #[command(subcommand)]
        command: TariffCommand,
    },
    /// Bill generation and fines.
    Bills {
        #[command(subcommand)]
        command: BillsCommand,
    },
    /// Serve the wire protocol on a local socket.
    Serve {
        /// Socket path to bind.
        #[arg(long)]
        socket: PathBuf,
        /// Stop after this many connections (scripted runs).
        #[arg(long)]
        max_connections: Option<u64>,
    },
    /// Run a simulated-bank scenario against this store.
    Simulate {
        /// Scenario configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Override the configured fault seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for result, replay log, bank ledger, balance.
        #[arg(long)]
        out: PathBuf,
    },
    /// Emit reports.
    Report(ReportArgs),
    /// Answer an academic gate for one student.
    Eligibility {
        #[arg(long)]
        student: String,
        /// COURSE_REGISTRATION, MIDTERM_EXAM or VIEW_GRADES.
        #[arg(long)]
        action: String,
        /// Academic period, e.g. 2010-1.
        #[arg(long)]
        period: String,
    },
    /// Write a snapshot of the current state.
    Snapshot,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    students: Option<PathBuf>,
    #[arg(long)]
    registrations: Option<PathBuf>,
    #[arg(long)]
    scholarships: Option<PathBuf>,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
}

#[derive(Subcommand)]
enum TariffCommand {
    /// Replace tariff books from files (whole period at a time).
    Load {
        #[arg(long)]
        general: Option<PathBuf>,
        #[arg(long)]
        course: Option<PathBuf>,
        /// Require every row to belong to this period.
        #[arg(long)]
        period: Option<String>,
        #[arg(long, default_value_t = ',')]
        delimiter: char,
    },
}

#[derive(Subcommand)]
enum BillsCommand {
    /// Generate bills of one paycode for one student or ALL.
    Compute {
        /// Academic period, e.g. 2010-1.
        #[arg(long)]
        period: String,
        /// BILL-1, BILL-2, BILL-SS or DUE-BILL.
        #[arg(long)]
        paycode: String,
        /// ALL or a student id.
        #[arg(long, default_value = "ALL")]
        student: String,
        /// Generation instant (YYYYMMDDHHMMSS); defaults to wall clock.
        #[arg(long)]
        generated_at: Option<String>,
        /// Due date (YYYYMMDDHHMMSS); defaults to 30 days after generation.
        #[arg(long)]
        due: Option<String>,
    },
    /// Assess fines for overdue bills of a period.
    Fine {
        #[arg(long)]
        period: String,
        /// Assessment instant (YYYYMMDDHHMMSS).
        #[arg(long)]
        now: String,
        /// Flat fine amount in IDR (default 100000).
        #[arg(long, conflicts_with = "percent")]
        flat: Option<i64>,
        /// Percentage fine in basis points of the overdue amount.
        #[arg(long)]
        percent: Option<u32>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportKind {
    Bills,
    Payments,
    Transactions,
    Balance,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(value_enum)]
    kind: ReportKind,
    /// ALL or a student id.
    #[arg(long, default_value = "ALL")]
    student: String,
    /// Restrict to one academic period.
    #[arg(long)]
    period: Option<String>,
    /// Write to a file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
    /// Bank-side ledger file (from simulate) for reconciliation.
    #[arg(long)]
    vas_ledger: Option<PathBuf>,
}

pub fn run() -> Result<()> {
    let cli = Cli::parse();
    dispatch(cli)
}

fn dispatch(cli: Cli) -> Result<()> {
    let data_dir = cli
        .data_dir
        .ok_or_else(|| anyhow!("--data-dir (or TUITION_LEDGER_DATA) is required"))?;
    match cli.command {
        Command::Ingest(args) => cmd_ingest(&data_dir, args),
        Command::Tariff { command } => match command {
            TariffCommand::Load {
                general,
                course,
                period,
                delimiter,
            } => cmd_tariff_load(&data_dir, general, course, period, delimiter),
        },
        Command::Bills { command } => match command {
            BillsCommand::Compute {
                period,
                paycode,
                student,
                generated_at,
                due,
            } => cmd_bills_compute(&data_dir, period, paycode, student, generated_at, due),
            BillsCommand::Fine {
                period,
                now,
                flat,
                percent,
            } => cmd_bills_fine(&data_dir, period, now, flat, percent),
        },
        Command::Serve {
            socket,
            max_connections,
        } => {
            let mut store = DurableStore::open(&data_dir)?;
            println!("listening on {}", socket.display());
            serve::serve(&mut store, &socket, max_connections)?;
            Ok(())
        }
        Command::Simulate { config, seed, out } => cmd_simulate(&data_dir, &config, seed, &out),
        Command::Report(args) => cmd_report(&data_dir, args),
        Command::Eligibility {
            student,
            action,
            period,
        } => cmd_eligibility(&data_dir, student, action, period),
        Command::Snapshot => {
            let store = DurableStore::open(&data_dir)?;
            let path = store.snapshot()?;
            println!("snapshot={}", path.display());
            Ok(())
        }
    }
}

// ---------------------------------------------------------------------------
// Argument parsing helpers
// ---------------------------------------------------------------------------

fn parse_period(s: &str) -> Result<AcademicPeriod> {
    AcademicPeriod::parse(s).ok_or_else(|| anyhow!("bad period {s:?} (want e.g. 2010-1 or 2010-S)"))
}

fn parse_ts(s: &str) -> Result<Timestamp> {
    Timestamp::parse_wire(s).map_err(|e| anyhow!("{e}"))
}

fn parse_scope(s: &str) -> StudentScope {
    if s == "ALL" {
        StudentScope::All
    } else {
        StudentScope::One(StudentId(s.to_string()))
    }
}

/// Wall clock, injected at the CLI boundary and journaled from here on.
fn wall_clock() -> Timestamp {
    let millis = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as i64)
        .unwrap_or(0);
    Timestamp::from_millis(millis)
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn cmd_ingest(data_dir: &Path, args: IngestArgs) -> Result<()> {
    if args.students.is_none() && args.registrations.is_none() && args.scholarships.is_none() {
        bail!("nothing to ingest: pass --students, --registrations or --scholarships");
    }
    let students = args.students.as_deref().map(read_file).transpose()?;
    let registrations = args.registrations.as_deref().map(read_file).transpose()?;
    let scholarships = args.scholarships.as_deref().map(read_file).transpose()?;
    let batch = ingest::parse_batch(
        students.as_deref(),
        registrations.as_deref(),
        scholarships.as_deref(),
        args.delimiter,
    )?;

    let mut store = DurableStore::open(data_dir)?;
    let summary = store.engine_mut().ingest_academic_data(&batch)?;
    for (name, counts) in [
        ("students", summary.students),
        ("registrations", summary.registrations),
        ("scholarships", summary.scholarships),
    ] {
        println!(
            "{name}_inserted={} {name}_updated={} {name}_unchanged={}",
            counts.inserted, counts.updated, counts.unchanged
        );
    }
    Ok(())
}

fn cmd_tariff_load(
    data_dir: &Path,
    general: Option<PathBuf>,
    course: Option<PathBuf>,
    period: Option<String>,
    delimiter: char,
) -> Result<()> {
    if general.is_none() && course.is_none() {
        bail!("nothing to load: pass --general or --course");
    }
    let expect_period = period.as_deref().map(parse_period).transpose()?;
    let general = general.as_deref().map(read_file).transpose()?;
    let course = course.as_deref().map(read_file).transpose()?;
    let books = ingest::parse_tariff_books(
        general.as_deref(),
        course.as_deref(),
        delimiter,
        expect_period,
    )?;
    if books.is_empty() {
        bail!("no tariff rows found");
    }

    let mut store = DurableStore::open(data_dir)?;
    // Dry-run on a detached copy so a bad later book can't leave earlier
    // books half-applied.
    let mut probe = store.engine().fork_in_memory();
    for (period, book) in &books {
        probe.update_tariff(*period, book.clone())?;
    }
    for (period, book) in books {
        let summary = store.engine_mut().update_tariff(period, book)?;
        println!(
            "period={period} general={} course={}",
            summary.general_entries, summary.course_entries
        );
    }
    Ok(())
}

fn cmd_bills_compute(
    data_dir: &Path,
    period: String,
    paycode: String,
    student: String,
    generated_at: Option<String>,
    due: Option<String>,
) -> Result<()> {
    let period = parse_period(&period)?;
    let paycode = Paycode::parse(&paycode).ok_or_else(|| anyhow!("bad paycode {paycode:?}"))?;
    let target = ComputeTarget::from_paycode(paycode).ok_or_else(|| {
        anyhow!("paycode {paycode} is not a generation target (use BILL-1, BILL-2, BILL-SS or DUE-BILL)")
    })?;
    let generated_at = match generated_at {
        Some(s) => parse_ts(&s)?,
        None => wall_clock(),
    };
    let due_date = match due {
        Some(s) => parse_ts(&s)?,
        None => generated_at.add_days(30),
    };

    let mut store = DurableStore::open(data_dir)?;
    let summary = store
        .engine_mut()
        .run_bill_computation(&BillComputeCommand {
            target,
            scope: parse_scope(&student),
            period,
            generated_at,
            due_date,
        })?;
    println!("{} bills generated", summary.generated());
    println!(
        "created={} replaced={} skipped_paid={} skipped_no_source={}",
        summary.created, summary.replaced, summary.skipped_paid, summary.skipped_no_source
    );
    Ok(())
}

fn cmd_bills_fine(
    data_dir: &Path,
    period: String,
    now: String,
    flat: Option<i64>,
    percent: Option<u32>,
) -> Result<()> {
    let period = parse_period(&period)?;
    let now = parse_ts(&now)?;
    let policy = match (flat, percent) {
        (Some(amount), None) => FinePolicy::Flat(Money::new(amount)),
        (None, Some(bp)) => FinePolicy::PercentBp(bp),
        (None, None) => FinePolicy::default(),
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };
    let mut store = DurableStore::open(data_dir)?;
    let summary = store.engine_mut().apply_fines(period, policy, now)?;
    println!("fines_created={}", summary.fines_created);
    Ok(())
}

/// Sweep targets: every live unpaid bill of the period, in key order.
fn unpaid_targets(engine: &UpsEngine, period: AcademicPeriod) -> Vec<SweepTarget> {
    engine
        .tables()
        .bills_iter()
        .filter(|r| r.is_live() && r.bill.is_unpaid() && r.bill.period == period)
        .map(|r| (r.bill.student_id.clone(), Some(r.bill.paycode)))
        .collect()
}

fn cmd_simulate(data_dir: &Path, config: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let text = read_file(config)?;
    let mut config = sim::parse_scenario_config(&text).map_err(|e| anyhow!("{e}"))?;
    if let Some(seed) = seed {
        config.faults.seed = seed;
    }

    let mut store = DurableStore::open(data_dir)?;
    let targets = unpaid_targets(store.engine(), config.period);
    let output = sim::run_scenario(
        &config,
        &targets,
        EngineTransport {
            engine: store.engine_mut(),
        },
    )
    .map_err(|e| anyhow!("scenario failed: {e}"))?;

    let balance = report::balance_check(store.engine().tables(), Some(&output.vas_ledger), None);

    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("result.txt"), output.result.render_kv())?;
    let mut log = output.replay_log.join("\n");
    log.push('\n');
    std::fs::write(out.join("replay.log"), log)?;
    let mut vas_lines = output.vas_ledger.to_lines().join("\n");
    vas_lines.push('\n');
    std::fs::write(out.join("vas_ledger.txt"), vas_lines)?;
    std::fs::write(out.join("balance.txt"), balance.render_summary())?;

    print!("{}", output.result.render_kv());
    Ok(())
}

fn cmd_report(data_dir: &Path, args: ReportArgs) -> Result<()> {
    let period = args.period.as_deref().map(parse_period).transpose()?;
    let filter = ReportFilter {
        scope: parse_scope(&args.student),
        period,
    };
    let mut store = DurableStore::open(data_dir)?;
    store.engine_mut().enter_reporting()?;
    let text = match args.kind {
        ReportKind::Bills => {
            let rows: Vec<Vec<String>> = report::bill_report(store.engine().tables(), &filter)
                .iter()
                .map(|r| r.fields())
                .collect();
            report::render_rows(&report::BILL_REPORT_HEADER, &rows, args.delimiter)
        }
        ReportKind::Payments => {
            let rows: Vec<Vec<String>> = report::payment_report(store.engine().tables(), &filter)
                .iter()
                .map(|r| r.fields())
                .collect();
            report::render_rows(&report::PAYMENT_REPORT_HEADER, &rows, args.delimiter)
        }
        ReportKind::Transactions => {
            let rows: Vec<Vec<String>> =
                report::transaction_report(store.engine().tables(), &filter)
                    .iter()
                    .map(|r| r.fields())
                    .collect();
            report::render_rows(&report::TRANSACTION_REPORT_HEADER, &rows, args.delimiter)
        }
        ReportKind::Balance => {
            let vas = match &args.vas_ledger {
                Some(path) => {
                    let text = read_file(path)?;
                    Some(VasLedger::from_lines(text.lines()).map_err(|e| anyhow!("{e}"))?)
                }
                None => None,
            };
            report::balance_check(store.engine().tables(), vas.as_ref(), period).render_summary()
        }
    };
    store.engine_mut().exit_reporting()?;
    match args.out {
        Some(path) => std::fs::write(&path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_eligibility(data_dir: &Path, student: String, action: String, period: String) -> Result<()> {
    let period = parse_period(&period)?;
    let action = GatedAction::parse(&action.to_uppercase())
        .ok_or_else(|| anyhow!("bad action {action:?}"))?;
    let store = DurableStore::open(data_dir)?;
    let result = store
        .engine()
        .check_eligibility(&StudentId(student), period, action)?;
    match result {
        tuition_core::ledger::Eligibility::Allowed => println!("ALLOWED"),
        tuition_core::ledger::Eligibility::Blocked(codes) => {
            let codes: Vec<&str> = codes.iter().map(|c| c.as_str()).collect();
            println!("BLOCKED {}", codes.join(","));
        }
    }
    Ok(())
}
