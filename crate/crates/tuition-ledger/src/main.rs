fn main() {
    if let Err(e) = tuition_ledger::cli::run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
