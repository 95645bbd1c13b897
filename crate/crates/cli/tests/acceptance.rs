//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! `cargo test -p drfkit --test acceptance` runs everything; pass criterion
//! numbers as arguments (`-- 1 2 14`) to run a subset.

use std::process::ExitCode;

fn main() -> ExitCode {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let outcomes = drfkit::acceptance::run(&only, 20_261_016, |o| println!("{}", o.line()));
    let failed = outcomes.iter().filter(|o| !o.pass).count();
    println!("acceptance: {} passed, {failed} failed", outcomes.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
