//! Runs the acceptance grid and prints one PASS/FAIL line per criterion.
//! Exits non-zero when any criterion fails.

use rmps_core::acceptance::{run_criterion, CRITERIA};

fn main() {
    let mut failed = Vec::new();
    let mut details = String::new();
    for id in CRITERIA {
        match run_criterion(id) {
            Ok(outcome) => {
                println!("{}", outcome.line());
                details += &outcome.to_string();
                if !outcome.pass() {
                    failed.push(id);
                }
            }
            Err(e) => {
                println!("criterion {id}: FAIL (error: {e})");
                failed.push(id);
            }
        }
    }
    println!("\ndetails:\n{details}");
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", CRITERIA.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
