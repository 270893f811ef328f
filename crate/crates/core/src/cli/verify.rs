use std::path::PathBuf;

use clap::Args;

use super::{report_error, EXIT_INTERNAL, EXIT_OK};
use crate::verify::run_suite;

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(value_parser = ["riccati", "contraction", "tiny", "is", "all"])]
    suite: String,
    /// Also write the JSON report to this file.
    #[arg(long)]
    json: Option<PathBuf>,
}

pub fn run(args: VerifyArgs) -> i32 {
    let reports = match run_suite(&args.suite) {
        Ok(r) => r,
        Err(e) => return report_error(&e),
    };
    let passed = reports.iter().all(|r| r.passed);
    let doc = serde_json::json!({ "passed": passed, "suites": reports });
    let text = serde_json::to_string_pretty(&doc).expect("report serializes");
    println!("{text}");
    if let Some(path) = &args.json {
        if let Err(e) = std::fs::write(path, &text) {
            return report_error(&e.into());
        }
    }
    for r in &reports {
        eprintln!("{}", r.summary());
    }
    if passed {
        EXIT_OK
    } else {
        EXIT_INTERNAL
    }
}
