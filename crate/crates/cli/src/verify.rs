use anyhow::Result;
use hnmc::verify::{run_verify, Fault, VerifyOptions};
use serde::Serialize;

use crate::args::{FaultArg, VerifyArgs};
use crate::manifest::{write_manifest, MANIFEST_VERSION};

#[derive(Serialize)]
struct CheckRecord<'a> {
    name: &'a str,
    cases: usize,
    worst_error: f64,
    tolerance: f64,
    passed: bool,
    error: Option<&'a str>,
}

#[derive(Serialize)]
struct VerifyManifest<'a> {
    manifest_version: u32,
    tool_version: &'static str,
    command: &'static str,
    argv: &'a [String],
    models: usize,
    seed: u64,
    max_states: usize,
    max_length: usize,
    fault: Option<&'static str>,
    passed: bool,
    checks: Vec<CheckRecord<'a>>,
}

/// Prints one line per check; returns whether all of them passed.
pub fn run(args: &VerifyArgs, argv: &[String]) -> Result<bool> {
    let opts = VerifyOptions {
        models: args.seeds,
        seed: args.seed,
        max_states: args.max_states,
        max_length: args.max_length,
        fault: args.inject_fault.map(|FaultArg::ShiftObservations| Fault::ShiftObservations),
    };
    let report = run_verify(&opts)?;
    for c in &report.checks {
        println!("{c}");
    }
    let passed = report.passed();
    let failed = report.checks.iter().filter(|c| !c.passed()).count();
    if passed {
        println!("all {} checks passed", report.checks.len());
    } else {
        println!("{failed} of {} checks failed", report.checks.len());
    }
    if let Some(path) = &args.manifest {
        let manifest = VerifyManifest {
            manifest_version: MANIFEST_VERSION,
            tool_version: env!("CARGO_PKG_VERSION"),
            command: "verify",
            argv,
            models: opts.models,
            seed: opts.seed,
            max_states: opts.max_states,
            max_length: opts.max_length,
            fault: args.inject_fault.map(|_| "shift-observations"),
            passed,
            checks: report
                .checks
                .iter()
                .map(|c| CheckRecord {
                    name: &c.name,
                    cases: c.cases,
                    worst_error: c.worst_error,
                    tolerance: c.tolerance,
                    passed: c.passed(),
                    error: c.error.as_deref(),
                })
                .collect(),
        };
        write_manifest(path, &manifest)?;
    }
    Ok(passed)
}
