//! Runs acceptance criteria 1 to 11 and prints one line per criterion.

use std::io::Write;
use std::time::Instant;

use ddm_core::acceptance::{self, Outcome};

/// Writes past the test harness's output capture so the verdicts show up in
/// a plain `cargo test` log.
fn report(line: String) {
    let _ = writeln!(std::io::stderr().lock(), "{line}");
}

#[test]
fn acceptance_criteria() {
    let runners: [fn() -> Outcome; 10] = [
        acceptance::criterion_1,
        acceptance::criterion_2,
        acceptance::criterion_3,
        acceptance::criterion_4,
        acceptance::criterion_5,
        acceptance::criterion_6,
        acceptance::criterion_7,
        acceptance::criterion_8,
        acceptance::criterion_9,
        acceptance::criterion_10,
    ];
    let mut outcomes = Vec::new();
    for run in runners {
        let t = Instant::now();
        let o = run();
        report(format!("{}  ({:.1}s)", o.line(), t.elapsed().as_secs_f64()));
        outcomes.push(o);
    }
    let first = acceptance::SuiteRun {
        determinism_hash: ddm_core::report::determinism_hash(&serde_json::to_value(&outcomes).unwrap()),
        outcomes,
    };
    let t = Instant::now();
    let eleven = acceptance::criterion_11(&first);
    report(format!("{}  ({:.1}s)", eleven.line(), t.elapsed().as_secs_f64()));
    let failed: Vec<u8> = first
        .outcomes
        .iter()
        .chain(std::iter::once(&eleven))
        .filter(|o| !o.passed)
        .map(|o| o.id)
        .collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
