//! Acceptance gate: runs every criterion once and prints one line per check.
//!
//! Criteria listed in `KNOWN_UNATTAINABLE` are reported like the others but
//! do not fail the gate; everything else must pass.

use lincoag::parallel::Exec;
use lincoag::validation::{run_suite, Suite, KNOWN_UNATTAINABLE};

#[test]
fn acceptance_criteria() {
    let results = run_suite(Suite::All, Exec::Parallel);
    for r in &results {
        let status = if r.passed { "PASS" } else { "FAIL" };
        let note = if !r.passed && KNOWN_UNATTAINABLE.contains(&r.id) { " (known unattainable)" } else { "" };
        println!("{status} criterion {:>2} {}{note} [{:.1}s]: {}", r.id, r.name, r.seconds, r.detail);
    }
    assert_eq!(results.len(), 12);
    let unexpected: Vec<u8> = results.iter().filter(|r| !r.passed && !KNOWN_UNATTAINABLE.contains(&r.id)).map(|r| r.id).collect();
    assert!(unexpected.is_empty(), "failing criteria: {unexpected:?}");
}
