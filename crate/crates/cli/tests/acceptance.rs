//! Acceptance criteria 1-11. Each criterion runs on a one-thread pool and
//! again on a three-thread pool; criterion 11 compares the two reports.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use wplab_cli::accept::{run_criterion, CriterionReport, CRITERIA};
use wplab_cli::commands::with_threads;

const SEED: u64 = 0;

fn limit(id: u32) -> Duration {
    let secs = match id {
        1 => 1,
        2 => 120,
        3 => 300,
        4 => 60,
        5 => 600,
        6 => 300,
        7 => 60,
        8 => 600,
        9 => 600,
        10 => 1200,
        _ => unreachable!(),
    };
    Duration::from_secs(secs)
}

fn timed(threads: usize, id: u32) -> (CriterionReport, Duration) {
    let t = Instant::now();
    let rep = with_threads(Some(threads), || run_criterion(id, SEED)).expect("thread pool");
    (rep, t.elapsed())
}

fn main() -> ExitCode {
    let mut all_ok = true;
    let mut mismatched = Vec::new();
    for &(id, name) in CRITERIA {
        let (first, took) = timed(1, id);
        let (second, _) = timed(3, id);
        let in_time = took < limit(id);
        let ok = first.pass && in_time;
        all_ok &= ok;
        println!(
            "criterion {id:>2} {name:<22} {}  ({:.1} s, limit {} s{})",
            if ok { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            limit(id).as_secs(),
            if in_time { "" } else { ", over time" }
        );
        for l in &first.lines {
            println!("    {l}");
        }
        if first.to_string() != second.to_string() {
            mismatched.push(id);
        }
    }
    let det = mismatched.is_empty();
    all_ok &= det;
    println!("criterion 11 {:<22} {}", "determinism", if det { "PASS" } else { "FAIL" });
    if det {
        println!("    ok   reports of criteria 1-10 identical under 1 and 3 threads");
    } else {
        println!("    FAIL reports differ under 1 and 3 threads for criteria {mismatched:?}");
    }
    if all_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
