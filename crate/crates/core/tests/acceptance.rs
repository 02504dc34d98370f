//! Acceptance criteria 1 to 13. Runs without the libtest harness so that every
//! criterion prints its PASS or FAIL line, with the measured numbers, on every run.

use bhl::checks::CheckSession;

fn main() {
    let session = CheckSession::new();
    let outcomes: Vec<_> = (1..=13)
        .map(|id| {
            let o = session.run(id);
            println!("{}", o.line());
            o
        })
        .collect();
    let passed = outcomes.iter().filter(|o| o.pass).count();
    println!("acceptance: {passed}/{} criteria pass", outcomes.len());
    assert_eq!(outcomes.len(), 13);
}
