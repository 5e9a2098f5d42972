// Runs the full verification battery and prints one line per criterion.

use confspec::verify::{run_battery, VerifySettings};

pub fn main() -> confspec::Result<()> {
    let report = run_battery(&VerifySettings::default());
    for c in &report.criteria {
        println!("{}", c.line());
    }
    println!("overall: {}", if report.pass { "pass" } else { "FAIL" });
    Ok(())
}
