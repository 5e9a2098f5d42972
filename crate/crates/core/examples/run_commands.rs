// Drives the command layer programmatically from a JSON configuration, the
// same path the `confspec` binary takes.

use confspec::commands::{run, Command, RunOptions};
use confspec::config::RunConfig;

pub fn main() -> confspec::Result<()> {
    let cfg = RunConfig::from_json(
        r#"{
            "schema": 1,
            "operator": { "kind": "dirac_circle", "resolution": 64, "spin": "antiperiodic" },
            "factors": [ { "terms": [ { "kx": 1, "ky": 0, "phase": "cos", "coef": 1.0 } ] } ],
            "eps_grid": [-0.4, 0.0, 0.4],
            "window": { "lo": -3.0, "hi": 3.0 },
            "alpha": 2.5
        }"#,
    )?;
    let out = std::env::temp_dir().join("confspec-commands-example");
    let opts = RunOptions { out, emit_plots: true };
    for command in [Command::Spectrum, Command::Track, Command::Rigidity, Command::Split] {
        let report = run(command, &cfg, &opts)?;
        println!("{command:?} → exit {}", report.status.exit_code());
        for line in report.summary {
            println!("  {line}");
        }
    }
    Ok(())
}
