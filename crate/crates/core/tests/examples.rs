//! Every example must run to completion.

macro_rules! example {
    ($test:ident, $module:ident, $file:literal) => {
        mod $module {
            include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/", $file));
        }

        #[test]
        fn $test() {
            $module::main().expect(concat!($file, " should run"));
        }
    };
}

example!(background_spectrum_runs, background_spectrum, "background_spectrum.rs");
example!(isospectral_family_runs, isospectral_family, "isospectral_family.rs");
example!(dirac_oracle_runs, dirac_oracle, "dirac_oracle.rs");
example!(first_order_slopes_runs, first_order_slopes, "first_order_slopes.rs");
example!(track_branches_runs, track_branches, "track_branches.rs");
example!(rigidity_runs, rigidity, "rigidity.rs");
example!(genericity_loop_runs, genericity_loop, "genericity_loop.rs");
example!(spectral_windows_runs, spectral_windows, "spectral_windows.rs");
example!(run_commands_runs, run_commands, "run_commands.rs");
example!(verify_battery_runs, verify_battery, "verify_battery.rs");
