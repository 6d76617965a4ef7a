//! Larmor frequency and g-factor at several fields.

use std::path::PathBuf;

use qdspin::config::ExperimentConfig;
use qdspin::experiments::{extract_larmor_series, run_ramsey};

fn main() -> qdspin::Result<()> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/ideal.ini");
    let base = ExperimentConfig::from_path(&path)?;
    let mut traces = Vec::new();
    for field in [0.5, 1.0, 1.5, 2.0] {
        let mut cfg = base.clone();
        cfg.system.field_tesla = field;
        cfg.overhauser.ensemble_size = 1000;
        traces.push((field, run_ramsey(&cfg.ramsey_config()?)?));
    }
    println!("field_T  nu_GHz   stderr    T2*_ns  |g|");
    for row in extract_larmor_series(&traces) {
        println!(
            "{:6.2} {:8.4} {:9.2e} {:7.3} {:6.4} {}",
            row.field_tesla, row.frequency_ghz, row.frequency_stderr_ghz, row.t2_star, row.g_factor, row.note
        );
    }
    Ok(())
}
