//! Ramsey fringe at 2 T with the default rotation-laser side effects.

use std::path::PathBuf;

use qdspin::config::ExperimentConfig;
use qdspin::experiments::{ramsey_contrast, run_ramsey};
use qdspin::fitting::{fit_gauss_cosine, GaussCosineFitOptions, LmOptions};

fn main() -> qdspin::Result<()> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/ramsey_2T.ini");
    let mut cfg = ExperimentConfig::from_path(&path)?;
    // keep the example quick
    cfg.overhauser.ensemble_size = 500;

    let trace = run_ramsey(&cfg.ramsey_config()?)?;
    let fit = fit_gauss_cosine(&trace.data_series()?, GaussCosineFitOptions::default(), &LmOptions::default())?;
    println!("{}", fit.table());
    println!("F_init {:.3}", trace.init_fidelity);
    println!("contrast {:.4}", ramsey_contrast(&trace)?);
    trace.write_csv(std::io::stdout().lock())?;
    Ok(())
}
