//! Optical pumping with and without the rotation laser's side effects.

use std::path::PathBuf;

use qdspin::config::ExperimentConfig;
use qdspin::experiments::run_optical_pumping;

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn main() -> qdspin::Result<()> {
    for name in ["pumping_no_rotation.ini", "pumping_with_rotation.ini"] {
        let cfg = ExperimentConfig::from_path(&configs().join(name))?;
        let diagram = cfg.diagram()?;
        let drive = cfg.drive();
        let side = cfg.side_effects();
        let rates = drive.rates(&cfg.rates(), &diagram, cfg.pumping.with_rotation_laser.then_some(&side));
        let r = run_optical_pumping(&diagram, &rates, &drive, &cfg.readout_model(), cfg.pumping.duration_ns, cfg.pumping.dt_ns)?;
        println!(
            "{name}: F_init {:.4}, pumping rate {:.3}/ns, counts {:.4}",
            r.init_fidelity, r.pumping_rate, r.counts
        );
    }
    Ok(())
}
