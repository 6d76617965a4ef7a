//! Effective unitary against full Lindblad integration of the same pulse.

use std::f64::consts::PI;

use qdspin::config::ExperimentConfig;
use qdspin::experiments::full_integration_angle;
use qdspin::lindblad::RateSet;
use qdspin::pulses::effective_rotation;

fn main() -> qdspin::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.system.field_tesla = 0.0;
    let diagram = cfg.diagram()?;
    let rates = RateSet { gamma_decay: 0.0, ..cfg.rates() };
    // longer pulses lower the peak Rabi frequency at fixed angle
    for stretch in [1.0, 9.0, 36.0, 100.0] {
        cfg.pulses.rotation_fwhm_ps = 6.0 * stretch;
        let target = PI / 2.0;
        let pulse = cfg.rotation_pulse_for_angle(target)?;
        let eff = effective_rotation(&pulse, &diagram)?.angle;
        let full = full_integration_angle(&pulse, &diagram, &rates, 1e-5)?;
        println!(
            "t_p {:6.1} ps  Omega0/|Delta| {:.3}  effective {eff:.4}  full {full:.4}",
            pulse.fwhm * 1e3,
            pulse.peak_rabi / pulse.detuning.abs()
        );
    }
    Ok(())
}
