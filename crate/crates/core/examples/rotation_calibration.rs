//! Power for a π/2 rotation and the resulting fidelity.

use std::f64::consts::PI;

use qdspin::config::ExperimentConfig;
use qdspin::experiments::{rotation_fidelity, FidelityMode};
use qdspin::pulses::{angle_from_power, calibrate_power, effective_rotation, DEFAULT_POWER_COEFFICIENT};

fn main() -> qdspin::Result<()> {
    let cfg = ExperimentConfig::default();
    let power = calibrate_power(PI / 2.0, DEFAULT_POWER_COEFFICIENT)?;
    println!("pi/2 needs {power:.2} uW");

    let diagram = cfg.diagram()?;
    let pulse = cfg.rotation_pulse_for_angle(PI / 2.0)?;
    let r = effective_rotation(&pulse, &diagram)?;
    println!("peak Rabi {:.1} rad/ns, axis {:?}", pulse.peak_rabi, r.axis.map(|a| (a * 1e3).round() / 1e3));
    let f = rotation_fidelity(&pulse, &diagram, &cfg.rates(), &cfg.side_effects(), FidelityMode::Effective)?;
    println!("fidelity {f:.4}");

    for p in [0.0, 25.0, 100.0, 225.0] {
        println!("{p:>6.1} uW -> {:.3} rad", angle_from_power(p, DEFAULT_POWER_COEFFICIENT)?);
    }
    Ok(())
}
