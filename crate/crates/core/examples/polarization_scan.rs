//! Waveplate scan for the circular-dipole contrast.

use std::f64::consts::PI;

use qdspin::polarization::{
    contrast_scan, far_field, optimal_setting, ContrastTarget, JonesMatrix, JonesVector, OpticalChain,
};

fn main() -> qdspin::Result<()> {
    let input = JonesVector::horizontal();
    let transfer = JonesMatrix::default_transfer();
    let map = contrast_scan(&input, &transfer, 0.316, PI / 180.0, OpticalChain::HalfThenQuarter)?;
    for target in [ContrastTarget::MaximizeRplus, ContrastTarget::MaximizeRminus] {
        let (s, ratio) = optimal_setting(&map, target)?;
        let ff = far_field(&input, &s, OpticalChain::HalfThenQuarter);
        println!(
            "{target:?}: hwp {:.0} deg, qwp {:.0} deg, ratio {ratio:.3}, far field {:?}",
            s.hwp().to_degrees(),
            s.qwp().to_degrees(),
            ff.classify()
        );
    }
    Ok(())
}
