//! Fit a noisy Gaussian-damped cosine and a Rabi power curve.

use std::f64::consts::{PI, TAU};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use qdspin::fitting::{
    extract_g_factor, fit_gauss_cosine, fit_rabi_power, model_gauss_cosine, model_rabi_power, DataSeries,
    GaussCosineFitOptions, GaussCosineParams, LmOptions,
};

fn main() -> qdspin::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noise = Normal::new(0.0, 0.05).unwrap();
    let truth = GaussCosineParams { amplitude: 1.0, angular_frequency: TAU * 12.7, phase: 0.2, dephasing_time: 2.2, offset: 0.5 };

    let x: Vec<f64> = (0..400).map(|i| 3.0 * i as f64 / 399.0).collect();
    let y = x.iter().map(|&t| model_gauss_cosine(&truth, t) + noise.sample(&mut rng)).collect();
    let fit = fit_gauss_cosine(&DataSeries::new(x, y, None)?, GaussCosineFitOptions::default(), &LmOptions::default())?;
    println!("{}", fit.table());
    let nu = fit.get("angular_frequency").unwrap() / TAU;
    println!("|g| = {:.3}", extract_g_factor(nu, 2.0)?);

    let a = PI / 10.0;
    let p: Vec<f64> = (0..50).map(|i| 2.0 * i as f64).collect();
    let c = p.iter().map(|&w| model_rabi_power(1.0, a, w) + 0.02 * noise.sample(&mut rng)).collect();
    let rabi = fit_rabi_power(&DataSeries::new(p, c, None)?, &LmOptions::default())?;
    println!("{}", rabi.table());
    Ok(())
}
