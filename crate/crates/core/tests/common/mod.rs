#![allow(dead_code)]

use std::f64::consts::TAU;
use std::path::PathBuf;

use qdspin::config::ExperimentConfig;
use qdspin::lindblad::{evolve_with, DensityMatrix, DriveTerm, EvolveOptions, RateSet, Trajectory};
use qdspin::physics::{build_level_diagram, GFactors, Geometry, LevelDiagram, TRION_A};

pub fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn load_config(name: &str) -> ExperimentConfig {
    ExperimentConfig::from_path(&configs_dir().join(name)).expect("shipped config parses")
}

pub fn voigt(field: f64) -> LevelDiagram {
    let g = GFactors { electron_inplane: qdspin::config::default_electron_g(), ..GFactors::default() };
    build_level_diagram(Geometry::Voigt, field, g, 0.316).unwrap()
}

/// Excited population of a resonantly driven two-level system with
/// radiative decay Γ and no pure dephasing, starting in the ground state.
pub fn torrey_excited(rabi: f64, gamma: f64, t: f64) -> f64 {
    let lambda = (rabi * rabi - gamma * gamma / 16.0).sqrt();
    let a = 3.0 * gamma / 4.0;
    rabi * rabi / (gamma * gamma + 2.0 * rabi * rabi) * (1.0 - (-a * t).exp() * ((lambda * t).cos() + a / lambda * (lambda * t).sin()))
}

pub struct DampedRabi {
    pub trajectory: Trajectory,
    pub max_error: f64,
}

/// g0 ↔ TA driven on resonance with TA decaying only back to g0.
pub fn damped_rabi(rabi: f64, dt: f64) -> DampedRabi {
    let diagram = voigt(2.0);
    let gamma = TAU * 0.2;
    let rates = RateSet { gamma_decay: gamma, branching: [[1.0, 0.0], [0.5, 0.5]], ..RateSet::zero() };
    let opts = EvolveOptions { record_stride: 10, ..Default::default() };
    let trajectory =
        evolve_with(&DensityMatrix::pure(0), &diagram, &[DriveTerm::resonant(0, rabi)], &rates, (0.0, 10.0), dt, opts).unwrap();
    let max_error = trajectory
        .times
        .iter()
        .zip(&trajectory.states)
        .map(|(&t, s)| (s.population(TRION_A) - torrey_excited(rabi, gamma, t)).abs())
        .fold(0.0, f64::max);
    DampedRabi { trajectory, max_error }
}
