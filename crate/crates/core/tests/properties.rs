mod common;

use std::f64::consts::{PI, TAU};

use num_complex::Complex64 as C64;
use proptest::prelude::*;

use qdspin::config::ExperimentConfig;
use qdspin::experiments::{sample_overhauser, OverhauserModel};
use qdspin::lindblad::{evolve, DensityMatrix, DriveTerm, RateSet};
use qdspin::physics::zeeman_splitting;
use qdspin::polarization::{excitation_rates, waveplate, JonesVector, WaveplateKind};
use qdspin::pulses::{angle_from_power, calibrate_power, EffectiveRotation};

fn unit_axis() -> impl Strategy<Value = [f64; 3]> {
    (0.0..PI, 0.0..TAU).prop_map(|(th, ph)| [th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()])
}

fn jones() -> impl Strategy<Value = JonesVector> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
        .prop_filter("non-zero field", |(a, b, c, d)| a * a + b * b + c * c + d * d > 1e-3)
        .prop_map(|(a, b, c, d)| JonesVector::new(C64::new(a, b), C64::new(c, d)))
}

proptest! {
    #[test]
    fn zeeman_is_linear_in_field_and_g(g in -3.0..3.0f64, b in 0.0..10.0f64, k in 0.0..5.0f64) {
        let base = zeeman_splitting(g, b).unwrap();
        prop_assert!((zeeman_splitting(g, k * b).unwrap() - k * base).abs() <= 1e-9 * (1.0 + k * base.abs()));
        prop_assert!((zeeman_splitting(2.0 * g, b).unwrap() - 2.0 * base).abs() <= 1e-9 * (1.0 + base.abs()));
    }

    #[test]
    fn waveplates_are_unitary(angle in -TAU..TAU, half in any::<bool>()) {
        let kind = if half { WaveplateKind::Half } else { WaveplateKind::Quarter };
        prop_assert!(waveplate(kind, angle).unitarity_defect() < 1e-12);
    }

    #[test]
    fn global_phase_leaves_rates_unchanged(e in jones(), phi in 0.0..TAU, eps in 0.0..0.49f64) {
        let (p0, m0) = excitation_rates(&e.normalized(), eps);
        let (p1, m1) = excitation_rates(&e.normalized().scale(C64::from_polar(1.0, phi)), eps);
        prop_assert!((p0 - p1).abs() < 1e-12 && (m0 - m1).abs() < 1e-12);
    }

    #[test]
    fn stokes_of_pure_state_is_on_sphere(e in jones()) {
        let s = e.stokes();
        prop_assert!((s[1] * s[1] + s[2] * s[2] + s[3] * s[3] - s[0] * s[0]).abs() < 1e-9 * s[0] * s[0]);
    }

    #[test]
    fn rotations_are_unitary_and_additive(axis in unit_axis(), a in -TAU..TAU, b in -TAU..TAU) {
        let ra = EffectiveRotation::from_axis_angle(axis, a);
        let rb = EffectiveRotation::from_axis_angle(axis, b);
        let rab = EffectiveRotation::from_axis_angle(axis, a + b);
        prop_assert!(ra.unitarity_defect() < 1e-12);
        let diff = (rb.unitary * ra.unitary - rab.unitary).iter().map(|z| z.norm()).fold(0.0, f64::max);
        prop_assert!(diff < 1e-12);
    }

    #[test]
    fn power_calibration_round_trips(angle in 0.0..4.0 * PI, coeff in 0.01..2.0f64) {
        let p = calibrate_power(angle, coeff).unwrap();
        prop_assert!((angle_from_power(p, coeff).unwrap() - angle).abs() < 1e-12 * (1.0 + angle));
    }

    #[test]
    fn overhauser_draws_are_reproducible(seed in any::<u64>(), t2 in 0.5..10.0f64) {
        let m = OverhauserModel::from_t2_star(t2, seed).unwrap();
        let a = sample_overhauser(&m, 50).unwrap();
        let b = sample_overhauser(&m, 80).unwrap();
        prop_assert_eq!(&a[..], &b[..50]);
        prop_assert_eq!(a[17], m.member(17));
    }

    #[test]
    fn config_round_trips(field in 0.0..8.0f64, seed in any::<u64>(), n in 1usize..100_000, t2 in 0.1..20.0f64, full in any::<bool>()) {
        let mut c = ExperimentConfig::default();
        c.system.field_tesla = field;
        c.overhauser.seed = seed;
        c.overhauser.ensemble_size = n;
        c.overhauser.t2_star_ns = t2;
        c.calibration.full_integration = full;
        let back = ExperimentConfig::from_ini_str(&c.to_ini_string()).unwrap();
        prop_assert_eq!(back, c);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn lindblad_preserves_trace_and_hermiticity(
        rabi in 0.0..20.0f64,
        detuning in -30.0..30.0f64,
        gamma in 0.0..3.0f64,
        kappa in 0.0..0.5f64,
        repump in 0.0..0.5f64,
        dephasing in 0.0..1.0f64,
        b0 in 0.0..1.0f64,
        field in 0.0..3.0f64,
    ) {
        let diagram = common::voigt(field);
        let rates = RateSet {
            gamma_decay: gamma,
            branching: [[b0, 1.0 - b0], [1.0 - b0, b0]],
            kappa_spinflip: kappa,
            gamma_repump: repump,
            gamma_spin_dephasing: dephasing,
        };
        let drives = [
            DriveTerm { detuning, ..DriveTerm::resonant(0, rabi) },
            DriveTerm { detuning, ..DriveTerm::resonant(2, 0.5 * rabi) },
        ];
        let traj = evolve(&DensityMatrix::unpolarized_ground(), &diagram, &drives, &rates, (0.0, 2.0), 1e-3).unwrap();
        prop_assert!(traj.max_trace_drift < 1e-9);
        prop_assert!(traj.max_hermiticity_defect < 1e-10);
        prop_assert!(traj.min_eigenvalue > -1e-8);
        let last = traj.final_state();
        let tr: f64 = (0..4).map(|k| last.population(k)).sum();
        prop_assert!((tr - 1.0).abs() < 1e-9);
    }
}
