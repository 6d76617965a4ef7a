//! Optical pumping, rotation calibration and Ramsey interference with
//! quasi-static Overhauser dephasing.

use std::f64::consts::TAU;
use std::io::Write;

use nalgebra::{Matrix2, Matrix4};
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{domain, Error, Result};
use crate::fitting::{extract_g_factor, fit_gauss_cosine, DataSeries, FitResult, GaussCosineFitOptions, LmOptions};
use crate::lindblad::{
    evolve_with, ground_detuning_phase, propagate, repump_rate, DensityMatrix, DriveTerm, EvolveOptions, FreeEvolution,
    FreeStep, Mat4, Propagation, RateSet, Trajectory,
};
use crate::physics::{LevelDiagram, GROUND_HIGH, GROUND_LOW, TRIONS, TRION_A, TRION_B};
use crate::pulses::{effective_rotation, rotation_drives, EffectiveRotation, RamseyLayout, RotationPulse};

/// Trion-kick probability giving a rotation fidelity of 0.99.
pub const DEFAULT_TRION_KICK: f64 = 4.0 / 3.0 * (1.0 - 0.99 * 0.99);
/// 90 μs⁻¹ in 1/ns.
pub const DEFAULT_ADDED_SPINFLIP: f64 = 0.09;
/// Broadening of the repump line while the rotation laser is on.
pub const DEFAULT_REPUMP_BROADENING: f64 = 7.9957;
/// Lorentzian FWHM of the optical lines, 2π × 1.8 GHz.
pub const DEFAULT_LINE_FWHM: f64 = TAU * 1.8;
pub const DEFAULT_COLLECTION_EFFICIENCY: f64 = 0.8;
/// ensemble size × number of delays above which runs must be forced.
pub const MAX_SHOTS: usize = 20_000_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OverhauserModel {
    /// Standard deviation of the Larmor detuning (rad/ns).
    pub sigma_delta: f64,
    pub seed: u64,
}

impl OverhauserModel {
    /// σ = √2/T2* so that ⟨cos δτ⟩ = exp(−(τ/T2*)²).
    pub fn from_t2_star(t2_star: f64, seed: u64) -> Result<Self> {
        if !(t2_star > 0.0) {
            return domain(format!("T2* must be positive, got {t2_star}"));
        }
        Ok(Self { sigma_delta: 2f64.sqrt() / t2_star, seed })
    }

    pub fn t2_star(&self) -> f64 {
        2f64.sqrt() / self.sigma_delta
    }

    /// Detuning of ensemble member `member`, drawn from its own stream.
    pub fn member(&self, member: u64) -> f64 {
        if self.sigma_delta == 0.0 {
            return 0.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(member);
        Normal::new(0.0, self.sigma_delta).expect("finite sigma").sample(&mut rng)
    }
}

pub fn sample_overhauser(model: &OverhauserModel, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return domain("need at least one Overhauser sample");
    }
    if !(model.sigma_delta >= 0.0) || !model.sigma_delta.is_finite() {
        return domain(format!("sigma_delta must be finite and non-negative, got {}", model.sigma_delta));
    }
    Ok((0..n as u64).map(|m| model.member(m)).collect())
}

/// Ensemble mean and standard error of cos(δτ) for each delay.
pub fn ensemble_coherence(model: &OverhauserModel, taus: &[f64], n: usize) -> Result<Vec<(f64, f64)>> {
    let deltas = sample_overhauser(model, n)?;
    Ok(taus
        .iter()
        .map(|&tau| {
            let vals: Vec<f64> = deltas.iter().map(|d| (d * tau).cos()).collect();
            mean_stderr(&vals)
        })
        .collect())
}

fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotationLaserSideEffects {
    /// Incoherent transfer ground → trion per rotation pulse.
    pub trion_excitation_prob: f64,
    /// Extra ground spin-flip rate (1/ns).
    pub added_spinflip_rate: f64,
    /// Multiplier on the repump line width.
    pub repump_broadening_factor: f64,
}

impl RotationLaserSideEffects {
    pub fn none() -> Self {
        Self { trion_excitation_prob: 0.0, added_spinflip_rate: 0.0, repump_broadening_factor: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.trion_excitation_prob) {
            return domain(format!("trion excitation probability must lie in [0, 1], got {}", self.trion_excitation_prob));
        }
        if !(self.added_spinflip_rate >= 0.0) {
            return domain(format!("added spin-flip rate must be non-negative, got {}", self.added_spinflip_rate));
        }
        if !(self.repump_broadening_factor >= 1.0) {
            return domain(format!("repump broadening factor must be at least 1, got {}", self.repump_broadening_factor));
        }
        Ok(())
    }
}

impl Default for RotationLaserSideEffects {
    fn default() -> Self {
        Self {
            trion_excitation_prob: DEFAULT_TRION_KICK,
            added_spinflip_rate: DEFAULT_ADDED_SPINFLIP,
            repump_broadening_factor: DEFAULT_REPUMP_BROADENING,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReadoutModel {
    pub collection_efficiency: f64,
    /// Relative to the start of the readout pulse (ns).
    pub window: (f64, f64),
    /// Constant additive counts.
    pub background: f64,
}

impl ReadoutModel {
    pub fn full_pulse(duration: f64) -> Self {
        Self { collection_efficiency: DEFAULT_COLLECTION_EFFICIENCY, window: (0.0, duration), background: 0.0 }
    }

    pub fn validate(&self, pulse_duration: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&self.collection_efficiency) {
            return domain(format!("collection efficiency must lie in [0, 1], got {}", self.collection_efficiency));
        }
        let (a, b) = self.window;
        if !(a >= 0.0 && b > a && b <= pulse_duration + 1e-12) {
            return domain(format!("readout window ({a}, {b}) must lie inside the {pulse_duration} ns pulse"));
        }
        if !(self.background >= 0.0) {
            return domain("background must be non-negative");
        }
        Ok(())
    }
}

/// The resonant pumping/readout laser.
#[derive(Clone, Debug, PartialEq)]
pub struct PumpingDrive {
    pub rabi: f64,
    pub targets: Vec<usize>,
    /// Lorentzian FWHM of the lines (rad/ns), before any broadening.
    pub line_fwhm: f64,
}

impl PumpingDrive {
    pub fn new(rabi: f64, targets: Vec<usize>) -> Self {
        Self { rabi, targets, line_fwhm: DEFAULT_LINE_FWHM }
    }

    pub fn drives(&self) -> Vec<DriveTerm> {
        self.targets.iter().map(|&t| DriveTerm::resonant(t, self.rabi)).collect()
    }

    /// Rates while the laser is on: off-resonant repumping of the upper
    /// ground state plus any rotation-laser side effects.
    pub fn rates(&self, base: &RateSet, diagram: &LevelDiagram, side: Option<&RotationLaserSideEffects>) -> RateSet {
        let broadening = side.map_or(1.0, |s| s.repump_broadening_factor);
        let mut r = with_side_effects(base, side);
        r.gamma_repump = base.gamma_repump + repump_rate(self.rabi, self.line_fwhm * broadening, diagram.ground_splitting);
        r
    }
}

fn with_side_effects(base: &RateSet, side: Option<&RotationLaserSideEffects>) -> RateSet {
    let mut r = *base;
    if let Some(s) = side {
        r.kappa_spinflip += s.added_spinflip_rate;
    }
    r
}

#[derive(Clone, Debug)]
pub struct PumpingResult {
    pub trajectory: Trajectory,
    /// Population of the undriven ground state at the end.
    pub init_fidelity: f64,
    /// η·∫ emission over the readout window.
    pub counts: f64,
    pub rabi_resolved: bool,
    /// Estimated rate of pumping out of the driven state (1/ns).
    pub pumping_rate: f64,
}

/// Resonant pumping from an unpolarized spin. `rates` are used as given.
pub fn run_optical_pumping(
    diagram: &LevelDiagram,
    rates: &RateSet,
    drive: &PumpingDrive,
    readout: &ReadoutModel,
    duration: f64,
    dt: f64,
) -> Result<PumpingResult> {
    readout.validate(duration)?;
    if drive.targets.iter().any(|&t| diagram.transitions.get(t).is_none_or(|tr| tr.from_level != GROUND_LOW)) {
        return domain("pumping drive must target transitions out of the lower ground state");
    }
    let opts = EvolveOptions { record_stride: ((0.01 / dt).round() as usize).max(1), ..Default::default() };
    let trajectory = evolve_with(&DensityMatrix::unpolarized_ground(), diagram, &drive.drives(), rates, (0.0, duration), dt, opts)?;
    let init_fidelity = trajectory.final_state().population(GROUND_HIGH);
    let counts = readout.collection_efficiency * trajectory.integrated_emission(readout.window.0, readout.window.1) + readout.background;
    // saturated two-level estimate: trion occupation s/(2(1+s)) with half the decays landing in the dark state
    let bright = drive.rabi * (drive.targets.len() as f64).sqrt();
    let s = 2.0 * bright.powi(2) / rates.gamma_decay.max(f64::MIN_POSITIVE).powi(2);
    let pumping_rate = rates.gamma_decay * 0.5 * s / (2.0 * (1.0 + s));
    let rabi_resolved = bright > rates.gamma_decay && bright / TAU > pumping_rate;
    Ok(PumpingResult { trajectory, init_fidelity, counts, rabi_resolved, pumping_rate })
}

/// Instantaneous incoherent transfer of probability p from each ground state
/// to its trion partner.
pub fn trion_kick(rho: &Mat4, p: f64) -> Mat4 {
    if p == 0.0 {
        return *rho;
    }
    let a = (1.0 - p).sqrt();
    let mut out = *rho;
    for g in [GROUND_LOW, GROUND_HIGH] {
        for k in 0..4 {
            out[(g, k)] *= a;
            out[(k, g)] *= a;
        }
    }
    out[(TRION_A, TRION_A)] += rho[(GROUND_LOW, GROUND_LOW)] * p;
    out[(TRION_B, TRION_B)] += rho[(GROUND_HIGH, GROUND_HIGH)] * p;
    out
}

pub fn apply_ground_unitary(rho: &Mat4, u: &Matrix2<C64>) -> Mat4 {
    let mut v = Mat4::identity();
    v.fixed_view_mut::<2, 2>(0, 0).copy_from(u);
    v * rho * v.adjoint()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RamseyMode {
    #[default]
    Effective,
    FullIntegration,
}

impl std::fmt::Display for RamseyMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RamseyMode::Effective => "effective",
            RamseyMode::FullIntegration => "full",
        })
    }
}

impl std::str::FromStr for RamseyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "effective" => Ok(Self::Effective),
            "full" | "full_integration" => Ok(Self::FullIntegration),
            other => domain(format!("unknown Ramsey mode '{other}' (expected effective or full)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum InitialState {
    /// Unpolarized spin pumped by the init pulse.
    Pumped,
    /// Given state at the end of the init pulse.
    Prepared(DensityMatrix),
}

#[derive(Clone, Debug)]
pub struct RamseyConfig {
    pub diagram: LevelDiagram,
    /// Γ, branching and background spin flips.
    pub rates: RateSet,
    pub drive: PumpingDrive,
    pub layout: RamseyLayout,
    pub rotation: RotationPulse,
    pub taus: Vec<f64>,
    pub mode: RamseyMode,
    pub ensemble_size: usize,
    pub overhauser: OverhauserModel,
    pub side_effects: RotationLaserSideEffects,
    pub readout: ReadoutModel,
    pub initial: InitialState,
    pub resonant_dt: f64,
    pub rotation_dt: f64,
    pub allow_large_runs: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RamseyTrace {
    pub delays: Vec<f64>,
    pub signal: Vec<f64>,
    pub stderr: Vec<f64>,
    pub ensemble_size: usize,
    pub mode: RamseyMode,
    /// Undriven-ground population after the init pulse.
    pub init_fidelity: f64,
}

impl RamseyTrace {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["delay_ns", "signal", "signal_stderr"])?;
        for ((d, s), e) in self.delays.iter().zip(&self.signal).zip(&self.stderr) {
            out.write_record([d.to_string(), s.to_string(), e.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn data_series(&self) -> Result<DataSeries> {
        DataSeries::new(self.delays.clone(), self.signal.clone(), None)
    }
}

/// Precomputed pieces shared by every shot.
struct RamseyKernel {
    init: Mat4,
    lead_in: FreeStep,
    half_window: FreeStep,
    lead_out: FreeStep,
    half_window_t: f64,
    lead_in_t: f64,
    lead_out_t: f64,
    rotation: RotationStage,
    kick: f64,
    free: FreeEvolution,
    readout: Propagation,
}

enum RotationStage {
    Effective(EffectiveRotation),
    Full(Propagation),
}

impl RamseyKernel {
    fn free(&self, rho: &Mat4, step: &FreeStep, delta: f64) -> Mat4 {
        ground_detuning_phase(&step.apply(rho), delta, step.duration())
    }

    fn rotate(&self, rho: &Mat4, delta: f64) -> Mat4 {
        let rotated = match &self.rotation {
            RotationStage::Effective(r) => {
                let a = self.free(rho, &self.half_window, delta);
                let b = trion_kick(&apply_ground_unitary(&a, &r.unitary), self.kick);
                self.free(&b, &self.half_window, delta)
            }
            RotationStage::Full(p) => {
                let a = ground_detuning_phase(rho, delta, self.half_window_t);
                let b = p.apply(&a);
                let c = ground_detuning_phase(&b, delta, self.half_window_t);
                // the kick acts at the pulse center; moving it to the edge is
                // exact for the populations it transfers
                trion_kick(&c, self.kick)
            }
        };
        rotated
    }

    fn shot(&self, tau_step: &FreeStep, delta: f64) -> f64 {
        let mut rho = self.free(&self.init, &self.lead_in, delta);
        rho = self.rotate(&rho, delta);
        rho = self.free(&rho, tau_step, delta);
        rho = self.rotate(&rho, delta);
        rho = self.free(&rho, &self.lead_out, delta);
        self.readout.integrated_emission(&rho)
    }
}

impl RamseyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ensemble_size == 0 {
            return domain("ensemble_size must be at least 1");
        }
        if self.taus.is_empty() {
            return domain("tau grid is empty");
        }
        if self.taus.iter().any(|&t| !(t >= 0.0)) {
            return domain("delays must be non-negative");
        }
        if self.taus.windows(2).any(|w| !(w[1] > w[0])) {
            return domain("delays must be strictly increasing");
        }
        self.side_effects.validate()?;
        self.rates.validate()?;
        self.readout.validate(self.layout.readout_duration)?;
        let work = self.ensemble_size * self.taus.len();
        if work > MAX_SHOTS && !self.allow_large_runs {
            return Err(Error::RuntimeGuard { work, limit: MAX_SHOTS });
        }
        Ok(())
    }

    /// Rates with the rotation laser's extra spin flips, used between pulses.
    pub fn dark_rates(&self) -> RateSet {
        let mut r = with_side_effects(&self.rates, Some(&self.side_effects));
        r.gamma_repump = 0.0;
        r
    }

    pub fn laser_rates(&self) -> RateSet {
        self.drive.rates(&self.rates, &self.diagram, Some(&self.side_effects))
    }

    fn init_state(&self) -> Result<Mat4> {
        match &self.initial {
            InitialState::Prepared(rho) => Ok(rho.0),
            InitialState::Pumped => {
                let opts = EvolveOptions { record_stride: usize::MAX, ..Default::default() };
                let traj = evolve_with(
                    &DensityMatrix::unpolarized_ground(),
                    &self.diagram,
                    &self.drive.drives(),
                    &self.laser_rates(),
                    (0.0, self.layout.init_duration),
                    self.resonant_dt,
                    opts,
                )?;
                Ok(traj.final_state().0)
            }
        }
    }

    fn kernel(&self) -> Result<RamseyKernel> {
        let dark = self.dark_rates();
        let free = FreeEvolution::new(&self.diagram, &dark)?;
        let w = self.rotation.window();
        let lead_in_t = self.layout.lead_in - w / 2.0;
        let rotation = match self.mode {
            RamseyMode::Effective => RotationStage::Effective(effective_rotation(&self.rotation, &self.diagram)?),
            RamseyMode::FullIntegration => {
                let drives = rotation_drives(&self.rotation, &self.diagram, w / 2.0);
                RotationStage::Full(propagate(&self.diagram, &drives, &dark, (0.0, w), self.rotation_dt, (0.0, 0.0), false)?)
            }
        };
        let readout = propagate(
            &self.diagram,
            &self.drive.drives(),
            &self.laser_rates(),
            (0.0, self.layout.readout_duration),
            self.resonant_dt,
            self.readout.window,
            false,
        )?;
        Ok(RamseyKernel {
            init: self.init_state()?,
            lead_in: free.step(lead_in_t),
            half_window: free.step(w / 2.0),
            lead_out: free.step(self.layout.lead_out),
            half_window_t: w / 2.0,
            lead_in_t,
            lead_out_t: self.layout.lead_out,
            rotation,
            kick: self.side_effects.trion_excitation_prob,
            free,
            readout,
        })
    }
}

pub fn run_ramsey(config: &RamseyConfig) -> Result<RamseyTrace> {
    config.validate()?;
    let kernel = config.kernel()?;
    debug_assert!(kernel.lead_in_t > 0.0 && kernel.lead_out_t > 0.0);
    let deltas = sample_overhauser(&config.overhauser, config.ensemble_size)?;
    let eta = config.readout.collection_efficiency;
    let bg = config.readout.background;
    let rows: Vec<(f64, f64)> = config
        .taus
        .par_iter()
        .map(|&tau| {
            let step = kernel.free.step(tau);
            let shots: Vec<f64> = deltas.iter().map(|&d| eta * kernel.shot(&step, d) + bg).collect();
            mean_stderr(&shots)
        })
        .collect();
    let init_fidelity = kernel.init[(GROUND_HIGH, GROUND_HIGH)].re;
    Ok(RamseyTrace {
        delays: config.taus.clone(),
        signal: rows.iter().map(|r| r.0).collect(),
        stderr: rows.iter().map(|r| r.1).collect(),
        ensemble_size: config.ensemble_size,
        mode: config.mode,
        init_fidelity,
    })
}

/// (I_max − I_min)/(I_max + I_min) over the first period 2π/ω of the trace.
pub fn contrast_over_first_period(delays: &[f64], signal: &[f64], omega: f64) -> Result<f64> {
    if delays.is_empty() || delays.len() != signal.len() {
        return domain("trace is empty or mismatched");
    }
    let period = TAU / omega.abs();
    let start = delays[0];
    if !(delays[delays.len() - 1] - start >= period) {
        return domain(format!(
            "trace spans {:.4} ns, shorter than one fringe period {:.4} ns",
            delays[delays.len() - 1] - start,
            period
        ));
    }
    let window: Vec<f64> = delays.iter().zip(signal).filter(|(d, _)| **d <= start + period).map(|(_, s)| *s).collect();
    let hi = window.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = window.iter().cloned().fold(f64::INFINITY, f64::min);
    if hi + lo == 0.0 {
        return Ok(0.0);
    }
    Ok((hi - lo) / (hi + lo))
}

/// Contrast over the first fitted fringe period of the raw signal.
pub fn ramsey_contrast(trace: &RamseyTrace) -> Result<f64> {
    let hi = trace.signal.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = trace.signal.iter().cloned().fold(f64::INFINITY, f64::min);
    if trace.signal.len() < 6 {
        return domain("trace too short to locate a fringe period");
    }
    if hi == lo {
        return Ok(0.0);
    }
    let fit = fit_gauss_cosine(&trace.data_series()?, GaussCosineFitOptions::default(), &LmOptions::default())?;
    let omega = fit.get("angular_frequency").expect("gauss-cosine has a frequency");
    contrast_over_first_period(&trace.delays, &trace.signal, omega)
}

/// Evaluation route for [`rotation_fidelity`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FidelityMode {
    Effective,
    /// RK4 over the pulse window with the given step.
    Full { dt: f64 },
}

/// Superoperator on the ground block (column-major vec of a 2×2 matrix).
type GroundMap = Matrix4<C64>;

fn ground_block(m: &Mat4) -> Matrix2<C64> {
    m.fixed_view::<2, 2>(0, 0).into_owned()
}

fn embed(g: &Matrix2<C64>) -> Mat4 {
    let mut m = Mat4::zeros();
    m.fixed_view_mut::<2, 2>(0, 0).copy_from(g);
    m
}

/// Ground-subspace map of a 4×4 channel; trion population left at the end
/// returns to the grounds through the branching ratios.
fn ground_map(channel: impl Fn(&Mat4) -> Mat4, rates: &RateSet) -> GroundMap {
    let mut s = GroundMap::zeros();
    for col in 0..4 {
        let mut unit = Matrix2::<C64>::zeros();
        unit[(col % 2, col / 2)] = C64::new(1.0, 0.0);
        let out = channel(&embed(&unit));
        let mut g = ground_block(&out);
        for (i, &t) in TRIONS.iter().enumerate() {
            for j in 0..2 {
                g[(j, j)] += out[(t, t)] * rates.branching[i][j];
            }
        }
        for (k, v) in g.iter().enumerate() {
            s[(k, col)] = *v;
        }
    }
    s
}

fn unitary_map(u: &Matrix2<C64>) -> GroundMap {
    let mut s = GroundMap::zeros();
    for col in 0..4 {
        let mut unit = Matrix2::<C64>::zeros();
        unit[(col % 2, col / 2)] = C64::new(1.0, 0.0);
        let out = u * unit * u.adjoint();
        for (k, v) in out.iter().enumerate() {
            s[(k, col)] = *v;
        }
    }
    s
}

/// √(process fidelity) between the realized ground map of one rotation window
/// and the ideal window (free precession around the effective unitary). For a
/// unitary realization this equals |Tr(U_ideal† U)|/2.
pub fn rotation_fidelity(
    pulse: &RotationPulse,
    diagram: &LevelDiagram,
    rates: &RateSet,
    side_effects: &RotationLaserSideEffects,
    mode: FidelityMode,
) -> Result<f64> {
    side_effects.validate()?;
    let ideal = effective_rotation(pulse, diagram)?;
    let half = pulse.window() / 2.0;
    let phase = Matrix2::from_diagonal(&nalgebra::Vector2::new(
        C64::from_polar(1.0, -diagram.energies[GROUND_LOW] * half),
        C64::from_polar(1.0, -diagram.energies[GROUND_HIGH] * half),
    ));
    let u_ideal = phase * ideal.unitary * phase;
    let p = side_effects.trion_excitation_prob;
    let realized = match mode {
        FidelityMode::Effective => ground_map(|rho| trion_kick(&apply_ground_unitary(rho, &u_ideal), p), rates),
        FidelityMode::Full { dt } => {
            let drives = rotation_drives(pulse, diagram, half);
            let prop = propagate(diagram, &drives, rates, (0.0, 2.0 * half), dt, (0.0, 0.0), false)?;
            ground_map(|rho| trion_kick(&prop.apply(rho), p), rates)
        }
    };
    let overlap = (unitary_map(&u_ideal).adjoint() * realized).trace().re / 4.0;
    Ok(overlap.max(0.0).sqrt())
}

/// Trion-kick probability for a target fidelity in effective mode.
pub fn calibrate_trion_kick(target_fidelity: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&target_fidelity) || target_fidelity < 0.5 {
        return domain(format!("target fidelity must lie in [0.5, 1], got {target_fidelity}"));
    }
    Ok(4.0 / 3.0 * (1.0 - target_fidelity * target_fidelity))
}

/// Rotation angle realized by full integration, read from the population
/// transferred out of the lower ground state (valid for angles up to π).
pub fn full_integration_angle(pulse: &RotationPulse, diagram: &LevelDiagram, rates: &RateSet, dt: f64) -> Result<f64> {
    let w = pulse.window();
    let drives = rotation_drives(pulse, diagram, w / 2.0);
    let prop = propagate(diagram, &drives, rates, (0.0, w), dt, (0.0, 0.0), false)?;
    let out = prop.apply(&DensityMatrix::pure(GROUND_LOW).0);
    let flipped = out[(GROUND_HIGH, GROUND_HIGH)].re / (out[(GROUND_LOW, GROUND_LOW)].re + out[(GROUND_HIGH, GROUND_HIGH)].re);
    Ok(2.0 * flipped.clamp(0.0, 1.0).sqrt().asin())
}

/// Bisection on a monotone scalar response.
pub fn bisect(mut lo: f64, mut hi: f64, target: f64, tol: f64, f: impl Fn(f64) -> Result<f64>) -> Result<f64> {
    let (flo, fhi) = (f(lo)? - target, f(hi)? - target);
    if flo * fhi > 0.0 {
        return domain(format!("target {target} not bracketed on [{lo}, {hi}]"));
    }
    let increasing = fhi > flo;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo < tol {
            return Ok(mid);
        }
        let fm = f(mid)? - target;
        if (fm > 0.0) == increasing {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LarmorRow {
    pub field_tesla: f64,
    pub frequency_ghz: f64,
    pub frequency_stderr_ghz: f64,
    pub t2_star: f64,
    pub g_factor: f64,
    pub fit_ok: bool,
    pub note: String,
}

/// Fringe fit and g-factor for each (field, trace) pair. Failed fits are kept
/// as flagged rows.
pub fn extract_larmor_series(traces: &[(f64, RamseyTrace)]) -> Vec<LarmorRow> {
    traces
        .iter()
        .map(|(field, trace)| {
            let fit: Result<FitResult> = trace
                .data_series()
                .and_then(|d| fit_gauss_cosine(&d, GaussCosineFitOptions::default(), &LmOptions::default()));
            match fit {
                Ok(f) => {
                    let nu = f.get("angular_frequency").unwrap_or(f64::NAN) / TAU;
                    let g = extract_g_factor(nu, *field);
                    LarmorRow {
                        field_tesla: *field,
                        frequency_ghz: nu,
                        frequency_stderr_ghz: f.uncertainty("angular_frequency").unwrap_or(f64::NAN) / TAU,
                        t2_star: f.get("t2_star").unwrap_or(f64::NAN),
                        g_factor: g.as_ref().copied().unwrap_or(f64::NAN),
                        fit_ok: f.converged && g.is_ok(),
                        note: if f.converged { String::new() } else { "fit did not converge".into() },
                    }
                }
                Err(e) => LarmorRow {
                    field_tesla: *field,
                    frequency_ghz: f64::NAN,
                    frequency_stderr_ghz: f64::NAN,
                    t2_star: f64::NAN,
                    g_factor: f64::NAN,
                    fit_ok: false,
                    note: e.to_string(),
                },
            }
        })
        .collect()
}

/// Adds Gaussian noise of standard deviation `fraction` × (max − min)/2 of the
/// clean signal. Drawn from a stream disjoint from the ensemble members.
pub fn add_fringe_noise(trace: &mut RamseyTrace, fraction: f64, seed: u64) -> Result<()> {
    if !(fraction >= 0.0) || !fraction.is_finite() {
        return domain(format!("noise fraction must be non-negative, got {fraction}"));
    }
    if fraction == 0.0 || trace.signal.is_empty() {
        return Ok(());
    }
    let hi = trace.signal.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = trace.signal.iter().cloned().fold(f64::INFINITY, f64::min);
    let sigma = fraction * (hi - lo) / 2.0;
    if sigma == 0.0 {
        return Ok(());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    for (s, e) in trace.signal.iter_mut().zip(trace.stderr.iter_mut()) {
        *s += normal.sample(&mut rng);
        *e = e.hypot(sigma);
    }
    Ok(())
}
