//! Four-level Lindblad master equation: Liouvillian, fixed-step RK4
//! integration in a rotating frame, exact free propagation and superoperator
//! propagators.
//!
//! States handed in and out of this module are expressed in the frame rotating
//! at the zero-field trion line. Internally the integrator moves into the frame
//! of the first drive's laser so that a resonant drive is static.

use std::io::Write;

use nalgebra::{Matrix4, SMatrix, SVector};
use num_complex::Complex64 as C64;

use crate::error::{domain, Error, Result};
use crate::physics::{LevelDiagram, GROUND_HIGH, GROUND_LOW, TRIONS};

pub type Mat4 = Matrix4<C64>;
pub type Superop = SMatrix<C64, 16, 16>;
type Vec16 = SVector<C64, 16>;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const I: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityMatrix(pub Mat4);

impl DensityMatrix {
    pub fn pure(level: usize) -> Self {
        let mut m = Mat4::zeros();
        m[(level, level)] = C64::new(1.0, 0.0);
        Self(m)
    }

    pub fn from_populations(p: [f64; 4]) -> Self {
        Self(Mat4::from_diagonal(&nalgebra::Vector4::from_iterator(p.iter().map(|&x| C64::new(x, 0.0)))))
    }

    /// Unpolarized spin in the ground manifold.
    pub fn unpolarized_ground() -> Self {
        Self::from_populations([0.5, 0.5, 0.0, 0.0])
    }

    /// |ψ⟩⟨ψ| for a (not necessarily normalized) amplitude vector.
    pub fn from_amplitudes(psi: [C64; 4]) -> Self {
        let mut m = Mat4::zeros();
        for a in 0..4 {
            for b in 0..4 {
                m[(a, b)] = psi[a] * psi[b].conj();
            }
        }
        Self(m)
    }

    pub fn population(&self, level: usize) -> f64 {
        self.0[(level, level)].re
    }

    pub fn trion_population(&self) -> f64 {
        TRIONS.iter().map(|&t| self.population(t)).sum()
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    pub fn purity(&self) -> f64 {
        (self.0 * self.0).trace().re
    }

    pub fn validate(&self) -> Diagnostics {
        validate_state(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Diagnostics {
    pub hermiticity_defect: f64,
    pub trace_defect: f64,
    pub min_eigenvalue: f64,
}

pub fn hermiticity_defect(m: &Mat4) -> f64 {
    let mut worst = 0.0f64;
    for a in 0..4 {
        for b in 0..4 {
            worst = worst.max((m[(a, b)] - m[(b, a)].conj()).norm());
        }
    }
    worst
}

/// Smallest eigenvalue of the Hermitian part.
pub fn min_eigenvalue(m: &Mat4) -> f64 {
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    h.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
}

pub fn validate_state(rho: &DensityMatrix) -> Diagnostics {
    Diagnostics {
        hermiticity_defect: hermiticity_defect(&rho.0),
        trace_defect: (rho.trace() - C64::new(1.0, 0.0)).norm(),
        min_eigenvalue: min_eigenvalue(&rho.0),
    }
}

/// Incoherent rates of the four-level model, all in 1/ns.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateSet {
    /// Trion decay rate Γ.
    pub gamma_decay: f64,
    /// branching[i][j]: fraction of decays from trion i landing in ground j.
    pub branching: [[f64; 2]; 2],
    /// Ground-state spin-flip rate κ, applied in both directions.
    pub kappa_spinflip: f64,
    /// Incoherent excitation from the upper ground state to each trion.
    pub gamma_repump: f64,
    pub gamma_spin_dephasing: f64,
}

impl Default for RateSet {
    fn default() -> Self {
        Self {
            gamma_decay: DEFAULT_GAMMA_DECAY,
            branching: [[0.5, 0.5], [0.5, 0.5]],
            kappa_spinflip: 0.2e-3,
            gamma_repump: 0.0,
            gamma_spin_dephasing: 0.0,
        }
    }
}

/// 2π × 0.2 GHz, the lifetime-limited linewidth.
pub const DEFAULT_GAMMA_DECAY: f64 = std::f64::consts::TAU * 0.2;

impl RateSet {
    pub fn zero() -> Self {
        Self {
            gamma_decay: 0.0,
            branching: [[0.5, 0.5], [0.5, 0.5]],
            kappa_spinflip: 0.0,
            gamma_repump: 0.0,
            gamma_spin_dephasing: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("gamma_decay", self.gamma_decay),
            ("kappa_spinflip", self.kappa_spinflip),
            ("gamma_repump", self.gamma_repump),
            ("gamma_spin_dephasing", self.gamma_spin_dephasing),
        ];
        for (name, r) in rates {
            if !(r >= 0.0) || !r.is_finite() {
                return domain(format!("rate {name} must be finite and non-negative, got {r}"));
            }
        }
        for row in &self.branching {
            if row.iter().any(|&b| !(b >= 0.0)) || (row[0] + row[1] - 1.0).abs() > 1e-12 {
                return domain(format!("branching rows must be non-negative and sum to 1, got {row:?}"));
            }
        }
        Ok(())
    }

    /// Every population transfer (from, to, rate).
    pub fn jumps(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(8);
        for (i, &t) in TRIONS.iter().enumerate() {
            for (j, &g) in [GROUND_LOW, GROUND_HIGH].iter().enumerate() {
                let r = self.gamma_decay * self.branching[i][j];
                if r > 0.0 {
                    out.push((t, g, r));
                }
            }
        }
        if self.kappa_spinflip > 0.0 {
            out.push((GROUND_LOW, GROUND_HIGH, self.kappa_spinflip));
            out.push((GROUND_HIGH, GROUND_LOW, self.kappa_spinflip));
        }
        if self.gamma_repump > 0.0 {
            for &t in &TRIONS {
                out.push((GROUND_HIGH, t, self.gamma_repump));
            }
        }
        out
    }

    fn max_rate(&self) -> f64 {
        self.gamma_decay + 2.0 * self.kappa_spinflip + 2.0 * self.gamma_repump + self.gamma_spin_dephasing
    }
}

/// Off-resonant excitation rate of a Lorentzian line of FWHM `line_fwhm`
/// driven with Rabi frequency `rabi` at detuning `detuning` (all rad/ns).
pub fn repump_rate(rabi: f64, line_fwhm: f64, detuning: f64) -> f64 {
    let hw = line_fwhm / 2.0;
    rabi * rabi / 2.0 * hw / (hw * hw + detuning * detuning)
}

/// Precomputed dissipator: population gains plus element-wise damping.
#[derive(Clone, Debug)]
struct Dissipator {
    gains: Vec<(usize, usize, f64)>,
    damping: Matrix4<f64>,
}

impl Dissipator {
    fn new(rates: &RateSet) -> Self {
        let gains = rates.jumps();
        let mut out = [0.0; 4];
        for &(from, _, r) in &gains {
            out[from] += r;
        }
        let amp = (rates.gamma_spin_dephasing / 2.0).sqrt();
        let l = [amp, -amp, 0.0, 0.0];
        let damping = Matrix4::from_fn(|a, b| {
            -(out[a] + out[b]) / 2.0 + l[a] * l[b] - (l[a] * l[a] + l[b] * l[b]) / 2.0
        });
        Self { gains, damping }
    }

    fn apply(&self, rho: &Mat4, acc: &mut Mat4) {
        for a in 0..4 {
            for b in 0..4 {
                acc[(a, b)] += rho[(a, b)] * self.damping[(a, b)];
            }
        }
        for &(from, to, r) in &self.gains {
            acc[(to, to)] += rho[(from, from)] * r;
        }
    }
}

/// −i[H, ρ] + Σ_k D[L_k]ρ for the collapse operators of `rates`.
pub fn liouvillian_apply(h: &Mat4, rates: &RateSet, rho: &DensityMatrix) -> Result<Mat4> {
    let defect = hermiticity_defect(h);
    if defect > 1e-10 {
        return Err(Error::NonHermitian { defect });
    }
    rates.validate()?;
    let mut out = commutator_term(h, &rho.0);
    Dissipator::new(rates).apply(&rho.0, &mut out);
    Ok(out)
}

fn commutator_term(h: &Mat4, rho: &Mat4) -> Mat4 {
    (h * rho - rho * h) * (-I)
}

/// Time dependence of a Rabi frequency.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Envelope {
    Constant(f64),
    /// Field-amplitude Gaussian Ω₀·exp(−4 ln2 (t − center)²/fwhm²).
    Gaussian { peak: f64, fwhm: f64, center: f64 },
}

impl Envelope {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            Envelope::Constant(w) => w,
            Envelope::Gaussian { peak, fwhm, center } => {
                let x = (t - center) / fwhm;
                peak * (-4.0 * std::f64::consts::LN_2 * x * x).exp()
            }
        }
    }

    pub fn peak(&self) -> f64 {
        match *self {
            Envelope::Constant(w) => w.abs(),
            Envelope::Gaussian { peak, .. } => peak.abs(),
        }
    }
}

/// A laser acting on one transition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriveTerm {
    pub transition: usize,
    /// Dipole overlap d†E; 1 for a drive specified directly by its Rabi frequency.
    pub coupling: C64,
    pub rabi: Envelope,
    /// Laser frequency minus transition frequency (rad/ns).
    pub detuning: f64,
}

impl DriveTerm {
    pub fn resonant(transition: usize, rabi: f64) -> Self {
        Self { transition, coupling: C64::new(1.0, 0.0), rabi: Envelope::Constant(rabi), detuning: 0.0 }
    }
}

#[derive(Clone, Copy, Debug)]
struct Coupling {
    ground: usize,
    trion: usize,
    amp: C64,
    rabi: Envelope,
    /// Phase rate in the integration frame.
    phase_rate: f64,
}

/// Hamiltonian in the integration frame.
#[derive(Clone, Debug)]
struct FrameHamiltonian {
    diag: [f64; 4],
    couplings: Vec<Coupling>,
    reference: f64,
}

impl FrameHamiltonian {
    fn new(diagram: &LevelDiagram, drives: &[DriveTerm]) -> Result<Self> {
        let mut laser = Vec::with_capacity(drives.len());
        for d in drives {
            let Some(tr) = diagram.transitions.get(d.transition) else {
                return domain(format!("drive references transition {} of {}", d.transition, diagram.transitions.len()));
            };
            laser.push((tr, tr.frequency_offset + d.detuning));
        }
        let reference = laser.first().map(|l| l.1).unwrap_or(0.0);
        let mut diag = diagram.energies;
        for &t in &TRIONS {
            diag[t] -= reference;
        }
        let lo = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = diag.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mid = (lo + hi) / 2.0;
        for e in diag.iter_mut() {
            *e -= mid;
        }
        let couplings = drives
            .iter()
            .zip(&laser)
            .map(|(d, (tr, nu))| Coupling {
                ground: tr.from_level,
                trion: tr.to_level,
                amp: d.coupling,
                rabi: d.rabi,
                phase_rate: nu - reference,
            })
            .collect();
        Ok(Self { diag, couplings, reference })
    }

    fn at(&self, t: f64) -> Mat4 {
        let mut h = Mat4::zeros();
        for k in 0..4 {
            h[(k, k)] = C64::new(self.diag[k], 0.0);
        }
        for c in &self.couplings {
            let w = c.rabi.at(t) / 2.0;
            if w == 0.0 {
                continue;
            }
            let v = c.amp * C64::from_polar(w, -c.phase_rate * t);
            h[(c.trion, c.ground)] += v;
            h[(c.ground, c.trion)] += v.conj();
        }
        h
    }

    fn scale(&self) -> f64 {
        let e = self.diag.iter().map(|x| x.abs()).fold(0.0, f64::max);
        let drive: f64 = self.couplings.iter().map(|c| c.rabi.peak() / 2.0 * c.amp.norm()).sum();
        let phase = self.couplings.iter().map(|c| c.phase_rate.abs()).fold(0.0, f64::max);
        e + drive + phase
    }

    /// Zero-reference frame → integration frame at time t.
    fn enter(&self, rho: &mut Mat4, t: f64) {
        self.shift(rho, t, 1.0);
    }

    fn leave(&self, rho: &mut Mat4, t: f64) {
        self.shift(rho, t, -1.0);
    }

    fn shift(&self, rho: &mut Mat4, t: f64, sign: f64) {
        if self.reference == 0.0 {
            return;
        }
        let ph = C64::from_polar(1.0, sign * self.reference * t);
        for &tr in &TRIONS {
            for g in [GROUND_LOW, GROUND_HIGH] {
                rho[(tr, g)] *= ph;
                rho[(g, tr)] *= ph.conj();
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvolveOptions {
    /// Skip the dt·max(|H|, rates) < 0.1 check.
    pub allow_large_step: bool,
    /// Keep every n-th step in the trajectory.
    pub record_stride: usize,
    /// Eigenvalue check cadence in steps.
    pub positivity_check_stride: usize,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self { allow_large_step: false, record_stride: 1, positivity_check_stride: 50 }
    }
}

pub const STEP_LIMIT: f64 = 0.1;
pub const POSITIVITY_LIMIT: f64 = -1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    /// Γ·(ρ_AA + ρ_BB) in 1/ns.
    pub emission_rate: Vec<f64>,
    pub renormalizations: usize,
    pub max_trace_drift: f64,
    pub max_hermiticity_defect: f64,
    pub min_eigenvalue: f64,
}

impl Trajectory {
    pub fn final_state(&self) -> &DensityMatrix {
        self.states.last().expect("trajectory holds at least the initial state")
    }

    /// Trapezoid integral of the emission rate over [t_start, t_end].
    pub fn integrated_emission(&self, t_start: f64, t_end: f64) -> f64 {
        trapezoid_window(&self.times, &self.emission_rate, t_start, t_end)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["time_ns".to_string()];
        for a in 0..4 {
            for b in 0..4 {
                header.push(format!("rho_{a}{b}_re"));
                header.push(format!("rho_{a}{b}_im"));
            }
        }
        header.push("emission_rate".into());
        out.write_record(&header)?;
        for ((t, s), e) in self.times.iter().zip(&self.states).zip(&self.emission_rate) {
            let mut row = Vec::with_capacity(34);
            row.push(t.to_string());
            for a in 0..4 {
                for b in 0..4 {
                    row.push(s.0[(a, b)].re.to_string());
                    row.push(s.0[(a, b)].im.to_string());
                }
            }
            row.push(e.to_string());
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

pub(crate) fn trapezoid_window(x: &[f64], y: &[f64], lo: f64, hi: f64) -> f64 {
    let mut acc = 0.0;
    for k in 1..x.len() {
        let (a, b) = (x[k - 1].max(lo), x[k].min(hi));
        if b <= a {
            continue;
        }
        let span = x[k] - x[k - 1];
        let ya = y[k - 1] + (y[k] - y[k - 1]) * (a - x[k - 1]) / span;
        let yb = y[k - 1] + (y[k] - y[k - 1]) * (b - x[k - 1]) / span;
        acc += 0.5 * (ya + yb) * (b - a);
    }
    acc
}

fn step_count(span: (f64, f64), dt: f64) -> Result<usize> {
    let (t0, t1) = span;
    let len = t1 - t0;
    if !(dt > 0.0) || !dt.is_finite() {
        return domain(format!("dt must be positive, got {dt}"));
    }
    if !(len > 0.0) {
        return domain(format!("span must have t1 > t0, got ({t0}, {t1})"));
    }
    if dt > len * (1.0 + 1e-12) {
        return domain(format!("dt = {dt} exceeds span length {len}"));
    }
    Ok(((len / dt) - 1e-9).ceil().max(1.0) as usize)
}

struct Integrator {
    ham: FrameHamiltonian,
    diss: Dissipator,
}

impl Integrator {
    fn new(diagram: &LevelDiagram, drives: &[DriveTerm], rates: &RateSet) -> Result<Self> {
        rates.validate()?;
        for d in drives {
            if d.rabi.peak() < 0.0 || !d.rabi.peak().is_finite() {
                return domain("rabi envelope must be finite");
            }
        }
        Ok(Self { ham: FrameHamiltonian::new(diagram, drives)?, diss: Dissipator::new(rates) })
    }

    fn check_step(&self, dt: f64, rates: &RateSet, allow: bool) -> Result<()> {
        let scale = self.ham.scale().max(rates.max_rate());
        let product = dt * scale;
        if product >= STEP_LIMIT && !allow {
            return Err(Error::StepSize { dt, scale, product, limit: STEP_LIMIT });
        }
        Ok(())
    }

    fn rhs(&self, h: &Mat4, rho: &Mat4) -> Mat4 {
        let mut out = commutator_term(h, rho);
        self.diss.apply(rho, &mut out);
        out
    }

    /// One RK4 step applied to every matrix in `rhos`.
    fn step(&self, rhos: &mut [Mat4], t: f64, dt: f64) {
        let h0 = self.ham.at(t);
        let h1 = self.ham.at(t + dt / 2.0);
        let h2 = self.ham.at(t + dt);
        let half = C64::new(dt / 2.0, 0.0);
        let full = C64::new(dt, 0.0);
        let sixth = C64::new(dt / 6.0, 0.0);
        let two = C64::new(2.0, 0.0);
        for rho in rhos.iter_mut() {
            let k1 = self.rhs(&h0, rho);
            let k2 = self.rhs(&h1, &(*rho + k1 * half));
            let k3 = self.rhs(&h1, &(*rho + k2 * half));
            let k4 = self.rhs(&h2, &(*rho + k3 * full));
            *rho += (k1 + k2 * two + k3 * two + k4) * sixth;
        }
    }
}

/// RK4 evolution of a density matrix with default options.
pub fn evolve(
    rho0: &DensityMatrix,
    diagram: &LevelDiagram,
    drives: &[DriveTerm],
    rates: &RateSet,
    span: (f64, f64),
    dt: f64,
) -> Result<Trajectory> {
    evolve_with(rho0, diagram, drives, rates, span, dt, EvolveOptions::default())
}

pub fn evolve_with(
    rho0: &DensityMatrix,
    diagram: &LevelDiagram,
    drives: &[DriveTerm],
    rates: &RateSet,
    span: (f64, f64),
    dt: f64,
    opts: EvolveOptions,
) -> Result<Trajectory> {
    let n = step_count(span, dt)?;
    let dt = (span.1 - span.0) / n as f64;
    let integ = Integrator::new(diagram, drives, rates)?;
    integ.check_step(dt, rates, opts.allow_large_step)?;
    let stride = opts.record_stride.max(1);
    let check = opts.positivity_check_stride.max(1);
    let gamma = rates.gamma_decay;

    let mut traj = Trajectory {
        times: Vec::with_capacity(n / stride + 2),
        states: Vec::with_capacity(n / stride + 2),
        emission_rate: Vec::with_capacity(n / stride + 2),
        renormalizations: 0,
        max_trace_drift: 0.0,
        max_hermiticity_defect: 0.0,
        min_eigenvalue: f64::INFINITY,
    };
    let record = |traj: &mut Trajectory, t: f64, rho: &Mat4| {
        let mut out = *rho;
        integ.ham.leave(&mut out, t);
        let s = DensityMatrix(out);
        traj.times.push(t);
        traj.emission_rate.push(gamma * s.trion_population());
        traj.states.push(s);
    };

    let mut rho = [rho0.0];
    integ.ham.enter(&mut rho[0], span.0);
    let initial = validate_state(rho0);
    traj.min_eigenvalue = initial.min_eigenvalue;
    traj.max_hermiticity_defect = initial.hermiticity_defect;
    record(&mut traj, span.0, &rho[0]);

    for k in 0..n {
        let t = span.0 + k as f64 * dt;
        let before = rho[0].trace();
        integ.step(&mut rho, t, dt);
        let after = rho[0].trace();
        let drift = (after - C64::new(1.0, 0.0)).norm();
        traj.max_trace_drift = traj.max_trace_drift.max(drift);
        if (after - before).norm() > 1e-12 {
            rho[0] /= after;
            traj.renormalizations += 1;
        }
        let t_next = span.0 + (k + 1) as f64 * dt;
        if (k + 1) % check == 0 || k + 1 == n {
            let emin = min_eigenvalue(&rho[0]);
            traj.min_eigenvalue = traj.min_eigenvalue.min(emin);
            traj.max_hermiticity_defect = traj.max_hermiticity_defect.max(hermiticity_defect(&rho[0]));
            if emin < POSITIVITY_LIMIT {
                return Err(Error::Positivity { time: t_next, min_eigenvalue: emin });
            }
        }
        if (k + 1) % stride == 0 || k + 1 == n {
            record(&mut traj, t_next, &rho[0]);
        }
    }
    Ok(traj)
}


pub fn vectorize(m: &Mat4) -> Vec16 {
    Vec16::from_iterator(m.iter().cloned())
}

pub fn unvectorize(v: &Vec16) -> Mat4 {
    Mat4::from_iterator(v.iter().cloned())
}

pub fn apply_superop(s: &Superop, rho: &Mat4) -> Mat4 {
    unvectorize(&(s * vectorize(rho)))
}

fn unit(a: usize, b: usize) -> Mat4 {
    let mut m = Mat4::zeros();
    m[(a, b)] = C64::new(1.0, 0.0);
    m
}

/// Linear map produced by RK4 integration over `span`, together with the
/// linear functional giving ∫ Γ·(trion population) dt over `window`.
#[derive(Clone, Debug)]
pub struct Propagation {
    pub superop: Superop,
    /// emission[a + 4b] is the integrated emission of the unit E_ab.
    pub emission: Vec16,
}

impl Propagation {
    pub fn apply(&self, rho: &Mat4) -> Mat4 {
        apply_superop(&self.superop, rho)
    }

    pub fn integrated_emission(&self, rho: &Mat4) -> f64 {
        let v = vectorize(rho);
        self.emission.iter().zip(v.iter()).map(|(e, r)| e * r).sum::<C64>().re
    }
}

pub fn propagate(
    diagram: &LevelDiagram,
    drives: &[DriveTerm],
    rates: &RateSet,
    span: (f64, f64),
    dt: f64,
    window: (f64, f64),
    allow_large_step: bool,
) -> Result<Propagation> {
    let n = step_count(span, dt)?;
    let dt = (span.1 - span.0) / n as f64;
    let integ = Integrator::new(diagram, drives, rates)?;
    integ.check_step(dt, rates, allow_large_step)?;
    let mut rhos: Vec<Mat4> = (0..16).map(|k| unit(k % 4, k / 4)).collect();
    for r in rhos.iter_mut() {
        integ.ham.enter(r, span.0);
    }
    let trion_sum = |m: &Mat4| TRIONS.iter().map(|&t| m[(t, t)]).sum::<C64>() * rates.gamma_decay;
    let mut emission = Vec16::zeros();
    let mut prev: Vec<C64> = rhos.iter().map(trion_sum).collect();
    for k in 0..n {
        let t = span.0 + k as f64 * dt;
        integ.step(&mut rhos, t, dt);
        let t_next = t + dt;
        let (a, b) = (t.max(window.0), t_next.min(window.1));
        for (idx, r) in rhos.iter().enumerate() {
            let cur = trion_sum(r);
            if b > a {
                let ya = prev[idx] + (cur - prev[idx]) * ((a - t) / dt);
                let yb = prev[idx] + (cur - prev[idx]) * ((b - t) / dt);
                emission[idx] += (ya + yb) * (0.5 * (b - a));
            }
            prev[idx] = cur;
        }
    }
    let mut superop = Superop::zeros();
    for (k, r) in rhos.iter_mut().enumerate() {
        integ.ham.leave(r, span.1);
        superop.set_column(k, &vectorize(r));
    }
    Ok(Propagation { superop, emission })
}

/// Exact solution of the undriven master equation: populations follow a rate
/// equation, every coherence decays and rotates independently.
#[derive(Clone, Debug)]
pub struct FreeEvolution {
    energies: [f64; 4],
    rate_matrix: Matrix4<f64>,
    damping: Matrix4<f64>,
}

impl FreeEvolution {
    pub fn new(diagram: &LevelDiagram, rates: &RateSet) -> Result<Self> {
        rates.validate()?;
        let diss = Dissipator::new(rates);
        let mut rate_matrix = Matrix4::zeros();
        for &(from, to, r) in &diss.gains {
            rate_matrix[(to, from)] += r;
            rate_matrix[(from, from)] -= r;
        }
        Ok(Self { energies: diagram.energies, rate_matrix, damping: diss.damping })
    }

    pub fn step(&self, t: f64) -> FreeStep {
        let pops = (self.rate_matrix * t).exp();
        let coh = Matrix4::from_fn(|a, b| {
            C64::from_polar((self.damping[(a, b)] * t).exp(), -(self.energies[a] - self.energies[b]) * t)
        });
        FreeStep { pops, coh, duration: t }
    }

    pub fn apply(&self, rho: &Mat4, t: f64) -> Mat4 {
        self.step(t).apply(rho)
    }
}

/// Free propagation over a fixed duration, cached.
#[derive(Clone, Debug)]
pub struct FreeStep {
    pops: Matrix4<f64>,
    coh: Mat4,
    duration: f64,
}

impl FreeStep {
    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn apply(&self, rho: &Mat4) -> Mat4 {
        let mut out = Mat4::zeros();
        for a in 0..4 {
            for b in 0..4 {
                if a != b {
                    out[(a, b)] = rho[(a, b)] * self.coh[(a, b)];
                }
            }
        }
        for a in 0..4 {
            let mut p = ZERO;
            for b in 0..4 {
                p += rho[(b, b)] * self.pops[(a, b)];
            }
            out[(a, a)] = p;
        }
        out
    }
}

/// Extra phase from shifting the ground splitting by `delta` for time `t`
/// (lower ground moves by −δ/2, upper by +δ/2).
pub fn ground_detuning_phase(rho: &Mat4, delta: f64, t: f64) -> Mat4 {
    if delta == 0.0 || t == 0.0 {
        return *rho;
    }
    let shift = [-delta / 2.0, delta / 2.0, 0.0, 0.0];
    Mat4::from_fn(|a, b| rho[(a, b)] * C64::from_polar(1.0, -(shift[a] - shift[b]) * t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::{build_level_diagram, GFactors, Geometry, TRION_A};
    use approx::assert_abs_diff_eq;

    fn diagram(b: f64) -> LevelDiagram {
        build_level_diagram(Geometry::Voigt, b, GFactors::default(), 0.0).unwrap()
    }

    #[test]
    fn zero_generator_gives_zero() {
        let rho = DensityMatrix::unpolarized_ground();
        let out = liouvillian_apply(&Mat4::zeros(), &RateSet::zero(), &rho).unwrap();
        assert!(out.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn pure_decay_rate() {
        let rates = RateSet { gamma_decay: 1.3, kappa_spinflip: 0.0, ..RateSet::default() };
        let out = liouvillian_apply(&Mat4::zeros(), &rates, &DensityMatrix::pure(TRION_A)).unwrap();
        assert_abs_diff_eq!(out[(TRION_A, TRION_A)].re, -1.3, epsilon = 1e-15);
        assert_abs_diff_eq!(out.trace().norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn rejects_non_hermitian_hamiltonian() {
        let mut h = Mat4::zeros();
        h[(0, 1)] = C64::new(1.0, 0.0);
        assert!(matches!(
            liouvillian_apply(&h, &RateSet::zero(), &DensityMatrix::pure(0)),
            Err(Error::NonHermitian { .. })
        ));
    }

    #[test]
    fn validate_examples() {
        let mixed = DensityMatrix::from_populations([0.25; 4]);
        let d = validate_state(&mixed);
        assert_eq!(d.hermiticity_defect, 0.0);
        assert_abs_diff_eq!(d.trace_defect, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.min_eigenvalue, 0.25, epsilon = 1e-12);

        let s = std::f64::consts::FRAC_1_SQRT_2;
        let e_plus = DensityMatrix::from_amplitudes([C64::new(s, 0.0), C64::new(s, 0.0), ZERO, ZERO]);
        let d = validate_state(&e_plus);
        assert_eq!(d.hermiticity_defect, 0.0);
        assert_abs_diff_eq!(d.trace_defect, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.min_eigenvalue, 0.0, epsilon = 1e-12);

        let off = DensityMatrix::from_populations([0.501, 0.5, 0.0, 0.0]);
        assert_abs_diff_eq!(validate_state(&off).trace_defect, 0.001, epsilon = 1e-12);
    }

    #[test]
    fn exponential_decay() {
        let d = diagram(0.0);
        let rates = RateSet { gamma_decay: 1.0, kappa_spinflip: 0.0, ..RateSet::default() };
        let traj = evolve(&DensityMatrix::pure(TRION_A), &d, &[], &rates, (0.0, 5.0), 1e-3).unwrap();
        for (t, s) in traj.times.iter().zip(&traj.states) {
            assert_abs_diff_eq!(s.population(TRION_A), (-t).exp(), epsilon = 1e-6);
        }
    }

    #[test]
    fn step_size_guard() {
        let d = diagram(2.0);
        let drives = [DriveTerm::resonant(0, 50.0)];
        let err = evolve(&DensityMatrix::pure(0), &d, &drives, &RateSet::default(), (0.0, 1.0), 0.01).unwrap_err();
        assert!(matches!(err, Error::StepSize { .. }));
        let opts = EvolveOptions { allow_large_step: true, ..Default::default() };
        assert!(evolve_with(&DensityMatrix::pure(0), &d, &drives, &RateSet::default(), (0.0, 1.0), 0.01, opts).is_ok());
    }

    #[test]
    fn span_and_dt_preconditions() {
        let d = diagram(0.0);
        let r = RateSet::default();
        assert!(evolve(&DensityMatrix::pure(0), &d, &[], &r, (0.0, 1.0), 0.0).is_err());
        assert!(evolve(&DensityMatrix::pure(0), &d, &[], &r, (0.0, 1.0), 2.0).is_err());
        assert!(evolve(&DensityMatrix::pure(0), &d, &[], &r, (1.0, 1.0), 0.1).is_err());
    }

    #[test]
    fn free_evolution_matches_rk4() {
        let d = diagram(2.0);
        let rates = RateSet { kappa_spinflip: 0.3, gamma_spin_dephasing: 0.2, ..RateSet::default() };
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut rho = DensityMatrix::from_amplitudes([C64::new(s * 0.8, 0.0), C64::new(0.0, s * 0.8), C64::new(0.6, 0.0), ZERO]).0;
        rho /= rho.trace();
        let exact = FreeEvolution::new(&d, &rates).unwrap().apply(&rho, 1.5);
        let traj = evolve(&DensityMatrix(rho), &d, &[], &rates, (0.0, 1.5), 1e-4).unwrap();
        let diff = (exact - traj.final_state().0).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(diff < 1e-9, "diff {diff}");
    }

    #[test]
    fn propagator_matches_direct_evolution() {
        let d = diagram(1.0);
        let drives = [DriveTerm::resonant(0, 6.0), DriveTerm::resonant(1, 6.0)];
        let rates = RateSet::default();
        let rho0 = DensityMatrix::unpolarized_ground();
        let p = propagate(&d, &drives, &rates, (0.0, 2.0), 5e-4, (0.0, 2.0), false).unwrap();
        let traj = evolve(&rho0, &d, &drives, &rates, (0.0, 2.0), 5e-4).unwrap();
        let diff = (p.apply(&rho0.0) - traj.final_state().0).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(diff < 1e-12, "diff {diff}");
        let e1 = p.integrated_emission(&rho0.0);
        let e2 = traj.integrated_emission(0.0, 2.0);
        assert_abs_diff_eq!(e1, e2, epsilon = 1e-12);
    }

    #[test]
    fn trapezoid_window_partial_bins() {
        let x = [0.0, 1.0, 2.0];
        let y = [0.0, 1.0, 2.0];
        assert_abs_diff_eq!(trapezoid_window(&x, &y, 0.5, 1.5), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(trapezoid_window(&x, &y, -1.0, 5.0), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn repump_lorentzian() {
        // on resonance the rate is Ω²/γ_line
        assert_abs_diff_eq!(repump_rate(2.0, 4.0, 0.0), 1.0, epsilon = 1e-15);
        assert!(repump_rate(2.0, 4.0, 10.0) < repump_rate(2.0, 4.0, 1.0));
    }
}
