//! Pulse sequences and the AC-Stark spin rotation.

use std::f64::consts::{LN_2, PI, TAU};
use std::fmt;

use nalgebra::Matrix2;
use num_complex::Complex64 as C64;

use crate::error::{domain, Error, Result};
use crate::lindblad::{DriveTerm, Envelope};
use crate::physics::{LevelDiagram, TRIONS};
use crate::polarization::JonesVector;

/// Red detuning of the rotation laser, −2π × 0.8 THz in rad/ns.
pub const DEFAULT_ROTATION_DETUNING: f64 = -TAU * 800.0;
/// Field-envelope FWHM of the rotation pulses (ns).
pub const DEFAULT_ROTATION_FWHM: f64 = 0.006;
/// A rotation pulse occupies this many FWHM, centered on the peak.
pub const WINDOW_FWHMS: f64 = 4.0;
pub const DEFAULT_INIT_DURATION: f64 = 5.0;
pub const DEFAULT_READOUT_DURATION: f64 = 5.0;
/// Resonant Rabi frequency of the pumping/readout laser (rad/ns).
pub const DEFAULT_RESONANT_RABI: f64 = 6.6837;
/// Rotation angle per √μW: π/2 at 25 μW.
pub const DEFAULT_POWER_COEFFICIENT: f64 = PI / 2.0 / 5.0;
/// Delay between the end of the init pulse and the first rotation center.
pub const DEFAULT_LEAD_IN: f64 = 5.0;
/// Delay between the second rotation window and the readout pulse.
pub const DEFAULT_LEAD_OUT: f64 = 2.0;

pub const DEFAULT_RESONANT_DT: f64 = 1e-3;
pub const DEFAULT_ROTATION_DT: f64 = 1e-5;

/// ∫ exp(−8 ln2 t²/t_p²) dt / t_p.
pub fn gaussian_intensity_area() -> f64 {
    (PI / (8.0 * LN_2)).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotationPulse {
    /// Peak Rabi frequency Ω₀ (rad/ns).
    pub peak_rabi: f64,
    /// Field-envelope FWHM (ns).
    pub fwhm: f64,
    /// Laser minus zero-field trion frequency (rad/ns).
    pub detuning: f64,
    pub drive_dipole: JonesVector,
}

impl RotationPulse {
    /// Pulse at the default detuning and width reaching `angle`.
    pub fn for_angle(angle: f64) -> Result<Self> {
        Ok(Self {
            peak_rabi: peak_rabi_for_angle(angle, DEFAULT_ROTATION_FWHM, DEFAULT_ROTATION_DETUNING)?,
            fwhm: DEFAULT_ROTATION_FWHM,
            detuning: DEFAULT_ROTATION_DETUNING,
            drive_dipole: JonesVector::sigma_plus(),
        })
    }

    pub fn window(&self) -> f64 {
        WINDOW_FWHMS * self.fwhm
    }

    pub fn envelope(&self, center: f64) -> Envelope {
        Envelope::Gaussian { peak: self.peak_rabi, fwhm: self.fwhm, center }
    }

    fn validate(&self) -> Result<()> {
        if !(self.fwhm > 0.0) || !self.fwhm.is_finite() {
            return domain(format!("rotation pulse width must be positive, got {} ns", self.fwhm));
        }
        if !(self.peak_rabi >= 0.0) || !self.peak_rabi.is_finite() {
            return domain(format!("rotation peak Rabi must be non-negative, got {}", self.peak_rabi));
        }
        if self.detuning == 0.0 || !self.detuning.is_finite() {
            return domain("rotation detuning must be nonzero (no dispersive regime at resonance)");
        }
        Ok(())
    }
}

/// θ = ∫ Ω(t)²/(4|Δ|) dt for the Gaussian field envelope.
pub fn rotation_angle(pulse: &RotationPulse) -> Result<f64> {
    pulse.validate()?;
    Ok(pulse.peak_rabi.powi(2) * pulse.fwhm * gaussian_intensity_area() / (4.0 * pulse.detuning.abs()))
}

/// Inverse of [`rotation_angle`] for Ω₀.
pub fn peak_rabi_for_angle(angle: f64, fwhm: f64, detuning: f64) -> Result<f64> {
    if !(angle >= 0.0) {
        return domain(format!("rotation angle must be non-negative, got {angle}"));
    }
    if !(fwhm > 0.0) || detuning == 0.0 {
        return domain("pulse width must be positive and detuning nonzero");
    }
    Ok((4.0 * detuning.abs() * angle / (fwhm * gaussian_intensity_area())).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EffectiveRotation {
    pub angle: f64,
    /// Unit axis on the Bloch sphere of the two ground levels (level 0 = north pole).
    pub axis: [f64; 3],
    pub unitary: Matrix2<C64>,
}

impl EffectiveRotation {
    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        let n = (axis[0].powi(2) + axis[1].powi(2) + axis[2].powi(2)).sqrt();
        let [x, y, z] = axis.map(|a| a / n);
        let (s, c) = (angle / 2.0).sin_cos();
        let unitary = Matrix2::new(
            C64::new(c, -s * z),
            C64::new(-s * y, -s * x),
            C64::new(s * y, -s * x),
            C64::new(c, s * z),
        );
        Self { angle, axis: [x, y, z], unitary }
    }

    pub fn unitarity_defect(&self) -> f64 {
        (self.unitary.adjoint() * self.unitary - Matrix2::identity()).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Which circular transition the pulse drives: +1 for σ+, −1 for σ−.
pub fn helicity(dipole: &JonesVector) -> Result<i8> {
    let d = dipole.normalized();
    let plus = JonesVector::sigma_plus().inner(&d).norm_sqr();
    let minus = JonesVector::sigma_minus().inner(&d).norm_sqr();
    if plus > 0.99 {
        Ok(1)
    } else if minus > 0.99 {
        Ok(-1)
    } else {
        Err(Error::ImpurePolarization { plus, minus })
    }
}

/// Ground-subspace light-shift operator M[g][g'] = Σ_t conj(c_tg)·c_tg' of a
/// drive with polarization `dipole`, in units of Ω²/(4Δ).
pub fn light_shift_operator(dipole: &JonesVector, diagram: &LevelDiagram) -> Matrix2<C64> {
    let field = dipole.normalized();
    let mut m = Matrix2::<C64>::zeros();
    for t in TRIONS {
        let mut c = [C64::new(0.0, 0.0); 2];
        for tr in diagram.transitions.iter().filter(|tr| tr.to_level == t) {
            c[tr.from_level] = tr.coupling(&field);
        }
        for a in 0..2 {
            for b in 0..2 {
                m[(a, b)] += c[a].conj() * c[b];
            }
        }
    }
    m
}

/// Eigenvalue spread of the light-shift operator: realized angle over
/// [`rotation_angle`]. 1 for a pure circular transition, 1 + ε² with the weak
/// diagonals.
pub fn rotation_scale(dipole: &JonesVector, diagram: &LevelDiagram) -> f64 {
    let m = light_shift_operator(dipole, diagram);
    let dz = (m[(0, 0)].re - m[(1, 1)].re) / 2.0;
    2.0 * (dz * dz + m[(0, 1)].norm_sqr()).sqrt()
}

/// The AC-Stark shift of the driven spin projection as a ground-subspace
/// rotation, built from the diagram's own couplings. The axis is expressed on
/// the Bloch sphere of the diagram's ground levels.
pub fn effective_rotation(pulse: &RotationPulse, diagram: &LevelDiagram) -> Result<EffectiveRotation> {
    let nominal = rotation_angle(pulse)?;
    helicity(&pulse.drive_dipole)?;
    let m = light_shift_operator(&pulse.drive_dipole, diagram);
    let half = rotation_scale(&pulse.drive_dipole, diagram) / 2.0;
    if half == 0.0 {
        return Ok(EffectiveRotation::from_axis_angle([0.0, 0.0, 1.0], 0.0));
    }
    // U = exp(−i·sign(Δ)·θ·M) up to a global phase
    let sign = pulse.detuning.signum();
    let axis = [m[(0, 1)].re, -m[(0, 1)].im, (m[(0, 0)].re - m[(1, 1)].re) / 2.0].map(|v| sign * v / half);
    Ok(EffectiveRotation::from_axis_angle(axis, nominal * 2.0 * half))
}

/// Peak Rabi frequency realizing `angle` for this drive polarization on this
/// diagram.
pub fn peak_rabi_for_rotation(angle: f64, fwhm: f64, detuning: f64, dipole: &JonesVector, diagram: &LevelDiagram) -> Result<f64> {
    let scale = rotation_scale(dipole, diagram);
    if !(scale > 0.0) {
        return domain("drive polarization does not shift the ground levels");
    }
    peak_rabi_for_angle(angle / scale, fwhm, detuning)
}

/// Drive terms of the rotation laser on every transition, for full integration.
pub fn rotation_drives(pulse: &RotationPulse, diagram: &LevelDiagram, center: f64) -> Vec<DriveTerm> {
    let field = pulse.drive_dipole.normalized();
    diagram
        .transitions
        .iter()
        .enumerate()
        .filter(|(_, tr)| tr.relative_strength > 0.0)
        .map(|(k, tr)| DriveTerm {
            transition: k,
            coupling: tr.coupling(&field),
            rabi: pulse.envelope(center),
            detuning: pulse.detuning - tr.frequency_offset,
        })
        .collect()
}

/// Mean power (μW) giving `target_angle` under θ = a·√P.
pub fn calibrate_power(target_angle: f64, coefficient: f64) -> Result<f64> {
    if !(coefficient > 0.0) {
        return domain(format!("power coefficient must be positive, got {coefficient}"));
    }
    if !(target_angle >= 0.0) {
        return domain(format!("target angle must be non-negative, got {target_angle}"));
    }
    Ok((target_angle / coefficient).powi(2))
}

pub fn angle_from_power(power: f64, coefficient: f64) -> Result<f64> {
    if !(coefficient > 0.0) || !(power >= 0.0) {
        return domain("power must be non-negative and coefficient positive");
    }
    Ok(coefficient * power.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub enum SegmentKind {
    ResonantDrive { duration: f64, rabi: f64, targets: Vec<usize> },
    Rotation(RotationPulse),
    Delay { duration: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PulseSegment {
    pub kind: SegmentKind,
    pub dt_hint: f64,
}

impl PulseSegment {
    pub fn resonant(duration: f64, rabi: f64, targets: Vec<usize>) -> Self {
        Self { kind: SegmentKind::ResonantDrive { duration, rabi, targets }, dt_hint: DEFAULT_RESONANT_DT }
    }

    pub fn rotation(pulse: RotationPulse) -> Self {
        Self { kind: SegmentKind::Rotation(pulse), dt_hint: DEFAULT_ROTATION_DT }
    }

    pub fn delay(duration: f64) -> Self {
        Self { kind: SegmentKind::Delay { duration }, dt_hint: DEFAULT_RESONANT_DT }
    }

    pub fn duration(&self) -> f64 {
        match &self.kind {
            SegmentKind::ResonantDrive { duration, .. } | SegmentKind::Delay { duration } => *duration,
            SegmentKind::Rotation(p) => p.window(),
        }
    }
}

impl fmt::Display for PulseSegment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            SegmentKind::ResonantDrive { duration, rabi, targets } => {
                let t: Vec<String> = targets.iter().map(|t| t.to_string()).collect();
                write!(f, "resonant duration={duration} rabi={rabi} targets={} dt={}", t.join(","), self.dt_hint)
            }
            SegmentKind::Rotation(p) => write!(
                f,
                "rotation peak_rabi={} fwhm={} detuning={} dipole={},{},{},{} dt={}",
                p.peak_rabi,
                p.fwhm,
                p.detuning,
                p.drive_dipole.ex.re,
                p.drive_dipole.ex.im,
                p.drive_dipole.ey.re,
                p.drive_dipole.ey.im,
                self.dt_hint
            ),
            SegmentKind::Delay { duration } => write!(f, "delay duration={duration} dt={}", self.dt_hint),
        }
    }
}

impl std::str::FromStr for PulseSegment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut words = s.split_whitespace();
        let kind = words.next().ok_or_else(|| Error::Domain("empty segment".into()))?;
        let mut fields = std::collections::BTreeMap::new();
        for w in words {
            let (k, v) = w.split_once('=').ok_or_else(|| Error::Domain(format!("expected key=value, got '{w}'")))?;
            fields.insert(k, v);
        }
        let num = |k: &str| -> Result<f64> {
            let v = fields.get(k).ok_or_else(|| Error::Domain(format!("segment '{kind}' is missing '{k}'")))?;
            v.parse::<f64>().map_err(|_| Error::Domain(format!("segment field '{k}' is not a number: '{v}'")))
        };
        let list = |k: &str| -> Result<Vec<f64>> {
            let v = fields.get(k).ok_or_else(|| Error::Domain(format!("segment '{kind}' is missing '{k}'")))?;
            v.split(',')
                .filter(|x| !x.is_empty())
                .map(|x| x.parse::<f64>().map_err(|_| Error::Domain(format!("bad number '{x}' in '{k}'"))))
                .collect()
        };
        let dt = num("dt")?;
        let seg_kind = match kind {
            "resonant" => SegmentKind::ResonantDrive {
                duration: num("duration")?,
                rabi: num("rabi")?,
                targets: list("targets")?.into_iter().map(|x| x as usize).collect(),
            },
            "rotation" => {
                let d = list("dipole")?;
                if d.len() != 4 {
                    return domain("rotation dipole needs four numbers: ex_re,ex_im,ey_re,ey_im");
                }
                SegmentKind::Rotation(RotationPulse {
                    peak_rabi: num("peak_rabi")?,
                    fwhm: num("fwhm")?,
                    detuning: num("detuning")?,
                    drive_dipole: JonesVector::new(C64::new(d[0], d[1]), C64::new(d[2], d[3])),
                })
            }
            "delay" => SegmentKind::Delay { duration: num("duration")? },
            other => return domain(format!("unknown segment kind '{other}'")),
        };
        Ok(PulseSegment { kind: seg_kind, dt_hint: dt })
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct PulseSequence {
    pub segments: Vec<PulseSegment>,
}

impl PulseSequence {
    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration()).sum()
    }

    /// Start time of every segment.
    pub fn start_times(&self) -> Vec<f64> {
        let mut t = 0.0;
        self.segments
            .iter()
            .map(|s| {
                let start = t;
                t += s.duration();
                start
            })
            .collect()
    }

    pub fn rotation_centers(&self) -> Vec<f64> {
        self.segments
            .iter()
            .zip(self.start_times())
            .filter(|(s, _)| matches!(s.kind, SegmentKind::Rotation(_)))
            .map(|(s, t)| t + s.duration() / 2.0)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.segments.iter().enumerate() {
            let d = s.duration();
            if !(d > 0.0) || !d.is_finite() {
                return domain(format!("segment {i} has non-positive duration {d}"));
            }
            if !(s.dt_hint > 0.0) {
                return domain(format!("segment {i} has non-positive dt {}", s.dt_hint));
            }
            if let SegmentKind::Rotation(p) = &s.kind {
                p.validate()?;
            }
        }
        Ok(())
    }

    /// One `segment.N = ...` line per segment.
    pub fn to_config_string(&self) -> String {
        let mut out = String::from("[sequence]\n");
        for (i, s) in self.segments.iter().enumerate() {
            out.push_str(&format!("segment.{i} = {s}\n"));
        }
        out
    }

    pub fn from_config_str(text: &str) -> Result<Self> {
        let mut segments = Vec::new();
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') || line.starts_with('[') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Domain(format!("expected key = value, got '{line}'")))?;
            let idx: usize = key
                .trim()
                .strip_prefix("segment.")
                .and_then(|n| n.parse().ok())
                .ok_or_else(|| Error::Domain(format!("unexpected key '{}'", key.trim())))?;
            if idx != segments.len() {
                return domain(format!("segment.{idx} out of order"));
            }
            segments.push(value.trim().parse()?);
        }
        Ok(Self { segments })
    }
}

/// Indices of the transitions out of the lower ground state in the ordering
/// produced by the level builder.
pub fn default_readout_targets() -> Vec<usize> {
    vec![0, 2]
}

/// Timing skeleton of the Ramsey experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct RamseyLayout {
    pub init_duration: f64,
    pub readout_duration: f64,
    pub resonant_rabi: f64,
    pub lead_in: f64,
    pub lead_out: f64,
    pub targets: Vec<usize>,
}

impl Default for RamseyLayout {
    fn default() -> Self {
        Self {
            init_duration: DEFAULT_INIT_DURATION,
            readout_duration: DEFAULT_READOUT_DURATION,
            resonant_rabi: DEFAULT_RESONANT_RABI,
            lead_in: DEFAULT_LEAD_IN,
            lead_out: DEFAULT_LEAD_OUT,
            targets: default_readout_targets(),
        }
    }
}

impl RamseyLayout {
    /// init → lead-in → rotation → τ → rotation → lead-out → readout. The first
    /// rotation is centered `lead_in` after the init pulse ends; τ is the gap
    /// between the two rotation windows.
    pub fn sequence(&self, tau: f64, rotation: RotationPulse) -> Result<PulseSequence> {
        if !(tau >= 0.0) {
            return domain(format!("delay tau must be non-negative, got {tau}"));
        }
        let w = rotation.window();
        if self.lead_in <= w / 2.0 {
            return domain("lead-in must exceed half the rotation window");
        }
        let mut segments = vec![
            PulseSegment::resonant(self.init_duration, self.resonant_rabi, self.targets.clone()),
            PulseSegment::delay(self.lead_in - w / 2.0),
            PulseSegment::rotation(rotation),
        ];
        if tau > 0.0 {
            segments.push(PulseSegment::delay(tau));
        }
        segments.push(PulseSegment::rotation(rotation));
        segments.push(PulseSegment::delay(self.lead_out));
        segments.push(PulseSegment::resonant(self.readout_duration, self.resonant_rabi, self.targets.clone()));
        let seq = PulseSequence { segments };
        seq.validate()?;
        Ok(seq)
    }
}

pub fn build_ramsey_sequence(
    tau: f64,
    init_duration: f64,
    readout_duration: f64,
    rotation: RotationPulse,
) -> Result<PulseSequence> {
    RamseyLayout { init_duration, readout_duration, ..RamseyLayout::default() }.sequence(tau, rotation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::{build_level_diagram, GFactors, Geometry};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn pulse(peak: f64) -> RotationPulse {
        RotationPulse {
            peak_rabi: peak,
            fwhm: DEFAULT_ROTATION_FWHM,
            detuning: DEFAULT_ROTATION_DETUNING,
            drive_dipole: JonesVector::sigma_plus(),
        }
    }

    fn voigt() -> LevelDiagram {
        build_level_diagram(Geometry::Voigt, 2.0, GFactors::default(), 0.0).unwrap()
    }

    #[test]
    fn angle_scaling() {
        assert_eq!(rotation_angle(&pulse(0.0)).unwrap(), 0.0);
        let a = rotation_angle(&pulse(1000.0)).unwrap();
        assert_relative_eq!(rotation_angle(&pulse(2000.0)).unwrap(), 4.0 * a, max_relative = 1e-14);
        let mut far = pulse(1000.0);
        far.detuning *= 2.0;
        assert_relative_eq!(rotation_angle(&far).unwrap(), a / 2.0, max_relative = 1e-14);
        let mut zero = pulse(1.0);
        zero.detuning = 0.0;
        assert!(rotation_angle(&zero).is_err());
    }

    #[test]
    fn angle_matches_quadrature() {
        let p = pulse(2645.0);
        let n = 20000;
        let (lo, hi) = (-5.0 * p.fwhm, 5.0 * p.fwhm);
        let h = (hi - lo) / n as f64;
        let env = p.envelope(0.0);
        let mut acc = 0.0;
        for k in 0..=n {
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            acc += w * env.at(lo + k as f64 * h).powi(2);
        }
        let quad = acc * h / (4.0 * p.detuning.abs());
        assert_relative_eq!(rotation_angle(&p).unwrap(), quad, max_relative = 1e-9);
    }

    #[test]
    fn peak_for_half_pi_at_defaults() {
        let omega = peak_rabi_for_angle(PI / 2.0, DEFAULT_ROTATION_FWHM, DEFAULT_ROTATION_DETUNING).unwrap();
        assert_abs_diff_eq!(omega, 2644.6, epsilon = 0.5);
        assert_relative_eq!(rotation_angle(&pulse(omega)).unwrap(), PI / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn half_pi_splits_populations() {
        let r = effective_rotation(&RotationPulse::for_angle(PI / 2.0).unwrap(), &voigt()).unwrap();
        let out = r.unitary.column(0);
        assert_abs_diff_eq!(out[0].norm_sqr(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(out[1].norm_sqr(), 0.5, epsilon = 1e-12);
        let two = r.unitary * r.unitary;
        assert_abs_diff_eq!(two[(1, 0)].norm_sqr(), 1.0, epsilon = 1e-12);
        assert!(r.unitarity_defect() < 1e-12);
    }

    #[test]
    fn voigt_axis_is_x_and_flips_with_helicity() {
        let p = RotationPulse::for_angle(1.0).unwrap();
        let r = effective_rotation(&p, &voigt()).unwrap();
        assert_abs_diff_eq!(r.axis[0].abs(), 1.0, epsilon = 1e-12);
        let mut q = p;
        q.drive_dipole = JonesVector::sigma_minus();
        let s = effective_rotation(&q, &voigt()).unwrap();
        assert_abs_diff_eq!(s.axis[0], -r.axis[0], epsilon = 1e-12);
    }

    #[test]
    fn impure_drive_rejected() {
        let mut p = RotationPulse::for_angle(1.0).unwrap();
        p.drive_dipole = JonesVector::horizontal();
        match effective_rotation(&p, &voigt()) {
            Err(Error::ImpurePolarization { plus, minus }) => {
                assert_abs_diff_eq!(plus, 0.5, epsilon = 1e-12);
                assert_abs_diff_eq!(minus, 0.5, epsilon = 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn axis_angle_matches_exponential() {
        let r = EffectiveRotation::from_axis_angle([0.3, -0.5, 0.8], 1.1);
        let [x, y, z] = r.axis;
        let gen = Matrix2::new(C64::new(z, 0.0), C64::new(x, -y), C64::new(x, y), C64::new(-z, 0.0))
            * C64::new(0.0, -r.angle / 2.0);
        let exp = gen.exp();
        assert!((exp - r.unitary).iter().all(|d| d.norm() < 1e-12));
    }

    #[test]
    fn weak_diagonals_enlarge_rotation() {
        let eps: f64 = 0.316;
        let d = build_level_diagram(Geometry::Voigt, 2.0, GFactors::default(), eps).unwrap();
        let sp = JonesVector::sigma_plus();
        assert_abs_diff_eq!(rotation_scale(&sp, &d), 1.0 + eps * eps, epsilon = 1e-12);
        assert_abs_diff_eq!(rotation_scale(&sp, &voigt()), 1.0, epsilon = 1e-12);
        let peak = peak_rabi_for_rotation(PI / 2.0, 0.006, -5000.0, &sp, &d).unwrap();
        let pulse = RotationPulse { peak_rabi: peak, fwhm: 0.006, detuning: -5000.0, drive_dipole: sp };
        let r = effective_rotation(&pulse, &d).unwrap();
        assert_abs_diff_eq!(r.angle, PI / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.axis[0].abs(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn power_calibration() {
        assert_relative_eq!(calibrate_power(PI / 2.0, DEFAULT_POWER_COEFFICIENT).unwrap(), 25.0, max_relative = 1e-12);
        assert_relative_eq!(calibrate_power(PI, DEFAULT_POWER_COEFFICIENT).unwrap(), 100.0, max_relative = 1e-12);
        assert_eq!(calibrate_power(0.0, 0.3).unwrap(), 0.0);
        assert!(calibrate_power(1.0, 0.0).is_err());
    }

    #[test]
    fn sequence_timing() {
        let p = RotationPulse::for_angle(PI / 2.0).unwrap();
        let s0 = build_ramsey_sequence(0.0, 5.0, 5.0, p).unwrap();
        let s1 = build_ramsey_sequence(2.5, 5.0, 5.0, p).unwrap();
        assert_abs_diff_eq!(s1.total_duration() - s0.total_duration(), 2.5, epsilon = 1e-12);
        let c = build_ramsey_sequence(3.0, 5.0, 5.0, p).unwrap().rotation_centers();
        assert_abs_diff_eq!(c[0], 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c[1], 13.0 + p.window(), epsilon = 1e-12);
        assert!(build_ramsey_sequence(-1.0, 5.0, 5.0, p).is_err());
    }

    #[test]
    fn readout_targets_match_builder() {
        assert_eq!(voigt().readout_transitions(), default_readout_targets());
    }

    #[test]
    fn sequence_config_round_trip() {
        let p = RotationPulse::for_angle(PI / 2.0).unwrap();
        let s = build_ramsey_sequence(1.25, 5.0, 5.0, p).unwrap();
        let back = PulseSequence::from_config_str(&s.to_config_string()).unwrap();
        assert_eq!(back, s);
    }
}
