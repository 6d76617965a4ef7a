//! Jones calculus for the excitation path: far-field polarization through a
//! half-wave plate, a quarter-wave plate and the nanostructure transfer
//! matrix to the local field at the dot, plus the waveplate scan that finds
//! the settings isolating each circular dipole.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::{domain, Result};

/// A fully polarized field (or transition dipole) as two complex amplitudes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JonesVector {
    pub ex: C64,
    pub ey: C64,
}

impl JonesVector {
    pub const fn new(ex: C64, ey: C64) -> Self {
        Self { ex, ey }
    }

    pub fn horizontal() -> Self {
        Self::new(C64::new(1.0, 0.0), C64::new(0.0, 0.0))
    }

    pub fn vertical() -> Self {
        Self::new(C64::new(0.0, 0.0), C64::new(1.0, 0.0))
    }

    /// Linear polarization at `angle` from the x axis.
    pub fn linear(angle: f64) -> Self {
        Self::new(C64::new(angle.cos(), 0.0), C64::new(angle.sin(), 0.0))
    }

    /// (1, i)/√2, the helicity driving the σ+ dipole.
    pub fn sigma_plus() -> Self {
        Self::new(C64::new(FRAC_1_SQRT_2, 0.0), C64::new(0.0, FRAC_1_SQRT_2))
    }

    /// (1, −i)/√2.
    pub fn sigma_minus() -> Self {
        Self::new(C64::new(FRAC_1_SQRT_2, 0.0), C64::new(0.0, -FRAC_1_SQRT_2))
    }

    pub fn norm_sqr(&self) -> f64 {
        self.ex.norm_sqr() + self.ey.norm_sqr()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn normalized(&self) -> Self {
        self.scale(C64::new(1.0 / self.norm(), 0.0))
    }

    pub fn scale(&self, s: C64) -> Self {
        Self::new(self.ex * s, self.ey * s)
    }

    /// Hermitian inner product ⟨self, other⟩ = self† · other.
    pub fn inner(&self, other: &Self) -> C64 {
        self.ex.conj() * other.ex + self.ey.conj() * other.ey
    }

    pub fn as_vector(&self) -> Vector2<C64> {
        Vector2::new(self.ex, self.ey)
    }

    pub fn from_vector(v: &Vector2<C64>) -> Self {
        Self::new(v[0], v[1])
    }

    /// Stokes parameters [S0, S1, S2, S3].
    pub fn stokes(&self) -> [f64; 4] {
        let xx = self.ex.norm_sqr();
        let yy = self.ey.norm_sqr();
        let cross = self.ex.conj() * self.ey;
        [xx + yy, xx - yy, 2.0 * cross.re, 2.0 * cross.im]
    }

    /// Ellipticity angle χ with sin 2χ = S3/S0; 0 for linear, ±π/4 for circular.
    pub fn ellipticity_angle(&self) -> f64 {
        let s = self.stokes();
        0.5 * (s[3] / s[0]).clamp(-1.0, 1.0).asin()
    }

    pub fn classify(&self) -> PolarizationKind {
        let chi = self.ellipticity_angle().abs();
        let tol = 2f64.to_radians();
        if chi < tol {
            PolarizationKind::Linear
        } else if chi > PI / 4.0 - tol {
            PolarizationKind::Circular
        } else {
            PolarizationKind::Elliptic
        }
    }
}

/// Coarse shape label; linear and circular allow a 2° ellipticity tolerance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolarizationKind {
    Linear,
    Circular,
    Elliptic,
}

/// A 2×2 complex optical element.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JonesMatrix(pub Matrix2<C64>);

impl JonesMatrix {
    pub fn identity() -> Self {
        Self(Matrix2::identity())
    }

    pub fn from_entries(m11: C64, m12: C64, m21: C64, m22: C64) -> Self {
        Self(Matrix2::new(m11, m12, m21, m22))
    }

    pub fn rotation(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix2::new(
            C64::new(c, 0.0),
            C64::new(-s, 0.0),
            C64::new(s, 0.0),
            C64::new(c, 0.0),
        ))
    }

    /// Linear retarder with `amplitude_ratio` transmission and `retardance` on
    /// the slow axis, the axes rotated by `axis_angle`.
    pub fn retarder(axis_angle: f64, amplitude_ratio: f64, retardance: f64) -> Self {
        let diag = Matrix2::new(
            C64::new(1.0, 0.0),
            C64::new(0.0, 0.0),
            C64::new(0.0, 0.0),
            C64::from_polar(amplitude_ratio, retardance),
        );
        Self(Self::rotation(axis_angle).0 * diag * Self::rotation(-axis_angle).0)
    }

    /// Stand-in far-field → dot transfer matrix: a diattenuating retarder with
    /// condition number 2 and 30° retardance, axes at 20°.
    pub fn default_transfer() -> Self {
        Self::retarder(20f64.to_radians(), 0.5, 30f64.to_radians())
    }

    pub fn apply(&self, v: &JonesVector) -> JonesVector {
        JonesVector::from_vector(&(self.0 * v.as_vector()))
    }

    pub fn then(&self, next: &JonesMatrix) -> JonesMatrix {
        JonesMatrix(next.0 * self.0)
    }

    pub fn scale(&self, s: C64) -> Self {
        Self(self.0 * s)
    }

    pub fn singular_values(&self) -> (f64, f64) {
        let sv = self.0.singular_values();
        (sv[0].max(sv[1]), sv[0].min(sv[1]))
    }

    pub fn condition_number(&self) -> f64 {
        let (hi, lo) = self.singular_values();
        hi / lo
    }

    pub fn unitarity_defect(&self) -> f64 {
        (self.0.adjoint() * self.0 - Matrix2::identity()).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WaveplateKind {
    Half,
    Quarter,
}

impl WaveplateKind {
    fn retardance(self) -> f64 {
        match self {
            WaveplateKind::Half => PI,
            WaveplateKind::Quarter => PI / 2.0,
        }
    }
}

/// R(θ)·diag(1, e^{iδ})·R(−θ) with δ = π or π/2.
pub fn waveplate(kind: WaveplateKind, fast_axis_angle: f64) -> JonesMatrix {
    JonesMatrix::retarder(fast_axis_angle, 1.0, kind.retardance())
}

fn reduce_angle(a: f64) -> f64 {
    let r = a.rem_euclid(PI);
    if r >= PI { 0.0 } else { r }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WaveplateSetting {
    hwp: f64,
    qwp: f64,
}

impl WaveplateSetting {
    /// Angles are reduced to [0, π).
    pub fn new(hwp_angle: f64, qwp_angle: f64) -> Self {
        Self { hwp: reduce_angle(hwp_angle), qwp: reduce_angle(qwp_angle) }
    }

    pub fn hwp(&self) -> f64 {
        self.hwp
    }

    pub fn qwp(&self) -> f64 {
        self.qwp
    }
}

/// Order of the two waveplates in the beam path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum OpticalChain {
    #[default]
    HalfThenQuarter,
    QuarterThenHalf,
}

impl fmt::Display for OpticalChain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OpticalChain::HalfThenQuarter => "hwp_qwp",
            OpticalChain::QuarterThenHalf => "qwp_hwp",
        })
    }
}

/// Polarization leaving the waveplate pair, before the nanostructure.
pub fn far_field(e0: &JonesVector, setting: &WaveplateSetting, chain: OpticalChain) -> JonesVector {
    let h = waveplate(WaveplateKind::Half, setting.hwp);
    let q = waveplate(WaveplateKind::Quarter, setting.qwp);
    let m = match chain {
        OpticalChain::HalfThenQuarter => q.0 * h.0,
        OpticalChain::QuarterThenHalf => h.0 * q.0,
    };
    JonesVector::from_vector(&(m * e0.as_vector()))
}

/// T·QWP(q)·HWP(h)·e0 (for the default chain order).
pub fn far_field_to_local(
    e0: &JonesVector,
    setting: &WaveplateSetting,
    transfer: &JonesMatrix,
    chain: OpticalChain,
) -> JonesVector {
    transfer.apply(&far_field(e0, setting, chain))
}

/// Excitation rates of the two circular resonances for local field `e`.
///
/// Each resonance is dominated by its circular dipole; the weakly allowed
/// diagonal transition of opposite helicity adds an incoherent contribution of
/// relative strength ε². The pair is normalized by 1 + ε².
pub fn excitation_rates(e: &JonesVector, impurity: f64) -> (f64, f64) {
    let plus = JonesVector::sigma_plus().inner(e).norm_sqr();
    let minus = JonesVector::sigma_minus().inner(e).norm_sqr();
    let w = impurity * impurity;
    let n = 1.0 + w;
    ((plus + w * minus) / n, (minus + w * plus) / n)
}

/// Relative floor used when a rate underflows.
pub const RATIO_FLOOR: f64 = 1e-15;

fn floored_ratio(num: f64, den: f64) -> (f64, bool) {
    let floor = RATIO_FLOOR * num;
    if den < floor || den == 0.0 {
        if num == 0.0 {
            (0.0, true)
        } else {
            (num / floor, true)
        }
    } else {
        (num / den, false)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContrastEntry {
    pub setting: WaveplateSetting,
    pub r_plus: f64,
    pub r_minus: f64,
    /// R₊ / max(R₋, 1e-15·R₊).
    pub ratio: f64,
    pub floored: bool,
}

impl ContrastEntry {
    fn new(setting: WaveplateSetting, r_plus: f64, r_minus: f64) -> Self {
        let (ratio, floored) = floored_ratio(r_plus, r_minus);
        Self { setting, r_plus, r_minus, ratio, floored }
    }

    /// R₋/R₊ with the same floor convention.
    pub fn inverse_ratio(&self) -> f64 {
        floored_ratio(self.r_minus, self.r_plus).0
    }
}

/// Scan result in row-major (hwp, then qwp) order.
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastMap {
    pub entries: Vec<ContrastEntry>,
    pub grid_step: f64,
    pub n_per_axis: usize,
}

impl ContrastMap {
    pub fn from_entries(entries: Vec<ContrastEntry>, grid_step: f64) -> Self {
        let n = (entries.len() as f64).sqrt().round() as usize;
        Self { entries, grid_step, n_per_axis: n }
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["hwp_deg", "qwp_deg", "r_plus", "r_minus", "ratio"])?;
        for e in &self.entries {
            out.write_record([
                e.setting.hwp.to_degrees().to_string(),
                e.setting.qwp.to_degrees().to_string(),
                e.r_plus.to_string(),
                e.r_minus.to_string(),
                e.ratio.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

pub(crate) fn grid_points(grid_step: f64) -> Result<usize> {
    if !(grid_step > 0.0) || !grid_step.is_finite() {
        return domain(format!("grid_step must be positive, got {grid_step}"));
    }
    let n = PI / grid_step;
    let rounded = n.round();
    if rounded < 1.0 || (n - rounded).abs() > 1e-9 * rounded.max(1.0) {
        return domain(format!("grid_step = {grid_step} rad does not divide π"));
    }
    Ok(rounded as usize)
}

/// Rates over the half-open grid [0, π)² of waveplate angles.
pub fn contrast_scan(
    e0: &JonesVector,
    transfer: &JonesMatrix,
    impurity: f64,
    grid_step: f64,
    chain: OpticalChain,
) -> Result<ContrastMap> {
    if !(0.0..0.5).contains(&impurity) {
        return domain(format!("impurity must lie in [0, 0.5), got {impurity}"));
    }
    let n = grid_points(grid_step)?;
    let step = PI / n as f64;
    let entries: Vec<ContrastEntry> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            (0..n).map(move |j| {
                let setting = WaveplateSetting::new(i as f64 * step, j as f64 * step);
                let local = far_field_to_local(e0, &setting, transfer, chain);
                let (rp, rm) = excitation_rates(&local, impurity);
                ContrastEntry::new(setting, rp, rm)
            })
        })
        .collect();
    Ok(ContrastMap { entries, grid_step: step, n_per_axis: n })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContrastTarget {
    MaximizeRplus,
    MaximizeRminus,
}

/// Argmax of the targeted ratio; ties go to the lexicographically smallest
/// (hwp, qwp).
pub fn optimal_setting(map: &ContrastMap, target: ContrastTarget) -> Result<(WaveplateSetting, f64)> {
    let mut best: Option<(WaveplateSetting, f64)> = None;
    for e in &map.entries {
        let r = match target {
            ContrastTarget::MaximizeRplus => e.ratio,
            ContrastTarget::MaximizeRminus => e.inverse_ratio(),
        };
        let better = match best {
            None => true,
            Some((s, b)) => {
                r > b || (r == b && (e.setting.hwp, e.setting.qwp) < (s.hwp, s.qwp))
            }
        };
        if better {
            best = Some((e.setting, r));
        }
    }
    best.ok_or_else(|| crate::Error::Domain("contrast map is empty".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn equal_up_to_phase(a: &JonesVector, b: &JonesVector) -> bool {
        (a.inner(b).norm() - a.norm() * b.norm()).abs() < 1e-12
    }

    #[test]
    fn quarter_wave_at_45_makes_circular() {
        let out = waveplate(WaveplateKind::Quarter, PI / 4.0).apply(&JonesVector::horizontal());
        assert_eq!(out.classify(), PolarizationKind::Circular);
        let circ = JonesVector::new(C64::new(1.0, 0.0), C64::new(0.0, 1.0)).normalized();
        let circ2 = JonesVector::new(C64::new(1.0, 0.0), C64::new(0.0, -1.0)).normalized();
        assert!(equal_up_to_phase(&out, &circ) || equal_up_to_phase(&out, &circ2));
    }

    #[test]
    fn half_wave_reflects_linear_angle() {
        for &(theta, alpha) in &[(0.3, 0.1), (1.0, -0.4), (2.5, 0.9)] {
            let out = waveplate(WaveplateKind::Half, theta).apply(&JonesVector::linear(alpha));
            assert!(equal_up_to_phase(&out, &JonesVector::linear(2.0 * theta - alpha)));
        }
    }

    #[test]
    fn half_wave_twice_is_identity() {
        let h = waveplate(WaveplateKind::Half, 0.7);
        let m = h.0 * h.0;
        let phase = m[(0, 0)];
        assert_abs_diff_eq!(phase.norm(), 1.0, epsilon = 1e-12);
        assert!((m - Matrix2::identity() * phase).iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn identity_chain() {
        let out = far_field_to_local(
            &JonesVector::horizontal(),
            &WaveplateSetting::new(0.0, 0.0),
            &JonesMatrix::identity(),
            OpticalChain::default(),
        );
        assert_abs_diff_eq!(out.ex.re, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.ey.norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn qwp_at_45_gives_circular_local_field() {
        let out = far_field_to_local(
            &JonesVector::horizontal(),
            &WaveplateSetting::new(0.0, PI / 4.0),
            &JonesMatrix::identity(),
            OpticalChain::default(),
        );
        assert_eq!(out.classify(), PolarizationKind::Circular);
    }

    #[test]
    fn rates_for_pure_helicity_and_linear() {
        let (p, m) = excitation_rates(&JonesVector::sigma_plus(), 0.0);
        assert_abs_diff_eq!(p, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m, 0.0, epsilon = 1e-12);
        let (p, m) = excitation_rates(&JonesVector::horizontal(), 0.0);
        assert_abs_diff_eq!(p, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(m, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn impurity_sets_helicity_ratio() {
        let (p, m) = excitation_rates(&JonesVector::sigma_plus(), 0.316);
        // 1/ε² with ε = 0.316
        assert_abs_diff_eq!(p / m, 1.0 / (0.316 * 0.316), epsilon = 1e-9);
        assert!((p / m - 10.0).abs() < 0.05);
    }

    #[test]
    fn default_transfer_is_condition_two() {
        let t = JonesMatrix::default_transfer();
        assert_abs_diff_eq!(t.condition_number(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn grid_step_must_divide_pi() {
        assert!(grid_points(1f64.to_radians()).is_ok());
        assert_eq!(grid_points(1f64.to_radians()).unwrap(), 180);
        assert!(grid_points(0.7f64.to_radians() * 1.001).is_err());
        assert!(grid_points(0.0).is_err());
    }

    #[test]
    fn single_entry_map_returns_it() {
        let s = WaveplateSetting::new(0.1, 0.2);
        let map = ContrastMap::from_entries(vec![ContrastEntry::new(s, 0.3, 0.1)], PI);
        let (best, r) = optimal_setting(&map, ContrastTarget::MaximizeRplus).unwrap();
        assert_eq!(best, s);
        assert_abs_diff_eq!(r, 3.0, epsilon = 1e-12);
        let empty = ContrastMap::from_entries(vec![], PI);
        assert!(optimal_setting(&empty, ContrastTarget::MaximizeRminus).is_err());
    }

    #[test]
    fn floor_keeps_ratio_finite() {
        let e = ContrastEntry::new(WaveplateSetting::new(0.0, 0.0), 1.0, 0.0);
        assert!(e.floored);
        assert_abs_diff_eq!(e.ratio, 1e15, epsilon = 1.0);
    }

    #[test]
    fn angles_reduce_into_half_open_range() {
        let s = WaveplateSetting::new(-0.1, PI + 0.2);
        assert!(s.hwp() >= 0.0 && s.hwp() < PI);
        assert_abs_diff_eq!(s.qwp(), 0.2, epsilon = 1e-12);
    }
}
