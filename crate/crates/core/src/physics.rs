//! Level structure of a singly charged quantum dot: two electron spin ground
//! states, two trion states, Zeeman splittings and the optical selection rules
//! in Voigt and Faraday geometries.
//!
//! Level indices are fixed across the crate: 0 and 1 are the ground states
//! with 0 the lower in energy, 2 and 3 are the trion states. Energies are
//! measured from the zero-field trion line and expressed in rad/ns.

use std::f64::consts::{FRAC_1_SQRT_2, TAU};
use std::fmt;

use nalgebra::Matrix2;
use num_complex::Complex64 as C64;

use crate::error::{domain, Result};
use crate::polarization::JonesVector;

/// μ_B/h in GHz per tesla.
pub const BOHR_MAGNETON_GHZ_PER_TESLA: f64 = 13.996245;

pub const GROUND_LOW: usize = 0;
pub const GROUND_HIGH: usize = 1;
pub const TRION_A: usize = 2;
pub const TRION_B: usize = 3;
pub const GROUNDS: [usize; 2] = [GROUND_LOW, GROUND_HIGH];
pub const TRIONS: [usize; 2] = [TRION_A, TRION_B];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Geometry {
    /// In-plane field along x; eigenstates are the hybridized |E±⟩, |T±⟩.
    #[default]
    Voigt,
    /// Field along the growth axis; eigenstates are |↑⟩, |↓⟩, |⇑⟩, |⇓⟩.
    Faraday,
}

impl fmt::Display for Geometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Geometry::Voigt => "voigt",
            Geometry::Faraday => "faraday",
        })
    }
}

impl std::str::FromStr for Geometry {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "voigt" => Ok(Geometry::Voigt),
            "faraday" => Ok(Geometry::Faraday),
            other => Err(format!("unknown geometry '{other}' (expected voigt or faraday)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GFactors {
    pub electron_inplane: f64,
    pub hole_inplane: f64,
    /// Not measured for this dot; placeholder.
    pub electron_longitudinal: f64,
    /// Not measured for this dot; placeholder.
    pub hole_longitudinal: f64,
}

impl Default for GFactors {
    fn default() -> Self {
        Self {
            electron_inplane: -0.5,
            hole_inplane: 0.0,
            electron_longitudinal: -0.5,
            hole_longitudinal: 1.0,
        }
    }
}

impl GFactors {
    pub fn validate(&self) -> Result<()> {
        for (name, g) in [
            ("electron_inplane", self.electron_inplane),
            ("hole_inplane", self.hole_inplane),
            ("electron_longitudinal", self.electron_longitudinal),
            ("hole_longitudinal", self.hole_longitudinal),
        ] {
            if !g.is_finite() || g.abs() > 10.0 {
                return domain(format!("g-factor {name} = {g} outside [-10, 10]"));
            }
        }
        Ok(())
    }
}

/// Linear Zeeman frequency |g|·(μ_B/h)·B in GHz.
pub fn zeeman_splitting(g: f64, field_tesla: f64) -> Result<f64> {
    if !(field_tesla >= 0.0) {
        return domain(format!("field must be non-negative, got {field_tesla} T"));
    }
    Ok(g.abs() * BOHR_MAGNETON_GHZ_PER_TESLA * field_tesla)
}

/// Polarization label of a transition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransitionLabel {
    H,
    V,
    SigmaPlus,
    SigmaMinus,
    /// Weak diagonal transition in Faraday geometry.
    Diagonal,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub from_level: usize,
    pub to_level: usize,
    /// Transition angular frequency relative to the zero-field trion line.
    pub frequency_offset: f64,
    /// Unit dipole including its phase.
    pub dipole: JonesVector,
    /// |d|² relative to a full-strength circular dipole.
    pub relative_strength: f64,
    pub label: TransitionLabel,
}

impl Transition {
    /// Coupling amplitude d†E for local field `field`.
    pub fn coupling(&self, field: &JonesVector) -> C64 {
        self.dipole.inner(field) * self.relative_strength.sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelDiagram {
    pub geometry: Geometry,
    pub field_tesla: f64,
    pub g: GFactors,
    pub impurity: f64,
    /// Level energies in rad/ns, index order as documented on the module.
    pub energies: [f64; 4],
    pub ground_splitting: f64,
    pub excited_splitting: f64,
    pub transitions: Vec<Transition>,
    /// Columns are the ground eigenstates written in the (|↑⟩, |↓⟩) basis.
    pub ground_basis: Matrix2<C64>,
    /// Columns are the trion eigenstates written in the (|⇑⟩, |⇓⟩) basis.
    pub trion_basis: Matrix2<C64>,
}

impl LevelDiagram {
    pub fn transition(&self, from: usize, to: usize) -> Option<usize> {
        self.transitions.iter().position(|t| t.from_level == from && t.to_level == to)
    }

    /// Transitions out of the lower ground state: the higher-energy pair used
    /// for pumping and readout.
    pub fn readout_transitions(&self) -> Vec<usize> {
        (0..self.transitions.len()).filter(|&i| self.transitions[i].from_level == GROUND_LOW).collect()
    }

    /// Transitions out of the upper ground state (lower photon energy).
    pub fn repump_transitions(&self) -> Vec<usize> {
        (0..self.transitions.len()).filter(|&i| self.transitions[i].from_level == GROUND_HIGH).collect()
    }

    pub fn ground_splitting_ghz(&self) -> f64 {
        self.ground_splitting / TAU
    }

    /// Copy with the ground splitting shifted by `delta` (rad/ns), symmetric
    /// about the mean ground energy.
    pub fn with_ground_detuning(&self, delta: f64) -> Self {
        let mut d = self.clone();
        d.energies[GROUND_LOW] -= delta / 2.0;
        d.energies[GROUND_HIGH] += delta / 2.0;
        d.ground_splitting = d.energies[GROUND_HIGH] - d.energies[GROUND_LOW];
        for t in d.transitions.iter_mut() {
            t.frequency_offset = d.energies[t.to_level] - d.energies[t.from_level];
        }
        d
    }
}

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Dipole operator in the original basis: entry [trion][ground].
fn z_basis_dipoles(impurity: f64) -> [[JonesVector; 2]; 2] {
    let sp = JonesVector::sigma_plus();
    let sm = JonesVector::sigma_minus();
    [
        [sp, sm.scale(c(impurity))],
        [sp.scale(c(impurity)), sm],
    ]
}

/// Builds the four-level diagram for a geometry, field magnitude, g-factors and
/// weak-diagonal amplitude ε.
pub fn build_level_diagram(geometry: Geometry, field_tesla: f64, g: GFactors, impurity: f64) -> Result<LevelDiagram> {
    if !(field_tesla >= 0.0) || !field_tesla.is_finite() {
        return domain(format!("field must be non-negative, got {field_tesla} T"));
    }
    if !(0.0..0.5).contains(&impurity) {
        return domain(format!("impurity must lie in [0, 0.5), got {impurity}"));
    }
    g.validate()?;

    let omega_b = TAU * BOHR_MAGNETON_GHZ_PER_TESLA * field_tesla;
    let (g_e, g_h) = match geometry {
        Geometry::Voigt => (g.electron_inplane, g.hole_inplane),
        Geometry::Faraday => (g.electron_longitudinal, g.hole_longitudinal),
    };
    let s = FRAC_1_SQRT_2;
    // Candidate eigenstates (first has spin projection +1/2 along the field).
    let (mut gb, tb) = match geometry {
        Geometry::Voigt => {
            let m = Matrix2::new(c(s), c(s), c(s), c(-s));
            (m, m)
        }
        Geometry::Faraday => (Matrix2::identity(), Matrix2::identity()),
    };
    let mut ge = [g_e * omega_b / 2.0, -g_e * omega_b / 2.0];
    let te = [g_h * omega_b / 2.0, -g_h * omega_b / 2.0];
    if ge[1] < ge[0] {
        ge.swap(0, 1);
        gb.swap_columns(0, 1);
    }
    let energies = [ge[0], ge[1], te[0], te[1]];

    let dz = z_basis_dipoles(impurity);
    let project = |dz: &[[JonesVector; 2]; 2], ti: usize, gi: usize| {
        // d = Σ conj(tb[a,ti]) · dz[a][b] · gb[b,gi]
        let mut ex = C64::new(0.0, 0.0);
        let mut ey = C64::new(0.0, 0.0);
        for a in 0..2 {
            for b in 0..2 {
                let w = tb[(a, ti)].conj() * gb[(b, gi)];
                ex += w * dz[a][b].ex;
                ey += w * dz[a][b].ey;
            }
        }
        JonesVector::new(ex, ey)
    };
    let mut transitions = Vec::with_capacity(4);
    for (ti, &trion) in TRIONS.iter().enumerate() {
        for (gi, &ground) in GROUNDS.iter().enumerate() {
            let d = project(&dz, ti, gi);
            let strength = d.norm_sqr();
            // forbidden lines keep their polarization with zero strength
            let unit = if strength > 1e-30 {
                d.normalized()
            } else {
                project(&z_basis_dipoles(1.0), ti, gi).normalized()
            };
            let label = label_for(geometry, &unit, ti, gi, &gb);
            transitions.push(Transition {
                from_level: ground,
                to_level: trion,
                frequency_offset: energies[trion] - energies[ground],
                dipole: unit,
                relative_strength: strength,
                label,
            });
        }
    }

    Ok(LevelDiagram {
        geometry,
        field_tesla,
        g,
        impurity,
        energies,
        ground_splitting: ge[1] - ge[0],
        excited_splitting: (te[0] - te[1]).abs(),
        transitions,
        ground_basis: gb,
        trion_basis: tb,
    })
}

fn label_for(geometry: Geometry, unit: &JonesVector, ti: usize, gi: usize, gb: &Matrix2<C64>) -> TransitionLabel {
    match geometry {
        Geometry::Voigt => {
            if unit.ex.norm() >= unit.ey.norm() {
                TransitionLabel::H
            } else {
                TransitionLabel::V
            }
        }
        Geometry::Faraday => {
            // ground column gi is |↑⟩ when gb[(0, gi)] ≠ 0
            let ground_up = gb[(0, gi)].norm() > 0.5;
            let vertical = (ground_up && ti == 0) || (!ground_up && ti == 1);
            if !vertical {
                TransitionLabel::Diagonal
            } else if ti == 0 {
                TransitionLabel::SigmaPlus
            } else {
                TransitionLabel::SigmaMinus
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn voigt(b: f64) -> LevelDiagram {
        build_level_diagram(Geometry::Voigt, b, GFactors::default(), 0.0).unwrap()
    }

    #[test]
    fn zeeman_at_two_tesla() {
        assert_relative_eq!(zeeman_splitting(-0.5, 2.0).unwrap(), 13.996245, max_relative = 1e-12);
        assert_eq!(zeeman_splitting(3.0, 0.0).unwrap(), 0.0);
        assert_relative_eq!(zeeman_splitting(-0.45, 2.0).unwrap(), 12.5966205, max_relative = 1e-9);
        assert!(zeeman_splitting(-0.5, -1.0).is_err());
    }

    #[test]
    fn voigt_two_tesla_ground_splitting() {
        let d = voigt(2.0);
        assert_relative_eq!(d.ground_splitting_ghz(), 13.996245, max_relative = 1e-12);
        assert_eq!(d.excited_splitting, 0.0);
        assert!(d.energies[GROUND_LOW] < d.energies[GROUND_HIGH]);
    }

    #[test]
    fn voigt_selection_rules() {
        let d = voigt(2.0);
        assert_eq!(d.transitions.len(), 4);
        let v: Vec<_> = d.transitions.iter().filter(|t| t.label == TransitionLabel::V).collect();
        let h: Vec<_> = d.transitions.iter().filter(|t| t.label == TransitionLabel::H).collect();
        assert_eq!((v.len(), h.len()), (2, 2));
        for a in &v {
            for b in &h {
                assert!(a.dipole.inner(&b.dipole).norm() < 1e-12);
            }
        }
        for t in &d.transitions {
            assert_relative_eq!(t.dipole.norm(), 1.0, max_relative = 1e-12);
            assert_relative_eq!(t.relative_strength, 0.5, max_relative = 1e-12);
        }
    }

    #[test]
    fn voigt_ground_states_are_equal_superpositions() {
        let d = voigt(1.0);
        for col in 0..2 {
            for row in 0..2 {
                assert!((d.ground_basis[(row, col)].norm_sqr() - 0.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_field_is_degenerate() {
        let d = voigt(0.0);
        assert_eq!(d.ground_splitting, 0.0);
        assert_eq!(d.transitions.len(), 4);
        assert!(d.transitions.iter().all(|t| t.frequency_offset == 0.0));
    }

    #[test]
    fn faraday_weak_diagonals() {
        let eps: f64 = 0.316;
        let d = build_level_diagram(Geometry::Faraday, 1.0, GFactors::default(), eps).unwrap();
        assert_eq!(d.transitions.len(), 4);
        let strong: Vec<_> = d.transitions.iter().filter(|t| t.label != TransitionLabel::Diagonal).collect();
        let weak: Vec<_> = d.transitions.iter().filter(|t| t.label == TransitionLabel::Diagonal).collect();
        assert_eq!((strong.len(), weak.len()), (2, 2));
        for t in strong {
            assert_relative_eq!(t.relative_strength, 1.0, max_relative = 1e-12);
        }
        for t in weak {
            assert_relative_eq!(t.relative_strength, eps * eps, max_relative = 1e-12);
        }
        assert_relative_eq!(eps * eps, 0.099856, max_relative = 1e-12);
    }

    #[test]
    fn faraday_circular_dipoles_orthogonal() {
        let d = build_level_diagram(Geometry::Faraday, 1.0, GFactors::default(), 0.0).unwrap();
        assert_eq!(d.transitions.len(), 4);
        let p = d.transitions.iter().find(|t| t.label == TransitionLabel::SigmaPlus).unwrap();
        let m = d.transitions.iter().find(|t| t.label == TransitionLabel::SigmaMinus).unwrap();
        assert_eq!(p.dipole.inner(&m.dipole).norm(), 0.0);
    }

    #[test]
    fn sigma_plus_couples_only_spin_up_in_voigt() {
        // In the hybridized basis a σ+ field couples all four transitions with
        // amplitude 1/2; their sum reconstructs |⇑⟩⟨↑|.
        let d = voigt(2.0);
        for t in &d.transitions {
            assert_relative_eq!(t.coupling(&JonesVector::sigma_plus()).norm(), 0.5, max_relative = 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(build_level_diagram(Geometry::Voigt, -1.0, GFactors::default(), 0.0).is_err());
        assert!(build_level_diagram(Geometry::Voigt, 1.0, GFactors::default(), 0.5).is_err());
        let g = GFactors { electron_inplane: 11.0, ..GFactors::default() };
        assert!(build_level_diagram(Geometry::Voigt, 1.0, g, 0.0).is_err());
    }
}
