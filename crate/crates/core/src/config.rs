//! INI experiment configuration: `[section]` headers, `key = value` lines,
//! `#` comments. Every key is checked against a fixed schema.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::path::Path;

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::experiments::{
    InitialState, OverhauserModel, PumpingDrive, RamseyConfig, RamseyMode, ReadoutModel, RotationLaserSideEffects,
    DEFAULT_ADDED_SPINFLIP, DEFAULT_COLLECTION_EFFICIENCY, DEFAULT_REPUMP_BROADENING, DEFAULT_TRION_KICK,
};
use crate::lindblad::RateSet;
use crate::physics::{build_level_diagram, GFactors, Geometry, LevelDiagram, BOHR_MAGNETON_GHZ_PER_TESLA};
use crate::polarization::{JonesMatrix, JonesVector, OpticalChain};
use crate::pulses::{
    angle_from_power, default_readout_targets, peak_rabi_for_rotation, RamseyLayout, RotationPulse, DEFAULT_POWER_COEFFICIENT,
    DEFAULT_RESONANT_RABI,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Helicity {
    Plus,
    Minus,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SystemSection {
    pub geometry: Geometry,
    pub field_tesla: f64,
    pub g: GFactors,
    pub impurity: f64,
    /// Lifetime-limited linewidth; Γ = 2π × this.
    pub lifetime_linewidth_ghz: f64,
    pub branching: [[f64; 2]; 2],
    pub kappa_per_us: f64,
    pub line_fwhm_ghz: f64,
    pub dephasing_rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PulsesSection {
    pub rotation_power_uw: f64,
    pub power_coefficient: f64,
    pub rotation_fwhm_ps: f64,
    pub rotation_detuning_thz: f64,
    pub rotation_helicity: Helicity,
    pub resonant_rabi: f64,
    pub init_duration_ns: f64,
    pub readout_duration_ns: f64,
    pub lead_in_ns: f64,
    pub lead_out_ns: f64,
    pub resonant_dt_ns: f64,
    pub rotation_dt_ns: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OverhauserSection {
    pub t2_star_ns: f64,
    pub seed: u64,
    pub ensemble_size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SideEffectsSection {
    pub enabled: bool,
    pub trion_excitation_prob: f64,
    pub added_spinflip_per_us: f64,
    pub repump_broadening_factor: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReadoutSection {
    pub collection_efficiency: f64,
    pub window_start_ns: f64,
    pub window_end_ns: f64,
    pub background: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanSection {
    pub tau_start_ns: f64,
    pub tau_stop_ns: f64,
    pub tau_points: usize,
    pub mode: RamseyMode,
    /// Gaussian noise added to the trace, as a fraction of the fringe amplitude.
    pub noise_fraction: f64,
    pub allow_large_runs: bool,
    pub grid_step_deg: f64,
    pub chain: OpticalChain,
    pub transfer: JonesMatrix,
    pub input_polarization: JonesVector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PumpingSection {
    pub duration_ns: f64,
    pub dt_ns: f64,
    pub with_rotation_laser: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationSection {
    pub target_angle: f64,
    pub full_integration: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitSection {
    pub subtract_background: bool,
    pub free_exponent: bool,
    pub max_iter: usize,
    pub tol: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputSection {
    pub svg: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub system: SystemSection,
    pub pulses: PulsesSection,
    pub overhauser: OverhauserSection,
    pub side_effects: SideEffectsSection,
    pub readout: ReadoutSection,
    pub scan: ScanSection,
    pub pumping: PumpingSection,
    pub calibration: CalibrationSection,
    pub fit: FitSection,
    pub output: OutputSection,
}

/// g-factor giving a 12.70 GHz Larmor frequency at 2 T.
pub fn default_electron_g() -> f64 {
    -12.70 / (2.0 * BOHR_MAGNETON_GHZ_PER_TESLA)
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            system: SystemSection {
                geometry: Geometry::Voigt,
                field_tesla: 2.0,
                g: GFactors { electron_inplane: default_electron_g(), ..GFactors::default() },
                impurity: 0.316,
                lifetime_linewidth_ghz: 0.2,
                branching: [[0.5, 0.5], [0.5, 0.5]],
                kappa_per_us: 0.2,
                line_fwhm_ghz: 1.8,
                dephasing_rate: 0.0,
            },
            pulses: PulsesSection {
                rotation_power_uw: 25.0,
                power_coefficient: DEFAULT_POWER_COEFFICIENT,
                rotation_fwhm_ps: 6.0,
                rotation_detuning_thz: -0.8,
                rotation_helicity: Helicity::Plus,
                resonant_rabi: DEFAULT_RESONANT_RABI,
                init_duration_ns: 5.0,
                readout_duration_ns: 5.0,
                lead_in_ns: 5.0,
                lead_out_ns: 2.0,
                resonant_dt_ns: 1e-3,
                rotation_dt_ns: 1e-5,
            },
            overhauser: OverhauserSection { t2_star_ns: 2.2, seed: 1, ensemble_size: 2000 },
            side_effects: SideEffectsSection {
                enabled: true,
                trion_excitation_prob: DEFAULT_TRION_KICK,
                added_spinflip_per_us: DEFAULT_ADDED_SPINFLIP * 1e3,
                repump_broadening_factor: DEFAULT_REPUMP_BROADENING,
            },
            readout: ReadoutSection {
                collection_efficiency: DEFAULT_COLLECTION_EFFICIENCY,
                window_start_ns: 0.0,
                window_end_ns: 5.0,
                background: 0.0,
            },
            scan: ScanSection {
                tau_start_ns: 0.0,
                tau_stop_ns: 3.0,
                tau_points: 400,
                mode: RamseyMode::Effective,
                noise_fraction: 0.0,
                allow_large_runs: false,
                grid_step_deg: 1.0,
                chain: OpticalChain::HalfThenQuarter,
                transfer: JonesMatrix::default_transfer(),
                input_polarization: JonesVector::horizontal(),
            },
            pumping: PumpingSection { duration_ns: 40.0, dt_ns: 1e-3, with_rotation_laser: false },
            calibration: CalibrationSection { target_angle: PI / 2.0, full_integration: false },
            fit: FitSection { subtract_background: false, free_exponent: false, max_iter: 500, tol: 1e-10 },
            output: OutputSection { svg: true },
        }
    }
}

#[derive(Clone, Copy)]
enum Kind {
    Float,
    Int,
    Bool,
    Text,
    Floats(usize),
}

const SCHEMA: &[(&str, &[(&str, Kind)])] = &[
    (
        "system",
        &[
            ("geometry", Kind::Text),
            ("field_tesla", Kind::Float),
            ("electron_g_inplane", Kind::Float),
            ("hole_g_inplane", Kind::Float),
            ("electron_g_longitudinal", Kind::Float),
            ("hole_g_longitudinal", Kind::Float),
            ("impurity", Kind::Float),
            ("lifetime_linewidth_ghz", Kind::Float),
            ("branching_a", Kind::Floats(2)),
            ("branching_b", Kind::Floats(2)),
            ("kappa_per_us", Kind::Float),
            ("line_fwhm_ghz", Kind::Float),
            ("dephasing_rate", Kind::Float),
        ],
    ),
    (
        "pulses",
        &[
            ("rotation_power_uw", Kind::Float),
            ("power_coefficient", Kind::Float),
            ("rotation_fwhm_ps", Kind::Float),
            ("rotation_detuning_thz", Kind::Float),
            ("rotation_helicity", Kind::Text),
            ("resonant_rabi", Kind::Float),
            ("init_duration_ns", Kind::Float),
            ("readout_duration_ns", Kind::Float),
            ("lead_in_ns", Kind::Float),
            ("lead_out_ns", Kind::Float),
            ("resonant_dt_ns", Kind::Float),
            ("rotation_dt_ns", Kind::Float),
        ],
    ),
    ("overhauser", &[("t2_star_ns", Kind::Float), ("seed", Kind::Int), ("ensemble_size", Kind::Int)]),
    (
        "side_effects",
        &[
            ("enabled", Kind::Bool),
            ("trion_excitation_prob", Kind::Float),
            ("added_spinflip_per_us", Kind::Float),
            ("repump_broadening_factor", Kind::Float),
        ],
    ),
    (
        "readout",
        &[
            ("collection_efficiency", Kind::Float),
            ("window_start_ns", Kind::Float),
            ("window_end_ns", Kind::Float),
            ("background", Kind::Float),
        ],
    ),
    (
        "scan",
        &[
            ("tau_start_ns", Kind::Float),
            ("tau_stop_ns", Kind::Float),
            ("tau_points", Kind::Int),
            ("mode", Kind::Text),
            ("noise_fraction", Kind::Float),
            ("allow_large_runs", Kind::Bool),
            ("grid_step_deg", Kind::Float),
            ("chain", Kind::Text),
            ("transfer", Kind::Floats(8)),
            ("input_polarization", Kind::Floats(4)),
        ],
    ),
    ("pumping", &[("duration_ns", Kind::Float), ("dt_ns", Kind::Float), ("with_rotation_laser", Kind::Bool)]),
    ("calibration", &[("target_angle", Kind::Float), ("full_integration", Kind::Bool)]),
    (
        "fit",
        &[("subtract_background", Kind::Bool), ("free_exponent", Kind::Bool), ("max_iter", Kind::Int), ("tol", Kind::Float)],
    ),
    ("output", &[("svg", Kind::Bool)]),
];

#[derive(Clone, Debug)]
enum Value {
    Float(f64),
    Int(u64),
    Bool(bool),
    Text(String),
    Floats(Vec<f64>),
}

fn parse_value(kind: Kind, raw: &str, line: usize, key: &str) -> Result<Value> {
    let err = |m: String| Error::Config { line, message: format!("key '{key}': {m}") };
    match kind {
        Kind::Float => raw.parse::<f64>().ok().filter(|v| v.is_finite()).map(Value::Float).ok_or_else(|| err(format!("expected a number, got '{raw}'"))),
        Kind::Int => raw.parse::<u64>().map(Value::Int).map_err(|_| err(format!("expected a non-negative integer, got '{raw}'"))),
        Kind::Bool => match raw.to_ascii_lowercase().as_str() {
            "true" | "on" | "yes" | "1" => Ok(Value::Bool(true)),
            "false" | "off" | "no" | "0" => Ok(Value::Bool(false)),
            _ => Err(err(format!("expected true/false, got '{raw}'"))),
        },
        Kind::Text => Ok(Value::Text(raw.to_string())),
        Kind::Floats(n) => {
            let vals: std::result::Result<Vec<f64>, _> = raw.split(',').map(|s| s.trim().parse::<f64>()).collect();
            match vals {
                Ok(v) if v.len() == n && v.iter().all(|x| x.is_finite()) => Ok(Value::Floats(v)),
                _ => Err(err(format!("expected {n} comma-separated numbers, got '{raw}'"))),
            }
        }
    }
}

type Entries = BTreeMap<(String, String), (usize, Value)>;

fn parse_entries(text: &str) -> Result<Entries> {
    let mut out = Entries::new();
    let mut section: Option<&'static str> = None;
    for (i, raw_line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw_line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or(Error::Config { line: line_no, message: format!("malformed section header '{line}'") })?.trim();
            section = Some(
                SCHEMA
                    .iter()
                    .find(|(s, _)| *s == name)
                    .map(|(s, _)| *s)
                    .ok_or_else(|| Error::Config { line: line_no, message: format!("unknown section '[{name}]'") })?,
            );
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config { line: line_no, message: format!("expected 'key = value', got '{line}'") })?;
        let (key, value) = (key.trim(), value.trim());
        let sec = section.ok_or_else(|| Error::Config { line: line_no, message: format!("key '{key}' appears before any section") })?;
        let keys = SCHEMA.iter().find(|(s, _)| *s == sec).expect("section from schema").1;
        let kind = keys
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, k)| *k)
            .ok_or_else(|| Error::Config { line: line_no, message: format!("unknown key '{key}' in section [{sec}]") })?;
        let v = parse_value(kind, value, line_no, key)?;
        if let Some((prev, _)) = out.insert((sec.to_string(), key.to_string()), (line_no, v)) {
            return Err(Error::Config { line: line_no, message: format!("duplicate key '{key}' (first set on line {prev})") });
        }
    }
    Ok(out)
}

struct Reader<'a> {
    entries: &'a Entries,
}

impl Reader<'_> {
    fn get(&self, sec: &str, key: &str) -> Option<&(usize, Value)> {
        self.entries.get(&(sec.to_string(), key.to_string()))
    }

    fn float(&self, sec: &str, key: &str, target: &mut f64) {
        if let Some((_, Value::Float(v))) = self.get(sec, key) {
            *target = *v;
        }
    }

    fn int(&self, sec: &str, key: &str) -> Option<u64> {
        match self.get(sec, key) {
            Some((_, Value::Int(v))) => Some(*v),
            _ => None,
        }
    }

    fn bool(&self, sec: &str, key: &str, target: &mut bool) {
        if let Some((_, Value::Bool(v))) = self.get(sec, key) {
            *target = *v;
        }
    }

    fn floats(&self, sec: &str, key: &str) -> Option<Vec<f64>> {
        match self.get(sec, key) {
            Some((_, Value::Floats(v))) => Some(v.clone()),
            _ => None,
        }
    }

    fn text<T>(&self, sec: &str, key: &str, target: &mut T, parse: impl Fn(&str) -> std::result::Result<T, String>) -> Result<()> {
        if let Some((line, Value::Text(s))) = self.get(sec, key) {
            *target = parse(s).map_err(|m| Error::Config { line: *line, message: format!("key '{key}': {m}") })?;
        }
        Ok(())
    }

    fn line(&self, sec: &str, key: &str) -> usize {
        self.get(sec, key).map_or(0, |(l, _)| *l)
    }
}

impl ExperimentConfig {
    pub fn from_ini_str(text: &str) -> Result<Self> {
        let entries = parse_entries(text)?;
        let r = Reader { entries: &entries };
        let mut c = Self::default();

        let s = &mut c.system;
        r.text("system", "geometry", &mut s.geometry, |v| v.parse::<Geometry>().map_err(|e| e.to_string()))?;
        r.float("system", "field_tesla", &mut s.field_tesla);
        r.float("system", "electron_g_inplane", &mut s.g.electron_inplane);
        r.float("system", "hole_g_inplane", &mut s.g.hole_inplane);
        r.float("system", "electron_g_longitudinal", &mut s.g.electron_longitudinal);
        r.float("system", "hole_g_longitudinal", &mut s.g.hole_longitudinal);
        r.float("system", "impurity", &mut s.impurity);
        r.float("system", "lifetime_linewidth_ghz", &mut s.lifetime_linewidth_ghz);
        if let Some(v) = r.floats("system", "branching_a") {
            s.branching[0] = [v[0], v[1]];
        }
        if let Some(v) = r.floats("system", "branching_b") {
            s.branching[1] = [v[0], v[1]];
        }
        r.float("system", "kappa_per_us", &mut s.kappa_per_us);
        r.float("system", "line_fwhm_ghz", &mut s.line_fwhm_ghz);
        r.float("system", "dephasing_rate", &mut s.dephasing_rate);

        let p = &mut c.pulses;
        r.float("pulses", "rotation_power_uw", &mut p.rotation_power_uw);
        r.float("pulses", "power_coefficient", &mut p.power_coefficient);
        r.float("pulses", "rotation_fwhm_ps", &mut p.rotation_fwhm_ps);
        r.float("pulses", "rotation_detuning_thz", &mut p.rotation_detuning_thz);
        r.text("pulses", "rotation_helicity", &mut p.rotation_helicity, |v| match v {
            "plus" => Ok(Helicity::Plus),
            "minus" => Ok(Helicity::Minus),
            other => Err(format!("expected plus or minus, got '{other}'")),
        })?;
        r.float("pulses", "resonant_rabi", &mut p.resonant_rabi);
        r.float("pulses", "init_duration_ns", &mut p.init_duration_ns);
        r.float("pulses", "readout_duration_ns", &mut p.readout_duration_ns);
        r.float("pulses", "lead_in_ns", &mut p.lead_in_ns);
        r.float("pulses", "lead_out_ns", &mut p.lead_out_ns);
        r.float("pulses", "resonant_dt_ns", &mut p.resonant_dt_ns);
        r.float("pulses", "rotation_dt_ns", &mut p.rotation_dt_ns);

        r.float("overhauser", "t2_star_ns", &mut c.overhauser.t2_star_ns);
        if let Some(v) = r.int("overhauser", "seed") {
            c.overhauser.seed = v;
        }
        if let Some(v) = r.int("overhauser", "ensemble_size") {
            c.overhauser.ensemble_size = v as usize;
        }

        let se = &mut c.side_effects;
        r.bool("side_effects", "enabled", &mut se.enabled);
        r.float("side_effects", "trion_excitation_prob", &mut se.trion_excitation_prob);
        r.float("side_effects", "added_spinflip_per_us", &mut se.added_spinflip_per_us);
        r.float("side_effects", "repump_broadening_factor", &mut se.repump_broadening_factor);

        let ro = &mut c.readout;
        r.float("readout", "collection_efficiency", &mut ro.collection_efficiency);
        r.float("readout", "window_start_ns", &mut ro.window_start_ns);
        r.float("readout", "window_end_ns", &mut ro.window_end_ns);
        r.float("readout", "background", &mut ro.background);

        let sc = &mut c.scan;
        r.float("scan", "tau_start_ns", &mut sc.tau_start_ns);
        r.float("scan", "tau_stop_ns", &mut sc.tau_stop_ns);
        if let Some(v) = r.int("scan", "tau_points") {
            sc.tau_points = v as usize;
        }
        r.text("scan", "mode", &mut sc.mode, |v| v.parse::<RamseyMode>().map_err(|e| e.to_string()))?;
        r.float("scan", "noise_fraction", &mut sc.noise_fraction);
        r.bool("scan", "allow_large_runs", &mut sc.allow_large_runs);
        r.float("scan", "grid_step_deg", &mut sc.grid_step_deg);
        r.text("scan", "chain", &mut sc.chain, |v| match v {
            "hwp_qwp" => Ok(OpticalChain::HalfThenQuarter),
            "qwp_hwp" => Ok(OpticalChain::QuarterThenHalf),
            other => Err(format!("expected hwp_qwp or qwp_hwp, got '{other}'")),
        })?;
        if let Some(v) = r.floats("scan", "transfer") {
            sc.transfer = JonesMatrix::from_entries(C64::new(v[0], v[1]), C64::new(v[2], v[3]), C64::new(v[4], v[5]), C64::new(v[6], v[7]));
        }
        if let Some(v) = r.floats("scan", "input_polarization") {
            sc.input_polarization = JonesVector::new(C64::new(v[0], v[1]), C64::new(v[2], v[3]));
        }

        r.float("pumping", "duration_ns", &mut c.pumping.duration_ns);
        r.float("pumping", "dt_ns", &mut c.pumping.dt_ns);
        r.bool("pumping", "with_rotation_laser", &mut c.pumping.with_rotation_laser);

        r.float("calibration", "target_angle", &mut c.calibration.target_angle);
        r.bool("calibration", "full_integration", &mut c.calibration.full_integration);

        r.bool("fit", "subtract_background", &mut c.fit.subtract_background);
        r.bool("fit", "free_exponent", &mut c.fit.free_exponent);
        if let Some(v) = r.int("fit", "max_iter") {
            c.fit.max_iter = v as usize;
        }
        r.float("fit", "tol", &mut c.fit.tol);

        r.bool("output", "svg", &mut c.output.svg);

        c.validate_with(|sec, key| r.line(sec, key))?;
        Ok(c)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_ini_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with(|_, _| 0)
    }

    fn validate_with(&self, line: impl Fn(&str, &str) -> usize) -> Result<()> {
        let fail = |sec: &str, key: &str, msg: String| Err(Error::Config { line: line(sec, key), message: format!("key '{key}' in [{sec}]: {msg}") });
        let positive = [
            ("system", "lifetime_linewidth_ghz", self.system.lifetime_linewidth_ghz),
            ("system", "line_fwhm_ghz", self.system.line_fwhm_ghz),
            ("pulses", "power_coefficient", self.pulses.power_coefficient),
            ("pulses", "rotation_fwhm_ps", self.pulses.rotation_fwhm_ps),
            ("pulses", "init_duration_ns", self.pulses.init_duration_ns),
            ("pulses", "readout_duration_ns", self.pulses.readout_duration_ns),
            ("pulses", "lead_in_ns", self.pulses.lead_in_ns),
            ("pulses", "lead_out_ns", self.pulses.lead_out_ns),
            ("pulses", "resonant_dt_ns", self.pulses.resonant_dt_ns),
            ("pulses", "rotation_dt_ns", self.pulses.rotation_dt_ns),
            ("overhauser", "t2_star_ns", self.overhauser.t2_star_ns),
            ("scan", "grid_step_deg", self.scan.grid_step_deg),
            ("pumping", "duration_ns", self.pumping.duration_ns),
            ("pumping", "dt_ns", self.pumping.dt_ns),
            ("fit", "tol", self.fit.tol),
        ];
        for (sec, key, v) in positive {
            if !(v > 0.0) {
                return fail(sec, key, format!("must be positive, got {v}"));
            }
        }
        let non_negative = [
            ("system", "field_tesla", self.system.field_tesla),
            ("system", "kappa_per_us", self.system.kappa_per_us),
            ("system", "dephasing_rate", self.system.dephasing_rate),
            ("pulses", "rotation_power_uw", self.pulses.rotation_power_uw),
            ("pulses", "resonant_rabi", self.pulses.resonant_rabi),
            ("side_effects", "added_spinflip_per_us", self.side_effects.added_spinflip_per_us),
            ("readout", "background", self.readout.background),
            ("scan", "noise_fraction", self.scan.noise_fraction),
            ("scan", "tau_start_ns", self.scan.tau_start_ns),
            ("calibration", "target_angle", self.calibration.target_angle),
        ];
        for (sec, key, v) in non_negative {
            if !(v >= 0.0) {
                return fail(sec, key, format!("must be non-negative, got {v}"));
            }
        }
        if !(0.0..0.5).contains(&self.system.impurity) {
            return fail("system", "impurity", format!("must lie in [0, 0.5), got {}", self.system.impurity));
        }
        if let Err(e) = self.system.g.validate() {
            return fail("system", "electron_g_inplane", e.to_string());
        }
        for (k, row) in ["branching_a", "branching_b"].iter().zip(&self.system.branching) {
            if row.iter().any(|&b| b < 0.0) || (row[0] + row[1] - 1.0).abs() > 1e-12 {
                return fail("system", k, format!("fractions must be non-negative and sum to 1, got {row:?}"));
            }
        }
        if self.pulses.rotation_detuning_thz == 0.0 {
            return fail("pulses", "rotation_detuning_thz", "must be nonzero".into());
        }
        if self.overhauser.ensemble_size == 0 {
            return fail("overhauser", "ensemble_size", "must be at least 1".into());
        }
        let se = &self.side_effects;
        if !(0.0..=1.0).contains(&se.trion_excitation_prob) {
            return fail("side_effects", "trion_excitation_prob", format!("must lie in [0, 1], got {}", se.trion_excitation_prob));
        }
        if !(se.repump_broadening_factor >= 1.0) {
            return fail("side_effects", "repump_broadening_factor", format!("must be at least 1, got {}", se.repump_broadening_factor));
        }
        let ro = &self.readout;
        if !(0.0..=1.0).contains(&ro.collection_efficiency) {
            return fail("readout", "collection_efficiency", format!("must lie in [0, 1], got {}", ro.collection_efficiency));
        }
        if !(ro.window_start_ns >= 0.0 && ro.window_end_ns > ro.window_start_ns && ro.window_end_ns <= self.pulses.readout_duration_ns) {
            return fail("readout", "window_end_ns", format!("window must lie inside the {} ns readout pulse", self.pulses.readout_duration_ns));
        }
        if self.scan.tau_points == 0 {
            return fail("scan", "tau_points", "must be at least 1".into());
        }
        if self.scan.tau_points > 1 && !(self.scan.tau_stop_ns > self.scan.tau_start_ns) {
            return fail("scan", "tau_stop_ns", "must exceed tau_start_ns".into());
        }
        let n = 180.0 / self.scan.grid_step_deg;
        if (n - n.round()).abs() > 1e-9 {
            return fail("scan", "grid_step_deg", format!("{} does not divide 180", self.scan.grid_step_deg));
        }
        if self.pulses.lead_in_ns <= 2.0 * self.pulses.rotation_fwhm_ps * 1e-3 {
            return fail("pulses", "lead_in_ns", "must exceed half the rotation window".into());
        }
        Ok(())
    }

    /// Full configuration with every key, suitable for re-running.
    pub fn to_ini_string(&self) -> String {
        let s = &self.system;
        let p = &self.pulses;
        let se = &self.side_effects;
        let ro = &self.readout;
        let sc = &self.scan;
        let t = sc.transfer.0;
        let e = sc.input_polarization;
        let b = |v: bool| if v { "true" } else { "false" };
        let mut out = String::new();
        let mut push = |line: String| {
            out.push_str(&line);
            out.push('\n');
        };
        push("[system]".into());
        push(format!("geometry = {}", s.geometry));
        push(format!("field_tesla = {}", s.field_tesla));
        push(format!("electron_g_inplane = {}", s.g.electron_inplane));
        push(format!("hole_g_inplane = {}", s.g.hole_inplane));
        push("# longitudinal g-factors are placeholders".into());
        push(format!("electron_g_longitudinal = {}", s.g.electron_longitudinal));
        push(format!("hole_g_longitudinal = {}", s.g.hole_longitudinal));
        push(format!("impurity = {}", s.impurity));
        push(format!("lifetime_linewidth_ghz = {}", s.lifetime_linewidth_ghz));
        push(format!("branching_a = {}, {}", s.branching[0][0], s.branching[0][1]));
        push(format!("branching_b = {}, {}", s.branching[1][0], s.branching[1][1]));
        push(format!("kappa_per_us = {}", s.kappa_per_us));
        push(format!("line_fwhm_ghz = {}", s.line_fwhm_ghz));
        push(format!("dephasing_rate = {}", s.dephasing_rate));
        push(String::new());
        push("[pulses]".into());
        push(format!("rotation_power_uw = {}", p.rotation_power_uw));
        push(format!("power_coefficient = {}", p.power_coefficient));
        push(format!("rotation_fwhm_ps = {}", p.rotation_fwhm_ps));
        push(format!("rotation_detuning_thz = {}", p.rotation_detuning_thz));
        push(format!("rotation_helicity = {}", if p.rotation_helicity == Helicity::Plus { "plus" } else { "minus" }));
        push(format!("resonant_rabi = {}", p.resonant_rabi));
        push(format!("init_duration_ns = {}", p.init_duration_ns));
        push(format!("readout_duration_ns = {}", p.readout_duration_ns));
        push(format!("lead_in_ns = {}", p.lead_in_ns));
        push(format!("lead_out_ns = {}", p.lead_out_ns));
        push(format!("resonant_dt_ns = {}", p.resonant_dt_ns));
        push(format!("rotation_dt_ns = {}", p.rotation_dt_ns));
        push(String::new());
        push("[overhauser]".into());
        push(format!("t2_star_ns = {}", self.overhauser.t2_star_ns));
        push(format!("seed = {}", self.overhauser.seed));
        push(format!("ensemble_size = {}", self.overhauser.ensemble_size));
        push(String::new());
        push("[side_effects]".into());
        push(format!("enabled = {}", b(se.enabled)));
        push(format!("trion_excitation_prob = {}", se.trion_excitation_prob));
        push(format!("added_spinflip_per_us = {}", se.added_spinflip_per_us));
        push(format!("repump_broadening_factor = {}", se.repump_broadening_factor));
        push(String::new());
        push("[readout]".into());
        push(format!("collection_efficiency = {}", ro.collection_efficiency));
        push(format!("window_start_ns = {}", ro.window_start_ns));
        push(format!("window_end_ns = {}", ro.window_end_ns));
        push(format!("background = {}", ro.background));
        push(String::new());
        push("[scan]".into());
        push(format!("tau_start_ns = {}", sc.tau_start_ns));
        push(format!("tau_stop_ns = {}", sc.tau_stop_ns));
        push(format!("tau_points = {}", sc.tau_points));
        push(format!("mode = {}", sc.mode));
        push(format!("noise_fraction = {}", sc.noise_fraction));
        push(format!("allow_large_runs = {}", b(sc.allow_large_runs)));
        push(format!("grid_step_deg = {}", sc.grid_step_deg));
        push(format!("chain = {}", sc.chain));
        push(format!(
            "transfer = {}, {}, {}, {}, {}, {}, {}, {}",
            t[(0, 0)].re,
            t[(0, 0)].im,
            t[(0, 1)].re,
            t[(0, 1)].im,
            t[(1, 0)].re,
            t[(1, 0)].im,
            t[(1, 1)].re,
            t[(1, 1)].im
        ));
        push(format!("input_polarization = {}, {}, {}, {}", e.ex.re, e.ex.im, e.ey.re, e.ey.im));
        push(String::new());
        push("[pumping]".into());
        push(format!("duration_ns = {}", self.pumping.duration_ns));
        push(format!("dt_ns = {}", self.pumping.dt_ns));
        push(format!("with_rotation_laser = {}", b(self.pumping.with_rotation_laser)));
        push(String::new());
        push("[calibration]".into());
        push(format!("target_angle = {}", self.calibration.target_angle));
        push(format!("full_integration = {}", b(self.calibration.full_integration)));
        push(String::new());
        push("[fit]".into());
        push(format!("subtract_background = {}", b(self.fit.subtract_background)));
        push(format!("free_exponent = {}", b(self.fit.free_exponent)));
        push(format!("max_iter = {}", self.fit.max_iter));
        push(format!("tol = {}", self.fit.tol));
        push(String::new());
        push("[output]".into());
        push(format!("svg = {}", b(self.output.svg)));
        out
    }

    pub fn diagram(&self) -> Result<LevelDiagram> {
        build_level_diagram(self.system.geometry, self.system.field_tesla, self.system.g, self.system.impurity)
    }

    pub fn rates(&self) -> RateSet {
        RateSet {
            gamma_decay: TAU * self.system.lifetime_linewidth_ghz,
            branching: self.system.branching,
            kappa_spinflip: self.system.kappa_per_us * 1e-3,
            gamma_repump: 0.0,
            gamma_spin_dephasing: self.system.dephasing_rate,
        }
    }

    pub fn side_effects(&self) -> RotationLaserSideEffects {
        if !self.side_effects.enabled {
            return RotationLaserSideEffects::none();
        }
        RotationLaserSideEffects {
            trion_excitation_prob: self.side_effects.trion_excitation_prob,
            added_spinflip_rate: self.side_effects.added_spinflip_per_us * 1e-3,
            repump_broadening_factor: self.side_effects.repump_broadening_factor,
        }
    }

    pub fn drive(&self) -> PumpingDrive {
        PumpingDrive {
            rabi: self.pulses.resonant_rabi,
            targets: default_readout_targets(),
            line_fwhm: TAU * self.system.line_fwhm_ghz,
        }
    }

    pub fn rotation_angle(&self) -> Result<f64> {
        angle_from_power(self.pulses.rotation_power_uw, self.pulses.power_coefficient)
    }

    pub fn rotation_pulse(&self) -> Result<RotationPulse> {
        self.rotation_pulse_for_angle(self.rotation_angle()?)
    }

    /// Rotation pulse whose realized angle on this config's diagram is `angle`.
    pub fn rotation_pulse_for_angle(&self, angle: f64) -> Result<RotationPulse> {
        let fwhm = self.pulses.rotation_fwhm_ps * 1e-3;
        let detuning = TAU * self.pulses.rotation_detuning_thz * 1e3;
        let drive_dipole = match self.pulses.rotation_helicity {
            Helicity::Plus => JonesVector::sigma_plus(),
            Helicity::Minus => JonesVector::sigma_minus(),
        };
        let peak_rabi = peak_rabi_for_rotation(angle, fwhm, detuning, &drive_dipole, &self.diagram()?)?;
        Ok(RotationPulse { peak_rabi, fwhm, detuning, drive_dipole })
    }

    pub fn taus(&self) -> Vec<f64> {
        let sc = &self.scan;
        if sc.tau_points == 1 {
            return vec![sc.tau_start_ns];
        }
        (0..sc.tau_points)
            .map(|i| sc.tau_start_ns + (sc.tau_stop_ns - sc.tau_start_ns) * i as f64 / (sc.tau_points - 1) as f64)
            .collect()
    }

    pub fn readout_model(&self) -> ReadoutModel {
        ReadoutModel {
            collection_efficiency: self.readout.collection_efficiency,
            window: (self.readout.window_start_ns, self.readout.window_end_ns),
            background: self.readout.background,
        }
    }

    pub fn ramsey_config(&self) -> Result<RamseyConfig> {
        let diagram = self.diagram()?;
        let p = &self.pulses;
        Ok(RamseyConfig {
            rates: self.rates(),
            drive: self.drive(),
            layout: RamseyLayout {
                init_duration: p.init_duration_ns,
                readout_duration: p.readout_duration_ns,
                resonant_rabi: p.resonant_rabi,
                lead_in: p.lead_in_ns,
                lead_out: p.lead_out_ns,
                targets: default_readout_targets(),
            },
            rotation: self.rotation_pulse()?,
            taus: self.taus(),
            mode: self.scan.mode,
            ensemble_size: self.overhauser.ensemble_size,
            overhauser: OverhauserModel::from_t2_star(self.overhauser.t2_star_ns, self.overhauser.seed)?,
            side_effects: self.side_effects(),
            readout: self.readout_model(),
            initial: InitialState::Pumped,
            resonant_dt: p.resonant_dt_ns,
            rotation_dt: p.rotation_dt_ns,
            allow_large_runs: self.scan.allow_large_runs,
            diagram,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = ExperimentConfig::default();
        let text = c.to_ini_string();
        let back = ExperimentConfig::from_ini_str(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_ini_string(), text);
    }

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(ExperimentConfig::from_ini_str("# nothing\n").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_key_is_named_with_line() {
        let err = ExperimentConfig::from_ini_str("[system]\nfield_tesla = 1\nfeild = 2\n").unwrap_err();
        match err {
            Error::Config { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("feild"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn schema_violations() {
        let cases = [
            ("[nowhere]\n", 1),
            ("field_tesla = 1\n", 1),
            ("[system]\nfield_tesla = abc\n", 2),
            ("[system]\nfield_tesla = -1\n", 2),
            ("[system]\nimpurity = 0.6\n", 2),
            ("[scan]\n\ngrid_step_deg = 7\n", 3),
            ("[system]\nfield_tesla = 1\nfield_tesla = 2\n", 3),
            ("[side_effects]\nenabled = maybe\n", 2),
        ];
        for (text, want) in cases {
            match ExperimentConfig::from_ini_str(text) {
                Err(Error::Config { line, .. }) => assert_eq!(line, want, "{text}"),
                other => panic!("{text}: unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn inline_comments_and_derived_values() {
        let c = ExperimentConfig::from_ini_str("[pulses]\nrotation_power_uw = 100 # π pulse\n").unwrap();
        assert!((c.rotation_angle().unwrap() - PI).abs() < 1e-12);
        let r = c.rates();
        assert!((r.kappa_spinflip - 0.2e-3).abs() < 1e-18);
        assert!((c.side_effects().added_spinflip_rate - 0.09).abs() < 1e-15);
        assert_eq!(c.taus().len(), 400);
    }
}
