//! Command-line front end. `run` returns the process exit code:
//! 0 on success, 1 for bad input, 2 when a fit does not converge or an
//! integration goes numerically unstable.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::ExperimentConfig;
use crate::error::Error;
use crate::experiments::{
    add_fringe_noise, contrast_over_first_period, rotation_fidelity, run_optical_pumping, run_ramsey, FidelityMode,
};
use crate::fitting::{
    extract_g_factor, fit_gauss_cosine, fit_rabi_power, DataSeries, FitResult, GaussCosine, GaussCosineFitOptions, LmOptions,
    Model, MODEL_NAMES,
};
use crate::physics::{GROUND_HIGH, GROUND_LOW};
use crate::polarization::{contrast_scan, far_field, optimal_setting, ContrastTarget};
use crate::pulses::{calibrate_power, effective_rotation};
use crate::svg::{heatmap, line_plot, Series};

#[derive(Parser, Debug)]
#[command(name = "qdspin", version, about = "Quantum-dot spin control simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// INI configuration file; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides [overhauser] seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Overrides [output] svg.
    #[arg(long, value_enum)]
    pub svg: Option<OnOff>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Ensemble Ramsey fringe with fit.
    SimulateRamsey(Common),
    /// Resonant optical pumping from an unpolarized spin.
    SimulatePumping(Common),
    /// Waveplate scan of the circular excitation contrast.
    ScanPolarization(Common),
    /// Power for a target rotation angle and its fidelity.
    CalibrateRotation(Common),
    /// Fit a model to a two- or three-column CSV.
    Fit(FitArgs),
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: Common,
    /// CSV with columns x, y and optionally sigma.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "gauss_cosine")]
    pub model: String,
}

/// Error with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NonHermitian { .. } | Error::Positivity { .. } | Error::Singular { .. } => 2,
            _ => 1,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

fn fit_failure(e: Error) -> Failure {
    let mut f = Failure::from(e);
    f.code = 2;
    f.message = format!("fit failed: {}", f.message);
    f
}

type CmdResult = std::result::Result<(), Failure>;

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(cmd: Command) -> CmdResult {
    let common = match &cmd {
        Command::SimulateRamsey(c) | Command::SimulatePumping(c) | Command::ScanPolarization(c) | Command::CalibrateRotation(c) => c,
        Command::Fit(f) => &f.common,
    }
    .clone();
    let pool = match common.threads {
        Some(0) => return Err(Failure { code: 1, message: "--threads must be at least 1".into() }),
        Some(n) => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Failure { code: 1, message: format!("thread pool: {e}") })?,
        ),
        None => None,
    };
    let go = move || match cmd {
        Command::SimulateRamsey(c) => simulate_ramsey(&c),
        Command::SimulatePumping(c) => simulate_pumping(&c),
        Command::ScanPolarization(c) => scan_polarization(&c),
        Command::CalibrateRotation(c) => calibrate_rotation(&c),
        Command::Fit(f) => fit(&f),
    };
    match pool {
        Some(p) => p.install(go),
        None => go(),
    }
}

fn load(common: &Common) -> std::result::Result<ExperimentConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_path(path).map_err(|e| Failure {
            code: 1,
            message: format!("{}: {e}", path.display()),
        })?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.overhauser.seed = seed;
    }
    if let Some(svg) = common.svg {
        cfg.output.svg = svg == OnOff::On;
    }
    fs::create_dir_all(&common.out)?;
    fs::write(common.out.join("config.ini"), cfg.to_ini_string())?;
    Ok(cfg)
}

fn create(dir: &Path, name: &str) -> std::io::Result<fs::File> {
    fs::File::create(dir.join(name))
}

fn lm_options(cfg: &ExperimentConfig) -> LmOptions {
    LmOptions { max_iter: cfg.fit.max_iter, tol: cfg.fit.tol, ..LmOptions::default() }
}

fn simulate_ramsey(common: &Common) -> CmdResult {
    let cfg = load(common)?;
    let rc = cfg.ramsey_config()?;
    let mut trace = run_ramsey(&rc)?;
    add_fringe_noise(&mut trace, cfg.scan.noise_fraction, cfg.overhauser.seed)?;
    trace.write_csv(create(&common.out, "trace.csv")?)?;

    let opts = GaussCosineFitOptions { subtract_background: cfg.fit.subtract_background, free_exponent: cfg.fit.free_exponent };
    let fitted = trace.data_series().and_then(|d| fit_gauss_cosine(&d, opts, &lm_options(&cfg)));
    let mut txt = create(&common.out, "fit.txt")?;
    writeln!(txt, "mode = {}", trace.mode)?;
    writeln!(txt, "ensemble_size = {}", trace.ensemble_size)?;
    writeln!(txt, "seed = {}", cfg.overhauser.seed)?;
    writeln!(txt, "field_tesla = {}", cfg.system.field_tesla)?;
    writeln!(txt, "init_fidelity = {:.6}", trace.init_fidelity)?;
    let fit = match fitted {
        Ok(f) => f,
        Err(e) => {
            writeln!(txt, "status = failed")?;
            writeln!(txt, "reason = {e}")?;
            return Err(fit_failure(e));
        }
    };
    fit.write_txt(&mut txt)?;
    let omega = fit.get("angular_frequency").unwrap_or(f64::NAN);
    let freq_ghz = omega / std::f64::consts::TAU;
    if let Ok(g) = extract_g_factor(freq_ghz, cfg.system.field_tesla) {
        writeln!(txt, "g_factor = {g:.6}")?;
    }
    let contrast = contrast_over_first_period(&trace.delays, &trace.signal, omega).ok();
    if let Some(c) = contrast {
        writeln!(txt, "contrast = {c:.6}")?;
    }
    writeln!(txt, "status = {}", if fit.converged { "converged" } else { "not_converged" })?;

    if cfg.output.svg {
        write_fringe_svg(&common.out, &trace.delays, &trace.signal, &fit)?;
    }
    println!(
        "ramsey: {} delays, init fidelity {:.4}, frequency {:.4} GHz, T2* {:.3} ns, contrast {}",
        trace.delays.len(),
        trace.init_fidelity,
        freq_ghz,
        fit.get("t2_star").unwrap_or(f64::NAN),
        contrast.map_or("n/a".to_string(), |c| format!("{c:.4}"))
    );
    if !fit.converged {
        return Err(Failure { code: 2, message: format!("fit did not converge after {} iterations", fit.iterations) });
    }
    Ok(())
}

fn write_fringe_svg(dir: &Path, x: &[f64], y: &[f64], fit: &FitResult) -> std::io::Result<()> {
    let (x0, x1) = (x.first().copied().unwrap_or(0.0), x.last().copied().unwrap_or(1.0));
    let fx: Vec<f64> = (0..=1000).map(|i| x0 + (x1 - x0) * i as f64 / 1000.0).collect();
    let model = GaussCosine { free_exponent: fit.params.len() == 6 };
    let fy: Vec<f64> = fx.iter().map(|&t| model.eval(&fit.params, t)).collect();
    let svg = line_plot(
        "Ramsey fringe",
        "delay (ns)",
        "signal",
        &[Series { x, y, color: "#1f4e9c", label: "simulated" }, Series { x: &fx, y: &fy, color: "#c0392b", label: "fit" }],
    );
    fs::write(dir.join("fringe.svg"), svg)
}

fn simulate_pumping(common: &Common) -> CmdResult {
    let cfg = load(common)?;
    let diagram = cfg.diagram()?;
    let drive = cfg.drive();
    let side = cfg.side_effects();
    let rates = drive.rates(&cfg.rates(), &diagram, cfg.pumping.with_rotation_laser.then_some(&side));
    let readout = cfg.readout_model();
    let res = run_optical_pumping(&diagram, &rates, &drive, &readout, cfg.pumping.duration_ns, cfg.pumping.dt_ns)?;
    res.trajectory.write_csv(create(&common.out, "trajectory.csv")?)?;

    let mut txt = create(&common.out, "fidelity.txt")?;
    writeln!(txt, "init_fidelity = {:.6}", res.init_fidelity)?;
    writeln!(txt, "counts = {:.6}", res.counts)?;
    writeln!(txt, "pumping_rate_per_ns = {:.6}", res.pumping_rate)?;
    writeln!(txt, "rabi_resolved = {}", res.rabi_resolved)?;
    writeln!(txt, "resonant_rabi = {}", drive.rabi)?;
    writeln!(txt, "with_rotation_laser = {}", cfg.pumping.with_rotation_laser)?;
    writeln!(txt, "repump_rate_per_ns = {:.6}", rates.gamma_repump)?;
    writeln!(txt, "duration_ns = {}", cfg.pumping.duration_ns)?;
    writeln!(txt, "renormalizations = {}", res.trajectory.renormalizations)?;
    writeln!(txt, "max_trace_drift = {:.3e}", res.trajectory.max_trace_drift)?;
    writeln!(txt, "min_eigenvalue = {:.3e}", res.trajectory.min_eigenvalue)?;

    if cfg.output.svg {
        let t = &res.trajectory.times;
        let lo: Vec<f64> = res.trajectory.states.iter().map(|s| s.population(GROUND_LOW)).collect();
        let hi: Vec<f64> = res.trajectory.states.iter().map(|s| s.population(GROUND_HIGH)).collect();
        let svg = line_plot(
            "Optical pumping",
            "time (ns)",
            "population",
            &[
                Series { x: t, y: &lo, color: "#1f4e9c", label: "driven ground" },
                Series { x: t, y: &hi, color: "#c0392b", label: "dark ground" },
            ],
        );
        fs::write(common.out.join("pumping.svg"), svg)?;
    }
    println!("pumping: init fidelity {:.4}, counts {:.4}", res.init_fidelity, res.counts);
    Ok(())
}

fn scan_polarization(common: &Common) -> CmdResult {
    let cfg = load(common)?;
    let sc = &cfg.scan;
    let map = contrast_scan(&sc.input_polarization, &sc.transfer, cfg.system.impurity, sc.grid_step_deg.to_radians(), sc.chain)?;
    map.write_csv(create(&common.out, "contrast.csv")?)?;
    let mut txt = create(&common.out, "optimum.txt")?;
    for (name, target) in [("sigma_plus", ContrastTarget::MaximizeRplus), ("sigma_minus", ContrastTarget::MaximizeRminus)] {
        let (setting, ratio) = optimal_setting(&map, target)?;
        let far = far_field(&sc.input_polarization, &setting, sc.chain).normalized();
        let local = sc.transfer.apply(&far).normalized();
        let stokes = far.stokes();
        writeln!(txt, "[{name}]")?;
        writeln!(txt, "hwp_deg = {:.6}", setting.hwp().to_degrees())?;
        writeln!(txt, "qwp_deg = {:.6}", setting.qwp().to_degrees())?;
        writeln!(txt, "ratio = {ratio:.6e}")?;
        writeln!(txt, "far_field = {:?}", far.classify())?;
        writeln!(txt, "far_field_stokes = {:.6}, {:.6}, {:.6}, {:.6}", stokes[0], stokes[1], stokes[2], stokes[3])?;
        writeln!(txt, "local_field = {:?}", local.classify())?;
        writeln!(txt)?;
        println!("{name}: hwp {:.2} deg, qwp {:.2} deg, ratio {ratio:.4e}", setting.hwp().to_degrees(), setting.qwp().to_degrees());
    }
    if cfg.output.svg {
        let vals: Vec<f64> = map.entries.iter().map(|e| e.ratio.max(1e-300).log10()).collect();
        let svg = heatmap("log10 R+/R-", "half-wave plate angle", "quarter-wave plate angle", map.n_per_axis, &vals);
        fs::write(common.out.join("heatmap.svg"), svg)?;
    }
    Ok(())
}

fn calibrate_rotation(common: &Common) -> CmdResult {
    let cfg = load(common)?;
    let target = cfg.calibration.target_angle;
    let power = calibrate_power(target, cfg.pulses.power_coefficient)?;
    let pulse = cfg.rotation_pulse_for_angle(target)?;
    let diagram = cfg.diagram()?;
    let rates = cfg.rates();
    let side = cfg.side_effects();
    let rot = effective_rotation(&pulse, &diagram)?;
    let f_eff = rotation_fidelity(&pulse, &diagram, &rates, &side, FidelityMode::Effective)?;

    let mut txt = create(&common.out, "calibration.txt")?;
    writeln!(txt, "target_angle = {target:.10}")?;
    writeln!(txt, "power_uw = {power:.10}")?;
    writeln!(txt, "power_coefficient = {}", cfg.pulses.power_coefficient)?;
    writeln!(txt, "peak_rabi = {:.10}", pulse.peak_rabi)?;
    writeln!(txt, "fwhm_ns = {}", pulse.fwhm)?;
    writeln!(txt, "detuning = {}", pulse.detuning)?;
    writeln!(txt, "axis = {:.6}, {:.6}, {:.6}", rot.axis[0], rot.axis[1], rot.axis[2])?;
    writeln!(txt, "trion_excitation_prob = {}", side.trion_excitation_prob)?;
    writeln!(txt, "fidelity_effective = {f_eff:.6}")?;
    if cfg.calibration.full_integration {
        let f_full = rotation_fidelity(&pulse, &diagram, &rates, &side, FidelityMode::Full { dt: cfg.pulses.rotation_dt_ns })?;
        writeln!(txt, "fidelity_full = {f_full:.6}")?;
        println!("fidelity (full integration) {f_full:.4}");
    }

    let mut curve = csv::Writer::from_writer(create(&common.out, "rabi_curve.csv")?);
    curve.write_record(["power_uw", "angle_rad", "flip_probability"]).map_err(Error::from)?;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for i in 0..=200 {
        let p = 4.0 * power.max(1e-12) * i as f64 / 200.0;
        let theta = cfg.pulses.power_coefficient * p.sqrt();
        let flip = (theta / 2.0).sin().powi(2);
        curve.write_record([p.to_string(), theta.to_string(), flip.to_string()]).map_err(Error::from)?;
        xs.push(p);
        ys.push(flip);
    }
    curve.flush()?;
    if cfg.output.svg {
        let svg = line_plot("Rotation vs power", "mean power (uW)", "flip probability", &[Series { x: &xs, y: &ys, color: "#1f4e9c", label: "effective" }]);
        fs::write(common.out.join("rabi_curve.svg"), svg)?;
    }
    println!("calibration: {target:.4} rad needs {power:.4} uW, fidelity {f_eff:.4}");
    Ok(())
}

fn fit(args: &FitArgs) -> CmdResult {
    if !MODEL_NAMES.contains(&args.model.as_str()) {
        return Err(Failure { code: 1, message: format!("unknown model '{}'; valid models: {}", args.model, MODEL_NAMES.join(", ")) });
    }
    let cfg = load(&args.common)?;
    let data = DataSeries::read_csv(&args.data).map_err(|e| Failure { code: 1, message: format!("{}: {e}", args.data.display()) })?;
    let lm = lm_options(&cfg);
    let res = match args.model.as_str() {
        "gauss_cosine" => fit_gauss_cosine(
            &data,
            GaussCosineFitOptions { subtract_background: cfg.fit.subtract_background, free_exponent: cfg.fit.free_exponent },
            &lm,
        ),
        _ => fit_rabi_power(&data, &lm),
    }
    .map_err(fit_failure)?;
    let mut txt = create(&args.common.out, "fit.txt")?;
    res.write_txt(&mut txt)?;
    writeln!(txt, "status = {}", if res.converged { "converged" } else { "not_converged" })?;
    print!("{}", res.table());
    if res.model == "gauss_cosine" && cfg.output.svg {
        write_fringe_svg(&args.common.out, &data.x, &data.y, &res)?;
    }
    if !res.converged {
        return Err(Failure { code: 2, message: format!("fit did not converge after {} iterations", res.iterations) });
    }
    Ok(())
}
