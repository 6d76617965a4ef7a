//! Levenberg-Marquardt least squares and the fringe/calibration models.

use std::f64::consts::{PI, TAU};
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{domain, Error, Result};
use crate::physics::BOHR_MAGNETON_GHZ_PER_TESLA;

#[derive(Clone, Debug, PartialEq)]
pub struct DataSeries {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub sigma: Option<Vec<f64>>,
}

impl DataSeries {
    pub fn new(x: Vec<f64>, y: Vec<f64>, sigma: Option<Vec<f64>>) -> Result<Self> {
        if x.len() != y.len() {
            return domain(format!("x has {} points but y has {}", x.len(), y.len()));
        }
        if let Some(s) = &sigma {
            if s.len() != x.len() {
                return domain("sigma length differs from x");
            }
            if let Some(i) = s.iter().position(|&v| !(v > 0.0)) {
                return Err(Error::Data { row: i + 2, message: format!("sigma must be positive, got {}", s[i]) });
            }
        }
        if let Some(i) = x.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::Data { row: i + 3, message: "x must be strictly increasing".into() });
        }
        if let Some(i) = x.iter().chain(&y).position(|v| !v.is_finite()) {
            return domain(format!("non-finite value at flat index {i}"));
        }
        Ok(Self { x, y, sigma })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Two or three numeric columns after a one-line header. Rows are numbered
    /// from 1 at the header.
    pub fn from_csv_reader<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(r);
        let ncols = rdr.headers()?.len();
        if !(2..=3).contains(&ncols) {
            return Err(Error::Data { row: 1, message: format!("expected 2 or 3 columns, header has {ncols}") });
        }
        let (mut x, mut y, mut s) = (Vec::new(), Vec::new(), Vec::new());
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 2;
            let rec = rec.map_err(|e| Error::Data { row, message: e.to_string() })?;
            if rec.len() != ncols {
                return Err(Error::Data { row, message: format!("expected {ncols} fields, found {}", rec.len()) });
            }
            let mut vals = [0.0f64; 3];
            for (k, f) in rec.iter().enumerate() {
                vals[k] = f.parse().map_err(|_| Error::Data { row, message: format!("not a number: '{f}'") })?;
                if !vals[k].is_finite() {
                    return Err(Error::Data { row, message: format!("non-finite value '{f}'") });
                }
            }
            x.push(vals[0]);
            y.push(vals[1]);
            if ncols == 3 {
                s.push(vals[2]);
            }
        }
        if x.is_empty() {
            return Err(Error::Data { row: 2, message: "no data rows".into() });
        }
        Self::new(x, y, (ncols == 3).then_some(s))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, w: W, x_name: &str, y_name: &str) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        match &self.sigma {
            Some(s) => {
                out.write_record([x_name, y_name, "sigma"])?;
                for ((x, y), s) in self.x.iter().zip(&self.y).zip(s) {
                    out.write_record([x.to_string(), y.to_string(), s.to_string()])?;
                }
            }
            None => {
                out.write_record([x_name, y_name])?;
                for (x, y) in self.x.iter().zip(&self.y) {
                    out.write_record([x.to_string(), y.to_string()])?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }

    fn mean(&self) -> f64 {
        self.y.iter().sum::<f64>() / self.y.len() as f64
    }

    pub fn mean_centered(&self) -> Self {
        let m = self.mean();
        Self { x: self.x.clone(), y: self.y.iter().map(|v| v - m).collect(), sigma: self.sigma.clone() }
    }
}

pub trait Model: Sync {
    fn name(&self) -> &str;
    fn param_names(&self) -> Vec<&'static str>;
    fn eval(&self, p: &[f64], x: f64) -> f64;
}

/// A·cos(ω τ + φ)·exp(−(τ/T2*)^n) + B with n = 2 unless the exponent is free.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct GaussCosine {
    pub free_exponent: bool,
}

pub fn model_gauss_cosine(p: &GaussCosineParams, tau: f64) -> f64 {
    p.amplitude * (p.angular_frequency * tau + p.phase).cos() * (-(tau / p.dephasing_time).powi(2)).exp() + p.offset
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussCosineParams {
    pub amplitude: f64,
    pub angular_frequency: f64,
    pub phase: f64,
    pub dephasing_time: f64,
    pub offset: f64,
}

impl GaussCosineParams {
    pub fn to_vec(&self) -> Vec<f64> {
        vec![self.amplitude, self.angular_frequency, self.phase, self.dephasing_time, self.offset]
    }

    pub fn from_slice(p: &[f64]) -> Self {
        Self { amplitude: p[0], angular_frequency: p[1], phase: p[2], dephasing_time: p[3], offset: p[4] }
    }

    pub fn frequency_ghz(&self) -> f64 {
        self.angular_frequency / TAU
    }
}

impl Model for GaussCosine {
    fn name(&self) -> &str {
        if self.free_exponent {
            "gauss_cosine_free_exponent"
        } else {
            "gauss_cosine"
        }
    }

    fn param_names(&self) -> Vec<&'static str> {
        let mut v = vec!["amplitude", "angular_frequency", "phase", "t2_star", "offset"];
        if self.free_exponent {
            v.push("exponent");
        }
        v
    }

    fn eval(&self, p: &[f64], x: f64) -> f64 {
        let n = if self.free_exponent { p[5] } else { 2.0 };
        p[0] * (p[1] * x + p[2]).cos() * (-(x / p[3]).abs().powf(n)).exp() + p[4]
    }
}

/// amplitude·sin²(a·√P/2).
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct RabiPower;

pub fn model_rabi_power(amplitude: f64, a: f64, power: f64) -> f64 {
    amplitude * (a * power.max(0.0).sqrt() / 2.0).sin().powi(2)
}

impl Model for RabiPower {
    fn name(&self) -> &str {
        "rabi_power"
    }

    fn param_names(&self) -> Vec<&'static str> {
        vec!["amplitude", "a"]
    }

    fn eval(&self, p: &[f64], x: f64) -> f64 {
        model_rabi_power(p[0], p[1], x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Linear;

impl Model for Linear {
    fn name(&self) -> &str {
        "linear"
    }

    fn param_names(&self) -> Vec<&'static str> {
        vec!["slope", "intercept"]
    }

    fn eval(&self, p: &[f64], x: f64) -> f64 {
        p[0] * x + p[1]
    }
}

pub const MODEL_NAMES: [&str; 2] = ["gauss_cosine", "rabi_power"];

#[derive(Clone, Debug, PartialEq)]
pub struct LmOptions {
    pub max_iter: usize,
    pub lambda0: f64,
    pub tol: f64,
    /// Indices of parameters held at their initial value.
    pub fixed: Vec<usize>,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self { max_iter: 500, lambda0: 1e-3, tol: 1e-10, fixed: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub model: String,
    pub names: Vec<String>,
    pub params: Vec<f64>,
    pub uncertainties: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub cost: f64,
    pub chi2_reduced: f64,
    pub converged: bool,
    pub iterations: usize,
    pub n_points: usize,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.params[i])
    }

    pub fn uncertainty(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.uncertainties[i])
    }

    pub fn write_txt<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "model = {}", self.model)?;
        writeln!(w, "converged = {}", self.converged)?;
        writeln!(w, "iterations = {}", self.iterations)?;
        writeln!(w, "n_points = {}", self.n_points)?;
        writeln!(w, "cost = {:e}", self.cost)?;
        writeln!(w, "chi2_reduced = {:e}", self.chi2_reduced)?;
        for ((n, p), u) in self.names.iter().zip(&self.params).zip(&self.uncertainties) {
            writeln!(w, "{n} = {p:.10e}")?;
            writeln!(w, "{n}_stderr = {u:.4e}")?;
        }
        if let (Some(w_l), Some(du)) = (self.get("angular_frequency"), self.uncertainty("angular_frequency")) {
            writeln!(w, "frequency_ghz = {:.6}", w_l / TAU)?;
            writeln!(w, "frequency_ghz_stderr = {:.6}", du / TAU)?;
        }
        Ok(())
    }

    pub fn csv_header(&self) -> Vec<String> {
        let mut h = vec!["model".to_string(), "converged".into(), "iterations".into(), "chi2_reduced".into()];
        for n in &self.names {
            h.push(n.clone());
            h.push(format!("{n}_stderr"));
        }
        h
    }

    pub fn csv_row(&self) -> Vec<String> {
        let mut r = vec![self.model.clone(), self.converged.to_string(), self.iterations.to_string(), self.chi2_reduced.to_string()];
        for (p, u) in self.params.iter().zip(&self.uncertainties) {
            r.push(p.to_string());
            r.push(u.to_string());
        }
        r
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(self.csv_header())?;
        out.write_record(self.csv_row())?;
        out.flush()?;
        Ok(())
    }

    /// Parameter table for terminal output.
    pub fn table(&self) -> String {
        let mut s = format!("{:<20} {:>18} {:>14}\n", "parameter", "value", "stderr");
        for ((n, p), u) in self.names.iter().zip(&self.params).zip(&self.uncertainties) {
            s.push_str(&format!("{n:<20} {p:>18.8e} {u:>14.4e}\n"));
        }
        s.push_str(&format!("chi2_reduced = {:.4e}, converged = {}, iterations = {}\n", self.chi2_reduced, self.converged, self.iterations));
        s
    }
}

struct Problem<'a> {
    model: &'a dyn Model,
    data: &'a DataSeries,
    free: Vec<usize>,
}

impl Problem<'_> {
    fn residuals(&self, p: &[f64]) -> DVector<f64> {
        let d = self.data;
        DVector::from_iterator(
            d.len(),
            (0..d.len()).map(|i| {
                let r = d.y[i] - self.model.eval(p, d.x[i]);
                match &d.sigma {
                    Some(s) => r / s[i],
                    None => r,
                }
            }),
        )
    }

    /// Forward-difference Jacobian of the model (not of the residuals).
    fn jacobian(&self, p: &[f64], r0: &DVector<f64>) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.data.len(), self.free.len());
        let mut q = p.to_vec();
        for (col, &k) in self.free.iter().enumerate() {
            let h = 1e-6 * p[k].abs().max(1e-6);
            q[k] = p[k] + h;
            let r1 = self.residuals(&q);
            q[k] = p[k];
            for i in 0..r0.len() {
                j[(i, col)] = (r0[i] - r1[i]) / h;
            }
        }
        j
    }
}

fn cost(r: &DVector<f64>) -> f64 {
    r.norm_squared()
}

/// Levenberg-Marquardt with Marquardt diagonal scaling.
pub fn lm_fit(model: &dyn Model, data: &DataSeries, p0: &[f64], options: &LmOptions) -> Result<FitResult> {
    let names = model.param_names();
    if p0.len() != names.len() {
        return domain(format!("model {} takes {} parameters, got {}", model.name(), names.len(), p0.len()));
    }
    if let Some(&k) = options.fixed.iter().find(|&&k| k >= p0.len()) {
        return domain(format!("fixed parameter index {k} out of range"));
    }
    let free: Vec<usize> = (0..p0.len()).filter(|k| !options.fixed.contains(k)).collect();
    if data.len() < free.len() {
        return domain(format!("{} data points cannot determine {} parameters", data.len(), free.len()));
    }
    if p0.iter().any(|v| !v.is_finite()) {
        return domain("initial parameters must be finite");
    }
    let prob = Problem { model, data, free };
    let nfree = prob.free.len();

    let mut p = p0.to_vec();
    let mut r = prob.residuals(&p);
    let mut c = cost(&r);
    if !c.is_finite() {
        return domain("model is not finite at the initial parameters");
    }
    let mut lambda = options.lambda0;
    let mut converged = false;
    let mut iterations = 0;
    let mut j = prob.jacobian(&p, &r);

    while iterations < options.max_iter {
        iterations += 1;
        let a = j.transpose() * &j;
        let g = j.transpose() * &r;
        if g.amax() < options.tol * c.max(f64::MIN_POSITIVE).sqrt() || c == 0.0 {
            converged = true;
            break;
        }
        let mut accepted = false;
        while lambda < 1e16 {
            let mut damped = a.clone();
            for k in 0..nfree {
                damped[(k, k)] += lambda * a[(k, k)].max(1e-300);
            }
            let step = match damped.cholesky() {
                Some(ch) => ch.solve(&g),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let mut trial = p.clone();
            for (col, &k) in prob.free.iter().enumerate() {
                trial[k] += step[col];
            }
            let rt = prob.residuals(&trial);
            let ct = cost(&rt);
            if ct.is_finite() && ct <= c {
                let rel = (c - ct) / c.max(f64::MIN_POSITIVE);
                p = trial;
                r = rt;
                c = ct;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if rel < options.tol {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no downhill step at any damping: stationary to working precision
            converged = true;
            break;
        }
        if converged {
            break;
        }
        j = prob.jacobian(&p, &r);
    }

    let j = prob.jacobian(&p, &r);
    let a = j.transpose() * &j;
    let dof = data.len().saturating_sub(nfree);
    let chi2_reduced = if dof > 0 { c / dof as f64 } else { f64::NAN };
    let eig = a.clone().symmetric_eigenvalues();
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e.abs())));
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition < 1e15) {
        return Err(Error::Singular { condition });
    }
    let inv = a.cholesky().ok_or(Error::Singular { condition })?.inverse();
    let scale = if data.sigma.is_some() { 1.0 } else { chi2_reduced };
    let mut covariance = DMatrix::zeros(p.len(), p.len());
    for (a_i, &i) in prob.free.iter().enumerate() {
        for (b_i, &k) in prob.free.iter().enumerate() {
            covariance[(i, k)] = inv[(a_i, b_i)] * scale;
        }
    }
    let uncertainties = (0..p.len()).map(|i| covariance[(i, i)].max(0.0).sqrt()).collect();
    Ok(FitResult {
        model: model.name().to_string(),
        names: names.iter().map(|s| s.to_string()).collect(),
        params: p,
        uncertainties,
        covariance,
        cost: c,
        chi2_reduced,
        converged,
        iterations,
        n_points: data.len(),
    })
}

/// Dominant angular frequency of a roughly uniformly sampled series, from the
/// peak of a zero-padded FFT of the mean-removed data with parabolic
/// refinement.
pub fn estimate_frequency(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len();
    if n < 4 {
        return domain("need at least four samples to estimate a frequency");
    }
    let dx = (x[n - 1] - x[0]) / (n - 1) as f64;
    let mean = y.iter().sum::<f64>() / n as f64;
    let len = (8 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = y.iter().map(|v| Complex::new(v - mean, 0.0)).collect();
    buf.resize(len, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(len).process(&mut buf);
    let mag: Vec<f64> = buf[..len / 2].iter().map(|z| z.norm()).collect();
    let k = (1..mag.len()).max_by(|&a, &b| mag[a].total_cmp(&mag[b])).unwrap_or(1);
    let shift = if k + 1 < mag.len() {
        let (a, b, c) = (mag[k - 1], mag[k], mag[k + 1]);
        let den = a - 2.0 * b + c;
        if den.abs() > 0.0 { 0.5 * (a - c) / den } else { 0.0 }
    } else {
        0.0
    };
    Ok(TAU * (k as f64 + shift) / (len as f64 * dx))
}

/// Least-squares c, s, B for y ≈ e(x)(c cos ωx + s sin ωx) + B.
fn linear_quadrature(x: &[f64], y: &[f64], omega: f64, t2: f64) -> ([f64; 3], f64) {
    let mut a = nalgebra::Matrix3::<f64>::zeros();
    let mut b = nalgebra::Vector3::<f64>::zeros();
    for (&xi, &yi) in x.iter().zip(y) {
        let e = (-(xi / t2).powi(2)).exp();
        let v = nalgebra::Vector3::new(e * (omega * xi).cos(), e * (omega * xi).sin(), 1.0);
        a += v * v.transpose();
        b += v * yi;
    }
    let sol = a.lu().solve(&b).unwrap_or_else(nalgebra::Vector3::zeros);
    let res: f64 = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let e = (-(xi / t2).powi(2)).exp();
            let m = e * (sol[0] * (omega * xi).cos() + sol[1] * (omega * xi).sin()) + sol[2];
            (yi - m).powi(2)
        })
        .sum();
    ([sol[0], sol[1], sol[2]], res)
}

/// Starting point for a Gaussian-envelope fringe: FFT frequency, then a
/// linear solve for amplitude/phase/offset over a ladder of envelope widths.
pub fn initial_gauss_cosine(data: &DataSeries) -> Result<GaussCosineParams> {
    let omega = estimate_frequency(&data.x, &data.y)?;
    let span = data.x[data.len() - 1] - data.x[0];
    let mut best: Option<(f64, GaussCosineParams)> = None;
    for f in [0.1, 0.2, 0.35, 0.5, 0.75, 1.0, 1.5, 2.5, 5.0] {
        let t2 = f * span.max(f64::MIN_POSITIVE);
        let ([c, s, b], res) = linear_quadrature(&data.x, &data.y, omega, t2);
        let cand = GaussCosineParams { amplitude: c.hypot(s), angular_frequency: omega, phase: (-s).atan2(c), dephasing_time: t2, offset: b };
        if best.as_ref().is_none_or(|(r, _)| res < *r) {
            best = Some((res, cand));
        }
    }
    Ok(best.expect("ladder is non-empty").1)
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct GaussCosineFitOptions {
    /// Mean-center the data and hold the offset at zero.
    pub subtract_background: bool,
    pub free_exponent: bool,
}

/// Gaussian-envelope fringe fit with FFT initialization. The amplitude is
/// reported non-negative and the phase wrapped to (−π, π].
pub fn fit_gauss_cosine(data: &DataSeries, opts: GaussCosineFitOptions, lm: &LmOptions) -> Result<FitResult> {
    let work = if opts.subtract_background { data.mean_centered() } else { data.clone() };
    let init = initial_gauss_cosine(&work)?;
    let mut p0 = init.to_vec();
    let mut lm = lm.clone();
    if opts.subtract_background {
        p0[4] = 0.0;
        lm.fixed.push(4);
    }
    let model = GaussCosine { free_exponent: opts.free_exponent };
    if opts.free_exponent {
        p0.push(2.0);
    }
    let mut fit = lm_fit(&model, &work, &p0, &lm)?;
    if fit.params[0] < 0.0 {
        fit.params[0] = -fit.params[0];
        fit.params[2] += PI;
        // flip covariance of the amplitude row/column
        for k in 0..fit.params.len() {
            if k != 0 {
                fit.covariance[(0, k)] = -fit.covariance[(0, k)];
                fit.covariance[(k, 0)] = -fit.covariance[(k, 0)];
            }
        }
    }
    fit.params[2] = wrap_phase(fit.params[2]);
    fit.params[3] = fit.params[3].abs();
    Ok(fit)
}

fn wrap_phase(phi: f64) -> f64 {
    let w = phi.rem_euclid(TAU);
    if w > PI { w - TAU } else { w }
}

/// Power-calibration fit; `a` is seeded by scanning for the best linear
/// amplitude match.
pub fn fit_rabi_power(data: &DataSeries, lm: &LmOptions) -> Result<FitResult> {
    let pmax = data.x.iter().cloned().fold(0.0, f64::max);
    if !(pmax > 0.0) || data.x.iter().any(|&p| p < 0.0) {
        return domain("power values must be non-negative with a positive maximum");
    }
    let mut best = (f64::INFINITY, 1.0, 1.0);
    for k in 1..=400 {
        // a·√Pmax from 0.05π to 4π
        let a = PI * (0.05 + 3.95 * k as f64 / 400.0) / pmax.sqrt();
        let basis: Vec<f64> = data.x.iter().map(|&p| model_rabi_power(1.0, a, p)).collect();
        let bb: f64 = basis.iter().map(|b| b * b).sum();
        if bb == 0.0 {
            continue;
        }
        let amp = basis.iter().zip(&data.y).map(|(b, y)| b * y).sum::<f64>() / bb;
        let res: f64 = basis.iter().zip(&data.y).map(|(b, y)| (y - amp * b).powi(2)).sum();
        if res < best.0 {
            best = (res, amp, a);
        }
    }
    lm_fit(&RabiPower, data, &[best.1, best.2], lm)
}

/// |g| from a Larmor frequency in GHz and a field in tesla.
pub fn extract_g_factor(larmor_ghz: f64, field_tesla: f64) -> Result<f64> {
    if !(field_tesla > 0.0) || !field_tesla.is_finite() {
        return domain(format!("field must be positive, got {field_tesla} T"));
    }
    Ok(larmor_ghz.abs() / (BOHR_MAGNETON_GHZ_PER_TESLA * field_tesla))
}
