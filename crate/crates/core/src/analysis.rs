//! Least-squares fitting for the small model zoo used across the simulator:
//! single and double exponentials and the Gaussian spin-mismatch kernel.
//!
//! The solver is a Levenberg–Marquardt iteration (damped Gauss–Newton with
//! Marquardt diagonal scaling) on analytic Jacobians. Exponentials are fitted
//! in rate form internally and reported as time constants.

use std::f64::consts::{LN_2, PI};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// π²/(2 ln 2), the exponent prefactor of the Gaussian rephasing kernel.
pub const GAUSS_MISMATCH_COEFF: f64 = PI * PI / (2.0 * LN_2);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    /// `A·exp(−t/T)`
    Exp,
    /// `A₁·exp(−t/T₁) + A₂·exp(−t/T₂)`, T₁ < T₂
    DoubleExp,
    /// `A·exp(−π²Γ²x²/(2 ln 2))`
    GaussianMismatch,
    /// Same kernel with a free centre `x₀`.
    GaussianMismatchCentered,
}

impl std::str::FromStr for Model {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exp" => Ok(Model::Exp),
            "double-exp" => Ok(Model::DoubleExp),
            "gaussian-mismatch" | "gaussian" => Ok(Model::GaussianMismatch),
            "gaussian-mismatch-centered" => Ok(Model::GaussianMismatchCentered),
            other => Err(Error::invalid(format!(
                "unknown fit model `{other}` (expected exp, double-exp, gaussian-mismatch, gaussian-mismatch-centered)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitParam {
    pub name: String,
    pub value: f64,
    /// 1σ from the Jacobian covariance at the optimum (approximate).
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FitWarning {
    /// The two time constants are too close to be separated reliably.
    WeakSeparation { ratio: f64 },
    /// The covariance matrix was singular; sigmas are not meaningful.
    SingularCovariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: Model,
    pub params: Vec<FitParam>,
    /// Euclidean norm of the (weighted) residual vector.
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    pub warnings: Vec<FitWarning>,
    /// ½‖r‖² after each accepted iteration, starting with the initial guess.
    #[serde(skip)]
    pub cost_history: Vec<f64>,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|p| p.name == name).map(|p| p.value)
    }

    pub fn sigma(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|p| p.name == name).map(|p| p.sigma)
    }

    /// Turns a best-so-far result into an error if the solver gave up.
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::FitNotConverged {
                residual: self.residual_norm,
                iterations: self.iterations,
            })
        }
    }

    /// Evaluates the fitted model at `x`.
    pub fn predict(&self, x: f64) -> f64 {
        let v = |n: &str| self.get(n).unwrap_or(f64::NAN);
        match self.model {
            Model::Exp => v("A") * (-x / v("T")).exp(),
            Model::DoubleExp => {
                v("A1") * (-x / v("T1")).exp() + v("A2") * (-x / v("T2")).exp()
            }
            Model::GaussianMismatch => {
                v("A") * (-GAUSS_MISMATCH_COEFF * v("gamma").powi(2) * x * x).exp()
            }
            Model::GaussianMismatchCentered => {
                let dx = x - v("x0");
                v("A") * (-GAUSS_MISMATCH_COEFF * v("gamma").powi(2) * dx * dx).exp()
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Relative parameter-step tolerance.
    pub xtol: f64,
    /// Relative cost-decrease tolerance.
    pub ftol: f64,
    /// Scaled-gradient tolerance.
    pub gtol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 500,
            xtol: 1e-13,
            ftol: 1e-15,
            gtol: 1e-10,
        }
    }
}

trait Residuals {
    fn n_params(&self) -> usize;
    /// Model value and its gradient with respect to the parameters.
    fn eval(&self, x: f64, p: &[f64], grad: &mut [f64]) -> f64;
    /// Parameters that scale linearly with y.
    fn amplitude_indices(&self) -> &'static [usize];
}

struct ExpModel;
impl Residuals for ExpModel {
    fn n_params(&self) -> usize {
        2
    }
    fn amplitude_indices(&self) -> &'static [usize] {
        &[0]
    }
    fn eval(&self, x: f64, p: &[f64], g: &mut [f64]) -> f64 {
        let e = (-p[1] * x).exp();
        g[0] = e;
        g[1] = -p[0] * x * e;
        p[0] * e
    }
}

struct DoubleExpModel;
impl Residuals for DoubleExpModel {
    fn n_params(&self) -> usize {
        4
    }
    fn amplitude_indices(&self) -> &'static [usize] {
        &[0, 2]
    }
    fn eval(&self, x: f64, p: &[f64], g: &mut [f64]) -> f64 {
        let e1 = (-p[1] * x).exp();
        let e2 = (-p[3] * x).exp();
        g[0] = e1;
        g[1] = -p[0] * x * e1;
        g[2] = e2;
        g[3] = -p[2] * x * e2;
        p[0] * e1 + p[2] * e2
    }
}

struct GaussModel {
    centered: bool,
}
impl Residuals for GaussModel {
    fn amplitude_indices(&self) -> &'static [usize] {
        &[0]
    }
    fn n_params(&self) -> usize {
        if self.centered {
            3
        } else {
            2
        }
    }
    fn eval(&self, x: f64, p: &[f64], g: &mut [f64]) -> f64 {
        let dx = if self.centered { x - p[2] } else { x };
        let e = (-GAUSS_MISMATCH_COEFF * p[1] * p[1] * dx * dx).exp();
        g[0] = e;
        g[1] = -2.0 * GAUSS_MISMATCH_COEFF * p[1] * dx * dx * p[0] * e;
        if self.centered {
            g[2] = 2.0 * GAUSS_MISMATCH_COEFF * p[1] * p[1] * dx * p[0] * e;
        }
        p[0] * e
    }
}

struct LmOutcome {
    params: Vec<f64>,
    cost: f64,
    converged: bool,
    iterations: usize,
    history: Vec<f64>,
    jtj: DMatrix<f64>,
}

fn residuals_and_jacobian(
    model: &dyn Residuals,
    x: &[f64],
    y: &[f64],
    w: &[f64],
    p: &[f64],
    r: &mut DVector<f64>,
    jac: &mut DMatrix<f64>,
) -> f64 {
    let np = model.n_params();
    let mut g = vec![0.0; np];
    let mut cost = 0.0;
    for i in 0..x.len() {
        let f = model.eval(x[i], p, &mut g);
        r[i] = (y[i] - f) * w[i];
        cost += r[i] * r[i];
        for k in 0..np {
            jac[(i, k)] = g[k] * w[i];
        }
    }
    0.5 * cost
}

fn cost_only(model: &dyn Residuals, x: &[f64], y: &[f64], w: &[f64], p: &[f64]) -> f64 {
    let mut g = vec![0.0; model.n_params()];
    0.5 * x
        .iter()
        .zip(y)
        .zip(w)
        .map(|((&xi, &yi), &wi)| {
            let r = (yi - model.eval(xi, p, &mut g)) * wi;
            r * r
        })
        .sum::<f64>()
}

fn levenberg_marquardt(
    model: &dyn Residuals,
    x: &[f64],
    y: &[f64],
    w: &[f64],
    p0: &[f64],
    opts: &FitOptions,
) -> LmOutcome {
    let n = x.len();
    let np = model.n_params();
    let mut p = p0.to_vec();
    let mut r = DVector::zeros(n);
    let mut jac = DMatrix::zeros(n, np);
    let mut cost = residuals_and_jacobian(model, x, y, w, &p, &mut r, &mut jac);
    let mut history = vec![cost];
    let data_scale: f64 = 0.5 * y.iter().zip(w).map(|(a, b)| (a * b).powi(2)).sum::<f64>();

    let mut jtj = jac.transpose() * &jac;
    let mut grad = jac.transpose() * &r;
    let mut lambda = 1e-3 * (0..np).map(|k| jtj[(k, k)]).fold(0.0, f64::max).max(1e-300);
    let mut nu = 2.0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        if cost <= 1e-30 * data_scale.max(1e-300) {
            converged = true;
            break;
        }
        let diag: Vec<f64> = (0..np).map(|k| jtj[(k, k)].max(1e-300)).collect();
        // scaled gradient test
        let rnorm = (2.0 * cost).sqrt();
        let gmax = (0..np)
            .map(|k| grad[k].abs() / (diag[k].sqrt() * rnorm))
            .fold(0.0, f64::max);
        if gmax < opts.gtol {
            converged = true;
            break;
        }

        let mut a = jtj.clone();
        for k in 0..np {
            a[(k, k)] += lambda * diag[k];
        }
        let step = match a.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => match a.lu().solve(&grad) {
                Some(s) => s,
                None => {
                    lambda *= nu;
                    nu *= 2.0;
                    continue;
                }
            },
        };
        let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
        let trial_cost = cost_only(model, x, y, w, &trial);
        let predicted = 0.5 * step.dot(&(lambda * DVector::from_iterator(np, (0..np).map(|k| diag[k] * step[k])) + &grad));

        if trial_cost.is_finite() && trial_cost < cost {
            let rho = if predicted > 0.0 {
                (cost - trial_cost) / predicted
            } else {
                1.0
            };
            let rel_step = step
                .iter()
                .zip(&trial)
                .map(|(s, v)| s.abs() / v.abs().max(1e-300))
                .fold(0.0, f64::max);
            let rel_cost = (cost - trial_cost) / cost;
            p = trial;
            cost = residuals_and_jacobian(model, x, y, w, &p, &mut r, &mut jac);
            history.push(cost);
            jtj = jac.transpose() * &jac;
            grad = jac.transpose() * &r;
            lambda *= (1.0f64 / 3.0).max(1.0 - (2.0 * rho - 1.0).powi(3));
            nu = 2.0;
            if rel_step < opts.xtol || rel_cost < opts.ftol {
                converged = true;
                break;
            }
        } else {
            lambda *= nu;
            nu *= 2.0;
            if !lambda.is_finite() || lambda > 1e300 {
                // no descent direction left: a stationary point within precision
                converged = true;
                break;
            }
        }
    }

    // Undamped polishing on the gradient. Near the optimum the cost is flat to
    // roundoff while the gradient still carries information, so steps are kept
    // while the gradient shrinks and the cost stays within a few ulps.
    if converged {
        let gnorm = |g: &DVector<f64>, h: &DMatrix<f64>| {
            (0..np).map(|k| g[k].abs() / h[(k, k)].max(1e-300).sqrt()).fold(0.0, f64::max)
        };
        let mut gcur = gnorm(&grad, &jtj);
        for _ in 0..50 {
            let Some(step) = jtj.clone().lu().solve(&grad) else {
                break;
            };
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let mut tr = DVector::zeros(n);
            let mut tj = DMatrix::zeros(n, np);
            let tc = residuals_and_jacobian(model, x, y, w, &trial, &mut tr, &mut tj);
            let tjtj = tj.transpose() * &tj;
            let tgrad = tj.transpose() * &tr;
            let gt = gnorm(&tgrad, &tjtj);
            if !(tc <= cost * (1.0 + 1e-13)) || !(gt < gcur) {
                break;
            }
            p = trial;
            jtj = tjtj;
            grad = tgrad;
            gcur = gt;
            if tc < *history.last().unwrap() {
                history.push(tc);
            }
            cost = tc;
        }
    }

    LmOutcome {
        params: p,
        cost,
        converged,
        iterations,
        history,
        jtj,
    }
}

fn covariance_sigmas(jtj: &DMatrix<f64>, cost: f64, n: usize, weighted: bool) -> Option<Vec<f64>> {
    let np = jtj.nrows();
    let inv = jtj.clone().try_inverse()?;
    let s2 = if weighted {
        1.0
    } else if n > np {
        2.0 * cost / (n - np) as f64
    } else {
        0.0
    };
    let sig: Vec<f64> = (0..np).map(|k| (inv[(k, k)] * s2).max(0.0).sqrt()).collect();
    if sig.iter().all(|s| s.is_finite()) {
        Some(sig)
    } else {
        None
    }
}

fn validate_xy(x: &[f64], y: &[f64], sigma: Option<&[f64]>, min_points: usize, increasing: bool) -> Result<Vec<f64>> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "x and y lengths differ ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.len() < min_points {
        return Err(Error::invalid(format!(
            "need at least {min_points} points, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::invalid("data contain non-finite values"));
    }
    if increasing && x.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("abscissa must be strictly increasing"));
    }
    match sigma {
        None => Ok(vec![1.0; x.len()]),
        Some(s) => {
            if s.len() != x.len() {
                return Err(Error::invalid("sigma column length differs from data"));
            }
            s.iter()
                .map(|&v| {
                    if v.is_finite() && v > 0.0 {
                        Ok(1.0 / v)
                    } else {
                        Err(Error::invalid(format!("per-point sigma must be > 0, got {v}")))
                    }
                })
                .collect()
        }
    }
}

/// Ordinary least-squares line; returns (intercept, slope).
fn linear_regression(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Some((my - slope * mx, slope))
}

/// Log-linear estimate of (A, rate) from the positive samples.
fn log_linear(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let (lx, ly): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .filter(|(_, &v)| v > 0.0)
        .map(|(&a, &b)| (a, b.ln()))
        .unzip();
    let (b, m) = linear_regression(&lx, &ly)?;
    Some((b.exp(), -m))
}

fn is_constant(y: &[f64]) -> bool {
    let max = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = y.iter().cloned().fold(f64::INFINITY, f64::min);
    (max - min) <= 1e-12 * max.abs().max(min.abs()).max(f64::MIN_POSITIVE)
}

fn best_of(
    model: &dyn Residuals,
    x: &[f64],
    y: &[f64],
    w: &[f64],
    starts: &[Vec<f64>],
    opts: &FitOptions,
) -> LmOutcome {
    // work on peak-normalized data so shape parameters do not depend on y units
    let scale = y.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let yn: Vec<f64> = y.iter().map(|v| v / scale).collect();
    let y = &yn[..];
    let amp = model.amplitude_indices();
    let mut best: Option<LmOutcome> = None;
    for s in starts {
        let mut s = s.clone();
        for &k in amp {
            s[k] /= scale;
        }
        let s = &s;
        if s.iter().any(|v| !v.is_finite()) {
            continue;
        }
        let out = levenberg_marquardt(model, x, y, w, s, opts);
        let better = match &best {
            None => true,
            Some(b) => out.cost < b.cost * (1.0 - 1e-12) || (!b.converged && out.converged && out.cost <= b.cost),
        };
        if better {
            best = Some(out);
        }
    }
    let mut out = best.expect("at least one finite start");
    for &k in amp {
        out.params[k] *= scale;
        for j in 0..out.jtj.nrows() {
            out.jtj[(k, j)] /= scale;
            out.jtj[(j, k)] /= scale;
        }
    }
    out.jtj *= scale * scale;
    out.cost *= scale * scale;
    for c in &mut out.history {
        *c *= scale * scale;
    }
    out
}

fn time_constant_param(name: &str, rate: f64, rate_sigma: Option<f64>) -> FitParam {
    let value = 1.0 / rate;
    let sigma = rate_sigma.map(|s| s / (rate * rate)).unwrap_or(f64::INFINITY);
    FitParam {
        name: name.to_owned(),
        value,
        sigma,
    }
}

/// Fits `A·exp(−t/T)`.
pub fn fit_exp(t: &[f64], y: &[f64]) -> Result<FitResult> {
    fit_exp_weighted(t, y, None, &FitOptions::default())
}

pub fn fit_exp_weighted(t: &[f64], y: &[f64], sigma: Option<&[f64]>, opts: &FitOptions) -> Result<FitResult> {
    let w = validate_xy(t, y, sigma, 4, true)?;
    if is_constant(y) {
        return Err(Error::NonIdentifiable(
            "constant data: the time constant diverges".into(),
        ));
    }
    let span = t[t.len() - 1] - t[0];
    let mut starts = Vec::new();
    if let Some((a, k)) = log_linear(t, y) {
        if k > 0.0 {
            starts.push(vec![a, k]);
        }
    }
    let half = t.len() / 2;
    if let Some((a, k)) = log_linear(&t[..half.max(2)], &y[..half.max(2)]) {
        if k > 0.0 {
            starts.push(vec![a, k]);
        }
    }
    if starts.is_empty() {
        return Err(Error::NonIdentifiable(
            "data do not decay; no finite time constant".into(),
        ));
    }
    let out = best_of(&ExpModel, t, y, &w, &starts, opts);
    if out.params[1] * span < 1e-9 || out.params[1] <= 0.0 {
        return Err(Error::NonIdentifiable(format!(
            "fitted rate {:e} is not resolvable over a span of {span:e}",
            out.params[1]
        )));
    }
    let mut warnings = Vec::new();
    let sig = covariance_sigmas(&out.jtj, out.cost, t.len(), sigma.is_some());
    if sig.is_none() {
        warnings.push(FitWarning::SingularCovariance);
    }
    let params = vec![
        FitParam {
            name: "A".into(),
            value: out.params[0],
            sigma: sig.as_ref().map(|s| s[0]).unwrap_or(f64::INFINITY),
        },
        time_constant_param("T", out.params[1], sig.as_ref().map(|s| s[1])),
    ];
    Ok(FitResult {
        model: Model::Exp,
        params,
        residual_norm: (2.0 * out.cost).sqrt(),
        converged: out.converged,
        iterations: out.iterations,
        warnings,
        cost_history: out.history,
    })
}

/// Fits `A₁·exp(−t/T₁) + A₂·exp(−t/T₂)` with T₁ < T₂.
pub fn fit_double_exp(t: &[f64], y: &[f64]) -> Result<FitResult> {
    fit_double_exp_weighted(t, y, None, &FitOptions::default())
}

pub fn fit_double_exp_weighted(
    t: &[f64],
    y: &[f64],
    sigma: Option<&[f64]>,
    opts: &FitOptions,
) -> Result<FitResult> {
    let w = validate_xy(t, y, sigma, 8, true)?;
    if is_constant(y) {
        return Err(Error::NonIdentifiable(
            "constant data: time constants diverge".into(),
        ));
    }
    let n = t.len();
    let mut starts: Vec<Vec<f64>> = Vec::new();
    // peel: slow component from the tail, fast from the remainder
    for frac in [0.2, 0.35, 0.5, 0.65] {
        let split = ((n as f64) * frac) as usize;
        let split = split.clamp(2, n - 3);
        let Some((a2, k2)) = log_linear(&t[split..], &y[split..]) else {
            continue;
        };
        if k2 <= 0.0 {
            continue;
        }
        let rem: Vec<f64> = t[..split]
            .iter()
            .zip(&y[..split])
            .map(|(&ti, &yi)| yi - a2 * (-k2 * ti).exp())
            .collect();
        if let Some((a1, k1)) = log_linear(&t[..split], &rem) {
            if k1 > k2 {
                starts.push(vec![a1, k1, a2, k2]);
            }
        }
        starts.push(vec![0.5 * y[0], 5.0 * k2, a2, k2]);
    }
    if let Some((a, k)) = log_linear(t, y) {
        if k > 0.0 {
            starts.push(vec![0.5 * a, 3.0 * k, 0.5 * a, k / 3.0]);
            starts.push(vec![0.5 * a, 10.0 * k, 0.5 * a, k / 2.0]);
        }
    }
    if starts.is_empty() {
        return Err(Error::NonIdentifiable("data do not decay".into()));
    }
    let out = best_of(&DoubleExpModel, t, y, &w, &starts, opts);
    let mut p = out.params.clone();
    let sig = covariance_sigmas(&out.jtj, out.cost, n, sigma.is_some());
    let mut s = sig.clone().unwrap_or_else(|| vec![f64::INFINITY; 4]);
    // order so that T1 < T2 (k1 > k2)
    if p[1] < p[3] {
        p.swap(0, 2);
        p.swap(1, 3);
        s.swap(0, 2);
        s.swap(1, 3);
    }
    let mut warnings = Vec::new();
    if sig.is_none() {
        warnings.push(FitWarning::SingularCovariance);
    }
    let ratio = if p[3] > 0.0 { p[1] / p[3] } else { f64::INFINITY };
    if !(ratio >= 3.0) {
        warnings.push(FitWarning::WeakSeparation { ratio });
    }
    let params = vec![
        FitParam { name: "A1".into(), value: p[0], sigma: s[0] },
        time_constant_param("T1", p[1], Some(s[1])),
        FitParam { name: "A2".into(), value: p[2], sigma: s[2] },
        time_constant_param("T2", p[3], Some(s[3])),
    ];
    Ok(FitResult {
        model: Model::DoubleExp,
        params,
        residual_norm: (2.0 * out.cost).sqrt(),
        converged: out.converged,
        iterations: out.iterations,
        warnings,
        cost_history: out.history,
    })
}

/// Fits `A·exp(−π²Γ²x²/(2 ln 2))`, x being the rephasing mismatch T_S − 2τ.
pub fn fit_gaussian_mismatch(delta_ts: &[f64], y: &[f64]) -> Result<FitResult> {
    fit_gaussian_impl(delta_ts, y, None, false, &FitOptions::default())
}

pub fn fit_gaussian_mismatch_centered(delta_ts: &[f64], y: &[f64]) -> Result<FitResult> {
    fit_gaussian_impl(delta_ts, y, None, true, &FitOptions::default())
}

pub fn fit_gaussian_weighted(
    x: &[f64],
    y: &[f64],
    sigma: Option<&[f64]>,
    centered: bool,
    opts: &FitOptions,
) -> Result<FitResult> {
    fit_gaussian_impl(x, y, sigma, centered, opts)
}

fn fit_gaussian_impl(
    x: &[f64],
    y: &[f64],
    sigma: Option<&[f64]>,
    centered: bool,
    opts: &FitOptions,
) -> Result<FitResult> {
    let distinct = {
        let mut v: Vec<f64> = x.iter().copied().filter(|v| v.is_finite()).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v.len()
    };
    if distinct < 2 {
        return Err(Error::NonIdentifiable(
            "all samples share one abscissa: the width cannot be determined".into(),
        ));
    }
    let w = validate_xy(x, y, sigma, 5, false)?;
    let a0 = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if a0 <= 0.0 {
        return Err(Error::NonIdentifiable("no positive peak in the data".into()));
    }
    // second-moment width estimate on the sorted abscissa
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for k in 0..idx.len() {
        let i = idx[k];
        let lo = if k > 0 { x[idx[k - 1]] } else { x[i] };
        let hi = if k + 1 < idx.len() { x[idx[k + 1]] } else { x[i] };
        let dx = 0.5 * (hi - lo);
        let yi = y[i].max(0.0);
        m0 += yi * dx;
        m1 += yi * x[i] * dx;
        m2 += yi * x[i] * x[i] * dx;
    }
    let center = if m0 > 0.0 { m1 / m0 } else { 0.0 };
    let c0 = if centered { center } else { 0.0 };
    let var = if m0 > 0.0 { (m2 / m0 - 2.0 * c0 * center + c0 * c0).max(0.0) } else { 0.0 };
    let span = x[idx[idx.len() - 1]] - x[idx[0]];
    let s = if var > 0.0 { var.sqrt() } else { span / 4.0 };
    let g0 = LN_2.sqrt() / (PI * s);
    let mut starts = vec![];
    for f in [1.0, 0.5, 2.0] {
        if centered {
            starts.push(vec![a0, g0 * f, c0]);
        } else {
            starts.push(vec![a0, g0 * f]);
        }
    }
    let model = GaussModel { centered };
    let out = best_of(&model, x, y, &w, &starts, opts);
    let sig = covariance_sigmas(&out.jtj, out.cost, x.len(), sigma.is_some());
    let mut warnings = Vec::new();
    if sig.is_none() {
        warnings.push(FitWarning::SingularCovariance);
    }
    let s = sig.unwrap_or_else(|| vec![f64::INFINITY; model.n_params()]);
    let mut params = vec![
        FitParam { name: "A".into(), value: out.params[0], sigma: s[0] },
        FitParam { name: "gamma".into(), value: out.params[1].abs(), sigma: s[1] },
    ];
    if centered {
        params.push(FitParam { name: "x0".into(), value: out.params[2], sigma: s[2] });
    }
    Ok(FitResult {
        model: if centered {
            Model::GaussianMismatchCentered
        } else {
            Model::GaussianMismatch
        },
        params,
        residual_norm: (2.0 * out.cost).sqrt(),
        converged: out.converged,
        iterations: out.iterations,
        warnings,
        cost_history: out.history,
    })
}

/// Dispatches on `model`; `sigma` is an optional per-point uncertainty column.
pub fn fit_model(model: Model, x: &[f64], y: &[f64], sigma: Option<&[f64]>) -> Result<FitResult> {
    let opts = FitOptions::default();
    match model {
        Model::Exp => fit_exp_weighted(x, y, sigma, &opts),
        Model::DoubleExp => fit_double_exp_weighted(x, y, sigma, &opts),
        Model::GaussianMismatch => fit_gaussian_impl(x, y, sigma, false, &opts),
        Model::GaussianMismatchCentered => fit_gaussian_impl(x, y, sigma, true, &opts),
    }
}

/// Oscillation frequency of a sampled signal from its upward mean crossings.
///
/// Returns `None` when fewer than two full periods are visible.
pub fn dominant_frequency(t: &[f64], y: &[f64]) -> Option<f64> {
    if t.len() != y.len() || t.len() < 4 {
        return None;
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let amp = y.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    if amp < 1e-9 {
        return None;
    }
    let mut crossings = Vec::new();
    for i in 1..y.len() {
        let a = y[i - 1] - mean;
        let b = y[i] - mean;
        if a < 0.0 && b >= 0.0 {
            let frac = a / (a - b);
            crossings.push(t[i - 1] + frac * (t[i] - t[i - 1]));
        }
    }
    if crossings.len() < 3 {
        return None;
    }
    let periods = (crossings.len() - 1) as f64;
    Some(periods / (crossings[crossings.len() - 1] - crossings[0]))
}

/// Adds zero-mean Gaussian noise of standard deviation `level·max|y|`.
pub fn with_peak_noise(y: &[f64], level: f64, seed: u64) -> Vec<f64> {
    let peak = y.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    y.iter()
        .map(|&v| {
            let z: f64 = StandardNormal.sample(&mut rng);
            v + level * peak * z
        })
        .collect()
}

/// Adds multiplicative Gaussian noise, `y·(1 + level·z)`.
pub fn with_relative_noise(y: &[f64], level: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    y.iter()
        .map(|&v| {
            let z: f64 = StandardNormal.sample(&mut rng);
            v * (1.0 + level * z)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn exp_round_trip_noiseless() {
        let t = grid(0.0, 600e-6, 40);
        let y: Vec<f64> = t.iter().map(|&x| (-x / 165e-6).exp()).collect();
        let f = fit_exp(&t, &y).unwrap();
        assert!(f.converged);
        assert!((f.get("T").unwrap() / 165e-6 - 1.0).abs() < 1e-3);
        assert!((f.get("A").unwrap() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn exp_constant_data_is_non_identifiable() {
        let t = grid(0.0, 1.0, 10);
        let y = vec![0.3; 10];
        assert!(matches!(fit_exp(&t, &y), Err(Error::NonIdentifiable(_))));
    }

    #[test]
    fn exp_preconditions() {
        assert!(matches!(
            fit_exp(&[0.0, 1.0, 2.0], &[1.0, 0.5, 0.2]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(fit_exp(&[0.0, 2.0, 1.0, 3.0], &[1.0, 0.5, 0.2, 0.1]).is_err());
    }

    #[test]
    fn single_exp_on_two_component_data_leaves_structure() {
        let t = grid(1e-6, 60e-6, 30);
        let y: Vec<f64> = t
            .iter()
            .map(|&x| 0.5 * (-x / 3.75e-6).exp() + 0.5 * (-x / 41.25e-6).exp())
            .collect();
        let single = fit_exp(&t, &y).unwrap();
        // residuals change sign in runs rather than alternating like noise
        let res: Vec<f64> = t.iter().zip(&y).map(|(&x, &v)| v - single.predict(x)).collect();
        let sign_changes = res.windows(2).filter(|w| w[0].signum() != w[1].signum()).count();
        assert!(sign_changes <= 4, "{sign_changes}");
        let double = fit_double_exp(&t, &y).unwrap();
        assert!(double.residual_norm < 1e-3 * single.residual_norm);
    }

    #[test]
    fn double_exp_round_trip_noiseless() {
        let t = grid(0.0, 600e-6, 60);
        let y: Vec<f64> = t
            .iter()
            .map(|&x| 0.4 * (-x / 15e-6).exp() + 0.6 * (-x / 165e-6).exp())
            .collect();
        let f = fit_double_exp(&t, &y).unwrap();
        assert!(f.converged);
        assert!((f.get("T1").unwrap() / 15e-6 - 1.0).abs() < 1e-3, "{f:?}");
        assert!((f.get("T2").unwrap() / 165e-6 - 1.0).abs() < 1e-3);
        assert!(f.warnings.is_empty());
    }

    #[test]
    fn double_exp_hole_lifetimes_with_noise() {
        let t = grid(0.0, 2.0, 1000);
        let y: Vec<f64> = t
            .iter()
            .map(|&x| 0.5 * (-x / 0.036).exp() + 0.5 * (-x / 0.390).exp())
            .collect();
        let noisy = with_peak_noise(&y, 0.01, 11);
        let f = fit_double_exp(&t, &noisy).unwrap();
        assert!((f.get("T1").unwrap() / 0.036 - 1.0).abs() < 0.05, "{f:?}");
        assert!((f.get("T2").unwrap() / 0.390 - 1.0).abs() < 0.05);
    }

    #[test]
    fn double_exp_degenerate_warns() {
        let t = grid(0.0, 1.0, 30);
        let y: Vec<f64> = t.iter().map(|&x| (-x / 0.2).exp()).collect();
        let f = fit_double_exp(&t, &y).unwrap();
        assert!(
            f.warnings.iter().any(|w| matches!(w, FitWarning::WeakSeparation { .. } | FitWarning::SingularCovariance)),
            "{f:?}"
        );
    }

    #[test]
    fn gaussian_recovers_linewidth_with_noise() {
        let x = grid(-1.5e-6, 1.5e-6, 41);
        let y: Vec<f64> = x
            .iter()
            .map(|&v| 0.8 * (-GAUSS_MISMATCH_COEFF * (0.73e6f64).powi(2) * v * v).exp())
            .collect();
        let noisy = with_peak_noise(&y, 0.02, 3);
        let f = fit_gaussian_mismatch(&x, &noisy).unwrap();
        let g = f.get("gamma").unwrap();
        assert!((g - 0.73e6).abs() < 0.04e6, "{g}");
        assert!(f.sigma("gamma").unwrap() > 0.0);
    }

    #[test]
    fn gaussian_single_abscissa_is_non_identifiable() {
        assert!(matches!(
            fit_gaussian_mismatch(&[0.0], &[1.0]),
            Err(Error::NonIdentifiable(_))
        ));
        assert!(matches!(
            fit_gaussian_mismatch(&[0.0; 6], &[1.0; 6]),
            Err(Error::NonIdentifiable(_))
        ));
    }

    #[test]
    fn gaussian_symmetric_centre_at_zero() {
        let x = grid(-1e-6, 1e-6, 31);
        let y: Vec<f64> = x
            .iter()
            .map(|&v| (-GAUSS_MISMATCH_COEFF * (0.73e6f64).powi(2) * v * v).exp())
            .collect();
        let noisy = with_peak_noise(&y, 0.02, 5);
        let f = fit_gaussian_mismatch_centered(&x, &noisy).unwrap();
        let x0 = f.get("x0").unwrap();
        assert!(x0.abs() < 3.0 * f.sigma("x0").unwrap().max(1e-9), "{x0}");
        assert!(x0.abs() < 0.05e-6);
    }

    #[test]
    fn dominant_frequency_of_cosine() {
        let t = grid(0.0, 10e-6, 4001);
        let y: Vec<f64> = t.iter().map(|&x| (std::f64::consts::TAU * 0.65e6 * x).cos()).collect();
        let f = dominant_frequency(&t, &y).unwrap();
        assert!((f / 0.65e6 - 1.0).abs() < 1e-4);
        assert!(dominant_frequency(&t, &vec![1.0; t.len()]).is_none());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn exp_round_trip(a in 0.05f64..5.0, tau in 1e-6f64..1e-3) {
            let t = grid(0.0, 4.0 * tau, 25);
            let y: Vec<f64> = t.iter().map(|&x| a * (-x / tau).exp()).collect();
            let f = fit_exp(&t, &y).unwrap();
            prop_assert!((f.get("T").unwrap() / tau - 1.0).abs() < 1e-3);
            prop_assert!((f.get("A").unwrap() / a - 1.0).abs() < 1e-3);
        }

        #[test]
        fn double_exp_round_trip(t1 in 1e-3f64..5e-3, ratio in 5.0f64..20.0, w in 0.2f64..0.8) {
            let t2 = t1 * ratio;
            let t = grid(0.0, 4.0 * t2, 80);
            let y: Vec<f64> = t.iter().map(|&x| w * (-x / t1).exp() + (1.0 - w) * (-x / t2).exp()).collect();
            let f = fit_double_exp(&t, &y).unwrap();
            prop_assert!((f.get("T1").unwrap() / t1 - 1.0).abs() < 1e-3, "{:?}", f);
            prop_assert!((f.get("T2").unwrap() / t2 - 1.0).abs() < 1e-3);
        }

        #[test]
        fn gaussian_round_trip(a in 0.1f64..2.0, g in 0.2e6f64..2e6) {
            let x = grid(-2.0 / g, 2.0 / g, 31);
            let y: Vec<f64> = x.iter().map(|&v| a * (-GAUSS_MISMATCH_COEFF * g * g * v * v).exp()).collect();
            let f = fit_gaussian_mismatch(&x, &y).unwrap();
            prop_assert!((f.get("gamma").unwrap() / g - 1.0).abs() < 1e-3);
        }

        #[test]
        fn shape_invariant_under_y_scaling(scale in 0.01f64..100.0, seed in 0u64..1000) {
            let t = grid(0.0, 1.0, 50);
            let y: Vec<f64> = t.iter().map(|&x| 0.6 * (-x / 0.05).exp() + 0.4 * (-x / 0.4).exp()).collect();
            let y = with_peak_noise(&y, 0.01, seed);
            let ys: Vec<f64> = y.iter().map(|v| v * scale).collect();
            let a = fit_double_exp(&t, &y).unwrap();
            let b = fit_double_exp(&t, &ys).unwrap();
            for name in ["T1", "T2"] {
                let (u, v) = (a.get(name).unwrap(), b.get(name).unwrap());
                prop_assert!(((u - v) / u).abs() < 1e-10, "{}: {} vs {}", name, u, v);
            }
            let e = fit_exp(&t, &y).unwrap();
            let es = fit_exp(&t, &ys).unwrap();
            prop_assert!(((e.get("T").unwrap() - es.get("T").unwrap()) / e.get("T").unwrap()).abs() < 1e-10, "{:?} {:?}", e, es);
        }

        #[test]
        fn cost_never_increases(seed in 0u64..1000) {
            let t = grid(0.0, 2.0, 60);
            let y: Vec<f64> = t.iter().map(|&x| 0.5 * (-x / 0.036).exp() + 0.5 * (-x / 0.39).exp()).collect();
            let y = with_peak_noise(&y, 0.02, seed);
            let f = fit_double_exp(&t, &y).unwrap();
            prop_assert!(f.cost_history.windows(2).all(|w| w[1] <= w[0]));
            let g = fit_exp(&t, &y).unwrap();
            prop_assert!(g.cost_history.windows(2).all(|w| w[1] <= w[0]));
        }
    }
}
