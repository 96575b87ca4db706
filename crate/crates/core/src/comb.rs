//! Atomic frequency comb profiles and their first-echo efficiency.

use std::f64::consts::{LN_2, PI, TAU};
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{self, FitResult};
use crate::error::{ensure_non_negative, ensure_positive, Error, Result};
use crate::io::Table;

/// Quoted upper bound for forward recall from a two-level comb.
pub const FORWARD_RECALL_BOUND: f64 = 0.54;
/// The exact supremum of the square-tooth formula, reached as d → ∞.
pub const FORWARD_RECALL_SUPREMUM: f64 = 4.0 * 0.135_335_283_236_612_7;

pub const MIN_SAMPLES_PER_PERIOD: usize = 64;
pub const DEFAULT_SAMPLES_PER_PERIOD: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToothShape {
    Square,
    Gaussian,
    Lorentzian,
}

impl std::str::FromStr for ToothShape {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "square" => Ok(ToothShape::Square),
            "gaussian" => Ok(ToothShape::Gaussian),
            "lorentzian" => Ok(ToothShape::Lorentzian),
            _ => Err(Error::invalid(format!(
                "unknown tooth shape `{s}` (square, gaussian, lorentzian)"
            ))),
        }
    }
}

/// A normalized kernel convolved with square teeth: broadens each tooth
/// without changing its area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Broadening {
    pub shape: ToothShape,
    pub fwhm_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombParams {
    pub delta_hz: f64,
    pub d_peak: f64,
    pub finesse: f64,
    pub d0: f64,
    pub bandwidth_hz: f64,
    pub tooth_shape: ToothShape,
    /// FWHM of gaussian/lorentzian teeth; defaults to Δ/F.
    pub tooth_fwhm_hz: Option<f64>,
    pub broadening: Option<Broadening>,
    pub samples_per_period: usize,
}

impl Default for CombParams {
    fn default() -> Self {
        CombParams {
            delta_hz: 1e6,
            d_peak: 4.0,
            finesse: 3.129,
            d0: 0.0,
            bandwidth_hz: 20e6,
            tooth_shape: ToothShape::Square,
            tooth_fwhm_hz: None,
            broadening: None,
            samples_per_period: DEFAULT_SAMPLES_PER_PERIOD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombProfile {
    pub delta_hz: f64,
    pub d_peak: f64,
    pub finesse: f64,
    pub d0: f64,
    pub bandwidth_hz: f64,
    pub tooth_shape: ToothShape,
    pub tooth_fwhm_hz: Option<f64>,
    pub broadening: Option<Broadening>,
    /// Uniform grid, δ_j = j·Δ/N, symmetric about zero.
    pub detuning_hz: Vec<f64>,
    pub depth: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EchoEfficiency {
    pub eta: f64,
    pub c0: f64,
    pub c1_mag: f64,
}

fn gauss_sigma(fwhm: f64) -> f64 {
    fwhm / (2.0 * (2.0 * LN_2).sqrt())
}

/// Primitive ∫₀ˣ of a single tooth centred at 0. Cell averages come from
/// differences of this, which keeps sharp edges area-exact on any grid.
#[derive(Debug, Clone, Copy)]
enum Tooth {
    Square { half: f64, h: f64 },
    Gaussian { sigma: f64, h: f64 },
    Lorentzian { g: f64, h: f64 },
    SquareGauss { half: f64, sigma: f64, h: f64 },
    SquareLorentz { half: f64, g: f64, h: f64 },
}

impl Tooth {
    fn primitive(&self, x: f64) -> f64 {
        match *self {
            Tooth::Square { half, h } => h * x.clamp(-half, half),
            Tooth::Gaussian { sigma, h } => {
                h * sigma * (PI / 2.0).sqrt() * libm::erf(x / (sigma * 2f64.sqrt()))
            }
            Tooth::Lorentzian { g, h } => h * g * (x / g).atan(),
            Tooth::SquareGauss { half, sigma, h } => {
                // ∫ [Φ(s + a/2) − Φ(s − a/2)] ds with Φ the kernel CDF
                let big = |u: f64| {
                    let z = u / (sigma * 2f64.sqrt());
                    0.5 * u * libm::erf(z) + sigma / (TAU).sqrt() * (-z * z).exp()
                };
                h * (big(x + half) - big(x - half) - big(half) + big(-half))
            }
            Tooth::SquareLorentz { half, g, h } => {
                let big = |u: f64| (u * (u / g).atan() - 0.5 * g * (u * u + g * g).ln()) / PI;
                h * (big(x + half) - big(x - half) - big(half) + big(-half))
            }
        }
    }

    /// Distance beyond which the tooth contributes nothing measurable.
    fn reach(&self) -> f64 {
        match *self {
            Tooth::Square { half, .. } => half,
            Tooth::Gaussian { sigma, .. } => 40.0 * sigma,
            Tooth::SquareGauss { half, sigma, .. } => half + 40.0 * sigma,
            Tooth::Lorentzian { .. } | Tooth::SquareLorentz { .. } => f64::INFINITY,
        }
    }
}

fn validate(p: &CombParams) -> Result<()> {
    ensure_positive("delta_hz", p.delta_hz)?;
    ensure_non_negative("d_peak", p.d_peak)?;
    ensure_non_negative("d0", p.d0)?;
    if !(p.finesse >= 1.0) || !p.finesse.is_finite() {
        return Err(Error::invalid(format!("finesse must be >= 1, got {}", p.finesse)));
    }
    ensure_positive("bandwidth_hz", p.bandwidth_hz)?;
    if p.bandwidth_hz < 10.0 * p.delta_hz * (1.0 - 1e-12) {
        return Err(Error::invalid(format!(
            "bandwidth {} Hz is below 10 comb periods ({} Hz)",
            p.bandwidth_hz,
            10.0 * p.delta_hz
        )));
    }
    if p.samples_per_period < MIN_SAMPLES_PER_PERIOD {
        return Err(Error::Resolution {
            samples_per_period: p.samples_per_period,
            required: MIN_SAMPLES_PER_PERIOD,
        });
    }
    if let Some(f) = p.tooth_fwhm_hz {
        ensure_positive("tooth_fwhm_hz", f)?;
    }
    if let Some(b) = p.broadening {
        if p.tooth_shape != ToothShape::Square {
            return Err(Error::invalid("broadening applies to square teeth only"));
        }
        if b.shape == ToothShape::Square {
            return Err(Error::invalid("broadening kernel must be gaussian or lorentzian"));
        }
        ensure_non_negative("broadening fwhm_hz", b.fwhm_hz)?;
    }
    Ok(())
}

pub fn build_comb(p: &CombParams) -> Result<CombProfile> {
    validate(p)?;
    let width = p.delta_hz / p.finesse;
    let fwhm = p.tooth_fwhm_hz.unwrap_or(width);
    let tooth = match (p.tooth_shape, p.broadening) {
        (ToothShape::Square, None) => Tooth::Square { half: width / 2.0, h: p.d_peak },
        (ToothShape::Square, Some(b)) if b.fwhm_hz == 0.0 => {
            Tooth::Square { half: width / 2.0, h: p.d_peak }
        }
        (ToothShape::Square, Some(b)) => match b.shape {
            ToothShape::Gaussian => Tooth::SquareGauss {
                half: width / 2.0,
                sigma: gauss_sigma(b.fwhm_hz),
                h: p.d_peak,
            },
            _ => Tooth::SquareLorentz { half: width / 2.0, g: b.fwhm_hz / 2.0, h: p.d_peak },
        },
        (ToothShape::Gaussian, _) => Tooth::Gaussian { sigma: gauss_sigma(fwhm), h: p.d_peak },
        (ToothShape::Lorentzian, _) => Tooth::Lorentzian { g: fwhm / 2.0, h: p.d_peak },
    };

    let n = p.samples_per_period;
    let h = p.delta_hz / n as f64;
    let m = ((p.bandwidth_hz / 2.0) / h).round() as i64;
    let n_teeth = ((p.bandwidth_hz / 2.0) / p.delta_hz + 1e-9).floor() as i64;
    let reach = tooth.reach();
    let detuning: Vec<f64> = (-m..=m).map(|j| j as f64 * h).collect();
    let depth: Vec<f64> = detuning
        .par_iter()
        .map(|&x| {
            let (lo, hi) = if reach.is_finite() {
                (
                    (((x - reach - h) / p.delta_hz).floor() as i64).max(-n_teeth),
                    (((x + reach + h) / p.delta_hz).ceil() as i64).min(n_teeth),
                )
            } else {
                (-n_teeth, n_teeth)
            };
            let mut acc = 0.0;
            for k in lo..=hi {
                let c = k as f64 * p.delta_hz;
                acc += tooth.primitive(x + 0.5 * h - c) - tooth.primitive(x - 0.5 * h - c);
            }
            p.d0 + (acc / h).max(0.0)
        })
        .collect();

    let finesse = match p.tooth_shape {
        ToothShape::Square => p.finesse,
        _ => p.delta_hz / fwhm,
    };
    Ok(CombProfile {
        delta_hz: p.delta_hz,
        d_peak: p.d_peak,
        finesse,
        d0: p.d0,
        bandwidth_hz: p.bandwidth_hz,
        tooth_shape: p.tooth_shape,
        tooth_fwhm_hz: match p.tooth_shape {
            ToothShape::Square => None,
            _ => Some(fwhm),
        },
        broadening: p.broadening,
        detuning_hz: detuning,
        depth,
    })
}

impl CombProfile {
    /// Wraps measured or previously exported samples. `d0` and `d_peak` are
    /// inferred from the minimum and maximum.
    pub fn from_samples(delta_hz: f64, detuning_hz: Vec<f64>, depth: Vec<f64>) -> Result<Self> {
        ensure_positive("delta_hz", delta_hz)?;
        if detuning_hz.len() != depth.len() || detuning_hz.len() < 2 {
            return Err(Error::invalid("detuning and depth must have equal length >= 2"));
        }
        if depth.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::invalid("optical depth must be finite and non-negative"));
        }
        let step = detuning_hz[1] - detuning_hz[0];
        if !(step > 0.0) || detuning_hz.windows(2).any(|w| ((w[1] - w[0]) / step - 1.0).abs() > 1e-6) {
            return Err(Error::invalid("detuning grid must be uniform and increasing"));
        }
        let d0 = depth.iter().cloned().fold(f64::INFINITY, f64::min);
        let dmax = depth.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = detuning_hz[detuning_hz.len() - 1] - detuning_hz[0];
        Ok(CombProfile {
            delta_hz,
            d_peak: dmax - d0,
            finesse: f64::NAN,
            d0,
            bandwidth_hz: span,
            tooth_shape: ToothShape::Square,
            tooth_fwhm_hz: None,
            broadening: None,
            detuning_hz,
            depth,
        })
    }

    pub fn grid_step(&self) -> f64 {
        self.detuning_hz[1] - self.detuning_hz[0]
    }

    pub fn samples_per_period(&self) -> f64 {
        self.delta_hz / self.grid_step()
    }

    pub fn min_depth(&self) -> f64 {
        self.depth.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_depth(&self) -> f64 {
        self.depth.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Linear interpolation; clamps outside the sampled span.
    pub fn depth_at(&self, delta: f64) -> f64 {
        let h = self.grid_step();
        let x = (delta - self.detuning_hz[0]) / h;
        if x <= 0.0 {
            return self.depth[0];
        }
        let i = x.floor() as usize;
        if i + 1 >= self.depth.len() {
            return *self.depth.last().unwrap();
        }
        let f = x - i as f64;
        self.depth[i] * (1.0 - f) + self.depth[i + 1] * f
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(
            &["detuning_Hz", "optical_depth"],
            vec![self.detuning_hz.clone(), self.depth.clone()],
        )
        .with_meta("delta_hz", self.delta_hz)
        .with_meta("d_peak", self.d_peak)
        .with_meta("d0", self.d0)
        .with_meta("tooth_shape", format!("{:?}", self.tooth_shape).to_lowercase());
        if self.finesse.is_finite() {
            t = t.with_meta("finesse", self.finesse);
        }
        t
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_table().write(path)
    }

    /// Reads a two-column export; Δ comes from the `delta_hz` metadata line
    /// unless given explicitly.
    pub fn read_csv(path: impl AsRef<Path>, delta_hz: Option<f64>) -> Result<Self> {
        let t = Table::read(path)?;
        if t.columns.len() != 2 {
            return Err(Error::invalid(format!(
                "comb CSV needs 2 columns, found {}",
                t.columns.len()
            )));
        }
        let delta = match delta_hz {
            Some(d) => d,
            None => t
                .meta
                .get("delta_hz")
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::invalid("comb CSV lacks `# delta_hz=` and none was given"))?,
        };
        let mut c = Self::from_samples(delta, t.columns[0].clone(), t.columns[1].clone())?;
        if let Some(f) = t.meta.get("finesse").and_then(|v| v.parse().ok()) {
            c.finesse = f;
        }
        if let Some(s) = t.meta.get("tooth_shape").and_then(|v| v.parse().ok()) {
            c.tooth_shape = s;
        }
        Ok(c)
    }
}

pub fn optimal_finesse(d: f64) -> Result<f64> {
    ensure_positive("optical depth d", d)?;
    Ok(PI / (TAU / d).atan())
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// First-echo efficiency of a square-tooth comb.
pub fn analytic_efficiency(d: f64, finesse: f64, d0: f64) -> Result<f64> {
    ensure_non_negative("optical depth d", d)?;
    ensure_non_negative("d0", d0)?;
    if !(finesse >= 1.0) || !finesse.is_finite() {
        return Err(Error::invalid(format!("finesse must be >= 1, got {finesse}")));
    }
    let s = sinc(PI / finesse);
    Ok((d / finesse).powi(2) * s * s * (-d / finesse - d0).exp())
}

/// Efficiency from the Fourier coefficients of one central period.
pub fn fourier_efficiency(comb: &CombProfile) -> Result<EchoEfficiency> {
    let h = comb.grid_step();
    let spp = comb.delta_hz / h;
    if spp + 1e-9 < MIN_SAMPLES_PER_PERIOD as f64 {
        return Err(Error::Resolution {
            samples_per_period: spp.floor() as usize,
            required: MIN_SAMPLES_PER_PERIOD,
        });
    }
    let n = spp.round() as usize;
    let uniform_periods = (spp - n as f64).abs() < 1e-6 * spp;
    let (c0, c1) = if uniform_periods {
        // rectangle rule over an exact period is the trapezoid rule for periodic data
        let j0 = comb
            .detuning_hz
            .iter()
            .position(|&x| x >= -comb.delta_hz / 2.0 - 1e-9 * h)
            .unwrap_or(0);
        if j0 + n > comb.depth.len() {
            return Err(Error::invalid("profile spans less than one comb period"));
        }
        let mut c0 = 0.0;
        let mut c1 = Complex64::new(0.0, 0.0);
        for j in j0..j0 + n {
            let ph = -TAU * comb.detuning_hz[j] / comb.delta_hz;
            c0 += comb.depth[j];
            c1 += comb.depth[j] * Complex64::from_polar(1.0, ph);
        }
        (c0 / n as f64, c1 / n as f64)
    } else {
        // non-commensurate grid: resample one period by linear interpolation
        let n = (4.0 * spp).ceil() as usize;
        let mut c0 = 0.0;
        let mut c1 = Complex64::new(0.0, 0.0);
        for j in 0..n {
            let x = -comb.delta_hz / 2.0 + (j as f64 + 0.5) * comb.delta_hz / n as f64;
            let d = comb.depth_at(x);
            c0 += d;
            c1 += d * Complex64::from_polar(1.0, -TAU * x / comb.delta_hz);
        }
        (c0 / n as f64, c1 / n as f64)
    };
    let c1_mag = c1.norm();
    Ok(EchoEfficiency {
        eta: c1_mag * c1_mag * (-c0).exp(),
        c0,
        c1_mag,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DelayDecay {
    Single { t2_star_s: f64 },
    /// `w·exp(−4τ/T_a) + (1−w)·exp(−4τ/T_b)`
    Double { weight: f64, t_a_s: f64, t_b_s: f64 },
}

impl DelayDecay {
    pub fn factor(&self, inv_delta_s: f64) -> f64 {
        match *self {
            DelayDecay::Single { t2_star_s } => (-4.0 * inv_delta_s / t2_star_s).exp(),
            DelayDecay::Double { weight, t_a_s, t_b_s } => {
                weight * (-4.0 * inv_delta_s / t_a_s).exp()
                    + (1.0 - weight) * (-4.0 * inv_delta_s / t_b_s).exp()
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            DelayDecay::Single { t2_star_s } => ensure_positive("t2_star_s", t2_star_s).map(|_| ()),
            DelayDecay::Double { weight, t_a_s, t_b_s } => {
                ensure_positive("t_a_s", t_a_s)?;
                ensure_positive("t_b_s", t_b_s)?;
                if !(0.0..=1.0).contains(&weight) {
                    return Err(Error::invalid(format!("weight must lie in [0, 1], got {weight}")));
                }
                Ok(())
            }
        }
    }
}

/// η(1/Δ) at the optimal finesse for `d`, times the delay decay.
pub fn efficiency_vs_delay(d: f64, d0: f64, decay: &DelayDecay, delays_s: &[f64]) -> Result<Vec<f64>> {
    decay.validate()?;
    let eta0 = analytic_efficiency(d, optimal_finesse(d)?, d0)?;
    delays_s
        .iter()
        .map(|&tau| {
            ensure_positive("delay", tau)?;
            Ok(eta0 * decay.factor(tau))
        })
        .collect()
}

/// Weight of the fast component so that the two-component curve passes
/// through `eta_target` at `tau_s`.
pub fn weight_for_target(eta0: f64, t_a_s: f64, t_b_s: f64, tau_s: f64, eta_target: f64) -> Result<f64> {
    let fa = (-4.0 * tau_s / t_a_s).exp();
    let fb = (-4.0 * tau_s / t_b_s).exp();
    let w = (eta_target / eta0 - fb) / (fa - fb);
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::invalid(format!(
            "no weight in [0, 1] reaches {eta_target} at {tau_s} s (got {w})"
        )));
    }
    Ok(w)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BroadenedDecay {
    /// Effective T₂*; infinite when no decay is resolvable.
    pub t2_star_s: f64,
    pub delays_s: Vec<f64>,
    pub eta: Vec<f64>,
    pub fit: Option<FitResult>,
}

/// Square teeth of optimal finesse convolved with a `shape` kernel of width
/// `fwhm_hz`; the Fourier efficiency over `delays_s` is fitted to
/// `A·exp(−4τ/T₂*)`.
pub fn broadened_comb_decay(
    d: f64,
    d0: f64,
    shape: ToothShape,
    fwhm_hz: f64,
    delays_s: &[f64],
) -> Result<BroadenedDecay> {
    if shape == ToothShape::Square {
        return Err(Error::invalid("broadening kernel must be gaussian or lorentzian"));
    }
    ensure_non_negative("fwhm_hz", fwhm_hz)?;
    if delays_s.len() < 4 {
        return Err(Error::invalid("need at least 4 delays"));
    }
    let finesse = optimal_finesse(d)?;
    let eta: Vec<f64> = delays_s
        .par_iter()
        .map(|&tau| {
            ensure_positive("delay", tau)?;
            let delta = 1.0 / tau;
            let comb = build_comb(&CombParams {
                delta_hz: delta,
                d_peak: d,
                finesse,
                d0,
                bandwidth_hz: 40.0 * delta,
                tooth_shape: ToothShape::Square,
                tooth_fwhm_hz: None,
                broadening: Some(Broadening { shape, fwhm_hz }),
                samples_per_period: DEFAULT_SAMPLES_PER_PERIOD,
            })?;
            Ok(fourier_efficiency(&comb)?.eta)
        })
        .collect::<Result<_>>()?;

    let max = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eta.iter().cloned().fold(f64::INFINITY, f64::min);
    if max - min <= 1e-9 * max {
        return Ok(BroadenedDecay {
            t2_star_s: f64::INFINITY,
            delays_s: delays_s.to_vec(),
            eta,
            fit: None,
        });
    }
    match analysis::fit_exp(delays_s, &eta) {
        Ok(fit) => {
            let fit = fit.require_converged()?;
            Ok(BroadenedDecay {
                t2_star_s: 4.0 * fit.get("T").unwrap(),
                delays_s: delays_s.to_vec(),
                eta,
                fit: Some(fit),
            })
        }
        Err(Error::NonIdentifiable(_)) => Ok(BroadenedDecay {
            t2_star_s: f64::INFINITY,
            delays_s: delays_s.to_vec(),
            eta,
            fit: None,
        }),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square(d: f64, f: f64, d0: f64) -> CombProfile {
        build_comb(&CombParams {
            d_peak: d,
            finesse: f,
            d0,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn square_comb_extremes() {
        let c = square(4.0, 3.13, 0.3);
        assert!((c.max_depth() - 4.3).abs() < 1e-12);
        assert!((c.min_depth() - 0.3).abs() < 1e-12);
        let flat = square(0.0, 3.13, 0.7);
        assert!(flat.depth.iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn build_rejects_bad_input() {
        let bad = |p: CombParams| build_comb(&p).is_err();
        assert!(bad(CombParams { finesse: 0.5, ..Default::default() }));
        assert!(bad(CombParams { bandwidth_hz: 5e6, ..Default::default() }));
        assert!(bad(CombParams { d0: -0.1, ..Default::default() }));
        assert!(bad(CombParams { d_peak: -1.0, ..Default::default() }));
        assert!(matches!(
            build_comb(&CombParams { samples_per_period: 32, ..Default::default() }),
            Err(Error::Resolution { .. })
        ));
    }

    #[test]
    fn optimal_finesse_values() {
        // π/atan(2π/4)
        assert!((optimal_finesse(4.0).unwrap() - 3.129_435_355).abs() < 1e-8);
        assert!((optimal_finesse(1e-9).unwrap() - 2.0).abs() < 1e-6);
        // atan(2π/d) = π/3 needs d = 2π/tan(π/3); 2π·tan(π/3) lands on F = 6
        let d3 = TAU / (PI / 3.0).tan();
        assert!((optimal_finesse(d3).unwrap() - 3.0).abs() < 1e-12);
        let d6 = TAU * (PI / 3.0).tan();
        assert!((optimal_finesse(d6).unwrap() - 6.0).abs() < 1e-12);
        assert!(optimal_finesse(0.0).is_err());
    }

    #[test]
    fn analytic_reference_values() {
        let f = optimal_finesse(4.0).unwrap();
        let e = analytic_efficiency(4.0, f, 0.0).unwrap();
        assert!((e - 0.3200).abs() < 0.003, "{e}");
        let e3 = analytic_efficiency(4.0, f, 0.3).unwrap();
        assert!((e3 - 0.237).abs() < 0.003, "{e3}");
        assert_eq!(analytic_efficiency(0.0, 3.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn fourier_matches_analytic_at_d4() {
        let f = optimal_finesse(4.0).unwrap();
        let e = fourier_efficiency(&square(4.0, f, 0.0)).unwrap();
        assert!((e.eta - 0.32).abs() < 0.005);
        let flat = fourier_efficiency(&square(0.0, 3.0, 1.0)).unwrap();
        assert!(flat.eta < 1e-25 && (flat.c0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fourier_grid_sweep() {
        for d in [0.5, 1.0, 2.0, 4.0, 8.0] {
            for f in [1.5, 2.0, 3.0, 5.0] {
                let num = fourier_efficiency(&square(d, f, 0.2)).unwrap().eta;
                let ana = analytic_efficiency(d, f, 0.2).unwrap();
                assert!((num / ana - 1.0).abs() < 1e-3, "d={d} F={f}: {num} vs {ana}");
            }
        }
    }

    #[test]
    fn coarse_profile_is_rejected() {
        let mut c = square(4.0, 3.0, 0.0);
        let keep: Vec<usize> = (0..c.depth.len()).step_by(32).collect();
        c.detuning_hz = keep.iter().map(|&i| c.detuning_hz[i]).collect();
        c.depth = keep.iter().map(|&i| c.depth[i]).collect();
        assert!(matches!(fourier_efficiency(&c), Err(Error::Resolution { .. })));
    }

    #[test]
    fn supremum_constant() {
        assert!((FORWARD_RECALL_SUPREMUM - 4.0 * (-2.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn delay_decay_limits() {
        let d = DelayDecay::Single { t2_star_s: 20e-6 };
        let e = efficiency_vs_delay(4.0, 0.0, &d, &[1e-12, 5e-6]).unwrap();
        let e0 = analytic_efficiency(4.0, optimal_finesse(4.0).unwrap(), 0.0).unwrap();
        assert!((e[0] / e0 - 1.0).abs() < 1e-6);
        assert!((e[1] / e0 - (-1.0f64).exp()).abs() < 1e-12);
        assert!(efficiency_vs_delay(4.0, 0.0, &d, &[0.0]).is_err());
    }

    #[test]
    fn two_component_decay_round_trip() {
        let decay = DelayDecay::Double { weight: 0.4, t_a_s: 15e-6, t_b_s: 165e-6 };
        let delays: Vec<f64> = (1..=60).map(|i| i as f64 * 1e-6).collect();
        let eta = efficiency_vs_delay(4.0, 0.3, &decay, &delays).unwrap();
        let f = analysis::fit_double_exp(&delays, &eta).unwrap();
        // fitted time constants are T₂′/4
        assert!((4.0 * f.get("T1").unwrap() / 15e-6 - 1.0).abs() < 0.01);
        assert!((4.0 * f.get("T2").unwrap() / 165e-6 - 1.0).abs() < 0.01);
    }

    #[test]
    fn lorentzian_broadening_gives_exponential_decay() {
        let delays: Vec<f64> = (1..=10).map(|i| i as f64 * 1e-6).collect();
        let a = broadened_comb_decay(4.0, 0.0, ToothShape::Lorentzian, 20e3, &delays).unwrap();
        let b = broadened_comb_decay(4.0, 0.0, ToothShape::Lorentzian, 40e3, &delays).unwrap();
        // Lorentzian kernel multiplies |c1|² by exp(−2πγτ): T₂* = 2/(πγ)
        assert!((a.t2_star_s / (2.0 / (PI * 20e3)) - 1.0).abs() < 0.01, "{}", a.t2_star_s);
        assert!((a.t2_star_s / b.t2_star_s - 2.0).abs() < 0.2);
    }

    #[test]
    fn broadening_order_and_limits() {
        let delays: Vec<f64> = (1..=10).map(|i| i as f64 * 1e-6).collect();
        let sq = broadened_comb_decay(4.0, 0.0, ToothShape::Gaussian, 0.0, &delays).unwrap();
        assert!(sq.t2_star_s.is_infinite());
        let g1 = broadened_comb_decay(4.0, 0.0, ToothShape::Gaussian, 30e3, &delays).unwrap();
        let g2 = broadened_comb_decay(4.0, 0.0, ToothShape::Gaussian, 60e3, &delays).unwrap();
        assert!(g2.t2_star_s < g1.t2_star_s);
        assert!(broadened_comb_decay(4.0, 0.0, ToothShape::Square, 1e3, &delays).is_err());
    }

    #[test]
    fn smooth_teeth_are_periodic_and_peaked() {
        for shape in [ToothShape::Gaussian, ToothShape::Lorentzian] {
            let c = build_comb(&CombParams {
                tooth_shape: shape,
                tooth_fwhm_hz: Some(100e3),
                d0: 0.5,
                ..Default::default()
            })
            .unwrap();
            let n = DEFAULT_SAMPLES_PER_PERIOD;
            let mid = c.depth.len() / 2;
            assert!((c.depth[mid] - 4.5).abs() < 0.05, "{shape:?} {}", c.depth[mid]);
            for j in mid - n..mid {
                assert!((c.depth[j] - c.depth[j + n]).abs() < 5e-3);
            }
            assert!(c.min_depth() >= 0.5);
        }
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("comb.csv");
        let c = build_comb(&CombParams {
            delta_hz: 200e3,
            d_peak: 4.0,
            d0: 0.5,
            bandwidth_hz: 4e6,
            ..Default::default()
        })
        .unwrap();
        c.write_csv(&path).unwrap();
        let back = CombProfile::read_csv(&path, None).unwrap();
        assert_eq!(back.depth, c.depth);
        assert_eq!(back.detuning_hz, c.detuning_hz);
        assert_eq!(
            fourier_efficiency(&back).unwrap(),
            fourier_efficiency(&c).unwrap()
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn fourier_equals_analytic(d in 0.2f64..12.0, f in 1.2f64..8.0, d0 in 0.0f64..2.0) {
            let num = fourier_efficiency(&square(d, f, d0)).unwrap().eta;
            let ana = analytic_efficiency(d, f, d0).unwrap();
            prop_assert!((num / ana - 1.0).abs() < 0.01);
        }

        #[test]
        fn bounded_by_supremum(d in 0.0f64..1e3, f in 1.0f64..50.0, d0 in 0.0f64..5.0) {
            let e = analytic_efficiency(d, f, d0).unwrap();
            prop_assert!((0.0..=FORWARD_RECALL_SUPREMUM).contains(&e));
        }

        #[test]
        fn background_is_a_pure_factor(d in 0.1f64..10.0, f in 1.0f64..6.0, d0 in 0.0f64..3.0) {
            let a = analytic_efficiency(d, f, 0.0).unwrap();
            let b = analytic_efficiency(d, f, d0).unwrap();
            prop_assert!((b - a * (-d0).exp()).abs() <= 1e-14 * a.max(1e-300));
        }

        #[test]
        fn argmax_is_optimal_finesse(d in 0.5f64..10.0, d0 in 0.0f64..1.0) {
            let (mut best_f, mut best) = (1.0, -1.0);
            let mut f = 1.0;
            while f <= 10.0 {
                let e = analytic_efficiency(d, f, d0).unwrap();
                if e > best { best = e; best_f = f; }
                f += 0.001;
            }
            prop_assert!((best_f - optimal_finesse(d).unwrap()).abs() < 0.01);
        }

        #[test]
        fn profile_above_background(d in 0.0f64..10.0, f in 1.0f64..10.0, d0 in 0.0f64..2.0) {
            let c = square(d, f, d0);
            prop_assert!(c.depth.iter().all(|&v| v >= d0 && v >= 0.0));
        }
    }
}
