//! Rate-equation model of spectral hole burning and state preparation.
//!
//! Ions are grouped into classes by the frequency of their ν₁ transition
//! (`center_offset_hz`, relative to the ν₁ laser). A laser line pumps a
//! class whenever one of its sixteen transitions falls under the line. The
//! excited state is eliminated adiabatically: excitation out of a ground state
//! and decay through the branching ratios form one rate term.

use std::f64::consts::LN_2;
use std::path::Path;

use nalgebra::{Matrix4, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{self, FitResult};
use crate::error::{ensure_non_negative, ensure_positive, Error, Result};
use crate::io::Table;
use crate::physcore::{default_scheme, HyperfineLevels, LevelScheme, Line, StrengthTable, N_LEVELS};

/// Symmetric ground-state relaxation rates k[i][j] (1/s), 0-based levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxationRates {
    pub k: [[f64; N_LEVELS]; N_LEVELS],
}

impl RelaxationRates {
    pub fn zero() -> Self {
        RelaxationRates { k: [[0.0; N_LEVELS]; N_LEVELS] }
    }

    /// Fast rate on |4⟩↔|3⟩ and |1⟩↔|2⟩, slow rate on |4⟩↔|2⟩ and |1⟩↔|3⟩.
    pub fn two_rate(fast: f64, slow: f64) -> Self {
        let mut k = [[0.0; N_LEVELS]; N_LEVELS];
        let mut set = |a: usize, b: usize, r: f64| {
            k[a - 1][b - 1] = r;
            k[b - 1][a - 1] = r;
        };
        set(4, 3, fast);
        set(1, 2, fast);
        set(4, 2, slow);
        set(1, 3, slow);
        RelaxationRates { k }
    }

    /// Rates whose population modes decay at 2s, 2f and 2(f+s); the slow mode
    /// is matched to `tau_slow` and the two fast modes straddle `tau_fast`.
    pub fn from_decay_times(tau_fast_s: f64, tau_slow_s: f64) -> Result<Self> {
        ensure_positive("tau_fast_s", tau_fast_s)?;
        ensure_positive("tau_slow_s", tau_slow_s)?;
        let slow = 1.0 / (2.0 * tau_slow_s);
        let fast = 0.5 * (1.0 / tau_fast_s - slow);
        if fast <= slow {
            return Err(Error::invalid(format!(
                "tau_fast {tau_fast_s:e} s is too close to tau_slow {tau_slow_s:e} s"
            )));
        }
        Ok(Self::two_rate(fast, slow))
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..N_LEVELS {
            for j in 0..N_LEVELS {
                let v = self.k[i][j];
                ensure_non_negative("relaxation rate", v)?;
                if (v - self.k[j][i]).abs() > 1e-12 * v.abs().max(self.k[j][i].abs()) {
                    return Err(Error::invalid(format!(
                        "relaxation matrix must be symmetric (k[{}][{}] = {v}, k[{}][{}] = {})",
                        i + 1,
                        j + 1,
                        j + 1,
                        i + 1,
                        self.k[j][i]
                    )));
                }
            }
        }
        Ok(())
    }

    fn generator(&self) -> Matrix4<f64> {
        let mut a = Matrix4::zeros();
        for i in 0..N_LEVELS {
            for j in 0..N_LEVELS {
                if i != j {
                    a[(i, j)] += self.k[i][j];
                    a[(j, j)] -= self.k[i][j];
                }
            }
        }
        a
    }
}

impl Default for RelaxationRates {
    fn default() -> Self {
        Self::from_decay_times(36e-3, 390e-3).expect("valid defaults")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PumpLine {
    pub line: Line,
    /// Optical pumping rate for a transition of unit relative strength, 1/s.
    pub rate_per_s: f64,
    /// Width of the scanned top-hat, Hz.
    pub scan_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PumpStage {
    pub name: String,
    pub lines: Vec<PumpLine>,
    pub duration_s: f64,
}

pub const DEFAULT_PUMP_RATE: f64 = 1e4;
pub const DEFAULT_SCAN_HZ: f64 = 4e6;

impl PumpStage {
    pub fn new(name: &str, lines: &[Line], duration_s: f64) -> Self {
        PumpStage {
            name: name.to_owned(),
            lines: lines
                .iter()
                .map(|&line| PumpLine {
                    line,
                    rate_per_s: DEFAULT_PUMP_RATE,
                    scan_hz: DEFAULT_SCAN_HZ,
                })
                .collect(),
            duration_s,
        }
    }

    /// Class cleaning with ν₁–ν₄ followed by initialization with ν₂–ν₄.
    pub fn default_sequence() -> Vec<PumpStage> {
        vec![
            PumpStage::new("class-cleaning", &Line::ALL, 0.4),
            PumpStage::new("initialization", &[Line::Nu2, Line::Nu3, Line::Nu4], 0.3),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PumpConfig {
    pub stages: Vec<PumpStage>,
    pub inhom_fwhm_hz: f64,
    pub homogeneous_fwhm_hz: f64,
    pub relaxation: RelaxationRates,
    pub class_step_hz: f64,
    /// Half-width of the class window kept around every resonance.
    pub window_hz: f64,
    /// Peak optical depth of the unprepared line at ν₁.
    pub reference_depth: f64,
    pub step_s: f64,
}

impl Default for PumpConfig {
    fn default() -> Self {
        PumpConfig {
            stages: PumpStage::default_sequence(),
            inhom_fwhm_hz: 1.3e9,
            homogeneous_fwhm_hz: 50e3,
            relaxation: RelaxationRates::default(),
            class_step_hz: 0.5e6,
            window_hz: 30e6,
            reference_depth: 4.5,
            step_s: 1e-3,
        }
    }
}

impl PumpConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_positive("inhom_fwhm_hz", self.inhom_fwhm_hz)?;
        ensure_positive("homogeneous_fwhm_hz", self.homogeneous_fwhm_hz)?;
        ensure_positive("class_step_hz", self.class_step_hz)?;
        ensure_positive("window_hz", self.window_hz)?;
        ensure_non_negative("reference_depth", self.reference_depth)?;
        ensure_positive("step_s", self.step_s)?;
        self.relaxation.validate()?;
        for s in &self.stages {
            ensure_non_negative("stage duration_s", s.duration_s)?;
            for l in &s.lines {
                ensure_non_negative("pump rate_per_s", l.rate_per_s)?;
                ensure_non_negative("scan_hz", l.scan_hz)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralClass {
    pub center_offset_hz: f64,
    pub populations: [f64; N_LEVELS],
}

/// Classes on the grid k·step, sorted by k.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassSet {
    pub step_hz: f64,
    keys: Vec<i64>,
    pub classes: Vec<SpectralClass>,
}

impl ClassSet {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn get(&self, offset_hz: f64) -> Option<&SpectralClass> {
        let k = (offset_hz / self.step_hz).round() as i64;
        self.keys.binary_search(&k).ok().map(|i| &self.classes[i])
    }

    /// Populations at an arbitrary offset, linearly interpolated between
    /// neighbouring classes; thermal where no class was tracked.
    pub fn populations_at(&self, offset_hz: f64) -> [f64; N_LEVELS] {
        let thermal = [1.0 / N_LEVELS as f64; N_LEVELS];
        let x = offset_hz / self.step_hz;
        let k0 = x.floor() as i64;
        let f = x - k0 as f64;
        let look = |k: i64| {
            self.keys
                .binary_search(&k)
                .map(|i| self.classes[i].populations)
                .unwrap_or(thermal)
        };
        let (a, b) = (look(k0), look(k0 + 1));
        let mut out = [0.0; N_LEVELS];
        for g in 0..N_LEVELS {
            out[g] = a[g] * (1.0 - f) + b[g] * f;
        }
        out
    }

    pub fn max_conservation_error(&self) -> f64 {
        self.classes
            .iter()
            .map(|c| (c.populations.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Multiplies all populations; used to probe linearity of the spectrum.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for c in &mut out.classes {
            for p in &mut c.populations {
                *p *= factor;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HoleTrace {
    pub times_s: Vec<f64>,
    /// Excess optical depth at ν₁ over the unprepared line.
    pub antihole_depth: Vec<f64>,
    /// Missing optical depth at ν₂ relative to the unprepared line.
    pub hole_depth: Vec<f64>,
}

impl HoleTrace {
    pub fn to_table(&self) -> Table {
        Table::new(
            &["time_s", "antihole_depth", "hole_depth"],
            vec![self.times_s.clone(), self.antihole_depth.clone(), self.hole_depth.clone()],
        )
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_table().write(path)
    }

    pub fn fit_antihole(&self) -> Result<FitResult> {
        analysis::fit_double_exp(&self.times_s, &self.antihole_depth)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PumpModel {
    pub scheme: LevelScheme,
    pub levels: HyperfineLevels,
    pub strengths: StrengthTable,
    pub config: PumpConfig,
    /// Spectrum normalisation: depth per unit (strength × population × weight).
    scale: f64,
}

impl PumpModel {
    pub fn new(scheme: LevelScheme, strengths: StrengthTable, config: PumpConfig) -> Result<Self> {
        scheme.validate()?;
        strengths.validate()?;
        config.validate()?;
        let levels = HyperfineLevels::from_scheme(&scheme);
        let mut m = PumpModel {
            scheme,
            levels,
            strengths,
            config,
            scale: 1.0,
        };
        let unit = m.raw_depth(0.0, |_| [0.25; N_LEVELS]);
        m.scale = if unit > 0.0 { m.config.reference_depth / unit } else { 0.0 };
        Ok(m)
    }

    pub fn with_defaults() -> Self {
        Self::new(default_scheme(), StrengthTable::default(), PumpConfig::default())
            .expect("defaults are valid")
    }

    /// Relative inhomogeneous density at a transition offset. Each window
    /// is ≪ the line width, so the density is taken at the window centre.
    fn inhom_weight(&self, offset_hz: f64) -> f64 {
        let f = self.config.inhom_fwhm_hz;
        (-4.0 * LN_2 * offset_hz * offset_hz / (f * f)).exp()
    }

    fn raw_depth(&self, delta_hz: f64, pops: impl Fn(f64) -> [f64; N_LEVELS]) -> f64 {
        let mut d = 0.0;
        for g in 0..N_LEVELS {
            for e in 0..N_LEVELS {
                let f_ge = self.levels.offset0(g, e);
                let s = self.strengths.get0(g, e);
                if s == 0.0 {
                    continue;
                }
                let w = self.inhom_weight(f_ge);
                if w < 1e-300 {
                    continue;
                }
                d += s * w * pops(delta_hz - f_ge)[g];
            }
        }
        d
    }

    fn laser_offset(&self, line: Line) -> f64 {
        self.scheme.offset(line)
    }

    /// Thermal classes covering every window where a laser line, or the
    /// probe around ν₁ or ν₂, meets one of the sixteen transitions.
    pub fn initial_classes(&self) -> ClassSet {
        let h = self.config.class_step_hz;
        let w = self.config.window_hz;
        let mut keys = std::collections::BTreeSet::new();
        for line in Line::ALL {
            let l = self.laser_offset(line);
            for g in 0..N_LEVELS {
                for e in 0..N_LEVELS {
                    let c = l - self.levels.offset0(g, e);
                    let lo = ((c - w) / h).floor() as i64;
                    let hi = ((c + w) / h).ceil() as i64;
                    keys.extend(lo..=hi);
                }
            }
        }
        let keys: Vec<i64> = keys.into_iter().collect();
        let classes = keys
            .iter()
            .map(|&k| SpectralClass {
                center_offset_hz: k as f64 * h,
                populations: [0.25; N_LEVELS],
            })
            .collect();
        ClassSet { step_hz: h, keys, classes }
    }

    /// Pump lineshape: flat over the scan, Lorentzian wings outside.
    fn pump_profile(&self, detuning_hz: f64, scan_hz: f64) -> f64 {
        let g = 0.5 * self.config.homogeneous_fwhm_hz;
        let x = (detuning_hz.abs() - 0.5 * scan_hz).max(0.0);
        g * g / (x * x + g * g)
    }

    fn generator(&self, center: f64, lines: &[PumpLine], relax: &Matrix4<f64>) -> Matrix4<f64> {
        let mut a = *relax;
        for pl in lines {
            if pl.rate_per_s == 0.0 {
                continue;
            }
            let l = self.laser_offset(pl.line);
            for g in 0..N_LEVELS {
                for e in 0..N_LEVELS {
                    let s = self.strengths.get0(g, e);
                    if s == 0.0 {
                        continue;
                    }
                    let det = center + self.levels.offset0(g, e) - l;
                    let r = pl.rate_per_s * s * self.pump_profile(det, pl.scan_hz);
                    if r < 1e-12 {
                        continue;
                    }
                    for gp in 0..N_LEVELS {
                        a[(gp, g)] += r * self.strengths.branching0(e, gp);
                    }
                    a[(g, g)] -= r;
                }
            }
        }
        a
    }

    /// Runs one stage with constant-generator exponential steps.
    pub fn evolve_populations(&self, classes: &ClassSet, stage: &PumpStage) -> Result<ClassSet> {
        ensure_non_negative("stage duration_s", stage.duration_s)?;
        if stage.duration_s == 0.0 {
            return Ok(classes.clone());
        }
        let n = (stage.duration_s / self.config.step_s).ceil().max(1.0) as usize;
        let dt = stage.duration_s / n as f64;
        let relax = self.config.relaxation.generator();
        let mut out = classes.clone();
        out.classes
            .par_iter_mut()
            .try_for_each(|c| -> Result<()> {
                let a = self.generator(c.center_offset_hz, &stage.lines, &relax);
                let step = (a * dt).exp();
                let mut p = Vector4::from_row_slice(&c.populations);
                for _ in 0..n {
                    p = step * p;
                    conserve(&mut p, c.center_offset_hz)?;
                }
                c.populations = [p[0], p[1], p[2], p[3]];
                Ok(())
            })?;
        Ok(out)
    }

    /// All configured stages, from thermal populations.
    pub fn prepare(&self) -> Result<ClassSet> {
        let mut c = self.initial_classes();
        for s in &self.config.stages {
            c = self.evolve_populations(&c, s)?;
        }
        Ok(c)
    }

    pub fn absorption_spectrum(&self, classes: &ClassSet, grid_hz: &[f64]) -> Vec<f64> {
        grid_hz
            .par_iter()
            .map(|&d| self.scale * self.raw_depth(d, |x| classes.populations_at(x)))
            .collect()
    }

    /// Free relaxation from `classes`, sampled at `probe_times_s`.
    pub fn hole_lifetime_trace(&self, classes: &ClassSet, probe_times_s: &[f64]) -> Result<HoleTrace> {
        if probe_times_s.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("probe times must be strictly increasing"));
        }
        if probe_times_s.iter().any(|&t| !(t >= 0.0) || !t.is_finite()) {
            return Err(Error::invalid("probe times must be finite and >= 0"));
        }
        let relax = self.config.relaxation.generator();
        let nu2 = self.laser_offset(Line::Nu2);
        let reference_nu1 = self.config.reference_depth;
        let reference_nu2 = self.scale * self.raw_depth(nu2, |_| [0.25; N_LEVELS]);
        let rows: Vec<(f64, f64)> = probe_times_s
            .par_iter()
            .map(|&t| {
                let e = (relax * t).exp();
                let mut c = classes.clone();
                for cl in &mut c.classes {
                    let p = e * Vector4::from_row_slice(&cl.populations);
                    cl.populations = [p[0], p[1], p[2], p[3]];
                }
                let d1 = self.scale * self.raw_depth(0.0, |x| c.populations_at(x));
                let d2 = self.scale * self.raw_depth(nu2, |x| c.populations_at(x));
                (d1 - reference_nu1, reference_nu2 - d2)
            })
            .collect();
        Ok(HoleTrace {
            times_s: probe_times_s.to_vec(),
            antihole_depth: rows.iter().map(|r| r.0).collect(),
            hole_depth: rows.iter().map(|r| r.1).collect(),
        })
    }

    /// Background optical depth left in a prepared window around ν₁: the
    /// minimum over `grid_hz`.
    pub fn background_depth(&self, classes: &ClassSet, grid_hz: &[f64]) -> f64 {
        self.absorption_spectrum(classes, grid_hz)
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }
}

fn conserve(p: &mut Vector4<f64>, center: f64) -> Result<()> {
    for v in p.iter_mut() {
        if *v < 0.0 {
            if *v < -1e-9 {
                return Err(Error::Integration {
                    time: 0.0,
                    detuning: Some(center),
                    reason: format!("population went negative ({v:e}); reduce step_s"),
                });
            }
            *v = 0.0;
        }
    }
    let s = p.sum();
    if !(s > 0.0) {
        return Err(Error::invalid("class lost all population"));
    }
    *p /= s;
    Ok(())
}

pub fn spectrum_table(grid_hz: &[f64], depth: &[f64]) -> Table {
    Table::new(&["detuning_Hz", "optical_depth"], vec![grid_hz.to_vec(), depth.to_vec()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bloch::uniform_grid;
    use proptest::prelude::*;

    fn model() -> PumpModel {
        PumpModel::with_defaults()
    }

    #[test]
    fn relaxation_modes() {
        let r = RelaxationRates::from_decay_times(36e-3, 390e-3).unwrap();
        let ev = r.generator().complex_eigenvalues();
        let mut rates: Vec<f64> = ev.iter().map(|z| -z.re).collect();
        rates.sort_by(f64::total_cmp);
        assert!(rates[0].abs() < 1e-9);
        assert!((1.0 / rates[1] - 0.390).abs() < 1e-9);
        // fast pair straddles 36 ms
        assert!(1.0 / rates[2] > 0.036 && 1.0 / rates[3] < 0.036);
        assert!(RelaxationRates::from_decay_times(0.4, 0.39).is_err());
    }

    #[test]
    fn initialization_reaches_state_four() {
        let m = model();
        let c = m.prepare().unwrap();
        let p = c.get(0.0).unwrap().populations;
        assert!(p[3] > 0.9, "{p:?}");
        assert!(c.max_conservation_error() < 1e-9);
    }

    #[test]
    fn zero_pump_is_identity() {
        let cfg = PumpConfig {
            relaxation: RelaxationRates::zero(),
            ..PumpConfig::default()
        };
        let m = PumpModel::new(default_scheme(), StrengthTable::default(), cfg).unwrap();
        let c0 = m.initial_classes();
        let mut stage = PumpStage::new("off", &Line::ALL, 0.1);
        for l in &mut stage.lines {
            l.rate_per_s = 0.0;
        }
        let c1 = m.evolve_populations(&c0, &stage).unwrap();
        assert_eq!(c0, c1);
    }

    #[test]
    fn strong_relaxation_thermalizes() {
        let m = model();
        let prepared = m.prepare().unwrap();
        let cfg = PumpConfig {
            relaxation: RelaxationRates::two_rate(1e5, 1e5),
            step_s: 1e-5,
            ..PumpConfig::default()
        };
        let fast = PumpModel::new(default_scheme(), StrengthTable::default(), cfg).unwrap();
        let mut stage = PumpStage::new("dark", &[], 0.01);
        stage.lines.clear();
        let c = fast.evolve_populations(&prepared, &stage).unwrap();
        for cl in &c.classes {
            for p in cl.populations {
                assert!((p - 0.25).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn unprepared_spectrum_is_flat_at_reference() {
        let m = model();
        let c = m.initial_classes();
        let grid = uniform_grid(-20e6, 20e6, 81);
        let d = m.absorption_spectrum(&c, &grid);
        assert!(d.iter().all(|&v| (v - 4.5).abs() < 1e-9));
    }

    #[test]
    fn prepared_spectrum_structure() {
        let m = model();
        let c = m.prepare().unwrap();
        let on = m.absorption_spectrum(&c, &[0.0])[0];
        assert!(on > 4.5, "antihole {on}");
        for line in [Line::Nu2, Line::Nu3, Line::Nu4] {
            let off = m.scheme.offset(line);
            let unprep = m.absorption_spectrum(&m.initial_classes(), &[off])[0];
            let prep = m.absorption_spectrum(&c, &[off])[0];
            assert!(prep < unprep, "{line:?}: {prep} vs {unprep}");
        }
    }

    #[test]
    fn spectrum_is_linear_and_non_negative() {
        let m = model();
        let c = m.prepare().unwrap();
        let grid = uniform_grid(-20e6, 20e6, 41);
        let a = m.absorption_spectrum(&c, &grid);
        let b = m.absorption_spectrum(&c.scaled(2.0), &grid);
        for (x, y) in a.iter().zip(&b) {
            assert!(*x >= 0.0);
            assert!((2.0 * x - y).abs() < 1e-12 * y.abs().max(1.0));
        }
    }

    #[test]
    fn hole_trace_limits() {
        let m = model();
        let c = m.prepare().unwrap();
        let tr = m.hole_lifetime_trace(&c, &[0.0, 50.0]).unwrap();
        assert!(tr.antihole_depth[0] > 0.5);
        assert!(tr.antihole_depth[1].abs() < 1e-9);
        assert!(tr.hole_depth[0] > 0.0);
        let cfg = PumpConfig {
            relaxation: RelaxationRates::zero(),
            ..PumpConfig::default()
        };
        let frozen = PumpModel::new(default_scheme(), StrengthTable::default(), cfg).unwrap();
        let tr = frozen.hole_lifetime_trace(&c, &[0.0, 0.1, 1.0]).unwrap();
        assert!(tr.antihole_depth.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-12));
        assert!(m.hole_lifetime_trace(&c, &[0.1, 0.0]).is_err());
    }

    #[test]
    fn hole_lifetimes_round_trip() {
        let m = model();
        let c = m.prepare().unwrap();
        let t = uniform_grid(0.0, 2.0, 400);
        let tr = m.hole_lifetime_trace(&c, &t).unwrap();
        let f = tr.fit_antihole().unwrap();
        assert!((f.get("T1").unwrap() / 0.036 - 1.0).abs() < 0.05, "{f:?}");
        assert!((f.get("T2").unwrap() / 0.390 - 1.0).abs() < 0.05);
    }

    #[test]
    fn rejects_asymmetric_relaxation() {
        let mut cfg = PumpConfig::default();
        cfg.relaxation.k[0][1] = 3.0;
        assert!(PumpModel::new(default_scheme(), StrengthTable::default(), cfg).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn uniform_is_a_fixed_point(k in proptest::array::uniform6(0.0f64..100.0)) {
            let mut r = RelaxationRates::zero();
            let pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
            for (&(i, j), &v) in pairs.iter().zip(&k) {
                r.k[i][j] = v;
                r.k[j][i] = v;
            }
            let p = r.generator() * Vector4::repeat(0.25);
            prop_assert!(p.amax() < 1e-12);
        }

        #[test]
        fn conservation_over_many_steps(rate in 1.0f64..1e5, scan in 0.0f64..10e6, step in 1e-5f64..1e-2) {
            let cfg = PumpConfig { step_s: step, class_step_hz: 5e6, ..PumpConfig::default() };
            let m = PumpModel::new(default_scheme(), StrengthTable::default(), cfg).unwrap();
            let mut st = PumpStage::new("s", &Line::ALL, 0.05);
            for l in &mut st.lines { l.rate_per_s = rate; l.scan_hz = scan; }
            let c = m.evolve_populations(&m.initial_classes(), &st).unwrap();
            prop_assert!(c.max_conservation_error() <= 1e-9);
            prop_assert!(c.classes.iter().all(|cl| cl.populations.iter().all(|&p| p >= 0.0)));
        }
    }
}
