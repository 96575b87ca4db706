//! Inhomogeneous spin dephasing and π-pair rephasing.

use std::f64::consts::{LN_2, PI, TAU};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_non_negative, ensure_positive, Error, Result};
use crate::io::Table;

pub const DEFAULT_PI_EFF: f64 = 0.97;

/// Ions per work item. Fixed so partial sums, and therefore results, do not
/// depend on the number of worker threads.
const CHUNK: usize = 4096;

fn fwhm_to_sigma(fwhm: f64) -> f64 {
    fwhm / (2.0 * (2.0 * LN_2).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinEnsemble {
    pub gamma_mw_hz: f64,
    pub seed: u64,
    pub detunings_hz: Vec<f64>,
    pub weights: Vec<f64>,
}

impl SpinEnsemble {
    /// Gaussian detunings of FWHM `gamma_mw_hz`. Ion `i` draws from ChaCha
    /// stream `i` of `seed`.
    pub fn sample(n: usize, gamma_mw_hz: f64, seed: u64) -> Result<Self> {
        ensure_non_negative("gamma_mw_hz", gamma_mw_hz)?;
        if n == 0 {
            return Err(Error::invalid("ensemble needs at least one ion"));
        }
        let sigma = fwhm_to_sigma(gamma_mw_hz);
        let detunings_hz = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                let z: f64 = StandardNormal.sample(&mut rng);
                sigma * z
            })
            .collect();
        Ok(SpinEnsemble {
            gamma_mw_hz,
            seed,
            detunings_hz,
            weights: vec![1.0; n],
        })
    }

    pub fn len(&self) -> usize {
        self.detunings_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detunings_hz.is_empty()
    }

    /// FWHM from the sample standard deviation.
    pub fn fwhm_estimate(&self) -> f64 {
        let n = self.len() as f64;
        let mean = self.detunings_hz.iter().sum::<f64>() / n;
        let var = self.detunings_hz.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        2.0 * (2.0 * LN_2).sqrt() * var.sqrt()
    }

    /// Weighted ⟨e^{iφ}⟩ with φ = 2πδ·x for a shared time argument `x`.
    fn coherence(&self, x: f64) -> (f64, f64) {
        let partial: Vec<(f64, f64, f64)> = self
            .detunings_hz
            .par_chunks(CHUNK)
            .zip(self.weights.par_chunks(CHUNK))
            .map(|(d, w)| {
                let mut acc = (0.0, 0.0, 0.0);
                for (&di, &wi) in d.iter().zip(w) {
                    let (s, c) = (TAU * di * x).sin_cos();
                    acc.0 += wi * c;
                    acc.1 += wi * s;
                    acc.2 += wi;
                }
                acc
            })
            .collect();
        let (mut re, mut im, mut wt) = (0.0, 0.0, 0.0);
        for (a, b, c) in partial {
            re += a;
            im += b;
            wt += c;
        }
        (re / wt, im / wt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EchoSchedule {
    pub t_s: f64,
    pub tau: f64,
    pub pi_eff: f64,
    pub t2s: f64,
}

impl EchoSchedule {
    pub fn new(t_s: f64, tau: f64, pi_eff: f64, t2s: f64) -> Result<Self> {
        let s = EchoSchedule { t_s, tau, pi_eff, t2s };
        s.validate()?;
        Ok(s)
    }

    /// Balanced schedule, τ = T_S/2.
    pub fn balanced(t_s: f64, pi_eff: f64, t2s: f64) -> Result<Self> {
        Self::new(t_s, 0.5 * t_s, pi_eff, t2s)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_positive("t_s", self.t_s)?;
        ensure_positive("tau", self.tau)?;
        if self.tau >= self.t_s {
            return Err(Error::invalid(format!(
                "π-pulse separation {:e} s must be shorter than T_S = {:e} s",
                self.tau, self.t_s
            )));
        }
        if !(0.0..=1.0).contains(&self.pi_eff) {
            return Err(Error::invalid(format!("pi_eff must lie in [0, 1], got {}", self.pi_eff)));
        }
        if !(self.t2s > 0.0) {
            return Err(Error::invalid(format!("t2s must be > 0, got {}", self.t2s)));
        }
        Ok(())
    }

    /// Rephasing mismatch T_S − 2τ.
    pub fn mismatch(&self) -> f64 {
        self.t_s - 2.0 * self.tau
    }

    /// π-pulse times, centred in the storage window.
    pub fn flip_times(&self) -> [f64; 2] {
        let a = 0.5 * (self.t_s - self.tau);
        [a, a + self.tau]
    }
}

/// Free-induction amplitude of a Gaussian line.
pub fn fid_amplitude(gamma_mw_hz: f64, t: f64) -> Result<f64> {
    ensure_non_negative("t", t)?;
    ensure_non_negative("gamma_mw_hz", gamma_mw_hz)?;
    Ok((-PI * PI * gamma_mw_hz * gamma_mw_hz * t * t / (4.0 * LN_2)).exp())
}

/// Time at which the free-induction intensity has halved.
pub fn fid_half_intensity_time(gamma_mw_hz: f64) -> Result<f64> {
    ensure_positive("gamma_mw_hz", gamma_mw_hz)?;
    Ok(2f64.sqrt() * LN_2 / (PI * gamma_mw_hz))
}

/// Intensity factor for a rephasing mismatch `x` = T_S − 2τ.
pub fn gaussian_mismatch(gamma_mw_hz: f64, x: f64) -> f64 {
    (-PI * PI * gamma_mw_hz * gamma_mw_hz * x * x / (2.0 * LN_2)).exp()
}

/// Spin-decay intensity factor.
pub fn spin_decay(t_s: f64, t2s: f64) -> f64 {
    if t2s.is_infinite() {
        1.0
    } else {
        (-2.0 * t_s / t2s).exp()
    }
}

pub fn rephase_intensity(schedule: &EchoSchedule, gamma_mw_hz: f64) -> Result<f64> {
    schedule.validate()?;
    ensure_non_negative("gamma_mw_hz", gamma_mw_hz)?;
    Ok(schedule.pi_eff.powi(2)
        * spin_decay(schedule.t_s, schedule.t2s)
        * gaussian_mismatch(gamma_mw_hz, schedule.mismatch()))
}

/// `x` such that each ion's phase at `t` is 2πδ·x after instantaneous
/// conjugating flips at `flips`. Between flips x grows as t; a flip at f
/// maps x to −x.
fn effective_time(flips: &[f64], t: f64) -> f64 {
    let mut offset = 0.0;
    for &f in flips.iter().filter(|&&f| f <= t) {
        offset = -2.0 * f - offset;
    }
    t + offset
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EchoTrace {
    pub seed: u64,
    pub n_ions: usize,
    pub times_s: Vec<f64>,
    pub intensity: Vec<f64>,
}

impl EchoTrace {
    pub fn to_table(&self) -> Table {
        Table::new(
            &["time_s", "intensity"],
            vec![self.times_s.clone(), self.intensity.clone()],
        )
        .with_meta("seed", self.seed)
        .with_meta("n_ions", self.n_ions)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_table().write(path)
    }
}

/// Ensemble intensity |⟨e^{iφ(t)}⟩|² with ideal flips at `flips`, each
/// carrying amplitude √pi_eff, and amplitude decay e^{−t/T₂}.
pub fn montecarlo_trace(
    ensemble: &SpinEnsemble,
    flips: &[f64],
    pi_eff: f64,
    t2s: f64,
    times_s: &[f64],
) -> Result<EchoTrace> {
    if !(0.0..=1.0).contains(&pi_eff) {
        return Err(Error::invalid(format!("pi_eff must lie in [0, 1], got {pi_eff}")));
    }
    if !(t2s > 0.0) {
        return Err(Error::invalid("t2s must be > 0"));
    }
    let mut flips = flips.to_vec();
    flips.sort_by(f64::total_cmp);
    let intensity = times_s
        .iter()
        .map(|&t| {
            let n_applied = flips.iter().filter(|&&f| f <= t).count() as i32;
            let (re, im) = ensemble.coherence(effective_time(&flips, t));
            (re * re + im * im) * pi_eff.powi(n_applied) * spin_decay(t, t2s)
        })
        .collect();
    Ok(EchoTrace {
        seed: ensemble.seed,
        n_ions: ensemble.len(),
        times_s: times_s.to_vec(),
        intensity,
    })
}

pub const MIN_MC_IONS: usize = 1000;

/// Monte-Carlo recall for a π-pair schedule, sampled at `times_s`.
pub fn montecarlo_echo(ensemble: &SpinEnsemble, schedule: &EchoSchedule, times_s: &[f64]) -> Result<EchoTrace> {
    schedule.validate()?;
    if ensemble.len() < MIN_MC_IONS {
        return Err(Error::invalid(format!(
            "Monte-Carlo needs at least {MIN_MC_IONS} ions, got {}",
            ensemble.len()
        )));
    }
    montecarlo_trace(ensemble, &schedule.flip_times(), schedule.pi_eff, schedule.t2s, times_s)
}

/// Recalled intensity at t = T_S for each mismatch in `mismatches_s`, at
/// fixed T_S.
pub fn montecarlo_mismatch_sweep(
    ensemble: &SpinEnsemble,
    t_s: f64,
    mismatches_s: &[f64],
    pi_eff: f64,
    t2s: f64,
) -> Result<Vec<f64>> {
    mismatches_s
        .iter()
        .map(|&x| {
            let sched = EchoSchedule::new(t_s, 0.5 * (t_s - x), pi_eff, t2s)?;
            Ok(montecarlo_echo(ensemble, &sched, &[t_s])?.intensity[0])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fid_values() {
        assert_eq!(fid_amplitude(0.73e6, 0.0).unwrap(), 1.0);
        let t = fid_half_intensity_time(0.73e6).unwrap();
        assert!((fid_amplitude(0.73e6, t).unwrap().powi(2) - 0.5).abs() < 1e-12);
        assert!((t - 0.4274e-6).abs() < 0.001e-6, "{t}");
    }

    #[test]
    fn fid_montecarlo_matches() {
        let ens = SpinEnsemble::sample(100_000, 0.73e6, 7).unwrap();
        for i in 0..20 {
            let t = i as f64 * 0.1e-6;
            let (re, im) = ens.coherence(t);
            let mc = (re * re + im * im).sqrt();
            assert!((mc - fid_amplitude(0.73e6, t).unwrap()).abs() < 0.02);
        }
    }

    #[test]
    fn sample_width() {
        let ens = SpinEnsemble::sample(20_000, 0.73e6, 1).unwrap();
        // σ of the FWHM estimate is about FWHM/√(2N)
        let sd = 0.73e6 / (2.0 * 20_000f64).sqrt();
        assert!((ens.fwhm_estimate() - 0.73e6).abs() < 3.0 * sd);
    }

    #[test]
    fn perfect_rephasing() {
        let s = EchoSchedule::balanced(100e-6, 1.0, f64::INFINITY).unwrap();
        assert_eq!(rephase_intensity(&s, 0.73e6).unwrap(), 1.0);
        let s = EchoSchedule::balanced(1.2e-3, 1.0, 1.2e-3).unwrap();
        assert!((rephase_intensity(&s, 0.73e6).unwrap() - (-2.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn schedule_validation() {
        assert!(EchoSchedule::new(10e-6, 10e-6, 1.0, 1.0).is_err());
        assert!(EchoSchedule::new(10e-6, 4e-6, 1.1, 1.0).is_err());
        assert!(EchoSchedule::new(10e-6, 4e-6, 0.9, 0.0).is_err());
    }

    #[test]
    fn zero_linewidth_never_dephases() {
        let ens = SpinEnsemble::sample(2000, 0.0, 3).unwrap();
        for tau in [10e-6, 30e-6, 45e-6] {
            let s = EchoSchedule::new(100e-6, tau, 0.97, f64::INFINITY).unwrap();
            let tr = montecarlo_echo(&ens, &s, &[100e-6]).unwrap();
            assert!((tr.intensity[0] - 0.97f64.powi(2)).abs() < 1e-12);
        }
    }

    #[test]
    fn single_flip_gives_hahn_echo_at_two_tau() {
        let ens = SpinEnsemble::sample(20_000, 0.73e6, 5).unwrap();
        let tau = 5e-6;
        let times: Vec<f64> = (0..=200).map(|i| 8e-6 + i as f64 * 0.02e-6).collect();
        let tr = montecarlo_trace(&ens, &[tau], 1.0, f64::INFINITY, &times).unwrap();
        let (imax, _) = tr
            .intensity
            .iter()
            .enumerate()
            .fold((0, 0.0), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
        assert!((times[imax] - 2.0 * tau).abs() < 0.03e-6);
    }

    #[test]
    fn montecarlo_matches_analytic_mismatch() {
        let ens = SpinEnsemble::sample(100_000, 0.73e6, 42).unwrap();
        let x: Vec<f64> = (-20..=20).map(|i| i as f64 * 0.1e-6).collect();
        let mc = montecarlo_mismatch_sweep(&ens, 100e-6, &x, 0.97, 1.2e-3).unwrap();
        let peak = rephase_intensity(&EchoSchedule::balanced(100e-6, 0.97, 1.2e-3).unwrap(), 0.73e6).unwrap();
        for (xi, m) in x.iter().zip(&mc) {
            let a = rephase_intensity(&EchoSchedule::new(100e-6, 0.5 * (100e-6 - xi), 0.97, 1.2e-3).unwrap(), 0.73e6).unwrap();
            assert!((m - a).abs() <= 0.03 * peak, "x={xi}: {m} vs {a}");
            if a > 0.1 * peak {
                assert!((m / a - 1.0).abs() < 0.03);
            }
        }
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let run = || {
            let ens = SpinEnsemble::sample(30_000, 0.73e6, 9).unwrap();
            let s = EchoSchedule::new(50e-6, 24.8e-6, 0.97, 1.2e-3).unwrap();
            montecarlo_echo(&ens, &s, &[49e-6, 50e-6, 51e-6]).unwrap()
        };
        let a = run();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(run);
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn argmax_at_balanced(gamma in 0.05e6f64..3e6, t_s in 10e-6f64..1e-3, frac in 0.3f64..0.7) {
            let bal = rephase_intensity(&EchoSchedule::balanced(t_s, 0.97, 1e-3).unwrap(), gamma).unwrap();
            let other = rephase_intensity(&EchoSchedule::new(t_s, frac * t_s, 0.97, 1e-3).unwrap(), gamma).unwrap();
            prop_assert!(other <= bal);
            if (frac - 0.5).abs() > 1e-9 { prop_assert!(other < bal); }
        }

        #[test]
        fn depends_on_mismatch_only(gamma in 0.1e6f64..2e6, t_s in 20e-6f64..200e-6, tau_frac in 0.4f64..0.6, eps in 0.0f64..5e-6) {
            let a = EchoSchedule::new(t_s, tau_frac * t_s, 1.0, f64::INFINITY).unwrap();
            let b = EchoSchedule::new(t_s + 2.0 * eps, tau_frac * t_s + eps, 1.0, f64::INFINITY).unwrap();
            let ia = rephase_intensity(&a, gamma).unwrap();
            let ib = rephase_intensity(&b, gamma).unwrap();
            prop_assert!((ia - ib).abs() < 1e-9);
        }

        #[test]
        fn intensities_are_fractions(gamma in 0.0f64..3e6, t_s in 1e-6f64..2e-3, tau_frac in 0.01f64..0.99, pe in 0.0f64..1.0, t2 in 1e-5f64..1e-2) {
            let s = EchoSchedule::new(t_s, tau_frac * t_s, pe, t2).unwrap();
            let i = rephase_intensity(&s, gamma).unwrap();
            prop_assert!((0.0..=1.0).contains(&i));
        }

        #[test]
        fn effective_time_after_pair(a in 0.0f64..1e-4, tau in 1e-7f64..1e-4, dt in 0.0f64..1e-4) {
            let t = a + tau + dt;
            let x = effective_time(&[a, a + tau], t);
            prop_assert!((x - (t - 2.0 * tau)).abs() < 1e-15);
        }
    }
}
