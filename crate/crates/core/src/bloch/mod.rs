//! Two-level optical Bloch dynamics under shaped, chirped drives.
//!
//! Equations are written in the frame that follows the instantaneous carrier,
//! so a chirp shows up as a time-dependent detuning rather than a fast phase.

pub mod ode;
pub mod pulse;

use std::f64::consts::{PI, TAU};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_non_negative, ensure_positive, Error, Result};
use crate::io::Table;
use ode::{integrate, OdeOptions};
pub use pulse::{default_edge_beta, make_pulse, PulseEnvelope, PulseShape, DEFAULT_EDGE_FRACTION};

pub const DEFAULT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlochState {
    pub u: f64,
    pub v: f64,
    pub w: f64,
}

impl BlochState {
    pub const GROUND: BlochState = BlochState { u: 0.0, v: 0.0, w: -1.0 };

    pub fn norm(&self) -> f64 {
        (self.u * self.u + self.v * self.v + self.w * self.w).sqrt()
    }

    fn to_array(self) -> [f64; 3] {
        [self.u, self.v, self.w]
    }

    fn from_array(a: [f64; 3]) -> Self {
        BlochState { u: a[0], v: a[1], w: a[2] }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<BlochState>,
}

impl Trajectory {
    pub fn last(&self) -> BlochState {
        *self.states.last().expect("trajectory has at least the initial state")
    }

    pub fn max_norm_drift(&self) -> f64 {
        self.states.iter().map(|s| (s.norm() - 1.0).abs()).fold(0.0, f64::max)
    }
}

fn rhs(pulse: &PulseEnvelope, detuning_hz: f64) -> impl Fn(f64, &[f64; 3]) -> [f64; 3] + '_ {
    let (s, c) = pulse.phase_offset.sin_cos();
    move |t, y| {
        let om = TAU * pulse.amplitude(t);
        let dp = TAU * (detuning_hz - pulse.inst_freq(t));
        let (ox, oy) = (om * c, om * s);
        [
            -oy * y[2] - dp * y[1],
            dp * y[0] + ox * y[2],
            -ox * y[1] + oy * y[0],
        ]
    }
}

fn check(initial: &BlochState, detuning_hz: f64, tol: f64) -> Result<()> {
    ensure_positive("tol", tol)?;
    if !detuning_hz.is_finite() {
        return Err(Error::invalid("detuning must be finite"));
    }
    if !(initial.u.is_finite() && initial.v.is_finite() && initial.w.is_finite()) {
        return Err(Error::invalid("initial Bloch vector must be finite"));
    }
    Ok(())
}

/// Integrates over the whole pulse, recording every accepted step.
pub fn evolve(initial: BlochState, pulse: &PulseEnvelope, detuning_hz: f64, tol: f64) -> Result<Trajectory> {
    check(&initial, detuning_hz, tol)?;
    let mut traj = Trajectory::default();
    integrate(
        rhs(pulse, detuning_hz),
        0.0,
        initial.to_array(),
        pulse.t_total_s,
        &pulse.breakpoints(),
        &OdeOptions::with_tol(tol),
        |t, y| {
            traj.times.push(t);
            traj.states.push(BlochState::from_array(*y));
        },
    )
    .map_err(|e| e.at_detuning(detuning_hz))?;
    Ok(traj)
}

/// Final state only; no trajectory storage.
pub fn evolve_final(initial: BlochState, pulse: &PulseEnvelope, detuning_hz: f64, tol: f64) -> Result<BlochState> {
    check(&initial, detuning_hz, tol)?;
    let (y, _) = integrate(
        rhs(pulse, detuning_hz),
        0.0,
        initial.to_array(),
        pulse.t_total_s,
        &pulse.breakpoints(),
        &OdeOptions::with_tol(tol),
        |_, _| {},
    )
    .map_err(|e| e.at_detuning(detuning_hz))?;
    Ok(BlochState::from_array(y))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferProfile {
    pub detunings_hz: Vec<f64>,
    pub final_inversion: Vec<f64>,
    pub transfer_prob: Vec<f64>,
}

impl TransferProfile {
    pub fn to_table(&self) -> Table {
        Table::new(
            &["detuning_Hz", "transfer_prob"],
            vec![self.detunings_hz.clone(), self.transfer_prob.clone()],
        )
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_table().write(path)
    }
}

pub fn transfer_profile(pulse: &PulseEnvelope, detunings_hz: &[f64]) -> Result<TransferProfile> {
    transfer_profile_tol(pulse, detunings_hz, DEFAULT_TOL)
}

pub fn transfer_profile_tol(pulse: &PulseEnvelope, detunings_hz: &[f64], tol: f64) -> Result<TransferProfile> {
    if detunings_hz.is_empty() {
        return Err(Error::invalid("detuning list is empty"));
    }
    let w: Vec<f64> = detunings_hz
        .par_iter()
        .map(|&d| evolve_final(BlochState::GROUND, pulse, d, tol).map(|s| s.w))
        .collect::<Result<_>>()?;
    let p = w.iter().map(|&x| (0.5 * (x + 1.0)).clamp(0.0, 1.0)).collect();
    Ok(TransferProfile {
        detunings_hz: detunings_hz.to_vec(),
        final_inversion: w,
        transfer_prob: p,
    })
}

pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Mean transfer over [−Γ/2, Γ/2] (trapezoid on `n_points` nodes).
pub fn average_transfer(pulse: &PulseEnvelope, gamma_bw_hz: f64, n_points: usize) -> Result<f64> {
    average_transfer_tol(pulse, gamma_bw_hz, n_points, DEFAULT_TOL)
}

pub fn average_transfer_tol(pulse: &PulseEnvelope, gamma_bw_hz: f64, n_points: usize, tol: f64) -> Result<f64> {
    if n_points < 21 {
        return Err(Error::invalid(format!("need at least 21 detuning points, got {n_points}")));
    }
    ensure_non_negative("gamma_bw_hz", gamma_bw_hz)?;
    let grid = uniform_grid(-0.5 * gamma_bw_hz, 0.5 * gamma_bw_hz, n_points);
    let prof = transfer_profile_tol(pulse, &grid, tol)?;
    let p = &prof.transfer_prob;
    let inner: f64 = p[1..n_points - 1].iter().sum();
    Ok((inner + 0.5 * (p[0] + p[n_points - 1])) / (n_points - 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnalyticTransfer {
    pub eta: f64,
    /// The Landau–Zener-type estimate assumes Γ ≫ Ω; flagged when Γ < 3Ω.
    pub outside_validity: bool,
}

/// `1 − exp(−0.5·π·T·Ω²/Γ)` with Ω and Γ taken as angular frequencies.
pub fn hsh_efficiency_analytic(t_flat_s: f64, omega_hz: f64, gamma_bw_hz: f64) -> Result<AnalyticTransfer> {
    ensure_positive("t_flat_s", t_flat_s)?;
    ensure_non_negative("omega_hz", omega_hz)?;
    ensure_positive("gamma_bw_hz", gamma_bw_hz)?;
    let om = TAU * omega_hz;
    let gm = TAU * gamma_bw_hz;
    let x = 0.5 * PI * t_flat_s * om * om / gm;
    Ok(AnalyticTransfer {
        eta: -(-x).exp_m1(),
        outside_validity: gamma_bw_hz < 3.0 * omega_hz,
    })
}

/// Inversion under constant resonant-frame drive, sampled on a uniform grid.
pub fn rabi_trace(omega_hz: f64, duration_s: f64, detuning_hz: f64, n_samples: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    ensure_positive("duration_s", duration_s)?;
    ensure_non_negative("omega_hz", omega_hz)?;
    if n_samples < 2 {
        return Err(Error::invalid("need at least 2 samples"));
    }
    let pulse = PulseEnvelope::square(omega_hz, duration_s)?;
    let times = uniform_grid(0.0, duration_s, n_samples);
    let mut w = Vec::with_capacity(n_samples);
    let mut state = BlochState::GROUND.to_array();
    w.push(state[2]);
    let opts = OdeOptions::with_tol(1e-10);
    let f = rhs(&pulse, detuning_hz);
    for pair in times.windows(2) {
        let (y, _) = integrate(&f, pair[0], state, pair[1], &[], &opts, |_, _| {})
            .map_err(|e| e.at_detuning(detuning_hz))?;
        state = y;
        w.push(y[2]);
    }
    Ok((times, w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::dominant_frequency;
    use proptest::prelude::*;

    #[test]
    fn resonant_pi_and_two_pi() {
        let pi = PulseEnvelope::square(2e6, 0.25e-6).unwrap();
        let s = evolve_final(BlochState::GROUND, &pi, 0.0, 1e-10).unwrap();
        assert!((s.w - 1.0).abs() < 1e-6);
        let two_pi = PulseEnvelope::square(2e6, 0.5e-6).unwrap();
        let s = evolve_final(BlochState::GROUND, &two_pi, 0.0, 1e-10).unwrap();
        assert!((s.w + 1.0).abs() < 1e-6);
    }

    #[test]
    fn off_resonant_matches_closed_form() {
        let (om, det, dur) = (1.3e6, 0.8e6, 1.7e-6);
        let pulse = PulseEnvelope::square(om, dur).unwrap();
        let traj = evolve(BlochState::GROUND, &pulse, det, 1e-10).unwrap();
        let g = (om * om + det * det).sqrt();
        for (t, s) in traj.times.iter().zip(&traj.states) {
            let p = (om / g).powi(2) * (PI * g * t).sin().powi(2);
            assert!((s.w - (2.0 * p - 1.0)).abs() < 1e-5, "t={t}");
        }
    }

    #[test]
    fn zero_field_leaves_ground_state() {
        let p = PulseEnvelope::hsh(0.0, 5e-6, 10e6).unwrap();
        let prof = transfer_profile(&p, &[-3e6, 0.0, 2e6]).unwrap();
        assert!(prof.transfer_prob.iter().all(|&x| x < 1e-12));
        assert!(average_transfer(&p, 10e6, 21).unwrap() < 1e-12);
    }

    #[test]
    fn hsh_top_hat_and_wings() {
        let p = PulseEnvelope::hsh(2e6, 5e-6, 10e6).unwrap();
        // plateau above 0.95 over the central 70% of the sweep; at ±40% the
        // remaining sweep (~1.2 MHz) is comparable to Ω and transfer is ~0.94
        let inside = uniform_grid(-3.5e6, 3.5e6, 15);
        let prof = transfer_profile(&p, &inside).unwrap();
        assert!(prof.transfer_prob.iter().all(|&x| x > 0.95), "{:?}", prof.transfer_prob);
        let edge = transfer_profile(&p, &[-4e6, 4e6]).unwrap();
        assert!(edge.transfer_prob.iter().all(|&x| x > 0.93));
        let outside = transfer_profile(&p, &[-40e6, 40e6]).unwrap();
        assert!(outside.transfer_prob.iter().all(|&x| x < 0.05));
    }

    #[test]
    fn hsh_profile_is_symmetric() {
        let p = PulseEnvelope::hsh(2e6, 5e-6, 10e6).unwrap();
        let pos = uniform_grid(0.5e6, 7e6, 8);
        let neg: Vec<f64> = pos.iter().map(|d| -d).collect();
        let a = transfer_profile_tol(&p, &pos, 1e-10).unwrap();
        let b = transfer_profile_tol(&p, &neg, 1e-10).unwrap();
        for (x, y) in a.transfer_prob.iter().zip(&b.transfer_prob) {
            assert!((x - y).abs() < 1e-3);
        }
    }

    #[test]
    fn time_reversal_returns_to_start() {
        let tol = 1e-10;
        for (p, det) in [
            (PulseEnvelope::hsh(1e6, 5e-6, 10e6).unwrap(), 1.3e6),
            (PulseEnvelope::sech(2e6, 3e-6, 4e6).unwrap(), -0.7e6),
            (PulseEnvelope::square(1.5e6, 0.8e-6).unwrap(), 0.4e6),
        ] {
            let mid = evolve_final(BlochState::GROUND, &p, det, tol).unwrap();
            let back = evolve_final(mid, &p.time_reversed(), -det, tol).unwrap();
            let d = ((back.u).powi(2) + (back.v).powi(2) + (back.w + 1.0).powi(2)).sqrt();
            assert!(d < 100.0 * tol, "{:?}: {d:e}", p.shape);
        }
    }

    #[test]
    fn analytic_transfer_values() {
        let a = hsh_efficiency_analytic(5e-6, 0.6e6, 10e6).unwrap();
        // exponent 0.5·π·T·(2πΩ)²/(2πΓ) = π²TΩ²/Γ ≈ 1.7765
        assert!((a.eta - (1.0 - (-1.776_529_4f64).exp())).abs() < 1e-6);
        assert!(!a.outside_validity);
        assert!(hsh_efficiency_analytic(5e-6, 2e6, 5e6).unwrap().outside_validity);
        assert!(hsh_efficiency_analytic(5e-6, 1e6, 1e15).unwrap().eta < 1e-6);
    }

    #[test]
    fn rabi_trace_frequency() {
        let (t, w) = rabi_trace(0.65e6, 10e-6, 0.0, 2001).unwrap();
        let f = dominant_frequency(&t, &w).unwrap();
        assert!((f / 0.65e6 - 1.0).abs() < 0.01);
        let (t, w) = rabi_trace(2e6, 3e-6, 2e6, 3001).unwrap();
        let f = dominant_frequency(&t, &w).unwrap();
        assert!((f / 8f64.sqrt() / 1e6 - 1.0).abs() < 0.01);
        let (_, w) = rabi_trace(0.0, 1e-6, 1e6, 11).unwrap();
        assert!(w.iter().all(|&x| x == -1.0));
    }

    #[test]
    fn sweep_is_deterministic_across_pools() {
        let p = PulseEnvelope::hsh(1e6, 5e-6, 20e6).unwrap();
        let grid = uniform_grid(-10e6, 10e6, 21);
        let a = transfer_profile(&p, &grid).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| transfer_profile(&p, &grid)).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn norm_is_conserved(om in 0.1e6f64..3e6, det in -5e6f64..5e6, gamma in 0.0f64..30e6) {
            let tol = 1e-9;
            let p = PulseEnvelope::hsh(om, 2e-6, gamma).unwrap();
            let traj = evolve(BlochState::GROUND, &p, det, tol).unwrap();
            prop_assert!(traj.max_norm_drift() <= 10.0 * tol, "{:e}", traj.max_norm_drift());
        }

        #[test]
        fn transfer_is_a_probability(om in 0.0f64..3e6, det in -20e6f64..20e6) {
            let p = PulseEnvelope::hsh(om, 2e-6, 10e6).unwrap();
            let prof = transfer_profile(&p, &[det]).unwrap();
            prop_assert!((0.0..=1.0).contains(&prof.transfer_prob[0]));
        }
    }
}
