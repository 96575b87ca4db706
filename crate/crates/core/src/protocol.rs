//! Full spin-wave storage sequence: timing, efficiency budget, output trace.

use std::f64::consts::LN_2;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bloch::{self, PulseEnvelope};
use crate::comb::{self, CombParams, CombProfile, DelayDecay};
use crate::error::{ensure_non_negative, ensure_positive, Error, Result};
use crate::io::Table;
use crate::spinline::{self, EchoSchedule};

/// Memory efficiency measured at T_S = 100 µs.
pub const MEASURED_ETA_M: f64 = 0.033;
/// Measured transfer efficiency per control pulse.
pub const MEASURED_ETA_T: f64 = 0.90;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TransferModel {
    /// Bloch-simulated average over the input bandwidth.
    Bloch { n_points: usize },
    Fixed { eta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageParams {
    pub inv_delta_s: f64,
    pub t_s: f64,
    pub input_duration_s: f64,
    pub input_bandwidth_hz: f64,
    pub control_pulse: PulseEnvelope,
    pub mw_pulse_duration_s: f64,
    pub mw_chirp_bw_hz: f64,
    /// Comb shape; Δ is taken from `inv_delta_s`.
    pub comb: CombParams,
    pub afc_decay: DelayDecay,
    pub gamma_mw_hz: f64,
    pub t2s: f64,
    pub pi_eff: f64,
    pub transfer: TransferModel,
    /// Absolute time of the input pulse.
    #[serde(default)]
    pub start_s: f64,
}

impl StorageParams {
    /// Experimental operating point: 1/Δ = 7 µs, T_S = 100 µs, HSH control
    /// at 0.6 MHz over 10 MHz, comb d = 4 with d₀ = 0.3, and a two-component
    /// delay decay (15 µs / 165 µs) passing through 0.15 at 5 µs.
    pub fn reference() -> Result<Self> {
        let d = 4.0;
        let comb = CombParams {
            d_peak: d,
            finesse: comb::optimal_finesse(d)?,
            d0: 0.3,
            bandwidth_hz: 20e6,
            ..CombParams::default()
        };
        let eta0 = comb::fourier_efficiency(&comb::build_comb(&comb)?)?.eta;
        let weight = comb::weight_for_target(eta0, 15e-6, 165e-6, 5e-6, 0.15)?;
        Ok(StorageParams {
            inv_delta_s: 7e-6,
            t_s: 100e-6,
            input_duration_s: 100e-9,
            input_bandwidth_hz: 10e6,
            control_pulse: PulseEnvelope::hsh(0.6e6, 5e-6, 10e6)?,
            mw_pulse_duration_s: 10e-6,
            mw_chirp_bw_hz: 3e6,
            comb,
            afc_decay: DelayDecay::Double {
                weight,
                t_a_s: 15e-6,
                t_b_s: 165e-6,
            },
            gamma_mw_hz: 0.73e6,
            t2s: 1.2e-3,
            pi_eff: spinline::DEFAULT_PI_EFF,
            transfer: TransferModel::Bloch { n_points: 101 },
            start_s: 0.0,
        })
    }

    pub fn t_m(&self) -> f64 {
        self.inv_delta_s + self.t_s
    }

    pub fn control_duration(&self) -> f64 {
        self.control_pulse.t_total_s
    }

    pub fn comb_profile(&self) -> Result<CombProfile> {
        let mut c = self.comb.clone();
        c.delta_hz = 1.0 / self.inv_delta_s;
        comb::build_comb(&c)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_positive("inv_delta_s", self.inv_delta_s)?;
        ensure_positive("t_s", self.t_s)?;
        ensure_positive("input_duration_s", self.input_duration_s)?;
        ensure_positive("input_bandwidth_hz", self.input_bandwidth_hz)?;
        ensure_positive("mw_pulse_duration_s", self.mw_pulse_duration_s)?;
        ensure_non_negative("mw_chirp_bw_hz", self.mw_chirp_bw_hz)?;
        ensure_positive("gamma_mw_hz", self.gamma_mw_hz)?;
        ensure_positive("t2s", self.t2s)?;
        if !self.start_s.is_finite() {
            return Err(Error::invalid("start_s must be finite"));
        }
        if !(0.0..=1.0).contains(&self.pi_eff) {
            return Err(Error::invalid(format!("pi_eff must lie in [0, 1], got {}", self.pi_eff)));
        }
        if let TransferModel::Fixed { eta } = self.transfer {
            if !(0.0..=1.0).contains(&eta) {
                return Err(Error::invalid(format!("fixed eta_t must lie in [0, 1], got {eta}")));
            }
        }
        if self.input_bandwidth_hz > self.comb.bandwidth_hz {
            return Err(Error::invalid(format!(
                "input bandwidth {:e} Hz exceeds comb bandwidth {:e} Hz",
                self.input_bandwidth_hz, self.comb.bandwidth_hz
            )));
        }
        if self.input_duration_s * self.comb.bandwidth_hz < 1.0 {
            return Err(Error::invalid(format!(
                "input duration {:e} s is shorter than the inverse comb bandwidth",
                self.input_duration_s
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Channel {
    Nu1,
    Nu2,
    Mw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    Input,
    Control1,
    MwPi1,
    MwPi2,
    Control2,
    /// Window where the two-level echo would appear.
    AfcEcho,
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimelineEvent {
    pub kind: EventKind,
    pub channel: Channel,
    pub start_s: f64,
    pub duration_s: f64,
}

impl TimelineEvent {
    pub fn end_s(&self) -> f64 {
        self.start_s + self.duration_s
    }

    pub fn center_s(&self) -> f64 {
        self.start_s + 0.5 * self.duration_s
    }

    fn overlaps(&self, other: &TimelineEvent) -> bool {
        self.start_s < other.end_s() && other.start_s < self.end_s()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceTimeline {
    pub events: Vec<TimelineEvent>,
    pub inv_delta_s: f64,
    pub t_s: f64,
    pub t_m_s: f64,
    /// Temporal modes that fit in 1/Δ.
    pub mode_capacity: f64,
}

impl SequenceTimeline {
    pub fn event(&self, kind: EventKind) -> &TimelineEvent {
        self.events.iter().find(|e| e.kind == kind).expect("all kinds present")
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Input at `start_s`; the first control pulse ends one input duration
/// before the echo window; MW π pulses at a quarter and three quarters of
/// T_S after the first control pulse's centre; the second control pulse T_S
/// after the first; output at T_M.
pub fn build_timeline(p: &StorageParams) -> Result<SequenceTimeline> {
    p.validate()?;
    let d_in = p.input_duration_s;
    let d_c = p.control_duration();
    let d_mw = p.mw_pulse_duration_s;
    if p.inv_delta_s < d_c + 2.0 * d_in {
        return Err(Error::Schedule(format!(
            "1/Δ >= control + 2·input violated: {:e} s < {:e} s + 2·{:e} s",
            p.inv_delta_s, d_c, d_in
        )));
    }
    if p.t_s < 2.0 * (d_c + d_mw) {
        return Err(Error::Schedule(format!(
            "T_S >= 2·(control + MW) violated: {:e} s < 2·({:e} s + {:e} s)",
            p.t_s, d_c, d_mw
        )));
    }
    let t0 = p.start_s;
    let c1_start = t0 + p.inv_delta_s - d_in - d_c;
    let c1_mid = c1_start + 0.5 * d_c;
    let ev = |kind, channel, start_s, duration_s| TimelineEvent {
        kind,
        channel,
        start_s,
        duration_s,
    };
    let events = vec![
        ev(EventKind::Input, Channel::Nu1, t0, d_in),
        ev(EventKind::Control1, Channel::Nu2, c1_start, d_c),
        ev(EventKind::AfcEcho, Channel::Nu1, t0 + p.inv_delta_s, d_in),
        ev(EventKind::MwPi1, Channel::Mw, c1_mid + 0.25 * p.t_s - 0.5 * d_mw, d_mw),
        ev(EventKind::MwPi2, Channel::Mw, c1_mid + 0.75 * p.t_s - 0.5 * d_mw, d_mw),
        ev(EventKind::Control2, Channel::Nu2, c1_start + p.t_s, d_c),
        ev(EventKind::Output, Channel::Nu1, t0 + p.t_m(), d_in),
    ];
    check_overlaps(&events)?;
    Ok(SequenceTimeline {
        events,
        inv_delta_s: p.inv_delta_s,
        t_s: p.t_s,
        t_m_s: p.t_m(),
        mode_capacity: p.inv_delta_s / d_in,
    })
}

fn check_overlaps(events: &[TimelineEvent]) -> Result<()> {
    for (i, a) in events.iter().enumerate() {
        for b in &events[i + 1..] {
            let optical = |e: &TimelineEvent| e.channel != Channel::Mw;
            let clash = (a.channel == b.channel || optical(a) != optical(b)
                || matches!(
                    (a.kind, b.kind),
                    (EventKind::Control1 | EventKind::Control2, EventKind::AfcEcho | EventKind::Output)
                        | (EventKind::AfcEcho | EventKind::Output, EventKind::Control1 | EventKind::Control2)
                ))
                && a.overlaps(b);
            if clash {
                return Err(Error::Schedule(format!(
                    "{:?} [{:e}, {:e}] s overlaps {:?} [{:e}, {:e}] s",
                    a.kind,
                    a.start_s,
                    a.end_s(),
                    b.kind,
                    b.start_s,
                    b.end_s()
                )));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyBudget {
    pub eta_afc: f64,
    pub eta_t: f64,
    pub eta_mw: f64,
    pub spin_decay: f64,
    pub gaussian_mismatch: f64,
    pub eta_m: f64,
}

impl EfficiencyBudget {
    pub fn compose(eta_afc: f64, eta_t: f64, eta_mw: f64, spin_decay: f64, gaussian_mismatch: f64) -> Result<Self> {
        for (name, v) in [
            ("eta_afc", eta_afc),
            ("eta_t", eta_t),
            ("eta_mw", eta_mw),
            ("spin_decay", spin_decay),
            ("gaussian_mismatch", gaussian_mismatch),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(EfficiencyBudget {
            eta_afc,
            eta_t,
            eta_mw,
            spin_decay,
            gaussian_mismatch,
            eta_m: eta_afc * eta_t * eta_t * eta_mw * eta_mw * spin_decay * gaussian_mismatch,
        })
    }
}

/// Two-level AFC efficiency at 1/Δ including the delay decay.
pub fn afc_efficiency(p: &StorageParams) -> Result<f64> {
    let e = comb::fourier_efficiency(&p.comb_profile()?)?;
    Ok((e.eta * p.afc_decay.factor(p.inv_delta_s)).clamp(0.0, 1.0))
}

pub fn transfer_efficiency(p: &StorageParams) -> Result<f64> {
    match p.transfer {
        TransferModel::Bloch { n_points } => {
            bloch::average_transfer(&p.control_pulse, p.input_bandwidth_hz, n_points).map(|v| v.clamp(0.0, 1.0))
        }
        TransferModel::Fixed { eta } => Ok(eta),
    }
}

fn budget_from(p: &StorageParams, eta_afc: f64, eta_t: f64) -> Result<EfficiencyBudget> {
    let sched = EchoSchedule::balanced(p.t_s, p.pi_eff, p.t2s)?;
    EfficiencyBudget::compose(
        eta_afc,
        eta_t,
        p.pi_eff,
        spinline::spin_decay(p.t_s, p.t2s),
        spinline::gaussian_mismatch(p.gamma_mw_hz, sched.mismatch()),
    )
}

pub fn efficiency_budget(p: &StorageParams) -> Result<EfficiencyBudget> {
    build_timeline(p)?;
    budget_from(p, afc_efficiency(p)?, transfer_efficiency(p)?)
}

/// Budget for every T_S in `t_s_values`; the comb and transfer factors are
/// computed once.
pub fn storage_sweep(p: &StorageParams, t_s_values: &[f64]) -> Result<Vec<EfficiencyBudget>> {
    let eta_afc = afc_efficiency(p)?;
    let eta_t = transfer_efficiency(p)?;
    t_s_values
        .par_iter()
        .map(|&t_s| {
            let q = StorageParams { t_s, ..p.clone() };
            build_timeline(&q)?;
            budget_from(&q, eta_afc, eta_t)
        })
        .collect()
}

/// Predicted budgets with the Bloch-simulated and the measured η_t, and how
/// far each lies above the measured memory efficiency.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetReport {
    pub simulated_transfer: EfficiencyBudget,
    pub measured_transfer: EfficiencyBudget,
    pub measured_eta_m: f64,
    pub discrepancy_simulated: f64,
    pub discrepancy_measured: f64,
}

impl BudgetReport {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// `simulated_eta_t` is typically `bloch::average_transfer` of the control
/// pulse over the input bandwidth.
pub fn budget_report(p: &StorageParams, simulated_eta_t: f64) -> Result<BudgetReport> {
    build_timeline(p)?;
    let eta_afc = afc_efficiency(p)?;
    let simulated_transfer = budget_from(p, eta_afc, simulated_eta_t)?;
    let measured_transfer = budget_from(p, eta_afc, MEASURED_ETA_T)?;
    Ok(BudgetReport {
        discrepancy_simulated: simulated_transfer.eta_m / MEASURED_ETA_M,
        discrepancy_measured: measured_transfer.eta_m / MEASURED_ETA_M,
        simulated_transfer,
        measured_transfer,
        measured_eta_m: MEASURED_ETA_M,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StorageTrace {
    pub budget: EfficiencyBudget,
    pub times_s: Vec<f64>,
    pub input: Vec<f64>,
    pub echo: Vec<f64>,
    pub output: Vec<f64>,
}

impl StorageTrace {
    pub fn total(&self) -> Vec<f64> {
        (0..self.times_s.len())
            .map(|i| self.input[i] + self.echo[i] + self.output[i])
            .collect()
    }

    pub fn to_table(&self) -> Table {
        Table::new(
            &["time_s", "input", "afc_echo", "output", "intensity"],
            vec![
                self.times_s.clone(),
                self.input.clone(),
                self.echo.clone(),
                self.output.clone(),
                self.total(),
            ],
        )
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_table().write(path)
    }
}

/// Intensity trace for unit input peak: Gaussian pulses of FWHM equal to
/// the input duration, a leaked two-level echo of height η_AFC·(1 − η_t) at
/// 1/Δ, and the output of height η_M at T_M.
pub fn simulate_storage(p: &StorageParams, times_s: &[f64]) -> Result<StorageTrace> {
    let tl = build_timeline(p)?;
    let budget = efficiency_budget(p)?;
    Ok(trace_from(&tl, &budget, p.input_duration_s, times_s))
}

fn trace_from(tl: &SequenceTimeline, b: &EfficiencyBudget, fwhm: f64, times_s: &[f64]) -> StorageTrace {
    let g = |t: f64, c: f64| (-4.0 * LN_2 * (t - c).powi(2) / (fwhm * fwhm)).exp();
    let c_in = tl.event(EventKind::Input).center_s();
    let c_echo = tl.event(EventKind::AfcEcho).center_s();
    let c_out = tl.event(EventKind::Output).center_s();
    let leak = b.eta_afc * (1.0 - b.eta_t);
    StorageTrace {
        budget: *b,
        times_s: times_s.to_vec(),
        input: times_s.iter().map(|&t| g(t, c_in)).collect(),
        echo: times_s.iter().map(|&t| leak * g(t, c_echo)).collect(),
        output: times_s.iter().map(|&t| b.eta_m * g(t, c_out)).collect(),
    }
}
