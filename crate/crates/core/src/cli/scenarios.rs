//! One runner per scenario kind. Each writes its artifacts into the output
//! directory and returns scalar results for comparisons.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::config::{ScenarioConfig, ScenarioKind};
use crate::analysis::{self, FitResult, Model};
use crate::bloch::{self, PulseEnvelope};
use crate::comb::{self, Broadening, CombParams, DelayDecay, ToothShape};
use crate::error::{Error, Result};
use crate::io::Table;
use crate::physcore::{default_scheme, Line, StrengthTable};
use crate::protocol::{self, StorageParams, TransferModel};
use crate::pumping::{self, PumpConfig, PumpLine, PumpModel, PumpStage, RelaxationRates};
use crate::spinline::{self, EchoSchedule, SpinEnsemble};

#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<String>,
    pub summary: BTreeMap<String, f64>,
}

pub(crate) struct Ctx<'a> {
    pub out: &'a Path,
    pub seed: u64,
    pub tol: f64,
}

impl Outcome {
    fn path(&mut self, ctx: &Ctx, name: &str) -> PathBuf {
        self.files.push(name.to_owned());
        ctx.out.join(name)
    }

    fn table(&mut self, ctx: &Ctx, name: &str, t: Table) -> Result<()> {
        let p = self.path(ctx, name);
        t.write(p)
    }

    fn json<T: Serialize>(&mut self, ctx: &Ctx, name: &str, v: &T) -> Result<()> {
        let p = self.path(ctx, name);
        write_json(&p, v)
    }

    fn put(&mut self, k: &str, v: f64) {
        self.summary.insert(k.to_owned(), v);
    }
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, v: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

pub(crate) fn run(cfg: &ScenarioConfig, ctx: &Ctx) -> Result<Outcome> {
    let mut o = match cfg.kind {
        ScenarioKind::Comb => comb_scenario(cfg, ctx),
        ScenarioKind::Pulse => pulse_scenario(cfg, ctx),
        ScenarioKind::Spin => spin_scenario(cfg, ctx),
        ScenarioKind::Pump => pump_scenario(cfg, ctx),
        ScenarioKind::Storage => storage_scenario(cfg, ctx),
        ScenarioKind::Fit => fit_scenario(cfg, ctx),
    }?;
    let summary = o.summary.clone();
    o.json(ctx, "summary.json", &summary)?;
    Ok(o)
}

fn shape_arg(cfg: &ScenarioConfig, key: &str) -> Result<ToothShape> {
    cfg.text(key)?
        .parse()
        .map_err(|e: Error| Error::config(Some(key), e.to_string()))
}

fn afc_decay(cfg: &ScenarioConfig, eta0: f64) -> Result<DelayDecay> {
    let (ta, tb) = (cfg.f("t2_fast")?, cfg.f("t2_slow")?);
    let weight = match cfg.opt_f("weight")? {
        Some(w) => w,
        None => comb::weight_for_target(eta0, ta, tb, cfg.f("anchor_delay")?, cfg.f("anchor_efficiency")?)?,
    };
    Ok(DelayDecay::Double {
        weight,
        t_a_s: ta,
        t_b_s: tb,
    })
}

#[derive(Serialize)]
struct DecayFit<'a> {
    t2_fast_s: f64,
    t2_slow_s: f64,
    prefactor: f64,
    fit: &'a FitResult,
}

fn comb_scenario(cfg: &ScenarioConfig, ctx: &Ctx) -> Result<Outcome> {
    let mut o = Outcome::default();
    let d = cfg.f("d_peak")?;
    let finesse = match cfg.opt_f("finesse")? {
        Some(f) => f,
        None => comb::optimal_finesse(d)?,
    };
    let broadening = match cfg.opt_text("broadening_shape")? {
        Some(_) => Some(Broadening {
            shape: shape_arg(cfg, "broadening_shape")?,
            fwhm_hz: cfg.f("broadening_fwhm")?,
        }),
        None => None,
    };
    let params = CombParams {
        delta_hz: cfg.f("delta")?,
        d_peak: d,
        finesse,
        d0: cfg.f("d0")?,
        bandwidth_hz: cfg.f("bandwidth")?,
        tooth_shape: shape_arg(cfg, "tooth_shape")?,
        tooth_fwhm_hz: cfg.opt_f("tooth_fwhm")?,
        broadening,
        samples_per_period: cfg.int("samples_per_period")?,
    };
    let profile = comb::build_comb(&params)?;
    o.table(ctx, "comb.csv", profile.to_table())?;
    let eff = comb::fourier_efficiency(&profile)?;
    o.put("finesse", finesse);
    o.put("eta_fourier", eff.eta);
    o.put("eta_analytic_square", comb::analytic_efficiency(d, finesse, params.d0)?);

    let decay = afc_decay(cfg, eff.eta)?;
    let delays = bloch::uniform_grid(cfg.f("delay_min")?, cfg.f("delay_max")?, cfg.int("n_delays")?);
    let eta: Vec<f64> = delays.iter().map(|&t| eff.eta * decay.factor(t)).collect();
    let noise = cfg.f("noise")?;
    let sampled = if noise > 0.0 {
        analysis::with_relative_noise(&eta, noise, ctx.seed)
    } else {
        eta.clone()
    };
    o.table(
        ctx,
        "efficiency_vs_delay.csv",
        Table::new(&["delay_s", "eta", "eta_sampled"], vec![delays.clone(), eta, sampled.clone()])
            .with_meta("seed", ctx.seed)
            .with_meta("noise", noise),
    )?;
    let fit = analysis::fit_double_exp(&delays, &sampled)?;
    // fitted as exp(−τ/T), reported as exp(−4τ/T₂′)
    let rep = DecayFit {
        t2_fast_s: 4.0 * fit.get("T1").unwrap_or(f64::NAN),
        t2_slow_s: 4.0 * fit.get("T2").unwrap_or(f64::NAN),
        prefactor: fit.get("A1").unwrap_or(f64::NAN) + fit.get("A2").unwrap_or(f64::NAN),
        fit: &fit,
    };
    o.json(ctx, "decay_fit.json", &rep)?;
    if let DelayDecay::Double { weight, .. } = decay {
        o.put("weight", weight);
    }
    o.put("t2_fast_s", rep.t2_fast_s);
    o.put("t2_slow_s", rep.t2_slow_s);
    o.put("prefactor", rep.prefactor);
    o.put("eta_at_1us", eff.eta * decay.factor(1e-6));
    o.put("eta_at_5us", eff.eta * decay.factor(5e-6));
    o.put("eta_at_7us", eff.eta * decay.factor(7e-6));
    Ok(o)
}

fn control_pulse(shape: &str, omega: f64, t: f64, chirp: f64, edge: Option<f64>) -> Result<PulseEnvelope> {
    match shape {
        "hsh" => match edge {
            Some(e) => PulseEnvelope::hsh_with_edges(omega, t, chirp, e, bloch::default_edge_beta(t)),
            None => PulseEnvelope::hsh(omega, t, chirp),
        },
        "sech" => PulseEnvelope::sech(omega, t, chirp),
        "square" => PulseEnvelope::square(omega, t),
        other => Err(Error::config(
            None,
            format!("unknown pulse shape `{other}` (expected hsh, sech, square)"),
        )),
    }
}

/// Bandwidth from which the Bloch average is held to the closed form.
const CROSS_CHECK_MIN_GAMMA: f64 = 10e6;

fn mhz_label(v: f64) -> String {
    format!("{}MHz", v / 1e6)
}

fn pulse_scenario(cfg: &ScenarioConfig, ctx: &Ctx) -> Result<Outcome> {
    let mut o = Outcome::default();
    let shape = cfg.text("shape")?;
    let omegas = cfg.list("omega")?;
    let gammas = cfg.list("gamma")?;
    let t_flat = cfg.f("t_flat")?;
    let edge = cfg.f("edge_fraction")?;
    let n = cfg.int("n_points")?;
    if omegas.is_empty() || gammas.is_empty() {
        return Err(Error::config(Some("omega"), "omega and gamma lists must be non-empty"));
    }
    let jobs: Vec<(f64, f64)> = omegas
        .iter()
        .flat_map(|&om| gammas.iter().map(move |&g| (om, g)))
        .collect();
    let results: Vec<(f64, bloch::AnalyticTransfer)> = jobs
        .par_iter()
        .map(|&(om, g)| {
            let pulse = control_pulse(&shape, om, t_flat, g, Some(edge))?;
            let sim = bloch::average_transfer_tol(&pulse, g, n, ctx.tol)?;
            Ok((sim, bloch::hsh_efficiency_analytic(t_flat, om, g)?))
        })
        .collect::<Result<_>>()?;

    let mut headers = vec!["gamma_Hz".to_owned()];
    let mut cols = vec![gammas.clone()];
    let mut max_diff: f64 = 0.0;
    let mut max_diff_valid: f64 = 0.0;
    let mut monotone = true;
    for (i, &om) in omegas.iter().enumerate() {
        let row = &results[i * gammas.len()..(i + 1) * gammas.len()];
        headers.push(format!("bloch_{}", mhz_label(om)));
        headers.push(format!("analytic_{}", mhz_label(om)));
        headers.push(format!("analytic_valid_{}", mhz_label(om)));
        cols.push(row.iter().map(|r| r.0).collect());
        cols.push(row.iter().map(|r| r.1.eta).collect());
        cols.push(row.iter().map(|r| if r.1.outside_validity { 0.0 } else { 1.0 }).collect());
        for (j, (sim, an)) in row.iter().enumerate() {
            let diff = (sim - an.eta).abs();
            if !an.outside_validity {
                max_diff_valid = max_diff_valid.max(diff);
            }
            if gammas[j] >= CROSS_CHECK_MIN_GAMMA {
                max_diff = max_diff.max(diff);
            }
            o.put(&format!("eta_bloch_{}_{}", mhz_label(om), mhz_label(gammas[j])), *sim);
        }
        // Adiabaticity-limited regime: the closed form is below 1 − e⁻³.
        // Closer to saturation the Bloch value wobbles by a few 1e-3.
        let mut limited: Vec<(f64, f64)> = gammas
            .iter()
            .zip(row)
            .filter(|(_, r)| r.1.eta <= 1.0 - (-3f64).exp())
            .map(|(g, r)| (*g, r.0))
            .collect();
        limited.sort_by(|a, b| a.0.total_cmp(&b.0));
        monotone &= limited.windows(2).all(|w| w[1].1 < w[0].1);
    }
    let hdr: Vec<&str> = headers.iter().map(String::as_str).collect();
    o.table(
        ctx,
        "eta_t_vs_gamma.csv",
        Table::new(&hdr, cols).with_meta("t_flat_s", t_flat).with_meta("shape", &shape),
    )?;
    o.put("max_abs_diff_analytic", max_diff);
    o.put("max_abs_diff_analytic_all_valid", max_diff_valid);
    o.put("monotone_large_gamma", if monotone { 1.0 } else { 0.0 });

    let pulse = control_pulse(&shape, omegas[0], t_flat, gammas[0], Some(edge))?;
    o.table(ctx, "pulse_envelope.csv", pulse.to_table(1001))?;
    let span = cfg.f("profile_span")?;
    let grid = bloch::uniform_grid(-0.5 * span, 0.5 * span, cfg.int("n_profile")?);
    let prof = bloch::transfer_profile_tol(&pulse, &grid, ctx.tol)?;
    o.table(
        ctx,
        "transfer_profile.csv",
        prof.to_table()
            .with_meta("omega_hz", omegas[0])
            .with_meta("gamma_hz", gammas[0]),
    )?;
    Ok(o)
}

/// First time the curve drops through `level`, linearly interpolated.
fn crossing(t: &[f64], y: &[f64], level: f64) -> f64 {
    for i in 1..y.len() {
        if y[i - 1] >= level && y[i] < level {
            let f = (y[i - 1] - level) / (y[i - 1] - y[i]);
            return t[i - 1] + f * (t[i] - t[i - 1]);
        }
    }
    f64::NAN
}

fn spin_scenario(cfg: &ScenarioConfig, ctx: &Ctx) -> Result<Outcome> {
    let mut o = Outcome::default();
    let gamma = cfg.f("gamma_mw")?;
    let ens = SpinEnsemble::sample(cfg.int("n_ions")?, gamma, ctx.seed)?;
    let (t_s, pi_eff, t2s) = (cfg.f("t_s")?, cfg.f("pi_eff")?, cfg.f("t2s")?);

    let tf = bloch::uniform_grid(0.0, cfg.f("fid_max")?, cfg.int("n_fid")?);
    let fid = spinline::montecarlo_trace(&ens, &[], 1.0, f64::INFINITY, &tf)?;
    let fid_an: Vec<f64> = tf
        .iter()
        .map(|&t| spinline::fid_amplitude(gamma, t).map(|a| a * a))
        .collect::<Result<_>>()?;
    o.put("fid_half_time_s", crossing(&tf, &fid.intensity, 0.5));
    o.put("fid_half_time_analytic_s", spinline::fid_half_intensity_time(gamma)?);
    o.table(
        ctx,
        "fid.csv",
        Table::new(&["time_s", "montecarlo", "analytic"], vec![tf, fid.intensity, fid_an])
            .with_meta("seed", ctx.seed)
            .with_meta("n_ions", ens.len()),
    )?;

    let xm = cfg.f("mismatch_max")?;
    let xs = bloch::uniform_grid(-xm, xm, cfg.int("n_mismatch")?);
    let mc = spinline::montecarlo_mismatch_sweep(&ens, t_s, &xs, pi_eff, t2s)?;
    let an: Vec<f64> = xs
        .iter()
        .map(|&x| spinline::rephase_intensity(&EchoSchedule::new(t_s, 0.5 * (t_s - x), pi_eff, t2s)?, gamma))
        .collect::<Result<_>>()?;
    let peak = an.iter().cloned().fold(0.0, f64::max);
    let max_dev = mc.iter().zip(&an).map(|(m, a)| (m - a).abs()).fold(0.0, f64::max);
    o.put("max_dev_analytic_rel_peak", max_dev / peak);
    let sampled = analysis::with_peak_noise(&mc, cfg.f("noise")?, ctx.seed.wrapping_add(1));
    o.table(
        ctx,
        "mismatch_sweep.csv",
        Table::new(
            &["mismatch_s", "montecarlo", "analytic", "sampled"],
            vec![xs.clone(), mc, an, sampled.clone()],
        )
        .with_meta("t_s", t_s)
        .with_meta("seed", ctx.seed),
    )?;
    let fit = analysis::fit_gaussian_mismatch(&xs, &sampled)?;
    o.json(ctx, "gamma_fit.json", &fit)?;
    o.put("gamma_fit_hz", fit.get("gamma").unwrap_or(f64::NAN));
    o.put("gamma_sigma_hz", fit.sigma("gamma").unwrap_or(f64::NAN));
    Ok(o)
}

fn pump_scenario(cfg: &ScenarioConfig, ctx: &Ctx) -> Result<Outcome> {
    let mut o = Outcome::default();
    let line = |l: Line| -> Result<PumpLine> {
        Ok(PumpLine {
            line: l,
            rate_per_s: cfg.f("rate")?,
            scan_hz: cfg.f("scan")?,
        })
    };
    let stages = vec![
        PumpStage {
            name: "class-cleaning".into(),
            lines: Line::ALL.iter().map(|&l| line(l)).collect::<Result<_>>()?,
            duration_s: cfg.f("cleaning_duration")?,
        },
        PumpStage {
            name: "initialization".into(),
            lines: [Line::Nu2, Line::Nu3, Line::Nu4].iter().map(|&l| line(l)).collect::<Result<_>>()?,
            duration_s: cfg.f("init_duration")?,
        },
    ];
    let pc = PumpConfig {
        stages,
        inhom_fwhm_hz: cfg.f("inhom_fwhm")?,
        homogeneous_fwhm_hz: cfg.f("homogeneous_fwhm")?,
        relaxation: RelaxationRates::from_decay_times(cfg.f("tau_fast")?, cfg.f("tau_slow")?)?,
        class_step_hz: cfg.f("class_step")?,
        window_hz: cfg.f("window")?,
        reference_depth: cfg.f("reference_depth")?,
        step_s: cfg.f("step")?,
    };
    let model = PumpModel::new(default_scheme(), StrengthTable::default(), pc)?;
    let prepared = model.prepare()?;
    let p0 = prepared
        .get(0.0)
        .ok_or_else(|| Error::invalid("resonant class missing from the class grid"))?;
    o.put("p4_resonant", p0.populations[3]);
    o.put("conservation_error", prepared.max_conservation_error());

    let span = cfg.f("span")?;
    let grid = bloch::uniform_grid(-0.5 * span, 0.5 * span, cfg.int("n_spectrum")?);
    let d = model.absorption_spectrum(&prepared, &grid);
    let d_ref = model.absorption_spectrum(&model.initial_classes(), &grid);
    o.put("antihole_peak_depth", model.absorption_spectrum(&prepared, &[0.0])[0]);
    let mut t = pumping::spectrum_table(&grid, &d);
    t.headers.push("unprepared_depth".into());
    t.columns.push(d_ref);
    o.table(ctx, "spectrum.csv", t)?;

    let probe = bloch::uniform_grid(0.0, cfg.f("probe_max")?, cfg.int("n_probe")?);
    let tr = model.hole_lifetime_trace(&prepared, &probe)?;
    let sampled = analysis::with_peak_noise(&tr.antihole_depth, cfg.f("noise")?, ctx.seed);
    let mut t = tr.to_table().with_meta("seed", ctx.seed);
    t.headers.push("antihole_sampled".into());
    t.columns.push(sampled.clone());
    o.table(ctx, "hole_trace.csv", t)?;
    let fit = analysis::fit_double_exp(&probe, &sampled)?;
    o.json(ctx, "hole_fit.json", &fit)?;
    o.put("tau_fast_s", fit.get("T1").unwrap_or(f64::NAN));
    o.put("tau_slow_s", fit.get("T2").unwrap_or(f64::NAN));
    Ok(o)
}

#[derive(Serialize)]
struct StorageBudget<'a> {
    active: &'a protocol::EfficiencyBudget,
    report: &'a protocol::BudgetReport,
}

fn storage_scenario(cfg: &ScenarioConfig, ctx: &Ctx) -> Result<Outcome> {
    let mut o = Outcome::default();
    let d = cfg.f("d_peak")?;
    let comb_params = CombParams {
        d_peak: d,
        finesse: comb::optimal_finesse(d)?,
        d0: cfg.f("d0")?,
        bandwidth_hz: cfg.f("comb_bandwidth")?,
        ..CombParams::default()
    };
    let control = control_pulse(
        &cfg.text("control_shape")?,
        cfg.f("control_omega")?,
        cfg.f("control_t_flat")?,
        cfg.f("control_chirp")?,
        None,
    )?;
    let mut p = StorageParams {
        inv_delta_s: cfg.f("inv_delta")?,
        t_s: cfg.f("t_s")?,
        input_duration_s: cfg.f("input_duration")?,
        input_bandwidth_hz: cfg.f("input_bandwidth")?,
        control_pulse: control,
        mw_pulse_duration_s: cfg.f("mw_duration")?,
        mw_chirp_bw_hz: cfg.f("mw_chirp")?,
        comb: comb_params,
        afc_decay: DelayDecay::Single { t2_star_s: 1.0 },
        gamma_mw_hz: cfg.f("gamma_mw")?,
        t2s: cfg.f("t2s")?,
        pi_eff: cfg.f("pi_eff")?,
        transfer: TransferModel::Fixed { eta: 1.0 },
        start_s: 0.0,
    };
    let timeline = protocol::build_timeline(&p)?;
    let eta0 = comb::fourier_efficiency(&p.comb_profile()?)?.eta;
    p.afc_decay = afc_decay(cfg, eta0)?;
    let eta_t_sim = bloch::average_transfer_tol(&p.control_pulse, p.input_bandwidth_hz, cfg.int("n_points")?, ctx.tol)?;
    let eta_t = cfg.opt_f("eta_t")?.unwrap_or(eta_t_sim);
    p.transfer = TransferModel::Fixed { eta: eta_t };
    let budget = protocol::efficiency_budget(&p)?;
    let report = protocol::budget_report(&p, eta_t_sim)?;
    o.json(ctx, "timeline.json", &timeline)?;
    o.json(ctx, "budget.json", &StorageBudget { active: &budget, report: &report })?;

    let step = p.input_duration_s / 20.0;
    let n = ((p.t_m() + 2.0 * p.input_duration_s + 1e-6) / step).ceil() as usize + 1;
    let times: Vec<f64> = (0..n).map(|i| -0.5e-6 + i as f64 * step).collect();
    let trace = protocol::simulate_storage(&p, &times)?;
    o.table(ctx, "trace.csv", trace.to_table())?;

    let ts = bloch::uniform_grid(cfg.f("sweep_min")?, cfg.f("sweep_max")?, cfg.int("n_sweep")?);
    let sweep = protocol::storage_sweep(&p, &ts)?;
    let eta_m: Vec<f64> = sweep.iter().map(|b| b.eta_m).collect();
    let sampled = analysis::with_relative_noise(&eta_m, cfg.f("noise")?, ctx.seed);
    let tm: Vec<f64> = ts.iter().map(|t| t + p.inv_delta_s).collect();
    o.table(
        ctx,
        "sweep.csv",
        Table::new(
            &["t_s", "t_m_s", "eta_m", "eta_m_sampled"],
            vec![ts.clone(), tm, eta_m, sampled.clone()],
        )
        .with_meta("seed", ctx.seed),
    )?;
    // intensity ∝ exp(−2T_S/T₂ˢ)
    let fit = analysis::fit_exp(&ts, &sampled)?;
    o.json(ctx, "t2s_fit.json", &fit)?;

    o.put("t_m_s", p.t_m());
    o.put("eta_afc", budget.eta_afc);
    o.put("eta_t", budget.eta_t);
    o.put("eta_t_simulated", eta_t_sim);
    o.put("eta_m", budget.eta_m);
    o.put("eta_m_simulated_transfer", report.simulated_transfer.eta_m);
    o.put("eta_m_measured_transfer", report.measured_transfer.eta_m);
    o.put("discrepancy_simulated", report.discrepancy_simulated);
    o.put("discrepancy_measured", report.discrepancy_measured);
    o.put("t2s_fit_s", 2.0 * fit.get("T").unwrap_or(f64::NAN));
    Ok(o)
}

fn fit_scenario(cfg: &ScenarioConfig, ctx: &Ctx) -> Result<Outcome> {
    let mut o = Outcome::default();
    let model: Model = cfg
        .text("model")?
        .parse()
        .map_err(|e: Error| Error::config(Some("model"), e.to_string()))?;
    let table = Table::read(cfg.path("input")?)?;
    let fit = fit_table(model, &table, &cfg.text("x_column")?, &cfg.text("y_column")?, &cfg.text("sigma_column")?)?;
    o.json(ctx, "fit.json", &fit)?;
    for p in &fit.params {
        o.put(&p.name, p.value);
        o.put(&format!("{}_sigma", p.name), p.sigma);
    }
    o.put("residual_norm", fit.residual_norm);
    Ok(o)
}

/// Fits `model` to columns of `table`; empty names select the first two
/// columns and no σ.
pub fn fit_table(model: Model, table: &Table, x: &str, y: &str, sigma: &str) -> Result<FitResult> {
    let col = |name: &str, idx: usize| -> Result<&[f64]> {
        if name.is_empty() {
            table
                .columns
                .get(idx)
                .map(Vec::as_slice)
                .ok_or_else(|| Error::invalid(format!("input needs at least {} columns", idx + 1)))
        } else {
            table
                .column(name)
                .ok_or_else(|| Error::invalid(format!("no column named `{name}`")))
        }
    };
    let xs = col(x, 0)?;
    let ys = col(y, 1)?;
    let s = if sigma.is_empty() { None } else { Some(col(sigma, 2)?) };
    analysis::fit_model(model, xs, ys, s)
}
