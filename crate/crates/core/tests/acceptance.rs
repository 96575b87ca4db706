// Acceptance run: one PASS/FAIL line per criterion with its runtime.
// `cargo test --test acceptance` (exit status is non-zero on any failure).

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use afc_memsim::analysis::dominant_frequency;
use afc_memsim::bloch::{self, BlochState, PulseEnvelope};
use afc_memsim::cli::{self, config, Figure, Overrides};
use afc_memsim::comb::{self, CombParams, ToothShape};
use afc_memsim::spinline::{self, EchoSchedule, SpinEnsemble};

struct Check {
    label: String,
    ok: bool,
}

#[derive(Default)]
struct Checks(Vec<Check>);

impl Checks {
    fn within(&mut self, label: &str, value: f64, lo: f64, hi: f64) {
        self.0.push(Check {
            label: format!("{label} = {value:.6e} in [{lo:.4e}, {hi:.4e}]"),
            ok: value >= lo && value <= hi,
        });
    }

    fn near(&mut self, label: &str, value: f64, target: f64, tol: f64) {
        self.0.push(Check {
            label: format!("{label} = {value:.6e} (target {target:.4e} ± {tol:.1e})"),
            ok: (value - target).abs() <= tol,
        });
    }

    fn at_most(&mut self, label: &str, value: f64, max: f64) {
        self.0.push(Check {
            label: format!("{label} = {value:.4e} <= {max:.1e}"),
            ok: value <= max,
        });
    }

    fn holds(&mut self, label: &str, ok: bool) {
        self.0.push(Check { label: label.to_owned(), ok });
    }
}

type Body = fn(&Path) -> Result<Checks, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn summary(fig: Figure, dir: &Path, ov: &Overrides) -> Result<BTreeMap<String, f64>, String> {
    let (o, _) = cli::reproduce(fig, &dir.join(fig.id()), ov).map_err(err)?;
    Ok(o.summary)
}

fn c1_constants(_: &Path) -> Result<Checks, String> {
    let mut c = Checks::default();
    let f = comb::optimal_finesse(4.0).map_err(err)?;
    c.near("eta(d=4, F_opt, d0=0)", comb::analytic_efficiency(4.0, f, 0.0).map_err(err)?, 0.32, 0.003);
    c.near("eta(d=4, F_opt, d0=0.3)", comb::analytic_efficiency(4.0, f, 0.3).map_err(err)?, 0.237, 0.003);
    Ok(c)
}

fn c2_oracle(_: &Path) -> Result<Checks, String> {
    let mut c = Checks::default();
    let mut worst: f64 = 0.0;
    for d in [0.5, 1.0, 2.0, 4.0, 8.0] {
        for f in [1.5, 2.0, 3.0, 5.0] {
            let p = CombParams {
                d_peak: d,
                finesse: f,
                d0: 0.0,
                tooth_shape: ToothShape::Square,
                ..CombParams::default()
            };
            let num = comb::fourier_efficiency(&comb::build_comb(&p).map_err(err)?).map_err(err)?.eta;
            let an = comb::analytic_efficiency(d, f, 0.0).map_err(err)?;
            worst = worst.max((num / an - 1.0).abs());
        }
    }
    c.at_most("max relative deviation over 20 (d, F)", worst, 0.01);

    let mut worst_arg: f64 = 0.0;
    for i in 0..=19 {
        let d = 0.5 + 0.5 * i as f64;
        let f_opt = comb::optimal_finesse(d).map_err(err)?;
        for d0 in [0.0, 0.3] {
            let (mut best_f, mut best) = (0.0, f64::MIN);
            for k in 0..=29_000 {
                let f = 1.0 + 0.001 * k as f64;
                let e = comb::analytic_efficiency(d, f, d0).map_err(err)?;
                if e > best {
                    best = e;
                    best_f = f;
                }
            }
            worst_arg = worst_arg.max((best_f - f_opt).abs());
        }
    }
    c.at_most("max |argmax_F - F_opt| for d in [0.5, 10]", worst_arg, 0.01);
    Ok(c)
}

fn c3_bound(_: &Path) -> Result<Checks, String> {
    let mut c = Checks::default();
    let mut best: f64 = 0.0;
    for i in 0..=49_900 {
        let d = 0.1 + 0.001 * i as f64;
        let f = comb::optimal_finesse(d).map_err(err)?;
        best = best.max(comb::analytic_efficiency(d, f, 0.0).map_err(err)?);
    }
    c.within("max eta over d in [0.1, 50]", best, 0.53, 0.54);
    Ok(c)
}

fn c4_bloch(_: &Path) -> Result<Checks, String> {
    let mut c = Checks::default();
    let tol = 1e-10;
    let omega = 1e6;
    let pi = PulseEnvelope::square(omega, 0.5 / omega).map_err(err)?;
    let two_pi = PulseEnvelope::square(omega, 1.0 / omega).map_err(err)?;
    let w_pi = bloch::evolve_final(BlochState::GROUND, &pi, 0.0, tol).map_err(err)?.w;
    let w_2pi = bloch::evolve_final(BlochState::GROUND, &two_pi, 0.0, tol).map_err(err)?.w;
    c.near("w after pi", w_pi, 1.0, 1e-6);
    c.near("w after 2pi", w_2pi, -1.0, 1e-6);

    let mut worst_rel: f64 = 0.0;
    let mut worst_drift: f64 = 0.0;
    for om in [0.5e6f64, 1.0e6, 1.5e6, 2.0e6, 2.5e6] {
        for det in [0.0, 0.5e6, 1.0e6, 2.0e6, 3.0e6] {
            let gen = (om * om + det * det).sqrt();
            let dur = 20.0 / gen;
            let (t, w) = bloch::rabi_trace(om, dur, det, 4001).map_err(err)?;
            let f = dominant_frequency(&t, &w).ok_or("no dominant frequency")?;
            worst_rel = worst_rel.max((f / gen - 1.0).abs());
            let p = PulseEnvelope::square(om, dur).map_err(err)?;
            let tr = bloch::evolve(BlochState::GROUND, &p, det, bloch::DEFAULT_TOL).map_err(err)?;
            worst_drift = worst_drift.max(tr.max_norm_drift());
        }
    }
    for (om, g) in [(0.6e6, 10e6), (2e6, 50e6)] {
        let p = PulseEnvelope::hsh(om, 5e-6, g).map_err(err)?;
        for det in [-0.4 * g, 0.0, 0.3 * g] {
            let tr = bloch::evolve(BlochState::GROUND, &p, det, bloch::DEFAULT_TOL).map_err(err)?;
            worst_drift = worst_drift.max(tr.max_norm_drift());
        }
    }
    c.at_most("max relative error of Rabi frequency (5x5)", worst_rel, 0.01);
    c.at_most("max Bloch-norm drift", worst_drift, 1e-6);
    Ok(c)
}

fn c5_hsh(_: &Path) -> Result<Checks, String> {
    let mut c = Checks::default();
    let t = 5e-6;
    let mut worst: f64 = 0.0;
    for om in [0.6e6, 1.0e6, 1.5e6, 2.0e6] {
        for g in [10e6, 20e6, 50e6] {
            let p = PulseEnvelope::hsh(om, t, g).map_err(err)?;
            let sim = bloch::average_transfer(&p, g, 101).map_err(err)?;
            let an = bloch::hsh_efficiency_analytic(t, om, g).map_err(err)?.eta;
            worst = worst.max((sim - an).abs());
        }
    }
    c.at_most("max |eta_bloch - eta_closed_form|", worst, 0.05);

    // decreasing in Γ wherever the closed form is below 1 - e^-3
    let gammas: Vec<f64> = (0..=16).map(|k| 10e6 + 2.5e6 * k as f64).collect();
    let mut monotone = true;
    for om in [0.6e6, 1.0e6, 1.5e6, 2.0e6] {
        let mut prev = f64::INFINITY;
        for &g in &gammas {
            if bloch::hsh_efficiency_analytic(t, om, g).map_err(err)?.eta > 1.0 - (-3f64).exp() {
                continue;
            }
            let p = PulseEnvelope::hsh(om, t, g).map_err(err)?;
            let sim = bloch::average_transfer(&p, g, 101).map_err(err)?;
            monotone &= sim < prev;
            prev = sim;
        }
    }
    c.holds("eta_t strictly decreasing in Gamma (large-Gamma regime)", monotone);
    Ok(c)
}

fn c6_spin(dir: &Path) -> Result<Checks, String> {
    let mut c = Checks::default();
    let gamma = 0.73e6;
    let ens = SpinEnsemble::sample(100_000, gamma, 2).map_err(err)?;
    let (t_s, pi_eff, t2s) = (100e-6, 0.97, 1.2e-3);
    let xs = bloch::uniform_grid(-2e-6, 2e-6, 41);
    let mc = spinline::montecarlo_mismatch_sweep(&ens, t_s, &xs, pi_eff, t2s).map_err(err)?;
    let mut an = Vec::new();
    for &x in &xs {
        let s = EchoSchedule::new(t_s, 0.5 * (t_s - x), pi_eff, t2s).map_err(err)?;
        an.push(spinline::rephase_intensity(&s, gamma).map_err(err)?);
    }
    let peak = an.iter().cloned().fold(0.0, f64::max);
    let dev = mc.iter().zip(&an).map(|(m, a)| (m - a).abs()).fold(0.0, f64::max);
    c.at_most("max |MC - closed form| / peak (N = 1e5)", dev / peak, 0.03);

    let s = summary(Figure::Sfig3, dir, &Overrides::default())?;
    c.near("fitted Gamma_MW (MHz)", s["gamma_fit_hz"] / 1e6, 0.73, 0.04);

    // τ grid whose centre entry is exactly T_S/2
    let taus: Vec<f64> = (-20..=20).map(|k| 0.5 * t_s + 0.05e-6 * k as f64).collect();
    let argmax = |vals: &[f64]| {
        vals.iter()
            .enumerate()
            .fold((0, f64::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
            .0
    };
    let mut factor = Vec::new();
    let mut mc_tau = Vec::new();
    for &tau in &taus {
        let s = EchoSchedule::new(t_s, tau, pi_eff, t2s).map_err(err)?;
        factor.push(spinline::gaussian_mismatch(gamma, s.mismatch()));
        mc_tau.push(spinline::montecarlo_echo(&ens, &s, &[t_s]).map_err(err)?.intensity[0]);
    }
    c.holds("closed-form factor argmax at tau = T_S/2", taus[argmax(&factor)] == 0.5 * t_s);
    c.holds("Monte-Carlo argmax at tau = T_S/2", taus[argmax(&mc_tau)] == 0.5 * t_s);
    c.near("FID half-intensity time (us)", s["fid_half_time_s"] * 1e6, 0.43, 0.03);
    Ok(c)
}

fn preset_with_noise(fig: Figure, from: &str, to: &str, dir: &Path) -> Result<BTreeMap<String, f64>, String> {
    if !fig.preset().contains(from) {
        return Err(format!("{}: `{from}` not in preset", fig.id()));
    }
    let text = fig.preset().replace(from, to);
    let cfg = config::parse(&text, None).map_err(err)?;
    let out = dir.join(format!("{}-{}", fig.id(), to.replace([' ', '='], "")));
    Ok(cli::run_config(cfg, &out, &Overrides::default()).map_err(err)?.summary)
}

fn c7_fits(dir: &Path) -> Result<Checks, String> {
    let mut c = Checks::default();
    let rel = |v: f64, target: f64| (v / target - 1.0).abs();
    for (tag, from, to) in [("1%", "noise = 0.01", "noise = 0.01"), ("2%", "noise = 0.01", "noise = 0.02")] {
        let s = preset_with_noise(Figure::Fig2b, from, to, dir)?;
        c.at_most(&format!("comb T_fast rel err at {tag} noise"), rel(s["t2_fast_s"], 15e-6), 0.05);
        c.at_most(&format!("comb T_slow rel err at {tag} noise"), rel(s["t2_slow_s"], 165e-6), 0.05);
        let s = preset_with_noise(Figure::Fig1c, from, to, dir)?;
        c.at_most(&format!("hole tau_fast rel err at {tag} noise"), rel(s["tau_fast_s"], 36e-3), 0.05);
        c.at_most(&format!("hole tau_slow rel err at {tag} noise"), rel(s["tau_slow_s"], 390e-3), 0.05);
    }
    let s = summary(Figure::Fig3d, dir, &Overrides::default())?;
    c.within("T2s from storage sweep (ms)", s["t2s_fit_s"] * 1e3, 1.0, 1.4);
    Ok(c)
}

fn c8_pumping(dir: &Path) -> Result<Checks, String> {
    let mut c = Checks::default();
    let s = summary(Figure::Fig1c, dir, &Overrides::default())?;
    c.within("P(|4>g) of resonant class", s["p4_resonant"], 0.9, 1.0);
    c.at_most("population conservation error", s["conservation_error"], 1e-9);
    c.near("hole tau_fast (ms)", s["tau_fast_s"] * 1e3, 36.0, 0.05 * 36.0);
    c.near("hole tau_slow (ms)", s["tau_slow_s"] * 1e3, 390.0, 0.05 * 390.0);
    Ok(c)
}

fn c9_budget(dir: &Path) -> Result<Checks, String> {
    let mut c = Checks::default();
    let (o, cmp) = cli::reproduce(Figure::Fig3d, &dir.join("fig3d-budget"), &Overrides::default()).map_err(err)?;
    let s = &o.summary;
    c.within("eta_AFC(7 us)", s["eta_afc"], 0.12, 0.15);
    c.within("eta_t (Bloch)", s["eta_t_simulated"], 0.0, 1.0);
    let row = cmp
        .rows
        .iter()
        .find(|r| r.quantity == "eta_m_simulated_transfer")
        .ok_or("budget row missing")?;
    c.within("predicted eta_M", row.simulated, 0.06, 0.13);
    c.within("ratio to measured 3.3%", row.simulated / 0.033, 2.0, 4.0);
    c.holds("discrepancy reported in comparison", cmp.rows.iter().any(|r| r.quantity.starts_with("discrepancy")));
    Ok(c)
}

fn tree(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut m = BTreeMap::new();
    for e in std::fs::read_dir(dir).map_err(err)? {
        let e = e.map_err(err)?;
        m.insert(e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).map_err(err)?);
    }
    Ok(m)
}

fn c10_determinism(dir: &Path) -> Result<Checks, String> {
    let mut c = Checks::default();
    for fig in Figure::ALL {
        let runs = [("a", Some(4)), ("b", Some(4)), ("c", Some(1))];
        let mut trees = Vec::new();
        for (tag, threads) in runs {
            let out = dir.join(format!("det-{}-{tag}", fig.id()));
            let ov = Overrides {
                threads,
                ..Overrides::default()
            };
            cli::reproduce(fig, &out, &ov).map_err(err)?;
            trees.push(tree(&out)?);
        }
        c.holds(&format!("{}: repeat run byte-identical", fig.id()), trees[0] == trees[1]);
        c.holds(&format!("{}: 1 vs 4 threads byte-identical", fig.id()), trees[0] == trees[2]);
    }
    Ok(c)
}

fn main() -> ExitCode {
    // `cargo test` passes harness flags; only a name filter is honoured.
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(usize, &str, Duration, Body); 10] = [
        (1, "AFC efficiency constants", Duration::from_secs(1), c1_constants),
        (2, "Fourier oracle equivalence", Duration::from_secs(10), c2_oracle),
        (3, "forward-recall bound", Duration::from_secs(1), c3_bound),
        (4, "Bloch correctness", Duration::from_secs(30), c4_bloch),
        (5, "HSH cross-check", Duration::from_secs(300), c5_hsh),
        (6, "spin dephasing", Duration::from_secs(60), c6_spin),
        (7, "fit round-trips", Duration::from_secs(30), c7_fits),
        (8, "optical pumping", Duration::from_secs(60), c8_pumping),
        (9, "end-to-end budget", Duration::from_secs(60), c9_budget),
        (10, "determinism", Duration::from_secs(600), c10_determinism),
    ];
    let tmp = tempfile::tempdir().expect("tempdir");
    let mut failed = 0;
    for (n, name, budget, body) in criteria {
        let id = format!("criterion_{n}");
        if !filter.is_empty() && !filter.iter().any(|f| id.contains(f.as_str()) || name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let res = body(tmp.path());
        let dt = start.elapsed();
        let (ok, lines) = match res {
            Ok(checks) => {
                let ok = checks.0.iter().all(|c| c.ok);
                let lines: Vec<String> = checks
                    .0
                    .iter()
                    .map(|c| format!("    [{}] {}", if c.ok { "ok" } else { "FAIL" }, c.label))
                    .collect();
                (ok, lines)
            }
            Err(e) => (false, vec![format!("    error: {e}")]),
        };
        let in_time = dt <= budget;
        let pass = ok && in_time;
        println!(
            "{} criterion {n:>2} {name}: {:.3} s (budget {} s{})",
            if pass { "PASS" } else { "FAIL" },
            dt.as_secs_f64(),
            budget.as_secs(),
            if in_time { "" } else { ", exceeded" }
        );
        for l in lines {
            println!("{l}");
        }
        if !pass {
            failed += 1;
        }
    }
    if failed == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criteria failed");
        ExitCode::FAILURE
    }
}
