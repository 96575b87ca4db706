//! Dormand–Prince 5(4) with PI step control.
//!
//! The integrator restarts at every breakpoint so that kinks in the drive
//! (pulse segment joints) never sit inside a step.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Upper bound on the step, seconds. Keeps the solver from striding over
    /// features of the drive that are narrow compared with the interval.
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: 1e-8,
            atol: 1e-8,
            h_max: f64::INFINITY,
            max_steps: 10_000_000,
        }
    }
}

impl OdeOptions {
    pub fn with_tol(tol: f64) -> Self {
        OdeOptions {
            rtol: tol,
            atol: tol,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// difference between the 5th- and 4th-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[inline]
fn axpy<const N: usize>(y: &[f64; N], terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for (c, k) in terms {
        for i in 0..N {
            out[i] += c * k[i];
        }
    }
    out
}

/// Integrates `dy/dt = f(t, y)` from `t0` to `t1`, calling `observe` after
/// every accepted step (and once at `t0`). `breakpoints` outside (t0, t1) are
/// ignored.
pub fn integrate<const N: usize, F, O>(
    f: F,
    t0: f64,
    y0: [f64; N],
    t1: f64,
    breakpoints: &[f64],
    opts: &OdeOptions,
    mut observe: O,
) -> Result<([f64; N], OdeStats)>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
    O: FnMut(f64, &[f64; N]),
{
    if !(opts.rtol > 0.0 && opts.atol > 0.0) {
        return Err(Error::invalid("ODE tolerances must be > 0"));
    }
    if !(t1 >= t0) {
        return Err(Error::invalid("integration interval must satisfy t1 >= t0"));
    }
    let mut stops: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|&b| b > t0 && b < t1)
        .collect();
    stops.sort_by(f64::total_cmp);
    stops.dedup();
    stops.push(t1);

    let mut stats = OdeStats::default();
    let mut y = y0;
    let mut t = t0;
    observe(t, &y);
    let mut h_prev: Option<f64> = None;
    for &stop in &stops {
        if stop <= t {
            continue;
        }
        let (yn, h) = segment(&f, t, y, stop, h_prev, opts, &mut stats, &mut observe)?;
        y = yn;
        t = stop;
        h_prev = Some(h);
    }
    Ok((y, stats))
}

#[allow(clippy::too_many_arguments)]
fn segment<const N: usize, F, O>(
    f: &F,
    t0: f64,
    y0: [f64; N],
    t1: f64,
    h_hint: Option<f64>,
    opts: &OdeOptions,
    stats: &mut OdeStats,
    observe: &mut O,
) -> Result<([f64; N], f64)>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
    O: FnMut(f64, &[f64; N]),
{
    let span = t1 - t0;
    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, &y);
    stats.evaluations += 1;

    let mut h = match h_hint {
        Some(h) => h,
        None => initial_step(f, t, &y, &k1, opts, stats),
    }
    .min(span)
    .min(opts.h_max);
    let mut err_prev: f64 = 1e-4;
    let mut last_h = h;

    loop {
        let remaining = t1 - t;
        if remaining <= 1e-15 * t1.abs().max(span) {
            break;
        }
        let mut last = false;
        if h >= remaining {
            h = remaining;
            last = true;
        }
        let h_min = 16.0 * f64::EPSILON * t.abs().max(span);
        if h < h_min {
            return Err(Error::Integration {
                time: t,
                detuning: None,
                reason: format!("step size {h:e} s underflowed"),
            });
        }
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(Error::Integration {
                time: t,
                detuning: None,
                reason: format!("exceeded {} steps", opts.max_steps),
            });
        }

        let k2 = f(t + C2 * h, &axpy(&y, &[(h * A21, &k1)]));
        let k3 = f(t + C3 * h, &axpy(&y, &[(h * A31, &k1), (h * A32, &k2)]));
        let k4 = f(
            t + C4 * h,
            &axpy(&y, &[(h * A41, &k1), (h * A42, &k2), (h * A43, &k3)]),
        );
        let k5 = f(
            t + C5 * h,
            &axpy(
                &y,
                &[(h * A51, &k1), (h * A52, &k2), (h * A53, &k3), (h * A54, &k4)],
            ),
        );
        let t_new = if last { t1 } else { t + h };
        let k6 = f(
            t_new,
            &axpy(
                &y,
                &[
                    (h * A61, &k1),
                    (h * A62, &k2),
                    (h * A63, &k3),
                    (h * A64, &k4),
                    (h * A65, &k5),
                ],
            ),
        );
        let y_new = axpy(
            &y,
            &[(h * B1, &k1), (h * B3, &k3), (h * B4, &k4), (h * B5, &k5), (h * B6, &k6)],
        );
        let k7 = f(t_new, &y_new);
        stats.evaluations += 6;

        let mut err = 0.0f64;
        for i in 0..N {
            let e = h
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
            err = err.max((e / sc).abs());
        }
        if !err.is_finite() {
            return Err(Error::Integration {
                time: t,
                detuning: None,
                reason: "non-finite state".into(),
            });
        }

        if err <= 1.0 {
            stats.accepted += 1;
            t = t_new;
            y = y_new;
            k1 = k7;
            last_h = h;
            observe(t, &y);
            if last {
                break;
            }
            // PI controller (Hairer–Wanner), exponents 0.7/5 and 0.4/5
            let fac = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.14) * err_prev.powf(0.08)).clamp(0.2, 5.0)
            };
            err_prev = err.max(1e-4);
            h = (h * fac).min(opts.h_max);
        } else {
            stats.rejected += 1;
            h *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
        }
    }
    Ok((y, last_h))
}

fn initial_step<const N: usize, F>(
    f: &F,
    t: f64,
    y: &[f64; N],
    k1: &[f64; N],
    opts: &OdeOptions,
    stats: &mut OdeStats,
) -> f64
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let sc = |i: usize| opts.atol + opts.rtol * y[i].abs();
    let d0 = (0..N).map(|i| (y[i] / sc(i)).powi(2)).sum::<f64>().sqrt();
    let d1 = (0..N).map(|i| (k1[i] / sc(i)).powi(2)).sum::<f64>().sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let y1 = axpy(y, &[(h0, k1)]);
    let k2 = f(t + h0, &y1);
    stats.evaluations += 1;
    let d2 = (0..N)
        .map(|i| ((k2[i] - k1[i]) / sc(i)).powi(2))
        .sum::<f64>()
        .sqrt()
        / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1)
}
