//! C ABI over `afc_memsim`.
//!
//! Every fallible call returns an [`AfcStatus`]; on failure the message is
//! kept per thread and read back with [`afc_last_error`]. Handles are opaque
//! and must be released with their matching `_free`.
//!
//! # Safety
//!
//! Pointer arguments must be NULL or valid for the access implied by the
//! signature: `out_*` writable, arrays readable (or writable) for `n`
//! elements, strings NUL-terminated, handles obtained from this library
//! and not yet freed. NULL is reported as `AFC_STATUS_NULL_POINTER` where a
//! value is required.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use afc_memsim::analysis::{self, FitResult, Model};
use afc_memsim::bloch::{self, PulseEnvelope};
use afc_memsim::comb::{self, CombParams, CombProfile, ToothShape};
use afc_memsim::{cli, protocol, spinline, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AfcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Resolution = 3,
    Integration = 4,
    FitNotConverged = 5,
    NonIdentifiable = 6,
    Schedule = 7,
    Config = 8,
    Io = 9,
    Utf8 = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AfcToothShape {
    Square = 0,
    Gaussian = 1,
    Lorentzian = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AfcFitModel {
    Exp = 0,
    DoubleExp = 1,
    GaussianMismatch = 2,
    GaussianMismatchCentered = 3,
}

/// Plain comb parameters. `tooth_fwhm_hz <= 0` means Δ/F.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AfcCombParams {
    pub delta_hz: f64,
    pub d_peak: f64,
    pub finesse: f64,
    pub d0: f64,
    pub bandwidth_hz: f64,
    pub tooth_shape: AfcToothShape,
    pub tooth_fwhm_hz: f64,
    pub samples_per_period: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct AfcBudget {
    pub eta_afc: f64,
    pub eta_t: f64,
    pub eta_mw: f64,
    pub spin_decay: f64,
    pub gaussian_mismatch: f64,
    pub eta_m: f64,
}

pub struct AfcComb(CombProfile);
pub struct AfcPulse(PulseEnvelope);
pub struct AfcFit(FitResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> AfcStatus {
    match e {
        Error::InvalidArgument(_) => AfcStatus::InvalidArgument,
        Error::Resolution { .. } => AfcStatus::Resolution,
        Error::Integration { .. } => AfcStatus::Integration,
        Error::FitNotConverged { .. } => AfcStatus::FitNotConverged,
        Error::NonIdentifiable(_) => AfcStatus::NonIdentifiable,
        Error::Schedule(_) => AfcStatus::Schedule,
        Error::Config { .. } => AfcStatus::Config,
        Error::Csv(_) | Error::Json(_) | Error::Io(_) => AfcStatus::Io,
    }
}

enum Fail {
    Null(&'static str),
    Utf8(&'static str),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> AfcStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AfcStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            AfcStatus::NullPointer
        }
        Ok(Err(Fail::Utf8(what))) => {
            set_error(format!("{what} is not valid UTF-8"));
            AfcStatus::Utf8
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            AfcStatus::Panic
        }
    }
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn borrow<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn floats<'a>(p: *const f64, n: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(slice::from_raw_parts(p, n))
}

unsafe fn text<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail::Utf8(what))
}

/// Message for the last failed call on this thread, or NULL. Valid until the
/// next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn afc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn afc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub unsafe extern "C" fn afc_optimal_finesse(d: f64, out_f: *mut f64) -> AfcStatus {
    guard(|| {
        *out(out_f, "out_f")? = comb::optimal_finesse(d)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn afc_analytic_efficiency(d: f64, finesse: f64, d0: f64, out_eta: *mut f64) -> AfcStatus {
    guard(|| {
        *out(out_eta, "out_eta")? = comb::analytic_efficiency(d, finesse, d0)?;
        Ok(())
    })
}

/// `out_outside_validity` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn afc_hsh_efficiency_analytic(
    t_flat_s: f64,
    omega_hz: f64,
    gamma_bw_hz: f64,
    out_eta: *mut f64,
    out_outside_validity: *mut bool,
) -> AfcStatus {
    guard(|| {
        let r = bloch::hsh_efficiency_analytic(t_flat_s, omega_hz, gamma_bw_hz)?;
        *out(out_eta, "out_eta")? = r.eta;
        if let Some(v) = out_outside_validity.as_mut() {
            *v = r.outside_validity;
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn afc_fid_half_intensity_time(gamma_mw_hz: f64, out_t: *mut f64) -> AfcStatus {
    guard(|| {
        *out(out_t, "out_t")? = spinline::fid_half_intensity_time(gamma_mw_hz)?;
        Ok(())
    })
}

/// Budget for the reference storage configuration with spin storage time `t_s`.
#[no_mangle]
pub unsafe extern "C" fn afc_reference_budget(t_s: f64, out_budget: *mut AfcBudget) -> AfcStatus {
    guard(|| {
        let dst = out(out_budget, "out_budget")?;
        let mut p = protocol::StorageParams::reference()?;
        p.t_s = t_s;
        let b = protocol::efficiency_budget(&p)?;
        *dst = AfcBudget {
            eta_afc: b.eta_afc,
            eta_t: b.eta_t,
            eta_mw: b.eta_mw,
            spin_decay: b.spin_decay,
            gaussian_mismatch: b.gaussian_mismatch,
            eta_m: b.eta_m,
        };
        Ok(())
    })
}

/// Runs a scenario config file and writes its outputs into `out_dir`.
#[no_mangle]
pub unsafe extern "C" fn afc_run_config(config_path: *const c_char, out_dir: *const c_char) -> AfcStatus {
    guard(|| {
        let cfg = text(config_path, "config_path")?;
        let dir = text(out_dir, "out_dir")?;
        cli::run_file(Path::new(cfg), Path::new(dir), &cli::Overrides::default())?;
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn afc_comb_params_default() -> AfcCombParams {
    let p = CombParams::default();
    AfcCombParams {
        delta_hz: p.delta_hz,
        d_peak: p.d_peak,
        finesse: p.finesse,
        d0: p.d0,
        bandwidth_hz: p.bandwidth_hz,
        tooth_shape: AfcToothShape::Square,
        tooth_fwhm_hz: 0.0,
        samples_per_period: p.samples_per_period,
    }
}

#[no_mangle]
pub unsafe extern "C" fn afc_comb_new(params: *const AfcCombParams, out_comb: *mut *mut AfcComb) -> AfcStatus {
    guard(|| {
        let p = borrow(params, "params")?;
        let dst = out(out_comb, "out_comb")?;
        let cp = CombParams {
            delta_hz: p.delta_hz,
            d_peak: p.d_peak,
            finesse: p.finesse,
            d0: p.d0,
            bandwidth_hz: p.bandwidth_hz,
            tooth_shape: match p.tooth_shape {
                AfcToothShape::Square => ToothShape::Square,
                AfcToothShape::Gaussian => ToothShape::Gaussian,
                AfcToothShape::Lorentzian => ToothShape::Lorentzian,
            },
            tooth_fwhm_hz: (p.tooth_fwhm_hz > 0.0).then_some(p.tooth_fwhm_hz),
            broadening: None,
            samples_per_period: p.samples_per_period,
        };
        *dst = Box::into_raw(Box::new(AfcComb(comb::build_comb(&cp)?)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn afc_comb_free(comb: *mut AfcComb) {
    if !comb.is_null() {
        drop(Box::from_raw(comb));
    }
}

/// Number of grid samples; 0 for NULL.
#[no_mangle]
pub unsafe extern "C" fn afc_comb_len(comb: *const AfcComb) -> usize {
    comb.as_ref().map_or(0, |c| c.0.depth.len())
}

/// Copies up to `cap` samples into either buffer; both may be NULL.
#[no_mangle]
pub unsafe extern "C" fn afc_comb_samples(
    comb: *const AfcComb,
    detuning_hz: *mut f64,
    depth: *mut f64,
    cap: usize,
) -> AfcStatus {
    guard(|| {
        let c = &borrow(comb, "comb")?.0;
        let n = cap.min(c.depth.len());
        if !detuning_hz.is_null() {
            slice::from_raw_parts_mut(detuning_hz, n).copy_from_slice(&c.detuning_hz[..n]);
        }
        if !depth.is_null() {
            slice::from_raw_parts_mut(depth, n).copy_from_slice(&c.depth[..n]);
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn afc_comb_efficiency(comb: *const AfcComb, out_eta: *mut f64) -> AfcStatus {
    guard(|| {
        let c = &borrow(comb, "comb")?.0;
        *out(out_eta, "out_eta")? = comb::fourier_efficiency(c)?.eta;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn afc_pulse_square_new(omega_hz: f64, duration_s: f64, out_pulse: *mut *mut AfcPulse) -> AfcStatus {
    guard(|| {
        let dst = out(out_pulse, "out_pulse")?;
        *dst = Box::into_raw(Box::new(AfcPulse(PulseEnvelope::square(omega_hz, duration_s)?)));
        Ok(())
    })
}

/// HSH pulse with default edges; `chirp_bw_hz` is swept over the flat part.
#[no_mangle]
pub unsafe extern "C" fn afc_pulse_hsh_new(
    omega_hz: f64,
    t_flat_s: f64,
    chirp_bw_hz: f64,
    out_pulse: *mut *mut AfcPulse,
) -> AfcStatus {
    guard(|| {
        let dst = out(out_pulse, "out_pulse")?;
        *dst = Box::into_raw(Box::new(AfcPulse(PulseEnvelope::hsh(omega_hz, t_flat_s, chirp_bw_hz)?)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn afc_pulse_free(pulse: *mut AfcPulse) {
    if !pulse.is_null() {
        drop(Box::from_raw(pulse));
    }
}

/// Transfer probability for each of `n` detunings, written to `out_prob`.
#[no_mangle]
pub unsafe extern "C" fn afc_pulse_transfer(
    pulse: *const AfcPulse,
    detunings_hz: *const f64,
    n: usize,
    out_prob: *mut f64,
) -> AfcStatus {
    guard(|| {
        let p = &borrow(pulse, "pulse")?.0;
        let dets = floats(detunings_hz, n, "detunings_hz")?;
        if n > 0 && out_prob.is_null() {
            return Err(Fail::Null("out_prob"));
        }
        let prof = bloch::transfer_profile(p, dets)?;
        if n > 0 {
            slice::from_raw_parts_mut(out_prob, n).copy_from_slice(&prof.transfer_prob);
        }
        Ok(())
    })
}

/// Mean transfer over a uniform band of width `gamma_bw_hz`.
#[no_mangle]
pub unsafe extern "C" fn afc_pulse_average_transfer(
    pulse: *const AfcPulse,
    gamma_bw_hz: f64,
    n_points: usize,
    out_eta: *mut f64,
) -> AfcStatus {
    guard(|| {
        let p = &borrow(pulse, "pulse")?.0;
        *out(out_eta, "out_eta")? = bloch::average_transfer(p, gamma_bw_hz, n_points)?;
        Ok(())
    })
}

/// `sigma` may be NULL for an unweighted fit.
#[no_mangle]
pub unsafe extern "C" fn afc_fit(
    model: AfcFitModel,
    x: *const f64,
    y: *const f64,
    sigma: *const f64,
    n: usize,
    out_fit: *mut *mut AfcFit,
) -> AfcStatus {
    guard(|| {
        let dst = out(out_fit, "out_fit")?;
        let xs = floats(x, n, "x")?;
        let ys = floats(y, n, "y")?;
        let sig = if sigma.is_null() { None } else { Some(floats(sigma, n, "sigma")?) };
        let m = match model {
            AfcFitModel::Exp => Model::Exp,
            AfcFitModel::DoubleExp => Model::DoubleExp,
            AfcFitModel::GaussianMismatch => Model::GaussianMismatch,
            AfcFitModel::GaussianMismatchCentered => Model::GaussianMismatchCentered,
        };
        *dst = Box::into_raw(Box::new(AfcFit(analysis::fit_model(m, xs, ys, sig)?)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn afc_fit_free(fit: *mut AfcFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// `out_sigma` may be NULL. Unknown names give `InvalidArgument`.
#[no_mangle]
pub unsafe extern "C" fn afc_fit_param(
    fit: *const AfcFit,
    name: *const c_char,
    out_value: *mut f64,
    out_sigma: *mut f64,
) -> AfcStatus {
    guard(|| {
        let f = &borrow(fit, "fit")?.0;
        let key = text(name, "name")?;
        let p = f
            .params
            .iter()
            .find(|p| p.name == key)
            .ok_or_else(|| Error::InvalidArgument(format!("fit has no parameter `{key}`")))?;
        *out(out_value, "out_value")? = p.value;
        if let Some(s) = out_sigma.as_mut() {
            *s = p.sigma;
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn afc_fit_converged(fit: *const AfcFit) -> bool {
    fit.as_ref().is_some_and(|f| f.0.converged)
}

/// NaN for a NULL handle.
#[no_mangle]
pub unsafe extern "C" fn afc_fit_predict(fit: *const AfcFit, x: f64) -> f64 {
    fit.as_ref().map_or(f64::NAN, |f| f.0.predict(x))
}
