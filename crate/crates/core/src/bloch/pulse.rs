use std::f64::consts::TAU;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_non_negative, ensure_positive, Error, Result};
use crate::io::Table;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PulseShape {
    Square,
    Sech,
    Hsh,
}

impl std::str::FromStr for PulseShape {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "square" => Ok(PulseShape::Square),
            "sech" => Ok(PulseShape::Sech),
            "hsh" => Ok(PulseShape::Hsh),
            _ => Err(Error::invalid(format!("unknown pulse shape `{s}` (square, sech, hsh)"))),
        }
    }
}

/// Edge duration of an HSH pulse as a fraction of its total length, per side.
pub const DEFAULT_EDGE_FRACTION: f64 = 0.1;

/// Sech steepness that brings the amplitude to 1% at the start of an edge
/// of the default length for this flat duration.
pub fn default_edge_beta(t_flat: f64) -> f64 {
    let edge = DEFAULT_EDGE_FRACTION * t_flat / (1.0 - 2.0 * DEFAULT_EDGE_FRACTION);
    100f64.acosh() / edge
}

/// Drive envelope in the frame of the nominal carrier.
///
/// `chirp_bw_hz` is the sweep over the flat section for HSH pulses, over the
/// full duration for square pulses and the asymptotic tanh span for sech.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseEnvelope {
    pub shape: PulseShape,
    pub omega_peak_hz: f64,
    pub t_total_s: f64,
    pub t_flat_s: f64,
    pub edge_beta: f64,
    pub chirp_bw_hz: f64,
    /// Constant carrier phase, rad.
    pub phase_offset: f64,
    /// Played back to front with a negated sweep.
    pub reversed: bool,
}

pub fn make_pulse(
    shape: PulseShape,
    omega_peak_hz: f64,
    t_total_s: f64,
    t_flat_s: f64,
    edge_beta: f64,
    chirp_bw_hz: f64,
) -> Result<PulseEnvelope> {
    ensure_non_negative("omega_peak_hz", omega_peak_hz)?;
    ensure_positive("t_total_s", t_total_s)?;
    ensure_non_negative("chirp_bw_hz", chirp_bw_hz)?;
    match shape {
        PulseShape::Square => {}
        PulseShape::Sech => {
            ensure_positive("edge_beta", edge_beta)?;
        }
        PulseShape::Hsh => {
            ensure_positive("edge_beta", edge_beta)?;
            ensure_positive("t_flat_s", t_flat_s)?;
            if t_flat_s > t_total_s * (1.0 + 1e-12) {
                return Err(Error::invalid(format!(
                    "flat section {t_flat_s:e} s exceeds total duration {t_total_s:e} s"
                )));
            }
        }
    }
    Ok(PulseEnvelope {
        shape,
        omega_peak_hz,
        t_total_s,
        t_flat_s: match shape {
            PulseShape::Hsh => t_flat_s.min(t_total_s),
            PulseShape::Square => t_total_s,
            PulseShape::Sech => 0.0,
        },
        edge_beta,
        chirp_bw_hz,
        phase_offset: 0.0,
        reversed: false,
    })
}

/// ln cosh without overflow.
fn ln_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

impl PulseEnvelope {
    pub fn square(omega_hz: f64, duration_s: f64) -> Result<Self> {
        make_pulse(PulseShape::Square, omega_hz, duration_s, duration_s, 0.0, 0.0)
    }

    /// HSH pulse with the default edges: 10% of the total length on each side.
    pub fn hsh(omega_hz: f64, t_flat_s: f64, chirp_bw_hz: f64) -> Result<Self> {
        Self::hsh_with_edges(omega_hz, t_flat_s, chirp_bw_hz, DEFAULT_EDGE_FRACTION, default_edge_beta(t_flat_s))
    }

    pub fn hsh_with_edges(
        omega_hz: f64,
        t_flat_s: f64,
        chirp_bw_hz: f64,
        edge_fraction: f64,
        edge_beta: f64,
    ) -> Result<Self> {
        if !(0.0..0.5).contains(&edge_fraction) {
            return Err(Error::invalid(format!(
                "edge fraction must lie in [0, 0.5), got {edge_fraction}"
            )));
        }
        ensure_positive("t_flat_s", t_flat_s)?;
        let total = t_flat_s / (1.0 - 2.0 * edge_fraction);
        make_pulse(PulseShape::Hsh, omega_hz, total, t_flat_s, edge_beta, chirp_bw_hz)
    }

    /// Sech pulse truncated where the amplitude reaches 1% of its peak.
    pub fn sech(omega_hz: f64, t_total_s: f64, chirp_bw_hz: f64) -> Result<Self> {
        let beta = 100f64.acosh() / (0.5 * t_total_s);
        make_pulse(PulseShape::Sech, omega_hz, t_total_s, 0.0, beta, chirp_bw_hz)
    }

    pub fn edge_s(&self) -> f64 {
        0.5 * (self.t_total_s - self.t_flat_s)
    }

    /// Pulse that undoes this one when applied at the mirrored detuning.
    pub fn time_reversed(&self) -> Self {
        PulseEnvelope {
            reversed: !self.reversed,
            phase_offset: self.phase_offset + std::f64::consts::PI,
            ..*self
        }
    }

    fn local(&self, t: f64) -> f64 {
        if self.reversed {
            self.t_total_s - t
        } else {
            t
        }
    }

    /// Rabi frequency, Hz. Zero outside [0, t_total].
    pub fn amplitude(&self, t: f64) -> f64 {
        if !(0.0..=self.t_total_s).contains(&t) {
            return 0.0;
        }
        let t = self.local(t);
        let o = self.omega_peak_hz;
        match self.shape {
            PulseShape::Square => o,
            PulseShape::Sech => o / (self.edge_beta * (t - 0.5 * self.t_total_s)).cosh(),
            PulseShape::Hsh => {
                let te = self.edge_s();
                if t < te {
                    o / (self.edge_beta * (t - te)).cosh()
                } else if t <= te + self.t_flat_s {
                    o
                } else {
                    o / (self.edge_beta * (t - te - self.t_flat_s)).cosh()
                }
            }
        }
    }

    /// Instantaneous carrier offset from the nominal frequency, Hz.
    pub fn inst_freq(&self, t: f64) -> f64 {
        let f = self.inst_freq_forward(self.local(t.clamp(0.0, self.t_total_s)));
        if self.reversed {
            -f
        } else {
            f
        }
    }

    fn inst_freq_forward(&self, t: f64) -> f64 {
        let g = self.chirp_bw_hz;
        if g == 0.0 {
            return 0.0;
        }
        match self.shape {
            PulseShape::Square => g * (t / self.t_total_s - 0.5),
            PulseShape::Sech => 0.5 * g * (self.edge_beta * (t - 0.5 * self.t_total_s)).tanh(),
            PulseShape::Hsh => {
                let te = self.edge_s();
                let r = g / self.t_flat_s;
                let b = self.edge_beta;
                if t < te {
                    -0.5 * g + r / b * (b * (t - te)).tanh()
                } else if t <= te + self.t_flat_s {
                    -0.5 * g + r * (t - te)
                } else {
                    0.5 * g + r / b * (b * (t - te - self.t_flat_s)).tanh()
                }
            }
        }
    }

    /// Carrier phase 2π∫f dt plus the constant offset, rad.
    pub fn phase(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, self.t_total_s);
        let acc = if self.reversed {
            let tot = self.phase_forward(self.t_total_s);
            // ∫₀ᵗ −f(T−s) ds = −(Φ(T) − Φ(T−t))
            -(tot - self.phase_forward(self.t_total_s - t))
        } else {
            self.phase_forward(t)
        };
        acc + self.phase_offset
    }

    fn phase_forward(&self, t: f64) -> f64 {
        let g = self.chirp_bw_hz;
        if g == 0.0 {
            return 0.0;
        }
        let integral = match self.shape {
            PulseShape::Square => {
                let tt = self.t_total_s;
                g * (t * t / (2.0 * tt) - 0.5 * t)
            }
            PulseShape::Sech => {
                let b = self.edge_beta;
                let c = 0.5 * self.t_total_s;
                0.5 * g / b * (ln_cosh(b * (t - c)) - ln_cosh(b * c))
            }
            PulseShape::Hsh => {
                let te = self.edge_s();
                let tf = self.t_flat_s;
                let r = g / tf;
                let b = self.edge_beta;
                let rise = |x: f64| -0.5 * g * x + r / (b * b) * (ln_cosh(b * (x - te)) - ln_cosh(b * te));
                if t < te {
                    rise(t)
                } else {
                    let at_te = rise(te);
                    if t <= te + tf {
                        let s = t - te;
                        at_te - 0.5 * g * s + 0.5 * r * s * s
                    } else {
                        let at_end = at_te - 0.5 * g * tf + 0.5 * r * tf * tf;
                        let s = t - te - tf;
                        at_end + 0.5 * g * s + r / (b * b) * ln_cosh(b * s)
                    }
                }
            }
        };
        TAU * integral
    }

    /// Segment joints, where the drive has kinks.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self.shape {
            PulseShape::Hsh => {
                // symmetric edges: the joints are the same when reversed
                let te = self.edge_s();
                vec![te, te + self.t_flat_s]
            }
            _ => Vec::new(),
        }
    }

    /// Pulse area 2π∫Ω dt, rad (midpoint rule on a fine grid).
    pub fn area(&self) -> f64 {
        let n = 20_000;
        let dt = self.t_total_s / n as f64;
        TAU * (0..n).map(|i| self.amplitude((i as f64 + 0.5) * dt)).sum::<f64>() * dt
    }

    pub fn to_table(&self, n_samples: usize) -> Table {
        let n = n_samples.max(2);
        let t: Vec<f64> = (0..n)
            .map(|i| self.t_total_s * i as f64 / (n - 1) as f64)
            .collect();
        let a = t.iter().map(|&x| self.amplitude(x)).collect();
        let p = t.iter().map(|&x| self.phase(x)).collect();
        Table::new(&["time_s", "amplitude_Hz", "phase_rad"], vec![t, a, p])
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, n_samples: usize) -> Result<()> {
        self.to_table(n_samples).write(path)
    }
}
