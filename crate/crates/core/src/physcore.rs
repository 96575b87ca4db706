//! Level scheme, optical oscillator strengths and unit conventions for the
//! site-II ¹⁷¹Yb³⁺:Y₂SiO₅ Λ system at zero field.
//!
//! Every public frequency is an ordinary frequency in Hz. Conversion to
//! angular units happens only inside the ODE kernels via [`units`].

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, ensure_positive, Error, Result};

pub mod units {
    use std::f64::consts::TAU;

    pub const MHZ: f64 = 1e6;
    pub const KHZ: f64 = 1e3;
    pub const GHZ: f64 = 1e9;
    pub const US: f64 = 1e-6;
    pub const MS: f64 = 1e-3;
    pub const NS: f64 = 1e-9;

    /// Hz → rad/s.
    #[inline]
    pub fn angular(f_hz: f64) -> f64 {
        TAU * f_hz
    }

    /// rad/s → Hz.
    #[inline]
    pub fn ordinary(omega: f64) -> f64 {
        omega / TAU
    }
}

/// Number of ground (and excited) hyperfine states.
pub const N_LEVELS: usize = 4;

/// The four laser lines of the preparation and storage sequence.
///
/// `Nu1` is the storage (input/output) line, `Nu2` carries the control
/// pulses, `Nu3`/`Nu4` are only used for optical pumping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Line {
    Nu1,
    Nu2,
    Nu3,
    Nu4,
}

impl Line {
    pub const ALL: [Line; 4] = [Line::Nu1, Line::Nu2, Line::Nu3, Line::Nu4];

    /// (ground, excited) pair addressed by the line, 1-based.
    pub fn transition(self) -> (usize, usize) {
        match self {
            Line::Nu1 => (4, 1),
            Line::Nu2 => (3, 1),
            Line::Nu3 => (2, 3),
            Line::Nu4 => (1, 4),
        }
    }

    pub fn index(self) -> usize {
        match self {
            Line::Nu1 => 0,
            Line::Nu2 => 1,
            Line::Nu3 => 2,
            Line::Nu4 => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelScheme {
    /// Absolute frequency of ν₁. Documentation only; dynamics use offsets.
    pub nu1_hz: f64,
    pub nu2_hz: f64,
    pub nu3_hz: f64,
    pub nu4_hz: f64,
    pub nu_mw_hz: f64,
    /// Ground labels of ν₁..ν₄ (1-based).
    pub ground_labels: [usize; 4],
    /// Excited labels of ν₁..ν₄ (1-based).
    pub excited_labels: [usize; 4],
}

impl Default for LevelScheme {
    fn default() -> Self {
        default_scheme()
    }
}

pub const NU1_HZ: f64 = 306_263.0e9;
pub const NU2_MINUS_NU1_HZ: f64 = 0.6547e9;
pub const NU3_MINUS_NU2_HZ: f64 = 6.2594e9;
pub const NU4_MINUS_NU2_HZ: f64 = 7.0762e9;
pub const NU_MW_HZ: f64 = 655e6;

/// Site-II zero-field scheme with the measured laser offsets.
pub fn default_scheme() -> LevelScheme {
    let nu2 = NU1_HZ + NU2_MINUS_NU1_HZ;
    LevelScheme {
        nu1_hz: NU1_HZ,
        nu2_hz: nu2,
        nu3_hz: nu2 + NU3_MINUS_NU2_HZ,
        nu4_hz: nu2 + NU4_MINUS_NU2_HZ,
        nu_mw_hz: NU_MW_HZ,
        ground_labels: [4, 3, 2, 1],
        excited_labels: [1, 1, 3, 4],
    }
}

impl LevelScheme {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("nu1", self.nu1_hz),
            ("nu2", self.nu2_hz),
            ("nu3", self.nu3_hz),
            ("nu4", self.nu4_hz),
            ("nu_mw", self.nu_mw_hz),
        ] {
            ensure_positive(name, v)?;
        }
        for &l in self.ground_labels.iter().chain(self.excited_labels.iter()) {
            check_index("level label", l)?;
        }
        Ok(())
    }

    /// Offset of a laser line from ν₁ in Hz.
    pub fn offset(&self, line: Line) -> f64 {
        match line {
            Line::Nu1 => 0.0,
            Line::Nu2 => self.nu2_hz - self.nu1_hz,
            Line::Nu3 => self.nu3_hz - self.nu1_hz,
            Line::Nu4 => self.nu4_hz - self.nu1_hz,
        }
    }
}

/// Energies of all eight hyperfine states, expressed so that
/// `excited[e] - ground[g]` is the offset of transition (g, e) from ν₁.
///
/// Only four of the sixteen optical offsets are pinned by the laser lines.
/// The remaining freedom (absolute ground splittings, and the position of
/// |2⟩ₑ) is filled with placeholder values that keep all ground splittings in
/// the 0.5–3 GHz microwave range; none of the desk-scale targets depend on
/// them beyond which classes accidentally overlap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperfineLevels {
    pub ground_hz: [f64; N_LEVELS],
    pub excited_hz: [f64; N_LEVELS],
}

impl HyperfineLevels {
    pub fn from_scheme(scheme: &LevelScheme) -> Self {
        // Placeholder ground energies for |1⟩g and |2⟩g relative to |1⟩g.
        let g1 = 0.0;
        let g2 = 529e6;
        let g4 = 3026e6;
        let g3 = g4 - scheme.offset(Line::Nu2);
        let ground = [g1, g2, g3, g4];
        // ν1 = e1 - g4 is the zero of the offset axis.
        let e1 = g4;
        let e3 = g2 + scheme.offset(Line::Nu3);
        let e4 = g1 + scheme.offset(Line::Nu4);
        let e2 = e1 + 1.0e9;
        HyperfineLevels {
            ground_hz: ground,
            excited_hz: [e1, e2, e3, e4],
        }
    }

    /// Offset from ν₁ of the (g, e) transition, 0-based indices.
    #[inline]
    pub fn offset0(&self, g: usize, e: usize) -> f64 {
        self.excited_hz[e] - self.ground_hz[g]
    }
}

impl Default for HyperfineLevels {
    fn default() -> Self {
        Self::from_scheme(&default_scheme())
    }
}

/// Relative optical oscillator strengths, rows = ground, columns = excited.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrengthTable {
    pub rel: [[f64; N_LEVELS]; N_LEVELS],
}

pub const ROW_SUM_TOLERANCE: f64 = 0.02;

impl Default for StrengthTable {
    fn default() -> Self {
        StrengthTable {
            rel: [
                [0.15, 0.06, 0.08, 0.71],
                [0.06, 0.19, 0.71, 0.04],
                [0.07, 0.71, 0.16, 0.06],
                [0.72, 0.04, 0.05, 0.19],
            ],
        }
    }
}

impl StrengthTable {
    pub fn new(rel: [[f64; N_LEVELS]; N_LEVELS]) -> Result<Self> {
        let t = StrengthTable { rel };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        for (g, row) in self.rel.iter().enumerate() {
            for &v in row {
                ensure_finite("oscillator strength", v)?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::invalid(format!(
                        "oscillator strength {v} in row {} outside [0, 1]",
                        g + 1
                    )));
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::invalid(format!(
                    "row {} of the strength table sums to {sum:.4}, expected 1 ± {ROW_SUM_TOLERANCE}",
                    g + 1
                )));
            }
        }
        Ok(())
    }

    /// Entry for (g, e), 0-based and unchecked.
    #[inline]
    pub fn get0(&self, g: usize, e: usize) -> f64 {
        self.rel[g][e]
    }

    /// Probability that excited state `e` (0-based) decays into ground `g`.
    ///
    /// Branching follows the column of the table, renormalised.
    pub fn branching0(&self, e: usize, g: usize) -> f64 {
        let col: f64 = (0..N_LEVELS).map(|k| self.rel[k][e]).sum();
        if col > 0.0 {
            self.rel[g][e] / col
        } else {
            0.0
        }
    }
}

fn check_index(what: &str, i: usize) -> Result<usize> {
    if (1..=N_LEVELS).contains(&i) {
        Ok(i)
    } else {
        Err(Error::invalid(format!("{what} index {i} outside 1..=4")))
    }
}

/// Table entry for ground `g` and excited `e`, both 1-based.
pub fn transition_strength(table: &StrengthTable, g: usize, e: usize) -> Result<f64> {
    let g = check_index("ground", g)?;
    let e = check_index("excited", e)?;
    Ok(table.rel[g - 1][e - 1])
}

/// Rabi frequency on a transition of different oscillator strength, at equal
/// field: Ω scales with the square root of the strength.
pub fn scaled_rabi(omega_ref_hz: f64, strength_ref: f64, strength_target: f64) -> Result<f64> {
    ensure_finite("omega_ref", omega_ref_hz)?;
    ensure_positive("strength_ref", strength_ref)?;
    ensure_positive("strength_target", strength_target)?;
    Ok(omega_ref_hz * (strength_target / strength_ref).sqrt())
}

/// Rabi frequency at drive power `p` given a reference point; Ω ∝ √P.
pub fn rabi_from_power(p_w: f64, omega_ref_hz: f64, p_ref_w: f64) -> Result<f64> {
    ensure_positive("power", p_w)?;
    ensure_positive("reference power", p_ref_w)?;
    ensure_finite("omega_ref", omega_ref_hz)?;
    Ok(omega_ref_hz * (p_w / p_ref_w).sqrt())
}
