//! Normal-incidence reflection of a PEC-backed resistive Jerusalem-cross
//! absorber.
//!
//! The stack, from the incident side, is an optional thin superstrate, the
//! resistive cross sheet, the spacer of thickness `t` and a PEC ground. Each
//! dielectric layer is a lossy transmission-line section in ABCD form and the
//! sheet is a shunt admittance between them. The ground terminates the
//! cascade in a short, so the input impedance is `B / D`.
//!
//! The sheet impedance comes from an equivalent circuit built on the
//! Marcuvitz strip-grating function
//! `F(p, w, λ) = (p/λ) [ln csc(π w / 2p) + G(p, w, λ)]`:
//!
//! - arm branch: the arm strips (length `d`, width `c`) in series with the
//!   end-cap capacitance across the tip gap `a - d` and the lateral gap
//!   `a - b` (both with coupling length `b`);
//! - end-cap branch: the cap bars (length `b`, width `c`) in series with the
//!   cap-end capacitance across the lateral gap `a - b` (coupling length `c`).
//!
//! Each branch carries the sheet resistance in series and the two branches
//! load the sheet in parallel. With `G = 0` each element reduces to the
//! quasi-static inductance `(μ0/2π) l ln csc(π w/2a)` and capacitance
//! `ε_eff (2ε0/π) l ln csc(π g/2a)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::UnitCellGeometry;

/// Speed of light in mm·GHz.
pub const C0_MM_GHZ: f64 = 299.792458;
/// Free-space wave impedance in ohms.
pub const ETA0: f64 = 376.730313;
pub const MU0: f64 = 4.0e-7 * PI;
pub const EPS0: f64 = 8.8541878128e-12;
/// Lower clamp for reflection magnitudes expressed in dB.
pub const DB_FLOOR: f64 = -200.0;

const J: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialSpec {
    pub eps_r: f64,
    pub tan_delta: f64,
}

impl MaterialSpec {
    pub const FR4: MaterialSpec = MaterialSpec {
        eps_r: 4.4,
        tan_delta: 0.02,
    };
    pub const AIR: MaterialSpec = MaterialSpec {
        eps_r: 1.0,
        tan_delta: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_r.is_finite() && self.eps_r >= 1.0) {
            return Err(Error::InvalidInput(format!("eps_r must be >= 1, got {}", self.eps_r)));
        }
        if !(self.tan_delta.is_finite() && self.tan_delta >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "tan_delta must be >= 0, got {}",
                self.tan_delta
            )));
        }
        Ok(())
    }

    /// `eps_r (1 - j tan δ)`
    pub fn complex_permittivity(&self) -> Complex64 {
        Complex64::new(self.eps_r, -self.eps_r * self.tan_delta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub material: MaterialSpec,
    pub thickness_mm: f64,
}

/// What sits at the sheet plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SheetLoad {
    /// Resistive Jerusalem cross with the given series resistance per branch.
    Resistive { ohms: f64 },
    /// No sheet at all; the cascade skips the shunt element.
    Open,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StackSpec {
    pub superstrate: Option<Layer>,
    pub spacer: MaterialSpec,
    pub sheet: SheetLoad,
}

impl Default for StackSpec {
    /// FR4 0.125 mm bonding layer over a 100 Ω cross on an FR4 spacer.
    fn default() -> Self {
        Self {
            superstrate: Some(Layer {
                material: MaterialSpec::FR4,
                thickness_mm: 0.125,
            }),
            spacer: MaterialSpec::FR4,
            sheet: SheetLoad::Resistive { ohms: 100.0 },
        }
    }
}

impl StackSpec {
    pub fn validate(&self) -> Result<()> {
        if let Some(layer) = &self.superstrate {
            layer.material.validate()?;
            if !(layer.thickness_mm.is_finite() && layer.thickness_mm > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "superstrate thickness must be positive, got {}",
                    layer.thickness_mm
                )));
            }
        }
        self.spacer.validate()?;
        if let SheetLoad::Resistive { ohms } = self.sheet {
            if !(ohms.is_finite() && ohms > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "sheet resistance must be positive and finite, got {ohms}"
                )));
            }
        }
        Ok(())
    }

    /// Quasi-static permittivity seen by the sheet's fringing fields: the
    /// mean of the media directly above and below it.
    pub fn sheet_permittivity(&self) -> f64 {
        let above = self.superstrate.map_or(1.0, |l| l.material.eps_r);
        (above + self.spacer.eps_r) / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    pub start_ghz: f64,
    pub stop_ghz: f64,
    pub step_ghz: f64,
}

impl Default for FrequencyGrid {
    /// 1 GHz to 30 GHz in 0.05 GHz steps (581 points).
    fn default() -> Self {
        Self {
            start_ghz: 1.0,
            stop_ghz: 30.0,
            step_ghz: 0.05,
        }
    }
}

impl FrequencyGrid {
    pub fn new(start_ghz: f64, stop_ghz: f64, step_ghz: f64) -> Result<Self> {
        let g = Self {
            start_ghz,
            stop_ghz,
            step_ghz,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let Self {
            start_ghz,
            stop_ghz,
            step_ghz,
        } = *self;
        if !(start_ghz.is_finite() && start_ghz > 0.0) {
            return Err(Error::InvalidInput(format!("grid start must be > 0, got {start_ghz}")));
        }
        if !(stop_ghz.is_finite() && stop_ghz > start_ghz) {
            return Err(Error::InvalidInput(format!(
                "grid stop {stop_ghz} must exceed start {start_ghz}"
            )));
        }
        if !(step_ghz.is_finite() && step_ghz > 0.0) {
            return Err(Error::InvalidInput(format!("grid step must be > 0, got {step_ghz}")));
        }
        let ratio = (stop_ghz - start_ghz) / step_ghz;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "grid span {start_ghz}..{stop_ghz} is not a whole number of {step_ghz} GHz steps"
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        ((self.stop_ghz - self.start_ghz) / self.step_ghz).round() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn frequency(&self, i: usize) -> f64 {
        self.start_ghz + i as f64 * self.step_ghz
    }

    pub fn frequencies(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|i| self.frequency(i))
    }

    /// Same point set within a tolerance of 1e-9 GHz.
    pub fn matches(&self, other: &FrequencyGrid) -> bool {
        self.len() == other.len()
            && (self.start_ghz - other.start_ghz).abs() < 1e-9
            && (self.step_ghz - other.step_ghz).abs() < 1e-9
    }
}

impl std::fmt::Display for FrequencyGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}..{} GHz step {} ({} points)",
            self.start_ghz,
            self.stop_ghz,
            self.step_ghz,
            self.len()
        )
    }
}

/// Reflection magnitude in dB, one value per grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionCurve {
    pub grid: FrequencyGrid,
    pub values_db: Vec<f64>,
}

impl ReflectionCurve {
    pub fn new(grid: FrequencyGrid, values_db: Vec<f64>) -> Result<Self> {
        if values_db.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "curve has {} values but grid has {} points",
                values_db.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values_db })
    }
}

/// 2×2 complex chain matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Abcd {
    pub a: Complex64,
    pub b: Complex64,
    pub c: Complex64,
    pub d: Complex64,
}

impl Abcd {
    pub fn identity() -> Self {
        Self {
            a: Complex64::new(1.0, 0.0),
            b: Complex64::new(0.0, 0.0),
            c: Complex64::new(0.0, 0.0),
            d: Complex64::new(1.0, 0.0),
        }
    }

    /// Shunt admittance `[1, 0; Y, 1]`.
    pub fn shunt(y: Complex64) -> Self {
        Self {
            c: y,
            ..Self::identity()
        }
    }

    pub fn det(&self) -> Complex64 {
        self.a * self.d - self.b * self.c
    }

    pub fn cascade(&self, rhs: &Abcd) -> Abcd {
        Abcd {
            a: self.a * rhs.a + self.b * rhs.c,
            b: self.a * rhs.b + self.b * rhs.d,
            c: self.c * rhs.a + self.d * rhs.c,
            d: self.c * rhs.b + self.d * rhs.d,
        }
    }
}

impl std::ops::Mul for Abcd {
    type Output = Abcd;
    fn mul(self, rhs: Abcd) -> Abcd {
        self.cascade(&rhs)
    }
}

/// Chain matrix of a homogeneous dielectric section at normal incidence.
pub fn layer_abcd(mat: &MaterialSpec, thickness_mm: f64, f_ghz: f64) -> Abcd {
    let n = mat.complex_permittivity().sqrt();
    let kl = n * (2.0 * PI * f_ghz / C0_MM_GHZ * thickness_mm);
    let zc = ETA0 / n;
    Abcd {
        a: kl.cos(),
        b: J * zc * kl.sin(),
        c: J * kl.sin() / zc,
        d: kl.cos(),
    }
}

fn wavelength_mm(f_ghz: f64) -> f64 {
    C0_MM_GHZ / f_ghz
}

fn ln_csc(period: f64, width: f64) -> f64 {
    -(PI * width / (2.0 * period)).sin().ln()
}

/// Normal-incidence correction `G(p, w, λ)` of the strip-grating function.
pub fn grating_correction(period: f64, width: f64, wavelength: f64) -> f64 {
    let beta2 = (PI * width / (2.0 * period)).sin().powi(2);
    let a = 1.0 / (1.0 - (period / wavelength).powi(2)).sqrt() - 1.0;
    // A+ = A- at normal incidence.
    let sum = 2.0 * a;
    let prod = a * a;
    let num = 0.5 * (1.0 - beta2).powi(2) * ((1.0 - beta2 / 4.0) * sum + 4.0 * beta2 * prod);
    let den = (1.0 - beta2 / 4.0)
        + beta2 * (1.0 + beta2 / 2.0 - beta2 * beta2 / 8.0) * sum
        + 2.0 * beta2.powi(3) * prod;
    num / den
}

/// `ln csc(π w / 2p) + G(p, w, λ)`; requires `0 < w < p < λ`.
pub fn grating_factor(period: f64, width: f64, wavelength: f64) -> Result<f64> {
    if !(width > 0.0 && width < period) {
        return Err(Error::Domain(format!(
            "strip/gap width {width} mm must lie in (0, {period}) mm"
        )));
    }
    if period >= wavelength {
        return Err(Error::Domain(format!(
            "period {period} mm is not below the wavelength {wavelength} mm (grating-lobe regime)"
        )));
    }
    Ok(ln_csc(period, width) + grating_correction(period, width, wavelength))
}

/// Inductive strip of the given length and width, aligned with the field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Strip {
    pub length_mm: f64,
    pub width_mm: f64,
}

/// Capacitive gap between facing conductors over the given coupling length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gap {
    pub length_mm: f64,
    pub gap_mm: f64,
}

/// Series R-L-C path through the cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Resonator {
    pub resistance: f64,
    pub period_mm: f64,
    pub eps_eff: f64,
    pub strip: Strip,
    pub gaps: Vec<Gap>,
}

impl Resonator {
    fn check(&self) -> Result<()> {
        let p = self.period_mm;
        if !(self.strip.width_mm > 0.0 && self.strip.width_mm < p) {
            return Err(Error::Domain(format!(
                "strip width {} mm must lie in (0, {p}) mm",
                self.strip.width_mm
            )));
        }
        for g in &self.gaps {
            if !(g.gap_mm > 0.0 && g.gap_mm < p) {
                return Err(Error::Domain(format!(
                    "gap {} mm must lie in (0, {p}) mm",
                    g.gap_mm
                )));
            }
        }
        Ok(())
    }

    /// Quasi-static inductance in henries.
    pub fn inductance(&self) -> f64 {
        MU0 / (2.0 * PI) * self.strip.length_mm * 1e-3 * ln_csc(self.period_mm, self.strip.width_mm)
    }

    /// Quasi-static capacitance in farads.
    pub fn capacitance(&self) -> f64 {
        self.gaps
            .iter()
            .map(|g| {
                self.eps_eff * 2.0 * EPS0 / PI * g.length_mm * 1e-3 * ln_csc(self.period_mm, g.gap_mm)
            })
            .sum()
    }

    /// Frequency of zero quasi-static reactance, in GHz.
    pub fn quasi_static_resonance_ghz(&self) -> f64 {
        1.0 / (2.0 * PI * (self.inductance() * self.capacitance()).sqrt()) * 1e-9
    }

    /// `R + jωL - j/(ωC)` with the quasi-static elements.
    pub fn quasi_static_impedance(&self, f_ghz: f64) -> Complex64 {
        let w = 2.0 * PI * f_ghz * 1e9;
        Complex64::new(
            self.resistance,
            w * self.inductance() - 1.0 / (w * self.capacitance()),
        )
    }

    /// Reactance including the grating correction.
    pub fn reactance(&self, f_ghz: f64) -> Result<f64> {
        let lambda = wavelength_mm(f_ghz);
        let p = self.period_mm;
        let x_l = ETA0 * self.strip.length_mm / lambda * grating_factor(p, self.strip.width_mm, lambda)?;
        let mut b_c = 0.0;
        for g in &self.gaps {
            b_c += 4.0 * self.eps_eff * g.length_mm / lambda * grating_factor(p, g.gap_mm, lambda)? / ETA0;
        }
        Ok(x_l - 1.0 / b_c)
    }

    pub fn impedance(&self, f_ghz: f64) -> Result<Complex64> {
        Ok(Complex64::new(self.resistance, self.reactance(f_ghz)?))
    }
}

/// Equivalent circuit of the resistive Jerusalem cross.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossCircuit {
    pub arms: Resonator,
    pub caps: Resonator,
}

impl CrossCircuit {
    pub fn new(g: &UnitCellGeometry, eps_eff: f64, resistance: f64) -> Result<Self> {
        g.check()?;
        let a = g.a;
        let arms = Resonator {
            resistance,
            period_mm: a,
            eps_eff,
            strip: Strip {
                length_mm: g.d,
                width_mm: g.c,
            },
            gaps: vec![
                Gap {
                    length_mm: g.b,
                    gap_mm: a - g.d,
                },
                Gap {
                    length_mm: g.b,
                    gap_mm: a - g.b,
                },
            ],
        };
        let caps = Resonator {
            resistance,
            period_mm: a,
            eps_eff,
            strip: Strip {
                length_mm: g.b,
                width_mm: g.c,
            },
            gaps: vec![Gap {
                length_mm: g.c,
                gap_mm: a - g.b,
            }],
        };
        arms.check()?;
        caps.check()?;
        Ok(Self { arms, caps })
    }

    pub fn impedance(&self, f_ghz: f64) -> Result<Complex64> {
        let y = 1.0 / self.arms.impedance(f_ghz)? + 1.0 / self.caps.impedance(f_ghz)?;
        Ok(1.0 / y)
    }
}

/// Sheet impedance of the resistive cross at `f_ghz`.
pub fn sheet_impedance(
    g: &UnitCellGeometry,
    eps_eff: f64,
    resistance: f64,
    f_ghz: f64,
) -> Result<Complex64> {
    if !(f_ghz.is_finite() && f_ghz > 0.0) {
        return Err(Error::Domain(format!("frequency must be positive, got {f_ghz}")));
    }
    CrossCircuit::new(g, eps_eff, resistance)?.impedance(f_ghz)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reflection {
    pub gamma: Complex64,
    pub db: f64,
}

impl Reflection {
    fn from_gamma(gamma: Complex64) -> Self {
        Self {
            gamma,
            db: magnitude_to_db(gamma.norm()),
        }
    }
}

/// `20 log10 |Γ|`, floored at [`DB_FLOOR`].
pub fn magnitude_to_db(mag: f64) -> f64 {
    (20.0 * mag.log10()).max(DB_FLOOR)
}

pub fn db_to_magnitude(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

fn cascade(stack: &StackSpec, sheet_admittance: Option<Complex64>, spacer_mm: f64, f_ghz: f64) -> Reflection {
    let mut m = match &stack.superstrate {
        Some(l) => layer_abcd(&l.material, l.thickness_mm, f_ghz),
        None => Abcd::identity(),
    };
    if let Some(y) = sheet_admittance {
        m = m * Abcd::shunt(y);
    }
    m = m * layer_abcd(&stack.spacer, spacer_mm, f_ghz);
    let z_in = m.b / m.d;
    Reflection::from_gamma((z_in - ETA0) / (z_in + ETA0))
}

/// Reflection of the stack with the cross of geometry `g`; the spacer is
/// `g.t` thick.
pub fn reflection_at(g: &UnitCellGeometry, stack: &StackSpec, f_ghz: f64) -> Result<Reflection> {
    match stack.sheet {
        SheetLoad::Open => {
            g.check()?;
            Ok(cascade(stack, None, g.t, f_ghz))
        }
        SheetLoad::Resistive { ohms } => {
            let z = sheet_impedance(g, stack.sheet_permittivity(), ohms, f_ghz)?;
            Ok(cascade(stack, Some(1.0 / z), g.t, f_ghz))
        }
    }
}

/// Reflection with an arbitrary sheet impedance in place of the cross.
pub fn reflection_from_sheet(
    z_sheet: Complex64,
    stack: &StackSpec,
    spacer_mm: f64,
    f_ghz: f64,
) -> Result<Reflection> {
    if z_sheet == Complex64::new(0.0, 0.0) {
        return Err(Error::Domain("zero sheet impedance shorts the sheet plane".into()));
    }
    if !(spacer_mm >= 0.0 && f_ghz > 0.0) {
        return Err(Error::Domain(format!(
            "need spacer >= 0 and f > 0, got {spacer_mm} mm, {f_ghz} GHz"
        )));
    }
    Ok(cascade(stack, Some(1.0 / z_sheet), spacer_mm, f_ghz))
}

pub fn reflection_curve(
    g: &UnitCellGeometry,
    stack: &StackSpec,
    grid: &FrequencyGrid,
) -> Result<ReflectionCurve> {
    let values_db = grid
        .frequencies()
        .map(|f| reflection_at(g, stack, f).map(|r| r.db))
        .collect::<Result<Vec<_>>>()?;
    Ok(ReflectionCurve {
        grid: *grid,
        values_db,
    })
}
