//! Model constants and optomechanical coupling coefficients.
//!
//! Everything in [`SystemParams`] is dimensionless, with frequencies and rates
//! measured in units of the first oscillator frequency. The couplings can be
//! given directly or derived from a membrane-in-the-middle cavity geometry.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One-dimensional membrane-in-the-middle cavity, in physical units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavityGeometry {
    pub cavity_length: f64,
    pub membrane_reflectivity: f64,
    pub laser_wavelength: f64,
    pub light_speed: f64,
    pub membrane_equilibrium: f64,
}

impl CavityGeometry {
    pub fn new(
        cavity_length: f64,
        membrane_reflectivity: f64,
        laser_wavelength: f64,
        light_speed: f64,
        membrane_equilibrium: f64,
    ) -> Result<Self> {
        let geometry =
            Self { cavity_length, membrane_reflectivity, laser_wavelength, light_speed, membrane_equilibrium };
        geometry.validate()?;
        Ok(geometry)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cavity_length > 0.0) {
            return Err(Error::InvalidParameter("cavity_length must be > 0".into()));
        }
        if !(self.laser_wavelength > 0.0) {
            return Err(Error::InvalidParameter("laser_wavelength must be > 0".into()));
        }
        if !(self.light_speed > 0.0) {
            return Err(Error::InvalidParameter("light_speed must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.membrane_reflectivity) {
            return Err(Error::InvalidParameter("membrane_reflectivity must satisfy 0 <= r_c < 1".into()));
        }
        if !self.membrane_equilibrium.is_finite() {
            return Err(Error::InvalidParameter("membrane_equilibrium must be finite".into()));
        }
        Ok(())
    }

    fn wavenumber(&self) -> f64 {
        4.0 * PI / self.laser_wavelength
    }

    /// Cavity resonance for mirror displacement `q1` and membrane position `q2`.
    pub fn cavity_frequency(&self, q1: f64, q2: f64) -> f64 {
        let phase = (self.membrane_reflectivity * (self.wavenumber() * q2).cos()).acos();
        self.light_speed / (self.cavity_length + q1) * phase
    }
}

/// Second-order Taylor coefficients of the cavity dispersion.
///
/// `g1_*` are linear couplings, `g2_*` quadratic self couplings, `g3` the
/// mirror-membrane cross coupling. Signs follow
/// `ω_cav ≈ ω_c − g1₁q₁ − g1₂q₂ + g2₁q₁² + g2₂q₂² − g3 q₁q₂`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CouplingCoefficients {
    pub g1_1: f64,
    pub g1_2: f64,
    pub g2_1: f64,
    pub g2_2: f64,
    pub g3: f64,
}

impl CouplingCoefficients {
    /// Same linear and quadratic coupling for both oscillators.
    pub fn symmetric(g1: f64, g2: f64, g3: f64) -> Self {
        Self { g1_1: g1, g1_2: g1, g2_1: g2, g2_2: g2, g3 }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn is_symmetric(&self) -> bool {
        self.g1_1 == self.g1_2 && self.g2_1 == self.g2_2
    }

    pub fn max_abs(&self) -> f64 {
        [self.g1_1, self.g1_2, self.g2_1, self.g2_2, self.g3].iter().fold(0.0_f64, |m, g| m.max(g.abs()))
    }

    /// `max |g| <= ratio * min(ω_m, κ)`.
    pub fn weak_coupling(&self, omega_m: f64, kappa: f64, ratio: f64) -> bool {
        self.max_abs() <= ratio * omega_m.min(kappa)
    }

    pub fn is_finite(&self) -> bool {
        [self.g1_1, self.g1_2, self.g2_1, self.g2_2, self.g3].iter().all(|g| g.is_finite())
    }
}

/// Result of expanding the cavity dispersion about `(0, q20)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaylorExpansion {
    pub omega_c: f64,
    pub couplings: CouplingCoefficients,
}

impl TaylorExpansion {
    /// Converts physical coefficients to the dimensionless model.
    ///
    /// Positions are measured in units of each oscillator's zero-point length
    /// and frequencies in units of `omega_m1` (the physical first oscillator
    /// frequency).
    pub fn to_dimensionless(&self, omega_m1: f64, x_zpf: [f64; 2]) -> CouplingCoefficients {
        let c = &self.couplings;
        CouplingCoefficients {
            g1_1: c.g1_1 * x_zpf[0] / omega_m1,
            g1_2: c.g1_2 * x_zpf[1] / omega_m1,
            g2_1: c.g2_1 * x_zpf[0] * x_zpf[0] / omega_m1,
            g2_2: c.g2_2 * x_zpf[1] * x_zpf[1] / omega_m1,
            g3: c.g3 * x_zpf[0] * x_zpf[1] / omega_m1,
        }
    }
}

/// Closed-form Taylor coefficients of the membrane-in-the-middle dispersion.
pub fn taylor_coefficients(geometry: &CavityGeometry) -> Result<TaylorExpansion> {
    geometry.validate()?;
    let r = geometry.membrane_reflectivity;
    let k = geometry.wavenumber();
    let q20 = geometry.membrane_equilibrium;
    let (s, c) = (k * q20).sin_cos();
    let u = r * c;
    let one_minus_u2 = 1.0 - u * u;
    if one_minus_u2 <= 0.0 {
        return Err(Error::Domain(format!(
            "arccos argument r_c cos(4π q20/λ) = {u} reaches ±1; derivatives are singular"
        )));
    }
    let root = one_minus_u2.sqrt();

    // phase(q2) = arccos(r cos(k q2)) and its first two derivatives at q20
    let phase = u.acos();
    let phase_1 = r * k * s / root;
    let phase_2 = r * k * k * c / root - r * r * k * k * s * s * u / (one_minus_u2 * root);

    let l = geometry.cavity_length;
    let cl = geometry.light_speed / l;
    let omega0 = cl * phase;
    let d1 = -cl / l * phase;
    let d11 = 2.0 * cl / (l * l) * phase;
    let d2 = cl * phase_1;
    let d22 = cl * phase_2;
    let d12 = -cl / l * phase_1;

    let omega_c = omega0 - d2 * q20 + 0.5 * d22 * q20 * q20;
    let couplings = CouplingCoefficients {
        g1_1: -d1 + 0.5 * d12 * q20,
        g1_2: -d2 + d22 * q20,
        g2_1: 0.5 * d11,
        g2_2: 0.5 * d22,
        g3: -0.5 * d12,
    };
    Ok(TaylorExpansion { omega_c, couplings })
}

/// Fourier components of the modulated drive,
/// `E(t) = e0 + e_plus e^{-iΩt} + e_minus e^{iΩt}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveComponents {
    pub e0: f64,
    pub e_plus: f64,
    pub e_minus: f64,
}

/// Dimensionless model constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub omega_m1: f64,
    pub omega_m2: f64,
    /// Cavity detuning Δ = ω_c − ω_l.
    pub detuning: f64,
    pub gamma_m1: f64,
    pub gamma_m2: f64,
    pub kappa: f64,
    /// Drive amplitude E.
    pub drive: f64,
    /// Modulation depth η_D.
    pub eta_d: f64,
    /// Modulation frequency Ω_D.
    pub omega_d: f64,
    /// Mean thermal phonon number of both mechanical baths.
    pub nbar: f64,
    pub couplings: CouplingCoefficients,
}

impl SystemParams {
    /// Parameter set of the reference limit-cycle run: ω_m1 = −Δ = 1,
    /// ω_m2 = 1.005, n̄ = 0.5, g1 = 5e-5, g2 = g1·1e-2, g3 = 1e-6,
    /// γ = 0.009, κ = 0.1, E = 250, η_D = 4, Ω_D = 1.
    pub fn reference() -> Self {
        let g1 = 5e-5;
        Self {
            omega_m1: 1.0,
            omega_m2: 1.005,
            detuning: -1.0,
            gamma_m1: 0.009,
            gamma_m2: 0.009,
            kappa: 0.1,
            drive: 250.0,
            eta_d: 4.0,
            omega_d: 1.0,
            nbar: 0.5,
            couplings: CouplingCoefficients::symmetric(g1, 5e-7, 1e-6),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("omega_m1", self.omega_m1),
            ("omega_m2", self.omega_m2),
            ("gamma_m1", self.gamma_m1),
            ("gamma_m2", self.gamma_m2),
            ("kappa", self.kappa),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be > 0 (got {v})")));
            }
        }
        let non_negative = [("nbar", self.nbar), ("eta_d", self.eta_d), ("omega_d", self.omega_d)];
        for (name, v) in non_negative {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be >= 0 (got {v})")));
            }
        }
        for (name, v) in [("detuning", self.detuning), ("drive", self.drive)] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be finite")));
            }
        }
        if !self.couplings.is_finite() {
            return Err(Error::InvalidParameter("coupling coefficients must be finite".into()));
        }
        Ok(())
    }

    /// `E [1 + η_D cos(Ω_D t)]`.
    pub fn drive_amplitude(&self, t: f64) -> f64 {
        self.drive * (1.0 + self.eta_d * (self.omega_d * t).cos())
    }

    pub fn drive_components(&self) -> DriveComponents {
        let side = 0.5 * self.drive * self.eta_d;
        DriveComponents { e0: self.drive, e_plus: side, e_minus: side }
    }

    /// Weak-coupling predicate on the bare couplings, `max |g| <= ratio · min(ω_m, κ)`.
    pub fn weak_coupling(&self, ratio: f64) -> bool {
        self.couplings.weak_coupling(self.omega_m1.min(self.omega_m2), self.kappa, ratio)
    }

    /// Modulation period 2π/Ω_D, or `None` for an unmodulated drive.
    pub fn modulation_period(&self) -> Option<f64> {
        (self.omega_d > 0.0).then(|| 2.0 * PI / self.omega_d)
    }

    pub fn get(&self, name: ParamName) -> f64 {
        use ParamName::*;
        let c = &self.couplings;
        match name {
            OmegaM1 => self.omega_m1,
            OmegaM2 => self.omega_m2,
            DeltaM => self.omega_m2 - self.omega_m1,
            Detuning => self.detuning,
            GammaM1 => self.gamma_m1,
            GammaM2 => self.gamma_m2,
            GammaM => self.gamma_m1,
            Kappa => self.kappa,
            Drive => self.drive,
            EtaD => self.eta_d,
            OmegaD => self.omega_d,
            Nbar => self.nbar,
            G1 | G1_1 => c.g1_1,
            G1_2 => c.g1_2,
            G2 | G2_1 => c.g2_1,
            G2_2 => c.g2_2,
            G3 => c.g3,
        }
    }

    /// Sets one named parameter. Does not validate; call [`Self::validate`].
    pub fn set(&mut self, name: ParamName, value: f64) {
        use ParamName::*;
        let c = &mut self.couplings;
        match name {
            OmegaM1 => self.omega_m1 = value,
            OmegaM2 => self.omega_m2 = value,
            DeltaM => self.omega_m2 = self.omega_m1 + value,
            Detuning => self.detuning = value,
            GammaM1 => self.gamma_m1 = value,
            GammaM2 => self.gamma_m2 = value,
            GammaM => {
                self.gamma_m1 = value;
                self.gamma_m2 = value;
            }
            Kappa => self.kappa = value,
            Drive => self.drive = value,
            EtaD => self.eta_d = value,
            OmegaD => self.omega_d = value,
            Nbar => self.nbar = value,
            G1 => {
                c.g1_1 = value;
                c.g1_2 = value;
            }
            G1_1 => c.g1_1 = value,
            G1_2 => c.g1_2 = value,
            G2 => {
                c.g2_1 = value;
                c.g2_2 = value;
            }
            G2_1 => c.g2_1 = value,
            G2_2 => c.g2_2 = value,
            G3 => c.g3 = value,
        }
    }
}

/// Names accepted by `--set` overrides and sweep axes.
#[allow(non_camel_case_types)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ParamName {
    OmegaM1,
    OmegaM2,
    /// ω_m2 − ω_m1; setting it moves ω_m2.
    DeltaM,
    Detuning,
    GammaM1,
    GammaM2,
    /// Both damping rates at once.
    GammaM,
    Kappa,
    Drive,
    EtaD,
    OmegaD,
    Nbar,
    /// Both linear couplings at once.
    G1,
    G1_1,
    G1_2,
    /// Both quadratic couplings at once.
    G2,
    G2_1,
    G2_2,
    G3,
}

impl ParamName {
    pub const ALL: [ParamName; 19] = [
        ParamName::OmegaM1,
        ParamName::OmegaM2,
        ParamName::DeltaM,
        ParamName::Detuning,
        ParamName::GammaM1,
        ParamName::GammaM2,
        ParamName::GammaM,
        ParamName::Kappa,
        ParamName::Drive,
        ParamName::EtaD,
        ParamName::OmegaD,
        ParamName::Nbar,
        ParamName::G1,
        ParamName::G1_1,
        ParamName::G1_2,
        ParamName::G2,
        ParamName::G2_1,
        ParamName::G2_2,
        ParamName::G3,
    ];

    pub fn as_str(&self) -> &'static str {
        use ParamName::*;
        match self {
            OmegaM1 => "omega_m1",
            OmegaM2 => "omega_m2",
            DeltaM => "delta_m",
            Detuning => "detuning",
            GammaM1 => "gamma_m1",
            GammaM2 => "gamma_m2",
            GammaM => "gamma_m",
            Kappa => "kappa",
            Drive => "drive",
            EtaD => "eta_d",
            OmegaD => "omega_d",
            Nbar => "nbar",
            G1 => "g1",
            G1_1 => "g1_1",
            G1_2 => "g1_2",
            G2 => "g2",
            G2_1 => "g2_1",
            G2_2 => "g2_2",
            G3 => "g3",
        }
    }
}

impl fmt::Display for ParamName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ParamName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ParamName::ALL
            .iter()
            .copied()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown parameter name `{s}`")))
    }
}

impl TryFrom<String> for ParamName {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ParamName> for String {
    fn from(p: ParamName) -> String {
        p.as_str().to_string()
    }
}
